use epigraf_core::trainer::{train, GroundTruthScene, TrainConfig};
use std::time::Instant;

fn main() {
    let mut cfg = TrainConfig::default();
    let args: Vec<String> = std::env::args().collect();
    cfg.iters = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    cfg.eval_every = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);
    let gt = GroundTruthScene::default();
    let t0 = Instant::now();
    let (_, report) = train(&cfg, &gt).unwrap();
    let total = t0.elapsed().as_secs_f64();
    for r in &report.rows {
        println!(
            "iter {:5}  psnr {:7.3} dB  loss {:.6}  wall {:7.2}s",
            r.iter, r.psnr_db, r.loss, r.wall_secs
        );
    }
    println!("total {total:.2}s for {} iters", cfg.iters);
    let per_iter = total / cfg.iters as f64;
    println!("per-iter {:.1} ms -> 5000 iters ~ {:.1} min (plus evals)", per_iter * 1e3, per_iter * 5000.0 / 60.0);
}
