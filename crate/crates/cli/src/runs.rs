//! Config loading, worker-pool setup, command execution, manifests.

use crate::configs::*;
use crate::{Command, ConfigArg};
use epigraf_core::geometry::CameraPose;
use epigraf_core::modulation::{
    conv_output_modulated, conv_weight_modulated, dump_modulation_profile, hyper_forward,
    ConvLayerSpec, FeatureMap, ModulationNet,
};
use epigraf_core::renderer::{background_field_for_seed, render_image, BackgroundMode};
use epigraf_core::sampler::{sample_scale, scale_pdf};
use epigraf_core::trainer::train;
use epigraf_core::triplane::{read_checkpoint, write_checkpoint, write_density_grid};
use num_traits::Float;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::f64::consts::TAU;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

pub enum Failure {
    Config(String),
    Runtime(String),
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

fn runtime_err(msg: impl Into<String>) -> Failure {
    Failure::Runtime(msg.into())
}

/// Library errors about bad values are configuration problems; everything
/// else (io, non-finite training loss, corrupt files) is a runtime failure.
fn lift(err: epigraf_core::Error) -> Failure {
    match err {
        epigraf_core::Error::InvalidInput(m) => Failure::Config(m),
        other => Failure::Runtime(other.to_string()),
    }
}

pub fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Fit(arg) => run_fit(load(&arg)?),
        Command::Render(arg) => run_render(load(&arg)?),
        Command::ExportDensity(arg) => run_export_density(load(&arg)?),
        Command::SampleScales(arg) => run_sample_scales(load(&arg)?),
        Command::Schedule(arg) => run_schedule(load(&arg)?),
        Command::ModulationDemo(arg) => run_modulation_demo(load(&arg)?),
    }
}

/// A parsed config document plus its raw bytes (hashed into the manifest).
struct Loaded<T> {
    cfg: T,
    raw: String,
}

fn load<T: DeserializeOwned>(arg: &ConfigArg) -> Result<Loaded<T>, Failure> {
    let raw = fs::read_to_string(&arg.config)
        .map_err(|e| config_err(format!("cannot read {}: {e}", arg.config.display())))?;
    let cfg = serde_json::from_str(&raw).map_err(|e| {
        config_err(format!(
            "{}: line {}, column {}: {e}",
            arg.config.display(),
            e.line(),
            e.column()
        ))
    })?;
    Ok(Loaded { cfg, raw })
}

/// Resolve the worker count: EPIGRAF_THREADS wins over the config's
/// `workers`, and zero or absence means hardware parallelism.
fn init_workers(config_workers: Option<usize>) -> Result<(), Failure> {
    let n = match std::env::var("EPIGRAF_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .map_err(|_| config_err(format!("EPIGRAF_THREADS must be an unsigned integer, got {v:?}")))?,
        Err(_) => config_workers.unwrap_or(0),
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| runtime_err(format!("worker pool: {e}")))?;
    }
    Ok(())
}

fn require_f64(p: Precision, command: &str) -> Result<(), Failure> {
    if p == Precision::F32 {
        return Err(config_err(format!(
            "{command} computes in f64 only; precision \"f32\" applies to modulation-demo"
        )));
    }
    Ok(())
}

fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| runtime_err(format!("cannot create {}: {e}", dir.display())))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<fs::File>, Failure> {
    let path = dir.join(name);
    let file = fs::File::create(&path)
        .map_err(|e| runtime_err(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn io_fail(e: impl std::fmt::Display) -> Failure {
    runtime_err(format!("write failed: {e}"))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    seed: u64,
    outputs: Vec<String>,
}

fn write_manifest(
    dir: &Path,
    command: &str,
    raw_config: &str,
    seed: u64,
    outputs: Vec<String>,
) -> Result<(), Failure> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: Sha256::digest(raw_config.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect(),
        seed,
        outputs,
    };
    let mut w = create(dir, "manifest.json")?;
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    writeln!(w, "{body}").map_err(io_fail)
}

fn run_fit(loaded: Loaded<FitConfig>) -> Result<(), Failure> {
    let FitConfig { seed, output_dir, precision, workers, train: mut tcfg, ground_truth } =
        loaded.cfg;
    require_f64(precision, "fit")?;
    init_workers(workers)?;
    tcfg.seed = seed;
    tcfg.validate().map_err(lift)?;
    ground_truth.validate().map_err(lift)?;
    prepare_dir(&output_dir)?;
    let (scene, report) = train(&tcfg, &ground_truth).map_err(lift)?;
    let mut ckpt = create(&output_dir, "scene.epgc")?;
    write_checkpoint(&scene, &mut ckpt).map_err(lift)?;
    ckpt.flush().map_err(io_fail)?;
    // wall times vary run to run, so the CSV artifact carries only the
    // reproducible columns; timing goes to stdout
    let mut csv = create(&output_dir, "report.csv")?;
    writeln!(csv, "iter,psnr_db,loss").map_err(io_fail)?;
    for row in &report.rows {
        writeln!(csv, "{},{},{}", row.iter, row.psnr_db, row.loss).map_err(io_fail)?;
    }
    csv.flush().map_err(io_fail)?;
    if let (Some(psnr), Some(last)) = (report.final_psnr(), report.rows.last()) {
        println!(
            "fit: {} iters, final held-out PSNR {:.2} dB, {:.1} s",
            last.iter, psnr, last.wall_secs
        );
    }
    write_manifest(
        &output_dir,
        "fit",
        &loaded.raw,
        seed,
        vec!["scene.epgc".into(), "report.csv".into()],
    )
}

fn run_render(loaded: Loaded<RenderRunConfig>) -> Result<(), Failure> {
    let cfg = loaded.cfg;
    require_f64(cfg.precision, "render")?;
    init_workers(cfg.workers)?;
    if cfg.frames == 0 {
        return Err(config_err("frames must be at least 1"));
    }
    if cfg.resolution == 0 {
        return Err(config_err("resolution must be at least 1"));
    }
    cfg.render.validate().map_err(lift)?;
    // probe one pose up front so bad camera numbers fail as config errors
    CameraPose::new(0.0, cfg.pitch, cfg.camera.radius, cfg.camera.fov).map_err(lift)?;
    let mut file = fs::File::open(&cfg.checkpoint)
        .map_err(|e| runtime_err(format!("cannot open {}: {e}", cfg.checkpoint.display())))?;
    let scene = read_checkpoint(&mut file).map_err(|e| runtime_err(e.to_string()))?;
    prepare_dir(&cfg.output_dir)?;
    let background = (cfg.render.background == BackgroundMode::Nerfpp)
        .then(|| background_field_for_seed(cfg.seed));
    let mut outputs = Vec::with_capacity(cfg.frames);
    for k in 0..cfg.frames {
        let yaw = TAU * k as f64 / cfg.frames as f64;
        let pose = CameraPose::new(yaw, cfg.pitch, cfg.camera.radius, cfg.camera.fov)
            .map_err(lift)?;
        let img = render_image(
            &scene,
            &pose,
            cfg.resolution,
            &cfg.render,
            background.as_ref(),
            cfg.seed,
        );
        let name = format!("frame_{k:03}.ppm");
        let mut w = create(&cfg.output_dir, &name)?;
        img.write_ppm(&mut w).map_err(lift)?;
        w.flush().map_err(io_fail)?;
        outputs.push(name);
    }
    println!("render: {} frames at {}x{}", cfg.frames, cfg.resolution, cfg.resolution);
    write_manifest(&cfg.output_dir, "render", &loaded.raw, cfg.seed, outputs)
}

fn run_export_density(loaded: Loaded<ExportDensityConfig>) -> Result<(), Failure> {
    let cfg = loaded.cfg;
    require_f64(cfg.precision, "export-density")?;
    init_workers(cfg.workers)?;
    if cfg.resolution == 0 {
        return Err(config_err("resolution must be at least 1"));
    }
    let mut file = fs::File::open(&cfg.checkpoint)
        .map_err(|e| runtime_err(format!("cannot open {}: {e}", cfg.checkpoint.display())))?;
    let scene = read_checkpoint(&mut file).map_err(|e| runtime_err(e.to_string()))?;
    prepare_dir(&cfg.output_dir)?;
    let mut w = create(&cfg.output_dir, "density.epgf")?;
    write_density_grid(&scene, cfg.resolution, &mut w).map_err(lift)?;
    w.flush().map_err(io_fail)?;
    println!("export-density: {}^3 grid", cfg.resolution);
    write_manifest(
        &cfg.output_dir,
        "export-density",
        &loaded.raw,
        cfg.seed,
        vec!["density.epgf".into()],
    )
}

fn run_sample_scales(loaded: Loaded<SampleScalesConfig>) -> Result<(), Failure> {
    let cfg = loaded.cfg;
    require_f64(cfg.precision, "sample-scales")?;
    init_workers(cfg.workers)?;
    cfg.schedule.validate().map_err(lift)?;
    if cfg.draws == 0 {
        return Err(config_err("draws must be at least 1"));
    }
    prepare_dir(&cfg.output_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = create(&cfg.output_dir, "scales.csv")?;
    writeln!(w, "t,s").map_err(io_fail)?;
    let mut sum = 0.0;
    for k in 0..cfg.draws {
        let t = if cfg.draws == 1 {
            0
        } else {
            (k as u64 * cfg.schedule.total_iters) / (cfg.draws as u64 - 1)
        };
        let s = sample_scale(&cfg.schedule, t, &mut rng);
        sum += s;
        writeln!(w, "{t},{s}").map_err(io_fail)?;
    }
    w.flush().map_err(io_fail)?;
    println!("sample-scales: {} draws, mean {:.4}", cfg.draws, sum / cfg.draws as f64);
    write_manifest(
        &cfg.output_dir,
        "sample-scales",
        &loaded.raw,
        cfg.seed,
        vec!["scales.csv".into()],
    )
}

fn run_schedule(loaded: Loaded<ScheduleCurvesConfig>) -> Result<(), Failure> {
    let cfg = loaded.cfg;
    require_f64(cfg.precision, "schedule")?;
    init_workers(cfg.workers)?;
    cfg.uniform.validate().map_err(lift)?;
    cfg.beta.validate().map_err(lift)?;
    if cfg.points == 0 {
        return Err(config_err("points must be at least 1"));
    }
    prepare_dir(&cfg.output_dir)?;
    let lo = cfg.uniform.min_scale().min(cfg.beta.min_scale());
    let mut w = create(&cfg.output_dir, "schedule.csv")?;
    writeln!(w, "s,pdf_uniform,pdf_beta").map_err(io_fail)?;
    for i in 0..cfg.points {
        // midpoint grid keeps clear of the possibly singular s = 1 edge
        let s = lo + (i as f64 + 0.5) * (1.0 - lo) / cfg.points as f64;
        let pu = scale_pdf(&cfg.uniform, cfg.at_iter, s);
        let pb = scale_pdf(&cfg.beta, cfg.at_iter, s);
        writeln!(w, "{s},{pu},{pb}").map_err(io_fail)?;
    }
    w.flush().map_err(io_fail)?;
    println!("schedule: {} grid points at iteration {}", cfg.points, cfg.at_iter);
    write_manifest(
        &cfg.output_dir,
        "schedule",
        &loaded.raw,
        cfg.seed,
        vec!["schedule.csv".into()],
    )
}

/// Max absolute disagreement between the two modulation strategies over a
/// sweep of layer shapes, in the requested precision.
fn modulation_sweep<T: Float>(rng: &mut ChaCha8Rng, gain_sets: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for &c_in in &[1usize, 3, 16] {
        for (set, &c_out) in [1usize, 3, 16].iter().enumerate() {
            for &k in &[1usize, 3] {
                for &stride in &[1usize, 2] {
                    let he = Normal::new(0.0, (2.0 / (c_in * k * k) as f64).sqrt()).unwrap();
                    let kernel: Vec<T> = (0..c_out * c_in * k * k)
                        .map(|_| T::from(he.sample(rng)).unwrap())
                        .collect();
                    let bias: Vec<T> = (0..c_out)
                        .map(|_| T::from(rng.random::<f64>() - 0.5).unwrap())
                        .collect();
                    let layer =
                        ConvLayerSpec::new(c_out, c_in, k, stride, k / 2, kernel, Some(bias))
                            .expect("sweep layer shape");
                    let mut x = FeatureMap::<T>::zeros(c_in, 14, 14);
                    for v in x.data.iter_mut() {
                        *v = T::from(rng.random::<f64>() * 2.0 - 1.0).unwrap();
                    }
                    let gains: Vec<T> = gain_sets[set]
                        .iter()
                        .map(|g| T::from(*g).unwrap())
                        .collect();
                    let a = conv_weight_modulated(&layer, &x, &gains).expect("sweep conv");
                    let b = conv_output_modulated(&layer, &x, &gains).expect("sweep conv");
                    for (va, vb) in a.data.iter().zip(&b.data) {
                        let d = (*va - *vb).abs().to_f64().unwrap();
                        worst = worst.max(d);
                    }
                }
            }
        }
    }
    worst
}

fn run_modulation_demo(loaded: Loaded<ModulationDemoConfig>) -> Result<(), Failure> {
    let cfg = loaded.cfg;
    // the sweep always measures both float widths, so the envelope's
    // precision field carries no choice here
    let _ = cfg.precision;
    init_workers(cfg.workers)?;
    if cfg.freqs == 0 || cfg.latent_dim == 0 {
        return Err(config_err("freqs and latent_dim must be at least 1"));
    }
    if cfg.layer_channels.is_empty() {
        return Err(config_err("layer_channels must name at least one layer"));
    }
    if !(cfg.min_scale > 0.0 && cfg.min_scale <= 1.0) || cfg.scale_count == 0 {
        return Err(config_err("need 0 < min_scale <= 1 and scale_count >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sweep_net = ModulationNet::init(cfg.freqs, cfg.latent_dim, &[1, 3, 16], &mut rng)
        .map_err(lift)?;
    let gain_sets = hyper_forward(&sweep_net, 0.5, 0.25, 0.25);
    let mut rng64 = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut rng32 = rng64.clone();
    let worst64 = modulation_sweep::<f64>(&mut rng64, &gain_sets);
    let worst32 = modulation_sweep::<f32>(&mut rng32, &gain_sets);
    println!("modulation-demo: max |delta| f64 {worst64:.3e}, f32 {worst32:.3e}");

    prepare_dir(&cfg.output_dir)?;
    let profile_net =
        ModulationNet::init(cfg.freqs, cfg.latent_dim, &cfg.layer_channels, &mut rng)
            .map_err(lift)?;
    let scales: Vec<f64> = (0..cfg.scale_count)
        .map(|i| {
            if cfg.scale_count == 1 {
                cfg.min_scale
            } else {
                cfg.min_scale
                    + (1.0 - cfg.min_scale) * i as f64 / (cfg.scale_count as f64 - 1.0)
            }
        })
        .collect();
    let layers: Vec<usize> = (0..cfg.layer_channels.len()).collect();
    let mut w = create(&cfg.output_dir, "modulation.csv")?;
    dump_modulation_profile(&profile_net, &scales, &layers, &mut w).map_err(lift)?;
    w.flush().map_err(io_fail)?;
    write_manifest(
        &cfg.output_dir,
        "modulation-demo",
        &loaded.raw,
        cfg.seed,
        vec!["modulation.csv".into()],
    )?;
    if worst64 >= 1e-12 || worst32 >= 1e-5 {
        return Err(runtime_err(format!(
            "modulation strategies disagree: f64 {worst64:.3e} (limit 1e-12), f32 {worst32:.3e} (limit 1e-5)"
        )));
    }
    Ok(())
}
