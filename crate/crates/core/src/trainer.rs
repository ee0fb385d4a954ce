//! Patch-wise scene reconstruction.
//!
//! Fits a [`TriPlaneScene`] to a procedural reference scene by L2 loss on
//! rendered patches: each iteration draws patch parameters from the
//! annealed schedule, draws a camera pose uniformly on the sphere, renders
//! the reference and the prediction with identical rays, backpropagates
//! through compositing and decoding, and takes an Adam step. Held-out
//! full-image PSNR is logged periodically.
//!
//! The gradient path is exact reverse-mode: the compositing backward runs
//! over each pixel's recorded sample list with a running suffix color, so
//! no division by (1 - alpha) ever happens, and parameter gradients are
//! accumulated sequentially in pixel order, which keeps training results
//! independent of the worker count used for the forward passes.

use crate::geometry::{patch_rays, CameraPose, PatchSpec, Ray};
use crate::image::{mse, Image};
use crate::renderer::{
    composite, in_cube, march_ray, pixel_rng, render_image, render_patch, samples_at_depths,
    BackgroundMode, RadianceField, RenderConfig, VolumeSample,
};
use crate::sampler::{sample_patch_spec, ScheduleConfig};
use crate::triplane::{
    decode_backward, DecodeScratch, FieldGrad, FieldSample, SceneShape, TriPlaneScene,
};
use crate::{invalid, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::io::Write;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.002, beta1: 0.0, beta2: 0.99, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(invalid("adam eps must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates, flat over the full parameter vector
/// in [`TriPlaneScene::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self { m: vec![0.0; param_count], v: vec![0.0; param_count], step: 0 }
    }
}

fn adam_update(
    cfg: &AdamConfig,
    c1: f64,
    c2: f64,
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// One bias-corrected Adam step over a flat parameter slice.
pub fn adam_step(cfg: &AdamConfig, params: &mut [f64], grads: &[f64], state: &mut AdamState) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.step as i32);
    adam_update(cfg, c1, c2, params, grads, &mut state.m, &mut state.v);
}

/// Adam step over every scene tensor against a same-shaped gradient buffer.
pub fn adam_step_scene(
    cfg: &AdamConfig,
    scene: &mut TriPlaneScene,
    grads: &TriPlaneScene,
    state: &mut AdamState,
) {
    state.step += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.step as i32);
    let mut off = 0;
    for (p, g) in scene.tensors_mut().into_iter().zip(grads.tensors()) {
        let len = p.len();
        adam_update(
            cfg,
            c1,
            c2,
            p,
            g,
            &mut state.m[off..off + len],
            &mut state.v[off..off + len],
        );
        off += len;
    }
    debug_assert_eq!(off, state.m.len());
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSetup {
    pub radius: f64,
    pub fov: f64,
}

impl Default for CameraSetup {
    fn default() -> Self {
        Self { radius: 3.5, fov: FRAC_PI_4 }
    }
}

impl CameraSetup {
    pub fn validate(&self) -> Result<()> {
        CameraPose::new(0.0, FRAC_PI_2, self.radius, self.fov).map(|_| ())
    }
}

/// Uniform pose on the camera sphere: yaw uniform over [-pi, pi), pitch
/// from the uniform-area colatitude acos(1 - 2u). Two draws, yaw first.
pub fn sample_pose<R: Rng + ?Sized>(setup: &CameraSetup, rng: &mut R) -> CameraPose {
    let yaw = rng.random::<f64>() * TAU - PI;
    let pitch = (1.0 - 2.0 * rng.random::<f64>()).acos();
    CameraPose::new(yaw, pitch, setup.radius, setup.fov)
        .expect("uniform sphere draws satisfy the pose contract")
}

/// The held-out evaluation cameras: eight equatorial poses uniform in yaw.
/// Fixed, so every eval sees the same views.
pub fn held_out_poses(setup: &CameraSetup) -> Vec<CameraPose> {
    (0..8)
        .map(|k| {
            CameraPose::new(TAU * k as f64 / 8.0, FRAC_PI_2, setup.radius, setup.fov)
                .expect("eval poses satisfy the pose contract")
        })
        .collect()
}

/// Seed for evaluation renders, distinct from anything the training loop
/// draws so eval images are comparable across runs and schedules.
pub const EVAL_SEED: u64 = 0x5EED_0E0A;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRegion {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub color: [f64; 3],
}

/// Analytic reference scenes rendered by the same volumetric pipeline the
/// prediction uses, so fitting error measures the representation and the
/// schedule rather than a resampling mismatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundTruthScene {
    /// Solid ball at the origin. Color shades each channel by the
    /// corresponding coordinate, 0.5 + 0.5 x_k / radius, so orientation is
    /// visible; density is constant inside and zero outside.
    Sphere { radius: f64, density: f64 },
    /// Axis-aligned colored boxes sharing one density; the first box
    /// containing a point wins.
    Boxes { density: f64, boxes: Vec<BoxRegion> },
}

impl Default for GroundTruthScene {
    fn default() -> Self {
        GroundTruthScene::Sphere { radius: 0.5, density: 40.0 }
    }
}

impl GroundTruthScene {
    pub fn validate(&self) -> Result<()> {
        match self {
            GroundTruthScene::Sphere { radius, density } => {
                if !(*radius > 0.0 && *radius <= 1.0) {
                    return Err(invalid(format!("sphere radius {radius} outside (0, 1]")));
                }
                if !(*density >= 0.0 && density.is_finite()) {
                    return Err(invalid("sphere density must be finite and non-negative"));
                }
            }
            GroundTruthScene::Boxes { density, boxes } => {
                if !(*density >= 0.0 && density.is_finite()) {
                    return Err(invalid("box density must be finite and non-negative"));
                }
                if boxes.is_empty() {
                    return Err(invalid("boxes scene needs at least one box"));
                }
                for b in boxes {
                    for k in 0..3 {
                        if !(b.min[k] < b.max[k]) {
                            return Err(invalid("box min must be strictly below max"));
                        }
                        if !(0.0..=1.0).contains(&b.color[k]) {
                            return Err(invalid("box colors must lie in [0, 1]"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl RadianceField for GroundTruthScene {
    type Scratch = ();

    fn scratch(&self) {}

    fn sample_field(&self, x: [f64; 3], _scratch: &mut ()) -> FieldSample {
        match self {
            GroundTruthScene::Sphere { radius, density } => {
                let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
                if r2 <= radius * radius {
                    let color =
                        std::array::from_fn(|k| (0.5 + 0.5 * x[k] / radius).clamp(0.0, 1.0));
                    FieldSample { color, density: *density }
                } else {
                    FieldSample { color: [0.0; 3], density: 0.0 }
                }
            }
            GroundTruthScene::Boxes { density, boxes } => {
                for b in boxes {
                    if (0..3).all(|k| x[k] >= b.min[k] && x[k] <= b.max[k]) {
                        return FieldSample { color: b.color, density: *density };
                    }
                }
                FieldSample { color: [0.0; 3], density: 0.0 }
            }
        }
    }
}

fn default_train_render() -> RenderConfig {
    RenderConfig {
        n_coarse: 32,
        n_fine: 32,
        stratified_jitter: true,
        background: BackgroundMode::White,
        n_background: 16,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Total optimization iterations; the schedule's own horizon
    /// (`schedule.total_iters`) is the annealing length and is usually
    /// shorter.
    pub iters: u64,
    /// Independent patch draws averaged into each step's loss.
    pub batch_patches: usize,
    /// Patch scale schedule; also the owner of patch_res and full_res.
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    pub eval_every: u64,
    pub scene: SceneShape,
    /// Render settings for training patches; eval reuses them with jitter
    /// switched off.
    pub render: RenderConfig,
    pub camera: CameraSetup,
    /// Stop after the first eval at or above this PSNR.
    pub stop_at_psnr: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 5000,
            batch_patches: 2,
            schedule: ScheduleConfig::beta(2500, 16, 64),
            adam: AdamConfig::default(),
            seed: 1,
            eval_every: 250,
            scene: SceneShape::default(),
            render: default_train_render(),
            camera: CameraSetup::default(),
            stop_at_psnr: None,
        }
    }
}

impl TrainConfig {
    pub fn patch_res(&self) -> usize {
        self.schedule.patch_res
    }

    pub fn full_res(&self) -> usize {
        self.schedule.full_res
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(invalid("iters must be at least 1"));
        }
        if self.batch_patches == 0 {
            return Err(invalid("batch_patches must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(invalid("eval_every must be at least 1"));
        }
        self.schedule.validate()?;
        self.adam.validate()?;
        self.scene.validate()?;
        self.render.validate()?;
        self.camera.validate()?;
        if self.render.background == BackgroundMode::Nerfpp {
            return Err(invalid(
                "training does not differentiate the nerfpp background; use white or black",
            ));
        }
        Ok(())
    }
}

/// Mean squared error over all pixels and channels, plus its gradient with
/// respect to the prediction, 2 (pred - target) / count.
pub fn patch_l2_loss(pred: &Image, target: &Image) -> Result<(f64, Image)> {
    if pred.width != target.width
        || pred.height != target.height
        || pred.channels != target.channels
    {
        return Err(invalid(format!(
            "patch shape mismatch: {}x{}x{} vs {}x{}x{}",
            pred.width, pred.height, pred.channels, target.width, target.height, target.channels
        )));
    }
    if pred.data.is_empty() {
        return Err(invalid("cannot take the loss of an empty patch"));
    }
    let count = pred.data.len() as f64;
    let mut grad = Image::new(pred.width, pred.height, pred.channels);
    let mut loss = 0.0;
    for (i, (p, t)) in pred.data.iter().zip(&target.data).enumerate() {
        let d = p - t;
        loss += d * d;
        grad.data[i] = 2.0 * d / count;
    }
    Ok((loss / count, grad))
}

fn flat_background(cfg: &RenderConfig) -> Result<[f64; 3]> {
    match cfg.background {
        BackgroundMode::White => Ok([1.0; 3]),
        BackgroundMode::Black => Ok([0.0; 3]),
        BackgroundMode::Nerfpp => Err(invalid(
            "gradient rendering supports only flat backgrounds (white or black)",
        )),
    }
}

/// Reverse-mode compositing for one pixel. Walking the samples back to
/// front with a running suffix color gives the derivative of the output
/// with respect to each sample's alpha without dividing by survival terms:
/// dC/dalpha_i = T_i (c_i - suffix after i). Samples outside the scene
/// cube are constants and are skipped.
fn backprop_pixel(
    scene: &TriPlaneScene,
    ray: &Ray,
    samples: &[VolumeSample],
    bg: [f64; 3],
    upstream: [f64; 3],
    grads: &mut TriPlaneScene,
    scratch: &mut DecodeScratch,
) {
    let n = samples.len();
    if n == 0 {
        return;
    }
    let mut alpha_delta = Vec::with_capacity(n);
    let mut trans = Vec::with_capacity(n);
    let mut t_cur = 1.0;
    for (i, s) in samples.iter().enumerate() {
        let next = if i + 1 < n { samples[i + 1].depth } else { ray.t_far };
        let delta = (next - s.depth).max(0.0);
        let a = 1.0 - (-s.density * delta).exp();
        alpha_delta.push((a, delta));
        trans.push(t_cur);
        t_cur *= 1.0 - a;
    }
    let mut suffix = bg;
    for i in (0..n).rev() {
        let s = &samples[i];
        let (a, delta) = alpha_delta[i];
        let t_i = trans[i];
        let w = t_i * a;
        let mut d_color = [0.0; 3];
        let mut d_alpha = 0.0;
        for c in 0..3 {
            d_color[c] = upstream[c] * w;
            d_alpha += upstream[c] * t_i * (s.color[c] - suffix[c]);
        }
        // d alpha / d sigma = delta e^{-sigma delta} = delta (1 - alpha)
        let d_density = d_alpha * delta * (1.0 - a);
        for c in 0..3 {
            suffix[c] = a * s.color[c] + (1.0 - a) * suffix[c];
        }
        if d_density == 0.0 && d_color == [0.0; 3] {
            continue;
        }
        let p = ray.at(s.depth);
        if !in_cube(p) {
            continue;
        }
        decode_backward(scene, p, &FieldGrad { d_color, d_density }, grads, scratch);
    }
}

fn image_from_colors(colors: &[[f64; 3]], r: usize) -> Image {
    let mut img = Image::new(r, r, 3);
    for j in 0..r {
        for i in 0..r {
            img.set_pixel(i, j, &colors[j * r + i]);
        }
    }
    img
}

/// Render a patch, compare it to `target`, and accumulate the loss gradient
/// for every scene parameter into `grads`. Forward marching fans out across
/// workers; the backward pass walks pixels in order on one thread, so the
/// accumulated gradient is a fixed-order reduction regardless of worker
/// count. Returns the patch loss.
pub fn render_patch_grad(
    scene: &TriPlaneScene,
    pose: &CameraPose,
    spec: &PatchSpec,
    cfg: &RenderConfig,
    target: &Image,
    seed: u64,
    grads: &mut TriPlaneScene,
) -> Result<f64> {
    let bg = flat_background(cfg)?;
    let rays = patch_rays(pose, spec);
    let tapes: Vec<([f64; 3], Vec<VolumeSample>)> = (0..rays.len())
        .into_par_iter()
        .map_init(
            || scene.scratch(),
            |sc, k| {
                let mut rng = pixel_rng(seed, k as u64);
                let samples = march_ray(scene, &rays[k], cfg, &mut rng, sc);
                let color = composite(&samples, rays[k].t_far, bg).color;
                (color, samples)
            },
        )
        .collect();
    let colors: Vec<[f64; 3]> = tapes.iter().map(|t| t.0).collect();
    let pred = image_from_colors(&colors, spec.patch_res);
    let (loss, lgrad) = patch_l2_loss(&pred, target)?;
    let mut scratch = DecodeScratch::new(scene.shape());
    for (k, (_, samples)) in tapes.iter().enumerate() {
        let g = lgrad.pixel(k % spec.patch_res, k / spec.patch_res);
        backprop_pixel(
            scene,
            &rays[k],
            samples,
            bg,
            [g[0], g[1], g[2]],
            grads,
            &mut scratch,
        );
    }
    Ok(loss)
}

/// The merged sample depths each pixel of this render would use; for
/// pinning the sampling pattern while parameters are perturbed.
pub fn freeze_patch_depths(
    scene: &TriPlaneScene,
    pose: &CameraPose,
    spec: &PatchSpec,
    cfg: &RenderConfig,
    seed: u64,
) -> Vec<Vec<f64>> {
    let rays = patch_rays(pose, spec);
    let mut scratch = scene.scratch();
    rays.iter()
        .enumerate()
        .map(|(k, ray)| {
            let mut rng = pixel_rng(seed, k as u64);
            march_ray(scene, ray, cfg, &mut rng, &mut scratch)
                .iter()
                .map(|s| s.depth)
                .collect()
        })
        .collect()
}

fn forward_at_depths(
    scene: &TriPlaneScene,
    rays: &[Ray],
    depths: &[Vec<f64>],
    bg: [f64; 3],
    r: usize,
) -> (Image, Vec<Vec<VolumeSample>>) {
    let mut scratch = scene.scratch();
    let mut colors = Vec::with_capacity(rays.len());
    let mut tapes = Vec::with_capacity(rays.len());
    for (ray, d) in rays.iter().zip(depths) {
        let samples = samples_at_depths(scene, ray, d, &mut scratch);
        colors.push(composite(&samples, ray.t_far, bg).color);
        tapes.push(samples);
    }
    (image_from_colors(&colors, r), tapes)
}

/// Patch loss with the per-pixel sample depths held fixed; only the field
/// values move with the parameters. Uses `cfg` for the background alone.
pub fn patch_loss_at_depths(
    scene: &TriPlaneScene,
    pose: &CameraPose,
    spec: &PatchSpec,
    cfg: &RenderConfig,
    depths: &[Vec<f64>],
    target: &Image,
) -> Result<f64> {
    let bg = flat_background(cfg)?;
    let rays = patch_rays(pose, spec);
    if rays.len() != depths.len() {
        return Err(invalid("one depth list per pixel required"));
    }
    let (pred, _) = forward_at_depths(scene, &rays, depths, bg, spec.patch_res);
    Ok(patch_l2_loss(&pred, target)?.0)
}

/// Analytic gradient companion of [`patch_loss_at_depths`].
pub fn render_patch_grad_at(
    scene: &TriPlaneScene,
    pose: &CameraPose,
    spec: &PatchSpec,
    cfg: &RenderConfig,
    depths: &[Vec<f64>],
    target: &Image,
    grads: &mut TriPlaneScene,
) -> Result<f64> {
    let bg = flat_background(cfg)?;
    let rays = patch_rays(pose, spec);
    if rays.len() != depths.len() {
        return Err(invalid("one depth list per pixel required"));
    }
    let (pred, tapes) = forward_at_depths(scene, &rays, depths, bg, spec.patch_res);
    let (loss, lgrad) = patch_l2_loss(&pred, target)?;
    let mut scratch = DecodeScratch::new(scene.shape());
    for (k, samples) in tapes.iter().enumerate() {
        let g = lgrad.pixel(k % spec.patch_res, k / spec.patch_res);
        backprop_pixel(
            scene,
            &rays[k],
            samples,
            bg,
            [g[0], g[1], g[2]],
            grads,
            &mut scratch,
        );
    }
    Ok(loss)
}

/// Pooled held-out PSNR: predictions and references rendered identically,
/// squared error pooled over every pose before the log.
pub fn eval_psnr(
    scene: &TriPlaneScene,
    gt: &GroundTruthScene,
    poses: &[CameraPose],
    res: usize,
    cfg: &RenderConfig,
) -> f64 {
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    for pose in poses {
        let pred = render_image(scene, pose, res, cfg, None, EVAL_SEED);
        let target = render_image(gt, pose, res, cfg, None, EVAL_SEED);
        let m = mse(&pred, &target).expect("eval renders share a shape");
        sq_sum += m * pred.data.len() as f64;
        count += pred.data.len();
    }
    let pooled = sq_sum / count as f64;
    if pooled == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * pooled.log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iter: u64,
    pub psnr_db: f64,
    /// Mean training loss since the previous eval.
    pub loss: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<EvalRow>,
}

impl TrainReport {
    pub fn final_psnr(&self) -> Option<f64> {
        self.rows.last().map(|r| r.psnr_db)
    }

    /// First eval iteration at or above the threshold.
    pub fn first_iter_reaching(&self, psnr_db: f64) -> Option<u64> {
        self.rows.iter().find(|r| r.psnr_db >= psnr_db).map(|r| r.iter)
    }

    /// Equality of everything except wall-clock times, which legitimately
    /// differ between otherwise identical runs.
    pub fn deterministic_eq(&self, other: &TrainReport) -> bool {
        self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|(a, b)| {
                    a.iter == b.iter
                        && a.psnr_db.to_bits() == b.psnr_db.to_bits()
                        && a.loss.to_bits() == b.loss.to_bits()
                })
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "iter,psnr_db,loss,wall_secs")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.iter, r.psnr_db, r.loss, r.wall_secs)?;
        }
        Ok(())
    }
}

/// Fit a fresh scene to the reference. Per iteration: draw
/// `batch_patches` (patch, pose) pairs, render reference and prediction
/// with identical rays, average the patch losses, take one Adam step.
/// Evaluates held-out PSNR every `eval_every` iterations and at the end,
/// and stops early once `stop_at_psnr` is reached. A non-finite loss
/// aborts with the failing iteration.
pub fn train(cfg: &TrainConfig, gt: &GroundTruthScene) -> Result<(TriPlaneScene, TrainReport)> {
    cfg.validate()?;
    gt.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scene = TriPlaneScene::init(cfg.scene, &mut master);
    let mut grads = scene.zeros_like();
    let mut state = AdamState::new(scene.param_count());
    let eval_cfg = RenderConfig { stratified_jitter: false, ..cfg.render };
    let held_out = held_out_poses(&cfg.camera);
    let start = Instant::now();
    let mut report = TrainReport::default();
    let mut loss_sum = 0.0;
    let mut loss_count = 0u32;
    for t in 0..cfg.iters {
        grads.fill(0.0);
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_patches {
            let drawn = sample_patch_spec(&cfg.schedule, t, &mut master);
            let pose = sample_pose(&cfg.camera, &mut master);
            let patch_seed = master.random::<u64>();
            let target = render_patch(gt, &pose, &drawn.spec, &cfg.render, None, patch_seed);
            batch_loss += render_patch_grad(
                &scene,
                &pose,
                &drawn.spec,
                &cfg.render,
                &target,
                patch_seed,
                &mut grads,
            )?;
        }
        let loss = batch_loss / cfg.batch_patches as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { iter: t, loss });
        }
        if cfg.batch_patches > 1 {
            let inv = 1.0 / cfg.batch_patches as f64;
            for tensor in grads.tensors_mut() {
                for g in tensor {
                    *g *= inv;
                }
            }
        }
        adam_step_scene(&cfg.adam, &mut scene, &grads, &mut state);
        loss_sum += loss;
        loss_count += 1;
        if (t + 1) % cfg.eval_every == 0 || t + 1 == cfg.iters {
            let psnr = eval_psnr(&scene, gt, &held_out, cfg.full_res(), &eval_cfg);
            report.rows.push(EvalRow {
                iter: t + 1,
                psnr_db: psnr,
                loss: loss_sum / loss_count as f64,
                wall_secs: start.elapsed().as_secs_f64(),
            });
            loss_sum = 0.0;
            loss_count = 0;
            if cfg.stop_at_psnr.is_some_and(|target| psnr >= target) {
                break;
            }
        }
    }
    Ok((scene, report))
}
