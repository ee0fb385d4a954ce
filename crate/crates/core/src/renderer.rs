//! Coarse-to-fine volumetric ray marching.
//!
//! Each ray gets a stratified coarse pass, an importance resample of the
//! coarse compositing weights, and one final composite over the merged,
//! sorted depths. Pixels are independent: every pixel draws from its own
//! counter-derived random substream, so a render is reproducible for a fixed
//! seed no matter how rays are scheduled across workers.
//!
//! Rendering is generic over [`RadianceField`] so the same machinery drives
//! learned scenes and the procedural references used as fitting targets.

use crate::geometry::{dot, patch_rays, CameraPose, PatchSpec, Ray};
use crate::image::Image;
use crate::triplane::{decode_with, sigmoid, softplus, DecodeScratch, FieldSample, TriPlaneScene};
use crate::{invalid, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Uniform mass added to every coarse weight before importance resampling,
/// so an all-zero weight vector degrades to uniform sampling instead of a
/// degenerate CDF.
pub const WEIGHT_FLOOR: f64 = 1e-5;

/// Something a ray can march through: color and density at a point.
pub trait RadianceField: Sync {
    /// Per-worker evaluation buffers; `()` if none are needed.
    type Scratch: Send;

    fn scratch(&self) -> Self::Scratch;

    fn sample_field(&self, x: [f64; 3], scratch: &mut Self::Scratch) -> FieldSample;
}

impl RadianceField for TriPlaneScene {
    type Scratch = DecodeScratch;

    fn scratch(&self) -> DecodeScratch {
        DecodeScratch::new(self.shape())
    }

    fn sample_field(&self, x: [f64; 3], scratch: &mut DecodeScratch) -> FieldSample {
        decode_with(self, x, scratch)
    }
}

/// Empty space; renders as pure background.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroField;

impl RadianceField for ZeroField {
    type Scratch = ();

    fn scratch(&self) {}

    fn sample_field(&self, _x: [f64; 3], _scratch: &mut ()) -> FieldSample {
        FieldSample { color: [0.0; 3], density: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundMode {
    White,
    Black,
    /// Learned-background compositing over an inverse-sphere field.
    Nerfpp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    /// Jitter depths uniformly within their stratification bins.
    pub stratified_jitter: bool,
    pub background: BackgroundMode,
    /// Ray steps through the background field when `background` is `nerfpp`.
    pub n_background: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            n_coarse: 48,
            n_fine: 48,
            stratified_jitter: false,
            background: BackgroundMode::White,
            n_background: 16,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_coarse == 0 {
            return Err(invalid("n_coarse must be at least 1"));
        }
        if self.background == BackgroundMode::Nerfpp && self.n_background == 0 {
            return Err(invalid("n_background must be at least 1 for the nerfpp background"));
        }
        Ok(())
    }
}

/// One field evaluation pinned to a depth along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeSample {
    pub depth: f64,
    pub color: [f64; 3],
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeOutput {
    pub color: [f64; 3],
    /// Per-sample contribution T_i * alpha_i, aligned with the input order.
    pub weights: Vec<f64>,
    /// Transmittance left over for the background.
    pub transmittance: f64,
}

/// One depth per equal bin of `[t_near, t_far]`: bin centers, or uniform
/// within each bin when `jitter` is set (one RNG draw per bin, in order).
pub fn stratify(ray: &Ray, n: usize, jitter: bool, rng: &mut impl Rng) -> Vec<f64> {
    debug_assert!(n >= 1);
    let step = (ray.t_far - ray.t_near) / n as f64;
    (0..n)
        .map(|i| {
            let off = if jitter { rng.random::<f64>() } else { 0.5 };
            ray.t_near + (i as f64 + off) * step
        })
        .collect()
}

/// Emission-absorption compositing over depth-sorted samples. The interval
/// of sample i runs to the next depth, and the last interval closes at
/// `t_far`, which makes the weights plus final transmittance an exact
/// partition of unity. Leftover transmittance is filled with `background`.
pub fn composite(samples: &[VolumeSample], t_far: f64, background: [f64; 3]) -> CompositeOutput {
    let mut weights = Vec::with_capacity(samples.len());
    let mut color = [0.0f64; 3];
    let mut trans = 1.0f64;
    for (i, s) in samples.iter().enumerate() {
        let next = if i + 1 < samples.len() { samples[i + 1].depth } else { t_far };
        debug_assert!(
            next >= s.depth,
            "composite needs depth-sorted samples: {} followed by {next} at {i}",
            s.depth
        );
        let delta = (next - s.depth).max(0.0);
        let survive = trans * (-s.density * delta).exp();
        let w = trans - survive;
        for k in 0..3 {
            color[k] += w * s.color[k];
        }
        weights.push(w);
        trans = survive;
    }
    for k in 0..3 {
        color[k] += trans * background[k];
    }
    CompositeOutput { color, weights, transmittance: trans }
}

/// Bin edges for the piecewise-constant weight PDF: midpoints between
/// consecutive coarse depths, with the outer edges extrapolated half a step.
/// For jitter-free coarse depths this reproduces the stratification bins.
fn weight_bin_edges(depths: &[f64]) -> Vec<f64> {
    let n = depths.len();
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(depths[0] - 0.5 * (depths[1] - depths[0]));
    for i in 1..n {
        edges.push(0.5 * (depths[i - 1] + depths[i]));
    }
    edges.push(depths[n - 1] + 0.5 * (depths[n - 1] - depths[n - 2]));
    edges
}

/// Inverse-transform draws from the floored weight histogram. Stratified in
/// mass space: draw j lands in mass stratum j, at its center unless `jitter`
/// is set. Output is sorted by construction. A single coarse depth has no
/// bin geometry, so every draw collapses onto it.
fn draw_fine(
    depths: &[f64],
    weights: &[f64],
    n_fine: usize,
    jitter: bool,
    rng: &mut impl Rng,
) -> Vec<f64> {
    assert_eq!(depths.len(), weights.len());
    if n_fine == 0 {
        return Vec::new();
    }
    if depths.len() == 1 {
        if jitter {
            for _ in 0..n_fine {
                rng.random::<f64>();
            }
        }
        return vec![depths[0]; n_fine];
    }
    let edges = weight_bin_edges(depths);
    let masses: Vec<f64> = weights.iter().map(|w| w + WEIGHT_FLOOR).collect();
    let total: f64 = masses.iter().sum();
    let mut out = Vec::with_capacity(n_fine);
    let mut bin = 0usize;
    let mut below = 0.0f64;
    for j in 0..n_fine {
        let off = if jitter { rng.random::<f64>() } else { 0.5 };
        let target = total * ((j as f64 + off) / n_fine as f64);
        while bin + 1 < masses.len() && below + masses[bin] < target {
            below += masses[bin];
            bin += 1;
        }
        let frac = ((target - below) / masses[bin]).clamp(0.0, 1.0);
        out.push(edges[bin] + frac * (edges[bin + 1] - edges[bin]));
    }
    out
}

fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Weighted refinement of a coarse depth set: `n_fine` inverse-transform
/// draws from the floored weight histogram, merged and sorted with the
/// coarse depths.
pub fn importance_resample(
    coarse_depths: &[f64],
    coarse_weights: &[f64],
    n_fine: usize,
    jitter: bool,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let fine = draw_fine(coarse_depths, coarse_weights, n_fine, jitter, rng);
    merge_sorted(coarse_depths, &fine)
}

pub(crate) fn in_cube(p: [f64; 3]) -> bool {
    p.iter().all(|v| v.abs() <= 1.0)
}

/// Field evaluations at the given depths. Points outside the scene cube are
/// kept as empty samples (zero density and color) without touching the
/// field, so the march interval can bracket the cube's bounding sphere.
pub(crate) fn samples_at_depths<F: RadianceField>(
    field: &F,
    ray: &Ray,
    depths: &[f64],
    scratch: &mut F::Scratch,
) -> Vec<VolumeSample> {
    depths
        .iter()
        .map(|&d| {
            let p = ray.at(d);
            if in_cube(p) {
                let s = field.sample_field(p, scratch);
                VolumeSample { depth: d, color: s.color, density: s.density }
            } else {
                VolumeSample { depth: d, color: [0.0; 3], density: 0.0 }
            }
        })
        .collect()
}

/// Both marching passes for one ray: stratified coarse samples, importance
/// draws from the coarse weights, and the merged evaluation list. Every
/// depth is evaluated exactly once.
pub(crate) fn march_ray<F: RadianceField>(
    field: &F,
    ray: &Ray,
    cfg: &RenderConfig,
    rng: &mut impl Rng,
    scratch: &mut F::Scratch,
) -> Vec<VolumeSample> {
    let coarse_depths = stratify(ray, cfg.n_coarse, cfg.stratified_jitter, rng);
    let coarse = samples_at_depths(field, ray, &coarse_depths, scratch);
    if cfg.n_fine == 0 {
        return coarse;
    }
    let weights = composite(&coarse, ray.t_far, [0.0; 3]).weights;
    // the histogram support extrapolates half a bin past the outermost
    // jittered coarse depths, so draws can spill out of the march interval;
    // pin them back without disturbing their order
    let mut fine_depths =
        draw_fine(&coarse_depths, &weights, cfg.n_fine, cfg.stratified_jitter, rng);
    for d in fine_depths.iter_mut() {
        *d = d.clamp(ray.t_near, ray.t_far);
    }
    let fine = samples_at_depths(field, ray, &fine_depths, scratch);
    let mut merged = Vec::with_capacity(coarse.len() + fine.len());
    let (mut i, mut j) = (0, 0);
    while i < coarse.len() && j < fine.len() {
        if coarse[i].depth <= fine[j].depth {
            merged.push(coarse[i]);
            i += 1;
        } else {
            merged.push(fine[j]);
            j += 1;
        }
    }
    merged.extend_from_slice(&coarse[i..]);
    merged.extend_from_slice(&fine[j..]);
    merged
}

/// The RNG for one pixel of one render: a fixed seed plus the pixel's index
/// as the stream id. Workers can split pixels any way they like and still
/// reproduce the same draws.
pub fn pixel_rng(seed: u64, pixel_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pixel_index);
    rng
}

/// Color of one ray under the full coarse/fine pipeline.
pub fn trace_ray<F: RadianceField>(
    field: &F,
    ray: &Ray,
    cfg: &RenderConfig,
    bg: Option<&BackgroundField>,
    rng: &mut impl Rng,
    scratch: &mut F::Scratch,
) -> [f64; 3] {
    let samples = march_ray(field, ray, cfg, rng, scratch);
    let bg_color = resolve_background(cfg, bg, ray);
    composite(&samples, ray.t_far, bg_color).color
}

fn resolve_background(cfg: &RenderConfig, bg: Option<&BackgroundField>, ray: &Ray) -> [f64; 3] {
    match cfg.background {
        BackgroundMode::White => [1.0; 3],
        BackgroundMode::Black => [0.0; 3],
        BackgroundMode::Nerfpp => {
            let field = bg.expect("background=nerfpp requires a BackgroundField");
            background_color(field, ray, cfg.n_background)
        }
    }
}

/// Render a batch of rays in parallel. Ray k uses pixel substream k, so the
/// result is independent of worker count and identical to a sequential run.
pub fn render_rays<F: RadianceField>(
    field: &F,
    rays: &[Ray],
    cfg: &RenderConfig,
    bg: Option<&BackgroundField>,
    seed: u64,
) -> Vec<[f64; 3]> {
    cfg.validate().expect("invalid render config");
    (0..rays.len())
        .into_par_iter()
        .map_init(
            || field.scratch(),
            |scratch, k| {
                let mut rng = pixel_rng(seed, k as u64);
                trace_ray(field, &rays[k], cfg, bg, &mut rng, scratch)
            },
        )
        .collect()
}

/// Render the r x r pixel grid of a patch.
pub fn render_patch<F: RadianceField>(
    field: &F,
    pose: &CameraPose,
    spec: &PatchSpec,
    cfg: &RenderConfig,
    bg: Option<&BackgroundField>,
    seed: u64,
) -> Image {
    let rays = patch_rays(pose, spec);
    let colors = render_rays(field, &rays, cfg, bg, seed);
    let r = spec.patch_res;
    let mut img = Image::new(r, r, 3);
    for j in 0..r {
        for i in 0..r {
            img.set_pixel(i, j, &colors[j * r + i]);
        }
    }
    img
}

/// Render a full square frame; identical to rendering the identity patch.
pub fn render_image<F: RadianceField>(
    field: &F,
    pose: &CameraPose,
    res: usize,
    cfg: &RenderConfig,
    bg: Option<&BackgroundField>,
    seed: u64,
) -> Image {
    render_patch(field, pose, &PatchSpec::full_frame(res), cfg, bg, seed)
}

/// Compact coordinates for a point outside the unit sphere: unit direction
/// plus inverse radius, so the whole unbounded exterior maps into a bounded
/// 4-vector with the far limit at inverse radius 0.
pub fn inverse_sphere_param(x: [f64; 3]) -> [f64; 4] {
    let r = dot(x, x).sqrt();
    assert!(r > 1.0, "inverse sphere parametrization needs |x| > 1, got {r}");
    [x[0] / r, x[1] / r, x[2] / r, 1.0 / r]
}

const BG_HIDDEN: usize = 32;

/// Background radiance as a function of the inverse-sphere 4-vector: two
/// blocks of two linear layers (width 32, leaky ReLU 0.2 between hidden
/// layers), with sigmoid color and softplus density heads on the last four
/// outputs. Used for rendering only; it is never trained here.
#[derive(Debug, Clone)]
pub struct BackgroundField {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
    w4: Vec<f64>,
    b4: Vec<f64>,
}

fn leaky_relu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        0.2 * x
    }
}

impl BackgroundField {
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut layer = |rows: usize, cols: usize| -> Vec<f64> {
            let dist = Normal::new(0.0, (2.0 / cols as f64).sqrt()).unwrap();
            (0..rows * cols).map(|_| dist.sample(rng)).collect()
        };
        Self {
            w1: layer(BG_HIDDEN, 4),
            b1: vec![0.0; BG_HIDDEN],
            w2: layer(BG_HIDDEN, BG_HIDDEN),
            b2: vec![0.0; BG_HIDDEN],
            w3: layer(BG_HIDDEN, BG_HIDDEN),
            b3: vec![0.0; BG_HIDDEN],
            w4: layer(4, BG_HIDDEN),
            b4: vec![0.0; 4],
        }
    }

    fn eval(&self, p: [f64; 4]) -> ([f64; 3], f64) {
        let mut h1 = [0.0f64; BG_HIDDEN];
        for r in 0..BG_HIDDEN {
            let row = &self.w1[r * 4..(r + 1) * 4];
            let z = self.b1[r] + row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + row[3] * p[3];
            h1[r] = leaky_relu(z);
        }
        let mut h2 = [0.0f64; BG_HIDDEN];
        for r in 0..BG_HIDDEN {
            let row = &self.w2[r * BG_HIDDEN..(r + 1) * BG_HIDDEN];
            let mut z = self.b2[r];
            for (w, h) in row.iter().zip(&h1) {
                z += w * h;
            }
            h2[r] = leaky_relu(z);
        }
        let mut h3 = [0.0f64; BG_HIDDEN];
        for r in 0..BG_HIDDEN {
            let row = &self.w3[r * BG_HIDDEN..(r + 1) * BG_HIDDEN];
            let mut z = self.b3[r];
            for (w, h) in row.iter().zip(&h2) {
                z += w * h;
            }
            h3[r] = leaky_relu(z);
        }
        let mut o = [0.0f64; 4];
        for r in 0..4 {
            let row = &self.w4[r * BG_HIDDEN..(r + 1) * BG_HIDDEN];
            let mut z = self.b4[r];
            for (w, h) in row.iter().zip(&h3) {
                z += w * h;
            }
            o[r] = z;
        }
        ([sigmoid(o[0]), sigmoid(o[1]), sigmoid(o[2])], softplus(o[3]))
    }
}

/// Stream id for the background field's parameter draws; far above any
/// pixel index so renders never collide with it.
const BACKGROUND_STREAM: u64 = u64::MAX;

/// The background field a given render seed implies. Deterministic, so
/// callers holding only the seed can reproduce a nerfpp render exactly.
pub fn background_field_for_seed(seed: u64) -> BackgroundField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(BACKGROUND_STREAM);
    BackgroundField::init(&mut rng)
}

const BACKGROUND_FAR_DELTA: f64 = 1e10;

/// March the background field along the part of the ray outside the unit
/// sphere. Sample midpoints are uniform in inverse radius over (0, 1),
/// walked far-to-near in inverse radius so depths increase; interval
/// lengths come from the inverse-radius cell edges mapped to ray depths,
/// with the outermost interval capped at a huge constant so the far shell
/// is effectively opaque. Composites over black and is deterministic.
pub fn background_color(field: &BackgroundField, ray: &Ray, n: usize) -> [f64; 3] {
    assert!(n >= 1, "background march needs at least one sample");
    let od = dot(ray.origin, ray.dir);
    // squared distance from the origin to the ray line
    let b2 = (dot(ray.origin, ray.origin) - od * od).max(0.0);
    let depth_at = |inv_r: f64| -> f64 {
        let r = 1.0 / inv_r;
        -od + (r * r - b2).max(0.0).sqrt()
    };
    let mut color = [0.0f64; 3];
    let mut trans = 1.0f64;
    for k in 0..n {
        // cell j of inverse radius, traversed outward (descending inv_r)
        let j = n - 1 - k;
        let mid = (j as f64 + 0.5) / n as f64;
        let t = depth_at(mid);
        let (c, sigma) = field.eval(inverse_sphere_param(ray.at(t)));
        let delta = if j == 0 {
            BACKGROUND_FAR_DELTA
        } else {
            (depth_at(j as f64 / n as f64) - depth_at((j as f64 + 1.0) / n as f64)).max(0.0)
        };
        let survive = trans * (-sigma * delta).exp();
        let w = trans - survive;
        for i in 0..3 {
            color[i] += w * c[i];
        }
        trans = survive;
    }
    color
}
