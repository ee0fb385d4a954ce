//! Patch scale and offset sampling with annealed schedules.
//!
//! A patch is drawn in two steps: a scale s in [r/R, 1] from a schedule that
//! shifts mass from large to small patches as training progresses, then
//! offsets uniform over the positions where the patch still fits. Two
//! schedules are provided:
//!
//! * `beta_annealed`: s = x (1 - r/R) + r/R with x ~ Beta(1, beta(t)) and
//!   beta(t) interpolated linearly from `beta_start` to `beta_end` over the
//!   first `total_iters` iterations. Small beta concentrates mass near s = 1,
//!   so early training sees whole frames and later training sees crops.
//! * `uniform_annealed`: s uniform on [s_min(t), 1] with s_min shrinking
//!   linearly from 1 to r/R.

use crate::geometry::PatchSpec;
use crate::image::Image;
use crate::{invalid, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    BetaAnnealed,
    UniformAnnealed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    /// Iterations over which the schedule anneals; frozen afterwards.
    pub total_iters: u64,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Patch resolution r.
    pub patch_res: usize,
    /// Full-frame resolution R.
    pub full_res: usize,
}

pub const DEFAULT_BETA_START: f64 = 0.05;
pub const DEFAULT_BETA_END: f64 = 0.8;

impl ScheduleConfig {
    pub fn beta(total_iters: u64, patch_res: usize, full_res: usize) -> Self {
        Self {
            kind: ScheduleKind::BetaAnnealed,
            total_iters,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            patch_res,
            full_res,
        }
    }

    pub fn uniform(total_iters: u64, patch_res: usize, full_res: usize) -> Self {
        Self { kind: ScheduleKind::UniformAnnealed, ..Self::beta(total_iters, patch_res, full_res) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 {
            return Err(invalid("total_iters must be at least 1"));
        }
        if self.patch_res == 0 || self.full_res < self.patch_res {
            return Err(invalid(format!(
                "need 1 <= patch_res <= full_res, got r={} R={}",
                self.patch_res, self.full_res
            )));
        }
        if !(self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end <= 1.0) {
            return Err(invalid(format!(
                "need 0 < beta_start <= beta_end <= 1, got {} and {}",
                self.beta_start, self.beta_end
            )));
        }
        Ok(())
    }

    /// Smallest admissible scale, r/R.
    pub fn min_scale(&self) -> f64 {
        self.patch_res as f64 / self.full_res as f64
    }

    /// Lower support edge of the uniform schedule at iteration t:
    /// lerp(1, r/R, min(t/T, 1)).
    pub fn annealed_min_scale(&self, t: u64) -> f64 {
        lerp(1.0, self.min_scale(), self.progress(t))
    }

    fn progress(&self, t: u64) -> f64 {
        (t as f64 / self.total_iters as f64).min(1.0)
    }
}

pub fn lerp(a: f64, b: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * a + alpha * b
}

/// Beta shape parameter at iteration t: lerp(beta_start, beta_end, min(t/T, 1)).
pub fn beta_param_at(cfg: &ScheduleConfig, t: u64) -> f64 {
    lerp(cfg.beta_start, cfg.beta_end, cfg.progress(t))
}

/// Draw a patch scale for iteration t.
pub fn sample_scale<R: Rng + ?Sized>(cfg: &ScheduleConfig, t: u64, rng: &mut R) -> f64 {
    let m = cfg.min_scale();
    match cfg.kind {
        ScheduleKind::BetaAnnealed => {
            // inverse CDF of Beta(1, beta): x = 1 - (1 - u)^(1/beta)
            let beta = beta_param_at(cfg, t);
            let u: f64 = rng.random();
            let x = 1.0 - (1.0 - u).powf(1.0 / beta);
            x * (1.0 - m) + m
        }
        ScheduleKind::UniformAnnealed => {
            let lo = cfg.annealed_min_scale(t);
            if lo >= 1.0 {
                1.0
            } else {
                rng.random_range(lo..1.0)
            }
        }
    }
}

/// Density of `sample_scale` at s; zero outside the support. The degenerate
/// uniform support at t = 0 (a point mass at 1) reports +inf at s = 1.
pub fn scale_pdf(cfg: &ScheduleConfig, t: u64, s: f64) -> f64 {
    let m = cfg.min_scale();
    match cfg.kind {
        ScheduleKind::BetaAnnealed => {
            if s < m || s > 1.0 {
                return 0.0;
            }
            if m >= 1.0 {
                return if s == 1.0 { f64::INFINITY } else { 0.0 };
            }
            let beta = beta_param_at(cfg, t);
            let x = (s - m) / (1.0 - m);
            beta * (1.0 - x).powf(beta - 1.0) / (1.0 - m)
        }
        ScheduleKind::UniformAnnealed => {
            let lo = cfg.annealed_min_scale(t);
            if s < lo || s > 1.0 {
                return 0.0;
            }
            let span = 1.0 - lo;
            if span > 0.0 {
                1.0 / span
            } else if s == 1.0 {
                f64::INFINITY
            } else {
                0.0
            }
        }
    }
}

/// Offsets uniform over [0, 1 - s] each; a full-frame scale pins them to 0.
pub fn sample_offsets<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> (f64, f64) {
    assert!(
        (0.0..=1.0).contains(&scale),
        "scale {scale} outside [0, 1]"
    );
    let span = 1.0 - scale;
    if span <= 0.0 {
        return (0.0, 0.0);
    }
    (rng.random_range(0.0..span), rng.random_range(0.0..span))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSample {
    pub spec: PatchSpec,
    pub iter: u64,
}

/// Scale plus offsets in one draw, packaged as a renderable patch.
pub fn sample_patch_spec<R: Rng + ?Sized>(
    cfg: &ScheduleConfig,
    t: u64,
    rng: &mut R,
) -> ScaleSample {
    let s = sample_scale(cfg, t, rng);
    let (dx, dy) = sample_offsets(s, rng);
    let spec = PatchSpec::new(s, dx, dy, cfg.patch_res, cfg.full_res)
        .expect("sampled patch parameters satisfy the patch contract");
    ScaleSample { spec, iter: t }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchFilter {
    /// Aliased pick of the nearest source pixel, clamp(floor(u * R), 0, R-1).
    Nearest,
    /// Area-weighted average over the patch pixel's source footprint.
    Box,
}

/// Raster-space patch extraction from an R x R image, mainly for comparing
/// against patches rendered directly from the continuous ray field.
pub fn extract_patch(image: &Image, spec: &PatchSpec, filter: PatchFilter) -> Result<Image> {
    if image.width != spec.full_res || image.height != spec.full_res {
        return Err(invalid(format!(
            "image is {}x{}, patch spec expects {0}x{0} with R={}",
            image.width, image.height, spec.full_res
        )));
    }
    if image.data.is_empty() {
        return Err(invalid("cannot extract from an empty image"));
    }
    let r = spec.patch_res;
    let rf = spec.full_res as f64;
    let mut out = Image::new(r, r, image.channels);
    let mut acc = vec![0.0; image.channels];
    for j in 0..r {
        for i in 0..r {
            match filter {
                PatchFilter::Nearest => {
                    let (u, v) = crate::geometry::patch_pixel_to_ndc(spec, i, j);
                    let sx = ((u * rf).floor() as isize).clamp(0, spec.full_res as isize - 1);
                    let sy = ((v * rf).floor() as isize).clamp(0, spec.full_res as isize - 1);
                    out.set_pixel(i, j, image.pixel(sx as usize, sy as usize));
                }
                PatchFilter::Box => {
                    // footprint of patch pixel (i, j) in source pixel units
                    let u0 = (spec.offset_x + spec.scale * i as f64 / r as f64) * rf;
                    let u1 = (spec.offset_x + spec.scale * (i + 1) as f64 / r as f64) * rf;
                    let v0 = (spec.offset_y + spec.scale * j as f64 / r as f64) * rf;
                    let v1 = (spec.offset_y + spec.scale * (j + 1) as f64 / r as f64) * rf;
                    acc.fill(0.0);
                    let mut total = 0.0;
                    for sy in v0.floor() as usize..(v1.ceil() as usize).min(spec.full_res) {
                        let wy = overlap(sy as f64, sy as f64 + 1.0, v0, v1);
                        if wy <= 0.0 {
                            continue;
                        }
                        for sx in u0.floor() as usize..(u1.ceil() as usize).min(spec.full_res) {
                            let wx = overlap(sx as f64, sx as f64 + 1.0, u0, u1);
                            if wx <= 0.0 {
                                continue;
                            }
                            let w = wx * wy;
                            for (a, p) in acc.iter_mut().zip(image.pixel(sx, sy)) {
                                *a += w * p;
                            }
                            total += w;
                        }
                    }
                    for a in acc.iter_mut() {
                        *a /= total;
                    }
                    out.set_pixel(i, j, &acc);
                }
            }
        }
    }
    Ok(out)
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Mirror a patch placement across the vertical image axis.
pub fn mirror_spec_horizontal(spec: &PatchSpec) -> PatchSpec {
    PatchSpec { offset_x: 1.0 - spec.scale - spec.offset_x, ..*spec }
}
