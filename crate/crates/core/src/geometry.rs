//! Cameras, patches, and ray generation.
//!
//! Scenes live in the [-1, 1]^3 cube with +z up. Cameras sit on a sphere of
//! given radius and always look at the origin. Image coordinates are
//! continuous NDC in [0, 1]^2 with u growing right and v growing down, so the
//! top of a rendered frame shows the +up side of the scene. A patch is a
//! square crop of that NDC domain: side length `scale`, top-left corner at
//! `(offset_x, offset_y)`, sampled on an r x r pixel grid at pixel centers.

use crate::{invalid, Result};

/// Half-diagonal of the scene cube; rays cover `radius -+ CUBE_RADIUS`.
pub const CUBE_RADIUS: f64 = 1.732_050_807_568_877_2;

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    /// Azimuth in radians; any finite value, wraps freely.
    pub yaw: f64,
    /// Colatitude in radians: 0 at the +z pole, pi/2 on the equator, pi at -z.
    pub pitch: f64,
    /// Distance from the origin, > 0.
    pub radius: f64,
    /// Full horizontal field of view in radians, in (0, pi).
    pub fov: f64,
}

impl CameraPose {
    pub fn new(yaw: f64, pitch: f64, radius: f64, fov: f64) -> Result<Self> {
        if !yaw.is_finite() {
            return Err(invalid(format!("camera yaw must be finite, got {yaw}")));
        }
        if !(0.0..=std::f64::consts::PI).contains(&pitch) {
            return Err(invalid(format!("camera pitch must lie in [0, pi], got {pitch}")));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(invalid(format!("camera radius must be positive, got {radius}")));
        }
        if !(fov > 0.0 && fov < std::f64::consts::PI) {
            return Err(invalid(format!("fov must lie in (0, pi), got {fov}")));
        }
        Ok(Self { yaw, pitch, radius, fov })
    }

    pub fn position(&self) -> [f64; 3] {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        [self.radius * sp * cy, self.radius * sp * sy, self.radius * cp]
    }

    /// Orthonormal (right, up, forward) with forward pointing at the origin.
    /// At the poles the world-up cross product degenerates, so the frame
    /// falls back to +x as the up reference; the image stays well defined but
    /// its roll there is a convention.
    pub fn basis(&self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let p = self.position();
        let forward = normalize([-p[0], -p[1], -p[2]]);
        let world_up = if forward[2].abs() < 1.0 - 1e-9 {
            [0.0, 0.0, 1.0]
        } else {
            [1.0, 0.0, 0.0]
        };
        let right = normalize(cross(forward, world_up));
        let up = cross(right, forward);
        (right, up, forward)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSpec {
    /// Patch side length as a fraction of the frame, in [r/R, 1].
    pub scale: f64,
    /// Left edge in NDC, in [0, 1 - scale].
    pub offset_x: f64,
    /// Top edge in NDC, in [0, 1 - scale].
    pub offset_y: f64,
    /// Pixels per patch side (r).
    pub patch_res: usize,
    /// Full-frame resolution the patch is cut from (R).
    pub full_res: usize,
}

impl PatchSpec {
    pub fn new(
        scale: f64,
        offset_x: f64,
        offset_y: f64,
        patch_res: usize,
        full_res: usize,
    ) -> Result<Self> {
        if patch_res == 0 {
            return Err(invalid("patch_res must be at least 1"));
        }
        if full_res < patch_res {
            return Err(invalid(format!(
                "full_res ({full_res}) must be >= patch_res ({patch_res})"
            )));
        }
        let min_scale = patch_res as f64 / full_res as f64;
        if !(scale.is_finite() && scale >= min_scale && scale <= 1.0) {
            return Err(invalid(format!(
                "scale {scale} outside [{min_scale}, 1]"
            )));
        }
        for (name, off) in [("offset_x", offset_x), ("offset_y", offset_y)] {
            if !(off.is_finite() && off >= 0.0 && off + scale <= 1.0) {
                return Err(invalid(format!(
                    "{name} {off} outside [0, {}]",
                    1.0 - scale
                )));
            }
        }
        Ok(Self { scale, offset_x, offset_y, patch_res, full_res })
    }

    /// The identity patch: scale 1, zero offsets, r = R = `res`.
    pub fn full_frame(res: usize) -> Self {
        Self { scale: 1.0, offset_x: 0.0, offset_y: 0.0, patch_res: res, full_res: res }
    }

    /// Smallest admissible scale, r/R.
    pub fn min_scale(&self) -> f64 {
        self.patch_res as f64 / self.full_res as f64
    }
}

/// NDC coordinates of patch pixel (i, j), sampled at the pixel center.
pub fn patch_pixel_to_ndc(spec: &PatchSpec, i: usize, j: usize) -> (f64, f64) {
    let r = spec.patch_res;
    assert!(i < r && j < r, "pixel ({i}, {j}) outside {r}x{r} patch");
    let u = spec.offset_x + spec.scale * ((i as f64 + 0.5) / r as f64);
    let v = spec.offset_y + spec.scale * ((j as f64 + 0.5) / r as f64);
    (u, v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    /// Unit direction.
    pub dir: [f64; 3],
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }
}

/// Pinhole ray through NDC point (u, v). The screen offset is
/// (2u - 1) tan(fov/2) along `right` and -(2v - 1) tan(fov/2) / aspect along
/// `up` (v grows downward). The march interval brackets the scene cube's
/// bounding sphere: t = radius -+ sqrt(3), with t_near clamped at 0 for
/// cameras inside it.
pub fn camera_ray(pose: &CameraPose, u: f64, v: f64, aspect: f64) -> Ray {
    let (right, up, forward) = pose.basis();
    let half = (pose.fov * 0.5).tan();
    let x = (2.0 * u - 1.0) * half;
    let y = -(2.0 * v - 1.0) * half / aspect;
    let dir = normalize([
        forward[0] + x * right[0] + y * up[0],
        forward[1] + x * right[1] + y * up[1],
        forward[2] + x * right[2] + y * up[2],
    ]);
    Ray {
        origin: pose.position(),
        dir,
        t_near: (pose.radius - CUBE_RADIUS).max(0.0),
        t_far: pose.radius + CUBE_RADIUS,
    }
}

/// Rays for every pixel of the patch, row-major (j outer, i fastest), unit
/// aspect. With the full-frame spec this reproduces the whole image grid;
/// smaller scales restrict the same continuous ray field to the crop.
pub fn patch_rays(pose: &CameraPose, spec: &PatchSpec) -> Vec<Ray> {
    let r = spec.patch_res;
    let mut rays = Vec::with_capacity(r * r);
    for j in 0..r {
        for i in 0..r {
            let (u, v) = patch_pixel_to_ndc(spec, i, j);
            rays.push(camera_ray(pose, u, v, 1.0));
        }
    }
    rays
}
