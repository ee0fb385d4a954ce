//! Tri-plane scene representation.
//!
//! A scene is three axis-aligned feature planes (xy, yz, xz) plus a small
//! decoder MLP. A 3D point projects onto each plane, gathers a bilinearly
//! interpolated feature vector from each, and the decoder maps the summed
//! features to RGB (sigmoid) and density (softplus). There is no view
//! direction input, so radiance is Lambertian by construction.
//!
//! `decode_backward` is an exact reverse-mode pass written by hand: gradients
//! flow through both activations, all three linear layers, and the bilinear
//! stencil back to the (at most) four touched entries of each plane.

use crate::{invalid, Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EPGC";
pub const DENSITY_GRID_MAGIC: [u8; 4] = *b"EPGF";
/// Decoder output width: RGB plus raw density.
const OUT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneShape {
    /// Plane resolution per side.
    pub plane_res: usize,
    /// Feature channels per plane.
    pub feature_dim: usize,
    /// Decoder hidden width.
    pub hidden_dim: usize,
}

impl Default for SceneShape {
    fn default() -> Self {
        Self { plane_res: 64, feature_dim: 32, hidden_dim: 64 }
    }
}

impl SceneShape {
    pub fn validate(&self) -> Result<()> {
        if self.plane_res < 2 {
            return Err(invalid("plane_res must be at least 2 for bilinear lookup"));
        }
        if self.feature_dim == 0 || self.hidden_dim == 0 {
            return Err(invalid("feature_dim and hidden_dim must be positive"));
        }
        Ok(())
    }
}

/// One square feature plane, values indexed (a * res + b) * channels + c
/// where (a, b) are the two projected coordinates in axis order.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneGrid {
    pub resolution: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl PlaneGrid {
    fn zeros(resolution: usize, channels: usize) -> Self {
        Self { resolution, channels, data: vec![0.0; resolution * resolution * channels] }
    }

    pub fn entry_index(&self, a: usize, b: usize, c: usize) -> usize {
        debug_assert!(a < self.resolution && b < self.resolution && c < self.channels);
        (a * self.resolution + b) * self.channels + c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    /// hidden_dim x feature_dim, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// hidden_dim x hidden_dim.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// 4 x hidden_dim.
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl MlpParams {
    fn zeros(feature_dim: usize, hidden_dim: usize) -> Self {
        Self {
            feature_dim,
            hidden_dim,
            w1: vec![0.0; hidden_dim * feature_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim * hidden_dim],
            b2: vec![0.0; hidden_dim],
            w3: vec![0.0; OUT * hidden_dim],
            b3: vec![0.0; OUT],
        }
    }
}

/// Which pair of coordinates each plane sees: xy, yz, xz.
const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];

#[derive(Debug, Clone, PartialEq)]
pub struct TriPlaneScene {
    pub planes: [PlaneGrid; 3],
    pub mlp: MlpParams,
}

impl TriPlaneScene {
    pub fn zeros(shape: SceneShape) -> Self {
        Self {
            planes: std::array::from_fn(|_| PlaneGrid::zeros(shape.plane_res, shape.feature_dim)),
            mlp: MlpParams::zeros(shape.feature_dim, shape.hidden_dim),
        }
    }

    /// Random initialization: plane features N(0, 0.1^2), MLP weights He
    /// (fan-in) normal, biases zero.
    pub fn init<R: Rng + ?Sized>(shape: SceneShape, rng: &mut R) -> Self {
        let mut scene = Self::zeros(shape);
        let plane_dist = Normal::new(0.0, 0.1).unwrap();
        for plane in scene.planes.iter_mut() {
            for v in plane.data.iter_mut() {
                *v = plane_dist.sample(rng);
            }
        }
        let mut he = |w: &mut [f64], fan_in: usize| {
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            for v in w.iter_mut() {
                *v = dist.sample(rng);
            }
        };
        he(&mut scene.mlp.w1, shape.feature_dim);
        he(&mut scene.mlp.w2, shape.hidden_dim);
        he(&mut scene.mlp.w3, shape.hidden_dim);
        scene
    }

    pub fn shape(&self) -> SceneShape {
        SceneShape {
            plane_res: self.planes[0].resolution,
            feature_dim: self.mlp.feature_dim,
            hidden_dim: self.mlp.hidden_dim,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape())
    }

    /// All parameter tensors in serialization order: the three planes, then
    /// w1, b1, w2, b2, w3, b3. Gradient buffers and optimizer state mirror
    /// this layout.
    pub fn tensors(&self) -> [&[f64]; 9] {
        [
            &self.planes[0].data,
            &self.planes[1].data,
            &self.planes[2].data,
            &self.mlp.w1,
            &self.mlp.b1,
            &self.mlp.w2,
            &self.mlp.b2,
            &self.mlp.w3,
            &self.mlp.b3,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 9] {
        let [p0, p1, p2] = &mut self.planes;
        [
            &mut p0.data,
            &mut p1.data,
            &mut p2.data,
            &mut self.mlp.w1,
            &mut self.mlp.b1,
            &mut self.mlp.w2,
            &mut self.mlp.b2,
            &mut self.mlp.w3,
            &mut self.mlp.b3,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub color: [f64; 3],
    pub density: f64,
}

/// Upstream derivative with respect to a decoded sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldGrad {
    pub d_color: [f64; 3],
    pub d_density: f64,
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Reusable buffers for decode passes; one per worker is plenty.
#[derive(Debug, Clone)]
pub struct DecodeScratch {
    feats: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    o: [f64; OUT],
    dh1: Vec<f64>,
    dh2: Vec<f64>,
    dfeats: Vec<f64>,
}

impl DecodeScratch {
    pub fn new(shape: SceneShape) -> Self {
        Self {
            feats: vec![0.0; shape.feature_dim],
            z1: vec![0.0; shape.hidden_dim],
            h1: vec![0.0; shape.hidden_dim],
            z2: vec![0.0; shape.hidden_dim],
            h2: vec![0.0; shape.hidden_dim],
            o: [0.0; OUT],
            dh1: vec![0.0; shape.hidden_dim],
            dh2: vec![0.0; shape.hidden_dim],
            dfeats: vec![0.0; shape.feature_dim],
        }
    }
}

/// Bilinear cell and fractional position for a coordinate in [-1, 1] on a
/// node-centered grid (node k sits at -1 + 2k/(res-1)). Out-of-range
/// coordinates clamp to the border.
fn stencil(res: usize, c: f64) -> (usize, f64) {
    let g = ((c + 1.0) * 0.5 * (res - 1) as f64).clamp(0.0, (res - 1) as f64);
    let i0 = (g as usize).min(res - 2);
    (i0, g - i0 as f64)
}

fn accumulate_plane_features(scene: &TriPlaneScene, x: [f64; 3], out: &mut [f64]) {
    out.fill(0.0);
    for (plane, (ax_a, ax_b)) in scene.planes.iter().zip(PLANE_AXES) {
        let (a0, fa) = stencil(plane.resolution, x[ax_a]);
        let (b0, fb) = stencil(plane.resolution, x[ax_b]);
        let w00 = (1.0 - fa) * (1.0 - fb);
        let w01 = (1.0 - fa) * fb;
        let w10 = fa * (1.0 - fb);
        let w11 = fa * fb;
        let c = plane.channels;
        let row0 = &plane.data[plane.entry_index(a0, b0, 0)..];
        let row1 = &plane.data[plane.entry_index(a0 + 1, b0, 0)..];
        for k in 0..c {
            out[k] += w00 * row0[k] + w01 * row0[c + k] + w10 * row1[k] + w11 * row1[c + k];
        }
    }
}

/// Summed bilinear feature lookup over the three plane projections. The
/// caller is responsible for keeping x inside the scene cube; outside
/// coordinates clamp to the plane borders.
pub fn plane_features(scene: &TriPlaneScene, x: [f64; 3]) -> Vec<f64> {
    let mut out = vec![0.0; scene.mlp.feature_dim];
    accumulate_plane_features(scene, x, &mut out);
    out
}

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], b: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        out[r] = acc;
    }
}

fn forward_into(scene: &TriPlaneScene, x: [f64; 3], s: &mut DecodeScratch) -> FieldSample {
    let h = scene.mlp.hidden_dim;
    let f = scene.mlp.feature_dim;
    accumulate_plane_features(scene, x, &mut s.feats);
    matvec(&scene.mlp.w1, h, f, &s.feats, &scene.mlp.b1, &mut s.z1);
    for (hi, zi) in s.h1.iter_mut().zip(&s.z1) {
        *hi = softplus(*zi);
    }
    matvec(&scene.mlp.w2, h, h, &s.h1, &scene.mlp.b2, &mut s.z2);
    for (hi, zi) in s.h2.iter_mut().zip(&s.z2) {
        *hi = softplus(*zi);
    }
    let mut o = [0.0; OUT];
    matvec(&scene.mlp.w3, OUT, h, &s.h2, &scene.mlp.b3, &mut o);
    s.o = o;
    FieldSample {
        color: [sigmoid(o[0]), sigmoid(o[1]), sigmoid(o[2])],
        density: softplus(o[3]),
    }
}

/// Color and density at a point inside the scene cube.
pub fn decode(scene: &TriPlaneScene, x: [f64; 3]) -> FieldSample {
    decode_with(scene, x, &mut DecodeScratch::new(scene.shape()))
}

/// Allocation-free decode for hot loops.
pub fn decode_with(scene: &TriPlaneScene, x: [f64; 3], scratch: &mut DecodeScratch) -> FieldSample {
    forward_into(scene, x, scratch)
}

/// Accumulate d(upstream . output)/d(params) into `grads`, a zero- or
/// previously-accumulated buffer with the same shape as `scene`. Recomputes
/// the forward intermediates internally, so no prior decode call is needed.
pub fn decode_backward(
    scene: &TriPlaneScene,
    x: [f64; 3],
    upstream: &FieldGrad,
    grads: &mut TriPlaneScene,
    s: &mut DecodeScratch,
) {
    debug_assert_eq!(scene.shape(), grads.shape(), "gradient buffer shape mismatch");
    let sample = forward_into(scene, x, s);
    let h = scene.mlp.hidden_dim;
    let f = scene.mlp.feature_dim;

    // output heads: sigmoid for color, softplus for density
    let mut d_o = [0.0; OUT];
    for k in 0..3 {
        let c = sample.color[k];
        d_o[k] = upstream.d_color[k] * c * (1.0 - c);
    }
    d_o[3] = upstream.d_density * sigmoid(s.o[3]);

    // third layer
    for (k, &dok) in d_o.iter().enumerate() {
        grads.mlp.b3[k] += dok;
        let wrow = &mut grads.mlp.w3[k * h..(k + 1) * h];
        for (g, h2) in wrow.iter_mut().zip(&s.h2) {
            *g += dok * h2;
        }
    }
    s.dh2.fill(0.0);
    for (k, &dok) in d_o.iter().enumerate() {
        let wrow = &scene.mlp.w3[k * h..(k + 1) * h];
        for (d, w) in s.dh2.iter_mut().zip(wrow) {
            *d += dok * w;
        }
    }

    // second layer through softplus' = sigmoid
    for (d, z) in s.dh2.iter_mut().zip(&s.z2) {
        *d *= sigmoid(*z);
    }
    s.dh1.fill(0.0);
    for r in 0..h {
        let dz = s.dh2[r];
        grads.mlp.b2[r] += dz;
        let grow = &mut grads.mlp.w2[r * h..(r + 1) * h];
        let wrow = &scene.mlp.w2[r * h..(r + 1) * h];
        for c in 0..h {
            grow[c] += dz * s.h1[c];
            s.dh1[c] += dz * wrow[c];
        }
    }

    // first layer
    for (d, z) in s.dh1.iter_mut().zip(&s.z1) {
        *d *= sigmoid(*z);
    }
    s.dfeats.fill(0.0);
    for r in 0..h {
        let dz = s.dh1[r];
        grads.mlp.b1[r] += dz;
        let grow = &mut grads.mlp.w1[r * f..(r + 1) * f];
        let wrow = &scene.mlp.w1[r * f..(r + 1) * f];
        for c in 0..f {
            grow[c] += dz * s.feats[c];
            s.dfeats[c] += dz * wrow[c];
        }
    }

    // bilinear stencil back into the planes: four entries per plane
    for (plane_idx, (ax_a, ax_b)) in PLANE_AXES.iter().enumerate() {
        let res = scene.planes[plane_idx].resolution;
        let (a0, fa) = stencil(res, x[*ax_a]);
        let (b0, fb) = stencil(res, x[*ax_b]);
        let weights = [
            (a0, b0, (1.0 - fa) * (1.0 - fb)),
            (a0, b0 + 1, (1.0 - fa) * fb),
            (a0 + 1, b0, fa * (1.0 - fb)),
            (a0 + 1, b0 + 1, fa * fb),
        ];
        let gplane = &mut grads.planes[plane_idx];
        for (a, b, w) in weights {
            let base = gplane.entry_index(a, b, 0);
            for (g, d) in gplane.data[base..base + f].iter_mut().zip(&s.dfeats) {
                *g += w * d;
            }
        }
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f32_slice<W: Write>(w: &mut W, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &v in data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Serialize a scene: 16-byte header (magic "EPGC", u32 plane_res, u32
/// feature_dim, u32 hidden_dim, all little-endian), then every tensor in
/// [`TriPlaneScene::tensors`] order as little-endian f32.
pub fn write_checkpoint<W: Write>(scene: &TriPlaneScene, w: &mut W) -> Result<()> {
    let shape = scene.shape();
    w.write_all(&CHECKPOINT_MAGIC)?;
    write_u32(w, shape.plane_res as u32)?;
    write_u32(w, shape.feature_dim as u32)?;
    write_u32(w, shape.hidden_dim as u32)?;
    for t in scene.tensors() {
        write_f32_slice(w, t)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<TriPlaneScene> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::Format(format!("truncated magic: {e}")))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}, expected {:?}",
            magic, CHECKPOINT_MAGIC
        )));
    }
    let shape = SceneShape {
        plane_res: read_u32(r)? as usize,
        feature_dim: read_u32(r)? as usize,
        hidden_dim: read_u32(r)? as usize,
    };
    shape.validate().map_err(|e| Error::Format(format!("bad checkpoint shape: {e}")))?;
    if shape.plane_res > 8192 || shape.feature_dim > 4096 || shape.hidden_dim > 65536 {
        return Err(Error::Format("implausible checkpoint shape".into()));
    }
    let mut scene = TriPlaneScene::zeros(shape);
    let mut buf = Vec::new();
    for t in scene.tensors_mut() {
        buf.resize(t.len() * 4, 0);
        r.read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated tensor payload: {e}")))?;
        for (v, chunk) in t.iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
    }
    let mut extra = [0u8; 1];
    match r.read(&mut extra) {
        Ok(0) => Ok(scene),
        Ok(_) => Err(Error::Format("trailing bytes after checkpoint payload".into())),
        Err(e) => Err(Error::Format(format!("checkpoint read failed: {e}"))),
    }
}

/// Sample density on an N^3 lattice of cell centers over the scene cube and
/// serialize it: 16-byte header (magic "EPGF", u32 N, u32 channel count = 1,
/// u32 reserved = 0), then N^3 little-endian f32 values, row-major with x
/// fastest, then y, then z.
pub fn write_density_grid<W: Write>(
    scene: &TriPlaneScene,
    resolution: usize,
    w: &mut W,
) -> Result<()> {
    if resolution == 0 {
        return Err(invalid("density grid resolution must be positive"));
    }
    w.write_all(&DENSITY_GRID_MAGIC)?;
    write_u32(w, resolution as u32)?;
    write_u32(w, 1)?;
    write_u32(w, 0)?;
    let mut scratch = DecodeScratch::new(scene.shape());
    let center = |k: usize| -1.0 + 2.0 * (k as f64 + 0.5) / resolution as f64;
    let mut row = Vec::with_capacity(resolution);
    for zi in 0..resolution {
        for yi in 0..resolution {
            row.clear();
            for xi in 0..resolution {
                let x = [center(xi), center(yi), center(zi)];
                row.push(decode_with(scene, x, &mut scratch).density);
            }
            write_f32_slice(w, &row)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_scene(seed: u64) -> TriPlaneScene {
        let shape = SceneShape { plane_res: 8, feature_dim: 8, hidden_dim: 16 };
        TriPlaneScene::init(shape, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_scene_decodes_to_neutral_values() {
        let scene = TriPlaneScene::zeros(SceneShape::default());
        let s = decode(&scene, [0.21, -0.73, 0.5]);
        assert_eq!(s.color, [0.5, 0.5, 0.5]);
        assert!((s.density - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn constant_planes_decode_everywhere_the_same() {
        let mut scene = small_scene(1);
        for plane in scene.planes.iter_mut() {
            for c in 0..plane.channels {
                for a in 0..plane.resolution {
                    for b in 0..plane.resolution {
                        let i = plane.entry_index(a, b, c);
                        plane.data[i] = 0.1 * c as f64 - 0.3;
                    }
                }
            }
        }
        let a = decode(&scene, [0.9, -0.4, 0.05]);
        let b = decode(&scene, [-0.62, 0.17, 0.88]);
        assert_eq!(a, b);
    }

    #[test]
    fn grid_node_lookup_sums_three_node_vectors() {
        let scene = small_scene(2);
        // res 8: nodes at -1 + 2k/7; pick node coordinates exactly
        let node = |k: usize| -1.0 + 2.0 * k as f64 / 7.0;
        let x = [node(5), node(2), node(3)];
        let mut expected = vec![0.0; scene.mlp.feature_dim];
        for (p, (ax_a, ax_b)) in scene.planes.iter().zip(PLANE_AXES) {
            let ia = ((x[ax_a] + 1.0) * 3.5).round() as usize;
            let ib = ((x[ax_b] + 1.0) * 3.5).round() as usize;
            for c in 0..p.channels {
                expected[c] += p.data[p.entry_index(ia, ib, c)];
            }
        }
        let got = plane_features(&scene, x);
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
        // the four-cell center averages the four surrounding nodes per plane
        let mid = node(0) + 1.0 / 7.0;
        let center = plane_features(&scene, [mid, mid, mid]);
        let mut avg = vec![0.0; scene.mlp.feature_dim];
        for (p, _) in scene.planes.iter().zip(PLANE_AXES) {
            for c in 0..p.channels {
                avg[c] += (p.data[p.entry_index(0, 0, c)]
                    + p.data[p.entry_index(0, 1, c)]
                    + p.data[p.entry_index(1, 0, c)]
                    + p.data[p.entry_index(1, 1, c)])
                    / 4.0;
            }
        }
        for (g, e) in center.iter().zip(&avg) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    // Cycling the coordinates (x,y,z) -> (y,z,x) while moving each plane to
    // the slot that now sees its projection (transposing where the index
    // order flips) must leave the decoded output unchanged.
    #[test]
    fn plane_sum_respects_coordinate_permutation() {
        let scene = small_scene(21);
        let transpose = |p: &PlaneGrid| {
            let mut out = p.clone();
            for a in 0..p.resolution {
                for b in 0..p.resolution {
                    for c in 0..p.channels {
                        let flipped = out.entry_index(b, a, c);
                        out.data[flipped] = p.data[p.entry_index(a, b, c)];
                    }
                }
            }
            out
        };
        let mut permuted = scene.clone();
        permuted.planes[0] = scene.planes[1].clone(); // sees (y, z)
        permuted.planes[1] = transpose(&scene.planes[2]); // sees (z, x)
        permuted.planes[2] = transpose(&scene.planes[0]); // sees (y, x)
        for p in [[0.3, -0.8, 0.55], [-0.97, 0.02, 0.41]] {
            let orig = decode(&scene, p);
            let cycled = decode(&permuted, [p[1], p[2], p[0]]);
            // the plane sums accumulate in a different order, so allow
            // rounding-level slack
            assert!((orig.density - cycled.density).abs() < 1e-12);
            for k in 0..3 {
                assert!((orig.color[k] - cycled.color[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_cube_lookup_clamps_to_border() {
        let scene = small_scene(3);
        let inside = plane_features(&scene, [1.0, -1.0, 0.4]);
        let outside = plane_features(&scene, [1.7, -2.0, 0.4]);
        for (a, b) in inside.iter().zip(&outside) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_central_differences() {
        let scene = small_scene(7);
        let x = [0.31, -0.44, 0.62];
        let upstream = FieldGrad { d_color: [0.7, -1.3, 0.4], d_density: 0.9 };
        let mut grads = scene.zeros_like();
        let mut scratch = DecodeScratch::new(scene.shape());
        decode_backward(&scene, x, &upstream, &mut grads, &mut scratch);

        let loss = |scene: &TriPlaneScene| {
            let s = decode(scene, x);
            upstream.d_color[0] * s.color[0]
                + upstream.d_color[1] * s.color[1]
                + upstream.d_color[2] * s.color[2]
                + upstream.d_density * s.density
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        let h = 1e-4;
        for tensor_idx in 0..9 {
            for _ in 0..6 {
                let len = scene.tensors()[tensor_idx].len();
                let j = rng.random_range(0..len);
                let analytic = grads.tensors()[tensor_idx][j];
                let mut plus = scene.clone();
                plus.tensors_mut()[tensor_idx][j] += h;
                let mut minus = scene.clone();
                minus.tensors_mut()[tensor_idx][j] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let denom = analytic.abs().max(numeric.abs());
                if denom < 1e-10 {
                    // untouched plane entries legitimately have zero gradient
                    assert!(analytic.abs() < 1e-10 && numeric.abs() < 1e-7);
                    continue;
                }
                let rel = (analytic - numeric).abs() / denom;
                assert!(
                    rel < 1e-3,
                    "tensor {tensor_idx} entry {j}: analytic {analytic} vs numeric {numeric}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 30, "too few informative parameters checked: {checked}");
    }

    #[test]
    fn backward_touches_only_the_bilinear_stencil() {
        let scene = small_scene(11);
        let mut grads = scene.zeros_like();
        let mut scratch = DecodeScratch::new(scene.shape());
        let upstream = FieldGrad { d_color: [1.0, 1.0, 1.0], d_density: 1.0 };
        decode_backward(&scene, [0.1, 0.2, -0.3], &upstream, &mut grads, &mut scratch);
        for plane in grads.planes.iter() {
            let touched_nodes = (0..plane.resolution)
                .flat_map(|a| (0..plane.resolution).map(move |b| (a, b)))
                .filter(|&(a, b)| {
                    (0..plane.channels).any(|c| plane.data[plane.entry_index(a, b, c)] != 0.0)
                })
                .count();
            assert!(touched_nodes <= 4, "{touched_nodes} nodes touched in one plane");
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_f32_exact() {
        let scene = small_scene(13);
        let mut bytes = Vec::new();
        write_checkpoint(&scene, &mut bytes).unwrap();
        let expected_len = 16
            + 4 * (3 * 8 * 8 * 8 // planes
                + 16 * 8 + 16 + 16 * 16 + 16 + 4 * 16 + 4);
        assert_eq!(bytes.len(), expected_len);
        let restored = read_checkpoint(&mut bytes.as_slice()).unwrap();
        assert_eq!(restored.shape(), scene.shape());
        for (t_orig, t_back) in scene.tensors().iter().zip(restored.tensors()) {
            for (o, b) in t_orig.iter().zip(t_back.iter()) {
                assert_eq!(*b, *o as f32 as f64);
            }
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let scene = small_scene(17);
        let mut bytes = Vec::new();
        write_checkpoint(&scene, &mut bytes).unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(read_checkpoint(&mut bad_magic.as_slice()).is_err());
        let truncated = &bytes[..bytes.len() - 5];
        assert!(read_checkpoint(&mut &truncated[..]).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(read_checkpoint(&mut trailing.as_slice()).is_err());
    }

    #[test]
    fn zero_scene_density_grid_is_log_two() {
        let scene = TriPlaneScene::zeros(SceneShape {
            plane_res: 4,
            feature_dim: 4,
            hidden_dim: 8,
        });
        let n = 8;
        let mut bytes = Vec::new();
        write_density_grid(&scene, n, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 16 + 4 * n * n * n);
        assert_eq!(&bytes[..4], b"EPGF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), n as u32);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let ln2 = std::f64::consts::LN_2;
        for chunk in bytes[16..].chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            assert!((v - ln2).abs() < 1e-6);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn features_stay_within_corner_hull(
                x in -1.0f64..1.0,
                y in -1.0f64..1.0,
                z in -1.0f64..1.0,
                seed in 0u64..100,
            ) {
                let scene = small_scene(seed);
                let feats = plane_features(&scene, [x, y, z]);
                // each interpolated plane value is a convex combination, so
                // the sum is bounded by 3x the most extreme plane entry
                let bound: f64 = scene
                    .planes
                    .iter()
                    .map(|p| p.data.iter().fold(0.0f64, |m, v| m.max(v.abs())))
                    .sum();
                for f in feats {
                    prop_assert!(f.abs() <= bound + 1e-12);
                }
            }

            #[test]
            fn density_is_never_negative(
                x in -1.0f64..1.0,
                y in -1.0f64..1.0,
                z in -1.0f64..1.0,
            ) {
                let scene = small_scene(5);
                let s = decode(&scene, [x, y, z]);
                prop_assert!(s.density >= 0.0);
                for c in s.color {
                    prop_assert!((0.0..=1.0).contains(&c));
                }
            }
        }
    }
}
