//! Patch-conditioned channel modulation.
//!
//! A hypernetwork maps the patch parameters (s, dx, dy) through a Fourier
//! encoding and a small MLP to a latent vector, and per-layer affine
//! adapters squash that latent into per-channel gains in (0, 2) via
//! tanh + 1. The gains can be applied to a convolution two ways: scale the
//! kernel per output channel before convolving, or convolve first and scale
//! the output channels. Both give the same answer up to rounding, and the
//! equivalence sweep here is the proof harness for that claim.
//!
//! Convolutions are generic over the float width so the equivalence can be
//! measured in both f64 and f32.

use crate::{invalid, Result};
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::io::Write;

/// Fourier features plus raw passthrough for each of the three patch
/// scalars: sin(2^k pi v), cos(2^k pi v) for k = 0..freqs, then v itself.
/// Output length is 3 * (2 * freqs + 1).
pub fn encode_patch_params(s: f64, dx: f64, dy: f64, freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * (2 * freqs + 1));
    for v in [s, dx, dy] {
        for k in 0..freqs {
            let arg = (1u64 << k) as f64 * std::f64::consts::PI * v;
            out.push(arg.sin());
            out.push(arg.cos());
        }
        out.push(v);
    }
    out
}

fn leaky_relu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        0.2 * x
    }
}

/// One per-layer head: gains = tanh(w p + b) + 1.
#[derive(Debug, Clone)]
pub struct GainAdapter {
    pub channels: usize,
    /// channels x latent_dim, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Hypernetwork from patch parameters to per-layer channel gains: Fourier
/// encoding, two linear layers (leaky ReLU 0.2 between them) to the latent,
/// then one [`GainAdapter`] per modulated layer.
#[derive(Debug, Clone)]
pub struct ModulationNet {
    pub freqs: usize,
    pub latent_dim: usize,
    /// latent_dim x input_dim.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// latent_dim x latent_dim.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub adapters: Vec<GainAdapter>,
}

pub const DEFAULT_FREQS: usize = 8;
pub const DEFAULT_LATENT_DIM: usize = 512;

impl ModulationNet {
    pub fn input_dim(&self) -> usize {
        3 * (2 * self.freqs + 1)
    }

    /// He-normal trunk and adapters, zero biases. Random adapters give
    /// scale-dependent gains out of the box, which is what the profile
    /// dump is for; zero an adapter's weights to get identity modulation.
    pub fn init<R: Rng + ?Sized>(
        freqs: usize,
        latent_dim: usize,
        layer_channels: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if latent_dim == 0 || layer_channels.is_empty() {
            return Err(invalid("modulation net needs a latent dim and at least one layer"));
        }
        let input_dim = 3 * (2 * freqs + 1);
        let mut he = |rows: usize, cols: usize| -> Vec<f64> {
            let dist = Normal::new(0.0, (2.0 / cols as f64).sqrt()).unwrap();
            (0..rows * cols).map(|_| dist.sample(rng)).collect()
        };
        let w1 = he(latent_dim, input_dim);
        let w2 = he(latent_dim, latent_dim);
        let adapters = layer_channels
            .iter()
            .map(|&channels| GainAdapter {
                channels,
                w: he(channels, latent_dim),
                b: vec![0.0; channels],
            })
            .collect();
        Ok(Self {
            freqs,
            latent_dim,
            w1,
            b1: vec![0.0; latent_dim],
            w2,
            b2: vec![0.0; latent_dim],
            adapters,
        })
    }
}

/// Per-layer channel gains for one patch, each strictly inside (0, 2).
pub fn hyper_forward(net: &ModulationNet, s: f64, dx: f64, dy: f64) -> Vec<Vec<f64>> {
    let x = encode_patch_params(s, dx, dy, net.freqs);
    debug_assert_eq!(x.len(), net.input_dim());
    let d = net.latent_dim;
    let mut h = vec![0.0f64; d];
    for r in 0..d {
        let row = &net.w1[r * x.len()..(r + 1) * x.len()];
        let mut z = net.b1[r];
        for (w, xi) in row.iter().zip(&x) {
            z += w * xi;
        }
        h[r] = leaky_relu(z);
    }
    let mut p = vec![0.0f64; d];
    for r in 0..d {
        let row = &net.w2[r * d..(r + 1) * d];
        let mut z = net.b2[r];
        for (w, hi) in row.iter().zip(&h) {
            z += w * hi;
        }
        p[r] = z;
    }
    net.adapters
        .iter()
        .map(|a| {
            (0..a.channels)
                .map(|c| {
                    let row = &a.w[c * d..(c + 1) * d];
                    let mut z = a.b[c];
                    for (w, pi) in row.iter().zip(&p) {
                        z += w * pi;
                    }
                    z.tanh() + 1.0
                })
                .collect()
        })
        .collect()
}

/// Channels-first planar tensor, data indexed (c * height + y) * width + x.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Float> FeatureMap<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![T::zero(); channels * height * width] }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// A 2D convolution: c_out x c_in x k x k kernel, square odd kernel size,
/// zero padding, optional bias. The bias is always applied after any
/// channel modulation so both modulation strategies treat it identically.
#[derive(Debug, Clone)]
pub struct ConvLayerSpec<T> {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub kernel: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Float> ConvLayerSpec<T> {
    pub fn new(
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        padding: usize,
        kernel: Vec<T>,
        bias: Option<Vec<T>>,
    ) -> Result<Self> {
        if k % 2 == 0 || k == 0 {
            return Err(invalid(format!("kernel size must be odd, got {k}")));
        }
        if stride == 0 {
            return Err(invalid("stride must be at least 1"));
        }
        if kernel.len() != c_out * c_in * k * k {
            return Err(invalid(format!(
                "kernel has {} entries, expected {}",
                kernel.len(),
                c_out * c_in * k * k
            )));
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(invalid("bias length must equal c_out"));
            }
        }
        Ok(Self { c_out, c_in, k, stride, padding, kernel, bias })
    }

    fn out_extent(&self, extent: usize) -> Result<usize> {
        let padded = extent + 2 * self.padding;
        if padded < self.k {
            return Err(invalid(format!(
                "input extent {extent} with padding {} is smaller than kernel {}",
                self.padding, self.k
            )));
        }
        Ok((padded - self.k) / self.stride + 1)
    }
}

/// Core convolution without bias; `gain` scales output channel o's kernel.
fn conv2d_scaled<T: Float>(
    layer: &ConvLayerSpec<T>,
    x: &FeatureMap<T>,
    gain: impl Fn(usize) -> T,
) -> Result<FeatureMap<T>> {
    if x.channels != layer.c_in {
        return Err(invalid(format!(
            "input has {} channels, layer expects {}",
            x.channels, layer.c_in
        )));
    }
    let h_out = layer.out_extent(x.height)?;
    let w_out = layer.out_extent(x.width)?;
    let k = layer.k;
    let mut y = FeatureMap::zeros(layer.c_out, h_out, w_out);
    for o in 0..layer.c_out {
        let g = gain(o);
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut acc = T::zero();
                for c in 0..layer.c_in {
                    let kbase = ((o * layer.c_in + c) * k) * k;
                    for ky in 0..k {
                        let iy = (oy * layer.stride + ky) as isize
                            - layer.padding as isize;
                        if iy < 0 || iy >= x.height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * layer.stride + kx) as isize
                                - layer.padding as isize;
                            if ix < 0 || ix >= x.width as isize {
                                continue;
                            }
                            let w = layer.kernel[kbase + ky * k + kx] * g;
                            acc = acc + w * x.at(c, iy as usize, ix as usize);
                        }
                    }
                }
                y.data[(o * h_out + oy) * w_out + ox] = acc;
            }
        }
    }
    Ok(y)
}

fn add_bias<T: Float>(layer: &ConvLayerSpec<T>, y: &mut FeatureMap<T>) {
    if let Some(bias) = &layer.bias {
        let plane = y.height * y.width;
        for (o, b) in bias.iter().enumerate() {
            for v in &mut y.data[o * plane..(o + 1) * plane] {
                *v = *v + *b;
            }
        }
    }
}

/// Plain convolution with bias.
pub fn conv2d<T: Float>(layer: &ConvLayerSpec<T>, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    let mut y = conv2d_scaled(layer, x, |_| T::one())?;
    add_bias(layer, &mut y);
    Ok(y)
}

fn check_gains<T>(layer: &ConvLayerSpec<T>, gains: &[T]) -> Result<()> {
    if gains.len() != layer.c_out {
        return Err(invalid(format!(
            "{} gains for {} output channels",
            gains.len(),
            layer.c_out
        )));
    }
    Ok(())
}

/// Modulation strategy one: scale the kernel of output channel o by
/// gains[o], then convolve. Bias afterwards.
pub fn conv_weight_modulated<T: Float>(
    layer: &ConvLayerSpec<T>,
    x: &FeatureMap<T>,
    gains: &[T],
) -> Result<FeatureMap<T>> {
    check_gains(layer, gains)?;
    let mut y = conv2d_scaled(layer, x, |o| gains[o])?;
    add_bias(layer, &mut y);
    Ok(y)
}

/// Modulation strategy two: convolve with the raw kernel, then scale each
/// output channel. Bias afterwards. Agrees with the weight-scaled form up
/// to floating-point rounding.
pub fn conv_output_modulated<T: Float>(
    layer: &ConvLayerSpec<T>,
    x: &FeatureMap<T>,
    gains: &[T],
) -> Result<FeatureMap<T>> {
    check_gains(layer, gains)?;
    let mut y = conv2d_scaled(layer, x, |_| T::one())?;
    let plane = y.height * y.width;
    for (o, g) in gains.iter().enumerate() {
        for v in &mut y.data[o * plane..(o + 1) * plane] {
            *v = *v * *g;
        }
    }
    add_bias(layer, &mut y);
    Ok(y)
}

/// Gains of the chosen adapters over a scale sweep with the patch centered
/// at each scale: row per scale, columns the concatenated channels of
/// `layers` in the given order.
pub fn modulation_profile(
    net: &ModulationNet,
    scales: &[f64],
    layers: &[usize],
) -> Result<Vec<Vec<f64>>> {
    for &l in layers {
        if l >= net.adapters.len() {
            return Err(invalid(format!(
                "layer index {l} out of range for {} adapters",
                net.adapters.len()
            )));
        }
    }
    Ok(scales
        .iter()
        .map(|&s| {
            let centered = 0.5 * (1.0 - s);
            let gains = hyper_forward(net, s, centered, centered);
            layers.iter().flat_map(|&l| gains[l].iter().copied()).collect()
        })
        .collect())
}

/// Write a scale-by-filter gain matrix as CSV: header `scale` plus one
/// `l{layer}_f{filter}` column per channel, one row per scale.
pub fn dump_modulation_profile<W: Write>(
    net: &ModulationNet,
    scales: &[f64],
    layers: &[usize],
    out: &mut W,
) -> Result<()> {
    let profile = modulation_profile(net, scales, layers)?;
    let mut header = String::from("scale");
    for &l in layers {
        for f in 0..net.adapters[l].channels {
            header.push_str(&format!(",l{l}_f{f}"));
        }
    }
    writeln!(out, "{header}")?;
    for (s, row) in scales.iter().zip(&profile) {
        let mut line = format!("{s}");
        for g in row {
            line.push_str(&format!(",{g}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// How one filter's gain behaves across the profiled scales, thresholded
/// at 1 +- 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterBehavior {
    AlwaysOn,
    AlwaysOff,
    ScaleDependent,
}

/// Classify each profile column: on everywhere (> 1.5), off everywhere
/// (< 0.5), or scale-dependent.
pub fn classify_filters(profile: &[Vec<f64>]) -> Vec<FilterBehavior> {
    if profile.is_empty() {
        return Vec::new();
    }
    (0..profile[0].len())
        .map(|col| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for row in profile {
                lo = lo.min(row[col]);
                hi = hi.max(row[col]);
            }
            if lo > 1.5 {
                FilterBehavior::AlwaysOn
            } else if hi < 0.5 {
                FilterBehavior::AlwaysOff
            } else {
                FilterBehavior::ScaleDependent
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_net(seed: u64) -> ModulationNet {
        ModulationNet::init(4, 32, &[8, 16], &mut rng(seed)).unwrap()
    }

    #[test]
    fn encoding_has_the_documented_layout() {
        let e = encode_patch_params(0.0, 0.0, 0.0, 8);
        assert_eq!(e.len(), 51);
        for scalar in e.chunks_exact(17) {
            for pair in scalar[..16].chunks_exact(2) {
                // sin 0, cos 1 at v = 0
                assert_eq!(pair[0], 0.0);
                assert_eq!(pair[1], 1.0);
            }
            assert_eq!(scalar[16], 0.0);
        }
        // raw passthrough sits last in each block
        let e = encode_patch_params(0.3, 0.6, 0.9, 2);
        assert_eq!(e.len(), 15);
        assert_eq!(e[4], 0.3);
        assert_eq!(e[9], 0.6);
        assert_eq!(e[14], 0.9);
    }

    #[test]
    fn encodings_are_collision_free_on_a_grid() {
        let mut seen = HashSet::new();
        for a in 0..10 {
            for b in 0..10 {
                for c in 0..10 {
                    let s = 0.1 + 0.09 * a as f64;
                    let dx = 0.07 * b as f64;
                    let dy = 0.07 * c as f64;
                    let bits: Vec<u64> = encode_patch_params(s, dx, dy, 8)
                        .iter()
                        .map(|v| v.to_bits())
                        .collect();
                    assert!(seen.insert(bits), "collision at ({s}, {dx}, {dy})");
                }
            }
        }
        assert_eq!(seen.len(), 1000);
    }

    #[test]
    fn zeroed_adapters_modulate_by_exactly_one() {
        let mut net = small_net(1);
        for a in net.adapters.iter_mut() {
            a.w.fill(0.0);
            a.b.fill(0.0);
        }
        let gains = hyper_forward(&net, 0.37, 0.2, 0.11);
        assert_eq!(gains.len(), 2);
        assert_eq!(gains[0].len(), 8);
        assert_eq!(gains[1].len(), 16);
        for layer in gains {
            for g in layer {
                assert_eq!(g, 1.0);
            }
        }
    }

    #[test]
    fn large_bias_saturates_toward_two() {
        let mut net = small_net(2);
        net.adapters[0].w.fill(0.0);
        net.adapters[0].b.fill(5.0);
        let gains = hyper_forward(&net, 0.5, 0.25, 0.25);
        for g in &gains[0] {
            assert!(*g > 1.999 && *g < 2.0);
        }
    }

    fn random_layer(
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> ConvLayerSpec<f64> {
        let scale = (2.0 / (c_in * k * k) as f64).sqrt();
        let kernel = (0..c_out * c_in * k * k)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
            .collect();
        let bias = bias.then(|| (0..c_out).map(|_| rng.random::<f64>() - 0.5).collect());
        ConvLayerSpec::new(c_out, c_in, k, stride, k / 2, kernel, bias).unwrap()
    }

    fn random_map(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> FeatureMap<f64> {
        FeatureMap {
            channels: c,
            height: h,
            width: w,
            data: (0..c * h * w).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        }
    }

    fn to_f32(m: &FeatureMap<f64>) -> FeatureMap<f32> {
        FeatureMap {
            channels: m.channels,
            height: m.height,
            width: m.width,
            data: m.data.iter().map(|v| *v as f32).collect(),
        }
    }

    #[test]
    fn both_strategies_agree_across_the_shape_sweep() {
        let mut r = rng(7);
        for &c_in in &[1usize, 3, 16] {
            for &c_out in &[1usize, 3, 16] {
                for &k in &[1usize, 3] {
                    for &stride in &[1usize, 2] {
                        let layer = random_layer(c_out, c_in, k, stride, true, &mut r);
                        let x = random_map(c_in, 8, 8, &mut r);
                        let gains: Vec<f64> =
                            (0..c_out).map(|_| r.random::<f64>() * 2.0).collect();
                        let a = conv_weight_modulated(&layer, &x, &gains).unwrap();
                        let b = conv_output_modulated(&layer, &x, &gains).unwrap();
                        let max_abs = a
                            .data
                            .iter()
                            .zip(&b.data)
                            .map(|(p, q)| (p - q).abs())
                            .fold(0.0f64, f64::max);
                        assert!(
                            max_abs < 1e-12,
                            "f64 divergence {max_abs} at c_in {c_in} c_out {c_out} k {k}"
                        );

                        let layer32 = ConvLayerSpec::new(
                            c_out,
                            c_in,
                            k,
                            stride,
                            k / 2,
                            layer.kernel.iter().map(|v| *v as f32).collect(),
                            layer.bias.as_ref().map(|b| {
                                b.iter().map(|v| *v as f32).collect()
                            }),
                        )
                        .unwrap();
                        let x32 = to_f32(&x);
                        let g32: Vec<f32> = gains.iter().map(|v| *v as f32).collect();
                        let a32 = conv_weight_modulated(&layer32, &x32, &g32).unwrap();
                        let b32 = conv_output_modulated(&layer32, &x32, &g32).unwrap();
                        let max_abs32 = a32
                            .data
                            .iter()
                            .zip(&b32.data)
                            .map(|(p, q)| (p - q).abs())
                            .fold(0.0f32, f32::max);
                        assert!(
                            max_abs32 < 1e-5,
                            "f32 divergence {max_abs32} at c_in {c_in} c_out {c_out} k {k}"
                        );
                    }
                }
            }
        }
    }

    // Dyadic values make every product exact, so the degenerate 1x1 case
    // can be pinned bitwise against hand arithmetic.
    #[test]
    fn single_pixel_conv_matches_hand_arithmetic() {
        let layer = ConvLayerSpec::new(
            2,
            2,
            1,
            1,
            0,
            vec![0.25, -0.5, 1.5, 0.125],
            Some(vec![0.25, -1.0]),
        )
        .unwrap();
        let x = FeatureMap { channels: 2, height: 1, width: 1, data: vec![2.0, 4.0] };
        let gains = [0.5, 2.0];
        // channel 0: 0.5 * (0.25*2 - 0.5*4) + 0.25 = -0.5
        // channel 1: 2 * (1.5*2 + 0.125*4) + (-1) = 6
        for out in [
            conv_weight_modulated(&layer, &x, &gains).unwrap(),
            conv_output_modulated(&layer, &x, &gains).unwrap(),
        ] {
            assert_eq!(out.data, vec![-0.5, 6.0]);
        }
    }

    #[test]
    fn unit_gains_reduce_to_plain_convolution() {
        let mut r = rng(17);
        let layer = random_layer(3, 2, 3, 1, true, &mut r);
        let x = random_map(2, 5, 5, &mut r);
        let plain = conv2d(&layer, &x).unwrap();
        let ones = vec![1.0; 3];
        assert_eq!(conv_weight_modulated(&layer, &x, &ones).unwrap().data, plain.data);
        assert_eq!(conv_output_modulated(&layer, &x, &ones).unwrap().data, plain.data);
    }

    #[test]
    fn zero_gain_silences_a_channel_and_doubling_is_exact() {
        let mut r = rng(19);
        let layer = random_layer(3, 2, 3, 1, false, &mut r);
        let x = random_map(2, 6, 6, &mut r);
        let out = conv_weight_modulated(&layer, &x, &[1.0, 0.0, 1.0]).unwrap();
        let plane = out.height * out.width;
        assert!(out.data[plane..2 * plane].iter().all(|v| *v == 0.0));

        let single = conv_output_modulated(&layer, &x, &[0.5, 1.0, 0.25]).unwrap();
        let doubled = conv_output_modulated(&layer, &x, &[1.0, 2.0, 0.5]).unwrap();
        for (a, b) in single.data.iter().zip(&doubled.data) {
            assert_eq!(*b, 2.0 * *a); // power-of-two scaling is exact
        }
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let mut r = rng(23);
        let layer = random_layer(3, 2, 3, 1, false, &mut r);
        let x = random_map(2, 5, 5, &mut r);
        assert!(conv_weight_modulated(&layer, &x, &[1.0, 1.0]).is_err());
        let wrong = random_map(4, 5, 5, &mut r);
        assert!(conv2d(&layer, &wrong).is_err());
        assert!(ConvLayerSpec::new(1, 1, 2, 1, 0, vec![0.0; 4], None).is_err());
        assert!(ConvLayerSpec::new(1, 1, 3, 0, 1, vec![0.0; 9], None).is_err());
        assert!(ConvLayerSpec::<f64>::new(1, 1, 3, 1, 1, vec![0.0; 8], None).is_err());
    }

    #[test]
    fn profile_has_one_row_per_scale() {
        let net = small_net(4);
        let scales = [0.25, 0.5, 0.75, 1.0];
        let profile = modulation_profile(&net, &scales, &[0, 1]).unwrap();
        assert_eq!(profile.len(), 4);
        for row in &profile {
            assert_eq!(row.len(), 8 + 16);
            for g in row {
                assert!(*g > 0.0 && *g < 2.0);
            }
        }
        assert!(modulation_profile(&net, &scales, &[2]).is_err());
    }

    #[test]
    fn identity_adapters_profile_to_constant_one() {
        let mut net = small_net(5);
        for a in net.adapters.iter_mut() {
            a.w.fill(0.0);
            a.b.fill(0.0);
        }
        let profile = modulation_profile(&net, &[0.3, 0.6, 1.0], &[0]).unwrap();
        for row in &profile {
            assert!(row.iter().all(|g| *g == 1.0));
        }
        let classes = classify_filters(&profile);
        assert!(classes.iter().all(|c| *c == FilterBehavior::ScaleDependent));
    }

    #[test]
    fn classification_splits_on_the_documented_thresholds() {
        let profile = vec![vec![1.8, 0.2, 1.9, 1.0], vec![1.6, 0.4, 0.3, 1.2]];
        assert_eq!(
            classify_filters(&profile),
            vec![
                FilterBehavior::AlwaysOn,
                FilterBehavior::AlwaysOff,
                FilterBehavior::ScaleDependent,
                FilterBehavior::ScaleDependent,
            ]
        );
    }

    #[test]
    fn csv_dump_roundtrips_the_matrix() {
        let net = small_net(6);
        let scales = [0.2, 0.9];
        let mut buf = Vec::new();
        dump_modulation_profile(&net, &scales, &[1], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("scale,l1_f0,"));
        assert_eq!(header.split(',').count(), 17);
        let profile = modulation_profile(&net, &scales, &[1]).unwrap();
        for (line, (s, row)) in lines.zip(scales.iter().zip(&profile)) {
            let mut fields = line.split(',');
            assert_eq!(fields.next().unwrap().parse::<f64>().unwrap(), *s);
            for g in row {
                assert_eq!(fields.next().unwrap().parse::<f64>().unwrap(), *g);
            }
        }
    }

    #[test]
    fn gains_vary_smoothly_in_scale() {
        let net = small_net(8);
        for s in [0.2, 0.5, 0.8] {
            let a = hyper_forward(&net, s, 0.1, 0.1);
            let b = hyper_forward(&net, s + 1e-6, 0.1, 0.1);
            for (ga, gb) in a.iter().flatten().zip(b.iter().flatten()) {
                assert!((ga - gb).abs() < 1e-2);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gains_stay_strictly_inside_the_open_interval(
                s in 0.0f64..1.0,
                dx in 0.0f64..1.0,
                dy in 0.0f64..1.0,
                seed in 0u64..20,
            ) {
                let net = small_net(seed);
                for layer in hyper_forward(&net, s, dx, dy) {
                    for g in layer {
                        prop_assert!(g > 0.0 && g < 2.0);
                    }
                }
            }

            #[test]
            fn hyper_forward_is_deterministic(
                s in 0.0f64..1.0,
                dx in 0.0f64..1.0,
                dy in 0.0f64..1.0,
            ) {
                let net = small_net(3);
                prop_assert_eq!(
                    hyper_forward(&net, s, dx, dy),
                    hyper_forward(&net, s, dx, dy)
                );
            }
        }
    }
}
