//! JSON documents accepted by the subcommands. Each embeds the shared
//! envelope directly (a flattened struct would defeat unknown-key
//! rejection), so every document reads top to bottom as one object.

use epigraf_core::renderer::RenderConfig;
use epigraf_core::sampler::ScheduleConfig;
use epigraf_core::trainer::{CameraSetup, GroundTruthScene, TrainConfig};
use serde::Deserialize;
use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Training settings; the envelope seed overrides `train.seed`.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ground_truth: GroundTruthScene,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub workers: Option<usize>,
    pub checkpoint: PathBuf,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub camera: CameraSetup,
    /// Colatitude of the orbit in radians; the default rings the equator.
    #[serde(default = "default_pitch")]
    pub pitch: f64,
    #[serde(default)]
    pub render: RenderConfig,
}

fn default_frames() -> usize {
    8
}

fn default_resolution() -> usize {
    64
}

fn default_pitch() -> f64 {
    FRAC_PI_2
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportDensityConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub workers: Option<usize>,
    pub checkpoint: PathBuf,
    #[serde(default = "default_grid")]
    pub resolution: usize,
}

fn default_grid() -> usize {
    32
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleScalesConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub workers: Option<usize>,
    pub schedule: ScheduleConfig,
    /// Draw count; iterations are spread evenly over the schedule horizon.
    #[serde(default = "default_draws")]
    pub draws: usize,
}

fn default_draws() -> usize {
    1000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleCurvesConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub workers: Option<usize>,
    pub uniform: ScheduleConfig,
    pub beta: ScheduleConfig,
    /// Iteration at which both densities are evaluated.
    #[serde(default)]
    pub at_iter: u64,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_points() -> usize {
    1000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationDemoConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Accepted for uniformity; the demo always sweeps both precisions.
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_freqs")]
    pub freqs: usize,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    /// Channel counts of the profiled layers.
    #[serde(default = "default_channels")]
    pub layer_channels: Vec<usize>,
    #[serde(default = "default_scale_count")]
    pub scale_count: usize,
    #[serde(default = "default_min_scale")]
    pub min_scale: f64,
}

fn default_freqs() -> usize {
    8
}

fn default_latent() -> usize {
    128
}

fn default_channels() -> Vec<usize> {
    vec![16, 32]
}

fn default_scale_count() -> usize {
    16
}

fn default_min_scale() -> f64 {
    0.125
}
