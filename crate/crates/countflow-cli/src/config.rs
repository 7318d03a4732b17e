//! The JSON run configuration: one document with sections mirroring the
//! pipeline stages. Unknown keys are rejected; every field has a default,
//! and each command writes the fully resolved document it ran with next
//! to its outputs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use countflow::sim::{ConditionalTaskSpec, GammaPoissonMixtureSpec};
use countflow::{CouplingKind, EpsilonConfig};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

fn default_format_version() -> u32 {
    CONFIG_FORMAT_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format_version: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format_version: default_format_version(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            data: None,
            model: None,
            train: None,
            sample: None,
            eval: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSpec {
    pub lo: Vec<u64>,
    pub hi: Vec<u64>,
}

impl Default for SourceSpec {
    fn default() -> Self {
        // Grid covering the default target mixture's displayed range.
        SourceSpec {
            lo: vec![0, 0],
            hi: vec![100, 60],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpec {
    GammaPoissonMixture(GammaPoissonMixtureSpec),
    Conditional(ConditionalTarget),
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::GammaPoissonMixture(GammaPoissonMixtureSpec::default_2d())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionalTarget {
    pub task: ConditionalTaskSpec,
    pub n_per_class: usize,
}

impl Default for ConditionalTarget {
    fn default() -> Self {
        ConditionalTarget {
            task: ConditionalTaskSpec::default_task(),
            n_per_class: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_source: usize,
    pub n_target: usize,
    pub source: SourceSpec,
    pub target: TargetSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            n_source: 2000,
            n_target: 2000,
            source: SourceSpec::default(),
            target: TargetSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_widths: Vec<usize>,
    pub time_embed_frequencies: usize,
    pub condition_embed_width: usize,
    /// When absent, resolved from the training data as
    /// `1 / max(1, max count)` and recorded in the resolved config.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count_scale: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_widths: vec![32, 32, 32],
            time_embed_frequencies: 8,
            condition_embed_width: 8,
            count_scale: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub source_path: PathBuf,
    pub target_path: PathBuf,
    pub batch_size: usize,
    pub n_steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub coupling: CouplingKind,
    pub cfg_dropout: f64,
    /// Solve OT inside matching label groups only (both data files must
    /// carry a label column).
    pub ot_within_groups: bool,
    pub eps: EpsilonConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume_from: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            source_path: PathBuf::from("out/source.csv"),
            target_path: PathBuf::from("out/target.csv"),
            batch_size: 128,
            n_steps: 10_000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            coupling: CouplingKind::Independent,
            cfg_dropout: 0.1,
            ot_within_groups: false,
            eps: EpsilonConfig::default(),
            resume_from: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub checkpoint_path: PathBuf,
    pub n: usize,
    /// Discretization steps K.
    pub n_steps: usize,
    pub guidance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition: Option<usize>,
    pub record_trajectory: bool,
    pub trajectory_stride: usize,
    /// Initial-state distribution for `sample` mode; falls back to the
    /// data section's source spec, then to the built-in default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceSpec>,
    /// Initial states for `transport` mode (all rows are used).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_path: Option<PathBuf>,
    pub eps: EpsilonConfig,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection {
            checkpoint_path: PathBuf::from("out/checkpoint.cfck"),
            n: 2000,
            n_steps: 200,
            guidance: 1.0,
            condition: None,
            record_trajectory: false,
            trajectory_stride: 1,
            source: None,
            source_path: None,
            eps: EpsilonConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub generated_path: PathBuf,
    pub reference_path: PathBuf,
    /// A second reference draw; when given, metrics between the two
    /// references are reported as the noise floor.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_reference_path: Option<PathBuf>,
    pub w2_subsample: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mmd_bandwidth: Option<f64>,
    /// Mean-count threshold defining the active coordinate set for the
    /// conditional metrics.
    pub active_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<HeatmapSection>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            generated_path: PathBuf::from("out/samples.csv"),
            reference_path: PathBuf::from("out/target.csv"),
            noise_reference_path: None,
            w2_subsample: 500,
            mmd_bandwidth: None,
            active_threshold: 0.01,
            heatmap: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapSection {
    pub source_path: PathBuf,
    pub target_path: PathBuf,
    /// 1-based coordinate indices, matching the `x_i` column names.
    pub coordinates: Vec<usize>,
    pub coupling: CouplingKind,
    pub count_lo: u64,
    pub count_hi: u64,
    pub progress: Vec<f64>,
    pub m_per_cell: usize,
    pub ot_batch: usize,
    pub eps_c: f64,
}

impl Default for HeatmapSection {
    fn default() -> Self {
        HeatmapSection {
            source_path: PathBuf::from("out/source.csv"),
            target_path: PathBuf::from("out/target.csv"),
            coordinates: vec![1],
            coupling: CouplingKind::Independent,
            count_lo: 0,
            count_hi: 100,
            progress: (0..=10).map(|i| i as f64 / 10.0).collect(),
            m_per_cell: 20_000,
            ot_batch: 64,
            eps_c: 1e-8,
        }
    }
}
