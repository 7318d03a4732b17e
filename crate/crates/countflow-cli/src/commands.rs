//! Command implementations. Every command resolves its configuration,
//! runs, and writes a `resolved_config.<command>.json` copy next to its
//! outputs so runs are reproducible from the output directory alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use countflow::eval::{self, ConditionalReport, MetricReport};
use countflow::net::{NetConfig, RateNetwork};
use countflow::rng::{
    stream_rng, STREAM_GEN_SOURCE, STREAM_GEN_TARGET, STREAM_HEATMAP, STREAM_INIT,
    STREAM_SAMPLE_SOURCE,
};
use countflow::sampler::{self, SampleConfig};
use countflow::sim;
use countflow::train::{self, TrainConfig};
use countflow::{data, CountVector, CouplingKind};

use crate::config::{
    ConditionalTarget, DataSection, EvalSection, HeatmapSection, ModelSection, RunConfig,
    SampleSection, SourceSpec, TargetSpec, TrainSection,
};
use crate::CliError;

type CmdResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn ensure_out_dir(config: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&config.out_dir)
        .map_err(|e| usage(format!("cannot create output directory: {e}")))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {path:?}: {e}")))?;
    Ok(())
}

fn write_resolved_config(config: &RunConfig, command: &str) -> Result<(), CliError> {
    let path = config.out_dir.join(format!("resolved_config.{command}.json"));
    write_json(&path, config)
}

fn read_counts(path: &Path) -> Result<(Vec<CountVector>, Option<Vec<usize>>), CliError> {
    data::read_count_matrix(path).map_err(|e| usage(format!("reading {path:?}: {e}")))
}

/// Generate source and target data files.
pub fn cmd_gen_data(mut config: RunConfig) -> CmdResult {
    let data_section = config.data.get_or_insert_with(DataSection::default).clone();
    ensure_out_dir(&config)?;
    let seed = config.seed;

    let (target, labels): (Vec<CountVector>, Option<Vec<usize>>) = match &data_section.target {
        TargetSpec::GammaPoissonMixture(spec) => {
            let mut rng = stream_rng(seed, STREAM_GEN_TARGET);
            let samples = sim::sample_gamma_poisson_mixture(spec, data_section.n_target, &mut rng)
                .map_err(|e| usage(e.to_string()))?;
            (samples, None)
        }
        TargetSpec::Conditional(ConditionalTarget { task, n_per_class }) => {
            let mut rng = stream_rng(seed, STREAM_GEN_TARGET);
            let (samples, labels) = sim::make_conditional_task(task, *n_per_class, &mut rng)
                .map_err(|e| usage(e.to_string()))?;
            (samples, Some(labels))
        }
    };
    let dim = target.first().map_or(data_section.source.lo.len(), |s| s.dim());

    let mut rng = stream_rng(seed, STREAM_GEN_SOURCE);
    let source = sim::sample_discrete_uniform_source(
        data_section.n_source,
        &data_section.source.lo,
        &data_section.source.hi,
        &mut rng,
    )
    .map_err(|e| usage(e.to_string()))?;
    if source.first().map(|s| s.dim()) != Some(dim) && !target.is_empty() && !source.is_empty() {
        return Err(usage(format!(
            "source grid dimension {} does not match target dimension {dim}",
            data_section.source.lo.len()
        )));
    }

    data::write_count_matrix(config.out_dir.join("source.csv"), dim, &source, None)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    data::write_count_matrix(
        config.out_dir.join("target.csv"),
        dim,
        &target,
        labels.as_deref(),
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_resolved_config(&config, "gen-data")?;
    eprintln!(
        "gen-data: wrote {} source and {} target rows to {:?}",
        source.len(),
        target.len(),
        config.out_dir
    );
    Ok(())
}

/// Train a rate network on a source/target pair.
pub fn cmd_train(mut config: RunConfig) -> CmdResult {
    let train_section = config.train.get_or_insert_with(TrainSection::default).clone();
    let mut model_section = config.model.get_or_insert_with(ModelSection::default).clone();
    ensure_out_dir(&config)?;

    let (source, source_labels) = read_counts(&train_section.source_path)?;
    let (target, target_labels) = read_counts(&train_section.target_path)?;
    if source.is_empty() || target.is_empty() {
        return Err(usage("training data files must be nonempty"));
    }
    let dim = source[0].dim();
    if target[0].dim() != dim {
        return Err(usage(format!(
            "source dimension {dim} does not match target dimension {}",
            target[0].dim()
        )));
    }

    let n_conditions = target_labels
        .as_ref()
        .and_then(|l| l.iter().max().map(|&m| m + 1))
        .unwrap_or(0);

    // Resolve the count input scale from the data unless pinned.
    let count_scale = model_section.count_scale.unwrap_or_else(|| {
        let max = source
            .iter()
            .chain(target.iter())
            .flat_map(|s| s.iter().copied())
            .max()
            .unwrap_or(1)
            .max(1);
        1.0 / max as f64
    });
    model_section.count_scale = Some(count_scale);
    config.model = Some(model_section.clone());

    let mut net = match &train_section.resume_from {
        Some(path) => {
            let net = RateNetwork::load_checkpoint(path)
                .map_err(|e| usage(format!("loading checkpoint {path:?}: {e}")))?;
            if net.config().dim != dim {
                return Err(usage(format!(
                    "checkpoint dimension {} does not match data dimension {dim}",
                    net.config().dim
                )));
            }
            net
        }
        None => {
            let net_config = NetConfig {
                dim,
                hidden_widths: model_section.hidden_widths.clone(),
                n_conditions,
                condition_embed_width: if n_conditions > 0 {
                    model_section.condition_embed_width
                } else {
                    0
                },
                time_embed_frequencies: model_section.time_embed_frequencies,
                count_scale,
            };
            RateNetwork::new(net_config, &mut stream_rng(config.seed, STREAM_INIT))
                .map_err(|e| usage(e.to_string()))?
        }
    };

    let train_config = TrainConfig {
        batch_size: train_section.batch_size,
        n_steps: train_section.n_steps,
        lr: train_section.lr,
        beta1: train_section.beta1,
        beta2: train_section.beta2,
        adam_eps: train_section.adam_eps,
        coupling_kind: train_section.coupling,
        cfg_dropout: train_section.cfg_dropout,
        ot_within_groups: train_section.ot_within_groups,
        eps: train_section.eps,
        seed: config.seed,
    };
    let trace = train::train(
        &mut net,
        &source,
        source_labels.as_deref(),
        &target,
        target_labels.as_deref(),
        &train_config,
    )
    .map_err(CliError::from_core)?;

    net.save_checkpoint(config.out_dir.join("checkpoint.cfck"))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    data::write_loss_trace(config.out_dir.join("loss.csv"), &trace.losses)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    data::write_coupling_costs(config.out_dir.join("coupling_cost.csv"), &trace.coupling_costs)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_resolved_config(&config, "train")?;
    let last = trace.losses.last().copied().unwrap_or(f64::NAN);
    eprintln!(
        "train: {} steps on {} params, final loss {last:.6}",
        trace.losses.len(),
        net.count_params()
    );
    Ok(())
}

fn resolve_sample_source(config: &RunConfig, section: &SampleSection) -> SourceSpec {
    section
        .source
        .clone()
        .or_else(|| config.data.as_ref().map(|d| d.source.clone()))
        .unwrap_or_default()
}

/// Generate samples from a trained model; `transport` seeds the initial
/// states from a file instead of the source spec.
pub fn cmd_sample(
    mut config: RunConfig,
    transport: bool,
    trajectories_flag: bool,
    guidance_flag: Option<f64>,
) -> CmdResult {
    let mut section = config.sample.get_or_insert_with(SampleSection::default).clone();
    if let Some(w) = guidance_flag {
        section.guidance = w;
    }
    if trajectories_flag {
        section.record_trajectory = true;
    }
    config.sample = Some(section.clone());
    ensure_out_dir(&config)?;

    let net = RateNetwork::load_checkpoint(&section.checkpoint_path)
        .map_err(|e| usage(format!("loading checkpoint {:?}: {e}", section.checkpoint_path)))?;
    if guidance_flag.is_some() && net.config().n_conditions == 0 {
        return Err(usage(
            "guidance requested but the model was trained without condition support",
        ));
    }
    if let Some(c) = section.condition {
        if c >= net.config().n_conditions {
            return Err(usage(format!(
                "condition label {c} unknown to the model ({} labels)",
                net.config().n_conditions
            )));
        }
    }

    let x0s: Vec<CountVector> = if transport {
        let path = section
            .source_path
            .as_ref()
            .ok_or_else(|| usage("transport mode needs sample.source_path"))?;
        let (rows, _) = read_counts(path)?;
        rows
    } else {
        let spec = resolve_sample_source(&config, &section);
        sim::sample_discrete_uniform_source(
            section.n,
            &spec.lo,
            &spec.hi,
            &mut stream_rng(config.seed, STREAM_SAMPLE_SOURCE),
        )
        .map_err(|e| usage(e.to_string()))?
    };
    if x0s.iter().any(|x| x.dim() != net.config().dim) {
        return Err(usage(format!(
            "initial states must have the model dimension {}",
            net.config().dim
        )));
    }

    let sample_config = SampleConfig {
        n_steps: section.n_steps,
        eps: section.eps,
        guidance_scale: section.guidance,
        record_trajectory: section.record_trajectory,
        trajectory_stride: section.trajectory_stride,
        condition: section.condition,
    };
    let (finals, trajectories) = sampler::simulate_batch(&net, &x0s, &sample_config, config.seed)
        .map_err(CliError::from_core)?;

    let dim = net.config().dim;
    let labels: Option<Vec<usize>> = section.condition.map(|c| vec![c; finals.len()]);
    data::write_count_matrix(config.out_dir.join("samples.csv"), dim, &finals, labels.as_deref())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(trajectories) = trajectories {
        data::write_trajectories(config.out_dir.join("trajectories.csv"), &trajectories)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let command = if transport { "transport" } else { "sample" };
    write_resolved_config(&config, command)?;
    eprintln!("{command}: wrote {} samples to {:?}", finals.len(), config.out_dir);
    Ok(())
}

#[derive(Serialize)]
struct MetricsDocument {
    format_version: u32,
    #[serde(flatten)]
    report: MetricReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_floor: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    conditional: Option<ConditionalReport>,
}

fn bin_by_label(
    samples: &[CountVector],
    labels: &[usize],
    bins: &[usize],
) -> Vec<Vec<CountVector>> {
    bins.iter()
        .map(|&bin| {
            samples
                .iter()
                .zip(labels.iter())
                .filter(|(_, &l)| l == bin)
                .map(|(s, _)| s.clone())
                .collect()
        })
        .collect()
}

/// Compare a generated sample file against a reference file.
pub fn cmd_eval(mut config: RunConfig) -> CmdResult {
    let section = config.eval.get_or_insert_with(EvalSection::default).clone();
    ensure_out_dir(&config)?;

    let (generated, gen_labels) = read_counts(&section.generated_path)?;
    let (reference, ref_labels) = read_counts(&section.reference_path)?;

    let report = eval::metric_report(
        &generated,
        &reference,
        section.w2_subsample,
        section.mmd_bandwidth,
        config.seed,
    )
    .map_err(CliError::from_core)?;

    let noise_floor = match &section.noise_reference_path {
        Some(path) => {
            let (noise_ref, _) = read_counts(path)?;
            Some(
                eval::metric_report(
                    &reference,
                    &noise_ref,
                    section.w2_subsample,
                    section.mmd_bandwidth,
                    config.seed,
                )
                .map_err(CliError::from_core)?,
            )
        }
        None => None,
    };

    let conditional = match (&gen_labels, &ref_labels) {
        (Some(gen_labels), Some(ref_labels)) => {
            let mut bins: Vec<usize> = ref_labels.clone();
            bins.sort_unstable();
            bins.dedup();
            let true_bins = bin_by_label(&reference, ref_labels, &bins);
            let gen_bins = bin_by_label(&generated, gen_labels, &bins);
            let active = eval::active_set(&reference, section.active_threshold);
            let report = eval::conditional_metrics(&true_bins, &gen_bins, &active)
                .map_err(CliError::from_core)?;
            if !report.excluded_bins.is_empty() {
                eprintln!(
                    "eval: warning: bins {:?} had too few generated samples for variance terms",
                    report.excluded_bins
                );
            }
            Some(report)
        }
        _ => None,
    };

    let document = MetricsDocument {
        format_version: data::FORMAT_VERSION,
        report,
        noise_floor,
        conditional,
    };
    write_json(&config.out_dir.join("metrics.json"), &document)?;
    write_resolved_config(&config, "eval")?;
    eprintln!(
        "eval: w2 {:.4}, mmd2_rbf {:.6} -> {:?}",
        document.report.w2,
        document.report.mmd2_rbf,
        config.out_dir.join("metrics.json")
    );
    Ok(())
}

#[derive(Serialize)]
struct HeatmapSummary {
    format_version: u32,
    coupling: CouplingKind,
    count_lo: u64,
    count_hi: u64,
    progress: Vec<f64>,
    per_coordinate: Vec<HeatmapColumnSums>,
}

#[derive(Serialize)]
struct HeatmapColumnSums {
    coordinate: usize,
    column_sums: Vec<f64>,
    truncated_mass: Vec<f64>,
}

/// Export bridge-marginal heatmaps for the requested coordinates.
pub fn cmd_bridge_viz(mut config: RunConfig) -> CmdResult {
    let eval_section = config.eval.get_or_insert_with(EvalSection::default);
    let section: HeatmapSection = eval_section.heatmap.get_or_insert_with(HeatmapSection::default).clone();
    ensure_out_dir(&config)?;

    let (source, _) = read_counts(&section.source_path)?;
    let (target, _) = read_counts(&section.target_path)?;
    if source.is_empty() || target.is_empty() {
        return Err(usage("heatmap inputs must be nonempty"));
    }
    let dim = source[0].dim();

    let mut rng = stream_rng(config.seed, STREAM_HEATMAP);
    let mut per_coordinate = Vec::new();
    for &coord in &section.coordinates {
        if coord == 0 || coord > dim {
            return Err(usage(format!(
                "coordinate {coord} out of range (columns are x_1..x_{dim})"
            )));
        }
        let heatmap = eval::bridge_heatmap(
            &source,
            &target,
            section.coupling,
            coord - 1,
            (section.count_lo, section.count_hi),
            &section.progress,
            section.m_per_cell,
            section.ot_batch,
            section.eps_c,
            &mut rng,
        )
        .map_err(CliError::from_core)?;
        let path = config.out_dir.join(format!("heatmap_x{coord}.csv"));
        data::write_heatmap(&path, &heatmap).map_err(|e| CliError::Runtime(e.to_string()))?;
        per_coordinate.push(HeatmapColumnSums {
            coordinate: coord,
            column_sums: heatmap.column_sums,
            truncated_mass: heatmap.truncated_mass,
        });
    }
    let summary = HeatmapSummary {
        format_version: data::FORMAT_VERSION,
        coupling: section.coupling,
        count_lo: section.count_lo,
        count_hi: section.count_hi,
        progress: section.progress.clone(),
        per_coordinate,
    };
    write_json(&config.out_dir.join("heatmap_summary.json"), &summary)?;
    write_resolved_config(&config, "bridge-viz")?;
    eprintln!("bridge-viz: wrote {} heatmap(s) to {:?}", section.coordinates.len(), config.out_dir);
    Ok(())
}

/// Print the fully defaulted configuration for a command and exit.
pub fn print_config(config: &RunConfig, command: &str) -> CmdResult {
    let mut resolved = config.clone();
    match command {
        "gen-data" => {
            resolved.data.get_or_insert_with(DataSection::default);
        }
        "train" => {
            resolved.train.get_or_insert_with(TrainSection::default);
            resolved.model.get_or_insert_with(ModelSection::default);
        }
        "sample" | "transport" => {
            resolved.sample.get_or_insert_with(SampleSection::default);
        }
        "eval" => {
            resolved.eval.get_or_insert_with(EvalSection::default);
        }
        "bridge-viz" => {
            resolved
                .eval
                .get_or_insert_with(EvalSection::default)
                .heatmap
                .get_or_insert_with(HeatmapSection::default);
        }
        _ => {}
    }
    let text = serde_json::to_string_pretty(&resolved)
        .map_err(|e| CliError::Runtime(format!("serialization failed: {e}")))?;
    println!("{text}");
    Ok(())
}

/// Load and strictly validate a config file.
pub fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {path:?}: {e}")))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("config {path:?}: {e}")))
        }
    }
}
