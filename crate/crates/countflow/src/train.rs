//! Rate-matching training.
//!
//! The pointwise loss `l(u, v) = v - u log v` equals the generalized KL
//! divergence `D_GKL(u, v) = u log(u/v) - u + v` up to terms that depend
//! only on the target `u`, so both share all gradients in the model rate
//! `v`; matching the closed-form bridge rates in this loss minimizes the
//! path-space KL between the bridge and the learned process. Training
//! draws a fresh minibatch every step: endpoints are paired by the chosen
//! coupling, a time is drawn uniformly on `(0, 1 - eps_t)`, a bridge
//! state is sampled, and the closed-form rates at that state become the
//! regression targets. Conditions are dropped to the null label with
//! probability `cfg_dropout` so one network learns both conditional and
//! unconditional rates.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::bridge;
use crate::coupling;
use crate::error::{Error, Result};
use crate::net::RateNetwork;
use crate::rng::{stream_rng, STREAM_TRAIN};
use crate::types::{BridgeSample, CountVector, CouplingKind, EndpointBatch, EpsilonConfig};

/// Pointwise rate-matching loss `v - u log(v + eps_l)`.
pub fn pointwise_loss(u: f64, v: f64, eps_l: f64) -> f64 {
    if u == 0.0 {
        v
    } else {
        v - u * (v + eps_l).ln()
    }
}

/// Generalized KL divergence `u log(u/v) - u + v`, with `u log u := 0` at
/// `u = 0`. Nonnegative, zero exactly at `u = v`.
pub fn gkl(u: f64, v: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::invalid(format!("gkl requires v > 0, got {v}")));
    }
    if u < 0.0 {
        return Err(Error::invalid(format!("gkl requires u >= 0, got {u}")));
    }
    if u == 0.0 {
        Ok(v)
    } else {
        Ok(u * (u / v).ln() - u + v)
    }
}

/// Training settings. Times are drawn uniformly on `(0, 1 - eps_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub coupling_kind: CouplingKind,
    /// Probability of replacing a pair's condition with the null label.
    pub cfg_dropout: f64,
    /// Restrict OT coupling to within matching label groups.
    pub ot_within_groups: bool,
    pub eps: EpsilonConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            n_steps: 10_000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            coupling_kind: CouplingKind::Independent,
            cfg_dropout: 0.1,
            ot_within_groups: false,
            eps: EpsilonConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.cfg_dropout) {
            return Err(Error::invalid(format!(
                "cfg_dropout must be in [0, 1], got {}",
                self.cfg_dropout
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        self.eps.validate()
    }
}

/// Turn coupled endpoint pairs into bridge training samples: per pair,
/// draw `t ~ Unif(0, 1 - eps_t)`, sample the bridge state, and attach the
/// closed-form conditional rates as targets. Conditions are dropped to
/// the null label with probability `cfg_dropout`.
pub fn bridge_samples_from_pairs(
    pairs: &EndpointBatch,
    cfg_dropout: f64,
    eps: &EpsilonConfig,
    rng: &mut impl Rng,
) -> Result<Vec<BridgeSample>> {
    let mut out = Vec::with_capacity(pairs.len());
    for pair in &pairs.pairs {
        let t = rng.random::<f64>() * (1.0 - eps.eps_t);
        let x = bridge::sample_bridge(&pair.x0, &pair.x1, t, rng)?;
        let rates = bridge::conditional_rates(&x, &pair.x1, t, eps)?;
        let condition = if pair.condition.is_some() && rng.random::<f64>() < cfg_dropout {
            None
        } else {
            pair.condition
        };
        out.push(BridgeSample {
            t,
            x,
            target_birth: rates.birth,
            target_death: rates.death,
            condition,
        });
    }
    Ok(out)
}

/// Couple two equal-size minibatches and draw one bridge sample per pair.
pub fn make_training_batch(
    source: &[CountVector],
    target: &[CountVector],
    target_labels: Option<&[usize]>,
    coupling_kind: CouplingKind,
    cfg_dropout: f64,
    eps: &EpsilonConfig,
    rng: &mut impl Rng,
) -> Result<Vec<BridgeSample>> {
    let pairs = match coupling_kind {
        CouplingKind::Independent => coupling::independent_pairs(source, target, target_labels, rng)?,
        CouplingKind::Ot => coupling::ot_pairs(source, target, target_labels, eps.eps_c)?,
    };
    bridge_samples_from_pairs(&pairs, cfg_dropout, eps, rng)
}

fn draw_indices(n: usize, batch: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, n, batch).into_vec()
}

/// Per-step training records: the loss and the mean endpoint-pair cost
/// under the realized coupling (for OT coupling this is the mean
/// assignment cost).
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
    pub coupling_costs: Vec<f64>,
}

fn mean_pair_cost(pairs: &EndpointBatch, eps_c: f64) -> Result<f64> {
    let mut total = 0.0;
    for pair in &pairs.pairs {
        total += coupling::symmetric_poisson_cost(&pair.x0, &pair.x1, eps_c)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}

fn batch_stats(batch: &[BridgeSample]) -> String {
    let mut max_rate = 0.0f64;
    let mut mean_rate = 0.0f64;
    let mut n = 0usize;
    for s in batch {
        for &r in s.target_birth.iter().chain(s.target_death.iter()) {
            max_rate = max_rate.max(r);
            mean_rate += r;
            n += 1;
        }
    }
    format!(
        "batch of {} samples, mean target rate {:.4}, max target rate {:.4}",
        batch.len(),
        mean_rate / n.max(1) as f64,
        max_rate
    )
}

/// Run `config.n_steps` optimizer steps over freshly drawn minibatches
/// and return the per-step traces. Fully reproducible for a given seed.
/// Aborts with diagnostics if the loss or any weight becomes non-finite.
pub fn train(
    net: &mut RateNetwork,
    source: &[CountVector],
    source_labels: Option<&[usize]>,
    target: &[CountVector],
    target_labels: Option<&[usize]>,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    config.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("training data must be nonempty"));
    }
    let d = net.config().dim;
    if source.iter().chain(target.iter()).any(|x| x.dim() != d) {
        return Err(Error::dim(format!("training data dimension must equal model dim {d}")));
    }
    if let Some(labels) = target_labels {
        if labels.len() != target.len() {
            return Err(Error::dim("target labels must align with target rows".to_string()));
        }
        let n_cond = net.config().n_conditions;
        if let Some(&max) = labels.iter().max() {
            if max >= n_cond {
                return Err(Error::invalid(format!(
                    "label {max} out of range for model with {n_cond} conditions"
                )));
            }
        }
    } else if net.config().n_conditions > 0 {
        return Err(Error::invalid("conditional model requires labeled target data"));
    }
    if config.batch_size > source.len() || config.batch_size > target.len() {
        return Err(Error::invalid(format!(
            "batch_size {} exceeds dataset size ({} source, {} target)",
            config.batch_size,
            source.len(),
            target.len()
        )));
    }
    if config.ot_within_groups {
        if config.coupling_kind != CouplingKind::Ot {
            return Err(Error::invalid("ot_within_groups requires ot coupling"));
        }
        if source_labels.is_none() || target_labels.is_none() {
            return Err(Error::invalid("ot_within_groups requires labels on both datasets"));
        }
    }

    // Pre-index source rows by group for the stratified grouped draw.
    let source_by_group: Option<Vec<Vec<usize>>> = if config.ot_within_groups {
        let labels = source_labels.unwrap();
        if labels.len() != source.len() {
            return Err(Error::dim("source labels must align with source rows".to_string()));
        }
        let n_groups = net.config().n_conditions.max(labels.iter().max().map_or(0, |&m| m + 1));
        let mut by_group = vec![Vec::new(); n_groups];
        for (i, &g) in labels.iter().enumerate() {
            by_group[g].push(i);
        }
        Some(by_group)
    } else {
        None
    };

    let mut rng = stream_rng(config.seed, STREAM_TRAIN);
    let mut trace = TrainTrace::default();
    for step in 0..config.n_steps {
        let tgt_idx = draw_indices(target.len(), config.batch_size, &mut rng);
        let tgt_batch: Vec<CountVector> = tgt_idx.iter().map(|&i| target[i].clone()).collect();
        let tgt_label_batch: Option<Vec<usize>> =
            target_labels.map(|l| tgt_idx.iter().map(|&i| l[i]).collect());

        let pairs = if let Some(by_group) = &source_by_group {
            // Match the drawn target group counts on the source side, then
            // solve OT within each group.
            let tgt_groups = tgt_label_batch.as_ref().unwrap();
            let mut src_batch = Vec::with_capacity(config.batch_size);
            let mut src_groups = Vec::with_capacity(config.batch_size);
            let mut counts = vec![0usize; by_group.len()];
            for &g in tgt_groups {
                counts[g] += 1;
            }
            for (g, &c) in counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let pool = &by_group[g];
                if pool.len() < c {
                    return Err(Error::invalid(format!(
                        "group {g} has only {} source rows, needed {c}",
                        pool.len()
                    )));
                }
                for idx in draw_indices(pool.len(), c, &mut rng) {
                    src_batch.push(source[pool[idx]].clone());
                    src_groups.push(g);
                }
            }
            coupling::ot_pairs_grouped(
                &src_batch,
                &src_groups,
                &tgt_batch,
                tgt_groups,
                tgt_label_batch.as_deref(),
                config.eps.eps_c,
            )?
        } else {
            let src_idx = draw_indices(source.len(), config.batch_size, &mut rng);
            let src_batch: Vec<CountVector> = src_idx.iter().map(|&i| source[i].clone()).collect();
            match config.coupling_kind {
                CouplingKind::Independent => {
                    coupling::independent_pairs(&src_batch, &tgt_batch, tgt_label_batch.as_deref(), &mut rng)?
                }
                CouplingKind::Ot => {
                    coupling::ot_pairs(&src_batch, &tgt_batch, tgt_label_batch.as_deref(), config.eps.eps_c)?
                }
            }
        };
        trace.coupling_costs.push(mean_pair_cost(&pairs, config.eps.eps_c)?);
        let batch = bridge_samples_from_pairs(&pairs, config.cfg_dropout, &config.eps, &mut rng)?;

        let (loss, grad) = net.loss_and_grad(&batch, config.eps.eps_l)?;
        if !loss.is_finite() {
            return Err(Error::TrainingAborted {
                step,
                detail: format!("non-finite loss {loss}; {}", batch_stats(&batch)),
            });
        }
        net.adam_step(&grad, config.lr, (config.beta1, config.beta2), config.adam_eps)?;
        if !net.params_finite() {
            return Err(Error::TrainingAborted {
                step,
                detail: format!("non-finite weight after update; {}", batch_stats(&batch)),
            });
        }
        trace.losses.push(loss);
    }
    Ok(trace)
}
