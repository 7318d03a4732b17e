//! Forward simulation of a birth-death jump process with a first-order
//! local-jump discretization, with optional classifier-free guidance.
//!
//! Time is partitioned into `K` steps of size `delta`. Per step and per
//! coordinate, with total rate `r = birth + death`, one of three outcomes
//! is sampled:
//!
//! ```text
//! p_stay  = exp(-r * delta)
//! p_birth = (1 - exp(-r * delta)) * birth / (r + eps_r)
//! p_death = (1 - exp(-r * delta)) * death / (r + eps_r)
//! ```
//!
//! so each coordinate moves by -1, 0 or +1 per step. The tiny probability
//! deficit introduced by `eps_r` is assigned to the stay outcome.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, SAMPLE_STREAM_BASE};
use crate::types::{CountVector, EpsilonConfig, RateField, Trajectory};

/// Anything that maps (state, time, optional condition) to a rate field.
///
/// `condition = None` is the null label; conditional models return their
/// learned unconditional rates for it.
pub trait RateModel {
    fn dim(&self) -> usize;
    fn rates(&self, x: &CountVector, t: f64, condition: Option<usize>) -> Result<RateField>;
}

/// Settings for one forward simulation run from `t = eps_t` to
/// `t = 1 - eps_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    /// Number of discretization steps K.
    pub n_steps: usize,
    pub eps: EpsilonConfig,
    /// Guidance scale w: 0 recovers unconditional rates, 1 the plain
    /// conditional model, larger values extrapolate.
    pub guidance_scale: f64,
    pub record_trajectory: bool,
    /// Record every `trajectory_stride`-th step (the initial and final
    /// states are always kept).
    pub trajectory_stride: usize,
    pub condition: Option<usize>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            n_steps: 200,
            eps: EpsilonConfig::default(),
            guidance_scale: 1.0,
            record_trajectory: false,
            trajectory_stride: 1,
            condition: None,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be >= 1"));
        }
        if !(self.guidance_scale >= 0.0) {
            return Err(Error::invalid(format!(
                "guidance_scale must be >= 0, got {}",
                self.guidance_scale
            )));
        }
        if self.trajectory_stride == 0 {
            return Err(Error::invalid("trajectory_stride must be >= 1"));
        }
        self.eps.validate()
    }
}

/// Outcome probabilities for one coordinate over one step of size `delta`.
///
/// Returns `(p_stay, p_birth, p_death)`; the three values are each in
/// [0, 1] and sum to at most 1, with the `eps_r`-induced deficit going to
/// the stay outcome.
pub fn step_probabilities(birth: f64, death: f64, delta: f64, eps_r: f64) -> (f64, f64, f64) {
    let r = birth + death;
    let p_stay = (-r * delta).exp();
    let jump = 1.0 - p_stay;
    let p_birth = jump * birth / (r + eps_r);
    let p_death = jump * death / (r + eps_r);
    (p_stay, p_birth, p_death)
}

/// Classifier-free guidance combination of two rate fields:
/// `uncond + w * (cond - uncond)`, clamped at zero so the result is a
/// valid rate field even under extrapolation (w > 1).
pub fn cfg_rates(uncond: &RateField, cond: &RateField, w: f64) -> RateField {
    debug_assert_eq!(uncond.dim(), cond.dim());
    let combine = |u: &[f64], c: &[f64]| -> Vec<f64> {
        u.iter()
            .zip(c.iter())
            .map(|(&u, &c)| (u + w * (c - u)).max(0.0))
            .collect()
    };
    RateField {
        birth: combine(&uncond.birth, &cond.birth),
        death_coeff: combine(&uncond.death_coeff, &cond.death_coeff),
        death: combine(&uncond.death, &cond.death),
    }
}

fn guided_rates<M: RateModel + ?Sized>(
    model: &M,
    x: &CountVector,
    t: f64,
    condition: Option<usize>,
    w: f64,
) -> Result<RateField> {
    if w == 1.0 {
        model.rates(x, t, condition)
    } else if w == 0.0 {
        model.rates(x, t, None)
    } else {
        let condition = condition.ok_or_else(|| {
            Error::invalid("guidance scale != 1 requires a condition label")
        })?;
        let uncond = model.rates(x, t, None)?;
        let cond = model.rates(x, t, Some(condition))?;
        Ok(cfg_rates(&uncond, &cond, w))
    }
}

/// Shared stepping core: simulate the jump chain from `t_start` to `t_end`
/// in `n_steps` uniform steps. Used both by the public sampler (window
/// `[eps_t, 1 - eps_t]`) and by the conditional-bridge oracle (window
/// `[0, 1 - eps_t]`).
pub(crate) fn run_jump_chain<M: RateModel + ?Sized>(
    model: &M,
    x0: &CountVector,
    t_start: f64,
    t_end: f64,
    n_steps: usize,
    eps_r: f64,
    condition: Option<usize>,
    guidance_scale: f64,
    record_stride: Option<usize>,
    rng: &mut impl Rng,
) -> Result<(CountVector, Option<Trajectory>)> {
    if x0.dim() != model.dim() {
        return Err(Error::dim(format!(
            "initial state has dimension {}, model expects {}",
            x0.dim(),
            model.dim()
        )));
    }
    let d = x0.dim();
    let delta = (t_end - t_start) / n_steps as f64;
    let mut x = x0.clone();
    let mut trajectory = record_stride.map(|_| Trajectory {
        times: vec![t_start],
        states: vec![x.clone()],
    });

    for k in 0..n_steps {
        let t = t_start + k as f64 * delta;
        let field = guided_rates(model, &x, t, condition, guidance_scale)?;
        let values = x.values_mut();
        for i in 0..d {
            let (_, p_birth, p_death) = step_probabilities(field.birth[i], field.death[i], delta, eps_r);
            let u: f64 = rng.random();
            if u < p_birth {
                values[i] += 1;
            } else if u < p_birth + p_death {
                values[i] = values[i].saturating_sub(1);
            }
        }
        if let (Some(traj), Some(stride)) = (trajectory.as_mut(), record_stride) {
            let step_done = k + 1;
            if step_done % stride == 0 || step_done == n_steps {
                traj.times.push(t_start + step_done as f64 * delta);
                traj.states.push(x.clone());
            }
        }
    }
    Ok((x, trajectory))
}

/// Simulate one trajectory of the learned process from `x0`.
///
/// Runs from `t = eps_t` to `t = 1 - eps_t` with step size
/// `(1 - 2 eps_t) / K`. Returns the terminal state, plus the recorded
/// trajectory when requested.
pub fn simulate<M: RateModel + ?Sized>(
    model: &M,
    x0: &CountVector,
    config: &SampleConfig,
    rng: &mut impl Rng,
) -> Result<(CountVector, Option<Trajectory>)> {
    config.validate()?;
    let eps_t = config.eps.eps_t;
    run_jump_chain(
        model,
        x0,
        eps_t,
        1.0 - eps_t,
        config.n_steps,
        config.eps.eps_r,
        config.condition,
        config.guidance_scale,
        config.record_trajectory.then_some(config.trajectory_stride),
        rng,
    )
}

/// Simulate a batch of independent trajectories in parallel, one RNG
/// stream per trajectory, so results are reproducible for a given seed
/// regardless of thread count.
pub fn simulate_batch<M: RateModel + Sync>(
    model: &M,
    x0s: &[CountVector],
    config: &SampleConfig,
    seed: u64,
) -> Result<(Vec<CountVector>, Option<Vec<Trajectory>>)> {
    config.validate()?;
    let results: Result<Vec<_>> = x0s
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let mut rng = stream_rng(seed, SAMPLE_STREAM_BASE + i as u64);
            simulate(model, x0, config, &mut rng)
        })
        .collect();
    let results = results?;
    let mut finals = Vec::with_capacity(results.len());
    let mut trajectories = config.record_trajectory.then(Vec::new);
    for (state, traj) in results {
        finals.push(state);
        if let (Some(all), Some(traj)) = (trajectories.as_mut(), traj) {
            all.push(traj);
        }
    }
    Ok((finals, trajectories))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    /// A model with all rates zero.
    struct Silent(usize);

    impl RateModel for Silent {
        fn dim(&self) -> usize {
            self.0
        }
        fn rates(&self, x: &CountVector, _t: f64, _c: Option<usize>) -> Result<RateField> {
            Ok(RateField {
                birth: vec![0.0; x.dim()],
                death_coeff: vec![0.0; x.dim()],
                death: vec![0.0; x.dim()],
            })
        }
    }

    /// Constant birth/death rates, for locality checks.
    struct Churn(usize);

    impl RateModel for Churn {
        fn dim(&self) -> usize {
            self.0
        }
        fn rates(&self, x: &CountVector, _t: f64, _c: Option<usize>) -> Result<RateField> {
            let death_coeff = vec![1.5; x.dim()];
            let death: Vec<f64> = x.iter().map(|&v| v as f64 * 1.5).collect();
            Ok(RateField {
                birth: vec![3.0; x.dim()],
                death_coeff,
                death,
            })
        }
    }

    #[test]
    fn step_probabilities_zero_rate() {
        let (stay, birth, death) = step_probabilities(0.0, 0.0, 0.1, 1e-12);
        assert_eq!((stay, birth, death), (1.0, 0.0, 0.0));
    }

    #[test]
    fn step_probabilities_birth_only() {
        let (stay, birth, death) = step_probabilities(2.0, 0.0, 0.1, 1e-12);
        assert!((stay - (-0.2f64).exp()).abs() < 1e-15);
        assert!((birth - (1.0 - (-0.2f64).exp())).abs() < 1e-9);
        assert_eq!(death, 0.0);
    }

    #[test]
    fn step_probabilities_small_delta_limit() {
        // p_birth / delta -> birth and p_death / delta -> death as delta -> 0.
        let delta = 1e-4;
        for &(b, d) in &[(3.0, 1.0), (0.5, 0.25), (10.0, 10.0)] {
            let (_, pb, pd) = step_probabilities(b, d, delta, 1e-12);
            assert!((pb / delta - b).abs() / b < 0.01, "birth rate limit violated");
            assert!((pd / delta - d).abs() / d < 0.01, "death rate limit violated");
        }
        let (_, pb, pd) = step_probabilities(3.0, 1.0, delta, 1e-12);
        assert!((pb / pd - 3.0).abs() < 1e-6);
    }

    #[test]
    fn step_probabilities_sum_at_most_one() {
        let mut rng = stream_rng(7, 0);
        for _ in 0..1000 {
            let b: f64 = rng.random::<f64>() * 100.0;
            let d: f64 = rng.random::<f64>() * 100.0;
            let delta: f64 = rng.random::<f64>() * 0.5 + 1e-6;
            let (ps, pb, pd) = step_probabilities(b, d, delta, 1e-12);
            for p in [ps, pb, pd] {
                assert!((0.0..=1.0).contains(&p));
            }
            assert!(ps + pb + pd <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn cfg_endpoints_are_exact() {
        let uncond = RateField {
            birth: vec![2.0, 0.5],
            death_coeff: vec![0.1, 0.2],
            death: vec![1.0, 0.4],
        };
        let cond = RateField {
            birth: vec![1.0, 3.0],
            death_coeff: vec![0.3, 0.0],
            death: vec![0.5, 0.0],
        };
        assert_eq!(cfg_rates(&uncond, &cond, 0.0), uncond);
        assert_eq!(cfg_rates(&uncond, &cond, 1.0), cond);
    }

    #[test]
    fn cfg_extrapolation_clamps_at_zero() {
        let uncond = RateField {
            birth: vec![2.0],
            death_coeff: vec![0.0],
            death: vec![0.0],
        };
        let cond = RateField {
            birth: vec![1.0],
            death_coeff: vec![0.0],
            death: vec![0.0],
        };
        // raw value 2 + 3 (1 - 2) = -1, clamped to 0
        let out = cfg_rates(&uncond, &cond, 3.0);
        assert_eq!(out.birth, vec![0.0]);
    }

    #[test]
    fn silent_model_never_moves() {
        let model = Silent(3);
        let x0 = CountVector::new(vec![4, 0, 9]);
        let config = SampleConfig { n_steps: 50, ..Default::default() };
        let mut rng = stream_rng(1, 0);
        let (x1, _) = simulate(&model, &x0, &config, &mut rng).unwrap();
        assert_eq!(x1, x0);
    }

    #[test]
    fn steps_are_local_and_counts_stay_valid() {
        let model = Churn(2);
        let x0 = CountVector::new(vec![1, 0]);
        let config = SampleConfig {
            n_steps: 300,
            record_trajectory: true,
            ..Default::default()
        };
        let mut rng = stream_rng(2, 0);
        let (_, traj) = simulate(&model, &x0, &config, &mut rng).unwrap();
        let traj = traj.unwrap();
        for w in traj.states.windows(2) {
            for i in 0..2 {
                assert!(w[0].get(i).abs_diff(w[1].get(i)) <= 1);
            }
        }
    }

    #[test]
    fn guidance_without_condition_is_rejected() {
        let model = Silent(1);
        let x0 = CountVector::new(vec![1]);
        let config = SampleConfig {
            guidance_scale: 2.0,
            ..Default::default()
        };
        let mut rng = stream_rng(3, 0);
        assert!(simulate(&model, &x0, &config, &mut rng).is_err());
    }

    #[test]
    fn batch_is_deterministic_and_ordered() {
        let model = Churn(2);
        let x0s: Vec<CountVector> = (0..16).map(|i| CountVector::new(vec![i, 2 * i])).collect();
        let config = SampleConfig { n_steps: 40, ..Default::default() };
        let (a, _) = simulate_batch(&model, &x0s, &config, 42).unwrap();
        let (b, _) = simulate_batch(&model, &x0s, &config, 42).unwrap();
        assert_eq!(a, b);
    }
}
