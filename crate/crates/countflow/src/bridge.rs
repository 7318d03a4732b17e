//! The conditional binomial bridge between count vectors.
//!
//! Given endpoints (x0, x1), each coordinate moves monotonically from
//! x0 to x1; the number of unit steps completed by time t is
//! Binomial(|x1 - x0|, t), independently across coordinates:
//!
//! ```text
//! X_t = x0 + sgn(x1 - x0) * B_t,   B_t ~ Binomial(|x1 - x0|, t)
//! ```
//!
//! The coordinate-wise mean therefore moves linearly from x0 to x1. The
//! closed-form rates that generate this path are
//!
//! ```text
//! birth(x, t) = (x1 - x)+ / (1 - t)     death(x, t) = (x - x1)+ / (1 - t)
//! ```
//!
//! with `1 - t` clamped to `1 - t + eps_t` in practice. These rates
//! balance the Kolmogorov forward equation of the bridge marginals;
//! [`kfe_residual`] checks that identity by finite differences, and
//! [`simulate_conditional_ctmc`] runs the rates through the first-order
//! jump discretization as a Monte Carlo oracle.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::sampler::{run_jump_chain, RateModel};
use crate::types::{ConditionalRates, CountVector, EpsilonConfig, RateField, Trajectory};

fn draw_binomial(n: u64, p: f64, rng: &mut impl Rng) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p)
        .expect("binomial parameters validated by caller")
        .sample(rng)
}

/// Draw one bridge state at time `t` for the endpoint pair `(x0, x1)`.
///
/// The result lies between `min(x0, x1)` and `max(x0, x1)` componentwise;
/// `t = 0` returns exactly `x0` and `t = 1` exactly `x1`.
pub fn sample_bridge(
    x0: &CountVector,
    x1: &CountVector,
    t: f64,
    rng: &mut impl Rng,
) -> Result<CountVector> {
    if x0.dim() != x1.dim() {
        return Err(Error::dim(format!(
            "endpoints have dimensions {} and {}",
            x0.dim(),
            x1.dim()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("bridge time must be in [0, 1], got {t}")));
    }
    let values = x0
        .iter()
        .zip(x1.iter())
        .map(|(&a, &b)| {
            let steps = draw_binomial(a.abs_diff(b), t, rng);
            if b >= a {
                a + steps
            } else {
                a - steps
            }
        })
        .collect();
    Ok(CountVector::new(values))
}

/// Exact pmf of the one-dimensional bridge marginal at time `t`.
///
/// Returns `C(n, k) t^k (1-t)^(n-k)` with `n = |x1 - x0|` and
/// `k = |x - x0|` when `x` lies on the path from `x0` to `x1`, and 0
/// otherwise. Sums to 1 over the support.
pub fn bridge_pmf(x0: u64, x1: u64, t: f64, x: u64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    let (lo, hi) = (x0.min(x1), x0.max(x1));
    if x < lo || x > hi {
        return 0.0;
    }
    let n = hi - lo;
    let k = x.abs_diff(x0);
    let m = n - k;
    // C(n, k) t^k folded into one product to keep intermediates in range.
    let mut p = (1.0 - t).powi(m as i32);
    for j in 1..=k {
        p *= (m + j) as f64 / j as f64 * t;
    }
    p
}

fn scalar_rates(x: u64, x1: u64, denom: f64) -> (f64, f64) {
    let birth = x1.saturating_sub(x) as f64 / denom;
    let death = x.saturating_sub(x1) as f64 / denom;
    (birth, death)
}

/// Closed-form conditional rates toward `x1` at state `x` and time `t`.
///
/// `birth[i] = (x1[i] - x[i])+ / (1 - t + eps_t)` and symmetrically for
/// death; per coordinate at most one of the two is nonzero.
pub fn conditional_rates(
    x: &CountVector,
    x1: &CountVector,
    t: f64,
    eps: &EpsilonConfig,
) -> Result<ConditionalRates> {
    if x.dim() != x1.dim() {
        return Err(Error::dim(format!(
            "state has dimension {}, target has {}",
            x.dim(),
            x1.dim()
        )));
    }
    eps.validate()?;
    if !(0.0..1.0 + eps.eps_t).contains(&t) {
        return Err(Error::invalid(format!(
            "rate time must satisfy 0 <= t < 1 + eps_t, got {t}"
        )));
    }
    let denom = 1.0 - t + eps.eps_t;
    let mut birth = Vec::with_capacity(x.dim());
    let mut death = Vec::with_capacity(x.dim());
    for (&xi, &x1i) in x.iter().zip(x1.iter()) {
        let (b, d) = scalar_rates(xi, x1i, denom);
        birth.push(b);
        death.push(d);
    }
    Ok(ConditionalRates { birth, death })
}

/// Absolute residual of the bridge-marginal forward equation at
/// `(x0, x1, t, x)`, with the time derivative replaced by a central
/// difference of step `dt`. Shrinks as O(dt^2) for interior `t`.
pub fn kfe_residual(x0: u64, x1: u64, t: f64, x: u64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if t - dt <= 0.0 || t + dt >= 1.0 {
        return Err(Error::invalid(format!(
            "central stencil at t={t}, dt={dt} leaves (0, 1)"
        )));
    }
    let dpdt = (bridge_pmf(x0, x1, t + dt, x) - bridge_pmf(x0, x1, t - dt, x)) / (2.0 * dt);
    // Exact rates, no eps_t clamp.
    let denom = 1.0 - t;
    let influx_below = if x > 0 {
        let (b, _) = scalar_rates(x - 1, x1, denom);
        b * bridge_pmf(x0, x1, t, x - 1)
    } else {
        0.0
    };
    let influx_above = {
        let (_, d) = scalar_rates(x + 1, x1, denom);
        d * bridge_pmf(x0, x1, t, x + 1)
    };
    let (b, d) = scalar_rates(x, x1, denom);
    let outflux = (b + d) * bridge_pmf(x0, x1, t, x);
    Ok((dpdt - influx_below - influx_above + outflux).abs())
}

/// A [`RateModel`] that returns the exact conditional rates toward a
/// fixed target; used as the jump-chain oracle and for sampler
/// equivalence tests.
#[derive(Debug, Clone)]
pub struct ExactBridgeRates {
    pub target: CountVector,
    pub eps: EpsilonConfig,
}

impl RateModel for ExactBridgeRates {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn rates(&self, x: &CountVector, t: f64, _condition: Option<usize>) -> Result<RateField> {
        let rates = conditional_rates(x, &self.target, t, &self.eps)?;
        let death_coeff = x
            .iter()
            .zip(rates.death.iter())
            .map(|(&xi, &d)| if xi > 0 { d / xi as f64 } else { 0.0 })
            .collect();
        Ok(RateField {
            birth: rates.birth,
            death_coeff,
            death: rates.death,
        })
    }
}

/// Simulate the exact conditional-rate CTMC from `t = 0` to
/// `t = 1 - eps_t` with the first-order jump discretization, recording
/// every step.
///
/// The terminal state converges to `x1` (in probability) as the step
/// count grows and `eps_t` shrinks, and the intermediate marginals
/// converge to [`bridge_pmf`]; this is the Monte Carlo oracle behind the
/// bridge correctness suite.
pub fn simulate_conditional_ctmc(
    x0: &CountVector,
    x1: &CountVector,
    n_steps: usize,
    eps: &EpsilonConfig,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::invalid("n_steps must be >= 1"));
    }
    if x0.dim() != x1.dim() {
        return Err(Error::dim(format!(
            "endpoints have dimensions {} and {}",
            x0.dim(),
            x1.dim()
        )));
    }
    eps.validate()?;
    let model = ExactBridgeRates {
        target: x1.clone(),
        eps: *eps,
    };
    let (_, traj) = run_jump_chain(
        &model,
        x0,
        0.0,
        1.0 - eps.eps_t,
        n_steps,
        eps.eps_r,
        None,
        1.0,
        Some(1),
        rng,
    )?;
    Ok(traj.expect("recording was requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    #[test]
    fn zero_gap_coordinates_never_move() {
        let mut rng = stream_rng(0, 0);
        let x0 = CountVector::new(vec![3, 7]);
        let x1 = CountVector::new(vec![3, 7]);
        for _ in 0..100 {
            assert_eq!(sample_bridge(&x0, &x1, 0.4, &mut rng).unwrap(), x0);
        }
    }

    #[test]
    fn endpoints_are_exact() {
        let mut rng = stream_rng(0, 1);
        let x0 = CountVector::new(vec![0, 10]);
        let x1 = CountVector::new(vec![6, 2]);
        assert_eq!(sample_bridge(&x0, &x1, 0.0, &mut rng).unwrap(), x0);
        assert_eq!(sample_bridge(&x0, &x1, 1.0, &mut rng).unwrap(), x1);
    }

    #[test]
    fn bridge_moments_match_binomial() {
        // x0=[0], x1=[4], t=0.5: mean 2, variance 1.
        let mut rng = stream_rng(0, 2);
        let x0 = CountVector::new(vec![0]);
        let x1 = CountVector::new(vec![4]);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let v = sample_bridge(&x0, &x1, 0.5, &mut rng).unwrap().get(0) as f64;
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((mean - 2.0).abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn sample_bridge_rejects_bad_input() {
        let mut rng = stream_rng(0, 3);
        let x0 = CountVector::new(vec![1]);
        let x1 = CountVector::new(vec![1, 2]);
        assert!(sample_bridge(&x0, &x1, 0.5, &mut rng).is_err());
        let x1 = CountVector::new(vec![2]);
        assert!(sample_bridge(&x0, &x1, 1.5, &mut rng).is_err());
        assert!(sample_bridge(&x0, &x1, -0.1, &mut rng).is_err());
    }

    #[test]
    fn pmf_known_values() {
        // C(2,1) * 0.5 * 0.5
        assert!((bridge_pmf(0, 2, 0.5, 1) - 0.5).abs() < 1e-15);
        // degenerate bridge
        assert_eq!(bridge_pmf(5, 5, 0.3, 5), 1.0);
        // decreasing case: C(5,2) 0.25^2 0.75^3
        assert!((bridge_pmf(8, 3, 0.25, 6) - 0.263671875).abs() < 1e-15);
        // out of support
        assert_eq!(bridge_pmf(0, 2, 0.5, 3), 0.0);
        assert_eq!(bridge_pmf(8, 3, 0.25, 2), 0.0);
    }

    #[test]
    fn pmf_normalizes_over_support() {
        for &(x0, x1) in &[(0u64, 50u64), (50, 0), (3, 3), (12, 37), (40, 15)] {
            for it in 1..=9 {
                let t = it as f64 / 10.0;
                let (lo, hi) = (x0.min(x1), x0.max(x1));
                let total: f64 = (lo..=hi).map(|x| bridge_pmf(x0, x1, t, x)).sum();
                assert!((total - 1.0).abs() <= 1e-12, "sum {total} for ({x0},{x1},{t})");
            }
        }
    }

    #[test]
    fn conditional_rates_known_values() {
        let eps = EpsilonConfig { eps_t: 1e-300, ..Default::default() };
        let r = conditional_rates(
            &CountVector::new(vec![2]),
            &CountVector::new(vec![5]),
            0.5,
            &eps,
        )
        .unwrap();
        assert!((r.birth[0] - 6.0).abs() < 1e-9);
        assert_eq!(r.death[0], 0.0);

        let r = conditional_rates(
            &CountVector::new(vec![5]),
            &CountVector::new(vec![5]),
            0.9,
            &EpsilonConfig::default(),
        )
        .unwrap();
        assert_eq!((r.birth[0], r.death[0]), (0.0, 0.0));

        let r = conditional_rates(
            &CountVector::new(vec![7, 1]),
            &CountVector::new(vec![3, 1]),
            0.0,
            &eps,
        )
        .unwrap();
        assert_eq!(r.birth, vec![0.0, 0.0]);
        assert!((r.death[0] - 4.0).abs() < 1e-9);
        assert_eq!(r.death[1], 0.0);
    }

    #[test]
    fn kfe_residual_small_on_interior_points() {
        assert!(kfe_residual(0, 3, 0.5, 1, 1e-4).unwrap() < 1e-5);
        assert!(kfe_residual(6, 1, 0.3, 4, 1e-4).unwrap() < 1e-5);
        // degenerate bridge: every term vanishes identically
        assert_eq!(kfe_residual(4, 4, 0.5, 4, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn kfe_residual_is_second_order() {
        let coarse = kfe_residual(2, 9, 0.35, 5, 2e-3).unwrap();
        let fine = kfe_residual(2, 9, 0.35, 5, 1e-3).unwrap();
        assert!(coarse / fine >= 3.5, "ratio {}", coarse / fine);
    }

    #[test]
    fn kfe_residual_rejects_bad_stencil() {
        assert!(kfe_residual(0, 3, 0.00005, 1, 1e-4).is_err());
        assert!(kfe_residual(0, 3, 0.99995, 1, 1e-4).is_err());
        assert!(kfe_residual(0, 3, 0.5, 1, 0.0).is_err());
    }

    #[test]
    fn ctmc_constant_when_already_at_target() {
        let mut rng = stream_rng(0, 4);
        let x = CountVector::new(vec![2]);
        let traj = simulate_conditional_ctmc(&x, &x, 100, &EpsilonConfig::default(), &mut rng).unwrap();
        assert!(traj.states.iter().all(|s| *s == x));
    }

    #[test]
    fn ctmc_hits_target_and_matches_marginal() {
        // Smaller-scale version of the Monte Carlo oracle: endpoint hits
        // and a TV check of the t=0.5 marginal against the binomial pmf.
        let eps = EpsilonConfig::default();
        let x0 = CountVector::new(vec![0]);
        let x1 = CountVector::new(vec![4]);
        let n_steps = 2000;
        let replicates = 10_000;
        let mut rng = stream_rng(0, 5);

        let delta = (1.0 - eps.eps_t) / n_steps as f64;
        let probe = (0.5 / delta).round() as usize;
        let probe_t = probe as f64 * delta;

        let mut hits = 0usize;
        let mut hist = vec![0usize; 5];
        for _ in 0..replicates {
            let traj = simulate_conditional_ctmc(&x0, &x1, n_steps, &eps, &mut rng).unwrap();
            if traj.final_state() == &x1 {
                hits += 1;
            }
            hist[traj.states[probe].get(0) as usize] += 1;
        }
        let hit_rate = hits as f64 / replicates as f64;
        assert!(hit_rate >= 0.99, "hit rate {hit_rate}");

        let tv: f64 = (0..=4)
            .map(|x| {
                let emp = hist[x as usize] as f64 / replicates as f64;
                (emp - bridge_pmf(0, 4, probe_t, x)).abs()
            })
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.02, "TV {tv}");
    }

    proptest! {
        #[test]
        fn bridge_sample_stays_in_lattice_interval(
            x0 in proptest::collection::vec(0u64..=60, 1..=4),
            gaps in proptest::collection::vec(-30i64..=30, 1..=4),
            t in 0.0f64..=1.0,
            seed in 0u64..1000,
        ) {
            let d = x0.len().min(gaps.len());
            let x0 = CountVector::new(x0[..d].to_vec());
            let x1 = CountVector::new(
                x0.iter().zip(gaps.iter()).map(|(&a, &g)| (a as i64 + g).max(0) as u64).collect(),
            );
            let mut rng = stream_rng(seed, 10);
            let x = sample_bridge(&x0, &x1, t, &mut rng).unwrap();
            for i in 0..d {
                let (lo, hi) = (x0.get(i).min(x1.get(i)), x0.get(i).max(x1.get(i)));
                prop_assert!(x.get(i) >= lo && x.get(i) <= hi);
            }
            // endpoint exactness
            let at0 = sample_bridge(&x0, &x1, 0.0, &mut rng).unwrap();
            prop_assert_eq!(&at0, &x0);
            let at1 = sample_bridge(&x0, &x1, 1.0, &mut rng).unwrap();
            prop_assert_eq!(&at1, &x1);
        }

        #[test]
        fn conditional_rates_are_one_sided(
            x in proptest::collection::vec(0u64..=80, 1..=4),
            x1 in proptest::collection::vec(0u64..=80, 4),
            t in 0.0f64..0.999,
        ) {
            let d = x.len();
            let x = CountVector::new(x);
            let x1 = CountVector::new(x1[..d].to_vec());
            let r = conditional_rates(&x, &x1, t, &EpsilonConfig::default()).unwrap();
            for i in 0..d {
                prop_assert!(r.birth[i] >= 0.0 && r.death[i] >= 0.0);
                prop_assert_eq!(r.birth[i] * r.death[i], 0.0);
                if x.get(i) == 0 {
                    prop_assert_eq!(r.death[i], 0.0);
                }
            }
        }

        #[test]
        fn pmf_normalizes_on_random_pairs(
            x0 in 0u64..=50,
            x1 in 0u64..=50,
            it in 1usize..=9,
        ) {
            let t = it as f64 / 10.0;
            let (lo, hi) = (x0.min(x1), x0.max(x1));
            let total: f64 = (lo..=hi).map(|x| bridge_pmf(x0, x1, t, x)).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn bridge_mean_is_linear_in_t() {
        let mut rng = stream_rng(0, 6);
        let x0 = CountVector::new(vec![10]);
        let x1 = CountVector::new(vec![40]);
        for &t in &[0.2, 0.5, 0.8] {
            let n = 40_000;
            let mut sum = 0.0;
            for _ in 0..n {
                sum += sample_bridge(&x0, &x1, t, &mut rng).unwrap().get(0) as f64;
            }
            let mean = sum / n as f64;
            let expected = 10.0 + t * 30.0;
            // MC std of the mean is sqrt(30 t(1-t)) / sqrt(n) < 0.02
            assert!((mean - expected).abs() < 0.1, "t={t} mean={mean}");
        }
    }
}
