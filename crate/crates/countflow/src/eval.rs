//! Two-sample metrics and conditional-generation fidelity metrics.
//!
//! `w2` is the exact 2-Wasserstein distance between equal-size empirical
//! distributions: the assignment problem on the squared-Euclidean cost is
//! solved exactly and the square root of the mean matched cost returned.
//! `mmd2_rbf` is the biased (V-statistic) squared maximum mean
//! discrepancy under a Gaussian kernel, nonnegative by construction, with
//! a median-heuristic bandwidth when none is given.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bridge;
use crate::coupling::{self, CostMatrix};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, STREAM_SUBSAMPLE};
use crate::types::{CountVector, CouplingKind};

fn check_same_dim(a: &[CountVector], b: &[CountVector]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("metric inputs must be nonempty"));
    }
    let d = a[0].dim();
    if a.iter().chain(b.iter()).any(|x| x.dim() != d) {
        return Err(Error::dim("metric inputs must share one dimension".to_string()));
    }
    Ok(d)
}

/// Exact 2-Wasserstein distance between two equal-size sample sets.
pub fn w2(a: &[CountVector], b: &[CountVector]) -> Result<f64> {
    check_same_dim(a, b)?;
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "w2 needs equal sample counts, got {} and {}; subsample first",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let cost = CostMatrix::from_fn(n, |i, j| a[i].squared_distance(&b[j]));
    let perm = coupling::solve_assignment(&cost)?;
    let total = coupling::assignment_cost(&cost, &perm);
    Ok((total / n as f64).sqrt())
}

/// `w2` on deterministic seeded subsamples of at most `n_max` points per
/// side. When the two sets have equal length, the same row subset is used
/// on both sides, so identical inputs give exactly zero. Returns the
/// distance and the subsample size used.
pub fn w2_subsampled(a: &[CountVector], b: &[CountVector], n_max: usize, seed: u64) -> Result<(f64, usize)> {
    check_same_dim(a, b)?;
    if n_max == 0 {
        return Err(Error::invalid("subsample size must be >= 1"));
    }
    let n = a.len().min(b.len()).min(n_max);
    let pick = |data: &[CountVector], stream: u64| -> Vec<CountVector> {
        if data.len() == n {
            return data.to_vec();
        }
        let mut rng = stream_rng(seed, stream);
        let mut idx = rand::seq::index::sample(&mut rng, data.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| data[i].clone()).collect()
    };
    let (sub_a, sub_b) = if a.len() == b.len() {
        (pick(a, STREAM_SUBSAMPLE), pick(b, STREAM_SUBSAMPLE))
    } else {
        (pick(a, STREAM_SUBSAMPLE), pick(b, STREAM_SUBSAMPLE + 1))
    };
    Ok((w2(&sub_a, &sub_b)?, n))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median pairwise Euclidean distance over the pooled samples.
fn median_heuristic(a: &[CountVector], b: &[CountVector]) -> f64 {
    let pooled: Vec<&CountVector> = a.iter().chain(b.iter()).collect();
    let n = pooled.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(pooled[i].squared_distance(pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 0.0;
    }
    median(&mut dists)
}

/// Biased (V-statistic) squared MMD with a Gaussian RBF kernel
/// `k(x, y) = exp(-||x - y||^2 / (2 sigma^2))`.
///
/// Returns `(mmd2, bandwidth_used)`. Without an explicit bandwidth the
/// median heuristic over the pooled sets is used; if that median is zero
/// (all pooled points identical) an error asks for an explicit bandwidth.
pub fn mmd2_rbf(a: &[CountVector], b: &[CountVector], bandwidth: Option<f64>) -> Result<(f64, f64)> {
    check_same_dim(a, b)?;
    let sigma = match bandwidth {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::invalid(format!("bandwidth must be positive, got {s}"))),
        None => {
            let m = median_heuristic(a, b);
            if m == 0.0 {
                return Err(Error::invalid(
                    "median pairwise distance is zero (all pooled points identical); \
                     pass an explicit bandwidth",
                ));
            }
            m
        }
    };
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let kernel_mean = |xs: &[CountVector], ys: &[CountVector]| -> f64 {
        let mut total = 0.0;
        for x in xs {
            for y in ys {
                total += (-gamma * x.squared_distance(y)).exp();
            }
        }
        total / (xs.len() * ys.len()) as f64
    };
    let value = kernel_mean(a, a) + kernel_mean(b, b) - 2.0 * kernel_mean(a, b);
    Ok((value.max(0.0), sigma))
}

/// Two-sample metric report with fixed JSON keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub w2: f64,
    pub mmd2_rbf: f64,
    #[serde(rename = "bandwidth")]
    pub bandwidth_used: f64,
    pub w2_subsample: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub seed: u64,
}

/// Compute the standard two-sample report: exact `w2` on seeded
/// subsamples of at most `w2_subsample` points plus full-set MMD.
pub fn metric_report(
    a: &[CountVector],
    b: &[CountVector],
    w2_subsample: usize,
    bandwidth: Option<f64>,
    seed: u64,
) -> Result<MetricReport> {
    let (w2, n_used) = w2_subsampled(a, b, w2_subsample, seed)?;
    let (mmd2, sigma) = mmd2_rbf(a, b, bandwidth)?;
    Ok(MetricReport {
        w2,
        mmd2_rbf: mmd2,
        bandwidth_used: sigma,
        w2_subsample: n_used,
        n_source: a.len(),
        n_target: b.len(),
        seed,
    })
}

/// Conditional-generation fidelity metrics over binned samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalReport {
    pub rmse_mu: f64,
    pub rmse_var: f64,
    pub rmse_zero: f64,
    #[serde(rename = "cov_f")]
    pub cov_frobenius: f64,
    pub contrast: f64,
    /// Held-out sample count per bin (the weights n_b).
    pub bin_counts: Vec<usize>,
    /// Bins dropped from the variance/covariance terms for having fewer
    /// than 2 generated samples (bins with no generated samples are
    /// dropped from every term).
    pub excluded_bins: Vec<usize>,
}

/// Indices of coordinates whose overall mean count exceeds `threshold`.
pub fn active_set(samples: &[CountVector], threshold: f64) -> Vec<usize> {
    if samples.is_empty() {
        return Vec::new();
    }
    let d = samples[0].dim();
    let mut sums = vec![0.0; d];
    for s in samples {
        for (acc, &v) in sums.iter_mut().zip(s.iter()) {
            *acc += v as f64;
        }
    }
    (0..d)
        .filter(|&j| sums[j] / samples.len() as f64 > threshold)
        .collect()
}

fn bin_means(bin: &[CountVector], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for s in bin {
        for (acc, &v) in m.iter_mut().zip(s.iter()) {
            *acc += v as f64;
        }
    }
    for v in &mut m {
        *v /= bin.len() as f64;
    }
    m
}

fn bin_variances(bin: &[CountVector], means: &[f64]) -> Vec<f64> {
    let n = bin.len();
    let mut v = vec![0.0; means.len()];
    for s in bin {
        for (acc, (&x, &m)) in v.iter_mut().zip(s.iter().zip(means.iter())) {
            let c = x as f64 - m;
            *acc += c * c;
        }
    }
    for acc in &mut v {
        *acc /= (n - 1) as f64;
    }
    v
}

fn bin_zero_fractions(bin: &[CountVector], d: usize) -> Vec<f64> {
    let mut z = vec![0.0; d];
    for s in bin {
        for (acc, &x) in z.iter_mut().zip(s.iter()) {
            if x == 0 {
                *acc += 1.0;
            }
        }
    }
    for acc in &mut z {
        *acc /= bin.len() as f64;
    }
    z
}

/// Off-diagonal sample covariance restricted to `active` coordinates
/// (diagonal zeroed), row-major `active.len() x active.len()`.
fn offdiag_cov(bin: &[CountVector], means: &[f64], active: &[usize]) -> Vec<f64> {
    let k = active.len();
    let n = bin.len();
    let mut cov = vec![0.0; k * k];
    for s in bin {
        for (ai, &i) in active.iter().enumerate() {
            let ci = s.get(i) as f64 - means[i];
            for (aj, &j) in active.iter().enumerate() {
                if ai == aj {
                    continue;
                }
                cov[ai * k + aj] += ci * (s.get(j) as f64 - means[j]);
            }
        }
    }
    for v in &mut cov {
        *v /= (n - 1) as f64;
    }
    cov
}

/// Bin-weighted conditional metrics: RMSE of bin-wise means, variances
/// and zero fractions over all coordinates, the weighted Frobenius
/// distance between off-diagonal covariance matrices on the active set,
/// and the peak-to-background contrast of the generated means averaged
/// over the active set.
pub fn conditional_metrics(
    true_bins: &[Vec<CountVector>],
    gen_bins: &[Vec<CountVector>],
    active: &[usize],
) -> Result<ConditionalReport> {
    if true_bins.len() != gen_bins.len() {
        return Err(Error::dim(format!(
            "bin structures differ: {} true vs {} generated",
            true_bins.len(),
            gen_bins.len()
        )));
    }
    if active.is_empty() {
        return Err(Error::invalid("active set is empty"));
    }
    let d = true_bins
        .iter()
        .chain(gen_bins.iter())
        .flat_map(|b| b.iter())
        .map(|s| s.dim())
        .next()
        .ok_or_else(|| Error::invalid("all bins are empty"))?;
    if true_bins
        .iter()
        .chain(gen_bins.iter())
        .flat_map(|b| b.iter())
        .any(|s| s.dim() != d)
    {
        return Err(Error::dim("bin samples must share one dimension".to_string()));
    }
    if active.iter().any(|&j| j >= d) {
        return Err(Error::invalid("active set index out of range"));
    }

    let n_bins = true_bins.len();
    let bin_counts: Vec<usize> = true_bins.iter().map(|b| b.len()).collect();
    for (b, bin) in true_bins.iter().enumerate() {
        if bin.len() == 1 {
            return Err(Error::invalid(format!(
                "held-out bin {b} has a single sample; need >= 2 for variance terms"
            )));
        }
    }

    let mut excluded_bins = Vec::new();
    let mut mu_num = 0.0;
    let mut mu_den = 0.0;
    let mut var_num = 0.0;
    let mut var_den = 0.0;
    let mut zero_num = 0.0;
    let mut zero_den = 0.0;
    let mut cov_num = 0.0;
    let mut cov_den = 0.0;
    let mut gen_means: Vec<Option<Vec<f64>>> = vec![None; n_bins];

    for b in 0..n_bins {
        let n_b = bin_counts[b];
        if n_b == 0 {
            continue;
        }
        let gen = &gen_bins[b];
        if gen.is_empty() {
            excluded_bins.push(b);
            continue;
        }
        let w = n_b as f64;
        let t_mean = bin_means(&true_bins[b], d);
        let g_mean = bin_means(gen, d);
        for j in 0..d {
            let e = g_mean[j] - t_mean[j];
            mu_num += w * e * e;
        }
        mu_den += w * d as f64;

        let t_zero = bin_zero_fractions(&true_bins[b], d);
        let g_zero = bin_zero_fractions(gen, d);
        for j in 0..d {
            let e = g_zero[j] - t_zero[j];
            zero_num += w * e * e;
        }
        zero_den += w * d as f64;

        if gen.len() >= 2 {
            let t_var = bin_variances(&true_bins[b], &t_mean);
            let g_var = bin_variances(gen, &g_mean);
            for j in 0..d {
                let e = g_var[j] - t_var[j];
                var_num += w * e * e;
            }
            var_den += w * d as f64;

            let t_cov = offdiag_cov(&true_bins[b], &t_mean, active);
            let g_cov = offdiag_cov(gen, &g_mean, active);
            let fro: f64 = t_cov
                .iter()
                .zip(g_cov.iter())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            cov_num += w * fro;
            cov_den += w;
        } else {
            excluded_bins.push(b);
        }
        gen_means[b] = Some(g_mean);
    }

    if mu_den == 0.0 {
        return Err(Error::invalid("no bin has both held-out and generated samples"));
    }

    // Peak-to-background contrast of the generated means, per active
    // coordinate: (max_b - median_b) / mean_b, averaged over the set.
    let mut contrast_sum = 0.0;
    for &j in active {
        let mut per_bin: Vec<f64> = gen_means
            .iter()
            .filter_map(|m| m.as_ref().map(|m| m[j]))
            .collect();
        if per_bin.is_empty() {
            continue;
        }
        let max = per_bin.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = per_bin.iter().sum::<f64>() / per_bin.len() as f64;
        let med = median(&mut per_bin);
        if mean > 0.0 {
            contrast_sum += (max - med) / mean;
        }
    }

    excluded_bins.sort_unstable();
    excluded_bins.dedup();
    Ok(ConditionalReport {
        rmse_mu: (mu_num / mu_den).sqrt(),
        rmse_var: if var_den > 0.0 { (var_num / var_den).sqrt() } else { 0.0 },
        rmse_zero: (zero_num / zero_den).sqrt(),
        cov_frobenius: if cov_den > 0.0 { cov_num / cov_den } else { 0.0 },
        contrast: contrast_sum / active.len() as f64,
        bin_counts,
        excluded_bins,
    })
}

/// Monte Carlo estimate of the intermediate bridge marginal of one
/// coordinate on a (count value, progress) grid.
#[derive(Debug, Clone, Serialize)]
pub struct BridgeHeatmap {
    pub coordinate: usize,
    pub count_lo: u64,
    pub count_hi: u64,
    pub progress: Vec<f64>,
    /// `values[row][col]`: probability of count `count_lo + row` at
    /// progress `progress[col]`.
    pub values: Vec<Vec<f64>>,
    pub column_sums: Vec<f64>,
    /// Fraction of draws per column that fell outside the count grid.
    pub truncated_mass: Vec<f64>,
}

/// Estimate the bridge marginal pmf per grid cell by sampling endpoint
/// pairs under the chosen coupling and evaluating the bridge at each
/// progress value. Each column sums to one minus its truncated mass.
#[allow(clippy::too_many_arguments)]
pub fn bridge_heatmap(
    x0_samples: &[CountVector],
    x1_samples: &[CountVector],
    coupling_kind: CouplingKind,
    coordinate: usize,
    count_range: (u64, u64),
    progress: &[f64],
    m_per_cell: usize,
    ot_batch: usize,
    eps_c: f64,
    rng: &mut impl Rng,
) -> Result<BridgeHeatmap> {
    let d = check_same_dim(x0_samples, x1_samples)?;
    if coordinate >= d {
        return Err(Error::invalid(format!(
            "coordinate {coordinate} out of range for dimension {d}"
        )));
    }
    let (lo, hi) = count_range;
    if lo > hi {
        return Err(Error::invalid(format!("count range {lo}..{hi} is empty")));
    }
    if m_per_cell == 0 {
        return Err(Error::invalid("m_per_cell must be >= 1"));
    }
    if progress.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
        return Err(Error::invalid("progress values must lie in [0, 1]"));
    }
    let n_rows = (hi - lo + 1) as usize;
    let mut values = vec![vec![0.0; progress.len()]; n_rows];
    let mut column_sums = vec![0.0; progress.len()];
    let mut truncated_mass = vec![0.0; progress.len()];

    for (col, &s) in progress.iter().enumerate() {
        // Collect endpoint pairs under the requested coupling.
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(m_per_cell);
        match coupling_kind {
            CouplingKind::Independent => {
                for _ in 0..m_per_cell {
                    pairs.push((
                        rng.random_range(0..x0_samples.len()),
                        rng.random_range(0..x1_samples.len()),
                    ));
                }
            }
            CouplingKind::Ot => {
                // Repeatedly OT-couple fresh minibatches until enough
                // pairs are collected.
                let b = ot_batch.max(1).min(x0_samples.len()).min(x1_samples.len());
                while pairs.len() < m_per_cell {
                    let src_idx = rand::seq::index::sample(rng, x0_samples.len(), b).into_vec();
                    let tgt_idx = rand::seq::index::sample(rng, x1_samples.len(), b).into_vec();
                    let cost = CostMatrix::from_fn(b, |i, j| {
                        coupling::symmetric_poisson_cost(
                            &x0_samples[src_idx[i]],
                            &x1_samples[tgt_idx[j]],
                            eps_c,
                        )
                        .unwrap_or(f64::INFINITY)
                    });
                    let perm = coupling::solve_assignment(&cost)?;
                    for (i, &j) in perm.iter().enumerate() {
                        pairs.push((src_idx[i], tgt_idx[j]));
                        if pairs.len() == m_per_cell {
                            break;
                        }
                    }
                }
            }
        }

        for &(i, j) in &pairs {
            let x = bridge::sample_bridge(&x0_samples[i], &x1_samples[j], s, rng)?;
            let v = x.get(coordinate);
            if v >= lo && v <= hi {
                values[(v - lo) as usize][col] += 1.0;
            } else {
                truncated_mass[col] += 1.0;
            }
        }
        for row in values.iter_mut() {
            row[col] /= m_per_cell as f64;
        }
        truncated_mass[col] /= m_per_cell as f64;
        column_sums[col] = values.iter().map(|row| row[col]).sum();
    }

    Ok(BridgeHeatmap {
        coordinate,
        count_lo: lo,
        count_hi: hi,
        progress: progress.to_vec(),
        values,
        column_sums,
        truncated_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn cv(values: &[u64]) -> CountVector {
        CountVector::new(values.to_vec())
    }

    /// n!-enumeration oracle for the optimal matching distance.
    fn w2_brute(a: &[CountVector], b: &[CountVector]) -> f64 {
        fn rec(a: &[CountVector], b: &[CountVector], used: &mut Vec<bool>, i: usize, acc: f64, best: &mut f64) {
            if i == a.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..b.len() {
                if !used[j] {
                    used[j] = true;
                    rec(a, b, used, i + 1, acc + a[i].squared_distance(&b[j]), best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(a, b, &mut vec![false; b.len()], 0, 0.0, &mut best);
        (best / a.len() as f64).sqrt()
    }

    #[test]
    fn w2_identities() {
        let a = vec![cv(&[1, 2]), cv(&[3, 4]), cv(&[0, 0])];
        assert_eq!(w2(&a, &a).unwrap(), 0.0);
        // single pair: Euclidean distance
        let d = w2(&[cv(&[0, 0])], &[cv(&[3, 4])]).unwrap();
        assert_eq!(d, 5.0);
    }

    #[test]
    fn w2_matches_enumeration_oracle() {
        let mut rng = stream_rng(1, 0);
        for trial in 0..20 {
            let n = 2 + trial % 5;
            let a: Vec<CountVector> =
                (0..n).map(|_| cv(&[rng.random_range(0..30), rng.random_range(0..30)])).collect();
            let b: Vec<CountVector> =
                (0..n).map(|_| cv(&[rng.random_range(0..30), rng.random_range(0..30)])).collect();
            let fast = w2(&a, &b).unwrap();
            let slow = w2_brute(&a, &b);
            assert!((fast - slow).abs() < 1e-10, "trial {trial}: {fast} vs {slow}");
        }
    }

    #[test]
    fn w2_is_symmetric_and_satisfies_triangle_inequality() {
        let mut rng = stream_rng(2, 0);
        for _ in 0..10 {
            let draw = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<CountVector> {
                (0..5).map(|_| cv(&[rng.random_range(0..20), rng.random_range(0..20)])).collect()
            };
            let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let ab = w2(&a, &b).unwrap();
            let ba = w2(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            let bc = w2(&b, &c).unwrap();
            let ac = w2(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn w2_subsampled_zero_on_identical_inputs() {
        let a: Vec<CountVector> = (0..40).map(|i| cv(&[i, i % 7])).collect();
        let (d, n) = w2_subsampled(&a, &a, 10, 3).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(n, 10);
    }

    #[test]
    fn mmd_identities_and_closed_form() {
        let a = vec![cv(&[0, 1]), cv(&[5, 2]), cv(&[3, 3])];
        let (v, _) = mmd2_rbf(&a, &a, Some(1.0)).unwrap();
        assert!(v <= 1e-12);

        // A={0}, B={1}, sigma=1: 1 + 1 - 2 exp(-0.5)
        let (v, sigma) = mmd2_rbf(&[cv(&[0])], &[cv(&[1])], Some(1.0)).unwrap();
        let expected = 2.0 - 2.0 * (-0.5f64).exp();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.78694).abs() < 1e-5);
        assert_eq!(sigma, 1.0);
    }

    #[test]
    fn mmd_requires_bandwidth_when_points_identical() {
        let a = vec![cv(&[2]), cv(&[2])];
        let b = vec![cv(&[2])];
        assert!(mmd2_rbf(&a, &b, None).is_err());
        assert!(mmd2_rbf(&a, &b, Some(0.5)).is_ok());
        assert!(mmd2_rbf(&a, &b, Some(-1.0)).is_err());
    }

    #[test]
    fn mmd_shrinks_with_sample_size_on_equal_distributions() {
        let mut rng = stream_rng(3, 0);
        let mut draw = |n: usize, rng: &mut rand_chacha::ChaCha12Rng| -> Vec<CountVector> {
            (0..n).map(|_| cv(&[rng.random_range(0..12), rng.random_range(0..12)])).collect()
        };
        let mut values = Vec::new();
        for &n in &[50usize, 200, 800] {
            let a = draw(n, &mut rng);
            let b = draw(n, &mut rng);
            let (v, _) = mmd2_rbf(&a, &b, Some(4.0)).unwrap();
            values.push(v);
        }
        assert!(values[0] > values[1] && values[1] > values[2], "{values:?}");
    }

    #[test]
    fn conditional_metrics_zero_when_generated_equals_truth() {
        let bins = vec![
            vec![cv(&[1, 0]), cv(&[3, 2])],
            vec![cv(&[0, 5]), cv(&[2, 7]), cv(&[1, 6])],
        ];
        let report = conditional_metrics(&bins, &bins, &[0, 1]).unwrap();
        assert_eq!(report.rmse_mu, 0.0);
        assert_eq!(report.rmse_var, 0.0);
        assert_eq!(report.rmse_zero, 0.0);
        assert_eq!(report.cov_frobenius, 0.0);
        assert!(report.excluded_bins.is_empty());
    }

    #[test]
    fn constant_generator_has_zero_contrast() {
        let true_bins = vec![
            vec![cv(&[4]), cv(&[6])],
            vec![cv(&[1]), cv(&[3])],
            vec![cv(&[0]), cv(&[2])],
        ];
        let gen_bins = vec![
            vec![cv(&[5]), cv(&[5])],
            vec![cv(&[5]), cv(&[5])],
            vec![cv(&[5]), cv(&[5])],
        ];
        let report = conditional_metrics(&true_bins, &gen_bins, &[0]).unwrap();
        assert_eq!(report.contrast, 0.0);
    }

    #[test]
    fn conditional_metrics_match_hand_computation() {
        // Two bins, three coordinates; expected values worked out by hand
        // from the definitions before implementing.
        let true_bins = vec![
            vec![cv(&[0, 2, 4]), cv(&[2, 2, 0])],
            vec![cv(&[1, 0, 0]), cv(&[3, 0, 2])],
        ];
        let gen_bins = vec![
            vec![cv(&[1, 1, 3]), cv(&[1, 3, 1])],
            vec![cv(&[2, 1, 1]), cv(&[4, 1, 1])],
        ];
        let report = conditional_metrics(&true_bins, &gen_bins, &[0, 1, 2]).unwrap();
        assert!((report.rmse_mu - (1.0f64 / 3.0).sqrt()).abs() < 1e-12, "{}", report.rmse_mu);
        assert!((report.rmse_var - 8.0f64.sqrt()).abs() < 1e-12, "{}", report.rmse_var);
        assert!((report.rmse_zero - (3.5f64 / 12.0).sqrt()).abs() < 1e-12, "{}", report.rmse_zero);
        assert!((report.cov_frobenius - 4.576491222541475).abs() < 1e-12, "{}", report.cov_frobenius);
        assert!((report.contrast - 0.3888888888888889).abs() < 1e-12, "{}", report.contrast);
        assert_eq!(report.bin_counts, vec![2, 2]);
    }

    #[test]
    fn sparse_generated_bins_are_excluded_with_note() {
        let true_bins = vec![
            vec![cv(&[1]), cv(&[3])],
            vec![cv(&[5]), cv(&[7])],
        ];
        let gen_bins = vec![vec![cv(&[2])], vec![cv(&[5]), cv(&[6])]];
        let report = conditional_metrics(&true_bins, &gen_bins, &[0]).unwrap();
        assert_eq!(report.excluded_bins, vec![0]);
        assert!(conditional_metrics(&true_bins, &gen_bins, &[]).is_err());
    }

    #[test]
    fn active_set_uses_threshold() {
        let samples = vec![cv(&[5, 0, 1]), cv(&[7, 0, 0])];
        assert_eq!(active_set(&samples, 0.01), vec![0, 2]);
        assert_eq!(active_set(&samples, 2.0), vec![0]);
    }

    #[test]
    fn heatmap_point_mass_concentrates() {
        let mut rng = stream_rng(4, 0);
        let x = vec![cv(&[2]); 10];
        let hm = bridge_heatmap(
            &x,
            &x,
            CouplingKind::Independent,
            0,
            (0, 6),
            &[0.0, 0.5, 1.0],
            500,
            8,
            1e-8,
            &mut rng,
        )
        .unwrap();
        for col in 0..3 {
            assert_eq!(hm.values[2][col], 1.0);
            assert!((hm.column_sums[col] - 1.0).abs() < 1e-12);
            assert_eq!(hm.truncated_mass[col], 0.0);
        }
    }

    #[test]
    fn heatmap_midpoint_matches_binomial_pmf() {
        let mut rng = stream_rng(5, 0);
        let x0 = vec![cv(&[0]); 10];
        let x1 = vec![cv(&[4]); 10];
        let hm = bridge_heatmap(
            &x0,
            &x1,
            CouplingKind::Independent,
            0,
            (0, 4),
            &[0.0, 0.5],
            100_000,
            8,
            1e-8,
            &mut rng,
        )
        .unwrap();
        // s=0 column is the source marginal
        assert!((hm.values[0][0] - 1.0).abs() < 1e-12);
        // s=0.5 column vs Binomial(4, 0.5)
        let tv: f64 = (0..=4u64)
            .map(|z| (hm.values[z as usize][1] - bridge::bridge_pmf(0, 4, 0.5, z)).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.02, "TV {tv}");
    }

    #[test]
    fn heatmap_rejects_bad_coordinate() {
        let mut rng = stream_rng(6, 0);
        let x = vec![cv(&[1, 2])];
        assert!(bridge_heatmap(
            &x,
            &x,
            CouplingKind::Independent,
            2,
            (0, 5),
            &[0.5],
            10,
            4,
            1e-8,
            &mut rng
        )
        .is_err());
    }
}
