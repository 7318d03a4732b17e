//! Synthetic count-data generators: the bimodal Gamma-Poisson mixture
//! target with a discrete-uniform source, and a labeled conditional task
//! with known class-wise moments for exercising guided generation.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::CountVector;

fn draw_gamma(shape: f64, scale: f64, rng: &mut impl Rng) -> f64 {
    Gamma::new(shape, scale)
        .expect("gamma parameters validated by caller")
        .sample(rng)
}

fn draw_poisson(rate: f64, rng: &mut impl Rng) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let v: f64 = Poisson::new(rate)
        .expect("poisson rate validated by caller")
        .sample(rng);
    v as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPoissonComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub dispersion: Vec<f64>,
}

/// Mixture of Gamma-Poisson (negative binomial) components. Per
/// component and coordinate, a rate is drawn from
/// `Gamma(shape = dispersion, scale = mean / dispersion)` and the count
/// from `Poisson(rate)`, so the component marginal has the given mean and
/// variance `mean (1 + mean / dispersion)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPoissonMixtureSpec {
    pub components: Vec<GammaPoissonComponent>,
}

impl GammaPoissonMixtureSpec {
    /// The default two-dimensional target: an equal-weight mixture with
    /// component means (60, 5) and (60, 40), dispersion 20 per
    /// coordinate.
    pub fn default_2d() -> Self {
        GammaPoissonMixtureSpec {
            components: vec![
                GammaPoissonComponent {
                    weight: 0.5,
                    mean: vec![60.0, 5.0],
                    dispersion: vec![20.0, 20.0],
                },
                GammaPoissonComponent {
                    weight: 0.5,
                    mean: vec![60.0, 40.0],
                    dispersion: vec![20.0, 20.0],
                },
            ],
        }
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        let d = self.dim();
        let mut total = 0.0;
        for c in &self.components {
            if c.mean.len() != d || c.dispersion.len() != d {
                return Err(Error::dim("components must share one dimension".to_string()));
            }
            if c.mean.iter().any(|&m| !(m > 0.0)) || c.dispersion.iter().any(|&r| !(r > 0.0)) {
                return Err(Error::invalid("means and dispersions must be positive"));
            }
            if !(c.weight >= 0.0) {
                return Err(Error::invalid("weights must be nonnegative"));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("weights must sum to 1, got {total}")));
        }
        Ok(())
    }
}

/// Draw `n` rows from the mixture.
pub fn sample_gamma_poisson_mixture(
    spec: &GammaPoissonMixtureSpec,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<CountVector>> {
    spec.validate()?;
    let d = spec.dim();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u: f64 = rng.random();
        let mut component = &spec.components[spec.components.len() - 1];
        for c in &spec.components {
            if u < c.weight {
                component = c;
                break;
            }
            u -= c.weight;
        }
        let mut values = Vec::with_capacity(d);
        for i in 0..d {
            let rate = draw_gamma(
                component.dispersion[i],
                component.mean[i] / component.dispersion[i],
                rng,
            );
            values.push(draw_poisson(rate, rng));
        }
        out.push(CountVector::new(values));
    }
    Ok(out)
}

/// Each entry uniform on `{lo[i], ..., hi[i]}`, independently.
pub fn sample_discrete_uniform_source(
    n: usize,
    lo: &[u64],
    hi: &[u64],
    rng: &mut impl Rng,
) -> Result<Vec<CountVector>> {
    if lo.len() != hi.len() || lo.is_empty() {
        return Err(Error::dim("lo and hi must be nonempty and aligned".to_string()));
    }
    if lo.iter().zip(hi.iter()).any(|(&l, &h)| l > h) {
        return Err(Error::invalid("source grid needs lo <= hi componentwise"));
    }
    Ok((0..n)
        .map(|_| {
            CountVector::new(
                lo.iter()
                    .zip(hi.iter())
                    .map(|(&l, &h)| rng.random_range(l..=h))
                    .collect(),
            )
        })
        .collect())
}

/// A labeled conditional task with known moments: per class a
/// Gamma-Poisson population with its own mean vector, plus one shared
/// Gamma rate multiplier (mean 1, variance `shared_factor_variance`)
/// applied across `shared_coords`, which induces class-dependent
/// cross-coordinate covariance `mean_i * mean_j * shared_factor_variance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalTaskSpec {
    pub class_means: Vec<Vec<f64>>,
    pub dispersion: Vec<f64>,
    /// Variance of the shared multiplier; 0 disables it.
    pub shared_factor_variance: f64,
    pub shared_coords: Vec<usize>,
}

impl ConditionalTaskSpec {
    /// Three well-separated classes in three dimensions with a shared
    /// factor across all coordinates.
    pub fn default_task() -> Self {
        ConditionalTaskSpec {
            class_means: vec![
                vec![16.0, 2.0, 2.0],
                vec![2.0, 16.0, 2.0],
                vec![2.0, 2.0, 16.0],
            ],
            dispersion: vec![10.0, 10.0, 10.0],
            shared_factor_variance: 0.15,
            shared_coords: vec![0, 1, 2],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn dim(&self) -> usize {
        self.class_means.first().map_or(0, |m| m.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes() < 2 {
            return Err(Error::invalid("conditional task needs at least 2 classes"));
        }
        let d = self.dim();
        if self.class_means.iter().any(|m| m.len() != d) || self.dispersion.len() != d {
            return Err(Error::dim("class means and dispersion must share one dimension".to_string()));
        }
        if self
            .class_means
            .iter()
            .flatten()
            .chain(self.dispersion.iter())
            .any(|&v| !(v > 0.0))
        {
            return Err(Error::invalid("means and dispersions must be positive"));
        }
        if !(self.shared_factor_variance >= 0.0) {
            return Err(Error::invalid("shared_factor_variance must be >= 0"));
        }
        if self.shared_coords.iter().any(|&i| i >= d) {
            return Err(Error::invalid("shared coordinate index out of range"));
        }
        Ok(())
    }
}

/// Draw `n_per_class * n_classes` labeled rows with labels sampled
/// uniformly at random, so label frequencies fluctuate binomially around
/// `1 / n_classes`.
pub fn make_conditional_task(
    spec: &ConditionalTaskSpec,
    n_per_class: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<CountVector>, Vec<usize>)> {
    spec.validate()?;
    let k = spec.n_classes();
    let d = spec.dim();
    let n_total = n_per_class * k;
    let mut shared = vec![false; d];
    for &i in &spec.shared_coords {
        shared[i] = true;
    }
    let v_s = spec.shared_factor_variance;
    let mut samples = Vec::with_capacity(n_total);
    let mut labels = Vec::with_capacity(n_total);
    for _ in 0..n_total {
        let label = rng.random_range(0..k);
        let factor = if v_s > 0.0 {
            draw_gamma(1.0 / v_s, v_s, rng)
        } else {
            1.0
        };
        let mut values = Vec::with_capacity(d);
        for i in 0..d {
            let g = draw_gamma(spec.dispersion[i], 1.0 / spec.dispersion[i], rng);
            let mut rate = spec.class_means[label][i] * g;
            if shared[i] {
                rate *= factor;
            }
            values.push(draw_poisson(rate, rng));
        }
        samples.push(CountVector::new(values));
        labels.push(label);
    }
    Ok((samples, labels))
}
