//! Shared domain types: count states, rate fields, trajectories and the
//! numerical-stabilizer configuration used throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A d-dimensional state of nonnegative integer counts.
///
/// The dimension is fixed at construction; entries are unsigned so the
/// nonnegativity invariant is structural.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CountVector(Vec<u64>);

impl CountVector {
    pub fn new(values: Vec<u64>) -> Self {
        CountVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        CountVector(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, i: usize) -> u64 {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    /// Mutable access to the entries. The length (and hence the dimension)
    /// cannot change through this view.
    pub fn values_mut(&mut self) -> &mut [u64] {
        &mut self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, u64> {
        self.0.iter()
    }

    /// Squared Euclidean distance in count space.
    pub fn squared_distance(&self, other: &CountVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum()
    }

    /// L1 (Manhattan) distance in count space.
    pub fn l1_distance(&self, other: &CountVector) -> u64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(&a, &b)| a.abs_diff(b))
            .sum()
    }
}

impl From<Vec<u64>> for CountVector {
    fn from(values: Vec<u64>) -> Self {
        CountVector(values)
    }
}

impl std::ops::Index<usize> for CountVector {
    type Output = u64;
    fn index(&self, i: usize) -> &u64 {
        &self.0[i]
    }
}

/// Numerical stabilizers.
///
/// `eps_t` clamps the `1 - t` denominator of the conditional bridge rates,
/// `eps_l` floors the logarithm in the rate-matching loss, `eps_r` guards
/// the zero-total-rate split in the jump discretization and `eps_c`
/// smooths the symmetric Poisson transport cost at zero counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonConfig {
    pub eps_t: f64,
    pub eps_l: f64,
    pub eps_r: f64,
    pub eps_c: f64,
}

impl Default for EpsilonConfig {
    fn default() -> Self {
        EpsilonConfig {
            eps_t: 1e-3,
            eps_l: 1e-8,
            eps_r: 1e-12,
            eps_c: 1e-8,
        }
    }
}

impl EpsilonConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps_t", self.eps_t),
            ("eps_l", self.eps_l),
            ("eps_r", self.eps_r),
            ("eps_c", self.eps_c),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be strictly positive, got {v}")));
            }
        }
        if self.eps_t >= 0.5 {
            return Err(Error::invalid(format!("eps_t must be < 0.5, got {}", self.eps_t)));
        }
        Ok(())
    }
}

/// Closed-form bridge rates at a given state and time. Per coordinate at
/// most one of birth/death is nonzero (positive rectification), and the
/// death rate is zero whenever the count is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalRates {
    pub birth: Vec<f64>,
    pub death: Vec<f64>,
}

/// Per-coordinate nonnegative birth rates and death coefficients produced
/// by a rate model. `death[i] = x[i] * death_coeff[i]`, so death from a
/// zero count is structurally impossible.
#[derive(Debug, Clone, PartialEq)]
pub struct RateField {
    pub birth: Vec<f64>,
    pub death_coeff: Vec<f64>,
    pub death: Vec<f64>,
}

impl RateField {
    pub fn dim(&self) -> usize {
        self.birth.len()
    }
}

/// A time-indexed sequence of count states produced by forward simulation.
/// Consecutive recorded states differ by at most `stride` in each
/// coordinate (exactly one unit per simulation step).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CountVector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn final_state(&self) -> &CountVector {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Sum of per-step L1 displacements along the recorded states.
    pub fn path_length_l1(&self) -> u64 {
        self.states
            .windows(2)
            .map(|w| w[0].l1_distance(&w[1]))
            .sum()
    }
}

/// How endpoint pairs are formed from source and target minibatches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    Independent,
    Ot,
}

/// One coupled endpoint pair, optionally carrying a condition label taken
/// from the target sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointPair {
    pub x0: CountVector,
    pub x1: CountVector,
    pub condition: Option<usize>,
}

/// A batch of coupled endpoints. Under OT coupling with equal batch sizes
/// the pairing is a permutation of the target indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointBatch {
    pub pairs: Vec<EndpointPair>,
    pub coupling_kind: CouplingKind,
}

impl EndpointBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// One training tuple drawn from the conditional bridge: the state `x` at
/// time `t` together with the closed-form target rates toward the pair's
/// endpoint. `target_birth[i] * target_death[i] == 0` per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSample {
    pub t: f64,
    pub x: CountVector,
    pub target_birth: Vec<f64>,
    pub target_death: Vec<f64>,
    /// `None` is the null label (unconditional).
    pub condition: Option<usize>,
}
