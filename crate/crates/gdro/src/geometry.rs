//! Distance-generating functions and closed-form mirror-descent steps for the
//! two domains: a Euclidean ball for the model and the probability simplex
//! (entropy geometry) for the distribution weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense model vector living in the Euclidean ball.
pub type ModelPoint = Vec<f64>;

/// Hypothesis domain: the centered Euclidean ball of a given radius.
///
/// With the squared-norm distance-generating function and the ball centered at
/// the origin, the mirror-descent diameter constant is `radius^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EuclideanBallDomain {
    pub dimension: usize,
    pub radius: f64,
}

impl EuclideanBallDomain {
    pub fn new(dimension: usize, radius: f64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("ball dimension must be positive"));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self { dimension, radius })
    }

    /// Squared diameter constant of the ball under `nu(w) = ||w||^2 / 2`,
    /// with the minimizer of `nu` (the origin) as the starting point.
    pub fn diameter_sq(&self) -> f64 {
        self.radius * self.radius / 2.0
    }

    /// The minimizer of the distance-generating function: the origin.
    pub fn center(&self) -> ModelPoint {
        vec![0.0; self.dimension]
    }
}

/// Weight domain: the interior of the probability simplex over `m` groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimplexDomain {
    pub m: usize,
}

impl SimplexDomain {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("simplex must have at least one coordinate"));
        }
        Ok(Self { m })
    }

    /// Entropy diameter of the simplex: `sqrt(ln m)`.
    pub fn diameter(&self) -> f64 {
        (self.m as f64).ln().sqrt()
    }
}

const SIMPLEX_SUM_TOL: f64 = 1e-9;
// Floor applied after the multiplicative update to guard denormal underflow
// only; the entropy map never reaches the boundary in exact arithmetic.
const SIMPLEX_FLOOR: f64 = 1e-300;

/// Strictly positive probability vector over the groups.
///
/// The constructor enforces the simplex invariants, so any value of this type
/// is safe to feed to the entropy-geometry operations below.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    /// Validates strict positivity and unit sum (tolerance 1e-9).
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::invalid("simplex weights must be non-empty"));
        }
        let mut sum = 0.0;
        for (i, &qi) in q.iter().enumerate() {
            if !qi.is_finite() || qi <= 0.0 {
                return Err(Error::invalid(format!(
                    "simplex weight {i} must be strictly positive, got {qi}"
                )));
            }
            sum += qi;
        }
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::invalid(format!("simplex weights sum to {sum}, expected 1")));
        }
        Ok(Self(q))
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("simplex must have at least one coordinate"));
        }
        Ok(Self(vec![1.0 / m as f64; m]))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for SimplexWeights {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl<'de> Deserialize<'de> for SimplexWeights {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(de)?;
        SimplexWeights::new(raw).map_err(serde::de::Error::custom)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Euclidean projection onto the centered ball of the given radius: points
/// inside are returned unchanged, points outside are radially rescaled.
pub fn project_ball(point: &[f64], radius: f64) -> Result<ModelPoint> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid(format!("projection radius must be positive, got {radius}")));
    }
    if point.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("cannot project a non-finite point"));
    }
    let n = norm2(point);
    if n <= radius {
        return Ok(point.to_vec());
    }
    let scale = radius / n;
    Ok(point.iter().map(|x| x * scale).collect())
}

/// One stochastic-mirror-descent step in the ball geometry. With the
/// squared-norm distance-generating function the Bregman argmin reduces to a
/// projected gradient step.
pub fn smd_step_euclidean(
    w: &[f64],
    grad: &[f64],
    step: f64,
    domain: &EuclideanBallDomain,
) -> Result<ModelPoint> {
    if w.len() != grad.len() || w.len() != domain.dimension {
        return Err(Error::invalid(format!(
            "dimension mismatch: w={}, grad={}, domain={}",
            w.len(),
            grad.len(),
            domain.dimension
        )));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {step}")));
    }
    let moved: Vec<f64> = w.iter().zip(grad).map(|(wi, gi)| wi - step * gi).collect();
    project_ball(&moved, domain.radius)
}

/// Multiplicative-weights (Hedge) step: `q'_i ∝ q_i exp(step * gains_i)`.
///
/// The exponent is stabilized by subtracting the largest gain before
/// exponentiation, so the update never overflows. Feeding negated gains turns
/// this into the loss-vector mirror-descent update used by the bandit solver.
pub fn hedge_step(q: &SimplexWeights, gains: &[f64], step: f64) -> Result<SimplexWeights> {
    if gains.len() != q.len() {
        return Err(Error::invalid(format!(
            "gains length {} does not match simplex dimension {}",
            gains.len(),
            q.len()
        )));
    }
    if gains.iter().any(|g| !g.is_finite()) {
        return Err(Error::invalid("hedge gains must be finite"));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid(format!("hedge step must be positive, got {step}")));
    }
    let max_gain = gains.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut next: Vec<f64> = q
        .as_slice()
        .iter()
        .zip(gains)
        .map(|(&qi, &gi)| {
            let u = qi * (step * (gi - max_gain)).exp();
            u.max(SIMPLEX_FLOOR)
        })
        .collect();
    let sum: f64 = next.iter().sum();
    for u in &mut next {
        *u /= sum;
    }
    SimplexWeights::new(next)
}

/// Kullback-Leibler divergence, the Bregman distance of the entropy map.
pub fn kl_divergence(q: &SimplexWeights, q0: &SimplexWeights) -> Result<f64> {
    if q.len() != q0.len() {
        return Err(Error::invalid(format!(
            "KL divergence dimension mismatch: {} vs {}",
            q.len(),
            q0.len()
        )));
    }
    Ok(q.as_slice()
        .iter()
        .zip(q0.as_slice())
        .map(|(&a, &b)| a * (a / b).ln())
        .sum())
}
