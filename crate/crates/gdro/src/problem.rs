//! Loss model, distribution oracles, and the assembled problem instance with
//! its analytic constants.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, norm2, EuclideanBallDomain};

/// One labeled observation: a bounded feature vector and a ±1 label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: f64,
}

impl Example {
    pub fn new(features: Vec<f64>, label: f64) -> Result<Self> {
        if label != 1.0 && label != -1.0 {
            return Err(Error::invalid(format!("label must be +1 or -1, got {label}")));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("example features must be finite"));
        }
        Ok(Self { features, label })
    }
}

/// Normalized logistic loss: `log(1 + exp(-y <w, x>)) / normalizer`.
///
/// The normalizer is chosen by the instance builder so that the loss stays in
/// [0, 1] for every model in the domain and every bounded feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub normalizer: f64,
}

impl LossModel {
    pub fn new(normalizer: f64) -> Result<Self> {
        if !(normalizer.is_finite() && normalizer > 0.0) {
            return Err(Error::invalid(format!("loss normalizer must be positive, got {normalizer}")));
        }
        Ok(Self { normalizer })
    }
}

/// Numerically stable `log(1 + exp(u))`.
fn log1p_exp(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Normalized logistic loss of `model` on `ex`, clamped to [0, 1].
pub fn loss_value(model: &[f64], ex: &Example, loss: &LossModel) -> Result<f64> {
    if model.len() != ex.features.len() {
        return Err(Error::invalid(format!(
            "model dimension {} does not match example dimension {}",
            model.len(),
            ex.features.len()
        )));
    }
    let margin = ex.label * dot(model, &ex.features);
    Ok((log1p_exp(-margin) / loss.normalizer).clamp(0.0, 1.0))
}

/// Gradient of the normalized logistic loss:
/// `-y * sigmoid(-y <w, x>) * x / normalizer`.
pub fn loss_gradient(model: &[f64], ex: &Example, loss: &LossModel) -> Result<Vec<f64>> {
    if model.len() != ex.features.len() {
        return Err(Error::invalid(format!(
            "model dimension {} does not match example dimension {}",
            model.len(),
            ex.features.len()
        )));
    }
    let margin = ex.label * dot(model, &ex.features);
    let coef = -ex.label * sigmoid(-margin) / loss.normalizer;
    Ok(ex.features.iter().map(|x| coef * x).collect())
}

/// Accumulate `coef * grad(loss)` into `out` without allocating.
pub(crate) fn add_loss_gradient(
    out: &mut [f64],
    coef: f64,
    model: &[f64],
    ex: &Example,
    loss: &LossModel,
) {
    let margin = ex.label * dot(model, &ex.features);
    let c = coef * (-ex.label * sigmoid(-margin) / loss.normalizer);
    for (o, x) in out.iter_mut().zip(&ex.features) {
        *o += c * x;
    }
}

/// A sampling oracle for one group distribution.
///
/// Training draws (`draw_train`) increment the sample counter; evaluation
/// draws (`draw_eval`, `true_risk`) never touch it and use a caller-supplied
/// RNG stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum OracleKind {
    /// Uniform sampling with replacement from a stored list.
    Empirical { examples: Vec<Example> },
    /// Planted linear model with Gaussian features and label flips.
    SyntheticGenerative {
        planted: Vec<f64>,
        flip_rate: f64,
        feature_bound: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionOracle {
    pub kind: OracleKind,
    samples_drawn: u64,
}

impl DistributionOracle {
    pub fn empirical(examples: Vec<Example>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::invalid("empirical oracle needs at least one example"));
        }
        let d = examples[0].features.len();
        if examples.iter().any(|e| e.features.len() != d) {
            return Err(Error::invalid("empirical oracle examples must share one dimension"));
        }
        Ok(Self { kind: OracleKind::Empirical { examples }, samples_drawn: 0 })
    }

    pub fn synthetic(planted: Vec<f64>, flip_rate: f64, feature_bound: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&flip_rate) {
            return Err(Error::invalid(format!("flip rate must be in [0,1), got {flip_rate}")));
        }
        if !(feature_bound.is_finite() && feature_bound > 0.0) {
            return Err(Error::invalid("feature bound must be positive"));
        }
        Ok(Self {
            kind: OracleKind::SyntheticGenerative { planted, flip_rate, feature_bound },
            samples_drawn: 0,
        })
    }

    pub fn dimension(&self) -> usize {
        match &self.kind {
            OracleKind::Empirical { examples } => examples[0].features.len(),
            OracleKind::SyntheticGenerative { planted, .. } => planted.len(),
        }
    }

    /// Number of training draws made so far (budget accounting).
    pub fn samples_drawn(&self) -> u64 {
        self.samples_drawn
    }

    pub fn reset_counter(&mut self) {
        self.samples_drawn = 0;
    }

    /// Stored examples, when the oracle is empirical.
    pub fn examples(&self) -> Option<&[Example]> {
        match &self.kind {
            OracleKind::Empirical { examples } => Some(examples),
            OracleKind::SyntheticGenerative { .. } => None,
        }
    }

    fn generate<R: Rng>(planted: &[f64], flip_rate: f64, bound: f64, rng: &mut R) -> Example {
        let mut x: Vec<f64> = (0..planted.len())
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        let n = norm2(&x);
        if n > bound {
            let s = bound / n;
            for v in &mut x {
                *v *= s;
            }
        }
        let raw = dot(&x, planted);
        let mut label = if raw >= 0.0 { 1.0 } else { -1.0 };
        if rng.random::<f64>() < flip_rate {
            label = -label;
        }
        Example { features: x, label }
    }

    /// Draw one training example; counts against the budget.
    pub fn draw_train<R: Rng>(&mut self, rng: &mut R) -> Example {
        self.samples_drawn += 1;
        match &self.kind {
            OracleKind::Empirical { examples } => {
                examples[rng.random_range(0..examples.len())].clone()
            }
            OracleKind::SyntheticGenerative { planted, flip_rate, feature_bound } => {
                Self::generate(planted, *flip_rate, *feature_bound, rng)
            }
        }
    }

    /// Draw one evaluation example; never touches the budget counter.
    pub fn draw_eval<R: Rng>(&self, rng: &mut R) -> Example {
        match &self.kind {
            OracleKind::Empirical { examples } => {
                examples[rng.random_range(0..examples.len())].clone()
            }
            OracleKind::SyntheticGenerative { planted, flip_rate, feature_bound } => {
                Self::generate(planted, *flip_rate, *feature_bound, rng)
            }
        }
    }
}

/// Analytic constants of an instance, derived from the domain radius and the
/// feature bound so the boundedness and smoothness assumptions hold exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceConstants {
    /// Squared mirror-map diameter of the model domain (`radius^2 / 2`).
    pub d_squared: f64,
    /// Uniform bound on the loss-gradient norm.
    pub grad_bound: f64,
    /// Smoothness constant of every risk function.
    pub smoothness: f64,
    /// Norm-regularity constant of the dual norm (1 for Euclidean).
    pub kappa: f64,
    /// Bound on feature-vector norms, enforced by preprocessing.
    pub feature_bound: f64,
}

/// One group-robust problem: `m` oracles, a shared loss model, the model
/// domain, and the derived constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GdroInstance {
    pub oracles: Vec<DistributionOracle>,
    pub loss: LossModel,
    pub domain: EuclideanBallDomain,
    pub constants: InstanceConstants,
}

impl GdroInstance {
    /// Assemble an instance, deriving the loss normalizer and the constants
    /// from the domain radius and the feature bound:
    /// `normalizer = log(1 + exp(radius * feature_bound))`, which keeps the
    /// normalized loss in [0, 1] without clipping, and then
    /// `G = feature_bound / normalizer`, `L = feature_bound^2 / (4 normalizer)`.
    pub fn assemble(
        oracles: Vec<DistributionOracle>,
        domain: EuclideanBallDomain,
        feature_bound: f64,
    ) -> Result<Self> {
        if oracles.is_empty() {
            return Err(Error::invalid("instance needs at least one distribution"));
        }
        if oracles.iter().any(|o| o.dimension() != domain.dimension) {
            return Err(Error::invalid("all oracles must share the domain dimension"));
        }
        if !(feature_bound.is_finite() && feature_bound > 0.0) {
            return Err(Error::invalid("feature bound must be positive"));
        }
        let normalizer = log1p_exp(domain.radius * feature_bound);
        let constants = InstanceConstants {
            d_squared: domain.diameter_sq(),
            grad_bound: feature_bound / normalizer,
            smoothness: feature_bound * feature_bound / (4.0 * normalizer),
            kappa: 1.0,
            feature_bound,
        };
        Ok(Self { oracles, loss: LossModel::new(normalizer)?, domain, constants })
    }

    /// Number of distributions.
    pub fn m(&self) -> usize {
        self.oracles.len()
    }

    pub fn dimension(&self) -> usize {
        self.domain.dimension
    }

    /// Training-draw counters for all oracles.
    pub fn sample_counts(&self) -> Vec<u64> {
        self.oracles.iter().map(|o| o.samples_drawn()).collect()
    }

    pub fn reset_counters(&mut self) {
        for o in &mut self.oracles {
            o.reset_counter();
        }
    }

    /// True whenever every oracle carries an explicit example list.
    pub fn all_empirical(&self) -> bool {
        self.oracles.iter().all(|o| o.examples().is_some())
    }
}

/// How to estimate a risk value in [`true_risk`].
pub enum RiskEval<'a> {
    /// Exact average over the empirical support (empirical oracles only).
    Exact,
    /// Monte-Carlo average with the given draw count on the evaluation
    /// stream; never charges the training budget.
    MonteCarlo { samples: u64, rng: &'a mut ChaCha8Rng },
}

/// Risk of `model` on distribution `i`: the exact empirical mean, or a
/// Monte-Carlo estimate for generative oracles.
pub fn true_risk(
    instance: &GdroInstance,
    i: usize,
    model: &[f64],
    eval: RiskEval<'_>,
) -> Result<f64> {
    let oracle = instance
        .oracles
        .get(i)
        .ok_or_else(|| Error::invalid(format!("distribution index {i} out of range")))?;
    match eval {
        RiskEval::Exact => {
            let examples = oracle.examples().ok_or_else(|| {
                Error::invalid("exact risk requires an empirical oracle; pass a Monte-Carlo sample count")
            })?;
            let mut acc = 0.0;
            for ex in examples {
                acc += loss_value(model, ex, &instance.loss)?;
            }
            Ok(acc / examples.len() as f64)
        }
        RiskEval::MonteCarlo { samples, rng } => {
            if samples == 0 {
                return Err(Error::invalid("Monte-Carlo risk needs a positive sample count"));
            }
            let mut acc = 0.0;
            for _ in 0..samples {
                let ex = oracle.draw_eval(rng);
                acc += loss_value(model, &ex, &instance.loss)?;
            }
            Ok(acc / samples as f64)
        }
    }
}

/// Exact per-group risks over empirical supports.
pub fn exact_risks(instance: &GdroInstance, model: &[f64]) -> Result<Vec<f64>> {
    (0..instance.m())
        .map(|i| true_risk(instance, i, model, RiskEval::Exact))
        .collect()
}

/// Full gradient of the exact empirical risk of distribution `i`.
pub fn exact_risk_gradient(instance: &GdroInstance, i: usize, model: &[f64]) -> Result<Vec<f64>> {
    let oracle = instance
        .oracles
        .get(i)
        .ok_or_else(|| Error::invalid(format!("distribution index {i} out of range")))?;
    let examples = oracle
        .examples()
        .ok_or_else(|| Error::invalid("exact risk gradient requires an empirical oracle"))?;
    let mut g = vec![0.0; model.len()];
    let coef = 1.0 / examples.len() as f64;
    for ex in examples {
        add_loss_gradient(&mut g, coef, model, ex, &instance.loss);
    }
    Ok(g)
}
