//! The solver suite: full-draw stochastic mirror descent, the single-sample
//! uniform-index baseline, the bandit-based single-sample solver, weighted
//! mirror descent under non-uniform sampling, and the mini-batch stochastic
//! mirror-prox method, plus the analysis-prescribed step sizes and the
//! deterministic inner minimizer used by evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    self, grad_bernoulli_weighted, grad_full_draw, grad_uniform_index, ix_estimate, BernoulliForm,
};
use crate::geometry::{hedge_step, smd_step_euclidean, EuclideanBallDomain, SimplexWeights};
use crate::problem::{
    exact_risk_gradient, exact_risks, loss_gradient, loss_value, true_risk, GdroInstance,
    InstanceConstants, RiskEval,
};

/// Which solver a configuration targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// One sample from every distribution per round.
    SmdFull,
    /// One uniform-index sample per round, inverse-probability rescaled.
    SmdSingle,
    /// One sample per round, chosen by the weight player's bandit.
    OnlineBandit,
    /// Bernoulli non-uniform sampling against per-distribution budgets.
    WeightedNonuniform,
    /// Mini-batch mirror-prox against per-distribution budgets.
    MirrorProxMinibatch,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::SmdFull => "smd-full",
            Algorithm::SmdSingle => "smd-single",
            Algorithm::OnlineBandit => "online-bandit",
            Algorithm::WeightedNonuniform => "smd-weighted",
            Algorithm::MirrorProxMinibatch => "mirror-prox",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "smd-full" => Ok(Algorithm::SmdFull),
            "smd-single" => Ok(Algorithm::SmdSingle),
            "online-bandit" => Ok(Algorithm::OnlineBandit),
            "smd-weighted" => Ok(Algorithm::WeightedNonuniform),
            "mirror-prox" => Ok(Algorithm::MirrorProxMinibatch),
            other => Err(Error::invalid(format!("unknown algorithm '{other}'"))),
        }
    }

    /// Whether the solver consumes per-distribution budgets.
    pub fn needs_budgets(&self) -> bool {
        matches!(self, Algorithm::WeightedNonuniform | Algorithm::MirrorProxMinibatch)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Scale factors of the weighted objective together with the derived
/// mirror-prox parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleFactors {
    pub p: Vec<f64>,
    pub p_max: f64,
    pub omega_max: f64,
    pub l_tilde: f64,
    pub sigma_sq: f64,
    /// The absolute constant in the variance bound; configurable, default 1.
    pub c: f64,
}

fn check_budgets(budgets: &[u64]) -> Result<()> {
    if budgets.is_empty() {
        return Err(Error::invalid("budget vector must be non-empty"));
    }
    if budgets.iter().any(|&n| n == 0) {
        return Err(Error::invalid("budgets must be positive"));
    }
    if budgets.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::invalid("budgets must be sorted nonincreasing"));
    }
    Ok(())
}

/// The mirror-prox smoothness and variance parameters:
/// `Ltilde = 2 sqrt(2) p_max (D^2 L + D^2 G sqrt(ln m))` and
/// `sigma^2 = 2 c omega_max (kappa D^2 G^2 + ln^2 m)`.
pub fn mirror_prox_parameters(
    p_max: f64,
    omega_max: f64,
    constants: &InstanceConstants,
    ln_m: f64,
    c: f64,
) -> (f64, f64) {
    let d_sq = constants.d_squared;
    let g = constants.grad_bound;
    let l_tilde = 2.0
        * std::f64::consts::SQRT_2
        * p_max
        * (d_sq * constants.smoothness + d_sq * g * ln_m.sqrt());
    let sigma_sq = 2.0 * c * omega_max * (constants.kappa * d_sq * g * g + ln_m * ln_m);
    (l_tilde, sigma_sq)
}

impl ScaleFactors {
    fn derive(p: Vec<f64>, budgets: &[u64], constants: &InstanceConstants, c: f64) -> Self {
        let m = p.len();
        let ln_m = (m as f64).ln();
        let n_m = budgets[m - 1] as f64;
        let p_max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let omega_max = p
            .iter()
            .zip(budgets)
            .map(|(&pi, &ni)| pi * pi * n_m / ni as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        let (l_tilde, sigma_sq) = mirror_prox_parameters(p_max, omega_max, constants, ln_m, c);
        Self { p, p_max, omega_max, l_tilde, sigma_sq, c }
    }

    /// Budget-ratio scale factors `p_i = n_i / n_1` (non-uniform sampling).
    pub fn budget_ratios(budgets: &[u64], constants: &InstanceConstants, c: f64) -> Result<Self> {
        check_budgets(budgets)?;
        let n1 = budgets[0] as f64;
        let p = budgets.iter().map(|&ni| ni as f64 / n1).collect();
        Ok(Self::derive(p, budgets, constants, c))
    }

    /// Mirror-prox scale factors interpolating toward better-estimated risks:
    /// `p_i = (1/sqrt(n_m) + 1) / (1/sqrt(n_m) + sqrt(n_m / n_i))`.
    pub fn mirror_prox(budgets: &[u64], constants: &InstanceConstants, c: f64) -> Result<Self> {
        check_budgets(budgets)?;
        let n_m = budgets[budgets.len() - 1] as f64;
        let a = 1.0 / n_m.sqrt();
        let p = budgets.iter().map(|&ni| (a + 1.0) / (a + (n_m / ni as f64).sqrt())).collect();
        Ok(Self::derive(p, budgets, constants, c))
    }

    /// Unit scale factors with zero gradient variance: the exact-gradient
    /// (deterministic) mirror-prox mode.
    pub fn exact_mode(m: usize, constants: &InstanceConstants) -> Self {
        let budgets = vec![1u64; m];
        let mut s = Self::derive(vec![1.0; m], &budgets, constants, 1.0);
        s.sigma_sq = 0.0;
        s
    }
}

/// Fixed-horizon solver configuration. Step sizes can come from
/// [`auto_step_sizes`] or be overridden field by field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Horizon: rounds for the balanced solvers, `n_1` for weighted mirror
    /// descent, `floor(n_m / 2)` for mini-batch mirror-prox.
    pub t: u64,
    pub eta_w: f64,
    pub eta_q: f64,
    /// Implicit-exploration coefficient (bandit solver only).
    pub gamma: f64,
    /// Checkpoint stride in rounds; 0 selects `max(100, t / 50)`.
    pub checkpoint_stride: u64,
    pub seed: u64,
    /// Monte-Carlo draws per risk estimate on generative oracles.
    pub eval_samples: u64,
    /// Scale factors, populated for the budgeted solvers.
    pub scales: Option<ScaleFactors>,
}

impl SolverConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_stride(mut self, stride: u64) -> Self {
        self.checkpoint_stride = stride;
        self
    }

    pub fn with_eval_samples(mut self, samples: u64) -> Self {
        self.eval_samples = samples;
        self
    }

    fn stride_for(&self, t: u64) -> u64 {
        if self.checkpoint_stride > 0 {
            self.checkpoint_stride
        } else {
            100u64.max(t / 50).max(1)
        }
    }
}

// ---- prescribed step-size formulas ----------------------------------------------

/// Full-draw mirror-descent step sizes:
/// `eta_w = D^2 sqrt(8 / (5 T (D^2 G^2 + ln m)))` and
/// `eta_q = ln m * sqrt(8 / (5 T (D^2 G^2 + ln m)))`.
pub fn full_draw_step_sizes(d_squared: f64, grad_bound: f64, ln_m: f64, t: u64) -> (f64, f64) {
    let base = (8.0 / (5.0 * t as f64 * (d_squared * grad_bound * grad_bound + ln_m))).sqrt();
    (d_squared * base, ln_m * base)
}

/// Bandit-solver step sizes: `eta_w = 2 D / (G sqrt(5 T))`,
/// `eta_q = sqrt(ln m / (m T))`, and the IX coefficient `gamma = eta_q / 2`.
pub fn bandit_step_sizes(d_squared: f64, grad_bound: f64, m: usize, t: u64) -> (f64, f64, f64) {
    let eta_w = 2.0 * d_squared.sqrt() / (grad_bound * (5.0 * t as f64).sqrt());
    let eta_q = ((m as f64).ln() / (m as f64 * t as f64)).sqrt();
    (eta_w, eta_q, eta_q / 2.0)
}

/// Mirror-prox step sizes:
/// `eta_w = 2 D^2 min(1 / (sqrt(3) Ltilde), 2 / sqrt(7 sigma^2 n_m))`, with
/// `eta_q` sharing the min and carrying `ln m` instead of `D^2`.
pub fn mirror_prox_step_sizes(
    d_squared: f64,
    ln_m: f64,
    l_tilde: f64,
    sigma_sq: f64,
    n_m: u64,
) -> (f64, f64) {
    let a = 1.0 / (3.0f64.sqrt() * l_tilde);
    let b = if sigma_sq > 0.0 {
        2.0 / (7.0 * sigma_sq * n_m as f64).sqrt()
    } else {
        f64::INFINITY
    };
    let k = a.min(b);
    (2.0 * d_squared * k, 2.0 * k * ln_m)
}

/// Analysis-prescribed configuration for a solver on an instance.
///
/// `t` is the requested horizon for the balanced solvers; budgeted solvers
/// derive their horizon from `budgets` (pass `t = 0`, or the derived value).
/// The single-sample baseline reuses the full-draw formulas shrunk by `m`,
/// matching the `m`-fold blow-up of its gradient norms.
pub fn auto_step_sizes(
    instance: &GdroInstance,
    algorithm: Algorithm,
    t: u64,
    budgets: Option<&[u64]>,
    c: f64,
) -> Result<SolverConfig> {
    let m = instance.m();
    let ln_m = (m as f64).ln();
    let k = &instance.constants;
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::invalid(format!("variance constant c must be positive, got {c}")));
    }
    let mut config = SolverConfig {
        t,
        eta_w: 0.0,
        eta_q: 0.0,
        gamma: 0.0,
        checkpoint_stride: 0,
        seed: 0,
        eval_samples: 1000,
        scales: None,
    };
    match algorithm {
        Algorithm::SmdFull | Algorithm::SmdSingle => {
            if t == 0 {
                return Err(Error::invalid("horizon t must be at least 1"));
            }
            let (ew, eq) = full_draw_step_sizes(k.d_squared, k.grad_bound, ln_m, t);
            let scale = if algorithm == Algorithm::SmdSingle { m as f64 } else { 1.0 };
            config.eta_w = ew / scale;
            config.eta_q = eq / scale;
        }
        Algorithm::OnlineBandit => {
            if t == 0 {
                return Err(Error::invalid("horizon t must be at least 1"));
            }
            let (ew, eq, gamma) = bandit_step_sizes(k.d_squared, k.grad_bound, m, t);
            config.eta_w = ew;
            config.eta_q = eq;
            config.gamma = gamma;
        }
        Algorithm::WeightedNonuniform => {
            let budgets =
                budgets.ok_or_else(|| Error::invalid("weighted mirror descent needs budgets"))?;
            check_budgets(budgets)?;
            if budgets.len() != m {
                return Err(Error::invalid("one budget per distribution required"));
            }
            let n1 = budgets[0];
            if t != 0 && t != n1 {
                return Err(Error::invalid(format!(
                    "weighted mirror descent runs n_1 = {n1} rounds, got t = {t}"
                )));
            }
            config.t = n1;
            let (ew, eq) = full_draw_step_sizes(k.d_squared, k.grad_bound, ln_m, n1);
            config.eta_w = ew;
            config.eta_q = eq;
            config.scales = Some(ScaleFactors::budget_ratios(budgets, k, c)?);
        }
        Algorithm::MirrorProxMinibatch => {
            let budgets = budgets.ok_or_else(|| Error::invalid("mirror-prox needs budgets"))?;
            check_budgets(budgets)?;
            if budgets.len() != m {
                return Err(Error::invalid("one budget per distribution required"));
            }
            let n_m = budgets[budgets.len() - 1];
            if n_m < 2 {
                return Err(Error::invalid("mirror-prox needs n_m >= 2"));
            }
            let rounds = n_m / 2;
            if t != 0 && t != rounds {
                return Err(Error::invalid(format!(
                    "mirror-prox runs floor(n_m / 2) = {rounds} rounds, got t = {t}"
                )));
            }
            config.t = rounds;
            let scales = ScaleFactors::mirror_prox(budgets, k, c)?;
            let (ew, eq) =
                mirror_prox_step_sizes(k.d_squared, ln_m, scales.l_tilde, scales.sigma_sq, n_m);
            config.eta_w = ew;
            config.eta_q = eq;
            config.scales = Some(scales);
        }
    }
    Ok(config)
}

/// Analysis-prescribed configuration for the exact-gradient mirror-prox mode
/// (zero gradient variance, horizon chosen freely).
pub fn auto_step_sizes_exact_mirror_prox(instance: &GdroInstance, t: u64) -> Result<SolverConfig> {
    if t == 0 {
        return Err(Error::invalid("horizon t must be at least 1"));
    }
    let m = instance.m();
    let scales = ScaleFactors::exact_mode(m, &instance.constants);
    let (eta_w, eta_q) = mirror_prox_step_sizes(
        instance.constants.d_squared,
        (m as f64).ln(),
        scales.l_tilde,
        scales.sigma_sq,
        2 * t,
    );
    Ok(SolverConfig {
        t,
        eta_w,
        eta_q,
        gamma: 0.0,
        checkpoint_stride: 0,
        seed: 0,
        eval_samples: 1000,
        scales: Some(scales),
    })
}

// ---- traces --------------------------------------------------------------------

/// State captured at one checkpoint: the running averaged iterates, the
/// cumulative training draws, and risk estimates of the averaged model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCheckpoint {
    pub iteration: u64,
    pub samples_per_group: Vec<u64>,
    pub w_bar: Vec<f64>,
    pub q_bar: Vec<f64>,
    pub risks: Vec<f64>,
    pub max_risk: f64,
}

/// Full record of one solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub algorithm: String,
    pub seed: u64,
    pub t: u64,
    pub checkpoints: Vec<TraceCheckpoint>,
    pub final_w: Vec<f64>,
    pub final_q: Vec<f64>,
}

impl SolverTrace {
    pub fn final_checkpoint(&self) -> &TraceCheckpoint {
        self.checkpoints.last().expect("a finished run has at least one checkpoint")
    }
}

/// Maximum entry; ties resolve to the lowest index by the strict comparison.
pub fn max_risk_of(risks: &[f64]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for &r in risks {
        if r > best {
            best = r;
        }
    }
    best
}

/// Streaming observer invoked as each checkpoint is produced.
pub type CheckpointHook<'a> = &'a mut dyn FnMut(&TraceCheckpoint) -> Result<()>;

struct RunState {
    w: Vec<f64>,
    q: SimplexWeights,
    w_sum: Vec<f64>,
    q_sum: Vec<f64>,
    count: u64,
}

impl RunState {
    fn new(instance: &GdroInstance) -> Result<Self> {
        let w = instance.domain.center();
        let q = SimplexWeights::uniform(instance.m())?;
        Ok(Self { w_sum: vec![0.0; w.len()], q_sum: vec![0.0; instance.m()], count: 0, w, q })
    }

    fn accumulate(&mut self, w: &[f64], q: &SimplexWeights) {
        for (s, x) in self.w_sum.iter_mut().zip(w) {
            *s += x;
        }
        for (s, x) in self.q_sum.iter_mut().zip(q.as_slice()) {
            *s += x;
        }
        self.count += 1;
    }

    fn accumulate_current(&mut self) {
        for (s, x) in self.w_sum.iter_mut().zip(&self.w) {
            *s += x;
        }
        for (s, x) in self.q_sum.iter_mut().zip(self.q.as_slice()) {
            *s += x;
        }
        self.count += 1;
    }

    fn averages(&self) -> (Vec<f64>, Vec<f64>) {
        let inv = 1.0 / self.count as f64;
        (
            self.w_sum.iter().map(|x| x * inv).collect(),
            self.q_sum.iter().map(|x| x * inv).collect(),
        )
    }
}

fn check_finite(w: &[f64], iteration: u64) -> Result<()> {
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("non-finite iterate at iteration {iteration}")));
    }
    Ok(())
}

fn risk_estimates(
    instance: &GdroInstance,
    w_bar: &[f64],
    eval_samples: u64,
    eval_rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    (0..instance.m())
        .map(|i| {
            if instance.oracles[i].examples().is_some() {
                true_risk(instance, i, w_bar, RiskEval::Exact)
            } else {
                true_risk(
                    instance,
                    i,
                    w_bar,
                    RiskEval::MonteCarlo { samples: eval_samples, rng: eval_rng },
                )
            }
        })
        .collect()
}

fn make_checkpoint(
    instance: &GdroInstance,
    state: &RunState,
    iteration: u64,
    eval_samples: u64,
    eval_rng: &mut ChaCha8Rng,
) -> Result<TraceCheckpoint> {
    let (w_bar, q_bar) = state.averages();
    check_finite(&w_bar, iteration)?;
    let risks = risk_estimates(instance, &w_bar, eval_samples, eval_rng)?;
    Ok(TraceCheckpoint {
        iteration,
        samples_per_group: instance.sample_counts(),
        max_risk: max_risk_of(&risks),
        w_bar,
        q_bar,
        risks,
    })
}

fn validate_common(instance: &GdroInstance, config: &SolverConfig) -> Result<()> {
    if config.t == 0 {
        return Err(Error::invalid("horizon t must be at least 1"));
    }
    if !(config.eta_w.is_finite() && config.eta_w > 0.0) {
        return Err(Error::invalid(format!("eta_w must be positive, got {}", config.eta_w)));
    }
    if instance.m() > 1 && !(config.eta_q.is_finite() && config.eta_q > 0.0) {
        return Err(Error::invalid(format!("eta_q must be positive, got {}", config.eta_q)));
    }
    if !instance.all_empirical() && config.eval_samples == 0 {
        return Err(Error::invalid(
            "generative oracles need eval_samples >= 1 for checkpoint risk estimates",
        ));
    }
    Ok(())
}

fn train_eval_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut train = ChaCha8Rng::seed_from_u64(seed);
    train.set_stream(0);
    let mut eval = ChaCha8Rng::seed_from_u64(seed);
    eval.set_stream(1);
    (train, eval)
}

/// Shared mirror-descent loop: per round, accumulate the current iterates,
/// obtain a gradient pair from `gradient`, and take the two SMD steps.
fn run_smd_loop<F>(
    instance: &mut GdroInstance,
    config: &SolverConfig,
    name: &str,
    mut gradient: F,
    mut hook: Option<CheckpointHook<'_>>,
) -> Result<SolverTrace>
where
    F: FnMut(
        &mut GdroInstance,
        &[f64],
        &SimplexWeights,
        &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>)>,
{
    validate_common(instance, config)?;
    instance.reset_counters();
    let (mut train_rng, mut eval_rng) = train_eval_rngs(config.seed);
    let mut state = RunState::new(instance)?;
    let stride = config.stride_for(config.t);
    let m = instance.m();
    let mut checkpoints = Vec::new();

    for t in 1..=config.t {
        state.accumulate_current();
        let (g_w, g_q) = gradient(instance, &state.w, &state.q, &mut train_rng)?;
        if g_w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient at iteration {t}")));
        }
        state.w = smd_step_euclidean(&state.w, &g_w, config.eta_w, &instance.domain)?;
        check_finite(&state.w, t)?;
        if m > 1 {
            if let Some(gains) = g_q {
                state.q = hedge_step(&state.q, &gains, config.eta_q)?;
            }
        }
        if t % stride == 0 || t == config.t {
            let cp = make_checkpoint(instance, &state, t, config.eval_samples, &mut eval_rng)?;
            if let Some(h) = &mut hook {
                h(&cp)?;
            }
            checkpoints.push(cp);
        }
    }
    let (final_w, final_q) = state.averages();
    Ok(SolverTrace {
        algorithm: name.to_string(),
        seed: config.seed,
        t: config.t,
        checkpoints,
        final_w,
        final_q,
    })
}

/// Full-draw stochastic mirror descent: one sample from every distribution
/// per round, Hedge on the weights. Consumes exactly `m * t` samples.
pub fn solve_smd_full(
    instance: &mut GdroInstance,
    config: &SolverConfig,
    hook: Option<CheckpointHook<'_>>,
) -> Result<SolverTrace> {
    run_smd_loop(
        instance,
        config,
        Algorithm::SmdFull.name(),
        |inst, w, q, rng| {
            let pair = grad_full_draw(inst, w, q, rng)?;
            Ok((pair.g_w, pair.g_q))
        },
        hook,
    )
}

/// Single-sample baseline: a uniform index per round with both gradient
/// estimates rescaled by `m`. Consumes exactly `t` samples.
pub fn solve_smd_single(
    instance: &mut GdroInstance,
    config: &SolverConfig,
    hook: Option<CheckpointHook<'_>>,
) -> Result<SolverTrace> {
    run_smd_loop(
        instance,
        config,
        Algorithm::SmdSingle.name(),
        |inst, w, q, rng| {
            let pair = grad_uniform_index(inst, w, q, rng)?;
            Ok((pair.g_w, pair.g_q))
        },
        hook,
    )
}

/// Bandit-based solver: the model player runs SMD on a single sample drawn
/// from the weight player's arm choice; the weight player runs the
/// implicit-exploration multiplicative update, reusing the same sample.
/// Consumes exactly `t` samples.
pub fn solve_online_bandit(
    instance: &mut GdroInstance,
    config: &SolverConfig,
    hook: Option<CheckpointHook<'_>>,
) -> Result<SolverTrace> {
    let m = instance.m();
    if m > 1 && !(config.gamma.is_finite() && config.gamma > 0.0) {
        return Err(Error::invalid(format!(
            "IX coefficient must be positive, got {}",
            config.gamma
        )));
    }
    let gamma = config.gamma;
    run_smd_loop(
        instance,
        config,
        Algorithm::OnlineBandit.name(),
        move |inst, w, q, rng| {
            let arm = estimators::sample_categorical(q, rng);
            let ex = inst.oracles[arm].draw_train(rng);
            let realized = loss_value(w, &ex, &inst.loss)?;
            let g_w = loss_gradient(w, &ex, &inst.loss)?;
            let est = ix_estimate(q, gamma, arm, realized)?;
            let gains: Vec<f64> = est.s_tilde.iter().map(|s| -s).collect();
            Ok((g_w, Some(gains)))
        },
        hook,
    )
}

/// Weighted mirror descent with non-uniform sampling: each round selects
/// distribution `i` with probability `p_i = n_i / n_1`, so the expected draw
/// count from `P_i` over the `n_1` rounds equals `n_i`.
pub fn solve_weighted_nonuniform(
    instance: &mut GdroInstance,
    budgets: &[u64],
    config: &SolverConfig,
    hook: Option<CheckpointHook<'_>>,
) -> Result<SolverTrace> {
    check_budgets(budgets)?;
    if budgets.len() != instance.m() {
        return Err(Error::invalid("one budget per distribution required"));
    }
    if config.t != budgets[0] {
        return Err(Error::invalid(format!(
            "weighted mirror descent runs n_1 = {} rounds, got t = {}",
            budgets[0], config.t
        )));
    }
    let p: Vec<f64> = match &config.scales {
        Some(s) => s.p.clone(),
        None => {
            let n1 = budgets[0] as f64;
            budgets.iter().map(|&ni| ni as f64 / n1).collect()
        }
    };
    run_smd_loop(
        instance,
        config,
        Algorithm::WeightedNonuniform.name(),
        move |inst, w, q, rng| {
            let pair = grad_bernoulli_weighted(inst, w, q, &p, BernoulliForm::Weighted, rng)?;
            Ok((pair.g_w, pair.g_q))
        },
        hook,
    )
}

/// One extragradient round: evaluate the gradient at the anchor, take the
/// half-step, evaluate the gradient at the half-step point, and take the
/// anchor-step -- both steps proximal to the same anchor.
///
/// Returns `(half_w, half_q, next_anchor_w, next_anchor_q)`. With identical
/// gradients at both evaluation points the two outputs coincide.
pub fn mirror_prox_round<F>(
    anchor_w: &[f64],
    anchor_q: &SimplexWeights,
    mut grad_at: F,
    eta_w: f64,
    eta_q: f64,
    domain: &EuclideanBallDomain,
) -> Result<(Vec<f64>, SimplexWeights, Vec<f64>, SimplexWeights)>
where
    F: FnMut(&[f64], &SimplexWeights) -> Result<(Vec<f64>, Vec<f64>)>,
{
    let m = anchor_q.len();
    let (g_w, g_q) = grad_at(anchor_w, anchor_q)?;
    let half_w = smd_step_euclidean(anchor_w, &g_w, eta_w, domain)?;
    let half_q = if m > 1 { hedge_step(anchor_q, &g_q, eta_q)? } else { anchor_q.clone() };

    let (g_w2, g_q2) = grad_at(&half_w, &half_q)?;
    let next_w = smd_step_euclidean(anchor_w, &g_w2, eta_w, domain)?;
    let next_q = if m > 1 { hedge_step(anchor_q, &g_q2, eta_q)? } else { anchor_q.clone() };
    Ok((half_w, half_q, next_w, next_q))
}

/// Per-distribution batch size for gradient call `call` (0-based) out of
/// `total_calls`, distributing the budget exactly: the first `budget mod
/// total_calls` calls carry one extra sample.
pub fn minibatch_schedule(budget: u64, total_calls: u64, call: u64) -> u64 {
    let base = budget / total_calls;
    let rem = budget % total_calls;
    base + u64::from(call < rem)
}

/// Mini-batch stochastic mirror-prox for the weighted objective: runs
/// `floor(n_m / 2)` rounds, draws two mini-batches per distribution per round
/// (sizes scheduled so each budget is consumed exactly), and averages the
/// half-step iterates starting from the second.
pub fn solve_mirror_prox_minibatch(
    instance: &mut GdroInstance,
    budgets: &[u64],
    config: &SolverConfig,
    mut hook: Option<CheckpointHook<'_>>,
) -> Result<SolverTrace> {
    check_budgets(budgets)?;
    if budgets.len() != instance.m() {
        return Err(Error::invalid("one budget per distribution required"));
    }
    let n_m = budgets[budgets.len() - 1];
    if n_m < 2 {
        return Err(Error::invalid("mirror-prox needs n_m >= 2"));
    }
    let rounds = n_m / 2;
    if config.t != rounds {
        return Err(Error::invalid(format!(
            "mirror-prox runs floor(n_m / 2) = {rounds} rounds, got t = {}",
            config.t
        )));
    }
    validate_common(instance, config)?;
    let scales = match &config.scales {
        Some(s) => s.clone(),
        None => ScaleFactors::mirror_prox(budgets, &instance.constants, 1.0)?,
    };
    if scales.p.len() != instance.m() {
        return Err(Error::invalid("scale factors must cover every distribution"));
    }

    instance.reset_counters();
    let (mut train_rng, mut eval_rng) = train_eval_rngs(config.seed);
    let mut state = RunState::new(instance)?;
    let total_calls = 2 * rounds;
    let stride = config.stride_for(rounds);
    let domain = instance.domain;
    let mut checkpoints = Vec::new();

    for round in 1..=rounds {
        let anchor_w = state.w.clone();
        let anchor_q = state.q.clone();
        let mut call = 2 * (round - 1);
        let (half_w, half_q, next_w, next_q) = mirror_prox_round(
            &anchor_w,
            &anchor_q,
            |w, q| {
                let sizes: Vec<u64> =
                    budgets.iter().map(|&n| minibatch_schedule(n, total_calls, call)).collect();
                call += 1;
                let pair = estimators::grad_minibatch_weighted(
                    instance,
                    w,
                    q,
                    &scales.p,
                    &sizes,
                    &mut train_rng,
                )?;
                Ok((pair.g_w, pair.g_q.expect("minibatch pair always carries g_q")))
            },
            config.eta_w,
            config.eta_q,
            &domain,
        )?;
        check_finite(&half_w, round)?;
        check_finite(&next_w, round)?;
        state.accumulate(&half_w, &half_q);
        state.w = next_w;
        state.q = next_q;

        if round % stride == 0 || round == rounds {
            let cp = make_checkpoint(instance, &state, round, config.eval_samples, &mut eval_rng)?;
            if let Some(h) = &mut hook {
                h(&cp)?;
            }
            checkpoints.push(cp);
        }
    }
    let (final_w, final_q) = state.averages();
    Ok(SolverTrace {
        algorithm: Algorithm::MirrorProxMinibatch.name().to_string(),
        seed: config.seed,
        t: rounds,
        checkpoints,
        final_w,
        final_q,
    })
}

/// Exact-gradient mirror-prox on an empirical instance: both half-step
/// gradients come from the full empirical risks and no samples are consumed.
/// Diagnostic mode for the deterministic convergence rate.
pub fn solve_mirror_prox_exact(
    instance: &mut GdroInstance,
    config: &SolverConfig,
    mut hook: Option<CheckpointHook<'_>>,
) -> Result<SolverTrace> {
    if !instance.all_empirical() {
        return Err(Error::invalid("exact-gradient mirror-prox needs empirical oracles"));
    }
    validate_common(instance, config)?;
    let m = instance.m();
    let p: Vec<f64> = match &config.scales {
        Some(s) => s.p.clone(),
        None => vec![1.0; m],
    };
    instance.reset_counters();
    let (_, mut eval_rng) = train_eval_rngs(config.seed);
    let mut state = RunState::new(instance)?;
    let stride = config.stride_for(config.t);
    let mut checkpoints = Vec::new();

    for round in 1..=config.t {
        let anchor_w = state.w.clone();
        let anchor_q = state.q.clone();
        let (half_w, half_q, next_w, next_q) = mirror_prox_round(
            &anchor_w,
            &anchor_q,
            |w, q| {
                let risks = exact_risks(instance, w)?;
                let mut g_w = vec![0.0; w.len()];
                for i in 0..m {
                    let gi = exact_risk_gradient(instance, i, w)?;
                    let coef = q[i] * p[i];
                    for (a, b) in g_w.iter_mut().zip(&gi) {
                        *a += coef * b;
                    }
                }
                let g_q: Vec<f64> = risks.iter().zip(&p).map(|(r, pi)| r * pi).collect();
                Ok((g_w, g_q))
            },
            config.eta_w,
            config.eta_q,
            &instance.domain,
        )?;
        check_finite(&next_w, round)?;
        state.accumulate(&half_w, &half_q);
        state.w = next_w;
        state.q = next_q;
        if round % stride == 0 || round == config.t {
            let cp = make_checkpoint(instance, &state, round, config.eval_samples, &mut eval_rng)?;
            if let Some(h) = &mut hook {
                h(&cp)?;
            }
            checkpoints.push(cp);
        }
    }
    let (final_w, final_q) = state.averages();
    Ok(SolverTrace {
        algorithm: "mirror-prox-exact".to_string(),
        seed: config.seed,
        t: config.t,
        checkpoints,
        final_w,
        final_q,
    })
}

// ---- deterministic inner minimizer ------------------------------------------------

/// Minimize a smooth convex function over the centered ball by projected
/// gradient descent with Nesterov momentum and gradient restarts.
///
/// Stops when the projected-gradient mapping norm drops below `tol` or after
/// `iters` gradient evaluations. Returns the final point and its value.
pub fn minimize_on_ball<Fv, Fg>(
    mut value: Fv,
    mut grad: Fg,
    dim: usize,
    radius: f64,
    lipschitz: f64,
    iters: u64,
    tol: f64,
) -> Result<(Vec<f64>, f64)>
where
    Fv: FnMut(&[f64]) -> Result<f64>,
    Fg: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(lipschitz.is_finite() && lipschitz > 0.0) {
        return Err(Error::invalid("smoothness constant must be positive"));
    }
    let step = 1.0 / lipschitz;
    let mut x = vec![0.0; dim];
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    for _ in 0..iters {
        let g = grad(&y)?;
        let moved: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - step * gi).collect();
        let x_next = crate::geometry::project_ball(&moved, radius)?;
        let mapping_norm = lipschitz
            * crate::geometry::norm2(
                &y.iter().zip(&x_next).map(|(a, b)| a - b).collect::<Vec<_>>(),
            );
        let delta: Vec<f64> = x_next.iter().zip(&x).map(|(a, b)| a - b).collect();
        // gradient restart: momentum has overshot when the move opposes -g
        let overshoot = crate::geometry::dot(&g, &delta) > 0.0;
        let m_next =
            if overshoot { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) };
        let beta = if overshoot { 0.0 } else { (momentum - 1.0) / m_next };
        y = x_next.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
        x = x_next;
        momentum = m_next;
        if mapping_norm <= tol {
            break;
        }
    }
    let v = value(&x)?;
    Ok((x, v))
}

/// Deterministic minimizer of the (optionally scaled) mixture risk
/// `sum_i q_i p_i R_i(w)` over the ball: the inner term of the duality gap.
#[allow(clippy::too_many_arguments)]
pub fn inner_min_oracle(
    instance: &GdroInstance,
    q_fixed: &SimplexWeights,
    scales: Option<&[f64]>,
    iters: u64,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    if !instance.all_empirical() {
        return Err(Error::invalid("inner minimization needs empirical oracles"));
    }
    if q_fixed.len() != instance.m() {
        return Err(Error::invalid("weight vector does not match distribution count"));
    }
    let m = instance.m();
    let p: Vec<f64> = match scales {
        Some(p) => {
            if p.len() != m {
                return Err(Error::invalid("scale factors must cover every distribution"));
            }
            p.to_vec()
        }
        None => vec![1.0; m],
    };
    let weight_sum: f64 = (0..m).map(|i| q_fixed[i] * p[i]).sum();
    let lipschitz = instance.constants.smoothness * weight_sum.max(1e-12);
    minimize_on_ball(
        |w| {
            let risks = exact_risks(instance, w)?;
            Ok((0..m).map(|i| q_fixed[i] * p[i] * risks[i]).sum())
        },
        |w| {
            let mut g = vec![0.0; w.len()];
            for i in 0..m {
                let gi = exact_risk_gradient(instance, i, w)?;
                let coef = q_fixed[i] * p[i];
                for (a, b) in g.iter_mut().zip(&gi) {
                    *a += coef * b;
                }
            }
            Ok(g)
        },
        instance.dimension(),
        instance.domain.radius,
        lipschitz,
        iters,
        tol,
    )
}
