//! Stochastic-gradient constructions for the saddle-point objective: the
//! full-draw pair, the sampled-index simplification, the uniform-index
//! baseline estimator, the implicit-exploration loss estimator, and the
//! Bernoulli / mini-batch weighted variants used under sample budgets.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::SimplexWeights;
use crate::problem::{add_loss_gradient, loss_value, Example, GdroInstance, LossModel};

/// One stochastic gradient evaluation: the model-side estimate, the
/// weight-side estimate when the construction produces one, and the number of
/// training draws charged to each distribution.
#[derive(Debug, Clone)]
pub struct GradientPair {
    pub g_w: Vec<f64>,
    pub g_q: Option<Vec<f64>>,
    pub samples_used: Vec<u64>,
}

/// Implicit-exploration estimate of the reward vector: a single nonzero entry
/// at the chosen arm.
#[derive(Debug, Clone)]
pub struct IxEstimate {
    pub s_tilde: Vec<f64>,
    pub chosen_arm: usize,
}

/// Draw an index from the categorical distribution `q` by CDF inversion.
pub(crate) fn sample_categorical<R: Rng>(q: &SimplexWeights, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &qi) in q.as_slice().iter().enumerate() {
        acc += qi;
        if u < acc {
            return i;
        }
    }
    q.len() - 1
}

fn check_q(instance: &GdroInstance, q: &SimplexWeights) -> Result<()> {
    if q.len() != instance.m() {
        return Err(Error::invalid(format!(
            "weight vector has {} entries for {} distributions",
            q.len(),
            instance.m()
        )));
    }
    Ok(())
}

// ---- pure constructions (fixed draws) --------------------------------------

/// Full-draw pair from one example per distribution:
/// `g_w = sum_i q_i grad l(w; z_i)`, `g_q = (l(w; z_1), ..., l(w; z_m))`.
pub fn full_draw_pair(
    w: &[f64],
    q: &SimplexWeights,
    draws: &[Example],
    loss: &LossModel,
) -> Result<GradientPair> {
    let m = q.len();
    if draws.len() != m {
        return Err(Error::invalid("full-draw pair needs one example per distribution"));
    }
    let mut g_w = vec![0.0; w.len()];
    let mut g_q = vec![0.0; m];
    for (i, ex) in draws.iter().enumerate() {
        add_loss_gradient(&mut g_w, q[i], w, ex, loss);
        g_q[i] = loss_value(w, ex, loss)?;
    }
    Ok(GradientPair { g_w, g_q: Some(g_q), samples_used: vec![1; m] })
}

/// Uniform-index pair: `g_w = q_i m grad l`, `g_q = m l e_i` for the drawn
/// index `i`.
pub fn uniform_index_pair(
    w: &[f64],
    q: &SimplexWeights,
    chosen: usize,
    ex: &Example,
    loss: &LossModel,
) -> Result<GradientPair> {
    let m = q.len();
    if chosen >= m {
        return Err(Error::invalid(format!("chosen index {chosen} out of range for m={m}")));
    }
    let mut g_w = vec![0.0; w.len()];
    add_loss_gradient(&mut g_w, q[chosen] * m as f64, w, ex, loss);
    let mut g_q = vec![0.0; m];
    g_q[chosen] = m as f64 * loss_value(w, ex, loss)?;
    let mut samples = vec![0u64; m];
    samples[chosen] = 1;
    Ok(GradientPair { g_w, g_q: Some(g_q), samples_used: samples })
}

/// Selector for the Bernoulli-subset constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BernoulliForm {
    /// Plain weighted form: gradients of the scaled objective.
    Weighted,
    /// Inverse-probability form: unbiased for the unscaled objective, at the
    /// cost of a norm blow-up.
    InverseProbability,
}

/// Bernoulli-subset pair from the realized selections (one optional example
/// per distribution).
pub fn bernoulli_pair(
    w: &[f64],
    q: &SimplexWeights,
    selected: &[Option<Example>],
    probs: &[f64],
    form: BernoulliForm,
    loss: &LossModel,
) -> Result<GradientPair> {
    let m = q.len();
    if selected.len() != m || probs.len() != m {
        return Err(Error::invalid("selection and probability vectors must have length m"));
    }
    let mut g_w = vec![0.0; w.len()];
    let mut g_q = vec![0.0; m];
    let mut samples = vec![0u64; m];
    for i in 0..m {
        if let Some(ex) = &selected[i] {
            let scale = match form {
                BernoulliForm::Weighted => 1.0,
                BernoulliForm::InverseProbability => 1.0 / probs[i],
            };
            add_loss_gradient(&mut g_w, q[i] * scale, w, ex, loss);
            g_q[i] = scale * loss_value(w, ex, loss)?;
            samples[i] = 1;
        }
    }
    Ok(GradientPair { g_w, g_q: Some(g_q), samples_used: samples })
}

/// Mini-batch weighted pair from realized batches:
/// `g_w = sum_i q_i p_i mean_j grad l(w; z_ij)`, `g_q_i = p_i mean_j l(w; z_ij)`.
pub fn minibatch_pair(
    w: &[f64],
    q: &SimplexWeights,
    batches: &[Vec<Example>],
    p: &[f64],
    loss: &LossModel,
) -> Result<GradientPair> {
    let m = q.len();
    if batches.len() != m || p.len() != m {
        return Err(Error::invalid("batches and scale factors must have length m"));
    }
    let mut g_w = vec![0.0; w.len()];
    let mut g_q = vec![0.0; m];
    let mut samples = vec![0u64; m];
    for i in 0..m {
        if batches[i].is_empty() {
            return Err(Error::invalid(format!("mini-batch for distribution {i} is empty")));
        }
        let inv = 1.0 / batches[i].len() as f64;
        let mut mean_loss = 0.0;
        for ex in &batches[i] {
            add_loss_gradient(&mut g_w, q[i] * p[i] * inv, w, ex, loss);
            mean_loss += loss_value(w, ex, loss)?;
        }
        g_q[i] = p[i] * mean_loss * inv;
        samples[i] = batches[i].len() as u64;
    }
    Ok(GradientPair { g_w, g_q: Some(g_q), samples_used: samples })
}

// ---- sampling wrappers -------------------------------------------------------

/// Draw one example from every distribution and build the full pair.
pub fn grad_full_draw<R: Rng>(
    instance: &mut GdroInstance,
    w: &[f64],
    q: &SimplexWeights,
    rng: &mut R,
) -> Result<GradientPair> {
    check_q(instance, q)?;
    let draws: Vec<Example> =
        instance.oracles.iter_mut().map(|o| o.draw_train(rng)).collect();
    full_draw_pair(w, q, &draws, &instance.loss)
}

/// Draw `i ~ q` and one example from that distribution; model-side gradient
/// only (one training draw in total).
pub fn grad_sampled_w<R: Rng>(
    instance: &mut GdroInstance,
    w: &[f64],
    q: &SimplexWeights,
    rng: &mut R,
) -> Result<GradientPair> {
    check_q(instance, q)?;
    let chosen = sample_categorical(q, rng);
    let ex = instance.oracles[chosen].draw_train(rng);
    let g_w = crate::problem::loss_gradient(w, &ex, &instance.loss)?;
    let mut samples = vec![0u64; instance.m()];
    samples[chosen] = 1;
    Ok(GradientPair { g_w, g_q: None, samples_used: samples })
}

/// Uniform-index estimator: one training draw, both sides rescaled by `m`.
pub fn grad_uniform_index<R: Rng>(
    instance: &mut GdroInstance,
    w: &[f64],
    q: &SimplexWeights,
    rng: &mut R,
) -> Result<GradientPair> {
    check_q(instance, q)?;
    let chosen = rng.random_range(0..instance.m());
    let ex = instance.oracles[chosen].draw_train(rng);
    uniform_index_pair(w, q, chosen, &ex, &instance.loss)
}

/// Implicit-exploration estimate of the reward vector from the realized loss
/// of the chosen arm: `s_arm = (1 - loss) / (q_arm + gamma)`, zero elsewhere.
pub fn ix_estimate(
    q: &SimplexWeights,
    gamma: f64,
    arm: usize,
    realized_loss: f64,
) -> Result<IxEstimate> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::invalid(format!("IX coefficient must be nonnegative, got {gamma}")));
    }
    if arm >= q.len() {
        return Err(Error::invalid(format!("arm {arm} out of range for m={}", q.len())));
    }
    if !(0.0..=1.0).contains(&realized_loss) {
        return Err(Error::invalid(format!("realized loss must lie in [0,1], got {realized_loss}")));
    }
    let mut s_tilde = vec![0.0; q.len()];
    s_tilde[arm] = (1.0 - realized_loss) / (q[arm] + gamma);
    Ok(IxEstimate { s_tilde, chosen_arm: arm })
}

/// Bernoulli-subset estimator: select each distribution independently with
/// probability `p_i`, draw one example per selected distribution.
pub fn grad_bernoulli_weighted<R: Rng>(
    instance: &mut GdroInstance,
    w: &[f64],
    q: &SimplexWeights,
    probs: &[f64],
    form: BernoulliForm,
    rng: &mut R,
) -> Result<GradientPair> {
    check_q(instance, q)?;
    if probs.len() != instance.m() {
        return Err(Error::invalid("one selection probability per distribution required"));
    }
    if probs.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::invalid("selection probabilities must lie in (0, 1]"));
    }
    let mut selected: Vec<Option<Example>> = Vec::with_capacity(instance.m());
    for (i, oracle) in instance.oracles.iter_mut().enumerate() {
        let hit = rng.random::<f64>() < probs[i];
        selected.push(if hit { Some(oracle.draw_train(rng)) } else { None });
    }
    bernoulli_pair(w, q, &selected, probs, form, &instance.loss)
}

/// Mini-batch weighted estimator: draw `batch_sizes_i` examples per
/// distribution and average.
pub fn grad_minibatch_weighted<R: Rng>(
    instance: &mut GdroInstance,
    w: &[f64],
    q: &SimplexWeights,
    p: &[f64],
    batch_sizes: &[u64],
    rng: &mut R,
) -> Result<GradientPair> {
    check_q(instance, q)?;
    if batch_sizes.len() != instance.m() || p.len() != instance.m() {
        return Err(Error::invalid("batch sizes and scale factors must have length m"));
    }
    if batch_sizes.iter().any(|&b| b == 0) {
        return Err(Error::invalid("batch sizes must be at least 1"));
    }
    let mut batches: Vec<Vec<Example>> = Vec::with_capacity(instance.m());
    for (i, oracle) in instance.oracles.iter_mut().enumerate() {
        batches.push((0..batch_sizes[i]).map(|_| oracle.draw_train(rng)).collect());
    }
    minibatch_pair(w, q, &batches, p, &instance.loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{norm2, EuclideanBallDomain};
    use crate::problem::{loss_gradient, DistributionOracle, RiskEval};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example(features: Vec<f64>, label: f64) -> Example {
        Example::new(features, label).unwrap()
    }

    /// Two empirical groups in two dimensions, small supports.
    fn instance2() -> GdroInstance {
        let g1 = DistributionOracle::empirical(vec![
            example(vec![0.6, 0.1], 1.0),
            example(vec![-0.4, 0.9], -1.0),
            example(vec![0.2, -0.5], 1.0),
        ])
        .unwrap();
        let g2 = DistributionOracle::empirical(vec![
            example(vec![-0.7, -0.2], -1.0),
            example(vec![0.3, 0.3], 1.0),
        ])
        .unwrap();
        GdroInstance::assemble(
            vec![g1, g2],
            EuclideanBallDomain::new(2, 1.0).unwrap(),
            1.0,
        )
        .unwrap()
    }

    fn exact_grad_phi(inst: &GdroInstance, w: &[f64], q: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        for i in 0..inst.m() {
            let gi = crate::problem::exact_risk_gradient(inst, i, w).unwrap();
            for (a, b) in g.iter_mut().zip(&gi) {
                *a += q[i] * b;
            }
        }
        g
    }

    #[test]
    fn full_draw_at_vertex_reduces_to_single_gradient() {
        let inst = instance2();
        let q = SimplexWeights::new(vec![1.0 - 1e-12, 1e-12]).unwrap();
        let w = vec![0.1, 0.2];
        let draws =
            vec![inst.oracles[0].examples().unwrap()[0].clone(), inst.oracles[1].examples().unwrap()[0].clone()];
        let pair = full_draw_pair(&w, &q, &draws, &inst.loss).unwrap();
        let g1 = loss_gradient(&w, &draws[0], &inst.loss).unwrap();
        for (a, b) in pair.g_w.iter().zip(&g1) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn full_draw_fixed_examples_definition() {
        let inst = instance2();
        let q = SimplexWeights::new(vec![0.3, 0.7]).unwrap();
        let w = vec![0.1, -0.3];
        let z1 = example(vec![0.5, 0.5], 1.0);
        let z2 = example(vec![-0.2, 0.4], -1.0);
        let pair = full_draw_pair(&w, &q, &[z1.clone(), z2.clone()], &inst.loss).unwrap();
        let g1 = loss_gradient(&w, &z1, &inst.loss).unwrap();
        let g2 = loss_gradient(&w, &z2, &inst.loss).unwrap();
        for k in 0..2 {
            assert!((pair.g_w[k] - (0.3 * g1[k] + 0.7 * g2[k])).abs() < 1e-14);
        }
        let gq = pair.g_q.unwrap();
        assert!((gq[0] - loss_value(&w, &z1, &inst.loss).unwrap()).abs() < 1e-15);
        assert!((gq[1] - loss_value(&w, &z2, &inst.loss).unwrap()).abs() < 1e-15);
        assert_eq!(pair.samples_used, vec![1, 1]);
    }

    #[test]
    fn full_draw_g_q_is_unbiased_for_exact_risks() {
        let mut inst = instance2();
        let q = SimplexWeights::new(vec![0.4, 0.6]).unwrap();
        let w = vec![0.3, -0.2];
        let exact: Vec<f64> = (0..2)
            .map(|i| crate::problem::true_risk(&inst, i, &w, RiskEval::Exact).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let k = 100_000usize;
        let mut mean = vec![0.0; 2];
        for _ in 0..k {
            let pair = grad_full_draw(&mut inst, &w, &q, &mut rng).unwrap();
            for (m, v) in mean.iter_mut().zip(pair.g_q.as_ref().unwrap()) {
                *m += v;
            }
        }
        let tol = 4.0 * 0.5 / (k as f64).sqrt();
        for i in 0..2 {
            mean[i] /= k as f64;
            assert!(
                (mean[i] - exact[i]).abs() < tol,
                "coord {i}: mc {} vs exact {} (tol {tol})",
                mean[i],
                exact[i]
            );
        }
    }

    #[test]
    fn sampled_w_vertex_always_picks_that_distribution() {
        let mut inst = instance2();
        let q = SimplexWeights::new(vec![1e-13, 1.0 - 1e-13]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let pair = grad_sampled_w(&mut inst, &[0.0, 0.0], &q, &mut rng).unwrap();
            assert_eq!(pair.samples_used[0], 0);
            assert!(pair.g_q.is_none());
        }
        assert_eq!(inst.oracles[1].samples_drawn(), 200);
    }

    #[test]
    fn sampled_w_respects_gradient_bound_and_unbiasedness() {
        let mut inst = instance2();
        let g_bound = inst.constants.grad_bound;
        let q = SimplexWeights::new(vec![0.35, 0.65]).unwrap();
        let w = vec![-0.2, 0.4];
        let target = exact_grad_phi(&inst, &w, q.as_slice());
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        let k = 100_000usize;
        let mut mean = vec![0.0; 2];
        for _ in 0..k {
            let pair = grad_sampled_w(&mut inst, &w, &q, &mut rng).unwrap();
            assert!(norm2(&pair.g_w) <= g_bound + 1e-12);
            for (m, v) in mean.iter_mut().zip(&pair.g_w) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= k as f64;
        }
        let err = norm2(&mean.iter().zip(&target).map(|(a, b)| a - b).collect::<Vec<_>>());
        let tol = 4.0 * g_bound / (k as f64).sqrt();
        assert!(err < tol, "l2 error {err} vs tol {tol}");
    }

    #[test]
    fn uniform_index_weights_cancel_scaling() {
        let inst = instance2();
        let q = SimplexWeights::uniform(2).unwrap();
        let w = vec![0.2, 0.2];
        let ex = example(vec![0.4, -0.1], 1.0);
        let pair = uniform_index_pair(&w, &q, 1, &ex, &inst.loss).unwrap();
        let g = loss_gradient(&w, &ex, &inst.loss).unwrap();
        for (a, b) in pair.g_w.iter().zip(&g) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_index_hand_evaluated() {
        let inst = instance2();
        let q = SimplexWeights::new(vec![0.3, 0.7]).unwrap();
        let w = vec![0.1, 0.3];
        let ex = example(vec![0.5, -0.4], -1.0);
        let pair = uniform_index_pair(&w, &q, 1, &ex, &inst.loss).unwrap();
        let g = loss_gradient(&w, &ex, &inst.loss).unwrap();
        let l = loss_value(&w, &ex, &inst.loss).unwrap();
        for k in 0..2 {
            assert!((pair.g_w[k] - 1.4 * g[k]).abs() < 1e-14);
        }
        let gq = pair.g_q.unwrap();
        assert!((gq[0] - 0.0).abs() < 1e-15);
        assert!((gq[1] - 2.0 * l).abs() < 1e-14);
        assert_eq!(pair.samples_used, vec![0, 1]);
    }

    #[test]
    fn uniform_index_g_q_unbiased_for_exact_risks() {
        let mut inst = instance2();
        let q = SimplexWeights::new(vec![0.25, 0.75]).unwrap();
        let w = vec![0.15, -0.05];
        let exact: Vec<f64> = (0..2)
            .map(|i| crate::problem::true_risk(&inst, i, &w, RiskEval::Exact).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(300);
        let k = 100_000usize;
        let mut mean = vec![0.0; 2];
        for _ in 0..k {
            let pair = grad_uniform_index(&mut inst, &w, &q, &mut rng).unwrap();
            for (m, v) in mean.iter_mut().zip(pair.g_q.as_ref().unwrap()) {
                *m += v;
            }
        }
        let m_f = 2.0;
        let tol = 4.0 * m_f * 0.5 / (k as f64).sqrt();
        for i in 0..2 {
            mean[i] /= k as f64;
            assert!((mean[i] - exact[i]).abs() < tol, "coord {i}: {} vs {}", mean[i], exact[i]);
        }
    }

    #[test]
    fn ix_zero_reward_gives_zero_vector() {
        let q = SimplexWeights::uniform(3).unwrap();
        let est = ix_estimate(&q, 0.05, 2, 1.0).unwrap();
        assert!(est.s_tilde.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn ix_hand_evaluated() {
        let q = SimplexWeights::new(vec![0.5, 0.5]).unwrap();
        let est = ix_estimate(&q, 0.1, 0, 0.4).unwrap();
        assert!((est.s_tilde[0] - 1.0).abs() < 1e-15);
        assert_eq!(est.s_tilde[1], 0.0);
        assert_eq!(est.chosen_arm, 0);
    }

    #[test]
    fn ix_rejects_negative_gamma() {
        let q = SimplexWeights::uniform(2).unwrap();
        assert!(ix_estimate(&q, -0.01, 0, 0.5).is_err());
    }

    #[test]
    fn ix_expectation_is_downward_biased_reward() {
        // fixed rewards s_i, arm ~ q: E[s_tilde_i] = q_i s_i / (q_i + gamma)
        let q = SimplexWeights::new(vec![0.2, 0.5, 0.3]).unwrap();
        let rewards = [0.9, 0.4, 0.6];
        let gamma = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(400);
        let k = 100_000usize;
        let mut mean = vec![0.0; 3];
        for _ in 0..k {
            let arm = sample_categorical(&q, &mut rng);
            let est = ix_estimate(&q, gamma, arm, 1.0 - rewards[arm]).unwrap();
            for (m, v) in mean.iter_mut().zip(&est.s_tilde) {
                *m += v;
            }
        }
        let tol = 4.0 / (gamma * (k as f64).sqrt());
        for i in 0..3 {
            mean[i] /= k as f64;
            let expected = q[i] * rewards[i] / (q[i] + gamma);
            assert!((mean[i] - expected).abs() < tol);
            // bias direction: below the true reward, above the shrunk target
            assert!(mean[i] <= rewards[i] + tol);
            assert!(mean[i] >= expected - tol);
        }
    }

    #[test]
    fn bernoulli_all_selected_matches_full_draw() {
        let inst = instance2();
        let q = SimplexWeights::new(vec![0.4, 0.6]).unwrap();
        let w = vec![0.0, 0.1];
        let draws =
            vec![inst.oracles[0].examples().unwrap()[1].clone(), inst.oracles[1].examples().unwrap()[0].clone()];
        let selected: Vec<Option<Example>> = draws.iter().cloned().map(Some).collect();
        let full = full_draw_pair(&w, &q, &draws, &inst.loss).unwrap();
        let bern = bernoulli_pair(&w, &q, &selected, &[1.0, 1.0], BernoulliForm::Weighted, &inst.loss)
            .unwrap();
        assert_eq!(full.g_w, bern.g_w);
        assert_eq!(full.g_q, bern.g_q);
    }

    #[test]
    fn bernoulli_empty_selection_is_zero() {
        let inst = instance2();
        let q = SimplexWeights::uniform(2).unwrap();
        let pair = bernoulli_pair(
            &[0.0, 0.0],
            &q,
            &[None, None],
            &[0.5, 0.5],
            BernoulliForm::Weighted,
            &inst.loss,
        )
        .unwrap();
        assert!(pair.g_w.iter().all(|&x| x == 0.0));
        assert!(pair.g_q.unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(pair.samples_used, vec![0, 0]);
    }

    #[test]
    fn bernoulli_rejects_bad_probabilities() {
        let mut inst = instance2();
        let q = SimplexWeights::uniform(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for bad in [[0.0, 0.5], [1.2, 0.5], [-0.1, 0.5]] {
            assert!(grad_bernoulli_weighted(
                &mut inst,
                &[0.0, 0.0],
                &q,
                &bad,
                BernoulliForm::Weighted,
                &mut rng
            )
            .is_err());
        }
    }

    #[test]
    fn bernoulli_weighted_g_q_estimates_scaled_risks() {
        let mut inst = instance2();
        let q = SimplexWeights::new(vec![0.5, 0.5]).unwrap();
        let w = vec![0.25, -0.15];
        let probs = [1.0, 0.4];
        let exact: Vec<f64> = (0..2)
            .map(|i| {
                probs[i] * crate::problem::true_risk(&inst, i, &w, RiskEval::Exact).unwrap()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        let k = 100_000usize;
        let mut mean = vec![0.0; 2];
        for _ in 0..k {
            let pair = grad_bernoulli_weighted(
                &mut inst,
                &w,
                &q,
                &probs,
                BernoulliForm::Weighted,
                &mut rng,
            )
            .unwrap();
            for (m, v) in mean.iter_mut().zip(pair.g_q.as_ref().unwrap()) {
                *m += v;
            }
        }
        let tol = 4.0 * 0.5 / (k as f64).sqrt();
        for i in 0..2 {
            mean[i] /= k as f64;
            assert!((mean[i] - exact[i]).abs() < tol, "coord {i}: {} vs {}", mean[i], exact[i]);
        }
    }

    #[test]
    fn bernoulli_inverse_probability_g_q_estimates_plain_risks() {
        let mut inst = instance2();
        let q = SimplexWeights::new(vec![0.5, 0.5]).unwrap();
        let w = vec![-0.1, 0.2];
        let probs = [0.8, 0.3];
        let exact: Vec<f64> = (0..2)
            .map(|i| crate::problem::true_risk(&inst, i, &w, RiskEval::Exact).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(600);
        let k = 100_000usize;
        let mut mean = vec![0.0; 2];
        for _ in 0..k {
            let pair = grad_bernoulli_weighted(
                &mut inst,
                &w,
                &q,
                &probs,
                BernoulliForm::InverseProbability,
                &mut rng,
            )
            .unwrap();
            for (m, v) in mean.iter_mut().zip(pair.g_q.as_ref().unwrap()) {
                *m += v;
            }
        }
        // entries scale like 1/p_i, widen the tolerance accordingly
        for i in 0..2 {
            mean[i] /= k as f64;
            let tol = 4.0 * (0.5 / probs[i]) / (k as f64).sqrt();
            assert!((mean[i] - exact[i]).abs() < tol, "coord {i}: {} vs {}", mean[i], exact[i]);
        }
    }

    #[test]
    fn minibatch_unit_batches_match_full_draw() {
        let inst = instance2();
        let q = SimplexWeights::new(vec![0.45, 0.55]).unwrap();
        let w = vec![0.2, 0.1];
        let draws =
            vec![inst.oracles[0].examples().unwrap()[2].clone(), inst.oracles[1].examples().unwrap()[1].clone()];
        let batches: Vec<Vec<Example>> = draws.iter().map(|e| vec![e.clone()]).collect();
        let mb = minibatch_pair(&w, &q, &batches, &[1.0, 1.0], &inst.loss).unwrap();
        let full = full_draw_pair(&w, &q, &draws, &inst.loss).unwrap();
        for (a, b) in mb.g_w.iter().zip(&full.g_w) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(mb.g_q, full.g_q);
    }

    #[test]
    fn minibatch_mean_converges_on_two_point_oracle() {
        // batch mean over many draws converges to the exact support mean
        let g = DistributionOracle::empirical(vec![
            example(vec![1.0], 1.0),
            example(vec![-1.0], 1.0),
        ])
        .unwrap();
        let mut inst =
            GdroInstance::assemble(vec![g], EuclideanBallDomain::new(1, 1.0).unwrap(), 1.0)
                .unwrap();
        let q = SimplexWeights::uniform(1).unwrap();
        let w = vec![0.5];
        let exact = crate::problem::true_risk(&inst, 0, &w, RiskEval::Exact).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(700);
        let k = 100_000usize;
        let mut mean = 0.0;
        for _ in 0..k {
            let pair = grad_minibatch_weighted(&mut inst, &w, &q, &[1.0], &[1], &mut rng).unwrap();
            mean += pair.g_q.as_ref().unwrap()[0];
        }
        mean /= k as f64;
        assert!((mean - exact).abs() < 4.0 * 0.5 / (k as f64).sqrt());
    }

    #[test]
    fn minibatch_variance_scales_inversely_with_batch() {
        let mut inst = instance2();
        let q = SimplexWeights::new(vec![0.5, 0.5]).unwrap();
        let w = vec![0.4, -0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(800);
        let k = 10_000usize;
        let var_at = |b: u64, inst: &mut GdroInstance, rng: &mut ChaCha8Rng| -> f64 {
            let mut vals = Vec::with_capacity(k);
            for _ in 0..k {
                let pair =
                    grad_minibatch_weighted(inst, &w, &q, &[1.0, 1.0], &[b, b], rng).unwrap();
                vals.push(pair.g_q.as_ref().unwrap()[0]);
            }
            let mean: f64 = vals.iter().sum::<f64>() / k as f64;
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64
        };
        let v1 = var_at(1, &mut inst, &mut rng);
        let v8 = var_at(8, &mut inst, &mut rng);
        let ratio = v8 / (v1 / 8.0);
        assert!((0.7..1.4).contains(&ratio), "variance ratio {ratio}");
    }

    #[test]
    fn norm_bounds_hold_across_estimators() {
        let mut inst = instance2();
        let g_bound = inst.constants.grad_bound;
        let mut rng = ChaCha8Rng::seed_from_u64(900);
        let m = inst.m() as f64;
        for _ in 0..10_000 {
            let raw: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = crate::geometry::project_ball(&raw, 1.0).unwrap();
            let a: f64 = rng.random_range(0.05..0.95);
            let q = SimplexWeights::new(vec![a, 1.0 - a]).unwrap();

            let pair = grad_full_draw(&mut inst, &w, &q, &mut rng).unwrap();
            assert!(norm2(&pair.g_w) <= g_bound + 1e-12);
            assert!(pair.g_q.unwrap().iter().all(|&v| v <= 1.0 + 1e-12));

            let pair = grad_uniform_index(&mut inst, &w, &q, &mut rng).unwrap();
            let qmax = q.as_slice().iter().cloned().fold(0.0, f64::max);
            assert!(norm2(&pair.g_w) <= g_bound * m * qmax + 1e-12);
            assert!(pair.g_q.unwrap().iter().all(|&v| v <= m + 1e-12));

            let probs = [0.9, 0.6];
            let pair = grad_bernoulli_weighted(
                &mut inst,
                &w,
                &q,
                &probs,
                BernoulliForm::Weighted,
                &mut rng,
            )
            .unwrap();
            assert!(norm2(&pair.g_w) <= g_bound + 1e-12);
            assert!(pair.g_q.unwrap().iter().all(|&v| v <= 1.0 + 1e-12));

            let p = [1.0, 0.7];
            let pair =
                grad_minibatch_weighted(&mut inst, &w, &q, &p, &[2, 3], &mut rng).unwrap();
            assert!(norm2(&pair.g_w) <= g_bound * 1.0 + 1e-12);
            let gq = pair.g_q.unwrap();
            for (v, pi) in gq.iter().zip(&p) {
                assert!(*v <= pi + 1e-12);
            }
        }
    }
}
