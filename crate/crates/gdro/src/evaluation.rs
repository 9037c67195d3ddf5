//! Solution-quality measurement: exact risks, the duality gap of the
//! saddle-point objective (plain or weighted), risk-curve extraction from
//! traces, and empirical convergence-rate diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SimplexWeights;
use crate::problem::{exact_risks, GdroInstance};
use crate::solvers::{inner_min_oracle, max_risk_of, ScaleFactors, SolverTrace};

/// Default iteration cap for the inner minimizer.
pub const DEFAULT_ORACLE_ITERS: u64 = 5000;
/// Default projected-gradient-mapping tolerance for the inner minimizer.
pub const DEFAULT_ORACLE_TOL: f64 = 1e-7;

/// Duality-gap report for a candidate pair: the adversary's best response
/// value, the model player's best response value, and their difference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    /// `max_i (p_i) R_i(w_bar)`: the adversary's best response.
    pub max_term: f64,
    /// `min_w sum_i q_bar_i (p_i) R_i(w)`: the inner minimizer's value.
    pub min_term: f64,
    /// `max_term - min_term`; at least `-tol` for the oracle tolerance.
    pub gap: f64,
    /// Unscaled per-distribution risks of `w_bar`.
    pub risks: Vec<f64>,
}

/// Duality gap of `(w_bar, q_bar)` on an empirical instance. With scale
/// factors present, both terms refer to the weighted objective.
pub fn estimate_gap(
    instance: &GdroInstance,
    w_bar: &[f64],
    q_bar: &SimplexWeights,
    scales: Option<&ScaleFactors>,
    oracle_iters: u64,
) -> Result<GapReport> {
    let risks = exact_risks(instance, w_bar)?;
    let max_term = match scales {
        Some(s) => max_risk_of(
            &risks.iter().zip(&s.p).map(|(r, p)| r * p).collect::<Vec<_>>(),
        ),
        None => max_risk_of(&risks),
    };
    let p = scales.map(|s| s.p.as_slice());
    let (_, min_term) = inner_min_oracle(instance, q_bar, p, oracle_iters, DEFAULT_ORACLE_TOL)?;
    Ok(GapReport { max_term, min_term, gap: max_term - min_term, risks })
}

/// Approximate minimax optimum `min_w max_i R_i(w)` on an empirical instance,
/// via a long exact-gradient mirror-prox run refined by the inner minimizer
/// at the returned weights. Returns the model and the max-risk value.
pub fn minimax_optimum(instance: &GdroInstance, rounds: u64) -> Result<(Vec<f64>, f64)> {
    if !instance.all_empirical() {
        return Err(Error::invalid("minimax optimum needs empirical oracles"));
    }
    let mut work = instance.clone();
    let config = crate::solvers::auto_step_sizes_exact_mirror_prox(&work, rounds)?;
    let trace = crate::solvers::solve_mirror_prox_exact(&mut work, &config, None)?;
    let risks = exact_risks(instance, &trace.final_w)?;
    Ok((trace.final_w, max_risk_of(&risks)))
}

/// Axis choice for [`risk_curve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveAxis {
    Iterations,
    Samples,
}

/// One row of a risk curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRow {
    pub axis: f64,
    pub risks: Vec<f64>,
    pub max_risk: f64,
}

/// Extract the per-checkpoint risk table from a trace, against iterations or
/// total samples consumed.
pub fn risk_curve(trace: &SolverTrace, axis: CurveAxis) -> Result<Vec<CurveRow>> {
    if trace.checkpoints.is_empty() {
        return Err(Error::invalid("trace has no checkpoints"));
    }
    Ok(trace
        .checkpoints
        .iter()
        .map(|cp| CurveRow {
            axis: match axis {
                CurveAxis::Iterations => cp.iteration as f64,
                CurveAxis::Samples => cp.samples_per_group.iter().sum::<u64>() as f64,
            },
            risks: cp.risks.clone(),
            max_risk: cp.max_risk,
        })
        .collect())
}

/// Least-squares slope of `log(gap)` against `log(t)`: the empirical
/// convergence-rate exponent.
pub fn rate_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::invalid("rate estimation needs at least 3 points"));
    }
    if points.iter().any(|&(t, g)| !(t > 0.0 && g > 0.0)) {
        return Err(Error::invalid("rate estimation needs positive horizons and gaps"));
    }
    let xs: Vec<f64> = points.iter().map(|&(t, _)| t.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, g)| g.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("rate estimation needs distinct horizons"));
    }
    Ok(sxy / sxx)
}

/// Median of a slice (averaging the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in medians"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};
    use crate::geometry::EuclideanBallDomain;
    use crate::problem::{DistributionOracle, Example, GdroInstance};
    use crate::solvers::{minimize_on_ball, SolverTrace, TraceCheckpoint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_instance_2x2() -> GdroInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut group = |label_bias: f64| {
            let examples: Vec<Example> = (0..20)
                .map(|_| {
                    let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let score = x[0] + label_bias * x[1];
                    Example::new(x, if score >= 0.0 { 1.0 } else { -1.0 }).unwrap()
                })
                .collect();
            DistributionOracle::empirical(examples).unwrap()
        };
        let oracles = vec![group(1.0), group(-1.0)];
        GdroInstance::assemble(oracles, EuclideanBallDomain::new(2, 1.0).unwrap(), 1.5).unwrap()
    }

    #[test]
    fn gap_degenerates_for_single_distribution() {
        let spec = SyntheticSpec::new(1, 3, 0.1, 4).with_examples(50);
        let (instance, _) = gen_synthetic(&spec).unwrap();
        let q = SimplexWeights::uniform(1).unwrap();
        let w = vec![0.05, -0.1, 0.2];
        let report = estimate_gap(&instance, &w, &q, None, 3000).unwrap();
        let (_, min_val) = inner_min_oracle(&instance, &q, None, 3000, 1e-7).unwrap();
        let risk = crate::problem::exact_risks(&instance, &w).unwrap()[0];
        assert!((report.max_term - risk).abs() < 1e-12);
        assert!((report.min_term - min_val).abs() < 1e-9);
        assert!(report.gap >= -1e-6);
    }

    #[test]
    fn gap_nonnegative_at_oracle_minimizer() {
        let instance = tiny_instance_2x2();
        let q = SimplexWeights::new(vec![0.6, 0.4]).unwrap();
        let (w_min, _) = inner_min_oracle(&instance, &q, None, 4000, 1e-9).unwrap();
        let report = estimate_gap(&instance, &w_min, &q, None, 4000).unwrap();
        assert!(report.gap >= -1e-7, "gap {}", report.gap);
    }

    #[test]
    fn gap_matches_two_dimensional_brute_force() {
        let instance = tiny_instance_2x2();
        let q = SimplexWeights::new(vec![0.35, 0.65]).unwrap();
        let w_bar = vec![0.3, -0.2];
        let report = estimate_gap(&instance, &w_bar, &q, None, 5000).unwrap();

        // brute force on a polar grid over the radius-1 ball
        let mut best = f64::INFINITY;
        let steps = 400;
        for ir in 0..=steps {
            let r = ir as f64 / steps as f64;
            for ia in 0..(4 * steps) {
                let th = 2.0 * std::f64::consts::PI * ia as f64 / (4 * steps) as f64;
                let w = [r * th.cos(), r * th.sin()];
                let risks = crate::problem::exact_risks(&instance, &w).unwrap();
                let val = q[0] * risks[0] + q[1] * risks[1];
                if val < best {
                    best = val;
                }
            }
        }
        let risks = crate::problem::exact_risks(&instance, &w_bar).unwrap();
        let brute_gap = risks.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - best;
        assert!(
            (report.gap - brute_gap).abs() < 2e-3,
            "oracle gap {} vs brute {brute_gap}",
            report.gap
        );
    }

    #[test]
    fn eq7_relation_holds_on_tiny_instance() {
        // gap >= max_i R_i(w_bar) - min_w max_i R_i(w) - tol
        let instance = tiny_instance_2x2();
        let q = SimplexWeights::new(vec![0.5, 0.5]).unwrap();
        let w_bar = vec![0.25, 0.15];
        let report = estimate_gap(&instance, &w_bar, &q, None, 5000).unwrap();
        let (_, opt) = minimax_optimum(&instance, 800).unwrap();
        let excess = report.risks.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - opt;
        assert!(report.gap >= excess - 1e-3, "gap {} vs excess {excess}", report.gap);
    }

    #[test]
    fn weighted_gap_scales_max_term() {
        let instance = tiny_instance_2x2();
        let q = SimplexWeights::new(vec![0.5, 0.5]).unwrap();
        let w = vec![0.1, 0.1];
        let scales =
            ScaleFactors::budget_ratios(&[100, 25], &instance.constants, 1.0).unwrap();
        let report = estimate_gap(&instance, &w, &q, Some(&scales), 3000).unwrap();
        let risks = crate::problem::exact_risks(&instance, &w).unwrap();
        let expected = (risks[0] * 1.0).max(risks[1] * 0.25);
        assert!((report.max_term - expected).abs() < 1e-12);
    }

    #[test]
    fn minimize_on_ball_matches_quadratic_closed_form() {
        // 0.5 ||w - a||^2 with a outside the unit ball: minimizer is a / ||a||
        let a = vec![1.2, -0.9, 0.4];
        let (x, _) = minimize_on_ball(
            |w| Ok(0.5 * w.iter().zip(&a).map(|(wi, ai)| (wi - ai) * (wi - ai)).sum::<f64>()),
            |w| Ok(w.iter().zip(&a).map(|(wi, ai)| wi - ai).collect()),
            3,
            1.0,
            1.0,
            2000,
            1e-10,
        )
        .unwrap();
        let norm_a = crate::geometry::norm2(&a);
        for (xi, ai) in x.iter().zip(&a) {
            assert!((xi - ai / norm_a).abs() < 1e-6);
        }

        // interior optimum
        let b = vec![0.2, 0.1, -0.3];
        let (x, v) = minimize_on_ball(
            |w| Ok(0.5 * w.iter().zip(&b).map(|(wi, bi)| (wi - bi) * (wi - bi)).sum::<f64>()),
            |w| Ok(w.iter().zip(&b).map(|(wi, bi)| wi - bi).collect()),
            3,
            1.0,
            1.0,
            2000,
            1e-10,
        )
        .unwrap();
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-6);
        }
        assert!(v.abs() < 1e-10);
    }

    #[test]
    fn inner_oracle_matches_fine_grid_on_tiny_instance() {
        let instance = tiny_instance_2x2();
        let q = SimplexWeights::new(vec![0.55, 0.45]).unwrap();
        let (_, val) = inner_min_oracle(&instance, &q, None, 5000, 1e-9).unwrap();
        let mut best = f64::INFINITY;
        let steps = 300;
        for ir in 0..=steps {
            let r = ir as f64 / steps as f64;
            for ia in 0..(4 * steps) {
                let th = 2.0 * std::f64::consts::PI * ia as f64 / (4 * steps) as f64;
                let w = [r * th.cos(), r * th.sin()];
                let risks = crate::problem::exact_risks(&instance, &w).unwrap();
                best = best.min(q[0] * risks[0] + q[1] * risks[1]);
            }
        }
        assert!((val - best).abs() < 1e-4, "oracle {val} vs grid {best}");
    }

    #[test]
    fn inner_oracle_rejects_generative_instances() {
        let oracle = DistributionOracle::synthetic(vec![1.0, 0.0], 0.1, 3.0).unwrap();
        let instance = GdroInstance::assemble(
            vec![oracle],
            EuclideanBallDomain::new(2, 1.0).unwrap(),
            3.0,
        )
        .unwrap();
        let q = SimplexWeights::uniform(1).unwrap();
        assert!(inner_min_oracle(&instance, &q, None, 100, 1e-6).is_err());
    }

    #[test]
    fn inner_oracle_single_separable_example_drives_value_down() {
        let oracle =
            DistributionOracle::empirical(vec![Example::new(vec![1.0, 0.0], 1.0).unwrap()])
                .unwrap();
        let instance = GdroInstance::assemble(
            vec![oracle],
            EuclideanBallDomain::new(2, 4.0).unwrap(),
            1.0,
        )
        .unwrap();
        let q = SimplexWeights::uniform(1).unwrap();
        let (_, v_small) = inner_min_oracle(&instance, &q, None, 3, 1e-12).unwrap();
        let (_, v_large) = inner_min_oracle(&instance, &q, None, 5000, 1e-12).unwrap();
        assert!(v_large < v_small);
        assert!(v_large < 0.05, "separable loss should approach zero, got {v_large}");
    }

    #[test]
    fn slope_recovers_exact_power_laws() {
        let sqrt_points: Vec<(f64, f64)> =
            [100.0, 400.0, 1600.0].iter().map(|&t| (t, 3.0 / f64::sqrt(t))).collect();
        assert!((rate_slope(&sqrt_points).unwrap() + 0.5).abs() < 1e-9);
        let linear_points: Vec<(f64, f64)> =
            [100.0, 200.0, 400.0, 800.0].iter().map(|&t| (t, 7.0 / t)).collect();
        assert!((rate_slope(&linear_points).unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn slope_matches_normal_equations_on_noisy_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let true_slope = rng.random_range(-1.5..-0.2);
            let points: Vec<(f64, f64)> = (1..=8)
                .map(|k| {
                    let t = (100 * k) as f64;
                    let noise: f64 = rng.random_range(-0.05..0.05);
                    (t, (true_slope * t.ln() + 1.0 + noise).exp())
                })
                .collect();
            let ours = rate_slope(&points).unwrap();
            // direct normal equations
            let n = points.len() as f64;
            let sx: f64 = points.iter().map(|p| p.0.ln()).sum();
            let sy: f64 = points.iter().map(|p| p.1.ln()).sum();
            let sxx: f64 = points.iter().map(|p| p.0.ln() * p.0.ln()).sum();
            let sxy: f64 = points.iter().map(|p| p.0.ln() * p.1.ln()).sum();
            let oracle = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            assert!((ours - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn slope_rejects_degenerate_inputs() {
        assert!(rate_slope(&[(10.0, 1.0), (20.0, 0.5)]).is_err());
        assert!(rate_slope(&[(10.0, 1.0), (20.0, 0.5), (40.0, -0.1)]).is_err());
        assert!(rate_slope(&[(10.0, 1.0), (10.0, 0.5), (10.0, 0.2)]).is_err());
    }

    fn trace_with_checkpoints(samples_per_iter: u64) -> SolverTrace {
        let cps: Vec<TraceCheckpoint> = (1..=3)
            .map(|k| TraceCheckpoint {
                iteration: 100 * k,
                samples_per_group: vec![50 * k * samples_per_iter, 50 * k * samples_per_iter],
                w_bar: vec![0.0],
                q_bar: vec![0.5, 0.5],
                risks: vec![0.5 / k as f64, 0.4 / k as f64],
                max_risk: 0.5 / k as f64,
            })
            .collect();
        SolverTrace {
            algorithm: "smd-full".into(),
            seed: 0,
            t: 300,
            checkpoints: cps,
            final_w: vec![0.0],
            final_q: vec![0.5, 0.5],
        }
    }

    #[test]
    fn risk_curve_single_row_and_axis_accounting() {
        let trace = trace_with_checkpoints(2);
        let rows = risk_curve(&trace, CurveAxis::Iterations).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].axis, 100.0);
        let rows = risk_curve(&trace, CurveAxis::Samples).unwrap();
        // two groups, both at 100 samples per 100 iterations here
        assert_eq!(rows[0].axis, 200.0);
        for w in rows.windows(2) {
            assert!(w[0].axis <= w[1].axis, "axis must be monotone");
        }

        let mut single = trace_with_checkpoints(1);
        single.checkpoints.truncate(1);
        assert_eq!(risk_curve(&single, CurveAxis::Iterations).unwrap().len(), 1);

        single.checkpoints.clear();
        assert!(risk_curve(&single, CurveAxis::Iterations).is_err());
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn smd_trace_gap_is_within_analytic_envelope_on_desk_instance() {
        // m=3, d=5 empirical instance; envelope 3 sqrt(10 (D^2 G^2 + ln m) / T)
        let spec = SyntheticSpec::new(3, 5, 0.1, 21).with_examples(500);
        let (mut instance, _) = gen_synthetic(&spec).unwrap();
        let t = 20_000;
        let config = crate::solvers::auto_step_sizes(
            &instance,
            crate::solvers::Algorithm::SmdFull,
            t,
            None,
            1.0,
        )
        .unwrap()
        .with_seed(3);
        let trace = crate::solvers::solve_smd_full(&mut instance, &config, None).unwrap();
        let q_bar = SimplexWeights::new(trace.final_q.clone()).unwrap();
        let report = estimate_gap(&instance, &trace.final_w, &q_bar, None, 5000).unwrap();
        let k = &instance.constants;
        let envelope = 3.0
            * (10.0 * (k.d_squared * k.grad_bound * k.grad_bound + 3.0f64.ln()) / t as f64)
                .sqrt();
        assert!(
            report.gap <= envelope,
            "gap {} exceeds analytic envelope {envelope}",
            report.gap
        );
        assert!(report.gap >= -1e-6);
    }

    #[test]
    fn bandit_trace_gap_is_within_analytic_envelope_on_desk_instance() {
        let spec = SyntheticSpec::new(3, 5, 0.1, 22).with_examples(500);
        let (mut instance, _) = gen_synthetic(&spec).unwrap();
        let t = 60_000u64;
        let m = 3f64;
        let config = crate::solvers::auto_step_sizes(
            &instance,
            crate::solvers::Algorithm::OnlineBandit,
            t,
            None,
            1.0,
        )
        .unwrap()
        .with_seed(4);
        let trace = crate::solvers::solve_online_bandit(&mut instance, &config, None).unwrap();
        let q_bar = SimplexWeights::new(trace.final_q.clone()).unwrap();
        let report = estimate_gap(&instance, &trace.final_w, &q_bar, None, 5000).unwrap();
        let k = &instance.constants;
        let tf = t as f64;
        let d = k.d_squared.sqrt();
        let rhs = 2.0 * d * k.grad_bound * (5.0 / tf).sqrt()
            + 3.0 * (m * m.ln() / tf).sqrt()
            + (0.5 / tf).sqrt()
            + 3.0 * ((m / (tf * m.ln())).sqrt() + (0.5 / tf).sqrt() + 1.0 / tf);
        let envelope = 2.0 * rhs;
        assert!(report.gap <= envelope, "gap {} exceeds envelope {envelope}", report.gap);
    }
}
