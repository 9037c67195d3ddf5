//! The three subcommands: dataset materialization, experiment execution with
//! streaming trace output, and cross-run comparison.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gdro::evaluation::{estimate_gap, median, rate_slope};
use gdro::geometry::SimplexWeights;
use gdro::solvers::{
    auto_step_sizes, solve_mirror_prox_minibatch, solve_online_bandit, solve_smd_full,
    solve_smd_single, solve_weighted_nonuniform, Algorithm, SolverConfig, TraceCheckpoint,
};
use gdro::{Error, GdroInstance, Result};

use crate::config::{ExperimentConfig, InstanceConfig, RunManifest};

/// Materialize the configured dataset into the cache format and report group
/// sizes. Synthetic instances must carry `n_per_group`.
pub fn cmd_gen_data(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let dataset = match &config.instance {
        InstanceConfig::Synthetic { n_per_group: None, .. } => {
            return Err(Error::invalid(
                "gen-data needs instance.n_per_group to materialize a synthetic dataset",
            ));
        }
        _ => {
            let (_, dataset, _) = config.materialize()?;
            dataset.ok_or_else(|| Error::invalid("instance does not produce a dataset"))?
        }
    };
    gdro::data::save_dataset(&dataset, out)?;
    println!("wrote {} groups to {}", dataset.m(), out.display());
    for group in &dataset.groups {
        println!(
            "  {}: {} train, {} eval rows",
            group.key,
            group.train.len(),
            group.eval.len()
        );
    }
    if dataset.skipped_rows > 0 {
        println!("  skipped {} unparseable rows", dataset.skipped_rows);
    }
    Ok(())
}

fn effective_horizon(
    algorithm: Algorithm,
    run_t: u64,
    budgets: Option<&[u64]>,
) -> Result<u64> {
    match algorithm {
        Algorithm::SmdFull | Algorithm::SmdSingle | Algorithm::OnlineBandit => {
            if run_t > 0 {
                Ok(run_t)
            } else {
                // baseline semantics under a budget: n_m rounds
                let budgets = budgets.ok_or_else(|| {
                    Error::invalid("run.t = 0 needs a [budgets] section for baseline semantics")
                })?;
                Ok(budgets[budgets.len() - 1])
            }
        }
        Algorithm::WeightedNonuniform => {
            let budgets = budgets.ok_or_else(|| Error::invalid("missing budgets"))?;
            Ok(budgets[0])
        }
        Algorithm::MirrorProxMinibatch => {
            let budgets = budgets.ok_or_else(|| Error::invalid("missing budgets"))?;
            Ok(budgets[budgets.len() - 1] / 2)
        }
    }
}

fn trace_columns(m: usize, with_gap: bool) -> Vec<String> {
    let mut cols = vec!["iteration".to_string(), "samples_total".to_string()];
    cols.extend((1..=m).map(|i| format!("samples_g{i}")));
    cols.extend((1..=m).map(|i| format!("risk_g{i}")));
    cols.push("max_risk".to_string());
    if with_gap {
        cols.push("gap".to_string());
    }
    cols
}

/// Run every configured (algorithm, seed) pair, streaming one CSV row per
/// checkpoint (the file is flushed after every row, so a killed run leaves a
/// valid prefix) plus a JSON manifest per run.
pub fn cmd_run(config: &ExperimentConfig, out: &Path, seed_offset: u64) -> Result<Vec<PathBuf>> {
    // validate everything before any sampling
    let algorithms: Vec<Algorithm> = config
        .run
        .algorithms
        .iter()
        .map(|name| Algorithm::from_name(name))
        .collect::<Result<_>>()?;
    let (instance, _, budgets) = config.materialize()?;
    let with_gap = config.run.eval_gap;
    if with_gap && !instance.all_empirical() {
        return Err(Error::invalid("run.eval_gap needs an empirical instance"));
    }
    fs::create_dir_all(out)?;
    let config_hash = config.hash();
    let mut written = Vec::new();

    for &algorithm in &algorithms {
        let horizon = effective_horizon(algorithm, config.run.t, budgets.as_deref())?;
        for &seed in &config.run.seeds {
            let seed = seed + seed_offset;
            let mut solver_config = auto_step_sizes(
                &instance,
                algorithm,
                horizon,
                budgets.as_deref(),
                config.run.c,
            )?
            .with_seed(seed)
            .with_stride(config.run.checkpoint_stride)
            .with_eval_samples(config.run.eval_samples);
            if let Some(eta_w) = config.overrides.eta_w {
                solver_config.eta_w = eta_w;
            }
            if let Some(eta_q) = config.overrides.eta_q {
                solver_config.eta_q = eta_q;
            }
            if let Some(gamma) = config.overrides.gamma {
                solver_config.gamma = gamma;
            }

            let stem = format!("{}-seed{seed}", algorithm.name());
            let trace_path = out.join(format!("{stem}.csv"));
            let file = fs::File::create(&trace_path)?;
            let mut writer = csv::Writer::from_writer(file);
            writer.write_record(trace_columns(instance.m(), with_gap))?;
            writer.flush()?;

            let started = Instant::now();
            let mut work = instance.clone();
            let gap_instance = &instance;
            let mut hook = |cp: &TraceCheckpoint| -> Result<()> {
                let mut record: Vec<String> = Vec::with_capacity(2 * cp.risks.len() + 4);
                record.push(format!("{}", cp.iteration));
                record.push(format!("{}", cp.samples_per_group.iter().sum::<u64>()));
                record.extend(cp.samples_per_group.iter().map(|s| format!("{s}")));
                record.extend(cp.risks.iter().map(|r| format!("{r}")));
                record.push(format!("{}", cp.max_risk));
                if with_gap {
                    let q_bar = SimplexWeights::new(cp.q_bar.clone())?;
                    let report = estimate_gap(gap_instance, &cp.w_bar, &q_bar, None, 5000)?;
                    record.push(format!("{}", report.gap));
                }
                writer.write_record(&record)?;
                writer.flush()?;
                Ok(())
            };

            let trace = run_one(&mut work, algorithm, budgets.as_deref(), &solver_config, &mut hook)?;
            drop(hook);

            let manifest = RunManifest {
                config_hash: config_hash.clone(),
                algorithm: algorithm.name().to_string(),
                seed,
                t: trace.t,
                eta_w: solver_config.eta_w,
                eta_q: solver_config.eta_q,
                gamma: solver_config.gamma,
                budgets: budgets.clone(),
                scale_factors: solver_config.scales.as_ref().map(|s| s.p.clone()),
                wall_time_s: started.elapsed().as_secs_f64(),
                columns: column_contract(instance.m(), with_gap),
            };
            let manifest_path = out.join(format!("{stem}.manifest.json"));
            let mut f = fs::File::create(&manifest_path)?;
            serde_json::to_writer_pretty(&mut f, &manifest)
                .map_err(|e| Error::Schema(format!("manifest write failed: {e}")))?;
            f.write_all(b"\n")?;
            written.push(trace_path);
        }
    }
    Ok(written)
}

fn run_one(
    instance: &mut GdroInstance,
    algorithm: Algorithm,
    budgets: Option<&[u64]>,
    config: &SolverConfig,
    hook: &mut dyn FnMut(&TraceCheckpoint) -> Result<()>,
) -> Result<gdro::SolverTrace> {
    match algorithm {
        Algorithm::SmdFull => solve_smd_full(instance, config, Some(hook)),
        Algorithm::SmdSingle => solve_smd_single(instance, config, Some(hook)),
        Algorithm::OnlineBandit => solve_online_bandit(instance, config, Some(hook)),
        Algorithm::WeightedNonuniform => {
            solve_weighted_nonuniform(instance, budgets.expect("validated"), config, Some(hook))
        }
        Algorithm::MirrorProxMinibatch => {
            solve_mirror_prox_minibatch(instance, budgets.expect("validated"), config, Some(hook))
        }
    }
}

fn column_contract(m: usize, with_gap: bool) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    map.insert("iteration".into(), "solver round the checkpoint was taken at".into());
    map.insert("samples_total".into(), "cumulative training draws over all groups".into());
    map.insert("samples_g<i>".into(), format!("cumulative training draws from group i (1..={m})"));
    map.insert("risk_g<i>".into(), "risk estimate of the averaged model on group i".into());
    map.insert("max_risk".into(), "maximum of the per-group risk estimates".into());
    if with_gap {
        map.insert("gap".into(), "duality gap of the averaged pair".into());
    }
    map
}

// ---- compare -----------------------------------------------------------------

#[derive(Debug)]
struct LoadedTrace {
    algorithm: String,
    rows: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
struct TraceRow {
    iteration: f64,
    max_risk: f64,
    gap: Option<f64>,
    risks: Vec<f64>,
}

fn load_trace(path: &Path) -> Result<LoadedTrace> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let it_col = col("iteration")
        .ok_or_else(|| Error::Schema(format!("{} lacks an iteration column", path.display())))?;
    let max_col = col("max_risk")
        .ok_or_else(|| Error::Schema(format!("{} lacks a max_risk column", path.display())))?;
    let gap_col = col("gap");
    let risk_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("risk_g"))
        .map(|(i, _)| i)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let get = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Schema(format!("bad numeric cell in {}", path.display())))
        };
        rows.push(TraceRow {
            iteration: get(it_col)?,
            max_risk: get(max_col)?,
            gap: match gap_col {
                Some(i) => Some(get(i)?),
                None => None,
            },
            risks: risk_cols.iter().map(|&i| get(i)).collect::<Result<_>>()?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Schema(format!("{} holds no checkpoints", path.display())));
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let algorithm = stem.split("-seed").next().unwrap_or(stem).to_string();
    Ok(LoadedTrace { algorithm, rows })
}

/// Summary line for one algorithm.
#[derive(Debug, serde::Serialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub traces: usize,
    pub final_iteration: f64,
    pub final_max_risk_median: f64,
    pub final_risks_median: Vec<f64>,
    /// Log-log slope of the median duality gap against the horizon, when the
    /// traces carry gaps at three or more distinct horizons.
    pub gap_slope: Option<f64>,
    /// Whether checkpoint grids disagreed and were re-interpolated.
    pub interpolated: bool,
    /// Medians of max_risk on the common checkpoint grid.
    pub curve: Vec<(f64, f64)>,
}

fn interpolate(rows: &[TraceRow], at: f64) -> f64 {
    if at <= rows[0].iteration {
        return rows[0].max_risk;
    }
    for pair in rows.windows(2) {
        if at <= pair[1].iteration {
            let (x0, x1) = (pair[0].iteration, pair[1].iteration);
            let (y0, y1) = (pair[0].max_risk, pair[1].max_risk);
            if x1 == x0 {
                return y1;
            }
            return y0 + (y1 - y0) * (at - x0) / (x1 - x0);
        }
    }
    rows[rows.len() - 1].max_risk
}

/// Aggregate all trace files in a directory: seed medians on shared
/// checkpoint grids, final-risk orderings, and rate-slope estimates.
pub fn cmd_compare(trace_dir: &Path) -> Result<Vec<AlgorithmSummary>> {
    let mut by_algorithm: BTreeMap<String, Vec<LoadedTrace>> = BTreeMap::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(trace_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "csv").unwrap_or(false))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::invalid(format!("no trace files in {}", trace_dir.display())));
    }
    for path in &entries {
        let trace = load_trace(path)?;
        by_algorithm.entry(trace.algorithm.clone()).or_default().push(trace);
    }

    let mut summaries = Vec::new();
    for (algorithm, traces) in &by_algorithm {
        // common grid: the coarsest grid among this algorithm's traces
        let grids: Vec<Vec<f64>> =
            traces.iter().map(|t| t.rows.iter().map(|r| r.iteration).collect()).collect();
        let same = grids.windows(2).all(|w| w[0] == w[1]);
        let coarsest = grids
            .iter()
            .min_by_key(|g| g.len())
            .expect("at least one trace")
            .clone();
        let max_common = grids
            .iter()
            .map(|g| *g.last().expect("non-empty grid"))
            .fold(f64::INFINITY, f64::min);
        let grid: Vec<f64> = coarsest.into_iter().filter(|&x| x <= max_common).collect();
        if !same {
            eprintln!("note: {algorithm} traces have differing checkpoint grids; re-interpolated");
        }
        let curve: Vec<(f64, f64)> = grid
            .iter()
            .map(|&x| {
                let vals: Vec<f64> =
                    traces.iter().map(|t| interpolate(&t.rows, x)).collect();
                (x, median(&vals))
            })
            .collect();

        // per-horizon median gaps for the slope, when gaps are present
        let mut gap_by_horizon: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for t in traces {
            let last = &t.rows[t.rows.len() - 1];
            if let Some(g) = last.gap {
                gap_by_horizon.entry(last.iteration as u64).or_default().push(g);
            }
        }
        let gap_points: Vec<(f64, f64)> = gap_by_horizon
            .iter()
            .map(|(&t, gaps)| (t as f64, median(gaps)))
            .collect();
        let gap_slope = if gap_points.len() >= 3 && gap_points.iter().all(|&(_, g)| g > 0.0) {
            rate_slope(&gap_points).ok()
        } else {
            None
        };

        let finals_max: Vec<f64> =
            traces.iter().map(|t| t.rows[t.rows.len() - 1].max_risk).collect();
        let m = traces[0].rows[0].risks.len();
        let final_risks_median: Vec<f64> = (0..m)
            .map(|i| {
                let v: Vec<f64> =
                    traces.iter().map(|t| t.rows[t.rows.len() - 1].risks[i]).collect();
                median(&v)
            })
            .collect();
        summaries.push(AlgorithmSummary {
            algorithm: algorithm.clone(),
            traces: traces.len(),
            final_iteration: traces
                .iter()
                .map(|t| t.rows[t.rows.len() - 1].iteration)
                .fold(0.0, f64::max),
            final_max_risk_median: median(&finals_max),
            final_risks_median,
            gap_slope,
            interpolated: !same,
            curve,
        });
    }

    // pairwise final-risk ordering verdicts
    println!("{:<16} {:>7} {:>12} {:>14} {:>10}", "algorithm", "traces", "final_iter", "final_max", "gap_slope");
    for s in &summaries {
        println!(
            "{:<16} {:>7} {:>12} {:>14.6} {:>10}",
            s.algorithm,
            s.traces,
            s.final_iteration,
            s.final_max_risk_median,
            s.gap_slope.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
        );
    }
    for i in 0..summaries.len() {
        for j in i + 1..summaries.len() {
            let (a, b) = (&summaries[i], &summaries[j]);
            let verdict = if a.final_max_risk_median < b.final_max_risk_median {
                format!("{} < {}", a.algorithm, b.algorithm)
            } else if b.final_max_risk_median < a.final_max_risk_median {
                format!("{} < {}", b.algorithm, a.algorithm)
            } else {
                format!("{} = {}", a.algorithm, b.algorithm)
            };
            println!("final max risk: {verdict}");
        }
    }
    Ok(summaries)
}

/// Write compare summaries as CSV.
pub fn write_summary(summaries: &[AlgorithmSummary], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "algorithm",
        "traces",
        "final_iteration",
        "final_max_risk_median",
        "gap_slope",
        "interpolated",
    ])?;
    for s in summaries {
        writer.write_record([
            s.algorithm.clone(),
            format!("{}", s.traces),
            format!("{}", s.final_iteration),
            format!("{}", s.final_max_risk_median),
            s.gap_slope.map(|v| format!("{v}")).unwrap_or_default(),
            format!("{}", s.interpolated),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
