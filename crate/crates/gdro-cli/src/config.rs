//! Experiment configuration: TOML schema, override handling, and total
//! validation before any sampling happens.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gdro::data::{budget_schedule, BudgetKind, GroupedDataset, SyntheticSpec};
use gdro::solvers::Algorithm;
use gdro::{Error, GdroInstance, Result};

/// Where the problem instance comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum InstanceConfig {
    /// Planted-model generator.
    Synthetic {
        m: usize,
        dimension: usize,
        #[serde(default = "default_flip")]
        flip_rate: f64,
        #[serde(default)]
        similarity: f64,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default)]
        seed: u64,
        /// Materialize this many examples per group; omit for an infinite
        /// generative stream.
        n_per_group: Option<u64>,
    },
    /// Grouped tabular CSV with a TOML schema file.
    Csv {
        path: PathBuf,
        schema: PathBuf,
        #[serde(default = "default_eval_reserve")]
        eval_reserve: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_radius")]
        radius: f64,
    },
    /// A dataset cache directory produced by `gdro gen-data`.
    Cache {
        path: PathBuf,
        #[serde(default = "default_radius")]
        radius: f64,
    },
}

fn default_flip() -> f64 {
    0.1
}
fn default_radius() -> f64 {
    1.0
}
fn default_eval_reserve() -> usize {
    364
}
fn default_c() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithms: Vec<String>,
    /// Horizon for the balanced solvers; 0 defers to the budget vector
    /// (baseline semantics: `n_m` rounds).
    #[serde(default)]
    pub t: u64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub checkpoint_stride: u64,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: u64,
    pub out_dir: PathBuf,
    /// Absolute constant in the mirror-prox variance bound.
    #[serde(default = "default_c")]
    pub c: f64,
    /// Also compute the duality gap at every checkpoint (empirical
    /// instances only; adds an inner minimization per checkpoint).
    #[serde(default)]
    pub eval_gap: bool,
}

fn default_eval_samples() -> u64 {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum BudgetConfig {
    /// `n_i = 800 (m + 1 - i)`, divided by `scale`.
    LinearRamp {
        #[serde(default = "default_scale")]
        scale: u64,
    },
    /// Per-group training counts of the loaded dataset.
    FromGroups,
    /// Explicit budget vector; must be sorted nonincreasing unless `sort`.
    Explicit {
        values: Vec<u64>,
        #[serde(default)]
        sort: bool,
    },
}

fn default_scale() -> u64 {
    1
}

/// Optional step-size overrides; unset fields keep the prescribed values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepOverrides {
    pub eta_w: Option<f64>,
    pub eta_q: Option<f64>,
    pub gamma: Option<f64>,
}

/// Top-level experiment configuration (one TOML file).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub budgets: Option<BudgetConfig>,
    #[serde(default)]
    pub overrides: StepOverrides,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Schema(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Parse a config file, applying `--override key=value` entries (dotted
    /// TOML paths) before deserialization.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Schema(format!("cannot read config {}: {e}", path.display())))?;
        let mut value: toml::Value = toml::from_str(&text)
            .map_err(|e| Error::Schema(format!("config parse error: {e}")))?;
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        let config: ExperimentConfig = value
            .try_into()
            .map_err(|e| Error::Schema(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Every failure mode reachable from a bad config is caught here, before
    /// any data is touched.
    pub fn validate(&self) -> Result<()> {
        if self.run.algorithms.is_empty() {
            return Err(Error::invalid("run.algorithms must list at least one algorithm"));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::invalid("run.seeds must list at least one seed"));
        }
        if !(self.run.c.is_finite() && self.run.c > 0.0) {
            return Err(Error::invalid("run.c must be positive"));
        }
        for name in &self.run.algorithms {
            let algorithm = Algorithm::from_name(name)?;
            if algorithm.needs_budgets() && self.budgets.is_none() {
                return Err(Error::invalid(format!(
                    "algorithm '{name}' needs a [budgets] section"
                )));
            }
            if !algorithm.needs_budgets() && self.run.t == 0 && self.budgets.is_none() {
                return Err(Error::invalid(format!(
                    "algorithm '{name}' needs run.t >= 1 (or budgets for baseline semantics)"
                )));
            }
        }
        match &self.instance {
            InstanceConfig::Synthetic { m, dimension, flip_rate, similarity, radius, .. } => {
                if *m == 0 || *dimension == 0 {
                    return Err(Error::invalid("synthetic instance needs m >= 1 and dimension >= 1"));
                }
                if !(0.0..1.0).contains(flip_rate) {
                    return Err(Error::invalid("flip_rate must be in [0, 1)"));
                }
                if !(0.0..1.0).contains(similarity) {
                    return Err(Error::invalid("similarity must be in [0, 1)"));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::invalid("radius must be positive"));
                }
            }
            InstanceConfig::Csv { path, schema, .. } => {
                if !schema.is_file() {
                    return Err(Error::Schema(format!(
                        "schema file not found: {}",
                        schema.display()
                    )));
                }
                if !path.is_file() {
                    return Err(Error::Schema(format!("CSV file not found: {}", path.display())));
                }
            }
            InstanceConfig::Cache { path, .. } => {
                if !path.join("manifest.json").is_file() {
                    return Err(Error::Schema(format!(
                        "dataset cache not found: {}",
                        path.join("manifest.json").display()
                    )));
                }
            }
        }
        if matches!(self.budgets, Some(BudgetConfig::FromGroups))
            && matches!(self.instance, InstanceConfig::Synthetic { n_per_group: None, .. })
        {
            return Err(Error::invalid(
                "budgets.kind = \"from-groups\" needs a materialized (or loaded) dataset",
            ));
        }
        if let Some(BudgetConfig::Explicit { values, sort }) = &self.budgets {
            budget_schedule(BudgetKind::Explicit { values: values.clone(), sort: *sort })?;
        }
        Ok(())
    }

    /// Hex digest of the resolved configuration; stable across reruns.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&canonical);
        hex_encode(&hasher.finalize())
    }

    /// Materialized resources for a run: the instance, the optional dataset
    /// it came from, and the resolved budget vector.
    pub fn materialize(&self) -> Result<(GdroInstance, Option<GroupedDataset>, Option<Vec<u64>>)> {
        let (instance, dataset) = match &self.instance {
            InstanceConfig::Synthetic {
                m,
                dimension,
                flip_rate,
                similarity,
                radius,
                seed,
                n_per_group,
            } => {
                let mut spec = SyntheticSpec::new(*m, *dimension, *flip_rate, *seed)
                    .with_radius(*radius)
                    .with_similarity(*similarity);
                spec.n_per_group = *n_per_group;
                let (instance, _) = gdro::data::gen_synthetic(&spec)?;
                let dataset =
                    if n_per_group.is_some() { Some(gdro::data::synthetic_dataset(&spec)?) } else { None };
                (instance, dataset)
            }
            InstanceConfig::Csv { path, schema, eval_reserve, seed, radius } => {
                let schema = gdro::data::CsvSchema::load(schema)?;
                let dataset = gdro::data::load_grouped_csv(path, &schema, *eval_reserve, *seed)?;
                (dataset.to_instance(*radius)?, Some(dataset))
            }
            InstanceConfig::Cache { path, radius } => {
                let dataset = gdro::data::load_dataset(path)?;
                (dataset.to_instance(*radius)?, Some(dataset))
            }
        };
        let budgets = match &self.budgets {
            None => None,
            Some(BudgetConfig::LinearRamp { scale }) => Some(budget_schedule(
                BudgetKind::LinearRamp { m: instance.m(), scale: *scale },
            )?),
            Some(BudgetConfig::FromGroups) => {
                let ds = dataset.as_ref().ok_or_else(|| {
                    Error::invalid("budgets.kind = \"from-groups\" needs a dataset-backed instance")
                })?;
                Some(budget_schedule(BudgetKind::FromGroups(ds))?)
            }
            Some(BudgetConfig::Explicit { values, sort }) => Some(budget_schedule(
                BudgetKind::Explicit { values: values.clone(), sort: *sort },
            )?),
        };
        if let Some(b) = &budgets {
            if b.len() != instance.m() {
                return Err(Error::invalid(format!(
                    "budget vector has {} entries for {} distributions",
                    b.len(),
                    instance.m()
                )));
            }
        }
        Ok((instance, dataset, budgets))
    }
}

pub fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Apply one `--override key=value` entry to a parsed TOML tree. The value is
/// parsed as TOML (so numbers, booleans, arrays, and quoted strings all
/// work); bare words fall back to strings.
fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(table) => table["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| Error::invalid(format!("override path '{key}' crosses a non-table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(Error::invalid(format!("empty override path '{key}'")))
}

/// Per-run manifest written next to every trace file.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub algorithm: String,
    pub seed: u64,
    pub t: u64,
    pub eta_w: f64,
    pub eta_q: f64,
    pub gamma: f64,
    pub budgets: Option<Vec<u64>>,
    pub scale_factors: Option<Vec<f64>>,
    pub wall_time_s: f64,
    pub columns: BTreeMap<String, String>,
}
