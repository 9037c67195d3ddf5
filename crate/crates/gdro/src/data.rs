//! Instance construction: the synthetic planted-model generator, grouped
//! tabular CSV ingestion with preprocessing, budget schedules, and a
//! round-trip-exact dataset cache.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{norm2, EuclideanBallDomain};
use crate::problem::{DistributionOracle, Example, GdroInstance};

/// Feature-norm bound used by preprocessing: `sqrt(d) + 3` covers essentially
/// all standard-Gaussian mass while keeping the gradient bound finite.
pub fn default_feature_bound(dimension: usize) -> f64 {
    (dimension as f64).sqrt() + 3.0
}

/// Recipe for a planted-model instance: `m` groups, each with its own unit
/// planted model, standard-Gaussian features, and labels flipped with the
/// given probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub m: usize,
    pub d: usize,
    pub flip_rate: f64,
    pub seed: u64,
    /// Examples to materialize per group; `None` keeps the oracles generative
    /// (an infinite stream sampled on the fly).
    pub n_per_group: Option<u64>,
    /// Radius of the model domain.
    pub radius: f64,
    /// Correlation of the planted models with a shared direction, in [0, 1).
    /// 0 draws them independently from the unit sphere; larger values make
    /// the groups jointly servable by one model, as grouped tabular data
    /// typically is.
    pub similarity: f64,
}

impl SyntheticSpec {
    pub fn new(m: usize, d: usize, flip_rate: f64, seed: u64) -> Self {
        Self { m, d, flip_rate, seed, n_per_group: None, radius: 1.0, similarity: 0.0 }
    }

    pub fn with_examples(mut self, n: u64) -> Self {
        self.n_per_group = Some(n);
        self
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    pub fn with_similarity(mut self, similarity: f64) -> Self {
        self.similarity = similarity;
        self
    }
}

fn unit_gaussian_vector(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> =
            (0..d).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect();
        let n = norm2(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Build a synthetic instance. Returns the instance together with the planted
/// models (one unit vector per group).
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(GdroInstance, Vec<Vec<f64>>)> {
    if spec.m == 0 || spec.d == 0 {
        return Err(Error::invalid("synthetic spec needs m >= 1 and d >= 1"));
    }
    if !(0.0..1.0).contains(&spec.flip_rate) {
        return Err(Error::invalid(format!("flip rate must be in [0,1), got {}", spec.flip_rate)));
    }
    if !(0.0..1.0).contains(&spec.similarity) {
        return Err(Error::invalid(format!("similarity must be in [0,1), got {}", spec.similarity)));
    }
    let bound = default_feature_bound(spec.d);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shared = unit_gaussian_vector(spec.d, &mut rng);
    let planted: Vec<Vec<f64>> = (0..spec.m)
        .map(|_| {
            let own = unit_gaussian_vector(spec.d, &mut rng);
            if spec.similarity == 0.0 {
                return own;
            }
            let mu = spec.similarity;
            let mix: Vec<f64> = shared
                .iter()
                .zip(&own)
                .map(|(s, o)| mu * s + (1.0 - mu * mu).sqrt() * o)
                .collect();
            let n = norm2(&mix);
            mix.into_iter().map(|x| x / n).collect()
        })
        .collect();

    let mut oracles = Vec::with_capacity(spec.m);
    for w_star in &planted {
        let mut oracle = DistributionOracle::synthetic(w_star.clone(), spec.flip_rate, bound)?;
        if let Some(n) = spec.n_per_group {
            if n == 0 {
                return Err(Error::invalid("materialized group size must be positive"));
            }
            let examples: Vec<Example> = (0..n).map(|_| oracle.draw_eval(&mut rng)).collect();
            oracle = DistributionOracle::empirical(examples)?;
        }
        oracles.push(oracle);
    }
    let domain = EuclideanBallDomain::new(spec.d, spec.radius)?;
    let instance = GdroInstance::assemble(oracles, domain, bound)?;
    Ok((instance, planted))
}

// ---- grouped CSV ingestion ----------------------------------------------------

/// Column role in the tabular schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// Declarative schema for grouped CSV ingestion (TOML on disk).
///
/// `group_value_map` optionally buckets raw group-column values; the key `"*"`
/// is the fallback bucket for unlisted values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub label_column: String,
    pub positive_label: String,
    pub group_columns: Vec<String>,
    pub columns: BTreeMap<String, ColumnKind>,
    #[serde(default)]
    pub group_value_map: BTreeMap<String, BTreeMap<String, String>>,
}

impl CsvSchema {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(format!("schema parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Schema(format!("cannot read schema {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn map_group_value(&self, column: &str, value: &str) -> String {
        if let Some(map) = self.group_value_map.get(column) {
            if let Some(mapped) = map.get(value) {
                return mapped.clone();
            }
            if let Some(fallback) = map.get("*") {
                return fallback.clone();
            }
        }
        value.to_string()
    }
}

/// One group: key plus disjoint training and held-out evaluation splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Group {
    pub key: String,
    pub train: Vec<Example>,
    pub eval: Vec<Example>,
}

/// Preprocessed grouped dataset: encoded feature matrices partitioned by
/// group key, with per-group evaluation splits already carved out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupedDataset {
    pub groups: Vec<Group>,
    pub dimension: usize,
    pub feature_bound: f64,
    /// Rows dropped during parsing (unparseable numerics or empty labels).
    pub skipped_rows: u64,
}

impl GroupedDataset {
    pub fn m(&self) -> usize {
        self.groups.len()
    }

    pub fn train_counts(&self) -> Vec<u64> {
        self.groups.iter().map(|g| g.train.len() as u64).collect()
    }

    /// Assemble an instance from the training splits.
    pub fn to_instance(&self, radius: f64) -> Result<GdroInstance> {
        let oracles: Result<Vec<_>> = self
            .groups
            .iter()
            .map(|g| DistributionOracle::empirical(g.train.clone()))
            .collect();
        let domain = EuclideanBallDomain::new(self.dimension, radius)?;
        GdroInstance::assemble(oracles?, domain, self.feature_bound)
    }
}

/// Load a grouped dataset from an RFC-4180 CSV with a header row.
///
/// Numeric columns are standardized, categorical columns one-hot encoded
/// (categories in lexicographic order), every encoded row is radially clipped
/// to the feature bound, and `eval_reserve` rows per group are split off for
/// risk estimation using the given seed.
pub fn load_grouped_csv(
    csv_path: &Path,
    schema: &CsvSchema,
    eval_reserve: usize,
    seed: u64,
) -> Result<GroupedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path)
        .map_err(|e| Error::Schema(format!("cannot open {}: {e}", csv_path.display())))?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in CSV header")))
    };

    let label_idx = col_index(&schema.label_column)?;
    let group_idx: Vec<usize> =
        schema.group_columns.iter().map(|c| col_index(c)).collect::<Result<_>>()?;
    let mut feature_cols: Vec<(String, usize, ColumnKind)> = Vec::new();
    for (name, kind) in &schema.columns {
        feature_cols.push((name.clone(), col_index(name)?, *kind));
    }

    // first pass: keep raw rows, tally categories and numeric stats
    struct RawRow {
        group: String,
        label: f64,
        cells: Vec<String>,
    }
    let mut rows: Vec<RawRow> = Vec::new();
    let mut skipped = 0u64;
    for record in reader.records() {
        let record = record?;
        let cell = |idx: usize| record.get(idx).unwrap_or("").trim().to_string();
        let label_raw = cell(label_idx);
        if label_raw.is_empty() {
            skipped += 1;
            continue;
        }
        let label = if label_raw == schema.positive_label { 1.0 } else { -1.0 };
        let mut ok = true;
        let cells: Vec<String> = feature_cols
            .iter()
            .map(|(_, idx, kind)| {
                let v = cell(*idx);
                if *kind == ColumnKind::Numeric && v.parse::<f64>().is_err() {
                    ok = false;
                }
                v
            })
            .collect();
        if !ok {
            skipped += 1;
            continue;
        }
        let group = group_idx
            .iter()
            .enumerate()
            .map(|(k, idx)| schema.map_group_value(&schema.group_columns[k], &cell(*idx)))
            .collect::<Vec<_>>()
            .join("|");
        rows.push(RawRow { group, label, cells });
    }
    if rows.is_empty() {
        return Err(Error::Schema("no parseable rows in CSV".into()));
    }

    // encoding layout: numeric -> one standardized column, categorical -> one
    // indicator per observed value (sorted for determinism)
    enum Encoder {
        Numeric { mean: f64, std: f64 },
        Categorical { values: Vec<String> },
    }
    let mut encoders: Vec<Encoder> = Vec::new();
    for (ci, (_, _, kind)) in feature_cols.iter().enumerate() {
        match kind {
            ColumnKind::Numeric => {
                let vals: Vec<f64> = rows.iter().map(|r| r.cells[ci].parse::<f64>().unwrap()).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
                let std = var.sqrt();
                encoders.push(Encoder::Numeric { mean, std: if std > 0.0 { std } else { 1.0 } });
            }
            ColumnKind::Categorical => {
                let mut values: Vec<String> = rows.iter().map(|r| r.cells[ci].clone()).collect();
                values.sort();
                values.dedup();
                encoders.push(Encoder::Categorical { values });
            }
        }
    }
    let dimension: usize = encoders
        .iter()
        .map(|e| match e {
            Encoder::Numeric { .. } => 1,
            Encoder::Categorical { values } => values.len(),
        })
        .sum();
    let bound = default_feature_bound(dimension);

    // second pass: encode, clip, partition by group
    let mut by_group: BTreeMap<String, Vec<Example>> = BTreeMap::new();
    for row in &rows {
        let mut features = Vec::with_capacity(dimension);
        for (ci, enc) in encoders.iter().enumerate() {
            match enc {
                Encoder::Numeric { mean, std } => {
                    let v = row.cells[ci].parse::<f64>().unwrap();
                    features.push((v - mean) / std);
                }
                Encoder::Categorical { values } => {
                    for v in values {
                        features.push(if *v == row.cells[ci] { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        let n = norm2(&features);
        if n > bound {
            let s = bound / n;
            for f in &mut features {
                *f *= s;
            }
        }
        by_group.entry(row.group.clone()).or_default().push(Example::new(features, row.label)?);
    }

    // per-group evaluation reservation, applied before training materialization
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::with_capacity(by_group.len());
    for (key, mut examples) in by_group {
        if eval_reserve > 0 {
            examples.shuffle(&mut rng);
        }
        if examples.len() <= eval_reserve {
            return Err(Error::Schema(format!(
                "group '{key}' has {} rows, not enough for an evaluation reservation of {eval_reserve}",
                examples.len()
            )));
        }
        let eval = examples.split_off(examples.len() - eval_reserve);
        groups.push(Group { key, train: examples, eval });
    }
    Ok(GroupedDataset { groups, dimension, feature_bound: bound, skipped_rows: skipped })
}

/// Materialize a synthetic spec into a grouped dataset (no evaluation split;
/// generative instances estimate risks by sampling).
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<GroupedDataset> {
    let n = spec
        .n_per_group
        .ok_or_else(|| Error::invalid("synthetic dataset materialization needs n_per_group"))?;
    if n == 0 {
        return Err(Error::invalid("materialized group size must be positive"));
    }
    let (instance, _) = gen_synthetic(spec)?;
    let groups = instance
        .oracles
        .iter()
        .enumerate()
        .map(|(i, o)| Group {
            key: format!("group_{i}"),
            train: o.examples().expect("materialized oracle").to_vec(),
            eval: Vec::new(),
        })
        .collect();
    Ok(GroupedDataset {
        groups,
        dimension: spec.d,
        feature_bound: default_feature_bound(spec.d),
        skipped_rows: 0,
    })
}

// ---- budget schedules ----------------------------------------------------------

/// How to produce the sorted nonincreasing budget vector.
#[derive(Debug, Clone)]
pub enum BudgetKind<'a> {
    /// The synthetic-protocol schedule `n_i = 800 (m + 1 - i)`, optionally
    /// scaled down by an integer factor.
    LinearRamp { m: usize, scale: u64 },
    /// Training counts of a grouped dataset, sorted nonincreasing.
    FromGroups(&'a GroupedDataset),
    /// Explicit budgets; rejected when unsorted unless `sort` is set.
    Explicit { values: Vec<u64>, sort: bool },
}

pub fn budget_schedule(kind: BudgetKind<'_>) -> Result<Vec<u64>> {
    match kind {
        BudgetKind::LinearRamp { m, scale } => {
            if m == 0 {
                return Err(Error::invalid("budget schedule needs m >= 1"));
            }
            if scale == 0 {
                return Err(Error::invalid("budget scale must be positive"));
            }
            (1..=m)
                .map(|i| {
                    let raw = 800 * (m as u64 + 1 - i as u64);
                    let n = (raw as f64 / scale as f64).round() as u64;
                    if n == 0 {
                        Err(Error::invalid(format!("scaled budget for distribution {i} is zero")))
                    } else {
                        Ok(n)
                    }
                })
                .collect()
        }
        BudgetKind::FromGroups(dataset) => {
            let mut counts = dataset.train_counts();
            if counts.iter().any(|&c| c == 0) {
                return Err(Error::invalid("every group needs at least one training row"));
            }
            counts.sort_unstable_by(|a, b| b.cmp(a));
            Ok(counts)
        }
        BudgetKind::Explicit { values, sort } => {
            if values.is_empty() {
                return Err(Error::invalid("explicit budgets must be non-empty"));
            }
            if values.iter().any(|&v| v == 0) {
                return Err(Error::invalid("budgets must be positive"));
            }
            let mut values = values;
            if sort {
                values.sort_unstable_by(|a, b| b.cmp(a));
            } else if values.windows(2).any(|w| w[0] < w[1]) {
                return Err(Error::invalid("explicit budgets must be sorted nonincreasing"));
            }
            Ok(values)
        }
    }
}

// ---- dataset cache ----------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CacheManifest {
    version: u32,
    dimension: usize,
    feature_bound: f64,
    skipped_rows: u64,
    group_keys: Vec<String>,
    train_counts: Vec<u64>,
    eval_counts: Vec<u64>,
}

const CACHE_VERSION: u32 = 1;

/// Write a dataset to a directory: `manifest.json` plus one CSV per group
/// with columns `split,label,f0..f{d-1}`. Floats use the shortest
/// representation that round-trips exactly.
pub fn save_dataset(dataset: &GroupedDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = CacheManifest {
        version: CACHE_VERSION,
        dimension: dataset.dimension,
        feature_bound: dataset.feature_bound,
        skipped_rows: dataset.skipped_rows,
        group_keys: dataset.groups.iter().map(|g| g.key.clone()).collect(),
        train_counts: dataset.train_counts(),
        eval_counts: dataset.groups.iter().map(|g| g.eval.len() as u64).collect(),
    };
    let mut f = fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, &manifest)
        .map_err(|e| Error::Schema(format!("manifest write failed: {e}")))?;
    f.write_all(b"\n")?;

    for (gi, group) in dataset.groups.iter().enumerate() {
        let mut w = csv::Writer::from_path(dir.join(format!("group_{gi:03}.csv")))?;
        let mut header = vec!["split".to_string(), "label".to_string()];
        header.extend((0..dataset.dimension).map(|k| format!("f{k}")));
        w.write_record(&header)?;
        for (split, examples) in [("train", &group.train), ("eval", &group.eval)] {
            for ex in examples.iter() {
                let mut rec = vec![split.to_string(), format!("{}", ex.label)];
                rec.extend(ex.features.iter().map(|v| format!("{v}")));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

/// Reload a dataset written by [`save_dataset`]; exact round trip.
pub fn load_dataset(dir: &Path) -> Result<GroupedDataset> {
    let manifest_text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: CacheManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| Error::Schema(format!("manifest parse failed: {e}")))?;
    if manifest.version != CACHE_VERSION {
        return Err(Error::Schema(format!(
            "unsupported dataset cache version {}",
            manifest.version
        )));
    }
    let mut groups = Vec::with_capacity(manifest.group_keys.len());
    for (gi, key) in manifest.group_keys.iter().enumerate() {
        let mut reader = csv::Reader::from_path(dir.join(format!("group_{gi:03}.csv")))?;
        let mut train = Vec::new();
        let mut eval = Vec::new();
        for record in reader.records() {
            let record = record?;
            let split = record.get(0).unwrap_or("");
            let label: f64 = record
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Schema("bad label in cached dataset".into()))?;
            let features: Vec<f64> = (2..record.len())
                .map(|k| {
                    record
                        .get(k)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::Schema("bad feature in cached dataset".into()))
                })
                .collect::<Result<_>>()?;
            if features.len() != manifest.dimension {
                return Err(Error::Schema("cached row dimension mismatch".into()));
            }
            let ex = Example::new(features, label)?;
            match split {
                "train" => train.push(ex),
                "eval" => eval.push(ex),
                other => return Err(Error::Schema(format!("unknown split '{other}'"))),
            }
        }
        groups.push(Group { key: key.clone(), train, eval });
    }
    Ok(GroupedDataset {
        groups,
        dimension: manifest.dimension,
        feature_bound: manifest.feature_bound,
        skipped_rows: manifest.skipped_rows,
    })
}
