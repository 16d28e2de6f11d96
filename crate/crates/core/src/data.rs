//! Dataset schemas, CSV ingestion, per-patient median aggregation and
//! iterative imputation.
//!
//! Two CSV layouts are understood:
//!
//! * visits: `patient_id,age,gender,dx_codes` with diagnosis codes separated
//!   by `;`
//! * tabular: `patient_id,label,<feature>...` with missing cells left empty

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbdt::{grow_tree, BinnedMatrix, SplitParams, Tree};
use crate::seed;

pub const MAX_AGE: u32 = 130;
pub const VISIT_HEADER: [&str; 4] = ["patient_id", "age", "gender", "dx_codes"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    Female = 0,
    Male = 1,
}

impl Gender {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Gender::Female),
            1 => Some(Gender::Male),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn label(self) -> &'static str {
        match self {
            Gender::Female => "Female",
            Gender::Male => "Male",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitRecord {
    pub patient_id: String,
    pub age: u32,
    pub gender: Gender,
    pub dx_codes: Vec<String>,
}

impl VisitRecord {
    pub fn new(patient_id: impl Into<String>, age: u32, gender: Gender, dx_codes: Vec<String>) -> Result<Self> {
        let patient_id = patient_id.into();
        if patient_id.is_empty() {
            return Err(Error::Validation("empty patient_id".into()));
        }
        if age > MAX_AGE {
            return Err(Error::Validation(format!("age {age} exceeds {MAX_AGE}")));
        }
        Ok(Self {
            patient_id,
            age,
            gender,
            dx_codes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub reason: String,
    pub raw: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub loaded: usize,
    pub rejects: Vec<Reject>,
}

impl LoadReport {
    pub fn rows_seen(&self) -> usize {
        self.loaded + self.rejects.len()
    }
}

fn parse_visit(fields: &csv::StringRecord) -> std::result::Result<VisitRecord, String> {
    if fields.len() != 4 {
        return Err(format!("expected 4 fields, found {}", fields.len()));
    }
    let (pid, age, gender, dx) = (fields[0].trim(), fields[1].trim(), fields[2].trim(), fields[3].trim());
    if pid.is_empty() {
        return Err("missing patient_id".into());
    }
    if age.is_empty() {
        return Err("missing age".into());
    }
    if gender.is_empty() {
        return Err("missing gender".into());
    }
    if dx.is_empty() {
        return Err("missing diagnosis".into());
    }
    let age: f64 = age.parse().map_err(|_| format!("unparseable age `{age}`"))?;
    if !age.is_finite() || age < 0.0 || age > f64::from(MAX_AGE) {
        return Err(format!("age {age} outside [0, {MAX_AGE}]"));
    }
    let gender = match gender {
        "0" => Gender::Female,
        "1" => Gender::Male,
        other => return Err(format!("gender `{other}` is not 0 or 1")),
    };
    let dx_codes: Vec<String> = dx
        .split(';')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(String::from)
        .collect();
    if dx_codes.is_empty() {
        return Err("missing diagnosis".into());
    }
    VisitRecord::new(pid, age.floor() as u32, gender, dx_codes).map_err(|e| e.to_string())
}

/// Read visit rows. Incomplete or unparseable rows are dropped and reported.
pub fn read_visits<R: Read>(reader: R) -> Result<(Vec<VisitRecord>, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != VISIT_HEADER {
        return Err(Error::Schema(format!(
            "visit header must be `{}`, found `{}`",
            VISIT_HEADER.join(","),
            names.join(",")
        )));
    }
    let mut visits = Vec::new();
    let mut report = LoadReport::default();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        match parse_visit(&rec) {
            Ok(v) => visits.push(v),
            Err(reason) => report.rejects.push(Reject {
                row: i + 1,
                reason,
                raw: rec.iter().collect::<Vec<_>>().join(","),
            }),
        }
    }
    report.loaded = visits.len();
    Ok((visits, report))
}

pub fn load_visits_csv(path: &Path) -> Result<(Vec<VisitRecord>, LoadReport)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_visits(f)
}

/// `<input>.rejects.csv` next to `input`.
pub fn rejects_sidecar_path(input: &Path) -> PathBuf {
    let mut s = input.as_os_str().to_owned();
    s.push(".rejects.csv");
    PathBuf::from(s)
}

pub fn write_rejects_sidecar(input: &Path, report: &LoadReport) -> Result<PathBuf> {
    let path = rejects_sidecar_path(input);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["row", "reason", "raw"])?;
    for r in &report.rejects {
        w.write_record([r.row.to_string(), r.reason.clone(), r.raw.clone()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn write_visits<W: Write>(writer: W, visits: &[VisitRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(VISIT_HEADER)?;
    for v in visits {
        w.write_record([
            v.patient_id.clone(),
            v.age.to_string(),
            v.gender.bit().to_string(),
            v.dx_codes.join(";"),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<visits>", e))?;
    Ok(())
}

/// Feature matrix with optional cells, binary labels and patient ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    feature_names: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
    labels: Vec<u8>,
    patient_ids: Vec<String>,
}

impl TabularDataset {
    pub fn new(
        feature_names: Vec<String>,
        rows: Vec<Vec<Option<f64>>>,
        labels: Vec<u8>,
        patient_ids: Vec<String>,
    ) -> Result<Self> {
        let d = feature_names.len();
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Validation(format!(
                "row {i} has {} cells, expected {d}",
                rows[i].len()
            )));
        }
        if labels.len() != rows.len() || patient_ids.len() != rows.len() {
            return Err(Error::Validation(
                "labels, patient ids and rows differ in length".into(),
            ));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Validation("labels must be 0 or 1".into()));
        }
        if rows.iter().flatten().any(|c| c.is_some_and(|v| !v.is_finite())) {
            return Err(Error::Validation("non-finite cell".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = feature_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Validation(format!("duplicate feature `{dup}`")));
        }
        Ok(Self {
            feature_names,
            rows,
            labels,
            patient_ids,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn patient_ids(&self) -> &[String] {
        &self.patient_ids
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.rows.iter().flatten().filter(|c| c.is_none()).count()
    }

    /// Dense copy; fails if any cell is missing.
    pub fn dense_rows(&self) -> Result<Vec<Vec<f64>>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .enumerate()
                    .map(|(j, c)| {
                        c.ok_or_else(|| {
                            Error::Contract(format!("missing value at row {i}, column `{}`", self.feature_names[j]))
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> TabularDataset {
        TabularDataset {
            feature_names: self.feature_names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            patient_ids: idx.iter().map(|&i| self.patient_ids[i].clone()).collect(),
        }
    }

    /// Drop the named columns and append `new_names` with per-row values.
    pub fn replace_columns(
        &self,
        drop: &[&str],
        new_names: &[String],
        new_values: &[Vec<f64>],
    ) -> Result<TabularDataset> {
        if new_values.len() != self.n_rows() || new_values.iter().any(|v| v.len() != new_names.len()) {
            return Err(Error::Contract("replacement block shape does not match dataset".into()));
        }
        let keep: Vec<usize> = (0..self.n_features())
            .filter(|&j| !drop.contains(&self.feature_names[j].as_str()))
            .collect();
        let mut names: Vec<String> = keep.iter().map(|&j| self.feature_names[j].clone()).collect();
        names.extend(new_names.iter().cloned());
        let rows = self
            .rows
            .iter()
            .zip(new_values)
            .map(|(r, extra)| {
                let mut out: Vec<Option<f64>> = keep.iter().map(|&j| r[j]).collect();
                out.extend(extra.iter().map(|&v| Some(v)));
                out
            })
            .collect();
        TabularDataset::new(names, rows, self.labels.clone(), self.patient_ids.clone())
    }
}

pub fn read_tabular<R: Read>(reader: R) -> Result<TabularDataset> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 || header[0].trim() != "patient_id" || header[1].trim() != "label" {
        return Err(Error::Schema(
            "tabular header must start with `patient_id,label`".into(),
        ));
    }
    let names: Vec<String> = header.iter().skip(2).map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut pids = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let label = match rec[1].trim() {
            "0" => 0u8,
            "1" => 1u8,
            other => return Err(Error::Schema(format!("row {}: label `{other}` is not 0 or 1", i + 1))),
        };
        let cells = rec
            .iter()
            .skip(2)
            .map(|c| {
                let c = c.trim();
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::Schema(format!("row {}: unparseable cell `{c}`", i + 1)))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        pids.push(rec[0].trim().to_string());
        labels.push(label);
        rows.push(cells);
    }
    TabularDataset::new(names, rows, labels, pids)
}

pub fn load_tabular_csv(path: &Path) -> Result<TabularDataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tabular(f)
}

pub fn write_tabular<W: Write>(writer: W, ds: &TabularDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["patient_id".to_string(), "label".to_string()];
    header.extend(ds.feature_names.iter().cloned());
    w.write_record(&header)?;
    for ((pid, label), row) in ds.patient_ids.iter().zip(&ds.labels).zip(&ds.rows) {
        let mut rec = vec![pid.clone(), label.to_string()];
        rec.extend(row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<tabular>", e))?;
    Ok(())
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// One row per patient (first-appearance order): per-column median of the
/// observed values, majority label with ties going positive.
pub fn aggregate_median(dataset: &TabularDataset) -> TabularDataset {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, pid) in dataset.patient_ids.iter().enumerate() {
        groups
            .entry(pid.as_str())
            .or_insert_with(|| {
                order.push(pid.as_str());
                Vec::new()
            })
            .push(i);
    }
    let d = dataset.n_features();
    let mut rows = Vec::with_capacity(order.len());
    let mut labels = Vec::with_capacity(order.len());
    for pid in &order {
        let idx = &groups[pid];
        let row: Vec<Option<f64>> = (0..d)
            .map(|j| {
                let mut vals: Vec<f64> = idx.iter().filter_map(|&i| dataset.rows[i][j]).collect();
                median(&mut vals)
            })
            .collect();
        let pos = idx.iter().filter(|&&i| dataset.labels[i] == 1).count();
        labels.push(u8::from(2 * pos >= idx.len()));
        rows.push(row);
    }
    TabularDataset {
        feature_names: dataset.feature_names.clone(),
        rows,
        labels,
        patient_ids: order.into_iter().map(String::from).collect(),
    }
}

/// Settings of the bagged-tree imputation estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeConfig {
    pub rounds: usize,
    pub n_trees: usize,
    pub subsample: f64,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            n_trees: 20,
            subsample: 0.8,
            max_leaves: 31,
            min_samples_leaf: 5,
            seed: 0,
        }
    }
}

pub fn impute_iterative(dataset: &TabularDataset, rounds: usize, seed: u64) -> Result<TabularDataset> {
    impute_with(
        dataset,
        &ImputeConfig {
            rounds,
            seed,
            ..ImputeConfig::default()
        },
    )
}

fn bagged_fit_predict(
    x_train: &[Vec<f64>],
    y_train: &[f64],
    x_pred: &[Vec<f64>],
    cfg: &ImputeConfig,
    rng: &mut seed::Rng,
) -> Vec<f64> {
    let n = x_train.len();
    let d = x_train.first().map_or(0, Vec::len);
    let binned = BinnedMatrix::from_rows(x_train, d, 255);
    let grad: Vec<f64> = y_train.iter().map(|v| -v).collect();
    let hess = vec![1.0; n];
    let params = SplitParams {
        min_samples_leaf: cfg.min_samples_leaf,
        min_gain: 0.0,
        lambda: 0.0,
        min_hessian: 0.0,
    };
    let take = ((n as f64 * cfg.subsample).round() as usize).clamp(1, n);
    let trees: Vec<Tree> = (0..cfg.n_trees)
        .map(|_| {
            let mut rows = sample(rng, n, take).into_vec();
            rows.sort_unstable();
            grow_tree(&binned, rows, &grad, &hess, &params, cfg.max_leaves)
        })
        .collect();
    x_pred
        .iter()
        .map(|r| trees.iter().map(|t| t.predict(r)).sum::<f64>() / trees.len() as f64)
        .collect()
}

/// Round-robin imputation with bagged regression trees. Columns are visited
/// in ascending missingness, starting from a column-mean fill; observed
/// cells are never altered and imputed values are clamped to the observed
/// range of their column.
pub fn impute_with(dataset: &TabularDataset, cfg: &ImputeConfig) -> Result<TabularDataset> {
    let d = dataset.n_features();
    let n = dataset.n_rows();
    let mut ranges = Vec::with_capacity(d);
    let mut missing_by_col = Vec::with_capacity(d);
    for j in 0..d {
        let obs: Vec<f64> = dataset.rows.iter().filter_map(|r| r[j]).collect();
        if obs.is_empty() {
            return Err(Error::Unimputable {
                column: dataset.feature_names[j].clone(),
            });
        }
        let lo = obs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = obs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        ranges.push((lo, hi, mean));
        missing_by_col.push(n - obs.len());
    }
    if dataset.missing_count() == 0 {
        return Ok(dataset.clone());
    }
    if d < 2 {
        return Err(Error::Contract("iterative imputation needs at least 2 columns".into()));
    }

    let mut filled: Vec<Vec<f64>> = dataset
        .rows
        .iter()
        .map(|r| r.iter().enumerate().map(|(j, c)| c.unwrap_or(ranges[j].2)).collect())
        .collect();
    let mut visit: Vec<usize> = (0..d).filter(|&j| missing_by_col[j] > 0).collect();
    visit.sort_by_key(|&j| (missing_by_col[j], j));

    let mut rng = seed::rng(cfg.seed);
    for _ in 0..cfg.rounds {
        for &j in &visit {
            let others =
                |r: &Vec<f64>| -> Vec<f64> { r.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, &v)| v).collect() };
            let (mut x_obs, mut y_obs, mut x_mis, mut mis_rows) = (vec![], vec![], vec![], vec![]);
            for (i, row) in dataset.rows.iter().enumerate() {
                match row[j] {
                    Some(v) => {
                        x_obs.push(others(&filled[i]));
                        y_obs.push(v);
                    }
                    None => {
                        x_mis.push(others(&filled[i]));
                        mis_rows.push(i);
                    }
                }
            }
            let preds = bagged_fit_predict(&x_obs, &y_obs, &x_mis, cfg, &mut rng);
            let (lo, hi, _) = ranges[j];
            for (&i, p) in mis_rows.iter().zip(preds) {
                filled[i][j] = p.clamp(lo, hi);
            }
        }
    }

    Ok(TabularDataset {
        feature_names: dataset.feature_names.clone(),
        rows: filled.into_iter().map(|r| r.into_iter().map(Some).collect()).collect(),
        labels: dataset.labels.clone(),
        patient_ids: dataset.patient_ids.clone(),
    })
}

/// Population summary in the shape of a demographics table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub n: usize,
    pub age_median: f64,
    pub age_q1: f64,
    pub age_q3: f64,
    pub male_fraction: f64,
    pub outcome_fraction: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl CohortStats {
    pub fn compute(ages: &[f64], male: &[bool], outcome: &[bool]) -> Self {
        let mut sorted = ages.to_vec();
        sorted.sort_by(f64::total_cmp);
        let frac = |v: &[bool]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().filter(|&&b| b).count() as f64 / v.len() as f64
            }
        };
        Self {
            n: ages.len(),
            age_median: quantile_sorted(&sorted, 0.5),
            age_q1: quantile_sorted(&sorted, 0.25),
            age_q3: quantile_sorted(&sorted, 0.75),
            male_fraction: frac(male),
            outcome_fraction: frac(outcome),
        }
    }

    /// Stats of a tabular dataset with `age` and `gender` columns, over
    /// observed cells.
    pub fn of_dataset(ds: &TabularDataset) -> Result<Self> {
        let a = ds
            .feature_index("age")
            .ok_or_else(|| Error::Schema("dataset has no `age` column".into()))?;
        let g = ds
            .feature_index("gender")
            .ok_or_else(|| Error::Schema("dataset has no `gender` column".into()))?;
        let ages: Vec<f64> = ds.rows.iter().filter_map(|r| r[a]).collect();
        let male: Vec<bool> = ds.rows.iter().filter_map(|r| r[g]).map(|v| v >= 0.5).collect();
        let outcome: Vec<bool> = ds.labels.iter().map(|&l| l == 1).collect();
        Ok(Self::compute(&ages, &male, &outcome))
    }
}
