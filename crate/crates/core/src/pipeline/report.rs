//! Downstream results, pairwise tests and their text and CSV renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::metrics::{EvalResult, Metric};
use crate::stats::{t_test, ALPHA};

pub const RESULTS_FORMAT_VERSION: u32 = 1;
pub const LEARNER: &str = "gradient-boosted trees (reimplementation)";
pub const BASELINE: &str = "baseline";

/// One row of the grid: the baseline or a GDP cell on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    /// `baseline` or a cell id such as `seq-trad`.
    pub cell: String,
    /// `baseline`, `ns` or `seq`.
    pub approach: String,
    /// `raw` for the baseline, else the encoding name.
    pub encoding: String,
    pub auroc: EvalResult,
    pub ece: EvalResult,
    pub demographic_features: Vec<String>,
    /// Percentage of total split gain.
    pub demographic_gain_share: f64,
}

/// Welch test of `b` against `a`; `t > 0` means `b` has the larger mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub a: String,
    pub b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResults {
    pub format_version: u32,
    pub manifest_id: String,
    pub dataset: String,
    pub n_train_rows: usize,
    pub n_test_rows: usize,
    pub bootstraps: usize,
    /// `test_resample` or `refit`.
    pub bootstrap_mode: String,
    /// Frame scope the GDP models were pretrained with.
    pub frame_scope: String,
    pub learner: String,
    pub cells: Vec<CellResult>,
    pub comparisons: Vec<Comparison>,
}

impl DatasetResults {
    pub fn cell(&self, id: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.cell == id)
    }

    pub fn comparison(&self, metric: Metric, a: &str, b: &str) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.metric == metric.name() && c.a == a && c.b == b)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: DatasetResults = serde_json::from_str(text).map_err(|e| Error::Format(format!("results file: {e}")))?;
        if r.format_version != RESULTS_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported results format_version {}",
                r.format_version
            )));
        }
        Ok(r)
    }
}

fn replicates(c: &CellResult, metric: Metric) -> &EvalResult {
    match metric {
        Metric::Auroc => &c.auroc,
        Metric::Ece => &c.ece,
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn compare(a: &CellResult, b: &CellResult, metric: Metric) -> Result<Comparison> {
    let (ra, rb) = (replicates(a, metric), replicates(b, metric));
    let r = t_test(&rb.replicates, &ra.replicates)?;
    Ok(Comparison {
        metric: metric.name().to_string(),
        a: a.cell.clone(),
        b: b.cell.clone(),
        mean_a: ra.mean,
        mean_b: rb.mean,
        t: finite(r.t),
        df: finite(r.df),
        p: r.p,
        significant: r.significant,
    })
}

/// Baseline vs NS, baseline vs Seq and NS vs Seq for every encoding
/// present, for both metrics.
pub fn all_comparisons(cells: &[CellResult]) -> Result<Vec<Comparison>> {
    let find = |id: &str| cells.iter().find(|c| c.cell == id);
    let mut out = Vec::new();
    for metric in [Metric::Auroc, Metric::Ece] {
        for enc in EncoderKind::ALL {
            let ns = find(&format!("ns-{}", enc.name()));
            let seq = find(&format!("seq-{}", enc.name()));
            let base = find(BASELINE);
            for (a, b) in [(base, ns), (base, seq), (ns, seq)] {
                if let (Some(a), Some(b)) = (a, b) {
                    out.push(compare(a, b, metric)?);
                }
            }
        }
    }
    Ok(out)
}

/// p-value as printed in the tables.
/// `p=0.123`, or `p<0.001` when floored.
fn p_label(p: f64) -> String {
    let f = fmt_p(p);
    if f.starts_with('<') {
        format!("p{f}")
    } else {
        format!("p={f}")
    }
}

pub fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

fn star(significant: bool) -> &'static str {
    if significant {
        "*"
    } else {
        ""
    }
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|j| {
            rows.iter()
                .filter_map(|r| r.get(j))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(j, s)| format!("{s:<w$}", w = widths[j]))
            .collect();
        out.push_str(line.join("   ").trim_end());
        out.push('\n');
    }
    out
}

fn metric_block(res: &DatasetResults, metric: Metric) -> String {
    let encs: Vec<&str> = EncoderKind::ALL.iter().map(|e| e.name()).collect();
    let mut rows = vec![{
        let mut h = vec![metric.name().to_uppercase()];
        h.extend(encs.iter().map(|e| e.to_string()));
        h
    }];
    if let Some(b) = res.cell(BASELINE) {
        let e = replicates(b, metric);
        rows.push(vec![
            "Baseline".into(),
            format!("{:.3} [{:.3}, {:.3}]", e.mean, e.ci_low, e.ci_high),
        ]);
    }
    for (label, approach) in [("NS", "ns"), ("Seq", "seq")] {
        let mut row = vec![label.to_string()];
        for enc in &encs {
            let id = format!("{approach}-{enc}");
            row.push(match res.cell(&id) {
                Some(c) => {
                    let e = replicates(c, metric);
                    let vs = res.comparison(metric, BASELINE, &id);
                    let sig = vs.is_some_and(|v| v.significant);
                    let p = vs.map(|v| format!(" {}", p_label(v.p))).unwrap_or_default();
                    format!("{:.3}{} [{:.3}, {:.3}]{p}", e.mean, star(sig), e.ci_low, e.ci_high)
                }
                None => "-".into(),
            });
        }
        rows.push(row);
    }
    let mut row = vec!["NS vs Seq".to_string()];
    for enc in &encs {
        row.push(
            match res.comparison(metric, &format!("ns-{enc}"), &format!("seq-{enc}")) {
                Some(c) => format!("{}{}", p_label(c.p), star(c.significant)),
                None => "-".into(),
            },
        );
    }
    rows.push(row);
    align(&rows)
}

fn share_block(res: &DatasetResults) -> String {
    let encs: Vec<&str> = EncoderKind::ALL.iter().map(|e| e.name()).collect();
    let mut head = vec!["GAIN SHARE %".to_string()];
    head.extend(encs.iter().map(|e| e.to_string()));
    let mut rows = vec![head];
    if let Some(b) = res.cell(BASELINE) {
        rows.push(vec!["Baseline".into(), format!("{:.2}", b.demographic_gain_share)]);
    }
    for (label, approach) in [("NS", "ns"), ("Seq", "seq")] {
        let mut row = vec![label.to_string()];
        for enc in &encs {
            row.push(
                res.cell(&format!("{approach}-{enc}"))
                    .map_or("-".into(), |c| format!("{:.2}", c.demographic_gain_share)),
            );
        }
        rows.push(row);
    }
    align(&rows)
}

/// Aligned plain-text tables: AUROC, ECE and demographic gain share, rows
/// Baseline / NS / Seq, columns trad / pe / txt.
/// Text table for one dataset, cited by `manifest_id` (the command writing
/// it), which may differ from the manifest that produced `res`.
pub fn render_table(res: &DatasetResults, manifest_id: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{}: {} train rows, {} test rows, {} bootstrap replicates",
        res.dataset, res.n_train_rows, res.n_test_rows, res.bootstraps
    );
    let _ = writeln!(
        s,
        "learner: {}; bootstrap: {}; frame scope: {}",
        res.learner, res.bootstrap_mode, res.frame_scope
    );
    let _ = writeln!(s, "manifest {manifest_id}");
    if res.manifest_id != manifest_id {
        let _ = writeln!(s, "results from manifest {}", res.manifest_id);
    }
    s.push('\n');
    s.push_str(&metric_block(res, Metric::Auroc));
    s.push('\n');
    s.push_str(&metric_block(res, Metric::Ece));
    s.push('\n');
    s.push_str(&share_block(res));
    s.push('\n');
    let _ = writeln!(
        s,
        "Mean [95% percentile interval]. * p < {ALPHA} (Welch t-test over bootstrap replicates) against Baseline, or between NS and Seq in the last row."
    );
    s
}

/// `dataset,cell,approach,encoding,metric,mean,ci_low,ci_high`
pub fn metrics_csv(all: &[DatasetResults], preamble: &str) -> String {
    let mut s = preamble.to_string();
    s.push_str("dataset,cell,approach,encoding,metric,mean,ci_low,ci_high\n");
    for r in all {
        for c in &r.cells {
            for e in [&c.auroc, &c.ece] {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{:?},{:?},{:?}",
                    r.dataset,
                    c.cell,
                    c.approach,
                    c.encoding,
                    e.metric.name(),
                    e.mean,
                    e.ci_low,
                    e.ci_high
                );
            }
        }
    }
    s
}

/// `dataset,cell,metric,replicate,value`
pub fn replicates_csv(res: &DatasetResults, preamble: &str) -> String {
    let mut s = preamble.to_string();
    s.push_str("dataset,cell,metric,replicate,value\n");
    for c in &res.cells {
        for e in [&c.auroc, &c.ece] {
            for (i, v) in e.replicates.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{i},{v:?}", res.dataset, c.cell, e.metric.name());
            }
        }
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// `dataset,metric,a,b,mean_a,mean_b,t,df,p,significant`
pub fn tests_csv(all: &[DatasetResults], preamble: &str) -> String {
    let mut s = preamble.to_string();
    s.push_str("dataset,metric,a,b,mean_a,mean_b,t,df,p,significant\n");
    for r in all {
        for c in &r.comparisons {
            let _ = writeln!(
                s,
                "{},{},{},{},{:?},{:?},{},{},{:?},{}",
                r.dataset,
                c.metric,
                c.a,
                c.b,
                c.mean_a,
                c.mean_b,
                opt(c.t),
                opt(c.df),
                c.p,
                c.significant
            );
        }
    }
    s
}

/// Bar data: demographic gain share per dataset and cell, with the change
/// against the dataset's baseline.
pub fn gain_shares_csv(all: &[DatasetResults], preamble: &str) -> String {
    let mut s = preamble.to_string();
    s.push_str("dataset,approach,encoding,share_pct,delta_vs_baseline_pct\n");
    for r in all {
        let base = r.cell(BASELINE).map(|b| b.demographic_gain_share);
        for c in &r.cells {
            let delta = base
                .map(|b| format!("{:?}", c.demographic_gain_share - b))
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{:?},{delta}",
                r.dataset, c.approach, c.encoding, c.demographic_gain_share
            );
        }
    }
    s
}

/// All dataset tables, one after another.
pub fn render_summary(all: &[DatasetResults], manifest_id: &str) -> String {
    let mut s = format!("report manifest {manifest_id}\n");
    for r in all {
        s.push('\n');
        s.push_str(&render_table(r, manifest_id));
    }
    s
}
