use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Cumulative split gain per feature, in feature order.
#[derive(Debug, Clone, PartialEq)]
pub struct GainLedger {
    entries: Vec<(String, f64)>,
}

impl GainLedger {
    pub fn new(feature_names: &[String]) -> Self {
        Self {
            entries: feature_names.iter().map(|n| (n.clone(), 0.0)).collect(),
        }
    }

    pub fn record(&mut self, feature: usize, gain: f64) {
        debug_assert!(gain >= 0.0);
        self.entries[feature].1 += gain;
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn gain(&self, feature: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == feature).map(|e| e.1)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// 1-based rank of `feature` by descending gain; ties keep feature order.
    pub fn rank(&self, feature: &str) -> Option<usize> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&a, &b| self.entries[b].1.total_cmp(&self.entries[a].1).then(a.cmp(&b)));
        order.iter().position(|&i| self.entries[i].0 == feature).map(|p| p + 1)
    }

    /// Percentage of total gain carried by the features in `subset`.
    pub fn gain_share<S: AsRef<str>>(&self, subset: &[S]) -> Result<f64> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::UndefinedShare);
        }
        let part: f64 = self
            .entries
            .iter()
            .filter(|(n, _)| subset.iter().any(|s| s.as_ref() == n))
            .map(|e| e.1)
            .sum();
        Ok(100.0 * part / total)
    }

    /// `feature,gain,share_pct`
    pub fn to_csv(&self) -> String {
        let total = self.total();
        let mut out = String::from("feature,gain,share_pct\n");
        for (name, gain) in &self.entries {
            let share = if total > 0.0 { 100.0 * gain / total } else { 0.0 };
            let _ = writeln!(out, "{name},{gain},{share}");
        }
        out
    }
}

pub fn gain_share<S: AsRef<str>>(ledger: &GainLedger, feature_subset: &[S]) -> Result<f64> {
    ledger.gain_share(feature_subset)
}
