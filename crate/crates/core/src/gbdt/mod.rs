//! Gradient-boosted decision trees.
//!
//! Leaf-wise growth over 255-bin histograms with second-order gradients, for
//! binary log-loss (the downstream evaluator) and squared error. Every
//! accepted split's gain is credited to its feature in a [`GainLedger`].

pub mod binning;
pub mod ledger;
pub mod split;
pub mod tree;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::scalar::sigmoid;

pub use binning::{BinMapper, BinnedMatrix};
pub use ledger::{gain_share, GainLedger};
pub use split::{best_split, best_split_features, split_gain, SplitCandidate, SplitParams};
pub use tree::{grow_tree, Node, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    BinaryLogloss,
    SquaredError,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::BinaryLogloss => "binary_logloss",
            Objective::SquaredError => "squared_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub objective: Objective,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub min_gain: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    pub min_hessian: f64,
    pub histogram_bins: usize,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            n_estimators: 50,
            learning_rate: 0.1,
            objective: Objective::BinaryLogloss,
            max_leaves: 31,
            min_samples_leaf: 20,
            min_gain: 0.0,
            lambda: 0.0,
            min_hessian: 1e-3,
            histogram_bins: 255,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::Config("n_estimators must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.max_leaves < 2 {
            return Err(Error::Config("max_leaves must be >= 2".into()));
        }
        if self.histogram_bins < 2 || self.histogram_bins > u16::MAX as usize {
            return Err(Error::Config("histogram_bins must be in [2, 65535]".into()));
        }
        if self.lambda < 0.0 || self.min_gain < 0.0 {
            return Err(Error::Config("lambda and min_gain must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedModel {
    pub trees: Vec<Tree>,
    pub base_score: f64,
    pub config: BoostConfig,
    pub ledger: GainLedger,
    pub feature_names: Vec<String>,
    /// Training loss after each boosting round.
    pub train_loss: Vec<f64>,
    pub warnings: Vec<String>,
}

const PROB_CLAMP: f64 = 1e-15;

impl BoostedModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// `base_score + learning_rate · Σ leaf values`
    pub fn predict_raw_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        self.base_score + self.config.learning_rate * sum
    }

    fn check_rows(&self, rows: &[Vec<f64>]) -> Result<()> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != self.n_features() {
                return Err(Error::Contract(format!(
                    "row {i} has {} features, model expects {}",
                    r.len(),
                    self.n_features()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract(format!(
                    "row {i} contains a missing or non-finite value"
                )));
            }
        }
        Ok(())
    }

    pub fn predict_raw(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_rows(rows)?;
        Ok(rows.iter().map(|r| self.predict_raw_row(r)).collect())
    }

    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_rows(rows)?;
        Ok(rows
            .iter()
            .map(|r| sigmoid(self.predict_raw_row(r)).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
            .collect())
    }

    /// Self-describing text dump of trees, splits and gains.
    pub fn dump(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "format_version 1");
        let _ = writeln!(s, "kind boosted_model");
        let _ = writeln!(s, "learner reimplementation");
        let _ = writeln!(s, "objective {}", c.objective.name());
        let _ = writeln!(s, "n_estimators {}", c.n_estimators);
        let _ = writeln!(s, "learning_rate {}", c.learning_rate);
        let _ = writeln!(s, "max_leaves {}", c.max_leaves);
        let _ = writeln!(s, "min_samples_leaf {}", c.min_samples_leaf);
        let _ = writeln!(s, "min_gain {}", c.min_gain);
        let _ = writeln!(s, "lambda {}", c.lambda);
        let _ = writeln!(s, "histogram_bins {}", c.histogram_bins);
        let _ = writeln!(s, "base_score {}", self.base_score);
        let _ = writeln!(s, "features {}", self.feature_names.join(","));
        let _ = writeln!(s, "trees {}", self.trees.len());
        for (t, tree) in self.trees.iter().enumerate() {
            let _ = writeln!(s, "tree {t} nodes {}", tree.nodes().len());
            for (i, node) in tree.nodes().iter().enumerate() {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        gain,
                        left,
                        right,
                    } => {
                        let _ = writeln!(
                            s,
                            "  node {i} split feature {} threshold {threshold} gain {gain} left {left} right {right}",
                            self.feature_names[*feature]
                        );
                    }
                    Node::Leaf { value } => {
                        let _ = writeln!(s, "  node {i} leaf {value}");
                    }
                }
            }
        }
        let _ = writeln!(s, "ledger");
        for (name, gain) in self.ledger.entries() {
            let _ = writeln!(s, "  {name} {gain}");
        }
        s
    }
}

fn logloss(raw: &[f64], y: &[f64]) -> f64 {
    let n = raw.len() as f64;
    raw.iter()
        .zip(y)
        .map(|(&f, &t)| {
            let p = sigmoid(f).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

fn mse(raw: &[f64], y: &[f64]) -> f64 {
    raw.iter().zip(y).map(|(f, t)| (f - t) * (f - t)).sum::<f64>() / raw.len() as f64
}

/// Fit on a fully observed dataset against its binary labels.
pub fn fit(train: &TabularDataset, config: &BoostConfig) -> Result<BoostedModel> {
    let rows = train.dense_rows()?;
    let y: Vec<f64> = train.labels().iter().map(|&l| f64::from(l)).collect();
    fit_matrix(&rows, &y, train.feature_names(), config)
}

/// Fit on a dense row-major matrix. Targets must be 0/1 for log-loss.
pub fn fit_matrix(
    rows: &[Vec<f64>],
    y: &[f64],
    feature_names: &[String],
    config: &BoostConfig,
) -> Result<BoostedModel> {
    config.validate()?;
    let n = rows.len();
    if n != y.len() {
        return Err(Error::Contract(format!("{n} rows but {} targets", y.len())));
    }
    if n < 2 * config.min_samples_leaf.max(1) {
        return Err(Error::Contract(format!(
            "{n} rows is fewer than 2 x min_samples_leaf ({})",
            config.min_samples_leaf
        )));
    }
    let d = feature_names.len();
    if let Some(i) = rows
        .iter()
        .position(|r| r.len() != d || r.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Contract(format!(
            "row {i} is not a finite {d}-feature row (impute before fitting)"
        )));
    }

    let mut warnings = Vec::new();
    let mut ledger = GainLedger::new(feature_names);
    let base_score = match config.objective {
        Objective::BinaryLogloss => {
            if y.iter().any(|&t| t != 0.0 && t != 1.0) {
                return Err(Error::Contract("log-loss targets must be 0 or 1".into()));
            }
            let p = (y.iter().sum::<f64>() / n as f64).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            (p / (1.0 - p)).ln()
        }
        Objective::SquaredError => y.iter().sum::<f64>() / n as f64,
    };
    let single_class =
        config.objective == Objective::BinaryLogloss && (y.iter().all(|&t| t == 1.0) || y.iter().all(|&t| t == 0.0));
    if single_class {
        warnings.push("single-class labels: model reduced to its prior".to_string());
        return Ok(BoostedModel {
            trees: Vec::new(),
            base_score,
            config: config.clone(),
            ledger,
            feature_names: feature_names.to_vec(),
            train_loss: Vec::new(),
            warnings,
        });
    }

    let binned = BinnedMatrix::from_rows(rows, d, config.histogram_bins);
    let params = SplitParams::from(config);
    let mut raw = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(config.n_estimators);
    let mut train_loss = Vec::with_capacity(config.n_estimators);

    for _ in 0..config.n_estimators {
        match config.objective {
            Objective::BinaryLogloss => {
                for i in 0..n {
                    let p = sigmoid(raw[i]);
                    grad[i] = p - y[i];
                    hess[i] = (p * (1.0 - p)).max(1e-16);
                }
            }
            Objective::SquaredError => {
                for i in 0..n {
                    grad[i] = raw[i] - y[i];
                    hess[i] = 1.0;
                }
            }
        }
        let tree = grow_tree(&binned, (0..n).collect(), &grad, &hess, &params, config.max_leaves);
        for s in tree.splits() {
            ledger.record(s.feature, s.gain);
        }
        for (i, r) in rows.iter().enumerate() {
            raw[i] += config.learning_rate * tree.predict(r);
        }
        train_loss.push(match config.objective {
            Objective::BinaryLogloss => logloss(&raw, y),
            Objective::SquaredError => mse(&raw, y),
        });
        let stalled = tree.n_leaves() == 1;
        trees.push(tree);
        if stalled {
            warnings.push(format!(
                "no admissible split after {} trees; stopped early",
                trees.len()
            ));
            break;
        }
    }

    Ok(BoostedModel {
        trees,
        base_score,
        config: config.clone(),
        ledger,
        feature_names: feature_names.to_vec(),
        train_loss,
        warnings,
    })
}

pub fn predict_proba(model: &BoostedModel, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    model.predict_proba(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn single_class_predicts_prior() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y = vec![1.0; 40];
        let m = fit_matrix(&rows, &y, &names(1), &BoostConfig::default()).unwrap();
        assert!(m.trees.is_empty());
        assert_eq!(m.warnings.len(), 1);
        let p = m.predict_proba(&rows).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0).abs() < 1e-12 && v < 1.0));
    }

    #[test]
    fn zero_tree_balanced_model_is_half() {
        let m = BoostedModel {
            trees: vec![],
            base_score: 0.0,
            config: BoostConfig::default(),
            ledger: GainLedger::new(&names(1)),
            feature_names: names(1),
            train_loss: vec![],
            warnings: vec![],
        };
        assert_eq!(m.predict_proba(&[vec![3.0]]).unwrap(), vec![0.5]);
    }

    #[test]
    fn hand_built_stump() {
        let stump = Tree::from_nodes(vec![
            Node::Split {
                feature: 0,
                threshold: 0.0,
                gain: 1.0,
                left: 1,
                right: 2,
            },
            Node::Leaf { value: -1.0 },
            Node::Leaf { value: 1.0 },
        ]);
        let m = BoostedModel {
            trees: vec![stump],
            base_score: 0.0,
            config: BoostConfig::default(),
            ledger: GainLedger::new(&names(1)),
            feature_names: names(1),
            train_loss: vec![],
            warnings: vec![],
        };
        let p = m.predict_proba(&[vec![-2.0], vec![2.0]]).unwrap();
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert!((p[0] - s(-0.1)).abs() < 1e-15);
        assert!((p[1] - s(0.1)).abs() < 1e-15);
    }

    #[test]
    fn width_mismatch_is_contract_error() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, 0.0]).collect();
        let y: Vec<f64> = (0..40).map(|i| f64::from(i >= 20)).collect();
        let m = fit_matrix(&rows, &y, &names(2), &BoostConfig::default()).unwrap();
        assert!(matches!(m.predict_proba(&[vec![1.0]]), Err(Error::Contract(_))));
        assert!(matches!(
            m.predict_proba(&[vec![1.0, f64::NAN]]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn separable_data_loss_decreases_monotonically() {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..200 {
            let a = ((i * 7919) % 200) as f64 / 200.0;
            let b = ((i * 104_729) % 200) as f64 / 200.0;
            rows.push(vec![a, b]);
            y.push(f64::from(a + b > 1.0));
        }
        let m = fit_matrix(&rows, &y, &names(2), &BoostConfig::default()).unwrap();
        assert_eq!(m.trees.len(), 50);
        assert!(m.train_loss.windows(2).all(|w| w[1] < w[0]), "{:?}", m.train_loss);
    }

    #[test]
    fn ledger_equals_sum_of_split_gains() {
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), (i % 7) as f64])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| f64::from(r[0] + 0.3 * r[2] > 1.0)).collect();
        let m = fit_matrix(&rows, &y, &names(3), &BoostConfig::default()).unwrap();
        let split_total: f64 = m.trees.iter().flat_map(|t| t.splits()).map(|s| s.gain).sum();
        let rel = (m.ledger.total() - split_total).abs() / split_total;
        assert!(rel < 1e-9);
        assert!(m.dump().contains("learner reimplementation"));
    }
}
