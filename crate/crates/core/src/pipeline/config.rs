//! Run configuration: one TOML file with nested sections. Every field has a
//! default, so an empty file (plus `format_version`) is a valid config.
//!
//! ```toml
//! format_version = 1
//! seed = 42
//! out_dir = "runs/default"
//! cells = "all"
//!
//! [syngen]
//! profiles = ["pneumonia_like", "osteoporosis_like", "thyroid_like"]
//! [syngen.cohort]
//! n_patients = 2000
//!
//! [pretrain]
//! scope = "cohort"
//! [pretrain.train]
//! epochs = 30
//!
//! [encoder]
//! embedder = "fallback"
//!
//! [downstream]
//! bootstraps = 50
//!
//! [tsne]
//! perplexity = 5.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::transfer::{parse_cells, Cell};
use crate::data::ImputeConfig;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::gbdt::BoostConfig;
use crate::nn::TrainConfig;
use crate::sequencing::FrameScope;
use crate::syngen::{CohortSpec, DownstreamSpec, Profile};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Comma-separated cell ids or `all`.
    #[serde(default = "default_cells")]
    pub cells: String,
    #[serde(default)]
    pub syngen: SyngenSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub downstream: DownstreamSection,
    #[serde(default)]
    pub tsne: TsneSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_cells() -> String {
    "all".to_string()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            seed: 0,
            out_dir: default_out_dir(),
            cells: default_cells(),
            syngen: SyngenSection::default(),
            data: DataSection::default(),
            pretrain: PretrainSection::default(),
            encoder: EncoderConfig::default(),
            downstream: DownstreamSection::default(),
            tsne: TsneSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyngenSection {
    pub cohort: CohortSpec,
    pub profiles: Vec<Profile>,
    /// Full downstream specs replacing the preset of their profile.
    pub overrides: Vec<DownstreamSpec>,
}

impl Default for SyngenSection {
    fn default() -> Self {
        Self {
            cohort: CohortSpec::default(),
            profiles: Profile::ALL.to_vec(),
            overrides: Vec::new(),
        }
    }
}

impl SyngenSection {
    /// Spec for `profile`: the override if present, else the preset.
    pub fn downstream_spec(&self, profile: Profile) -> DownstreamSpec {
        self.overrides
            .iter()
            .find(|s| s.profile == profile)
            .cloned()
            .unwrap_or_else(|| DownstreamSpec::preset(profile))
    }
}

/// Input locations. Relative paths resolve against `out_dir`; empty values
/// point at the files `syngen` writes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub pretrain_csv: Option<PathBuf>,
    pub cci_table: Option<PathBuf>,
    pub downstream: Vec<DatasetEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub split_ratio: f64,
    pub scope: FrameScope,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub train: TrainConfig,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            split_ratio: 0.8,
            scope: FrameScope::Cohort,
            hidden_dim: 32,
            embed_dim: 8,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamSection {
    pub boost: BoostConfig,
    pub impute: ImputeConfig,
    pub bootstraps: usize,
    pub test_ratio: f64,
    /// Resample the training rows and refit the classifier for every
    /// replicate instead of resampling test predictions of one fit.
    pub refit_per_replicate: bool,
}

impl Default for DownstreamSection {
    fn default() -> Self {
        Self {
            boost: BoostConfig::default(),
            impute: ImputeConfig::default(),
            bootstraps: 50,
            test_ratio: 0.2,
            refit_per_replicate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneSection {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub step_size: f64,
    /// Rows projected per dataset; `0` keeps all rows, otherwise a seeded
    /// subsample of this size.
    pub max_points: usize,
}

impl Default for TsneSection {
    fn default() -> Self {
        let d = crate::tsne::TsneConfig::default();
        Self {
            perplexity: d.perplexity,
            iterations: d.iterations,
            early_exaggeration: d.early_exaggeration,
            exaggeration_iters: d.exaggeration_iters,
            step_size: d.step_size,
            max_points: 0,
        }
    }
}

impl TsneSection {
    pub fn to_tsne_config(&self, seed: u64) -> crate::tsne::TsneConfig {
        crate::tsne::TsneConfig {
            perplexity: self.perplexity,
            iterations: self.iterations,
            early_exaggeration: self.early_exaggeration,
            exaggeration_iters: self.exaggeration_iters,
            step_size: self.step_size,
            seed,
            ..Default::default()
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported config format_version {} (expected {CONFIG_FORMAT_VERSION})",
                self.format_version
            )));
        }
        parse_cells(&self.cells)?;
        self.encoder.validate()?;
        self.pretrain.train.validate()?;
        self.downstream.boost.validate()?;
        let p = &self.pretrain;
        if !(p.split_ratio > 0.0 && p.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "pretrain.split_ratio must be in (0, 1), got {}",
                p.split_ratio
            )));
        }
        crate::nn::ModelDims {
            input_dim: 2,
            hidden_dim: p.hidden_dim,
            embed_dim: p.embed_dim,
        }
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;
        let d = &self.downstream;
        if d.bootstraps < 2 {
            return Err(Error::Config("downstream.bootstraps must be >= 2".into()));
        }
        if !(d.test_ratio > 0.0 && d.test_ratio < 1.0) {
            return Err(Error::Config(format!(
                "downstream.test_ratio must be in (0, 1), got {}",
                d.test_ratio
            )));
        }
        if self.tsne.max_points != 0 && self.tsne.max_points < 10 {
            return Err(Error::Config("tsne.max_points must be 0 (all) or >= 10".into()));
        }
        let mut names: Vec<&str> = self.data.downstream.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("data.downstream names must be unique".into()));
        }
        if names.iter().any(|n| n.is_empty() || n.contains(['/', '\\'])) {
            return Err(Error::Config(
                "data.downstream names must be non-empty and contain no path separators".into(),
            ));
        }
        Ok(())
    }

    pub fn cells(&self) -> Result<Vec<Cell>> {
        parse_cells(&self.cells)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    pub fn pretrain_csv(&self) -> PathBuf {
        match &self.data.pretrain_csv {
            Some(p) => self.resolve(p),
            None => self.out_dir.join("data").join("pretrain_visits.csv"),
        }
    }

    pub fn cci_table(&self) -> Option<PathBuf> {
        self.data.cci_table.as_deref().map(|p| self.resolve(p))
    }

    /// Downstream datasets to evaluate, by name.
    pub fn downstream_datasets(&self) -> Vec<(String, PathBuf)> {
        if self.data.downstream.is_empty() {
            self.syngen
                .profiles
                .iter()
                .map(|p| {
                    (
                        p.name().to_string(),
                        self.out_dir.join("data").join(format!("{}.csv", p.name())),
                    )
                })
                .collect()
        } else {
            self.data
                .downstream
                .iter()
                .map(|d| (d.name.clone(), self.resolve(&d.path)))
                .collect()
        }
    }

    pub fn model_dir(&self) -> PathBuf {
        self.out_dir.join("models")
    }

    pub fn model_path(&self, cell: Cell) -> PathBuf {
        self.model_dir().join(format!("{}.gdpm", cell.id()))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join("manifest.jsonl")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse("format_version = 1\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.cells().unwrap().len(), 6);
        assert_eq!(cfg.downstream.bootstraps, 50);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig {
            seed: 9,
            cells: "seq-trad,ns-pe".into(),
            ..RunConfig::default()
        };
        cfg.pretrain.scope = FrameScope::Patient;
        let back = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_fields() {
        for text in [
            "",
            "format_version = 2",
            "format_version = 1\nbogus = 3",
            "format_version = 1\ncells = \"ns-foo\"",
            "format_version = 1\n[encoder]\nd_model = 7",
            "format_version = 1\n[downstream]\nbootstraps = 1",
            "format_version = 1\n[pretrain]\nsplit_ratio = 1.0",
        ] {
            let e = RunConfig::parse(text).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}: {e}");
        }
    }

    #[test]
    fn default_inputs_live_under_out_dir() {
        let cfg = RunConfig {
            out_dir: "/tmp/x".into(),
            ..Default::default()
        };
        assert_eq!(cfg.pretrain_csv(), PathBuf::from("/tmp/x/data/pretrain_visits.csv"));
        let ds = cfg.downstream_datasets();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds[0].1, PathBuf::from("/tmp/x/data/pneumonia_like.csv"));
    }
}
