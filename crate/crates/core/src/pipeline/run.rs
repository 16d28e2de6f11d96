//! The six commands. Each validates its inputs, seals a manifest, computes
//! every output in memory, and only then writes files and appends the
//! manifest, so a failed run leaves nothing behind.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::manifest::{csv_preamble, DesignFlags, RunManifest, Staged};
use super::report::{self, CellResult, DatasetResults, BASELINE, RESULTS_FORMAT_VERSION};
use super::transfer::{
    embed_rows, encode_rows, gdp_column_names, pretrain_cell, with_embeddings, Cell, Demographics, PretrainSettings,
    PretrainSummary,
};
use crate::cci::{load_cci_table, CciTable};
use crate::data::{
    aggregate_median, impute_with, load_tabular_csv, load_visits_csv, write_tabular, write_visits, CohortStats,
    ImputeConfig, TabularDataset,
};
use crate::encoders::{EmbedderMode, Encoder};
use crate::error::{Error, Result};
use crate::gbdt::{fit_matrix, BoostConfig};
use crate::metrics::{bootstrap_eval, EvalResult, Metric, ECE_BINS, MAX_REDRAWS};
use crate::nn::{load_model, write_model_cited, GdpModel};
use crate::seed::{derive_seed, rng, rng_stream};
use crate::sequencing::split_by_patient;
use crate::syngen::{gen_downstream, gen_pretrain_cohort, CohortSpec, DownstreamSpec};
use crate::tsne::{tsne, tsne_csv, TsnePoint};

pub const SUMMARY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Syngen,
    Pretrain,
    Embed,
    Downstream,
    Tsne,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Syngen => "syngen",
            Command::Pretrain => "pretrain",
            Command::Embed => "embed",
            Command::Downstream => "downstream",
            Command::Tsne => "tsne",
            Command::Report => "report",
        }
    }
}

/// Dispatch one command.
pub fn run(command: Command, cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    match command {
        Command::Syngen => run_syngen(cfg),
        Command::Pretrain => run_pretrain(cfg),
        Command::Embed => run_embed(cfg),
        Command::Downstream => run_downstream(cfg),
        Command::Tsne => run_tsne(cfg),
        Command::Report => run_report(cfg),
    }
}

fn design_flags(cfg: &RunConfig, encoder: Option<&Encoder>) -> DesignFlags {
    let mode = match cfg.encoder.embedder {
        EmbedderMode::Remote => "remote",
        EmbedderMode::Fallback => "fallback",
    };
    DesignFlags {
        attention_tokenization: "two tokens split at input_dim/2".into(),
        t_test: "welch".into(),
        frame_scope: cfg.pretrain.scope.name().into(),
        embedder_mode: mode.into(),
        embedder_version: encoder.map(Encoder::text_embedder_version).unwrap_or_default(),
        embedder_downgrades: encoder.map(Encoder::downgrades).unwrap_or_default(),
        text_embeddings_unit_norm: true,
        embeddings_replace_raw_columns: true,
        pretrain_loss: "mse over unpadded steps".into(),
        ci_method: "bootstrap percentile 2.5/97.5".into(),
        ece_bins: ECE_BINS,
        tsne_original_scaling: "per-column min-max".into(),
    }
}

fn load_table(cfg: &RunConfig) -> Result<CciTable> {
    match cfg.cci_table() {
        Some(p) => load_cci_table(&p),
        None => Ok(CciTable::bundled()),
    }
}

fn finish(mut manifest: RunManifest, staged: Staged, cfg: &RunConfig) -> Result<RunManifest> {
    staged.commit(&cfg.out_dir, &mut manifest)?;
    manifest.append_to(&cfg.manifest_path())?;
    Ok(manifest)
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("summary serializes") + "\n"
}

fn tabular_bytes(ds: &TabularDataset, preamble: &str) -> Result<Vec<u8>> {
    let mut buf = preamble.as_bytes().to_vec();
    write_tabular(&mut buf, ds)?;
    Ok(buf)
}

#[derive(Serialize)]
struct SyngenSummary<'a> {
    format_version: u32,
    manifest_id: &'a str,
    cohort_spec: &'a CohortSpec,
    cohort: CohortStats,
    n_visits: usize,
    datasets: Vec<(DownstreamSpec, CohortStats)>,
}

/// Pretraining cohort plus one CSV per downstream profile.
pub fn run_syngen(cfg: &RunConfig) -> Result<RunManifest> {
    let mut m = RunManifest::new(Command::Syngen.name(), cfg, design_flags(cfg, None));
    if let Some(p) = cfg.cci_table() {
        m.add_input("cci_table", &p)?;
    }
    let mut cohort = cfg.syngen.cohort.clone();
    cohort.seed = m.add_seed("syngen/cohort", derive_seed(cfg.seed, "syngen", "cohort"));
    cohort.validate()?;
    let mut specs = Vec::new();
    for &p in &cfg.syngen.profiles {
        let mut s = cfg.syngen.downstream_spec(p);
        s.seed = m.add_seed(
            format!("syngen/{}", p.name()),
            derive_seed(cfg.seed, "syngen", p.name()),
        );
        s.validate()?;
        specs.push(s);
    }
    let table = load_table(cfg)?;
    let id = m.seal().to_string();
    let pre = csv_preamble(&id);

    let mut staged = Staged::new();
    let (visits, cohort_stats) = gen_pretrain_cohort(&cohort, &table)?;
    let mut buf = pre.as_bytes().to_vec();
    write_visits(&mut buf, &visits)?;
    staged.put("data/pretrain_visits.csv", buf);
    let mut datasets = Vec::new();
    for s in specs {
        let (ds, stats) = gen_downstream(&s)?;
        staged.put(format!("data/{}.csv", s.profile.name()), tabular_bytes(&ds, &pre)?);
        datasets.push((s, stats));
    }
    let summary = SyngenSummary {
        format_version: SUMMARY_FORMAT_VERSION,
        manifest_id: &id,
        cohort_spec: &cohort,
        cohort: cohort_stats,
        n_visits: visits.len(),
        datasets,
    };
    staged.put("data/syngen_stats.json", json(&summary));
    finish(m, staged, cfg)
}

fn model_input_check(cfg: &RunConfig, m: &mut RunManifest, cells: &[Cell]) -> Result<()> {
    for &c in cells {
        let path = cfg.model_path(c);
        if !path.is_file() {
            return Err(Error::Config(format!(
                "no model for cell {c} at {}; run `pretrain` with this cell first",
                path.display()
            )));
        }
        m.add_input(&format!("model:{c}"), &path)?;
    }
    Ok(())
}

fn dataset_input_check(cfg: &RunConfig, m: &mut RunManifest) -> Result<Vec<(String, PathBuf)>> {
    let sets = cfg.downstream_datasets();
    if sets.is_empty() {
        return Err(Error::Config("no downstream datasets configured".into()));
    }
    for (name, path) in &sets {
        m.add_input(&format!("dataset:{name}"), path)?;
    }
    Ok(sets)
}

fn load_models(cfg: &RunConfig, cells: &[Cell], encoder: &Encoder) -> Result<Vec<(Cell, GdpModel<f64>)>> {
    cells
        .iter()
        .map(|&c| {
            let path = cfg.model_path(c);
            let model = load_model::<f64>(&path).map_err(|e| e.context(path.display().to_string()))?;
            if model.ordering != c.ordering || model.encoder_kind != c.encoding {
                return Err(Error::Config(format!(
                    "{} holds a {}-{} model, not {c}",
                    path.display(),
                    model.ordering.name(),
                    model.encoder_kind.name()
                )));
            }
            let want = encoder.dim(c.encoding);
            if model.dims.input_dim != want {
                return Err(Error::Config(format!(
                    "{} expects {}-dim inputs but the configured {} encoder gives {want}; retrain or match the encoder config",
                    path.display(),
                    model.dims.input_dim,
                    c.encoding.name()
                )));
            }
            Ok((c, model))
        })
        .collect()
}

#[derive(Serialize)]
struct PretrainFileSummary<'a> {
    format_version: u32,
    manifest_id: &'a str,
    n_visits: usize,
    n_rejected_rows: usize,
    rejects: Vec<String>,
    n_train_patients: usize,
    n_test_patients: usize,
    patient_overlap: usize,
    frame_scope: &'a str,
    cells: Vec<PretrainSummary>,
}

/// Train the requested cells on the CCI target and persist one model each.
pub fn run_pretrain(cfg: &RunConfig) -> Result<RunManifest> {
    let cells = cfg.cells()?;
    let encoder = Encoder::new(cfg.encoder.clone())?;
    let mut m = RunManifest::new(Command::Pretrain.name(), cfg, design_flags(cfg, Some(&encoder)));
    let input = cfg.pretrain_csv();
    m.add_input("pretrain_csv", &input)?;
    if let Some(p) = cfg.cci_table() {
        m.add_input("cci_table", &p)?;
    }
    let split_seed = m.add_seed("split/pretrain", derive_seed(cfg.seed, "split", "pretrain"));
    let seeds: Vec<u64> = cells
        .iter()
        .map(|c| m.add_seed(format!("pretrain/{c}"), derive_seed(cfg.seed, "pretrain", &c.id())))
        .collect();
    let table = load_table(cfg)?;
    let (visits, load) = load_visits_csv(&input)?;
    if visits.is_empty() {
        return Err(Error::Validation(format!(
            "{} has no valid visit rows",
            input.display()
        )));
    }
    let pids: Vec<&str> = visits.iter().map(|v| v.patient_id.as_str()).collect();
    let split = split_by_patient(&pids, cfg.pretrain.split_ratio, split_seed)?;
    let (mut train_p, mut test_p) = (BTreeSet::new(), BTreeSet::new());
    for v in &visits {
        if split.is_train(&v.patient_id) {
            train_p.insert(v.patient_id.as_str());
        } else {
            test_p.insert(v.patient_id.as_str());
        }
    }
    let overlap = train_p.intersection(&test_p).count();
    m.check("patient_overlap", overlap);
    let id = m.seal().to_string();

    let settings = PretrainSettings {
        encoder: &encoder,
        table: &table,
        split: &split,
        scope: cfg.pretrain.scope,
        hidden_dim: cfg.pretrain.hidden_dim,
        embed_dim: cfg.pretrain.embed_dim,
        train: cfg.pretrain.train.clone(),
    };
    let trained: Vec<(GdpModel<f64>, PretrainSummary)> = cells
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(&c, &seed)| pretrain_cell(c, &visits, &settings, seed).map_err(|e| e.context(format!("pretrain {c}"))))
        .collect::<Result<_>>()?;

    let mut staged = Staged::new();
    let mut history = csv_preamble(&id);
    history.push_str("cell,epoch,loss\n");
    for (c, (model, summary)) in cells.iter().zip(&trained) {
        staged.put(format!("models/{c}.gdpm"), write_model_cited(model, Some(&id)));
        history.push_str(&format!("{c},0,{:?}\n", summary.initial_loss));
        for (e, l) in summary.loss_history.iter().enumerate() {
            history.push_str(&format!("{c},{},{l:?}\n", e + 1));
        }
    }
    staged.put("models/loss_history.csv", history);
    let summary = PretrainFileSummary {
        format_version: SUMMARY_FORMAT_VERSION,
        manifest_id: &id,
        n_visits: visits.len(),
        n_rejected_rows: load.rejects.len(),
        rejects: load
            .rejects
            .iter()
            .take(20)
            .map(|r| format!("row {}: {}", r.row, r.reason))
            .collect(),
        n_train_patients: train_p.len(),
        n_test_patients: test_p.len(),
        patient_overlap: overlap,
        frame_scope: cfg.pretrain.scope.name(),
        cells: trained.into_iter().map(|(_, s)| s).collect(),
    };
    staged.put("models/pretrain_summary.json", json(&summary));
    finish(m, staged, cfg)
}

/// Load a downstream CSV, collapse repeated patients to medians and fill
/// missing cells.
pub fn prepare_dataset(path: &Path, impute: &ImputeConfig, seed: u64) -> Result<TabularDataset> {
    let raw = load_tabular_csv(path).map_err(|e| e.context(path.display().to_string()))?;
    let agg = aggregate_median(&raw);
    if agg.missing_count() == 0 {
        return Ok(agg);
    }
    impute_with(&agg, &ImputeConfig { seed, ..impute.clone() }).map_err(|e| e.context(path.display().to_string()))
}

/// The dataset with `age` and `gender` replaced by the cell's embedding.
pub fn embed_dataset(
    ds: &TabularDataset,
    model: &GdpModel<f64>,
    encoder: &Encoder,
    cfg: &RunConfig,
) -> Result<TabularDataset> {
    let demo = Demographics::from_dataset(ds)?;
    let encoded = encode_rows(encoder, model.encoder_kind, &demo)?;
    let emb = embed_rows(model, cfg.pretrain.scope, &demo, &encoded)?;
    with_embeddings(ds, &emb)
}

struct Prepared {
    name: String,
    data: TabularDataset,
}

fn prepare_all(cfg: &RunConfig, m: &mut RunManifest, sets: &[(String, PathBuf)]) -> Vec<(String, PathBuf, u64)> {
    sets.iter()
        .map(|(name, path)| {
            let seed = m.add_seed(format!("impute/{name}"), derive_seed(cfg.seed, "impute", name));
            (name.clone(), path.clone(), seed)
        })
        .collect()
}

fn load_prepared(cfg: &RunConfig, plan: &[(String, PathBuf, u64)]) -> Result<Vec<Prepared>> {
    plan.iter()
        .map(|(name, path, seed)| {
            Ok(Prepared {
                name: name.clone(),
                data: prepare_dataset(path, &cfg.downstream.impute, *seed)?,
            })
        })
        .collect()
}

/// Write each prepared dataset and its per-cell embedded variants.
pub fn run_embed(cfg: &RunConfig) -> Result<RunManifest> {
    let cells = cfg.cells()?;
    let encoder = Encoder::new(cfg.encoder.clone())?;
    let mut m = RunManifest::new(Command::Embed.name(), cfg, design_flags(cfg, Some(&encoder)));
    let sets = dataset_input_check(cfg, &mut m)?;
    model_input_check(cfg, &mut m, &cells)?;
    let plan = prepare_all(cfg, &mut m, &sets);
    let id = m.seal().to_string();
    let pre = csv_preamble(&id);
    let models = load_models(cfg, &cells, &encoder)?;
    let prepared = load_prepared(cfg, &plan)?;

    let mut staged = Staged::new();
    for p in &prepared {
        staged.put(
            format!("embeddings/{}/{BASELINE}.csv", p.name),
            tabular_bytes(&p.data, &pre)?,
        );
        let embedded: Vec<(Cell, TabularDataset)> = models
            .par_iter()
            .map(|(c, model)| Ok((*c, embed_dataset(&p.data, model, &encoder, cfg)?)))
            .collect::<Result<_>>()?;
        for (c, ds) in embedded {
            staged.put(format!("embeddings/{}/{c}.csv", p.name), tabular_bytes(&ds, &pre)?);
        }
    }
    finish(m, staged, cfg)
}

fn demographic_features(ds: &TabularDataset) -> Vec<String> {
    ds.feature_names()
        .iter()
        .filter(|n| *n == "age" || *n == "gender" || n.starts_with("gdp_"))
        .cloned()
        .collect()
}

/// Seeds shared by every cell of one dataset so results are paired.
#[derive(Debug, Clone, Copy)]
pub struct EvalSeeds {
    pub split: u64,
    pub gbdt: u64,
    pub bootstrap: u64,
}

/// Fit the boosted classifier on the train rows and score the test rows.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_cell(
    cell: &str,
    ds: &TabularDataset,
    train_idx: &[usize],
    test_idx: &[usize],
    boost: &BoostConfig,
    reps: usize,
    refit: bool,
    seeds: EvalSeeds,
) -> Result<(CellResult, String)> {
    let rows = ds.dense_rows()?;
    let pick = |idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| rows[i].clone()).collect() };
    let y_of = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| f64::from(ds.labels()[i])).collect() };
    let y_test: Vec<u8> = test_idx.iter().map(|&i| ds.labels()[i]).collect();
    let cfg = BoostConfig {
        seed: seeds.gbdt,
        ..boost.clone()
    };
    let test_rows = pick(test_idx);
    let model = fit_matrix(&pick(train_idx), &y_of(train_idx), ds.feature_names(), &cfg)?;
    let probs = model.predict_proba(&test_rows)?;
    let (auroc, ece) = if refit {
        refit_replicates(&rows, ds, train_idx, &test_rows, &y_test, &cfg, reps, seeds.bootstrap)?
    } else {
        (
            bootstrap_eval(Metric::Auroc, &probs, &y_test, reps, seeds.bootstrap)?,
            bootstrap_eval(Metric::Ece, &probs, &y_test, reps, seeds.bootstrap)?,
        )
    };
    let demo = demographic_features(ds);
    let share = model.ledger.gain_share(&demo)?;
    let (approach, encoding) = cell.split_once('-').unwrap_or((BASELINE, "raw"));
    Ok((
        CellResult {
            cell: cell.to_string(),
            approach: approach.to_string(),
            encoding: encoding.to_string(),
            auroc,
            ece,
            demographic_features: demo,
            demographic_gain_share: share,
        },
        model.ledger.to_csv(),
    ))
}

/// Replicate `r` resamples the training rows from `rng_stream(seed, r)`,
/// refits and scores the fixed test set. Draws with a single class are
/// redrawn from the same stream.
#[allow(clippy::too_many_arguments)]
fn refit_replicates(
    rows: &[Vec<f64>],
    ds: &TabularDataset,
    train_idx: &[usize],
    test_rows: &[Vec<f64>],
    y_test: &[u8],
    cfg: &BoostConfig,
    reps: usize,
    seed: u64,
) -> Result<(EvalResult, EvalResult)> {
    if reps == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    let n = train_idx.len();
    let (auc, ece): (Vec<f64>, Vec<f64>) = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_stream(seed, r as u64);
            let mut drawn = None;
            for _ in 0..MAX_REDRAWS {
                let idx: Vec<usize> = (0..n).map(|_| train_idx[rng.random_range(0..n)]).collect();
                let positives = idx.iter().filter(|&&i| ds.labels()[i] == 1).count();
                if positives > 0 && positives < n {
                    drawn = Some(idx);
                    break;
                }
            }
            let idx = drawn.ok_or_else(|| {
                Error::Bootstrap(format!(
                    "replicate {r}: single-class training draw after {MAX_REDRAWS} tries"
                ))
            })?;
            let x: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
            let y: Vec<f64> = idx.iter().map(|&i| f64::from(ds.labels()[i])).collect();
            let probs = fit_matrix(&x, &y, ds.feature_names(), cfg)?.predict_proba(test_rows)?;
            Ok((
                Metric::Auroc.evaluate(&probs, y_test)?,
                Metric::Ece.evaluate(&probs, y_test)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((
        EvalResult::from_replicates(Metric::Auroc, auc),
        EvalResult::from_replicates(Metric::Ece, ece),
    ))
}

/// Baseline plus every requested cell on one prepared dataset.
pub fn evaluate_dataset(
    name: &str,
    ds: &TabularDataset,
    models: &[(Cell, GdpModel<f64>)],
    encoder: &Encoder,
    cfg: &RunConfig,
    seeds: EvalSeeds,
    manifest_id: &str,
) -> Result<(DatasetResults, Vec<(String, String)>)> {
    let split = split_by_patient(ds.patient_ids(), 1.0 - cfg.downstream.test_ratio, seeds.split)
        .map_err(|e| e.context(name.to_string()))?;
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) =
        (0..ds.n_rows()).partition(|&i| split.is_train(&ds.patient_ids()[i]));
    let mut variants: Vec<(String, TabularDataset)> = vec![(BASELINE.to_string(), ds.clone())];
    let embedded: Vec<(String, TabularDataset)> = models
        .par_iter()
        .map(|(c, model)| Ok((c.id(), embed_dataset(ds, model, encoder, cfg)?)))
        .collect::<Result<_>>()?;
    variants.extend(embedded);
    let evaluated: Vec<(CellResult, String)> = variants
        .par_iter()
        .map(|(cell, data)| {
            evaluate_cell(
                cell,
                data,
                &train_idx,
                &test_idx,
                &cfg.downstream.boost,
                cfg.downstream.bootstraps,
                cfg.downstream.refit_per_replicate,
                seeds,
            )
            .map_err(|e| e.context(format!("{name} {cell}")))
        })
        .collect::<Result<_>>()?;
    let (cells, ledgers): (Vec<CellResult>, Vec<String>) = evaluated.into_iter().unzip();
    let ledgers = cells.iter().map(|c| c.cell.clone()).zip(ledgers).collect();
    Ok((
        DatasetResults {
            format_version: RESULTS_FORMAT_VERSION,
            manifest_id: manifest_id.to_string(),
            dataset: name.to_string(),
            n_train_rows: train_idx.len(),
            n_test_rows: test_idx.len(),
            bootstraps: cfg.downstream.bootstraps,
            bootstrap_mode: if cfg.downstream.refit_per_replicate {
                "refit"
            } else {
                "test_resample"
            }
            .into(),
            frame_scope: cfg.pretrain.scope.name().into(),
            learner: report::LEARNER.into(),
            comparisons: report::all_comparisons(&cells)?,
            cells,
        },
        ledgers,
    ))
}

fn stage_reports(staged: &mut Staged, all: &[DatasetResults], id: &str) {
    let pre = csv_preamble(id);
    for r in all {
        staged.put(format!("reports/{}/table.txt", r.dataset), report::render_table(r, id));
    }
    staged.put("reports/summary.txt", report::render_summary(all, id));
    staged.put("reports/gain_shares.csv", report::gain_shares_csv(all, &pre));
    staged.put("reports/metrics.csv", report::metrics_csv(all, &pre));
    staged.put("reports/tests.csv", report::tests_csv(all, &pre));
}

/// Evaluate baseline and GDP cells on every downstream dataset.
pub fn run_downstream(cfg: &RunConfig) -> Result<RunManifest> {
    let cells = cfg.cells()?;
    let encoder = Encoder::new(cfg.encoder.clone())?;
    let mut m = RunManifest::new(Command::Downstream.name(), cfg, design_flags(cfg, Some(&encoder)));
    let sets = dataset_input_check(cfg, &mut m)?;
    model_input_check(cfg, &mut m, &cells)?;
    let plan = prepare_all(cfg, &mut m, &sets);
    let seeds: Vec<EvalSeeds> = sets
        .iter()
        .map(|(name, _)| EvalSeeds {
            split: m.add_seed(format!("split/{name}"), derive_seed(cfg.seed, "split", name)),
            gbdt: m.add_seed(format!("gbdt/{name}"), derive_seed(cfg.seed, "gbdt", name)),
            bootstrap: m.add_seed(format!("bootstrap/{name}"), derive_seed(cfg.seed, "bootstrap", name)),
        })
        .collect();
    let id = m.seal().to_string();
    let pre = csv_preamble(&id);
    let models = load_models(cfg, &cells, &encoder)?;
    let prepared = load_prepared(cfg, &plan)?;

    let mut staged = Staged::new();
    let mut all = Vec::new();
    for (p, s) in prepared.iter().zip(seeds) {
        let (res, ledgers) = evaluate_dataset(&p.name, &p.data, &models, &encoder, cfg, s, &id)?;
        staged.put(format!("reports/{}/results.json", p.name), res.to_json());
        staged.put(
            format!("reports/{}/replicates.csv", p.name),
            report::replicates_csv(&res, &pre),
        );
        let mut gains = pre.clone();
        gains.push_str("cell,feature,gain,share_pct\n");
        for (cell, csv) in ledgers {
            for line in csv.lines().skip(1) {
                gains.push_str(&format!("{cell},{line}\n"));
            }
        }
        staged.put(format!("reports/{}/gain_ledger.csv", p.name), gains);
        all.push(res);
    }
    stage_reports(&mut staged, &all, &id);
    finish(m, staged, cfg)
}

fn min_max_scale(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    let lo: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    rows.iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(j, &v)| {
                    if hi[j] > lo[j] {
                        (v - lo[j]) / (hi[j] - lo[j])
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Seeded subsample of row indices, in ascending order.
fn subsample(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k == 0 || k >= n {
        return (0..n).collect();
    }
    let mut idx = rand::seq::index::sample(&mut rng(seed), n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Two-dimensional layouts of the raw columns and of each cell's embedding.
pub fn run_tsne(cfg: &RunConfig) -> Result<RunManifest> {
    let cells = cfg.cells()?;
    let encoder = Encoder::new(cfg.encoder.clone())?;
    let mut m = RunManifest::new(Command::Tsne.name(), cfg, design_flags(cfg, Some(&encoder)));
    let sets = dataset_input_check(cfg, &mut m)?;
    model_input_check(cfg, &mut m, &cells)?;
    let plan = prepare_all(cfg, &mut m, &sets);
    let mut panel_seeds: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut sample_seeds = Vec::new();
    for (name, _) in &sets {
        sample_seeds.push(m.add_seed(
            format!("tsne_sample/{name}"),
            derive_seed(cfg.seed, "tsne_sample", name),
        ));
        let panels = std::iter::once("original".to_string()).chain(cells.iter().map(Cell::id));
        for panel in panels {
            let s = derive_seed(cfg.seed, "tsne", &format!("{name}/{panel}"));
            panel_seeds.insert(
                (name.clone(), panel.clone()),
                m.add_seed(format!("tsne/{name}/{panel}"), s),
            );
        }
    }
    let id = m.seal().to_string();
    let pre = csv_preamble(&id);
    let models = load_models(cfg, &cells, &encoder)?;
    let prepared = load_prepared(cfg, &plan)?;

    let mut staged = Staged::new();
    for (p, sample_seed) in prepared.iter().zip(sample_seeds) {
        let keep = subsample(p.data.n_rows(), cfg.tsne.max_points, sample_seed);
        let ds = p.data.select_rows(&keep);
        cfg.tsne
            .to_tsne_config(0)
            .validate(ds.n_rows())
            .map_err(|e| e.context(format!("t-SNE on {}", p.name)))?;
        let mut panels: Vec<(String, String, String, Vec<Vec<f64>>)> = vec![(
            "original".into(),
            "original".into(),
            "raw".into(),
            min_max_scale(&ds.dense_rows()?),
        )];
        for (c, model) in &models {
            let emb = embed_dataset(&ds, model, &encoder, cfg)?;
            let k = model.dims.embed_dim;
            let names = gdp_column_names(k);
            let cols: Vec<usize> = names.iter().filter_map(|n| emb.feature_index(n)).collect();
            let rows: Vec<Vec<f64>> = emb
                .dense_rows()?
                .into_iter()
                .map(|r| cols.iter().map(|&j| r[j]).collect())
                .collect();
            panels.push((c.id(), c.ordering.name().into(), c.encoding.name().into(), rows));
        }
        let layouts: Vec<(String, String)> = panels
            .par_iter()
            .map(|(panel, approach, encoding, rows)| {
                let seed = panel_seeds[&(p.name.clone(), panel.clone())];
                let res = tsne(rows, &cfg.tsne.to_tsne_config(seed))
                    .map_err(|e| e.context(format!("t-SNE {}/{panel}", p.name)))?;
                if res.coords.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence {
                        epoch: cfg.tsne.iterations,
                        loss: f64::NAN,
                    }
                    .context(format!("t-SNE {}/{panel} produced non-finite coordinates", p.name)));
                }
                let points: Vec<TsnePoint> = res
                    .coords
                    .iter()
                    .enumerate()
                    .map(|(i, c)| TsnePoint {
                        row_id: ds.patient_ids()[i].clone(),
                        label: ds.labels()[i].to_string(),
                        dim1: c[0],
                        dim2: c[1],
                    })
                    .collect();
                let kl = format!(
                    "{panel},{:?},{:?}",
                    res.kl_trace.first().copied().unwrap_or(f64::NAN),
                    res.kl_trace.last().copied().unwrap_or(f64::NAN)
                );
                Ok((format!("{pre}{}", tsne_csv(&points, approach, encoding)), kl))
            })
            .collect::<Result<_>>()?;
        let mut kl_csv = format!("{pre}panel,initial_kl,final_kl\n");
        for ((panel, ..), (csv, kl)) in panels.iter().zip(layouts) {
            staged.put(format!("tsne/{}/{panel}.csv", p.name), csv);
            kl_csv.push_str(&kl);
            kl_csv.push('\n');
        }
        staged.put(format!("tsne/{}/kl.csv", p.name), kl_csv);
    }
    finish(m, staged, cfg)
}

/// Rebuild the text tables and combined CSVs from saved results.
pub fn run_report(cfg: &RunConfig) -> Result<RunManifest> {
    let mut m = RunManifest::new(Command::Report.name(), cfg, design_flags(cfg, None));
    let names: Vec<String> = cfg.downstream_datasets().into_iter().map(|(n, _)| n).collect();
    let mut paths = Vec::new();
    for n in &names {
        let p = cfg.out_dir.join("reports").join(n).join("results.json");
        if !p.is_file() {
            return Err(Error::Config(format!(
                "no results for dataset {n} at {}; run `downstream` first",
                p.display()
            )));
        }
        m.add_input(&format!("results:{n}"), &p)?;
        paths.push(p);
    }
    let id = m.seal().to_string();
    let all = paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            DatasetResults::from_json(&text).map_err(|e| e.context(p.display().to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut staged = Staged::new();
    stage_reports(&mut staged, &all, &id);
    finish(m, staged, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_max_scaling_handles_constant_columns() {
        let s = min_max_scale(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        assert_eq!(s, vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn subsample_is_sorted_and_seeded() {
        let a = subsample(100, 10, 3);
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, subsample(100, 10, 3));
        assert_eq!(subsample(5, 0, 1), vec![0, 1, 2, 3, 4]);
    }
}
