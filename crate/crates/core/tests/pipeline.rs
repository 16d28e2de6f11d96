//! Command-level behavior of the pipeline on a small configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use gdp_core::nn::cited_manifest;
use gdp_core::pipeline::manifest::read_manifests;
use gdp_core::pipeline::report::{DatasetResults, BASELINE};
use gdp_core::pipeline::{run, Command, RunConfig, RunManifest};
use gdp_core::syngen::Profile;
use gdp_core::Error;

const ALL: [Command; 6] = [
    Command::Syngen,
    Command::Pretrain,
    Command::Embed,
    Command::Downstream,
    Command::Tsne,
    Command::Report,
];

fn small_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        seed: 11,
        out_dir: out.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.syngen.cohort.n_patients = 150;
    cfg.syngen.profiles = vec![Profile::ThyroidLike];
    cfg.pretrain.train.epochs = 2;
    cfg.tsne.iterations = 250;
    cfg.tsne.exaggeration_iters = 100;
    cfg
}

struct GridRun {
    cfg: RunConfig,
    manifests: BTreeMap<&'static str, RunManifest>,
}

fn run_grid(out: PathBuf) -> GridRun {
    let cfg = small_config(&out);
    let manifests = ALL
        .iter()
        .map(|&c| (c.name(), run(c, &cfg).unwrap_or_else(|e| panic!("{}: {e}", c.name()))))
        .collect();
    GridRun { cfg, manifests }
}

fn shared() -> &'static GridRun {
    static RUN: OnceLock<GridRun> = OnceLock::new();
    RUN.get_or_init(|| run_grid(tempfile::tempdir().unwrap().keep().join("a")))
}

fn results(g: &GridRun) -> DatasetResults {
    let text = fs::read_to_string(g.cfg.out_dir.join("reports/thyroid_like/results.json")).unwrap();
    DatasetResults::from_json(&text).unwrap()
}

#[test]
fn grid_writes_six_models_and_one_manifest_line_per_command() {
    let g = shared();
    let models: Vec<_> = fs::read_dir(g.cfg.model_dir())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "gdpm"))
        .collect();
    assert_eq!(models.len(), 6);
    let lines = read_manifests(&g.cfg.manifest_path()).unwrap();
    let commands: Vec<&str> = lines.iter().map(|m| m.command.as_str()).collect();
    assert_eq!(
        commands,
        ["syngen", "pretrain", "embed", "downstream", "tsne", "report"]
    );
}

#[test]
fn pretraining_split_has_no_shared_patients() {
    let m = &shared().manifests["pretrain"];
    assert_eq!(m.checks["patient_overlap"], serde_json::json!(0));
}

#[test]
fn every_output_cites_its_manifest() {
    let g = shared();
    let mut writer: BTreeMap<&String, &String> = BTreeMap::new();
    for cmd in ALL {
        let m = &g.manifests[cmd.name()];
        for rel in m.outputs.keys() {
            writer.insert(rel, &m.manifest_id);
        }
    }
    {
        for (rel, id) in writer {
            let path = g.cfg.out_dir.join(rel);
            let text = fs::read_to_string(&path).unwrap();
            let cited = if rel.ends_with(".csv") {
                text.lines().next().unwrap() == format!("# format_version=1 manifest={id}")
            } else if rel.ends_with(".json") {
                let v: serde_json::Value = serde_json::from_str(&text).unwrap();
                v["manifest_id"] == serde_json::json!(id) && v["format_version"] == serde_json::json!(1)
            } else if rel.ends_with(".gdpm") {
                cited_manifest(&text) == Some(id.as_str())
            } else {
                text.contains(id.as_str())
            };
            assert!(cited, "{rel} does not cite {id}");
        }
    }
}

#[test]
fn baseline_keeps_raw_columns_and_cells_use_gdp_columns() {
    let g = shared();
    let header = |cell: &str| -> String {
        let text = fs::read_to_string(g.cfg.out_dir.join(format!("embeddings/thyroid_like/{cell}.csv"))).unwrap();
        text.lines().find(|l| !l.starts_with('#')).unwrap().to_string()
    };
    let base = header(BASELINE);
    assert!(!base.contains("gdp_"));
    assert!(base.contains("age") && base.contains("gender"));
    let seq = header("seq-trad");
    assert!(seq.contains("gdp_0"));
    assert!(!seq.split(',').any(|c| c == "age" || c == "gender"));
    let r = results(g);
    assert_eq!(r.cell(BASELINE).unwrap().demographic_features, ["age", "gender"]);
    assert!(r
        .cell("ns-pe")
        .unwrap()
        .demographic_features
        .iter()
        .all(|f| f.starts_with("gdp_")));
}

#[test]
fn every_cell_has_fifty_replicates_and_stars_follow_p() {
    let g = shared();
    let r = results(g);
    assert_eq!(r.cells.len(), 7);
    for c in &r.cells {
        assert_eq!(c.auroc.replicates.len(), 50);
        assert_eq!(c.ece.replicates.len(), 50);
    }
    assert!(!r.comparisons.is_empty());
    for c in &r.comparisons {
        assert_eq!(c.significant, c.p < 0.05, "{c:?}");
        assert!(r.cell(&c.a).is_some() && r.cell(&c.b).is_some());
    }
    let table = fs::read_to_string(g.cfg.out_dir.join("reports/thyroid_like/table.txt")).unwrap();
    let significant = r
        .comparisons
        .iter()
        .filter(|c| c.significant && c.metric != "gain_share")
        .count();
    let stars = table
        .lines()
        .filter(|l| !l.starts_with("Mean"))
        .map(|l| l.matches('*').count())
        .sum::<usize>();
    assert_eq!(stars, significant, "{table}");
    assert!(table.contains("reimplementation"));
}

#[test]
fn tsne_writes_original_plus_six_panels_with_finite_coordinates() {
    let g = shared();
    let dir = g.cfg.out_dir.join("tsne/thyroid_like");
    let mut panels: Vec<String> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "kl.csv")
        .collect();
    panels.sort();
    assert_eq!(panels.len(), 7, "{panels:?}");
    assert!(panels.contains(&"original.csv".to_string()));
    for p in &panels {
        let text = fs::read_to_string(dir.join(p)).unwrap();
        let rows: Vec<&str> = text.lines().skip(2).collect();
        assert_eq!(rows.len(), 450);
        for r in rows {
            let f: Vec<&str> = r.split(',').collect();
            assert!(f[2].parse::<f64>().unwrap().is_finite() && f[3].parse::<f64>().unwrap().is_finite());
        }
    }
}

#[test]
fn rerun_in_another_directory_reproduces_every_file() {
    let a = shared();
    let b = run_grid(tempfile::tempdir().unwrap().keep().join("b"));
    for (cmd, ma) in &a.manifests {
        let mb = &b.manifests[cmd];
        assert_eq!(ma.manifest_id, mb.manifest_id, "{cmd}");
        assert_eq!(ma.outputs, mb.outputs, "{cmd}");
    }
    fs::remove_dir_all(&b.cfg.out_dir).unwrap();
}

fn entries(dir: &Path) -> Vec<PathBuf> {
    match fs::read_dir(dir) {
        Ok(rd) => rd.map(|e| e.unwrap().path()).collect(),
        Err(_) => Vec::new(),
    }
}

#[test]
fn missing_input_names_the_path_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let e = run(Command::Pretrain, &cfg).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(e.to_string().contains("pretrain_visits.csv"), "{e}");
    assert!(entries(dir.path()).is_empty());
}

#[test]
fn downstream_without_models_points_to_pretrain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    run(Command::Syngen, &cfg).unwrap();
    let before = entries(dir.path()).len();
    let e = run(Command::Downstream, &cfg).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("pretrain"), "{e}");
    assert_eq!(entries(dir.path()).len(), before);
    assert!(!dir.path().join("reports").exists());
}

#[test]
fn infeasible_perplexity_suggests_a_value() {
    let g = shared();
    let mut cfg = g.cfg.clone();
    cfg.tsne.max_points = 12;
    cfg.tsne.perplexity = 5.0;
    let lines_before = read_manifests(&cfg.manifest_path()).unwrap().len();
    let e = run(Command::Tsne, &cfg).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    let msg = e.to_string();
    assert!(msg.contains("try perplexity = 3.3"), "{msg}");
    assert_eq!(read_manifests(&cfg.manifest_path()).unwrap().len(), lines_before);
}

#[test]
fn zero_patient_cohort_is_a_spec_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.syngen.cohort.n_patients = 0;
    let e = run(Command::Syngen, &cfg).unwrap_err();
    assert!(matches!(e, Error::Spec(_)), "{e:?}");
    assert_eq!(e.exit_code(), 2);
    assert!(entries(dir.path()).is_empty());
}

#[test]
fn cell_subset_trains_only_requested_models() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.cells = "seq-trad,ns-pe".into();
    run(Command::Syngen, &cfg).unwrap();
    let m = run(Command::Pretrain, &cfg).unwrap();
    let models: Vec<&String> = m.outputs.keys().filter(|k| k.ends_with(".gdpm")).collect();
    assert_eq!(models, ["models/ns-pe.gdpm", "models/seq-trad.gdpm"]);
}

#[test]
fn refit_mode_is_labelled_and_keeps_replicate_count() {
    let g = shared();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = g.cfg.clone();
    cfg.out_dir = dir.path().to_path_buf();
    cfg.cells = "seq-trad".into();
    cfg.downstream.refit_per_replicate = true;
    cfg.downstream.bootstraps = 5;
    cfg.data.downstream = vec![gdp_core::pipeline::config::DatasetEntry {
        name: "thyroid_like".into(),
        path: g.cfg.out_dir.join("data/thyroid_like.csv"),
    }];
    fs::create_dir_all(cfg.model_dir()).unwrap();
    fs::copy(
        g.cfg.out_dir.join("models/seq-trad.gdpm"),
        cfg.model_dir().join("seq-trad.gdpm"),
    )
    .unwrap();
    run(Command::Downstream, &cfg).unwrap();
    let text = fs::read_to_string(dir.path().join("reports/thyroid_like/results.json")).unwrap();
    let r = DatasetResults::from_json(&text).unwrap();
    assert_eq!(r.bootstrap_mode, "refit");
    assert_eq!(r.cells.len(), 2);
    assert!(r.cells.iter().all(|c| c.auroc.replicates.len() == 5));
}
