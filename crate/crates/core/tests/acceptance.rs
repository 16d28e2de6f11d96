//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so
//! every line is printed; exits non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::StandardNormal;

use gdp_core::cci::{compute_cci, CciTable};
use gdp_core::encoders::EncoderKind;
use gdp_core::gbdt::{best_split_features, BoostConfig};
use gdp_core::metrics::{auroc, ece};
use gdp_core::nn::{grad_check, grad_check_mlp, init_model, Batch, Mlp, ModelDims};
use gdp_core::pipeline::report::{DatasetResults, BASELINE};
use gdp_core::pipeline::{run, Command, RunConfig};
use gdp_core::seed::rng;
use gdp_core::sequencing::{frame_sequences, split_by_patient, FrameScope, Ordering};
use gdp_core::stats::{student_t_two_sided, t_test};
use gdp_core::syngen::{gen_pretrain_cohort, CohortSpec};
use gdp_core::tsne::{calibrate_sigma, silhouette, tsne, TsneConfig};

const EPS: f64 = 1e-5;
const SEQ_CELLS: [&str; 3] = ["seq-trad", "seq-pe", "seq-txt"];
const PROFILES: [&str; 3] = ["pneumonia_like", "osteoporosis_like", "thyroid_like"];
/// Rows per t-SNE panel in the grid runs; exact t-SNE on every row costs
/// about 13 minutes per run on one core.
const GRID_TSNE_POINTS: usize = 300;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

struct Line {
    name: &'static str,
    verdict: Verdict,
    elapsed: Duration,
    budget: Option<Duration>,
}

fn check(name: &'static str, budget: Option<Duration>, f: impl FnOnce() -> Verdict) -> Line {
    let start = Instant::now();
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    Line {
        name,
        verdict,
        elapsed: start.elapsed(),
        budget,
    }
}

impl Line {
    fn timed(mut self, elapsed: Duration) -> Self {
        self.elapsed = elapsed;
        self
    }

    fn pass(&self) -> bool {
        self.verdict.pass && self.budget.is_none_or(|b| self.elapsed <= b)
    }

    fn print(&self) {
        let timing = match self.budget {
            Some(b) => format!("{:.1}s of {:.0}s", self.elapsed.as_secs_f64(), b.as_secs_f64()),
            None => format!("{:.1}s", self.elapsed.as_secs_f64()),
        };
        let status = if self.pass() { "PASS" } else { "FAIL" };
        println!("{status} {}: {} [{timing}]", self.name, self.verdict.detail);
    }
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn gradient_fidelity() -> Verdict {
    let mlp = Mlp::init(&[4, 3], 3);
    let x: Vec<Vec<f64>> = (0..12)
        .map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.71).sin()).collect())
        .collect();
    let y: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 * 0.2, (i as f64).cos(), -0.5]).collect();
    let linear = grad_check_mlp(&mlp, &x, &y, EPS).unwrap().max_rel_error;

    let dims = ModelDims {
        input_dim: 8,
        hidden_dim: 6,
        embed_dim: 4,
    };
    let ns = init_model::<f64>(Ordering::Ns, EncoderKind::Pe, dims, 5).unwrap();
    let inputs: Vec<Vec<f64>> = (0..8)
        .map(|i| (0..8).map(|j| ((i * 8 + j) as f64 * 0.37).cos()).collect())
        .collect();
    let rows: Vec<(&[f64], f64)> = inputs
        .iter()
        .enumerate()
        .map(|(i, r)| (r.as_slice(), (i % 4) as f64))
        .collect();
    let attention = grad_check(&ns, &Batch::Rows(rows), EPS).unwrap().max_rel_error;

    let seq = init_model::<f64>(Ordering::Seq, EncoderKind::Pe, dims, 6).unwrap();
    let steps: Vec<Vec<f64>> = (0..8)
        .map(|i| (0..8).map(|j| ((i * 8 + j) as f64 * 0.53).sin()).collect())
        .collect();
    let targets: Vec<f64> = (0..8).map(|i| (i % 3) as f64).collect();
    let ids: Vec<String> = (0..8).map(|i| if i < 5 { "a" } else { "b" }.to_string()).collect();
    let frames = frame_sequences(&steps, &targets, &ids, 5, FrameScope::Patient).unwrap();
    let masked = frames.iter().any(|f| f.n_valid() < f.len());
    let lstm = grad_check(&seq, &Batch::Frames(frames.iter().collect()), EPS)
        .unwrap()
        .max_rel_error;

    verdict(
        linear < 1e-6 && attention < 1e-4 && lstm < 1e-4 && masked,
        format!("max rel error linear {linear:.2e} (<1e-6), attention {attention:.2e} (<1e-4), masked LSTM {lstm:.2e} (<1e-4)"),
    )
}

fn brute_auroc(s: &[f64], l: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] == 1 && l[j] == 0 {
                pairs += 1.0;
                wins += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn auroc_oracle() -> Verdict {
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    let instances = 150;
    for k in 0..instances {
        let n = r.random_range(2..=200);
        let levels = if k % 2 == 0 { 10 } else { 1_000_000 };
        let mut l: Vec<u8> = (0..n).map(|_| r.random_range(0..=1)).collect();
        l[0] = 0;
        l[1] = 1;
        let s: Vec<f64> = (0..n)
            .map(|_| f64::from(r.random_range(0..levels)) / f64::from(levels))
            .collect();
        worst = worst.max((auroc(&s, &l).unwrap() - brute_auroc(&s, &l)).abs());
    }
    verdict(
        worst <= 1e-12,
        format!("{instances} instances, max |diff| {worst:.1e} (<=1e-12)"),
    )
}

fn brute_force_best(columns: &[Vec<f64>], g: &[f64], h: &[f64], min_leaf: usize) -> Option<f64> {
    let (gt, ht): (f64, f64) = (g.iter().sum(), h.iter().sum());
    let mut best: Option<f64> = None;
    for x in columns {
        let mut vals = x.clone();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0);
            for i in 0..x.len() {
                if x[i] <= t {
                    gl += g[i];
                    hl += h[i];
                    nl += 1;
                }
            }
            if nl < min_leaf || x.len() - nl < min_leaf {
                continue;
            }
            let gain = gl * gl / hl + (gt - gl) * (gt - gl) / (ht - hl) - gt * gt / ht;
            if gain > 0.0 && best.is_none_or(|b| gain > b) {
                best = Some(gain);
            }
        }
    }
    best
}

fn split_oracle() -> Verdict {
    let mut r = rng(202);
    let instances = 250;
    let (mut worst, mut mismatched, mut found) = (0.0f64, 0, 0);
    for _ in 0..instances {
        let n = r.random_range(2..=100);
        let d = r.random_range(1..=5);
        let min_leaf = r.random_range(1..=5);
        let columns: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..n).map(|_| f64::from(r.random_range(-20..20)) / 4.0).collect())
            .collect();
        let g: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..n).map(|_| r.random_range(0.05..1.0)).collect();
        let cfg = BoostConfig {
            min_samples_leaf: min_leaf,
            min_hessian: 0.0,
            ..BoostConfig::default()
        };
        match (
            best_split_features(&columns, &g, &h, &cfg).map(|c| c.gain),
            brute_force_best(&columns, &g, &h, min_leaf),
        ) {
            (Some(a), Some(b)) => {
                found += 1;
                worst = worst.max((a - b).abs());
            }
            (None, None) => {}
            _ => mismatched += 1,
        }
    }
    verdict(
        worst <= 1e-9 && mismatched == 0,
        format!("{instances} instances ({found} with a split), max gain diff {worst:.1e} (<=1e-9), {mismatched} existence mismatches"),
    )
}

fn cci_hand_cases() -> Verdict {
    let t = CciTable::bundled();
    let cases: [(&[&str], u32); 10] = [
        (&[], 0),
        (&["410.21"], 1),
        (&["410", "412", "410.9"], 1),
        (&["428.0", "250.00"], 2),
        (&["250.40", "250.0"], 3),
        (&["196.1", "197.0", "199"], 6),
        (&["042", "585.9", "342.9"], 10),
        (&["v43.4", "780.6", "V70.0"], 1),
        (&["174.9", "571.2", "572.2"], 6),
        (&["290.0", "496", "531.9", "714.0", "433.1"], 5),
    ];
    let wrong: Vec<String> = cases
        .iter()
        .filter_map(|(codes, want)| {
            let got = compute_cci(codes, &t).value();
            (got != *want).then(|| format!("{codes:?} gave {got}, want {want}"))
        })
        .collect();
    verdict(
        wrong.is_empty(),
        if wrong.is_empty() {
            "10/10 patients exact".into()
        } else {
            wrong.join("; ")
        },
    )
}

fn leakage() -> Verdict {
    let table = CciTable::bundled();
    let spec = CohortSpec {
        n_patients: 500,
        ..CohortSpec::default()
    };
    let (visits, _) = gen_pretrain_cohort(&spec, &table).unwrap();
    let ids: Vec<&str> = visits.iter().map(|v| v.patient_id.as_str()).collect();
    let overlapping = (0..1000u64)
        .filter(|&s| {
            let a = split_by_patient(&ids, 0.8, s).unwrap();
            !a.train_patient_ids.is_disjoint(&a.test_patient_ids)
        })
        .count();

    let mut r = rng(303);
    let cohorts = 120;
    let (mut mixed, mut broken) = (0, 0);
    for _ in 0..cohorts {
        let n = r.random_range(0..400);
        let n_patients = r.random_range(1..40);
        let patients: Vec<String> = (0..n).map(|_| format!("p{}", r.random_range(0..n_patients))).collect();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, 1.0]).collect();
        let targets: Vec<f64> = (0..n).map(|i| (i % 7) as f64).collect();
        let frame_len = r.random_range(1..=130);
        for scope in [FrameScope::Patient, FrameScope::Cohort] {
            let frames = frame_sequences(&rows, &targets, &patients, frame_len, scope).unwrap();
            let mut seen = vec![0usize; n];
            for f in &frames {
                for (s, src) in f.source_rows.iter().enumerate() {
                    match src {
                        Some(i) if f.steps.row(s) == rows[*i].as_slice() => seen[*i] += 1,
                        Some(_) => broken += 1,
                        None => {}
                    }
                }
                let owners: BTreeSet<&String> = f.source_ids.iter().flatten().collect();
                if scope == FrameScope::Patient && owners.len() > 1 {
                    mixed += 1;
                }
            }
            if seen.iter().any(|&c| c != 1) {
                broken += 1;
            }
        }
    }
    verdict(
        overlapping == 0 && mixed == 0 && broken == 0,
        format!(
            "split overlap in {overlapping}/1000 seeds; {mixed} mixed patient frames and {broken} bijection breaks over {cohorts} cohorts"
        ),
    )
}

fn ece_and_welch() -> Verdict {
    let single = ece(&[0.6, 0.6, 0.6, 0.6, 0.6], &[1, 0, 0, 0, 0], 10).unwrap();
    let zero_perfect = ece(&[0.0, 1.0, 0.0, 1.0], &[0, 1, 0, 1], 10).unwrap();
    let zero_calibrated = ece(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0], 10).unwrap();
    let w = t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let p_oracle = 0.346593507087;
    let at_zero = student_t_two_sided(0.0, 8.0);
    let equal = t_test(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
    let pass = (single - 0.4).abs() < 1e-12
        && zero_perfect == 0.0
        && zero_calibrated == 0.0
        && (w.p - p_oracle).abs() <= 1e-3
        && at_zero == 1.0
        && equal.p == 1.0;
    verdict(
        pass,
        format!(
            "ECE single-bin {single}, zero cases {zero_perfect}/{zero_calibrated}; Welch t={:.3} df={:.3} p={:.12} (oracle {p_oracle}); p(t=0)={at_zero}, equal samples p={}",
            w.t, w.df, w.p, equal.p
        ),
    )
}

fn blobs(n_per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng(seed);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (c, centre) in [-6.0, 6.0].iter().enumerate() {
        for _ in 0..n_per {
            points.push((0..4).map(|_| centre + r.sample::<f64, _>(StandardNormal)).collect());
            labels.push(c);
        }
    }
    (points, labels)
}

fn tsne_properties() -> Verdict {
    let runs = 20;
    let mut decreased = 0;
    let mut shapes_ok = true;
    for s in 0..runs {
        let (points, _) = blobs(20, 400 + s);
        let cfg = TsneConfig {
            iterations: 300,
            exaggeration_iters: 100,
            seed: s,
            ..TsneConfig::default()
        };
        let res = tsne(&points, &cfg).unwrap();
        shapes_ok &= res.coords.len() == points.len() && res.coords.iter().all(|c| c.len() == 2);
        if res.kl_trace.last().unwrap() < &res.kl_trace[0] {
            decreased += 1;
        }
    }

    let (points, labels) = blobs(30, 500);
    let mut worst_perp: f64 = 0.0;
    for i in 0..points.len() {
        let d: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, q)| points[i].iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        worst_perp = worst_perp.max((calibrate_sigma(&d, 5.0).unwrap().achieved_perplexity - 5.0).abs());
    }
    let layout = tsne(&points, &TsneConfig::default()).unwrap();
    let sil = silhouette(&layout.coords, &labels);
    shapes_ok &= layout.coords.len() == 60 && layout.coords.iter().all(|c| c.len() == 2);

    verdict(
        decreased == runs && worst_perp <= 1e-4 && sil > 0.5 && shapes_ok,
        format!(
            "KL fell in {decreased}/{runs} runs; max |perplexity - 5| {worst_perp:.1e}; two-blob silhouette {sil:.3} (>0.5); n x 2 shape {}",
            if shapes_ok { "ok" } else { "wrong" }
        ),
    )
}

struct Grid {
    out: PathBuf,
    analysis_time: Duration,
}

fn run_grid(out: PathBuf) -> Grid {
    let mut cfg = RunConfig {
        out_dir: out.clone(),
        ..RunConfig::default()
    };
    cfg.tsne.max_points = GRID_TSNE_POINTS;
    let start = Instant::now();
    for c in [Command::Syngen, Command::Pretrain, Command::Embed, Command::Downstream] {
        run(c, &cfg).unwrap_or_else(|e| panic!("{}: {e}", c.name()));
    }
    let analysis_time = start.elapsed();
    for c in [Command::Tsne, Command::Report] {
        run(c, &cfg).unwrap_or_else(|e| panic!("{}: {e}", c.name()));
    }
    Grid { out, analysis_time }
}

fn results(grid: &Grid, profile: &str) -> DatasetResults {
    let text = fs::read_to_string(grid.out.join(format!("reports/{profile}/results.json"))).unwrap();
    DatasetResults::from_json(&text).unwrap()
}

fn directional(grid: &Grid) -> Verdict {
    let r = results(grid, "osteoporosis_like");
    let base = r.cell(BASELINE).unwrap();
    let seq = r.cell("seq-trad").unwrap();
    let auc = t_test(&seq.auroc.replicates, &base.auroc.replicates).unwrap();
    let cal = t_test(&seq.ece.replicates, &base.ece.replicates).unwrap();
    let lift = seq.auroc.mean - base.auroc.mean;
    let reps = seq.auroc.replicates.len();
    let pass = reps == 50 && lift >= 0.02 && auc.p < 0.05 && seq.ece.mean < base.ece.mean && cal.p < 0.05;
    verdict(
        pass,
        format!(
            "osteoporosis_like over {reps} bootstraps: AUROC baseline {:.4} seq-trad {:.4} (lift {lift:+.4}, need >= +0.02) p={:.3}; ECE baseline {:.4} seq-trad {:.4} p={:.3}",
            base.auroc.mean, seq.auroc.mean, auc.p, base.ece.mean, seq.ece.mean, cal.p
        ),
    )
}

fn gain_share(grid: &Grid) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for profile in PROFILES {
        let r = results(grid, profile);
        let base = r.cell(BASELINE).unwrap().demographic_gain_share;
        let seq: Vec<String> = SEQ_CELLS
            .iter()
            .map(|c| {
                let share = r.cell(c).unwrap().demographic_gain_share;
                pass &= share > base;
                format!("{c} {share:.2}{}", if share > base { "" } else { "(!)" })
            })
            .collect();
        parts.push(format!("{profile} baseline {base:.2} vs {}", seq.join(" ")));
    }
    verdict(pass, format!("gain share %: {}", parts.join("; ")))
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism(a: &Grid, b: &Grid) -> Verdict {
    let fa = files_under(&a.out);
    let fb = files_under(&b.out);
    let timestamped = |p: &Path| p.extension().is_some_and(|e| e == "jsonl");
    let models = fa.keys().filter(|p| p.extension().is_some_and(|e| e == "gdpm")).count();
    let reports = fa.keys().filter(|p| p.starts_with("reports")).count();
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|p| !timestamped(p) && fa.get(*p) != fb.get(*p))
        .map(|p| p.display().to_string())
        .collect();
    verdict(
        differing.is_empty() && models == 6 && reports > 0,
        format!(
            "{} files compared ({models} models, {reports} report files), {} differ{}",
            fa.len(),
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(": {}", differing.join(", "))
            }
        ),
    )
}

fn main() -> ExitCode {
    let mut lines = vec![
        check("gradient fidelity", secs(10), gradient_fidelity),
        check("AUROC oracle equivalence", secs(5), auroc_oracle),
        check("split-search oracle equivalence", secs(30), split_oracle),
        check("CCI correctness", None, cci_hand_cases),
        check("leakage invariants", None, leakage),
        check("calibration and statistics", None, ece_and_welch),
        check("t-SNE properties", None, tsne_properties),
    ];
    for l in &lines {
        l.print();
    }

    let root = tempfile::tempdir().unwrap();
    let first = catch_unwind(|| run_grid(root.path().join("a")));
    let second = catch_unwind(|| run_grid(root.path().join("b")));
    let grid_lines = match (&first, &second) {
        (Ok(a), Ok(b)) => vec![
            check("directional reproduction", secs(300), || directional(a)).timed(a.analysis_time),
            check("gain-share reproduction", secs(300), || gain_share(a)).timed(a.analysis_time),
            check("end-to-end determinism", None, || determinism(a, b)),
        ],
        _ => [
            "directional reproduction",
            "gain-share reproduction",
            "end-to-end determinism",
        ]
        .into_iter()
        .map(|name| check(name, None, || verdict(false, "grid run failed")))
        .collect(),
    };
    for l in &grid_lines {
        l.print();
    }
    lines.extend(grid_lines);

    let failed = lines.iter().filter(|l| !l.pass()).count();
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
