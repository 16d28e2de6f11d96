//! Visit ordering (random or age-sorted), fixed-length framing and
//! patient-level train/test splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::VisitRecord;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::seed;

pub const FRAME_LEN: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    Ns,
    Seq,
}

impl Ordering {
    pub const ALL: [Ordering; 2] = [Ordering::Ns, Ordering::Seq];

    pub fn name(self) -> &'static str {
        match self {
            Ordering::Ns => "ns",
            Ordering::Seq => "seq",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ns" => Some(Ordering::Ns),
            "seq" => Some(Ordering::Seq),
            _ => None,
        }
    }
}

/// Whether frames hold one patient's visits or the pooled, age-sorted cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameScope {
    Patient,
    Cohort,
}

impl FrameScope {
    pub fn name(self) -> &'static str {
        match self {
            FrameScope::Patient => "patient",
            FrameScope::Cohort => "cohort",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub train_patient_ids: BTreeSet<String>,
    pub test_patient_ids: BTreeSet<String>,
    pub ratio: f64,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn is_train(&self, patient_id: &str) -> bool {
        self.train_patient_ids.contains(patient_id)
    }
}

/// Assign each distinct patient wholly to train or test. The train side gets
/// `round(ratio · n)` patients, kept within `[1, n − 1]`.
pub fn split_by_patient<S: AsRef<str>>(patient_ids: &[S], ratio: f64, seed: u64) -> Result<SplitAssignment> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Split(format!("ratio must lie in (0, 1), got {ratio}")));
    }
    let distinct: BTreeSet<&str> = patient_ids.iter().map(AsRef::as_ref).collect();
    let n = distinct.len();
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 distinct patients, found {n}")));
    }
    let mut ids: Vec<&str> = distinct.into_iter().collect();
    ids.shuffle(&mut seed::rng(seed));
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    Ok(SplitAssignment {
        train_patient_ids: ids[..n_train].iter().map(|s| s.to_string()).collect(),
        test_patient_ids: ids[n_train..].iter().map(|s| s.to_string()).collect(),
        ratio,
        seed,
    })
}

/// Seeded uniform shuffle (Fisher–Yates).
pub fn order_ns<R: Clone>(rows: &[R], seed: u64) -> Vec<R> {
    let mut out = rows.to_vec();
    out.shuffle(&mut seed::rng(seed));
    out
}

pub trait Aged {
    fn age(&self) -> f64;
}

impl Aged for VisitRecord {
    fn age(&self) -> f64 {
        f64::from(self.age)
    }
}

impl<R: Aged> Aged for &R {
    fn age(&self) -> f64 {
        (*self).age()
    }
}

/// Stable non-decreasing sort by age.
pub fn order_seq<R: Aged + Clone>(rows: &[R]) -> Vec<R> {
    let mut out = rows.to_vec();
    out.sort_by(|a, b| a.age().total_cmp(&b.age()));
    out
}

/// Permutation that stably sorts `ages`.
pub fn seq_permutation(ages: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ages.len()).collect();
    idx.sort_by(|&a, &b| ages[a].total_cmp(&ages[b]));
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFrame<T> {
    /// `frame_len × d`; padded steps are zero.
    pub steps: Matrix<T>,
    pub valid_mask: Vec<bool>,
    pub targets: Vec<T>,
    pub source_ids: Vec<Option<String>>,
    /// Index of the input row held at each valid step.
    pub source_rows: Vec<Option<usize>>,
}

impl<T: Scalar> SequenceFrame<T> {
    pub fn len(&self) -> usize {
        self.valid_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid_mask.is_empty()
    }

    pub fn n_valid(&self) -> usize {
        self.valid_mask.iter().filter(|&&v| v).count()
    }

    pub fn dim(&self) -> usize {
        self.steps.cols()
    }
}

fn build_frame<T: Scalar>(
    chunk: &[usize],
    rows: &[Vec<T>],
    targets: &[T],
    patient_ids: &[String],
    frame_len: usize,
    d: usize,
) -> SequenceFrame<T> {
    let mut steps = Matrix::zeros(frame_len, d);
    let mut valid_mask = vec![false; frame_len];
    let mut tgt = vec![T::zero(); frame_len];
    let mut source_ids = vec![None; frame_len];
    let mut source_rows = vec![None; frame_len];
    for (s, &i) in chunk.iter().enumerate() {
        steps.row_mut(s).copy_from_slice(&rows[i]);
        valid_mask[s] = true;
        tgt[s] = targets[i];
        source_ids[s] = Some(patient_ids[i].clone());
        source_rows[s] = Some(i);
    }
    SequenceFrame {
        steps,
        valid_mask,
        targets: tgt,
        source_ids,
        source_rows,
    }
}

/// Cut already-ordered rows into non-overlapping frames of `frame_len`
/// steps, zero-padding the last partial frame. Patient scope frames each
/// patient separately (patients in id order); cohort scope chunks the rows
/// as given.
pub fn frame_sequences<T: Scalar>(
    rows: &[Vec<T>],
    targets: &[T],
    patient_ids: &[String],
    frame_len: usize,
    scope: FrameScope,
) -> Result<Vec<SequenceFrame<T>>> {
    if frame_len == 0 {
        return Err(Error::Config("frame_len must be positive".into()));
    }
    if targets.len() != rows.len() || patient_ids.len() != rows.len() {
        return Err(Error::Contract("rows, targets and patient ids differ in length".into()));
    }
    let Some(first) = rows.first() else {
        return Ok(Vec::new());
    };
    let d = first.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Contract("encoded rows differ in width".into()));
    }
    let groups: Vec<Vec<usize>> = match scope {
        FrameScope::Cohort => vec![(0..rows.len()).collect()],
        FrameScope::Patient => {
            let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, p) in patient_ids.iter().enumerate() {
                by.entry(p.as_str()).or_default().push(i);
            }
            by.into_values().collect()
        }
    };
    Ok(groups
        .iter()
        .flat_map(|g| g.chunks(frame_len))
        .map(|chunk| build_frame(chunk, rows, targets, patient_ids, frame_len, d))
        .collect())
}

/// Debug dump: `frame_id,step,valid,target,v0..vd`.
pub fn frames_to_csv<T: Scalar>(frames: &[SequenceFrame<T>]) -> String {
    let d = frames.first().map_or(0, |f| f.dim());
    let mut s = String::from("frame_id,step,valid,target");
    for k in 0..d {
        let _ = write!(s, ",v{k}");
    }
    s.push('\n');
    for (fid, f) in frames.iter().enumerate() {
        for step in 0..f.len() {
            let _ = write!(s, "{fid},{step},{},{}", u8::from(f.valid_mask[step]), f.targets[step]);
            for v in f.steps.row(step) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    struct Tagged(f64, char);

    impl Aged for Tagged {
        fn age(&self) -> f64 {
            self.0
        }
    }

    #[test]
    fn split_ten_patients() {
        let ids: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let s = split_by_patient(&ids, 0.8, 5).unwrap();
        assert_eq!(s.train_patient_ids.len(), 8);
        assert_eq!(s.test_patient_ids.len(), 2);
        assert!(s.train_patient_ids.is_disjoint(&s.test_patient_ids));
        assert_eq!(s, split_by_patient(&ids, 0.8, 5).unwrap());
    }

    #[test]
    fn split_rounding_three_patients() {
        for seed in 0..50 {
            let s = split_by_patient(&["a", "b", "c"], 0.5, seed).unwrap();
            let sizes = (s.train_patient_ids.len(), s.test_patient_ids.len());
            assert!(sizes == (1, 2) || sizes == (2, 1));
        }
    }

    #[test]
    fn split_needs_two_patients() {
        assert!(matches!(split_by_patient(&["a", "a"], 0.5, 0), Err(Error::Split(_))));
    }

    #[test]
    fn seq_order_is_stable() {
        let rows = vec![
            Tagged(50.0, 'a'),
            Tagged(30.0, 'b'),
            Tagged(30.0, 'c'),
            Tagged(70.0, 'd'),
        ];
        let tags: String = order_seq(&rows).iter().map(|t| t.1).collect();
        assert_eq!(tags, "bcad");
        let same = vec![Tagged(1.0, 'x'), Tagged(1.0, 'y'), Tagged(1.0, 'z')];
        assert_eq!(order_seq(&same), same);
    }

    #[test]
    fn ns_single_row_unchanged() {
        assert_eq!(order_ns(&[7], 3), vec![7]);
        assert_eq!(order_ns(&[1, 2, 3, 4, 5], 9), order_ns(&[1, 2, 3, 4, 5], 9));
    }

    fn toy(n: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<String>) {
        let rows = (0..n).map(|i| vec![i as f64 + 1.0, 1.0]).collect();
        let t = (0..n).map(|i| (i % 3) as f64).collect();
        let ids = vec!["p".to_string(); n];
        (rows, t, ids)
    }

    #[test]
    fn three_visits_single_partial_frame() {
        let (r, t, ids) = toy(3);
        let f = frame_sequences(&r, &t, &ids, FRAME_LEN, FrameScope::Patient).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].n_valid(), 3);
        assert!(f[0].steps.row(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn chunking_125_visits() {
        let (r, t, ids) = toy(125);
        let f = frame_sequences(&r, &t, &ids, FRAME_LEN, FrameScope::Cohort).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].n_valid(), 120);
        assert_eq!(f[1].n_valid(), 5);
        assert_eq!(f[1].steps[(0, 0)], 121.0);
    }

    #[test]
    fn empty_and_bad_frame_len() {
        let f = frame_sequences::<f64>(&[], &[], &[], FRAME_LEN, FrameScope::Patient).unwrap();
        assert!(f.is_empty());
        let (r, t, ids) = toy(2);
        assert!(matches!(
            frame_sequences(&r, &t, &ids, 0, FrameScope::Patient),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn frame_dump_has_one_line_per_step() {
        let (r, t, ids) = toy(2);
        let f = frame_sequences(&r, &t, &ids, 4, FrameScope::Patient).unwrap();
        let csv = frames_to_csv(&f);
        assert!(csv.starts_with("frame_id,step,valid,target,v0,v1\n"));
        assert_eq!(csv.lines().count(), 5);
    }
}
