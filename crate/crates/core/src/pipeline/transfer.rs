//! Encode demographics, build training data for a cell, pretrain, and
//! turn a trained model into per-row embedding columns.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cci::CciTable;
use crate::data::{Gender, TabularDataset, VisitRecord};
use crate::encoders::{Encoder, EncoderKind};
use crate::error::{Error, Result};
use crate::nn::{self, GdpModel, ModelDims, TrainConfig, TrainData, TrainReport};
use crate::sequencing::{frame_sequences, order_ns, seq_permutation, FrameScope, Ordering, SplitAssignment, FRAME_LEN};

/// One GDP configuration: an ordering paired with an encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub ordering: Ordering,
    pub encoding: EncoderKind,
}

impl Cell {
    pub fn all() -> Vec<Cell> {
        Ordering::ALL
            .into_iter()
            .flat_map(|ordering| {
                EncoderKind::ALL
                    .into_iter()
                    .map(move |encoding| Cell { ordering, encoding })
            })
            .collect()
    }

    pub fn id(&self) -> String {
        format!("{}-{}", self.ordering.name(), self.encoding.name())
    }

    pub fn parse(s: &str) -> Option<Cell> {
        let (o, e) = s.trim().split_once('-')?;
        Some(Cell {
            ordering: Ordering::parse(o)?,
            encoding: EncoderKind::parse(e)?,
        })
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Parse a comma-separated cell list; `all` selects the full grid.
pub fn parse_cells(list: &str) -> Result<Vec<Cell>> {
    let mut out = Vec::new();
    for tok in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if tok.eq_ignore_ascii_case("all") {
            return Ok(Cell::all());
        }
        let c = Cell::parse(tok).ok_or_else(|| {
            Error::Config(format!(
                "unknown cell `{tok}`; expected <ns|seq>-<trad|pe|txt> or `all`"
            ))
        })?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty cell list".into()));
    }
    out.sort();
    Ok(out)
}

/// Age, gender and patient id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Demographics {
    pub ages: Vec<f64>,
    pub genders: Vec<Gender>,
    pub patient_ids: Vec<String>,
}

impl Demographics {
    pub fn from_visits(visits: &[VisitRecord]) -> Self {
        Self {
            ages: visits.iter().map(|v| v.age as f64).collect(),
            genders: visits.iter().map(|v| v.gender).collect(),
            patient_ids: visits.iter().map(|v| v.patient_id.clone()).collect(),
        }
    }

    /// Reads the `age` and `gender` columns, which must be fully observed.
    pub fn from_dataset(ds: &TabularDataset) -> Result<Self> {
        let col = |name: &str| {
            ds.feature_index(name)
                .ok_or_else(|| Error::Schema(format!("dataset has no `{name}` column")))
        };
        let (a, g) = (col("age")?, col("gender")?);
        let mut ages = Vec::with_capacity(ds.n_rows());
        let mut genders = Vec::with_capacity(ds.n_rows());
        for (i, row) in ds.rows().iter().enumerate() {
            let age = row[a].ok_or_else(|| Error::Validation(format!("row {}: age is missing", i + 1)))?;
            let bit = row[g].ok_or_else(|| Error::Validation(format!("row {}: gender is missing", i + 1)))?;
            let gender = Gender::from_bit(bit.round() as u8)
                .filter(|_| bit == 0.0 || bit == 1.0)
                .ok_or_else(|| Error::Validation(format!("row {}: gender `{bit}` is not 0/1", i + 1)))?;
            ages.push(age);
            genders.push(gender);
        }
        Ok(Self {
            ages,
            genders,
            patient_ids: ds.patient_ids().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            ages: idx.iter().map(|&i| self.ages[i]).collect(),
            genders: idx.iter().map(|&i| self.genders[i]).collect(),
            patient_ids: idx.iter().map(|&i| self.patient_ids[i].clone()).collect(),
        }
    }
}

pub fn encode_rows(encoder: &Encoder, kind: EncoderKind, demo: &Demographics) -> Result<Vec<Vec<f64>>> {
    let inputs: Vec<(f64, Gender)> = demo.ages.iter().copied().zip(demo.genders.iter().copied()).collect();
    encoder.encode_batch(kind, &inputs)
}

/// Rows (NS, shuffled with `seed`) or age-sorted frames (Seq).
pub fn build_train_data(
    ordering: Ordering,
    scope: FrameScope,
    demo: &Demographics,
    encoded: &[Vec<f64>],
    targets: &[f64],
    seed: u64,
) -> Result<TrainData<f64>> {
    match ordering {
        Ordering::Ns => {
            let idx: Vec<usize> = order_ns(&(0..encoded.len()).collect::<Vec<_>>(), seed);
            Ok(TrainData::Rows {
                x: idx.iter().map(|&i| encoded[i].clone()).collect(),
                y: idx.iter().map(|&i| targets[i]).collect(),
            })
        }
        Ordering::Seq => {
            let perm = seq_permutation(&demo.ages);
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| encoded[i].clone()).collect();
            let t: Vec<f64> = perm.iter().map(|&i| targets[i]).collect();
            let pids: Vec<String> = perm.iter().map(|&i| demo.patient_ids[i].clone()).collect();
            Ok(TrainData::Frames(frame_sequences(&rows, &t, &pids, FRAME_LEN, scope)?))
        }
    }
}

/// One embedding per row, in input order. Seq rows are age-sorted and
/// framed; each row receives the embedding of its frame prefix, i.e. the
/// frame read up to and including that row.
pub fn embed_rows(
    model: &GdpModel<f64>,
    scope: FrameScope,
    demo: &Demographics,
    encoded: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    match model.ordering {
        Ordering::Ns => encoded.iter().map(|x| model.embed_row(x)).collect(),
        Ordering::Seq => {
            let perm = seq_permutation(&demo.ages);
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| encoded[i].clone()).collect();
            let pids: Vec<String> = perm.iter().map(|&i| demo.patient_ids[i].clone()).collect();
            let zeros = vec![0.0; rows.len()];
            let frames = frame_sequences(&rows, &zeros, &pids, FRAME_LEN, scope)?;
            let mut out = vec![Vec::new(); encoded.len()];
            for f in &frames {
                for (step, e) in model.embed_steps(f)?.into_iter().enumerate() {
                    let sorted_pos = f.source_rows[step].expect("valid step has a source row");
                    out[perm[sorted_pos]] = e;
                }
            }
            Ok(out)
        }
    }
}

pub fn gdp_column_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("gdp_{i}")).collect()
}

/// Replace `age` and `gender` with `gdp_0..gdp_{k−1}`.
pub fn with_embeddings(ds: &TabularDataset, emb: &[Vec<f64>]) -> Result<TabularDataset> {
    let k = emb.first().map_or(0, Vec::len);
    ds.replace_columns(&["age", "gender"], &gdp_column_names(k), emb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub cell: String,
    pub n_train_rows: usize,
    pub n_test_rows: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub heldout_mse: f64,
    pub loss_history: Vec<f64>,
}

/// Settings shared by every pretraining cell.
#[derive(Debug, Clone)]
pub struct PretrainSettings<'a> {
    pub encoder: &'a Encoder,
    pub table: &'a CciTable,
    pub split: &'a SplitAssignment,
    pub scope: FrameScope,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub train: TrainConfig,
}

/// Train one cell on the train partition and score held-out MSE on the
/// test partition.
pub fn pretrain_cell(
    cell: Cell,
    visits: &[VisitRecord],
    settings: &PretrainSettings<'_>,
    seed: u64,
) -> Result<(GdpModel<f64>, PretrainSummary)> {
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) =
        (0..visits.len()).partition(|&i| settings.split.is_train(&visits[i].patient_id));
    let demo = Demographics::from_visits(visits);
    let targets: Vec<f64> = visits
        .iter()
        .map(|v| settings.table.score(&v.dx_codes).value() as f64)
        .collect();
    let encoded = encode_rows(settings.encoder, cell.encoding, &demo)?;
    let part = |idx: &[usize]| -> (Demographics, Vec<Vec<f64>>, Vec<f64>) {
        (
            demo.select(idx),
            idx.iter().map(|&i| encoded[i].clone()).collect(),
            idx.iter().map(|&i| targets[i]).collect(),
        )
    };
    let (d_tr, x_tr, y_tr) = part(&train_idx);
    let (d_te, x_te, y_te) = part(&test_idx);
    let dims = ModelDims {
        input_dim: settings.encoder.dim(cell.encoding),
        hidden_dim: settings.hidden_dim,
        embed_dim: settings.embed_dim,
    };
    let model = nn::init_model(cell.ordering, cell.encoding, dims, seed)?;
    let train_data = build_train_data(cell.ordering, settings.scope, &d_tr, &x_tr, &y_tr, seed)?;
    let test_data = build_train_data(cell.ordering, settings.scope, &d_te, &x_te, &y_te, seed)?;
    let cfg = TrainConfig {
        seed,
        ..settings.train.clone()
    };
    let (trained, report): (GdpModel<f64>, TrainReport) = nn::train(&model, &train_data, &cfg)?;
    let heldout_mse = if test_data.is_empty() {
        f64::NAN
    } else {
        trained.loss(&test_data.full())?
    };
    Ok((
        trained,
        PretrainSummary {
            cell: cell.id(),
            n_train_rows: train_idx.len(),
            n_test_rows: test_idx.len(),
            initial_loss: report.initial_loss,
            final_loss: report.loss_history.last().copied().unwrap_or(report.initial_loss),
            heldout_mse,
            loss_history: report.loss_history,
        },
    ))
}
