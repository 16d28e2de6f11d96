//! Synthetic stand-ins: a pretraining visit cohort and three downstream
//! tabular profiles with a tunable demographic share of the label signal.
//!
//! Ages come from a piecewise-uniform law anchored on the target quartiles
//! (`[L, Q1]`, `[Q1, M]`, `[M, Q3]`, `[Q3, U]` each hold a quarter of the
//! mass, with `L = Q1 − (M − Q1)` floored at 0 and `U = Q3 + (Q3 − M)`),
//! sampled by stratified inverse-CDF draws so realized quartiles sit on the
//! targets. Male and outcome counts are allocated exactly.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cci::CciTable;
use crate::data::{CohortStats, Gender, TabularDataset, VisitRecord};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

pub const MAX_AGE: f64 = 110.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeQuartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl AgeQuartiles {
    fn validate(&self) -> Result<()> {
        let ok = [self.q1, self.median, self.q3]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && self.q1 <= self.median
            && self.median <= self.q3
            && self.q3 <= MAX_AGE;
        if ok {
            Ok(())
        } else {
            Err(Error::Spec(format!(
                "age quartiles must satisfy 0 <= q1 <= median <= q3 <= {MAX_AGE}, got {self:?}"
            )))
        }
    }

    fn knots(&self) -> [f64; 5] {
        let lo = (self.q1 - (self.median - self.q1)).max(0.0);
        let hi = (self.q3 + (self.q3 - self.median)).min(MAX_AGE);
        [lo, self.q1, self.median, self.q3, hi]
    }

    /// Inverse CDF at `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let k = self.knots();
        let seg = ((u * 4.0) as usize).min(3);
        let frac = u * 4.0 - seg as f64;
        k[seg] + frac * (k[seg + 1] - k[seg])
    }

    /// `n` stratified draws (one per `1/n` slice), shuffled.
    fn sample(&self, n: usize, rng: &mut Rng) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n)
            .map(|i| self.quantile((i as f64 + rng.random::<f64>()) / n as f64))
            .collect();
        v.shuffle(rng);
        v
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Spec(format!("{name} must be in [0, 1], got {v}")))
    }
}

/// Exactly `round(frac · n)` true flags in random positions.
fn exact_flags(n: usize, frac: f64, rng: &mut Rng) -> Vec<bool> {
    let k = (frac * n as f64).round() as usize;
    let mut v: Vec<bool> = (0..n).map(|i| i < k).collect();
    v.shuffle(rng);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_patients: usize,
    pub male_fraction: f64,
    pub age: AgeQuartiles,
    pub visits_min: usize,
    pub visits_max: usize,
    /// Visits of one patient spread over this many years around the
    /// patient's central age.
    pub followup_years: u32,
    /// Age at which the comorbidity multiplier reaches 1.
    pub age_midpoint: f64,
    pub age_scale: f64,
    pub male_multiplier: f64,
    pub female_multiplier: f64,
    /// Non-comorbidity codes per visit, drawn uniformly from `0..=filler_codes`.
    pub filler_codes: usize,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_patients: 2000,
            male_fraction: 0.4428,
            age: AgeQuartiles {
                q1: 18.0,
                median: 40.0,
                q3: 57.0,
            },
            visits_min: 1,
            visits_max: 12,
            followup_years: 6,
            age_midpoint: 50.0,
            age_scale: 12.0,
            male_multiplier: 1.15,
            female_multiplier: 0.9,
            filler_codes: 2,
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::Spec("n_patients must be >= 1".into()));
        }
        check_fraction("male_fraction", self.male_fraction)?;
        self.age.validate()?;
        if self.visits_min == 0 || self.visits_min > self.visits_max {
            return Err(Error::Spec(format!(
                "need 1 <= visits_min <= visits_max, got {}..{}",
                self.visits_min, self.visits_max
            )));
        }
        if !(self.age_scale > 0.0) || self.male_multiplier < 0.0 || self.female_multiplier < 0.0 {
            return Err(Error::Spec("age_scale must be > 0 and multipliers >= 0".into()));
        }
        Ok(())
    }
}

/// Base per-visit prevalence of each comorbidity category at the age
/// midpoint; unknown categories fall back to 0.01.
fn base_prevalence(category: &str) -> f64 {
    match category {
        "myocardial_infarction" => 0.02,
        "congestive_heart_failure" => 0.03,
        "peripheral_vascular_disease" => 0.02,
        "cerebrovascular_disease" => 0.03,
        "dementia" => 0.01,
        "chronic_pulmonary_disease" => 0.06,
        "rheumatic_disease" => 0.01,
        "peptic_ulcer_disease" => 0.02,
        "mild_liver_disease" => 0.02,
        "diabetes_without_complications" => 0.08,
        "diabetes_with_complications" => 0.02,
        "hemiplegia_paraplegia" => 0.005,
        "renal_disease" => 0.02,
        "malignancy" => 0.03,
        "moderate_severe_liver_disease" => 0.005,
        "metastatic_solid_tumor" => 0.005,
        "aids_hiv" => 0.002,
        _ => 0.01,
    }
}

const FILLER_CODES: [&str; 8] = ["V70.0", "780.6", "401.9", "465.9", "786.2", "272.4", "724.2", "V72.31"];

/// Render a prefix as a dotted ICD-9 code, appending a digit when the
/// prefix is a bare three-character category.
fn render_code(prefix: &str, rng: &mut Rng) -> String {
    let mut code = prefix.to_string();
    if code.len() < 3 {
        code.push_str(&format!("{}", rng.random_range(0..10)));
    }
    if code.len() == 3 {
        code.push_str(&format!("{}", rng.random_range(0..10)));
    }
    let (head, tail) = code.split_at(3);
    format!("{head}.{tail}")
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Visit records whose comorbidity burden rises with age: category
/// prevalence is scaled by `2σ((age − midpoint)/scale)` and a gender
/// multiplier. Patients are `P000001…`, visits sorted by age.
pub fn gen_pretrain_cohort(spec: &CohortSpec, table: &CciTable) -> Result<(Vec<VisitRecord>, CohortStats)> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let n = spec.n_patients;
    let male = exact_flags(n, spec.male_fraction, &mut rng);
    let centers = spec.age.sample(n, &mut rng);
    let width = (n.max(1) as f64).log10().ceil().max(6.0) as usize;
    let mut visits = Vec::new();
    let mut visit_ages = Vec::new();
    for i in 0..n {
        let gender = if male[i] { Gender::Male } else { Gender::Female };
        let k = rng.random_range(spec.visits_min..=spec.visits_max);
        let half = spec.followup_years as f64 / 2.0;
        let mut ages: Vec<u32> = (0..k)
            .map(|_| {
                let a = centers[i] - half + rng.random::<f64>() * spec.followup_years as f64;
                a.round().clamp(0.0, MAX_AGE) as u32
            })
            .collect();
        ages.sort_unstable();
        let pid = format!("P{:0width$}", i + 1);
        let gmul = if male[i] {
            spec.male_multiplier
        } else {
            spec.female_multiplier
        };
        for age in ages {
            let amul = 2.0 * logistic((age as f64 - spec.age_midpoint) / spec.age_scale);
            let mut codes = Vec::new();
            for cat in table.categories() {
                let p = (base_prevalence(&cat.name) * amul * gmul).min(1.0);
                if rng.random::<f64>() < p {
                    let prefix = &cat.code_prefixes[rng.random_range(0..cat.code_prefixes.len())];
                    codes.push(render_code(prefix, &mut rng));
                }
            }
            for _ in 0..rng.random_range(0..=spec.filler_codes) {
                codes.push(FILLER_CODES[rng.random_range(0..FILLER_CODES.len())].to_string());
            }
            visit_ages.push(age as f64);
            visits.push(VisitRecord::new(pid.clone(), age, gender, codes)?);
        }
    }
    let mut stats = CohortStats::compute(&visit_ages, &[], &[]);
    stats.n = n;
    stats.male_fraction = male.iter().filter(|&&m| m).count() as f64 / n as f64;
    Ok((visits, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    PneumoniaLike,
    OsteoporosisLike,
    ThyroidLike,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::PneumoniaLike, Profile::OsteoporosisLike, Profile::ThyroidLike];

    pub fn name(self) -> &'static str {
        match self {
            Profile::PneumoniaLike => "pneumonia_like",
            Profile::OsteoporosisLike => "osteoporosis_like",
            Profile::ThyroidLike => "thyroid_like",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Order of rows in the emitted file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowOrder {
    /// Random order.
    Shuffled,
    /// Positives first, then negatives, as case-control extracts are often
    /// stored.
    OutcomeGrouped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamSpec {
    pub profile: Profile,
    /// Patients (rows after per-patient aggregation).
    pub n: usize,
    pub n_noise_features: usize,
    /// Share of the label log-odds carried by age and gender.
    pub demographic_signal: f64,
    pub age: AgeQuartiles,
    pub male_fraction: f64,
    pub outcome_fraction: f64,
    /// Scale of the latent log-odds before logistic noise.
    pub separation: f64,
    /// Fraction of non-demographic cells left empty.
    pub missing_rate: f64,
    /// Rows per patient are drawn from `1..=rows_per_patient_max`.
    pub rows_per_patient_max: usize,
    pub row_order: RowOrder,
    pub seed: u64,
}

impl DownstreamSpec {
    pub fn preset(profile: Profile) -> Self {
        let base = |n, nf, signal, q1, median, q3, male, outcome, order| DownstreamSpec {
            profile,
            n,
            n_noise_features: nf,
            demographic_signal: signal,
            age: AgeQuartiles { q1, median, q3 },
            male_fraction: male,
            outcome_fraction: outcome,
            separation: 3.0,
            missing_rate: 0.0,
            rows_per_patient_max: 1,
            row_order: order,
            seed: 0,
        };
        match profile {
            Profile::PneumoniaLike => DownstreamSpec {
                missing_rate: 0.10,
                rows_per_patient_max: 3,
                ..base(585, 50, 0.1, 51.0, 62.0, 72.0, 0.5915, 0.4479, RowOrder::Shuffled)
            },
            Profile::OsteoporosisLike => base(1958, 11, 0.9, 21.0, 32.0, 53.0, 0.5066, 0.50, RowOrder::OutcomeGrouped),
            Profile::ThyroidLike => base(450, 20, 0.5, 46.0, 60.0, 72.0, 0.3756, 0.50, RowOrder::OutcomeGrouped),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 50 {
            return Err(Error::Spec(format!("n must be >= 50, got {}", self.n)));
        }
        check_fraction("demographic_signal", self.demographic_signal)?;
        check_fraction("male_fraction", self.male_fraction)?;
        check_fraction("missing_rate", self.missing_rate)?;
        if !(self.outcome_fraction > 0.0 && self.outcome_fraction < 1.0) {
            return Err(Error::Spec(format!(
                "outcome_fraction must be in (0, 1), got {}",
                self.outcome_fraction
            )));
        }
        if self.n_noise_features == 0 && self.demographic_signal < 1.0 {
            return Err(Error::Spec(
                "signal below 1 needs at least one non-demographic feature".into(),
            ));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::Spec("separation must be a positive number".into()));
        }
        if self.rows_per_patient_max == 0 {
            return Err(Error::Spec("rows_per_patient_max must be >= 1".into()));
        }
        self.age.validate()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let w = self.n_noise_features.to_string().len().max(2);
        let mut names = vec!["age".to_string(), "gender".to_string()];
        names.extend((1..=self.n_noise_features).map(|j| format!("x{j:0w$}")));
        names
    }
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    for x in v.iter_mut() {
        *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Demographic part of the log-odds, before standardization.
fn demographic_term(profile: Profile, age: f64, male: bool, spec: &DownstreamSpec) -> f64 {
    let g = if male { 1.0 } else { -1.0 };
    match profile {
        // Step at the median age; a faint gender term.
        Profile::OsteoporosisLike => {
            let step = if age >= spec.age.median { 1.0 } else { -1.0 };
            step + 0.1 * g
        }
        Profile::ThyroidLike => (age - spec.age.median) / (spec.age.q3 - spec.age.q1).max(1.0) - 0.5 * g,
        Profile::PneumoniaLike => (age - spec.age.median) / (spec.age.q3 - spec.age.q1).max(1.0) + 0.1 * g,
    }
}

/// Downstream dataset whose label is the top `outcome_fraction` of
/// `separation · (s·D + (1 − s)·N) + Logistic(0, 1)`, where `D` (age and
/// gender) and `N` (a weighted sum of the other features) are standardized.
/// Returns the raw (possibly multi-row, possibly incomplete) dataset and
/// the patient-level stats.
pub fn gen_downstream(spec: &DownstreamSpec) -> Result<(TabularDataset, CohortStats)> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let n = spec.n;
    let k = spec.n_noise_features;
    let ages: Vec<f64> = spec.age.sample(n, &mut rng).into_iter().map(f64::round).collect();
    let male = exact_flags(n, spec.male_fraction, &mut rng);

    // Every third feature is binary; the rest standard normal.
    let feats: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..k)
                .map(|j| {
                    if j % 3 == 2 {
                        f64::from(u8::from(rng.random::<f64>() < 0.3))
                    } else {
                        round4(StandardNormal.sample(&mut rng))
                    }
                })
                .collect()
        })
        .collect();
    let weights: Vec<f64> = (0..k)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign / ((j + 1) as f64).sqrt()
        })
        .collect();

    let mut d: Vec<f64> = (0..n)
        .map(|i| demographic_term(spec.profile, ages[i], male[i], spec))
        .collect();
    let mut nz: Vec<f64> = feats
        .iter()
        .map(|f| f.iter().zip(&weights).map(|(x, w)| x * w).sum())
        .collect();
    standardize(&mut d);
    standardize(&mut nz);
    let s = spec.demographic_signal;
    let utility: Vec<f64> = (0..n)
        .map(|i| {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            spec.separation * (s * d[i] + (1.0 - s) * nz[i]) + (u / (1.0 - u)).ln()
        })
        .collect();
    let n_pos = (spec.outcome_fraction * n as f64).round() as usize;
    let mut rank: Vec<usize> = (0..n).collect();
    rank.sort_by(|&a, &b| utility[b].total_cmp(&utility[a]).then(a.cmp(&b)));
    let mut label = vec![0u8; n];
    for &i in &rank[..n_pos] {
        label[i] = 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    match spec.row_order {
        RowOrder::Shuffled => order.shuffle(&mut rng),
        RowOrder::OutcomeGrouped => order.sort_by_key(|&i| (std::cmp::Reverse(label[i]), i)),
    }

    let width = n.to_string().len().max(4);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut pids = Vec::new();
    for &i in &order {
        let reps = rng.random_range(1..=spec.rows_per_patient_max);
        for _ in 0..reps {
            let mut row = vec![Some(ages[i]), Some(f64::from(u8::from(male[i])))];
            for (j, &x) in feats[i].iter().enumerate() {
                // Repeated measurements jitter continuous features.
                let v = if reps > 1 && j % 3 != 2 {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    round4(x + 0.2 * e)
                } else {
                    x
                };
                let missing = spec.missing_rate > 0.0 && rng.random::<f64>() < spec.missing_rate;
                row.push((!missing).then_some(v));
            }
            rows.push(row);
            labels.push(label[i]);
            pids.push(format!(
                "{}{:0width$}",
                spec.profile.name().chars().next().unwrap().to_ascii_uppercase(),
                i + 1
            ));
        }
    }
    let outcome: Vec<bool> = label.iter().map(|&l| l == 1).collect();
    let stats = CohortStats::compute(&ages, &male, &outcome);
    Ok((TabularDataset::new(spec.feature_names(), rows, labels, pids)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_function_hits_anchors() {
        let a = AgeQuartiles {
            q1: 21.0,
            median: 32.0,
            q3: 53.0,
        };
        assert_eq!(a.quantile(0.0), 10.0);
        assert_eq!(a.quantile(0.25), 21.0);
        assert_eq!(a.quantile(0.5), 32.0);
        assert_eq!(a.quantile(0.75), 53.0);
    }

    #[test]
    fn pretrain_cohort_matches_targets() {
        let spec = CohortSpec::default();
        let (visits, stats) = gen_pretrain_cohort(&spec, &CciTable::bundled()).unwrap();
        assert!((stats.male_fraction - 0.4428).abs() <= 0.01);
        assert!((stats.age_median - 40.0).abs() <= 3.0);
        assert!((stats.age_q1 - 18.0).abs() <= 3.0);
        assert!((stats.age_q3 - 57.0).abs() <= 3.0);
        let (again, _) = gen_pretrain_cohort(&spec, &CciTable::bundled()).unwrap();
        assert_eq!(visits, again);
    }

    #[test]
    fn comorbidity_rises_with_age() {
        let table = CciTable::bundled();
        let (visits, _) = gen_pretrain_cohort(&CohortSpec::default(), &table).unwrap();
        let mean = |lo: u32, hi: u32| {
            let s: Vec<f64> = visits
                .iter()
                .filter(|v| v.age >= lo && v.age < hi)
                .map(|v| table.score(&v.dx_codes).value() as f64)
                .collect();
            s.iter().sum::<f64>() / s.len() as f64
        };
        assert!(mean(60, 111) > 2.0 * mean(0, 30));
    }

    #[test]
    fn single_patient_cohort() {
        let spec = CohortSpec {
            n_patients: 1,
            ..Default::default()
        };
        let (visits, stats) = gen_pretrain_cohort(&spec, &CciTable::bundled()).unwrap();
        assert!(!visits.is_empty());
        assert_eq!(stats.n, 1);
    }

    #[test]
    fn invalid_specs() {
        let zero = CohortSpec {
            n_patients: 0,
            ..Default::default()
        };
        assert!(matches!(
            gen_pretrain_cohort(&zero, &CciTable::bundled()),
            Err(Error::Spec(_))
        ));
        let inverted = CohortSpec {
            age: AgeQuartiles {
                q1: 50.0,
                median: 40.0,
                q3: 30.0,
            },
            ..Default::default()
        };
        assert!(matches!(
            gen_pretrain_cohort(&inverted, &CciTable::bundled()),
            Err(Error::Spec(_))
        ));
        let small = DownstreamSpec {
            n: 10,
            ..DownstreamSpec::preset(Profile::ThyroidLike)
        };
        assert!(matches!(gen_downstream(&small), Err(Error::Spec(_))));
    }

    #[test]
    fn presets_match_marginals() {
        for p in Profile::ALL {
            let spec = DownstreamSpec::preset(p);
            let (ds, stats) = gen_downstream(&spec).unwrap();
            assert_eq!(stats.n, spec.n);
            assert_eq!(ds.n_features(), spec.n_noise_features + 2);
            assert!((stats.outcome_fraction - spec.outcome_fraction).abs() <= 0.03);
            assert!((stats.male_fraction - spec.male_fraction).abs() <= 0.01);
            assert!((stats.age_median - spec.age.median).abs() <= 3.0);
        }
    }

    #[test]
    fn outcome_grouped_order_puts_cases_first() {
        let (ds, _) = gen_downstream(&DownstreamSpec::preset(Profile::OsteoporosisLike)).unwrap();
        let first_neg = ds.labels().iter().position(|&l| l == 0).unwrap();
        assert!(ds.labels()[first_neg..].iter().all(|&l| l == 0));
        assert_eq!(first_neg, 979);
    }
}
