//! Charlson Comorbidity Index from diagnosis codes.
//!
//! Categories are matched by code prefix after dots are stripped, so `410`
//! matches `410.21`. Each category counts once per visit. Hierarchy rules
//! (a severe category superseding its mild form) are not applied.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Original Charlson weights with Deyo-style ICD-9-CM prefixes.
pub const DEFAULT_TABLE_CSV: &str = include_str!("../data/charlson_icd9.csv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CciCategory {
    pub name: String,
    pub weight: u32,
    pub code_prefixes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CciTable {
    categories: Vec<CciCategory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CciScore(pub u32);

impl CciScore {
    pub fn value(self) -> u32 {
        self.0
    }
}

fn normalize_code(code: &str) -> String {
    code.trim()
        .chars()
        .filter(|&c| c != '.')
        .collect::<String>()
        .to_ascii_uppercase()
}

impl CciTable {
    pub fn new(categories: Vec<CciCategory>) -> Result<Self> {
        let mut names = HashSet::new();
        for c in &categories {
            if c.name.trim().is_empty() {
                return Err(Error::Validation("empty category name".into()));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::Validation(format!("duplicate category `{}`", c.name)));
            }
            if c.weight == 0 {
                return Err(Error::Validation(format!(
                    "category `{}` has non-positive weight",
                    c.name
                )));
            }
            if c.code_prefixes.is_empty() {
                return Err(Error::Validation(format!("category `{}` has no code prefixes", c.name)));
            }
        }
        Ok(Self { categories })
    }

    /// Parse the `category,weight,prefixes` layout (prefixes `|`-separated).
    pub fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header != ["category", "weight", "prefixes"] {
            return Err(Error::Schema(format!(
                "CCI table header must be `category,weight,prefixes`, found `{}`",
                header.join(",")
            )));
        }
        let mut cats = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let weight: i64 = rec[1]
                .trim()
                .parse()
                .map_err(|_| Error::Validation(format!("row {}: weight `{}` is not an integer", i + 1, &rec[1])))?;
            if weight <= 0 {
                return Err(Error::Validation(format!(
                    "category `{}` has non-positive weight {weight}",
                    rec[0].trim()
                )));
            }
            cats.push(CciCategory {
                name: rec[0].trim().to_string(),
                weight: weight as u32,
                code_prefixes: rec[2]
                    .split('|')
                    .map(normalize_code)
                    .filter(|p| !p.is_empty())
                    .collect(),
            });
        }
        Self::new(cats)
    }

    pub fn bundled() -> Self {
        Self::parse(DEFAULT_TABLE_CSV).expect("bundled CCI table is valid")
    }

    pub fn categories(&self) -> &[CciCategory] {
        &self.categories
    }

    pub fn max_score(&self) -> u32 {
        self.categories.iter().map(|c| c.weight).sum()
    }

    /// Names of the categories matched by at least one code.
    pub fn matched_categories<S: AsRef<str>>(&self, dx_codes: &[S]) -> Vec<&str> {
        let codes: Vec<String> = dx_codes.iter().map(|c| normalize_code(c.as_ref())).collect();
        self.categories
            .iter()
            .filter(|cat| {
                codes
                    .iter()
                    .any(|code| cat.code_prefixes.iter().any(|p| code.starts_with(p.as_str())))
            })
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn score<S: AsRef<str>>(&self, dx_codes: &[S]) -> CciScore {
        let codes: Vec<String> = dx_codes.iter().map(|c| normalize_code(c.as_ref())).collect();
        let total = self
            .categories
            .iter()
            .filter(|cat| {
                codes
                    .iter()
                    .any(|code| cat.code_prefixes.iter().any(|p| code.starts_with(p.as_str())))
            })
            .map(|c| c.weight)
            .sum();
        CciScore(total)
    }
}

pub fn load_cci_table(path: &Path) -> Result<CciTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CciTable::parse(&text)
}

pub fn compute_cci<S: AsRef<str>>(dx_codes: &[S], table: &CciTable) -> CciScore {
    table.score(dx_codes)
}
