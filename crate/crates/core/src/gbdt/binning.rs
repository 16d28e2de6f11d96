//! Histogram binning of continuous features.
//!
//! A feature with at most `max_bins` distinct values gets one bin per value
//! and boundaries at the midpoints between consecutive values, so histogram
//! split search sees exactly the same candidate thresholds as exhaustive
//! midpoint enumeration. Wider features are cut at approximate quantiles.

/// Bin boundaries for one feature. A value `v` falls in bin `k` where `k` is
/// the number of boundaries strictly below `v`; a split after bin `k` sends
/// `v <= boundaries[k]` left.
#[derive(Debug, Clone, PartialEq)]
pub struct BinMapper {
    boundaries: Vec<f64>,
}

impl BinMapper {
    pub fn fit(values: &[f64], max_bins: usize) -> Self {
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        sorted.sort_by(f64::total_cmp);
        let mut distinct: Vec<(f64, usize)> = Vec::new();
        for v in sorted {
            match distinct.last_mut() {
                Some((last, count)) if *last == v => *count += 1,
                _ => distinct.push((v, 1)),
            }
        }
        let max_bins = max_bins.max(2);
        let boundaries = if distinct.len() <= max_bins {
            distinct.windows(2).map(|w| midpoint(w[0].0, w[1].0)).collect()
        } else {
            let total: usize = distinct.iter().map(|d| d.1).sum();
            let per_bin = total as f64 / max_bins as f64;
            let mut out = Vec::with_capacity(max_bins - 1);
            let mut acc = 0usize;
            let mut next = per_bin;
            for w in distinct.windows(2) {
                acc += w[0].1;
                if acc as f64 >= next && out.len() + 1 < max_bins {
                    out.push(midpoint(w[0].0, w[1].0));
                    while next <= acc as f64 {
                        next += per_bin;
                    }
                }
            }
            out
        };
        Self { boundaries }
    }

    pub fn n_bins(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn bin(&self, v: f64) -> u16 {
        self.boundaries.partition_point(|&b| b < v) as u16
    }

    /// Threshold of a split placed after `bin`.
    pub fn threshold(&self, bin: usize) -> f64 {
        self.boundaries[bin]
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    // guard against m == b for adjacent floats
    if m >= b {
        a
    } else {
        m
    }
}

/// Column-major binned copy of a feature matrix.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    n_rows: usize,
    mappers: Vec<BinMapper>,
    bins: Vec<Vec<u16>>,
}

impl BinnedMatrix {
    pub fn from_rows(rows: &[Vec<f64>], n_features: usize, max_bins: usize) -> Self {
        let columns: Vec<Vec<f64>> = (0..n_features).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self::from_columns(&columns, max_bins)
    }

    pub fn from_columns(columns: &[Vec<f64>], max_bins: usize) -> Self {
        let n_rows = columns.first().map_or(0, Vec::len);
        let mappers: Vec<BinMapper> = columns.iter().map(|c| BinMapper::fit(c, max_bins)).collect();
        let bins = columns
            .iter()
            .zip(&mappers)
            .map(|(c, m)| c.iter().map(|&v| m.bin(v)).collect())
            .collect();
        Self { n_rows, mappers, bins }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.mappers.len()
    }

    pub fn mapper(&self, feature: usize) -> &BinMapper {
        &self.mappers[feature]
    }

    pub fn column(&self, feature: usize) -> &[u16] {
        &self.bins[feature]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_features_bin_at_midpoints() {
        let m = BinMapper::fit(&[3.0, 1.0, 2.0, 2.0], 255);
        assert_eq!(m.boundaries(), &[1.5, 2.5]);
        assert_eq!(m.bin(1.0), 0);
        assert_eq!(m.bin(2.0), 1);
        assert_eq!(m.bin(1.5), 0);
        assert_eq!(m.bin(10.0), 2);
    }

    #[test]
    fn wide_features_respect_bin_budget() {
        let vals: Vec<f64> = (0..10_000).map(|i| (i as f64).sqrt()).collect();
        let m = BinMapper::fit(&vals, 255);
        assert!(m.n_bins() <= 255);
        assert!(m.n_bins() > 200);
        assert!(m.boundaries().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn constant_feature_has_one_bin() {
        let m = BinMapper::fit(&[4.0; 10], 255);
        assert_eq!(m.n_bins(), 1);
    }
}
