//! Per-feature histogram bins.

use alloc::vec::Vec;

/// Upper bin edges per feature. A value falls in the first bin whose edge is `>=` it;
/// values above the last edge fall in the last bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinMapper {
    uppers: Vec<Vec<f64>>,
}

impl BinMapper {
    /// With at most `max_bin` distinct values a feature gets one bin per value;
    /// otherwise edges are placed at equal-frequency quantiles.
    pub fn fit(rows: &[&[f64]], n_features: usize, max_bin: usize) -> Self {
        let max_bin = max_bin.max(2);
        let uppers = (0..n_features)
            .map(|f| {
                let mut col: Vec<f64> = rows.iter().map(|r| r[f]).collect();
                col.sort_by(f64::total_cmp);
                let mut distinct = col.clone();
                distinct.dedup();
                if distinct.len() <= max_bin {
                    return distinct;
                }
                let n = col.len();
                let mut edges: Vec<f64> = (1..max_bin).map(|b| col[b * n / max_bin - 1]).collect();
                edges.push(col[n - 1]);
                edges.dedup();
                edges
            })
            .collect();
        Self { uppers }
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.uppers[feature].len()
    }

    pub fn upper(&self, feature: usize, bin: usize) -> f64 {
        self.uppers[feature][bin]
    }

    pub fn bin(&self, feature: usize, value: f64) -> u16 {
        let u = &self.uppers[feature];
        u.partition_point(|e| *e < value).min(u.len().saturating_sub(1)) as u16
    }

    /// Row-major bin indices of `rows`.
    pub fn transform(&self, rows: &[&[f64]]) -> Vec<u16> {
        let nf = self.uppers.len();
        let mut out = Vec::with_capacity(rows.len() * nf);
        for r in rows {
            out.extend((0..nf).map(|f| self.bin(f, r[f])));
        }
        out
    }
}
