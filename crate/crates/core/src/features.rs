//! Node feature vectors: four regime-conditioned similarity blocks, the trailing
//! daily returns of the index, and the node's adjacency row.
//!
//! Layout of one vector, for window `w` and `K` nodes:
//!
//! | range            | content                                   |
//! |------------------|-------------------------------------------|
//! | `[0, w)`         | similarity to the concluded-bull cluster  |
//! | `[w, 2w)`        | similarity to the concluded-range cluster |
//! | `[2w, 3w)`       | similarity to the concluded-bear cluster  |
//! | `[3w, 4w)`       | similarity to the whole history           |
//! | `[4w, 5w)`       | simple daily returns of the index         |
//! | `[5w, 5w + K)`   | outgoing-edge indicators (0.0 / 1.0)      |
//!
//! Structured nodes use Mahalanobis distance, unstructured nodes use cosine
//! similarity. Each entry of a similarity block compares one day of the trailing
//! window with the cluster's expanding mean and covariance.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::graph::CausalGraph;
use crate::linalg::{dot, norm, Cholesky, Matrix};
use crate::regime::{Cluster, ClusterAssignment, RegimeKind, RegimeSegment};
use crate::series::{month_boundaries, DriverKind, DriverPanel, MonthBoundary, PriceSeries, YearMonth};

/// Relative ridge added to every cluster covariance.
pub const COV_REGULARIZATION: f64 = 1e-3;

/// Shape of a node feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub window: usize,
    pub node_count: usize,
}

impl FeatureLayout {
    pub fn new(window: usize, node_count: usize) -> Self {
        Self { window, node_count }
    }

    pub fn continuous_len(&self) -> usize {
        5 * self.window
    }

    pub fn discrete_len(&self) -> usize {
        self.node_count
    }

    pub fn len(&self) -> usize {
        self.continuous_len() + self.discrete_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Feature vector of node `node` for index `index` at month-end `month`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatures {
    pub month: YearMonth,
    pub index: usize,
    pub node: usize,
    pub layout: FeatureLayout,
    pub values: Vec<f64>,
}

impl NodeFeatures {
    pub fn continuous(&self) -> &[f64] {
        &self.values[..self.layout.continuous_len()]
    }

    pub fn discrete(&self) -> &[f64] {
        &self.values[self.layout.continuous_len()..]
    }

    /// Similarity block `C^m`.
    pub fn block(&self, cluster: Cluster) -> &[f64] {
        let w = self.layout.window;
        let b = cluster as usize - 1;
        &self.values[b * w..(b + 1) * w]
    }

    pub fn returns(&self) -> &[f64] {
        let w = self.layout.window;
        &self.values[4 * w..5 * w]
    }
}

/// Mean and regularized covariance of the driver rows belonging to one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    pub count: usize,
}

/// Streaming mean / co-moment accumulator (Welford).
#[derive(Debug, Clone)]
pub struct ClusterAccumulator {
    count: usize,
    mean: Vec<f64>,
    comoment: Matrix,
    delta: Vec<f64>,
}

impl ClusterAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            comoment: Matrix::zeros(dim, dim),
            delta: vec![0.0; dim],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, row: &[f64]) {
        let n = self.mean.len();
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for i in 0..n {
            self.delta[i] = row[i] - self.mean[i];
            self.mean[i] += self.delta[i] * inv;
        }
        for i in 0..n {
            let after = row[i] - self.mean[i];
            for j in 0..=i {
                self.comoment[(i, j)] += self.delta[j] * after;
            }
        }
    }

    /// Sample statistics with the ridge applied; `None` when empty.
    pub fn stats(&self) -> Option<ClusterStats> {
        if self.count == 0 {
            return None;
        }
        let n = self.mean.len();
        let mut cov = Matrix::zeros(n, n);
        if self.count > 1 {
            let denom = (self.count - 1) as f64;
            for i in 0..n {
                for j in 0..=i {
                    let v = self.comoment[(i, j)] / denom;
                    cov[(i, j)] = v;
                    cov[(j, i)] = v;
                }
            }
        }
        regularize(&mut cov);
        Some(ClusterStats {
            mean: self.mean.clone(),
            cov,
            count: self.count,
        })
    }
}

/// Adds `ε·(trace/n)·I`, with the scale taken as 1 when the trace vanishes.
pub fn regularize(cov: &mut Matrix) {
    let n = cov.rows();
    let mut scale = cov.trace() / n as f64;
    if !(scale > 0.0) {
        scale = 1.0;
    }
    for i in 0..n {
        cov[(i, i)] += COV_REGULARIZATION * scale;
    }
}

/// Expanding statistics of `node_values` over the days of `cluster` up to `boundary`.
/// `node_values` rows are aligned with `assignment.dates`. `None` when no day contributes.
pub fn rolling_cluster_stats(
    node_values: &Matrix,
    assignment: &ClusterAssignment,
    boundary: &MonthBoundary,
    cluster: Cluster,
) -> Option<ClusterStats> {
    let mut acc = ClusterAccumulator::new(node_values.cols());
    for pos in assignment.members(cluster).take_while(|p| *p <= boundary.end) {
        acc.push(node_values.row(pos));
    }
    acc.stats()
}

fn factor(stats: &ClusterStats) -> Result<Cholesky> {
    if let Some(c) = Cholesky::factor(&stats.cov) {
        return Ok(c);
    }
    let diag: Vec<f64> = (0..stats.cov.rows()).map(|i| stats.cov[(i, i)]).collect();
    Cholesky::diagonal(&diag).ok_or_else(|| Error::Numeric("covariance not positive definite after regularization".into()))
}

/// Mahalanobis distance of every window row to the cluster mean.
pub fn mahalanobis_block(window: &Matrix, stats: &ClusterStats) -> Result<Vec<f64>> {
    let chol = factor(stats)?;
    let mut centered = vec![0.0; stats.mean.len()];
    window
        .iter_rows()
        .map(|row| {
            for (c, (x, m)) in centered.iter_mut().zip(row.iter().zip(&stats.mean)) {
                *c = x - m;
            }
            let d = libm::sqrt(chol.inverse_quadratic_form(&centered));
            if d.is_finite() {
                Ok(d)
            } else {
                Err(Error::Numeric("non-finite Mahalanobis distance".into()))
            }
        })
        .collect()
}

/// Cosine similarity of every window row to the cluster mean; zero rows map to 0.
pub fn cosine_block(window: &Matrix, stats: &ClusterStats) -> Result<Vec<f64>> {
    let mean_norm = norm(&stats.mean);
    if !(mean_norm > 0.0) || !mean_norm.is_finite() {
        bail!(Numeric, "cluster mean is zero, cosine similarity undefined");
    }
    Ok(window
        .iter_rows()
        .map(|row| {
            let rn = norm(row);
            if rn > 0.0 {
                (dot(row, &stats.mean) / (rn * mean_norm)).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect())
}

/// Simple daily returns over the window ending at `boundary`.
pub fn returns_block(series: &PriceSeries, boundary: &MonthBoundary) -> Result<Vec<f64>> {
    if boundary.end >= series.len() || boundary.end < boundary.window {
        bail!(
            Validation,
            "{}: need {} observations up to {}, have {}",
            series.index_id(),
            boundary.window + 1,
            boundary.date,
            boundary.end.min(series.len()) + 1
        );
    }
    let levels = series.levels();
    Ok((boundary.window_start()..=boundary.end)
        .map(|p| levels[p] / levels[p - 1] - 1.0)
        .collect())
}

/// Days a regime cluster needs before its own statistics replace the whole-history cluster.
pub fn min_cluster_days(dim: usize) -> usize {
    dim + 2
}

fn similarity(kind: DriverKind, window: &Matrix, stats: &ClusterStats) -> Result<Vec<f64>> {
    match kind {
        DriverKind::Structured => mahalanobis_block(window, stats),
        DriverKind::Unstructured => cosine_block(window, stats),
    }
}

fn with_context(e: Error, series: &PriceSeries, node: &str, month: YearMonth) -> Error {
    let ctx = format!("index {} node {} month {}", series.index_id(), node, month);
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{ctx}: {m}")),
        Error::Validation(m) => Error::Validation(format!("{ctx}: {m}")),
        other => other,
    }
}

/// Concatenates the blocks for one block-stat set (cluster 1..4 in order).
fn concat(
    layout: FeatureLayout,
    kind: DriverKind,
    window: &Matrix,
    stats: [&ClusterStats; 4],
    returns: &[f64],
    adjacency: &[bool],
) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(layout.len());
    for s in stats {
        values.extend(similarity(kind, window, s)?);
    }
    values.extend_from_slice(returns);
    values.extend(adjacency.iter().map(|b| if *b { 1.0 } else { 0.0 }));
    debug_assert_eq!(values.len(), layout.len());
    Ok(values)
}

/// Builds one feature vector from scratch. `panel` must be aligned to `series` dates
/// and `assignment` computed as of `boundary.date`.
pub fn assemble_features(
    index: usize,
    node: usize,
    boundary: &MonthBoundary,
    graph: &CausalGraph,
    panel: &DriverPanel,
    assignment: &ClusterAssignment,
    series: &PriceSeries,
) -> Result<NodeFeatures> {
    let spec = graph
        .nodes()
        .get(node)
        .ok_or_else(|| Error::Validation(format!("node {node} out of range")))?;
    if panel.dates() != series.dates() {
        bail!(Validation, "{}: driver panel not aligned to the price calendar", series.index_id());
    }
    let layout = FeatureLayout::new(boundary.window, graph.len());
    let values = panel.select(&spec.driver_ids)?;
    let ctx = |e| with_context(e, series, &spec.name, boundary.month);
    let cycle = rolling_cluster_stats(&values, assignment, boundary, Cluster::Cycle)
        .ok_or_else(|| ctx(Error::Validation("no history before month end".into())))?;
    let regime: Vec<Option<ClusterStats>> = [Cluster::Bull, Cluster::Range, Cluster::Bear]
        .iter()
        .map(|c| rolling_cluster_stats(&values, assignment, boundary, *c).filter(|s| s.count >= min_cluster_days(values.cols())))
        .collect();
    let pick = |i: usize| regime[i].as_ref().unwrap_or(&cycle);
    let window = values.slice_rows(boundary.window_start(), boundary.end + 1);
    let returns = returns_block(series, boundary).map_err(ctx)?;
    let adjacency = graph.adjacency_row(node)?;
    let values = concat(
        layout,
        spec.kind,
        &window,
        [pick(0), pick(1), pick(2), &cycle],
        &returns,
        &adjacency.0,
    )
    .map_err(ctx)?;
    Ok(NodeFeatures {
        month: boundary.month,
        index,
        node,
        layout,
        values,
    })
}

/// Features for every month-end and node of one index, produced by a single
/// chronological sweep. Matches [`assemble_features`] bit for bit.
/// Output is ordered by month, then node.
pub fn index_features(
    index: usize,
    series: &PriceSeries,
    segments: &[RegimeSegment],
    panel: &DriverPanel,
    graph: &CausalGraph,
    window: usize,
) -> Result<Vec<NodeFeatures>> {
    if panel.dates() != series.dates() {
        bail!(Validation, "{}: driver panel not aligned to the price calendar", series.index_id());
    }
    let boundaries = month_boundaries(series.dates(), window)?;
    let layout = FeatureLayout::new(window, graph.len());
    let returns: Vec<Vec<f64>> = boundaries.iter().map(|b| returns_block(series, b)).collect::<Result<_>>()?;
    let pieces: Vec<(usize, usize, RegimeKind)> = segments.iter().flat_map(RegimeSegment::piece_spans).collect();
    let mut per_node: Vec<Vec<NodeFeatures>> = Vec::with_capacity(graph.len());
    for (k, spec) in graph.nodes().iter().enumerate() {
        let values = panel.select(&spec.driver_ids)?;
        let adjacency = graph.adjacency_row(k)?;
        let dim = values.cols();
        let mut accs: [ClusterAccumulator; 4] = core::array::from_fn(|_| ClusterAccumulator::new(dim));
        let (mut next_day, mut next_piece) = (0usize, 0usize);
        let mut out = Vec::with_capacity(boundaries.len());
        for (b, ret) in boundaries.iter().zip(&returns) {
            while let Some(&(start, end, kind)) = pieces.get(next_piece).filter(|p| p.1 < b.end) {
                let acc = &mut accs[Cluster::of(kind) as usize - 1];
                for pos in start..=end {
                    acc.push(values.row(pos));
                }
                next_piece += 1;
            }
            while next_day <= b.end {
                accs[3].push(values.row(next_day));
                next_day += 1;
            }
            let ctx = |e| with_context(e, series, &spec.name, b.month);
            let cycle = accs[3].stats().ok_or_else(|| ctx(Error::Validation("no history".into())))?;
            let regime: Vec<Option<ClusterStats>> = accs[..3]
                .iter()
                .map(|a| if a.count() >= min_cluster_days(dim) { a.stats() } else { None })
                .collect();
            let pick = |i: usize| regime[i].as_ref().unwrap_or(&cycle);
            let window = values.slice_rows(b.window_start(), b.end + 1);
            let v = concat(layout, spec.kind, &window, [pick(0), pick(1), pick(2), &cycle], ret, &adjacency.0).map_err(ctx)?;
            out.push(NodeFeatures {
                month: b.month,
                index,
                node: k,
                layout,
                values: v,
            });
        }
        per_node.push(out);
    }
    let months = boundaries.len();
    let mut features = Vec::with_capacity(months * graph.len());
    let mut iters: Vec<_> = per_node.into_iter().map(|v| v.into_iter()).collect();
    for _ in 0..months {
        for it in iters.iter_mut() {
            features.extend(it.next());
        }
    }
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: Vec<f64>, cov: Matrix) -> ClusterStats {
        ClusterStats { mean, cov, count: 10 }
    }

    #[test]
    fn single_day_gives_ridge_only() {
        let mut acc = ClusterAccumulator::new(2);
        acc.push(&[1.0, 2.0]);
        let s = acc.stats().unwrap();
        assert_eq!(s.mean, vec![1.0, 2.0]);
        assert_eq!(s.cov.as_slice(), &[COV_REGULARIZATION, 0.0, 0.0, COV_REGULARIZATION]);
        acc.push(&[1.0, 2.0]);
        let s = acc.stats().unwrap();
        assert_eq!(s.mean, vec![1.0, 2.0]);
        assert_eq!(s.cov.as_slice(), &[COV_REGULARIZATION, 0.0, 0.0, COV_REGULARIZATION]);
        assert!(ClusterAccumulator::new(2).stats().is_none());
    }

    #[test]
    fn mahalanobis_euclidean_case() {
        let s = stats(vec![0.0, 0.0], Matrix::identity(2));
        let w = Matrix::from_vec(2, 2, vec![3.0, 4.0, 0.0, 0.0]);
        assert_eq!(mahalanobis_block(&w, &s).unwrap(), vec![5.0, 0.0]);
    }

    #[test]
    fn mahalanobis_at_mean_is_zero() {
        let s = stats(
            vec![1.5, -2.0, 0.3],
            Matrix::from_vec(3, 3, vec![2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 0.5]),
        );
        let w = Matrix::from_vec(2, 3, vec![1.5, -2.0, 0.3, 1.5, -2.0, 0.3]);
        assert_eq!(mahalanobis_block(&w, &s).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn mahalanobis_falls_back_to_diagonal() {
        // Indefinite covariance: Cholesky fails, diagonal (2, 2) is used.
        let s = stats(vec![0.0, 0.0], Matrix::from_vec(2, 2, vec![2.0, 3.0, 3.0, 2.0]));
        let w = Matrix::from_vec(1, 2, vec![2.0, 0.0]);
        let d = mahalanobis_block(&w, &s).unwrap();
        assert!((d[0] - 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cosine_cases() {
        let s = stats(vec![1.0, 2.0], Matrix::identity(2));
        let w = Matrix::from_vec(4, 2, vec![2.0, 4.0, -2.0, 1.0, -1.0, -2.0, 0.0, 0.0]);
        let c = cosine_block(&w, &s).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-15);
        assert!(c[1].abs() < 1e-15);
        assert!((c[2] + 1.0).abs() < 1e-15);
        assert_eq!(c[3], 0.0);
        let zero = stats(vec![0.0, 0.0], Matrix::identity(2));
        assert!(matches!(cosine_block(&w, &zero), Err(Error::Numeric(_))));
    }

    #[test]
    fn returns_of_constant_and_doubling() {
        let start = chrono::NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        let dates: Vec<_> = (0..5).map(|i| start + chrono::Days::new(i)).collect();
        let s = PriceSeries::new("a", dates.clone(), vec![10.0; 5]).unwrap();
        let b = MonthBoundary {
            month: YearMonth::of(dates[4]),
            date: dates[4],
            end: 4,
            window: 3,
        };
        assert_eq!(returns_block(&s, &b).unwrap(), vec![0.0; 3]);
        let s = PriceSeries::new("a", dates.clone(), vec![10.0, 10.0, 10.0, 10.0, 20.0]).unwrap();
        assert_eq!(returns_block(&s, &b).unwrap(), vec![0.0, 0.0, 1.0]);
        let short = MonthBoundary { end: 2, ..b };
        assert!(returns_block(&s, &short).is_err());
    }
}
