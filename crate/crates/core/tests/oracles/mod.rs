//! Brute-force reference implementations, written independently of the library
//! algorithms they check.

#![allow(dead_code)]

use indexcast_core::regime::RegimeKind;

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn explicit_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, p);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn quadratic_distance(x: &[f64], mu: &[f64], inv: &[Vec<f64>]) -> f64 {
    let d: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let mut q = 0.0;
    for i in 0..d.len() {
        for j in 0..d.len() {
            q += d[i] * inv[i][j] * d[j];
        }
    }
    q.max(0.0).sqrt()
}

/// Two-pass mean and sample covariance (denominator count − 1, zero for one row).
pub fn two_pass_covariance(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows[0].len();
    let c = rows.len() as f64;
    let mean: Vec<f64> = (0..n).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / c).collect();
    let mut cov = vec![vec![0.0; n]; n];
    if rows.len() > 1 {
        for i in 0..n {
            for j in 0..n {
                cov[i][j] = rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (c - 1.0);
            }
        }
    }
    (mean, cov)
}

/// Adds the scale-aware ridge used by the feature engine.
pub fn ridge(cov: &mut [Vec<f64>], eps: f64) {
    let n = cov.len();
    let tr: f64 = (0..n).map(|i| cov[i][i]).sum();
    let scale = if tr > 0.0 { tr / n as f64 } else { 1.0 };
    for (i, row) in cov.iter_mut().enumerate() {
        row[i] += eps * scale;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSegment {
    pub start: usize,
    pub end: usize,
    pub kind: RegimeKind,
    pub anchor: f64,
}

fn one_sided(levels: &[f64], anchor: f64) -> bool {
    levels.iter().all(|x| *x >= anchor) || levels.iter().all(|x| *x <= anchor)
}

/// Segmentation by exhaustive search: from each anchor `t0`, the piece ends at the
/// largest `th` for which every level in `[t0, th]` stays on one side of the anchor;
/// its kind follows the threshold set-definition. Adjacent range pieces merge.
pub fn exhaustive_segments(levels: &[f64], lambda: f64) -> Vec<OracleSegment> {
    let mut out: Vec<OracleSegment> = Vec::new();
    let mut t0 = 0;
    while t0 < levels.len() {
        let anchor = levels[t0];
        let th = (t0..levels.len()).filter(|&th| one_sided(&levels[t0..=th], anchor)).max().unwrap();
        let piece = &levels[t0..=th];
        let hi = piece.iter().cloned().fold(f64::MIN, f64::max);
        let lo = piece.iter().cloned().fold(f64::MAX, f64::min);
        let up = piece.iter().all(|x| *x >= anchor);
        let down = piece.iter().all(|x| *x <= anchor);
        let kind = if up && hi >= (1.0 + lambda) * anchor {
            RegimeKind::Bull
        } else if down && lo <= (1.0 - lambda) * anchor {
            RegimeKind::Bear
        } else {
            RegimeKind::Range
        };
        match out.last_mut() {
            Some(last) if last.kind == RegimeKind::Range && kind == RegimeKind::Range => last.end = th,
            _ => out.push(OracleSegment {
                start: t0,
                end: th,
                kind,
                anchor,
            }),
        }
        t0 = th + 1;
    }
    out
}

/// Second-order gain of sending `left` rows one way and the rest the other.
pub fn exact_gain(grad: &[f64], hess: &[f64], left: &[bool], lambda: f64) -> f64 {
    let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..grad.len() {
        if left[i] {
            gl += grad[i];
            hl += hess[i];
        } else {
            gr += grad[i];
            hr += hess[i];
        }
    }
    let s = |g: f64, h: f64| g * g / (h + lambda);
    s(gl, hl) + s(gr, hr) - s(gl + gr, hl + hr)
}

/// Best `(feature, threshold, gain)` over every feature and every distinct value
/// as threshold (`x <= threshold` goes left), respecting a minimum leaf size.
pub fn exhaustive_split(rows: &[Vec<f64>], grad: &[f64], hess: &[f64], min_leaf: usize, lambda: f64) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..rows[0].len() {
        let mut values: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for &t in &values {
            let left: Vec<bool> = rows.iter().map(|r| r[f] <= t).collect();
            let nl = left.iter().filter(|b| **b).count();
            if nl < min_leaf || rows.len() - nl < min_leaf {
                continue;
            }
            let g = exact_gain(grad, hess, &left, lambda);
            if best.is_none_or(|b| g > b.2) {
                best = Some((f, t, g));
            }
        }
    }
    best
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
