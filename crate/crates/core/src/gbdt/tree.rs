//! Leaf-wise (best-first) regression tree on gradient/hessian histograms.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::bins::BinMapper;

/// Gains at or below this are not worth a split.
pub const MIN_SPLIT_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    /// Learning rate applied to every leaf value.
    pub shrinkage: f64,
}

impl Tree {
    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        self.shrinkage * self.leaf_value(x)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn splits(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            TreeNode::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GrowParams {
    pub max_leaves: usize,
    /// Negative means unlimited.
    pub max_depth: i32,
    pub min_data_in_leaf: usize,
    pub lambda_l2: f64,
}

/// Second-order split gain with L2 leaf regularization.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)
}

pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    bin: usize,
}

struct Leaf {
    node: usize,
    rows: Vec<u32>,
    depth: usize,
    grad: f64,
    hess: f64,
    best: Option<Candidate>,
}

pub struct Grower<'a> {
    pub bins: &'a BinMapper,
    /// Row-major bin indices, `n_rows × n_features`.
    pub binned: &'a [u16],
    pub n_features: usize,
    pub params: GrowParams,
}

impl Grower<'_> {
    fn best_split(&self, rows: &[u32], grad: &[f64], hess: &[f64], g_tot: f64, h_tot: f64) -> Option<Candidate> {
        let min = self.params.min_data_in_leaf.max(1);
        if rows.len() < 2 * min {
            return None;
        }
        let mut best: Option<Candidate> = None;
        let mut hist: Vec<(f64, f64, u32)> = Vec::new();
        for f in 0..self.n_features {
            let nb = self.bins.n_bins(f);
            if nb < 2 {
                continue;
            }
            hist.clear();
            hist.resize(nb, (0.0, 0.0, 0));
            for &r in rows {
                let r = r as usize;
                let slot = &mut hist[self.binned[r * self.n_features + f] as usize];
                slot.0 += grad[r];
                slot.1 += hess[r];
                slot.2 += 1;
            }
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
            for (b, &(g, h, c)) in hist[..nb - 1].iter().enumerate() {
                gl += g;
                hl += h;
                nl += c as usize;
                let nr = rows.len() - nl;
                if nl < min || nr < min {
                    continue;
                }
                let gain = split_gain(gl, hl, g_tot - gl, h_tot - hl, self.params.lambda_l2);
                if gain > MIN_SPLIT_GAIN && best.is_none_or(|c| gain > c.gain) {
                    best = Some(Candidate { gain, feature: f, bin: b });
                }
            }
        }
        best
    }

    fn depth_allows(&self, depth: usize) -> bool {
        self.params.max_depth < 0 || (depth as i64) < self.params.max_depth as i64
    }

    fn make_leaf(&self, node: usize, rows: Vec<u32>, depth: usize, grad: &[f64], hess: &[f64]) -> Leaf {
        let g: f64 = rows.iter().map(|&r| grad[r as usize]).sum();
        let h: f64 = rows.iter().map(|&r| hess[r as usize]).sum();
        let best = if self.depth_allows(depth) {
            self.best_split(&rows, grad, hess, g, h)
        } else {
            None
        };
        Leaf {
            node,
            rows,
            depth,
            grad: g,
            hess: h,
            best,
        }
    }

    /// Grows one tree on rows `0..grad.len()`.
    pub fn grow(&self, grad: &[f64], hess: &[f64], shrinkage: f64) -> Tree {
        let lambda = self.params.lambda_l2;
        let all: Vec<u32> = (0..grad.len() as u32).collect();
        let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
        let mut leaves = vec![self.make_leaf(0, all, 0, grad, hess)];
        while leaves.len() < self.params.max_leaves.max(1) {
            // leaves are kept in creation order, so ties go to the older leaf
            let mut pick: Option<(usize, Candidate)> = None;
            for (i, l) in leaves.iter().enumerate() {
                if let Some(c) = l.best {
                    if pick.is_none_or(|(_, p)| c.gain > p.gain) {
                        pick = Some((i, c));
                    }
                }
            }
            let Some((i, c)) = pick else { break };
            let leaf = leaves.remove(i);
            let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = leaf
                .rows
                .iter()
                .partition(|&&r| self.binned[r as usize * self.n_features + c.feature] as usize <= c.bin);
            let (l, r) = (nodes.len(), nodes.len() + 1);
            nodes.push(TreeNode::Leaf { value: 0.0 });
            nodes.push(TreeNode::Leaf { value: 0.0 });
            nodes[leaf.node] = TreeNode::Split {
                feature: c.feature,
                threshold: self.bins.upper(c.feature, c.bin),
                left: l,
                right: r,
            };
            leaves.push(self.make_leaf(l, left_rows, leaf.depth + 1, grad, hess));
            leaves.push(self.make_leaf(r, right_rows, leaf.depth + 1, grad, hess));
        }
        for l in &leaves {
            nodes[l.node] = TreeNode::Leaf {
                value: leaf_weight(l.grad, l.hess, lambda),
            };
        }
        Tree { nodes, shrinkage }
    }
}
