//! The a-priori causal graph: named latent-context nodes, their raw-driver
//! bindings, and the directed edges whose adjacency rows become features.
//!
//! # Node-config grammar
//!
//! A node config is UTF-8 text processed line by line.
//!
//! * `#` starts a comment that runs to the end of the line; blank lines are ignored.
//! * Tokens are separated by ASCII whitespace.
//! * `<key> = <value>` sets a scalar. Keys: `node_count` (integer, default 20),
//!   `window` (integer, default 21), `lambda` (real in (0,1), default 0.20),
//!   `embedding_dim` (integer, default 10). Each key may appear at most once.
//! * `node <name> <tier> <kind> <driver>[,<driver>...]` declares a node.
//!   `<tier>` is one of `long`, `cyclical`, `short`, `very_short`;
//!   `<kind>` is `structured` or `unstructured`. Driver ids are comma separated
//!   without spaces. Nodes are ordered as declared.
//! * `edge <from> <to>` declares a directed edge between declared node names.
//!   Edges may precede or follow the node lines they mention.
//!
//! Names and driver ids use `[A-Za-z0-9_.-]`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::regime::DEFAULT_LAMBDA;
use crate::series::{DriverKind, DEFAULT_WINDOW};

pub const DEFAULT_NODE_COUNT: usize = 20;
pub const DEFAULT_EMBEDDING_DIM: usize = 10;

/// Shipped 20-node, 147-edge default graph.
pub const DEFAULT_NODE_CONFIG: &str = include_str!("../assets/default_nodes.cfg");

/// Horizon of a latent-context node; ordered from long to very short term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    LongTerm,
    Cyclical,
    ShortTerm,
    VeryShortTerm,
}

impl Tier {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "long" => Some(Tier::LongTerm),
            "cyclical" => Some(Tier::Cyclical),
            "short" => Some(Tier::ShortTerm),
            "very_short" => Some(Tier::VeryShortTerm),
            _ => None,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Tier::LongTerm => "long",
            Tier::Cyclical => "cyclical",
            Tier::ShortTerm => "short",
            Tier::VeryShortTerm => "very_short",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub tier: Tier,
    pub kind: DriverKind,
    pub driver_ids: Vec<String>,
}

/// Parsed node config, prior to graph validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_count: usize,
    pub window: usize,
    pub lambda: f64,
    pub embedding_dim: usize,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<(String, String)>,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            node_count: DEFAULT_NODE_COUNT,
            window: DEFAULT_WINDOW,
            lambda: DEFAULT_LAMBDA,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }
}

fn valid_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

impl NodeConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = NodeConfig::default();
        let mut seen_keys = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| Error::Parse { line: line_no, message };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
            match tokens[0] {
                "node" => {
                    let [_, name, tier, kind, drivers] = tokens[..] else {
                        return Err(err("expected `node <name> <tier> <kind> <drivers>`".into()));
                    };
                    if !valid_ident(name) {
                        return Err(err(format!("invalid node name {name:?}")));
                    }
                    let tier = Tier::parse(tier).ok_or_else(|| err(format!("unknown tier {tier:?}")))?;
                    let kind = match kind {
                        "structured" => DriverKind::Structured,
                        "unstructured" => DriverKind::Unstructured,
                        other => return Err(err(format!("unknown kind {other:?}"))),
                    };
                    let driver_ids: Vec<String> = drivers.split(',').map(str::to_string).collect();
                    if let Some(bad) = driver_ids.iter().find(|d| !valid_ident(d)) {
                        return Err(err(format!("invalid driver id {bad:?}")));
                    }
                    cfg.nodes.push(NodeSpec {
                        name: name.into(),
                        tier,
                        kind,
                        driver_ids,
                    });
                }
                "edge" => {
                    let [_, from, to] = tokens[..] else {
                        return Err(err("expected `edge <from> <to>`".into()));
                    };
                    cfg.edges.push((from.into(), to.into()));
                }
                key => {
                    let [_, "=", value] = tokens[..] else {
                        return Err(err(format!("unrecognised line {line:?}")));
                    };
                    if !seen_keys.insert(key.to_string()) {
                        return Err(err(format!("key {key:?} set twice")));
                    }
                    let int = |v: &str| v.parse::<usize>().map_err(|_| err(format!("{key} expects an integer, got {v:?}")));
                    match key {
                        "node_count" => cfg.node_count = int(value)?,
                        "window" => cfg.window = int(value)?,
                        "embedding_dim" => cfg.embedding_dim = int(value)?,
                        "lambda" => cfg.lambda = value.parse().map_err(|_| err(format!("lambda expects a real, got {value:?}")))?,
                        other => return Err(err(format!("unknown key {other:?}"))),
                    }
                }
            }
        }
        Ok(cfg)
    }

    /// Renders the config in the grammar accepted by [`NodeConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "node_count = {}", self.node_count);
        let _ = writeln!(s, "window = {}", self.window);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "embedding_dim = {}", self.embedding_dim);
        s.push('\n');
        for n in &self.nodes {
            let _ = writeln!(s, "node {} {} {} {}", n.name, n.tier.keyword(), n.kind, n.driver_ids.join(","));
        }
        s.push('\n');
        for (a, b) in &self.edges {
            let _ = writeln!(s, "edge {a} {b}");
        }
        s
    }
}

/// Outgoing-edge indicator of one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyRow(pub Vec<bool>);

impl AdjacencyRow {
    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }
}

/// Validated graph with exactly `node_count` nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    nodes: Vec<NodeSpec>,
    /// `adjacency[k * K + j]` is true iff `k -> j`.
    adjacency: Vec<bool>,
    edge_count: usize,
}

impl CausalGraph {
    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        let k = self.nodes.len();
        from < k && to < k && self.adjacency[from * k + to]
    }

    pub fn adjacency_row(&self, k: usize) -> Result<AdjacencyRow> {
        let n = self.nodes.len();
        if k >= n {
            bail!(Validation, "node index {k} out of range for {n} nodes");
        }
        Ok(AdjacencyRow(self.adjacency[k * n..(k + 1) * n].to_vec()))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.nodes.len();
        (0..n * n).filter(|&i| self.adjacency[i]).map(move |i| (i / n, i % n))
    }

    /// True when every edge goes from an equal-or-earlier tier to an equal-or-later one.
    pub fn respects_tier_order(&self) -> bool {
        self.edges().all(|(a, b)| self.nodes[a].tier <= self.nodes[b].tier)
    }

    /// Every driver id used by any node, in node order, without duplicates.
    pub fn driver_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for id in self.nodes.iter().flat_map(|n| &n.driver_ids) {
            if seen.insert(id.as_str()) {
                out.push(id.clone());
            }
        }
        out
    }

    /// Whitespace-separated `from to` pairs, one edge per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for (a, b) in self.edges() {
            let _ = writeln!(s, "{} {}", self.nodes[a].name, self.nodes[b].name);
        }
        s
    }
}

impl fmt::Display for CausalGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "graph with {} nodes and {} edges", self.nodes.len(), self.edge_count)
    }
}

/// Validates a parsed config into a graph.
pub fn load_graph(config: &NodeConfig) -> Result<CausalGraph> {
    let k = config.node_count;
    if config.nodes.len() != k {
        bail!(Validation, "expected {k} nodes, config declares {}", config.nodes.len());
    }
    let mut names = BTreeSet::new();
    for n in &config.nodes {
        if !names.insert(n.name.as_str()) {
            bail!(Validation, "duplicate node name {:?}", n.name);
        }
        if n.driver_ids.is_empty() {
            bail!(Validation, "node {:?} binds no drivers", n.name);
        }
    }
    let index = |name: &str| config.nodes.iter().position(|n| n.name == name);
    let mut adjacency = vec![false; k * k];
    let mut edge_count = 0;
    for (from, to) in &config.edges {
        let a = index(from).ok_or_else(|| Error::Validation(format!("edge references undeclared node {from:?}")))?;
        let b = index(to).ok_or_else(|| Error::Validation(format!("edge references undeclared node {to:?}")))?;
        if a == b {
            bail!(Validation, "self-edge on node {from:?}");
        }
        if core::mem::replace(&mut adjacency[a * k + b], true) {
            bail!(Validation, "duplicate edge {from} -> {to}");
        }
        edge_count += 1;
    }
    Ok(CausalGraph {
        nodes: config.nodes.clone(),
        adjacency,
        edge_count,
    })
}
