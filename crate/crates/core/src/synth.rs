//! Seeded regime-switching market generator.
//!
//! A single monthly 3-state Markov chain drives every index (optionally mirrored
//! bull/bear for selected indices). Daily log returns carry the state's monthly
//! drift spread over the month plus Gaussian noise. Driver means are shifted by
//! the state of the *following* month, scaled by `signal_strength`, so the
//! direction of month `m + 1` is partially predictable from drivers seen in month `m`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::graph::{NodeConfig, NodeSpec, Tier};
use crate::linalg::Matrix;
use crate::regime::RegimeKind;
use crate::series::{DriverKind, DriverPanel, PriceSeries, YearMonth, DEFAULT_WINDOW};

const STATES: [RegimeKind; 3] = [RegimeKind::Bull, RegimeKind::Range, RegimeKind::Bear];

fn state_index(kind: RegimeKind) -> usize {
    match kind {
        RegimeKind::Bull => 0,
        RegimeKind::Range => 1,
        RegimeKind::Bear => 2,
    }
}

fn mirror(kind: RegimeKind) -> RegimeKind {
    match kind {
        RegimeKind::Bull => RegimeKind::Bear,
        RegimeKind::Bear => RegimeKind::Bull,
        RegimeKind::Range => RegimeKind::Range,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_indices: usize,
    pub n_nodes: usize,
    pub n_drivers_per_node: usize,
    pub n_months: usize,
    pub signal_strength: f64,
    /// Row-stochastic transition matrix over (bull, range, bear).
    pub transition: [[f64; 3]; 3],
    /// Expected monthly log return per state (bull, range, bear).
    pub monthly_drift: [f64; 3],
    pub monthly_volatility: f64,
    /// Scale of the state-dependent driver mean shift at full signal.
    pub signal_amplitude: f64,
    /// Indices whose regime path is the bull/bear mirror of the common chain.
    pub flipped: Vec<usize>,
    /// The first generated month contains this date.
    pub start: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_indices: 10,
            n_nodes: 8,
            n_drivers_per_node: 3,
            n_months: 300,
            signal_strength: 1.0,
            transition: [[0.9, 0.01, 0.09], [0.05, 0.9, 0.05], [0.09, 0.01, 0.9]],
            monthly_drift: [0.06, 0.0, -0.06],
            monthly_volatility: 0.03,
            signal_amplitude: 3.0,
            flipped: Vec::new(),
            start: NaiveDate::from_ymd_opt(1990, 1, 1).expect("valid date"),
        }
    }
}

/// Symmetric transition matrix with `stay` on the diagonal.
pub fn transition_with_persistence(stay: f64) -> [[f64; 3]; 3] {
    let off = (1.0 - stay) / 2.0;
    [[stay, off, off], [off, stay, off], [off, off, stay]]
}

/// Generated market plus the ground truth behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub prices: Vec<PriceSeries>,
    pub drivers: DriverPanel,
    pub node_config: NodeConfig,
    pub months: Vec<YearMonth>,
    /// `regimes[i][m]`: hidden state of index `i` during month `m`.
    pub regimes: Vec<Vec<RegimeKind>>,
    /// Per-index sensitivity to the state drift.
    pub betas: Vec<f64>,
    pub config: SynthConfig,
}

impl SyntheticDataset {
    /// Trading days per generated month.
    pub fn days_in_month(&self, m: usize) -> usize {
        let ym = self.months[m];
        self.prices[0].dates().iter().filter(|d| YearMonth::of(**d) == ym).count()
    }

    /// Probability that month `m` closes above month `m − 1`, implied by the
    /// realized hidden state and the drift/volatility settings.
    pub fn implied_up_probability(&self, index: usize, m: usize) -> f64 {
        let cfg = &self.config;
        let days = self.days_in_month(m) as f64;
        let daily_sd = cfg.monthly_volatility / libm::sqrt(DEFAULT_WINDOW as f64);
        let mean = self.betas[index] * cfg.monthly_drift[state_index(self.regimes[index][m])];
        normal_cdf(mean / (daily_sd * libm::sqrt(days)))
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

fn business_days(start: NaiveDate, n_months: usize) -> Vec<NaiveDate> {
    let first = YearMonth::of(start);
    let stop = YearMonth::from_ordinal(first.ordinal() + n_months as i64);
    let mut out = Vec::new();
    let mut d = NaiveDate::from_ymd_opt(first.year, first.month, 1).expect("valid date");
    while YearMonth::of(d) < stop {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

fn sample_state<R: Rng>(rng: &mut R, row: &[f64; 3]) -> RegimeKind {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return STATES[i];
        }
    }
    STATES[2]
}

fn synth_node_config(cfg: &SynthConfig) -> NodeConfig {
    let k = cfg.n_nodes;
    let tiers = [Tier::LongTerm, Tier::Cyclical, Tier::ShortTerm, Tier::VeryShortTerm];
    let nodes: Vec<NodeSpec> = (0..k)
        .map(|i| NodeSpec {
            name: format!("node{i:02}"),
            tier: tiers[(i * 4) / k.max(1)],
            // the last cyclical node carries pre-embedded text vectors
            kind: if k >= 4 && i == k / 2 - 1 {
                DriverKind::Unstructured
            } else {
                DriverKind::Structured
            },
            driver_ids: (0..cfg.n_drivers_per_node).map(|j| format!("n{i:02}_d{j:02}")).collect(),
        })
        .collect();
    let mut edges = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            let (ta, tb) = (nodes[a].tier, nodes[b].tier);
            let next_tier = tb as usize == ta as usize + 1;
            if next_tier || (ta == tb && b == a + 1) {
                edges.push((nodes[a].name.clone(), nodes[b].name.clone()));
            }
        }
    }
    NodeConfig {
        node_count: k,
        nodes,
        edges,
        ..NodeConfig::default()
    }
}

/// Generates a deterministic dataset for `cfg`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    if cfg.n_months < 24 {
        bail!(Validation, "n_months must be at least 24, got {}", cfg.n_months);
    }
    if cfg.n_indices == 0 || cfg.n_nodes == 0 || cfg.n_drivers_per_node == 0 {
        bail!(Validation, "index, node and driver counts must be positive");
    }
    if !(0.0..=1.0).contains(&cfg.signal_strength) {
        bail!(Validation, "signal_strength must lie in [0, 1], got {}", cfg.signal_strength);
    }
    for row in &cfg.transition {
        let s: f64 = row.iter().sum();
        if row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            bail!(Validation, "transition rows must be probability vectors");
        }
    }
    if let Some(i) = cfg.flipped.iter().find(|i| **i >= cfg.n_indices) {
        bail!(Validation, "flipped index {i} out of range");
    }
    if !(cfg.monthly_volatility > 0.0) {
        bail!(Validation, "monthly_volatility must be positive");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dates = business_days(cfg.start, cfg.n_months);
    let months: Vec<YearMonth> = {
        let mut m: Vec<YearMonth> = dates.iter().map(|d| YearMonth::of(*d)).collect();
        m.dedup();
        m
    };
    let month_of_day: Vec<usize> = {
        let mut idx = 0;
        dates
            .iter()
            .enumerate()
            .map(|(i, d)| {
                if i > 0 && YearMonth::of(*d) != YearMonth::of(dates[i - 1]) {
                    idx += 1;
                }
                idx
            })
            .collect()
    };
    let days_in: Vec<usize> = (0..months.len())
        .map(|m| month_of_day.iter().filter(|x| **x == m).count())
        .collect();

    // Common chain with one extra month so the last month's drivers have a lead state.
    let mut chain = Vec::with_capacity(cfg.n_months + 1);
    chain.push(STATES[rng.random_range(0..3)]);
    for m in 1..=cfg.n_months {
        let prev = chain[m - 1];
        chain.push(sample_state(&mut rng, &cfg.transition[state_index(prev)]));
    }

    let n_drivers = cfg.n_nodes * cfg.n_drivers_per_node;
    let node_config = synth_node_config(cfg);
    let mut kinds = Vec::with_capacity(n_drivers);
    let mut driver_ids = Vec::with_capacity(n_drivers);
    let mut base = Vec::with_capacity(n_drivers);
    let mut shift = Vec::with_capacity(n_drivers);
    for node in &node_config.nodes {
        for id in &node.driver_ids {
            driver_ids.push(id.clone());
            kinds.push(node.kind);
            let b: f64 = rng.random_range(-1.0..1.0);
            base.push(if node.kind == DriverKind::Unstructured { 2.0 + b.abs() } else { b });
            let s: [f64; 3] = core::array::from_fn(|_| StandardNormal.sample(&mut rng));
            shift.push(s);
        }
    }

    let mut values = Matrix::zeros(dates.len(), n_drivers);
    let amp = cfg.signal_strength * cfg.signal_amplitude;
    for (r, &m) in month_of_day.iter().enumerate() {
        let lead = state_index(chain[m + 1]);
        let row = values.row_mut(r);
        for c in 0..n_drivers {
            let noise: f64 = StandardNormal.sample(&mut rng);
            row[c] = base[c] + amp * shift[c][lead] + noise;
        }
    }
    let drivers = DriverPanel::new(driver_ids, kinds, dates.clone(), values)?;

    let daily_sd = cfg.monthly_volatility / libm::sqrt(DEFAULT_WINDOW as f64);
    let mut prices = Vec::with_capacity(cfg.n_indices);
    let mut regimes = Vec::with_capacity(cfg.n_indices);
    let mut betas = Vec::with_capacity(cfg.n_indices);
    for i in 0..cfg.n_indices {
        let beta: f64 = rng.random_range(0.8..1.2);
        let flipped = cfg.flipped.contains(&i);
        let path: Vec<RegimeKind> = chain[..cfg.n_months]
            .iter()
            .map(|s| if flipped { mirror(*s) } else { *s })
            .collect();
        let mut level: f64 = 100.0 * rng.random_range(0.5..2.0);
        let mut levels = Vec::with_capacity(dates.len());
        for &m in &month_of_day {
            let drift = beta * cfg.monthly_drift[state_index(path[m])] / days_in[m] as f64;
            let eps: f64 = StandardNormal.sample(&mut rng);
            level *= libm::exp(drift + daily_sd * eps);
            levels.push(level);
        }
        prices.push(PriceSeries::new(index_name(i), dates.clone(), levels)?);
        regimes.push(path);
        betas.push(beta);
    }

    Ok(SyntheticDataset {
        prices,
        drivers,
        node_config,
        months,
        regimes,
        betas,
        config: cfg.clone(),
    })
}

pub fn index_name(i: usize) -> String {
    format!("IDX{i:03}")
}
