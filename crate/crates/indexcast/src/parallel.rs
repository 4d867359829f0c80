//! Thread-pool execution. Results are collected in index order, so output does
//! not depend on the number of threads.

use indexcast_core::backtest::features_for_index;
use indexcast_core::features::NodeFeatures;
use indexcast_core::graph::CausalGraph;
use indexcast_core::regime::{label_regimes, RegimeSegment};
use indexcast_core::series::{DriverPanel, PriceSeries};
use indexcast_core::vae::{ShardExecutor, ShardOutput};
use indexcast_core::Result;
use rayon::prelude::*;

/// Runs gradient shards on the rayon pool.
pub struct Rayon;

impl ShardExecutor for Rayon {
    fn run(&self, shards: usize, job: &(dyn Fn(usize) -> ShardOutput + Sync)) -> Vec<ShardOutput> {
        (0..shards).into_par_iter().map(job).collect()
    }
}

pub fn label_all(prices: &[PriceSeries], lambda: f64) -> Result<Vec<Vec<RegimeSegment>>> {
    prices.par_iter().map(|s| label_regimes(s, lambda)).collect()
}

/// Features of every index, ordered by index, then month, then node.
pub fn features_all(
    prices: &[PriceSeries],
    segments: &[Vec<RegimeSegment>],
    drivers: &DriverPanel,
    graph: &CausalGraph,
    window: usize,
) -> Result<Vec<NodeFeatures>> {
    let per_index: Vec<Vec<NodeFeatures>> = prices
        .par_iter()
        .zip(segments)
        .enumerate()
        .map(|(i, (s, seg))| features_for_index(i, s, seg, drivers, graph, window))
        .collect::<Result<_>>()?;
    Ok(per_index.into_iter().flatten().collect())
}
