mod oracles;

use indexcast_core::features::*;
use indexcast_core::graph::{load_graph, CausalGraph, NodeConfig, DEFAULT_NODE_CONFIG};
use indexcast_core::linalg::Matrix;
use indexcast_core::regime::{assign_clusters, label_regimes, Cluster};
use indexcast_core::series::{month_boundaries, DriverKind, PriceSeries};
use indexcast_core::synth::{generate_synthetic, SynthConfig, SyntheticDataset};
use oracles::{explicit_inverse, quadratic_distance, relative_error, ridge, two_pass_covariance};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(|r| r.to_vec()).collect()
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { 0.1 } else { 0.0 })
                .collect()
        })
        .collect()
}

fn stats_of(mean: Vec<f64>, cov: &[Vec<f64>]) -> ClusterStats {
    let n = cov.len();
    ClusterStats {
        mean,
        cov: Matrix::from_vec(n, n, cov.concat()),
        count: 100,
    }
}

#[test]
fn mahalanobis_matches_explicit_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..1000 {
        let n = 1 + case % 5;
        let cov = random_spd(&mut rng, n);
        let mean: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0).collect();
        let window: Vec<f64> = (0..4 * n).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
        let got = mahalanobis_block(&Matrix::from_vec(4, n, window.clone()), &stats_of(mean.clone(), &cov)).unwrap();
        let inv = explicit_inverse(&cov);
        for (j, g) in got.iter().enumerate() {
            let want = quadratic_distance(&window[j * n..(j + 1) * n], &mean, &inv);
            assert!(relative_error(*g, want) < 1e-8, "case {case}: {g} vs {want}");
        }
    }
}

#[test]
fn explicit_two_by_two() {
    let cov: Vec<Vec<f64>> = vec![vec![2.0, 0.3], vec![0.3, 0.5]];
    let det: f64 = 2.0 * 0.5 - 0.09;
    let inv = [[0.5 / det, -0.3 / det], [-0.3 / det, 2.0 / det]];
    let (x, mu): ([f64; 2], [f64; 2]) = ([1.7, -0.4], [0.2, 0.1]);
    let d = [x[0] - mu[0], x[1] - mu[1]];
    let want = (d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1])).sqrt();
    let got = mahalanobis_block(&Matrix::from_vec(1, 2, x.to_vec()), &stats_of(mu.to_vec(), &cov)).unwrap()[0];
    assert!(relative_error(got, want) < 1e-10);
}

#[test]
fn identity_covariance_is_euclidean() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        let n = 1 + case % 5;
        let eye: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
        let mean: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let row: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let got = mahalanobis_block(&Matrix::from_vec(1, n, row.clone()), &stats_of(mean.clone(), &eye)).unwrap()[0];
        let want = row.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!((got - want).abs() <= 1e-12 * want.max(1.0));
    }
}

#[test]
fn hundred_normal_days_have_unit_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<f64>> = (0..100).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let mut acc = ClusterAccumulator::new(3);
    rows.iter().for_each(|r| acc.push(r));
    let s = acc.stats().unwrap();
    let (mean, mut cov) = two_pass_covariance(&rows);
    ridge(&mut cov, COV_REGULARIZATION);
    for i in 0..3 {
        assert!((0.7..=1.3).contains(&s.cov[(i, i)]));
        assert!((s.mean[i] - mean[i]).abs() < 1e-12);
        for j in 0..3 {
            assert!((s.cov[(i, j)] - cov[i][j]).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn streaming_covariance_matches_two_pass(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 1..40)) {
        let mut acc = ClusterAccumulator::new(3);
        rows.iter().for_each(|r| acc.push(r));
        let s = acc.stats().unwrap();
        let (mean, mut cov) = two_pass_covariance(&rows);
        ridge(&mut cov, COV_REGULARIZATION);
        for i in 0..3 {
            prop_assert!((s.mean[i] - mean[i]).abs() < 1e-9);
            for j in 0..3 {
                prop_assert!((s.cov[(i, j)] - cov[i][j]).abs() < 1e-8 * (1.0 + cov[i][j].abs()));
            }
        }
        prop_assert!(s.cov.is_symmetric(0.0));
    }

    #[test]
    fn mahalanobis_affine_invariant(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cov = random_spd(&mut rng, 3);
        let mean: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let x: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        let a: Vec<Vec<f64>> = loop {
            let a: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
            if det.abs() > 0.3 { break a; }
        };
        let b: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let map = |v: &[f64]| -> Vec<f64> { (0..3).map(|i| (0..3).map(|k| a[i][k] * v[k]).sum::<f64>() + b[i]).collect() };
        let cov2: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| (0..3).map(|k| (0..3).map(|l| a[i][k] * cov[k][l] * a[j][l]).sum::<f64>()).sum()).collect())
            .collect();
        let before = mahalanobis_block(&Matrix::from_vec(2, 3, x.clone()), &stats_of(mean.clone(), &cov)).unwrap();
        let x2: Vec<f64> = x.chunks(3).flat_map(&map).collect();
        let after = mahalanobis_block(&Matrix::from_vec(2, 3, x2), &stats_of(map(&mean), &cov2)).unwrap();
        for (p, q) in before.iter().zip(&after) {
            prop_assert!(relative_error(*p, *q) < 1e-8 || (p - q).abs() < 1e-10);
            prop_assert!(*p >= 0.0);
        }
    }

    #[test]
    fn cosine_is_bounded_and_scale_free(row in prop::collection::vec(-10.0f64..10.0, 3), mu in prop::collection::vec(0.5f64..10.0, 3), a in 0.01f64..100.0, b in 0.01f64..100.0) {
        let s1 = stats_of(mu.clone(), &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let s2 = stats_of(mu.iter().map(|m| m * b).collect(), &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let c1 = cosine_block(&Matrix::from_vec(1, 3, row.clone()), &s1).unwrap()[0];
        let c2 = cosine_block(&Matrix::from_vec(1, 3, row.iter().map(|r| r * a).collect()), &s2).unwrap()[0];
        prop_assert!((-1.0..=1.0).contains(&c1));
        prop_assert!((c1 - c2).abs() < 1e-12);
    }
}

#[test]
fn returns_fixture() {
    let levels = [100.0, 102.0, 99.96, 101.9592, 101.9592, 50.9796];
    let dates = (0..6).map(|i| chrono::NaiveDate::from_ymd_opt(2020, 1, 1 + i).unwrap()).collect();
    let s = PriceSeries::new("f", dates, levels.to_vec()).unwrap();
    let b = indexcast_core::series::MonthBoundary {
        month: indexcast_core::series::YearMonth::new(2020, 1),
        date: s.dates()[5],
        end: 5,
        window: 5,
    };
    let r = returns_block(&s, &b).unwrap();
    let want = [0.02, -0.02, 0.02, 0.0, -0.5];
    for (a, b) in r.iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
    let short = indexcast_core::series::MonthBoundary { window: 6, ..b };
    assert!(returns_block(&s, &short).is_err());
}

fn small_dataset() -> (SyntheticDataset, CausalGraph) {
    let cfg = SynthConfig {
        seed: 21,
        n_indices: 2,
        n_months: 40,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&cfg).unwrap();
    let graph = load_graph(&data.node_config).unwrap();
    (data, graph)
}

/// Rebuilds each block from scratch with the oracles and compares.
#[test]
fn blocks_match_independent_assembly() {
    let (data, graph) = small_dataset();
    for (i, s) in data.prices.iter().enumerate() {
        let segs = label_regimes(s, 0.2).unwrap();
        let panel = data.drivers.align_to(s.dates()).unwrap();
        let feats = index_features(i, s, &segs, &panel, &graph, 21).unwrap();
        let boundaries = month_boundaries(s.dates(), 21).unwrap();
        assert_eq!(feats.len(), boundaries.len() * graph.len());
        for (n, f) in feats.iter().enumerate() {
            let b = &boundaries[n / graph.len()];
            let k = n % graph.len();
            assert_eq!((f.month, f.node, f.index), (b.month, k, i));
            let spec = &graph.nodes()[k];
            let values = to_rows(&panel.select(&spec.driver_ids).unwrap());
            let assignment = assign_clusters(&segs, s.dates(), b.date).unwrap();
            let stats_for = |c: Cluster| -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
                let rows: Vec<Vec<f64>> = assignment.members(c).map(|p| values[p].clone()).collect();
                if rows.is_empty() {
                    return None;
                }
                let (m, mut cov) = two_pass_covariance(&rows);
                ridge(&mut cov, COV_REGULARIZATION);
                (c == Cluster::Cycle || rows.len() >= spec.driver_ids.len() + 2).then_some((m, cov))
            };
            let cycle = stats_for(Cluster::Cycle).unwrap();
            let mut expected = Vec::new();
            for c in Cluster::ALL {
                let (mean, cov) = stats_for(c).unwrap_or_else(|| cycle.clone());
                for row in &values[b.window_start()..=b.end] {
                    expected.push(match spec.kind {
                        DriverKind::Structured => quadratic_distance(row, &mean, &explicit_inverse(&cov)),
                        DriverKind::Unstructured => {
                            let dot: f64 = row.iter().zip(&mean).map(|(a, b)| a * b).sum();
                            let nr = row.iter().map(|a| a * a).sum::<f64>().sqrt();
                            let nm = mean.iter().map(|a| a * a).sum::<f64>().sqrt();
                            dot / (nr * nm)
                        }
                    });
                }
            }
            let lv = s.levels();
            expected.extend((b.window_start()..=b.end).map(|p| lv[p] / lv[p - 1] - 1.0));
            expected.extend((0..graph.len()).map(|j| f64::from(u8::from(graph.has_edge(k, j)))));
            assert_eq!(f.values.len(), expected.len());
            for (j, (g, w)) in f.values.iter().zip(&expected).enumerate() {
                assert!(g.is_finite());
                assert!(
                    (g - w).abs() <= 1e-8 * w.abs().max(1.0),
                    "index {i} node {k} month {} slot {j}: {g} vs {w}",
                    b.month
                );
            }
        }
    }
}

#[test]
fn sweep_equals_reference_assembly_bitwise() {
    let (data, graph) = small_dataset();
    let s = &data.prices[1];
    let segs = label_regimes(s, 0.2).unwrap();
    let panel = data.drivers.align_to(s.dates()).unwrap();
    let feats = index_features(1, s, &segs, &panel, &graph, 21).unwrap();
    for (n, b) in month_boundaries(s.dates(), 21).unwrap().iter().enumerate() {
        let assignment = assign_clusters(&segs, s.dates(), b.date).unwrap();
        for k in 0..graph.len() {
            let f = assemble_features(1, k, b, &graph, &panel, &assignment, s).unwrap();
            assert_eq!(f, feats[n * graph.len() + k]);
        }
    }
}

#[test]
fn truncation_reproduces_features() {
    let (data, graph) = small_dataset();
    let s = &data.prices[0];
    let segs = label_regimes(s, 0.2).unwrap();
    let feats = index_features(0, s, &segs, &data.drivers.align_to(s.dates()).unwrap(), &graph, 21).unwrap();
    let boundaries = month_boundaries(s.dates(), 21).unwrap();
    for (n, b) in boundaries.iter().enumerate().step_by(3) {
        let cut = s.truncated(b.date).unwrap();
        let panel = data.drivers.truncated(b.date).align_to(cut.dates()).unwrap();
        let segs = label_regimes(&cut, 0.2).unwrap();
        let again = index_features(0, &cut, &segs, &panel, &graph, 21).unwrap();
        let tail = &again[again.len() - graph.len()..];
        assert_eq!(tail, &feats[n * graph.len()..(n + 1) * graph.len()]);
    }
}

#[test]
fn default_graph_gives_125_features() {
    let graph = load_graph(&NodeConfig::parse(DEFAULT_NODE_CONFIG).unwrap()).unwrap();
    let cfg = SynthConfig {
        seed: 2,
        n_indices: 1,
        n_months: 30,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&cfg).unwrap();
    // bind the default graph's drivers to synthetic columns, cycling through them
    let cols = data.drivers.driver_ids().len();
    let ids = graph.driver_ids();
    let kinds: Vec<DriverKind> = ids
        .iter()
        .map(|id| graph.nodes().iter().find(|n| n.driver_ids.contains(id)).unwrap().kind)
        .collect();
    let mut values = Matrix::zeros(data.drivers.dates().len(), ids.len());
    for r in 0..values.rows() {
        for c in 0..ids.len() {
            values.row_mut(r)[c] = data.drivers.values()[(r, c % cols)] + c as f64;
        }
    }
    let panel = indexcast_core::series::DriverPanel::new(ids, kinds, data.drivers.dates().to_vec(), values).unwrap();
    let s = &data.prices[0];
    let segs = label_regimes(s, 0.2).unwrap();
    let feats = index_features(0, s, &segs, &panel, &graph, 21).unwrap();
    assert!(!feats.is_empty());
    for f in &feats {
        assert_eq!(f.values.len(), 125);
        assert_eq!((f.continuous().len(), f.discrete().len()), (105, 20));
        assert!(f.values.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn thin_clusters_fall_back_to_cycle_block() {
    let (data, graph) = small_dataset();
    let s = &data.prices[0];
    let segs = label_regimes(s, 0.2).unwrap();
    let feats = index_features(0, s, &segs, &data.drivers.align_to(s.dates()).unwrap(), &graph, 21).unwrap();
    let boundaries = month_boundaries(s.dates(), 21).unwrap();
    let mut fallbacks = 0;
    for f in &feats {
        let b = boundaries.iter().find(|b| b.month == f.month).unwrap();
        let a = assign_clusters(&segs, s.dates(), b.date).unwrap();
        let dim = graph.nodes()[f.node].driver_ids.len();
        for c in [Cluster::Bull, Cluster::Range, Cluster::Bear] {
            if a.count(c) < min_cluster_days(dim) {
                assert_eq!(f.block(c), f.block(Cluster::Cycle));
                fallbacks += 1;
            }
        }
        assert_eq!(f.values.len(), 5 * 21 + graph.len());
    }
    assert!(fallbacks > 0);
}
