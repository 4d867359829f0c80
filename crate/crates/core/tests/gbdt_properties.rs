mod oracles;

use chrono::NaiveDate;
use indexcast_core::gbdt::*;
use indexcast_core::series::{month_boundaries, PriceSeries, YearMonth};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn example(i: usize, x: Vec<f64>, y: u8) -> LabeledExample {
    LabeledExample {
        month: YearMonth::from_ordinal(24_000 + i as i64),
        index: i % 7,
        x,
        y,
    }
}

/// Features on a coarse grid so every value gets its own bin.
fn random_set(rng: &mut ChaCha8Rng, n: usize, f: usize) -> Vec<LabeledExample> {
    let w: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
    (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..f).map(|_| f64::from(rng.random_range(-8i32..8)) / 4.0).collect();
            let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.8..0.8);
            example(i, x, u8::from(s > 0.0))
        })
        .collect()
}

fn stump_params(min_data: usize) -> BoostParams {
    BoostParams {
        learning_rate: 1.0,
        rounds: 1,
        max_leaves: 2,
        min_data_in_leaf: min_data,
        ..BoostParams::default()
    }
}

#[test]
fn first_split_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checked = 0;
    for case in 0..50 {
        let n = rng.random_range(20..=200);
        let set = random_set(&mut rng, n, 1 + case % 6);
        let ups = set.iter().filter(|e| e.y == 1).count();
        if ups == 0 || ups == n {
            continue;
        }
        let min_data = 1 + case % 5;
        let (model, _) = train_global(&set, &stump_params(min_data), &[]).unwrap();
        let p = ups as f64 / n as f64;
        let grad: Vec<f64> = set.iter().map(|e| p - f64::from(e.y)).collect();
        let hess = vec![p * (1.0 - p); n];
        let rows: Vec<Vec<f64>> = set.iter().map(|e| e.x.clone()).collect();
        let want = oracles::exhaustive_split(&rows, &grad, &hess, min_data, 1.0);
        let got = model.trees[0].splits().next();
        match (got, want) {
            (None, None) => {}
            (Some((f, t)), Some((wf, wt, wg))) => {
                if (f, t) != (wf, wt) {
                    let left: Vec<bool> = rows.iter().map(|r| r[f] <= t).collect();
                    let g = oracles::exact_gain(&grad, &hess, &left, 1.0);
                    assert!(
                        oracles::relative_error(g, wg) < 1e-9,
                        "case {case}: ({f}, {t}) gain {g} vs ({wf}, {wt}) gain {wg}"
                    );
                }
                checked += 1;
            }
            (a, b) => {
                // only acceptable when the oracle's best gain is below the split threshold
                assert!(
                    a.is_none() && b.is_some_and(|b| b.2 <= MIN_SPLIT_GAIN),
                    "case {case}: {a:?} vs {b:?}"
                );
            }
        }
    }
    assert!(checked >= 45);
}

#[test]
fn sign_of_feature_zero_is_found() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let set: Vec<LabeledExample> = (0..100)
        .map(|i| {
            let x0: f64 = rng.random_range(-3.0..3.0);
            let x1: f64 = rng.random_range(-3.0..3.0);
            example(i, vec![x0, x1], u8::from(x0 > 0.0))
        })
        .collect();
    let (model, _) = train_global(&set, &stump_params(5), &[]).unwrap();
    let (f, t) = model.trees[0].splits().next().unwrap();
    assert_eq!(f, 0);
    let below = set.iter().map(|e| e.x[0]).filter(|v| *v <= 0.0).fold(f64::MIN, f64::max);
    assert_eq!(t, below);
}

#[test]
fn separable_set_reaches_full_accuracy() {
    let set: Vec<LabeledExample> = (0..60)
        .map(|i| example(i, vec![(i % 12) as f64, (i / 12) as f64], u8::from(i % 12 >= 6)))
        .collect();
    let params = BoostParams {
        learning_rate: 0.5,
        rounds: 10,
        ..BoostParams::default()
    };
    let (model, _) = train_global(&set, &params, &[]).unwrap();
    assert!(set.iter().all(|e| model.predict(&e.x).unwrap().label == e.y));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn training_loss_never_increases(seed in 0u64..1_000_000, lr in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, 120, 4);
        prop_assume!(set.iter().any(|e| e.y == 1) && set.iter().any(|e| e.y == 0));
        let params = BoostParams { learning_rate: lr, rounds: 25, max_leaves: 8, ..BoostParams::default() };
        let (model, log) = train_global(&set, &params, &[]).unwrap();
        for w in log.rounds.windows(2) {
            prop_assert!(w[1].train_logloss <= w[0].train_logloss + 1e-12, "{:?}", w);
        }
        for t in &model.trees {
            prop_assert!(t.leaf_count() <= params.max_leaves);
            prop_assert!(t.splits().all(|(f, _)| f < 4));
        }
    }

    #[test]
    fn permutation_invariant(seed in 0u64..1_000_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, 90, 3);
        let valid = random_set(&mut rng, 30, 3);
        prop_assume!(set.iter().any(|e| e.y == 1) && set.iter().any(|e| e.y == 0));
        let params = BoostParams { rounds: 30, patience: 5, ..BoostParams::default() };
        let (a, _) = train_global(&set, &params, &valid).unwrap();
        let mut shuffled = set.clone();
        shuffled.shuffle(&mut rng);
        let mut valid2 = valid.clone();
        valid2.shuffle(&mut rng);
        let (b, _) = train_global(&shuffled, &params, &valid2).unwrap();
        prop_assert_eq!(&a, &b);
        for e in &valid {
            prop_assert_eq!(a.predict(&e.x).unwrap(), b.predict(&e.x).unwrap());
        }
    }
}

#[test]
fn zero_round_fine_tune_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let set = random_set(&mut rng, 150, 3);
    let (global, _) = train_global(
        &set,
        &BoostParams {
            rounds: 20,
            ..BoostParams::default()
        },
        &[],
    )
    .unwrap();
    let target = random_set(&mut rng, 40, 3);
    let overrides = FineTuneOverrides {
        rounds: 0,
        ..FineTuneOverrides::default()
    };
    let (tuned, log) = fine_tune(&global, &target, &overrides, &[]).unwrap();
    assert_eq!(log.kept, 0);
    let probe = random_set(&mut rng, 200, 3);
    for e in &probe {
        assert_eq!(tuned.predict(&e.x).unwrap(), global.predict(&e.x).unwrap());
    }
}

#[test]
fn fine_tuning_fixes_a_mislabelled_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pool = random_set(&mut rng, 300, 2);
    let (global, _) = train_global(
        &pool,
        &BoostParams {
            rounds: 40,
            ..BoostParams::default()
        },
        &[],
    )
    .unwrap();
    // the target's labels are the opposite of what the pool taught
    let target: Vec<LabeledExample> = random_set(&mut rng, 80, 2)
        .into_iter()
        .map(|e| {
            let y = 1 - global.predict(&e.x).unwrap().label;
            LabeledExample { y, ..e }
        })
        .collect();
    let before = global.logloss(&target);
    let (tuned, log) = fine_tune(
        &global,
        &target,
        &FineTuneOverrides {
            rounds: 30,
            ..FineTuneOverrides::default()
        },
        &[],
    )
    .unwrap();
    assert_eq!(log.kept, 30);
    assert!(tuned.logloss(&target) < before);
    assert_eq!(tuned.global_trees, global.trees.len());
    assert_eq!(&tuned.trees[..global.trees.len()], global.trees.as_slice());
    assert_eq!(tuned.params.learning_rate, global.params.learning_rate / 2.0);
}

#[test]
fn early_stopping_keeps_the_best_round() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let set = random_set(&mut rng, 200, 3);
    // validation labels unrelated to the features: the best round is early
    let valid: Vec<LabeledExample> = random_set(&mut rng, 60, 3)
        .into_iter()
        .map(|e| LabeledExample {
            y: rng.random_range(0..2),
            ..e
        })
        .collect();
    let params = BoostParams {
        rounds: 200,
        patience: 10,
        ..BoostParams::default()
    };
    let (model, log) = train_global(&set, &params, &valid).unwrap();
    assert_eq!(model.trees.len(), log.kept);
    let losses: Vec<f64> = log.rounds.iter().map(|r| r.valid_logloss.unwrap()).collect();
    let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(losses[log.kept], best);
    assert!(losses[..log.kept].iter().all(|l| *l > best));
    assert!(log.rounds.len() - 1 <= log.kept + params.patience);
}

#[test]
fn batch_equals_single_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let set = random_set(&mut rng, 120, 4);
    let (model, _) = train_global(
        &set,
        &BoostParams {
            rounds: 15,
            ..BoostParams::default()
        },
        &[],
    )
    .unwrap();
    let rows: Vec<&[f64]> = set.iter().map(|e| e.x.as_slice()).collect();
    let batch = model.predict_batch(&rows).unwrap();
    for (b, e) in batch.iter().zip(&set) {
        let single = model.predict(&e.x).unwrap();
        assert_eq!(b.prob.to_bits(), single.prob.to_bits());
        assert!(b.prob > 0.0 && b.prob < 1.0);
        assert_eq!(b.label, u8::from(b.prob >= 0.5));
    }
    assert!(model.predict(&[0.0]).is_err());
}

#[test]
fn twelve_month_label_fixture() {
    // one observation per business day, month-end levels chosen by hand
    let month_end = [100.0, 101.0, 101.0, 99.5, 99.5, 102.0, 103.0, 102.9, 110.0, 90.0, 90.0, 95.0];
    let hand = [1u8, 0, 0, 0, 1, 1, 0, 1, 0, 0, 1];
    let mut dates = Vec::new();
    let mut levels = Vec::new();
    for (m, end) in month_end.iter().enumerate() {
        for day in 1..=20u32 {
            dates.push(NaiveDate::from_ymd_opt(2010, m as u32 + 1, day).unwrap());
            levels.push(if day == 20 { *end } else { 100.0 + day as f64 });
        }
    }
    let s = PriceSeries::new("fx", dates, levels).unwrap();
    let labels = make_labels(&s, &month_boundaries(s.dates(), 5).unwrap()).unwrap();
    assert_eq!(labels.len(), 11);
    for (m, (ym, y)) in labels.iter().enumerate() {
        assert_eq!(*ym, YearMonth::new(2010, m as u32 + 1));
        assert_eq!(*y, hand[m], "month {ym}");
    }
}

#[test]
fn reference_settings_train() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let set = random_set(&mut rng, 400, 5);
    let valid = random_set(&mut rng, 100, 5);
    let params = BoostParams {
        rounds: 60,
        ..BoostParams::reference()
    };
    let (model, _) = train_global(&set, &params, &valid).unwrap();
    assert_eq!(model.params, params);
    assert!(model.trees.iter().all(|t| t.leaf_count() <= 512));
}
