//! Histogram gradient-boosted trees with logistic loss: a global model trained
//! on the pooled examples of every index, then continued on one target index.

mod bins;
mod tree;

pub use bins::BinMapper;
pub use tree::{leaf_weight, split_gain, GrowParams, Grower, Tree, TreeNode, MIN_SPLIT_GAIN};

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::series::{MonthBoundary, PriceSeries, YearMonth};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub learning_rate: f64,
    pub max_leaves: usize,
    /// `-1` for unlimited depth.
    pub max_depth: i32,
    pub max_bin: usize,
    pub min_data_in_leaf: usize,
    pub lambda_l2: f64,
    /// Upper bound on boosting rounds.
    pub rounds: usize,
    /// Rounds without validation improvement before stopping.
    pub patience: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_leaves: 31,
            max_depth: -1,
            max_bin: 255,
            min_data_in_leaf: 5,
            lambda_l2: 1.0,
            rounds: 500,
            patience: 50,
        }
    }
}

impl BoostParams {
    /// Large-tree settings: learning rate 0.00475, unlimited depth,
    /// 512 bins and 512 leaves.
    pub fn reference() -> Self {
        Self {
            learning_rate: 0.00475,
            max_leaves: 512,
            max_depth: -1,
            max_bin: 512,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            bail!(Validation, "learning_rate must lie in (0, 1], got {}", self.learning_rate);
        }
        if self.max_leaves < 2 || self.max_bin < 2 || self.max_bin > u16::MAX as usize {
            bail!(Validation, "max_leaves must be >= 2 and max_bin in [2, 65535]");
        }
        if !(self.lambda_l2 >= 0.0) {
            bail!(Validation, "lambda_l2 must be non-negative");
        }
        Ok(())
    }
}

/// Settings that replace the global model's for target fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneOverrides {
    /// Defaults to half of the global learning rate.
    pub learning_rate: Option<f64>,
    pub max_leaves: usize,
    pub patience: usize,
    pub rounds: usize,
}

impl Default for FineTuneOverrides {
    fn default() -> Self {
        Self {
            learning_rate: None,
            max_leaves: 31,
            patience: 10,
            rounds: 200,
        }
    }
}

/// Concatenated node embeddings of one index at one month, with next-month direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub month: YearMonth,
    pub index: usize,
    pub x: Vec<f64>,
    /// 1 if the next month closed strictly higher.
    pub y: u8,
}

/// `(t, y)` pairs where `y = 1` iff the month-end level of `t + 1` exceeds that of `t`.
/// The last month, and any month whose successor is missing, has no label.
pub fn make_labels(series: &PriceSeries, boundaries: &[MonthBoundary]) -> Result<Vec<(YearMonth, u8)>> {
    let levels = series.levels();
    if let Some(b) = boundaries.iter().find(|b| b.end >= levels.len() || series.dates()[b.end] != b.date) {
        bail!(Validation, "{}: boundary {} outside series", series.index_id(), b.month);
    }
    Ok(boundaries
        .windows(2)
        .filter(|w| w[1].month == w[0].month.succ())
        .map(|w| (w[0].month, u8::from(levels[w[1].end] > levels[w[0].end])))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub prob: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    /// Number of trees added so far in this training call.
    pub round: usize,
    pub train_logloss: f64,
    pub valid_logloss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    /// Entry 0 is the state before any tree of this call was added.
    pub rounds: Vec<RoundLog>,
    /// Trees kept from this call.
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub version: u32,
    pub n_features: usize,
    /// Log-odds of the training prior.
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Parameters of the most recent training call.
    pub params: BoostParams,
    /// Trees contributed by the global (pre-fine-tuning) stage.
    pub global_trees: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

fn logloss(y: u8, raw: f64) -> f64 {
    let p = sigmoid(raw).clamp(1e-15, 1.0 - 1e-15);
    if y == 1 {
        -libm::log(p)
    } else {
        -libm::log(1.0 - p)
    }
}

fn mean_logloss(ys: &[u8], raw: &[f64]) -> f64 {
    ys.iter().zip(raw).map(|(y, r)| logloss(*y, *r)).sum::<f64>() / ys.len().max(1) as f64
}

impl BoostedModel {
    pub fn check_version(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            bail!(
                Validation,
                "model version {} does not match supported version {MODEL_VERSION}",
                self.version
            );
        }
        Ok(())
    }

    /// Empty ensemble predicting `prior` for every input.
    pub fn constant(n_features: usize, prior: f64, params: BoostParams) -> Self {
        let p = prior.clamp(1e-12, 1.0 - 1e-12);
        Self {
            version: MODEL_VERSION,
            n_features,
            base_score: libm::log(p / (1.0 - p)),
            trees: Vec::new(),
            params,
            global_trees: 0,
        }
    }

    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.output(x)).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.n_features {
            bail!(Validation, "expected {} features, got {}", self.n_features, x.len());
        }
        let prob = sigmoid(self.raw_score(x));
        Ok(Prediction {
            prob,
            label: u8::from(prob >= 0.5),
        })
    }

    pub fn predict_batch(&self, xs: &[&[f64]]) -> Result<Vec<Prediction>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Mean log-loss of the model on `examples`.
    pub fn logloss(&self, examples: &[LabeledExample]) -> f64 {
        let raw: Vec<f64> = examples.iter().map(|e| self.raw_score(&e.x)).collect();
        let ys: Vec<u8> = examples.iter().map(|e| e.y).collect();
        mean_logloss(&ys, &raw)
    }
}

fn check_examples(examples: &[LabeledExample], n_features: usize, what: &str) -> Result<()> {
    for e in examples {
        if e.x.len() != n_features {
            bail!(
                Validation,
                "{what}: example for month {} has {} features, expected {n_features}",
                e.month,
                e.x.len()
            );
        }
        if e.y > 1 {
            bail!(Validation, "{what}: label {} is not 0/1", e.y);
        }
        if let Some(v) = e.x.iter().find(|v| !v.is_finite()) {
            bail!(Validation, "{what}: non-finite feature {v} in month {} index {}", e.month, e.index);
        }
    }
    Ok(())
}

fn require_both_classes(examples: &[LabeledExample], what: &str) -> Result<()> {
    let ups = examples.iter().filter(|e| e.y == 1).count();
    if ups == 0 || ups == examples.len() {
        bail!(Validation, "{what}: training examples contain a single class");
    }
    Ok(())
}

fn compare_examples(a: &LabeledExample, b: &LabeledExample) -> Ordering {
    a.x.iter()
        .zip(&b.x)
        .map(|(p, q)| p.total_cmp(q))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then(a.y.cmp(&b.y))
}

/// Training is done on a canonical ordering so the fitted model does not
/// depend on the order examples were supplied in.
fn canonical(examples: &[LabeledExample]) -> Vec<&LabeledExample> {
    let mut v: Vec<&LabeledExample> = examples.iter().collect();
    v.sort_by(|a, b| compare_examples(a, b));
    v
}

/// Appends up to `params.rounds` trees fitted on `train`, stopping once
/// validation log-loss has not improved for `params.patience` rounds, then
/// keeps the trees up to the first validation minimum.
fn boost(model: &mut BoostedModel, train: &[LabeledExample], valid: &[LabeledExample], params: &BoostParams) -> TrainLog {
    let train = canonical(train);
    let valid = canonical(valid);
    let rows: Vec<&[f64]> = train.iter().map(|e| e.x.as_slice()).collect();
    let ys: Vec<u8> = train.iter().map(|e| e.y).collect();
    let valid_ys: Vec<u8> = valid.iter().map(|e| e.y).collect();
    let bins = BinMapper::fit(&rows, model.n_features, params.max_bin);
    let binned = bins.transform(&rows);
    let grower = Grower {
        bins: &bins,
        binned: &binned,
        n_features: model.n_features,
        params: GrowParams {
            max_leaves: params.max_leaves,
            max_depth: params.max_depth,
            min_data_in_leaf: params.min_data_in_leaf,
            lambda_l2: params.lambda_l2,
        },
    };
    let mut raw: Vec<f64> = rows.iter().map(|x| model.raw_score(x)).collect();
    let mut valid_raw: Vec<f64> = valid.iter().map(|e| model.raw_score(&e.x)).collect();
    let has_valid = !valid.is_empty();
    let valid_loss = |r: &[f64]| has_valid.then(|| mean_logloss(&valid_ys, r));

    let start = model.trees.len();
    let mut log = TrainLog::default();
    log.rounds.push(RoundLog {
        round: 0,
        train_logloss: mean_logloss(&ys, &raw),
        valid_logloss: valid_loss(&valid_raw),
    });
    let mut best = (log.rounds[0].valid_logloss.unwrap_or(f64::INFINITY), 0usize);
    let mut grad = alloc::vec![0.0; rows.len()];
    let mut hess = alloc::vec![0.0; rows.len()];
    for round in 1..=params.rounds {
        for i in 0..rows.len() {
            let p = sigmoid(raw[i]);
            grad[i] = p - f64::from(ys[i]);
            hess[i] = (p * (1.0 - p)).max(1e-16);
        }
        let tree = grower.grow(&grad, &hess, params.learning_rate);
        for (r, x) in raw.iter_mut().zip(&rows) {
            *r += tree.output(x);
        }
        for (r, e) in valid_raw.iter_mut().zip(&valid) {
            *r += tree.output(&e.x);
        }
        model.trees.push(tree);
        let entry = RoundLog {
            round,
            train_logloss: mean_logloss(&ys, &raw),
            valid_logloss: valid_loss(&valid_raw),
        };
        log.rounds.push(entry);
        if let Some(v) = log.rounds[round].valid_logloss {
            if v < best.0 {
                best = (v, round);
            } else if round - best.1 >= params.patience {
                break;
            }
        }
    }
    let kept = if has_valid { best.1 } else { model.trees.len() - start };
    model.trees.truncate(start + kept);
    log.kept = kept;
    log
}

/// Pre-trains one classifier on the pooled examples of every index.
pub fn train_global(examples: &[LabeledExample], params: &BoostParams, validation: &[LabeledExample]) -> Result<(BoostedModel, TrainLog)> {
    params.validate()?;
    let Some(first) = examples.first() else {
        bail!(Validation, "no training examples");
    };
    let n_features = first.x.len();
    check_examples(examples, n_features, "training")?;
    check_examples(validation, n_features, "validation")?;
    require_both_classes(examples, "training")?;
    let prior = examples.iter().filter(|e| e.y == 1).count() as f64 / examples.len() as f64;
    let mut model = BoostedModel::constant(n_features, prior, params.clone());
    let log = boost(&mut model, examples, validation, params);
    model.global_trees = model.trees.len();
    Ok((model, log))
}

/// Continues boosting `global` on one target's examples with the overridden settings.
/// The global trees and base score are kept unchanged.
pub fn fine_tune(
    global: &BoostedModel,
    target: &[LabeledExample],
    overrides: &FineTuneOverrides,
    validation: &[LabeledExample],
) -> Result<(BoostedModel, TrainLog)> {
    let params = BoostParams {
        learning_rate: overrides.learning_rate.unwrap_or(global.params.learning_rate / 2.0),
        max_leaves: overrides.max_leaves,
        patience: overrides.patience,
        rounds: overrides.rounds,
        ..global.params.clone()
    };
    params.validate()?;
    check_examples(target, global.n_features, "target")?;
    check_examples(validation, global.n_features, "target validation")?;
    if target.is_empty() {
        bail!(Validation, "no target examples");
    }
    require_both_classes(target, "target")?;
    let mut model = global.clone();
    let log = boost(&mut model, target, validation, &params);
    model.params = params;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ex(x: Vec<f64>, y: u8) -> LabeledExample {
        LabeledExample {
            month: YearMonth::new(2000, 1),
            index: 0,
            x,
            y,
        }
    }

    #[test]
    fn separable_toy_set_is_fit() {
        let train: Vec<_> = (0..40)
            .map(|i| {
                let a = (i % 10) as f64;
                let b = (i / 10) as f64;
                ex(vec![a, b], u8::from(a + 0.5 * b > 5.0))
            })
            .collect();
        let params = BoostParams {
            learning_rate: 0.5,
            rounds: 10,
            min_data_in_leaf: 1,
            ..BoostParams::default()
        };
        let (model, log) = train_global(&train, &params, &[]).unwrap();
        assert_eq!(log.kept, 10);
        let acc = train.iter().filter(|e| model.predict(&e.x).unwrap().label == e.y).count();
        assert_eq!(acc, train.len());
    }

    #[test]
    fn balanced_prior_predicts_half() {
        let m = BoostedModel::constant(3, 0.5, BoostParams::default());
        let p = m.predict(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(p.prob, 0.5);
        assert_eq!(p.label, 1);
        assert!(m.predict(&[0.0]).is_err());
    }

    #[test]
    fn positive_leaf_raises_probability() {
        let mut m = BoostedModel::constant(1, 0.3, BoostParams::default());
        let before = m.predict(&[0.0]).unwrap().prob;
        m.trees.push(Tree {
            nodes: vec![TreeNode::Leaf { value: 0.4 }],
            shrinkage: 0.1,
        });
        assert!(m.predict(&[0.0]).unwrap().prob > before);
    }

    #[test]
    fn single_class_and_non_finite_rejected() {
        let params = BoostParams::default();
        let train = vec![ex(vec![1.0], 1), ex(vec![2.0], 1)];
        assert!(train_global(&train, &params, &[]).is_err());
        let train = vec![ex(vec![1.0], 1), ex(vec![f64::NAN], 0)];
        assert!(train_global(&train, &params, &[]).is_err());
    }

    #[test]
    fn reference_configuration_validates() {
        let p = BoostParams::reference();
        assert_eq!((p.learning_rate, p.max_depth, p.max_bin, p.max_leaves), (0.00475, -1, 512, 512));
        assert!(p.validate().is_ok());
    }

    #[test]
    fn labels_follow_month_end_levels() {
        use chrono::NaiveDate;
        let dates = vec![
            NaiveDate::from_ymd_opt(2000, 1, 31).unwrap(),
            NaiveDate::from_ymd_opt(2000, 2, 29).unwrap(),
            NaiveDate::from_ymd_opt(2000, 3, 31).unwrap(),
            NaiveDate::from_ymd_opt(2000, 4, 28).unwrap(),
        ];
        let s = PriceSeries::new("a", dates.clone(), vec![100.0, 101.0, 101.0, 100.0]).unwrap();
        let b: Vec<MonthBoundary> = dates
            .iter()
            .enumerate()
            .map(|(i, d)| MonthBoundary {
                month: YearMonth::of(*d),
                date: *d,
                end: i,
                window: 1,
            })
            .collect();
        let labels = make_labels(&s, &b).unwrap();
        assert_eq!(
            labels,
            vec![
                (YearMonth::new(2000, 1), 1),
                (YearMonth::new(2000, 2), 0),
                (YearMonth::new(2000, 3), 0)
            ]
        );
    }
}
