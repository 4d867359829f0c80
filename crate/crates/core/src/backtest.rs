//! Walk-forward protocol: chronological stage ranges, the stage functions that
//! move data through the pipeline, a timestamp audit, and per-period reports.
//!
//! Examples are dated by their feature month `t`; they predict month `t + 1`.
//! A classifier example belongs to a stage when its predicted month lies in the
//! stage range and its feature month lies after the autoencoder range.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::features::{index_features, NodeFeatures};
use crate::gbdt::{fine_tune, make_labels, train_global, BoostParams, BoostedModel, FineTuneOverrides, LabeledExample, TrainLog};
use crate::graph::CausalGraph;
use crate::metrics::{compute_metrics, MetricsRow};
use crate::regime::{label_regimes, RegimeSegment, DEFAULT_LAMBDA};
use crate::series::{month_boundaries, DriverPanel, PriceSeries, YearMonth, DEFAULT_WINDOW};
use crate::vae::{embed, train_vae, NodeEmbedding, ShardExecutor, TrainReport, VaeParams, VaeTrainConfig};

/// Inclusive month range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthRange {
    pub start: YearMonth,
    pub end: YearMonth,
}

impl MonthRange {
    pub fn new(start: YearMonth, end: YearMonth) -> Self {
        Self { start, end }
    }

    pub fn years(first: i32, last: i32) -> Self {
        Self::new(YearMonth::new(first, 1), YearMonth::new(last, 12))
    }

    pub fn contains(&self, m: YearMonth) -> bool {
        self.start <= m && m <= self.end
    }

    pub fn months(&self) -> i64 {
        self.end.ordinal() - self.start.ordinal() + 1
    }
}

impl fmt::Display for MonthRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubPeriod {
    pub name: String,
    pub range: MonthRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub vae_train: MonthRange,
    pub classifier_train: MonthRange,
    pub validation: MonthRange,
    pub test: MonthRange,
    pub sub_periods: Vec<SubPeriod>,
}

impl Default for SplitPlan {
    fn default() -> Self {
        let sub = |a: i32, b: i32| SubPeriod {
            name: format!("{a}-{:02}", b % 100),
            range: MonthRange::years(a, b),
        };
        Self {
            vae_train: MonthRange::years(1972, 1992),
            classifier_train: MonthRange::years(1993, 2004),
            validation: MonthRange::years(2005, 2006),
            test: MonthRange::years(2007, 2018),
            sub_periods: alloc::vec![sub(2007, 2008), sub(2011, 2012), sub(2015, 2016)],
        }
    }
}

impl SplitPlan {
    /// Proportional plan for a synthetic history of 300 months starting at `first`:
    /// 8 years autoencoder, 9 classifier, 2 validation, 6 test with three 2-year slices.
    pub fn synthetic(first: YearMonth) -> Self {
        let at = |offset: i64| YearMonth::from_ordinal(first.ordinal() + offset);
        let range = |a: i64, b: i64| MonthRange::new(at(a), at(b));
        let sub = |a: i64| {
            let r = range(a, a + 23);
            SubPeriod {
                name: format!("{}-{:02}", r.start.year, r.end.year % 100),
                range: r,
            }
        };
        Self {
            vae_train: range(0, 95),
            classifier_train: range(96, 203),
            validation: range(204, 227),
            test: range(228, 299),
            sub_periods: alloc::vec![sub(228), sub(252), sub(276)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let order = [
            ("vae_train", self.vae_train),
            ("classifier_train", self.classifier_train),
            ("validation", self.validation),
            ("test", self.test),
        ];
        for (name, r) in order {
            if r.start > r.end {
                bail!(Config, "{name} range {r} is empty");
            }
        }
        for w in order.windows(2) {
            if w[0].1.end >= w[1].1.start {
                bail!(Config, "{} range {} must end before {} range {}", w[0].0, w[0].1, w[1].0, w[1].1);
            }
        }
        for p in &self.sub_periods {
            if p.name.is_empty() || p.name == ALL_PERIOD {
                bail!(Config, "sub-period name {:?} is reserved or empty", p.name);
            }
            if !(self.test.contains(p.range.start) && self.test.contains(p.range.end)) || p.range.start > p.range.end {
                bail!(
                    Config,
                    "sub-period {} ({}) must lie inside the test range {}",
                    p.name,
                    p.range,
                    self.test
                );
            }
        }
        Ok(())
    }

    /// Full test range first, then the sub-periods.
    pub fn periods(&self) -> Vec<SubPeriod> {
        let mut v = alloc::vec![SubPeriod {
            name: ALL_PERIOD.into(),
            range: self.test
        }];
        v.extend(self.sub_periods.iter().cloned());
        v
    }

    pub fn range_of(&self, stage: Stage) -> MonthRange {
        match stage {
            Stage::Vae => self.vae_train,
            Stage::Classifier | Stage::FineTune => self.classifier_train,
            Stage::Validation | Stage::FineTuneValidation => self.validation,
            Stage::Test => self.test,
        }
    }

    /// Whether an example with feature month `t` may be used by `stage`.
    pub fn admits(&self, stage: Stage, t: YearMonth) -> bool {
        match stage {
            Stage::Vae => self.vae_train.contains(t),
            _ => t > self.vae_train.end && self.range_of(stage).contains(t.succ()),
        }
    }
}

pub const ALL_PERIOD: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Vae,
    Classifier,
    Validation,
    FineTune,
    FineTuneValidation,
    Test,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Vae => "autoencoder training",
            Stage::Classifier => "global classifier training",
            Stage::Validation => "global validation",
            Stage::FineTune => "fine-tuning",
            Stage::FineTuneValidation => "fine-tuning validation",
            Stage::Test => "test",
        })
    }
}

/// Fails with a protocol error if any feature month is outside what `stage` may use.
pub fn audit_stage(plan: &SplitPlan, stage: Stage, months: impl IntoIterator<Item = YearMonth>) -> Result<()> {
    for t in months {
        if !plan.admits(stage, t) {
            bail!(
                Protocol,
                "{stage} used an example from {t}, outside its range {}",
                plan.range_of(stage)
            );
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub lambda: f64,
    pub window: usize,
    pub vae: VaeTrainConfig,
    pub boost: BoostParams,
    pub fine_tune: FineTuneOverrides,
    pub plan: SplitPlan,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            window: DEFAULT_WINDOW,
            vae: VaeTrainConfig::default(),
            boost: BoostParams::default(),
            fine_tune: FineTuneOverrides::default(),
            plan: SplitPlan::default(),
        }
    }
}

/// Node features of one index with its drivers aligned to its own calendar.
pub fn features_for_index(
    index: usize,
    series: &PriceSeries,
    segments: &[RegimeSegment],
    drivers: &DriverPanel,
    graph: &CausalGraph,
    window: usize,
) -> Result<Vec<NodeFeatures>> {
    let aligned = drivers.align_to(series.dates())?;
    index_features(index, series, segments, &aligned, graph, window)
}

/// Features from the autoencoder range, audited.
pub fn vae_training_set(features: &[NodeFeatures], plan: &SplitPlan) -> Result<Vec<NodeFeatures>> {
    let rows: Vec<NodeFeatures> = features.iter().filter(|f| plan.vae_train.contains(f.month)).cloned().collect();
    audit_stage(plan, Stage::Vae, rows.iter().map(|f| f.month))?;
    if rows.is_empty() {
        bail!(Validation, "no features inside the autoencoder range {}", plan.vae_train);
    }
    Ok(rows)
}

/// Embeddings of every feature vector dated after the autoencoder range.
pub fn embed_after_training(params: &VaeParams, features: &[NodeFeatures], plan: &SplitPlan) -> Result<Vec<NodeEmbedding>> {
    features
        .iter()
        .filter(|f| f.month > plan.vae_train.end)
        .map(|f| embed(params, f))
        .collect()
}

/// Direction labels per index, keyed by feature month.
pub fn labels_for(series: &PriceSeries, window: usize) -> Result<Vec<(YearMonth, u8)>> {
    make_labels(series, &month_boundaries(series.dates(), window)?)
}

/// Joins node embeddings into one example per (index, month), nodes in graph
/// order. Months without a label or with missing nodes are skipped.
/// Output is sorted by index, then month.
pub fn build_examples(embeddings: &[NodeEmbedding], labels: &[Vec<(YearMonth, u8)>], node_count: usize) -> Result<Vec<LabeledExample>> {
    let mut grouped: BTreeMap<(usize, YearMonth), Vec<Option<&NodeEmbedding>>> = BTreeMap::new();
    for e in embeddings {
        if e.node >= node_count {
            bail!(Validation, "embedding for node {} but the graph has {node_count} nodes", e.node);
        }
        let slot = grouped.entry((e.index, e.month)).or_insert_with(|| alloc::vec![None; node_count]);
        if slot[e.node].replace(e).is_some() {
            bail!(
                Validation,
                "duplicate embedding for index {} node {} month {}",
                e.index,
                e.node,
                e.month
            );
        }
    }
    let mut out = Vec::with_capacity(grouped.len());
    for ((index, month), nodes) in grouped {
        let Some(y) = labels
            .get(index)
            .and_then(|l| l.binary_search_by_key(&month, |p| p.0).ok().map(|i| l[i].1))
        else {
            continue;
        };
        if nodes.iter().any(Option::is_none) {
            continue;
        }
        let x: Vec<f64> = nodes.iter().flatten().flat_map(|e| e.values.iter().copied()).collect();
        out.push(LabeledExample { month, index, x, y });
    }
    Ok(out)
}

/// Examples `stage` may use, restricted to one index if given.
pub fn stage_examples(examples: &[LabeledExample], plan: &SplitPlan, stage: Stage, index: Option<usize>) -> Vec<LabeledExample> {
    examples
        .iter()
        .filter(|e| index.is_none_or(|i| e.index == i) && plan.admits(stage, e.month))
        .cloned()
        .collect()
}

pub fn train_global_stage(examples: &[LabeledExample], plan: &SplitPlan, params: &BoostParams) -> Result<(BoostedModel, TrainLog)> {
    let train = stage_examples(examples, plan, Stage::Classifier, None);
    let valid = stage_examples(examples, plan, Stage::Validation, None);
    audit_stage(plan, Stage::Classifier, train.iter().map(|e| e.month))?;
    audit_stage(plan, Stage::Validation, valid.iter().map(|e| e.month))?;
    train_global(&train, params, &valid)
}

pub fn fine_tune_stage(
    global: &BoostedModel,
    examples: &[LabeledExample],
    plan: &SplitPlan,
    target: usize,
    overrides: &FineTuneOverrides,
) -> Result<(BoostedModel, TrainLog)> {
    let train = stage_examples(examples, plan, Stage::FineTune, Some(target));
    let valid = stage_examples(examples, plan, Stage::FineTuneValidation, Some(target));
    audit_stage(plan, Stage::FineTune, train.iter().map(|e| e.month))?;
    audit_stage(plan, Stage::FineTuneValidation, valid.iter().map(|e| e.month))?;
    fine_tune(global, &train, overrides, &valid)
}

/// One directional call, dated by the month it predicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub month: YearMonth,
    pub index: usize,
    pub prob_up: f64,
    pub label: u8,
    pub truth: u8,
}

pub fn predict_test(model: &BoostedModel, examples: &[LabeledExample], plan: &SplitPlan, target: usize) -> Result<Vec<PredictionRecord>> {
    let test = stage_examples(examples, plan, Stage::Test, Some(target));
    audit_stage(plan, Stage::Test, test.iter().map(|e| e.month))?;
    test.iter()
        .map(|e| {
            let p = model.predict(&e.x)?;
            Ok(PredictionRecord {
                month: e.month.succ(),
                index: e.index,
                prob_up: p.prob,
                label: p.label,
                truth: e.y,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodReport {
    pub name: String,
    pub range: MonthRange,
    pub months: usize,
    /// Fraction of up months.
    pub base_rate: f64,
    pub fine_tuned: MetricsRow,
    pub global: MetricsRow,
    pub benchmark: MetricsRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub target: String,
    pub periods: Vec<PeriodReport>,
}

/// Scores both models and the always-up benchmark on every period. Periods
/// without predictions are left out. `fine_tuned` and `global` must cover the same months.
pub fn run_backtest(
    target: &str,
    plan: &SplitPlan,
    fine_tuned: &[PredictionRecord],
    global: &[PredictionRecord],
) -> Result<BacktestReport> {
    let key = |r: &PredictionRecord| (r.month, r.index, r.truth);
    if fine_tuned.len() != global.len() || fine_tuned.iter().zip(global).any(|(a, b)| key(a) != key(b)) {
        bail!(Validation, "fine-tuned and global predictions cover different months");
    }
    let mut periods = Vec::new();
    for p in plan.periods() {
        let pick = |rs: &[PredictionRecord]| -> (Vec<u8>, Vec<u8>) {
            rs.iter().filter(|r| p.range.contains(r.month)).map(|r| (r.truth, r.label)).unzip()
        };
        let (truth, ft) = pick(fine_tuned);
        if truth.is_empty() {
            continue;
        }
        let (_, gl) = pick(global);
        let ups = truth.iter().filter(|y| **y == 1).count();
        periods.push(PeriodReport {
            name: p.name,
            range: p.range,
            months: truth.len(),
            base_rate: ups as f64 / truth.len() as f64,
            fine_tuned: compute_metrics(&truth, &ft)?,
            global: compute_metrics(&truth, &gl)?,
            benchmark: compute_metrics(&truth, &alloc::vec![1; truth.len()])?,
        });
    }
    if periods.is_empty() {
        bail!(Validation, "no test predictions for {target}");
    }
    Ok(BacktestReport {
        target: target.into(),
        periods,
    })
}

impl BacktestReport {
    pub fn period(&self, name: &str) -> Option<&PeriodReport> {
        self.periods.iter().find(|p| p.name == name)
    }

    /// Restricted to one named period.
    pub fn only(&self, name: &str) -> Result<BacktestReport> {
        let p = self
            .period(name)
            .ok_or_else(|| Error::Validation(format!("no period named {name:?} in report")))?;
        Ok(BacktestReport {
            target: self.target.clone(),
            periods: alloc::vec![p.clone()],
        })
    }

    /// Models as rows, one ACC / F1 / MCC column group per period.
    /// ACC and F1 are in percent.
    pub fn to_table(&self) -> String {
        const LABEL: usize = 24;
        const GROUP: usize = 22;
        let mut s = String::new();
        let _ = write!(s, "Target: {}", self.target);
        if let Some(all) = self.period(ALL_PERIOD) {
            let _ = write!(s, ", test {}", all.range);
        }
        s.push('\n');
        let _ = write!(s, "{:LABEL$}", "");
        for p in &self.periods {
            let title = if p.name == ALL_PERIOD {
                format!("All test ({}m)", p.months)
            } else {
                format!("{} ({}m)", p.name, p.months)
            };
            let _ = write!(s, "|{title:^GROUP$}");
        }
        s.push('\n');
        let _ = write!(s, "{:LABEL$}", "Model");
        for _ in &self.periods {
            let _ = write!(s, "|{:>6}{:>7}{:>8} ", "ACC", "F1", "MCC");
        }
        s.push('\n');
        let _ = writeln!(s, "{}", "-".repeat(LABEL + self.periods.len() * (GROUP + 1)));
        let rows: [(&str, fn(&PeriodReport) -> &MetricsRow); 3] = [
            ("Fine-tuned target", |p| &p.fine_tuned),
            ("Global (before tuning)", |p| &p.global),
            ("Benchmark (always up)", |p| &p.benchmark),
        ];
        for (name, get) in rows {
            let _ = write!(s, "{name:LABEL$}");
            for p in &self.periods {
                let m = get(p);
                let _ = write!(s, "|{:>6.1}{:>7.1}{:>8.3} ", 100.0 * m.acc, 100.0 * m.macro_f1, m.mcc);
            }
            s.push('\n');
        }
        s
    }
}

/// Everything produced by one in-memory run of the pipeline.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub segments: Vec<Vec<RegimeSegment>>,
    pub features: Vec<NodeFeatures>,
    pub vae: VaeParams,
    pub vae_report: TrainReport,
    pub embeddings: Vec<NodeEmbedding>,
    pub examples: Vec<LabeledExample>,
    pub global: BoostedModel,
    pub global_log: TrainLog,
    pub fine_tuned: BoostedModel,
    pub fine_tune_log: TrainLog,
    pub fine_tuned_predictions: Vec<PredictionRecord>,
    pub global_predictions: Vec<PredictionRecord>,
    pub report: BacktestReport,
}

/// Runs every stage in order for one target index.
pub fn run_pipeline(
    prices: &[PriceSeries],
    drivers: &DriverPanel,
    graph: &CausalGraph,
    config: &PipelineConfig,
    target: usize,
    executor: &dyn ShardExecutor,
) -> Result<PipelineRun> {
    config.plan.validate()?;
    let Some(target_series) = prices.get(target) else {
        bail!(Validation, "target index {target} out of range ({} indices)", prices.len());
    };
    let segments: Vec<Vec<RegimeSegment>> = prices.iter().map(|s| label_regimes(s, config.lambda)).collect::<Result<_>>()?;
    let mut features = Vec::new();
    for (i, (s, seg)) in prices.iter().zip(&segments).enumerate() {
        features.extend(features_for_index(i, s, seg, drivers, graph, config.window)?);
    }
    let (vae, vae_report) = train_vae(&vae_training_set(&features, &config.plan)?, &config.vae, executor)?;
    let embeddings = embed_after_training(&vae, &features, &config.plan)?;
    let labels: Vec<_> = prices.iter().map(|s| labels_for(s, config.window)).collect::<Result<_>>()?;
    let examples = build_examples(&embeddings, &labels, graph.len())?;
    let (global, global_log) = train_global_stage(&examples, &config.plan, &config.boost)?;
    let (fine_tuned, fine_tune_log) = fine_tune_stage(&global, &examples, &config.plan, target, &config.fine_tune)?;
    let fine_tuned_predictions = predict_test(&fine_tuned, &examples, &config.plan, target)?;
    let global_predictions = predict_test(&global, &examples, &config.plan, target)?;
    let report = run_backtest(target_series.index_id(), &config.plan, &fine_tuned_predictions, &global_predictions)?;
    Ok(PipelineRun {
        segments,
        features,
        vae,
        vae_report,
        embeddings,
        examples,
        global,
        global_log,
        fine_tuned,
        fine_tune_log,
        fine_tuned_predictions,
        global_predictions,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_is_chronological() {
        let p = SplitPlan::default();
        p.validate().unwrap();
        assert_eq!(
            p.sub_periods.iter().map(|s| s.name.as_str()).collect::<Vec<_>>(),
            ["2007-08", "2011-12", "2015-16"]
        );
        let s = SplitPlan::synthetic(YearMonth::new(1990, 1));
        s.validate().unwrap();
        assert_eq!(s.test.end, YearMonth::new(2014, 12));
    }

    #[test]
    fn overlapping_ranges_rejected() {
        let p = SplitPlan {
            validation: MonthRange::years(2004, 2006),
            ..SplitPlan::default()
        };
        assert!(matches!(p.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn audit_flags_misuse() {
        let p = SplitPlan::default();
        assert!(audit_stage(&p, Stage::Classifier, [YearMonth::new(1993, 1), YearMonth::new(2004, 11)]).is_ok());
        // predicts the first validation month
        assert!(matches!(
            audit_stage(&p, Stage::Classifier, [YearMonth::new(2004, 12)]),
            Err(Error::Protocol(_))
        ));
        // features inside the autoencoder range
        assert!(matches!(
            audit_stage(&p, Stage::Classifier, [YearMonth::new(1992, 12)]),
            Err(Error::Protocol(_))
        ));
        assert!(audit_stage(&p, Stage::Test, [YearMonth::new(2006, 12)]).is_ok());
    }

    #[test]
    fn benchmark_is_all_up() {
        let plan = SplitPlan::default();
        let recs: Vec<PredictionRecord> = (0..24)
            .map(|i| PredictionRecord {
                month: YearMonth::from_ordinal(YearMonth::new(2007, 1).ordinal() + i),
                index: 0,
                prob_up: 0.7,
                label: 1,
                truth: u8::from(i % 3 != 0),
            })
            .collect();
        let r = run_backtest("X", &plan, &recs, &recs).unwrap();
        assert_eq!(r.periods.len(), 2);
        let all = r.period(ALL_PERIOD).unwrap();
        assert_eq!(all.benchmark, all.fine_tuned);
        assert_eq!(all.benchmark.mcc, 0.0);
        assert!(r.to_table().contains("Benchmark (always up)"));
        assert!(r.only("2011-12").is_err());
    }
}
