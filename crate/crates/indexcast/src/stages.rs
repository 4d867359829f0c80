//! One function per command. Stages exchange data only through files in the
//! workdir, and each run is recorded in the manifest.

use std::fs::File;
use std::path::{Path, PathBuf};

use indexcast_core::backtest::*;
use indexcast_core::gbdt::{BoostedModel, LabeledExample, TrainLog};
use indexcast_core::graph::{load_graph, CausalGraph, NodeConfig};
use indexcast_core::regime::RegimeSegment;
use indexcast_core::series::{PriceSeries, YearMonth};
use indexcast_core::synth::generate_synthetic;
use indexcast_core::vae::{train_vae, VaeParams};
use indexcast_core::Error as CoreError;

use crate::config::RunConfig;
use crate::csvio::{load_drivers, load_node_config, load_prices, write_drivers, write_predictions, write_prices, write_regimes};
use crate::error::{Error, Result};
use crate::manifest::{Artifact, Manifest};
use crate::parallel::{features_all, label_all, Rayon};
use crate::store::{load_embeddings, load_features, load_json, save_embeddings, save_features, save_json};

pub const REGIMES: &str = "regimes.json";
pub const REGIMES_CSV: &str = "regimes.csv";
pub const FEATURES: &str = "features.bin";
pub const VAE: &str = "vae.json";
pub const VAE_REPORT: &str = "vae_report.json";
pub const EMBEDDINGS: &str = "embeddings.bin";
pub const GLOBAL_MODEL: &str = "global_model.json";
pub const GLOBAL_LOG: &str = "global_log.json";

/// Replaces characters that are unsafe in file names.
fn file_tag(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn fine_tuned_model(target: &str) -> String {
    format!("fine_tuned_{}.json", file_tag(target))
}

pub fn report_json(target: &str) -> String {
    format!("report_{}.json", file_tag(target))
}

pub fn report_text(target: &str) -> String {
    format!("report_{}.txt", file_tag(target))
}

pub fn predictions(target: &str) -> String {
    format!("predictions_{}.csv", file_tag(target))
}

pub fn global_predictions(target: &str) -> String {
    format!("predictions_global_{}.csv", file_tag(target))
}

pub struct Workspace {
    pub config: RunConfig,
    pub hash: String,
    manifest: Manifest,
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(Error::io(p)),
        _ => Ok(()),
    }
}

fn create(path: &Path) -> Result<File> {
    create_parent(path)?;
    File::create(path).map_err(Error::io(path))
}

impl Workspace {
    pub fn open(config: RunConfig) -> Result<Self> {
        let dir = &config.paths.workdir;
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let manifest = Manifest::load(dir)?;
        let hash = config.hash();
        Ok(Self { config, hash, manifest })
    }

    pub fn workdir(&self) -> &Path {
        &self.config.paths.workdir
    }

    pub fn path(&self, key: &str) -> PathBuf {
        self.workdir().join(key)
    }

    fn artifact(&self, key: &str, stage: &'static str, record: &str) -> Artifact {
        Artifact {
            key: key.into(),
            path: self.path(key),
            stage,
            record: record.into(),
        }
    }

    fn work(&self, key: &str, stage: &'static str) -> Artifact {
        self.artifact(key, stage, stage)
    }

    fn external(&self, key: &str, path: &Path) -> Artifact {
        Artifact {
            key: key.into(),
            path: path.to_path_buf(),
            stage: "synth",
            record: "synth".into(),
        }
    }

    fn prices_artifact(&self) -> Artifact {
        self.external("prices", &self.config.paths.prices)
    }

    fn drivers_artifact(&self) -> Artifact {
        self.external("drivers", &self.config.paths.drivers)
    }

    fn nodes_artifact(&self) -> Artifact {
        self.external("node-config", &self.config.paths.node_config)
    }

    fn check(&self, inputs: &[Artifact]) -> Result<()> {
        for a in inputs {
            self.manifest.check(a, &self.hash, a.record == "synth")?;
        }
        Ok(())
    }

    fn commit(&mut self, record: &str, inputs: &[Artifact], outputs: &[Artifact]) -> Result<()> {
        self.manifest.record(record, &self.hash, self.config.seed, inputs, outputs)?;
        self.manifest.save(&self.config.paths.workdir)
    }

    fn base_inputs(&self) -> Result<(Vec<PriceSeries>, NodeConfig, CausalGraph, PipelineConfig)> {
        let prices = load_prices(&self.config.paths.prices)?;
        let path = &self.config.paths.node_config;
        let nodes = load_node_config(path)?;
        let graph = load_graph(&nodes).map_err(Error::input(path))?;
        let first = prices
            .iter()
            .map(|s| YearMonth::of(s.dates()[0]))
            .min()
            .expect("at least one series");
        let pipeline = self.config.pipeline_for(&nodes, first)?;
        Ok((prices, nodes, graph, pipeline))
    }

    /// Position and id of the index named by `flag`, or the first configured target.
    fn target(&self, flag: Option<&str>, prices: &[PriceSeries]) -> Result<(usize, String)> {
        let id = flag
            .map(str::to_string)
            .or_else(|| self.config.targets.first().cloned())
            .ok_or_else(|| CoreError::Validation("no target index: pass --target or set `targets` in the config".into()))?;
        let pos = prices
            .iter()
            .position(|s| s.index_id() == id)
            .ok_or_else(|| CoreError::Validation(format!("target {id:?} is not in the price file ({} indices)", prices.len())))?;
        Ok((pos, id))
    }

    pub fn synth(&mut self) -> Result<String> {
        let data = generate_synthetic(&self.config.synth)?;
        let p = self.config.paths.clone();
        write_prices(create(&p.prices)?, &data.prices).map_err(Error::io(&p.prices))?;
        write_drivers(create(&p.drivers)?, &data.drivers).map_err(Error::io(&p.drivers))?;
        create_parent(&p.node_config)?;
        std::fs::write(&p.node_config, data.node_config.to_text()).map_err(Error::io(&p.node_config))?;
        let outputs = [self.prices_artifact(), self.drivers_artifact(), self.nodes_artifact()];
        self.commit("synth", &[], &outputs)?;
        Ok(format!(
            "synth: {} indices, {} months, {} drivers",
            data.prices.len(),
            data.months.len(),
            data.drivers.driver_ids().len()
        ))
    }

    pub fn label(&mut self) -> Result<String> {
        let inputs = [self.prices_artifact(), self.nodes_artifact()];
        self.check(&inputs)?;
        let (prices, _, _, pipeline) = self.base_inputs()?;
        let segments = label_all(&prices, pipeline.lambda)?;
        save_json(&self.path(REGIMES), &segments)?;
        let csv = self.path(REGIMES_CSV);
        write_regimes(create(&csv)?, &segments).map_err(Error::io(&csv))?;
        let outputs = [self.work(REGIMES, "label"), self.work(REGIMES_CSV, "label")];
        self.commit("label", &inputs, &outputs)?;
        Ok(format!(
            "label: {} segments over {} indices",
            segments.iter().map(Vec::len).sum::<usize>(),
            prices.len()
        ))
    }

    pub fn features(&mut self) -> Result<String> {
        let inputs = [
            self.prices_artifact(),
            self.drivers_artifact(),
            self.nodes_artifact(),
            self.work(REGIMES, "label"),
        ];
        self.check(&inputs)?;
        let (prices, nodes, graph, pipeline) = self.base_inputs()?;
        let drivers = load_drivers(&self.config.paths.drivers, &nodes)?;
        let regimes_path = self.path(REGIMES);
        let segments: Vec<Vec<RegimeSegment>> = load_json(&regimes_path)?;
        let consistent = segments.len() == prices.len()
            && segments
                .iter()
                .zip(&prices)
                .all(|(seg, s)| seg.first().is_some_and(|x| x.index_id == s.index_id()));
        if !consistent {
            return Err(Error::Stale(format!(
                "{REGIMES} does not match the price file; rerun `indexcast label`"
            )));
        }
        let feats = features_all(&prices, &segments, &drivers, &graph, pipeline.window)?;
        save_features(&self.path(FEATURES), &feats)?;
        self.commit("features", &inputs, &[self.work(FEATURES, "features")])?;
        let len = feats.first().map_or(0, |f| f.values.len());
        Ok(format!("features: {} node vectors of length {len}", feats.len()))
    }

    pub fn train_vae(&mut self) -> Result<String> {
        let inputs = [self.prices_artifact(), self.nodes_artifact(), self.work(FEATURES, "features")];
        self.check(&inputs)?;
        let (_, _, _, pipeline) = self.base_inputs()?;
        let feats = load_features(&self.path(FEATURES))?;
        let train = vae_training_set(&feats, &pipeline.plan)?;
        let (params, report) = train_vae(&train, &pipeline.vae, &Rayon)?;
        save_json(&self.path(VAE), &params)?;
        save_json(&self.path(VAE_REPORT), &report)?;
        self.commit(
            "train-vae",
            &inputs,
            &[self.work(VAE, "train-vae"), self.work(VAE_REPORT, "train-vae")],
        )?;
        Ok(format!(
            "train-vae: {} training rows, kept epoch {} of {}",
            report.train_examples,
            report.best_epoch,
            report.epochs.len()
        ))
    }

    fn load_vae(&self) -> Result<VaeParams> {
        let path = self.path(VAE);
        let params: VaeParams = load_json(&path)?;
        params.check_version().map_err(Error::input(&path))?;
        Ok(params)
    }

    pub fn embed(&mut self) -> Result<String> {
        let inputs = [
            self.prices_artifact(),
            self.nodes_artifact(),
            self.work(FEATURES, "features"),
            self.work(VAE, "train-vae"),
        ];
        self.check(&inputs)?;
        let (_, _, _, pipeline) = self.base_inputs()?;
        let params = self.load_vae()?;
        let feats = load_features(&self.path(FEATURES))?;
        let embeddings = embed_after_training(&params, &feats, &pipeline.plan)?;
        save_embeddings(&self.path(EMBEDDINGS), &embeddings)?;
        self.commit("embed", &inputs, &[self.work(EMBEDDINGS, "embed")])?;
        Ok(format!(
            "embed: {} embeddings of dimension {}",
            embeddings.len(),
            params.latent_dim()
        ))
    }

    fn examples(&self) -> Result<(Vec<PriceSeries>, PipelineConfig, Vec<LabeledExample>)> {
        let (prices, _, graph, pipeline) = self.base_inputs()?;
        let embeddings = load_embeddings(&self.path(EMBEDDINGS))?;
        let labels: Vec<_> = prices
            .iter()
            .map(|s| labels_for(s, pipeline.window))
            .collect::<indexcast_core::Result<_>>()?;
        let examples = build_examples(&embeddings, &labels, graph.len())?;
        Ok((prices, pipeline, examples))
    }

    fn example_inputs(&self) -> Vec<Artifact> {
        vec![self.prices_artifact(), self.nodes_artifact(), self.work(EMBEDDINGS, "embed")]
    }

    pub fn train_global(&mut self) -> Result<String> {
        let inputs = self.example_inputs();
        self.check(&inputs)?;
        let (_, pipeline, examples) = self.examples()?;
        let (model, log) = train_global_stage(&examples, &pipeline.plan, &pipeline.boost)?;
        save_json(&self.path(GLOBAL_MODEL), &model)?;
        save_json(&self.path(GLOBAL_LOG), &log)?;
        self.commit(
            "train-global",
            &inputs,
            &[self.work(GLOBAL_MODEL, "train-global"), self.work(GLOBAL_LOG, "train-global")],
        )?;
        Ok(format!(
            "train-global: kept {} trees after {} rounds",
            log.kept,
            log.rounds.len().saturating_sub(1)
        ))
    }

    fn load_model(&self, key: &str) -> Result<BoostedModel> {
        let path = self.path(key);
        let model: BoostedModel = load_json(&path)?;
        model.check_version().map_err(Error::input(&path))?;
        Ok(model)
    }

    pub fn fine_tune(&mut self, target: Option<&str>) -> Result<String> {
        let mut inputs = self.example_inputs();
        inputs.push(self.work(GLOBAL_MODEL, "train-global"));
        self.check(&inputs)?;
        let (prices, pipeline, examples) = self.examples()?;
        let (pos, id) = self.target(target, &prices)?;
        let global = self.load_model(GLOBAL_MODEL)?;
        let (model, log): (BoostedModel, TrainLog) = fine_tune_stage(&global, &examples, &pipeline.plan, pos, &pipeline.fine_tune)?;
        let record = format!("fine-tune {id}");
        let model_key = fine_tuned_model(&id);
        let log_key = format!("fine_tune_log_{}.json", file_tag(&id));
        save_json(&self.path(&model_key), &model)?;
        save_json(&self.path(&log_key), &log)?;
        let outputs = [
            self.artifact(&model_key, "fine-tune", &record),
            self.artifact(&log_key, "fine-tune", &record),
        ];
        self.commit(&record, &inputs, &outputs)?;
        Ok(format!("fine-tune {id}: added {} trees", log.kept))
    }

    pub fn backtest(&mut self, target: Option<&str>) -> Result<String> {
        let prices = load_prices(&self.config.paths.prices)?;
        let (pos, id) = self.target(target, &prices)?;
        let mut inputs = self.example_inputs();
        inputs.push(self.work(GLOBAL_MODEL, "train-global"));
        inputs.push(self.artifact(&fine_tuned_model(&id), "fine-tune", &format!("fine-tune {id}")));
        self.check(&inputs)?;
        let (prices, pipeline, examples) = self.examples()?;
        let fine = self.load_model(&fine_tuned_model(&id))?;
        let global = self.load_model(GLOBAL_MODEL)?;
        let ft = predict_test(&fine, &examples, &pipeline.plan, pos)?;
        let gl = predict_test(&global, &examples, &pipeline.plan, pos)?;
        let report = run_backtest(&id, &pipeline.plan, &ft, &gl)?;
        let ids: Vec<&str> = prices.iter().map(|s| s.index_id()).collect();
        for (key, records) in [(predictions(&id), &ft), (global_predictions(&id), &gl)] {
            let path = self.path(&key);
            write_predictions(create(&path)?, records, &ids).map_err(Error::io(&path))?;
        }
        save_json(&self.path(&report_json(&id)), &report)?;
        let table = report.to_table();
        std::fs::write(self.path(&report_text(&id)), &table).map_err(Error::io(&self.path(&report_text(&id))))?;
        let record = format!("backtest {id}");
        let outputs: Vec<Artifact> = [predictions(&id), global_predictions(&id), report_json(&id), report_text(&id)]
            .iter()
            .map(|k| self.artifact(k, "backtest", &record))
            .collect();
        self.commit(&record, &inputs, &outputs)?;
        Ok(table)
    }

    /// The stored report for `target`, optionally restricted to one period, as a table.
    pub fn report(&self, target: Option<&str>, period: Option<&str>) -> Result<String> {
        let prices = load_prices(&self.config.paths.prices)?;
        let (_, id) = self.target(target, &prices)?;
        let a = self.artifact(&report_json(&id), "backtest", &format!("backtest {id}"));
        self.check(std::slice::from_ref(&a))?;
        let report: BacktestReport = load_json(&a.path)?;
        let report = match period {
            Some(p) => report.only(p)?,
            None => report,
        };
        Ok(report.to_table())
    }
}
