//! TOML run configuration.

use std::path::{Path, PathBuf};

use indexcast_core::backtest::{PipelineConfig, SplitPlan};
use indexcast_core::graph::NodeConfig;
use indexcast_core::series::YearMonth;
use indexcast_core::synth::SynthConfig;
use indexcast_core::Error as CoreError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub prices: PathBuf,
    pub drivers: PathBuf,
    pub node_config: PathBuf,
    pub workdir: PathBuf,
}

/// Which split plan to use: the one under `[pipeline.plan]`, or the synthetic
/// plan anchored at the first month of the price data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Configured,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    /// Which of λ, w and d were set explicitly; the rest come from the node config.
    #[serde(skip)]
    explicit: [bool; 3],
}

fn toml_error(path: &Path, text: &str, e: toml::de::Error) -> Error {
    let line = e.span().map_or(0, |s| text[..s.start].lines().count().max(1));
    Error::Input {
        path: path.to_path_buf(),
        source: CoreError::Parse {
            line,
            message: e.message().to_string(),
        },
    }
}

impl RunConfig {
    /// Parses `path`; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), path)
    }

    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| toml_error(origin, text, e))?;
        let value: toml::Table = toml::from_str(text).map_err(|e| toml_error(origin, text, e))?;
        let pipeline = value.get("pipeline").and_then(|v| v.as_table());
        let has = |key: &str| pipeline.is_some_and(|p| p.contains_key(key));
        let has_latent = pipeline
            .and_then(|p| p.get("vae"))
            .and_then(|v| v.as_table())
            .is_some_and(|v| v.contains_key("latent_dim"));
        cfg.explicit = [has("lambda"), has("window"), has_latent];
        for p in [
            &mut cfg.paths.prices,
            &mut cfg.paths.drivers,
            &mut cfg.paths.node_config,
            &mut cfg.paths.workdir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Replaces the seed everywhere it is used.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.synth.seed = self.seed;
        self.pipeline.vae.seed = self.seed;
        self
    }

    /// Hex SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&(self, self.explicit)).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Stage settings with unset λ, w and d taken from `nodes`, and the split plan resolved.
    pub fn pipeline_for(&self, nodes: &NodeConfig, first_month: YearMonth) -> Result<PipelineConfig> {
        let mut p = self.pipeline.clone();
        if !self.explicit[0] {
            p.lambda = nodes.lambda;
        }
        if !self.explicit[1] {
            p.window = nodes.window;
        }
        if !self.explicit[2] {
            p.vae.latent_dim = nodes.embedding_dim;
        }
        if self.split == Split::Synthetic {
            p.plan = SplitPlan::synthetic(first_month);
        }
        p.plan.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 5
[paths]
prices = "data/prices.csv"
drivers = "data/drivers.csv"
node_config = "data/nodes.cfg"
workdir = "work"
"#;

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let c = RunConfig::parse(MINIMAL, Path::new("/tmp/run"), Path::new("run.toml")).unwrap();
        assert_eq!(c.paths.prices, Path::new("/tmp/run/data/prices.csv"));
        assert_eq!(c.split, Split::Configured);
    }

    #[test]
    fn seed_is_mandatory() {
        let text = MINIMAL.replace("seed = 5", "");
        let err = RunConfig::parse(&text, Path::new("."), Path::new("run.toml")).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn seed_override_reaches_every_stage_and_the_hash() {
        let c = RunConfig::parse(MINIMAL, Path::new("."), Path::new("run.toml")).unwrap();
        let a = c.clone().with_seed(None);
        let b = c.with_seed(Some(9));
        assert_eq!((a.synth.seed, a.pipeline.vae.seed), (5, 5));
        assert_eq!((b.synth.seed, b.pipeline.vae.seed), (9, 9));
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn node_config_fills_unset_hyperparameters() {
        let nodes = NodeConfig {
            lambda: 0.15,
            window: 10,
            embedding_dim: 4,
            ..NodeConfig::default()
        };
        let first = YearMonth::new(1990, 1);
        let c = RunConfig::parse(MINIMAL, Path::new("."), Path::new("run.toml")).unwrap();
        let p = c.pipeline_for(&nodes, first).unwrap();
        assert_eq!((p.lambda, p.window, p.vae.latent_dim), (0.15, 10, 4));
        let text = MINIMAL.replacen("seed = 5", "seed = 5\nsplit = \"synthetic\"", 1)
            + "[pipeline]\nlambda = 0.3\n[pipeline.vae]\nlatent_dim = 6\n";
        let c = RunConfig::parse(&text, Path::new("."), Path::new("run.toml")).unwrap();
        let p = c.pipeline_for(&nodes, first).unwrap();
        assert_eq!((p.lambda, p.window, p.vae.latent_dim), (0.3, 10, 6));
        assert_eq!(p.plan, SplitPlan::synthetic(first));
    }

    #[test]
    fn unknown_keys_name_their_line() {
        let text = format!("{MINIMAL}bogus = 1\n");
        match RunConfig::parse(&text, Path::new("."), Path::new("run.toml")) {
            Err(Error::Input {
                source: CoreError::Parse { line, .. },
                ..
            }) => assert!(line >= 1),
            other => panic!("{other:?}"),
        }
    }
}
