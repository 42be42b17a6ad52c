//! Run configuration for `mwe train`: a TOML file plus command-line overrides.

use std::path::PathBuf;

use anyhow::bail;
use mwe_core::corpus::Language;
use mwe_core::model::ModelConfig;
use mwe_core::trainer::TrainerConfig;
use serde::{Deserialize, Serialize};

/// One input file and the language code it is merged under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusInput {
    pub lang: Language,
    pub path: PathBuf,
}

/// Everything a training run depends on. Paths are used as written, so
/// relative paths resolve against the working directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    pub train: Vec<CorpusInput>,
    pub dev: Vec<CorpusInput>,
    pub model: ModelConfig,
    pub trainer: TrainerConfig,
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub train: Vec<CorpusInput>,
    pub dev: Vec<CorpusInput>,
    pub use_li: Option<bool>,
    pub use_adv: Option<bool>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Inputs given on the command line replace those of the file rather
    /// than adding to them. `--lambda` and `--seed` set both the model and
    /// trainer fields.
    pub fn apply(&mut self, o: Overrides) {
        if o.out.is_some() {
            self.out = o.out;
        }
        if !o.train.is_empty() {
            self.train = o.train;
        }
        if !o.dev.is_empty() {
            self.dev = o.dev;
        }
        if let Some(v) = o.use_li {
            self.model.use_lateral_inhibition = v;
        }
        if let Some(v) = o.use_adv {
            self.model.use_adversarial = v;
        }
        if let Some(v) = o.lambda {
            self.model.lambda = v;
            self.trainer.lambda = v;
        }
        if let Some(v) = o.epochs {
            self.trainer.epochs = v;
        }
        if let Some(v) = o.seed {
            self.model.seed = v;
            self.trainer.seed = v;
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.out.is_none() {
            bail!("no output directory (set `out` or pass --out)");
        }
        if self.train.is_empty() {
            bail!("no training corpus (add a [[train]] table or pass --train LANG PATH)");
        }
        self.model.validate()?;
        self.trainer.validate()?;
        Ok(())
    }
}
