use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, TagSet, Vocab};
use crate::autodiff::Tensor;
use crate::corpus::{Language, Tag};

pub const CHECKPOINT_FORMAT: &str = "mwe-tagger-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// On-disk model: JSON holding config, vocabulary, tag set, language set
/// and every parameter tensor in creation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointFile {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub tagset: Vec<String>,
    pub languages: Vec<Language>,
    pub params: Vec<SavedParam>,
}

impl Model {
    pub fn to_checkpoint(&self) -> CheckpointFile {
        CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.forms().to_vec(),
            tagset: self.tagset.tags().iter().map(ToString::to_string).collect(),
            languages: self.languages.clone(),
            params: self
                .store
                .iter()
                .map(|(_, p)| SavedParam {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: CheckpointFile) -> Result<Self, ModelError> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format {} v{}",
                ck.format, ck.version
            )));
        }
        let tags = ck
            .tagset
            .iter()
            .map(|t| t.parse::<Tag>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut model = Model::from_parts(
            ck.config,
            Vocab::from_forms(ck.vocab)?,
            TagSet::from_tags(tags)?,
            ck.languages,
        )?;
        if model.store.len() != ck.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.store.len(),
                ck.params.len()
            )));
        }
        let ids: Vec<_> = model.store.ids().collect();
        for (id, saved) in ids.into_iter().zip(ck.params) {
            let p = model.store.get_mut(id);
            if p.name != saved.name || p.value.shape() != saved.shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    saved.name,
                    saved.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = Tensor::new(saved.shape, saved.values)
                .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn save_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn load_json(text: &str) -> Result<Self, ModelError> {
        let ck: CheckpointFile =
            serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(ck)
    }
}
