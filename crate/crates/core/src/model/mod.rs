//! Tagger architecture: a windowed feature extractor `F` shared by a tag
//! classifier `C` (optionally behind a lateral inhibition layer) and a
//! language discriminator `LG` that sees `F`'s output through gradient
//! reversal.

mod checkpoint;

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::corpus::{
    decode_tags, encode_tags, Corpus, CorpusError, Language, MweSpan, Sentence, Tag,
};
use crate::lateral_inhibition::{LateralInhibitionLayer, DEFAULT_STEEPNESS};

pub use checkpoint::{CheckpointFile, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("language {0} is not known to the discriminator")]
    UnknownLanguage(Language),
    #[error("tag {0} is not in the model's tag set")]
    UnknownTag(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// How the discriminator sees a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguagePooling {
    /// One prediction from the mean of the token features.
    #[default]
    Sentence,
    /// One prediction per token; loss averaged over tokens.
    Token,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    /// Tokens on each side of the centre token.
    pub window: usize,
    pub hidden_dim: usize,
    pub discriminator_hidden_dim: usize,
    /// Steepness `k` of the surrogate sigmoid.
    pub steepness: f64,
    pub use_lateral_inhibition: bool,
    pub use_adversarial: bool,
    pub lambda: f64,
    pub language_pooling: LanguagePooling,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 16,
            window: 1,
            hidden_dim: 32,
            discriminator_hidden_dim: 16,
            steepness: DEFAULT_STEEPNESS,
            use_lateral_inhibition: true,
            use_adversarial: true,
            lambda: 1.0,
            language_pooling: LanguagePooling::Sentence,
            seed: 13,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.embedding_dim == 0 || self.hidden_dim == 0 || self.discriminator_hidden_dim == 0 {
            return bad("dimensions must be >= 1");
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return bad("lambda must be >= 0");
        }
        if self.steepness.is_nan() || self.steepness <= 0.0 {
            return bad("steepness must be > 0");
        }
        Ok(())
    }
}

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

/// Word forms seen in training. Id 0 is padding, id 1 unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    forms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;

    /// Forms in order of first appearance.
    pub fn build(corpus: &Corpus) -> Self {
        let mut forms = vec![PAD.to_string(), UNK.to_string()];
        let mut index: HashMap<String, usize> = forms
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
        for s in &corpus.sentences {
            for t in &s.tokens {
                if !index.contains_key(&t.form) {
                    index.insert(t.form.clone(), forms.len());
                    forms.push(t.form.clone());
                }
            }
        }
        Vocab { forms, index }
    }

    pub fn from_forms(forms: Vec<String>) -> Result<Self, ModelError> {
        if forms.len() < 2 || forms[0] != PAD || forms[1] != UNK {
            return Err(ModelError::Checkpoint(
                "vocabulary must start with <pad>, <unk>".into(),
            ));
        }
        let index: HashMap<String, usize> = forms
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
        if index.len() != forms.len() {
            return Err(ModelError::Checkpoint("duplicate vocabulary entry".into()));
        }
        Ok(Vocab { forms, index })
    }

    pub fn id(&self, form: &str) -> usize {
        self.index.get(form).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    pub fn forms(&self) -> &[String] {
        &self.forms
    }
}

/// Closed tag alphabet: `O` first, then `B-c`, `I-c` for each category in
/// sorted order. Argmax ties resolve to the lowest index in this order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    tags: Vec<Tag>,
}

impl TagSet {
    pub fn build(corpus: &Corpus) -> Result<Self, CorpusError> {
        let mut cats = BTreeSet::new();
        for s in &corpus.sentences {
            for m in s.mwes()? {
                cats.insert(m.category.to_string());
            }
        }
        Ok(Self::from_categories(cats.into_iter()))
    }

    fn from_categories(cats: impl Iterator<Item = String>) -> Self {
        let mut tags = vec![Tag::O];
        for c in cats {
            let cat: crate::corpus::VmweCategory =
                c.parse().expect("category from a parsed corpus");
            tags.push(Tag::B(cat.clone()));
            tags.push(Tag::I(cat));
        }
        TagSet { tags }
    }

    pub fn from_tags(tags: Vec<Tag>) -> Result<Self, ModelError> {
        if tags.first() != Some(&Tag::O) {
            return Err(ModelError::Checkpoint("tag set must start with O".into()));
        }
        Ok(TagSet { tags })
    }

    pub fn index(&self, tag: &Tag) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub embedding: ParamId,
    pub hidden_weight: ParamId,
    pub hidden_bias: ParamId,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagClassifier {
    pub inhibition: Option<LateralInhibitionLayer>,
    pub head_weight: ParamId,
    pub head_bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageDiscriminator {
    pub hidden_weight: ParamId,
    pub hidden_bias: ParamId,
    pub out_weight: ParamId,
    pub out_bias: ParamId,
}

/// What sits between `F` and the discriminator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reversal {
    /// Gradient reversal with coefficient `lambda`.
    Reversed(f64),
    /// Plain connection; the discriminator loss is minimized by `F` too.
    PassThrough,
}

/// Tape nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[n×h]` output of `F`.
    pub features: Var,
    /// `[n×|tags|]`.
    pub tag_logits: Var,
    /// `[1×|languages|]`, or `[n×|languages|]` with token pooling.
    pub language_logits: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub tagset: TagSet,
    pub languages: Vec<Language>,
    pub store: ParamStore,
    pub features: FeatureExtractor,
    pub classifier: TagClassifier,
    pub discriminator: Option<LanguageDiscriminator>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-0.1..=0.1)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

impl Model {
    /// Builds vocabulary, tag set and language set from `train` and
    /// initializes parameters from `config.seed`.
    pub fn new(config: ModelConfig, train: &Corpus) -> Result<Self, ModelError> {
        let tagset = TagSet::build(train)?;
        Self::from_parts(config, Vocab::build(train), tagset, train.languages())
    }

    /// Parameters are created and drawn in a fixed order: `F`, then `C`,
    /// then `LG`. Toggling the discriminator leaves `F` and `C` unchanged.
    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocab,
        tagset: TagSet,
        languages: Vec<Language>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if config.use_adversarial && languages.is_empty() {
            return Err(ModelError::InvalidConfig(
                "adversarial training needs at least one language".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (e, h, w) = (config.embedding_dim, config.hidden_dim, config.window);

        let features = FeatureExtractor {
            embedding: store.add("F.embedding", uniform(&mut rng, &[vocab.len(), e])),
            hidden_weight: store.add("F.hidden.weight", uniform(&mut rng, &[(2 * w + 1) * e, h])),
            hidden_bias: store.add("F.hidden.bias", Tensor::zeros(&[h])),
            window: w,
        };

        let inhibition = if config.use_lateral_inhibition {
            Some(LateralInhibitionLayer::new(
                &mut store,
                "C.inhibition",
                h,
                config.steepness,
            )?)
        } else {
            None
        };
        let classifier = TagClassifier {
            inhibition,
            head_weight: store.add("C.head.weight", uniform(&mut rng, &[h, tagset.len()])),
            head_bias: store.add("C.head.bias", Tensor::zeros(&[tagset.len()])),
        };

        let discriminator = config.use_adversarial.then(|| {
            let dh = config.discriminator_hidden_dim;
            LanguageDiscriminator {
                hidden_weight: store.add("LG.hidden.weight", uniform(&mut rng, &[h, dh])),
                hidden_bias: store.add("LG.hidden.bias", Tensor::zeros(&[dh])),
                out_weight: store.add("LG.out.weight", uniform(&mut rng, &[dh, languages.len()])),
                out_bias: store.add("LG.out.bias", Tensor::zeros(&[languages.len()])),
            }
        });

        Ok(Model {
            config,
            vocab,
            tagset,
            languages,
            store,
            features,
            classifier,
            discriminator,
        })
    }

    /// Parameters of `F`.
    pub fn feature_params(&self) -> Vec<ParamId> {
        let f = &self.features;
        vec![f.embedding, f.hidden_weight, f.hidden_bias]
    }

    /// Parameters of `C`, including the inhibition layer.
    pub fn classifier_params(&self) -> Vec<ParamId> {
        let c = &self.classifier;
        let mut ids = Vec::new();
        if let Some(li) = &c.inhibition {
            ids.extend([li.weight, li.bias]);
        }
        ids.extend([c.head_weight, c.head_bias]);
        ids
    }

    /// Parameters of `LG` (empty without adversarial training).
    pub fn discriminator_params(&self) -> Vec<ParamId> {
        self.discriminator
            .as_ref()
            .map(|d| vec![d.hidden_weight, d.hidden_bias, d.out_weight, d.out_bias])
            .unwrap_or_default()
    }

    pub fn language_index(&self, lang: &Language) -> Result<usize, ModelError> {
        self.languages
            .iter()
            .position(|l| l == lang)
            .ok_or_else(|| ModelError::UnknownLanguage(lang.clone()))
    }

    /// Vocabulary ids of the `2w+1` window positions for every token; `PAD`
    /// outside the sentence. Result is indexed `[offset][token]`.
    pub fn window_ids(&self, s: &Sentence) -> Vec<Vec<usize>> {
        let ids: Vec<usize> = s.tokens.iter().map(|t| self.vocab.id(&t.form)).collect();
        let w = self.features.window as isize;
        (-w..=w)
            .map(|off| {
                (0..ids.len() as isize)
                    .map(|i| {
                        let j = i + off;
                        if j < 0 || j >= ids.len() as isize {
                            Vocab::PAD_ID
                        } else {
                            ids[j as usize]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// `F(s)`: `relu(concat(window embeddings) · W + b)`.
    pub fn extract_features_on(&self, tape: &mut Tape, s: &Sentence) -> Result<Var, ModelError> {
        let table = tape.param(&self.store, self.features.embedding);
        let parts = self
            .window_ids(s)
            .iter()
            .map(|ids| tape.embedding_lookup(table, ids))
            .collect::<Result<Vec<_>, _>>()?;
        let x = tape.concat(&parts)?;
        let w = tape.param(&self.store, self.features.hidden_weight);
        let b = tape.param(&self.store, self.features.hidden_bias);
        let xw = tape.matmul(x, w)?;
        let pre = tape.add(xw, b)?;
        Ok(tape.relu(pre))
    }

    pub fn extract_features(&self, s: &Sentence) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let f = self.extract_features_on(&mut tape, s)?;
        Ok(tape.value(f).clone())
    }

    /// Records the full forward pass. `lambda` is the reversal coefficient on
    /// the discriminator branch; it has no effect on forward values.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        s: &Sentence,
        lambda: f64,
    ) -> Result<ForwardVars, ModelError> {
        self.forward_on_with(tape, s, Reversal::Reversed(lambda))
    }

    pub fn forward_on_with(
        &self,
        tape: &mut Tape,
        s: &Sentence,
        reversal: Reversal,
    ) -> Result<ForwardVars, ModelError> {
        let features = self.extract_features_on(tape, s)?;

        let mut x = features;
        if let Some(li) = &self.classifier.inhibition {
            x = li.forward(tape, &self.store, x)?;
        }
        let hw = tape.param(&self.store, self.classifier.head_weight);
        let hb = tape.param(&self.store, self.classifier.head_bias);
        let xw = tape.matmul(x, hw)?;
        let tag_logits = tape.add(xw, hb)?;

        let language_logits = match &self.discriminator {
            None => None,
            Some(d) => {
                let pooled = match self.config.language_pooling {
                    LanguagePooling::Sentence => tape.mean_rows(features)?,
                    LanguagePooling::Token => features,
                };
                let r = match reversal {
                    Reversal::Reversed(lambda) => tape.grad_reverse(pooled, lambda)?,
                    Reversal::PassThrough => pooled,
                };
                let w1 = tape.param(&self.store, d.hidden_weight);
                let b1 = tape.param(&self.store, d.hidden_bias);
                let h = tape.matmul(r, w1)?;
                let h = tape.add(h, b1)?;
                let h = tape.relu(h);
                let w2 = tape.param(&self.store, d.out_weight);
                let b2 = tape.param(&self.store, d.out_bias);
                let o = tape.matmul(h, w2)?;
                Some(tape.add(o, b2)?)
            }
        };
        Ok(ForwardVars {
            features,
            tag_logits,
            language_logits,
        })
    }

    /// Tag logits and language logits (one row per sentence; token pooling
    /// is averaged) with the configured `lambda`.
    pub fn forward(&self, s: &Sentence) -> Result<(Tensor, Option<Tensor>), ModelError> {
        let mut tape = Tape::new();
        let vars = self.forward_on(&mut tape, s, self.config.lambda)?;
        let lang = vars.language_logits.map(|v| {
            let t = tape.value(v);
            let (n, c) = (t.rows(), t.cols());
            let mut mean = vec![0.0; c];
            for i in 0..n {
                for (m, x) in mean.iter_mut().zip(t.row(i)) {
                    *m += x / n as f64;
                }
            }
            Tensor::matrix(1, c, mean)
        });
        Ok((tape.value(vars.tag_logits).clone(), lang))
    }

    /// Argmax tag per token.
    pub fn predict_tags(&self, s: &Sentence) -> Result<Vec<Tag>, ModelError> {
        let (logits, _) = self.forward(s)?;
        Ok((0..logits.rows())
            .map(|i| self.tagset.tags()[argmax(logits.row(i))].clone())
            .collect())
    }

    pub fn predict_spans(&self, s: &Sentence) -> Result<Vec<MweSpan>, ModelError> {
        Ok(decode_tags(&self.predict_tags(s)?))
    }

    /// Copy of `s` with the MWE column replaced by predictions.
    pub fn tag_sentence(&self, s: &Sentence) -> Result<Sentence, ModelError> {
        Ok(s.with_mwes(&self.predict_spans(s)?))
    }

    pub fn tag_corpus(&self, c: &Corpus) -> Result<Corpus, ModelError> {
        Ok(Corpus {
            header: c.header.clone(),
            sentences: c
                .sentences
                .iter()
                .map(|s| self.tag_sentence(s))
                .collect::<Result<_, _>>()?,
            source_files: c.source_files.clone(),
        })
    }

    /// Discriminator's language guess (`None` without a discriminator).
    pub fn predict_language(&self, s: &Sentence) -> Result<Option<&Language>, ModelError> {
        let (_, lang) = self.forward(s)?;
        Ok(lang.map(|t| &self.languages[argmax(t.row(0))]))
    }

    /// Gold tag indices for `s` under this model's tag set.
    pub fn gold_labels(&self, s: &Sentence) -> Result<Vec<usize>, ModelError> {
        encode_tags(s)?
            .tags
            .iter()
            .map(|t| {
                self.tagset
                    .index(t)
                    .ok_or_else(|| ModelError::UnknownTag(t.to_string()))
            })
            .collect()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
