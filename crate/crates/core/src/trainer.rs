//! Joint SGD over the feature extractor, tag classifier and language
//! discriminator.
//!
//! One step minimizes `L_y + L_lg` with a single backward pass. Because the
//! discriminator reads `F` through gradient reversal, the resulting updates are
//!
//! ```text
//! θ_C  ← θ_C  − α ∂L_y/∂θ_C
//! θ_LG ← θ_LG − α ∂L_lg/∂θ_LG
//! θ_F  ← θ_F  − α (∂L_y/∂θ_F − λ ∂L_lg/∂θ_F)
//! ```

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::corpus::{unseen_keys, Corpus, Sentence};
use crate::evaluation::{evaluate_with_keys, EvalError, MatchMode};
use crate::model::{LanguagePooling, Model, ModelError, Reversal};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    #[default]
    Constant,
    /// `λ_max · (2 / (1 + exp(−10 p)) − 1)` over training progress `p`.
    DannRamp,
}

pub fn lambda_at(schedule: LambdaSchedule, progress: f64, lambda_max: f64) -> f64 {
    match schedule {
        LambdaSchedule::Constant => lambda_max,
        LambdaSchedule::DannRamp => lambda_max * (2.0 / (1.0 + (-10.0 * progress).exp()) - 1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub lambda: f64,
    pub lambda_schedule: LambdaSchedule,
    pub epochs: usize,
    /// Sentences per batch.
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Rescale the gradient to this global L2 norm when it is larger.
    pub clip_norm: Option<f64>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 0.1,
            lambda: 1.0,
            lambda_schedule: LambdaSchedule::Constant,
            epochs: 30,
            batch_size: 8,
            seed: 7,
            shuffle: true,
            clip_norm: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be > 0");
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return bad("lambda must be >= 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if matches!(self.clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return bad("clip_norm must be > 0");
        }
        Ok(())
    }
}

/// Which loss terms feed the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub tag: bool,
    pub language: bool,
}

impl LossTerms {
    pub const BOTH: LossTerms = LossTerms {
        tag: true,
        language: true,
    };
    pub const TAG: LossTerms = LossTerms {
        tag: true,
        language: false,
    };
    pub const LANGUAGE: LossTerms = LossTerms {
        tag: false,
        language: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    /// Mean token cross-entropy of the tag classifier.
    pub tag_loss: f64,
    /// Mean sentence cross-entropy of the discriminator.
    pub language_loss: Option<f64>,
}

/// Adds the gradients of the selected loss terms for `batch` into the model's
/// accumulators (which are not cleared first).
pub fn batch_gradients(
    model: &mut Model,
    batch: &[&Sentence],
    reversal: Reversal,
    terms: LossTerms,
) -> Result<StepLosses, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let total_tokens: usize = batch.iter().map(|s| s.len()).sum();
    let has_lg = model.discriminator.is_some();

    let mut tape = Tape::new();
    let mut tag_terms: Vec<Var> = Vec::with_capacity(batch.len());
    let mut lang_terms: Vec<Var> = Vec::with_capacity(batch.len());
    for s in batch {
        let vars = model.forward_on_with(&mut tape, s, reversal)?;
        let labels = model.gold_labels(s)?;
        let ce = tape
            .softmax_cross_entropy(vars.tag_logits, &labels)
            .map_err(ModelError::from)?;
        tag_terms.push(tape.scale(ce, s.len() as f64 / total_tokens as f64));

        if let Some(logits) = vars.language_logits {
            let lang = model.language_index(&s.language)?;
            let lang_labels = match model.config.language_pooling {
                LanguagePooling::Sentence => vec![lang],
                LanguagePooling::Token => vec![lang; s.len()],
            };
            let ce = tape
                .softmax_cross_entropy(logits, &lang_labels)
                .map_err(ModelError::from)?;
            lang_terms.push(tape.scale(ce, 1.0 / batch.len() as f64));
        }
    }

    let tag_loss = sum_vars(&mut tape, &tag_terms)?;
    let lang_loss = if has_lg {
        Some(sum_vars(&mut tape, &lang_terms)?)
    } else {
        None
    };
    let losses = StepLosses {
        tag_loss: tape.value(tag_loss).data()[0],
        language_loss: lang_loss.map(|v| tape.value(v).data()[0]),
    };

    let objective = match (terms.tag, terms.language.then_some(lang_loss).flatten()) {
        (true, Some(l)) => Some(tape.add(tag_loss, l).map_err(ModelError::from)?),
        (true, None) => Some(tag_loss),
        (false, Some(l)) => Some(l),
        (false, None) => None,
    };
    if let Some(obj) = objective {
        tape.backward(obj, &mut model.store)
            .map_err(ModelError::from)?;
    }
    Ok(losses)
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var, TrainError> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v).map_err(ModelError::from)?;
    }
    Ok(acc)
}

fn clip_gradients(model: &mut Model, max_norm: f64) {
    let norm = model
        .store
        .iter()
        .flat_map(|(_, p)| p.grad.data().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            for g in model.store.get_mut(id).grad.data_mut() {
                *g *= scale;
            }
        }
    }
}

/// One SGD step on `batch` with reversal coefficient `lambda`.
pub fn train_step(
    model: &mut Model,
    batch: &[&Sentence],
    cfg: &TrainerConfig,
    lambda: f64,
) -> Result<StepLosses, TrainError> {
    model.store.zero_grad();
    let losses = batch_gradients(model, batch, Reversal::Reversed(lambda), LossTerms::BOTH)?;
    if let Some(c) = cfg.clip_norm {
        clip_gradients(model, c);
    }
    let ids: Vec<_> = model.store.ids().collect();
    model.store.sgd_step(&ids, cfg.learning_rate);
    Ok(losses)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DevScores {
    pub global_f1: f64,
    pub unseen_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub tag_loss: f64,
    pub language_loss: Option<f64>,
    /// Discriminator accuracy on the training corpus after the epoch.
    pub language_accuracy: Option<f64>,
    /// Reversal coefficient of the epoch's last step.
    pub lambda: f64,
    pub dev: Option<DevScores>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_dev: Option<DevScores>,
}

impl TrainingReport {
    /// One JSON object per epoch, one per line.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("epoch record serializes") + "\n")
            .collect()
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            epochs: usize,
            final_epoch: Option<&'a EpochRecord>,
            best_epoch: Option<usize>,
            best_dev: Option<DevScores>,
        }
        serde_json::to_string_pretty(&Summary {
            epochs: self.epochs.len(),
            final_epoch: self.epochs.last(),
            best_epoch: self.best_epoch,
            best_dev: self.best_dev,
        })
        .expect("summary serializes")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainingReport,
    /// Snapshot with the best dev global F1 (earliest on ties).
    pub best_model: Option<Model>,
}

/// Fraction of sentences whose language the discriminator gets right.
pub fn language_accuracy(model: &Model, corpus: &Corpus) -> Result<Option<f64>, ModelError> {
    if model.discriminator.is_none() || corpus.sentences.is_empty() {
        return Ok(None);
    }
    let mut correct = 0usize;
    for s in &corpus.sentences {
        if model.predict_language(s)? == Some(&s.language) {
            correct += 1;
        }
    }
    Ok(Some(correct as f64 / corpus.sentences.len() as f64))
}

pub fn train(
    model: &mut Model,
    train_corpus: &Corpus,
    dev: Option<&Corpus>,
    cfg: &TrainerConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_corpus.sentences.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let seen = unseen_keys(train_corpus).map_err(ModelError::from)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_corpus.sentences.len()).collect();
    let batches_per_epoch = order.len().div_ceil(cfg.batch_size);
    let total_steps = (batches_per_epoch * cfg.epochs) as f64;

    let mut report = TrainingReport::default();
    let mut best_model = None;
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut tag_sum = 0.0;
        let mut lang_sum = 0.0;
        let mut lambda = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sentence> = chunk.iter().map(|&i| &train_corpus.sentences[i]).collect();
            lambda = lambda_at(cfg.lambda_schedule, step as f64 / total_steps, cfg.lambda);
            let l = train_step(model, &batch, cfg, lambda)?;
            tag_sum += l.tag_loss;
            lang_sum += l.language_loss.unwrap_or(0.0);
            step += 1;
        }
        let tag_loss = tag_sum / batches_per_epoch as f64;
        let language_loss = model
            .discriminator
            .is_some()
            .then(|| lang_sum / batches_per_epoch as f64);
        if !tag_loss.is_finite() || !language_loss.unwrap_or(0.0).is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }

        let dev_scores = match dev {
            Some(d) => {
                let pred = model.tag_corpus(d)?;
                let r = evaluate_with_keys(d, &pred, &seen, MatchMode::default())?;
                Some(DevScores {
                    global_f1: r.global.f1,
                    unseen_f1: r.unseen.f1,
                })
            }
            None => None,
        };
        if let Some(ds) = dev_scores {
            let better = report
                .best_dev
                .is_none_or(|b: DevScores| ds.global_f1 > b.global_f1);
            if better {
                report.best_dev = Some(ds);
                report.best_epoch = Some(epoch);
                best_model = Some(model.clone());
            }
        }

        report.epochs.push(EpochRecord {
            epoch,
            tag_loss,
            language_loss,
            language_accuracy: language_accuracy(model, train_corpus)?,
            lambda,
            dev: dev_scores,
        });
    }
    Ok(TrainOutcome { report, best_model })
}
