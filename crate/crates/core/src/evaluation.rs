//! MWE-based scoring: a predicted MWE is correct only if its token set equals
//! that of a gold MWE. Scores are reported over all MWEs ("global") and over
//! MWEs whose lemma multiset never occurs annotated in the training corpus
//! ("unseen").

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{unseen_keys, Corpus, CorpusError, LemmaKey, MweInstance, Sentence};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold has {gold} sentences but prediction has {pred}")]
    AlignmentMismatch { gold: usize, pred: usize },
    #[error("sentence {sentence}: {detail}")]
    TokenizationMismatch { sentence: usize, detail: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Token sets must match; categories are ignored.
    #[default]
    CategoryInsensitive,
    /// Token sets and categories must both match.
    CategorySensitive,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub true_positive: usize,
}

impl Counts {
    fn add(&mut self, o: Counts) {
        self.gold += o.gold;
        self.predicted += o.predicted;
        self.true_positive += o.true_positive;
    }

    pub fn scores(&self) -> Scores {
        let pct = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                100.0 * num as f64 / den as f64
            }
        };
        let precision = pct(self.true_positive, self.predicted);
        let recall = pct(self.true_positive, self.gold);
        Scores {
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

/// Precision, recall and F1 as percentages at full precision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Harmonic mean `2PR/(P+R)`, 0 when `P + R = 0`.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Rounds a non-negative percentage half-up to two decimals.
pub fn round2(x: f64) -> f64 {
    ((x * 100.0) + 0.5 + 1e-9).floor() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mode: MatchMode,
    pub global: Scores,
    pub unseen: Scores,
    pub global_counts: Counts,
    pub unseen_counts: Counts,
}

/// Exact-set pairing between the MWEs of one sentence pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub gold: Vec<MweInstance>,
    pub pred: Vec<MweInstance>,
    /// `(gold index, pred index)` of true positives.
    pub pairs: Vec<(usize, usize)>,
}

fn check_tokens(gold: &Sentence, pred: &Sentence, sentence: usize) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::TokenizationMismatch {
            sentence,
            detail: format!("{} gold tokens vs {} predicted", gold.len(), pred.len()),
        });
    }
    if let Some(t) = gold
        .tokens
        .iter()
        .zip(&pred.tokens)
        .find(|(g, p)| g.form != p.form)
    {
        return Err(EvalError::TokenizationMismatch {
            sentence,
            detail: format!("token {}: {:?} vs {:?}", t.0.id, t.0.form, t.1.form),
        });
    }
    Ok(())
}

fn match_at(
    gold: &Sentence,
    pred: &Sentence,
    mode: MatchMode,
    sentence: usize,
) -> Result<Matching, EvalError> {
    check_tokens(gold, pred, sentence)?;
    let gold_mwes = gold.mwes()?;
    // Lemma keys come from the gold tokens so that matched pairs always
    // agree on seen/unseen status, even when the prediction file has no lemmas.
    let pred_mwes: Vec<MweInstance> = pred
        .mwes()?
        .into_iter()
        .map(|mut m| {
            m.lemma_key = LemmaKey::from_lemmas(
                m.token_indices
                    .iter()
                    .map(|&i| gold.tokens[i - 1].key_lemma()),
            );
            m
        })
        .collect();

    let mut used = vec![false; gold_mwes.len()];
    let mut pairs = Vec::new();
    for (pi, p) in pred_mwes.iter().enumerate() {
        let hit = gold_mwes.iter().enumerate().position(|(gi, g)| {
            !used[gi]
                && g.token_indices == p.token_indices
                && (mode == MatchMode::CategoryInsensitive || g.category == p.category)
        });
        if let Some(gi) = hit {
            used[gi] = true;
            pairs.push((gi, pi));
        }
    }
    Ok(Matching {
        gold: gold_mwes,
        pred: pred_mwes,
        pairs,
    })
}

/// Pairs predicted MWEs with gold MWEs of identical token sets.
pub fn match_mwes(
    gold: &Sentence,
    pred: &Sentence,
    mode: MatchMode,
) -> Result<Matching, EvalError> {
    match_at(gold, pred, mode, 0)
}

/// Scores `pred` against `gold`; `train` defines which MWEs are seen.
pub fn evaluate(
    gold: &Corpus,
    pred: &Corpus,
    train: &Corpus,
    mode: MatchMode,
) -> Result<EvalResult, EvalError> {
    evaluate_with_keys(gold, pred, &unseen_keys(train)?, mode)
}

/// [`evaluate`] with a precomputed set of seen lemma keys.
pub fn evaluate_with_keys(
    gold: &Corpus,
    pred: &Corpus,
    seen: &HashSet<LemmaKey>,
    mode: MatchMode,
) -> Result<EvalResult, EvalError> {
    if gold.sentences.len() != pred.sentences.len() {
        return Err(EvalError::AlignmentMismatch {
            gold: gold.sentences.len(),
            pred: pred.sentences.len(),
        });
    }
    let mut global = Counts::default();
    let mut unseen = Counts::default();
    for (i, (g, p)) in gold.sentences.iter().zip(&pred.sentences).enumerate() {
        let m = match_at(g, p, mode, i + 1)?;
        let is_unseen = |x: &MweInstance| !seen.contains(&x.lemma_key);
        global.add(Counts {
            gold: m.gold.len(),
            predicted: m.pred.len(),
            true_positive: m.pairs.len(),
        });
        unseen.add(Counts {
            gold: m.gold.iter().filter(|x| is_unseen(x)).count(),
            predicted: m.pred.iter().filter(|x| is_unseen(x)).count(),
            true_positive: m
                .pairs
                .iter()
                .filter(|&&(gi, _)| is_unseen(&m.gold[gi]))
                .count(),
        });
    }
    Ok(EvalResult {
        mode,
        global: global.scores(),
        unseen: unseen.scores(),
        global_counts: global,
        unseen_counts: unseen,
    })
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = |s: &Scores| {
            format!(
                "{:>7.2} {:>7.2} {:>7.2}",
                round2(s.precision),
                round2(s.recall),
                round2(s.f1)
            )
        };
        writeln!(f, "| {:^23} | {:^23} |", "Global MWE", "Unseen MWE")?;
        writeln!(
            f,
            "| {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7} |",
            "P", "R", "F1", "P", "R", "F1"
        )?;
        writeln!(f, "| {} | {} |", row(&self.global), row(&self.unseen))?;
        let c = |c: &Counts| {
            format!(
                "gold={} pred={} tp={}",
                c.gold, c.predicted, c.true_positive
            )
        };
        writeln!(f, "global: {}", c(&self.global_counts))?;
        write!(f, "unseen: {}", c(&self.unseen_counts))
    }
}
