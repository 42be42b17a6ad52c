//! CUPT (CoNLL-U Plus) corpora with PARSEME verbal MWE annotations.
//!
//! A [`Corpus`] is a list of [`Sentence`]s. Every token carries its
//! memberships in the PARSEME:MWE column; [`MweInstance`]s are the
//! annotated expressions reassembled from those memberships.

mod cupt;
mod stats;
mod tags;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cupt::{parse_cupt, serialize_cupt, GLOBAL_COLUMNS};
pub use stats::{corpus_stats, CorpusStats, LanguageStats};
pub use tags::{decode_tags, encode_tags, Tag, TagEncoding, TagParseError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("line {line}: expected 11 tab-separated columns, found {found}")]
    MalformedLine { line: usize, found: usize },

    #[error("line {line}: cannot parse MWE column {value:?}")]
    BadMweColumn { line: usize, value: String },

    #[error("sentence {sent_id:?}: MWE {mwe_id} has no component carrying its category")]
    DanglingMweId { sent_id: String, mwe_id: u32 },

    #[error("sentence {sent_id:?}: MWE {mwe_id} has its category on more than one token")]
    DuplicateCategory { sent_id: String, mwe_id: u32 },

    #[error("sentence {sent_id:?}: MWE ids {ids:?} do not form the range 1..=m")]
    NonContiguousMweIds { sent_id: String, ids: Vec<u32> },

    #[error("line {line}: token id {found} where {expected} was expected")]
    NonContiguousIds {
        line: usize,
        expected: usize,
        found: String,
    },

    #[error("source {source_name:?} was given with two language codes ({first}, {second})")]
    DuplicateLanguageCode {
        source_name: String,
        first: Language,
        second: Language,
    },

    #[error("invalid language code {0:?}")]
    BadLanguage(String),
}

/// PARSEME verbal MWE category.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VmweCategory {
    /// Verbal idiom.
    Vid,
    /// Light verb construction with a semantically bleached verb.
    LvcFull,
    /// Light verb construction with a causative verb.
    LvcCause,
    /// Inherently reflexive verb.
    Irv,
    /// Any other code (VPC.full, IAV, MVC, ...), kept verbatim.
    Other(String),
}

impl VmweCategory {
    pub fn as_str(&self) -> &str {
        match self {
            VmweCategory::Vid => "VID",
            VmweCategory::LvcFull => "LVC.full",
            VmweCategory::LvcCause => "LVC.cause",
            VmweCategory::Irv => "IRV",
            VmweCategory::Other(code) => code,
        }
    }
}

impl fmt::Display for VmweCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid MWE category {0:?}")]
pub struct CategoryParseError(pub String);

impl FromStr for VmweCategory {
    type Err = CategoryParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "VID" => VmweCategory::Vid,
            "LVC.full" => VmweCategory::LvcFull,
            "LVC.cause" => VmweCategory::LvcCause,
            "IRV" => VmweCategory::Irv,
            other => {
                let bad = other.is_empty()
                    || other
                        .chars()
                        .any(|c| c.is_whitespace() || matches!(c, ':' | ';' | '*' | '-'));
                if bad {
                    return Err(CategoryParseError(other.to_string()));
                }
                VmweCategory::Other(other.to_string())
            }
        })
    }
}

impl Serialize for VmweCategory {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for VmweCategory {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Language code attached to sentences at merge time ("RO", "FR", ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Language(String);

impl Language {
    pub fn new(code: impl Into<String>) -> Result<Self, CorpusError> {
        let code = code.into();
        if code.is_empty() || code.chars().any(char::is_whitespace) {
            return Err(CorpusError::BadLanguage(code));
        }
        Ok(Language(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Language {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Language::new(s)
    }
}

/// One membership from the PARSEME:MWE column: `3` or `1:VID`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MweTag {
    pub mwe_id: u32,
    pub category: Option<VmweCategory>,
}

impl fmt::Display for MweTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.category {
            Some(cat) => write!(f, "{}:{}", self.mwe_id, cat),
            None => write!(f, "{}", self.mwe_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    /// XPOS, FEATS, HEAD, DEPREL, DEPS and MISC, verbatim.
    pub rest: Vec<String>,
    pub mwe_tags: Vec<MweTag>,
    /// The MWE column held `_` (not annotated) rather than `*`.
    pub mwe_underspecified: bool,
}

impl Token {
    /// Lemma used for seen/unseen keys; falls back to the form when the
    /// lemma column is empty (`_`).
    pub fn key_lemma(&self) -> String {
        let lemma = if self.lemma == "_" || self.lemma.is_empty() {
            &self.form
        } else {
            &self.lemma
        };
        lemma.to_lowercase()
    }
}

/// A raw line that is not a regular token (`3-4` ranges, `5.1` empty nodes),
/// stored with the index of the token it precedes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtraLine {
    pub before_token: usize,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    /// Comment lines verbatim, including the leading `#`.
    pub comments: Vec<String>,
    pub tokens: Vec<Token>,
    pub extras: Vec<ExtraLine>,
    pub sent_id: String,
    pub text: String,
    pub language: Language,
}

/// Canonical case-folded lemma multiset (sorted).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LemmaKey(Vec<String>);

impl LemmaKey {
    pub fn from_lemmas<I, S>(lemmas: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v: Vec<String> = lemmas
            .into_iter()
            .map(|l| l.as_ref().to_lowercase())
            .collect();
        v.sort();
        LemmaKey(v)
    }

    pub fn lemmas(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for LemmaKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Category plus member positions, with no lemma information. This is what a
/// tag sequence can express.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MweSpan {
    pub category: VmweCategory,
    /// Strictly increasing 1-based token ids.
    pub token_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MweInstance {
    pub mwe_id: u32,
    pub category: VmweCategory,
    pub token_indices: Vec<usize>,
    pub lemma_key: LemmaKey,
}

impl MweInstance {
    pub fn span(&self) -> MweSpan {
        MweSpan {
            category: self.category.clone(),
            token_indices: self.token_indices.clone(),
        }
    }
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Reassembles annotated MWEs, ordered by id.
    pub fn mwes(&self) -> Result<Vec<MweInstance>, CorpusError> {
        extract_mwes(self)
    }

    /// Copy of this sentence whose MWE column is replaced by `spans`. Ids are
    /// assigned 1..=m in order of first member token.
    pub fn with_mwes(&self, spans: &[MweSpan]) -> Sentence {
        let mut ordered: Vec<&MweSpan> = spans
            .iter()
            .filter(|s| !s.token_indices.is_empty())
            .collect();
        ordered.sort_by(|a, b| a.token_indices.cmp(&b.token_indices));

        let mut out = self.clone();
        for tok in &mut out.tokens {
            tok.mwe_tags.clear();
            tok.mwe_underspecified = false;
        }
        for (n, span) in ordered.into_iter().enumerate() {
            let mwe_id = n as u32 + 1;
            for (k, &idx) in span.token_indices.iter().enumerate() {
                if let Some(tok) = out.tokens.get_mut(idx - 1) {
                    tok.mwe_tags.push(MweTag {
                        mwe_id,
                        category: (k == 0).then(|| span.category.clone()),
                    });
                }
            }
        }
        out
    }
}

/// One [`MweInstance`] per distinct MWE id, in id order.
pub fn extract_mwes(s: &Sentence) -> Result<Vec<MweInstance>, CorpusError> {
    struct Acc {
        category: Option<VmweCategory>,
        members: Vec<usize>,
    }
    let mut by_id: BTreeMap<u32, Acc> = BTreeMap::new();
    for tok in &s.tokens {
        for tag in &tok.mwe_tags {
            let acc = by_id.entry(tag.mwe_id).or_insert(Acc {
                category: None,
                members: Vec::new(),
            });
            if let Some(cat) = &tag.category {
                if acc.category.is_some() {
                    return Err(CorpusError::DuplicateCategory {
                        sent_id: s.sent_id.clone(),
                        mwe_id: tag.mwe_id,
                    });
                }
                acc.category = Some(cat.clone());
            }
            if acc.members.last() != Some(&tok.id) {
                acc.members.push(tok.id);
            }
        }
    }

    by_id
        .into_iter()
        .map(|(mwe_id, acc)| {
            let category = acc.category.ok_or_else(|| CorpusError::DanglingMweId {
                sent_id: s.sent_id.clone(),
                mwe_id,
            })?;
            let lemma_key =
                LemmaKey::from_lemmas(acc.members.iter().map(|&i| s.tokens[i - 1].key_lemma()));
            Ok(MweInstance {
                mwe_id,
                category,
                token_indices: acc.members,
                lemma_key,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    /// `# global.columns = ...` line found at the top of the file, if any.
    pub header: Option<String>,
    pub sentences: Vec<Sentence>,
    pub source_files: Vec<String>,
}

impl Corpus {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Languages present, sorted.
    pub fn languages(&self) -> Vec<Language> {
        let set: BTreeSet<&Language> = self.sentences.iter().map(|s| &s.language).collect();
        set.into_iter().cloned().collect()
    }

    pub fn with_source(mut self, name: impl Into<String>) -> Self {
        self.source_files.push(name.into());
        self
    }
}

/// Concatenates corpora, stamping every sentence with its part's language.
///
/// Several parts may share a language (train + dev of one language). A source
/// file that shows up under two different codes is rejected.
pub fn merge_corpora(parts: Vec<(Corpus, Language)>) -> Result<Corpus, CorpusError> {
    let mut seen_sources: BTreeMap<String, Language> = BTreeMap::new();
    let mut merged = Corpus::default();
    for (corpus, lang) in parts {
        for src in &corpus.source_files {
            match seen_sources.get(src) {
                Some(prev) if *prev != lang => {
                    return Err(CorpusError::DuplicateLanguageCode {
                        source_name: src.clone(),
                        first: prev.clone(),
                        second: lang,
                    })
                }
                _ => {
                    seen_sources.insert(src.clone(), lang.clone());
                }
            }
        }
        if merged.header.is_none() {
            merged.header = corpus.header;
        }
        merged.source_files.extend(corpus.source_files);
        merged
            .sentences
            .extend(corpus.sentences.into_iter().map(|mut s| {
                s.language = lang.clone();
                s
            }));
    }
    Ok(merged)
}

/// Lemma keys of every annotated MWE in `train`. A test MWE is unseen iff its
/// key is absent from this set. Category is ignored.
pub fn unseen_keys(train: &Corpus) -> Result<HashSet<LemmaKey>, CorpusError> {
    let mut keys = HashSet::new();
    for s in &train.sentences {
        for m in extract_mwes(s)? {
            keys.insert(m.lemma_key);
        }
    }
    Ok(keys)
}
