//! IOB2 tags with MWE category: `B-<cat>`, `I-<cat>`, `O`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::{extract_mwes, CorpusError, MweInstance, MweSpan, Sentence, VmweCategory};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    O,
    B(VmweCategory),
    I(VmweCategory),
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(c) => write!(f, "B-{c}"),
            Tag::I(c) => write!(f, "I-{c}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid tag {0:?}")]
pub struct TagParseError(pub String);

impl FromStr for Tag {
    type Err = TagParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TagParseError(s.to_string());
        if s == "O" {
            return Ok(Tag::O);
        }
        let (prefix, cat) = s.split_once('-').ok_or_else(err)?;
        let cat: VmweCategory = cat.parse().map_err(|_| err())?;
        match prefix {
            "B" => Ok(Tag::B(cat)),
            "I" => Ok(Tag::I(cat)),
            _ => Err(err()),
        }
    }
}

/// Result of flattening a sentence's MWEs into one tag per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagEncoding {
    pub tags: Vec<Tag>,
    /// MWEs left out of `tags` because a flat tag sequence cannot express
    /// them next to the ones kept. Empty when nothing overlaps.
    pub dropped: Vec<MweInstance>,
}

impl TagEncoding {
    pub fn is_lossless(&self) -> bool {
        self.dropped.is_empty()
    }
}

/// Encodes the MWEs of `s` as IOB2 tags. Gap tokens inside a discontinuous
/// MWE are `O`.
///
/// MWEs are taken in order of first token (ties: smaller id). One is dropped
/// when it shares a token with an already kept MWE, or when its span
/// intersects the span of a kept MWE of the same category (the decoder
/// could not tell their `I` tags apart).
pub fn encode_tags(s: &Sentence) -> Result<TagEncoding, CorpusError> {
    let mut mwes = extract_mwes(s)?;
    mwes.sort_by_key(|m| (m.token_indices[0], m.mwe_id));

    let mut tags = vec![Tag::O; s.len()];
    let mut claimed = vec![false; s.len()];
    let mut kept_spans: Vec<(&VmweCategory, usize, usize)> = Vec::new();
    let mut dropped_ids = Vec::new();

    for m in &mwes {
        let first = m.token_indices[0];
        let last = *m.token_indices.last().unwrap();
        let shares_token = m.token_indices.iter().any(|&i| claimed[i - 1]);
        let ambiguous = kept_spans
            .iter()
            .any(|&(cat, lo, hi)| *cat == m.category && lo <= last && first <= hi);
        if shares_token || ambiguous {
            dropped_ids.push(m.mwe_id);
            continue;
        }
        for (k, &i) in m.token_indices.iter().enumerate() {
            claimed[i - 1] = true;
            tags[i - 1] = if k == 0 {
                Tag::B(m.category.clone())
            } else {
                Tag::I(m.category.clone())
            };
        }
        kept_spans.push((&m.category, first, last));
    }

    let dropped = mwes
        .iter()
        .filter(|m| dropped_ids.contains(&m.mwe_id))
        .cloned()
        .collect();
    Ok(TagEncoding { tags, dropped })
}

/// Decodes a tag sequence into MWE spans, ordered by first token.
///
/// `B-X` opens a new MWE of category X. `I-X` joins the most recently opened
/// MWE of category X, across any number of `O` gaps; with none open, it
/// opens one itself.
pub fn decode_tags(tags: &[Tag]) -> Vec<MweSpan> {
    let mut spans: Vec<MweSpan> = Vec::new();
    let mut open: HashMap<&VmweCategory, usize> = HashMap::new();
    for (i, tag) in tags.iter().enumerate() {
        let pos = i + 1;
        match tag {
            Tag::O => {}
            Tag::B(cat) => {
                open.insert(cat, spans.len());
                spans.push(MweSpan {
                    category: cat.clone(),
                    token_indices: vec![pos],
                });
            }
            Tag::I(cat) => match open.get(cat) {
                Some(&k) => spans[k].token_indices.push(pos),
                None => {
                    open.insert(cat, spans.len());
                    spans.push(MweSpan {
                        category: cat.clone(),
                        token_indices: vec![pos],
                    });
                }
            },
        }
    }
    spans
}
