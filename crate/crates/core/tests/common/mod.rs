//! Generators shared by the integration tests.
#![allow(dead_code)]

use mwe_core::corpus::{parse_cupt, Corpus, Language, Sentence, GLOBAL_COLUMNS};
use proptest::prelude::*;

pub const CATEGORIES: [&str; 5] = ["VID", "LVC.full", "LVC.cause", "IRV", "IAV"];
const FORMS: [&str; 10] = [
    "fura",
    "Somnul",
    "dă",
    "citire",
    "se",
    "GÂNDEȘTE",
    "prend",
    "décision",
    "la",
    "foc",
];

pub fn lang(code: &str) -> Language {
    Language::new(code).unwrap()
}

/// One token line with a given MWE column.
pub fn token_line(id: usize, form: &str, lemma: &str, mwe: &str) -> String {
    format!("{id}\t{form}\t{lemma}\tVERB\t_\t_\t0\tdep\t_\t_\t{mwe}")
}

/// A generated sentence with disjoint MWEs: `groups[i]` is the group of token
/// `i` (if any) and `categories[g]` the category of group `g`.
#[derive(Debug, Clone)]
pub struct GenSentence {
    pub forms: Vec<(String, String)>,
    pub groups: Vec<Option<usize>>,
    pub categories: Vec<&'static str>,
}

impl GenSentence {
    /// Member token indices (1-based) of each non-empty group, by first token.
    pub fn spans(&self) -> Vec<(&'static str, Vec<usize>)> {
        let mut out: Vec<(&'static str, Vec<usize>)> = Vec::new();
        let mut order: Vec<usize> = Vec::new();
        for (i, g) in self.groups.iter().enumerate() {
            if let Some(g) = *g {
                match order.iter().position(|&o| o == g) {
                    Some(p) => out[p].1.push(i + 1),
                    None => {
                        order.push(g);
                        out.push((self.categories[g], vec![i + 1]));
                    }
                }
            }
        }
        out
    }

    pub fn to_cupt(&self, sent_id: &str) -> String {
        let spans = self.spans();
        let mut text = format!("# source_sent_id = {sent_id}\n");
        for (i, (form, lemma)) in self.forms.iter().enumerate() {
            let mut parts = Vec::new();
            for (n, (cat, toks)) in spans.iter().enumerate() {
                if toks[0] == i + 1 {
                    parts.push(format!("{}:{cat}", n + 1));
                } else if toks.contains(&(i + 1)) {
                    parts.push(format!("{}", n + 1));
                }
            }
            let col = if parts.is_empty() {
                "*".to_string()
            } else {
                parts.join(";")
            };
            text.push_str(&token_line(i + 1, form, lemma, &col));
            text.push('\n');
        }
        text.push('\n');
        text
    }

    pub fn parse(&self) -> Sentence {
        parse_cupt(&self.to_cupt("gen"), &lang("RO"))
            .unwrap()
            .sentences
            .remove(0)
    }
}

fn word() -> impl Strategy<Value = (String, String)> {
    (0..FORMS.len(), any::<bool>()).prop_map(|(i, lemma_blank)| {
        let f = FORMS[i].to_string();
        let l = if lemma_blank {
            "_".into()
        } else {
            f.to_lowercase()
        };
        (f, l)
    })
}

/// Sentences whose MWEs share no token and whose same-category MWEs have
/// disjoint spans, with gaps arising naturally from interleaved groups.
pub fn disjoint_sentence() -> impl Strategy<Value = GenSentence> {
    (1usize..14)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(word(), n),
                prop::collection::vec(prop::option::weighted(0.6, 0usize..4), n),
                prop::collection::vec(prop::sample::select(&CATEGORIES[..]), 4),
            )
        })
        .prop_map(|(forms, mut groups, categories)| {
            // drop groups whose span meets an earlier group of the same category
            let span = |groups: &[Option<usize>], g: usize| {
                let idx: Vec<usize> = (0..groups.len())
                    .filter(|&i| groups[i] == Some(g))
                    .collect();
                idx.first().map(|&a| (a, *idx.last().unwrap()))
            };
            for g in 0..4 {
                let Some((a, b)) = span(&groups, g) else {
                    continue;
                };
                let clash = (0..g).any(|h| {
                    categories[h] == categories[g]
                        && span(&groups, h).is_some_and(|(c, d)| a <= d && c <= b)
                });
                if clash {
                    for x in groups.iter_mut().filter(|x| **x == Some(g)) {
                        *x = None;
                    }
                }
            }
            GenSentence {
                forms,
                groups,
                categories,
            }
        })
}

/// Well-formed CUPT text exercising overlaps, `_` columns, comments,
/// multiword-token ranges and empty nodes.
pub fn cupt_text() -> impl Strategy<Value = String> {
    let sentence = (
        disjoint_sentence(),
        any::<bool>(),
        prop::option::of(0usize..14),
        prop::option::of(0usize..14),
        prop::option::of((0usize..14, prop::sample::select(&CATEGORIES[..]))),
    );
    (any::<bool>(), prop::collection::vec(sentence, 0..4)).prop_map(|(header, sents)| {
        let mut out = String::new();
        if header {
            out.push_str(GLOBAL_COLUMNS);
            out.push('\n');
        }
        for (k, (g, underspecified, range_at, empty_at, extra_mwe)) in sents.into_iter().enumerate()
        {
            let n = g.forms.len();
            let spans = g.spans();
            // an extra single-token MWE stacked on an existing one
            let extra = extra_mwe.filter(|(i, _)| *i < n).map(|(i, c)| (i + 1, c));
            out.push_str(&format!("# source_sent_id = . . gen-{k}\n"));
            out.push_str(&format!(
                "# text = {}\n",
                g.forms
                    .iter()
                    .map(|f| f.0.as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            ));
            for i in 1..=n {
                if range_at == Some(i - 1) && i < n {
                    out.push_str(&format!("{i}-{}\tdu\t_\t_\t_\t_\t_\t_\t_\t_\t_\n", i + 1));
                }
                let mut parts = Vec::new();
                for (m, (cat, toks)) in spans.iter().enumerate() {
                    if toks[0] == i {
                        parts.push(format!("{}:{cat}", m + 1));
                    } else if toks.contains(&i) {
                        parts.push(format!("{}", m + 1));
                    }
                }
                if let Some((j, c)) = extra {
                    if j == i {
                        parts.push(format!("{}:{c}", spans.len() + 1));
                    }
                }
                let col = if parts.is_empty() {
                    if underspecified {
                        "_".to_string()
                    } else {
                        "*".to_string()
                    }
                } else {
                    parts.join(";")
                };
                let (f, l) = &g.forms[i - 1];
                out.push_str(&token_line(i, f, l, &col));
                out.push('\n');
                if empty_at == Some(i - 1) {
                    out.push_str(&format!(
                        "{i}.1\tgol\tgol\tVERB\t_\t_\t_\t_\t0:root\t_\t_\n"
                    ));
                }
            }
            out.push('\n');
        }
        out
    })
}

pub fn corpus_of(text: &str, code: &str) -> Corpus {
    parse_cupt(text, &lang(code)).unwrap()
}
