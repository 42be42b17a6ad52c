use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::{extract_mwes, Corpus, CorpusError};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LanguageStats {
    pub sentences: usize,
    pub tokens: usize,
    pub mwes: usize,
    pub mwes_by_category: BTreeMap<String, usize>,
}

impl LanguageStats {
    fn absorb(&mut self, other: &LanguageStats) {
        self.sentences += other.sentences;
        self.tokens += other.tokens;
        self.mwes += other.mwes;
        for (cat, n) in &other.mwes_by_category {
            *self.mwes_by_category.entry(cat.clone()).or_default() += n;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub total: LanguageStats,
    pub by_language: BTreeMap<String, LanguageStats>,
}

pub fn corpus_stats(c: &Corpus) -> Result<CorpusStats, CorpusError> {
    let mut stats = CorpusStats::default();
    for s in &c.sentences {
        let mut one = LanguageStats {
            sentences: 1,
            tokens: s.len(),
            ..Default::default()
        };
        for m in extract_mwes(s)? {
            one.mwes += 1;
            *one.mwes_by_category
                .entry(m.category.to_string())
                .or_default() += 1;
        }
        stats
            .by_language
            .entry(s.language.to_string())
            .or_default()
            .absorb(&one);
        stats.total.absorb(&one);
    }
    Ok(stats)
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = self
            .by_language
            .iter()
            .map(|(l, s)| (l.as_str(), s))
            .chain(std::iter::once(("ALL", &self.total)));
        writeln!(
            f,
            "{:<8} {:>10} {:>10} {:>8}  categories",
            "lang", "sentences", "tokens", "mwes"
        )?;
        for (lang, s) in rows {
            let cats: Vec<String> = s
                .mwes_by_category
                .iter()
                .map(|(c, n)| format!("{c}={n}"))
                .collect();
            writeln!(
                f,
                "{:<8} {:>10} {:>10} {:>8}  {}",
                lang,
                s.sentences,
                s.tokens,
                s.mwes,
                cats.join(" ")
            )?;
        }
        Ok(())
    }
}
