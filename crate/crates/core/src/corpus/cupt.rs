use super::{extract_mwes, Corpus, CorpusError, ExtraLine, Language, MweTag, Sentence, Token};

pub const GLOBAL_COLUMNS: &str =
    "# global.columns = ID FORM LEMMA UPOS XPOS FEATS HEAD DEPREL DEPS MISC PARSEME:MWE";

const N_COLUMNS: usize = 11;

#[derive(Default)]
struct Block {
    comments: Vec<String>,
    tokens: Vec<Token>,
    extras: Vec<ExtraLine>,
    sent_id: String,
    text: String,
    first_line: usize,
}

impl Block {
    fn is_empty(&self) -> bool {
        self.comments.is_empty() && self.tokens.is_empty() && self.extras.is_empty()
    }

    fn finish(self, language: &Language) -> Result<Sentence, CorpusError> {
        if self.tokens.is_empty() {
            return Err(CorpusError::MalformedLine {
                line: self.first_line,
                found: 0,
            });
        }
        let sentence = Sentence {
            comments: self.comments,
            tokens: self.tokens,
            extras: self.extras,
            sent_id: self.sent_id,
            text: self.text,
            language: language.clone(),
        };
        let mwes = extract_mwes(&sentence)?;
        if mwes
            .iter()
            .enumerate()
            .any(|(n, m)| m.mwe_id as usize != n + 1)
        {
            return Err(CorpusError::NonContiguousMweIds {
                sent_id: sentence.sent_id.clone(),
                ids: mwes.iter().map(|m| m.mwe_id).collect(),
            });
        }
        Ok(sentence)
    }
}

fn parse_mwe_column(value: &str, line: usize) -> Result<(Vec<MweTag>, bool), CorpusError> {
    let bad = || CorpusError::BadMweColumn {
        line,
        value: value.to_string(),
    };
    match value {
        "*" => return Ok((Vec::new(), false)),
        "_" => return Ok((Vec::new(), true)),
        _ => {}
    }
    let mut tags: Vec<MweTag> = Vec::new();
    for part in value.split(';') {
        let (id, cat) = match part.split_once(':') {
            Some((id, cat)) => (id, Some(cat.parse().map_err(|_| bad())?)),
            None => (part, None),
        };
        if id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let mwe_id: u32 = id.parse().map_err(|_| bad())?;
        if mwe_id == 0 || tags.iter().any(|t| t.mwe_id == mwe_id) {
            return Err(bad());
        }
        tags.push(MweTag {
            mwe_id,
            category: cat,
        });
    }
    Ok((tags, false))
}

/// Parses CUPT text. Every sentence is stamped with `language`.
pub fn parse_cupt(text: &str, language: &Language) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    let mut block = Block::default();

    for (n, raw) in text.split('\n').enumerate() {
        let lineno = n + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);

        if line.trim().is_empty() {
            if !block.is_empty() {
                corpus
                    .sentences
                    .push(std::mem::take(&mut block).finish(language)?);
            }
            continue;
        }
        if block.is_empty() {
            block.first_line = lineno;
        }

        if line.starts_with('#') {
            if corpus.header.is_none()
                && corpus.sentences.is_empty()
                && block.is_empty()
                && line.starts_with("# global.columns")
            {
                corpus.header = Some(line.to_string());
                continue;
            }
            if let Some(v) = line.strip_prefix("# sent_id = ") {
                block.sent_id = v.to_string();
            } else if let Some(v) = line.strip_prefix("# text = ") {
                block.text = v.to_string();
            }
            block.comments.push(line.to_string());
            continue;
        }

        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != N_COLUMNS {
            return Err(CorpusError::MalformedLine {
                line: lineno,
                found: cols.len(),
            });
        }
        let id_col = cols[0];
        if id_col.contains('-') || id_col.contains('.') {
            block.extras.push(ExtraLine {
                before_token: block.tokens.len(),
                raw: line.to_string(),
            });
            continue;
        }
        let expected = block.tokens.len() + 1;
        match id_col.parse::<usize>() {
            Ok(id) if id == expected && id_col == id.to_string() => {}
            _ => {
                return Err(CorpusError::NonContiguousIds {
                    line: lineno,
                    expected,
                    found: id_col.to_string(),
                })
            }
        }
        let (mwe_tags, mwe_underspecified) = parse_mwe_column(cols[10], lineno)?;
        block.tokens.push(Token {
            id: expected,
            form: cols[1].to_string(),
            lemma: cols[2].to_string(),
            upos: cols[3].to_string(),
            rest: cols[4..10].iter().map(|c| c.to_string()).collect(),
            mwe_tags,
            mwe_underspecified,
        });
    }
    if !block.is_empty() {
        corpus.sentences.push(block.finish(language)?);
    }
    Ok(corpus)
}

fn mwe_column(tok: &Token) -> String {
    if tok.mwe_tags.is_empty() {
        return if tok.mwe_underspecified { "_" } else { "*" }.to_string();
    }
    tok.mwe_tags
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

fn push_token(out: &mut String, tok: &Token) {
    out.push_str(&tok.id.to_string());
    for col in [&tok.form, &tok.lemma, &tok.upos] {
        out.push('\t');
        out.push_str(col);
    }
    for col in &tok.rest {
        out.push('\t');
        out.push_str(col);
    }
    out.push('\t');
    out.push_str(&mwe_column(tok));
    out.push('\n');
}

/// Writes CUPT text; each sentence is followed by one blank line.
pub fn serialize_cupt(corpus: &Corpus) -> String {
    let mut out = String::new();
    if let Some(h) = &corpus.header {
        out.push_str(h);
        out.push('\n');
    }
    for s in &corpus.sentences {
        for c in &s.comments {
            out.push_str(c);
            out.push('\n');
        }
        let mut extras = s.extras.iter().peekable();
        for (i, tok) in s.tokens.iter().enumerate() {
            while let Some(e) = extras.next_if(|e| e.before_token <= i) {
                out.push_str(&e.raw);
                out.push('\n');
            }
            push_token(&mut out, tok);
        }
        for e in extras {
            out.push_str(&e.raw);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
