//! Corpus ingestion, validation and serialization.
//!
//! One UTF-8 JSON object per line:
//! `{"tokens": [...], "comparator_index": 3, "is_simile": true, "tags": ["O", "B-T", ...]}`

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iobes::{self, Label, Span, SpanKind};
use crate::vocab::Vocab;

/// Sentences longer than this are not used.
pub const MAX_TOKENS: usize = 120;

/// One annotated sentence with string tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub comparator_index: usize,
    pub is_simile: bool,
    pub tags: Vec<Label>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    tokens: Vec<String>,
    comparator_index: usize,
    is_simile: bool,
    tags: Vec<String>,
}

impl Sentence {
    /// Checks every sentence invariant, describing the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.tokens.len();
        if n == 0 {
            return Err("sentence has no tokens".into());
        }
        if n > MAX_TOKENS {
            return Err(format!("sentence has {n} tokens, limit is {MAX_TOKENS}"));
        }
        if self.tags.len() != n {
            return Err(format!("{} tags for {n} tokens", self.tags.len()));
        }
        if self.comparator_index >= n {
            return Err(format!(
                "comparator index {} out of range for {n} tokens",
                self.comparator_index
            ));
        }
        if let Err((pos, msg)) = iobes::validate(&self.tags) {
            return Err(format!("tag {pos}: {msg}"));
        }
        if !self.is_simile && self.tags.iter().any(|&t| t != Label::O) {
            return Err("literal sentence carries component tags".into());
        }
        Ok(())
    }

    pub fn spans(&self) -> Vec<Span> {
        iobes::spans_from_tags(&self.tags)
    }

    pub fn to_json(&self) -> String {
        let rec = Record {
            tokens: self.tokens.clone(),
            comparator_index: self.comparator_index,
            is_simile: self.is_simile,
            tags: self.tags.iter().map(Label::to_string).collect(),
        };
        serde_json::to_string(&rec).expect("record serializes")
    }

    pub fn instance(&self, vocab: &Vocab) -> SentenceInstance {
        SentenceInstance {
            tokens: vocab.encode(&self.tokens),
            comparator_index: self.comparator_index,
            is_simile: self.is_simile,
            tags: self.tags.clone(),
        }
    }
}

/// A sentence mapped to vocabulary ids; the unit the model trains on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceInstance {
    pub tokens: Vec<usize>,
    pub comparator_index: usize,
    pub is_simile: bool,
    pub tags: Vec<Label>,
}

impl SentenceInstance {
    pub fn new(
        tokens: Vec<usize>,
        comparator_index: usize,
        is_simile: bool,
        tags: Vec<Label>,
    ) -> Result<Self> {
        let inst = Self {
            tokens,
            comparator_index,
            is_simile,
            tags,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// An unlabelled instance for prediction.
    pub fn unlabelled(tokens: Vec<usize>, comparator_index: usize) -> Result<Self> {
        let n = tokens.len();
        Self::new(tokens, comparator_index, false, vec![Label::O; n])
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        let fail = |m: String| Err(Error::InvalidInstance(m));
        if n == 0 || n > MAX_TOKENS {
            return fail(format!("length {n} outside 1..={MAX_TOKENS}"));
        }
        if self.comparator_index >= n {
            return fail(format!(
                "comparator index {} out of range",
                self.comparator_index
            ));
        }
        if self.tags.len() != n {
            return fail(format!("{} tags for {n} tokens", self.tags.len()));
        }
        if let Err((pos, msg)) = iobes::validate(&self.tags) {
            return fail(format!("tag {pos}: {msg}"));
        }
        if !self.is_simile && self.tags.iter().any(|&t| t != Label::O) {
            return fail("literal sentence carries component tags".into());
        }
        Ok(())
    }

    pub fn tag_ids(&self) -> Vec<usize> {
        self.tags.iter().map(|t| t.id()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Synthetic { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub provenance: Provenance,
}

/// Dataset statistics in the shape of the benchmark's summary table.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub simile_sentences: usize,
    pub literal_sentences: usize,
    pub tokens: usize,
    pub tenors: usize,
    pub vehicles: usize,
    pub unique_tenors: usize,
    pub unique_vehicles: usize,
    pub tenor_vehicle_pairs: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            let _ = writeln!(out, "{}", s.to_json());
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// Vocabulary over every token of the corpus.
    pub fn vocab(&self, min_freq: usize) -> Vocab {
        Vocab::build(self.sentences.iter().map(|s| s.tokens.as_slice()), min_freq)
    }

    pub fn stats(&self) -> CorpusStats {
        let mut st = CorpusStats {
            sentences: self.sentences.len(),
            ..Default::default()
        };
        let mut tenor_set = HashSet::new();
        let mut vehicle_set = HashSet::new();
        for s in &self.sentences {
            st.tokens += s.tokens.len();
            if s.is_simile {
                st.simile_sentences += 1;
            } else {
                st.literal_sentences += 1;
            }
            let spans = s.spans();
            let (mut t, mut v) = (0, 0);
            for sp in spans {
                let text = s.tokens[sp.start..=sp.end].join(" ");
                match sp.kind {
                    SpanKind::Tenor => {
                        t += 1;
                        tenor_set.insert(text);
                    }
                    SpanKind::Vehicle => {
                        v += 1;
                        vehicle_set.insert(text);
                    }
                }
            }
            st.tenors += t;
            st.vehicles += v;
            st.tenor_vehicle_pairs += t * v;
        }
        st.unique_tenors = tenor_set.len();
        st.unique_vehicles = vehicle_set.len();
        st
    }
}

/// Parses and validates a JSON-lines corpus. Blank lines are ignored and
/// sentences longer than [`MAX_TOKENS`] are skipped.
pub fn parse_corpus_str(text: &str) -> Result<Corpus> {
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Corpus {
            line: line_no,
            message,
        };
        let rec: Record = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if rec.tokens.len() > MAX_TOKENS {
            continue;
        }
        let tags = rec
            .tags
            .iter()
            .map(|t| t.parse::<Label>())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| err(e.to_string()))?;
        let s = Sentence {
            tokens: rec.tokens,
            comparator_index: rec.comparator_index,
            is_simile: rec.is_simile,
            tags,
        };
        s.validate().map_err(err)?;
        sentences.push(s);
    }
    Ok(Corpus {
        sentences,
        provenance: Provenance::Real,
    })
}

pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let text = fs::read_to_string(path)?;
    parse_corpus_str(&text)
}

/// Input line for prediction: tokens and the given comparator position.
#[derive(Clone, Debug, Deserialize)]
pub struct PredictRecord {
    pub tokens: Vec<String>,
    pub comparator_index: usize,
}

pub fn parse_predict_input(text: &str) -> Result<Vec<PredictRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Corpus {
            line: i + 1,
            message,
        };
        let rec: PredictRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if rec.tokens.is_empty() || rec.tokens.len() > MAX_TOKENS {
            return Err(err(format!(
                "sentence length {} outside 1..={MAX_TOKENS}",
                rec.tokens.len()
            )));
        }
        if rec.comparator_index >= rec.tokens.len() {
            return Err(err(format!(
                "comparator index {} out of range",
                rec.comparator_index
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"{"tokens":["a","b","like","c"],"comparator_index":2,"is_simile":true,"tags":["B-T","E-T","O","S-V"]}
{"tokens":["x","as","y"],"comparator_index":1,"is_simile":false,"tags":["O","O","O"]}
{"tokens":["p","than","q"],"comparator_index":1,"is_simile":true,"tags":["S-T","O","S-V"]}
"#;

    #[test]
    fn parses_valid_file() {
        let c = parse_corpus_str(VALID).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.sentences[0].spans().len(), 2);
    }

    #[test]
    fn rejects_unclosed_segment_with_line() {
        let text = "{\"tokens\":[\"a\",\"b\"],\"comparator_index\":1,\"is_simile\":true,\"tags\":[\"O\",\"O\"]}\n\
                    {\"tokens\":[\"a\",\"b\"],\"comparator_index\":1,\"is_simile\":true,\"tags\":[\"B-T\",\"O\"]}";
        match parse_corpus_str(text) {
            Err(Error::Corpus { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("invalid transition"), "{message}");
            }
            other => panic!("expected corpus error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_comparator_out_of_range() {
        let text = r#"{"tokens":["a"],"comparator_index":1,"is_simile":false,"tags":["O"]}"#;
        let e = parse_corpus_str(text).unwrap_err().to_string();
        assert!(e.contains("comparator index"), "{e}");
    }

    #[test]
    fn rejects_literal_with_tags() {
        let text =
            r#"{"tokens":["a","like"],"comparator_index":1,"is_simile":false,"tags":["S-T","O"]}"#;
        let e = parse_corpus_str(text).unwrap_err().to_string();
        assert!(e.contains("literal"), "{e}");
    }

    #[test]
    fn skips_overlong_sentences() {
        let toks: Vec<String> = (0..121).map(|i| format!("w{i}")).collect();
        let s = Sentence {
            tokens: toks,
            comparator_index: 0,
            is_simile: false,
            tags: vec![Label::O; 121],
        };
        let c = parse_corpus_str(&s.to_json()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn stats_count_components() {
        let st = parse_corpus_str(VALID).unwrap().stats();
        assert_eq!(st.sentences, 3);
        assert_eq!(st.simile_sentences, 2);
        assert_eq!(st.literal_sentences, 1);
        assert_eq!(st.tenors, 2);
        assert_eq!(st.vehicles, 2);
        assert_eq!(st.tokens, 10);
    }

    #[test]
    fn instance_validation() {
        assert!(SentenceInstance::new(vec![4, 5], 1, false, vec![Label::O, Label::O]).is_ok());
        assert!(SentenceInstance::new(vec![], 0, false, vec![]).is_err());
        assert!(SentenceInstance::new(vec![4], 1, false, vec![Label::O]).is_err());
    }
}
