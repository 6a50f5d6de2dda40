//! Tenor/vehicle label set and the IOBES span codec.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of real labels.
pub const NUM_LABELS: usize = 9;

/// Component type of a span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpanKind {
    #[serde(rename = "T")]
    Tenor,
    #[serde(rename = "V")]
    Vehicle,
}

impl SpanKind {
    pub fn code(self) -> char {
        match self {
            SpanKind::Tenor => 'T',
            SpanKind::Vehicle => 'V',
        }
    }
}

/// Position of a label inside its segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Position {
    Begin,
    Inside,
    End,
    Single,
}

/// One IOBES tag. Ids are stable:
/// `O=0, B-T=1, I-T=2, E-T=3, S-T=4, B-V=5, I-V=6, E-V=7, S-V=8`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    O,
    Tag(Position, SpanKind),
}

impl Label {
    pub const ALL: [Label; NUM_LABELS] = [
        Label::O,
        Label::Tag(Position::Begin, SpanKind::Tenor),
        Label::Tag(Position::Inside, SpanKind::Tenor),
        Label::Tag(Position::End, SpanKind::Tenor),
        Label::Tag(Position::Single, SpanKind::Tenor),
        Label::Tag(Position::Begin, SpanKind::Vehicle),
        Label::Tag(Position::Inside, SpanKind::Vehicle),
        Label::Tag(Position::End, SpanKind::Vehicle),
        Label::Tag(Position::Single, SpanKind::Vehicle),
    ];

    pub fn id(self) -> usize {
        match self {
            Label::O => 0,
            Label::Tag(pos, kind) => {
                let base = match kind {
                    SpanKind::Tenor => 1,
                    SpanKind::Vehicle => 5,
                };
                base + match pos {
                    Position::Begin => 0,
                    Position::Inside => 1,
                    Position::End => 2,
                    Position::Single => 3,
                }
            }
        }
    }

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL.get(id).copied().ok_or(Error::InvalidLabel(id))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::O => write!(f, "O"),
            Label::Tag(pos, kind) => {
                let p = match pos {
                    Position::Begin => 'B',
                    Position::Inside => 'I',
                    Position::End => 'E',
                    Position::Single => 'S',
                };
                write!(f, "{p}-{}", kind.code())
            }
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .iter()
            .copied()
            .find(|l| l.to_string() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown tag `{s}`")))
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A labelled component span, inclusive on both ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub kind: SpanKind,
}

/// Whether `next` may follow `prev`; `None` stands for START (as `prev`) or
/// STOP (as `next`).
pub fn transition_allowed(prev: Option<Label>, next: Option<Label>) -> bool {
    let open = |l: Option<Label>| match l {
        Some(Label::Tag(Position::Begin | Position::Inside, kind)) => Some(kind),
        _ => None,
    };
    match (open(prev), next) {
        (Some(kind), Some(Label::Tag(Position::Inside | Position::End, k))) => kind == k,
        (Some(_), _) => false,
        (None, Some(Label::Tag(Position::Inside | Position::End, _))) => false,
        (None, _) => true,
    }
}

/// Row-major `(d+2) x (d+2)` table of permitted transitions including the
/// virtual START (`d`) and STOP (`d+1`) states.
pub fn transition_mask() -> Vec<bool> {
    let k = NUM_LABELS + 2;
    let state = |i: usize| -> Option<Label> {
        if i < NUM_LABELS {
            Some(Label::ALL[i])
        } else {
            None
        }
    };
    let mut mask = vec![false; k * k];
    for from in 0..k {
        for to in 0..k {
            let ok = match (from, to) {
                (_, t) if t == NUM_LABELS => false,
                (f, _) if f == NUM_LABELS + 1 => false,
                (f, t) if f == NUM_LABELS && t == NUM_LABELS + 1 => false,
                (f, t) => transition_allowed(state(f), state(t)),
            };
            mask[from * k + to] = ok;
        }
    }
    mask
}

/// Checks that `tags` is a well-formed IOBES sequence; on failure returns the
/// offending position and a description.
pub fn validate(tags: &[Label]) -> std::result::Result<(), (usize, String)> {
    let mut prev = None;
    for (i, &t) in tags.iter().enumerate() {
        if !transition_allowed(prev, Some(t)) {
            let p = prev.map_or_else(|| "START".to_string(), |l: Label| l.to_string());
            return Err((i, format!("invalid transition {p} -> {t}")));
        }
        prev = Some(t);
    }
    if !transition_allowed(prev, None) {
        let last = tags.len().saturating_sub(1);
        return Err((last, format!("unclosed segment ending with {}", tags[last])));
    }
    Ok(())
}

/// Extracts spans from a possibly malformed tag sequence.
///
/// Repair rule: a segment that is not properly closed (interrupted by `O`, a
/// tag of the other type, a new `B`/`S`, or the end of the sentence) is
/// dropped. Stray `I`/`E` tags without an open segment are ignored.
pub fn spans_from_tags(tags: &[Label]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, SpanKind)> = None;
    for (i, &t) in tags.iter().enumerate() {
        match t {
            Label::O => open = None,
            Label::Tag(Position::Single, kind) => {
                open = None;
                spans.push(Span {
                    start: i,
                    end: i,
                    kind,
                });
            }
            Label::Tag(Position::Begin, kind) => open = Some((i, kind)),
            Label::Tag(Position::Inside, kind) => {
                if !matches!(open, Some((_, k)) if k == kind) {
                    open = None;
                }
            }
            Label::Tag(Position::End, kind) => {
                if let Some((start, k)) = open {
                    if k == kind {
                        spans.push(Span {
                            start,
                            end: i,
                            kind,
                        });
                    }
                }
                open = None;
            }
        }
    }
    spans
}

/// Encodes non-overlapping spans as IOBES tags over `len` tokens.
pub fn tags_from_spans(spans: &[Span], len: usize) -> Result<Vec<Label>> {
    let mut tags = vec![Label::O; len];
    for s in spans {
        if s.start > s.end || s.end >= len {
            return Err(Error::Invalid(format!(
                "span {s:?} out of range for {len} tokens"
            )));
        }
        if tags[s.start..=s.end].iter().any(|&t| t != Label::O) {
            return Err(Error::Invalid(format!("span {s:?} overlaps another span")));
        }
        if s.start == s.end {
            tags[s.start] = Label::Tag(Position::Single, s.kind);
        } else {
            tags[s.start] = Label::Tag(Position::Begin, s.kind);
            for t in &mut tags[s.start + 1..s.end] {
                *t = Label::Tag(Position::Inside, s.kind);
            }
            tags[s.end] = Label::Tag(Position::End, s.kind);
        }
    }
    Ok(tags)
}
