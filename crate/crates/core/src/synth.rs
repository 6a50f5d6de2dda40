//! Seeded synthetic simile corpus for desk-scale experiments.
//!
//! Simile sentences are `prefix tenor [gap] comparator vehicle suffix`, with
//! the tenor drawn from a tenor lexicon and the vehicle from a vehicle lexicon.
//! Literal sentences have the same surface shape but at least one side of the
//! comparator comes from a separate literal lexicon; with probability
//! `overlap` the other side borrows from the tenor or vehicle lexicon so that
//! token identity alone does not decide the class.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Provenance, Sentence};
use crate::iobes::{tags_from_spans, Span, SpanKind};

pub const COMPARATORS: [&str; 3] = ["like", "as", "than"];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    pub seed: u64,
    /// Fraction of simile sentences.
    pub simile_ratio: f64,
    /// Size of each of the tenor, vehicle and literal lexicons.
    pub lexicon_size: usize,
    /// Number of filler words.
    pub filler_size: usize,
    /// Probability that a literal sentence borrows one side from a component lexicon.
    pub overlap: f64,
}

impl SynthConfig {
    pub fn new(size: usize, seed: u64) -> Self {
        Self {
            size,
            seed,
            simile_ratio: 0.45,
            lexicon_size: 40,
            filler_size: 80,
            overlap: 0.3,
        }
    }
}

struct Lexicons {
    tenor: Vec<String>,
    vehicle: Vec<String>,
    literal: Vec<String>,
    filler: Vec<String>,
}

impl Lexicons {
    fn new(cfg: &SynthConfig) -> Self {
        let words =
            |prefix: &str, n: usize| (0..n.max(1)).map(|i| format!("{prefix}{i}")).collect();
        Self {
            tenor: words("ten", cfg.lexicon_size),
            vehicle: words("veh", cfg.lexicon_size),
            literal: words("lit", cfg.lexicon_size),
            filler: words("w", cfg.filler_size),
        }
    }
}

fn phrase<R: Rng>(rng: &mut R, lexicon: &[String]) -> Vec<String> {
    let len = rng.gen_range(1..=3);
    (0..len)
        .map(|_| lexicon.choose(rng).unwrap().clone())
        .collect()
}

fn fillers<R: Rng>(rng: &mut R, lex: &[String], max: usize) -> Vec<String> {
    let len = rng.gen_range(0..=max);
    (0..len).map(|_| lex.choose(rng).unwrap().clone()).collect()
}

fn sentence<R: Rng>(rng: &mut R, lex: &Lexicons, simile: bool, overlap: f64) -> Sentence {
    let prefix = fillers(rng, &lex.filler, 3);
    let (left, right) = if simile {
        (phrase(rng, &lex.tenor), phrase(rng, &lex.vehicle))
    } else if rng.gen_bool(overlap) {
        if rng.gen_bool(0.5) {
            (phrase(rng, &lex.tenor), phrase(rng, &lex.literal))
        } else {
            (phrase(rng, &lex.literal), phrase(rng, &lex.vehicle))
        }
    } else {
        (phrase(rng, &lex.literal), phrase(rng, &lex.literal))
    };
    let gap = fillers(rng, &lex.filler, 1);
    let comparator = COMPARATORS.choose(rng).unwrap().to_string();
    let suffix = fillers(rng, &lex.filler, 3);

    let left_start = prefix.len();
    let left_end = left_start + left.len() - 1;
    let comparator_index = left_end + 1 + gap.len();
    let right_start = comparator_index + 1;
    let right_end = right_start + right.len() - 1;

    let mut tokens = prefix;
    tokens.extend(left);
    tokens.extend(gap);
    tokens.push(comparator);
    tokens.extend(right);
    tokens.extend(suffix);

    let spans = if simile {
        vec![
            Span {
                start: left_start,
                end: left_end,
                kind: SpanKind::Tenor,
            },
            Span {
                start: right_start,
                end: right_end,
                kind: SpanKind::Vehicle,
            },
        ]
    } else {
        Vec::new()
    };
    let tags = tags_from_spans(&spans, tokens.len()).expect("spans are disjoint and in range");
    Sentence {
        tokens,
        comparator_index,
        is_simile: simile,
        tags,
    }
}

/// Generates a corpus; a pure function of the config.
pub fn gen_synthetic(cfg: &SynthConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lex = Lexicons::new(cfg);
    let sentences = (0..cfg.size)
        .map(|_| {
            let simile = rng.gen_bool(cfg.simile_ratio.clamp(0.0, 1.0));
            sentence(&mut rng, &lex, simile, cfg.overlap.clamp(0.0, 1.0))
        })
        .collect();
    Corpus {
        sentences,
        provenance: Provenance::Synthetic { seed: cfg.seed },
    }
}
