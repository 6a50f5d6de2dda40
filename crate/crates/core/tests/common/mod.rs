#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simile_core::iobes::tags_from_spans;
use simile_core::model::{CyclicModel, ModelDims};
use simile_core::{
    Label, ParamStore, RunConfig, Sentence, SentenceInstance, Span, SpanKind, Tensor,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fresh parameters redrawn from `[-scale, scale)`, biases included, so that
/// gradients are not dominated by the small default initialization.
pub fn random_store(dims: ModelDims, seed: u64, scale: f64) -> (CyclicModel, ParamStore) {
    let (model, mut store) = CyclicModel::init(dims, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let t = store.get(id);
        let fresh = Tensor::uniform(t.rows(), t.cols(), -scale, scale, &mut r);
        *store.get_mut(id) = fresh;
    }
    (model, store)
}

pub fn tiny_dims(vocab: usize) -> ModelDims {
    ModelDims {
        vocab,
        embed: 4,
        hidden: 3,
        ffn: 4,
    }
}

/// Non-overlapping spans of length 1..=3 at random positions.
pub fn random_spans<R: Rng>(n: usize, r: &mut R) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        if r.gen_bool(0.3) {
            let len = r.gen_range(1..=3).min(n - i);
            let kind = if r.gen_bool(0.5) {
                SpanKind::Tenor
            } else {
                SpanKind::Vehicle
            };
            spans.push(Span {
                start: i,
                end: i + len - 1,
                kind,
            });
            i += len;
        } else {
            i += 1;
        }
    }
    spans
}

pub fn random_sentence<R: Rng>(r: &mut R, max_len: usize) -> Sentence {
    let n = r.gen_range(1..=max_len);
    let words = [
        "a", "b", "like", "as", "than", "猫", "x y", "\"q\"", "\\", "ü",
    ];
    let tokens = (0..n)
        .map(|_| {
            let w = words[r.gen_range(0..words.len())];
            if r.gen_bool(0.5) {
                format!("{w}{}", r.gen_range(0..50))
            } else {
                w.to_string()
            }
        })
        .collect();
    let is_simile = r.gen_bool(0.5);
    let tags = if is_simile {
        tags_from_spans(&random_spans(n, r), n).unwrap()
    } else {
        vec![Label::O; n]
    };
    Sentence {
        tokens,
        comparator_index: r.gen_range(0..n),
        is_simile,
        tags,
    }
}

/// A 6-token simile with a two-token tenor and a one-token vehicle around
/// the comparator at index 3.
pub fn six_token_instance(vocab: usize, seed: u64) -> SentenceInstance {
    let mut r = rng(seed);
    let tokens = (0..6).map(|_| r.gen_range(4..vocab)).collect();
    let spans = [
        Span {
            start: 1,
            end: 2,
            kind: SpanKind::Tenor,
        },
        Span {
            start: 4,
            end: 4,
            kind: SpanKind::Vehicle,
        },
    ];
    SentenceInstance::new(tokens, 3, true, tags_from_spans(&spans, 6).unwrap()).unwrap()
}

/// Small but trainable sizes for desk-scale runs.
pub fn small_config(seed: u64) -> RunConfig {
    RunConfig {
        embed_dim: 32,
        hidden_size: 32,
        ffn_width: 32,
        seed,
        ..RunConfig::default()
    }
}
