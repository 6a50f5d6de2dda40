//! Inputs shared by the benchmarks in `benches/` and their smoke test.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simile_core::iobes::NUM_LABELS;
use simile_core::model::{CyclicModel, ModelDims};
use simile_core::{gen_synthetic, ParamStore, SentenceInstance, SynthConfig, Tensor};

/// Random emissions `[n, 9]` and a random transition table.
pub fn crf_inputs(n: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tr = Tensor::uniform(NUM_LABELS + 2, NUM_LABELS + 2, -1.0, 1.0, &mut rng);
    let em = Tensor::uniform(n, NUM_LABELS, -2.0, 2.0, &mut rng);
    (em, tr)
}

pub struct ModelFixture {
    pub model: CyclicModel,
    pub store: ParamStore,
    /// The longest sentence of a small synthetic corpus.
    pub instance: SentenceInstance,
}

pub fn model_fixture(hidden: usize) -> ModelFixture {
    let corpus = gen_synthetic(&SynthConfig::new(50, 2));
    let vocab = corpus.vocab(1);
    let instance = corpus
        .sentences
        .iter()
        .map(|s| s.instance(&vocab))
        .max_by_key(|i| i.len())
        .expect("corpus is not empty");
    let dims = ModelDims {
        vocab: vocab.len(),
        embed: 50,
        hidden,
        ffn: 64,
    };
    let (model, store) = CyclicModel::init(dims, 3).expect("valid dims");
    ModelFixture {
        model,
        store,
        instance,
    }
}
