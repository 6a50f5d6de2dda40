//! Simile recognition with a cyclic multitask model.
//!
//! A shared bidirectional LSTM encodes each sentence. Three heads sit on top:
//! a classifier that attends to a learned window around the comparator word,
//! a CRF tagger that marks tenor and vehicle spans, and a bidirectional
//! language-model decoder that reconstructs the sentence. In the cyclic wiring
//! each head consumes the previous head's output and the decoder's states feed
//! back into classification.
//!
//! Everything runs on a small reverse-mode autodiff engine ([`graph`]) over
//! `f64` matrices.

pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod corpus;
pub mod crf;
pub mod crossval;
pub mod decoder;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod extractor;
pub mod gradcheck;
pub mod graph;
pub mod iobes;
pub mod kfold;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use checkpoint::Checkpoint;
pub use classifier::{AttentionMode, AttentionOptions, Classifier, LocalAttentionResult};
pub use config::{LossWeights, Mode, RunConfig, TaskSet, WiringConfig};
pub use corpus::{parse_corpus, parse_corpus_str, Corpus, Sentence, SentenceInstance};
pub use crossval::{cross_validate, run_fold, CrossValReport, FoldRun, FoldSummary};
pub use error::{Error, Result};
pub use graph::{Axis, Graph, Var};
pub use iobes::{Label, Span, SpanKind};
pub use metrics::{compute_metrics, Annotation, MetricsReport, Prf};
pub use model::{CyclicModel, ForwardContext, LossBreakdown, ModelDims};
pub use params::{Grads, ParamId, ParamStore};
pub use synth::{gen_synthetic, SynthConfig};
pub use tensor::Tensor;
pub use train::{evaluate, predict, train, EpochLog, Prediction, TrainOutcome};
pub use vocab::Vocab;
