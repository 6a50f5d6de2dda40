//! Training loop, evaluation and prediction.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, WiringConfig};
use crate::corpus::SentenceInstance;
use crate::embeddings;
use crate::encoder::Dropout;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::iobes::{spans_from_tags, Label, Span};
use crate::metrics::{compute_metrics, Annotation, MetricsReport};
use crate::model::{CyclicModel, ForwardContext, LossBreakdown, ModelDims};
use crate::optim::{Adadelta, AdadeltaConfig, StepOutcome};
use crate::params::{Grads, ParamStore};
use crate::vocab::Vocab;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Losses summed over the epoch's training sentences.
    pub j: f64,
    pub j_sc: f64,
    pub j_ce: f64,
    pub j_sd: f64,
    pub valid_classification_f1: Option<f64>,
    pub valid_extraction_f1: Option<f64>,
    /// Early-stopping monitor: classification F1 + extraction F1 on validation.
    pub monitor: Option<f64>,
    pub improved: bool,
    pub skipped_batches: Vec<usize>,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best epoch (the last one without validation data).
    pub checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub epochs: Vec<EpochLog>,
    /// Joint loss of every batch, in order.
    pub batch_losses: Vec<f64>,
}

/// Seeds for initialization, shuffling and dropout, all derived from one generator.
fn seeds(seed: u64) -> (u64, u64, u64) {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (master.gen(), master.gen(), master.gen())
}

pub fn model_dims(config: &RunConfig, vocab: &Vocab) -> ModelDims {
    ModelDims {
        vocab: vocab.len(),
        embed: config.embed_dim,
        hidden: config.hidden_size,
        ffn: config.ffn_width,
    }
}

/// Trains from fresh parameters. `on_epoch` sees every epoch log as it is produced.
pub fn train(
    train_set: &[SentenceInstance],
    valid_set: &[SentenceInstance],
    vocab: &Vocab,
    config: &RunConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let wiring = config.wiring()?;
    let weights = config.loss_weights()?;
    let (init_seed, shuffle_seed, dropout_seed) = seeds(config.seed);

    let (model, mut store) = CyclicModel::init(model_dims(config, vocab), init_seed)?;
    if let Some(path) = &config.pretrained_embeddings {
        let table = store.require("embedding")?;
        embeddings::load_into(path, vocab, store.get_mut(table))?;
    }
    let mut opt = Adadelta::new(
        &store,
        AdadeltaConfig {
            rho: config.rho,
            epsilon: config.epsilon,
            learning_rate: config.learning_rate,
        },
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut dropout = Dropout::new(config.dropout, dropout_seed);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::new();
    let mut batch_losses = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut streak = 0;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut sums = LossBreakdown::default();
        let mut skipped = Vec::new();
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = Grads::new(&store);
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut g = Graph::new(&store);
                let mut ctx = ForwardContext::training(dropout);
                let out = model.forward(&mut g, &train_set[i], &wiring, weights, &mut ctx)?;
                dropout = ctx.dropout;
                g.backward_into(out.loss, &mut grads)?;
                sums.accumulate(&out.breakdown);
                batch_loss += out.breakdown.total;
            }
            batch_losses.push(batch_loss);
            if opt.step(&mut store, &grads) == StepOutcome::SkippedNonFinite {
                skipped.push(b);
            }
        }

        let (cls_f1, ext_f1, monitor) = if valid_set.is_empty() {
            (None, None, None)
        } else {
            let (report, _) = evaluate(&store, valid_set, &wiring)?;
            let (c, e) = (report.classification.f1, report.extraction.f1);
            (Some(c), Some(e), Some(c + e))
        };
        let improved = match (monitor, &best) {
            (None, _) | (Some(_), None) => true,
            (Some(m), Some((b, _, _))) => m > *b,
        };
        if improved {
            best = Some((monitor.unwrap_or(f64::NEG_INFINITY), epoch, store.clone()));
            streak = 0;
        } else {
            streak += 1;
        }
        let log = EpochLog {
            epoch,
            j: sums.total,
            j_sc: sums.sc,
            j_ce: sums.ce,
            j_sd: sums.sd,
            valid_classification_f1: cls_f1,
            valid_extraction_f1: ext_f1,
            monitor,
            improved,
            skipped_batches: skipped,
            wall_time_secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        epochs.push(log);
        if !improved && streak >= config.patience {
            break;
        }
    }

    let (best_epoch, params) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, store),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.clone(),
            vocab: vocab.clone(),
            params,
        },
        best_epoch,
        epochs,
        batch_losses,
    })
}

/// Model output for one sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub is_simile: bool,
    pub simile_probability: f64,
    pub tags: Vec<Label>,
    pub spans: Vec<Span>,
    pub sequence_log_prob: Option<f64>,
    /// Continuous window size, if local attention ran.
    pub window_size: Option<f64>,
    pub attention: Vec<f64>,
}

impl Prediction {
    pub fn annotation(&self) -> Annotation {
        Annotation {
            is_simile: self.is_simile,
            spans: self.spans.clone(),
        }
    }
}

pub fn predict_one(
    model: &CyclicModel,
    store: &ParamStore,
    inst: &SentenceInstance,
    wiring: &WiringConfig,
) -> Result<Prediction> {
    let mut g = Graph::new(store);
    let out = model.forward(
        &mut g,
        inst,
        wiring,
        Default::default(),
        &mut ForwardContext::inference(),
    )?;
    let tags = out.tags.unwrap_or_else(|| vec![Label::O; inst.len()]);
    let (window_size, attention) = match &out.attention {
        Some(a) => (a.l_real, a.full_weights(inst.len())),
        None => (None, Vec::new()),
    };
    Ok(Prediction {
        is_simile: out.predicted_simile,
        simile_probability: out.class_probs[1],
        spans: spans_from_tags(&tags),
        tags,
        sequence_log_prob: out.tag_log_prob,
        window_size,
        attention,
    })
}

pub fn predict(
    store: &ParamStore,
    instances: &[SentenceInstance],
    wiring: &WiringConfig,
) -> Result<Vec<Prediction>> {
    let model = CyclicModel::bind(store)?;
    instances
        .iter()
        .map(|i| predict_one(&model, store, i, wiring))
        .collect()
}

pub fn evaluate(
    store: &ParamStore,
    instances: &[SentenceInstance],
    wiring: &WiringConfig,
) -> Result<(MetricsReport, Vec<Prediction>)> {
    let preds = predict(store, instances, wiring)?;
    let gold: Vec<Annotation> = instances.iter().map(Annotation::from).collect();
    let sys: Vec<Annotation> = preds.iter().map(Prediction::annotation).collect();
    Ok((compute_metrics(&gold, &sys)?, preds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_synthetic, SynthConfig};

    fn tiny_config() -> RunConfig {
        RunConfig {
            embed_dim: 6,
            hidden_size: 5,
            ffn_width: 6,
            batch_size: 4,
            max_epochs: 3,
            ..RunConfig::default()
        }
    }

    fn data(n: usize, seed: u64) -> (Vec<SentenceInstance>, Vocab) {
        let c = gen_synthetic(&SynthConfig::new(n, seed));
        let v = c.vocab(1);
        (c.sentences.iter().map(|s| s.instance(&v)).collect(), v)
    }

    #[test]
    fn empty_training_set_rejected() {
        let (_, v) = data(3, 0);
        let r = train(&[], &[], &v, &tiny_config(), &mut |_| {});
        assert!(matches!(r, Err(Error::EmptyTrainingSet)));
    }

    #[test]
    fn same_seed_same_run() {
        let (d, v) = data(12, 1);
        let cfg = tiny_config();
        let a = train(&d[..8], &d[8..], &v, &cfg, &mut |_| {}).unwrap();
        let b = train(&d[..8], &d[8..], &v, &cfg, &mut |_| {}).unwrap();
        assert_eq!(a.batch_losses, b.batch_losses);
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        let c = train(
            &d[..8],
            &d[8..],
            &v,
            &RunConfig { seed: 2, ..cfg },
            &mut |_| {},
        )
        .unwrap();
        assert_ne!(a.batch_losses, c.batch_losses);
    }

    #[test]
    fn patience_zero_stops_at_first_non_improving_epoch() {
        let (d, v) = data(12, 2);
        let cfg = RunConfig {
            patience: 0,
            max_epochs: 30,
            ..tiny_config()
        };
        let out = train(&d[..8], &d[8..], &v, &cfg, &mut |_| {}).unwrap();
        let last = out.epochs.last().unwrap();
        assert!(!last.improved || out.epochs.len() == 30);
        assert!(out.epochs[..out.epochs.len() - 1]
            .iter()
            .all(|e| e.improved));
    }

    #[test]
    fn epoch_logs_serialize() {
        let (d, v) = data(6, 3);
        let mut lines = Vec::new();
        let cfg = RunConfig {
            max_epochs: 1,
            ..tiny_config()
        };
        train(&d, &d, &v, &cfg, &mut |e| {
            lines.push(serde_json::to_string(e).unwrap())
        })
        .unwrap();
        assert_eq!(lines.len(), 1);
        assert!(lines[0].contains("\"j_sc\""));
    }
}
