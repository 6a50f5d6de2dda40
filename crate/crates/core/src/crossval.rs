//! K-fold cross-validation: train on each round's training split, stop early
//! on its validation split, score the held-out fold.

use serde::Serialize;

use crate::config::RunConfig;
use crate::corpus::{Corpus, SentenceInstance};
use crate::error::Result;
use crate::kfold::{fold_split, kfold_split, FoldSplit};
use crate::metrics::{compute_metrics, Annotation, MetricsReport};
use crate::train::{evaluate, train, EpochLog, Prediction, TrainOutcome};
use crate::vocab::Vocab;

#[derive(Clone, Debug)]
pub struct FoldRun {
    pub fold: usize,
    pub split: FoldSplit,
    pub outcome: TrainOutcome,
    pub report: MetricsReport,
    pub predictions: Vec<Prediction>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub best_epoch: usize,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossValReport {
    pub folds: Vec<FoldSummary>,
    /// Counts pooled over every test fold.
    pub pooled: MetricsReport,
    pub mean_classification_f1: f64,
    pub mean_extraction_f1: f64,
}

fn instances(corpus: &Corpus, idx: &[usize], vocab: &Vocab) -> Vec<SentenceInstance> {
    idx.iter()
        .map(|&i| corpus.sentences[i].instance(vocab))
        .collect()
}

/// One round with `fold` held out. The vocabulary comes from the training
/// split only.
pub fn run_fold(
    corpus: &Corpus,
    config: &RunConfig,
    fold: usize,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<FoldRun> {
    config.validate()?;
    let folds = kfold_split(corpus.len(), config.folds, config.seed)?;
    let split = fold_split(&folds, fold, config.seed)?;
    let vocab = Vocab::build(
        split
            .train
            .iter()
            .map(|&i| corpus.sentences[i].tokens.as_slice()),
        config.min_freq,
    );
    let train_set = instances(corpus, &split.train, &vocab);
    let valid_set = instances(corpus, &split.valid, &vocab);
    let test_set = instances(corpus, &split.test, &vocab);
    let outcome = train(&train_set, &valid_set, &vocab, config, on_epoch)?;
    let (report, predictions) = evaluate(&outcome.checkpoint.params, &test_set, &config.wiring()?)?;
    Ok(FoldRun {
        fold,
        split,
        outcome,
        report,
        predictions,
    })
}

/// Every round in turn. `on_epoch` receives the fold index with each log.
pub fn cross_validate(
    corpus: &Corpus,
    config: &RunConfig,
    on_epoch: &mut dyn FnMut(usize, &EpochLog),
) -> Result<CrossValReport> {
    let mut folds = Vec::with_capacity(config.folds);
    let mut gold = Vec::with_capacity(corpus.len());
    let mut sys = Vec::with_capacity(corpus.len());
    for fold in 0..config.folds {
        let run = run_fold(corpus, config, fold, &mut |log| on_epoch(fold, log))?;
        gold.extend(
            run.split
                .test
                .iter()
                .map(|&i| Annotation::from(&corpus.sentences[i])),
        );
        sys.extend(run.predictions.iter().map(Prediction::annotation));
        folds.push(FoldSummary {
            fold,
            train: run.split.train.len(),
            valid: run.split.valid.len(),
            test: run.split.test.len(),
            best_epoch: run.outcome.best_epoch,
            report: run.report,
        });
    }
    let n = folds.len() as f64;
    Ok(CrossValReport {
        pooled: compute_metrics(&gold, &sys)?,
        mean_classification_f1: folds
            .iter()
            .map(|f| f.report.classification.f1)
            .sum::<f64>()
            / n,
        mean_extraction_f1: folds.iter().map(|f| f.report.extraction.f1).sum::<f64>() / n,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_synthetic, SynthConfig};

    fn tiny() -> RunConfig {
        RunConfig {
            embed_dim: 6,
            hidden_size: 4,
            ffn_width: 4,
            max_epochs: 1,
            folds: 3,
            ..RunConfig::default()
        }
    }

    #[test]
    fn every_sentence_is_tested_once() {
        let corpus = gen_synthetic(&SynthConfig::new(30, 2));
        let rep = cross_validate(&corpus, &tiny(), &mut |_, _| {}).unwrap();
        assert_eq!(rep.folds.len(), 3);
        assert_eq!(rep.folds.iter().map(|f| f.test).sum::<usize>(), 30);
        for f in &rep.folds {
            assert_eq!(f.train + f.valid + f.test, 30);
        }
        let pooled = &rep.pooled.classification;
        let gold_similes = corpus.sentences.iter().filter(|s| s.is_simile).count();
        assert_eq!(pooled.tp + pooled.fn_, gold_similes);
    }

    #[test]
    fn missing_fold_is_rejected() {
        let corpus = gen_synthetic(&SynthConfig::new(30, 2));
        assert!(run_fold(&corpus, &tiny(), 3, &mut |_| {}).is_err());
    }
}
