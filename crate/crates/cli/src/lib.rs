//! `simile` command-line front end.

pub mod plot;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use simile_core::gradcheck::{run_suite, Suite};
use simile_core::kfold::{fold_split, kfold_split};
use simile_core::metrics::bucketed_metrics;
use simile_core::{
    cross_validate, evaluate, gen_synthetic, parse_corpus_str, predict, train, Annotation,
    Checkpoint, Corpus, Mode, RunConfig, SentenceInstance, SynthConfig, Vocab,
};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_UNREADABLE: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;
pub const EXIT_DATA: u8 = 5;

#[derive(Debug)]
pub enum CliError {
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    Core(simile_core::Error),
    Failed(String),
}

impl CliError {
    /// 3 unreadable input, 4 invalid configuration, 5 invalid data, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        use simile_core::Error as E;
        match self {
            CliError::Read { .. } => EXIT_UNREADABLE,
            CliError::Core(E::Config(_)) => EXIT_CONFIG,
            CliError::Core(
                E::Corpus { .. }
                | E::InvalidInstance(_)
                | E::InvalidLabel(_)
                | E::OutOfVocabulary { .. }
                | E::EmptyTrainingSet
                | E::Checkpoint(_)
                | E::Embeddings(_),
            ) => EXIT_DATA,
            _ => EXIT_FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Read { path, source } => {
                write!(f, "cannot read {}: {source}", path.display())
            }
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<simile_core::Error> for CliError {
    fn from(e: simile_core::Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "simile",
    version,
    about = "Simile classification and tenor/vehicle extraction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the non-test folds of a corpus and score the held-out fold
    Train {
        /// JSON-lines corpus
        #[arg(long)]
        corpus: PathBuf,
        /// TOML run configuration; built-in defaults when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for checkpoint.bin, train_log.jsonl and metrics.json
        #[arg(long)]
        out: PathBuf,
        /// Fold held out for testing
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Overrides the configured seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on a corpus, or on one of its folds
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate only this fold's test split (same split as `train`)
        #[arg(long)]
        fold: Option<usize>,
        /// Write the metrics report as JSON
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write F1-by-distance and F1-by-length SVG charts into this directory
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Run the full k-fold protocol and report per-fold and mean F1
    Crossval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the report as JSON
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Classify sentences and extract their components
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON lines with `tokens` and `comparator_index`
        #[arg(long)]
        input: PathBuf,
        /// JSON-lines output, one prediction per input line
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare analytic gradients with central finite differences
    Gradcheck {
        /// encoder, classifier, extractor, decoder, model or all
        #[arg(long, default_value = "all")]
        module: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Largest accepted relative error
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Write a seeded synthetic corpus as train.jsonl, valid.jsonl and test.jsonl
    GenData {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        train_size: usize,
        #[arg(long, default_value_t = 500)]
        valid_size: usize,
        #[arg(long, default_value_t = 500)]
        test_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the cyclic model for K = 0..=k-max and report F1 per K
    SweepK {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        k_max: usize,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the table as JSON
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write an SVG line chart of F1 against K
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Failed(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents)
        .map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Ok(parse_corpus_str(&read_text(path)?)?)
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_toml(&read_text(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

fn encode(corpus: &Corpus, idx: &[usize], vocab: &Vocab) -> Vec<SentenceInstance> {
    idx.iter()
        .map(|&i| corpus.sentences[i].instance(vocab))
        .collect()
}

struct FoldData {
    vocab: Vocab,
    train: Vec<SentenceInstance>,
    valid: Vec<SentenceInstance>,
    test: Vec<SentenceInstance>,
}

/// The same split `crossval` uses; the vocabulary comes from the training part.
fn fold_data(corpus: &Corpus, cfg: &RunConfig, fold: usize) -> Result<FoldData> {
    let folds = kfold_split(corpus.len(), cfg.folds, cfg.seed)?;
    let split = fold_split(&folds, fold, cfg.seed)?;
    let vocab = Vocab::build(
        split
            .train
            .iter()
            .map(|&i| corpus.sentences[i].tokens.as_slice()),
        cfg.min_freq,
    );
    Ok(FoldData {
        train: encode(corpus, &split.train, &vocab),
        valid: encode(corpus, &split.valid, &vocab),
        test: encode(corpus, &split.test, &vocab),
        vocab,
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            corpus,
            config,
            out,
            fold,
            seed,
        } => cmd_train(&corpus, config.as_deref(), &out, fold, seed),
        Command::Eval {
            corpus,
            checkpoint,
            fold,
            json,
            plots,
        } => cmd_eval(
            &corpus,
            &checkpoint,
            fold,
            json.as_deref(),
            plots.as_deref(),
        ),
        Command::Crossval {
            corpus,
            config,
            json,
            seed,
        } => cmd_crossval(&corpus, config.as_deref(), json.as_deref(), seed),
        Command::Predict {
            checkpoint,
            input,
            output,
        } => cmd_predict(&checkpoint, &input, &output),
        Command::Gradcheck {
            module,
            seed,
            tolerance,
        } => cmd_gradcheck(&module, seed, tolerance),
        Command::GenData {
            seed,
            train_size,
            valid_size,
            test_size,
            out,
        } => cmd_gen_data(seed, [train_size, valid_size, test_size], &out),
        Command::SweepK {
            corpus,
            config,
            k_max,
            fold,
            seed,
            json,
            plot,
        } => cmd_sweep_k(
            &corpus,
            config.as_deref(),
            k_max,
            fold,
            seed,
            json.as_deref(),
            plot.as_deref(),
        ),
    }
}

fn cmd_train(
    corpus: &Path,
    config: Option<&Path>,
    out: &Path,
    fold: usize,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let corpus = load_corpus(corpus)?;
    let data = fold_data(&corpus, &cfg, fold)?;
    eprintln!(
        "fold {fold}: {} train, {} valid, {} test, vocabulary {}",
        data.train.len(),
        data.valid.len(),
        data.test.len(),
        data.vocab.len()
    );
    let mut log = String::new();
    let outcome = train(&data.train, &data.valid, &data.vocab, &cfg, &mut |e| {
        let line = serde_json::to_string(e).expect("log serializes");
        eprintln!("{line}");
        log.push_str(&line);
        log.push('\n');
    })?;
    let (report, _) = evaluate(&outcome.checkpoint.params, &data.test, &cfg.wiring()?)?;
    write(&out.join("checkpoint.bin"), outcome.checkpoint.to_bytes())?;
    write(&out.join("train_log.jsonl"), log)?;
    write(&out.join("metrics.json"), json(&report))?;
    println!("best epoch {}", outcome.best_epoch);
    print!("{}", report.to_table());
    Ok(())
}

/// Token distance from the comparator to the nearest edge of the farthest
/// gold component; 0 for sentences without components.
fn component_distance(ann: &Annotation, comparator: usize) -> usize {
    ann.spans
        .iter()
        .map(|s| {
            s.start
                .saturating_sub(comparator)
                .max(comparator.saturating_sub(s.end))
        })
        .max()
        .unwrap_or(0)
}

fn write_plots(dir: &Path, corpus: &Corpus, idx: &[usize], predicted: &[Annotation]) -> Result<()> {
    let gold: Vec<Annotation> = idx
        .iter()
        .map(|&i| Annotation::from(&corpus.sentences[i]))
        .collect();
    let bucket = |v: usize, edges: &[usize]| edges.iter().take_while(|&&e| v > e).count();
    let charts = [
        (
            "by_distance.svg",
            "F1 by comparator-component distance",
            vec![1, 3, 5, 8],
            "distance",
        ),
        (
            "by_length.svg",
            "F1 by sentence length",
            vec![10, 20, 30, 40],
            "length",
        ),
    ];
    for (file, title, edges, what) in charts {
        let keys: Vec<usize> = idx
            .iter()
            .zip(&gold)
            .map(|(&i, g)| {
                let s = &corpus.sentences[i];
                let v = if what == "distance" {
                    component_distance(g, s.comparator_index)
                } else {
                    s.tokens.len()
                };
                bucket(v, &edges)
            })
            .collect();
        let groups = bucketed_metrics(&gold, predicted, &keys)?;
        let label = |b: usize| match (b.checked_sub(1).map(|j| edges[j]), edges.get(b)) {
            (None, Some(hi)) => format!("<={hi}"),
            (Some(lo), Some(hi)) => format!("{}-{hi}", lo + 1),
            (Some(lo), None) => format!(">{lo}"),
            (None, None) => "all".to_string(),
        };
        let cats: Vec<String> = groups.keys().map(|&b| label(b)).collect();
        let cls: Vec<f64> = groups
            .values()
            .map(|m| 100.0 * m.classification.f1)
            .collect();
        let ext: Vec<f64> = groups.values().map(|m| 100.0 * m.extraction.f1).collect();
        let svg = plot::bar_chart(
            title,
            &cats,
            &[("classification F1", cls), ("extraction F1", ext)],
        );
        write(&dir.join(file), svg)?;
    }
    Ok(())
}

fn cmd_eval(
    corpus: &Path,
    checkpoint: &Path,
    fold: Option<usize>,
    json_out: Option<&Path>,
    plots: Option<&Path>,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let corpus = load_corpus(corpus)?;
    let idx: Vec<usize> = match fold {
        Some(f) => {
            let folds = kfold_split(corpus.len(), ck.config.folds, ck.config.seed)?;
            fold_split(&folds, f, ck.config.seed)?.test
        }
        None => (0..corpus.len()).collect(),
    };
    let instances = encode(&corpus, &idx, &ck.vocab);
    let (report, preds) = evaluate(&ck.params, &instances, &ck.config.wiring()?)?;
    print!("{}", report.to_table());
    if let Some(p) = json_out {
        write(p, json(&report))?;
    }
    if let Some(dir) = plots {
        let sys: Vec<Annotation> = preds.iter().map(|p| p.annotation()).collect();
        write_plots(dir, &corpus, &idx, &sys)?;
    }
    Ok(())
}

fn cmd_crossval(
    corpus: &Path,
    config: Option<&Path>,
    json_out: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let corpus = load_corpus(corpus)?;
    let report = cross_validate(&corpus, &cfg, &mut |fold, e| {
        eprintln!(
            "fold {fold} {}",
            serde_json::to_string(e).expect("log serializes")
        );
    })?;
    println!("{:<6} {:>8} {:>8}", "fold", "cls F1", "ext F1");
    for f in &report.folds {
        println!(
            "{:<6} {:>8.2} {:>8.2}",
            f.fold,
            100.0 * f.report.classification.f1,
            100.0 * f.report.extraction.f1
        );
    }
    println!(
        "{:<6} {:>8.2} {:>8.2}",
        "mean",
        100.0 * report.mean_classification_f1,
        100.0 * report.mean_extraction_f1
    );
    if let Some(p) = json_out {
        write(p, json(&report))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    tokens: &'a [String],
    comparator_index: usize,
    #[serde(flatten)]
    prediction: &'a simile_core::Prediction,
}

fn cmd_predict(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let records = simile_core::corpus::parse_predict_input(&read_text(input)?)?;
    let instances = records
        .iter()
        .map(|r| SentenceInstance::unlabelled(ck.vocab.encode(&r.tokens), r.comparator_index))
        .collect::<simile_core::Result<Vec<_>>>()?;
    let preds = predict(&ck.params, &instances, &ck.config.wiring()?)?;
    let mut out = String::new();
    for (r, p) in records.iter().zip(&preds) {
        let line = PredictionLine {
            tokens: &r.tokens,
            comparator_index: r.comparator_index,
            prediction: p,
        };
        out.push_str(&serde_json::to_string(&line).expect("prediction serializes"));
        out.push('\n');
    }
    write(output, out)?;
    eprintln!(
        "{} predictions written to {}",
        preds.len(),
        output.display()
    );
    Ok(())
}

fn cmd_gradcheck(module: &str, seed: u64, tolerance: f64) -> Result<()> {
    let suites = if module == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![module.parse::<Suite>()?]
    };
    println!(
        "{:<12} {:>8} {:>12} {:>8}  worst parameter",
        "suite", "entries", "max rel err", "skipped"
    );
    let mut failed = Vec::new();
    for suite in suites {
        let r = run_suite(suite, seed)?;
        let worst = r.worst().map_or("-", |p| p.name.as_str());
        println!(
            "{:<12} {:>8} {:>12.3e} {:>8}  {worst}",
            suite.name(),
            r.entries_checked(),
            r.max_rel_err,
            r.entries_skipped()
        );
        if r.max_rel_err.is_nan() || r.max_rel_err >= tolerance {
            failed.push(suite.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "relative error above {tolerance:e} in: {}",
            failed.join(", ")
        )))
    }
}

fn cmd_gen_data(seed: u64, sizes: [usize; 3], out: &Path) -> Result<()> {
    let total: usize = sizes.iter().sum();
    if sizes[0] == 0 {
        return Err(CliError::Core(simile_core::Error::Invalid(
            "train size must be at least 1".into(),
        )));
    }
    let corpus = gen_synthetic(&SynthConfig::new(total, seed));
    let mut start = 0;
    for (name, size) in ["train.jsonl", "valid.jsonl", "test.jsonl"]
        .into_iter()
        .zip(sizes)
    {
        let part = Corpus {
            sentences: corpus.sentences[start..start + size].to_vec(),
            provenance: corpus.provenance.clone(),
        };
        start += size;
        if size > 0 {
            write(&out.join(name), part.to_jsonl())?;
        }
    }
    let st = corpus.stats();
    eprintln!(
        "{} sentences ({} similes) written to {}",
        st.sentences,
        st.simile_sentences,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    k: usize,
    classification_f1: f64,
    extraction_f1: f64,
    best_epoch: usize,
}

fn cmd_sweep_k(
    corpus: &Path,
    config: Option<&Path>,
    k_max: usize,
    fold: usize,
    seed: Option<u64>,
    json_out: Option<&Path>,
    plot_out: Option<&Path>,
) -> Result<()> {
    let base = load_config(config, seed)?;
    let corpus = load_corpus(corpus)?;
    let data = fold_data(&corpus, &base, fold)?;
    let mut rows = Vec::new();
    for k in 0..=k_max {
        let cfg = RunConfig {
            mode: Mode::Cyclic,
            tasks: vec![1, 2, 3],
            k: k as i64,
            ..base.clone()
        };
        let outcome = train(&data.train, &data.valid, &data.vocab, &cfg, &mut |e| {
            eprintln!(
                "K={k} {}",
                serde_json::to_string(e).expect("log serializes")
            );
        })?;
        let (report, _) = evaluate(&outcome.checkpoint.params, &data.test, &cfg.wiring()?)?;
        rows.push(SweepRow {
            k,
            classification_f1: 100.0 * report.classification.f1,
            extraction_f1: 100.0 * report.extraction.f1,
            best_epoch: outcome.best_epoch,
        });
    }
    print!("{}", sweep_table(&rows));
    if let Some(p) = json_out {
        write(p, json(&rows))?;
    }
    if let Some(p) = plot_out {
        let xs: Vec<String> = rows.iter().map(|r| r.k.to_string()).collect();
        let svg = plot::line_chart(
            "F1 against the number of cycles K",
            &xs,
            &[
                (
                    "F1-score for ①",
                    rows.iter().map(|r| r.classification_f1).collect(),
                ),
                (
                    "F1-score for ②",
                    rows.iter().map(|r| r.extraction_f1).collect(),
                ),
            ],
        );
        write(p, svg)?;
    }
    Ok(())
}

fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:<4} {:>16} {:>16}\n",
        "K", "F1-score for ①", "F1-score for ②"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<4} {:>16.2} {:>16.2}\n",
            r.k, r.classification_f1, r.extraction_f1
        ));
    }
    out
}
