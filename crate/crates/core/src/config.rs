//! Run configuration: model wiring, loss weights, optimizer and data settings.
//!
//! Stored as flat TOML. Every key has a default, unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{AttentionMode, AttentionOptions};
use crate::error::{Error, Result};
use crate::extractor::EmissionScores;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Three heads on the shared encoder with no cross-feeding.
    #[serde(rename = "mtl")]
    Mtl,
    /// One pass classification -> extraction -> decoding.
    #[serde(rename = "mtl-pip")]
    Pipeline,
    /// The pipeline closed back onto classification, run `k` times.
    #[serde(rename = "mtl-cyc")]
    Cyclic,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Mtl => "mtl",
            Mode::Pipeline => "mtl-pip",
            Mode::Cyclic => "mtl-cyc",
        })
    }
}

/// Task numbers: 1 classification, 2 extraction, 3 sentence decoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct TaskSet {
    pub classify: bool,
    pub extract: bool,
    pub decode: bool,
}

impl TaskSet {
    pub const ALL: TaskSet = TaskSet {
        classify: true,
        extract: true,
        decode: true,
    };

    pub fn from_numbers(tasks: &[u8]) -> Result<Self> {
        let mut set = TaskSet::default();
        for &t in tasks {
            let slot = match t {
                1 => &mut set.classify,
                2 => &mut set.extract,
                3 => &mut set.decode,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown task {t}; tasks are 1, 2 and 3"
                    )))
                }
            };
            if *slot {
                return Err(Error::Config(format!("task {t} listed twice")));
            }
            *slot = true;
        }
        if set == TaskSet::default() {
            return Err(Error::Config("at least one task is required".into()));
        }
        Ok(set)
    }

    pub fn is_all(&self) -> bool {
        *self == Self::ALL
    }
}

/// How the heads are connected for one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WiringConfig {
    pub mode: Mode,
    pub tasks: TaskSet,
    pub k: usize,
    pub attention: AttentionOptions,
    pub constrained_decoding: bool,
    pub emission_scores: EmissionScores,
}

impl WiringConfig {
    pub fn mtl() -> Self {
        Self {
            mode: Mode::Mtl,
            tasks: TaskSet::ALL,
            k: 0,
            attention: AttentionOptions::default(),
            constrained_decoding: true,
            emission_scores: EmissionScores::default(),
        }
    }

    pub fn cyclic(k: usize) -> Self {
        Self {
            mode: Mode::Cyclic,
            k,
            ..Self::mtl()
        }
    }

    /// Wiring after reducing a zero-cycle cyclic model to plain MTL.
    pub fn effective(&self) -> Self {
        if self.mode == Mode::Cyclic && self.k == 0 {
            Self {
                mode: Mode::Mtl,
                ..*self
            }
        } else {
            *self
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            Mode::Cyclic if !self.tasks.is_all() => {
                Err(Error::Config("mtl-cyc needs all three tasks".into()))
            }
            Mode::Pipeline if self.k > 1 => Err(Error::Config(format!(
                "mtl-pip runs a single pass; k = {} would close a cycle",
                self.k
            ))),
            _ => Ok(()),
        }
    }
}

/// Weights of the joint objective: `alpha * classification + beta *
/// extraction + (1 - alpha - beta) * decoding`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite())
            || alpha < 0.0
            || beta < 0.0
            || alpha + beta >= 1.0
        {
            return Err(Error::Config(format!(
                "loss weights need alpha >= 0, beta >= 0 and alpha + beta < 1 (got {alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn gamma(&self) -> f64 {
        1.0 - self.alpha - self.beta
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Active tasks; the pipeline runs them in ascending order.
    pub tasks: Vec<u8>,
    /// Cycle count. Signed so that a negative value is reported, not misparsed.
    pub k: i64,
    pub attention: AttentionMode,
    pub soft_window: bool,
    pub constrained_decoding: bool,
    pub emission_scores: EmissionScores,

    pub alpha: f64,
    pub beta: f64,

    pub batch_size: usize,
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub folds: usize,

    pub embed_dim: usize,
    pub hidden_size: usize,
    pub ffn_width: usize,
    pub min_freq: usize,
    pub pretrained_embeddings: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Cyclic,
            tasks: vec![1, 2, 3],
            k: 1,
            attention: AttentionMode::Local,
            soft_window: false,
            constrained_decoding: true,
            emission_scores: EmissionScores::default(),
            alpha: 0.1,
            beta: 0.8,
            batch_size: 80,
            learning_rate: 1.0,
            rho: 0.95,
            epsilon: 1e-6,
            dropout: 0.5,
            max_epochs: 30,
            patience: 5,
            seed: 1,
            folds: 5,
            embed_dim: 50,
            hidden_size: 128,
            ffn_width: 64,
            min_freq: 1,
            pretrained_embeddings: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 0 {
            return Err(Error::Config(format!("k must be >= 0, got {}", self.k)));
        }
        self.loss_weights()?;
        self.wiring()?;
        let positive = [
            ("batch_size", self.batch_size),
            ("folds", self.folds),
            ("embed_dim", self.embed_dim),
            ("hidden_size", self.hidden_size),
            ("ffn_width", self.ffn_width),
            ("min_freq", self.min_freq),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!(
                "rho must be in (0, 1), got {}",
                self.rho
            )));
        }
        if !(self.epsilon > 0.0 && self.learning_rate > 0.0) {
            return Err(Error::Config(
                "epsilon and learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn wiring(&self) -> Result<WiringConfig> {
        let k = usize::try_from(self.k)
            .map_err(|_| Error::Config(format!("k must be >= 0, got {}", self.k)))?;
        let mut sorted = self.tasks.clone();
        sorted.sort_unstable();
        if self.mode == Mode::Pipeline && sorted != self.tasks {
            return Err(Error::Config(format!(
                "mtl-pip tasks must run in the order 1 -> 2 -> 3, got {:?}",
                self.tasks
            )));
        }
        let w = WiringConfig {
            mode: self.mode,
            tasks: TaskSet::from_numbers(&self.tasks)?,
            k,
            attention: AttentionOptions {
                mode: self.attention,
                soft_window: self.soft_window,
            },
            constrained_decoding: self.constrained_decoding,
            emission_scores: self.emission_scores,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.alpha, self.beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let w = c.wiring().unwrap();
        assert_eq!(w.k, 1);
        assert_eq!(w.mode, Mode::Cyclic);
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig {
            k: 3,
            mode: Mode::Mtl,
            alpha: 0.15,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = RunConfig::from_toml("k = 2\nmode = \"mtl-cyc\"\n").unwrap();
        assert_eq!(c.k, 2);
        assert_eq!(c.emission_scores, EmissionScores::Log);
        let c = RunConfig::from_toml("emission_scores = \"probability\"").unwrap();
        assert_eq!(
            c.wiring().unwrap().emission_scores,
            EmissionScores::Probability
        );
        assert_eq!(c.batch_size, 80);
    }

    #[test]
    fn rejects_weight_sum_of_one() {
        assert!(LossWeights::new(0.2, 0.8).is_err());
        assert!(LossWeights::new(-0.1, 0.5).is_err());
        assert!(RunConfig::from_toml("alpha = 0.5\nbeta = 0.5").is_err());
        let w = LossWeights::new(0.1, 0.8).unwrap();
        assert!((w.gamma() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_negative_k_and_unknown_keys() {
        assert!(matches!(
            RunConfig::from_toml("k = -1"),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::from_toml("kk = 1").is_err());
    }

    #[test]
    fn pipeline_cannot_loop() {
        assert!(RunConfig::from_toml("mode = \"mtl-pip\"\nk = 2").is_err());
        assert!(RunConfig::from_toml("mode = \"mtl-pip\"\ntasks = [2, 1]").is_err());
        assert!(RunConfig::from_toml("mode = \"mtl-pip\"\ntasks = [1, 2, 1]").is_err());
        RunConfig::from_toml("mode = \"mtl-pip\"\ntasks = [1, 2]").unwrap();
    }

    #[test]
    fn cyclic_needs_every_task() {
        assert!(RunConfig::from_toml("mode = \"mtl-cyc\"\ntasks = [1, 2]").is_err());
    }

    #[test]
    fn zero_cycles_reduce_to_mtl() {
        let w = WiringConfig::cyclic(0).effective();
        assert_eq!(w.mode, Mode::Mtl);
        assert_eq!(WiringConfig::cyclic(1).effective().mode, Mode::Cyclic);
    }
}
