//! The full model: shared encoder plus the three heads, wired as plain
//! multitask learning, a one-pass pipeline, or a cycle.
//!
//! In the cyclic wiring each loop runs attention on `H` (plus the previous
//! decoder states), extraction on the attention-augmented `H`, and decoding
//! from the tag distributions. A closing classification on `H + S` follows the
//! last loop. The classification loss comes from that closing pass; the
//! extraction and decoding losses come from the last loop.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, LocalAttentionResult};
use crate::config::{LossWeights, Mode, WiringConfig};
use crate::corpus::SentenceInstance;
use crate::decoder::Decoder;
use crate::encoder::{Dropout, Encoder};
use crate::error::Result;
use crate::extractor::{augment, Extractor};
use crate::graph::{Graph, Var};
use crate::iobes::{Label, NUM_LABELS};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const INIT_RANGE: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    /// Per-direction LSTM width; token representations are twice this.
    pub hidden: usize,
    pub ffn: usize,
}

/// Per-sentence losses and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sc: f64,
    pub ce: f64,
    pub sd: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.sc += other.sc;
        self.ce += other.ce;
        self.sd += other.sd;
        self.total += other.total;
    }
}

/// `alpha * sc + beta * ce + (1 - alpha - beta) * sd`, evaluated in the same
/// order as the graph does.
pub fn joint_loss(sc: f64, ce: f64, sd: f64, w: LossWeights) -> f64 {
    w.alpha * sc + w.beta * ce + w.gamma() * sd
}

/// Per-call settings that are not part of the wiring.
#[derive(Clone, Debug)]
pub struct ForwardContext {
    pub dropout: Dropout,
    /// Run Viterbi on the final emissions.
    pub decode: bool,
    /// Replace every cross-task input by its neutral value: no attention
    /// column, uniform tag distributions, no decoder states.
    pub ablate_cross_feed: bool,
}

impl ForwardContext {
    pub fn training(dropout: Dropout) -> Self {
        Self {
            dropout,
            decode: false,
            ablate_cross_feed: false,
        }
    }

    pub fn inference() -> Self {
        Self {
            dropout: Dropout::disabled(),
            decode: true,
            ablate_cross_feed: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub loss: Var,
    pub breakdown: LossBreakdown,
    pub predicted_simile: bool,
    pub class_probs: [f64; 2],
    /// Attention of the final classification, if classification ran.
    pub attention: Option<LocalAttentionResult>,
    /// Decoded tags; all `O` when extraction is off.
    pub tags: Option<Vec<Label>>,
    pub tag_log_prob: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct CyclicModel {
    pub dims: ModelDims,
    pub encoder: Encoder,
    pub classifier: Classifier,
    pub extractor: Extractor,
    pub decoder: Decoder,
}

/// Parameter names and shapes for the given sizes.
pub fn parameter_shapes(d: &ModelDims) -> Vec<(String, usize, usize)> {
    let two_h = 2 * d.hidden;
    let mut out = vec![("embedding".to_string(), d.vocab, d.embed)];
    for dir in ["fwd", "bwd"] {
        out.push((format!("encoder.{dir}.w_x"), d.embed, 4 * d.hidden));
        out.push((format!("encoder.{dir}.w_h"), d.hidden, 4 * d.hidden));
        out.push((format!("encoder.{dir}.b"), 1, 4 * d.hidden));
        out.push((format!("decoder.{dir}.w_d0"), two_h + NUM_LABELS, d.hidden));
        out.push((format!("decoder.{dir}.w_d2"), d.hidden, d.embed));
        out.push((format!("decoder.{dir}.w_d3"), d.embed, d.embed));
    }
    for (name, r, c) in [
        ("classifier.w_o", two_h, two_h),
        ("classifier.w_p", two_h, two_h),
        ("classifier.v_w", two_h, 1),
        ("classifier.v_a", two_h, 1),
        ("classifier.w_c1", two_h, d.ffn),
        ("classifier.w_c0", d.ffn, 2),
        ("extractor.w_m", two_h + 1, d.ffn),
        ("extractor.b_m", 1, d.ffn),
        ("extractor.w_s", d.ffn, NUM_LABELS),
        ("extractor.b_s", 1, NUM_LABELS),
        ("extractor.transitions", NUM_LABELS + 2, NUM_LABELS + 2),
    ] {
        out.push((name.to_string(), r, c));
    }
    out
}

impl CyclicModel {
    /// Fresh parameters: matrices uniform in `[-0.08, 0.08)`, biases and
    /// transitions zero. Initialization runs in sorted name order.
    pub fn init(dims: ModelDims, seed: u64) -> Result<(Self, ParamStore)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shapes = parameter_shapes(&dims);
        shapes.sort();
        let mut map = BTreeMap::new();
        for (name, r, c) in shapes {
            let zero = name.ends_with(".b")
                || name.ends_with(".b_m")
                || name.ends_with(".b_s")
                || name.ends_with("transitions");
            let t = if zero {
                Tensor::zeros(r, c)
            } else {
                Tensor::uniform(r, c, -INIT_RANGE, INIT_RANGE, &mut rng)
            };
            map.insert(name, t);
        }
        let store = ParamStore::from_map(map, seed);
        Ok((Self::bind(&store)?, store))
    }

    pub fn bind(store: &ParamStore) -> Result<Self> {
        let encoder = Encoder::resolve(store)?;
        let emb = store.get(encoder.embedding);
        let dims = ModelDims {
            vocab: emb.rows(),
            embed: emb.cols(),
            hidden: encoder.hidden(),
            ffn: store.get(store.require("classifier.w_c0")?).rows(),
        };
        let expected = parameter_shapes(&dims);
        for (name, r, c) in &expected {
            let t = store.get(store.require(name)?);
            if t.shape() != [*r, *c] {
                return Err(crate::error::Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected [{r}, {c}]",
                    t.shape()
                )));
            }
        }
        if store.len() != expected.len() {
            return Err(crate::error::Error::Checkpoint(format!(
                "{} parameters, expected {}",
                store.len(),
                expected.len()
            )));
        }
        Ok(Self {
            dims,
            encoder,
            classifier: Classifier::resolve(store)?,
            extractor: Extractor::resolve(store)?,
            decoder: Decoder::resolve(store, encoder)?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        inst: &SentenceInstance,
        wiring: &WiringConfig,
        weights: LossWeights,
        ctx: &mut ForwardContext,
    ) -> Result<ForwardOutput> {
        inst.validate()?;
        let wiring = wiring.effective();
        wiring.validate()?;
        let tasks = wiring.tasks;
        let p = inst.comparator_index;
        let n = inst.len();

        let enc = self.encoder.encode(g, &inst.tokens, &mut ctx.dropout)?;
        // one dropout mask per head, drawn in a fixed order
        let h_cls = ctx.dropout.apply(g, enc.h)?;
        let h_ext = ctx.dropout.apply(g, enc.h)?;
        let h_dec = ctx.dropout.apply(g, enc.h)?;
        let uniform = g.constant(Tensor::filled(n, NUM_LABELS, 1.0 / NUM_LABELS as f64));
        let gold = inst.tag_ids();
        let ablate = ctx.ablate_cross_feed;
        let extractor = self.extractor.with_scores(wiring.emission_scores);

        let mut sc = None;
        let mut ce = None;
        let mut sd = None;
        let mut emissions = None;
        let mut cls = None;

        match wiring.mode {
            Mode::Mtl => {
                if tasks.classify {
                    let (l, out) = self.classifier.classification_loss(
                        g,
                        inst.is_simile,
                        h_cls,
                        None,
                        p,
                        wiring.attention,
                    )?;
                    sc = Some(l);
                    cls = Some(out);
                }
                if tasks.extract {
                    let aug = augment(g, h_ext, None)?;
                    let m = extractor.emissions(g, aug)?;
                    ce = Some(extractor.nll(g, &m, &gold)?);
                    emissions = Some(m);
                }
                if tasks.decode {
                    sd = Some(self.decoder.run(g, &inst.tokens, h_dec, uniform)?.loss);
                }
            }
            Mode::Pipeline => {
                let mut attention = None;
                if tasks.classify {
                    let (l, out) = self.classifier.classification_loss(
                        g,
                        inst.is_simile,
                        h_cls,
                        None,
                        p,
                        wiring.attention,
                    )?;
                    sc = Some(l);
                    attention = (!ablate).then(|| out.attention.clone());
                    cls = Some(out);
                }
                let mut m_feed = uniform;
                if tasks.extract {
                    let aug = augment(g, h_ext, attention.as_ref())?;
                    let m = extractor.emissions(g, aug)?;
                    ce = Some(extractor.nll(g, &m, &gold)?);
                    emissions = Some(m);
                    if !ablate {
                        m_feed = m.probs;
                    }
                }
                if tasks.decode {
                    sd = Some(self.decoder.run(g, &inst.tokens, h_dec, m_feed)?.loss);
                }
            }
            Mode::Cyclic => {
                let mut states: Option<Var> = None;
                for _ in 0..wiring.k {
                    let cls_in = match states {
                        Some(s) => g.add(h_cls, s)?,
                        None => h_cls,
                    };
                    let att = self.classifier.attend(g, cls_in, p, wiring.attention)?;
                    let aug = augment(g, h_ext, (!ablate).then_some(&att))?;
                    let m = extractor.emissions(g, aug)?;
                    ce = Some(extractor.nll(g, &m, &gold)?);
                    emissions = Some(m);
                    let m_feed = if ablate { uniform } else { m.probs };
                    let dec = self.decoder.run(g, &inst.tokens, h_dec, m_feed)?;
                    sd = Some(dec.loss);
                    states = (!ablate).then_some(dec.states);
                }
                let (l, out) = self.classifier.classification_loss(
                    g,
                    inst.is_simile,
                    h_cls,
                    states,
                    p,
                    wiring.attention,
                )?;
                sc = Some(l);
                cls = Some(out);
            }
        }

        let term = |g: &mut Graph<'_>, v: Option<Var>, w: f64| {
            let v = v.unwrap_or_else(|| g.constant(Tensor::scalar(0.0)));
            (g.scalar(v), g.scale(v, w))
        };
        let (sc_v, a) = term(g, sc, weights.alpha);
        let (ce_v, b) = term(g, ce, weights.beta);
        let (sd_v, c) = term(g, sd, weights.gamma());
        let ab = g.add(a, b)?;
        let loss = g.add(ab, c)?;
        let breakdown = LossBreakdown {
            sc: sc_v,
            ce: ce_v,
            sd: sd_v,
            total: g.scalar(loss),
        };

        let (tags, tag_log_prob) = match (ctx.decode, emissions) {
            (true, Some(m)) => {
                let decoded =
                    extractor.decode(g.value(m.scores), g.store(), wiring.constrained_decoding)?;
                (Some(decoded.tags), Some(decoded.log_prob))
            }
            (true, None) => (Some(vec![Label::O; n]), None),
            _ => (None, None),
        };
        let (predicted_simile, class_probs, attention) = match cls {
            Some(c) => (c.predicted, c.class_probs, Some(c.attention)),
            None => (false, [1.0, 0.0], None),
        };
        Ok(ForwardOutput {
            loss,
            breakdown,
            predicted_simile,
            class_probs,
            attention,
            tags,
            tag_log_prob,
        })
    }
}
