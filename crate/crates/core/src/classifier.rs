//! Simile sentence classification with attention restricted to a learned
//! window around the comparator.
//!
//! The half-width is `L = (N/2) * sigmoid(v_w . tanh(sum_i h_i W_o + h_p W_p))`,
//! rounded half-up and clamped to `[0, floor(N/2)]`. Attention scores inside the
//! window are `v_a . tanh(h_i W_o)` (the same `W_o`), and the class
//! distribution is `softmax(ReLU(r W_c1) W_c0)` on the attended context `r`.
//!
//! The rounding step is not differentiable, so with the hard window `v_w` and
//! `W_p` receive no gradient. The optional soft window adds a Gaussian
//! log-penalty `-2 (i-p)^2 / L_real^2` to the scores, which lets gradient reach
//! the window size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Axis, Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Class index of literal sentences; simile is 1.
pub const LITERAL: usize = 0;
pub const SIMILE: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Local,
    /// Attend over the whole sentence; no window size is computed.
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionOptions {
    pub mode: AttentionMode,
    pub soft_window: bool,
}

impl Default for AttentionOptions {
    fn default() -> Self {
        Self {
            mode: AttentionMode::Local,
            soft_window: false,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct WindowSize {
    /// The continuous size as a graph node.
    pub l_real: Var,
    pub value: f64,
    /// Discretized half-width.
    pub half_width: usize,
}

#[derive(Clone, Debug)]
pub struct LocalAttentionResult {
    /// Continuous window size; `None` under global attention.
    pub l_real: Option<f64>,
    pub half_width: usize,
    /// Inclusive index range `[lo, hi]`.
    pub window: (usize, usize),
    /// Attention weights over the window only.
    pub weights: Vec<f64>,
    /// Weights as a `[w, 1]` node.
    pub weights_var: Var,
    /// Context vector `[1, 2h]`.
    pub context: Var,
}

impl LocalAttentionResult {
    /// Weights over all `n` positions, zero outside the window.
    pub fn full_weights(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        out[self.window.0..=self.window.1].copy_from_slice(&self.weights);
        out
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierOutput {
    /// `[1, 2]` log class probabilities (literal, simile).
    pub log_probs: Var,
    pub class_probs: [f64; 2],
    /// Ties go to literal.
    pub predicted: bool,
    pub attention: LocalAttentionResult,
}

#[derive(Clone, Copy, Debug)]
pub struct Classifier {
    pub w_o: ParamId,
    pub w_p: ParamId,
    pub v_w: ParamId,
    pub v_a: ParamId,
    pub w_c1: ParamId,
    pub w_c0: ParamId,
}

/// Round half up, then clamp to `[0, floor(n/2)]`.
pub fn discretize_window(l_real: f64, n: usize) -> usize {
    let l = (l_real + 0.5).floor().max(0.0) as usize;
    l.min(n / 2)
}

impl Classifier {
    pub fn resolve(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            w_o: store.require("classifier.w_o")?,
            w_p: store.require("classifier.w_p")?,
            v_w: store.require("classifier.v_w")?,
            v_a: store.require("classifier.v_a")?,
            w_c1: store.require("classifier.w_c1")?,
            w_c0: store.require("classifier.w_c0")?,
        })
    }

    pub fn window_size(&self, g: &mut Graph<'_>, h: Var, p: usize) -> Result<WindowSize> {
        let n = g.shape(h).0;
        if p >= n {
            return Err(Error::InvalidInstance(format!(
                "comparator {p} outside {n} tokens"
            )));
        }
        let w_o = g.param(self.w_o);
        let w_p = g.param(self.w_p);
        let v_w = g.param(self.v_w);
        let proj = g.matmul(h, w_o)?;
        let summed = g.sum_rows(proj);
        let hp = g.gather_rows(h, &[p])?;
        let centre = g.matmul(hp, w_p)?;
        let pre = g.add(summed, centre)?;
        let act = g.tanh(pre);
        let score = g.matmul(act, v_w)?;
        let gate = g.sigmoid(score);
        let l_real = g.scale(gate, n as f64 / 2.0);
        let value = g.scalar(l_real);
        let half_width = discretize_window(value, n);
        g.record_branch(half_width);
        Ok(WindowSize {
            l_real,
            value,
            half_width,
        })
    }

    /// Attention over `[p-L, p+L]` clipped to the sentence.
    pub fn local_attention(
        &self,
        g: &mut Graph<'_>,
        h: Var,
        p: usize,
        half_width: usize,
        soft: Option<&WindowSize>,
    ) -> Result<LocalAttentionResult> {
        let n = g.shape(h).0;
        let lo = p.saturating_sub(half_width);
        let hi = (p + half_width).min(n - 1);
        self.attend_range(g, h, p, (lo, hi), soft, half_width)
    }

    fn attend_range(
        &self,
        g: &mut Graph<'_>,
        h: Var,
        p: usize,
        (lo, hi): (usize, usize),
        soft: Option<&WindowSize>,
        half_width: usize,
    ) -> Result<LocalAttentionResult> {
        let idx: Vec<usize> = (lo..=hi).collect();
        let hw = g.gather_rows(h, &idx)?;
        let w_o = g.param(self.w_o);
        let v_a = g.param(self.v_a);
        let proj = g.matmul(hw, w_o)?;
        let act = g.tanh(proj);
        let mut scores = g.matmul(act, v_a)?;
        if let Some(ws) = soft {
            let dist: Vec<f64> = idx
                .iter()
                .map(|&i| 2.0 * (i as f64 - p as f64).powi(2))
                .collect();
            let dist = g.constant(Tensor::column(dist));
            let sq = g.mul(ws.l_real, ws.l_real)?;
            let inv = g.recip(sq);
            let penalty = g.mul_scalar(dist, inv)?;
            scores = g.sub(scores, penalty)?;
        }
        let weights_var = g.softmax(scores, Axis::Column)?;
        let wt = g.transpose(weights_var);
        let context = g.matmul(wt, hw)?;
        Ok(LocalAttentionResult {
            l_real: soft.map(|w| w.value),
            half_width,
            window: (lo, hi),
            weights: g.value(weights_var).data().to_vec(),
            weights_var,
            context,
        })
    }

    /// Window size plus attention, or whole-sentence attention in global mode.
    pub fn attend(
        &self,
        g: &mut Graph<'_>,
        h: Var,
        p: usize,
        opts: AttentionOptions,
    ) -> Result<LocalAttentionResult> {
        let n = g.shape(h).0;
        match opts.mode {
            AttentionMode::Global => self.attend_range(g, h, p, (0, n - 1), None, n),
            AttentionMode::Local => {
                let ws = self.window_size(g, h, p)?;
                let soft = opts.soft_window.then_some(&ws);
                let mut out = self.local_attention(g, h, p, ws.half_width, soft)?;
                out.l_real = Some(ws.value);
                Ok(out)
            }
        }
    }

    /// Class log-probabilities from a context vector `[1, 2h]`.
    pub fn classify(&self, g: &mut Graph<'_>, r: Var) -> Result<(Var, [f64; 2], bool)> {
        let w_c1 = g.param(self.w_c1);
        let w_c0 = g.param(self.w_c0);
        let hidden = g.matmul(r, w_c1)?;
        let hidden = g.relu(hidden);
        let logits = g.matmul(hidden, w_c0)?;
        let log_probs = g.log_softmax_rows(logits)?;
        let lp = g.value(log_probs).data();
        let probs = [lp[LITERAL].exp(), lp[SIMILE].exp()];
        Ok((log_probs, probs, probs[SIMILE] > probs[LITERAL]))
    }

    /// Full classifier pass on `H` (plus decoder states `S` when given).
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        h: Var,
        s: Option<Var>,
        p: usize,
        opts: AttentionOptions,
    ) -> Result<ClassifierOutput> {
        let h = match s {
            Some(s) => {
                if g.shape(s) != g.shape(h) {
                    return Err(Error::Shape {
                        op: "classifier H + S",
                        lhs: g.value(h).shape().to_vec(),
                        rhs: g.value(s).shape().to_vec(),
                    });
                }
                g.add(h, s)?
            }
            None => h,
        };
        let attention = self.attend(g, h, p, opts)?;
        let (log_probs, class_probs, predicted) = self.classify(g, attention.context)?;
        Ok(ClassifierOutput {
            log_probs,
            class_probs,
            predicted,
            attention,
        })
    }

    /// `-log p(y | H, S)` together with the classifier output.
    pub fn classification_loss(
        &self,
        g: &mut Graph<'_>,
        is_simile: bool,
        h: Var,
        s: Option<Var>,
        p: usize,
        opts: AttentionOptions,
    ) -> Result<(Var, ClassifierOutput)> {
        let out = self.forward(g, h, s, p, opts)?;
        let y = if is_simile { SIMILE } else { LITERAL };
        let picked = g.pick(out.log_probs, &[(0, y)])?;
        let loss = g.scale(picked, -1.0);
        Ok((loss, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn store(d: usize, f: usize, seed: u64, zero: &[&str]) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = [
            ("classifier.w_o", d, d),
            ("classifier.w_p", d, d),
            ("classifier.v_w", d, 1),
            ("classifier.v_a", d, 1),
            ("classifier.w_c1", d, f),
            ("classifier.w_c0", f, 2),
        ];
        let mut map = BTreeMap::new();
        for (name, r, c) in shapes {
            let t = if zero.contains(&name) {
                Tensor::zeros(r, c)
            } else {
                Tensor::uniform(r, c, -0.6, 0.6, &mut rng)
            };
            map.insert(name.to_string(), t);
        }
        ParamStore::from_map(map, seed)
    }

    fn rand_h(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(n, d, -1.0, 1.0, &mut rng)
    }

    #[test]
    fn zero_v_w_gives_quarter_length() {
        let st = store(6, 4, 1, &["classifier.v_w"]);
        let c = Classifier::resolve(&st).unwrap();
        let mut g = Graph::new(&st);
        let h = g.constant(rand_h(10, 6, 2));
        let ws = c.window_size(&mut g, h, 3).unwrap();
        assert!((ws.value - 2.5).abs() < 1e-15);
        assert_eq!(ws.half_width, 3);
    }

    #[test]
    fn window_bound_for_29_tokens() {
        let st = store(6, 4, 3, &[]);
        let c = Classifier::resolve(&st).unwrap();
        for seed in 0..20 {
            let mut g = Graph::new(&st);
            let h = g.constant(rand_h(29, 6, seed));
            let ws = c.window_size(&mut g, h, 14).unwrap();
            assert!(ws.value > 0.0 && ws.value < 14.5);
            assert!(ws.half_width <= 14);
        }
    }

    #[test]
    fn discretization_rounds_half_up_and_clamps() {
        assert_eq!(discretize_window(2.5, 10), 3);
        assert_eq!(discretize_window(2.49, 10), 2);
        assert_eq!(discretize_window(0.2, 10), 0);
        assert_eq!(discretize_window(2.9, 5), 2);
    }

    #[test]
    fn zero_width_window_returns_centre_row() {
        let st = store(6, 4, 4, &[]);
        let c = Classifier::resolve(&st).unwrap();
        let mut g = Graph::new(&st);
        let ht = rand_h(7, 6, 5);
        let h = g.constant(ht.clone());
        let a = c.local_attention(&mut g, h, 4, 0, None).unwrap();
        assert_eq!(a.weights, vec![1.0]);
        assert_eq!(g.value(a.context).data(), ht.row_slice(4));
        let full = a.full_weights(7);
        assert_eq!(full.iter().filter(|&&w| w != 0.0).count(), 1);
    }

    #[test]
    fn identical_rows_get_uniform_weights() {
        let st = store(6, 4, 6, &[]);
        let c = Classifier::resolve(&st).unwrap();
        let mut g = Graph::new(&st);
        let row = rand_h(1, 6, 7).into_data();
        let rows: Vec<Vec<f64>> = (0..9).map(|_| row.clone()).collect();
        let h = g.constant(Tensor::from_rows(&rows).unwrap());
        let a = c.local_attention(&mut g, h, 4, 2, None).unwrap();
        assert_eq!(a.window, (2, 6));
        for w in &a.weights {
            assert!((w - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn window_clipped_at_sentence_edges() {
        let st = store(6, 4, 8, &[]);
        let c = Classifier::resolve(&st).unwrap();
        let mut g = Graph::new(&st);
        let h = g.constant(rand_h(6, 6, 9));
        let a = c.local_attention(&mut g, h, 1, 3, None).unwrap();
        assert_eq!(a.window, (0, 4));
        let full = a.full_weights(6);
        assert_eq!(full[5], 0.0);
        assert!((full.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_output_layer_is_uniform_and_predicts_literal() {
        let st = store(6, 4, 10, &["classifier.w_c0"]);
        let c = Classifier::resolve(&st).unwrap();
        let mut g = Graph::new(&st);
        let h = g.constant(rand_h(5, 6, 11));
        let (loss, out) = c
            .classification_loss(&mut g, true, h, None, 2, AttentionOptions::default())
            .unwrap();
        assert_eq!(out.class_probs, [0.5, 0.5]);
        assert!(!out.predicted);
        assert!((g.scalar(loss) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn relu_blocks_negative_preactivations() {
        let st = store(4, 3, 12, &[]);
        let c = Classifier::resolve(&st).unwrap();
        let mut g = Graph::new(&st);
        // r W_c1 <= 0 everywhere when r = 0
        let r = g.constant(Tensor::zeros(1, 4));
        let (_, probs, _) = c.classify(&mut g, r).unwrap();
        assert_eq!(probs, [0.5, 0.5]);
    }

    #[test]
    fn zero_decoder_states_change_nothing() {
        let st = store(6, 4, 13, &[]);
        let c = Classifier::resolve(&st).unwrap();
        let mut g = Graph::new(&st);
        let h = g.constant(rand_h(8, 6, 14));
        let s = g.constant(Tensor::zeros(8, 6));
        let opts = AttentionOptions::default();
        let (a, _) = c
            .classification_loss(&mut g, false, h, None, 3, opts)
            .unwrap();
        let (b, _) = c
            .classification_loss(&mut g, false, h, Some(s), 3, opts)
            .unwrap();
        assert_eq!(g.scalar(a), g.scalar(b));
    }

    #[test]
    fn mismatched_decoder_states_rejected() {
        let st = store(6, 4, 15, &[]);
        let c = Classifier::resolve(&st).unwrap();
        let mut g = Graph::new(&st);
        let h = g.constant(rand_h(8, 6, 16));
        let s = g.constant(Tensor::zeros(7, 6));
        let r = c.classification_loss(&mut g, false, h, Some(s), 3, AttentionOptions::default());
        assert!(matches!(r, Err(Error::Shape { .. })));
    }
}
