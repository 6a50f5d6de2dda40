//! Word embeddings and the bidirectional LSTM sentence encoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Weights of one LSTM: input projection `[in, 4h]`, recurrent projection
/// `[h, 4h]` and bias `[1, 4h]`. Gate blocks are ordered input, forget,
/// candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmParams {
    pub fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w_h = store.require(&format!("{prefix}.w_h"))?;
        Ok(Self {
            w_x: store.require(&format!("{prefix}.w_x"))?,
            b: store.require(&format!("{prefix}.b"))?,
            hidden: store.get(w_h).rows(),
            w_h,
        })
    }
}

/// Hidden and cell state, each `[1, h]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(g: &mut Graph<'_>, hidden: usize) -> Self {
        Self {
            h: g.constant(Tensor::zeros(1, hidden)),
            c: g.constant(Tensor::zeros(1, hidden)),
        }
    }
}

/// One LSTM update from input `x` (`[1, in]`).
pub fn lstm_step(g: &mut Graph<'_>, p: &LstmParams, x: Var, state: LstmState) -> Result<LstmState> {
    let w_x = g.param(p.w_x);
    let b = g.param(p.b);
    let proj = g.matmul(x, w_x)?;
    let proj = g.add_row(proj, b)?;
    step_projected(g, p, proj, state)
}

fn step_projected(
    g: &mut Graph<'_>,
    p: &LstmParams,
    proj: Var,
    state: LstmState,
) -> Result<LstmState> {
    let h = p.hidden;
    let w_h = g.param(p.w_h);
    let rec = g.matmul(state.h, w_h)?;
    let z = g.add(proj, rec)?;
    let zi = g.slice_cols(z, 0, h)?;
    let zf = g.slice_cols(z, h, h)?;
    let zc = g.slice_cols(z, 2 * h, h)?;
    let zo = g.slice_cols(z, 3 * h, h)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zc);
    let o = g.sigmoid(zo);
    let keep = g.mul(f, state.c)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h_new = g.mul(o, tc)?;
    Ok(LstmState { h: h_new, c })
}

/// Runs an LSTM over the rows of `inputs` (`[N, in]`) in row order, returning
/// one hidden-state row per input and the final state.
pub fn run_lstm(
    g: &mut Graph<'_>,
    p: &LstmParams,
    inputs: Var,
    init: LstmState,
) -> Result<(Vec<Var>, LstmState)> {
    let n = g.shape(inputs).0;
    let w_x = g.param(p.w_x);
    let b = g.param(p.b);
    let proj = g.matmul(inputs, w_x)?;
    let proj = g.add_row(proj, b)?;
    let mut state = init;
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let row = g.gather_rows(proj, &[t])?;
        state = step_projected(g, p, row, state)?;
        out.push(state.h);
    }
    Ok((out, state))
}

/// Inverted dropout driven by its own seeded generator. Rate 0 is the identity.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn disabled() -> Self {
        Self::new(0.0, 0)
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let (m, n) = g.shape(x);
        let keep = 1.0 - self.rate;
        let mask = (0..m * n)
            .map(|_| {
                if self.rng.gen_bool(keep) {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let mask = g.constant(Tensor::new(vec![m, n], mask)?);
        g.mul(x, mask)
    }
}

/// Shared per-token representations.
#[derive(Clone, Copy, Debug)]
pub struct EncodedSentence {
    /// `[N, 2h]`, row `i` is `[forward_h_i, backward_h_i]`.
    pub h: Var,
    pub forward_final: LstmState,
    pub backward_final: LstmState,
    pub len: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct Encoder {
    pub embedding: ParamId,
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl Encoder {
    pub fn resolve(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            embedding: store.require("embedding")?,
            forward: LstmParams::resolve(store, "encoder.fwd")?,
            backward: LstmParams::resolve(store, "encoder.bwd")?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    /// Embedding rows for `tokens`; ids must be inside the vocabulary.
    pub fn embed(&self, g: &mut Graph<'_>, tokens: &[usize]) -> Result<Var> {
        let size = g.store().get(self.embedding).rows();
        if let Some(&id) = tokens.iter().find(|&&t| t >= size) {
            return Err(Error::OutOfVocabulary { id, size });
        }
        let table = g.param(self.embedding);
        g.gather_rows(table, tokens)
    }

    pub fn encode(
        &self,
        g: &mut Graph<'_>,
        tokens: &[usize],
        dropout: &mut Dropout,
    ) -> Result<EncodedSentence> {
        if tokens.is_empty() {
            return Err(Error::InvalidInstance(
                "cannot encode an empty sentence".into(),
            ));
        }
        let emb = self.embed(g, tokens)?;
        let emb = dropout.apply(g, emb)?;
        let n = tokens.len();
        let h = self.hidden();

        let init = LstmState::zeros(g, h);
        let (fwd_rows, forward_final) = run_lstm(g, &self.forward, emb, init)?;

        let rev: Vec<usize> = (0..n).rev().collect();
        let emb_rev = g.gather_rows(emb, &rev)?;
        let init = LstmState::zeros(g, h);
        let (mut bwd_rows, backward_final) = run_lstm(g, &self.backward, emb_rev, init)?;
        bwd_rows.reverse();

        let fwd = g.concat_rows(&fwd_rows)?;
        let bwd = g.concat_rows(&bwd_rows)?;
        let hm = g.concat_cols(&[fwd, bwd])?;
        Ok(EncodedSentence {
            h: hm,
            forward_final,
            backward_final,
            len: n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn lstm_store(input: usize, hidden: usize, value: Option<f64>, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mk = |r: usize, c: usize| match value {
            Some(v) => Tensor::filled(r, c, v),
            None => Tensor::uniform(r, c, -0.5, 0.5, &mut rng),
        };
        let mut map = BTreeMap::new();
        map.insert("l.w_x".to_string(), mk(input, 4 * hidden));
        map.insert("l.w_h".to_string(), mk(hidden, 4 * hidden));
        map.insert("l.b".to_string(), mk(1, 4 * hidden));
        ParamStore::from_map(map, seed)
    }

    #[test]
    fn zero_weights_zero_state_give_zero_output() {
        let store = lstm_store(3, 4, Some(0.0), 0);
        let p = LstmParams::resolve(&store, "l").unwrap();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::row(vec![0.3, -1.0, 2.0]));
        let s0 = LstmState::zeros(&mut g, 4);
        let s1 = lstm_step(&mut g, &p, x, s0).unwrap();
        assert!(g.value(s1.h).data().iter().all(|&v| v == 0.0));
        assert!(g.value(s1.c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_depends_on_incoming_state() {
        let store = lstm_store(3, 4, None, 1);
        let p = LstmParams::resolve(&store, "l").unwrap();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::row(vec![0.3, -1.0, 2.0]));
        let a = LstmState::zeros(&mut g, 4);
        let b = LstmState {
            h: g.constant(Tensor::row(vec![0.5, -0.5, 0.1, 0.9])),
            c: g.constant(Tensor::row(vec![0.2, 0.0, -0.3, 0.4])),
        };
        let ha = lstm_step(&mut g, &p, x, a).unwrap().h;
        let hb = lstm_step(&mut g, &p, x, b).unwrap().h;
        assert_ne!(g.value(ha), g.value(hb));
    }

    #[test]
    fn dropout_zero_is_identity_and_seeded_masks_repeat() {
        let store = lstm_store(1, 1, Some(0.0), 0);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::filled(4, 8, 1.0));
        let mut off = Dropout::disabled();
        assert_eq!(off.apply(&mut g, x).unwrap(), x);

        let mut d1 = Dropout::new(0.5, 42);
        let mut d2 = Dropout::new(0.5, 42);
        let a = d1.apply(&mut g, x).unwrap();
        let b = d2.apply(&mut g, x).unwrap();
        assert_eq!(g.value(a), g.value(b));
        assert!(g.value(a).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
