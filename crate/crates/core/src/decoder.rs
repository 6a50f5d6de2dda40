//! Bidirectional language-model decoder that reconstructs the sentence from
//! a summary of the encoder states and the tag distributions.
//!
//! Both directions reuse the encoder's LSTM weights and the embedding table;
//! the output projection is the transposed embedding table. Each direction
//! has its own initial projection `W_d0`, state projection `W_d2` and input
//! projection `W_d3`.

use crate::encoder::{run_lstm, Encoder, LstmParams, LstmState};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::vocab::{BOS, EOS};

#[derive(Clone, Copy, Debug)]
pub struct DirectionParams {
    pub w_d0: ParamId,
    pub w_d2: ParamId,
    pub w_d3: ParamId,
}

impl DirectionParams {
    fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            w_d0: store.require(&format!("{prefix}.w_d0"))?,
            w_d2: store.require(&format!("{prefix}.w_d2"))?,
            w_d3: store.require(&format!("{prefix}.w_d3"))?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Decoder {
    pub forward: DirectionParams,
    pub backward: DirectionParams,
    pub encoder: Encoder,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderOutput {
    /// `[N, 2h]`, row `t` is `[forward_s_t, backward_s_t]`.
    pub states: Var,
    pub forward_loss: Var,
    pub backward_loss: Var,
    /// Sum of both directions.
    pub loss: Var,
}

impl Decoder {
    pub fn resolve(store: &ParamStore, encoder: Encoder) -> Result<Self> {
        Ok(Self {
            forward: DirectionParams::resolve(store, "decoder.fwd")?,
            backward: DirectionParams::resolve(store, "decoder.bwd")?,
            encoder,
        })
    }

    /// Initial hidden states `(forward, backward)`, each `[1, h]`, from
    /// `sum_i [h_i, m_i]`.
    pub fn init_state(&self, g: &mut Graph<'_>, h: Var, m: Var) -> Result<(Var, Var)> {
        if g.shape(h).0 != g.shape(m).0 {
            return Err(Error::Shape {
                op: "decoder init",
                lhs: g.value(h).shape().to_vec(),
                rhs: g.value(m).shape().to_vec(),
            });
        }
        let hm = g.concat_cols(&[h, m])?;
        let summed = g.sum_rows(hm);
        let wf = g.param(self.forward.w_d0);
        let wb = g.param(self.backward.w_d0);
        Ok((g.matmul(summed, wf)?, g.matmul(summed, wb)?))
    }

    /// Runs one direction with teacher forcing. `inputs` are the previous
    /// tokens in scan order and `targets` the tokens to predict, also in scan
    /// order. Returns the states in scan order and the summed NLL.
    fn run_direction(
        &self,
        g: &mut Graph<'_>,
        lstm: &LstmParams,
        dir: &DirectionParams,
        s0: Var,
        inputs: &[usize],
        targets: &[usize],
    ) -> Result<(Var, Var)> {
        let emb = self.encoder.embed(g, inputs)?;
        let hidden = lstm.hidden;
        if g.shape(s0) != (1, hidden) {
            return Err(Error::Shape {
                op: "decoder initial state",
                lhs: g.value(s0).shape().to_vec(),
                rhs: vec![1, hidden],
            });
        }
        let init = LstmState {
            h: s0,
            c: g.constant(Tensor::zeros(1, hidden)),
        };
        let (rows, _) = run_lstm(g, lstm, emb, init)?;
        let states = g.concat_rows(&rows)?;
        let w2 = g.param(dir.w_d2);
        let w3 = g.param(dir.w_d3);
        let a = g.matmul(states, w2)?;
        let b = g.matmul(emb, w3)?;
        let q = g.add(a, b)?;
        let q = g.tanh(q);
        let table = g.param(self.encoder.embedding);
        let logits = g.matmul_nt(q, table)?;
        let logp = g.log_softmax_rows(logits)?;
        let index: Vec<(usize, usize)> = targets.iter().copied().enumerate().collect();
        let picked = g.pick(logp, &index)?;
        let total = g.sum_all(picked);
        Ok((states, g.scale(total, -1.0)))
    }

    /// Left-to-right pass seeded with BOS; states in sentence order.
    pub fn lm_forward(&self, g: &mut Graph<'_>, tokens: &[usize], s0: Var) -> Result<(Var, Var)> {
        let mut inputs = Vec::with_capacity(tokens.len());
        inputs.push(BOS);
        inputs.extend_from_slice(&tokens[..tokens.len().saturating_sub(1)]);
        self.run_direction(g, &self.encoder.forward, &self.forward, s0, &inputs, tokens)
    }

    /// Right-to-left pass seeded with EOS; states returned in sentence order.
    pub fn lm_backward(&self, g: &mut Graph<'_>, tokens: &[usize], s0: Var) -> Result<(Var, Var)> {
        let n = tokens.len();
        let targets: Vec<usize> = tokens.iter().rev().copied().collect();
        let mut inputs = Vec::with_capacity(n);
        inputs.push(EOS);
        inputs.extend_from_slice(&targets[..n.saturating_sub(1)]);
        let (states, loss) = self.run_direction(
            g,
            &self.encoder.backward,
            &self.backward,
            s0,
            &inputs,
            &targets,
        )?;
        let rev: Vec<usize> = (0..n).rev().collect();
        Ok((g.gather_rows(states, &rev)?, loss))
    }

    pub fn run(
        &self,
        g: &mut Graph<'_>,
        tokens: &[usize],
        h: Var,
        m: Var,
    ) -> Result<DecoderOutput> {
        if tokens.is_empty() {
            return Err(Error::InvalidInstance(
                "cannot decode an empty sentence".into(),
            ));
        }
        let (sf, sb) = self.init_state(g, h, m)?;
        let (fs, forward_loss) = self.lm_forward(g, tokens, sf)?;
        let (bs, backward_loss) = self.lm_backward(g, tokens, sb)?;
        let states = g.concat_cols(&[fs, bs])?;
        let loss = g.add(forward_loss, backward_loss)?;
        Ok(DecoderOutput {
            states,
            forward_loss,
            backward_loss,
            loss,
        })
    }
}
