//! CRF tagging of tenor and vehicle spans over attention-augmented token
//! representations.
//!
//! Each token gets a label distribution `m_i = softmax(W_s tanh(W_m h~_i + b_m) + b_s)`.
//! The CRF adds either `log m_i` (the default) or `m_i` itself to the
//! sequence score. Probabilities are bounded in `[0, 1]`, which caps how much
//! a single token can move the score; log-probabilities do not have that cap.

use serde::{Deserialize, Serialize};

use crate::classifier::LocalAttentionResult;
use crate::crf;
use crate::error::{Error, Result};
use crate::graph::{Axis, Graph, Var};
use crate::iobes::{transition_mask, Label, NUM_LABELS};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Appends the attention weights as an extra column of `h`: `lambda_i` inside
/// the window, 0 outside. With no attention the column is all zeros.
pub fn augment(g: &mut Graph<'_>, h: Var, attention: Option<&LocalAttentionResult>) -> Result<Var> {
    let n = g.shape(h).0;
    let column = match attention {
        Some(a) => {
            let (lo, hi) = a.window;
            if hi >= n || g.shape(a.weights_var) != (hi - lo + 1, 1) {
                return Err(Error::Shape {
                    op: "augment",
                    lhs: vec![n],
                    rhs: vec![lo, hi],
                });
            }
            g.scatter_rows(a.weights_var, lo, n)?
        }
        None => g.constant(Tensor::zeros(n, 1)),
    };
    g.concat_cols(&[h, column])
}

/// What the CRF adds to the sequence score for each token and label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmissionScores {
    /// `log m_i[y]`.
    #[default]
    Log,
    /// `m_i[y]`.
    Probability,
}

/// Label distributions and the matching CRF scores, both `[N, 9]`.
#[derive(Clone, Copy, Debug)]
pub struct Emissions {
    pub probs: Var,
    pub scores: Var,
}

#[derive(Clone, Debug)]
pub struct Decoded {
    pub tags: Vec<Label>,
    /// Unnormalized score of the decoded sequence.
    pub score: f64,
    /// `score - logZ`.
    pub log_prob: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct Extractor {
    pub w_m: ParamId,
    pub b_m: ParamId,
    pub w_s: ParamId,
    pub b_s: ParamId,
    pub transitions: ParamId,
    pub scores: EmissionScores,
}

impl Extractor {
    pub fn resolve(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            w_m: store.require("extractor.w_m")?,
            b_m: store.require("extractor.b_m")?,
            w_s: store.require("extractor.w_s")?,
            b_s: store.require("extractor.b_s")?,
            transitions: store.require("extractor.transitions")?,
            scores: EmissionScores::default(),
        })
    }

    pub fn with_scores(self, scores: EmissionScores) -> Self {
        Self { scores, ..self }
    }

    pub fn emissions(&self, g: &mut Graph<'_>, augmented: Var) -> Result<Emissions> {
        let w = g.param(self.w_m);
        let b = g.param(self.b_m);
        let z = g.matmul(augmented, w)?;
        let z = g.add_row(z, b)?;
        let hidden = g.tanh(z);
        let w = g.param(self.w_s);
        let b = g.param(self.b_s);
        let logits = g.matmul(hidden, w)?;
        let logits = g.add_row(logits, b)?;
        let probs = g.softmax(logits, Axis::Row)?;
        let scores = match self.scores {
            EmissionScores::Log => g.log_softmax_rows(logits)?,
            EmissionScores::Probability => probs,
        };
        Ok(Emissions { probs, scores })
    }

    /// `-log p(gold | emission scores)`.
    pub fn nll(&self, g: &mut Graph<'_>, emissions: &Emissions, gold: &[usize]) -> Result<Var> {
        let tr = g.param(self.transitions);
        g.crf_nll(emissions.scores, tr, gold)
    }

    /// Best tag sequence for a matrix of emission scores. With `constrained`
    /// the decoder only follows well-formed IOBES transitions.
    pub fn decode(
        &self,
        emissions: &Tensor,
        store: &ParamStore,
        constrained: bool,
    ) -> Result<Decoded> {
        let tr = store.get(self.transitions);
        let mask = constrained.then(transition_mask);
        let (path, score) = crf::viterbi(emissions, tr, mask.as_deref())?;
        let log_z = crf::log_partition(emissions, tr)?;
        let tags = path
            .into_iter()
            .map(Label::from_id)
            .collect::<Result<Vec<_>>>()?;
        debug_assert_eq!(emissions.cols(), NUM_LABELS);
        Ok(Decoded {
            tags,
            score,
            log_prob: score - log_z,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{AttentionMode, AttentionOptions, Classifier};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn store(d: usize, zero: bool, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mk = |r: usize, c: usize| {
            if zero {
                Tensor::zeros(r, c)
            } else {
                Tensor::uniform(r, c, -0.5, 0.5, &mut rng)
            }
        };
        let mut map = BTreeMap::new();
        map.insert("extractor.w_m".to_string(), mk(d + 1, 6));
        map.insert("extractor.b_m".to_string(), mk(1, 6));
        map.insert("extractor.w_s".to_string(), mk(6, NUM_LABELS));
        map.insert("extractor.b_s".to_string(), mk(1, NUM_LABELS));
        map.insert(
            "extractor.transitions".to_string(),
            mk(NUM_LABELS + 2, NUM_LABELS + 2),
        );
        for (name, r, c) in [
            ("classifier.w_o", d, d),
            ("classifier.w_p", d, d),
            ("classifier.v_w", d, 1),
            ("classifier.v_a", d, 1),
            ("classifier.w_c1", d, 3),
            ("classifier.w_c0", 3, 2),
        ] {
            map.insert(name.to_string(), Tensor::uniform(r, c, -0.5, 0.5, &mut rng));
        }
        ParamStore::from_map(map, seed)
    }

    fn rand_h(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(n, d, -1.0, 1.0, &mut rng)
    }

    #[test]
    fn augmented_column_follows_window() {
        let st = store(4, false, 1);
        let c = Classifier::resolve(&st).unwrap();
        let mut g = Graph::new(&st);
        let h = g.constant(rand_h(9, 4, 2));
        let a = c.local_attention(&mut g, h, 5, 2, None).unwrap();
        let aug = augment(&mut g, h, Some(&a)).unwrap();
        let t = g.value(aug);
        assert_eq!(t.shape(), &[9, 5]);
        let col: Vec<f64> = (0..9).map(|i| t.get(i, 4)).collect();
        for (i, &v) in col.iter().enumerate() {
            if (3..=7).contains(&i) {
                assert!(v > 0.0);
            } else {
                assert_eq!(v, 0.0);
            }
        }
        assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_window_marks_comparator_only() {
        let st = store(4, false, 3);
        let c = Classifier::resolve(&st).unwrap();
        let mut g = Graph::new(&st);
        let h = g.constant(rand_h(6, 4, 4));
        let a = c.local_attention(&mut g, h, 2, 0, None).unwrap();
        let aug = augment(&mut g, h, Some(&a)).unwrap();
        let col: Vec<f64> = (0..6).map(|i| g.value(aug).get(i, 4)).collect();
        assert_eq!(col, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn whole_sentence_window_has_no_zero_weights() {
        let st = store(4, false, 5);
        let c = Classifier::resolve(&st).unwrap();
        let mut g = Graph::new(&st);
        let h = g.constant(rand_h(7, 4, 6));
        let opts = AttentionOptions {
            mode: AttentionMode::Global,
            soft_window: false,
        };
        let a = c.attend(&mut g, h, 3, opts).unwrap();
        let aug = augment(&mut g, h, Some(&a)).unwrap();
        assert!((0..7).all(|i| g.value(aug).get(i, 4) != 0.0));
    }

    #[test]
    fn zero_weights_give_uniform_emissions() {
        let st = store(4, true, 0);
        let e = Extractor::resolve(&st).unwrap();
        let mut g = Graph::new(&st);
        let h = g.constant(rand_h(5, 4, 7));
        let aug = augment(&mut g, h, None).unwrap();
        let m = e.emissions(&mut g, aug).unwrap();
        assert!(g
            .value(m.probs)
            .data()
            .iter()
            .all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
        let log_ninth = -(9f64).ln();
        assert!(g
            .value(m.scores)
            .data()
            .iter()
            .all(|&v| (v - log_ninth).abs() < 1e-15));
    }

    #[test]
    fn emission_rows_are_distributions() {
        let st = store(4, false, 8);
        let e = Extractor::resolve(&st).unwrap();
        let mut g = Graph::new(&st);
        let h = g.constant(rand_h(11, 4, 9));
        let aug = augment(&mut g, h, None).unwrap();
        let m = e.emissions(&mut g, aug).unwrap();
        let t = g.value(m.probs);
        for i in 0..11 {
            assert!((t.row_slice(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decoded_score_matches_sequence_score_and_tags_are_wellformed() {
        let st = store(4, false, 10);
        let e = Extractor::resolve(&st).unwrap();
        let mut g = Graph::new(&st);
        let h = g.constant(rand_h(8, 4, 11));
        let aug = augment(&mut g, h, None).unwrap();
        let m = e.emissions(&mut g, aug).unwrap();
        let em = g.value(m.scores).clone();
        let d = e.decode(&em, &st, true).unwrap();
        let ids: Vec<usize> = d.tags.iter().map(|l| l.id()).collect();
        let s = crf::sequence_score(&em, st.get(e.transitions), &ids).unwrap();
        assert_eq!(s, d.score);
        assert!(d.log_prob <= 0.0);
        assert!(crate::iobes::validate(&d.tags).is_ok());
    }

    #[test]
    fn nll_is_nonnegative() {
        let st = store(4, false, 12);
        let e = Extractor::resolve(&st).unwrap();
        let mut g = Graph::new(&st);
        let h = g.constant(rand_h(6, 4, 13));
        let aug = augment(&mut g, h, None).unwrap();
        let m = e.emissions(&mut g, aug).unwrap();
        let loss = e.nll(&mut g, &m, &[0, 1, 2, 3, 0, 4]).unwrap();
        assert!(g.scalar(loss) >= 0.0);
        let e = e.with_scores(EmissionScores::Probability);
        let m = e.emissions(&mut g, aug).unwrap();
        assert_eq!(m.probs, m.scores);
        let loss = e.nll(&mut g, &m, &[0, 1, 2, 3, 0, 4]).unwrap();
        assert!(g.scalar(loss) >= 0.0);
    }
}
