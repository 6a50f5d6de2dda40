//! Linear-chain CRF dynamic programs on plain matrices.
//!
//! Emissions are `[N, d]`; the transition table is `[d+2, d+2]` where index
//! `d` is the virtual START state and `d+1` the virtual STOP state. START/STOP
//! never appear in emissions or in label sequences.

#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, Tensor};

/// Index of the virtual START state for `d` real labels.
pub fn start_state(d: usize) -> usize {
    d
}

/// Index of the virtual STOP state for `d` real labels.
pub fn stop_state(d: usize) -> usize {
    d + 1
}

fn check_tables(emissions: &Tensor, transitions: &Tensor) -> Result<(usize, usize)> {
    let (n, d) = emissions.matrix_shape();
    if transitions.rows() != d + 2 || transitions.cols() != d + 2 {
        return Err(Error::Shape {
            op: "crf",
            lhs: emissions.shape().to_vec(),
            rhs: transitions.shape().to_vec(),
        });
    }
    if n == 0 || d == 0 {
        return Err(Error::InvalidInstance(
            "CRF over an empty sequence or label set".into(),
        ));
    }
    Ok((n, d))
}

fn check_labels(labels: &[usize], n: usize, d: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::InvalidInstance(format!(
            "label sequence has length {}, sentence has {n} tokens",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= d) {
        return Err(Error::InvalidLabel(bad));
    }
    Ok(())
}

/// Unnormalized score of one label sequence: transitions from START through
/// every label to STOP plus the emission of each label.
pub fn sequence_score(emissions: &Tensor, transitions: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, d) = check_tables(emissions, transitions)?;
    check_labels(labels, n, d)?;
    let mut prev = start_state(d);
    let mut score = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        score += transitions.get(prev, y) + emissions.get(i, y);
        prev = y;
    }
    Ok(score + transitions.get(prev, stop_state(d)))
}

/// Forward log-messages `alpha[t][y]`.
fn forward_messages(
    emissions: &Tensor,
    transitions: &Tensor,
    n: usize,
    d: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut alpha = vec![vec![0.0; d]; n];
    for y in 0..d {
        alpha[0][y] = transitions.get(start_state(d), y) + emissions.get(0, y);
    }
    let mut scratch = vec![0.0; d];
    for t in 1..n {
        for y in 0..d {
            for (yp, s) in scratch.iter_mut().enumerate() {
                *s = alpha[t - 1][yp] + transitions.get(yp, y);
            }
            alpha[t][y] = log_sum_exp(&scratch) + emissions.get(t, y);
        }
        if alpha[t].iter().all(|v| !v.is_finite()) || alpha[t].iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite(format!("forward message at position {t}")));
        }
    }
    Ok(alpha)
}

/// `log sum_Y exp(score(Y))` by the forward algorithm in log space.
pub fn log_partition(emissions: &Tensor, transitions: &Tensor) -> Result<f64> {
    let (n, d) = check_tables(emissions, transitions)?;
    let alpha = forward_messages(emissions, transitions, n, d)?;
    let last: Vec<f64> = (0..d)
        .map(|y| alpha[n - 1][y] + transitions.get(y, stop_state(d)))
        .collect();
    let z = log_sum_exp(&last);
    if !z.is_finite() {
        return Err(Error::NonFinite(format!(
            "log partition at position {}",
            n - 1
        )));
    }
    Ok(z)
}

/// Negative log-likelihood with its gradients w.r.t. both tables.
pub struct NllGrad {
    pub nll: f64,
    pub d_emissions: Vec<f64>,
    pub d_transitions: Vec<f64>,
}

/// `-score(gold) + log Z` and its exact gradient (expected counts minus gold
/// counts) via forward-backward.
pub fn nll_with_grad(emissions: &Tensor, transitions: &Tensor, gold: &[usize]) -> Result<NllGrad> {
    let (n, d) = check_tables(emissions, transitions)?;
    check_labels(gold, n, d)?;
    let (start, stop) = (start_state(d), stop_state(d));
    let k = d + 2;

    let alpha = forward_messages(emissions, transitions, n, d)?;
    let mut beta = vec![vec![0.0; d]; n];
    for y in 0..d {
        beta[n - 1][y] = transitions.get(y, stop);
    }
    let mut scratch = vec![0.0; d];
    for t in (0..n - 1).rev() {
        for y in 0..d {
            for (yn, s) in scratch.iter_mut().enumerate() {
                *s = transitions.get(y, yn) + emissions.get(t + 1, yn) + beta[t + 1][yn];
            }
            beta[t][y] = log_sum_exp(&scratch);
        }
    }
    let last: Vec<f64> = (0..d).map(|y| alpha[n - 1][y] + beta[n - 1][y]).collect();
    let log_z = log_sum_exp(&last);
    if !log_z.is_finite() {
        return Err(Error::NonFinite(format!(
            "log partition at position {}",
            n - 1
        )));
    }

    let mut d_em = vec![0.0; n * d];
    let mut d_tr = vec![0.0; k * k];
    for t in 0..n {
        for y in 0..d {
            let marginal = (alpha[t][y] + beta[t][y] - log_z).exp();
            d_em[t * d + y] += marginal;
            if t == 0 {
                d_tr[start * k + y] += marginal;
            }
            if t == n - 1 {
                d_tr[y * k + stop] += marginal;
            }
        }
    }
    for t in 0..n - 1 {
        for y in 0..d {
            for yn in 0..d {
                let pair = (alpha[t][y]
                    + transitions.get(y, yn)
                    + emissions.get(t + 1, yn)
                    + beta[t + 1][yn]
                    - log_z)
                    .exp();
                d_tr[y * k + yn] += pair;
            }
        }
    }

    let mut prev = start;
    for (t, &y) in gold.iter().enumerate() {
        d_em[t * d + y] -= 1.0;
        d_tr[prev * k + y] -= 1.0;
        prev = y;
    }
    d_tr[prev * k + stop] -= 1.0;

    let gold_score = sequence_score(emissions, transitions, gold)?;
    Ok(NllGrad {
        nll: log_z - gold_score,
        d_emissions: d_em,
        d_transitions: d_tr,
    })
}

/// Highest-scoring label sequence.
///
/// `allowed`, when given, is a row-major `(d+2) x (d+2)` table of permitted
/// transitions; forbidden transitions score `-inf`. Among equally scoring
/// sequences the lexicographically smallest label-id sequence is returned.
/// The reported score is [`sequence_score`] of the returned sequence.
pub fn viterbi(
    emissions: &Tensor,
    transitions: &Tensor,
    allowed: Option<&[bool]>,
) -> Result<(Vec<usize>, f64)> {
    let (n, d) = check_tables(emissions, transitions)?;
    let k = d + 2;
    let (start, stop) = (start_state(d), stop_state(d));
    let trans = |a: usize, b: usize| -> f64 {
        match allowed {
            Some(mask) if !mask[a * k + b] => f64::NEG_INFINITY,
            _ => transitions.get(a, b),
        }
    };

    // Best completion score from position t in state y, scanning right to left,
    // so that a left-to-right greedy walk can pick the smallest optimal label.
    let mut suffix = vec![vec![0.0; d]; n];
    let mut next = vec![vec![0usize; d]; n];
    for y in 0..d {
        suffix[n - 1][y] = emissions.get(n - 1, y) + trans(y, stop);
    }
    for t in (0..n - 1).rev() {
        for y in 0..d {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for yn in 0..d {
                let s = trans(y, yn) + suffix[t + 1][yn];
                if s > best {
                    best = s;
                    arg = yn;
                }
            }
            suffix[t][y] = emissions.get(t, y) + best;
            next[t][y] = arg;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut first = 0;
    for y in 0..d {
        let s = trans(start, y) + suffix[0][y];
        if s > best {
            best = s;
            first = y;
        }
    }
    if best == f64::NEG_INFINITY || best.is_nan() {
        return Err(Error::NonFinite("no admissible label sequence".into()));
    }
    let mut path = Vec::with_capacity(n);
    path.push(first);
    for t in 0..n - 1 {
        let y = path[t];
        path.push(next[t][y]);
    }
    let score = sequence_score(emissions, transitions, &path)?;
    Ok((path, score))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_zero_transitions() {
        let em = Tensor::row(vec![0.2, 0.7, 0.1]);
        let tr = Tensor::zeros(5, 5);
        assert!((sequence_score(&em, &tr, &[1]).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_two_by_two() {
        // d = 2, START = 2, STOP = 3
        let em = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]]).unwrap();
        let mut tr = Tensor::zeros(4, 4);
        tr.set(2, 0, 0.1);
        tr.set(2, 1, 0.2);
        tr.set(0, 0, 0.3);
        tr.set(0, 1, 0.4);
        tr.set(1, 0, 0.5);
        tr.set(1, 1, 0.6);
        tr.set(0, 3, 0.7);
        tr.set(1, 3, 0.8);
        let cases = [
            ([0, 0], 0.1 + 1.0 + 0.3 + 0.5 + 0.7),
            ([0, 1], 0.1 + 1.0 + 0.4 - 1.0 + 0.8),
            ([1, 0], 0.2 + 2.0 + 0.5 + 0.5 + 0.7),
            ([1, 1], 0.2 + 2.0 + 0.6 - 1.0 + 0.8),
        ];
        for (labels, expected) in cases {
            let s = sequence_score(&em, &tr, &labels).unwrap();
            assert!(
                (s - expected).abs() < 1e-12,
                "{labels:?}: {s} vs {expected}"
            );
        }
    }

    #[test]
    fn zero_tables_partition_is_n_ln_d() {
        let em = Tensor::zeros(4, 9);
        let tr = Tensor::zeros(11, 11);
        let z = log_partition(&em, &tr).unwrap();
        assert!((z - 4.0 * 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn invalid_label_rejected() {
        let em = Tensor::zeros(2, 3);
        let tr = Tensor::zeros(5, 5);
        assert!(matches!(
            sequence_score(&em, &tr, &[0, 3]),
            Err(Error::InvalidLabel(3))
        ));
    }

    #[test]
    fn single_label_set_has_zero_nll() {
        let em = Tensor::column(vec![0.3, -0.1, 2.0]);
        let tr =
            Tensor::from_rows(&[vec![0.2, 0.0, 0.1], vec![0.4, 0.0, 0.0], vec![0.0; 3]]).unwrap();
        let g = nll_with_grad(&em, &tr, &[0, 0, 0]).unwrap();
        assert!(g.nll.abs() < 1e-12);
    }

    #[test]
    fn all_ties_decode_to_smallest_sequence() {
        let em = Tensor::zeros(4, 3);
        let tr = Tensor::zeros(5, 5);
        let (path, score) = viterbi(&em, &tr, None).unwrap();
        assert_eq!(path, vec![0, 0, 0, 0]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn non_finite_partition_reports_position() {
        let em = Tensor::zeros(3, 2);
        let tr = Tensor::filled(4, 4, f64::NEG_INFINITY);
        assert!(matches!(log_partition(&em, &tr), Err(Error::NonFinite(_))));
    }
}
