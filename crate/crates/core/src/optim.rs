//! Adadelta.

use crate::params::{Grads, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self {
            rho: 0.95,
            epsilon: 1e-6,
            learning_rate: 1.0,
        }
    }
}

/// Running averages of squared gradients and squared updates, one buffer per
/// parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adadelta {
    pub config: AdadeltaConfig,
    sq_grad: Vec<Vec<f64>>,
    sq_delta: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient entry was NaN or infinite; nothing was changed.
    SkippedNonFinite,
}

impl Adadelta {
    pub fn new(store: &ParamStore, config: AdadeltaConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            sq_grad: zeros.clone(),
            sq_delta: zeros,
        }
    }

    pub fn sq_grad(&self, index: usize) -> &[f64] {
        &self.sq_grad[index]
    }

    pub fn sq_delta(&self, index: usize) -> &[f64] {
        &self.sq_delta[index]
    }

    /// One update. Parameters with no gradient are treated as having a zero
    /// gradient, so their accumulators still decay.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> StepOutcome {
        if !grads.all_finite() {
            return StepOutcome::SkippedNonFinite;
        }
        let AdadeltaConfig {
            rho,
            epsilon,
            learning_rate,
        } = self.config;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads.get(id);
            let eg = &mut self.sq_grad[i];
            let ed = &mut self.sq_delta[i];
            let x = store.get_mut(id).data_mut();
            for j in 0..x.len() {
                let gj = g.map_or(0.0, |g| g[j]);
                eg[j] = rho * eg[j] + (1.0 - rho) * gj * gj;
                let delta = -((ed[j] + epsilon).sqrt() / (eg[j] + epsilon).sqrt()) * gj;
                ed[j] = rho * ed[j] + (1.0 - rho) * delta * delta;
                x[j] += learning_rate * delta;
            }
        }
        StepOutcome::Applied
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;
    use std::collections::BTreeMap;

    fn one_param(v: f64) -> ParamStore {
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), Tensor::scalar(v));
        ParamStore::from_map(m, 0)
    }

    fn grad_of_sum(store: &ParamStore, scale: f64) -> Grads {
        let mut g = Graph::new(store);
        let x = g.param(store.id("x").unwrap());
        let y = g.scale(x, scale);
        g.backward(y).unwrap()
    }

    #[test]
    fn first_step_by_hand() {
        let mut st = one_param(0.0);
        let grads = grad_of_sum(&st, 1.0);
        let mut opt = Adadelta::new(&st, AdadeltaConfig::default());
        assert_eq!(opt.step(&mut st, &grads), StepOutcome::Applied);
        // -sqrt(eps) / sqrt((1 - rho) g^2 + eps) * g with g = 1
        let expect = -(1e-6f64).sqrt() / (0.05f64 + 1e-6).sqrt();
        assert!((st.get(st.id("x").unwrap()).item() - expect).abs() < 1e-15);
        assert!((expect + 0.004472091).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_state() {
        let mut st = one_param(0.3);
        let mut opt = Adadelta::new(&st, AdadeltaConfig::default());
        let g = grad_of_sum(&st, 2.0);
        opt.step(&mut st, &g);
        let before = st.clone();
        let (eg, ed) = (opt.sq_grad(0)[0], opt.sq_delta(0)[0]);
        let zero = Grads::new(&st);
        opt.step(&mut st, &zero);
        assert_eq!(st, before);
        assert_eq!(opt.sq_grad(0)[0], 0.95 * eg);
        assert_eq!(opt.sq_delta(0)[0], 0.95 * ed);
    }

    #[test]
    fn non_finite_gradient_skips_the_step() {
        let mut st = one_param(1.0);
        let grads = grad_of_sum(&st, f64::NAN);
        let mut opt = Adadelta::new(&st, AdadeltaConfig::default());
        let before = (st.clone(), opt.clone());
        assert_eq!(opt.step(&mut st, &grads), StepOutcome::SkippedNonFinite);
        assert_eq!((st, opt), before);
    }

    #[test]
    fn identical_inputs_update_identically() {
        let mut a = one_param(0.7);
        let mut b = one_param(0.7);
        let mut oa = Adadelta::new(&a, AdadeltaConfig::default());
        let mut ob = Adadelta::new(&b, AdadeltaConfig::default());
        for s in [1.0, -0.5, 3.0] {
            let (ga, gb) = (grad_of_sum(&a, s), grad_of_sum(&b, s));
            oa.step(&mut a, &ga);
            ob.step(&mut b, &gb);
        }
        assert_eq!(a, b);
        assert_eq!(oa, ob);
    }
}
