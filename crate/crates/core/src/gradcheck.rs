//! Central finite-difference checks of analytic gradients.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries_checked: usize,
    /// Entries where a step of up to twice `step` changed a discrete choice,
    /// so the loss is not differentiable across the stencil.
    pub entries_skipped: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn entries_checked(&self) -> usize {
        self.params.iter().map(|p| p.entries_checked).sum()
    }

    pub fn entries_skipped(&self) -> usize {
        self.params.iter().map(|p| p.entries_skipped).sum()
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor of the relative error, for entries whose gradient is
    /// essentially zero.
    pub floor: f64,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            floor: 1e-6,
            max_entries: None,
        }
    }
}

/// Compares the gradient of the scalar built by `loss` with central
/// differences at `step` and `2 * step`, combined by Richardson extrapolation,
/// for every parameter in `store` whose name passes `filter`.
pub fn grad_check<F>(
    store: &ParamStore,
    opts: GradCheckOptions,
    filter: &dyn Fn(&str) -> bool,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<'_>) -> Result<Var>,
{
    let (grads, base_branches) = {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        if !g.scalar(l).is_finite() {
            return Err(Error::NonFinite("loss at the base point".into()));
        }
        let branches = g.branches().to_vec();
        (g.backward(l)?, branches)
    };
    // loss value, and whether every discrete choice matched the base point
    let mut eval = |s: &ParamStore| -> Result<(f64, bool)> {
        let mut g = Graph::new(s);
        let l = loss(&mut g)?;
        let v = g.scalar(l);
        if v.is_finite() {
            Ok((v, g.branches() == base_branches.as_slice()))
        } else {
            Err(Error::NonFinite("loss at a perturbed point".into()))
        }
    };

    let mut work = store.clone();
    let mut params = Vec::new();
    for id in store.ids() {
        let name = store.name(id).to_string();
        if !filter(&name) {
            continue;
        }
        let len = store.get(id).len();
        let stride = match opts.max_entries {
            Some(m) if m > 0 && len > m => len.div_ceil(m),
            _ => 1,
        };
        let mut check = ParamCheck {
            name,
            entries_checked: 0,
            entries_skipped: 0,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for j in (0..len).step_by(stride) {
            let x = store.get(id).data()[j];
            let mut at = |delta: f64| -> Result<(f64, bool)> {
                work.get_mut(id).data_mut()[j] = x + delta;
                let r = eval(&work);
                work.get_mut(id).data_mut()[j] = x;
                r
            };
            let h = opts.step;
            let (up, s1) = at(h)?;
            let (down, s2) = at(-h)?;
            let (up2, s3) = at(2.0 * h)?;
            let (down2, s4) = at(-2.0 * h)?;
            if !(s1 && s2 && s3 && s4) {
                check.entries_skipped += 1;
                continue;
            }
            let d1 = (up - down) / (2.0 * h);
            let d2 = (up2 - down2) / (4.0 * h);
            let numeric = (4.0 * d1 - d2) / 3.0;
            let analytic = grads.get(id).map_or(0.0, |g| g[j]);
            let err = relative_error(analytic, numeric, opts.floor);
            check.entries_checked += 1;
            if err > check.max_rel_err || check.entries_checked == 1 {
                check.max_rel_err = err;
                check.worst_index = j;
                check.analytic = analytic;
                check.numeric = numeric;
            }
        }
        params.push(check);
    }
    let max_rel_err = params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        step: opts.step,
        params,
        max_rel_err,
    })
}

/// Finite-difference suites over one part of the model at a time, on small
/// random parameters and a fixed 6-token simile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Encoder,
    Classifier,
    Extractor,
    Decoder,
    /// The joint loss of one cycle with every head active.
    Model,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Encoder,
        Suite::Classifier,
        Suite::Extractor,
        Suite::Decoder,
        Suite::Model,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Encoder => "encoder",
            Suite::Classifier => "classifier",
            Suite::Extractor => "extractor",
            Suite::Decoder => "decoder",
            Suite::Model => "model",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown gradcheck suite `{s}`")))
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<GradCheckReport> {
    run_suite_with(suite, seed, GradCheckOptions::default())
}

/// [`run_suite`] with explicit step and floor.
pub fn run_suite_with(suite: Suite, seed: u64, opts: GradCheckOptions) -> Result<GradCheckReport> {
    use crate::classifier::AttentionOptions;
    use crate::config::{LossWeights, WiringConfig};
    use crate::corpus::SentenceInstance;
    use crate::encoder::Dropout;
    use crate::extractor::augment;
    use crate::iobes::NUM_LABELS;
    use crate::model::{CyclicModel, ForwardContext, ModelDims};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let dims = ModelDims {
        vocab: 12,
        embed: 4,
        hidden: 3,
        ffn: 4,
    };
    let (model, mut store) = CyclicModel::init(dims, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let t = store.get(id);
        *store.get_mut(id) = Tensor::uniform(t.rows(), t.cols(), -0.5, 0.5, &mut rng);
    }
    let tokens: Vec<usize> = (0..6).map(|_| rng.gen_range(4..dims.vocab)).collect();
    let tags = ["O", "B-T", "E-T", "O", "S-V", "O"]
        .iter()
        .map(|t| t.parse())
        .collect::<Result<Vec<_>>>()?;
    let inst = SentenceInstance::new(tokens, 3, true, tags)?;
    let n = inst.len();
    let two_h = 2 * dims.hidden;
    let h_const = Tensor::uniform(n, two_h, -1.0, 1.0, &mut rng);
    let s_const = Tensor::uniform(n, two_h, -1.0, 1.0, &mut rng);
    let probe = Tensor::uniform(n, two_h, -1.0, 1.0, &mut rng);
    let mut m_const = Tensor::uniform(n, NUM_LABELS, 0.0, 1.0, &mut rng);
    for i in 0..n {
        let total: f64 = m_const.row_slice(i).iter().sum();
        for j in 0..NUM_LABELS {
            m_const.set(i, j, m_const.get(i, j) / total);
        }
    }

    let attention = AttentionOptions::default();
    let prefix =
        |p: &'static [&'static str]| move |name: &str| p.iter().any(|q| name.starts_with(q));
    match suite {
        Suite::Encoder => grad_check(&store, opts, &prefix(&["encoder.", "embedding"]), |g| {
            let enc = model
                .encoder
                .encode(g, &inst.tokens, &mut Dropout::disabled())?;
            let w = g.constant(probe.clone());
            let t = g.tanh(enc.h);
            let p = g.mul(t, w)?;
            Ok(g.sum_all(p))
        }),
        Suite::Classifier => grad_check(&store, opts, &prefix(&["classifier."]), |g| {
            let h = g.constant(h_const.clone());
            let s = g.constant(s_const.clone());
            let (loss, _) =
                model
                    .classifier
                    .classification_loss(g, true, h, Some(s), 3, attention)?;
            Ok(loss)
        }),
        Suite::Extractor => grad_check(&store, opts, &prefix(&["extractor."]), |g| {
            let h = g.constant(h_const.clone());
            let att = model.classifier.attend(g, h, 3, attention)?;
            let aug = augment(g, h, Some(&att))?;
            let em = model.extractor.emissions(g, aug)?;
            model.extractor.nll(g, &em, &inst.tag_ids())
        }),
        Suite::Decoder => grad_check(
            &store,
            opts,
            &prefix(&["decoder.", "encoder.", "embedding"]),
            |g| {
                let h = g.constant(h_const.clone());
                let m = g.constant(m_const.clone());
                Ok(model.decoder.run(g, &inst.tokens, h, m)?.loss)
            },
        ),
        Suite::Model => grad_check(&store, opts, &|_| true, |g| {
            let mut ctx = ForwardContext::training(Dropout::disabled());
            let out = model.forward(
                g,
                &inst,
                &WiringConfig::cyclic(1),
                LossWeights::default(),
                &mut ctx,
            )?;
            Ok(out.loss)
        }),
    }
}
