//! Central-difference verification of reverse-mode gradients.

use crate::autograd::{Graph, Var};
use crate::data::{cut_positive, gen_stream, make_negative, SyntheticConfig};
use crate::error::{Error, Result};
use crate::model::{FusionConfig, Mode, SyncModel, Variant};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which parameter coordinates to perturb.
#[derive(Debug, Clone, Copy)]
pub enum Coordinates {
    All,
    /// Up to `per_param` coordinates drawn without replacement from each parameter.
    Sampled { per_param: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// How finite differences treat relu kinks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kinks {
    /// Replay the base point's relu active sets in every perturbed
    /// evaluation: the difference quotient then measures the derivative of
    /// the linear piece the analytic gradient is defined on.
    Pinned,
    /// Plain central differences; a perturbation that moves a pre-activation
    /// across zero corrupts the estimate.
    Free,
}

/// Reverse-mode gradients and relu active sets at the base point.
#[derive(Debug, Clone)]
pub struct Analytic {
    pub gradients: Vec<Tensor>,
    pub relu_patterns: Vec<Vec<bool>>,
}

/// `|a - b| / max(1e-8, |a| + |b|)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

fn eval_loss<F>(store: &ParamStore, loss_fn: &mut F, pins: Option<&[Vec<bool>]>) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = match pins {
        Some(p) => Graph::with_relu_patterns(p.to_vec()),
        None => Graph::new(),
    };
    let loss = loss_fn(&mut g, store)?;
    let v = g.value(loss).item()?;
    if !v.is_finite() {
        return Err(Error::Numeric(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

/// Runs one forward/backward pass and returns the gradient of every
/// parameter. The store's gradient buffers are cleared before and after.
pub fn analytic_gradients<F>(store: &mut ParamStore, loss_fn: &mut F) -> Result<Analytic>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    let v = g.value(loss).item()?;
    if !v.is_finite() {
        return Err(Error::Numeric(format!("loss evaluated to {v}")));
    }
    g.backward(loss, store)?;
    let gradients = store.ids().map(|id| store.grad(id).clone()).collect();
    store.zero_grads();
    Ok(Analytic {
        gradients,
        relu_patterns: g.relu_patterns(),
    })
}

/// Compares supplied gradients against central differences
/// `(L(θ+h) - L(θ-h)) / 2h`.
pub fn compare_gradients<F>(
    store: &mut ParamStore,
    loss_fn: &mut F,
    analytic: &Analytic,
    h: f64,
    coords: Coordinates,
    kinks: Kinks,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let pins = (kinks == Kinks::Pinned).then_some(analytic.relu_patterns.as_slice());
    let analytic = &analytic.gradients;
    if analytic.len() != store.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} parameters",
            analytic.len(),
            store.len()
        )));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let mut rng = match coords {
        Coordinates::Sampled { seed, .. } => Some(Rng::new(seed)),
        Coordinates::All => None,
    };
    for id in ids {
        let n = store.value(id).len();
        let picks: Vec<usize> = match (&mut rng, coords) {
            (Some(rng), Coordinates::Sampled { per_param, .. }) if per_param < n => {
                let mut all: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut all);
                all.truncate(per_param);
                all.sort_unstable();
                all
            }
            _ => (0..n).collect(),
        };
        for i in picks {
            let original = store.value(id).data()[i];
            store.value_data_mut(id)[i] = original + h;
            let plus = eval_loss(store, loss_fn, pins);
            store.value_data_mut(id)[i] = original - h;
            let minus = eval_loss(store, loss_fn, pins);
            store.value_data_mut(id)[i] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            let err = relative_error(analytic[id.0].data()[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((store.param(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}

/// Reverse-mode gradients checked against central differences with relu
/// kinks pinned (see [`Kinks::Pinned`]).
pub fn grad_check<F>(
    store: &mut ParamStore,
    loss_fn: F,
    h: f64,
    coords: Coordinates,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    grad_check_with(store, loss_fn, h, coords, Kinks::Pinned)
}

pub fn grad_check_with<F>(
    store: &mut ParamStore,
    mut loss_fn: F,
    h: f64,
    coords: Coordinates,
    kinks: Kinks,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let analytic = analytic_gradients(store, &mut loss_fn)?;
    compare_gradients(store, &mut loss_fn, &analytic, h, coords, kinks)
}

/// Checks a freshly initialized model end to end on one synthetic clip.
///
/// The clip (sync for even seeds, shifted for odd ones) and the dropout
/// masks are fixed by `seed`; every loss evaluation replays the same masks,
/// so the loss is a deterministic function of the parameters.
pub fn check_model(
    variant: Variant,
    config: &FusionConfig,
    seed: u64,
    coords: Coordinates,
    kinks: Kinks,
) -> Result<GradCheckReport> {
    let model = SyncModel::new(variant, config.clone(), seed)?;
    let synthetic = SyntheticConfig::default();
    synthetic.validate(config)?;
    let stream = gen_stream(&synthetic, config, seed)?;
    let clip = if seed % 2 == 0 {
        cut_positive(&stream, 0, config.n_blocks)?
    } else {
        make_negative(&stream, 0, config.n_blocks, &mut Rng::new(seed))?
    };
    let mask_seed = seed ^ 0x6772_6164_6368_6b21;
    let loss = |g: &mut Graph, store: &ParamStore| -> Result<Var> {
        let mut rng = Rng::new(mask_seed);
        let (l, _) = model.clip_loss_with(g, store, &clip, &mut Mode::Train(&mut rng))?;
        Ok(l)
    };
    let mut store = model.store().clone();
    grad_check_with(&mut store, loss, 1e-3, coords, kinks)
}
