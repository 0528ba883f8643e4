use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;

/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn max_propagating_nan(errors: impl Iterator<Item = f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for e in errors {
        if e.is_nan() {
            return f64::NAN;
        }
        worst = worst.max(e);
    }
    worst
}

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = f(&mut g, v)?;
    Ok(g.value(y).item())
}

/// Compares the reverse-mode gradient of the scalar function `f` at `x`
/// with central differences of step `eps`, returning the largest
/// per-component relative error.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let y = f(&mut g, v)?;
    g.backward(y, &mut [])?;
    let analytic = g
        .grad(v)
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    let mut errors = Vec::with_capacity(x.numel());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        errors.push(relative_error(
            analytic.data()[i],
            (up - down) / (2.0 * eps),
        ));
    }
    Ok(max_propagating_nan(errors.into_iter()))
}

/// Gradient check against model parameters: `f` builds a scalar loss from
/// the store. At most `probes` parameter elements, chosen uniformly with
/// `seed`, are compared against central differences.
pub fn grad_check_params<F>(
    f: F,
    store: &mut ParamStore,
    eps: f64,
    probes: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    grad_check_model(store, |s| s, f, eps, probes, seed)
}

/// Like [`grad_check_params`] for a model that owns one or more stores:
/// `select` picks the store whose parameters are probed and `f` builds the
/// loss from the whole model.
pub fn grad_check_model<M, S, F>(
    model: &mut M,
    select: S,
    f: F,
    eps: f64,
    probes: usize,
    seed: u64,
) -> Result<f64>
where
    S: Fn(&mut M) -> &mut ParamStore,
    F: Fn(&mut Graph, &M) -> Result<Var>,
{
    select(model).zero_grad();
    let mut g = Graph::new();
    let y = f(&mut g, model)?;
    g.backward(y, &mut [select(model)])?;
    let mut flat = Vec::new();
    for (pi, p) in select(model).iter().enumerate() {
        for j in 0..p.value.numel() {
            flat.push((pi, j));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample(&mut rng, flat.len(), probes.min(flat.len()));
    let mut errors = Vec::new();
    for k in chosen.iter() {
        let (pi, j) = flat[k];
        let id = super::ParamId(pi);
        let analytic = select(model).grad(id)[j];
        let orig = select(model).value(id).data()[j];
        let mut at = |delta: f64| -> Result<f64> {
            select(model).value_mut(id).data_mut()[j] = orig + delta;
            let mut g = Graph::new();
            let y = f(&mut g, model)?;
            Ok(g.value(y).item())
        };
        let up = at(eps)?;
        let down = at(-eps)?;
        select(model).value_mut(id).data_mut()[j] = orig;
        errors.push(relative_error(analytic, (up - down) / (2.0 * eps)));
    }
    select(model).zero_grad();
    Ok(max_propagating_nan(errors.into_iter()))
}
