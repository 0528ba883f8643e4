//! Layer helpers shared by the models: parameter registration with
//! fan-in scaled initialization and the matching forward calls.

use rand::Rng;

use crate::domain::{Micrograph, IMAGE_SIDE};
use crate::error::Result;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Registers `{name}.w` `[inp, out]` and `{name}.b` `[out]`.
pub fn add_dense(
    store: &mut ParamStore,
    name: &str,
    inp: usize,
    out: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    store.add_normal(
        format!("{name}.w"),
        &[inp, out],
        (2.0 / inp as f64).sqrt(),
        rng,
    )?;
    store.add_zeros(format!("{name}.b"), &[out])?;
    Ok(())
}

/// Registers a bias-free projection `{name}.w` `[inp, out]`.
pub fn add_linear(
    store: &mut ParamStore,
    name: &str,
    inp: usize,
    out: usize,
    std: f64,
    rng: &mut impl Rng,
) -> Result<()> {
    store.add_normal(format!("{name}.w"), &[inp, out], std, rng)?;
    Ok(())
}

/// `x [B, inp] -> x W + b`.
pub fn dense(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param_named(store, &format!("{name}.w"));
    let b = g.param_named(store, &format!("{name}.b"));
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

pub fn linear(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param_named(store, &format!("{name}.w"));
    g.matmul(x, w)
}

/// Registers conv weight `[cout, cin, k, k]` and bias `[cout]`.
pub fn add_conv(
    store: &mut ParamStore,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let std = (2.0 / (cin * k * k) as f64).sqrt();
    store.add_normal(format!("{name}.w"), &[cout, cin, k, k], std, rng)?;
    store.add_zeros(format!("{name}.b"), &[cout])?;
    Ok(())
}

pub fn conv(
    g: &mut Graph,
    store: &ParamStore,
    name: &str,
    x: Var,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let w = g.param_named(store, &format!("{name}.w"));
    let b = g.param_named(store, &format!("{name}.b"));
    g.conv2d(x, w, b, stride, pad)
}

/// Registers transposed-conv weight `[cin, cout, k, k]` and bias `[cout]`.
pub fn add_conv_t(
    store: &mut ParamStore,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    // each output pixel of a stride-2 k4 transposed conv sees cin * 4 taps
    let std = (2.0 / (cin * 4) as f64).sqrt();
    store.add_normal(format!("{name}.w"), &[cin, cout, k, k], std, rng)?;
    store.add_zeros(format!("{name}.b"), &[cout])?;
    Ok(())
}

pub fn conv_t(
    g: &mut Graph,
    store: &ParamStore,
    name: &str,
    x: Var,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let w = g.param_named(store, &format!("{name}.w"));
    let b = g.param_named(store, &format!("{name}.b"));
    g.conv_transpose2d(x, w, b, stride, pad)
}

/// Stacks micrographs into a `[N, 1, 32, 32]` tensor.
pub fn image_batch<'a>(images: impl IntoIterator<Item = &'a Micrograph>) -> Tensor {
    let mut data = Vec::new();
    let mut n = 0;
    for m in images {
        data.extend_from_slice(m.pixels());
        n += 1;
    }
    Tensor::new([n, 1, IMAGE_SIDE, IMAGE_SIDE], data).expect("non-empty image batch")
}

/// Stacks equal-length rows into a `[N, width]` tensor.
pub fn row_batch<R: AsRef<[f64]>>(rows: impl IntoIterator<Item = R>) -> Tensor {
    let mut data = Vec::new();
    let mut n = 0;
    let mut width = 0;
    for r in rows {
        let r = r.as_ref();
        width = r.len();
        data.extend_from_slice(r);
        n += 1;
    }
    Tensor::new([n, width], data).expect("non-empty, rectangular row batch")
}

/// Splits a `[N, ...]` tensor of images back into micrographs.
pub fn to_micrographs(t: &Tensor) -> Vec<Micrograph> {
    t.data()
        .chunks(IMAGE_SIDE * IMAGE_SIDE)
        .map(|c| Micrograph::new(c.to_vec()).expect("32x32 chunk"))
        .collect()
}

/// Deterministic shuffled index order.
pub fn shuffled(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
