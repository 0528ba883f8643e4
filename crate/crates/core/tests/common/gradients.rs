//! Finite-difference checks for every graph operator and each full model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swellgan::domain::{fit_stats, HIST_BINS};
use swellgan::embedding::{ElementEmbeddings, D_C};
use swellgan::encoder::Encoder;
use swellgan::gan::{standard_normal, Discriminator, Generator, COND_WIDTH, LATENT};
use swellgan::metrics::MetricClassifier;
use swellgan::nn;
use swellgan::oracle::generate_dataset;
use swellgan::predictor::Predictor;
use swellgan::tensor::{grad_check, grad_check_model, Graph, Tensor, Var};
use swellgan::training::Vae;
use swellgan::Result;

pub const EPS: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
pub const PROBES: usize = 64;

/// Uniform in ±scale, nudged away from zero so kinks are not straddled.
pub fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            scale
                * if v.abs() < 0.05 {
                    v.signum() * 0.05 + v
                } else {
                    v
                }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Weighted sum with fixed random weights, so no output component's
/// gradient cancels by symmetry.
fn reduce(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = g.constant(random(g.shape(y), seed ^ 0xabcd, 1.0));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type Case = (&'static str, Box<dyn Fn() -> Result<f64>>);

/// Checks `f(x, other)` with respect to `x`, then `f(other, x)` with
/// respect to the second operand.
fn binary(
    name: &'static str,
    a: Tensor,
    b: Tensor,
    f: fn(&mut Graph, Var, Var) -> Result<Var>,
) -> Vec<Case> {
    let (a1, b1) = (a.clone(), b.clone());
    let first: Box<dyn Fn() -> Result<f64>> = Box::new(move || {
        grad_check(
            |g, x| {
                let o = g.constant(b1.clone());
                let y = f(g, x, o)?;
                reduce(g, y, 1)
            },
            &a1,
            EPS,
        )
    });
    let second: Box<dyn Fn() -> Result<f64>> = Box::new(move || {
        grad_check(
            |g, x| {
                let o = g.constant(a.clone());
                let y = f(g, o, x)?;
                reduce(g, y, 1)
            },
            &b,
            EPS,
        )
    });
    vec![(name, first), (name, second)]
}

fn unary(name: &'static str, x: Tensor, f: fn(&mut Graph, Var) -> Result<Var>) -> Case {
    (
        name,
        Box::new(move || {
            grad_check(
                |g, v| {
                    let y = f(g, v)?;
                    reduce(g, y, 2)
                },
                &x,
                EPS,
            )
        }),
    )
}

/// One `(operator, max relative error)` entry per operand checked.
pub fn operator_suite() -> Vec<(&'static str, f64)> {
    let m = |s: u64| random(&[3, 4], s, 1.0);
    let mut cases: Vec<Case> = Vec::new();
    cases.extend(binary(
        "matmul",
        random(&[3, 4], 1, 1.0),
        random(&[4, 5], 2, 1.0),
        |g, a, b| g.matmul(a, b),
    ));
    cases.extend(binary("add", m(3), m(4), |g, a, b| g.add(a, b)));
    cases.extend(binary("sub", m(5), m(6), |g, a, b| g.sub(a, b)));
    cases.extend(binary("mul", m(7), m(8), |g, a, b| g.mul(a, b)));
    cases.extend(binary(
        "add_row",
        m(9),
        random(&[1, 4], 10, 1.0),
        |g, a, r| g.add_row(a, r),
    ));
    cases.extend(binary(
        "concat_cols",
        m(11),
        random(&[3, 2], 12, 1.0),
        |g, a, b| g.concat_cols(&[a, b]),
    ));
    cases.extend(binary(
        "concat0",
        m(13),
        random(&[2, 4], 14, 1.0),
        |g, a, b| g.concat0(&[a, b]),
    ));
    cases.push(unary("scale", m(15), |g, a| Ok(g.scale(a, -2.5))));
    cases.push(unary("add_scalar", m(16), |g, a| Ok(g.add_scalar(a, 0.7))));
    cases.push(unary("relu", m(17), |g, a| Ok(g.relu(a))));
    cases.push(unary("leaky_relu", m(18), |g, a| Ok(g.leaky_relu(a, 0.2))));
    cases.push(unary("tanh", m(19), |g, a| Ok(g.tanh(a))));
    cases.push(unary("sigmoid", m(20), |g, a| Ok(g.sigmoid(a))));
    cases.push(unary("exp", m(21), |g, a| Ok(g.exp(a))));
    cases.push(unary("softmax", m(22), |g, a| Ok(g.softmax(a))));
    cases.push(unary("slice_cols", m(23), |g, a| g.slice_cols(a, 1, 3)));
    cases.push(unary("slice0", m(24), |g, a| g.slice0(a, 1, 3)));
    cases.push(unary("select_row", m(25), |g, a| g.select_row(a, 2)));
    cases.push(unary("reshape", m(26), |g, a| g.reshape(a, &[2, 6])));
    cases.push(unary("sum", m(27), |g, a| Ok(g.sum(a))));
    cases.push(unary("mean", m(28), |g, a| Ok(g.mean(a))));
    cases.push(unary("sum_sq", m(29), |g, a| Ok(g.sum_sq(a))));
    cases.push(unary(
        "bce_with_logits",
        random(&[4, 1], 30, 2.0),
        |g, a| g.bce_with_logits(a, &[1.0, 0.0, 1.0, 0.0]),
    ));
    cases.push(unary("softmax_cross_entropy", m(31), |g, a| {
        g.softmax_cross_entropy(a, &[0, 3, 1])
    }));
    for (name, stride, pad) in [("conv2d", 1, 1), ("conv2d/stride2", 2, 1)] {
        let x = random(&[2, 2, 4, 4], 32, 1.0);
        let w = random(&[3, 2, 3, 3], 33, 0.5);
        let b = random(&[3], 34, 0.5);
        let (x1, w1, b1) = (x.clone(), w.clone(), b.clone());
        cases.push((
            name,
            Box::new(move || {
                grad_check(
                    |g, v| {
                        let (wv, bv) = (g.constant(w1.clone()), g.constant(b1.clone()));
                        let y = g.conv2d(v, wv, bv, stride, pad)?;
                        reduce(g, y, 3)
                    },
                    &x1,
                    EPS,
                )
            }),
        ));
        let (x2, w2, b2) = (x.clone(), w.clone(), b.clone());
        cases.push((
            name,
            Box::new(move || {
                grad_check(
                    |g, v| {
                        let (xv, bv) = (g.constant(x2.clone()), g.constant(b2.clone()));
                        let y = g.conv2d(xv, v, bv, stride, pad)?;
                        reduce(g, y, 3)
                    },
                    &w2,
                    EPS,
                )
            }),
        ));
        cases.push((
            name,
            Box::new(move || {
                grad_check(
                    |g, v| {
                        let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
                        let y = g.conv2d(xv, wv, v, stride, pad)?;
                        reduce(g, y, 3)
                    },
                    &b,
                    EPS,
                )
            }),
        ));
    }
    {
        let x = random(&[2, 3, 3, 3], 35, 1.0);
        let w = random(&[3, 2, 4, 4], 36, 0.5);
        let b = random(&[2], 37, 0.5);
        let (x1, w1, b1) = (x.clone(), w.clone(), b.clone());
        cases.push((
            "conv_transpose2d",
            Box::new(move || {
                grad_check(
                    |g, v| {
                        let (wv, bv) = (g.constant(w1.clone()), g.constant(b1.clone()));
                        let y = g.conv_transpose2d(v, wv, bv, 2, 1)?;
                        reduce(g, y, 4)
                    },
                    &x1,
                    EPS,
                )
            }),
        ));
        let (x2, w2, b2) = (x.clone(), w.clone(), b.clone());
        cases.push((
            "conv_transpose2d",
            Box::new(move || {
                grad_check(
                    |g, v| {
                        let (xv, bv) = (g.constant(x2.clone()), g.constant(b2.clone()));
                        let y = g.conv_transpose2d(xv, v, bv, 2, 1)?;
                        reduce(g, y, 4)
                    },
                    &w2,
                    EPS,
                )
            }),
        ));
        cases.push((
            "conv_transpose2d",
            Box::new(move || {
                grad_check(
                    |g, v| {
                        let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
                        let y = g.conv_transpose2d(xv, wv, v, 2, 1)?;
                        reduce(g, y, 4)
                    },
                    &b,
                    EPS,
                )
            }),
        ));
    }
    cases.extend(binary(
        "channel_dot",
        random(&[2, 3, 2, 2], 38, 1.0),
        random(&[2, 3], 39, 1.0),
        |g, x, v| g.channel_dot(x, v),
    ));
    cases.extend(binary(
        "scale_locations",
        random(&[2, 3, 2, 2], 40, 1.0),
        random(&[2, 4], 41, 1.0),
        |g, x, s| g.scale_locations(x, s),
    ));
    cases.extend(binary(
        "lstm_cell",
        random(&[2, 12], 42, 1.5),
        random(&[2, 3], 43, 1.0),
        |g, a, c| g.lstm_cell(a, c),
    ));
    cases
        .into_iter()
        .map(|(name, f)| (name, f().unwrap_or(f64::NAN)))
        .collect()
}

struct Pair {
    gen: Generator,
    disc: Discriminator,
    enc: Encoder,
}

/// Adversarial plus cavity loss through prior, generator, attention
/// discriminator and encoder.
fn composite(g: &mut Graph, m: &Pair) -> Result<Var> {
    let c = g.constant(random(&[1, D_C], 50, 1.0));
    let z = m.gen.prior_sample(g, c, standard_normal(1, 51))?;
    let cond = g.constant(random(&[1, COND_WIDTH], 52, 1.0));
    let fake = m.gen.forward(g, z, cond)?;
    let real = g.constant(random(&[1, 1, 32, 32], 53, 0.5));
    let h = g.constant(random(&[1, HIST_BINS], 54, 1.0));
    let lr = m.disc.logits(g, real, Some(h))?;
    let lf = m.disc.logits(g, fake, Some(h))?;
    let both = g.concat0(&[lr, lf])?;
    let adv = g.bce_with_logits(both, &[1.0, 0.0])?;
    let counts = g.constant(Tensor::full([1, HIST_BINS], 2.0));
    let l_hv = m.enc.histogram_loss(g, fake, counts)?;
    let half = g.scale(l_hv, 0.5);
    g.add(adv, half)
}

/// One `(model/store, max relative error)` entry per probed store.
pub fn model_suite() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut pair = Pair {
        gen: Generator::init(5),
        disc: Discriminator::init(6),
        enc: Encoder::init(7),
    };
    let e = grad_check_model(&mut pair, |p| &mut p.gen.params, composite, EPS, PROBES, 1);
    out.push(("generator+discriminator (G store)", e.unwrap_or(f64::NAN)));
    let e = grad_check_model(&mut pair, |p| &mut p.disc.params, composite, EPS, PROBES, 2);
    out.push(("generator+discriminator (D store)", e.unwrap_or(f64::NAN)));

    let samples = generate_dataset(3, 9).unwrap().samples;
    let images = nn::image_batch(samples.iter().map(|s| &s.micrograph));
    let counts = nn::row_batch(samples.iter().map(|s| s.h_v.as_f64()));
    let mut enc = Encoder::init(8);
    let e = grad_check_model(
        &mut enc,
        |m| &mut m.params,
        |g, m| {
            let x = g.constant(images.clone());
            let t = g.constant(counts.clone());
            m.histogram_loss(g, x, t)
        },
        EPS,
        PROBES,
        3,
    );
    out.push(("encoder", e.unwrap_or(f64::NAN)));

    let stats = fit_stats(&samples).unwrap();
    let mut pred = Predictor::init(4, stats.clone());
    let c_m = random(&[3, D_C], 60, 1.0);
    let targets = nn::row_batch(samples.iter().map(|s| {
        let n = stats.normalize(s).d_r;
        n[..11].to_vec()
    }));
    let c_he: Vec<f64> = samples
        .iter()
        .map(|s| f64::from(u8::from(s.d_r.c_he)))
        .collect();
    let e = grad_check_model(
        &mut pred,
        |m| &mut m.params,
        |g, m| {
            let x = g.constant(images.clone());
            let c = g.constant(c_m.clone());
            let t = g.constant(targets.clone());
            m.loss(g, x, c, t, &c_he)
        },
        EPS,
        PROBES,
        4,
    );
    out.push(("predictor", e.unwrap_or(f64::NAN)));

    let mut vae = Vae::init(3);
    let cond = random(&[3, COND_WIDTH], 61, 1.0);
    let eps = random(&[3, LATENT], 62, 1.0);
    for (name, select) in [("vae (encoder store)", 0), ("vae (decoder store)", 1)] {
        let e = grad_check_model(
            &mut vae,
            |v| {
                if select == 0 {
                    &mut v.encoder
                } else {
                    &mut v.decoder.params
                }
            },
            |g, v| {
                let x = g.constant(images.clone());
                let c = g.constant(cond.clone());
                Ok(v.loss(g, x, c, eps.clone())?.0)
            },
            EPS,
            PROBES,
            5 + select,
        );
        out.push((name, e.unwrap_or(f64::NAN)));
    }

    let mut emb = ElementEmbeddings::init(1);
    let comp = nn::row_batch(samples.iter().map(|s| s.composition.fractions));
    let e = grad_check_model(
        &mut emb,
        |m| &mut m.params,
        |g, m| {
            let x = g.constant(comp.clone());
            let y = m.forward(g, x)?;
            Ok(g.sum_sq(y))
        },
        EPS,
        PROBES,
        7,
    );
    out.push(("embedding", e.unwrap_or(f64::NAN)));

    let mut cls = MetricClassifier::init(2);
    let e = grad_check_model(
        &mut cls,
        |m| &mut m.params,
        |g, m| {
            let x = g.constant(images.clone());
            let l = m.logits(g, x)?;
            g.softmax_cross_entropy(l, &[0, 5, 13])
        },
        EPS,
        PROBES,
        8,
    );
    out.push(("metric classifier", e.unwrap_or(f64::NAN)));
    out
}
