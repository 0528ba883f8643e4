//! The generative pair: a composition-conditioned latent prior, the
//! generator `G(z, D_d, D_c)` and the histogram-attentive discriminator
//! `D(X, H_v)`.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domain::{D_C_WIDTH, D_D_WIDTH, HIST_BINS, IMAGE_SIDE};
use crate::embedding::D_C;
use crate::error::{Error, Result};
use crate::nn;
use crate::seed;
use crate::tensor::{BundleKind, Graph, ModelBundle, ParamStore, Tensor, Var};

/// Latent width `D`.
pub const LATENT: usize = 64;
/// Channels of the discriminator's last feature map.
pub const X_CHANNELS: usize = 64;
pub const X_SIDE: usize = 4;
pub const LOCATIONS: usize = X_SIDE * X_SIDE;
/// Width of the normalized conditioning vector fed to the generator.
pub const COND_WIDTH: usize = D_D_WIDTH + D_C_WIDTH;
pub const LEAK: f64 = 0.2;

const G_CHANNELS: [usize; 4] = [X_CHANNELS, 16, 8, 1];
const D_CHANNELS: [usize; 4] = [1, 8, 16, X_CHANNELS];

/// Counts evaluations of an instrumented sub-module.
#[derive(Debug, Default)]
pub struct CallCounter(AtomicU64);

impl CallCounter {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

impl Clone for CallCounter {
    fn clone(&self) -> Self {
        CallCounter(AtomicU64::new(self.get()))
    }
}

/// Generator parameters, including the prior matrices `W_mu` and `W_delta`
/// (trained together with the generator).
#[derive(Clone, Debug)]
pub struct Generator {
    pub params: ParamStore,
    pub prior_calls: CallCounter,
}

impl Generator {
    pub fn init(seed: u64) -> Self {
        let mut rng = seed::rng(seed, "generator-init");
        let mut p = ParamStore::new();
        let prior_std = 0.3 / (D_C as f64).sqrt();
        nn::add_linear(&mut p, "prior.mu", D_C, LATENT, prior_std, &mut rng).expect("fresh");
        nn::add_linear(&mut p, "prior.delta", D_C, LATENT, prior_std, &mut rng).expect("fresh");
        nn::add_dense(
            &mut p,
            "stem",
            LATENT + COND_WIDTH,
            X_CHANNELS * LOCATIONS,
            &mut rng,
        )
        .expect("fresh");
        for (i, w) in G_CHANNELS.windows(2).enumerate() {
            nn::add_conv_t(&mut p, &format!("up{i}"), w[0], w[1], 4, &mut rng).expect("fresh");
        }
        Generator {
            params: p,
            prior_calls: CallCounter::default(),
        }
    }

    /// `(mu, delta)` for a `[B, d_C]` batch of material vectors.
    pub fn prior_params(&self, g: &mut Graph, c_m: Var) -> Result<(Var, Var)> {
        self.prior_calls.bump();
        let mu = nn::linear(g, &self.params, "prior.mu", c_m)?;
        let mu = g.tanh(mu);
        let d = nn::linear(g, &self.params, "prior.delta", c_m)?;
        let d = g.tanh(d);
        Ok((mu, g.exp(d)))
    }

    /// `z = mu + delta * eps` on the graph, so prior matrices receive
    /// gradients.
    pub fn prior_sample(&self, g: &mut Graph, c_m: Var, eps: Tensor) -> Result<Var> {
        let (mu, delta) = self.prior_params(g, c_m)?;
        let e = g.constant(eps);
        let s = g.mul(delta, e)?;
        g.add(mu, s)
    }

    /// Closed-form prior mean and scale for one material vector.
    pub fn prior_stats(&self, c_m: &[f64; D_C]) -> ([f64; LATENT], [f64; LATENT]) {
        let mut g = Graph::new();
        let c = g.constant(Tensor::new([1, D_C], c_m.to_vec()).expect("shape"));
        let (mu, delta) = self.prior_params(&mut g, c).expect("prior shapes");
        let to_arr = |t: &Tensor| -> [f64; LATENT] { std::array::from_fn(|i| t.data()[i]) };
        (to_arr(g.value(mu)), to_arr(g.value(delta)))
    }

    /// Draws `n` latent vectors for one material, deterministic per seed.
    pub fn sample_prior(&self, c_m: &[f64; D_C], n: usize, seed: u64) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::field("n", "must be >= 1"));
        }
        let (mu, delta) = self.prior_stats(c_m);
        let eps = standard_normal(n, seed);
        let data = eps
            .data()
            .chunks(LATENT)
            .flat_map(|row| (0..LATENT).map(move |j| mu[j] + delta[j] * row[j]))
            .collect();
        Tensor::new([n, LATENT], data)
    }

    /// Images `[B, 1, 32, 32]` in `(0, 1)` from `z [B, D]` and the
    /// normalized conditioning `cond [B, 26]`.
    pub fn forward(&self, g: &mut Graph, z: Var, cond: Var) -> Result<Var> {
        let b = g.shape(z)[0];
        let x = g.concat_cols(&[z, cond])?;
        let h = nn::dense(g, &self.params, "stem", x)?;
        let h = g.relu(h);
        let mut h = g.reshape(h, &[b, X_CHANNELS, X_SIDE, X_SIDE])?;
        for i in 0..G_CHANNELS.len() - 1 {
            h = nn::conv_t(g, &self.params, &format!("up{i}"), h, 2, 1)?;
            if i + 2 < G_CHANNELS.len() {
                h = g.relu(h);
            }
        }
        Ok(g.sigmoid(h))
    }

    /// Inference wrapper over [`Generator::forward`].
    pub fn generate(&self, z: &Tensor, cond: &Tensor) -> Result<Tensor> {
        check_cols("generate", z, LATENT)?;
        check_cols("generate", cond, COND_WIDTH)?;
        if z.shape()[0] != cond.shape()[0] {
            return Err(Error::Shape {
                op: "generate",
                lhs: z.shape().to_vec(),
                rhs: cond.shape().to_vec(),
            });
        }
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let cv = g.constant(cond.clone());
        let out = self.forward(&mut g, zv, cv)?;
        Ok(g.value(out).clone())
    }

    pub fn export(&self, bundle: &mut ModelBundle) {
        self.params.export("g.", bundle);
    }

    pub fn import(&mut self, bundle: &ModelBundle) -> Result<()> {
        self.params.import("g.", bundle)
    }
}

/// Discriminator parameters; `W_v` maps the z-scored histogram to a channel
/// query for attention.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub params: ParamStore,
    pub attend_calls: CallCounter,
}

/// Attended features and the attention weights that produced them.
pub struct Attention {
    pub features: Var,
    pub weights: Var,
}

impl Discriminator {
    pub fn init(seed: u64) -> Self {
        let mut rng = seed::rng(seed, "discriminator-init");
        let mut p = ParamStore::new();
        for (i, w) in D_CHANNELS.windows(2).enumerate() {
            nn::add_conv(&mut p, &format!("conv{i}"), w[0], w[1], 3, &mut rng).expect("fresh");
        }
        nn::add_linear(
            &mut p,
            "attn.v",
            HIST_BINS,
            X_CHANNELS,
            0.1 / (HIST_BINS as f64).sqrt(),
            &mut rng,
        )
        .expect("fresh");
        let flat = X_CHANNELS * LOCATIONS;
        p.add_normal("head.w", &[flat, 1], 0.1 / (flat as f64).sqrt(), &mut rng)
            .expect("fresh");
        p.add_zeros("head.b", &[1]).expect("fresh");
        Discriminator {
            params: p,
            attend_calls: CallCounter::default(),
        }
    }

    /// Convolutional features `X_conv [B, 64, 4, 4]`.
    pub fn features(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..D_CHANNELS.len() - 1 {
            h = nn::conv(g, &self.params, &format!("conv{i}"), h, 2, 1)?;
            h = g.leaky_relu(h, LEAK);
        }
        Ok(h)
    }

    /// Soft attention over the 16 feature locations, queried by the
    /// histogram: `a = softmax(<X_conv[l], W_v h_v>)`,
    /// `X_hat = relu((1 + 16 a) X_conv)`.
    pub fn attend(&self, g: &mut Graph, x_conv: Var, h_v: Var) -> Result<Attention> {
        if g.shape(h_v).len() != 2 || g.shape(h_v)[1] != HIST_BINS {
            return Err(Error::Shape {
                op: "attend",
                lhs: g.shape(x_conv).to_vec(),
                rhs: g.shape(h_v).to_vec(),
            });
        }
        self.attend_calls.bump();
        let v = nn::linear(g, &self.params, "attn.v", h_v)?;
        let scores = g.channel_dot(x_conv, v)?;
        let a = g.softmax(scores);
        let gate = g.scale(a, LOCATIONS as f64);
        let gate = g.add_scalar(gate, 1.0);
        let y = g.scale_locations(x_conv, gate)?;
        Ok(Attention {
            features: g.relu(y),
            weights: a,
        })
    }

    /// Real/fake logits `[B, 1]`. With `h_v = None` the attention block is
    /// skipped and the head sees the raw features.
    pub fn logits(&self, g: &mut Graph, x: Var, h_v: Option<Var>) -> Result<Var> {
        let b = g.shape(x)[0];
        let f = self.features(g, x)?;
        let f = match h_v {
            Some(h) => self.attend(g, f, h)?.features,
            None => f,
        };
        let flat = g.reshape(f, &[b, X_CHANNELS * LOCATIONS])?;
        nn::dense(g, &self.params, "head", flat)
    }

    /// Probability that each image is real.
    pub fn discriminate(&self, images: &Tensor, h_v: Option<&Tensor>) -> Result<Vec<f64>> {
        check_images("discriminate", images)?;
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let h = h_v.map(|t| g.constant(t.clone()));
        let l = self.logits(&mut g, x, h)?;
        let p = g.sigmoid(l);
        Ok(g.value(p).data().to_vec())
    }

    pub fn export(&self, bundle: &mut ModelBundle) {
        self.params.export("d.", bundle);
    }

    pub fn import(&mut self, bundle: &ModelBundle) -> Result<()> {
        self.params.import("d.", bundle)
    }
}

/// `[n, D]` standard-normal draws from `seed`.
pub fn standard_normal(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * LATENT)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Tensor::new([n, LATENT], data).expect("n >= 1")
}

pub(crate) fn check_cols(op: &'static str, t: &Tensor, cols: usize) -> Result<()> {
    if t.shape().len() != 2 || t.shape()[1] != cols {
        return Err(Error::Shape {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![cols],
        });
    }
    Ok(())
}

pub(crate) fn check_images(op: &'static str, t: &Tensor) -> Result<()> {
    let s = t.shape();
    if s.len() != 4 || s[1] != 1 || s[2] != IMAGE_SIDE || s[3] != IMAGE_SIDE {
        return Err(Error::Shape {
            op,
            lhs: s.to_vec(),
            rhs: vec![1, IMAGE_SIDE, IMAGE_SIDE],
        });
    }
    Ok(())
}

/// Bundles a trained generator/discriminator pair.
pub fn pair_bundle(gen: &Generator, disc: &Discriminator, kind: BundleKind) -> ModelBundle {
    let mut b = ModelBundle::new(kind);
    gen.export(&mut b);
    disc.export(&mut b);
    b
}
