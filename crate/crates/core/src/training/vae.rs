//! Conditional VAE baseline: conv encoder to `(mu, log sigma^2)`, decoder
//! with the generator's architecture conditioned on `(D_d, D_c)`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{TrainConfig, Variant};
use super::gan::Prepared;
use super::log::{EpochLoss, LossLog};
use crate::domain::{NormStats, SampleRecord};
use crate::error::{Error, Result};
use crate::gan::{Generator, LATENT};
use crate::nn;
use crate::seed;
use crate::tensor::{BundleKind, Graph, ModelBundle, Optimizer, ParamStore, Tensor, Var};

const CHANNELS: [usize; 4] = [1, 8, 16, 32];
const FLAT: usize = 32 * 4 * 4;

#[derive(Clone, Debug)]
pub struct Vae {
    pub encoder: ParamStore,
    pub decoder: Generator,
}

/// Per-batch terms of the VAE objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeLosses {
    pub recon: f64,
    pub kl: f64,
}

impl Vae {
    pub fn init(seed: u64) -> Self {
        let mut rng = seed::rng(seed, "vae-init");
        let mut p = ParamStore::new();
        for (i, w) in CHANNELS.windows(2).enumerate() {
            nn::add_conv(&mut p, &format!("conv{i}"), w[0], w[1], 3, &mut rng).expect("fresh");
        }
        nn::add_linear(&mut p, "mu", FLAT, LATENT, 0.01, &mut rng).expect("fresh");
        nn::add_linear(&mut p, "logvar", FLAT, LATENT, 0.01, &mut rng).expect("fresh");
        Vae {
            encoder: p,
            decoder: Generator::init(seed::sub_seed(seed, "vae-decoder")),
        }
    }

    /// `(mu, log sigma^2)`, each `[B, 64]`.
    pub fn encode(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let b = g.shape(x)[0];
        let mut h = x;
        for i in 0..CHANNELS.len() - 1 {
            h = nn::conv(g, &self.encoder, &format!("conv{i}"), h, 2, 1)?;
            h = g.relu(h);
        }
        let h = g.reshape(h, &[b, FLAT])?;
        let mu = nn::linear(g, &self.encoder, "mu", h)?;
        let logvar = nn::linear(g, &self.encoder, "logvar", h)?;
        Ok((mu, logvar))
    }

    /// Returns `(loss, recon, kl)` nodes: recon is the per-image summed
    /// squared pixel error and kl the analytic divergence to `N(0, I)`,
    /// both averaged over the batch.
    pub fn loss(&self, g: &mut Graph, x: Var, cond: Var, eps: Tensor) -> Result<(Var, Var, Var)> {
        let b = g.shape(x)[0] as f64;
        let (mu, logvar) = self.encode(g, x)?;
        let half = g.scale(logvar, 0.5);
        let sigma = g.exp(half);
        let e = g.constant(eps);
        let noise = g.mul(sigma, e)?;
        let z = g.add(mu, noise)?;
        let xr = self.decoder.forward(g, z, cond)?;
        let d = g.sub(xr, x)?;
        let sq = g.sum_sq(d);
        let recon = g.scale(sq, 1.0 / b);

        // KL = -1/2 sum(1 + logvar - mu^2 - exp(logvar))
        let mu2 = g.mul(mu, mu)?;
        let var = g.exp(logvar);
        let t = g.sub(logvar, mu2)?;
        let t = g.sub(t, var)?;
        let t = g.add_scalar(t, 1.0);
        let s = g.sum(t);
        let kl = g.scale(s, -0.5 / b);
        let loss = g.add(recon, kl)?;
        Ok((loss, recon, kl))
    }

    /// Decodes prior samples `z ~ N(0, I)` under the given conditions.
    pub fn sample(&self, prepared: &[Prepared], seed: u64) -> Result<Tensor> {
        let mut rng = seed::rng(seed, "vae-sample");
        let data = (0..prepared.len() * LATENT)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let z = Tensor::new([prepared.len(), LATENT], data)?;
        let cond = nn::row_batch(prepared.iter().map(|p| p.cond));
        self.decoder.generate(&z, &cond)
    }

    pub fn to_bundle(&self, stats: &NormStats) -> ModelBundle {
        let mut b = ModelBundle::new(BundleKind::Vae);
        self.encoder.export("enc.", &mut b);
        self.decoder.export(&mut b);
        b.set_meta("variant", Variant::Vae.as_str());
        b.set_meta("norm_stats", stats.to_json());
        b
    }

    pub fn from_bundle(b: &ModelBundle) -> Result<Self> {
        b.expect_kind(BundleKind::Vae)?;
        let mut v = Vae::init(0);
        v.encoder.import("enc.", b)?;
        v.decoder.import(b)?;
        Ok(v)
    }
}

/// Trains the VAE baseline; the config's `variant` must be `vae`.
pub fn train_vae(
    samples: &[SampleRecord],
    prepared: &[Prepared],
    cfg: &TrainConfig,
) -> Result<(Vae, LossLog, Vec<VaeLosses>)> {
    cfg.validate()?;
    if cfg.variant != Variant::Vae {
        return Err(Error::field("variant", "train_vae needs variant vae"));
    }
    if samples.is_empty() || samples.len() != prepared.len() {
        return Err(Error::invalid(
            "VAE training needs matching nonempty samples",
        ));
    }
    let mut vae = Vae::init(cfg.seed);
    let mut opt_e = Optimizer::new(cfg.rule, cfg.lr, cfg.weight_decay)?;
    let mut opt_d = Optimizer::new(cfg.rule, cfg.lr, cfg.weight_decay)?;
    let mut log = LossLog::default();
    let mut parts = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = std::time::Instant::now();
        let mut rng = seed::rng(cfg.seed, &format!("vae-epoch-{epoch}"));
        let order = nn::shuffled(samples.len(), &mut rng);
        let (mut sr, mut sk) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let x = g.constant(nn::image_batch(
                chunk.iter().map(|&i| &samples[i].micrograph),
            ));
            let cond = g.constant(nn::row_batch(chunk.iter().map(|&i| prepared[i].cond)));
            let data = (0..chunk.len() * LATENT)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let eps = Tensor::new([chunk.len(), LATENT], data)?;
            let (loss, recon, kl) = vae.loss(&mut g, x, cond, eps)?;
            let w = chunk.len() as f64;
            sr += g.value(recon).item() * w;
            sk += g.value(kl).item() * w;
            g.backward(loss, &mut [&mut vae.encoder, &mut vae.decoder.params])?;
            opt_e.step(&mut vae.encoder);
            opt_d.step(&mut vae.decoder.params);
        }
        let n = samples.len() as f64;
        let row = VaeLosses {
            recon: sr / n,
            kl: sk / n,
        };
        log::info!(
            "vae epoch {} recon {:.4} kl {:.4}",
            epoch + 1,
            row.recon,
            row.kl
        );
        // the L_D / L_G columns carry the reconstruction and KL terms
        log.push(EpochLoss {
            epoch: epoch + 1,
            l_d: row.recon,
            l_g: row.kl,
            l_hv: 0.0,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        parts.push(row);
    }
    Ok((vae, log, parts))
}
