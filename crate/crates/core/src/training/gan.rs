//! Alternating adversarial training with the weighted cavity loss.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{TrainConfig, Variant};
use super::log::{EpochLoss, LossLog};
use crate::domain::{NormStats, SampleRecord, HIST_BINS};
use crate::embedding::{ElementEmbeddings, D_C};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::gan::{Discriminator, Generator, COND_WIDTH, LATENT};
use crate::nn;
use crate::seed;
use crate::tensor::{BundleKind, Graph, ModelBundle, Optimizer, Tensor, Var};

/// Network-space view of one conditioning record.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub cond: [f64; COND_WIDTH],
    pub h_norm: [f64; HIST_BINS],
    pub h_raw: [f64; HIST_BINS],
    pub c_m: [f64; D_C],
}

pub fn prepare(
    samples: &[SampleRecord],
    stats: &NormStats,
    emb: &ElementEmbeddings,
) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            let n = stats.normalize(s);
            let mut cond = [0.0; COND_WIDTH];
            cond[..n.d_d.len()].copy_from_slice(&n.d_d);
            cond[n.d_d.len()..].copy_from_slice(&n.d_c);
            Ok(Prepared {
                cond,
                h_norm: n.h_v,
                h_raw: s.h_v.as_f64(),
                c_m: emb.embed(&s.composition.fractions)?,
            })
        })
        .collect()
}

/// Scalars of one adversarial step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub l_d: f64,
    pub l_g: f64,
    pub l_hv: f64,
    /// `-E log D(X) - E log(1 - D(X'))`.
    pub d_adversarial: f64,
    /// `-E log D(X')`.
    pub g_adversarial: f64,
    pub d_cavity: f64,
    pub g_cavity: f64,
}

/// Graph nodes of one step: both losses share a single forward pass.
pub struct StepGraph {
    pub l_d: Var,
    pub l_g: Var,
    pub fake: Var,
    pub losses: StepLosses,
}

/// Latent codes for a batch: prior samples under variants that use the
/// prior, otherwise the raw standard-normal noise.
pub fn latent(
    g: &mut Graph,
    gen: &Generator,
    variant: Variant,
    batch: &[&Prepared],
    eps: Tensor,
) -> Result<Var> {
    if variant.uses_prior() {
        let c = g.constant(nn::row_batch(batch.iter().map(|p| p.c_m)));
        gen.prior_sample(g, c, eps)
    } else {
        Ok(g.constant(eps))
    }
}

/// Builds `L_D = -E log D(X) - E log(1 - D(X')) + (λ/2) L_Hv` and
/// `L_G = -E log D(X') + (λ/2) L_Hv` on one forward pass.
#[allow(clippy::too_many_arguments)]
pub fn step_graph(
    g: &mut Graph,
    gen: &Generator,
    disc: &Discriminator,
    enc: &Encoder,
    batch: &[&Prepared],
    real: Tensor,
    eps: Tensor,
    variant: Variant,
    lambda: f64,
) -> Result<StepGraph> {
    if variant == Variant::Vae {
        return Err(Error::field("variant", "vae is trained with train_vae"));
    }
    let b = batch.len();
    let z = latent(g, gen, variant, batch, eps)?;
    let cond = g.constant(nn::row_batch(batch.iter().map(|p| p.cond)));
    let fake = gen.forward(g, z, cond)?;
    let real = g.constant(real);
    let both = g.concat0(&[real, fake])?;
    let h = if variant.uses_attention() {
        let rows = batch.iter().chain(batch.iter()).map(|p| p.h_norm);
        Some(g.constant(nn::row_batch(rows)))
    } else {
        None
    };
    let logits = disc.logits(g, both, h)?;
    let l_real = g.slice0(logits, 0, b)?;
    let l_fake = g.slice0(logits, b, 2 * b)?;
    let d_real = g.bce_with_logits(l_real, &vec![1.0; b])?;
    let d_fake = g.bce_with_logits(l_fake, &vec![0.0; b])?;
    let d_adv = g.add(d_real, d_fake)?;
    let g_adv = g.bce_with_logits(l_fake, &vec![1.0; b])?;

    let targets = g.constant(nn::row_batch(batch.iter().map(|p| p.h_raw)));
    let l_hv = enc.histogram_loss(g, fake, targets)?;
    let half = 0.5 * variant.effective_lambda(lambda);
    let cavity = g.scale(l_hv, half);
    let l_d = g.add(d_adv, cavity)?;
    let l_g = g.add(g_adv, cavity)?;
    let losses = StepLosses {
        l_d: g.value(l_d).item(),
        l_g: g.value(l_g).item(),
        l_hv: g.value(l_hv).item(),
        d_adversarial: g.value(d_adv).item(),
        g_adversarial: g.value(g_adv).item(),
        d_cavity: g.value(cavity).item(),
        g_cavity: g.value(cavity).item(),
    };
    Ok(StepGraph {
        l_d,
        l_g,
        fake,
        losses,
    })
}

fn normal_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Tensor::new([rows, cols], data).expect("nonempty")
}

/// Resumable adversarial training state.
pub struct GanTrainer<'a> {
    samples: &'a [SampleRecord],
    prepared: Vec<Prepared>,
    encoder: &'a Encoder,
    pub cfg: TrainConfig,
    pub stats: NormStats,
    pub gen: Generator,
    pub disc: Discriminator,
    opt_g: Optimizer,
    opt_d: Optimizer,
    /// Completed epochs.
    pub epoch: usize,
    pub log: LossLog,
    pub dataset_version: Option<String>,
}

impl<'a> GanTrainer<'a> {
    pub fn new(
        samples: &'a [SampleRecord],
        emb: &ElementEmbeddings,
        encoder: &'a Encoder,
        stats: NormStats,
        cfg: TrainConfig,
        dataset_version: Option<String>,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.variant == Variant::Vae {
            return Err(Error::field("variant", "vae is trained with train_vae"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("GAN training needs a nonempty dataset"));
        }
        let prepared = prepare(samples, &stats, emb)?;
        Ok(GanTrainer {
            samples,
            prepared,
            encoder,
            stats,
            gen: Generator::init(seed::sub_seed(cfg.seed, "generator")),
            disc: Discriminator::init(seed::sub_seed(cfg.seed, "discriminator")),
            opt_g: Optimizer::new(cfg.rule, cfg.lr, cfg.weight_decay)?,
            opt_d: Optimizer::new(cfg.rule, cfg.lr, cfg.weight_decay)?,
            cfg,
            epoch: 0,
            log: LossLog::default(),
            dataset_version,
        })
    }

    pub fn prepared(&self) -> &[Prepared] {
        &self.prepared
    }

    /// One pass over the data. The epoch's randomness depends only on
    /// `(seed, epoch)`, so a resumed run replays exactly.
    pub fn run_epoch(&mut self) -> Result<EpochLoss> {
        let start = Instant::now();
        let mut rng = seed::rng(self.cfg.seed, &format!("gan-epoch-{}", self.epoch));
        let order = nn::shuffled(self.samples.len(), &mut rng);
        let (mut sd, mut sg, mut sh) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &self.prepared[i]).collect();
            let real = nn::image_batch(chunk.iter().map(|&i| &self.samples[i].micrograph));
            let eps = normal_tensor(&mut rng, chunk.len(), LATENT);
            let mut g = Graph::new();
            let step = step_graph(
                &mut g,
                &self.gen,
                &self.disc,
                self.encoder,
                &batch,
                real,
                eps,
                self.cfg.variant,
                self.cfg.lambda,
            )?;
            g.backward(step.l_d, &mut [&mut self.disc.params])?;
            g.backward(step.l_g, &mut [&mut self.gen.params])?;
            self.opt_d.step(&mut self.disc.params);
            self.opt_g.step(&mut self.gen.params);
            let w = chunk.len() as f64;
            sd += step.losses.l_d * w;
            sg += step.losses.l_g * w;
            sh += step.losses.l_hv * w;
        }
        let n = self.samples.len() as f64;
        self.epoch += 1;
        let row = EpochLoss {
            epoch: self.epoch,
            l_d: sd / n,
            l_g: sg / n,
            l_hv: sh / n,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        self.log.push(row.clone());
        Ok(row)
    }

    /// Trains until `cfg.epochs`, writing checkpoints into `checkpoint_dir`
    /// every `cfg.checkpoint_interval` epochs.
    pub fn run(&mut self, checkpoint_dir: Option<&Path>) -> Result<()> {
        while self.epoch < self.cfg.epochs {
            let row = self.run_epoch()?;
            log::info!(
                "epoch {} L_D {:.4} L_G {:.4} L_Hv {:.4} ({:.1}s)",
                row.epoch,
                row.l_d,
                row.l_g,
                row.l_hv,
                row.wall_seconds
            );
            if let Some(dir) = checkpoint_dir {
                let k = self.cfg.checkpoint_interval;
                if k > 0 && (self.epoch.is_multiple_of(k) || self.epoch == self.cfg.epochs) {
                    self.checkpoint().save(dir.join("gan-checkpoint.bundle"))?;
                }
            }
        }
        Ok(())
    }

    /// Everything needed to continue training bit-exactly.
    pub fn checkpoint(&self) -> ModelBundle {
        let mut b = ModelBundle::new(BundleKind::GanCheckpoint);
        self.gen.export(&mut b);
        self.disc.export(&mut b);
        self.opt_g.export(&self.gen.params, "opt_g.", &mut b);
        self.opt_d.export(&self.disc.params, "opt_d.", &mut b);
        b.set_meta("epoch", self.epoch.to_string());
        b.set_meta("config", self.cfg.to_json());
        b.set_meta("norm_stats", self.stats.to_json());
        b.set_meta(
            "loss_log",
            serde_json::to_string(&self.log).expect("log serializes"),
        );
        if let Some(v) = &self.dataset_version {
            b.set_meta("dataset_version", v.clone());
        }
        b
    }

    /// Restores a checkpoint onto a trainer built for the same data. A
    /// differing dataset version is recorded as a warning in the loss log.
    pub fn resume(&mut self, b: &ModelBundle) -> Result<()> {
        b.expect_kind(BundleKind::GanCheckpoint)?;
        let meta = |k: &str| {
            b.meta(k).ok_or_else(|| Error::Bundle {
                section: "metadata".into(),
                message: format!("missing `{k}`"),
            })
        };
        let cfg: TrainConfig = serde_json::from_str(meta("config")?)?;
        let epochs = self.cfg.epochs;
        self.cfg = TrainConfig { epochs, ..cfg };
        self.gen.import(b)?;
        self.disc.import(b)?;
        self.opt_g = Optimizer::new(self.cfg.rule, self.cfg.lr, self.cfg.weight_decay)?;
        self.opt_d = Optimizer::new(self.cfg.rule, self.cfg.lr, self.cfg.weight_decay)?;
        self.opt_g.import(&self.gen.params, "opt_g.", b)?;
        self.opt_d.import(&self.disc.params, "opt_d.", b)?;
        self.epoch = meta("epoch")?.parse().map_err(|_| Error::Bundle {
            section: "metadata".into(),
            message: "bad `epoch`".into(),
        })?;
        self.log = serde_json::from_str(meta("loss_log")?)?;
        let found = b.meta("dataset_version");
        if found != self.dataset_version.as_deref() {
            self.log.warn(format!(
                "checkpoint dataset_version {} differs from current {}",
                found.unwrap_or("<none>"),
                self.dataset_version.as_deref().unwrap_or("<none>")
            ));
        }
        Ok(())
    }

    /// Generator bundle (with prior matrices and normalization stats).
    pub fn generator_bundle(&self) -> ModelBundle {
        let mut b = ModelBundle::new(BundleKind::Generator);
        self.gen.export(&mut b);
        self.annotate(&mut b);
        b
    }

    pub fn discriminator_bundle(&self) -> ModelBundle {
        let mut b = ModelBundle::new(BundleKind::Discriminator);
        self.disc.export(&mut b);
        self.annotate(&mut b);
        b
    }

    fn annotate(&self, b: &mut ModelBundle) {
        b.set_meta("variant", self.cfg.variant.as_str());
        b.set_meta("lambda", format!("{}", self.cfg.lambda));
        b.set_meta("epochs", self.epoch.to_string());
        b.set_meta("norm_stats", self.stats.to_json());
        if let Some(v) = &self.dataset_version {
            b.set_meta("dataset_version", v.clone());
        }
    }
}

/// Generates one image per conditioning record, with latent codes drawn
/// according to the variant.
pub fn sample_images(
    gen: &Generator,
    prepared: &[Prepared],
    variant: Variant,
    seed: u64,
) -> Result<Tensor> {
    let mut rng = seed::rng(seed, "sample-images");
    let mut out = Vec::new();
    for chunk in prepared.chunks(64) {
        let batch: Vec<&Prepared> = chunk.iter().collect();
        let eps = normal_tensor(&mut rng, chunk.len(), LATENT);
        let mut g = Graph::new();
        let z = latent(&mut g, gen, variant, &batch, eps)?;
        let cond = g.constant(nn::row_batch(chunk.iter().map(|p| p.cond)));
        let x = gen.forward(&mut g, z, cond)?;
        out.extend_from_slice(g.value(x).data());
    }
    Tensor::new([prepared.len(), 1, 32, 32], out)
}

/// Real-vs-fake accuracy of the discriminator on held-out records and an
/// equal number of generated images for the same conditions.
pub fn discriminator_accuracy(
    gen: &Generator,
    disc: &Discriminator,
    held: &[SampleRecord],
    prepared: &[Prepared],
    variant: Variant,
    seed: u64,
) -> Result<f64> {
    let fakes = sample_images(gen, prepared, variant, seed)?;
    let real = nn::image_batch(held.iter().map(|s| &s.micrograph));
    let h = variant
        .uses_attention()
        .then(|| nn::row_batch(prepared.iter().map(|p| p.h_norm)));
    let pr = disc.discriminate(&real, h.as_ref())?;
    let pf = disc.discriminate(&fakes, h.as_ref())?;
    let correct = pr.iter().filter(|&&p| p > 0.5).count() + pf.iter().filter(|&&p| p < 0.5).count();
    Ok(correct as f64 / (pr.len() + pf.len()) as f64)
}
