//! Image encoder `En(X) -> H̄_v`: estimates the cavity-count histogram of a
//! micrograph. Trained once on oracle pairs, then frozen.

use serde::{Deserialize, Serialize};

use crate::domain::{Micrograph, SampleRecord, HIST_BINS};
use crate::error::{Error, Result};
use crate::gan::check_images;
use crate::nn;
use crate::seed;
use crate::tensor::{BundleKind, Graph, ModelBundle, Optimizer, ParamStore, Rule, Tensor, Var};

const CHANNELS: [usize; 4] = [1, 8, 16, 32];
const FLAT: usize = 32 * 4 * 4;
pub const FC_WIDTH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            epochs: 30,
            lr: 1e-3,
            batch: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub params: ParamStore,
}

impl Encoder {
    pub fn init(seed: u64) -> Self {
        let mut rng = seed::rng(seed, "encoder-init");
        let mut p = ParamStore::new();
        for (i, w) in CHANNELS.windows(2).enumerate() {
            nn::add_conv(&mut p, &format!("conv{i}"), w[0], w[1], 3, &mut rng).expect("fresh");
        }
        nn::add_dense(&mut p, "fc", FLAT, FC_WIDTH, &mut rng).expect("fresh");
        nn::add_dense(&mut p, "out", FC_WIDTH, HIST_BINS, &mut rng).expect("fresh");
        Encoder { params: p }
    }

    /// `[B, 1, 32, 32] -> [B, 8]`, nonnegative.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let b = g.shape(x)[0];
        let mut h = x;
        for i in 0..CHANNELS.len() - 1 {
            h = nn::conv(g, &self.params, &format!("conv{i}"), h, 2, 1)?;
            h = g.relu(h);
        }
        let h = g.reshape(h, &[b, FLAT])?;
        let h = nn::dense(g, &self.params, "fc", h)?;
        let h = g.relu(h);
        let y = nn::dense(g, &self.params, "out", h)?;
        Ok(g.relu(y))
    }

    /// Histogram estimates for a batch of images `[B, 1, 32, 32]`.
    pub fn encode(&self, images: &Tensor) -> Result<Vec<[f64; HIST_BINS]>> {
        check_images("encode", images)?;
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y)
            .data()
            .chunks(HIST_BINS)
            .map(|r| std::array::from_fn(|i| r[i]))
            .collect())
    }

    pub fn encode_one(&self, m: &Micrograph) -> [f64; HIST_BINS] {
        self.encode(&nn::image_batch([m]))
            .expect("32x32 micrograph")[0]
    }

    /// `mean_b ||En(x_b) - h_b||^2` with raw-count targets `[B, 8]`.
    pub fn histogram_loss(&self, g: &mut Graph, x: Var, targets: Var) -> Result<Var> {
        let b = g.shape(x)[0];
        let y = self.forward(g, x)?;
        let d = g.sub(y, targets)?;
        let s = g.sum_sq(d);
        Ok(g.scale(s, 1.0 / b as f64))
    }

    pub fn to_bundle(&self) -> ModelBundle {
        let mut b = ModelBundle::new(BundleKind::Encoder);
        self.params.export("", &mut b);
        b
    }

    pub fn from_bundle(b: &ModelBundle) -> Result<Self> {
        b.expect_kind(BundleKind::Encoder)?;
        let mut e = Encoder::init(0);
        e.params.import("", b)?;
        Ok(e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EncoderReport {
    pub epoch_losses: Vec<f64>,
}

/// Supervised training on (image, histogram) pairs.
pub fn train_encoder(
    samples: &[SampleRecord],
    cfg: &EncoderConfig,
) -> Result<(Encoder, EncoderReport)> {
    if samples.is_empty() {
        return Err(Error::invalid("encoder training needs a nonempty dataset"));
    }
    if cfg.batch == 0 {
        return Err(Error::field("batch", "must be >= 1"));
    }
    let mut enc = Encoder::init(cfg.seed);
    // start the output layer at the mean histogram
    let mean: Vec<f64> = (0..HIST_BINS)
        .map(|b| {
            samples
                .iter()
                .map(|s| f64::from(s.h_v.counts[b]))
                .sum::<f64>()
                / samples.len() as f64
        })
        .collect();
    let bias = enc.params.id("out.b").expect("out.b");
    enc.params.value_mut(bias).data_mut().copy_from_slice(&mean);

    let mut opt = Optimizer::new(Rule::RmsProp, cfg.lr, 0.0)?;
    let mut rng = seed::rng(cfg.seed, "encoder-shuffle");
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let order = nn::shuffled(samples.len(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut g = Graph::new();
            let x = g.constant(nn::image_batch(
                chunk.iter().map(|&i| &samples[i].micrograph),
            ));
            let t = g.constant(nn::row_batch(
                chunk.iter().map(|&i| samples[i].h_v.as_f64()),
            ));
            let loss = enc.histogram_loss(&mut g, x, t)?;
            total += g.value(loss).item() * chunk.len() as f64;
            g.backward(loss, &mut [&mut enc.params])?;
            opt.step(&mut enc.params);
        }
        epoch_losses.push(total / samples.len() as f64);
    }
    Ok((enc, EncoderReport { epoch_losses }))
}

/// Per-bin mean absolute error in counts.
pub fn per_bin_mae(enc: &Encoder, samples: &[SampleRecord]) -> Result<[f64; HIST_BINS]> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation needs at least one sample"));
    }
    let mut mae = [0.0; HIST_BINS];
    for chunk in samples.chunks(64) {
        let est = enc.encode(&nn::image_batch(chunk.iter().map(|s| &s.micrograph)))?;
        for (e, s) in est.iter().zip(chunk) {
            for b in 0..HIST_BINS {
                mae[b] += (e[b] - f64::from(s.h_v.counts[b])).abs();
            }
        }
    }
    Ok(mae.map(|v| v / samples.len() as f64))
}
