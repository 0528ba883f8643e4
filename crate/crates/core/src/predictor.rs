//! Image-to-data model `P(D_r | X_img, C_m)`: CNN features fused with the
//! material vector, then a bidirectional LSTM over the 12 performance
//! variables.

use serde::{Deserialize, Serialize};

use crate::domain::{NormStats, PerformanceParams, SampleRecord, D_R_CONTINUOUS};
use crate::embedding::{ElementEmbeddings, D_C, TARGET_SHIFT};
use crate::error::{Error, Result};
use crate::gan::check_images;
use crate::nn;
use crate::seed;
use crate::tensor::{BundleKind, Graph, ModelBundle, Optimizer, ParamStore, Rule, Tensor, Var};

/// Output steps, one per performance variable.
pub const STEPS: usize = 12;
pub const HIDDEN: usize = 64;
pub const INDEX_WIDTH: usize = 16;
pub const FEATURE_WIDTH: usize = 128;
pub const FUSED_WIDTH: usize = 64;

const CHANNELS: [usize; 4] = [1, 8, 16, 32];
const FLAT: usize = 32 * 4 * 4;
const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub rule: Rule,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            epochs: 30,
            lr: 1e-2,
            batch: 32,
            seed: 0,
            rule: Rule::Adagrad,
        }
    }
}

/// Denormalized estimate of one record's performance parameters.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub continuous: [f64; D_R_CONTINUOUS],
    pub c_he_probability: f64,
}

impl Prediction {
    pub fn to_params(&self) -> PerformanceParams {
        PerformanceParams::from_parts(self.continuous, self.c_he_probability >= 0.5)
    }
}

/// Hidden states of both sweeps, indexed by variable position.
pub struct Sweep {
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Predictor {
    pub params: ParamStore,
    pub stats: NormStats,
}

impl Predictor {
    pub fn init(seed: u64, stats: NormStats) -> Self {
        let mut rng = seed::rng(seed, "predictor-init");
        let mut p = ParamStore::new();
        for (i, w) in CHANNELS.windows(2).enumerate() {
            nn::add_conv(&mut p, &format!("conv{i}"), w[0], w[1], 3, &mut rng).expect("fresh");
        }
        nn::add_dense(&mut p, "trunk", FLAT, FEATURE_WIDTH, &mut rng).expect("fresh");
        // X̄ = relu(W_x X̂ + W_cm C_m + b)
        nn::add_dense(&mut p, "fuse.x", FEATURE_WIDTH, FUSED_WIDTH, &mut rng).expect("fresh");
        nn::add_linear(
            &mut p,
            "fuse.cm",
            D_C,
            FUSED_WIDTH,
            (1.0 / D_C as f64).sqrt(),
            &mut rng,
        )
        .expect("fresh");
        p.add_normal("index", &[STEPS, INDEX_WIDTH], 1.0, &mut rng)
            .expect("fresh");
        let gate_std = (1.0 / (FUSED_WIDTH + INDEX_WIDTH + HIDDEN) as f64).sqrt();
        for d in DIRECTIONS {
            p.add_normal(
                format!("{d}.wx"),
                &[FUSED_WIDTH, 4 * HIDDEN],
                gate_std,
                &mut rng,
            )
            .expect("fresh");
            p.add_normal(
                format!("{d}.we"),
                &[INDEX_WIDTH, 4 * HIDDEN],
                gate_std,
                &mut rng,
            )
            .expect("fresh");
            p.add_normal(format!("{d}.wh"), &[HIDDEN, 4 * HIDDEN], gate_std, &mut rng)
                .expect("fresh");
            // forget gate bias 1
            let mut b = vec![0.0; 4 * HIDDEN];
            b[HIDDEN..2 * HIDDEN].fill(1.0);
            p.add(format!("{d}.b"), Tensor::vector(b)).expect("fresh");
        }
        nn::add_linear(&mut p, "head", 2 * HIDDEN, 1, 0.1, &mut rng).expect("fresh");
        p.add("head.b", Tensor::vector(vec![TARGET_SHIFT]))
            .expect("fresh");
        nn::add_linear(&mut p, "he", 2 * HIDDEN, 1, 0.1, &mut rng).expect("fresh");
        p.add_zeros("he.b", &[1]).expect("fresh");
        Predictor { params: p, stats }
    }

    /// Fused context `X̄ [B, 64]` from images `[B, 1, 32, 32]` and `C_m [B, 16]`.
    pub fn context(&self, g: &mut Graph, x: Var, c_m: Var) -> Result<Var> {
        let b = g.shape(x)[0];
        let mut h = x;
        for i in 0..CHANNELS.len() - 1 {
            h = nn::conv(g, &self.params, &format!("conv{i}"), h, 2, 1)?;
            h = g.relu(h);
        }
        let h = g.reshape(h, &[b, FLAT])?;
        let h = nn::dense(g, &self.params, "trunk", h)?;
        let feat = g.relu(h);
        let a = nn::dense(g, &self.params, "fuse.x", feat)?;
        let c = nn::linear(g, &self.params, "fuse.cm", c_m)?;
        let s = g.add(a, c)?;
        Ok(g.relu(s))
    }

    /// Runs the forward sweep over steps `0..12` and the backward sweep over
    /// `11..=0`; step `i` sees `concat(X̄, index_i)`.
    pub fn bilstm_sweep(&self, g: &mut Graph, xbar: Var) -> Result<Sweep> {
        let b = g.shape(xbar)[0];
        let index = g.param_named(&self.params, "index");
        let mut states = Vec::with_capacity(2);
        for (dir, name) in DIRECTIONS.iter().enumerate() {
            // the X̄ contribution is the same at every step
            let wx = g.param_named(&self.params, &format!("{name}.wx"));
            let base = g.matmul(xbar, wx)?;
            let bias = g.param_named(&self.params, &format!("{name}.b"));
            let base = g.add_row(base, bias)?;
            let we = g.param_named(&self.params, &format!("{name}.we"));
            let wh = g.param_named(&self.params, &format!("{name}.wh"));
            let mut h = g.constant(Tensor::zeros([b, HIDDEN]));
            let mut c = g.constant(Tensor::zeros([b, HIDDEN]));
            let mut out = vec![None; STEPS];
            for k in 0..STEPS {
                let i = if dir == 0 { k } else { STEPS - 1 - k };
                let e = g.select_row(index, i)?;
                let e = g.matmul(e, we)?;
                let gates = g.add_row(base, e)?;
                let rec = g.matmul(h, wh)?;
                let gates = g.add(gates, rec)?;
                let hc = g.lstm_cell(gates, c)?;
                h = g.slice_cols(hc, 0, HIDDEN)?;
                c = g.slice_cols(hc, HIDDEN, 2 * HIDDEN)?;
                out[i] = Some(h);
            }
            states.push(
                out.into_iter()
                    .map(|v| v.expect("every step visited"))
                    .collect(),
            );
        }
        let backward = states.pop().expect("two directions");
        let forward = states.pop().expect("two directions");
        Ok(Sweep { forward, backward })
    }

    /// `(continuous [B, 11] in normalized units, C_He logits [B, 1])`.
    pub fn forward(&self, g: &mut Graph, x: Var, c_m: Var) -> Result<(Var, Var)> {
        let xbar = self.context(g, x, c_m)?;
        let sweep = self.bilstm_sweep(g, xbar)?;
        let mut cols = Vec::with_capacity(D_R_CONTINUOUS);
        for i in 0..STEPS {
            let both = g.concat_cols(&[sweep.forward[i], sweep.backward[i]])?;
            if i < D_R_CONTINUOUS {
                let y = nn::dense(g, &self.params, "head", both)?;
                cols.push(g.relu(y));
            } else {
                let logit = nn::dense(g, &self.params, "he", both)?;
                let cont = g.concat_cols(&cols)?;
                return Ok((g.add_scalar(cont, -TARGET_SHIFT), logit));
            }
        }
        unreachable!("STEPS exceeds the continuous fields")
    }

    /// MSE over normalized continuous targets `[B, 11]` plus binary
    /// cross-entropy on C_He.
    pub fn loss(&self, g: &mut Graph, x: Var, c_m: Var, targets: Var, c_he: &[f64]) -> Result<Var> {
        let (cont, logit) = self.forward(g, x, c_m)?;
        let n = g.value(cont).numel() as f64;
        let d = g.sub(cont, targets)?;
        let s = g.sum_sq(d);
        let mse = g.scale(s, 1.0 / n);
        let bce = g.bce_with_logits(logit, c_he)?;
        g.add(mse, bce)
    }

    /// Denormalized predictions for a batch of images and material vectors.
    pub fn predict(&self, images: &Tensor, c_m: &Tensor) -> Result<Vec<Prediction>> {
        check_images("predict", images)?;
        nn_check_rows(c_m, images.shape()[0])?;
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let c = g.constant(c_m.clone());
        let (cont, logit) = self.forward(&mut g, x, c)?;
        let cont = g.value(cont).clone();
        let logit = g.value(logit).clone();
        Ok(cont
            .rows()
            .zip(logit.data())
            .map(|(row, &l)| Prediction {
                continuous: self.stats.denormalize_d_r(row),
                c_he_probability: 1.0 / (1.0 + (-l).exp()),
            })
            .collect())
    }

    pub fn to_bundle(&self) -> ModelBundle {
        let mut b = ModelBundle::new(BundleKind::Predictor);
        self.params.export("", &mut b);
        b.set_meta("norm_stats", self.stats.to_json());
        b
    }

    pub fn from_bundle(b: &ModelBundle) -> Result<Self> {
        b.expect_kind(BundleKind::Predictor)?;
        let stats = NormStats::from_json(b.meta("norm_stats").ok_or_else(|| Error::Bundle {
            section: "metadata".into(),
            message: "missing `norm_stats`".into(),
        })?)?;
        let mut p = Predictor::init(0, stats);
        p.params.import("", b)?;
        Ok(p)
    }
}

fn nn_check_rows(c_m: &Tensor, n: usize) -> Result<()> {
    if c_m.shape() != [n, D_C] {
        return Err(Error::Shape {
            op: "predict",
            lhs: c_m.shape().to_vec(),
            rhs: vec![n, D_C],
        });
    }
    Ok(())
}

/// Held-out evaluation in normalized units.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictorReport {
    pub epoch_losses: Vec<f64>,
    /// Per-field RMSE of normalized continuous targets.
    pub field_rmse: Vec<f64>,
    /// RMSE over all normalized continuous values.
    pub rmse: f64,
    /// Same, predicting the train-set mean (zero in normalized units).
    pub baseline_rmse: f64,
    pub c_he_accuracy: f64,
}

fn material_rows(samples: &[&SampleRecord], emb: &ElementEmbeddings) -> Result<Tensor> {
    let rows = samples
        .iter()
        .map(|s| emb.embed(&s.composition.fractions))
        .collect::<Result<Vec<_>>>()?;
    Ok(nn::row_batch(rows))
}

/// Trains on `train` (normalization fitted there) and reports metrics on
/// `held_out`.
pub fn train_predictor(
    train: &[SampleRecord],
    held_out: &[SampleRecord],
    emb: &ElementEmbeddings,
    cfg: &PredictorConfig,
) -> Result<(Predictor, PredictorReport)> {
    if train.len() < 2 {
        return Err(Error::invalid(
            "predictor training needs at least two samples",
        ));
    }
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::field("epochs", "epochs and batch must be >= 1"));
    }
    let stats = crate::domain::fit_stats(train)?;
    let mut model = Predictor::init(cfg.seed, stats);
    let norm: Vec<_> = train.iter().map(|s| model.stats.normalize(s)).collect();
    let c_m: Vec<[f64; D_C]> = train
        .iter()
        .map(|s| emb.embed(&s.composition.fractions))
        .collect::<Result<_>>()?;
    let mut opt = Optimizer::new(cfg.rule, cfg.lr, 0.0)?;
    let mut rng = seed::rng(cfg.seed, "predictor-shuffle");
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let order = nn::shuffled(train.len(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut g = Graph::new();
            let x = g.constant(nn::image_batch(chunk.iter().map(|&i| &train[i].micrograph)));
            let c = g.constant(nn::row_batch(chunk.iter().map(|&i| c_m[i])));
            let t = g.constant(nn::row_batch(chunk.iter().map(|&i| norm[i].d_r)));
            let he: Vec<f64> = chunk.iter().map(|&i| norm[i].c_he).collect();
            let loss = model.loss(&mut g, x, c, t, &he)?;
            total += g.value(loss).item() * chunk.len() as f64;
            g.backward(loss, &mut [&mut model.params])?;
            opt.step(&mut model.params);
        }
        epoch_losses.push(total / train.len() as f64);
    }
    let mut report = evaluate(&model, held_out, emb)?;
    report.epoch_losses = epoch_losses;
    Ok((model, report))
}

/// Normalized held-out metrics for a trained predictor.
pub fn evaluate(
    model: &Predictor,
    samples: &[SampleRecord],
    emb: &ElementEmbeddings,
) -> Result<PredictorReport> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation needs at least one sample"));
    }
    let mut sq = [0.0; D_R_CONTINUOUS];
    let mut base = 0.0;
    let mut correct = 0usize;
    for chunk in samples.chunks(64) {
        let refs: Vec<&SampleRecord> = chunk.iter().collect();
        let images = nn::image_batch(chunk.iter().map(|s| &s.micrograph));
        let preds = model.predict(&images, &material_rows(&refs, emb)?)?;
        for (p, s) in preds.iter().zip(chunk) {
            let truth = model.stats.normalize(s);
            let est = model
                .stats
                .normalize_d_r(&PerformanceParams::from_parts(p.continuous, false));
            for j in 0..D_R_CONTINUOUS {
                sq[j] += (est[j] - truth.d_r[j]).powi(2);
                base += truth.d_r[j].powi(2);
            }
            if (p.c_he_probability >= 0.5) == (truth.c_he >= 0.5) {
                correct += 1;
            }
        }
    }
    let n = samples.len() as f64;
    let field_rmse: Vec<f64> = sq.iter().map(|v| (v / n).sqrt()).collect();
    let total: f64 = sq.iter().sum();
    Ok(PredictorReport {
        epoch_losses: Vec::new(),
        field_rmse,
        rmse: (total / (n * D_R_CONTINUOUS as f64)).sqrt(),
        baseline_rmse: (base / (n * D_R_CONTINUOUS as f64)).sqrt(),
        c_he_accuracy: correct as f64 / n,
    })
}
