//! Composition embeddings: a small network regresses thermodynamic
//! properties from element fractions, and the first layer's per-element rows
//! become element vectors. A material's feature vector `C_m` is the
//! fraction-weighted sum of its element rows.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::domain::materials::{validate_fractions, ALLOYS, NUM_ELEMENTS};
use crate::domain::normalize::FieldStats;
use crate::domain::SampleRecord;
use crate::error::{Error, Result};
use crate::nn;
use crate::seed;
use crate::tensor::{BundleKind, Graph, ModelBundle, Optimizer, ParamStore, Rule, Tensor, Var};

/// Width of `C_m`.
pub const D_C: usize = 16;
pub const HIDDEN: usize = 32;
/// Regressed thermodynamic fields (crystal one-hot plus nine continuous).
pub const D_PH: usize = 12;
/// Normalized targets are shifted by this amount so the relu output layer
/// can reach them.
pub const TARGET_SHIFT: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct EmbedConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            epochs: 200,
            lr: 3e-3,
            batch: 20,
            seed: 0,
        }
    }
}

/// Element vectors plus the regression network that produced them.
#[derive(Clone, Debug)]
pub struct ElementEmbeddings {
    pub params: ParamStore,
    pub target_stats: Vec<FieldStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmbedReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

impl ElementEmbeddings {
    pub fn init(seed: u64) -> Self {
        let mut rng = seed::rng(seed, "embedding-init");
        let mut p = ParamStore::new();
        nn::add_dense(&mut p, "emb", NUM_ELEMENTS, D_C, &mut rng).expect("fresh store");
        nn::add_dense(&mut p, "fc2", D_C, HIDDEN, &mut rng).expect("fresh store");
        nn::add_linear(
            &mut p,
            "w_m",
            HIDDEN,
            D_PH,
            (2.0 / HIDDEN as f64).sqrt(),
            &mut rng,
        )
        .expect("fresh store");
        ElementEmbeddings {
            params: p,
            target_stats: vec![
                FieldStats {
                    mean: 0.0,
                    std: 1.0,
                    degenerate: false
                };
                D_PH
            ],
        }
    }

    /// The `[12, 16]` element-vector matrix.
    pub fn matrix(&self) -> &Tensor {
        self.params.value(self.params.id("emb.w").expect("emb.w"))
    }

    pub fn row(&self, element: usize) -> [f64; D_C] {
        let d = self.matrix().data();
        std::array::from_fn(|j| d[element * D_C + j])
    }

    /// `C_m = sum_e m_e * row_e`.
    pub fn embed(&self, m: &[f64]) -> Result<[f64; D_C]> {
        validate_fractions(m)?;
        Ok(self.embed_unchecked(m))
    }

    fn embed_unchecked(&self, m: &[f64]) -> [f64; D_C] {
        let e = self.matrix().data();
        let mut out = [0.0; D_C];
        for (i, &x) in m.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += x * e[i * D_C + j];
            }
        }
        out
    }

    pub fn embed_alloy(&self, name: &str) -> Result<[f64; D_C]> {
        let a = crate::domain::require_alloy(name)?;
        self.embed(&a.composition().fractions)
    }

    /// Network output for a `[B, 12]` batch of compositions, in shifted
    /// normalized target space.
    pub fn forward(&self, g: &mut Graph, m: Var) -> Result<Var> {
        forward_with(&self.params, g, m)
    }

    fn targets(&self, s: &SampleRecord) -> [f64; D_PH] {
        let t = s.d_d.thermodynamic();
        std::array::from_fn(|j| self.target_stats[j].normalize(t[j]) + TARGET_SHIFT)
    }

    fn batch_loss(&self, g: &mut Graph, batch: &[&SampleRecord]) -> Result<Var> {
        self.batch_loss_with(&self.params, g, batch)
    }

    fn batch_loss_with(
        &self,
        params: &ParamStore,
        g: &mut Graph,
        batch: &[&SampleRecord],
    ) -> Result<Var> {
        let m = g.constant(nn::row_batch(batch.iter().map(|s| s.composition.fractions)));
        let t = g.constant(nn::row_batch(batch.iter().map(|s| self.targets(s))));
        let y = forward_with(params, g, m)?;
        let d = g.sub(y, t)?;
        let sq = g.sum_sq(d);
        Ok(g.scale(sq, 1.0 / (batch.len() * D_PH) as f64))
    }

    /// Mean squared error over all samples, in normalized target units.
    pub fn mse(&self, samples: &[SampleRecord]) -> Result<f64> {
        let refs: Vec<&SampleRecord> = samples.iter().collect();
        let mut g = Graph::new();
        let l = self.batch_loss(&mut g, &refs)?;
        Ok(g.value(l).item())
    }

    pub fn to_bundle(&self) -> ModelBundle {
        let mut b = ModelBundle::new(BundleKind::Embedding);
        self.params.export("", &mut b);
        b.set_meta(
            "target_stats",
            serde_json::to_string(&self.target_stats).expect("stats serialize"),
        );
        b.set_meta("d_c", D_C.to_string());
        b
    }

    pub fn from_bundle(b: &ModelBundle) -> Result<Self> {
        b.expect_kind(BundleKind::Embedding)?;
        let mut e = ElementEmbeddings::init(0);
        e.params.import("", b)?;
        let stats = b.meta("target_stats").ok_or_else(|| Error::Bundle {
            section: "metadata".into(),
            message: "missing `target_stats`".into(),
        })?;
        e.target_stats = serde_json::from_str(stats)?;
        Ok(e)
    }
}

fn forward_with(params: &ParamStore, g: &mut Graph, m: Var) -> Result<Var> {
    let h = nn::dense(g, params, "emb", m)?;
    let h = g.tanh(h);
    let h = nn::dense(g, params, "fc2", h)?;
    let h = g.tanh(h);
    let y = nn::linear(g, params, "w_m", h)?;
    Ok(g.relu(y))
}

/// Fits the regression network on the dataset's (composition, properties)
/// pairs.
pub fn train_embedding(
    samples: &[SampleRecord],
    cfg: &EmbedConfig,
) -> Result<(ElementEmbeddings, EmbedReport)> {
    let mut distinct: Vec<&[f64; NUM_ELEMENTS]> = Vec::new();
    for s in samples {
        if !distinct.contains(&&s.composition.fractions) {
            distinct.push(&s.composition.fractions);
        }
    }
    if distinct.len() < 2 {
        return Err(Error::invalid(format!(
            "embedding needs at least 2 distinct compositions, dataset has {}",
            distinct.len()
        )));
    }
    if cfg.batch == 0 {
        return Err(Error::field("batch", "must be >= 1"));
    }
    let mut emb = ElementEmbeddings::init(cfg.seed);
    emb.target_stats = (0..D_PH)
        .map(|j| {
            FieldStats::fit(
                &samples
                    .iter()
                    .map(|s| s.d_d.thermodynamic()[j])
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let initial_loss = emb.mse(samples)?;
    let mut opt = Optimizer::new(Rule::RmsProp, cfg.lr, 0.0)?;
    let mut rng = seed::rng(cfg.seed, "embedding-shuffle");
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let order = nn::shuffled(samples.len(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&SampleRecord> = chunk.iter().map(|&i| &samples[i]).collect();
            let mut g = Graph::new();
            let loss = emb.batch_loss(&mut g, &batch)?;
            total += g.value(loss).item() * batch.len() as f64;
            g.backward(loss, &mut [&mut emb.params])?;
            opt.step(&mut emb.params);
        }
        epoch_losses.push(total / samples.len() as f64);
    }
    let final_loss = emb.mse(samples)?;
    Ok((
        emb,
        EmbedReport {
            initial_loss,
            final_loss,
            epoch_losses,
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectedAlloy {
    pub alloy_name: String,
    pub x: f64,
    pub y: f64,
}

/// Projects the 14 alloy vectors onto their top two principal components.
/// Also returns the variance along each component.
pub fn export_embedding_projection(emb: &ElementEmbeddings) -> (Vec<ProjectedAlloy>, [f64; 2]) {
    let rows: Vec<[f64; D_C]> = ALLOYS
        .iter()
        .map(|a| emb.embed_unchecked(&a.composition().fractions))
        .collect();
    let n = rows.len();
    let mut x = DMatrix::from_fn(n, D_C, |i, j| rows[i][j]);
    for j in 0..D_C {
        let mean = x.column(j).sum() / n as f64;
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..D_C).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = Vec::new();
    for &k in &order[..2] {
        let mut v = eig.eigenvectors.column(k).clone_owned();
        // fix the sign so the largest-magnitude entry is positive
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        axes.push(v);
    }
    let proj: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let r = x.row(i);
            [r.dot(&axes[0].transpose()), r.dot(&axes[1].transpose())]
        })
        .collect();
    let var = [0, 1].map(|c| proj.iter().map(|p| p[c] * p[c]).sum::<f64>() / n as f64);
    let out = ALLOYS
        .iter()
        .zip(proj)
        .map(|(a, p)| ProjectedAlloy {
            alloy_name: a.name.to_string(),
            x: p[0],
            y: p[1],
        })
        .collect();
    (out, var)
}

/// `alloy_name,x,y` CSV of the projection.
pub fn projection_csv(points: &[ProjectedAlloy]) -> String {
    let mut s = String::from("alloy_name,x,y\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.alloy_name, p.x, p.y));
    }
    s
}
