//! Trains the performance predictor and compares it with the constant-mean
//! baseline on held-out samples.

use swellgan::embedding::{train_embedding, EmbedConfig};
use swellgan::nn;
use swellgan::oracle::generate_dataset;
use swellgan::predictor::{train_predictor, PredictorConfig};
use swellgan::tensor::Tensor;

fn main() -> swellgan::Result<()> {
    let all = generate_dataset(700, 7)?.samples;
    let (train, held) = all.split_at(600);
    let (emb, _) = train_embedding(
        train,
        &EmbedConfig {
            epochs: 30,
            ..EmbedConfig::default()
        },
    )?;
    let (model, report) = train_predictor(
        train,
        held,
        &emb,
        &PredictorConfig {
            epochs: 4,
            ..PredictorConfig::default()
        },
    )?;
    println!(
        "normalized RMSE {:.3} vs constant-mean {:.3}; C_He accuracy {:.3}",
        report.rmse, report.baseline_rmse, report.c_he_accuracy
    );

    let s = &held[0];
    let c_m = Tensor::new(
        [1, emb.embed(&s.composition.fractions)?.len()],
        emb.embed(&s.composition.fractions)?.to_vec(),
    )?;
    let p = model
        .predict(&nn::image_batch([&s.micrograph]), &c_m)?
        .remove(0);
    println!(
        "H_V true {:.1} predicted {:.1}",
        s.d_r.h_v,
        p.to_params().h_v
    );
    println!(
        "C_He true {} predicted probability {:.2}",
        s.d_r.c_he, p.c_he_probability
    );
    Ok(())
}
