//! Trains the conditional VAE baseline for a few epochs.

use swellgan::domain::fit_stats;
use swellgan::embedding::ElementEmbeddings;
use swellgan::oracle::generate_dataset;
use swellgan::training::{prepare, train_vae, TrainConfig, Variant};

fn main() -> swellgan::Result<()> {
    let samples = generate_dataset(150, 2)?.samples;
    let stats = fit_stats(&samples)?;
    let prepared = prepare(&samples, &stats, &ElementEmbeddings::init(0))?;
    let cfg = TrainConfig {
        epochs: 5,
        lr: 1e-3,
        weight_decay: 0.0,
        variant: Variant::Vae,
        ..TrainConfig::desk()
    };
    let (vae, _, losses) = train_vae(&samples, &prepared, &cfg)?;
    for (i, l) in losses.iter().enumerate() {
        println!("epoch {} recon {:.3} kl {:.3}", i + 1, l.recon, l.kl);
    }
    let images = vae.sample(&prepared[..3], 7)?;
    println!("sampled {:?}", images.shape());
    Ok(())
}
