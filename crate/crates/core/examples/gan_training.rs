//! Short adversarial run of one variant with a checkpoint, then a resume.
//!
//! cargo run --release --example gan_training -- no_attention

use swellgan::domain::fit_stats;
use swellgan::embedding::ElementEmbeddings;
use swellgan::encoder::{train_encoder, EncoderConfig};
use swellgan::oracle::generate_dataset;
use swellgan::tensor::ModelBundle;
use swellgan::training::{GanTrainer, TrainConfig, Variant};

fn main() -> swellgan::Result<()> {
    let variant: Variant = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "full".into())
        .parse()?;
    let samples = generate_dataset(200, 3)?.samples;
    let stats = fit_stats(&samples)?;
    let emb = ElementEmbeddings::init(0);
    let (enc, _) = train_encoder(
        &samples,
        &EncoderConfig {
            epochs: 3,
            ..EncoderConfig::default()
        },
    )?;
    let dir = std::env::temp_dir().join("swellgan-gan-example");

    let cfg = TrainConfig {
        epochs: 4,
        variant,
        checkpoint_interval: 2,
        ..TrainConfig::desk()
    };
    let mut trainer = GanTrainer::new(&samples, &emb, &enc, stats.clone(), cfg.clone(), None)?;
    trainer.run(Some(&dir))?;
    print!("{}", trainer.log.to_csv());

    let ckpt = ModelBundle::load(dir.join("gan-checkpoint.bundle"))?;
    let longer = TrainConfig { epochs: 6, ..cfg };
    let mut resumed = GanTrainer::new(&samples, &emb, &enc, stats, longer, None)?;
    resumed.resume(&ckpt)?;
    resumed.run(None)?;
    println!("resumed from epoch 4 to {}", resumed.epoch);
    if let Some((epoch, l_hv)) = resumed.log.best_l_hv() {
        println!("best L_Hv {l_hv:.3} at epoch {epoch}");
    }
    Ok(())
}
