//! Trains the cavity-histogram encoder and reports held-out error per bin.

use swellgan::encoder::{per_bin_mae, train_encoder, EncoderConfig};
use swellgan::oracle::generate_dataset;

fn main() -> swellgan::Result<()> {
    let ds = generate_dataset(600, 11)?;
    let (train, held) = ds.samples.split_at(500);
    let cfg = EncoderConfig {
        epochs: 5,
        ..EncoderConfig::default()
    };
    let (enc, report) = train_encoder(train, &cfg)?;
    println!("epoch losses {:.3?}", report.epoch_losses);
    println!("held-out per-bin MAE {:.3?}", per_bin_mae(&enc, held)?);
    let s = &held[0];
    println!("truth    {:?}", s.h_v.counts);
    println!("estimate {:.2?}", enc.encode_one(&s.micrograph));
    Ok(())
}
