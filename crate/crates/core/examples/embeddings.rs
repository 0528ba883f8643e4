//! Trains the composition embedding and prints the 2-D alloy projection.

use swellgan::embedding::{
    export_embedding_projection, projection_csv, train_embedding, EmbedConfig,
};
use swellgan::oracle::generate_dataset;

fn main() -> swellgan::Result<()> {
    let ds = generate_dataset(280, 1)?;
    let cfg = EmbedConfig {
        epochs: 100,
        ..EmbedConfig::default()
    };
    let (emb, report) = train_embedding(&ds.samples, &cfg)?;
    println!(
        "regression loss {:.4} -> {:.4}",
        report.initial_loss, report.final_loss
    );
    println!("Zr4 feature vector: {:.3?}", emb.embed_alloy("Zr4")?);
    let (points, var) = export_embedding_projection(&emb);
    println!("axis variances {var:.4?}");
    print!("{}", projection_csv(&points));
    Ok(())
}
