//! Trains the alloy classifier and scores real images with the
//! inception-style score, then computes per-field RMSE.

use swellgan::metrics::{
    inception_style_score, rmse_score, train_metric_classifier, ClassifierConfig,
};
use swellgan::nn;
use swellgan::oracle::generate_dataset;

fn main() -> swellgan::Result<()> {
    let all = generate_dataset(420, 5)?.samples;
    let (train, held) = all.split_at(350);
    let (cls, report) = train_metric_classifier(
        train,
        held,
        &ClassifierConfig {
            epochs: 3,
            ..ClassifierConfig::default()
        },
    )?;
    println!(
        "classifier held-out accuracy {:.3}",
        report.held_out_accuracy
    );
    let images = nn::image_batch(held.iter().map(|s| &s.micrograph));
    let (score, stderr) = inception_style_score(&images, &cls)?;
    println!("inception-style score of real images {score:.3} ± {stderr:.3}");

    let truth: Vec<[f64; 12]> = held.iter().map(|s| s.d_r.values()).collect();
    let shifted: Vec<[f64; 12]> = truth.iter().map(|r| r.map(|v| v + 1.0)).collect();
    println!("rmse of a +1 shift: {:?}", rmse_score(&shifted, &truth)?);
    Ok(())
}
