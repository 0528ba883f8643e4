//! Trains a throwaway bundle set through the CLI, then generates
//! micrographs for a material and runs the predictor on one of them.

use swellgan::cli::run;
use swellgan::pipeline::{Bundles, GenerateRequest, PredictRequest};

fn main() -> swellgan::Result<()> {
    let dir = std::env::temp_dir().join("swellgan-pipeline-example");
    let (data, bundles) = (dir.join("data"), dir.join("bundles"));
    let (d, b) = (data.to_str().unwrap(), bundles.to_str().unwrap());
    for args in [
        vec!["synth", "--n", "120", "--seed", "1", "--out", d],
        vec!["train-embed", "--data", d, "--out", b, "--epochs", "20"],
        vec!["train-encoder", "--data", d, "--out", b, "--epochs", "2"],
        vec![
            "train-gan",
            "--data",
            d,
            "--bundles",
            b,
            "--out",
            b,
            "--epochs",
            "2",
        ],
        vec![
            "train-predictor",
            "--data",
            d,
            "--bundles",
            b,
            "--out",
            b,
            "--epochs",
            "2",
        ],
    ] {
        assert_eq!(run(std::iter::once("swellgan").chain(args)), 0);
    }

    let models = Bundles::load(&bundles)?;
    let req: GenerateRequest = serde_json::from_str(
        r#"{"alloy_name": "Zr4", "n": 2, "seed": 1,
            "d_c": {"phi_fast": 3, "phi_thermal": 1, "phi_flux": 12, "T_irr": 800, "T_exp": 300}}"#,
    )?;
    let resolved = req
        .resolve()
        .map_err(|e| swellgan::Error::invalid(format!("{e:?}")))?;
    let resp = models.generate(&resolved, 1)?;
    for s in &resp.samples {
        println!(
            "seed {}: H_v estimate {:.2?}, C_He p={:.2}",
            s.seed_used, s.h_v_estimate, s.c_he_probability
        );
    }
    let pred = models
        .predict(&PredictRequest {
            image: resp.samples[0].image.clone(),
            alloy_name: "Zr4".into(),
        })
        .map_err(|e| swellgan::Error::invalid(format!("{e:?}")))?;
    println!("{}", serde_json::to_string_pretty(&pred)?);
    Ok(())
}
