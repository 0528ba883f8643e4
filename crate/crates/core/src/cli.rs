//! Command-line entry point. [`run`] maps outcomes to exit codes: 0 on
//! success, 1 on invalid input, 2 on filesystem failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::domain::{fit_stats, pgm, Dataset, SampleRecord};
use crate::embedding::{
    export_embedding_projection, projection_csv, train_embedding, ElementEmbeddings, EmbedConfig,
};
use crate::encoder::{per_bin_mae, train_encoder, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::gan::Generator;
use crate::metrics::{
    inception_style_score, rmse_score, train_metric_classifier, ClassifierConfig, MetricClassifier,
};
use crate::nn;
use crate::oracle::{generate_dataset, generate_dataset_serial};
use crate::pipeline::{self, Bundles, GenerateRequest, PredictRequest};
use crate::predictor::{train_predictor, Predictor, PredictorConfig};
use crate::tensor::{BundleKind, ModelBundle, Rule, Tensor};
use crate::training::{
    discriminator_accuracy, prepare, sample_images, train_vae, GanTrainer, TrainConfig, Vae,
    Variant,
};

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "swellgan",
    version,
    about = "Irradiation-swelling micrograph generation and performance prediction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic oracle dataset.
    Synth(SynthArgs),
    /// Train the composition embedding.
    TrainEmbed(TrainEmbedArgs),
    /// Train the cavity-histogram encoder.
    TrainEncoder(TrainEncoderArgs),
    /// Train the conditional GAN (or one of its ablations).
    TrainGan(TrainGanArgs),
    /// Train the VAE baseline.
    TrainVae(TrainVaeArgs),
    /// Train the performance predictor.
    TrainPredictor(TrainPredictorArgs),
    /// Train the alloy classifier used by the inception-style score.
    TrainClassifier(TrainClassifierArgs),
    /// Score trained generators on a held-out dataset.
    Eval(EvalArgs),
    /// Generate micrographs with histogram and performance estimates.
    Generate(GenerateArgs),
    /// Predict performance parameters from a micrograph.
    Predict(PredictArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Export element embeddings and the 2-D alloy projection as CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Generate on one thread (output is identical either way).
    #[arg(long)]
    pub serial: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainEmbedArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "bundles")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainEncoderArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "bundles")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trailing samples kept out of training for evaluation.
    #[arg(long, default_value_t = 0)]
    pub held_out: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainGanArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding the trained embedding and encoder bundles.
    #[arg(long, default_value = "bundles")]
    pub bundles: PathBuf,
    #[arg(long, default_value = "bundles")]
    pub out: PathBuf,
    /// Base settings: `desk` or `paper`.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// full, no_prior, no_attention or pure_gan.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// sgd, rmsprop or adagrad.
    #[arg(long)]
    pub rule: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,
    /// Continue from a checkpoint bundle.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Trailing samples held out to measure discriminator accuracy.
    #[arg(long, default_value_t = 0)]
    pub held_out: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainVaeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "bundles")]
    pub bundles: PathBuf,
    #[arg(long, default_value = "bundles")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainPredictorArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "bundles")]
    pub bundles: PathBuf,
    #[arg(long, default_value = "bundles")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value = "adagrad")]
    pub rule: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub held_out: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainClassifierArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "bundles")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub held_out: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Held-out dataset whose conditions drive generation.
    #[arg(long)]
    pub data: PathBuf,
    /// Embedding, encoder, predictor and classifier bundles.
    #[arg(long, default_value = "bundles")]
    pub bundles: PathBuf,
    /// Per-variant generators live in `<runs>/<variant>/`.
    #[arg(long, default_value = "runs")]
    pub runs: PathBuf,
    #[arg(long = "variant", required = true)]
    pub variants: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct GenerateArgs {
    #[arg(long, default_value = "bundles")]
    pub bundles: PathBuf,
    /// Alloy name from the material table.
    #[arg(long)]
    pub material: String,
    #[arg(long, default_value_t = 10.0)]
    pub phi_fast: f64,
    #[arg(long, default_value_t = 10.0)]
    pub phi_thermal: f64,
    #[arg(long)]
    pub phi_flux: f64,
    #[arg(long)]
    pub t_irr: f64,
    #[arg(long, default_value_t = 300.0)]
    pub t_exp: f64,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "generated")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long, default_value = "bundles")]
    pub bundles: PathBuf,
    /// Binary PGM micrograph (32x32).
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub material: String,
    #[arg(long, default_value = "predicted")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "bundles")]
    pub bundles_dir: PathBuf,
    /// Where the resolved config is written.
    #[arg(long, default_value = "serve")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ExportArgs {
    #[arg(long, default_value = "bundles")]
    pub bundles: PathBuf,
    #[arg(long, default_value = "embeddings")]
    pub out: PathBuf,
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_config(out: &Path, name: &str, command: &Command) -> Result<()> {
    let json = serde_json::to_string_pretty(command)?;
    write(&out.join(format!("{name}.config.json")), json + "\n")
}

fn losses_csv(losses: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{},{l}\n", i + 1));
    }
    s
}

fn report_loss_log(path: &Path) {
    println!("loss log: {}", path.display());
}

/// Splits off the last `held_out` samples.
fn split(ds: &Dataset, held_out: usize) -> Result<(&[SampleRecord], &[SampleRecord])> {
    if held_out >= ds.samples.len() {
        return Err(Error::field(
            "held_out",
            format!(
                "{held_out} leaves no training samples out of {}",
                ds.samples.len()
            ),
        ));
    }
    Ok(ds.samples.split_at(ds.samples.len() - held_out))
}

fn load_embedding(dir: &Path) -> Result<ElementEmbeddings> {
    ElementEmbeddings::from_bundle(&ModelBundle::load(dir.join(pipeline::EMBEDDING_FILE))?)
}

fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Synth(a) => {
            write_config(&a.out, "synth", command)?;
            let ds = if a.serial {
                generate_dataset_serial(a.n, a.seed)?
            } else {
                generate_dataset(a.n, a.seed)?
            };
            ds.save(&a.out)?;
            println!("wrote {} samples to {}", ds.samples.len(), a.out.display());
        }
        Command::TrainEmbed(a) => {
            write_config(&a.out, "train-embed", command)?;
            let ds = Dataset::load(&a.data)?;
            let cfg = EmbedConfig {
                epochs: a.epochs,
                lr: a.lr,
                seed: a.seed,
                ..EmbedConfig::default()
            };
            let (emb, report) = train_embedding(&ds.samples, &cfg)?;
            emb.to_bundle().save(a.out.join(pipeline::EMBEDDING_FILE))?;
            let log = a.out.join("embed_loss.csv");
            write(&log, losses_csv(&report.epoch_losses))?;
            println!(
                "regression loss {:.4} -> {:.4}",
                report.initial_loss, report.final_loss
            );
            report_loss_log(&log);
        }
        Command::TrainEncoder(a) => {
            write_config(&a.out, "train-encoder", command)?;
            let ds = Dataset::load(&a.data)?;
            let (train, held) = split(&ds, a.held_out)?;
            let cfg = EncoderConfig {
                epochs: a.epochs,
                lr: a.lr,
                seed: a.seed,
                ..EncoderConfig::default()
            };
            let (enc, report) = train_encoder(train, &cfg)?;
            enc.to_bundle().save(a.out.join(pipeline::ENCODER_FILE))?;
            let log = a.out.join("encoder_loss.csv");
            write(&log, losses_csv(&report.epoch_losses))?;
            if !held.is_empty() {
                let mae = per_bin_mae(&enc, held)?;
                println!("held-out per-bin MAE {mae:.3?}");
            }
            report_loss_log(&log);
        }
        Command::TrainGan(a) => train_gan_command(a, command)?,
        Command::TrainVae(a) => {
            write_config(&a.out, "train-vae", command)?;
            let ds = Dataset::load(&a.data)?;
            let emb = load_embedding(&a.bundles)?;
            let stats = fit_stats(&ds.samples)?;
            let prepared = prepare(&ds.samples, &stats, &emb)?;
            let cfg = TrainConfig {
                epochs: a.epochs,
                batch_size: a.batch_size,
                lr: a.lr,
                weight_decay: 0.0,
                variant: Variant::Vae,
                seed: a.seed,
                rule: Rule::RmsProp,
                ..TrainConfig::desk()
            };
            let (vae, log, _) = train_vae(&ds.samples, &prepared, &cfg)?;
            let mut b = vae.to_bundle(&stats);
            if let Some(v) = &ds.version {
                b.set_meta("dataset_version", v.clone());
            }
            b.save(a.out.join(pipeline::VAE_FILE))?;
            let path = a.out.join("vae_loss.csv");
            // columns: epoch, reconstruction, KL
            let csv =
                log.rows
                    .iter()
                    .fold(String::from("epoch,recon,kl,wall_seconds\n"), |mut s, r| {
                        s.push_str(&format!(
                            "{},{},{},{:.3}\n",
                            r.epoch, r.l_d, r.l_g, r.wall_seconds
                        ));
                        s
                    });
            write(&path, csv)?;
            report_loss_log(&path);
        }
        Command::TrainPredictor(a) => {
            write_config(&a.out, "train-predictor", command)?;
            let ds = Dataset::load(&a.data)?;
            let (train, held) = split(&ds, a.held_out)?;
            let emb = load_embedding(&a.bundles)?;
            let cfg = PredictorConfig {
                epochs: a.epochs,
                lr: a.lr,
                seed: a.seed,
                rule: a.rule.parse()?,
                ..PredictorConfig::default()
            };
            let eval = if held.is_empty() { train } else { held };
            let (model, report) = train_predictor(train, eval, &emb, &cfg)?;
            model
                .to_bundle()
                .save(a.out.join(pipeline::PREDICTOR_FILE))?;
            let log = a.out.join("predictor_loss.csv");
            write(&log, losses_csv(&report.epoch_losses))?;
            write(
                &a.out.join("predictor_report.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            println!(
                "normalized RMSE {:.4} (constant-mean {:.4}), C_He accuracy {:.3}",
                report.rmse, report.baseline_rmse, report.c_he_accuracy
            );
            report_loss_log(&log);
        }
        Command::TrainClassifier(a) => {
            write_config(&a.out, "train-classifier", command)?;
            let ds = Dataset::load(&a.data)?;
            let (train, held) = split(&ds, a.held_out)?;
            let cfg = ClassifierConfig {
                epochs: a.epochs,
                lr: a.lr,
                seed: a.seed,
                ..ClassifierConfig::default()
            };
            let (model, report) = train_metric_classifier(train, held, &cfg)?;
            model
                .to_bundle()
                .save(a.out.join(pipeline::CLASSIFIER_FILE))?;
            let log = a.out.join("classifier_loss.csv");
            write(&log, losses_csv(&report.epoch_losses))?;
            if !held.is_empty() {
                println!("held-out accuracy {:.3}", report.held_out_accuracy);
            }
            report_loss_log(&log);
        }
        Command::Eval(a) => eval_command(a, command)?,
        Command::Generate(a) => {
            write_config(&a.out, "generate", command)?;
            let req = GenerateRequest {
                alloy_name: Some(a.material.clone()),
                d_c: [
                    ("phi_fast", a.phi_fast),
                    ("phi_thermal", a.phi_thermal),
                    ("phi_flux", a.phi_flux),
                    ("T_irr", a.t_irr),
                    ("T_exp", a.t_exp),
                ]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
                n: a.n,
                seed: Some(a.seed),
                ..GenerateRequest::default()
            };
            let resolved = req.resolve().map_err(field_errors)?;
            let bundles = Bundles::load(&a.bundles)?;
            let resp = bundles.generate(&resolved, a.seed)?;
            let files = pipeline::write_generated(&a.out, &resp)?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Predict(a) => {
            write_config(&a.out, "predict", command)?;
            let bytes = std::fs::read(&a.image).map_err(|e| Error::io(&a.image, e))?;
            // validate the image before touching bundles
            pgm::decode(&bytes)?;
            let bundles = Bundles::load(&a.bundles)?;
            let req = PredictRequest {
                image: base64::Engine::encode(&base64::engine::general_purpose::STANDARD, &bytes),
                alloy_name: a.material.clone(),
            };
            let resp = bundles.predict(&req).map_err(field_errors)?;
            let json = serde_json::to_string_pretty(&resp)? + "\n";
            write(&a.out.join("predict.json"), &json)?;
            print!("{json}");
        }
        Command::Serve(a) => {
            write_config(&a.out, "serve", command)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
            rt.block_on(crate::service::serve(a.port, a.bundles_dir.clone()))?;
        }
        Command::ExportEmbeddings(a) => {
            write_config(&a.out, "export-embeddings", command)?;
            let emb = load_embedding(&a.bundles)?;
            let mut rows = String::from("element");
            for j in 0..crate::embedding::D_C {
                rows.push_str(&format!(",e{j}"));
            }
            rows.push('\n');
            for (i, e) in crate::domain::ELEMENTS.iter().enumerate() {
                rows.push_str(e);
                for v in emb.row(i) {
                    rows.push_str(&format!(",{v}"));
                }
                rows.push('\n');
            }
            write(&a.out.join("element_embeddings.csv"), rows)?;
            let (points, var) = export_embedding_projection(&emb);
            write(&a.out.join("alloy_projection.csv"), projection_csv(&points))?;
            println!(
                "explained variance of the two axes: {:.4}, {:.4}",
                var[0], var[1]
            );
        }
    }
    Ok(())
}

fn field_errors(errs: Vec<pipeline::FieldError>) -> Error {
    match errs.as_slice() {
        [one] => Error::field(one.field.clone(), one.message.clone()),
        _ => Error::invalid(
            errs.iter()
                .map(|e| format!("{}: {}", e.field, e.message))
                .collect::<Vec<_>>()
                .join("; "),
        ),
    }
}

/// Preset plus explicit overrides.
pub fn resolve_train_config(a: &TrainGanArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::preset(&a.preset)?;
    if let Some(v) = &a.variant {
        cfg.variant = v.parse()?;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = &a.rule {
        cfg.rule = v.parse()?;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.checkpoint_interval {
        cfg.checkpoint_interval = v;
    }
    if cfg.variant == Variant::Vae {
        return Err(Error::field("variant", "vae is trained with train-vae"));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_gan_command(a: &TrainGanArgs, command: &Command) -> Result<()> {
    write_config(&a.out, "train-gan", command)?;
    let cfg = resolve_train_config(a)?;
    write(&a.out.join("train-gan.resolved.json"), cfg.to_json() + "\n")?;
    let ds = Dataset::load(&a.data)?;
    let (train, held) = split(&ds, a.held_out)?;
    let emb = load_embedding(&a.bundles)?;
    let enc = Encoder::from_bundle(&ModelBundle::load(a.bundles.join(pipeline::ENCODER_FILE))?)?;
    let stats = fit_stats(train)?;
    let mut trainer = GanTrainer::new(train, &emb, &enc, stats, cfg, ds.version.clone())?;
    if let Some(path) = &a.resume {
        trainer.resume(&ModelBundle::load(path)?)?;
        println!("resumed at epoch {}", trainer.epoch);
    }
    trainer.run(Some(&a.out))?;
    trainer
        .generator_bundle()
        .save(a.out.join(pipeline::GENERATOR_FILE))?;
    trainer
        .discriminator_bundle()
        .save(a.out.join(pipeline::DISCRIMINATOR_FILE))?;
    let log = a.out.join("gan_loss.csv");
    write(&log, trainer.log.to_csv())?;
    for w in &trainer.log.warnings {
        println!("warning: {w}");
    }
    if !held.is_empty() {
        let hp = prepare(held, &trainer.stats, &emb)?;
        let acc = discriminator_accuracy(
            &trainer.gen,
            &trainer.disc,
            held,
            &hp,
            trainer.cfg.variant,
            trainer.cfg.seed,
        )?;
        println!("held-out discriminator accuracy {acc:.3}");
    }
    report_loss_log(&log);
    Ok(())
}

/// One row of the evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub variant: String,
    pub score: f64,
    pub stderr: f64,
    /// RMSE of predicted vs. recorded D_r, per field.
    pub rmse: Vec<f64>,
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("variant,score,stderr");
    for f in crate::domain::PerformanceParams::FIELDS {
        s.push_str(&format!(",rmse_{f}"));
    }
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{}", r.variant, r.score, r.stderr));
        for v in &r.rmse {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

fn eval_command(a: &EvalArgs, command: &Command) -> Result<()> {
    write_config(&a.out, "eval", command)?;
    let variants: Vec<Variant> = a
        .variants
        .iter()
        .map(|v| v.parse())
        .collect::<Result<_>>()?;
    let ds = Dataset::load(&a.data)?;
    if ds.samples.len() < 2 {
        return Err(Error::invalid(
            "evaluation needs at least two held-out samples",
        ));
    }
    let emb = load_embedding(&a.bundles)?;
    let classifier = MetricClassifier::from_bundle(&ModelBundle::load(
        a.bundles.join(pipeline::CLASSIFIER_FILE),
    )?)?;
    let predictor = Predictor::from_bundle(&ModelBundle::load(
        a.bundles.join(pipeline::PREDICTOR_FILE),
    )?)?;
    let c_m = nn::row_batch(
        ds.samples
            .iter()
            .map(|s| emb.embed(&s.composition.fractions))
            .collect::<Result<Vec<_>>>()?,
    );
    let reference: Vec<[f64; 12]> = ds.samples.iter().map(|s| s.d_r.values()).collect();
    let mut rows = Vec::new();
    for v in variants {
        let dir = a.runs.join(v.as_str());
        let images = generate_for_eval(&dir, v, &ds.samples, &emb, a.seed)?;
        let (score, stderr) = inception_style_score(&images, &classifier)?;
        let pred: Vec<[f64; 12]> = predictor
            .predict(&images, &c_m)?
            .iter()
            .map(|p| p.to_params().values())
            .collect();
        rows.push(EvalRow {
            variant: v.as_str().to_string(),
            score,
            stderr,
            rmse: rmse_score(&pred, &reference)?,
        });
    }
    let path = a.out.join("eval_report.csv");
    write(&path, eval_csv(&rows))?;
    println!("report: {}", path.display());
    Ok(())
}

fn generate_for_eval(
    dir: &Path,
    v: Variant,
    samples: &[SampleRecord],
    emb: &ElementEmbeddings,
    seed: u64,
) -> Result<Tensor> {
    let quantize = |t: Tensor| {
        nn::image_batch(
            nn::to_micrographs(&t)
                .iter()
                .map(|m| m.quantized())
                .collect::<Vec<_>>()
                .iter(),
        )
    };
    if v == Variant::Vae {
        let b = ModelBundle::load(dir.join(pipeline::VAE_FILE))?;
        let stats = crate::domain::NormStats::from_json(b.meta("norm_stats").unwrap_or_default())?;
        let vae = Vae::from_bundle(&b)?;
        return Ok(quantize(vae.sample(&prepare(samples, &stats, emb)?, seed)?));
    }
    let b = ModelBundle::load(dir.join(pipeline::GENERATOR_FILE))?;
    b.expect_kind(BundleKind::Generator)?;
    let stats = crate::domain::NormStats::from_json(b.meta("norm_stats").unwrap_or_default())?;
    let mut gen = Generator::init(0);
    gen.import(&b)?;
    Ok(quantize(sample_images(
        &gen,
        &prepare(samples, &stats, emb)?,
        v,
        seed,
    )?))
}
