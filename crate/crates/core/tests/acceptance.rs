//! Acceptance run: one PASS/FAIL line per primary criterion.
//!
//! Runs every criterion at full scale (the GAN criterion alone takes about
//! an hour on one core). The process exits 0 after reporting; set
//! `ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::gradients::{model_suite, operator_suite, EPS, PROBES, TOLERANCE};
use common::{cli, dir_hashes, fixture, s};
use swellgan::domain::{fit_stats, SampleRecord};
use swellgan::embedding::{train_embedding, ElementEmbeddings, EmbedConfig, D_C};
use swellgan::encoder::{per_bin_mae, train_encoder, Encoder, EncoderConfig};
use swellgan::gan::{standard_normal, Discriminator, Generator, LATENT};
use swellgan::metrics::{
    inception_style_score, rmse_score, score_from_probabilities, train_metric_classifier,
    ClassifierConfig, CLASSES,
};
use swellgan::nn;
use swellgan::oracle::generate_dataset;
use swellgan::pipeline::GenerateResponse;
use swellgan::predictor::{train_predictor, PredictorConfig};
use swellgan::tensor::{Graph, Tensor};
use swellgan::training::{
    discriminator_accuracy, prepare, sample_images, step_graph, GanTrainer, Prepared, TrainConfig,
    Variant,
};

type Verdict = (bool, String);

fn criterion(name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let tag = if pass { "PASS" } else { "FAIL" };
    println!(
        "{tag} {name}: {detail} [{:.1}s]",
        start.elapsed().as_secs_f64()
    );
    pass
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let mut all = operator_suite();
    all.extend(model_suite());
    let secs = start.elapsed().as_secs_f64();
    let failing: Vec<String> = all
        .iter()
        .filter(|(_, e)| !(*e < TOLERANCE))
        .map(|(n, e)| format!("{n}={e:.2e}"))
        .collect();
    let (worst_name, worst) = all.iter().fold(("", 0.0), |acc, &(n, e)| if e > acc.1 { (n, e) } else { acc });
    (
        failing.is_empty() && secs < 120.0,
        format!(
            "{} checks, eps {EPS:e}, <= {PROBES} probes, max rel err {worst:.2e} at {worst_name} (< {TOLERANCE:e}), {secs:.1}s (< 120s){}",
            all.len(),
            if failing.is_empty() { String::new() } else { format!(", failing: {}", failing.join(" ")) }
        ),
    )
}

fn dataset_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let runs = [("a", false), ("b", false), ("serial", true)];
    let mut slowest: f64 = 0.0;
    let mut hashes = Vec::new();
    for (name, serial) in runs {
        let out = dir.path().join(name);
        let mut args = vec!["synth", "--n", "1000", "--seed", "42", "--out", s(&out)];
        if serial {
            args.push("--serial");
        }
        let t = Instant::now();
        assert_eq!(cli(&args), 0);
        slowest = slowest.max(t.elapsed().as_secs_f64());
        let h: Vec<_> = dir_hashes(&out)
            .into_iter()
            .filter(|(n, _)| !n.ends_with(".config.json"))
            .collect();
        hashes.push(h);
    }
    let files = hashes[0].len();
    let repeat = hashes[0] == hashes[1];
    let serial = hashes[0] == hashes[2];
    (
        repeat && serial && files == 1002 && slowest < 60.0,
        format!("{files} files; rerun identical: {repeat}; serial == parallel: {serial}; slowest run {slowest:.1}s (< 60s)"),
    )
}

fn prior_correctness() -> Verdict {
    let mut exact = true;
    let mut delta_lo: f64 = f64::INFINITY;
    let mut delta_hi: f64 = 0.0;
    for seed in 0..5 {
        let mut gen = Generator::init(seed);
        let (mu, delta) = gen.prior_stats(&[0.0; D_C]);
        exact &= mu.iter().all(|&m| m == 0.0) && delta.iter().all(|&d| d == 1.0);
        // stretch the prior weights so tanh saturates and delta spans its range
        for p in gen
            .params
            .iter_mut()
            .filter(|p| p.name.starts_with("prior."))
        {
            p.value.data_mut().iter_mut().for_each(|v| *v *= 40.0);
        }
        for k in 0..20 {
            let c = standard_normal(1, 100 + k).data()[..D_C]
                .try_into()
                .unwrap();
            let (_, d) = gen.prior_stats(&c);
            for v in d {
                delta_lo = delta_lo.min(v);
                delta_hi = delta_hi.max(v);
            }
        }
    }
    let bounded = delta_lo >= (-1.0f64).exp() && delta_hi <= 1.0f64.exp();

    // sampling statistics against the closed form
    let mut gen = Generator::init(9);
    for p in gen
        .params
        .iter_mut()
        .filter(|p| p.name.starts_with("prior."))
    {
        p.value.data_mut().iter_mut().for_each(|v| *v *= 5.0);
    }
    let c: [f64; D_C] = standard_normal(1, 7).data()[..D_C].try_into().unwrap();
    let (mu, delta) = gen.prior_stats(&c);
    let n = 100_000;
    let z = gen.sample_prior(&c, n, 3).unwrap();
    let mut worst_mean: f64 = 0.0;
    let mut worst_std: f64 = 0.0;
    for j in 0..LATENT {
        let col: Vec<f64> = z.data().chunks(LATENT).map(|r| r[j]).collect();
        let m = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        worst_mean = worst_mean.max((m - mu[j]).abs() / delta[j]);
        worst_std = worst_std.max((sd / delta[j] - 1.0).abs());
    }
    (
        exact && bounded && worst_mean <= 0.02 && worst_std <= 0.02,
        format!(
            "C_m=0 exact N(0,I): {exact}; delta range [{delta_lo:.4}, {delta_hi:.4}] within [e^-1, e]: {bounded}; \
             1e5 draws: max |mean-mu|/delta {worst_mean:.4}, max |std/delta-1| {worst_std:.4} (<= 0.02)"
        ),
    )
}

fn encoder_recovery() -> (Verdict, Encoder) {
    let ds = generate_dataset(4500, 11).unwrap();
    let (train, held) = ds.samples.split_at(4000);
    let t = Instant::now();
    let (enc, _) = train_encoder(train, &EncoderConfig::default()).unwrap();
    let mae = per_bin_mae(&enc, held).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let worst = mae.iter().cloned().fold(0.0, f64::max);
    (
        (
            worst <= 1.0 && secs <= 900.0,
            format!("4000 train / 500 held-out, per-bin MAE {mae:.3?}, max {worst:.3} (<= 1.0), train {secs:.0}s (<= 900s)"),
        ),
        enc,
    )
}

fn predictor_recovery() -> Verdict {
    let all = generate_dataset(4500, 7).unwrap().samples;
    let (train, held) = all.split_at(4000);
    let t = Instant::now();
    let (emb, _) = train_embedding(
        train,
        &EmbedConfig {
            epochs: 50,
            ..EmbedConfig::default()
        },
    )
    .unwrap();
    let (_, r) = train_predictor(train, held, &emb, &PredictorConfig::default()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let gain = 1.0 - r.rmse / r.baseline_rmse;
    (
        r.rmse <= 0.2 && gain >= 0.35 && r.c_he_accuracy >= 0.9 && secs <= 1200.0,
        format!(
            "normalized RMSE {:.4} (<= 0.2), constant-mean {:.4}, improvement {:.1}% (>= 35%), C_He accuracy {:.3} (>= 0.9), {secs:.0}s (<= 1200s)",
            r.rmse,
            r.baseline_rmse,
            100.0 * gain,
            r.c_he_accuracy
        ),
    )
}

/// Scalar BCE computed from probabilities, independent of the graph.
fn bce(p: &[f64], target_real: bool) -> f64 {
    p.iter()
        .map(|&q| {
            if target_real {
                -q.ln()
            } else {
                -(1.0 - q).ln()
            }
        })
        .sum::<f64>()
        / p.len() as f64
}

fn loss_identities() -> Verdict {
    let samples = generate_dataset(24, 5).unwrap().samples;
    let stats = fit_stats(&samples).unwrap();
    let emb = ElementEmbeddings::init(1);
    let enc = Encoder::init(2);
    let prepared = prepare(&samples, &stats, &emb).unwrap();
    let mut worst_zero: f64 = 0.0;
    let mut worst_split: f64 = 0.0;
    let mut worst_hv: f64 = 0.0;
    for (k, chunk) in prepared.chunks(6).enumerate() {
        let gen = Generator::init(10 + k as u64);
        let disc = Discriminator::init(20 + k as u64);
        let batch: Vec<&Prepared> = chunk.iter().collect();
        let recs: Vec<&SampleRecord> = samples[k * 6..k * 6 + 6].iter().collect();
        let real = nn::image_batch(recs.iter().map(|s| &s.micrograph));
        let h = nn::row_batch(chunk.iter().map(|p| p.h_norm));
        let targets: Vec<[f64; 8]> = chunk.iter().map(|p| p.h_raw).collect();
        for lambda in [0.0, 0.3, 1.0, 2.5] {
            let mut g = Graph::new();
            let eps = standard_normal(batch.len(), 99 + k as u64);
            let sg = step_graph(
                &mut g,
                &gen,
                &disc,
                &enc,
                &batch,
                real.clone(),
                eps,
                Variant::Full,
                lambda,
            )
            .unwrap();
            let fake: Tensor = g.value(sg.fake).clone();
            let p_real = disc.discriminate(&real, Some(&h)).unwrap();
            let p_fake = disc.discriminate(&fake, Some(&h)).unwrap();
            let l_d0 = bce(&p_real, true) + bce(&p_fake, false);
            let l_g0 = bce(&p_fake, true);
            let est = enc.encode(&fake).unwrap();
            let l_hv: f64 = est
                .iter()
                .zip(&targets)
                .map(|(e, t)| e.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .sum::<f64>()
                / batch.len() as f64;
            let l = sg.losses;
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
            worst_hv = worst_hv.max(rel(l.l_hv, l_hv));
            if lambda == 0.0 {
                worst_zero = worst_zero.max(rel(l.l_d, l_d0)).max(rel(l.l_g, l_g0));
                worst_zero =
                    worst_zero.max(if l.l_d == l.d_adversarial && l.l_g == l.g_adversarial {
                        0.0
                    } else {
                        1.0
                    });
            } else {
                worst_split = worst_split
                    .max(rel(l.d_cavity + l.g_cavity, lambda * l_hv))
                    .max(rel(l.l_d, l_d0 + 0.5 * lambda * l_hv))
                    .max(rel(l.l_g, l_g0 + 0.5 * lambda * l_hv));
            }
        }
    }
    (
        worst_zero < 1e-9 && worst_split < 1e-9 && worst_hv < 1e-9,
        format!(
            "lambda=0 vs independent BCE: {worst_zero:.1e}; (lambda/2) halves vs lambda*L_Hv and full losses: {worst_split:.1e}; \
             L_Hv vs encoder recompute: {worst_hv:.1e} (all < 1e-9)"
        ),
    )
}

fn metric_analytics() -> Verdict {
    let uniform = vec![vec![1.0 / CLASSES as f64; CLASSES]; 50];
    let s_uniform = score_from_probabilities(&uniform).unwrap();
    let one_hot: Vec<Vec<f64>> = (0..CLASSES * 5)
        .map(|i| {
            (0..CLASSES)
                .map(|k| if k == i % CLASSES { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let s_hot = score_from_probabilities(&one_hot).unwrap();
    // hand-computed: field 0 errors (3, 4) → sqrt(12.5); field 1 errors (0, 0) → 0; field 2 errors (-1, 1) → 1
    let pred = vec![vec![4.0, 2.0, 0.0], vec![5.0, -1.0, 3.0]];
    let reference = vec![vec![1.0, 2.0, 1.0], vec![1.0, -1.0, 2.0]];
    let r = rmse_score(&pred, &reference).unwrap();
    let rmse_ok = r == vec![12.5f64.sqrt(), 0.0, 1.0];
    let d1 = (s_uniform - 1.0).abs();
    let d14 = (s_hot - 14.0).abs();
    (
        d1 <= 1e-9 && d14 <= 1e-6 && rmse_ok,
        format!("uniform score {s_uniform} (|.-1| {d1:.1e} <= 1e-9); one-hot coverage {s_hot} (|.-14| {d14:.1e} <= 1e-6); rmse exact: {rmse_ok}"),
    )
}

fn end_to_end_cli() -> Verdict {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for name in ["g1", "g2"] {
        let out = dir.path().join(name);
        let code = cli(&[
            "generate",
            "--bundles",
            s(&f.bundles),
            "--material",
            "Zr4",
            "--phi-flux",
            "12",
            "--t-irr",
            "800",
            "--n",
            "4",
            "--seed",
            "1",
            "--out",
            s(&out),
        ]);
        assert_eq!(code, 0);
        outs.push(
            dir_hashes(&out)
                .into_iter()
                .filter(|(n, _)| !n.ends_with(".config.json"))
                .collect::<Vec<_>>(),
        );
    }
    let pgms = outs[0].iter().filter(|(n, _)| n.ends_with(".pgm")).count();
    let sidecar: GenerateResponse = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("g1/generate.json")).unwrap(),
    )
    .unwrap();
    let sidecar_ok =
        sidecar.samples.len() == 4 && sidecar.samples.iter().all(|x| x.h_v_estimate.len() == 8);
    let deterministic = outs[0] == outs[1];

    let (full, part) = (dir.path().join("full"), dir.path().join("part"));
    let base = [
        "train-gan",
        "--data",
        s(&f.data),
        "--bundles",
        s(&f.bundles),
        "--seed",
        "4",
        "--checkpoint-interval",
        "2",
    ];
    let run = |extra: &[&str]| {
        let mut a = base.to_vec();
        a.extend_from_slice(extra);
        assert_eq!(cli(&a), 0);
    };
    run(&["--out", s(&full), "--epochs", "4"]);
    run(&["--out", s(&part), "--epochs", "2"]);
    let ckpt = part.join("gan-checkpoint.bundle");
    run(&["--out", s(&part), "--epochs", "4", "--resume", s(&ckpt)]);
    let same_params = ["generator.bundle", "discriminator.bundle"]
        .iter()
        .all(|n| std::fs::read(full.join(n)).unwrap() == std::fs::read(part.join(n)).unwrap());
    let strip = |p: std::path::PathBuf| -> Vec<String> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    let same_log = strip(full.join("gan_loss.csv")) == strip(part.join("gan_loss.csv"));
    (
        pgms == 4 && sidecar_ok && deterministic && same_params && same_log,
        format!(
            "generate: {pgms} PGMs + sidecar ok: {sidecar_ok}, byte-identical rerun: {deterministic}; \
             resume at epoch 2 -> 4: parameters identical {same_params}, loss log identical {same_log}"
        ),
    )
}

struct SeedResult {
    seed: u64,
    epoch1_l_hv: f64,
    best_l_hv: f64,
    d_accuracy: f64,
    is_full: (f64, f64),
    is_pure: (f64, f64),
}

fn gan_desk_run(enc: &Encoder) -> Verdict {
    let start = Instant::now();
    let all = generate_dataset(2500, 42).unwrap().samples;
    let (train, held) = all.split_at(2000);
    let stats = fit_stats(train).unwrap();
    let (emb, _) = train_embedding(
        train,
        &EmbedConfig {
            epochs: 100,
            ..EmbedConfig::default()
        },
    )
    .unwrap();
    let (cls, rep) = train_metric_classifier(train, held, &ClassifierConfig::default()).unwrap();
    let real = nn::image_batch(held.iter().map(|s| &s.micrograph));
    let (is_real, _) = inception_style_score(&real, &cls).unwrap();
    let hp = prepare(held, &stats, &emb).unwrap();
    let quantized = |t: Tensor| {
        let ms: Vec<_> = nn::to_micrographs(&t)
            .iter()
            .map(|m| m.quantized())
            .collect();
        nn::image_batch(ms.iter())
    };
    let mut results = Vec::new();
    for seed in 0..3 {
        let mut scores = Vec::new();
        let mut full_stats = (0.0, 0.0, 0.0);
        for v in [Variant::Full, Variant::PureGan] {
            let cfg = TrainConfig {
                epochs: 200,
                batch_size: 10,
                variant: v,
                seed,
                ..TrainConfig::desk()
            };
            let mut t = GanTrainer::new(train, &emb, enc, stats.clone(), cfg, None).unwrap();
            t.run(None).unwrap();
            let imgs = quantized(sample_images(&t.gen, &hp, v, 1000 + seed).unwrap());
            scores.push(inception_style_score(&imgs, &cls).unwrap());
            if v == Variant::Full {
                let acc =
                    discriminator_accuracy(&t.gen, &t.disc, held, &hp, v, 2000 + seed).unwrap();
                full_stats = (t.log.rows[0].l_hv, t.log.best_l_hv().unwrap().1, acc);
            }
        }
        let r = SeedResult {
            seed,
            epoch1_l_hv: full_stats.0,
            best_l_hv: full_stats.1,
            d_accuracy: full_stats.2,
            is_full: scores[0],
            is_pure: scores[1],
        };
        println!(
            "  seed {}: L_Hv epoch1 {:.2} best {:.2}; D held-out acc {:.3}; IS full {:.3}±{:.3} pure_gan {:.3}±{:.3}",
            r.seed, r.epoch1_l_hv, r.best_l_hv, r.d_accuracy, r.is_full.0, r.is_full.1, r.is_pure.0, r.is_pure.1
        );
        results.push(r);
    }
    let secs = start.elapsed().as_secs_f64();
    let a = results.iter().all(|r| r.best_l_hv <= 0.5 * r.epoch1_l_hv);
    let b = results
        .iter()
        .all(|r| (0.45..=0.95).contains(&r.d_accuracy));
    let wins = results
        .iter()
        .filter(|r| r.is_full.0 >= r.is_pure.0)
        .count();
    let c = wins >= 2;
    (
        a && b && c && secs <= 7200.0,
        format!(
            "(a) best L_Hv <= 50% of epoch 1 in every seed: {a}; (b) final D held-out accuracy in [0.45, 0.95]: {b}; \
             (c) IS full >= pure_gan in {wins}/3 seeds (need 2): {c}; classifier held-out accuracy {:.3} (chance {:.3}), \
             real-image IS {is_real:.3}; {secs:.0}s (<= 7200s)",
            rep.held_out_accuracy,
            1.0 / CLASSES as f64
        ),
    )
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |name: &str| filter.as_deref().is_none_or(|f| name.contains(f));
    let mut results = Vec::new();
    let mut run = |name: &str, f: &mut dyn FnMut() -> Verdict| {
        if wanted(name) {
            results.push(criterion(name, f));
        }
    };
    run("gradient-suite", &mut gradient_suite);
    run("dataset-determinism", &mut dataset_determinism);
    run("prior-correctness", &mut prior_correctness);
    let mut encoder = None;
    run("encoder-oracle-recovery", &mut || {
        let (v, e) = encoder_recovery();
        encoder = Some(e);
        v
    });
    run("predictor-oracle-recovery", &mut predictor_recovery);
    run("gan-desk-run", &mut || {
        let enc = encoder.take().unwrap_or_else(|| {
            train_encoder(
                &generate_dataset(4000, 11).unwrap().samples,
                &EncoderConfig::default(),
            )
            .unwrap()
            .0
        });
        gan_desk_run(&enc)
    });
    run("loss-identities", &mut loss_identities);
    run("metric-analytics", &mut metric_analytics);
    run("end-to-end-cli", &mut end_to_end_cli);
    let failed = results.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
