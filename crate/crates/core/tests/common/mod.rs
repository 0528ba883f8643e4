#![allow(dead_code)]

pub mod gradients;

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use swellgan::cli::run;

pub fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("swellgan").chain(args.iter().copied()))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small dataset plus a briefly trained bundle set, built once per test
/// binary. Model quality is irrelevant here; only wiring is exercised.
pub struct Fixture {
    _dir: tempfile::TempDir,
    pub data: PathBuf,
    pub bundles: PathBuf,
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let bundles = dir.path().join("bundles");
        let (d, b) = (s(&data), s(&bundles));
        assert_eq!(cli(&["synth", "--n", "60", "--seed", "5", "--out", d]), 0);
        assert_eq!(
            cli(&["train-embed", "--data", d, "--out", b, "--epochs", "5"]),
            0
        );
        assert_eq!(
            cli(&["train-encoder", "--data", d, "--out", b, "--epochs", "1"]),
            0
        );
        assert_eq!(
            cli(&[
                "train-gan",
                "--data",
                d,
                "--bundles",
                b,
                "--out",
                b,
                "--epochs",
                "1"
            ]),
            0
        );
        assert_eq!(
            cli(&[
                "train-predictor",
                "--data",
                d,
                "--bundles",
                b,
                "--out",
                b,
                "--epochs",
                "1"
            ]),
            0
        );
        assert_eq!(
            cli(&["train-classifier", "--data", d, "--out", b, "--epochs", "1"]),
            0
        );
        Fixture {
            _dir: dir,
            data,
            bundles,
        }
    })
}

/// Hex digest of every file under `dir` (recursively), sorted by relative path.
pub fn dir_hashes(dir: &Path) -> Vec<(String, String)> {
    use sha2::{Digest, Sha256};
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, String)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let h = Sha256::digest(std::fs::read(&p).unwrap());
                let hex: String = h.iter().map(|b| format!("{b:02x}")).collect();
                out.push((
                    p.strip_prefix(root).unwrap().to_string_lossy().into_owned(),
                    hex,
                ));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
