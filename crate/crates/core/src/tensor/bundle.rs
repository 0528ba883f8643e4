//! `ModelBundle`: the on-disk container for learned parameters.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   "SWGBNDL1"
//! metadata  u64 length M, then M bytes of UTF-8 `key=value\n` lines,
//!           keys in ascending order
//! tensors   u32 count T, then T records in ascending name order:
//!             u32 name length, name (UTF-8),
//!             u32 rank R, R x u64 dimensions,
//!             product(dims) x f64 payload, row-major
//! checksum  32 bytes, SHA-256 of every preceding byte
//! ```
//!
//! Encoding is canonical, so `save(load(bytes)) == bytes`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SWGBNDL1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BundleKind {
    Embedding,
    Generator,
    Discriminator,
    Encoder,
    Predictor,
    MetricClassifier,
    Vae,
    GanCheckpoint,
}

impl BundleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BundleKind::Embedding => "embedding",
            BundleKind::Generator => "generator",
            BundleKind::Discriminator => "discriminator",
            BundleKind::Encoder => "encoder",
            BundleKind::Predictor => "predictor",
            BundleKind::MetricClassifier => "metric-classifier",
            BundleKind::Vae => "vae",
            BundleKind::GanCheckpoint => "gan-checkpoint",
        }
    }
}

impl fmt::Display for BundleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BundleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use BundleKind::*;
        [
            Embedding,
            Generator,
            Discriminator,
            Encoder,
            Predictor,
            MetricClassifier,
            Vae,
            GanCheckpoint,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::invalid(format!("unknown bundle kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    metadata: BTreeMap<String, String>,
    tensors: BTreeMap<String, Tensor>,
}

fn corrupt(section: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Bundle {
        section: section.into(),
        message: message.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(corrupt(section, "truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, section)?.try_into().unwrap(),
        ))
    }

    fn u64(&mut self, section: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, section)?.try_into().unwrap(),
        ))
    }
}

impl ModelBundle {
    pub fn new(kind: BundleKind) -> Self {
        let mut b = ModelBundle {
            metadata: BTreeMap::new(),
            tensors: BTreeMap::new(),
        };
        b.set_meta("kind", kind.as_str());
        b
    }

    pub fn kind(&self) -> Result<BundleKind> {
        self.meta("kind")
            .ok_or_else(|| corrupt("metadata", "missing `kind`"))?
            .parse()
    }

    /// Errors unless the bundle is of the expected kind.
    pub fn expect_kind(&self, kind: BundleKind) -> Result<()> {
        let found = self.kind()?;
        if found != kind {
            return Err(corrupt(
                "metadata",
                format!("expected a {kind} bundle, found {found}"),
            ));
        }
        Ok(())
    }

    /// Sets a metadata entry. Keys may not contain `=` or newlines; values
    /// may not contain newlines.
    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let (key, value) = (key.into(), value.into());
        assert!(
            !key.contains(['=', '\n']) && !key.is_empty() && !value.contains('\n'),
            "invalid metadata entry `{key}`"
        );
        self.metadata.insert(key, value);
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
            return Err(corrupt("header", "not a model bundle (bad magic)"));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(corrupt("checksum", "SHA-256 mismatch; file is corrupt"));
        }
        let mut r = Reader {
            bytes: body,
            pos: 8,
        };
        let mlen = r.u64("metadata")? as usize;
        let text = std::str::from_utf8(r.take(mlen, "metadata")?)
            .map_err(|_| corrupt("metadata", "not UTF-8"))?;
        let mut metadata = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| corrupt("metadata", format!("line without `=`: {line}")))?;
            metadata.insert(k.to_string(), v.to_string());
        }
        let count = r.u32("tensors")?;
        let mut tensors = BTreeMap::new();
        for i in 0..count {
            let section = format!("tensor #{i}");
            let nlen = r.u32(&section)? as usize;
            let name = std::str::from_utf8(r.take(nlen, &section)?)
                .map_err(|_| corrupt(&section, "name not UTF-8"))?
                .to_string();
            let section = format!("tensor {name}");
            let rank = r.u32(&section)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64(&section)? as usize);
            }
            let numel: usize = shape.iter().product();
            let payload = r.take(numel * 8, &section)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| corrupt(&section, e.to_string()))?;
            tensors.insert(name, t);
        }
        if r.pos != body.len() {
            return Err(corrupt("tensors", "trailing bytes after last tensor"));
        }
        let b = ModelBundle { metadata, tensors };
        b.kind()?;
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the canonical encoding.
    pub fn content_hash(&self) -> String {
        hex_digest(&self.to_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ModelBundle {
        let mut b = ModelBundle::new(BundleKind::Encoder);
        b.set_meta("step", "12");
        b.set_meta("config_hash", "abc");
        b.insert_tensor(
            "w",
            Tensor::new([2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap(),
        );
        b.insert_tensor("b", Tensor::vector(vec![0.1]));
        b
    }

    #[test]
    fn corrupt_payload_names_checksum() {
        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 40] ^= 1;
        let err = ModelBundle::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }

    #[test]
    fn bad_magic_names_header() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        let err = ModelBundle::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("header"), "{err}");
    }

    #[test]
    fn truncated_tensor_names_tensor() {
        // rebuild a valid checksum over a body whose last tensor is cut short
        let bytes = sample().to_bytes();
        let body = &bytes[..bytes.len() - 32 - 8];
        let mut forged = body.to_vec();
        forged.extend_from_slice(&Sha256::digest(body));
        let err = ModelBundle::from_bytes(&forged).unwrap_err().to_string();
        assert!(err.contains("tensor w"), "{err}");
    }

    #[test]
    fn kind_round_trips() {
        let b = ModelBundle::from_bytes(&sample().to_bytes()).unwrap();
        assert_eq!(b.kind().unwrap(), BundleKind::Encoder);
        assert!(b.expect_kind(BundleKind::Generator).is_err());
    }

    proptest! {
        #[test]
        fn encoding_round_trips_bit_exactly(
            vals in prop::collection::vec(any::<f64>(), 1..40),
            step in any::<u32>(),
        ) {
            let mut b = ModelBundle::new(BundleKind::Predictor);
            b.set_meta("step", step.to_string());
            b.insert_tensor("p", Tensor::vector(vals));
            let bytes = b.to_bytes();
            let back = ModelBundle::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
