//! Frozen-model workflow shared by the CLI and the HTTP service:
//! composition and conditions in, micrographs with estimated histograms and
//! predicted performance out.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::domain::materials::validate_fractions;
use crate::domain::{
    pgm, require_alloy, Alloy, CrystalType, IrradiationConditions, Micrograph, NormStats,
    PerformanceParams, ThermoMechParams, ALLOYS, ELEMENTS, HIST_BINS, NUM_ELEMENTS,
};
use crate::embedding::{ElementEmbeddings, D_C};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::gan::{standard_normal, Generator, COND_WIDTH};
use crate::nn;
use crate::predictor::Predictor;
use crate::tensor::{BundleKind, ModelBundle, Tensor};
use crate::training::Variant;

pub const EMBEDDING_FILE: &str = "embedding.bundle";
pub const GENERATOR_FILE: &str = "generator.bundle";
pub const DISCRIMINATOR_FILE: &str = "discriminator.bundle";
pub const ENCODER_FILE: &str = "encoder.bundle";
pub const PREDICTOR_FILE: &str = "predictor.bundle";
pub const CLASSIFIER_FILE: &str = "classifier.bundle";
pub const VAE_FILE: &str = "vae.bundle";

/// Largest `n` accepted by one generate request.
pub const MAX_SAMPLES: usize = 16;

/// One invalid request field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError {
            field: field.into(),
            message: message.into(),
        }
    }

    fn from_error(e: Error, default_field: &str) -> Self {
        match e {
            Error::Field { field, message } => FieldError { field, message },
            other => FieldError::new(default_field, other.to_string()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    #[serde(default)]
    pub alloy_name: Option<String>,
    /// Element fractions in [`ELEMENTS`] order; alternative to `alloy_name`.
    #[serde(default)]
    pub composition: Option<Vec<f64>>,
    /// Irradiation conditions keyed by field name (`phi_fast`, ..., `T_exp`).
    #[serde(default)]
    pub d_c: BTreeMap<String, f64>,
    /// Overrides of continuous thermo-mechanical fields, keyed by name.
    #[serde(default)]
    pub d_d: BTreeMap<String, f64>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_n() -> usize {
    1
}

/// A validated generate request.
#[derive(Clone, Debug)]
pub struct ResolvedRequest {
    /// The named alloy, or for raw compositions the closest table entry
    /// (supplies the un-overridden `D_d`).
    pub alloy: &'static Alloy,
    pub composition: [f64; NUM_ELEMENTS],
    pub d_d: ThermoMechParams,
    pub d_c: IrradiationConditions,
    pub n: usize,
    pub seed: Option<u64>,
}

/// L1-closest alloy of the table.
pub fn nearest_alloy(m: &[f64; NUM_ELEMENTS]) -> &'static Alloy {
    ALLOYS
        .iter()
        .min_by(|a, b| {
            let d = |x: &Alloy| {
                let c = x.composition().fractions;
                c.iter().zip(m).map(|(p, q)| (p - q).abs()).sum::<f64>()
            };
            d(a).total_cmp(&d(b))
        })
        .expect("alloy table is nonempty")
}

impl GenerateRequest {
    /// Checks every field and collects all problems.
    pub fn resolve(&self) -> std::result::Result<ResolvedRequest, Vec<FieldError>> {
        let mut errs = Vec::new();
        let material = match (&self.alloy_name, &self.composition) {
            (Some(_), Some(_)) => {
                errs.push(FieldError::new(
                    "composition",
                    "give either alloy_name or composition, not both",
                ));
                None
            }
            (None, None) => {
                errs.push(FieldError::new(
                    "alloy_name",
                    "alloy_name or composition is required",
                ));
                None
            }
            (Some(name), None) => match require_alloy(name) {
                Ok(a) => Some((a, a.composition().fractions)),
                Err(e) => {
                    errs.push(FieldError::from_error(e, "alloy_name"));
                    None
                }
            },
            (None, Some(m)) => match validate_fractions(m) {
                Ok(()) => {
                    let m: [f64; NUM_ELEMENTS] = m.as_slice().try_into().expect("length validated");
                    Some((nearest_alloy(&m), m))
                }
                Err(e) => {
                    errs.push(FieldError::from_error(e, "composition"));
                    None
                }
            },
        };

        let mut dc = [0.0; 5];
        for (i, name) in IrradiationConditions::FIELDS.iter().enumerate() {
            match self.d_c.get(*name) {
                Some(v) => dc[i] = *v,
                None => errs.push(FieldError::new(*name, "required")),
            }
        }
        for k in self.d_c.keys() {
            if !IrradiationConditions::FIELDS.contains(&k.as_str()) {
                errs.push(FieldError::new(
                    k.clone(),
                    format!(
                        "unknown condition; expected one of {}",
                        IrradiationConditions::FIELDS.join(", ")
                    ),
                ));
            }
        }
        let d_c = IrradiationConditions::from_values(dc);
        if errs
            .iter()
            .all(|e| !IrradiationConditions::FIELDS.contains(&e.field.as_str()))
        {
            // report every out-of-range condition, not just the first
            for (i, name) in IrradiationConditions::FIELDS.iter().enumerate() {
                let mut probe = IrradiationConditions::from_values([1.0; 5]);
                let mut v = probe.values();
                v[i] = dc[i];
                probe = IrradiationConditions::from_values(v);
                if let Err(e) = probe.validate() {
                    errs.push(FieldError::from_error(e, name));
                }
            }
        }

        let names: Vec<&str> = ThermoMechParams::continuous_names().collect();
        for k in self.d_d.keys() {
            if k == "crystal_type" {
                errs.push(FieldError::new(
                    "crystal_type",
                    "crystal type cannot be overridden",
                ));
            } else if !names.contains(&k.as_str()) {
                errs.push(FieldError::new(
                    k.clone(),
                    "unknown thermo-mechanical field",
                ));
            }
        }
        if self.n == 0 || self.n > MAX_SAMPLES {
            errs.push(FieldError::new(
                "n",
                format!("must lie in 1..={MAX_SAMPLES}, got {}", self.n),
            ));
        }
        if let Some(s) = self.seed {
            if s > MAX_SAFE_SEED {
                errs.push(FieldError::new(
                    "seed",
                    format!("must be <= {MAX_SAFE_SEED}"),
                ));
            }
        }

        let Some((alloy, composition)) = material else {
            return Err(errs);
        };
        let base = alloy.nominal_properties();
        let mut cont = base.continuous();
        for (i, name) in names.iter().enumerate() {
            if let Some(v) = self.d_d.get(*name) {
                cont[i] = *v;
            }
        }
        let d_d = ThermoMechParams::from_continuous(cont, base.crystal_type);
        if let Err(e) = d_d.validate() {
            errs.push(FieldError::from_error(e, "d_d"));
        }
        if !errs.is_empty() {
            return Err(errs);
        }
        Ok(ResolvedRequest {
            alloy,
            composition,
            d_d,
            d_c,
            n: self.n,
            seed: self.seed,
        })
    }
}

/// Seeds stay exactly representable as JSON numbers.
pub const MAX_SAFE_SEED: u64 = (1 << 53) - 1 - MAX_SAMPLES as u64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSample {
    /// Base64 of the binary PGM.
    pub image: String,
    pub h_v_estimate: [f64; HIST_BINS],
    pub d_r_prediction: PerformanceParams,
    pub c_he_probability: f64,
    /// Generating this sample alone with this seed reproduces it.
    pub seed_used: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub alloy_name: String,
    pub composition: Vec<f64>,
    pub d_d: ThermoMechParams,
    pub d_c: IrradiationConditions,
    pub variant: String,
    pub samples: Vec<GeneratedSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub image: String,
    pub alloy_name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub alloy_name: String,
    pub h_v_estimate: [f64; HIST_BINS],
    pub d_r_prediction: PerformanceParams,
    pub c_he_probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialInfo {
    pub alloy_name: String,
    pub composition: BTreeMap<String, f64>,
    pub crystal_type: CrystalType,
    pub d_d: ThermoMechParams,
}

pub fn materials() -> Vec<MaterialInfo> {
    ALLOYS
        .iter()
        .map(|a| {
            let d_d = a.nominal_properties();
            MaterialInfo {
                alloy_name: a.name.to_string(),
                composition: ELEMENTS
                    .iter()
                    .zip(a.composition().fractions)
                    .map(|(e, f)| (e.to_string(), f))
                    .collect(),
                crystal_type: d_d.crystal_type,
                d_d,
            }
        })
        .collect()
}

/// The frozen models behind generation and prediction.
#[derive(Clone, Debug)]
pub struct Bundles {
    pub embedding: ElementEmbeddings,
    pub generator: Generator,
    pub variant: Variant,
    /// Normalization the generator was trained with.
    pub generator_stats: NormStats,
    pub encoder: Encoder,
    pub predictor: Predictor,
    pub dataset_version: Option<String>,
}

fn meta<'a>(b: &'a ModelBundle, key: &str) -> Result<&'a str> {
    b.meta(key).ok_or_else(|| Error::Bundle {
        section: "metadata".into(),
        message: format!("missing `{key}`"),
    })
}

impl Bundles {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let embedding =
            ElementEmbeddings::from_bundle(&ModelBundle::load(dir.join(EMBEDDING_FILE))?)?;
        let gb = ModelBundle::load(dir.join(GENERATOR_FILE))?;
        gb.expect_kind(BundleKind::Generator)?;
        let mut generator = Generator::init(0);
        generator.import(&gb)?;
        let variant: Variant = meta(&gb, "variant")?.parse()?;
        let generator_stats = NormStats::from_json(meta(&gb, "norm_stats")?)?;
        let encoder = Encoder::from_bundle(&ModelBundle::load(dir.join(ENCODER_FILE))?)?;
        let predictor = Predictor::from_bundle(&ModelBundle::load(dir.join(PREDICTOR_FILE))?)?;
        Ok(Bundles {
            embedding,
            generator,
            variant,
            generator_stats,
            encoder,
            predictor,
            dataset_version: gb.meta("dataset_version").map(str::to_string),
        })
    }

    /// Content hashes of the loaded parameters, keyed by bundle file.
    pub fn fingerprint(&self) -> BTreeMap<String, String> {
        let mut g = ModelBundle::new(BundleKind::Generator);
        self.generator.export(&mut g);
        [
            (EMBEDDING_FILE, self.embedding.to_bundle()),
            (GENERATOR_FILE, g),
            (ENCODER_FILE, self.encoder.to_bundle()),
            (PREDICTOR_FILE, self.predictor.to_bundle()),
        ]
        .into_iter()
        .map(|(k, b)| (k.to_string(), b.content_hash()))
        .collect()
    }

    fn conditioning(&self, r: &ResolvedRequest) -> [f64; COND_WIDTH] {
        let mut cond = [0.0; COND_WIDTH];
        let d = self.generator_stats.normalize_d_d(&r.d_d);
        cond[..d.len()].copy_from_slice(&d);
        cond[d.len()..].copy_from_slice(&self.generator_stats.normalize_d_c(&r.d_c));
        cond
    }

    /// Generates `n` samples; sample `i` uses seed `seed + i`.
    pub fn generate(&self, r: &ResolvedRequest, seed: u64) -> Result<GenerateResponse> {
        let c_m = self.embedding.embed(&r.composition)?;
        let cond = Tensor::new([1, COND_WIDTH], self.conditioning(r).to_vec())?;
        let mut samples = Vec::with_capacity(r.n);
        for i in 0..r.n {
            let s = seed + i as u64;
            let z = if self.variant.uses_prior() {
                self.generator.sample_prior(&c_m, 1, s)?
            } else {
                standard_normal(1, s)
            };
            let img = self.generator.generate(&z, &cond)?;
            let micrograph = nn::to_micrographs(&img).remove(0).quantized();
            let (h_v, pred) = self.analyze(&micrograph, &c_m)?;
            samples.push(GeneratedSample {
                image: B64.encode(pgm::encode(&micrograph)),
                h_v_estimate: h_v,
                d_r_prediction: pred.to_params(),
                c_he_probability: pred.c_he_probability,
                seed_used: s,
            });
        }
        Ok(GenerateResponse {
            alloy_name: r.alloy.name.to_string(),
            composition: r.composition.to_vec(),
            d_d: r.d_d.clone(),
            d_c: r.d_c.clone(),
            variant: self.variant.as_str().to_string(),
            samples,
        })
    }

    fn analyze(
        &self,
        m: &Micrograph,
        c_m: &[f64; D_C],
    ) -> Result<([f64; HIST_BINS], crate::predictor::Prediction)> {
        let h_v = self.encoder.encode_one(m);
        let images = nn::image_batch([m]);
        let pred = self
            .predictor
            .predict(&images, &Tensor::new([1, D_C], c_m.to_vec())?)?
            .remove(0);
        Ok((h_v, pred))
    }

    pub fn predict(
        &self,
        req: &PredictRequest,
    ) -> std::result::Result<PredictResponse, Vec<FieldError>> {
        let mut errs = Vec::new();
        let image = match B64.decode(req.image.trim()) {
            Ok(bytes) => match pgm::decode(&bytes) {
                Ok(m) => Some(m),
                Err(e) => {
                    errs.push(FieldError::from_error(e, "image"));
                    None
                }
            },
            Err(e) => {
                errs.push(FieldError::new("image", format!("invalid base64: {e}")));
                None
            }
        };
        let alloy = match require_alloy(&req.alloy_name) {
            Ok(a) => Some(a),
            Err(e) => {
                errs.push(FieldError::from_error(e, "alloy_name"));
                None
            }
        };
        let (Some(image), Some(alloy)) = (image, alloy) else {
            return Err(errs);
        };
        let c_m = self
            .embedding
            .embed(&alloy.composition().fractions)
            .map_err(|e| vec![FieldError::from_error(e, "alloy_name")])?;
        let (h_v, pred) = self
            .analyze(&image, &c_m)
            .map_err(|e| vec![FieldError::from_error(e, "image")])?;
        Ok(PredictResponse {
            alloy_name: alloy.name.to_string(),
            h_v_estimate: h_v,
            d_r_prediction: pred.to_params(),
            c_he_probability: pred.c_he_probability,
        })
    }
}

/// Writes a generate response as `sample_<i>.pgm` files plus
/// `generate.json` (the same schema the service returns).
pub fn write_generated(
    dir: impl AsRef<Path>,
    resp: &GenerateResponse,
) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (i, s) in resp.samples.iter().enumerate() {
        let path = dir.join(format!("sample_{i}.pgm"));
        let bytes = B64
            .decode(&s.image)
            .map_err(|e| Error::invalid(format!("sample {i}: {e}")))?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let path = dir.join("generate.json");
    let json = serde_json::to_string_pretty(resp)?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> GenerateRequest {
        GenerateRequest {
            alloy_name: Some("Zr4".into()),
            d_c: [
                ("phi_fast", 3.0),
                ("phi_thermal", 1.0),
                ("phi_flux", 12.0),
                ("T_irr", 800.0),
                ("T_exp", 300.0),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
            n: 4,
            seed: Some(1),
            ..Default::default()
        }
    }

    #[test]
    fn valid_request_resolves() {
        let r = request().resolve().unwrap();
        assert_eq!(r.alloy.name, "Zr4");
        assert_eq!(r.d_c.phi_flux, 12.0);
        assert_eq!(r.d_d, r.alloy.nominal_properties());
    }

    #[test]
    fn negative_flux_names_field() {
        let mut q = request();
        q.d_c.insert("phi_flux".into(), -1.0);
        let errs = q.resolve().unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].field, "phi_flux");
    }

    #[test]
    fn all_problems_collected() {
        let mut q = request();
        q.alloy_name = Some("Unobtainium".into());
        q.d_c.remove("T_irr");
        q.n = 17;
        let fields: Vec<String> = q
            .resolve()
            .unwrap_err()
            .into_iter()
            .map(|e| e.field)
            .collect();
        for f in ["alloy_name", "T_irr", "n"] {
            assert!(fields.iter().any(|x| x == f), "{fields:?}");
        }
    }

    #[test]
    fn overrides_apply_and_validate() {
        let mut q = request();
        q.d_d.insert("density".into(), 7.0);
        assert_eq!(q.resolve().unwrap().d_d.density, 7.0);
        q.d_d.insert("density".into(), -7.0);
        assert_eq!(q.resolve().unwrap_err()[0].field, "density");
        let mut q = request();
        q.d_d.insert("crystal_type".into(), 1.0);
        assert!(q.resolve().is_err());
    }

    #[test]
    fn raw_composition_uses_nearest_alloy() {
        let mut q = request();
        q.alloy_name = None;
        let mut m = require_alloy("Zr4").unwrap().composition().fractions;
        m[0] -= 0.001;
        m[1] += 0.001;
        q.composition = Some(m.to_vec());
        let r = q.resolve().unwrap();
        assert_eq!(r.alloy.name, "Zr4");
        assert_eq!(r.composition, m);
    }

    #[test]
    fn fourteen_materials_sum_to_one() {
        let m = materials();
        assert_eq!(m.len(), 14);
        for x in &m {
            assert!((x.composition.values().sum::<f64>() - 1.0).abs() < 1e-3);
        }
    }
}
