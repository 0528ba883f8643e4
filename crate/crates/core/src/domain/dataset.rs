//! On-disk dataset container: `materials.csv`, `manifest.csv` and
//! `images/<id>.pgm`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use super::materials::{MaterialComposition, ELEMENTS, NUM_ELEMENTS};
use super::pgm;
use super::records::{
    CavityHistogram, CrystalType, IrradiationConditions, PerformanceParams, SampleRecord,
    ThermoMechParams, HIST_BINS,
};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.csv";
pub const MATERIALS: &str = "materials.csv";
pub const IMAGES_DIR: &str = "images";
const VERSION_PREFIX: &str = "# dataset_version=";

/// Samples plus the version tag of the generator that produced them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub version: Option<String>,
    pub samples: Vec<SampleRecord>,
}

pub fn manifest_header() -> Vec<String> {
    let mut h = vec!["id".to_string(), "alloy_name".to_string()];
    h.extend(ThermoMechParams::FIELDS.iter().map(|s| s.to_string()));
    h.extend(IrradiationConditions::FIELDS.iter().map(|s| s.to_string()));
    h.extend((1..=HIST_BINS).map(|b| format!("hv_{b}")));
    h.extend(PerformanceParams::FIELDS.iter().map(|s| s.to_string()));
    h.push("image".to_string());
    h
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Sample {
            id: id.to_string(),
            message: "ids may only contain ASCII letters, digits, '-', '_' and '.'".into(),
        })
    }
}

fn image_rel_path(id: &str) -> String {
    format!("{IMAGES_DIR}/{id}.pgm")
}

fn d_d_cells(d: &ThermoMechParams) -> Vec<String> {
    let c = d.continuous();
    let mut out: Vec<String> = c[..9].iter().map(|v| v.to_string()).collect();
    out.push(d.crystal_type.to_string());
    out.extend(c[9..].iter().map(|v| v.to_string()));
    out
}

fn manifest_row(s: &SampleRecord) -> Vec<String> {
    let mut row = vec![s.id.clone(), s.composition.alloy_name.clone()];
    row.extend(d_d_cells(&s.d_d));
    row.extend(s.d_c.values().iter().map(|v| v.to_string()));
    row.extend(s.h_v.counts.iter().map(|v| v.to_string()));
    row.extend(s.d_r.continuous().iter().map(|v| v.to_string()));
    row.push(if s.d_r.c_he { "1" } else { "0" }.to_string());
    row.push(image_rel_path(&s.id));
    row
}

impl Dataset {
    pub fn new(version: Option<String>, samples: Vec<SampleRecord>) -> Self {
        Dataset { version, samples }
    }

    /// Writes the container into `dir`, creating it if needed. Micrographs are
    /// stored at 8-bit precision.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut seen = HashSet::new();
        let mut materials: Vec<&MaterialComposition> = Vec::new();
        for s in &self.samples {
            check_id(&s.id)?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Sample {
                    id: s.id.clone(),
                    message: "duplicate id".into(),
                });
            }
            match materials
                .iter()
                .find(|m| m.alloy_name == s.composition.alloy_name)
            {
                Some(m) if m.fractions != s.composition.fractions => {
                    return Err(Error::Sample {
                        id: s.id.clone(),
                        message: format!(
                            "alloy `{}` appears with two different compositions",
                            m.alloy_name
                        ),
                    })
                }
                Some(_) => {}
                None => materials.push(&s.composition),
            }
        }

        let images = dir.join(IMAGES_DIR);
        fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;

        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["alloy_name".to_string()];
        header.extend(ELEMENTS.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for m in &materials {
            let mut row = vec![m.alloy_name.clone()];
            row.extend(m.fractions.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        write_file(&dir.join(MATERIALS), &finish(w)?)?;

        let mut out = Vec::new();
        if let Some(v) = &self.version {
            out.extend(format!("{VERSION_PREFIX}{v}\n").into_bytes());
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(manifest_header())?;
        for s in &self.samples {
            w.write_record(manifest_row(s))?;
        }
        out.extend(finish(w)?);
        write_file(&dir.join(MANIFEST), &out)?;

        for s in &self.samples {
            write_file(
                &dir.join(image_rel_path(&s.id)),
                &pgm::encode(&s.micrograph),
            )?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let materials = load_materials(&dir.join(MATERIALS))?;
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let version = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix(VERSION_PREFIX))
            .map(|v| v.trim().to_string());

        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != manifest_header() {
            return Err(Error::Manifest {
                row: 0,
                message: "header does not match the expected column list".into(),
            });
        }
        let mut samples = Vec::new();
        let mut seen = HashSet::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| Error::Manifest {
                row,
                message: e.to_string(),
            })?;
            let cells: Vec<&str> = rec.iter().collect();
            let mut s = parse_row(&cells, &materials)
                .map_err(|message| Error::Manifest { row, message })?;
            if !seen.insert(s.id.clone()) {
                return Err(Error::Manifest {
                    row,
                    message: format!("duplicate id `{}`", s.id),
                });
            }
            let img = dir.join(cells[cells.len() - 1]);
            let bytes = fs::read(&img).map_err(|e| Error::Sample {
                id: s.id.clone(),
                message: format!("cannot read image {}: {e}", img.display()),
            })?;
            s.micrograph = pgm::decode(&bytes).map_err(|e| Error::Sample {
                id: s.id.clone(),
                message: e.to_string(),
            })?;
            samples.push(s);
        }
        Ok(Dataset { version, samples })
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner()
        .map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_materials(path: &Path) -> Result<BTreeMap<String, MaterialComposition>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |m: String| Error::field(MATERIALS, format!("row {}: {m}", i + 1));
        if rec.len() != 1 + NUM_ELEMENTS {
            return Err(bad(format!(
                "expected {} columns, got {}",
                1 + NUM_ELEMENTS,
                rec.len()
            )));
        }
        let mut f = [0.0; NUM_ELEMENTS];
        for (k, cell) in rec.iter().skip(1).enumerate() {
            f[k] = cell
                .parse()
                .map_err(|_| bad(format!("`{cell}` is not a number")))?;
        }
        let m = MaterialComposition::new(&rec[0], f).map_err(|e| bad(e.to_string()))?;
        out.insert(m.alloy_name.clone(), m);
    }
    Ok(out)
}

fn parse_row(
    cells: &[&str],
    materials: &BTreeMap<String, MaterialComposition>,
) -> std::result::Result<SampleRecord, String> {
    let header = manifest_header();
    if cells.len() != header.len() {
        return Err(format!(
            "expected {} columns, got {}",
            header.len(),
            cells.len()
        ));
    }
    let num = |k: usize| -> std::result::Result<f64, String> {
        cells[k]
            .parse::<f64>()
            .map_err(|_| format!("column `{}`: `{}` is not a number", header[k], cells[k]))
    };
    let id = cells[0].to_string();
    check_id(&id).map_err(|e| e.to_string())?;
    let composition = materials
        .get(cells[1])
        .cloned()
        .ok_or_else(|| format!("alloy `{}` missing from {MATERIALS}", cells[1]))?;

    let mut k = 2;
    let mut cont = [0.0; 18];
    let mut crystal = CrystalType::Bcc;
    let mut ci = 0;
    for name in ThermoMechParams::FIELDS {
        if name == "crystal_type" {
            crystal = cells[k].parse().map_err(|e: Error| e.to_string())?;
        } else {
            cont[ci] = num(k)?;
            ci += 1;
        }
        k += 1;
    }
    let d_d = ThermoMechParams::from_continuous(cont, crystal);
    let mut dc = [0.0; 5];
    for v in dc.iter_mut() {
        *v = num(k)?;
        k += 1;
    }
    let d_c = IrradiationConditions::from_values(dc);
    let mut counts = [0u32; HIST_BINS];
    for c in counts.iter_mut() {
        *c = cells[k]
            .parse()
            .map_err(|_| format!("column `{}`: `{}` is not a count", header[k], cells[k]))?;
        k += 1;
    }
    let h_v = CavityHistogram::new(counts).map_err(|e| e.to_string())?;
    let mut dr = [0.0; PerformanceParams::CONTINUOUS];
    for v in dr.iter_mut() {
        *v = num(k)?;
        k += 1;
    }
    let c_he = match cells[k] {
        "0" => false,
        "1" => true,
        other => return Err(format!("column `C_He`: `{other}` is not 0 or 1")),
    };
    k += 1;
    if cells[k] != image_rel_path(&id) {
        return Err(format!(
            "image path `{}` does not match id (expected `{}`)",
            cells[k],
            image_rel_path(&id)
        ));
    }
    Ok(SampleRecord {
        id,
        composition,
        d_d,
        d_c,
        h_v,
        d_r: PerformanceParams::from_parts(dr, c_he),
        micrograph: super::records::Micrograph::blank(0.0),
    })
}
