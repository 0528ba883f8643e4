//! Value records for one experiment: properties, conditions, outcomes and
//! the micrograph.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::materials::MaterialComposition;
use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const HIST_BINS: usize = 8;
/// Upper bound on cavities the renderer can place.
pub const HIST_CAPACITY: u32 = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrystalType {
    Bcc,
    Fcc,
    Hcp,
}

impl CrystalType {
    pub const ALL: [CrystalType; 3] = [CrystalType::Bcc, CrystalType::Fcc, CrystalType::Hcp];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for CrystalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CrystalType::Bcc => "bcc",
            CrystalType::Fcc => "fcc",
            CrystalType::Hcp => "hcp",
        })
    }
}

impl FromStr for CrystalType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bcc" => Ok(CrystalType::Bcc),
            "fcc" => Ok(CrystalType::Fcc),
            "hcp" => Ok(CrystalType::Hcp),
            other => Err(Error::field(
                "crystal_type",
                format!("`{other}` is not one of bcc, fcc, hcp"),
            )),
        }
    }
}

/// Thermo-mechanical material properties (19 fields).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermoMechParams {
    #[serde(rename = "E_mod")]
    pub e_mod: f64,
    pub nu: f64,
    pub eq_stress: f64,
    pub eq_strain: f64,
    pub n_harden: f64,
    pub m_rate: f64,
    pub k_intensity: f64,
    pub lame_lambda: f64,
    #[serde(rename = "lame_G")]
    pub lame_g: f64,
    pub crystal_type: CrystalType,
    pub lattice_param: f64,
    #[serde(rename = "melting_K")]
    pub melting_k: f64,
    pub density: f64,
    pub thermal_expansion: f64,
    pub thermal_conductivity: f64,
    pub heat_capacity: f64,
    pub heat: f64,
    pub seebeck: f64,
    pub resistivity: f64,
}

impl ThermoMechParams {
    /// Column names in manifest order (crystal type is the 10th).
    pub const FIELDS: [&'static str; 19] = [
        "E_mod",
        "nu",
        "eq_stress",
        "eq_strain",
        "n_harden",
        "m_rate",
        "K_intensity",
        "lame_lambda",
        "lame_G",
        "crystal_type",
        "lattice_param",
        "melting_K",
        "density",
        "thermal_expansion",
        "thermal_conductivity",
        "heat_capacity",
        "heat",
        "seebeck",
        "resistivity",
    ];

    /// Names of the 18 continuous fields, in [`Self::continuous`] order.
    pub fn continuous_names() -> impl Iterator<Item = &'static str> {
        Self::FIELDS.into_iter().filter(|f| *f != "crystal_type")
    }

    pub fn continuous(&self) -> [f64; 18] {
        [
            self.e_mod,
            self.nu,
            self.eq_stress,
            self.eq_strain,
            self.n_harden,
            self.m_rate,
            self.k_intensity,
            self.lame_lambda,
            self.lame_g,
            self.lattice_param,
            self.melting_k,
            self.density,
            self.thermal_expansion,
            self.thermal_conductivity,
            self.heat_capacity,
            self.heat,
            self.seebeck,
            self.resistivity,
        ]
    }

    pub fn from_continuous(v: [f64; 18], crystal_type: CrystalType) -> Self {
        ThermoMechParams {
            e_mod: v[0],
            nu: v[1],
            eq_stress: v[2],
            eq_strain: v[3],
            n_harden: v[4],
            m_rate: v[5],
            k_intensity: v[6],
            lame_lambda: v[7],
            lame_g: v[8],
            crystal_type,
            lattice_param: v[9],
            melting_k: v[10],
            density: v[11],
            thermal_expansion: v[12],
            thermal_conductivity: v[13],
            heat_capacity: v[14],
            heat: v[15],
            seebeck: v[16],
            resistivity: v[17],
        }
    }

    /// Thermodynamic subset regressed by the composition embedding: crystal
    /// type one-hot followed by the nine continuous thermodynamic fields.
    pub fn thermodynamic(&self) -> [f64; 12] {
        let oh = self.crystal_type.one_hot();
        [
            oh[0],
            oh[1],
            oh[2],
            self.lattice_param,
            self.melting_k,
            self.density,
            self.thermal_expansion,
            self.thermal_conductivity,
            self.heat_capacity,
            self.heat,
            self.seebeck,
            self.resistivity,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((i, _)) = self
            .continuous()
            .iter()
            .enumerate()
            .find(|(_, x)| !x.is_finite())
        {
            let name = Self::continuous_names().nth(i).unwrap();
            return Err(Error::field(name, "must be finite"));
        }
        if !(self.melting_k > 0.0) {
            return Err(Error::field("melting_K", "must be positive"));
        }
        if !(self.density > 0.0) {
            return Err(Error::field("density", "must be positive"));
        }
        if !(self.nu > 0.0 && self.nu < 0.5) {
            return Err(Error::field("nu", "must lie in (0, 0.5)"));
        }
        Ok(())
    }
}

/// Irradiation conditions (5 fields; fluences in 1e19 n/cm^2, temperatures
/// in K).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrradiationConditions {
    pub phi_fast: f64,
    pub phi_thermal: f64,
    pub phi_flux: f64,
    #[serde(rename = "T_irr")]
    pub t_irr: f64,
    #[serde(rename = "T_exp")]
    pub t_exp: f64,
}

impl IrradiationConditions {
    pub const FIELDS: [&'static str; 5] = ["phi_fast", "phi_thermal", "phi_flux", "T_irr", "T_exp"];

    pub fn values(&self) -> [f64; 5] {
        [
            self.phi_fast,
            self.phi_thermal,
            self.phi_flux,
            self.t_irr,
            self.t_exp,
        ]
    }

    pub fn from_values(v: [f64; 5]) -> Self {
        IrradiationConditions {
            phi_fast: v[0],
            phi_thermal: v[1],
            phi_flux: v[2],
            t_irr: v[3],
            t_exp: v[4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::FIELDS.iter().zip(self.values()) {
            if !v.is_finite() {
                return Err(Error::field(*name, "must be finite"));
            }
        }
        for (name, v) in Self::FIELDS.iter().zip(self.values()).take(3) {
            if v < 0.0 {
                return Err(Error::field(
                    *name,
                    format!("fluence must be >= 0, got {v}"),
                ));
            }
        }
        for (name, v) in Self::FIELDS.iter().zip(self.values()).skip(3) {
            if v <= 0.0 {
                return Err(Error::field(
                    *name,
                    format!("temperature must be > 0 K, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Post-irradiation performance parameters (11 continuous + embrittlement
/// flag).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformanceParams {
    pub delta_s: f64,
    pub delta_b: f64,
    pub delta_e: f64,
    #[serde(rename = "delta_L")]
    pub delta_l: f64,
    #[serde(rename = "H_B")]
    pub h_b: f64,
    #[serde(rename = "H_RC")]
    pub h_rc: f64,
    #[serde(rename = "H_V")]
    pub h_v: f64,
    #[serde(rename = "K_v")]
    pub k_v: f64,
    #[serde(rename = "K_L")]
    pub k_l: f64,
    #[serde(rename = "K_Ic")]
    pub k_ic: f64,
    pub delta_t: f64,
    #[serde(rename = "C_He")]
    pub c_he: bool,
}

impl PerformanceParams {
    pub const FIELDS: [&'static str; 12] = [
        "delta_s", "delta_b", "delta_e", "delta_L", "H_B", "H_RC", "H_V", "K_v", "K_L", "K_Ic",
        "delta_t", "C_He",
    ];
    pub const CONTINUOUS: usize = 11;

    pub fn continuous(&self) -> [f64; 11] {
        [
            self.delta_s,
            self.delta_b,
            self.delta_e,
            self.delta_l,
            self.h_b,
            self.h_rc,
            self.h_v,
            self.k_v,
            self.k_l,
            self.k_ic,
            self.delta_t,
        ]
    }

    pub fn from_parts(v: [f64; 11], c_he: bool) -> Self {
        PerformanceParams {
            delta_s: v[0],
            delta_b: v[1],
            delta_e: v[2],
            delta_l: v[3],
            h_b: v[4],
            h_rc: v[5],
            h_v: v[6],
            k_v: v[7],
            k_l: v[8],
            k_ic: v[9],
            delta_t: v[10],
            c_he,
        }
    }

    /// All 12 fields with the flag as 0/1.
    pub fn values(&self) -> [f64; 12] {
        let c = self.continuous();
        let mut v = [0.0; 12];
        v[..11].copy_from_slice(&c);
        v[11] = if self.c_he { 1.0 } else { 0.0 };
        v
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::FIELDS.iter().zip(self.continuous()) {
            if !v.is_finite() {
                return Err(Error::field(*name, "must be finite"));
            }
        }
        Ok(())
    }
}

/// Cavity counts per radius bin; bin `b` (0-based) holds cavities of radius
/// `b + 1` pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CavityHistogram {
    pub counts: [u32; HIST_BINS],
}

impl CavityHistogram {
    pub fn new(counts: [u32; HIST_BINS]) -> Result<Self> {
        let h = CavityHistogram { counts };
        h.validate()?;
        Ok(h)
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() > HIST_CAPACITY {
            return Err(Error::field(
                "h_v",
                format!(
                    "{} cavities exceed renderer capacity {HIST_CAPACITY}",
                    self.total()
                ),
            ));
        }
        Ok(())
    }

    pub fn as_f64(&self) -> [f64; HIST_BINS] {
        self.counts.map(f64::from)
    }

    /// `bin,radius_px,count` rows for external plotting.
    pub fn plot_table(&self) -> String {
        let mut out = String::from("bin,radius_px,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, i + 1, c));
        }
        out
    }
}

/// 32x32 grayscale image, row-major, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Micrograph {
    pixels: Vec<f64>,
}

impl Micrograph {
    /// Validates the size; values are clamped into `[0, 1]`.
    pub fn new(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != IMAGE_PIXELS {
            return Err(Error::field(
                "image",
                format!(
                    "expected {IMAGE_SIDE}x{IMAGE_SIDE} = {IMAGE_PIXELS} pixels, got {}",
                    pixels.len()
                ),
            ));
        }
        Ok(Micrograph {
            pixels: pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn blank(value: f64) -> Self {
        Micrograph {
            pixels: vec![value.clamp(0.0, 1.0); IMAGE_PIXELS],
        }
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * IMAGE_SIDE + x]
    }

    /// 8-bit levels, `round(255 * value)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Micrograph::new(bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
    }

    /// Snaps every pixel onto the 8-bit grid the dataset stores.
    pub fn quantized(&self) -> Micrograph {
        Micrograph::from_bytes(&self.to_bytes()).expect("size preserved")
    }
}

/// One experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub composition: MaterialComposition,
    pub d_d: ThermoMechParams,
    pub d_c: IrradiationConditions,
    pub h_v: CavityHistogram,
    pub d_r: PerformanceParams,
    pub micrograph: Micrograph,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_plot_rows_echo_counts() {
        let h = CavityHistogram::new([0, 0, 5, 9, 4, 1, 0, 0]).unwrap();
        let table = h.plot_table();
        let rows: Vec<&str> = table.lines().skip(1).collect();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[3], "4,4,9");
        let sum: u32 = rows
            .iter()
            .map(|r| r.rsplit(',').next().unwrap().parse::<u32>().unwrap())
            .sum();
        assert_eq!(sum, h.total());
    }

    #[test]
    fn zero_histogram_plots_eight_zero_rows() {
        let table = CavityHistogram::default().plot_table();
        assert_eq!(
            table.lines().skip(1).filter(|r| r.ends_with(",0")).count(),
            8
        );
    }

    #[test]
    fn histogram_capacity_enforced() {
        assert!(CavityHistogram::new([100, 101, 0, 0, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn micrograph_rejects_wrong_size_and_clamps() {
        assert!(Micrograph::new(vec![0.5; 31 * 32]).is_err());
        let m = Micrograph::new(vec![1.5; IMAGE_PIXELS]).unwrap();
        assert_eq!(m.get(3, 3), 1.0);
    }

    #[test]
    fn quantized_images_survive_byte_round_trip() {
        let m = Micrograph::new(
            (0..IMAGE_PIXELS)
                .map(|i| (i as f64 * 0.013).fract())
                .collect(),
        )
        .unwrap()
        .quantized();
        assert_eq!(Micrograph::from_bytes(&m.to_bytes()).unwrap(), m);
    }

    #[test]
    fn conditions_validation_names_field() {
        let mut c = IrradiationConditions::from_values([1.0, 1.0, -2.0, 600.0, 400.0]);
        let err = c.validate().unwrap_err().to_string();
        assert!(err.starts_with("phi_flux"), "{err}");
        c.phi_flux = 2.0;
        c.t_irr = 0.0;
        assert!(c.validate().unwrap_err().to_string().starts_with("T_irr"));
    }
}
