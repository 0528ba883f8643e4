//! The fixed alloy table: element fractions and nominal thermo-mechanical
//! properties for the 14 materials. Values are approximate nominal figures
//! frozen as artifact constants.

use serde::{Deserialize, Serialize};

use super::records::{CrystalType, ThermoMechParams};
use crate::error::{Error, Result};

/// Element set over which compositions are expressed.
pub const ELEMENTS: [&str; 12] = [
    "Zr", "Fe", "Cr", "Ni", "Nb", "Mo", "Ti", "Al", "Mg", "Si", "Cu", "O",
];

pub const NUM_ELEMENTS: usize = ELEMENTS.len();

/// Alloy identity plus its per-element fraction vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialComposition {
    pub alloy_name: String,
    pub fractions: [f64; NUM_ELEMENTS],
}

impl MaterialComposition {
    pub fn new(alloy_name: impl Into<String>, fractions: [f64; NUM_ELEMENTS]) -> Result<Self> {
        let c = MaterialComposition {
            alloy_name: alloy_name.into(),
            fractions,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        validate_fractions(&self.fractions)
    }
}

/// Fractions must be nonnegative and sum to 1 within 1e-3.
pub fn validate_fractions(m: &[f64]) -> Result<()> {
    if m.len() != NUM_ELEMENTS {
        return Err(Error::field(
            "composition",
            format!("expected {NUM_ELEMENTS} element fractions, got {}", m.len()),
        ));
    }
    if let Some((i, x)) = m.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
        return Err(Error::field(
            "composition",
            format!("fraction of {} is {x}, must be >= 0", ELEMENTS[i]),
        ));
    }
    let total: f64 = m.iter().sum();
    if !(0.999..=1.001).contains(&total) {
        return Err(Error::field(
            "composition",
            format!("fractions sum to {total}, must lie in [0.999, 1.001]"),
        ));
    }
    Ok(())
}

/// Nominal (un-jittered) continuous properties of one alloy, in the order of
/// [`ThermoMechParams`] minus the derived Lamé constants and crystal type.
#[derive(Debug)]
struct Nominal {
    e_mod: f64,
    nu: f64,
    eq_stress: f64,
    eq_strain: f64,
    n_harden: f64,
    m_rate: f64,
    k_intensity: f64,
    crystal: CrystalType,
    lattice: f64,
    melting: f64,
    density: f64,
    expansion: f64,
    conductivity: f64,
    heat_capacity: f64,
    heat: f64,
    seebeck: f64,
    resistivity: f64,
}

/// One row of the alloy table.
#[derive(Debug)]
pub struct Alloy {
    pub name: &'static str,
    /// `(element, fraction)` pairs; the remainder of the vector is zero.
    parts: &'static [(&'static str, f64)],
    nominal: Nominal,
}

impl Alloy {
    pub fn composition(&self) -> MaterialComposition {
        let mut m = [0.0; NUM_ELEMENTS];
        for &(el, x) in self.parts {
            let i = ELEMENTS
                .iter()
                .position(|e| *e == el)
                .expect("known element");
            m[i] = x;
        }
        MaterialComposition {
            alloy_name: self.name.to_string(),
            fractions: m,
        }
    }

    pub fn nominal_properties(&self) -> ThermoMechParams {
        let n = &self.nominal;
        ThermoMechParams {
            e_mod: n.e_mod,
            nu: n.nu,
            eq_stress: n.eq_stress,
            eq_strain: n.eq_strain,
            n_harden: n.n_harden,
            m_rate: n.m_rate,
            k_intensity: n.k_intensity,
            lame_lambda: n.e_mod * n.nu / ((1.0 + n.nu) * (1.0 - 2.0 * n.nu)),
            lame_g: n.e_mod / (2.0 * (1.0 + n.nu)),
            crystal_type: n.crystal,
            lattice_param: n.lattice,
            melting_k: n.melting,
            density: n.density,
            thermal_expansion: n.expansion,
            thermal_conductivity: n.conductivity,
            heat_capacity: n.heat_capacity,
            heat: n.heat,
            seebeck: n.seebeck,
            resistivity: n.resistivity,
        }
    }
}

macro_rules! alloy {
    ($name:expr, [$(($el:expr, $x:expr)),* $(,)?],
     $e:expr, $nu:expr, $s:expr, $eps:expr, $n:expr, $m:expr, $k:expr, $ct:ident,
     $a:expr, $tm:expr, $rho:expr, $alpha:expr, $kt:expr, $cp:expr, $h:expr, $se:expr, $r:expr) => {
        Alloy {
            name: $name,
            parts: &[$(($el, $x)),*],
            nominal: Nominal {
                e_mod: $e, nu: $nu, eq_stress: $s, eq_strain: $eps, n_harden: $n, m_rate: $m,
                k_intensity: $k, crystal: CrystalType::$ct, lattice: $a, melting: $tm,
                density: $rho, expansion: $alpha, conductivity: $kt, heat_capacity: $cp,
                heat: $h, seebeck: $se, resistivity: $r,
            },
        }
    };
}

#[rustfmt::skip]
pub static ALLOYS: [Alloy; 14] = [
    alloy!("Inconel718", [("Ni", 0.530), ("Cr", 0.190), ("Fe", 0.1835), ("Nb", 0.051), ("Mo", 0.030), ("Ti", 0.009), ("Al", 0.005), ("Si", 0.0015)],
        200000.0, 0.294, 1035.0, 0.012, 0.10, 0.010, 96.0, Fcc, 0.3598, 1609.0, 8.19, 13.0, 11.4, 0.0255, 17.5, 3.2, 1.25),
    alloy!("InconeX750", [("Ni", 0.720), ("Cr", 0.155), ("Fe", 0.070), ("Ti", 0.025), ("Nb", 0.010), ("Al", 0.007), ("Si", 0.005), ("Cu", 0.005), ("Mg", 0.003)],
        214000.0, 0.290, 690.0, 0.010, 0.14, 0.012, 110.0, Fcc, 0.3580, 1666.0, 8.28, 12.6, 12.0, 0.0253, 17.9, 2.8, 1.22),
    alloy!("Zr1", [("Zr", 0.9930), ("Fe", 0.0020), ("Cr", 0.0010), ("O", 0.0040)],
        96000.0, 0.340, 290.0, 0.020, 0.16, 0.020, 45.0, Hcp, 0.3232, 2120.0, 6.55, 6.0, 21.5, 0.0255, 21.0, 7.5, 0.44),
    alloy!("Zr2", [("Zr", 0.9840), ("Fe", 0.0040), ("Cr", 0.0030), ("Ni", 0.0070), ("O", 0.0020)],
        99300.0, 0.340, 310.0, 0.019, 0.15, 0.021, 42.0, Hcp, 0.3233, 2118.0, 6.55, 6.2, 21.0, 0.0258, 21.0, 7.2, 0.74),
    alloy!("Zr4", [("Zr", 0.9800), ("Fe", 0.0100), ("Cr", 0.0070), ("O", 0.0030)],
        99300.0, 0.342, 330.0, 0.018, 0.14, 0.022, 40.0, Hcp, 0.3234, 2115.0, 6.56, 6.1, 21.6, 0.0260, 21.1, 7.0, 0.74),
    alloy!("Zr1Nb", [("Zr", 0.9885), ("Nb", 0.0100), ("O", 0.0015)],
        95000.0, 0.350, 360.0, 0.017, 0.13, 0.018, 50.0, Hcp, 0.3230, 2110.0, 6.58, 5.8, 18.0, 0.0257, 20.5, 6.5, 0.58),
    alloy!("Zr2.5Nb", [("Zr", 0.9735), ("Nb", 0.0250), ("O", 0.0015)],
        97500.0, 0.350, 460.0, 0.015, 0.12, 0.017, 55.0, Hcp, 0.3228, 2100.0, 6.62, 5.7, 17.0, 0.0262, 20.2, 6.0, 0.60),
    alloy!("1Cr13", [("Fe", 0.8620), ("Cr", 0.1300), ("Si", 0.0060), ("Ni", 0.0020)],
        220000.0, 0.300, 345.0, 0.022, 0.20, 0.008, 120.0, Bcc, 0.2870, 1753.0, 7.75, 10.5, 24.9, 0.0257, 15.2, -4.0, 0.57),
    alloy!("2Cr13", [("Fe", 0.8570), ("Cr", 0.1300), ("Si", 0.0080), ("Ni", 0.0050)],
        223000.0, 0.300, 440.0, 0.020, 0.18, 0.008, 105.0, Bcc, 0.2871, 1743.0, 7.75, 10.3, 24.2, 0.0258, 15.0, -4.5, 0.55),
    alloy!("00Cr13Ni5Mo4", [("Fe", 0.7750), ("Cr", 0.1300), ("Ni", 0.0500), ("Mo", 0.0400), ("Si", 0.0050)],
        201000.0, 0.290, 650.0, 0.014, 0.12, 0.009, 140.0, Bcc, 0.2875, 1720.0, 7.80, 10.8, 16.5, 0.0262, 15.8, -2.5, 0.75),
    alloy!("Au304", [("Fe", 0.7050), ("Cr", 0.1850), ("Ni", 0.0900), ("Si", 0.0100), ("Cu", 0.0100)],
        193000.0, 0.290, 215.0, 0.035, 0.45, 0.012, 220.0, Fcc, 0.3591, 1700.0, 7.93, 17.3, 16.2, 0.0278, 14.8, 1.8, 0.72),
    alloy!("Au317", [("Fe", 0.6250), ("Cr", 0.1900), ("Ni", 0.1300), ("Mo", 0.0350), ("Si", 0.0100), ("Cu", 0.0100)],
        193000.0, 0.295, 240.0, 0.033, 0.42, 0.012, 210.0, Fcc, 0.3595, 1680.0, 8.00, 16.0, 14.6, 0.0281, 15.1, 1.5, 0.79),
    alloy!("Cr17Ti", [("Fe", 0.8150), ("Cr", 0.1700), ("Ti", 0.0100), ("Si", 0.0050)],
        200000.0, 0.280, 300.0, 0.025, 0.22, 0.009, 95.0, Bcc, 0.2873, 1780.0, 7.70, 10.4, 25.1, 0.0256, 15.4, -3.5, 0.60),
    alloy!("Cr25", [("Fe", 0.7350), ("Cr", 0.2500), ("Si", 0.0100), ("Ni", 0.0050)],
        200000.0, 0.280, 280.0, 0.024, 0.20, 0.009, 85.0, Bcc, 0.2876, 1770.0, 7.60, 10.2, 21.0, 0.0259, 15.6, -3.0, 0.67),
];

pub fn alloy_names() -> impl Iterator<Item = &'static str> {
    ALLOYS.iter().map(|a| a.name)
}

pub fn find_alloy(name: &str) -> Option<&'static Alloy> {
    ALLOYS.iter().find(|a| a.name == name)
}

/// Index of `name` in the alloy table, used as the class label.
pub fn alloy_index(name: &str) -> Option<usize> {
    ALLOYS.iter().position(|a| a.name == name)
}

/// Looks up an alloy or returns an error listing the valid names.
pub fn require_alloy(name: &str) -> Result<&'static Alloy> {
    find_alloy(name).ok_or_else(|| {
        Error::field(
            "alloy_name",
            format!(
                "unknown alloy `{name}`; valid names: {}",
                alloy_names().collect::<Vec<_>>().join(", ")
            ),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_composition_is_valid() {
        for a in &ALLOYS {
            a.composition()
                .validate()
                .unwrap_or_else(|e| panic!("{}: {e}", a.name));
        }
    }

    #[test]
    fn compositions_are_pairwise_distinct() {
        for (i, a) in ALLOYS.iter().enumerate() {
            for b in &ALLOYS[i + 1..] {
                assert_ne!(a.composition().fractions, b.composition().fractions);
            }
        }
    }

    #[test]
    fn nominal_properties_satisfy_invariants() {
        for a in &ALLOYS {
            a.nominal_properties().validate().unwrap();
        }
    }

    #[test]
    fn unknown_alloy_lists_valid_names() {
        let err = require_alloy("Unobtainium").unwrap_err().to_string();
        assert!(err.contains("Zr4") && err.contains("Cr25"), "{err}");
    }
}
