//! Z-score statistics for every numeric field the networks consume.

use serde::{Deserialize, Serialize};

use super::records::{
    CavityHistogram, IrradiationConditions, PerformanceParams, SampleRecord, ThermoMechParams,
    HIST_BINS,
};
use crate::error::{Error, Result};

/// Width of a normalized property vector: 18 z-scored fields plus the
/// three-way crystal-type one-hot.
pub const D_D_WIDTH: usize = 21;
pub const D_C_WIDTH: usize = 5;
pub const D_R_CONTINUOUS: usize = PerformanceParams::CONTINUOUS;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub mean: f64,
    pub std: f64,
    /// Zero variance on the fitting set; such a field normalizes to 0.
    pub degenerate: bool,
}

impl FieldStats {
    /// Population mean and standard deviation. Values are summed in sorted
    /// order so the result does not depend on sample order.
    pub fn fit(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let mut dev: Vec<f64> = sorted.iter().map(|x| (x - mean) * (x - mean)).collect();
        dev.sort_by(f64::total_cmp);
        let std = (dev.iter().sum::<f64>() / n).sqrt();
        let degenerate = !(std > 1e-12 * mean.abs().max(1.0));
        FieldStats {
            mean,
            std: if degenerate { 0.0 } else { std },
            degenerate,
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        if self.degenerate {
            0.0
        } else {
            (x - self.mean) / self.std
        }
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        if self.degenerate {
            self.mean
        } else {
            z * self.std + self.mean
        }
    }
}

fn fit_columns<const N: usize>(rows: impl Iterator<Item = [f64; N]>) -> Vec<FieldStats> {
    let rows: Vec<[f64; N]> = rows.collect();
    (0..N)
        .map(|j| FieldStats::fit(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect()
}

/// Normalization statistics fitted on a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub d_d: Vec<FieldStats>,
    pub d_c: Vec<FieldStats>,
    pub h_v: Vec<FieldStats>,
    pub d_r: Vec<FieldStats>,
}

/// A record's inputs and targets in network space.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedRecord {
    pub d_d: [f64; D_D_WIDTH],
    pub d_c: [f64; D_C_WIDTH],
    pub h_v: [f64; HIST_BINS],
    pub d_r: [f64; D_R_CONTINUOUS],
    pub c_he: f64,
}

pub fn fit_stats(samples: &[SampleRecord]) -> Result<NormStats> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "normalization needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    Ok(NormStats {
        d_d: fit_columns(samples.iter().map(|s| s.d_d.continuous())),
        d_c: fit_columns(samples.iter().map(|s| s.d_c.values())),
        h_v: fit_columns(samples.iter().map(|s| s.h_v.as_f64())),
        d_r: fit_columns(samples.iter().map(|s| s.d_r.continuous())),
    })
}

fn apply<const N: usize>(stats: &[FieldStats], v: [f64; N]) -> [f64; N] {
    let mut out = [0.0; N];
    for (o, (s, x)) in out.iter_mut().zip(stats.iter().zip(v)) {
        *o = s.normalize(x);
    }
    out
}

impl NormStats {
    pub fn normalize_d_d(&self, d: &ThermoMechParams) -> [f64; D_D_WIDTH] {
        let z = apply(&self.d_d, d.continuous());
        let mut out = [0.0; D_D_WIDTH];
        out[..18].copy_from_slice(&z);
        out[18..].copy_from_slice(&d.crystal_type.one_hot());
        out
    }

    pub fn normalize_d_c(&self, c: &IrradiationConditions) -> [f64; D_C_WIDTH] {
        apply(&self.d_c, c.values())
    }

    pub fn normalize_h_v(&self, h: &CavityHistogram) -> [f64; HIST_BINS] {
        apply(&self.h_v, h.as_f64())
    }

    pub fn normalize_d_r(&self, r: &PerformanceParams) -> [f64; D_R_CONTINUOUS] {
        apply(&self.d_r, r.continuous())
    }

    pub fn denormalize_d_r(&self, z: &[f64]) -> [f64; D_R_CONTINUOUS] {
        let mut out = [0.0; D_R_CONTINUOUS];
        for (o, (s, x)) in out.iter_mut().zip(self.d_r.iter().zip(z)) {
            *o = s.denormalize(*x);
        }
        out
    }

    pub fn normalize(&self, rec: &SampleRecord) -> NormalizedRecord {
        NormalizedRecord {
            d_d: self.normalize_d_d(&rec.d_d),
            d_c: self.normalize_d_c(&rec.d_c),
            h_v: self.normalize_h_v(&rec.h_v),
            d_r: self.normalize_d_r(&rec.d_r),
            c_he: if rec.d_r.c_he { 1.0 } else { 0.0 },
        }
    }

    /// Names of fields that were constant on the fitting set.
    pub fn degenerate_fields(&self) -> Vec<String> {
        let groups: [(&[FieldStats], Vec<&str>); 4] = [
            (&self.d_d, ThermoMechParams::continuous_names().collect()),
            (&self.d_c, IrradiationConditions::FIELDS.to_vec()),
            (&self.h_v, (1..=HIST_BINS).map(|_| "h_v").collect()),
            (
                &self.d_r,
                PerformanceParams::FIELDS[..D_R_CONTINUOUS].to_vec(),
            ),
        ];
        let mut out = Vec::new();
        for (stats, names) in groups {
            for (i, (s, n)) in stats.iter().zip(names).enumerate() {
                if s.degenerate {
                    out.push(if n == "h_v" {
                        format!("h_v[{}]", i + 1)
                    } else {
                        n.to_string()
                    });
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stats serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_z_score() {
        let s = FieldStats::fit(&[1.0, 3.0]);
        assert_eq!(s.normalize(1.0), -1.0);
        assert_eq!(s.normalize(3.0), 1.0);
    }

    #[test]
    fn constant_field_is_flagged_and_zeroed() {
        let s = FieldStats::fit(&[4.2, 4.2, 4.2]);
        assert!(s.degenerate);
        assert_eq!(s.normalize(4.2), 0.0);
        assert_eq!(s.normalize(100.0), 0.0);
        assert_eq!(s.denormalize(0.0), 4.2);
    }

    proptest! {
        #[test]
        fn denormalize_inverts_normalize(
            vals in prop::collection::vec(-1e5f64..1e5, 2..20),
            x in -1e5f64..1e5,
        ) {
            let s = FieldStats::fit(&vals);
            prop_assume!(!s.degenerate);
            let back = s.denormalize(s.normalize(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(s.mean.abs()).max(1.0));
        }

        #[test]
        fn fit_is_order_independent(mut vals in prop::collection::vec(-1e3f64..1e3, 2..30), k in 0usize..30) {
            let a = FieldStats::fit(&vals);
            let len = vals.len();
            vals.rotate_left(k % len);
            vals.reverse();
            let b = FieldStats::fit(&vals);
            prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
            prop_assert_eq!(a.std.to_bits(), b.std.to_bits());
        }
    }
}
