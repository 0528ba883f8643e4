//! Procedural ground truth: swelling intensity, cavity histograms, rendered
//! micrographs and post-irradiation performance, all from frozen constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::domain::materials::{validate_fractions, ALLOYS, ELEMENTS, NUM_ELEMENTS};
use crate::domain::records::{
    CavityHistogram, IrradiationConditions, Micrograph, PerformanceParams, SampleRecord,
    ThermoMechParams, HIST_BINS, IMAGE_PIXELS, IMAGE_SIDE,
};
use crate::domain::Dataset;
use crate::error::{Error, Result};

pub const PHI_REF: f64 = 10.0;
pub const T_ACTIVATION: f64 = 600.0;
pub const ALPHA: f64 = 0.3;
pub const N_MAX: f64 = 40.0;
pub const SIGMA_R: f64 = 1.2;
pub const C_HE_THRESHOLD: f64 = 0.15;
pub const D_D_JITTER: f64 = 0.05;
pub const BACKGROUND_MEAN: f64 = 0.8;
pub const BACKGROUND_STD: f64 = 0.05;
pub const INTERIOR: f64 = 0.2;
pub const RIM: f64 = 0.5;
pub const PLACEMENT_RETRIES: usize = 50;

/// Sampling ranges for irradiation conditions, in field order.
pub const D_C_RANGES: [(f64, f64); 5] = [
    (0.0, 30.0),
    (0.0, 30.0),
    (0.0, 30.0),
    (400.0, 1100.0),
    (300.0, 800.0),
];

/// Susceptibility weight of each element in [`ELEMENTS`] order.
pub fn susceptibility(element: &str) -> f64 {
    match element {
        "Zr" => 0.8,
        "Fe" => 0.4,
        "Ni" => 0.2,
        "Cr" => 0.1,
        _ => 0.0,
    }
}

/// Which property a performance field scales from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Base {
    EqStress,
    EqStrain,
    KIntensity,
    /// The field is `mult * V_frac` with no property dependence.
    Volume,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerfCoef {
    pub field: &'static str,
    pub base: Base,
    pub mult: f64,
    pub kappa: f64,
    pub tau: f64,
}

const fn coef(field: &'static str, base: Base, mult: f64, kappa: f64, tau: f64) -> PerfCoef {
    PerfCoef {
        field,
        base,
        mult,
        kappa,
        tau,
    }
}

/// Coefficients for the 11 continuous performance fields.
pub const PERF_COEFS: [PerfCoef; PerformanceParams::CONTINUOUS] = [
    coef("delta_s", Base::EqStress, 1.0, 1.0, -0.10),
    coef("delta_b", Base::EqStress, 1.45, 0.6, -0.08),
    coef("delta_e", Base::EqStress, 0.85, -0.3, -0.06),
    coef("delta_L", Base::EqStrain, 1000.0, -0.6, 0.05),
    coef("H_B", Base::EqStress, 0.30, 0.5, -0.05),
    coef("H_RC", Base::EqStress, 0.05, 0.5, -0.05),
    coef("H_V", Base::EqStress, 0.32, 0.55, -0.05),
    coef("K_v", Base::Volume, 100.0, 0.0, 0.0),
    coef("K_L", Base::Volume, 30.0, 0.0, 0.0),
    coef("K_Ic", Base::KIntensity, 1.0, -0.5, 0.04),
    coef("delta_t", Base::EqStress, 0.6, -0.4, -0.12),
];

/// Short hash identifying the constants and alloy table a dataset was
/// generated from.
pub fn dataset_version() -> String {
    let mut canon = format!(
        "phi_ref={PHI_REF:?};t_a={T_ACTIVATION:?};alpha={ALPHA:?};n_max={N_MAX:?};\
         sigma_r={SIGMA_R:?};c_he={C_HE_THRESHOLD:?};jitter={D_D_JITTER:?};\
         bg={BACKGROUND_MEAN:?},{BACKGROUND_STD:?};interior={INTERIOR:?};rim={RIM:?};\
         retries={PLACEMENT_RETRIES};ranges={D_C_RANGES:?};\n"
    );
    for e in ELEMENTS {
        canon.push_str(&format!("w[{e}]={:?};", susceptibility(e)));
    }
    canon.push('\n');
    for c in &PERF_COEFS {
        canon.push_str(&format!("{c:?}\n"));
    }
    for a in &ALLOYS {
        canon.push_str(&format!("{:?}\n", a.composition()));
        canon.push_str(&format!("{:?}\n", a.nominal_properties()));
    }
    let digest = Sha256::digest(canon.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Scalar swelling intensity in `[0, 1]` for a composition under the given
/// conditions.
pub fn swelling_intensity(m: &[f64], d_c: &IrradiationConditions) -> Result<f64> {
    validate_fractions(m)?;
    if !(d_c.t_irr > 0.0) {
        return Err(Error::field(
            "T_irr",
            format!("must be > 0 K, got {}", d_c.t_irr),
        ));
    }
    if !(d_c.phi_flux >= 0.0) {
        return Err(Error::field(
            "phi_flux",
            format!("must be >= 0, got {}", d_c.phi_flux),
        ));
    }
    let susc: f64 = m
        .iter()
        .zip(ELEMENTS)
        .map(|(x, e)| x * susceptibility(e))
        .sum();
    let s = (d_c.phi_flux / PHI_REF) * (-T_ACTIVATION / d_c.t_irr).exp() * (1.0 + ALPHA * susc);
    Ok(s.clamp(0.0, 1.0))
}

/// Bin probabilities of a discretized Gaussian over radii 1..=8.
pub fn radius_distribution(s: f64) -> [f64; HIST_BINS] {
    let mu = 1.0 + 5.0 * s;
    let mut p: [f64; HIST_BINS] = std::array::from_fn(|i| {
        let b = (i + 1) as f64;
        (-(b - mu) * (b - mu) / (2.0 * SIGMA_R * SIGMA_R)).exp()
    });
    let z: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v /= z;
    }
    p
}

pub fn cavity_histogram(s: f64) -> CavityHistogram {
    let s = s.clamp(0.0, 1.0);
    let n = (N_MAX * s).round();
    let p = radius_distribution(s);
    CavityHistogram {
        counts: p.map(|pb| (n * pb).round() as u32),
    }
}

#[derive(Clone, Copy)]
struct Disk {
    x: f64,
    y: f64,
    r: f64,
}

/// Draws the background, then places disks from the largest bin down. Each
/// center is uniform over positions where the disk fits inside the frame.
pub fn render_micrograph(h_v: &CavityHistogram, seed: u64) -> Result<Micrograph> {
    h_v.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(render_with(h_v, &mut rng))
}

fn render_with(h_v: &CavityHistogram, rng: &mut ChaCha8Rng) -> Micrograph {
    let noise = Normal::new(BACKGROUND_MEAN, BACKGROUND_STD).expect("valid normal");
    let mut px: Vec<f64> = (0..IMAGE_PIXELS)
        .map(|_| noise.sample(rng).clamp(0.0, 1.0))
        .collect();
    let side = IMAGE_SIDE as i64;
    let mut placed: Vec<Disk> = Vec::new();
    for bin in (0..HIST_BINS).rev() {
        let r = (bin + 1) as i64;
        for _ in 0..h_v.counts[bin] {
            let mut disk = Disk {
                x: 0.0,
                y: 0.0,
                r: r as f64,
            };
            for _ in 0..PLACEMENT_RETRIES {
                disk.x = rng.random_range(r..side - r) as f64;
                disk.y = rng.random_range(r..side - r) as f64;
                let clear = placed.iter().all(|d| {
                    let (dx, dy) = (d.x - disk.x, d.y - disk.y);
                    (dx * dx + dy * dy).sqrt() > d.r + disk.r
                });
                if clear {
                    break;
                }
            }
            placed.push(disk);
            paint(&mut px, disk);
        }
    }
    Micrograph::new(px).expect("size fixed").quantized()
}

fn paint(px: &mut [f64], d: Disk) {
    let r = d.r as i64;
    let (cx, cy) = (d.x as i64, d.y as i64);
    for y in (cy - r).max(0)..=(cy + r).min(IMAGE_SIDE as i64 - 1) {
        for x in (cx - r).max(0)..=(cx + r).min(IMAGE_SIDE as i64 - 1) {
            let dist = (((x - cx).pow(2) + (y - cy).pow(2)) as f64).sqrt();
            let v = if dist <= d.r - 1.0 {
                INTERIOR
            } else if dist <= d.r {
                RIM
            } else {
                continue;
            };
            let p = &mut px[y as usize * IMAGE_SIDE + x as usize];
            *p = p.min(v);
        }
    }
}

/// Fraction of the frame covered by cavities, capped at 1.
pub fn void_fraction(h_v: &CavityHistogram) -> f64 {
    let area: f64 = h_v
        .counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let b = (i + 1) as f64;
            f64::from(c) * std::f64::consts::PI * b * b
        })
        .sum();
    (area / IMAGE_PIXELS as f64).min(1.0)
}

pub fn performance_oracle(
    h_v: &CavityHistogram,
    d_d: &ThermoMechParams,
    d_c: &IrradiationConditions,
) -> PerformanceParams {
    let v = void_fraction(h_v);
    let temp = (d_c.t_irr - 300.0) / 1000.0;
    let values = PERF_COEFS.map(|c| match c.base {
        Base::Volume => c.mult * v,
        _ => {
            let base = c.mult
                * match c.base {
                    Base::EqStress => d_d.eq_stress,
                    Base::EqStrain => d_d.eq_strain,
                    Base::KIntensity => d_d.k_intensity,
                    Base::Volume => unreachable!(),
                };
            base * (1.0 + c.kappa * v + c.tau * temp)
        }
    });
    PerformanceParams::from_parts(values, v > C_HE_THRESHOLD)
}

/// Stream-addressed generator for sample `index`, so every sample can be
/// produced independently of the others.
fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:06}")
}

/// Generates sample `index` of the dataset identified by `seed`.
pub fn generate_sample(index: usize, seed: u64) -> SampleRecord {
    let mut rng = sample_rng(seed, index);
    let alloy = &ALLOYS[index % ALLOYS.len()];
    let nominal = alloy.nominal_properties();
    let jittered = nominal
        .continuous()
        .map(|x| x * (1.0 + rng.random_range(-D_D_JITTER..=D_D_JITTER)));
    let d_d = ThermoMechParams::from_continuous(jittered, nominal.crystal_type);
    let d_c =
        IrradiationConditions::from_values(D_C_RANGES.map(|(lo, hi)| rng.random_range(lo..=hi)));
    let composition = alloy.composition();
    let s = swelling_intensity(&composition.fractions, &d_c).expect("sampled inputs are valid");
    let h_v = cavity_histogram(s);
    let micrograph = render_with(&h_v, &mut rng);
    let d_r = performance_oracle(&h_v, &d_d, &d_c);
    SampleRecord {
        id: sample_id(index),
        composition,
        d_d,
        d_c,
        h_v,
        d_r,
        micrograph,
    }
}

/// Generates `n` samples in parallel. Output is identical to
/// [`generate_dataset_serial`].
pub fn generate_dataset(n: usize, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    let samples = (0..n)
        .into_par_iter()
        .map(|i| generate_sample(i, seed))
        .collect();
    Ok(Dataset::new(Some(dataset_version()), samples))
}

pub fn generate_dataset_serial(n: usize, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    let samples = (0..n).map(|i| generate_sample(i, seed)).collect();
    Ok(Dataset::new(Some(dataset_version()), samples))
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::field("n", "must be >= 1"))
    } else {
        Ok(())
    }
}

/// Composition vector with every susceptibility weight zero.
pub fn inert_composition() -> [f64; NUM_ELEMENTS] {
    let mut m = [0.0; NUM_ELEMENTS];
    m[ELEMENTS
        .iter()
        .position(|e| *e == "Nb")
        .expect("Nb present")] = 1.0;
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn conditions(phi_flux: f64, t_irr: f64) -> IrradiationConditions {
        IrradiationConditions::from_values([1.0, 1.0, phi_flux, t_irr, 400.0])
    }

    #[test]
    fn zero_flux_gives_zero() {
        let m = ALLOYS[4].composition().fractions;
        assert_eq!(
            swelling_intensity(&m, &conditions(0.0, 800.0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn inert_composition_closed_form() {
        let s = swelling_intensity(&inert_composition(), &conditions(10.0, 600.0)).unwrap();
        assert!((s - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        let err = swelling_intensity(&inert_composition(), &conditions(10.0, 0.0)).unwrap_err();
        assert!(err.to_string().contains("T_irr"));
    }

    #[test]
    fn zero_intensity_histogram_is_empty() {
        assert_eq!(cavity_histogram(0.0).total(), 0);
    }

    #[test]
    fn empty_histogram_renders_background_only() {
        let img = render_micrograph(&CavityHistogram::default(), 3).unwrap();
        assert!(img.pixels().iter().all(|&p| p >= 0.5));
    }

    #[test]
    fn single_small_cavity() {
        let mut counts = [0; HIST_BINS];
        counts[0] = 1;
        let img = render_micrograph(&CavityHistogram { counts }, 11).unwrap();
        let dark: Vec<f64> = img.pixels().iter().copied().filter(|&p| p < 0.5).collect();
        assert_eq!(dark.len(), 1);
        assert!((dark[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn rendering_is_deterministic() {
        let h = cavity_histogram(0.6);
        assert_eq!(
            render_micrograph(&h, 5).unwrap(),
            render_micrograph(&h, 5).unwrap()
        );
        assert_ne!(
            render_micrograph(&h, 5).unwrap(),
            render_micrograph(&h, 6).unwrap()
        );
    }

    #[test]
    fn threshold_flag() {
        // Two radius-4 and one radius-3 cavity: (32 + 9) * pi / 1024 ~ 0.126.
        let below = CavityHistogram {
            counts: [0, 0, 1, 2, 0, 0, 0, 0],
        };
        assert!(void_fraction(&below) < C_HE_THRESHOLD);
        let above = CavityHistogram {
            counts: [0, 0, 0, 0, 0, 0, 0, 1],
        };
        assert!(void_fraction(&above) > C_HE_THRESHOLD);
        let d = ALLOYS[0].nominal_properties();
        let c = conditions(1.0, 700.0);
        assert!(!performance_oracle(&below, &d, &c).c_he);
        assert!(performance_oracle(&above, &d, &c).c_he);
    }

    #[test]
    fn version_is_stable_hex() {
        let v = dataset_version();
        assert_eq!(v.len(), 16);
        assert_eq!(v, dataset_version());
    }

    #[test]
    fn parallel_matches_serial() {
        assert_eq!(
            generate_dataset(30, 9).unwrap(),
            generate_dataset_serial(30, 9).unwrap()
        );
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(generate_dataset(0, 1).is_err());
    }

    proptest! {
        #[test]
        fn intensity_monotone(
            alloy in 0usize..14,
            phi in 0.0f64..30.0, dphi in 0.0f64..10.0,
            t in 300.0f64..1200.0, dt in 0.0f64..300.0,
        ) {
            let m = ALLOYS[alloy].composition().fractions;
            let s = swelling_intensity(&m, &conditions(phi, t)).unwrap();
            prop_assert!(swelling_intensity(&m, &conditions(phi + dphi, t)).unwrap() >= s);
            prop_assert!(swelling_intensity(&m, &conditions(phi, t + dt)).unwrap() >= s);
        }

        #[test]
        fn performance_is_pure(s in 0.0f64..1.0, alloy in 0usize..14, t in 400.0f64..1100.0) {
            let h = cavity_histogram(s);
            let d = ALLOYS[alloy].nominal_properties();
            let c = conditions(5.0, t);
            let a = performance_oracle(&h, &d, &c).values().map(f64::to_bits);
            let b = performance_oracle(&h, &d, &c).values().map(f64::to_bits);
            prop_assert_eq!(a, b);
        }
    }
}
