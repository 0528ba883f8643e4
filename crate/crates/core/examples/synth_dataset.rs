//! Generates a small synthetic dataset, saves it and prints one record.
//!
//! cargo run --example synth_dataset -- /tmp/swell-data

use std::path::PathBuf;

use swellgan::domain::Dataset;
use swellgan::oracle::{cavity_histogram, generate_dataset, swelling_intensity};

fn main() -> swellgan::Result<()> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "synth-example".into()),
    );
    let ds = generate_dataset(28, 42)?;
    ds.save(&out)?;
    assert_eq!(Dataset::load(&out)?, ds);
    println!(
        "{} samples written to {} (version {:?})",
        ds.samples.len(),
        out.display(),
        ds.version
    );

    let s = &ds.samples[3];
    println!(
        "sample {}: T_irr {:.0} K, phi_flux {:.2}",
        s.id, s.d_c.t_irr, s.d_c.phi_flux
    );
    let si = swelling_intensity(&s.composition.fractions, &s.d_c)?;
    println!(
        "swelling intensity {si:.3}; oracle histogram {:?}",
        cavity_histogram(si).counts
    );
    print!("{}", s.h_v.plot_table());
    println!("C_He = {}", s.d_r.c_he);
    Ok(())
}
