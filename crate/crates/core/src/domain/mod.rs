//! Domain records, the alloy table, normalization and the on-disk dataset.

pub mod dataset;
pub mod materials;
pub mod normalize;
pub mod pgm;
pub mod records;

pub use dataset::Dataset;
pub use materials::{
    alloy_index, alloy_names, find_alloy, require_alloy, Alloy, MaterialComposition, ALLOYS,
    ELEMENTS, NUM_ELEMENTS,
};
pub use normalize::{
    fit_stats, FieldStats, NormStats, NormalizedRecord, D_C_WIDTH, D_D_WIDTH, D_R_CONTINUOUS,
};
pub use records::{
    CavityHistogram, CrystalType, IrradiationConditions, Micrograph, PerformanceParams,
    SampleRecord, ThermoMechParams, HIST_BINS, HIST_CAPACITY, IMAGE_PIXELS, IMAGE_SIDE,
};
