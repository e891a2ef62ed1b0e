//! Synthetic acoustic data: layered velocity volumes, a finite-difference
//! simulator, input transforms and the dataset directory.

mod dataset;
mod simulate;
mod transforms;
mod velocity;

pub use dataset::{generate_dataset, generate_sample, Dataset, DatasetConfig, Sample, SampleRecord, MANIFEST};
pub use simulate::{
    cfl_limit, fd_simulate, ricker, simulate_shot, spread, AcquisitionConfig, AcquisitionGeometry, SeismicCube,
};
pub use transforms::{
    add_gaussian_noise, denormalize, highpass_filter, minmax_normalize, normalize_with, select_sources,
    subsample_indices, temporal_subsample, Biquad,
};
pub use velocity::{gen_layered_velocity, VelocityConfig, VelocityVolume};
