//! Data-driven reduced-order models on spectral submanifolds: manifold fits in
//! (delay-)embedded observable spaces, extended polar normal forms of the
//! reduced dynamics, backbone curves and forced responses.
//!
//! Numerical code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

pub mod analysis;
pub mod embed;
pub mod error;
pub mod forcing;
pub mod io;
pub mod linalg;
pub mod manifold;
pub mod normalform;
pub mod ode;
pub mod poly;
pub mod scalar;
pub mod system;

pub use analysis::{
    amplitude_map, backbone, nmte, predict_trajectory, response_amplitude, Observable,
};
pub use embed::{delay_embed, embed_all, EmbeddingConfig};
pub use error::{Error, Result};
pub use forcing::{
    calibrate_forcing, forced_sweep_oracle, frc_closed_form_2d, frc_continuation,
    refine_sweep_peak, CalibrationPoint, ForcingConfig, OracleOptions, SweepTable,
};
pub use manifold::{fit_manifold, ManifoldOptions};
pub use normalform::{
    fit_normal_form, fit_reduced_field, select_resonant_monomials, NormalFormOptions, ResonanceSet,
};
pub use scalar::Real;
pub use system::{
    benchmark_chain, build_oscillator_chain, integrate, linearize, slow_eigenspace_ic,
};

pub type MechSystem = system::MechSystem<f64>;
pub type Spectrum = system::Spectrum<f64>;
pub type Trajectory = system::Trajectory<f64>;
pub type HarmonicForcing = system::HarmonicForcing<f64>;
pub type EmbeddedDataset = embed::EmbeddedDataset<f64>;
pub type ManifoldModel = manifold::ManifoldModel<f64>;
pub type ManifoldFit = manifold::ManifoldFit<f64>;
pub type ReducedVectorField = normalform::ReducedVectorField<f64>;
pub type NormalFormModel = normalform::NormalFormModel<f64>;
pub type PolarModel = normalform::PolarModel<f64>;
pub type BackboneCurve = analysis::BackboneCurve<f64>;
pub type FrcBranch = forcing::FrcBranch<f64>;
pub type FrcPoint = forcing::FrcPoint<f64>;
