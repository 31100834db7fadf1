//! Normal-form identification on the reduced coordinates.

pub mod fit;
pub mod polar;
pub mod reduced;
pub mod resonance;

pub use fit::{
    fit_normal_form, modal_decomposition, normal_form_of_field, NormalFormDoc, NormalFormModel,
    NormalFormOptions,
};
pub use polar::{evolve_normal_form, ModalForcing, NormalFormTrajectory, PolarModel, PolarTerm};
pub use reduced::{fit_reduced_field, time_derivative, ReducedVectorField};
pub use resonance::{
    check_outer_resonance, check_outer_resonance_values, phase_vector, select_resonant_monomials,
    OuterResonanceReport, ResonanceSet,
};
