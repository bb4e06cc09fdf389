//! Nonlocal energies of interface dislocation configurations.
//!
//! Numerical routines are generic over [`Scalar`] (`f32` or `f64`); type parameters default
//! to `f64`, which every solver is tuned for.

pub mod circle;
pub mod displacement;
pub mod error;
pub mod halfline;
pub mod interval;
pub mod model;
pub mod optimize;
pub mod quadrature;
pub mod recovery;
pub mod scalar;

pub use circle::{
    circ_dist, constancy_check, energy_erho, energy_tilde, gk_decomposition, gradient_tilde,
    lambda_limit_convergence, minimize_circle, periodic_energy_identity, CircleConfig,
    CircleOptions, CircleResult, LambdaLimitRow, PeriodicDisplacement, PeriodicIdentity,
};
pub use displacement::{
    displacement_from_config, oscillation, PiecewiseAffine, RescaledDisplacement,
};
pub use error::{Error, Result};
pub use halfline::{
    config_energy, energy_and_gradient, energy_exact, energy_quadrature, evenly_spaced_config,
    oscillation_certificate, rescaled_energy, EnergyMethod, EnergyReport, OscillationBound,
};
pub use interval::{
    dislocation_density, dislocation_density_in, estimate_cl, minimize_positions,
    split_energy_diagnostic, subadditivity_check, ClEstimate, ClOptions, DensityHistogram,
    MinimizeOptions, SubadditivityReport,
};
pub use model::{validate_config, DislocationConfig, ModelParams};
pub use recovery::{
    build_recovery_sequence, recovery_from_estimate, RecoveryOptions, RecoveryResult,
};
pub use scalar::{KahanSum, Scalar};
