//! Interaction physics: photon attenuation, Compton kinematics and muon
//! energy-loss straggling.

pub mod attenuation;
pub mod compton;
pub mod landau;

pub use attenuation::{density, linear_coefficients, mass_coefficients, Partials, TABLE_MAX_MEV, TABLE_MIN_MEV};
pub use landau::StragglingParams;
