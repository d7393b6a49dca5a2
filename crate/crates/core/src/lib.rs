//! Digital twin of a cryogenic muon tagger built from three silicon wafers
//! read out by kinetic inductance detectors.
//!
//! The crate covers the whole chain:
//!
//! * [`geometry`]: the three-wafer stack, passive copper and shielding, ray/box chords.
//! * [`sources`]: cosmic muons and ambient γ-rays, flux-to-livetime normalization.
//! * [`transport`]: energy deposits (Landau straggling for muons, photoelectric and
//!   Compton interactions for photons) and the seeded, parallel simulation driver.
//! * [`daq`]: synthetic KID-like waveforms, band-pass trigger and 24 ms records.
//! * [`pulse`]: noise PSD estimation, optimal (matched) filtering, selection cuts.
//! * [`coincidence`]: delay histograms, window fit, accidentals, dead time, reports.
//! * [`pipeline`]: the stage-wise simulate / daq / analyze / report orchestration used by
//!   the command-line front end.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coincidence;
pub mod config;
pub mod daq;
pub mod emulate;
pub mod error;
pub mod geometry;
pub mod io;
pub mod manifest;
pub mod physics;
pub mod pipeline;
pub mod pulse;
pub mod seeding;
pub mod sources;
pub mod stats;
pub mod transport;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use geometry::{DetectorId, Ray, Slab, StackGeometry, Vec3};
pub use sources::{AngularModel, Primary, Species};
pub use transport::{EnergyDeposit, SimEvent, SimulationSummary};

/// Version string embedded in every output file and manifest.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
