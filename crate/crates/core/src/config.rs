//! Run configuration: one TOML document with a section per stage.
//!
//! Every section has serde defaults, unknown keys are rejected, and
//! [`RunConfig::validate`] checks cross-field constraints. The reference
//! file `configs/paper_defaults.toml` spells out every default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coincidence::AnalysisParams;
use crate::daq::DaqParams;
use crate::error::{Error, Result};
use crate::geometry::GeometryParams;
use crate::sources::{AngularModel, FluxConfig, GammaSpectrumParams, MuonSpectrum};
use crate::transport::TransportParams;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourcesParams {
    pub flux: FluxConfig,
    pub angular: AngularModel,
    pub muon_spectrum: MuonSpectrum,
    pub gamma_spectrum: GammaSpectrumParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunParams {
    pub seed: u64,
    /// Primaries of the first species with non-zero flux.
    pub n_primaries: Option<u64>,
    /// Exposure to simulate, seconds.
    pub livetime_s: Option<f64>,
    pub output_dir: String,
    /// Worker threads; 0 uses all cores. Never affects outputs.
    pub workers: usize,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            seed: 1,
            n_primaries: None,
            livetime_s: Some(3600.0),
            output_dir: "out".into(),
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunLength {
    Primaries(u64),
    Livetime(f64),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: GeometryParams,
    pub sources: SourcesParams,
    pub transport: TransportParams,
    pub daq: DaqParams,
    pub analysis: AnalysisParams,
    pub run: RunParams,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        crate::geometry::StackGeometry::from_params(&self.geometry)?;
        self.sources.flux.validate()?;
        self.sources.angular.validate()?;
        self.sources.muon_spectrum.validate()?;
        crate::sources::GammaSpectrum::new(&self.sources.gamma_spectrum)?;
        self.transport.validate()?;
        self.daq.validate()?;
        self.analysis.validate()?;
        self.run_length()?;
        Ok(())
    }

    pub fn run_length(&self) -> Result<RunLength> {
        match (self.run.n_primaries, self.run.livetime_s) {
            (Some(n), None) => Ok(RunLength::Primaries(n)),
            (None, Some(t)) if t >= 0.0 && t.is_finite() => Ok(RunLength::Livetime(t)),
            (None, Some(t)) => Err(Error::Config(format!("run.livetime_s must be >= 0, got {t}"))),
            (Some(_), Some(_)) => Err(Error::Config(
                "set only one of run.n_primaries and run.livetime_s".into(),
            )),
            (None, None) => Err(Error::Config(
                "one of run.n_primaries or run.livetime_s is required".into(),
            )),
        }
    }

    pub fn set_run_length(&mut self, length: RunLength) {
        match length {
            RunLength::Primaries(n) => {
                self.run.n_primaries = Some(n);
                self.run.livetime_s = None;
            }
            RunLength::Livetime(t) => {
                self.run.n_primaries = None;
                self.run.livetime_s = Some(t);
            }
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring settings that cannot
    /// change outputs (worker count, output directory).
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.run.workers = 0;
        canonical.run.output_dir = String::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
