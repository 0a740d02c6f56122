//! Experiment configuration.
//!
//! A single JSON file holds every tunable. Unknown keys are a hard error so
//! a typo in a sweep script cannot silently fall back to a default, and the
//! defaults alone reproduce the reference simulation setup (4 subarrays of 16
//! antennas at 60 GHz, M = 3 pilots, 5 dB pilot SNR, 0.125 deg grid).

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::ArrayLayout;
use crate::harness::Method;
use crate::inference::AngularGrid;

/// Array geometry block of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    #[serde(default = "defaults::n_rf")]
    pub n_rf: usize,
    #[serde(default = "defaults::n_per_sub")]
    pub n_per_sub: usize,
    #[serde(default = "defaults::wavelength")]
    pub wavelength: f64,
    #[serde(default = "defaults::rx_sub_pitch")]
    pub rx_sub_pitch: f64,
    #[serde(default = "defaults::n_tx")]
    pub n_tx: usize,
    #[serde(default = "defaults::tx_spacing")]
    pub tx_spacing: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            n_rf: defaults::n_rf(),
            n_per_sub: defaults::n_per_sub(),
            wavelength: defaults::wavelength(),
            rx_sub_pitch: defaults::rx_sub_pitch(),
            n_tx: defaults::n_tx(),
            tx_spacing: defaults::tx_spacing(),
        }
    }
}

/// Full experiment configuration; see the module docs for the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub layout: LayoutConfig,
    /// Smallest midpoint-to-midpoint distance, meters.
    #[serde(default = "defaults::r_min")]
    pub r_min: f64,
    /// Largest midpoint-to-midpoint distance, meters.
    #[serde(default = "defaults::r_max")]
    pub r_max: f64,
    /// Angular resolution parameter; the grid step is `kappa * pi`.
    #[serde(default = "defaults::kappa")]
    pub kappa: f64,
    /// Training slots per subarray (including the gain probe).
    #[serde(default = "defaults::m")]
    pub m: usize,
    /// Zadoff-Chu root, coprime with the subarray size.
    #[serde(default = "defaults::zc_root")]
    pub zc_root: u64,
    /// Pilot SNR in dB.
    #[serde(default = "defaults::snr_pilot_db")]
    pub snr_pilot_db: f64,
    /// Data-transmission SNR in dB used for rate evaluation.
    #[serde(default = "defaults::snr_data_db")]
    pub snr_data_db: f64,
    /// Wall amplitude reflection coefficient; 0 disables multipath.
    #[serde(default = "defaults::reflect_coeff")]
    pub reflect_coeff: f64,
    /// Distance samples per factor-table row.
    #[serde(default = "defaults::n_r_samples")]
    pub n_r_samples: usize,
    /// Additive smoothing per factor-table cell.
    #[serde(default = "defaults::smoothing")]
    pub smoothing: f64,
    /// Monte Carlo trials per batch.
    #[serde(default = "defaults::n_trials")]
    pub n_trials: usize,
    /// Master seed; trial seeds derive from it.
    #[serde(default = "defaults::master_seed")]
    pub master_seed: u64,
    /// Estimators to run: any of "gmp", "ml", "exhaustive".
    #[serde(default = "defaults::methods")]
    pub methods: Vec<String>,
    /// Output directory for CSVs, dumps and factor caches.
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
}

mod defaults {
    use std::path::PathBuf;

    pub fn n_rf() -> usize {
        4
    }
    pub fn n_per_sub() -> usize {
        16
    }
    pub fn wavelength() -> f64 {
        0.005
    }
    pub fn rx_sub_pitch() -> f64 {
        0.0475
    }
    pub fn n_tx() -> usize {
        4
    }
    pub fn tx_spacing() -> f64 {
        0.0133
    }
    pub fn r_min() -> f64 {
        0.4
    }
    pub fn r_max() -> f64 {
        0.8
    }
    pub fn kappa() -> f64 {
        1.0 / 1440.0
    }
    pub fn m() -> usize {
        3
    }
    pub fn zc_root() -> u64 {
        1
    }
    pub fn snr_pilot_db() -> f64 {
        5.0
    }
    pub fn snr_data_db() -> f64 {
        10.0
    }
    pub fn reflect_coeff() -> f64 {
        0.3
    }
    pub fn n_r_samples() -> usize {
        40_000
    }
    pub fn smoothing() -> f64 {
        1e-6
    }
    pub fn n_trials() -> usize {
        500
    }
    pub fn master_seed() -> u64 {
        1
    }
    pub fn methods() -> Vec<String> {
        vec!["gmp".into(), "ml".into(), "exhaustive".into()]
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("out")
    }
}

impl Default for Config {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config parses to defaults")
    }
}

impl Config {
    /// Parse from a JSON string; unknown keys are rejected.
    pub fn from_json(s: &str) -> Result<Self> {
        let config: Config =
            serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Check every field against the preconditions of the module it feeds.
    pub fn validate(&self) -> Result<()> {
        let layout = self.array_layout()?;
        if !(self.r_min > 0.0) || self.r_min > self.r_max {
            return Err(Error::Config(format!(
                "invalid distance bounds [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if self.r_min <= layout.l_rx() / 2.0 {
            return Err(Error::Config(format!(
                "r_min = {} must exceed half the RX aperture ({})",
                self.r_min,
                layout.l_rx() / 2.0
            )));
        }
        if !(self.kappa > 0.0 && self.kappa < 0.5) {
            return Err(Error::Config(format!("kappa = {} outside (0, 0.5)", self.kappa)));
        }
        if self.m < 2 || self.m > layout.n_per_sub + 1 {
            return Err(Error::Config(format!(
                "m = {} outside [2, {}]",
                self.m,
                layout.n_per_sub + 1
            )));
        }
        crate::sounding::zc_sequence(layout.n_per_sub, self.zc_root)
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.reflect_coeff) {
            return Err(Error::Config(format!(
                "reflect_coeff = {} outside [0, 1]",
                self.reflect_coeff
            )));
        }
        if self.n_r_samples < 2 {
            return Err(Error::Config("n_r_samples must be at least 2".into()));
        }
        if !(self.smoothing >= 0.0) {
            return Err(Error::Config("smoothing must be nonnegative".into()));
        }
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if !self.snr_pilot_db.is_finite() || !self.snr_data_db.is_finite() {
            return Err(Error::Config("SNR values must be finite".into()));
        }
        let methods = self.method_list()?;
        if methods.is_empty() {
            return Err(Error::Config("methods list is empty".into()));
        }
        Ok(())
    }

    pub fn array_layout(&self) -> Result<ArrayLayout> {
        ArrayLayout::new(
            self.layout.n_rf,
            self.layout.n_per_sub,
            self.layout.wavelength,
            self.layout.rx_sub_pitch,
            self.layout.n_tx,
            self.layout.tx_spacing,
        )
        .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<AngularGrid> {
        AngularGrid::new(self.kappa).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn method_list(&self) -> Result<Vec<Method>> {
        let mut out = Vec::with_capacity(self.methods.len());
        for name in &self.methods {
            let m: Method = name.parse()?;
            if out.contains(&m) {
                return Err(Error::Config(format!("method `{name}` listed twice")));
            }
            out.push(m);
        }
        Ok(out)
    }
}
