use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ansatz::AnsatzLevel;
use crate::error::{Error, Result};
use crate::system::{builtin_by_name, load_system, SystemSpec};

/// Schema version of the experiment file.
pub const CONFIG_VERSION: u32 = 1;

/// One sweep over `eps`, read from TOML. Every field has a default so a file may
/// name only what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Built-in name (`kg`, `example2-cubic`, ...) or path to a system file.
    pub system: String,
    pub n0: usize,
    pub k0: f64,
    /// Strictly decreasing, each in `(0, 0.5]`.
    pub eps: Vec<f64>,
    /// Slow horizon: the fast run ends at `t0 / eps^2`.
    pub t0: f64,
    pub level: AnsatzLevel,
    /// Gaussian initial envelope `amplitude * exp(-(X/width)^2)`.
    pub amplitude: f64,
    pub width: f64,
    /// Length of the slow window `eps L`.
    pub slow_window: f64,
    pub points_per_wavelength: usize,
    /// Fast time step; `None` picks the solver default.
    pub dt: Option<f64>,
    pub nls_dt: f64,
    /// Error samples per run (the final time is always included).
    pub samples: usize,
    /// Recorded for reproducibility; the built-in experiments draw no random input.
    pub seed: u64,
    /// Acceptance window for the fitted error slope.
    pub slope_window: [f64; 2],
    pub target_slope: f64,
    pub tail_k_max: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            system: "kg".into(),
            n0: 0,
            k0: 1.0,
            eps: vec![0.2, 0.1, 0.05],
            t0: 1.0,
            level: AnsatzLevel::Leading,
            amplitude: 1.0,
            width: 1.0,
            slow_window: 40.0,
            points_per_wavelength: 16,
            dt: None,
            nls_dt: 1e-3,
            samples: 20,
            seed: 0,
            slope_window: [1.3, 1.8],
            target_slope: 1.5,
            tail_k_max: 1e6,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} unsupported (expected {CONFIG_VERSION})", self.version));
        }
        if self.eps.is_empty() {
            return bad("eps list is empty".into());
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && **e <= 0.5)) {
            return bad(format!("eps {e} outside (0, 0.5]"));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return bad(format!("eps list {:?} is not strictly decreasing", self.eps));
        }
        if !(self.k0 > 0.0 && self.t0 > 0.0 && self.width > 0.0 && self.slow_window > 0.0 && self.nls_dt > 0.0) {
            return bad("k0, t0, width, slow_window and nls_dt must be positive".into());
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return bad(format!("amplitude {} must be finite and non-negative", self.amplitude));
        }
        if matches!(self.dt, Some(dt) if !(dt > 0.0)) {
            return bad("dt must be positive".into());
        }
        // every retained harmonic below the Nyquist wavenumber, with room to spare
        let need = 2 * (self.level.m_star() as usize + 1);
        if self.points_per_wavelength < need {
            return bad(format!("points_per_wavelength {} < {need} for level {:?}", self.points_per_wavelength, self.level));
        }
        if 10.0 * self.width > self.slow_window {
            return bad(format!("slow window {} too small for width {}", self.slow_window, self.width));
        }
        if self.slope_window[0] > self.slope_window[1] {
            return bad("slope window is reversed".into());
        }
        Ok(())
    }

    pub fn resolve_system(&self) -> Result<SystemSpec> {
        match builtin_by_name(&self.system) {
            Some(s) => Ok(s),
            None => load_system(Path::new(&self.system)),
        }
    }
}
