//! TOML experiment configuration: parsing, validation and hashing.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::operators::SystemCoefficients;
use crate::spectral::C64;
use crate::window::{make_window, BoundaryWindow};

/// Upper bounds that keep a single run at desk scale.
pub const MAX_COMPONENTS: usize = 8;
pub const MAX_MODES: usize = 256;
pub const MAX_STEPS: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of coupled components `N`.
    pub components: usize,
    /// Strictly increasing refinement list of mode counts `M`.
    pub modes: Vec<usize>,
    /// Horizon `T`.
    pub horizon: f64,
    /// Time steps `Nt`.
    pub steps: usize,
    /// Sobolev levels `s` for `observe` and `shift-table`.
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    /// Power `r` in the ellipticity and shift checks.
    #[serde(default = "default_r")]
    pub r: u32,
    /// Fixed shift `mu` instead of the doubling search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub coefficients: CoefficientSpec,
    pub windows: Vec<WindowSpec>,
    #[serde(default)]
    pub control: ControlSpec,
    #[serde(default)]
    pub ellipticity: EllipticitySpec,
    #[serde(default)]
    pub shift: ShiftSpec,
}

fn default_levels() -> Vec<f64> {
    vec![-1.0, 0.0, 1.0]
}

fn default_r() -> u32 {
    1
}

/// A complex entry written as a number or as `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    pub fn value(self) -> C64 {
        match self {
            Entry::Real(re) => C64::new(re, 0.0),
            Entry::Complex([re, im]) => C64::new(re, im),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Zero,
    /// `q = c I`.
    ConstantQ { value: Entry },
    /// `X = c I`.
    ConstantX { value: Entry },
    /// `q = c J` with `J` the rotation generator on components 0 and 1.
    RotationCoupling { value: f64 },
    /// Constant `N x N` matrices given row by row.
    Matrix {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        drift: Option<Vec<Vec<Entry>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        potential: Option<Vec<Vec<Entry>>>,
    },
}

impl CoefficientSpec {
    pub fn build(&self, n: usize) -> Result<SystemCoefficients> {
        let zero = DMatrix::<C64>::zeros(n, n);
        let (drift, potential, label) = match self {
            CoefficientSpec::Zero => (zero.clone(), zero, "zero".to_string()),
            CoefficientSpec::ConstantQ { value } => {
                (zero, DMatrix::identity(n, n) * value.value(), "constant-q".to_string())
            }
            CoefficientSpec::ConstantX { value } => {
                (DMatrix::identity(n, n) * value.value(), zero, "constant-x".to_string())
            }
            CoefficientSpec::RotationCoupling { value } => {
                if n < 2 {
                    return Err(Error::InvalidConfiguration(
                        "rotation-coupling needs at least 2 components".into(),
                    ));
                }
                let mut q = zero.clone();
                q[(0, 1)] = C64::from(*value);
                q[(1, 0)] = C64::from(-*value);
                (zero, q, "rotation-coupling".to_string())
            }
            CoefficientSpec::Matrix { drift, potential } => {
                let d = match drift {
                    Some(rows) => literal(rows, n, "drift")?,
                    None => zero.clone(),
                };
                let p = match potential {
                    Some(rows) => literal(rows, n, "potential")?,
                    None => zero,
                };
                (d, p, "matrix".to_string())
            }
        };
        if drift.iter().chain(potential.iter()).any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::InvalidConfiguration("coefficients must be finite".into()));
        }
        Ok(SystemCoefficients::constant(drift, potential)?.with_label(label))
    }

    pub fn has_drift(&self) -> bool {
        match self {
            CoefficientSpec::ConstantX { value } => value.value() != C64::new(0.0, 0.0),
            CoefficientSpec::Matrix { drift: Some(rows), .. } => {
                rows.iter().flatten().any(|e| e.value() != C64::new(0.0, 0.0))
            }
            _ => false,
        }
    }
}

fn literal(rows: &[Vec<Entry>], n: usize, what: &str) -> Result<DMatrix<C64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidConfiguration(format!("{what} must be a {n}x{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j].value()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Endpoints {
    Both,
    Left,
    Right,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub id: u8,
    pub endpoints: Endpoints,
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub end: f64,
    #[serde(default)]
    pub plateau: f64,
}

impl WindowSpec {
    pub fn build(&self, horizon: f64) -> Result<BoundaryWindow> {
        if self.endpoints == Endpoints::None {
            return Ok(BoundaryWindow::none());
        }
        let w = make_window(horizon, self.start, self.end, self.plateau)?;
        Ok(match self.endpoints {
            Endpoints::Both => BoundaryWindow::both(w),
            Endpoints::Left => BoundaryWindow::left_only(w),
            Endpoints::Right => BoundaryWindow::right_only(w),
            Endpoints::None => BoundaryWindow::none(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSpec {
    /// Mode count; the first entry of `modes` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
    pub target_modes: usize,
    /// Fourier harmonics `K`; `ceil(M T / 2) + 8` capped at `Nt / 8` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub harmonics: Option<usize>,
    pub level: f64,
    /// Window id; the first window when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<u8>,
    pub tolerance: f64,
}

impl Default for ControlSpec {
    fn default() -> Self {
        Self { modes: None, target_modes: 8, harmonics: None, level: 0.0, window: None, tolerance: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EllipticitySpec {
    pub levels: Vec<f64>,
    pub trials: usize,
    pub active_modes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<u8>,
    /// Allowed relative spread of the max ratio between the last two mode counts.
    pub tolerance: f64,
}

impl Default for EllipticitySpec {
    fn default() -> Self {
        Self { levels: vec![0.0], trials: 20, active_modes: 8, window: None, tolerance: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftSpec {
    pub inner: u8,
    /// Enlarged window; equal to `inner` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer: Option<u8>,
    pub tolerance: f64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self { inner: 1, outer: None, tolerance: 0.1 }
    }
}

/// Parses and validates a TOML document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfiguration(msg));
        if self.components == 0 || self.components > MAX_COMPONENTS {
            return bad(format!("components must be in 1..={MAX_COMPONENTS}"));
        }
        if self.modes.is_empty() || self.modes[0] == 0 || *self.modes.last().unwrap() > MAX_MODES {
            return bad(format!("modes must be a non-empty list in 1..={MAX_MODES}"));
        }
        if self.modes.windows(2).any(|p| p[0] >= p[1]) {
            return bad("modes must be strictly increasing".into());
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad("horizon must be positive and finite".into());
        }
        if !(16..=MAX_STEPS).contains(&self.steps) {
            return bad(format!("steps must be in 16..={MAX_STEPS}"));
        }
        let finite_list = |v: &[f64]| !v.is_empty() && v.iter().all(|s| s.is_finite() && s.abs() <= 8.0);
        if !finite_list(&self.levels) {
            return bad("levels must be a non-empty list of finite values in [-8, 8]".into());
        }
        if self.r == 0 || self.r > 4 {
            return bad("r must be in 1..=4".into());
        }
        if let Some(mu) = self.mu {
            if !(mu.is_finite() && mu > 0.0) {
                return bad("mu must be positive and finite".into());
            }
        }
        self.coefficients.build(self.components)?;
        if self.windows.is_empty() {
            return bad("at least one window is required".into());
        }
        let mut ids = BTreeSet::new();
        for w in &self.windows {
            if !ids.insert(w.id) {
                return bad(format!("duplicate window id {}", w.id));
            }
            w.build(self.horizon)?;
        }
        let known = |id: Option<u8>, what: &str| match id {
            Some(id) if !ids.contains(&id) => bad(format!("{what} refers to unknown window {id}")),
            _ => Ok(()),
        };
        known(self.control.window, "control.window")?;
        known(self.ellipticity.window, "ellipticity.window")?;
        known(Some(self.shift.inner), "shift.inner")?;
        known(self.shift.outer, "shift.outer")?;
        let c = &self.control;
        let control_modes = c.modes.unwrap_or(self.modes[0]);
        if control_modes == 0 || control_modes > MAX_MODES || c.target_modes == 0 || c.target_modes > control_modes {
            return bad("control needs 1 <= target_modes <= modes <= MAX_MODES".into());
        }
        if let Some(h) = c.harmonics {
            if h == 0 || h > self.steps / 8 {
                return bad("control.harmonics must be in 1..=steps/8".into());
            }
        }
        if !(c.level.is_finite() && c.level.abs() <= 8.0 && c.tolerance.is_finite() && c.tolerance > 0.0) {
            return bad("control.level and control.tolerance must be finite, tolerance positive".into());
        }
        let e = &self.ellipticity;
        if !finite_list(&e.levels) || e.trials == 0 || e.trials > 1000 || e.active_modes == 0 || e.active_modes > self.modes[0] {
            return bad("ellipticity needs finite levels, 1..=1000 trials and 1 <= active_modes <= modes[0]".into());
        }
        if !(e.tolerance.is_finite() && e.tolerance > 0.0) {
            return bad("ellipticity.tolerance must be positive".into());
        }
        if !(self.shift.tolerance.is_finite() && self.shift.tolerance > 0.0) {
            return bad("shift.tolerance must be positive".into());
        }
        Ok(())
    }

    pub fn window(&self, id: u8) -> Result<BoundaryWindow> {
        self.windows
            .iter()
            .find(|w| w.id == id)
            .ok_or_else(|| Error::InvalidConfiguration(format!("unknown window {id}")))?
            .build(self.horizon)
    }

    /// Canonical TOML re-serialization of the parsed config.
    pub fn canonical(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical`].
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical()?.as_bytes());
        Ok(hex::encode(&digest[..8]))
    }
}

/// Built-in configuration: free scalar wave observed at both endpoints,
/// `T = 2.5`, with a strictly larger second window for the shift sweep.
pub const DEFAULT_CONFIG: &str = r#"components = 1
modes = [16, 32, 64]
horizon = 2.5
steps = 1024
levels = [-1.0, 0.0, 1.0]
r = 1
seed = 7

[coefficients]
family = "zero"

[[windows]]
id = 1
endpoints = "both"
start = 0.25
end = 2.25
plateau = 0.6

[[windows]]
id = 2
endpoints = "both"
start = 0.15
end = 2.35
plateau = 0.6

[control]
target_modes = 8
tolerance = 1e-4

[ellipticity]
levels = [0.0]
trials = 20
active_modes = 8

[shift]
inner = 1
outer = 2
tolerance = 0.1
"#;

pub fn default_config() -> ExperimentConfig {
    parse_config(DEFAULT_CONFIG).expect("built-in config is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parses_and_hash_is_stable() {
        let cfg = default_config();
        assert_eq!(cfg.modes, vec![16, 32, 64]);
        let again = parse_config(&cfg.canonical().unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash().unwrap(), cfg.hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 16);
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(other.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(matches!(parse_config("components = ["), Err(Error::ConfigParse(_))));
        assert!(matches!(parse_config("unknown = 1"), Err(Error::ConfigParse(_))));
        let swap = DEFAULT_CONFIG.replace("modes = [16, 32, 64]", "modes = [32, 16]");
        assert!(matches!(parse_config(&swap), Err(Error::InvalidConfiguration(_))));
        let window = DEFAULT_CONFIG.replace("end = 2.25", "end = 2.75");
        assert!(matches!(parse_config(&window), Err(Error::InvalidWindow(_))));
        let rot = DEFAULT_CONFIG.replace("family = \"zero\"", "family = \"rotation-coupling\"\nvalue = 2.0");
        assert!(matches!(parse_config(&rot), Err(Error::InvalidConfiguration(_))));
    }

    #[test]
    fn matrix_literals() {
        let text = DEFAULT_CONFIG
            .replace("components = 1", "components = 2")
            .replace(
                "family = \"zero\"",
                "family = \"matrix\"\npotential = [[1.0, [0.0, 2.0]], [0.5, -1.0]]",
            );
        let cfg = parse_config(&text).unwrap();
        let coeffs = cfg.coefficients.build(2).unwrap();
        let q = coeffs.potential(0.3);
        assert_eq!(q[(0, 1)], C64::new(0.0, 2.0));
        assert_eq!(q[(1, 1)], C64::new(-1.0, 0.0));
        assert!(!cfg.coefficients.has_drift());
        let wrong = text.replace("[0.5, -1.0]", "[0.5]");
        assert!(matches!(parse_config(&wrong), Err(Error::InvalidConfiguration(_))));
    }
}
