//! Scenario configuration: array geometry, gains, incident direction, masks
//! and solver knobs.
//!
//! Scenarios are stored as one flat JSON document. Every field is optional
//! and falls back to the reference deployment (48x48 half-wavelength array at
//! 3.5 GHz, BS at (-45 deg, 144 deg), 10 dB sidelobe gap). Angles are in
//! degrees, frequencies in Hz, gains in dB. Linear values are derived once,
//! when the scenario is built.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, Violation};
use crate::masks::MaskSpec;
use crate::{db_to_linear, SPEED_OF_LIGHT};

/// Azimuth/elevation pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnglePair {
    /// Azimuth, degrees in [-180, 180].
    pub phi: f64,
    /// Elevation (from +z), degrees in [0, 180].
    pub theta: f64,
}

impl AnglePair {
    pub const fn new(phi: f64, theta: f64) -> Self {
        Self { phi, theta }
    }

    pub fn radians(&self) -> (f64, f64) {
        (self.phi.to_radians(), self.theta.to_radians())
    }

    fn check(&self, path: &str, out: &mut Vec<Violation>) {
        if !(self.phi >= -180.0 && self.phi <= 180.0) {
            out.push(Violation::new(
                format!("{path}phi"),
                format!("azimuth {} outside [-180, 180]", self.phi),
            ));
        }
        if !(self.theta >= 0.0 && self.theta <= 180.0) {
            out.push(Violation::new(
                format!("{path}theta"),
                format!("elevation {} outside [0, 180]", self.theta),
            ));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    pub m_y: usize,
    pub m_z: usize,
    /// Element spacing along y, meters.
    pub d_y: f64,
    /// Element spacing along z, meters.
    pub d_z: f64,
    pub carrier_freq_hz: f64,
}

impl ArrayGeometry {
    /// Half-wavelength spaced array.
    pub fn half_wavelength(m_y: usize, m_z: usize, carrier_freq_hz: f64) -> Self {
        let d = half_wavelength(carrier_freq_hz);
        Self {
            m_y,
            m_z,
            d_y: d,
            d_z: d,
            carrier_freq_hz,
        }
    }

    pub fn elements(&self) -> usize {
        self.m_y * self.m_z
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.carrier_freq_hz / SPEED_OF_LIGHT
    }
}

pub fn half_wavelength(carrier_freq_hz: f64) -> f64 {
    SPEED_OF_LIGHT / (2.0 * carrier_freq_hz)
}

/// BS and element peak gains. Linear values are cached at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainConfig {
    g_t_db: f64,
    g_db: f64,
    g_t: f64,
    g: f64,
    erp_exponent: Option<f64>,
}

impl GainConfig {
    pub fn new(g_t_db: f64, g_db: f64) -> Self {
        Self {
            g_t_db,
            g_db,
            g_t: db_to_linear(g_t_db),
            g: db_to_linear(g_db),
            erp_exponent: None,
        }
    }

    /// Replaces the pattern exponent derived from the element gain.
    pub fn with_erp_exponent(mut self, exponent: Option<f64>) -> Self {
        self.erp_exponent = exponent;
        self
    }

    /// Exponent of the element pattern: the override if set, else `g/2 - 1`.
    pub fn erp_exponent(&self) -> f64 {
        self.erp_exponent.unwrap_or(self.g / 2.0 - 1.0)
    }

    pub fn erp_exponent_override(&self) -> Option<f64> {
        self.erp_exponent
    }

    pub fn g_t_db(&self) -> f64 {
        self.g_t_db
    }
    pub fn g_db(&self) -> f64 {
        self.g_db
    }
    /// BS peak gain, linear.
    pub fn g_t_linear(&self) -> f64 {
        self.g_t
    }
    /// Element peak gain, linear. The element pattern exponent is `g/2 - 1`,
    /// negative when the element gain is below 2 (about 3 dB).
    pub fn g_linear(&self) -> f64 {
        self.g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Maximize `10 log10 rho`.
    #[default]
    Db,
    /// Maximize `rho`.
    Linear,
}

/// Starting factors of the alternating optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AoStart {
    /// Per-axis linear chirps spread over the mainlobe's direction cosines.
    #[default]
    Chirp,
    /// Coherent focus on the mainlobe center.
    Focus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    delta_db: f64,
    delta: f64,
    /// DC penalty weight.
    pub sigma: f64,
    /// Stop threshold on the per-iteration objective increase.
    pub xi: f64,
    /// Maximum AO rounds.
    pub zeta: usize,
    pub max_sca_iters: usize,
    /// Relative primal/dual residual tolerance of the conic solver.
    pub residual_tol: f64,
    /// `(trace - lambda_max) / lambda_max` below which a lifted matrix counts as rank one.
    pub rank_ratio_tol: f64,
    pub max_conic_iters: usize,
    pub objective_mode: ObjectiveMode,
    /// Size guard for the joint (fully lifted) method.
    pub joint_max_elements: usize,
    pub ao_start: AoStart,
}

impl SolverConfig {
    pub fn delta_db(&self) -> f64 {
        self.delta_db
    }
    /// Sidelobe gap as a power ratio.
    pub fn delta_linear(&self) -> f64 {
        self.delta
    }
    pub fn with_delta_db(mut self, delta_db: f64) -> Self {
        self.delta_db = delta_db;
        self.delta = db_to_linear(delta_db);
        self
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            delta_db: 0.0,
            delta: 1.0,
            sigma: 20.0,
            xi: 1e-3,
            zeta: 10,
            max_sca_iters: 50,
            residual_tol: 1e-6,
            rank_ratio_tol: 1e-3,
            max_conic_iters: 20_000,
            objective_mode: ObjectiveMode::Db,
            joint_max_elements: 256,
            ao_start: AoStart::default(),
        }
        .with_delta_db(10.0)
    }
}

/// BS-IRS and IRS-UE distances for absolute link budgets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub d1_m: f64,
    pub d2_m: f64,
}

/// A complete experiment description. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub geometry: ArrayGeometry,
    pub gains: GainConfig,
    /// BS direction seen from the surface.
    pub incident: AnglePair,
    pub mask: MaskSpec,
    pub solver: SolverConfig,
    pub link: Option<LinkGeometry>,
}

impl Default for Scenario {
    fn default() -> Self {
        let f = 3.5e9;
        Scenario {
            geometry: ArrayGeometry::half_wavelength(48, 48, f),
            gains: GainConfig::new(14.5, 4.0),
            incident: AnglePair::new(-45.0, 144.0),
            mask: MaskSpec::default(),
            solver: SolverConfig::default(),
            link: None,
        }
    }
}

impl Scenario {
    /// The aperture comparison setup: mainlobe [-10, 10] x [120, 140] deg and
    /// a 5 dB sidelobe gap on an `m x m` array.
    pub fn comparison(m: usize) -> Self {
        let base = Scenario::default();
        Scenario {
            geometry: ArrayGeometry::half_wavelength(m, m, base.geometry.carrier_freq_hz),
            mask: MaskSpec::rect([-10.0, 10.0], [120.0, 140.0]),
            solver: base.solver.with_delta_db(5.0),
            ..base
        }
    }

    /// Same scenario on a different (half-wavelength) aperture.
    pub fn with_size(&self, m_y: usize, m_z: usize) -> Self {
        let mut s = self.clone();
        s.geometry.m_y = m_y;
        s.geometry.m_z = m_z;
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.resolve()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScenarioFile::from(self)).expect("scenario serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&ScenarioFile::from(self)).expect("scenario serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Every invariant violation; empty when the scenario is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let g = &self.geometry;
        if g.m_y < 1 {
            out.push(Violation::new("m_y", "must be >= 1"));
        }
        if g.m_z < 1 {
            out.push(Violation::new("m_z", "must be >= 1"));
        }
        if !(g.d_y > 0.0 && g.d_y.is_finite()) {
            out.push(Violation::new("d_y_m", "must be > 0"));
        }
        if !(g.d_z > 0.0 && g.d_z.is_finite()) {
            out.push(Violation::new("d_z_m", "must be > 0"));
        }
        if !(g.carrier_freq_hz > 0.0 && g.carrier_freq_hz.is_finite()) {
            out.push(Violation::new("carrier_freq_hz", "must be > 0"));
        }
        if !(self.gains.g_t_db.is_finite()) {
            out.push(Violation::new("g_t_db", "must be finite"));
        }
        if !(self.gains.g_db.is_finite() && self.gains.g > 0.0) {
            out.push(Violation::new("g_db", "must be finite"));
        }
        if !self.gains.erp_exponent().is_finite() {
            out.push(Violation::new("erp_exponent", "must be finite"));
        }

        let before = out.len();
        self.incident.check("", &mut out);
        for v in &mut out[before..] {
            v.field = v.field.replace("phi", "phi_i").replace("theta", "theta_i");
        }
        if out.len() == before && crate::channel::erp_base(self.incident) <= 0.0 {
            out.push(Violation::new(
                "phi_i/theta_i",
                "incident direction is behind the surface (element pattern is zero)",
            ));
        }

        let s = &self.solver;
        if !(s.delta_db >= 0.0) {
            out.push(Violation::new("solver.delta_db", "sidelobe gap must be >= 0 dB"));
        }
        if !(s.sigma > 0.0) {
            out.push(Violation::new("solver.sigma", "must be > 0"));
        }
        if !(s.xi > 0.0) {
            out.push(Violation::new("solver.xi", "must be > 0"));
        }
        if s.zeta < 1 {
            out.push(Violation::new("solver.zeta", "must be >= 1"));
        }
        if s.max_sca_iters < 1 {
            out.push(Violation::new("solver.max_sca_iters", "must be >= 1"));
        }
        if !(s.residual_tol > 0.0) {
            out.push(Violation::new("solver.residual_tol", "must be > 0"));
        }
        if !(s.rank_ratio_tol > 0.0) {
            out.push(Violation::new("solver.rank_ratio_tol", "must be > 0"));
        }
        if s.max_conic_iters < 1 {
            out.push(Violation::new("solver.max_conic_iters", "must be >= 1"));
        }

        if let Some(l) = &self.link {
            if !(l.d1_m >= 0.0) {
                out.push(Violation::new("d1_m", "must be >= 0"));
            }
            if !(l.d2_m >= 0.0) {
                out.push(Violation::new("d2_m", "must be >= 0"));
            }
        }
        self.mask.check(&mut out);
        out
    }
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_json(&text)
}

fn default_solver_file() -> SolverFile {
    SolverFile::from(&SolverConfig::default())
}

/// On-disk form of [`Scenario`].
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    m_y: Option<i64>,
    #[serde(default)]
    m_z: Option<i64>,
    #[serde(default)]
    d_y_m: Option<f64>,
    #[serde(default)]
    d_z_m: Option<f64>,
    #[serde(default)]
    carrier_freq_hz: Option<f64>,
    #[serde(default)]
    g_t_db: Option<f64>,
    #[serde(default)]
    g_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    erp_exponent: Option<f64>,
    #[serde(default)]
    phi_i: Option<f64>,
    #[serde(default)]
    theta_i: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d1_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d2_m: Option<f64>,
    #[serde(default)]
    mask: Option<MaskSpec>,
    #[serde(default = "default_solver_file")]
    solver: SolverFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SolverFile {
    delta_db: f64,
    sigma: f64,
    xi: f64,
    zeta: i64,
    max_sca_iters: i64,
    residual_tol: f64,
    rank_ratio_tol: f64,
    max_conic_iters: i64,
    objective_mode: ObjectiveMode,
    joint_max_elements: i64,
    ao_start: AoStart,
}

impl Default for SolverFile {
    fn default() -> Self {
        default_solver_file()
    }
}

impl From<&SolverConfig> for SolverFile {
    fn from(s: &SolverConfig) -> Self {
        SolverFile {
            delta_db: s.delta_db,
            sigma: s.sigma,
            xi: s.xi,
            zeta: s.zeta as i64,
            max_sca_iters: s.max_sca_iters as i64,
            residual_tol: s.residual_tol,
            rank_ratio_tol: s.rank_ratio_tol,
            max_conic_iters: s.max_conic_iters as i64,
            objective_mode: s.objective_mode,
            joint_max_elements: s.joint_max_elements as i64,
            ao_start: s.ao_start,
        }
    }
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        ScenarioFile {
            m_y: Some(s.geometry.m_y as i64),
            m_z: Some(s.geometry.m_z as i64),
            d_y_m: Some(s.geometry.d_y),
            d_z_m: Some(s.geometry.d_z),
            carrier_freq_hz: Some(s.geometry.carrier_freq_hz),
            g_t_db: Some(s.gains.g_t_db),
            g_db: Some(s.gains.g_db),
            erp_exponent: s.gains.erp_exponent,
            phi_i: Some(s.incident.phi),
            theta_i: Some(s.incident.theta),
            d1_m: s.link.map(|l| l.d1_m),
            d2_m: s.link.map(|l| l.d2_m),
            mask: Some(s.mask.clone()),
            solver: SolverFile::from(&s.solver),
        }
    }
}

fn count(v: i64, field: &str, out: &mut Vec<Violation>) -> usize {
    if v < 1 {
        out.push(Violation::new(field, format!("must be >= 1, got {v}")));
        0
    } else {
        v as usize
    }
}

impl ScenarioFile {
    fn resolve(self) -> Result<Scenario> {
        let base = Scenario::default();
        let mut early = Vec::new();
        let m_y = count(self.m_y.unwrap_or(base.geometry.m_y as i64), "m_y", &mut early);
        let m_z = count(self.m_z.unwrap_or(base.geometry.m_z as i64), "m_z", &mut early);
        let sf = &self.solver;
        let zeta = count(sf.zeta, "solver.zeta", &mut early);
        let max_sca_iters = count(sf.max_sca_iters, "solver.max_sca_iters", &mut early);
        let max_conic_iters = count(sf.max_conic_iters, "solver.max_conic_iters", &mut early);
        let joint_max_elements = count(sf.joint_max_elements, "solver.joint_max_elements", &mut early);

        let f = self.carrier_freq_hz.unwrap_or(base.geometry.carrier_freq_hz);
        let link = match (self.d1_m, self.d2_m) {
            (None, None) => None,
            (Some(d1_m), Some(d2_m)) => Some(LinkGeometry { d1_m, d2_m }),
            _ => {
                early.push(Violation::new("d1_m/d2_m", "both distances must be given together"));
                None
            }
        };
        let solver = SolverConfig {
            sigma: sf.sigma,
            xi: sf.xi,
            zeta,
            max_sca_iters,
            residual_tol: sf.residual_tol,
            rank_ratio_tol: sf.rank_ratio_tol,
            max_conic_iters,
            objective_mode: sf.objective_mode,
            joint_max_elements,
            ao_start: sf.ao_start,
            ..SolverConfig::default()
        }
        .with_delta_db(sf.delta_db);

        let scenario = Scenario {
            geometry: ArrayGeometry {
                m_y,
                m_z,
                d_y: self.d_y_m.unwrap_or_else(|| half_wavelength(f)),
                d_z: self.d_z_m.unwrap_or_else(|| half_wavelength(f)),
                carrier_freq_hz: f,
            },
            gains: GainConfig::new(
                self.g_t_db.unwrap_or(base.gains.g_t_db),
                self.g_db.unwrap_or(base.gains.g_db),
            )
            .with_erp_exponent(self.erp_exponent),
            incident: AnglePair::new(
                self.phi_i.unwrap_or(base.incident.phi),
                self.theta_i.unwrap_or(base.incident.theta),
            ),
            mask: self.mask.unwrap_or_default(),
            solver,
            link,
        };
        let mut violations = early;
        for v in scenario.validate() {
            if !violations.iter().any(|e| e.field == v.field) {
                violations.push(v);
            }
        }
        if violations.is_empty() {
            Ok(scenario)
        } else {
            Err(Error::Validation(violations))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fields(e: Error) -> Vec<String> {
        match e {
            Error::Validation(v) => v.into_iter().map(|v| v.field).collect(),
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn minimal_file_gets_reference_defaults() {
        let s = Scenario::from_json(r#"{"m_y": 48, "m_z": 48}"#).unwrap();
        assert_eq!(s.geometry.carrier_freq_hz, 3.5e9);
        assert_eq!(s.solver.delta_db(), 10.0);
        assert_eq!(s.solver.sigma, 20.0);
        assert_eq!(s.solver.xi, 0.001);
        assert_eq!(s.solver.zeta, 10);
        assert_eq!(s.incident, AnglePair::new(-45.0, 144.0));
        assert_eq!(s.gains.g_t_db(), 14.5);
        assert_eq!(s.gains.g_db(), 4.0);
        assert_eq!(s.geometry.d_y, SPEED_OF_LIGHT / 7.0e9);
        assert_eq!(s, Scenario::default());
    }

    #[test]
    fn zero_count_names_field() {
        let f = fields(Scenario::from_json(r#"{"m_y": 0}"#).unwrap_err());
        assert_eq!(f, vec!["m_y"]);
    }

    #[test]
    fn elevation_out_of_range() {
        let f = fields(Scenario::from_json(r#"{"theta_i": 200}"#).unwrap_err());
        assert_eq!(f, vec!["theta_i"]);
    }

    #[test]
    fn malformed_is_parse_error() {
        assert!(matches!(Scenario::from_json("{m_y: 4"), Err(Error::Parse(_))));
        assert!(matches!(Scenario::from_json(r#"{"m_q": 4}"#), Err(Error::Parse(_))));
    }

    #[test]
    fn default_is_valid() {
        assert!(Scenario::default().validate().is_empty());
        assert!(Scenario::comparison(4).validate().is_empty());
    }

    #[test]
    fn negative_gap_single_violation() {
        let mut s = Scenario::default();
        s.solver = s.solver.with_delta_db(-3.0);
        let v = s.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "solver.delta_db");
    }

    #[test]
    fn incident_behind_surface() {
        let s = Scenario {
            incident: AnglePair::new(120.0, 90.0),
            ..Scenario::default()
        };
        assert!(s.validate().iter().any(|v| v.field == "phi_i/theta_i"));
    }

    #[test]
    fn linear_values_cached() {
        let s = Scenario::default();
        assert!((s.gains.g_t_linear() - 28.183829312644534).abs() < 1e-9);
        assert!((s.gains.g_linear() - 2.51188643150958).abs() < 1e-12);
        assert!((s.solver.delta_linear() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let mut s = Scenario::comparison(8);
        s.link = Some(LinkGeometry { d1_m: 50.0, d2_m: 20.0 });
        s.mask.sidelobe_step_deg = Some(5.0);
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.hash(), s.hash());
    }

    #[test]
    fn ao_start_from_file() {
        assert_eq!(Scenario::default().solver.ao_start, AoStart::Chirp);
        let s = Scenario::from_json(r#"{"m_y": 4, "m_z": 4, "solver": {"ao_start": "focus"}}"#).unwrap();
        assert_eq!(s.solver.ao_start, AoStart::Focus);
        assert_eq!(
            Scenario::from_json(&s.to_json()).unwrap().solver.ao_start,
            AoStart::Focus
        );
        assert!(Scenario::from_json(r#"{"solver": {"ao_start": "sideways"}}"#).is_err());
    }

    #[test]
    fn golden_default_file() {
        let golden = include_str!("../scenarios/default.json");
        assert_eq!(Scenario::default().to_json().trim(), golden.trim());
        assert_eq!(Scenario::from_json(golden).unwrap(), Scenario::default());
    }
}
