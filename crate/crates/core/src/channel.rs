//! Element radiation pattern and cascaded BS-surface-receiver power gain.
//!
//! Gains here are normalized to the free-space pathloss product of the two
//! hops: `gamma = eta^2 |a^T w|^2` with `eta^2 = G_t G^2 F(incident) F(reflect)`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::scenario::{AnglePair, ArrayGeometry, GainConfig, Scenario};
use crate::steering::{full_steering, steering_factors, CVector};
use crate::SPEED_OF_LIGHT;

pub type CMatrix = DMatrix<Complex64>;

/// Below this `sin(theta) cos(phi)` counts as the support boundary.
const SUPPORT_EPS: f64 = 1e-12;

/// `cos^q`-type element pattern with peak gain `g_linear` and `q = g/2 - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErpModel {
    pub g_linear: f64,
    pub exponent: f64,
}

impl ErpModel {
    pub fn new(g_linear: f64) -> Self {
        Self {
            g_linear,
            exponent: g_linear / 2.0 - 1.0,
        }
    }

    pub fn from_gains(gains: &GainConfig) -> Self {
        Self {
            g_linear: gains.g_linear(),
            exponent: gains.erp_exponent(),
        }
    }

    /// Normalized power pattern F.
    pub fn pattern(&self, angle: AnglePair) -> f64 {
        let base = erp_base(angle);
        if base > 0.0 {
            base.powf(self.exponent)
        } else {
            0.0
        }
    }
}

/// `sin(theta) cos(phi)` on the front half-space, 0 elsewhere.
pub fn erp_base(angle: AnglePair) -> f64 {
    if !(0.0..=180.0).contains(&angle.theta) || !(-90.0..=90.0).contains(&angle.phi) {
        return 0.0;
    }
    let (phi, theta) = angle.radians();
    let b = theta.sin() * phi.cos();
    if b > SUPPORT_EPS {
        b
    } else {
        0.0
    }
}

/// Normalized element power pattern at `angle` for peak gain `g_linear`.
pub fn erp(angle: AnglePair, g_linear: f64) -> f64 {
    ErpModel::new(g_linear).pattern(angle)
}

/// Angle-dependent gain factor `G_t G^2 F(incident) F(reflect)`.
pub fn eta_sq(gains: &GainConfig, incident: AnglePair, reflect: AnglePair) -> f64 {
    let model = ErpModel::from_gains(gains);
    gains.g_t_linear() * gains.g_linear().powi(2) * model.pattern(incident) * model.pattern(reflect)
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

/// `a^T w` without conjugation.
pub(crate) fn bilinear(a: &CVector, w: &CVector) -> Complex64 {
    a.iter().zip(w.iter()).map(|(x, y)| x * y).sum()
}

/// Normalized cascaded power gain `eta^2 |a^T w|^2`.
pub fn gamma(
    geometry: &ArrayGeometry,
    gains: &GainConfig,
    incident: AnglePair,
    reflect: AnglePair,
    w: &CVector,
) -> Result<f64> {
    check_len(geometry.elements(), w.len())?;
    let eta2 = eta_sq(gains, incident, reflect);
    if eta2 == 0.0 {
        return Ok(0.0);
    }
    let (a, _) = full_steering(geometry, incident, reflect);
    Ok(eta2 * bilinear(&a.entries, w).norm_sqr())
}

/// Same gain for a separable `w = w_y (x) w_z`: `eta^2 |a_y^T w_y|^2 |a_z^T w_z|^2`.
pub fn gamma_factored(
    geometry: &ArrayGeometry,
    gains: &GainConfig,
    incident: AnglePair,
    reflect: AnglePair,
    w_y: &CVector,
    w_z: &CVector,
) -> Result<f64> {
    check_len(geometry.m_y, w_y.len())?;
    check_len(geometry.m_z, w_z.len())?;
    let eta2 = eta_sq(gains, incident, reflect);
    if eta2 == 0.0 {
        return Ok(0.0);
    }
    let f = steering_factors(geometry, incident, reflect);
    Ok(eta2 * bilinear(&f.a_y, w_y).norm_sqr() * bilinear(&f.a_z, w_z).norm_sqr())
}

/// Largest entrywise deviation of `w` from its conjugate transpose.
pub fn hermitian_defect(w: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..w.nrows() {
        for j in i..w.ncols() {
            worst = worst.max((w[(i, j)] - w[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `A = conj(a) a^T`, symmetrized as `(A + A^H)/2`.
pub fn coefficient_matrix(a: &CVector) -> CMatrix {
    let b = a.map(|x| x.conj());
    let outer = &b * b.adjoint();
    (&outer + outer.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Lifted gain `eta^2 Re(Tr(A W))` for a Hermitian matrix `W`.
pub fn trace_gain(
    geometry: &ArrayGeometry,
    gains: &GainConfig,
    incident: AnglePair,
    reflect: AnglePair,
    w: &CMatrix,
) -> Result<f64> {
    let m = geometry.elements();
    check_len(m, w.nrows())?;
    check_len(m, w.ncols())?;
    let scale = w.iter().map(|x| x.norm()).fold(1.0, f64::max);
    let defect = hermitian_defect(w);
    if defect > 1e-9 * scale {
        return Err(Error::NotHermitian(defect));
    }
    let eta2 = eta_sq(gains, incident, reflect);
    if eta2 == 0.0 {
        return Ok(0.0);
    }
    let (a, _) = full_steering(geometry, incident, reflect);
    let a_mat = coefficient_matrix(&a.entries);
    Ok(eta2 * (a_mat * w).trace().re)
}

/// Free-space amplitude factor `c / (4 pi d f)` in dB (20 log10).
pub fn free_space_db(distance_m: f64, carrier_freq_hz: f64) -> f64 {
    20.0 * (SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * distance_m * carrier_freq_hz)).log10()
}

/// Received power for a known normalized gain `gamma`.
pub fn received_power_dbm(scenario: &Scenario, tx_power_dbm: f64, gamma: f64) -> Result<f64> {
    let link = scenario.link.ok_or(Error::MissingDistances)?;
    if !(link.d1_m > 0.0 && link.d2_m > 0.0) {
        return Err(Error::MissingDistances);
    }
    let f = scenario.geometry.carrier_freq_hz;
    Ok(tx_power_dbm + 10.0 * gamma.log10() + free_space_db(link.d1_m, f) + free_space_db(link.d2_m, f))
}

/// Absolute received power at `reflect` for phases `w`.
pub fn link_budget(scenario: &Scenario, tx_power_dbm: f64, w: &CVector, reflect: AnglePair) -> Result<f64> {
    let g = gamma(&scenario.geometry, &scenario.gains, scenario.incident, reflect, w)?;
    received_power_dbm(scenario, tx_power_dbm, g)
}
