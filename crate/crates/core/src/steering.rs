//! Steering vectors of a uniform planar array in the y-z plane.
//!
//! Element `(m_y, m_z)` sits at `(0, m_y d_y, m_z d_z)` with the first element
//! at the origin. Full-length vectors use row-major order with the y index
//! outer and the z index inner, so that `a = a_y (x) a_z` (Kronecker product).
//! Every consumer of per-element data (phases, assembly maps) uses this order.

use nalgebra::{DVector, Vector3};
use num_complex::Complex64;

use crate::scenario::{AnglePair, ArrayGeometry};

pub type CVector = DVector<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteeringKind {
    Incident,
    Reflect,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub entries: CVector,
    pub kind: SteeringKind,
}

/// Per-axis factors of the full steering vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringFactors {
    pub a_y: CVector,
    pub a_z: CVector,
}

impl SteeringFactors {
    pub fn kron(&self) -> CVector {
        kron(&self.a_y, &self.a_z)
    }
}

/// `[cos(phi) sin(theta), sin(phi) sin(theta), cos(theta)]`.
pub fn unit_direction(angle: AnglePair) -> Vector3<f64> {
    let (phi, theta) = angle.radians();
    Vector3::new(phi.cos() * theta.sin(), phi.sin() * theta.sin(), theta.cos())
}

/// One axis of the incident or reflect steering vector.
pub fn steering_component(
    geometry: &ArrayGeometry,
    angle: AnglePair,
    axis: Axis,
    kind: SteeringKind,
) -> SteeringVector {
    let u = unit_direction(angle);
    let k = geometry.wavenumber();
    let (count, step) = match axis {
        Axis::Y => (geometry.m_y, geometry.d_y * u.y),
        Axis::Z => (geometry.m_z, geometry.d_z * u.z),
    };
    let entries = CVector::from_iterator(
        count,
        (0..count).map(|m| Complex64::from_polar(1.0, k * m as f64 * step)),
    );
    SteeringVector { entries, kind }
}

/// Incident (or reflect) steering vector `a_y (x) a_z` for a single direction.
pub fn direction_steering(geometry: &ArrayGeometry, angle: AnglePair, kind: SteeringKind) -> SteeringVector {
    let y = steering_component(geometry, angle, Axis::Y, kind).entries;
    let z = steering_component(geometry, angle, Axis::Z, kind).entries;
    SteeringVector {
        entries: kron(&y, &z),
        kind,
    }
}

/// Full steering vector `a_i (.) a_r` and its y/z factors.
///
/// The full vector is the Hadamard product of the per-direction vectors; the
/// factors are built per axis. The two agree by construction of the array.
pub fn full_steering(
    geometry: &ArrayGeometry,
    incident: AnglePair,
    reflect: AnglePair,
) -> (SteeringVector, SteeringFactors) {
    let factors = steering_factors(geometry, incident, reflect);
    let a_i = direction_steering(geometry, incident, SteeringKind::Incident).entries;
    let a_r = direction_steering(geometry, reflect, SteeringKind::Reflect).entries;
    let full = SteeringVector {
        entries: a_i.component_mul(&a_r),
        kind: SteeringKind::Full,
    };
    (full, factors)
}

/// Only the per-axis factors `a_iy (.) a_ry` and `a_iz (.) a_rz`.
pub fn steering_factors(geometry: &ArrayGeometry, incident: AnglePair, reflect: AnglePair) -> SteeringFactors {
    let f = |axis| {
        let i = steering_component(geometry, incident, axis, SteeringKind::Incident).entries;
        let r = steering_component(geometry, reflect, axis, SteeringKind::Reflect).entries;
        i.component_mul(&r)
    };
    SteeringFactors {
        a_y: f(Axis::Y),
        a_z: f(Axis::Z),
    }
}

/// Kronecker product of two column vectors, `a` index outer.
pub fn kron(a: &CVector, b: &CVector) -> CVector {
    let nb = b.len();
    CVector::from_fn(a.len() * nb, |i, _| a[i / nb] * b[i % nb])
}
