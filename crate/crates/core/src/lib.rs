//! Shaped 3D reflection beam synthesis for quasi-static intelligent
//! reflecting surfaces.
//!
//! The crate models a uniform planar reflecting array with a directional
//! element pattern, and maximizes the common gain over a sampled mainlobe
//! region while holding every sidelobe sample a fixed gap below it. Two
//! solvers are provided: a joint semidefinite relaxation over the full
//! lifted phase matrix, and an alternating scheme over the y/z Kronecker
//! factors that scales to thousands of elements. Both enforce the rank-one
//! structure with a difference-of-convex penalty solved by successive
//! convex approximation, on top of the first-order conic solver in
//! [`conic`].
//!
//! Continuous solutions can then be quantized and turned into an assembly
//! map over a small catalog of passive element patterns ([`quantize`]).

pub mod channel;
pub mod conic;
pub mod error;
pub mod eval;
pub mod masks;
pub mod optimizer;
pub mod quantize;
pub mod scenario;
pub mod steering;

pub use error::{Error, Result, Violation};
pub use scenario::{AnglePair, Scenario};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub(crate) fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub(crate) fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}
