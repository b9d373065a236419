//! Mainlobe/sidelobe angle sets.
//!
//! The mainlobe is a union of regions in (azimuth, elevation) space, sampled
//! on a regular grid anchored at each region's lower bounds. The sidelobe set
//! is the regular grid over the whole reflect range with the mainlobe regions
//! removed after dilating them by `gap_deg` along each axis.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::scenario::AnglePair;

/// Slack used when comparing grid coordinates against region bounds.
const GRID_EPS: f64 = 1e-9;

/// A mainlobe (or explicit sidelobe) region in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Rect {
        phi: [f64; 2],
        theta: [f64; 2],
    },
    /// Azimuth interval varies linearly between the two elevation bounds.
    Trapezoid {
        theta: [f64; 2],
        phi_at_theta_lo: [f64; 2],
        phi_at_theta_hi: [f64; 2],
    },
}

impl Region {
    pub fn theta_range(&self) -> [f64; 2] {
        match self {
            Region::Rect { theta, .. } | Region::Trapezoid { theta, .. } => *theta,
        }
    }

    /// Azimuth interval of the region at elevation `theta`, if `theta` is inside.
    pub fn phi_interval_at(&self, theta: f64) -> Option<[f64; 2]> {
        let [lo, hi] = self.theta_range();
        if theta < lo - GRID_EPS || theta > hi + GRID_EPS {
            return None;
        }
        Some(match self {
            Region::Rect { phi, .. } => *phi,
            Region::Trapezoid {
                phi_at_theta_lo,
                phi_at_theta_hi,
                ..
            } => {
                let t = if hi > lo {
                    ((theta - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                [
                    phi_at_theta_lo[0] + t * (phi_at_theta_hi[0] - phi_at_theta_lo[0]),
                    phi_at_theta_lo[1] + t * (phi_at_theta_hi[1] - phi_at_theta_lo[1]),
                ]
            }
        })
    }

    /// Overall azimuth extent over all elevations.
    pub fn phi_extent(&self) -> [f64; 2] {
        match self {
            Region::Rect { phi, .. } => *phi,
            Region::Trapezoid {
                phi_at_theta_lo: a,
                phi_at_theta_hi: b,
                ..
            } => [a[0].min(b[0]), a[1].max(b[1])],
        }
    }

    pub fn contains(&self, angle: AnglePair) -> bool {
        match self.phi_interval_at(angle.theta) {
            Some([lo, hi]) => angle.phi >= lo - GRID_EPS && angle.phi <= hi + GRID_EPS,
            None => false,
        }
    }

    /// True when `angle` lies within Chebyshev distance `gap` of the region
    /// (box dilation, boundary included).
    pub fn within_gap(&self, angle: AnglePair, gap: f64) -> bool {
        let [lo, hi] = self.theta_range();
        let t0 = lo.max(angle.theta - gap);
        let t1 = hi.min(angle.theta + gap);
        if t0 > t1 + GRID_EPS {
            return false;
        }
        // Interval endpoints are linear in theta, so the union over [t0, t1]
        // is spanned by the values at the two ends.
        let (Some(a), Some(b)) = (self.phi_interval_at(t0), self.phi_interval_at(t1)) else {
            return false;
        };
        let phi_lo = a[0].min(b[0]) - gap;
        let phi_hi = a[1].max(b[1]) + gap;
        angle.phi >= phi_lo - GRID_EPS && angle.phi <= phi_hi + GRID_EPS
    }

    /// Grid samples inside the region: rows every `step` from the lower
    /// elevation bound, and within each row every `step` from the row's lower
    /// azimuth bound. Upper bounds are included when hit exactly.
    pub fn sample(&self, step: f64) -> Vec<AnglePair> {
        let mut out = Vec::new();
        let [tlo, thi] = self.theta_range();
        for theta in axis_points(tlo, thi, step) {
            if let Some([plo, phi_hi]) = self.phi_interval_at(theta) {
                for phi in axis_points(plo, phi_hi, step) {
                    out.push(AnglePair::new(phi, theta));
                }
            }
        }
        out
    }

    fn check(&self, path: &str, reflect_phi: [f64; 2], reflect_theta: [f64; 2], out: &mut Vec<Violation>) {
        let [tlo, thi] = self.theta_range();
        if !(tlo.is_finite() && thi.is_finite()) || tlo > thi {
            out.push(Violation::new(
                format!("{path}.theta"),
                "bounds must be finite and ordered",
            ));
        }
        let intervals: Vec<[f64; 2]> = match self {
            Region::Rect { phi, .. } => vec![*phi],
            Region::Trapezoid {
                phi_at_theta_lo,
                phi_at_theta_hi,
                ..
            } => vec![*phi_at_theta_lo, *phi_at_theta_hi],
        };
        for iv in &intervals {
            if !(iv[0].is_finite() && iv[1].is_finite()) || iv[0] > iv[1] {
                out.push(Violation::new(
                    format!("{path}.phi"),
                    "bounds must be finite and ordered",
                ));
            }
        }
        let [plo, phi_hi] = self.phi_extent();
        if plo < reflect_phi[0] - GRID_EPS || phi_hi > reflect_phi[1] + GRID_EPS {
            out.push(Violation::new(
                format!("{path}.phi"),
                format!("outside reflect azimuth range [{}, {}]", reflect_phi[0], reflect_phi[1]),
            ));
        }
        if tlo < reflect_theta[0] - GRID_EPS || thi > reflect_theta[1] + GRID_EPS {
            out.push(Violation::new(
                format!("{path}.theta"),
                format!(
                    "outside reflect elevation range [{}, {}]",
                    reflect_theta[0], reflect_theta[1]
                ),
            ));
        }
    }
}

/// `lo, lo + step, ...` up to and including `hi`.
fn axis_points(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + GRID_EPS).floor();
    if !(n >= 0.0) {
        return Vec::new();
    }
    (0..=n as usize).map(|k| tidy(lo + k as f64 * step)).collect()
}

/// Removes float noise from grid coordinates so sample lists are stable.
fn tidy(x: f64) -> f64 {
    let r = (x * 1e9).round() / 1e9;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    #[default]
    FlatTop,
    /// 3GPP-style rolloff: `-l_db * ((dphi/half_hpbw_phi)^2 + (dtheta/half_hpbw_theta)^2)` dB.
    Parabolic {
        l_db: f64,
        boresight: AnglePair,
        /// One half of the half-power beamwidth, per axis `[phi, theta]`, degrees.
        half_hpbw_deg: [f64; 2],
    },
}

fn default_step() -> f64 {
    10.0
}
fn default_reflect_phi() -> [f64; 2] {
    [-90.0, 90.0]
}
fn default_reflect_theta() -> [f64; 2] {
    [90.0, 180.0]
}
fn default_mainlobe() -> Vec<Region> {
    vec![Region::Rect {
        phi: [-15.0, 15.0],
        theta: [110.0, 140.0],
    }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    #[serde(default = "default_mainlobe")]
    pub mainlobe: Vec<Region>,
    #[serde(default)]
    pub shape: Shape,
    #[serde(default = "default_step")]
    pub sample_step_deg: f64,
    /// Sidelobe grid step; the mainlobe step when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidelobe_step_deg: Option<f64>,
    #[serde(default = "default_step")]
    pub gap_deg: f64,
    #[serde(default = "default_reflect_phi")]
    pub reflect_phi: [f64; 2],
    #[serde(default = "default_reflect_theta")]
    pub reflect_theta: [f64; 2],
    /// Explicit sidelobe regions. When absent the sidelobe set is the whole
    /// reflect range minus the gap-dilated mainlobe; when present these
    /// regions are sampled as given and must keep clear of the mainlobe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidelobe_regions: Option<Vec<Region>>,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            mainlobe: default_mainlobe(),
            shape: Shape::FlatTop,
            sample_step_deg: default_step(),
            sidelobe_step_deg: None,
            gap_deg: default_step(),
            reflect_phi: default_reflect_phi(),
            reflect_theta: default_reflect_theta(),
            sidelobe_regions: None,
        }
    }
}

impl MaskSpec {
    pub fn rect(phi: [f64; 2], theta: [f64; 2]) -> Self {
        Self {
            mainlobe: vec![Region::Rect { phi, theta }],
            ..Self::default()
        }
    }

    pub fn sidelobe_step(&self) -> f64 {
        self.sidelobe_step_deg.unwrap_or(self.sample_step_deg)
    }

    pub fn in_mainlobe(&self, angle: AnglePair) -> bool {
        self.mainlobe.iter().any(|r| r.contains(angle))
    }

    fn near_mainlobe(&self, angle: AnglePair) -> bool {
        self.mainlobe.iter().any(|r| r.within_gap(angle, self.gap_deg))
    }

    /// Midpoint of the bounding box of all mainlobe regions.
    pub fn center(&self) -> AnglePair {
        let mut phi = [f64::INFINITY, f64::NEG_INFINITY];
        let mut theta = [f64::INFINITY, f64::NEG_INFINITY];
        for r in &self.mainlobe {
            let p = r.phi_extent();
            let t = r.theta_range();
            phi = [phi[0].min(p[0]), phi[1].max(p[1])];
            theta = [theta[0].min(t[0]), theta[1].max(t[1])];
        }
        AnglePair::new(0.5 * (phi[0] + phi[1]), 0.5 * (theta[0] + theta[1]))
    }

    pub fn check(&self, out: &mut Vec<Violation>) {
        if self.mainlobe.is_empty() {
            out.push(Violation::new("mask.mainlobe", "at least one region is required"));
        }
        if !(self.sample_step_deg > 0.0) {
            out.push(Violation::new("mask.sample_step_deg", "must be > 0"));
        }
        if let Some(s) = self.sidelobe_step_deg {
            if !(s > 0.0) {
                out.push(Violation::new("mask.sidelobe_step_deg", "must be > 0"));
            }
        }
        if !(self.gap_deg >= 0.0) {
            out.push(Violation::new("mask.gap_deg", "must be >= 0"));
        }
        let [plo, phi_hi] = self.reflect_phi;
        if !(plo >= -90.0 && phi_hi <= 90.0 && plo <= phi_hi) {
            out.push(Violation::new(
                "mask.reflect_phi",
                "must be an ordered sub-range of [-90, 90]",
            ));
        }
        let [tlo, thi] = self.reflect_theta;
        if !(tlo >= 90.0 && thi <= 180.0 && tlo <= thi) {
            out.push(Violation::new(
                "mask.reflect_theta",
                "must be an ordered sub-range of [90, 180]",
            ));
        }
        for (i, r) in self.mainlobe.iter().enumerate() {
            r.check(
                &format!("mask.mainlobe[{i}]"),
                self.reflect_phi,
                self.reflect_theta,
                out,
            );
        }
        if let Some(regions) = &self.sidelobe_regions {
            for (i, r) in regions.iter().enumerate() {
                r.check(
                    &format!("mask.sidelobe_regions[{i}]"),
                    self.reflect_phi,
                    self.reflect_theta,
                    out,
                );
            }
        }
        if let Shape::Parabolic {
            l_db, half_hpbw_deg, ..
        } = &self.shape
        {
            if !(*l_db >= 0.0) {
                out.push(Violation::new("mask.shape.l_db", "must be >= 0"));
            }
            if !(half_hpbw_deg[0] > 0.0 && half_hpbw_deg[1] > 0.0) {
                out.push(Violation::new("mask.shape.half_hpbw_deg", "must be > 0 on both axes"));
            }
        }
        if !out.is_empty() {
            return;
        }
        if let Some(regions) = &self.sidelobe_regions {
            let step = self.sidelobe_step();
            let clash = regions
                .iter()
                .flat_map(|r| r.sample(step))
                .find(|a| self.near_mainlobe(*a));
            if let Some(a) = clash {
                out.push(Violation::new(
                    "mask.mainlobe/mask.sidelobe_regions",
                    format!(
                        "sidelobe sample ({}, {}) falls inside the mainlobe gap region",
                        a.phi, a.theta
                    ),
                ));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MainlobeSample {
    pub angle: AnglePair,
    /// Shape weight d in (0, 1].
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskSamples {
    pub mainlobe: Vec<MainlobeSample>,
    pub sidelobe: Vec<AnglePair>,
    pub warnings: Vec<String>,
}

impl MaskSamples {
    /// Writes `phi_deg,theta_deg,set,weight` rows, mainlobe first.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["phi_deg", "theta_deg", "set", "weight"])?;
        for s in &self.mainlobe {
            wr.write_record([
                s.angle.phi.to_string(),
                s.angle.theta.to_string(),
                "mainlobe".to_string(),
                s.weight.to_string(),
            ])?;
        }
        for a in &self.sidelobe {
            wr.write_record([
                a.phi.to_string(),
                a.theta.to_string(),
                "sidelobe".to_string(),
                String::new(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Sampled mainlobe weights and sidelobe angles for `spec`.
pub fn build_samples(spec: &MaskSpec) -> Result<MaskSamples> {
    let mut violations = Vec::new();
    spec.check(&mut violations);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }

    let mut out = MaskSamples::default();
    for region in &spec.mainlobe {
        for angle in region.sample(spec.sample_step_deg) {
            if out.mainlobe.iter().any(|s| s.angle == angle) {
                continue;
            }
            let weight = shape_weight(spec, angle)?;
            out.mainlobe.push(MainlobeSample { angle, weight });
        }
    }
    if out.mainlobe.is_empty() {
        return Err(Error::Validation(vec![Violation::new(
            "mask.mainlobe",
            "no grid sample falls inside the mainlobe regions",
        )]));
    }

    let step = spec.sidelobe_step();
    let candidates: Vec<AnglePair> = match &spec.sidelobe_regions {
        Some(regions) => regions.iter().flat_map(|r| r.sample(step)).collect(),
        None => {
            let full = Region::Rect {
                phi: spec.reflect_phi,
                theta: spec.reflect_theta,
            };
            full.sample(step)
                .into_iter()
                .filter(|a| !spec.near_mainlobe(*a))
                .collect()
        }
    };
    let mut dropped = 0usize;
    for a in candidates {
        if !in_erp_support(a) {
            dropped += 1;
            continue;
        }
        if !out.sidelobe.contains(&a) {
            out.sidelobe.push(a);
        }
    }
    if dropped > 0 {
        out.warnings.push(format!(
            "dropped {dropped} sidelobe samples outside the element pattern support"
        ));
    }
    if out.sidelobe.is_empty() {
        out.warnings.push("sidelobe set is empty".to_string());
    }
    for w in &out.warnings {
        log::warn!("{w}");
    }
    Ok(out)
}

/// Directions where the element pattern is nonzero (`sin(theta)cos(phi) > 0`).
pub(crate) fn in_erp_support(a: AnglePair) -> bool {
    crate::channel::erp_base(a) > 0.0
}

/// Shape weight `d` for a mainlobe angle.
pub fn shape_weight(spec: &MaskSpec, angle: AnglePair) -> Result<f64> {
    if !spec.in_mainlobe(angle) {
        return Err(Error::Validation(vec![Violation::new(
            "angle",
            format!("({}, {}) is outside the mainlobe", angle.phi, angle.theta),
        )]));
    }
    Ok(match &spec.shape {
        Shape::FlatTop => 1.0,
        Shape::Parabolic {
            l_db,
            boresight,
            half_hpbw_deg,
        } => {
            let u = (angle.phi - boresight.phi) / half_hpbw_deg[0];
            let v = (angle.theta - boresight.theta) / half_hpbw_deg[1];
            crate::db_to_linear(-l_db * (u * u + v * v))
        }
    })
}
