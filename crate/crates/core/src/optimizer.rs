//! Beam synthesis: joint DC-SCA over the full lifted matrix, alternating
//! optimization over the y/z Kronecker factors, plus the focus and random
//! baselines and the solution file format.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{eta_sq, CMatrix};
use crate::conic::{
    dominant_eigvec, eigen_sorted, Coefficient, ConicProblem, ConicSettings, ConicSolution, ConicSolver, MainlobeRow,
    SidelobeRow, SolveStatus,
};
use crate::error::{Error, Result, Violation};
use crate::masks::build_samples;
use crate::scenario::{AnglePair, AoStart, Scenario};
use crate::steering::{kron, steering_factors, unit_direction, CVector};
use crate::{db_to_linear, linear_to_db};

/// Hook called after every conic subproblem solve.
pub type Observer<'a> = &'a mut dyn FnMut(&str, &ConicProblem<Complex64>, &ConicSolution<Complex64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Joint,
    Ao,
    RandomBaseline,
    Focus,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Joint => "joint",
            Method::Ao => "ao",
            Method::RandomBaseline => "random_baseline",
            Method::Focus => "focus",
        };
        f.write_str(s)
    }
}

/// Per-iteration record of one DC-SCA run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScaTrace {
    pub label: String,
    /// Penalized objective `10 log10(rho) - sigma (||W||_* - ||W||_2)`.
    pub objective: Vec<f64>,
    /// `||W||_* - ||W||_2`.
    pub dc_residual: Vec<f64>,
    /// DC residual over `||W||_2`.
    pub rank_ratio: Vec<f64>,
    pub relaxation_rho_db: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Sidelobe gap the subproblem was solved with (below target when it held the peak).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_db: Option<f64>,
}

impl ScaTrace {
    /// First iteration whose rank ratio is at or below `tol`.
    pub fn rank_one_at(&self, tol: f64) -> Option<usize> {
        self.rank_ratio.iter().position(|r| *r <= tol)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Traces {
    pub sca: Vec<ScaTrace>,
    /// Achieved `rho` after each AO round; entry 0 is the initial point.
    pub ao_rho_db: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionFlags {
    /// A phase came from a (near) zero eigenvector entry or a flat spectrum.
    pub degenerate_extraction: bool,
    /// Rank ratio stayed above the threshold.
    pub rank_residual_high: bool,
    /// Some conic subproblem hit its iteration cap.
    pub conic_max_iters: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamSolution {
    pub method: Method,
    pub w: CVector,
    pub w_y: Option<CVector>,
    pub w_z: Option<CVector>,
    /// `min_p 10 log10(gamma_p / d_p)` recomputed from `w`.
    pub rho_db: f64,
    pub relaxation_rho_db: Option<f64>,
    pub traces: Traces,
    pub flags: SolutionFlags,
    pub wall_seconds: f64,
}

/// One sample direction with its per-axis factors.
#[derive(Debug, Clone)]
pub struct ChannelSample {
    pub angle: AnglePair,
    pub eta2: f64,
    /// Shape weight `d_p` (1 for sidelobe samples).
    pub weight: f64,
    pub a_y: CVector,
    pub a_z: CVector,
}

impl ChannelSample {
    /// `eta^2 |a^T w|^2` for a separable `w`.
    pub fn gain_factored(&self, w_y: &CVector, w_z: &CVector) -> f64 {
        self.eta2 * quad(&self.a_y, w_y) * quad(&self.a_z, w_z)
    }

    pub fn gain(&self, w: &CVector) -> f64 {
        let a = kron(&self.a_y, &self.a_z);
        self.eta2 * quad(&a, w)
    }
}

fn quad(a: &CVector, w: &CVector) -> f64 {
    a.iter().zip(w.iter()).map(|(x, y)| x * y).sum::<Complex64>().norm_sqr()
}

/// Channel data at every mask sample.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub mainlobe: Vec<ChannelSample>,
    pub sidelobe: Vec<ChannelSample>,
}

impl SampleSet {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let violations = scenario.validate();
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        let samples = build_samples(&scenario.mask)?;
        let make = |angle: AnglePair, weight: f64| {
            let f = steering_factors(&scenario.geometry, scenario.incident, angle);
            ChannelSample {
                angle,
                eta2: eta_sq(&scenario.gains, scenario.incident, angle),
                weight,
                a_y: f.a_y,
                a_z: f.a_z,
            }
        };
        let mainlobe: Vec<_> = samples.mainlobe.iter().map(|s| make(s.angle, s.weight)).collect();
        if let Some(bad) = mainlobe.iter().find(|s| !(s.eta2 > 0.0)) {
            return Err(Error::Validation(vec![Violation::new(
                "mask.mainlobe",
                format!(
                    "mainlobe sample ({}, {}) has zero element gain",
                    bad.angle.phi, bad.angle.theta
                ),
            )]));
        }
        let sidelobe = samples.sidelobe.iter().map(|a| make(*a, 1.0)).collect();
        Ok(Self { mainlobe, sidelobe })
    }

    /// `(min_p gamma_p / d_p, max_q gamma_q)` in linear scale.
    pub fn evaluate(&self, w: &CVector) -> (f64, f64) {
        self.evaluate_with(|s| s.gain(w))
    }

    pub fn evaluate_factored(&self, w_y: &CVector, w_z: &CVector) -> (f64, f64) {
        self.evaluate_with(|s| s.gain_factored(w_y, w_z))
    }

    fn evaluate_with(&self, g: impl Fn(&ChannelSample) -> f64) -> (f64, f64) {
        let main = self
            .mainlobe
            .iter()
            .map(|s| g(s) / s.weight)
            .fold(f64::INFINITY, f64::min);
        let side = self.sidelobe.iter().map(&g).fold(0.0, f64::max);
        (main, side)
    }
}

/// Unit-modulus phases from the dominant eigenvector of `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub w: CVector,
    pub degenerate: bool,
}

/// Dominant eigenvector projected entrywise onto the unit circle, with the
/// first entry rotated to phase 0.
pub fn extract_phases(w: &CMatrix) -> Result<Extraction> {
    let (vals, vecs) = eigen_sorted(w)?;
    let l1 = vals[0];
    if !(l1 > 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let n = w.nrows();
    if n > 1 && vals[1] >= l1 * (1.0 - 1e-9) {
        return Ok(Extraction {
            w: CVector::from_element(n, Complex64::new(1.0, 0.0)),
            degenerate: true,
        });
    }
    let v = vecs.column(0);
    let mut degenerate = false;
    let mut out = CVector::from_fn(n, |i, _| {
        let x = v[i];
        if x.norm() < 1e-12 {
            degenerate = true;
            Complex64::new(1.0, 0.0)
        } else {
            x / x.norm()
        }
    });
    normalize_global_phase(&mut out);
    Ok(Extraction { w: out, degenerate })
}

pub fn normalize_global_phase(w: &mut CVector) {
    if let Some(first) = w.iter().next().copied() {
        if first.norm() > 0.0 {
            let rot = first.conj() / first.norm();
            w.iter_mut().for_each(|x| *x *= rot);
        }
    }
}

fn rank_one(w: &CVector) -> CMatrix {
    w * w.adjoint()
}

fn finish(
    method: Method,
    samples: &SampleSet,
    w: CVector,
    w_y: Option<CVector>,
    w_z: Option<CVector>,
    start: Instant,
) -> BeamSolution {
    let (main, _) = samples.evaluate(&w);
    BeamSolution {
        method,
        w,
        w_y,
        w_z,
        rho_db: linear_to_db(main),
        relaxation_rho_db: None,
        traces: Traces::default(),
        flags: SolutionFlags::default(),
        wall_seconds: start.elapsed().as_secs_f64(),
    }
}

/// Per-axis focus weights toward the mainlobe center.
pub fn focus_factors(scenario: &Scenario) -> (CVector, CVector) {
    let f = steering_factors(&scenario.geometry, scenario.incident, scenario.mask.center());
    (f.a_y.map(|x| x.conj()), f.a_z.map(|x| x.conj()))
}

/// Per-axis linear-chirp weights whose instantaneous spatial frequency
/// sweeps the range spanned by the mainlobe samples.
pub fn chirp_factors(scenario: &Scenario) -> (CVector, CVector) {
    let g = &scenario.geometry;
    let k = g.wavenumber();
    let ui = unit_direction(scenario.incident);
    let mut ry = [f64::INFINITY, f64::NEG_INFINITY];
    let mut rz = [f64::INFINITY, f64::NEG_INFINITY];
    for region in &scenario.mask.mainlobe {
        for a in region.sample(scenario.mask.sample_step_deg) {
            let u = unit_direction(a);
            let (fy, fz) = (k * g.d_y * (ui.y + u.y), k * g.d_z * (ui.z + u.z));
            ry = [ry[0].min(fy), ry[1].max(fy)];
            rz = [rz[0].min(fz), rz[1].max(fz)];
        }
    }
    let chirp = |n: usize, [lo, hi]: [f64; 2]| {
        let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
        let span = if n > 1 { (hi - lo) / (2.0 * (n - 1) as f64) } else { 0.0 };
        CVector::from_fn(n, |m, _| {
            let m = m as f64;
            Complex64::from_polar(1.0, -(lo * m + span * m * m))
        })
    };
    (chirp(g.m_y, ry), chirp(g.m_z, rz))
}

/// Coherent focus on the mainlobe center.
pub fn focus_init(scenario: &Scenario) -> Result<BeamSolution> {
    let start = Instant::now();
    let samples = SampleSet::new(scenario)?;
    let (w_y, w_z) = focus_factors(scenario);
    Ok(finish(
        Method::Focus,
        &samples,
        kron(&w_y, &w_z),
        Some(w_y),
        Some(w_z),
        start,
    ))
}

/// Uniformly random phases, reproducible per seed.
pub fn random_baseline(scenario: &Scenario, seed: u64) -> Result<BeamSolution> {
    let start = Instant::now();
    let samples = SampleSet::new(scenario)?;
    Ok(finish(
        Method::RandomBaseline,
        &samples,
        random_phases(scenario.geometry.elements(), seed),
        None,
        None,
        start,
    ))
}

pub fn random_phases(m: usize, seed: u64) -> CVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CVector::from_fn(m, |_, _| {
        Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU))
    })
}

struct ScaSettings {
    sigma: f64,
    xi: f64,
    max_iters: usize,
    rank_tol: f64,
    conic: ConicSettings,
}

impl ScaSettings {
    fn from(scenario: &Scenario) -> Self {
        let s = &scenario.solver;
        Self {
            sigma: s.sigma,
            xi: s.xi,
            max_iters: s.max_sca_iters,
            rank_tol: s.rank_ratio_tol,
            conic: ConicSettings {
                residual_tol: s.residual_tol,
                max_iters: s.max_conic_iters,
                ..ConicSettings::default()
            },
        }
    }
}

struct ScaOutcome {
    w: CMatrix,
    rho: f64,
    trace: ScaTrace,
    max_iters_hit: bool,
}

fn check_status(sol: &ConicSolution<Complex64>, label: &str, max_iters_hit: &mut bool) -> Result<()> {
    match sol.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::MaxIters => {
            log::warn!(
                "{label}: conic solver hit its iteration cap (primal {:.2e}, dual {:.2e})",
                sol.primal_residual,
                sol.dual_residual
            );
            *max_iters_hit = true;
            Ok(())
        }
        SolveStatus::Infeasible => Err(Error::Infeasible(format!(
            "{label}: mainlobe/sidelobe rows cannot hold together (violation {:.3e})",
            sol.row_violation
        ))),
    }
}

/// DC-SCA from the semidefinite relaxation: at each step the spectral norm is
/// linearized at the current point and the convex subproblem is re-solved.
/// With a unit diagonal `||W||_* = n` is constant, so the linearized penalty
/// reduces to the linear objective `sigma Re Tr(v v^H W)`.
fn dc_sca(
    problem: ConicProblem<Complex64>,
    settings: &ScaSettings,
    start: Option<CMatrix>,
    label: &str,
    observer: &mut Option<&mut Observer<'_>>,
) -> Result<ScaOutcome> {
    let n = problem.n as f64;
    let mut solver = ConicSolver::new(problem, settings.conic)?;
    let mut max_iters_hit = false;
    let mut trace = ScaTrace {
        label: label.to_string(),
        ..ScaTrace::default()
    };

    let (mut w, mut rho) = match start {
        Some(w0) => {
            solver.warm_start(&w0);
            let rho0 = solver.problem().mainlobe_floor(&w0).max(f64::MIN_POSITIVE);
            (w0, rho0)
        }
        None => {
            solver.set_objective(None)?;
            let sol = solver.solve()?;
            if let Some(obs) = observer.as_mut() {
                obs(label, solver.problem(), &sol);
            }
            check_status(&sol, label, &mut max_iters_hit)?;
            (sol.w, sol.rho)
        }
    };

    let mut sigma = settings.sigma;
    let mut escalated = false;

    let record = |trace: &mut ScaTrace, w: &CMatrix, rho: f64, sigma: f64| -> Result<f64> {
        let (l1, _) = dominant_eigvec(w)?;
        let dc = (n - l1).max(0.0);
        let obj = linear_to_db(rho) - sigma * dc;
        trace.objective.push(obj);
        trace.dc_residual.push(dc);
        trace.rank_ratio.push(dc / l1);
        trace.relaxation_rho_db.push(linear_to_db(rho));
        trace.sigma.push(sigma);
        Ok(obj)
    };
    let mut prev = record(&mut trace, &w, rho, sigma)?;

    for _ in 0..settings.max_iters {
        let (_, v) = dominant_eigvec(&w)?;
        solver.set_objective(Some(Coefficient::LowRank(vec![(sigma, v)])))?;
        let sol = solver.solve()?;
        if let Some(obs) = observer.as_mut() {
            obs(label, solver.problem(), &sol);
        }
        check_status(&sol, label, &mut max_iters_hit)?;
        w = sol.w;
        rho = sol.rho;
        let obj = record(&mut trace, &w, rho, sigma)?;
        if obj - prev < settings.xi {
            let ratio = *trace.rank_ratio.last().expect("trace recorded");
            if ratio > settings.rank_tol && !escalated {
                log::info!("{label}: DC residual stalled at ratio {ratio:.2e}, raising sigma");
                sigma *= 5.0;
                escalated = true;
                let (l1, _) = dominant_eigvec(&w)?;
                prev = linear_to_db(rho) - sigma * (n - l1).max(0.0);
                continue;
            }
            break;
        }
        prev = obj;
    }
    Ok(ScaOutcome {
        w,
        rho,
        trace,
        max_iters_hit,
    })
}

fn conj(a: &CVector) -> CVector {
    a.map(|x| x.conj())
}

/// Lifted joint problem over the full `M x M` matrix.
pub fn joint_problem(scenario: &Scenario, samples: &SampleSet) -> ConicProblem<Complex64> {
    let m = scenario.geometry.elements();
    let mut p = ConicProblem::new(m, scenario.solver.delta_linear(), scenario.solver.objective_mode);
    for s in &samples.mainlobe {
        p.mainlobe.push(MainlobeRow {
            coeff: Coefficient::rank_one(conj(&kron(&s.a_y, &s.a_z))),
            gain: s.eta2,
            weight: s.weight,
        });
    }
    for s in &samples.sidelobe {
        if s.eta2 > 0.0 {
            p.sidelobe.push(SidelobeRow {
                coeff: Coefficient::rank_one(conj(&kron(&s.a_y, &s.a_z))),
                gain: s.eta2,
            });
        }
    }
    p
}

pub fn solve_joint(scenario: &Scenario) -> Result<BeamSolution> {
    solve_joint_observed(scenario, None)
}

pub fn solve_joint_observed(scenario: &Scenario, mut observer: Option<&mut Observer<'_>>) -> Result<BeamSolution> {
    let start = Instant::now();
    let m = scenario.geometry.elements();
    let limit = scenario.solver.joint_max_elements;
    if m > limit {
        return Err(Error::Validation(vec![Violation::new(
            "solver.joint_max_elements",
            format!("joint method limited to {limit} elements, array has {m}"),
        )]));
    }
    let samples = SampleSet::new(scenario)?;
    let settings = ScaSettings::from(scenario);
    let delta_db = scenario.solver.delta_db();
    let (c_y, c_z) = chirp_factors(scenario);
    let mut best: Option<(f64, ScaOutcome, Extraction)> = None;
    let mut last_err = None;
    for (init, label) in [(None, "joint"), (Some(lift(&kron(&c_y, &c_z))), "joint warm")] {
        let out = match dc_sca(joint_problem(scenario, &samples), &settings, init, label, &mut observer) {
            Ok(out) => out,
            Err(e @ Error::Infeasible(_)) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let ext = extract_phases(&out.w)?;
        let (main, side) = samples.evaluate(&ext.w);
        let score = gap_score(main, side, delta_db).0;
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, out, ext));
        }
    }
    let Some((_, out, ext)) = best else {
        return Err(last_err.unwrap_or_else(|| Error::Infeasible("joint problem".into())));
    };
    let mut sol = finish(Method::Joint, &samples, ext.w, None, None, start);
    sol.relaxation_rho_db = Some(linear_to_db(out.rho));
    sol.flags = SolutionFlags {
        degenerate_extraction: ext.degenerate,
        rank_residual_high: out.trace.rank_ratio.last().is_some_and(|r| *r > settings.rank_tol),
        conic_max_iters: out.max_iters_hit,
    };
    sol.traces.sca.push(out.trace);
    Ok(sol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Half {
    Y,
    Z,
}

/// Subproblem over one factor with the other held at `fixed` (lifted).
fn factor_problem(
    scenario: &Scenario,
    samples: &SampleSet,
    half: Half,
    fixed: &CMatrix,
) -> Result<ConicProblem<Complex64>> {
    type Pick = fn(&ChannelSample) -> &CVector;
    let (n, pick_free, pick_fixed): (usize, Pick, Pick) = match half {
        Half::Y => (scenario.geometry.m_y, |s| &s.a_y, |s| &s.a_z),
        Half::Z => (scenario.geometry.m_z, |s| &s.a_z, |s| &s.a_y),
    };
    let fixed_gain = |s: &ChannelSample| -> Result<f64> {
        let b = conj(pick_fixed(s));
        let c = b.dotc(&(fixed * &b)).re;
        if c < -1e-9 {
            return Err(Error::Invariant(format!(
                "fixed-factor quadratic form is negative ({c:.3e}) at ({}, {})",
                s.angle.phi, s.angle.theta
            )));
        }
        Ok(c.max(0.0))
    };
    let fixed_dim = fixed.nrows() as f64;
    let mut p = ConicProblem::new(n, scenario.solver.delta_linear(), scenario.solver.objective_mode);
    for s in &samples.mainlobe {
        p.mainlobe.push(MainlobeRow {
            coeff: Coefficient::rank_one(conj(pick_free(s))),
            gain: s.eta2 * fixed_gain(s)?,
            weight: s.weight,
        });
    }
    for s in &samples.sidelobe {
        let c = fixed_gain(s)?;
        // a null of the fixed factor makes the row vacuous
        if s.eta2 > 0.0 && c > 1e-12 * fixed_dim * fixed_dim {
            p.sidelobe.push(SidelobeRow {
                coeff: Coefficient::rank_one(conj(pick_free(s))),
                gain: s.eta2 * c,
            });
        }
    }
    Ok(p)
}

/// AO ranking: achieved `rho` in dB, less any shortfall of the sidelobe gap.
fn ao_score(samples: &SampleSet, delta_db: f64, w_y: &CVector, w_z: &CVector) -> (f64, f64) {
    let (main, side) = samples.evaluate_factored(w_y, w_z);
    gap_score(main, side, delta_db)
}

/// `(score, rho_db)` from the mainlobe floor and sidelobe peak (linear).
fn gap_score(main: f64, side: f64, delta_db: f64) -> (f64, f64) {
    let rho_db = linear_to_db(main);
    let gap = if side > 0.0 {
        rho_db - linear_to_db(side)
    } else {
        f64::INFINITY
    };
    (rho_db - (delta_db - gap).max(0.0), rho_db)
}

pub fn solve_ao(scenario: &Scenario) -> Result<BeamSolution> {
    solve_ao_observed(scenario, None)
}

pub fn solve_ao_observed(scenario: &Scenario, mut observer: Option<&mut Observer<'_>>) -> Result<BeamSolution> {
    let start = Instant::now();
    let samples = SampleSet::new(scenario)?;
    let settings = ScaSettings::from(scenario);
    let delta_db = scenario.solver.delta_db();

    let (mut w_y, mut w_z) = match scenario.solver.ao_start {
        AoStart::Chirp => chirp_factors(scenario),
        AoStart::Focus => focus_factors(scenario),
    };
    let mut big_y = rank_one(&w_y);
    let mut big_z = rank_one(&w_z);
    let (mut score, rho0) = ao_score(&samples, delta_db, &w_y, &w_z);
    let mut relax_rho = f64::NAN;
    let mut traces = Traces {
        ao_rho_db: vec![rho0],
        ..Traces::default()
    };
    let mut flags = SolutionFlags::default();
    let mut last_rank = [0.0f64; 2];

    let mut skipped = 0;
    for round in 0..scenario.solver.zeta {
        let round_start = score;
        for half in [Half::Y, Half::Z] {
            let fixed = match half {
                Half::Y => &big_z,
                Half::Z => &big_y,
            };
            let problem = factor_problem(scenario, &samples, half, fixed)?;
            let label = format!("ao round {} {}", round + 1, if half == Half::Y { "y" } else { "z" });
            let (main, side) = samples.evaluate_factored(&w_y, &w_z);
            let mut variants = vec![(problem.clone(), delta_db)];
            if side * problem.delta > main {
                // the gap is not met yet: also raise the floor under the current sidelobe peak
                log::info!(
                    "{label}: gap {:.2} dB short of {delta_db:.2} dB, also holding the sidelobe peak",
                    linear_to_db(main / side)
                );
                let mut capped = problem;
                capped.sidelobe_cap = Some(side);
                variants.push((capped, linear_to_db(main / side)));
            }
            let current = match half {
                Half::Y => rank_one(&w_y),
                Half::Z => rank_one(&w_z),
            };
            let mut feasible = false;
            for (problem, used_gap_db) in variants {
                for (start, tag) in [(None, ""), (Some(current.clone()), " warm")] {
                    let label = format!("{label}{tag}");
                    let out = match dc_sca(problem.clone(), &settings, start, &label, &mut observer) {
                        Ok(out) => out,
                        Err(Error::Infeasible(why)) => {
                            log::info!("{why}");
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    feasible = true;
                    flags.conic_max_iters |= out.max_iters_hit;
                    let ext = extract_phases(&out.w)?;
                    let (cand_score, _) = match half {
                        Half::Y => ao_score(&samples, delta_db, &ext.w, &w_z),
                        Half::Z => ao_score(&samples, delta_db, &w_y, &ext.w),
                    };
                    let ratio = out.trace.rank_ratio.last().copied().unwrap_or(0.0);
                    let mut trace = out.trace;
                    trace.delta_db = Some(used_gap_db);
                    traces.sca.push(trace);
                    if cand_score >= score {
                        score = cand_score;
                        relax_rho = out.rho;
                        flags.degenerate_extraction |= ext.degenerate;
                        let slot = match half {
                            Half::Y => {
                                w_y = ext.w;
                                big_y = out.w;
                                0
                            }
                            Half::Z => {
                                w_z = ext.w;
                                big_z = out.w;
                                1
                            }
                        };
                        last_rank[slot] = ratio;
                    }
                }
            }
            if !feasible {
                log::info!("{label}: keeping the current factor");
                skipped += 1;
            }
        }
        if skipped == 2 * (round + 1) {
            return Err(Error::Infeasible(
                "no factor subproblem is feasible from the initial factors".into(),
            ));
        }
        let (_, rho_db) = ao_score(&samples, delta_db, &w_y, &w_z);
        traces.ao_rho_db.push(rho_db);
        log::info!("AO round {}: rho {:.3} dB", round + 1, rho_db);
        if score - round_start < settings.xi {
            break;
        }
    }
    flags.rank_residual_high = last_rank.iter().any(|r| *r > settings.rank_tol);

    let w = kron(&w_y, &w_z);
    let mut sol = finish(Method::Ao, &samples, w, Some(w_y), Some(w_z), start);
    sol.relaxation_rho_db = relax_rho.is_finite().then(|| linear_to_db(relax_rho));
    sol.traces = traces;
    sol.flags = flags;
    Ok(sol)
}

/// Runs the requested method.
pub fn optimize(scenario: &Scenario, method: Method, seed: u64) -> Result<BeamSolution> {
    match method {
        Method::Joint => solve_joint(scenario),
        Method::Ao => solve_ao(scenario),
        Method::RandomBaseline => random_baseline(scenario, seed),
        Method::Focus => focus_init(scenario),
    }
}

/// On-disk solution record. Phases use the y-outer, z-inner element order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub format: String,
    pub version: u32,
    pub method: Method,
    pub scenario_hash: String,
    pub m_y: usize,
    pub m_z: usize,
    pub phases_rad: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases_y_rad: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases_z_rad: Option<Vec<f64>>,
    pub rho_db: f64,
    #[serde(default)]
    pub relaxation_rho_db: Option<f64>,
    #[serde(default)]
    pub traces: Traces,
    #[serde(default)]
    pub flags: SolutionFlags,
    #[serde(default)]
    pub wall_seconds: f64,
}

pub const SOLUTION_FORMAT: &str = "qsirs-solution";

fn phases(w: &CVector) -> Vec<f64> {
    w.iter().map(|x| x.arg().rem_euclid(std::f64::consts::TAU)).collect()
}

fn from_phases(p: &[f64]) -> CVector {
    CVector::from_iterator(p.len(), p.iter().map(|x| Complex64::from_polar(1.0, *x)))
}

impl BeamSolution {
    pub fn rho_linear(&self) -> f64 {
        db_to_linear(self.rho_db)
    }

    pub fn to_file(&self, scenario: &Scenario) -> SolutionFile {
        SolutionFile {
            format: SOLUTION_FORMAT.into(),
            version: 1,
            method: self.method,
            scenario_hash: scenario.hash(),
            m_y: scenario.geometry.m_y,
            m_z: scenario.geometry.m_z,
            phases_rad: phases(&self.w),
            phases_y_rad: self.w_y.as_ref().map(phases),
            phases_z_rad: self.w_z.as_ref().map(phases),
            rho_db: self.rho_db,
            relaxation_rho_db: self.relaxation_rho_db,
            traces: self.traces.clone(),
            flags: self.flags,
            wall_seconds: self.wall_seconds,
        }
    }

    pub fn from_file(file: &SolutionFile) -> Result<Self> {
        if file.format != SOLUTION_FORMAT {
            return Err(Error::Parse(format!("unknown solution format '{}'", file.format)));
        }
        let m = file.m_y * file.m_z;
        if file.phases_rad.len() != m {
            return Err(Error::Dimension {
                expected: m,
                got: file.phases_rad.len(),
            });
        }
        Ok(Self {
            method: file.method,
            w: from_phases(&file.phases_rad),
            w_y: file.phases_y_rad.as_deref().map(from_phases),
            w_z: file.phases_z_rad.as_deref().map(from_phases),
            rho_db: file.rho_db,
            relaxation_rho_db: file.relaxation_rho_db,
            traces: file.traces.clone(),
            flags: file.flags,
            wall_seconds: file.wall_seconds,
        })
    }

    pub fn write(&self, scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.to_file(scenario))?)?;
        Ok(())
    }
}

/// Reads a solution file and checks it against the scenario geometry.
pub fn read_solution(path: impl AsRef<Path>, scenario: &Scenario) -> Result<BeamSolution> {
    let text = fs::read_to_string(path)?;
    let file: SolutionFile = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    if file.m_y != scenario.geometry.m_y || file.m_z != scenario.geometry.m_z {
        return Err(Error::Dimension {
            expected: scenario.geometry.elements(),
            got: file.m_y * file.m_z,
        });
    }
    if file.scenario_hash != scenario.hash() {
        log::warn!("solution was produced for a different scenario (hash mismatch)");
    }
    BeamSolution::from_file(&file)
}

/// Lifted `W = w w^H` as a dense matrix (for diagnostics).
pub fn lift(w: &CVector) -> DMatrix<Complex64> {
    rank_one(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::gamma;
    use crate::masks::MaskSpec;

    fn tiny(m: usize) -> Scenario {
        Scenario::comparison(m)
    }

    #[test]
    fn extraction_recovers_rank_one() {
        let w0 = CVector::from_fn(5, |i, _| Complex64::from_polar(1.0, 0.7 * (i * i) as f64 + 0.3));
        let ext = extract_phases(&rank_one(&w0)).unwrap();
        assert!(!ext.degenerate);
        let rot = w0[0].conj();
        for (a, b) in ext.w.iter().zip(w0.iter()) {
            assert!((a - b * rot).norm() < 1e-9);
        }
        // before projection the eigenvector already has equal moduli
        let (_, v) = dominant_eigvec(&rank_one(&w0)).unwrap();
        for x in v.iter() {
            assert!((x.norm() * 5f64.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn extraction_degenerate_identity() {
        let a = extract_phases(&CMatrix::identity(4, 4)).unwrap();
        let b = extract_phases(&CMatrix::identity(4, 4)).unwrap();
        assert!(a.degenerate);
        assert_eq!(a, b);
        assert!(matches!(extract_phases(&CMatrix::zeros(3, 3)), Err(Error::ZeroMatrix)));
    }

    #[test]
    fn focus_center_and_coherence() {
        let s = Scenario::default();
        let c = s.mask.center();
        assert!((c.phi - 0.0).abs() < 1e-12 && (c.theta - 125.0).abs() < 1e-12);

        let mut s = tiny(4);
        s.mask = MaskSpec::rect([5.0, 5.0], [130.0, 130.0]);
        let sol = focus_init(&s).unwrap();
        let m = 16.0;
        let eta2 = eta_sq(&s.gains, s.incident, AnglePair::new(5.0, 130.0));
        assert!((sol.rho_db - linear_to_db(eta2 * m * m)).abs() < 1e-9);
    }

    #[test]
    fn focus_symmetric_region_conjugate_profile() {
        // phi symmetric about 0: a_y at phi = 0 has a linear phase, so
        // w_y[k] w_y[M-1-k] is constant.
        let s = tiny(6);
        let (w_y, _) = focus_factors(&s);
        let m = w_y.len();
        let p0 = w_y[0] * w_y[m - 1];
        for k in 0..m {
            assert!((w_y[k] * w_y[m - 1 - k] - p0).norm() < 1e-9);
        }
    }

    #[test]
    fn chirp_on_single_direction_is_focus() {
        let mut s = tiny(5);
        s.mask = MaskSpec::rect([5.0, 5.0], [130.0, 130.0]);
        let (cy, cz) = chirp_factors(&s);
        let (fy, fz) = focus_factors(&s);
        for (a, b) in cy.iter().chain(cz.iter()).zip(fy.iter().chain(fz.iter())) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn chirp_sweeps_mainlobe_frequencies() {
        let s = tiny(8);
        let (w_y, _) = chirp_factors(&s);
        assert!(w_y.iter().all(|x| (x.norm() - 1.0).abs() < 1e-12));
        assert_eq!(w_y[0], Complex64::new(1.0, 0.0));
        // phase step between neighbors grows linearly across the aperture
        let steps: Vec<f64> = (1..w_y.len()).map(|m| -(w_y[m] * w_y[m - 1].conj()).arg()).collect();
        let inc: Vec<f64> = steps.windows(2).map(|p| p[1] - p[0]).collect();
        for d in &inc {
            assert!((d - inc[0]).abs() < 1e-9);
        }
        // mainlobe phi in [-10, 10] at theta 120..140 spans both signs of u_y
        let k = s.geometry.wavenumber();
        let ui = unit_direction(s.incident);
        let lo = k * s.geometry.d_y * (ui.y + unit_direction(AnglePair::new(-10.0, 120.0)).y);
        let hi = k * s.geometry.d_y * (ui.y + unit_direction(AnglePair::new(10.0, 120.0)).y);
        let mean = steps.iter().sum::<f64>() / steps.len() as f64;
        assert!((mean - 0.5 * (lo + hi)).abs() < 1e-9);
    }

    #[test]
    fn random_is_deterministic() {
        let s = tiny(4);
        let a = random_baseline(&s, 7).unwrap();
        let b = random_baseline(&s, 7).unwrap();
        assert_eq!(a.w, b.w);
        assert_ne!(a.w, random_baseline(&s, 8).unwrap().w);
        assert!(a.w.iter().all(|x| (x.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn random_incoherent_sum() {
        let s = Scenario::default();
        let m = s.geometry.elements() as f64;
        let (a, _) = crate::steering::full_steering(&s.geometry, s.incident, AnglePair::new(0.0, 125.0));
        let mut vals: Vec<f64> = (0..100)
            .map(|seed| quad(&a.entries, &random_phases(2304, seed)))
            .collect();
        vals.sort_by(f64::total_cmp);
        let median = 0.5 * (vals[49] + vals[50]);
        assert!(median > 0.5 * m && median < 2.0 * m, "median {median}");
    }

    #[test]
    fn single_point_mainlobe_matches_coherent_bound() {
        let mut s = tiny(2);
        s.mask = MaskSpec::rect([0.0, 0.0], [130.0, 130.0]);
        s.mask.sidelobe_regions = Some(Vec::new());
        let sol = solve_joint(&s).unwrap();
        let eta2 = eta_sq(&s.gains, s.incident, AnglePair::new(0.0, 130.0));
        let bound = linear_to_db(eta2 * 16.0);
        assert!((sol.rho_db - bound).abs() < 0.1, "{} vs {}", sol.rho_db, bound);
    }

    #[test]
    fn rho_recomputed_from_w() {
        let s = tiny(3);
        let sol = solve_ao(&s).unwrap();
        let samples = build_samples(&s.mask).unwrap();
        let rho = samples
            .mainlobe
            .iter()
            .map(|p| gamma(&s.geometry, &s.gains, s.incident, p.angle, &sol.w).unwrap() / p.weight)
            .fold(f64::INFINITY, f64::min);
        assert!((linear_to_db(rho) - sol.rho_db).abs() < 0.01);
        let k = kron(sol.w_y.as_ref().unwrap(), sol.w_z.as_ref().unwrap());
        assert!((k - &sol.w).norm() < 1e-9);
        let trace = &sol.traces.ao_rho_db;
        assert!(trace.windows(2).all(|p| p[1] >= p[0] - 1e-9) || sol.flags.rank_residual_high);
    }

    #[test]
    fn joint_guard() {
        let mut s = tiny(4);
        s.solver.joint_max_elements = 8;
        assert!(matches!(solve_joint(&s), Err(Error::Validation(_))));
    }

    #[test]
    fn solution_file_round_trip() {
        let s = tiny(2);
        let sol = focus_init(&s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sol.json");
        sol.write(&s, &path).unwrap();
        let back = read_solution(&path, &s).unwrap();
        assert!((back.w - &sol.w).norm() < 1e-12);
        assert_eq!(back.rho_db, sol.rho_db);
        assert_eq!(back.method, Method::Focus);
        assert!(read_solution(&path, &tiny(3)).is_err());
    }
}
