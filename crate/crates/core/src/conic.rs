//! First-order solver for the lifted beamforming subproblems.
//!
//! Problem family (all matrices Hermitian, `W` is `n x n`):
//!
//! ```text
//! maximize    w_rho * f(rho) + Re Tr(C W)
//! subject to  g_p Re Tr(L_p W) >= d_p rho      (mainlobe rows)
//!             g_q Re Tr(L_q W) <= rho / delta  (sidelobe rows)
//!             W[m, m] = 1,  W >= 0 (PSD)
//! ```
//!
//! The sidelobe rows may instead be held below a fixed level `cap`.
//!
//! with `f(rho) = 10 log10(rho)` or `f(rho) = rho`.
//!
//! The solver is ADMM over the splitting "affine set" x "cone": slack
//! variables turn the row inequalities into equalities, the equality block
//! (unit diagonal plus rows) is handled by an exact projection with a cached
//! Cholesky factor of its Gram matrix, and the cone block is the PSD
//! projection on `W`, the nonnegative orthant on slacks and the closed-form
//! prox of the log objective on `rho`. The step size is adapted by residual
//! balancing, which does not require refactoring since the projection does
//! not depend on it. After convergence the iterate is polished into an
//! exactly PSD, unit-diagonal point with the largest `rho` its mainlobe rows
//! allow.
//!
//! Everything is generic over the scalar so the same code runs on complex
//! Hermitian matrices and on their real symmetric embedding
//! `[[Re, -Im], [Im, Re]]`.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::scenario::ObjectiveMode;

/// `10 / ln 10`: derivative scale of `10 log10`.
const DB_SCALE: f64 = 4.342_944_819_032_518;

pub trait Scalar: ComplexField<RealField = f64> + faer::traits::ComplexField<Real = f64> + Copy {
    /// Real parts stored per entry when flattening (1 or 2).
    const PARTS: usize;
    fn from_parts(re: f64, im: f64) -> Self;
}

impl Scalar for f64 {
    const PARTS: usize = 1;
    fn from_parts(re: f64, _im: f64) -> Self {
        re
    }
}

impl Scalar for Complex64 {
    const PARTS: usize = 2;
    fn from_parts(re: f64, im: f64) -> Self {
        Complex64::new(re, im)
    }
}

/// Step size range for residual balancing. A very small step lets the
/// scaled dual residual pass the tolerance while the iterate still moves.
const TAU_MIN: f64 = 1e-4;
const TAU_MAX: f64 = 1e4;

/// Inner ADMM tolerance relative to the requested residual tolerance.
const INNER_TOL_FACTOR: f64 = 1e-2;

/// Anderson memory length.
const AA_MEMORY: usize = 10;

/// A Hermitian coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient<T: Scalar> {
    /// `sum_j weight_j f_j f_j^H`
    LowRank(Vec<(f64, DVector<T>)>),
    Dense(DMatrix<T>),
}

impl<T: Scalar> Coefficient<T> {
    pub fn rank_one(f: DVector<T>) -> Self {
        Coefficient::LowRank(vec![(1.0, f)])
    }

    pub fn dim(&self) -> usize {
        match self {
            Coefficient::LowRank(v) => v.first().map_or(0, |(_, f)| f.len()),
            Coefficient::Dense(m) => m.nrows(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            Coefficient::LowRank(v) => Coefficient::LowRank(v.iter().map(|(w, f)| (w * s, f.clone())).collect()),
            Coefficient::Dense(m) => Coefficient::Dense(m * T::from_real(s)),
        }
    }

    /// `Re Tr(C W)`.
    pub fn eval(&self, w: &DMatrix<T>) -> f64 {
        match self {
            Coefficient::LowRank(v) => v.iter().map(|(s, f)| s * f.dotc(&(w * f)).real()).sum(),
            Coefficient::Dense(c) => frob(c, w),
        }
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<T> {
        match self {
            Coefficient::LowRank(v) => {
                let mut out = DMatrix::zeros(n, n);
                for (s, f) in v {
                    out += f * f.adjoint() * T::from_real(*s);
                }
                out
            }
            Coefficient::Dense(c) => c.clone(),
        }
    }

    fn diag(&self, i: usize) -> f64 {
        match self {
            Coefficient::LowRank(v) => v.iter().map(|(s, f)| s * f[i].modulus_squared()).sum(),
            Coefficient::Dense(c) => c[(i, i)].real(),
        }
    }

    /// Frobenius inner product `Re Tr(self other)`.
    fn inner(&self, other: &Self) -> f64 {
        match (self, other) {
            (Coefficient::LowRank(a), Coefficient::LowRank(b)) => a
                .iter()
                .flat_map(|(sa, fa)| b.iter().map(move |(sb, fb)| sa * sb * fa.dotc(fb).modulus_squared()))
                .sum(),
            (Coefficient::LowRank(_), Coefficient::Dense(d)) => self.eval(d),
            (Coefficient::Dense(d), Coefficient::LowRank(_)) => other.eval(d),
            (Coefficient::Dense(a), Coefficient::Dense(b)) => frob(a, b),
        }
    }
}

/// `Re Tr(A^H B)`.
fn frob<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conjugate() * *y).real()).sum()
}

/// `g Re Tr(L W) >= weight * rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct MainlobeRow<T: Scalar> {
    pub coeff: Coefficient<T>,
    pub gain: f64,
    pub weight: f64,
}

/// `g Re Tr(L W) <= rho / delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct SidelobeRow<T: Scalar> {
    pub coeff: Coefficient<T>,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem<T: Scalar> {
    pub n: usize,
    /// Linear objective `Re Tr(C W)`.
    pub objective: Option<Coefficient<T>>,
    /// Weight on the `rho` term; 0 leaves `rho` out of the objective.
    pub rho_weight: f64,
    pub mode: ObjectiveMode,
    pub mainlobe: Vec<MainlobeRow<T>>,
    pub sidelobe: Vec<SidelobeRow<T>>,
    /// Linear sidelobe gap.
    pub delta: f64,
    /// Absolute bound on every sidelobe row, replacing `rho / delta`.
    pub sidelobe_cap: Option<f64>,
}

impl<T: Scalar> ConicProblem<T> {
    pub fn new(n: usize, delta: f64, mode: ObjectiveMode) -> Self {
        Self {
            n,
            objective: None,
            rho_weight: 1.0,
            mode,
            mainlobe: Vec::new(),
            sidelobe: Vec::new(),
            delta,
            sidelobe_cap: None,
        }
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invariant("conic problem dimension must be >= 1".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Invariant("linear sidelobe gap must be > 0".into()));
        }
        if self.sidelobe_cap.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Invariant("sidelobe cap must be finite and > 0".into()));
        }
        let coeffs = self
            .mainlobe
            .iter()
            .map(|r| &r.coeff)
            .chain(self.sidelobe.iter().map(|r| &r.coeff))
            .chain(self.objective.iter());
        for c in coeffs {
            if c.dim() != self.n {
                return Err(Error::Dimension {
                    expected: self.n,
                    got: c.dim(),
                });
            }
            if let Coefficient::Dense(m) = c {
                let defect = hermitian_defect(m);
                if defect > 1e-9 * m.iter().map(|x| x.modulus()).fold(1.0, f64::max) {
                    return Err(Error::NotHermitian(defect));
                }
            }
        }
        Ok(())
    }

    /// Largest sidelobe gap compatible with pairs of rank-one rows whose
    /// coefficients are parallel (`f_q = alpha f_p`): such a pair holds only
    /// when `g_p / d_p >= delta g_q |alpha|^2`. `None` without such pairs.
    pub fn parallel_gap_limit(&self) -> Option<f64> {
        if self.sidelobe_cap.is_some() {
            return None;
        }
        fn single<T: Scalar>(c: &Coefficient<T>) -> Option<(f64, &DVector<T>)> {
            match c {
                Coefficient::LowRank(v) if v.len() == 1 => Some((v[0].0, &v[0].1)),
                _ => None,
            }
        }
        let mut limit: Option<f64> = None;
        for p in &self.mainlobe {
            let Some((sp, fp)) = single(&p.coeff) else { continue };
            let np = fp.norm_squared();
            for q in &self.sidelobe {
                let Some((sq, fq)) = single(&q.coeff) else { continue };
                let nq = fq.norm_squared();
                if fp.dotc(fq).modulus_squared() < (1.0 - 1e-12) * np * nq {
                    continue;
                }
                let ratio = (p.gain * sp / p.weight) / (q.gain * sq * nq / np);
                limit = Some(limit.map_or(ratio, |l: f64| l.min(ratio)));
            }
        }
        limit
    }

    /// Objective value at `(w, rho)`.
    pub fn objective_value(&self, w: &DMatrix<T>, rho: f64) -> f64 {
        let lin = self.objective.as_ref().map_or(0.0, |c| c.eval(w));
        let rho_term = match self.mode {
            ObjectiveMode::Db if self.rho_weight != 0.0 => self.rho_weight * crate::linear_to_db(rho),
            ObjectiveMode::Db => 0.0,
            ObjectiveMode::Linear => self.rho_weight * rho,
        };
        rho_term + lin
    }

    /// Largest `rho` the mainlobe rows admit at `w`.
    pub fn mainlobe_floor(&self, w: &DMatrix<T>) -> f64 {
        self.mainlobe
            .iter()
            .map(|r| r.gain * r.coeff.eval(w) / r.weight)
            .fold(f64::INFINITY, f64::min)
    }

    /// Right-hand side of the sidelobe rows.
    pub fn sidelobe_bound(&self, rho: f64) -> f64 {
        self.sidelobe_cap.unwrap_or(rho / self.delta)
    }

    /// Largest relative row violation at `(w, rho)`.
    pub fn max_row_violation(&self, w: &DMatrix<T>, rho: f64) -> f64 {
        let mut worst = 0.0f64;
        for r in &self.mainlobe {
            let lhs = r.gain * r.coeff.eval(w);
            let rhs = r.weight * rho;
            worst = worst.max(rel_excess(rhs, lhs));
        }
        for r in &self.sidelobe {
            let lhs = r.gain * r.coeff.eval(w);
            worst = worst.max(rel_excess(lhs, self.sidelobe_bound(rho)));
        }
        worst
    }
}

/// `max(0, a - b) / max(|a|, |b|)`.
fn rel_excess(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).max(0.0) / scale
    }
}

impl ConicProblem<Complex64> {
    /// Self-describing JSON dump for offline cross-checks.
    pub fn to_json(&self) -> Value {
        fn cvec(v: &DVector<Complex64>) -> Value {
            json!({
                "re": v.iter().map(|x| x.re).collect::<Vec<_>>(),
                "im": v.iter().map(|x| x.im).collect::<Vec<_>>(),
            })
        }
        fn coeff(c: &Coefficient<Complex64>) -> Value {
            match c {
                Coefficient::LowRank(v) => json!({
                    "kind": "low_rank",
                    "terms": v.iter().map(|(w, f)| json!({"weight": w, "vector": cvec(f)})).collect::<Vec<_>>(),
                }),
                Coefficient::Dense(m) => json!({
                    "kind": "dense",
                    "rows": m.nrows(),
                    "re_row_major": m.transpose().iter().map(|x| x.re).collect::<Vec<_>>(),
                    "im_row_major": m.transpose().iter().map(|x| x.im).collect::<Vec<_>>(),
                }),
            }
        }
        json!({
            "format": "qsirs-conic-problem",
            "version": 1,
            "description": "maximize rho_weight*f(rho) + Re Tr(C W) s.t. gain*Re Tr(L W) >= weight*rho (mainlobe), gain*Re Tr(L W) <= rho/delta, or <= sidelobe_cap when set (sidelobe), diag(W) = 1, W PSD; f = 10log10 (db) or identity (linear); low_rank L = sum weight*v v^H",
            "n": self.n,
            "objective_mode": match self.mode { ObjectiveMode::Db => "db", ObjectiveMode::Linear => "linear" },
            "rho_weight": self.rho_weight,
            "delta": self.delta,
            "sidelobe_cap": self.sidelobe_cap,
            "objective": self.objective.as_ref().map(coeff),
            "mainlobe": self.mainlobe.iter().map(|r| json!({"gain": r.gain, "weight": r.weight, "coeff": coeff(&r.coeff)})).collect::<Vec<_>>(),
            "sidelobe": self.sidelobe.iter().map(|r| json!({"gain": r.gain, "coeff": coeff(&r.coeff)})).collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConicSettings {
    /// Relative primal/dual residual tolerance.
    pub residual_tol: f64,
    pub max_iters: usize,
    /// Over-relaxation factor in (0, 2).
    pub relaxation: f64,
    pub initial_step: f64,
}

impl Default for ConicSettings {
    fn default() -> Self {
        Self {
            residual_tol: 1e-6,
            max_iters: 20_000,
            relaxation: 1.6,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct ConicSolution<T: Scalar> {
    pub w: DMatrix<T>,
    pub rho: f64,
    pub objective: f64,
    pub status: SolveStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Largest relative row violation of the polished point.
    pub row_violation: f64,
    /// Relative complementary slackness residual over the inequality rows.
    pub complementarity: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
struct AdmmState<T: Scalar> {
    w: DMatrix<T>,
    r: f64,
    s: DVector<f64>,
    uw: DMatrix<T>,
    ur: f64,
    us: DVector<f64>,
    tau: f64,
}

impl<T: Scalar> AdmmState<T> {
    fn flat_len(n: usize, m: usize) -> usize {
        2 * (T::PARTS * n * n + 1 + m)
    }

    fn flatten(&self, out: &mut DVector<f64>) {
        let mut k = 0;
        for mat in [&self.w, &self.uw] {
            for x in mat.iter() {
                out[k] = x.real();
                k += 1;
                if T::PARTS == 2 {
                    out[k] = x.imaginary();
                    k += 1;
                }
            }
        }
        out[k] = self.r;
        out[k + 1] = self.ur;
        k += 2;
        for v in [&self.s, &self.us] {
            for x in v.iter() {
                out[k] = *x;
                k += 1;
            }
        }
    }

    fn unflatten(&mut self, v: &DVector<f64>) {
        let mut k = 0;
        for mat in [&mut self.w, &mut self.uw] {
            for x in mat.iter_mut() {
                let re = v[k];
                let im = if T::PARTS == 2 { v[k + 1] } else { 0.0 };
                k += T::PARTS;
                *x = T::from_parts(re, im);
            }
        }
        self.r = v[k];
        self.ur = v[k + 1];
        k += 2;
        for vec in [&mut self.s, &mut self.us] {
            for x in vec.iter_mut() {
                *x = v[k];
                k += 1;
            }
        }
    }
}

/// Type-II Anderson extrapolation of a fixed-point map `x -> g(x)`.
struct Anderson {
    xs: std::collections::VecDeque<DVector<f64>>,
    gs: std::collections::VecDeque<DVector<f64>>,
}

impl Anderson {
    fn new() -> Self {
        Self {
            xs: Default::default(),
            gs: Default::default(),
        }
    }

    fn clear(&mut self) {
        self.xs.clear();
        self.gs.clear();
    }

    fn push(&mut self, x: DVector<f64>, g: DVector<f64>) {
        if self.xs.len() > AA_MEMORY {
            self.xs.pop_front();
            self.gs.pop_front();
        }
        self.xs.push_back(x);
        self.gs.push_back(g);
    }

    /// `g_k - dG gamma` with `gamma` the least-squares fit of `f_k` by `dF`.
    fn extrapolate(&self) -> Option<DVector<f64>> {
        let k = self.xs.len();
        if k < 2 {
            return None;
        }
        let f: Vec<DVector<f64>> = self.xs.iter().zip(&self.gs).map(|(x, g)| g - x).collect();
        let cols = k - 1;
        let df: Vec<DVector<f64>> = (0..cols).map(|i| &f[i + 1] - &f[i]).collect();
        let mut a = DMatrix::<f64>::zeros(cols, cols);
        let mut b = DVector::<f64>::zeros(cols);
        for i in 0..cols {
            for j in i..cols {
                let v = df[i].dot(&df[j]);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
            b[i] = df[i].dot(&f[cols]);
        }
        let reg = 1e-10 * a.trace().max(1e-300);
        for i in 0..cols {
            a[(i, i)] += reg;
        }
        let gamma = a.cholesky()?.solve(&b);
        let mut out = self.gs[cols].clone();
        for i in 0..cols {
            out.axpy(-gamma[i], &(&self.gs[i + 1] - &self.gs[i]), 1.0);
        }
        out.iter().all(|x| x.is_finite()).then_some(out)
    }
}

/// A point of the product space (W, r, s).
struct Point<T: Scalar> {
    w: DMatrix<T>,
    r: f64,
    s: DVector<f64>,
}

impl<T: Scalar> Point<T> {
    fn norm_sq(&self) -> f64 {
        self.w.norm_squared() + self.r * self.r + self.s.norm_squared()
    }
}

/// Reusable solver: the equality projection is factored once, the objective
/// can be swapped between solves and the ADMM state carries over as a warm
/// start.
pub struct ConicSolver<T: Scalar> {
    problem: ConicProblem<T>,
    settings: ConicSettings,
    n: usize,
    /// Scale of the internal `r = rho / rho_scale`.
    rho_scale: f64,
    /// Coefficient of `Re Tr(L_j W)` in normalized row j.
    coef_w: Vec<f64>,
    /// Coefficient of `r` in normalized row j.
    coef_r: Vec<f64>,
    /// Constant term of normalized row j.
    offset: Vec<f64>,
    /// All low-rank factors, one column each.
    factors: DMatrix<T>,
    factor_row: Vec<usize>,
    factor_weight: Vec<f64>,
    dense_rows: Vec<(usize, DMatrix<T>)>,
    gram: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    state: Option<AdmmState<T>>,
    conflict: bool,
}

impl<T: Scalar> ConicSolver<T> {
    pub fn new(problem: ConicProblem<T>, settings: ConicSettings) -> Result<Self> {
        problem.check()?;
        let n = problem.n;
        let coeffs: Vec<&Coefficient<T>> = problem
            .mainlobe
            .iter()
            .map(|r| &r.coeff)
            .chain(problem.sidelobe.iter().map(|r| &r.coeff))
            .collect();
        let norms: Vec<f64> = coeffs.iter().map(|c| c.inner(c).max(0.0).sqrt()).collect();

        let rho_scale = {
            let p = &problem.mainlobe;
            let q = &problem.sidelobe;
            let s = if !p.is_empty() {
                p.iter().zip(&norms).map(|(r, nl)| r.gain * nl / r.weight).sum::<f64>() / p.len() as f64
            } else if !q.is_empty() {
                problem.delta * q.iter().zip(&norms[p.len()..]).map(|(r, nl)| r.gain * nl).sum::<f64>() / q.len() as f64
            } else {
                1.0
            };
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        };

        let mut coef_w = Vec::with_capacity(coeffs.len());
        let mut coef_r = Vec::with_capacity(coeffs.len());
        let mut offset = Vec::with_capacity(coeffs.len());
        for (j, nl) in norms.iter().enumerate() {
            let (cw, cr, b) = if j < problem.mainlobe.len() {
                let r = &problem.mainlobe[j];
                (r.gain, -r.weight * rho_scale, 0.0)
            } else {
                let r = &problem.sidelobe[j - problem.mainlobe.len()];
                match problem.sidelobe_cap {
                    Some(cap) => (-r.gain, 0.0, cap),
                    None => (-r.gain, rho_scale / problem.delta, 0.0),
                }
            };
            let norm = ((cw * nl).powi(2) + cr * cr + b * b).sqrt();
            let norm = if norm > 0.0 { norm } else { 1.0 };
            coef_w.push(cw / norm);
            coef_r.push(cr / norm);
            offset.push(b / norm);
        }

        let mut cols = Vec::new();
        let mut factor_row = Vec::new();
        let mut factor_weight = Vec::new();
        let mut dense_rows = Vec::new();
        for (j, c) in coeffs.iter().enumerate() {
            match c {
                Coefficient::LowRank(v) => {
                    for (s, f) in v {
                        cols.push(f.clone());
                        factor_row.push(j);
                        factor_weight.push(*s);
                    }
                }
                Coefficient::Dense(m) => dense_rows.push((j, m.clone())),
            }
        }
        let factors = if cols.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&cols)
        };

        let rows = coeffs.len();
        let dim = n + rows;
        let mut g = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            g[(i, i)] = 1.0;
        }
        for (j, c) in coeffs.iter().enumerate() {
            for i in 0..n {
                let v = coef_w[j] * c.diag(i);
                g[(i, n + j)] = v;
                g[(n + j, i)] = v;
            }
            for (k, d) in coeffs.iter().enumerate().skip(j) {
                let mut v = coef_w[j] * coef_w[k] * c.inner(d) + coef_r[j] * coef_r[k];
                if j == k {
                    v += 1.0;
                }
                g[(n + j, n + k)] = v;
                g[(n + k, n + j)] = v;
            }
        }
        let gram = nalgebra::Cholesky::new(g)
            .ok_or_else(|| Error::Invariant("equality Gram matrix is not positive definite".into()))?;

        Ok(Self {
            conflict: problem
                .parallel_gap_limit()
                .is_some_and(|l| l < problem.delta * (1.0 - 1e-9)),
            problem,
            settings,
            n,
            rho_scale,
            coef_w,
            coef_r,
            offset,
            factors,
            factor_row,
            factor_weight,
            dense_rows,
            gram,
            state: None,
        })
    }

    pub fn problem(&self) -> &ConicProblem<T> {
        &self.problem
    }

    pub fn settings_mut(&mut self) -> &mut ConicSettings {
        &mut self.settings
    }

    /// Replaces the linear objective; the factorization is unaffected.
    pub fn set_objective(&mut self, objective: Option<Coefficient<T>>) -> Result<()> {
        if let Some(c) = &objective {
            if c.dim() != self.n {
                return Err(Error::Dimension {
                    expected: self.n,
                    got: c.dim(),
                });
            }
        }
        self.problem.objective = objective;
        Ok(())
    }

    /// Starts the next solve from `w` (dual state is reset).
    pub fn warm_start(&mut self, w: &DMatrix<T>) {
        let ells = self.row_values(w);
        let rho = self.best_rho(&ells, None);
        let r = rho / self.rho_scale;
        let s = DVector::from_fn(ells.len(), |j, _| {
            (self.coef_w[j] * ells[j] + self.coef_r[j] * r + self.offset[j]).max(0.0)
        });
        let tau = self.state.as_ref().map_or(self.settings.initial_step, |st| st.tau);
        self.state = Some(AdmmState {
            w: w.clone(),
            r,
            s,
            uw: DMatrix::zeros(self.n, self.n),
            ur: 0.0,
            us: DVector::zeros(ells.len()),
            tau,
        });
    }

    fn rows(&self) -> usize {
        self.coef_w.len()
    }

    /// `Re Tr(L_j W)` for every row.
    fn row_values(&self, w: &DMatrix<T>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows());
        if self.factors.ncols() > 0 {
            let p = matmul(w, &self.factors);
            for k in 0..self.factors.ncols() {
                let v = self.factors.column(k).dotc(&p.column(k)).real();
                out[self.factor_row[k]] += self.factor_weight[k] * v;
            }
        }
        for (j, d) in &self.dense_rows {
            out[*j] = frob(d, w);
        }
        out
    }

    /// `sum_j c_j L_j`.
    fn row_adjoint(&self, c: &DVector<f64>) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.n, self.n);
        if self.factors.ncols() > 0 {
            let mut scaled = self.factors.clone();
            for k in 0..scaled.ncols() {
                let s = c[self.factor_row[k]] * self.factor_weight[k];
                scaled.column_mut(k).scale_mut(s);
            }
            out += matmul_adj(&scaled, &self.factors);
        }
        for (j, d) in &self.dense_rows {
            out += d * T::from_real(c[*j]);
        }
        out
    }

    /// Euclidean projection onto {diag W = 1, normalized rows = s}.
    fn project_affine(&self, p: Point<T>) -> Point<T> {
        let n = self.n;
        let m = self.rows();
        let ells = self.row_values(&p.w);
        let mut resid = DVector::zeros(n + m);
        for i in 0..n {
            resid[i] = p.w[(i, i)].real() - 1.0;
        }
        for j in 0..m {
            resid[n + j] = self.coef_w[j] * ells[j] + self.coef_r[j] * p.r + self.offset[j] - p.s[j];
        }
        let lambda = self.gram.solve(&resid);
        let row_l = DVector::from_fn(m, |j, _| lambda[n + j] * self.coef_w[j]);
        let mut w = p.w - self.row_adjoint(&row_l);
        for i in 0..n {
            w[(i, i)] -= T::from_real(lambda[i]);
        }
        let r = p.r - (0..m).map(|j| lambda[n + j] * self.coef_r[j]).sum::<f64>();
        let s = p.s + lambda.rows(n, m);
        Point { w, r, s }
    }

    fn best_rho(&self, ells: &DVector<f64>, fallback: Option<f64>) -> f64 {
        let pr = &self.problem;
        let np = pr.mainlobe.len();
        let ceiling = pr
            .mainlobe
            .iter()
            .enumerate()
            .map(|(j, r)| r.gain * ells[j] / r.weight)
            .fold(f64::INFINITY, f64::min);
        let floor = if pr.sidelobe_cap.is_some() {
            0.0
        } else {
            pr.sidelobe
                .iter()
                .enumerate()
                .map(|(j, r)| pr.delta * r.gain * ells[np + j])
                .fold(0.0, f64::max)
        };
        if ceiling.is_finite() {
            if floor <= ceiling {
                ceiling
            } else if ceiling > 0.0 {
                // split the violation evenly in log scale
                (floor * ceiling).sqrt()
            } else {
                ceiling.max(0.0)
            }
        } else {
            fallback.unwrap_or(floor).max(floor)
        }
    }

    fn objective_terms(&self) -> ObjectiveTerms<T> {
        let rho_w = self.problem.rho_weight;
        let linear_r = match self.problem.mode {
            ObjectiveMode::Linear => -rho_w * self.rho_scale,
            ObjectiveMode::Db => 0.0,
        };
        let log_w = match self.problem.mode {
            ObjectiveMode::Db => rho_w * DB_SCALE,
            ObjectiveMode::Linear => 0.0,
        };
        let c = self.problem.objective.as_ref().map(|c| c.to_dense(self.n));
        let norm = c.as_ref().map_or(0.0, |c| c.norm()) + linear_r.abs() + log_w;
        ObjectiveTerms {
            c,
            linear_r,
            log_w,
            norm,
        }
    }

    /// One ADMM step in place; returns the relative (primal, dual) residuals.
    fn step(&self, state: &mut AdmmState<T>, obj: &ObjectiveTerms<T>, alpha: f64) -> (f64, f64) {
        let tau = state.tau;
        // affine projection of z - u - c/tau (minimization form)
        let mut yw = &state.w - &state.uw;
        if let Some(c) = &obj.c {
            yw += c * T::from_real(1.0 / tau);
        }
        let x = self.project_affine(Point {
            w: yw,
            r: state.r - state.ur - obj.linear_r / tau,
            s: &state.s - &state.us,
        });

        // relaxed point, then cone and prox steps
        let vw = &x.w * T::from_real(alpha) + &state.w * T::from_real(1.0 - alpha) + &state.uw;
        let vr = alpha * x.r + (1.0 - alpha) * state.r + state.ur;
        let vs = &x.s * alpha + &state.s * (1.0 - alpha) + &state.us;
        let new_w = psd_part(&vw);
        let new_r = if obj.log_w > 0.0 {
            0.5 * (vr + (vr * vr + 4.0 * obj.log_w / tau).sqrt())
        } else {
            vr.max(0.0)
        };
        let new_s = vs.map(|v| v.max(0.0));
        state.uw = vw - &new_w;
        state.ur = vr - new_r;
        state.us = vs - &new_s;

        let dz = ((&new_w - &state.w).norm_squared() + (new_r - state.r).powi(2) + (&new_s - &state.s).norm_squared())
            .sqrt();
        let r_p = ((&x.w - &new_w).norm_squared() + (x.r - new_r).powi(2) + (&x.s - &new_s).norm_squared()).sqrt();
        let z_norm = (new_w.norm_squared() + new_r * new_r + new_s.norm_squared()).sqrt();
        state.w = new_w;
        state.r = new_r;
        state.s = new_s;

        let scale_p = x.norm_sq().sqrt().max(z_norm).max(1.0);
        let dual_norm = tau * (state.uw.norm_squared() + state.ur * state.ur + state.us.norm_squared()).sqrt();
        let scale_d = dual_norm.max(obj.norm).max(1e-12);
        (r_p / scale_p, tau * dz / scale_d)
    }

    /// Accelerated ADMM iterations until the relative residuals drop below
    /// `tol`. Extrapolated points are kept only while they shrink the
    /// fixed-point residual; the returned state is always a plain step output.
    fn iterate(&self, state: &mut AdmmState<T>, obj: &ObjectiveTerms<T>, tol: f64, budget: usize, alpha: f64) -> Run {
        let mut run = Run {
            iterations: 0,
            converged: false,
            primal: f64::INFINITY,
            dual: f64::INFINITY,
        };
        let dim = AdmmState::<T>::flat_len(self.n, self.rows());
        let mut aa = Anderson::new();
        let mut x = DVector::zeros(dim);
        let mut g = DVector::zeros(dim);
        // plain step output to fall back to, and its residual norm
        let mut fallback: Option<(AdmmState<T>, f64)> = None;
        for it in 0..budget {
            run.iterations = it + 1;
            state.flatten(&mut x);
            let (primal, dual) = self.step(state, obj, alpha);
            state.flatten(&mut g);
            let res = (&g - &x).norm();
            if let Some((plain, plain_res)) = fallback.take() {
                if res > plain_res {
                    *state = plain;
                    aa.clear();
                    continue;
                }
            }
            run.primal = primal;
            run.dual = dual;
            if primal <= tol && dual <= tol {
                run.converged = true;
                break;
            }
            if it > 0 && it % 25 == 0 {
                let ratio = (primal / dual.max(1e-300)).sqrt().clamp(0.1, 10.0);
                let tau = state.tau;
                let new_tau = (tau * ratio).clamp(TAU_MIN, TAU_MAX);
                if !(0.2..=5.0).contains(&ratio) && new_tau != tau {
                    let k = tau / new_tau;
                    state.uw *= T::from_real(k);
                    state.ur *= k;
                    state.us *= k;
                    state.tau = new_tau;
                    aa.clear();
                    continue;
                }
            }
            aa.push(x.clone(), g.clone());
            if let Some(next) = aa.extrapolate() {
                fallback = Some((state.clone(), res));
                state.unflatten(&next);
            }
        }
        if let Some((plain, _)) = fallback {
            *state = plain;
        }
        run
    }

    /// Exactly unit-diagonal PSD point and the best `rho` for it.
    fn polish(&self, state: &AdmmState<T>) -> (DMatrix<T>, f64, bool) {
        let n = self.n;
        let mut w = hermitian_part(&state.w);
        let diag_ok = (0..n).all(|i| w[(i, i)].real() > 0.0);
        if diag_ok {
            let d: Vec<f64> = (0..n).map(|i| 1.0 / w[(i, i)].real().sqrt()).collect();
            for j in 0..n {
                for i in 0..n {
                    w[(i, j)] *= T::from_real(d[i] * d[j]);
                }
            }
        }
        let ells = self.row_values(&w);
        let rho = self.best_rho(&ells, Some(state.r * self.rho_scale));
        (w, rho, diag_ok)
    }

    pub fn solve(&mut self) -> Result<ConicSolution<T>> {
        let n = self.n;
        let m = self.rows();
        let st = settings_clamped(self.settings);
        if self.state.is_none() {
            self.warm_start(&DMatrix::identity(n, n));
        }
        if self.conflict {
            log::debug!("conic: parallel mainlobe and sidelobe rows cannot reach the gap");
            return Ok(ConicSolution {
                w: DMatrix::identity(n, n),
                rho: 0.0,
                objective: f64::NEG_INFINITY,
                status: SolveStatus::Infeasible,
                primal_residual: f64::INFINITY,
                dual_residual: f64::INFINITY,
                row_violation: 1.0,
                complementarity: 0.0,
                iterations: 0,
            });
        }
        let mut state = self.state.take().expect("state initialized");
        let obj = self.objective_terms();

        // iterate two decades past the target so the objective is accurate to
        // it, then tighten further until the polished rows meet it too
        let mut tol = st.residual_tol * INNER_TOL_FACTOR;
        let mut iterations = 0;
        let (run, (w, rho, diag_ok), row_violation) = loop {
            let run = self.iterate(&mut state, &obj, tol, st.max_iters - iterations, st.relaxation);
            iterations += run.iterations;
            let polished = self.polish(&state);
            let viol = self.problem.max_row_violation(&polished.0, polished.1);
            if !run.converged || viol <= st.residual_tol || iterations >= st.max_iters || tol < 1e-12 {
                break (run, polished, viol);
            }
            tol *= 0.1;
        };
        let objective = self.problem.objective_value(&w, rho);

        // largest |y_j| * slack_j over the normalized rows at the polished point
        let complementarity = {
            let y_inf = state.us.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if m > 0 && y_inf > 0.0 {
                let ells = self.row_values(&w);
                let r = rho / self.rho_scale;
                (0..m)
                    .map(|j| {
                        let slack = (self.coef_w[j] * ells[j] + self.coef_r[j] * r + self.offset[j]).max(0.0);
                        state.us[j].abs() / y_inf * slack
                    })
                    .fold(0.0, f64::max)
            } else {
                0.0
            }
        };

        let feasible = rho > 0.0 || self.problem.mainlobe.is_empty();
        let status = if !feasible || (!run.converged && row_violation > 1e-2) {
            SolveStatus::Infeasible
        } else if run.converged && diag_ok && row_violation <= st.residual_tol {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIters
        };

        log::debug!(
            "conic n={} rows={} iters={} status={:?} viol={:.2e} rho={:.4e} tau={:.2e}",
            n,
            m,
            iterations,
            status,
            row_violation,
            rho,
            state.tau
        );
        self.state = Some(state);
        Ok(ConicSolution {
            w,
            rho,
            objective,
            status,
            primal_residual: run.primal,
            dual_residual: run.dual,
            row_violation,
            complementarity,
            iterations,
        })
    }
}

struct ObjectiveTerms<T: Scalar> {
    c: Option<DMatrix<T>>,
    linear_r: f64,
    log_w: f64,
    norm: f64,
}

struct Run {
    iterations: usize,
    converged: bool,
    primal: f64,
    dual: f64,
}

fn settings_clamped(mut s: ConicSettings) -> ConicSettings {
    s.relaxation = s.relaxation.clamp(0.1, 1.9);
    s.max_iters = s.max_iters.max(1);
    s
}

/// One-shot solve from a cold start.
pub fn solve<T: Scalar>(problem: &ConicProblem<T>, settings: ConicSettings) -> Result<ConicSolution<T>> {
    ConicSolver::new(problem.clone(), settings)?.solve()
}

fn hermitian_defect<T: Scalar>(m: &DMatrix<T>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conjugate()).modulus());
        }
    }
    worst
}

fn hermitian_part<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.adjoint()) * T::from_real(0.5)
}

fn faer_view<T: Scalar>(m: &DMatrix<T>) -> faer::MatRef<'_, T> {
    faer::MatRef::from_column_major_slice(m.as_slice(), m.nrows(), m.ncols())
}

fn from_faer<T: Scalar>(m: faer::MatRef<'_, T>) -> DMatrix<T> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// `a b`
fn matmul<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    from_faer((faer_view(a) * faer_view(b)).as_ref())
}

/// `a b^H`
fn matmul_adj<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    from_faer((faer_view(a) * faer_view(b).adjoint()).as_ref())
}

/// Eigenvalues (ascending) and eigenvectors of the Hermitian part.
fn eigen<T: Scalar>(m: &DMatrix<T>) -> Result<(Vec<f64>, DMatrix<T>)> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Eigen("non-finite entries".into()));
    }
    let h = hermitian_part(m);
    let e = faer_view(&h)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = e.S().column_vector();
    let vals = (0..h.nrows()).map(|i| ComplexField::real(s[i])).collect();
    Ok((vals, from_faer(e.U())))
}

/// PSD part of a (nearly) Hermitian matrix, unchecked.
fn psd_part<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let Ok((vals, vecs)) = eigen(m) else {
        return DMatrix::zeros(m.nrows(), m.ncols());
    };
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 0.0).collect();
    if keep.is_empty() {
        return DMatrix::zeros(m.nrows(), m.ncols());
    }
    let mut v = DMatrix::zeros(m.nrows(), keep.len());
    let mut vs = DMatrix::zeros(m.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        v.set_column(c, &vecs.column(i));
        vs.set_column(c, &(vecs.column(i) * T::from_real(vals[i])));
    }
    matmul_adj(&vs, &v)
}

/// Frobenius-nearest PSD matrix: negative eigenvalues clamped to zero.
pub fn project_psd<T: Scalar>(x: &DMatrix<T>) -> Result<DMatrix<T>> {
    if x.nrows() != x.ncols() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            got: x.ncols(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite entries".into()));
    }
    let scale = x.iter().map(|v| v.modulus()).fold(1.0, f64::max);
    let defect = hermitian_defect(x);
    if defect > 1e-9 * scale {
        return Err(Error::NotHermitian(defect));
    }
    Ok(psd_part(x))
}

/// Largest eigenvalue and a unit eigenvector of a Hermitian PSD matrix.
pub fn dominant_eigvec<T: Scalar>(w: &DMatrix<T>) -> Result<(f64, DVector<T>)> {
    let (vals, vecs) = eigen_sorted(w)?;
    let lambda = vals[0];
    if !(lambda > 0.0) {
        return Err(Error::ZeroMatrix);
    }
    Ok((lambda, vecs.column(0).into_owned()))
}

/// Eigenvalues in descending order with matching eigenvector columns.
pub fn eigen_sorted<T: Scalar>(w: &DMatrix<T>) -> Result<(Vec<f64>, DMatrix<T>)> {
    let (vals, vecs) = eigen(w)?;
    let n = vals.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let sorted = idx.iter().map(|&i| vals[i]).collect();
    let mut out = DMatrix::zeros(w.nrows(), w.ncols());
    for (c, &i) in idx.iter().enumerate() {
        out.set_column(c, &vecs.column(i));
    }
    Ok((sorted, out))
}

/// `[[Re, -Im], [Im, Re]]`.
pub fn embed_matrix(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    DMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let x = m[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => x.re,
            (true, false) => -x.im,
            (false, true) => x.im,
        }
    })
}

/// Inverse of [`embed_matrix`], averaging the redundant blocks.
pub fn unembed_matrix(z: &DMatrix<f64>) -> DMatrix<Complex64> {
    let n = z.nrows() / 2;
    DMatrix::from_fn(n, n, |i, j| {
        let re = 0.5 * (z[(i, j)] + z[(n + i, n + j)]);
        let im = 0.5 * (z[(n + i, j)] - z[(i, n + j)]);
        Complex64::new(re, im)
    })
}

fn embed_coeff(c: &Coefficient<Complex64>) -> Coefficient<f64> {
    match c {
        Coefficient::LowRank(v) => {
            let mut out = Vec::with_capacity(2 * v.len());
            for (w, f) in v {
                let n = f.len();
                let u = DVector::from_fn(2 * n, |i, _| if i < n { f[i].re } else { f[i - n].im });
                let t = DVector::from_fn(2 * n, |i, _| if i < n { -f[i].im } else { f[i - n].re });
                out.push((0.5 * w, u));
                out.push((0.5 * w, t));
            }
            Coefficient::LowRank(out)
        }
        Coefficient::Dense(m) => Coefficient::Dense(embed_matrix(m) * 0.5),
    }
}

/// Real symmetric embedding of a complex problem. `Re Tr(L W)` becomes
/// `Tr(emb(L) emb(W)) / 2` and the unit diagonal applies to all `2n` entries.
pub fn real_embedding(p: &ConicProblem<Complex64>) -> ConicProblem<f64> {
    ConicProblem {
        n: 2 * p.n,
        objective: p.objective.as_ref().map(embed_coeff),
        rho_weight: p.rho_weight,
        mode: p.mode,
        mainlobe: p
            .mainlobe
            .iter()
            .map(|r| MainlobeRow {
                coeff: embed_coeff(&r.coeff),
                gain: r.gain,
                weight: r.weight,
            })
            .collect(),
        sidelobe: p
            .sidelobe
            .iter()
            .map(|r| SidelobeRow {
                coeff: embed_coeff(&r.coeff),
                gain: r.gain,
            })
            .collect(),
        delta: p.delta,
        sidelobe_cap: p.sidelobe_cap,
    }
}
