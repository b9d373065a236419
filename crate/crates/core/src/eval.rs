//! Pattern sweeps, metrics and the experiment drivers.
//!
//! Metrics are recomputed from the mask samples through [`crate::channel::gamma`],
//! which shares no code with the optimizer's factored sample cache. Dense
//! pattern grids use the same path and are evaluated in parallel over cells.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::gamma;
use crate::error::{Error, Result};
use crate::linear_to_db;
use crate::masks::{build_samples, MaskSpec, Region, Shape};
use crate::optimizer::{optimize, random_baseline, BeamSolution, Method, Traces};
use crate::quantize::{assemble, build_catalog, quantize, TransformSet};
use crate::scenario::{AnglePair, Scenario};
use crate::steering::CVector;

/// Stand-in for `10 log10(0)` in pattern files.
pub const NEG_INF_DB: f64 = -999.0;

/// Gain in dB over a regular (phi, theta) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternGrid {
    pub phi_deg: Vec<f64>,
    pub theta_deg: Vec<f64>,
    /// Row-major with phi outer: `gain_db[i * theta_deg.len() + j]`.
    pub gain_db: Vec<f64>,
}

fn to_db(g: f64) -> f64 {
    if g > 0.0 {
        linear_to_db(g)
    } else {
        f64::NEG_INFINITY
    }
}

/// `lo, lo + step, ...` up to and including `hi`.
pub fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor().max(0.0) as usize;
    (0..=n).map(|k| ((lo + k as f64 * step) * 1e9).round() / 1e9).collect()
}

impl PatternGrid {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.gain_db[i * self.theta_deg.len() + j]
    }

    /// Cell value at an exact grid angle, if present.
    pub fn at(&self, angle: AnglePair) -> Option<f64> {
        let i = self.phi_deg.iter().position(|p| (p - angle.phi).abs() < 1e-6)?;
        let j = self.theta_deg.iter().position(|t| (t - angle.theta).abs() < 1e-6)?;
        Some(self.get(i, j))
    }

    /// Largest cell and its angle.
    pub fn peak(&self) -> (AnglePair, f64) {
        let (k, v) = self
            .gain_db
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |best, (k, v)| if v > best.1 { (k, v) } else { best },
            );
        let nt = self.theta_deg.len();
        (AnglePair::new(self.phi_deg[k / nt], self.theta_deg[k % nt]), v)
    }

    /// Cells of the elevation cut closest to `theta`.
    pub fn theta_cut(&self, theta: f64) -> Vec<(f64, f64)> {
        let j = (0..self.theta_deg.len())
            .min_by(|a, b| {
                let da = (self.theta_deg[*a] - theta).abs();
                let db = (self.theta_deg[*b] - theta).abs();
                da.total_cmp(&db)
            })
            .unwrap_or(0);
        self.phi_deg
            .iter()
            .enumerate()
            .map(|(i, p)| (*p, self.get(i, j)))
            .collect()
    }

    /// `phi_deg,theta_deg,gain_db`, one row per cell, phi outer.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wr = csv::Writer::from_path(path)?;
        wr.write_record(["phi_deg", "theta_deg", "gain_db"])?;
        for (i, p) in self.phi_deg.iter().enumerate() {
            for (j, t) in self.theta_deg.iter().enumerate() {
                let g = self.get(i, j);
                let g = if g.is_finite() { g } else { NEG_INF_DB };
                wr.write_record([p.to_string(), t.to_string(), g.to_string()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let mut cells = Vec::new();
        for rec in rd.deserialize() {
            let (p, t, g): (f64, f64, f64) = rec?;
            cells.push((p, t, if g <= NEG_INF_DB { f64::NEG_INFINITY } else { g }));
        }
        let mut phi: Vec<f64> = Vec::new();
        let mut theta: Vec<f64> = Vec::new();
        for (p, t, _) in &cells {
            if !phi.contains(p) {
                phi.push(*p);
            }
            if !theta.contains(t) {
                theta.push(*t);
            }
        }
        if phi.len() * theta.len() != cells.len() {
            return Err(Error::Parse("pattern file is not a full grid".into()));
        }
        let mut gain_db = vec![f64::NAN; cells.len()];
        for (p, t, g) in cells {
            let i = phi.iter().position(|x| *x == p).unwrap_or(0);
            let j = theta.iter().position(|x| *x == t).unwrap_or(0);
            gain_db[i * theta.len() + j] = g;
        }
        Ok(Self {
            phi_deg: phi,
            theta_deg: theta,
            gain_db,
        })
    }
}

/// Gain pattern of `w` over the given axes.
pub fn sweep_axes(scenario: &Scenario, w: &CVector, phi_deg: Vec<f64>, theta_deg: Vec<f64>) -> Result<PatternGrid> {
    let m = scenario.geometry.elements();
    if w.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: w.len(),
        });
    }
    let nt = theta_deg.len();
    let gain_db = (0..phi_deg.len() * nt)
        .into_par_iter()
        .map(|k| {
            let a = AnglePair::new(phi_deg[k / nt], theta_deg[k % nt]);
            gamma(&scenario.geometry, &scenario.gains, scenario.incident, a, w).map(to_db)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatternGrid {
        phi_deg,
        theta_deg,
        gain_db,
    })
}

/// Gain pattern over the scenario's reflect range at the given steps.
pub fn sweep_pattern(
    scenario: &Scenario,
    solution: &BeamSolution,
    phi_step: f64,
    theta_step: f64,
) -> Result<PatternGrid> {
    if !(phi_step > 0.0 && theta_step > 0.0) {
        return Err(Error::Parse("pattern steps must be positive".into()));
    }
    let [p0, p1] = scenario.mask.reflect_phi;
    let [t0, t1] = scenario.mask.reflect_theta;
    sweep_axes(scenario, &solution.w, axis(p0, p1, phi_step), axis(t0, t1, theta_step))
}

/// Summary of one solution against its scenario's mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `min_p gamma_p / d_p` in dB.
    pub rho_db: f64,
    /// `max_q gamma_q` in dB (`-inf` with no sidelobe samples).
    pub sidelobe_max_db: f64,
    pub gap_db: f64,
    pub mainlobe_samples: usize,
    pub sidelobe_samples: usize,
    pub sca_runs: usize,
    pub sca_iterations: usize,
    /// Worst final rank ratio over the recorded DC-SCA runs.
    pub final_rank_ratio: Option<f64>,
    pub ao_rounds: usize,
    pub relaxation_rho_db: Option<f64>,
    pub wall_seconds: f64,
}

/// Mainlobe minimum and sidelobe peak of `w` in dB.
pub fn mask_levels(scenario: &Scenario, w: &CVector) -> Result<(f64, f64, usize, usize)> {
    let samples = build_samples(&scenario.mask)?;
    let g = |a: AnglePair| gamma(&scenario.geometry, &scenario.gains, scenario.incident, a, w);
    let mut main = f64::INFINITY;
    for s in &samples.mainlobe {
        main = main.min(g(s.angle)? / s.weight);
    }
    let mut side = 0.0f64;
    for a in &samples.sidelobe {
        side = side.max(g(*a)?);
    }
    Ok((to_db(main), to_db(side), samples.mainlobe.len(), samples.sidelobe.len()))
}

pub fn metrics(scenario: &Scenario, solution: &BeamSolution) -> Result<MetricsReport> {
    let (rho_db, sidelobe_max_db, np, nq) = mask_levels(scenario, &solution.w)?;
    Ok(MetricsReport {
        rho_db,
        sidelobe_max_db,
        gap_db: rho_db - sidelobe_max_db,
        mainlobe_samples: np,
        sidelobe_samples: nq,
        sca_runs: solution.traces.sca.len(),
        sca_iterations: solution.traces.sca.iter().map(|t| t.objective.len()).sum(),
        final_rank_ratio: solution
            .traces
            .sca
            .iter()
            .filter_map(|t| t.rank_ratio.last().copied())
            .reduce(f64::max),
        ao_rounds: solution.traces.ao_rho_db.len().saturating_sub(1),
        relaxation_rho_db: solution.relaxation_rho_db,
        wall_seconds: solution.wall_seconds,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Per-iteration traces as CSV: DC-SCA rows first, then one row per AO round.
pub fn write_convergence_csv(traces: &Traces, path: impl AsRef<Path>) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    wr.write_record([
        "source",
        "label",
        "iteration",
        "objective",
        "dc_residual",
        "rank_ratio",
        "relaxation_rho_db",
        "sigma",
        "rho_db",
    ])?;
    for t in &traces.sca {
        for k in 0..t.objective.len() {
            wr.write_record([
                "sca".to_string(),
                t.label.clone(),
                k.to_string(),
                t.objective[k].to_string(),
                opt(t.dc_residual.get(k).copied()),
                opt(t.rank_ratio.get(k).copied()),
                opt(t.relaxation_rho_db.get(k).copied()),
                opt(t.sigma.get(k).copied()),
                String::new(),
            ])?;
        }
    }
    for (k, rho) in traces.ao_rho_db.iter().enumerate() {
        let mut row = vec![String::new(); 9];
        row[0] = "ao".into();
        row[1] = "ao".into();
        row[2] = k.to_string();
        row[8] = rho.to_string();
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Table1,
    SizeSweep,
    Quantization,
    MasksDemo,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Table1 => "table1",
            ExperimentKind::SizeSweep => "size_sweep",
            ExperimentKind::Quantization => "quantization",
            ExperimentKind::MasksDemo => "masks_demo",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "table1" => ExperimentKind::Table1,
            "size_sweep" => ExperimentKind::SizeSweep,
            "quantization" => ExperimentKind::Quantization,
            "masks_demo" => ExperimentKind::MasksDemo,
            _ => return Err(Error::Parse(format!("unknown experiment kind '{s}'"))),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    /// Parent of the timestamped run directory.
    pub out_root: PathBuf,
    pub seed: u64,
    /// Square array sizes; each kind has its own default.
    pub sizes: Option<Vec<usize>>,
    pub pattern_step_deg: f64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            out_root: PathBuf::from("runs"),
            seed: 0,
            sizes: None,
            pattern_step_deg: 1.0,
        }
    }
}

/// One line of an experiment summary. `error` is set when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub label: String,
    pub method: String,
    pub m_y: usize,
    pub m_z: usize,
    pub bits: Option<u32>,
    pub rho_db: Option<f64>,
    pub sidelobe_max_db: Option<f64>,
    pub gap_db: Option<f64>,
    pub relaxation_rho_db: Option<f64>,
    pub wall_seconds: Option<f64>,
    pub error: Option<String>,
}

impl ExperimentRow {
    fn new(label: &str, method: &str, scenario: &Scenario) -> Self {
        Self {
            label: label.into(),
            method: method.into(),
            m_y: scenario.geometry.m_y,
            m_z: scenario.geometry.m_z,
            bits: None,
            rho_db: None,
            sidelobe_max_db: None,
            gap_db: None,
            relaxation_rho_db: None,
            wall_seconds: None,
            error: None,
        }
    }
}

/// Least-squares line `y = slope x + intercept` and its R^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub dir: PathBuf,
    pub rows: Vec<ExperimentRow>,
    /// `sqrt(rho)` against `M` (size sweep only).
    pub fit: Option<LinearFit>,
}

/// The aperture comparison setup on top of `base`: rectangular mainlobe
/// [-10, 10] x [120, 140] deg with a 5 dB gap.
pub fn comparison_scenario(base: &Scenario, m: usize) -> Scenario {
    let mut s = base.with_size(m, m);
    s.mask = MaskSpec {
        mainlobe: vec![Region::Rect {
            phi: [-10.0, 10.0],
            theta: [120.0, 140.0],
        }],
        shape: Shape::FlatTop,
        ..base.mask.clone()
    };
    s.solver = base.solver.with_delta_db(5.0);
    s
}

/// Named mask variants for the shaped-beam demo, all on `base`'s array.
pub fn mask_variants(base: &Scenario) -> Vec<(&'static str, Scenario)> {
    let with_mask = |mainlobe: Vec<Region>, shape: Shape| {
        let mut s = base.clone();
        s.mask.mainlobe = mainlobe;
        s.mask.shape = shape;
        s
    };
    let square = Region::Rect {
        phi: [-15.0, 15.0],
        theta: [110.0, 140.0],
    };
    let mut no_sidelobe = with_mask(vec![square.clone()], Shape::FlatTop);
    no_sidelobe.mask.sidelobe_regions = Some(Vec::new());
    vec![
        ("square", with_mask(vec![square.clone()], Shape::FlatTop)),
        (
            "trapezoid",
            with_mask(
                vec![Region::Trapezoid {
                    theta: [110.0, 140.0],
                    phi_at_theta_lo: [-5.0, 5.0],
                    phi_at_theta_hi: [-25.0, 25.0],
                }],
                Shape::FlatTop,
            ),
        ),
        (
            "wide",
            with_mask(
                vec![Region::Rect {
                    phi: [-40.0, 40.0],
                    theta: [120.0, 140.0],
                }],
                Shape::FlatTop,
            ),
        ),
        (
            "parabolic",
            with_mask(
                vec![square],
                Shape::Parabolic {
                    l_db: 3.0,
                    boresight: AnglePair::new(0.0, 125.0),
                    half_hpbw_deg: [15.0, 15.0],
                },
            ),
        ),
        ("no_sidelobe", no_sidelobe),
    ]
}

struct Run<'a> {
    dir: &'a Path,
    step: f64,
    rows: Vec<ExperimentRow>,
}

impl Run<'_> {
    /// Solves, writes the per-run files and records a row. Failures are
    /// recorded and returned as `None`.
    fn solve(&mut self, label: &str, scenario: &Scenario, method: Method, seed: u64) -> Option<BeamSolution> {
        let mut row = ExperimentRow::new(label, &method.to_string(), scenario);
        log::info!("{label}: {method} on {}x{}", row.m_y, row.m_z);
        let t = Instant::now();
        let out = optimize(scenario, method, seed).and_then(|sol| {
            self.record(label, scenario, &sol, &mut row)?;
            Ok(sol)
        });
        row.wall_seconds = Some(t.elapsed().as_secs_f64());
        let sol = match out {
            Ok(sol) => Some(sol),
            Err(e) => {
                log::warn!("{label}: {e}");
                row.error = Some(e.to_string());
                None
            }
        };
        self.rows.push(row);
        sol
    }

    fn record(&self, label: &str, scenario: &Scenario, sol: &BeamSolution, row: &mut ExperimentRow) -> Result<()> {
        let m = metrics(scenario, sol)?;
        row.rho_db = Some(m.rho_db);
        row.sidelobe_max_db = Some(m.sidelobe_max_db);
        row.gap_db = Some(m.gap_db);
        row.relaxation_rho_db = m.relaxation_rho_db;
        sol.write(scenario, self.dir.join(format!("{label}_solution.json")))?;
        write_convergence_csv(&sol.traces, self.dir.join(format!("{label}_convergence.csv")))?;
        sweep_pattern(scenario, sol, self.step, self.step)?.write_csv(self.dir.join(format!("{label}_pattern.csv")))?;
        Ok(())
    }
}

fn stamp() -> String {
    let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    format!("{}-{:03}", t.as_secs(), t.subsec_millis())
}

/// Runs one experiment and writes its artifacts under
/// `out_root/<kind>-<timestamp>/`.
pub fn run_experiment(kind: ExperimentKind, base: &Scenario, opts: &ExperimentOptions) -> Result<ExperimentReport> {
    let dir = opts.out_root.join(format!("{kind}-{}", stamp()));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("scenario.json"), base.to_json())?;
    let mut run = Run {
        dir: &dir,
        step: opts.pattern_step_deg,
        rows: Vec::new(),
    };
    let mut fit = None;
    match kind {
        ExperimentKind::Table1 => {
            let sizes = opts.sizes.clone().unwrap_or_else(|| vec![4, 8, 16]);
            for &m in &sizes {
                let s = comparison_scenario(base, m);
                if m <= 8 {
                    run.solve(&format!("joint_{m}x{m}"), &s, Method::Joint, opts.seed);
                }
                run.solve(&format!("ao_{m}x{m}"), &s, Method::Ao, opts.seed);
            }
        }
        ExperimentKind::SizeSweep => {
            let sizes = opts.sizes.clone().unwrap_or_else(|| vec![4, 8, 16]);
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for &m in &sizes {
                let s = base.with_size(m, m);
                if let Some(sol) = run.solve(&format!("ao_{m}x{m}"), &s, Method::Ao, opts.seed) {
                    xs.push((m * m) as f64);
                    ys.push(sol.rho_linear().sqrt());
                }
            }
            fit = linear_fit(&xs, &ys);
            if let Some(f) = fit {
                fs::write(dir.join("fit.json"), serde_json::to_string_pretty(&f)?)?;
            }
        }
        ExperimentKind::Quantization => {
            let m = opts
                .sizes
                .as_ref()
                .and_then(|s| s.first().copied())
                .unwrap_or(base.geometry.m_y);
            let s = base.with_size(m, m);
            if let Some(sol) = run.solve("continuous", &s, Method::Ao, opts.seed) {
                for bits in 1..=4 {
                    let mut row = ExperimentRow::new(&format!("quantized_{bits}bit"), "ao", &s);
                    row.bits = Some(bits);
                    let res = quantize(&s, &sol, bits).and_then(|q| {
                        let (rho, side, _, _) = mask_levels(&s, &q.weights())?;
                        if bits == 2 {
                            let catalog = build_catalog(bits, TransformSet::default())?;
                            let map = assemble(&q, &catalog)?;
                            map.write_json(dir.join("assembly_2bit.json"))?;
                            map.write_bom_csv(dir.join("bom_2bit.csv"))?;
                        }
                        Ok((rho, side))
                    });
                    match res {
                        Ok((rho, side)) => {
                            row.rho_db = Some(rho);
                            row.sidelobe_max_db = Some(side);
                            row.gap_db = Some(rho - side);
                        }
                        Err(e) => row.error = Some(e.to_string()),
                    }
                    run.rows.push(row);
                }
            }
        }
        ExperimentKind::MasksDemo => {
            let m = opts
                .sizes
                .as_ref()
                .and_then(|s| s.first().copied())
                .unwrap_or(base.geometry.m_y);
            for (label, s) in mask_variants(&base.with_size(m, m)) {
                run.solve(label, &s, Method::Ao, opts.seed);
            }
            let s = base.with_size(m, m);
            let mut row = ExperimentRow::new("random", &Method::RandomBaseline.to_string(), &s);
            match random_baseline(&s, opts.seed).and_then(|sol| run.record("random", &s, &sol, &mut row)) {
                Ok(()) => {}
                Err(e) => row.error = Some(e.to_string()),
            }
            run.rows.push(row);
        }
    }
    write_rows(&run.rows, dir.join("metrics.csv"))?;
    Ok(ExperimentReport {
        kind,
        dir: dir.clone(),
        rows: run.rows,
        fit,
    })
}

pub fn write_rows(rows: &[ExperimentRow], path: impl AsRef<Path>) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes a single metrics report as a two-column `metric,value` CSV.
pub fn write_metrics_csv(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    wr.write_record(["metric", "value"])?;
    let rows = [
        ("rho_db", report.rho_db.to_string()),
        ("sidelobe_max_db", report.sidelobe_max_db.to_string()),
        ("gap_db", report.gap_db.to_string()),
        ("mainlobe_samples", report.mainlobe_samples.to_string()),
        ("sidelobe_samples", report.sidelobe_samples.to_string()),
        ("sca_runs", report.sca_runs.to_string()),
        ("sca_iterations", report.sca_iterations.to_string()),
        ("final_rank_ratio", opt(report.final_rank_ratio)),
        ("ao_rounds", report.ao_rounds.to_string()),
        ("relaxation_rho_db", opt(report.relaxation_rho_db)),
        ("wall_seconds", report.wall_seconds.to_string()),
    ];
    for (k, v) in rows {
        wr.write_record([k, v.as_str()])?;
    }
    wr.flush()?;
    Ok(())
}
