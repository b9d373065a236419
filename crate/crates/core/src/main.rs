//! Command line front end: optimize, evaluate, quantize, assemble and run
//! the canned experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use qsirs::eval::{
    metrics, run_experiment, sweep_pattern, write_convergence_csv, write_metrics_csv, ExperimentKind, ExperimentOptions,
};
use qsirs::optimizer::{optimize, read_solution, BeamSolution, Method};
use qsirs::quantize::{assemble, build_catalog, quantize, TransformSet};
use qsirs::scenario::load_scenario;
use qsirs::{Result, Scenario};

#[derive(Parser)]
#[command(
    name = "qsirs",
    version,
    about = "Shaped 3D beam synthesis for quasi-static reflecting surfaces"
)]
struct Cli {
    /// Scenario JSON; the built-in 48x48 default when omitted.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for the random baseline.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Square array size override (m_y = m_z).
    #[arg(long, global = true)]
    size: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Joint,
    Ao,
    Random,
    Focus,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Joint => Method::Joint,
            MethodArg::Ao => Method::Ao,
            MethodArg::Random => Method::RandomBaseline,
            MethodArg::Focus => Method::Focus,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Table1,
    SizeSweep,
    Quantization,
    MasksDemo,
}

impl From<KindArg> for ExperimentKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Table1 => ExperimentKind::Table1,
            KindArg::SizeSweep => ExperimentKind::SizeSweep,
            KindArg::Quantization => ExperimentKind::Quantization,
            KindArg::MasksDemo => ExperimentKind::MasksDemo,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    Mirror,
    MirrorRotation,
}

impl From<TransformArg> for TransformSet {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::Mirror => TransformSet::MirrorOnly,
            TransformArg::MirrorRotation => TransformSet::MirrorRotation,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a beam and write solution, metrics and convergence files.
    Optimize {
        #[arg(long, value_enum, default_value = "ao")]
        method: MethodArg,
        /// Also write a dense pattern CSV at this step (degrees).
        #[arg(long)]
        pattern_step: Option<f64>,
    },
    /// Recompute metrics and the gain pattern of a solution file.
    Evaluate {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        pattern_step: f64,
    },
    /// Round a solution's phases to `bits` bits.
    Quantize {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value_t = 2)]
        bits: u32,
    },
    /// Quantize and map every element to a pattern and transform.
    Assemble {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value_t = 2)]
        bits: u32,
        #[arg(long, value_enum, default_value = "mirror")]
        transforms: TransformArg,
    },
    /// Run a canned experiment into a timestamped directory under --out.
    Experiment {
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Comma-separated square sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long, default_value_t = 1.0)]
        pattern_step: f64,
    },
}

fn scenario(cli: &Cli) -> Result<Scenario> {
    let s = match &cli.scenario {
        Some(path) => load_scenario(path)?,
        None => Scenario::default(),
    };
    Ok(match cli.size {
        Some(m) => s.with_size(m, m),
        None => s,
    })
}

fn print_metrics(scenario: &Scenario, sol: &BeamSolution) -> Result<qsirs::eval::MetricsReport> {
    let m = metrics(scenario, sol)?;
    println!(
        "rho {:.3} dB  sidelobe peak {:.3} dB  gap {:.3} dB  ({} mainlobe / {} sidelobe samples)",
        m.rho_db, m.sidelobe_max_db, m.gap_db, m.mainlobe_samples, m.sidelobe_samples
    );
    Ok(m)
}

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

fn run(cli: &Cli) -> Result<()> {
    let s = scenario(cli)?;
    let out = &cli.out;
    fs::create_dir_all(out)?;
    match &cli.command {
        Command::Optimize { method, pattern_step } => {
            let sol = optimize(&s, (*method).into(), cli.seed)?;
            println!(
                "{} on {}x{} in {:.1} s",
                sol.method, s.geometry.m_y, s.geometry.m_z, sol.wall_seconds
            );
            let m = print_metrics(&s, &sol)?;
            if sol.flags.rank_residual_high || sol.flags.conic_max_iters || sol.flags.degenerate_extraction {
                println!("flags {:?}", sol.flags);
            }
            let p = out.join("solution.json");
            sol.write(&s, &p)?;
            wrote(&p);
            let p = out.join("metrics.csv");
            write_metrics_csv(&m, &p)?;
            wrote(&p);
            let p = out.join("convergence.csv");
            write_convergence_csv(&sol.traces, &p)?;
            wrote(&p);
            if let Some(step) = pattern_step {
                let p = out.join("pattern.csv");
                sweep_pattern(&s, &sol, *step, *step)?.write_csv(&p)?;
                wrote(&p);
            }
        }
        Command::Evaluate { solution, pattern_step } => {
            let sol = read_solution(solution, &s)?;
            let m = print_metrics(&s, &sol)?;
            let p = out.join("metrics.csv");
            write_metrics_csv(&m, &p)?;
            wrote(&p);
            let p = out.join("pattern.csv");
            sweep_pattern(&s, &sol, *pattern_step, *pattern_step)?.write_csv(&p)?;
            wrote(&p);
        }
        Command::Quantize { solution, bits } => {
            let sol = read_solution(solution, &s)?;
            let q = quantize(&s, &sol, *bits)?;
            println!(
                "{}-bit: rho {:.3} dB (continuous {:.3} dB, loss {:.3} dB)",
                q.bits,
                q.rho_db,
                q.parent_rho_db,
                q.loss_db()
            );
            let p = out.join(format!("quantized_{bits}bit.json"));
            fs::write(&p, serde_json::to_string_pretty(&q)?)?;
            wrote(&p);
            let p = out.join(format!("quantized_{bits}bit_solution.json"));
            q.to_beam().write(&s, &p)?;
            wrote(&p);
        }
        Command::Assemble {
            solution,
            bits,
            transforms,
        } => {
            let sol = read_solution(solution, &s)?;
            let q = quantize(&s, &sol, *bits)?;
            let catalog = build_catalog(*bits, (*transforms).into())?;
            let map = assemble(&q, &catalog)?;
            for line in &map.bom {
                println!("{}: {}", line.pattern_id, line.count);
            }
            let p = out.join("assembly.json");
            map.write_json(&p)?;
            wrote(&p);
            let p = out.join("bom.csv");
            map.write_bom_csv(&p)?;
            wrote(&p);
        }
        Command::Experiment {
            kind,
            sizes,
            pattern_step,
        } => {
            let opts = ExperimentOptions {
                out_root: out.clone(),
                seed: cli.seed,
                sizes: sizes.clone(),
                pattern_step_deg: *pattern_step,
            };
            let report = run_experiment((*kind).into(), &s, &opts)?;
            for r in &report.rows {
                match (&r.error, r.rho_db) {
                    (Some(e), _) => println!("{:<16} {}x{}  failed: {e}", r.label, r.m_y, r.m_z),
                    (None, Some(rho)) => println!(
                        "{:<16} {}x{}  rho {:.3} dB  gap {:.3} dB  {:.1} s",
                        r.label,
                        r.m_y,
                        r.m_z,
                        rho,
                        r.gap_db.unwrap_or(f64::NAN),
                        r.wall_seconds.unwrap_or(0.0)
                    ),
                    (None, None) => println!("{:<16} {}x{}", r.label, r.m_y, r.m_z),
                }
            }
            if let Some(f) = report.fit {
                println!("sqrt(rho) vs M: slope {:.4e}  R^2 {:.4}", f.slope, f.r_squared);
            }
            println!("artifacts in {}", report.dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
