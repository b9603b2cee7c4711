//! Command-line driver for the channel solver.
//!
//! Subcommands: `run` (one evaluation of the geometry-to-solution map),
//! `iterate` (global fixed point on the domain geometry), `compare`
//! (continuous-dependence experiment), `verify` (identity / Korn /
//! equicontinuity suites), and `sweep` (cartesian grid over κ, ε, T with
//! concurrent workers; `FSI_THREADS` overrides the worker count).
//!
//! Exit codes: 0 success, 1 usage, 2 configuration error, 3 solver or I/O
//! failure, 4 admissibility violation or fixed-point divergence — in the
//! last case the reports are still written before exiting.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use channel_fsi::analysis::{self, IdentityKind, Perturbation};
use channel_fsi::config::{self, ModelConfig};
use channel_fsi::coupling::{self, IterationReport, IterationStatus};
use channel_fsi::geometry::{self, Grid1d};
use channel_fsi::io;
use channel_fsi::operators::Grid2d;
use channel_fsi::FsiError;

#[derive(Parser)]
#[command(
    name = "channel-fsi",
    version,
    about = "Penalized fluid-structure interaction in a 2D channel: single runs, \
             fixed-point iteration, dependence experiments, verification suites, \
             and parameter sweeps"
)]
struct Cli {
    /// Configuration file; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; overrides the configuration's `[output] directory`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve once on the resting geometry and write the diagnostic series.
    Run(RunArgs),
    /// Run the global fixed-point iteration over the domain geometry.
    Iterate(IterateArgs),
    /// Solve a baseline and a perturbed problem concurrently and report the
    /// continuous-dependence functionals.
    Compare(CompareArgs),
    /// Verification suites: transformation identities, Korn constant,
    /// integral equicontinuity.
    Verify(VerifyArgs),
    /// Cartesian sweep over kappa / eps / T with concurrent workers.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Also write per-level field snapshots (legacy structured points).
    #[arg(long)]
    fields: bool,
}

#[derive(Args)]
struct IterateArgs {
    /// Convergence tolerance on the iterate distance d_k.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,

    /// Iteration budget.
    #[arg(long, default_value_t = 20)]
    max_iter: usize,

    /// Also write per-level field snapshots for the converged trajectory.
    #[arg(long)]
    fields: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PerturbKind {
    /// Shift the inflow pressure amplitude.
    Pressure,
    /// Solve the second problem on a perturbed wall geometry.
    Deformation,
}

#[derive(Args)]
struct CompareArgs {
    /// Which datum to perturb.
    #[arg(long, value_enum, default_value_t = PerturbKind::Pressure)]
    perturb: PerturbKind,

    /// Perturbation amplitude.
    #[arg(long, default_value_t = 1e-2)]
    amplitude: f64,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum VerifyKind {
    /// Every suite below, in order.
    All,
    Piola,
    ViscousTransform,
    GradR,
    TrilinearSkew,
    EssSup,
    Korn,
    Equicontinuity,
}

#[derive(Args)]
struct VerifyArgs {
    /// Which suite to run.
    #[arg(long, value_enum, default_value_t = VerifyKind::All)]
    kind: VerifyKind,

    /// Random samples per pointwise identity.
    #[arg(long, default_value_t = 100)]
    samples: usize,

    /// Seed for the random sample jets.
    #[arg(long, default_value_t = 7)]
    seed: u64,

    /// Cells per direction for the Korn eigensolve (dense solve, so small).
    #[arg(long, default_value_t = 12, value_parser = clap::value_parser!(u16).range(4..=24))]
    korn_n: u16,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated kappa values (configured value when omitted).
    #[arg(long, value_delimiter = ',', value_name = "K1,K2,…")]
    kappa: Vec<f64>,

    /// Comma-separated eps values (configured value when omitted).
    #[arg(long, value_delimiter = ',', value_name = "E1,E2,…")]
    eps: Vec<f64>,

    /// Comma-separated horizons T (configured value when omitted).
    #[arg(long = "t-final", value_delimiter = ',', value_name = "T1,T2,…")]
    t_final: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version arrive here as non-error "errors".
            let _ = err.print();
            return if err.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<FsiError>().map(exit_code_for).unwrap_or(3);
            ExitCode::from(code)
        }
    }
}

fn exit_code_for(err: &FsiError) -> u8 {
    match err {
        FsiError::Config { .. } => 2,
        FsiError::Admissibility(_) | FsiError::Divergence(_) => 4,
        _ => 3,
    }
}

fn load_config(path: Option<&Path>, out: Option<&Path>) -> Result<ModelConfig, FsiError> {
    let mut cfg = match path {
        Some(p) => config::parse_config_file(p).map_err(|e| match e {
            // An unreadable configuration is a configuration problem, not a
            // solver failure — keep it on exit code 2.
            FsiError::Io(io_err) => FsiError::Config {
                line: 0,
                message: format!("cannot read {}: {io_err}", p.display()),
            },
            other => other,
        })?,
        None => ModelConfig::default(),
    };
    if let Some(dir) = out {
        cfg.out_dir = dir.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = load_config(cli.config.as_deref(), cli.out.as_deref())?;
    match cli.command {
        Command::Run(args) => cmd_run(cfg, args),
        Command::Iterate(args) => cmd_iterate(cfg, args),
        Command::Compare(args) => cmd_compare(cfg, args),
        Command::Verify(args) => cmd_verify(cfg, args),
        Command::Sweep(args) => cmd_sweep(cfg, args),
    }
}

fn resting_geometry(cfg: &ModelConfig) -> Vec<Vec<f64>> {
    vec![vec![0.0; cfg.grid1().m()]; cfg.steps() + 1]
}

fn cmd_run(mut cfg: ModelConfig, args: RunArgs) -> anyhow::Result<ExitCode> {
    cfg.write_fields |= args.fields;
    let traj = coupling::evaluate_f(&resting_geometry(&cfg), &cfg)?;
    let dir = PathBuf::from(&cfg.out_dir);
    io::write_run_outputs(&dir, &traj, &cfg, None)
        .with_context(|| format!("writing outputs under {}", dir.display()))?;
    let rows = io::time_series(&traj, &cfg)?;
    let last = rows.last().expect("a run has at least the initial level");
    println!(
        "run: {} levels on a {}x{} grid over T={}",
        traj.levels(),
        cfg.n1,
        cfg.n2,
        cfg.t_final
    );
    println!(
        "final state: fluid energy {:.6e}, wall energy {:.6e}, |div_h u| {:.3e}, |u2-sigma| {:.3e}",
        last.fluid_energy, last.wall_energy, last.div_h_norm, last.wall_mismatch_norm
    );
    println!("wrote {}", dir.join("time_series.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn print_iteration(report: &IterationReport) {
    for k in 1..=report.d.len() {
        let q = if k >= 2 { report.q.get(k - 2).copied().flatten() } else { None };
        match q {
            Some(q) => println!("k={k}  d={:.6e}  q={:.4}", report.d[k - 1], q),
            None => println!("k={k}  d={:.6e}", report.d[k - 1]),
        }
    }
    println!("status: {}", report.message);
}

fn cmd_iterate(mut cfg: ModelConfig, args: IterateArgs) -> anyhow::Result<ExitCode> {
    cfg.write_fields |= args.fields;
    let (traj, report) = coupling::global_iterate(None, &cfg, args.tol, args.max_iter)?;
    let dir = PathBuf::from(&cfg.out_dir);
    io::write_run_outputs(&dir, &traj, &cfg, Some(&report))
        .with_context(|| format!("writing outputs under {}", dir.display()))?;
    print_iteration(&report);
    println!("wrote {}", dir.join("iterate.csv").display());
    match report.status {
        IterationStatus::Converged => Ok(ExitCode::SUCCESS),
        // Budget exhaustion, divergence, and mid-iteration admissibility
        // violations all leave the reports in place and signal exit 4.
        _ => Ok(ExitCode::from(4)),
    }
}

fn cmd_compare(cfg: ModelConfig, args: CompareArgs) -> anyhow::Result<ExitCode> {
    let perturbation = match args.perturb {
        PerturbKind::Pressure => Perturbation::Pressure { amplitude: args.amplitude },
        PerturbKind::Deformation => Perturbation::Deformation { amplitude: args.amplitude },
    };
    let report = analysis::dependence_experiment(&cfg, &perturbation)?;
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("dependence.csv");
    io::write_dependence_report(&path, &report)?;
    let max_ratio = report.ratio.iter().copied().fold(0.0f64, f64::max);
    let k = report.t.len() - 1;
    println!(
        "compare ({}, amplitude {}): final lhs {:.6e}, final rhs {:.6e}, max ratio {:.4}",
        match args.perturb {
            PerturbKind::Pressure => "pressure",
            PerturbKind::Deformation => "deformation",
        },
        args.amplitude,
        report.lhs[k],
        report.data_term[k] + report.deformation_term[k],
        max_ratio
    );
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn identity_kinds(kind: VerifyKind) -> Vec<IdentityKind> {
    match kind {
        VerifyKind::All => IdentityKind::ALL.to_vec(),
        VerifyKind::Piola => vec![IdentityKind::Piola],
        VerifyKind::ViscousTransform => vec![IdentityKind::ViscousTransform],
        VerifyKind::GradR => vec![IdentityKind::GradR],
        VerifyKind::TrilinearSkew => vec![IdentityKind::TrilinearSkew],
        VerifyKind::EssSup => vec![IdentityKind::EssSup],
        VerifyKind::Korn | VerifyKind::Equicontinuity => Vec::new(),
    }
}

fn cmd_verify(cfg: ModelConfig, args: VerifyArgs) -> anyhow::Result<ExitCode> {
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let kinds = identity_kinds(args.kind);
    if !kinds.is_empty() {
        let mut stats = Vec::with_capacity(kinds.len());
        for kind in kinds {
            let s = analysis::verify_identity(kind, args.samples, args.seed)?;
            match s.slope {
                Some(slope) => println!(
                    "{}: max residual {:.3e}, refinement slope {:.3}",
                    kind.name(),
                    s.max_residual,
                    slope
                ),
                None => println!(
                    "{}: max residual {:.3e} over {} samples (mean {:.3e})",
                    kind.name(),
                    s.max_residual,
                    s.count,
                    s.mean_residual
                ),
            }
            stats.push(s);
        }
        let path = dir.join("residuals.csv");
        io::write_residual_stats(&path, &stats)?;
        println!("wrote {}", path.display());
    }

    if matches!(args.kind, VerifyKind::All | VerifyKind::Korn) {
        let n = args.korn_n as usize;
        let grid = Grid2d::new(cfg.l, n, n);
        let g1 = Grid1d::new(cfg.l, n);
        let history =
            geometry::eval_deformation(&[vec![0.0; g1.m()]], &cfg.r0, g1, &[0.0])?;
        let c = analysis::korn_constant(&history.snapshot(0), &grid)?;
        println!("korn constant: {:.6} on a {n}x{n} grid (resting geometry)", c);
        let path = dir.join("korn.csv");
        io::write_csv(
            &path,
            &["n", "c_korn"],
            &[vec![io::fmt_num(n as f64), io::fmt_num(c)]],
        )?;
        println!("wrote {}", path.display());
    }

    if matches!(args.kind, VerifyKind::All | VerifyKind::Equicontinuity) {
        let traj = coupling::evaluate_f(&resting_geometry(&cfg), &cfg)?;
        let mut taus = vec![0.0];
        let mut k = 1usize;
        while k as f64 * cfg.dt <= cfg.t_final / 2.0 + 1e-12 {
            taus.push(k as f64 * cfg.dt);
            k *= 2;
        }
        let profile = analysis::equicontinuity_profile(&traj, &cfg, &taus)?;
        println!(
            "equicontinuity: fitted c {:.6e}, max value/tau {:.6e} over {} offsets",
            profile.fitted_c,
            profile.max_ratio,
            profile.taus.len()
        );
        let path = dir.join("equicontinuity.csv");
        io::write_equicontinuity(&path, &profile)?;
        println!("wrote {}", path.display());
    }

    Ok(ExitCode::SUCCESS)
}

struct SweepJob {
    label: String,
    cfg: ModelConfig,
    kappa: f64,
    eps: f64,
    t_final: f64,
}

fn worker_count(jobs: usize) -> usize {
    let default = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    std::env::var("FSI_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(default)
        .min(jobs.max(1))
}

fn cmd_sweep(cfg: ModelConfig, args: SweepArgs) -> anyhow::Result<ExitCode> {
    let kappas = if args.kappa.is_empty() { vec![cfg.kappa()] } else { args.kappa.clone() };
    let epses = if args.eps.is_empty() { vec![cfg.eps] } else { args.eps.clone() };
    let horizons =
        if args.t_final.is_empty() { vec![cfg.t_final] } else { args.t_final.clone() };

    let mut jobs = Vec::new();
    for &kappa in &kappas {
        for &eps in &epses {
            for &t_final in &horizons {
                let mut job_cfg = cfg.clone();
                job_cfg.kappa = Some(kappa);
                job_cfg.eps = eps;
                job_cfg.t_final = t_final;
                job_cfg.validate()?;
                let label = format!(
                    "kappa{}_eps{}_T{}",
                    io::fmt_num(kappa),
                    io::fmt_num(eps),
                    io::fmt_num(t_final)
                );
                jobs.push(SweepJob { label, cfg: job_cfg, kappa, eps, t_final });
            }
        }
    }

    let sweep_dir = PathBuf::from(&cfg.out_dir).join("sweep");
    std::fs::create_dir_all(&sweep_dir)
        .with_context(|| format!("creating {}", sweep_dir.display()))?;

    let workers = worker_count(jobs.len());
    println!("sweep: {} runs on {workers} worker(s)", jobs.len());

    // Each worker claims jobs through a shared counter; every job writes into
    // its own directory, so the workers never contend on files.
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<io::TimeSeriesRow, FsiError>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= jobs.len() {
                    break;
                }
                let job = &jobs[k];
                let outcome = coupling::evaluate_f(&resting_geometry(&job.cfg), &job.cfg)
                    .and_then(|traj| {
                        io::write_run_outputs(&sweep_dir.join(&job.label), &traj, &job.cfg, None)?;
                        let rows = io::time_series(&traj, &job.cfg)?;
                        Ok(*rows.last().expect("non-empty series"))
                    });
                *results[k].lock().unwrap() = Some(outcome);
            });
        }
    });

    let mut body = Vec::with_capacity(jobs.len());
    let mut worst: u8 = 0;
    for (job, cell) in jobs.iter().zip(&results) {
        let outcome = cell.lock().unwrap().take().expect("every job ran");
        let mut row = vec![
            io::fmt_num(job.kappa),
            io::fmt_num(job.eps),
            io::fmt_num(job.t_final),
        ];
        match outcome {
            Ok(last) => {
                println!(
                    "{}: fluid energy {:.6e}, |div_h u| {:.3e}, |u2-sigma| {:.3e}",
                    job.label, last.fluid_energy, last.div_h_norm, last.wall_mismatch_norm
                );
                row.extend([
                    io::fmt_num(last.fluid_energy),
                    io::fmt_num(last.wall_energy),
                    io::fmt_num(last.div_h_norm),
                    io::fmt_num(last.wall_mismatch_norm),
                ]);
            }
            Err(err) => {
                eprintln!("{}: failed: {err}", job.label);
                worst = worst.max(exit_code_for(&err));
                row.extend([String::new(), String::new(), String::new(), String::new()]);
            }
        }
        body.push(row);
    }
    let summary = sweep_dir.join("summary.csv");
    io::write_csv(
        &summary,
        &[
            "kappa",
            "eps",
            "t_final",
            "fluid_energy",
            "wall_energy",
            "div_h_norm",
            "wall_mismatch_norm",
        ],
        &body,
    )?;
    println!("wrote {}", summary.display());
    Ok(if worst == 0 { ExitCode::SUCCESS } else { ExitCode::from(worst) })
}
