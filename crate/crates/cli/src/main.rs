use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use clup_core::baselines::polytope_relax;
use clup_core::contraction::{precompute, DEFAULT_GRAM_THRESHOLD};
use clup_core::exact_solver::{clup_run_with, ClupResult, ExactStepSettings, NormalEquations};
use clup_core::harness::{
    initial_point, read_config, resolve_threads, run_ber_sweep, summaries_csv, variant_of, write_report, Algorithm,
    InitMode, Report,
};
use clup_core::model::{
    bit_error_fraction, generate_instance, round_to_corner, snr_db_to_sigma, SystemDims, XSolMode,
};
use clup_core::rephasing::{
    bundled_schedule_from, load_bundled_dataset, load_dataset, run_rephased_contraction, AbortPolicy, Dataset,
    StationaryRecord, Variant,
};
use clup_core::theory::{
    curve_csv, find_glitch_snr, find_stationary_points, ml_curve, CurveMode, PointKind, C1_HI, C1_LO, DEFAULT_GRID_N,
};
use clup_core::ClupError;

#[derive(Parser, Debug)]
#[command(name = "clup", version, about = "Recovery of binary signals from noisy linear measurements")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Base seed for `run` (instance seed) and `sweep` (overrides the config's base_seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to CLUP_THREADS or the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file. For `sweep` this is the JSON report path.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Stationary-point table file used instead of the bundled one.
    #[arg(long, global = true)]
    tables_path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Global,
    High,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Minimizer of the ML objective over an SNR grid.
    TheoryCurve {
        #[arg(long, default_value_t = 0.6)]
        alpha: f64,
        #[arg(long, default_value_t = 10.0)]
        snr_lo: f64,
        #[arg(long, default_value_t = 20.0)]
        snr_hi: f64,
        #[arg(long, default_value_t = 0.5)]
        snr_step: f64,
        #[arg(long, value_enum, default_value_t = Mode::Global)]
        mode: Mode,
    },
    /// SNR at which the global minimizer jumps between branches.
    Glitch {
        #[arg(long, default_value_t = 0.6)]
        alpha: f64,
        #[arg(long, default_value_t = 13.0)]
        lo: f64,
        #[arg(long, default_value_t = 16.0)]
        hi: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Stationary points of the ML objective at one SNR.
    Stationary {
        #[arg(long, default_value_t = 0.6)]
        alpha: f64,
        #[arg(long)]
        snr: f64,
    },
    /// One instance, one algorithm; prints the (c1, c2) trajectory.
    Run {
        #[arg(long, value_parser = parse_algorithm)]
        algorithm: Algorithm,
        #[arg(long, default_value_t = 0.6)]
        alpha: f64,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long)]
        snr: f64,
        /// Iteration cap of the exact engine.
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
    },
    /// Monte Carlo sweep described by a JSON config.
    Sweep {
        config: PathBuf,
        /// Record per-trial wall-clock times (reports are then not byte-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Dump or query the bundled stationary-point tables.
    Tables {
        #[arg(long)]
        table: Option<String>,
    },
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    Algorithm::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Algorithm::ALL.iter().map(|a| a.name()).collect();
        format!("unknown algorithm '{s}'; expected one of {}", names.join(", "))
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}

fn dataset(global: &Global) -> Result<Dataset, ClupError> {
    match &global.tables_path {
        Some(p) => load_dataset(p),
        None => load_bundled_dataset(),
    }
}

fn emit(global: &Global, text: &str) -> Result<(), ClupError> {
    match &global.output {
        Some(path) => std::fs::write(path, text).map_err(|source| ClupError::Io {
            path: path.display().to_string(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(value: serde_json::Value) -> String {
    serde_json::to_string_pretty(&value).expect("json value serializes") + "\n"
}

fn execute(cli: Cli) -> Result<(), ClupError> {
    let g = &cli.global;
    match cli.command {
        Command::TheoryCurve {
            alpha,
            snr_lo,
            snr_hi,
            snr_step,
            mode,
        } => {
            if !(snr_step > 0.0) || !(snr_hi >= snr_lo) {
                return Err(ClupError::InvalidConfig(format!(
                    "need snr_step > 0 and snr_hi >= snr_lo, got step {snr_step} on [{snr_lo}, {snr_hi}]"
                )));
            }
            let steps = ((snr_hi - snr_lo) / snr_step + 1e-9).floor() as usize;
            let grid: Vec<f64> = (0..=steps).map(|k| snr_lo + k as f64 * snr_step).collect();
            let mode = match mode {
                Mode::Global => CurveMode::Global,
                Mode::High => CurveMode::LocalHighBranch,
            };
            let points = ml_curve(alpha, &grid, mode)?;
            match g.format {
                Format::Csv => emit(g, &curve_csv(&points)),
                Format::Json => emit(g, &pretty(json!(points))),
            }
        }
        Command::Glitch { alpha, lo, hi, tol } => {
            let snr = find_glitch_snr(alpha, lo, hi, tol)?;
            match g.format {
                Format::Csv => emit(g, &format!("{snr}\n")),
                Format::Json => emit(g, &pretty(json!({ "alpha": alpha, "glitch_snr_db": snr }))),
            }
        }
        Command::Stationary { alpha, snr } => {
            let points = find_stationary_points(alpha, snr_db_to_sigma(snr), C1_LO, C1_HI, DEFAULT_GRID_N)?;
            match g.format {
                Format::Csv => {
                    let mut out = String::from("c1,xi,d1,d2,kind\n");
                    for p in &points {
                        let kind = match p.kind {
                            PointKind::LocalMin => "local_min",
                            PointKind::LocalMax => "local_max",
                            PointKind::Boundary => "boundary",
                        };
                        let _ = writeln!(out, "{},{},{:e},{:e},{kind}", p.c1, p.xi, p.d1, p.d2);
                    }
                    emit(g, &out)
                }
                Format::Json => emit(g, &pretty(json!(points))),
            }
        }
        Command::Run {
            algorithm,
            alpha,
            n,
            snr,
            max_iter,
        } => run_single(g, algorithm, alpha, n, snr, max_iter),
        Command::Sweep { config, timing } => sweep(g, &config, timing),
        Command::Tables { table } => tables(g, table.as_deref()),
    }
}

struct PhaseOut {
    label: String,
    result: ClupResult,
    p_err: f64,
}

fn run_single(g: &Global, algorithm: Algorithm, alpha: f64, n: usize, snr: f64, max_iter: usize) -> Result<(), ClupError> {
    let ds = dataset(g)?;
    let seed = g.seed.unwrap_or(0);
    let dims = SystemDims::new(n, alpha)?;
    // Resolve the schedule before generating the instance so bad keys fail fast.
    let schedule = match algorithm {
        Algorithm::Polytope => None,
        Algorithm::ClupExact => Some(bundled_schedule_from(&ds, alpha, snr, Variant::StandardR0)?),
        other => Some(bundled_schedule_from(&ds, alpha, snr, variant_of(other).expect("contraction"))?),
    };
    let inst = generate_instance(dims, snr_db_to_sigma(snr), seed, XSolMode::RandomSigns)?;
    let x0 = initial_point(InitMode::RandomCorner, &inst, seed);

    if algorithm == Algorithm::Polytope {
        let res = polytope_relax(&inst, 1e-6, 20_000)?;
        let p_err = bit_error_fraction(&round_to_corner(&res.x_relaxed, n), &inst.x_sol)?;
        let text = match g.format {
            Format::Csv => format!(
                "residual,r_plt_norm,iterations,converged,p_err\n{},{},{},{},{p_err:e}\n",
                res.residual, res.r_plt_norm, res.iterations, res.converged
            ),
            Format::Json => pretty(json!({
                "seed": seed, "algorithm": algorithm, "residual": res.residual,
                "r_plt_norm": res.r_plt_norm, "iterations": res.iterations,
                "converged": res.converged, "p_err": p_err,
            })),
        };
        return emit(g, &text);
    }

    let schedule = schedule.expect("schedule resolved above");
    let phases: Vec<PhaseOut> = if algorithm == Algorithm::ClupExact {
        let cfg = &schedule.phases[0];
        let normal = NormalEquations::new(&inst);
        let result = clup_run_with(&normal, &inst, cfg.radius(n), &x0, max_iter, 1e-8, &ExactStepSettings::default())?;
        let p_err = bit_error_fraction(&round_to_corner(&result.x_final, n), &inst.x_sol)?;
        vec![PhaseOut {
            label: cfg.label.clone(),
            result,
            p_err,
        }]
    } else {
        let ops = precompute(&inst, DEFAULT_GRAM_THRESHOLD);
        let res = run_rephased_contraction(&ops, &inst, &schedule, &x0, AbortPolicy::Continue)?;
        res.per_phase
            .into_iter()
            .zip(res.per_phase_p_err)
            .zip(&schedule.phases)
            .map(|((result, p_err), cfg)| PhaseOut {
                label: cfg.label.clone(),
                result,
                p_err,
            })
            .collect()
    };

    let text = match g.format {
        Format::Csv => {
            let mut out = String::from("phase,iteration,c1,c2\n");
            for (k, p) in phases.iter().enumerate() {
                for (i, s) in p.result.trajectory.iter().enumerate() {
                    let _ = writeln!(out, "{k},{},{},{}", i + 1, s.c1, s.c2);
                }
            }
            for (k, p) in phases.iter().enumerate() {
                eprintln!(
                    "phase {k} ({}): iterations {}, converged {}, non_convergent {}, p_err {:e}",
                    p.label, p.result.iterations, p.result.converged, p.result.non_convergent, p.p_err
                );
            }
            out
        }
        Format::Json => pretty(json!({
            "seed": seed,
            "algorithm": algorithm,
            "phases": phases.iter().map(|p| json!({
                "label": p.label,
                "iterations": p.result.iterations,
                "converged": p.result.converged,
                "non_convergent": p.result.non_convergent,
                "p_err": p.p_err,
                "trajectory": p.result.trajectory,
            })).collect::<Vec<_>>(),
        })),
    };
    emit(g, &text)
}

fn sweep(g: &Global, config_path: &Path, timing: bool) -> Result<(), ClupError> {
    let mut config = read_config(config_path)?;
    if let Some(seed) = g.seed {
        config.base_seed = seed;
    }
    if let Some(out) = &g.output {
        config.output_path = out.display().to_string();
    }
    config.record_timing |= timing;
    let ds = dataset(g)?;
    let threads = resolve_threads(g.threads)?;
    let output = run_ber_sweep(&config, &ds, threads)?;
    let report = Report::new(&config, &ds, output);
    let csv_path = write_report(&report, Path::new(&config.output_path))?;
    match g.format {
        Format::Csv => print!("{}", summaries_csv(&report.summaries)),
        Format::Json => print!("{}", pretty(json!(report.summaries))),
    }
    eprintln!("wrote {} and {}", config.output_path, csv_path.display());
    Ok(())
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn tables(g: &Global, table: Option<&str>) -> Result<(), ClupError> {
    let ds = dataset(g)?;
    let rows: Vec<&StationaryRecord> = match table {
        Some(id) => {
            let rows = ds.table(id);
            if rows.is_empty() {
                return Err(ClupError::InvalidConfig(format!(
                    "no table '{id}'; available: {}",
                    ds.table_ids().join(", ")
                )));
            }
            rows
        }
        None => ds.rows.iter().collect(),
    };
    let text = match g.format {
        Format::Csv => {
            let mut out = String::from("table_id,label,kind,role,alpha,snr_db,n,phase,c2,c1,nu,gamma,gamma1,p_err,r_norm\n");
            for r in rows {
                let kind = serde_json::to_value(r.kind).expect("serializes");
                let role = r.role.map(|x| serde_json::to_value(x).expect("serializes"));
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.table_id,
                    r.label,
                    kind.as_str().unwrap_or_default(),
                    role.as_ref().and_then(|v| v.as_str()).unwrap_or_default(),
                    r.alpha,
                    r.snr_db,
                    opt(&r.n),
                    opt(&r.phase),
                    opt(&r.c2),
                    opt(&r.c1),
                    opt(&r.nu),
                    opt(&r.gamma),
                    opt(&r.gamma1),
                    opt(&r.p_err),
                    opt(&r.r_norm),
                );
            }
            out
        }
        Format::Json => pretty(json!(rows)),
    };
    emit(g, &text)
}
