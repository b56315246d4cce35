//! Command-line front end: `run` executes solvers and writes the report
//! bundle, `verify` runs the identity/inequality audit suite, `constants`
//! prints the certified-constants ledger. Exit codes: 0 clean, 1 solver or
//! check failure, 2 unusable configuration.

mod config;
mod plot;
mod report;
mod runner;
mod verifier;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use config::{lower, ModeChoice, RunConfig, SolverChoice};
use report::{ledger_section, num, Report};
use runner::Provenance;
use verifier::{all_pass, Outcome};

#[derive(Parser)]
#[command(
    name = "tdks",
    version,
    about = "Self-consistent time-dependent Kohn-Sham runs with certified iteration bounds"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(clap::Args)]
struct Common {
    /// Path to the TOML run configuration.
    config: PathBuf,
    /// Overrides [run].output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides [run].seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides [solver].mode.
    #[arg(long, value_enum)]
    mode: Option<ModeChoice>,
    /// Overrides [solver].which.
    #[arg(long, value_enum)]
    solver: Option<SolverChoice>,
}

#[derive(Subcommand)]
enum Verb {
    /// Execute the requested solvers and write report, traces, and plots.
    Run(Common),
    /// Run the identity and inequality audit suite; exit zero iff all pass.
    Verify(Common),
    /// Print the certified-constants ledger and exit.
    Constants(Common),
}

/// Worker thread count from TDKS_THREADS (default 1).
fn thread_count() -> Result<usize, String> {
    match std::env::var("TDKS_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(format!(
                "TDKS_THREADS = {s:?} must be a positive integer"
            )),
        },
        Err(std::env::VarError::NotPresent) => Ok(1),
        Err(e) => Err(format!("TDKS_THREADS is not readable: {e}")),
    }
}

struct Loaded {
    cfg: RunConfig,
    low: config::Lowered,
    prov: Provenance,
    out_dir: PathBuf,
}

fn load(common: &Common) -> Result<Loaded, String> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.solver.mode = mode;
    }
    if let Some(solver) = common.solver {
        cfg.solver.which = solver;
    }
    if let Some(dir) = &common.output_dir {
        cfg.run.output_dir = dir.display().to_string();
    }

    let low = lower(&cfg)?;
    let bytes = std::fs::read(&common.config)
        .map_err(|e| format!("cannot read {}: {e}", common.config.display()))?;
    let sha = Sha256::digest(&bytes);
    let prov = Provenance {
        config_file: common
            .config
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| common.config.display().to_string()),
        config_sha256: format!("{sha:x}"),
        seed: cfg.run.seed,
        threads: thread_count()?,
    };
    let out_dir = PathBuf::from(&cfg.run.output_dir);
    Ok(Loaded {
        cfg,
        low,
        prov,
        out_dir,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.verb {
        Verb::Run(c) | Verb::Verify(c) | Verb::Constants(c) => c,
    };
    let loaded = match load(common) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };

    match cli.verb {
        Verb::Run(_) => {
            match runner::run(&loaded.cfg, &loaded.low, &loaded.prov, &loaded.out_dir) {
                Ok(outcome) => {
                    println!("report: {}", outcome.report_path.display());
                    if outcome.failures.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        for f in &outcome.failures {
                            eprintln!("run failure: {f}");
                        }
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("run aborted: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Verb::Verify(_) => {
            let rows = verifier::verify(
                &loaded.cfg,
                &loaded.low,
                loaded.prov.seed,
                loaded.prov.threads,
            );
            let mut passed = 0;
            let mut failed = 0;
            let mut skipped = 0;
            for row in &rows {
                match &row.outcome {
                    Outcome::Pass(d) => {
                        passed += 1;
                        println!("check {}: pass ({d})", row.name);
                    }
                    Outcome::Fail(d) => {
                        failed += 1;
                        println!("check {}: fail ({d})", row.name);
                    }
                    Outcome::Skipped(d) => {
                        skipped += 1;
                        println!("check {}: skipped ({d})", row.name);
                    }
                }
            }
            println!("verification: {passed} passed, {failed} failed, {skipped} skipped");
            if all_pass(&rows) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Verb::Constants(_) => {
            match constants_ledger(&loaded) {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("constants assembly failed: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}

/// Assemble the ledger without running any solver: base constants plus the
/// correction-solver certificates when the requested solvers need them and
/// the window admits them.
fn constants_ledger(loaded: &Loaded) -> Result<String, String> {
    use tdks_core::{build_constants, initial_iterate, prepare_neumann, prepare_newton, Propagator};

    let cfg = &loaded.cfg;
    let low = &loaded.low;
    let mut prop = Propagator::new(low.potential.clone());
    prop.lin_tol = cfg.solver.lin_tol;
    prop.lin_max_iters = cfg.solver.lin_max_sweeps;

    let mut bundle = build_constants(&low.potential, &low.psi0, low.mode, loaded.prov.seed)
        .map_err(|e| e.to_string())?;
    let mut gate_notes: Vec<(String, String)> = Vec::new();
    if cfg.solver.which.wants_newton() || cfg.solver.which.wants_approx_newton() {
        let base = initial_iterate(&prop, &low.psi0, &low.window).map_err(|e| e.to_string())?;
        if cfg.solver.which.wants_newton() {
            match prepare_newton(
                &prop, &low.psi0, &base, &low.window, &bundle, &low.opts, loaded.prov.seed,
            ) {
                Ok(b) => bundle = b,
                Err(e) => gate_notes.push(("newton_gate".into(), format!("failed: {e}"))),
            }
        }
        if cfg.solver.which.wants_approx_newton() {
            match prepare_neumann(
                &prop, &low.psi0, &base, &low.window, &bundle, &low.opts, loaded.prov.seed,
            ) {
                Ok(b) => bundle = b,
                Err(e) => {
                    gate_notes.push(("truncated_inverse_gate".into(), format!("failed: {e}")))
                }
            }
        }
    }

    let mut report = Report::new("tdks constants ledger");
    report.line("binary_version", env!("CARGO_PKG_VERSION"));
    report.line("config_file", &loaded.prov.config_file);
    report.line("config_sha256", &loaded.prov.config_sha256);
    report.line("seed", loaded.prov.seed.to_string());
    report.line(
        "window",
        format!(
            "t0={} dt={} knots={} span={}",
            num(low.window.t0),
            num(low.window.dt),
            low.window.knots,
            num(low.window.span())
        ),
    );
    ledger_section(&mut report, &bundle, low.window.span());
    for (key, value) in &gate_notes {
        report.line(key, value);
    }
    Ok(report.text().to_string())
}
