use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};

use pointer_engineering::invariants::{run_suite, SUITE_INSTANCES, SUITE_SEED};
use pointer_engineering::pointer::Sideband;
use pointer_engineering::scenario::{design, load_scenario, run_scenario, steady_scenario, RunOptions, Scenario};
use pointer_engineering::{Error, Result};

/// Engineered-reservoir simulations of a trapped ion's motion.
#[derive(Parser, Debug)]
#[command(name = "reservoir", version)]
struct Cli {
    /// Directory for per-scenario artifacts.
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,
    /// Replace every scenario's Fock truncation.
    #[arg(long, global = true)]
    truncation_override: Option<usize>,
    /// Only errors are printed.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Design, steady state, propagation; writes report and time series.
    Run {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Scenarios run concurrently.
        #[arg(long, short, default_value_t = 1)]
        jobs: usize,
    },
    /// Steady state and spectral gap of the reduced generator.
    Steady { file: PathBuf },
    /// Inverse design only: prints the laser table.
    Design { file: PathBuf },
    /// Randomized invariant suite.
    Verify {
        #[arg(long, default_value_t = SUITE_SEED)]
        seed: u64,
        #[arg(long, default_value_t = SUITE_INSTANCES)]
        instances: usize,
    },
}

fn load(cli: &Cli, file: &Path) -> Result<Scenario> {
    let s = load_scenario(file)?;
    match cli.truncation_override {
        Some(d) => s.with_truncation(d),
        None => Ok(s),
    }
}

fn fail(file: Option<&Path>, e: &Error) -> u8 {
    match file {
        Some(f) => eprintln!("error: {}: {e}", f.display()),
        None => eprintln!("error: {e}"),
    }
    e.exit_code() as u8
}

fn run(cli: &Cli, files: &[PathBuf], jobs: usize) -> u8 {
    let opts = RunOptions {
        out_dir: Some(cli.out_dir.clone()),
    };
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<String>>>> = Mutex::new(files.iter().map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, files.len().max(1)) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(file) = files.get(k) else { break };
                let res = load(cli, file).and_then(|s| {
                    let out = run_scenario(&s, &opts)?;
                    let r = &out.report;
                    let mut line = format!("{}: steady F = {:.6}", s.name, r.steady_state.as_ref().map_or(f64::NAN, |x| x.target_fidelity));
                    for m in &r.models {
                        line += &format!(
                            ", {} F(t_max) = {:.6} (target {:.6})",
                            m.model, m.final_fidelity, m.final_target_fidelity
                        );
                    }
                    if let Some(c) = &r.comparison {
                        line += &format!(", max trace distance {:.3e} at g/Γ = {:.3}", c.max_trace_distance, c.g_over_gamma);
                    }
                    Ok(line)
                });
                results.lock().expect("no panics while held")[k] = Some(res);
            });
        }
    });
    let mut code = 0;
    for (file, res) in files.iter().zip(results.into_inner().expect("threads joined")) {
        match res.expect("every file visited") {
            Ok(line) if !cli.quiet => println!("{line}"),
            Ok(_) => {}
            Err(e) => {
                let c = fail(Some(file.as_path()), &e);
                if code == 0 {
                    code = c;
                }
            }
        }
    }
    code
}

fn steady(cli: &Cli, file: &Path) -> Result<()> {
    let s = load(cli, file)?;
    let (_, st) = steady_scenario(&s)?;
    if !cli.quiet {
        println!("scenario            {}", s.name);
        println!("truncation          {}", s.truncation());
        println!("target fidelity     {:.10}", st.target_fidelity);
        println!("multiplicity        {}", st.multiplicity);
        println!("spectral gap (MHz)  {:.6e}", st.spectral_gap_mhz);
    }
    Ok(())
}

fn sideband_name(s: Sideband) -> String {
    match s {
        Sideband::Carrier => "carrier".into(),
        Sideband::Red(k) => format!("red {k}"),
        Sideband::Blue(k) => format!("blue {k}"),
    }
}

fn print_design(cli: &Cli, file: &Path) -> Result<()> {
    let s = load(cli, file)?;
    let diss = design(&s)?.ok_or_else(|| Error::Validation("scenario has no engineered reservoir".into()))?;
    let rep = diss.verify()?;
    if cli.quiet {
        return Ok(());
    }
    let gamma = s.physical.gamma_mhz;
    println!("{:<12} {:<8} {:>6} {:>14} {:>14} {:>12}", "label", "sideband", "eta", "Re Ω (MHz)", "Im Ω (MHz)", "|Ω| (MHz)");
    for d in &diss.drives {
        let w = d.rabi * gamma;
        println!(
            "{:<12} {:<8} {:>6.3} {:>14.6e} {:>14.6e} {:>12.6e}",
            d.label,
            sideband_name(d.sideband),
            d.eta,
            w.re,
            w.im,
            w.norm()
        );
    }
    if diss.drives.is_empty() {
        println!("(no laser realization: operator-level reservoir)");
    }
    println!("Γ_eng = {:.6e} MHz", diss.gamma_eng * gamma);
    if let Some(g) = diss.g {
        println!("g/Γ = {g:.4}");
    }
    if let Some(c) = diss.condition {
        println!("condition number = {c:.3e}");
    }
    println!("dark-state residual = {:.3e} (relative {:.3e}), null space dim {}", rep.residual, rep.relative_residual, rep.null_dim);
    Ok(())
}

fn verify(cli: &Cli, seed: u64, instances: usize) -> Result<bool> {
    let report = run_suite(seed, instances);
    if !cli.quiet {
        println!("seed {seed}, {instances} instances");
        for c in &report.checks {
            println!("{:<24} worst {:.3e}  tolerance {:.1e}", format!("{:?}", c.check), c.worst, c.tolerance);
        }
    }
    for v in &report.violations {
        eprintln!("violation: instance {} {:?} = {:.3e} ({})", v.instance, v.check, v.value, v.detail);
    }
    if !cli.quiet {
        println!("{}", if report.passed() { "PASS" } else { "FAIL" });
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run { files, jobs } => run(&cli, files, *jobs),
        Command::Steady { file } => steady(&cli, file).map_or_else(|e| fail(Some(file.as_path()), &e), |_| 0),
        Command::Design { file } => print_design(&cli, file).map_or_else(|e| fail(Some(file.as_path()), &e), |_| 0),
        Command::Verify { seed, instances } => match verify(&cli, *seed, *instances) {
            Ok(true) => 0,
            Ok(false) => 3,
            Err(e) => fail(None, &e),
        },
    };
    ExitCode::from(code)
}
