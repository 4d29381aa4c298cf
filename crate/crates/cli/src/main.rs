use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use polyq::files::{load_certificate, load_gains, save_json, CertificateFile, ControllerBlocks, GainsFile};
use polyq::model::{load_schedule, load_system};
use polyq::synthesis::{observer_gains, ControllerGain, PolyQlf};
use polyq::verify::{
    check_detect_certificate, check_stab_certificate, grid_check_stab, simulate_closed_loop, simulate_error_system,
    simulate_with_controller, CertificateCheck, SimReport, StabChoice, Structure, Trajectory,
};
use polyq::{
    random_schedule, verdict_detect, verdict_stab, Error, GridSpec, PolytopicSystem, Result, Schedule, ScheduleMode,
    SolverConfig, Verdict, VerdictConfig, VerdictStatus,
};

const EXIT_USAGE: u8 = 1;
const EXIT_FAILS_NECESSARY: u8 = 2;
const EXIT_UNKNOWN: u8 = 3;
const EXIT_VERIFICATION: u8 = 4;

#[derive(Parser)]
#[command(name = "polyq", version, about = "Poly-quadratic detectability and stabilizability of polytopic LPV systems")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide detectability; writes verdict.json, and on success certificate.json and gains.json.
    Detect(AnalyzeArgs),
    /// Decide stabilizability; writes verdict.json, and on success certificate.json and gains.json.
    Stab(StabArgs),
    /// Compute gains from an existing certificate.
    Synth(SynthArgs),
    /// Simulate the observer error or the closed loop and monitor the Lyapunov function.
    Simulate(SimulateArgs),
    /// Check a certificate independently (eigenvalues, and a simplex grid for stabilizability).
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SolverArgs {
    /// Seed for solver restarts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20_000, value_parser = clap::value_parser!(u64).range(1..))]
    max_iters: u64,
    /// Minimum eigenvalue margin counted as strictly feasible.
    #[arg(long, default_value_t = 1e-6, value_parser = positive_f64)]
    target_margin: f64,
    /// Frobenius-norm bound on the decision variables.
    #[arg(long, default_value_t = 1e3, value_parser = positive_f64)]
    radius: f64,
    /// Use one Lyapunov block shared by all vertices.
    #[arg(long)]
    common: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// System JSON file.
    system: PathBuf,
    /// Directory for output files.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    /// Slack conditions first, then the necessary vertex screen.
    Auto,
    Slack,
    Vertex,
}

#[derive(Args)]
struct StabArgs {
    #[command(flatten)]
    analyze: AnalyzeArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    method: MethodArg,
}

#[derive(Args)]
struct SynthArgs {
    system: PathBuf,
    #[arg(long)]
    certificate: PathBuf,
    #[arg(long, default_value = "gains.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    VertexSwitching,
    InteriorDirichlet,
}

#[derive(Args)]
struct SimulateArgs {
    system: PathBuf,
    /// Certificate; a detect certificate also supplies the Lyapunov blocks for observer gains.
    #[arg(long)]
    certificate: Option<PathBuf>,
    #[arg(long)]
    gains: Option<PathBuf>,
    /// Schedule JSON (`{"xi": [[...], ...]}`); overrides the random schedule.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::VertexSwitching)]
    schedule_mode: ModeArg,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial state as comma-separated values (default: all ones).
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long, default_value = "trajectory.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    system: PathBuf,
    #[arg(long)]
    certificate: PathBuf,
    /// Simplex grid resolution for the stabilizability condition.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    grid: u64,
    /// Minimum eigenvalue required of every checked matrix.
    #[arg(long, default_value_t = 1e-9, allow_hyphen_values = true)]
    eps: f64,
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got `{s}`")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            return ExitCode::from(if ok { 0 } else { EXIT_USAGE });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Detect(args) => run_detect(args),
        Command::Stab(args) => run_stab(args),
        Command::Synth(args) => run_synth(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Verify(args) => run_verify(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn read_system(path: &Path) -> Result<PolytopicSystem> {
    load_system(path).map_err(|e| match e {
        Error::Io(io) => Error::InvalidInput(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn verdict_config(args: &SolverArgs, method: StabChoice) -> VerdictConfig {
    VerdictConfig {
        solver: SolverConfig {
            target_margin: args.target_margin,
            radius: args.radius,
            max_iters: args.max_iters as usize,
            seed: args.seed,
            ..SolverConfig::default()
        },
        structure: if args.common { Structure::Common } else { Structure::PolyQuadratic },
        method,
    }
}

fn verdict_exit(verdict: &Verdict) -> u8 {
    match verdict.status {
        VerdictStatus::Holds => 0,
        VerdictStatus::FailsNecessary => EXIT_FAILS_NECESSARY,
        VerdictStatus::Unknown => EXIT_UNKNOWN,
    }
}

fn report_verdict(verdict: &Verdict, out_dir: &Path) {
    let property = format!("{:?}", verdict.property).to_lowercase();
    eprintln!("{property}: {}", verdict.status);
    eprintln!("  {}", verdict.note);
    for r in &verdict.reports {
        eprintln!(
            "  {}: {:?}, margin {:.6e} (worst {}), {} iterations",
            r.test, r.status, r.achieved_margin, r.worst_label, r.iterations
        );
    }
    eprintln!("  outputs in {}", out_dir.display());
}

fn run_detect(args: &AnalyzeArgs) -> Result<u8> {
    let sys = read_system(&args.system)?;
    let verdict = verdict_detect(&sys, &verdict_config(&args.solver, StabChoice::Auto))?;
    fs::create_dir_all(&args.out_dir)?;
    save_json(&verdict, args.out_dir.join("verdict.json"))?;
    if verdict.status == VerdictStatus::Holds {
        let cert = verdict.detect_certificate.clone().expect("holding verdict carries a certificate");
        let gains = observer_gains(&cert, &sys)?;
        save_json(&CertificateFile::Detect(cert), args.out_dir.join("certificate.json"))?;
        save_json(&GainsFile::Observer(gains), args.out_dir.join("gains.json"))?;
    }
    report_verdict(&verdict, &args.out_dir);
    Ok(verdict_exit(&verdict))
}

fn run_stab(args: &StabArgs) -> Result<u8> {
    let a = &args.analyze;
    let sys = read_system(&a.system)?;
    let method = match args.method {
        MethodArg::Auto => StabChoice::Auto,
        MethodArg::Slack => StabChoice::Slack,
        MethodArg::Vertex => StabChoice::Vertex,
    };
    let verdict = verdict_stab(&sys, &verdict_config(&a.solver, method))?;
    fs::create_dir_all(&a.out_dir)?;
    save_json(&verdict, a.out_dir.join("verdict.json"))?;
    if verdict.status == VerdictStatus::Holds {
        let cert = verdict.stab_certificate.clone().expect("holding verdict carries a certificate");
        let gain = ControllerGain::new(&cert, &sys)?;
        save_json(&CertificateFile::Stab(cert), a.out_dir.join("certificate.json"))?;
        save_json(&GainsFile::Controller(ControllerBlocks { s_bar: gain.s_bar, p_bar: gain.p_bar }), a.out_dir.join("gains.json"))?;
    }
    report_verdict(&verdict, &a.out_dir);
    Ok(verdict_exit(&verdict))
}

fn print_check(check: &CertificateCheck) {
    eprintln!(
        "eigenvalue check {}: minimum {:.12e} at {} (eps {:e})",
        if check.passed { "passed" } else { "FAILED" },
        check.min_margin,
        check.worst_label,
        check.eps
    );
    for v in check.values.iter().filter(|v| !(v.min_eigenvalue >= check.eps)) {
        eprintln!("  failing: {} ({:.6e})", v.label, v.min_eigenvalue);
    }
}

fn run_synth(args: &SynthArgs) -> Result<u8> {
    let sys = read_system(&args.system)?;
    let gains = match load_certificate(&args.certificate)? {
        CertificateFile::Detect(cert) => {
            let check = check_detect_certificate(&sys, &cert, 0.0)?;
            if !check.passed {
                print_check(&check);
                return Ok(EXIT_VERIFICATION);
            }
            let qlf = PolyQlf::new(cert.p_bar.clone())?;
            eprintln!("observer gains; V bounds a1 = {:.6e}, a2 = {:.6e}", qlf.a1, qlf.a2);
            GainsFile::Observer(observer_gains(&cert, &sys)?)
        }
        CertificateFile::Stab(cert) => {
            let check = check_stab_certificate(&sys, &cert, 0.0)?;
            if !check.passed {
                print_check(&check);
                return Ok(EXIT_VERIFICATION);
            }
            let gain = ControllerGain::new(&cert, &sys)?;
            let qlf = PolyQlf::new(gain.p_bar.clone())?;
            eprintln!("controller blocks; V bounds a1 = {:.6e}, a2 = {:.6e}", qlf.a1, qlf.a2);
            GainsFile::Controller(ControllerBlocks { s_bar: gain.s_bar, p_bar: gain.p_bar })
        }
    };
    save_json(&gains, &args.out)?;
    eprintln!("wrote {}", args.out.display());
    Ok(0)
}

fn parse_state(text: Option<&str>, n: usize) -> Result<Vec<f64>> {
    let Some(text) = text else { return Ok(vec![1.0; n]) };
    let x: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::InvalidInput(format!("--x0: cannot parse `{s}`"))))
        .collect::<Result<_>>()?;
    if x.len() != n || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("--x0 needs {n} finite values")));
    }
    Ok(x)
}

fn run_simulate(args: &SimulateArgs) -> Result<u8> {
    let sys = read_system(&args.system)?;
    let schedule: Schedule = match &args.schedule {
        Some(path) => load_schedule(path)?,
        None => {
            let mode = match args.schedule_mode {
                ModeArg::VertexSwitching => ScheduleMode::VertexSwitching,
                ModeArg::InteriorDirichlet => ScheduleMode::InteriorDirichlet,
            };
            random_schedule(sys.num_vertices(), args.steps as usize, mode, args.seed)?
        }
    };
    let x0 = parse_state(args.x0.as_deref(), sys.n_x())?;
    let certificate = args.certificate.as_deref().map(load_certificate).transpose()?;
    let gains = args.gains.as_deref().map(load_gains).transpose()?;

    let (what, (report, trajectory)): (&str, (SimReport, Trajectory)) = match (certificate, gains) {
        (Some(CertificateFile::Detect(cert)), gains) => {
            let gains = match gains {
                None => observer_gains(&cert, &sys)?,
                Some(GainsFile::Observer(g)) => g,
                Some(GainsFile::Controller(_)) => {
                    return Err(Error::InvalidInput("controller gains do not fit a detect certificate".into()))
                }
            };
            ("observer error", simulate_error_system(&sys, &gains, &cert.p_bar, &schedule, &x0)?)
        }
        (Some(CertificateFile::Stab(cert)), None) => ("closed loop", simulate_closed_loop(&sys, &cert, &schedule, &x0)?),
        (Some(CertificateFile::Stab(_)), Some(_)) => {
            return Err(Error::InvalidInput("pass either a stab certificate or controller gains, not both".into()))
        }
        (None, Some(GainsFile::Controller(blocks))) => {
            let gain = ControllerGain::from_parts(blocks.s_bar, blocks.p_bar, &sys)?;
            ("closed loop", simulate_with_controller(&gain, &schedule, &x0)?)
        }
        (None, Some(GainsFile::Observer(_))) => {
            return Err(Error::InvalidInput("observer gains need --certificate for the Lyapunov blocks".into()))
        }
        (None, None) => return Err(Error::InvalidInput("simulate needs --certificate or --gains".into())),
    };
    fs::write(&args.out, trajectory.to_csv())?;
    eprintln!(
        "{what}: {} steps, worst V ratio {:.6e}, terminal norm {:.6e}, {} descent violations",
        trajectory.states.len() - 1,
        report.worst_ratio,
        report.max_terminal_norm,
        report.violations.len()
    );
    for v in report.violations.iter().take(10) {
        eprintln!("  step {}: V {:.6e} -> {:.6e}", v.step, v.v_before, v.v_after);
    }
    Ok(if report.is_clean() { 0 } else { EXIT_VERIFICATION })
}

fn run_verify(args: &VerifyArgs) -> Result<u8> {
    let sys = read_system(&args.system)?;
    match load_certificate(&args.certificate)? {
        CertificateFile::Detect(cert) => {
            let check = check_detect_certificate(&sys, &cert, args.eps)?;
            print_check(&check);
            Ok(if check.passed { 0 } else { EXIT_VERIFICATION })
        }
        CertificateFile::Stab(cert) => {
            let check = check_stab_certificate(&sys, &cert, args.eps)?;
            print_check(&check);
            if !check.passed {
                return Ok(EXIT_VERIFICATION);
            }
            let grid = grid_check_stab(&sys, &cert, GridSpec::new(args.grid as usize)?, args.eps)?;
            eprintln!(
                "grid check {} (m = {}, {} pairs): minimum {:.12e} at xi = {:?}, xi+ = {:?}",
                if grid.passed { "passed" } else { "FAILED" },
                grid.resolution,
                grid.pairs,
                grid.worst_value,
                grid.worst_xi,
                grid.worst_xi_next
            );
            eprintln!("  grid passing is evidence, not proof");
            Ok(if grid.passed { 0 } else { EXIT_VERIFICATION })
        }
    }
}
