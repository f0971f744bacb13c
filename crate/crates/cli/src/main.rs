//! `cyclic-empc <run|check|equivalence|oracle> --config <path>`.
//!
//! Exit status: 0 when every requested check passes, 1 when a check fails, 2 on
//! configuration or usage errors and 3 on solver errors.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, ValueEnum};
use cyclic_empc::config::ExperimentConfig;
use cyclic_empc::sim::{multi_step_equivalence, run_closed_loop, ClosedLoopTrace, RunInfo};
use cyclic_empc::solver_lq::NcsBackend;
use cyclic_empc::verify::{check_closed_loop, compare_with_grid, ncs_certificate_suite, ReportSet};
use cyclic_empc::{Error, NcsSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// Simulate the closed loop and write the trace and plot data.
    Run,
    /// Run every certificate and write the report.
    Check,
    /// Compare the cyclic-horizon loop with re-solving the full horizon once per cycle.
    Equivalence,
    /// Compare the solver against brute force over an input grid on the scalar instance.
    Oracle,
}

#[derive(Debug, Parser)]
#[command(
    name = "cyclic-empc",
    version,
    about = "Economic MPC with a cyclic prediction horizon"
)]
struct Cli {
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the tolerances the checks are judged against.
    #[arg(long)]
    tol: Option<f64>,
}

enum Failure {
    Config(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Io(_) | Error::InvalidArgument(_) | Error::Dimension(_) => {
                Failure::Config(e.to_string())
            }
            other => Failure::Solver(other.to_string()),
        }
    }
}

struct Experiment {
    cfg: ExperimentConfig,
    sys: Arc<NcsSystem>,
    backend: NcsBackend,
    out: PathBuf,
}

impl Experiment {
    fn load(cli: &Cli) -> Result<Self, Failure> {
        let mut cfg = ExperimentConfig::load(&cli.config)?;
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        if let Some(tol) = cli.tol {
            if tol.is_nan() || tol <= 0.0 {
                return Err(Failure::Config(format!(
                    "--tol must be positive, got {tol}"
                )));
            }
            cfg.tolerances.certificate = tol;
            cfg.tolerances.closed_loop = tol;
            cfg.tolerances.equivalence = tol;
            cfg.oracle.tolerance = tol;
        }
        let sys = Arc::new(cfg.system()?);
        let backend = NcsBackend::new(sys.clone()).with_options(cfg.schedule_options());
        let out = cli
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
        fs::create_dir_all(&out).map_err(Error::from)?;
        Ok(Self {
            cfg,
            sys,
            backend,
            out,
        })
    }

    fn run_info(&self) -> Result<RunInfo, Failure> {
        Ok(RunInfo {
            seed: self.cfg.seed,
            tolerance: self.cfg.tolerances.qp,
            config_hash: Some(self.cfg.hash()?),
            config: Some(self.cfg.to_table()?),
        })
    }

    fn closed_loop(&self, steps: u64) -> Result<ClosedLoopTrace, Failure> {
        let (ti, cert, h) = (
            self.sys.terminal_ingredients(),
            self.sys.certificate(),
            self.cfg.horizon()?,
        );
        let x0 = self.cfg.initial_state();
        Ok(run_closed_loop(
            self.sys.as_ref(),
            &ti,
            &cert,
            &h,
            &x0,
            steps,
            &self.backend,
            &self.run_info()?,
        )?)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, Failure> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(Error::from)?;
        Ok(path)
    }
}

/// Plant states and inputs per step: `k`, `x_p*`, `u_c*`, `gamma`, then the applied input `u_a*`.
fn plot_csv(trace: &ClosedLoopTrace, sys: &NcsSystem) -> Result<String, Failure> {
    let (n, m) = (sys.plant().plant_dim(), sys.plant().input_dim());
    let mut header = vec!["k".to_string()];
    header.extend((1..=n).map(|i| format!("x_p{i}")));
    header.extend((1..=m).map(|i| format!("u_c{i}")));
    header.push("gamma".into());
    header.extend((1..=m).map(|i| format!("u_a{i}")));
    let mut out = header.join(",") + "\n";
    for r in &trace.rows {
        let s = sys.split(&r.state)?;
        let (uc, transmit) = sys.split_input(&r.input)?;
        let applied = if transmit { &uc } else { &s.us };
        let mut fields = vec![r.k.to_string()];
        fields.extend(s.xp.iter().map(|v| v.to_string()));
        fields.extend(uc.iter().map(|v| v.to_string()));
        fields.push(u8::from(transmit).to_string());
        fields.extend(applied.iter().map(|v| v.to_string()));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn summarize(reports: &ReportSet) -> String {
    let mut s = String::new();
    for r in &reports.certificate {
        let status = match (r.pass, r.informational) {
            (true, _) => "pass",
            (false, true) => "info",
            (false, false) => "FAIL",
        };
        let _ = write!(
            s,
            "{status:4} {:40} worst {:.3e} (tol {:.1e})",
            r.name, r.worst_violation, r.tolerance
        );
        if let (false, Some(w)) = (r.pass, &r.witness) {
            let _ = write!(s, " at {w}");
        }
        s.push('\n');
    }
    s
}

fn report_failures(reports: &ReportSet) -> bool {
    let failing: Vec<&str> = reports.failing().map(|r| r.name.as_str()).collect();
    if !failing.is_empty() {
        eprintln!("failing certificates: {}", failing.join(", "));
    }
    failing.is_empty()
}

fn run(exp: &Experiment) -> Result<bool, Failure> {
    let trace = exp.closed_loop(exp.cfg.horizon.steps)?;
    trace.validate(
        exp.sys.as_ref(),
        &exp.cfg.horizon()?,
        exp.cfg.tolerances.closed_loop,
    )?;
    let trace_path = exp.write(&exp.cfg.output.trace, &trace.to_csv()?)?;
    let plot_path = exp.write(&exp.cfg.output.plot, &plot_csv(&trace, &exp.sys)?)?;
    let reports = ReportSet {
        certificate: check_closed_loop(
            &trace,
            exp.sys.as_ref(),
            &exp.sys.certificate(),
            &exp.cfg.closed_loop_options(),
        ),
    };
    print!("{}", summarize(&reports));
    if let Some(last) = trace.rows.last() {
        println!(
            "{} steps, final set distance {:.3e}",
            trace.rows.len(),
            last.set_distance
        );
    }
    println!("wrote {} and {}", trace_path.display(), plot_path.display());
    Ok(report_failures(&reports))
}

fn check(exp: &Experiment) -> Result<bool, Failure> {
    let mut reports = ncs_certificate_suite(&exp.sys, &exp.backend, &exp.cfg.suite_options())?;
    let trace = exp.closed_loop(exp.cfg.horizon.steps)?;
    reports.certificate.extend(check_closed_loop(
        &trace,
        exp.sys.as_ref(),
        &exp.sys.certificate(),
        &exp.cfg.closed_loop_options(),
    ));
    let path = exp.write(&exp.cfg.output.report, &reports.to_toml()?)?;
    print!("{}", summarize(&reports));
    println!("wrote {}", path.display());
    Ok(report_failures(&reports))
}

fn equivalence(exp: &Experiment) -> Result<bool, Failure> {
    let (ti, cert, h) = (
        exp.sys.terminal_ingredients(),
        exp.sys.certificate(),
        exp.cfg.horizon()?,
    );
    let report = multi_step_equivalence(
        exp.sys.as_ref(),
        &ti,
        &cert,
        &h,
        &exp.cfg.initial_state(),
        exp.cfg.horizon.cycles,
        &exp.backend,
        &exp.run_info()?,
    )?;
    let tol = exp.cfg.tolerances.equivalence;
    let pass = report.identical(tol);
    let mut table = toml::Table::new();
    table.insert("steps".into(), (report.steps as i64).into());
    table.insert("cycles".into(), (exp.cfg.horizon.cycles as i64).into());
    table.insert("max_deviation".into(), report.max_deviation.into());
    table.insert("worst_step".into(), (report.worst_step as i64).into());
    table.insert("tolerance".into(), tol.into());
    table.insert("pass".into(), pass.into());
    let path = exp.write("equivalence.toml", &table.to_string())?;
    println!(
        "{} steps over {} cycles: max deviation {:.3e} at k = {} (tol {tol:.1e})",
        report.steps, exp.cfg.horizon.cycles, report.max_deviation, report.worst_step
    );
    println!("wrote {}", path.display());
    if !pass {
        eprintln!("failing certificates: multi_step_equivalence");
    }
    Ok(pass)
}

fn oracle(exp: &Experiment) -> Result<bool, Failure> {
    let sys = exp.cfg.oracle_system()?;
    let report = compare_with_grid(&sys, &exp.cfg.oracle_options())?;
    let pass = report.pass(exp.cfg.oracle.tolerance);
    let text = toml::to_string(&report).map_err(|e| Failure::Config(e.to_string()))?;
    let path = exp.write("oracle.toml", &text)?;
    print!("{text}");
    println!("wrote {}", path.display());
    if !pass {
        eprintln!("failing certificates: grid_oracle");
    }
    Ok(pass)
}

fn execute(cli: &Cli) -> Result<bool, Failure> {
    let exp = Experiment::load(cli)?;
    match cli.command {
        Command::Run => run(&exp),
        Command::Check => check(&exp),
        Command::Equivalence => equivalence(&exp),
        Command::Oracle => oracle(&exp),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
