use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use ppde::harness::{Outcome, CONFIG_KEYS};
use ppde::{run_convergence, run_solve, run_verification_suite, ConvergenceReport, Error, RunConfig};

#[derive(Parser)]
#[command(
    name = "ppde",
    version,
    about = "Monotone schemes for path-dependent PDEs: solves, convergence studies, verification",
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem with one scheme at one time step and print the CSV row.
    Solve(Opts),
    /// Convergence study over a list of time steps; writes CSV and plot data.
    Converge(Opts),
    /// Consistency, monotonicity, stability, chain, moment and exit-time checks.
    Verify(Opts),
    /// Convergence study of the cosine game with a known solution.
    Example1(Opts),
    /// Convergence study of the robust-utility example.
    Example2(Opts),
}

#[derive(Args)]
struct Opts {
    /// TOML configuration file (ignored by the example presets).
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    /// Problem parameter override, `key=value`; repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// Comma-separated scheme names.
    #[arg(long, value_delimiter = ',')]
    scheme: Option<Vec<String>>,
    /// Comma-separated time steps, strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    dt: Option<Vec<f64>>,
    /// Time steps for the regression scheme only.
    #[arg(long, value_delimiter = ',')]
    ftw_dt: Option<Vec<f64>>,
    #[arg(long)]
    dx: Option<f64>,
    #[arg(long)]
    dy: Option<f64>,
    #[arg(long)]
    control_points: Option<usize>,
    #[arg(long)]
    n_paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    x_cells: Option<usize>,
    #[arg(long)]
    a_cells: Option<usize>,
    /// Random slice pairs per scheme in the monotonicity check.
    #[arg(long)]
    trials: Option<usize>,
    /// Monte Carlo paths in the exit-time check.
    #[arg(long)]
    exit_paths: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output file stem.
    #[arg(long)]
    stem: Option<String>,
    /// Record wall-clock milliseconds (otherwise 0, keeping reruns byte-identical).
    #[arg(long)]
    timing: bool,
}

impl Opts {
    fn resolve(&self, preset: Option<RunConfig>) -> Result<RunConfig, Error> {
        let mut c = match (preset, &self.config) {
            (Some(p), _) => p,
            (None, Some(path)) => RunConfig::load(path)?,
            (None, None) => RunConfig::default(),
        };
        if let Some(p) = &self.problem {
            c.problem.name = p.clone();
        }
        for kv in &self.params {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got '{kv}'")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("parameter {k} is not a number: '{v}'")))?;
            c.problem.params.insert(k.trim().to_string(), v);
        }
        if let Some(s) = &self.scheme {
            c.scheme.names = s.clone();
        }
        if let Some(d) = &self.dt {
            c.scheme.dts = d.clone();
        }
        if let Some(d) = &self.ftw_dt {
            c.scheme.ftw_dts = Some(d.clone());
        }
        c.grid.dx = self.dx.or(c.grid.dx);
        c.grid.dy = self.dy.or(c.grid.dy);
        c.grid.control_points = self.control_points.or(c.grid.control_points);
        let mc = &mut c.monte_carlo;
        mc.n_paths = self.n_paths.unwrap_or(mc.n_paths);
        mc.seed = self.seed.unwrap_or(mc.seed);
        mc.x_cells = self.x_cells.unwrap_or(mc.x_cells);
        mc.a_cells = self.a_cells.unwrap_or(mc.a_cells);
        c.verify.trials = self.trials.unwrap_or(c.verify.trials);
        c.verify.exit_paths = self.exit_paths.unwrap_or(c.verify.exit_paths);
        if let Some(o) = &self.out {
            c.output.dir = o.clone();
        }
        if let Some(s) = &self.stem {
            c.output.stem = s.clone();
        }
        c.output.timing |= self.timing;
        Ok(c)
    }
}

fn summarise(report: &ConvergenceReport) {
    eprintln!("problem {}  reference {}", report.problem, report.reference);
    if let Some(p) = report.published_reference {
        eprintln!("published value {p}");
    }
    for r in &report.rows {
        match &r.error {
            None => eprintln!("  {:<15} dt={:<8} value={:.6}  |error|={:.3e}", r.scheme.name(), r.dt, r.value, r.abs_error),
            Some(e) => eprintln!("  {:<15} dt={:<8} FAILED: {e}", r.scheme.name(), r.dt),
        }
    }
}

fn study(config: RunConfig) -> Result<i32, Error> {
    let report = run_convergence(&config)?;
    let (csv, plot) = report.write(&config.output.dir, &config.output.stem)?;
    print!("{}", report.to_csv());
    summarise(&report);
    eprintln!("wrote {} and {}", csv.display(), plot.display());
    Ok(report.exit_code())
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Solve(o) => {
            let report = run_solve(&o.resolve(None)?)?;
            print!("{}", report.to_csv());
            Ok(report.exit_code())
        }
        Command::Converge(o) => study(o.resolve(None)?),
        Command::Example1(o) => study(o.resolve(Some(RunConfig::example1()))?),
        Command::Example2(o) => study(o.resolve(Some(RunConfig::example2()))?),
        Command::Verify(o) => {
            let mut config = o.resolve(None)?;
            if o.stem.is_none() {
                config.output.stem = "verification".into();
            }
            let report = run_verification_suite(&config);
            std::fs::create_dir_all(&config.output.dir)?;
            let path = config.output.dir.join(format!("{}.csv", config.output.stem));
            std::fs::write(&path, report.to_csv())?;
            print!("{}", report.to_csv());
            for r in &report.rows {
                let status = match &r.outcome {
                    Outcome::Pass => "pass".to_string(),
                    Outcome::Fail => "FAIL".to_string(),
                    Outcome::ConfigError(e) => format!("configuration error: {e}"),
                };
                eprintln!("  {:<22} {:<15} {status}", r.check, r.scheme);
            }
            eprintln!("wrote {}", path.display());
            Ok(0)
        }
    }
}

fn parse() -> Cli {
    let keys = format!(
        "Configuration file keys (TOML, sections as below; command-line flags override them):\n\
         {CONFIG_KEYS}\n\nExit codes: 0 success, 2 configuration error, 3 numerical failure."
    );
    let cmd = Cli::command()
        .after_long_help(keys.clone())
        .mut_subcommands(|s| s.after_long_help(keys.clone()));
    let matches = cmd.get_matches();
    Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit())
}

fn main() -> ExitCode {
    match run(parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
