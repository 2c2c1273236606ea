use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybridbeam::analytics::{spread_profiles, write_series_csv, Series};
use hybridbeam::beamformer::beam_pattern;
use hybridbeam::runner::{
    emit_csv, initial_beamformers, parse_axis, run_slow_time, summarize, sweep, Method, ResultTable,
};
use hybridbeam::scenario::with_overrides;
use hybridbeam::{default_table1_scenario, load_scenario, small_preset, Error, ScenarioConfig};

#[derive(Parser, Debug)]
#[command(name = "hybridbeam", version, about = "Hybrid analog/digital beamforming simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Slow-time simulation of one configuration.
    Run(RunArgs),
    /// Cross-product parameter sweep.
    Sweep(SweepArgs),
    /// Beam patterns of the intended group's combiners.
    Pattern(PatternArgs),
    /// Beamspace profiles of the mean filtered CCM for several AoA error levels.
    Spread(SpreadArgs),
    /// Print the resolved scenario as TOML.
    Config(ScenarioArgs),
}

#[derive(Args, Debug, Clone)]
struct ScenarioArgs {
    /// Scenario file (TOML). Defaults to the built-in 4-group scenario.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Start from the N=32 preset instead of the default scenario.
    #[arg(long)]
    small: bool,
    /// `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// AoA estimate error std, degrees.
    #[arg(long = "sigma-est")]
    sigma_est: Option<f64>,
    #[arg(long)]
    nq: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Slow-time horizon.
    #[arg(long)]
    steps: Option<usize>,
    /// Training length T; enables nMSE columns.
    #[arg(long)]
    training: Option<usize>,
}

impl ScenarioArgs {
    fn resolve(&self) -> hybridbeam::Result<ScenarioConfig> {
        let base = match (&self.scenario, self.small) {
            (Some(_), true) => {
                return Err(Error::InvalidArgument("--scenario and --small are exclusive".into()));
            }
            (Some(p), false) => load_scenario(p)?,
            (None, true) => small_preset(),
            (None, false) => default_table1_scenario(),
        };
        let mut sets = self.set.clone();
        let flags: [(&str, Option<String>); 9] = [
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("beta", self.beta.map(|v| v.to_string())),
            ("sigma_est", self.sigma_est.map(|v| v.to_string())),
            ("nq", self.nq.map(|v| v.to_string())),
            ("rank", self.rank.map(|v| v.to_string())),
            ("trials", self.trials.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("steps", self.steps.map(|v| v.to_string())),
            ("training", self.training.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                sets.push(format!("{k}={v}"));
            }
        }
        with_overrides(&base, &sets)
    }
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "geb,geb-filtered,wiener,whitening,dft")]
    methods: String,
    #[command(flatten)]
    output: OutputArgs,
    /// Steps dropped before slow-time averaging in the summary.
    #[arg(long = "burn-in")]
    burn_in: Option<usize>,
    /// Outage threshold for the summary, dB.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// `name=v1,v2,...`, repeatable; the grid is the cross product.
    #[arg(long, required = true)]
    axis: Vec<String>,
    #[arg(long, default_value = "geb,geb-filtered,wiener,whitening,dft")]
    methods: String,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct PatternArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "geb-true,whitening,dft")]
    methods: String,
    /// Grid size over [-90, 90] degrees.
    #[arg(long, default_value_t = 721)]
    points: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct SpreadArgs {
    /// MPC center azimuth, degrees.
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// MPC angular spread, degrees.
    #[arg(long, default_value_t = 3.0)]
    spread: f64,
    #[arg(long, default_value_t = 100)]
    antennas: usize,
    /// AoA error levels, degrees.
    #[arg(long = "sigma-est", value_delimiter = ',', default_value = "0.1,0.5,1,2")]
    sigma_est: Vec<f64>,
    #[arg(long, default_value_t = 721)]
    points: usize,
    #[command(flatten)]
    output: OutputArgs,
}

fn phi_grid(points: usize) -> Vec<f64> {
    let lim = std::f64::consts::FRAC_PI_2 * (1.0 - 1e-9);
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| -lim + 2.0 * lim * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

fn write_output<F>(path: Option<&Path>, f: F) -> hybridbeam::Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let name = path.map_or_else(|| "<stdout>".to_string(), |p| p.display().to_string());
    let io = |source| Error::Io { path: name.clone(), source };
    match path {
        Some(p) => {
            let mut w = std::io::BufWriter::new(std::fs::File::create(p).map_err(io)?);
            f(&mut w).map_err(io)?;
            w.flush().map_err(io)
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            f(&mut w).map_err(io)?;
            w.flush().map_err(io)
        }
    }
}

fn run(args: RunArgs) -> hybridbeam::Result<()> {
    let config = args.scenario.resolve()?;
    let methods = Method::parse_list(&args.methods)?;
    log::info!(
        "run: N={} trials={} steps={} methods={}",
        config.num_antennas,
        config.monte_carlo_trials,
        config.slow_time_steps,
        args.methods
    );
    let table = run_slow_time(&config, &methods)?;
    write_output(args.output.out.as_deref(), |w| emit_csv(&table, w))?;
    let burn_in = args.burn_in.unwrap_or(config.burn_in);
    for s in summarize(&table, &methods, burn_in, args.threshold)? {
        eprintln!(
            "{:<13} sinr={:>8.3} dB  outage={:.3}  n_dp={}  complexity={}  nmse={}",
            s.method.name(),
            s.mean_sinr_db,
            s.outage,
            fmt_opt(s.mean_n_delta_p),
            fmt_opt(s.mean_complexity),
            fmt_opt(s.mean_nmse),
        );
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn run_sweep(args: SweepArgs) -> hybridbeam::Result<()> {
    let config = args.scenario.resolve()?;
    let methods = Method::parse_list(&args.methods)?;
    let axes = args.axis.iter().map(|a| parse_axis(a)).collect::<hybridbeam::Result<Vec<_>>>()?;
    let mut table = ResultTable::default();
    for point in sweep(&config, &axes, &methods)? {
        table.extend(point.table);
    }
    write_output(args.output.out.as_deref(), |w| emit_csv(&table, w))
}

fn run_pattern(args: PatternArgs) -> hybridbeam::Result<()> {
    let config = args.scenario.resolve()?;
    let methods = Method::parse_list(&args.methods)?;
    let grid = phi_grid(args.points);
    let mut series = Vec::new();
    for (method, s) in initial_beamformers(&config, &methods)? {
        let pattern = beam_pattern(&s, &grid);
        for c in 0..s.ncols() {
            series.push(Series {
                figure_id: "pattern".into(),
                curve_id: format!("{method}:col_{c}"),
                points: grid
                    .iter()
                    .zip(&pattern)
                    .map(|(phi, row)| (phi.to_degrees(), 10.0 * row[c].max(1e-300).log10()))
                    .collect(),
            });
        }
    }
    write_output(args.output.out.as_deref(), |w| write_series_csv(w, &series))
}

fn run_spread(args: SpreadArgs) -> hybridbeam::Result<()> {
    if args.antennas == 0 {
        return Err(Error::InvalidArgument("--antennas must be positive".into()));
    }
    let grid = phi_grid(args.points);
    let series = spread_profiles(args.mu, args.spread, args.antennas, &args.sigma_est, &grid)?;
    write_output(args.output.out.as_deref(), |w| write_series_csv(w, &series))
}

fn dispatch(cli: Cli) -> hybridbeam::Result<()> {
    match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Pattern(a) => run_pattern(a),
        Command::Spread(a) => run_spread(a),
        Command::Config(a) => {
            let c = a.resolve()?;
            print!("{}", c.to_toml_string());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
