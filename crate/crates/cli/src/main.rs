use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use neurostab::gcnet::{EquilibriumOptions, NetSpec};
use neurostab::hotm::{self, check_asymptotic, norm_profile, propagate_maps};
use neurostab::linstab::{analyze, linearize, root_locus, write_root_locus_csv, DelayOptions};
use neurostab::odeflow::{
    simulate, simulate_delayed, write_trajectory_csv, IntegratorConfig, QuadParams, State, STATE_DIM,
};
use neurostab::pipeline::{
    build_database, init_net, solve_tpbvp, train, write_metrics_csv, Bounds, Database, DatabaseOptions,
    InitialGuess, ShootingOptions, TrainOptions,
};

/// Directory used for outputs whose path is not given explicitly.
const OUT_DIR_ENV: &str = "NEUROSTAB_OUT_DIR";

#[derive(Parser)]
#[command(name = "neurostab", version, about = "Stability analysis of neural quadcopter controllers")]
struct Cli {
    /// JSON file with the command's settings. Keys present in the file take
    /// precedence over flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve optimal transfers from random initial states and write the
    /// state-control database.
    GenerateData(GenerateData),
    /// Fit a network to a database.
    Train(TrainCmd),
    /// Equilibrium, eigenvalues, modal margins and critical delay.
    Analyze(AnalyzeCmd),
    /// Eigenvalues of the Padé-augmented loop over a grid of delays.
    RootLocus(RootLocusCmd),
    /// High-order expansion of the closed-loop flow around a nominal start.
    TaylorMap(TaylorMapCmd),
    /// Closed-loop trajectory, optionally with feedback delay.
    Simulate(SimulateCmd),
}

#[derive(Args, Serialize, Deserialize)]
struct GenerateData {
    #[arg(long, default_value_t = 2000)]
    n_traj: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON `{"lo": [..5], "hi": [..5]}`; defaults to the standard box.
    #[arg(long)]
    bounds_file: Option<PathBuf>,
    #[arg(long, default_value_t = 59)]
    samples: usize,
    /// Worker threads, 0 for all cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct TrainCmd {
    /// Database CSV written by generate-data.
    #[arg(long)]
    db: Option<PathBuf>,
    /// Hidden layers as DEPTHxWIDTH, e.g. 3x32.
    #[arg(long, default_value = "3x32")]
    arch: String,
    #[arg(long, default_value_t = 400)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 3e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    final_learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct AnalyzeCmd {
    /// Weight JSON.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Largest delay searched, s.
    #[arg(long, default_value_t = 10.0)]
    tau_max: f64,
    /// Also write the axis-shifted controller here.
    #[arg(long)]
    shifted_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct RootLocusCmd {
    /// Weight JSON.
    #[arg(long)]
    net: Option<PathBuf>,
    /// START:STOP:COUNT (geometric when prefixed with `log:`) or a
    /// comma-separated list of delays.
    #[arg(long, default_value = "0.001:0.5:100")]
    tau_grid: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct TaylorMapCmd {
    /// Weight JSON.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Nominal initial state, five comma-separated values.
    #[arg(long, default_value = "-4,0,0,0,0", allow_hyphen_values = true)]
    x0: String,
    #[arg(long, default_value_t = 7)]
    order: usize,
    /// Horizon as a multiple of the optimal transfer time.
    #[arg(long, default_value_t = 1.5)]
    horizon_factor: f64,
    /// Optimal transfer time; solved for when omitted.
    #[arg(long)]
    tf: Option<f64>,
    /// Threshold on every map norm for the equilibrium to count as acquired.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct SimulateCmd {
    /// Weight JSON.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Initial state, five comma-separated values.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long, default_value_t = 10.0)]
    t_end: f64,
    /// Feedback delay, s.
    #[arg(long)]
    delay: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Bad input (exit code 2) versus a numerical method that gave up (3).
#[derive(Debug)]
enum Failure {
    Validation(anyhow::Error),
    Numerical(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Validation(e.into())
    }
}

fn numerical<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Numerical(e.into())
}

type Outcome = Result<(), Failure>;

/// Flags first, then the config file on top.
fn resolve<T: Serialize + DeserializeOwned>(flags: T, config: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = config else {
        return Ok(flags);
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let serde_json::Value::Object(overrides) = file else {
        bail!("{} must hold a JSON object", path.display());
    };
    let mut merged = serde_json::to_value(flags)?;
    let obj = merged.as_object_mut().expect("settings serialize to an object");
    for (k, v) in overrides {
        if !obj.contains_key(&k) {
            bail!("unknown setting `{k}` in {}", path.display());
        }
        obj.insert(k, v);
    }
    Ok(serde_json::from_value(merged)?)
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> anyhow::Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| anyhow!("--{flag} is required (flag or config key `{flag}`)"))
}

fn output_path(out: &Option<PathBuf>, default_name: &str) -> PathBuf {
    match out {
        Some(p) => p.clone(),
        None => std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."))
            .join(default_name),
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// `<output>.config.json`, recording the resolved settings of the run.
fn write_sidecar<T: Serialize>(output: &Path, command: &str, settings: &T) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct Sidecar<'a, T> {
        command: &'a str,
        version: &'a str,
        settings: &'a T,
    }
    let mut name = output.as_os_str().to_owned();
    name.push(".config.json");
    write_json(
        Path::new(&name),
        &Sidecar {
            command,
            version: env!("CARGO_PKG_VERSION"),
            settings,
        },
    )
}

fn parse_arch(s: &str) -> anyhow::Result<Vec<usize>> {
    let (d, w) = s
        .split_once(['x', 'X', '×'])
        .ok_or_else(|| anyhow!("architecture `{s}` is not DEPTHxWIDTH"))?;
    let depth: usize = d.trim().parse().with_context(|| format!("depth in `{s}`"))?;
    let width: usize = w.trim().parse().with_context(|| format!("width in `{s}`"))?;
    if depth == 0 || width == 0 {
        bail!("architecture `{s}` needs positive depth and width");
    }
    Ok(vec![width; depth])
}

fn parse_state(s: &str) -> anyhow::Result<State> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("state `{s}`"))?;
    if vals.len() != STATE_DIM || vals.iter().any(|v| !v.is_finite()) {
        bail!("state `{s}` must be {STATE_DIM} finite comma-separated numbers");
    }
    let mut x = [0.0; STATE_DIM];
    x.copy_from_slice(&vals);
    Ok(x)
}

fn parse_grid(s: &str) -> anyhow::Result<Vec<f64>> {
    let (log, body) = match s.strip_prefix("log:") {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let grid: Vec<f64> = if body.contains(':') {
        let parts: Vec<&str> = body.split(':').collect();
        let [a, b, n] = parts[..] else {
            bail!("grid `{s}` is not START:STOP:COUNT");
        };
        let (a, b): (f64, f64) = (a.trim().parse()?, b.trim().parse()?);
        let n: usize = n.trim().parse()?;
        if n < 2 || !(a > 0.0 && b > a) {
            bail!("grid `{s}` needs 0 < START < STOP and COUNT >= 2");
        }
        (0..n)
            .map(|i| {
                let f = i as f64 / (n - 1) as f64;
                if log {
                    a * (b / a).powf(f)
                } else {
                    a + f * (b - a)
                }
            })
            .collect()
    } else {
        body.split(',').map(|v| v.trim().parse::<f64>()).collect::<Result<_, _>>()?
    };
    if grid.is_empty() || grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        bail!("grid `{s}` must contain positive delays");
    }
    Ok(grid)
}

fn generate_data(cmd: GenerateData) -> Outcome {
    let bounds = match &cmd.bounds_file {
        Some(path) => serde_json::from_str::<Bounds>(
            &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )?,
        None => Bounds::default(),
    };
    bounds.validate()?;
    let opts = DatabaseOptions {
        n_traj: cmd.n_traj,
        samples_per_traj: cmd.samples,
        seed: cmd.seed,
        bounds,
        workers: cmd.workers,
        ..DatabaseOptions::default()
    };
    let db = build_database(&QuadParams::default(), &opts).map_err(|e| match e {
        neurostab::pipeline::DatabaseError::TooManyFailures { .. } => numerical(e),
        other => Failure::Validation(other.into()),
    })?;
    let out = output_path(&cmd.out, "db.csv");
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    db.save(&out)?;
    write_sidecar(&out, "generate-data", &cmd)?;
    eprintln!(
        "{} rows from {} trajectories ({} resampled) -> {}",
        db.len(),
        db.meta.trajectories,
        db.meta.failures,
        out.display()
    );
    Ok(())
}

fn train_cmd(cmd: TrainCmd) -> Outcome {
    let hidden = parse_arch(&cmd.arch)?;
    let db = Database::load(required(&cmd.db, "db")?)?;
    let net = init_net(&db, &hidden, cmd.seed)?;
    let opts = TrainOptions {
        epochs: cmd.epochs,
        batch: cmd.batch,
        learning_rate: cmd.learning_rate,
        final_learning_rate: cmd.final_learning_rate,
        seed: cmd.seed,
        ..TrainOptions::default()
    };
    opts.validate()?;
    let (trained, report) = train(&net, &db, &opts).map_err(|e| match e {
        neurostab::pipeline::TrainError::NonFinite { .. } => numerical(e),
        other => Failure::Validation(other.into()),
    })?;
    let out = output_path(&cmd.out, "net.json");
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    trained.save_weights(&out)?;
    let mut metrics = out.as_os_str().to_owned();
    metrics.push(".metrics.csv");
    let mut w = create(Path::new(&metrics))?;
    write_metrics_csv(&mut w, &report)?;
    w.flush()?;
    write_sidecar(&out, "train", &cmd)?;
    eprintln!("held-out MAE {:.3e} -> {}", report.final_mae(), out.display());
    Ok(())
}

fn analyze_cmd(cmd: AnalyzeCmd) -> Outcome {
    let net = NetSpec::load_weights(required(&cmd.net, "net")?)?;
    let delay = DelayOptions {
        tau_max: cmd.tau_max,
        ..DelayOptions::default()
    };
    let (report, shifted) = analyze(&net, &QuadParams::default(), &EquilibriumOptions::default(), &delay)
        .map_err(|e| match e {
            neurostab::linstab::LinstabError::Invalid(_) | neurostab::linstab::LinstabError::BadDelay(_) => {
                Failure::Validation(e.into())
            }
            other => numerical(other),
        })?;
    let out = output_path(&cmd.out, "margins.json");
    write_json(&out, &report)?;
    write_sidecar(&out, "analyze", &cmd)?;
    if let Some(path) = &cmd.shifted_out {
        shifted.save_weights(path)?;
    }
    eprintln!(
        "stable={} zeta10={:?} T={:?} tau*={:?}",
        report.stable, report.margins.zeta10, report.margins.period, report.margins.tau_star_refined
    );
    Ok(())
}

fn shifted_net(net: &NetSpec, p: &QuadParams) -> Result<NetSpec, Failure> {
    let eq = neurostab::gcnet::find_equilibrium(net, p, &EquilibriumOptions::default()).map_err(|e| match e {
        neurostab::gcnet::NetError::SingularJacobian { .. } | neurostab::gcnet::NetError::NoConvergence { .. } => {
            numerical(e)
        }
        other => Failure::Validation(other.into()),
    })?;
    Ok(neurostab::gcnet::shift_axes(net, &eq.x_hat))
}

fn root_locus_cmd(cmd: RootLocusCmd) -> Outcome {
    let taus = parse_grid(&cmd.tau_grid)?;
    let p = QuadParams::default();
    let net = shifted_net(&NetSpec::load_weights(required(&cmd.net, "net")?)?, &p)?;
    let lin = linearize(&net, &p, &[0.0; STATE_DIM]).map_err(numerical)?;
    let locus = root_locus(&lin, &taus).map_err(numerical)?;
    let out = output_path(&cmd.out, "root_locus.csv");
    let mut w = create(&out)?;
    write_root_locus_csv(&mut w, &locus)?;
    w.flush()?;
    write_sidecar(&out, "root-locus", &cmd)?;
    if !locus.ambiguous.is_empty() {
        eprintln!("branch matching ambiguous at {} grid points", locus.ambiguous.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct TaylorSummary {
    x0: State,
    tf: f64,
    horizon: f64,
    order: usize,
    /// Nonzero-capable monomials per degree 1..=order in each component.
    terms_per_degree: Vec<usize>,
    /// Cumulative count of non-constant terms up to each order.
    cumulative_terms: Vec<usize>,
    asymptotic: hotm::AsymptoticCheck,
    radius_at_horizon: Option<hotm::RadiusEstimate>,
}

fn taylor_map_cmd(cmd: TaylorMapCmd) -> Outcome {
    let x0 = parse_state(&cmd.x0)?;
    if !(cmd.horizon_factor > 0.0) {
        Err(anyhow!("horizon factor must be positive"))?;
    }
    if cmd.order == 0 || cmd.order > hotm::MAX_ORDER {
        Err(anyhow!("order must be in 1..={}", hotm::MAX_ORDER))?;
    }
    let p = QuadParams::default();
    let net = shifted_net(&NetSpec::load_weights(required(&cmd.net, "net")?)?, &p)?;
    let tf = match cmd.tf {
        Some(tf) if tf > 0.0 => tf,
        Some(tf) => Err(anyhow!("tf must be positive, got {tf}"))?,
        None => {
            solve_tpbvp(&x0, &p, &InitialGuess::Hover, &ShootingOptions::default())
                .map_err(numerical)?
                .tf
        }
    };
    let horizon = cmd.horizon_factor * tf;
    let maps = propagate_maps(&net, &p, &x0, cmd.order, horizon, &IntegratorConfig::map_propagation())
        .map_err(numerical)?;
    let last = maps.last().expect("at least the initial map");
    let origin = [0.0; STATE_DIM];
    let profile = norm_profile(&maps, &origin);
    let alg = last.components[0].algebra();
    let terms_per_degree: Vec<usize> = (1..=cmd.order).map(|d| alg.degree_range(d).len()).collect();
    let cumulative_terms = terms_per_degree
        .iter()
        .scan(0, |acc, n| {
            *acc += n;
            Some(*acc)
        })
        .collect();
    let summary = TaylorSummary {
        x0,
        tf,
        horizon,
        order: cmd.order,
        terms_per_degree,
        cumulative_terms,
        asymptotic: check_asymptotic(last, &origin, cmd.tol),
        radius_at_horizon: profile.radii().pop().flatten(),
    };

    let dir = output_path(&cmd.out, "taylor_map");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut w = create(&dir.join("radius.csv"))?;
    hotm::write_radius_csv(&mut w, &profile)?;
    w.flush()?;
    write_json(&dir.join("map_at_horizon.json"), last)?;
    write_json(&dir.join("summary.json"), &summary)?;
    write_sidecar(&dir.join("summary.json"), "taylor-map", &cmd)?;
    eprintln!(
        "acquired={} at T={horizon:.3}s, radius {:?}",
        summary.asymptotic.acquired,
        summary.radius_at_horizon.as_ref().map(|r| r.epsilon)
    );
    Ok(())
}

fn simulate_cmd(cmd: SimulateCmd) -> Outcome {
    let x0 = parse_state(required(&cmd.x0, "x0")?)?;
    if !(cmd.t_end > 0.0) {
        Err(anyhow!("t_end must be positive"))?;
    }
    let net = NetSpec::load_weights(required(&cmd.net, "net")?)?;
    let p = QuadParams::default();
    let cfg = IntegratorConfig::oracle();
    let traj = match cmd.delay {
        Some(tau) if tau < 0.0 || !tau.is_finite() => Err(anyhow!("delay must be a non-negative number"))?,
        Some(tau) => simulate_delayed(&net, &p, &x0, tau, cmd.t_end, &cfg),
        None => simulate(&net, &p, &x0, cmd.t_end, &cfg),
    }
    .map_err(numerical)?;
    let out = output_path(&cmd.out, "trajectory.csv");
    let mut w = create(&out)?;
    write_trajectory_csv(&mut w, &traj, &net)?;
    w.flush()?;
    write_sidecar(&out, "simulate", &cmd)?;
    let end = traj.last_state();
    eprintln!("|x(t_end)| = {:.3e}", end.iter().map(|v| v * v).sum::<f64>().sqrt());
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::GenerateData(c) => generate_data(resolve(c, cfg)?),
        Command::Train(c) => train_cmd(resolve(c, cfg)?),
        Command::Analyze(c) => analyze_cmd(resolve(c, cfg)?),
        Command::RootLocus(c) => root_locus_cmd(resolve(c, cfg)?),
        Command::TaylorMap(c) => taylor_map_cmd(resolve(c, cfg)?),
        Command::Simulate(c) => simulate_cmd(resolve(c, cfg)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(3)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_strings() {
        assert_eq!(parse_arch("3x32").unwrap(), vec![32, 32, 32]);
        assert_eq!(parse_arch("1X8").unwrap(), vec![8]);
        assert!(parse_arch("3").is_err());
        assert!(parse_arch("0x4").is_err());
        assert!(parse_arch("ax4").is_err());
    }

    #[test]
    fn delay_grids() {
        assert_eq!(parse_grid("0.1:0.3:3").unwrap().len(), 3);
        let g = parse_grid("log:0.01:1:3").unwrap();
        assert!((g[1] - 0.1).abs() < 1e-15);
        assert_eq!(parse_grid("0.2, 0.4").unwrap(), vec![0.2, 0.4]);
        assert!(parse_grid("0:1:3").is_err());
        assert!(parse_grid("-1").is_err());
    }

    #[test]
    fn states() {
        assert_eq!(parse_state("-4,0,0,0,0").unwrap(), [-4.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(parse_state("1,2").is_err());
        assert!(parse_state("1,2,3,4,nan").is_err());
    }
}
