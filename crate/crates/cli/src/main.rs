use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use blds::experiment::{self, ExperimentConfig};
use blds::moments;
use blds::recover::HankelShape;
use blds::stability::{self, DEFAULT_DEPTH, DEFAULT_SAMPLES};
use blds::{
    Error, FeatureConfig, InputDistribution, MarkovParamsF64, NoiseConfig, SystemParamsF64,
};

#[derive(Parser)]
#[command(
    name = "blds",
    version,
    about = "Bilinear dynamical system identification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimation error over a (kind, L, T) grid with several seeds.
    Sweep(ConfigArgs),
    /// Smallest Gram eigenvalue against (T-L+1)/4 over a T grid.
    PeCheck(ConfigArgs),
    /// Sampled joint spectral radius and transient constant of a system.
    Stability(StabilityArgs),
    /// Empirical moment constants of an input distribution.
    Moments(MomentsArgs),
    /// Ho-Kalman realization from a Markov parameter file.
    Recover(RecoverArgs),
    /// Draws a system and one trajectory, optionally fitting G.
    Simulate(SimulateArgs),
}

/// Config file plus flag overrides; each flag mirrors a config key.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML or JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    rhok: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Comma-separated list of `sphere` and `gaussian`.
    #[arg(long, value_delimiter = ',')]
    input_kinds: Option<Vec<InputDistribution>>,
    #[arg(long, value_delimiter = ',')]
    l_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    t_list: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    fixed_system: bool,
    #[arg(long)]
    delta: Option<f64>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).map_err(as_config_error)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(
            n,
            p,
            m,
            rho0,
            rhok,
            sigma,
            input_kinds,
            l_list,
            t_list,
            trials,
            base_seed,
            delta
        );
        if self.fixed_system {
            cfg.fixed_system = true;
        }
        if self.output.is_some() {
            cfg.output = self.output.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct StabilityArgs {
    /// System JSON; a random system is drawn from the config when absent.
    #[arg(long)]
    system: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "sphere")]
    kind: InputDistribution,
    #[arg(long, default_value_t = DEFAULT_DEPTH)]
    depth: usize,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Decay rate to certify; searched automatically when absent.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, requires = "rho")]
    kappa: Option<f64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct MomentsArgs {
    #[arg(long, value_delimiter = ',', default_value = "sphere,gaussian")]
    kinds: Vec<InputDistribution>,
    #[arg(long, default_value_t = 3)]
    p: usize,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 64)]
    directions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also check the covariate fourth-moment bound at this history length.
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RecoverArgs {
    /// Markov parameter JSON (`m`, `p`, `L`, `G`).
    #[arg(long)]
    markov: PathBuf,
    /// Model order.
    #[arg(long)]
    n: usize,
    #[arg(long, requires = "n2")]
    n1: Option<usize>,
    #[arg(long, requires = "n1")]
    n2: Option<usize>,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 1000)]
    horizon: usize,
    #[arg(long, default_value = "gaussian")]
    kind: InputDistribution,
    /// Trial index whose system and trajectory seeds are used.
    #[arg(long, default_value_t = 0)]
    trial: usize,
    /// Include states and noise in the trajectory CSV.
    #[arg(long)]
    hidden: bool,
    /// Fit G with this history length and write it next to the true G.
    #[arg(long)]
    fit_l: Option<usize>,
}

fn as_config_error(e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Config(io.to_string()),
        other => other,
    }
}

fn output_dir(cfg: &ExperimentConfig) -> Result<&Path, Error> {
    cfg.output
        .as_deref()
        .ok_or_else(|| Error::Config("an output directory is required (--output)".into()))
}

fn run_sweep(args: &ConfigArgs) -> Result<(), Error> {
    let cfg = args.resolve()?;
    let dir = output_dir(&cfg)?;
    let result = experiment::run_sweep(&cfg)?;
    experiment::write_sweep(dir, &cfg, &result)?;
    println!(
        "{:<9} {:>3} {:>7} {:>14} {:>14} {:>5} {:>6}",
        "kind", "L", "T", "mean_err_sq", "std_err_sq", "ok", "failed"
    );
    for a in &result.aggregates {
        println!(
            "{:<9} {:>3} {:>7} {:>14.6e} {:>14.6e} {:>5} {:>6}",
            a.kind.name(),
            a.l,
            a.t,
            a.mean_error_sq,
            a.std_error_sq,
            a.n_ok,
            a.n_failed
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn run_pe_check(args: &ConfigArgs) -> Result<(), Error> {
    let cfg = args.resolve()?;
    let dir = output_dir(&cfg)?;
    let check = experiment::run_pe_check(&cfg)?;
    experiment::write_pe_check(dir, &cfg, &check)?;
    println!(
        "{:<9} {:>3} {:>7} {:>10} {:>12}",
        "kind", "L", "T", "rate", "T_bound"
    );
    for s in &check.summary {
        println!(
            "{:<9} {:>3} {:>7} {:>10.3} {:>12.1}",
            s.kind.name(),
            s.l,
            s.t,
            s.rate,
            s.horizon_bound
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn run_stability(args: &StabilityArgs) -> Result<(), Error> {
    let sys = match &args.system {
        Some(path) => SystemParamsF64::load(path).map_err(as_config_error)?,
        None => {
            let cfg = args.config.resolve()?;
            blds::random_system(cfg.dims()?, cfg.rho0, cfg.rhok, cfg.system_seed(0))?
        }
    };
    let report = match (args.rho, args.kappa) {
        (Some(rho), kappa) => {
            let kappa = match kappa {
                Some(k) => k,
                None => stability::phi_estimate(
                    &sys,
                    args.kind,
                    rho,
                    args.depth,
                    args.samples,
                    args.seed,
                )?
                .max(1.0),
            };
            Some(stability::certify_uniform_stability(
                &sys,
                args.kind,
                rho,
                kappa,
                args.depth,
                args.samples,
                args.seed,
            )?)
        }
        (None, _) => {
            stability::search_certificate(&sys, args.kind, args.depth, args.samples, args.seed)?
        }
    };
    match report {
        Some(r) if args.json => println!("{}", serde_json::to_string_pretty(&r)?),
        Some(r) => println!("{}", r.summary()),
        None => {
            let jsr =
                stability::jsr_estimate(&sys, args.kind, args.depth, args.samples, args.seed)?;
            if args.json {
                println!("{}", serde_json::to_string_pretty(&jsr)?);
            } else {
                println!(
                    "no (rho, kappa) certificate with rho < 1 on the sampled products\n  JSR lower estimate = {:.6}\n  depth-{} norm bound = {:.6}",
                    jsr.lower, jsr.depth_max, jsr.norm_bound
                );
            }
        }
    }
    Ok(())
}

fn run_moments(args: &MomentsArgs) -> Result<(), Error> {
    let mut reports = Vec::new();
    for &kind in &args.kinds {
        let report =
            moments::moment_report(kind, args.p, args.samples, args.directions, args.seed)?;
        let fourth = match args.l {
            Some(l) => Some(moments::fourth_moment_feature_check(
                kind,
                args.p,
                l,
                args.samples,
                args.directions,
                args.seed,
            )?),
            None => None,
        };
        reports.push((kind, report, fourth));
    }
    if args.json {
        let docs: Vec<_> = reports
            .iter()
            .map(|(kind, r, f)| serde_json::json!({ "kind": kind, "report": r, "feature_fourth_moment": f }))
            .collect();
        println!("{}", serde_json::to_string_pretty(&docs)?);
        return Ok(());
    }
    let tol = 5.0 / (args.samples as f64).sqrt();
    println!(
        "{:<9} {:>3} {:>10} {:>10} {:>12} {:>12} {:>10}",
        "kind", "p", "gamma", "gamma_hat", "isotropy", "third_max", "5/sqrt(N)"
    );
    for (kind, r, _) in &reports {
        println!(
            "{:<9} {:>3} {:>10.4} {:>10.4} {:>12.3e} {:>12.3e} {:>10.3e}",
            kind.name(),
            args.p,
            kind.gamma(args.p),
            r.gamma_hat,
            r.isotropy_dev,
            r.third_moment_max,
            tol
        );
    }
    for (kind, _, f) in &reports {
        if let Some(f) = f {
            println!(
                "{}: covariate fourth moment max {:.4} vs bound {:.4} (d = {}) -> {}",
                kind.name(),
                f.max_fourth,
                f.bound,
                f.dim,
                if f.satisfied { "ok" } else { "violated" }
            );
        }
    }
    Ok(())
}

fn run_recover(args: &RecoverArgs) -> Result<(), Error> {
    let g = MarkovParamsF64::load(&args.markov).map_err(as_config_error)?;
    let shape = args.n1.zip(args.n2).map(|(n1, n2)| HankelShape { n1, n2 });
    let report = experiment::run_recover(&g, args.n, shape)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let text = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => {
            fs::write(path, text)?;
            println!(
                "relative Markov mismatch {:.3e}; wrote {}",
                report.mismatch.relative,
                path.display()
            );
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn run_simulate(args: &SimulateArgs) -> Result<(), Error> {
    let cfg = args.config.resolve()?;
    let dir = output_dir(&cfg)?;
    fs::create_dir_all(dir)?;
    let sys = blds::random_system(cfg.dims()?, cfg.rho0, cfg.rhok, cfg.system_seed(args.trial))?;
    let traj = blds::generate_trajectory(
        &sys,
        args.kind,
        args.horizon,
        NoiseConfig::new(cfg.sigma)?,
        cfg.trajectory_seed(args.trial),
    )?;
    sys.save(dir.join("system.json"))?;
    traj.write_csv(fs::File::create(dir.join("trajectory.csv"))?, args.hidden)?;
    if let Some(l) = args.fit_l {
        let fcfg = FeatureConfig::new(l, cfg.p).map_err(|e| Error::Config(e.to_string()))?;
        let fit = blds::fit_markov(&traj, &fcfg)?;
        for w in &fit.warnings {
            eprintln!("warning: {w}");
        }
        fit.markov.save(dir.join("markov_hat.json"))?;
        blds::true_markov(&sys, l)?.save(dir.join("markov_true.json"))?;
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sweep(a) => run_sweep(a),
        Command::PeCheck(a) => run_pe_check(a),
        Command::Stability(a) => run_stability(a),
        Command::Moments(a) => run_moments(a),
        Command::Recover(a) => run_recover(a),
        Command::Simulate(a) => run_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::Shape(_)
                | Error::FeatureOverflow { .. } => 2,
                e if e.is_numerical() => 3,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
