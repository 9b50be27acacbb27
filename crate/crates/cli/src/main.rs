//! `daniel` command-line interface.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure,
//! 4 protocol or transport failure.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use daniel_core::baselines::{baseline_fit, GradientSource, MethodKind, DEFAULT_TAU};
use daniel_core::evaluate::{frob_error, subspace_error};
use daniel_core::federation::transport::{
    round_deadline, DirectoryHub, DirectorySite, HubTransport, SiteTransport, TcpHub, TcpSite,
};
use daniel_core::federation::{hub_round, make_partition, site_round, Partition, TransportKind, HUB_SITE_ID};
use daniel_core::harness::{self, fit_partitioned, run_grid, summarize, ExperimentConfig, PipelineOutput};
use daniel_core::optimize::{convex_init_with, daniel_fit_with, symmetric_init_from, FitResult, OptimizerConfig};
use daniel_core::sampling::DEFAULT_BURN_IN;
use daniel_core::spectral::factorize_rank_d;
use daniel_core::{BinaryDataset, Error, ParameterMatrix, PseudoLikelihood};

#[derive(Parser)]
#[command(name = "daniel", version, about = "Low-rank Ising models with one-shot federated fitting")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a ground truth and Gibbs samples from it.
    Simulate(SimulateArgs),
    /// Fit one method on a dataset, split across simulated sites.
    Fit(FitArgs),
    /// Run an experiment grid from a TOML config.
    Experiment(ExperimentArgs),
    /// Hub of a real multi-process round, followed by the hub-side fit.
    FederateHub(HubArgs),
    /// A non-hub site of a real multi-process round.
    FederateSite(SiteArgs),
    /// Compare a fitted parameter matrix with the truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    /// Dataset file; `.isd` selects the binary format.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the true parameter matrix.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizerArgs {
    #[arg(long, default_value = "daniel")]
    method: MethodKind,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long = "gamma")]
    gamma_max: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Nuclear-norm weight of the convex initialization.
    #[arg(long)]
    lambda: Option<f64>,
    /// Threshold of the SV-Soft and SV-Hard baselines.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Write the fitted parameter matrix here.
    #[arg(long)]
    theta_out: Option<PathBuf>,
}

impl OptimizerArgs {
    fn config(&self) -> OptimizerConfig {
        let mut cfg = OptimizerConfig::default();
        if let Some(e) = self.eta {
            cfg.eta = e;
        }
        if let Some(g) = self.gamma_max {
            cfg.gamma_max = g;
        }
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        cfg.lambda = self.lambda.or(cfg.lambda);
        cfg.d = Some(self.d);
        cfg
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    opt: OptimizerArgs,
    /// Distributedness level: m = ⌊n^x⌋ sites.
    #[arg(long, conflicts_with = "sites")]
    x: Option<f64>,
    /// Number of equally sized sites.
    #[arg(long)]
    sites: Option<usize>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// CSV output; defaults to `output_path` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
#[group(id = "hub_transport", required = true, multiple = false)]
struct HubTransportArgs {
    /// Listen for sites on this TCP port.
    #[arg(long, group = "hub_transport")]
    port: Option<u16>,
    /// Exchange messages through files in this directory.
    #[arg(long, group = "hub_transport")]
    exchange_dir: Option<PathBuf>,
}

#[derive(Args)]
struct HubArgs {
    #[command(flatten)]
    transport: HubTransportArgs,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// The hub's own data block.
    #[arg(long)]
    data: PathBuf,
    /// Total number of sites, including the hub.
    #[arg(long)]
    sites: u32,
    #[command(flatten)]
    opt: OptimizerArgs,
    #[arg(long, default_value_t = 0)]
    round: u32,
    /// Write the gradient correction here.
    #[arg(long)]
    correction_out: Option<PathBuf>,
}

#[derive(Args)]
struct SiteArgs {
    /// Hub address, `host:port`.
    #[arg(long, conflicts_with = "exchange_dir", required_unless_present = "exchange_dir")]
    hub: Option<String>,
    #[arg(long)]
    exchange_dir: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    site_id: u32,
    #[arg(long, default_value_t = 0)]
    round: u32,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    theta: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Rank for the subspace error of rank-`d` factorizations.
    #[arg(long)]
    d: Option<usize>,
    /// Also report the pseudo-likelihood loss on this dataset.
    #[arg(long)]
    data: Option<PathBuf>,
}

/// An error together with its exit code.
struct Failure {
    code: u8,
    err: Error,
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match &err {
            e if e.is_numeric() => 3,
            Error::Protocol(_) => 4,
            _ => 2,
        };
        Failure { code, err }
    }
}

/// Errors of the communication round all count as transport failures.
fn transport_failure(err: Error) -> Failure {
    let code = if err.is_numeric() { 3 } else { 4 };
    Failure { code, err }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Experiment(a) => experiment(a),
        Command::FederateHub(a) => federate_hub(a),
        Command::FederateSite(a) => federate_site(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn simulate(a: SimulateArgs) -> CliResult {
    let (truth, data) = harness::simulate(a.p, a.d, a.n, a.burn_in, a.seed)?;
    data.save(&a.out)?;
    if let Some(path) = &a.truth_out {
        harness::save_theta(&truth.theta_star, path)?;
    }
    println!("p={}\nd={}\nn={}\nseed={}", a.p, a.d, a.n, a.seed);
    Ok(())
}

fn print_fit(method: MethodKind, data: &BinaryDataset, d: usize, m: usize, fit: &FitResult, wall_ms: f64) {
    println!("method={method}");
    println!("p={}", data.p());
    println!("n={}", data.n());
    println!("d={d}");
    println!("m={m}");
    println!("iterations={}", fit.iterations_used);
    println!("final_delta={}", fit.trace.last().copied().unwrap_or(0.0));
    println!("wall_time_ms={wall_ms:.3}");
}

fn fit(a: FitArgs) -> CliResult {
    let data = BinaryDataset::load(&a.data)?;
    let partition = match (a.x, a.sites) {
        (_, Some(m)) => Partition::equal(data.n(), m)?,
        (x, None) => make_partition(data.n(), x.unwrap_or(0.0))?,
    };
    let cfg = a.opt.config();
    let PipelineOutput { fit, m, wall_time_ms, .. } = fit_partitioned(
        &data,
        &partition,
        a.opt.method,
        a.opt.d,
        &cfg,
        a.opt.tau,
        &TransportKind::InProcess,
    )?;
    print_fit(a.opt.method, &data, a.opt.d, m, &fit, wall_time_ms);
    if let Some(path) = &a.opt.theta_out {
        harness::save_theta(&fit.theta_hat, path)?;
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> CliResult {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(r) = a.reps {
        cfg.reps = r;
    }
    let out = a.out.or_else(|| cfg.output_path.clone());
    let rows = run_grid(&cfg, a.jobs, out.as_deref())?;
    for s in summarize(&rows) {
        println!(
            "{:<8} p={:<4} n={:<6} x={:<4} m={:<5} frob={:.4}±{:.4} time_ms={:.2} failed={}",
            s.method, s.p, s.n, s.x, s.m, s.mean_frob, s.sd_frob, s.mean_time_ms, s.failures
        );
    }
    if let Some(path) = out {
        info!("wrote {} rows to {}", rows.len(), path.display());
    }
    Ok(())
}

fn federate_hub(a: HubArgs) -> CliResult {
    if a.sites == 0 {
        return Err(Error::InvalidArgument("--sites must be ≥ 1".into()).into());
    }
    let data = BinaryDataset::load(&a.data)?;
    let cfg = a.opt.config();
    let start = std::time::Instant::now();
    let hub = PseudoLikelihood::new(&data);
    let f0 = symmetric_init_from(&convex_init_with(&hub, &cfg)?, a.opt.d)?;
    let theta0 = ParameterMatrix::new(f0.product())?;
    let remote: BTreeSet<u32> = (1..=a.sites).filter(|&s| s != HUB_SITE_ID).collect();
    let mut transport: Box<dyn HubTransport> = match (&a.transport.port, &a.transport.exchange_dir) {
        (Some(port), _) => {
            let hub = TcpHub::bind((a.bind.as_str(), *port)).map_err(transport_failure)?;
            eprintln!("listening on {}", hub.local_addr()?);
            Box::new(hub)
        }
        (None, Some(dir)) => Box::new(DirectoryHub::new(dir).map_err(transport_failure)?),
        (None, None) => unreachable!("clap requires a transport"),
    };
    let outcome = hub_round(transport.as_mut(), &theta0, &data, &remote, a.round, round_deadline())
        .map_err(transport_failure)?;
    eprintln!("received {} gradients", outcome.stats.gradients_received);
    if let Some(path) = &a.correction_out {
        harness::save_matrix(&outcome.correction, path)?;
    }
    let fit = match a.opt.method.baseline(a.opt.d, a.opt.tau) {
        None => daniel_fit_with(&hub, &outcome.correction, &f0.u, &f0.v, &cfg)?,
        Some(b) => baseline_fit(
            &GradientSource::Surrogate {
                hub: &hub,
                correction: &outcome.correction,
            },
            b,
            &cfg,
            a.opt.d,
        )?,
    };
    let wall = start.elapsed().as_secs_f64() * 1e3;
    print_fit(a.opt.method, &data, a.opt.d, a.sites as usize, &fit, wall);
    if let Some(path) = &a.opt.theta_out {
        harness::save_theta(&fit.theta_hat, path)?;
    }
    Ok(())
}

fn federate_site(a: SiteArgs) -> CliResult {
    if a.site_id == HUB_SITE_ID {
        return Err(Error::InvalidArgument(format!("site id {HUB_SITE_ID} is reserved for the hub")).into());
    }
    let data = BinaryDataset::load(&a.data)?;
    let mut transport: Box<dyn SiteTransport> = match (&a.hub, &a.exchange_dir) {
        (Some(addr), _) => Box::new(TcpSite::new(addr.clone())),
        (None, Some(dir)) => Box::new(DirectorySite::new(dir)),
        (None, None) => unreachable!("clap requires a transport"),
    };
    let msg = site_round(transport.as_mut(), a.site_id, &data, a.round, round_deadline())
        .map_err(transport_failure)?;
    println!("site_id={}\nround={}\nn={}", msg.site_id(), msg.round_id(), msg.n_i());
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let theta = harness::load_theta(&a.theta)?;
    let truth = harness::load_theta(&a.truth)?;
    println!("frob_err={}", frob_error(&theta, &truth)?);
    if let Some(d) = a.d {
        let (fit, _) = factorize_rank_d(&theta, d)?;
        let (star, _) = factorize_rank_d(&truth, d)?;
        println!("subspace_err={}", subspace_error(&fit, &star.u)?);
    }
    if let Some(path) = &a.data {
        let data = BinaryDataset::load(path)?;
        println!("pseudo_nll={}", PseudoLikelihood::new(&data).loss(&theta));
    }
    Ok(())
}
