//! Thin CLI over the mcsbd library: one subcommand per experiment plus
//! single-instance solves. Exit codes: 0 success, 1 configuration error,
//! 2 runtime error.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use mcsbd::error::McsbdError;
use mcsbd::experiments::{self, ExperimentSpec};
use mcsbd::io::{self, Payload1d};
use mcsbd::losses::{LossKind, LossSpec};
use mcsbd::model::forward;
use mcsbd::precond::compute_preconditioner;
use mcsbd::rounding;
use mcsbd::solver2d;
use mcsbd::sphere::{self, InitMode, RgdConfig};

#[derive(Parser)]
#[command(
    name = "mcsbd",
    about = "Multi-channel sparse blind deconvolution: two-stage sphere solver and experiment harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one 1D instance from a file.
    Solve(SolveArgs),
    /// Solve one 2D frame stack.
    Solve2d(Solve2dArgs),
    /// Per-iteration convergence traces for each loss.
    Convergence(ExpArgs),
    /// Success curves over sparsity levels.
    VaryTheta(ExpArgs),
    /// Phase-transition grid over (p, n).
    PhasePn(ExpArgs),
    /// First-order geometry probes (identity-kernel mode).
    Geometry(ExpArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Input file: MCSBD1 binary (observations or ground-truth bundle) or CSV.
    #[arg(long)]
    input: PathBuf,
    /// Optional ground-truth bundle for scoring.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value = "huber")]
    loss: String,
    /// Huber smoothing parameter.
    #[arg(long, default_value_t = mcsbd::losses::DEFAULT_MU)]
    mu: f64,
    /// Sparsity level used by the preconditioner (defaults to the bundle's
    /// theta when the input carries one).
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = experiments::DEFAULT_PHASE1_ITERS)]
    phase1_iters: usize,
    /// Skip Phase-2 rounding.
    #[arg(long)]
    no_round: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Solve2dArgs {
    /// Input frame stack: MCSBD2 binary, or a CSV grid (single frame).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "huber")]
    loss: String,
    #[arg(long, default_value_t = mcsbd::losses::DEFAULT_MU)]
    mu: f64,
    #[arg(long, default_value_t = 0.05)]
    theta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = experiments::DEFAULT_PHASE1_ITERS)]
    phase1_iters: usize,
    #[arg(long)]
    no_round: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExpArgs {
    /// TOML file with an ExperimentSpec; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated list of problem sizes.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Comma-separated list of channel counts.
    #[arg(long, value_delimiter = ',')]
    p: Vec<usize>,
    /// Comma-separated list of sparsity levels.
    #[arg(long, value_delimiter = ',')]
    theta: Vec<f64>,
    /// Comma-separated losses (l1, huber, l4).
    #[arg(long, value_delimiter = ',')]
    loss: Vec<String>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    phase1_iters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExpArgs {
    fn into_spec(self) -> Result<ExperimentSpec, McsbdError> {
        let mut spec = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| McsbdError::io(path.clone(), e))?;
                toml::from_str::<ExperimentSpec>(&text)
                    .map_err(|e| McsbdError::format(path.clone(), e.to_string()))?
            }
            None => ExperimentSpec::default(),
        };
        if !self.n.is_empty() {
            spec.n = self.n;
        }
        if !self.p.is_empty() {
            spec.p = self.p;
        }
        if !self.theta.is_empty() {
            spec.theta = self.theta;
        }
        if !self.loss.is_empty() {
            spec.losses = self
                .loss
                .iter()
                .map(|s| s.parse::<LossKind>())
                .collect::<Result<Vec<_>, _>>()?;
        }
        if let Some(mu) = self.mu {
            spec.mu = mu;
        }
        if let Some(trials) = self.trials {
            spec.trials = trials;
        }
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(samples) = self.samples {
            spec.samples = samples;
        }
        if let Some(iters) = self.phase1_iters {
            spec.phase1_iters = iters;
        }
        if let Some(out) = self.out {
            spec.out_dir = out;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    if let Ok(threads) = std::env::var("MCSBD_THREADS") {
        if let Ok(count) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(count).build_global();
        }
    }

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<(), McsbdError> {
    match cli.cmd {
        Cmd::Solve(args) => solve_1d(args),
        Cmd::Solve2d(args) => solve_2d(args),
        Cmd::Convergence(args) => {
            let spec = args.into_spec()?;
            let path = experiments::run_convergence(&spec)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Cmd::VaryTheta(args) => {
            let spec = args.into_spec()?;
            for path in experiments::run_vary_theta(&spec)? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Cmd::PhasePn(args) => {
            let spec = args.into_spec()?;
            for path in experiments::run_phase_pn(&spec)? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Cmd::Geometry(args) => {
            let spec = args.into_spec()?;
            let path = experiments::run_geometry(&spec)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn parse_loss(name: &str, mu: f64) -> Result<LossSpec, McsbdError> {
    LossSpec::new(name.parse()?, mu)
}

fn solve_1d(args: SolveArgs) -> Result<(), McsbdError> {
    let loss = parse_loss(&args.loss, args.mu)?;

    // Input: binary container (either kind) or CSV channels.
    let is_csv = args.input.extension().is_some_and(|e| e == "csv");
    let (channels, mut truth) = if is_csv {
        (io::load_channels_csv(&args.input)?, None)
    } else {
        match io::load_1d_bin(&args.input)? {
            Payload1d::Channels(c) => (c, None),
            Payload1d::GroundTruth(t) => {
                let obs = forward(&t)?;
                (obs.channels().to_vec(), Some(t))
            }
        }
    };
    if let Some(path) = &args.truth {
        if path.extension().is_some_and(|e| e == "csv") {
            truth = Some(io::load_ground_truth_csv(path)?);
        } else {
            match io::load_1d_bin(path)? {
                Payload1d::GroundTruth(t) => truth = Some(t),
                Payload1d::Channels(_) => {
                    return Err(McsbdError::format(path.clone(), "expected a ground-truth bundle"));
                }
            }
        }
    }

    let theta = match (args.theta, truth.as_ref()) {
        (Some(t), _) => t,
        (None, Some(t)) => t.theta,
        (None, None) => {
            return Err(McsbdError::InvalidParameter(
                "--theta is required when the input carries no ground truth".into(),
            ));
        }
    };

    let obs = mcsbd::model::ObservationSet::new(channels)?;
    let pre = compute_preconditioner(&obs, theta)?;
    let monitor = truth
        .as_ref()
        .map(|t| sphere::DistanceMonitor::from_truth(t, &pre))
        .transpose()?;

    let cfg = RgdConfig {
        max_iters: args.phase1_iters,
        ..RgdConfig::new(loss, InitMode::RandomSphere { seed: args.seed })
    };
    let phase1 = sphere::rgd_solve_monitored(&pre, &cfg, monitor.as_ref())?;

    std::fs::create_dir_all(&args.out).map_err(|e| McsbdError::io(&args.out, e))?;
    sphere::export_trace_csv(&phase1.state, &args.out.join("phase1_trace.csv"))?;

    let q_star = if args.no_round {
        phase1.state.q.clone()
    } else {
        let out = rounding::lp_round(&pre, &phase1.state.q, &Default::default())?;
        rounding::export_rounding_csv(&out, &args.out.join("phase2_trace.csv"))?;
        out.q
    };

    match truth.as_ref() {
        Some(t) => {
            let result =
                mcsbd::recover::score_recovery(t, &pre, &q_star, mcsbd::recover::DEFAULT_SUCCESS_THRESHOLD)?;
            result.save(&args.out)?;
            println!(
                "rho_acc={:.6} shift_dist={:.3e} success={}",
                result.rho_acc, result.shift_dist, result.success
            );
        }
        None => {
            let (a_star, x_star) = mcsbd::recover::reconstruct(&pre, &q_star)?;
            io::save_channels_bin(&args.out.join("a_star.bin"), &[a_star])?;
            io::save_channels_bin(&args.out.join("x_star.bin"), &x_star)?;
            println!("wrote reconstruction (no ground truth: metrics skipped)");
        }
    }
    Ok(())
}

fn solve_2d(args: Solve2dArgs) -> Result<(), McsbdError> {
    let loss = parse_loss(&args.loss, args.mu)?;
    let is_csv = args.input.extension().is_some_and(|e| e == "csv");
    let frames = if is_csv {
        vec![io::load_grid_csv(&args.input)?]
    } else {
        io::load_frames_bin(&args.input)?
    };
    let stack = solver2d::FrameStack::new(frames)?;
    let pre = solver2d::precondition2d(&stack, args.theta)?;

    let (n1, n2) = pre.shape();
    let cfg = solver2d::Rgd2dConfig {
        max_iters: args.phase1_iters,
        ..solver2d::Rgd2dConfig::new(loss, solver2d::Init2d::RandomSphere { seed: args.seed })
    };
    let phase1 = solver2d::rgd2d_solve(&pre, &cfg, None)?;
    let z_star = if args.no_round {
        phase1.state.z.clone()
    } else {
        solver2d::lp_round2d(&pre, &phase1.state.z, &Default::default())?.z
    };

    let (a_star, x_star) = solver2d::reconstruct2d(&pre, &z_star)?;
    std::fs::create_dir_all(&args.out).map_err(|e| McsbdError::io(&args.out, e))?;
    io::save_frames_bin(&args.out.join("a_star.bin"), &[a_star])?;
    io::save_frames_bin(&args.out.join("x_star.bin"), &x_star)?;
    println!("wrote 2D reconstruction for {n1}x{n2} frames");
    Ok(())
}
