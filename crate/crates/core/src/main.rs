use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tsrelay::instance::{read_instance, write_design, write_instance};
use tsrelay::model::{harvest_constraint_slack, naf_design, rate_matrix_form};
use tsrelay::oracle::verify_design;
use tsrelay::sim::{dbm_to_linear, run_sweep, verify_suite, SweepConfig};
use tsrelay::{
    eigen_profile, generate_channel, solve_fixed_source, solve_joint, Error, FadingModel,
    JointOptions, NoiseDim, Scheme, SystemParams,
};

#[derive(Parser)]
#[command(name = "tsrelay", version, about = "Time-switching energy-harvesting MIMO relay designs")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a Rician channel instance.
    Gen(GenArgs),
    /// Design the relay for one instance and print its rate.
    Solve(SolveArgs),
    /// Monte Carlo sweep over P0 and antenna count, written as CSV.
    Sweep(SweepArgs),
    /// Randomized self-check of solver properties.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Antenna count used for M, L and N unless overridden.
    #[arg(long, default_value_t = 4)]
    antennas: usize,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Streams; defaults to min(M, L, N).
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    rician_k: f64,
    #[arg(long, default_value_t = 0.1)]
    scatter_var: f64,
    /// Use the data channel H1 during the energy phase too.
    #[arg(long)]
    reuse_energy_channel: bool,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value = "joint")]
    scheme: Scheme,
    /// Source power in the information phase.
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    /// Source power in the energy phase, in dBm (0 dBm is P0 = 1).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    p0_dbm: f64,
    #[arg(long, default_value_t = 0.8)]
    eta: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma1_sq: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma2_sq: f64,
    /// Noise dimension in the harvested power: D (streams) or L (relay antennas).
    #[arg(long, default_value = "D")]
    harvest_noise_dim: NoiseDim,
    /// Write the designed F, Q and energy covariance here.
    #[arg(long)]
    design_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// `key = value` configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write per-point means here.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 60)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn fail(msg: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn gen(args: GenArgs) -> Result<(), Failure> {
    let m = args.m.unwrap_or(args.antennas);
    let l = args.l.unwrap_or(args.antennas);
    let n = args.n.unwrap_or(args.antennas);
    let d = args.d.unwrap_or(m.min(l).min(n));
    let params = SystemParams::with_dims(m, l, n, d);
    let fading = FadingModel {
        rician_k: args.rician_k,
        scatter_var: args.scatter_var,
        reuse_energy_channel: args.reuse_energy_channel,
    };
    let ch = generate_channel(&params, &fading, args.seed)?;
    let text = write_instance(&ch, d);
    match args.out {
        Some(path) => write(&path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn solve(args: SolveArgs) -> Result<(), Failure> {
    let (ch, dims) = read_instance(&read(&args.instance)?)?;
    let mut params = SystemParams::with_dims(dims.m, dims.l, dims.n, dims.d);
    params.p = args.p;
    params.p0 = dbm_to_linear(args.p0_dbm);
    params.eta = args.eta;
    params.sigma1_sq = args.sigma1_sq;
    params.sigma2_sq = args.sigma2_sq;
    params.harvest_noise_dim = args.harvest_noise_dim;
    params.validate()?;
    let profile = eigen_profile(&ch, &params)?;

    let (design, iterations, converged) = match args.scheme {
        Scheme::FixedSource => {
            let (d, r) = solve_fixed_source(&profile, &params)?;
            (d, r.iterations, r.converged)
        }
        Scheme::Joint => {
            let (d, r) = solve_joint(&profile, &params, &JointOptions::default())?;
            (d, r.iterations, r.converged)
        }
        Scheme::Naf => {
            let (_, r) = solve_fixed_source(&profile, &params)?;
            (naf_design(&ch, &params, r.epsilon)?, 0, true)
        }
    };

    let report = verify_design(&ch, &design, &params);
    if !report.passed() {
        for c in &report.checks {
            eprintln!("{:<16} {:?} {:.3e}", c.name, c.status, c.value);
        }
        return Err(fail("design failed verification"));
    }
    let rate = rate_matrix_form(&ch, &design, &params)?;
    println!("scheme     {}", design.scheme);
    println!("rate_bits  {rate:.9e}");
    println!("epsilon    {:.9e}", design.epsilon);
    println!("iterations {iterations}");
    println!("converged  {converged}");
    println!("slack      {:.9e}", harvest_constraint_slack(&ch, &design, &params));
    if let Some(path) = args.design_out {
        write(&path, &write_design(&design))?;
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => SweepConfig::parse(&read(path)?)?,
        None => SweepConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| fail(e.to_string()))?;
    let table = pool.install(|| run_sweep(&cfg))?;
    write(&args.out, &table.to_csv())?;
    if let Some(path) = args.summary {
        write(&path, &table.means_csv())?;
    }
    let failed = table.rows.iter().filter(|r| !r.rate_bits.is_finite()).count();
    eprintln!("{} rows written, {failed} failed", table.rows.len());
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<(), Failure> {
    let results = verify_suite(args.trials, args.seed)?;
    let mut ok = true;
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("{tag} {:<28} worst {:.3e} limit {:.1e}", r.name, r.worst, r.limit);
        ok &= r.passed;
    }
    if ok {
        Ok(())
    } else {
        Err(fail("some properties failed"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Gen(a) => gen(a),
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
