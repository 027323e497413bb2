//! `oic`: command-line front end.
//!
//! Exit status is 0 on success, 1 when a solver does not converge or the
//! problem is infeasible, and 2 on bad input.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use oic_core::channel::{reduce, DEFAULT_RANK_TOL};
use oic_core::io::{fmt_g9, read_channel_file, write_cdf, write_samples, write_table};
use oic_core::maxent::{
    self, ec_spec, gamma_b, gamma_e, gamma_full_rank, sample_density, solve_gamma_star, Mode, MomentSpec, SolveStatus,
};
use oic_core::rank_one::{constraints, gamma_rank_one, siso_spec};
use oic_core::scenarios::{ensemble_run, ChannelModel, EnsembleConfig, Metric, ReceiverKind};
use oic_core::{low_snr, zonotope, ChannelMatrix, Error, IntensityProfile, MaxEntSolution, QuadratureConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "oic", version, about = "Capacity quantities of MIMO optical intensity channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// SVD reduction: rank, singular values, sign-fixed right-singular vectors.
    Reduce {
        #[command(flatten)]
        input: ChannelArgs,
        /// Print the full reduction as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Parallelepiped tiling of the admissible output region, as JSON.
    Decompose {
        #[command(flatten)]
        input: ChannelArgs,
    },
    /// Largest output entropy under equal (EC) or bounded (BC) cost.
    Gamma {
        #[command(flatten)]
        input: ChannelArgs,
        #[command(flatten)]
        solve: SolveArgs,
        /// Noise levels at which to print the entropy-power lower bound.
        #[arg(long, value_delimiter = ',')]
        sigma: Vec<f64>,
    },
    /// Low-SNR slope.
    Slope {
        #[command(flatten)]
        input: ChannelArgs,
        #[arg(long, default_value = "ec")]
        mode: Mode,
    },
    /// Channel ensemble statistics as CSV tables.
    Ensemble(EnsembleArgs),
    /// Maximum-entropy output density as CSV `(s, p)` rows.
    Density {
        #[command(flatten)]
        input: ChannelArgs,
        #[command(flatten)]
        solve: SolveArgs,
        /// Grid points in one dimension, random draws otherwise.
        #[arg(long, default_value_t = 401)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ChannelArgs {
    /// JSON `{"h": [[..]], "alpha": [..]}` or headerless CSV matrix.
    #[arg(long)]
    channel: PathBuf,
    /// Comma-separated intensity profile; overrides the one in the channel file.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alpha: Option<Vec<f64>>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, default_value = "ec")]
    mode: Mode,
    /// Gauss-Legendre nodes per panel in 1-D and per axis in 2-D.
    #[arg(long)]
    quad_nodes: Option<usize>,
}

impl SolveArgs {
    fn quadrature(&self) -> QuadratureConfig {
        let mut cfg = QuadratureConfig::default();
        if let Some(n) = self.quad_nodes {
            cfg.nodes_1d = n;
            cfg.nodes_2d = n;
        }
        cfg
    }
}

#[derive(Args)]
struct EnsembleArgs {
    /// JSON ensemble configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Indoor receiver, SR or MDR.
    #[arg(long, conflicts_with = "lognormal")]
    receiver: Option<ReceiverKind>,
    /// Lognormal channel dimensions `n_r n_t`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    lognormal: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Energy threshold of the ε-rank.
    #[arg(long)]
    eps: Option<f64>,
    /// Comma-separated metric names.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<Metric>>,
    #[arg(long)]
    quad_nodes: Option<usize>,
    /// Output directory for `samples.csv` and `cdf_<metric>.csv`.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Input(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Infeasible(_) => Failure::Solver(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("OIC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Reduce { input, json } => cmd_reduce(&input, json),
        Command::Decompose { input } => cmd_decompose(&input),
        Command::Gamma { input, solve, sigma } => cmd_gamma(&input, &solve, &sigma),
        Command::Slope { input, mode } => cmd_slope(&input, mode),
        Command::Ensemble(args) => cmd_ensemble(&args),
        Command::Density { input, solve, samples, seed, out } => {
            cmd_density(&input, &solve, samples, seed, out.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Solver(msg)) => {
            eprintln!("oic: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("oic: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load(input: &ChannelArgs) -> std::result::Result<(ChannelMatrix, Option<IntensityProfile>), Failure> {
    let file = read_channel_file(&input.channel)?;
    let h = ChannelMatrix::from_rows(&file.h)?;
    let alpha = match input.alpha.clone().or(file.alpha) {
        Some(a) => {
            if a.len() != h.n_t() {
                return Err(Error::DimensionMismatch { expected: h.n_t(), found: a.len() }.into());
            }
            Some(IntensityProfile::new(a)?)
        }
        None => None,
    };
    Ok((h, alpha))
}

fn require_alpha(alpha: Option<IntensityProfile>) -> std::result::Result<IntensityProfile, Failure> {
    alpha.ok_or_else(|| Failure::Input("an intensity profile is required (--alpha or \"alpha\" in the file)".into()))
}

fn vec_str<'a>(v: impl IntoIterator<Item = &'a f64>) -> String {
    let parts: Vec<String> = v.into_iter().map(|&x| fmt_g9(x)).collect();
    format!("[{}]", parts.join(", "))
}

fn cmd_reduce(input: &ChannelArgs, json: bool) -> CmdResult {
    let (h, _) = load(input)?;
    let rc = reduce(&h, DEFAULT_RANK_TOL)?;
    if json {
        let value = serde_json::json!({
            "rank": rc.r,
            "sigma": rc.sigma.as_slice(),
            "all_singular_values": rc.all_singular_values.as_slice(),
            "v1": (0..rc.r).map(|k| rc.v1.column(k).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "v_tail": rc.v_tail.as_ref().map(|v| v.as_slice().to_vec()),
            "h_tilde": (0..rc.r).map(|i| rc.h_tilde.row(i).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
        });
        println!("{}", serde_json::to_string_pretty(&value).map_err(|e| Failure::Input(e.to_string()))?);
        return Ok(());
    }
    println!("n_r: {}", rc.n_r());
    println!("n_t: {}", rc.n_t());
    println!("rank: {}", rc.r);
    println!("sigma: {}", vec_str(rc.sigma.iter()));
    for k in 0..rc.r {
        println!("v{}: {}", k + 1, vec_str(rc.v1.column(k).iter()));
    }
    match &rc.v_tail {
        Some(v) => println!("v_tail: {}", vec_str(v.iter())),
        None => println!("v_tail: none"),
    }
    Ok(())
}

fn cmd_decompose(input: &ChannelArgs) -> CmdResult {
    let (h, _) = load(input)?;
    let rc = reduce(&h, DEFAULT_RANK_TOL)?;
    let zd = zonotope::decompose(&rc)?;
    println!("{}", zd.to_json()?);
    Ok(())
}

/// Picks the solver by rank: full rank, corank one, or rank one.
fn solve_gamma(
    h: &ChannelMatrix,
    alpha: &IntensityProfile,
    mode: Mode,
    cfg: &QuadratureConfig,
) -> std::result::Result<(MaxEntSolution, &'static str, usize), Failure> {
    let rc = reduce(h, DEFAULT_RANK_TOL)?;
    let (sol, path) = if rc.r == rc.n_t() {
        (gamma_full_rank(&rc, alpha, mode)?, "full-rank")
    } else if rc.r + 1 == rc.n_t() {
        let sol = match mode {
            Mode::Ec => gamma_e(&rc, alpha, cfg)?,
            Mode::Bc => gamma_b(&rc, alpha, cfg)?,
        };
        (sol, "zonotope")
    } else if rc.r == 1 {
        (gamma_rank_one(&rc, alpha, mode, cfg)?, "rank-one")
    } else {
        return Err(Failure::Input(format!(
            "rank {} with {} transmitters is not supported; need rank n_t, n_t - 1 or 1",
            rc.r,
            rc.n_t()
        )));
    };
    Ok((sol, path, rc.r))
}

fn status_name(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Converged => "converged",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::MaxIter => "max-iter",
        SolveStatus::Degenerate => "degenerate",
    }
}

fn cmd_gamma(input: &ChannelArgs, solve: &SolveArgs, sigma: &[f64]) -> CmdResult {
    let (h, alpha) = load(input)?;
    let alpha = require_alpha(alpha)?;
    if sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Failure::Input("noise levels must be positive".into()));
    }
    let cfg = solve.quadrature();
    let (sol, path, r) = solve_gamma(&h, &alpha, solve.mode, &cfg)?;
    println!("mode: {}", solve.mode);
    println!("path: {path}");
    println!("gamma: {}", fmt_g9(sol.gamma));
    println!("status: {}", status_name(sol.status));
    println!("nu: {}", fmt_g9(sol.dual.nu));
    println!("u: {}", vec_str(&sol.dual.u));
    println!("lambda: {}", vec_str(&sol.dual.lambda));
    if let Some(x) = &sol.allocation {
        println!("allocation: {}", vec_str(x));
    }
    println!("grad_norm: {}", fmt_g9(sol.grad_norm));
    println!("iterations: {}", sol.iterations);
    println!("quadrature_nodes: {}", sol.n_quad);
    for &s in sigma {
        println!("lower_bound(sigma={}): {}", fmt_g9(s), fmt_g9(maxent::epi_lower_bound(sol.gamma, r, s)));
    }
    match sol.status {
        SolveStatus::Converged | SolveStatus::Degenerate => Ok(()),
        other => Err(Failure::Solver(format!("solver stopped with status {}", status_name(other)))),
    }
}

fn cmd_slope(input: &ChannelArgs, mode: Mode) -> CmdResult {
    let (h, alpha) = load(input)?;
    let alpha = require_alpha(alpha)?;
    let g = h.gram();
    let a = alpha.alpha();
    let ec = 0.5 * low_snr::v_max_ec(&g, a);
    println!("mode: {mode}");
    match mode {
        Mode::Ec => {
            println!("slope: {}", fmt_g9(ec));
            println!("allocation: {}", vec_str(a));
        }
        Mode::Bc => {
            let opt = low_snr::solve_bc_allocation(&g, a)?;
            let (beta, ladder) = low_snr::ladder_best_beta(&g, a)?;
            println!("slope: {}", fmt_g9(0.5 * opt.value));
            println!("allocation: {}", vec_str(&opt.x));
            println!("slope_at_alpha: {}", fmt_g9(ec));
            println!("ladder_beta: {}", fmt_g9(beta));
            println!("ladder_slope: {}", fmt_g9(0.5 * ladder));
            if opt.value > 0.0 {
                println!("ratio_rl: {}", fmt_g9(ladder / opt.value));
            }
        }
    }
    Ok(())
}

fn cmd_ensemble(args: &EnsembleArgs) -> CmdResult {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<EnsembleConfig>(&text).map_err(|e| Failure::Input(e.to_string()))?
        }
        None => {
            let model = match (&args.receiver, &args.lognormal) {
                (Some(kind), None) => ChannelModel::Indoor { receiver: *kind },
                (None, Some(d)) => ChannelModel::Lognormal { n_r: d[0], n_t: d[1] },
                _ => return Err(Failure::Input("give --config, --receiver or --lognormal".into())),
            };
            let alpha = args.alpha.clone().ok_or_else(|| Failure::Input("--alpha is required".into()))?;
            EnsembleConfig::new(model, 1000, alpha, Metric::ALL.to_vec(), 0)
        }
    };
    if let Some(a) = &args.alpha {
        cfg.alpha = a.clone();
    }
    if let Some(n) = args.samples {
        cfg.samples = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.eps {
        cfg.eps = e;
    }
    if let Some(m) = &args.metrics {
        cfg.metrics = m.clone();
    }
    if let Some(n) = args.quad_nodes {
        cfg.quadrature.nodes_1d = n;
        cfg.quadrature.nodes_2d = n;
    }
    let result = ensemble_run(&cfg)?;
    fs::create_dir_all(&args.out)?;
    write_samples(fs::File::create(args.out.join("samples.csv"))?, &result, &cfg.metrics)?;
    for &m in &cfg.metrics {
        write_cdf(fs::File::create(args.out.join(format!("cdf_{}.csv", m.name())))?, &result, m)?;
    }
    let zero = result.records.iter().filter(|r| r.zero).count();
    let failed = result.records.iter().filter(|r| !r.failures.is_empty()).count();
    println!("samples: {}", result.records.len());
    println!("zero_channels: {zero}");
    println!("failures: {failed}");
    Ok(())
}

/// The moment problem behind `γ` and the factor from its variable to the reduced output.
fn density_spec(
    h: &ChannelMatrix,
    alpha: &IntensityProfile,
    mode: Mode,
    cfg: &QuadratureConfig,
) -> std::result::Result<(MomentSpec, f64), Failure> {
    let rc = reduce(h, DEFAULT_RANK_TOL)?;
    if rc.r + 1 == rc.n_t() {
        let x = match mode {
            Mode::Ec => alpha.alpha().to_vec(),
            Mode::Bc => gamma_b(&rc, alpha, cfg)?.allocation.unwrap_or_else(|| alpha.alpha().to_vec()),
        };
        Ok((ec_spec(&rc, &x)?, 1.0))
    } else if rc.r == 1 {
        let cs = constraints(&rc, alpha, mode)?;
        let spec = siso_spec(&cs)?.ok_or_else(|| Failure::Solver("the input law is a point mass".into()))?;
        Ok((spec, cs.gain))
    } else {
        Err(Failure::Input("density needs rank n_t - 1 or rank one".into()))
    }
}

fn cmd_density(input: &ChannelArgs, solve: &SolveArgs, samples: usize, seed: u64, out: Option<&Path>) -> CmdResult {
    let (h, alpha) = load(input)?;
    let alpha = require_alpha(alpha)?;
    let cfg = solve.quadrature();
    let (spec, gain) = density_spec(&h, &alpha, solve.mode, &cfg)?;
    let sol = solve_gamma_star(&spec, &cfg)?;
    if !sol.is_converged() || !sol.gamma.is_finite() {
        return Err(Failure::Solver(format!("solver stopped with status {}", status_name(sol.status))));
    }
    let dim = spec.dim();
    let mut rows = Vec::new();
    if dim == 1 {
        let (lo, hi) = match &spec.support {
            maxent::Support::Interval { lo, hi } => (*lo, *hi),
            maxent::Support::Zonotope(zd) => {
                let ends: Vec<f64> = zd.cells.iter().flat_map(|c| [c.point(&DVector::zeros(1))[0], c.point(&DVector::from_element(1, 1.0))[0]]).collect();
                (ends.iter().copied().fold(f64::INFINITY, f64::min), ends.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            }
        };
        let n = samples.max(2);
        for k in 0..n {
            let s = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            rows.push(vec![gain * s, maxent::density_eval(&sol, &spec, &[s]) / gain]);
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in sample_density(&sol, &spec, &cfg, samples, &mut rng)? {
            let mut row: Vec<f64> = s.iter().copied().collect();
            row.push(maxent::density_eval(&sol, &spec, s.as_slice()));
            rows.push(row);
        }
    }
    let names: Vec<String> = if dim == 1 { vec!["s".into()] } else { (1..=dim).map(|i| format!("s{i}")).collect() };
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.push("p");
    match out {
        Some(path) => write_table(fs::File::create(path)?, &header, &rows)?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_table(&mut lock, &header, &rows)?;
            lock.flush()?;
        }
    }
    eprintln!("gamma: {}", fmt_g9(sol.gamma + gain.ln()));
    Ok(())
}
