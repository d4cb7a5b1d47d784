//! `stablelab`: batch front-end for counterexample tables, closure checks and manifold solves.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use stablelab_core::bilinear::{ce2_block, KernelSpec};
use stablelab_core::counterexamples::{alpha_norm_sq_partial, hadamard_family};
use stablelab_core::manifold::decay_fit;
use stablelab_core::{
    ce2_s_values, growth_ratio, perron_pair, solve, BilinearMap, Error, GridFunction, ModelSpec, RotationFamily,
    SearchBudget, SolveRequest, SolverConfig, SpectralModel,
};

use stablelab_cli::report::*;

#[derive(Parser, Debug)]
#[command(name = "stablelab", version, about = "Reverse-norm stable manifolds on a spectral truncation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Write the report here instead of stdout (atomically).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Seed for randomized subroutines.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Growth of |M_j(θ)| along the Perron test vectors.
    Ce1 {
        #[arg(long, default_value_t = std::f64::consts::FRAC_PI_6)]
        theta: f64,
        #[arg(long, default_value_t = 12)]
        j_max: usize,
    },
    /// Closed-form sup values of the Hadamard family, with lattice verification on small blocks.
    Ce2 {
        #[arg(long, default_value_t = 10)]
        j_max: usize,
        /// Verify blocks up to this level by exhaustive lattice search.
        #[arg(long, default_value_t = 4)]
        lattice_max: usize,
    },
    /// Hilbert–Schmidt norm and certified 𝒮(α) bracket of a kernel.
    Check {
        #[arg(long)]
        kernel: PathBuf,
        /// Model JSON; defaults to unit weights and γ = 1.
        #[arg(long)]
        model: Option<PathBuf>,
        /// JSON array α; defaults to all ones.
        #[arg(long)]
        alpha: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        exhaustive_max: usize,
        #[arg(long, default_value_t = 512)]
        samples: usize,
    },
    /// Solve for the stable-manifold point of a request file.
    Solve {
        #[arg(long)]
        request: PathBuf,
    },
    /// Fit an exponential decay rate to a trajectory CSV.
    Decay {
        #[arg(long)]
        trajectory: PathBuf,
        /// `start,end`
        #[arg(long, value_delimiter = ',', required = true)]
        window: Vec<f64>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let diverged = err
                .chain()
                .filter_map(|e| e.downcast_ref::<Error>())
                .any(|e| matches!(e, Error::Diverged { .. } | Error::NoConvergence { .. }));
            ExitCode::from(if diverged { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    let common = &cli.common;
    let bytes = match cli.command {
        Command::Ce1 { theta, j_max } => ce1(common, theta, j_max)?,
        Command::Ce2 { j_max, lattice_max } => ce2(common, j_max, lattice_max)?,
        Command::Check { kernel, model, alpha, exhaustive_max, samples } => {
            let budget = SearchBudget { exhaustive_max, samples, seed: common.seed };
            check(common, &kernel, model.as_deref(), alpha.as_deref(), budget)?
        }
        Command::Solve { request } => solve_cmd(common, &request)?,
        Command::Decay { trajectory, window, model } => decay(common, &trajectory, &window, model.as_deref())?,
    };
    emit(common.output.as_deref(), &bytes)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_model(path: Option<&Path>, n: usize) -> anyhow::Result<SpectralModel> {
    Ok(match path {
        Some(p) => read_json::<ModelSpec>(p)?.build()?,
        None => SpectralModel::uniform(n, 1.0)?,
    })
}

/// Stdout, or a temp file in the target directory renamed into place.
fn emit(output: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match output {
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
        }
        Some(path) => {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
            tmp.write_all(bytes)?;
            tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

fn json<C: serde::Serialize, R: serde::Serialize>(command: &str, seed: u64, config: C, result: R) -> anyhow::Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(&Envelope::new(command, seed, config, result))?;
    v.push(b'\n');
    Ok(v)
}

fn csv_rows<T: serde::Serialize>(rows: &[T]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

fn ce1(common: &Common, theta: f64, j_max: usize) -> anyhow::Result<Vec<u8>> {
    let family = RotationFamily::new(theta, j_max)?;
    let pair = perron_pair(theta)?;
    let base = pair.absolute_rayleigh();
    let rows = (1..=j_max)
        .map(|j| {
            let ratio = growth_ratio(&family, &pair, j)?;
            let rho_pow = pair.rho.powi(j as i32);
            Ok(Ce1Row { j, ratio, rho_pow, closed_form: base.powi(j as i32), exceeds: ratio >= rho_pow })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    match common.format {
        Format::Csv => csv_rows(&rows),
        Format::Json => json(
            "ce1",
            common.seed,
            Ce1Config { theta, j_max },
            Ce1Result { rho: pair.rho, q: pair.q, rayleigh: base, rows },
        ),
    }
}

fn ce2(common: &Common, j_max: usize, lattice_max: usize) -> anyhow::Result<Vec<u8>> {
    if j_max == 0 {
        bail!("--j-max must be at least 1");
    }
    if lattice_max > 4 {
        bail!("--lattice-max {lattice_max} exceeds 4 (block 5 has 32 coordinates)");
    }
    let budget = SearchBudget { seed: common.seed, ..SearchBudget::default() };
    let mut cumulative = 0.0;
    let mut rows = Vec::with_capacity(j_max);
    for j in 1..=j_max {
        let v = ce2_s_values(j);
        cumulative += v.norm_sq;
        let (lattice_first, lattice_rest) = if j <= lattice_max {
            let (_, d) = ce2_block(j)?;
            let b = d.s_bracket(&hadamard_family(j)?.alpha, &budget)?;
            let rest = b.lower[1..].iter().fold(0.0f64, |m, x| m.max(*x));
            (Some(b.lower[0]), Some(rest))
        } else {
            (None, None)
        };
        rows.push(Ce2Row {
            j,
            s_first: v.s_first,
            s_rest: v.s_rest,
            norm_sq: v.norm_sq,
            cumulative,
            hs_norm_sq: (1u64 << j) as f64,
            lattice_first,
            lattice_rest,
        });
    }
    match common.format {
        Format::Csv => csv_rows(&rows),
        Format::Json => json(
            "ce2",
            common.seed,
            Ce2Config { j_max, lattice_max },
            Ce2Result { alpha_norm_sq: alpha_norm_sq_partial(j_max), s_norm_sq: cumulative, rows },
        ),
    }
}

fn check(
    common: &Common,
    kernel_path: &Path,
    model_path: Option<&Path>,
    alpha_path: Option<&Path>,
    budget: SearchBudget,
) -> anyhow::Result<Vec<u8>> {
    let spec: KernelSpec = read_json(kernel_path)?;
    let kernel = spec.clone().into_kernel()?;
    let n = kernel.natural_dimension().context("kernel has no terms")?;
    let model = load_model(model_path, n)?;
    let d = BilinearMap::new(&model, kernel)?;
    let alpha: Vec<f64> = match alpha_path {
        Some(p) => read_json(p)?,
        None => vec![1.0; model.len()],
    };
    let bracket = d.s_bracket(&alpha, &budget)?;
    let hs = d.hs_bound_from_bracket(&model, &alpha, &bracket)?;
    let rows: Vec<CheckRow> = (0..model.len())
        .map(|l| CheckRow {
            lambda: l,
            lower: bracket.lower[l],
            upper: bracket.upper[l],
            exhaustive: bracket.exhaustive[l],
            hs_bound: hs.rows[l].bound,
        })
        .collect();
    match common.format {
        Format::Csv => csv_rows(&rows),
        Format::Json => json(
            "check",
            common.seed,
            CheckConfig { model: model.to_spec(), kernel: spec, alpha: alpha.clone(), budget },
            CheckResult {
                hs_norm_sq: d.hs_norm_sq(),
                lower_norm: hs.lower_norm,
                upper_norm: model.norm(&bracket.upper)?,
                hs_total_bound: hs.total_bound,
                violations: hs.violations,
                rows,
                witnesses: bracket.witnesses.into_iter().map(|w| w.into_inner()).collect(),
            },
        ),
    }
}

fn solve_cmd(common: &Common, path: &Path) -> anyhow::Result<Vec<u8>> {
    let req: SolveRequest = read_json(path)?;
    let model = req.model.build()?;
    let d = BilinearMap::from_spec(&model, req.kernel.clone())?;
    let cfg = SolverConfig::resolve(&model, &d, &req.options())?;
    let report = solve(&model, &d, &req.h, &cfg)?;
    match common.format {
        Format::Csv => {
            let mut buf = Vec::new();
            report.u.write_csv(&mut buf)?;
            Ok(buf)
        }
        Format::Json => json(
            "solve",
            common.seed,
            SolveConfig::new(&req, &cfg),
            report.summary(),
        ),
    }
}

fn decay(common: &Common, path: &Path, window: &[f64], model_path: Option<&Path>) -> anyhow::Result<Vec<u8>> {
    let [start, end] = window else { bail!("--window takes two values, start,end") };
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let u = GridFunction::read_csv(file).with_context(|| format!("parsing {}", path.display()))?;
    let model = load_model(model_path, u.n_modes())?;
    let fitted_beta = decay_fit(&model, &u, (*start, *end))?;
    let result = DecayResult { window_start: *start, window_end: *end, fitted_beta, nodes: u.n_points() };
    match common.format {
        Format::Csv => csv_rows(&[result]),
        Format::Json => json(
            "decay",
            common.seed,
            DecayConfig { trajectory: path.display().to_string(), model: model.to_spec() },
            result,
        ),
    }
}
