use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fkea::entropy::Order;
use fkea::error::{FkeaError, Result};
use fkea::io::embeddings::{read_embeddings, Dtype};
use fkea::io::mixture::MixtureSpec;
use fkea::io::report::{write_report, Report, ReportFormat};
use fkea::kernel::{median_pairwise_distance, GaussianKernelSpec, DEFAULT_EXACT_CAP};
use fkea::modes::Ranking;
use fkea::pipeline::{self, RunConfig, ScoreOutcome, SigmaChoice};
use fkea::rff::DEFAULT_RFF_DIM;

#[derive(Parser)]
#[command(name = "fkea", version, about = "Kernel entropy diversity scores via random Fourier features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Streaming FKEA scores (VENDI per order and RKE).
    Score(ScoreArgs),
    /// Exact Gram-matrix scores, for small inputs.
    Exact(CommonArgs),
    /// Top eigen-modes and their highest-scoring samples.
    Modes(ModesArgs),
    /// Convergence (Fourier dimension) or cluster-count sweeps, as CSV.
    Sweep(SweepArgs),
    /// Generate a Gaussian mixture with planted labels.
    Gen(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Heuristic {
    Median,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RankArg {
    Raw,
    Abs,
}

#[derive(Args)]
#[group(id = "bandwidth", required = true, multiple = false)]
struct SigmaArgs {
    /// Gaussian kernel bandwidth.
    #[arg(long, group = "bandwidth")]
    sigma: Option<f64>,
    /// Derive the bandwidth from the data instead (median pairwise distance
    /// over a seeded 1,000-row subsample).
    #[arg(long, value_enum, group = "bandwidth")]
    sigma_heuristic: Option<Heuristic>,
}

impl SigmaArgs {
    fn choice(&self) -> SigmaChoice {
        match (self.sigma, self.sigma_heuristic) {
            (Some(s), _) => SigmaChoice::Value(s),
            (None, _) => SigmaChoice::MedianHeuristic,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Embedding file: canonical binary, or `.csv`.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    sigma: SigmaArgs,
    /// Fourier feature dimension 2r (even).
    #[arg(long, default_value_t = DEFAULT_RFF_DIM)]
    rff_dim: usize,
    /// Comma-separated entropy orders; `inf` for the min-entropy.
    #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,inf")]
    alphas: Vec<Order>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rows per streamed batch.
    #[arg(long, default_value_t = fkea::io::embeddings::DEFAULT_BATCH_ROWS)]
    batch_size: usize,
    /// Report path; the report goes to stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Largest n accepted by exact computations.
    #[arg(long, default_value_t = DEFAULT_EXACT_CAP)]
    exact_cap: usize,
    #[arg(long, env = "FKEA_THREADS")]
    threads: Option<usize>,
}

impl CommonArgs {
    fn config(&self) -> RunConfig {
        let mut cfg = RunConfig::new(&self.input, self.sigma.choice());
        cfg.rff_dim = self.rff_dim;
        cfg.alphas = self.alphas.clone();
        cfg.seed = self.seed;
        cfg.batch_size = self.batch_size;
        cfg.exact_cap = self.exact_cap;
        cfg
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Save the accumulator here after the pass.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a saved accumulator (the input holds only new rows).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct ModesArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 10)]
    top_t: usize,
    #[arg(long, default_value_t = 25)]
    top_k: usize,
    #[arg(long, value_enum, default_value = "raw")]
    rank_by: RankArg,
}

#[derive(Args)]
struct SweepArgs {
    /// Embedding file for a Fourier-dimension sweep.
    #[arg(long, requires = "r_list", conflicts_with = "class_list")]
    input: Option<PathBuf>,
    /// Comma-separated r values (2r = feature dimension).
    #[arg(long, value_delimiter = ',')]
    r_list: Vec<usize>,
    /// Number of basis seeds per r, starting at --seed.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Comma-separated cluster counts for a mixture sweep.
    #[arg(long, value_delimiter = ',')]
    class_list: Vec<usize>,
    #[command(flatten)]
    mixture: MixtureArgs,
    /// Bandwidth; defaults to the median heuristic when omitted.
    #[arg(long)]
    sigma: Option<f64>,
    /// Fourier feature dimension 2r for class sweeps.
    #[arg(long, default_value_t = 4_000)]
    rff_dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,inf")]
    alphas: Vec<Order>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_EXACT_CAP)]
    exact_cap: usize,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, env = "FKEA_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct MixtureArgs {
    #[arg(long, default_value_t = 200)]
    n_per_cluster: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 50.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    cluster_std: f64,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

impl MixtureArgs {
    fn spec(&self, t: usize) -> MixtureSpec {
        MixtureSpec {
            t,
            n_per_cluster: self.n_per_cluster,
            d: self.dim,
            center_separation: self.separation,
            cluster_std: self.cluster_std,
            seed: self.data_seed,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Number of clusters.
    #[arg(long)]
    t: usize,
    #[command(flatten)]
    mixture: MixtureArgs,
    #[arg(long)]
    output: PathBuf,
    /// Labels CSV; defaults to `<output>.labels.csv`.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "f64")]
    dtype: DtypeArg,
}

fn emit(report: &impl Report, output: Option<&Path>, format: ReportFormat) -> Result<()> {
    match output {
        Some(path) => write_report(report, path, format),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(report.render(format).as_bytes())
                .map_err(|e| FkeaError::io(Path::new("<stdout>"), e))
        }
    }
}

fn summarize(outcome: &ScoreOutcome, to_stdout: bool) {
    let r = &outcome.report;
    let mut lines = vec![
        format!("method: {}", serde_json::to_string(&r.method).unwrap().trim_matches('"')),
        format!("n: {}", r.provenance.n),
        format!("d: {}", r.provenance.d),
        format!("sigma: {}", r.provenance.sigma),
    ];
    for (alpha, score) in &r.scores {
        lines.push(format!("vendi[{alpha}]: {score}"));
    }
    lines.push(format!("rke: {}", r.rke));
    if let Some(b) = &r.bound {
        lines.push(format!("bound(delta={}): {}", b.delta, b.epsilon));
    }
    let t = &outcome.timings;
    lines.push(format!(
        "time_s: bandwidth={:.3} accumulate={:.3} eigensolve={:.3} total={:.3}",
        t.bandwidth.as_secs_f64(),
        t.accumulate.as_secs_f64(),
        t.eigensolve.as_secs_f64(),
        t.total.as_secs_f64()
    ));
    if let Some(kib) = pipeline::peak_rss_kib() {
        lines.push(format!("peak_rss_kib: {kib}"));
    }
    for w in &r.warnings {
        lines.push(format!("warning: {w}"));
    }
    let text = lines.join("\n");
    if to_stdout {
        println!("{text}");
    } else {
        eprintln!("{text}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Score(args) => {
            let mut cfg = args.common.config();
            cfg.checkpoint = args.checkpoint;
            cfg.resume = args.resume;
            let outcome = pipeline::with_threads(args.common.threads, || pipeline::cmd_score(&cfg))??;
            let out = args.common.output.as_deref();
            emit(&outcome.report, out, args.common.format.into())?;
            summarize(&outcome, out.is_some());
        }
        Command::Exact(args) => {
            let cfg = args.config();
            let outcome = pipeline::with_threads(args.threads, || pipeline::cmd_exact(&cfg))??;
            let out = args.output.as_deref();
            emit(&outcome.report, out, args.format.into())?;
            summarize(&outcome, out.is_some());
        }
        Command::Modes(args) => {
            let mut cfg = args.common.config();
            cfg.top_t = args.top_t;
            cfg.top_k = args.top_k;
            cfg.ranking = match args.rank_by {
                RankArg::Raw => Ranking::Raw,
                RankArg::Abs => Ranking::Abs,
            };
            let report = pipeline::with_threads(args.common.threads, || pipeline::cmd_modes(&cfg))??;
            emit(&report, args.common.output.as_deref(), args.common.format.into())?;
        }
        Command::Sweep(args) => {
            let rows = pipeline::with_threads(args.threads, || sweep(&args))??;
            let text = pipeline::sweep_csv(&rows);
            match &args.output {
                Some(path) => std::fs::write(path, text).map_err(|e| FkeaError::io(path, e))?,
                None => print!("{text}"),
            }
        }
        Command::Gen(args) => {
            let labels = args.labels.clone().unwrap_or_else(|| {
                let mut name = args.output.clone().into_os_string();
                name.push(".labels.csv");
                PathBuf::from(name)
            });
            let dtype = match args.dtype {
                DtypeArg::F32 => Dtype::F32,
                DtypeArg::F64 => Dtype::F64,
            };
            let n = pipeline::cmd_gen(&args.mixture.spec(args.t), &args.output, &labels, dtype)?;
            println!("wrote {n} rows to {} and labels to {}", args.output.display(), labels.display());
        }
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<Vec<pipeline::SweepRow>> {
    let seeds: Vec<u64> = (0..args.seeds).map(|i| args.seed + i).collect();
    match (&args.input, args.class_list.is_empty()) {
        (Some(input), _) => {
            let e = read_embeddings(input)?;
            let sigma = match args.sigma {
                Some(s) => s,
                None => median_pairwise_distance(&e)?,
            };
            let spec = GaussianKernelSpec::new(sigma)?;
            pipeline::sweep_r(&e, &spec, &args.r_list, &seeds, &args.alphas, args.exact_cap)
        }
        (None, false) => {
            let sigma = args.sigma.ok_or_else(|| {
                FkeaError::Input("--sigma is required for class sweeps".into())
            })?;
            if args.rff_dim < 2 || args.rff_dim % 2 != 0 {
                return Err(FkeaError::Input(format!(
                    "Fourier feature dimension must be even and >= 2, got {}",
                    args.rff_dim
                )));
            }
            pipeline::sweep_classes(
                &args.mixture.spec(1),
                &args.class_list,
                &GaussianKernelSpec::new(sigma)?,
                args.rff_dim / 2,
                args.seed,
                &args.alphas,
                args.exact_cap,
            )
        }
        (None, true) => Err(FkeaError::Input(
            "sweep needs either --input with --r-list, or --class-list".into(),
        )),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
