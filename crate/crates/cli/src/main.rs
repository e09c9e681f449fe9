//! `demg`: generate data, compute ground truth, build, benchmark and inspect
//! δ-EMG indexes. Every setting comes from flags; randomness from `--seed`.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use demg::build_approx::DEFAULT_SEED;
use demg::build_exact::EXACT_BUILD_GUARD;
use demg::dataset::{read_fvecs, read_ivecs, write_fvecs, write_fvecs_rows, write_ivecs};
use demg::eval::{ground_truth, run_benchmark_detailed, BenchmarkRow};
use demg::graph::{degree_stats, reachable_set};
use demg::quantizer::DEFAULT_BATCH_WIDTH;
use demg::{
    audit_construction, build_approx, build_exact, build_quantized, gen_synthetic, Bootstrap, BuildParams,
    Distribution, GroundTruth, Index,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "demg", version, about = "δ-EMG approximate nearest-neighbor index tool")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as fvecs.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        /// uniform | gaussian:<clusters> | latent:<clusters>:<latent dim>
        #[arg(long, default_value = "uniform")]
        dist: DistArg,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Brute-force top-k ids (ivecs) and distances (`<out>.dist.fvecs`).
    Gt {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an index file.
    Build(BuildArgs),
    /// Run the (k, α) sweep over a query set.
    Bench {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Ground-truth ids (ivecs).
        #[arg(long)]
        gt: PathBuf,
        /// Comma-separated result sizes.
        #[arg(long, default_value = "10", value_delimiter = ',')]
        k: Vec<usize>,
        #[arg(long, default_value = "1,1.2,1.5,2,2.5,3,4", value_delimiter = ',')]
        alpha_sweep: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Timing repetitions per setting.
        #[arg(long, default_value_t = demg::eval::TIMING_REPS)]
        reps: usize,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print degree distribution, reachability and build metadata as JSON.
    Stats {
        #[arg(long)]
        index: PathBuf,
    },
}

#[derive(clap::Args)]
struct BuildArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Approx)]
    mode: Mode,
    /// Pruning δ. Exact mode defaults to 0.05; approximate modes use the
    /// adaptive rule unless this is given.
    #[arg(long)]
    delta: Option<f64>,
    /// Neighborhood scale for the adaptive rule (defaults to M).
    #[arg(long)]
    t: Option<usize>,
    #[arg(long = "M", default_value_t = 64)]
    m: usize,
    #[arg(long = "L", default_value_t = 1000)]
    l: usize,
    #[arg(long, default_value_t = 3)]
    iters: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = BootstrapArg::Knn)]
    bootstrap: BootstrapArg,
    #[arg(long, default_value_t = DEFAULT_BATCH_WIDTH)]
    batch_width: usize,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Exact mode: check every non-edge against the construction rule.
    #[arg(long)]
    audit: bool,
    /// Exact mode: allow more points than the desk-scale guard.
    #[arg(long)]
    allow_large: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Approx,
    Quantized,
}

#[derive(Clone, Copy, ValueEnum)]
enum BootstrapArg {
    Knn,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy)]
struct DistArg(Distribution);

impl FromStr for DistArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.parse::<usize>().map_err(|_| format!("bad count '{p}' in distribution '{s}'"));
        let dist = match parts.as_slice() {
            ["uniform"] => Distribution::UniformCube,
            ["gaussian", c] => Distribution::GaussianMixture { clusters: num(c)? },
            ["latent", c, l] => Distribution::LatentMixture { clusters: num(c)?, latent: num(l)? },
            _ => return Err(format!("unknown distribution '{s}'")),
        };
        Ok(DistArg(dist))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("error: invalid arguments"));
            return ExitCode::from(2);
        }
    };
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen { n, d, dist, seed, out } => {
            let data = gen_synthetic(n, d, dist.0, seed)?;
            write_fvecs(&out, &data).with_context(|| format!("writing {}", out.display()))?;
            log::info!("wrote {n} × {d} points to {}", out.display());
        }
        Command::Gt { base, queries, k, out } => {
            let base = load_fvecs(&base)?;
            let queries = load_fvecs(&queries)?;
            let gt = ground_truth(&base, &queries, k)?;
            write_ivecs(&out, &gt.ids).with_context(|| format!("writing {}", out.display()))?;
            let dist_path = distances_path(&out);
            let rows: Vec<Vec<f32>> = gt.distances.iter().map(|r| r.iter().map(|&x| x as f32).collect()).collect();
            write_fvecs_rows(&dist_path, &rows).with_context(|| format!("writing {}", dist_path.display()))?;
        }
        Command::Build(args) => build(args)?,
        Command::Bench { index, queries, gt, k, alpha_sweep, format, reps, out } => {
            let index = load_index(&index)?;
            let queries = load_fvecs(&queries)?;
            let ids = read_ivecs(&gt).with_context(|| format!("reading {}", gt.display()))?;
            let gt = GroundTruth::from_ids(ids, index.data(), &queries)?;
            let runs = run_benchmark_detailed(&index, &queries, &gt, &alpha_sweep, &k, reps)?;
            let rows: Vec<BenchmarkRow> = runs.into_iter().map(|r| r.row).collect();
            let sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
                None => Box::new(io::stdout().lock()),
            };
            write_report(sink, &rows, format)?;
        }
        Command::Stats { index } => {
            let index = load_index(&index)?;
            let graph = index.graph();
            let stats = degree_stats(graph);
            let reachable = reachable_set(graph, graph.entry()).len();
            let n = graph.len();
            let per_ln_n = if n > 1 { stats.mean / (n as f64).ln() } else { 0.0 };
            let report = json!({
                "n": n,
                "dim": index.data().dim(),
                "max_degree": graph.max_degree(),
                "entry": graph.entry(),
                "edges": graph.edge_count(),
                "degree": stats,
                "mean_degree_over_ln_n": per_ln_n,
                "reachable_from_entry": reachable,
                "connected": reachable == n,
                "meta": graph.meta(),
            });
            writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(())
}

fn build(args: BuildArgs) -> Result<()> {
    if let Some(threads) = args.threads {
        if threads == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    if args.audit && !matches!(args.mode, Mode::Exact) {
        bail!("--audit applies to exact builds only");
    }
    let data = load_fvecs(&args.base)?;
    let params = BuildParams {
        max_degree: args.m,
        candidates: args.l,
        t: args.t.unwrap_or(args.m),
        iterations: args.iters,
        seed: args.seed,
        bootstrap: match args.bootstrap {
            BootstrapArg::Knn => Bootstrap::ExactKnn,
            BootstrapArg::Random => Bootstrap::RandomRegular,
        },
        fixed_delta: args.delta,
    };
    let index = match args.mode {
        Mode::Exact => {
            if data.len() > EXACT_BUILD_GUARD && !args.allow_large {
                bail!(
                    "exact build on {} points exceeds the guard of {EXACT_BUILD_GUARD}; pass --allow-large to proceed",
                    data.len()
                );
            }
            let delta = args.delta.unwrap_or(0.05);
            let graph = build_exact(&data, delta)?;
            if args.audit {
                let violations = audit_construction(&graph, &data, delta);
                if !violations.is_empty() {
                    let (u, v) = violations[0];
                    bail!("audit found {} unoccluded non-edges, first ({u}, {v})", violations.len());
                }
                eprintln!("audit: 0 violations over {} ordered pairs", data.len() * (data.len() - 1));
            }
            Index::Graph { graph, data }
        }
        Mode::Approx => Index::Graph { graph: build_approx(&data, &params)?, data },
        Mode::Quantized => Index::Quantized(build_quantized(&data, &params, args.seed, args.batch_width)?),
    };
    index.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    log::info!("wrote index with {} edges to {}", index.graph().edge_count(), args.out.display());
    Ok(())
}

fn write_report(sink: impl Write, rows: &[BenchmarkRow], format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(sink);
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        Format::Json => {
            let mut sink = sink;
            serde_json::to_writer_pretty(&mut sink, rows)?;
            writeln!(sink)?;
        }
    }
    Ok(())
}

fn distances_path(ids_path: &Path) -> PathBuf {
    let mut s = ids_path.as_os_str().to_owned();
    s.push(".dist.fvecs");
    PathBuf::from(s)
}

fn load_fvecs(path: &Path) -> Result<demg::Dataset> {
    read_fvecs(path).with_context(|| format!("reading {}", path.display()))
}

fn load_index(path: &Path) -> Result<Index> {
    Index::load(path).with_context(|| format!("loading index {}", path.display()))
}
