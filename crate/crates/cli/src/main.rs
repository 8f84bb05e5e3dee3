//! `escape-bench`: run distributed adversarial training experiments, theory
//! oracles, and reports from JSON configs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use escape_bench_core::harness::plot::plot_to_file;
use escape_bench_core::harness::suite::{noise_stats, resolve, write_theory_csv};
use escape_bench_core::harness::{run_suite, ExperimentConfig, PlotKind};
use escape_bench_core::topology::{metropolis_matrix, Graph, GraphSpec};

#[derive(Parser)]
#[command(name = "escape-bench", version, about)]
struct Cli {
    /// Worker threads (0 = all cores). Falls back to ESCAPE_BENCH_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured strategies and write trace/theory/escape artifacts.
    Run(ConfigArgs),
    /// Evaluate the theory predictions and the exact linear oracle only.
    Theory {
        #[command(flatten)]
        common: ConfigArgs,
        /// Horizon for the theory curves (overrides the config).
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// Gradient-noise moments across batch sizes at the minimizer.
    NoiseStats {
        #[command(flatten)]
        common: ConfigArgs,
        /// Probe point (only the minimizer is supported).
        #[arg(long, default_value = "minimizer")]
        at: String,
        /// Comma-separated batch sizes.
        #[arg(long, default_value = "1,2,4,8,16", value_delimiter = ',')]
        batches: Vec<usize>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Run the two-basin escape experiment (config must enable `escape`).
    EscapeStudy(ConfigArgs),
    /// Emit the risk-landscape profile around the minimizer.
    Landscape(ConfigArgs),
    /// Validate a graph file; exit 0 iff it is a usable topology.
    ValidateGraph { file: PathBuf },
    /// Render an SVG from emitted CSV files.
    Plot {
        /// er_curves, landscape, or escape.
        #[arg(long)]
        kind: String,
        /// Input CSVs: trace.csv [theory.csv] for er_curves, otherwise one file.
        #[arg(long, required = true, num_args = 1..=2)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text)
        .with_context(|| format!("parsing {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn threads_from(cli_threads: Option<usize>) -> Option<usize> {
    cli_threads.or_else(|| {
        std::env::var("ESCAPE_BENCH_THREADS").ok().and_then(|v| v.parse().ok())
    })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let threads = threads_from(cli.threads);
    match cli.command {
        Command::Run(args) => {
            let cfg = load_config(&args)?;
            let artifacts = run_suite(&cfg, &args.out, threads)?;
            println!("wrote {}", artifacts.trace_csv.display());
            if let Some(p) = &artifacts.theory_csv {
                println!("wrote {}", p.display());
            }
            if let Some(p) = &artifacts.escape_csv {
                println!("wrote {}", p.display());
            }
            if let Some(p) = &artifacts.landscape_csv {
                println!("wrote {}", p.display());
            }
            println!("wrote {}", artifacts.meta_json.display());
        }
        Command::Theory { common, n_max } => {
            let cfg = load_config(&common)?;
            let exp = resolve(&cfg)?;
            let ctx = exp.theory_context()?;
            let n_max = n_max
                .or(cfg.theory.as_ref().map(|t| t.n_max))
                .unwrap_or(cfg.training.horizon);
            std::fs::create_dir_all(&common.out)
                .with_context(|| format!("creating {}", common.out.display()))?;
            let path = common.out.join("theory.csv");
            write_theory_csv(&exp, &ctx, n_max, &path)?;
            println!("wrote {}", path.display());
        }
        Command::NoiseStats { common, at, batches, samples } => {
            if at != "minimizer" {
                bail!("only --at minimizer is supported");
            }
            let cfg = load_config(&common)?;
            let exp = resolve(&cfg)?;
            let report = noise_stats(&exp, &batches, samples, cfg.seed)?;
            std::fs::create_dir_all(&common.out)
                .with_context(|| format!("creating {}", common.out.display()))?;
            let path = common.out.join("noise_stats.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
            println!("wrote {}", path.display());
            println!("covariance 1/B log-log slope: {:.4}", report.covariance_slope);
        }
        Command::EscapeStudy(args) => {
            let cfg = load_config(&args)?;
            if cfg.escape.is_none() {
                bail!("config has no `escape` block");
            }
            let artifacts = run_suite(&cfg, &args.out, threads)?;
            match &artifacts.escape_csv {
                Some(p) => println!("wrote {}", p.display()),
                None => bail!("escape study produced no escape.csv"),
            }
        }
        Command::Landscape(args) => {
            let mut cfg = load_config(&args)?;
            if cfg.landscape.is_none() {
                bail!("config has no `landscape` block");
            }
            // landscape only: strip the heavier report blocks and run once
            cfg.theory = None;
            cfg.escape = None;
            cfg.trials = 1;
            cfg.training.horizon = 1;
            let artifacts = run_suite(&cfg, &args.out, threads)?;
            match &artifacts.landscape_csv {
                Some(p) => println!("wrote {}", p.display()),
                None => bail!("no landscape.csv produced"),
            }
        }
        Command::ValidateGraph { file } => {
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            let spec: GraphSpec = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", file.display()))?;
            let graph = Graph::from_spec(&spec)?;
            match metropolis_matrix(&graph) {
                Ok(cm) => {
                    let sums: Vec<String> =
                        (0..cm.k()).map(|i| format!("{:.12}", cm.a().column(i).sum())).collect();
                    println!("column sums: [{}]", sums.join(", "));
                    println!("rho(P_alpha): {:.12}", cm.spectral_radius_alpha());
                    println!("connectivity: ok");
                    println!("verdict: valid");
                }
                Err(e) => {
                    println!("verdict: invalid ({e})");
                    std::process::exit(1);
                }
            }
        }
        Command::Plot { kind, input, out } => {
            let kind = match kind.as_str() {
                "er_curves" | "er-curves" => PlotKind::ErCurves,
                "landscape" => PlotKind::Landscape,
                "escape" => PlotKind::Escape,
                other => bail!("unknown plot kind {other} (er_curves|landscape|escape)"),
            };
            let inputs: Vec<&Path> = input.iter().map(|p| p.as_path()).collect();
            plot_to_file(kind, &inputs, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
