use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ssb::bench::{self, BenchCase, DEFAULT_GRID, MIN_REPS};
use ssb::config::RunConfig;
use ssb::error::{AppError, AppResult};
use ssb::{train, visualize};
use ssb_core::flops::{self, Convention, SamplerCost};
use ssb_core::network::NetworkSpec;
use ssb_core::sampler::SamplerVariant;

#[derive(Parser, Debug)]
#[command(name = "ssb", version, about = "Saliency sampling bottleneck networks: train, evaluate, benchmark, count FLOPs, visualize")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the configured one).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results are reproducible for a fixed count.
    #[arg(long, global = true, env = "SSB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on CIFAR-10 binary data; writes checkpoint.bin and metrics.csv.
    Train,
    /// Test accuracy of a checkpoint (BN in inference mode).
    Eval {
        /// Defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Median dense vs sparse sample+inverse timings as CSV.
    Bench {
        /// Comma-separated `HxRxD` cases (square maps).
        #[arg(long, value_delimiter = ',')]
        grid: Vec<String>,
        #[arg(long, default_value_t = MIN_REPS)]
        reps: usize,
        /// CSV destination; defaults to `<out>/bench.csv` with `--out`, else stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Per-layer MAC/FLOP/parameter report.
    Flops {
        /// micro, resnet-d-50 or ssb-resnet-d-50.
        spec: String,
        /// `N` or `HxW`.
        input: String,
        /// 1xmac or 2xmac.
        convention: String,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Sampler cost model: dense or sparse.
        #[arg(long, default_value = "dense")]
        sampler: String,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Saliency map, resized input and sampled image of one layer.
    Visualize {
        checkpoint: PathBuf,
        /// Binary PPM (P6).
        image: PathBuf,
        /// `group-block`, 1-based, e.g. `3-2`.
        layer: String,
    },
}

fn run_config(cli: &Cli) -> AppResult<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| AppError::Usage("this subcommand needs --config <json>".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| AppError::io(path, e))
}

fn run(cli: Cli) -> AppResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(AppError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| AppError::Usage(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Train => {
            let cfg = run_config(&cli)?;
            let outcome = train::train(&cfg, |r| {
                println!(
                    "epoch {:>3}  train_loss {:.4}  train_acc {:.4}  val_acc {:.4}  {:.1}s",
                    r.epoch, r.train_loss, r.train_acc, r.val_acc, r.wall_time_s
                )
            })?;
            let last = outcome.log.last().expect("epoch 0 row");
            println!("checkpoint {}", cfg.checkpoint_path().display());
            println!("final val_acc {:.4}", last.val_acc);
        }
        Command::Eval { checkpoint } => {
            let cfg = run_config(&cli)?;
            let path = checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_path());
            let acc = train::eval(&cfg, &path)?;
            println!("accuracy {acc}");
        }
        Command::Bench { grid, reps, csv } => {
            let cases = if grid.is_empty() {
                DEFAULT_GRID.to_vec()
            } else {
                grid.iter().map(|s| BenchCase::parse(s)).collect::<AppResult<_>>()?
            };
            let seed = cli.seed.unwrap_or(0);
            let rows = cases
                .iter()
                .map(|&c| bench::run_case(c, *reps, seed))
                .collect::<AppResult<Vec<_>>>()?;
            let text = bench::to_csv(&rows);
            match csv.clone().or_else(|| cli.out.as_ref().map(|o| o.join("bench.csv"))) {
                Some(p) => {
                    write(&p, &text)?;
                    print!("{text}");
                    eprintln!("wrote {}", p.display());
                }
                None => print!("{text}"),
            }
        }
        Command::Flops {
            spec,
            input,
            convention,
            csv,
            sampler,
            variant,
        } => {
            let mut net = NetworkSpec::by_name(spec).ok_or_else(|| {
                AppError::Usage(format!("unknown spec `{spec}` (known: {})", NetworkSpec::NAMES.join(", ")))
            })?;
            if let Some(v) = variant {
                let v = SamplerVariant::from_name(v).ok_or_else(|| AppError::Usage(format!("unknown variant `{v}`")))?;
                net = net.with_variant(v);
            }
            let conv = Convention::from_name(convention)
                .ok_or_else(|| AppError::Usage(format!("unknown convention `{convention}` (expected 1xmac or 2xmac)")))?;
            let cost = match sampler.as_str() {
                "dense" => SamplerCost::Dense,
                "sparse" => SamplerCost::Sparse,
                s => return Err(AppError::Usage(format!("unknown sampler cost `{s}` (expected dense or sparse)"))),
            };
            let report = flops::count(&net, flops::parse_input_size(input)?, conv, cost)?;
            print!("{}", report.table());
            if let Some(p) = csv {
                write(p, &report.to_csv())?;
            }
        }
        Command::Visualize { checkpoint, image, layer } => {
            let cfg = run_config(&cli)?;
            let spec = cfg.network_spec()?;
            let arts = visualize::visualize(&spec, checkpoint, image, layer, &cfg.out)?;
            for p in [&arts.saliency, &arts.resized, &arts.sampled] {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("ssb: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ssb: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
