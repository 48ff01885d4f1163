use std::io::Write;
use std::ops::Range;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ttice::ice_star::{HeuristicConfig, SkipStatistic};
use ttice::pipeline::{self, Algorithm, BenchConfig, RunConfig, Scenario};
use ttice::stream::{gen_synthetic, write_stream_dir, BatchSizes, SyntheticStreamSpec};
use ttice::Result;

#[derive(Parser)]
#[command(name = "ttice", version, about = "Streaming tensor-train compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a directory of .ttb increments into a .ttc train.
    Compress {
        /// Directory of increments, processed in lexicographic order.
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Fold further increments into an existing .ttc train.
    Append {
        ttc: PathBuf,
        input: PathBuf,
        /// Output train; defaults to overwriting the input train.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write the dense reconstruction of a train as a .ttb file.
    Reconstruct {
        ttc: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Observation range `start..end` (end exclusive).
        #[arg(long, value_parser = parse_range)]
        range: Option<Range<usize>>,
    },
    /// Describe a .ttc train.
    Info {
        ttc: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Compare TT-ICE, TT-ICE* and ITTD on one seeded stream.
    Bench {
        #[arg(long, value_enum, default_value_t = Scenario::LowRank)]
        scenario: Scenario,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        heuristics: HeuristicArgs,
        /// ITTD rounding period; omit to disable rounding.
        #[arg(long)]
        round_every: Option<usize>,
        #[arg(long)]
        no_timing: bool,
        /// CSV output path (stdout if omitted).
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Generate a synthetic low-rank stream directory.
    Gen {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 15, 20])]
        shape: Vec<usize>,
        /// TT-ranks including both unit ends.
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 5, 1])]
        ranks: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        increments: usize,
        /// Observations per increment, `n` or `min..max` (inclusive).
        #[arg(long, default_value = "1", value_parser = parse_batch)]
        batch: BatchSizes,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SkipStat {
    Mean,
    Full,
}

#[derive(Args)]
struct HeuristicArgs {
    /// Occupancy above which a core is no longer expanded.
    #[arg(long, default_value_t = 0.8)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = SkipStat::Mean)]
    skip_stat: SkipStat,
    #[arg(long)]
    no_skip: bool,
    #[arg(long)]
    no_subselect: bool,
    /// Observation-count approximation for the relaxed tolerance.
    #[arg(long)]
    count_approx: bool,
}

impl HeuristicArgs {
    fn config(&self) -> HeuristicConfig {
        HeuristicConfig {
            occupancy_threshold: self.tau,
            skip_enabled: !self.no_skip,
            subselect_enabled: !self.no_subselect,
            skip_statistic: match self.skip_stat {
                SkipStat::Mean => SkipStatistic::Mean,
                SkipStat::Full => SkipStatistic::FullBatch,
            },
            count_approx: self.count_approx,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = Algorithm::TtIce)]
    algo: Algorithm,
    /// Relative error bound per increment.
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[command(flatten)]
    heuristics: HeuristicArgs,
    /// Round the ITTD accumulation after every K increments.
    #[arg(long, value_name = "K")]
    round_every: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "N", default_value_t = 1)]
    checkpoint_every: usize,
    /// Per-increment CSV report.
    #[arg(long, value_name = "PATH")]
    metrics: Option<PathBuf>,
    /// Write 0 in the cpu_seconds column.
    #[arg(long)]
    no_timing: bool,
    /// Refuse ITTD rounding beyond this working-set size.
    #[arg(long, value_name = "MB")]
    memory_limit_mb: Option<usize>,
}

impl RunArgs {
    fn config(&self, input: PathBuf, output: PathBuf) -> RunConfig {
        RunConfig {
            algorithm: self.algo,
            eps_des: self.eps,
            heuristics: self.heuristics.config(),
            round_every: self.round_every,
            input,
            output,
            metrics: self.metrics.clone(),
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            timing: !self.no_timing,
            memory_limit_bytes: self.memory_limit_mb.map(|mb| mb << 20),
        }
    }
}

fn parse_range(s: &str) -> std::result::Result<Range<usize>, String> {
    let (a, b) = s.split_once("..").ok_or("expected start..end")?;
    let a = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok(a..b)
}

fn parse_batch(s: &str) -> std::result::Result<BatchSizes, String> {
    match s.split_once("..") {
        None => s.parse().map(BatchSizes::Fixed).map_err(|e| format!("{e}")),
        Some((a, b)) => Ok(BatchSizes::Uniform {
            min: a.parse().map_err(|e| format!("{e}"))?,
            max: b.parse().map_err(|e| format!("{e}"))?,
        }),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compress { input, output, run } => {
            let s = pipeline::compress(&run.config(input, output))?;
            eprintln!("{} increments, ranks {:?}, compression ratio {}", s.increments, s.ranks, s.compression_ratio);
        }
        Command::Append {
            ttc,
            input,
            output,
            run,
        } => {
            let out = output.unwrap_or_else(|| ttc.clone());
            let s = pipeline::append(&ttc, &run.config(input, out))?;
            eprintln!("{} increments appended, ranks {:?}", s.increments, s.ranks);
        }
        Command::Reconstruct { ttc, output, range } => {
            let t = pipeline::reconstruct(&ttc, range, &output)?;
            eprintln!("wrote {:?} to {}", t.shape(), output.display());
        }
        Command::Info { ttc, json } => {
            let info = pipeline::info(&ttc)?;
            if json {
                println!("{}", info.to_json());
            } else {
                print!("{info}");
            }
        }
        Command::Bench {
            scenario,
            eps,
            seed,
            heuristics,
            round_every,
            no_timing,
            metrics,
        } => {
            let cfg = BenchConfig {
                scenario,
                seed,
                eps,
                heuristics: heuristics.config(),
                round_every,
                timing: !no_timing,
            };
            cfg.heuristics.validate()?;
            let rows = pipeline::bench(&cfg)?;
            match metrics {
                Some(p) => pipeline::write_bench_csv(scenario, &rows, std::fs::File::create(p)?)?,
                None => pipeline::write_bench_csv(scenario, &rows, std::io::stdout().lock())?,
            }
        }
        Command::Gen {
            output,
            shape,
            ranks,
            increments,
            batch,
            noise,
            seed,
        } => {
            let spec = SyntheticStreamSpec {
                spatial_shape: shape,
                ranks,
                increments,
                batch_sizes: batch,
                noise,
                seed,
            };
            let n = write_stream_dir(gen_synthetic(&spec)?, &output)?;
            eprintln!("wrote {n} increments to {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
