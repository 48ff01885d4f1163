//! Stream processing behind the command-line tool: compress a directory of
//! increments, append to an existing train, reconstruct, describe, and
//! benchmark the algorithms against each other on identical streams.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::cputime::Stopwatch;
use crate::error::{Error, Result};
use crate::ice::{tt_ice_update, UpdateReport};
use crate::ice_star::{tt_ice_star_update, HeuristicConfig};
use crate::ittd::{ittd_update, IttdState};
use crate::metrics::{compression_ratio, rre};
use crate::stream::{gen_synthetic, write_batch, BatchSizes, StreamIncrement, StreamReader, SyntheticStreamSpec};
use crate::tensor::{stack_last, DenseTensor};
use crate::tt::{occupancy, read_ttc, write_ttc, TensorTrain};
use crate::tt_svd::tt_svd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Batch TT-SVD of everything seen so far, recomputed per increment.
    TtSvd,
    TtIce,
    TtIceStar,
    Ittd,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::TtSvd => "tt-svd",
            Algorithm::TtIce => "tt-ice",
            Algorithm::TtIceStar => "tt-ice-star",
            Algorithm::Ittd => "ittd",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub eps_des: f64,
    pub heuristics: HeuristicConfig,
    pub round_every: Option<usize>,
    pub input: PathBuf,
    pub output: PathBuf,
    pub metrics: Option<PathBuf>,
    pub seed: u64,
    /// Write the output train after every `n`-th increment.
    pub checkpoint_every: usize,
    /// Record CPU seconds in the metrics CSV; off writes 0 for reproducible files.
    pub timing: bool,
    pub memory_limit_bytes: Option<usize>,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, eps_des: f64, input: PathBuf, output: PathBuf) -> Self {
        Self {
            algorithm,
            eps_des,
            heuristics: HeuristicConfig::default(),
            round_every: None,
            input,
            output,
            metrics: None,
            seed: 0,
            checkpoint_every: 1,
            timing: true,
            memory_limit_bytes: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_des.is_finite() && self.eps_des > 0.0 && self.eps_des <= 1.0) {
            return Err(Error::Argument(format!("eps {} outside (0, 1]", self.eps_des)));
        }
        if self.round_every.is_some() && self.algorithm != Algorithm::Ittd {
            return Err(Error::Argument("--round-every applies only to ittd".into()));
        }
        if self.round_every == Some(0) {
            return Err(Error::Argument("--round-every must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Argument("--checkpoint-every must be positive".into()));
        }
        self.heuristics.validate()
    }
}

/// One algorithm's running state over a stream.
pub struct Compressor {
    algorithm: Algorithm,
    eps: f64,
    heuristics: HeuristicConfig,
    train: Option<TensorTrain>,
    /// Raw increments kept by the batch baseline.
    parts: Vec<DenseTensor>,
    ittd: Option<IttdState>,
}

impl Compressor {
    pub fn new(
        algorithm: Algorithm,
        eps: f64,
        heuristics: HeuristicConfig,
        round_every: Option<usize>,
        memory_limit_bytes: Option<usize>,
    ) -> Result<Self> {
        let ittd = match algorithm {
            Algorithm::Ittd => Some(IttdState::new(eps, round_every)?.with_memory_limit(memory_limit_bytes)),
            _ => None,
        };
        Ok(Self {
            algorithm,
            eps,
            heuristics,
            train: None,
            parts: Vec::new(),
            ittd,
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Self::new(
            cfg.algorithm,
            cfg.eps_des,
            cfg.heuristics.clone(),
            cfg.round_every,
            cfg.memory_limit_bytes,
        )
    }

    /// Continues from an existing train.
    pub fn resume(mut self, tt: TensorTrain) -> Result<Self> {
        match self.algorithm {
            Algorithm::TtSvd => {
                self.parts = (0..tt.batch_boundaries().len())
                    .map(|k| tt.reconstruct(Some(tt.batch_range(k)?)))
                    .collect::<Result<_>>()?;
            }
            Algorithm::TtIce | Algorithm::TtIceStar => {
                if !tt.is_left_orthonormal() {
                    log::info!("left-orthogonalizing loaded train");
                    self.train = Some(tt.left_orthogonalize());
                    return Ok(self);
                }
            }
            Algorithm::Ittd => {
                if let Some(state) = self.ittd.as_mut() {
                    state.accumulation = Some(tt.clone());
                }
            }
        }
        self.train = Some(tt);
        Ok(self)
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn train(&self) -> Option<&TensorTrain> {
        self.train.as_ref()
    }

    pub fn into_train(self) -> Option<TensorTrain> {
        self.train
    }

    pub fn step(&mut self, inc: &StreamIncrement) -> Result<UpdateReport> {
        let (tt, report) = match self.algorithm {
            Algorithm::Ittd => {
                let state = self.ittd.take().expect("ittd state present");
                let (state, report) = ittd_update(state, inc)?;
                let tt = state.accumulation.clone().expect("accumulation after update");
                self.ittd = Some(state);
                (tt, report)
            }
            Algorithm::TtSvd => self.batch_step(inc)?,
            Algorithm::TtIce | Algorithm::TtIceStar => match &self.train {
                None => bootstrap(inc, self.eps)?,
                Some(tt) if self.algorithm == Algorithm::TtIce => tt_ice_update(tt, inc, self.eps)?,
                Some(tt) => tt_ice_star_update(tt, inc, self.eps, &self.heuristics)?,
            },
        };
        self.train = Some(tt);
        Ok(report)
    }

    fn batch_step(&mut self, inc: &StreamIncrement) -> Result<(TensorTrain, UpdateReport)> {
        let clock = Stopwatch::start();
        if let Some(first) = self.parts.first() {
            if first.shape()[..first.ndim() - 1] != *inc.spatial_shape() {
                return Err(Error::Dimension(format!(
                    "increment spatial shape {:?} differs from stream",
                    inc.spatial_shape()
                )));
            }
        }
        self.parts.push(inc.tensor.clone());
        let boundaries: Vec<usize> = self
            .parts
            .iter()
            .scan(0, |end, p| {
                *end += p.shape()[p.ndim() - 1];
                Some(*end)
            })
            .collect();
        let stacked = stack_last(&self.parts)?;
        let tt = tt_svd(&stacked, self.eps)?.with_batch_boundaries(boundaries)?;
        let mut report = svd_report(inc, &tt, self.eps, self.train.as_ref());
        (report.wall_time, report.cpu_seconds) = clock.stop();
        Ok((tt, report))
    }
}

fn svd_report(inc: &StreamIncrement, tt: &TensorTrain, eps: f64, before: Option<&TensorTrain>) -> UpdateReport {
    UpdateReport {
        increment_index: inc.increment_index,
        obs_in_batch: inc.n_obs(),
        obs_used: inc.n_obs(),
        ranks_before: before.map(TensorTrain::ranks).unwrap_or_default(),
        ranks_after: tt.ranks(),
        eps_target: eps,
        eps_upd: None,
        batch_rel_error_estimate: eps,
        skipped: false,
        occupied_modes: Vec::new(),
        wall_time: Default::default(),
        cpu_seconds: 0.0,
    }
}

/// Builds the initial train from the first increment.
pub fn bootstrap(inc: &StreamIncrement, eps: f64) -> Result<(TensorTrain, UpdateReport)> {
    let clock = Stopwatch::start();
    let tt = tt_svd(&inc.tensor, eps)?;
    let mut report = svd_report(inc, &tt, eps, None);
    (report.wall_time, report.cpu_seconds) = clock.stop();
    Ok((tt, report))
}

pub const CSV_HEADER: &str = "increment,algo,eps,ranks,cr,rel_err_est,obs_used,cpu_seconds";

fn join_ranks(ranks: &[usize]) -> String {
    ranks.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

pub fn csv_row(algo: &str, eps: f64, report: &UpdateReport, tt: &TensorTrain, timing: bool) -> String {
    format!(
        "{},{algo},{eps},{},{},{},{},{}",
        report.increment_index,
        join_ranks(&report.ranks_after),
        compression_ratio(tt),
        report.batch_rel_error_estimate,
        report.obs_used,
        if timing { report.cpu_seconds } else { 0.0 }
    )
}

fn open_csv(path: &Path) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CSV_HEADER}")?;
    Ok(w)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub increments: usize,
    pub ranks: Vec<usize>,
    pub compression_ratio: f64,
    pub reports: Vec<UpdateReport>,
}

/// Compresses the stream directory `cfg.input` into `cfg.output`.
pub fn compress(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    run_stream(Compressor::from_config(cfg)?, cfg)
}

/// Appends the increments in `cfg.input` to the train stored at `existing`.
pub fn append(existing: &Path, cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    if cfg.algorithm == Algorithm::TtSvd {
        log::warn!("tt-svd append recompresses the full reconstructed accumulation");
    }
    let tt = read_ttc(existing)?;
    run_stream(Compressor::from_config(cfg)?.resume(tt)?, cfg)
}

fn run_stream(mut engine: Compressor, cfg: &RunConfig) -> Result<RunSummary> {
    let offset = engine.train().map_or(0, |tt| tt.batch_boundaries().len());
    let mut csv = cfg.metrics.as_deref().map(open_csv).transpose()?;
    let algo = cfg.algorithm.to_string();
    let mut reports = Vec::new();
    let mut dirty = false;
    for item in StreamReader::open(&cfg.input)? {
        let k = offset + reports.len();
        let result = item.and_then(|mut inc| {
            inc.increment_index = k;
            engine.step(&inc)
        });
        let report = match result {
            Ok(r) => r,
            Err(e) => {
                if dirty {
                    if let Some(tt) = engine.train() {
                        write_ttc(tt, &cfg.output)?;
                    }
                }
                return Err(e.at_increment(k));
            }
        };
        let tt = engine.train().expect("train after step");
        log::info!(
            "increment {k}: ranks {:?}, estimate {:.3e}, {} of {} observations used",
            report.ranks_after,
            report.batch_rel_error_estimate,
            report.obs_used,
            report.obs_in_batch
        );
        if let Some(w) = csv.as_mut() {
            writeln!(w, "{}", csv_row(&algo, cfg.eps_des, &report, tt, cfg.timing))?;
            w.flush()?;
        }
        reports.push(report);
        dirty = true;
        if reports.len() % cfg.checkpoint_every == 0 {
            write_ttc(tt, &cfg.output)?;
            dirty = false;
        }
    }
    if reports.is_empty() {
        return Err(Error::Ingestion(format!("no increments in {}", cfg.input.display())));
    }
    let tt = engine.into_train().expect("train after stream");
    if dirty {
        write_ttc(&tt, &cfg.output)?;
    }
    Ok(RunSummary {
        increments: reports.len(),
        ranks: tt.ranks(),
        compression_ratio: compression_ratio(&tt),
        reports,
    })
}

/// Writes the dense reconstruction of `obs_range` (all observations if `None`)
/// as a batch file.
pub fn reconstruct(ttc: &Path, obs_range: Option<Range<usize>>, out: &Path) -> Result<DenseTensor> {
    if let Some(r) = &obs_range {
        if r.start >= r.end {
            return Err(Error::Argument(format!(
                "observation range {}..{} is empty or reversed",
                r.start, r.end
            )));
        }
    }
    let tt = read_ttc(ttc)?;
    let dense = tt.reconstruct(obs_range)?;
    let inc = StreamIncrement::new(dense, 0, ttc.display().to_string())?;
    write_batch(&inc, out)?;
    Ok(inc.tensor)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoreInfo {
    pub shape: [usize; 3],
    pub occupancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainInfo {
    pub mode_sizes: Vec<usize>,
    pub ranks: Vec<usize>,
    pub cores: Vec<CoreInfo>,
    pub ortho_count: usize,
    pub obs_count: usize,
    pub param_count: usize,
    pub compression_ratio: f64,
    pub batch_boundaries: Vec<usize>,
}

impl TrainInfo {
    pub fn of(tt: &TensorTrain) -> Self {
        Self {
            mode_sizes: tt.mode_sizes(),
            ranks: tt.ranks(),
            cores: tt
                .cores()
                .iter()
                .map(|c| CoreInfo {
                    shape: c.shape(),
                    occupancy: occupancy(c),
                })
                .collect(),
            ortho_count: tt.ortho_count(),
            obs_count: tt.obs_count(),
            param_count: tt.param_count(),
            compression_ratio: compression_ratio(tt),
            batch_boundaries: tt.batch_boundaries().to_vec(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("info serializes")
    }
}

impl fmt::Display for TrainInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "modes:             {:?}", self.mode_sizes)?;
        writeln!(f, "ranks:             {:?}", self.ranks)?;
        writeln!(f, "observations:      {}", self.obs_count)?;
        writeln!(f, "increments:        {}", self.batch_boundaries.len())?;
        writeln!(f, "parameters:        {}", self.param_count)?;
        writeln!(f, "compression ratio: {}", self.compression_ratio)?;
        writeln!(f, "orthonormal cores: {}", self.ortho_count)?;
        for (i, c) in self.cores.iter().enumerate() {
            writeln!(f, "core {i}: {}x{}x{}  occupancy {:.4}", c.shape[0], c.shape[1], c.shape[2], c.occupancy)?;
        }
        Ok(())
    }
}

pub fn info(ttc: &Path) -> Result<TrainInfo> {
    Ok(TrainInfo::of(&read_ttc(ttc)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Noiseless `10 x 15 x 20` stream with TT-ranks `[1, 2, 3, 5, 1]`, 50 increments.
    LowRank,
    /// 20 small perturbations of one increment.
    NearDuplicate,
    /// Batches where most observations lie in the span of the first increment.
    MostlySpanned,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::LowRank => "low-rank",
            Scenario::NearDuplicate => "near-duplicate",
            Scenario::MostlySpanned => "mostly-spanned",
        })
    }
}

impl Scenario {
    pub fn default_eps(self) -> f64 {
        match self {
            Scenario::LowRank => 1e-8,
            Scenario::NearDuplicate | Scenario::MostlySpanned => 0.1,
        }
    }

    pub fn stream(self, seed: u64) -> Result<Vec<StreamIncrement>> {
        match self {
            Scenario::LowRank => Ok(gen_synthetic(&SyntheticStreamSpec::low_rank_benchmark(50, seed))?.collect()),
            Scenario::NearDuplicate => near_duplicate_stream(&[8, 9, 10], 20, 1e-3, seed),
            Scenario::MostlySpanned => mostly_spanned_stream(&[8, 9, 10], 20, 10, 0.9, seed),
        }
    }
}

fn perturb(x: &DenseTensor, level: f64, rng: &mut ChaCha8Rng) -> Result<DenseTensor> {
    let noise: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
    let scale = level * x.frobenius_norm() / crate::tensor::sum_of_squares(&noise).sqrt();
    let data = x.data().iter().zip(&noise).map(|(v, e)| v + scale * e).collect();
    DenseTensor::new(x.shape().to_vec(), data)
}

/// `count` copies of one low-rank single-observation increment, each with
/// white noise at relative `level`.
pub fn near_duplicate_stream(
    spatial: &[usize],
    count: usize,
    level: f64,
    seed: u64,
) -> Result<Vec<StreamIncrement>> {
    let d = spatial.len();
    let mut ranks = vec![1; d + 2];
    for r in &mut ranks[1..=d] {
        *r = 2;
    }
    let spec = SyntheticStreamSpec {
        spatial_shape: spatial.to_vec(),
        ranks,
        increments: 1,
        batch_sizes: BatchSizes::Fixed(1),
        noise: 0.0,
        seed,
    };
    let base = gen_synthetic(&spec)?.next().expect("one increment").tensor;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..count)
        .map(|k| StreamIncrement::new(perturb(&base, level, &mut rng)?, k, format!("near-duplicate:{seed}:{k}")))
        .collect()
}

/// A first increment of `batch` observations from a fixed low-rank basis, then
/// increments in which a fraction `in_span` of observations are fresh draws
/// from that basis and the rest are such draws perturbed at 20%.
pub fn mostly_spanned_stream(
    spatial: &[usize],
    increments: usize,
    batch: usize,
    in_span: f64,
    seed: u64,
) -> Result<Vec<StreamIncrement>> {
    let d = spatial.len();
    let mut ranks = vec![1; d + 2];
    for r in &mut ranks[1..=d] {
        *r = 3;
    }
    let spec = SyntheticStreamSpec {
        spatial_shape: spatial.to_vec(),
        ranks,
        increments,
        batch_sizes: BatchSizes::Fixed(batch),
        noise: 0.0,
        seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let spanned = ((batch as f64) * in_span).ceil() as usize;
    gen_synthetic(&spec)?
        .enumerate()
        .map(|(k, inc)| {
            if k == 0 {
                return Ok(inc);
            }
            let obs = (0..batch)
                .map(|j| {
                    let x = inc.tensor.slices_last(j..j + 1)?;
                    if j < spanned {
                        Ok(x)
                    } else {
                        perturb(&x, 0.2, &mut rng)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            StreamIncrement::new(stack_last(&obs)?, k, inc.source)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub eps: Option<f64>,
    pub heuristics: HeuristicConfig,
    /// ITTD rounding period; `None` disables rounding.
    pub round_every: Option<usize>,
    pub timing: bool,
}

pub const BENCH_HEADER: &str = "scenario,algo,increment,ranks,cr,rre,obs_used,cpu_seconds";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub algo: String,
    pub increment: usize,
    pub ranks: Vec<usize>,
    pub cr: f64,
    /// Relative error of the increment just added.
    pub rre: f64,
    pub obs_used: usize,
    /// Cumulative over the stream.
    pub cpu_seconds: f64,
}

/// Runs TT-ICE, TT-ICE* and ITTD on the same seeded stream.
pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let eps = cfg.eps.unwrap_or(cfg.scenario.default_eps());
    let stream = cfg.scenario.stream(cfg.seed)?;
    let ittd_name = match cfg.round_every {
        Some(k) => format!("ittd-{k}"),
        None => "ittd-none".to_string(),
    };
    let runs = [
        (Algorithm::TtIce, "tt-ice".to_string(), None),
        (Algorithm::TtIceStar, "tt-ice-star".to_string(), None),
        (Algorithm::Ittd, ittd_name, cfg.round_every),
    ];
    let mut rows = Vec::new();
    for (algo, name, k) in runs {
        let mut engine = Compressor::new(algo, eps, cfg.heuristics.clone(), k, None)?;
        let mut cpu = 0.0;
        for inc in &stream {
            let report = engine.step(inc).map_err(|e| e.at_increment(inc.increment_index))?;
            let tt = engine.train().expect("train after step");
            cpu += report.cpu_seconds;
            let range = tt.batch_range(inc.increment_index)?;
            rows.push(BenchRow {
                algo: name.clone(),
                increment: inc.increment_index,
                ranks: report.ranks_after,
                cr: compression_ratio(tt),
                rre: rre(tt, &inc.tensor, Some(range))?.value,
                obs_used: report.obs_used,
                cpu_seconds: if cfg.timing { cpu } else { 0.0 },
            });
        }
    }
    Ok(rows)
}

pub fn write_bench_csv(scenario: Scenario, rows: &[BenchRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{BENCH_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{scenario},{},{},{},{},{},{},{}",
            r.algo,
            r.increment,
            join_ranks(&r.ranks),
            r.cr,
            r.rre,
            r.obs_used,
            r.cpu_seconds
        )?;
    }
    w.flush()?;
    Ok(())
}
