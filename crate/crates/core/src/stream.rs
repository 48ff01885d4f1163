//! Stream increments: the TTB1 batch file format, directory streams, and
//! synthetic exactly-low-rank generators.
//!
//! TTB1 layout: `"TTB1"`, `u8` dimension count `D`, `D` little-endian `u64`
//! extents, then the little-endian `f64` payload in first-index-fastest order.
//! The last extent counts observations. A stream is a directory of `.ttb`
//! files processed in lexicographic file-name order.

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;
use crate::tt::{random_train, TensorTrain};

pub const TTB_MAGIC: &[u8; 4] = b"TTB1";
pub const TTB_EXTENSION: &str = "ttb";

/// One streamed batch `n_1 x .. x n_d x n_obs`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamIncrement {
    pub tensor: DenseTensor,
    pub increment_index: usize,
    pub source: String,
}

impl StreamIncrement {
    pub fn new(tensor: DenseTensor, increment_index: usize, source: impl Into<String>) -> Result<Self> {
        if tensor.ndim() < 2 {
            return Err(Error::Dimension(format!(
                "an increment needs at least one spatial mode and an observation mode, got {:?}",
                tensor.shape()
            )));
        }
        Ok(Self {
            tensor,
            increment_index,
            source: source.into(),
        })
    }

    pub fn n_obs(&self) -> usize {
        *self.tensor.shape().last().unwrap()
    }

    pub fn spatial_shape(&self) -> &[usize] {
        let s = self.tensor.shape();
        &s[..s.len() - 1]
    }

    /// Observations at `indices`, as a new increment with the same index.
    pub fn select(&self, indices: &[usize]) -> Result<StreamIncrement> {
        Ok(StreamIncrement {
            tensor: self.tensor.select_last(indices)?,
            increment_index: self.increment_index,
            source: self.source.clone(),
        })
    }

    /// Buffer of observation `i`.
    pub fn observation(&self, i: usize) -> &[f64] {
        let step = self.tensor.slice_len();
        &self.tensor.data()[i * step..(i + 1) * step]
    }
}

pub fn encode_batch(t: &DenseTensor) -> Result<Vec<u8>> {
    let dims = u8::try_from(t.ndim())
        .map_err(|_| Error::Format(format!("{} dimensions exceed the u8 field", t.ndim())))?;
    let mut out = Vec::with_capacity(5 + 8 * t.ndim() + 8 * t.len());
    out.extend_from_slice(TTB_MAGIC);
    out.push(dims);
    for &n in t.shape() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_batch(bytes: &[u8]) -> Result<DenseTensor> {
    if bytes.len() < 5 || &bytes[..4] != TTB_MAGIC {
        return Err(Error::Format("bad magic, expected TTB1".into()));
    }
    let dims = bytes[4] as usize;
    let header = 5 + 8 * dims;
    if bytes.len() < header {
        return Err(Error::Format(format!(
            "header declares {dims} extents but file has {} bytes",
            bytes.len()
        )));
    }
    let shape: Vec<usize> = bytes[5..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::Format(format!("extents {shape:?} overflow")))?;
    let payload = &bytes[header..];
    if Some(payload.len()) != count.checked_mul(8) {
        return Err(Error::Format(format!(
            "shape {shape:?} needs {count} values, payload has {} bytes",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseTensor::new(shape, data).map_err(|e| match e {
        Error::Numeric(msg) => Error::Ingestion(msg),
        other => Error::Format(other.to_string()),
    })
}

pub fn write_batch(inc: &StreamIncrement, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_batch(&inc.tensor)?)?;
    Ok(())
}

pub fn read_batch(path: impl AsRef<Path>, increment_index: usize) -> Result<StreamIncrement> {
    let path = path.as_ref();
    let tensor = decode_batch(&std::fs::read(path)?)?;
    StreamIncrement::new(tensor, increment_index, path.display().to_string())
}

/// The `.ttb` files of a stream directory in processing order.
pub fn list_stream(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == TTB_EXTENSION) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads a stream directory, loading the next file on a background thread
/// while the caller processes the current one. Every increment must share the
/// spatial shape of the first.
pub struct StreamReader {
    rx: mpsc::Receiver<Result<StreamIncrement>>,
    spatial: Option<Vec<usize>>,
    failed: bool,
}

impl StreamReader {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let files = list_stream(dir)?;
        let (tx, rx) = mpsc::sync_channel(1);
        thread::spawn(move || {
            for (k, path) in files.into_iter().enumerate() {
                if tx.send(read_batch(&path, k)).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            rx,
            spatial: None,
            failed: false,
        })
    }
}

impl Iterator for StreamReader {
    type Item = Result<StreamIncrement>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.rx.recv().ok()?;
        let checked = item.and_then(|inc| match &self.spatial {
            None => {
                self.spatial = Some(inc.spatial_shape().to_vec());
                Ok(inc)
            }
            Some(s) if s.as_slice() == inc.spatial_shape() => Ok(inc),
            Some(s) => Err(Error::Ingestion(format!(
                "{} has spatial shape {:?}, stream established {s:?}",
                inc.source,
                inc.spatial_shape()
            ))),
        });
        if checked.is_err() {
            self.failed = true;
        }
        Some(checked)
    }
}

/// How many observations each synthetic increment carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchSizes {
    Fixed(usize),
    /// Uniform over `min..=max`.
    Uniform { min: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStreamSpec {
    pub spatial_shape: Vec<usize>,
    /// TT-ranks `r_0 .. r_{d+1}` including the observation mode, `r_0 = r_{d+1} = 1`.
    pub ranks: Vec<usize>,
    pub increments: usize,
    pub batch_sizes: BatchSizes,
    /// White-noise level relative to each clean increment's norm.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticStreamSpec {
    /// The exactly low-rank benchmark stream: `10 x 15 x 20` single
    /// observations with TT-ranks `[1, 2, 3, 5, 1]`.
    pub fn low_rank_benchmark(increments: usize, seed: u64) -> Self {
        Self {
            spatial_shape: vec![10, 15, 20],
            ranks: vec![1, 2, 3, 5, 1],
            increments,
            batch_sizes: BatchSizes::Fixed(1),
            noise: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.spatial_shape.len();
        if d == 0 || self.spatial_shape.contains(&0) {
            return Err(Error::Spec(format!("bad spatial shape {:?}", self.spatial_shape)));
        }
        let r = &self.ranks;
        if r.len() != d + 2 || r[0] != 1 || r[d + 1] != 1 || r.contains(&0) {
            return Err(Error::Spec(format!(
                "ranks {r:?} must have {} entries, start and end with 1 and be positive",
                d + 2
            )));
        }
        for i in 1..=d {
            let n = self.spatial_shape[i - 1];
            if r[i] > r[i - 1] * n {
                return Err(Error::Spec(format!(
                    "rank r_{i} = {} exceeds r_{} * n_{i} = {}",
                    r[i],
                    i - 1,
                    r[i - 1] * n
                )));
            }
            if i < d && r[i] > self.spatial_shape[i] * r[i + 1] {
                return Err(Error::Spec(format!(
                    "rank r_{i} = {} exceeds n_{} * r_{} = {}",
                    r[i],
                    i + 1,
                    i + 1,
                    self.spatial_shape[i] * r[i + 1]
                )));
            }
        }
        match self.batch_sizes {
            BatchSizes::Fixed(0) => return Err(Error::Spec("batch size 0".into())),
            BatchSizes::Uniform { min, max } if min == 0 || min > max => {
                return Err(Error::Spec(format!("batch size range {min}..={max}")))
            }
            _ => {}
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Spec(format!("noise level {}", self.noise)));
        }
        Ok(())
    }
}

/// Deterministic synthetic stream; see [`gen_synthetic`].
pub struct SyntheticStream {
    spec: SyntheticStreamSpec,
    basis: TensorTrain,
    rng: ChaCha8Rng,
    next_index: usize,
}

impl SyntheticStream {
    /// The spatial cores every increment is drawn from (last core is a
    /// placeholder with one observation).
    pub fn basis(&self) -> &TensorTrain {
        &self.basis
    }
}

/// Draws standard-normal spatial cores once, then for each increment draws
/// standard-normal coefficients, contracts, adds white noise at the requested
/// relative level, and scales the increment to unit Frobenius norm.
pub fn gen_synthetic(spec: &SyntheticStreamSpec) -> Result<SyntheticStream> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut modes = spec.spatial_shape.clone();
    modes.push(1);
    let basis = random_train(&modes, &spec.ranks, &mut rng)?;
    Ok(SyntheticStream {
        spec: spec.clone(),
        basis,
        rng,
        next_index: 0,
    })
}

impl Iterator for SyntheticStream {
    type Item = StreamIncrement;

    fn next(&mut self) -> Option<StreamIncrement> {
        if self.next_index >= self.spec.increments {
            return None;
        }
        let batch = match self.spec.batch_sizes {
            BatchSizes::Fixed(b) => b,
            BatchSizes::Uniform { min, max } => self.rng.random_range(min..=max),
        };
        let r_d = self.spec.ranks[self.spec.spatial_shape.len()];
        let coeffs = nalgebra::DMatrix::from_fn(r_d, batch, |_, _| self.rng.sample(StandardNormal));
        let clean = self
            .basis
            .expand_coefficients(&coeffs)
            .expect("coefficients match basis rank");
        let shape = clean.shape().to_vec();
        let mut data = clean.into_data();
        if self.spec.noise > 0.0 {
            let noise: Vec<f64> = (0..data.len()).map(|_| self.rng.sample(StandardNormal)).collect();
            let clean_norm = crate::tensor::sum_of_squares(&data).sqrt();
            let noise_norm = crate::tensor::sum_of_squares(&noise).sqrt();
            let scale = self.spec.noise * clean_norm / noise_norm.max(f64::MIN_POSITIVE);
            for (v, e) in data.iter_mut().zip(&noise) {
                *v += scale * e;
            }
        }
        let norm = crate::tensor::sum_of_squares(&data).sqrt();
        if norm > 0.0 {
            for v in &mut data {
                *v /= norm;
            }
        }
        let k = self.next_index;
        self.next_index += 1;
        let tensor = DenseTensor::new(shape, data).expect("finite synthetic data");
        Some(StreamIncrement::new(tensor, k, format!("synthetic:{}:{k}", self.spec.seed)).unwrap())
    }
}

/// Writes `increments` as `inc_00000.ttb`, `inc_00001.ttb`, ... into `dir`.
pub fn write_stream_dir(
    increments: impl IntoIterator<Item = StreamIncrement>,
    dir: impl AsRef<Path>,
) -> Result<usize> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut n = 0;
    for inc in increments {
        write_batch(&inc, dir.join(format!("inc_{:05}.{TTB_EXTENSION}", inc.increment_index)))?;
        n += 1;
    }
    Ok(n)
}
