//! Oracles shared by the integration tests, written against raw buffers
//! rather than the library's own contraction routines.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ttice::{DenseTensor, TensorTrain};

/// Dense tensor of a train by multiplying core slices element by element.
pub fn dense_by_slices(tt: &TensorTrain) -> Vec<f64> {
    let modes = tt.mode_sizes();
    let total: usize = modes.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; modes.len()];
    for _ in 0..total {
        let mut row = vec![1.0];
        for (k, core) in tt.cores().iter().enumerate() {
            let mut next = vec![0.0; core.r_right()];
            for (b, v) in next.iter_mut().enumerate() {
                for (a, r) in row.iter().enumerate() {
                    *v += r * core.get(a, idx[k], b);
                }
            }
            row = next;
        }
        out.push(row[0]);
        for (i, n) in idx.iter_mut().zip(&modes) {
            *i += 1;
            if *i < *n {
                break;
            }
            *i = 0;
        }
    }
    out
}

/// Dense tensor of a train by contracting cores left to right over raw buffers:
/// `acc[p + P j, b] = sum_a acc[p, a] G[a, j, b]` with `P` the prefix size.
pub fn dense_by_chain(tt: &TensorTrain) -> Vec<f64> {
    let mut acc = vec![1.0];
    let mut prefix = 1;
    for core in tt.cores() {
        let (rl, n, rr) = (core.r_left(), core.n(), core.r_right());
        let g = core.data();
        let mut next = vec![0.0; prefix * n * rr];
        for b in 0..rr {
            for j in 0..n {
                let out = &mut next[prefix * (j + n * b)..prefix * (j + n * b + 1)];
                for a in 0..rl {
                    let w = g[a + rl * (j + n * b)];
                    if w != 0.0 {
                        for (o, x) in out.iter_mut().zip(&acc[prefix * a..prefix * (a + 1)]) {
                            *o += w * x;
                        }
                    }
                }
            }
        }
        acc = next;
        prefix *= n;
    }
    acc
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn rel_diff(a: &[f64], reference: &[f64]) -> f64 {
    let n = norm(reference);
    if n == 0.0 {
        norm(a)
    } else {
        diff_norm(a, reference) / n
    }
}

pub fn gaussian(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
    let len = shape.iter().product();
    DenseTensor::new(shape.to_vec(), (0..len).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Columns `range` of the observation mode of a dense buffer with `slice` entries per observation.
pub fn obs_slice(data: &[f64], slice: usize, range: std::ops::Range<usize>) -> &[f64] {
    &data[slice * range.start..slice * range.end]
}
