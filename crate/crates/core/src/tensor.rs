//! Dense multiway arrays.
//!
//! Every tensor is stored in a single contiguous buffer using first-index-fastest
//! ("column-major") linearization: element `(j_1, .., j_D)` lives at
//! `j_1 + n_1 * (j_2 + n_2 * (.. + n_{D-1} * j_D))`. Under this ordering the
//! mode-`i` unfolding `(n_1..n_i) x (n_{i+1}..n_D)` is the same buffer read as a
//! column-major matrix, so unfoldings and reshapes never move data.

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn product(extents: &[usize]) -> usize {
    extents.iter().product()
}

impl DenseTensor {
    /// Builds a tensor after checking extents, buffer length and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if let Some(pos) = shape.iter().position(|&n| n == 0) {
            return Err(Error::Dimension(format!(
                "extent {pos} of shape {shape:?} is zero"
            )));
        }
        let expected = product(&shape);
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "buffer holds {} elements but shape {shape:?} needs {expected}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite element {} at linear index {pos}",
                data[pos]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = product(&shape);
        Self::new(shape, vec![0.0; len])
    }

    /// Wraps a column-major matrix as a tensor with the given shape.
    pub fn from_matrix(shape: Vec<usize>, m: DMatrix<f64>) -> Result<Self> {
        Self::new(shape, m.data.into())
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(product(&shape), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::Index(format!(
                "index {index:?} has {} entries for a {}-way tensor",
                index.len(),
                self.shape.len()
            )));
        }
        let mut lin = 0;
        for (k, (&j, &n)) in index.iter().zip(&self.shape).enumerate().rev() {
            if j >= n {
                return Err(Error::Index(format!(
                    "index {j} out of range for mode {k} of extent {n}"
                )));
            }
            lin = lin * n + j;
        }
        Ok(lin)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.linear_index(index)?])
    }

    /// Same buffer under a new shape.
    pub fn reshape(self, new_shape: Vec<usize>) -> Result<Self> {
        if product(&new_shape) != self.data.len() || new_shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} ({} elements) to {new_shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Self {
            shape: new_shape,
            data: self.data,
        })
    }

    /// Zero-copy view of the buffer as a `rows x cols` column-major matrix.
    pub fn as_matrix(&self, rows: usize, cols: usize) -> Result<DMatrixView<'_, f64>> {
        if rows * cols != self.data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} view over {} elements",
                self.data.len()
            )));
        }
        Ok(DMatrixView::from_slice(&self.data, rows, cols))
    }

    /// Mode-`i` unfolding, `1 <= i <= D-1`.
    pub fn unfold(&self, i: usize) -> Result<DMatrixView<'_, f64>> {
        let d = self.shape.len();
        if i == 0 || i >= d {
            return Err(Error::Dimension(format!(
                "unfolding mode {i} of a {d}-way tensor"
            )));
        }
        let rows = product(&self.shape[..i]);
        self.as_matrix(rows, self.data.len() / rows)
    }

    /// Number of elements in one slice along the last mode.
    pub fn slice_len(&self) -> usize {
        match self.shape.split_last() {
            Some((_, lead)) => product(lead),
            None => 1,
        }
    }

    /// Contiguous slices `range` along the last mode.
    pub fn slices_last(&self, range: std::ops::Range<usize>) -> Result<DenseTensor> {
        let last = *self
            .shape
            .last()
            .ok_or_else(|| Error::Dimension("0-way tensor has no last mode".into()))?;
        if range.start >= range.end || range.end > last {
            return Err(Error::Index(format!(
                "slice range {range:?} outside last extent {last}"
            )));
        }
        let step = self.slice_len();
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = range.len();
        let data = self.data[range.start * step..range.end * step].to_vec();
        Ok(Self::from_parts_unchecked(shape, data))
    }

    /// Selects individual slices along the last mode, in the given order.
    pub fn select_last(&self, indices: &[usize]) -> Result<DenseTensor> {
        let last = *self.shape.last().unwrap_or(&1);
        if indices.is_empty() {
            return Err(Error::Index("empty slice selection".into()));
        }
        let step = self.slice_len();
        let mut data = Vec::with_capacity(step * indices.len());
        for &j in indices {
            if j >= last {
                return Err(Error::Index(format!("slice {j} outside last extent {last}")));
            }
            data.extend_from_slice(&self.data[j * step..(j + 1) * step]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = indices.len();
        Ok(Self::from_parts_unchecked(shape, data))
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }
}

/// Contracts the last mode of `a` with the first mode of `b`.
pub fn contract(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let (&k, a_lead) = a
        .shape
        .split_last()
        .ok_or_else(|| Error::Dimension("cannot contract a 0-way tensor".into()))?;
    let (&kb, b_tail) = b
        .shape
        .split_first()
        .ok_or_else(|| Error::Dimension("cannot contract a 0-way tensor".into()))?;
    if k != kb {
        return Err(Error::Dimension(format!(
            "shared extents differ: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let m = product(a_lead);
    let n = product(b_tail);
    let am = a.as_matrix(m, k)?;
    let bm = b.as_matrix(k, n)?;
    let c = am * bm;
    let shape: Vec<usize> = a_lead.iter().chain(b_tail).copied().collect();
    Ok(DenseTensor::from_parts_unchecked(shape, c.data.into()))
}

/// Frobenius norm with blocked accumulation.
pub fn frobenius_norm(t: &DenseTensor) -> f64 {
    sum_of_squares(&t.data).sqrt()
}

pub(crate) fn sum_of_squares(values: &[f64]) -> f64 {
    values
        .chunks(64)
        .map(|c| c.iter().map(|v| v * v).sum::<f64>())
        .sum()
}

/// Concatenates tensors along their last mode.
pub fn stack_last(parts: &[DenseTensor]) -> Result<DenseTensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Dimension("nothing to stack".into()))?;
    let (_, lead) = first
        .shape
        .split_last()
        .ok_or_else(|| Error::Dimension("cannot stack 0-way tensors".into()))?;
    let mut total = 0;
    for p in parts {
        let (&last, p_lead) = p
            .shape
            .split_last()
            .ok_or_else(|| Error::Dimension("cannot stack 0-way tensors".into()))?;
        if p_lead != lead {
            return Err(Error::Dimension(format!(
                "stacking {:?} onto {:?}",
                p.shape, first.shape
            )));
        }
        total += last;
    }
    let mut data = Vec::with_capacity(product(lead) * total);
    for p in parts {
        data.extend_from_slice(&p.data);
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Ok(DenseTensor::from_parts_unchecked(shape, data))
}
