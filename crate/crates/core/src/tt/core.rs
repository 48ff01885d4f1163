use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};

/// One 3-way core of shape `r_left x n x r_right`, first index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TTCore {
    r_left: usize,
    n: usize,
    r_right: usize,
    data: Vec<f64>,
}

impl TTCore {
    pub fn new(r_left: usize, n: usize, r_right: usize, data: Vec<f64>) -> Result<Self> {
        if r_left == 0 || n == 0 || r_right == 0 {
            return Err(Error::Dimension(format!(
                "core extents must be positive, got {r_left}x{n}x{r_right}"
            )));
        }
        if data.len() != r_left * n * r_right {
            return Err(Error::Dimension(format!(
                "core {r_left}x{n}x{r_right} given {} elements",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite core entry".into()));
        }
        Ok(Self {
            r_left,
            n,
            r_right,
            data,
        })
    }

    pub fn zeros(r_left: usize, n: usize, r_right: usize) -> Result<Self> {
        Self::new(r_left, n, r_right, vec![0.0; r_left * n * r_right])
    }

    /// Core from its `(r_left * n) x r_right` unfolding (or any matrix with the
    /// same column-major buffer).
    pub fn from_matrix(r_left: usize, n: usize, r_right: usize, m: DMatrix<f64>) -> Result<Self> {
        Self::new(r_left, n, r_right, m.data.into())
    }

    pub fn r_left(&self) -> usize {
        self.r_left
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r_right(&self) -> usize {
        self.r_right
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.r_left, self.n, self.r_right]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, a: usize, j: usize, b: usize) -> f64 {
        self.data[a + self.r_left * (j + self.n * b)]
    }

    /// `(r_left * n) x r_right` view.
    pub fn left_unfolding(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.data, self.r_left * self.n, self.r_right)
    }

    /// `r_left x (n * r_right)` view.
    pub fn right_unfolding(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.data, self.r_left, self.n * self.r_right)
    }

    /// Slice `G[j]` as an `r_left x r_right` matrix.
    pub fn slice(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.r_left, self.r_right, |a, b| self.get(a, j, b))
    }

    pub fn frobenius_norm(&self) -> f64 {
        crate::tensor::sum_of_squares(&self.data).sqrt()
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Inserts `extra` zero rows along the left rank, keeping existing entries
    /// at their `(a, j, b)` positions.
    pub fn pad_left(&self, extra: usize) -> TTCore {
        if extra == 0 {
            return self.clone();
        }
        let r = self.r_left + extra;
        let mut data = vec![0.0; r * self.n * self.r_right];
        for (src, dst) in self
            .data
            .chunks_exact(self.r_left)
            .zip(data.chunks_exact_mut(r))
        {
            dst[..self.r_left].copy_from_slice(src);
        }
        TTCore {
            r_left: r,
            n: self.n,
            r_right: self.r_right,
            data,
        }
    }
}

/// Fraction of the maximal possible right rank the core uses.
pub fn occupancy(core: &TTCore) -> f64 {
    core.r_right as f64 / (core.r_left * core.n) as f64
}
