use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{norm, Matrix, UNIT_TOLERANCE, ZERO_NORM_THRESHOLD};

/// Fixed-capacity FIFO ring of unit-norm key features.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryQueue {
    entries: Matrix,
    cursor: usize,
    filled: bool,
}

fn check_unit_rows(m: &Matrix) -> Result<()> {
    for (index, row) in m.iter_rows().enumerate() {
        let n = norm(row);
        if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(Error::NotNormalized { index, norm: n });
        }
    }
    Ok(())
}

impl MemoryQueue {
    /// `capacity` random unit vectors (normalized isotropic Gaussians).
    pub fn init<R: Rng + ?Sized>(capacity: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::EmptyInput("queue capacity"));
        }
        if dim == 0 {
            return Err(Error::EmptyInput("queue dimension"));
        }
        let mut entries = Matrix::zeros(capacity, dim);
        for i in 0..capacity {
            let row = entries.row_mut(i);
            loop {
                for v in row.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let n = norm(row);
                if n >= ZERO_NORM_THRESHOLD {
                    row.iter_mut().for_each(|v| *v /= n);
                    break;
                }
            }
        }
        Ok(Self {
            entries,
            cursor: 0,
            filled: false,
        })
    }

    /// Rebuilds a queue from stored state, validating every invariant.
    pub fn from_parts(entries: Matrix, cursor: usize, filled: bool) -> Result<Self> {
        if entries.rows() == 0 || entries.cols() == 0 {
            return Err(Error::EmptyInput("queue entries"));
        }
        if cursor >= entries.rows() {
            return Err(Error::ShapeMismatch(format!(
                "cursor {cursor} outside a queue of capacity {}",
                entries.rows()
            )));
        }
        check_unit_rows(&entries)?;
        Ok(Self {
            entries,
            cursor,
            filled,
        })
    }

    /// Overwrites the `B` oldest entries with `keys` (`B × D`, unit rows).
    pub fn enqueue(&mut self, keys: &Matrix) -> Result<()> {
        let (b, k) = (keys.rows(), self.capacity());
        if b == 0 {
            return Ok(());
        }
        if b > k {
            return Err(Error::BatchTooLarge { batch: b, capacity: k });
        }
        if keys.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: keys.cols(),
            });
        }
        check_unit_rows(keys)?;
        for row in keys.iter_rows() {
            self.entries.row_mut(self.cursor).copy_from_slice(row);
            self.cursor += 1;
            if self.cursor == k {
                self.cursor = 0;
                self.filled = true;
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn capacity(&self) -> usize {
        self.entries.rows()
    }

    pub fn dim(&self) -> usize {
        self.entries.cols()
    }

    /// Index of the next slot to be overwritten (the oldest entry).
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// True once every slot has been written by `enqueue` at least once.
    pub fn is_filled(&self) -> bool {
        self.filled
    }
}
