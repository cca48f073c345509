//! NeoInit: identity-like starting points for NeoCell matrices.
//!
//! Square matrices start as the identity. A wide `h x w` matrix (`h < w`)
//! gets a "skewed identity": with `step = round(w / h)`, row `i` holds
//! `1 / (end - start)` on the columns `[i * step, min((i + 1) * step, w))`,
//! so each row averages a run of neighbouring inputs. A tall matrix gets
//! the same construction with rows and columns swapped. Gaussian noise
//! with standard deviation `1 / sqrt(h * w)` is then added to every entry.
//!
//! `round` is half-away-from-zero (`f64::round`). When `step * h` does not
//! match `w` the trailing columns (or rows) stay zero.

use crate::error::Result;
use crate::rng::{gaussian_fill, Rng};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitSpec {
    pub rows: usize,
    pub cols: usize,
    pub noise: bool,
    pub seed: u64,
}

impl InitSpec {
    pub fn new(rows: usize, cols: usize, noise: bool) -> Self {
        InitSpec {
            rows,
            cols,
            noise,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Runs [`neoinit`] with a fresh generator seeded from `self.seed`.
    pub fn generate(&self) -> Result<Matrix> {
        neoinit(self, &mut Rng::new(self.seed))
    }
}

/// Noise-free NeoInit pattern.
pub fn neoinit_pattern(rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    if rows == cols {
        return Matrix::identity(rows);
    }
    let (short, long) = (rows.min(cols), rows.max(cols));
    let step = (long as f64 / short as f64).round() as usize;
    for i in 0..short {
        let start = i * step;
        let end = ((i + 1) * step).min(long);
        if end <= start {
            continue;
        }
        let v = 1.0 / (end - start) as f64;
        for j in start..end {
            if rows < cols {
                m.set(i, j, v);
            } else {
                m.set(j, i, v);
            }
        }
    }
    m
}

/// NeoInit matrix of `spec.rows x spec.cols`, drawing noise from `rng`
/// when `spec.noise` is set.
pub fn neoinit(spec: &InitSpec, rng: &mut Rng) -> Result<Matrix> {
    let mut m = neoinit_pattern(spec.rows, spec.cols);
    if spec.noise {
        let sigma = 1.0 / ((spec.rows * spec.cols) as f64).sqrt();
        let noise = gaussian_fill(rng, spec.rows, spec.cols, sigma)?;
        for (v, n) in m.data_mut().iter_mut().zip(noise.data()) {
            *v += n;
        }
    }
    Ok(m)
}
