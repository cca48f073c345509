//! Seeded pseudo-randomness.
//!
//! The uniform stream is ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64`, which is value-stable across platforms. Uniform
//! doubles take the top 53 bits of a `u64` draw. Standard normals use the
//! Box-Muller transform evaluated with `libm` so the transcendental
//! functions do not depend on the platform's C library:
//!
//! ```text
//! u1 = 1 - uniform()          in (0, 1]
//! u2 = uniform()              in [0, 1)
//! r  = sqrt(-2 ln u1)
//! z0 = r cos(2 pi u2)         returned first
//! z1 = r sin(2 pi u2)         returned on the next call
//! ```

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{param_err, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// An independent stream under the same seed (e.g. one per epoch).
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng {
            seed,
            inner,
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        // Rejecting draws in the final partial block keeps this unbiased.
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    /// Fisher-Yates shuffle driven by [`Rng::below`].
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `rows x cols` i.i.d. samples from `N(0, sigma^2)`, drawn row-major.
///
/// `sigma == 0` returns exact zeros without consuming the stream.
pub fn gaussian_fill(rng: &mut Rng, rows: usize, cols: usize, sigma: f64) -> Result<Matrix> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(param_err!(
            "gaussian_fill: sigma must be finite and >= 0, got {sigma}"
        ));
    }
    if sigma == 0.0 {
        return Ok(Matrix::zeros(rows, cols));
    }
    let data = (0..rows * cols).map(|_| sigma * rng.normal()).collect();
    Matrix::from_vec(rows, cols, data)
}
