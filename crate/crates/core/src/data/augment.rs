//! Batch augmentation: random crop with zero padding, horizontal flip and
//! mixup.

use rand_distr::{Beta, Distribution};

use crate::error::{param_err, shape_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::{Matrix, Tensor4};

const CROP_PAD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentPolicy {
    None,
    /// Pad-4 random crop and horizontal flip.
    Basic,
    /// `Basic` followed by mixup with `Beta(alpha, alpha)` weights.
    BasicMixup {
        alpha: f64,
    },
}

impl AugmentPolicy {
    pub const DEFAULT_MIXUP_ALPHA: f64 = 0.8;

    pub fn name(&self) -> &'static str {
        match self {
            AugmentPolicy::None => "none",
            AugmentPolicy::Basic => "basic",
            AugmentPolicy::BasicMixup { .. } => "basic+mixup",
        }
    }
}

impl std::str::FromStr for AugmentPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AugmentPolicy::None),
            "basic" => Ok(AugmentPolicy::Basic),
            "basic+mixup" => Ok(AugmentPolicy::BasicMixup {
                alpha: Self::DEFAULT_MIXUP_ALPHA,
            }),
            _ => Err(Error::Config(format!(
                "unknown augmentation policy {s:?} (none, basic, basic+mixup)"
            ))),
        }
    }
}

/// Mirrors sample `n` left to right in place.
pub fn hflip(x: &mut Tensor4, n: usize) {
    let [_, c, _, w] = x.dims();
    for ch in 0..c {
        for row in x.plane_mut(n, ch).chunks_mut(w) {
            row.reverse();
        }
    }
}

/// Shifts sample `n` by `(dy, dx)` with zero fill: the crop at offset
/// `(pad + dy, pad + dx)` of the zero-padded image.
pub fn random_crop(x: &mut Tensor4, n: usize, dy: isize, dx: isize) {
    let [_, c, h, w] = x.dims();
    for ch in 0..c {
        let src = x.plane(n, ch).to_vec();
        let dst = x.plane_mut(n, ch);
        for i in 0..h {
            for j in 0..w {
                let (si, sj) = (i as isize + dy, j as isize + dx);
                dst[i * w + j] = if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                    src[si as usize * w + sj as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

/// `lambda * x + (1 - lambda) * x[perm]`, likewise for the targets.
pub fn mixup_with(
    x: &Tensor4,
    targets: &Matrix,
    lambda: f64,
    perm: &[usize],
) -> Result<(Tensor4, Matrix)> {
    let [n, c, h, w] = x.dims();
    if perm.len() != n || targets.rows() != n {
        return Err(shape_err!(
            "mixup: batch {n}, permutation {}, targets {}",
            perm.len(),
            targets.rows()
        ));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(param_err!("mixup weight {lambda} outside [0, 1]"));
    }
    let per = c * h * w;
    let mut out = x.clone();
    let mut t = targets.clone();
    if lambda == 1.0 {
        return Ok((out, t));
    }
    for (i, &p) in perm.iter().enumerate() {
        let other = &x.data()[p * per..(p + 1) * per];
        for (d, (&a, &b)) in out.data_mut()[i * per..(i + 1) * per]
            .iter_mut()
            .zip(x.data()[i * per..(i + 1) * per].iter().zip(other))
        {
            *d = lambda * a + (1.0 - lambda) * b;
        }
        for k in 0..t.cols() {
            t.set(
                i,
                k,
                lambda * targets.get(i, k) + (1.0 - lambda) * targets.get(p, k),
            );
        }
    }
    Ok((out, t))
}

/// Applies `policy` to a batch of images and (soft) targets. Draws come
/// from `rng` in a fixed order: per sample crop offsets then flip, then
/// the mixup weight and pairing permutation.
pub fn augment(
    x: &Tensor4,
    targets: &Matrix,
    rng: &mut Rng,
    policy: AugmentPolicy,
) -> Result<(Tensor4, Matrix)> {
    if policy == AugmentPolicy::None {
        return Ok((x.clone(), targets.clone()));
    }
    let mut out = x.clone();
    let span = 2 * CROP_PAD + 1;
    for n in 0..x.dims()[0] {
        let dy = rng.below(span) as isize - CROP_PAD as isize;
        let dx = rng.below(span) as isize - CROP_PAD as isize;
        random_crop(&mut out, n, dy, dx);
        if rng.bernoulli(0.5) {
            hflip(&mut out, n);
        }
    }
    match policy {
        AugmentPolicy::BasicMixup { alpha } => {
            let beta =
                Beta::new(alpha, alpha).map_err(|e| param_err!("mixup alpha {alpha}: {e}"))?;
            let lambda = beta.sample(rng);
            let mut perm: Vec<usize> = (0..x.dims()[0]).collect();
            rng.shuffle(&mut perm);
            mixup_with(&out, targets, lambda, &perm)
        }
        _ => Ok((out, targets.clone())),
    }
}
