use rayon::prelude::*;

use crate::count::{Counting, MulCounter};
use crate::error::{param_err, shape_err, Result};
use crate::tensor::{Matrix, Tensor4};

fn check_kernels(x: &Tensor4, kernels: &[Matrix]) -> Result<usize> {
    let c = x.dims()[1];
    if kernels.len() != c {
        return Err(param_err!(
            "dwconv: {} kernels for {c} channels",
            kernels.len()
        ));
    }
    let k = kernels.first().map_or(0, Matrix::rows);
    if k == 0 || kernels.iter().any(|m| m.rows() != k || m.cols() != k) {
        return Err(param_err!(
            "dwconv: kernels must all be square and of one size"
        ));
    }
    Ok(k)
}

/// Zero-padded "same" correlation of one plane. Taps falling outside the
/// plane are skipped, so a border output sums fewer terms.
fn same_plane(src: &[f64], dst: &mut [f64], h: usize, w: usize, kernel: &[f64], k: usize) {
    let p = k / 2;
    // Valid taps for output index `i` along a side of length `n`:
    // `a in [p - i, n + p - i)` intersected with `[0, k)`.
    let taps = |i: usize, n: usize| (p.saturating_sub(i), (n + p - i).min(k));
    for i in 0..h {
        let (a0, a1) = taps(i, h);
        for j in 0..w {
            let (b0, b1) = taps(j, w);
            let mut acc = 0.0;
            for a in a0..a1 {
                let row = &src[(i + a - p) * w..(i + a - p + 1) * w];
                let kr = &kernel[a * k..(a + 1) * k];
                for b in b0..b1 {
                    acc += kr[b] * row[j + b - p];
                }
            }
            dst[i * w + j] = acc;
        }
    }
}

/// Depthwise `k x k` convolution (cross-correlation, as in deep-learning
/// frameworks) with stride 1 and zero padding `k / 2`, so the output has
/// the input's spatial size. `k` must be odd.
pub fn dwconv_reference(x: &Tensor4, kernels: &[Matrix]) -> Result<Tensor4> {
    let k = check_kernels(x, kernels)?;
    if k % 2 == 0 {
        return Err(shape_err!(
            "dwconv: same padding needs an odd kernel, got {k}"
        ));
    }
    let [n, c, h, w] = x.dims();
    let mut out = Tensor4::zeros(x.dims());
    for b in 0..n {
        for ch in 0..c {
            same_plane(
                x.plane(b, ch),
                out.plane_mut(b, ch),
                h,
                w,
                kernels[ch].data(),
                k,
            );
        }
    }
    Ok(out)
}

/// [`dwconv_reference`] with planes spread over the current rayon pool.
/// Bit-identical to the sequential version.
pub fn dwconv_reference_parallel(x: &Tensor4, kernels: &[Matrix]) -> Result<Tensor4> {
    let k = check_kernels(x, kernels)?;
    if k % 2 == 0 {
        return Err(shape_err!(
            "dwconv: same padding needs an odd kernel, got {k}"
        ));
    }
    let [_, c, h, w] = x.dims();
    let mut out = Tensor4::zeros(x.dims());
    out.data_mut()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(idx, dst)| {
            let ch = idx % c;
            let src = &x.data()[idx * h * w..(idx + 1) * h * w];
            same_plane(src, dst, h, w, kernels[ch].data(), k);
        });
    Ok(out)
}

/// Unpadded ("valid") depthwise correlation with a multiply counter.
/// Output planes are `(H - k + 1) x (W - k + 1)` and every output uses
/// all `k^2` taps, so the count is exactly `c * h_out * w_out * k^2` per
/// sample. Any `k` up to the plane size is accepted.
pub fn dwconv_valid_counted(x: &Tensor4, kernels: &[Matrix]) -> Result<(Tensor4, u64)> {
    let k = check_kernels(x, kernels)?;
    let [n, c, h, w] = x.dims();
    if k > h || k > w {
        return Err(shape_err!(
            "dwconv: kernel {k} larger than the {h}x{w} plane"
        ));
    }
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut out = Tensor4::zeros([n, c, ho, wo]);
    let mut counter = Counting::default();
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let kern = kernels[ch].data();
            let dst = out.plane_mut(b, ch);
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for a in 0..k {
                        for bb in 0..k {
                            counter.tick();
                            acc += kern[a * k + bb] * src[(i + a) * w + j + bb];
                        }
                    }
                    dst[i * wo + j] = acc;
                }
            }
        }
    }
    Ok((out, counter.0))
}
