//! Forward kernels for the non-NeoCell layers.

use crate::error::{param_err, shape_err, Result};
use crate::rng::Rng;
use crate::tensor::{Matrix, Tensor4};

/// `(n, c, H, W) -> (n, c * p^2, H / p, W / p)`.
///
/// Output channel `c * p^2 + di * p + dj` holds the pixels at offset
/// `(di, dj)` inside each `p x p` cell of input channel `c`.
pub fn space_to_depth(x: &Tensor4, p: usize) -> Result<Tensor4> {
    let [n, c, h, w] = x.dims();
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(shape_err!(
            "space_to_depth: {h}x{w} is not divisible by patch size {p}"
        ));
    }
    let (oh, ow) = (h / p, w / p);
    let mut out = Tensor4::zeros([n, c * p * p, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            for di in 0..p {
                for dj in 0..p {
                    let dst = out.plane_mut(b, ch * p * p + di * p + dj);
                    for i in 0..oh {
                        for j in 0..ow {
                            dst[i * ow + j] = src[(i * p + di) * w + j * p + dj];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space(x: &Tensor4, p: usize) -> Result<Tensor4> {
    let [n, cp, oh, ow] = x.dims();
    if p == 0 || cp % (p * p) != 0 {
        return Err(shape_err!(
            "depth_to_space: {cp} channels are not divisible by {}",
            p * p
        ));
    }
    let c = cp / (p * p);
    let (h, w) = (oh * p, ow * p);
    let mut out = Tensor4::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            for di in 0..p {
                for dj in 0..p {
                    let src = x.plane(b, ch * p * p + di * p + dj);
                    let dst = out.plane_mut(b, ch);
                    for i in 0..oh {
                        for j in 0..ow {
                            dst[(i * p + di) * w + j * p + dj] = src[i * ow + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// 1x1 convolution: `y[n, o, :, :] = sum_i weight[o, i] * x[n, i, :, :] + bias[o]`.
pub fn pointwise_conv(x: &Tensor4, weight: &Matrix, bias: Option<&[f64]>) -> Result<Tensor4> {
    let [n, ci, h, w] = x.dims();
    let co = weight.rows();
    if weight.cols() != ci {
        return Err(shape_err!(
            "pointwise_conv: weight is {}x{} but the input has {ci} channels",
            co,
            weight.cols()
        ));
    }
    if let Some(b) = bias {
        if b.len() != co {
            return Err(shape_err!(
                "pointwise_conv: bias has {} entries for {co} outputs",
                b.len()
            ));
        }
    }
    let hw = h * w;
    let xp = pack_channels(x.data(), n, ci, hw);
    let mut yp = vec![0.0; co * n * hw];
    gemm_acc(weight.data(), &xp, &mut yp, co, ci, n * hw);
    if let Some(bias) = bias {
        for (row, &bv) in yp.chunks_exact_mut(n * hw).zip(bias) {
            row.iter_mut().for_each(|y| *y += bv);
        }
    }
    Tensor4::from_vec([n, co, h, w], unpack_channels(&yp, n, co, hw))
}

/// `[n, c, hw]` to `[c, n * hw]`, so a 1x1 convolution over the whole
/// batch is a single matrix product with long rows.
pub(crate) fn pack_channels(x: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &x[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            out[(ch * n + b) * hw..(ch * n + b + 1) * hw].copy_from_slice(src);
        }
    }
    out
}

/// Inverse of [`pack_channels`].
pub(crate) fn unpack_channels(p: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &p[(ch * n + b) * hw..(ch * n + b + 1) * hw];
            out[(b * c + ch) * hw..(b * c + ch + 1) * hw].copy_from_slice(src);
        }
    }
    out
}

/// `out += a * b` for row-major `a: m x k`, `b: k x len`. Terms are
/// added in increasing `k` for every output entry; four rows of `b` are
/// folded per pass over the output row.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, len: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * len);
    debug_assert_eq!(out.len(), m * len);
    for i in 0..m {
        let orow = &mut out[i * len..(i + 1) * len];
        let arow = &a[i * k..(i + 1) * k];
        let mut p = 0;
        while p + 4 <= k {
            let (a0, a1, a2, a3) = (arow[p], arow[p + 1], arow[p + 2], arow[p + 3]);
            let b0 = &b[p * len..(p + 1) * len];
            let b1 = &b[(p + 1) * len..(p + 2) * len];
            let b2 = &b[(p + 2) * len..(p + 3) * len];
            let b3 = &b[(p + 3) * len..(p + 4) * len];
            for j in 0..len {
                orow[j] = orow[j] + a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            p += 4;
        }
        for q in p..k {
            let av = arow[q];
            for (o, &bv) in orow.iter_mut().zip(&b[q * len..(q + 1) * len]) {
                *o += av * bv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Running statistics of a batch-norm layer.
///
/// Train mode updates `mean <- (1 - momentum) * mean + momentum * batch_mean`
/// and likewise for the variance, using the unbiased batch variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormStats {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn apply(&mut self, batch: &BatchMoments) {
        let m = self.momentum;
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - m) * self.mean[c] + m * batch.mean[c];
            self.var[c] = (1.0 - m) * self.var[c] + m * batch.var_unbiased[c];
        }
    }
}

/// Per-channel statistics of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    pub xhat: Tensor4,
    pub inv_std: Vec<f64>,
    pub moments: Option<BatchMoments>,
}

/// Batch normalization over `(n, h, w)` per channel. Train mode updates
/// `stats`; eval mode reads them.
pub fn batchnorm_forward(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    stats: &mut BatchNormStats,
    mode: NormMode,
) -> Result<Tensor4> {
    let (y, cache) = batchnorm_core(x, gamma, beta, stats, mode)?;
    if let Some(m) = &cache.moments {
        stats.apply(m);
    }
    Ok(y)
}

pub(crate) fn batchnorm_core(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    stats: &BatchNormStats,
    mode: NormMode,
) -> Result<(Tensor4, NormCache)> {
    let [n, c, h, w] = x.dims();
    if gamma.len() != c || beta.len() != c || stats.mean.len() != c || stats.var.len() != c {
        return Err(param_err!(
            "batchnorm: {c} channels but gamma/beta/mean/var have {}/{}/{}/{} entries",
            gamma.len(),
            beta.len(),
            stats.mean.len(),
            stats.var.len()
        ));
    }
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut means = vec![0.0; c];
    let mut inv_std = vec![0.0; c];
    let mut moments = None;
    match mode {
        NormMode::Train => {
            let mut var_u = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..n {
                    s += x.plane(b, ch).iter().sum::<f64>();
                }
                let mean = s / count;
                let mut ss = 0.0;
                for b in 0..n {
                    ss += x
                        .plane(b, ch)
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = ss / count;
                means[ch] = mean;
                inv_std[ch] = 1.0 / (var + stats.eps).sqrt();
                var_u[ch] = if count > 1.0 { ss / (count - 1.0) } else { var };
            }
            moments = Some(BatchMoments {
                mean: means.clone(),
                var_unbiased: var_u,
            });
        }
        NormMode::Eval => {
            for ch in 0..c {
                means[ch] = stats.mean[ch];
                inv_std[ch] = 1.0 / (stats.var[ch] + stats.eps).sqrt();
            }
        }
    }
    let mut xhat = Tensor4::zeros(x.dims());
    let mut y = Tensor4::zeros(x.dims());
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let xh = xhat.plane_mut(b, ch);
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - means[ch]) * inv_std[ch];
            }
            let xh = xhat.plane(b, ch).to_vec();
            for (d, v) in y.plane_mut(b, ch).iter_mut().zip(xh) {
                *d = gamma[ch] * v + beta[ch];
            }
        }
    }
    Ok((
        y,
        NormCache {
            xhat,
            inv_std,
            moments,
        },
    ))
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Exact GELU, `x * Phi(x)`.
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// `d/dx [x Phi(x)] = Phi(x) + x phi(x)`.
#[inline]
pub fn gelu_grad_scalar(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    normal_cdf(x) + x * INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

pub fn gelu(x: &Tensor4) -> Tensor4 {
    let data = x.data().iter().map(|&v| gelu_scalar(v)).collect();
    Tensor4::from_vec(x.dims(), data).expect("same length")
}

/// Mean over the spatial axes: `(n, c, h, w) -> (n, c, 1, 1)`.
pub fn global_avg_pool(x: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = x.dims();
    let inv = 1.0 / (h * w) as f64;
    let mut out = Tensor4::zeros([n, c, 1, 1]);
    for b in 0..n {
        for ch in 0..c {
            let s: f64 = x.plane(b, ch).iter().sum();
            out.set(b, ch, 0, 0, s * inv);
        }
    }
    out
}

/// Per-sample keep scales for stochastic depth: each sample is kept with
/// probability `1 - rate` and then scaled by `1 / (1 - rate)`.
pub fn drop_path_scales(batch: usize, rate: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(param_err!("drop-path rate must lie in [0, 1), got {rate}"));
    }
    let keep = 1.0 - rate;
    Ok((0..batch)
        .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
        .collect())
}

/// Multiplies every element of sample `n` by `scales[n]`.
pub fn scale_samples(x: &Tensor4, scales: &[f64]) -> Result<Tensor4> {
    let [n, c, h, w] = x.dims();
    if scales.len() != n {
        return Err(shape_err!(
            "{} sample scales for a batch of {n}",
            scales.len()
        ));
    }
    let per = c * h * w;
    let mut out = x.clone();
    for (chunk, &s) in out.data_mut().chunks_mut(per).zip(scales) {
        chunk.iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_ordered_triple_loop_exactly() {
        let mut rng = crate::rng::Rng::new(8);
        for (m, k, len) in [(3, 9, 5), (1, 4, 1), (5, 3, 7), (2, 0, 3)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..k * len).map(|_| rng.normal()).collect();
            let init: Vec<f64> = (0..m * len).map(|_| rng.normal()).collect();
            let mut out = init.clone();
            gemm_acc(&a, &b, &mut out, m, k, len);
            for i in 0..m {
                for j in 0..len {
                    let mut acc = init[i * len + j];
                    for p in 0..k {
                        acc += a[i * k + p] * b[p * len + j];
                    }
                    assert_eq!(out[i * len + j], acc);
                }
            }
        }
    }

    #[test]
    fn pack_unpack_round_trip() {
        let x = ramp([2, 3, 2, 2]);
        let p = pack_channels(x.data(), 2, 3, 4);
        assert_eq!(&p[..8], &[0.0, 1.0, 2.0, 3.0, 12.0, 13.0, 14.0, 15.0]);
        assert_eq!(unpack_channels(&p, 2, 3, 4), x.data());
    }

    fn ramp(dims: [usize; 4]) -> Tensor4 {
        let n: usize = dims.iter().product();
        Tensor4::from_vec(dims, (0..n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn space_to_depth_cases() {
        let x = ramp([2, 3, 4, 4]);
        assert_eq!(space_to_depth(&x, 1).unwrap(), x);

        let y = space_to_depth(&Tensor4::zeros([1, 3, 224, 224]), 4).unwrap();
        assert_eq!(y.dims(), [1, 48, 56, 56]);

        let small = Tensor4::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = space_to_depth(&small, 2).unwrap();
        assert_eq!(s.dims(), [1, 4, 1, 1]);
        assert_eq!(s.data(), &[1.0, 2.0, 3.0, 4.0]);

        assert_eq!(
            depth_to_space(&space_to_depth(&x, 2).unwrap(), 2).unwrap(),
            x
        );
        assert!(space_to_depth(&x, 3).is_err());
    }

    #[test]
    fn pointwise_cases() {
        let mut rng = Rng::new(3);
        let x = Tensor4::from_fn([2, 3, 4, 5], |_, _, _, _| rng.normal());
        assert_eq!(pointwise_conv(&x, &Matrix::identity(3), None).unwrap(), x);

        let two = Tensor4::from_fn([1, 2, 2, 2], |_, c, i, j| (c * 10 + i * 2 + j) as f64);
        let sum = pointwise_conv(&two, &Matrix::from_rows(&[[1.0, 1.0]]), None).unwrap();
        assert_eq!(sum.data(), &[10.0, 12.0, 14.0, 16.0]);

        let w = Matrix::from_vec(4, 3, (0..12).map(|_| rng.normal()).collect()).unwrap();
        let bias = [0.5, -1.0, 2.0, 0.0];
        let y = pointwise_conv(&x, &w, Some(&bias)).unwrap();
        // Per-pixel loop oracle.
        for b in 0..2 {
            for i in 0..4 {
                for j in 0..5 {
                    for o in 0..4 {
                        let mut s = bias[o];
                        for c in 0..3 {
                            s += w.get(o, c) * x.at(b, c, i, j);
                        }
                        assert!((y.at(b, o, i, j) - s).abs() <= 1e-12);
                    }
                }
            }
        }
        assert!(pointwise_conv(&x, &Matrix::identity(2), None).is_err());
    }

    #[test]
    fn batchnorm_eval_identity() {
        let mut rng = Rng::new(5);
        let x = Tensor4::from_fn([2, 3, 4, 4], |_, _, _, _| rng.normal());
        let mut stats = BatchNormStats::new(3);
        let y = batchnorm_forward(&x, &[1.0; 3], &[0.0; 3], &mut stats, NormMode::Eval).unwrap();
        let scale = 1.0 / (1.0 + stats.eps).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() <= 1e-15);
        }
        assert_eq!(stats, BatchNormStats::new(3));
    }

    #[test]
    fn batchnorm_constant_channel_train_is_zero() {
        let x = Tensor4::from_vec([2, 1, 2, 2], vec![3.0; 8]).unwrap();
        let mut stats = BatchNormStats::new(1);
        let y = batchnorm_forward(&x, &[1.0], &[0.0], &mut stats, NormMode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!((stats.mean[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_train_output_statistics() {
        let mut rng = Rng::new(6);
        let x = Tensor4::from_fn([4, 3, 5, 5], |_, c, _, _| 10.0 * rng.normal() + c as f64);
        let mut stats = BatchNormStats::new(3);
        let y = batchnorm_forward(&x, &[1.0; 3], &[0.0; 3], &mut stats, NormMode::Train).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|b| y.plane(b, c).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() <= 1e-10, "mean {m}");
            assert!((v - 1.0).abs() <= 1e-6, "var {v}");
        }
        assert!(batchnorm_forward(&x, &[1.0; 2], &[0.0; 3], &mut stats, NormMode::Train).is_err());
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() <= 1e-6);
        // Phi(1) = 0.841344746... from standard normal tables.
        assert!((gelu_scalar(1.0) - 0.841_344_746).abs() <= 1e-4);
        for x in [-2.0, -0.3, 0.7, 1.5] {
            assert!((gelu_scalar(-x) - (-x * normal_cdf(-x))).abs() < 1e-15);
        }
    }

    #[test]
    fn drop_path_behaviour() {
        let mut rng = Rng::new(1);
        assert_eq!(drop_path_scales(4, 0.0, &mut rng).unwrap(), vec![1.0; 4]);
        let s = drop_path_scales(1000, 0.25, &mut rng).unwrap();
        assert!(s.iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-15));
        let kept = s.iter().filter(|&&v| v > 0.0).count();
        assert!((700..800).contains(&kept));
        assert!(drop_path_scales(1, 1.0, &mut rng).is_err());
    }

    #[test]
    fn pool_and_scale() {
        let x = ramp([2, 2, 2, 2]);
        let p = global_avg_pool(&x);
        assert_eq!(p.data(), &[1.5, 5.5, 9.5, 13.5]);
        let s = scale_samples(&x, &[0.0, 2.0]).unwrap();
        assert!(s.data()[..8].iter().all(|&v| v == 0.0));
        assert_eq!(s.data()[8], 16.0);
    }
}
