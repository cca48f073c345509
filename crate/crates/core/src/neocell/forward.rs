use rayon::prelude::*;

use super::{output_shape, GroupSpec, NeoCellParams, NeoCellSpec};
use crate::count::{Counting, MulCounter, NoCount};
use crate::error::Result;
use crate::tensor::{Matrix, Tensor4};

/// Reference NeoCell forward: every patch is multiplied explicitly.
///
/// For a group with shift `s` the plane is rolled by `-s` on both axes,
/// processed, and the result rolled back by `+s`. The rolls are folded
/// into the index arithmetic; no rolled copy is made.
pub fn forward_patchwise(
    x: &Tensor4,
    spec: &NeoCellSpec,
    params: &NeoCellParams,
) -> Result<Tensor4> {
    run(x, spec, params, &mut NoCount)
}

/// Same as [`forward_patchwise`], also returning the number of scalar
/// multiplications performed (bias additions are not multiplications).
pub fn forward_patchwise_counted(
    x: &Tensor4,
    spec: &NeoCellSpec,
    params: &NeoCellParams,
) -> Result<(Tensor4, u64)> {
    let mut counter = Counting::default();
    let y = run(x, spec, params, &mut counter)?;
    Ok((y, counter.0))
}

/// [`forward_patchwise`] with `(sample, channel)` planes distributed over
/// the current rayon pool. Each plane is written by exactly one task, so
/// the output is identical to the sequential path.
pub fn forward_patchwise_parallel(
    x: &Tensor4,
    spec: &NeoCellSpec,
    params: &NeoCellParams,
) -> Result<Tensor4> {
    spec.validate()?;
    params.validate(spec)?;
    let out_dims = output_shape(spec, x.dims())?;
    let [_, channels, height, width] = x.dims();
    let groups = spec.channel_groups();
    let mut out = Tensor4::zeros(out_dims);
    let plane = out_dims[2] * out_dims[3];
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (n, c) = (idx / channels, idx % channels);
            let g = &spec.groups[groups[c]];
            patchwise_plane(
                x.plane(n, c),
                dst,
                (height, width),
                g,
                &params.left[c],
                &params.right[c],
                params.bias.as_ref().map(|b| &b[c]),
                &mut NoCount,
            );
        });
    Ok(out)
}

fn run<C: MulCounter>(
    x: &Tensor4,
    spec: &NeoCellSpec,
    params: &NeoCellParams,
    counter: &mut C,
) -> Result<Tensor4> {
    spec.validate()?;
    params.validate(spec)?;
    let out_dims = output_shape(spec, x.dims())?;
    let [batch, channels, height, width] = x.dims();
    let groups = spec.channel_groups();
    let mut out = Tensor4::zeros(out_dims);
    for n in 0..batch {
        for c in 0..channels {
            let g = &spec.groups[groups[c]];
            patchwise_plane(
                x.plane(n, c),
                out.plane_mut(n, c),
                (height, width),
                g,
                &params.left[c],
                &params.right[c],
                params.bias.as_ref().map(|b| &b[c]),
                counter,
            );
        }
    }
    Ok(out)
}

/// Maps one `height x width` plane into `dst`.
///
/// Per patch: `T = L X` accumulated over the patch rows in order, then
/// `Y = T R` accumulated over the patch columns in order, then `+ bias`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn patchwise_plane<C: MulCounter>(
    src: &[f64],
    dst: &mut [f64],
    (height, width): (usize, usize),
    g: &GroupSpec,
    left: &Matrix,
    right: &Matrix,
    bias: Option<&Matrix>,
    counter: &mut C,
) {
    let (h, w, ho, wo, s) = (g.h, g.w, g.h_out, g.w_out, g.shift);
    let out_h = height / h * ho;
    let out_w = width / w * wo;
    let l = left.data();
    let r = right.data();
    let mut tmp = vec![0.0; ho * w];
    for pi in 0..height / h {
        for pj in 0..width / w {
            tmp.iter_mut().for_each(|t| *t = 0.0);
            for a in 0..ho {
                for k in 0..h {
                    let lv = l[a * h + k];
                    let row = ((pi * h + k + s) % height) * width;
                    for q in 0..w {
                        counter.tick();
                        tmp[a * w + q] += lv * src[row + (pj * w + q + s) % width];
                    }
                }
            }
            for a in 0..ho {
                let orow = ((pi * ho + a + s) % out_h) * out_w;
                for b in 0..wo {
                    let mut acc = 0.0;
                    for q in 0..w {
                        counter.tick();
                        acc += tmp[a * w + q] * r[q * wo + b];
                    }
                    if let Some(bm) = bias {
                        acc += bm.get(a, b);
                    }
                    dst[orow + (pj * wo + b + s) % out_w] = acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neocell::GroupSpec;
    use crate::rng::Rng;
    use crate::tensor::roll2d;

    fn rand_tensor(rng: &mut Rng, dims: [usize; 4]) -> Tensor4 {
        Tensor4::from_fn(dims, |_, _, _, _| rng.normal())
    }

    /// Elementwise evaluation of `Y[c, pi*ho + a, pj*wo + b] =
    /// sum_k sum_q L[a,k] X[c, pi*h + k, pj*w + q] R[q,b]` with no shift.
    fn five_loop_oracle(x: &Tensor4, g: &GroupSpec, p: &NeoCellParams) -> Tensor4 {
        let [n, c, hh, ww] = x.dims();
        let (h, w, ho, wo) = (g.h, g.w, g.h_out, g.w_out);
        let mut y = Tensor4::zeros([n, c, hh / h * ho, ww / w * wo]);
        for b in 0..n {
            for ch in 0..c {
                for pi in 0..hh / h {
                    for pj in 0..ww / w {
                        for a in 0..ho {
                            for bb in 0..wo {
                                let mut s = 0.0;
                                for k in 0..h {
                                    for q in 0..w {
                                        s += p.left[ch].get(a, k)
                                            * x.at(b, ch, pi * h + k, pj * w + q)
                                            * p.right[ch].get(q, bb);
                                    }
                                }
                                y.set(b, ch, pi * ho + a, pj * wo + bb, s);
                            }
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn identity_params_bit_exact() {
        let mut rng = Rng::new(1);
        let spec = NeoCellSpec::new(
            vec![
                GroupSpec::square(0..2, 4, 3).unwrap(),
                GroupSpec::square(2..3, 2, 0).unwrap(),
            ],
            false,
        )
        .unwrap();
        let x = rand_tensor(&mut rng, [2, 3, 8, 8]);
        let y = forward_patchwise(&x, &spec, &NeoCellParams::identity(&spec).unwrap()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn row_permutation() {
        let spec = NeoCellSpec::uniform(1, (2, 2), (2, 2), false).unwrap();
        let p = NeoCellParams {
            left: vec![Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]])],
            right: vec![Matrix::identity(2)],
            bias: None,
        };
        let x = Tensor4::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            forward_patchwise(&x, &spec, &p).unwrap().data(),
            &[3.0, 4.0, 1.0, 2.0]
        );
    }

    #[test]
    fn two_by_two_average_pool() {
        let spec = NeoCellSpec::uniform(1, (2, 2), (1, 1), false).unwrap();
        let p = NeoCellParams {
            left: vec![Matrix::from_rows(&[[0.5, 0.5]])],
            right: vec![Matrix::from_rows(&[[0.5], [0.5]])],
            bias: None,
        };
        let x = Tensor4::from_vec([1, 1, 4, 4], (1..=16).map(f64::from).collect()).unwrap();
        let y = forward_patchwise(&x, &spec, &p).unwrap();
        // Direct pooling oracle.
        let mut expected = Vec::new();
        for i in 0..2 {
            for j in 0..2 {
                let s: f64 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(di, dj)| x.at(0, 0, 2 * i + di, 2 * j + dj))
                    .sum();
                expected.push(s / 4.0);
            }
        }
        assert_eq!(y.dims(), [1, 1, 2, 2]);
        assert_eq!(y.data(), expected.as_slice());
    }

    #[test]
    fn matches_five_loop_oracle() {
        let mut rng = Rng::new(17);
        let spec = NeoCellSpec::uniform(2, (4, 4), (4, 4), false).unwrap();
        let mut p = NeoCellParams::random_normal(&spec, &mut rng).unwrap();
        for m in p.left.iter_mut().chain(p.right.iter_mut()) {
            m.data_mut().iter_mut().for_each(|v| *v += 0.1);
        }
        let x = rand_tensor(&mut rng, [1, 2, 8, 8]);
        let y = forward_patchwise(&x, &spec, &p).unwrap();
        let oracle = five_loop_oracle(&x, &spec.groups[0], &p);
        assert!(y.max_abs_diff(&oracle).unwrap() <= 1e-12);

        let rs = NeoCellSpec::uniform(2, (2, 4), (3, 1), false).unwrap();
        let rp = NeoCellParams::random_normal(&rs, &mut rng).unwrap();
        let y = forward_patchwise(&x, &rs, &rp).unwrap();
        assert!(
            y.max_abs_diff(&five_loop_oracle(&x, &rs.groups[0], &rp))
                .unwrap()
                <= 1e-12
        );
    }

    #[test]
    fn shift_conjugacy_bit_exact() {
        let mut rng = Rng::new(5);
        let shifted = NeoCellSpec::new(vec![GroupSpec::square(0..2, 4, 3).unwrap()], true).unwrap();
        let plain = NeoCellSpec::new(vec![GroupSpec::square(0..2, 4, 0).unwrap()], true).unwrap();
        let mut p = NeoCellParams::neoinit(&shifted, &mut rng).unwrap();
        p.bias = Some(vec![
            Matrix::from_vec(
                4,
                4,
                (0..16).map(|_| rng.normal()).collect()
            )
            .unwrap();
            2
        ]);
        let x = rand_tensor(&mut rng, [2, 2, 12, 8]);
        let direct = forward_patchwise(&x, &shifted, &p).unwrap();
        let conj = roll2d(
            &forward_patchwise(&roll2d(&x, -3, -3), &plain, &p).unwrap(),
            3,
            3,
        );
        assert_eq!(direct, conj);
    }

    #[test]
    fn bias_added_once_per_patch() {
        let spec = NeoCellSpec::uniform(1, (2, 2), (2, 2), true).unwrap();
        let mut p = NeoCellParams::identity(&spec).unwrap();
        p.bias = Some(vec![Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]])]);
        let x = Tensor4::zeros([1, 1, 4, 2]);
        let y = forward_patchwise(&x, &spec, &p).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn errors() {
        let spec = NeoCellSpec::uniform(2, (4, 4), (4, 4), false).unwrap();
        let p = NeoCellParams::identity(&spec).unwrap();
        assert!(forward_patchwise(&Tensor4::zeros([1, 2, 6, 8]), &spec, &p).is_err());
        assert!(forward_patchwise(&Tensor4::zeros([1, 3, 8, 8]), &spec, &p).is_err());
        let other = NeoCellSpec::uniform(2, (2, 2), (2, 2), false).unwrap();
        let msg = forward_patchwise(&Tensor4::zeros([1, 2, 8, 8]), &other, &p)
            .unwrap_err()
            .to_string();
        assert!(msg.starts_with("parameter error"), "{msg}");
    }

    #[test]
    fn counted_and_parallel_agree() {
        let mut rng = Rng::new(9);
        let spec = NeoCellSpec::new(
            vec![
                GroupSpec::square(0..3, 4, 1).unwrap(),
                GroupSpec::square(3..5, 2, 1).unwrap(),
            ],
            false,
        )
        .unwrap();
        let p = NeoCellParams::neoinit(&spec, &mut rng).unwrap();
        let x = rand_tensor(&mut rng, [2, 5, 8, 8]);
        let a = forward_patchwise(&x, &spec, &p).unwrap();
        let (b, mults) = forward_patchwise_counted(&x, &spec, &p).unwrap();
        let c = forward_patchwise_parallel(&x, &spec, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        // 2 * n * C_g * H * W * k per group
        assert_eq!(mults, 2 * 2 * (3 * 64 * 4 + 2 * 64 * 2));
    }
}
