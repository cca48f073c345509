use super::{output_shape, GroupSpec, NeoCellParams, NeoCellSpec};
use crate::error::Result;
use crate::tensor::{matmul, Matrix, Tensor4};

/// Builds the plane-level operators `(A, B)` such that `Y = A X B`.
///
/// `A` is `(H/h * h_out) x H` with `left` repeated along the block
/// diagonal and `B` is `W x (W/w * w_out)` with `right` repeated. For a
/// shift `s > 0` both are conjugated by the cyclic permutation:
/// `A_s[i][j] = A_0[(i - s) mod H][(j - s) mod H]`, which wraps the
/// first and last blocks around the corners.
pub fn materialize_block_diagonal(
    group: &GroupSpec,
    left: &Matrix,
    right: &Matrix,
    height: usize,
    width: usize,
) -> Result<(Matrix, Matrix)> {
    group.validate()?;
    let (out_h, out_w) = group.output_hw(height, width)?;
    let (h, w, ho, wo, s) = (group.h, group.w, group.h_out, group.w_out, group.shift);
    if (left.rows(), left.cols()) != (ho, h) || (right.rows(), right.cols()) != (w, wo) {
        return Err(crate::error::param_err!(
            "block-diagonal: left {}x{} / right {}x{} do not match group {:?}",
            left.rows(),
            left.cols(),
            right.rows(),
            right.cols(),
            group.channels
        ));
    }

    let mut a = Matrix::zeros(out_h, height);
    for blk in 0..height / h {
        for i in 0..ho {
            for k in 0..h {
                let r = (blk * ho + i + s) % out_h;
                let c = (blk * h + k + s) % height;
                a.set(r, c, left.get(i, k));
            }
        }
    }
    let mut b = Matrix::zeros(width, out_w);
    for blk in 0..width / w {
        for q in 0..w {
            for j in 0..wo {
                let r = (blk * w + q + s) % width;
                let c = (blk * wo + j + s) % out_w;
                b.set(r, c, right.get(q, j));
            }
        }
    }
    Ok((a, b))
}

/// NeoCell forward as `Y_c = A_c X_c B_c` on whole planes.
///
/// The materialized operators are stored as compressed rows so each
/// product only touches the block entries; zero blocks are skipped.
pub fn forward_blockdiag(
    x: &Tensor4,
    spec: &NeoCellSpec,
    params: &NeoCellParams,
) -> Result<Tensor4> {
    let ops = prepare(x, spec, params)?;
    let [batch, channels, _, width] = x.dims();
    let out_dims = output_shape(spec, x.dims())?;
    let (out_h, out_w) = (out_dims[2], out_dims[3]);
    let mut out = Tensor4::zeros(out_dims);
    let mut ax = vec![0.0; out_h * width];
    for n in 0..batch {
        for c in 0..channels {
            let (a, b, bias) = &ops[c];
            let src = x.plane(n, c);
            ax.iter_mut().for_each(|v| *v = 0.0);
            for (i, row) in a.iter().enumerate() {
                let dst = &mut ax[i * width..(i + 1) * width];
                for &(k, v) in row {
                    for (d, &xv) in dst.iter_mut().zip(&src[k * width..(k + 1) * width]) {
                        *d += v * xv;
                    }
                }
            }
            let dst = out.plane_mut(n, c);
            for i in 0..out_h {
                let orow = &mut dst[i * out_w..(i + 1) * out_w];
                for m in 0..width {
                    let v = ax[i * width + m];
                    for &(j, bv) in &b[m] {
                        orow[j] += v * bv;
                    }
                }
            }
            if let Some(bias) = bias {
                for (o, bv) in dst.iter_mut().zip(bias) {
                    *o += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Dense variant of [`forward_blockdiag`]: two full matrix products per
/// plane. Slower, kept as an independent route through [`matmul`].
pub fn forward_blockdiag_dense(
    x: &Tensor4,
    spec: &NeoCellSpec,
    params: &NeoCellParams,
) -> Result<Tensor4> {
    spec.validate()?;
    params.validate(spec)?;
    let out_dims = output_shape(spec, x.dims())?;
    let [batch, channels, height, width] = x.dims();
    let groups = spec.channel_groups();
    let mut out = Tensor4::zeros(out_dims);
    for c in 0..channels {
        let g = &spec.groups[groups[c]];
        let (a, b) =
            materialize_block_diagonal(g, &params.left[c], &params.right[c], height, width)?;
        let bias = params
            .bias
            .as_ref()
            .map(|bs| tile_bias(g, &bs[c], out_dims[2], out_dims[3]));
        for n in 0..batch {
            let xm = Matrix::from_vec(height, width, x.plane(n, c).to_vec())?;
            let y = matmul(&matmul(&a, &xm)?, &b)?;
            let dst = out.plane_mut(n, c);
            dst.copy_from_slice(y.data());
            if let Some(bias) = &bias {
                for (o, bv) in dst.iter_mut().zip(bias) {
                    *o += bv;
                }
            }
        }
    }
    Ok(out)
}

type SparseRows = Vec<Vec<(usize, f64)>>;

fn prepare(
    x: &Tensor4,
    spec: &NeoCellSpec,
    params: &NeoCellParams,
) -> Result<Vec<(SparseRows, SparseRows, Option<Vec<f64>>)>> {
    spec.validate()?;
    params.validate(spec)?;
    let out_dims = output_shape(spec, x.dims())?;
    let [_, channels, height, width] = x.dims();
    let groups = spec.channel_groups();
    (0..channels)
        .map(|c| {
            let g = &spec.groups[groups[c]];
            let (a, b) =
                materialize_block_diagonal(g, &params.left[c], &params.right[c], height, width)?;
            let bias = params
                .bias
                .as_ref()
                .map(|bs| tile_bias(g, &bs[c], out_dims[2], out_dims[3]));
            Ok((sparse_rows(&a), sparse_rows(&b), bias))
        })
        .collect()
}

fn sparse_rows(m: &Matrix) -> SparseRows {
    (0..m.rows())
        .map(|i| {
            (0..m.cols())
                .filter_map(|j| {
                    let v = m.get(i, j);
                    (v != 0.0).then_some((j, v))
                })
                .collect()
        })
        .collect()
}

/// The per-patch bias laid out over the whole output plane, following
/// the same shifted grid as the operators.
fn tile_bias(g: &GroupSpec, bias: &Matrix, out_h: usize, out_w: usize) -> Vec<f64> {
    let mut t = vec![0.0; out_h * out_w];
    for i in 0..out_h {
        for j in 0..out_w {
            let a = (i + out_h - g.shift % out_h) % out_h % g.h_out;
            let b = (j + out_w - g.shift % out_w) % out_w % g.w_out;
            t[i * out_w + j] = bias.get(a, b);
        }
    }
    t
}
