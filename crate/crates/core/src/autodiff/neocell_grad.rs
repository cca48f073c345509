use crate::error::{shape_err, Result};
use crate::neocell::{output_shape, NeoCellParams, NeoCellSpec};
use crate::tensor::{Matrix, Tensor4};

/// Gradients of the NeoCell parameters, laid out like [`NeoCellParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct NeoCellGrads {
    pub left: Vec<Matrix>,
    pub right: Vec<Matrix>,
    pub bias: Option<Vec<Matrix>>,
}

impl NeoCellGrads {
    pub fn to_flat(&self) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
        NeoCellParams {
            left: self.left.clone(),
            right: self.right.clone(),
            bias: self.bias.clone(),
        }
        .to_flat()
    }
}

/// Vector-Jacobian product of the NeoCell forward.
///
/// For each patch `X` with output gradient `G`:
///
/// ```text
/// dL    += G (X R)^T
/// dR    += (L X)^T G
/// dX     = L^T G R^T
/// dbias += G
/// ```
///
/// Loops run channel, then sample, then patch, so weight gradients are
/// summed over patches first and samples second in a fixed order. Shifted
/// groups read `X` and `G` through the same cyclic indexing as the forward.
/// Both forward paths compute the same function and share this rule.
pub fn neocell_backward(
    x: &Tensor4,
    spec: &NeoCellSpec,
    params: &NeoCellParams,
    grad_out: &Tensor4,
) -> Result<(Tensor4, NeoCellGrads)> {
    spec.validate()?;
    params.validate(spec)?;
    let out_dims = output_shape(spec, x.dims())?;
    if grad_out.dims() != out_dims {
        return Err(shape_err!(
            "neocell_backward: output gradient has dims {:?}, forward output has {:?}",
            grad_out.dims(),
            out_dims
        ));
    }
    let [batch, channels, height, width] = x.dims();
    let (out_h, out_w) = (out_dims[2], out_dims[3]);
    let groups = spec.channel_groups();

    let mut gx = Tensor4::zeros(x.dims());
    let mut gl: Vec<Matrix> = params
        .left
        .iter()
        .map(|m| Matrix::zeros(m.rows(), m.cols()))
        .collect();
    let mut gr: Vec<Matrix> = params
        .right
        .iter()
        .map(|m| Matrix::zeros(m.rows(), m.cols()))
        .collect();
    let mut gb: Option<Vec<Matrix>> = params.bias.as_ref().map(|bs| {
        bs.iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect()
    });

    for c in 0..channels {
        let g = &spec.groups[groups[c]];
        let (h, w, ho, wo, s) = (g.h, g.w, g.h_out, g.w_out, g.shift);
        let l = params.left[c].data();
        let r = params.right[c].data();
        let mut xp = vec![0.0; h * w];
        let mut gp = vec![0.0; ho * wo];
        let mut xr = vec![0.0; h * wo];
        let mut lx = vec![0.0; ho * w];
        let mut grt = vec![0.0; ho * w];
        for n in 0..batch {
            let src = x.plane(n, c);
            let gsrc = grad_out.plane(n, c);
            for pi in 0..height / h {
                for pj in 0..width / w {
                    for k in 0..h {
                        let row = ((pi * h + k + s) % height) * width;
                        for q in 0..w {
                            xp[k * w + q] = src[row + (pj * w + q + s) % width];
                        }
                    }
                    for a in 0..ho {
                        let row = ((pi * ho + a + s) % out_h) * out_w;
                        for b in 0..wo {
                            gp[a * wo + b] = gsrc[row + (pj * wo + b + s) % out_w];
                        }
                    }

                    // X R and L X for the weight gradients.
                    xr.iter_mut().for_each(|v| *v = 0.0);
                    for k in 0..h {
                        for q in 0..w {
                            let xv = xp[k * w + q];
                            for b in 0..wo {
                                xr[k * wo + b] += xv * r[q * wo + b];
                            }
                        }
                    }
                    lx.iter_mut().for_each(|v| *v = 0.0);
                    for a in 0..ho {
                        for k in 0..h {
                            let lv = l[a * h + k];
                            for q in 0..w {
                                lx[a * w + q] += lv * xp[k * w + q];
                            }
                        }
                    }

                    let gld = gl[c].data_mut();
                    for a in 0..ho {
                        for k in 0..h {
                            let mut acc = 0.0;
                            for b in 0..wo {
                                acc += gp[a * wo + b] * xr[k * wo + b];
                            }
                            gld[a * h + k] += acc;
                        }
                    }
                    let grd = gr[c].data_mut();
                    for q in 0..w {
                        for b in 0..wo {
                            let mut acc = 0.0;
                            for a in 0..ho {
                                acc += lx[a * w + q] * gp[a * wo + b];
                            }
                            grd[q * wo + b] += acc;
                        }
                    }
                    if let Some(gb) = gb.as_mut() {
                        for (d, v) in gb[c].data_mut().iter_mut().zip(&gp) {
                            *d += v;
                        }
                    }

                    // dX = L^T (G R^T)
                    for a in 0..ho {
                        for q in 0..w {
                            let mut acc = 0.0;
                            for b in 0..wo {
                                acc += gp[a * wo + b] * r[q * wo + b];
                            }
                            grt[a * w + q] = acc;
                        }
                    }
                    let dst = gx.plane_mut(n, c);
                    for k in 0..h {
                        let row = ((pi * h + k + s) % height) * width;
                        for q in 0..w {
                            let mut acc = 0.0;
                            for a in 0..ho {
                                acc += l[a * h + k] * grt[a * w + q];
                            }
                            dst[row + (pj * w + q + s) % width] = acc;
                        }
                    }
                }
            }
        }
    }
    Ok((
        gx,
        NeoCellGrads {
            left: gl,
            right: gr,
            bias: gb,
        },
    ))
}
