//! Tape-based reverse-mode differentiation at tensor granularity.
//!
//! Every operation appends a node holding its output value and whatever
//! it needs for the backward pass. [`Tape::backward`] walks the nodes in
//! exact reverse order of recording, so gradient accumulation order is a
//! function of the recorded program only.

use super::neocell_grad::neocell_backward;
use super::params::{Grads, ParamId, ParamStore};
use crate::error::{shape_err, Error, Result};
use crate::neocell::{forward_blockdiag, forward_patchwise, NeoCellParams, NeoCellSpec};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::ops::{
    batchnorm_core, depth_to_space, gelu, gelu_grad_scalar, gemm_acc, global_avg_pool,
    pack_channels, pointwise_conv, scale_samples, space_to_depth, unpack_channels, BatchMoments,
    BatchNormStats, NormCache, NormMode,
};
use crate::tensor::{Matrix, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

/// Which forward kernel a NeoCell node runs. Both share one backward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeoCellPath {
    #[default]
    Patchwise,
    BlockDiagonal,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    NeoCell {
        x: NodeId,
        left: NodeId,
        right: NodeId,
        bias: Option<NodeId>,
        spec: NeoCellSpec,
        params: NeoCellParams,
    },
    Pointwise {
        x: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        cache: NormCache,
        train: bool,
    },
    Gelu {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    ScaleSamples {
        x: NodeId,
        scales: Vec<f64>,
    },
    SpaceToDepth {
        x: NodeId,
        p: usize,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    Dot {
        x: NodeId,
        weights: Vec<f64>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Matrix,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor4,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn as_matrix(t: &Tensor4) -> Result<Matrix> {
    let [n, c, r, k] = t.dims();
    if n != 1 || c != 1 {
        return Err(shape_err!(
            "expected a 1x1xRxC matrix node, got {:?}",
            t.dims()
        ));
    }
    Matrix::from_vec(r, k, t.data().to_vec())
}

fn matrix_node(m: Matrix) -> Tensor4 {
    let (r, c) = (m.rows(), m.cols());
    Tensor4::from_vec([1, 1, r, c], m.into_vec()).expect("sizes agree")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor4 {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor4, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant input; gradients flow into it but are not reported.
    pub fn input(&mut self, value: Tensor4) -> NodeId {
        self.push(value, Op::Input)
    }

    /// A leaf holding the current value of a trainable parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// Product of two `1 x 1 x R x C` matrix nodes.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let am = as_matrix(self.value(a))?;
        let bm = as_matrix(self.value(b))?;
        let y = crate::tensor::matmul(&am, &bm)?;
        Ok(self.push(matrix_node(y), Op::MatMul { a, b }))
    }

    /// NeoCell layer whose left/right/bias come from flat parameter
    /// nodes (channel-major, see [`NeoCellParams::from_flat`]).
    pub fn neocell(
        &mut self,
        x: NodeId,
        spec: &NeoCellSpec,
        left: NodeId,
        right: NodeId,
        bias: Option<NodeId>,
        path: NeoCellPath,
    ) -> Result<NodeId> {
        let params = NeoCellParams::from_flat(
            spec,
            self.value(left).data(),
            self.value(right).data(),
            bias.map(|b| self.value(b).data()),
        )?;
        let y = match path {
            NeoCellPath::Patchwise => forward_patchwise(self.value(x), spec, &params)?,
            NeoCellPath::BlockDiagonal => forward_blockdiag(self.value(x), spec, &params)?,
        };
        Ok(self.push(
            y,
            Op::NeoCell {
                x,
                left,
                right,
                bias,
                spec: spec.clone(),
                params,
            },
        ))
    }

    /// 1x1 convolution; `weight` is a `1 x 1 x C_out x C_in` node and
    /// `bias` a flat node of length `C_out`.
    pub fn pointwise(&mut self, x: NodeId, weight: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let w = as_matrix(self.value(weight))?;
        let y = pointwise_conv(self.value(x), &w, bias.map(|b| self.value(b).data()))?;
        Ok(self.push(y, Op::Pointwise { x, weight, bias }))
    }

    /// Batch normalization. In train mode the batch moments are returned
    /// so the caller can fold them into the running statistics.
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: &BatchNormStats,
        mode: NormMode,
    ) -> Result<(NodeId, Option<BatchMoments>)> {
        let (y, cache) = batchnorm_core(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            stats,
            mode,
        )?;
        let moments = cache.moments.clone();
        let id = self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
                train: mode == NormMode::Train,
            },
        );
        Ok((id, moments))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let y = gelu(self.value(x));
        self.push(y, Op::Gelu { x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims() != bv.dims() {
            return Err(shape_err!("add: dims {:?} and {:?}", av.dims(), bv.dims()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x + y)
            .collect();
        let y = Tensor4::from_vec(av.dims(), data)?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    /// Scales each sample by a constant (drop-path masks).
    pub fn scale_samples(&mut self, x: NodeId, scales: Vec<f64>) -> Result<NodeId> {
        let y = scale_samples(self.value(x), &scales)?;
        Ok(self.push(y, Op::ScaleSamples { x, scales }))
    }

    pub fn space_to_depth(&mut self, x: NodeId, p: usize) -> Result<NodeId> {
        let y = space_to_depth(self.value(x), p)?;
        Ok(self.push(y, Op::SpaceToDepth { x, p }))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let y = global_avg_pool(self.value(x));
        self.push(y, Op::GlobalAvgPool { x })
    }

    /// Scalar `sum_i weights[i] * x[i]`, handy as a probe loss.
    pub fn dot(&mut self, x: NodeId, weights: Vec<f64>) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.len() != weights.len() {
            return Err(shape_err!(
                "dot: {} weights for {} values",
                weights.len(),
                xv.len()
            ));
        }
        let s = xv.data().iter().zip(&weights).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor4::scalar(s), Op::Dot { x, weights }))
    }

    /// Mean softmax cross-entropy against (possibly soft) targets.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &Matrix) -> Result<NodeId> {
        let (loss, probs) = softmax_cross_entropy(self.value(logits), targets)?;
        Ok(self.push(
            Tensor4::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.clone(),
                probs,
            },
        ))
    }

    /// Back-propagates from the last recorded node, which must be a
    /// scalar, seeded with `loss_grad`. Returns a gradient for every
    /// parameter leaf on the tape (zeros if it does not affect the loss).
    ///
    /// A tape can be differentiated once; record a new one afterwards.
    pub fn backward(&mut self, loss_grad: f64) -> Result<Grads> {
        if self.consumed {
            return Err(Error::Usage(
                "backward called twice on the same tape".into(),
            ));
        }
        let Some(last) = self.nodes.last() else {
            return Err(Error::Usage("backward called on an empty tape".into()));
        };
        if last.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar final node, found dims {:?}",
                last.value.dims()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor4>> = vec![None; self.nodes.len()];
        grads[self.nodes.len() - 1] = Some(Tensor4::scalar(loss_grad));
        let mut out = Grads::new();

        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            let g = match grads[i].take() {
                Some(g) => g,
                None => {
                    if let Op::Param(pid) = node.op {
                        out.accumulate(pid, &Tensor4::zeros(node.value.dims()))?;
                    }
                    continue;
                }
            };
            let mut send = |id: NodeId, t: Tensor4| -> Result<()> {
                match &mut grads[id.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(t),
                }
                Ok(())
            };
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => out.accumulate(*pid, &g)?,
                Op::MatMul { a, b } => {
                    let am = as_matrix(self.value(*a))?;
                    let bm = as_matrix(self.value(*b))?;
                    let gm = as_matrix(&g)?;
                    let ga = crate::tensor::matmul(&gm, &bm.transpose())?;
                    let gb = crate::tensor::matmul(&am.transpose(), &gm)?;
                    send(*a, matrix_node(ga))?;
                    send(*b, matrix_node(gb))?;
                }
                Op::NeoCell {
                    x,
                    left,
                    right,
                    bias,
                    spec,
                    params,
                } => {
                    let (gx, gp) = neocell_backward(self.value(*x), spec, params, &g)?;
                    let (gl, gr, gb) = gp.to_flat();
                    send(*x, gx)?;
                    send(*left, Tensor4::from_vec(self.value(*left).dims(), gl)?)?;
                    send(*right, Tensor4::from_vec(self.value(*right).dims(), gr)?)?;
                    if let (Some(b), Some(gb)) = (bias, gb) {
                        send(*b, Tensor4::from_vec(self.value(*b).dims(), gb)?)?;
                    }
                }
                Op::Pointwise { x, weight, bias } => {
                    let (gx, gw, gb) = pointwise_backward(self.value(*x), self.value(*weight), &g)?;
                    send(*x, gx)?;
                    send(*weight, gw)?;
                    if let Some(b) = bias {
                        send(*b, Tensor4::from_vec(self.value(*b).dims(), gb)?)?;
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                    train,
                } => {
                    let gv = self.value(*gamma).data();
                    let (gx, ggamma, gbeta) = batchnorm_backward(&g, cache, gv, *train);
                    send(*x, gx)?;
                    send(
                        *gamma,
                        Tensor4::from_vec(self.value(*gamma).dims(), ggamma)?,
                    )?;
                    send(*beta, Tensor4::from_vec(self.value(*beta).dims(), gbeta)?)?;
                }
                Op::Gelu { x } => {
                    let xv = self.value(*x);
                    let data = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &d)| d * gelu_grad_scalar(v))
                        .collect();
                    send(*x, Tensor4::from_vec(xv.dims(), data)?)?;
                }
                Op::Add { a, b } => {
                    send(*a, g.clone())?;
                    send(*b, g)?;
                }
                Op::ScaleSamples { x, scales } => {
                    send(*x, scale_samples(&g, scales)?)?;
                }
                Op::SpaceToDepth { x, p } => {
                    send(*x, depth_to_space(&g, *p)?)?;
                }
                Op::GlobalAvgPool { x } => {
                    let [n, c, h, w] = self.value(*x).dims();
                    let inv = 1.0 / (h * w) as f64;
                    let gx = Tensor4::from_fn([n, c, h, w], |b, ch, _, _| g.at(b, ch, 0, 0) * inv);
                    send(*x, gx)?;
                }
                Op::Dot { x, weights } => {
                    let s = g.data()[0];
                    let data = weights.iter().map(|w| w * s).collect();
                    send(*x, Tensor4::from_vec(self.value(*x).dims(), data)?)?;
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let [n, k, _, _] = self.value(*logits).dims();
                    let scale = g.data()[0] / n as f64;
                    let mut data = vec![0.0; n * k];
                    for i in 0..n {
                        let tsum: f64 = (0..k).map(|j| targets.get(i, j)).sum();
                        for j in 0..k {
                            data[i * k + j] = scale * (tsum * probs[i * k + j] - targets.get(i, j));
                        }
                    }
                    send(*logits, Tensor4::from_vec([n, k, 1, 1], data)?)?;
                }
            }
        }
        Ok(out)
    }
}

/// Returns `(dX, dW, dbias)` for `Y = W X + b` applied per pixel.
pub(crate) fn pointwise_backward(
    x: &Tensor4,
    weight: &Tensor4,
    g: &Tensor4,
) -> Result<(Tensor4, Tensor4, Vec<f64>)> {
    let [n, ci, h, w] = x.dims();
    let [_, co, _, _] = g.dims();
    let len = n * h * w;
    let wd = weight.data();
    let xp = pack_channels(x.data(), n, ci, h * w);
    let gp = pack_channels(g.data(), n, co, h * w);
    let gb: Vec<f64> = gp.chunks_exact(len).map(|r| r.iter().sum()).collect();
    let mut gw = vec![0.0; co * ci];
    for (o, grow) in gp.chunks_exact(len).enumerate() {
        for (i, xrow) in xp.chunks_exact(len).enumerate() {
            gw[o * ci + i] = grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    // gx = W^T g, with W^T materialized so the product streams rows.
    let mut wt = vec![0.0; ci * co];
    for o in 0..co {
        for i in 0..ci {
            wt[i * co + o] = wd[o * ci + i];
        }
    }
    let mut gxp = vec![0.0; ci * len];
    gemm_acc(&wt, &gp, &mut gxp, ci, co, len);
    let gx = Tensor4::from_vec(x.dims(), unpack_channels(&gxp, n, ci, h * w))?;
    Ok((gx, Tensor4::from_vec(weight.dims(), gw)?, gb))
}

fn batchnorm_backward(
    g: &Tensor4,
    cache: &NormCache,
    gamma: &[f64],
    train: bool,
) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = g.dims();
    let count = (n * h * w) as f64;
    let mut gx = Tensor4::zeros(g.dims());
    let mut ggamma = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    for ch in 0..c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for b in 0..n {
            for (gv, xv) in g.plane(b, ch).iter().zip(cache.xhat.plane(b, ch)) {
                sum_g += gv;
                sum_gx += gv * xv;
            }
        }
        ggamma[ch] = sum_gx;
        gbeta[ch] = sum_g;
        let k = gamma[ch] * cache.inv_std[ch];
        for b in 0..n {
            let xh = cache.xhat.plane(b, ch).to_vec();
            let gp = g.plane(b, ch).to_vec();
            let dst = gx.plane_mut(b, ch);
            for ((d, gv), xv) in dst.iter_mut().zip(gp).zip(xh) {
                *d = if train {
                    k / count * (count * gv - sum_g - xv * sum_gx)
                } else {
                    k * gv
                };
            }
        }
    }
    (gx, ggamma, gbeta)
}
