//! SGD with classical momentum and AdamW.

use std::collections::BTreeMap;

use crate::autodiff::{Grads, ParamId, ParamStore};
use crate::error::{param_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimKind {
    /// `v <- mu v + g; p <- p - lr v` (classical, not Nesterov).
    SgdMomentum {
        momentum: f64,
    },
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimSpec {
    pub kind: OptimKind,
    pub lr: f64,
    /// SGD: L2 term added to the gradient. AdamW: decoupled decay. Either
    /// way only parameters flagged for decay are affected.
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
}

impl OptimSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(param_err!(
                "learning rate must be positive, got {}",
                self.lr
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(param_err!("weight decay must be non-negative"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(param_err!("gradient clip must be positive, got {c}"));
            }
        }
        match self.kind {
            OptimKind::SgdMomentum { momentum } if !(0.0..1.0).contains(&momentum) => {
                Err(param_err!("momentum {momentum} outside [0, 1)"))
            }
            OptimKind::AdamW { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) =>
            {
                Err(param_err!(
                    "betas ({beta1}, {beta2}) must lie in [0, 1) and eps must be positive"
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Per-parameter optimizer buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimState {
    pub step: u64,
    first: BTreeMap<ParamId, Vec<f64>>,
    second: BTreeMap<ParamId, Vec<f64>>,
}

impl OptimState {
    pub fn new() -> Self {
        Self::default()
    }
}

fn check_finite(store: &ParamStore, grads: &Grads) -> Result<()> {
    for (id, g) in grads.iter() {
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of {}", store.get(id).name),
                index: i,
            });
        }
    }
    Ok(())
}

fn buffer<'a>(
    map: &'a mut BTreeMap<ParamId, Vec<f64>>,
    id: ParamId,
    len: usize,
) -> &'a mut Vec<f64> {
    map.entry(id).or_insert_with(|| vec![0.0; len])
}

pub fn sgd_step(
    store: &mut ParamStore,
    grads: &Grads,
    state: &mut OptimState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    check_finite(store, grads)?;
    state.step += 1;
    for (id, g) in grads.iter() {
        let p = store.get_mut(id);
        let wd = if p.decay { weight_decay } else { 0.0 };
        let v = buffer(&mut state.first, id, g.len());
        for ((pv, vv), &gv) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(v.iter_mut())
            .zip(g.data())
        {
            *vv = momentum * *vv + gv + wd * *pv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// AdamW with bias correction. Decay shrinks `p` by `lr * wd * p` before
/// the adaptive step.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &Grads,
    state: &mut OptimState,
    lr: f64,
    (beta1, beta2, eps): (f64, f64, f64),
    weight_decay: f64,
) -> Result<()> {
    check_finite(store, grads)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (id, g) in grads.iter() {
        let p = store.get_mut(id);
        let wd = if p.decay { weight_decay } else { 0.0 };
        let m = buffer(&mut state.first, id, g.len());
        for (mv, &gv) in m.iter_mut().zip(g.data()) {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
        }
        let v = buffer(&mut state.second, id, g.len());
        for (vv, &gv) in v.iter_mut().zip(g.data()) {
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
        }
        let (m, v) = (&state.first[&id], &state.second[&id]);
        for ((pv, mv), vv) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            *pv -= lr * wd * *pv;
            *pv -= lr * (mv / c1) / ((vv / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// One update of `spec` at learning rate `lr`, with optional clipping.
pub fn optimizer_step(
    spec: &OptimSpec,
    store: &mut ParamStore,
    grads: &mut Grads,
    state: &mut OptimState,
    lr: f64,
) -> Result<()> {
    if let Some(c) = spec.grad_clip {
        clip_grad_norm(grads, c);
    }
    match spec.kind {
        OptimKind::SgdMomentum { momentum } => {
            sgd_step(store, grads, state, lr, momentum, spec.weight_decay)
        }
        OptimKind::AdamW { beta1, beta2, eps } => adamw_step(
            store,
            grads,
            state,
            lr,
            (beta1, beta2, eps),
            spec.weight_decay,
        ),
    }
}
