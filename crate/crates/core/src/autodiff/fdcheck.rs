//! Central finite-difference verification of analytic gradients.

use std::fmt;

use super::params::{Grads, ParamStore};
use crate::error::{param_err, Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct FdConfig {
    pub eps: f64,
    /// Maximum relative error for a parameter to pass.
    pub threshold: f64,
    /// Denominator floor in the relative error, so entries whose true
    /// gradient is zero are compared on an absolute scale.
    pub floor: f64,
    /// Entries checked per parameter; larger tensors are sampled.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            eps: 1e-5,
            threshold: 1e-4,
            floor: 1e-6,
            max_entries: usize::MAX,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdEntry {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index of the entry with the largest relative error.
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    pub threshold: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for FdReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .entries
            .iter()
            .map(|e| e.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        writeln!(
            f,
            "{:<width$}  {:>7}  {:>11}  {:>11}  {:>6}  result",
            "param", "checked", "max_rel", "max_abs", "worst"
        )?;
        for e in &self.entries {
            writeln!(
                f,
                "{:<width$}  {:>7}  {:>11.3e}  {:>11.3e}  {:>6}  {}",
                e.name,
                e.checked,
                e.max_rel_err,
                e.max_abs_err,
                e.worst_index,
                if e.passed { "pass" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "threshold {:.1e}: {}",
            self.threshold,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against `(f(p + eps e) - f(p - eps e)) / (2 eps)`
/// for every parameter in `store`, perturbing one scalar at a time.
///
/// `f` must be a deterministic function of the store's values. A
/// non-finite loss returns [`Error::NonFinite`] with the flat index of the
/// perturbed entry.
pub fn fd_check<F>(
    mut f: F,
    store: &ParamStore,
    analytic: &Grads,
    cfg: &FdConfig,
) -> Result<FdReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(cfg.eps > 0.0) {
        return Err(param_err!(
            "finite-difference step must be positive, got {}",
            cfg.eps
        ));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut work = store.clone();
    let mut entries = Vec::with_capacity(store.len());
    for (id, param) in store.iter() {
        let grad = analytic
            .get(id)
            .ok_or_else(|| param_err!("no analytic gradient for parameter {}", param.name))?;
        if grad.dims() != param.value.dims() {
            return Err(param_err!(
                "gradient dims {:?} differ from parameter {} dims {:?}",
                grad.dims(),
                param.name,
                param.value.dims()
            ));
        }
        let len = param.value.len();
        let indices: Vec<usize> = if len <= cfg.max_entries {
            (0..len).collect()
        } else {
            let mut all: Vec<usize> = (0..len).collect();
            rng.shuffle(&mut all);
            all.truncate(cfg.max_entries);
            all.sort_unstable();
            all
        };
        let mut entry = FdEntry {
            name: param.name.clone(),
            checked: indices.len(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst_index: 0,
            passed: true,
        };
        for &i in &indices {
            let orig = param.value.data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + cfg.eps;
            let plus = f(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig - cfg.eps;
            let minus = f(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("loss while perturbing {}", param.name),
                    index: i,
                });
            }
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = grad.data()[i];
            let rel = relative_error(a, numeric, cfg.floor);
            entry.max_abs_err = entry.max_abs_err.max((a - numeric).abs());
            if rel > entry.max_rel_err {
                entry.max_rel_err = rel;
                entry.worst_index = i;
            }
        }
        entry.passed = entry.max_rel_err <= cfg.threshold;
        entries.push(entry);
    }
    Ok(FdReport {
        entries,
        threshold: cfg.threshold,
    })
}
