//! A fixed battery of finite-difference checks covering every layer the
//! model is built from, shared by the command line and the test suites.

use super::fdcheck::{fd_check, FdConfig, FdReport};
use super::params::ParamStore;
use super::tape::{NeoCellPath, Tape};
use crate::error::Result;
use crate::neocell::{output_shape, GroupSpec, NeoCellParams, NeoCellSpec};
use crate::nn::{smooth_targets, BatchNormStats, InitMethod, Mode, Model, ModelSpec, NormMode};
use crate::rng::Rng;
use crate::tensor::Tensor4;

#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: String,
    pub report: FdReport,
}

fn randn(rng: &mut Rng, dims: [usize; 4]) -> Tensor4 {
    Tensor4::from_fn(dims, |_, _, _, _| rng.normal())
}

/// Differentiates `record` once, then compares against central
/// differences of the same function.
fn run_case<F>(store: &ParamStore, cfg: &FdConfig, record: F) -> Result<FdReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<f64>,
{
    let mut tape = Tape::new();
    record(&mut tape, store)?;
    let grads = tape.backward(1.0)?;
    fd_check(|s| record(&mut Tape::new(), s), store, &grads, cfg)
}

fn neocell_case(
    spec: &NeoCellSpec,
    dims: [usize; 4],
    path: NeoCellPath,
    rng: &mut Rng,
    cfg: &FdConfig,
) -> Result<FdReport> {
    let (left, right, bias) = NeoCellParams::random_normal(spec, rng)?.to_flat();
    let mut store = ParamStore::new();
    let xi = store.add("input", randn(rng, dims), false);
    let li = store.add("left", Tensor4::flat(left), true);
    let ri = store.add("right", Tensor4::flat(right), true);
    let bi = bias.map(|b| store.add("bias", Tensor4::flat(b), false));
    let n_out: usize = output_shape(spec, dims)?.iter().product();
    let w: Vec<f64> = (0..n_out).map(|_| rng.normal()).collect();
    run_case(&store, cfg, |t, s| {
        let x = t.param(s, xi);
        let (l, r) = (t.param(s, li), t.param(s, ri));
        let b = bi.map(|b| t.param(s, b));
        let y = t.neocell(x, spec, l, r, b, path)?;
        let loss = t.dot(y, w.clone())?;
        Ok(t.value(loss).data()[0])
    })
}

fn pointwise_norm_case(mode: NormMode, rng: &mut Rng, cfg: &FdConfig) -> Result<FdReport> {
    let mut store = ParamStore::new();
    let xi = store.add("input", randn(rng, [3, 4, 3, 2]), false);
    let wi = store.add("pw.weight", randn(rng, [1, 1, 5, 4]), true);
    let bi = store.add("pw.bias", randn(rng, [1, 1, 1, 5]), false);
    let gi = store.add(
        "bn.gamma",
        Tensor4::flat((0..5).map(|_| 1.0 + 0.3 * rng.normal()).collect()),
        false,
    );
    let be = store.add("bn.beta", randn(rng, [1, 1, 1, 5]), false);
    let stats = BatchNormStats {
        mean: (0..5).map(|_| rng.normal()).collect(),
        var: (0..5).map(|_| 0.5 + rng.uniform()).collect(),
        ..BatchNormStats::new(5)
    };
    let w: Vec<f64> = (0..3 * 5 * 6).map(|_| rng.normal()).collect();
    run_case(&store, cfg, |t, s| {
        let x = t.param(s, xi);
        let (wn, bn) = (t.param(s, wi), t.param(s, bi));
        let y = t.pointwise(x, wn, Some(bn))?;
        let (g, b) = (t.param(s, gi), t.param(s, be));
        let (y, _) = t.batchnorm(y, g, b, &stats, mode)?;
        let y = t.gelu(y);
        let loss = t.dot(y, w.clone())?;
        Ok(t.value(loss).data()[0])
    })
}

fn gelu_case(rng: &mut Rng, cfg: &FdConfig) -> Result<FdReport> {
    let mut store = ParamStore::new();
    let xi = store.add(
        "input",
        Tensor4::flat((0..17).map(|i| -4.0 + 0.5 * i as f64).collect()),
        false,
    );
    let w: Vec<f64> = (0..17).map(|_| rng.normal()).collect();
    run_case(&store, cfg, |t, s| {
        let x = t.param(s, xi);
        let y = t.gelu(x);
        let loss = t.dot(y, w.clone())?;
        Ok(t.value(loss).data()[0])
    })
}

fn model_case(rng: &mut Rng, cfg: &FdConfig) -> Result<FdReport> {
    let spec = ModelSpec::preset("micro", 64, 10)?;
    let model = Model::build(&spec, InitMethod::NeoInit, rng)?;
    let x = Tensor4::from_fn([2, 3, 64, 64], |_, _, _, _| rng.uniform());
    let labels = [rng.below(10), rng.below(10)];
    let targets = smooth_targets(&labels, 10, 0.1);
    let drop_seed = rng.below(1 << 30) as u64;
    run_case(&model.params, cfg, |t, s| {
        let f = model.forward(t, s, &x, Mode::Train { drop_seed })?;
        let loss = t.cross_entropy(f.logits, &targets)?;
        Ok(t.value(loss).data()[0])
    })
}

fn mixed(bias: bool) -> Result<NeoCellSpec> {
    NeoCellSpec::new(
        vec![
            GroupSpec::square(0..1, 4, 1)?,
            GroupSpec::square(1..2, 7, 1)?,
        ],
        bias,
    )
}

/// Runs every case with `cfg`. Case inputs are drawn from `seed`; the
/// full-model case samples `model_entries` entries per parameter.
pub fn standard_suite(seed: u64, cfg: &FdConfig, model_entries: usize) -> Result<Vec<GradCase>> {
    let mut cases = Vec::new();
    let mut stream = 0u64;
    let mut next_rng = || {
        stream += 1;
        Rng::with_stream(seed, stream)
    };
    let neocells: Vec<(&str, NeoCellSpec, [usize; 4], NeoCellPath)> = vec![
        (
            "neocell 4x4+7x7 shift 1",
            mixed(false)?,
            [1, 2, 28, 28],
            NeoCellPath::Patchwise,
        ),
        (
            "neocell 4x4+7x7 shift 1 bias, block-diagonal",
            mixed(true)?,
            [2, 2, 28, 28],
            NeoCellPath::BlockDiagonal,
        ),
        (
            "neocell 2->1 bias",
            NeoCellSpec::uniform(3, (2, 2), (1, 1), true)?,
            [2, 3, 8, 8],
            NeoCellPath::Patchwise,
        ),
        (
            "neocell 2->3, block-diagonal",
            NeoCellSpec::uniform(2, (2, 2), (3, 3), false)?,
            [1, 2, 6, 4],
            NeoCellPath::BlockDiagonal,
        ),
        (
            "neocell 4x2->2x3 bias",
            NeoCellSpec::uniform(2, (4, 2), (2, 3), true)?,
            [1, 2, 8, 6],
            NeoCellPath::Patchwise,
        ),
    ];
    for (name, spec, dims, path) in &neocells {
        let report = neocell_case(spec, *dims, *path, &mut next_rng(), cfg)?;
        cases.push(GradCase {
            name: name.to_string(),
            report,
        });
    }
    for (name, mode) in [
        ("pointwise+batchnorm(train)+gelu", NormMode::Train),
        ("pointwise+batchnorm(eval)+gelu", NormMode::Eval),
    ] {
        let report = pointwise_norm_case(mode, &mut next_rng(), cfg)?;
        cases.push(GradCase {
            name: name.into(),
            report,
        });
    }
    cases.push(GradCase {
        name: "gelu on [-4, 4]".into(),
        report: gelu_case(&mut next_rng(), cfg)?,
    });
    let model_cfg = FdConfig {
        max_entries: model_entries,
        ..cfg.clone()
    };
    cases.push(GradCase {
        name: "micro model loss".into(),
        report: model_case(&mut next_rng(), &model_cfg)?,
    });
    Ok(cases)
}
