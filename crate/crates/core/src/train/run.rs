//! The training loop and per-epoch metrics.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;

use super::config::{DataSource, RunConfig};
use super::optim::{optimizer_step, OptimState};
use super::schedule::lr_at;
use crate::autodiff::Tape;
use crate::data::{
    augment, load_cifar10, split_indices, synth_task, BatchPlan, Dataset, CIFAR_DIR_ENV,
};
use crate::error::{Error, Result};
use crate::nn::{smooth_targets, softmax_cross_entropy, InitMethod, Mode, Model};
use crate::rng::Rng;
use crate::tensor::Tensor4;

/// Header of the per-epoch CSV.
pub const EPOCH_CSV_HEADER: [&str; 6] = [
    "epoch",
    "train_loss",
    "val_loss",
    "val_acc",
    "lr",
    "wall_time_s",
];

// Stream ids keep the random draws of different consumers independent
// for the same run seed.
const INIT_STREAM: u64 = 1 << 40;
const PLAN_STREAM: u64 = 2 << 40;
const AUGMENT_STREAM: u64 = 3 << 40;
const DROP_STREAM: u64 = 4 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean training loss over the epoch; `None` for the initial evaluation.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// Training loss or a gradient became non-finite at this epoch and
    /// global step.
    Diverged {
        epoch: usize,
        step: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub seed: u64,
    pub init: InitMethod,
    pub status: RunStatus,
    pub rows: Vec<EpochRow>,
    pub csv_path: PathBuf,
}

impl RunReport {
    /// Last evaluation with a finite validation loss. For diverged runs
    /// this is the score the run reached before breaking down.
    pub fn final_row(&self) -> &EpochRow {
        self.rows
            .iter()
            .rev()
            .find(|r| r.val_loss.is_finite())
            .unwrap_or(&self.rows[0])
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }
}

/// Train and validation sets for a config.
pub fn prepare_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.data;
    match d.source {
        DataSource::Synthetic => {
            let n_train = d.train_size.unwrap_or(1000);
            let n_val = d.val_size.unwrap_or(500);
            let all = synth_task(&mut Rng::new(d.seed), n_train + n_val, cfg.classes)?;
            let split = split_indices(all.len(), n_val, d.seed)?;
            Ok((all.subset(&split.train), all.subset(&split.val)))
        }
        DataSource::Cifar10 => {
            let dir = match &d.dir {
                Some(p) => p.clone(),
                None => std::env::var_os(CIFAR_DIR_ENV)
                    .map(PathBuf::from)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "CIFAR-10 needs data.dir or the {CIFAR_DIR_ENV} environment variable"
                        ))
                    })?,
            };
            let (train, test) = load_cifar10(&dir)?;
            let cap = |ds: Dataset, n: Option<usize>| match n {
                Some(n) if n < ds.len() => ds.subset(&(0..n).collect::<Vec<_>>()),
                _ => ds,
            };
            Ok((cap(train, d.train_size), cap(test, d.val_size)))
        }
        DataSource::Imagenet => Err(Error::Config(
            "ImageNet configs are kept for reference and cannot be run".into(),
        )),
    }
}

/// Mean hard-label cross-entropy and accuracy in eval mode.
pub fn evaluate(model: &Model, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    let plan = BatchPlan {
        seed: 0,
        batch_size,
        shuffle: false,
        epoch: 0,
        drop_last: false,
    };
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for idx in plan.batches(data.len())? {
        let (x, labels) = data.gather(&idx);
        let logits = model.predict(&x)?;
        let k = data.classes;
        let t = smooth_targets(&labels, k, 0.0);
        let (loss, _) = softmax_cross_entropy(
            &Tensor4::from_vec([labels.len(), k, 1, 1], logits.clone())?,
            &t,
        )?;
        loss_sum += loss * labels.len() as f64;
        for (i, &l) in labels.iter().enumerate() {
            let row = &logits[i * k..(i + 1) * k];
            let best = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            correct += usize::from(best == l);
        }
    }
    let n = data.len().max(1) as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

fn write_csv(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EPOCH_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.map(|v| v.to_string()).unwrap_or_default(),
            r.val_loss.to_string(),
            r.val_acc.to_string(),
            r.lr.to_string(),
            format!("{:.3}", r.wall_time_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains one model with `seed` and `init`, writing
/// `<out>/<init>-seed<seed>/metrics.csv` and a final checkpoint.
///
/// A non-finite loss or gradient ends the run with
/// [`RunStatus::Diverged`]; it is not an error.
pub fn train_run(
    cfg: &RunConfig,
    init: InitMethod,
    seed: u64,
    train: &Dataset,
    val: &Dataset,
) -> Result<RunReport> {
    let spec = cfg.model_spec()?;
    let optim = cfg.optim_spec()?;
    let schedule = cfg.schedule_spec();
    let policy = cfg.augment_policy()?;
    let run_dir = cfg.out_dir.join(format!("{init}-seed{seed}"));
    fs::create_dir_all(&run_dir)?;
    let csv_path = run_dir.join("metrics.csv");

    let start = Instant::now();
    let mut model = Model::build(&spec, init, &mut Rng::with_stream(seed, INIT_STREAM))?;
    let mut state = OptimState::new();

    let steps_per_epoch = (train.len() / cfg.batch_size).max(1) as u64;
    let (val_loss, val_acc) = evaluate(&model, val, cfg.eval_batch_size)?;
    let mut rows = vec![EpochRow {
        epoch: 0,
        train_loss: None,
        val_loss,
        val_acc,
        lr: lr_at(&schedule, 0, steps_per_epoch),
        wall_time_s: start.elapsed().as_secs_f64(),
    }];
    let mut status = RunStatus::Completed;
    let mut step: u64 = 0;

    'epochs: for epoch in 1..=cfg.epochs {
        let plan = BatchPlan {
            seed: seed ^ PLAN_STREAM,
            batch_size: cfg.batch_size,
            shuffle: true,
            epoch: epoch as u64,
            drop_last: train.len() >= cfg.batch_size,
        };
        let mut aug_rng = Rng::with_stream(seed, AUGMENT_STREAM + epoch as u64);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let mut lr = lr_at(&schedule, step, steps_per_epoch);
        for idx in plan.batches(train.len())? {
            let (x, labels) = train.gather(&idx);
            let t = smooth_targets(&labels, train.classes, cfg.label_smoothing);
            let (x, t) = augment(&x, &t, &mut aug_rng, policy)?;
            let mut tape = Tape::new();
            let drop_seed = Rng::with_stream(seed, DROP_STREAM + step).next_u64();
            let f = model.forward(&mut tape, &model.params, &x, Mode::Train { drop_seed })?;
            let loss_node = tape.cross_entropy(f.logits, &t)?;
            let loss = tape.value(loss_node).data()[0];
            if !loss.is_finite() {
                status = RunStatus::Diverged { epoch, step };
                break 'epochs;
            }
            let mut grads = tape.backward(1.0)?;
            lr = lr_at(&schedule, step, steps_per_epoch);
            match optimizer_step(&optim, &mut model.params, &mut grads, &mut state, lr) {
                Ok(()) => {}
                Err(Error::NonFinite { .. }) => {
                    status = RunStatus::Diverged { epoch, step };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            model.apply_moments(&f.moments);
            loss_sum += loss * labels.len() as f64;
            seen += labels.len();
            step += 1;
        }
        let (val_loss, val_acc) = evaluate(&model, val, cfg.eval_batch_size)?;
        rows.push(EpochRow {
            epoch,
            train_loss: Some(loss_sum / seen.max(1) as f64),
            val_loss,
            val_acc,
            lr,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if !val_loss.is_finite() {
            status = RunStatus::Diverged { epoch, step };
            break;
        }
    }
    write_csv(&csv_path, &rows)?;
    model.save_checkpoint(&run_dir.join("checkpoint"))?;
    Ok(RunReport {
        seed,
        init,
        status,
        rows,
        csv_path,
    })
}
