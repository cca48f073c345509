//! Initialization ablation: both NeoCell initializations over a list of
//! seeds with otherwise identical settings.

use std::fmt::Write as _;
use std::fs;

use rayon::prelude::*;

use super::config::RunConfig;
use super::run::{train_run, RunReport, RunStatus};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::InitMethod;

/// Reference figures from the full-scale experiment (NeoNeXt-T, CIFAR-10,
/// 25 epochs, 5 seeds), carried for comparison only.
pub const REFERENCE_NEOINIT_ACC: f64 = 88.45;
pub const REFERENCE_RANDOM_ACC: f64 = 84.65;
pub const REFERENCE_GAP_PP: f64 = 3.8;

pub const ABLATION_CSV_HEADER: [&str; 6] = [
    "init",
    "seed",
    "status",
    "epochs_done",
    "final_val_loss",
    "final_val_acc",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub init: InitMethod,
    pub runs: Vec<RunReport>,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub diverged: usize,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl ArmSummary {
    fn new(init: InitMethod, runs: Vec<RunReport>) -> Self {
        let acc: Vec<f64> = runs.iter().map(|r| r.final_row().val_acc).collect();
        let loss: Vec<f64> = runs.iter().map(|r| r.final_row().val_loss).collect();
        let (mean_acc, std_acc) = mean_std(&acc);
        let (mean_loss, std_loss) = mean_std(&loss);
        let diverged = runs.iter().filter(|r| r.diverged()).count();
        ArmSummary {
            init,
            runs,
            mean_acc,
            std_acc,
            mean_loss,
            std_loss,
            diverged,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub neoinit: ArmSummary,
    pub random: ArmSummary,
}

impl AblationReport {
    /// NeoInit mean accuracy minus random-normal mean accuracy, in
    /// percentage points.
    pub fn gap_pp(&self) -> f64 {
        100.0 * (self.neoinit.mean_acc - self.random.mean_acc)
    }

    pub fn runs(&self) -> impl Iterator<Item = &RunReport> {
        self.neoinit.runs.iter().chain(&self.random.runs)
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "reference (NeoNeXt-T, CIFAR-10, 25 epochs): neoinit {REFERENCE_NEOINIT_ACC:.2}% vs random-normal {REFERENCE_RANDOM_ACC:.2}% (gap {REFERENCE_GAP_PP:+.1} pp)"
        )
        .unwrap();
        for arm in [&self.neoinit, &self.random] {
            writeln!(
                s,
                "{:<13} runs {}  acc {:.2}% +- {:.2}  loss {:.4} +- {:.4}  diverged {}",
                arm.init.to_string(),
                arm.runs.len(),
                100.0 * arm.mean_acc,
                100.0 * arm.std_acc,
                arm.mean_loss,
                arm.std_loss,
                arm.diverged
            )
            .unwrap();
        }
        write!(s, "gap {:+.2} pp", self.gap_pp()).unwrap();
        s
    }
}

/// Runs both arms over `cfg.seeds` (the config's own `init` is ignored)
/// and writes `ablation.csv` and `summary.txt` into `cfg.out_dir`.
pub fn run_ablation(cfg: &RunConfig, train: &Dataset, val: &Dataset) -> Result<AblationReport> {
    if cfg.seeds.len() < 2 {
        return Err(Error::Config("an ablation needs at least two seeds".into()));
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let jobs: Vec<(InitMethod, u64)> = [InitMethod::NeoInit, InitMethod::RandomNormal]
        .into_iter()
        .flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let reports: Vec<RunReport> = jobs
        .par_iter()
        .map(|&(init, seed)| train_run(cfg, init, seed, train, val))
        .collect::<Result<_>>()?;
    let (neo, rnd): (Vec<_>, Vec<_>) = reports
        .into_iter()
        .partition(|r| r.init == InitMethod::NeoInit);
    let report = AblationReport {
        neoinit: ArmSummary::new(InitMethod::NeoInit, neo),
        random: ArmSummary::new(InitMethod::RandomNormal, rnd),
    };

    let mut w = csv::Writer::from_path(cfg.out_dir.join("ablation.csv"))?;
    w.write_record(ABLATION_CSV_HEADER)?;
    for r in report.runs() {
        let status = match r.status {
            RunStatus::Completed => "completed".to_string(),
            RunStatus::Diverged { epoch, step } => format!("diverged@epoch{epoch}/step{step}"),
        };
        let f = r.final_row();
        w.write_record([
            r.init.to_string(),
            r.seed.to_string(),
            status,
            f.epoch.to_string(),
            f.val_loss.to_string(),
            f.val_acc.to_string(),
        ])?;
    }
    w.flush()?;
    fs::write(
        cfg.out_dir.join("summary.txt"),
        report.summary_text() + "\n",
    )?;
    Ok(report)
}
