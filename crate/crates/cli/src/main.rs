//! `neonext`: benchmarks, gradient and equivalence checks, NeoInit dumps,
//! training runs and the initialization ablation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use neonext_core::autodiff::{standard_suite, FdConfig};
use neonext_core::bench::{append_csv, run_bench, BenchConfig, BenchOp, BenchShape};
use neonext_core::neocell::{run_equivalence, EQUIV_CSV_HEADER};
use neonext_core::neoinit::InitSpec;
use neonext_core::nn::InitMethod;
use neonext_core::train::{prepare_data, run_ablation, train_run, RunConfig, RunStatus};
use neonext_core::Tensor4;

/// Exit status of `train` when at least one run diverged.
const EXIT_DIVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "neonext", version, about = "NeoCell operator toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time NeoCell or depthwise convolution on random inputs.
    Bench(BenchArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Train one model per seed from a run config.
    Train(TrainArgs),
    /// Train both initializations over the config's seeds.
    Ablate(AblateArgs),
    /// Write a NeoInit matrix as a binary tensor and a text grid.
    InitDump(InitDumpArgs),
    /// Check the block-diagonal paths against the patch-wise reference.
    EquivCheck(EquivArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// neocell, dwconv or blockdiag.
    #[arg(long, default_value = "neocell")]
    op: String,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 96)]
    c: usize,
    #[arg(long, default_value_t = 56)]
    h: usize,
    #[arg(long, default_value_t = 56)]
    w: usize,
    /// Patch size (NeoCell) or kernel size (depthwise, odd).
    #[arg(long, default_value_t = 7)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    /// More than one runs the plane-parallel kernel on that many threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// CSV file to append the result row to.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
    /// Entries sampled per parameter of the full-model case.
    #[arg(long, default_value_t = 4)]
    model_entries: usize,
    /// CSV file with one row per checked parameter.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Train only this seed instead of the config's list.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's initialization.
    #[arg(long)]
    init: Option<InitMethod>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Seed of the synthetic data and the train/validation split.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated run seeds replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct InitDumpArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the Gaussian noise and emit the bare pattern.
    #[arg(long)]
    no_noise: bool,
    /// Binary tensor path; the text grid goes next to it with `.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EquivArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
    /// CSV file with one row per trial.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(a) => bench(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Train(a) => train(a),
        Command::Ablate(a) => ablate(a),
        Command::InitDump(a) => init_dump(a),
        Command::EquivCheck(a) => equiv_check(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    let op: BenchOp = a.op.parse()?;
    let cfg = BenchConfig {
        op,
        shape: BenchShape {
            batch: a.batch,
            c: a.c,
            h: a.h,
            w: a.w,
            k: a.k,
        },
        iters: a.iters,
        warmup: a.warmup,
        threads: a.threads,
        seed: a.seed,
    };
    let r = run_bench(&cfg)?;
    println!(
        "{op} {}x{}x{}x{} k={} threads={}: median {:.3} ms (min {:.3}, mean {:.3}) over {} iters, {} multiplies, {:.3e} mult/s",
        a.batch,
        a.c,
        a.h,
        a.w,
        a.k,
        a.threads,
        1e3 * r.median_s,
        1e3 * r.min_s,
        1e3 * r.mean_s,
        r.iters,
        r.multiplies,
        r.mults_per_s
    );
    if let Some(path) = &a.out {
        append_csv(path, &r)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let cfg = FdConfig {
        eps: a.eps,
        threshold: a.threshold,
        seed: a.seed,
        ..FdConfig::default()
    };
    let cases = standard_suite(a.seed, &cfg, a.model_entries)?;
    let mut ok = true;
    for case in &cases {
        println!("== {}\n{}\n", case.name, case.report);
        ok &= case.report.passed();
    }
    if let Some(path) = &a.out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "case",
            "param",
            "checked",
            "max_rel_err",
            "max_abs_err",
            "passed",
        ])?;
        for case in &cases {
            for e in &case.report.entries {
                w.write_record([
                    case.name.clone(),
                    e.name.clone(),
                    e.checked.to_string(),
                    format!("{:e}", e.max_rel_err),
                    format!("{:e}", e.max_abs_err),
                    e.passed.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    println!("gradcheck: {}", if ok { "pass" } else { "FAIL" });
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn load_config(path: &Path, out_dir: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(dir) = out_dir {
        cfg.out_dir = dir;
    }
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&a.config, a.out_dir)?;
    if let Some(seed) = a.seed {
        cfg.seeds = vec![seed];
    }
    let init = a.init.unwrap_or(cfg.init);
    let (train_set, val_set) = prepare_data(&cfg)?;
    let mut diverged = false;
    for &seed in &cfg.seeds {
        let r = train_run(&cfg, init, seed, &train_set, &val_set)?;
        let f = r.final_row();
        let status = match r.status {
            RunStatus::Completed => "completed".to_string(),
            RunStatus::Diverged { epoch, step } => {
                diverged = true;
                format!("diverged at epoch {epoch}, step {step}")
            }
        };
        println!(
            "{init} seed {seed}: {status}; epoch {} val_loss {:.4} val_acc {:.4} -> {}",
            f.epoch,
            f.val_loss,
            f.val_acc,
            r.csv_path.display()
        );
    }
    Ok(if diverged {
        ExitCode::from(EXIT_DIVERGED)
    } else {
        ExitCode::SUCCESS
    })
}

fn ablate(a: AblateArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&a.config, a.out_dir)?;
    if let Some(seed) = a.seed {
        cfg.data.seed = seed;
    }
    if let Some(seeds) = a.seeds {
        cfg.seeds = seeds;
    }
    cfg.validate()?;
    let (train_set, val_set) = prepare_data(&cfg)?;
    let report = run_ablation(&cfg, &train_set, &val_set)?;
    println!("{}", report.summary_text());
    Ok(ExitCode::SUCCESS)
}

fn grid_text(t: &Tensor4) -> String {
    let [_, _, rows, cols] = t.dims();
    let mut s = String::new();
    for i in 0..rows {
        let line: Vec<String> = (0..cols)
            .map(|j| format!("{:>10.6}", t.at(0, 0, i, j)))
            .collect();
        s.push_str(line.join(" ").trim_start());
        s.push('\n');
    }
    s
}

fn init_dump(a: InitDumpArgs) -> Result<ExitCode> {
    if a.rows == 0 || a.cols == 0 {
        bail!("rows and cols must be positive");
    }
    let m = InitSpec::new(a.rows, a.cols, !a.no_noise)
        .with_seed(a.seed)
        .generate()?;
    let t = Tensor4::from_vec([1, 1, a.rows, a.cols], m.into_vec())?;
    let grid = grid_text(&t);
    print!("{grid}");
    if let Some(path) = &a.out {
        let file =
            fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        t.write_to(std::io::BufWriter::new(file))?;
        fs::write(path.with_extension("txt"), &grid)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn equiv_check(a: EquivArgs) -> Result<ExitCode> {
    if a.trials == 0 {
        bail!("trials must be at least 1");
    }
    let trials = run_equivalence(a.trials, a.seed)?;
    let worst = trials
        .iter()
        .max_by(|x, y| x.max_diff().total_cmp(&y.max_diff()))
        .expect("at least one trial");
    if let Some(path) = &a.out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(EQUIV_CSV_HEADER)?;
        for t in &trials {
            w.write_record(t.csv_record())?;
        }
        w.flush()?;
    }
    let ok = worst.max_diff() <= a.tolerance;
    println!(
        "equiv-check: {} trials, max |blockdiag - patchwise| = {:e} (trial {}, {}), tolerance {:e}: {}",
        trials.len(),
        worst.max_diff(),
        worst.index,
        worst.groups,
        a.tolerance,
        if ok { "pass" } else { "FAIL" }
    );
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
