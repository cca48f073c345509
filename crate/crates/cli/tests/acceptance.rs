//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Built without the libtest harness so the lines show up in plain
//! `cargo test` output.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use neonext_core::autodiff::{standard_suite, FdConfig};
use neonext_core::bench::{dwconv_valid_counted, flops_dwconv, flops_neocell};
use neonext_core::data::CIFAR_DIR_ENV;
use neonext_core::neocell::{
    forward_blockdiag, forward_patchwise, forward_patchwise_counted, run_equivalence,
};
use neonext_core::neoinit::{neoinit, InitSpec};
use neonext_core::nn::{InitMethod, Model, ModelSpec};
use neonext_core::rng::gaussian_fill;
use neonext_core::train::{prepare_data, run_ablation, AblationReport, RunConfig};
use neonext_core::{GroupSpec, Matrix, NeoCellParams, NeoCellSpec, Rng, Tensor4};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn random_tensor(rng: &mut Rng, dims: [usize; 4]) -> Tensor4 {
    Tensor4::from_fn(dims, |_, _, _, _| rng.normal())
}

fn equivalence() -> Outcome {
    let start = Instant::now();
    let trials = run_equivalence(120, 2024).expect("equivalence trials run");
    let secs = start.elapsed().as_secs_f64();
    let worst = trials.iter().map(|t| t.max_diff()).fold(0.0, f64::max);
    let covers = |pat: &dyn Fn(&str) -> bool| trials.iter().any(|t| t.groups.split(' ').any(pat));
    let shifted = |k: &str| {
        let k = k.to_string();
        move |g: &str| g.contains(&format!("{k}->{k}@")) && !g.ends_with("@0")
    };
    let coverage = [
        covers(&shifted("4x4")),
        covers(&shifted("7x7")),
        covers(&|g: &str| g.contains("2x2->1x1")),
        covers(&|g: &str| g.contains("2x2->3x3")),
        trials
            .iter()
            .any(|t| t.groups.contains("4x4->4x4") && t.groups.contains("7x7->7x7")),
    ];
    let largest = trials
        .iter()
        .map(|t| t.dims.iter().product::<usize>())
        .max()
        .unwrap_or(0);
    outcome(
        worst <= 1e-10 && secs <= 60.0 && coverage.iter().all(|&c| c),
        format!(
            "{} configs, max |blockdiag - patchwise| {worst:.2e} (tol 1e-10), coverage {coverage:?}, largest input {largest} values, {secs:.1}s (budget 60s)",
            trials.len()
        ),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let cases = standard_suite(7, &FdConfig::default(), 4).expect("gradient suite runs");
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = cases
        .iter()
        .filter(|c| !c.report.passed())
        .map(|c| c.name.as_str())
        .collect();
    let worst = cases
        .iter()
        .map(|c| c.report.max_rel_err())
        .fold(0.0, f64::max);
    outcome(
        failed.is_empty() && secs <= 120.0,
        format!(
            "{} cases, eps 1e-5, worst relative error {worst:.2e} (tol 1e-4), failing {failed:?}, {secs:.1}s (budget 120s)",
            cases.len()
        ),
    )
}

fn complexity() -> Outcome {
    let mut ratio_ok = true;
    let mut sweep = 0;
    for k in 1..=9 {
        for c in [1, 7, 96] {
            for (mh, mw) in [(1, 1), (3, 2), (8, 8)] {
                let (h, w) = (k * mh, k * mw);
                let neo = flops_neocell(c, h, w, k).unwrap().multiplies;
                let dw = flops_dwconv(c, h, w, k).multiplies;
                ratio_ok &= neo * k as u64 == 2 * dw;
                sweep += 1;
            }
        }
    }
    let crossover = [3, 4, 5, 7].iter().all(|&k| {
        let (h, w) = (8 * k, 8 * k);
        flops_neocell(96, h, w, k).unwrap().multiplies < flops_dwconv(96, h, w, k).multiplies
    });
    let mut rng = Rng::new(11);
    let mut counters_ok = true;
    for (c, h, w, k) in [(2, 8, 8, 4), (3, 14, 21, 7), (1, 6, 6, 2), (4, 9, 9, 3)] {
        let spec = NeoCellSpec::uniform(c, (k, k), (k, k), false).unwrap();
        let params = NeoCellParams::random_normal(&spec, &mut rng).unwrap();
        let x = random_tensor(&mut rng, [1, c, h, w]);
        let (_, count) = forward_patchwise_counted(&x, &spec, &params).unwrap();
        counters_ok &= count == flops_neocell(c, h, w, k).unwrap().multiplies;

        let x = random_tensor(&mut rng, [1, c, h + k - 1, w + k - 1]);
        let kernels: Vec<Matrix> = (0..c)
            .map(|_| gaussian_fill(&mut rng, k, k, 1.0).unwrap())
            .collect();
        let (_, count) = dwconv_valid_counted(&x, &kernels).unwrap();
        counters_ok &= count == flops_dwconv(c, h, w, k).multiplies;
    }
    outcome(
        ratio_ok && crossover && counters_ok,
        format!(
            "ratio == 2/k on {sweep} shapes: {ratio_ok}; neocell < dwconv for k in {{3,4,5,7}}: {crossover}; instrumented counters == formulas: {counters_ok}"
        ),
    )
}

fn neoinit_fidelity() -> Outcome {
    let clean = |r, c| neoinit(&InitSpec::new(r, c, false), &mut Rng::new(0)).unwrap();
    let third = Matrix::from_rows(&[
        [0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0],
    ]);
    let wide = Matrix::from_rows(&[[0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5]]);
    let patterns = [
        clean(7, 7) == Matrix::identity(7),
        clean(2, 4) == wide,
        clean(4, 2) == wide.transpose(),
        clean(3, 7) == third,
        clean(1, 2) == Matrix::from_rows(&[[0.5, 0.5]]),
    ];

    let mut rng = Rng::new(12);
    let spec = NeoCellSpec::new(
        vec![
            GroupSpec::square(0..3, 4, 1).unwrap(),
            GroupSpec::square(3..5, 7, 3).unwrap(),
        ],
        false,
    )
    .unwrap();
    let x = random_tensor(&mut rng, [2, 5, 28, 28]);
    let params = NeoCellParams::neoinit_clean(&spec).unwrap();
    let identity = forward_patchwise(&x, &spec, &params).unwrap() == x
        && forward_blockdiag(&x, &spec, &params).unwrap() == x;

    let down = NeoCellSpec::uniform(3, (2, 2), (1, 1), false).unwrap();
    let x = random_tensor(&mut rng, [2, 3, 12, 10]);
    let y = forward_patchwise(&x, &down, &NeoCellParams::neoinit_clean(&down).unwrap()).unwrap();
    let pooled = Tensor4::from_fn([2, 3, 6, 5], |n, c, i, j| {
        (x.at(n, c, 2 * i, 2 * j)
            + x.at(n, c, 2 * i, 2 * j + 1)
            + x.at(n, c, 2 * i + 1, 2 * j)
            + x.at(n, c, 2 * i + 1, 2 * j + 1))
            / 4.0
    });
    let pool_err = y.max_abs_diff(&pooled).unwrap();
    outcome(
        patterns.iter().all(|&p| p) && identity && pool_err <= 1e-12,
        format!(
            "patterns [7x7, 2x4, 4x2, 3x7, 1x2] exact: {patterns:?}; square layer is identity: {identity}; 2->1 vs average pooling {pool_err:.1e} (tol 1e-12)"
        ),
    )
}

fn ablation_line(report: &AblationReport) -> String {
    format!(
        "neoinit {:.2}% ({} diverged) vs random-normal {:.2}% ({} diverged), gap {:+.2} pp",
        100.0 * report.neoinit.mean_acc,
        report.neoinit.diverged,
        100.0 * report.random.mean_acc,
        report.random.diverged,
        report.gap_pp()
    )
}

fn ablation(config: &str, budget_s: f64) -> Outcome {
    let mut cfg =
        RunConfig::load(&workspace_root().join("configs").join(config)).expect("config parses");
    let out = tempfile::tempdir().unwrap();
    cfg.out_dir = out.path().to_path_buf();
    let start = Instant::now();
    let result = prepare_data(&cfg).and_then(|(train, val)| run_ablation(&cfg, &train, &val));
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(report) => outcome(
            report.neoinit.mean_acc > report.random.mean_acc
                && report.neoinit.diverged == 0
                && secs <= budget_s,
            format!(
                "{}, {} epochs x {} seeds per arm, {secs:.0}s (budget {budget_s:.0}s)",
                ablation_line(&report),
                cfg.epochs,
                cfg.seeds.len()
            ),
        ),
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn architecture() -> Outcome {
    let spec = ModelSpec::preset("T", 224, 1000).unwrap();
    let model = Model::build(&spec, InitMethod::NeoInit, &mut Rng::new(0)).unwrap();
    let n = model.param_count();
    let rel = (n as f64 - 27.7e6).abs() / 27.7e6;
    let mut rng = Rng::new(13);
    let x = Tensor4::from_fn([1, 3, 224, 224], |_, _, _, _| rng.uniform());
    let chain: Vec<[usize; 4]> = model
        .stem_trace(&x)
        .unwrap()
        .iter()
        .map(Tensor4::dims)
        .collect();
    let chain_ok = chain[0] == [1, 48, 56, 56] && chain[1] == [1, 96, 56, 56];
    outcome(
        rel <= 0.02 && chain_ok,
        format!(
            "NeoNeXt-T {n} parameters, {:.2}% from 27.7M (tol 2%); stem 3x224^2 -> {:?} -> {:?}",
            100.0 * rel,
            &chain[0][1..],
            &chain[1][1..]
        ),
    )
}

fn neonext(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_neonext"))
        .args(args)
        .output()
        .expect("neonext runs");
    assert!(
        out.status.success() || out.status.code() == Some(2),
        "neonext {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// CSV text with the named columns removed. Only for files without
/// quoted fields.
fn drop_columns(text: &str, names: &[&str]) -> String {
    let header = text.lines().next().unwrap_or("");
    let keep: Vec<bool> = header.split(',').map(|h| !names.contains(&h)).collect();
    text.lines()
        .map(|l| {
            l.split(',')
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(f, _)| f)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

const TIMING: [&str; 5] = ["wall_time_s", "min_s", "median_s", "mean_s", "mults_per_s"];

/// Runs every subcommand into `dir` and returns the produced files
/// (relative path, contents with timing columns removed).
fn cli_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    neonext(&[
        "init-dump",
        "--rows",
        "5",
        "--cols",
        "9",
        "--seed",
        "3",
        "--out",
        &p("init.bin"),
    ]);
    neonext(&[
        "equiv-check",
        "--trials",
        "8",
        "--seed",
        "4",
        "--out",
        &p("equiv.csv"),
    ]);
    neonext(&[
        "gradcheck",
        "--seed",
        "5",
        "--model-entries",
        "1",
        "--out",
        &p("grad.csv"),
    ]);
    neonext(&[
        "bench",
        "--op",
        "neocell",
        "--c",
        "8",
        "--h",
        "28",
        "--w",
        "28",
        "--k",
        "7",
        "--iters",
        "2",
        "--seed",
        "6",
        "--out",
        &p("bench.csv"),
    ]);
    neonext(&[
        "bench",
        "--op",
        "dwconv",
        "--c",
        "4",
        "--h",
        "14",
        "--w",
        "14",
        "--k",
        "3",
        "--iters",
        "2",
        "--seed",
        "6",
        "--out",
        &p("bench.csv"),
    ]);
    let config = format!(
        r#"# neonext-run-config v1
name = "determinism"
model = "micro"
init = "neoinit"
epochs = 1
batch_size = 8
eval_batch_size = 16
seeds = [0, 1]
out_dir = "{}"

[optimizer]
kind = "sgd"
lr = 0.05

[schedule]
warmup_epochs = 1

[data]
source = "synthetic"
train_size = 24
val_size = 16
"#,
        p("runs")
    );
    std::fs::write(dir.join("run.toml"), config).unwrap();
    neonext(&["train", "--config", &p("run.toml"), "--seed", "3"]);
    neonext(&[
        "ablate",
        "--config",
        &p("run.toml"),
        "--out-dir",
        &p("ablation"),
    ]);

    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path
                .strip_prefix(dir)
                .unwrap()
                .to_string_lossy()
                .into_owned();
            if rel == "run.toml" {
                // An input, and it embeds the output directory.
                continue;
            }
            let bytes = std::fs::read(&path).unwrap();
            let name = path.file_name().unwrap().to_string_lossy();
            let bytes = if name == "bench.csv" || name == "metrics.csv" {
                drop_columns(&String::from_utf8(bytes).unwrap(), &TIMING).into_bytes()
            } else {
                bytes
            };
            files.push((rel, bytes));
        }
    }
    files.sort();
    files
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = cli_outputs(a.path());
    let second = cli_outputs(b.path());
    let names: Vec<&str> = first.iter().map(|f| f.0.as_str()).collect();
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let expected = [
        "init.bin",
        "init.txt",
        "equiv.csv",
        "grad.csv",
        "bench.csv",
        "ablation/ablation.csv",
    ];
    let complete = expected.iter().all(|e| names.contains(e))
        && names.iter().any(|n| n.ends_with("params.bin"));
    outcome(
        complete && first.len() == second.len() && differing.is_empty(),
        format!(
            "{} files from 6 subcommands compared byte-for-byte (timing columns removed), differing {differing:?}",
            first.len()
        ),
    )
}

fn main() {
    let mut all_passed = true;
    let mut report = |id: &str, name: &str, o: Outcome| {
        all_passed &= o.passed;
        println!(
            "criterion {id} {name}: {} - {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    };
    report("1", "block-diagonal equivalence", equivalence());
    report("2", "gradient correctness", gradients());
    report("3", "complexity counts", complexity());
    report("4", "NeoInit fidelity", neoinit_fidelity());
    report(
        "5a",
        "NeoInit ablation (synthetic, CI variant)",
        ablation("synthetic-ablation.toml", 300.0),
    );
    if std::env::var_os(CIFAR_DIR_ENV).is_some() {
        report(
            "5b",
            "NeoInit ablation (CIFAR-10)",
            ablation("cifar10-ablation.toml", 7200.0),
        );
    } else {
        println!("criterion 5b NeoInit ablation (CIFAR-10): NOT RUN - set {CIFAR_DIR_ENV} to the CIFAR-10 binary directory");
    }
    report("6", "architecture fidelity", architecture());
    report("7", "CLI determinism", determinism());
    if !all_passed {
        std::process::exit(1);
    }
}
