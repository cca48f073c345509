use std::fmt;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use super::{dwconv_reference, dwconv_reference_parallel, flops_dwconv, flops_neocell};
use crate::error::{Error, Result};
use crate::neocell::{
    forward_blockdiag, forward_patchwise, forward_patchwise_parallel, NeoCellParams, NeoCellSpec,
};
use crate::rng::{gaussian_fill, Rng};
use crate::tensor::{Matrix, Tensor4};

pub const BENCH_CSV_HEADER: [&str; 15] = [
    "op",
    "batch",
    "c",
    "h",
    "w",
    "k",
    "threads",
    "warmup",
    "iters",
    "min_s",
    "median_s",
    "mean_s",
    "multiplies",
    "mults_per_s",
    "checksum",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchOp {
    /// Patch-wise NeoCell forward.
    NeoCell,
    /// Zero-padded depthwise convolution.
    DwConv,
    /// Block-diagonal NeoCell forward.
    BlockDiag,
}

impl fmt::Display for BenchOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchOp::NeoCell => "neocell",
            BenchOp::DwConv => "dwconv",
            BenchOp::BlockDiag => "blockdiag",
        })
    }
}

impl FromStr for BenchOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neocell" => Ok(BenchOp::NeoCell),
            "dwconv" => Ok(BenchOp::DwConv),
            "blockdiag" => Ok(BenchOp::BlockDiag),
            _ => Err(Error::Usage(format!(
                "unknown op {s:?} (neocell, dwconv, blockdiag)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchShape {
    pub batch: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    /// Patch size for NeoCell, kernel size for depthwise convolution.
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub op: BenchOp,
    pub shape: BenchShape,
    pub iters: usize,
    pub warmup: usize,
    /// 1 runs the sequential kernel; more runs the plane-parallel variant
    /// on a pool of that size.
    pub threads: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub op: BenchOp,
    pub shape: BenchShape,
    pub threads: usize,
    pub warmup: usize,
    pub iters: usize,
    pub min_s: f64,
    pub median_s: f64,
    pub mean_s: f64,
    /// Analytic multiplies per iteration over the whole batch.
    pub multiplies: u64,
    pub mults_per_s: f64,
    /// Sum of the output of the last iteration; depends only on the seed
    /// and shape.
    pub checksum: f64,
}

impl BenchResult {
    pub fn csv_record(&self) -> Vec<String> {
        let s = &self.shape;
        vec![
            self.op.to_string(),
            s.batch.to_string(),
            s.c.to_string(),
            s.h.to_string(),
            s.w.to_string(),
            s.k.to_string(),
            self.threads.to_string(),
            self.warmup.to_string(),
            self.iters.to_string(),
            format!("{:.9}", self.min_s),
            format!("{:.9}", self.median_s),
            format!("{:.9}", self.mean_s),
            self.multiplies.to_string(),
            format!("{:.6e}", self.mults_per_s),
            self.checksum.to_string(),
        ]
    }
}

enum Kernel {
    Neo(NeoCellSpec, NeoCellParams),
    Dw(Vec<Matrix>),
}

/// Builds fixed random inputs from `cfg.seed`, runs `warmup` untimed and
/// `iters` timed iterations.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchResult> {
    if cfg.iters == 0 {
        return Err(Error::Usage("iters must be at least 1".into()));
    }
    if cfg.threads == 0 {
        return Err(Error::Usage("threads must be at least 1".into()));
    }
    let s = cfg.shape;
    if s.batch == 0 || s.c == 0 {
        return Err(Error::Usage(
            "batch and channel counts must be positive".into(),
        ));
    }
    let mut rng = Rng::new(cfg.seed);
    let x = Tensor4::from_fn([s.batch, s.c, s.h, s.w], |_, _, _, _| rng.normal());
    let (kernel, per_sample) = match cfg.op {
        BenchOp::NeoCell | BenchOp::BlockDiag => {
            let spec = NeoCellSpec::uniform(s.c, (s.k, s.k), (s.k, s.k), false)?;
            let params = NeoCellParams::neoinit(&spec, &mut rng)?;
            (
                Kernel::Neo(spec, params),
                flops_neocell(s.c, s.h, s.w, s.k)?,
            )
        }
        BenchOp::DwConv => {
            let sigma = 1.0 / s.k as f64;
            let kernels = (0..s.c)
                .map(|_| gaussian_fill(&mut rng, s.k, s.k, sigma))
                .collect::<Result<Vec<_>>>()?;
            (Kernel::Dw(kernels), flops_dwconv(s.c, s.h, s.w, s.k))
        }
    };
    if cfg.op == BenchOp::BlockDiag && cfg.threads > 1 {
        return Err(Error::Usage(
            "blockdiag has no multi-threaded variant".into(),
        ));
    }
    let parallel = cfg.threads > 1;
    let apply = || -> Result<Tensor4> {
        match (&kernel, cfg.op) {
            (Kernel::Neo(spec, p), BenchOp::NeoCell) if parallel => {
                forward_patchwise_parallel(&x, spec, p)
            }
            (Kernel::Neo(spec, p), BenchOp::NeoCell) => forward_patchwise(&x, spec, p),
            (Kernel::Neo(spec, p), _) => forward_blockdiag(&x, spec, p),
            (Kernel::Dw(k), _) if parallel => dwconv_reference_parallel(&x, k),
            (Kernel::Dw(k), _) => dwconv_reference(&x, k),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {} threads: {e}", cfg.threads)))?;
    let (times, last) = pool.install(|| -> Result<(Vec<f64>, Tensor4)> {
        for _ in 0..cfg.warmup {
            apply()?;
        }
        let mut times = Vec::with_capacity(cfg.iters);
        let mut last = None;
        for _ in 0..cfg.iters {
            let t = Instant::now();
            let y = apply()?;
            times.push(t.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
            last = Some(y);
        }
        Ok((times, last.expect("iters >= 1")))
    })?;

    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median_s = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    let multiplies = per_sample.multiplies * s.batch as u64;
    Ok(BenchResult {
        op: cfg.op,
        shape: s,
        threads: cfg.threads,
        warmup: cfg.warmup,
        iters: cfg.iters,
        min_s: sorted[0],
        median_s,
        mean_s: times.iter().sum::<f64>() / times.len() as f64,
        multiplies,
        mults_per_s: multiplies as f64 / median_s,
        checksum: last.data().iter().sum(),
    })
}

/// Appends one row to `path`, writing the header first if the file is
/// new or empty. An existing file with a different header is an error.
pub fn append_csv(path: &Path, result: &BenchResult) -> Result<()> {
    let has_rows = match std::fs::File::open(path) {
        Ok(f) => {
            let mut first = String::new();
            BufReader::new(f).read_line(&mut first)?;
            let first = first.trim_end();
            if !first.is_empty() && first != BENCH_CSV_HEADER.join(",") {
                return Err(Error::Config(format!(
                    "{} has a different header: {first:?}",
                    path.display()
                )));
            }
            !first.is_empty()
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => false,
        Err(e) => return Err(e.into()),
    };
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if !has_rows {
        w.write_record(BENCH_CSV_HEADER)?;
    }
    w.write_record(result.csv_record())?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(op: BenchOp) -> BenchConfig {
        BenchConfig {
            op,
            shape: BenchShape {
                batch: 1,
                c: 4,
                h: 14,
                w: 14,
                k: 7,
            },
            iters: 1,
            warmup: 0,
            threads: 1,
            seed: 5,
        }
    }

    #[test]
    fn single_iteration_row() {
        let r = run_bench(&cfg(BenchOp::NeoCell)).unwrap();
        assert_eq!(r.iters, 1);
        assert!(r.min_s > 0.0 && r.median_s > 0.0 && r.mean_s > 0.0);
        assert_eq!(r.multiplies, 2 * 4 * 14 * 14 * 7);
        assert!(run_bench(&BenchConfig {
            iters: 0,
            ..cfg(BenchOp::NeoCell)
        })
        .is_err());
    }

    #[test]
    fn paths_agree_and_replay() {
        let a = run_bench(&cfg(BenchOp::NeoCell)).unwrap();
        let b = run_bench(&cfg(BenchOp::BlockDiag)).unwrap();
        let p = run_bench(&BenchConfig {
            threads: 2,
            ..cfg(BenchOp::NeoCell)
        })
        .unwrap();
        assert_eq!(a.checksum, p.checksum);
        assert!((a.checksum - b.checksum).abs() <= 1e-9 * a.checksum.abs().max(1.0));
        let d1 = run_bench(&cfg(BenchOp::DwConv)).unwrap();
        let d2 = run_bench(&cfg(BenchOp::DwConv)).unwrap();
        assert_eq!(d1.checksum, d2.checksum);
        assert_eq!(d1.multiplies, 4 * 14 * 14 * 49);
    }

    #[test]
    fn op_names_round_trip() {
        for op in [BenchOp::NeoCell, BenchOp::DwConv, BenchOp::BlockDiag] {
            assert_eq!(op.to_string().parse::<BenchOp>().unwrap(), op);
        }
        assert!(matches!("conv".parse::<BenchOp>(), Err(Error::Usage(_))));
    }

    #[test]
    fn csv_appends_under_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.csv");
        let r = run_bench(&cfg(BenchOp::DwConv)).unwrap();
        append_csv(&path, &r).unwrap();
        append_csv(&path, &r).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], BENCH_CSV_HEADER.join(","));
        std::fs::write(&path, "a,b\n").unwrap();
        assert!(append_csv(&path, &r).is_err());
    }
}
