//! Multiply counts, a depthwise convolution baseline and a small timing
//! harness for comparing it against NeoCell.

mod dwconv;
mod harness;

pub use dwconv::{dwconv_reference, dwconv_reference_parallel, dwconv_valid_counted};
pub use harness::{
    append_csv, run_bench, BenchConfig, BenchOp, BenchResult, BenchShape, BENCH_CSV_HEADER,
};

use crate::error::{shape_err, Result};

const F64_BYTES: u64 = 8;

/// Cost of one operator application on a single `c x h x w` sample.
///
/// `bytes` is a minimal-traffic model: every input and output element
/// and every parameter is moved once, at 8 bytes each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpCost {
    pub multiplies: u64,
    pub bytes: u64,
}

/// Depthwise `k x k` convolution producing a `c x h x w` output:
/// `c * h * w * k^2` multiplies. Padding is not accounted for.
pub fn flops_dwconv(c: usize, h: usize, w: usize, k: usize) -> OpCost {
    let (c, h, w, k) = (c as u64, h as u64, w as u64, k as u64);
    OpCost {
        multiplies: c * h * w * k * k,
        bytes: F64_BYTES * (2 * c * h * w + c * k * k),
    }
}

/// NeoCell with square `k x k` patches on a `c x h x w` input:
/// `2 * c * h * w * k` multiplies (`k^3` for each of the two products on
/// each of the `h * w / k^2` patches).
pub fn flops_neocell(c: usize, h: usize, w: usize, k: usize) -> Result<OpCost> {
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(shape_err!(
            "flops_neocell: {h}x{w} is not divisible into {k}x{k} patches"
        ));
    }
    let (c, h, w, k) = (c as u64, h as u64, w as u64, k as u64);
    Ok(OpCost {
        multiplies: 2 * c * h * w * k,
        bytes: F64_BYTES * (2 * c * h * w + 2 * c * k * k),
    })
}
