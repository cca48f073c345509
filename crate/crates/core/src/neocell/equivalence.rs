//! Randomized comparison of the execution paths.

use super::{
    forward_blockdiag, forward_blockdiag_dense, forward_patchwise, GroupSpec, NeoCellParams,
    NeoCellSpec,
};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor4;

/// One random operator configuration with its measured discrepancies.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivTrial {
    pub index: usize,
    pub dims: [usize; 4],
    /// Groups as `channels:hxw->h'xw'@shift`, joined by spaces.
    pub groups: String,
    pub bias: bool,
    /// Max |block-diagonal - patchwise| for the sparse and dense routes.
    pub sparse_diff: f64,
    pub dense_diff: f64,
}

impl EquivTrial {
    pub fn max_diff(&self) -> f64 {
        self.sparse_diff.max(self.dense_diff)
    }
}

pub const EQUIV_CSV_HEADER: [&str; 6] = [
    "trial",
    "dims",
    "groups",
    "bias",
    "sparse_diff",
    "dense_diff",
];

impl EquivTrial {
    pub fn csv_record(&self) -> [String; 6] {
        let d = self.dims;
        [
            self.index.to_string(),
            format!("{}x{}x{}x{}", d[0], d[1], d[2], d[3]),
            self.groups.clone(),
            self.bias.to_string(),
            format!("{:e}", self.sparse_diff),
            format!("{:e}", self.dense_diff),
        ]
    }
}

/// Splits `c` channels into `parts` non-empty contiguous ranges.
fn split_channels(rng: &mut Rng, c: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let parts = parts.min(c);
    let mut cuts: Vec<usize> = Vec::new();
    while cuts.len() + 1 < parts {
        let cut = 1 + rng.below(c - 1);
        if !cuts.contains(&cut) {
            cuts.push(cut);
        }
    }
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(c);
    bounds.windows(2).map(|w| w[0]..w[1]).collect()
}

/// Draws a configuration: mixed shifted 4x4 / 7x7 groups, 2->1 or 2->3
/// resampling, or mixed 2->1 / 4->2 downsampling, on inputs up to
/// `2 x 8 x 56 x 56`.
pub fn random_config(rng: &mut Rng) -> Result<(NeoCellSpec, [usize; 4])> {
    let n = 1 + rng.below(2);
    let c = 1 + rng.below(8);
    let bias = rng.bernoulli(0.5);
    let (groups, unit) = match rng.below(4) {
        0 => {
            let parts = 1 + rng.below(2);
            let ranges = split_channels(rng, c, parts);
            let ks: Vec<usize> = ranges
                .iter()
                .map(|_| if rng.bernoulli(0.5) { 4 } else { 7 })
                .collect();
            let unit = if ks.iter().all(|&k| k == ks[0]) {
                ks[0]
            } else {
                28
            };
            let groups = ranges
                .into_iter()
                .zip(&ks)
                .map(|(r, &k)| GroupSpec::square(r, k, rng.below(k)))
                .collect::<Result<Vec<_>>>()?;
            (groups, unit)
        }
        1 => (vec![GroupSpec::new(0..c, (2, 2), (1, 1), 0)?], 2),
        2 => (vec![GroupSpec::new(0..c, (2, 2), (3, 3), 0)?], 2),
        _ => {
            let ranges = split_channels(rng, c, 2);
            let groups = ranges
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    let k = 2 << i;
                    GroupSpec::new(r, (k, k), (k / 2, k / 2), 0)
                })
                .collect::<Result<Vec<_>>>()?;
            (groups, 4)
        }
    };
    let max_mult = 56 / unit;
    let h = unit * (1 + rng.below(max_mult));
    let w = unit * (1 + rng.below(max_mult));
    Ok((NeoCellSpec::new(groups, bias)?, [n, c, h, w]))
}

fn describe(spec: &NeoCellSpec) -> String {
    spec.groups
        .iter()
        .map(|g| {
            format!(
                "{}..{}:{}x{}->{}x{}@{}",
                g.channels.start, g.channels.end, g.h, g.w, g.h_out, g.w_out, g.shift
            )
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Runs `trials` random configurations drawn from `seed`, comparing both
/// block-diagonal routes against the patch-wise reference.
pub fn run_equivalence(trials: usize, seed: u64) -> Result<Vec<EquivTrial>> {
    (0..trials)
        .map(|index| {
            let mut rng = Rng::with_stream(seed, index as u64);
            let (spec, dims) = random_config(&mut rng)?;
            let params = NeoCellParams::random_normal(&spec, &mut rng)?;
            let x = Tensor4::from_fn(dims, |_, _, _, _| rng.normal());
            let reference = forward_patchwise(&x, &spec, &params)?;
            let sparse = forward_blockdiag(&x, &spec, &params)?;
            let dense = forward_blockdiag_dense(&x, &spec, &params)?;
            Ok(EquivTrial {
                index,
                dims,
                groups: describe(&spec),
                bias: spec.use_bias,
                sparse_diff: sparse.max_abs_diff(&reference)?,
                dense_diff: dense.max_abs_diff(&reference)?,
            })
        })
        .collect()
}
