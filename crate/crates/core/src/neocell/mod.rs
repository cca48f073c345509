//! The NeoCell operator.
//!
//! Each channel plane is cut into non-overlapping `h x w` patches and
//! every patch `X` is mapped to `L X R` (plus an optional bias), where
//! `L` is `h_out x h` and `R` is `w x w_out`. Channels are partitioned
//! into groups; a group fixes the patch geometry and an optional cyclic
//! shift of the patch grid.
//!
//! Two execution paths compute the same function:
//!
//! * [`forward_patchwise`] walks the patches explicitly. It is the
//!   reference.
//! * [`forward_blockdiag`] multiplies the whole plane by the block-diagonal
//!   matrices from [`materialize_block_diagonal`].

mod blockdiag;
mod equivalence;
mod forward;
mod io;

use std::ops::Range;

pub use blockdiag::{forward_blockdiag, forward_blockdiag_dense, materialize_block_diagonal};
pub use equivalence::{random_config, run_equivalence, EquivTrial, EQUIV_CSV_HEADER};
pub use forward::{forward_patchwise, forward_patchwise_counted, forward_patchwise_parallel};
pub use io::{load_params, read_spec_manifest, save_params, write_spec_manifest};

use crate::error::{param_err, shape_err, Result};
use crate::neoinit::neoinit_pattern;
use crate::rng::{gaussian_fill, Rng};
use crate::tensor::Matrix;

/// Patch geometry for a contiguous range of channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    pub channels: Range<usize>,
    pub h: usize,
    pub w: usize,
    pub h_out: usize,
    pub w_out: usize,
    /// Cyclic offset of the patch grid, applied to both spatial axes.
    pub shift: usize,
}

impl GroupSpec {
    pub fn new(
        channels: Range<usize>,
        (h, w): (usize, usize),
        (h_out, w_out): (usize, usize),
        shift: usize,
    ) -> Result<Self> {
        let g = GroupSpec {
            channels,
            h,
            w,
            h_out,
            w_out,
            shift,
        };
        g.validate()?;
        Ok(g)
    }

    /// `k x k` patches mapped to `k x k` outputs.
    pub fn square(channels: Range<usize>, k: usize, shift: usize) -> Result<Self> {
        Self::new(channels, (k, k), (k, k), shift)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(param_err!(
                "group has an empty channel range {:?}",
                self.channels
            ));
        }
        if self.h == 0 || self.w == 0 || self.h_out == 0 || self.w_out == 0 {
            return Err(param_err!(
                "group {:?}: all patch dims must be >= 1",
                self.channels
            ));
        }
        if self.shift > 0 {
            if !self.is_square() {
                return Err(param_err!(
                    "group {:?}: shift {} requires h_out == h and w_out == w (got {}x{} -> {}x{})",
                    self.channels,
                    self.shift,
                    self.h,
                    self.w,
                    self.h_out,
                    self.w_out
                ));
            }
            if self.shift >= self.h || self.shift >= self.w {
                return Err(param_err!(
                    "group {:?}: shift {} must be smaller than the patch size {}x{}",
                    self.channels,
                    self.shift,
                    self.h,
                    self.w
                ));
            }
        }
        Ok(())
    }

    /// True when the group does not resample (`h_out == h`, `w_out == w`).
    pub fn is_square(&self) -> bool {
        self.h == self.h_out && self.w == self.w_out
    }

    /// Output plane size for an `height x width` input plane.
    pub fn output_hw(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if height % self.h != 0 {
            return Err(shape_err!(
                "group {:?}: height {height} is not divisible by patch height {}",
                self.channels,
                self.h
            ));
        }
        if width % self.w != 0 {
            return Err(shape_err!(
                "group {:?}: width {width} is not divisible by patch width {}",
                self.channels,
                self.w
            ));
        }
        Ok((height / self.h * self.h_out, width / self.w * self.w_out))
    }

    /// Number of learned scalars per channel (left + right + bias).
    pub fn params_per_channel(&self, use_bias: bool) -> usize {
        self.h_out * self.h
            + self.w * self.w_out
            + if use_bias { self.h_out * self.w_out } else { 0 }
    }
}

/// Full layer description: a channel partition plus the bias flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeoCellSpec {
    pub groups: Vec<GroupSpec>,
    pub use_bias: bool,
}

impl NeoCellSpec {
    pub fn new(groups: Vec<GroupSpec>, use_bias: bool) -> Result<Self> {
        let spec = NeoCellSpec { groups, use_bias };
        spec.validate()?;
        Ok(spec)
    }

    /// One group spanning all channels.
    pub fn uniform(
        channels: usize,
        (h, w): (usize, usize),
        (h_out, w_out): (usize, usize),
        use_bias: bool,
    ) -> Result<Self> {
        Self::new(
            vec![GroupSpec::new(0..channels, (h, w), (h_out, w_out), 0)?],
            use_bias,
        )
    }

    /// Checks each group and that the groups partition `[0, C)`.
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(param_err!("NeoCell spec has no groups"));
        }
        for g in &self.groups {
            g.validate()?;
        }
        let c = self.channels();
        let mut owner = vec![false; c];
        for g in &self.groups {
            for ch in g.channels.clone() {
                if ch >= c || owner[ch] {
                    return Err(param_err!(
                        "channel {ch} is assigned to more than one group"
                    ));
                }
                owner[ch] = true;
            }
        }
        if let Some(missing) = owner.iter().position(|&o| !o) {
            return Err(param_err!("channel {missing} is not covered by any group"));
        }
        Ok(())
    }

    /// Total channel count, i.e. one past the highest covered channel.
    pub fn channels(&self) -> usize {
        self.groups
            .iter()
            .map(|g| g.channels.end)
            .max()
            .unwrap_or(0)
    }

    /// Group index of every channel.
    pub fn channel_groups(&self) -> Vec<usize> {
        let mut out = vec![0; self.channels()];
        for (gi, g) in self.groups.iter().enumerate() {
            for c in g.channels.clone() {
                out[c] = gi;
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.groups
            .iter()
            .map(|g| g.channels.len() * g.params_per_channel(self.use_bias))
            .sum()
    }

    /// Flat lengths of the concatenated left, right and bias parameters.
    pub fn flat_lens(&self) -> (usize, usize, usize) {
        let mut l = 0;
        let mut r = 0;
        let mut b = 0;
        for g in &self.groups {
            let n = g.channels.len();
            l += n * g.h_out * g.h;
            r += n * g.w * g.w_out;
            b += n * g.h_out * g.w_out;
        }
        (l, r, if self.use_bias { b } else { 0 })
    }
}

/// Output dims `(n, C, H', W')` for input dims `(n, C, H, W)`.
pub fn output_shape(spec: &NeoCellSpec, in_dims: [usize; 4]) -> Result<[usize; 4]> {
    let [n, c, h, w] = in_dims;
    if c != spec.channels() {
        return Err(shape_err!(
            "input has {c} channels but the NeoCell spec covers {}",
            spec.channels()
        ));
    }
    let mut out: Option<(usize, usize)> = None;
    for g in &spec.groups {
        let hw = g.output_hw(h, w)?;
        match out {
            None => out = Some(hw),
            Some(prev) if prev != hw => {
                return Err(shape_err!(
                    "group {:?} produces {}x{} but an earlier group produces {}x{}",
                    g.channels,
                    hw.0,
                    hw.1,
                    prev.0,
                    prev.1
                ))
            }
            _ => {}
        }
    }
    let (ho, wo) = out.expect("validated spec has groups");
    Ok([n, c, ho, wo])
}

/// Learned matrices, one set per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NeoCellParams {
    pub left: Vec<Matrix>,
    pub right: Vec<Matrix>,
    pub bias: Option<Vec<Matrix>>,
}

impl NeoCellParams {
    fn build(
        spec: &NeoCellSpec,
        mut f: impl FnMut(&GroupSpec, Side) -> Result<Matrix>,
    ) -> Result<Self> {
        let groups = spec.channel_groups();
        let mut left = Vec::with_capacity(groups.len());
        let mut right = Vec::with_capacity(groups.len());
        let mut bias = spec.use_bias.then(Vec::new);
        for &gi in &groups {
            let g = &spec.groups[gi];
            left.push(f(g, Side::Left)?);
            right.push(f(g, Side::Right)?);
            if let Some(b) = bias.as_mut() {
                b.push(Matrix::zeros(g.h_out, g.w_out));
            }
        }
        Ok(NeoCellParams { left, right, bias })
    }

    /// `L = I`, `R = I`, zero bias. Square groups only.
    pub fn identity(spec: &NeoCellSpec) -> Result<Self> {
        Self::build(spec, |g, side| {
            if !g.is_square() {
                return Err(param_err!(
                    "identity params need square groups, {:?} resamples",
                    g.channels
                ));
            }
            Ok(match side {
                Side::Left => Matrix::identity(g.h),
                Side::Right => Matrix::identity(g.w),
            })
        })
    }

    /// Noise-free NeoInit patterns for every matrix.
    pub fn neoinit_clean(spec: &NeoCellSpec) -> Result<Self> {
        Self::build(spec, |g, side| {
            Ok(match side {
                Side::Left => neoinit_pattern(g.h_out, g.h),
                Side::Right => neoinit_pattern(g.w, g.w_out),
            })
        })
    }

    /// NeoInit with Gaussian noise; channels are drawn in order, left
    /// before right.
    pub fn neoinit(spec: &NeoCellSpec, rng: &mut Rng) -> Result<Self> {
        Self::build(spec, |g, side| {
            let (r, c) = match side {
                Side::Left => (g.h_out, g.h),
                Side::Right => (g.w, g.w_out),
            };
            crate::neoinit::neoinit(&crate::neoinit::InitSpec::new(r, c, true), rng)
        })
    }

    /// Baseline used by the initialization ablation:
    /// `L ~ N(0, 1/sqrt(h))`, `R ~ N(0, 1/sqrt(w))` (standard deviations).
    pub fn random_normal(spec: &NeoCellSpec, rng: &mut Rng) -> Result<Self> {
        Self::build(spec, |g, side| match side {
            Side::Left => gaussian_fill(rng, g.h_out, g.h, 1.0 / (g.h as f64).sqrt()),
            Side::Right => gaussian_fill(rng, g.w, g.w_out, 1.0 / (g.w as f64).sqrt()),
        })
    }

    /// Checks matrix dims against the owning group of every channel.
    pub fn validate(&self, spec: &NeoCellSpec) -> Result<()> {
        let groups = spec.channel_groups();
        if self.left.len() != groups.len() || self.right.len() != groups.len() {
            return Err(param_err!(
                "params hold {} left / {} right matrices for {} channels",
                self.left.len(),
                self.right.len(),
                groups.len()
            ));
        }
        match (&self.bias, spec.use_bias) {
            (Some(b), true) if b.len() != groups.len() => {
                return Err(param_err!(
                    "params hold {} bias matrices for {} channels",
                    b.len(),
                    groups.len()
                ))
            }
            (None, true) => return Err(param_err!("spec enables bias but params carry none")),
            (Some(_), false) => {
                return Err(param_err!(
                    "params carry a bias but the NeoCellSpec disables it"
                ))
            }
            _ => {}
        }
        for (c, &gi) in groups.iter().enumerate() {
            let g = &spec.groups[gi];
            let l = &self.left[c];
            let r = &self.right[c];
            if (l.rows(), l.cols()) != (g.h_out, g.h) {
                return Err(param_err!(
                    "channel {c}: left is {}x{}, expected {}x{}",
                    l.rows(),
                    l.cols(),
                    g.h_out,
                    g.h
                ));
            }
            if (r.rows(), r.cols()) != (g.w, g.w_out) {
                return Err(param_err!(
                    "channel {c}: right is {}x{}, expected {}x{}",
                    r.rows(),
                    r.cols(),
                    g.w,
                    g.w_out
                ));
            }
            if let Some(b) = &self.bias {
                if (b[c].rows(), b[c].cols()) != (g.h_out, g.w_out) {
                    return Err(param_err!(
                        "channel {c}: bias is {}x{}, expected {}x{}",
                        b[c].rows(),
                        b[c].cols(),
                        g.h_out,
                        g.w_out
                    ));
                }
            }
        }
        Ok(())
    }

    /// Rebuilds per-channel matrices from channel-major flat buffers.
    pub fn from_flat(
        spec: &NeoCellSpec,
        left: &[f64],
        right: &[f64],
        bias: Option<&[f64]>,
    ) -> Result<Self> {
        let (ll, rl, bl) = spec.flat_lens();
        if left.len() != ll || right.len() != rl || bias.map_or(0, <[f64]>::len) != bl {
            return Err(param_err!(
                "flat params have lengths ({}, {}, {}), spec needs ({ll}, {rl}, {bl})",
                left.len(),
                right.len(),
                bias.map_or(0, <[f64]>::len)
            ));
        }
        let mut lo = 0;
        let mut ro = 0;
        let mut bo = 0;
        let mut p = NeoCellParams {
            left: Vec::new(),
            right: Vec::new(),
            bias: spec.use_bias.then(Vec::new),
        };
        for gi in spec.channel_groups() {
            let g = &spec.groups[gi];
            let (ln, rn, bn) = (g.h_out * g.h, g.w * g.w_out, g.h_out * g.w_out);
            p.left
                .push(Matrix::from_vec(g.h_out, g.h, left[lo..lo + ln].to_vec())?);
            p.right
                .push(Matrix::from_vec(g.w, g.w_out, right[ro..ro + rn].to_vec())?);
            if let (Some(dst), Some(src)) = (p.bias.as_mut(), bias) {
                dst.push(Matrix::from_vec(
                    g.h_out,
                    g.w_out,
                    src[bo..bo + bn].to_vec(),
                )?);
            }
            lo += ln;
            ro += rn;
            bo += bn;
        }
        Ok(p)
    }

    /// Channel-major flat buffers `(left, right, bias)`.
    pub fn to_flat(&self) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
        let cat = |ms: &[Matrix]| {
            ms.iter()
                .flat_map(|m| m.data().iter().copied())
                .collect::<Vec<_>>()
        };
        (
            cat(&self.left),
            cat(&self.right),
            self.bias.as_deref().map(cat),
        )
    }
}

#[derive(Clone, Copy)]
enum Side {
    Left,
    Right,
}
