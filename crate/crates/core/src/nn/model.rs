//! NeoNeXt model builder.
//!
//! Layout (all NeoCells without bias):
//!
//! ```text
//! stem:       space_to_depth(p) -> pointwise(3 p^2 -> C1) -> BN
//! block:      x + drop_path(pointwise(4C -> C)(GELU(pointwise(C -> 4C)(BN(NeoCell(x))))))
//! downsample: NeoCell(2x2 -> 1x1) -> BN -> GELU -> pointwise(Ci -> Ci+1) -> BN -> GELU
//! head:       global average pool -> linear(C4 -> classes)
//! ```
//!
//! Parameter count per block with width `C`, expansion `e` and NeoCell
//! group sizes `k_c` for each channel:
//!
//! ```text
//! sum_c 2 k_c^2  +  2C  +  2 e C^2  +  e C + C
//! ```
//!
//! Pointwise and classifier weights start from `N(0, 1/fan_in)` (standard
//! deviation `1/sqrt(fan_in)`) with zero bias; BN starts at gamma 1, beta 0.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ops::{drop_path_scales, BatchMoments, BatchNormStats, NormMode};
use crate::autodiff::{NeoCellPath, NodeId, ParamId, ParamStore, Tape};
use crate::error::{param_err, shape_err, Error, Result};
use crate::neocell::{GroupSpec, NeoCellParams, NeoCellSpec};
use crate::rng::{gaussian_fill, Rng};
use crate::tensor::Tensor4;

/// Sizes tried, largest first, when a stage map is not divisible by the
/// requested NeoCell size.
const FALLBACK_SIZES: [usize; 4] = [7, 4, 2, 1];

/// One channel partition of a stage: `size x size` matrices, optionally
/// split into `size` subgroups with shifts `0..size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupKind {
    pub size: usize,
    pub shifted: bool,
}

impl GroupKind {
    pub const fn new(size: usize, shifted: bool) -> Self {
        GroupKind { size, shifted }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMethod {
    #[serde(rename = "neoinit")]
    NeoInit,
    RandomNormal,
}

impl std::str::FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neoinit" => Ok(InitMethod::NeoInit),
            "random-normal" => Ok(InitMethod::RandomNormal),
            _ => Err(Error::Config(format!(
                "unknown init method {s:?} (expected neoinit or random-normal)"
            ))),
        }
    }
}

impl std::fmt::Display for InitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitMethod::NeoInit => "neoinit",
            InitMethod::RandomNormal => "random-normal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub depths: [usize; 4],
    pub widths: [usize; 4],
    pub stem_patch: usize,
    pub in_channels: usize,
    pub classes: usize,
    /// Square input side length.
    pub input_size: usize,
    pub expansion: usize,
    /// Largest drop-path rate; block `j` of `B` uses `rate * j / (B - 1)`.
    pub drop_path: f64,
    pub policies: [Vec<GroupKind>; 4],
}

fn default_policies() -> [Vec<GroupKind>; 4] {
    let mixed = vec![GroupKind::new(4, true), GroupKind::new(7, true)];
    [
        mixed.clone(),
        mixed.clone(),
        mixed,
        vec![GroupKind::new(7, false)],
    ]
}

impl ModelSpec {
    /// Named configurations: `micro`, `T`, `S`, `B`.
    pub fn preset(name: &str, input_size: usize, classes: usize) -> Result<Self> {
        let (depths, widths, drop_path) = match name {
            "micro" => ([1, 1, 2, 1], [24, 48, 96, 192], 0.05),
            "T" => ([3, 3, 9, 3], [96, 192, 384, 768], 0.1),
            "S" => ([3, 3, 27, 3], [96, 192, 384, 768], 0.4),
            "B" => ([3, 3, 27, 3], [128, 256, 512, 1024], 0.5),
            _ => {
                return Err(Error::Config(format!(
                    "unknown model preset {name:?} (micro, T, S, B)"
                )))
            }
        };
        Ok(ModelSpec {
            name: name.to_string(),
            depths,
            widths,
            stem_patch: 4,
            in_channels: 3,
            classes,
            input_size,
            expansion: 4,
            drop_path,
            policies: default_policies(),
        })
    }

    /// Spatial side length of each stage.
    pub fn stage_sizes(&self) -> [usize; 4] {
        let s = self.input_size / self.stem_patch.max(1);
        [s, s / 2, s / 4, s / 8]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.depths.contains(&0) {
            return bad(format!(
                "{}: every stage needs at least one block",
                self.name
            ));
        }
        if self.widths.contains(&0) || self.widths.windows(2).any(|w| w[1] < w[0]) {
            return bad(format!(
                "{}: widths must be positive and non-decreasing",
                self.name
            ));
        }
        if self.expansion < 1 {
            return bad(format!("{}: expansion ratio must be at least 1", self.name));
        }
        if !(0.0..1.0).contains(&self.drop_path) {
            return bad(format!("{}: drop-path rate must lie in [0, 1)", self.name));
        }
        if self.policies[3].iter().any(|g| g.shifted) {
            return bad(format!("{}: the last stage must not use shifts", self.name));
        }
        if self.stem_patch == 0 || self.input_size % self.stem_patch != 0 {
            return Err(shape_err!(
                "input size {} not divisible by stem patch {}",
                self.input_size,
                self.stem_patch
            ));
        }
        let mut s = self.input_size / self.stem_patch;
        for stage in 1..4 {
            if s % 2 != 0 || s == 0 {
                return Err(shape_err!(
                    "stage {stage} map {s}x{s} cannot be halved for stage {}",
                    stage + 1
                ));
            }
            s /= 2;
        }
        for (i, p) in self.policies.iter().enumerate() {
            if p.is_empty() || p.iter().any(|g| g.size == 0) {
                return bad(format!("stage {}: empty group policy or zero size", i + 1));
            }
            if self.widths[i] % p.len() != 0 {
                return Err(shape_err!(
                    "stage {}: width {} not divisible into {} equal group parts",
                    i + 1,
                    self.widths[i],
                    p.len()
                ));
            }
        }
        Ok(())
    }
}

/// NeoCell plus pointwise MLP of one residual block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub channels: usize,
    pub neocell: NeoCellSpec,
    pub expansion: usize,
    pub drop_path: f64,
}

impl BlockSpec {
    /// Closed-form parameter count, see the module docs.
    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let e = self.expansion;
        let neo: usize = self
            .neocell
            .groups
            .iter()
            .map(|g| g.channels.len() * (g.h * g.h + g.w * g.w))
            .sum();
        neo + 2 * c + 2 * e * c * c + e * c + c
    }
}

/// Builds the group list for one stage at map size `size`. Records size
/// substitutions in `notes`.
pub fn stage_neocell_spec(
    stage: usize,
    channels: usize,
    size: usize,
    policy: &[GroupKind],
    notes: &mut Vec<String>,
) -> Result<NeoCellSpec> {
    if policy.is_empty() || channels % policy.len() != 0 {
        return Err(shape_err!(
            "stage {stage}: {channels} channels cannot be split into {} parts",
            policy.len()
        ));
    }
    let part = channels / policy.len();
    let mut groups = Vec::new();
    for (p, kind) in policy.iter().enumerate() {
        let start = p * part;
        let k = if size % kind.size == 0 {
            kind.size
        } else {
            let k = *FALLBACK_SIZES
                .iter()
                .find(|&&f| size % f == 0)
                .expect("1 divides everything");
            notes.push(format!(
                "stage {stage}: {0}x{0} groups replaced by {1}x{1} ({size}x{size} map)",
                kind.size, k
            ));
            k
        };
        let subgroups = if kind.shifted { k } else { 1 };
        let (base, rem) = (part / subgroups, part % subgroups);
        let mut at = start;
        for s in 0..subgroups {
            let len = base + usize::from(s < rem);
            if len == 0 {
                continue;
            }
            groups.push(GroupSpec::square(at..at + len, k, s)?);
            at += len;
        }
    }
    NeoCellSpec::new(groups, false)
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    stats: usize,
}

#[derive(Debug, Clone)]
struct Neo {
    spec: NeoCellSpec,
    left: ParamId,
    right: ParamId,
}

#[derive(Debug, Clone)]
struct Pointwise {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    spec: BlockSpec,
    neo: Neo,
    norm: Norm,
    expand: Pointwise,
    project: Pointwise,
}

#[derive(Debug, Clone)]
struct Down {
    neo: Neo,
    norm1: Norm,
    pw: Pointwise,
    norm2: Norm,
}

#[derive(Debug, Clone)]
struct Stage {
    down: Option<Down>,
    blocks: Vec<Block>,
}

/// Whether a forward pass trains (batch statistics, stochastic depth
/// drawn from `drop_seed`) or evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { drop_seed: u64 },
    Eval,
}

/// Result of recording a forward pass.
#[derive(Debug)]
pub struct Forward {
    pub logits: NodeId,
    /// Batch moments per BN layer (train mode only), in layer order.
    pub moments: Vec<(usize, BatchMoments)>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub init: InitMethod,
    pub params: ParamStore,
    pub norms: Vec<BatchNormStats>,
    pub path: NeoCellPath,
    stem: (Pointwise, Norm),
    stages: Vec<Stage>,
    head: Pointwise,
    notes: Vec<String>,
}

struct Builder<'a> {
    params: ParamStore,
    norms: Vec<BatchNormStats>,
    init: InitMethod,
    rng: &'a mut Rng,
}

impl Builder<'_> {
    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let gamma = self
            .params
            .add(format!("{name}.gamma"), Tensor4::flat(vec![1.0; c]), false);
        let beta = self
            .params
            .add(format!("{name}.beta"), Tensor4::flat(vec![0.0; c]), false);
        self.norms.push(BatchNormStats::new(c));
        Norm {
            gamma,
            beta,
            stats: self.norms.len() - 1,
        }
    }

    fn pointwise(&mut self, name: &str, c_in: usize, c_out: usize) -> Result<Pointwise> {
        let w = gaussian_fill(self.rng, c_out, c_in, 1.0 / (c_in as f64).sqrt())?;
        let weight = self.params.add(
            format!("{name}.weight"),
            Tensor4::from_vec([1, 1, c_out, c_in], w.into_vec())?,
            true,
        );
        let bias = self.params.add(
            format!("{name}.bias"),
            Tensor4::flat(vec![0.0; c_out]),
            false,
        );
        Ok(Pointwise { weight, bias })
    }

    fn neocell(&mut self, name: &str, spec: NeoCellSpec) -> Result<Neo> {
        let p = match self.init {
            InitMethod::NeoInit => NeoCellParams::neoinit(&spec, self.rng)?,
            InitMethod::RandomNormal => NeoCellParams::random_normal(&spec, self.rng)?,
        };
        let (l, r, _) = p.to_flat();
        let left = self
            .params
            .add(format!("{name}.left"), Tensor4::flat(l), true);
        let right = self
            .params
            .add(format!("{name}.right"), Tensor4::flat(r), true);
        Ok(Neo { spec, left, right })
    }
}

impl Model {
    /// Allocates and initializes every parameter, drawing from `rng` in
    /// layer order.
    pub fn build(spec: &ModelSpec, init: InitMethod, rng: &mut Rng) -> Result<Model> {
        spec.validate()?;
        let mut b = Builder {
            params: ParamStore::new(),
            norms: Vec::new(),
            init,
            rng,
        };
        let mut notes = Vec::new();
        let p2 = spec.stem_patch * spec.stem_patch * spec.in_channels;
        let stem_pw = b.pointwise("stem.pw", p2, spec.widths[0])?;
        let stem_norm = b.norm("stem.bn", spec.widths[0]);

        let total_blocks: usize = spec.depths.iter().sum();
        let mut block_index = 0;
        let sizes = spec.stage_sizes();
        let mut stages = Vec::new();
        for (si, &size) in sizes.iter().enumerate() {
            let stage = si + 1;
            let c = spec.widths[si];
            let down = if si > 0 {
                let prev = spec.widths[si - 1];
                let name = format!("down{stage}");
                let ns = NeoCellSpec::uniform(prev, (2, 2), (1, 1), false)?;
                let neo = b.neocell(&format!("{name}.neocell"), ns)?;
                let norm1 = b.norm(&format!("{name}.bn1"), prev);
                let pw = b.pointwise(&format!("{name}.pw"), prev, c)?;
                let norm2 = b.norm(&format!("{name}.bn2"), c);
                Some(Down {
                    neo,
                    norm1,
                    pw,
                    norm2,
                })
            } else {
                None
            };
            let ns = stage_neocell_spec(stage, c, size, &spec.policies[si], &mut notes)
                .map_err(|e| shape_err!("stage {stage}: {e}"))?;
            let mut blocks = Vec::new();
            for bi in 0..spec.depths[si] {
                let name = format!("stage{stage}.block{bi}");
                let rate = if total_blocks > 1 {
                    spec.drop_path * block_index as f64 / (total_blocks - 1) as f64
                } else {
                    spec.drop_path
                };
                block_index += 1;
                let bs = BlockSpec {
                    channels: c,
                    neocell: ns.clone(),
                    expansion: spec.expansion,
                    drop_path: rate,
                };
                let neo = b.neocell(&format!("{name}.neocell"), ns.clone())?;
                let norm = b.norm(&format!("{name}.bn"), c);
                let expand = b.pointwise(&format!("{name}.expand"), c, spec.expansion * c)?;
                let project = b.pointwise(&format!("{name}.project"), spec.expansion * c, c)?;
                blocks.push(Block {
                    spec: bs,
                    neo,
                    norm,
                    expand,
                    project,
                });
            }
            stages.push(Stage { down, blocks });
        }
        let head = b.pointwise("head", spec.widths[3], spec.classes)?;
        let model = Model {
            spec: spec.clone(),
            init,
            params: b.params,
            norms: b.norms,
            path: NeoCellPath::Patchwise,
            stem: (stem_pw, stem_norm),
            stages,
            head,
            notes,
        };
        let formula = model.formula_param_count();
        let actual = model.params.scalar_count();
        if formula != actual {
            return Err(param_err!(
                "parameter formula gives {formula}, allocation holds {actual}"
            ));
        }
        Ok(model)
    }

    /// Parameter count from the closed-form per-unit formulas.
    pub fn formula_param_count(&self) -> usize {
        let s = &self.spec;
        let p2 = s.stem_patch * s.stem_patch * s.in_channels;
        let mut n = p2 * s.widths[0] + s.widths[0] + 2 * s.widths[0];
        for (si, st) in self.stages.iter().enumerate() {
            if si > 0 {
                let (a, c) = (s.widths[si - 1], s.widths[si]);
                n += 4 * a + 2 * a + a * c + c + 2 * c;
            }
            n += st
                .blocks
                .iter()
                .map(|b| b.spec.param_count())
                .sum::<usize>();
        }
        n + s.widths[3] * s.classes + s.classes
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Size substitutions applied at build time.
    pub fn substitutions(&self) -> &[String] {
        &self.notes
    }

    pub fn block_specs(&self) -> Vec<&BlockSpec> {
        self.stages
            .iter()
            .flat_map(|s| s.blocks.iter().map(|b| &b.spec))
            .collect()
    }

    /// Records the forward pass of `x` using parameter values from
    /// `params` (normally `self.params`, but any store with the same
    /// layout works, which is what gradient checking relies on).
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        x: &Tensor4,
        mode: Mode,
    ) -> Result<Forward> {
        let [_, c, h, w] = x.dims();
        let s = &self.spec;
        if c != s.in_channels || h != s.input_size || w != s.input_size {
            return Err(shape_err!(
                "model {} expects (n, {}, {}, {}) input, got {:?}",
                s.name,
                s.in_channels,
                s.input_size,
                s.input_size,
                x.dims()
            ));
        }
        let norm_mode = match mode {
            Mode::Train { .. } => NormMode::Train,
            Mode::Eval => NormMode::Eval,
        };
        let mut drop_rng = match mode {
            Mode::Train { drop_seed } => Some(Rng::new(drop_seed)),
            Mode::Eval => None,
        };
        let mut moments = Vec::new();
        let batch = x.dims()[0];

        let mut ctx = Ctx {
            tape,
            params,
            norms: &self.norms,
            mode: norm_mode,
            moments: &mut moments,
            path: self.path,
        };

        let input = ctx.tape.input(x.clone());
        let [_, _, mut y] = self.stem(&mut ctx, input)?;

        for st in &self.stages {
            if let Some(d) = &st.down {
                let z = ctx.neocell(y, &d.neo)?;
                let z = ctx.norm(z, &d.norm1)?;
                let z = ctx.tape.gelu(z);
                let z = ctx.pointwise(z, &d.pw)?;
                let z = ctx.norm(z, &d.norm2)?;
                y = ctx.tape.gelu(z);
            }
            for b in &st.blocks {
                let z = ctx.neocell(y, &b.neo)?;
                let z = ctx.norm(z, &b.norm)?;
                let z = ctx.pointwise(z, &b.expand)?;
                let z = ctx.tape.gelu(z);
                let mut z = ctx.pointwise(z, &b.project)?;
                if let Some(rng) = drop_rng.as_mut() {
                    if b.spec.drop_path > 0.0 {
                        let scales = drop_path_scales(batch, b.spec.drop_path, rng)?;
                        z = ctx.tape.scale_samples(z, scales)?;
                    }
                }
                y = ctx.tape.add(y, z)?;
            }
        }
        let pooled = ctx.tape.global_avg_pool(y);
        let logits = ctx.pointwise(pooled, &self.head)?;
        Ok(Forward { logits, moments })
    }

    fn stem(&self, ctx: &mut Ctx<'_>, input: NodeId) -> Result<[NodeId; 3]> {
        let a = ctx.tape.space_to_depth(input, self.spec.stem_patch)?;
        let b = ctx.pointwise(a, &self.stem.0)?;
        let c = ctx.norm(b, &self.stem.1)?;
        Ok([a, b, c])
    }

    /// Eval-mode outputs of the stem's space-to-depth, pointwise and
    /// batch-norm steps.
    pub fn stem_trace(&self, x: &Tensor4) -> Result<[Tensor4; 3]> {
        let mut tape = Tape::new();
        let mut moments = Vec::new();
        let mut ctx = Ctx {
            tape: &mut tape,
            params: &self.params,
            norms: &self.norms,
            mode: NormMode::Eval,
            moments: &mut moments,
            path: self.path,
        };
        let input = ctx.tape.input(x.clone());
        let ids = self.stem(&mut ctx, input)?;
        Ok(ids.map(|id| tape.value(id).clone()))
    }

    /// Eval-mode logits as an `(n, classes)` row-major vector.
    pub fn predict(&self, x: &Tensor4) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, &self.params, x, Mode::Eval)?;
        Ok(tape.value(f.logits).data().to_vec())
    }

    /// Folds train-mode batch moments into the running statistics.
    pub fn apply_moments(&mut self, moments: &[(usize, BatchMoments)]) {
        for (i, m) in moments {
            self.norms[*i].apply(m);
        }
    }

    /// Human-readable listing of every unit, its NeoCell groups and
    /// parameter counts.
    pub fn manifest(&self) -> String {
        let s = &self.spec;
        let mut out = String::from("neonext-model v1\n");
        writeln!(
            out,
            "name {} input {}x{}x{} classes {} init {}",
            s.name, s.in_channels, s.input_size, s.input_size, s.classes, self.init
        )
        .unwrap();
        let p2 = s.stem_patch * s.stem_patch * s.in_channels;
        writeln!(
            out,
            "stem space_to_depth p={} -> pointwise {}->{} -> bn  params={}",
            s.stem_patch,
            p2,
            s.widths[0],
            p2 * s.widths[0] + 3 * s.widths[0]
        )
        .unwrap();
        let sizes = s.stage_sizes();
        for (si, st) in self.stages.iter().enumerate() {
            writeln!(
                out,
                "stage {} map {}x{} width {}",
                si + 1,
                sizes[si],
                sizes[si],
                s.widths[si]
            )
            .unwrap();
            if si > 0 {
                let (a, c) = (s.widths[si - 1], s.widths[si]);
                writeln!(
                    out,
                    "  downsample neocell 2x2->1x1 -> bn -> gelu -> pointwise {a}->{c} -> bn -> gelu  params={}",
                    6 * a + a * c + 3 * c
                )
                .unwrap();
            }
            for (bi, b) in st.blocks.iter().enumerate() {
                writeln!(
                    out,
                    "  block {bi} drop_path {:.4} params={}",
                    b.spec.drop_path,
                    b.spec.param_count()
                )
                .unwrap();
                for g in &b.spec.neocell.groups {
                    writeln!(
                        out,
                        "    group channels={}..{} {}x{} shift={}",
                        g.channels.start, g.channels.end, g.h, g.w, g.shift
                    )
                    .unwrap();
                }
            }
        }
        writeln!(
            out,
            "head avgpool -> linear {}->{}  params={}",
            s.widths[3],
            s.classes,
            s.widths[3] * s.classes + s.classes
        )
        .unwrap();
        for n in &self.notes {
            writeln!(out, "substitution {n}").unwrap();
        }
        writeln!(out, "total params {}", self.param_count()).unwrap();
        out
    }

    /// Writes `model.toml` (spec), `manifest.txt`, `params.bin` (every
    /// parameter in store order) and `norms.bin` (running mean then
    /// variance per BN layer).
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let spec = toml::to_string(&CheckpointHeader {
            init: self.init,
            spec: self.spec.clone(),
        })
        .map_err(|e| Error::Config(e.to_string()))?;
        fs::write(dir.join("model.toml"), spec)?;
        fs::write(dir.join("manifest.txt"), self.manifest())?;
        let mut w = BufWriter::new(fs::File::create(dir.join("params.bin"))?);
        for (_, p) in self.params.iter() {
            p.value.write_to(&mut w)?;
        }
        let mut w = BufWriter::new(fs::File::create(dir.join("norms.bin"))?);
        for n in &self.norms {
            Tensor4::flat(n.mean.clone()).write_to(&mut w)?;
            Tensor4::flat(n.var.clone()).write_to(&mut w)?;
        }
        Ok(())
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Model> {
        let text = fs::read_to_string(dir.join("model.toml"))?;
        let header: CheckpointHeader =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let mut model = Model::build(&header.spec, header.init, &mut Rng::new(0))?;
        let mut r = BufReader::new(fs::File::open(dir.join("params.bin"))?);
        let ids: Vec<ParamId> = model.params.ids().collect();
        for id in ids {
            let t = Tensor4::read_from(&mut r)?;
            let p = model.params.get_mut(id);
            if t.dims() != p.value.dims() {
                return Err(param_err!(
                    "checkpoint tensor for {} has dims {:?}",
                    p.name,
                    t.dims()
                ));
            }
            p.value = t;
        }
        let mut r = BufReader::new(fs::File::open(dir.join("norms.bin"))?);
        for n in &mut model.norms {
            n.mean = Tensor4::read_from(&mut r)?.into_vec();
            n.var = Tensor4::read_from(&mut r)?.into_vec();
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    init: InitMethod,
    spec: ModelSpec,
}

struct Ctx<'a> {
    tape: &'a mut Tape,
    params: &'a ParamStore,
    norms: &'a [BatchNormStats],
    mode: NormMode,
    moments: &'a mut Vec<(usize, BatchMoments)>,
    path: NeoCellPath,
}

impl Ctx<'_> {
    fn pointwise(&mut self, x: NodeId, p: &Pointwise) -> Result<NodeId> {
        let w = self.tape.param(self.params, p.weight);
        let b = self.tape.param(self.params, p.bias);
        self.tape.pointwise(x, w, Some(b))
    }

    fn norm(&mut self, x: NodeId, n: &Norm) -> Result<NodeId> {
        let g = self.tape.param(self.params, n.gamma);
        let b = self.tape.param(self.params, n.beta);
        let (y, m) = self
            .tape
            .batchnorm(x, g, b, &self.norms[n.stats], self.mode)?;
        if let Some(m) = m {
            self.moments.push((n.stats, m));
        }
        Ok(y)
    }

    fn neocell(&mut self, x: NodeId, n: &Neo) -> Result<NodeId> {
        let l = self.tape.param(self.params, n.left);
        let r = self.tape.param(self.params, n.right);
        self.tape.neocell(x, &n.spec, l, r, None, self.path)
    }
}
