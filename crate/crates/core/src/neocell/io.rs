//! On-disk form of a NeoCell layer: a text manifest describing the
//! groups plus flat binary tensors for the left, right and bias params.
//!
//! ```text
//! neocell-spec v1
//! use_bias false
//! group channels=0..12 h=4 w=4 h_out=4 w_out=4 shift=0
//! group channels=12..24 h=7 w=7 h_out=7 w_out=7 shift=3
//! ```

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{GroupSpec, NeoCellParams, NeoCellSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

const HEADER: &str = "neocell-spec v1";

pub fn write_spec_manifest(spec: &NeoCellSpec) -> String {
    let mut s = format!("{HEADER}\nuse_bias {}\n", spec.use_bias);
    for g in &spec.groups {
        writeln!(
            s,
            "group channels={}..{} h={} w={} h_out={} w_out={} shift={}",
            g.channels.start, g.channels.end, g.h, g.w, g.h_out, g.w_out, g.shift
        )
        .unwrap();
    }
    s
}

pub fn read_spec_manifest(text: &str) -> Result<NeoCellSpec> {
    let bad = |line: &str| Error::Config(format!("malformed NeoCell manifest line: {line:?}"));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(l) if l.trim() == HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "expected header {HEADER:?}, found {other:?}"
            )))
        }
    }
    let mut use_bias = None;
    let mut groups = Vec::new();
    for line in lines {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("use_bias") => {
                use_bias = Some(
                    parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad(line))?,
                );
            }
            Some("group") => {
                let mut channels = None;
                let mut vals = [None; 5];
                for kv in parts {
                    let (k, v) = kv.split_once('=').ok_or_else(|| bad(line))?;
                    let idx = match k {
                        "channels" => {
                            let (a, b) = v.split_once("..").ok_or_else(|| bad(line))?;
                            let a: usize = a.parse().map_err(|_| bad(line))?;
                            let b: usize = b.parse().map_err(|_| bad(line))?;
                            channels = Some(a..b);
                            continue;
                        }
                        "h" => 0,
                        "w" => 1,
                        "h_out" => 2,
                        "w_out" => 3,
                        "shift" => 4,
                        _ => return Err(bad(line)),
                    };
                    vals[idx] = Some(v.parse::<usize>().map_err(|_| bad(line))?);
                }
                let [Some(h), Some(w), Some(ho), Some(wo), Some(s)] = vals else {
                    return Err(bad(line));
                };
                groups.push(GroupSpec::new(
                    channels.ok_or_else(|| bad(line))?,
                    (h, w),
                    (ho, wo),
                    s,
                )?);
            }
            _ => return Err(bad(line)),
        }
    }
    NeoCellSpec::new(
        groups,
        use_bias.ok_or_else(|| Error::Config("manifest lacks use_bias".into()))?,
    )
}

/// Writes `spec.txt`, `left.bin`, `right.bin` and (with bias) `bias.bin`.
pub fn save_params(dir: &Path, spec: &NeoCellSpec, params: &NeoCellParams) -> Result<()> {
    params.validate(spec)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("spec.txt"), write_spec_manifest(spec))?;
    let (l, r, b) = params.to_flat();
    Tensor4::flat(l).write_to(BufWriter::new(File::create(dir.join("left.bin"))?))?;
    Tensor4::flat(r).write_to(BufWriter::new(File::create(dir.join("right.bin"))?))?;
    if let Some(b) = b {
        Tensor4::flat(b).write_to(BufWriter::new(File::create(dir.join("bias.bin"))?))?;
    }
    Ok(())
}

pub fn load_params(dir: &Path) -> Result<(NeoCellSpec, NeoCellParams)> {
    let spec = read_spec_manifest(&fs::read_to_string(dir.join("spec.txt"))?)?;
    let read = |name: &str| -> Result<Vec<f64>> {
        Ok(Tensor4::read_from(BufReader::new(File::open(dir.join(name))?))?.into_vec())
    };
    let l = read("left.bin")?;
    let r = read("right.bin")?;
    let b = if spec.use_bias {
        Some(read("bias.bin")?)
    } else {
        None
    };
    let params = NeoCellParams::from_flat(&spec, &l, &r, b.as_deref())?;
    Ok((spec, params))
}
