//! Procedural classification task for fast training checks.
//!
//! Each class owns a prototype image built from a handful of low-frequency
//! cosines per channel. A sample is
//!
//! ```text
//! clamp(0.5 + amplitude * contrast * prototype[label] + nuisance + noise, 0, 1)
//! ```
//!
//! where `contrast ~ U(0.5, 1)`, `nuisance` is a random low-frequency
//! pattern shared by no class, and `noise` is white Gaussian noise. Before
//! clamping the class signal is a fixed direction per class, so the task is
//! linearly separable up to the noise.

use std::f64::consts::PI;

use super::Dataset;
use crate::error::{param_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub side: usize,
    pub amplitude: f64,
    pub nuisance: f64,
    pub noise: f64,
    /// Highest spatial frequency (cycles per image) used by the patterns.
    pub max_freq: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            side: 32,
            amplitude: 0.3,
            nuisance: 0.1,
            noise: 0.05,
            max_freq: 3,
        }
    }
}

fn low_freq_pattern(rng: &mut Rng, side: usize, max_freq: usize) -> Vec<f64> {
    let mut out = vec![0.0; 3 * side * side];
    for ch in 0..3 {
        for _ in 0..4 {
            let fy = rng.below(max_freq + 1) as f64;
            let fx = rng.below(max_freq + 1) as f64;
            let phase = 2.0 * PI * rng.uniform();
            let a = rng.normal();
            for i in 0..side {
                for j in 0..side {
                    let t = 2.0 * PI * (fy * i as f64 + fx * j as f64) / side as f64 + phase;
                    out[(ch * side + i) * side + j] += a * libm::cos(t);
                }
            }
        }
    }
    let m = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        out.iter_mut().for_each(|v| *v /= m);
    }
    out
}

/// `n` samples with default settings; see [`synth_task_with`].
pub fn synth_task(rng: &mut Rng, n: usize, classes: usize) -> Result<Dataset> {
    synth_task_with(rng, n, classes, &SynthConfig::default())
}

/// Draws class prototypes, then `n` samples whose labels cycle through the
/// classes in shuffled order (so counts differ by at most one).
pub fn synth_task_with(
    rng: &mut Rng,
    n: usize,
    classes: usize,
    cfg: &SynthConfig,
) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(param_err!(
            "synthetic task needs n >= classes >= 1, got n={n}, classes={classes}"
        ));
    }
    let side = cfg.side;
    let per = 3 * side * side;
    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| low_freq_pattern(rng, side, cfg.max_freq))
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    rng.shuffle(&mut labels);
    let mut data = Vec::with_capacity(n * per);
    for &label in &labels {
        let contrast = 0.5 + 0.5 * rng.uniform();
        let nuisance = low_freq_pattern(rng, side, cfg.max_freq);
        for (p, q) in prototypes[label].iter().zip(&nuisance) {
            let v =
                0.5 + cfg.amplitude * contrast * p + cfg.nuisance * q + cfg.noise * rng.normal();
            data.push(v.clamp(0.0, 1.0));
        }
    }
    Dataset::new(
        Tensor4::from_vec([n, 3, side, side], data)?,
        labels,
        classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = synth_task(&mut Rng::new(7), 100, 2).unwrap();
        let b = synth_task(&mut Rng::new(7), 100, 2).unwrap();
        assert_eq!(a, b);
        let d = synth_task(&mut Rng::new(8), 103, 10).unwrap();
        let mut counts = vec![0usize; 10];
        d.labels.iter().for_each(|&l| counts[l] += 1);
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
    }

    #[test]
    fn needs_at_least_one_sample_per_class() {
        assert!(synth_task(&mut Rng::new(0), 3, 4).is_err());
    }

    /// Nearest class mean is a linear classifier; fitting it on one part
    /// and scoring another shows the classes are linearly separable.
    #[test]
    fn linear_baseline_separates_classes() {
        let d = synth_task(&mut Rng::new(3), 1200, 10).unwrap();
        let per = 3 * 32 * 32;
        let x = d.images.data();
        let mut means = vec![vec![0.0; per]; 10];
        let mut counts = [0usize; 10];
        for i in 0..1000 {
            let l = d.labels[i];
            counts[l] += 1;
            for (m, v) in means[l].iter_mut().zip(&x[i * per..(i + 1) * per]) {
                *m += v;
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= c as f64);
        }
        let mut correct = 0;
        for i in 1000..1200 {
            let xi = &x[i * per..(i + 1) * per];
            let best = (0..10)
                .min_by(|&a, &b| {
                    let da: f64 = means[a]
                        .iter()
                        .zip(xi)
                        .map(|(m, v)| (m - v) * (m - v))
                        .sum();
                    let db: f64 = means[b]
                        .iter()
                        .zip(xi)
                        .map(|(m, v)| (m - v) * (m - v))
                        .sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            correct += usize::from(best == d.labels[i]);
        }
        assert!(correct as f64 / 200.0 >= 0.95, "{correct}/200");
    }
}
