//! Datasets, augmentation and deterministic batching.

pub mod augment;
pub mod batch;
pub mod cifar;
pub mod synth;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{param_err, shape_err, Error, Result};
use crate::tensor::Tensor4;

pub use augment::{augment, hflip, mixup_with, random_crop, AugmentPolicy};
pub use batch::{split_indices, BatchPlan, Split};
pub use cifar::{load_cifar10, parse_cifar_batch, CIFAR_CLASSES, CIFAR_DIR_ENV};
pub use synth::synth_task;

/// Images in `[0, 1]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor4,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor4, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.dims()[0] != labels.len() {
            return Err(shape_err!(
                "{} images but {} labels",
                images.dims()[0],
                labels.len()
            ));
        }
        if let Some(i) = labels.iter().position(|&l| l >= classes) {
            return Err(param_err!(
                "label {} at index {i} is not below {classes}",
                labels[i]
            ));
        }
        if let Some(i) = images.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(param_err!(
                "pixel {} at flat index {i} outside [0, 1]",
                images.data()[i]
            ));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies the samples at `idx`, in that order.
    pub fn gather(&self, idx: &[usize]) -> (Tensor4, Vec<usize>) {
        let [_, c, h, w] = self.images.dims();
        let per = c * h * w;
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let images = Tensor4::from_vec([idx.len(), c, h, w], data).expect("sizes agree");
        (images, idx.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let (images, labels) = self.gather(idx);
        Dataset {
            images,
            labels,
            classes: self.classes,
        }
    }

    /// Per-channel pixel means.
    pub fn channel_means(&self) -> Vec<f64> {
        let [n, c, _, _] = self.images.dims();
        (0..c)
            .map(|ch| {
                let s: f64 = (0..n)
                    .map(|b| self.images.plane(b, ch).iter().sum::<f64>())
                    .sum();
                s / (n * self.images.plane(0, ch).len()).max(1) as f64
            })
            .collect()
    }

    /// Writes `images.bin` and `labels.bin` in the tensor binary format.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.images
            .write_to(BufWriter::new(File::create(dir.join("images.bin"))?))?;
        let mut labels: Vec<f64> = self.labels.iter().map(|&l| l as f64).collect();
        labels.push(self.classes as f64);
        Tensor4::flat(labels).write_to(BufWriter::new(File::create(dir.join("labels.bin"))?))
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let images = Tensor4::read_from(BufReader::new(File::open(dir.join("images.bin"))?))?;
        let mut raw =
            Tensor4::read_from(BufReader::new(File::open(dir.join("labels.bin"))?))?.into_vec();
        let classes =
            raw.pop()
                .ok_or_else(|| Error::Config("empty label file".into()))? as usize;
        Dataset::new(
            images,
            raw.into_iter().map(|v| v as usize).collect(),
            classes,
        )
    }
}
