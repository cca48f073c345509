//! CIFAR-10 binary batches: each record is one label byte followed by
//! 3072 pixel bytes (1024 red, 1024 green, 1024 blue, row-major 32x32).

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const CIFAR_CLASSES: usize = 10;
/// Environment variable naming the directory with the binary batches.
pub const CIFAR_DIR_ENV: &str = "NEONEXT_CIFAR10_DIR";

const SIDE: usize = 32;
const PIXELS: usize = 3 * SIDE * SIDE;
const RECORD: usize = 1 + PIXELS;
const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

/// Decodes one batch file's bytes. `path` is only used in error messages.
pub fn parse_cifar_batch(bytes: &[u8], path: &Path) -> Result<(Vec<f64>, Vec<usize>)> {
    let load_err = |offset: usize, msg: String| Error::Load {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    let whole = bytes.len() / RECORD;
    if bytes.len() % RECORD != 0 {
        let at = whole * RECORD;
        return Err(load_err(
            bytes.len(),
            format!(
                "truncated record starting at byte {at} ({} of {RECORD} bytes)",
                bytes.len() - at
            ),
        ));
    }
    let mut pixels = Vec::with_capacity(whole * PIXELS);
    let mut labels = Vec::with_capacity(whole);
    for (r, rec) in bytes.chunks_exact(RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(load_err(
                r * RECORD,
                format!("label {label} is not below {CIFAR_CLASSES}"),
            ));
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok((pixels, labels))
}

fn load_files(dir: &Path, names: &[&str]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for name in names {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::Load {
            path: path.clone(),
            offset: 0,
            msg: e.to_string(),
        })?;
        let (p, l) = parse_cifar_batch(&bytes, &path)?;
        pixels.extend(p);
        labels.extend(l);
    }
    let images = Tensor4::from_vec([labels.len(), 3, SIDE, SIDE], pixels)?;
    Dataset::new(images, labels, CIFAR_CLASSES)
}

/// Reads the five training batches and the test batch from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    Ok((
        load_files(dir, &TRAIN_FILES)?,
        load_files(dir, &[TEST_FILE])?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(fill, PIXELS));
        r
    }

    #[test]
    fn parses_records_channel_major() {
        let mut bytes = record(3, 255);
        let mut second = record(9, 0);
        second[1 + 1024] = 51; // first green pixel
        bytes.extend(second);
        let (p, l) = parse_cifar_batch(&bytes, Path::new("x.bin")).unwrap();
        assert_eq!(l, vec![3, 9]);
        assert_eq!(p.len(), 2 * PIXELS);
        assert_eq!(p[0], 1.0);
        assert_eq!(p[PIXELS + 1024], 0.2);
        assert_eq!(p[PIXELS + 1023], 0.0);
    }

    #[test]
    fn truncation_reports_exact_offset() {
        let mut bytes = record(1, 7);
        bytes.extend(&record(2, 7)[..100]);
        match parse_cifar_batch(&bytes, Path::new("data_batch_1.bin")) {
            Err(Error::Load { path, offset, .. }) => {
                assert_eq!(path, Path::new("data_batch_1.bin"));
                assert_eq!(offset, (RECORD + 100) as u64);
            }
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn bad_label_reports_record_offset() {
        let mut bytes = record(1, 0);
        bytes.extend(record(10, 0));
        match parse_cifar_batch(&bytes, Path::new("t.bin")) {
            Err(Error::Load { offset, msg, .. }) => {
                assert_eq!(offset, RECORD as u64);
                assert!(msg.contains("label 10"));
            }
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn loads_directory_and_names_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        for (i, name) in TRAIN_FILES.iter().enumerate() {
            let mut b = record(i as u8, 10);
            b.extend(record(0, 20));
            fs::write(dir.path().join(name), b).unwrap();
        }
        let err = load_cifar10(dir.path()).unwrap_err();
        assert!(err.to_string().contains(TEST_FILE), "{err}");
        fs::write(dir.path().join(TEST_FILE), record(5, 0)).unwrap();
        let (train, test) = load_cifar10(dir.path()).unwrap();
        assert_eq!((train.len(), test.len()), (10, 1));
        assert_eq!(train.labels[..4], [0, 0, 1, 0]);
    }
}
