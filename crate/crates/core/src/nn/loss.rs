use crate::error::{shape_err, Result};
use crate::tensor::{Matrix, Tensor4};

/// One-hot targets mixed with the uniform distribution:
/// `(1 - smoothing) * onehot + smoothing / classes`.
pub fn smooth_targets(labels: &[usize], classes: usize, smoothing: f64) -> Matrix {
    let mut t = Matrix::zeros(labels.len(), classes);
    let off = smoothing / classes as f64;
    for (i, &y) in labels.iter().enumerate() {
        for k in 0..classes {
            t.set(i, k, off);
        }
        t.set(i, y, t.get(i, y) + (1.0 - smoothing));
    }
    t
}

/// Mean over the batch of `-sum_k t_k log softmax(z)_k`, plus the
/// softmax probabilities. Logits must be `(n, classes, 1, 1)`.
///
/// Each term is computed as `t_k * (logsumexp(z) - z_k)` so uniform logits
/// with one-hot targets give exactly `ln(classes)`.
pub fn softmax_cross_entropy(logits: &Tensor4, targets: &Matrix) -> Result<(f64, Vec<f64>)> {
    let [n, k, h, w] = logits.dims();
    if h != 1 || w != 1 || targets.rows() != n || targets.cols() != k {
        return Err(shape_err!(
            "cross entropy: logits {:?} vs targets {}x{}",
            logits.dims(),
            targets.rows(),
            targets.cols()
        ));
    }
    let z = logits.data();
    let mut probs = vec![0.0; n * k];
    let mut total = 0.0;
    for i in 0..n {
        let row = &z[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        let mut li = 0.0;
        for j in 0..k {
            probs[i * k + j] = (row[j] - lse).exp();
            let t = targets.get(i, j);
            if t != 0.0 {
                li += t * (lse - row[j]);
            }
        }
        total += li;
    }
    Ok((total / n as f64, probs))
}
