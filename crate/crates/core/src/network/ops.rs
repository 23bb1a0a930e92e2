//! Elementwise and per-feature layer operations.

use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Elementwise `max(x, 0)`.
pub fn relu_forward<S: Scalar>(h: &Matrix<S>) -> Matrix<S> {
    h.map(|x| x.max(S::zero()))
}

/// 2x1 max-pool with stride 2 over the feature dimension: output column `k`
/// is `max(r[2k], r[2k+1])`. Ties break toward the lower index so backward
/// routing is deterministic. Returns the pooled matrix and the winner offset
/// (0 or 1) per `(sample, pair)`.
pub fn maxpool_forward<S: Scalar>(r: &Matrix<S>) -> (Matrix<S>, Vec<u8>) {
    assert!(
        r.cols().is_multiple_of(2),
        "max-pool requires an even feature dimension, got {}",
        r.cols()
    );
    let pairs = r.cols() / 2;
    let mut pooled = Matrix::zeros(r.rows(), pairs);
    let mut idx = Vec::with_capacity(r.rows() * pairs);
    for i in 0..r.rows() {
        let row = r.row(i);
        for k in 0..pairs {
            let (a, b) = (row[2 * k], row[2 * k + 1]);
            if b > a {
                pooled.set(i, k, b);
                idx.push(1);
            } else {
                pooled.set(i, k, a);
                idx.push(0);
            }
        }
    }
    (pooled, idx)
}

/// Routes pooled gradients back to the recorded argmax positions; the losing
/// position of each pair receives zero.
pub fn maxpool_backward<S: Scalar>(d_pooled: &Matrix<S>, idx: &[u8], full_dim: usize) -> Matrix<S> {
    let pairs = d_pooled.cols();
    assert_eq!(
        full_dim,
        pairs * 2,
        "pooled width {pairs} does not match feature width {full_dim}"
    );
    assert_eq!(
        idx.len(),
        d_pooled.rows() * pairs,
        "pool index length mismatch"
    );
    let mut d_full = Matrix::zeros(d_pooled.rows(), full_dim);
    for i in 0..d_pooled.rows() {
        for k in 0..pairs {
            let winner = 2 * k + idx[i * pairs + k] as usize;
            d_full.set(i, winner, d_pooled.get(i, k));
        }
    }
    d_full
}

/// Mini-batch statistics and normalized values kept for the backward pass
/// and for the running-statistics update.
#[derive(Debug, Clone)]
pub struct BnCache<S> {
    /// Per-feature mini-batch mean.
    pub mean: Vec<S>,
    /// Per-feature biased mini-batch variance.
    pub var: Vec<S>,
    /// Per-feature `1 / sqrt(var + eps)`.
    pub inv_std: Vec<S>,
    /// Normalized values `(x - mean) * inv_std`.
    pub normalized: Matrix<S>,
}

/// Train-mode batch normalization: per feature, `(x - mean_B) / sqrt(var_B +
/// eps)` followed by the trainable scale and shift. Requires a batch of at
/// least 2 (a single sample has no batch variance).
pub fn batchnorm_train<S: Scalar>(
    h: &Matrix<S>,
    scale: &[S],
    shift: &[S],
    epsilon: f64,
) -> (Matrix<S>, BnCache<S>) {
    let n = h.rows();
    assert!(
        n >= 2,
        "batch normalization in train mode requires batch size >= 2, got {n}"
    );
    assert_eq!(scale.len(), h.cols(), "scale length mismatch");
    assert_eq!(shift.len(), h.cols(), "shift length mismatch");
    let inv_n = S::one() / S::cast(n as f64);
    let eps = S::cast(epsilon);

    let mut mean = vec![S::zero(); h.cols()];
    for i in 0..n {
        for (m, &x) in mean.iter_mut().zip(h.row(i)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m *= inv_n;
    }

    let mut var = vec![S::zero(); h.cols()];
    for i in 0..n {
        for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(h.row(i)) {
            let d = x - m;
            *v += d * d;
        }
    }
    for v in &mut var {
        *v *= inv_n;
    }

    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();

    let mut normalized = Matrix::zeros(n, h.cols());
    let mut out = Matrix::zeros(n, h.cols());
    for i in 0..n {
        let h_row = h.row(i);
        for j in 0..h.cols() {
            let x_hat = (h_row[j] - mean[j]) * inv_std[j];
            normalized.set(i, j, x_hat);
            out.set(i, j, scale[j] * x_hat + shift[j]);
        }
    }
    (
        out,
        BnCache {
            mean,
            var,
            inv_std,
            normalized,
        },
    )
}

/// Eval-mode batch normalization using running statistics.
pub fn batchnorm_eval<S: Scalar>(
    h: &Matrix<S>,
    scale: &[S],
    shift: &[S],
    run_mean: &[S],
    run_var: &[S],
    epsilon: f64,
) -> Matrix<S> {
    assert_eq!(scale.len(), h.cols(), "scale length mismatch");
    let eps = S::cast(epsilon);
    let inv_std: Vec<S> = run_var
        .iter()
        .map(|&v| S::one() / (v + eps).sqrt())
        .collect();
    let mut out = Matrix::zeros(h.rows(), h.cols());
    for i in 0..h.rows() {
        let h_row = h.row(i);
        for j in 0..h.cols() {
            out.set(
                i,
                j,
                scale[j] * (h_row[j] - run_mean[j]) * inv_std[j] + shift[j],
            );
        }
    }
    out
}

/// Backward pass through train-mode batch normalization, including the
/// dependence of the mini-batch mean and variance on the inputs. Returns
/// `(d_input, d_scale, d_shift)`.
pub fn batchnorm_backward<S: Scalar>(
    cache: &BnCache<S>,
    scale: &[S],
    d_out: &Matrix<S>,
) -> (Matrix<S>, Vec<S>, Vec<S>) {
    let n = d_out.rows();
    let cols = d_out.cols();
    assert_eq!(
        cache.normalized.shape(),
        d_out.shape(),
        "cache/gradient shape mismatch"
    );
    let inv_n = S::one() / S::cast(n as f64);

    let mut d_shift = vec![S::zero(); cols];
    let mut d_scale = vec![S::zero(); cols];
    for i in 0..n {
        let dy = d_out.row(i);
        let x_hat = cache.normalized.row(i);
        for j in 0..cols {
            d_shift[j] += dy[j];
            d_scale[j] += dy[j] * x_hat[j];
        }
    }

    // d_input = inv_std/n * (n*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
    // with dxhat = scale * dy; the two sums reuse d_shift and d_scale.
    let n_s = S::cast(n as f64);
    let mut d_input = Matrix::zeros(n, cols);
    for i in 0..n {
        let dy = d_out.row(i);
        let x_hat = cache.normalized.row(i);
        let d_row = d_input.row_mut(i);
        for j in 0..cols {
            let g = scale[j];
            d_row[j] = cache.inv_std[j]
                * inv_n
                * (n_s * g * dy[j] - g * d_shift[j] - x_hat[j] * g * d_scale[j]);
        }
    }
    (d_input, d_scale, d_shift)
}

/// Numerically stabilized soft-max (row max subtracted) and the mean
/// cross-entropy `-log p[label]` over the batch.
pub fn softmax_xent<S: Scalar>(scores: &Matrix<S>, labels: &[u8]) -> (S, Matrix<S>) {
    let n = scores.rows();
    assert_eq!(labels.len(), n, "label count mismatch");
    let mut probs = Matrix::zeros(n, scores.cols());
    let mut loss = S::zero();
    for (i, &label) in labels.iter().enumerate() {
        let label = label as usize;
        assert!(
            label < scores.cols(),
            "label {label} out of range for {} classes",
            scores.cols()
        );
        let row = scores.row(i);
        let max = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        let mut sum = S::zero();
        let p_row = probs.row_mut(i);
        for (p, &s) in p_row.iter_mut().zip(row) {
            *p = (s - max).exp();
            sum += *p;
        }
        for p in p_row.iter_mut() {
            *p /= sum;
        }
        loss -= p_row[label].ln();
    }
    (loss / S::cast(n as f64), probs)
}
