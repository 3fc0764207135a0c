//! Loss functions. Each returns (mean loss, gradient w.r.t. the logits).

use ndarray::{Array1, Array2, ArrayView2};

/// Row-wise softmax.
pub fn softmax(logits: &ArrayView2<f32>) -> Array2<f32> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy over the batch with integer targets.
pub fn softmax_cross_entropy(
    logits: &ArrayView2<f32>,
    targets: &[usize],
) -> (f32, Array2<f32>) {
    let (n, _k) = logits.dim();
    assert_eq!(n, targets.len(), "batch/target length mismatch");
    let probs = softmax(logits);
    let mut loss = 0.0f32;
    for (i, &t) in targets.iter().enumerate() {
        loss -= probs[[i, t]].max(1e-12).ln();
    }
    loss /= n as f32;
    let mut grad = probs;
    for (i, &t) in targets.iter().enumerate() {
        grad[[i, t]] -= 1.0;
    }
    grad.mapv_inplace(|v| v / n as f32);
    (loss, grad)
}

/// Mean binary cross-entropy on logits, numerically stable form.
pub fn bce_with_logits(logits: &Array1<f32>, targets: &Array1<f32>) -> (f32, Array1<f32>) {
    assert_eq!(logits.len(), targets.len());
    let n = logits.len() as f32;
    let mut loss = 0.0f32;
    let mut grad = Array1::<f32>::zeros(logits.len());
    for i in 0..logits.len() {
        let x = logits[i];
        let t = targets[i];
        // log(1 + e^-|x|) + max(x, 0) - x*t
        loss += x.max(0.0) - x * t + (1.0 + (-x.abs()).exp()).ln();
        let sig = 1.0 / (1.0 + (-x).exp());
        grad[i] = (sig - t) / n;
    }
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = array![[1.0f32, 2.0, 3.0], [-5.0, 0.0, 5.0]];
        let p = softmax(&logits.view());
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        assert!(p[[0, 2]] > p[[0, 1]] && p[[0, 1]] > p[[0, 0]]);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_difference() {
        let logits = array![[0.5f32, -1.0, 2.0], [1.5, 0.0, -0.5]];
        let targets = [2usize, 0];
        let (_, grad) = softmax_cross_entropy(&logits.view(), &targets);
        let eps = 1e-3f32;
        for i in 0..2 {
            for j in 0..3 {
                let mut lp = logits.clone();
                let mut lm = logits.clone();
                lp[[i, j]] += eps;
                lm[[i, j]] -= eps;
                let (fp, _) = softmax_cross_entropy(&lp.view(), &targets);
                let (fm, _) = softmax_cross_entropy(&lm.view(), &targets);
                let numeric = (fp - fm) / (2.0 * eps);
                assert!((grad[[i, j]] - numeric).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn ce_loss_decreases_with_confidence() {
        let weak = array![[0.1f32, 0.0]];
        let strong = array![[5.0f32, 0.0]];
        let (l_weak, _) = softmax_cross_entropy(&weak.view(), &[0]);
        let (l_strong, _) = softmax_cross_entropy(&strong.view(), &[0]);
        assert!(l_strong < l_weak);
    }

    #[test]
    fn bce_gradient_matches_finite_difference() {
        let logits = array![0.3f32, -2.0, 4.0];
        let targets = array![1.0f32, 0.0, 1.0];
        let (_, grad) = bce_with_logits(&logits, &targets);
        let eps = 1e-3f32;
        for i in 0..3 {
            let mut lp = logits.clone();
            let mut lm = logits.clone();
            lp[i] += eps;
            lm[i] -= eps;
            let (fp, _) = bce_with_logits(&lp, &targets);
            let (fm, _) = bce_with_logits(&lm, &targets);
            let numeric = (fp - fm) / (2.0 * eps);
            assert!((grad[i] - numeric).abs() < 1e-3);
        }
    }
}
