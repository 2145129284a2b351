use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Mean softmax cross-entropy and its gradient `(softmax − onehot)/B`.
pub fn cross_entropy<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<(f64, Matrix<T>)> {
    let (b, m) = (logits.rows(), logits.cols());
    if labels.len() != b {
        return Err(Error::dims("cross entropy", &[b, m], &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
        return Err(Error::Range(format!("label {bad} outside 0..{m}")));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(b * m);
    let scale = 1.0 / b as f64;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let mx = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.widen()));
        let lse = mx + row.iter().map(|v| (v.widen() - mx).exp()).sum::<f64>().ln();
        loss += lse - row[y].widen();
        for (i, v) in row.iter().enumerate() {
            let p = (v.widen() - lse).exp();
            grad.push(T::from_f64((p - f64::from(u8::from(i == y))) * scale));
        }
    }
    Ok((loss * scale, Matrix::new(b, m, grad)?))
}
