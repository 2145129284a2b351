//! Classification heads: the non-global attentive head, the pooling
//! baseline it replaces, and exact cost accounting for both.

mod config;
mod cost;
mod gap;
mod noah;

pub use config::{Activation, AttentionAxis, BlockGeometry, MergeMode, NoahConfig, SplitRatio};
pub use cost::{closed_form_cost, count_cost, count_gap_cost, CostItem, CostReport};
pub use gap::{gap_backward, gap_forward, gap_pixel_logits, init_gap, GapCache, GapHeadParams};
pub use noah::{
    init_noah, noah_backward, noah_forward, NoahCache, NoahHeadParams, PocaBlockParams,
};

use crate::scalar::Scalar;
use crate::tensor::{GradientSet, Matrix, Parameterized, Tensor};

/// Gradients produced by a head's backward pass.
#[derive(Debug, Clone)]
pub struct HeadGrads<T> {
    pub params: GradientSet<T>,
    /// Gradient with respect to the input feature map.
    pub input: Tensor<T>,
}

/// Row-wise softmax over logits.
pub fn classify<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = Vec::with_capacity(logits.data().len());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let mx = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.widen()));
        let sum: f64 = row.iter().map(|v| (v.widen() - mx).exp()).sum();
        out.extend(
            row.iter()
                .map(|v| T::from_f64((v.widen() - mx).exp() / sum)),
        );
    }
    Matrix::from_parts(logits.rows(), logits.cols(), out)
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(scores: &Matrix<T>) -> Vec<usize> {
    (0..scores.rows())
        .map(|r| {
            let row = scores.row(r);
            let mut best = 0;
            for (i, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Whether `label` is among the `k` highest scores of `row`; ties rank lower indices first.
pub fn in_top_k<T: Scalar>(row: &[T], label: usize, k: usize) -> bool {
    let target = row[label];
    let ahead = row
        .iter()
        .enumerate()
        .filter(|&(i, v)| *v > target || (*v == target && i < label))
        .count();
    ahead < k
}

/// Count of stored scalar parameters, walking the actual arrays.
pub fn audit_params<T: Scalar, P: Parameterized<T>>(params: &P) -> u64 {
    params.param_count()
}
