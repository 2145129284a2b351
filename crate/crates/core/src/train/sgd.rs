use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{GradientSet, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdHyper {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Per-parameter velocity buffers, created lazily at zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdState {
    velocity: IndexMap<String, Vec<f64>>,
}

impl SgdState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn velocity(&self, path: &str) -> Option<&[f64]> {
        self.velocity.get(path).map(Vec::as_slice)
    }
}

/// `v ← μ·v + g + λ·p`, `p ← p − η·v` for every parameter.
///
/// `grads` must hold exactly one array per parameter with matching shape.
pub fn sgd_step<T: Scalar, P: Parameterized<T>>(
    params: &mut P,
    grads: &GradientSet<T>,
    state: &mut SgdState,
    hyper: SgdHyper,
) -> Result<()> {
    let mut err = None;
    let mut seen = 0;
    params.visit_params_mut(&mut |name, dims, values| {
        if err.is_some() {
            return;
        }
        seen += 1;
        let Some(g) = grads.get(name) else {
            err = Some(Error::Contract(format!("no gradient for {name}")));
            return;
        };
        if g.dims != dims {
            err = Some(Error::Dimension {
                op: "sgd step",
                left: dims.to_vec(),
                right: g.dims.clone(),
            });
            return;
        }
        let v = state
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; values.len()]);
        for ((p, g), v) in values.iter_mut().zip(&g.values).zip(v.iter_mut()) {
            let pw = p.widen();
            *v = hyper.momentum * *v + g.widen() + hyper.weight_decay * pw;
            *p = T::from_f64(pw - hyper.learning_rate * *v);
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if seen != grads.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {seen} parameters",
            grads.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Matrix, Visit, VisitMut};

    struct Scalar1(Matrix<f64>);

    impl Parameterized<f64> for Scalar1 {
        fn visit_params(&self, f: &mut Visit<'_, f64>) {
            f("w", &[1, 1], self.0.data());
        }

        fn visit_params_mut(&mut self, f: &mut VisitMut<'_, f64>) {
            f("w", &[1, 1], self.0.data_mut());
        }
    }

    fn grad(g: f64) -> GradientSet<f64> {
        let mut s = GradientSet::new();
        s.insert("w", vec![1, 1], vec![g]);
        s
    }

    const PLAIN: SgdHyper = SgdHyper {
        learning_rate: 0.1,
        momentum: 0.0,
        weight_decay: 0.0,
    };

    #[test]
    fn plain_step_moves_by_lr_times_grad() {
        let mut p = Scalar1(Matrix::from_f64(1, 1, &[1.0]).unwrap());
        sgd_step(&mut p, &grad(0.5), &mut SgdState::new(), PLAIN).unwrap();
        assert_eq!(p.0.data(), &[1.0 - 0.1 * 0.5]);
    }

    #[test]
    fn zero_grads_leave_params() {
        let mut p = Scalar1(Matrix::from_f64(1, 1, &[0.375]).unwrap());
        let mut st = SgdState::new();
        for _ in 0..5 {
            sgd_step(
                &mut p,
                &grad(0.0),
                &mut st,
                SgdHyper {
                    momentum: 0.9,
                    ..PLAIN
                },
            )
            .unwrap();
        }
        assert_eq!(p.0.data(), &[0.375]);
    }

    #[test]
    fn momentum_trace_matches_hand_arithmetic() {
        // p0 = 1, g = 0.5 then 0.25, lr = 0.1, μ = 0.9, λ = 0.01.
        // v1 = 0.5 + 0.01·1 = 0.51,           p1 = 1 − 0.051 = 0.949
        // v2 = 0.9·0.51 + 0.25 + 0.01·0.949 = 0.71849, p2 = 0.949 − 0.071849 = 0.877151
        let hyper = SgdHyper {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.01,
        };
        let mut p = Scalar1(Matrix::from_f64(1, 1, &[1.0]).unwrap());
        let mut st = SgdState::new();
        sgd_step(&mut p, &grad(0.5), &mut st, hyper).unwrap();
        assert!((st.velocity("w").unwrap()[0] - 0.51).abs() < 1e-7);
        assert!((p.0.data()[0] - 0.949).abs() < 1e-7);
        sgd_step(&mut p, &grad(0.25), &mut st, hyper).unwrap();
        assert!((st.velocity("w").unwrap()[0] - 0.71849).abs() < 1e-7);
        assert!((p.0.data()[0] - 0.877151).abs() < 1e-7);
    }

    #[test]
    fn shape_and_coverage_errors() {
        let mut p = Scalar1(Matrix::from_f64(1, 1, &[1.0]).unwrap());
        let mut wrong = GradientSet::new();
        wrong.insert("w", vec![1], vec![0.0]);
        assert!(matches!(
            sgd_step(&mut p, &wrong, &mut SgdState::new(), PLAIN),
            Err(Error::Dimension { .. })
        ));
        assert!(sgd_step(&mut p, &GradientSet::new(), &mut SgdState::new(), PLAIN).is_err());
        let mut extra = grad(0.0);
        extra.insert("other", vec![1], vec![0.0]);
        assert!(sgd_step(&mut p, &extra, &mut SgdState::new(), PLAIN).is_err());
    }
}
