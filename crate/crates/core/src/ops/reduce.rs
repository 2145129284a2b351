use crate::error::{Error, Result};
use crate::ops::checked;
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReduceMode {
    Sum,
    Mean,
    Max,
}

/// Spatial reduction `[B,H,W,C] -> [B,1,1,C]`, accumulated in 64-bit.
pub fn reduce<T: Scalar>(input: &Tensor<T>, mode: ReduceMode) -> Tensor<T> {
    let d = input.dims();
    let (px, ch) = (d.pixels(), d.channels);
    let mut out = Vec::with_capacity(d.batch * ch);
    let init = if mode == ReduceMode::Max {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    for slab in input.data().chunks_exact(px * ch) {
        let mut acc = vec![init; ch];
        for row in slab.chunks_exact(ch) {
            for (a, v) in acc.iter_mut().zip(row) {
                match mode {
                    ReduceMode::Max => *a = a.max(v.widen()),
                    _ => *a += v.widen(),
                }
            }
        }
        if mode == ReduceMode::Mean {
            acc.iter_mut().for_each(|a| *a /= px as f64);
        }
        out.extend(acc.into_iter().map(T::from_f64));
    }
    checked(Tensor::from_parts(Dims::new(d.batch, 1, 1, ch), out))
}

/// VJP of [`reduce`]. `Max` routes the gradient to the first maximum in
/// row-major scan order.
pub fn reduce_backward<T: Scalar>(
    input: &Tensor<T>,
    mode: ReduceMode,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d = input.dims();
    let want = Dims::new(d.batch, 1, 1, d.channels);
    if upstream.dims() != want {
        return Err(Error::dims(
            "reduce backward",
            &upstream.dims().as_array(),
            &want.as_array(),
        ));
    }
    let (px, ch) = (d.pixels(), d.channels);
    let mut out = vec![T::zero(); d.len()];
    for b in 0..d.batch {
        let up = &upstream.data()[b * ch..(b + 1) * ch];
        let base = b * px * ch;
        match mode {
            ReduceMode::Sum | ReduceMode::Mean => {
                let scale = if mode == ReduceMode::Mean {
                    1.0 / px as f64
                } else {
                    1.0
                };
                let g: Vec<T> = up.iter().map(|u| T::from_f64(u.widen() * scale)).collect();
                for row in out[base..base + px * ch].chunks_exact_mut(ch) {
                    row.copy_from_slice(&g);
                }
            }
            ReduceMode::Max => {
                let slab = &input.data()[base..base + px * ch];
                for (c, &u) in up.iter().enumerate() {
                    let mut best = 0;
                    for p in 1..px {
                        if slab[p * ch + c] > slab[best * ch + c] {
                            best = p;
                        }
                    }
                    out[base + best * ch + c] = u;
                }
            }
        }
    }
    Ok(checked(Tensor::from_parts(d, out)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::channel_split;
    use noah_testkit::{check_gradient, seeded_values};
    use proptest::prelude::*;

    #[test]
    fn sum_of_ones() {
        let t = Tensor::<f32>::filled(Dims::new(1, 3, 3, 1), 1.0).unwrap();
        assert_eq!(reduce(&t, ReduceMode::Sum).data(), &[9.0]);
    }

    #[test]
    fn mean_is_sum_over_pixels() {
        let d = Dims::new(2, 3, 4, 3);
        let t = Tensor::<f64>::from_f64(d, &seeded_values(1, d.len(), 1.0)).unwrap();
        let (s, m) = (reduce(&t, ReduceMode::Sum), reduce(&t, ReduceMode::Mean));
        for (a, b) in s.data().iter().zip(m.data()) {
            assert!((a / 12.0 - b).abs() < 1e-15);
        }
    }

    #[test]
    fn max_backward_is_one_hot() {
        let t = Tensor::<f64>::from_f64(Dims::new(1, 2, 2, 1), &[0.1, 0.9, -0.5, 0.3]).unwrap();
        assert_eq!(reduce(&t, ReduceMode::Max).data(), &[0.9]);
        let up = Tensor::from_f64(Dims::new(1, 1, 1, 1), &[2.0]).unwrap();
        let g = reduce_backward(&t, ReduceMode::Max, &up).unwrap();
        assert_eq!(g.data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn max_ties_go_to_first_position() {
        let t = Tensor::<f32>::filled(Dims::new(1, 2, 2, 1), 1.0).unwrap();
        let up = Tensor::filled(Dims::new(1, 1, 1, 1), 1.0).unwrap();
        let g = reduce_backward(&t, ReduceMode::Max, &up).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_wrong_upstream() {
        let t = Tensor::<f32>::zeros(Dims::new(1, 2, 2, 2)).unwrap();
        let up = Tensor::zeros(Dims::new(1, 1, 1, 3)).unwrap();
        assert!(reduce_backward(&t, ReduceMode::Sum, &up).is_err());
    }

    #[test]
    fn reductions_match_finite_differences() {
        let d = Dims::new(2, 3, 3, 2);
        // Seed picked so every slice's top two entries differ by more than the step.
        let xv = seeded_values(8, d.len(), 1.0);
        let uv = seeded_values(4, 4, 1.0);
        let up = Tensor::<f64>::from_f64(Dims::new(2, 1, 1, 2), &uv).unwrap();
        let x = Tensor::<f64>::from_f64(d, &xv).unwrap();
        for mode in [ReduceMode::Sum, ReduceMode::Mean, ReduceMode::Max] {
            let g = reduce_backward(&x, mode, &up).unwrap();
            let c = check_gradient(
                "reduce",
                |p| {
                    let y = reduce(&Tensor::<f64>::from_f64(d, p).unwrap(), mode);
                    y.data().iter().zip(&uv).map(|(a, b)| a * b).sum()
                },
                &xv,
                g.data(),
            );
            assert!(c.passes(), "{mode:?}: {c:?}");
        }
    }

    proptest! {
        #[test]
        fn sum_is_split_invariant(seed in any::<u64>(), sizes in prop::collection::vec(1usize..4, 1..4)) {
            let c: usize = sizes.iter().sum();
            let d = Dims::new(1, 4, 4, c);
            let t = Tensor::<f32>::from_f64(d, &seeded_values(seed, d.len(), 1.0)).unwrap();
            let whole: f64 = reduce(&t, ReduceMode::Sum).data().iter().map(|v| v.widen()).sum();
            let parts: f64 = channel_split(&t, &sizes)
                .unwrap()
                .iter()
                .flat_map(|p| reduce(p, ReduceMode::Sum).into_data())
                .map(|v| v.widen())
                .sum();
            prop_assert!((whole - parts).abs() < 1e-6);
        }
    }
}
