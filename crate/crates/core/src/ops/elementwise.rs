use crate::error::{Error, Result};
use crate::ops::checked;
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor};

fn same_dims<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dims(op, &a.dims().as_array(), &b.dims().as_array()));
    }
    Ok(())
}

pub fn hadamard<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_dims("hadamard", a, b)?;
    Ok(checked(Tensor::from_parts(
        a.dims(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x * y)
            .collect(),
    )))
}

/// Returns `(upstream ⊙ b, upstream ⊙ a)`.
pub fn hadamard_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    same_dims("hadamard backward", a, b)?;
    same_dims("hadamard backward upstream", a, upstream)?;
    Ok((hadamard(upstream, b)?, hadamard(upstream, a)?))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_dims("add", a, b)?;
    Ok(checked(Tensor::from_parts(
        a.dims(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x + y)
            .collect(),
    )))
}

/// Split along channels into consecutive parts of the given sizes.
pub fn channel_split<T: Scalar>(input: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let d = input.dims();
    if sizes.is_empty() || sizes.contains(&0) || sizes.iter().sum::<usize>() != d.channels {
        return Err(Error::dims("channel split", &d.as_array(), sizes));
    }
    let mut parts: Vec<Vec<T>> = sizes
        .iter()
        .map(|s| Vec::with_capacity(d.batch * d.pixels() * s))
        .collect();
    for px in input.data().chunks_exact(d.channels) {
        let mut start = 0;
        for (part, &s) in parts.iter_mut().zip(sizes) {
            part.extend_from_slice(&px[start..start + s]);
            start += s;
        }
    }
    Ok(parts
        .into_iter()
        .zip(sizes)
        .map(|(data, &s)| Tensor::from_parts(d.with_channels(s), data))
        .collect())
}

/// Inverse of [`channel_split`].
pub fn channel_concat<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidTensor("channel concat of zero parts".into()))?
        .dims();
    for p in parts {
        if p.dims().with_channels(1) != first.with_channels(1) {
            return Err(Error::dims(
                "channel concat",
                &first.as_array(),
                &p.dims().as_array(),
            ));
        }
    }
    let total: usize = parts.iter().map(|p| p.dims().channels).sum();
    let d = first.with_channels(total);
    let mut out = Vec::with_capacity(d.len());
    for px in 0..d.batch * d.pixels() {
        for p in parts {
            let c = p.dims().channels;
            out.extend_from_slice(&p.data()[px * c..(px + 1) * c]);
        }
    }
    Ok(Tensor::from_parts(d, out))
}

/// Repeat a single-channel map `channels` times.
pub fn broadcast_channels<T: Scalar>(input: &Tensor<T>, channels: usize) -> Result<Tensor<T>> {
    let d = input.dims();
    if d.channels != 1 || channels == 0 {
        return Err(Error::dims(
            "broadcast channels",
            &d.as_array(),
            &[channels],
        ));
    }
    let mut out = Vec::with_capacity(d.len() * channels);
    for &v in input.data() {
        out.extend(std::iter::repeat_n(v, channels));
    }
    Ok(Tensor::from_parts(d.with_channels(channels), out))
}

/// Sum over channels into a single-channel map (VJP of [`broadcast_channels`]).
pub fn sum_channels<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let d = input.dims();
    let out = input
        .data()
        .chunks_exact(d.channels)
        .map(|px| T::from_f64(px.iter().map(|v| v.widen()).sum()))
        .collect();
    checked(Tensor::from_parts(d.with_channels(1), out))
}

/// Stack tensors along the row axis: `[B, ΣH, W, C]`.
pub fn concat_height<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidTensor("height concat of zero parts".into()))?
        .dims();
    let key = |d: Dims| (d.batch, d.width, d.channels);
    for p in parts {
        if key(p.dims()) != key(first) {
            return Err(Error::dims(
                "height concat",
                &first.as_array(),
                &p.dims().as_array(),
            ));
        }
    }
    let total: usize = parts.iter().map(|p| p.dims().height).sum();
    let d = Dims {
        height: total,
        ..first
    };
    let mut out = Vec::with_capacity(d.len());
    for b in 0..d.batch {
        for p in parts {
            let stride = p.dims().pixels() * d.channels;
            out.extend_from_slice(&p.data()[b * stride..(b + 1) * stride]);
        }
    }
    Ok(Tensor::from_parts(d, out))
}

/// Inverse of [`concat_height`].
pub fn split_height<T: Scalar>(input: &Tensor<T>, heights: &[usize]) -> Result<Vec<Tensor<T>>> {
    let d = input.dims();
    if heights.is_empty() || heights.contains(&0) || heights.iter().sum::<usize>() != d.height {
        return Err(Error::dims("height split", &d.as_array(), heights));
    }
    let row = d.width * d.channels;
    let mut parts: Vec<Vec<T>> = heights
        .iter()
        .map(|h| Vec::with_capacity(d.batch * h * row))
        .collect();
    for b in 0..d.batch {
        let mut start = b * d.height * row;
        for (part, &h) in parts.iter_mut().zip(heights) {
            part.extend_from_slice(&input.data()[start..start + h * row]);
            start += h * row;
        }
    }
    Ok(parts
        .into_iter()
        .zip(heights)
        .map(|(data, &h)| Tensor::from_parts(Dims { height: h, ..d }, data))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use noah_testkit::{check_gradient, seeded_values};
    use proptest::prelude::*;

    #[test]
    fn hadamard_identity_and_selection() {
        let d = Dims::new(1, 2, 2, 3);
        let a = Tensor::<f32>::from_f64(d, &seeded_values(1, d.len(), 1.0)).unwrap();
        let ones = Tensor::filled(d, 1.0).unwrap();
        assert_eq!(hadamard(&a, &ones).unwrap(), a);
        let onehot =
            Tensor::from_fn(d, |_, i, j, _| if (i, j) == (1, 0) { 1.0 } else { 0.0 }).unwrap();
        let sel = hadamard(&onehot, &a).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for c in 0..3 {
                    let want = if (i, j) == (1, 0) {
                        a.get(0, i, j, c)
                    } else {
                        0.0
                    };
                    assert_eq!(sel.get(0, i, j, c), want);
                }
            }
        }
        assert!(hadamard(&a, &Tensor::zeros(Dims::new(1, 2, 2, 2)).unwrap()).is_err());
    }

    #[test]
    fn hadamard_matches_finite_differences() {
        let d = Dims::new(1, 2, 2, 3);
        let av = seeded_values(2, d.len(), 1.0);
        let bv = seeded_values(3, d.len(), 1.0);
        let uv = seeded_values(4, d.len(), 1.0);
        let loss = |a: &[f64], b: &[f64]| -> f64 {
            let y = hadamard(
                &Tensor::<f64>::from_f64(d, a).unwrap(),
                &Tensor::<f64>::from_f64(d, b).unwrap(),
            )
            .unwrap();
            y.data().iter().zip(&uv).map(|(p, q)| p * q).sum()
        };
        let (ga, gb) = hadamard_backward(
            &Tensor::from_f64(d, &av).unwrap(),
            &Tensor::from_f64(d, &bv).unwrap(),
            &Tensor::from_f64(d, &uv).unwrap(),
        )
        .unwrap();
        let ca = check_gradient("a", |p| loss(p, &bv), &av, ga.data());
        let cb = check_gradient("b", |p| loss(&av, p), &bv, gb.data());
        assert!(ca.passes() && cb.passes(), "{ca:?} {cb:?}");
    }

    #[test]
    fn broadcast_and_sum_are_adjoint() {
        let d = Dims::new(2, 2, 3, 1);
        let a = Tensor::<f64>::from_f64(d, &seeded_values(5, d.len(), 1.0)).unwrap();
        let u = Tensor::<f64>::from_f64(d.with_channels(4), &seeded_values(6, d.len() * 4, 1.0))
            .unwrap();
        let lhs: f64 = broadcast_channels(&a, 4)
            .unwrap()
            .data()
            .iter()
            .zip(u.data())
            .map(|(p, q)| p * q)
            .sum();
        let rhs: f64 = a
            .data()
            .iter()
            .zip(sum_channels(&u).data())
            .map(|(p, q)| p * q)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
        assert!(broadcast_channels(&u, 2).is_err());
    }

    #[test]
    fn split_rejects_bad_sizes() {
        let t = Tensor::<f32>::zeros(Dims::new(1, 1, 1, 4)).unwrap();
        assert!(channel_split(&t, &[1, 2]).is_err());
        assert!(channel_split(&t, &[0, 4]).is_err());
        assert!(split_height(&t, &[2]).is_err());
    }

    proptest! {
        #[test]
        fn channel_split_concat_roundtrip(seed in any::<u64>(), sizes in prop::collection::vec(1usize..5, 1..5)) {
            let c: usize = sizes.iter().sum();
            let d = Dims::new(2, 3, 2, c);
            let t = Tensor::<f32>::from_f64(d, &seeded_values(seed, d.len(), 10.0)).unwrap();
            let parts = channel_split(&t, &sizes).unwrap();
            prop_assert_eq!(channel_concat(&parts).unwrap(), t);
        }

        #[test]
        fn height_split_concat_roundtrip(seed in any::<u64>(), heights in prop::collection::vec(1usize..4, 1..4)) {
            let h: usize = heights.iter().sum();
            let d = Dims::new(2, h, 3, 2);
            let t = Tensor::<f32>::from_f64(d, &seeded_values(seed, d.len(), 10.0)).unwrap();
            let parts = split_height(&t, &heights).unwrap();
            prop_assert_eq!(concat_height(&parts).unwrap(), t);
        }
    }
}
