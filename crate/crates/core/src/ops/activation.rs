use crate::error::{Error, Result};
use crate::ops::checked;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn same_dims<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dims(op, &a.dims().as_array(), &b.dims().as_array()));
    }
    Ok(())
}

fn map<T: Scalar>(input: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::from_parts(input.dims(), input.data().iter().map(|&v| f(v)).collect())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_parts(
        a.dims(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    checked(map(input, |v| v.max(T::zero())))
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    same_dims("relu backward", input, upstream)?;
    Ok(checked(zip_map(input, upstream, |x, u| {
        if x > T::zero() {
            u
        } else {
            T::zero()
        }
    })))
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    checked(map(input, |v| {
        let x = v.widen();
        // Branches keep exp() from overflowing for large |x|.
        let s = if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        };
        T::from_f64(s)
    }))
}

/// VJP of [`sigmoid`], expressed through its output `s`: `u·s·(1−s)`.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    same_dims("sigmoid backward", output, upstream)?;
    Ok(checked(zip_map(output, upstream, |s, u| {
        let s = s.widen();
        T::from_f64(u.widen() * s * (1.0 - s))
    })))
}

/// Softmax over all `H×W` positions, independently per `(batch, channel)`.
pub fn spatial_softmax<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let d = input.dims();
    let (px, ch) = (d.pixels(), d.channels);
    let src = input.data();
    let mut out = vec![T::zero(); src.len()];
    let mut maxes = vec![f64::NEG_INFINITY; ch];
    let mut sums = vec![0f64; ch];
    for b in 0..d.batch {
        let base = b * px * ch;
        let slab = &src[base..base + px * ch];
        maxes.fill(f64::NEG_INFINITY);
        sums.fill(0.0);
        for row in slab.chunks_exact(ch) {
            for (mx, v) in maxes.iter_mut().zip(row) {
                *mx = mx.max(v.widen());
            }
        }
        for row in slab.chunks_exact(ch) {
            for ((s, v), mx) in sums.iter_mut().zip(row).zip(&maxes) {
                *s += (v.widen() - mx).exp();
            }
        }
        for (o_row, row) in out[base..base + px * ch]
            .chunks_exact_mut(ch)
            .zip(slab.chunks_exact(ch))
        {
            for (c, (o, v)) in o_row.iter_mut().zip(row).enumerate() {
                *o = T::from_f64((v.widen() - maxes[c]).exp() / sums[c]);
            }
        }
    }
    checked(Tensor::from_parts(d, out))
}

/// `grad = s ⊙ (u − Σ_{i,j} u·s)` per `(batch, channel)` slice.
pub fn spatial_softmax_backward<T: Scalar>(
    output: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    same_dims("spatial softmax backward", output, upstream)?;
    let d = output.dims();
    let (px, ch) = (d.pixels(), d.channels);
    let (s, u) = (output.data(), upstream.data());
    let mut out = vec![T::zero(); s.len()];
    let mut dots = vec![0f64; ch];
    for b in 0..d.batch {
        let r = b * px * ch..(b + 1) * px * ch;
        dots.fill(0.0);
        for (srow, urow) in s[r.clone()]
            .chunks_exact(ch)
            .zip(u[r.clone()].chunks_exact(ch))
        {
            for ((acc, sv), uv) in dots.iter_mut().zip(srow).zip(urow) {
                *acc += sv.widen() * uv.widen();
            }
        }
        for ((orow, srow), urow) in out[r.clone()]
            .chunks_exact_mut(ch)
            .zip(s[r.clone()].chunks_exact(ch))
            .zip(u[r].chunks_exact(ch))
        {
            for (c, o) in orow.iter_mut().enumerate() {
                *o = T::from_f64(srow[c].widen() * (urow[c].widen() - dots[c]));
            }
        }
    }
    Ok(checked(Tensor::from_parts(d, out)))
}

/// Softmax over the channel axis at every pixel.
pub fn channel_softmax<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let d = input.dims();
    let mut out = Vec::with_capacity(input.data().len());
    for row in input.data().chunks_exact(d.channels) {
        let mx = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.widen()));
        let sum: f64 = row.iter().map(|v| (v.widen() - mx).exp()).sum();
        out.extend(
            row.iter()
                .map(|v| T::from_f64((v.widen() - mx).exp() / sum)),
        );
    }
    checked(Tensor::from_parts(d, out))
}

pub fn channel_softmax_backward<T: Scalar>(
    output: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    same_dims("channel softmax backward", output, upstream)?;
    let ch = output.dims().channels;
    let mut out = Vec::with_capacity(output.data().len());
    for (srow, urow) in output
        .data()
        .chunks_exact(ch)
        .zip(upstream.data().chunks_exact(ch))
    {
        let dot: f64 = srow
            .iter()
            .zip(urow)
            .map(|(s, u)| s.widen() * u.widen())
            .sum();
        out.extend(
            srow.iter()
                .zip(urow)
                .map(|(s, u)| T::from_f64(s.widen() * (u.widen() - dot))),
        );
    }
    Ok(checked(Tensor::from_parts(output.dims(), out)))
}
