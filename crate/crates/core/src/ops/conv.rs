use crate::error::{Error, Result};
use crate::ops::checked;
use crate::scalar::Scalar;
use crate::tensor::{Dims, Matrix, Tensor};

/// Gradients of a convolution with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

fn check_bias<T>(op: &'static str, bias: Option<&[T]>, cols: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != cols => Err(Error::dims(op, &[b.len()], &[cols])),
        _ => Ok(()),
    }
}

/// Per-pixel linear map: `out[b,i,j,m] = Σ_c input[b,i,j,c]·weight[c,m] (+ bias[m])`.
pub fn conv1x1_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Matrix<T>,
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    let d = input.dims();
    if weight.rows() != d.channels {
        return Err(Error::dims("conv1x1", &d.as_array(), &weight.shape()));
    }
    check_bias("conv1x1 bias", bias, weight.cols())?;
    let (cin, m) = (weight.rows(), weight.cols());
    let w = weight.data();
    let mut out = Vec::with_capacity(d.batch * d.pixels() * m);
    let mut acc = vec![0f64; m];
    for px in input.data().chunks_exact(cin) {
        match bias {
            Some(b) => acc.iter_mut().zip(b).for_each(|(a, v)| *a = v.widen()),
            None => acc.fill(0.0),
        }
        for (c, x) in px.iter().enumerate() {
            let x = x.widen();
            if x == 0.0 {
                continue;
            }
            for (a, wv) in acc.iter_mut().zip(&w[c * m..(c + 1) * m]) {
                *a += x * wv.widen();
            }
        }
        out.extend(acc.iter().map(|&a| T::from_f64(a)));
    }
    Ok(checked(Tensor::from_parts(d.with_channels(m), out)))
}

pub fn conv1x1_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Matrix<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let d = input.dims();
    if weight.rows() != d.channels {
        return Err(Error::dims(
            "conv1x1 backward",
            &d.as_array(),
            &weight.shape(),
        ));
    }
    let (cin, m) = (weight.rows(), weight.cols());
    if upstream.dims() != d.with_channels(m) {
        return Err(Error::dims(
            "conv1x1 backward upstream",
            &upstream.dims().as_array(),
            &d.with_channels(m).as_array(),
        ));
    }
    let w = weight.data();
    let mut gw = vec![0f64; cin * m];
    let mut gb = vec![0f64; m];
    let mut gin = Vec::with_capacity(input.data().len());
    for (px, up) in input
        .data()
        .chunks_exact(cin)
        .zip(upstream.data().chunks_exact(m))
    {
        let up: Vec<f64> = up.iter().map(|v| v.widen()).collect();
        for (g, u) in gb.iter_mut().zip(&up) {
            *g += u;
        }
        for (c, x) in px.iter().enumerate() {
            let x = x.widen();
            let wrow = &w[c * m..(c + 1) * m];
            let mut s = 0f64;
            for ((g, u), wv) in gw[c * m..(c + 1) * m].iter_mut().zip(&up).zip(wrow) {
                *g += x * u;
                s += u * wv.widen();
            }
            gin.push(T::from_f64(s));
        }
    }
    Ok(ConvGrads {
        input: checked(Tensor::from_parts(d, gin)),
        weight: Matrix::from_parts(cin, m, gw.into_iter().map(T::from_f64).collect()),
        bias: gb.into_iter().map(T::from_f64).collect(),
    })
}

/// Output extent of a 3×3 convolution with zero padding 1.
pub fn conv3x3_output_extent(extent: usize, stride: usize) -> usize {
    (extent - 1) / stride + 1
}

fn conv3x3_check<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Matrix<T>,
    stride: usize,
) -> Result<()> {
    if stride != 1 && stride != 2 {
        return Err(Error::Config(format!(
            "{op}: stride must be 1 or 2, got {stride}"
        )));
    }
    let d = input.dims();
    if weight.rows() != 9 * d.channels {
        return Err(Error::dims(op, &d.as_array(), &weight.shape()));
    }
    Ok(())
}

/// 3×3 convolution, zero padding 1, stride 1 or 2.
///
/// `weight` is `[9·Cin, Cout]` with row `(ky·3 + kx)·Cin + c`.
pub fn conv3x3_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Matrix<T>,
    bias: Option<&[T]>,
    stride: usize,
) -> Result<Tensor<T>> {
    conv3x3_check("conv3x3", input, weight, stride)?;
    check_bias("conv3x3 bias", bias, weight.cols())?;
    let d = input.dims();
    let (cin, m) = (d.channels, weight.cols());
    let (oh, ow) = (
        conv3x3_output_extent(d.height, stride),
        conv3x3_output_extent(d.width, stride),
    );
    let od = Dims::new(d.batch, oh, ow, m);
    let w = weight.data();
    let mut out = Vec::with_capacity(od.len());
    let mut acc = vec![0f64; m];
    for b in 0..d.batch {
        for oi in 0..oh {
            for oj in 0..ow {
                match bias {
                    Some(bv) => acc.iter_mut().zip(bv).for_each(|(a, v)| *a = v.widen()),
                    None => acc.fill(0.0),
                }
                for ky in 0..3 {
                    let Some(ii) = (oi * stride + ky).checked_sub(1).filter(|&v| v < d.height)
                    else {
                        continue;
                    };
                    for kx in 0..3 {
                        let Some(jj) = (oj * stride + kx).checked_sub(1).filter(|&v| v < d.width)
                        else {
                            continue;
                        };
                        let px = input.pixel(b, ii, jj);
                        let base = (ky * 3 + kx) * cin;
                        for (c, x) in px.iter().enumerate() {
                            let x = x.widen();
                            if x == 0.0 {
                                continue;
                            }
                            let row = &w[(base + c) * m..(base + c + 1) * m];
                            for (a, wv) in acc.iter_mut().zip(row) {
                                *a += x * wv.widen();
                            }
                        }
                    }
                }
                out.extend(acc.iter().map(|&a| T::from_f64(a)));
            }
        }
    }
    Ok(checked(Tensor::from_parts(od, out)))
}

pub fn conv3x3_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Matrix<T>,
    upstream: &Tensor<T>,
    stride: usize,
) -> Result<ConvGrads<T>> {
    conv3x3_check("conv3x3 backward", input, weight, stride)?;
    let d = input.dims();
    let (cin, m) = (d.channels, weight.cols());
    let od = Dims::new(
        d.batch,
        conv3x3_output_extent(d.height, stride),
        conv3x3_output_extent(d.width, stride),
        m,
    );
    if upstream.dims() != od {
        return Err(Error::dims(
            "conv3x3 backward upstream",
            &upstream.dims().as_array(),
            &od.as_array(),
        ));
    }
    let w = weight.data();
    let mut gw = vec![0f64; 9 * cin * m];
    let mut gb = vec![0f64; m];
    let mut gin = vec![0f64; d.len()];
    let mut up = vec![0f64; m];
    for b in 0..d.batch {
        for oi in 0..od.height {
            for oj in 0..od.width {
                let start = od.offset(b, oi, oj, 0);
                for (u, v) in up.iter_mut().zip(&upstream.data()[start..start + m]) {
                    *u = v.widen();
                }
                for (g, u) in gb.iter_mut().zip(&up) {
                    *g += u;
                }
                for ky in 0..3 {
                    let Some(ii) = (oi * stride + ky).checked_sub(1).filter(|&v| v < d.height)
                    else {
                        continue;
                    };
                    for kx in 0..3 {
                        let Some(jj) = (oj * stride + kx).checked_sub(1).filter(|&v| v < d.width)
                        else {
                            continue;
                        };
                        let px = input.pixel(b, ii, jj);
                        let base = (ky * 3 + kx) * cin;
                        let gpx = d.offset(b, ii, jj, 0);
                        for (c, x) in px.iter().enumerate() {
                            let x = x.widen();
                            let r = (base + c) * m;
                            let mut s = 0f64;
                            for ((g, u), wv) in gw[r..r + m].iter_mut().zip(&up).zip(&w[r..r + m]) {
                                *g += x * u;
                                s += u * wv.widen();
                            }
                            gin[gpx + c] += s;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: checked(Tensor::from_parts(
            d,
            gin.into_iter().map(T::from_f64).collect(),
        )),
        weight: Matrix::from_parts(9 * cin, m, gw.into_iter().map(T::from_f64).collect()),
        bias: gb.into_iter().map(T::from_f64).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use noah_testkit::{check_gradient, seeded_values};

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let x = Tensor::<f32>::zeros(Dims::new(2, 3, 3, 4)).unwrap();
        let w = Matrix::<f32>::from_f64(4, 3, &seeded_values(1, 12, 1.0)).unwrap();
        let y = conv1x1_forward(&x, &w, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.dims(), Dims::new(2, 3, 3, 3));
    }

    #[test]
    fn identity_weight_is_identity() {
        let d = Dims::new(1, 2, 3, 1);
        let x = Tensor::<f64>::from_f64(d, &seeded_values(2, 6, 1.0)).unwrap();
        let w = Matrix::new(1, 1, vec![1.0]).unwrap();
        assert_eq!(conv1x1_forward(&x, &w, None).unwrap(), x);
    }

    #[test]
    fn hand_arithmetic_case() {
        let x = Tensor::<f32>::from_fn(Dims::new(1, 2, 2, 2), |_, _, _, c| (c + 1) as f32).unwrap();
        let w = Matrix::new(2, 1, vec![3.0f32, 4.0]).unwrap();
        let y = conv1x1_forward(&x, &w, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 11.0));
        let yb = conv1x1_forward(&x, &w, Some(&[0.5])).unwrap();
        assert!(yb.data().iter().all(|&v| v == 11.5));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let x = Tensor::<f32>::zeros(Dims::new(1, 2, 2, 3)).unwrap();
        let w = Matrix::<f32>::zeros(2, 4).unwrap();
        let msg = conv1x1_forward(&x, &w, None).unwrap_err().to_string();
        assert!(
            msg.contains("[1, 2, 2, 3]") && msg.contains("[2, 4]"),
            "{msg}"
        );
        let w = Matrix::<f32>::zeros(3, 4).unwrap();
        assert!(conv1x1_forward(&x, &w, Some(&[0.0; 3])).is_err());
        let bad_up = Tensor::<f32>::zeros(Dims::new(1, 2, 2, 3)).unwrap();
        assert!(conv1x1_backward(&x, &w, &bad_up).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let d = Dims::new(1, 2, 2, 3);
        let x = Tensor::<f64>::from_f64(d, &seeded_values(3, 12, 1.0)).unwrap();
        let w = Matrix::<f64>::from_f64(3, 2, &seeded_values(4, 6, 1.0)).unwrap();
        let up = Tensor::zeros(d.with_channels(2)).unwrap();
        let g = conv1x1_backward(&x, &w, &up).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ones_weight_gradient_counts_pixels() {
        let d = Dims::new(2, 3, 2, 3);
        let x = Tensor::<f32>::filled(d, 1.0).unwrap();
        let w = Matrix::<f32>::zeros(3, 2).unwrap();
        let up = Tensor::filled(d.with_channels(2), 1.0).unwrap();
        let g = conv1x1_backward(&x, &w, &up).unwrap();
        assert!(g.weight.data().iter().all(|&v| v == 12.0));
    }

    #[test]
    fn conv1x1_matches_finite_differences() {
        let d = Dims::new(1, 2, 2, 3);
        let xv = seeded_values(10, d.len(), 1.0);
        let wv = seeded_values(11, 6, 1.0);
        let bv = seeded_values(12, 2, 1.0);
        let uv = seeded_values(13, d.with_channels(2).len(), 1.0);
        let up = Tensor::<f64>::from_f64(d.with_channels(2), &uv).unwrap();
        let loss = |x: &[f64], w: &[f64], b: &[f64]| {
            let x = Tensor::<f64>::from_f64(d, x).unwrap();
            let w = Matrix::<f64>::from_f64(3, 2, w).unwrap();
            dot(conv1x1_forward(&x, &w, Some(b)).unwrap().data(), &uv)
        };
        let x = Tensor::<f64>::from_f64(d, &xv).unwrap();
        let w = Matrix::<f64>::from_f64(3, 2, &wv).unwrap();
        let g = conv1x1_backward(&x, &w, &up).unwrap();
        let checks = [
            check_gradient("input", |p| loss(p, &wv, &bv), &xv, g.input.data()),
            check_gradient("weight", |p| loss(&xv, p, &bv), &wv, g.weight.data()),
            check_gradient("bias", |p| loss(&xv, &wv, p), &bv, &g.bias),
        ];
        for c in checks {
            assert!(c.passes(), "{c:?}");
        }
    }

    #[test]
    fn conv3x3_extents() {
        assert_eq!(conv3x3_output_extent(28, 2), 14);
        assert_eq!(conv3x3_output_extent(14, 2), 7);
        assert_eq!(conv3x3_output_extent(7, 1), 7);
        assert_eq!(conv3x3_output_extent(1, 2), 1);
    }

    #[test]
    fn conv3x3_centre_tap_is_pointwise() {
        // Only the centre tap set: same as a 1×1 convolution at stride 1.
        let d = Dims::new(1, 4, 5, 2);
        let x = Tensor::<f64>::from_f64(d, &seeded_values(20, d.len(), 1.0)).unwrap();
        let w1 = Matrix::<f64>::from_f64(2, 3, &seeded_values(21, 6, 1.0)).unwrap();
        let w3 = Matrix::<f64>::from_fn(
            18,
            3,
            |r, c| {
                if r / 2 == 4 {
                    w1.get(r % 2, c)
                } else {
                    0.0
                }
            },
        )
        .unwrap();
        let a = conv1x1_forward(&x, &w1, None).unwrap();
        let b = conv3x3_forward(&x, &w3, None, 1).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn conv3x3_rejects_bad_stride() {
        let x = Tensor::<f32>::zeros(Dims::new(1, 4, 4, 1)).unwrap();
        let w = Matrix::<f32>::zeros(9, 1).unwrap();
        assert!(matches!(
            conv3x3_forward(&x, &w, None, 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn conv3x3_matches_finite_differences() {
        for stride in [1, 2] {
            let d = Dims::new(2, 5, 4, 2);
            let m = 3;
            let od = Dims::new(
                2,
                conv3x3_output_extent(5, stride),
                conv3x3_output_extent(4, stride),
                m,
            );
            let xv = seeded_values(30 + stride as u64, d.len(), 1.0);
            let wv = seeded_values(40, 18 * m, 0.5);
            let bv = seeded_values(41, m, 0.5);
            let uv = seeded_values(42, od.len(), 1.0);
            let up = Tensor::<f64>::from_f64(od, &uv).unwrap();
            let loss = |x: &[f64], w: &[f64], b: &[f64]| {
                let x = Tensor::<f64>::from_f64(d, x).unwrap();
                let w = Matrix::<f64>::from_f64(18, m, w).unwrap();
                dot(
                    conv3x3_forward(&x, &w, Some(b), stride).unwrap().data(),
                    &uv,
                )
            };
            let x = Tensor::<f64>::from_f64(d, &xv).unwrap();
            let w = Matrix::<f64>::from_f64(18, m, &wv).unwrap();
            let g = conv3x3_backward(&x, &w, &up, stride).unwrap();
            for c in [
                check_gradient("input", |p| loss(p, &wv, &bv), &xv, g.input.data()),
                check_gradient("weight", |p| loss(&xv, p, &bv), &wv, g.weight.data()),
                check_gradient("bias", |p| loss(&xv, &wv, p), &bv, &g.bias),
            ] {
                assert!(c.passes(), "stride {stride}: {c:?}");
            }
        }
    }
}
