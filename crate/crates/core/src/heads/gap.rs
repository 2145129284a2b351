use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::heads::HeadGrads;
use crate::ops::{self, ReduceMode};
use crate::scalar::Scalar;
use crate::tensor::{
    fan_in_matrix, visit_matrix, visit_matrix_mut, GradientSet, Matrix, Parameterized, Tensor,
    Visit, VisitMut,
};

/// Global average pooling followed by one linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GapHeadParams<T> {
    /// `[C, M]`.
    pub weight: Matrix<T>,
    pub bias: Option<Vec<T>>,
}

pub fn init_gap<T: Scalar>(
    channels: usize,
    categories: usize,
    use_bias: bool,
    seed: u64,
) -> Result<GapHeadParams<T>> {
    if channels == 0 || categories < 2 {
        return Err(Error::Config(format!(
            "GAP head needs C >= 1 and M >= 2, got C={channels} M={categories}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(GapHeadParams {
        weight: fan_in_matrix(&mut rng, channels, categories),
        bias: use_bias.then(|| vec![T::zero(); categories]),
    })
}

impl<T: Scalar> GapHeadParams<T> {
    pub fn channels(&self) -> usize {
        self.weight.rows()
    }

    pub fn categories(&self) -> usize {
        self.weight.cols()
    }
}

impl<T: Scalar> Parameterized<T> for GapHeadParams<T> {
    fn visit_params(&self, f: &mut Visit<'_, T>) {
        visit_matrix("fc.weight", &self.weight, f);
        if let Some(b) = &self.bias {
            f("fc.bias", &[b.len()], b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut VisitMut<'_, T>) {
        visit_matrix_mut("fc.weight", &mut self.weight, f);
        if let Some(b) = &mut self.bias {
            f("fc.bias", &[b.len()], b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct GapCache<T> {
    params: GapHeadParams<T>,
    input: Tensor<T>,
    pooled: Tensor<T>,
}

/// `logits = W·GAP(F) + b`.
pub fn gap_forward<T: Scalar>(
    features: &Tensor<T>,
    params: &GapHeadParams<T>,
) -> Result<(Matrix<T>, GapCache<T>)> {
    let d = features.dims();
    if d.channels != params.channels() {
        return Err(Error::dims(
            "gap forward",
            &d.as_array(),
            &params.weight.shape(),
        ));
    }
    let pooled = ops::reduce(features, ReduceMode::Mean);
    let logits = ops::conv1x1_forward(&pooled, &params.weight, params.bias.as_deref())?;
    Ok((
        Matrix::from_pooled(logits)?,
        GapCache {
            params: params.clone(),
            input: features.clone(),
            pooled,
        },
    ))
}

pub fn gap_backward<T: Scalar>(cache: &GapCache<T>, upstream: &Matrix<T>) -> Result<HeadGrads<T>> {
    let want = [cache.input.dims().batch, cache.params.categories()];
    if upstream.shape() != want {
        return Err(Error::Contract(format!(
            "upstream {:?} does not match cached forward {want:?}",
            upstream.shape()
        )));
    }
    let g = ops::conv1x1_backward(
        &cache.pooled,
        &cache.params.weight,
        &upstream.clone().into_pooled(),
    )?;
    let mut grads = GradientSet::new();
    grads.insert_matrix("fc.weight", g.weight);
    if cache.params.bias.is_some() {
        grads.insert_vector("fc.bias", g.bias);
    }
    Ok(HeadGrads {
        params: grads,
        input: ops::reduce_backward(&cache.input, ReduceMode::Mean, &g.input)?,
    })
}

/// Per-position logits `W·F_{i,j}` (no bias), `[B,H,W,M]`.
pub fn gap_pixel_logits<T: Scalar>(
    features: &Tensor<T>,
    params: &GapHeadParams<T>,
) -> Result<Tensor<T>> {
    ops::conv1x1_forward(features, &params.weight, None)
}
