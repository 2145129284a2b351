//! Toy feature extractors producing the `[B,H,W,C]` map fed to a head.
//!
//! `Pointwise` stacks 1×1 convolutions with relu, so each output pixel depends
//! only on the same input pixel. `Conv3x3` stacks padded 3×3 convolutions.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::{
    fan_in_matrix, visit_matrix, visit_matrix_mut, GradientSet, Matrix, Parameterized, Tensor,
    Visit, VisitMut,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackboneKind {
    Pointwise,
    Conv3x3,
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackboneKind::Pointwise => "pointwise",
            BackboneKind::Conv3x3 => "conv3x3",
        })
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pointwise" => Ok(BackboneKind::Pointwise),
            "conv3x3" => Ok(BackboneKind::Conv3x3),
            other => Err(Error::Config(format!("unknown backbone kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub in_channels: usize,
    pub widths: Vec<usize>,
    /// One stride per layer; only read by `Conv3x3`.
    pub strides: Vec<usize>,
}

impl BackboneConfig {
    pub fn pointwise() -> Self {
        BackboneConfig {
            kind: BackboneKind::Pointwise,
            in_channels: 1,
            widths: vec![16, 32],
            strides: vec![1, 1],
        }
    }

    pub fn conv3x3() -> Self {
        BackboneConfig {
            kind: BackboneKind::Conv3x3,
            in_channels: 1,
            widths: vec![16, 32],
            strides: vec![2, 2],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.widths.last().copied().unwrap_or(self.in_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "backbone widths must be non-empty and >= 1, got in={} widths={:?}",
                self.in_channels, self.widths
            )));
        }
        if self.kind == BackboneKind::Conv3x3 {
            if self.strides.len() != self.widths.len() {
                return Err(Error::Config(format!(
                    "{} strides for {} layers",
                    self.strides.len(),
                    self.widths.len()
                )));
            }
            if let Some(s) = self.strides.iter().find(|&&s| s != 1 && s != 2) {
                return Err(Error::Config(format!("stride {s} not supported (1 or 2)")));
            }
        }
        Ok(())
    }

    /// Feature map extent for an input of `extent` pixels.
    pub fn output_extent(&self, extent: usize) -> usize {
        match self.kind {
            BackboneKind::Pointwise => extent,
            BackboneKind::Conv3x3 => self
                .strides
                .iter()
                .fold(extent, |e, &s| ops::conv3x3_output_extent(e, s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams<T> {
    config: BackboneConfig,
    layers: Vec<Layer<T>>,
}

pub fn init_backbone<T: Scalar>(config: &BackboneConfig, seed: u64) -> Result<BackboneParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taps = match config.kind {
        BackboneKind::Pointwise => 1,
        BackboneKind::Conv3x3 => 9,
    };
    let mut cin = config.in_channels;
    let layers = config
        .widths
        .iter()
        .map(|&w| {
            let layer = Layer {
                weight: fan_in_matrix(&mut rng, taps * cin, w),
                bias: vec![T::zero(); w],
            };
            cin = w;
            layer
        })
        .collect();
    Ok(BackboneParams {
        config: config.clone(),
        layers,
    })
}

impl<T: Scalar> BackboneParams<T> {
    pub fn from_layers(config: &BackboneConfig, layers: Vec<Layer<T>>) -> Result<Self> {
        let template = init_backbone::<T>(config, 0)?;
        if layers.len() != template.layers.len()
            || layers
                .iter()
                .zip(&template.layers)
                .any(|(a, b)| a.weight.shape() != b.weight.shape() || a.bias.len() != b.bias.len())
        {
            return Err(Error::Config(
                "backbone layer shapes do not match config".into(),
            ));
        }
        Ok(BackboneParams {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }
}

impl<T: Scalar> Parameterized<T> for BackboneParams<T> {
    fn visit_params(&self, f: &mut Visit<'_, T>) {
        for (k, l) in self.layers.iter().enumerate() {
            visit_matrix(&format!("layer{k}.weight"), &l.weight, f);
            f(&format!("layer{k}.bias"), &[l.bias.len()], &l.bias);
        }
    }

    fn visit_params_mut(&mut self, f: &mut VisitMut<'_, T>) {
        for (k, l) in self.layers.iter_mut().enumerate() {
            visit_matrix_mut(&format!("layer{k}.weight"), &mut l.weight, f);
            let n = l.bias.len();
            f(&format!("layer{k}.bias"), &[n], &mut l.bias);
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackboneCache<T> {
    params: BackboneParams<T>,
    /// Input to each layer.
    inputs: Vec<Tensor<T>>,
    /// Pre-activation output of each layer.
    pre: Vec<Tensor<T>>,
}

pub fn backbone_forward<T: Scalar>(
    image: &Tensor<T>,
    params: &BackboneParams<T>,
) -> Result<(Tensor<T>, BackboneCache<T>)> {
    let cfg = &params.config;
    if image.dims().channels != cfg.in_channels {
        return Err(Error::dims(
            "backbone forward",
            &image.dims().as_array(),
            &[cfg.in_channels],
        ));
    }
    let mut x = image.clone();
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(params.layers.len());
    for (k, layer) in params.layers.iter().enumerate() {
        let z = match cfg.kind {
            BackboneKind::Pointwise => ops::conv1x1_forward(&x, &layer.weight, Some(&layer.bias))?,
            BackboneKind::Conv3x3 => {
                ops::conv3x3_forward(&x, &layer.weight, Some(&layer.bias), cfg.strides[k])?
            }
        };
        let next = ops::relu_forward(&z);
        inputs.push(x);
        pre.push(z);
        x = next;
    }
    Ok((
        x,
        BackboneCache {
            params: params.clone(),
            inputs,
            pre,
        },
    ))
}

/// Returns layer gradients and the gradient with respect to the image.
pub fn backbone_backward<T: Scalar>(
    cache: &BackboneCache<T>,
    grad_features: &Tensor<T>,
) -> Result<(GradientSet<T>, Tensor<T>)> {
    let cfg = &cache.params.config;
    let last = cache
        .pre
        .last()
        .ok_or_else(|| Error::Contract("empty backbone cache".into()))?;
    if grad_features.dims() != last.dims() {
        return Err(Error::Contract(format!(
            "feature gradient {:?} does not match cached forward {:?}",
            grad_features.dims().as_array(),
            last.dims().as_array()
        )));
    }
    let mut per_layer = Vec::with_capacity(cache.pre.len());
    let mut g = grad_features.clone();
    for k in (0..cache.pre.len()).rev() {
        let gz = ops::relu_backward(&cache.pre[k], &g)?;
        let layer = &cache.params.layers[k];
        let grads = match cfg.kind {
            BackboneKind::Pointwise => ops::conv1x1_backward(&cache.inputs[k], &layer.weight, &gz)?,
            BackboneKind::Conv3x3 => {
                ops::conv3x3_backward(&cache.inputs[k], &layer.weight, &gz, cfg.strides[k])?
            }
        };
        g = grads.input;
        per_layer.push((k, grads.weight, grads.bias));
    }
    let mut set = GradientSet::new();
    for (k, w, b) in per_layer.into_iter().rev() {
        set.insert_matrix(format!("layer{k}.weight"), w);
        set.insert_vector(format!("layer{k}.bias"), b);
    }
    Ok((set, g))
}
