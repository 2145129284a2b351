use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::heads::config::{Activation, AttentionAxis, BlockGeometry, NoahConfig};
use crate::heads::HeadGrads;
use crate::ops::{self, ReduceMode};
use crate::scalar::Scalar;
use crate::tensor::{
    fan_in_matrix, visit_matrix, visit_matrix_mut, GradientSet, Matrix, Parameterized, Tensor,
    Visit, VisitMut,
};

/// Key and value embeddings of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct PocaBlockParams<T> {
    /// `[key_in, key_out]`.
    pub key: Matrix<T>,
    /// `[value_in, M]`.
    pub value: Matrix<T>,
    pub key_bias: Option<Vec<T>>,
    pub value_bias: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoahHeadParams<T> {
    config: NoahConfig,
    channels: usize,
    geometry: BlockGeometry,
    blocks: Vec<PocaBlockParams<T>>,
}

/// Deterministic initialization from `seed`; biases start at zero.
pub fn init_noah<T: Scalar>(
    config: &NoahConfig,
    channels: usize,
    seed: u64,
) -> Result<NoahHeadParams<T>> {
    let geometry = config.bind(channels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = config.categories;
    let blocks = (0..config.groups)
        .map(|_| PocaBlockParams {
            key: fan_in_matrix(&mut rng, geometry.key_in, geometry.key_out),
            value: fan_in_matrix(&mut rng, geometry.value_in, m),
            key_bias: config.use_bias.then(|| vec![T::zero(); geometry.key_out]),
            value_bias: config.use_bias.then(|| vec![T::zero(); m]),
        })
        .collect();
    Ok(NoahHeadParams {
        config: config.clone(),
        channels,
        geometry,
        blocks,
    })
}

impl<T: Scalar> NoahHeadParams<T> {
    /// Assemble from explicit blocks, validating every shape.
    pub fn from_blocks(
        config: &NoahConfig,
        channels: usize,
        blocks: Vec<PocaBlockParams<T>>,
    ) -> Result<Self> {
        let geometry = config.bind(channels)?;
        if blocks.len() != config.groups {
            return Err(Error::Config(format!(
                "expected {} blocks, got {}",
                config.groups,
                blocks.len()
            )));
        }
        let m = config.categories;
        for b in &blocks {
            let ok = b.key.shape() == [geometry.key_in, geometry.key_out]
                && b.value.shape() == [geometry.value_in, m]
                && b.key_bias.as_ref().map(Vec::len) == config.use_bias.then_some(geometry.key_out)
                && b.value_bias.as_ref().map(Vec::len) == config.use_bias.then_some(m);
            if !ok {
                return Err(Error::dims(
                    "noah block",
                    &[b.key.rows(), b.key.cols(), b.value.rows(), b.value.cols()],
                    &[geometry.key_in, geometry.key_out, geometry.value_in, m],
                ));
            }
        }
        Ok(NoahHeadParams {
            config: config.clone(),
            channels,
            geometry,
            blocks,
        })
    }

    pub fn config(&self) -> &NoahConfig {
        &self.config
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn geometry(&self) -> BlockGeometry {
        self.geometry
    }

    pub fn blocks(&self) -> &[PocaBlockParams<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [PocaBlockParams<T>] {
        &mut self.blocks
    }
}

impl<T: Scalar> Parameterized<T> for NoahHeadParams<T> {
    fn visit_params(&self, f: &mut Visit<'_, T>) {
        for (n, b) in self.blocks.iter().enumerate() {
            visit_matrix(&format!("block{n}.key.weight"), &b.key, f);
            if let Some(bias) = &b.key_bias {
                f(&format!("block{n}.key.bias"), &[bias.len()], bias);
            }
            visit_matrix(&format!("block{n}.value.weight"), &b.value, f);
            if let Some(bias) = &b.value_bias {
                f(&format!("block{n}.value.bias"), &[bias.len()], bias);
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut VisitMut<'_, T>) {
        for (n, b) in self.blocks.iter_mut().enumerate() {
            visit_matrix_mut(&format!("block{n}.key.weight"), &mut b.key, f);
            if let Some(bias) = &mut b.key_bias {
                f(&format!("block{n}.key.bias"), &[bias.len()], bias);
            }
            visit_matrix_mut(&format!("block{n}.value.weight"), &mut b.value, f);
            if let Some(bias) = &mut b.value_bias {
                f(&format!("block{n}.value.bias"), &[bias.len()], bias);
            }
        }
    }
}

#[derive(Debug, Clone)]
struct BlockRecord<T> {
    key_input: Tensor<T>,
    value_input: Tensor<T>,
    /// Activated key map; `[B,H,W,1]` in the shared variant.
    attention: Tensor<T>,
    value: Tensor<T>,
    poca: Tensor<T>,
}

/// Everything the backward pass needs, including the weights used.
#[derive(Debug, Clone)]
pub struct NoahCache<T> {
    params: NoahHeadParams<T>,
    height: usize,
    batch: usize,
    blocks: Vec<BlockRecord<T>>,
    stacked: Tensor<T>,
}

impl<T: Scalar> NoahCache<T> {
    pub fn groups(&self) -> usize {
        self.blocks.len()
    }

    /// Activated attention tensor `A_n`.
    pub fn attention(&self, block: usize) -> &Tensor<T> {
        &self.blocks[block].attention
    }

    /// Value tensor `V_n`.
    pub fn value(&self, block: usize) -> &Tensor<T> {
        &self.blocks[block].value
    }

    /// Local tensor `Z_n = A_n ⊙ V_n`.
    pub fn poca(&self, block: usize) -> &Tensor<T> {
        &self.blocks[block].poca
    }
}

fn activate<T: Scalar>(config: &NoahConfig, logits: &Tensor<T>) -> Tensor<T> {
    match (config.activation, config.attention_axis) {
        (Activation::Softmax, AttentionAxis::Spatial) => ops::spatial_softmax(logits),
        (Activation::Softmax, AttentionAxis::Channel) => ops::channel_softmax(logits),
        (Activation::Sigmoid, _) => ops::sigmoid(logits),
    }
}

fn activate_backward<T: Scalar>(
    config: &NoahConfig,
    output: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    match (config.activation, config.attention_axis) {
        (Activation::Softmax, AttentionAxis::Spatial) => {
            ops::spatial_softmax_backward(output, upstream)
        }
        (Activation::Softmax, AttentionAxis::Channel) => {
            ops::channel_softmax_backward(output, upstream)
        }
        (Activation::Sigmoid, _) => ops::sigmoid_backward(output, upstream),
    }
}

/// Forward pass of the head: `[B,H,W,C]` features to `[B,M]` logits.
pub fn noah_forward<T: Scalar>(
    features: &Tensor<T>,
    params: &NoahHeadParams<T>,
) -> Result<(Matrix<T>, NoahCache<T>)> {
    let d = features.dims();
    if d.channels != params.channels {
        return Err(Error::dims(
            "noah forward",
            &d.as_array(),
            &[params.channels],
        ));
    }
    let cfg = &params.config;
    let geo = params.geometry;
    let groups = ops::channel_split(features, &vec![geo.group; cfg.groups])?;
    let mut records = Vec::with_capacity(cfg.groups);
    for (group, block) in groups.into_iter().zip(&params.blocks) {
        let (key_input, value_input) = if geo.split {
            let mut halves = ops::channel_split(&group, &[geo.key_in, geo.value_in])?.into_iter();
            (halves.next().unwrap(), halves.next().unwrap())
        } else {
            (group.clone(), group)
        };
        let key_logits = ops::conv1x1_forward(&key_input, &block.key, block.key_bias.as_deref())?;
        let attention = activate(cfg, &key_logits);
        let value = ops::conv1x1_forward(&value_input, &block.value, block.value_bias.as_deref())?;
        let poca = if cfg.shared_attention {
            ops::hadamard(
                &ops::broadcast_channels(&attention, cfg.categories)?,
                &value,
            )?
        } else {
            ops::hadamard(&attention, &value)?
        };
        records.push(BlockRecord {
            key_input,
            value_input,
            attention,
            value,
            poca,
        });
    }
    let pocas: Vec<Tensor<T>> = records.iter().map(|r| r.poca.clone()).collect();
    // Stacking the N local tensors along rows makes the merge one joint
    // reduction over (n, i, j), with n-major scan order for max ties.
    let stacked = ops::concat_height(&pocas)?;
    let logits = Matrix::from_pooled(ops::reduce(&stacked, ReduceMode::from(cfg.merge)))?;
    debug_assert!(logits.is_finite());
    Ok((
        logits,
        NoahCache {
            params: params.clone(),
            height: d.height,
            batch: d.batch,
            blocks: records,
            stacked,
        },
    ))
}

/// Reverse pass: gradients for every embedding weight and bias, and for the
/// input features.
pub fn noah_backward<T: Scalar>(
    cache: &NoahCache<T>,
    upstream: &Matrix<T>,
) -> Result<HeadGrads<T>> {
    let cfg = &cache.params.config;
    let geo = cache.params.geometry;
    if upstream.shape() != [cache.batch, cfg.categories] || cache.blocks.len() != cfg.groups {
        return Err(Error::Contract(format!(
            "upstream {:?} does not match cached forward [{}, {}]",
            upstream.shape(),
            cache.batch,
            cfg.categories
        )));
    }
    let g_stacked = ops::reduce_backward(
        &cache.stacked,
        ReduceMode::from(cfg.merge),
        &upstream.clone().into_pooled(),
    )?;
    let g_pocas = ops::split_height(&g_stacked, &vec![cache.height; cfg.groups])?;
    let mut grads = GradientSet::new();
    let mut g_groups = Vec::with_capacity(cfg.groups);
    for (n, ((rec, block), g_poca)) in cache
        .blocks
        .iter()
        .zip(&cache.params.blocks)
        .zip(&g_pocas)
        .enumerate()
    {
        let (g_attention, g_value) = if cfg.shared_attention {
            let broadcast = ops::broadcast_channels(&rec.attention, cfg.categories)?;
            let (ga, gv) = ops::hadamard_backward(&broadcast, &rec.value, g_poca)?;
            (ops::sum_channels(&ga), gv)
        } else {
            ops::hadamard_backward(&rec.attention, &rec.value, g_poca)?
        };
        let g_key_logits = activate_backward(cfg, &rec.attention, &g_attention)?;
        let gk = ops::conv1x1_backward(&rec.key_input, &block.key, &g_key_logits)?;
        let gv = ops::conv1x1_backward(&rec.value_input, &block.value, &g_value)?;
        grads.insert_matrix(format!("block{n}.key.weight"), gk.weight);
        if cfg.use_bias {
            grads.insert_vector(format!("block{n}.key.bias"), gk.bias);
        }
        grads.insert_matrix(format!("block{n}.value.weight"), gv.weight);
        if cfg.use_bias {
            grads.insert_vector(format!("block{n}.value.bias"), gv.bias);
        }
        g_groups.push(if geo.split {
            ops::channel_concat(&[gk.input, gv.input])?
        } else {
            ops::add(&gk.input, &gv.input)?
        });
    }
    Ok(HeadGrads {
        params: grads,
        input: ops::channel_concat(&g_groups)?,
    })
}
