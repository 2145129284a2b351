//! Backbone plus head models, loss, optimizer, the training loop and
//! checkpoints.

mod checkpoint;
mod fit;
mod loss;
mod sgd;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use fit::{
    evaluate, load_data, mean_loss, train, EpochMetrics, EvalReport, MetricsLog, METRICS_HEADER,
};
pub use loss::cross_entropy;
pub use sgd::{sgd_step, SgdHyper, SgdState};

use crate::backbone::{
    backbone_backward, backbone_forward, init_backbone, BackboneCache, BackboneParams,
};
use crate::config::{HeadKind, ModelConfig};
use crate::error::{Error, Result};
use crate::heads::{
    gap_backward, gap_forward, init_gap, init_noah, noah_backward, noah_forward, GapCache,
    GapHeadParams, NoahCache, NoahHeadParams,
};
use crate::scalar::Scalar;
use crate::tensor::{GradientSet, Matrix, Parameterized, Tensor, Visit, VisitMut};

/// Anything that maps an image batch to `[B, M]` logits.
pub trait Predictor<T: Scalar> {
    fn logits(&self, images: &Tensor<T>) -> Result<Matrix<T>>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head<T> {
    Noah(NoahHeadParams<T>),
    Gap(GapHeadParams<T>),
}

impl<T: Scalar> Parameterized<T> for Head<T> {
    fn visit_params(&self, f: &mut Visit<'_, T>) {
        match self {
            Head::Noah(p) => p.visit_params(f),
            Head::Gap(p) => p.visit_params(f),
        }
    }

    fn visit_params_mut(&mut self, f: &mut VisitMut<'_, T>) {
        match self {
            Head::Noah(p) => p.visit_params_mut(f),
            Head::Gap(p) => p.visit_params_mut(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    backbone: BackboneParams<T>,
    head: Head<T>,
}

#[derive(Debug, Clone)]
enum HeadCache<T> {
    Noah(NoahCache<T>),
    Gap(GapCache<T>),
}

#[derive(Debug, Clone)]
pub struct ModelCache<T> {
    backbone: BackboneCache<T>,
    head: HeadCache<T>,
}

impl<T: Scalar> ModelCache<T> {
    /// Head cache when the head is attentive, for attention inspection.
    pub fn noah(&self) -> Option<&NoahCache<T>> {
        match &self.head {
            HeadCache::Noah(c) => Some(c),
            HeadCache::Gap(_) => None,
        }
    }
}

impl<T: Scalar> Model<T> {
    /// Backbone and head draw from independent seeds derived from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let backbone = init_backbone(&config.backbone, seed.wrapping_mul(2))?;
        let channels = config.backbone.out_channels();
        let head_seed = seed.wrapping_mul(2).wrapping_add(1);
        let head = match config.head {
            HeadKind::Noah => Head::Noah(init_noah(&config.noah, channels, head_seed)?),
            HeadKind::Gap => Head::Gap(init_gap(
                channels,
                config.noah.categories,
                config.noah.use_bias,
                head_seed,
            )?),
        };
        Ok(Model {
            config: config.clone(),
            backbone,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backbone(&self) -> &BackboneParams<T> {
        &self.backbone
    }

    pub fn head(&self) -> &Head<T> {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Head<T> {
        &mut self.head
    }

    pub fn forward(&self, images: &Tensor<T>) -> Result<(Matrix<T>, ModelCache<T>)> {
        let (features, backbone) = backbone_forward(images, &self.backbone)?;
        let (logits, head) = match &self.head {
            Head::Noah(p) => {
                let (l, c) = noah_forward(&features, p)?;
                (l, HeadCache::Noah(c))
            }
            Head::Gap(p) => {
                let (l, c) = gap_forward(&features, p)?;
                (l, HeadCache::Gap(c))
            }
        };
        Ok((logits, ModelCache { backbone, head }))
    }

    /// Parameter gradients under `backbone.` and `head.` prefixes.
    pub fn backward(
        &self,
        cache: &ModelCache<T>,
        grad_logits: &Matrix<T>,
    ) -> Result<GradientSet<T>> {
        let head = match &cache.head {
            HeadCache::Noah(c) => noah_backward(c, grad_logits)?,
            HeadCache::Gap(c) => gap_backward(c, grad_logits)?,
        };
        let (backbone, _) = backbone_backward(&cache.backbone, &head.input)?;
        let mut grads = GradientSet::new();
        grads.absorb("backbone", backbone);
        grads.absorb("head", head.params);
        Ok(grads)
    }

    /// Overwrite every parameter from `(name, dims, values)` triples given
    /// in visitation order.
    pub fn load_arrays(&mut self, arrays: &[(String, Vec<usize>, Vec<T>)]) -> Result<()> {
        let mut k = 0;
        let mut err = None;
        self.visit_params_mut(&mut |name, dims, values| {
            if err.is_some() {
                return;
            }
            match arrays.get(k) {
                Some((n, d, v)) if n == name && d == dims && v.len() == values.len() => {
                    values.copy_from_slice(v)
                }
                Some((n, d, _)) => {
                    err = Some(Error::Format(format!(
                        "array {k}: found {n} {d:?}, expected {name} {dims:?}"
                    )))
                }
                None => err = Some(Error::Format(format!("missing array {name}"))),
            }
            k += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if k != arrays.len() {
            return Err(Error::Format(format!(
                "{} arrays stored, model has {k}",
                arrays.len()
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> Parameterized<T> for Model<T> {
    fn visit_params(&self, f: &mut Visit<'_, T>) {
        self.backbone
            .visit_params(&mut |n, d, v| f(&format!("backbone.{n}"), d, v));
        self.head
            .visit_params(&mut |n, d, v| f(&format!("head.{n}"), d, v));
    }

    fn visit_params_mut(&mut self, f: &mut VisitMut<'_, T>) {
        self.backbone
            .visit_params_mut(&mut |n, d, v| f(&format!("backbone.{n}"), d, v));
        self.head
            .visit_params_mut(&mut |n, d, v| f(&format!("head.{n}"), d, v));
    }
}

impl<T: Scalar> Predictor<T> for Model<T> {
    fn logits(&self, images: &Tensor<T>) -> Result<Matrix<T>> {
        Ok(self.forward(images)?.0)
    }
}
