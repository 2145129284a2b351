use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DataConfig, DataSource, ModelConfig, TrainConfig};
use crate::data::{gen_quadrant, load_idx, LabeledBatch};
use crate::error::{Error, Result};
use crate::heads::{argmax_rows, in_top_k};
use crate::scalar::Scalar;
use crate::train::{cross_entropy, sgd_step, Model, Predictor, SgdHyper, SgdState};

pub const METRICS_HEADER: &str = "epoch,train_loss,train_top1,eval_top1,seconds";

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_top1: f64,
    pub eval_top1: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<EpochMetrics>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.3}",
                r.epoch, r.train_loss, r.train_top1, r.eval_top1, r.seconds
            )
            .unwrap();
        }
        out
    }

    pub fn last(&self) -> Option<&EpochMetrics> {
        self.rows.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub top1: f64,
    /// Only reported when there are at least 5 categories.
    pub top5: Option<f64>,
}

fn chunks(len: usize, size: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..len).step_by(size).map(move |s| (s, size.min(len - s)))
}

/// Top-1 (and top-5) accuracy of `argmax classify(logits)`.
pub fn evaluate<T: Scalar, P: Predictor<T>>(
    model: &P,
    data: &LabeledBatch<T>,
) -> Result<EvalReport> {
    let (mut hit1, mut hit5, mut cols) = (0usize, 0usize, 0);
    for (start, n) in chunks(data.len(), EVAL_CHUNK) {
        let logits = model.logits(&data.images.batch_range(start, n)?)?;
        cols = logits.cols();
        let labels = &data.labels[start..start + n];
        // Softmax is monotone, so ranking logits ranks probabilities.
        hit1 += argmax_rows(&logits)
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        hit5 += labels
            .iter()
            .enumerate()
            .filter(|&(r, &y)| y < cols && in_top_k(logits.row(r), y, 5))
            .count();
    }
    let total = data.len().max(1) as f64;
    Ok(EvalReport {
        samples: data.len(),
        top1: hit1 as f64 / total,
        top5: (cols >= 5).then(|| hit5 as f64 / total),
    })
}

/// Mean cross-entropy of `model` over `data`.
pub fn mean_loss<T: Scalar>(model: &Model<T>, data: &LabeledBatch<T>) -> Result<f64> {
    let mut sum = 0.0;
    for (start, n) in chunks(data.len(), EVAL_CHUNK) {
        let logits = model.logits(&data.images.batch_range(start, n)?)?;
        sum += cross_entropy(&logits, &data.labels[start..start + n])?.0 * n as f64;
    }
    Ok(sum / data.len().max(1) as f64)
}

fn preflight<T: Scalar>(model: &Model<T>, data: &LabeledBatch<T>, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config(format!("{what} set is empty")));
    }
    data.validate_labels(model.config().categories())?;
    let d = data.images.dims();
    if d.height != d.width {
        return Err(Error::Config(format!(
            "{what} images are {}x{}, expected square",
            d.height, d.width
        )));
    }
    model.logits(&data.images.batch_range(0, 1)?)?;
    Ok(())
}

/// Minibatch SGD with a seeded shuffle per epoch.
///
/// Every configuration and shape problem surfaces before the first update.
pub fn train<T: Scalar>(
    model_config: &ModelConfig,
    config: &TrainConfig,
    train_set: &LabeledBatch<T>,
    eval_set: &LabeledBatch<T>,
) -> Result<(Model<T>, MetricsLog)> {
    config.validate()?;
    let mut model = Model::init(model_config, config.seed)?;
    preflight(&model, train_set, "training")?;
    preflight(&model, eval_set, "evaluation")?;

    let hyper = SgdHyper {
        learning_rate: config.learning_rate,
        momentum: config.momentum,
        weight_decay: config.weight_decay,
    };
    let mut state = SgdState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = MetricsLog::default();
    let started = Instant::now();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let b = train_set.select(batch)?;
            let (logits, cache) = model.forward(&b.images)?;
            let (loss, grad) = cross_entropy(&logits, &b.labels)?;
            if !loss.is_finite() {
                return Err(Error::Consistency(format!(
                    "non-finite loss in epoch {epoch}"
                )));
            }
            loss_sum += loss * batch.len() as f64;
            hits += argmax_rows(&logits)
                .iter()
                .zip(&b.labels)
                .filter(|(p, y)| p == y)
                .count();
            let grads = model.backward(&cache, &grad)?;
            sgd_step(&mut model, &grads, &mut state, hyper)?;
        }
        let eval = evaluate(&model, eval_set)?;
        log.rows.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_top1: hits as f64 / train_set.len() as f64,
            eval_top1: eval.top1,
            seconds: if config.wall_clock {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }
    Ok((model, log))
}

/// Training and evaluation sets described by `config`.
///
/// Synthetic sets use `data_seed` and `data_seed + 1`; an IDX source without
/// eval files evaluates on the training set.
pub fn load_data<T: Scalar>(config: &DataConfig) -> Result<(LabeledBatch<T>, LabeledBatch<T>)> {
    match config.source {
        DataSource::Quadrant => Ok((
            gen_quadrant(
                &config.quadrant_spec(config.data_seed),
                config.train_samples,
            )?,
            gen_quadrant(
                &config.quadrant_spec(config.data_seed.wrapping_add(1)),
                config.eval_samples,
            )?,
        )),
        DataSource::Idx => {
            let missing =
                || Error::Config("dataset=idx needs train_images and train_labels".into());
            let train = load_idx(
                config.train_images.as_ref().ok_or_else(missing)?,
                config.train_labels.as_ref().ok_or_else(missing)?,
            )?;
            let eval = match (&config.eval_images, &config.eval_labels) {
                (Some(i), Some(l)) => load_idx(i, l)?,
                _ => train.clone(),
            };
            Ok((train, eval))
        }
    }
}
