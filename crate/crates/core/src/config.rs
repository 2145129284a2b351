//! Flat `key=value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, unknown keys are rejected.
//! [`ExperimentConfig::to_text`] writes every key in a fixed order, so the
//! text form is canonical and round-trips through [`ExperimentConfig::parse`].

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::backbone::{BackboneConfig, BackboneKind};
use crate::data::QuadrantSpec;
use crate::error::{Error, Result};
use crate::heads::NoahConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Noah,
    Gap,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Noah => "noah",
            HeadKind::Gap => "gap",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "noah" => Ok(HeadKind::Noah),
            "gap" => Ok(HeadKind::Gap),
            other => Err(Error::Config(format!(
                "unknown head kind {other:?} (noah or gap)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataSource {
    Quadrant,
    Idx,
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataSource::Quadrant => "quadrant",
            DataSource::Idx => "idx",
        })
    }
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "quadrant" => Ok(DataSource::Quadrant),
            "idx" => Ok(DataSource::Idx),
            other => Err(Error::Config(format!(
                "unknown dataset {other:?} (quadrant or idx)"
            ))),
        }
    }
}

/// Architecture: backbone plus one head.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub head: HeadKind,
    /// Head settings; `categories` and `use_bias` also apply to the GAP head.
    pub noah: NoahConfig,
    pub backbone: BackboneConfig,
}

impl ModelConfig {
    pub fn categories(&self) -> usize {
        self.noah.categories
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Seeds initialization and shuffling.
    pub seed: u64,
    /// Record elapsed time in the metrics log; off makes logs byte-stable.
    pub wall_clock: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub image_size: usize,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub noise: f64,
    pub jitter: usize,
    /// Seed of the synthetic training set; the eval set uses `data_seed + 1`.
    pub data_seed: u64,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub eval_images: Option<PathBuf>,
    pub eval_labels: Option<PathBuf>,
}

impl DataConfig {
    pub fn quadrant_spec(&self, seed: u64) -> QuadrantSpec {
        QuadrantSpec {
            image_size: self.image_size,
            noise: self.noise,
            jitter: self.jitter,
            seed,
            ..QuadrantSpec::default()
        }
    }
}

/// Geometry for `cost` and `bench`, independent of the trained model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub batch: usize,
    pub repeats: usize,
    pub warmup: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig {
                head: HeadKind::Noah,
                noah: NoahConfig::standard(8),
                backbone: BackboneConfig::pointwise(),
            },
            train: TrainConfig {
                epochs: 10,
                batch_size: 32,
                learning_rate: 0.1,
                momentum: 0.9,
                weight_decay: 1e-4,
                seed: 0,
                wall_clock: true,
            },
            data: DataConfig {
                source: DataSource::Quadrant,
                image_size: 28,
                train_samples: 4000,
                eval_samples: 800,
                noise: 0.05,
                jitter: 2,
                data_seed: 0,
                train_images: None,
                train_labels: None,
                eval_images: None,
                eval_labels: None,
            },
            bench: BenchConfig {
                channels: 2048,
                height: 7,
                width: 7,
                batch: 32,
                repeats: 10,
                warmup: 2,
            },
        }
    }
}

/// Every accepted key, in canonical order.
pub const KEYS: &[&str] = &[
    "head",
    "categories",
    "groups",
    "key_ratio",
    "attention_axis",
    "activation",
    "merge",
    "shared_attention",
    "second_split",
    "head_bias",
    "backbone",
    "widths",
    "strides",
    "epochs",
    "batch_size",
    "learning_rate",
    "momentum",
    "weight_decay",
    "seed",
    "wall_clock",
    "dataset",
    "image_size",
    "train_samples",
    "eval_samples",
    "noise",
    "jitter",
    "data_seed",
    "train_images",
    "train_labels",
    "eval_images",
    "eval_labels",
    "channels",
    "height",
    "width",
    "batch",
    "repeats",
    "warmup",
];

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    raw.trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}={raw}: {e}")))
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}={raw}: expected true or false"
        ))),
    }
}

fn list(key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',').map(|s| value(key, s)).collect()
}

fn path(raw: &str) -> Option<PathBuf> {
    let raw = raw.trim();
    (!raw.is_empty()).then(|| PathBuf::from(raw))
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

/// Split config text into `(key, value)` pairs; a key may appear once.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1))
        })?;
        let k = k.trim();
        if pairs.iter().any(|(seen, _)| seen == k) {
            return Err(Error::Config(format!(
                "line {}: duplicate key {k:?}",
                n + 1
            )));
        }
        pairs.push((k.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

impl ExperimentConfig {
    /// Defaults overridden by `pairs` in order; later pairs win. Values are
    /// parsed but cross-field checks are left to [`Self::validate`], since
    /// `cost` and `bench` only read part of the configuration.
    pub fn from_pairs<K: AsRef<str>, V: AsRef<str>>(
        pairs: impl IntoIterator<Item = (K, V)>,
    ) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut strides_given = false;
        for (k, v) in pairs {
            let k = k.as_ref();
            cfg.set(k, v.as_ref())?;
            strides_given |= k == "strides";
        }
        if !strides_given {
            let s = match cfg.model.backbone.kind {
                BackboneKind::Pointwise => 1,
                BackboneKind::Conv3x3 => 2,
            };
            cfg.model.backbone.strides = vec![s; cfg.model.backbone.widths.len()];
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(parse_pairs(text)?)
    }

    /// Apply one setting without validation.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let (m, t, d, b) = (
            &mut self.model,
            &mut self.train,
            &mut self.data,
            &mut self.bench,
        );
        match key {
            "head" => m.head = value(key, raw)?,
            "categories" => m.noah.categories = value(key, raw)?,
            "groups" => m.noah.groups = value(key, raw)?,
            "key_ratio" => m.noah.key_ratio = value(key, raw)?,
            "attention_axis" => m.noah.attention_axis = value(key, raw)?,
            "activation" => m.noah.activation = value(key, raw)?,
            "merge" => m.noah.merge = value(key, raw)?,
            "shared_attention" => m.noah.shared_attention = flag(key, raw)?,
            "second_split" => m.noah.second_split = flag(key, raw)?,
            "head_bias" => m.noah.use_bias = flag(key, raw)?,
            "backbone" => m.backbone.kind = value(key, raw)?,
            "widths" => m.backbone.widths = list(key, raw)?,
            "strides" => m.backbone.strides = list(key, raw)?,
            "epochs" => t.epochs = value(key, raw)?,
            "batch_size" => t.batch_size = value(key, raw)?,
            "learning_rate" => t.learning_rate = value(key, raw)?,
            "momentum" => t.momentum = value(key, raw)?,
            "weight_decay" => t.weight_decay = value(key, raw)?,
            "seed" => t.seed = value(key, raw)?,
            "wall_clock" => t.wall_clock = flag(key, raw)?,
            "dataset" => d.source = value(key, raw)?,
            "image_size" => d.image_size = value(key, raw)?,
            "train_samples" => d.train_samples = value(key, raw)?,
            "eval_samples" => d.eval_samples = value(key, raw)?,
            "noise" => d.noise = value(key, raw)?,
            "jitter" => d.jitter = value(key, raw)?,
            "data_seed" => d.data_seed = value(key, raw)?,
            "train_images" => d.train_images = path(raw),
            "train_labels" => d.train_labels = path(raw),
            "eval_images" => d.eval_images = path(raw),
            "eval_labels" => d.eval_labels = path(raw),
            "channels" => b.channels = value(key, raw)?,
            "height" => b.height = value(key, raw)?,
            "width" => b.width = value(key, raw)?,
            "batch" => b.batch = value(key, raw)?,
            "repeats" => b.repeats = value(key, raw)?,
            "warmup" => b.warmup = value(key, raw)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Current value of `key` in canonical text form.
    pub fn get(&self, key: &str) -> Option<String> {
        let (m, t, d, b) = (&self.model, &self.train, &self.data, &self.bench);
        Some(match key {
            "head" => m.head.to_string(),
            "categories" => m.noah.categories.to_string(),
            "groups" => m.noah.groups.to_string(),
            "key_ratio" => m.noah.key_ratio.to_string(),
            "attention_axis" => m.noah.attention_axis.to_string(),
            "activation" => m.noah.activation.to_string(),
            "merge" => m.noah.merge.to_string(),
            "shared_attention" => m.noah.shared_attention.to_string(),
            "second_split" => m.noah.second_split.to_string(),
            "head_bias" => m.noah.use_bias.to_string(),
            "backbone" => m.backbone.kind.to_string(),
            "widths" => join(&m.backbone.widths),
            "strides" => join(&m.backbone.strides),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "momentum" => t.momentum.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "seed" => t.seed.to_string(),
            "wall_clock" => t.wall_clock.to_string(),
            "dataset" => d.source.to_string(),
            "image_size" => d.image_size.to_string(),
            "train_samples" => d.train_samples.to_string(),
            "eval_samples" => d.eval_samples.to_string(),
            "noise" => d.noise.to_string(),
            "jitter" => d.jitter.to_string(),
            "data_seed" => d.data_seed.to_string(),
            "train_images" => show(&d.train_images),
            "train_labels" => show(&d.train_labels),
            "eval_images" => show(&d.eval_images),
            "eval_labels" => show(&d.eval_labels),
            "channels" => b.channels.to_string(),
            "height" => b.height.to_string(),
            "width" => b.width.to_string(),
            "batch" => b.batch.to_string(),
            "repeats" => b.repeats.to_string(),
            "warmup" => b.warmup.to_string(),
            _ => return None,
        })
    }

    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| {
                format!(
                    "{k}={}\n",
                    self.get(k).expect("every listed key is readable")
                )
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.backbone.validate()?;
        self.model.noah.bind(self.model.backbone.out_channels())?;
        self.train.validate()?;
        let d = &self.data;
        if d.image_size == 0 {
            return Err(Error::Config("image_size must be >= 1".into()));
        }
        match d.source {
            DataSource::Quadrant => {
                let spec = d.quadrant_spec(d.data_seed);
                spec.validate()?;
                if spec.categories() != self.model.categories() {
                    return Err(Error::Config(format!(
                        "quadrant dataset has {} classes but categories={}",
                        spec.categories(),
                        self.model.categories()
                    )));
                }
                if d.train_samples == 0 || d.eval_samples == 0 {
                    return Err(Error::Config(
                        "train_samples and eval_samples must be >= 1".into(),
                    ));
                }
            }
            DataSource::Idx => {
                if d.train_images.is_none() || d.train_labels.is_none() {
                    return Err(Error::Config(
                        "dataset=idx needs train_images and train_labels".into(),
                    ));
                }
                if d.eval_images.is_some() != d.eval_labels.is_some() {
                    return Err(Error::Config(
                        "eval_images and eval_labels must be given together".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::MergeMode;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn canonical_text_roundtrips() {
        let mut cfg = ExperimentConfig::default();
        cfg.model.noah.merge = MergeMode::Max;
        cfg.train.learning_rate = 0.1 + 0.2;
        cfg.data.train_images = Some("a b/img.idx".into());
        let text = cfg.to_text();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
        assert_eq!(text.lines().count(), KEYS.len());
    }

    #[test]
    fn comments_blank_lines_and_overrides() {
        let text = "# smoke\n\nhead = gap   # baseline\nepochs=2\n";
        let cfg = ExperimentConfig::from_pairs(
            parse_pairs(text)
                .unwrap()
                .into_iter()
                .chain([("epochs".to_string(), "3".to_string())]),
        )
        .unwrap();
        assert_eq!(cfg.model.head, HeadKind::Gap);
        assert_eq!(cfg.train.epochs, 3);
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        let e = ExperimentConfig::parse("heads=noah\n").unwrap_err();
        assert!(e.to_string().contains("heads"));
        assert!(ExperimentConfig::parse("seed=1\nseed=2\n").is_err());
        assert!(ExperimentConfig::parse("just words\n").is_err());
        assert!(ExperimentConfig::parse("seed=minus one\n").is_err());
        assert!(ExperimentConfig::parse("wall_clock=maybe\n").is_err());
    }

    #[test]
    fn strides_follow_backbone_kind() {
        let cfg = ExperimentConfig::parse("backbone=conv3x3\nwidths=8,8,16\n").unwrap();
        assert_eq!(cfg.model.backbone.strides, vec![2, 2, 2]);
        let cfg = ExperimentConfig::parse("backbone=conv3x3\nstrides=1,2\n").unwrap();
        assert_eq!(cfg.model.backbone.strides, vec![1, 2]);
    }

    #[test]
    fn validation_errors() {
        for bad in [
            "learning_rate=0",
            "momentum=1",
            "weight_decay=-1",
            "epochs=0",
            "categories=10",
            "groups=3",
            "dataset=idx",
            "jitter=5",
            "key_ratio=3/2",
        ] {
            assert!(
                ExperimentConfig::parse(bad)
                    .and_then(|c| c.validate())
                    .is_err(),
                "{bad} accepted"
            );
        }
    }
}
