use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::ops::ReduceMode;

/// Fraction of each channel group routed to the key embedding.
///
/// Held as an exact rational so the floor/ceil split is computed in integer
/// arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SplitRatio(Ratio<u64>);

impl SplitRatio {
    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if denom == 0 || numer == 0 || numer >= denom {
            return Err(Error::Config(format!(
                "split ratio must lie strictly between 0 and 1, got {numer}/{denom}"
            )));
        }
        Ok(SplitRatio(Ratio::new(numer, denom)))
    }

    /// Nearest rational with denominator at most `max_denom`.
    pub fn approximate(value: f64, max_denom: u64) -> Result<Self> {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::Config(format!("split ratio {value} outside (0, 1)")));
        }
        let (mut best, mut err) = ((1, 2), f64::INFINITY);
        for q in 2..=max_denom.max(2) {
            let p = ((value * q as f64).round() as u64).clamp(1, q - 1);
            let e = (p as f64 / q as f64 - value).abs();
            if e < err {
                best = (p, q);
                err = e;
            }
        }
        Self::new(best.0, best.1)
    }

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }

    pub fn as_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    /// `(⌊r·g⌋, ⌈(1−r)·g⌉)` for a group of `g` channels.
    pub fn split(&self, group: usize) -> (usize, usize) {
        let (p, q, g) = (self.numer() as u128, self.denom() as u128, group as u128);
        let key = p * g / q;
        let value = ((q - p) * g).div_ceil(q);
        (key as usize, value as usize)
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

impl FromStr for SplitRatio {
    type Err = Error;

    /// Accepts `p/q` or a plain decimal such as `0.125`, both parsed exactly.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse split ratio {s:?}"));
        let s = s.trim();
        if let Some((p, q)) = s.split_once('/') {
            let p = p.trim().parse::<u64>().map_err(|_| bad())?;
            let q = q.trim().parse::<u64>().map_err(|_| bad())?;
            return Self::new(p, q);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 18 || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let denom = 10u64.pow(frac.len() as u32);
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        let numer = int
            .checked_mul(denom)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(bad)?;
        Self::new(numer, denom)
    }
}

macro_rules! keyword_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $($name::$variant => $text),+
                })
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " {:?}"),
                        other
                    ))),
                }
            }
        }
    };
}

keyword_enum!(
    /// Axis along which the key logits are normalized.
    AttentionAxis { Spatial => "spatial", Channel => "channel" }
);

keyword_enum!(
    Activation { Softmax => "softmax", Sigmoid => "sigmoid" }
);

keyword_enum!(
    /// How the `N` local tensors are reduced into one logit vector.
    MergeMode { Sum => "sum", Mean => "mean", Max => "max" }
);

impl From<MergeMode> for ReduceMode {
    fn from(m: MergeMode) -> Self {
        match m {
            MergeMode::Sum => ReduceMode::Sum,
            MergeMode::Mean => ReduceMode::Mean,
            MergeMode::Max => ReduceMode::Max,
        }
    }
}

/// Hyper-parameters of the attentive head.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NoahConfig {
    /// Number of channel groups `N`.
    pub groups: usize,
    /// Key split ratio `r`.
    pub key_ratio: SplitRatio,
    /// Number of categories `M`.
    pub categories: usize,
    pub attention_axis: AttentionAxis,
    pub activation: Activation,
    pub merge: MergeMode,
    /// One spatial attention map per block, shared by all categories.
    pub shared_attention: bool,
    /// When false, key and value embeddings both read the whole group.
    pub second_split: bool,
    pub use_bias: bool,
}

impl NoahConfig {
    /// The standard head: `N = 4`, `r = 1/2`, spatial softmax, summation.
    pub fn standard(categories: usize) -> Self {
        NoahConfig {
            groups: 4,
            key_ratio: SplitRatio(Ratio::new(1, 2)),
            categories,
            attention_axis: AttentionAxis::Spatial,
            activation: Activation::Softmax,
            merge: MergeMode::Sum,
            shared_attention: false,
            second_split: true,
            use_bias: false,
        }
    }

    /// Per-block embedding shapes for `channels` input channels.
    pub fn bind(&self, channels: usize) -> Result<BlockGeometry> {
        if self.groups == 0 {
            return Err(Error::Config("group count N must be >= 1".into()));
        }
        if self.categories < 2 {
            return Err(Error::Config(format!(
                "category count M must be >= 2, got {}",
                self.categories
            )));
        }
        if channels == 0 || !channels.is_multiple_of(self.groups) {
            return Err(Error::Config(format!(
                "C={channels} not divisible by N={}",
                self.groups
            )));
        }
        let group = channels / self.groups;
        let key_out = if self.shared_attention {
            1
        } else {
            self.categories
        };
        if self.shared_attention || !self.second_split {
            return Ok(BlockGeometry {
                group,
                key_in: group,
                value_in: group,
                key_out,
                split: false,
            });
        }
        let (key_in, value_in) = self.key_ratio.split(group);
        if key_in == 0 || value_in == 0 {
            return Err(Error::Config(format!(
                "degenerate split of {group} channels by r={}: C_k={key_in}, C_v={value_in}",
                self.key_ratio
            )));
        }
        assert_eq!(key_in + value_in, group, "split must conserve channels");
        Ok(BlockGeometry {
            group,
            key_in,
            value_in,
            key_out,
            split: true,
        })
    }
}

/// Embedding shapes of one block after binding to an input width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockGeometry {
    /// `C / N`.
    pub group: usize,
    pub key_in: usize,
    pub value_in: usize,
    /// `M`, or 1 for the shared-attention variant.
    pub key_out: usize,
    /// Whether the group is split between key and value.
    pub split: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_fractions_and_decimals_exactly() {
        assert_eq!(
            "1/8".parse::<SplitRatio>().unwrap(),
            SplitRatio::new(1, 8).unwrap()
        );
        assert_eq!(
            "0.125".parse::<SplitRatio>().unwrap(),
            SplitRatio::new(1, 8).unwrap()
        );
        assert_eq!(
            ".5".parse::<SplitRatio>().unwrap(),
            SplitRatio::new(1, 2).unwrap()
        );
        for bad in ["1", "0", "2/2", "0/4", "abc", "-0.5", "1/0"] {
            assert!(bad.parse::<SplitRatio>().is_err(), "{bad}");
        }
        assert_eq!(SplitRatio::new(2, 8).unwrap().to_string(), "1/4");
    }

    #[test]
    fn resnet_style_splits() {
        let half = SplitRatio::new(1, 2).unwrap();
        assert_eq!(half.split(128), (64, 64));
        let eighth = SplitRatio::new(1, 8).unwrap();
        assert_eq!(eighth.split(512), (64, 448));
        assert_eq!(SplitRatio::new(1, 3).unwrap().split(4), (1, 3));
    }

    #[test]
    fn bind_errors() {
        let cfg = NoahConfig::standard(10);
        assert!(matches!(cfg.bind(10), Err(Error::Config(m)) if m.contains("not divisible")));
        // 4 channels per group at r = 1/8 leaves no key channel.
        let cfg = NoahConfig {
            key_ratio: SplitRatio::new(1, 8).unwrap(),
            ..NoahConfig::standard(10)
        };
        assert!(matches!(cfg.bind(16), Err(Error::Config(m)) if m.contains("degenerate")));
        assert!(NoahConfig::standard(1).bind(8).is_err());
    }

    #[test]
    fn variant_geometries() {
        let base = NoahConfig::standard(5);
        let g = base.bind(16).unwrap();
        assert_eq!((g.key_in, g.value_in, g.key_out, g.split), (2, 2, 5, true));
        let g = NoahConfig {
            second_split: false,
            ..base.clone()
        }
        .bind(16)
        .unwrap();
        assert_eq!((g.key_in, g.value_in, g.key_out, g.split), (4, 4, 5, false));
        let g = NoahConfig {
            shared_attention: true,
            ..base
        }
        .bind(16)
        .unwrap();
        assert_eq!((g.key_in, g.value_in, g.key_out, g.split), (4, 4, 1, false));
    }

    #[test]
    fn enum_keywords_roundtrip() {
        for m in [MergeMode::Sum, MergeMode::Mean, MergeMode::Max] {
            assert_eq!(m.to_string().parse::<MergeMode>().unwrap(), m);
        }
        assert!("median".parse::<MergeMode>().is_err());
        assert_eq!(
            "channel".parse::<AttentionAxis>().unwrap(),
            AttentionAxis::Channel
        );
        assert_eq!(
            "sigmoid".parse::<Activation>().unwrap(),
            Activation::Sigmoid
        );
    }

    proptest! {
        #[test]
        fn split_conserves_channels(group in 1usize..4096, p in 1u64..1000, extra in 1u64..1000) {
            let r = SplitRatio::new(p, p + extra).unwrap();
            let (k, v) = r.split(group);
            prop_assert_eq!(k + v, group);
        }
    }
}
