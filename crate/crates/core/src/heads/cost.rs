use crate::error::{Error, Result};
use crate::heads::config::NoahConfig;

/// One itemized line of a [`CostReport`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostItem {
    pub stage: String,
    pub params: u64,
    pub madds: u64,
}

/// Exact parameter and multiply-add counts for a head at a given geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub params: u64,
    pub madds: u64,
    pub breakdown: Vec<CostItem>,
}

impl CostReport {
    fn from_items(breakdown: Vec<CostItem>) -> Self {
        CostReport {
            params: breakdown.iter().map(|i| i.params).sum(),
            madds: breakdown.iter().map(|i| i.madds).sum(),
            breakdown,
        }
    }
}

fn item(stage: impl Into<String>, params: u64, madds: u64) -> CostItem {
    CostItem {
        stage: stage.into(),
        params,
        madds,
    }
}

/// Cost of the attentive head on a `H×W×C` feature map.
///
/// Per block: key and value embeddings (`HW·Cin·Cout` each), `HWM` Hadamard
/// multiplications and `HWM` merge additions, plus `M` for the classifier.
/// For the standard head this totals `MC` params and `HWMC + 2HWMN + M` MAdds.
pub fn count_cost(
    config: &NoahConfig,
    channels: usize,
    height: usize,
    width: usize,
) -> Result<CostReport> {
    if height == 0 || width == 0 {
        return Err(Error::Config(format!(
            "feature map {height}x{width} is empty"
        )));
    }
    let geo = config.bind(channels)?;
    let (hw, m) = ((height * width) as u64, config.categories as u64);
    let (key_in, key_out, value_in) = (geo.key_in as u64, geo.key_out as u64, geo.value_in as u64);
    let mut items = Vec::new();
    for n in 0..config.groups {
        items.push(item(
            format!("block{n}.key"),
            key_in * key_out,
            hw * key_in * key_out,
        ));
        items.push(item(
            format!("block{n}.value"),
            value_in * m,
            hw * value_in * m,
        ));
        items.push(item(format!("block{n}.hadamard"), 0, hw * m));
        items.push(item(format!("block{n}.merge"), 0, hw * m));
        if config.use_bias {
            items.push(item(format!("block{n}.bias"), key_out + m, 0));
        }
    }
    items.push(item("classifier", 0, m));
    Ok(CostReport::from_items(items))
}

/// `(MC, HWMC + 2HWMN + M)`: the closed-form totals of the standard head.
pub fn closed_form_cost(
    channels: usize,
    height: usize,
    width: usize,
    categories: usize,
    groups: usize,
) -> (u64, u64) {
    let (c, hw, m, n) = (
        channels as u64,
        (height * width) as u64,
        categories as u64,
        groups as u64,
    );
    (m * c, hw * m * c + 2 * hw * m * n + m)
}

/// Cost of the pooling baseline: `HW·C` pooling adds and a `C×M` linear layer.
pub fn count_gap_cost(
    channels: usize,
    height: usize,
    width: usize,
    categories: usize,
    use_bias: bool,
) -> Result<CostReport> {
    if channels == 0 || height == 0 || width == 0 || categories == 0 {
        return Err(Error::Config("GAP geometry must be non-empty".into()));
    }
    let (c, m) = (channels as u64, categories as u64);
    let mut items = vec![
        item("pool", 0, (height * width) as u64 * c),
        item("fc", c * m, c * m),
    ];
    if use_bias {
        items.push(item("fc.bias", m, 0));
    }
    Ok(CostReport::from_items(items))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::config::SplitRatio;

    #[test]
    fn resnet50_geometry() {
        let cfg = NoahConfig {
            key_ratio: SplitRatio::new(1, 8).unwrap(),
            ..NoahConfig::standard(1000)
        };
        let r = count_cost(&cfg, 2048, 7, 7).unwrap();
        assert_eq!(r.params, 2_048_000);
        assert_eq!(r.madds, 100_352_000 + 392_000 + 1_000);
        assert_eq!(r.madds, 100_745_000);
    }

    #[test]
    fn closed_form_at_degenerate_point() {
        assert_eq!(closed_form_cost(1, 1, 1, 1, 1), (1, 4));
    }

    #[test]
    fn structural_count_matches_closed_form() {
        for (c, h, w, m, n, p, q) in [
            (2048, 7, 7, 1000, 4, 1, 8),
            (512, 7, 7, 1000, 4, 1, 2),
            (96, 3, 5, 7, 3, 1, 3),
            (8, 1, 1, 2, 1, 1, 2),
        ] {
            let cfg = NoahConfig {
                groups: n,
                key_ratio: SplitRatio::new(p, q).unwrap(),
                ..NoahConfig::standard(m)
            };
            let r = count_cost(&cfg, c, h, w).unwrap();
            assert_eq!((r.params, r.madds), closed_form_cost(c, h, w, m, n));
        }
    }

    #[test]
    fn variants_cost_structurally() {
        let base = NoahConfig::standard(10);
        let no_split = count_cost(
            &NoahConfig {
                second_split: false,
                ..base.clone()
            },
            32,
            7,
            7,
        )
        .unwrap();
        assert_eq!(no_split.params, 2 * 10 * 32);
        let shared = count_cost(
            &NoahConfig {
                shared_attention: true,
                ..base
            },
            32,
            7,
            7,
        )
        .unwrap();
        assert_eq!(shared.params, 4 * (8 + 8 * 10));
    }

    #[test]
    fn bias_is_itemized() {
        let cfg = NoahConfig {
            use_bias: true,
            ..NoahConfig::standard(10)
        };
        let with = count_cost(&cfg, 32, 7, 7).unwrap();
        let without = count_cost(&NoahConfig::standard(10), 32, 7, 7).unwrap();
        assert_eq!(with.params - without.params, 80);
        assert_eq!(with.madds, without.madds);
        assert_eq!(
            with.breakdown
                .iter()
                .filter(|i| i.stage.ends_with(".bias"))
                .count(),
            4
        );
    }

    #[test]
    fn totals_equal_breakdown_and_gap_matches_mc() {
        let r = count_cost(&NoahConfig::standard(100), 512, 7, 7).unwrap();
        assert_eq!(r.params, r.breakdown.iter().map(|i| i.params).sum::<u64>());
        assert_eq!(r.params, 51_200);
        assert_eq!(
            count_gap_cost(2048, 7, 7, 1000, false).unwrap().params,
            2_048_000
        );
        assert!(count_cost(&NoahConfig::standard(10), 10, 7, 7).is_err());
        assert!(count_cost(&NoahConfig::standard(10), 16, 0, 7).is_err());
    }
}
