use noah_core::backbone::BackboneConfig;
use noah_core::config::{HeadKind, ModelConfig};
use noah_core::data::{gen_quadrant, QuadrantSpec};
use noah_core::heads::{audit_params, count_cost, MergeMode, NoahConfig, SplitRatio};
use noah_core::train::{Checkpoint, Model, Predictor};
use noah_core::{Dims, Model64, Parameterized, Tensor};
use proptest::prelude::*;

fn model_config(head: HeadKind, merge: MergeMode, backbone: BackboneConfig) -> ModelConfig {
    ModelConfig {
        head,
        noah: NoahConfig {
            merge,
            ..NoahConfig::standard(8)
        },
        backbone,
    }
}

/// Move pixel `k` of every image to position `perm[k]`.
fn permute(images: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let d = images.dims();
    let mut out = Tensor::zeros(d).unwrap();
    for b in 0..d.batch {
        for (k, &to) in perm.iter().enumerate() {
            let (i, j) = (k / d.width, k % d.width);
            let (ti, tj) = (to / d.width, to % d.width);
            for c in 0..d.channels {
                out.set(b, ti, tj, c, images.get(b, i, j, c));
            }
        }
    }
    out
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = noah_testkit::SplitMix64::new(seed);
    let mut p: Vec<usize> = (0..n).collect();
    for k in (1..n).rev() {
        p.swap(k, rng.between(0, k as u64) as usize);
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Content-based attention over a position-blind backbone cannot see
    // where anything is: any spatial permutation leaves the logits unchanged.
    #[test]
    fn pointwise_models_ignore_spatial_arrangement(seed in 0u64..1000, merge in 0usize..3, gap in any::<bool>()) {
        let merge = [MergeMode::Sum, MergeMode::Mean, MergeMode::Max][merge];
        let head = if gap { HeadKind::Gap } else { HeadKind::Noah };
        let model = Model64::init(&model_config(head, merge, BackboneConfig::pointwise()), seed).unwrap();
        let x = Tensor::from_f64(Dims::new(2, 6, 6, 1), &noah_testkit::seeded_values(seed, 72, 1.0)).unwrap();
        let perm = shuffled(36, seed ^ 0xABCD);
        let a = model.logits(&x).unwrap();
        let b = model.logits(&permute(&x, &perm)).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((u - v).abs() < 1e-9, "{} vs {}", u, v);
        }
    }

    #[test]
    fn checkpoints_roundtrip_bit_exact(seed in 0u64..1000, gap in any::<bool>(), bias in any::<bool>()) {
        let mut cfg = noah_core::config::ExperimentConfig::default();
        cfg.model.head = if gap { HeadKind::Gap } else { HeadKind::Noah };
        cfg.model.noah.use_bias = bias;
        let model = Model::<f32>::init(&cfg.model, seed).unwrap();
        let mut arrays = Vec::new();
        model.visit_params(&mut |n, d, v| arrays.push((n.to_string(), d.to_vec(), v.to_vec())));
        let bytes = Checkpoint::new(cfg, model).unwrap().to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        let mut k = 0;
        back.model().visit_params(&mut |n, d, v| {
            assert_eq!((n, d), (arrays[k].0.as_str(), arrays[k].1.as_slice()));
            assert!(v.iter().zip(&arrays[k].2).all(|(a, b)| a.to_bits() == b.to_bits()));
            k += 1;
        });
        prop_assert_eq!(k, arrays.len());
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn stored_parameters_match_cost_count(groups in 1usize..5, per_group in 1usize..9, m in 2usize..12, p in 1u64..8, bias in any::<bool>()) {
        let noah = NoahConfig {
            groups,
            key_ratio: SplitRatio::new(p, 8).unwrap(),
            use_bias: bias,
            ..NoahConfig::standard(m)
        };
        let c = groups * per_group * 8;
        let params = noah_core::heads::init_noah::<f32>(&noah, c, 1).unwrap();
        prop_assert_eq!(audit_params(&params), count_cost(&noah, c, 3, 3).unwrap().params);
    }
}

// On the quadrant task the same glyph in two quadrants is a pure spatial
// permutation of pixels, so a position-blind model gives both classes
// identical logits and the quadrant half of the label is unlearnable.
#[test]
fn quadrant_classes_collide_under_a_pointwise_backbone() {
    let spec = QuadrantSpec {
        noise: 0.0,
        ..QuadrantSpec::default()
    };
    let n = spec.image_size;
    for head in [HeadKind::Noah, HeadKind::Gap] {
        let model = Model64::init(
            &model_config(head, MergeMode::Sum, BackboneConfig::pointwise()),
            5,
        )
        .unwrap();
        for glyph in 0..2 {
            let logits: Vec<Vec<f64>> = (0..4)
                .map(|q| {
                    let img = spec.render(&spec.place(glyph, q, 1, -2));
                    let x = Tensor::from_f64(Dims::new(1, n, n, 1), &img).unwrap();
                    model.logits(&x).unwrap().data().to_vec()
                })
                .collect();
            for q in 1..4 {
                for (a, b) in logits[0].iter().zip(&logits[q]) {
                    assert!((a - b).abs() < 1e-9, "{head:?} glyph {glyph} quadrant {q}");
                }
            }
        }
    }
}

#[test]
fn conv_backbone_breaks_the_collision() {
    let spec = QuadrantSpec {
        noise: 0.0,
        ..QuadrantSpec::default()
    };
    let n = spec.image_size;
    let model = Model64::init(
        &model_config(HeadKind::Noah, MergeMode::Sum, BackboneConfig::conv3x3()),
        5,
    )
    .unwrap();
    let logits = |q| {
        let x =
            Tensor::from_f64(Dims::new(1, n, n, 1), &spec.render(&spec.place(0, q, 2, 2))).unwrap();
        model.logits(&x).unwrap().data().to_vec()
    };
    let (a, b) = (logits(0), logits(3));
    assert!(a.iter().zip(&b).any(|(u, v)| (u - v).abs() > 1e-6));
}

#[test]
fn generator_is_bitwise_reproducible() {
    let spec = QuadrantSpec {
        seed: 42,
        ..QuadrantSpec::default()
    };
    let a = gen_quadrant::<f32>(&spec, 300).unwrap();
    let b = gen_quadrant::<f32>(&spec, 300).unwrap();
    assert!(a
        .images
        .data()
        .iter()
        .zip(b.images.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.labels, b.labels);
}
