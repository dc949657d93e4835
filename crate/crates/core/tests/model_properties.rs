mod common;

use common::grad::{micro_config, uniform};
use fragmentvc::model::{FragmentVc, ModelConfig};
use fragmentvc::tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn zero_first_cross_attention(model: &mut FragmentVc<f64>) {
    for p in model.params_mut().iter_mut() {
        if p.name.starts_with("extractors.0.cross_attn.") {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

fn swap_gap(keep_residual: bool, seed: u64) -> f64 {
    let cfg = ModelConfig {
        keep_extractor1_residual: keep_residual,
        ..micro_config()
    };
    let mut model = FragmentVc::<f64>::new(cfg, seed).unwrap();
    zero_first_cross_attention(&mut model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let a = uniform(&mut rng, &[7, 6], -1.0, 1.0);
    let b = uniform(&mut rng, &[7, 6], -1.0, 1.0);
    let tgt = uniform(&mut rng, &[9, 5], -1.0, 1.0);
    let ya = model.infer(&a, &[&tgt]).unwrap().mel_post;
    let yb = model.infer(&b, &[&tgt]).unwrap().mel_post;
    ya.max_abs_diff(&yb).unwrap()
}

#[test]
fn without_the_first_residual_the_source_cannot_leak_past_extractor_one() {
    for seed in 0..5 {
        assert!(swap_gap(false, seed) < 1e-5);
        assert!(swap_gap(true, seed) > 1e-3);
    }
}

#[test]
fn target_order_does_not_matter() {
    let model = FragmentVc::<f64>::new(micro_config(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let src = uniform(&mut rng, &[5, 6], -1.0, 1.0);
    let t: Vec<Tensor<f64>> = [3, 6, 4].iter().map(|&n| uniform(&mut rng, &[n, 5], -1.0, 1.0)).collect();
    let y1 = model.infer(&src, &[&t[0], &t[1], &t[2]]).unwrap();
    let y2 = model.infer(&src, &[&t[2], &t[0], &t[1]]).unwrap();
    assert!(y1.mel_post.max_abs_diff(&y2.mel_post).unwrap() < 1e-10);
}

#[test]
fn f32_and_f64_agree() {
    let m64 = FragmentVc::<f64>::new(micro_config(), 2).unwrap();
    let m32: FragmentVc<f32> = m64.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let src = uniform(&mut rng, &[6, 6], -1.0, 1.0);
    let tgt = uniform(&mut rng, &[8, 5], -1.0, 1.0);
    let y64 = m64.infer(&src, &[&tgt]).unwrap().mel_post;
    let y32 = m32.infer(&src.cast(), &[&tgt.cast()]).unwrap().mel_post;
    assert!(y64.max_abs_diff(&y32.cast()).unwrap() < 1e-4);
}

#[test]
fn ablations_build_and_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let src = uniform(&mut rng, &[4, 6], -1.0, 1.0);
    let tgt = uniform(&mut rng, &[6, 5], -1.0, 1.0);
    let variants = [
        ModelConfig { flat_wiring: true, ..micro_config() },
        ModelConfig { no_cross_attention: true, ..micro_config() },
        ModelConfig { keep_extractor1_residual: true, ..micro_config() },
    ];
    for cfg in variants {
        let pooled = cfg.no_cross_attention;
        let out = FragmentVc::<f64>::new(cfg, 0).unwrap().infer(&src, &[&tgt]).unwrap();
        assert_eq!(out.mel_post.shape(), &[4, 5]);
        let keys = if pooled { 1 } else { 6 };
        for w in &out.attention.layers {
            assert_eq!(w.shape(), &[2, 4, keys]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn shapes_and_attention_rows(t in 1usize..12, s1 in 1usize..10, s2 in 1usize..10, seed in 0u64..1000) {
        let model = FragmentVc::<f64>::new(micro_config(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = uniform(&mut rng, &[t, 6], -2.0, 2.0);
        let a = uniform(&mut rng, &[s1, 5], -2.0, 2.0);
        let b = uniform(&mut rng, &[s2, 5], -2.0, 2.0);
        let out = model.infer(&src, &[&a, &b]).unwrap();
        prop_assert_eq!(out.mel_post.shape(), &[t, 5]);
        for w in &out.attention.layers {
            prop_assert_eq!(w.shape(), &[2, t, s1 + s2]);
            for row in w.data().chunks(s1 + s2) {
                let total: f64 = row.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn parameter_count_formula(
        heads in 1usize..4,
        width_per_head in 1usize..6,
        upstream in 1usize..20,
        mels in 1usize..12,
        smoothers in 0usize..4,
        kernel in 0usize..3,
        expansion in 1usize..4,
        postnet in 1usize..6,
        flat in any::<bool>(),
    ) {
        let cfg = ModelConfig {
            d_model: heads * width_per_head,
            n_heads: heads,
            upstream_dim: upstream,
            n_mel: mels,
            n_smoothers: smoothers,
            ffn_kernel: 2 * kernel + 1,
            tgt_kernel: 2 * kernel + 1,
            postnet_kernel: 2 * kernel + 1,
            ffn_expansion: expansion,
            postnet_layers: postnet,
            flat_wiring: flat,
            ..ModelConfig::default()
        };
        let model = FragmentVc::<f32>::new(cfg.clone(), 0).unwrap();
        prop_assert_eq!(model.params().num_elements(), cfg.parameter_count());
    }
}
