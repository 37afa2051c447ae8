mod common;

use bam::autodiff::Tape;
use bam::bam::{Bam, BamConfig, Combine};
use bam::nn::{Init, Mode, ParamStore, Session};
use bam::rng;
use bam::tensor::Tensor;
use common::{library_bam, random_bam};
use proptest::prelude::*;

fn config() -> impl Strategy<Value = BamConfig> {
    (prop::sample::select(vec![1usize, 2, 4]), 0..3usize, 0..3usize).prop_map(|(dilation, combine, branches)| BamConfig {
        reduction: 2,
        dilation,
        combine: Combine::ALL[combine],
        channel_branch: branches != 2,
        spatial_branch: branches != 1,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_is_open_unit_interval(cfg in config(), seed in 0u64..1000, side in 1usize..6, n in 1usize..3) {
        let (mut store, module) = random_bam(4, cfg, seed);
        let x = Tensor::randn([n, 4, side, side], 2.0, &mut rng::seeded(seed + 7)).unwrap();
        let out = library_bam(&mut store, &module, &x);
        prop_assert!(out.attention.iter().all(|&m| m > 0.0 && m < 1.0));
        for (f, r) in x.data().iter().zip(&out.refined) {
            if f.abs() > 1e-6 {
                let ratio = r / f;
                prop_assert!(ratio > 1.0 && ratio < 2.0, "ratio {ratio}");
            }
        }
    }

    #[test]
    fn channel_logits_ignore_spatial_order(seed in 0u64..1000, shift in 1usize..16) {
        let cfg = BamConfig { reduction: 2, ..Default::default() };
        let (mut store, module) = random_bam(4, cfg, seed);
        let x = Tensor::randn([2, 4, 4, 4], 1.0, &mut rng::seeded(seed)).unwrap();
        let mut rolled = x.clone();
        for plane in 0..8 {
            let src = &x.data()[plane * 16..(plane + 1) * 16];
            for (i, &v) in src.iter().enumerate() {
                rolled.data_mut()[plane * 16 + (i + shift) % 16] = v;
            }
        }
        let a = library_bam(&mut store, &module, &x).channel.unwrap();
        let b = library_bam(&mut store, &module, &rolled).channel.unwrap();
        prop_assert!(common::max_abs_diff(&a, &b) < 1e-12);
    }
}

#[test]
fn zero_weights_scale_features_by_one_and_a_half() {
    for combine in Combine::ALL {
        let cfg = BamConfig {
            reduction: 4,
            combine,
            ..Default::default()
        };
        let mut store = ParamStore::<f32>::new();
        let module = Bam::new(&mut store, "bam", 8, cfg, Init::Zeros, &mut rng::seeded(0)).unwrap();
        let x = Tensor::randn([2, 8, 5, 5], 3.0, &mut rng::seeded(1)).unwrap();
        let tape = Tape::new();
        let mut s = Session::new(&tape, &mut store, Mode::Train);
        let out = module.forward(&mut s, &tape.constant(x.clone())).unwrap();
        for (f, r) in x.data().iter().zip(out.refined.value().data()) {
            let want = 1.5 * f;
            assert!((r - want).abs() <= want.abs() * f32::EPSILON, "{r} vs {want}");
        }
    }
}

#[test]
fn sum_combine_gradient_on_logits_is_shared() {
    // with SUM, dL/dMc summed over positions equals dL/dMs summed over channels
    let cfg = BamConfig {
        reduction: 2,
        ..Default::default()
    };
    let (mut store, module) = random_bam(4, cfg, 3);
    let x = Tensor::randn([2, 4, 3, 3], 1.0, &mut rng::seeded(4)).unwrap();
    let tape = Tape::new();
    let mut s = Session::new(&tape, &mut store, Mode::Train);
    let out = module.forward(&mut s, &tape.constant(x)).unwrap();
    out.refined.sum().backward().unwrap();
    let gc = out.channel_logits.unwrap().grad().unwrap();
    let gs = out.spatial_logits.unwrap().grad().unwrap();
    let total_c: f64 = gc.data().iter().sum();
    let total_s: f64 = gs.data().iter().sum();
    assert!((total_c - total_s).abs() < 1e-10, "{total_c} vs {total_s}");
}
