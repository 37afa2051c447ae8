use bam::bam::BamConfig;
use bam::models::{Attention, Model, ModelSpec};
use bam::nn::Mode;
use bam::profiler::{bam_params, diff, profile};
use bam::rng;
use bam::tensor::Tensor;

const PLACEMENTS: [Attention; 4] = [Attention::None, Attention::Bottleneck, Attention::PerBlock, Attention::ExtraBlock];

#[test]
fn analytic_counts_equal_built_models() {
    for name in ModelSpec::LIBRARY {
        for attention in PLACEMENTS {
            let spec = ModelSpec::named(name).unwrap().with_attention(attention);
            let side = if name.ends_with("imagenet") { 224 } else { 32 };
            let report = profile(&spec, [3, side, side]).unwrap();
            let model = Model::<f32>::build(&spec, 0).unwrap();
            assert_eq!(report.params(), model.param_count() as u64, "{name} {attention}");
        }
    }
}

#[test]
fn module_overhead_is_the_hand_count() {
    let total: u64 = [256, 512, 1024].iter().map(|&c| bam_params(c, BamConfig::default()).unwrap()).sum();
    assert_eq!(total, 360_761);
    let spec = ModelSpec::named("resnet50-cifar").unwrap().with_attention(Attention::Bottleneck);
    let base = profile(&spec.clone().with_attention(Attention::None), [3, 32, 32]).unwrap();
    let with = profile(&spec, [3, 32, 32]).unwrap();
    let delta = diff(&base, &with);
    assert_eq!(delta.params(), 360_761);
    assert!(delta.changed().all(|r| r.name.starts_with("bam.")));
}

#[test]
fn dilation_leaves_cost_unchanged_and_reduction_orders_it() {
    let spec = ModelSpec::named("resnet50-cifar").unwrap().with_attention(Attention::Bottleneck);
    let count = |reduction, dilation| {
        let s = spec.clone().with_bam(BamConfig {
            reduction,
            dilation,
            ..Default::default()
        });
        let r = profile(&s, [3, 32, 32]).unwrap();
        (r.params(), r.macs())
    };
    for d in [1, 2, 6] {
        assert_eq!(count(16, d), count(16, 4));
    }
    let by_r: Vec<u64> = [4, 8, 16, 32].iter().map(|&r| count(r, 4).0).collect();
    assert!(by_r.windows(2).all(|w| w[0] > w[1]), "{by_r:?}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec::named("tiny")
        .unwrap()
        .with_attention(Attention::Bottleneck)
        .with_bam(BamConfig {
            reduction: 4,
            ..Default::default()
        });
    let mut a = Model::<f32>::build(&spec, 1).unwrap();
    let x = Tensor::randn([4, 3, 32, 32], 1.0, &mut rng::seeded(2)).unwrap();
    a.predict(&x).unwrap(); // moves the running statistics off their defaults
    let path = dir.path().join("a.ckpt");
    a.save(&path).unwrap();
    let mut b = Model::<f32>::build(&spec, 2).unwrap();
    assert_ne!(a.state_entries(), b.state_entries());
    b.load(&path).unwrap();
    assert_eq!(a.state_entries(), b.state_entries());
    let again = dir.path().join("b.ckpt");
    b.save(&again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    a.set_mode(Mode::Eval);
    b.set_mode(Mode::Eval);
    assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
}

#[test]
fn mismatched_checkpoint_is_rejected_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.ckpt");
    let tiny = ModelSpec::named("tiny").unwrap().with_attention(Attention::None);
    Model::<f32>::build(&tiny, 0).unwrap().save(&path).unwrap();
    let mut other = Model::<f32>::build(&tiny.clone().with_classes(3), 5).unwrap();
    let before = other.state_entries();
    let err = other.load(&path).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert_eq!(other.state_entries(), before);
}

#[test]
fn resnet50_forward_shapes() {
    let spec = ModelSpec::named("resnet50-cifar").unwrap().with_attention(Attention::Bottleneck);
    let mut model = Model::<f32>::build(&spec, 0).unwrap();
    model.set_mode(Mode::Eval);
    let tape = bam::autodiff::Tape::new();
    let x = tape.constant(Tensor::randn([1, 3, 32, 32], 1.0, &mut rng::seeded(0)).unwrap());
    let out = model.forward(&tape, &x).unwrap();
    assert_eq!(out.logits.dims(), [1, 100]);
    let dims: Vec<_> = out.attention.iter().map(|m| m.attention.dims().to_vec()).collect();
    assert_eq!(dims, [vec![1, 256, 32, 32], vec![1, 512, 16, 16], vec![1, 1024, 8, 8]]);
}
