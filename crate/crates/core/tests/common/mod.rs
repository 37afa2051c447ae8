//! Scalar reference implementations and fixtures shared by the integration
//! tests. The `naive_*` functions use no library kernels.

#![allow(dead_code)]

use std::path::PathBuf;

use bam::bam::{BamConfig, Combine};
use bam::data::{write_fixture, Dataset};
use bam::nn::ParamStore;

const BN_EPS: f64 = 1e-5;

/// Direct six-loop cross-correlation of `x: [n, c, h, w]` with
/// `w: [o, c, k, k]`, zero padding.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f64],
    [n, c, h, w]: [usize; 4],
    weight: &[f64],
    [o, wc, k, k2]: [usize; 4],
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    dil: usize,
) -> (Vec<f64>, [usize; 4]) {
    assert_eq!((wc, k), (c, k2));
    let oh = (h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    let ow = (w + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias.map_or(0.0, |bs| bs[oc]);
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky * dil) as isize - pad as isize;
                                let ix = (xo * stride + kx * dil) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ic) * h + iy as usize) * w + ix as usize];
                                acc += xv * weight[((oc * c + ic) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    (out, [n, o, oh, ow])
}

/// Training-mode batch norm over `[n, c, s]` laid out channel-second.
fn naive_bn(x: &mut [f64], n: usize, c: usize, s: usize, gamma: &[f64], beta: &[f64]) {
    let count = (n * s) as f64;
    for ch in 0..c {
        let idx = |b: usize, i: usize| (b * c + ch) * s + i;
        let mut mean = 0.0;
        for b in 0..n {
            for i in 0..s {
                mean += x[idx(b, i)];
            }
        }
        mean /= count;
        let mut var = 0.0;
        for b in 0..n {
            for i in 0..s {
                var += (x[idx(b, i)] - mean).powi(2);
            }
        }
        var /= count;
        let inv = 1.0 / (var + BN_EPS).sqrt();
        for b in 0..n {
            for i in 0..s {
                let v = &mut x[idx(b, i)];
                *v = (*v - mean) * inv * gamma[ch] + beta[ch];
            }
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn relu(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

/// Result of the reference module: refined features, the 3-D attention
/// map and each branch's pre-sigmoid logits.
pub struct NaiveBam {
    pub refined: Vec<f64>,
    pub attention: Vec<f64>,
    pub channel: Option<Vec<f64>>,
    pub spatial: Option<Vec<f64>>,
}

/// The attention module in training mode, reading its parameters by name
/// from `store` under `prefix`.
pub fn naive_bam(x: &[f64], dims: [usize; 4], store: &ParamStore<f64>, prefix: &str, cfg: BamConfig) -> NaiveBam {
    let [n, c, h, w] = dims;
    let p = |name: &str| {
        store
            .by_name(&format!("{prefix}.{name}"))
            .unwrap_or_else(|| panic!("missing {name}"))
            .data()
            .to_vec()
    };
    let hidden = c / cfg.reduction;
    let hw = h * w;

    let channel = cfg.channel_branch.then(|| {
        let (w0, b0, w1, b1) = (
            p("channel.fc0.weight"),
            p("channel.fc0.bias"),
            p("channel.fc1.weight"),
            p("channel.fc1.bias"),
        );
        let mut logits = vec![0.0; n * c];
        for b in 0..n {
            let pooled: Vec<f64> = (0..c)
                .map(|ch| x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().sum::<f64>() / hw as f64)
                .collect();
            let mut z: Vec<f64> = (0..hidden)
                .map(|j| b0[j] + (0..c).map(|i| w0[j * c + i] * pooled[i]).sum::<f64>())
                .collect();
            relu(&mut z);
            for i in 0..c {
                logits[b * c + i] = b1[i] + (0..hidden).map(|j| w1[i * hidden + j] * z[j]).sum::<f64>();
            }
        }
        naive_bn(&mut logits, n, c, 1, &p("channel.bn.weight"), &p("channel.bn.bias"));
        logits
    });

    let spatial = cfg.spatial_branch.then(|| {
        let d = cfg.dilation;
        let conv = |input: &[f64], cin: usize, name: &str, cout: usize, k: usize, pad: usize, dil: usize| {
            let (mut out, _) = naive_conv(
                input,
                [n, cin, h, w],
                &p(&format!("spatial.{name}.weight")),
                [cout, cin, k, k],
                Some(&p(&format!("spatial.{name}.bias"))),
                1,
                pad,
                dil,
            );
            relu(&mut out);
            out
        };
        let a = conv(x, c, "reduce", hidden, 1, 0, 1);
        let a = conv(&a, hidden, "dilated0", hidden, 3, d, d);
        let a = conv(&a, hidden, "dilated1", hidden, 3, d, d);
        let (mut logits, _) = naive_conv(
            &a,
            [n, hidden, h, w],
            &p("spatial.collapse.weight"),
            [1, hidden, 1, 1],
            Some(&p("spatial.collapse.bias")),
            1,
            0,
            1,
        );
        naive_bn(&mut logits, n, 1, hw, &p("spatial.bn.weight"), &p("spatial.bn.bias"));
        logits
    });

    let mut attention = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..hw {
                let mc = channel.as_ref().map(|m| m[b * c + ch]);
                let ms = spatial.as_ref().map(|m| m[b * hw + i]);
                let merged = match (mc, ms) {
                    (Some(a), Some(s)) => match cfg.combine {
                        Combine::Sum => a + s,
                        Combine::Prod => a * s,
                        Combine::Max => a.max(s),
                    },
                    (Some(a), None) => a,
                    (None, Some(s)) => s,
                    (None, None) => unreachable!(),
                };
                attention[(b * c + ch) * hw + i] = sigmoid(merged);
            }
        }
    }
    let refined = x.iter().zip(&attention).map(|(f, m)| f + f * m).collect();
    NaiveBam {
        refined,
        attention,
        channel,
        spatial,
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A CIFAR-10 directory: `BAM_CIFAR10_DIR` when set, otherwise a synthetic
/// one written into a temp dir that lives as long as the returned guard.
pub fn cifar10_dir() -> (Option<tempfile::TempDir>, PathBuf) {
    if let Some(dir) = std::env::var_os("BAM_CIFAR10_DIR") {
        return (None, PathBuf::from(dir));
    }
    let tmp = tempfile::tempdir().expect("temp dir");
    write_fixture(tmp.path(), Dataset::Cifar10, 11).expect("fixture");
    let path = tmp.path().to_path_buf();
    (Some(tmp), path)
}

/// A module with every learnable tensor drawn at random, so biases and
/// batch-norm affine terms are exercised too.
pub fn random_bam(channels: usize, cfg: BamConfig, seed: u64) -> (ParamStore<f64>, bam::bam::Bam) {
    let r = &mut bam::rng::seeded(seed);
    let mut store = ParamStore::new();
    let module = bam::bam::Bam::new(&mut store, "bam", channels, cfg, bam::nn::Init::HeNormal, r).expect("valid config");
    let ids: Vec<_> = store.weights().map(|(id, _)| id).collect();
    for id in ids {
        let noise = bam::tensor::Tensor::randn(store.get(id).dims().to_vec(), 0.3, r).expect("shape");
        let updated = store.get(id).add(&noise).expect("same shape");
        *store.get_mut(id) = updated;
    }
    (store, module)
}

/// Runs the library module in training mode on `x`.
pub fn library_bam(store: &mut ParamStore<f64>, module: &bam::bam::Bam, x: &bam::tensor::Tensor<f64>) -> NaiveBam {
    let tape = bam::autodiff::Tape::new();
    let mut s = bam::nn::Session::new(&tape, store, bam::nn::Mode::Train);
    let input = tape.constant(x.clone());
    let out = module.forward(&mut s, &input).expect("forward");
    NaiveBam {
        refined: out.refined.value().data().to_vec(),
        attention: out.attention.value().data().to_vec(),
        channel: out.channel_logits.map(|v| v.value().data().to_vec()),
        spatial: out.spatial_logits.map(|v| v.value().data().to_vec()),
    }
}
