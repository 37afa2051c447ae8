//! Finite-difference gradient checks over every layer type and the
//! attention module, in double precision.

use crate::autodiff::{grad_check_many, Var};
use crate::bam::{Bam, BamConfig, Combine};
use crate::error::Result;
use crate::nn::{
    batch_norm, conv2d, global_avg_pool, linear, max_pool2d, BatchNormConfig, ConvGeometry, Init, Mode, ParamStore, RunningStats, Session,
};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    /// Worst relative error over every input element.
    pub max_error: f64,
}

fn randn(dims: &[usize], r: &mut Rng) -> Tensor<f64> {
    Tensor::randn(dims.to_vec(), 1.0, r).expect("nonzero dims")
}

/// `sum(y ⊙ w)` for a fixed random `w`, so every output element matters.
fn project<'t>(y: &Var<'t, f64>, w: &Tensor<f64>) -> Result<Var<'t, f64>> {
    Ok(y.mul(&y.tape().constant(w.clone()))?.sum())
}

fn case(name: &str, errors: Vec<f64>) -> GradCheck {
    GradCheck {
        name: name.to_string(),
        max_error: errors.into_iter().fold(0.0, f64::max),
    }
}

/// Checks of the primitive layers.
pub fn layer_suite(seed: u64, eps: f64) -> Result<Vec<GradCheck>> {
    let r = &mut rng::seeded(seed);
    let mut out = Vec::new();

    let w = randn(&[3, 4], r);
    let e = grad_check_many(
        |v| project(&linear(&v[0], &v[1], &v[2])?, &w),
        &[randn(&[3, 5], r), randn(&[4, 5], r), randn(&[4], r)],
        eps,
    )?;
    out.push(case("linear", e));

    for (name, geom, side) in [
        ("conv2d", ConvGeometry::new(1, 1, 1), 6),
        ("conv2d stride 2", ConvGeometry::new(2, 1, 1), 7),
        ("conv2d dilation 2", ConvGeometry::new(1, 2, 2), 6),
        ("conv2d dilation 4", ConvGeometry::new(1, 4, 4), 9),
    ] {
        let out_side = geom.output_extent(side, 3).expect("fits");
        let w = randn(&[2, 3, out_side, out_side], r);
        let e = grad_check_many(
            |v| project(&conv2d(&v[0], &v[1], Some(&v[2]), geom)?, &w),
            &[randn(&[2, 2, side, side], r), randn(&[3, 2, 3, 3], r), randn(&[3], r)],
            eps,
        )?;
        out.push(case(name, e));
    }

    for (name, mode) in [("batch_norm train", Mode::Train), ("batch_norm eval", Mode::Eval)] {
        let w = randn(&[4, 3, 2, 2], r);
        let mut mean = randn(&[3], r).scale(0.1);
        let mut var = Tensor::full([3], 1.5)?;
        let e = grad_check_many(
            |v| {
                let stats = RunningStats {
                    mean: &mut mean,
                    var: &mut var,
                };
                project(&batch_norm(&v[0], &v[1], &v[2], stats, mode, BatchNormConfig::default())?, &w)
            },
            &[randn(&[4, 3, 2, 2], r), randn(&[3], r), randn(&[3], r)],
            eps,
        )?;
        out.push(case(name, e));
    }

    let w = randn(&[3, 4, 5], r);
    out.push(case(
        "relu",
        grad_check_many(|v| project(&v[0].relu(), &w), &[randn(&[3, 4, 5], r)], eps)?,
    ));
    out.push(case(
        "sigmoid",
        grad_check_many(|v| project(&v[0].sigmoid(), &w), &[randn(&[3, 4, 5], r)], eps)?,
    ));

    let w = randn(&[2, 3, 3, 3], r);
    out.push(case(
        "max_pool2d",
        grad_check_many(|v| project(&max_pool2d(&v[0], 3, 2, 1)?, &w), &[randn(&[2, 3, 5, 5], r)], eps)?,
    ));
    let w = randn(&[2, 3, 1, 1], r);
    out.push(case(
        "global_avg_pool",
        grad_check_many(|v| project(&global_avg_pool(&v[0])?, &w), &[randn(&[2, 3, 4, 5], r)], eps)?,
    ));
    let labels = [0usize, 3, 1, 3];
    out.push(case(
        "softmax_cross_entropy",
        grad_check_many(|v| v[0].softmax_cross_entropy(&labels), &[randn(&[4, 5], r)], eps)?,
    ));
    Ok(out)
}

/// Gradient of a full module application with respect to its input and
/// every learnable parameter.
pub fn bam_check(config: BamConfig, dims: [usize; 4], seed: u64, eps: f64) -> Result<f64> {
    let r = &mut rng::seeded(seed);
    let mut store = ParamStore::<f64>::new();
    let bam = Bam::new(&mut store, "bam", dims[1], config, Init::HeNormal, r)?;
    let weights: Vec<_> = store.weights().map(|(id, e)| (id, e.value().clone())).collect();
    // biases start at zero; move them off zero so every path is exercised
    let mut inputs = vec![randn(&dims, r)];
    inputs.extend(
        weights
            .iter()
            .map(|(_, t)| t.add(&randn(t.dims(), r).scale(0.1)).expect("same shape")),
    );
    let w = randn(&dims, r);
    let errors = grad_check_many(
        |v| {
            let mut s = Session::new(v[0].tape(), &mut store, Mode::Train);
            for ((id, _), var) in weights.iter().zip(&v[1..]) {
                s.bind(*id, var.clone())?;
            }
            project(&bam.forward(&mut s, &v[0])?.refined, &w)
        },
        &inputs,
        eps,
    )?;
    Ok(errors.into_iter().fold(0.0, f64::max))
}

/// Every combine strategy with both branches, then each branch alone.
pub fn bam_suite(seed: u64, eps: f64) -> Result<Vec<GradCheck>> {
    let dims = [2, 8, 4, 4];
    let base = BamConfig {
        reduction: 4,
        ..Default::default()
    };
    let mut out = Vec::new();
    for combine in Combine::ALL {
        let cfg = BamConfig { combine, ..base };
        out.push(GradCheck {
            name: format!("bam {combine}"),
            max_error: bam_check(cfg, dims, seed, eps)?,
        });
    }
    for (name, channel, spatial) in [("bam channel only", true, false), ("bam spatial only", false, true)] {
        let cfg = BamConfig {
            channel_branch: channel,
            spatial_branch: spatial,
            ..base
        };
        out.push(GradCheck {
            name: name.into(),
            max_error: bam_check(cfg, dims, seed, eps)?,
        });
    }
    Ok(out)
}
