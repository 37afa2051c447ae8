use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }
}

/// Running statistics a batch-norm layer maintains between calls.
pub struct RunningStats<'a, T: Scalar> {
    pub mean: &'a mut Tensor<T>,
    pub var: &'a mut Tensor<T>,
}

/// Per-channel batch normalization of `x: [N, C, ...]`.
///
/// In training mode statistics are the batch mean and biased (divide by
/// count) variance over every axis but the channel axis, and the running
/// statistics move toward them by `momentum`. In evaluation mode only the
/// running statistics are used.
pub fn batch_norm<'t, T: Scalar>(
    x: &Var<'t, T>,
    gamma: &Var<'t, T>,
    beta: &Var<'t, T>,
    stats: RunningStats<'_, T>,
    mode: Mode,
    config: BatchNormConfig,
) -> Result<Var<'t, T>> {
    let dims = x.dims();
    if dims.len() < 2 {
        return Err(Error::shape(format!("batch norm needs [N, C, ...], got {dims:?}")));
    }
    let (batch, channels) = (dims[0], dims[1]);
    let inner: usize = dims[2..].iter().product();
    for (what, t) in [
        ("gamma", gamma.value()),
        ("beta", beta.value()),
        ("running mean", &*stats.mean),
        ("running var", &*stats.var),
    ] {
        if t.dims() != [channels] {
            return Err(Error::shape(format!(
                "batch norm {what} has shape {:?}, input has {channels} channels",
                t.dims()
            )));
        }
    }
    let count = batch * inner;
    let eps = T::from_f64_lossy(config.epsilon);
    let xd = x.value().data();
    let at = move |n: usize, c: usize| (n * channels + c) * inner;

    let (mean, var) = match mode {
        Mode::Train => {
            let inv = T::one() / T::from_usize(count).expect("count fits");
            let mut mean = vec![T::zero(); channels];
            let mut var = vec![T::zero(); channels];
            for c in 0..channels {
                let mut s = T::zero();
                for n in 0..batch {
                    s += xd[at(n, c)..at(n, c) + inner].iter().copied().sum();
                }
                let mu = s * inv;
                let mut q = T::zero();
                for n in 0..batch {
                    q += xd[at(n, c)..at(n, c) + inner].iter().map(|&v| (v - mu) * (v - mu)).sum();
                }
                mean[c] = mu;
                var[c] = q * inv;
            }
            let m = T::from_f64_lossy(config.momentum);
            for c in 0..channels {
                let rm = &mut stats.mean.data_mut()[c];
                *rm = (T::one() - m) * *rm + m * mean[c];
                let rv = &mut stats.var.data_mut()[c];
                *rv = (T::one() - m) * *rv + m * var[c];
            }
            (mean, var)
        }
        Mode::Eval => (stats.mean.data().to_vec(), stats.var.data().to_vec()),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (gd, bd) = (gamma.value().data(), beta.value().data());
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for n in 0..batch {
        for c in 0..channels {
            let r = at(n, c)..at(n, c) + inner;
            for ((h, o), &v) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&xd[r]) {
                *h = (v - mean[c]) * inv_std[c];
                *o = *h * gd[c] + bd[c];
            }
        }
    }

    let out = Tensor::new(dims.to_vec(), out)?;
    let gamma_v = gamma.value_rc();
    let shape = dims.to_vec();
    Ok(x.tape().op(out, &[x, gamma, beta], move |g, needs| {
        let gd = g.data();
        let gam = gamma_v.data();
        let mut dgamma = vec![T::zero(); channels];
        let mut dbeta = vec![T::zero(); channels];
        for n in 0..batch {
            for c in 0..channels {
                let r = at(n, c)..at(n, c) + inner;
                for (&gv, &h) in gd[r.clone()].iter().zip(&xhat[r]) {
                    dgamma[c] += gv * h;
                    dbeta[c] += gv;
                }
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = vec![T::zero(); gd.len()];
            let m = T::from_usize(count).expect("count fits");
            for c in 0..channels {
                let scale = gam[c] * inv_std[c];
                for n in 0..batch {
                    let r = at(n, c)..at(n, c) + inner;
                    for ((d, &gv), &h) in dx[r.clone()].iter_mut().zip(&gd[r.clone()]).zip(&xhat[r]) {
                        *d = match mode {
                            // gradient through the batch mean and variance
                            Mode::Train => scale * (gv - (dbeta[c] + h * dgamma[c]) / m),
                            Mode::Eval => scale * gv,
                        };
                    }
                }
            }
            Tensor::new(shape.clone(), dx).expect("dx shape")
        });
        Ok(vec![
            dx,
            Some(Tensor::new([channels], dgamma)?),
            Some(Tensor::new([channels], dbeta)?),
        ])
    }))
}
