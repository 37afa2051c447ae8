use crate::autodiff::Var;
use crate::error::Result;
use crate::nn::conv::{conv2d, ConvGeometry};
use crate::nn::functional::linear;
use crate::nn::norm::{batch_norm, BatchNormConfig, RunningStats};
use crate::nn::params::{ParamId, ParamKind, ParamStore, Session};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Weight initialization. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    #[default]
    HeNormal,
    Zeros,
}

impl Init {
    fn draw<T: Scalar>(self, dims: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Result<Tensor<T>> {
        match self {
            Init::HeNormal => {
                let std = T::from_f64_lossy((2.0 / fan_in as f64).sqrt());
                Tensor::randn(dims, std, rng)
            }
            Init::Zeros => Tensor::zeros(dims),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub geometry: ConvGeometry,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geometry: ConvGeometry,
        bias: bool,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let w = init.draw(vec![out_channels, in_channels, kernel, kernel], fan_in, rng)?;
        let weight = store.insert(format!("{name}.weight"), ParamKind::Weight, w)?;
        let bias = if bias {
            Some(store.insert(format!("{name}.bias"), ParamKind::Weight, Tensor::zeros([out_channels])?)?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            geometry,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, s: &mut Session<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        conv2d(x, &w, b.as_ref(), self.geometry)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub config: BatchNormConfig,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: store.insert(format!("{name}.weight"), ParamKind::Weight, Tensor::ones([channels])?)?,
            beta: store.insert(format!("{name}.bias"), ParamKind::Weight, Tensor::zeros([channels])?)?,
            running_mean: store.insert(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros([channels])?)?,
            running_var: store.insert(format!("{name}.running_var"), ParamKind::Buffer, Tensor::ones([channels])?)?,
            channels,
            config: BatchNormConfig::default(),
        })
    }

    pub fn forward<'t, T: Scalar>(&self, s: &mut Session<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        let mode = s.mode();
        let (mean, var) = s.buffer_pair_mut(self.running_mean, self.running_var);
        batch_norm(x, &gamma, &beta, RunningStats { mean, var }, mode, self.config)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w = init.draw(vec![out_features, in_features], in_features, rng)?;
        Ok(Linear {
            weight: store.insert(format!("{name}.weight"), ParamKind::Weight, w)?,
            bias: store.insert(format!("{name}.bias"), ParamKind::Weight, Tensor::zeros([out_features])?)?,
            in_features,
            out_features,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, s: &mut Session<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        linear(x, &w, &b)
    }
}
