//! Channel and spatial attention applied at a feature map.
//!
//! Given a feature map `F: [N, C, H, W]` the module computes
//!
//! ```text
//! Mc = BN(W1 · relu(W0 · avgpool(F) + b0) + b1)              [N, C, 1, 1]
//! Ms = BN(f3(relu(f2(relu(f1(relu(f0(F))))))))               [N, 1, H, W]
//! M  = sigmoid(Mc ⊕ Ms)                                      [N, C, H, W]
//! F' = F + F ⊙ M
//! ```
//!
//! where `f0` and `f3` are 1x1 convolutions, `f1` and `f2` are 3x3
//! convolutions with dilation `d` and padding `d`, both branches narrow to
//! `C / r` channels, and `⊕` is the configured combine operator applied on
//! broadcast operands.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, BatchNorm, Conv2d, ConvGeometry, Init, Linear, ParamStore, Session};
use crate::rng::Rng;
use crate::tensor::Scalar;

/// How the channel and spatial logits merge before the sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum Combine {
    #[default]
    Sum,
    Prod,
    Max,
}

impl Combine {
    pub const ALL: [Combine; 3] = [Combine::Max, Combine::Prod, Combine::Sum];
}

impl fmt::Display for Combine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Combine::Sum => "sum",
            Combine::Prod => "prod",
            Combine::Max => "max",
        })
    }
}

impl FromStr for Combine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(Combine::Sum),
            "prod" | "product" => Ok(Combine::Prod),
            "max" => Ok(Combine::Max),
            other => Err(Error::Config(format!("unknown combine strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BamConfig {
    pub reduction: usize,
    pub dilation: usize,
    pub combine: Combine,
    pub channel_branch: bool,
    pub spatial_branch: bool,
}

impl Default for BamConfig {
    fn default() -> Self {
        BamConfig {
            reduction: 16,
            dilation: 4,
            combine: Combine::Sum,
            channel_branch: true,
            spatial_branch: true,
        }
    }
}

impl BamConfig {
    /// Checks the configuration for a module attached at `channels`.
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.reduction == 0 || self.dilation == 0 {
            return Err(Error::Config("reduction ratio and dilation must be positive".into()));
        }
        if !self.channel_branch && !self.spatial_branch {
            return Err(Error::Config("at least one attention branch must be enabled".into()));
        }
        if !channels.is_multiple_of(self.reduction) {
            return Err(Error::Config(format!(
                "reduction ratio {} does not divide {channels} channels",
                self.reduction
            )));
        }
        Ok(())
    }

    pub fn hidden(&self, channels: usize) -> usize {
        channels / self.reduction
    }
}

#[derive(Debug, Clone)]
pub struct ChannelBranch {
    pub fc0: Linear,
    pub fc1: Linear,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone)]
pub struct SpatialBranch {
    pub reduce: Conv2d,
    pub dilated: [Conv2d; 2],
    pub collapse: Conv2d,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone)]
pub struct Bam {
    pub prefix: String,
    pub config: BamConfig,
    pub channels: usize,
    pub channel: Option<ChannelBranch>,
    pub spatial: Option<SpatialBranch>,
}

/// Result of one module application, with every intermediate map kept for
/// inspection.
#[derive(Debug, Clone)]
pub struct BamOutput<'t, T: Scalar> {
    pub refined: Var<'t, T>,
    pub attention: Var<'t, T>,
    pub channel_logits: Option<Var<'t, T>>,
    pub spatial_logits: Option<Var<'t, T>>,
}

impl Bam {
    /// Registers the module's parameters under `prefix` in `store`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        config: BamConfig,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate(channels)?;
        let hidden = config.hidden(channels);
        let channel = if config.channel_branch {
            let p = format!("{prefix}.channel");
            Some(ChannelBranch {
                fc0: Linear::new(store, &format!("{p}.fc0"), channels, hidden, init, rng)?,
                fc1: Linear::new(store, &format!("{p}.fc1"), hidden, channels, init, rng)?,
                bn: BatchNorm::new(store, &format!("{p}.bn"), channels)?,
            })
        } else {
            None
        };
        let spatial = if config.spatial_branch {
            let p = format!("{prefix}.spatial");
            let d = config.dilation;
            let dilated = ConvGeometry::same(3, d);
            Some(SpatialBranch {
                reduce: Conv2d::new(
                    store,
                    &format!("{p}.reduce"),
                    channels,
                    hidden,
                    1,
                    ConvGeometry::default(),
                    true,
                    init,
                    rng,
                )?,
                dilated: [
                    Conv2d::new(store, &format!("{p}.dilated0"), hidden, hidden, 3, dilated, true, init, rng)?,
                    Conv2d::new(store, &format!("{p}.dilated1"), hidden, hidden, 3, dilated, true, init, rng)?,
                ],
                collapse: Conv2d::new(
                    store,
                    &format!("{p}.collapse"),
                    hidden,
                    1,
                    1,
                    ConvGeometry::default(),
                    true,
                    init,
                    rng,
                )?,
                bn: BatchNorm::new(store, &format!("{p}.bn"), 1)?,
            })
        } else {
            None
        };
        Ok(Bam {
            prefix: prefix.to_string(),
            config,
            channels,
            channel,
            spatial,
        })
    }

    fn check_input(&self, dims: &[usize]) -> Result<()> {
        match dims {
            [_, c, _, _] if *c == self.channels => Ok(()),
            _ => Err(Error::shape(format!(
                "attention module for {} channels applied to {dims:?}",
                self.channels
            ))),
        }
    }

    /// Pre-sigmoid channel logits `[N, C, 1, 1]`.
    pub fn channel_attention<'t, T: Scalar>(&self, s: &mut Session<'t, '_, T>, f: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_input(f.dims())?;
        let branch = self
            .channel
            .as_ref()
            .ok_or_else(|| Error::Contract("channel branch is disabled".into()))?;
        let (n, c) = (f.dims()[0], f.dims()[1]);
        let pooled = global_avg_pool(f)?.reshape([n, c])?;
        let hidden = branch.fc0.forward(s, &pooled)?.relu();
        let logits = branch.fc1.forward(s, &hidden)?;
        branch.bn.forward(s, &logits)?.reshape([n, c, 1, 1])
    }

    /// Pre-sigmoid spatial logits `[N, 1, H, W]`.
    pub fn spatial_attention<'t, T: Scalar>(&self, s: &mut Session<'t, '_, T>, f: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_input(f.dims())?;
        let branch = self
            .spatial
            .as_ref()
            .ok_or_else(|| Error::Contract("spatial branch is disabled".into()))?;
        let mut h = branch.reduce.forward(s, f)?.relu();
        for conv in &branch.dilated {
            h = conv.forward(s, &h)?.relu();
        }
        let collapsed = branch.collapse.forward(s, &h)?;
        branch.bn.forward(s, &collapsed)
    }

    pub fn forward<'t, T: Scalar>(&self, s: &mut Session<'t, '_, T>, f: &Var<'t, T>) -> Result<BamOutput<'t, T>> {
        let channel_logits = self.channel.is_some().then(|| self.channel_attention(s, f)).transpose()?;
        let spatial_logits = self.spatial.is_some().then(|| self.spatial_attention(s, f)).transpose()?;
        let attention = match (&channel_logits, &spatial_logits) {
            (Some(mc), Some(ms)) => combine(mc, ms, self.config.combine)?,
            (Some(single), None) | (None, Some(single)) => single.sigmoid().broadcast_to(f.value().shape())?,
            (None, None) => unreachable!("validated at construction"),
        };
        let refined = refine(f, &attention)?;
        Ok(BamOutput {
            refined,
            attention,
            channel_logits,
            spatial_logits,
        })
    }

    /// Learnable scalars registered by this module.
    pub fn param_count(&self, store: &ParamStore<impl Scalar>) -> usize {
        let prefix = format!("{}.", self.prefix);
        store
            .weights()
            .filter(|(_, e)| e.name.starts_with(&prefix))
            .map(|(_, e)| e.value().numel())
            .sum()
    }
}

/// `sigmoid(mc ⊕ ms)` with both operands broadcast to `[N, C, H, W]`.
pub fn combine<'t, T: Scalar>(mc: &Var<'t, T>, ms: &Var<'t, T>, strategy: Combine) -> Result<Var<'t, T>> {
    let merged = match strategy {
        Combine::Sum => mc.add(ms)?,
        Combine::Prod => mc.mul(ms)?,
        Combine::Max => mc.maximum(ms)?,
    };
    Ok(merged.sigmoid())
}

/// `F' = F + F ⊙ M` for equally shaped `F` and `M`.
pub fn refine<'t, T: Scalar>(f: &Var<'t, T>, m: &Var<'t, T>) -> Result<Var<'t, T>> {
    if f.dims() != m.dims() {
        return Err(Error::shape(format!(
            "refine needs equal shapes, got {:?} and {:?}",
            f.dims(),
            m.dims()
        )));
    }
    f.add(&f.mul(m)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::nn::Mode;
    use crate::rng;
    use crate::tensor::Tensor;

    fn module(channels: usize, config: BamConfig, init: Init) -> (ParamStore<f64>, Bam) {
        let mut store = ParamStore::new();
        let bam = Bam::new(&mut store, "bam", channels, config, init, &mut rng::seeded(0)).unwrap();
        (store, bam)
    }

    #[test]
    fn parameter_count_at_256_channels() {
        let (store, bam) = module(256, BamConfig::default(), Init::HeNormal);
        assert_eq!(store.param_count(), 17_747);
        assert_eq!(bam.param_count(&store), 17_747);
    }

    #[test]
    fn config_validation() {
        assert!(BamConfig::default().validate(24).is_err());
        let none = BamConfig {
            channel_branch: false,
            spatial_branch: false,
            ..Default::default()
        };
        assert!(none.validate(32).is_err());
        assert!(BamConfig::default().validate(32).is_ok());
        assert_eq!("PROD".parse::<Combine>().unwrap(), Combine::Prod);
        assert!("mean".parse::<Combine>().is_err());
    }

    #[test]
    fn zero_weights_give_half_attention() {
        let cfg = BamConfig {
            reduction: 4,
            ..Default::default()
        };
        let (mut store, bam) = module(8, cfg, Init::Zeros);
        let tape = Tape::new();
        let mut s = Session::new(&tape, &mut store, Mode::Train);
        let f = tape.constant(Tensor::randn([2, 8, 5, 6], 1.0, &mut rng::seeded(1)).unwrap());
        let out = bam.forward(&mut s, &f).unwrap();
        assert_eq!(out.channel_logits.as_ref().unwrap().dims(), &[2, 8, 1, 1]);
        assert_eq!(out.spatial_logits.as_ref().unwrap().dims(), &[2, 1, 5, 6]);
        assert!(out.channel_logits.unwrap().value().data().iter().all(|&v| v == 0.0));
        assert!(out.attention.value().data().iter().all(|&v| v == 0.5));
        let expect = f.value().scale(1.5);
        assert_eq!(out.refined.value(), &expect);
    }

    #[test]
    fn combine_examples() {
        let tape = Tape::<f64>::new();
        let zc = tape.constant(Tensor::zeros([1, 2, 1, 1]).unwrap());
        let zs = tape.constant(Tensor::zeros([1, 1, 2, 2]).unwrap());
        for strategy in [Combine::Sum, Combine::Prod] {
            let m = combine(&zc, &zs, strategy).unwrap();
            assert_eq!(m.dims(), &[1, 2, 2, 2]);
            assert!(m.value().data().iter().all(|&v| v == 0.5));
        }
        let one = tape.constant(Tensor::full([1, 1, 1, 1], 1.0).unwrap());
        let two = tape.constant(Tensor::full([1, 1, 1, 1], 2.0).unwrap());
        let m = combine(&one, &two, Combine::Max).unwrap().value().item().unwrap();
        assert!((m - 0.8807970779778823).abs() < 1e-15);
    }

    #[test]
    fn refine_examples() {
        let tape = Tape::<f64>::new();
        let f = tape.constant(Tensor::new([2], vec![2.0, -4.0]).unwrap());
        let m = tape.constant(Tensor::new([2], vec![0.25, 0.75]).unwrap());
        assert_eq!(refine(&f, &m).unwrap().value().data(), &[2.5, -7.0]);
        let zero = tape.constant(Tensor::zeros([2]).unwrap());
        assert_eq!(refine(&f, &zero).unwrap().value(), f.value());
        let wrong = tape.constant(Tensor::zeros([1, 2]).unwrap());
        assert!(refine(&f, &wrong).is_err());
    }

    #[test]
    fn disabled_spatial_branch_uses_channel_attention_only() {
        let cfg = BamConfig {
            reduction: 2,
            spatial_branch: false,
            ..Default::default()
        };
        let (mut store, bam) = module(4, cfg, Init::HeNormal);
        let tape = Tape::new();
        let mut s = Session::new(&tape, &mut store, Mode::Train);
        let f = tape.constant(Tensor::randn([3, 4, 3, 3], 1.0, &mut rng::seeded(2)).unwrap());
        let out = bam.forward(&mut s, &f).unwrap();
        assert!(out.spatial_logits.is_none());
        let mc = out.channel_logits.unwrap();
        let expect = mc.value().sigmoid().broadcast_to(f.value().shape()).unwrap();
        assert_eq!(out.attention.value(), &expect);
        assert!(bam.spatial_attention(&mut s, &f).is_err());
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let cfg = BamConfig {
            reduction: 2,
            ..Default::default()
        };
        let (mut store, bam) = module(4, cfg, Init::HeNormal);
        let tape = Tape::new();
        let mut s = Session::new(&tape, &mut store, Mode::Train);
        let f = tape.constant(Tensor::zeros([1, 6, 3, 3]).unwrap());
        assert!(bam.forward(&mut s, &f).is_err());
    }
}
