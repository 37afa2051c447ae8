use crate::autodiff::{Tape, Var};
use crate::bam::Bam;
use crate::error::{Error, Result};
use crate::models::spec::{Attention, BlockType, ModelSpec};
use crate::nn::{
    global_avg_pool, max_pool2d, BatchNorm, Conv2d, ConvGeometry, Init, Linear, Mode, ParamId, ParamKind, ParamStore, Session,
};
use crate::rng::{self, Rng};
use crate::tensor::{Scalar, Tensor};

/// Initialization choices for [`Model::build_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub seed: u64,
    pub attention_init: Init,
    pub classifier_init: Init,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            seed: 0,
            attention_init: Init::HeNormal,
            classifier_init: Init::HeNormal,
        }
    }
}

#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        conv_name: &str,
        bn_name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let geometry = ConvGeometry::new(stride, kernel / 2, 1);
        Ok(ConvBn {
            conv: Conv2d::new(store, conv_name, cin, cout, kernel, geometry, false, Init::HeNormal, rng)?,
            bn: BatchNorm::new(store, bn_name, cout)?,
        })
    }

    fn forward<'t, T: Scalar>(&self, s: &mut Session<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.conv.forward(s, x)?;
        self.bn.forward(s, &h)
    }
}

#[derive(Debug, Clone)]
struct Block {
    kind: BlockType,
    layers: Vec<ConvBn>,
    shortcut: Option<ConvBn>,
    attention: Option<Bam>,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: BlockType,
        cin: usize,
        cout: usize,
        stride: usize,
        attention: Option<(&str, &ModelSpec, Init)>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let plan: Vec<(usize, usize, usize, usize)> = match kind {
            BlockType::Basic | BlockType::Plain => vec![(cin, cout, 3, stride), (cout, cout, 3, 1)],
            BlockType::Bottleneck => {
                let inner = cout / 4;
                vec![(cin, inner, 1, stride), (inner, inner, 3, 1), (inner, cout, 1, 1)]
            }
        };
        let mut layers = Vec::with_capacity(plan.len());
        for (i, (a, b, k, st)) in plan.into_iter().enumerate() {
            let conv = format!("{name}.conv{}", i + 1);
            let bn = format!("{name}.bn{}", i + 1);
            layers.push(ConvBn::new(store, &conv, &bn, a, b, k, st, rng)?);
        }
        let attention = attention
            .map(|(prefix, spec, init)| Bam::new(store, prefix, cout, spec.bam, init, rng))
            .transpose()?;
        let shortcut = if kind != BlockType::Plain && (stride != 1 || cin != cout) {
            let conv = format!("{name}.downsample.conv");
            let bn = format!("{name}.downsample.bn");
            Some(ConvBn::new(store, &conv, &bn, cin, cout, 1, stride, rng)?)
        } else {
            None
        };
        Ok(Block {
            kind,
            layers,
            shortcut,
            attention,
        })
    }

    fn forward<'t, T: Scalar>(
        &self,
        s: &mut Session<'t, '_, T>,
        x: &Var<'t, T>,
        maps: &mut Vec<AttentionMaps<'t, T>>,
    ) -> Result<Var<'t, T>> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(s, &h)?;
            if i < last {
                h = h.relu();
            }
        }
        if let Some(bam) = &self.attention {
            h = apply_attention(bam, s, &h, maps)?;
        }
        if self.kind != BlockType::Plain {
            let identity = match &self.shortcut {
                Some(sc) => sc.forward(s, x)?,
                None => x.clone(),
            };
            h = h.add(&identity)?;
        }
        Ok(h.relu())
    }
}

#[derive(Debug, Clone)]
enum Junction {
    None,
    Attention(Bam),
    Extra(Block),
}

#[derive(Debug, Clone)]
struct Stage {
    blocks: Vec<Block>,
    junction: Junction,
}

#[derive(Debug, Clone)]
struct Network {
    stem: ConvBn,
    stem_pool: bool,
    stages: Vec<Stage>,
    head: Linear,
}

/// Attention maps produced by one module during a forward pass.
#[derive(Debug, Clone)]
pub struct AttentionMaps<'t, T: Scalar> {
    /// Parameter prefix of the module, e.g. `bam.1`.
    pub name: String,
    pub channel_logits: Option<Var<'t, T>>,
    pub spatial_logits: Option<Var<'t, T>>,
    pub attention: Var<'t, T>,
}

/// Everything a forward pass produced on the tape.
pub struct Forward<'t, T: Scalar> {
    pub logits: Var<'t, T>,
    pub attention: Vec<AttentionMaps<'t, T>>,
    /// Weights bound as tape leaves, for reading gradients.
    pub bindings: Vec<(ParamId, Var<'t, T>)>,
}

fn apply_attention<'t, T: Scalar>(
    bam: &Bam,
    s: &mut Session<'t, '_, T>,
    h: &Var<'t, T>,
    maps: &mut Vec<AttentionMaps<'t, T>>,
) -> Result<Var<'t, T>> {
    let out = bam.forward(s, h)?;
    maps.push(AttentionMaps {
        name: bam.prefix.clone(),
        channel_logits: out.channel_logits,
        spatial_logits: out.spatial_logits,
        attention: out.attention,
    });
    Ok(out.refined)
}

/// A built backbone: layer tree, parameter registry and mode flag.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    spec: ModelSpec,
    net: Network,
    store: ParamStore<T>,
    mode: Mode,
}

impl<T: Scalar> Model<T> {
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        Self::build_with(
            spec,
            BuildOptions {
                seed,
                ..Default::default()
            },
        )
    }

    pub fn build_with(spec: &ModelSpec, options: BuildOptions) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::seeded(options.seed);
        let mut store = ParamStore::new();
        let r = &mut rng;
        let stem = ConvBn::new(
            &mut store,
            "stem.conv",
            "stem.bn",
            spec.input_channels,
            spec.stem.channels,
            spec.stem.kernel,
            spec.stem.stride,
            r,
        )?;
        let mut cin = spec.stem.channels;
        let mut stages = Vec::with_capacity(spec.stages.len());
        let final_stage = spec.stages.len() - 1;
        for (i, st) in spec.stages.iter().enumerate() {
            let mut blocks = Vec::with_capacity(st.blocks);
            for j in 0..st.blocks {
                let name = format!("layer{}.{j}", i + 1);
                let prefix = format!("bam.layer{}.{j}", i + 1);
                let attention = (spec.attention == Attention::PerBlock).then_some((prefix.as_str(), spec, options.attention_init));
                let stride = if j == 0 { st.stride } else { 1 };
                blocks.push(Block::new(&mut store, &name, st.block, cin, st.channels, stride, attention, r)?);
                cin = st.channels;
            }
            let junction = match spec.attention {
                _ if i == final_stage => Junction::None,
                Attention::Bottleneck => {
                    let prefix = format!("bam.{}", i + 1);
                    Junction::Attention(Bam::new(&mut store, &prefix, st.channels, spec.bam, options.attention_init, r)?)
                }
                Attention::ExtraBlock => {
                    let name = format!("layer{}.extra", i + 1);
                    Junction::Extra(Block::new(&mut store, &name, st.block, cin, cin, 1, None, r)?)
                }
                Attention::None | Attention::PerBlock => Junction::None,
            };
            stages.push(Stage { blocks, junction });
        }
        let head = Linear::new(&mut store, "fc", cin, spec.num_classes, options.classifier_init, r)?;
        Ok(Model {
            spec: spec.clone(),
            net: Network {
                stem,
                stem_pool: spec.stem.max_pool,
                stages,
                head,
            },
            store,
            mode: Mode::Train,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Learnable scalars (batch-norm running statistics excluded).
    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Number of attention modules in the network.
    pub fn attention_modules(&self) -> usize {
        self.net
            .stages
            .iter()
            .map(|st| {
                let inner = st.blocks.iter().filter(|b| b.attention.is_some()).count();
                inner + usize::from(matches!(st.junction, Junction::Attention(_)))
            })
            .sum()
    }

    /// Runs the network on `x: [N, C, H, W]` in the model's current mode.
    pub fn forward<'t>(&mut self, tape: &'t Tape<T>, x: &Var<'t, T>) -> Result<Forward<'t, T>> {
        match x.dims() {
            [_, c, _, _] if *c == self.spec.input_channels => {}
            dims => {
                return Err(Error::shape(format!(
                    "model `{}` expects [N, {}, H, W] input, got {dims:?}",
                    self.spec.name, self.spec.input_channels
                )))
            }
        }
        let net = &self.net;
        let mut s = Session::new(tape, &mut self.store, self.mode);
        let mut maps = Vec::new();
        let mut h = net.stem.forward(&mut s, x)?.relu();
        if net.stem_pool {
            h = max_pool2d(&h, 3, 2, 1)?;
        }
        for stage in &net.stages {
            for block in &stage.blocks {
                h = block.forward(&mut s, &h, &mut maps)?;
            }
            h = match &stage.junction {
                Junction::None => h,
                Junction::Attention(bam) => apply_attention(bam, &mut s, &h, &mut maps)?,
                Junction::Extra(block) => block.forward(&mut s, &h, &mut maps)?,
            };
        }
        let n = h.dims()[0];
        let c = h.dims()[1];
        let pooled = global_avg_pool(&h)?.reshape([n, c])?;
        let logits = net.head.forward(&mut s, &pooled)?;
        Ok(Forward {
            logits,
            attention: maps,
            bindings: s.into_bindings(),
        })
    }

    /// Logits without recording gradients.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        tape.no_grad(|| {
            let xv = tape.constant(x.clone());
            Ok(self.forward(&tape, &xv)?.logits.value().clone())
        })
    }

    /// Sets every attention weight and bias (not the batch-norm affine
    /// parameters) to zero, which makes each module output `M = 0.5`.
    pub fn zero_attention(&mut self) {
        let ids: Vec<ParamId> = self
            .store
            .iter()
            .filter(|(_, e)| e.kind == ParamKind::Weight && e.name.starts_with("bam.") && !e.name.contains(".bn."))
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            self.store.get_mut(id).fill(T::zero());
        }
    }
}
