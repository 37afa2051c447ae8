//! Command-line surface of the `bam` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{ImageSet, Normalization, IMAGE_BYTES, IMAGE_SIDE};
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::models::Attention;
use crate::profiler;
use crate::tensor::Tensor;
use crate::train::{self, AblationAxis, TrainConfig, TrainData, Trainer};

#[derive(Debug, Parser)]
#[command(name = "bam", version, about = "Train, profile and inspect attention-augmented CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model, appending one record per epoch to `<out>/runs/<name>.log`.
    Train(RunArgs),
    /// Report top-1 test error of a checkpoint.
    Eval(RunArgs),
    /// Count parameters and multiply-accumulates.
    Profile(ProfileArgs),
    /// Finite-difference gradient checks in double precision.
    Gradcheck(GradcheckArgs),
    /// Train one model per ablation cell and print the table.
    Ablate(AblateArgs),
    /// Write attention maps of the first test images as PGM files.
    ExportAttention(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DatasetArg {
    Cifar10,
    Cifar100,
    Synthetic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BamArg {
    Off,
    Bottleneck,
    PerBlock,
    Convblock,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CombineArg {
    Sum,
    Prod,
    Max,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

/// Options shared by every subcommand that builds a model. Flags override
/// values from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Plain-text `key=value` file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetArg>,
    /// One of tiny, small, resnet18-cifar, resnet50-cifar, resnet50-imagenet.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, value_enum)]
    pub bam: Option<BamArg>,
    #[arg(long)]
    pub dilation: Option<usize>,
    #[arg(long)]
    pub reduction: Option<usize>,
    #[arg(long, value_enum)]
    pub combine: Option<CombineArg>,
    #[arg(long, value_enum)]
    pub channel_branch: Option<Switch>,
    #[arg(long, value_enum)]
    pub spatial_branch: Option<Switch>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// `step`, `step:0.5,0.75:0.1`, `cosine` or `constant`.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub augment: Option<Switch>,
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub test_limit: Option<usize>,
    #[arg(long)]
    pub synthetic_train: Option<usize>,
    #[arg(long)]
    pub synthetic_test: Option<usize>,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn value_name<V: ValueEnum>(v: V) -> String {
    v.to_possible_value().map(|p| p.get_name().to_string()).unwrap_or_default()
}

impl RunArgs {
    /// The file (if any) with every given flag applied on top.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let flags = [
            ("data-dir", path(&self.data_dir)),
            ("dataset", self.dataset.map(value_name)),
            ("model", self.model.clone()),
            ("bam", self.bam.map(value_name)),
            ("dilation", self.dilation.map(|v| v.to_string())),
            ("reduction", self.reduction.map(|v| v.to_string())),
            ("combine", self.combine.map(value_name)),
            ("channel-branch", self.channel_branch.map(value_name)),
            ("spatial-branch", self.spatial_branch.map(value_name)),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("max-steps", self.max_steps.map(|v| v.to_string())),
            ("batch-size", self.batch_size.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("momentum", self.momentum.map(|v| v.to_string())),
            ("weight-decay", self.weight_decay.map(|v| v.to_string())),
            ("schedule", self.schedule.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("augment", self.augment.map(value_name)),
            ("train-limit", self.train_limit.map(|v| v.to_string())),
            ("test-limit", self.test_limit.map(|v| v.to_string())),
            ("synthetic-train", self.synthetic_train.map(|v| v.to_string())),
            ("synthetic-test", self.synthetic_test.map(|v| v.to_string())),
            ("name", self.name.clone()),
            ("checkpoint", path(&self.checkpoint)),
            ("out", path(&self.out)),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Tsv,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Input side length; 224 for ImageNet-style models.
    #[arg(long, default_value_t = 32)]
    pub input: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Also print the per-layer difference against the model without attention.
    #[arg(long)]
    pub diff: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Axes such as `dilation`, `reduction=4,8`, `branches`, `combine`,
    /// `placement`; all of them when omitted.
    #[arg(long = "axis")]
    pub axes: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of test images to render.
    #[arg(long, default_value_t = 4)]
    pub images: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => train_command(&args),
        Command::Eval(args) => eval_command(&args),
        Command::Profile(args) => profile_command(&args),
        Command::Gradcheck(args) => gradcheck_command(&args),
        Command::Ablate(args) => ablate_command(&args),
        Command::ExportAttention(args) => export_command(&args),
    }
}

fn train_command(args: &RunArgs) -> Result<()> {
    let config = args.resolve()?;
    config.validate()?;
    let data = TrainData::load(&config)?;
    let (_, record) = train::train_with(&config, &data, |e| {
        println!(
            "epoch {:>3}  step {:>6}  loss {:.4}  train {:6.2}%  test {:6.2}%  {:.1}s",
            e.epoch, e.steps, e.train_loss, e.train_error, e.test_error, e.wall_time
        );
    })?;
    println!(
        "{}: {} params, {:.4} GMACs, final test error {}",
        record.name,
        record.params,
        record.macs as f64 / 1e9,
        record.final_test_error().map_or("-".into(), |e| format!("{e:.2}%"))
    );
    if let Some(out) = &config.out {
        println!("log: {}", train::log_path(out, &config.name).display());
    }
    Ok(())
}

fn checkpointed_model(config: &TrainConfig, num_classes: usize) -> Result<Trainer> {
    let mut trainer = Trainer::new(config.clone(), num_classes)?;
    if let Some(path) = &config.checkpoint {
        trainer.model.load_with_state(path)?;
    }
    Ok(trainer)
}

fn eval_command(args: &RunArgs) -> Result<()> {
    let config = args.resolve()?;
    if config.checkpoint.is_none() {
        return Err(Error::Usage("eval needs --checkpoint".into()));
    }
    let data = TrainData::load(&config)?;
    let mut trainer = checkpointed_model(&config, data.num_classes())?;
    let error = train::evaluate(&mut trainer.model, &data.test, &data.norm, config.batch_size)?;
    println!("top-1 error {error:.2}% on {} images", data.test.len());
    Ok(())
}

fn profile_command(args: &ProfileArgs) -> Result<()> {
    let config = args.run.resolve()?;
    // without an explicit dataset the model keeps its own head
    let classes = match args.run.dataset {
        Some(_) => config.num_classes(),
        None => crate::models::ModelSpec::named(&config.model)?.num_classes,
    };
    let spec = config.spec(classes)?;
    spec.validate()?;
    let input = [spec.input_channels, args.input, args.input];
    let report = profiler::profile(&spec, input)?;
    match args.format {
        Format::Text => println!("{report}"),
        Format::Tsv => print!("{}", report.to_tsv()),
    }
    if args.diff {
        let base = profiler::profile(&spec.clone().with_attention(Attention::None), input)?;
        let delta = profiler::diff(&base, &report);
        println!("overhead: {:+} params, {:+} MACs", delta.params(), delta.macs());
    }
    Ok(())
}

fn gradcheck_command(args: &GradcheckArgs) -> Result<()> {
    let mut results = diagnostics::layer_suite(args.seed, args.eps)?;
    results.extend(diagnostics::bam_suite(args.seed, args.eps)?);
    let mut failed = Vec::new();
    for r in &results {
        let ok = r.max_error < args.tolerance;
        println!("{:<24} {:.3e} {}", r.name, r.max_error, if ok { "ok" } else { "FAILED" });
        if !ok {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn ablate_command(args: &AblateArgs) -> Result<()> {
    let base = args.run.resolve()?;
    let axes = if args.axes.is_empty() {
        AblationAxis::standard()
    } else {
        args.axes.iter().map(|a| a.parse()).collect::<Result<_>>()?
    };
    let data = TrainData::load(&base)?;
    let results = train::ablation_grid(&base, &axes, &data)?;
    let table = train::format_table(&results, data.num_classes());
    print!("{table}");
    if let Some(out) = &base.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join(format!("{}-ablation.txt", base.name)), &table)?;
    }
    Ok(())
}

fn export_command(args: &ExportArgs) -> Result<()> {
    let config = args.run.resolve()?;
    let out = config
        .out
        .clone()
        .ok_or_else(|| Error::Usage("export-attention needs --out".into()))?;
    let data = TrainData::load(&config)?;
    let set = data.test.head(args.images);
    let mut trainer = checkpointed_model(&config, set.num_classes)?;
    let images = normalized(&set, &data.norm)?;
    for path in train::export_attention(&mut trainer.model, &images, &out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn normalized(set: &ImageSet, norm: &Normalization) -> Result<Tensor<f32>> {
    let per = IMAGE_BYTES;
    let mut data = vec![0.0f32; set.len() * per];
    for (i, chunk) in data.chunks_mut(per).enumerate() {
        norm.apply(set.image(i), chunk);
    }
    Tensor::new([set.len(), 3, IMAGE_SIDE, IMAGE_SIDE], data)
}
