use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bam::BamConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{Attention, ModelSpec};

/// Learning-rate schedule over training progress `t = step / total`.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// Multiply by `gamma` at each milestone fraction.
    Step {
        milestones: Vec<f64>,
        gamma: f64,
    },
    Cosine,
    Constant,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Step {
            milestones: vec![0.5, 0.75],
            gamma: 0.1,
        }
    }
}

impl Schedule {
    pub fn factor(&self, step: usize, total: usize) -> f64 {
        let t = if total == 0 { 0.0 } else { step as f64 / total as f64 };
        match self {
            Schedule::Step { milestones, gamma } => gamma.powi(milestones.iter().filter(|&&m| t >= m).count() as i32),
            Schedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos()),
            Schedule::Constant => 1.0,
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Step { milestones, gamma } => {
                let ms: Vec<String> = milestones.iter().map(|m| m.to_string()).collect();
                write!(f, "step:{}:{gamma}", ms.join(","))
            }
            Schedule::Cosine => f.write_str("cosine"),
            Schedule::Constant => f.write_str("constant"),
        }
    }
}

impl FromStr for Schedule {
    type Err = Error;

    /// `step`, `step:<fractions>:<gamma>` (e.g. `step:0.5,0.75:0.1`),
    /// `cosine` or `constant`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad schedule `{s}`"));
        match s {
            "step" => return Ok(Schedule::default()),
            "cosine" => return Ok(Schedule::Cosine),
            "constant" => return Ok(Schedule::Constant),
            _ => {}
        }
        let rest = s.strip_prefix("step:").ok_or_else(bad)?;
        let (ms, gamma) = rest.split_once(':').ok_or_else(bad)?;
        let milestones = ms
            .split(',')
            .map(|m| m.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let gamma: f64 = gamma.trim().parse().map_err(|_| bad())?;
        if milestones.iter().any(|m| !(0.0..=1.0).contains(m)) || gamma <= 0.0 {
            return Err(bad());
        }
        Ok(Schedule::Step { milestones, gamma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Cifar(Dataset),
    Synthetic,
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Cifar(d) => d.fmt(f),
            DataSource::Synthetic => f.write_str("synthetic"),
        }
    }
}

impl FromStr for DataSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(DataSource::Synthetic),
            other => other.parse().map(DataSource::Cifar),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub name: String,
    pub model: String,
    pub attention: Attention,
    pub bam: BamConfig,
    pub dataset: DataSource,
    pub data_dir: Option<PathBuf>,
    pub epochs: usize,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub seed: u64,
    pub augment: bool,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub checkpoint: Option<PathBuf>,
    /// Directory receiving `runs/<name>.log`.
    pub out: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            name: "run".into(),
            model: "resnet50-cifar".into(),
            attention: Attention::Bottleneck,
            bam: BamConfig::default(),
            dataset: DataSource::Cifar(Dataset::Cifar100),
            data_dir: None,
            epochs: 200,
            max_steps: None,
            batch_size: 128,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: Schedule::default(),
            seed: 0,
            augment: true,
            train_limit: None,
            test_limit: None,
            synthetic_train: 1024,
            synthetic_test: 256,
            checkpoint: None,
            out: None,
        }
    }
}

fn switch(value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("expected on/off, got `{other}`"))),
    }
}

fn optional(value: &str) -> Option<&str> {
    (!value.is_empty() && value != "none").then_some(value)
}

impl TrainConfig {
    /// Sets one option by its key; underscores and dashes are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
        }
        match key.as_str() {
            "name" => self.name = value.to_string(),
            "model" => self.model = value.to_string(),
            "bam" => self.attention = value.parse()?,
            "dilation" => self.bam.dilation = num(&key, value)?,
            "reduction" => self.bam.reduction = num(&key, value)?,
            "combine" => self.bam.combine = value.parse()?,
            "channel-branch" => self.bam.channel_branch = switch(value)?,
            "spatial-branch" => self.bam.spatial_branch = switch(value)?,
            "dataset" => self.dataset = value.parse()?,
            "data-dir" => self.data_dir = optional(value).map(PathBuf::from),
            "epochs" => self.epochs = num(&key, value)?,
            "max-steps" => self.max_steps = optional(value).map(|v| num(&key, v)).transpose()?,
            "batch-size" => self.batch_size = num(&key, value)?,
            "lr" => self.lr = num(&key, value)?,
            "momentum" => self.momentum = num(&key, value)?,
            "weight-decay" => self.weight_decay = num(&key, value)?,
            "schedule" => self.schedule = value.parse()?,
            "seed" => self.seed = num(&key, value)?,
            "augment" => self.augment = switch(value)?,
            "train-limit" => self.train_limit = optional(value).map(|v| num(&key, v)).transpose()?,
            "test-limit" => self.test_limit = optional(value).map(|v| num(&key, v)).transpose()?,
            "synthetic-train" => self.synthetic_train = num(&key, value)?,
            "synthetic-test" => self.synthetic_test = num(&key, value)?,
            "checkpoint" => self.checkpoint = optional(value).map(PathBuf::from),
            "out" => self.out = optional(value).map(PathBuf::from),
            other => return Err(Error::Config(format!("unknown option `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Every option as `(key, value)`, accepted back by [`TrainConfig::set`].
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let opt = |v: &Option<PathBuf>| v.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let num = |v: Option<usize>| v.map_or("none".to_string(), |n| n.to_string());
        let sw = |b: bool| if b { "on" } else { "off" }.to_string();
        vec![
            ("name", self.name.clone()),
            ("model", self.model.clone()),
            ("bam", self.attention.to_string()),
            ("dilation", self.bam.dilation.to_string()),
            ("reduction", self.bam.reduction.to_string()),
            ("combine", self.bam.combine.to_string()),
            ("channel-branch", sw(self.bam.channel_branch)),
            ("spatial-branch", sw(self.bam.spatial_branch)),
            ("dataset", self.dataset.to_string()),
            ("data-dir", opt(&self.data_dir)),
            ("epochs", self.epochs.to_string()),
            ("max-steps", num(self.max_steps)),
            ("batch-size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight-decay", self.weight_decay.to_string()),
            ("schedule", self.schedule.to_string()),
            ("seed", self.seed.to_string()),
            ("augment", sw(self.augment)),
            ("train-limit", num(self.train_limit)),
            ("test-limit", num(self.test_limit)),
            ("synthetic-train", self.synthetic_train.to_string()),
            ("synthetic-test", self.synthetic_test.to_string()),
            ("checkpoint", opt(&self.checkpoint)),
            ("out", opt(&self.out)),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be at least 1".into()));
        }
        self.spec(self.num_classes())?.validate()
    }

    pub fn num_classes(&self) -> usize {
        match self.dataset {
            DataSource::Cifar(d) => d.num_classes(),
            DataSource::Synthetic => 2,
        }
    }

    /// The model spec this configuration trains.
    pub fn spec(&self, num_classes: usize) -> Result<ModelSpec> {
        Ok(ModelSpec::named(&self.model)?
            .with_attention(self.attention)
            .with_bam(self.bam)
            .with_classes(num_classes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bam::Combine;

    #[test]
    fn defaults_follow_the_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.lr, c.momentum, c.weight_decay), (128, 0.1, 0.9, 5e-4));
        assert!((c.schedule.factor(49, 100) - 1.0).abs() < 1e-15);
        assert!((c.schedule.factor(50, 100) - 0.1).abs() < 1e-15);
        assert!((c.schedule.factor(80, 100) - 0.01).abs() < 1e-15);
        c.validate().unwrap();
    }

    #[test]
    fn file_then_overrides() {
        let mut c = TrainConfig::default();
        c.apply_text("# smoke\nmodel = tiny\ncombine=max\nchannel_branch = off\nlr = 0.05 # fast\n")
            .unwrap();
        c.set("lr", "0.2").unwrap();
        assert_eq!(c.model, "tiny");
        assert_eq!(c.bam.combine, Combine::Max);
        assert!(!c.bam.channel_branch);
        assert_eq!(c.lr, 0.2);
        assert!(c.apply_text("nonsense").is_err());
        assert!(c.set("colour", "red").is_err());
    }

    #[test]
    fn pairs_round_trip() {
        let mut c = TrainConfig {
            max_steps: Some(7),
            schedule: Schedule::Cosine,
            data_dir: Some("/tmp/x".into()),
            ..Default::default()
        };
        c.bam.reduction = 8;
        let mut back = TrainConfig::default();
        for (k, v) in c.to_pairs() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, c);
        let s: Schedule = "step:0.3,0.6:0.5".parse().unwrap();
        assert_eq!(s.to_string().parse::<Schedule>().unwrap(), s);
    }

    #[test]
    fn invalid_hyperparameters() {
        for (k, v) in [("lr", "0"), ("momentum", "1.0"), ("weight-decay", "-1"), ("reduction", "7")] {
            let mut c = TrainConfig::default();
            c.set(k, v).unwrap();
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{k}={v}");
        }
    }
}
