//! Saves a partly trained model, restores it into a fresh one and checks
//! that predictions and a resumed run match bit for bit.

use bam::bam::BamConfig;
use bam::models::Model;
use bam::train::{DataSource, Schedule, TrainConfig, TrainData, Trainer};

fn config() -> TrainConfig {
    TrainConfig {
        name: "checkpoint".into(),
        model: "tiny".into(),
        dataset: DataSource::Synthetic,
        synthetic_train: 128,
        synthetic_test: 64,
        batch_size: 32,
        epochs: 4,
        lr: 0.05,
        schedule: Schedule::Constant,
        bam: BamConfig {
            reduction: 4,
            ..Default::default()
        },
        ..Default::default()
    }
}

pub fn main() -> bam::Result<()> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("tiny.ckpt");
    let config = config();
    let data = TrainData::load(&config)?;

    let mut straight = Trainer::new(config.clone(), data.num_classes())?;
    for _ in 0..config.epochs {
        straight.train_epoch(&data)?;
    }

    let mut first = Trainer::new(config.clone(), data.num_classes())?;
    first.train_epoch(&data)?;
    first.train_epoch(&data)?;
    first.save(&path)?;
    println!("saved after epoch {} ({} bytes)", first.epoch, std::fs::metadata(&path)?.len());

    let spec = config.spec(data.num_classes())?;
    let mut restored = Model::<f32>::build(&spec, 99)?;
    restored.load_with_state(&path)?;
    let x = bam::tensor::Tensor::randn([4, 3, 32, 32], 1.0, &mut bam::rng::seeded(1))?;
    first.model.set_mode(bam::nn::Mode::Eval);
    restored.set_mode(bam::nn::Mode::Eval);
    println!(
        "restored predictions identical: {}",
        first.model.predict(&x)? == restored.predict(&x)?
    );

    let mut resumed = Trainer::new(config.clone(), data.num_classes())?;
    resumed.resume(&path)?;
    while !resumed.finished(&data) {
        resumed.train_epoch(&data)?;
    }
    let same = straight.model.state_entries() == resumed.model.state_entries();
    println!("4 straight epochs == 2 + checkpoint + 2 resumed: {same}");
    Ok(())
}
