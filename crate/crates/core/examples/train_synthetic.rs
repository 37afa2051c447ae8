//! Trains the tiny backbone with attention modules on the synthetic
//! two-class blobs until the training error drops below 5%.

use std::time::Instant;

use bam::bam::BamConfig;
use bam::train::{evaluate, DataSource, Schedule, TrainConfig, TrainData, Trainer};

pub fn main() -> bam::Result<()> {
    let config = TrainConfig {
        name: "synthetic".into(),
        model: "tiny".into(),
        dataset: DataSource::Synthetic,
        synthetic_train: 512,
        synthetic_test: 256,
        batch_size: 32,
        epochs: 125,
        max_steps: Some(2000),
        lr: 0.05,
        schedule: Schedule::Constant,
        bam: BamConfig {
            reduction: 4,
            ..Default::default()
        },
        ..Default::default()
    };
    let data = TrainData::load(&config)?;
    let mut trainer = Trainer::new(config, data.num_classes())?;
    let start = Instant::now();
    while !trainer.finished(&data) {
        let epoch = trainer.train_epoch(&data)?;
        let train_error = evaluate(&mut trainer.model, &data.train, &data.norm, 128)?;
        println!(
            "epoch {:>3}  step {:>4}  loss {:.4}  train error {:>5.2}%  test error {:>5.2}%  {:.1}s",
            epoch.epoch,
            epoch.steps,
            epoch.train_loss,
            train_error,
            epoch.test_error,
            start.elapsed().as_secs_f64()
        );
        if train_error < 5.0 {
            break;
        }
    }
    Ok(())
}
