//! Trains briefly, then writes each attention module's maps for a few
//! test images as PGM files and reads them back. Files go to
//! `BAM_ATTENTION_DIR`, or `bam-attention` under the temp dir.

use bam::bam::BamConfig;
use bam::data::{batches, BatchOptions};
use bam::train::{export_attention, parse_pgm, DataSource, Schedule, TrainConfig, TrainData, Trainer};

pub fn main() -> bam::Result<()> {
    let config = TrainConfig {
        name: "maps".into(),
        model: "tiny".into(),
        dataset: DataSource::Synthetic,
        synthetic_train: 256,
        synthetic_test: 32,
        batch_size: 32,
        epochs: 2,
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
    while !trainer.finished(&data) {
        trainer.train_epoch(&data)?;
    }
    let options = BatchOptions {
        batch_size: 2,
        shuffle: None,
        augment: false,
    };
    let batch = batches(&data.test, &data.norm, options)?.next().expect("test images");
    let out = std::env::var_os("BAM_ATTENTION_DIR")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("bam-attention"));
    for path in export_attention(&mut trainer.model, &batch.images, &out)? {
        let (w, h, pixels) = parse_pgm(&std::fs::read(&path)?)?;
        let mean = pixels.iter().map(|&p| p as f64).sum::<f64>() / pixels.len() as f64;
        println!("{}  {w}x{h}  mean {mean:.1}", path.display());
    }
    Ok(())
}
