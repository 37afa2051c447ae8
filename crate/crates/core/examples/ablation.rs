//! A miniature ablation grid on synthetic data: reduction ratio and the
//! placement comparison, a few steps per cell.

use bam::train::{ablation_grid, format_table, AblationAxis, DataSource, Schedule, TrainConfig, TrainData};

pub fn main() -> bam::Result<()> {
    let base = TrainConfig {
        name: "mini".into(),
        model: "small".into(),
        dataset: DataSource::Synthetic,
        synthetic_train: 64,
        synthetic_test: 32,
        batch_size: 8,
        epochs: 10,
        max_steps: Some(20),
        lr: 0.05,
        schedule: Schedule::Constant,
        ..Default::default()
    };
    let data = TrainData::load(&base)?;
    let axes = [AblationAxis::Reduction(vec![4, 8, 16, 32]), AblationAxis::Placement];
    let results = ablation_grid(&base, &axes, &data)?;
    print!("{}", format_table(&results, data.num_classes()));
    Ok(())
}
