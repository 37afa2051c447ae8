//! Parameter and MAC reports for the bundled model library.

use bam::models::{Attention, ModelSpec};
use bam::profiler::{diff, profile};

pub fn main() -> bam::Result<()> {
    for (name, side) in [("tiny", 32), ("small", 32), ("resnet50-cifar", 32), ("resnet50-imagenet", 224)] {
        let base = ModelSpec::named(name)?;
        let plain = profile(&base, [3, side, side])?;
        let with = profile(&base.clone().with_attention(Attention::Bottleneck), [3, side, side])?;
        let delta = diff(&plain, &with);
        println!("{}", plain.summary());
        println!("  + attention: {:+} params, {:+} MACs", delta.params(), delta.macs());
    }
    let spec = ModelSpec::named("resnet50-cifar")?.with_attention(Attention::Bottleneck);
    let report = profile(&spec, [3, 32, 32])?;
    println!("\nattention rows of {}:", spec.name);
    for row in report.rows.iter().filter(|r| r.name.starts_with("bam.") && r.params > 0) {
        println!("  {:<28} {:>8} params {:>10} MACs", row.name, row.params, row.macs);
    }
    Ok(())
}
