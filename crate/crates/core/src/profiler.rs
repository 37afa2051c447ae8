//! Analytic parameter and multiply-accumulate counts.
//!
//! The walk mirrors the layer layout of [`Model`](crate::models::Model) but
//! never allocates weights, so it also covers specs too large to build.
//! Per layer:
//!
//! * convolution: `Cout·Cin·k²` weights (`+Cout` bias), `Cout·Cin·k²·H'·W'` MACs
//! * linear: `out·in + out` weights, `out·in` MACs
//! * batch norm: `2·C` weights; running statistics are not parameters
//! * batch norm, activations, pooling and elementwise merges: one op per
//!   element, kept out of the MAC total
//!
//! Costs are for a single input image. "GFLOPs" means `MACs / 1e9`.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use crate::bam::BamConfig;
use crate::error::{Error, Result};
use crate::models::{Attention, BlockType, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Linear,
    Norm,
    Activation,
    Pool,
    Elementwise,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub name: String,
    pub kind: LayerKind,
    pub params: u64,
    pub macs: u64,
    /// Non-MAC element operations.
    pub ops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub model: String,
    /// `[C, H, W]` of the profiled input.
    pub input: [usize; 3],
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaRow {
    pub name: String,
    pub params: i64,
    pub macs: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeltaReport {
    pub rows: Vec<DeltaRow>,
}

impl CostReport {
    pub fn params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    pub fn ops(&self) -> u64 {
        self.rows.iter().map(|r| r.ops).sum()
    }

    pub fn gflops(&self) -> f64 {
        self.macs() as f64 / 1e9
    }

    /// Parameters in rows whose name starts with `prefix`.
    pub fn params_with_prefix(&self, prefix: &str) -> u64 {
        self.rows.iter().filter(|r| r.name.starts_with(prefix)).map(|r| r.params).sum()
    }

    pub fn macs_with_prefix(&self, prefix: &str) -> u64 {
        self.rows.iter().filter(|r| r.name.starts_with(prefix)).map(|r| r.macs).sum()
    }

    /// Tab-separated `name, params, macs` records after a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("name\tparams\tmacs\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{}", r.name, r.params, r.macs);
        }
        out
    }

    /// One-line headline: parameters in millions and GFLOPs.
    pub fn summary(&self) -> String {
        format!(
            "{}: {:.2}M params, {:.2} GFLOPs at {}x{}x{}",
            self.model,
            self.params() as f64 / 1e6,
            self.gflops(),
            self.input[0],
            self.input[1],
            self.input[2]
        )
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
        writeln!(f, "{:<width$}  {:>12}  {:>15}  {:>13}", "layer", "params", "MACs", "other ops")?;
        for r in &self.rows {
            writeln!(f, "{:<width$}  {:>12}  {:>15}  {:>13}", r.name, r.params, r.macs, r.ops)?;
        }
        writeln!(
            f,
            "{:<width$}  {:>12}  {:>15}  {:>13}",
            "total",
            self.params(),
            self.macs(),
            self.ops()
        )?;
        write!(f, "{}", self.summary())
    }
}

impl DeltaReport {
    pub fn params(&self) -> i64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn macs(&self) -> i64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    /// Rows with a nonzero difference.
    pub fn changed(&self) -> impl Iterator<Item = &DeltaRow> {
        self.rows.iter().filter(|r| r.params != 0 || r.macs != 0)
    }
}

/// `b − a`, aligned by row name: rows of `a` in order, then rows only in `b`.
pub fn diff(a: &CostReport, b: &CostReport) -> DeltaReport {
    let index: HashMap<&str, &Row> = b.rows.iter().map(|r| (r.name.as_str(), r)).collect();
    let in_a: HashMap<&str, ()> = a.rows.iter().map(|r| (r.name.as_str(), ())).collect();
    let signed = |v: u64| v as i64;
    let mut rows: Vec<DeltaRow> = a
        .rows
        .iter()
        .map(|ra| {
            let (p, m) = index.get(ra.name.as_str()).map_or((0, 0), |rb| (rb.params, rb.macs));
            DeltaRow {
                name: ra.name.clone(),
                params: signed(p) - signed(ra.params),
                macs: signed(m) - signed(ra.macs),
            }
        })
        .collect();
    rows.extend(b.rows.iter().filter(|r| !in_a.contains_key(r.name.as_str())).map(|r| DeltaRow {
        name: r.name.clone(),
        params: signed(r.params),
        macs: signed(r.macs),
    }));
    DeltaReport { rows }
}

struct Walker {
    rows: Vec<Row>,
    c: usize,
    h: usize,
    w: usize,
}

fn extent(input: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> Option<usize> {
    (input + 2 * padding)
        .checked_sub(dilation * (kernel - 1) + 1)
        .map(|v| v / stride + 1)
}

impl Walker {
    fn push(&mut self, name: String, kind: LayerKind, params: usize, macs: usize, ops: usize) {
        self.rows.push(Row {
            name,
            kind,
            params: params as u64,
            macs: macs as u64,
            ops: ops as u64,
        });
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, name: String, cout: usize, k: usize, stride: usize, padding: usize, dilation: usize, bias: bool) -> Result<()> {
        let (Some(h), Some(w)) = (
            extent(self.h, k, stride, padding, dilation),
            extent(self.w, k, stride, padding, dilation),
        ) else {
            return Err(Error::shape(format!("{name}: {k}x{k} kernel does not fit {}x{}", self.h, self.w)));
        };
        let weights = cout * self.c * k * k;
        let params = weights + if bias { cout } else { 0 };
        self.push(name, LayerKind::Conv, params, weights * h * w, 0);
        (self.c, self.h, self.w) = (cout, h, w);
        Ok(())
    }

    /// Convolution without bias followed by batch norm, as in the backbone.
    fn conv_bn(&mut self, conv: String, bn: String, cout: usize, k: usize, stride: usize) -> Result<()> {
        self.conv(conv, cout, k, stride, k / 2, 1, false)?;
        self.bn(bn);
        Ok(())
    }

    fn bn(&mut self, name: String) {
        let n = self.c * self.plane();
        self.push(name, LayerKind::Norm, 2 * self.c, 0, n);
    }

    fn relu(&mut self, name: String) {
        let n = self.c * self.plane();
        self.push(name, LayerKind::Activation, 0, 0, n);
    }

    fn block(&mut self, name: &str, kind: BlockType, cout: usize, stride: usize, attention: Option<(String, BamConfig)>) -> Result<()> {
        let (cin, hin, win) = (self.c, self.h, self.w);
        let plan: Vec<(usize, usize, usize)> = match kind {
            BlockType::Basic | BlockType::Plain => vec![(cout, 3, stride), (cout, 3, 1)],
            BlockType::Bottleneck => vec![(cout / 4, 1, stride), (cout / 4, 3, 1), (cout, 1, 1)],
        };
        let last = plan.len();
        for (i, (c, k, s)) in plan.into_iter().enumerate() {
            self.conv_bn(format!("{name}.conv{}", i + 1), format!("{name}.bn{}", i + 1), c, k, s)?;
            if i + 1 < last {
                self.relu(format!("{name}.relu{}", i + 1));
            }
        }
        if let Some((prefix, cfg)) = attention {
            self.bam(&prefix, cfg)?;
        }
        if kind != BlockType::Plain {
            if stride != 1 || cin != cout {
                let (c, h, w) = (self.c, self.h, self.w);
                (self.c, self.h, self.w) = (cin, hin, win);
                self.conv_bn(format!("{name}.downsample.conv"), format!("{name}.downsample.bn"), cout, 1, stride)?;
                if (self.c, self.h, self.w) != (c, h, w) {
                    return Err(Error::shape(format!("{name}: shortcut and residual shapes differ")));
                }
            }
            let n = self.c * self.plane();
            self.push(format!("{name}.add"), LayerKind::Elementwise, 0, 0, n);
        }
        self.relu(format!("{name}.relu"));
        Ok(())
    }

    fn bam(&mut self, prefix: &str, cfg: BamConfig) -> Result<()> {
        let c = self.c;
        cfg.validate(c)?;
        let hid = cfg.hidden(c);
        let (h, w) = (self.h, self.w);
        let hw = h * w;
        if cfg.channel_branch {
            let p = format!("{prefix}.channel");
            self.push(format!("{p}.gap"), LayerKind::Pool, 0, 0, c * hw);
            self.push(format!("{p}.fc0"), LayerKind::Linear, c * hid + hid, c * hid, 0);
            self.push(format!("{p}.relu"), LayerKind::Activation, 0, 0, hid);
            self.push(format!("{p}.fc1"), LayerKind::Linear, hid * c + c, hid * c, 0);
            self.push(format!("{p}.bn"), LayerKind::Norm, 2 * c, 0, c);
        }
        if cfg.spatial_branch {
            let p = format!("{prefix}.spatial");
            let d = cfg.dilation;
            self.conv(format!("{p}.reduce"), hid, 1, 1, 0, 1, true)?;
            self.relu(format!("{p}.relu0"));
            for i in 0..2 {
                self.conv(format!("{p}.dilated{i}"), hid, 3, 1, d, d, true)?;
                self.relu(format!("{p}.relu{}", i + 1));
            }
            self.conv(format!("{p}.collapse"), 1, 1, 1, 0, 1, true)?;
            self.bn(format!("{p}.bn"));
            (self.c, self.h, self.w) = (c, h, w);
        }
        // merge + sigmoid, then F + F*M
        self.push(format!("{prefix}.combine"), LayerKind::Elementwise, 0, 0, 2 * c * hw);
        self.push(format!("{prefix}.refine"), LayerKind::Elementwise, 0, 0, 2 * c * hw);
        Ok(())
    }
}

/// Parameter and MAC report for `spec` on one `[C, H, W]` input.
pub fn profile(spec: &ModelSpec, input: [usize; 3]) -> Result<CostReport> {
    spec.validate()?;
    if input[0] != spec.input_channels {
        return Err(Error::shape(format!(
            "model `{}` takes {} input channels, profile requested {}",
            spec.name, spec.input_channels, input[0]
        )));
    }
    let mut wk = Walker {
        rows: Vec::new(),
        c: input[0],
        h: input[1],
        w: input[2],
    };
    let stem = &spec.stem;
    wk.conv_bn("stem.conv".into(), "stem.bn".into(), stem.channels, stem.kernel, stem.stride)?;
    wk.relu("stem.relu".into());
    if stem.max_pool {
        let (Some(h), Some(w)) = (extent(wk.h, 3, 2, 1, 1), extent(wk.w, 3, 2, 1, 1)) else {
            return Err(Error::shape("stem pooling does not fit the input"));
        };
        (wk.h, wk.w) = (h, w);
        let n = wk.c * wk.plane();
        wk.push("stem.pool".into(), LayerKind::Pool, 0, 0, 9 * n);
    }
    let last = spec.stages.len() - 1;
    for (i, st) in spec.stages.iter().enumerate() {
        for j in 0..st.blocks {
            let attention = (spec.attention == Attention::PerBlock).then(|| (format!("bam.layer{}.{j}", i + 1), spec.bam));
            let stride = if j == 0 { st.stride } else { 1 };
            wk.block(&format!("layer{}.{j}", i + 1), st.block, st.channels, stride, attention)?;
        }
        if i == last {
            continue;
        }
        match spec.attention {
            Attention::Bottleneck => wk.bam(&format!("bam.{}", i + 1), spec.bam)?,
            Attention::ExtraBlock => wk.block(&format!("layer{}.extra", i + 1), st.block, st.channels, 1, None)?,
            Attention::None | Attention::PerBlock => {}
        }
    }
    let n = wk.c * wk.plane();
    wk.push("gap".into(), LayerKind::Pool, 0, 0, n);
    let classes = spec.num_classes;
    wk.push("fc".into(), LayerKind::Linear, wk.c * classes + classes, wk.c * classes, 0);
    Ok(CostReport {
        model: spec.name.clone(),
        input,
        rows: wk.rows,
    })
}

/// Analytic parameter count of one module attached at `channels`.
pub fn bam_params(channels: usize, config: BamConfig) -> Result<u64> {
    let mut wk = Walker {
        rows: Vec::new(),
        c: channels,
        h: 2 * config.dilation + 1,
        w: 2 * config.dilation + 1,
    };
    wk.bam("bam", config)?;
    Ok(wk.rows.iter().map(|r| r.params).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::StageSpec;

    #[test]
    fn conv_mac_formula() {
        let mut wk = Walker {
            rows: Vec::new(),
            c: 2,
            h: 4,
            w: 4,
        };
        wk.conv("c".into(), 2, 3, 1, 1, 1, false).unwrap();
        assert_eq!(wk.rows[0].macs, 576);
        let mut wk = Walker {
            rows: Vec::new(),
            c: 256,
            h: 8,
            w: 8,
        };
        wk.conv("r".into(), 16, 1, 1, 0, 1, true).unwrap();
        assert_eq!(wk.rows[0].macs, 262_144);
        wk.bn("bn".into());
        assert_eq!(wk.rows[1].params, 32);
    }

    #[test]
    fn single_module_count() {
        assert_eq!(bam_params(256, BamConfig::default()).unwrap(), 17_747);
        let channel_only = BamConfig {
            spatial_branch: false,
            ..Default::default()
        };
        assert_eq!(bam_params(256, channel_only).unwrap(), 8_976);
    }

    #[test]
    fn self_diff_is_zero_and_bam_diff_is_bam_rows() {
        let spec = ModelSpec::named("resnet50-cifar").unwrap();
        let base = profile(&spec, [3, 32, 32]).unwrap();
        assert_eq!(diff(&base, &base).changed().count(), 0);
        let with = profile(&spec.clone().with_attention(Attention::Bottleneck), [3, 32, 32]).unwrap();
        let d = diff(&base, &with);
        assert!(d.changed().all(|r| r.name.starts_with("bam.")));
        assert_eq!(d.params(), 360_761);
        assert_eq!(with.params_with_prefix("bam."), 360_761);
    }

    #[test]
    fn macs_scale_with_area() {
        let spec = ModelSpec {
            name: "convs".into(),
            input_channels: 3,
            stem: crate::models::StemSpec {
                channels: 8,
                kernel: 3,
                stride: 1,
                max_pool: false,
            },
            stages: vec![StageSpec {
                block: BlockType::Plain,
                blocks: 2,
                channels: 8,
                stride: 1,
            }],
            attention: Attention::None,
            bam: BamConfig::default(),
            num_classes: 1,
        };
        let conv_macs = |r: &CostReport| r.rows.iter().filter(|r| r.kind == LayerKind::Conv).map(|r| r.macs).sum::<u64>();
        let a = profile(&spec, [3, 8, 8]).unwrap();
        let b = profile(&spec, [3, 16, 16]).unwrap();
        assert_eq!(conv_macs(&b), 4 * conv_macs(&a));
    }

    #[test]
    fn too_small_input_fails() {
        let spec = ModelSpec::named("resnet50-imagenet").unwrap();
        assert!(profile(&spec, [3, 0, 0]).is_err());
        assert!(profile(&spec, [1, 224, 224]).is_err());
    }

    #[test]
    fn resnet50_reference_counts() {
        let spec = ModelSpec::named("resnet50-imagenet").unwrap();
        let r = profile(&spec, [3, 224, 224]).unwrap();
        assert_eq!(r.params(), 25_557_032);
        assert_eq!(r.macs(), 3_857_973_248);
        let spec = ModelSpec::named("resnet50-cifar").unwrap();
        let r = profile(&spec, [3, 32, 32]).unwrap();
        assert_eq!(r.params(), 23_705_252);
        assert_eq!(r.macs(), 1_222_516_736);
    }
}
