use std::fmt::Write as _;
use std::str::FromStr;

use crate::bam::Combine;
use crate::error::{Error, Result};
use crate::models::Attention;
use crate::profiler;
use crate::train::config::TrainConfig;
use crate::train::run::{train, RunRecord, TrainData};

/// One group of rows in the ablation table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AblationAxis {
    Dilation(Vec<usize>),
    Reduction(Vec<usize>),
    /// Channel only, spatial only, both.
    Branches,
    Combine(Vec<Combine>),
    /// Base network, an extra block at each bottleneck, attention modules.
    Placement,
}

impl AblationAxis {
    /// The full grid: d ∈ {1,2,4,6}, r ∈ {4,8,16,32}, branch toggles,
    /// combine ∈ {max, prod, sum} and the placement comparison.
    pub fn standard() -> Vec<AblationAxis> {
        vec![
            AblationAxis::Dilation(vec![1, 2, 4, 6]),
            AblationAxis::Reduction(vec![4, 8, 16, 32]),
            AblationAxis::Branches,
            AblationAxis::Combine(Combine::ALL.to_vec()),
            AblationAxis::Placement,
        ]
    }

    pub fn title(&self) -> &'static str {
        match self {
            AblationAxis::Dilation(_) => "Dilation value (d)",
            AblationAxis::Reduction(_) => "Reduction ratio (r)",
            AblationAxis::Branches => "Attention branches",
            AblationAxis::Combine(_) => "Combining strategy",
            AblationAxis::Placement => "Bottleneck insertion",
        }
    }

    /// `(label, config)` per cell; every other option comes from `base`.
    fn cells(&self, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
        let with = |f: &dyn Fn(&mut TrainConfig)| {
            let mut c = base.clone();
            c.attention = Attention::Bottleneck;
            f(&mut c);
            c
        };
        match self {
            AblationAxis::Dilation(values) => values.iter().map(|&d| (d.to_string(), with(&|c| c.bam.dilation = d))).collect(),
            AblationAxis::Reduction(values) => values.iter().map(|&r| (r.to_string(), with(&|c| c.bam.reduction = r))).collect(),
            AblationAxis::Branches => vec![
                (
                    "channel".into(),
                    with(&|c| {
                        c.bam.channel_branch = true;
                        c.bam.spatial_branch = false;
                    }),
                ),
                (
                    "spatial".into(),
                    with(&|c| {
                        c.bam.channel_branch = false;
                        c.bam.spatial_branch = true;
                    }),
                ),
                (
                    "channel + spatial".into(),
                    with(&|c| {
                        c.bam.channel_branch = true;
                        c.bam.spatial_branch = true;
                    }),
                ),
            ],
            AblationAxis::Combine(values) => values
                .iter()
                .map(|&m| (m.to_string().to_uppercase(), with(&|c| c.bam.combine = m)))
                .collect(),
            AblationAxis::Placement => vec![
                ("base".into(), with(&|c| c.attention = Attention::None)),
                ("+ extra block".into(), with(&|c| c.attention = Attention::ExtraBlock)),
                ("+ attention".into(), with(&|c| c.attention = Attention::Bottleneck)),
            ],
        }
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    /// `dilation`, `reduction`, `branches`, `combine` or `placement`,
    /// optionally followed by `=v1,v2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, values) = s.split_once('=').map_or((s, None), |(n, v)| (n, Some(v)));
        let list = |default: Vec<usize>| -> Result<Vec<usize>> {
            match values {
                None => Ok(default),
                Some(v) => v
                    .split(',')
                    .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("bad axis value `{x}`"))))
                    .collect(),
            }
        };
        match name.trim() {
            "dilation" => Ok(AblationAxis::Dilation(list(vec![1, 2, 4, 6])?)),
            "reduction" => Ok(AblationAxis::Reduction(list(vec![4, 8, 16, 32])?)),
            "branches" => Ok(AblationAxis::Branches),
            "combine" => match values {
                None => Ok(AblationAxis::Combine(Combine::ALL.to_vec())),
                Some(v) => Ok(AblationAxis::Combine(
                    v.split(',').map(|x| x.trim().parse()).collect::<Result<_>>()?,
                )),
            },
            "placement" => Ok(AblationAxis::Placement),
            other => Err(Error::Config(format!("unknown ablation axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub section: &'static str,
    pub label: String,
    pub config: TrainConfig,
    /// Learnable parameters of the built model.
    pub params: Option<u64>,
    pub outcome: std::result::Result<RunRecord, String>,
}

/// Trains one model per cell with the shared seed in `base`. A failing
/// cell is recorded and the grid continues.
pub fn ablation_grid(base: &TrainConfig, axes: &[AblationAxis], data: &TrainData) -> Result<Vec<CellResult>> {
    if axes.is_empty() {
        return Err(Error::Config("ablation needs at least one axis".into()));
    }
    let mut results = Vec::new();
    for axis in axes {
        for (label, mut config) in axis.cells(base) {
            config.name = format!(
                "{}-{}-{}",
                base.name,
                axis.title().split(' ').next().unwrap_or("cell").to_lowercase(),
                label.replace([' ', '+'], "")
            );
            let outcome = train(&config, data).map_err(|e| e.to_string());
            let params = outcome.as_ref().ok().map(|(_, r)| r.params);
            results.push(CellResult {
                section: axis.title(),
                label,
                config,
                params,
                outcome: outcome.map(|(_, record)| record),
            });
        }
    }
    Ok(results)
}

/// Aligned `Value | Params | Error` table grouped by axis.
pub fn format_table(results: &[CellResult], num_classes: usize) -> String {
    let rows: Vec<(String, String, String)> = results
        .iter()
        .map(|r| {
            let params = r
                .params
                .or_else(|| {
                    r.config
                        .spec(num_classes)
                        .and_then(|s| profiler::profile(&s, [3, 32, 32]))
                        .ok()
                        .map(|c| c.params())
                })
                .map_or("-".to_string(), |p| p.to_string());
            let error = match &r.outcome {
                Ok(rec) => rec.final_test_error().map_or("-".into(), |e| format!("{e:.2}")),
                Err(msg) => format!("failed: {msg}"),
            };
            (r.label.clone(), params, error)
        })
        .collect();
    let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(5);
    let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<w0$} | {:>w1$} | Error", "Value", "Params");
    let mut section = "";
    for (r, (label, params, error)) in results.iter().zip(&rows) {
        if r.section != section {
            section = r.section;
            let _ = writeln!(out, "{section}");
        }
        let _ = writeln!(out, "{label:<w0$} | {params:>w1$} | {error}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid_has_seventeen_cells() {
        let base = TrainConfig::default();
        let n: usize = AblationAxis::standard().iter().map(|a| a.cells(&base).len()).sum();
        assert_eq!(n, 17);
        assert_eq!(
            "reduction=2,4".parse::<AblationAxis>().unwrap(),
            AblationAxis::Reduction(vec![2, 4])
        );
        assert!("width".parse::<AblationAxis>().is_err());
    }
}
