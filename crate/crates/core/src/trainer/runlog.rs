use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::losses::{Component, LossBreakdown};

pub const LOG_HEADER: &str = "epoch,step,lr,total,mms,clustering,reconstruction,info_nce";

/// One optimizer step of a pretraining run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: u64,
    /// Global step, counted from 0 across epochs.
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub mms: f64,
    pub clustering: f64,
    pub reconstruction: f64,
    pub info_nce: f64,
}

impl LogRow {
    pub fn new(epoch: u64, step: u64, lr: f64, b: &LossBreakdown) -> Self {
        Self {
            epoch,
            step,
            lr,
            total: b.total,
            mms: b.get(Component::Mms),
            clustering: b.get(Component::Clustering),
            reconstruction: b.get(Component::Reconstruction),
            info_nce: b.get(Component::InfoNce),
        }
    }
}

/// Mean losses over one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u64,
    pub steps: u64,
    pub mean: LossBreakdown,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.epoch, r.step, r.lr, r.total, r.mms, r.clustering, r.reconstruction, r.info_nce
        );
    }
    out
}

pub(crate) fn summarize(epoch: u64, rows: &[LogRow], components: &[Component]) -> EpochSummary {
    let n = rows.len().max(1) as f64;
    let mean_of = |f: fn(&LogRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let components = components
        .iter()
        .map(|&c| {
            let v = match c {
                Component::Mms => mean_of(|r| r.mms),
                Component::Clustering => mean_of(|r| r.clustering),
                Component::Reconstruction => mean_of(|r| r.reconstruction),
                Component::InfoNce => mean_of(|r| r.info_nce),
            };
            (c, v)
        })
        .collect();
    EpochSummary {
        epoch,
        steps: rows.len() as u64,
        mean: LossBreakdown {
            total: mean_of(|r| r.total),
            components,
        },
    }
}
