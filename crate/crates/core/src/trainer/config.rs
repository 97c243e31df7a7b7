use serde::{Deserialize, Serialize};

use crate::clustering::KMeansParams;
use crate::data::TaskType;
use crate::error::{Error, Result};
use crate::heads::Fusion;
use crate::losses::{Component, LossConfig, Method};
use crate::numeric::{AdamW, LrSchedule};

/// Pretraining hyperparameters. Optional fields are filled by
/// [`PretrainConfig::resolve`] once the training-set size is known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub method: Method,
    #[serde(default = "default_epochs")]
    pub epochs: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Defaults to 0.00009 for the clustering methods, 0.00036 otherwise.
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Defaults to one cosine cycle over the whole run ending at 0.
    #[serde(default)]
    pub schedule: Option<LrSchedule>,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_queue_batches")]
    pub queue_batches: usize,
    /// First epoch (1-based) with the clustering loss switched on.
    #[serde(default = "default_cluster_start_epoch")]
    pub cluster_start_epoch: u64,
    #[serde(default)]
    pub kmeans: KMeansParams,
    #[serde(default = "default_representation_dim")]
    pub representation_dim: usize,
    #[serde(default = "default_projection_dim")]
    pub projection_dim: usize,
    #[serde(default = "default_cluster_dim")]
    pub cluster_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> u64 {
    20
}
fn default_batch_size() -> usize {
    64
}
fn default_weight_decay() -> f64 {
    0.00032
}
fn default_clusters() -> usize {
    8
}
fn default_queue_batches() -> usize {
    4
}
fn default_cluster_start_epoch() -> u64 {
    12
}
fn default_representation_dim() -> usize {
    128
}
fn default_projection_dim() -> usize {
    64
}
fn default_cluster_dim() -> usize {
    32
}

impl PretrainConfig {
    /// Desk-scale defaults for `method`.
    pub fn new(method: Method) -> Self {
        Self {
            method,
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            lr: None,
            weight_decay: default_weight_decay(),
            schedule: None,
            loss: LossConfig::default(),
            clusters: default_clusters(),
            queue_batches: default_queue_batches(),
            cluster_start_epoch: default_cluster_start_epoch(),
            kmeans: KMeansParams::default(),
            representation_dim: default_representation_dim(),
            projection_dim: default_projection_dim(),
            cluster_dim: default_cluster_dim(),
            seed: 0,
        }
    }

    pub fn default_lr(method: Method) -> f64 {
        if method.uses(Component::Clustering) {
            0.00009
        } else {
            0.00036
        }
    }

    pub fn effective_lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| Self::default_lr(self.method))
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("epochs", self.epochs as usize),
            ("batch_size", self.batch_size),
            ("clusters", self.clusters),
            ("queue_batches", self.queue_batches),
            ("representation_dim", self.representation_dim),
            ("projection_dim", self.projection_dim),
            ("cluster_dim", self.cluster_dim),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.method.is_contrastive() && self.batch_size < 2 {
            return Err(Error::config("batch_size", "contrastive methods need at least 2"));
        }
        let lr = self.effective_lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config("lr", format!("{lr} is not a positive learning rate")));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if let Some(s) = &self.schedule {
            s.validate()?;
        }
        self.loss.validate()?;
        if self.cluster_start_epoch == 0 {
            return Err(Error::config("cluster_start_epoch", "epochs count from 1"));
        }
        if self.method.uses(Component::Clustering) {
            if self.batch_size < self.clusters {
                return Err(Error::config(
                    "clusters",
                    format!("k={} exceeds batch_size={}", self.clusters, self.batch_size),
                ));
            }
            if self.cluster_start_epoch > self.epochs {
                log::warn!(
                    "cluster_start_epoch {} is after the last epoch {}; the clustering loss stays off",
                    self.cluster_start_epoch,
                    self.epochs
                );
            }
        }
        Ok(())
    }

    /// Fills the learning rate and schedule for a training set of
    /// `steps_per_epoch` batches.
    pub fn resolve(&self, steps_per_epoch: u64) -> Self {
        let lr = self.effective_lr();
        let mut out = self.clone();
        out.lr = Some(lr);
        if out.schedule.is_none() {
            out.schedule = Some(LrSchedule {
                base_lr: lr,
                min_lr: 0.0,
                period0: (steps_per_epoch * self.epochs).max(1),
                period_mult: 1,
            });
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownstreamMode {
    /// Frozen pretrained encoders, trained linear classifier.
    LinearEval,
    /// Pretrained encoders and classifier trained together.
    Finetune,
    /// Randomly initialized encoders and classifier trained on labels only.
    SupervisedScratch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamConfig {
    pub mode: DownstreamMode,
    /// Checked against the dataset when given.
    #[serde(default)]
    pub task_type: Option<TaskType>,
    #[serde(default = "default_fusion")]
    pub fusion: Fusion,
    #[serde(default = "default_downstream_epochs")]
    pub epochs: u64,
    #[serde(default = "default_downstream_lr")]
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
    /// Share of the labeled training split used, in (0, 1].
    #[serde(default = "default_label_fraction")]
    pub label_fraction: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_fusion() -> Fusion {
    Fusion::Concat
}
fn default_downstream_epochs() -> u64 {
    30
}
fn default_downstream_lr() -> f64 {
    0.001
}
fn default_threshold() -> f64 {
    0.5
}
fn default_label_fraction() -> f64 {
    1.0
}

impl DownstreamConfig {
    pub fn new(mode: DownstreamMode) -> Self {
        Self {
            mode,
            task_type: None,
            fusion: default_fusion(),
            epochs: default_downstream_epochs(),
            lr: default_downstream_lr(),
            weight_decay: 0.0,
            threshold: default_threshold(),
            seed: 0,
            label_fraction: default_label_fraction(),
            batch_size: default_batch_size(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold", "must lie in (0, 1)"));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::config("label_fraction", "must lie in (0, 1]"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        Ok(())
    }
}
