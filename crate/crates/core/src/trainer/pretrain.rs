use std::collections::BTreeMap;

use super::checkpoint::Checkpoint;
use super::config::PretrainConfig;
use super::runlog::{summarize, EpochSummary, LogRow};
use crate::clustering::{fuse_multimodal, kmeans_fit, CentroidSet, ClusterQueue, KMeansInit};
use crate::data::{make_batches, Batch, BatchPlan, Modality, SplitData};
use crate::error::{Error, Result};
use crate::heads::{required_modalities, ModelBundle, ModelConfig, PerModality};
use crate::losses::{
    clustering_loss, feature_augment, info_nce, mms_total, multitask_loss, multitask_total, recon_loss,
    Component, LossBreakdown, Method,
};
use crate::numeric::{adamw_step, lr_at, zero_grads, Graph, NodeId, ParamId, Tensor};
use crate::seeds;

/// Result of a full pretraining run.
#[derive(Clone, Debug)]
pub struct PretrainRun {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    pub epochs: Vec<EpochSummary>,
}

/// Losses of one forward/backward pass and the parameters it reached.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub breakdown: LossBreakdown,
    pub touched: Vec<ParamId>,
}

/// Stateful pretraining loop. State only changes at step granularity, so a
/// run rebuilt from a checkpoint continues exactly where it stopped.
pub struct Pretrainer {
    cfg: PretrainConfig,
    model: ModelBundle<f32>,
    queue: ClusterQueue<f32>,
    centroids: Option<CentroidSet<f32>>,
    epoch: u64,
    global_step: u64,
    log: Vec<LogRow>,
    plan: BatchPlan,
    n_train: usize,
}

fn batch_plan(cfg: &PretrainConfig, n: usize) -> BatchPlan {
    BatchPlan {
        batch_size: cfg.batch_size,
        drop_last: n > cfg.batch_size,
        contrastive: cfg.method.is_contrastive(),
    }
}

fn steps_per_epoch(plan: BatchPlan, n: usize) -> u64 {
    if plan.drop_last {
        (n / plan.batch_size) as u64
    } else {
        n.div_ceil(plan.batch_size) as u64
    }
}

fn check_modalities(method: Method, data: &SplitData) -> Result<()> {
    for m in required_modalities(method) {
        if !data.features.contains_key(m) {
            return Err(Error::contract(format!(
                "{method} needs the {m} modality, dataset has {:?}",
                data.modalities()
            )));
        }
    }
    if data.is_empty() {
        return Err(Error::contract("training split is empty"));
    }
    Ok(())
}

impl Pretrainer {
    pub fn new(cfg: &PretrainConfig, data: &SplitData) -> Result<Self> {
        cfg.validate()?;
        check_modalities(cfg.method, data)?;
        let plan = batch_plan(cfg, data.len());
        let cfg = cfg.resolve(steps_per_epoch(plan, data.len()));
        let model_cfg = ModelConfig {
            modality_dims: required_modalities(cfg.method)
                .iter()
                .map(|&m| (m, data.features[&m].cols()))
                .collect(),
            representation_dim: cfg.representation_dim,
            projection_dim: cfg.projection_dim,
            cluster_dim: cfg.cluster_dim,
        };
        let model = ModelBundle::new(model_cfg, cfg.method, cfg.seed)?;
        Ok(Self {
            queue: ClusterQueue::new(cfg.queue_batches)?,
            cfg,
            model,
            centroids: None,
            epoch: 0,
            global_step: 0,
            log: Vec::new(),
            plan,
            n_train: data.len(),
        })
    }

    /// Continues from `ckpt`; `data` must be the split it was trained on.
    pub fn resume(ckpt: Checkpoint, data: &SplitData) -> Result<Self> {
        let cfg = ckpt.config;
        cfg.validate()?;
        check_modalities(cfg.method, data)?;
        for (m, &d) in &ckpt.model.config.modality_dims {
            let found = data.features.get(m).map_or(0, Tensor::cols);
            if found != d {
                return Err(Error::DimMismatch {
                    sample: "<train split>".into(),
                    modality: m.to_string(),
                    expected: vec![d],
                    found: vec![found],
                });
            }
        }
        let mut queue = ClusterQueue::new(cfg.queue_batches)?;
        for q in ckpt.queue {
            queue.push(q)?;
        }
        Ok(Self {
            plan: batch_plan(&cfg, data.len()),
            cfg,
            model: ckpt.model,
            queue,
            centroids: ckpt.centroids,
            epoch: ckpt.epoch,
            global_step: ckpt.global_step,
            log: Vec::new(),
            n_train: data.len(),
        })
    }

    pub fn config(&self) -> &PretrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ModelBundle<f32> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut ModelBundle<f32> {
        &mut self.model
    }

    pub fn completed_epochs(&self) -> u64 {
        self.epoch
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn centroids(&self) -> Option<&CentroidSet<f32>> {
        self.centroids.as_ref()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            config: self.cfg.clone(),
            epoch: self.epoch,
            global_step: self.global_step,
            centroids: self.centroids.clone(),
            queue: self.queue.batches().cloned().collect(),
        }
    }

    fn clustering_active(&self, epoch: u64) -> bool {
        self.cfg.method.uses(Component::Clustering) && epoch >= self.cfg.cluster_start_epoch
    }

    fn encode_views(&self, g: &mut Graph<f32>, batch: &Batch) -> Result<NodeId> {
        let x = &batch.features[&Modality::Video];
        let aug = self.cfg.loss.augment;
        let base = seeds::mix(self.cfg.seed, &[seeds::AUGMENT, self.global_step]);
        let mut views = Vec::with_capacity(2);
        for v in 0..2u64 {
            let xv = feature_augment(x, seeds::mix(base, &[v]), aug.noise_sigma, aug.mask_prob);
            let input = g.input(xv);
            let reps = self
                .model
                .encode(g, &BTreeMap::from([(Modality::Video, input)]), &[Modality::Video])?;
            views.push(self.model.project(g, &reps)?[&Modality::Video]);
        }
        info_nce(g, views[0], views[1], self.cfg.loss.temperature)
    }

    /// Fuses the batch, refreshes the queue and centroids, and builds the
    /// clustering loss against the refreshed centroids.
    fn clustering_term(&mut self, g: &mut Graph<f32>, p: &PerModality, epoch: u64) -> Result<NodeId> {
        let ge = self.model.cluster_embed(g, p)?;
        let get = |m: Modality| {
            ge.get(&m)
                .copied()
                .ok_or_else(|| Error::contract(format!("clustering needs the {m} modality")))
        };
        let r = fuse_multimodal(g, get(Modality::Video)?, get(Modality::Text)?, get(Modality::Audio)?)?;
        let r = if self.cfg.loss.normalize_embeddings {
            g.normalize_rows(r)?
        } else {
            r
        };
        let batch_rows = g.value(r).rows();
        self.queue.push(g.value(r).clone())?;
        let points = self.queue.snapshot();
        let k = self.cfg.clusters;
        let init = match &self.centroids {
            Some(c) if c.k == k && c.dim == points.cols() => KMeansInit::WarmStart(c),
            _ => KMeansInit::KMeansPlusPlus,
        };
        let seed = seeds::mix(self.cfg.seed, &[seeds::KMEANS, epoch, self.global_step]);
        let fit = kmeans_fit(&points, k, init, self.cfg.kmeans, seed)?;
        let tail = &fit.assignments[fit.assignments.len() - batch_rows..];
        let node = clustering_loss(g, r, tail, &fit.centroids.centroids, self.cfg.loss.margin)?;
        self.centroids = Some(fit.centroids);
        Ok(node)
    }

    /// Builds the method's objective on `batch`, checks every component is
    /// finite and leaves gradients in the parameter slots. Does not step.
    pub fn forward_backward(&mut self, batch: &Batch, epoch: u64) -> Result<StepOutcome> {
        let method = self.cfg.method;
        let loss_cfg = self.cfg.loss;
        let mut g = Graph::new();
        let mut parts: BTreeMap<Component, NodeId> = BTreeMap::new();
        if method.uses(Component::InfoNce) {
            parts.insert(Component::InfoNce, self.encode_views(&mut g, batch)?);
        } else {
            let mods = self.model.modalities();
            let mut inputs = PerModality::new();
            for &m in &mods {
                let x = batch
                    .features
                    .get(&m)
                    .ok_or_else(|| Error::contract(format!("batch lacks the {m} modality")))?;
                inputs.insert(m, g.input(x.clone()));
            }
            let reps = self.model.encode(&mut g, &inputs, &mods)?;
            if method.uses(Component::Mms) || method.uses(Component::Clustering) {
                let p = self.model.project(&mut g, &reps)?;
                if method.uses(Component::Mms) {
                    let node = mms_total(&mut g, &p, loss_cfg.margin, loss_cfg.normalize_embeddings)?;
                    parts.insert(Component::Mms, node);
                }
                if method.uses(Component::Clustering) {
                    let node = if self.clustering_active(epoch) {
                        self.clustering_term(&mut g, &p, epoch)?
                    } else {
                        g.input(Tensor::scalar(0.0))
                    };
                    parts.insert(Component::Clustering, node);
                }
            }
            if method.uses(Component::Reconstruction) {
                let recons = self.model.decode(&mut g, &reps)?;
                parts.insert(Component::Reconstruction, recon_loss(&mut g, &inputs, &recons)?.0);
            }
        }
        let step = self.global_step as usize;
        let mut values = BTreeMap::new();
        for (&c, &node) in &parts {
            let v = g.scalar(node);
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    component: c.name().to_string(),
                    epoch: epoch as usize,
                    step,
                });
            }
            values.insert(c, v);
        }
        let total = multitask_total(&mut g, method, &parts)?;
        let breakdown = multitask_loss(method, &values)?;
        if !breakdown.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                component: "total".into(),
                epoch: epoch as usize,
                step,
            });
        }
        debug_assert_eq!(breakdown.total, f64::from(g.scalar(total)));
        zero_grads(&mut self.model.params);
        let grads = g.backward(total, &mut self.model.params)?;
        Ok(StepOutcome {
            breakdown,
            touched: grads.touched_params().to_vec(),
        })
    }

    /// AdamW update of the touched parameters at the current step's rate.
    pub fn apply(&mut self, touched: &[ParamId]) -> Result<f64> {
        let lr = lr_at(self.cfg.schedule.as_ref().expect("resolved config"), self.global_step);
        let opt = self.cfg.optimizer();
        for &id in touched {
            adamw_step(self.model.params.get_mut(id), lr, &opt)?;
        }
        Ok(lr)
    }

    pub fn run_epoch(&mut self, data: &SplitData) -> Result<EpochSummary> {
        if data.len() != self.n_train {
            return Err(Error::contract(format!(
                "training split changed size from {} to {}",
                self.n_train,
                data.len()
            )));
        }
        let epoch = self.epoch + 1;
        let batches = make_batches(data.len(), self.plan, self.cfg.seed, epoch)?;
        let first = self.log.len();
        for idx in batches {
            let batch = data.batch(&idx);
            let out = self.forward_backward(&batch, epoch)?;
            let lr = self.apply(&out.touched)?;
            self.log.push(LogRow::new(epoch, self.global_step, lr, &out.breakdown));
            self.global_step += 1;
        }
        self.epoch = epoch;
        let summary = summarize(epoch, &self.log[first..], self.cfg.method.components());
        log::info!(
            "epoch {epoch}/{} {}: mean total {:.6}",
            self.cfg.epochs,
            self.cfg.method,
            summary.mean.total
        );
        Ok(summary)
    }

    /// Runs epochs until `last_epoch` (inclusive) or the configured count.
    pub fn run_until(&mut self, data: &SplitData, last_epoch: u64) -> Result<Vec<EpochSummary>> {
        let stop = last_epoch.min(self.cfg.epochs);
        let mut out = Vec::new();
        while self.epoch < stop {
            out.push(self.run_epoch(data)?);
        }
        Ok(out)
    }
}

/// Pretrains a fresh model for `cfg.epochs` epochs on `data`.
pub fn pretrain(cfg: &PretrainConfig, data: &SplitData) -> Result<PretrainRun> {
    let mut t = Pretrainer::new(cfg, data)?;
    let epochs = t.run_until(data, cfg.epochs)?;
    Ok(PretrainRun {
        checkpoint: t.checkpoint(),
        log: t.log,
        epochs,
    })
}
