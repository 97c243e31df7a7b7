use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::manifest::{Label, Modality, SampleRecord, TaskType};
use crate::error::{Error, Result};
use crate::numeric::{seeded_rng, Tensor};
use crate::seeds;

/// Labels of a split or batch, stacked for training.
#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    None,
    Single(Vec<usize>),
    /// `[N × C]` matrix of 0/1 values.
    Multi(Tensor<f32>),
}

impl Labels {
    fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::None => Labels::None,
            Labels::Single(v) => Labels::Single(idx.iter().map(|&i| v[i]).collect()),
            Labels::Multi(t) => Labels::Multi(t.select_rows(idx)),
        }
    }
}

/// One split held in memory as a per-modality `[N × dim]` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitData {
    pub ids: Vec<String>,
    pub features: BTreeMap<Modality, Tensor<f32>>,
    pub labels: Labels,
    pub task_type: TaskType,
    pub n_classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: BTreeMap<Modality, Tensor<f32>>,
    pub labels: Labels,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

impl SplitData {
    /// Stacks records. Every record must carry the same set of modalities;
    /// labels are kept only when every record has one.
    pub fn from_records(records: &[SampleRecord], task_type: TaskType, n_classes: usize) -> Result<Self> {
        let modalities: Vec<Modality> = records
            .first()
            .map(|r| r.features.keys().copied().collect())
            .unwrap_or_default();
        let mut features = BTreeMap::new();
        for &m in &modalities {
            let mut rows = Vec::with_capacity(records.len());
            for r in records {
                let f = r.features.get(&m).ok_or_else(|| {
                    Error::contract(format!("sample `{}` lacks modality {m}", r.sample_id))
                })?;
                rows.push(&f.vector);
            }
            features.insert(m, Tensor::stack(&rows)?);
        }
        for r in records {
            if r.features.len() != modalities.len() {
                return Err(Error::contract(format!(
                    "sample `{}` has modalities {:?}, expected {modalities:?}",
                    r.sample_id,
                    r.features.keys().collect::<Vec<_>>()
                )));
            }
        }
        let all_labeled = !records.is_empty() && records.iter().all(|r| r.label.is_some());
        let labels = match task_type {
            _ if !all_labeled => Labels::None,
            TaskType::Unlabeled => Labels::None,
            TaskType::SingleLabel => Labels::Single(
                records
                    .iter()
                    .map(|r| match &r.label {
                        Some(Label::Class(c)) if *c < n_classes => Ok(*c),
                        other => Err(Error::Label(format!(
                            "sample `{}`: expected a class index below {n_classes}, got {other:?}",
                            r.sample_id
                        ))),
                    })
                    .collect::<Result<_>>()?,
            ),
            TaskType::MultiLabel => {
                let mut data = Vec::with_capacity(records.len() * n_classes);
                for r in records {
                    match &r.label {
                        Some(Label::Multi(v)) if v.len() == n_classes => {
                            data.extend(v.iter().map(|&b| f32::from(b)))
                        }
                        other => {
                            return Err(Error::Label(format!(
                                "sample `{}`: expected a {n_classes}-way binary vector, got {other:?}",
                                r.sample_id
                            )))
                        }
                    }
                }
                Labels::Multi(Tensor::matrix(records.len(), n_classes, data)?)
            }
        };
        Ok(Self {
            ids: records.iter().map(|r| r.sample_id.clone()).collect(),
            features,
            labels,
            task_type,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.features.keys().copied().collect()
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        Batch {
            indices: idx.to_vec(),
            features: self
                .features
                .iter()
                .map(|(&m, t)| (m, t.select_rows(idx)))
                .collect(),
            labels: self.labels.select(idx),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> SplitData {
        let b = self.batch(idx);
        SplitData {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            features: b.features,
            labels: b.labels,
            task_type: self.task_type,
            n_classes: self.n_classes,
        }
    }

    /// Deterministic subset holding roughly `fraction` of the samples
    /// (at least one).
    pub fn label_fraction(&self, fraction: f64, seed: u64) -> SplitData {
        if fraction >= 1.0 {
            return self.clone();
        }
        let keep = ((self.len() as f64 * fraction).round() as usize).clamp(1, self.len());
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut seeded_rng(seed, seeds::LABEL_SUBSET));
        let mut idx = order[..keep].to_vec();
        idx.sort_unstable();
        self.subset(&idx)
    }
}

/// How an epoch is cut into batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub drop_last: bool,
    /// Contrastive objectives need at least one negative per batch.
    pub contrastive: bool,
}

/// Shuffles `0..n` with a permutation fixed by `(seed, epoch)` and cuts it
/// into batches.
pub fn make_batches(n: usize, plan: BatchPlan, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if plan.batch_size == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    if plan.contrastive && plan.batch_size < 2 {
        return Err(Error::config(
            "batch_size",
            "contrastive methods need at least 2 samples per batch",
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seeds::mix(seed, &[seeds::SHUFFLE, epoch]), 0));
    let mut batches: Vec<Vec<usize>> = order.chunks(plan.batch_size).map(<[usize]>::to_vec).collect();
    if plan.drop_last && batches.last().is_some_and(|b| b.len() < plan.batch_size) {
        batches.pop();
    }
    Ok(batches)
}
