use super::checkpoint::Checkpoint;
use super::config::{DownstreamConfig, DownstreamMode};
use crate::data::{make_batches, BatchPlan, Labels, Modality, SplitData, TaskType};
use crate::error::{Error, Result};
use crate::eval::{weighted_metrics_multilabel, weighted_metrics_single, MetricsReport};
use crate::heads::{fuse_for_classifier, Fusion, ModelBundle, PerModality};
use crate::numeric::{adamw_step, zero_grads, AdamW, Graph, MarginMode, NodeId, ParamId, Tensor};
use crate::seeds;

const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug)]
pub struct DownstreamRun {
    pub model: ModelBundle<f32>,
    pub report: MetricsReport,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
}

fn used_modalities(model: &ModelBundle<f32>, fusion: Fusion) -> Vec<Modality> {
    match fusion {
        Fusion::VisionOnly => vec![Modality::Video],
        _ => model.modalities(),
    }
}

fn inputs(g: &mut Graph<f32>, data: &SplitData, mods: &[Modality], idx: &[usize]) -> Result<PerModality> {
    mods.iter()
        .map(|&m| {
            let x = data
                .features
                .get(&m)
                .ok_or_else(|| Error::contract(format!("dataset lacks the {m} modality")))?;
            Ok((m, g.input(x.select_rows(idx))))
        })
        .collect()
}

fn chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n).step_by(EVAL_CHUNK).map(move |s| (s..(s + EVAL_CHUNK).min(n)).collect())
}

fn stack_chunks(parts: Vec<Tensor<f32>>, cols: usize) -> Result<Tensor<f32>> {
    let rows: usize = parts.iter().map(Tensor::rows).sum();
    let data = parts.into_iter().flat_map(Tensor::into_data).collect();
    Tensor::matrix(rows, cols, data)
}

/// Fused representations `[N × fused_dim]` without recording gradients.
pub fn representations(model: &ModelBundle<f32>, data: &SplitData, fusion: Fusion) -> Result<Tensor<f32>> {
    let mods = used_modalities(model, fusion);
    let mut parts = Vec::new();
    for idx in chunks(data.len()) {
        let mut g = Graph::new();
        let x = inputs(&mut g, data, &mods, &idx)?;
        let reps = model.encode(&mut g, &x, &mods)?;
        let fused = fuse_for_classifier(&mut g, &reps, fusion)?;
        parts.push(g.value(fused).clone());
    }
    stack_chunks(parts, model.fused_dim(fusion))
}

/// Classifier logits `[N × C]` for every sample.
pub fn predict_logits(model: &ModelBundle<f32>, data: &SplitData) -> Result<Tensor<f32>> {
    let (layer, fusion) = model
        .classifier()
        .ok_or_else(|| Error::contract("no classifier attached"))?;
    let feats = representations(model, data, fusion)?;
    let mut g = Graph::new();
    let x = g.input(feats);
    let out = layer.forward(&mut g, &model.params, x)?;
    Ok(g.value(out).clone())
}

fn check_labels(data: &SplitData, cfg: &DownstreamConfig, what: &str) -> Result<()> {
    if let Some(t) = cfg.task_type {
        if t != data.task_type {
            return Err(Error::Label(format!(
                "config asks for {t:?} but the {what} split is {:?}",
                data.task_type
            )));
        }
    }
    match (&data.labels, data.task_type) {
        (Labels::Single(_), TaskType::SingleLabel) | (Labels::Multi(_), TaskType::MultiLabel) => Ok(()),
        (Labels::None, _) => Err(Error::Label(format!("the {what} split has no labels"))),
        (_, t) => Err(Error::Label(format!("{what} labels do not match task type {t:?}"))),
    }
}

fn loss_node(g: &mut Graph<f32>, logits: NodeId, labels: &Labels) -> Result<NodeId> {
    match labels {
        Labels::Single(t) => g.cross_entropy(logits, t, None, 0.0, MarginMode::Shared),
        Labels::Multi(t) => g.bce_with_logits(logits, t),
        Labels::None => Err(Error::Label("batch has no labels".into())),
    }
}

fn select(labels: &Labels, idx: &[usize]) -> Labels {
    match labels {
        Labels::None => Labels::None,
        Labels::Single(v) => Labels::Single(idx.iter().map(|&i| v[i]).collect()),
        Labels::Multi(t) => Labels::Multi(t.select_rows(idx)),
    }
}

fn evaluate(model: &ModelBundle<f32>, test: &SplitData, threshold: f64) -> Result<MetricsReport> {
    let logits = predict_logits(model, test)?;
    match &test.labels {
        Labels::Single(y) => {
            let preds: Vec<usize> = (0..logits.rows())
                .map(|i| {
                    let row = logits.row(i);
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    best
                })
                .collect();
            weighted_metrics_single(&preds, y, test.n_classes)
        }
        Labels::Multi(y) => {
            let scores = logits.map(|z| 1.0 / (1.0 + (-z).exp()));
            weighted_metrics_multilabel(&scores, y, threshold)
        }
        Labels::None => Err(Error::Label("the test split has no labels".into())),
    }
}

/// Attaches a classifier to the checkpoint's encoders (or to fresh ones for
/// `supervised_scratch`), trains it on `train` and reports on `test`.
pub fn attach_probe_and_train(
    ckpt: &Checkpoint,
    train: &SplitData,
    test: &SplitData,
    cfg: &DownstreamConfig,
) -> Result<DownstreamRun> {
    cfg.validate()?;
    check_labels(train, cfg, "train")?;
    check_labels(test, cfg, "test")?;
    if train.task_type != test.task_type || train.n_classes != test.n_classes {
        return Err(Error::Label("train and test splits disagree on the label space".into()));
    }
    let mut model = match cfg.mode {
        DownstreamMode::SupervisedScratch => ModelBundle::new(
            ckpt.model.config.clone(),
            ckpt.model.method,
            seeds::mix(cfg.seed, &[seeds::DOWNSTREAM, seeds::INIT]),
        )?,
        _ => ckpt.model.clone(),
    };
    for p in model.params.iter_mut() {
        p.moment1 = Tensor::zeros(p.value.shape());
        p.moment2 = Tensor::zeros(p.value.shape());
        p.step_count = 0;
    }
    model.attach_classifier(train.n_classes, cfg.fusion, cfg.seed)?;
    let (layer, fusion) = model.classifier().expect("just attached");
    let mut trainable: Vec<ParamId> = vec![layer.weight, layer.bias];
    if cfg.mode != DownstreamMode::LinearEval {
        trainable.extend(model.encoder_params());
    }

    let data = train.label_fraction(cfg.label_fraction, cfg.seed);
    let frozen = match cfg.mode {
        DownstreamMode::LinearEval => Some(representations(&model, &data, fusion)?),
        _ => None,
    };
    let mods = used_modalities(&model, fusion);
    let opt = AdamW {
        weight_decay: cfg.weight_decay,
        ..AdamW::default()
    };
    opt.validate()?;
    let plan = BatchPlan {
        batch_size: cfg.batch_size,
        drop_last: false,
        contrastive: false,
    };
    let shuffle_seed = seeds::mix(cfg.seed, &[seeds::DOWNSTREAM]);
    let mut train_loss = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        let batches = make_batches(data.len(), plan, shuffle_seed, epoch)?;
        let n_batches = batches.len();
        for idx in batches {
            let mut g = Graph::new();
            let logits = match &frozen {
                Some(f) => {
                    let x = g.input(f.select_rows(&idx));
                    layer.forward(&mut g, &model.params, x)?
                }
                None => {
                    let x = inputs(&mut g, &data, &mods, &idx)?;
                    let reps = model.encode(&mut g, &x, &mods)?;
                    model.classify(&mut g, &reps)?
                }
            };
            let loss = loss_node(&mut g, logits, &select(&data.labels, &idx))?;
            let value = f64::from(g.scalar(loss));
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    component: "classifier".into(),
                    epoch: epoch as usize,
                    step: 0,
                });
            }
            sum += value;
            zero_grads(&mut model.params);
            let grads = g.backward(loss, &mut model.params)?;
            for &id in grads.touched_params() {
                if trainable.contains(&id) {
                    adamw_step(model.params.get_mut(id), cfg.lr, &opt)?;
                }
            }
        }
        train_loss.push(sum / n_batches.max(1) as f64);
    }
    zero_grads(&mut model.params);
    let report = evaluate(&model, test, cfg.threshold)?;
    Ok(DownstreamRun {
        model,
        report,
        train_loss,
    })
}
