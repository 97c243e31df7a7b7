//! Self-supervised objectives and their multi-task sums.
//!
//! Every loss is built on a [`Graph`] so that gradients reach whichever
//! heads produced its inputs. The eager `*_value` helpers wrap the same code
//! for callers that only need numbers.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::heads::PerModality;
use crate::numeric::{seeded_rng, Graph, MarginMode, NodeId, ParamSet, Real, Tensor};

/// Pretraining method; decides which loss components are summed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    InstanceCont,
    MultiCont,
    Generative,
    ConClu,
    ConGen,
    ConCluGen,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::InstanceCont,
        Method::MultiCont,
        Method::Generative,
        Method::ConClu,
        Method::ConGen,
        Method::ConCluGen,
    ];

    /// Components summed into this method's objective, in summation order.
    pub fn components(self) -> &'static [Component] {
        use Component::*;
        match self {
            Method::InstanceCont => &[InfoNce],
            Method::MultiCont => &[Mms],
            Method::Generative => &[Reconstruction],
            Method::ConClu => &[Mms, Clustering],
            Method::ConGen => &[Mms, Reconstruction],
            Method::ConCluGen => &[Mms, Clustering, Reconstruction],
        }
    }

    pub fn uses(self, c: Component) -> bool {
        self.components().contains(&c)
    }

    /// Whether any component needs in-batch negatives.
    pub fn is_contrastive(self) -> bool {
        self.uses(Component::Mms) || self.uses(Component::InfoNce)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Mms,
    Clustering,
    Reconstruction,
    InfoNce,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::Mms,
        Component::Clustering,
        Component::Reconstruction,
        Component::InfoNce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Mms => "mms",
            Component::Clustering => "clustering",
            Component::Reconstruction => "reconstruction",
            Component::InfoNce => "info_nce",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub noise_sigma: f64,
    pub mask_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.1,
            mask_prob: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_true")]
    pub normalize_embeddings: bool,
    #[serde(default)]
    pub augment: AugmentConfig,
}

fn default_temperature() -> f64 {
    0.1
}
fn default_margin() -> f64 {
    0.001
}
fn default_true() -> bool {
    true
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            margin: default_margin(),
            normalize_embeddings: true,
            augment: AugmentConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::config("loss.temperature", "must be positive"));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::config("loss.margin", "must be non-negative"));
        }
        if !(self.augment.noise_sigma >= 0.0) {
            return Err(Error::config("loss.augment.noise_sigma", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.augment.mask_prob) {
            return Err(Error::config("loss.augment.mask_prob", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Total objective and the components that went into it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub components: BTreeMap<Component, f64>,
}

impl LossBreakdown {
    /// Component value, or 0 when the method does not use it.
    pub fn get(&self, c: Component) -> f64 {
        self.components.get(&c).copied().unwrap_or(0.0)
    }
}

/// `x' = mask ⊙ (x + ε)` with `ε ~ N(0, σ²)` and each coordinate zeroed with
/// probability `mask_prob`. Deterministic in `seed`.
pub fn feature_augment<T: Real>(x: &Tensor<T>, seed: u64, noise_sigma: f64, mask_prob: f64) -> Tensor<T> {
    let mut rng = seeded_rng(seed, 0);
    let mut out = x.clone();
    for v in out.data_mut() {
        if noise_sigma > 0.0 {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v = *v + T::from_f64(noise_sigma * e);
        }
        if mask_prob > 0.0 && rng.random_bool(mask_prob) {
            *v = T::zero();
        }
    }
    out
}

/// InfoNCE over two views. Anchors are the rows of `p`; the positive for
/// anchor `i` is row `i` of `p2`; the normalizer runs over all `2B`
/// embeddings except the anchor itself. Similarity is cosine over `tau`.
pub fn info_nce<T: Real>(g: &mut Graph<T>, p: NodeId, p2: NodeId, tau: f64) -> Result<NodeId> {
    if g.value(p).shape() != g.value(p2).shape() {
        return Err(Error::dim(format!(
            "info_nce: views {:?} and {:?} differ",
            g.value(p).shape(),
            g.value(p2).shape()
        )));
    }
    let b = g.value(p).rows();
    let all = g.concat_rows(&[p, p2])?;
    let all_n = g.normalize_rows(all)?;
    let anchors = g.normalize_rows(p)?;
    let sim = g.matmul_nt(anchors, all_n)?;
    let logits = g.scale(sim, T::from_f64(1.0 / tau));
    let targets: Vec<usize> = (0..b).map(|i| i + b).collect();
    let excluded: Vec<Option<usize>> = (0..b).map(Some).collect();
    g.cross_entropy(logits, &targets, Some(&excluded), 0.0, MarginMode::Shared)
}

/// Masked margin softmax between two aligned batches: the row-wise
/// (`a_i` against every `b_j`) and column-wise (`b_j` against every `a_i`)
/// softmax losses, each with `margin` subtracted from the matched logit.
pub fn mms_pair<T: Real>(g: &mut Graph<T>, a: NodeId, b: NodeId, margin: f64, normalize: bool) -> Result<NodeId> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(Error::dim(format!(
            "mms: batches {:?} and {:?} differ",
            g.value(a).shape(),
            g.value(b).shape()
        )));
    }
    let (a, b) = if normalize {
        (g.normalize_rows(a)?, g.normalize_rows(b)?)
    } else {
        (a, b)
    };
    let n = g.value(a).rows();
    let targets: Vec<usize> = (0..n).collect();
    let sim = g.matmul_nt(a, b)?;
    let rows = g.cross_entropy(sim, &targets, None, margin, MarginMode::Shared)?;
    let sim_t = g.transpose(sim)?;
    let cols = g.cross_entropy(sim_t, &targets, None, margin, MarginMode::Shared)?;
    g.add(rows, cols)
}

/// Sum of the pairwise MMS losses video–audio, video–text and audio–text.
pub fn mms_total<T: Real>(g: &mut Graph<T>, p: &PerModality, margin: f64, normalize: bool) -> Result<NodeId> {
    let get = |m: Modality| {
        p.get(&m)
            .copied()
            .ok_or_else(|| Error::contract(format!("mms_total: modality {m} is missing")))
    };
    let (v, t, a) = (get(Modality::Video)?, get(Modality::Text)?, get(Modality::Audio)?);
    let va = mms_pair(g, v, a, margin, normalize)?;
    let vt = mms_pair(g, v, t, margin, normalize)?;
    let at = mms_pair(g, a, t, margin, normalize)?;
    let s = g.add(va, vt)?;
    g.add(s, at)
}

/// Per-modality mean squared reconstruction error and their sum.
pub fn recon_loss<T: Real>(
    g: &mut Graph<T>,
    inputs: &PerModality,
    recons: &PerModality,
) -> Result<(NodeId, BTreeMap<Modality, NodeId>)> {
    if inputs.is_empty() {
        return Err(Error::contract("recon_loss: no modalities"));
    }
    let mut parts = BTreeMap::new();
    // video, audio, text
    let order = [Modality::Video, Modality::Audio, Modality::Text];
    for m in order.into_iter().filter(|m| inputs.contains_key(m)) {
        let x = inputs[&m];
        let xr = recons
            .get(&m)
            .copied()
            .ok_or_else(|| Error::contract(format!("recon_loss: no reconstruction for {m}")))?;
        parts.insert(m, g.mse(x, xr)?);
    }
    let mut total: Option<NodeId> = None;
    for m in order {
        if let Some(&p) = parts.get(&m) {
            total = Some(match total {
                None => p,
                Some(t) => g.add(t, p)?,
            });
        }
    }
    Ok((total.expect("at least one part"), parts))
}

/// Mean over the batch of `-log(exp(R_i·C_j(i) - δ) / Σ_k exp(R_i·C_k))`.
/// Centroids enter as constants.
pub fn clustering_loss<T: Real>(
    g: &mut Graph<T>,
    r: NodeId,
    assignments: &[usize],
    centroids: &Tensor<T>,
    margin: f64,
) -> Result<NodeId> {
    let (k, d) = centroids.require_matrix("centroids")?;
    if k == 0 {
        return Err(Error::contract("clustering_loss: empty centroid set"));
    }
    if g.value(r).cols() != d {
        return Err(Error::dim(format!(
            "clustering_loss: embeddings have width {}, centroids {d}",
            g.value(r).cols()
        )));
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= k) {
        return Err(Error::contract(format!(
            "clustering_loss: assignment {bad} out of range for {k} centroids"
        )));
    }
    let c = g.input(centroids.clone());
    let logits = g.matmul_nt(r, c)?;
    g.cross_entropy(logits, assignments, None, margin, MarginMode::NumeratorOnly)
}

/// Sums the components `method` requires, in its fixed order, on the graph.
/// Extra components are ignored.
pub fn multitask_total<T: Real>(
    g: &mut Graph<T>,
    method: Method,
    parts: &BTreeMap<Component, NodeId>,
) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for &c in method.components() {
        let node = *parts
            .get(&c)
            .ok_or_else(|| Error::contract(format!("{method} requires the `{c}` component")))?;
        total = Some(match total {
            None => node,
            Some(t) => g.add(t, node)?,
        });
    }
    Ok(total.expect("every method has a component"))
}

/// Scalar counterpart of [`multitask_total`]: an unweighted sum in the same
/// order and precision, so both agree bit for bit.
pub fn multitask_loss<T: Real>(method: Method, parts: &BTreeMap<Component, T>) -> Result<LossBreakdown> {
    let mut total: Option<T> = None;
    let mut components = BTreeMap::new();
    for &c in method.components() {
        let v = *parts
            .get(&c)
            .ok_or_else(|| Error::contract(format!("{method} requires the `{c}` component")))?;
        components.insert(c, v.as_f64());
        total = Some(match total {
            None => v,
            Some(t) => t + v,
        });
    }
    Ok(LossBreakdown {
        total: total.expect("every method has a component").as_f64(),
        components,
    })
}

fn eval_scalar<T: Real>(build: impl FnOnce(&mut Graph<T>) -> Result<NodeId>) -> Result<T> {
    let mut g = Graph::new();
    let out = build(&mut g)?;
    Ok(g.scalar(out))
}

pub fn info_nce_value<T: Real>(p: &Tensor<T>, p2: &Tensor<T>, tau: f64) -> Result<T> {
    eval_scalar(|g| {
        let (a, b) = (g.input(p.clone()), g.input(p2.clone()));
        info_nce(g, a, b, tau)
    })
}

pub fn mms_pair_value<T: Real>(a: &Tensor<T>, b: &Tensor<T>, margin: f64, normalize: bool) -> Result<T> {
    eval_scalar(|g| {
        let (x, y) = (g.input(a.clone()), g.input(b.clone()));
        mms_pair(g, x, y, margin, normalize)
    })
}

pub fn mms_total_value<T: Real>(
    v: &Tensor<T>,
    t: &Tensor<T>,
    a: &Tensor<T>,
    margin: f64,
    normalize: bool,
) -> Result<T> {
    eval_scalar(|g| {
        let p = BTreeMap::from([
            (Modality::Video, g.input(v.clone())),
            (Modality::Text, g.input(t.clone())),
            (Modality::Audio, g.input(a.clone())),
        ]);
        mms_total(g, &p, margin, normalize)
    })
}

/// Returns the total and the per-modality parts.
pub fn recon_loss_value<T: Real>(
    inputs: &BTreeMap<Modality, Tensor<T>>,
    recons: &BTreeMap<Modality, Tensor<T>>,
) -> Result<(T, BTreeMap<Modality, T>)> {
    let mut g = Graph::new();
    let xi: PerModality = inputs.iter().map(|(&m, t)| (m, g.input(t.clone()))).collect();
    let xr: PerModality = recons.iter().map(|(&m, t)| (m, g.input(t.clone()))).collect();
    let (total, parts) = recon_loss(&mut g, &xi, &xr)?;
    Ok((
        g.scalar(total),
        parts.into_iter().map(|(m, n)| (m, g.scalar(n))).collect(),
    ))
}

pub fn clustering_loss_value<T: Real>(
    r: &Tensor<T>,
    assignments: &[usize],
    centroids: &Tensor<T>,
    margin: f64,
) -> Result<T> {
    eval_scalar(|g| {
        let x = g.input(r.clone());
        clustering_loss(g, x, assignments, centroids, margin)
    })
}

/// Gradient of a loss with respect to its input leaves; test and
/// diagnostics helper.
pub fn input_gradients<T: Real>(
    inputs: &[Tensor<T>],
    build: impl FnOnce(&mut Graph<T>, &[NodeId]) -> Result<NodeId>,
) -> Result<(T, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let grads = g.backward(loss, &mut ParamSet::new())?;
    let out = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| {
            grads
                .wrt(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    Ok((g.scalar(loss), out))
}
