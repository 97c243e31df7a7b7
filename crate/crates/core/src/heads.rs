//! Model heads: per-modality representation heads (F), projection heads (J),
//! one clustering head (G) shared by every modality, per-modality decoders
//! (Q) and an optional downstream classifier.
//!
//! Heads emit raw vectors; any normalization happens in the losses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::losses::Method;
use crate::numeric::{init_linear, seeded_rng, Graph, NodeId, ParamId, ParamSet, Real};
use crate::seeds;

/// Per-modality node map used throughout the forward pass.
pub type PerModality = BTreeMap<Modality, NodeId>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub modality_dims: BTreeMap<Modality, usize>,
    #[serde(default = "default_representation_dim")]
    pub representation_dim: usize,
    #[serde(default = "default_projection_dim")]
    pub projection_dim: usize,
    #[serde(default = "default_cluster_dim")]
    pub cluster_dim: usize,
}

fn default_representation_dim() -> usize {
    4096
}
fn default_projection_dim() -> usize {
    512
}
fn default_cluster_dim() -> usize {
    256
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("representation_dim", self.representation_dim),
            ("projection_dim", self.projection_dim),
            ("cluster_dim", self.cluster_dim),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.modality_dims.is_empty() || self.modality_dims.values().any(|&d| d == 0) {
            return Err(Error::config("modality_dims", "needs positive dims"));
        }
        Ok(())
    }
}

/// How per-modality representations are combined for the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Concat,
    Mean,
    VisionOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    fn build<T: Real>(
        params: &mut ParamSet<T>,
        rng: &mut rand_chacha::ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let (w, b) = init_linear(rng, fan_in, fan_out);
        Self {
            weight: params.add(format!("{name}.weight"), w),
            bias: params.add(format!("{name}.bias"), b),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        g.linear(x, w, b)
    }
}

/// Linear layers with ReLU between them and no activation after the last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    fn build<T: Real>(
        params: &mut ParamSet<T>,
        rng: &mut rand_chacha::ChaCha8Rng,
        name: &str,
        widths: &[usize],
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::build(params, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = g.relu(h);
            }
            h = layer.forward(g, params, h)?;
        }
        Ok(h)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }
}

/// All heads of the architecture plus their parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle<T = f32> {
    pub params: ParamSet<T>,
    pub config: ModelConfig,
    pub method: Method,
    representation: BTreeMap<Modality, Mlp>,
    projection: BTreeMap<Modality, Mlp>,
    clustering: Linear,
    decoders: BTreeMap<Modality, Mlp>,
    classifier: Option<(Linear, Fusion)>,
}

impl<T: Real> ModelBundle<T> {
    /// Builds every head with seeded fan-in-scaled uniform initialization.
    pub fn new(config: ModelConfig, method: Method, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed, seeds::INIT);
        let mut params = ParamSet::new();
        let rep = config.representation_dim;
        let proj = config.projection_dim;
        let mut representation = BTreeMap::new();
        let mut projection = BTreeMap::new();
        let mut decoders = BTreeMap::new();
        for (&m, &dim) in &config.modality_dims {
            representation.insert(
                m,
                Mlp::build(&mut params, &mut rng, &format!("rep.{m}"), &[dim, rep, rep, rep]),
            );
        }
        for &m in config.modality_dims.keys() {
            projection.insert(
                m,
                Mlp::build(&mut params, &mut rng, &format!("proj.{m}"), &[rep, proj, proj]),
            );
        }
        let clustering = Linear::build(&mut params, &mut rng, "cluster", proj, config.cluster_dim);
        for (&m, &dim) in &config.modality_dims {
            decoders.insert(
                m,
                Mlp::build(&mut params, &mut rng, &format!("dec.{m}"), &[rep, rep, rep, dim]),
            );
        }
        Ok(Self {
            params,
            config,
            method,
            representation,
            projection,
            clustering,
            decoders,
            classifier: None,
        })
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.config.modality_dims.keys().copied().collect()
    }

    pub fn representation_head(&self, m: Modality) -> Option<&Mlp> {
        self.representation.get(&m)
    }

    pub fn projection_head(&self, m: Modality) -> Option<&Mlp> {
        self.projection.get(&m)
    }

    pub fn clustering_head(&self) -> Linear {
        self.clustering
    }

    pub fn decoder(&self, m: Modality) -> Option<&Mlp> {
        self.decoders.get(&m)
    }

    pub fn classifier(&self) -> Option<(Linear, Fusion)> {
        self.classifier
    }

    /// Width of the classifier input under `fusion`.
    pub fn fused_dim(&self, fusion: Fusion) -> usize {
        match fusion {
            Fusion::Concat => self.config.representation_dim * self.config.modality_dims.len(),
            Fusion::Mean | Fusion::VisionOnly => self.config.representation_dim,
        }
    }

    /// Adds (or replaces) the classifier head. Parameters are named
    /// `classifier.weight` / `classifier.bias`.
    pub fn attach_classifier(&mut self, n_classes: usize, fusion: Fusion, seed: u64) -> Result<()> {
        if n_classes == 0 {
            return Err(Error::config("n_classes", "must be positive"));
        }
        if fusion == Fusion::VisionOnly && !self.config.modality_dims.contains_key(&Modality::Video) {
            return Err(Error::contract("vision-only fusion needs a video modality"));
        }
        let fan_in = self.fused_dim(fusion);
        let mut rng = seeded_rng(seed, seeds::DOWNSTREAM);
        let (w, b) = init_linear(&mut rng, fan_in, n_classes);
        let layer = match self.params.id("classifier.weight") {
            Some(wid) => {
                let bid = self.params.id("classifier.bias").expect("bias registered with weight");
                *self.params.get_mut(wid) = crate::numeric::Parameter::new("classifier.weight", w);
                *self.params.get_mut(bid) = crate::numeric::Parameter::new("classifier.bias", b);
                Linear { weight: wid, bias: bid }
            }
            None => Linear {
                weight: self.params.add("classifier.weight", w),
                bias: self.params.add("classifier.bias", b),
            },
        };
        self.classifier = Some((layer, fusion));
        Ok(())
    }

    /// Parameters of the representation heads, in registration order.
    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.representation.values().flat_map(Mlp::param_ids).collect()
    }

    fn require(inputs: &PerModality, m: Modality, what: &str) -> Result<NodeId> {
        inputs
            .get(&m)
            .copied()
            .ok_or_else(|| Error::contract(format!("{what}: modality {m} is missing")))
    }

    /// `D_m = F_m(x_m)` for every modality in `modalities`.
    pub fn encode(&self, g: &mut Graph<T>, inputs: &PerModality, modalities: &[Modality]) -> Result<PerModality> {
        let mut out = BTreeMap::new();
        for &m in modalities {
            let x = Self::require(inputs, m, "encode")?;
            let head = self
                .representation
                .get(&m)
                .ok_or_else(|| Error::contract(format!("no representation head for {m}")))?;
            out.insert(m, head.forward(g, &self.params, x)?);
        }
        Ok(out)
    }

    /// `P_m = J_m(D_m)` for every modality present in `reps`.
    pub fn project(&self, g: &mut Graph<T>, reps: &PerModality) -> Result<PerModality> {
        reps.iter()
            .map(|(&m, &d)| {
                let head = self
                    .projection
                    .get(&m)
                    .ok_or_else(|| Error::contract(format!("no projection head for {m}")))?;
                Ok((m, head.forward(g, &self.params, d)?))
            })
            .collect()
    }

    /// `g_m = G(P_m)` with the same G for every modality.
    pub fn cluster_embed(&self, g: &mut Graph<T>, projections: &PerModality) -> Result<PerModality> {
        projections
            .iter()
            .map(|(&m, &p)| Ok((m, self.clustering.forward(g, &self.params, p)?)))
            .collect()
    }

    /// `x̂_m = Q_m(D_m)`.
    pub fn decode(&self, g: &mut Graph<T>, reps: &PerModality) -> Result<PerModality> {
        reps.iter()
            .map(|(&m, &d)| {
                let head = self
                    .decoders
                    .get(&m)
                    .ok_or_else(|| Error::contract(format!("no decoder for {m}")))?;
                Ok((m, head.forward(g, &self.params, d)?))
            })
            .collect()
    }

    /// Runs the classifier on fused representations.
    pub fn classify(&self, g: &mut Graph<T>, reps: &PerModality) -> Result<NodeId> {
        let (layer, fusion) = self
            .classifier
            .ok_or_else(|| Error::contract("no classifier attached"))?;
        let fused = fuse_for_classifier(g, reps, fusion)?;
        layer.forward(g, &self.params, fused)
    }
}

/// Modalities a method's pretraining objective reads.
pub fn required_modalities(method: Method) -> &'static [Modality] {
    match method {
        Method::InstanceCont => &[Modality::Video],
        _ => &Modality::ALL,
    }
}

/// Combines per-modality representations into one classifier input.
pub fn fuse_for_classifier<T: Real>(g: &mut Graph<T>, reps: &PerModality, fusion: Fusion) -> Result<NodeId> {
    match fusion {
        Fusion::VisionOnly => reps
            .get(&Modality::Video)
            .copied()
            .ok_or_else(|| Error::contract("vision-only fusion: video representation missing")),
        Fusion::Concat => {
            let parts = reps.values().copied().collect::<Vec<_>>();
            if parts.is_empty() {
                return Err(Error::contract("concat fusion: no representations"));
            }
            g.concat_cols(&parts)
        }
        Fusion::Mean => {
            let parts = reps.values().copied().collect::<Vec<_>>();
            let cols: Vec<usize> = parts.iter().map(|&p| g.value(p).cols()).collect();
            if cols.windows(2).any(|w| w[0] != w[1]) {
                return Err(Error::contract(format!(
                    "mean fusion needs equal widths, got {cols:?}"
                )));
            }
            g.mean_of(&parts)
        }
    }
}
