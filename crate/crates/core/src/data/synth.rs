//! Synthetic multi-modal dataset generator.
//!
//! Each sample draws a class, a shared latent `s = center[class] + spread·u`
//! and, per modality, independent noise `e`. The modality feature is a fixed
//! random linear map of `ρ·s + (1-ρ)·e`, so `ρ` dials how much of each
//! modality is explained by the shared latent.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::batch::SplitData;
use super::manifest::{
    save_manifest, Label, Manifest, Modality, SampleRecord, SampleRef, Split, TaskType,
};
use super::{mmft, ModalityFeature};
use crate::error::{Error, Result};
use crate::numeric::{seeded_rng, Tensor};
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub n_samples: usize,
    pub n_classes: usize,
    pub latent_dim: usize,
    pub modality_dims: BTreeMap<Modality, usize>,
    pub cross_modal_correlation: f64,
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub multi_label: bool,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of the per-sample offset around its class center.
    #[serde(default = "default_spread")]
    pub class_spread: f64,
    /// Standard deviation of the modality-specific noise.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_name() -> String {
    "synthetic".into()
}
fn default_spread() -> f64 {
    1.0
}
fn default_noise_scale() -> f64 {
    6.0
}
fn default_train_fraction() -> f64 {
    0.7
}
fn default_val_fraction() -> f64 {
    0.1
}

/// Probability that a multi-label sample blends in a second class.
const SECOND_CLASS_PROB: f64 = 0.3;

impl SynthConfig {
    /// A small three-modality configuration that trains in seconds.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            name: default_name(),
            n_samples: 1200,
            n_classes: 6,
            latent_dim: 8,
            modality_dims: BTreeMap::from([
                (Modality::Video, 32),
                (Modality::Text, 24),
                (Modality::Audio, 16),
            ]),
            cross_modal_correlation: 0.9,
            label_noise: 0.0,
            multi_label: false,
            seed,
            class_spread: default_spread(),
            noise_scale: default_noise_scale(),
            train_fraction: default_train_fraction(),
            val_fraction: default_val_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |field: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(field, format!("{v} is outside [0, 1]")))
            }
        };
        unit("cross_modal_correlation", self.cross_modal_correlation)?;
        unit("label_noise", self.label_noise)?;
        unit("train_fraction", self.train_fraction)?;
        unit("val_fraction", self.val_fraction)?;
        if self.train_fraction + self.val_fraction > 1.0 {
            return Err(Error::config("val_fraction", "train + val fractions exceed 1"));
        }
        if self.n_samples == 0 {
            return Err(Error::config("n_samples", "must be positive"));
        }
        if self.n_classes == 0 {
            return Err(Error::config("n_classes", "must be positive"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be positive"));
        }
        if self.modality_dims.is_empty() {
            return Err(Error::config("modality_dims", "needs at least one modality"));
        }
        for (m, &d) in &self.modality_dims {
            if d == 0 {
                return Err(Error::config(format!("modality_dims.{m}"), "must be positive"));
            }
        }
        if !(self.class_spread >= 0.0) || !(self.noise_scale >= 0.0) {
            return Err(Error::config("class_spread/noise_scale", "must be non-negative"));
        }
        Ok(())
    }
}

/// Generated samples, still in memory.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub manifest: Manifest,
    pub records: BTreeMap<Split, Vec<SampleRecord>>,
}

impl SynthDataset {
    pub fn split_data(&self, split: Split) -> Result<SplitData> {
        let records = self.records.get(&split).map_or(&[][..], Vec::as_slice);
        SplitData::from_records(records, self.manifest.task_type, self.manifest.n_classes())
    }
}

fn normal_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn feature_path(id: &str, m: Modality) -> PathBuf {
    PathBuf::from("features").join(format!("{id}_{m}.mmft"))
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed, seeds::SYNTH);
    let latent = cfg.latent_dim;
    let centers: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| normal_vec(&mut rng, latent, 1.0))
        .collect();
    let maps: BTreeMap<Modality, Vec<f64>> = cfg
        .modality_dims
        .iter()
        .map(|(&m, &d)| (m, normal_vec(&mut rng, d * latent, 1.0 / (latent as f64).sqrt())))
        .collect();
    let rho = cfg.cross_modal_correlation;

    let n_train = (cfg.n_samples as f64 * cfg.train_fraction).round() as usize;
    let n_val = (cfg.n_samples as f64 * cfg.val_fraction).round() as usize;
    let mut records: BTreeMap<Split, Vec<SampleRecord>> = BTreeMap::new();

    for i in 0..cfg.n_samples {
        let class = rng.random_range(0..cfg.n_classes);
        let mut classes = vec![class];
        let mut center = centers[class].clone();
        if cfg.multi_label && cfg.n_classes > 1 && rng.random_bool(SECOND_CLASS_PROB) {
            let other = (class + rng.random_range(1..cfg.n_classes)) % cfg.n_classes;
            classes.push(other);
            for (c, o) in center.iter_mut().zip(&centers[other]) {
                *c = 0.5 * (*c + o);
            }
        }
        let offset = normal_vec(&mut rng, latent, cfg.class_spread);
        let shared: Vec<f64> = center.iter().zip(&offset).map(|(c, u)| c + u).collect();

        let id = format!("s{i:05}");
        let mut features = BTreeMap::new();
        for (&m, map) in &maps {
            let noise = normal_vec(&mut rng, latent, cfg.noise_scale);
            let mix: Vec<f64> = shared
                .iter()
                .zip(&noise)
                .map(|(s, e)| rho * s + (1.0 - rho) * e)
                .collect();
            let dim = cfg.modality_dims[&m];
            let x: Vec<f32> = (0..dim)
                .map(|r| {
                    map[r * latent..(r + 1) * latent]
                        .iter()
                        .zip(&mix)
                        .map(|(a, h)| a * h)
                        .sum::<f64>() as f32
                })
                .collect();
            features.insert(
                m,
                ModalityFeature {
                    modality: m,
                    dim,
                    vector: Tensor::vector(x),
                },
            );
        }

        let label = if cfg.multi_label {
            let mut bits = vec![0u8; cfg.n_classes];
            for &c in &classes {
                bits[c] = 1;
            }
            for b in bits.iter_mut() {
                if rng.random_bool(cfg.label_noise) {
                    *b ^= 1;
                }
            }
            if bits.iter().all(|&b| b == 0) {
                bits[class] = 1;
            }
            Label::Multi(bits)
        } else {
            let mut c = class;
            if cfg.n_classes > 1 && rng.random_bool(cfg.label_noise) {
                c = (class + rng.random_range(1..cfg.n_classes)) % cfg.n_classes;
            }
            Label::Class(c)
        };

        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        records.entry(split).or_default().push(SampleRecord {
            sample_id: id,
            features,
            label: Some(label),
        });
    }

    let splits = [Split::Train, Split::Val, Split::Test]
        .into_iter()
        .map(|s| {
            let refs = records
                .get(&s)
                .map(|rs| {
                    rs.iter()
                        .map(|r| SampleRef {
                            sample_id: r.sample_id.clone(),
                            features: r
                                .features
                                .keys()
                                .map(|&m| (m, feature_path(&r.sample_id, m)))
                                .collect(),
                            label: r.label.clone(),
                        })
                        .collect()
                })
                .unwrap_or_default();
            (s, refs)
        })
        .collect();

    let manifest = Manifest {
        name: cfg.name.clone(),
        task_type: if cfg.multi_label {
            TaskType::MultiLabel
        } else {
            TaskType::SingleLabel
        },
        class_names: (0..cfg.n_classes).map(|c| format!("class_{c}")).collect(),
        modality_dims: cfg.modality_dims.clone(),
        splits,
    };
    Ok(SynthDataset { manifest, records })
}

/// Generates a dataset and writes `manifest.json` plus one MMFT file per
/// sample and modality under `out_dir`.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    let ds = generate(cfg)?;
    fs::create_dir_all(out_dir.join("features"))?;
    for rs in ds.records.values() {
        for r in rs {
            for (&m, f) in &r.features {
                mmft::save(&out_dir.join(feature_path(&r.sample_id, m)), &f.vector)?;
            }
        }
    }
    save_manifest(&ds.manifest, &out_dir.join("manifest.json"))?;
    Ok(ds.manifest)
}
