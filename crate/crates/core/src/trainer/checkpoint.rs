//! Checkpoint container: `b"MMCK"`, u32 version, u32 header length, a JSON
//! header, u32 entry count, then per entry a u32 name length, the UTF-8
//! name and an MMFT tensor. Little-endian throughout.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::PretrainConfig;
use crate::clustering::CentroidSet;
use crate::data::mmft;
use crate::error::{Error, Result};
use crate::heads::{Fusion, ModelBundle, ModelConfig};
use crate::losses::Method;
use crate::numeric::{ParamId, ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"MMCK";
pub const VERSION: u32 = 1;

/// Model, optimizer and clustering state at an epoch boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelBundle<f32>,
    /// Resolved pretraining config the model was trained with.
    pub config: PretrainConfig,
    /// Completed epochs.
    pub epoch: u64,
    pub global_step: u64,
    pub centroids: Option<CentroidSet<f32>>,
    /// Queue batches, oldest first.
    pub queue: Vec<Tensor<f32>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    method: Method,
    model: ModelConfig,
    config: PretrainConfig,
    epoch: u64,
    global_step: u64,
    /// All randomness is derived from this seed and the step position.
    seed: u64,
    #[serde(default)]
    classifier: Option<ClassifierMeta>,
    #[serde(default)]
    centroid_inertia: Option<f64>,
    step_counts: BTreeMap<String, u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassifierMeta {
    n_classes: usize,
    fusion: Fusion,
}

const REQUIRED: [&str; 6] = ["method", "model", "config", "epoch", "global_step", "seed"];

fn write_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn read_u32(r: &mut &[u8], what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Corrupt(format!("checkpoint truncated reading {what}")))?;
    Ok(u32::from_le_bytes(b))
}

impl Checkpoint {
    pub fn method(&self) -> Method {
        self.model.method
    }

    fn entries(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out = Vec::new();
        for p in self.model.params.iter() {
            out.push((p.name.clone(), &p.value));
        }
        for p in self.model.params.iter() {
            out.push((format!("opt.m1.{}", p.name), &p.moment1));
            out.push((format!("opt.m2.{}", p.name), &p.moment2));
        }
        if let Some(c) = &self.centroids {
            out.push(("centroids".to_string(), &c.centroids));
        }
        for (i, q) in self.queue.iter().enumerate() {
            out.push((format!("queue.{i}"), q));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            method: self.model.method,
            model: self.model.config.clone(),
            config: self.config.clone(),
            epoch: self.epoch,
            global_step: self.global_step,
            seed: self.config.seed,
            classifier: self.model.classifier().map(|(layer, fusion)| ClassifierMeta {
                n_classes: self.model.params.get(layer.bias).value.len(),
                fusion,
            }),
            centroid_inertia: self.centroids.as_ref().map(|c| c.inertia),
            step_counts: self
                .model
                .params
                .iter()
                .map(|p| (p.name.clone(), p.step_count))
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let entries = self.entries();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        write_u32(&mut out, VERSION);
        write_u32(&mut out, json.len() as u32);
        out.extend_from_slice(&json);
        write_u32(&mut out, entries.len() as u32);
        for (name, t) in entries {
            write_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            mmft::write_tensor(&mut out, t)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Corrupt("checkpoint truncated reading magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::Corrupt(format!("bad checkpoint magic {magic:?}")));
        }
        let version = read_u32(&mut r, "version")?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let len = read_u32(&mut r, "header length")? as usize;
        if r.len() < len {
            return Err(Error::Corrupt("checkpoint header truncated".into()));
        }
        let (json, mut r) = r.split_at(len);
        let value: serde_json::Value = serde_json::from_slice(json)?;
        for key in REQUIRED {
            if value.get(key).is_none_or(serde_json::Value::is_null) {
                return Err(Error::MissingField(key.to_string()));
            }
        }
        let header: Header = serde_json::from_value(value)?;

        let n = read_u32(&mut r, "entry count")?;
        let mut tensors = BTreeMap::new();
        for _ in 0..n {
            let name_len = read_u32(&mut r, "entry name length")? as usize;
            if r.len() < name_len {
                return Err(Error::Corrupt("entry name truncated".into()));
            }
            let (name, rest) = r.split_at(name_len);
            r = rest;
            let name = String::from_utf8(name.to_vec())
                .map_err(|_| Error::Corrupt("entry name is not UTF-8".into()))?;
            let t = mmft::read_tensor(&mut r)?;
            tensors.insert(name, t);
        }
        if !r.is_empty() {
            return Err(Error::Corrupt(format!("{} trailing bytes after entries", r.len())));
        }

        let mut model = ModelBundle::new(header.model.clone(), header.method, header.seed)?;
        if let Some(c) = &header.classifier {
            model.attach_classifier(c.n_classes, c.fusion, header.seed)?;
        }
        let names: Vec<String> = model.params.iter().map(|p| p.name.clone()).collect();
        for name in names {
            let id = model.params.id(&name).expect("name from the same set");
            let p = model.params.get_mut(id);
            for (slot, key) in [
                (&mut p.value, name.clone()),
                (&mut p.moment1, format!("opt.m1.{name}")),
                (&mut p.moment2, format!("opt.m2.{name}")),
            ] {
                let t = tensors.remove(&key).ok_or_else(|| Error::MissingField(key.clone()))?;
                if t.shape() != slot.shape() {
                    return Err(Error::Corrupt(format!(
                        "entry `{key}` has shape {:?}, model expects {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                }
                *slot = t;
            }
            p.step_count = header.step_counts.get(&name).copied().unwrap_or(0);
        }
        let centroids = match tensors.remove("centroids") {
            Some(c) => {
                let (k, dim) = c.require_matrix("centroids")?;
                Some(CentroidSet {
                    k,
                    dim,
                    centroids: c,
                    inertia: header.centroid_inertia.unwrap_or(0.0),
                })
            }
            None => None,
        };
        let mut queue = Vec::new();
        while let Some(q) = tensors.remove(&format!("queue.{}", queue.len())) {
            queue.push(q);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Corrupt(format!("unexpected entry `{extra}`")));
        }
        Ok(Self {
            model,
            config: header.config,
            epoch: header.epoch,
            global_step: header.global_step,
            centroids,
            queue,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile {
                path: path.to_path_buf(),
                sample: None,
            },
            _ => Error::Io(e),
        })?;
        Self::from_bytes(&bytes)
    }
}

/// FNV-1a over the names, shapes and raw bits of the given parameters.
pub fn params_digest(params: &ParamSet<f32>, ids: &[ParamId]) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    for &id in ids {
        let p = params.get(id);
        eat(p.name.as_bytes());
        for &d in p.value.shape() {
            eat(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            eat(&v.to_bits().to_le_bytes());
        }
    }
    h
}
