use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mmft;
use super::sequence::average_over_time;
use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Video,
    Text,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Video, Modality::Text, Modality::Audio];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Text => "text",
            Modality::Audio => "audio",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    SingleLabel,
    MultiLabel,
    Unlabeled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// A class index for single-label tasks or a 0/1 vector over classes for
/// multi-label tasks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(usize),
    Multi(Vec<u8>),
}

/// Binarizes Likert-style intensities: anything above zero becomes 1.
pub fn binarize_intensities(values: &[f32]) -> Vec<u8> {
    values.iter().map(|&v| u8::from(v > 0.0)).collect()
}

/// Manifest entry pointing at one sample's feature files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRef {
    pub sample_id: String,
    pub features: BTreeMap<Modality, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub task_type: TaskType,
    #[serde(default)]
    pub class_names: Vec<String>,
    pub modality_dims: BTreeMap<Modality, usize>,
    pub splits: BTreeMap<Split, Vec<SampleRef>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModalityFeature {
    pub modality: Modality,
    pub dim: usize,
    pub vector: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub features: BTreeMap<Modality, ModalityFeature>,
    pub label: Option<Label>,
}

impl Manifest {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self, split: Split) -> &[SampleRef] {
        self.splits.get(&split).map_or(&[], Vec::as_slice)
    }

    /// Checks the structural invariants that do not need feature files.
    pub fn validate(&self, path: &Path) -> Result<()> {
        let schema = |reason: String| Error::Schema {
            path: path.to_path_buf(),
            reason,
        };
        if self.task_type != TaskType::Unlabeled && self.class_names.is_empty() {
            return Err(schema("class_names must be non-empty for labeled tasks".into()));
        }
        for (m, &d) in &self.modality_dims {
            if d == 0 {
                return Err(schema(format!("modality_dims.{m} must be positive")));
            }
        }
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for (&split, refs) in &self.splits {
            for r in refs {
                if let Some(&first) = seen.get(r.sample_id.as_str()) {
                    return Err(Error::SplitOverlap {
                        sample: r.sample_id.clone(),
                        first: first.name().into(),
                        second: split.name().into(),
                    });
                }
                seen.insert(&r.sample_id, split);
                for m in r.features.keys() {
                    if !self.modality_dims.contains_key(m) {
                        return Err(schema(format!(
                            "sample `{}` lists undeclared modality `{m}`",
                            r.sample_id
                        )));
                    }
                }
                self.check_label(r).map_err(schema)?;
            }
        }
        Ok(())
    }

    fn check_label(&self, r: &SampleRef) -> std::result::Result<(), String> {
        let n = self.n_classes();
        match (self.task_type, &r.label) {
            (TaskType::Unlabeled, None) => Ok(()),
            (TaskType::Unlabeled, Some(_)) => Err(format!(
                "sample `{}` carries a label in an unlabeled manifest",
                r.sample_id
            )),
            (_, None) => Ok(()),
            (TaskType::SingleLabel, Some(Label::Class(c))) if *c < n => Ok(()),
            (TaskType::MultiLabel, Some(Label::Multi(v)))
                if v.len() == n && v.iter().all(|&b| b <= 1) =>
            {
                Ok(())
            }
            (t, Some(l)) => Err(format!(
                "sample `{}` has label {l:?} incompatible with {t:?} over {n} classes",
                r.sample_id
            )),
        }
    }
}

/// A parsed manifest plus the directory its feature paths are relative to.
/// Feature files are read and validated on demand.
#[derive(Clone, Debug)]
pub struct FeatureStore {
    pub manifest: Manifest,
    root: PathBuf,
}

pub fn load_manifest(path: &Path) -> Result<FeatureStore> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile {
            path: path.to_path_buf(),
            sample: None,
        },
        _ => Error::Io(e),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    manifest.validate(path)?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(FeatureStore { manifest, root })
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

impl FeatureStore {
    pub fn new(manifest: Manifest, root: impl Into<PathBuf>) -> Self {
        Self {
            manifest,
            root: root.into(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Reads one sample's feature files, checking magic, version and dims.
    /// Files holding a `[time × dim]` sequence are averaged over time.
    pub fn read_record(&self, r: &SampleRef) -> Result<SampleRecord> {
        let mut features = BTreeMap::new();
        for (&m, rel) in &r.features {
            let path = self.root.join(rel);
            let t = mmft::load(&path).map_err(|e| match e {
                Error::MissingFile { path, .. } => Error::MissingFile {
                    path,
                    sample: Some(r.sample_id.clone()),
                },
                Error::Corrupt(msg) => Error::Corrupt(format!("sample `{}`: {msg}", r.sample_id)),
                other => other,
            })?;
            let dim = self.manifest.modality_dims[&m];
            let vector = match t.shape() {
                [d] if *d == dim => t,
                [_, d] if *d == dim => {
                    let steps: Vec<Tensor<f32>> = (0..t.rows())
                        .map(|i| Tensor::vector(t.row(i).to_vec()))
                        .collect();
                    average_over_time(&steps)?
                }
                found => {
                    return Err(Error::DimMismatch {
                        sample: r.sample_id.clone(),
                        modality: m.name().into(),
                        expected: vec![dim],
                        found: found.to_vec(),
                    })
                }
            };
            if !vector.is_finite() {
                return Err(Error::Corrupt(format!(
                    "sample `{}`: non-finite {m} features",
                    r.sample_id
                )));
            }
            features.insert(
                m,
                ModalityFeature {
                    modality: m,
                    dim,
                    vector,
                },
            );
        }
        Ok(SampleRecord {
            sample_id: r.sample_id.clone(),
            features,
            label: r.label.clone(),
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<SampleRecord>> {
        self.manifest
            .split(split)
            .iter()
            .map(|r| self.read_record(r))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_sample(dir: &Path, id: &str, dims: &[(Modality, usize)]) -> SampleRef {
        let mut features = BTreeMap::new();
        for &(m, d) in dims {
            let rel = PathBuf::from(format!("{id}_{m}.mmft"));
            let v: Vec<f32> = (0..d).map(|i| i as f32 * 0.5).collect();
            mmft::save(&dir.join(&rel), &Tensor::vector(v)).unwrap();
            features.insert(m, rel);
        }
        SampleRef {
            sample_id: id.into(),
            features,
            label: Some(Label::Class(0)),
        }
    }

    fn manifest(train: Vec<SampleRef>, test: Vec<SampleRef>, video_dim: usize) -> Manifest {
        Manifest {
            name: "tiny".into(),
            task_type: TaskType::SingleLabel,
            class_names: vec!["a".into(), "b".into()],
            modality_dims: BTreeMap::from([
                (Modality::Video, video_dim),
                (Modality::Text, 3),
                (Modality::Audio, 2),
            ]),
            splits: BTreeMap::from([(Split::Train, train), (Split::Test, test)]),
        }
    }

    const DIMS: [(Modality, usize); 3] = [
        (Modality::Video, 4),
        (Modality::Text, 3),
        (Modality::Audio, 2),
    ];

    #[test]
    fn three_sample_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let refs: Vec<_> = ["s0", "s1", "s2"]
            .iter()
            .map(|id| write_sample(dir.path(), id, &DIMS))
            .collect();
        let m = manifest(refs[..2].to_vec(), refs[2..].to_vec(), 4);
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        let store = load_manifest(&path).unwrap();
        assert_eq!(store.manifest, m);
        let n: usize = store.manifest.splits.values().map(Vec::len).sum();
        assert_eq!(n, 3);
        let rec = store.load_split(Split::Train).unwrap();
        assert_eq!(rec[1].features[&Modality::Video].vector.data(), &[0.0, 0.5, 1.0, 1.5]);
    }

    #[test]
    fn dim_mismatch_names_the_sample() {
        let dir = tempfile::tempdir().unwrap();
        let r = write_sample(dir.path(), "clip_7", &DIMS);
        let m = manifest(vec![r], vec![], 6);
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        let store = load_manifest(&path).unwrap();
        let err = store.load_split(Split::Train).unwrap_err();
        match &err {
            Error::DimMismatch {
                sample,
                expected,
                found,
                ..
            } => {
                assert_eq!(sample, "clip_7");
                assert_eq!(expected, &[6]);
                assert_eq!(found, &[4]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("clip_7"));
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = write_sample(dir.path(), "dup", &DIMS);
        let m = manifest(vec![r.clone()], vec![r], 4);
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(Error::SplitOverlap { sample, .. }) if sample == "dup"
        ));
    }

    #[test]
    fn missing_feature_file_names_the_sample() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = write_sample(dir.path(), "gone", &DIMS);
        r.features.insert(Modality::Audio, PathBuf::from("nope.mmft"));
        let m = manifest(vec![r], vec![], 4);
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        let store = load_manifest(&path).unwrap();
        assert!(matches!(
            store.load_split(Split::Train),
            Err(Error::MissingFile { sample: Some(s), .. }) if s == "gone"
        ));
    }

    #[test]
    fn missing_manifest_and_bad_schema_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_manifest(&dir.path().join("absent.json")),
            Err(Error::MissingFile { .. })
        ));
        let path = dir.path().join("bad.json");
        fs::write(&path, r#"{"name": "x", "task_type": "regression"}"#).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Schema { .. })));
    }

    #[test]
    fn sequence_files_are_time_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = write_sample(dir.path(), "seq", &DIMS);
        let seq = Tensor::from_rows(&[vec![1.0, 0.0, 2.0, 4.0], vec![0.0, 1.0, 0.0, 0.0]]).unwrap();
        mmft::save(&dir.path().join("seq_video.mmft"), &seq).unwrap();
        r.features.insert(Modality::Video, PathBuf::from("seq_video.mmft"));
        let store = FeatureStore::new(manifest(vec![r.clone()], vec![], 4), dir.path());
        let rec = store.read_record(&r).unwrap();
        assert_eq!(rec.features[&Modality::Video].vector.data(), &[0.5, 0.5, 1.0, 2.0]);
    }

    #[test]
    fn likert_binarization() {
        assert_eq!(binarize_intensities(&[0.0, 0.33, 3.0, 0.0]), vec![0, 1, 1, 0]);
    }
}
