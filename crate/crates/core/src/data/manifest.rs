//! The dataset index: a single JSON document whose paths are relative to
//! the manifest's own directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pgm::load_image;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;

pub const PATCH_CLASSES: [&str; 5] = [
    "background",
    "benign-calc",
    "malignant-calc",
    "benign-mass",
    "malignant-mass",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    TwoView,
    FourView,
    Patch,
}

impl DatasetKind {
    pub fn views(self) -> usize {
        match self {
            DatasetKind::FourView => 4,
            _ => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LesionKind {
    Calc,
    Mass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LesionShape {
    Round,
    Spiculated,
}

/// Five-way patch class of a lesion.
pub fn lesion_class(kind: LesionKind, shape: LesionShape) -> usize {
    1 + 2 * (kind == LesionKind::Mass) as usize + (shape == LesionShape::Spiculated) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Lesion {
    pub kind: LesionKind,
    pub shape: LesionShape,
    /// Index of the first view of the side the lesion belongs to.
    #[serde(default)]
    pub side: usize,
    /// `[x0, y0, x1, y1)` per view of its side.
    pub boxes: Vec<[usize; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Entry {
    pub id: String,
    pub views: Vec<String>,
    /// Binary labels, one per head (one per breast side for four views).
    #[serde(default)]
    pub labels: Vec<u8>,
    /// Five-way class id of a patch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    /// Lesion masks, one per view.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masks: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lesions: Vec<Lesion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Metadata {
    pub kind: DatasetKind,
    /// `[height, width]`.
    pub image_size: [usize; 2],
    pub views_per_sample: usize,
    pub class_names: Vec<String>,
    /// Row-major 2×3 pixel-space map from the first view to the second.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_transform: Option<[[f64; 3]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_rule: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Manifest {
    pub manifest_version: u32,
    pub metadata: Metadata,
    pub entries: Vec<Entry>,
}

impl Manifest {
    pub fn new(metadata: Metadata, entries: Vec<Entry>) -> Self {
        Manifest {
            manifest_version: MANIFEST_VERSION,
            metadata,
            entries,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.manifest_version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest-version {}",
                self.manifest_version
            )));
        }
        let v = self.metadata.views_per_sample;
        for e in &self.entries {
            if e.views.len() != v {
                return Err(Error::Format(format!("{}: {} views, expected {v}", e.id, e.views.len())));
            }
            if !e.masks.is_empty() && e.masks.len() != v {
                return Err(Error::Format(format!("{}: masks must cover every view", e.id)));
            }
            match self.metadata.kind {
                DatasetKind::FourView if e.labels.len() != 2 => {
                    return Err(Error::Format(format!("{}: four-view entries need two labels", e.id)))
                }
                DatasetKind::Patch if e.class.is_none_or(|c| c >= PATCH_CLASSES.len()) => {
                    return Err(Error::Format(format!("{}: patch entries need a class in 0..5", e.id)))
                }
                _ => {}
            }
            if e.labels.iter().any(|&l| l > 1) {
                return Err(Error::Format(format!("{}: labels must be 0 or 1", e.id)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn subset(&self, ids: &[String]) -> Manifest {
        let keep: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        Manifest {
            manifest_version: self.manifest_version,
            metadata: self.metadata.clone(),
            entries: self.entries.iter().filter(|e| keep.contains(e.id.as_str())).cloned().collect(),
        }
    }
}

/// One decoded sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `(V, H, W)`.
    pub views: Tensor<f32>,
    pub labels: Vec<u8>,
    pub class: Option<usize>,
    /// `(V, H, W)` with values in `{0, 1}`.
    pub masks: Option<Tensor<f32>>,
}

/// A manifest with every image decoded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub metadata: Metadata,
    pub samples: Vec<Sample>,
}

fn stack_planes(planes: &[Tensor<f32>], id: &str) -> Result<Tensor<f32>> {
    let shape = planes[0].shape().to_vec();
    if planes.iter().any(|p| p.shape() != shape.as_slice()) {
        return Err(Error::Format(format!("{id}: views differ in size")));
    }
    let (h, w) = (shape[1], shape[2]);
    let data = planes.iter().flat_map(|p| p.data().iter().copied()).collect();
    Tensor::new(&[planes.len(), h, w], data)
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_manifest(&manifest, &root)
    }

    pub fn from_manifest(manifest: &Manifest, root: &Path) -> Result<Self> {
        manifest.validate()?;
        let resolve = |p: &str| -> PathBuf { root.join(p) };
        let mut samples = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let planes: Vec<Tensor<f32>> = e.views.iter().map(|p| load_image(&resolve(p))).collect::<Result<_>>()?;
            let views = stack_planes(&planes, &e.id)?;
            let masks = if e.masks.is_empty() {
                None
            } else {
                let m: Vec<Tensor<f32>> = e
                    .masks
                    .iter()
                    .map(|p| Ok(load_image(&resolve(p))?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })))
                    .collect::<Result<_>>()?;
                let m = stack_planes(&m, &e.id)?;
                if m.shape() != views.shape() {
                    return Err(Error::Format(format!("{}: mask size differs from views", e.id)));
                }
                Some(m)
            };
            samples.push(Sample {
                id: e.id.clone(),
                views,
                labels: e.labels.clone(),
                class: e.class,
                masks,
            });
        }
        Ok(Dataset {
            metadata: manifest.metadata.clone(),
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            metadata: self.metadata.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}
