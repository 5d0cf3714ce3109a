//! JSON manifests: a benchmark manifest lists per-class image pools, an
//! episode manifest lists one task's support and query images. Relative
//! paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::annotation::{mask_to_tight_boxes, BoundingBox, Connectivity};
use crate::error::{PromiError, Result};
use crate::feature_store::{load_feature_map_with_geometry, FeatureMap, ImageGeometry};
use crate::mask::SegmentationMask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub feature_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<BoundingBox>>,
    pub image_h: usize,
    pub image_w: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_image_path: Option<PathBuf>,
}

impl ImageEntry {
    pub fn geometry(&self) -> ImageGeometry {
        ImageGeometry {
            image_h: self.image_h,
            image_w: self.image_w,
        }
    }

    pub fn resolved(&self, base: &Path) -> Self {
        let abs = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        Self {
            feature_path: abs(&self.feature_path),
            mask_path: self.mask_path.as_ref().map(abs),
            boxes: self.boxes.clone(),
            image_h: self.image_h,
            image_w: self.image_w,
            source_image_path: self.source_image_path.as_ref().map(abs),
        }
    }

    pub fn load_features(&self) -> Result<FeatureMap> {
        load_feature_map_with_geometry(&self.feature_path, self.geometry())
    }

    pub fn load_mask(&self) -> Result<SegmentationMask> {
        let path = self
            .mask_path
            .as_ref()
            .ok_or_else(|| PromiError::Manifest(format!("{} has no mask_path", self.feature_path.display())))?;
        let mask = SegmentationMask::load_png(path)?;
        if (mask.height(), mask.width()) != (self.image_h, self.image_w) {
            return Err(PromiError::Shape(format!(
                "{}: mask is {}x{}, manifest says {}x{}",
                path.display(),
                mask.height(),
                mask.width(),
                self.image_h,
                self.image_w
            )));
        }
        Ok(mask)
    }

    /// Explicit boxes if present, otherwise tight boxes derived from the mask.
    pub fn support_boxes(&self, connectivity: Connectivity, min_component_px: usize) -> Result<Vec<BoundingBox>> {
        match &self.boxes {
            Some(b) => Ok(b.clone()),
            None if self.mask_path.is_some() => {
                Ok(mask_to_tight_boxes(&self.load_mask()?, connectivity, min_component_px))
            }
            None => Err(PromiError::Manifest(format!(
                "support image {} has neither boxes nor mask_path",
                self.feature_path.display()
            ))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.image_h == 0 || self.image_w == 0 {
            return Err(PromiError::Manifest(format!(
                "{}: image dimensions must be positive",
                self.feature_path.display()
            )));
        }
        for b in self.boxes.iter().flatten() {
            b.validate(self.image_h, self.image_w)?;
        }
        Ok(())
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| PromiError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PromiError::Manifest(format!("{}: {e}", path.display())))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Class name → image pool, in file order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub classes: IndexMap<String, Vec<ImageEntry>>,
}

impl BenchmarkManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let raw: Self = read_json(path)?;
        Ok(raw.resolved(&base_dir(path)))
    }

    pub fn resolved(&self, base: &Path) -> Self {
        Self {
            classes: self
                .classes
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|e| e.resolved(base)).collect()))
                .collect(),
        }
    }

    /// Every class needs at least `shots + 1` images (support plus query).
    pub fn validate(&self, shots: usize) -> Result<()> {
        if self.classes.is_empty() {
            return Err(PromiError::Manifest("benchmark manifest lists no classes".into()));
        }
        for (name, pool) in &self.classes {
            if pool.is_empty() {
                return Err(PromiError::Manifest(format!("class {name:?} has an empty image pool")));
            }
            if pool.len() < shots + 1 {
                return Err(PromiError::Manifest(format!(
                    "class {name:?} has {} images, {shots}-shot tasks need {}",
                    pool.len(),
                    shots + 1
                )));
            }
            pool.iter().try_for_each(ImageEntry::validate)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }
}

/// One task: support images with boxes, query images with ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub class_id: String,
    pub support: Vec<ImageEntry>,
    #[serde(default)]
    pub query: Vec<ImageEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_index: Option<usize>,
}

impl Episode {
    fn read(path: &Path) -> Result<Self> {
        let raw: Self = read_json(path)?;
        let base = base_dir(path);
        Ok(Self {
            support: raw.support.iter().map(|e| e.resolved(&base)).collect(),
            query: raw.query.iter().map(|e| e.resolved(&base)).collect(),
            ..raw
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ep = Self::read(path)?;
        ep.validate()?;
        Ok(ep)
    }

    /// Loads an episode that only needs its support half (the query list
    /// may be empty).
    pub fn load_support(path: &Path) -> Result<Self> {
        let ep = Self::read(path)?;
        if ep.support.is_empty() {
            return Err(PromiError::Manifest(format!(
                "{}: episode has no support images",
                path.display()
            )));
        }
        ep.support.iter().chain(&ep.query).try_for_each(ImageEntry::validate)?;
        Ok(ep)
    }

    /// Loads an episode whose query list is used on its own.
    pub fn load_query(path: &Path) -> Result<Self> {
        let ep = Self::read(path)?;
        if ep.query.is_empty() {
            return Err(PromiError::Manifest(format!(
                "{}: episode has no query images",
                path.display()
            )));
        }
        ep.support.iter().chain(&ep.query).try_for_each(ImageEntry::validate)?;
        Ok(ep)
    }

    pub fn validate(&self) -> Result<()> {
        if self.support.is_empty() {
            return Err(PromiError::Manifest("episode has no support images".into()));
        }
        if self.query.is_empty() {
            return Err(PromiError::Manifest("episode has no query images".into()));
        }
        self.support
            .iter()
            .chain(&self.query)
            .try_for_each(ImageEntry::validate)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("manifest serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| PromiError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_schema_and_resolves_paths() {
        let json = r#"{
            "classes": {
                "cat": [
                    {"feature_path": "f/a.npy", "mask_path": "m/a.png", "image_h": 10, "image_w": 12},
                    {"feature_path": "/abs/b.npy", "boxes": [[0, 0, 4, 5]], "image_h": 10, "image_w": 12, "source_image_path": "img/b.jpg"}
                ],
                "ant": [
                    {"feature_path": "c.npy", "boxes": [], "image_h": 3, "image_w": 3}
                ]
            }
        }"#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.json");
        std::fs::write(&path, json).unwrap();
        let m = BenchmarkManifest::load(&path).unwrap();
        let names: Vec<&String> = m.classes.keys().collect();
        assert_eq!(names, ["cat", "ant"]);
        assert_eq!(m.classes["cat"][0].feature_path, dir.path().join("f/a.npy"));
        assert_eq!(m.classes["cat"][1].feature_path, PathBuf::from("/abs/b.npy"));
        assert_eq!(m.classes["cat"][1].boxes, Some(vec![BoundingBox::new(0, 0, 4, 5)]));
        assert!(m.validate(1).is_err(), "ant has a single image");
    }

    #[test]
    fn empty_pool_is_a_manifest_error() {
        let m: BenchmarkManifest = serde_json::from_str(r#"{"classes": {"x": []}}"#).unwrap();
        assert!(matches!(m.validate(1), Err(PromiError::Manifest(_))));
        let m: BenchmarkManifest = serde_json::from_str(r#"{"classes": {}}"#).unwrap();
        assert!(matches!(m.validate(1), Err(PromiError::Manifest(_))));
    }

    #[test]
    fn box_outside_image_is_rejected() {
        let m: BenchmarkManifest = serde_json::from_str(
            r#"{"classes": {"x": [
                {"feature_path": "a.npy", "boxes": [[0, 0, 20, 2]], "image_h": 4, "image_w": 4},
                {"feature_path": "b.npy", "boxes": [], "image_h": 4, "image_w": 4}
            ]}}"#,
        )
        .unwrap();
        assert!(matches!(m.validate(1), Err(PromiError::Annotation(_))));
    }

    #[test]
    fn episode_needs_support_and_query() {
        let e = Episode {
            class_id: "c".into(),
            support: vec![],
            query: vec![],
            seed: None,
            task_index: None,
        };
        assert!(matches!(e.validate(), Err(PromiError::Manifest(_))));
    }
}
