//! Feature-map data model, NPY interchange and L2 normalization.
//!
//! A feature map is a `grid_h × grid_w` grid of `depth`-dimensional vectors
//! stored row-major as `(grid_h, grid_w, depth)` `float32`. The geometry of
//! the source image travels next to the array in a small JSON sidecar
//! (`<name>.json`), so the array file itself stays a plain NPY.

mod npy;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PromiError, Result};

/// Pixel dimensions of the image a feature map was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageGeometry {
    pub image_h: usize,
    pub image_w: usize,
}

/// Encoder output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    grid_h: usize,
    grid_w: usize,
    depth: usize,
    data: Vec<f32>,
    image_h: usize,
    image_w: usize,
}

impl FeatureMap {
    pub fn new(grid_h: usize, grid_w: usize, depth: usize, data: Vec<f32>, geometry: ImageGeometry) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || depth == 0 {
            return Err(PromiError::Shape(format!(
                "feature grid must be non-empty, got {grid_h}x{grid_w}x{depth}"
            )));
        }
        if data.len() != grid_h * grid_w * depth {
            return Err(PromiError::Shape(format!(
                "expected {} values for {grid_h}x{grid_w}x{depth}, got {}",
                grid_h * grid_w * depth,
                data.len()
            )));
        }
        if geometry.image_h == 0 || geometry.image_w == 0 {
            return Err(PromiError::Shape("image dimensions must be positive".into()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(PromiError::Data(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self {
            grid_h,
            grid_w,
            depth,
            data,
            image_h: geometry.image_h,
            image_w: geometry.image_w,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn image_h(&self) -> usize {
        self.image_h
    }

    pub fn image_w(&self) -> usize {
        self.image_w
    }

    pub fn geometry(&self) -> ImageGeometry {
        ImageGeometry {
            image_h: self.image_h,
            image_w: self.image_w,
        }
    }

    /// Number of patches (`grid_h * grid_w`).
    pub fn num_patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Feature vector of patch `(row, col)`.
    pub fn vector(&self, row: usize, col: usize) -> &[f32] {
        self.patch(row * self.grid_w + col)
    }

    /// Feature vector of the patch at row-major index `m`.
    pub fn patch(&self, m: usize) -> &[f32] {
        &self.data[m * self.depth..(m + 1) * self.depth]
    }

    pub fn patches(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.depth)
    }
}

/// A feature map whose vectors have unit L2 norm (zero vectors stay zero).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFeatureMap {
    inner: FeatureMap,
    zero_vectors: usize,
}

impl NormalizedFeatureMap {
    pub fn as_map(&self) -> &FeatureMap {
        &self.inner
    }

    pub fn into_map(self) -> FeatureMap {
        self.inner
    }

    /// How many input vectors were exactly zero and left unnormalized.
    pub fn zero_vectors(&self) -> usize {
        self.zero_vectors
    }
}

impl std::ops::Deref for NormalizedFeatureMap {
    type Target = FeatureMap;

    fn deref(&self) -> &FeatureMap {
        &self.inner
    }
}

/// Divides every vector by its L2 norm. The norm is accumulated in `f64`.
pub fn l2_normalize(map: &FeatureMap) -> NormalizedFeatureMap {
    let mut data = Vec::with_capacity(map.data.len());
    let mut zero_vectors = 0;
    for v in map.patches() {
        let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if norm == 0.0 {
            zero_vectors += 1;
            data.extend_from_slice(v);
        } else {
            data.extend(v.iter().map(|&x| (f64::from(x) / norm) as f32));
        }
    }
    NormalizedFeatureMap {
        inner: FeatureMap {
            data,
            ..map.clone_header()
        },
        zero_vectors,
    }
}

impl FeatureMap {
    fn clone_header(&self) -> FeatureMap {
        FeatureMap {
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            depth: self.depth,
            data: Vec::new(),
            image_h: self.image_h,
            image_w: self.image_w,
        }
    }
}

/// Path of the geometry sidecar belonging to an array file.
pub fn sidecar_path(array_path: &Path) -> PathBuf {
    array_path.with_extension("json")
}

/// Reads the NPY array only; geometry is supplied by the caller (usually
/// from an episode or benchmark manifest).
pub fn load_feature_map_with_geometry(path: &Path, geometry: ImageGeometry) -> Result<FeatureMap> {
    let file = File::open(path).map_err(|e| PromiError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let header = npy::read_header(&mut reader)?;
    if header.descr != "<f4" {
        return Err(PromiError::Format(format!(
            "{}: expected dtype '<f4', found '{}'",
            path.display(),
            header.descr
        )));
    }
    if header.fortran_order {
        return Err(PromiError::Format(format!(
            "{}: Fortran-ordered arrays are not supported",
            path.display()
        )));
    }
    if header.shape.len() != 3 {
        return Err(PromiError::Shape(format!(
            "{}: expected a rank-3 (Gh, Gw, D) array, found shape {:?}",
            path.display(),
            header.shape
        )));
    }
    let count = header.shape.iter().product();
    let data = npy::read_f32_payload(&mut reader, count)?;
    FeatureMap::new(header.shape[0], header.shape[1], header.shape[2], data, geometry)
}

/// Reads an NPY feature map plus its geometry sidecar.
pub fn load_feature_map(path: &Path) -> Result<FeatureMap> {
    let sidecar = sidecar_path(path);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| PromiError::io(&sidecar, e))?;
    let geometry: ImageGeometry =
        serde_json::from_str(&text).map_err(|e| PromiError::Format(format!("{}: {e}", sidecar.display())))?;
    load_feature_map_with_geometry(path, geometry)
}

/// Writes the array as NPY v1.0 without a sidecar.
pub fn save_feature_array(map: &FeatureMap, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| PromiError::io(path, e))?;
    let mut w = BufWriter::new(file);
    npy::write_f32(&mut w, &[map.grid_h, map.grid_w, map.depth], &map.data)
        .and_then(|_| w.flush())
        .map_err(|e| PromiError::io(path, e))
}

/// Writes the array as NPY v1.0 and the image geometry to the sidecar.
pub fn save_feature_map(map: &FeatureMap, path: &Path) -> Result<()> {
    save_feature_array(map, path)?;
    let sidecar = sidecar_path(path);
    let json = serde_json::to_string(&map.geometry()).expect("geometry serializes");
    std::fs::write(&sidecar, json).map_err(|e| PromiError::io(&sidecar, e))
}
