//! Synthetic scenes with known ground truth, plus a deliberately naive
//! second implementation of fitting and prediction used as a test oracle.
//!
//! A scene places one foreground rectangle (in patch units) on a grid.
//! Background patches come from one or more background directions: a ring of
//! `ring_width` patches around the object uses `bg_centers[1]` (when present)
//! and the remaining background is split into horizontal bands over
//! `bg_centers[0]` and `bg_centers[2..]`. Each patch feature is its center
//! plus isotropic Gaussian noise with standard deviation `1/sqrt(kappa)`,
//! renormalized.

mod dataset;
pub mod reference;

use rand::Rng;
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::annotation::BoundingBox;
use crate::error::{PromiError, Result};
use crate::feature_store::{FeatureMap, ImageGeometry};
use crate::mask::SegmentationMask;

pub use dataset::{write_dataset, SynthDataset};

/// Half-open patch rectangle `[row0, row1) × [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl PatchRect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row0 && r < self.row1 && c >= self.col0 && c < self.col1
    }

    /// Chebyshev distance (in patches) from `(r, c)` to the rectangle.
    fn distance(&self, r: usize, c: usize) -> usize {
        let dr = if r < self.row0 {
            self.row0 - r
        } else {
            (r + 1).saturating_sub(self.row1)
        };
        let dc = if c < self.col0 {
            self.col0 - c
        } else {
            (c + 1).saturating_sub(self.col1)
        };
        dr.max(dc)
    }

    fn shifted(&self, dr: isize, dc: isize) -> Self {
        let mv = |v: usize, d: isize| (v as isize + d) as usize;
        Self {
            row0: mv(self.row0, dr),
            row1: mv(self.row1, dr),
            col0: mv(self.col0, dc),
            col1: mv(self.col1, dc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    pub depth: usize,
    pub fg_center: Vec<f64>,
    pub bg_centers: Vec<Vec<f64>>,
    /// `None` means noise-free features.
    pub noise_kappa: Option<f64>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub fg_region: PatchRect,
    /// Width in patches of the context ring drawn from `bg_centers[1]`.
    #[serde(default)]
    pub ring_width: usize,
    /// Pixels added on every side of the tight box.
    #[serde(default)]
    pub box_margin: usize,
    /// Maximum random shift (in patches) of the object per image.
    #[serde(default)]
    pub jitter: usize,
    pub seed: u64,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

impl SynthScene {
    /// Scene whose foreground and background centers are mutually orthogonal
    /// random directions (requires `depth > n_bg`).
    pub fn orthogonal(depth: usize, n_bg: usize, seed: u64) -> Self {
        assert!(depth > n_bg, "need depth > number of background centers");
        let mut rng = Pcg64::new(u128::from(seed), 0x5eed);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < n_bg + 1 {
            let mut v: Vec<f64> = (0..depth).map(|_| rng.sample(StandardNormal)).collect();
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= p * y;
                }
            }
            if v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-6 {
                basis.push(unit(&v));
            }
        }
        let fg_center = basis.remove(0);
        Self {
            depth,
            fg_center,
            bg_centers: basis,
            noise_kappa: None,
            grid_h: 12,
            grid_w: 12,
            image_h: 96,
            image_w: 96,
            fg_region: PatchRect {
                row0: 4,
                col0: 4,
                row1: 8,
                col1: 8,
            },
            ring_width: 0,
            box_margin: 0,
            jitter: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PromiError::Config(m));
        if self.depth == 0 || self.fg_center.len() != self.depth {
            return bad("fg_center length must equal depth".into());
        }
        if self.bg_centers.is_empty() || self.bg_centers.iter().any(|c| c.len() != self.depth) {
            return bad("need at least one background center of length depth".into());
        }
        for c in std::iter::once(&self.fg_center).chain(&self.bg_centers) {
            let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return bad(format!("centers must be unit vectors (norm {n})"));
            }
        }
        if let Some(k) = self.noise_kappa {
            if k.is_nan() || k <= 0.0 {
                return bad("noise_kappa must be positive (use null for no noise)".into());
            }
        }
        if self.grid_h == 0 || self.grid_w == 0 || self.image_h < self.grid_h || self.image_w < self.grid_w {
            return bad("image must have at least one pixel per patch".into());
        }
        let r = &self.fg_region;
        if r.row0 >= r.row1 || r.col0 >= r.col1 || r.row1 > self.grid_h || r.col1 > self.grid_w {
            return bad("fg_region must be a non-empty rectangle inside the grid".into());
        }
        Ok(())
    }

    /// Smallest angle (radians) between any two centers.
    pub fn min_pairwise_angle(&self) -> f64 {
        let all: Vec<&Vec<f64>> = std::iter::once(&self.fg_center).chain(&self.bg_centers).collect();
        let mut best = std::f64::consts::PI;
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let c: f64 = all[i].iter().zip(all[j]).map(|(a, b)| a * b).sum();
                best = best.min(c.clamp(-1.0, 1.0).acos());
            }
        }
        best
    }

    fn rng_for(&self, image_index: u64) -> Pcg64 {
        Pcg64::new(
            u128::from(self.seed) << 64 | 0x9e37_79b9_7f4a_7c15,
            u128::from(image_index),
        )
    }

    fn first_pixel(index: usize, image: usize, grid: usize) -> usize {
        (index * image).div_ceil(grid)
    }

    /// Which center a background patch at `(r, c)` uses.
    fn background_center(&self, region: &PatchRect, r: usize, c: usize) -> usize {
        let n = self.bg_centers.len();
        if n > 1 && region.distance(r, c) <= self.ring_width {
            return 1;
        }
        let far: Vec<usize> = std::iter::once(0).chain(2..n).collect();
        far[r * far.len() / self.grid_h]
    }

    /// Renders image `index` of the scene.
    pub fn generate_image(&self, index: u64) -> Result<SynthImage> {
        self.validate()?;
        let mut rng = self.rng_for(index);
        let region = {
            let r = self.fg_region;
            let j = self.jitter as isize;
            let lo_r = (-j).max(-(r.row0 as isize));
            let hi_r = j.min((self.grid_h - r.row1) as isize);
            let lo_c = (-j).max(-(r.col0 as isize));
            let hi_c = j.min((self.grid_w - r.col1) as isize);
            let dr = if hi_r > lo_r {
                rng.random_range(lo_r as i64..=hi_r as i64) as isize
            } else {
                0
            };
            let dc = if hi_c > lo_c {
                rng.random_range(lo_c as i64..=hi_c as i64) as isize
            } else {
                0
            };
            r.shifted(dr, dc)
        };

        let sigma = self.noise_kappa.map(|k| 1.0 / k.sqrt());
        let mut data = Vec::with_capacity(self.grid_h * self.grid_w * self.depth);
        for r in 0..self.grid_h {
            for c in 0..self.grid_w {
                let center = if region.contains(r, c) {
                    &self.fg_center
                } else {
                    &self.bg_centers[self.background_center(&region, r, c)]
                };
                match sigma {
                    None => data.extend(center.iter().map(|&v| v as f32)),
                    Some(s) => {
                        let noisy: Vec<f64> = center
                            .iter()
                            .map(|&v| v + s * rng.sample::<f64, _>(StandardNormal))
                            .collect();
                        data.extend(unit(&noisy).into_iter().map(|v| v as f32));
                    }
                }
            }
        }
        let geometry = ImageGeometry {
            image_h: self.image_h,
            image_w: self.image_w,
        };
        let features = FeatureMap::new(self.grid_h, self.grid_w, self.depth, data, geometry)?;

        let (gh, gw, ih, iw) = (self.grid_h, self.grid_w, self.image_h, self.image_w);
        let mask = SegmentationMask::from_fn(ih, iw, |y, x| region.contains(y * gh / ih, x * gw / iw));
        let m = self.box_margin;
        let bbox = BoundingBox::new(
            Self::first_pixel(region.col0, iw, gw).saturating_sub(m),
            Self::first_pixel(region.row0, ih, gh).saturating_sub(m),
            (Self::first_pixel(region.col1, iw, gw) + m).min(iw),
            (Self::first_pixel(region.row1, ih, gh) + m).min(ih),
        );
        Ok(SynthImage {
            features,
            mask,
            boxes: vec![bbox],
            fg_region: region,
        })
    }

    /// `shots` support images (indices `0..shots`) and one query (index
    /// `shots`).
    pub fn generate_episode(&self, shots: usize) -> Result<SynthEpisode> {
        if shots == 0 {
            return Err(PromiError::Config("shots must be at least 1".into()));
        }
        let support = (0..shots as u64)
            .map(|i| self.generate_image(i))
            .collect::<Result<_>>()?;
        let query = vec![self.generate_image(shots as u64)?];
        Ok(SynthEpisode { support, query })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub features: FeatureMap,
    pub mask: SegmentationMask,
    pub boxes: Vec<BoundingBox>,
    pub fg_region: PatchRect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthEpisode {
    pub support: Vec<SynthImage>,
    pub query: Vec<SynthImage>,
}

/// Scene description accepted by the `synth` command: either a bare scene
/// (one class named "synthetic") or several named classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneFile {
    Suite { classes: Vec<SynthClass> },
    Single(SynthScene),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthClass {
    pub name: String,
    pub scene: SynthScene,
    #[serde(default = "default_images")]
    pub images: usize,
}

fn default_images() -> usize {
    8
}

impl SceneFile {
    pub fn into_classes(self) -> Vec<SynthClass> {
        match self {
            SceneFile::Suite { classes } => classes,
            SceneFile::Single(scene) => vec![SynthClass {
                name: "synthetic".into(),
                scene,
                images: default_images(),
            }],
        }
    }
}
