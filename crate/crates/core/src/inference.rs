//! Query-time prediction: cosine logits per patch, bilinear upsampling of
//! the logit map to image resolution, then per-pixel argmax.

use crate::error::{PromiError, Result};
use crate::feature_store::NormalizedFeatureMap;
use crate::prototypes::{dot, PrototypeSet, FOREGROUND};

pub use crate::mask::SegmentationMask;

/// `grid_h × grid_w × channels` map of similarities, channel 0 = foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMap {
    grid_h: usize,
    grid_w: usize,
    channels: usize,
    data: Vec<f64>,
}

impl LogitMap {
    pub fn new(grid_h: usize, grid_w: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || channels == 0 || data.len() != grid_h * grid_w * channels {
            return Err(PromiError::Shape(format!(
                "logit map {grid_h}x{grid_w}x{channels} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self {
            grid_h,
            grid_w,
            channels,
            data,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.grid_w + col) * self.channels + channel]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

pub fn compute_logits(query: &NormalizedFeatureMap, protos: &PrototypeSet) -> Result<LogitMap> {
    if query.depth() != protos.depth() {
        return Err(PromiError::Shape(format!(
            "query depth {} vs prototype depth {}",
            query.depth(),
            protos.depth()
        )));
    }
    let channels = protos.num_prototypes();
    let mut data = Vec::with_capacity(query.num_patches() * channels);
    for f in query.patches() {
        data.extend((0..channels).map(|k| dot(f, protos.prototype(k))));
    }
    LogitMap::new(query.grid_h(), query.grid_w(), channels, data)
}

/// Source sample positions for one axis under half-pixel centers with edge
/// clamping: `(lower index, upper index, weight of upper)`.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Channel-wise bilinear resize to `out_h × out_w`.
pub fn upsample_bilinear(logits: &LogitMap, out_h: usize, out_w: usize) -> Result<LogitMap> {
    if out_h == 0 || out_w == 0 {
        return Err(PromiError::Shape("output dimensions must be positive".into()));
    }
    let ys = axis_taps(logits.grid_h, out_h);
    let xs = axis_taps(logits.grid_w, out_w);
    let ch = logits.channels;
    let mut data = Vec::with_capacity(out_h * out_w * ch);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            for c in 0..ch {
                let top = lerp(logits.get(y0, x0, c), logits.get(y0, x1, c), tx);
                let bottom = lerp(logits.get(y1, x0, c), logits.get(y1, x1, c), tx);
                data.push(lerp(top, bottom, ty));
            }
        }
    }
    LogitMap::new(out_h, out_w, ch, data)
}

/// Foreground wherever channel 0 is the (first) maximum.
pub fn argmax_mask(logits: &LogitMap) -> Result<SegmentationMask> {
    if logits.channels < 2 {
        return Err(PromiError::Shape("argmax needs at least two channels".into()));
    }
    let data = logits
        .data
        .chunks_exact(logits.channels)
        .map(|px| {
            let mut best = 0;
            for c in 1..px.len() {
                if px[c] > px[best] {
                    best = c;
                }
            }
            u8::from(best == FOREGROUND)
        })
        .collect();
    SegmentationMask::from_vec(logits.grid_h, logits.grid_w, data)
}

/// Full query pipeline at the query image's own resolution.
pub fn predict(query: &NormalizedFeatureMap, protos: &PrototypeSet) -> Result<SegmentationMask> {
    let logits = compute_logits(query, protos)?;
    let resized = upsample_bilinear(&logits, query.image_h(), query.image_w())?;
    argmax_mask(&resized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::{l2_normalize, FeatureMap, ImageGeometry};
    use crate::prototypes::FitConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn protos_2d() -> PrototypeSet {
        PrototypeSet::new(&[1.0, 0.0], &[vec![0.0, 1.0]], FitConfig::default()).unwrap()
    }

    fn query(gh: usize, gw: usize, d: usize, data: Vec<f32>, ih: usize, iw: usize) -> NormalizedFeatureMap {
        l2_normalize(
            &FeatureMap::new(
                gh,
                gw,
                d,
                data,
                ImageGeometry {
                    image_h: ih,
                    image_w: iw,
                },
            )
            .unwrap(),
        )
    }

    /// Direct transcription of the half-pixel bilinear formula.
    fn bilinear_oracle(src: &[[f64; 2]; 2], y: usize, x: usize, out: usize) -> f64 {
        let s = 2.0 / out as f64;
        let sy = ((y as f64 + 0.5) * s - 0.5).clamp(0.0, 1.0);
        let sx = ((x as f64 + 0.5) * s - 0.5).clamp(0.0, 1.0);
        (1.0 - sy) * (1.0 - sx) * src[0][0]
            + (1.0 - sy) * sx * src[0][1]
            + sy * (1.0 - sx) * src[1][0]
            + sy * sx * src[1][1]
    }

    #[test]
    fn self_and_orthogonal_logits() {
        let q = query(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0], 1, 2);
        let l = compute_logits(&q, &protos_2d()).unwrap();
        assert_eq!(l.get(0, 0, 0), 1.0);
        assert_eq!(l.get(0, 0, 1), 0.0);
        assert_eq!(l.get(0, 1, 0), 0.0);
    }

    #[test]
    fn depth_mismatch_is_shape_error() {
        let q = query(1, 1, 3, vec![1.0, 0.0, 0.0], 1, 1);
        assert!(matches!(compute_logits(&q, &protos_2d()), Err(PromiError::Shape(_))));
    }

    #[test]
    fn logits_match_double_loop() {
        let mut rng = rand_pcg::Pcg64::seed_from_u64(5);
        let d = 6;
        let fg: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bg: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let p = PrototypeSet::new(
            &fg,
            &bg,
            FitConfig {
                k_max: 3,
                ..FitConfig::default()
            },
        )
        .unwrap();
        let q = query(
            4,
            5,
            d,
            (0..4 * 5 * d).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            8,
            10,
        );
        let l = compute_logits(&q, &p).unwrap();
        for r in 0..4 {
            for c in 0..5 {
                for k in 0..4 {
                    let mut s = 0.0;
                    for j in 0..d {
                        s += f64::from(q.vector(r, c)[j]) * p.prototype(k)[j];
                    }
                    assert!((l.get(r, c, k) - s).abs() < 1e-6);
                    assert!(l.get(r, c, k).abs() <= 1.0 + 1e-6);
                }
            }
        }
    }

    #[test]
    fn constant_channel_stays_constant() {
        let l = LogitMap::new(3, 2, 1, vec![0.3; 6]).unwrap();
        let up = upsample_bilinear(&l, 7, 11).unwrap();
        assert!(up.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn same_size_is_identity() {
        let mut rng = rand_pcg::Pcg64::seed_from_u64(1);
        let l = LogitMap::new(5, 4, 3, (0..60).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let up = upsample_bilinear(&l, 5, 4).unwrap();
        for (a, b) in up.data().iter().zip(l.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn two_by_two_to_four_by_four_stencil() {
        let src = [[0.0, 1.0], [1.0, 0.0]];
        let l = LogitMap::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let up = upsample_bilinear(&l, 4, 4).unwrap();
        // hand values: taps at source coords {0, 0.25, 0.75, 1} per axis
        let expected = [
            [0.0, 0.25, 0.75, 1.0],
            [0.25, 0.375, 0.625, 0.75],
            [0.75, 0.625, 0.375, 0.25],
            [1.0, 0.75, 0.25, 0.0],
        ];
        for (y, row) in expected.iter().enumerate() {
            for (x, &e) in row.iter().enumerate() {
                assert!((up.get(y, x, 0) - e).abs() < 1e-12);
                assert!((up.get(y, x, 0) - bilinear_oracle(&src, y, x, 4)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn argmax_rules() {
        let l = LogitMap::new(1, 3, 2, vec![0.9, 0.1, 0.5, 0.5, 0.2, 0.4]).unwrap();
        assert_eq!(argmax_mask(&l).unwrap().data(), &[1, 1, 0]);
        let one = LogitMap::new(1, 1, 1, vec![0.0]).unwrap();
        assert!(argmax_mask(&one).is_err());
    }

    #[test]
    fn predict_uniform_queries() {
        let p = protos_2d();
        let fg = query(3, 3, 2, [1.0, 0.0].repeat(9), 12, 9);
        let m = predict(&fg, &p).unwrap();
        assert_eq!((m.height(), m.width()), (12, 9));
        assert_eq!(m.count_ones(), 108);
        let bg = query(3, 3, 2, [0.0, 1.0].repeat(9), 12, 9);
        assert_eq!(predict(&bg, &p).unwrap().count_ones(), 0);
    }

    proptest! {
        #[test]
        fn upsampled_values_stay_in_range(
            data in proptest::collection::vec(-1.0f64..1.0, 3 * 4 * 2),
            oh in 1usize..20, ow in 1usize..20,
        ) {
            let l = LogitMap::new(3, 4, 2, data).unwrap();
            let up = upsample_bilinear(&l, oh, ow).unwrap();
            for c in 0..2 {
                let src: Vec<f64> = l.data().iter().skip(c).step_by(2).copied().collect();
                let lo = src.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for v in up.data().iter().skip(c).step_by(2) {
                    prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn argmax_matches_exhaustive_and_is_scale_invariant(
            data in proptest::collection::vec(-1.0f64..1.0, 5 * 5 * 3),
            scale in 0.01f64..100.0,
        ) {
            let l = LogitMap::new(5, 5, 3, data).unwrap();
            let m = argmax_mask(&l).unwrap();
            for (i, px) in l.data().chunks(3).enumerate() {
                let fg_wins = px[0] >= px[1] && px[0] >= px[2];
                prop_assert_eq!(m.data()[i] == 1, fg_wins);
            }
            prop_assert_eq!(argmax_mask(&l.scaled(scale)).unwrap(), m);
        }

        #[test]
        fn same_resolution_argmax_is_patchwise(data in proptest::collection::vec(-1.0f64..1.0, 4 * 3 * 2)) {
            let l = LogitMap::new(4, 3, 2, data).unwrap();
            let up = upsample_bilinear(&l, 4, 3).unwrap();
            prop_assert_eq!(argmax_mask(&up).unwrap(), argmax_mask(&l).unwrap());
        }
    }
}
