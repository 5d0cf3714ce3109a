//! Straight-line reference implementation of fitting and prediction.
//!
//! Shares no numeric code with `prototypes` or `inference`: plain nested
//! loops over `Vec<Vec<f64>>`, per-pixel bilinear weights written out in the
//! four-term form, and brute-force per-pixel patch labeling.

#![allow(clippy::needless_range_loop)]

use crate::annotation::BoundingBox;
use crate::error::{PromiError, Result};
use crate::feature_store::FeatureMap;
use crate::mask::SegmentationMask;
use crate::prototypes::{FitConfig, FitDiagnostics, PrototypeSet, StopReason};

/// Margin under which two channel scores are treated as tied.
pub const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceStep {
    /// Assignment computed at the start of the iteration.
    pub assignment: Vec<usize>,
    /// Prototypes (foreground first) after the iteration's updates.
    pub prototypes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFit {
    pub prototypes: Vec<Vec<f64>>,
    pub iterations: usize,
    pub spawns: usize,
    pub empties: usize,
    pub stop: StopReason,
    pub trace: Vec<ReferenceStep>,
}

impl ReferenceFit {
    pub fn to_prototype_set(&self, cfg: &FitConfig) -> PrototypeSet {
        let depth = self.prototypes[0].len();
        let flat = self.prototypes.iter().flatten().copied().collect();
        PrototypeSet::from_parts(
            depth,
            flat,
            *cfg,
            FitDiagnostics {
                iterations_run: self.iterations,
                spawn_events: self.spawns,
                empty_cluster_events: self.empties,
                stop_reason: self.stop,
            },
        )
    }
}

fn mean_then_normalize(points: &[&Vec<f64>]) -> Option<Vec<f64>> {
    if points.is_empty() {
        return None;
    }
    let d = points[0].len();
    let mut total = vec![0.0; d];
    for p in points {
        for j in 0..d {
            total[j] += p[j];
        }
    }
    let mut mean = vec![0.0; d];
    for j in 0..d {
        mean[j] = total[j] / points.len() as f64;
    }
    let mut sq = 0.0;
    for j in 0..d {
        sq += mean[j] * mean[j];
    }
    let len = sq.sqrt();
    if len == 0.0 || !len.is_finite() {
        return None;
    }
    let mut out = vec![0.0; d];
    for j in 0..d {
        out[j] = mean[j] / len;
    }
    Some(out)
}

fn nearest(f: &[f64], protos: &[Vec<f64>]) -> usize {
    let mut winner = 0;
    let mut top = f64::NEG_INFINITY;
    for (k, w) in protos.iter().enumerate() {
        let mut s = 0.0;
        for j in 0..f.len() {
            s += f[j] * w[j];
        }
        if s > top {
            top = s;
            winner = k;
        }
    }
    winner
}

/// Reference fit over already-normalized vectors.
pub fn reference_fit(vectors: &[Vec<f64>], labels: &[u8], cfg: &FitConfig) -> Result<ReferenceFit> {
    let n = vectors.len();
    let pick =
        |pred: &dyn Fn(usize) -> bool| -> Vec<&Vec<f64>> { (0..n).filter(|&i| pred(i)).map(|i| &vectors[i]).collect() };

    if !labels.contains(&1) || !labels.contains(&0) {
        return Err(PromiError::DegenerateSupport("support needs both labels".into()));
    }
    let fg0 = mean_then_normalize(&pick(&|i| labels[i] == 1))
        .ok_or_else(|| PromiError::DegenerateSupport("zero foreground mean".into()))?;
    let bg0 = mean_then_normalize(&pick(&|i| labels[i] == 0))
        .ok_or_else(|| PromiError::DegenerateSupport("zero background mean".into()))?;
    let mut w = vec![fg0, bg0];
    let mut out = ReferenceFit {
        prototypes: Vec::new(),
        iterations: 0,
        spawns: 0,
        empties: 0,
        stop: StopReason::NotIterated,
        trace: Vec::new(),
    };
    if !cfg.bg_mixture_enabled && !cfg.fg_refinement_enabled {
        out.prototypes = w;
        return Ok(out);
    }

    let mut yhat: Vec<usize> = vectors.iter().map(|f| nearest(f, &w)).collect();
    let mut it = 0;
    loop {
        it += 1;
        out.iterations = it;
        let fp = pick(&|i| labels[i] == 0 && yhat[i] == 0);
        let had_fp = !fp.is_empty();

        if cfg.bg_mixture_enabled {
            let k_now = w.len() - 1;
            for k in 1..=k_now {
                match mean_then_normalize(&pick(&|i| labels[i] == 0 && yhat[i] == k)) {
                    Some(v) => w[k] = v,
                    None => out.empties += 1,
                }
            }
            if k_now < cfg.k_max {
                if let Some(v) = mean_then_normalize(&fp) {
                    w.push(v);
                    out.spawns += 1;
                }
            }
        }
        if cfg.fg_refinement_enabled {
            if let Some(v) = mean_then_normalize(&pick(&|i| labels[i] == 1 && yhat[i] == 0)) {
                w[0] = v;
            }
        }
        out.trace.push(ReferenceStep {
            assignment: yhat.clone(),
            prototypes: w.clone(),
        });

        let next: Vec<usize> = vectors.iter().map(|f| nearest(f, &w)).collect();
        let next_fp = (0..n).any(|i| labels[i] == 0 && next[i] == 0);
        if !had_fp && !next_fp {
            out.stop = StopReason::NoFalsePositives;
            break;
        }
        let spawn_possible = cfg.bg_mixture_enabled && w.len() - 1 < cfg.k_max;
        if !spawn_possible && next == yhat {
            out.stop = StopReason::FixedPoint;
            break;
        }
        if it == cfg.max_iterations {
            out.stop = StopReason::MaxIterations;
            break;
        }
        yhat = next;
    }
    out.prototypes = w;
    Ok(out)
}

/// Normalizes every patch of `map` into its own `Vec<f64>`.
pub fn reference_vectors(map: &FeatureMap) -> Vec<Vec<f64>> {
    let d = map.depth();
    let mut out = Vec::new();
    for m in 0..map.num_patches() {
        let raw: Vec<f64> = (0..d).map(|j| f64::from(map.data()[m * d + j])).collect();
        let mut sq = 0.0;
        for x in &raw {
            sq += x * x;
        }
        let len = sq.sqrt();
        // round through f32 the way stored normalized maps are
        let v: Vec<f64> = if len == 0.0 {
            raw
        } else {
            raw.iter().map(|x| f64::from((x / len) as f32)).collect()
        };
        out.push(v);
    }
    out
}

/// Patch labels by counting every pixel individually.
pub fn reference_patch_labels(boxes: &[BoundingBox], map: &FeatureMap) -> Vec<u8> {
    let (ih, iw, gh, gw) = (map.image_h(), map.image_w(), map.grid_h(), map.grid_w());
    let mut inside = vec![0u64; gh * gw];
    let mut total = vec![0u64; gh * gw];
    for y in 0..ih {
        for x in 0..iw {
            let p = (y * gh / ih) * gw + (x * gw / iw);
            total[p] += 1;
            if boxes
                .iter()
                .any(|b| x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max)
            {
                inside[p] += 1;
            }
        }
    }
    (0..gh * gw)
        .map(|p| u8::from(total[p] > 0 && 2 * inside[p] >= total[p]))
        .collect()
}

/// End-to-end reference fit from raw support maps and boxes.
pub fn reference_fit_support(support: &[(&FeatureMap, &[BoundingBox])], cfg: &FitConfig) -> Result<ReferenceFit> {
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for (map, boxes) in support {
        vectors.extend(reference_vectors(map));
        labels.extend(reference_patch_labels(boxes, map));
    }
    reference_fit(&vectors, &labels, cfg)
}

/// Reference prediction. Also returns a map of pixels whose best and
/// runner-up scores (foreground vs best background) are within
/// [`TIE_EPS`].
pub fn reference_predict(query: &FeatureMap, prototypes: &[Vec<f64>]) -> (SegmentationMask, Vec<bool>) {
    let (gh, gw, ih, iw) = (query.grid_h(), query.grid_w(), query.image_h(), query.image_w());
    let vecs = reference_vectors(query);
    let k = prototypes.len();
    let mut scores = vec![vec![0.0; k]; gh * gw];
    for p in 0..gh * gw {
        for c in 0..k {
            let mut s = 0.0;
            for j in 0..vecs[p].len() {
                s += vecs[p][j] * prototypes[c][j];
            }
            scores[p][c] = s;
        }
    }

    let mut mask = SegmentationMask::zeros(ih, iw);
    let mut ties = vec![false; ih * iw];
    for y in 0..ih {
        let mut sy = (y as f64 + 0.5) * gh as f64 / ih as f64 - 0.5;
        sy = sy.max(0.0).min((gh - 1) as f64);
        let r0 = sy.floor() as usize;
        let r1 = if r0 + 1 < gh { r0 + 1 } else { r0 };
        let wy = sy - r0 as f64;
        for x in 0..iw {
            let mut sx = (x as f64 + 0.5) * gw as f64 / iw as f64 - 0.5;
            sx = sx.max(0.0).min((gw - 1) as f64);
            let c0 = sx.floor() as usize;
            let c1 = if c0 + 1 < gw { c0 + 1 } else { c0 };
            let wx = sx - c0 as f64;

            let mut best_bg = f64::NEG_INFINITY;
            let mut fg = 0.0;
            for c in 0..k {
                let v = (1.0 - wy) * (1.0 - wx) * scores[r0 * gw + c0][c]
                    + (1.0 - wy) * wx * scores[r0 * gw + c1][c]
                    + wy * (1.0 - wx) * scores[r1 * gw + c0][c]
                    + wy * wx * scores[r1 * gw + c1][c];
                if c == 0 {
                    fg = v;
                } else if v > best_bg {
                    best_bg = v;
                }
            }
            mask.set(y, x, fg >= best_bg);
            ties[y * iw + x] = (fg - best_bg).abs() < TIE_EPS;
        }
    }
    (mask, ties)
}
