//! Prototype-mixture fitting on a labeled support set.
//!
//! The classifier keeps one foreground prototype (index 0) and `1..=k_max`
//! background prototypes (indices `1..=K`). Fitting alternates a hard
//! nearest-prototype assignment of every support vector with mean updates:
//!
//! 1. assign each vector to `argmax_k f·w_k` (lowest index wins ties);
//! 2. re-estimate every background prototype from the background-labeled
//!    vectors assigned to it;
//! 3. if background-labeled vectors were assigned to the foreground and
//!    `K < k_max`, spawn a new background prototype at their mean;
//! 4. re-estimate the foreground prototype from the foreground-labeled
//!    vectors that are still assigned to it.
//!
//! All prototypes are kept at unit L2 norm so `f·w` is a cosine.

mod codec;

use serde::{Deserialize, Serialize};

use crate::annotation::PatchLabelGrid;
use crate::error::{PromiError, Result};
use crate::feature_store::NormalizedFeatureMap;

pub use codec::{deserialize_prototypes, load_prototypes, save_prototypes, serialize_prototypes};

pub const FOREGROUND: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k_max: usize,
    pub bg_mixture_enabled: bool,
    pub fg_refinement_enabled: bool,
    pub max_iterations: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k_max: 2,
            bg_mixture_enabled: true,
            fg_refinement_enabled: true,
            max_iterations: 100,
        }
    }
}

impl FitConfig {
    /// Single background prototype, no refinement: plain nearest-mean.
    pub fn baseline() -> Self {
        Self {
            bg_mixture_enabled: false,
            fg_refinement_enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(PromiError::Config("k_max must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(PromiError::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Both refinement switches off; the initial prototypes are returned.
    NotIterated,
    NoFalsePositives,
    /// No more prototypes can be spawned and the assignment stopped changing.
    FixedPoint,
    MaxIterations,
}

impl StopReason {
    pub(crate) fn code(self) -> u8 {
        match self {
            StopReason::NotIterated => 0,
            StopReason::NoFalsePositives => 1,
            StopReason::FixedPoint => 2,
            StopReason::MaxIterations => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => StopReason::NotIterated,
            1 => StopReason::NoFalsePositives,
            2 => StopReason::FixedPoint,
            3 => StopReason::MaxIterations,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations_run: usize,
    pub spawn_events: usize,
    pub empty_cluster_events: usize,
    pub stop_reason: StopReason,
}

impl Default for FitDiagnostics {
    fn default() -> Self {
        Self {
            iterations_run: 0,
            spawn_events: 0,
            empty_cluster_events: 0,
            stop_reason: StopReason::NotIterated,
        }
    }
}

/// Foreground prototype plus `K` background prototypes, stored contiguously
/// as `(K + 1) × depth` with row 0 the foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    depth: usize,
    vectors: Vec<f64>,
    config: FitConfig,
    pub diagnostics: FitDiagnostics,
}

impl PrototypeSet {
    /// Builds a set from raw prototypes; every vector is rescaled to unit norm.
    pub fn new(fg: &[f64], bg: &[Vec<f64>], config: FitConfig) -> Result<Self> {
        let depth = fg.len();
        if depth == 0 || bg.is_empty() {
            return Err(PromiError::Shape(
                "need a non-empty foreground and at least one background prototype".into(),
            ));
        }
        if bg.len() > config.k_max {
            return Err(PromiError::Shape(format!(
                "{} background prototypes exceed k_max {}",
                bg.len(),
                config.k_max
            )));
        }
        let mut vectors = Vec::with_capacity((bg.len() + 1) * depth);
        for v in std::iter::once(fg).chain(bg.iter().map(Vec::as_slice)) {
            if v.len() != depth {
                return Err(PromiError::Shape("prototype depths differ".into()));
            }
            let unit = normalized(v).ok_or_else(|| PromiError::Data("prototype has zero or non-finite norm".into()))?;
            vectors.extend(unit);
        }
        Ok(Self {
            depth,
            vectors,
            config,
            diagnostics: FitDiagnostics::default(),
        })
    }

    pub(crate) fn from_parts(depth: usize, vectors: Vec<f64>, config: FitConfig, diagnostics: FitDiagnostics) -> Self {
        Self {
            depth,
            vectors,
            config,
            diagnostics,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of background prototypes `K`.
    pub fn num_background(&self) -> usize {
        self.vectors.len() / self.depth - 1
    }

    /// `K + 1`.
    pub fn num_prototypes(&self) -> usize {
        self.vectors.len() / self.depth
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn foreground(&self) -> &[f64] {
        self.prototype(FOREGROUND)
    }

    /// Background prototype `k` for `k` in `1..=K`.
    pub fn background(&self, k: usize) -> &[f64] {
        assert!(
            k >= 1 && k <= self.num_background(),
            "background index {k} out of range"
        );
        self.prototype(k)
    }

    pub fn prototype(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.depth..(k + 1) * self.depth]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    fn set_prototype(&mut self, k: usize, v: &[f64]) {
        self.vectors[k * self.depth..(k + 1) * self.depth].copy_from_slice(v);
    }

    fn push_background(&mut self, v: &[f64]) {
        self.vectors.extend_from_slice(v);
    }

    /// Index of the most similar prototype; ties go to the lowest index.
    pub fn classify(&self, f: &[f32]) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for k in 0..self.num_prototypes() {
            let s = dot(f, self.prototype(k));
            if s > best_score {
                best = k;
                best_score = s;
            }
        }
        best
    }
}

#[inline]
pub(crate) fn dot(f: &[f32], w: &[f64]) -> f64 {
    f.iter().zip(w).map(|(&a, &b)| f64::from(a) * b).sum()
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        Some(v.iter().map(|x| x / norm).collect())
    } else {
        None
    }
}

/// Labeled support vectors, flattened in image order then row-major patch
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportBatch {
    depth: usize,
    vectors: Vec<f32>,
    labels: Vec<u8>,
}

impl SupportBatch {
    pub fn new(features: &[NormalizedFeatureMap], labels: &[PatchLabelGrid]) -> Result<Self> {
        if features.is_empty() {
            return Err(PromiError::DegenerateSupport("support set is empty".into()));
        }
        if features.len() != labels.len() {
            return Err(PromiError::Shape(format!(
                "{} feature maps but {} label grids",
                features.len(),
                labels.len()
            )));
        }
        let depth = features[0].depth();
        let mut vectors = Vec::new();
        let mut flat_labels = Vec::new();
        for (i, (f, l)) in features.iter().zip(labels).enumerate() {
            if f.depth() != depth {
                return Err(PromiError::Shape(format!(
                    "support map {i} has depth {}, expected {depth}",
                    f.depth()
                )));
            }
            if (f.grid_h(), f.grid_w()) != (l.grid_h(), l.grid_w()) {
                return Err(PromiError::Shape(format!(
                    "support map {i} grid {}x{} does not match labels {}x{}",
                    f.grid_h(),
                    f.grid_w(),
                    l.grid_h(),
                    l.grid_w()
                )));
            }
            vectors.extend_from_slice(f.data());
            flat_labels.extend_from_slice(l.labels());
        }
        Ok(Self {
            depth,
            vectors,
            labels: flat_labels,
        })
    }

    /// Builds a batch from loose vectors; each is L2-normalized first.
    pub fn from_vectors(depth: usize, vectors: &[f32], labels: &[u8]) -> Result<Self> {
        if depth == 0 || vectors.len() != depth * labels.len() || labels.is_empty() {
            return Err(PromiError::Shape(format!(
                "{} values do not form {} vectors of depth {depth}",
                vectors.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(PromiError::Annotation("labels must be 0 or 1".into()));
        }
        let map = crate::feature_store::FeatureMap::new(
            1,
            labels.len(),
            depth,
            vectors.to_vec(),
            crate::feature_store::ImageGeometry {
                image_h: 1,
                image_w: labels.len(),
            },
        )?;
        let normalized = crate::feature_store::l2_normalize(&map);
        Ok(Self {
            depth,
            vectors: normalized.data().to_vec(),
            labels: labels.to_vec(),
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.depth..(i + 1) * self.depth]
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }
}

/// Hooks into the fitting loop; used by tests and diagnostics tooling.
/// Member lists are indices into the support batch.
#[allow(unused_variables)]
pub trait FitObserver {
    fn on_assignment(&mut self, iteration: usize, assignment: &[usize]) {}
    fn on_background_update(&mut self, k: usize, members: &[usize]) {}
    fn on_spawn(&mut self, members: &[usize]) {}
    fn on_foreground_update(&mut self, members: &[usize]) {}
    fn on_iteration_end(&mut self, iteration: usize, protos: &PrototypeSet) {}
}

impl FitObserver for () {}

/// Normalized mean of the selected vectors, accumulated in `f64` in index
/// order. `None` when nothing is selected or the mean is the zero vector.
fn normalized_mean(batch: &SupportBatch, members: &[usize]) -> Option<Vec<f64>> {
    if members.is_empty() {
        return None;
    }
    let mut sum = vec![0.0f64; batch.depth];
    for &i in members {
        for (acc, &x) in sum.iter_mut().zip(batch.vector(i)) {
            *acc += f64::from(x);
        }
    }
    let n = members.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    normalized(&mean)
}

pub fn init_prototypes(batch: &SupportBatch) -> Result<PrototypeSet> {
    init_with_config(batch, FitConfig::default())
}

fn init_with_config(batch: &SupportBatch, config: FitConfig) -> Result<PrototypeSet> {
    let fg: Vec<usize> = (0..batch.len()).filter(|&i| batch.labels[i] == 1).collect();
    let bg: Vec<usize> = (0..batch.len()).filter(|&i| batch.labels[i] == 0).collect();
    if fg.is_empty() {
        return Err(PromiError::DegenerateSupport("no patch is labeled foreground".into()));
    }
    if bg.is_empty() {
        return Err(PromiError::DegenerateSupport("no patch is labeled background".into()));
    }
    let w_fg = normalized_mean(batch, &fg)
        .ok_or_else(|| PromiError::DegenerateSupport("foreground mean is the zero vector".into()))?;
    let w_bg = normalized_mean(batch, &bg)
        .ok_or_else(|| PromiError::DegenerateSupport("background mean is the zero vector".into()))?;
    let mut vectors = w_fg;
    vectors.extend(w_bg);
    Ok(PrototypeSet::from_parts(
        batch.depth,
        vectors,
        config,
        FitDiagnostics::default(),
    ))
}

/// Hard assignment of every vector in `vectors` (`n × depth`).
pub fn assign(vectors: &[f32], protos: &PrototypeSet) -> Result<Vec<usize>> {
    let depth = protos.depth();
    if !vectors.len().is_multiple_of(depth) {
        return Err(PromiError::Shape(format!(
            "{} values are not a whole number of depth-{depth} vectors",
            vectors.len()
        )));
    }
    Ok(vectors.chunks_exact(depth).map(|f| protos.classify(f)).collect())
}

pub fn assign_batch(batch: &SupportBatch, protos: &PrototypeSet) -> Result<Vec<usize>> {
    if batch.depth != protos.depth() {
        return Err(PromiError::Shape(format!(
            "support depth {} vs prototype depth {}",
            batch.depth,
            protos.depth()
        )));
    }
    assign(&batch.vectors, protos)
}

pub fn fit(batch: &SupportBatch, cfg: &FitConfig) -> Result<PrototypeSet> {
    fit_observed(batch, cfg, &mut ())
}

pub fn fit_observed(batch: &SupportBatch, cfg: &FitConfig, observer: &mut dyn FitObserver) -> Result<PrototypeSet> {
    cfg.validate()?;
    let mut protos = init_with_config(batch, *cfg)?;
    if !cfg.bg_mixture_enabled && !cfg.fg_refinement_enabled {
        return Ok(protos);
    }

    let labels = &batch.labels;
    let mut assignment = assign_batch(batch, &protos)?;
    let mut diag = FitDiagnostics::default();

    for iteration in 1..=cfg.max_iterations {
        observer.on_assignment(iteration, &assignment);
        diag.iterations_run = iteration;

        let false_positives: Vec<usize> = (0..batch.len())
            .filter(|&i| labels[i] == 0 && assignment[i] == FOREGROUND)
            .collect();

        if cfg.bg_mixture_enabled {
            let k_now = protos.num_background();
            for k in 1..=k_now {
                let members: Vec<usize> = (0..batch.len())
                    .filter(|&i| labels[i] == 0 && assignment[i] == k)
                    .collect();
                observer.on_background_update(k, &members);
                match normalized_mean(batch, &members) {
                    Some(w) => protos.set_prototype(k, &w),
                    None => diag.empty_cluster_events += 1,
                }
            }

            if k_now < cfg.k_max {
                if let Some(w) = normalized_mean(batch, &false_positives) {
                    observer.on_spawn(&false_positives);
                    protos.push_background(&w);
                    diag.spawn_events += 1;
                }
            }
        }

        if cfg.fg_refinement_enabled {
            let true_positives: Vec<usize> = (0..batch.len())
                .filter(|&i| labels[i] == 1 && assignment[i] == FOREGROUND)
                .collect();
            observer.on_foreground_update(&true_positives);
            if let Some(w) = normalized_mean(batch, &true_positives) {
                protos.set_prototype(FOREGROUND, &w);
            }
        }

        protos.diagnostics = diag;
        observer.on_iteration_end(iteration, &protos);

        let next = assign_batch(batch, &protos)?;
        let next_has_fp = (0..batch.len()).any(|i| labels[i] == 0 && next[i] == FOREGROUND);
        if false_positives.is_empty() && !next_has_fp {
            diag.stop_reason = StopReason::NoFalsePositives;
            break;
        }
        let can_spawn = cfg.bg_mixture_enabled && protos.num_background() < cfg.k_max;
        if !can_spawn && next == assignment {
            diag.stop_reason = StopReason::FixedPoint;
            break;
        }
        if iteration == cfg.max_iterations {
            diag.stop_reason = StopReason::MaxIterations;
        }
        assignment = next;
    }

    protos.diagnostics = diag;
    Ok(protos)
}
