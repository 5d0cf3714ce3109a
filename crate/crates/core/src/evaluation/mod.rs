//! Episodic evaluation: run single tasks, sample benchmarks, accumulate
//! per-class cumulative intersection and union, and sweep configurations.

mod manifest;
mod report;
mod sampler;
mod sweep;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{boxes_to_patch_labels, BoundingBox, Connectivity};
use crate::error::{PromiError, Result};
use crate::feature_store::{l2_normalize, FeatureMap};
use crate::inference::predict;
use crate::mask::SegmentationMask;
use crate::prototypes::{fit, FitConfig, FitDiagnostics, SupportBatch};

pub(crate) use manifest::write_json;
pub use manifest::{BenchmarkManifest, Episode, ImageEntry};
pub use report::{
    Aggregate, ClassStats, DiagnosticsTotals, EvalReport, FailedTask, ReportConfig, SeedReport, BACKGROUND_CLASS,
};
pub use sampler::{sample_task, SampledTask, GENERATOR};
pub use sweep::{sweep, Sweep, SweepAxis, SweepRow};

/// Pixel counts for one query: foreground and (complement) background.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCounts {
    pub intersection: u64,
    pub union: u64,
    pub bg_intersection: u64,
    pub bg_union: u64,
}

impl QueryCounts {
    pub fn compare(pred: &SegmentationMask, gt: &SegmentationMask) -> Result<Self> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(PromiError::Shape(format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let mut c = Self::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            let (p, g) = (p != 0, g != 0);
            c.intersection += u64::from(p && g);
            c.union += u64::from(p || g);
            c.bg_intersection += u64::from(!p && !g);
            c.bg_union += u64::from(!p || !g);
        }
        Ok(c)
    }

    pub fn iou(&self) -> Option<f64> {
        (self.union > 0).then(|| self.intersection as f64 / self.union as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TaskOutcome {
    Completed {
        queries: Vec<QueryCounts>,
        diagnostics: FitDiagnostics,
    },
    /// The support set could not be fitted; excluded from accumulation.
    Failed { reason: String },
}

/// How support boxes are derived for entries that only carry a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSource {
    pub connectivity: Connectivity,
    pub min_component_px: usize,
}

impl Default for BoxSource {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::Eight,
            min_component_px: 1,
        }
    }
}

/// Runs one task on in-memory data.
pub fn run_loaded_task(
    support: &[(FeatureMap, Vec<BoundingBox>)],
    query: &[(FeatureMap, SegmentationMask)],
    cfg: &FitConfig,
) -> Result<TaskOutcome> {
    cfg.validate()?;
    let mut maps = Vec::with_capacity(support.len());
    let mut labels = Vec::with_capacity(support.len());
    for (map, boxes) in support {
        labels.push(boxes_to_patch_labels(
            boxes,
            map.image_h(),
            map.image_w(),
            map.grid_h(),
            map.grid_w(),
        )?);
        maps.push(l2_normalize(map));
    }
    let fitted = SupportBatch::new(&maps, &labels).and_then(|batch| fit(&batch, cfg));
    let protos = match fitted {
        Ok(p) => p,
        Err(PromiError::DegenerateSupport(reason)) => return Ok(TaskOutcome::Failed { reason }),
        Err(e) => return Err(e),
    };
    let queries = query
        .iter()
        .map(|(map, gt)| QueryCounts::compare(&predict(&l2_normalize(map), &protos)?, gt))
        .collect::<Result<_>>()?;
    Ok(TaskOutcome::Completed {
        queries,
        diagnostics: protos.diagnostics,
    })
}

/// Loads an episode's files and runs it.
pub fn run_task(episode: &Episode, cfg: &FitConfig, boxes: BoxSource) -> Result<TaskOutcome> {
    episode.validate()?;
    let support = episode
        .support
        .iter()
        .map(|e| {
            Ok((
                e.load_features()?,
                e.support_boxes(boxes.connectivity, boxes.min_component_px)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let query = episode
        .query
        .iter()
        .map(|e| Ok((e.load_features()?, e.load_mask()?)))
        .collect::<Result<Vec<_>>>()?;
    run_loaded_task(&support, &query, cfg)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOptions {
    pub seeds: Vec<u64>,
    pub tasks_per_seed: usize,
    pub shots: usize,
    pub include_background_class: bool,
    pub jobs: usize,
    pub boxes: BoxSource,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            tasks_per_seed: 1000,
            shots: 1,
            include_background_class: false,
            jobs: 1,
            boxes: BoxSource::default(),
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PromiError::Config(m.into()));
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.tasks_per_seed == 0 {
            return bad("tasks per seed must be at least 1");
        }
        if self.shots == 0 {
            return bad("shots must be at least 1");
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1");
        }
        Ok(())
    }
}

/// The episode a sampled task refers to.
pub fn episode_for(manifest: &BenchmarkManifest, task: &SampledTask) -> Episode {
    let (name, pool) = manifest
        .classes
        .get_index(task.class_index)
        .expect("class index in range");
    Episode {
        class_id: name.clone(),
        support: task.support.iter().map(|&i| pool[i].clone()).collect(),
        query: vec![pool[task.query].clone()],
        seed: Some(task.seed),
        task_index: Some(task.task_index),
    }
}

/// Samples `tasks_per_seed` tasks per seed, runs them on `jobs` threads and
/// accumulates results in task order.
pub fn run_benchmark(manifest: &BenchmarkManifest, cfg: &FitConfig, opts: &EvalOptions) -> Result<EvalReport> {
    cfg.validate()?;
    opts.validate()?;
    manifest.validate(opts.shots)?;
    let pools: Vec<usize> = manifest.classes.values().map(Vec::len).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| PromiError::Config(format!("cannot start {} worker threads: {e}", opts.jobs)))?;

    let mut seeds = Vec::with_capacity(opts.seeds.len());
    for &seed in &opts.seeds {
        let tasks: Vec<SampledTask> = (0..opts.tasks_per_seed)
            .map(|t| sample_task(&pools, opts.shots, seed, t))
            .collect();
        let outcomes: Vec<Result<TaskOutcome>> = pool.install(|| {
            tasks
                .par_iter()
                .map(|t| run_task(&episode_for(manifest, t), cfg, opts.boxes))
                .collect()
        });
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
        log::info!("seed {seed}: {} tasks done", outcomes.len());
        seeds.push(SeedReport::accumulate(
            manifest,
            seed,
            &tasks,
            &outcomes,
            opts.include_background_class,
        ));
    }
    Ok(EvalReport::new(ReportConfig::new(cfg, opts), seeds))
}
