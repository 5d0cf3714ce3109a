use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::sampler::{SampledTask, GENERATOR};
use super::{BenchmarkManifest, BoxSource, EvalOptions, TaskOutcome};
use crate::error::{PromiError, Result};
use crate::prototypes::{FitConfig, StopReason};

/// Report key of the complement (background) class when it is included.
pub const BACKGROUND_CLASS: &str = "__background__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub generator: String,
    pub fit: FitConfig,
    pub shots: usize,
    pub seeds: Vec<u64>,
    pub tasks_per_seed: usize,
    pub include_background_class: bool,
    pub boxes: BoxSource,
}

impl ReportConfig {
    pub(crate) fn new(cfg: &FitConfig, opts: &EvalOptions) -> Self {
        Self {
            generator: GENERATOR.into(),
            fit: *cfg,
            shots: opts.shots,
            seeds: opts.seeds.clone(),
            tasks_per_seed: opts.tasks_per_seed,
            include_background_class: opts.include_background_class,
            boxes: opts.boxes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub tasks: usize,
    pub cumulative_intersection: u64,
    pub cumulative_union: u64,
    /// `None` when the class never had a non-empty union.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedTask {
    pub task_index: usize,
    pub class_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosticsTotals {
    pub iterations: usize,
    pub spawn_events: usize,
    pub empty_cluster_events: usize,
    pub max_iteration_stops: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub tasks_completed: usize,
    pub tasks_failed: usize,
    pub classes: IndexMap<String, ClassStats>,
    /// Arithmetic mean of the defined class IoUs.
    pub mean_iou: Option<f64>,
    pub failures: Vec<FailedTask>,
    pub diagnostics: DiagnosticsTotals,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl SeedReport {
    pub(crate) fn accumulate(
        manifest: &BenchmarkManifest,
        seed: u64,
        tasks: &[SampledTask],
        outcomes: &[TaskOutcome],
        include_background: bool,
    ) -> Self {
        let mut classes: IndexMap<String, ClassStats> = manifest
            .classes
            .keys()
            .map(|k| {
                let empty = ClassStats {
                    tasks: 0,
                    cumulative_intersection: 0,
                    cumulative_union: 0,
                    iou: None,
                };
                (k.clone(), empty)
            })
            .collect();
        let mut background = (0usize, 0u64, 0u64);
        let mut failures = Vec::new();
        let mut diagnostics = DiagnosticsTotals::default();
        for (task, outcome) in tasks.iter().zip(outcomes) {
            let class_id = manifest.classes.get_index(task.class_index).expect("class index").0;
            match outcome {
                TaskOutcome::Completed {
                    queries,
                    diagnostics: d,
                } => {
                    let stats = &mut classes[task.class_index];
                    stats.tasks += 1;
                    background.0 += 1;
                    for q in queries {
                        stats.cumulative_intersection += q.intersection;
                        stats.cumulative_union += q.union;
                        background.1 += q.bg_intersection;
                        background.2 += q.bg_union;
                    }
                    diagnostics.iterations += d.iterations_run;
                    diagnostics.spawn_events += d.spawn_events;
                    diagnostics.empty_cluster_events += d.empty_cluster_events;
                    diagnostics.max_iteration_stops += usize::from(d.stop_reason == StopReason::MaxIterations);
                }
                TaskOutcome::Failed { reason } => failures.push(FailedTask {
                    task_index: task.task_index,
                    class_id: class_id.clone(),
                    reason: reason.clone(),
                }),
            }
        }
        if include_background {
            classes.insert(
                BACKGROUND_CLASS.into(),
                ClassStats {
                    tasks: background.0,
                    cumulative_intersection: background.1,
                    cumulative_union: background.2,
                    iou: None,
                },
            );
        }
        for stats in classes.values_mut() {
            stats.iou = (stats.cumulative_union > 0)
                .then(|| stats.cumulative_intersection as f64 / stats.cumulative_union as f64);
        }
        Self {
            seed,
            tasks_completed: tasks.len() - failures.len(),
            tasks_failed: failures.len(),
            mean_iou: mean(classes.values().filter_map(|c| c.iou)),
            classes,
            failures,
            diagnostics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Mean over seeds of the per-seed mean IoU.
    pub mean_iou: Option<f64>,
    /// Per class, mean over seeds of the defined class IoUs.
    pub class_iou: IndexMap<String, Option<f64>>,
    pub tasks_failed: usize,
    pub diagnostics: DiagnosticsTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ReportConfig,
    pub seeds: Vec<SeedReport>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    pub(crate) fn new(config: ReportConfig, seeds: Vec<SeedReport>) -> Self {
        let mut class_iou = IndexMap::new();
        if let Some(first) = seeds.first() {
            for name in first.classes.keys() {
                class_iou.insert(name.clone(), mean(seeds.iter().filter_map(|s| s.classes[name].iou)));
            }
        }
        let mut diagnostics = DiagnosticsTotals::default();
        for s in &seeds {
            diagnostics.iterations += s.diagnostics.iterations;
            diagnostics.spawn_events += s.diagnostics.spawn_events;
            diagnostics.empty_cluster_events += s.diagnostics.empty_cluster_events;
            diagnostics.max_iteration_stops += s.diagnostics.max_iteration_stops;
        }
        let aggregate = Aggregate {
            mean_iou: mean(seeds.iter().filter_map(|s| s.mean_iou)),
            class_iou,
            tasks_failed: seeds.iter().map(|s| s.tasks_failed).sum(),
            diagnostics,
        };
        Self {
            config,
            seeds,
            aggregate,
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    /// One row per (seed, class), a `mean` row per seed and an `all` seed
    /// row with the aggregate.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            "seed",
            "class",
            "tasks",
            "cumulative_intersection",
            "cumulative_union",
            "iou",
        ])
        .expect("in-memory csv");
        for s in &self.seeds {
            for (name, c) in &s.classes {
                w.write_record([
                    s.seed.to_string(),
                    name.clone(),
                    c.tasks.to_string(),
                    c.cumulative_intersection.to_string(),
                    c.cumulative_union.to_string(),
                    opt(c.iou),
                ])
                .expect("in-memory csv");
            }
            w.write_record([
                s.seed.to_string(),
                "mean".into(),
                s.tasks_completed.to_string(),
                String::new(),
                String::new(),
                opt(s.mean_iou),
            ])
            .expect("in-memory csv");
        }
        for (name, iou) in &self.aggregate.class_iou {
            w.write_record([
                "all".into(),
                name.clone(),
                String::new(),
                String::new(),
                String::new(),
                opt(*iou),
            ])
            .expect("in-memory csv");
        }
        w.write_record([
            "all".into(),
            "mean".into(),
            String::new(),
            String::new(),
            String::new(),
            opt(self.aggregate.mean_iou),
        ])
        .expect("in-memory csv");
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| PromiError::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()).map_err(|e| PromiError::io(&json, e))?;
        let csv = dir.join("report.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| PromiError::io(&csv, e))
    }
}
