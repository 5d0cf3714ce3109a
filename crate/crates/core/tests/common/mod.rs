#![allow(dead_code)]

use std::path::Path;
use std::time::Instant;

use promi::annotation::boxes_to_patch_labels;
use promi::evaluation::{run_loaded_task, BenchmarkManifest, QueryCounts, TaskOutcome};
use promi::feature_store::l2_normalize;
use promi::inference::predict;
use promi::prototypes::{
    assign_batch, fit, fit_observed, FitConfig, FitObserver, PrototypeSet, StopReason, SupportBatch,
};
use promi::synth::reference::{reference_fit, reference_fit_support, reference_predict};
use promi::synth::{write_dataset, PatchRect, SynthClass, SynthEpisode, SynthScene};
use rand::Rng;
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;

pub type Check = Result<String, String>;

pub struct RandomBatch {
    pub depth: usize,
    pub raw: Vec<f32>,
    pub labels: Vec<u8>,
    pub cfg: FitConfig,
}

/// Clustered random vectors (D ≤ 4, ≤ 64 of them) with both labels present
/// and a random configuration.
pub fn random_batch(seed: u64) -> RandomBatch {
    let mut rng = Pcg64::new(u128::from(seed), 0xba7c);
    let depth = rng.random_range(1..=4);
    let n = rng.random_range(2..=64);
    let clusters = rng.random_range(1..=5);
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..depth).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let spread: f64 = rng.random_range(0.05..1.0);
    let fg_bias: Vec<f64> = (0..clusters).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut raw = Vec::with_capacity(n * depth);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..clusters);
        for &m in &centers[c] {
            let z: f64 = rng.sample(StandardNormal);
            raw.push((m + spread * z) as f32);
        }
        labels.push(u8::from(rng.random_bool(fg_bias[c])));
    }
    labels[0] = 1;
    labels[1] = 0;
    let cfg = FitConfig {
        k_max: rng.random_range(1..=4),
        bg_mixture_enabled: rng.random_bool(0.75),
        fg_refinement_enabled: rng.random_bool(0.75),
        max_iterations: 100,
    };
    RandomBatch {
        depth,
        raw,
        labels,
        cfg,
    }
}

#[derive(Default)]
struct Trace {
    assignments: Vec<Vec<usize>>,
    prototypes: Vec<Vec<Vec<f64>>>,
}

impl FitObserver for Trace {
    fn on_assignment(&mut self, _: usize, assignment: &[usize]) {
        self.assignments.push(assignment.to_vec());
    }
    fn on_iteration_end(&mut self, _: usize, protos: &PrototypeSet) {
        self.prototypes.push(
            (0..protos.num_prototypes())
                .map(|k| protos.prototype(k).to_vec())
                .collect(),
        );
    }
}

fn close(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| (p - q).abs() <= tol))
}

fn rows(p: &PrototypeSet) -> Vec<Vec<f64>> {
    (0..p.num_prototypes()).map(|k| p.prototype(k).to_vec()).collect()
}

/// Compares the fitted trace of one random batch with the reference
/// implementation, iteration by iteration.
pub fn batch_matches_reference(seed: u64) -> Result<(), String> {
    let b = random_batch(seed);
    let batch = match SupportBatch::from_vectors(b.depth, &b.raw, &b.labels) {
        Ok(batch) => batch,
        Err(e) => return Err(format!("batch {seed}: {e}")),
    };
    let vectors: Vec<Vec<f64>> = (0..batch.len())
        .map(|i| batch.vector(i).iter().map(|&x| f64::from(x)).collect())
        .collect();
    let mut trace = Trace::default();
    let ours = fit_observed(&batch, &b.cfg, &mut trace);
    let theirs = reference_fit(&vectors, &b.labels, &b.cfg);
    let (ours, theirs) = match (ours, theirs) {
        (Ok(o), Ok(t)) => (o, t),
        (Err(_), Err(_)) => return Ok(()),
        (o, t) => return Err(format!("batch {seed}: one side failed: {:?} / {:?}", o.err(), t.err())),
    };
    if trace.assignments.len() != theirs.trace.len() {
        return Err(format!(
            "batch {seed}: {} iterations vs reference {}",
            trace.assignments.len(),
            theirs.trace.len()
        ));
    }
    for (it, step) in theirs.trace.iter().enumerate() {
        if trace.assignments[it] != step.assignment {
            return Err(format!("batch {seed}: assignment differs at iteration {}", it + 1));
        }
        if !close(&trace.prototypes[it], &step.prototypes, 1e-9) {
            return Err(format!("batch {seed}: prototypes differ at iteration {}", it + 1));
        }
    }
    let d = ours.diagnostics;
    if !close(&rows(&ours), &theirs.prototypes, 1e-9)
        || (d.iterations_run, d.spawn_events, d.empty_cluster_events, d.stop_reason)
            != (theirs.iterations, theirs.spawns, theirs.empties, theirs.stop)
    {
        return Err(format!("batch {seed}: final state differs"));
    }
    Ok(())
}

/// Random scene for oracle comparisons, with non-integer patch scales.
pub fn random_scene(seed: u64) -> (SynthScene, usize) {
    let mut rng = Pcg64::new(u128::from(seed), 0x5ce7e);
    let depth = rng.random_range(4..=8);
    let n_bg = rng.random_range(1..=3.min(depth - 1));
    let mut s = SynthScene::orthogonal(depth, n_bg, seed);
    s.grid_h = rng.random_range(6..=14);
    s.grid_w = rng.random_range(6..=14);
    s.image_h = rng.random_range(s.grid_h..=100);
    s.image_w = rng.random_range(s.grid_w..=100);
    let r0 = rng.random_range(0..s.grid_h - 1);
    let c0 = rng.random_range(0..s.grid_w - 1);
    s.fg_region = PatchRect {
        row0: r0,
        col0: c0,
        row1: rng.random_range(r0 + 1..=s.grid_h),
        col1: rng.random_range(c0 + 1..=s.grid_w),
    };
    s.noise_kappa = rng.random_bool(0.8).then(|| rng.random_range(5.0..200.0));
    s.ring_width = rng.random_range(0..=2);
    s.box_margin = rng.random_range(0..=10);
    s.jitter = rng.random_range(0..=2);
    (s, rng.random_range(1..=3))
}

/// Fit + predict against the reference on one scene. Returns the number of
/// tie pixels that were skipped, or `None` when both sides reject the
/// support set.
pub fn scene_matches_reference(seed: u64) -> Result<Option<usize>, String> {
    let (scene, shots) = random_scene(seed);
    let ep = scene
        .generate_episode(shots)
        .map_err(|e| format!("scene {seed}: {e}"))?;
    let cfg = FitConfig::default();
    let maps: Vec<_> = ep.support.iter().map(|i| l2_normalize(&i.features)).collect();
    let labels: Vec<_> = ep
        .support
        .iter()
        .map(|i| boxes_to_patch_labels(&i.boxes, scene.image_h, scene.image_w, scene.grid_h, scene.grid_w).unwrap())
        .collect();
    let pairs: Vec<_> = ep.support.iter().map(|i| (&i.features, i.boxes.as_slice())).collect();
    let ours = SupportBatch::new(&maps, &labels).and_then(|b| fit(&b, &cfg));
    let theirs = reference_fit_support(&pairs, &cfg);
    let (ours, theirs) = match (ours, theirs) {
        (Ok(o), Ok(t)) => (o, t),
        (Err(_), Err(_)) => return Ok(None),
        (o, t) => return Err(format!("scene {seed}: one side failed: {:?} / {:?}", o.err(), t.err())),
    };
    if !close(&rows(&ours), &theirs.prototypes, 1e-9) {
        return Err(format!("scene {seed}: prototypes differ"));
    }
    let q = &ep.query[0];
    let mask = predict(&l2_normalize(&q.features), &ours).map_err(|e| e.to_string())?;
    let (ref_mask, ties) = reference_predict(&q.features, &theirs.prototypes);
    let mut skipped = 0;
    for (i, (&a, &b)) in mask.data().iter().zip(ref_mask.data()).enumerate() {
        if ties[i] {
            skipped += 1;
        } else if a != b {
            return Err(format!("scene {seed}: pixel {i} differs away from ties"));
        }
    }
    Ok(Some(skipped))
}

pub fn check_oracle_equivalence() -> Check {
    let start = Instant::now();
    for seed in 0..1000 {
        batch_matches_reference(seed)?;
    }
    let (mut ties, mut compared) = (0, 0);
    for seed in 0..100 {
        if let Some(t) = scene_matches_reference(seed)? {
            ties += t;
            compared += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        return Err(format!("took {secs:.1}s"));
    }
    Ok(format!(
        "1000 batches and 100 scenes match ({compared} scenes fitted, rest rejected by both), {ties} tie pixels skipped, {secs:.1}s"
    ))
}

pub fn check_stopping_contract() -> Check {
    let mut checked = 0;
    for seed in 0..2000 {
        let b = random_batch(seed);
        let cfg = FitConfig {
            bg_mixture_enabled: true,
            ..b.cfg
        };
        let batch = SupportBatch::from_vectors(b.depth, &b.raw, &b.labels).map_err(|e| e.to_string())?;
        let Ok(p) = fit(&batch, &cfg) else { continue };
        if p.num_background() >= cfg.k_max {
            continue;
        }
        checked += 1;
        let fp = assign_batch(&batch, &p)
            .unwrap()
            .iter()
            .zip(&b.labels)
            .filter(|&(&a, &l)| l == 0 && a == 0)
            .count();
        if fp != 0 || p.diagnostics.stop_reason != StopReason::NoFalsePositives {
            return Err(format!(
                "batch {seed}: stopped with K={} < k_max={} and {fp} false positives",
                p.num_background(),
                cfg.k_max
            ));
        }
    }
    if checked == 0 {
        return Err("no batch terminated below k_max".into());
    }
    Ok(format!(
        "{checked} early-terminating fits have zero support false positives"
    ))
}

/// Inflated-box scenes: orthogonal centers, a context ring wider than the
/// box margin (so ring patches appear on both sides of the box), noise.
pub fn ablation_scene(seed: u64) -> SynthScene {
    let mut s = SynthScene::orthogonal(16, 3, 1000 + seed);
    s.noise_kappa = Some(50.0);
    s.ring_width = 2;
    s.box_margin = 8;
    s.jitter = 2;
    s
}

pub fn ablation_episodes(n: u64) -> Vec<SynthEpisode> {
    (0..n).map(|s| ablation_scene(s).generate_episode(1).unwrap()).collect()
}

/// Mean over episodes of the per-episode query IoU.
pub fn episode_mean_iou(episodes: &[SynthEpisode], cfg: &FitConfig) -> f64 {
    let mut total = 0.0;
    for ep in episodes {
        let support: Vec<_> = ep
            .support
            .iter()
            .map(|i| (i.features.clone(), i.boxes.clone()))
            .collect();
        let query: Vec<_> = ep.query.iter().map(|i| (i.features.clone(), i.mask.clone())).collect();
        let TaskOutcome::Completed { queries, .. } = run_loaded_task(&support, &query, cfg).unwrap() else {
            panic!("ablation episode failed");
        };
        let (i, u) = queries
            .iter()
            .fold((0, 0), |(i, u), q| (i + q.intersection, u + q.union));
        total += i as f64 / u as f64;
    }
    total / episodes.len() as f64
}

pub fn flag_config(bg: bool, fg: bool) -> FitConfig {
    FitConfig {
        bg_mixture_enabled: bg,
        fg_refinement_enabled: fg,
        ..FitConfig::default()
    }
}

pub fn check_ablation_direction() -> Check {
    let start = Instant::now();
    let episodes = ablation_episodes(60);
    let off = episode_mean_iou(&episodes, &flag_config(false, false));
    let bg = episode_mean_iou(&episodes, &flag_config(true, false));
    let full = episode_mean_iou(&episodes, &flag_config(true, true));
    let secs = start.elapsed().as_secs_f64();
    let line = format!("60 episodes: flags-off {off:.4} <= bg-mixture {bg:.4} <= full {full:.4}, {secs:.1}s");
    if off <= bg && bg <= full && secs < 120.0 {
        Ok(line)
    } else {
        Err(line)
    }
}

pub fn check_k_sweep() -> Check {
    let episodes = ablation_episodes(60);
    let k1 = episode_mean_iou(
        &episodes,
        &FitConfig {
            k_max: 1,
            ..FitConfig::default()
        },
    );
    let k2 = episode_mean_iou(&episodes, &FitConfig::default());
    let line = format!("k_max=1 {k1:.4}, k_max=2 {k2:.4}");
    if k2 >= k1 {
        Ok(line)
    } else {
        Err(line)
    }
}

/// Three classes of inflated-box scenes with six images each.
pub fn fixture_classes() -> Vec<SynthClass> {
    (0..3)
        .map(|c| SynthClass {
            name: format!("class{c}"),
            scene: ablation_scene(500 + c),
            images: 6,
        })
        .collect()
}

pub fn write_fixture(dir: &Path) -> BenchmarkManifest {
    write_dataset(&fixture_classes(), dir, 1).unwrap().manifest
}

/// Cumulative per-class counts recomputed pixel by pixel from reference
/// fits and predictions; returns (class intersections, unions, mean IoU,
/// tie pixels).
pub fn oracle_metric(
    manifest: &BenchmarkManifest,
    seed: u64,
    tasks: usize,
    cfg: &FitConfig,
) -> (Vec<u64>, Vec<u64>, f64, usize) {
    let pools: Vec<usize> = manifest.classes.values().map(Vec::len).collect();
    let n = pools.len();
    let (mut inter, mut union) = (vec![0u64; n], vec![0u64; n]);
    let mut ties = 0;
    for t in 0..tasks {
        let task = promi::evaluation::sample_task(&pools, 1, seed, t);
        let pool = &manifest.classes[task.class_index];
        let support: Vec<_> = task
            .support
            .iter()
            .map(|&i| (pool[i].load_features().unwrap(), pool[i].boxes.clone().unwrap()))
            .collect();
        let pairs: Vec<_> = support.iter().map(|(m, b)| (m, b.as_slice())).collect();
        let fit = reference_fit_support(&pairs, cfg).unwrap();
        let q = &pool[task.query];
        let (pred, tie) = reference_predict(&q.load_features().unwrap(), &fit.prototypes);
        ties += tie.iter().filter(|&&t| t).count();
        let gt = q.load_mask().unwrap();
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                let (p, g) = (pred.get(y, x), gt.get(y, x));
                if p && g {
                    inter[task.class_index] += 1;
                }
                if p || g {
                    union[task.class_index] += 1;
                }
            }
        }
    }
    let ious: Vec<f64> = (0..n)
        .filter(|&c| union[c] > 0)
        .map(|c| inter[c] as f64 / union[c] as f64)
        .collect();
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    (inter, union, mean, ties)
}

pub fn check_metric_oracle() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = write_fixture(dir.path());
    let cfg = FitConfig::default();
    let opts = promi::evaluation::EvalOptions {
        seeds: vec![0],
        tasks_per_seed: 10,
        ..Default::default()
    };
    let report = promi::evaluation::run_benchmark(&manifest, &cfg, &opts).map_err(|e| e.to_string())?;
    let (inter, union, mean, ties) = oracle_metric(&manifest, 0, 10, &cfg);
    if ties != 0 {
        return Err(format!("fixture has {ties} tie pixels"));
    }
    let seed = &report.seeds[0];
    let got_i: Vec<u64> = seed.classes.values().map(|c| c.cumulative_intersection).collect();
    let got_u: Vec<u64> = seed.classes.values().map(|c| c.cumulative_union).collect();
    if got_i != inter || got_u != union || seed.mean_iou != Some(mean) {
        return Err(format!(
            "report {got_i:?}/{got_u:?} {:?} vs oracle {inter:?}/{union:?} {mean}",
            seed.mean_iou
        ));
    }
    Ok(format!("10-task fixture: mean IoU {mean} equals the counting oracle"))
}

pub fn run_cli(args: &[&str]) -> i32 {
    promi::cli::run(std::iter::once("promi").chain(args.iter().copied()))
}

pub fn check_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_fixture(&dir.path().join("data"));
    let manifest = dir.path().join("data/manifest.json");
    let m = manifest.to_str().unwrap();
    let mut outputs = Vec::new();
    for (run, jobs) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let out = dir.path().join(run);
        let code = run_cli(&[
            "eval",
            "--manifest",
            m,
            "--seeds",
            "0..4",
            "--tasks",
            "8",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ]);
        if code != 0 {
            return Err(format!("eval exited with {code}"));
        }
        let json = std::fs::read(out.join("report.json")).unwrap();
        let csv = std::fs::read(out.join("report.csv")).unwrap();
        outputs.push((json, csv));
    }
    if outputs[0] != outputs[1] || outputs[0] != outputs[2] {
        return Err("reports differ between runs".into());
    }
    let loaded = BenchmarkManifest::load(&manifest).unwrap();
    let pools: Vec<usize> = loaded.classes.values().map(Vec::len).collect();
    let samples: Vec<Vec<_>> = (0..5)
        .map(|s| {
            (0..1000)
                .map(|t| {
                    let x = promi::evaluation::sample_task(&pools, 1, s, t);
                    (x.class_index, x.support, x.query)
                })
                .collect()
        })
        .collect();
    for a in 0..5 {
        for b in a + 1..5 {
            if samples[a] == samples[b] {
                return Err(format!("seeds {a} and {b} sample identical tasks"));
            }
        }
    }
    Ok("three eval runs byte-identical; seeds 0..4 sample distinct tasks".into())
}

/// Zero noise, zero margin, one background direction, foreground a
/// full-height band of patch columns.
pub fn separable_scene(seed: u64) -> SynthScene {
    let mut s = SynthScene::orthogonal(8, 1, seed);
    s.fg_region = PatchRect {
        row0: 0,
        col0: 4,
        row1: 12,
        col1: 8,
    };
    s
}

pub fn separable_iou(scene: &SynthScene) -> f64 {
    let ep = scene.generate_episode(1).unwrap();
    let support: Vec<_> = ep
        .support
        .iter()
        .map(|i| (i.features.clone(), i.boxes.clone()))
        .collect();
    let query: Vec<_> = ep.query.iter().map(|i| (i.features.clone(), i.mask.clone())).collect();
    match run_loaded_task(&support, &query, &FitConfig::default()).unwrap() {
        TaskOutcome::Completed { queries, .. } => {
            let q: &QueryCounts = &queries[0];
            q.intersection as f64 / q.union as f64
        }
        TaskOutcome::Failed { reason } => panic!("{reason}"),
    }
}

pub fn check_separable_scene() -> Check {
    let iou = separable_iou(&separable_scene(3));
    if iou == 1.0 {
        Ok("query IoU = 1.0".into())
    } else {
        Err(format!("query IoU = {iou}"))
    }
}
