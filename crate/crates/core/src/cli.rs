//! Command-line front end. [`run`] parses arguments, executes a subcommand
//! and returns the process exit code: 0 on success, 2 on input errors
//! (bad flags, unreadable or invalid data) and 1 on internal errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::annotation::{boxes_to_patch_labels, Connectivity};
use crate::error::{PromiError, Result};
use crate::evaluation::{
    run_benchmark, sweep, write_json, BenchmarkManifest, BoxSource, Episode, EvalOptions, QueryCounts, SweepAxis,
};
use crate::feature_store::{l2_normalize, load_feature_map, FeatureMap};
use crate::inference::predict;
use crate::mask::SegmentationMask;
use crate::prototypes::{fit, load_prototypes, save_prototypes, FitConfig, FitDiagnostics, SupportBatch};
use crate::synth::{write_dataset, SceneFile};

#[derive(Debug, Parser)]
#[command(
    name = "promi",
    version,
    about = "Few-shot binary segmentation from bounding boxes with prototype mixtures"
)]
pub struct Cli {
    /// Raise log verbosity (repeatable); PROMI_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit prototypes on an episode's support set.
    Fit {
        /// Episode JSON whose support images carry boxes or masks.
        #[arg(long)]
        support: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        fit: FitFlags,
        #[command(flatten)]
        boxes: BoxFlags,
    },
    /// Segment query feature maps with a fitted prototype file.
    Predict {
        #[arg(long)]
        prototypes: PathBuf,
        /// Episode JSON (its query list is used) or a single `.npy` feature map.
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the episodic benchmark over a manifest.
    Eval {
        #[command(flatten)]
        bench: BenchFlags,
    },
    /// Run the benchmark once per point of a configuration axis.
    Sweep {
        /// `k_max=1..4`, `k_max=1,2`, `flags`, `shots=1,5,10`.
        #[arg(long, alias = "sweep")]
        axis: String,
        #[command(flatten)]
        bench: BenchFlags,
    },
    /// Render synthetic scenes to feature files, masks and manifests.
    Synth {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Support images in the written episode.
        #[arg(long, default_value_t = 1)]
        shots: usize,
    },
}

#[derive(Debug, Clone, Args)]
pub struct FitFlags {
    /// Maximum number of background prototypes.
    #[arg(long, default_value_t = 2)]
    pub k_max: usize,
    /// Keep a single background prototype fixed at its initial mean.
    #[arg(long)]
    pub no_bg_mixture: bool,
    /// Keep the foreground prototype fixed at its initial mean.
    #[arg(long)]
    pub no_fg_refine: bool,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
}

impl FitFlags {
    pub fn config(&self) -> Result<FitConfig> {
        let cfg = FitConfig {
            k_max: self.k_max,
            bg_mixture_enabled: !self.no_bg_mixture,
            fg_refinement_enabled: !self.no_fg_refine,
            max_iterations: self.max_iters,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct BoxFlags {
    /// Neighbourhood (4 or 8) for boxes derived from masks.
    #[arg(long, default_value_t = 8)]
    pub connectivity: u8,
    /// Components smaller than this many pixels yield no box.
    #[arg(long, default_value_t = 1)]
    pub min_component_px: usize,
}

impl BoxFlags {
    pub fn source(&self) -> Result<BoxSource> {
        Ok(BoxSource {
            connectivity: Connectivity::from_neighbours(self.connectivity)?,
            min_component_px: self.min_component_px,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct BenchFlags {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma list or inclusive range, e.g. `0,1,2` or `0..4`.
    #[arg(long, default_value = "0..4")]
    pub seeds: String,
    /// Tasks per seed.
    #[arg(long, default_value_t = 1000)]
    pub tasks: usize,
    #[arg(long, default_value_t = 1)]
    pub shots: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for task-level parallelism.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Also score the complement class and include it in the mean.
    #[arg(long)]
    pub include_background_class: bool,
    #[command(flatten)]
    pub fit: FitFlags,
    #[command(flatten)]
    pub boxes: BoxFlags,
}

impl BenchFlags {
    fn options(&self) -> Result<EvalOptions> {
        let opts = EvalOptions {
            seeds: parse_seeds(&self.seeds)?,
            tasks_per_seed: self.tasks,
            shots: self.shots,
            include_background_class: self.include_background_class,
            jobs: self.jobs,
            boxes: self.boxes.source()?,
        };
        opts.validate()?;
        Ok(opts)
    }
}

/// Parses `0,1,2` or the inclusive range `0..4`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || PromiError::Config(format!("cannot parse seeds {s:?}; use 0,1,2 or 0..4"));
    let seeds: Vec<u64> = match s.split_once("..") {
        Some((a, b)) => {
            let b = b.strip_prefix('=').unwrap_or(b);
            let (a, b): (u64, u64) = (
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            );
            if a > b {
                return Err(bad());
            }
            (a..=b).collect()
        }
        None => s
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?,
    };
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(PromiError::Config(format!("seed list {s:?} repeats a seed")));
    }
    Ok(seeds)
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("PROMI_LOG", default)).try_init();
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging(cli.verbose);
    match std::panic::catch_unwind(|| execute(&cli.command)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(_) => {
            eprintln!("internal error");
            1
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Fit {
            support,
            out,
            fit,
            boxes,
        } => cmd_fit(support, out, &fit.config()?, boxes.source()?),
        Command::Predict { prototypes, query, out } => cmd_predict(prototypes, query, out),
        Command::Eval { bench } => cmd_eval(bench),
        Command::Sweep { axis, bench } => cmd_sweep(&axis.parse()?, bench),
        Command::Synth { scene, out, shots } => cmd_synth(scene, out, *shots),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PromiError::io(dir, e))
}

#[derive(Serialize)]
struct FitSummary {
    config: FitConfig,
    depth: usize,
    num_background: usize,
    support_vectors: usize,
    foreground_labels: usize,
    diagnostics: FitDiagnostics,
}

pub fn cmd_fit(support: &Path, out: &Path, cfg: &FitConfig, boxes: BoxSource) -> Result<()> {
    let episode = Episode::load_support(support)?;
    let mut maps = Vec::new();
    let mut labels = Vec::new();
    for entry in &episode.support {
        let map = entry.load_features()?;
        let b = entry.support_boxes(boxes.connectivity, boxes.min_component_px)?;
        labels.push(boxes_to_patch_labels(
            &b,
            map.image_h(),
            map.image_w(),
            map.grid_h(),
            map.grid_w(),
        )?);
        maps.push(l2_normalize(&map));
    }
    let batch = SupportBatch::new(&maps, &labels)?;
    let protos = fit(&batch, cfg)?;
    create_dir(out)?;
    save_prototypes(&protos, &out.join("prototypes.bin"))?;
    let summary = FitSummary {
        config: *cfg,
        depth: protos.depth(),
        num_background: protos.num_background(),
        support_vectors: batch.len(),
        foreground_labels: batch.labels().iter().filter(|&&l| l == 1).count(),
        diagnostics: protos.diagnostics,
    };
    write_json(&summary, &out.join("diagnostics.json"))?;
    let d = protos.diagnostics;
    println!(
        "fitted {} background prototype(s) on {} vectors: {} iteration(s), {} spawn(s), stop: {:?}",
        protos.num_background(),
        batch.len(),
        d.iterations_run,
        d.spawn_events,
        d.stop_reason
    );
    Ok(())
}

#[derive(Serialize)]
struct QuerySummary {
    mask: String,
    rle: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    overlay: Option<String>,
    height: usize,
    width: usize,
    foreground_pixels: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    intersection: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    union: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iou: Option<f64>,
}

struct QueryInput {
    features: FeatureMap,
    gt: Option<SegmentationMask>,
    source: Option<PathBuf>,
}

fn query_inputs(query: &Path) -> Result<Vec<QueryInput>> {
    if query.extension().is_some_and(|e| e.eq_ignore_ascii_case("npy")) {
        return Ok(vec![QueryInput {
            features: load_feature_map(query)?,
            gt: None,
            source: None,
        }]);
    }
    Episode::load_query(query)?
        .query
        .iter()
        .map(|e| {
            Ok(QueryInput {
                features: e.load_features()?,
                gt: e.mask_path.as_ref().map(|_| e.load_mask()).transpose()?,
                source: e.source_image_path.clone(),
            })
        })
        .collect()
}

pub fn cmd_predict(prototypes: &Path, query: &Path, out: &Path) -> Result<()> {
    let protos = load_prototypes(prototypes)?;
    let inputs = query_inputs(query)?;
    create_dir(out)?;
    let mut summaries = Vec::new();
    for (i, q) in inputs.iter().enumerate() {
        let mask = predict(&l2_normalize(&q.features), &protos)?;
        let (mask_name, rle_name) = (format!("mask_{i}.png"), format!("mask_{i}.rle.json"));
        mask.save_png(&out.join(&mask_name))?;
        write_json(&mask.to_rle(), &out.join(&rle_name))?;
        let overlay = match &q.source {
            Some(src) => {
                let img = image::open(src)
                    .map_err(|e| PromiError::Format(format!("{}: {e}", src.display())))?
                    .to_rgb8();
                let name = format!("overlay_{i}.png");
                let path = out.join(&name);
                mask.overlay(&img, 0.5)
                    .save_with_format(&path, image::ImageFormat::Png)
                    .map_err(|e| PromiError::Format(format!("{}: {e}", path.display())))?;
                Some(name)
            }
            None => None,
        };
        let counts = q.gt.as_ref().map(|gt| QueryCounts::compare(&mask, gt)).transpose()?;
        let iou = counts.and_then(|c| c.iou());
        match (counts, iou) {
            (Some(c), Some(v)) => println!("query {i}: IoU {v:.4} ({} / {})", c.intersection, c.union),
            (Some(_), None) => println!("query {i}: empty prediction and ground truth"),
            _ => println!("query {i}: {} foreground pixels", mask.count_ones()),
        }
        summaries.push(QuerySummary {
            mask: mask_name,
            rle: rle_name,
            overlay,
            height: mask.height(),
            width: mask.width(),
            foreground_pixels: mask.count_ones(),
            intersection: counts.map(|c| c.intersection),
            union: counts.map(|c| c.union),
            iou,
        });
    }
    write_json(&serde_json::json!({ "queries": summaries }), &out.join("summary.json"))
}

pub fn cmd_eval(bench: &BenchFlags) -> Result<()> {
    let cfg = bench.fit.config()?;
    let opts = bench.options()?;
    let manifest = BenchmarkManifest::load(&bench.manifest)?;
    let report = run_benchmark(&manifest, &cfg, &opts)?;
    report.save(&bench.out)?;
    for s in &report.seeds {
        println!(
            "seed {}: mean IoU {} ({} tasks, {} failed)",
            s.seed,
            fmt_iou(s.mean_iou),
            s.tasks_completed + s.tasks_failed,
            s.tasks_failed
        );
    }
    println!("mean over seeds: {}", fmt_iou(report.aggregate.mean_iou));
    Ok(())
}

pub fn cmd_sweep(axis: &SweepAxis, bench: &BenchFlags) -> Result<()> {
    let cfg = bench.fit.config()?;
    let opts = bench.options()?;
    let manifest = BenchmarkManifest::load(&bench.manifest)?;
    let result = sweep(&manifest, &cfg, axis, &opts)?;
    result.save(&bench.out)?;
    for r in &result.rows {
        println!(
            "{}={}: mean IoU {} ({} spawns)",
            result.axis,
            r.value,
            fmt_iou(r.mean_iou),
            r.spawn_events
        );
    }
    Ok(())
}

pub fn cmd_synth(scene: &Path, out: &Path, shots: usize) -> Result<()> {
    let text = std::fs::read_to_string(scene).map_err(|e| PromiError::io(scene, e))?;
    let file: SceneFile =
        serde_json::from_str(&text).map_err(|e| PromiError::Config(format!("{}: {e}", scene.display())))?;
    create_dir(out)?;
    let ds = write_dataset(&file.into_classes(), out, shots)?;
    let images: usize = ds.manifest.classes.values().map(Vec::len).sum();
    println!(
        "wrote {} class(es), {images} images; manifest {}; episode {}",
        ds.manifest.classes.len(),
        ds.manifest_path.display(),
        ds.episode_path.display()
    );
    Ok(())
}

fn fmt_iou(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_seed_lists() {
        assert_eq!(parse_seeds("0..4").unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(parse_seeds("3").unwrap(), vec![3]);
        assert_eq!(parse_seeds("2, 7").unwrap(), vec![2, 7]);
        for bad in ["", "4..1", "a", "1,1"] {
            assert!(parse_seeds(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn defaults_match_operating_point() {
        let cli = Cli::try_parse_from(["promi", "eval", "--manifest", "m.json", "--out", "o"]).unwrap();
        let Command::Eval { bench } = cli.command else { panic!() };
        assert_eq!(bench.fit.config().unwrap(), FitConfig::default());
        assert_eq!(bench.options().unwrap().seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(bench.tasks, 1000);
    }

    #[test]
    fn sweep_alias_is_accepted() {
        let cli = Cli::try_parse_from([
            "promi",
            "sweep",
            "--sweep",
            "k_max=1..4",
            "--manifest",
            "m",
            "--out",
            "o",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::Sweep { ref axis, .. } if axis == "k_max=1..4"));
    }

    #[test]
    fn usage_and_input_errors_exit_2() {
        assert_eq!(run(["promi", "fit"]), 2);
        assert_eq!(
            run([
                "promi",
                "eval",
                "--manifest",
                "/nonexistent/m.json",
                "--out",
                "/tmp/x",
                "--k-max",
                "0"
            ]),
            2
        );
        assert_eq!(
            run([
                "promi",
                "predict",
                "--prototypes",
                "/nonexistent/p.bin",
                "--query",
                "q.npy",
                "--out",
                "/tmp/x"
            ]),
            2
        );
    }
}
