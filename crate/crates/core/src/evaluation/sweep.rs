use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{run_benchmark, write_json, BenchmarkManifest, EvalOptions, EvalReport};
use crate::error::{PromiError, Result};
use crate::prototypes::FitConfig;

/// A one-dimensional grid over the configuration.
///
/// Parsed from `k_max=1..4`, `k_max=1,2,3`, `flags`, `shots=1,5,10`; a bare
/// `k_max` means `1..8` and a bare `shots` means `1,5,10`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    KMax(Vec<usize>),
    /// The four on/off combinations of the two refinement switches.
    Flags,
    Shots(Vec<usize>),
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    let bad = || PromiError::Config(format!("cannot parse sweep values {s:?}; use a..b or a,b,c"));
    let values: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b): (usize, usize) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(PromiError::Config(format!("sweep values must be positive: {s:?}")));
    }
    Ok(values)
}

impl FromStr for SweepAxis {
    type Err = PromiError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, values) = match s.split_once('=') {
            Some((n, v)) => (n.trim(), Some(v)),
            None => (s.trim(), None),
        };
        match (name.replace('-', "_").as_str(), values) {
            ("k_max" | "k", None) => Ok(SweepAxis::KMax((1..=8).collect())),
            ("k_max" | "k", Some(v)) => parse_list(v).map(SweepAxis::KMax),
            ("flags", None) => Ok(SweepAxis::Flags),
            ("shots", None) => Ok(SweepAxis::Shots(vec![1, 5, 10])),
            ("shots", Some(v)) => parse_list(v).map(SweepAxis::Shots),
            _ => Err(PromiError::Config(format!(
                "unknown sweep axis {s:?}; expected k_max[=..], flags or shots[=..]"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::KMax(_) => "k_max",
            SweepAxis::Flags => "flags",
            SweepAxis::Shots(_) => "shots",
        }
    }

    /// Grid points as (label, config, shots).
    fn points(&self, base: &FitConfig, shots: usize) -> Vec<(String, FitConfig, usize)> {
        match self {
            SweepAxis::KMax(ks) => ks
                .iter()
                .map(|&k| (k.to_string(), FitConfig { k_max: k, ..*base }, shots))
                .collect(),
            SweepAxis::Flags => [
                (false, false, "none"),
                (true, false, "bg_mixture"),
                (false, true, "fg_refinement"),
                (true, true, "both"),
            ]
            .into_iter()
            .map(|(bg, fg, label)| {
                let cfg = FitConfig {
                    bg_mixture_enabled: bg,
                    fg_refinement_enabled: fg,
                    ..*base
                };
                (label.to_string(), cfg, shots)
            })
            .collect(),
            SweepAxis::Shots(ns) => ns.iter().map(|&n| (n.to_string(), *base, n)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub k_max: usize,
    pub bg_mixture: bool,
    pub fg_refinement: bool,
    pub shots: usize,
    pub mean_iou: Option<f64>,
    pub tasks_failed: usize,
    pub iterations: usize,
    pub spawn_events: usize,
    pub empty_cluster_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: String,
    pub rows: Vec<SweepRow>,
    #[serde(skip)]
    pub reports: Vec<EvalReport>,
}

/// Runs one benchmark per grid point of `axis`.
pub fn sweep(manifest: &BenchmarkManifest, base: &FitConfig, axis: &SweepAxis, opts: &EvalOptions) -> Result<Sweep> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (value, cfg, shots) in axis.points(base, opts.shots) {
        log::info!("sweep {}={value}", axis.name());
        let report = run_benchmark(manifest, &cfg, &EvalOptions { shots, ..opts.clone() })?;
        let d = report.aggregate.diagnostics;
        rows.push(SweepRow {
            value,
            k_max: cfg.k_max,
            bg_mixture: cfg.bg_mixture_enabled,
            fg_refinement: cfg.fg_refinement_enabled,
            shots,
            mean_iou: report.aggregate.mean_iou,
            tasks_failed: report.aggregate.tasks_failed,
            iterations: d.iterations,
            spawn_events: d.spawn_events,
            empty_cluster_events: d.empty_cluster_events,
        });
        reports.push(report);
    }
    Ok(Sweep {
        axis: axis.name().into(),
        rows,
        reports,
    })
}

impl Sweep {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "axis",
            "value",
            "k_max",
            "bg_mixture",
            "fg_refinement",
            "shots",
            "mean_iou",
            "tasks_failed",
            "iterations",
            "spawn_events",
            "empty_cluster_events",
        ])
        .expect("in-memory csv");
        for r in &self.rows {
            w.write_record([
                self.axis.clone(),
                r.value.clone(),
                r.k_max.to_string(),
                r.bg_mixture.to_string(),
                r.fg_refinement.to_string(),
                r.shots.to_string(),
                r.mean_iou.map(|x| x.to_string()).unwrap_or_default(),
                r.tasks_failed.to_string(),
                r.iterations.to_string(),
                r.spawn_events.to_string(),
                r.empty_cluster_events.to_string(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    /// Line plot of mean IoU against the axis values.
    pub fn to_svg(&self) -> String {
        const W: f64 = 480.0;
        const H: f64 = 320.0;
        const L: f64 = 56.0;
        const R: f64 = 16.0;
        const T: f64 = 24.0;
        const B: f64 = 48.0;
        let n = self.rows.len();
        let x_at = |i: usize| {
            if n > 1 {
                L + (W - L - R) * i as f64 / (n - 1) as f64
            } else {
                (L + W - R) / 2.0
            }
        };
        let y_at = |v: f64| T + (H - T - B) * (1.0 - v);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        for tick in 0..=5 {
            let v = tick as f64 / 5.0;
            let y = y_at(v);
            let _ = writeln!(
                s,
                r##"<line x1="{L}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##,
                W - R
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
                L - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{:.1}" stroke="black"/>"#,
            H - B
        );
        let _ = writeln!(
            s,
            r#"<line x1="{L}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
            H - B,
            W - R,
            H - B
        );
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                x_at(i),
                H - B + 16.0,
                xml_escape(&r.value)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (L + W - R) / 2.0,
            H - 8.0,
            self.axis
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">mean IoU</text>"#,
            (T + H - B) / 2.0,
            (T + H - B) / 2.0
        );
        let pts: Vec<String> = self
            .rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.mean_iou.map(|v| format!("{:.1},{:.1}", x_at(i), y_at(v))))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').expect("point");
            let _ = writeln!(s, r##"<circle cx="{x}" cy="{y}" r="3" fill="#1f77b4"/>"##);
        }
        s.push_str("</svg>\n");
        s
    }

    /// Writes `sweep.csv`, `sweep.json` and `sweep.svg` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| PromiError::io(dir, e))?;
        let csv = dir.join("sweep.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| PromiError::io(&csv, e))?;
        write_json(self, &dir.join("sweep.json"))?;
        let svg = dir.join("sweep.svg");
        std::fs::write(&svg, self.to_svg()).map_err(|e| PromiError::io(&svg, e))
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
