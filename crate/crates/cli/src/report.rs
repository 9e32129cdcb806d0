//! Markdown tables over a results directory: accuracy per exit and the
//! latency of every depth under each bundled rendering profile.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use fovea::fixtures;
use fovea::geometry::Resolution;
use fovea::selector::{render_latency_for_depth, select, DepthProfile, Percentile, SelectionQuery};

use crate::commands::{setup, EvalReport, DEPTHS_FILE, EVAL_FILE};
use crate::ReportArgs;

pub const REPORT_FILE: &str = "report.md";

/// Files named `name` under `dir`, depth-first in sorted order.
fn find_named(dir: &Path, name: &str, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            find_named(&path, name, found)?;
        } else if path.file_name().is_some_and(|n| n == name) {
            found.push(path);
        }
    }
    Ok(())
}

fn label(root: &Path, file: &Path) -> String {
    let dir = file.parent().unwrap_or(root);
    match dir.strip_prefix(root) {
        Ok(rel) if !rel.as_os_str().is_empty() => rel.display().to_string(),
        _ => ".".into(),
    }
}

fn accuracy_table(md: &mut String, report: &EvalReport) {
    md.push_str("| Exit | GFLOPs | Mean | P90 | P95 | Min | Max |\n|---|---|---|---|---|---|---|\n");
    for e in &report.exits {
        let d = &e.distribution;
        let _ = writeln!(
            md,
            "| {} | {:.4} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} |",
            e.depth,
            e.flops as f64 / 1e9,
            d.mean,
            d.p90,
            d.p95,
            d.min,
            d.max
        );
    }
}

fn latency_table(md: &mut String, depths: &DepthProfile, resolution: Resolution) -> Result<()> {
    let query = SelectionQuery::new(fixtures::hmd_profile(resolution), Percentile::P95);
    let best = select(depths, &query)?;
    let _ = writeln!(md, "\n{resolution}, P95 budget:\n");
    md.push_str("| Depth | T_tracking (ms) | T_fr (ms) | Total (ms) | |\n|---|---|---|---|---|\n");
    for e in depths.entries() {
        let t_fr = render_latency_for_depth(e, &query)?;
        let mark = if e.depth == best.depth { "selected" } else { "" };
        let _ = writeln!(
            md,
            "| {} | {:.3} | {:.3} | {:.3} | {mark} |",
            e.depth,
            e.t_tracking_ms,
            t_fr,
            e.t_tracking_ms + t_fr
        );
    }
    Ok(())
}

pub fn render(root: &Path) -> Result<String> {
    let mut evals = Vec::new();
    find_named(root, EVAL_FILE, &mut evals)?;
    let mut depth_files = Vec::new();
    find_named(root, DEPTHS_FILE, &mut depth_files)?;
    if evals.is_empty() && depth_files.is_empty() {
        bail!("no {EVAL_FILE} or {DEPTHS_FILE} under {}", root.display());
    }
    let mut md = String::from("# Results\n");
    for path in &evals {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let report: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let _ = writeln!(md, "\n## Accuracy: {} ({} samples)\n", label(root, path), report.samples);
        accuracy_table(&mut md, &report);
    }
    for path in &depth_files {
        let depths = DepthProfile::load(path)?;
        let _ = writeln!(md, "\n## Latency by depth: {}", label(root, path));
        for r in [Resolution::P720, Resolution::P1080, Resolution::P1440] {
            latency_table(&mut md, &depths, r)?;
        }
    }
    Ok(md)
}

pub fn run(a: &ReportArgs) -> Result<()> {
    let (_, out) = setup(&a.common)?;
    let root = a.results.clone().unwrap_or_else(|| out.clone());
    let md = render(&root)?;
    let path = out.join(REPORT_FILE);
    std::fs::write(&path, &md).with_context(|| format!("writing {}", path.display()))?;
    std::io::stdout().lock().write_all(md.as_bytes()).context("writing to stdout")
}
