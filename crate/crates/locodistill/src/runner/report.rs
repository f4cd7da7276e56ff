//! Aggregation of the evaluation grid into paper-style tables, normalized
//! plot series, rendered files, and the exact-recompute audit.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::eval::{aggregate_outcomes, mean_std, MeanStd, MetricsReport, TargetKind};

use super::matrix::{write_atomic, TARGETS};
use super::registry::{RunRegistry, Status};

pub const METRICS: [&str; 3] = ["success_rate", "tracking_error", "smoothness"];
/// Metrics where lower raw values are better; inverted after normalization.
pub const INVERTED: [&str; 2] = ["tracking_error", "smoothness"];

/// Results for one target: rows metric × size, columns setups, cells
/// mean ± std over diffusion-training seeds. Missing cells are absent keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub target: TargetKind,
    /// Size labels in first-appearance order.
    pub sizes: Vec<String>,
    /// Setup names in first-appearance order.
    pub setups: Vec<String>,
    /// Key "metric/size/setup".
    pub cells: BTreeMap<String, MeanStd>,
}

pub fn cell_key(metric: &str, size: &str, setup: &str) -> String {
    format!("{metric}/{size}/{setup}")
}

/// Parse "eval/{setup}/{size}/s{i}/{target}".
fn parse_eval_name(name: &str) -> Option<(String, String, usize, TargetKind)> {
    let parts: Vec<&str> = name.split('/').collect();
    if parts.len() != 5 || parts[0] != "eval" {
        return None;
    }
    let seed: usize = parts[3].strip_prefix('s')?.parse().ok()?;
    let target: TargetKind = parts[4].parse().ok()?;
    Some((parts[1].to_string(), parts[2].to_string(), seed, target))
}

/// Build the results table for one target from completed evaluation records.
/// Cells average the per-report means over diffusion seeds.
pub fn aggregate(reg: &RunRegistry, target: TargetKind) -> Result<ResultsTable> {
    let mut sizes: Vec<String> = Vec::new();
    let mut setups: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<MetricsReport>> = BTreeMap::new();
    for rec in reg.records() {
        if rec.stage != "eval" || rec.status != Status::Completed {
            continue;
        }
        let Some((setup, size, _seed, t)) = parse_eval_name(&rec.name) else {
            continue;
        };
        if t != target {
            continue;
        }
        let path = reg.root().join(rec.outputs.first().context("eval record has no output")?);
        let report: MetricsReport = serde_json::from_slice(
            &std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?,
        )?;
        if !sizes.contains(&size) {
            sizes.push(size.clone());
        }
        if !setups.contains(&setup) {
            setups.push(setup.clone());
        }
        groups.entry((setup, size)).or_default().push(report);
    }

    let mut cells = BTreeMap::new();
    for ((setup, size), reports) in &groups {
        for metric in METRICS {
            let vals: Vec<f64> = reports
                .iter()
                .map(|r| match metric {
                    "success_rate" => r.success_rate.mean,
                    "tracking_error" => r.tracking_error.mean,
                    _ => r.smoothness.mean,
                })
                .collect();
            cells.insert(cell_key(metric, size, setup), mean_std(&vals));
        }
    }
    Ok(ResultsTable {
        target,
        sizes,
        setups,
        cells,
    })
}

/// Normalized plot series: per metric, min-max over all cells to [0, 1];
/// tracking and smoothness inverted so higher is better; success rate passes
/// through unchanged (already in [0, 1]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub target: TargetKind,
    /// Key "metric/size/setup" -> normalized value.
    pub values: BTreeMap<String, f64>,
    /// Metrics that were constant across cells (all mapped to 1.0).
    pub constant_metrics: Vec<String>,
}

pub fn normalize_metrics(table: &ResultsTable) -> PlotSeries {
    let mut values = BTreeMap::new();
    let mut constant_metrics = Vec::new();
    for metric in METRICS {
        let entries: Vec<(&String, f64)> = table
            .cells
            .iter()
            .filter(|(k, _)| k.starts_with(&format!("{metric}/")))
            .map(|(k, v)| (k, v.mean))
            .collect();
        if entries.is_empty() {
            continue;
        }
        if metric == "success_rate" {
            for (k, v) in entries {
                values.insert(k.clone(), v);
            }
            continue;
        }
        let lo = entries.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        let hi = entries.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        if hi == lo {
            constant_metrics.push(metric.to_string());
            for (k, _) in entries {
                values.insert(k.clone(), 1.0);
            }
            continue;
        }
        for (k, v) in entries {
            values.insert(k.clone(), 1.0 - (v - lo) / (hi - lo));
        }
    }
    PlotSeries {
        target: table.target,
        values,
        constant_metrics,
    }
}

/// Fixed-width text rendering; missing cells become "—".
pub fn render_table(table: &ResultsTable, provenance: u64) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "target: {}    provenance: {provenance:016x}\n",
        table.target.as_str()
    ));
    out.push_str(&format!("{:<16}{:<8}", "metric", "size"));
    for s in &table.setups {
        out.push_str(&format!("{s:>20}"));
    }
    out.push('\n');
    for metric in METRICS {
        for size in &table.sizes {
            out.push_str(&format!("{metric:<16}{size:<8}"));
            for setup in &table.setups {
                match table.cells.get(&cell_key(metric, size, setup)) {
                    Some(c) => out.push_str(&format!(
                        "{:>20}",
                        format!("{:.3} ± {:.3}", c.mean, c.std)
                    )),
                    None => out.push_str(&format!("{:>20}", "—")),
                }
            }
            out.push('\n');
        }
    }
    out
}

/// A minimal static bar-chart rendering of the normalized series.
pub fn render_plot_svg(series: &PlotSeries) -> String {
    let keys: Vec<&String> = series.values.keys().collect();
    let bar_w = 14;
    let gap = 4;
    let width = 120 + keys.len() * (bar_w + gap);
    let height = 260;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\">\n\
         <text x=\"8\" y=\"16\" font-size=\"12\">normalized metrics — {}</text>\n",
        series.target.as_str()
    );
    for (i, k) in keys.iter().enumerate() {
        let v = series.values[*k];
        let h = (v * 180.0).round() as i64;
        let x = 100 + i * (bar_w + gap);
        let color = if k.starts_with("success") {
            "#4c78a8"
        } else if k.starts_with("tracking") {
            "#f58518"
        } else {
            "#54a24b"
        };
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{}\" width=\"{bar_w}\" height=\"{h}\" fill=\"{color}\"><title>{k} = {v:.4}</title></rect>\n",
            220 - h
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Stable hash of the registry contents, stamped into the report files.
pub fn registry_provenance(reg: &RunRegistry) -> u64 {
    crate::checkpoint::config_hash(&reg.records())
}

/// Write per-target tables (text + JSON) and normalized plot data (JSON +
/// SVG). Deterministic bytes for a given registry.
pub fn report(reg: &RunRegistry) -> Result<Vec<PathBuf>> {
    let provenance = registry_provenance(reg);
    let mut written = Vec::new();
    for target in TARGETS {
        let table = aggregate(reg, target)?;
        let series = normalize_metrics(&table);
        let base = reg.root().join("report");
        let files = [
            (
                base.join(format!("table_{}.txt", target.as_str())),
                render_table(&table, provenance).into_bytes(),
            ),
            (
                base.join(format!("table_{}.json", target.as_str())),
                serde_json::to_vec_pretty(&table)?,
            ),
            (
                base.join(format!("plot_{}.json", target.as_str())),
                serde_json::to_vec_pretty(&series)?,
            ),
            (
                base.join(format!("plot_{}.svg", target.as_str())),
                render_plot_svg(&series).into_bytes(),
            ),
        ];
        for (path, bytes) in files {
            write_atomic(&path, &bytes)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Evaluation reports re-derived from raw episode outcomes.
    pub reports_checked: usize,
    /// Table cells recomputed from the evaluation reports.
    pub cells_checked: usize,
    pub mismatches: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Recompute every aggregate number from stored raw data and compare
/// exactly: per-seed metrics and mean ± std from raw episode outcomes, and
/// table cells from the per-report aggregates.
pub fn audit(reg: &RunRegistry) -> Result<AuditReport> {
    let mut out = AuditReport {
        reports_checked: 0,
        cells_checked: 0,
        mismatches: Vec::new(),
    };
    for rec in reg.records() {
        if rec.stage != "eval" || rec.status != Status::Completed {
            continue;
        }
        let path = reg.root().join(rec.outputs.first().context("eval record has no output")?);
        let report: MetricsReport = serde_json::from_slice(&std::fs::read(&path)?)?;
        let seeds: Vec<u64> = report.per_seed.iter().map(|s| s.seed).collect();
        let redone = aggregate_outcomes(report.target, &seeds, report.episodes.clone());
        out.reports_checked += 1;
        if redone != report {
            out.mismatches
                .push(format!("{}: aggregate differs from raw episodes", rec.name));
        }
    }
    for target in TARGETS {
        let table = aggregate(reg, target)?;
        let stored = reg
            .root()
            .join("report")
            .join(format!("table_{}.json", target.as_str()));
        if stored.exists() {
            let stored_table: ResultsTable = serde_json::from_slice(&std::fs::read(&stored)?)?;
            for (k, v) in &table.cells {
                out.cells_checked += 1;
                if stored_table.cells.get(k) != Some(v) {
                    out.mismatches
                        .push(format!("table {}/{k}: stored cell differs", target.as_str()));
                }
            }
            if stored_table != table {
                out.mismatches
                    .push(format!("table {}: structure differs", target.as_str()));
            }
        } else {
            out.cells_checked += table.cells.len();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{EpisodeOutcome, SeedMetrics};
    use crate::runner::registry::RunRecord;
    use tempfile::TempDir;

    /// A consistent synthetic MetricsReport whose aggregates really derive
    /// from its raw episodes.
    fn synth_report(target: TargetKind, success: f64) -> MetricsReport {
        let n = 10usize;
        let survivors = (success * n as f64).round() as usize;
        let episodes: Vec<EpisodeOutcome> = (0..n)
            .map(|i| EpisodeOutcome {
                seed: 0,
                episode: i,
                survived: i < survivors,
                steps: 10,
                tracking: 0.5,
                smoothness: 2.0,
            })
            .collect();
        aggregate_outcomes(target, &[0], episodes)
    }

    fn registry_with_reports(cells: &[(&str, &str, Vec<f64>)]) -> (TempDir, RunRegistry) {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = RunRegistry::open(dir.path()).unwrap();
        for (setup, size, successes) in cells {
            for (i, &succ) in successes.iter().enumerate() {
                for target in TARGETS {
                    let name = format!("eval/{setup}/{size}/s{i}/{}", target.as_str());
                    let out = format!("eval/{setup}-{size}-s{i}-{}.json", target.as_str());
                    let report = synth_report(target, succ);
                    write_atomic(
                        &dir.path().join(&out),
                        &serde_json::to_vec_pretty(&report).unwrap(),
                    )
                    .unwrap();
                    reg.append(RunRecord {
                        stage: "eval".into(),
                        name,
                        input_hash: 1,
                        outputs: vec![out],
                        status: Status::Completed,
                        detail: String::new(),
                        seconds: 0.0,
                    })
                    .unwrap();
                }
            }
        }
        (dir, reg)
    }

    #[test]
    fn aggregate_spec_arithmetic() {
        let (_dir, reg) = registry_with_reports(&[("all", "200k", vec![0.9, 1.0, 0.8])]);
        let table = aggregate(&reg, TargetKind::Fixed).unwrap();
        let c = table.cells[&cell_key("success_rate", "200k", "all")];
        assert!((c.mean - 0.9).abs() < 1e-12);
        assert!((c.std - 0.0816496580927726).abs() < 1e-12);
        // three identical seeds -> zero std
        let (_d2, reg2) = registry_with_reports(&[("none", "50k", vec![1.0, 1.0, 1.0])]);
        let t2 = aggregate(&reg2, TargetKind::Fixed).unwrap();
        let c2 = t2.cells[&cell_key("success_rate", "50k", "none")];
        assert_eq!((c2.mean, c2.std), (1.0, 0.0));
    }

    #[test]
    fn empty_registry_gives_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        let reg = RunRegistry::open(dir.path()).unwrap();
        let table = aggregate(&reg, TargetKind::Fixed).unwrap();
        assert!(table.cells.is_empty());
        assert!(table.sizes.is_empty());
    }

    #[test]
    fn normalization_endpoints_and_inversion() {
        let (_dir, reg) = registry_with_reports(&[
            ("none", "50k", vec![0.2]),
            ("all", "50k", vec![0.8]),
            ("dynamics", "50k", vec![0.5]),
        ]);
        // patch tracking values to differ per setup so min-max is non-trivial
        let mut table = aggregate(&reg, TargetKind::Fixed).unwrap();
        for (i, setup) in ["none", "all", "dynamics"].iter().enumerate() {
            table.cells.insert(
                cell_key("tracking_error", "50k", setup),
                MeanStd {
                    mean: 0.1 + i as f64 * 0.2,
                    std: 0.0,
                },
            );
        }
        let series = normalize_metrics(&table);
        // inverted metric: best (lowest) -> 1.0, worst -> 0.0
        assert_eq!(series.values[&cell_key("tracking_error", "50k", "none")], 1.0);
        assert_eq!(series.values[&cell_key("tracking_error", "50k", "dynamics")], 0.0);
        // inversion reverses raw order exactly
        assert!(
            series.values[&cell_key("tracking_error", "50k", "all")] > 0.0
                && series.values[&cell_key("tracking_error", "50k", "all")] < 1.0
        );
        // success untouched
        assert_eq!(series.values[&cell_key("success_rate", "50k", "all")], 0.8);
        // constant metric (smoothness all 2.0) -> all 1.0, logged
        assert!(series.constant_metrics.contains(&"smoothness".to_string()));
        assert_eq!(series.values[&cell_key("smoothness", "50k", "none")], 1.0);
    }

    #[test]
    fn report_files_deterministic_and_mark_missing_cells() {
        let (dir, reg) = registry_with_reports(&[("all", "50k", vec![1.0])]);
        let files = report(&reg).unwrap();
        assert_eq!(files.len(), 8, "2 targets x 4 files");
        let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        let files2 = report(&reg).unwrap();
        let second: Vec<Vec<u8>> = files2.iter().map(|f| std::fs::read(f).unwrap()).collect();
        assert_eq!(first, second);
        // a table with a deliberately absent cell renders an em dash
        let mut table = aggregate(&reg, TargetKind::Fixed).unwrap();
        table.setups.push("ghost".into());
        let text = render_table(&table, 0);
        assert!(text.contains("—"));
        drop(dir);
    }

    #[test]
    fn audit_passes_then_catches_tampering() {
        let (dir, reg) = registry_with_reports(&[("all", "200k", vec![0.9, 1.0])]);
        report(&reg).unwrap();
        let a = audit(&reg).unwrap();
        assert!(a.passed(), "mismatches: {:?}", a.mismatches);
        assert_eq!(a.reports_checked, 4);
        assert!(a.cells_checked > 0);
        // tamper with one stored report's aggregate
        let victim = dir.path().join("eval/all-200k-s0-fixed.json");
        let mut report_json: MetricsReport =
            serde_json::from_slice(&std::fs::read(&victim).unwrap()).unwrap();
        report_json.success_rate.mean += 0.01;
        std::fs::write(&victim, serde_json::to_vec_pretty(&report_json).unwrap()).unwrap();
        let b = audit(&reg).unwrap();
        assert!(!b.passed());
        assert!(b.mismatches.iter().any(|m| m.contains("eval/all/200k/s0/fixed")));
    }
}
