//! Report files: summary, CSV tables and SVG charts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::svg::{Axis, Chart, Series};
use super::{EvalError, EvalReport, OperatingOutcome, PairId, ScoreSet, HISTOGRAM_BINS};
use crate::sigset::Label;

const IMPOSTER_COLOR: &str = "#d62728";
const GENUINE_COLOR: &str = "#1f77b4";
const LOG_FLOOR: f64 = 1e-7;

/// Paths of everything [`emit_report`] wrote.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportFiles {
    pub paths: Vec<PathBuf>,
}

fn write(dir: &Path, name: &str, contents: &str, paths: &mut Vec<PathBuf>) -> Result<(), EvalError> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    paths.push(path);
    Ok(())
}

fn target_label(t: f64) -> String {
    format!("{t:e}")
}

pub fn summary_text(report: &EvalReport) -> String {
    let mut s = String::new();
    let (i, g) = (&report.imposter_stats, &report.genuine_stats);
    let _ = writeln!(s, "comparisons: {} genuine, {} imposter", g.count, i.count);
    let _ = writeln!(s, "imposter: mean {:.5} std {:.5} min {:.4} max {:.4}", i.mean, i.std, i.min, i.max);
    let _ = writeln!(s, "genuine:  mean {:.5} std {:.5} min {:.4} max {:.4}", g.mean, g.std, g.min, g.max);
    let _ = writeln!(s, "decidability: {:.4}", report.decidability);
    let _ = writeln!(s, "eer: {:.6} at threshold {:.4}", report.eer.value, report.eer.threshold);
    let _ = writeln!(s, "minimum genuine score: {:.4}", report.min_genuine);
    let _ = writeln!(s, "maximum imposter score: {:.4}", report.max_imposter);
    let _ = writeln!(s, "operating points:");
    for p in &report.operating_points {
        match p.outcome {
            OperatingOutcome::Resolved { threshold, far, frr } => {
                let _ = writeln!(
                    s,
                    "  FAR {}: FRR {:.6} at threshold {:.4} (observed FAR {:.6})",
                    target_label(p.far_target),
                    frr,
                    threshold,
                    far
                );
            }
            OperatingOutcome::Unresolvable { imposter_count } => {
                let _ = writeln!(
                    s,
                    "  FAR {}: UNRESOLVABLE ({} imposter scores)",
                    target_label(p.far_target),
                    imposter_count
                );
            }
        }
    }
    let _ = writeln!(s, "suspected mislabels: {}", report.suspected_mislabels.len());
    let _ = writeln!(s, "excluded templates: {}", report.excluded_templates.len());
    for (id, reason) in &report.excluded_templates {
        let _ = writeln!(s, "  {id}: {reason}");
    }
    let _ = writeln!(s, "skipped comparisons: {}", report.skipped_comparisons);
    s
}

fn histogram_csv(report: &EvalReport) -> String {
    let mut s = String::from("bin_start,bin_end,imposter_count,genuine_count\n");
    for b in 0..HISTOGRAM_BINS {
        let _ = writeln!(
            s,
            "{:.3},{:.3},{},{}",
            b as f64 / HISTOGRAM_BINS as f64,
            (b + 1) as f64 / HISTOGRAM_BINS as f64,
            report.imposter_stats.histogram[b],
            report.genuine_stats.histogram[b]
        );
    }
    s
}

fn far_frr_csv(report: &EvalReport) -> String {
    let mut s = String::from("threshold,far,frr\n");
    for p in &report.far_frr {
        let _ = writeln!(s, "{:.3},{},{}", p.threshold, p.far, p.frr);
    }
    s
}

fn roc_csv(report: &EvalReport) -> String {
    let mut s = String::from("far,tar\n");
    for p in &report.roc {
        let _ = writeln!(s, "{},{}", p.far, p.tar);
    }
    s
}

fn operating_points_csv(report: &EvalReport) -> String {
    let mut s = String::from("far_target,status,threshold,far,frr\n");
    for p in &report.operating_points {
        match p.outcome {
            OperatingOutcome::Resolved { threshold, far, frr } => {
                let _ = writeln!(s, "{},resolved,{threshold},{far},{frr}", target_label(p.far_target));
            }
            OperatingOutcome::Unresolvable { .. } => {
                let _ = writeln!(s, "{},UNRESOLVABLE,,,", target_label(p.far_target));
            }
        }
    }
    s
}

fn mislabels_csv(report: &EvalReport) -> String {
    let mut s = String::from("probe,enrolled,declared_label,score\n");
    for m in &report.suspected_mislabels {
        let _ = writeln!(s, "{},{},{},{}", m.pair.probe, m.pair.enrolled, m.declared, m.score);
    }
    s
}

fn relative(hist: &[u64]) -> Vec<f64> {
    let total: u64 = hist.iter().sum();
    hist.iter().map(|&c| c as f64 / total.max(1) as f64).collect()
}

fn distribution_chart(report: &EvalReport, log: bool) -> Chart {
    let imp = relative(&report.imposter_stats.histogram);
    let gen = relative(&report.genuine_stats.histogram);
    let width = 1.0 / HISTOGRAM_BINS as f64;
    let bars = |h: &[f64]| -> Vec<(f64, f64, f64)> {
        h.iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(b, &v)| (b as f64 * width, (b + 1) as f64 * width, v))
            .collect()
    };
    let peak = imp.iter().chain(&gen).fold(0.0f64, |a, &b| a.max(b));
    let y = if log {
        let floor = imp
            .iter()
            .chain(&gen)
            .filter(|&&v| v > 0.0)
            .fold(1.0f64, |a, &b| a.min(b));
        Axis::log((floor / 2.0).max(LOG_FLOOR), 1.0)
    } else {
        Axis::linear(0.0, (peak * 1.1).max(1e-3))
    };
    Chart {
        title: format!("Score distributions ({})", if log { "log" } else { "linear" }),
        x_label: "similarity score".into(),
        y_label: "relative frequency".into(),
        x: Axis::linear(0.0, 1.0),
        y,
        series: vec![
            Series::Bars { name: "imposter".into(), color: IMPOSTER_COLOR, bars: bars(&imp) },
            Series::Bars { name: "genuine".into(), color: GENUINE_COLOR, bars: bars(&gen) },
        ],
    }
}

fn far_frr_chart(report: &EvalReport, log: bool) -> Chart {
    let far: Vec<(f64, f64)> = report.far_frr.iter().map(|p| (p.threshold, p.far)).collect();
    let frr: Vec<(f64, f64)> = report.far_frr.iter().map(|p| (p.threshold, p.frr)).collect();
    let y = if log {
        let floor = report
            .far_frr
            .iter()
            .flat_map(|p| [p.far, p.frr])
            .filter(|&v| v > 0.0)
            .fold(1.0f64, f64::min);
        Axis::log((floor / 2.0).max(LOG_FLOOR), 1.0)
    } else {
        Axis::linear(0.0, 1.0)
    };
    Chart {
        title: format!("FAR and FRR ({})", if log { "log" } else { "linear" }),
        x_label: "threshold".into(),
        y_label: "error rate".into(),
        x: Axis::linear(0.0, 1.0),
        y,
        series: vec![
            Series::Line { name: "FAR".into(), color: IMPOSTER_COLOR, points: far },
            Series::Line { name: "FRR".into(), color: GENUINE_COLOR, points: frr },
        ],
    }
}

fn roc_chart(report: &EvalReport) -> Chart {
    let points = report
        .roc
        .iter()
        .map(|p| (p.far.max(LOG_FLOOR), p.tar))
        .collect();
    Chart {
        title: "ROC".into(),
        x_label: "false accept rate".into(),
        y_label: "true accept rate".into(),
        x: Axis::log(LOG_FLOOR, 1.0),
        y: Axis::linear(0.0, 1.0),
        series: vec![Series::Line { name: "ROC".into(), color: GENUINE_COLOR, points }],
    }
}

/// Writes the full report into `dir`, creating it if needed.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<ReportFiles, EvalError> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    write(dir, "summary.txt", &summary_text(report), &mut paths)?;
    write(dir, "histogram.csv", &histogram_csv(report), &mut paths)?;
    write(dir, "far_frr.csv", &far_frr_csv(report), &mut paths)?;
    write(dir, "roc.csv", &roc_csv(report), &mut paths)?;
    write(dir, "operating_points.csv", &operating_points_csv(report), &mut paths)?;
    write(dir, "mislabels.csv", &mislabels_csv(report), &mut paths)?;
    write(dir, "distributions_linear.svg", &distribution_chart(report, false).render(), &mut paths)?;
    write(dir, "distributions_log.svg", &distribution_chart(report, true).render(), &mut paths)?;
    write(dir, "far_frr_linear.svg", &far_frr_chart(report, false).render(), &mut paths)?;
    write(dir, "far_frr_log.svg", &far_frr_chart(report, true).render(), &mut paths)?;
    write(dir, "roc.svg", &roc_chart(report).render(), &mut paths)?;
    Ok(ReportFiles { paths })
}

const SCORES_HEADER: &str = "probe,enrolled,label,score";

/// Scores as CSV; the score column uses the shortest exact decimal form so
/// reading it back reproduces the same values.
pub fn write_scores_csv(scores: &ScoreSet, path: &Path) -> Result<(), EvalError> {
    let mut s = String::from(SCORES_HEADER);
    s.push('\n');
    for (pair, label, score) in scores.records() {
        let _ = writeln!(s, "{},{},{},{}", pair.probe, pair.enrolled, label.code(), score);
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<ScoreSet, EvalError> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == SCORES_HEADER) {
            continue;
        }
        let malformed = |reason: String| EvalError::MalformedScores { line: line_no, reason };
        let fields: Vec<&str> = line.split(',').collect();
        let [probe, enrolled, label, score] = fields[..] else {
            return Err(malformed(format!("expected 4 fields, found {}", fields.len())));
        };
        let label = match label {
            "G" => Label::Genuine,
            "I" => Label::Imposter,
            other => return Err(malformed(format!("unknown label '{other}'"))),
        };
        let score: f64 = score
            .parse()
            .map_err(|_| malformed(format!("invalid score '{score}'")))?;
        records.push((PairId::new(probe, enrolled), label, score));
    }
    ScoreSet::from_records(records)
}
