use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::SimError;
use crate::vote::SimMetrics;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVES_FILE: &str = "curves.csv";

/// One row per policy.
pub fn write_summary_csv<W: Write>(results: &[SimMetrics], out: W) -> Result<(), SimError> {
    if results.is_empty() {
        return Err(SimError::EmptyResults);
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "k",
        "detection_rate",
        "latency",
        "accuracy",
        "false_positives",
        "episodes",
        "detected",
        "segments",
        "total_alerts",
    ])?;
    for m in results {
        w.write_record([
            m.k.to_string(),
            format!("{:.6}", m.detection_rate),
            format!("{:.6}", m.mean_detection_latency),
            m.accuracy.to_string(),
            m.false_positives.to_string(),
            m.episodes.to_string(),
            m.detected.to_string(),
            m.segments.to_string(),
            m.total_alerts.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Cumulative detection fraction per timestamp, one column per policy. All results must come
/// from the same trace.
pub fn write_curves_csv<W: Write>(results: &[SimMetrics], out: W) -> Result<(), SimError> {
    let Some(first) = results.first() else {
        return Err(SimError::EmptyResults);
    };
    for m in results {
        let same = m.curve.len() == first.curve.len()
            && m.curve.iter().zip(&first.curve).all(|(a, b)| a.timestamp == b.timestamp);
        if !same {
            return Err(SimError::InvalidTrace("detection curves come from different traces".into()));
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp".to_string()];
    header.extend(results.iter().map(|m| format!("k{}", m.k)));
    w.write_record(&header)?;
    for (i, p) in first.curve.iter().enumerate() {
        let mut row = vec![p.timestamp.to_string()];
        row.extend(results.iter().map(|m| format!("{:.6}", m.curve[i].detected_fraction)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.csv` and `curves.csv` into `dir`, creating it if needed.
pub fn export_results(results: &[SimMetrics], dir: &Path) -> Result<(PathBuf, PathBuf), SimError> {
    if results.is_empty() {
        return Err(SimError::EmptyResults);
    }
    std::fs::create_dir_all(dir)?;
    let summary = dir.join(SUMMARY_FILE);
    let curves = dir.join(CURVES_FILE);
    let mut buf = Vec::new();
    write_summary_csv(results, &mut buf)?;
    let mut curve_buf = Vec::new();
    write_curves_csv(results, &mut curve_buf)?;
    std::fs::write(&summary, buf)?;
    std::fs::write(&curves, curve_buf)?;
    Ok((summary, curves))
}
