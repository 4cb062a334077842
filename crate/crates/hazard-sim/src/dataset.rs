//! CSV adapter for recorded sensor data: a timestamp column, one column per sensor and a
//! condition label per row.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::model::Condition;
use crate::trace::{Episode, Reading, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub timestamp_column: String,
    pub label_column: String,
    /// Split hazard runs longer than this into consecutive episodes.
    pub max_episode_len: Option<usize>,
}

impl Default for Segmentation {
    fn default() -> Self {
        Self {
            timestamp_column: "timestamp".into(),
            label_column: "label".into(),
            max_episode_len: None,
        }
    }
}

pub fn load_dataset_csv(path: &Path, seg: &Segmentation) -> Result<Trace, SimError> {
    parse_dataset_csv(std::fs::File::open(path)?, seg)
}

pub fn parse_dataset_csv<R: Read>(input: R, seg: &Segmentation) -> Result<Trace, SimError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SimError::InvalidTrace(format!("missing column `{name}`")))
    };
    let ts_col = find(&seg.timestamp_column)?;
    let label_col = find(&seg.label_column)?;
    let sensors: Vec<(usize, &str)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != ts_col && *i != label_col)
        .collect();
    if sensors.is_empty() {
        return Err(SimError::InvalidTrace("no sensor columns".into()));
    }

    let mut samples = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let number = |col: usize| -> Result<f64, SimError> {
            rec.get(col)
                .unwrap_or("")
                .parse()
                .map_err(|_| SimError::InvalidTrace(format!("row {}: `{}` is not a number", row + 1, rec.get(col).unwrap_or(""))))
        };
        let timestamp = number(ts_col)?;
        let label: Condition = rec
            .get(label_col)
            .unwrap_or("")
            .parse()
            .map_err(|e| SimError::InvalidTrace(format!("row {}: {e}", row + 1)))?;
        let mut values = Vec::with_capacity(sensors.len());
        for (col, name) in &sensors {
            values.push((*name, number(*col)?));
        }
        samples.push((Reading::new(timestamp, values), label));
    }
    let mut trace = Trace::labeled(samples);
    if let Some(max) = seg.max_episode_len.filter(|m| *m > 0) {
        trace.episodes = trace
            .episodes
            .iter()
            .flat_map(|e| {
                (e.start..e.end).step_by(max).map(move |s| Episode {
                    condition: e.condition,
                    start: s,
                    end: (s + max).min(e.end),
                })
            })
            .collect();
    }
    trace.validate()?;
    Ok(trace)
}

/// Splits every run of one label: its first `train_fraction` of readings go to the training trace,
/// the rest to the test trace. Test episodes start at the first held-out reading of their run.
pub fn split_trace(trace: &Trace, train_fraction: f64) -> Result<(Trace, Trace), SimError> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(SimError::InvalidSpec(format!("train fraction {train_fraction}")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut i = 0;
    while i < trace.len() {
        let label = trace.truth[i];
        let mut j = i;
        while j < trace.len() && trace.truth[j] == label {
            j += 1;
        }
        let cut = i + ((j - i) as f64 * train_fraction).round() as usize;
        for k in i..j {
            let sample = (trace.readings[k].clone(), label);
            if k < cut {
                train.push(sample);
            } else {
                test.push(sample);
            }
        }
        i = j;
    }
    Ok((Trace::labeled(train), Trace::labeled(test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "timestamp,s1,s2,label\n0,0.1,0.2,background\n1,0.0,0.1,0\n2,5.0,4.0,hazard1\n3,5.5,4.5,hazard1\n4,5.1,4.4,1\n5,9.0,9.5,hazard2\n6,0.2,0.1,background\n";

    #[test]
    fn parses_and_segments() {
        let t = parse_dataset_csv(CSV.as_bytes(), &Segmentation::default()).unwrap();
        assert_eq!(t.len(), 7);
        assert_eq!(t.sensor_ids(), ["s1", "s2"]);
        assert_eq!(t.episodes.len(), 2);
        let seg = Segmentation {
            max_episode_len: Some(2),
            ..Segmentation::default()
        };
        let t = parse_dataset_csv(CSV.as_bytes(), &seg).unwrap();
        let eps: Vec<_> = t.episodes.iter().map(|e| (e.start, e.end)).collect();
        assert_eq!(eps, [(2, 4), (4, 5), (5, 6)]);
    }

    #[test]
    fn rejects_bad_rows() {
        let bad = "timestamp,s1,label\n0,x,background\n";
        assert!(parse_dataset_csv(bad.as_bytes(), &Segmentation::default()).is_err());
        let bad = "timestamp,s1,label\n0,1,smoke\n";
        assert!(parse_dataset_csv(bad.as_bytes(), &Segmentation::default()).is_err());
        let bad = "time,s1,label\n0,1,background\n";
        assert!(parse_dataset_csv(bad.as_bytes(), &Segmentation::default()).is_err());
    }

    #[test]
    fn split_divides_each_label_run() {
        let t = parse_dataset_csv(CSV.as_bytes(), &Segmentation::default()).unwrap();
        let (train, test) = split_trace(&t, 0.5).unwrap();
        assert_eq!(train.len() + test.len(), t.len());
        train.validate().unwrap();
        test.validate().unwrap();
        // hazard1 run of 3 splits 2/1; the single hazard2 reading rounds into training.
        assert_eq!(train.episodes.len(), 2);
        assert_eq!(test.episodes.len(), 1);
        assert_eq!(test.readings[test.episodes[0].start].timestamp, 4.0);
    }
}
