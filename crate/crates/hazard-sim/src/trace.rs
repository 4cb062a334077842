use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::model::Condition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub timestamp: f64,
    pub values: BTreeMap<String, f64>,
}

impl Reading {
    pub fn new<'a>(timestamp: f64, values: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        Self {
            timestamp,
            values: values.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

/// A hazard episode: readings `start..end` under `condition`, with onset at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub condition: Condition,
    pub start: usize,
    pub end: usize,
}

/// One entry of an episode schedule: `samples` consecutive readings under `condition`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub condition: Condition,
    pub samples: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub readings: Vec<Reading>,
    /// Ground-truth condition per reading.
    pub truth: Vec<Condition>,
    pub episodes: Vec<Episode>,
}

impl Trace {
    /// Builds a trace from labelled readings; every maximal run of one hazard label is an episode.
    pub fn labeled(samples: Vec<(Reading, Condition)>) -> Self {
        let (readings, truth): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
        let episodes = runs(&truth)
            .into_iter()
            .filter(|e| e.condition.is_hazard())
            .collect();
        Self {
            readings,
            truth,
            episodes,
        }
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.readings.iter().map(|r| r.timestamp)
    }

    /// Sensor ids, taken from the first reading.
    pub fn sensor_ids(&self) -> Vec<String> {
        self.readings
            .first()
            .map(|r| r.values.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Maximal runs of background readings.
    pub fn background_segments(&self) -> Vec<Episode> {
        runs(&self.truth)
            .into_iter()
            .filter(|e| !e.condition.is_hazard())
            .collect()
    }

    /// Time from `ep`'s onset to the end of its window: the next reading after it, or one
    /// sampling step past its last reading at the end of the trace.
    pub fn window_length(&self, ep: &Episode) -> f64 {
        let onset = self.readings[ep.start].timestamp;
        if let Some(next) = self.readings.get(ep.end) {
            return next.timestamp - onset;
        }
        let last = self.readings[ep.end - 1].timestamp;
        let step = if self.len() >= 2 {
            self.readings[self.len() - 1].timestamp - self.readings[self.len() - 2].timestamp
        } else {
            1.0
        };
        last - onset + step
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |m: String| Err(SimError::InvalidTrace(m));
        if self.truth.len() != self.readings.len() {
            return invalid(format!("{} labels for {} readings", self.truth.len(), self.readings.len()));
        }
        let sensors = self.sensor_ids();
        for (i, r) in self.readings.iter().enumerate() {
            if !r.timestamp.is_finite() {
                return invalid(format!("reading {i} has timestamp {}", r.timestamp));
            }
            if i > 0 && r.timestamp <= self.readings[i - 1].timestamp {
                return invalid(format!("timestamps not strictly increasing at reading {i}"));
            }
            if r.values.len() != sensors.len() || !r.values.keys().zip(&sensors).all(|(a, b)| a == b) {
                return invalid(format!("reading {i} does not report the sensors {sensors:?}"));
            }
            if let Some((s, v)) = r.values.iter().find(|(_, v)| !v.is_finite()) {
                return invalid(format!("reading {i} has {s}={v}"));
            }
        }
        let mut prev_end = 0;
        for e in &self.episodes {
            if e.start >= e.end || e.end > self.len() || e.start < prev_end || !e.condition.is_hazard() {
                return invalid(format!("bad episode {e:?}"));
            }
            prev_end = e.end;
        }
        Ok(())
    }
}

fn runs(labels: &[Condition]) -> Vec<Episode> {
    let mut out: Vec<Episode> = Vec::new();
    for (i, &c) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.condition == c && last.end == i => last.end = i + 1,
            _ => out.push(Episode {
                condition: c,
                start: i,
                end: i + 1,
            }),
        }
    }
    out
}
