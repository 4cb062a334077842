use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::model::{classify, Condition, SensorModel};
use crate::trace::Trace;

/// Alert when at least `k` sensors classify their reading as some hazard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VotePolicy {
    pub k: usize,
}

impl VotePolicy {
    pub fn new(k: usize, sensors: usize) -> Result<Self, SimError> {
        if k == 0 || k > sensors {
            return Err(SimError::InvalidPolicy(format!("k={k} with {sensors} sensors")));
        }
        Ok(Self { k })
    }
}

/// Smallest strict majority, ⌈(n+1)/2⌉.
pub fn majority(sensors: usize) -> usize {
    sensors / 2 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub timestamp: f64,
    /// Fraction of all hazard episodes detected at or before `timestamp`.
    pub detected_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub k: usize,
    pub episodes: usize,
    pub detected: usize,
    pub detection_rate: f64,
    /// Seconds from onset to first alert, averaged over all episodes; an undetected episode counts
    /// as its full window length.
    pub mean_detection_latency: f64,
    /// Average over detected episodes only.
    pub mean_latency_detected: Option<f64>,
    /// Hazard episodes whose first alert names the right hazard, plus background segments without
    /// any alert.
    pub accuracy: usize,
    /// Hazard episodes plus background segments: the most `accuracy` can reach.
    pub segments: usize,
    /// Alerts raised at background readings.
    pub false_positives: usize,
    pub total_alerts: usize,
    pub curve: Vec<CurvePoint>,
}

/// Per-reading votes: the hazard condition each sensor reported, in sensor-id order.
fn hazard_votes(models: &[SensorModel], trace: &Trace) -> Result<Vec<Vec<Condition>>, SimError> {
    let by_id: BTreeMap<&str, &SensorModel> = models.iter().map(|m| (m.sensor_id.as_str(), m)).collect();
    for m in models {
        m.validate()?;
    }
    let sensors = trace.sensor_ids();
    for s in &sensors {
        if !by_id.contains_key(s.as_str()) {
            return Err(SimError::InvalidTrace(format!("no model for sensor `{s}`")));
        }
    }
    Ok(trace
        .readings
        .iter()
        .map(|r| {
            r.values
                .iter()
                .map(|(s, x)| classify(by_id[s.as_str()], *x))
                .filter(|c| c.is_hazard())
                .collect()
        })
        .collect())
}

/// Most common condition among hazard voters; ties go to the lower-ordered condition.
fn plurality(votes: &[Condition]) -> Option<Condition> {
    let mut counts: BTreeMap<Condition, usize> = BTreeMap::new();
    for v in votes {
        *counts.entry(*v).or_default() += 1;
    }
    let mut best: Option<(Condition, usize)> = None;
    for (c, n) in counts {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((c, n));
        }
    }
    best.map(|(c, _)| c)
}

pub fn run_vote_sim(models: &[SensorModel], trace: &Trace, policy: VotePolicy) -> Result<SimMetrics, SimError> {
    trace.validate()?;
    let n = trace.sensor_ids().len();
    VotePolicy::new(policy.k, n)?;
    let votes = hazard_votes(models, trace)?;
    Ok(score(trace, &votes, policy.k))
}

/// Runs every policy over one classification pass of the trace.
pub fn run_vote_sweep(models: &[SensorModel], trace: &Trace, ks: &[usize]) -> Result<Vec<SimMetrics>, SimError> {
    trace.validate()?;
    let n = trace.sensor_ids().len();
    for &k in ks {
        VotePolicy::new(k, n)?;
    }
    let votes = hazard_votes(models, trace)?;
    Ok(ks.iter().map(|&k| score(trace, &votes, k)).collect())
}

fn score(trace: &Trace, votes: &[Vec<Condition>], k: usize) -> SimMetrics {
    let alerts: Vec<bool> = votes.iter().map(|v| v.len() >= k).collect();
    let total_alerts = alerts.iter().filter(|a| **a).count();
    let false_positives = alerts
        .iter()
        .zip(&trace.truth)
        .filter(|(a, t)| **a && !t.is_hazard())
        .count();

    let mut detected = 0;
    let mut correct = 0;
    let mut latency_sum = 0.0;
    let mut detected_latency_sum = 0.0;
    let mut detection_times = Vec::new();
    for ep in &trace.episodes {
        let onset = trace.readings[ep.start].timestamp;
        match (ep.start..ep.end).find(|&i| alerts[i]) {
            Some(i) => {
                detected += 1;
                let latency = trace.readings[i].timestamp - onset;
                latency_sum += latency;
                detected_latency_sum += latency;
                detection_times.push(trace.readings[i].timestamp);
                if plurality(&votes[i]) == Some(ep.condition) {
                    correct += 1;
                }
            }
            None => latency_sum += trace.window_length(ep),
        }
    }
    let background = trace.background_segments();
    correct += background
        .iter()
        .filter(|seg| !(seg.start..seg.end).any(|i| alerts[i]))
        .count();

    let episodes = trace.episodes.len();
    let ratio = |num: usize| if episodes == 0 { 0.0 } else { num as f64 / episodes as f64 };
    let mut seen = 0;
    let curve = trace
        .readings
        .iter()
        .map(|r| {
            while seen < detection_times.len() && detection_times[seen] <= r.timestamp {
                seen += 1;
            }
            CurvePoint {
                timestamp: r.timestamp,
                detected_fraction: ratio(seen),
            }
        })
        .collect();

    SimMetrics {
        k,
        episodes,
        detected,
        detection_rate: ratio(detected),
        mean_detection_latency: if episodes == 0 { 0.0 } else { latency_sum / episodes as f64 },
        mean_latency_detected: (detected > 0).then(|| detected_latency_sum / detected as f64),
        accuracy: correct,
        segments: episodes + background.len(),
        false_positives,
        total_alerts,
        curve,
    }
}
