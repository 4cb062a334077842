use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::model::{Condition, Gaussian};
use crate::trace::{Episode, Reading, Segment, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: String,
    pub params: BTreeMap<Condition, Gaussian>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub sensors: Vec<SensorSpec>,
    /// Seconds between readings.
    #[serde(default = "default_interval")]
    pub sample_interval: f64,
}

fn default_interval() -> f64 {
    1.0
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if !self.sample_interval.is_finite() || self.sample_interval <= 0.0 {
            return bad(format!("sample_interval {}", self.sample_interval));
        }
        if self.sensors.is_empty() {
            return bad("no sensors".into());
        }
        let mut ids: Vec<&str> = self.sensors.iter().map(|s| s.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.sensors.len() {
            return bad("duplicate sensor ids".into());
        }
        for s in &self.sensors {
            for c in Condition::ALL {
                match s.params.get(&c) {
                    Some(g) if g.sigma >= 0.0 && g.sigma.is_finite() && g.mu.is_finite() => {}
                    Some(g) => return bad(format!("sensor {} {c}: mu={} sigma={}", s.id, g.mu, g.sigma)),
                    None => return bad(format!("sensor {} has no {c} parameters", s.id)),
                }
            }
        }
        Ok(())
    }
}

/// Draws readings per the schedule; each hazard segment becomes one episode.
pub fn generate_synthetic(spec: &SyntheticSpec, schedule: &[Segment], seed: u64) -> Result<Trace, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normals: Vec<BTreeMap<Condition, Normal<f64>>> = spec
        .sensors
        .iter()
        .map(|s| {
            s.params
                .iter()
                .map(|(c, g)| (*c, Normal::new(g.mu, g.sigma).expect("validated parameters")))
                .collect()
        })
        .collect();
    let mut trace = Trace::default();
    for seg in schedule {
        let start = trace.len();
        for _ in 0..seg.samples {
            let timestamp = trace.len() as f64 * spec.sample_interval;
            let values = spec
                .sensors
                .iter()
                .zip(&normals)
                .map(|(s, n)| (s.id.clone(), n[&seg.condition].sample(&mut rng)))
                .collect();
            trace.readings.push(Reading { timestamp, values });
            trace.truth.push(seg.condition);
        }
        if seg.condition.is_hazard() && seg.samples > 0 {
            trace.episodes.push(Episode {
                condition: seg.condition,
                start,
                end: trace.len(),
            });
        }
    }
    Ok(trace)
}

/// Random episode schedule: background gaps alternating with hazard episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub episodes: usize,
    /// Inclusive range of readings per hazard episode.
    pub episode_len: [usize; 2],
    /// Inclusive range of background readings before each episode.
    pub gap_len: [usize; 2],
    /// Fraction of episodes that are hazard2 rather than hazard1.
    pub hazard2_share: f64,
}

impl ScheduleSpec {
    pub fn schedule<R: Rng>(&self, rng: &mut R) -> Result<Vec<Segment>, SimError> {
        let [e0, e1] = self.episode_len;
        let [g0, g1] = self.gap_len;
        if e0 == 0 || e0 > e1 || g0 == 0 || g0 > g1 || !(0.0..=1.0).contains(&self.hazard2_share) {
            return Err(SimError::InvalidSpec(format!("schedule {self:?}")));
        }
        let mut out = Vec::new();
        for _ in 0..self.episodes {
            out.push(Segment {
                condition: Condition::Background,
                samples: rng.random_range(g0..=g1),
            });
            let condition = if rng.random_bool(self.hazard2_share) {
                Condition::Hazard2
            } else {
                Condition::Hazard1
            };
            out.push(Segment {
                condition,
                samples: rng.random_range(e0..=e1),
            });
        }
        if self.episodes > 0 {
            out.push(Segment {
                condition: Condition::Background,
                samples: rng.random_range(g0..=g1),
            });
        }
        Ok(out)
    }
}

/// A full experiment: sensor parameters, a labelled training schedule to fit models on, and a
/// test schedule to run the vote policies over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(flatten)]
    pub synthetic: SyntheticSpec,
    pub train: ScheduleSpec,
    pub test: ScheduleSpec,
}

impl ScenarioSpec {
    /// Eight sensors whose condition means sit one standard deviation apart, scored on 69 short
    /// episodes.
    pub fn overlap_1sigma() -> Self {
        let sensors = (1..=8)
            .map(|i| SensorSpec {
                id: format!("s{i}"),
                params: [
                    (Condition::Background, Gaussian::new(0.0, 1.0)),
                    (Condition::Hazard1, Gaussian::new(1.0, 1.0)),
                    (Condition::Hazard2, Gaussian::new(2.0, 1.0)),
                ]
                .into(),
            })
            .collect();
        Self {
            synthetic: SyntheticSpec {
                sensors,
                sample_interval: 1.0,
            },
            train: ScheduleSpec {
                episodes: 40,
                episode_len: [20, 20],
                gap_len: [20, 20],
                hazard2_share: 0.5,
            },
            test: ScheduleSpec {
                episodes: 69,
                episode_len: [1, 1],
                gap_len: [5, 10],
                hazard2_share: 0.1,
            },
        }
    }

    /// Training and test traces for `seed`.
    pub fn traces(&self, seed: u64) -> Result<(Trace, Trace), SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5c4e_d01e);
        let train = generate_synthetic(&self.synthetic, &self.train.schedule(&mut rng)?, seed.wrapping_mul(2))?;
        let test = generate_synthetic(&self.synthetic, &self.test.schedule(&mut rng)?, seed.wrapping_mul(2) + 1)?;
        Ok((train, test))
    }
}
