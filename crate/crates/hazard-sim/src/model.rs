use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::trace::Trace;

/// Standard deviations below this are raised to it.
pub const SIGMA_FLOOR: f64 = 1e-9;

/// Ordered background < hazard1 < hazard2; the order breaks likelihood ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Background,
    Hazard1,
    Hazard2,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Background, Condition::Hazard1, Condition::Hazard2];

    pub fn is_hazard(self) -> bool {
        self != Condition::Background
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Background => "background",
            Condition::Hazard1 => "hazard1",
            Condition::Hazard2 => "hazard2",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "background" | "0" => Ok(Condition::Background),
            "hazard1" | "1" => Ok(Condition::Hazard1),
            "hazard2" | "2" => Ok(Condition::Hazard2),
            other => Err(format!("unknown condition `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mu: f64,
    pub sigma: f64,
}

impl Gaussian {
    pub fn new(mu: f64, sigma: f64) -> Self {
        Self { mu, sigma }
    }

    pub fn density(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        (-0.5 * z * z).exp() / (self.sigma * (2.0 * std::f64::consts::PI).sqrt())
    }

    /// Log density up to the shared `-ln √(2π)` constant.
    fn log_density(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        -0.5 * z * z - self.sigma.ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub sensor_id: String,
    pub params: BTreeMap<Condition, Gaussian>,
}

impl SensorModel {
    pub fn new(sensor_id: &str, params: BTreeMap<Condition, Gaussian>) -> Result<Self, SimError> {
        let model = Self {
            sensor_id: sensor_id.to_string(),
            params,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |reason: String| SimError::InvalidModel {
            sensor: self.sensor_id.clone(),
            reason,
        };
        for c in Condition::ALL {
            let g = self.params.get(&c).ok_or_else(|| invalid(format!("missing {c}")))?;
            if !g.sigma.is_finite() || g.sigma <= 0.0 || !g.mu.is_finite() {
                return Err(invalid(format!("{c} has mu={} sigma={}", g.mu, g.sigma)));
            }
        }
        Ok(())
    }
}

/// Maximum-likelihood condition for reading `x`. Exact ties go to the lower-ordered condition.
pub fn classify(sensor: &SensorModel, x: f64) -> Condition {
    let mut best = (Condition::Background, f64::NEG_INFINITY);
    for (c, g) in &sensor.params {
        let ll = g.log_density(x);
        if ll > best.1 {
            best = (*c, ll);
        }
    }
    best.0
}

/// Sample mean and unbiased standard deviation per sensor and condition.
pub fn fit_models(labeled: &Trace) -> Result<Vec<SensorModel>, SimError> {
    labeled.validate()?;
    let mut models = Vec::new();
    for sensor in labeled.sensor_ids() {
        let mut params = BTreeMap::new();
        for c in Condition::ALL {
            let xs: Vec<f64> = labeled
                .readings
                .iter()
                .zip(&labeled.truth)
                .filter(|(_, t)| **t == c)
                .filter_map(|(r, _)| r.values.get(&sensor).copied())
                .collect();
            if xs.len() < 2 {
                return Err(SimError::InsufficientData {
                    sensor: sensor.clone(),
                    condition: c,
                    samples: xs.len(),
                });
            }
            let n = xs.len() as f64;
            let mu = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0);
            let mut sigma = var.sqrt();
            if sigma < SIGMA_FLOOR {
                tracing::warn!(sensor = %sensor, condition = %c, sigma, "degenerate variance; clamping sigma to {SIGMA_FLOOR}");
                sigma = SIGMA_FLOOR;
            }
            params.insert(c, Gaussian { mu, sigma });
        }
        models.push(SensorModel::new(&sensor, params)?);
    }
    Ok(models)
}
