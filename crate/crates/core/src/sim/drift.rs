use crate::error::{invalid, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Slow ion drift: a linear trend plus a Gaussian random walk, both starting
/// from zero at t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftModel {
    /// nm/hour per axis, signed.
    pub linear_rate_nm_per_hour: [f64; 3],
    /// nm/√hour per axis.
    pub random_walk_nm_per_sqrt_hour: [f64; 3],
    pub seed: u64,
}

impl DriftModel {
    pub fn none() -> Self {
        Self {
            linear_rate_nm_per_hour: [0.0; 3],
            random_walk_nm_per_sqrt_hour: [0.0; 3],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.linear_rate_nm_per_hour.iter().any(|v| !v.is_finite()) {
            return Err(invalid("drift linear rates must be finite"));
        }
        if self
            .random_walk_nm_per_sqrt_hour
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(invalid("drift random-walk scales must be ≥ 0"));
        }
        Ok(())
    }
}

/// Drift displacement (nm) at each time (s). Times must be ≥ 0 and strictly
/// increasing.
pub fn simulate_drift(model: &DriftModel, times: &[f64]) -> Result<Vec<[f64; 3]>> {
    model.validate()?;
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(invalid("drift times must be finite and ≥ 0"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("drift times must be strictly increasing"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let mut walk = [0.0; 3];
    let mut last = 0.0;
    Ok(times
        .iter()
        .map(|&t| {
            let dt_hours = (t - last) / 3600.0;
            last = t;
            let mut out = [0.0; 3];
            for a in 0..3 {
                let step: f64 = StandardNormal.sample(&mut rng);
                walk[a] += model.random_walk_nm_per_sqrt_hour[a] * dt_hours.sqrt() * step;
                out[a] = model.linear_rate_nm_per_hour[a] * t / 3600.0 + walk[a];
            }
            out
        })
        .collect())
}
