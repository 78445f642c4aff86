//! Event arrival generators for interrupt lines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::Tick;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSpec {
    /// `offset + k * period`.
    Periodic {
        offset: Tick,
        period: Tick,
    },
    /// At least `min_sep` apart; each eligible tick fires with probability
    /// `density`.
    Sporadic {
        min_sep: Tick,
        density: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// `count` raises spaced `spacing` apart starting at `at`. A spacing of
    /// zero raises them all in the same tick.
    Burst {
        at: Tick,
        count: u64,
        spacing: Tick,
    },
    /// `rate` raises in every tick from `start` for `duration` ticks (or to
    /// the horizon).
    Storm {
        start: Tick,
        rate: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duration: Option<Tick>,
    },
    Explicit {
        times: Vec<Tick>,
    },
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            WorkloadSpec::Periodic { period: 0, .. } => Err("periodic period must be >= 1".into()),
            WorkloadSpec::Sporadic { min_sep: 0, .. } => {
                Err("sporadic min_sep must be >= 1".into())
            }
            WorkloadSpec::Sporadic { density, .. } if !(*density > 0.0 && *density <= 1.0) => {
                Err(format!("sporadic density {density} outside (0, 1]"))
            }
            WorkloadSpec::Storm { rate: 0, .. } => Err("storm rate must be >= 1".into()),
            _ => Ok(()),
        }
    }
}

/// Raise times of `spec` in `[0, horizon)`, sorted. `seed` is used by
/// sporadic specs that carry no seed of their own.
pub fn generate_workload(spec: &WorkloadSpec, horizon: Tick, seed: u64) -> Vec<Tick> {
    let mut times = match *spec {
        WorkloadSpec::Periodic { offset, period } => (0..)
            .map(|k| offset + k * period)
            .take_while(|&t| t < horizon)
            .collect(),
        WorkloadSpec::Sporadic {
            min_sep,
            density,
            seed: own,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(own.unwrap_or(seed));
            let mut out = Vec::new();
            let mut t = 0;
            while t < horizon {
                if rng.random_bool(density) {
                    out.push(t);
                    t += min_sep;
                } else {
                    t += 1;
                }
            }
            out
        }
        WorkloadSpec::Burst { at, count, spacing } => (0..count)
            .map(|i| at + i * spacing)
            .filter(|&t| t < horizon)
            .collect(),
        WorkloadSpec::Storm {
            start,
            rate,
            duration,
        } => {
            let end = duration.map_or(horizon, |d| (start + d).min(horizon));
            (start..end)
                .flat_map(|t| std::iter::repeat_n(t, rate as usize))
                .collect()
        }
        WorkloadSpec::Explicit { ref times } => {
            times.iter().copied().filter(|&t| t < horizon).collect()
        }
    };
    times.sort_unstable();
    times
}
