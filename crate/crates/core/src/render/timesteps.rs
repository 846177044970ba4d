use serde::{Deserialize, Serialize};

use crate::rng::StreamKey;

use super::RenderError;

/// Base frame rate of the jittered schedule, in frames per second.
pub const DEFAULT_FRAME_RATE: f64 = 4.0;

/// A jittered time schedule: `t_k = k / base_rate + offset_k`, with each
/// offset uniform in `[0, 1 / base_rate)`.
///
/// Offsets come from a counter-based stream keyed by `(seed, k)`, so any
/// frame can be addressed directly without generating its predecessors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestepPlan {
    pub base_rate: f64,
    pub seed: u64,
    pub offsets: Vec<f64>,
    pub values: Vec<f64>,
}

impl TimestepPlan {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// A plan with fixed times and no jitter, e.g. for probing at `t0`.
    pub fn fixed(values: Vec<f64>) -> Self {
        Self { base_rate: 0.0, seed: 0, offsets: vec![0.0; values.len()], values }
    }
}

/// Jitter offset and time value of frame `k`.
pub fn timestep_at(seed: u64, base_rate: f64, k: u64) -> (f64, f64) {
    let period = 1.0 / base_rate;
    let u = StreamKey::from_seed(seed).split(k).rng().next_f64();
    let offset = u * period;
    (offset, k as f64 * period + offset)
}

pub fn sample_timesteps(n: usize, seed: u64) -> Result<TimestepPlan, RenderError> {
    sample_timesteps_at(n, seed, DEFAULT_FRAME_RATE)
}

pub fn sample_timesteps_at(n: usize, seed: u64, base_rate: f64) -> Result<TimestepPlan, RenderError> {
    if n == 0 {
        return Err(RenderError::ZeroCount);
    }
    if !(base_rate.is_finite() && base_rate > 0.0) {
        return Err(RenderError::InvalidArgument(format!("base rate must be positive, got {base_rate}")));
    }
    let (offsets, values) = (0..n as u64).map(|k| timestep_at(seed, base_rate, k)).unzip();
    Ok(TimestepPlan { base_rate, seed, offsets, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_frames_fall_in_their_slots() {
        for seed in 0..50 {
            let p = sample_timesteps(3, seed).unwrap();
            let slots = [(0.0, 0.25), (0.25, 0.5), (0.5, 0.75)];
            for (t, (lo, hi)) in p.values.iter().zip(slots) {
                assert!(*t >= lo && *t < hi, "t={t} outside [{lo},{hi})");
            }
        }
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(matches!(sample_timesteps(0, 1), Err(RenderError::ZeroCount)));
    }

    #[test]
    fn frames_are_addressable_directly() {
        let p = sample_timesteps(20, 9).unwrap();
        assert_eq!(timestep_at(9, DEFAULT_FRAME_RATE, 17).1, p.values[17]);
        assert_eq!(sample_timesteps(20, 9).unwrap(), p);
        assert_ne!(sample_timesteps(20, 10).unwrap().values, p.values);
    }
}
