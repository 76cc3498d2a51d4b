//! Distance-to-vibration mapping and the tick scheduler.
//!
//! Frequency is clamped to `near_frequency` at or below `near_distance` and to
//! `far_frequency` at or beyond `far_distance`. In between it follows a
//! straight line in log-distance/log-frequency space, so the geometric mean of
//! the two distances maps to the geometric mean of the two frequencies.

use crate::world::DepthReading;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack for comparing a due time with the poll clock.
const DUE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HapticError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("invalid haptic curve: {0}")]
    InvalidCurve(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HapticCurveConfig {
    pub near_distance: f64,
    pub far_distance: f64,
    pub near_frequency: f64,
    pub far_frequency: f64,
}

impl Default for HapticCurveConfig {
    fn default() -> Self {
        Self {
            near_distance: 0.3,
            far_distance: 10.0,
            near_frequency: 5.0,
            far_frequency: 1.0 / 3.0,
        }
    }
}

impl HapticCurveConfig {
    pub fn validate(&self) -> Result<(), HapticError> {
        if !(self.near_distance > 0.0 && self.near_distance < self.far_distance && self.far_distance.is_finite()) {
            return Err(HapticError::InvalidCurve(format!(
                "need 0 < near_distance ({}) < far_distance ({})",
                self.near_distance, self.far_distance
            )));
        }
        if !(self.far_frequency > 0.0 && self.near_frequency > self.far_frequency && self.near_frequency.is_finite()) {
            return Err(HapticError::InvalidCurve(format!(
                "need near_frequency ({}) > far_frequency ({}) > 0",
                self.near_frequency, self.far_frequency
            )));
        }
        Ok(())
    }
}

pub fn frequency_for_distance(cfg: &HapticCurveConfig, d: f64) -> Result<f64, HapticError> {
    if !(d > 0.0) {
        return Err(HapticError::NonPositiveDistance(d));
    }
    Ok(curve(cfg, d))
}

fn curve(cfg: &HapticCurveConfig, d: f64) -> f64 {
    if d <= cfg.near_distance {
        return cfg.near_frequency;
    }
    if d >= cfg.far_distance {
        return cfg.far_frequency;
    }
    let exponent = (d / cfg.near_distance).ln() / (cfg.far_distance / cfg.near_distance).ln();
    cfg.near_frequency * (cfg.far_frequency / cfg.near_frequency).powf(exponent)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VibrationTick {
    pub timestamp: f64,
    pub frequency_at_emission: f64,
    pub source_distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HapticState {
    last_reading: Option<DepthReading>,
    next_tick_due: Option<f64>,
}

impl HapticState {
    pub fn last_reading(&self) -> Option<&DepthReading> {
        self.last_reading.as_ref()
    }

    pub fn next_tick_due(&self) -> Option<f64> {
        self.next_tick_due
    }

    fn distance(&self) -> Option<f64> {
        self.last_reading.as_ref().and_then(|r| r.distance)
    }

    /// Stores a fresh reading. Acquisition schedules an immediate tick; a
    /// closer obstacle can pull the pending tick earlier but never later.
    pub fn update_reading(&mut self, cfg: &HapticCurveConfig, reading: DepthReading, now: f64) {
        let distance = reading.distance;
        self.last_reading = Some(reading);
        self.next_tick_due = match (distance, self.next_tick_due) {
            (None, _) => None,
            (Some(_), None) => Some(now),
            (Some(d), Some(due)) => Some(due.min(now + 1.0 / contact_frequency(cfg, d))),
        };
    }

    /// Emits at most one tick when it has come due.
    pub fn poll_tick(&mut self, cfg: &HapticCurveConfig, now: f64) -> Option<VibrationTick> {
        let due = self.next_tick_due?;
        let distance = self.distance()?;
        if due > now + DUE_EPSILON {
            return None;
        }
        let frequency = contact_frequency(cfg, distance);
        // A poller slower than the tick rate resyncs instead of bursting.
        self.next_tick_due = Some((due + 1.0 / frequency).max(now));
        Some(VibrationTick {
            timestamp: now,
            frequency_at_emission: frequency,
            source_distance: distance,
        })
    }
}

/// Sensor readings of exactly zero (touching an obstacle) map to the fastest
/// rate instead of failing.
fn contact_frequency(cfg: &HapticCurveConfig, d: f64) -> f64 {
    curve(cfg, d.max(f64::MIN_POSITIVE))
}
