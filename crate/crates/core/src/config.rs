//! Tunables for a session. Defaults carry the reference constants; every
//! field can be overridden from a config file.

use crate::audio::DEFAULT_SPEECH_RATE_WPM;
use crate::haptics::HapticCurveConfig;
use crate::llm::DEFAULT_WORD_BUDGET;
use crate::routing::ProgressThresholds;
use crate::world::DepthSensorConfig;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapturePromptConfig {
    /// Prompt once per step when this close (m) to its waypoint.
    pub decision_radius: f64,
    /// Otherwise prompt after this many seconds without a prompt.
    pub interval: f64,
}

impl Default for CapturePromptConfig {
    fn default() -> Self {
        Self {
            decision_radius: 15.0,
            interval: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Fixed simulation step, seconds.
    pub timestep: f64,
    pub sensor: DepthSensorConfig,
    pub haptics: HapticCurveConfig,
    pub thresholds: ProgressThresholds,
    pub capture_prompt: CapturePromptConfig,
    pub word_budget: usize,
    pub speech_rate_wpm: f64,
    /// Seconds allowed for one language-model exchange.
    pub llm_deadline: f64,
    /// Where capture records go; `None` keeps photos in memory only.
    pub album_dir: Option<PathBuf>,
    /// Replaces the scenario's seed when set.
    pub seed: Option<u64>,
    /// Keep vibrating while guidance audio plays.
    pub haptics_during_speech: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            timestep: 0.1,
            sensor: DepthSensorConfig::default(),
            haptics: HapticCurveConfig::default(),
            thresholds: ProgressThresholds::default(),
            capture_prompt: CapturePromptConfig::default(),
            word_budget: DEFAULT_WORD_BUDGET,
            speech_rate_wpm: DEFAULT_SPEECH_RATE_WPM,
            llm_deadline: 10.0,
            album_dir: None,
            seed: None,
            haptics_during_speech: true,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.timestep > 0.0 && self.timestep.is_finite()) {
            return Err(format!("timestep {} must be positive", self.timestep));
        }
        self.sensor.validate()?;
        self.haptics.validate().map_err(|e| e.to_string())?;
        if self.word_budget < crate::llm::MIN_WORD_BUDGET {
            return Err(format!(
                "word_budget {} is below the minimum of {}",
                self.word_budget,
                crate::llm::MIN_WORD_BUDGET
            ));
        }
        if !(self.speech_rate_wpm > 0.0) {
            return Err("speech_rate_wpm must be positive".into());
        }
        if !(self.llm_deadline > 0.0) {
            return Err("llm_deadline must be positive".into());
        }
        if !(self.capture_prompt.interval > 0.0 && self.capture_prompt.decision_radius >= 0.0) {
            return Err("capture_prompt needs a positive interval and non-negative radius".into());
        }
        Ok(())
    }
}
