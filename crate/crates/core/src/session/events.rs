//! Session events and the line-delimited trace format.
//!
//! Each trace line is one JSON object with a fixed key order: `seq`, `t`,
//! `kind`, then the kind-specific fields. Times are sim seconds rounded to
//! the microsecond.

use crate::audio::{AudioEvent, AudioEventKind, DropReason, Priority};
use crate::world::Capability;
use serde::{Deserialize, Serialize, Serializer};
use std::io::{self, BufRead, Write};

fn micros<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_micros(*t))
}

pub fn round_micros(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    #[serde(serialize_with = "micros")]
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteReason {
    Destination,
    Reroute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptReason {
    DecisionPoint,
    Interval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmOutcome {
    Ok,
    Timeout,
    BackendError,
    EmptyReply,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub from: String,
    pub to: String,
    pub length: f64,
    pub turn: crate::routing::TurnDirection,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtterancePayload {
    pub utterance_id: u64,
    pub priority: Priority,
    pub text: String,
    pub duration: f64,
    pub trigger_step_index: Option<usize>,
}

impl From<&AudioEvent> for UtterancePayload {
    fn from(e: &AudioEvent) -> Self {
        Self {
            utterance_id: e.utterance_id,
            priority: e.priority,
            text: e.text.clone(),
            duration: e.duration,
            trigger_step_index: e.trigger_step_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    PositionUpdated {
        x: f64,
        y: f64,
        heading: f64,
    },
    DepthSensed {
        distance: Option<f64>,
        obstacle: Option<String>,
    },
    VibrationTick {
        frequency: f64,
        distance: f64,
    },
    UtteranceStarted(UtterancePayload),
    UtterancePreempted(UtterancePayload),
    UtteranceResumed(UtterancePayload),
    UtteranceFinished(UtterancePayload),
    UtteranceDropped {
        #[serde(flatten)]
        utterance: UtterancePayload,
        reason: DropReason,
    },
    PhotoCaptured {
        image_id: String,
        scene_tag: String,
        navigable_content: bool,
        /// Capture record file name inside the album, when persisted.
        file: Option<String>,
    },
    LlmRequested {
        exchange: u64,
        scene_tag: String,
        backend: String,
        word_budget: usize,
        user_text: String,
    },
    LlmResponded {
        exchange: u64,
        backend: String,
        outcome: LlmOutcome,
        latency: f64,
        word_count: Option<usize>,
        retake_requested: bool,
    },
    RetakePrompted {
        exchange: u64,
    },
    RouteUpdated {
        reason: RouteReason,
        destination: String,
        total_length: f64,
        steps: Vec<StepSummary>,
    },
    CapturePromptIssued {
        reason: PromptReason,
        step_index: usize,
        distance_to_waypoint: f64,
    },
    Arrived {
        destination: String,
        node: String,
    },
    PermissionDenied {
        capability: Capability,
        operation: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::PositionUpdated { .. } => "PositionUpdated",
            EventKind::DepthSensed { .. } => "DepthSensed",
            EventKind::VibrationTick { .. } => "VibrationTick",
            EventKind::UtteranceStarted(_) => "UtteranceStarted",
            EventKind::UtterancePreempted(_) => "UtterancePreempted",
            EventKind::UtteranceResumed(_) => "UtteranceResumed",
            EventKind::UtteranceFinished(_) => "UtteranceFinished",
            EventKind::UtteranceDropped { .. } => "UtteranceDropped",
            EventKind::PhotoCaptured { .. } => "PhotoCaptured",
            EventKind::LlmRequested { .. } => "LlmRequested",
            EventKind::LlmResponded { .. } => "LlmResponded",
            EventKind::RetakePrompted { .. } => "RetakePrompted",
            EventKind::RouteUpdated { .. } => "RouteUpdated",
            EventKind::CapturePromptIssued { .. } => "CapturePromptIssued",
            EventKind::Arrived { .. } => "Arrived",
            EventKind::PermissionDenied { .. } => "PermissionDenied",
        }
    }

    /// The utterance payload for any of the five utterance lifecycle kinds.
    pub fn utterance(&self) -> Option<&UtterancePayload> {
        match self {
            EventKind::UtteranceStarted(u)
            | EventKind::UtterancePreempted(u)
            | EventKind::UtteranceResumed(u)
            | EventKind::UtteranceFinished(u)
            | EventKind::UtteranceDropped { utterance: u, .. } => Some(u),
            _ => None,
        }
    }
}

impl From<&AudioEvent> for EventKind {
    fn from(e: &AudioEvent) -> Self {
        let payload = UtterancePayload::from(e);
        match e.kind {
            AudioEventKind::Started => EventKind::UtteranceStarted(payload),
            AudioEventKind::Preempted => EventKind::UtterancePreempted(payload),
            AudioEventKind::Resumed => EventKind::UtteranceResumed(payload),
            AudioEventKind::Finished => EventKind::UtteranceFinished(payload),
            AudioEventKind::Dropped => EventKind::UtteranceDropped {
                utterance: payload,
                reason: e.reason.unwrap_or(DropReason::Stale),
            },
        }
    }
}

/// Serializes one event as a trace line (without the newline).
pub fn to_trace_line(event: &Event) -> String {
    serde_json::to_string(event).expect("events always serialize")
}

pub fn write_trace<W: Write>(mut out: W, events: &[Event]) -> io::Result<()> {
    for event in events {
        writeln!(out, "{}", to_trace_line(event))?;
    }
    out.flush()
}

pub fn read_trace<R: BufRead>(input: R) -> io::Result<Vec<Event>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|line| serde_json::from_str(&line?).map_err(io::Error::other))
        .collect()
}
