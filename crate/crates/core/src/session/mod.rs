//! The session state machine: permission gating, destination input, the
//! sense → vibrate loop, capture → prompt → model → refine → speak, capture
//! prompting and arrival.
//!
//! A session is single-writer. Language-model exchanges run off the tick
//! path: simulated backends are answered at request time and released once
//! the sim clock has covered their latency; wall-clock backends run on a
//! worker thread and are picked up at the next tick after they finish.

mod events;
mod runner;
mod script;

pub use events::{
    read_trace, round_micros, to_trace_line, write_trace, Event, EventKind, LlmOutcome, PromptReason,
    RouteReason, StepSummary, UtterancePayload,
};
pub use runner::{run_script, EndReason, RunOptions, RunOutcome};
pub use script::{Command, ControlScript, InputChannel, ScriptError, ScriptLine};

use crate::audio::{Arbiter, Priority, Utterance};
use crate::config::SessionConfig;
use crate::geometry::{signed_angle, Vec2};
use crate::haptics::HapticState;
use crate::llm::{self, GatewayError, LlmBackend, NavContext, RawLlmReply};
use crate::routing::{approach_text, plan_route, reroute, Route, RouteError, RouteTracker};
use crate::world::{capture_image, sense_depth, step_agent, Capability, Control, Pose, WorldScenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::mpsc;
use std::sync::Arc;
use thiserror::Error;

pub const RETAKE_TEXT: &str = "Please retake the photo with the camera facing your path";
pub const STILL_PROCESSING_TEXT: &str = "Still processing the last photo.";
pub const DESTINATION_NOT_FOUND_TEXT: &str = "Destination not found.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initializing,
    AwaitingDestination,
    Navigating,
    Arrived,
}

/// Why a command was refused. Each refusal is also spoken to the traveller.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommandError {
    #[error("{0} permission is not granted")]
    PermissionDenied(Capability),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("no active route")]
    NotNavigating,
    #[error("a photo is still being processed")]
    StillProcessing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ControlMode {
    Manual { forward_speed: f64, turn_rate: f64 },
    Follow { speed: f64 },
}

impl Default for ControlMode {
    fn default() -> Self {
        ControlMode::Manual {
            forward_speed: 0.0,
            turn_rate: 0.0,
        }
    }
}

enum Delivery {
    At {
        release: f64,
        result: Result<RawLlmReply, GatewayError>,
    },
    Worker(mpsc::Receiver<Result<RawLlmReply, GatewayError>>),
}

struct PendingExchange {
    id: u64,
    delivery: Delivery,
}

/// Point-in-time view for dashboards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub scenario: String,
    pub phase: Phase,
    pub clock: f64,
    pub pose: Pose,
    pub destination: Option<String>,
    pub route: Option<Route>,
    pub active_step_index: Option<usize>,
    pub control: ControlMode,
    pub now_playing: Option<Utterance>,
    pub in_flight_llm: bool,
    pub last_distance: Option<f64>,
    pub next_seq: u64,
}

pub struct Session {
    scenario: Arc<WorldScenario>,
    config: SessionConfig,
    backend: Arc<dyn LlmBackend>,
    phase: Phase,
    pose: Pose,
    control: ControlMode,
    tracker: Option<RouteTracker>,
    destination: Option<String>,
    haptic: HapticState,
    arbiter: Arbiter,
    pending: Option<PendingExchange>,
    exchanges: u64,
    capture_prompted_steps: BTreeSet<usize>,
    last_capture_prompt: f64,
    last_reroute: Option<f64>,
    ticks: u64,
    sense_every: u64,
    rng: ChaCha8Rng,
    events: Vec<Event>,
}

impl Session {
    /// Starts a session. Missing capabilities are logged as
    /// `PermissionDenied`; the gated operations fail later, one by one.
    pub fn start(scenario: Arc<WorldScenario>, config: SessionConfig, backend: Arc<dyn LlmBackend>) -> Self {
        let seed = config.seed.unwrap_or(scenario.rng_seed);
        let sense_every = ((1.0 / (config.sensor.sample_rate * config.timestep)).round() as u64).max(1);
        let mut session = Self {
            pose: scenario.agent_start,
            arbiter: Arbiter::new(config.speech_rate_wpm),
            scenario,
            config,
            backend,
            phase: Phase::Initializing,
            control: ControlMode::default(),
            tracker: None,
            destination: None,
            haptic: HapticState::default(),
            pending: None,
            exchanges: 0,
            capture_prompted_steps: BTreeSet::new(),
            last_capture_prompt: 0.0,
            last_reroute: None,
            ticks: 0,
            sense_every,
            rng: ChaCha8Rng::seed_from_u64(seed),
            events: Vec::new(),
        };
        for capability in Capability::ALL {
            if !session.scenario.grants(capability) {
                session.emit(EventKind::PermissionDenied {
                    capability,
                    operation: "startup".into(),
                });
            }
        }
        session.phase = Phase::AwaitingDestination;
        session.emit_position();
        session.sense_and_vibrate();
        session
    }

    pub fn clock(&self) -> f64 {
        self.ticks as f64 * self.config.timestep
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn route(&self) -> Option<&Route> {
        self.tracker.as_ref().map(RouteTracker::route)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn scenario(&self) -> &WorldScenario {
        &self.scenario
    }

    pub fn backend(&self) -> &dyn LlmBackend {
        self.backend.as_ref()
    }

    pub fn in_flight_llm(&self) -> bool {
        self.pending.is_some()
    }

    pub fn arbiter(&self) -> &Arbiter {
        &self.arbiter
    }

    /// Full append-only event log.
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Events with `seq >= from`.
    pub fn events_since(&self, from: u64) -> &[Event] {
        let start = (from as usize).min(self.events.len());
        &self.events[start..]
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            scenario: self.scenario.name.clone(),
            phase: self.phase,
            clock: round_micros(self.clock()),
            pose: self.pose,
            destination: self.destination.clone(),
            route: self.route().cloned(),
            active_step_index: self.tracker.as_ref().map(RouteTracker::active_step_index),
            control: self.control,
            now_playing: self.arbiter.now_playing().cloned(),
            in_flight_llm: self.in_flight_llm(),
            last_distance: self.haptic.last_reading().and_then(|r| r.distance),
            next_seq: self.events.len() as u64,
        }
    }

    fn emit(&mut self, kind: EventKind) {
        let seq = self.events.len() as u64;
        let t = self.clock();
        self.events.push(Event { seq, t, kind });
    }

    fn emit_position(&mut self) {
        let p = self.pose;
        self.emit(EventKind::PositionUpdated {
            x: p.x,
            y: p.y,
            heading: p.heading,
        });
    }

    fn speak(&mut self, priority: Priority, text: impl Into<String>, trigger: Option<usize>) {
        let now = self.clock();
        let u = self.arbiter.utterance(priority, text, trigger, now);
        for e in self.arbiter.enqueue(u, now) {
            self.emit(EventKind::from(&e));
        }
    }

    fn deny(&mut self, capability: Capability, operation: &str) -> CommandError {
        self.emit(EventKind::PermissionDenied {
            capability,
            operation: operation.into(),
        });
        CommandError::PermissionDenied(capability)
    }

    pub fn set_control(&mut self, command: &Command) {
        self.control = match (*command).clone() {
            Command::Move { speed } => match self.control {
                ControlMode::Manual { turn_rate, .. } => ControlMode::Manual {
                    forward_speed: speed,
                    turn_rate,
                },
                ControlMode::Follow { .. } => ControlMode::Manual {
                    forward_speed: speed,
                    turn_rate: 0.0,
                },
            },
            Command::Turn { rate } => match self.control {
                ControlMode::Manual { forward_speed, .. } => ControlMode::Manual {
                    forward_speed,
                    turn_rate: rate,
                },
                ControlMode::Follow { .. } => ControlMode::Manual {
                    forward_speed: 0.0,
                    turn_rate: rate,
                },
            },
            Command::Stop => ControlMode::default(),
            Command::Follow { speed } => ControlMode::Follow { speed },
            _ => self.control,
        };
    }

    /// Applies any command; control commands never fail.
    pub fn apply(&mut self, command: &Command) -> Result<(), CommandError> {
        match command {
            Command::SetDestination { channel, content } => self.set_destination(*channel, content),
            Command::Capture => self.capture_and_describe(),
            Command::End => Ok(()),
            other => {
                self.set_control(other);
                Ok(())
            }
        }
    }

    pub fn set_destination(&mut self, channel: InputChannel, content: &str) -> Result<(), CommandError> {
        if channel == InputChannel::Voice {
            let missing: Vec<Capability> = [Capability::Microphone, Capability::SpeechRecognition]
                .into_iter()
                .filter(|c| !self.scenario.grants(*c))
                .collect();
            if let Some(&first) = missing.first() {
                for &c in &missing {
                    self.deny(c, "voice_input");
                }
                self.speak(
                    Priority::Navigation,
                    "Voice input needs microphone and speech recognition access.",
                    None,
                );
                return Err(CommandError::PermissionDenied(first));
            }
        }
        if !self.scenario.grants(Capability::Location) {
            let err = self.deny(Capability::Location, "set_destination");
            self.speak(Priority::Navigation, "Location access is needed to plan a route.", None);
            return Err(err);
        }

        let route = match plan_route(&self.scenario.map, self.pose.position(), content) {
            Ok(route) => route,
            Err(err) => {
                let text = match &err {
                    RouteError::UnknownDestination(_) => DESTINATION_NOT_FOUND_TEXT.to_string(),
                    _ => format!("No walking route to {}.", content.trim()),
                };
                self.speak(Priority::Navigation, text, None);
                return Err(err.into());
            }
        };
        self.install_route(route, RouteReason::Destination);
        Ok(())
    }

    fn install_route(&mut self, route: Route, reason: RouteReason) {
        let now = self.clock();
        for e in self.arbiter.flush_navigation(now) {
            self.emit(EventKind::from(&e));
        }

        let steps = route
            .steps
            .iter()
            .map(|s| StepSummary {
                from: s.from_node.clone(),
                to: s.to_node.clone(),
                length: s.length,
                turn: s.turn_direction,
                instruction: s.instruction_text.clone(),
            })
            .collect();
        self.emit(EventKind::RouteUpdated {
            reason,
            destination: route.destination_name.clone(),
            total_length: route.total_length,
            steps,
        });

        let position = self.pose.position();
        let mut tracker = RouteTracker::new(route, self.config.thresholds);
        let first = tracker.active_step().clone();
        let to_first = position.distance(first.waypoint);
        if to_first <= self.config.thresholds.turn_alert {
            tracker.mark_announced(0);
        }
        let total = tracker.remaining_distance(position);
        let destination = tracker.route().destination_name.clone();
        let opening = match reason {
            RouteReason::Destination => format!(
                "Starting route to {destination}, {} meters.",
                (total / 5.0).round() as u64 * 5
            ),
            RouteReason::Reroute => "Rerouting.".to_string(),
        };

        self.tracker = Some(tracker);
        self.destination = Some(destination);
        self.capture_prompted_steps.clear();
        if reason == RouteReason::Destination {
            self.last_capture_prompt = now;
        }
        self.phase = Phase::Navigating;
        self.speak(
            Priority::Navigation,
            format!("{opening} {}", approach_text(&first, to_first)),
            Some(0),
        );
    }

    /// Takes a photo and starts a guidance exchange without blocking the
    /// tick loop.
    pub fn capture_and_describe(&mut self) -> Result<(), CommandError> {
        if !self.scenario.grants(Capability::Camera) {
            let err = self.deny(Capability::Camera, "capture");
            self.speak(Priority::Navigation, "Camera access is needed to take a photo.", None);
            return Err(err);
        }
        if self.phase != Phase::Navigating || self.tracker.is_none() {
            self.speak(Priority::Navigation, "Set a destination before taking a photo.", None);
            return Err(CommandError::NotNavigating);
        }
        if self.pending.is_some() {
            self.speak(Priority::Navigation, STILL_PROCESSING_TEXT, None);
            return Err(CommandError::StillProcessing);
        }

        let now = self.clock();
        let album = if self.scenario.grants(Capability::PhotoLibrary) {
            self.config.album_dir.clone()
        } else {
            self.deny(Capability::PhotoLibrary, "save_photo");
            None
        };
        let image = match capture_image(&self.scenario, self.pose, album.as_deref(), now) {
            Ok(image) => image,
            Err(err) => {
                log::warn!("{err}; keeping the photo unsaved");
                capture_image(&self.scenario, self.pose, None, now).expect("capture without album cannot fail")
            }
        };
        self.emit(EventKind::PhotoCaptured {
            image_id: image.id.clone(),
            scene_tag: image.scene_tag.clone(),
            navigable_content: image.navigable_content,
            file: image
                .saved_path
                .as_ref()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned()),
        });

        let tracker = self.tracker.as_ref().expect("navigating implies a route");
        let position = self.pose.position();
        let step = tracker.active_step();
        let context = NavContext {
            current_location: self.describe_location(position),
            pose: self.pose,
            destination_name: tracker.route().destination_name.clone(),
            next_step_instruction: approach_text(step, position.distance(step.waypoint)),
            remaining_distance: tracker.remaining_distance(position),
            image,
        };
        let bundle = llm::build_prompt(&context, self.config.word_budget);

        let id = self.exchanges;
        self.exchanges += 1;
        self.emit(EventKind::LlmRequested {
            exchange: id,
            scene_tag: bundle.image_attachment.scene_tag.clone(),
            backend: self.backend.id().to_string(),
            word_budget: bundle.word_budget,
            user_text: bundle.user_text.clone(),
        });

        let deadline = self.config.llm_deadline;
        let delivery = if self.backend.simulated() {
            let result = llm::query(self.backend.as_ref(), &bundle, deadline);
            let wait = match &result {
                Ok(reply) => reply.latency,
                Err(GatewayError::Timeout { .. }) => deadline,
                Err(_) => 0.0,
            };
            Delivery::At {
                release: now + wait,
                result,
            }
        } else {
            let (tx, rx) = mpsc::channel();
            let backend = Arc::clone(&self.backend);
            std::thread::spawn(move || {
                let _ = tx.send(llm::query(backend.as_ref(), &bundle, deadline));
            });
            Delivery::Worker(rx)
        };
        self.pending = Some(PendingExchange { id, delivery });
        Ok(())
    }

    fn describe_location(&self, p: Vec2) -> String {
        match self.scenario.map.nearest_node(p) {
            Some(node) => {
                let d = node.position().distance(p).round() as u64;
                if d == 0 {
                    format!("at {}", node.name)
                } else {
                    format!("{d} meters from {}", node.name)
                }
            }
            None => format!("at ({:.0}, {:.0})", p.x, p.y),
        }
    }

    fn current_control(&self) -> Control {
        match self.control {
            ControlMode::Manual {
                forward_speed,
                turn_rate,
            } => Control {
                forward_speed,
                turn_rate,
            },
            ControlMode::Follow { speed } => {
                let target = match (&self.tracker, self.phase) {
                    (Some(tracker), Phase::Navigating) => lookahead(tracker.active_step().segment(), self.pose.position()),
                    _ => return Control::default(),
                };
                let dt = self.config.timestep;
                let offset = target - self.pose.position();
                if offset.norm() < 1e-9 {
                    return Control::default();
                }
                let turn = signed_angle(offset.bearing() - self.pose.heading);
                Control {
                    forward_speed: speed,
                    turn_rate: turn / dt,
                }
            }
        }
    }

    fn sense_and_vibrate(&mut self) {
        let now = self.clock();
        if self.ticks.is_multiple_of(self.sense_every) {
            let mut reading = sense_depth(&self.scenario, self.pose, &self.config.sensor, now);
            if self.config.sensor.noise_std > 0.0 {
                if let (Some(d), Ok(noise)) = (reading.distance, Normal::new(0.0, self.config.sensor.noise_std)) {
                    let noisy = d + noise.sample(&mut self.rng);
                    reading.distance = Some(noisy.clamp(0.0, self.config.sensor.max_range));
                }
            }
            self.emit(EventKind::DepthSensed {
                distance: reading.distance,
                obstacle: reading.hit_obstacle_id.clone(),
            });
            self.haptic.update_reading(&self.config.haptics, reading, now);
        }
        let muted = !self.config.haptics_during_speech && self.arbiter.now_playing().is_some();
        if !muted {
            if let Some(tick) = self.haptic.poll_tick(&self.config.haptics, now) {
                self.emit(EventKind::VibrationTick {
                    frequency: tick.frequency_at_emission,
                    distance: tick.source_distance,
                });
            }
        }
    }

    /// Advances the simulation by one fixed timestep.
    pub fn tick(&mut self) {
        let control = self.current_control();
        self.pose = step_agent(&self.scenario, self.pose, control, self.config.timestep);
        self.ticks += 1;
        let now = self.clock();
        self.emit_position();

        self.sense_and_vibrate();

        let mut arrived_now = None;
        if self.phase == Phase::Navigating {
            arrived_now = self.track_progress(now);
        }
        if self.phase == Phase::Navigating {
            self.capture_prompt_policy(now);
        }

        let active = self.tracker.as_ref().map(RouteTracker::active_step_index);
        for e in self.arbiter.poll(now, active) {
            self.emit(EventKind::from(&e));
        }

        self.collect_llm_reply(now);

        if let Some(kind) = arrived_now {
            self.emit(kind);
        }
    }

    fn track_progress(&mut self, now: f64) -> Option<EventKind> {
        let position = self.pose.position();
        let tracker = self.tracker.as_mut()?;
        let update = tracker.advance(position);
        let destination_node = tracker.route().destination_node.clone();
        let destination_name = tracker.route().destination_name.clone();

        for a in update.pending_announcements {
            self.speak(Priority::Navigation, a.text, Some(a.trigger_step_index));
        }

        if update.arrived {
            self.phase = Phase::Arrived;
            self.control = ControlMode::default();
            let last = self.tracker.as_ref().map_or(0, |t| t.route().steps.len() - 1);
            self.speak(Priority::Navigation, format!("You have arrived at {destination_name}"), Some(last));
            return Some(EventKind::Arrived {
                destination: destination_name,
                node: destination_node,
            });
        }

        let cooled = self
            .last_reroute
            .is_none_or(|t| now - t >= self.config.thresholds.reroute_cooldown);
        if update.off_route && cooled {
            self.last_reroute = Some(now);
            match reroute(&self.scenario.map, position, &destination_name) {
                Ok(route) => self.install_route(route, RouteReason::Reroute),
                Err(err) => log::warn!("reroute failed: {err}"),
            }
        }
        None
    }

    fn capture_prompt_policy(&mut self, now: f64) {
        let Some(tracker) = &self.tracker else { return };
        let index = tracker.active_step_index();
        let distance = self.pose.position().distance(tracker.active_step().waypoint);
        let cfg = self.config.capture_prompt;

        let reason = if !self.capture_prompted_steps.contains(&index) && distance <= cfg.decision_radius {
            Some(PromptReason::DecisionPoint)
        } else if now - self.last_capture_prompt >= cfg.interval - 1e-9 {
            Some(PromptReason::Interval)
        } else {
            None
        };
        if let Some(reason) = reason {
            self.capture_prompted_steps.insert(index);
            self.last_capture_prompt = now;
            self.emit(EventKind::CapturePromptIssued {
                reason,
                step_index: index,
                distance_to_waypoint: distance,
            });
        }
    }

    fn collect_llm_reply(&mut self, now: f64) {
        let Some(pending) = &self.pending else { return };
        let ready = match &pending.delivery {
            Delivery::At { release, .. } => *release <= now + 1e-9,
            Delivery::Worker(_) => true,
        };
        if !ready {
            return;
        }
        let pending = self.pending.take().expect("checked above");
        let result = match pending.delivery {
            Delivery::At { result, .. } => result,
            Delivery::Worker(rx) => match rx.try_recv() {
                Ok(result) => result,
                Err(mpsc::TryRecvError::Empty) => {
                    self.pending = Some(PendingExchange {
                        id: pending.id,
                        delivery: Delivery::Worker(rx),
                    });
                    return;
                }
                Err(mpsc::TryRecvError::Disconnected) => Err(GatewayError::Backend {
                    backend: self.backend.id().to_string(),
                    message: "worker exited without a reply".into(),
                }),
            },
        };
        self.finish_exchange(pending.id, result);
    }

    fn finish_exchange(&mut self, exchange: u64, result: Result<RawLlmReply, GatewayError>) {
        let backend = self.backend.id().to_string();
        match result {
            Ok(raw) => match llm::refine(&raw, self.config.word_budget) {
                Ok(guidance) => {
                    self.emit(EventKind::LlmResponded {
                        exchange,
                        backend,
                        outcome: LlmOutcome::Ok,
                        latency: raw.latency,
                        word_count: Some(guidance.word_count),
                        retake_requested: guidance.retake_requested,
                    });
                    if guidance.retake_requested {
                        self.emit(EventKind::RetakePrompted { exchange });
                        self.speak(Priority::LlmGuidance, RETAKE_TEXT, None);
                    } else if !guidance.spoken_text.is_empty() {
                        self.speak(Priority::LlmGuidance, guidance.spoken_text, None);
                    }
                }
                Err(err) => {
                    log::warn!("{err}; continuing with navigation audio only");
                    self.emit(EventKind::LlmResponded {
                        exchange,
                        backend,
                        outcome: LlmOutcome::EmptyReply,
                        latency: raw.latency,
                        word_count: None,
                        retake_requested: false,
                    });
                }
            },
            Err(err) => {
                let outcome = match err {
                    GatewayError::Timeout { .. } => LlmOutcome::Timeout,
                    GatewayError::Backend { .. } => LlmOutcome::BackendError,
                };
                let latency = match err {
                    GatewayError::Timeout { deadline, .. } => deadline,
                    _ => 0.0,
                };
                log::warn!("{err}");
                self.emit(EventKind::LlmResponded {
                    exchange,
                    backend,
                    outcome,
                    latency,
                    word_count: None,
                    retake_requested: false,
                });
                self.speak(Priority::LlmGuidance, err.fallback_text(), None);
            }
        }
    }
}

/// Metres ahead along the active segment that follow mode steers toward.
const FOLLOW_LOOKAHEAD: f64 = 3.0;

fn lookahead(seg: crate::geometry::Segment, p: Vec2) -> Vec2 {
    let len = seg.length();
    if len < 1e-9 {
        return seg.b;
    }
    let dir = (seg.b - seg.a) * (1.0 / len);
    let along = (p - seg.a).dot(dir);
    seg.a + dir * (along + FOLLOW_LOOKAHEAD).clamp(0.0, len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockBackend;
    use crate::scenario::load_scenario;
    use std::collections::BTreeMap;

    fn straight(capabilities: &str) -> Arc<WorldScenario> {
        let src = format!(
            r#"{{
            "schema_version": 1,
            "name": "straight",
            "map": {{
                "nodes": [{{"id": "A", "x": 0, "y": 0, "name": "Gate"}},
                          {{"id": "B", "x": 50, "y": 0, "name": "Fountain"}},
                          {{"id": "C", "x": 100, "y": 0, "name": "Library"}}],
                "edges": [{{"a": "A", "b": "B"}}, {{"a": "B", "b": "C"}}]
            }},
            "fixtures": [{{"scene_tag": "walkway", "region": {{"circle": {{"center": [50, 0], "radius": 500}}}},
                           "navigable_content": true}}],
            "agent_start": {{"x": 0, "y": 0}}
            {capabilities}
        }}"#
        );
        Arc::new(load_scenario(&src, None).unwrap())
    }

    fn mock(delay: f64) -> Arc<dyn LlmBackend> {
        let mut replies = BTreeMap::new();
        replies.insert(
            "walkway".to_string(),
            "SAFETY: The walkway ahead is clear.\nNEXT: Keep going straight.".to_string(),
        );
        Arc::new(MockBackend::new(replies).with_delay(delay))
    }

    fn kinds<'a>(s: &'a Session, name: &str) -> Vec<&'a Event> {
        s.events().iter().filter(|e| e.kind.name() == name).collect()
    }

    #[test]
    fn denied_capabilities_are_logged_at_startup() {
        let s = Session::start(
            straight(r#", "capabilities": ["location"]"#),
            SessionConfig::default(),
            mock(0.0),
        );
        let denied = kinds(&s, "PermissionDenied");
        assert_eq!(denied.len(), 4);
        assert_eq!(s.phase(), Phase::AwaitingDestination);
    }

    #[test]
    fn destination_needs_location() {
        let mut s = Session::start(
            straight(r#", "capabilities": ["camera"]"#),
            SessionConfig::default(),
            mock(0.0),
        );
        let err = s.set_destination(InputChannel::Text, "Library").unwrap_err();
        assert_eq!(err, CommandError::PermissionDenied(Capability::Location));
        assert_eq!(s.phase(), Phase::AwaitingDestination);
        assert!(kinds(&s, "RouteUpdated").is_empty());
    }

    #[test]
    fn voice_needs_microphone() {
        let mut s = Session::start(
            straight(r#", "capabilities": ["location", "speech_recognition"]"#),
            SessionConfig::default(),
            mock(0.0),
        );
        assert_eq!(
            s.set_destination(InputChannel::Voice, "Library"),
            Err(CommandError::PermissionDenied(Capability::Microphone))
        );
        assert!(s.set_destination(InputChannel::Text, "Library").is_ok());
    }

    #[test]
    fn unknown_destination_is_spoken() {
        let mut s = Session::start(straight(""), SessionConfig::default(), mock(0.0));
        assert!(matches!(
            s.set_destination(InputChannel::Text, "Moon"),
            Err(CommandError::Route(RouteError::UnknownDestination(_)))
        ));
        let started = kinds(&s, "UtteranceStarted");
        assert_eq!(started[0].kind.utterance().unwrap().text, DESTINATION_NOT_FOUND_TEXT);
    }

    #[test]
    fn straight_walk_arrives_once() {
        let mut s = Session::start(straight(""), SessionConfig::default(), mock(0.0));
        s.set_destination(InputChannel::Text, "library").unwrap();
        s.set_control(&Command::Follow { speed: 1.4 });
        for _ in 0..1000 {
            if s.phase() == Phase::Arrived {
                break;
            }
            s.tick();
        }
        assert_eq!(s.phase(), Phase::Arrived);
        let arrived = kinds(&s, "Arrived");
        assert_eq!(arrived.len(), 1);
        // Last event of its tick.
        assert_eq!(s.events().last().unwrap().kind.name(), "Arrived");
        let p = s.pose().position();
        assert!(p.distance(Vec2::new(100.0, 0.0)) <= 5.0 + 1e-9);
        assert_eq!(kinds(&s, "CapturePromptIssued").len(), 2);
    }

    fn prompts(s: &Session) -> Vec<(f64, PromptReason, f64)> {
        s.events()
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::CapturePromptIssued { reason, distance_to_waypoint, .. } => {
                    Some((e.t, *reason, *distance_to_waypoint))
                }
                _ => None,
            })
            .collect()
    }

    #[test]
    fn single_leg_walk_prompts_once_near_the_end() {
        let src = r#"{
            "schema_version": 1,
            "name": "leg",
            "map": {
                "nodes": [{"id": "A", "x": 0, "y": 0, "name": "Gate"},
                          {"id": "B", "x": 100, "y": 0, "name": "Library"}],
                "edges": [{"a": "A", "b": "B"}]
            },
            "agent_start": {"x": 0, "y": 0}
        }"#;
        let world = Arc::new(load_scenario(src, None).unwrap());
        let mut s = Session::start(world, SessionConfig::default(), mock(0.0));
        s.set_destination(InputChannel::Text, "Library").unwrap();
        s.set_control(&Command::Follow { speed: 1.4 });
        while s.phase() != Phase::Arrived && s.clock() < 200.0 {
            s.tick();
        }
        let issued = prompts(&s);
        assert_eq!(issued.len(), 1, "{issued:?}");
        // The walk takes about 71 s, so the prompt lands on the last stretch.
        assert!(issued[0].2 <= 16.5, "{issued:?}");
    }

    #[test]
    fn stationary_traveler_is_prompted_every_interval() {
        let mut s = Session::start(straight(""), SessionConfig::default(), mock(0.0));
        s.set_destination(InputChannel::Text, "Library").unwrap();
        while s.clock() < 130.0 {
            s.tick();
        }
        let issued = prompts(&s);
        assert_eq!(issued.len(), 2, "{issued:?}");
        assert!((issued[0].0 - 60.0).abs() < 0.2 && issued[0].1 == PromptReason::Interval);
        assert!((issued[1].0 - 120.0).abs() < 0.2 && issued[1].1 == PromptReason::Interval);
    }

    #[test]
    fn guidance_arrives_after_latency_and_preempts_navigation() {
        let mut s = Session::start(straight(""), SessionConfig::default(), mock(2.0));
        s.set_destination(InputChannel::Text, "Library").unwrap();
        s.tick();
        s.capture_and_describe().unwrap();
        let asked = s.clock();
        assert_eq!(s.capture_and_describe(), Err(CommandError::StillProcessing));
        for _ in 0..40 {
            s.tick();
        }
        let responded = kinds(&s, "LlmResponded");
        assert_eq!(responded.len(), 1);
        assert!((responded[0].t - (asked + 2.0)).abs() < 1e-9);
        assert_eq!(kinds(&s, "UtterancePreempted").len(), 1);
        let llm_start = kinds(&s, "UtteranceStarted")
            .into_iter()
            .find(|e| e.kind.utterance().unwrap().priority == Priority::LlmGuidance)
            .unwrap();
        assert_eq!(llm_start.t, responded[0].t);
        assert_eq!(
            llm_start.kind.utterance().unwrap().text,
            "The walkway ahead is clear. Keep going straight."
        );
    }

    #[test]
    fn timeout_speaks_fallback() {
        let cfg = SessionConfig {
            llm_deadline: 1.0,
            ..SessionConfig::default()
        };
        let mut s = Session::start(straight(""), cfg, mock(5.0));
        s.set_destination(InputChannel::Text, "Library").unwrap();
        s.capture_and_describe().unwrap();
        for _ in 0..20 {
            s.tick();
        }
        let responded = kinds(&s, "LlmResponded");
        assert!(matches!(
            responded[0].kind,
            EventKind::LlmResponded {
                outcome: LlmOutcome::Timeout,
                ..
            }
        ));
        assert!((responded[0].t - 1.0).abs() < 1e-9);
        assert!(kinds(&s, "UtteranceStarted")
            .iter()
            .any(|e| e.kind.utterance().unwrap().text == llm::FALLBACK_TEXT));
        assert!(!s.in_flight_llm());
    }

    #[test]
    fn capture_without_library_is_not_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SessionConfig {
            album_dir: Some(dir.path().to_path_buf()),
            ..SessionConfig::default()
        };
        let mut s = Session::start(
            straight(r#", "capabilities": ["location", "camera"]"#),
            cfg,
            mock(0.0),
        );
        s.set_destination(InputChannel::Text, "Library").unwrap();
        s.capture_and_describe().unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        assert!(s.events().iter().any(|e| matches!(
            &e.kind,
            EventKind::PermissionDenied { capability: Capability::PhotoLibrary, operation } if operation == "save_photo"
        )));
        assert_eq!(kinds(&s, "LlmRequested").len(), 1);
    }

    #[test]
    fn sequence_numbers_are_dense() {
        let mut s = Session::start(straight(""), SessionConfig::default(), mock(0.5));
        s.set_destination(InputChannel::Text, "Library").unwrap();
        s.set_control(&Command::Follow { speed: 1.2 });
        for i in 0..300 {
            if i == 50 {
                s.capture_and_describe().unwrap();
            }
            s.tick();
        }
        for (i, e) in s.events().iter().enumerate() {
            assert_eq!(e.seq, i as u64);
        }
        assert!(s.events().windows(2).all(|w| w[0].t <= w[1].t));
        assert_eq!(s.events_since(10)[0].seq, 10);
        assert!(s.events_since(1_000_000).is_empty());
    }
}
