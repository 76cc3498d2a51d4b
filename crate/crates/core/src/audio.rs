//! Single-channel speech output. Scene guidance preempts navigation prompts;
//! an interrupted prompt replays from the start once guidance has finished,
//! unless the traveller has already moved past the step it announced.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

pub const DEFAULT_SPEECH_RATE_WPM: f64 = 150.0;

/// Slack for comparing playback end with the poll clock.
const END_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    LlmGuidance,
    Navigation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceState {
    Queued,
    Playing,
    Preempted,
    Resumed,
    Finished,
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Its step was already behind the traveller when it could resume.
    Stale,
    /// Replaced by a newer announcement for the same step.
    Coalesced,
    /// The route it belonged to was replaced.
    RouteChanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: u64,
    pub priority: Priority,
    pub text: String,
    pub duration: f64,
    pub trigger_step_index: Option<usize>,
    pub state: UtteranceState,
    pub enqueue_time: f64,
    pub start_time: Option<f64>,
    pub finish_time: Option<f64>,
}

impl Utterance {
    fn was_preempted(&self) -> bool {
        self.state == UtteranceState::Preempted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioEventKind {
    Started,
    Preempted,
    Resumed,
    Finished,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioEvent {
    pub kind: AudioEventKind,
    pub at: f64,
    pub utterance_id: u64,
    pub priority: Priority,
    pub text: String,
    pub trigger_step_index: Option<usize>,
    pub duration: f64,
    pub reason: Option<DropReason>,
}

impl AudioEvent {
    fn new(kind: AudioEventKind, u: &Utterance, at: f64) -> Self {
        Self {
            kind,
            at,
            utterance_id: u.id,
            priority: u.priority,
            text: u.text.clone(),
            trigger_step_index: u.trigger_step_index,
            duration: u.duration,
            reason: None,
        }
    }

    fn dropped(u: &Utterance, at: f64, reason: DropReason) -> Self {
        Self {
            reason: Some(reason),
            ..Self::new(AudioEventKind::Dropped, u, at)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Arbiter {
    speech_rate_wpm: f64,
    now_playing: Option<Utterance>,
    nav_queue: VecDeque<Utterance>,
    llm_queue: VecDeque<Utterance>,
    active_step: Option<usize>,
    next_id: u64,
}

impl Default for Arbiter {
    fn default() -> Self {
        Self::new(DEFAULT_SPEECH_RATE_WPM)
    }
}

impl Arbiter {
    pub fn new(speech_rate_wpm: f64) -> Self {
        Self {
            speech_rate_wpm: if speech_rate_wpm > 0.0 { speech_rate_wpm } else { DEFAULT_SPEECH_RATE_WPM },
            now_playing: None,
            nav_queue: VecDeque::new(),
            llm_queue: VecDeque::new(),
            active_step: None,
            next_id: 0,
        }
    }

    pub fn now_playing(&self) -> Option<&Utterance> {
        self.now_playing.as_ref()
    }

    pub fn nav_queue(&self) -> impl Iterator<Item = &Utterance> {
        self.nav_queue.iter()
    }

    pub fn llm_queue(&self) -> impl Iterator<Item = &Utterance> {
        self.llm_queue.iter()
    }

    pub fn is_idle(&self) -> bool {
        self.now_playing.is_none() && self.nav_queue.is_empty() && self.llm_queue.is_empty()
    }

    /// Speaking time for `text` at the configured rate.
    pub fn duration_of(&self, text: &str) -> f64 {
        text.split_whitespace().count() as f64 / self.speech_rate_wpm * 60.0
    }

    /// Creates a queued utterance with a fresh id.
    pub fn utterance(&mut self, priority: Priority, text: impl Into<String>, trigger_step_index: Option<usize>, now: f64) -> Utterance {
        let text = text.into();
        let id = self.next_id;
        self.next_id += 1;
        Utterance {
            id,
            priority,
            duration: self.duration_of(&text),
            text,
            trigger_step_index,
            state: UtteranceState::Queued,
            enqueue_time: now,
            start_time: None,
            finish_time: None,
        }
    }

    pub fn enqueue(&mut self, u: Utterance, now: f64) -> Vec<AudioEvent> {
        let mut events = Vec::new();
        if u.text.trim().is_empty() {
            return events;
        }
        match u.priority {
            Priority::LlmGuidance => {
                self.llm_queue.push_back(u);
                let nav_playing = self
                    .now_playing
                    .as_ref()
                    .is_some_and(|p| p.priority == Priority::Navigation);
                if nav_playing {
                    let mut interrupted = self.now_playing.take().expect("checked above");
                    interrupted.state = UtteranceState::Preempted;
                    interrupted.finish_time = Some(now);
                    events.push(AudioEvent::new(AudioEventKind::Preempted, &interrupted, now));
                    self.nav_queue.push_front(interrupted);
                }
            }
            Priority::Navigation => {
                let duplicate = u.trigger_step_index.and_then(|step| {
                    self.nav_queue
                        .iter()
                        .position(|q| q.trigger_step_index == Some(step))
                });
                match duplicate {
                    Some(i) => {
                        let old = std::mem::replace(&mut self.nav_queue[i], u);
                        events.push(AudioEvent::dropped(&old, now, DropReason::Coalesced));
                    }
                    None => self.nav_queue.push_back(u),
                }
            }
        }
        self.start_next(now, &mut events);
        events
    }

    /// Advances playback to `now`. `active_step` is the route step the
    /// traveller is on, used to discard stale interrupted prompts.
    pub fn poll(&mut self, now: f64, active_step: Option<usize>) -> Vec<AudioEvent> {
        self.active_step = active_step;
        let mut events = Vec::new();
        if let Some(playing) = &self.now_playing {
            let ends = playing.start_time.unwrap_or(now) + playing.duration;
            if now + END_EPSILON >= ends {
                let mut done = self.now_playing.take().expect("checked above");
                done.state = UtteranceState::Finished;
                done.finish_time = Some(now);
                events.push(AudioEvent::new(AudioEventKind::Finished, &done, now));
            }
        }
        self.start_next(now, &mut events);
        events
    }

    /// Drops every queued navigation prompt, e.g. after a new route.
    pub fn flush_navigation(&mut self, now: f64) -> Vec<AudioEvent> {
        self.nav_queue
            .drain(..)
            .map(|u| AudioEvent::dropped(&u, now, DropReason::RouteChanged))
            .collect()
    }

    fn start_next(&mut self, now: f64, events: &mut Vec<AudioEvent>) {
        while self.now_playing.is_none() {
            if let Some(mut next) = self.llm_queue.pop_front() {
                next.state = UtteranceState::Playing;
                next.start_time = Some(now);
                events.push(AudioEvent::new(AudioEventKind::Started, &next, now));
                self.now_playing = Some(next);
                return;
            }
            let Some(mut next) = self.nav_queue.pop_front() else {
                return;
            };
            let kind = if next.was_preempted() {
                let stale = matches!(
                    (next.trigger_step_index, self.active_step),
                    (Some(step), Some(active)) if step < active
                );
                if stale {
                    next.state = UtteranceState::Dropped;
                    events.push(AudioEvent::dropped(&next, now, DropReason::Stale));
                    continue;
                }
                next.state = UtteranceState::Resumed;
                AudioEventKind::Resumed
            } else {
                next.state = UtteranceState::Playing;
                AudioEventKind::Started
            };
            next.start_time = Some(now);
            next.finish_time = None;
            events.push(AudioEvent::new(kind, &next, now));
            self.now_playing = Some(next);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn words(n: usize) -> String {
        vec!["word"; n].join(" ")
    }

    fn kinds(events: &[AudioEvent]) -> Vec<(AudioEventKind, u64)> {
        events.iter().map(|e| (e.kind, e.utterance_id)).collect()
    }

    #[test]
    fn duration_from_word_count() {
        let arbiter = Arbiter::default();
        assert!((arbiter.duration_of(&words(30)) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn idle_nav_starts_immediately() {
        let mut a = Arbiter::default();
        let u = a.utterance(Priority::Navigation, "In 20 meters, turn left", Some(0), 0.0);
        let ev = a.enqueue(u, 0.0);
        assert_eq!(kinds(&ev), [(AudioEventKind::Started, 0)]);
        assert_eq!(a.now_playing().unwrap().state, UtteranceState::Playing);
    }

    #[test]
    fn llm_preempts_nav_at_enqueue_time() {
        let mut a = Arbiter::default();
        let nav = a.utterance(Priority::Navigation, words(10), Some(2), 0.0);
        a.enqueue(nav, 0.0);
        let llm = a.utterance(Priority::LlmGuidance, words(5), None, 1.0);
        let ev = a.enqueue(llm, 1.0);
        assert_eq!(kinds(&ev), [(AudioEventKind::Preempted, 0), (AudioEventKind::Started, 1)]);
        assert!(ev.iter().all(|e| e.at == 1.0));
    }

    #[test]
    fn preempted_prompt_resumes_when_step_active() {
        let mut a = Arbiter::default();
        let nav = a.utterance(Priority::Navigation, words(10), Some(2), 0.0);
        a.enqueue(nav, 0.0);
        let llm = a.utterance(Priority::LlmGuidance, words(5), None, 1.0);
        a.enqueue(llm, 1.0);
        // 5 words = 2 s of speech.
        assert!(a.poll(2.9, Some(2)).is_empty());
        let ev = a.poll(3.0, Some(2));
        assert_eq!(kinds(&ev), [(AudioEventKind::Finished, 1), (AudioEventKind::Resumed, 0)]);
        let ev = a.poll(7.0, Some(2));
        assert_eq!(kinds(&ev), [(AudioEventKind::Finished, 0)]);
        assert!(a.is_idle());
    }

    #[test]
    fn preempted_prompt_dropped_when_stale() {
        let mut a = Arbiter::default();
        let nav = a.utterance(Priority::Navigation, words(10), Some(1), 0.0);
        a.enqueue(nav, 0.0);
        let llm = a.utterance(Priority::LlmGuidance, words(5), None, 1.0);
        a.enqueue(llm, 1.0);
        let ev = a.poll(3.0, Some(3));
        assert_eq!(kinds(&ev), [(AudioEventKind::Finished, 1), (AudioEventKind::Dropped, 0)]);
        assert_eq!(ev[1].reason, Some(DropReason::Stale));
    }

    #[test]
    fn same_step_announcements_coalesce() {
        let mut a = Arbiter::default();
        let busy = a.utterance(Priority::Navigation, words(10), None, 0.0);
        a.enqueue(busy, 0.0);
        let first = a.utterance(Priority::Navigation, "In 20 meters, turn left", Some(4), 0.5);
        a.enqueue(first, 0.5);
        let second = a.utterance(Priority::Navigation, "In 15 meters, turn left", Some(4), 1.0);
        let ev = a.enqueue(second, 1.0);
        assert_eq!(ev[0].reason, Some(DropReason::Coalesced));
        let queued: Vec<_> = a.nav_queue().collect();
        assert_eq!(queued.len(), 1);
        assert_eq!(queued[0].text, "In 15 meters, turn left");
    }

    #[test]
    fn llm_does_not_preempt_llm() {
        let mut a = Arbiter::default();
        let one = a.utterance(Priority::LlmGuidance, words(5), None, 0.0);
        a.enqueue(one, 0.0);
        let two = a.utterance(Priority::LlmGuidance, words(5), None, 0.5);
        assert!(a.enqueue(two, 0.5).is_empty());
        assert_eq!(a.llm_queue().count(), 1);
    }

    #[test]
    fn llm_queue_drains_before_nav() {
        let mut a = Arbiter::default();
        let llm1 = a.utterance(Priority::LlmGuidance, words(5), None, 0.0);
        a.enqueue(llm1, 0.0);
        let nav = a.utterance(Priority::Navigation, words(5), None, 0.1);
        a.enqueue(nav, 0.1);
        let llm2 = a.utterance(Priority::LlmGuidance, words(5), None, 0.2);
        a.enqueue(llm2, 0.2);
        let ev = a.poll(2.0, None);
        assert_eq!(kinds(&ev), [(AudioEventKind::Finished, 0), (AudioEventKind::Started, 2)]);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Nav(usize, Option<usize>),
        Llm(usize),
        Wait(u8),
        Advance,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (1usize..25, proptest::option::of(0usize..4)).prop_map(|(w, s)| Op::Nav(w, s)),
            (1usize..25).prop_map(Op::Llm),
            (1u8..40).prop_map(Op::Wait),
            Just(Op::Advance),
        ]
    }

    proptest! {
        #[test]
        fn exclusivity_and_resume_guarantee(ops in proptest::collection::vec(op(), 1..60)) {
            let poll = 0.1;
            let mut a = Arbiter::default();
            let mut tick: u64 = 0;
            let mut step = 0usize;
            let mut events = Vec::new();
            for op in ops {
                let now = tick as f64 * poll;
                match op {
                    Op::Nav(w, s) => {
                        let u = a.utterance(Priority::Navigation, words(w), s, now);
                        events.extend(a.enqueue(u, now));
                    }
                    Op::Llm(w) => {
                        let u = a.utterance(Priority::LlmGuidance, words(w), None, now);
                        events.extend(a.enqueue(u, now));
                    }
                    Op::Wait(n) => {
                        for _ in 0..n {
                            tick += 1;
                            events.extend(a.poll(tick as f64 * poll, Some(step)));
                        }
                    }
                    Op::Advance => step += 1,
                }
            }
            // Drain everything.
            for _ in 0..100_000 {
                if a.is_idle() { break; }
                tick += 1;
                events.extend(a.poll(tick as f64 * poll, Some(step)));
            }
            prop_assert!(a.is_idle());

            // At most one utterance audible at any instant.
            let mut playing: Option<u64> = None;
            for e in &events {
                match e.kind {
                    AudioEventKind::Started | AudioEventKind::Resumed => {
                        prop_assert!(playing.is_none(), "overlap at {}", e.at);
                        playing = Some(e.utterance_id);
                    }
                    AudioEventKind::Finished | AudioEventKind::Preempted => {
                        prop_assert_eq!(playing, Some(e.utterance_id));
                        playing = None;
                    }
                    AudioEventKind::Dropped => prop_assert_ne!(playing, Some(e.utterance_id)),
                }
            }

            // Every preempted prompt ends resumed-then-finished or dropped.
            let mut history: BTreeMap<u64, Vec<AudioEventKind>> = BTreeMap::new();
            for e in &events {
                history.entry(e.utterance_id).or_default().push(e.kind);
            }
            for kinds in history.values() {
                if let Some(p) = kinds.iter().position(|k| *k == AudioEventKind::Preempted) {
                    let tail = &kinds[p + 1..];
                    let resumed = tail.first() == Some(&AudioEventKind::Resumed);
                    let dropped = tail.first() == Some(&AudioEventKind::Dropped);
                    prop_assert!(resumed || dropped, "{kinds:?}");
                }
                let terminal = kinds.iter().filter(|k| matches!(k, AudioEventKind::Finished | AudioEventKind::Dropped)).count();
                prop_assert_eq!(terminal, 1, "{:?}", kinds);
            }
        }
    }
}
