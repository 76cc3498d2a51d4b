//! Batch execution of a control script against a session.

use super::{Command, ControlScript, Phase, Session};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Hard stop in sim seconds.
    pub max_time: f64,
    /// Stop at the tick that reports arrival, so `Arrived` is the last event.
    pub stop_on_arrival: bool,
    /// After the script ends, keep ticking until audio and any in-flight
    /// exchange are done (still bounded by `max_time`).
    pub drain: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_time: 1800.0,
            stop_on_arrival: true,
            drain: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Arrived,
    ScriptEnded,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub reason: EndReason,
    pub clock: f64,
    pub phase: Phase,
    /// Commands that were refused, with their script time.
    pub refused: Vec<(f64, String)>,
}

/// Plays `script` into `session`. A command stamped `t` is applied at the
/// first tick boundary whose clock reaches `t`.
pub fn run_script(session: &mut Session, script: &ControlScript, opts: RunOptions) -> RunOutcome {
    let eps = session.config().timestep * 1e-6;
    let mut refused = Vec::new();
    let mut next = 0;
    let mut ended = false;

    let reason = loop {
        while !ended && next < script.lines.len() && script.lines[next].t <= session.clock() + eps {
            let line = &script.lines[next];
            next += 1;
            if line.command == Command::End {
                ended = true;
                break;
            }
            if let Err(err) = session.apply(&line.command) {
                refused.push((line.t, err.to_string()));
            }
        }
        if next >= script.lines.len() {
            ended = true;
        }

        if opts.stop_on_arrival && session.phase() == Phase::Arrived {
            break EndReason::Arrived;
        }
        if ended && settled(session, opts.drain) {
            break EndReason::ScriptEnded;
        }
        if session.clock() >= opts.max_time - eps {
            break EndReason::TimeLimit;
        }
        session.tick();
    };

    RunOutcome {
        reason,
        clock: session.clock(),
        phase: session.phase(),
        refused,
    }
}

fn settled(session: &Session, drain: bool) -> bool {
    !drain || (session.arbiter().is_idle() && !session.in_flight_llm())
}
