//! Control commands and the timestamped control-script file.
//!
//! A script is JSON lines; each line is a command plus its sim time `t`:
//!
//! ```text
//! {"t": 0.0, "cmd": "set_destination", "channel": "text", "content": "Library"}
//! {"t": 0.0, "cmd": "follow", "speed": 1.4}
//! {"t": 12.5, "cmd": "capture"}
//! {"t": 30.0, "cmd": "turn", "rate": 0.5}
//! {"t": 31.0, "cmd": "move", "speed": 1.0}
//! {"t": 90.0, "cmd": "end"}
//! ```
//!
//! The live service accepts the same objects without `t`. Lines starting
//! with `#` are comments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputChannel {
    Voice,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    /// Forward speed in m/s; the turn rate is kept.
    Move { speed: f64 },
    /// Turn rate in rad/s; the forward speed is kept.
    Turn { rate: f64 },
    Stop,
    /// Walk the active route at `speed`, steering toward each waypoint.
    Follow { speed: f64 },
    SetDestination { channel: InputChannel, content: String },
    Capture,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptLine {
    pub t: f64,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScriptError {
    #[error("script line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControlScript {
    pub lines: Vec<ScriptLine>,
}

impl ControlScript {
    pub fn parse(source: &str) -> Result<Self, ScriptError> {
        let mut lines = Vec::new();
        let mut last_t = f64::NEG_INFINITY;
        for (i, raw) in source.lines().enumerate() {
            let text = raw.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let line: ScriptLine = serde_json::from_str(text).map_err(|e| ScriptError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if !(line.t.is_finite() && line.t >= 0.0) {
                return Err(ScriptError::Parse {
                    line: i + 1,
                    message: format!("time {} must be a finite non-negative number", line.t),
                });
            }
            if line.t < last_t {
                return Err(ScriptError::Parse {
                    line: i + 1,
                    message: format!("time {} goes backwards (previous {last_t})", line.t),
                });
            }
            last_t = line.t;
            lines.push(line);
        }
        Ok(Self { lines })
    }

    pub fn to_jsonl(&self) -> String {
        self.lines
            .iter()
            .map(|l| serde_json::to_string(l).expect("script lines serialize") + "\n")
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_commands() {
        let script = ControlScript::parse(
            r#"
            # comment
            {"t": 0, "cmd": "set_destination", "channel": "voice", "content": "Library"}
            {"t": 0, "cmd": "follow", "speed": 1.4}
            {"t": 2.5, "cmd": "capture"}
            {"t": 9, "cmd": "end"}
            "#,
        )
        .unwrap();
        assert_eq!(script.lines.len(), 4);
        assert_eq!(
            script.lines[0].command,
            Command::SetDestination {
                channel: InputChannel::Voice,
                content: "Library".into()
            }
        );
        assert_eq!(ControlScript::parse(&script.to_jsonl()).unwrap(), script);
    }

    #[test]
    fn reports_bad_lines() {
        let err = ControlScript::parse("{\"t\": 0, \"cmd\": \"fly\"}").unwrap_err();
        assert!(matches!(err, ScriptError::Parse { line: 1, .. }));
        let err = ControlScript::parse("{\"t\": 2, \"cmd\": \"stop\"}\n{\"t\": 1, \"cmd\": \"stop\"}").unwrap_err();
        assert!(matches!(err, ScriptError::Parse { line: 2, .. }));
    }
}
