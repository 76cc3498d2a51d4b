#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use wayfind::session::read_trace;
use wayfind::Event;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_wayfind")
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn campus_walk() -> PathBuf {
    workspace_root().join("scenarios/campus-walk.json")
}

/// A scratch directory holding one scenario, its reply table and script.
pub struct Case {
    pub dir: tempfile::TempDir,
}

impl Case {
    pub fn new(scenario: &str, replies: &str, script: &str) -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        std::fs::write(dir.path().join("scenario.json"), scenario).unwrap();
        std::fs::write(dir.path().join("replies.json"), replies).unwrap();
        std::fs::write(dir.path().join("script.jsonl"), script).unwrap();
        Self { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Runs the CLI on this case with extra flags and returns the trace.
    pub fn run(&self, extra: &[&str]) -> Result<Vec<Event>, String> {
        let trace = self.path("trace.jsonl");
        let scenario = self.path("scenario.json");
        let script = self.path("script.jsonl");
        let replies = self.path("replies.json");
        let mut args = vec![
            "run",
            "--scenario",
            scenario.to_str().unwrap(),
            "--script",
            script.to_str().unwrap(),
            "--replies",
            replies.to_str().unwrap(),
            "--trace-out",
            trace.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let out = run_cli(&args);
        if !out.status.success() {
            return Err(format!(
                "exit {:?}: {}",
                out.status.code(),
                String::from_utf8_lossy(&out.stderr)
            ));
        }
        let file = std::fs::File::open(&trace).map_err(|e| e.to_string())?;
        read_trace(std::io::BufReader::new(file)).map_err(|e| e.to_string())
    }
}

pub fn run_cli(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn wayfind")
}

pub fn named<'a>(events: &'a [Event], kind: &str) -> Vec<&'a Event> {
    events.iter().filter(|e| e.kind.name() == kind).collect()
}
