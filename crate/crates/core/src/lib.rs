//! Simulated assistive navigation: a 2-D world with a depth sensor and
//! haptic feedback, turn-by-turn routing, photo guidance through a
//! language-model gateway, and a two-level speech arbiter, wired together
//! by a deterministic session loop.

pub mod audio;
pub mod config;
pub mod geometry;
pub mod haptics;
pub mod llm;
pub mod routing;
pub mod scenario;
pub mod session;
pub mod sweep;
pub mod world;

pub use config::{CapturePromptConfig, SessionConfig};
pub use scenario::{load_map, load_scenario, load_scenario_file};
pub use session::{Event, EventKind, Phase, Session};
pub use world::WorldScenario;
