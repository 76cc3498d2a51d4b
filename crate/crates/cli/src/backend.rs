//! Language-model backend selection shared by `run` and `serve`.

use crate::fail::{Code, Failure};
use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};
use std::path::PathBuf;
use std::sync::Arc;
use wayfind::llm::{LlmBackend, MockBackend, RecordedBackend, RecordingBackend, RemoteBackend, RemoteConfig};
use wayfind::WorldScenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LlmKind {
    Mock,
    Recorded,
    Remote,
}

#[derive(Debug, Clone, Args)]
pub struct LlmArgs {
    /// Guidance backend.
    #[arg(long, value_enum, default_value = "mock")]
    pub llm: LlmKind,
    /// Reply table for the mock backend (defaults to the scenario's).
    #[arg(long)]
    pub replies: Option<PathBuf>,
    /// Simulated mock latency in seconds.
    #[arg(long, default_value_t = 1.5)]
    pub mock_delay: f64,
    /// Transcript to replay with `--llm recorded`.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Append every exchange to this transcript.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// TOML file with `base_url`, `model` and optional `api_key` for
    /// `--llm remote`. WAYFIND_LLM_BASE_URL, WAYFIND_LLM_MODEL and
    /// WAYFIND_LLM_API_KEY override it.
    #[arg(long)]
    pub llm_config: Option<PathBuf>,
}

fn backend_failure(err: impl Into<anyhow::Error>) -> Failure {
    Failure::new(Code::Backend, err)
}

pub fn build(args: &LlmArgs, scenario: &WorldScenario) -> Result<Arc<dyn LlmBackend>, Failure> {
    let inner: Box<dyn LlmBackend> = match args.llm {
        LlmKind::Mock => {
            if !(args.mock_delay >= 0.0 && args.mock_delay.is_finite()) {
                return Err(backend_failure(anyhow!("--mock-delay must be a non-negative number")));
            }
            let table = args.replies.clone().or_else(|| scenario.mock_replies.clone());
            let mock = match table {
                Some(path) => MockBackend::from_file(&path)
                    .with_context(|| format!("reading reply table {}", path.display()))
                    .map_err(backend_failure)?,
                None => MockBackend::new(Default::default()),
            };
            Box::new(mock.with_delay(args.mock_delay).for_scenario(scenario))
        }
        LlmKind::Recorded => {
            let path = args
                .transcript
                .as_ref()
                .ok_or_else(|| backend_failure(anyhow!("--llm recorded needs --transcript")))?;
            Box::new(
                RecordedBackend::from_file(path)
                    .with_context(|| format!("reading transcript {}", path.display()))
                    .map_err(backend_failure)?,
            )
        }
        LlmKind::Remote => {
            let file = match &args.llm_config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))
                        .map_err(backend_failure)?;
                    Some(
                        toml::from_str::<RemoteConfig>(&text)
                            .with_context(|| format!("parsing {}", path.display()))
                            .map_err(backend_failure)?,
                    )
                }
                None => None,
            };
            let config = RemoteConfig::resolve(file).ok_or_else(|| {
                backend_failure(anyhow!(
                    "remote backend needs base_url and model from --llm-config or WAYFIND_LLM_BASE_URL/WAYFIND_LLM_MODEL"
                ))
            })?;
            Box::new(RemoteBackend::new(config).map_err(backend_failure)?)
        }
    };
    let backend: Arc<dyn LlmBackend> = match &args.record {
        Some(path) => Arc::new(
            RecordingBackend::new(inner, path)
                .with_context(|| format!("opening {}", path.display()))
                .map_err(backend_failure)?,
        ),
        None => Arc::from(inner),
    };
    Ok(backend)
}
