use crate::backend::{self, LlmArgs};
use crate::fail::{scenario_failure, Code, Failure, Outcome};
use anyhow::{anyhow, Context};
use clap::Args;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use wayfind::session::{run_script, write_trace, ControlScript, RunOptions};
use wayfind::{load_scenario_file, Session, SessionConfig};

/// Session tunables shared by `run` and `serve`.
#[derive(Debug, Clone, Args)]
pub struct SessionArgs {
    /// TOML file overriding session defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Spoken guidance word budget.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Simulation timestep in seconds.
    #[arg(long)]
    pub timestep: Option<f64>,
    /// Replaces the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for capture records.
    #[arg(long)]
    pub album: Option<PathBuf>,
    /// Seconds allowed per guidance exchange.
    #[arg(long)]
    pub llm_deadline: Option<f64>,
}

impl SessionArgs {
    pub fn session_config(&self) -> Result<SessionConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))
                    .map_err(|e| Failure::new(Code::Parse, e))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))
                    .map_err(|e| Failure::new(Code::Parse, e))?
            }
            None => SessionConfig::default(),
        };
        if let Some(b) = self.budget {
            cfg.word_budget = b;
        }
        if let Some(dt) = self.timestep {
            cfg.timestep = dt;
        }
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
        }
        if let Some(dir) = &self.album {
            cfg.album_dir = Some(dir.clone());
        }
        if let Some(d) = self.llm_deadline {
            cfg.llm_deadline = d;
        }
        cfg.validate()
            .map_err(|e| Failure::new(Code::Usage, anyhow!("invalid session config: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Control script (JSON lines). Defaults to `<scenario>.script.jsonl`
    /// next to the scenario.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Where to write the event trace.
    #[arg(long, default_value = "trace.jsonl")]
    pub trace_out: PathBuf,
    /// Stop after this much simulated time (seconds).
    #[arg(long, default_value_t = 1800.0)]
    pub max_time: f64,
    /// Keep running after arrival until the script ends.
    #[arg(long)]
    pub no_stop_on_arrival: bool,
    #[command(flatten)]
    pub session: SessionArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
}

fn default_script(scenario: &Path) -> PathBuf {
    let stem = scenario.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    scenario.with_file_name(format!("{stem}.script.jsonl"))
}

pub fn run(args: RunArgs) -> Outcome {
    let scenario = load_scenario_file(&args.scenario).map_err(scenario_failure)?;
    let script_path = args.script.clone().unwrap_or_else(|| default_script(&args.scenario));
    let script_text = std::fs::read_to_string(&script_path)
        .with_context(|| format!("reading script {}", script_path.display()))
        .map_err(|e| Failure::new(Code::Parse, e))?;
    let script = ControlScript::parse(&script_text).map_err(|e| Failure::new(Code::Parse, e))?;
    let config = args.session.session_config()?;
    if !(args.max_time > 0.0) {
        return Err(Failure::new(Code::Usage, anyhow!("--max-time must be positive")));
    }
    let backend = backend::build(&args.llm, &scenario)?;

    let mut session = Session::start(Arc::new(scenario), config, backend);
    let outcome = run_script(
        &mut session,
        &script,
        RunOptions {
            max_time: args.max_time,
            stop_on_arrival: !args.no_stop_on_arrival,
            drain: true,
        },
    );
    for (t, why) in &outcome.refused {
        log::info!("command at t={t} refused: {why}");
    }

    let file = File::create(&args.trace_out).with_context(|| format!("creating {}", args.trace_out.display()))?;
    write_trace(BufWriter::new(file), session.events())
        .with_context(|| format!("writing {}", args.trace_out.display()))?;
    eprintln!(
        "{:?} at t={:.1}s, {} events, {} guidance calls -> {}",
        outcome.reason,
        outcome.clock,
        session.events().len(),
        session.backend().calls(),
        args.trace_out.display()
    );
    Ok(())
}
