use crate::fail::{scenario_failure, Code, Failure, Outcome};
use anyhow::Context;
use clap::Args;
use std::path::PathBuf;
use wayfind::load_map;
use wayfind::routing::{instruction_for, plan_route};

#[derive(Debug, Args)]
pub struct RouteArgs {
    /// Map file: a bare `{nodes, edges}` document or a full scenario.
    #[arg(long)]
    pub map: PathBuf,
    /// Start node id or name.
    #[arg(long)]
    pub from: String,
    /// Destination node id or name.
    #[arg(long)]
    pub to: String,
}

pub fn route(args: RouteArgs) -> Outcome {
    let source = std::fs::read_to_string(&args.map)
        .with_context(|| format!("reading {}", args.map.display()))
        .map_err(|e| Failure::new(Code::Parse, e))?;
    let map = load_map(&source).map_err(scenario_failure)?;
    let start = map
        .resolve(&args.from)
        .map_err(|e| Failure::new(Code::Scenario, e))?
        .position();
    let route = plan_route(&map, start, &args.to).map_err(|e| Failure::new(Code::Scenario, e))?;
    for (i, step) in route.steps.iter().enumerate() {
        println!(
            "{:>2}. {} -> {}  {:.1} m  {}",
            i + 1,
            step.from_node,
            step.to_node,
            step.length,
            instruction_for(step, step.length)
        );
    }
    println!("total {:.1} m to {}", route.total_length, route.destination_name);
    Ok(())
}
