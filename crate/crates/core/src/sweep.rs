//! Batch evaluation: depth scans over many poses, route queries, and whole
//! scripted sessions across seeds.
//!
//! With the `parallel` feature (default) the batch helpers fan out over
//! rayon; without it they run in order on the calling thread. Results are
//! returned in input order either way, so both paths give identical output.

use crate::config::SessionConfig;
use crate::llm::LlmBackend;
use crate::routing::{plan_route, MapGraph, Route, RouteError};
use crate::session::{run_script, ControlScript, Event, RunOptions, RunOutcome, Session};
use crate::world::{sense_depth, DepthReading, DepthSensorConfig, Pose, WorldScenario};
use crate::geometry::Vec2;
use std::sync::Arc;

pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_parallel<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Maps with whichever backend the build provides.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_parallel(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(items, f)
    }
}

pub fn depth_scan(world: &WorldScenario, poses: &[Pose], cfg: &DepthSensorConfig) -> Vec<DepthReading> {
    map(poses, |p| sense_depth(world, *p, cfg, 0.0))
}

pub fn plan_routes(map_graph: &MapGraph, queries: &[(Vec2, String)]) -> Vec<Result<Route, RouteError>> {
    map(queries, |(from, dest)| plan_route(map_graph, *from, dest))
}

#[derive(Debug, Clone)]
pub struct SessionRun {
    pub seed: u64,
    pub outcome: RunOutcome,
    pub events: Vec<Event>,
}

/// Runs the same script once per seed. `backend` builds a fresh backend for
/// each run so call counters and recorded cursors are not shared.
pub fn run_sessions<B>(
    scenario: Arc<WorldScenario>,
    config: &SessionConfig,
    script: &ControlScript,
    opts: RunOptions,
    seeds: &[u64],
    backend: B,
) -> Vec<SessionRun>
where
    B: Fn(u64) -> Arc<dyn LlmBackend> + Sync + Send,
{
    map(seeds, |&seed| {
        let mut cfg = config.clone();
        cfg.seed = Some(seed);
        let mut session = Session::start(Arc::clone(&scenario), cfg, backend(seed));
        let outcome = run_script(&mut session, script, opts);
        SessionRun {
            seed,
            outcome,
            events: session.events().to_vec(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_matches_default_path() {
        let items: Vec<u64> = (0..200).collect();
        let f = |x: &u64| x.wrapping_mul(2654435761) % 977;
        assert_eq!(map(&items, f), map_sequential(&items, f));
    }
}
