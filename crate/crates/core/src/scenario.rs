//! Scenario file format (JSON, `"schema_version": 1`).
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "name": "two-stops",
//!   "seed": 7,
//!   "map": {
//!     "nodes": [{ "id": "A", "x": 0, "y": 0, "name": "Gate" },
//!               { "id": "B", "x": 40, "y": 0, "name": "Library" }],
//!     "edges": [{ "a": "A", "b": "B" }]
//!   },
//!   "obstacles": [{ "id": "kiosk", "vertices": [[10, 3], [12, 3], [12, 5], [10, 5]] }],
//!   "fixtures": [{ "scene_tag": "plaza", "region": { "circle": { "center": [5, 0], "radius": 4 } },
//!                  "navigable_content": true }],
//!   "agent_start": { "x": 0, "y": 0, "heading_deg": 0 },
//!   "capabilities": ["location", "camera", "photo_library", "microphone", "speech_recognition"],
//!   "mock_replies": "two-stops.replies.json"
//! }
//! ```
//!
//! Obstacles with two vertices are wall segments; three or more form a closed
//! polygon. Edge `length` overrides the Euclidean default. `capabilities`
//! defaults to every capability when omitted. Relative paths resolve against
//! the scenario file's directory.

use crate::geometry::Vec2;
use crate::routing::{MapGraph, MapNode};
use crate::world::{
    Capability, FixtureRegion, HeadingArc, ImageFixture, Obstacle, Pose, WorldError, WorldScenario,
};
use serde::Deserialize;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

type Point = [f64; 2];

fn point(p: Point) -> Vec2 {
    Vec2::new(p[0], p[1])
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    name: String,
    #[serde(default)]
    seed: u64,
    map: MapSection,
    #[serde(default)]
    obstacles: Vec<ObstacleEntry>,
    #[serde(default)]
    fixtures: Vec<FixtureEntry>,
    agent_start: StartEntry,
    capabilities: Option<Vec<Capability>>,
    mock_replies: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapSection {
    nodes: Vec<MapNode>,
    #[serde(default)]
    edges: Vec<EdgeEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeEntry {
    a: String,
    b: String,
    length: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstacleEntry {
    id: String,
    vertices: Vec<Point>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum RegionEntry {
    Circle { center: Point, radius: f64 },
    Polygon(Vec<Point>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArcEntry {
    from: f64,
    to: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureEntry {
    scene_tag: String,
    region: RegionEntry,
    heading_range_deg: Option<ArcEntry>,
    navigable_content: bool,
    asset: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StartEntry {
    x: f64,
    y: f64,
    #[serde(default)]
    heading_deg: f64,
}

/// Parses and validates a scenario document. `base_dir` anchors relative
/// asset and reply-table paths.
pub fn load_scenario(source: &str, base_dir: Option<&Path>) -> Result<WorldScenario, WorldError> {
    let de = &mut serde_json::Deserializer::from_str(source);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|err| {
        let field = err.path().to_string();
        WorldError::Parse {
            field: if field.is_empty() || field == "." { "<root>".into() } else { field },
            message: err.into_inner().to_string(),
        }
    })?;

    if file.schema_version != SCHEMA_VERSION {
        return Err(WorldError::Parse {
            field: "schema_version".into(),
            message: format!("unsupported version {}, expected {SCHEMA_VERSION}", file.schema_version),
        });
    }

    let resolve = |p: PathBuf| match base_dir {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    };

    let map = MapGraph::new(
        file.map.nodes,
        file.map.edges.into_iter().map(|e| (e.a, e.b, e.length)),
    )
    .map_err(|e| WorldError::Invalid(e.to_string()))?;

    let obstacles = file
        .obstacles
        .into_iter()
        .map(|o| Obstacle {
            id: o.id,
            vertices: o.vertices.into_iter().map(point).collect(),
        })
        .collect();

    let fixtures = file
        .fixtures
        .into_iter()
        .map(|f| ImageFixture {
            scene_tag: f.scene_tag,
            region: match f.region {
                RegionEntry::Circle { center, radius } => FixtureRegion::Circle {
                    center: point(center),
                    radius,
                },
                RegionEntry::Polygon(vs) => FixtureRegion::Polygon(vs.into_iter().map(point).collect()),
            },
            heading_range: f.heading_range_deg.map(|arc| HeadingArc {
                from: arc.from.to_radians(),
                to: arc.to.to_radians(),
            }),
            navigable_content: f.navigable_content,
            asset_path: f.asset.map(resolve),
        })
        .collect();

    let scenario = WorldScenario {
        name: file.name,
        map,
        obstacles,
        fixtures,
        agent_start: Pose::new(file.agent_start.x, file.agent_start.y, file.agent_start.heading_deg.to_radians()),
        granted_capabilities: file
            .capabilities
            .map(|caps| caps.into_iter().collect())
            .unwrap_or_else(|| Capability::ALL.into_iter().collect()),
        rng_seed: file.seed,
        mock_replies: file.mock_replies.map(resolve),
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Parses a street map, either bare (`{"nodes": [...], "edges": [...]}`)
/// or as the `map` section of a full scenario document.
pub fn load_map(source: &str) -> Result<MapGraph, WorldError> {
    let is_scenario = serde_json::from_str::<serde_json::Value>(source)
        .map(|v| v.get("schema_version").is_some())
        .unwrap_or(false);
    if is_scenario {
        return load_scenario(source, None).map(|s| s.map);
    }
    let de = &mut serde_json::Deserializer::from_str(source);
    let section: MapSection = serde_path_to_error::deserialize(de).map_err(|err| WorldError::Parse {
        field: err.path().to_string(),
        message: err.into_inner().to_string(),
    })?;
    MapGraph::new(section.nodes, section.edges.into_iter().map(|e| (e.a, e.b, e.length)))
        .map_err(|e| WorldError::Invalid(e.to_string()))
}

/// Reads and parses a scenario file from disk.
pub fn load_scenario_file(path: &Path) -> Result<WorldScenario, WorldError> {
    let source = std::fs::read_to_string(path).map_err(|e| WorldError::Parse {
        field: "<file>".into(),
        message: format!("{}: {e}", path.display()),
    })?;
    load_scenario(&source, path.parent())
}
