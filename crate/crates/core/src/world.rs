//! Deterministic 2D stand-in for the street, the camera and the depth sensor.

use crate::geometry::{
    normalize_angle, point_in_polygon, polygon_area, ray_segment_distance,
    segment_intersection_param, Segment, Vec2,
};
use crate::routing::MapGraph;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Walking-scale speed cap in m/s.
pub const MAX_FORWARD_SPEED: f64 = 3.0;
/// Gap kept between the traveller and any obstacle after a blocked move.
pub const SKIN_MARGIN: f64 = 0.05;
/// Scene tag reported when the camera points at no authored fixture.
pub const NO_FIXTURE_TAG: &str = "no-fixture";

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("scenario parse error at `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("scenario geometry error: {0}")]
    Geometry(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("could not persist capture to {path}: {source}")]
    Persistence {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Location,
    Camera,
    PhotoLibrary,
    Microphone,
    SpeechRecognition,
}

impl Capability {
    pub const ALL: [Capability; 5] = [
        Capability::Location,
        Capability::Camera,
        Capability::PhotoLibrary,
        Capability::Microphone,
        Capability::SpeechRecognition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Capability::Location => "location",
            Capability::Camera => "camera",
            Capability::PhotoLibrary => "photo_library",
            Capability::Microphone => "microphone",
            Capability::SpeechRecognition => "speech_recognition",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians in [0, 2π), counter-clockwise from +x.
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    /// m/s along the heading; clamped to ±[`MAX_FORWARD_SPEED`].
    pub forward_speed: f64,
    /// rad/s, counter-clockwise positive.
    pub turn_rate: f64,
}

/// Static obstacle: two vertices form a wall segment, three or more a
/// closed polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub id: String,
    pub vertices: Vec<Vec2>,
}

impl Obstacle {
    pub fn is_polygon(&self) -> bool {
        self.vertices.len() >= 3
    }

    pub fn edges(&self) -> impl Iterator<Item = Segment> + '_ {
        let n = self.vertices.len();
        let count = if self.is_polygon() { n } else { n.saturating_sub(1) };
        (0..count).map(move |i| Segment::new(self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.is_polygon() && point_in_polygon(p, &self.vertices)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FixtureRegion {
    Circle { center: Vec2, radius: f64 },
    Polygon(Vec<Vec2>),
}

impl FixtureRegion {
    pub fn contains(&self, p: Vec2) -> bool {
        match self {
            FixtureRegion::Circle { center, radius } => center.distance(p) <= *radius,
            FixtureRegion::Polygon(vertices) => point_in_polygon(p, vertices),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            FixtureRegion::Circle { radius, .. } => PI * radius * radius,
            FixtureRegion::Polygon(vertices) => polygon_area(vertices),
        }
    }
}

/// Counter-clockwise heading arc from `from` to `to`, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadingArc {
    pub from: f64,
    pub to: f64,
}

impl HeadingArc {
    pub fn contains(&self, heading: f64) -> bool {
        let span = normalize_angle(self.to - self.from);
        normalize_angle(heading - self.from) <= span
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFixture {
    pub scene_tag: String,
    pub region: FixtureRegion,
    pub heading_range: Option<HeadingArc>,
    pub navigable_content: bool,
    pub asset_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct WorldScenario {
    pub name: String,
    pub map: MapGraph,
    pub obstacles: Vec<Obstacle>,
    pub fixtures: Vec<ImageFixture>,
    pub agent_start: Pose,
    pub granted_capabilities: BTreeSet<Capability>,
    pub rng_seed: u64,
    /// Scene-tag → reply table for the mock language backend, if shipped.
    pub mock_replies: Option<PathBuf>,
}

impl WorldScenario {
    pub fn grants(&self, capability: Capability) -> bool {
        self.granted_capabilities.contains(&capability)
    }

    pub fn fixture(&self, scene_tag: &str) -> Option<&ImageFixture> {
        self.fixtures.iter().find(|f| f.scene_tag == scene_tag)
    }

    /// Checks every cross-field invariant not expressible in the file schema.
    pub fn validate(&self) -> Result<(), WorldError> {
        for obstacle in &self.obstacles {
            if obstacle.vertices.len() < 2 {
                return Err(WorldError::Invalid(format!(
                    "obstacle {} needs at least two vertices",
                    obstacle.id
                )));
            }
            if let Some(v) = obstacle.vertices.iter().find(|v| !v.is_finite()) {
                return Err(WorldError::Invalid(format!(
                    "obstacle {} has non-finite vertex {v:?}",
                    obstacle.id
                )));
            }
        }
        let mut ids = BTreeSet::new();
        for obstacle in &self.obstacles {
            if !ids.insert(obstacle.id.as_str()) {
                return Err(WorldError::Invalid(format!("duplicate obstacle id {}", obstacle.id)));
            }
        }

        let mut tags = BTreeSet::new();
        for fixture in &self.fixtures {
            if fixture.scene_tag == NO_FIXTURE_TAG {
                return Err(WorldError::Invalid(format!(
                    "scene tag {NO_FIXTURE_TAG} is reserved"
                )));
            }
            if !tags.insert(fixture.scene_tag.as_str()) {
                return Err(WorldError::Invalid(format!(
                    "duplicate fixture scene tag {}",
                    fixture.scene_tag
                )));
            }
            let area = fixture.region.area();
            if !(area.is_finite() && area > 0.0) {
                return Err(WorldError::Invalid(format!(
                    "fixture {} has a degenerate region",
                    fixture.scene_tag
                )));
            }
        }

        let start = self.agent_start.position();
        if !start.is_finite() || !self.agent_start.heading.is_finite() {
            return Err(WorldError::Invalid("agent_start is not finite".into()));
        }
        if let Some(obstacle) = self.obstacles.iter().find(|o| o.contains(start)) {
            return Err(WorldError::Geometry(format!(
                "agent_start ({}, {}) lies inside obstacle {}",
                start.x, start.y, obstacle.id
            )));
        }
        Ok(())
    }
}

/// Integrates unicycle motion for `dt` seconds. A move whose chord crosses an
/// obstacle edge stops [`SKIN_MARGIN`] short of the first contact.
pub fn step_agent(world: &WorldScenario, pose: Pose, control: Control, dt: f64) -> Pose {
    if !(dt > 0.0) {
        return pose;
    }
    let v = control.forward_speed.clamp(-MAX_FORWARD_SPEED, MAX_FORWARD_SPEED);
    let w = if control.turn_rate.is_finite() { control.turn_rate } else { 0.0 };
    let theta = pose.heading;
    let heading = theta + w * dt;

    let displacement = if w.abs() < 1e-12 {
        Vec2::from_angle(theta) * (v * dt)
    } else {
        Vec2::new(
            v / w * (heading.sin() - theta.sin()),
            v / w * (theta.cos() - heading.cos()),
        )
    };

    let start = pose.position();
    let chord = Segment::new(start, start + displacement);
    let length = chord.length();
    let mut end = chord.b;
    if length > 0.0 {
        let first_hit = world
            .obstacles
            .iter()
            .flat_map(|o| o.edges())
            .filter_map(|edge| segment_intersection_param(&chord, &edge))
            .fold(f64::INFINITY, f64::min);
        if first_hit.is_finite() {
            let travel = (first_hit * length - SKIN_MARGIN).max(0.0);
            end = start + displacement * (travel / length);
        }
    }
    Pose::new(end.x, end.y, heading)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthSensorConfig {
    /// Half-width of the central detection cone, radians.
    pub window_half_angle: f64,
    pub max_range: f64,
    pub sample_rate: f64,
    /// Odd so that one ray lies on the heading.
    pub ray_count: usize,
    /// Gaussian range noise (m); zero keeps readings exact.
    pub noise_std: f64,
}

impl Default for DepthSensorConfig {
    fn default() -> Self {
        Self {
            window_half_angle: 10f64.to_radians(),
            max_range: 25.0,
            sample_rate: 10.0,
            ray_count: 21,
            noise_std: 0.0,
        }
    }
}

impl DepthSensorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.window_half_angle > 0.0 && self.window_half_angle < PI / 2.0) {
            return Err(format!(
                "window_half_angle {} must lie in (0, π/2)",
                self.window_half_angle
            ));
        }
        if !(self.max_range > 10.0 && self.max_range.is_finite()) {
            return Err(format!("max_range {} must exceed 10 m", self.max_range));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(format!("sample_rate {} must be positive", self.sample_rate));
        }
        if self.ray_count < 3 || self.ray_count.is_multiple_of(2) {
            return Err(format!("ray_count {} must be odd and at least 3", self.ray_count));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(format!("noise_std {} must be non-negative", self.noise_std));
        }
        Ok(())
    }

    /// Ray bearings evenly spanning the window, heading-centred.
    pub fn ray_angles(&self, heading: f64) -> impl Iterator<Item = f64> + '_ {
        let n = self.ray_count.max(1);
        let step = if n > 1 {
            2.0 * self.window_half_angle / (n - 1) as f64
        } else {
            0.0
        };
        (0..n).map(move |i| heading - self.window_half_angle + step * i as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthReading {
    pub timestamp: f64,
    pub distance: Option<f64>,
    pub hit_obstacle_id: Option<String>,
}

/// Nearest obstacle distance across the detection cone.
pub fn sense_depth(world: &WorldScenario, pose: Pose, cfg: &DepthSensorConfig, now: f64) -> DepthReading {
    let origin = pose.position();
    let mut best: Option<(f64, &str)> = None;
    for angle in cfg.ray_angles(pose.heading) {
        let dir = Vec2::from_angle(angle);
        for obstacle in &world.obstacles {
            for edge in obstacle.edges() {
                let Some(t) = ray_segment_distance(origin, dir, &edge) else {
                    continue;
                };
                if t > cfg.max_range {
                    continue;
                }
                let closer = match best {
                    None => true,
                    Some((d, id)) => t < d || (t == d && obstacle.id.as_str() < id),
                };
                if closer {
                    best = Some((t, obstacle.id.as_str()));
                }
            }
        }
    }
    DepthReading {
        timestamp: now,
        distance: best.map(|(d, _)| d),
        hit_obstacle_id: best.map(|(_, id)| id.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapturedImage {
    pub id: String,
    pub scene_tag: String,
    pub navigable_content: bool,
    pub asset_path: Option<PathBuf>,
    /// Capture record in the session album; absent when the photo library
    /// could not be written.
    pub saved_path: Option<PathBuf>,
    pub timestamp: f64,
    pub pose_at_capture: Pose,
}

/// Fixture visible from `pose`: smallest containing region wins, then the
/// lexicographically smallest tag.
pub fn visible_fixture(world: &WorldScenario, pose: Pose) -> Option<&ImageFixture> {
    let p = pose.position();
    world
        .fixtures
        .iter()
        .filter(|f| f.region.contains(p))
        .filter(|f| f.heading_range.is_none_or(|arc| arc.contains(pose.heading)))
        .min_by(|l, r| {
            l.region
                .area()
                .total_cmp(&r.region.area())
                .then_with(|| l.scene_tag.cmp(&r.scene_tag))
        })
}

/// Takes a photo. With an album directory the capture record is written to
/// `<album>/<sim-time-ms>-<scene_tag>.capture`.
pub fn capture_image(
    world: &WorldScenario,
    pose: Pose,
    album: Option<&Path>,
    now: f64,
) -> Result<CapturedImage, WorldError> {
    let (scene_tag, navigable_content, asset_path) = match visible_fixture(world, pose) {
        Some(f) => (f.scene_tag.clone(), f.navigable_content, f.asset_path.clone()),
        None => (NO_FIXTURE_TAG.to_string(), false, None),
    };
    let millis = (now * 1000.0).round() as i64;
    let id = format!("{millis}-{scene_tag}");

    let mut image = CapturedImage {
        id: id.clone(),
        scene_tag,
        navigable_content,
        asset_path,
        saved_path: None,
        timestamp: now,
        pose_at_capture: pose,
    };

    if let Some(dir) = album {
        let path = dir.join(format!("{id}.capture"));
        let persist = |image: &CapturedImage| -> std::io::Result<()> {
            std::fs::create_dir_all(dir)?;
            let body = serde_json::to_string_pretty(image).map_err(std::io::Error::other)?;
            std::fs::write(&path, body + "\n")
        };
        image.saved_path = Some(path.clone());
        persist(&image).map_err(|source| WorldError::Persistence { path, source })?;
    }
    Ok(image)
}
