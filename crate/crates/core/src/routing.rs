//! Walking-route planning on the scenario map graph, progress tracking and
//! turn-by-turn instruction text.

use crate::geometry::{signed_angle, Segment, Vec2};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouteError {
    #[error("destination not found: {0}")]
    UnknownDestination(String),
    #[error("no walking path from {from} to {to}")]
    Unreachable { from: String, to: String },
    #[error("invalid map: {0}")]
    InvalidMap(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapNode {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub name: String,
}

impl MapNode {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEdge {
    pub a: String,
    pub b: String,
    pub length: f64,
}

/// Undirected walking graph. Node ids order lexicographically; every
/// tie-break in this module uses that order.
#[derive(Debug, Clone)]
pub struct MapGraph {
    nodes: Vec<MapNode>,
    edges: Vec<MapEdge>,
    index: HashMap<String, usize>,
    poi_index: BTreeMap<String, String>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl MapGraph {
    /// Builds a graph. Edges given with `None` length use the Euclidean
    /// distance between their endpoints.
    pub fn new(
        nodes: Vec<MapNode>,
        edges: impl IntoIterator<Item = (String, String, Option<f64>)>,
    ) -> Result<Self, RouteError> {
        let mut index = HashMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if !(node.x.is_finite() && node.y.is_finite()) {
                return Err(RouteError::InvalidMap(format!(
                    "node {} has non-finite coordinates",
                    node.id
                )));
            }
            if index.insert(node.id.clone(), i).is_some() {
                return Err(RouteError::InvalidMap(format!("duplicate node id {}", node.id)));
            }
        }

        let mut adjacency = vec![Vec::new(); nodes.len()];
        let mut resolved = Vec::new();
        for (a, b, length) in edges {
            let ia = *index
                .get(&a)
                .ok_or_else(|| RouteError::InvalidMap(format!("edge endpoint {a} does not exist")))?;
            let ib = *index
                .get(&b)
                .ok_or_else(|| RouteError::InvalidMap(format!("edge endpoint {b} does not exist")))?;
            if ia == ib {
                return Err(RouteError::InvalidMap(format!("self-loop on {a}")));
            }
            let length =
                length.unwrap_or_else(|| nodes[ia].position().distance(nodes[ib].position()));
            if !(length.is_finite() && length > 0.0) {
                return Err(RouteError::InvalidMap(format!(
                    "edge {a}-{b} has non-positive length {length}"
                )));
            }
            adjacency[ia].push((ib, length));
            adjacency[ib].push((ia, length));
            resolved.push(MapEdge { a, b, length });
        }

        let mut poi_index = BTreeMap::new();
        let mut by_id: Vec<&MapNode> = nodes.iter().collect();
        by_id.sort_by(|l, r| l.id.cmp(&r.id));
        for node in by_id {
            poi_index
                .entry(node.name.to_lowercase())
                .or_insert_with(|| node.id.clone());
        }

        Ok(Self {
            nodes,
            edges: resolved,
            index,
            poi_index,
            adjacency,
        })
    }

    pub fn nodes(&self) -> &[MapNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[MapEdge] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&MapNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    /// Looks a destination up by node id, then by display name
    /// (case-insensitive).
    pub fn resolve(&self, destination: &str) -> Result<&MapNode, RouteError> {
        let key = destination.trim();
        if let Some(node) = self.node(key) {
            return Ok(node);
        }
        self.poi_index
            .get(&key.to_lowercase())
            .and_then(|id| self.node(id))
            .ok_or_else(|| RouteError::UnknownDestination(destination.to_string()))
    }

    /// Nearest node to `p`; equidistant candidates resolve to the lowest id.
    pub fn nearest_node(&self, p: Vec2) -> Option<&MapNode> {
        self.nodes.iter().min_by(|l, r| {
            let dl = l.position().distance(p);
            let dr = r.position().distance(p);
            dl.total_cmp(&dr).then_with(|| l.id.cmp(&r.id))
        })
    }

    /// Minimum-length node path between two node indices. Equal-length
    /// paths resolve to the lexicographically smallest id sequence.
    fn shortest_path(&self, from: usize, to: usize) -> Option<(f64, Vec<usize>)> {
        let n = self.nodes.len();
        let mut best: Vec<Option<(f64, Vec<usize>)>> = vec![None; n];
        let mut done = vec![false; n];
        best[from] = Some((0.0, vec![from]));

        loop {
            let mut pick: Option<usize> = None;
            for v in 0..n {
                if done[v] || best[v].is_none() {
                    continue;
                }
                pick = match pick {
                    None => Some(v),
                    Some(u) if self.label_less(best[v].as_ref()?, best[u].as_ref()?) => Some(v),
                    keep => keep,
                };
            }
            let u = pick?;
            done[u] = true;
            if u == to {
                return best[u].take();
            }
            let (du, pu) = best[u].clone()?;
            for &(v, w) in &self.adjacency[u] {
                if done[v] {
                    continue;
                }
                let mut path = pu.clone();
                path.push(v);
                let candidate = (du + w, path);
                let better = match &best[v] {
                    None => true,
                    Some(current) => self.label_less(&candidate, current),
                };
                if better {
                    best[v] = Some(candidate);
                }
            }
        }
    }

    fn label_less(&self, l: &(f64, Vec<usize>), r: &(f64, Vec<usize>)) -> bool {
        let tol = 1e-9 * l.0.abs().max(r.0.abs()).max(1.0);
        if (l.0 - r.0).abs() > tol {
            return l.0 < r.0;
        }
        let ids = |p: &Vec<usize>| p.iter().map(|&i| self.nodes[i].id.as_str()).collect::<Vec<_>>();
        ids(&l.1) < ids(&r.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnDirection {
    Left,
    Right,
    Straight,
    Arrive,
}

impl TurnDirection {
    /// Classifies the signed heading change (radians, counter-clockwise
    /// positive) at a junction.
    pub fn from_heading_change(delta: f64, straight_band: f64) -> Self {
        let delta = signed_angle(delta);
        if delta.abs() <= straight_band {
            TurnDirection::Straight
        } else if delta > 0.0 {
            TurnDirection::Left
        } else {
            TurnDirection::Right
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavStep {
    pub from_node: String,
    pub to_node: String,
    pub length: f64,
    pub turn_direction: TurnDirection,
    /// Place the traveller heads toward after the manoeuvre at `to_node`;
    /// the destination name on the final step.
    pub toward_name: String,
    pub instruction_text: String,
    pub waypoint: Vec2,
    pub start: Vec2,
}

impl NavStep {
    pub fn segment(&self) -> Segment {
        Segment::new(self.start, self.waypoint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub steps: Vec<NavStep>,
    pub total_length: f64,
    pub destination_name: String,
    pub destination_node: String,
}

impl Route {
    /// Length still to walk from the start of step `index` onward, excluding
    /// the step itself.
    pub fn length_after(&self, index: usize) -> f64 {
        self.steps.iter().skip(index + 1).map(|s| s.length).sum()
    }
}

/// ±20° band inside which a junction counts as "continue straight".
pub const STRAIGHT_BAND_DEG: f64 = 20.0;

/// Plans the shortest walking route from the node nearest `from` to
/// `destination` (node id or display name).
pub fn plan_route(map: &MapGraph, from: Vec2, destination: &str) -> Result<Route, RouteError> {
    let target = map.resolve(destination)?;
    let start = map
        .nearest_node(from)
        .ok_or_else(|| RouteError::InvalidMap("map has no nodes".into()))?;
    let (si, ti) = (map.index[&start.id], map.index[&target.id]);
    let destination_name = target.name.clone();

    if si == ti {
        let mut step = NavStep {
            from_node: start.id.clone(),
            to_node: start.id.clone(),
            length: 0.0,
            turn_direction: TurnDirection::Arrive,
            toward_name: destination_name.clone(),
            instruction_text: String::new(),
            waypoint: start.position(),
            start: start.position(),
        };
        step.instruction_text = instruction_for(&step, 0.0);
        return Ok(Route {
            steps: vec![step],
            total_length: 0.0,
            destination_name,
            destination_node: target.id.clone(),
        });
    }

    let (_, path) = map.shortest_path(si, ti).ok_or_else(|| RouteError::Unreachable {
        from: start.id.clone(),
        to: target.id.clone(),
    })?;

    let band = STRAIGHT_BAND_DEG.to_radians();
    let legs: Vec<(usize, usize, f64)> = path
        .windows(2)
        .map(|w| {
            let length = map.adjacency[w[0]]
                .iter()
                .filter(|(v, _)| *v == w[1])
                .map(|(_, l)| *l)
                .fold(f64::INFINITY, f64::min);
            (w[0], w[1], length)
        })
        .collect();

    let mut steps = Vec::with_capacity(legs.len());
    for (i, &(a, b, length)) in legs.iter().enumerate() {
        let (pa, pb) = (map.nodes[a].position(), map.nodes[b].position());
        let (turn_direction, toward_name) = match legs.get(i + 1) {
            None => (TurnDirection::Arrive, destination_name.clone()),
            Some(&(_, c, _)) => {
                let pc = map.nodes[c].position();
                let delta = (pc - pb).bearing() - (pb - pa).bearing();
                (
                    TurnDirection::from_heading_change(delta, band),
                    map.nodes[c].name.clone(),
                )
            }
        };
        let mut step = NavStep {
            from_node: map.nodes[a].id.clone(),
            to_node: map.nodes[b].id.clone(),
            length,
            turn_direction,
            toward_name,
            instruction_text: String::new(),
            waypoint: pb,
            start: pa,
        };
        step.instruction_text = instruction_for(&step, length);
        steps.push(step);
    }

    let total_length = steps.iter().map(|s| s.length).sum();
    Ok(Route {
        steps,
        total_length,
        destination_name,
        destination_node: target.id.clone(),
    })
}

/// Replans from the traveller's current position.
pub fn reroute(map: &MapGraph, from: Vec2, destination: &str) -> Result<Route, RouteError> {
    plan_route(map, from, destination)
}

fn rounded_meters(distance: f64) -> u64 {
    ((distance.max(0.0) / 5.0).round() * 5.0) as u64
}

/// Spoken instruction for `step` with `distance` meters left before the
/// manoeuvre. Distances round to the nearest 5 m.
pub fn instruction_for(step: &NavStep, distance: f64) -> String {
    let meters = rounded_meters(distance);
    match step.turn_direction {
        TurnDirection::Arrive => format!("You have arrived at {}", step.toward_name),
        TurnDirection::Straight => {
            format!("In {meters} meters, continue straight toward {}", step.toward_name)
        }
        TurnDirection::Left => format!("In {meters} meters, turn left toward {}", step.toward_name),
        TurnDirection::Right => {
            format!("In {meters} meters, turn right toward {}", step.toward_name)
        }
    }
}

/// Announcement text for a step while approaching its end. The final step
/// announces the destination ahead rather than arrival.
pub fn approach_text(step: &NavStep, distance: f64) -> String {
    match step.turn_direction {
        TurnDirection::Arrive => format!(
            "In {} meters, arrive at {}",
            rounded_meters(distance),
            step.toward_name
        ),
        _ => instruction_for(step, distance),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProgressThresholds {
    pub turn_alert: f64,
    pub waypoint_reached: f64,
    pub off_route: f64,
    pub arrival: f64,
    /// Minimum sim seconds between automatic reroutes.
    pub reroute_cooldown: f64,
}

impl Default for ProgressThresholds {
    fn default() -> Self {
        Self {
            turn_alert: 20.0,
            waypoint_reached: 5.0,
            off_route: 10.0,
            arrival: 5.0,
            reroute_cooldown: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Announcement {
    pub trigger_step_index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressUpdate {
    pub active_step_index: usize,
    pub distance_to_waypoint: f64,
    pub off_route: bool,
    pub arrived: bool,
    pub pending_announcements: Vec<Announcement>,
}

/// Follows the traveller along one route. Replace it on reroute.
#[derive(Debug, Clone)]
pub struct RouteTracker {
    route: Route,
    thresholds: ProgressThresholds,
    active: usize,
    announced: Vec<bool>,
    arrived: bool,
}

impl RouteTracker {
    pub fn new(route: Route, thresholds: ProgressThresholds) -> Self {
        assert!(!route.steps.is_empty(), "route must have at least one step");
        let announced = vec![false; route.steps.len()];
        Self {
            route,
            thresholds,
            active: 0,
            announced,
            arrived: false,
        }
    }

    pub fn route(&self) -> &Route {
        &self.route
    }

    pub fn active_step_index(&self) -> usize {
        self.active
    }

    pub fn active_step(&self) -> &NavStep {
        &self.route.steps[self.active]
    }

    pub fn arrived(&self) -> bool {
        self.arrived
    }

    /// Suppresses the approach announcement for a step, e.g. when the
    /// initial route instruction already covered it.
    pub fn mark_announced(&mut self, index: usize) {
        if let Some(flag) = self.announced.get_mut(index) {
            *flag = true;
        }
    }

    /// Distance from `pos` to the end of the route following the remaining
    /// steps.
    pub fn remaining_distance(&self, pos: Vec2) -> f64 {
        pos.distance(self.active_step().waypoint) + self.route.length_after(self.active)
    }

    pub fn advance(&mut self, pos: Vec2) -> ProgressUpdate {
        let last = self.route.steps.len() - 1;
        while self.active < last
            && pos.distance(self.route.steps[self.active].waypoint) <= self.thresholds.waypoint_reached
        {
            self.active += 1;
        }

        let step = &self.route.steps[self.active];
        let distance_to_waypoint = pos.distance(step.waypoint);
        if self.active == last && distance_to_waypoint <= self.thresholds.arrival {
            self.arrived = true;
        }

        let mut pending_announcements = Vec::new();
        if !self.arrived
            && !self.announced[self.active]
            && distance_to_waypoint <= self.thresholds.turn_alert
        {
            self.announced[self.active] = true;
            pending_announcements.push(Announcement {
                trigger_step_index: self.active,
                text: approach_text(step, distance_to_waypoint),
            });
        }

        let off_route = !self.arrived && step.segment().distance_to(pos) > self.thresholds.off_route;

        ProgressUpdate {
            active_step_index: self.active,
            distance_to_waypoint,
            off_route,
            arrived: self.arrived,
            pending_announcements,
        }
    }
}
