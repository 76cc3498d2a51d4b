use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use wayfind::geometry::Vec2;
use wayfind::routing::{plan_route, MapGraph, MapNode, ProgressThresholds, RouteTracker};

#[derive(Debug, Clone)]
struct Graph {
    nodes: Vec<(f64, f64)>,
    edges: Vec<(usize, usize, f64)>,
}

fn graph() -> impl Strategy<Value = Graph> {
    (2usize..=9).prop_flat_map(|n| {
        let nodes = proptest::collection::vec((0.0f64..200.0, 0.0f64..200.0), n);
        let tree = (1..n).map(|i| (0..i, 0.5f64..30.0)).collect::<Vec<_>>();
        let extra = proptest::collection::vec((0..n, 0..n, 0.5f64..30.0), 0..n * 2);
        (nodes, tree, extra).prop_map(|(nodes, tree, extra)| {
            let mut seen = BTreeSet::new();
            let mut edges = Vec::new();
            for (i, (j, w)) in tree.into_iter().enumerate() {
                seen.insert((j, i + 1));
                edges.push((j, i + 1, w));
            }
            for (a, b, w) in extra {
                let key = (a.min(b), a.max(b));
                if a != b && seen.insert(key) {
                    edges.push((key.0, key.1, w));
                }
            }
            Graph { nodes, edges }
        })
    })
}

fn build(g: &Graph) -> MapGraph {
    let nodes = g
        .nodes
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| MapNode {
            id: format!("n{i}"),
            x,
            y,
            name: format!("Stop {i}"),
        })
        .collect();
    let edges = g
        .edges
        .iter()
        .map(|&(a, b, w)| (format!("n{a}"), format!("n{b}"), Some(w)));
    MapGraph::new(nodes, edges).unwrap()
}

fn brute(g: &Graph, s: usize, t: usize) -> f64 {
    let mut adj: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for &(a, b, w) in &g.edges {
        adj.entry(a).or_default().push((b, w));
        adj.entry(b).or_default().push((a, w));
    }
    fn go(u: usize, t: usize, acc: f64, adj: &BTreeMap<usize, Vec<(usize, f64)>>, seen: &mut Vec<bool>) -> f64 {
        if u == t {
            return acc;
        }
        let mut best = f64::INFINITY;
        for &(v, w) in adj.get(&u).into_iter().flatten() {
            if !seen[v] {
                seen[v] = true;
                best = best.min(go(v, t, acc + w, adj, seen));
                seen[v] = false;
            }
        }
        best
    }
    let mut seen = vec![false; g.nodes.len()];
    seen[s] = true;
    go(s, t, 0.0, &adj, &mut seen)
}

/// Euclidean edge lengths so a walker's odometry matches the plan.
fn euclidean(g: &Graph) -> Graph {
    let mut g = g.clone();
    for e in &mut g.edges {
        let (a, b) = (g.nodes[e.0], g.nodes[e.1]);
        e.2 = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    }
    g
}

proptest! {
    #[test]
    fn optimal_against_brute_force(g in graph(), s in 0usize..100, t in 0usize..100) {
        let n = g.nodes.len();
        let (s, t) = (s % n, t % n);
        prop_assume!(s != t);
        let map = build(&g);
        let (x, y) = g.nodes[s];
        let route = plan_route(&map, Vec2::new(x, y), &format!("n{t}")).unwrap();
        let oracle = brute(&g, s, t);
        prop_assert!((route.total_length - oracle).abs() <= 1e-9, "{} vs {}", route.total_length, oracle);
    }

    #[test]
    fn walking_a_route(g in graph(), t in 0usize..100, wobble in 0.0f64..4.0, step in 0.5f64..2.0) {
        let g = euclidean(&g);
        let n = g.nodes.len();
        let t = t % n;
        prop_assume!(t != 0);
        let map = build(&g);
        let (x, y) = g.nodes[0];
        let route = plan_route(&map, Vec2::new(x, y), &format!("n{t}")).unwrap();
        let dest = route.steps.last().unwrap().waypoint;
        let mut tracker = RouteTracker::new(route.clone(), ProgressThresholds::default());
        let mut announced = BTreeMap::<usize, usize>::new();
        let mut last_index = 0;
        let mut arrived = false;
        let mut k = 0usize;
        for s in &route.steps {
            let len = s.start.distance(s.waypoint);
            let dir = if len > 0.0 { (s.waypoint - s.start) * (1.0 / len) } else { Vec2::new(1.0, 0.0) };
            let normal = Vec2::new(-dir.y, dir.x);
            let mut along = 0.0;
            while along <= len + 1e-9 && !arrived {
                k += 1;
                let side = if k.is_multiple_of(2) { wobble } else { -wobble };
                let p = s.start + dir * along + normal * side;
                let update = tracker.advance(p);
                prop_assert!(!update.off_route, "flagged off route at {:?}", p);
                prop_assert!(update.active_step_index >= last_index, "step index went back");
                last_index = update.active_step_index;
                for a in update.pending_announcements {
                    *announced.entry(a.trigger_step_index).or_default() += 1;
                }
                if update.arrived {
                    arrived = true;
                    prop_assert!(p.distance(dest) <= 5.0 + 1e-9, "arrived {} m away", p.distance(dest));
                }
                along += step;
            }
        }
        let final_update = tracker.advance(dest);
        prop_assert!(arrived || final_update.arrived);
        prop_assert!(announced.values().all(|&c| c <= 1), "repeated announcements {:?}", announced);
    }
}
