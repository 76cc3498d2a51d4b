mod common;

use common::{campus_walk, run_cli, Case};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn write(dir: &std::path::Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn route_on_a_line_map() {
    let dir = tempfile::tempdir().unwrap();
    let map = write(
        dir.path(),
        "line.json",
        r#"{"nodes": [{"id": "A", "x": 0, "y": 0, "name": "Alpha"},
                      {"id": "B", "x": 10, "y": 0, "name": "Bravo"},
                      {"id": "C", "x": 20, "y": 0, "name": "Charlie"}],
            "edges": [{"a": "A", "b": "B"}, {"a": "B", "b": "C"}]}"#,
    );
    let out = run_cli(&["route", "--map", map.to_str().unwrap(), "--from", "A", "--to", "C"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    assert!(lines[0].contains("A -> B"));
    assert!(lines[1].contains("You have arrived at Charlie"));
    assert!(lines[2].starts_with("total 20.0 m"));
}

#[test]
fn route_with_unknown_name_fails() {
    let out = run_cli(&[
        "route",
        "--map",
        campus_walk().to_str().unwrap(),
        "--from",
        "Main Gate",
        "--to",
        "Observatory",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Observatory"));
}

#[test]
fn route_total_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 12;
        let mut edges = Vec::new();
        let mut adj = vec![Vec::new(); n];
        for i in 0..n {
            for j in i + 1..n {
                if j == i + 1 || rng.random_bool(0.25) {
                    let w: f64 = rng.random_range(1.0..40.0);
                    let w = (w * 10.0).round() / 10.0;
                    edges.push(format!(r#"{{"a": "n{i}", "b": "n{j}", "length": {w}}}"#));
                    adj[i].push((j, w));
                    adj[j].push((i, w));
                }
            }
        }
        let nodes: Vec<String> = (0..n)
            .map(|i| format!(r#"{{"id": "n{i}", "x": {}, "y": {}, "name": "Stop {i}"}}"#, i * 13 % 50, i * 29 % 70))
            .collect();
        let map = write(
            dir.path(),
            &format!("m{seed}.json"),
            &format!(r#"{{"nodes": [{}], "edges": [{}]}}"#, nodes.join(","), edges.join(",")),
        );
        fn dfs(u: usize, acc: f64, adj: &[Vec<(usize, f64)>], seen: &mut [bool], best: &mut f64) {
            if u == 11 {
                *best = best.min(acc);
                return;
            }
            for &(v, w) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    dfs(v, acc + w, adj, seen, best);
                    seen[v] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        let mut seen = vec![false; n];
        seen[0] = true;
        dfs(0, 0.0, &adj, &mut seen, &mut best);

        let out = run_cli(&["route", "--map", map.to_str().unwrap(), "--from", "n0", "--to", "Stop 11"]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let total = text.lines().last().unwrap();
        assert!(total.starts_with(&format!("total {best:.1} m")), "seed {seed}: {total} vs {best}");
    }
}

#[test]
fn campus_walk_run_ends_with_arrival() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let out = run_cli(&[
        "run",
        "--scenario",
        campus_walk().to_str().unwrap(),
        "--trace-out",
        trace.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(trace).unwrap();
    assert!(text.lines().last().unwrap().contains(r#""kind":"Arrived""#));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let bad_json = write(dir.path(), "bad.json", r#"{"schema_version": 1, "name": "x""#);
    let out = run_cli(&["run", "--scenario", bad_json.to_str().unwrap(), "--trace-out", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!trace.exists());

    let inside = write(
        dir.path(),
        "inside.json",
        r#"{"schema_version": 1, "name": "x",
            "map": {"nodes": [{"id": "A", "x": 0, "y": 0, "name": "A"}]},
            "obstacles": [{"id": "box", "vertices": [[-1, -1], [1, -1], [1, 1], [-1, 1]]}],
            "agent_start": {"x": 0, "y": 0}}"#,
    );
    let script = write(dir.path(), "s.jsonl", "{\"t\": 1, \"cmd\": \"end\"}\n");
    let out = run_cli(&[
        "run",
        "--scenario",
        inside.to_str().unwrap(),
        "--script",
        script.to_str().unwrap(),
        "--trace-out",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));

    let out = run_cli(&[
        "run",
        "--scenario",
        campus_walk().to_str().unwrap(),
        "--llm",
        "recorded",
        "--trace-out",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(5));

    let bad_script = write(dir.path(), "bad.jsonl", "{\"t\": 0, \"cmd\": \"jump\"}\n");
    let out = run_cli(&[
        "run",
        "--scenario",
        campus_walk().to_str().unwrap(),
        "--script",
        bad_script.to_str().unwrap(),
        "--trace-out",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    assert!(!trace.exists());
}

#[test]
fn remote_backend_without_endpoint_is_a_config_error() {
    let out = std::process::Command::new(common::bin())
        .args(["run", "--scenario", campus_walk().to_str().unwrap(), "--llm", "remote"])
        .env_remove("WAYFIND_LLM_BASE_URL")
        .env_remove("WAYFIND_LLM_MODEL")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn budget_and_timestep_flags_apply() {
    let case = Case::new(
        &std::fs::read_to_string(campus_walk()).unwrap().replace("\"campus-walk.replies.json\"", "null"),
        &std::fs::read_to_string(common::workspace_root().join("scenarios/campus-walk.replies.json")).unwrap(),
        &std::fs::read_to_string(common::workspace_root().join("scenarios/campus-walk.script.jsonl")).unwrap(),
    );
    let events = case.run(&["--budget", "12", "--timestep", "0.05"]).unwrap();
    for e in &events {
        if let wayfind::EventKind::LlmRequested { word_budget, .. } = e.kind {
            assert_eq!(word_budget, 12);
        }
        if let wayfind::EventKind::LlmResponded { word_count: Some(n), .. } = e.kind {
            assert!(n <= 12);
        }
    }
    let positions: Vec<f64> = common::named(&events, "PositionUpdated").iter().map(|e| e.t).collect();
    assert!((positions[1] - positions[0] - 0.05).abs() < 1e-9);
}

#[test]
fn recorded_run_replays_a_recorded_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("x.jsonl");
    let first = dir.path().join("a.jsonl");
    let second = dir.path().join("b.jsonl");
    let scenario = campus_walk();
    let out = run_cli(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--record",
        transcript.to_str().unwrap(),
        "--trace-out",
        first.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = run_cli(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--llm",
        "recorded",
        "--transcript",
        transcript.to_str().unwrap(),
        "--trace-out",
        second.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = std::fs::read_to_string(first).unwrap().replace(r#""backend":"mock""#, "");
    let b = std::fs::read_to_string(second).unwrap().replace(r#""backend":"recorded""#, "");
    assert_eq!(a, b);
}
