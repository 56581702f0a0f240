use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hetpart_core::cost::{CostEntry, CostTable, Device, Profiles};
use hetpart_core::graph::{ComputeGraph, ComputeNode, NodeKind, Pass};
use serde_json::Value;
use tempfile::TempDir;

fn hetpart(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetpart"))
        .args(args)
        .current_dir(dir)
        .env_remove("HETPART_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const CARTPOLE: &str = r#"{"algorithm": "dqn", "batch_size": 64, "layers": [
  {"kind": "dense", "in": 4, "out": 64}, {"kind": "relu"},
  {"kind": "dense", "in": 64, "out": 64}, {"kind": "relu"},
  {"kind": "dense", "in": 64, "out": 2}]}"#;

const LUNAR: &str = r#"{"algorithm": "ddpg", "batch_size": 1, "layers": [
  {"kind": "dense", "in": 8, "out": 400}, {"kind": "relu"},
  {"kind": "dense", "in": 400, "out": 300}, {"kind": "relu"},
  {"kind": "dense", "in": 300, "out": 2}, {"kind": "tanh"}]}"#;

fn mm(id: usize) -> ComputeNode {
    ComputeNode {
        id,
        kind: NodeKind::Mm,
        pass: Pass::Forward,
        flops: 1,
        bytes_in: 0,
        bytes_out: 0,
        param_count: 0,
        label: format!("n{id}"),
        role: None,
    }
}

/// Two MM nodes in a chain with hand-set costs and resource needs.
fn chain_fixture(dir: &Path, aie_need_of_2: f64) -> (PathBuf, PathBuf) {
    let g = ComputeGraph::new(vec![mm(1), mm(2)], vec![(1, 2)], 1).unwrap();
    let mut t = CostTable::default();
    for (id, pl, aie, need) in [(1, 5.0, 8.0, 1.0), (2, 5.0, 2.0, aie_need_of_2)] {
        for (d, time, a) in [(Device::Pl, pl, 1.0), (Device::Aie, aie, need)] {
            t.insert(
                id,
                d,
                CostEntry {
                    precision: d.compute_precision(),
                    t_seconds: time,
                    a_units: a,
                },
            );
        }
    }
    let graph = write(dir, "chain.json", &serde_json::to_string(&g.to_document()).unwrap());
    let cost = write(dir, "chain_cost.json", &serde_json::to_string(&t.to_document()).unwrap());
    (graph, cost)
}

#[test]
fn help_exits_zero() {
    let dir = TempDir::new().unwrap();
    let o = hetpart(&["--help"], dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["profile", "partition", "sweep", "train", "verify"] {
        assert!(text.contains(cmd), "{text}");
    }
}

#[test]
fn profile_costs_every_mm_node_twice() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "cart.json", CARTPOLE);
    let o = hetpart(&["profile", "--graph", "cart.json", "--out", "o"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cost = read_json(&dir.path().join("o/cost.json"));
    let entries = cost["entries"].as_array().unwrap();
    let aie = entries.iter().filter(|e| e["device"] == "AIE").count();
    assert_eq!(aie, 9);
    // 9 MM nodes on both devices, 10 NonMM nodes on PL
    assert_eq!(entries.len(), 2 * 9 + 10);
    let csv = fs::read_to_string(dir.path().join("o/cost.csv")).unwrap();
    assert!(csv.starts_with("node_id,device,t_seconds,a_units\n"));
    let manifest = read_json(&dir.path().join("o/manifest.json"));
    assert_eq!(manifest["command"], "profile");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn profile_without_aie_is_a_schema_error() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "cart.json", CARTPOLE);
    let mut doc = Profiles::default().to_document();
    doc.devices.retain(|d| d.id != Device::Aie);
    write(dir.path(), "p.json", &serde_json::to_string(&doc).unwrap());
    let o = hetpart(&["profile", "--graph", "cart.json", "--profiles", "p.json"], dir.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("AIE"));
}

#[test]
fn malformed_json_reports_position() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "g.json", "{\n  \"algorithm\": \"dqn\",\n  \"batch_size\": \"x\"\n}");
    let o = hetpart(&["profile", "--graph", "g.json"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("g.json:3:"), "{}", stderr(&o));
}

#[test]
fn chain_partition_matches_hand_optimum() {
    let dir = TempDir::new().unwrap();
    let (g, c) = chain_fixture(dir.path(), 1.0);
    let args = ["partition", "--graph", g.to_str().unwrap(), "--cost", c.to_str().unwrap(), "--out", "o"];
    let o = hetpart(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = read_json(&dir.path().join("o/assignment.json"));
    assert_eq!(a["assignment"]["1"], "PL");
    assert_eq!(a["assignment"]["2"], "AIE");
    let summary = read_json(&dir.path().join("o/partition.json"));
    assert_eq!(summary["makespan_s"], 7.0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("(model)") && stdout.contains("(simulated)"));
    assert_eq!(
        fs::read_to_string(dir.path().join("o/schedule.csv")).unwrap(),
        "node_id,device,start_s,end_s\n1,PL,0,5\n2,AIE,5,7\n"
    );
}

#[test]
fn infeasible_capacity_exits_3_naming_the_node() {
    let dir = TempDir::new().unwrap();
    let (g, c) = chain_fixture(dir.path(), 1.0);
    // node 1 needs 1 unit everywhere; nothing fits
    write(dir.path(), "caps.json", r#"{"PL": 0.5, "AIE": 0.5}"#);
    let args = [
        "partition", "--graph", g.to_str().unwrap(), "--cost", c.to_str().unwrap(),
        "--capacities", "caps.json",
    ];
    let o = hetpart(&args, dir.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("node 1"), "{}", stderr(&o));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "cart.json", CARTPOLE);
    for out in ["a", "b"] {
        let o = hetpart(&["partition", "--graph", "cart.json", "--out", out], dir.path());
        assert_eq!(code(&o), 0);
    }
    let mut names: Vec<_> = fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for n in names {
        let a = fs::read(dir.path().join("a").join(&n)).unwrap();
        let b = fs::read(dir.path().join("b").join(&n)).unwrap();
        if n == "manifest.json" {
            // only the output directory differs
            let (mut ja, mut jb): (Value, Value) =
                (serde_json::from_slice(&a).unwrap(), serde_json::from_slice(&b).unwrap());
            ja["out_dir"] = Value::Null;
            jb["out_dir"] = Value::Null;
            assert_eq!(ja, jb);
        } else {
            assert_eq!(a, b, "{n:?}");
        }
    }
}

#[test]
fn lunar_sweep_shifts_towards_aie() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "lunar.json", LUNAR);
    let o = hetpart(
        &["sweep", "--graph", "lunar.json", "--batch-sizes", "256,512,1024", "--out", "o"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(&dir.path().join("o/sweep.json"));
    assert_eq!(report["monotone"], true);
    assert_eq!(report["strict_increase"], true);
    let csv = fs::read_to_string(dir.path().join("o/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn sweep_needs_two_batch_sizes() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "lunar.json", LUNAR);
    let o = hetpart(&["sweep", "--graph", "lunar.json", "--batch-sizes", "256"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn tiny_network_stays_on_pl() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "tiny.json",
        r#"{"algorithm": "dqn", "batch_size": 1, "layers": [
          {"kind": "dense", "in": 2, "out": 4}, {"kind": "relu"}, {"kind": "dense", "in": 4, "out": 2}]}"#,
    );
    let o = hetpart(&["sweep", "--graph", "tiny.json", "--batch-sizes", "1,8,64", "--out", "o"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(&dir.path().join("o/sweep.json"));
    for row in report["rows"].as_array().unwrap() {
        assert_eq!(row["aie_nodes"], 0);
    }
}

#[test]
fn corrupt_train_config_exits_2() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "a.json", r#"{"dqn": {"gamma": 2.0}}"#);
    write(dir.path(), "b.json", r#"{"dqn": {"gama": 0.9}}"#);
    write(dir.path(), "c.json", "{");
    for f in ["a.json", "b.json", "c.json"] {
        let o = hetpart(&["train", "--config", f, "--fp32"], dir.path());
        assert_eq!(code(&o), 2, "{f}: {}", stderr(&o));
    }
    let o = hetpart(&["train"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn short_training_writes_reports_and_reward_error() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "cfg.json", r#"{"dqn": {"episodes": 4, "warmup_steps": 64}}"#);
    let o = Command::new(env!("CARGO_BIN_EXE_hetpart"))
        .args(["train", "--config", "cfg.json", "--fp32", "--assignment", "partition", "--seeds", "2", "--out", "o"])
        .current_dir(dir.path())
        .env("HETPART_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("o");
    for name in ["fp32_seed11.csv", "fp32_seed12.json", "mixed_seed11.json", "mixed_seed12.csv", "assignment.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let summary = read_json(&out.join("summary.json"));
    assert!(summary["reward_error_percent"].is_number());
    assert_eq!(summary["runs"].as_array().unwrap().len(), 2);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["seeds"], serde_json::json!([11, 12]));
    let csv = fs::read_to_string(out.join("fp32_seed11.csv")).unwrap();
    assert!(csv.starts_with("episode,reward,moving_average\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn divergence_exits_4_with_diagnostics() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "cfg.json",
        r#"{"dqn": {"learning_rate": 1e30, "episodes": 300, "warmup_steps": 64}}"#,
    );
    let o = hetpart(&["train", "--config", "cfg.json", "--fp32", "--out", "o"], dir.path());
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(dir.path().join("o/fp32_seed0.diverged.json").exists());
}

#[test]
fn verify_suites() {
    let dir = TempDir::new().unwrap();
    let o = hetpart(&["verify", "--suite", "formats", "--out", "v"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let result: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(result["passed"], true);
    assert!(dir.path().join("v/verify-formats.json").exists());
    let o = hetpart(&["verify", "--suite", "small-ilp"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = hetpart(&["verify", "--suite", "gradients"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = hetpart(&["verify", "--suite", "everything"], dir.path());
    assert_eq!(code(&o), 2);
}
