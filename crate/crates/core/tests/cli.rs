mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{data_dir, naive_energy, random_bits};
use hcvrp::qubo::QuboModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TINY: &str = "NAME : tiny-n3-k1
COMMENT : (No of trucks: 1)
TYPE : CVRP
DIMENSION : 3
EDGE_WEIGHT_TYPE : EUC_2D
CAPACITY : 10
NODE_COORD_SECTION
1 0 0
2 3 4
3 6 0
DEMAND_SECTION
1 0
2 1
3 1
DEPOT_SECTION
1
-1
EOF
";

fn hcvrp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcvrp"))
        .args(args)
        .env_remove("HCVRP_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn tiny(dir: &Path) -> PathBuf {
    let path = dir.join("tiny-n3-k1.vrp");
    std::fs::write(&path, TINY).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_instance_is_a_runtime_error() {
    let out = hcvrp(&["solve", "/nonexistent/A-n99-k9.vrp"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn bad_flags_exit_64() {
    let inst = data_dir().join("A-n32-k5.vrp");
    assert_eq!(hcvrp(&["solve", s(&inst), "--strategy", "h4s"]).status.code(), Some(64));
    assert_eq!(hcvrp(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(hcvrp(&["--help"]).status.code(), Some(0));
}

#[test]
fn solve_writes_report_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let inst = tiny(dir.path());
    let report = dir.path().join("r.json");
    let svg = dir.path().join("r.svg");
    let out = hcvrp(&["solve", s(&inst), "--reads", "50", "--sweeps", "500", "--out", s(&report), "--plot", s(&svg)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc["solution"]["cost"], 16);
    assert_eq!(doc["validation"]["feasible"], true);
    assert!(doc["timing"].is_object());
    let svg_text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(svg_text.matches("<path").count(), 1);

    let replot = hcvrp(&["plot", s(&report), s(&inst)]);
    assert_eq!(replot.status.code(), Some(0));
    assert_eq!(String::from_utf8(replot.stdout).unwrap().matches("<path").count(), 1);
}

#[test]
fn plot_rejects_unknown_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let inst = tiny(dir.path());
    let report = dir.path().join("bad.json");
    std::fs::write(&report, r#"{"solution": {"routes": [[1, 7]]}}"#).unwrap();
    assert_eq!(hcvrp(&["plot", s(&report), s(&inst)]).status.code(), Some(1));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let inst = tiny(dir.path());
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\nseed = 5\nreads = 30\nsweeps = 300\n").unwrap();
    let seed_of = |extra: &[&str]| {
        let mut args = vec!["solve", s(&inst), "--config", s(&cfg)];
        args.extend_from_slice(extra);
        let out = hcvrp(&args);
        assert_eq!(out.status.code(), Some(0));
        let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        doc["seed"].as_u64().unwrap()
    };
    assert_eq!(seed_of(&[]), 5);
    assert_eq!(seed_of(&["--seed", "9"]), 9);

    std::fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(hcvrp(&["solve", s(&inst), "--config", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn data_dir_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_hcvrp"))
        .args(["cluster", "A-n32-k5.vrp"])
        .env("HCVRP_DATA_DIR", data_dir())
        .current_dir(std::env::temp_dir())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["clusters"], 5);
    assert_eq!(doc["assignment"]["cluster_of"].as_array().unwrap().len(), 31);
}

#[test]
fn qubo_dump_of_tiny_tsp() {
    let dir = tempfile::tempdir().unwrap();
    let inst = tiny(dir.path());
    let out = hcvrp(&["qubo-dump", s(&inst), "--level", "tsp", "--weights", "uniform"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# label 0 edge 0 0 1"));
    let model = QuboModel::from_dump(&text).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("# label")).count(), model.num_vars());
    assert_eq!(model.to_dump(), text);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let bits = random_bits(&mut rng, model.num_vars());
        assert!((model.energy(&bits).unwrap() - naive_energy(&model, &bits)).abs() < 1e-9);
    }
}

#[test]
fn qubo_dump_cluster_out_of_range() {
    let inst = data_dir().join("A-n32-k5.vrp");
    let out = hcvrp(&["qubo-dump", s(&inst), "--level", "tsp", "--cluster", "99"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("out of range"));
}

#[test]
fn bench_over_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    tiny(dir.path());
    let refs = dir.path().join("refs.txt");
    std::fs::write(&refs, "tiny-n3-k1 16 1\n").unwrap();
    let jsonl = dir.path().join("records.jsonl");
    let out = hcvrp(&[
        "bench",
        s(dir.path()),
        "--reference",
        s(&refs),
        "--strategies",
        "h2s",
        "--seeds",
        "1,2",
        "--reads",
        "30",
        "--sweeps",
        "300",
        "--jsonl",
        s(&jsonl),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("tiny-n3-k1"));
    assert_eq!(std::fs::read_to_string(&jsonl).unwrap().lines().count(), 2);
}
