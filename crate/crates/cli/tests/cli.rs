use std::path::Path;
use std::process::{Command, Output};

use ncl_cli::commands::RunMetrics;
use ncl_cli::manifest::read_manifest;
use ncl_core::scenario::Blocker;
use ncl_core::{build_intersection, Method, SimConfig};

fn ncl_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncl-sim")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn metrics(dir: &Path) -> RunMetrics {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, cfg: &SimConfig) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, toml::to_string(cfg).unwrap()).unwrap();
    path
}

#[test]
fn simulate_writes_four_files_and_replays_from_its_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SimConfig {
        method: Method::Ncl,
        rop: 1.0,
        frames: 150,
        lane_volume: 300.0,
        seed: 2,
        ..SimConfig::default()
    };
    let conf = write_config(tmp.path(), &cfg);
    let a = tmp.path().join("a");
    let out = ncl_sim(&["simulate", "--config", p(&conf), "--out", p(&a)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trajectories.csv", "metrics.json", "pet.csv", "manifest.json"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    let m = read_manifest(&a).unwrap();
    assert_eq!(m.config, cfg);
    assert_eq!(m.status, "ok");
    assert_eq!(m.digests.len(), 3);
    assert!(m.mismatches(&a).is_empty());

    let b = tmp.path().join("b");
    let out = ncl_sim(&["simulate", "--config", p(&a.join("manifest.json")), "--out", p(&b)]);
    assert!(out.status.success());
    assert_eq!(read_manifest(&b).unwrap().digests, m.digests);
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), std::fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ncl_sim(&[
        "simulate", "--out", p(tmp.path()), "--method", "batch", "--rop", "0.4", "--volume", "150", "--seed", "7",
        "--frames", "40", "--composition", "0.2,0.3,0.5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let c = read_manifest(tmp.path()).unwrap().config;
    assert_eq!((c.method, c.rop, c.lane_volume, c.seed, c.frames), (Method::Batch, 0.4, 150.0, 7, 40));
    assert_eq!(c.hv_composition.conservative, 0.5);
}

#[test]
fn bad_configs_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "method = [\n").unwrap();
    let out = ncl_sim(&["simulate", "--config", p(&bad), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));

    std::fs::write(&bad, "rop = 0.5\nlane_volumes = 100.0\n").unwrap();
    let out = ncl_sim(&["simulate", "--config", p(&bad), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lane_volumes"));

    let out = ncl_sim(&["simulate", "--rop", "1.2", "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = ncl_sim(&["simulate", "--composition", "0.5,0.5,0.5", "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn blocked_scenario_exits_with_three_and_says_no_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = SimConfig {
        frames: 300,
        lane_volume: 400.0,
        seed: 3,
        ..SimConfig::default()
    };
    cfg.scenario.streams.retain(|s| s.id <= 1);
    let layout = build_intersection(&cfg.scenario).unwrap();
    let (at, _) = layout.path(0).pose_at(4.0);
    cfg.scenario.blockers.push(Blocker { x: at[0], y: at[1] });
    let conf = write_config(tmp.path(), &cfg);
    let dir = tmp.path().join("o");
    let out = ncl_sim(&["simulate", "--config", p(&conf), "--out", p(&dir)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no solution"));
    // The partial run is still on disk and consistent with its manifest.
    let m = read_manifest(&dir).unwrap();
    assert!(m.status.contains("no solution"));
    assert!(m.mismatches(&dir).is_empty());
}

#[test]
fn verify_catches_a_mutated_output() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(ncl_sim(&["simulate", "--out", p(tmp.path()), "--frames", "60"]).status.success());
    assert!(ncl_sim(&["verify", p(tmp.path())]).status.success());
    let f = tmp.path().join("trajectories.csv");
    let mut bytes = std::fs::read(&f).unwrap();
    let i = bytes.len() / 2;
    bytes[i] = if bytes[i] == b'1' { b'2' } else { b'1' };
    std::fs::write(&f, bytes).unwrap();
    let out = ncl_sim(&["verify", p(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("trajectories.csv"));
}

#[test]
fn metrics_recomputed_from_trajectories_match() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let out = ncl_sim(&["simulate", "--out", p(&run), "--frames", "300", "--rop", "0.5", "--seed", "4"]);
    assert!(out.status.success());
    let again = tmp.path().join("again");
    let out = ncl_sim(&["metrics", p(&run.join("trajectories.csv")), "--out", p(&again)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (a, b) = (metrics(&run), metrics(&again));
    assert!((a.avg_travel_speed.unwrap() - b.avg_travel_speed.unwrap()).abs() < 1e-5);
    assert!((a.total_delay - b.total_delay).abs() < 1e-3);
    assert_eq!(a.conflict_counts, b.conflict_counts);
    assert_eq!(std::fs::read(run.join("pet.csv")).unwrap(), std::fs::read(again.join("pet.csv")).unwrap());
}

fn sweep_rows(dir: &Path) -> Vec<csv::StringRecord> {
    let mut rd = csv::Reader::from_path(dir.join("sweep.csv")).unwrap();
    assert_eq!(
        rd.headers().unwrap().iter().collect::<Vec<_>>(),
        ["method", "volume", "rop", "seed_count", "avg_speed", "total_delay", "status"]
    );
    rd.records().map(|r| r.unwrap()).collect()
}

#[test]
fn sweep_counts_cells_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = |o: &Path| {
        ncl_sim(&[
            "sweep", "--out", p(o), "--method", "ncl,fcfs", "--volume", "100,200,300,400", "--seed", "0,1,2", "--frames",
            "30",
        ])
    };
    assert!(args(&a).status.success());
    let rows = sweep_rows(&a);
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| &r[3] == "3" && &r[6] == "ok"));
    let cells = std::fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(cells, 24);
    assert!(args(&b).status.success());
    assert_eq!(std::fs::read(a.join("sweep.csv")).unwrap(), std::fs::read(b.join("sweep.csv")).unwrap());
}

#[test]
fn single_cell_sweep_equals_simulate() {
    let tmp = tempfile::tempdir().unwrap();
    let sw = tmp.path().join("sw");
    let out = ncl_sim(&[
        "sweep", "--out", p(&sw), "--method", "cl", "--volume", "250", "--rop", "0.6", "--seed", "5", "--frames", "200",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sim = tmp.path().join("sim");
    let out = ncl_sim(&[
        "simulate", "--out", p(&sim), "--method", "cl", "--volume", "250", "--rop", "0.6", "--seed", "5", "--frames", "200",
    ]);
    assert!(out.status.success());
    let rows = sweep_rows(&sw);
    assert_eq!(rows.len(), 1);
    let m = metrics(&sim);
    assert_eq!(&rows[0][4], format!("{:.6}", m.avg_travel_speed.unwrap()));
    assert_eq!(&rows[0][5], format!("{:.6}", m.total_delay));
    let cell = sw.join("cl_v250_r0.6_s5");
    assert_eq!(std::fs::read(cell.join("trajectories.csv")).unwrap(), std::fs::read(sim.join("trajectories.csv")).unwrap());
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synthetic_calibration_reports_three_recoveries() {
    let tmp = tempfile::tempdir().unwrap();
    let out_path = tmp.path().join("c.json");
    let out = ncl_sim(&["calibrate", "--synthetic", "--scenarios", "60", "--clusters", "3", "--out", p(&out_path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out_path);
    assert_eq!(r["k"], 3);
    assert_eq!(r["clusters"].as_array().unwrap().len(), 3);
    let rec = r["recovery"].as_array().unwrap();
    assert_eq!(rec.len(), 3);
    for x in rec {
        assert!(x["cosine"].as_f64().unwrap() > 0.95, "{x}");
    }
    let trace = r["clusters"][0]["likelihood_trace"].as_array().unwrap();
    assert!(trace.last().unwrap().as_f64() >= trace[0].as_f64());
}

#[test]
fn calibration_from_a_trajectories_file() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    assert!(ncl_sim(&["simulate", "--out", p(&run), "--frames", "200", "--rop", "0.3", "--seed", "1"]).status.success());
    let traj = run.join("trajectories.csv");
    let one = tmp.path().join("one.json");
    let out = ncl_sim(&["calibrate", p(&traj), "--clusters", "1", "--epochs", "50", "--out", p(&one)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&one);
    assert_eq!(r["k"], 1);
    assert_eq!(r["clusters"].as_array().unwrap().len(), 1);
    assert!(r["clusters"][0]["weights"].is_object());
    assert!(r["recovery"].as_array().unwrap().is_empty());

    let elbow = tmp.path().join("elbow.json");
    assert!(ncl_sim(&["calibrate", p(&traj), "--epochs", "50", "--out", p(&elbow)]).status.success());
    let r = report(&elbow);
    assert!(!r["sse_curve"].as_array().unwrap().is_empty());
}

#[test]
fn empty_demo_files_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = ncl_sim(&["calibrate", p(&empty), "--out", p(&tmp.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("demo format error"));
    let header_only = tmp.path().join("h.csv");
    std::fs::write(&header_only, ncl_core::export::TRAJECTORY_COLUMNS.join(",") + "\n").unwrap();
    let out = ncl_sim(&["calibrate", p(&header_only), "--out", p(&tmp.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(2));
}
