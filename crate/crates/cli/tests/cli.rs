use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;
use terrain_qd::io::{parse_heightmap_csv, read_archive, write_archive};
use terrain_qd_core::descriptors::{descriptor_key, fitness, Fitness};
use terrain_qd_core::evaluation::EpisodeResult;
use terrain_qd_core::terrain::{rasterize, GENOME_LEN};
use terrain_qd_core::{Archive, DescriptorMode, Elite, EvaluationReport, PenaltyScaling, TerrainGenome};

const BIN: &str = env!("CARGO_BIN_EXE_terrain-qd");
const ECHO: &str = env!("CARGO_BIN_EXE_terrain-qd-echo");

fn cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A small, fast run config; `extra` fields override the defaults.
fn config(dir: &Path, name: &str, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "budget": 10,
        "emitters": 2,
        "population": 6,
        "episodes": 3,
        "horizon_s": 4.0,
        "resolution_m": 0.25,
        "calibration_terrains": 10,
        "snapshot_interval": 5,
        "seed": 7,
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn run(dir: &Path, name: &str, extra: Value, flags: &[&str]) -> (PathBuf, Output) {
    let cfg = config(dir, name, extra);
    let out_dir = dir.join(name);
    let mut args = vec!["run", "-q", "--config", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap()];
    args.extend_from_slice(flags);
    let out = cli(&args);
    (out_dir, out)
}

fn run_ok(dir: &Path, name: &str, extra: Value, flags: &[&str]) -> PathBuf {
    let (out_dir, out) = run(dir, name, extra, flags);
    assert!(out.status.success(), "run failed: {}", stderr(&out));
    out_dir
}

#[test]
fn run_writes_metrics_snapshots_and_a_consistent_archive() {
    let tmp = TempDir::new().unwrap();
    let dir = run_ok(tmp.path(), "r", json!({}), &[]);

    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "iteration,qd_score,archive_size,mean_fitness,evaluations,rollouts,wall_seconds");
    assert_eq!(lines.len(), 11);
    for (k, line) in lines[1..].iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], (k + 1).to_string());
        // Cumulative counts: 2 emitters x 6 candidates x 3 episodes per iteration.
        assert_eq!(cells[4], (12 * (k + 1)).to_string());
        assert_eq!(cells[5], (36 * (k + 1)).to_string());
    }
    // The later snapshot only adds cells or raises them.
    let early = read_archive(&dir.join("snapshots/archive_000005.json")).unwrap();
    let late = read_archive(&dir.join("snapshots/archive_000010.json")).unwrap();
    for (key, cell) in early.cells() {
        let later = late.get(key).expect("cells are never removed");
        assert!(later.threshold >= cell.threshold);
        assert!(later.elite.fitness.value >= cell.elite.fitness.value);
        if later.elite.fitness.value == cell.elite.fitness.value {
            assert_eq!(later.elite, cell.elite);
        }
    }
    assert!(late.len() >= early.len());

    let saved: Value = serde_json::from_str(&fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
    assert!(saved["scaling"]["channels"].is_array(), "scaling is resolved before the run starts");
    let scaling: PenaltyScaling = serde_json::from_value(saved["scaling"].clone()).unwrap();

    let archive = read_archive(&dir.join("archive.json")).unwrap();
    assert!(!archive.is_empty());
    let last_qd: f64 = lines[10].split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(archive.metrics(20.0).qd_score, last_qd);
    for e in archive.elites() {
        assert!(e.fitness.is_consistent(1.0, 2.0));
        assert_eq!(e.fitness, fitness(&e.report, 1.0, 2.0, DescriptorMode::Cassie));
        assert_eq!(descriptor_key(&e.report, DescriptorMode::Cassie).unwrap(), e.key);
        let rebuilt = EvaluationReport::from_episodes(e.report.episodes.clone(), &scaling);
        assert_eq!(rebuilt, e.report);
    }
    let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), archive.len() + 1);
}

#[test]
fn std_ablation_writes_one_row_per_snapshot() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "abl", json!({"budget": 4, "snapshot_interval": 2}));
    let out_dir = tmp.path().join("abl");
    let out = cli(&["std-ablation", "-q", "--config", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "iteration,mean_std_alpha1,mean_std_alpha0");
    assert!(lines[1].starts_with("2,") && lines[2].starts_with("4,"));
    assert_eq!(String::from_utf8_lossy(&out.stdout), table);
    for (name, alpha) in [("alpha1", 1.0), ("alpha0", 0.0)] {
        let archive = read_archive(&out_dir.join(name).join("archive.json")).unwrap();
        for e in archive.elites() {
            assert!(e.fitness.is_consistent(alpha, 2.0));
        }
        let saved: Value = serde_json::from_str(&fs::read_to_string(out_dir.join(name).join("config.json")).unwrap()).unwrap();
        assert_eq!(saved["alpha"], alpha);
    }
}

#[test]
fn anymal_mode_uses_six_bins_and_no_flag() {
    let tmp = TempDir::new().unwrap();
    let dir = run_ok(tmp.path(), "a", json!({"budget": 3}), &["--mode", "anymal"]);
    let archive = read_archive(&dir.join("archive.json")).unwrap();
    assert_eq!(archive.mode(), DescriptorMode::Anymal);
    assert!(!archive.is_empty());
    for e in archive.elites() {
        assert_eq!(e.key.bins.len(), 6);
        assert_eq!(e.key.collision, None);
    }
}

#[test]
fn identical_configs_give_identical_archives_for_any_worker_count() {
    let tmp = TempDir::new().unwrap();
    let a = run_ok(tmp.path(), "a", json!({"budget": 4}), &["--workers", "1"]);
    let b = run_ok(tmp.path(), "b", json!({"budget": 4}), &["--workers", "3"]);
    let c = run_ok(tmp.path(), "c", json!({"budget": 4, "seed": 8}), &["--workers", "1"]);
    let read = |d: &Path| fs::read(d.join("archive.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

fn hand_made_archive() -> Archive {
    let mut archive = Archive::new(DescriptorMode::Cassie, -20.0, 0.01).unwrap();
    for k in 0..3 {
        let mut raw = [0.1; 5];
        raw[k] = 5.0;
        let report = EvaluationReport::from_episodes(
            vec![EpisodeResult { raw_penalties: raw, collision: k == 1, collision_count: 0, steps: 100 }],
            &PenaltyScaling::unit(),
        );
        let genome = TerrainGenome::new((0..GENOME_LEN).map(|i| ((i * (k + 3)) % 17) as f64 / 8.5 - 1.0).collect()).unwrap();
        let key = descriptor_key(&report, DescriptorMode::Cassie).unwrap();
        let fit = fitness(&report, 1.0, 2.0, DescriptorMode::Cassie);
        archive.try_insert(Elite { genome, fitness: fit, key, report, eval_seed: k as u64 });
    }
    assert_eq!(archive.len(), 3);
    archive
}

#[test]
fn export_writes_heightmaps_and_tables() {
    let tmp = TempDir::new().unwrap();
    let archive = hand_made_archive();
    let path = tmp.path().join("archive.json");
    write_archive(&path, &archive).unwrap();
    let out = tmp.path().join("maps");
    let p = path.to_str().unwrap();
    let o = out.to_str().unwrap();

    let res = cli(&["export", p, "heightmaps", "-o", o, "--resolution", "0.2"]);
    assert!(res.status.success(), "{}", stderr(&res));
    let names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(names.iter().filter(|n| n.ends_with(".csv")).count(), 3);
    assert_eq!(names.iter().filter(|n| n.ends_with(".pgm")).count(), 3);
    for e in archive.elites() {
        let hm = rasterize(&e.genome, 0.2).unwrap();
        let text = fs::read_to_string(out.join(format!("terrain_{}.csv", e.key))).unwrap();
        let rows = parse_heightmap_csv(&text).unwrap();
        assert_eq!(rows.len(), 80);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), 40);
            assert_eq!(row.as_slice(), hm.row(i), "row {i} is bit-exact");
        }
        let pgm = fs::read(out.join(format!("terrain_{}.pgm", e.key))).unwrap();
        assert!(pgm.starts_with(b"P5\n40 80\n65535\n"));
        assert_eq!(pgm.len(), b"P5\n40 80\n65535\n".len() + 2 * 80 * 40);
    }

    let res = cli(&["export", p, "parallel-coords", "-o", o]);
    assert!(res.status.success(), "{}", stderr(&res));
    let table = fs::read_to_string(out.join("parallel_coords.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "ang_vel,lin_vel_x,lin_vel_y,contact,stumble,collision,fitness");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    for (row, e) in rows.iter().zip(archive.elites()) {
        assert!((row[..5].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(row[5], f64::from(u8::from(e.report.any_collision)));
        assert_eq!(row[6], e.fitness.value);
    }

    let res = cli(&["export", p, "summary", "-o", o]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap().lines().count(), 4);
}

#[test]
fn eval_reproduces_a_stored_elite() {
    let tmp = TempDir::new().unwrap();
    let dir = run_ok(tmp.path(), "r", json!({"budget": 2}), &[]);
    let archive = read_archive(&dir.join("archive.json")).unwrap();
    let elite = archive.elites().next().unwrap();
    let genome_path = tmp.path().join("g.json");
    fs::write(&genome_path, serde_json::to_string(&elite.genome).unwrap()).unwrap();

    let cfg = dir.join("config.json");
    let seed = elite.eval_seed.to_string();
    let out = cli(&["eval", genome_path.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--eval-seed", &seed]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["key"], elite.key.to_string());
    let fit: Fitness = serde_json::from_value(v["fitness"].clone()).unwrap();
    assert_eq!(fit, elite.fitness);
    let report: EvaluationReport = serde_json::from_value(v["report"].clone()).unwrap();
    assert_eq!(&report, &elite.report);
}

#[test]
fn eval_of_the_zero_genome() {
    let tmp = TempDir::new().unwrap();
    let genome_path = tmp.path().join("zero.json");
    fs::write(&genome_path, serde_json::to_string(&TerrainGenome::zeros()).unwrap()).unwrap();
    let cfg = config(tmp.path(), "c", json!({}));
    let out = cli(&["eval", genome_path.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["report"]["episodes"].as_array().unwrap().len(), 3);
    assert_eq!(v["seed"], 0);
    let fit: Fitness = serde_json::from_value(v["fitness"].clone()).unwrap();
    assert!(fit.value.is_finite() && fit.is_consistent(1.0, 2.0));
    let report: EvaluationReport = serde_json::from_value(v["report"].clone()).unwrap();
    assert_eq!(report.mean_penalties[3], 0.0, "contact");
    assert_eq!(report.mean_penalties[4], 0.0, "stumble");
    assert!(!report.any_collision);
    assert_eq!(report.non_collision_rate, 1.0);
}

#[test]
fn usage_and_config_errors_exit_with_1() {
    let tmp = TempDir::new().unwrap();
    let short = tmp.path().join("short.json");
    fs::write(&short, format!(r#"{{"params": [{}]}}"#, vec!["0.1"; 63].join(", "))).unwrap();
    let out = cli(&["eval", short.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("byte offset 1:"), "{}", stderr(&out));

    let broken = tmp.path().join("broken.json");
    fs::write(&broken, "{\"params\": [0.1,\n oops]}").unwrap();
    let out = cli(&["eval", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("byte offset 18"), "{}", stderr(&out));

    assert_eq!(cli(&["run", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(1));

    let (_, out) = run(tmp.path(), "bad", json!({"resolution_m": -0.5}), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("resolution_m"), "{}", stderr(&out));

    let (_, out) = run(tmp.path(), "unknown", json!({"budgett": 3}), &[]);
    assert_eq!(out.status.code(), Some(1));

    let out = cli(&["export", tmp.path().join("missing.json").to_str().unwrap(), "summary"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn external_echo_evaluator_runs_and_faults_are_reported() {
    let tmp = TempDir::new().unwrap();
    let dir = run_ok(tmp.path(), "echo", json!({"budget": 5}), &["--external", ECHO]);
    let archive = read_archive(&dir.join("archive.json")).unwrap();
    assert!(!archive.is_empty());
    assert_eq!(fs::read_to_string(dir.join("metrics.csv")).unwrap().lines().count(), 6);

    let malformed = format!("{ECHO} --malformed");
    let (_, out) = run(tmp.path(), "malformed", json!({"budget": 5}), &["--external", &malformed]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Protocol") && stderr(&out).contains("`steps`"), "{}", stderr(&out));

    let hang = format!("{ECHO} --hang");
    let (_, out) = run(tmp.path(), "hang", json!({"budget": 5}), &["--external", &hang, "--timeout", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Timeout"), "{}", stderr(&out));

    let dies = format!("{ECHO} --exit-after 4");
    let (_, out) = run(tmp.path(), "dies", json!({"budget": 5}), &["--external", &dies]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("episode 1") && stderr(&out).contains("exit status: 3"), "{}", stderr(&out));

    let (_, out) = run(tmp.path(), "missing", json!({"budget": 5}), &["--external", "/nonexistent/evaluator"]);
    assert_eq!(out.status.code(), Some(2));
}
