//! Full-scale acceptance checks, one PASS/FAIL line per criterion.
//!
//! The end-to-end runs (criteria 7 and 8) take most of the time: seven runs of
//! 200 iterations with 10 emitters of 20 candidates and 20 episodes each.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use terrain_qd::commands::{self, AblationOutcome};
use terrain_qd::io::{archive_json, read_archive, write_archive};
use terrain_qd::pool::default_workers;
use terrain_qd::RunConfig;
use terrain_qd_core::descriptors::{descriptor_key, fitness, ratio_descriptors, BINS_PER_DIM};
use terrain_qd_core::terrain::{height_at, GENOME_LEN};
use terrain_qd_core::{Archive, CmaEs, DescriptorKey, DescriptorMode, Elite, EpisodeResult, EvaluationReport, Fitness, InsertStatus, PenaltyScaling, TerrainGenome};

const ECHO: &str = env!("CARGO_BIN_EXE_terrain-qd-echo");
const BIN: &str = env!("CARGO_BIN_EXE_terrain-qd");

/// Raster cell size for the end-to-end runs.
const RUN_RESOLUTION_M: f64 = 0.1;
const RUN_BUDGET: u64 = 200;
const ABLATION_SEEDS: [u64; 3] = [1, 2, 3];

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// `"; <first failure>"`, or nothing when there were none.
fn first_failure(bad: &[String]) -> String {
    bad.first().map(|b| format!("; {b}")).unwrap_or_default()
}

fn out_root() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

// ---------------------------------------------------------------- criterion 1

const TABLE: [(f64, f64); 8] = [(6.0, 10.0), (2.0, 6.0), (0.5, 3.0), (0.5, 3.0), (1.0, 4.0), (1.0, 4.0), (-PI, PI), (-0.25, 0.25)];

/// Mixture height evaluated straight from the raw genome.
fn brute_force_height(genome: &[f64], x: f64, y: f64) -> f64 {
    let mut sum = 0.0;
    for block in genome.chunks(8) {
        let mut p = [0.0; 8];
        for k in 0..8 {
            let g = block[k].clamp(-1.0, 1.0);
            p[k] = TABLE[k].0 + (g + 1.0) * 0.5 * (TABLE[k].1 - TABLE[k].0);
        }
        let (dx, dy) = (x - p[0], y - p[1]);
        let (s, c) = p[6].sin_cos();
        let xr = c * dx - s * dy;
        let yr = s * dx + c * dy;
        let ex = (xr.abs() / p[2]).powf(2.0 * p[4]);
        let ey = (yr.abs() / p[3]).powf(2.0 * p[5]);
        sum += p[7] * (-ex).exp() * (-ey).exp();
    }
    sum
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let raw: Vec<f64> = (0..GENOME_LEN).map(|_| rng.random_range(-1.2..1.2)).collect();
        let comps = TerrainGenome::new(raw.clone()).unwrap().clip().unwrap().rescale().unwrap();
        for _ in 0..100 {
            let (x, y) = (rng.random_range(0.0..16.0), rng.random_range(0.0..8.0));
            worst = worst.max((height_at(&comps, x, y) - brute_force_height(&raw, x, y)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-12 && secs < 10.0, format!("max |error| {worst:.3e} over 10^5 points in {secs:.2} s"))
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut violations = 0usize;
    for _ in 0..100_000 {
        let raw: Vec<f64> = (0..GENOME_LEN).map(|_| rng.random_range(-3.0..3.0)).collect();
        let clipped = TerrainGenome::new(raw.clone()).unwrap().clip().unwrap();
        violations += raw.iter().zip(clipped.as_slice()).filter(|(r, c)| **c != r.clamp(-1.0, 1.0)).count();
        for c in clipped.rescale().unwrap() {
            let v = [c.mu_x, c.mu_y, c.sigma_x, c.sigma_y, c.p_x, c.p_y, c.theta, c.w];
            violations += v.iter().zip(TABLE).filter(|(v, (lo, hi))| !(**v >= *lo && **v <= *hi)).count();
        }
    }
    for (g, pick_max) in [(-1.0, false), (1.0, true)] {
        for c in TerrainGenome::new(vec![g; GENOME_LEN]).unwrap().rescale().unwrap() {
            let v = [c.mu_x, c.mu_y, c.sigma_x, c.sigma_y, c.p_x, c.p_y, c.theta, c.w];
            violations += v.iter().zip(TABLE).filter(|(v, (lo, hi))| **v != if pick_max { *hi } else { *lo }).count();
        }
    }
    check(violations == 0, format!("10^5 random genomes plus both boundaries, {violations} violations"))
}

// ---------------------------------------------------------------- criterion 3

fn random_report(rng: &mut ChaCha8Rng, scaling: &PenaltyScaling) -> EvaluationReport {
    let n = rng.random_range(1..=20);
    let episodes = (0..n)
        .map(|_| {
            let mut raw = [0.0; 5];
            for r in &mut raw {
                // Some channels are often exactly zero in practice.
                *r = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..30.0) };
            }
            EpisodeResult { raw_penalties: raw, collision: rng.random_bool(0.3), collision_count: rng.random_range(0..20), steps: 4000 }
        })
        .collect();
    EvaluationReport::from_episodes(episodes, scaling)
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut checked, mut degenerate, mut bad) = (0usize, 0usize, Vec::new());
    for i in 0..10_000 {
        let channels: [f64; 5] = std::array::from_fn(|_| rng.random_range(0.1..10.0));
        let count = rng.random_range(0.1..10.0);
        let scaling = PenaltyScaling::new(channels, count).unwrap();
        let report = random_report(&mut rng, &scaling);
        let c = rng.random_range(1e-3..1e3);
        let scaled = EvaluationReport::from_episodes(
            report.episodes.clone(),
            &PenaltyScaling::new(channels.map(|s| s * c), count * c).unwrap(),
        );
        for mode in [DescriptorMode::Cassie, DescriptorMode::Anymal] {
            let Ok(ratios) = ratio_descriptors(&report, mode) else {
                degenerate += 1;
                continue;
            };
            checked += 1;
            let sum: f64 = ratios.iter().sum();
            let key = descriptor_key(&report, mode).unwrap();
            if (sum - 1.0).abs() > 1e-9 || key.bins.iter().any(|&b| b >= BINS_PER_DIM) {
                bad.push(format!("report {i}: sum {sum}, bins {key}"));
            }
            if descriptor_key(&scaled, mode).unwrap() != key {
                bad.push(format!("report {i} ({}): key changed under scale {c}", mode.name()));
            }
        }
    }
    check(
        bad.is_empty(),
        format!("{checked} report/mode pairs checked, {degenerate} degenerate, {} failures{}", bad.len(), first_failure(&bad)),
    )
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4(archives: &[(String, Archive, f64, f64)]) -> Verdict {
    let mut elites = 0usize;
    let mut bad = Vec::new();
    for (name, archive, alpha, lambda) in archives {
        for e in archive.elites() {
            elites += 1;
            let recomputed = fitness(&e.report, *alpha, *lambda, archive.mode());
            let direct = e.fitness.mean_term - alpha * e.fitness.std_term - lambda * e.fitness.collision_term;
            if !e.fitness.is_consistent(*alpha, *lambda) || recomputed != e.fitness || direct != e.fitness.value {
                bad.push(format!("{name}: elite {}", e.key));
            }
        }
    }
    // Constructed reports: the collision term vanishes iff nothing collided.
    let mk = |flags: &[bool]| {
        let eps = flags
            .iter()
            .map(|&collision| EpisodeResult { raw_penalties: [1.0, 2.0, 0.5, 0.0, 0.1], collision, collision_count: 0, steps: 10 })
            .collect();
        EvaluationReport::from_episodes(eps, &PenaltyScaling::unit())
    };
    for (flags, want) in [(vec![false; 20], 0.0), (vec![true; 20], 0.0), ([vec![true; 5], vec![false; 15]].concat(), 0.75)] {
        let f = fitness(&mk(&flags), 1.0, 2.0, DescriptorMode::Cassie);
        if f.collision_term != want {
            bad.push(format!("constructed report: collision term {} != {want}", f.collision_term));
        }
    }
    check(
        bad.is_empty() && elites > 0,
        format!("{elites} elites across {} archives, 3 constructed reports, {} failures{}", archives.len(), bad.len(), first_failure(&bad)),
    )
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let mut summary = Vec::new();
    let mut ok = true;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let mut cma = CmaEs::new(&[0.5; 64], 0.3, 20);
        let (mut best, mut evals) = (f64::NEG_INFINITY, 0usize);
        while evals < 400_000 && best < -1e-8 {
            let xs = cma.ask(&mut rng).map_err(|e| e.to_string())?;
            let scores: Vec<f64> = xs.iter().map(|x| -x.iter().map(|v| v * v).sum::<f64>()).collect();
            evals += xs.len();
            best = scores.iter().copied().fold(best, f64::max);
            cma.tell(&xs, &scores).map_err(|e| e.to_string())?;
        }
        ok &= best >= -1e-8;
        summary.push(format!("seed {seed}: {best:.2e} after {evals}"));
    }
    let secs = start.elapsed().as_secs_f64();
    check(ok && secs < 120.0, format!("{} ({secs:.1} s)", summary.join(", ")))
}

// ---------------------------------------------------------------- criterion 6

fn plain_elite(key: DescriptorKey, f: f64) -> Elite {
    let report = EvaluationReport::from_episodes(
        vec![EpisodeResult { raw_penalties: [1.0, 0.5, 0.25, 0.0, 0.0], collision: false, collision_count: 0, steps: 1 }],
        &PenaltyScaling::unit(),
    );
    Elite { genome: TerrainGenome::zeros(), fitness: Fitness::from_terms(f, 0.0, 0.0, 1.0, 2.0), key, report, eval_seed: 0 }
}

fn random_key(rng: &mut ChaCha8Rng) -> DescriptorKey {
    DescriptorKey { bins: (0..5).map(|_| rng.random_range(0..3)).collect(), collision: Some(rng.random_bool(0.5)) }
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut bad = Vec::new();

    // Soft thresholds.
    let mut archive = Archive::new(DescriptorMode::Cassie, -20.0, 0.01).unwrap();
    let mut best: BTreeMap<DescriptorKey, f64> = BTreeMap::new();
    let mut size = 0;
    for op in 0..100_000 {
        let key = random_key(&mut rng);
        let f = rng.random_range(-30.0..30.0);
        let before = archive.threshold(&key);
        archive.try_insert(plain_elite(key.clone(), f));
        if archive.threshold(&key) < before {
            bad.push(format!("op {op}: threshold decreased"));
        }
        if f > before {
            let e = best.entry(key.clone()).or_insert(f);
            *e = e.max(f);
        }
        if archive.len() < size {
            bad.push(format!("op {op}: size decreased"));
        }
        size = archive.len();
        if let Some(&b) = best.get(&key) {
            if archive.get(&key).map(|c| c.elite.fitness.value) != Some(b) {
                bad.push(format!("op {op}: elite is not the best accepted fitness"));
            }
        }
    }
    if archive.len() != best.len() {
        bad.push("occupied cells differ from accepted keys".into());
    }

    // Plain MAP-Elites: QD score never drops.
    let mut me = Archive::new(DescriptorMode::Cassie, -20.0, 1.0).unwrap();
    let mut qd = 0.0;
    for op in 0..100_000 {
        let key = random_key(&mut rng);
        let out = me.try_insert(plain_elite(key, rng.random_range(-30.0..30.0)));
        let now = me.metrics(20.0).qd_score;
        if now < qd {
            bad.push(format!("eta = 1, op {op}: qd score fell from {qd} to {now}"));
        }
        if out.status == InsertStatus::ThresholdOnly {
            bad.push(format!("eta = 1, op {op}: threshold-only update"));
        }
        qd = now;
    }

    // Round trip through files.
    let dir = out_root().join("criterion6");
    for (name, a) in [("soft", &archive), ("empty", &Archive::new(DescriptorMode::Anymal, -20.0, 0.01).unwrap())] {
        let path = dir.join(format!("{name}.json"));
        write_archive(&path, a).map_err(|e| e.to_string())?;
        let back = read_archive(&path).map_err(|e| e.to_string())?;
        if &back != a || archive_json(&back) != std::fs::read_to_string(&path).unwrap() {
            bad.push(format!("{name} archive did not round-trip"));
        }
    }
    check(
        bad.is_empty(),
        format!(
            "2 x 10^5 insertions ({} soft cells, {} plain cells), final qd {qd:.1}, {} failures{}",
            archive.len(),
            me.len(),
            bad.len(),
            first_failure(&bad)
        ),
    )
}

// ------------------------------------------------------------ criteria 7 and 8

fn full_config(seed: u64, output: PathBuf) -> RunConfig {
    RunConfig { budget: RUN_BUDGET, emitters: 10, population: 20, episodes: 20, resolution_m: RUN_RESOLUTION_M, seed, output, ..RunConfig::default() }
}

fn ablations() -> Result<Vec<(u64, AblationOutcome)>, String> {
    let mut out = Vec::new();
    for seed in ABLATION_SEEDS {
        let cfg = full_config(seed, out_root().join(format!("ablation_seed{seed}")));
        eprintln!("acceptance: std ablation, seed {seed}");
        let outcome = commands::cmd_std_ablation(&cfg, default_workers(), true).map_err(|e| format!("seed {seed}: {e}"))?;
        out.push((seed, outcome));
    }
    Ok(out)
}

fn criterion_7(runs: &[(u64, AblationOutcome)]) -> Verdict {
    let (seed, ab) = &runs[0];
    let run = &ab.alpha1;
    let wall = run.wall_seconds.last().copied().unwrap_or(f64::NAN);
    let mode = run.archive.mode();
    let dominant: BTreeSet<usize> = run.archive.elites().map(|e| e.report.dominant_channel(mode)).collect();
    let qd: Vec<f64> = run.log.iter().map(|r| r.metrics.qd_score).collect();
    let smooth: Vec<f64> = qd.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    let monotone = smooth.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs());
    let size = run.archive.len();
    let early = qd.get(9).copied().unwrap_or(f64::NAN);
    let last = qd.last().copied().unwrap_or(f64::NAN);
    check(
        run.log.len() as u64 == RUN_BUDGET && wall < 1800.0 && size >= 50 && dominant.len() >= 3 && monotone && last > early,
        format!(
            "seed {seed}: {} iterations in {wall:.0} s, {size} cells, dominant channels {dominant:?}, qd score {early:.1} at 10 -> {last:.1} at {RUN_BUDGET}, smoothed curve non-decreasing: {monotone}",
            run.log.len()
        ),
    )
}

fn criterion_8(runs: &[(u64, AblationOutcome)]) -> Verdict {
    let mut wins = 0;
    let mut parts = Vec::new();
    for (seed, ab) in runs {
        let Some(row) = ab.rows.last().filter(|r| r.iteration == RUN_BUDGET) else {
            parts.push(format!("seed {seed}: no final snapshot"));
            continue;
        };
        if row.mean_std_alpha1 < row.mean_std_alpha0 {
            wins += 1;
        }
        parts.push(format!("seed {seed}: {:.3} vs {:.3}", row.mean_std_alpha1, row.mean_std_alpha0));
    }
    check(wins == runs.len() && wins == ABLATION_SEEDS.len(), format!("mean STD alpha=1 vs alpha=0 at iteration {RUN_BUDGET}: {} ({wins}/3)", parts.join(", ")))
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Verdict {
    let mut bytes = Vec::new();
    for name in ["a", "b"] {
        let cfg = RunConfig { budget: 20, ..full_config(9, out_root().join("determinism").join(name)) };
        let out = commands::cmd_run(&cfg, default_workers(), false).map_err(|e| e.to_string())?;
        bytes.push((std::fs::read(cfg.output.join(commands::ARCHIVE_FILE)).map_err(|e| e.to_string())?, out.archive.len()));
    }
    check(bytes[0] == bytes[1], format!("two 20-iteration runs, {} cells, {} archive bytes, identical: {}", bytes[0].1, bytes[0].0.len(), bytes[0] == bytes[1]))
}

// --------------------------------------------------------------- criterion 10

fn cli_run(name: &str, external: &str, extra: &[&str]) -> std::process::Output {
    let out = out_root().join("external").join(name);
    let mut args = vec!["run", "-q", "--budget", "5", "--resolution", "0.25", "--seed", "10", "-o", out.to_str().unwrap(), "--external", external];
    args.extend_from_slice(extra);
    Command::new(BIN).args(&args).output().expect("terrain-qd runs")
}

fn criterion_10() -> Verdict {
    let ok = cli_run("echo", ECHO, &[]);
    let metrics = std::fs::read_to_string(out_root().join("external/echo/metrics.csv")).unwrap_or_default();
    let completed = ok.status.success() && metrics.lines().count() == 6;

    let malformed = cli_run("malformed", &format!("{ECHO} --malformed"), &[]);
    let m_err = String::from_utf8_lossy(&malformed.stderr).trim().to_string();
    let malformed_ok = malformed.status.code() == Some(2) && m_err.contains("Protocol") && m_err.contains("`steps`");

    let hang = cli_run("hang", &format!("{ECHO} --hang"), &["--timeout", "1"]);
    let h_err = String::from_utf8_lossy(&hang.stderr).trim().to_string();
    let timeout_ok = hang.status.code() == Some(2) && h_err.contains("Timeout");

    check(
        completed && malformed_ok && timeout_ok,
        format!("5-iteration echo run completed: {completed}; malformed -> \"{m_err}\"; hang -> \"{h_err}\""),
    )
}

fn main() -> ExitCode {
    let mut verdicts: BTreeMap<u32, Verdict> = BTreeMap::new();
    let timed = |n: u32, f: &dyn Fn() -> Verdict| {
        let start = Instant::now();
        let v = f();
        eprintln!("acceptance: criterion {n} done in {:.1} s", start.elapsed().as_secs_f64());
        v
    };
    verdicts.insert(1, timed(1, &criterion_1));
    verdicts.insert(2, timed(2, &criterion_2));
    verdicts.insert(3, timed(3, &criterion_3));
    verdicts.insert(5, timed(5, &criterion_5));
    verdicts.insert(6, timed(6, &criterion_6));
    verdicts.insert(9, timed(9, &criterion_9));
    verdicts.insert(10, timed(10, &criterion_10));

    let start = Instant::now();
    match ablations() {
        Ok(runs) => {
            eprintln!("acceptance: ablation runs done in {:.1} s", start.elapsed().as_secs_f64());
            verdicts.insert(7, criterion_7(&runs));
            verdicts.insert(8, criterion_8(&runs));
            let archives: Vec<(String, Archive, f64, f64)> = runs
                .iter()
                .flat_map(|(seed, ab)| {
                    [(format!("seed {seed} alpha 1"), &ab.alpha1), (format!("seed {seed} alpha 0"), &ab.alpha0)]
                        .map(|(name, r)| (name, r.archive.clone(), r.config.alpha, r.config.lambda))
                })
                .collect();
            verdicts.insert(4, criterion_4(&archives));
        }
        Err(e) => {
            for n in [4, 7, 8] {
                verdicts.insert(n, Err(format!("runs failed: {e}")));
            }
        }
    }

    let mut failed = 0;
    for (n, v) in &verdicts {
        match v {
            Ok(d) => println!("criterion {n}: PASS ({d})"),
            Err(d) => {
                failed += 1;
                println!("criterion {n}: FAIL ({d})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
