//! Subcommand implementations. Each returns its results so callers other
//! than `main` (tests, scripts) can inspect them.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use terrain_qd_core::descriptors::{descriptor_key, fitness};
use terrain_qd_core::optimizer::{EvalJob, IterationRecord};
use terrain_qd_core::terrain::rasterize;
use terrain_qd_core::{seed, Archive, EvaluationReport, Fitness, PenaltyScaling, Scheduler, TerrainGenome};

use crate::config::{RunConfig, ScalingSpec};
use crate::error::CliError;
use crate::io;
use crate::pool::EvaluatorPool;

const CALIBRATION_TAG: u64 = 0x6361_6c69;
/// Episodes per terrain when re-evaluating snapshots for the STD ablation.
pub const ABLATION_EPISODES: u32 = 40;

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ARCHIVE_FILE: &str = "archive.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PARALLEL_COORDS_FILE: &str = "parallel_coords.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";

pub fn snapshot_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(SNAPSHOT_DIR).join(format!("archive_{iteration:06}.json"))
}

/// A validated config with fixed scaling, plus the evaluator pool for it.
pub struct Prepared {
    pub config: RunConfig,
    pub pool: EvaluatorPool,
}

/// `1 / median` scaling per channel over `calibration_terrains` uniform
/// random genomes.
pub fn calibrate(pool: &mut EvaluatorPool, run: &RunConfig) -> Result<PenaltyScaling, CliError> {
    let mut rng = seed::rng(seed::derive(&[run.seed, CALIBRATION_TAG]));
    let jobs: Vec<EvalJob> = (0..run.calibration_terrains)
        .map(|k| EvalJob {
            genome: TerrainGenome::random(&mut rng),
            seed: seed::derive(&[run.seed, CALIBRATION_TAG, u64::from(k)]),
        })
        .collect();
    let unit = run.evaluation(PenaltyScaling::unit());
    let mut rows = Vec::with_capacity(jobs.len());
    for result in pool.evaluate(&jobs, &unit) {
        let r = result?;
        let m = r.mean_penalties;
        rows.push([m[0], m[1], m[2], m[3], m[4], r.mean_collision_count]);
    }
    Ok(PenaltyScaling::calibrate(&rows))
}

/// Validates `run`, starts its evaluators and resolves auto-calibration.
pub fn prepare(run: &RunConfig, workers: usize) -> Result<Prepared, CliError> {
    run.validate()?;
    let mut pool = EvaluatorPool::from_config(run, workers, run.evaluation(PenaltyScaling::unit()))?;
    let scaling = match run.fixed_scaling() {
        Some(s) => s,
        None => calibrate(&mut pool, run)?,
    };
    pool.config = run.evaluation(scaling);
    let mut config = run.clone();
    config.scaling = ScalingSpec::Fixed(scaling);
    Ok(Prepared { config, pool })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// The effective config, as persisted.
    pub config: RunConfig,
    pub archive: Archive,
    pub log: Vec<IterationRecord>,
    pub wall_seconds: Vec<f64>,
}

fn metrics_header() -> &'static str {
    "iteration,qd_score,archive_size,mean_fitness,evaluations,rollouts,wall_seconds\n"
}

fn metrics_row(r: &IterationRecord, wall: f64) -> String {
    format!(
        "{},{},{},{},{},{},{}\n",
        r.iteration,
        io::num(r.metrics.qd_score),
        r.metrics.archive_size,
        io::num(r.metrics.mean_fitness),
        r.evaluations,
        r.rollouts,
        io::num(wall)
    )
}

/// Runs the QD loop of a prepared config into `config.output`, calling
/// `on_snapshot` after each snapshot is written.
pub fn execute<F>(prepared: &mut Prepared, progress: bool, mut on_snapshot: F) -> Result<RunOutcome, CliError>
where
    F: FnMut(u64, &Archive, &mut EvaluatorPool) -> Result<(), CliError>,
{
    let cfg = prepared.config.clone();
    let dir = cfg.output.as_path();
    io::write_file(&dir.join(CONFIG_FILE), cfg.to_json())?;
    let metrics_path = dir.join(METRICS_FILE);
    let mut metrics = File::create(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
    metrics.write_all(metrics_header().as_bytes()).map_err(|e| CliError::io(&metrics_path, e))?;

    let mut scheduler =
        Scheduler::new(cfg.qd_params()).map_err(|e| CliError::config("archive_learning_rate", e.to_string()))?;
    let mut log = Vec::with_capacity(cfg.budget as usize);
    let mut wall_seconds = Vec::with_capacity(cfg.budget as usize);
    let report_every = (cfg.budget / 20).max(1);
    let start = Instant::now();
    for _ in 0..cfg.budget {
        let record = scheduler.step(&mut prepared.pool)?;
        let wall = start.elapsed().as_secs_f64();
        metrics
            .write_all(metrics_row(&record, wall).as_bytes())
            .map_err(|e| CliError::io(&metrics_path, e))?;
        let it = record.iteration;
        if it % cfg.snapshot_interval == 0 {
            io::write_archive(&snapshot_path(dir, it), scheduler.archive())?;
            on_snapshot(it, scheduler.archive(), &mut prepared.pool)?;
        }
        if progress && (it % report_every == 0 || it == cfg.budget) {
            let m = &record.metrics;
            eprintln!(
                "[{}] iteration {it}/{}: cells {}, qd score {:.2}, mean fitness {:.3}, {:.1} s",
                dir.display(),
                cfg.budget,
                m.archive_size,
                m.qd_score,
                m.mean_fitness,
                wall
            );
        }
        log.push(record);
        wall_seconds.push(wall);
    }
    let archive = scheduler.into_archive();
    io::write_archive(&dir.join(ARCHIVE_FILE), &archive)?;
    io::write_file(&dir.join(SUMMARY_FILE), io::summary_csv(&archive))?;
    Ok(RunOutcome { config: cfg, archive, log, wall_seconds })
}

pub fn cmd_run(run: &RunConfig, workers: usize, progress: bool) -> Result<RunOutcome, CliError> {
    let mut prepared = prepare(run, workers)?;
    execute(&mut prepared, progress, |_, _, _| Ok(()))
}

/// Mean over elites of the total per-terrain penalty STD, re-evaluated for
/// `episodes` episodes from each elite's stored seed. NaN for an empty
/// archive.
pub fn mean_total_std(archive: &Archive, pool: &mut EvaluatorPool, episodes: u32) -> Result<f64, CliError> {
    if archive.is_empty() {
        return Ok(f64::NAN);
    }
    let jobs: Vec<EvalJob> =
        archive.elites().map(|e| EvalJob { genome: e.genome.clone(), seed: e.eval_seed }).collect();
    let config = terrain_qd_core::EvaluationConfig { episodes, ..pool.config };
    let mut total = 0.0;
    for r in pool.evaluate(&jobs, &config) {
        total += r?.total_std(archive.mode());
    }
    Ok(total / jobs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AblationRow {
    pub iteration: u64,
    pub mean_std_alpha1: f64,
    pub mean_std_alpha0: f64,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    pub alpha1: RunOutcome,
    pub alpha0: RunOutcome,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("iteration,mean_std_alpha1,mean_std_alpha0\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.iteration, io::num(r.mean_std_alpha1), io::num(r.mean_std_alpha0)));
    }
    out
}

/// Two runs sharing seed and scaling, with `alpha = 1` and `alpha = 0`, in
/// `output/alpha1` and `output/alpha0`. At every snapshot each archived
/// terrain is re-evaluated over [`ABLATION_EPISODES`] episodes.
pub fn cmd_std_ablation(run: &RunConfig, workers: usize, progress: bool) -> Result<AblationOutcome, CliError> {
    let mut prepared = prepare(run, workers)?;
    let base = run.output.clone();
    let mut curves = Vec::new();
    let mut outcomes = Vec::new();
    for (alpha, name) in [(1.0, "alpha1"), (0.0, "alpha0")] {
        prepared.config.alpha = alpha;
        prepared.config.output = base.join(name);
        let mut curve = Vec::new();
        let outcome = execute(&mut prepared, progress, |it, archive, pool| {
            curve.push((it, mean_total_std(archive, pool, ABLATION_EPISODES)?));
            Ok(())
        })?;
        curves.push(curve);
        outcomes.push(outcome);
    }
    let rows: Vec<AblationRow> = curves[0]
        .iter()
        .zip(&curves[1])
        .map(|(&(iteration, a1), &(_, a0))| AblationRow { iteration, mean_std_alpha1: a1, mean_std_alpha0: a0 })
        .collect();
    io::write_file(&base.join(ABLATION_FILE), ablation_csv(&rows))?;
    let alpha0 = outcomes.pop().expect("two runs");
    let alpha1 = outcomes.pop().expect("two runs");
    Ok(AblationOutcome { rows, alpha1, alpha0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    Heightmaps,
    Summary,
    ParallelCoords,
}

/// Export file stem for an elite.
pub fn elite_stem(key: &terrain_qd_core::DescriptorKey) -> String {
    format!("terrain_{key}")
}

/// Writes the requested export into `out_dir`; returns the written paths.
pub fn cmd_export(archive_path: &Path, kind: ExportKind, out_dir: &Path, resolution_m: f64) -> Result<Vec<PathBuf>, CliError> {
    let archive = io::read_archive(archive_path)?;
    let mut written = Vec::new();
    match kind {
        ExportKind::Heightmaps => {
            terrain_qd_core::terrain::grid_shape(resolution_m)
                .map_err(|e| CliError::config("resolution_m", e.to_string()))?;
            for elite in archive.elites() {
                let hm = rasterize(&elite.genome, resolution_m)
                    .map_err(terrain_qd_core::optimizer::CandidateError::from)?;
                let stem = elite_stem(&elite.key);
                for (ext, bytes) in [("csv", io::heightmap_csv(&hm).into_bytes()), ("pgm", io::heightmap_pgm(&hm))] {
                    let path = out_dir.join(format!("{stem}.{ext}"));
                    io::write_file(&path, bytes)?;
                    written.push(path);
                }
            }
        }
        ExportKind::Summary => {
            let path = out_dir.join(SUMMARY_FILE);
            io::write_file(&path, io::summary_csv(&archive))?;
            written.push(path);
        }
        ExportKind::ParallelCoords => {
            let path = out_dir.join(PARALLEL_COORDS_FILE);
            io::write_file(&path, io::parallel_coords_csv(&archive))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Result of evaluating one genome file.
#[derive(Debug, Clone, Serialize)]
pub struct EvalOutput {
    /// `None` when every penalty is zero (nothing to describe).
    pub key: Option<String>,
    pub fitness: Fitness,
    pub seed: u64,
    pub scaling: PenaltyScaling,
    pub report: EvaluationReport,
}

/// Evaluates one genome with the run config's evaluator and scaling.
pub fn cmd_eval(genome_path: &Path, run: &RunConfig, eval_seed: u64, workers: usize) -> Result<EvalOutput, CliError> {
    let genome = io::read_genome(genome_path)?;
    let mut prepared = prepare(run, workers)?;
    let config = prepared.pool.config;
    let report = prepared
        .pool
        .evaluate(&[EvalJob { genome, seed: eval_seed }], &config)
        .pop()
        .expect("one job")?;
    let cfg = &prepared.config;
    Ok(EvalOutput {
        key: descriptor_key(&report, cfg.mode).ok().map(|k| k.to_string()),
        fitness: fitness(&report, cfg.alpha, cfg.lambda, cfg.mode),
        seed: eval_seed,
        scaling: config.scaling,
        report,
    })
}
