//! CMA-MAE: CMA-ES emitters feeding a soft-threshold archive.
//!
//! One iteration asks every emitter once, evaluates the whole batch, offers
//! each candidate to the archive in (emitter, candidate) order, then tells
//! every emitter the archive improvements of its own candidates.

pub mod cmaes;
pub mod emitter;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cmaes::CmaEs;
pub use emitter::{Candidate, Emitter, EmitterConfig, RestartReason};

use crate::archive::{
    Archive, ArchiveError, ArchiveMetrics, Elite, InsertStatus, DEFAULT_LEARNING_RATE, DEFAULT_MIN_F,
    DEFAULT_QD_OFFSET,
};
use crate::descriptors::{self, DescriptorMode, DEFAULT_ALPHA, DEFAULT_LAMBDA};
use crate::evaluation::{
    evaluate_terrain, EpisodeEvaluator, EvaluationConfig, EvaluationError, EvaluationReport,
};
use crate::seed;
use crate::terrain::{rasterize, TerrainError, TerrainGenome};

/// Parameters of a QD run that the core loop needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QdParams {
    pub mode: DescriptorMode,
    pub emitters: usize,
    pub emitter: EmitterConfig,
    pub alpha: f64,
    pub lambda: f64,
    pub offset: f64,
    pub min_f: f64,
    pub archive_learning_rate: f64,
    pub seed: u64,
}

impl Default for QdParams {
    fn default() -> Self {
        Self {
            mode: DescriptorMode::Cassie,
            emitters: 10,
            emitter: EmitterConfig::default(),
            alpha: DEFAULT_ALPHA,
            lambda: DEFAULT_LAMBDA,
            offset: DEFAULT_QD_OFFSET,
            min_f: DEFAULT_MIN_F,
            archive_learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
        }
    }
}

/// One terrain to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalJob {
    pub genome: TerrainGenome,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CandidateError {
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
}

/// Evaluates a batch of terrains; results align with `jobs`.
pub trait BatchEvaluator {
    fn evaluate_batch(&mut self, jobs: &[EvalJob]) -> Vec<Result<EvaluationReport, CandidateError>>;

    /// Episodes run per job (for rollout accounting).
    fn episodes_per_job(&self) -> u32;
}

/// Rasterize + evaluate one genome.
pub fn evaluate_genome<E: EpisodeEvaluator + ?Sized>(
    genome: &TerrainGenome,
    resolution_m: f64,
    evaluator: &mut E,
    config: &EvaluationConfig,
    seed: u64,
) -> Result<EvaluationReport, CandidateError> {
    let heightmap = rasterize(genome, resolution_m)?;
    Ok(evaluate_terrain(&heightmap, evaluator, config, seed)?)
}

/// Evaluates jobs one after another on a single evaluator.
#[derive(Debug, Clone)]
pub struct SerialEvaluator<E> {
    pub evaluator: E,
    pub resolution_m: f64,
    pub config: EvaluationConfig,
}

impl<E: EpisodeEvaluator> BatchEvaluator for SerialEvaluator<E> {
    fn evaluate_batch(&mut self, jobs: &[EvalJob]) -> Vec<Result<EvaluationReport, CandidateError>> {
        jobs.iter()
            .map(|job| evaluate_genome(&job.genome, self.resolution_m, &mut self.evaluator, &self.config, job.seed))
            .collect()
    }

    fn episodes_per_job(&self) -> u32 {
        self.config.episodes
    }
}

/// A candidate evaluation failed; the iteration was abandoned with the
/// archive untouched.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("iteration {iteration}, emitter {emitter}, candidate {candidate}: {source}")]
pub struct StepError {
    pub iteration: u64,
    pub emitter: usize,
    pub candidate: usize,
    #[source]
    pub source: CandidateError,
}

/// Per-iteration log row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub metrics: ArchiveMetrics,
    /// Candidate evaluations so far.
    pub evaluations: u64,
    /// Episode rollouts so far.
    pub rollouts: u64,
    pub new_cells: u32,
    pub improved_cells: u32,
    /// Candidates discarded this iteration (degenerate report).
    pub discarded: u32,
    pub restarts: u32,
}

/// Seed under which candidate `index` of `emitter` is evaluated in `iteration`.
pub fn candidate_seed(master: u64, iteration: u64, emitter: usize, index: usize) -> u64 {
    seed::derive(&[master, 0x6576_616c, iteration, emitter as u64, index as u64])
}

/// Multi-emitter CMA-MAE driver.
#[derive(Debug, Clone)]
pub struct Scheduler {
    params: QdParams,
    emitters: Vec<Emitter>,
    archive: Archive,
    iteration: u64,
    evaluations: u64,
    rollouts: u64,
}

impl Scheduler {
    pub fn new(params: QdParams) -> Result<Self, ArchiveError> {
        assert!(params.emitters >= 1, "need at least one emitter");
        let archive = Archive::new(params.mode, params.min_f, params.archive_learning_rate)?;
        let emitters = (0..params.emitters)
            .map(|id| Emitter::new(id, params.emitter, params.seed))
            .collect();
        Ok(Self { params, emitters, archive, iteration: 0, evaluations: 0, rollouts: 0 })
    }

    pub fn params(&self) -> &QdParams {
        &self.params
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn into_archive(self) -> Archive {
        self.archive
    }

    pub fn emitters(&self) -> &[Emitter] {
        &self.emitters
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Builds the elite for an evaluated candidate, or `None` when the report
    /// is degenerate (no failure to describe).
    pub fn make_elite(&self, genome: TerrainGenome, report: EvaluationReport, eval_seed: u64) -> Option<Elite> {
        let mode = self.params.mode;
        let key = descriptors::descriptor_key(&report, mode).ok()?;
        let fitness = descriptors::fitness(&report, self.params.alpha, self.params.lambda, mode);
        if !fitness.value.is_finite() {
            return None;
        }
        Some(Elite { genome, fitness, key, report, eval_seed })
    }

    /// Runs one ask-evaluate-insert-tell iteration. Any evaluation failure
    /// aborts the iteration before the archive is touched.
    pub fn step<B: BatchEvaluator + ?Sized>(&mut self, evaluator: &mut B) -> Result<IterationRecord, StepError> {
        self.iteration += 1;
        let iteration = self.iteration;
        let master = self.params.seed;

        let batches: Vec<Vec<Candidate>> = self.emitters.iter_mut().map(Emitter::ask).collect();
        let mut jobs = Vec::new();
        for (e, batch) in batches.iter().enumerate() {
            for (i, c) in batch.iter().enumerate() {
                jobs.push(EvalJob { genome: c.genome.clone(), seed: candidate_seed(master, iteration, e, i) });
            }
        }
        let results = evaluator.evaluate_batch(&jobs);
        assert_eq!(results.len(), jobs.len(), "batch evaluator must return one result per job");
        let mut reports = Vec::with_capacity(results.len());
        for (k, result) in results.into_iter().enumerate() {
            match result {
                Ok(report) => reports.push(report),
                Err(source) => {
                    let population = self.params.emitter.population;
                    return Err(StepError { iteration, emitter: k / population, candidate: k % population, source });
                }
            }
        }

        let mut record = IterationRecord {
            iteration,
            metrics: self.archive.metrics(self.params.offset),
            evaluations: 0,
            rollouts: 0,
            new_cells: 0,
            improved_cells: 0,
            discarded: 0,
            restarts: 0,
        };

        let mut improvements: Vec<Vec<f64>> = batches.iter().map(|b| Vec::with_capacity(b.len())).collect();
        let mut results = jobs.iter().zip(reports);
        for (e, batch) in batches.iter().enumerate() {
            for _ in batch {
                let (job, report) = results.next().expect("length checked");
                let elite = self.make_elite(job.genome.clone(), report, job.seed);
                let improvement = match elite {
                    Some(elite) => {
                        let out = self.archive.try_insert(elite);
                        match out.status {
                            InsertStatus::New => record.new_cells += 1,
                            InsertStatus::Improved => record.improved_cells += 1,
                            _ => {}
                        }
                        out.improvement
                    }
                    None => {
                        record.discarded += 1;
                        f64::NEG_INFINITY
                    }
                };
                improvements[e].push(improvement);
            }
        }

        for (emitter, imp) in self.emitters.iter_mut().zip(&improvements) {
            match emitter.tell(imp, &self.archive) {
                Ok(Some(_)) => record.restarts += 1,
                Ok(None) => {}
                Err(err) => panic!("emitter {} tell contract violated: {err}", emitter.id()),
            }
        }

        self.evaluations += jobs.len() as u64;
        self.rollouts += jobs.len() as u64 * u64::from(evaluator.episodes_per_job());
        record.evaluations = self.evaluations;
        record.rollouts = self.rollouts;
        record.metrics = self.archive.metrics(self.params.offset);
        Ok(record)
    }

    /// Runs `budget` iterations, calling `observer` after each one. Stops at
    /// the first failed iteration.
    pub fn run<B, F>(&mut self, budget: u64, evaluator: &mut B, mut observer: F) -> Result<Vec<IterationRecord>, StepError>
    where
        B: BatchEvaluator + ?Sized,
        F: FnMut(&IterationRecord, &Archive),
    {
        let mut log = Vec::with_capacity(budget as usize);
        for _ in 0..budget {
            let record = self.step(evaluator)?;
            observer(&record, &self.archive);
            log.push(record);
        }
        Ok(log)
    }
}
