//! Multi-threaded batch evaluation. Each worker owns one episode evaluator;
//! results are stored by job index, so output never depends on scheduling.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use terrain_qd_core::evaluation::{EpisodeEvaluator, EvaluationConfig, EvaluationReport};
use terrain_qd_core::optimizer::{evaluate_genome, BatchEvaluator, CandidateError, EvalJob};
use terrain_qd_core::{DescriptorMode, ProxyWalker};

use crate::config::{EvaluatorSpec, RunConfig};
use crate::error::CliError;
use crate::external::ExternalEvaluator;

pub type Worker = Box<dyn EpisodeEvaluator + Send>;

pub struct EvaluatorPool {
    workers: Vec<Worker>,
    pub resolution_m: f64,
    pub config: EvaluationConfig,
}

/// Logical cores, or 1 when unknown.
pub fn default_workers() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

impl EvaluatorPool {
    pub fn new(workers: Vec<Worker>, resolution_m: f64, config: EvaluationConfig) -> Self {
        assert!(!workers.is_empty(), "a pool needs at least one worker");
        Self { workers, resolution_m, config }
    }

    pub fn builtin(mode: DescriptorMode, workers: usize, resolution_m: f64, config: EvaluationConfig) -> Self {
        let workers = (0..workers.max(1)).map(|_| Box::new(ProxyWalker::with_mode(mode)) as Worker).collect();
        Self::new(workers, resolution_m, config)
    }

    /// Builds the pool a run config asks for. External evaluators get one
    /// process per worker.
    pub fn from_config(run: &RunConfig, workers: usize, config: EvaluationConfig) -> Result<Self, CliError> {
        match &run.evaluator {
            EvaluatorSpec::Builtin => Ok(Self::builtin(run.mode, workers, run.resolution_m, config)),
            EvaluatorSpec::External { command, timeout_s } => {
                let mut list: Vec<Worker> = Vec::new();
                for _ in 0..workers.max(1) {
                    let ev = ExternalEvaluator::spawn(command, std::time::Duration::from_secs_f64(*timeout_s))
                        .map_err(|source| CliError::Startup { command: command.join(" "), source })?;
                    list.push(Box::new(ev));
                }
                Ok(Self::new(list, run.resolution_m, config))
            }
        }
    }

    pub fn workers(&self) -> usize {
        self.workers.len()
    }

    /// Evaluates every job with `config`; results align with `jobs`.
    pub fn evaluate(
        &mut self,
        jobs: &[EvalJob],
        config: &EvaluationConfig,
    ) -> Vec<Result<EvaluationReport, CandidateError>> {
        let resolution = self.resolution_m;
        if self.workers.len() == 1 || jobs.len() <= 1 {
            let w = &mut self.workers[0];
            return jobs.iter().map(|j| evaluate_genome(&j.genome, resolution, &mut **w, config, j.seed)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<EvaluationReport, CandidateError>>>> =
            Mutex::new((0..jobs.len()).map(|_| None).collect());
        thread::scope(|scope| {
            for w in self.workers.iter_mut() {
                let (next, slots) = (&next, &slots);
                scope.spawn(move || loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    let Some(job) = jobs.get(k) else { break };
                    let r = evaluate_genome(&job.genome, resolution, &mut **w, config, job.seed);
                    slots.lock().expect("no worker panicked")[k] = Some(r);
                });
            }
        });
        slots.into_inner().expect("no worker panicked").into_iter().map(|r| r.expect("every job ran")).collect()
    }
}

impl BatchEvaluator for EvaluatorPool {
    fn evaluate_batch(&mut self, jobs: &[EvalJob]) -> Vec<Result<EvaluationReport, CandidateError>> {
        let config = self.config;
        self.evaluate(jobs, &config)
    }

    fn episodes_per_job(&self) -> u32 {
        self.config.episodes
    }
}
