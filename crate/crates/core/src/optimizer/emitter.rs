//! Improvement-ranked CMA-ES emitter.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cmaes::{CmaError, CmaEs};
use crate::archive::Archive;
use crate::seed;
use crate::terrain::{TerrainGenome, GENOME_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterConfig {
    pub population: usize,
    pub sigma0: f64,
    /// Consecutive iterations without a positive improvement before a restart.
    pub restart_patience: u32,
    /// Initial means are drawn from `U[-init_half_width, init_half_width]^64`.
    pub init_half_width: f64,
}

impl Default for EmitterConfig {
    fn default() -> Self {
        Self { population: 20, sigma0: 0.5, restart_patience: 5, init_half_width: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmitterError {
    #[error("tell() without a matching ask()")]
    NoPendingBatch,
    #[error(transparent)]
    Cma(#[from] CmaError),
}

/// A sampled candidate: the raw CMA-ES sample drives the update, the clipped
/// genome is what gets evaluated and stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub sample: Vec<f64>,
    pub genome: TerrainGenome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestartReason {
    Stagnation,
    Numerical,
}

#[derive(Debug, Clone)]
pub struct Emitter {
    id: usize,
    config: EmitterConfig,
    cma: CmaEs,
    rng: ChaCha8Rng,
    restarts: u32,
    stale: u32,
    pending: Option<Vec<Vec<f64>>>,
}

fn clip_sample(sample: &[f64]) -> TerrainGenome {
    let clipped: Vec<f64> = sample
        .iter()
        .map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) })
        .collect();
    TerrainGenome::new(clipped).expect("sample has genome length")
}

impl Emitter {
    pub fn new(id: usize, config: EmitterConfig, master_seed: u64) -> Self {
        assert!(config.population >= 2, "population must be at least 2");
        let mut rng = seed::rng(seed::derive(&[master_seed, 0x656d_6974, id as u64]));
        let w = config.init_half_width;
        let mean: Vec<f64> = (0..GENOME_LEN).map(|_| rng.random_range(-w..=w)).collect();
        Self {
            id,
            cma: CmaEs::new(&mean, config.sigma0, config.population),
            config,
            rng,
            restarts: 0,
            stale: 0,
            pending: None,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn restarts(&self) -> u32 {
        self.restarts
    }

    pub fn population(&self) -> usize {
        self.config.population
    }

    pub fn cma(&self) -> &CmaEs {
        &self.cma
    }

    /// Samples `population` candidates. Clipping happens after sampling.
    pub fn ask(&mut self) -> Vec<Candidate> {
        let samples = match self.cma.ask(&mut self.rng) {
            Ok(s) => s,
            Err(_) => {
                self.restart_fresh();
                self.cma.ask(&mut self.rng).expect("fresh distribution samples")
            }
        };
        let out = samples
            .iter()
            .map(|s| Candidate { sample: s.clone(), genome: clip_sample(s) })
            .collect();
        self.pending = Some(samples);
        out
    }

    /// Ranks the last batch by archive improvement and updates the search
    /// distribution. Restarts from a random elite after `restart_patience`
    /// iterations without any positive improvement, or on numerical failure.
    pub fn tell(&mut self, improvements: &[f64], archive: &Archive) -> Result<Option<RestartReason>, EmitterError> {
        let samples = self.pending.take().ok_or(EmitterError::NoPendingBatch)?;
        if improvements.len() != samples.len() {
            let err = CmaError::Mismatch {
                expected: samples.len(),
                samples: samples.len(),
                scores: improvements.len(),
            };
            self.pending = Some(samples);
            return Err(err.into());
        }
        if improvements.iter().any(|&v| v > 0.0) {
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        let numerical = self.cma.tell(&samples, improvements).is_err() || self.cma.is_degenerate();
        let reason = if numerical {
            Some(RestartReason::Numerical)
        } else if self.stale >= self.config.restart_patience {
            Some(RestartReason::Stagnation)
        } else {
            None
        };
        if reason.is_some() {
            self.restart(archive);
        }
        Ok(reason)
    }

    /// New distribution centered on a uniformly chosen elite, or on a uniform
    /// random point when the archive is empty.
    pub fn restart(&mut self, archive: &Archive) {
        let mean: Vec<f64> = if archive.is_empty() {
            (0..GENOME_LEN).map(|_| self.rng.random_range(-1.0..=1.0)).collect()
        } else {
            let pick = self.rng.random_range(0..archive.len());
            archive.nth_elite(pick).expect("index in range").genome.as_slice().to_vec()
        };
        self.reset(&mean);
    }

    fn restart_fresh(&mut self) {
        let mean: Vec<f64> = (0..GENOME_LEN).map(|_| self.rng.random_range(-1.0..=1.0)).collect();
        self.reset(&mean);
    }

    fn reset(&mut self, mean: &[f64]) {
        self.cma = CmaEs::new(mean, self.config.sigma0, self.config.population);
        self.restarts += 1;
        self.stale = 0;
        self.pending = None;
    }
}
