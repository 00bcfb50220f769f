//! Sparse elite archive with soft acceptance thresholds.
//!
//! Only occupied cells are stored (a `BTreeMap`, so iteration and snapshots
//! are ordered by key). Every cell carries an acceptance threshold that starts
//! at `min_f` and moves a fraction `learning_rate` of the way toward each
//! fitness that beats it. With `learning_rate = 1` this is plain MAP-Elites.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::{DescriptorKey, DescriptorMode, Fitness};
use crate::evaluation::EvaluationReport;
use crate::terrain::TerrainGenome;

pub const DEFAULT_MIN_F: f64 = -20.0;
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const DEFAULT_QD_OFFSET: f64 = 20.0;

pub const SNAPSHOT_FORMAT: &str = "terrain-qd-archive";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub genome: TerrainGenome,
    pub fitness: Fitness,
    pub key: DescriptorKey,
    pub report: EvaluationReport,
    /// Seed the report was produced with.
    pub eval_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub elite: Elite,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertStatus {
    /// Cell was empty.
    New,
    /// Beat the incumbent elite.
    Improved,
    /// Beat the threshold but not the incumbent; only the threshold moved.
    ThresholdOnly,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsertOutcome {
    /// `fitness - threshold` before the update.
    pub improvement: f64,
    pub status: InsertStatus,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArchiveError {
    #[error("archive learning rate must be in (0, 1], got {0}")]
    LearningRate(f64),
    #[error("min_f must be finite, got {0}")]
    MinF(f64),
    #[error("unsupported snapshot {0}")]
    Format(String),
    #[error("snapshot cell {index}: {reason}")]
    Cell { index: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    cells: BTreeMap<DescriptorKey, Cell>,
    min_f: f64,
    learning_rate: f64,
    mode: DescriptorMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMetrics {
    pub qd_score: f64,
    pub archive_size: usize,
    /// 0 when the archive is empty (see `empty`).
    pub mean_fitness: f64,
    pub offset: f64,
    pub empty: bool,
}

impl Archive {
    pub fn new(mode: DescriptorMode, min_f: f64, learning_rate: f64) -> Result<Self, ArchiveError> {
        if !(learning_rate > 0.0 && learning_rate <= 1.0) {
            return Err(ArchiveError::LearningRate(learning_rate));
        }
        if !min_f.is_finite() {
            return Err(ArchiveError::MinF(min_f));
        }
        Ok(Self { cells: BTreeMap::new(), min_f, learning_rate, mode })
    }

    pub fn mode(&self) -> DescriptorMode {
        self.mode
    }

    pub fn min_f(&self) -> f64 {
        self.min_f
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, key: &DescriptorKey) -> Option<&Cell> {
        self.cells.get(key)
    }

    pub fn threshold(&self, key: &DescriptorKey) -> f64 {
        self.cells.get(key).map_or(self.min_f, |c| c.threshold)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&DescriptorKey, &Cell)> {
        self.cells.iter()
    }

    pub fn elites(&self) -> impl Iterator<Item = &Elite> {
        self.cells.values().map(|c| &c.elite)
    }

    /// Elite at position `index` in key order.
    pub fn nth_elite(&self, index: usize) -> Option<&Elite> {
        self.cells.values().nth(index).map(|c| &c.elite)
    }

    /// Offers a candidate to its cell.
    ///
    /// Panics on a non-finite fitness.
    pub fn try_insert(&mut self, candidate: Elite) -> InsertOutcome {
        let f = candidate.fitness.value;
        assert!(f.is_finite(), "candidate fitness must be finite");
        let eta = self.learning_rate;
        match self.cells.get_mut(&candidate.key) {
            None => {
                let t = self.min_f;
                let improvement = f - t;
                if f <= t {
                    return InsertOutcome { improvement, status: InsertStatus::Rejected };
                }
                let threshold = (1.0 - eta) * t + eta * f;
                self.cells.insert(candidate.key.clone(), Cell { elite: candidate, threshold });
                InsertOutcome { improvement, status: InsertStatus::New }
            }
            Some(cell) => {
                let t = cell.threshold;
                let improvement = f - t;
                if f <= t {
                    return InsertOutcome { improvement, status: InsertStatus::Rejected };
                }
                // Never let rounding move the threshold backwards.
                cell.threshold = ((1.0 - eta) * t + eta * f).max(t);
                if f > cell.elite.fitness.value {
                    cell.elite = candidate;
                    InsertOutcome { improvement, status: InsertStatus::Improved }
                } else {
                    InsertOutcome { improvement, status: InsertStatus::ThresholdOnly }
                }
            }
        }
    }

    pub fn metrics(&self, offset: f64) -> ArchiveMetrics {
        let n = self.cells.len();
        let total: f64 = self.elites().map(|e| e.fitness.value).sum();
        let qd_score = self.elites().map(|e| e.fitness.value + offset).sum();
        ArchiveMetrics {
            qd_score,
            archive_size: n,
            mean_fitness: if n == 0 { 0.0 } else { total / n as f64 },
            offset,
            empty: n == 0,
        }
    }

    pub fn to_snapshot(&self) -> ArchiveSnapshot {
        ArchiveSnapshot {
            format: String::from(SNAPSHOT_FORMAT),
            version: SNAPSHOT_VERSION,
            mode: self.mode,
            min_f: self.min_f,
            learning_rate: self.learning_rate,
            cells: self.cells.values().cloned().collect(),
        }
    }

    /// Rebuilds an archive, checking the header and that every cell's key
    /// matches its elite and the mode.
    pub fn from_snapshot(snapshot: ArchiveSnapshot) -> Result<Self, ArchiveError> {
        if snapshot.format != SNAPSHOT_FORMAT || snapshot.version != SNAPSHOT_VERSION {
            return Err(ArchiveError::Format(alloc::format!(
                "{} v{}",
                snapshot.format, snapshot.version
            )));
        }
        let mut archive = Archive::new(snapshot.mode, snapshot.min_f, snapshot.learning_rate)?;
        for (index, cell) in snapshot.cells.into_iter().enumerate() {
            let key = cell.elite.key.clone();
            if !key.is_valid_for(snapshot.mode) {
                return Err(ArchiveError::Cell { index, reason: alloc::format!("key {key} invalid for mode") });
            }
            if !(cell.threshold >= snapshot.min_f) {
                return Err(ArchiveError::Cell { index, reason: String::from("threshold below min_f") });
            }
            if archive.cells.insert(key, cell).is_some() {
                return Err(ArchiveError::Cell { index, reason: String::from("duplicate key") });
            }
        }
        Ok(archive)
    }
}

/// Serialized form of an [`Archive`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveSnapshot {
    pub format: String,
    pub version: u32,
    pub mode: DescriptorMode,
    pub min_f: f64,
    pub learning_rate: f64,
    pub cells: Vec<Cell>,
}
