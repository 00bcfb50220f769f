//! Quality-diversity search for terrains that break legged locomotion controllers.
//!
//! Terrains are mixtures of eight rotated 2D super-Gaussians encoded by a
//! 64-parameter genome in `[-1, 1]`. Each terrain is rasterized, handed to a
//! black-box episode evaluator for a batch of randomized rollouts, and the
//! resulting penalty statistics become archive coordinates (penalty ratios)
//! and a fitness that rewards hard *and* consistent failures. A CMA-MAE loop
//! (CMA-ES emitters ranked by archive improvement, soft per-cell acceptance
//! thresholds) fills the archive.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command line,
//! process-based evaluators and parallel evaluation live in the std companion
//! crate.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod archive;
pub mod descriptors;
pub mod evaluation;
mod math;
pub mod optimizer;
pub mod seed;
pub mod terrain;

pub use archive::{Archive, ArchiveMetrics, ArchiveSnapshot, Elite, InsertOutcome, InsertStatus};
pub use descriptors::{DescriptorKey, DescriptorMode, Fitness, PenaltyScaling};
pub use evaluation::{
    EpisodeEvaluator, EpisodeResult, EpisodeSpec, EvaluationConfig, EvaluationError,
    EvaluationReport, ProxyWalker,
};
pub use optimizer::{CmaEs, Emitter, QdParams, Scheduler};
pub use terrain::{Heightmap, SuperGaussianParams, TerrainGenome};
