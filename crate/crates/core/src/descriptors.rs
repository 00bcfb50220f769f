//! Archive coordinates and fitness from an evaluation report.
//!
//! Descriptors are penalty ratios: each (scaled) mean penalty divided by the
//! sum of all of them, so they live on the probability simplex. Each ratio is
//! cut into ten bins. In `Cassie` mode there are five ratio channels plus a
//! binary "any pelvis collision" flag; in `Anymal` mode the mean body-contact
//! count is a sixth ratio channel and there is no flag.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::evaluation::{EvaluationReport, PENALTY_CHANNELS};

pub const BINS_PER_DIM: u8 = 10;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_LAMBDA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorMode {
    /// Five ratio descriptors plus a binary collision flag.
    #[default]
    Cassie,
    /// Six ratio descriptors (collision count joins the normalization).
    Anymal,
}

impl DescriptorMode {
    pub fn ratio_dims(self) -> usize {
        match self {
            DescriptorMode::Cassie => PENALTY_CHANNELS,
            DescriptorMode::Anymal => PENALTY_CHANNELS + 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DescriptorMode::Cassie => "cassie",
            DescriptorMode::Anymal => "anymal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DescriptorError {
    /// Every scaled penalty mean is zero: the terrain exposes no failure and
    /// has no defined ratios. Such candidates are never inserted.
    #[error("all penalty means are zero; ratios are undefined")]
    Degenerate,
    #[error("penalty mean {index} is invalid ({value})")]
    InvalidMean { index: usize, value: f64 },
    #[error("invalid penalty scale {index} = {value}; scales must be positive and finite")]
    InvalidScale { index: usize, value: f64 },
}

/// Per-channel multipliers applied to raw penalties before aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyScaling {
    /// One scale per raw penalty channel, in channel order.
    pub channels: [f64; PENALTY_CHANNELS],
    /// Scale of the body-contact count (only used in `Anymal` mode).
    #[serde(default = "one")]
    pub collision_count: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for PenaltyScaling {
    fn default() -> Self {
        Self::unit()
    }
}

impl PenaltyScaling {
    pub fn unit() -> Self {
        Self { channels: [1.0; PENALTY_CHANNELS], collision_count: 1.0 }
    }

    pub fn new(channels: [f64; PENALTY_CHANNELS], collision_count: f64) -> Result<Self, DescriptorError> {
        let s = Self { channels, collision_count };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DescriptorError> {
        for (index, &value) in self.channels.iter().chain([&self.collision_count]).enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(DescriptorError::InvalidScale { index, value });
            }
        }
        Ok(())
    }

    /// Scale `1 / median` per channel over a calibration sample of raw
    /// per-terrain means. Channels whose median is zero keep scale 1.
    ///
    /// `raw_means` rows are `[ang, lin_x, lin_y, contact, stumble, collision_count]`.
    pub fn calibrate(raw_means: &[[f64; PENALTY_CHANNELS + 1]]) -> Self {
        let mut scales = [1.0; PENALTY_CHANNELS + 1];
        if !raw_means.is_empty() {
            for (k, scale) in scales.iter_mut().enumerate() {
                let mut column: Vec<f64> = raw_means.iter().map(|r| r[k]).collect();
                let m = median(&mut column);
                if m.is_finite() && m > 0.0 {
                    *scale = 1.0 / m;
                }
            }
        }
        let mut channels = [1.0; PENALTY_CHANNELS];
        channels.copy_from_slice(&scales[..PENALTY_CHANNELS]);
        Self { channels, collision_count: scales[PENALTY_CHANNELS] }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Archive cell address.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DescriptorKey {
    pub bins: Vec<u8>,
    /// `Some` in `Cassie` mode, `None` in `Anymal` mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collision: Option<bool>,
}

impl DescriptorKey {
    pub fn is_valid_for(&self, mode: DescriptorMode) -> bool {
        self.bins.len() == mode.ratio_dims()
            && self.bins.iter().all(|&b| b < BINS_PER_DIM)
            && self.collision.is_some() == (mode == DescriptorMode::Cassie)
    }
}

/// `3-0-5-1-0-c1` style label (bins joined by `-`, then the collision flag).
impl fmt::Display for DescriptorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.bins.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{b}")?;
        }
        if let Some(c) = self.collision {
            write!(f, "-c{}", u8::from(c))?;
        }
        Ok(())
    }
}

/// Normalizes nonnegative channel means onto the simplex.
pub fn ratios_from_means(means: &[f64]) -> Result<Vec<f64>, DescriptorError> {
    for (index, &value) in means.iter().enumerate() {
        if !(value.is_finite() && value >= 0.0) {
            return Err(DescriptorError::InvalidMean { index, value });
        }
    }
    let total: f64 = means.iter().sum();
    if total <= 0.0 {
        return Err(DescriptorError::Degenerate);
    }
    Ok(means.iter().map(|m| m / total).collect())
}

/// Ratio descriptors of a report. The report's means are already scaled.
pub fn ratio_descriptors(
    report: &EvaluationReport,
    mode: DescriptorMode,
) -> Result<Vec<f64>, DescriptorError> {
    ratios_from_means(&report.channel_means(mode))
}

/// `min(9, floor(10 * r))` with negative inputs landing in bin 0.
pub fn bin_index(ratio: f64) -> u8 {
    let b = math::floor(ratio * f64::from(BINS_PER_DIM));
    if b.is_nan() || b <= 0.0 {
        0
    } else if b >= f64::from(BINS_PER_DIM - 1) {
        BINS_PER_DIM - 1
    } else {
        b as u8
    }
}

pub fn bin(ratios: &[f64], collision: Option<bool>) -> DescriptorKey {
    DescriptorKey { bins: ratios.iter().map(|&r| bin_index(r)).collect(), collision }
}

/// Full report -> key path.
pub fn descriptor_key(
    report: &EvaluationReport,
    mode: DescriptorMode,
) -> Result<DescriptorKey, DescriptorError> {
    let ratios = ratio_descriptors(report, mode)?;
    let flag = match mode {
        DescriptorMode::Cassie => Some(report.any_collision),
        DescriptorMode::Anymal => None,
    };
    Ok(bin(&ratios, flag))
}

/// Fitness with its terms kept for diagnostics. Only `value` drives search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub value: f64,
    pub mean_term: f64,
    pub std_term: f64,
    pub collision_term: f64,
}

impl Fitness {
    pub fn from_terms(mean_term: f64, std_term: f64, collision_term: f64, alpha: f64, lambda: f64) -> Self {
        Self {
            value: combine(mean_term, std_term, collision_term, alpha, lambda),
            mean_term,
            std_term,
            collision_term,
        }
    }

    /// True iff `value` is exactly what the stored terms give under `alpha`, `lambda`.
    pub fn is_consistent(&self, alpha: f64, lambda: f64) -> bool {
        self.value == combine(self.mean_term, self.std_term, self.collision_term, alpha, lambda)
    }
}

fn combine(mean_term: f64, std_term: f64, collision_term: f64, alpha: f64, lambda: f64) -> f64 {
    mean_term - alpha * std_term - lambda * collision_term
}

/// Sum of channel means, minus `alpha` times the sum of channel STDs, minus
/// `lambda` times the non-collision rate (zero when no episode collided).
pub fn fitness(report: &EvaluationReport, alpha: f64, lambda: f64, mode: DescriptorMode) -> Fitness {
    let mean_term: f64 = report.channel_means(mode).iter().sum();
    let std_term: f64 = report.channel_stds(mode).iter().sum();
    let collision_term = if report.any_collision { report.non_collision_rate } else { 0.0 };
    Fitness::from_terms(mean_term, std_term, collision_term, alpha, lambda)
}
