//! Super-Gaussian mixture terrains.
//!
//! A genome is 64 numbers in `[-1, 1]`, eight blocks of eight, each block in
//! the order `(mu_x, mu_y, sigma_x, sigma_y, p_x, p_y, theta, w)`. Blocks are
//! rescaled affinely to physical ranges and summed into a height field over a
//! 16 m x 8 m patch (x is the direction of travel).

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

pub const GENOME_LEN: usize = 64;
pub const COMPONENTS: usize = 8;
pub const PARAMS_PER_COMPONENT: usize = 8;

pub const TERRAIN_LENGTH_M: f64 = 16.0;
pub const TERRAIN_WIDTH_M: f64 = 8.0;
pub const MAX_WEIGHT_M: f64 = 0.25;
/// `COMPONENTS * MAX_WEIGHT_M`: no mixture can exceed this height magnitude.
pub const MAX_ABS_HEIGHT_M: f64 = 2.0;
pub const DEFAULT_RESOLUTION_M: f64 = 0.05;

/// Physical `(min, max)` of each genome slot within a component block.
pub const PARAM_RANGES: [(f64, f64); PARAMS_PER_COMPONENT] = [
    (6.0, 10.0),                 // mu_x
    (2.0, 6.0),                  // mu_y
    (0.5, 3.0),                  // sigma_x
    (0.5, 3.0),                  // sigma_y
    (1.0, 4.0),                  // p_x
    (1.0, 4.0),                  // p_y
    (-PI, PI),                   // theta
    (-MAX_WEIGHT_M, MAX_WEIGHT_M), // w
];

// exp(-x) is exactly 0.0 in f64 for x above ~745.13.
/// A component is treated as zero where its exponent exceeds this value
/// (contribution below `0.25 * e^-40`, about 1e-18 m).
pub const CULL_EXPONENT: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TerrainError {
    #[error("genome must have {GENOME_LEN} entries, got {0}")]
    Length(usize),
    #[error("genome entry {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("genome entry {index} = {value} is outside [-1, 1]; clip first")]
    OutOfRange { index: usize, value: f64 },
    #[error("invalid raster resolution {0} m")]
    Resolution(f64),
    #[error("heightmap has {got} cells, expected {rows} x {cols}")]
    Shape { rows: usize, cols: usize, got: usize },
    #[error("heightmap cell {index} has invalid height {value}")]
    Height { index: usize, value: f64 },
}

/// One rescaled super-Gaussian bump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperGaussianParams {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub theta: f64,
    pub w: f64,
}

impl SuperGaussianParams {
    fn from_slots(v: [f64; PARAMS_PER_COMPONENT]) -> Self {
        Self {
            mu_x: v[0],
            mu_y: v[1],
            sigma_x: v[2],
            sigma_y: v[3],
            p_x: v[4],
            p_y: v[5],
            theta: v[6],
            w: v[7],
        }
    }

    pub fn within_bounds(&self) -> bool {
        let v = [
            self.mu_x, self.mu_y, self.sigma_x, self.sigma_y, self.p_x, self.p_y, self.theta,
            self.w,
        ];
        v.iter()
            .zip(PARAM_RANGES.iter())
            .all(|(&x, &(lo, hi))| x >= lo && x <= hi)
    }
}

/// The 64-parameter search-space point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GenomeRepr", into = "GenomeRepr")]
pub struct TerrainGenome {
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GenomeRepr {
    params: Vec<f64>,
}

impl TryFrom<GenomeRepr> for TerrainGenome {
    type Error = TerrainError;

    fn try_from(repr: GenomeRepr) -> Result<Self, Self::Error> {
        TerrainGenome::new(repr.params)
    }
}

impl From<TerrainGenome> for GenomeRepr {
    fn from(g: TerrainGenome) -> Self {
        GenomeRepr { params: g.params }
    }
}

impl TerrainGenome {
    /// Length is checked here; values are checked by [`clip`](Self::clip) and
    /// [`rescale`](Self::rescale).
    pub fn new(params: Vec<f64>) -> Result<Self, TerrainError> {
        if params.len() != GENOME_LEN {
            return Err(TerrainError::Length(params.len()));
        }
        Ok(Self { params })
    }

    pub fn zeros() -> Self {
        Self { params: alloc::vec![0.0; GENOME_LEN] }
    }

    /// Uniform draw from `[-1, 1]^64`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self { params: (0..GENOME_LEN).map(|_| rng.random_range(-1.0..=1.0)).collect() }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.params
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.params
    }

    /// Saturates every entry into `[-1, 1]`. Idempotent.
    pub fn clip(&self) -> Result<Self, TerrainError> {
        let params = self
            .params
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                if value.is_finite() {
                    Ok(value.clamp(-1.0, 1.0))
                } else {
                    Err(TerrainError::NonFinite { index, value })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { params })
    }

    pub fn is_clipped(&self) -> bool {
        self.params.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    /// Maps each slot affinely from `[-1, 1]` onto its physical range.
    pub fn rescale(&self) -> Result<[SuperGaussianParams; COMPONENTS], TerrainError> {
        for (index, &value) in self.params.iter().enumerate() {
            if !value.is_finite() {
                return Err(TerrainError::NonFinite { index, value });
            }
            if !(-1.0..=1.0).contains(&value) {
                return Err(TerrainError::OutOfRange { index, value });
            }
        }
        let mut out = [SuperGaussianParams::from_slots([0.0; PARAMS_PER_COMPONENT]); COMPONENTS];
        for (c, block) in self.params.chunks_exact(PARAMS_PER_COMPONENT).enumerate() {
            let mut slots = [0.0; PARAMS_PER_COMPONENT];
            for (k, (&g, &(lo, hi))) in block.iter().zip(PARAM_RANGES.iter()).enumerate() {
                slots[k] = lerp(lo, hi, 0.5 * (g + 1.0));
            }
            out[c] = SuperGaussianParams::from_slots(slots);
        }
        Ok(out)
    }
}

// Exact at both ends: t = 0 gives lo and t = 1 gives hi bit-for-bit.
fn lerp(lo: f64, hi: f64, t: f64) -> f64 {
    (1.0 - t) * lo + t * hi
}

/// A component with its rotation and reciprocals precomputed, for repeated
/// evaluation.
#[derive(Debug, Clone, Copy)]
struct Prepared {
    w: f64,
    mu_x: f64,
    mu_y: f64,
    inv_sigma_x: f64,
    inv_sigma_y: f64,
    two_px: f64,
    two_py: f64,
    cos: f64,
    sin: f64,
}

// (|r| / sigma)^(2p), via exp/ln.
#[inline]
fn shape_exponent(r: f64, inv_sigma: f64, two_p: f64) -> f64 {
    let u = r.abs() * inv_sigma;
    if u == 0.0 {
        0.0
    } else {
        math::exp(two_p * math::ln(u))
    }
}

impl Prepared {
    fn new(p: SuperGaussianParams) -> Self {
        Self {
            w: p.w,
            mu_x: p.mu_x,
            mu_y: p.mu_y,
            inv_sigma_x: 1.0 / p.sigma_x,
            inv_sigma_y: 1.0 / p.sigma_y,
            two_px: 2.0 * p.p_x,
            two_py: 2.0 * p.p_y,
            cos: math::cos(p.theta),
            sin: math::sin(p.theta),
        }
    }

    #[inline]
    fn eval(&self, x: f64, y: f64) -> f64 {
        if self.w == 0.0 {
            return 0.0;
        }
        let dx = x - self.mu_x;
        let dy = y - self.mu_y;
        let x_rot = self.cos * dx - self.sin * dy;
        let ax = shape_exponent(x_rot, self.inv_sigma_x, self.two_px);
        if ax > CULL_EXPONENT {
            return 0.0;
        }
        let y_rot = self.sin * dx + self.cos * dy;
        let ay = shape_exponent(y_rot, self.inv_sigma_y, self.two_py);
        if ay > CULL_EXPONENT {
            return 0.0;
        }
        self.w * math::exp(-(ax + ay))
    }
}

/// Height of the mixture at `(x, y)`. A component contributes exactly zero
/// where its exponent exceeds [`CULL_EXPONENT`].
pub fn height_at(components: &[SuperGaussianParams], x: f64, y: f64) -> f64 {
    components.iter().map(|&c| Prepared::new(c).eval(x, y)).sum()
}

/// Row-major height grid. Row `i` covers `x in [i*res, (i+1)*res)`, column
/// `j` covers `y in [j*res, (j+1)*res)`; each cell stores the field at its
/// center.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightmap {
    resolution_m: f64,
    inv_resolution: f64,
    rows: usize,
    cols: usize,
    heights: Vec<f64>,
}

/// Grid shape `(rows, cols)` for a resolution, or an error if the resolution
/// cannot tile the 16 m x 8 m patch.
pub fn grid_shape(resolution_m: f64) -> Result<(usize, usize), TerrainError> {
    if !(resolution_m.is_finite() && resolution_m > 0.0 && resolution_m <= TERRAIN_WIDTH_M) {
        return Err(TerrainError::Resolution(resolution_m));
    }
    let rows = math::round(TERRAIN_LENGTH_M / resolution_m);
    let cols = math::round(TERRAIN_WIDTH_M / resolution_m);
    // The grid must cover the patch to within one cell.
    let fits = |n: f64, extent: f64| n >= 1.0 && f64::abs(n * resolution_m - extent) < resolution_m;
    if !fits(rows, TERRAIN_LENGTH_M) || !fits(cols, TERRAIN_WIDTH_M) || rows > 1.0e5 || cols > 1.0e5
    {
        return Err(TerrainError::Resolution(resolution_m));
    }
    Ok((rows as usize, cols as usize))
}

impl Heightmap {
    pub fn from_heights(resolution_m: f64, heights: Vec<f64>) -> Result<Self, TerrainError> {
        let (rows, cols) = grid_shape(resolution_m)?;
        if heights.len() != rows * cols {
            return Err(TerrainError::Shape { rows, cols, got: heights.len() });
        }
        for (index, &value) in heights.iter().enumerate() {
            if !value.is_finite() || f64::abs(value) > MAX_ABS_HEIGHT_M {
                return Err(TerrainError::Height { index, value });
            }
        }
        Ok(Self { resolution_m, inv_resolution: 1.0 / resolution_m, rows, cols, heights })
    }

    pub fn flat(resolution_m: f64) -> Result<Self, TerrainError> {
        let (rows, cols) = grid_shape(resolution_m)?;
        Ok(Self { resolution_m, inv_resolution: 1.0 / resolution_m, rows, cols, heights: alloc::vec![0.0; rows * cols] })
    }

    /// Builds a map by sampling `f(x, y)` at every cell center.
    pub fn from_fn(
        resolution_m: f64,
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> Result<Self, TerrainError> {
        let (rows, cols) = grid_shape(resolution_m)?;
        let mut heights = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let x = (i as f64 + 0.5) * resolution_m;
            for j in 0..cols {
                let y = (j as f64 + 0.5) * resolution_m;
                heights.push(f(x, y));
            }
        }
        Self::from_heights(resolution_m, heights)
    }

    pub fn resolution_m(&self) -> f64 {
        self.resolution_m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.heights[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.heights[i * self.cols + j]
    }

    pub fn max_abs_height(&self) -> f64 {
        self.heights.iter().fold(0.0, |m, h| m.max(f64::abs(*h)))
    }

    /// Index of the cell containing `(x, y)`, clamped to the grid.
    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let clamp = |v: f64, n: usize| -> usize {
            let k = v * self.inv_resolution;
            // Truncation is floor here; NaN and negatives land in cell 0.
            if k >= 1.0 {
                (k as usize).min(n - 1)
            } else {
                0
            }
        };
        (clamp(x, self.rows), clamp(y, self.cols))
    }

    /// Height of the cell containing `(x, y)` (piecewise constant).
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (i, j) = self.cell_of(x, y);
        self.get(i, j)
    }

    /// Central-difference gradient `(dh/dx, dh/dy)` at the cell containing
    /// `(x, y)`; one-sided at the grid border.
    #[inline]
    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let (i, j) = self.cell_of(x, y);
        let (i0, i1) = (i.saturating_sub(1), (i + 1).min(self.rows - 1));
        let (j0, j1) = (j.saturating_sub(1), (j + 1).min(self.cols - 1));
        let gx = if i1 > i0 {
            (self.get(i1, j) - self.get(i0, j)) * self.inv_resolution / (i1 - i0) as f64
        } else {
            0.0
        };
        let gy = if j1 > j0 {
            (self.get(i, j1) - self.get(i, j0)) * self.inv_resolution / (j1 - j0) as f64
        } else {
            0.0
        };
        (gx, gy)
    }
}

/// Clips, rescales and samples the genome's mixture at every cell center.
pub fn rasterize(genome: &TerrainGenome, resolution_m: f64) -> Result<Heightmap, TerrainError> {
    let (rows, cols) = grid_shape(resolution_m)?;
    let components = genome.clip()?.rescale()?;
    let mut heights = alloc::vec![0.0; rows * cols];
    // Components are accumulated in order, each only over the cells inside
    // its culling rectangle; `eval` is zero everywhere else.
    for c in components.iter().filter(|c| c.w != 0.0) {
        let prep = Prepared::new(*c);
        let rx = cull_radius(c.sigma_x, c.p_x);
        let ry = cull_radius(c.sigma_y, c.p_y);
        for i in 0..rows {
            let x = (i as f64 + 0.5) * resolution_m;
            let dx = x - prep.mu_x;
            // |cos*dx - sin*dy| <= rx and |sin*dx + cos*dy| <= ry
            let Some((lo1, hi1)) = slab(-prep.sin, prep.cos * dx, rx) else { continue };
            let Some((lo2, hi2)) = slab(prep.cos, prep.sin * dx, ry) else { continue };
            let (lo, hi) = (lo1.max(lo2) + prep.mu_y, hi1.min(hi2) + prep.mu_y);
            if lo > hi {
                continue;
            }
            let j0 = math::floor(lo / resolution_m - 0.5).max(0.0) as usize;
            let j1 = (math::floor(hi / resolution_m + 0.5).max(0.0) as usize).min(cols - 1);
            let row = &mut heights[i * cols..(i + 1) * cols];
            for (j, h) in row.iter_mut().enumerate().take(j1 + 1).skip(j0) {
                *h += prep.eval(x, (j as f64 + 0.5) * resolution_m);
            }
        }
    }
    Ok(Heightmap { resolution_m, inv_resolution: 1.0 / resolution_m, rows, cols, heights })
}

// Half-width along one rotated axis beyond which the exponent exceeds
// CULL_EXPONENT, padded against rounding.
fn cull_radius(sigma: f64, p: f64) -> f64 {
    sigma * math::exp(math::ln(CULL_EXPONENT) / (2.0 * p)) * (1.0 + 1e-9) + 1e-9
}

// Range of `t` with `|b + a*t| <= r`; `None` when empty. Unbounded when `a`
// is (nearly) zero.
fn slab(a: f64, b: f64, r: f64) -> Option<(f64, f64)> {
    if a.abs() < 1e-12 {
        return if b.abs() <= r { Some((f64::NEG_INFINITY, f64::INFINITY)) } else { None };
    }
    let (t0, t1) = ((-r - b) / a, (r - b) / a);
    Some((t0.min(t1), t0.max(t1)))
}
