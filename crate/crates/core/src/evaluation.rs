//! Repeated-episode evaluation of one terrain.
//!
//! An [`EpisodeEvaluator`] runs a single rollout of the controller under test
//! and returns raw penalty sums. [`evaluate_terrain`] runs a batch of episodes
//! with deterministic per-episode seeds and aggregates scaled means and STDs.
//!
//! [`ProxyWalker`] is the built-in evaluator: a planar kinematic walker that
//! tries to head for the far end of the patch at 0.75 m/s and reacts to the
//! height field (slowdown on slopes, lateral drift on cross-slopes, stumbles on
//! tall rises, impacts and falls on drops).

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::descriptors::{DescriptorMode, PenaltyScaling};
use crate::seed;
use crate::terrain::{Heightmap, TERRAIN_WIDTH_M};

pub const PENALTY_CHANNELS: usize = 5;
pub const DEFAULT_EPISODES: u32 = 20;
pub const DEFAULT_DT: f64 = 0.005;
pub const DEFAULT_HORIZON_S: f64 = 20.0;

/// Raw penalty channels, in storage and wire order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyChannel {
    AngularVelocity = 0,
    LinearVelocityX = 1,
    LinearVelocityY = 2,
    ContactForce = 3,
    Stumble = 4,
}

impl PenaltyChannel {
    pub const ALL: [PenaltyChannel; PENALTY_CHANNELS] = [
        PenaltyChannel::AngularVelocity,
        PenaltyChannel::LinearVelocityX,
        PenaltyChannel::LinearVelocityY,
        PenaltyChannel::ContactForce,
        PenaltyChannel::Stumble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PenaltyChannel::AngularVelocity => "ang_vel",
            PenaltyChannel::LinearVelocityX => "lin_vel_x",
            PenaltyChannel::LinearVelocityY => "lin_vel_y",
            PenaltyChannel::ContactForce => "contact",
            PenaltyChannel::Stumble => "stumble",
        }
    }
}

/// Outcome of one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Per-channel sums over the episode, `>= 0`, unscaled.
    pub raw_penalties: [f64; PENALTY_CHANNELS],
    /// Catastrophic (episode-ending) collision.
    pub collision: bool,
    /// Non-terminating body contacts.
    pub collision_count: u32,
    pub steps: u32,
}

/// What an evaluator needs to run one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSpec {
    pub index: u32,
    pub seed: u64,
    pub dt: f64,
    pub horizon_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    Protocol,
    Timeout,
    Exited,
    Io,
}

/// Failure reported by an episode evaluator.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind:?}: {message}")]
pub struct EvaluatorFault {
    pub kind: FaultKind,
    pub message: String,
}

impl EvaluatorFault {
    pub fn new(kind: FaultKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
}

/// A terrain evaluation that failed, with the offending episode.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("episode {episode} failed: {fault}")]
pub struct EvaluationError {
    pub episode: u32,
    #[source]
    pub fault: EvaluatorFault,
}

/// A black-box controller-plus-simulator.
pub trait EpisodeEvaluator {
    fn run_episode(
        &mut self,
        heightmap: &Heightmap,
        spec: &EpisodeSpec,
    ) -> Result<EpisodeResult, EvaluatorFault>;

    /// Runs several episodes on one terrain, in order. The output may stop
    /// right after the first fault.
    fn run_episodes(
        &mut self,
        heightmap: &Heightmap,
        specs: &[EpisodeSpec],
    ) -> Vec<Result<EpisodeResult, EvaluatorFault>> {
        let mut out = Vec::with_capacity(specs.len());
        for spec in specs {
            let r = self.run_episode(heightmap, spec);
            let failed = r.is_err();
            out.push(r);
            if failed {
                break;
            }
        }
        out
    }
}

impl<E: EpisodeEvaluator + ?Sized> EpisodeEvaluator for &mut E {
    fn run_episode(
        &mut self,
        heightmap: &Heightmap,
        spec: &EpisodeSpec,
    ) -> Result<EpisodeResult, EvaluatorFault> {
        (**self).run_episode(heightmap, spec)
    }

    fn run_episodes(
        &mut self,
        heightmap: &Heightmap,
        specs: &[EpisodeSpec],
    ) -> Vec<Result<EpisodeResult, EvaluatorFault>> {
        (**self).run_episodes(heightmap, specs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub episodes: u32,
    pub dt: f64,
    pub horizon_s: f64,
    pub scaling: PenaltyScaling,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            episodes: DEFAULT_EPISODES,
            dt: DEFAULT_DT,
            horizon_s: DEFAULT_HORIZON_S,
            scaling: PenaltyScaling::unit(),
        }
    }
}

/// Aggregate of a terrain's episodes. Means and STDs are of *scaled*
/// penalties; STDs are population STDs over the episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mean_penalties: [f64; PENALTY_CHANNELS],
    pub std_penalties: [f64; PENALTY_CHANNELS],
    pub mean_collision_count: f64,
    pub std_collision_count: f64,
    pub any_collision: bool,
    pub non_collision_rate: f64,
    pub episodes: Vec<EpisodeResult>,
}

impl EvaluationReport {
    /// Recomputes every statistic from per-episode records.
    ///
    /// Panics if `episodes` is empty.
    pub fn from_episodes(episodes: Vec<EpisodeResult>, scaling: &PenaltyScaling) -> Self {
        assert!(!episodes.is_empty(), "a report needs at least one episode");
        let n = episodes.len() as f64;
        let mut mean_penalties = [0.0; PENALTY_CHANNELS];
        let mut std_penalties = [0.0; PENALTY_CHANNELS];
        for k in 0..PENALTY_CHANNELS {
            let (m, s) = mean_std(episodes.iter().map(|e| e.raw_penalties[k] * scaling.channels[k]), n);
            mean_penalties[k] = m;
            std_penalties[k] = s;
        }
        let (mean_collision_count, std_collision_count) = mean_std(
            episodes.iter().map(|e| f64::from(e.collision_count) * scaling.collision_count),
            n,
        );
        let collided = episodes.iter().filter(|e| e.collision).count();
        Self {
            mean_penalties,
            std_penalties,
            mean_collision_count,
            std_collision_count,
            any_collision: collided > 0,
            non_collision_rate: (episodes.len() - collided) as f64 / n,
            episodes,
        }
    }

    /// Channel means that enter ratios and fitness under `mode`.
    pub fn channel_means(&self, mode: DescriptorMode) -> Vec<f64> {
        let mut v = self.mean_penalties.to_vec();
        if mode == DescriptorMode::Anymal {
            v.push(self.mean_collision_count);
        }
        v
    }

    pub fn channel_stds(&self, mode: DescriptorMode) -> Vec<f64> {
        let mut v = self.std_penalties.to_vec();
        if mode == DescriptorMode::Anymal {
            v.push(self.std_collision_count);
        }
        v
    }

    pub fn total_std(&self, mode: DescriptorMode) -> f64 {
        self.channel_stds(mode).iter().sum()
    }

    /// Index of the largest scaled mean channel.
    pub fn dominant_channel(&self, mode: DescriptorMode) -> usize {
        let means = self.channel_means(mode);
        let mut best = 0;
        for (k, &m) in means.iter().enumerate() {
            if m > means[best] {
                best = k;
            }
        }
        best
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, n: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

/// Runs `config.episodes` rollouts and aggregates them. Episode `k` uses seed
/// [`seed::episode_seed`]`(seed, k)`.
pub fn evaluate_terrain<E: EpisodeEvaluator + ?Sized>(
    heightmap: &Heightmap,
    evaluator: &mut E,
    config: &EvaluationConfig,
    seed: u64,
) -> Result<EvaluationReport, EvaluationError> {
    assert!(config.episodes >= 1, "at least one episode is required");
    let specs: Vec<EpisodeSpec> = (0..config.episodes)
        .map(|index| EpisodeSpec {
            index,
            seed: seed::episode_seed(seed, index),
            dt: config.dt,
            horizon_s: config.horizon_s,
        })
        .collect();
    let results = evaluator.run_episodes(heightmap, &specs);
    let mut episodes = Vec::with_capacity(specs.len());
    for (index, result) in (0..config.episodes).zip(results) {
        let result = result
            .and_then(|r| validate_episode(&r).map(|()| r))
            .map_err(|fault| EvaluationError { episode: index, fault })?;
        episodes.push(result);
    }
    if episodes.len() != specs.len() {
        let index = episodes.len() as u32;
        let fault = EvaluatorFault::new(FaultKind::Protocol, "evaluator returned too few episodes");
        return Err(EvaluationError { episode: index, fault });
    }
    Ok(EvaluationReport::from_episodes(episodes, &config.scaling))
}

fn validate_episode(result: &EpisodeResult) -> Result<(), EvaluatorFault> {
    for (k, &p) in result.raw_penalties.iter().enumerate() {
        if !(p.is_finite() && p >= 0.0) {
            return Err(EvaluatorFault::new(
                FaultKind::Protocol,
                alloc::format!("penalty {} is {p}; penalties must be finite and >= 0", PenaltyChannel::ALL[k].name()),
            ));
        }
    }
    Ok(())
}

/// Robot pose in the terrain frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

pub const START_X: f64 = 1.0;
pub const START_Y_RANGE: (f64, f64) = (3.5, 4.5);
pub const START_YAW_RANGE: (f64, f64) = (-0.1, 0.1);

/// Start pose for an episode seed: `x = 1`, `y ~ U[3.5, 4.5]`,
/// `yaw ~ U[-0.1, 0.1]`.
pub fn sample_initial_state(seed: u64) -> Pose {
    let mut rng = seed::rng(seed);
    let y = rng.random_range(START_Y_RANGE.0..=START_Y_RANGE.1);
    let yaw = rng.random_range(START_YAW_RANGE.0..=START_YAW_RANGE.1);
    Pose { x: START_X, y, yaw }
}

/// Constants of the proxy walker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyParams {
    pub speed: f64,
    pub k_omega: f64,
    pub omega_max: f64,
    pub k_slope: f64,
    pub k_drift: f64,
    /// Floor on the slope slowdown factor, so the walker can cross the
    /// one-cell gradient spike at a cliff edge.
    pub min_speed_factor: f64,
    pub stride_s: f64,
    pub lookahead_m: f64,
    pub step_max_m: f64,
    pub impact_min_drop_m: f64,
    pub contact_gain: f64,
    pub fall_drop_m: f64,
    pub goal_x: f64,
    /// The walker steers toward this point.
    pub aim: (f64, f64),
    pub mode: DescriptorMode,
}

impl Default for ProxyParams {
    fn default() -> Self {
        Self {
            speed: 0.75,
            k_omega: 2.0,
            omega_max: 2.0,
            k_slope: 1.5,
            k_drift: 0.5,
            min_speed_factor: 0.1,
            stride_s: 0.4,
            lookahead_m: 0.35,
            step_max_m: 0.2,
            impact_min_drop_m: 0.05,
            contact_gain: 10.0,
            fall_drop_m: 0.5,
            goal_x: 15.0,
            aim: (16.0, 0.5 * TERRAIN_WIDTH_M),
            mode: DescriptorMode::Cassie,
        }
    }
}

/// Velocity command issued to the walker at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandState {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

/// Proxy rollout with its end state, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub result: EpisodeResult,
    pub final_pose: Pose,
    pub reached_goal: bool,
    pub stumbles: u32,
}

/// Built-in deterministic evaluator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProxyWalker {
    pub params: ProxyParams,
}

impl ProxyWalker {
    pub fn new(params: ProxyParams) -> Self {
        Self { params }
    }

    pub fn with_mode(mode: DescriptorMode) -> Self {
        Self { params: ProxyParams { mode, ..ProxyParams::default() } }
    }

    /// Command toward the aim point for a pose: fixed speed split into body
    /// axes by the heading error, turn rate proportional to it.
    pub fn command(&self, pose: &Pose) -> CommandState {
        let (s, c) = math::sin_cos(pose.yaw);
        self.command_with(pose, s, c)
    }

    #[inline]
    fn command_with(&self, pose: &Pose, sin_yaw: f64, cos_yaw: f64) -> CommandState {
        let p = &self.params;
        let dx = p.aim.0 - pose.x;
        let dy = p.aim.1 - pose.y;
        let dist = math::sqrt(dx * dx + dy * dy);
        if dist == 0.0 {
            return CommandState { vx: p.speed, vy: 0.0, omega: 0.0 };
        }
        let inv = 1.0 / dist;
        let cos_err = (dx * cos_yaw + dy * sin_yaw) * inv;
        let sin_err = (dy * cos_yaw - dx * sin_yaw) * inv;
        CommandState {
            vx: p.speed * cos_err,
            vy: p.speed * sin_err,
            omega: p.k_omega * math::atan2(sin_err, cos_err),
        }
    }

    pub fn rollout(&self, heightmap: &Heightmap, init: Pose, dt: f64, horizon_s: f64) -> Rollout {
        let mut walk = Walk::new(self, heightmap, init, dt, horizon_s);
        while !walk.done {
            walk.step();
        }
        walk.finish()
    }
}

// One episode in progress.
struct Walk<'a> {
    p: &'a ProxyParams,
    walker: &'a ProxyWalker,
    map: &'a Heightmap,
    dt: f64,
    max_steps: u32,
    stride_steps: u32,
    // Steps left until the next foot event.
    to_stride: u32,
    pose: Pose,
    sin: f64,
    cos: f64,
    pen: [f64; PENALTY_CHANNELS],
    collision: bool,
    collision_count: u32,
    stumbles: u32,
    stalled: bool,
    foot_h: f64,
    reached_goal: bool,
    steps: u32,
    done: bool,
}

impl<'a> Walk<'a> {
    fn new(walker: &'a ProxyWalker, map: &'a Heightmap, init: Pose, dt: f64, horizon_s: f64) -> Self {
        assert!(dt > 0.0 && dt.is_finite(), "dt must be positive");
        let p = &walker.params;
        let max_steps = math::round(horizon_s / dt).max(0.0) as u32;
        let (sin, cos) = math::sin_cos(init.yaw);
        let reached_goal = init.x >= p.goal_x;
        Self {
            p,
            walker,
            map,
            dt,
            max_steps,
            stride_steps: (math::round(p.stride_s / dt) as u32).max(1),
            to_stride: 0,
            pose: init,
            sin,
            cos,
            pen: [0.0; PENALTY_CHANNELS],
            collision: false,
            collision_count: 0,
            stumbles: 0,
            stalled: false,
            foot_h: map.sample(init.x, init.y),
            reached_goal,
            steps: 0,
            done: max_steps == 0 || reached_goal,
        }
    }

    #[inline]
    fn step(&mut self) {
        let p = self.p;
        let dt = self.dt;
        let (s, c) = (self.sin, self.cos);
        if self.to_stride == 0 {
            self.to_stride = self.stride_steps;
            let h = self.map.sample(self.pose.x, self.pose.y);
            if self.steps > 0 {
                let drop = self.foot_h - h;
                if drop > p.fall_drop_m {
                    self.collision = true;
                    self.done = true;
                    return;
                }
                if drop > p.impact_min_drop_m {
                    self.pen[PenaltyChannel::ContactForce as usize] += p.contact_gain * drop;
                }
            }
            self.foot_h = h;
            let ahead = self.map.sample(self.pose.x + p.lookahead_m * c, self.pose.y + p.lookahead_m * s);
            let rise = ahead - h;
            self.stalled = rise > p.step_max_m;
            if self.stalled {
                self.stumbles += 1;
                self.pen[PenaltyChannel::Stumble as usize] += dt;
                if p.mode == DescriptorMode::Anymal && rise <= p.fall_drop_m {
                    self.collision_count += 1;
                }
            }
        }

        let cmd = self.walker.command_with(&self.pose, s, c);
        let (gx, gy) = self.map.gradient(self.pose.x, self.pose.y);
        let cross = -gx * s + gy * c;
        let grad_norm = math::sqrt(gx * gx + gy * gy);

        let omega = cmd.omega.clamp(-p.omega_max, p.omega_max) * (1.0 - f64::abs(cross)).max(0.0);
        let factor = (1.0 - p.k_slope * grad_norm).max(p.min_speed_factor);
        let vx = if self.stalled { 0.0 } else { cmd.vx * factor };
        // Drift toward the downhill side.
        let vy = cmd.vy * factor - p.k_drift * cross;

        self.pen[PenaltyChannel::AngularVelocity as usize] += f64::abs(cmd.omega - omega) * dt;
        self.pen[PenaltyChannel::LinearVelocityX as usize] += f64::abs(cmd.vx - vx) * dt;
        self.pen[PenaltyChannel::LinearVelocityY as usize] += f64::abs(cmd.vy - vy) * dt;

        self.pose.x += (vx * c - vy * s) * dt;
        self.pose.y += (vx * s + vy * c) * dt;
        let turn = omega * dt;
        if turn != 0.0 {
            self.pose.yaw = wrap_angle(self.pose.yaw + turn);
            (self.sin, self.cos) = rotate(s, c, turn, self.pose.yaw);
        }
        self.steps += 1;
        self.to_stride -= 1;
        self.reached_goal = self.pose.x >= p.goal_x;
        self.done = self.reached_goal || self.steps >= self.max_steps;
    }

    fn finish(self) -> Rollout {
        Rollout {
            result: EpisodeResult {
                raw_penalties: self.pen,
                collision: self.collision,
                collision_count: self.collision_count,
                steps: self.steps,
            },
            final_pose: self.pose,
            reached_goal: self.reached_goal,
            stumbles: self.stumbles,
        }
    }
}

impl EpisodeEvaluator for ProxyWalker {
    fn run_episode(
        &mut self,
        heightmap: &Heightmap,
        spec: &EpisodeSpec,
    ) -> Result<EpisodeResult, EvaluatorFault> {
        let init = sample_initial_state(spec.seed);
        Ok(self.rollout(heightmap, init, spec.dt, spec.horizon_s).result)
    }
}

// Heading `(sin, cos)` advanced by a small turn; series for small angles,
// recomputed from `yaw` otherwise.
#[inline]
fn rotate(s: f64, c: f64, turn: f64, yaw: f64) -> (f64, f64) {
    if f64::abs(turn) > 0.05 {
        return math::sin_cos(yaw);
    }
    let t2 = turn * turn;
    let st = turn * (1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0)));
    let ct = 1.0 - t2 / 2.0 * (1.0 - t2 / 12.0 * (1.0 - t2 / 30.0 * (1.0 - t2 / 56.0)));
    (s * ct + c * st, c * ct - s * st)
}

pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let mut a = math::fmod(a + PI, 2.0 * PI);
    if a < 0.0 {
        a += 2.0 * PI;
    }
    a - PI
}
