//! Composite episode reward: task completion, signature similarity, and
//! spatial and temporal penalties against a reference final pose.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::signature::skill_similarity;
use crate::skill::SkillModel;
use crate::so3;

/// Velocity samples per path when scoring similarity.
pub const SIMILARITY_SAMPLES: usize = 100;
/// Trajectory samples used to locate the arrival time.
pub const ARRIVAL_SAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    /// Weight α on signature similarity.
    pub alpha: f64,
    /// Weight β on the spatial penalty.
    pub beta: f64,
    /// Weight η on the temporal penalty.
    pub eta: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            eta: 0.5,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.eta].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid(format!("reward weights must be non-negative, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_tc: f64,
    pub r_ss: f64,
    pub r_sp: f64,
    pub r_tp: f64,
    pub total: f64,
    pub weights: RewardWeights,
}

impl RewardBreakdown {
    pub fn compose(r_tc: f64, r_ss: f64, r_sp: f64, r_tp: f64, weights: RewardWeights) -> Self {
        Self {
            r_tc,
            r_ss,
            r_sp,
            r_tp,
            total: combine(r_tc, r_ss, r_sp, r_tp, &weights),
            weights,
        }
    }

    /// Total re-derived from the stored components.
    pub fn recomputed_total(&self) -> f64 {
        combine(self.r_tc, self.r_ss, self.r_sp, self.r_tp, &self.weights)
    }
}

fn combine(r_tc: f64, r_ss: f64, r_sp: f64, r_tp: f64, w: &RewardWeights) -> f64 {
    r_tc + w.alpha * r_ss - w.beta * r_sp - w.eta * r_tp
}

/// Position distance plus the geodesic angle between two orientations.
pub fn spatial_penalty(p_pi: [f64; 3], q_pi: [f64; 4], p_demo: [f64; 3], q_demo: [f64; 4]) -> Result<f64> {
    let d = ((p_pi[0] - p_demo[0]).powi(2) + (p_pi[1] - p_demo[1]).powi(2) + (p_pi[2] - p_demo[2]).powi(2)).sqrt();
    let (a, b) = (so3::normalize_quat(q_pi)?, so3::normalize_quat(q_demo)?);
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]).abs().clamp(0.0, 1.0);
    Ok(d + 2.0 * dot.acos())
}

/// `duration − t` where `t` is the earliest sample time closest to `target`.
/// `times` and `positions` describe the adapted trajectory.
pub fn temporal_penalty(times: &[f64], positions: &[[f64; 3]], target: [f64; 3], duration: f64) -> Result<f64> {
    if times.len() != positions.len() || times.is_empty() {
        return Err(invalid("times and positions must be non-empty and equally long"));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, p) in positions.iter().enumerate() {
        let d = (p[0] - target[0]).powi(2) + (p[1] - target[1]).powi(2) + (p[2] - target[2]).powi(2);
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(duration - (times[best.1] - times[0]))
}

/// Scores an executed adaptation against the demonstration skill and the
/// reference final pose `(position, quaternion)`.
pub fn compute_reward(
    success: bool,
    adapted: &SkillModel,
    demo_skill: &SkillModel,
    reference_final: ([f64; 3], [f64; 4]),
    weights: RewardWeights,
) -> Result<RewardBreakdown> {
    weights.validate()?;
    let r_tc = if success { 1.0 } else { 0.0 };
    let r_ss = skill_similarity(adapted, demo_skill, SIMILARITY_SAMPLES);
    let end = adapted.query(1.0);
    let r_sp = spatial_penalty(end.position, end.orientation(), reference_final.0, reference_final.1)?;
    let samples = adapted.sample_uniform(ARRIVAL_SAMPLES);
    let times: Vec<f64> = samples.iter().map(|s| s.time).collect();
    let positions: Vec<[f64; 3]> = samples.iter().map(|s| s.position).collect();
    let r_tp = temporal_penalty(&times, &positions, reference_final.0, adapted.duration())?;
    Ok(RewardBreakdown::compose(r_tc, r_ss, r_sp, r_tp, weights))
}
