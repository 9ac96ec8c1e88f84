//! Skill-GP: least-squares adaptation of free via-points with observed
//! task features pinned as anchors.
//!
//! Anchors use displacement semantics: an anchored value is the fitted
//! via-point plus the offset between the observed feature and its
//! demonstrated location. A task configuration identical to the
//! demonstration therefore leaves every via-point untouched.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envs::{Role, TaskConfiguration};
use crate::error::{invalid, Result};
use crate::gp::GpBasis;
use crate::lsq::{self, LmOptions};
use crate::skill::{combine_histories, Demonstration, SkillModel, ViaPointSet};
use crate::so3;

pub const DEFAULT_LAMBDA_ACCEL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveWeights {
    /// Weight of the acceleration term relative to the velocity term.
    pub lambda_accel: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            lambda_accel: DEFAULT_LAMBDA_ACCEL,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_accel.is_finite() && self.lambda_accel >= 0.0) {
            return Err(invalid("lambda_accel must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Via-points pinned to observed task features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub indices: Vec<usize>,
    pub roles: Vec<Role>,
    /// Anchored values in axis order `px, py, pz, rx, ry, rz`.
    pub values: Vec<[f64; 6]>,
    /// Which axes each anchor pins.
    pub axis_mask: Vec<[bool; 6]>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn validate(&self, n_via: usize) -> Result<()> {
        let n = self.indices.len();
        if self.values.len() != n || self.axis_mask.len() != n || self.roles.len() != n {
            return Err(invalid("anchor fields differ in length"));
        }
        if n == 0 {
            return Err(invalid("anchor set is empty"));
        }
        for (k, &i) in self.indices.iter().enumerate() {
            if i >= n_via {
                return Err(invalid(format!("anchor index {i} out of range for {n_via} via-points")));
            }
            if self.indices[..k].contains(&i) {
                return Err(invalid(format!("anchor index {i} repeated")));
            }
        }
        Ok(())
    }

    /// Anchored value at `(index, axis)` if that axis is pinned there.
    pub fn pinned(&self, index: usize, axis: usize) -> Option<f64> {
        self.indices
            .iter()
            .position(|&i| i == index)
            .filter(|&k| self.axis_mask[k][axis])
            .map(|k| self.values[k][axis])
    }

    /// Copy of `via` with anchored entries overwritten.
    pub fn apply(&self, via: &ViaPointSet) -> ViaPointSet {
        let mut out = via.clone();
        for (k, &i) in self.indices.iter().enumerate() {
            for axis in 0..6 {
                if self.axis_mask[k][axis] {
                    out.set(i, axis, self.values[k][axis]);
                }
            }
        }
        out
    }
}

/// Matches each observation to a distinct via-point and computes anchored values.
///
/// Matching uses the observation's demonstrated location when one is given
/// (otherwise the observed location) against the queried via positions
/// `p*(t_j)`. Ties go to the lowest index; an already claimed index falls
/// through to the next nearest.
pub fn select_anchors(skill: &SkillModel, tc: &TaskConfiguration) -> Result<AnchorSet> {
    let obs = &tc.observations;
    let via = skill.via();
    let n = via.len();
    if obs.is_empty() {
        return Err(invalid("task configuration has no observed poses"));
    }
    if obs.len() > n {
        return Err(invalid(format!("{} observations for {n} via-points", obs.len())));
    }
    let samples: Vec<_> = via.times().iter().map(|t| skill.query_seconds(*t)).collect();
    let mut claimed = vec![false; n];
    let mut set = AnchorSet {
        indices: Vec::with_capacity(obs.len()),
        roles: Vec::with_capacity(obs.len()),
        values: Vec::with_capacity(obs.len()),
        axis_mask: Vec::with_capacity(obs.len()),
    };
    for o in obs {
        if o.position.iter().any(|v| !v.is_finite()) {
            return Err(invalid("observed position must be finite"));
        }
        let target = o.reference_position.unwrap_or(o.position);
        let mut order: Vec<(f64, usize)> = samples
            .iter()
            .enumerate()
            .map(|(j, s)| (dist3(&s.position, &target), j))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let j = order
            .iter()
            .map(|(_, j)| *j)
            .find(|j| !claimed[*j])
            .ok_or_else(|| invalid("no unclaimed via-point left"))?;
        claimed[j] = true;

        let mut value = [0.0; 6];
        let mut mask = [false; 6];
        for (axis, v) in value.iter_mut().enumerate() {
            *v = via.value(j, axis);
        }
        let reference = o.reference_position.unwrap_or(samples[j].position);
        for axis in 0..3 {
            value[axis] += o.position[axis] - reference[axis];
            mask[axis] = true;
        }
        if let Some(q) = o.orientation {
            let r_ref = match o.reference_orientation {
                Some(qr) => so3::nearest_equivalent(so3::quat_to_rotvec(qr)?, samples[j].rotation_vector),
                None => samples[j].rotation_vector,
            };
            let r_obs = so3::nearest_equivalent(so3::quat_to_rotvec(q)?, r_ref);
            for axis in 0..3 {
                value[3 + axis] += r_obs[axis] - r_ref[axis];
                mask[3 + axis] = true;
            }
        }
        set.indices.push(j);
        set.roles.push(o.role);
        set.values.push(value);
        set.axis_mask.push(mask);
    }
    Ok(set)
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Spreads anchor displacements over all via-points.
///
/// Per axis, displacements are interpolated linearly in time between
/// anchors and held constant before the first and after the last one.
/// Anchored entries take their anchored values exactly.
pub fn aligned_via(via: &ViaPointSet, anchors: &AnchorSet) -> ViaPointSet {
    let mut out = via.clone();
    let times = via.times();
    for axis in 0..6 {
        let mut knots: Vec<(usize, f64)> = anchors
            .indices
            .iter()
            .enumerate()
            .filter(|(k, _)| anchors.axis_mask[*k][axis])
            .map(|(k, &i)| (i, anchors.values[k][axis] - via.value(i, axis)))
            .collect();
        if knots.is_empty() {
            continue;
        }
        knots.sort_by_key(|k| k.0);
        for j in 0..via.len() {
            let d = displacement_at(&knots, times, j);
            out.set(j, axis, via.value(j, axis) + d);
        }
    }
    anchors.apply(&out)
}

fn displacement_at(knots: &[(usize, f64)], times: &[f64], j: usize) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if j <= first.0 {
        return first.1;
    }
    if j >= last.0 {
        return last.1;
    }
    let k = knots.partition_point(|kn| kn.0 <= j);
    let (i0, d0) = knots[k - 1];
    let (i1, d1) = knots[k];
    let f = (times[j] - times[i0]) / (times[i1] - times[i0]);
    d0 + f * (d1 - d0)
}

/// Anchors for `tc` and the aligned via-points learned adapters shift from.
pub fn aligned_base(skill: &SkillModel, tc: &TaskConfiguration) -> Result<(AnchorSet, ViaPointSet)> {
    let anchors = select_anchors(skill, tc)?;
    let via = aligned_via(skill.via(), &anchors);
    Ok((anchors, via))
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptResult {
    #[serde(skip)]
    pub via: ViaPointSet,
    pub objective_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Precomputed Skill-GP problem for one demonstration skill.
///
/// The design rows and derivative targets depend only on the demonstration,
/// so many task configurations can be solved against one instance.
#[derive(Debug, Clone)]
pub struct SkillGpSolver {
    skill: SkillModel,
    design: DMatrix<f64>,
    targets: Vec<DVector<f64>>,
    options: LmOptions,
}

impl SkillGpSolver {
    pub fn new(skill: &SkillModel, demo: &Demonstration, weights: ObjectiveWeights) -> Result<Self> {
        weights.validate()?;
        let via = skill.via();
        let t0 = via.times()[0];
        let times: Vec<f64> = demo.timestamps().iter().map(|s| t0 + s * skill.duration()).collect();
        let basis = GpBasis::new(via.times(), *skill.params())?;
        let rows = basis.rows(&times)?;
        let q = times.len();
        let n = via.len();
        let w = weights.lambda_accel.sqrt();
        let mut design = DMatrix::zeros(2 * q, n);
        design.rows_mut(0, q).copy_from(&rows.first);
        design.rows_mut(q, q).copy_from(&(rows.second * w));
        let samples: Vec<_> = times.iter().map(|t| skill.query_seconds(*t)).collect();
        let targets = (0..6)
            .map(|axis| {
                DVector::from_iterator(
                    2 * q,
                    samples
                        .iter()
                        .map(|s| velocity(s, axis))
                        .chain(samples.iter().map(|s| w * acceleration(s, axis))),
                )
            })
            .collect();
        Ok(Self {
            skill: skill.clone(),
            design,
            targets,
            options: LmOptions::default(),
        })
    }

    pub fn skill(&self) -> &SkillModel {
        &self.skill
    }

    /// Optimises the free via-points for the given anchors.
    pub fn solve(&self, anchors: &AnchorSet) -> Result<AdaptResult> {
        let via = self.skill.via();
        let n = via.len();
        anchors.validate(n)?;
        let init = aligned_via(via, anchors);
        let mut out = init.clone();
        let mut histories = Vec::with_capacity(6);
        let mut converged = true;
        let mut iterations = 0;
        for axis in 0..6 {
            let free: Vec<usize> = (0..n).filter(|&j| anchors.pinned(j, axis).is_none()).collect();
            let fixed: Vec<usize> = (0..n).filter(|&j| anchors.pinned(j, axis).is_some()).collect();
            let mut offset = -self.targets[axis].clone();
            for &j in &fixed {
                offset += self.design.column(j) * init.value(j, axis);
            }
            let jac = self.design.select_columns(free.iter());
            let x0 = DVector::from_iterator(free.len(), free.iter().map(|&j| init.value(j, axis)));
            let rep = lsq::minimize(x0, |x| &jac * x + &offset, |_| jac.clone(), &self.options)?;
            for (k, &j) in free.iter().enumerate() {
                out.set(j, axis, rep.x[k]);
            }
            converged &= rep.converged;
            iterations = iterations.max(rep.iterations);
            histories.push(rep.cost_history);
        }
        if !converged {
            log::warn!("Skill-GP did not converge; returning best iterate");
        }
        Ok(AdaptResult {
            via: out,
            objective_history: combine_histories(&histories),
            converged,
            iterations,
        })
    }
}

fn velocity(s: &crate::skill::PoseTwistAccel, axis: usize) -> f64 {
    if axis < 3 {
        s.linear_velocity[axis]
    } else {
        s.rotvec_rate[axis - 3]
    }
}

fn acceleration(s: &crate::skill::PoseTwistAccel, axis: usize) -> f64 {
    if axis < 3 {
        s.linear_accel[axis]
    } else {
        s.rotvec_accel[axis - 3]
    }
}

/// One-shot Skill-GP adaptation; see [`SkillGpSolver`].
pub fn skill_gp_adapt(
    skill: &SkillModel,
    anchors: &AnchorSet,
    demo: &Demonstration,
    weights: ObjectiveWeights,
) -> Result<AdaptResult> {
    SkillGpSolver::new(skill, demo, weights)?.solve(anchors)
}
