//! Bar removal: grasp one of two parallel bars on a conveyor and lift it clear.

use super::{FailureReason, Pose, Scene};
use crate::skill::PoseTwistAccel;

pub const CONVEYOR_HEIGHT: f64 = 0.10;
pub const CONVEYOR_X: [f64; 2] = [0.25, 0.85];
pub const CONVEYOR_Y: [f64; 2] = [-0.60, 0.60];
pub const BAR_HALF: [f64; 3] = [0.10, 0.015, 0.015];
pub const NOMINAL_BAR: [f64; 3] = [0.55, 0.0, CONVEYOR_HEIGHT + 0.015];
/// The second bar sits this far along +y from the target bar.
pub const BAR_SPACING: f64 = 0.10;
/// Grasp box half extents, centred slightly above the bar centre.
pub const GRASP_HALF: [f64; 3] = [0.06, 0.025, 0.025];
pub const GRASP_RAISE: f64 = 0.01;
/// Clearance kept between the tool point and a bar it is not grasping.
pub const TOOL_MARGIN: f64 = 0.02;

pub(crate) struct BarScene {
    bar: [f64; 3],
    other: [f64; 3],
    grasp_offset: Option<[f64; 3]>,
    carried: [f64; 3],
    cleared: bool,
    min_alignment_cos: f64,
    clearance: f64,
}

fn inside(p: [f64; 3], c: [f64; 3], half: [f64; 3]) -> bool {
    (0..3).all(|k| (p[k] - c[k]).abs() <= half[k])
}

fn boxes_overlap(a: [f64; 3], b: [f64; 3], half: [f64; 3]) -> bool {
    (0..3).all(|k| (a[k] - b[k]).abs() < 2.0 * half[k])
}

impl BarScene {
    pub(crate) fn new(bar: [f64; 3], alignment_deg: f64, clearance: f64) -> Self {
        Self {
            bar,
            other: [bar[0], bar[1] + BAR_SPACING, bar[2]],
            grasp_offset: None,
            carried: bar,
            cleared: false,
            min_alignment_cos: alignment_deg.to_radians().cos(),
            clearance,
        }
    }

    fn grasp_center(&self) -> [f64; 3] {
        [self.bar[0], self.bar[1], self.bar[2] + GRASP_RAISE]
    }
}

impl Scene for BarScene {
    fn step(&mut self, prev: &PoseTwistAccel, cur: &PoseTwistAccel) -> Option<FailureReason> {
        let p = cur.position;
        let over_conveyor =
            p[0] >= CONVEYOR_X[0] && p[0] <= CONVEYOR_X[1] && p[1] >= CONVEYOR_Y[0] && p[1] <= CONVEYOR_Y[1];
        if p[2] < 0.0 || (over_conveyor && p[2] < CONVEYOR_HEIGHT) {
            return Some(FailureReason::Collision);
        }
        let inflated = BAR_HALF.map(|h| h + TOOL_MARGIN);
        if inside(p, self.other, inflated) {
            return Some(FailureReason::Collision);
        }
        match self.grasp_offset {
            None => {
                let gc = self.grasp_center();
                if inside(p, gc, GRASP_HALF) {
                    if inside(prev.position, gc, GRASP_HALF) {
                        return None;
                    }
                    let d = [p[0] - prev.position[0], p[1] - prev.position[1], p[2] - prev.position[2]];
                    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    let v = cur.linear_velocity;
                    let nv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    let down = if n > 1e-12 {
                        -d[2] / n
                    } else if nv > 1e-12 {
                        -v[2] / nv
                    } else {
                        0.0
                    };
                    if down < self.min_alignment_cos {
                        return Some(FailureReason::Collision);
                    }
                    self.grasp_offset = Some([self.bar[0] - p[0], self.bar[1] - p[1], self.bar[2] - p[2]]);
                } else if inside(p, self.bar, inflated) {
                    return Some(FailureReason::Collision);
                }
            }
            Some(off) => {
                self.carried = [p[0] + off[0], p[1] + off[1], p[2] + off[2]];
                if boxes_overlap(self.carried, self.other, BAR_HALF) {
                    return Some(FailureReason::Collision);
                }
                if self.carried[2] - BAR_HALF[2] >= CONVEYOR_HEIGHT + self.clearance {
                    self.cleared = true;
                }
            }
        }
        None
    }

    fn finish(&self) -> (FailureReason, Pose) {
        let reason = if self.cleared {
            FailureReason::None
        } else if self.grasp_offset.is_some() {
            FailureReason::Timeout
        } else {
            FailureReason::GoalMissed
        };
        (reason, Pose::at(self.carried))
    }
}
