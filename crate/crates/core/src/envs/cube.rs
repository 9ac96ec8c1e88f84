//! Cube pushing on a table with a fixed cylindrical obstacle.

use super::{FailureReason, Pose, Scene};
use crate::skill::PoseTwistAccel;

pub const CUBE_HALF: f64 = 0.025;
pub const NOMINAL_CUBE: [f64; 3] = [0.45, 0.0, CUBE_HALF];
/// Where the push-sweep demonstration leaves the cube.
pub const NOMINAL_GOAL: [f64; 3] = [0.775, 0.0, CUBE_HALF];
pub const OBSTACLE_CENTER: [f64; 2] = [0.62, -0.36];
pub const OBSTACLE_RADIUS: f64 = 0.05;
pub const OBSTACLE_HEIGHT: f64 = 0.10;

pub(crate) struct CubeScene {
    cube: [f64; 2],
    jitter: [f64; 2],
    goal: [f64; 2],
    contact_radius: f64,
    goal_tolerance: f64,
}

impl CubeScene {
    pub(crate) fn new(cube: [f64; 3], goal: [f64; 3], contact_radius: f64, goal_tolerance: f64) -> Self {
        Self {
            cube: [cube[0], cube[1]],
            jitter: [0.0; 2],
            goal: [goal[0], goal[1]],
            contact_radius,
            goal_tolerance,
        }
    }

    fn observed(&self) -> [f64; 2] {
        [self.cube[0] + self.jitter[0], self.cube[1] + self.jitter[1]]
    }
}

/// Distance from `p` to an axis-aligned square footprint (0 inside).
pub fn distance_to_square(p: [f64; 2], center: [f64; 2], half: f64) -> f64 {
    let dx = ((p[0] - center[0]).abs() - half).max(0.0);
    let dy = ((p[1] - center[1]).abs() - half).max(0.0);
    (dx * dx + dy * dy).sqrt()
}

pub fn in_obstacle(p: [f64; 3]) -> bool {
    let dx = p[0] - OBSTACLE_CENTER[0];
    let dy = p[1] - OBSTACLE_CENTER[1];
    p[2] <= OBSTACLE_HEIGHT && (dx * dx + dy * dy).sqrt() <= OBSTACLE_RADIUS
}

impl Scene for CubeScene {
    fn step(&mut self, prev: &PoseTwistAccel, cur: &PoseTwistAccel) -> Option<FailureReason> {
        let p = cur.position;
        if p[2] < 0.0 || in_obstacle(p) {
            return Some(FailureReason::Collision);
        }
        let c = self.observed();
        let q = [prev.position[0], prev.position[1]];
        if prev.position[2] <= 2.0 * CUBE_HALF && distance_to_square(q, c, CUBE_HALF) <= self.contact_radius {
            let d = [p[0] - q[0], p[1] - q[1]];
            let toward = (c[0] - q[0]) * d[0] + (c[1] - q[1]) * d[1];
            if toward > 0.0 {
                self.cube[0] += d[0];
                self.cube[1] += d[1];
            }
        }
        if distance_to_square(OBSTACLE_CENTER, self.observed(), CUBE_HALF) <= OBSTACLE_RADIUS {
            return Some(FailureReason::Collision);
        }
        None
    }

    fn finish(&self) -> (FailureReason, Pose) {
        let c = self.observed();
        let d = ((c[0] - self.goal[0]).powi(2) + (c[1] - self.goal[1]).powi(2)).sqrt();
        let reason = if d <= self.goal_tolerance {
            FailureReason::None
        } else {
            FailureReason::GoalMissed
        };
        (reason, Pose::at([c[0], c[1], CUBE_HALF]))
    }

    fn shift_object(&mut self, shift: [f64; 2]) {
        self.cube[0] += shift[0];
        self.cube[1] += shift[1];
    }

    fn set_jitter(&mut self, jitter: [f64; 2]) {
        self.jitter = jitter;
    }
}
