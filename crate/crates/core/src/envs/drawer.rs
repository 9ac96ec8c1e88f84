//! Drawer opening: a prismatic drawer pulled out by its handle along −x.

use super::{FailureReason, Pose, Scene};
use crate::skill::PoseTwistAccel;

pub const NOMINAL_HANDLE: [f64; 3] = [0.60, 0.0, 0.20];
/// Half extents of the handle capture box.
pub const CAPTURE_HALF: [f64; 3] = [0.03, 0.06, 0.03];
/// Drawer front sits this far behind the handle.
pub const FRONT_OFFSET: f64 = 0.04;
pub const CABINET_DEPTH: f64 = 0.40;
pub const CABINET_HALF_WIDTH: f64 = 0.25;
/// Cabinet top above the handle height.
pub const CABINET_RISE: f64 = 0.20;

pub(crate) struct DrawerScene {
    handle: [f64; 3],
    opened: f64,
    required: f64,
}

impl DrawerScene {
    pub(crate) fn new(handle: [f64; 3], required: f64) -> Self {
        Self {
            handle,
            opened: 0.0,
            required,
        }
    }

    fn in_capture(&self, p: [f64; 3]) -> bool {
        let c = [self.handle[0] - self.opened, self.handle[1], self.handle[2]];
        (0..3).all(|k| (p[k] - c[k]).abs() <= CAPTURE_HALF[k])
    }

    fn in_cabinet(&self, p: [f64; 3]) -> bool {
        let front = self.handle[0] + FRONT_OFFSET - self.opened;
        let back = self.handle[0] + FRONT_OFFSET + CABINET_DEPTH;
        p[0] >= front
            && p[0] <= back
            && (p[1] - self.handle[1]).abs() <= CABINET_HALF_WIDTH
            && p[2] <= self.handle[2] + CABINET_RISE
    }
}

impl Scene for DrawerScene {
    fn step(&mut self, prev: &PoseTwistAccel, cur: &PoseTwistAccel) -> Option<FailureReason> {
        let p = cur.position;
        if p[2] < 0.0 || self.in_cabinet(p) {
            return Some(FailureReason::Collision);
        }
        let dx = p[0] - prev.position[0];
        if dx < 0.0 && self.in_capture(prev.position) {
            self.opened -= dx;
        }
        None
    }

    fn finish(&self) -> (FailureReason, Pose) {
        let reason = if self.opened >= self.required {
            FailureReason::None
        } else {
            FailureReason::GoalMissed
        };
        let h = self.handle;
        (reason, Pose::at([h[0] - self.opened, h[1], h[2]]))
    }
}
