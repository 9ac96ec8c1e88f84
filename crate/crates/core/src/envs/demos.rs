//! Synthetic demonstrations, one per task family.
//!
//! Each is an analytic 8 s pose curve built from minimum-jerk blends. Scene
//! geometry in the sibling modules is placed so every demonstration
//! succeeds at zero offset.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::skill::Demonstration;
use crate::so3;

pub const DEMO_DURATION: f64 = 8.0;
pub const DEMO_SAMPLES: usize = 401;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemoShape {
    /// Arcing reach to a drawer handle followed by a straight pull.
    SineArc,
    /// Descending approach that sweeps a cube along +x.
    PushSweep,
    /// Approach above a bar, vertical descent, then lift and carry.
    LiftAndCarry,
}

impl DemoShape {
    pub const ALL: [DemoShape; 3] = [DemoShape::SineArc, DemoShape::PushSweep, DemoShape::LiftAndCarry];

    pub fn name(&self) -> &'static str {
        match self {
            DemoShape::SineArc => "sine-arc",
            DemoShape::PushSweep => "push-sweep",
            DemoShape::LiftAndCarry => "lift-and-carry",
        }
    }

    /// Phase at which the tool meets the manipulated object.
    pub fn contact_phase(&self) -> f64 {
        match self {
            DemoShape::SineArc => 0.55,
            DemoShape::PushSweep => 0.5,
            DemoShape::LiftAndCarry => 0.55,
        }
    }

    /// Position and rotation vector at phase `s ∈ [0, 1]`.
    pub fn pose(&self, s: f64) -> ([f64; 3], [f64; 3]) {
        match self {
            DemoShape::SineArc => {
                let u = window(s, 0.0, 0.55);
                let w = window(s, 0.55, 1.0);
                let p = [
                    0.25 + 0.365 * u - 0.215 * w,
                    0.25 * (1.0 - u),
                    0.35 - 0.15 * u + 0.08 * (std::f64::consts::PI * u).sin(),
                ];
                let r = [0.1 * (std::f64::consts::PI * s).sin(), 1.4 + 0.1 * u, 0.2 * (1.0 - u)];
                (p, r)
            }
            DemoShape::PushSweep => {
                let p = [
                    0.15 + 0.57 * min_jerk(s),
                    0.30 * (1.0 - window(s, 0.0, 0.4)),
                    0.02 + 0.28 * (1.0 - window(s, 0.0, 0.42)),
                ];
                let r = [
                    2.8 + 0.1 * min_jerk(s),
                    0.15 * (std::f64::consts::PI * s).sin(),
                    0.3 * min_jerk(s),
                ];
                (p, r)
            }
            DemoShape::LiftAndCarry => {
                let start = [0.30, -0.25, 0.40];
                let above = [0.55, 0.0, 0.30];
                let grasp = [0.55, 0.0, 0.125];
                let lift = [0.50, -0.15, 0.40];
                let a = window(s, 0.0, 0.35);
                let b = window(s, 0.35, 0.55);
                let c = window(s, 0.55, 1.0);
                let p = std::array::from_fn(|k| {
                    start[k] + a * (above[k] - start[k]) + b * (grasp[k] - above[k]) + c * (lift[k] - grasp[k])
                });
                let r = [2.9, 0.05 * (std::f64::consts::PI * s).sin(), 0.2 * a - 0.3 * c];
                (p, r)
            }
        }
    }

    /// Densely sampled demonstration of this shape.
    pub fn demonstration(&self) -> Result<Demonstration> {
        let n = DEMO_SAMPLES;
        let mut times = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        let mut orientations = Vec::with_capacity(n);
        for i in 0..n {
            let s = i as f64 / (n - 1) as f64;
            let (p, r) = self.pose(s);
            times.push(s * DEMO_DURATION);
            positions.push(p);
            orientations.push(so3::rotvec_to_quat(r));
        }
        Demonstration::new(times, positions, orientations)
    }
}

/// Minimum-jerk blend `10s³ − 15s⁴ + 6s⁵` on `[0, 1]`, clamped outside.
pub fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

fn window(s: f64, a: f64, b: f64) -> f64 {
    min_jerk((s - a) / (b - a))
}
