//! Rotation vectors, quaternions and the SO(3) left Jacobian.
//!
//! Quaternions are stored as `[w, x, y, z]`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{invalid, Result};

/// Below this angle the left Jacobian switches to its Taylor expansion.
pub const SMALL_ANGLE: f64 = 1e-6;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left Jacobian `J_l(r)` of the SO(3) exponential map.
pub fn left_jacobian(r: &[f64; 3]) -> Matrix3<f64> {
    let v = Vector3::from(*r);
    let phi = v.norm();
    let k = skew(&v);
    let k2 = k * k;
    if phi < SMALL_ANGLE {
        return Matrix3::identity() + 0.5 * k + (1.0 / 6.0) * k2;
    }
    let half = (0.5 * phi).sin();
    let a = 2.0 * half * half / (phi * phi);
    let b = if phi < 1e-2 {
        let p2 = phi * phi;
        1.0 / 6.0 - p2 / 120.0 + p2 * p2 / 5040.0 - p2 * p2 * p2 / 362_880.0
    } else {
        (phi - phi.sin()) / (phi * phi * phi)
    };
    Matrix3::identity() + a * k + b * k2
}

/// Maps a rotation-vector rate to the world-frame angular velocity `J_l(r)·ṙ`.
pub fn rotvec_rate_to_angular_velocity(r: [f64; 3], r_dot: [f64; 3]) -> [f64; 3] {
    let w = left_jacobian(&r) * Vector3::from(r_dot);
    [w.x, w.y, w.z]
}

/// Normalises a quaternion, rejecting zero or non-finite input.
pub fn normalize_quat(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !n.is_finite() || n < 1e-12 {
        return Err(invalid("quaternion has zero or non-finite norm"));
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

/// Principal log map: rotation vector with angle in `[0, π]`.
pub fn quat_to_rotvec(q: [f64; 4]) -> Result<[f64; 3]> {
    let q = normalize_quat(q)?;
    let (w, v) = if q[0] < 0.0 {
        (-q[0], [-q[1], -q[2], -q[3]])
    } else {
        (q[0], [q[1], q[2], q[3]])
    };
    let s = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if s < 1e-300 {
        return Ok([0.0; 3]);
    }
    let angle = 2.0 * s.atan2(w);
    let f = angle / s;
    Ok([v[0] * f, v[1] * f, v[2] * f])
}

pub fn rotvec_to_quat(r: [f64; 3]) -> [f64; 4] {
    let phi = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    if phi < 1e-12 {
        let q = [1.0, 0.5 * r[0], 0.5 * r[1], 0.5 * r[2]];
        return normalize_quat(q).unwrap_or([1.0, 0.0, 0.0, 0.0]);
    }
    let s = (0.5 * phi).sin() / phi;
    [(0.5 * phi).cos(), r[0] * s, r[1] * s, r[2] * s]
}

/// Among the rotation vectors equivalent to `r`, the one closest to `prev`.
///
/// Equivalent vectors differ by multiples of 2π along the rotation axis.
pub fn nearest_equivalent(r: [f64; 3], prev: [f64; 3]) -> [f64; 3] {
    let v = Vector3::from(r);
    let p = Vector3::from(prev);
    let angle = v.norm();
    let two_pi = 2.0 * std::f64::consts::PI;
    let axis = if angle > 1e-12 {
        v / angle
    } else if p.norm() > 1e-12 {
        p / p.norm()
    } else {
        return r;
    };
    let k0 = ((axis.dot(&p) - angle) / two_pi).round();
    let mut best = v;
    let mut best_dist = (v - p).norm();
    for dk in [-1.0, 0.0, 1.0] {
        let cand = axis * (angle + two_pi * (k0 + dk));
        let d = (cand - p).norm();
        if d < best_dist {
            best = cand;
            best_dist = d;
        }
    }
    [best.x, best.y, best.z]
}

/// Log map of each quaternion with 2π unwrapping for a continuous series.
pub fn to_rotation_vectors(quats: &[[f64; 4]]) -> Result<Vec<[f64; 3]>> {
    let mut out: Vec<[f64; 3]> = Vec::with_capacity(quats.len());
    for q in quats {
        let r = quat_to_rotvec(*q)?;
        let r = match out.last() {
            Some(prev) => nearest_equivalent(r, *prev),
            None => r,
        };
        out.push(r);
    }
    Ok(out)
}

/// Rotation angle between two orientations, invariant to quaternion sign.
pub fn quat_angle(a: [f64; 4], b: [f64; 4]) -> f64 {
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    2.0 * dot.abs().clamp(0.0, 1.0).acos()
}
