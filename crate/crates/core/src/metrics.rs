//! Kinematic comparison of an adapted skill against the demonstration.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::skill::SkillModel;

pub const DEFAULT_PROFILE_SAMPLES: usize = 200;
/// Velocities with a smaller norm count as zero.
pub const ZERO_SPEED: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    pub cosine: Vec<f64>,
    pub mean_cosine: f64,
    pub magnitude_error: Vec<f64>,
    pub mean_abs_magnitude_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicComparison {
    pub linear: SimilarityProfile,
    pub angular: SimilarityProfile,
}

fn norm(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Cosine between two vectors: 1 when both are near zero, 0 when exactly one is.
pub fn guarded_cosine(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    match (na < ZERO_SPEED, nb < ZERO_SPEED) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => ((a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb)).clamp(-1.0, 1.0),
    }
}

/// Per-sample cosine and speed error between two equally long velocity series.
pub fn profile(adapted: &[[f64; 3]], reference: &[[f64; 3]]) -> SimilarityProfile {
    let cosine: Vec<f64> = adapted.iter().zip(reference).map(|(a, b)| guarded_cosine(a, b)).collect();
    let magnitude_error: Vec<f64> = adapted
        .iter()
        .zip(reference)
        .map(|(a, b)| (norm(a) - norm(b)).abs())
        .collect();
    let n = cosine.len().max(1) as f64;
    SimilarityProfile {
        mean_cosine: cosine.iter().sum::<f64>() / n,
        mean_abs_magnitude_error: magnitude_error.iter().sum::<f64>() / n,
        cosine,
        magnitude_error,
    }
}

/// Compares velocities of two skills at `n_samples` uniform phases.
pub fn compare_kinematics(
    adapted: &SkillModel,
    demo_skill: &SkillModel,
    n_samples: usize,
) -> Result<KinematicComparison> {
    if n_samples < 10 {
        return Err(invalid(format!("need at least 10 samples, got {n_samples}")));
    }
    let a = adapted.sample_uniform(n_samples);
    let d = demo_skill.sample_uniform(n_samples);
    let lin_a: Vec<_> = a.iter().map(|s| s.linear_velocity).collect();
    let lin_d: Vec<_> = d.iter().map(|s| s.linear_velocity).collect();
    let ang_a: Vec<_> = a.iter().map(|s| s.angular_velocity()).collect();
    let ang_d: Vec<_> = d.iter().map(|s| s.angular_velocity()).collect();
    Ok(KinematicComparison {
        linear: profile(&lin_a, &lin_d),
        angular: profile(&ang_a, &ang_d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_cases() {
        assert_eq!(guarded_cosine(&[0.0; 3], &[0.0; 3]), 1.0);
        assert_eq!(guarded_cosine(&[0.0; 3], &[1.0, 0.0, 0.0]), 0.0);
        assert_eq!(guarded_cosine(&[2.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]), -1.0);
    }

    #[test]
    fn profile_of_scaled_copy() {
        let b: Vec<[f64; 3]> = (0..30).map(|i| [i as f64 * 0.01, 0.2, -0.1]).collect();
        let a: Vec<[f64; 3]> = b.iter().map(|v| v.map(|x| 2.0 * x)).collect();
        let p = profile(&a, &b);
        assert!(p.cosine.iter().all(|c| (c - 1.0).abs() < 1e-12));
        let mean_speed = b.iter().map(norm).sum::<f64>() / b.len() as f64;
        assert!((p.mean_abs_magnitude_error - mean_speed).abs() < 1e-12);
    }
}
