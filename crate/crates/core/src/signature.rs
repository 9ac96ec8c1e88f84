//! Depth-3 truncated path signatures and the normalised signature similarity.

use crate::error::{invalid, Result};
use crate::skill::SkillModel;

pub const DEPTH: usize = 3;
/// Samples taken from each path for the median heuristic.
pub const MEDIAN_SAMPLES_PER_PATH: usize = 256;
/// Signature norms below this are treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-24;

/// Uniformly time-indexed samples of a path in R³.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityPath {
    samples: Vec<[f64; 3]>,
}

impl VelocityPath {
    pub fn new(samples: Vec<[f64; 3]>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(invalid(format!("a path needs at least 2 samples, got {}", samples.len())));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("path samples must be finite"));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[[f64; 3]] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s.map(|v| v * factor)).collect(),
        }
    }
}

/// Levels 1 to 3 of a signature, indices in lexicographic order
/// (`level2[3i + j]`, `level3[9i + 3j + k]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignatureTensor {
    pub level1: [f64; 3],
    pub level2: [f64; 9],
    pub level3: [f64; 27],
}

impl SignatureTensor {
    pub fn zero() -> Self {
        Self {
            level1: [0.0; 3],
            level2: [0.0; 9],
            level3: [0.0; 27],
        }
    }

    /// Signature of a single linear segment with increment `d`.
    pub fn segment(d: [f64; 3]) -> Self {
        let mut s = Self::zero();
        s.level1 = d;
        for i in 0..3 {
            for j in 0..3 {
                s.level2[3 * i + j] = d[i] * d[j] / 2.0;
                for k in 0..3 {
                    s.level3[9 * i + 3 * j + k] = d[i] * d[j] * d[k] / 6.0;
                }
            }
        }
        s
    }

    /// Chen product: signature of `self` followed by `other`.
    pub fn concat(&self, other: &Self) -> Self {
        let (a, b) = (self, other);
        let mut s = Self::zero();
        for i in 0..3 {
            s.level1[i] = a.level1[i] + b.level1[i];
            for j in 0..3 {
                let ij = 3 * i + j;
                s.level2[ij] = a.level2[ij] + a.level1[i] * b.level1[j] + b.level2[ij];
                for k in 0..3 {
                    let ijk = 9 * i + 3 * j + k;
                    s.level3[ijk] = a.level3[ijk]
                        + a.level2[ij] * b.level1[k]
                        + a.level1[i] * b.level2[3 * j + k]
                        + b.level3[ijk];
                }
            }
        }
        s
    }

    /// Flattened inner product over levels 1 to 3.
    pub fn dot(&self, other: &Self) -> f64 {
        let mut acc = 0.0;
        for (x, y) in self.level1.iter().zip(&other.level1) {
            acc += x * y;
        }
        for (x, y) in self.level2.iter().zip(&other.level2) {
            acc += x * y;
        }
        for (x, y) in self.level3.iter().zip(&other.level3) {
            acc += x * y;
        }
        acc
    }
}

/// Signature of the piecewise-linear interpolation of `path`.
pub fn truncated_signature(path: &VelocityPath, depth: usize) -> Result<SignatureTensor> {
    if depth != DEPTH {
        return Err(invalid(format!("only depth {DEPTH} is supported, got {depth}")));
    }
    let s = path.samples();
    let mut sig = SignatureTensor::zero();
    for w in s.windows(2) {
        let d = [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2] - w[0][2]];
        sig = sig.concat(&SignatureTensor::segment(d));
    }
    // Level 1 is the exact endpoint displacement, free of summation error.
    let (first, last) = (s[0], s[s.len() - 1]);
    sig.level1 = [last[0] - first[0], last[1] - first[1], last[2] - first[2]];
    Ok(sig)
}

/// Signature kernel: plain inner product of truncated signatures.
pub fn signature_kernel(a: &SignatureTensor, b: &SignatureTensor) -> f64 {
    a.dot(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityScore {
    /// Similarity clamped to `[0, 1]`.
    pub value: f64,
    /// Normalised kernel before clamping.
    pub raw: f64,
    /// Set when either path has a zero signature.
    pub degenerate: bool,
}

fn subsample(samples: &[[f64; 3]], limit: usize) -> Vec<[f64; 3]> {
    if samples.len() <= limit {
        return samples.to_vec();
    }
    (0..limit).map(|k| samples[k * samples.len() / limit]).collect()
}

/// Median pairwise distance among pooled samples of both paths.
pub fn median_heuristic(a: &VelocityPath, b: &VelocityPath) -> f64 {
    let mut pool = subsample(a.samples(), MEDIAN_SAMPLES_PER_PATH);
    pool.extend(subsample(b.samples(), MEDIAN_SAMPLES_PER_PATH));
    let mut d = Vec::with_capacity(pool.len() * (pool.len() - 1) / 2);
    for i in 0..pool.len() {
        for j in i + 1..pool.len() {
            let (p, q) = (pool[i], pool[j]);
            d.push(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    }
}

/// Normalised signature similarity after median-heuristic rescaling.
pub fn similarity(a: &VelocityPath, b: &VelocityPath) -> SimilarityScore {
    let ell = median_heuristic(a, b);
    let scale = if ell.is_finite() && ell > 0.0 { 1.0 / ell } else { 1.0 };
    let sa = truncated_signature(&a.scaled(scale), DEPTH).expect("validated path");
    let sb = truncated_signature(&b.scaled(scale), DEPTH).expect("validated path");
    similarity_of_signatures(&sa, &sb)
}

/// Normalised kernel between two precomputed signatures.
pub fn similarity_of_signatures(sa: &SignatureTensor, sb: &SignatureTensor) -> SimilarityScore {
    let kaa = sa.dot(sa);
    let kbb = sb.dot(sb);
    let za = kaa <= DEGENERATE_NORM;
    let zb = kbb <= DEGENERATE_NORM;
    if za || zb {
        let value = if za && zb { 1.0 } else { 0.0 };
        return SimilarityScore {
            value,
            raw: value,
            degenerate: true,
        };
    }
    let raw = sa.dot(sb) / (kaa * kbb).sqrt();
    SimilarityScore {
        value: raw.clamp(0.0, 1.0),
        raw,
        degenerate: false,
    }
}

/// Linear and angular velocity paths of a skill at `n` uniform phases.
pub fn skill_velocity_paths(skill: &SkillModel, n: usize) -> (VelocityPath, VelocityPath) {
    let samples = skill.sample_uniform(n);
    let lin = samples.iter().map(|s| s.linear_velocity).collect();
    let ang = samples.iter().map(|s| s.angular_velocity()).collect();
    (
        VelocityPath::new(lin).expect("finite skill samples"),
        VelocityPath::new(ang).expect("finite skill samples"),
    )
}

/// Equal-weight average of the linear and angular velocity similarities.
pub fn skill_similarity(adapted: &SkillModel, demo: &SkillModel, n: usize) -> f64 {
    let (la, aa) = skill_velocity_paths(adapted, n);
    let (ld, ad) = skill_velocity_paths(demo, n);
    0.5 * (similarity(&la, &ld).value + similarity(&aa, &ad).value)
}
