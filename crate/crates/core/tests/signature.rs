use proptest::prelude::*;
use viaskill::signature::{similarity, truncated_signature, SignatureTensor, VelocityPath, DEPTH};

/// Iterated integrals of a piecewise-linear path by midpoint quadrature on
/// `sub` subdivisions of every segment.
fn quadrature_signature(points: &[[f64; 3]], sub: usize) -> SignatureTensor {
    let x0 = points[0];
    let mut s1 = [0.0; 3];
    let mut s2 = [0.0; 9];
    let mut s3 = [0.0; 27];
    for w in points.windows(2) {
        let step: [f64; 3] = std::array::from_fn(|i| (w[1][i] - w[0][i]) / sub as f64);
        for m in 0..sub {
            let a: [f64; 3] = std::array::from_fn(|i| w[0][i] + m as f64 * step[i] - x0[i]);
            let mid: [f64; 3] = std::array::from_fn(|i| a[i] + 0.5 * step[i]);
            let mut s2_mid = s2;
            for i in 0..3 {
                for j in 0..3 {
                    s2_mid[3 * i + j] += (a[i] + 0.25 * step[i]) * 0.5 * step[j];
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        s3[9 * i + 3 * j + k] += s2_mid[3 * i + j] * step[k];
                    }
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    s2[3 * i + j] += mid[i] * step[j];
                }
            }
            for i in 0..3 {
                s1[i] += step[i];
            }
        }
    }
    SignatureTensor {
        level1: s1,
        level2: s2,
        level3: s3,
    }
}

fn flat(s: &SignatureTensor) -> Vec<f64> {
    s.level1.iter().chain(&s.level2).chain(&s.level3).copied().collect()
}

fn max_diff(a: &SignatureTensor, b: &SignatureTensor) -> f64 {
    flat(a).iter().zip(flat(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn direct_similarity(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let pool: Vec<[f64; 3]> = a.iter().chain(b).copied().collect();
    let mut d = Vec::new();
    for (i, p) in pool.iter().enumerate() {
        for q in &pool[..i] {
            d.push((0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>().sqrt());
        }
    }
    let n = d.len();
    let upper = *d.select_nth_unstable_by(n / 2, f64::total_cmp).1;
    let median = if n % 2 == 1 {
        upper
    } else {
        let lower = d[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    let scale = |p: &[[f64; 3]]| p.iter().map(|v| v.map(|x| x / median)).collect::<Vec<_>>();
    let sa = flat(&quadrature_signature(&scale(a), 200));
    let sb = flat(&quadrature_signature(&scale(b), 200));
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    dot(&sa, &sb) / (dot(&sa, &sa) * dot(&sb, &sb)).sqrt()
}

fn wiggle(n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            [
                (3.0 * t).sin(),
                0.5 * (5.0 * t).cos() - 0.2 * t,
                t * t - 0.3 * (7.0 * t).sin(),
            ]
        })
        .collect()
}

#[test]
fn two_segment_path_matches_quadrature() {
    let points = [[0.0, 0.0, 0.0], [1.0, 0.5, -0.25], [0.25, 1.5, 0.75]];
    let path = VelocityPath::new(points.to_vec()).unwrap();
    let sig = truncated_signature(&path, DEPTH).unwrap();
    let oracle = quadrature_signature(&points, 10_000);
    assert!(max_diff(&sig, &oracle) < 1e-6, "{}", max_diff(&sig, &oracle));
}

#[test]
fn curved_path_matches_quadrature() {
    let points = wiggle(60);
    let sig = truncated_signature(&VelocityPath::new(points.clone()).unwrap(), DEPTH).unwrap();
    let oracle = quadrature_signature(&points, 200);
    assert!(max_diff(&sig, &oracle) < 1e-6, "{}", max_diff(&sig, &oracle));
}

#[test]
fn doubled_path_similarity_matches_direct_computation() {
    let x = wiggle(120);
    let doubled: Vec<[f64; 3]> = x.iter().map(|v| v.map(|c| 2.0 * c)).collect();
    let got = similarity(&VelocityPath::new(x.clone()).unwrap(), &VelocityPath::new(doubled.clone()).unwrap());
    let want = direct_similarity(&x, &doubled);
    assert!(!got.degenerate);
    assert!((got.raw - want).abs() < 1e-6, "{} vs {}", got.raw, want);
    assert!(got.value < 1.0);
}

#[test]
fn short_and_invalid_paths_rejected() {
    assert!(VelocityPath::new(vec![[0.0; 3]]).is_err());
    assert!(VelocityPath::new(vec![[0.0; 3], [f64::INFINITY, 0.0, 0.0]]).is_err());
}

fn arb_path(max: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-2.0..2.0f64), 2..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn concatenation_obeys_chen(a in arb_path(20), b in arb_path(20)) {
        let last = *a.last().unwrap();
        let shifted: Vec<[f64; 3]> = b.iter().map(|p| std::array::from_fn(|k| p[k] - b[0][k] + last[k])).collect();
        let mut joined = a.clone();
        joined.extend_from_slice(&shifted[1..]);
        let sa = truncated_signature(&VelocityPath::new(a).unwrap(), DEPTH).unwrap();
        let sb = truncated_signature(&VelocityPath::new(shifted).unwrap(), DEPTH).unwrap();
        let sj = truncated_signature(&VelocityPath::new(joined).unwrap(), DEPTH).unwrap();
        let scale = flat(&sj).iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(max_diff(&sa.concat(&sb), &sj) <= 1e-10 * scale);
    }

    #[test]
    fn level_one_is_exact_displacement(p in arb_path(40)) {
        let s = truncated_signature(&VelocityPath::new(p.clone()).unwrap(), DEPTH).unwrap();
        let (first, last) = (p[0], p[p.len() - 1]);
        for k in 0..3 {
            prop_assert_eq!(s.level1[k], last[k] - first[k]);
        }
    }

    #[test]
    fn similarity_is_symmetric_and_bounded(a in arb_path(30), b in arb_path(30)) {
        let (pa, pb) = (VelocityPath::new(a).unwrap(), VelocityPath::new(b).unwrap());
        let ab = similarity(&pa, &pb);
        let ba = similarity(&pb, &pa);
        prop_assert!((ab.raw - ba.raw).abs() < 1e-12);
        prop_assert!(ab.raw.abs() <= 1.0 + 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.value));
    }

    #[test]
    fn self_similarity_is_one(a in arb_path(30)) {
        let p = VelocityPath::new(a).unwrap();
        let s = similarity(&p, &p);
        prop_assume!(!s.degenerate);
        prop_assert!((s.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn similarity_ignores_common_translation(a in arb_path(30), b in arb_path(30), shift in prop::array::uniform3(-5.0..5.0f64)) {
        let mv = |p: &[[f64; 3]]| p.iter().map(|q| std::array::from_fn(|k| q[k] + shift[k])).collect::<Vec<[f64; 3]>>();
        let x = similarity(&VelocityPath::new(a.clone()).unwrap(), &VelocityPath::new(b.clone()).unwrap());
        let y = similarity(&VelocityPath::new(mv(&a)).unwrap(), &VelocityPath::new(mv(&b)).unwrap());
        prop_assume!(!x.degenerate);
        prop_assert!((x.raw - y.raw).abs() < 1e-6);
    }
}
