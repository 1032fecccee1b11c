use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use thetawave::hyperelliptic::{BranchPointList, Involution, Surface};
use thetawave::vinnikov::{reality_matrix_from_riemann, IngestedPeriods};
use thetawave::CMat;

fn surface(points: &[f64]) -> Surface {
    let pts = points.iter().map(|&x| C64::new(x, 0.0)).collect();
    Surface::new(
        BranchPointList::new(pts, 1.0, Involution::Tau2).unwrap(),
        128,
    )
    .unwrap()
}

fn agm(mut a: f64, mut b: f64) -> f64 {
    // quadratic convergence: a handful of steps reach the last ulp
    for _ in 0..32 {
        (a, b) = (0.5 * (a + b), (a * b).sqrt());
    }
    a
}

/// Complete elliptic integral of the first kind, modulus k.
fn ellip_k(k: f64) -> f64 {
    PI / (2.0 * agm(1.0, (1.0 - k * k).sqrt()))
}

fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn genus_one_agm() {
    // A-period 2∫₁² dλ/√((λ²−1)(4−λ²)) = K(√3/2), gap 2∫₀¹ = K(½)
    let s = surface(&[-2.0, -1.0, 1.0, 2.0]);
    let b = s.riemann()[(0, 0)];
    let want = -4.0 * PI * ellip_k(0.5) / ellip_k(3f64.sqrt() / 2.0);
    assert!(
        (b - C64::new(want, 0.0)).norm() < 1e-12 * want.abs(),
        "{b} vs {want}"
    );
}

#[test]
fn genus_one_general_cuts() {
    // λ₁<λ₂<λ₃<λ₄: 𝔹 = −2π K(k')/K(k) with k² = (λ₄−λ₁)(λ₃−λ₂)/((λ₄−λ₂)(λ₃−λ₁))
    for pts in [
        [-3.0, -0.5, 0.25, 4.0],
        [0.0, 1.0, 1.5, 7.0],
        [-1.0, 0.0, 10.0, 10.5],
    ] {
        let s = surface(&pts);
        let b = s.riemann()[(0, 0)];
        let [l1, l2, l3, l4] = pts;
        let k2 = (l2 - l1) * (l4 - l3) / ((l3 - l1) * (l4 - l2));
        let want = -2.0 * PI * ellip_k((1.0 - k2).sqrt()) / ellip_k(k2.sqrt());
        assert!(
            (b.re - want).abs() < 1e-12 * want.abs() && b.im.abs() < 1e-12,
            "{pts:?}: {b} vs {want}"
        );
    }
}

#[test]
fn riemann_properties_all_genera() {
    let curves: Vec<Vec<f64>> = vec![
        vec![-2.0, -1.0, 1.0, 2.0],
        vec![-2.0, -1.0, 0.0, 1.0, 2.0, 3.0],
        vec![-2.0, -1.0, 0.0, 1e-10, 2.0, 2.0 + 1e-10],
        vec![-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0],
        vec![-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        vec![
            -4.0,
            -3.0,
            -2.0,
            -2.0 + 1e-10,
            0.0,
            1e-10,
            2.0,
            2.0 + 1e-10,
            4.0,
            4.0 + 1e-10,
        ],
    ];
    for pts in curves {
        let s = surface(&pts);
        let b = s.riemann();
        assert!(max_abs(&(b - b.transpose())) < 1e-10, "{pts:?}");
        assert!(s.max_real_eigenvalue() < 0.0);
        assert!(b.iter().all(|z| z.im.abs() < 1e-10), "{pts:?}");
        assert!(reality_matrix_from_riemann(b).iter().all(|&v| v == 0));
        // phase-normalised A-periods are real on an M-curve
        let ing = IngestedPeriods::from_period_data(&s.periods, "m").unwrap();
        assert!(ing.pa.iter().all(|z| z.im.abs() < 1e-10 * max_abs(&ing.pa)));
    }
}

#[test]
fn degeneration_grows_logarithmically() {
    let diag = |eps: f64| {
        let s = surface(&[-2.0, -1.0, 0.0, eps, 2.0, 2.0 + eps]);
        (s.riemann()[(0, 0)].re, s.riemann()[(1, 1)].re)
    };
    let (a5, b5) = diag(1e-5);
    let (a10, b10) = diag(1e-10);
    // each shrinking cut adds ≈ 2 ln(1e-5) to its diagonal entry
    let step = 2.0 * 1e-5f64.ln();
    for (x, y) in [(a5, a10), (b5, b10)] {
        assert!(((y - x) / step - 1.0).abs() < 1e-3, "{x} → {y}");
    }
}

#[test]
fn stress_separation() {
    let s = surface(&[-2.0, -1.0, 0.0, 1e-14, 2.0, 2.0 + 1e-14]);
    let b = s.riemann();
    assert!(max_abs(&(b - b.transpose())) < 1e-10 * max_abs(b).max(1.0));
    assert!(s.max_real_eigenvalue() < 0.0);
}

#[test]
fn conjugate_points_reality() {
    let pts = vec![
        C64::new(-2.0, 1.0),
        C64::new(-2.0, -1.0),
        C64::new(0.5, 2.0),
        C64::new(0.5, -2.0),
        C64::new(3.0, 0.5),
        C64::new(3.0, -0.5),
    ];
    let s = Surface::new(
        BranchPointList::new(pts, 1.0, Involution::Tau2).unwrap(),
        128,
    )
    .unwrap();
    let b = s.riemann();
    assert!(max_abs(&(b - b.transpose())) < 1e-10);
    assert!(s.max_real_eigenvalue() < 0.0);
    // Im 𝔹 ≡ πℍ (mod 2π) with ℍ ≠ 0
    for z in b.iter() {
        let t = z.im / PI;
        assert!((t - t.round()).abs() < 1e-10, "{z}");
    }
    assert!(reality_matrix_from_riemann(b).iter().any(|&v| v != 0));
}
