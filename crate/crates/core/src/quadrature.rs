//! Clenshaw–Curtis quadrature and Chebyshev differentiation on the
//! Gauss–Lobatto points x_j = cos(jπ/N).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ChebyshevRule {
    pub order: usize,
    /// Strictly decreasing, `nodes[0] = 1`.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ChebyshevRule {
    /// Σ w_j h(x_j) over [-1, 1].
    pub fn integrate<T, F>(&self, mut h: F) -> T
    where
        T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
        F: FnMut(f64) -> T,
    {
        self.nodes
            .iter()
            .zip(&self.weights)
            .fold(T::default(), |acc, (&x, &w)| acc + h(x) * w)
    }
}

pub fn chebyshev_nodes(n: usize) -> Vec<f64> {
    // sin form is exactly antisymmetric about the centre
    (0..=n)
        .map(|j| ((n as f64 - 2.0 * j as f64) * PI / (2.0 * n as f64)).sin())
        .collect()
}

pub fn clenshaw_curtis_rule(n: usize) -> Result<ChebyshevRule> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "Clenshaw-Curtis order {n} < 2"
        )));
    }
    let nodes = chebyshev_nodes(n);
    let nf = n as f64;
    let weights = (0..=n)
        .map(|j| {
            let mut s = 0.0;
            for k in 0..=n / 2 {
                let b = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
                let kf = k as f64;
                s += b / (1.0 - 4.0 * kf * kf) * (2.0 * kf * j as f64 * PI / nf).cos();
            }
            let c = if j == 0 || j == n { 1.0 } else { 2.0 };
            c * s / nf
        })
        .collect();
    Ok(ChebyshevRule {
        order: n,
        nodes,
        weights,
    })
}

/// ∫ h over the straight segment z0 → z1.
pub fn integrate_segment<F>(h: F, z0: Complex64, z1: Complex64, rule: &ChebyshevRule) -> Complex64
where
    F: Fn(Complex64) -> Complex64,
{
    let half = (z1 - z0) * 0.5;
    let mut acc = Complex64::new(0.0, 0.0);
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        acc += h(z0 * (0.5 * (1.0 - x)) + z1 * (0.5 * (1.0 + x))) * w;
    }
    acc * half
}

#[derive(Debug, Clone)]
pub struct DiffMatrix {
    pub order: usize,
    pub entries: DMatrix<f64>,
}

pub fn chebyshev_diff_matrix(n: usize) -> Result<DiffMatrix> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "differentiation order {n} < 2"
        )));
    }
    let nf = n as f64;
    let c = |i: usize| if i == 0 || i == n { 2.0 } else { 1.0 };
    let mut d = DMatrix::<f64>::zeros(n + 1, n + 1);
    for i in 0..=n {
        let mut row = 0.0;
        for j in 0..=n {
            if i == j {
                continue;
            }
            // x_i - x_j without cancellation
            let dx = -2.0
                * ((i + j) as f64 * PI / (2.0 * nf)).sin()
                * ((i as f64 - j as f64) * PI / (2.0 * nf)).sin();
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            let v = c(i) / c(j) * sign / dx;
            d[(i, j)] = v;
            row += v;
        }
        d[(i, i)] = -row;
    }
    Ok(DiffMatrix {
        order: n,
        entries: d,
    })
}

impl DiffMatrix {
    pub fn apply(&self, values: &[Complex64]) -> Vec<Complex64> {
        let n = self.order + 1;
        assert_eq!(values.len(), n, "sample count must match the matrix order");
        (0..n)
            .map(|i| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, v) in values.iter().enumerate() {
                    acc += *v * self.entries[(i, j)];
                }
                acc
            })
            .collect()
    }
}

/// Physical node positions for `[u0, u1]`; node 0 sits at `u1`.
pub fn mapped_nodes(n: usize, u0: f64, u1: f64) -> Vec<f64> {
    chebyshev_nodes(n)
        .into_iter()
        .map(|x| 0.5 * (u0 + u1) + 0.5 * (u1 - u0) * x)
        .collect()
}

/// Derivative with respect to the physical coordinate of samples taken at
/// `mapped_nodes(order, u0, u1)`.
pub fn scaled_diff(
    values: &[Complex64],
    d: &DiffMatrix,
    u0: f64,
    u1: f64,
) -> Result<Vec<Complex64>> {
    if u1 == u0 {
        return Err(Error::InvalidInput("degenerate interval".into()));
    }
    let s = 2.0 / (u1 - u0);
    Ok(d.apply(values).into_iter().map(|v| v * s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_basics() {
        let r = clenshaw_curtis_rule(4).unwrap();
        assert!((r.integrate(|_| 1.0) - 2.0).abs() < 1e-15);
        let r = clenshaw_curtis_rule(16).unwrap();
        assert!((r.integrate(|x| x * x) - 2.0 / 3.0).abs() < 1e-14);
        let r = clenshaw_curtis_rule(32).unwrap();
        let e = std::f64::consts::E;
        assert!((r.integrate(f64::exp) - (e - 1.0 / e)).abs() < 1e-13);
        assert!(clenshaw_curtis_rule(1).is_err());
    }

    #[test]
    fn nodes_decrease() {
        let r = clenshaw_curtis_rule(9).unwrap();
        assert!(r.nodes.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(r.nodes[0], 1.0);
        assert_eq!(r.nodes[9], -1.0);
    }

    #[test]
    fn segment_examples() {
        let r = clenshaw_curtis_rule(48).unwrap();
        let one = Complex64::new(1.0, 0.0);
        let v = integrate_segment(|_| one, 0.0.into(), Complex64::new(1.0, 1.0), &r);
        assert!((v - Complex64::new(1.0, 1.0)).norm() < 1e-14);
        let v = integrate_segment(|z| z, (-1.0).into(), 1.0.into(), &r);
        assert!(v.norm() < 1e-15);
        let v = integrate_segment(|z| 1.0 / z, one, Complex64::new(1.0, 1.0), &r);
        assert!((v - Complex64::new(1.0, 1.0).ln()).norm() < 1e-12);
    }

    #[test]
    fn diff_polynomials() {
        let d = chebyshev_diff_matrix(8).unwrap();
        let x = chebyshev_nodes(8);
        let c: Vec<Complex64> = x.iter().map(|_| Complex64::new(3.0, 0.0)).collect();
        assert!(d.apply(&c).iter().all(|v| v.norm() < 1e-12));
        let sq: Vec<Complex64> = x.iter().map(|&t| (t * t).into()).collect();
        for (v, &t) in d.apply(&sq).iter().zip(&x) {
            assert!((v - 2.0 * t).norm() < 1e-12);
        }
    }

    #[test]
    fn scaled_examples() {
        let d = chebyshev_diff_matrix(32).unwrap();
        let u = mapped_nodes(32, 0.0, PI);
        let f: Vec<Complex64> = u.iter().map(|&t| t.cos().into()).collect();
        let df = scaled_diff(&f, &d, 0.0, PI).unwrap();
        for (v, &t) in df.iter().zip(&u) {
            assert!((v + t.sin()).norm() < 1e-9);
        }
        assert!(scaled_diff(&f, &d, 1.0, 1.0).is_err());
    }

    #[test]
    fn spectral_convergence() {
        let exact = Complex64::new(3f64.ln(), 0.0);
        let err = |n| {
            let r = clenshaw_curtis_rule(n).unwrap();
            (integrate_segment(|x| 1.0 / (2.0 + x), (-1.0).into(), 1.0.into(), &r) - exact).norm()
        };
        let (e16, e32) = (err(16), err(32));
        assert!(e32 * 100.0 <= e16 || e32 < 1e-15, "{e16:e} → {e32:e}");
    }

    #[test]
    fn weights_positive() {
        for n in [2, 3, 16, 128, 257, 1024, 4096] {
            let r = clenshaw_curtis_rule(n).unwrap();
            assert!(r.weights.iter().all(|&w| w > 0.0), "order {n}");
            assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn second_derivative_on_polynomials() {
        let n = 32;
        let d = chebyshev_diff_matrix(n).unwrap();
        let x = chebyshev_nodes(n);
        // degree n−1 with mixed coefficients
        let p = |t: f64| {
            (0..n)
                .map(|k| ((k % 5) as f64 - 2.0) * t.powi(k as i32) / (k + 1) as f64)
                .sum::<f64>()
        };
        let p2 = |t: f64| {
            (2..n)
                .map(|k| {
                    ((k % 5) as f64 - 2.0) * (k * (k - 1)) as f64 * t.powi(k as i32 - 2)
                        / (k + 1) as f64
                })
                .sum::<f64>()
        };
        let f: Vec<Complex64> = x.iter().map(|&t| p(t).into()).collect();
        let dd = d.apply(&d.apply(&f));
        for (v, &t) in dd.iter().zip(&x) {
            assert!(
                (v - p2(t)).norm() < 1e-8 * p2(t).abs().max(1.0),
                "{t}: {v} vs {}",
                p2(t)
            );
        }
    }
}
