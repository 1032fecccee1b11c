//! Θ[δ](z) = Σ_m exp{½⟨𝔹(m+δ₁), m+δ₁⟩ + ⟨m+δ₁, z + 2πiδ₂⟩} with
//! quasi-periodic argument reduction and term-wise directional derivatives.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::{CMat, CVec, C64, TWO_PI_I};

/// Half-integer characteristic δ = (δ₁, δ₂) stored as bits: δ₁ = a/2, δ₂ = b/2.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Characteristic {
    pub a: Vec<u8>,
    pub b: Vec<u8>,
}

impl Characteristic {
    pub fn zero(g: usize) -> Self {
        Self {
            a: vec![0; g],
            b: vec![0; g],
        }
    }

    pub fn new(a: Vec<u8>, b: Vec<u8>) -> Self {
        assert_eq!(a.len(), b.len());
        Self {
            a: a.into_iter().map(|v| v % 2).collect(),
            b: b.into_iter().map(|v| v % 2).collect(),
        }
    }

    /// From real vectors, reduced mod 1; each entry must be within `tol` of 0 or ½.
    pub fn from_halves(d1: &[f64], d2: &[f64], tol: f64) -> Result<Self> {
        let bit = |x: f64| -> Result<u8> {
            let t = 2.0 * x;
            let r = t.round();
            if (t - r).abs() > 2.0 * tol {
                return Err(Error::NonHalfIntegerCharacteristic(x));
            }
            Ok(r.rem_euclid(2.0) as u8)
        };
        Ok(Self {
            a: d1.iter().map(|&x| bit(x)).collect::<Result<_>>()?,
            b: d2.iter().map(|&x| bit(x)).collect::<Result<_>>()?,
        })
    }

    pub fn genus(&self) -> usize {
        self.a.len()
    }

    pub fn delta1(&self) -> DVector<f64> {
        DVector::from_iterator(self.a.len(), self.a.iter().map(|&v| 0.5 * v as f64))
    }

    pub fn delta2(&self) -> DVector<f64> {
        DVector::from_iterator(self.b.len(), self.b.iter().map(|&v| 0.5 * v as f64))
    }

    /// 4⟨δ₁,δ₂⟩ mod 2
    pub fn parity(&self) -> u8 {
        (self
            .a
            .iter()
            .zip(&self.b)
            .map(|(x, y)| (x * y) as u32)
            .sum::<u32>()
            % 2) as u8
    }

    pub fn is_odd(&self) -> bool {
        self.parity() == 1
    }

    pub fn is_zero(&self) -> bool {
        self.a.iter().chain(&self.b).all(|&v| v == 0)
    }

    /// All 2^{2g} characteristics in a fixed order.
    pub fn all(g: usize) -> Vec<Self> {
        (0..1u64 << (2 * g))
            .map(|bits| {
                let a = (0..g)
                    .map(|i| ((bits >> (2 * g - 1 - i)) & 1) as u8)
                    .collect();
                let b = (0..g).map(|i| ((bits >> (g - 1 - i)) & 1) as u8).collect();
                Self { a, b }
            })
            .collect()
    }
}

impl std::fmt::Display for Characteristic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let row = |v: &[u8]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        write!(f, "1/2[{}; {}]^t", row(&self.a), row(&self.b))
    }
}

fn real_sym(m: &CMat) -> DMatrix<f64> {
    let re = m.map(|z| z.re);
    (&re + re.transpose()) * 0.5
}

/// Smallest N_θ ≥ 2 with exp{½ λ_max (N_θ−1)²} < eps, capped at 64.
pub fn truncation_radius(b: &CMat, eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidInput(format!(
            "eps must lie in (0,1), got {eps}"
        )));
    }
    let lmax = real_sym(b)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if lmax >= 0.0 {
        return Err(Error::NotNegativeDefinite(lmax));
    }
    let mut n = 2usize;
    while (0.5 * lmax * ((n - 1) as f64).powi(2)).exp() >= eps {
        if n >= 64 {
            log::warn!("theta truncation radius capped at 64 (largest real eigenvalue {lmax:.3e})");
            return Ok(64);
        }
        n += 1;
    }
    Ok(n)
}

fn round_ties_to_zero(x: f64) -> f64 {
    if (x - x.trunc()).abs() == 0.5 {
        x.trunc()
    } else {
        x.round()
    }
}

/// z = z₀ + 2πi N + 𝔹 M
#[derive(Debug, Clone)]
pub struct ReducedArg {
    pub z0: CVec,
    pub n: Vec<i64>,
    pub m: Vec<i64>,
    /// ln of Θ(z)/Θ(z₀) for the zero characteristic
    pub log_prefactor: C64,
}

impl ReducedArg {
    pub fn log_prefactor_with(&self, ch: &Characteristic) -> C64 {
        let mut phase = 0.0;
        for i in 0..self.n.len() {
            phase +=
                0.5 * ch.a[i] as f64 * self.n[i] as f64 - 0.5 * ch.b[i] as f64 * self.m[i] as f64;
        }
        self.log_prefactor + TWO_PI_I * phase
    }
}

/// Per-𝔹 data reused across evaluations.
#[derive(Debug, Clone)]
pub struct ThetaSeries {
    pub g: usize,
    pub b: CMat,
    pub n_theta: usize,
    re_b: DMatrix<f64>,
    re_b_inv: DMatrix<f64>,
    im_b: DMatrix<f64>,
    /// upper factor R of −Re 𝔹 = RᵗR
    chol_r: DMatrix<f64>,
    radius2: f64,
}

/// Θ at one point with requested directional data.
#[derive(Debug, Clone)]
pub struct ThetaEval {
    pub series: C64,
    /// Σ|terms|, the natural magnitude scale of `series`
    pub abs_sum: f64,
    pub first: Vec<C64>,
    pub second: Vec<C64>,
    pub log_prefactor: C64,
    /// ⟨M, V_k⟩ for every direction
    pub mv: Vec<C64>,
    pub pairs: Vec<(usize, usize)>,
}

impl ThetaEval {
    pub fn ln_value(&self) -> C64 {
        self.series.ln() + self.log_prefactor
    }

    pub fn value(&self) -> C64 {
        self.series * self.log_prefactor.exp()
    }

    /// D_k ln Θ
    pub fn d_ln(&self, k: usize) -> C64 {
        self.first[k] / self.series - self.mv[k]
    }

    /// D_k D_l ln Θ for the p-th requested pair
    pub fn d2_ln(&self, p: usize) -> C64 {
        let (k, l) = self.pairs[p];
        self.second[p] / self.series - self.first[k] * self.first[l] / (self.series * self.series)
    }

    /// D_k Θ
    pub fn d(&self, k: usize) -> C64 {
        (self.first[k] - self.mv[k] * self.series) * self.log_prefactor.exp()
    }

    /// D_k D_l Θ
    pub fn d2(&self, p: usize) -> C64 {
        let (k, l) = self.pairs[p];
        (self.second[p] - self.mv[k] * self.first[l] - self.mv[l] * self.first[k]
            + self.mv[k] * self.mv[l] * self.series)
            * self.log_prefactor.exp()
    }
}

fn pairwise_sum(v: &[C64]) -> C64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let h = v.len() / 2;
    pairwise_sum(&v[..h]) + pairwise_sum(&v[h..])
}

impl ThetaSeries {
    pub fn new(b: &CMat) -> Result<Self> {
        Self::with_eps(b, 1e-16)
    }

    pub fn with_eps(b: &CMat, eps: f64) -> Result<Self> {
        let g = b.nrows();
        if g == 0 || b.ncols() != g {
            return Err(Error::InvalidInput(
                "Riemann matrix must be square and non-empty".into(),
            ));
        }
        let n_theta = truncation_radius(b, eps)?;
        let re_b = real_sym(b);
        let q = -&re_b;
        let chol = q
            .clone()
            .cholesky()
            .ok_or(Error::NotNegativeDefinite(0.0))?;
        let chol_r = chol.l().transpose();
        let eig = re_b.clone().symmetric_eigen().eigenvalues;
        let (mn, mx) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, c), &e| {
            (a.min(e.abs()), c.max(e.abs()))
        });
        let cond = mx / mn;
        if cond > 1e12 {
            return Err(Error::SingularReduction(cond));
        }
        let re_b_inv = re_b
            .clone()
            .try_inverse()
            .ok_or(Error::SingularReduction(f64::INFINITY))?;
        let im_b = b.map(|z| z.im);
        let radius2 = 2.0 * (1.0 / eps).ln() + 8.0;
        Ok(Self {
            g,
            b: b.clone(),
            n_theta,
            re_b,
            re_b_inv,
            im_b,
            chol_r,
            radius2,
        })
    }

    pub fn reduce(&self, z: &CVec) -> ReducedArg {
        let g = self.g;
        let re = z.map(|w| w.re);
        let im = z.map(|w| w.im);
        let beta = &self.re_b_inv * &re;
        let alpha = (im - &self.im_b * &beta) / (2.0 * PI);
        let m: Vec<i64> = beta.iter().map(|&x| round_ties_to_zero(x) as i64).collect();
        let n: Vec<i64> = alpha
            .iter()
            .map(|&x| round_ties_to_zero(x) as i64)
            .collect();
        let mc = CVec::from_iterator(g, m.iter().map(|&v| C64::new(v as f64, 0.0)));
        let nc = CVec::from_iterator(g, n.iter().map(|&v| C64::new(v as f64, 0.0)));
        let bm = &self.b * &mc;
        let z0 = z - &nc * TWO_PI_I - &bm;
        let log_prefactor = -0.5 * mc.dot(&bm) - z0.dot(&mc);
        ReducedArg {
            z0,
            n,
            m,
            log_prefactor,
        }
    }

    /// Lattice points m whose terms are not negligible, inside the box |m_i| ≤ N_θ.
    fn lattice_points(&self, x: &DVector<f64>, d1: &DVector<f64>) -> Vec<i64> {
        let g = self.g;
        let r = &self.chol_r;
        // centre of the Gaussian in n = m + δ₁
        let c = -(&self.re_b_inv * x);
        let mut best = DVector::<f64>::zeros(g);
        for i in 0..g {
            best[i] = (c[i] - d1[i]).round() + d1[i] - c[i];
        }
        let d0 = (r * &best).norm_squared();
        let bound = d0 + self.radius2;
        let nt = self.n_theta as i64;
        let mut out = Vec::new();
        let mut y = vec![0.0; g];
        let mut m = vec![0i64; g];
        self.enumerate(g, bound, &c, d1, &mut y, &mut m, nt, &mut out);
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn enumerate(
        &self,
        level: usize,
        rem: f64,
        c: &DVector<f64>,
        d1: &DVector<f64>,
        y: &mut [f64],
        m: &mut [i64],
        nt: i64,
        out: &mut Vec<i64>,
    ) {
        if level == 0 {
            out.extend_from_slice(m);
            return;
        }
        let i = level - 1;
        let r = &self.chol_r;
        let rii = r[(i, i)];
        let mut s = 0.0;
        for j in i + 1..self.g {
            s += r[(i, j)] * y[j];
        }
        let half = rem.max(0.0).sqrt() / rii;
        // y_i = m_i + δ₁ᵢ − c_i, and |rii y_i + s| ≤ √rem
        let centre = c[i] - d1[i] - s / rii;
        let lo = ((centre - half).ceil() as i64).max(-nt);
        let hi = ((centre + half).floor() as i64).min(nt);
        for mi in lo..=hi {
            let yi = mi as f64 + d1[i] - c[i];
            let t = rii * yi + s;
            let left = rem - t * t;
            if left < 0.0 {
                continue;
            }
            y[i] = yi;
            m[i] = mi;
            self.enumerate(i, left, c, d1, y, m, nt, out);
        }
    }

    /// Evaluate Θ[δ](z) together with first derivatives along `dirs` and
    /// second derivatives for each index pair in `pairs`.
    pub fn eval(
        &self,
        z: &CVec,
        ch: &Characteristic,
        dirs: &[&CVec],
        pairs: &[(usize, usize)],
    ) -> ThetaEval {
        let red = self.reduce(z);
        self.eval_reduced(&red, ch, dirs, pairs)
    }

    pub fn eval_reduced(
        &self,
        red: &ReducedArg,
        ch: &Characteristic,
        dirs: &[&CVec],
        pairs: &[(usize, usize)],
    ) -> ThetaEval {
        let g = self.g;
        let d1 = ch.delta1();
        let d2 = ch.delta2();
        let w: CVec = &red.z0 + d2.map(|v| TWO_PI_I * v);
        let x = red.z0.map(|v| v.re);
        let points = self.lattice_points(&x, &d1);
        let count = points.len() / g.max(1);
        let na = 1 + dirs.len() + pairs.len();
        let mut acc: Vec<Vec<C64>> = vec![Vec::with_capacity(count); na];
        let mut proj = vec![C64::new(0.0, 0.0); dirs.len()];
        let mut nv = vec![0.0f64; g];
        let bflat: Vec<C64> = (0..g * g).map(|k| self.b[(k / g, k % g)]).collect();
        let dflat: Vec<&[C64]> = dirs.iter().map(|v| v.as_slice()).collect();
        let ws = w.as_slice();
        for m in points.chunks_exact(g) {
            for i in 0..g {
                nv[i] = m[i] as f64 + d1[i];
            }
            // ½ nᵗ𝔹n + nᵗw
            let mut e = C64::new(0.0, 0.0);
            for i in 0..g {
                let row = &bflat[i * g..(i + 1) * g];
                let mut bi = C64::new(0.0, 0.0);
                for j in 0..g {
                    bi += row[j] * nv[j];
                }
                e += (bi * 0.5 + ws[i]) * nv[i];
            }
            let t = e.exp();
            acc[0].push(t);
            for (k, v) in dflat.iter().enumerate() {
                let mut p = C64::new(0.0, 0.0);
                for i in 0..g {
                    p += v[i] * nv[i];
                }
                proj[k] = p;
                acc[1 + k].push(p * t);
            }
            for (p, &(k, l)) in pairs.iter().enumerate() {
                acc[1 + dirs.len() + p].push(proj[k] * proj[l] * t);
            }
        }
        let sums: Vec<C64> = acc.iter().map(|v| pairwise_sum(v)).collect();
        let abs_terms: Vec<C64> = acc[0].iter().map(|t| C64::new(t.norm(), 0.0)).collect();
        let abs_sum = pairwise_sum(&abs_terms).re;
        let mc = CVec::from_iterator(g, red.m.iter().map(|&v| C64::new(v as f64, 0.0)));
        ThetaEval {
            series: sums[0],
            abs_sum,
            first: sums[1..1 + dirs.len()].to_vec(),
            second: sums[1 + dirs.len()..].to_vec(),
            log_prefactor: red.log_prefactor_with(ch),
            mv: dirs.iter().map(|v| mc.dot(v)).collect(),
            pairs: pairs.to_vec(),
        }
    }

    pub fn value(&self, z: &CVec, ch: &Characteristic) -> C64 {
        self.eval(z, ch, &[], &[]).value()
    }

    pub fn ln_value(&self, z: &CVec, ch: &Characteristic) -> C64 {
        self.eval(z, ch, &[], &[]).ln_value()
    }

    /// D_V Θ[δ](z), or D_V D_W Θ[δ](z) when `order == 2` (W defaults to V).
    pub fn directional_derivative(
        &self,
        z: &CVec,
        ch: &Characteristic,
        v: &CVec,
        order: u8,
        w: Option<&CVec>,
    ) -> C64 {
        let w = w.unwrap_or(v);
        match order {
            1 => self.eval(z, ch, &[v], &[]).d(0),
            _ => self.eval(z, ch, &[v, w], &[(0, 1)]).d2(0),
        }
    }

    /// Relative mismatch between Θ[δ](z) and the shifted zero-characteristic form.
    pub fn shifted_relation_residual(&self, z: &CVec, ch: &Characteristic) -> f64 {
        let d1 = ch.delta1().map(|v| C64::new(v, 0.0));
        let d2 = ch.delta2().map(|v| TWO_PI_I * v);
        let lhs = self.ln_value(z, ch);
        let zs: CVec = z + &d2;
        let shifted: CVec = &zs + &self.b * &d1;
        let rhs = self.ln_value(&shifted, &Characteristic::zero(self.g))
            + 0.5 * d1.dot(&(&self.b * &d1))
            + zs.dot(&d1);
        let ratio = (rhs - lhs).exp();
        (ratio - 1.0).norm() / ratio.norm().max(1.0)
    }

    /// |Θ(z + 2πiN + 𝔹M) / (Θ(z)·e^{−½⟨𝔹M,M⟩ − ⟨M,z⟩ + 2πi(⟨δ₁,N⟩ − ⟨δ₂,M⟩)}) − 1|
    pub fn quasi_periodicity_residual(
        &self,
        z: &CVec,
        ch: &Characteristic,
        n: &[i64],
        m: &[i64],
    ) -> f64 {
        let nc = CVec::from_iterator(self.g, n.iter().map(|&v| C64::new(v as f64, 0.0)));
        let mc = CVec::from_iterator(self.g, m.iter().map(|&v| C64::new(v as f64, 0.0)));
        let bm = &self.b * &mc;
        let shifted = z + &nc * TWO_PI_I + &bm;
        let d1 = ch.delta1().map(|v| C64::new(v, 0.0));
        let d2 = ch.delta2().map(|v| C64::new(v, 0.0));
        let factor = -0.5 * bm.dot(&mc) - mc.dot(z) + TWO_PI_I * (d1.dot(&nc) - d2.dot(&mc));
        let ratio = (self.ln_value(&shifted, ch) - self.ln_value(z, ch) - factor).exp();
        (ratio - 1.0).norm()
    }

    /// |Θ[δ](−z) − (−1)^{4⟨δ₁,δ₂⟩} Θ[δ](z)| relative to the larger magnitude.
    pub fn parity_residual(&self, z: &CVec, ch: &Characteristic) -> f64 {
        let sign = if ch.is_odd() { -1.0 } else { 1.0 };
        let plus = self.eval(z, ch, &[], &[]);
        let minus = self.eval(&(-z), ch, &[], &[]);
        // compare on the scale of the absolute series so odd zeros stay finite
        let scale = (plus.abs_sum * plus.log_prefactor.re.exp())
            .max(minus.abs_sum * minus.log_prefactor.re.exp());
        (minus.value() - plus.value() * sign).norm() / scale
    }

    pub fn re_b(&self) -> &DMatrix<f64> {
        &self.re_b
    }
}

/// Unreduced summation over the box |m_i| ≤ `radius`; slow, used as a check
/// of the reduced evaluation.
pub fn direct_sum(z: &CVec, b: &CMat, ch: &Characteristic, radius: i64) -> C64 {
    let g = z.len();
    let d1 = ch.delta1();
    let zs: CVec = z + ch.delta2().map(|x| TWO_PI_I * x);
    let width = 2 * radius + 1;
    let terms: Vec<C64> = (0..width.pow(g as u32))
        .map(|idx| {
            let mut k = idx;
            let v = CVec::from_fn(g, |i, _| {
                let m = (k % width) - radius;
                k /= width;
                C64::new(m as f64 + d1[i], 0.0)
            });
            (0.5 * v.dot(&(b * &v)) + v.dot(&zs)).exp()
        })
        .collect();
    pairwise_sum(&terms)
}
