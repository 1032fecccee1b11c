//! n-NLS and DS1±/DS2± fields from theta quotients, with per-point Fay
//! certificates and spectral PDE residuals.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fay::{self, fay_constants, FayConstants, PairData};
use crate::hyperelliptic::{condition_number, Involution, SheetPoint, Surface};
use crate::quadrature::{chebyshev_diff_matrix, chebyshev_nodes};
use crate::theta::{Characteristic, ThetaSeries};
use crate::vinnikov::reality_matrix_from_riemann;
use crate::{CMat, CVec, C64, I, TWO_PI_I};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsVariant {
    Ds1Plus,
    Ds1Minus,
    Ds2Plus,
    Ds2Minus,
}

impl DsVariant {
    pub fn rho(self) -> f64 {
        match self {
            Self::Ds1Plus | Self::Ds2Plus => 1.0,
            _ => -1.0,
        }
    }

    pub fn is_ds1(self) -> bool {
        matches!(self, Self::Ds1Plus | Self::Ds1Minus)
    }

    /// α in ξ = (x − iαy)/2, η = (x + iαy)/2
    pub fn alpha(self) -> C64 {
        if self.is_ds1() {
            I
        } else {
            C64::new(1.0, 0.0)
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ds1+" => Ok(Self::Ds1Plus),
            "ds1-" => Ok(Self::Ds1Minus),
            "ds2+" => Ok(Self::Ds2Plus),
            "ds2-" => Ok(Self::Ds2Minus),
            other => Err(Error::InvalidInput(format!("unknown DS variant '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ds1Plus => "DS1+",
            Self::Ds1Minus => "DS1-",
            Self::Ds2Plus => "DS2+",
            Self::Ds2Minus => "DS2-",
        }
    }

    pub fn characteristic_coords(self, x: f64, y: f64) -> (C64, C64) {
        let a = self.alpha();
        ((x - I * a * y) * 0.5, (x + I * a * y) * 0.5)
    }
}

/// d = 𝔹δ₁ + 2πiδ₂ + offset, validated against the reality constraint the
/// variant needs (`None` means an n-NLS solution).
pub fn materialize_d(
    half: &Characteristic,
    offset: &[f64],
    b: &CMat,
    variant: Option<DsVariant>,
) -> Result<CVec> {
    let g = b.nrows();
    let d1 = half.delta1().map(|v| C64::new(v, 0.0));
    let d2 = half.delta2().map(|v| TWO_PI_I * v);
    let mut d = b * d1 + d2;
    for (i, o) in offset.iter().enumerate().take(g) {
        d[i] += *o;
    }
    match variant {
        Some(v) if !v.is_ds1() => {
            ds2_lattice_part(b, &d)?;
        }
        _ => {
            // Im d ∈ (π/2) diag ℍ + πℤ
            let h = reality_matrix_from_riemann(b);
            for i in 0..g {
                let t = (d[i].im - 0.5 * PI * h[(i, i)] as f64) / PI;
                if (t - t.round()).abs() > 1e-10 {
                    return Err(Error::RealityViolated(format!(
                        "Im d[{i}] = {} is not admissible",
                        d[i].im
                    )));
                }
            }
        }
    }
    Ok(d)
}

/// For DS2, d = ½𝔹M + iy with integer M and 𝔹M real; returns M.
///
/// Shifting by 2d = 𝔹M is a lattice translation, so the conjugated field
/// differs from ψ* only by the constant e^{−⟨M, r⟩}, which the amplitude absorbs.
pub fn ds2_lattice_part(b: &CMat, d: &CVec) -> Result<Vec<i64>> {
    let re_b = b.map(|z| z.re);
    let inv = re_b
        .try_inverse()
        .ok_or_else(|| Error::SingularPartMatrix("Re 𝔹".into()))?;
    let m = inv * d.map(|z| 2.0 * z.re);
    let mut out = Vec::with_capacity(m.len());
    for (i, v) in m.iter().enumerate() {
        if (v - v.round()).abs() > 1e-8 {
            return Err(Error::RealityViolated(format!(
                "DS2 needs Re d ∈ ½ Re𝔹·ℤ^g; component {i} gives {v:.6}"
            )));
        }
        out.push(v.round() as i64);
    }
    // the shift must be a real lattice direction, otherwise conjugation adds a half period
    let mc = CVec::from_iterator(out.len(), out.iter().map(|&v| C64::new(v as f64, 0.0)));
    let scale = b.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if (b * mc).iter().any(|z| z.im.abs() > 1e-10 * scale.max(1.0)) {
        return Err(Error::RealityViolated(
            "DS2 lattice part of d must have real 𝔹M".into(),
        ));
    }
    Ok(out)
}

fn nm_constraint(h: &DMatrix<i64>, n: &[i64], m: &[i64]) -> Result<()> {
    let g = h.nrows();
    for i in 0..g {
        let hm: i64 = (0..g).map(|j| h[(i, j)] * m[j]).sum();
        if 2 * n[i] + hm != 0 {
            return Err(Error::NmConstraint);
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DsSpec {
    pub variant: DsVariant,
    /// real structure the solution is built for
    pub involution: Involution,
    pub a: SheetPoint,
    pub b: SheetPoint,
    pub d: CVec,
    pub theta: f64,
    pub h: f64,
    /// DS1: κ₂ (real); DS2: unused
    pub kappa2: f64,
    /// DS1 only
    pub kappa_tilde1: f64,
    /// DS2 only; κ₂ = κ̄₁
    pub kappa1: C64,
    pub m: Vec<i64>,
    pub n: Vec<i64>,
}

#[derive(Debug, Clone)]
pub struct DsSolution {
    pub spec: DsSpec,
    pub theta_series: ThetaSeries,
    pub fab: FayConstants,
    pub fba: FayConstants,
    pub kappa1: C64,
    pub kappa2: C64,
    pub g1: C64,
    pub g2: C64,
    pub g3: C64,
    pub amplitude: f64,
    pub rho: f64,
}

pub fn ds_assemble(surface: &Surface, spec: DsSpec) -> Result<DsSolution> {
    let g = surface.genus();
    let theta_series = ThetaSeries::new(surface.riemann())?;
    let v = spec.variant;
    let tau = spec.involution;
    if v.is_ds1() {
        if !tau.maps(&spec.a, &spec.a, 1e-10) || !tau.maps(&spec.b, &spec.b, 1e-10) {
            return Err(Error::TauConstraintViolated(
                "DS1 needs τa = a and τb = b".into(),
            ));
        }
        if spec.d.iter().any(|z| z.im.abs() > 1e-10) {
            return Err(Error::RealityViolated("DS1 needs real d".into()));
        }
    } else {
        if !tau.maps(&spec.a, &spec.b, 1e-10) {
            return Err(Error::TauConstraintViolated("DS2 needs τa = b".into()));
        }
    }
    if spec.m.len() != g || spec.n.len() != g {
        return Err(Error::InvalidInput("M and N must have length g".into()));
    }
    nm_constraint(
        &reality_matrix_from_riemann(surface.riemann()),
        &spec.n,
        &spec.m,
    )?;
    let ch = fay::find_odd_nonsingular_characteristic(&theta_series)?;
    let pair = PairData::from_surface(surface, &spec.a, &spec.b)?;
    let fab = fay_constants(&theta_series, &ch, pair.clone())?;
    let fba = fay_constants(&theta_series, &ch, pair.swapped())?;
    let rho = v.rho();
    let mc = CVec::from_iterator(g, spec.m.iter().map(|&x| C64::new(x as f64, 0.0)));
    let (kappa1, kappa2, amplitude) = if v.is_ds1() {
        let k2 = C64::new(spec.kappa2, 0.0);
        let b = surface.riemann();
        let ex = 0.5 * mc.dot(&(b * &mc)) + (&pair.r + &spec.d).dot(&mc);
        let k1 = -rho * spec.kappa_tilde1 * spec.kappa_tilde1 * k2 * fab.q2 * ex.exp();
        let amp = (spec.kappa_tilde1 * k2 * fab.q2).norm() * spec.d.dot(&mc).re.exp();
        (k1, k2, amp)
    } else {
        let k1 = spec.kappa1;
        let md = ds2_lattice_part(surface.riemann(), &spec.d)?;
        let shift: f64 = md
            .iter()
            .zip(pair.r.iter())
            .map(|(&m, r)| m as f64 * r.re)
            .sum();
        (
            k1,
            k1.conj(),
            k1.norm() * fab.q2.norm().sqrt() * (-0.5 * shift).exp(),
        )
    };
    let g1 = kappa1 * fab.k1;
    let g2 = kappa2 * fba.k1;
    let g3 = kappa1 * kappa1 * fab.k2 + kappa2 * kappa2 * fba.k2 + spec.h;
    Ok(DsSolution {
        spec,
        theta_series,
        fab,
        fba,
        kappa1,
        kappa2,
        g1,
        g2,
        g3,
        amplitude,
        rho,
    })
}

/// One evaluated sample with its certificates.
#[derive(Debug, Clone, Copy)]
pub struct DsSample {
    pub psi: C64,
    pub psi_star: C64,
    pub phi: C64,
    pub res1: f64,
    pub res2: f64,
}

impl DsSolution {
    pub fn z_vector(&self, xi: C64, eta: C64, t: f64) -> CVec {
        let p = &self.fab.pair;
        let (k1, k2) = (self.kappa1, self.kappa2);
        (&p.va * (k1 * xi) - &p.vb * (k2 * eta)
            + (&p.wa * (k1 * k1) - &p.wb * (k2 * k2)) * C64::new(0.5 * t, 0.0))
            * I
    }

    /// Rough angular frequency of the fields in t, from Z_t and G₃.
    pub fn time_frequency(&self) -> f64 {
        let p = &self.fab.pair;
        let (k1, k2) = (self.kappa1, self.kappa2);
        let zt = (&p.wa * (k1 * k1) - &p.wb * (k2 * k2)) * C64::new(0.5, 0.0);
        zt.iter().map(|z| z.norm()).fold(0.0, f64::max) + 0.5 * self.g3.norm()
    }

    fn phase(&self, xi: C64, eta: C64, t: f64) -> C64 {
        self.g1 * xi + self.g2 * eta - self.g3 * (0.5 * t)
    }

    /// Evaluate at characteristic coordinates; `None` where Θ(Z − d) vanishes.
    pub fn sample(&self, xi: C64, eta: C64, t: f64) -> Option<DsSample> {
        let z = self.z_vector(xi, eta, t) - &self.spec.d;
        self.sample_at(&z, self.phase(xi, eta, t))
    }

    /// Fields with the theta argument supplied directly.
    pub fn sample_at(&self, z: &CVec, phase: C64) -> Option<DsSample> {
        let th = &self.theta_series;
        let p = &self.fab.pair;
        let at = fay::probe(th, z, p);
        if at.series.norm() <= 1e-12 * at.abs_sum {
            return None;
        }
        let plus = fay::probe(th, &(z + &p.r), p);
        let minus = fay::probe(th, &(z - &p.r), p);
        let (res1, res2) = fay::residuals_from_probes(&self.fab, &at, &plus, &minus);
        let l0 = at.ln_value();
        let a = self.amplitude * C64::new(0.0, self.spec.theta).exp();
        let psi = a * (plus.ln_value() - l0 - I * phase).exp();
        let psi_star = -self.kappa1 * self.kappa2 * self.fab.q2 / a
            * (minus.ln_value() - l0 + I * phase).exp();
        let phi = -0.5 * self.kappa1 * self.kappa1 * at.d2_ln(1)
            - 0.5 * self.kappa2 * self.kappa2 * at.d2_ln(2)
            + self.spec.h / 4.0;
        Some(DsSample {
            psi,
            psi_star,
            phi,
            res1,
            res2,
        })
    }

    pub fn sample_xy(&self, x: f64, y: f64, t: f64) -> Option<DsSample> {
        let (xi, eta) = self.spec.variant.characteristic_coords(x, y);
        self.sample(xi, eta, t)
    }
}

#[derive(Debug, Clone)]
pub struct NlsSpec {
    pub involution: Involution,
    /// a_1 … a_{n+1}
    pub points: Vec<SheetPoint>,
    /// γ_{g+1} … γ_n
    pub gamma_free: Vec<f64>,
    pub d: CVec,
    pub theta: f64,
    pub alpha: Vec<i64>,
    /// M_j per component (defaults to zero)
    pub m: Vec<Vec<i64>>,
}

#[derive(Debug, Clone)]
pub struct NlsSolution {
    pub spec: NlsSpec,
    pub theta_series: ThetaSeries,
    pub gamma: Vec<f64>,
    pub gamma_residual: f64,
    pub fay: Vec<FayConstants>,
    pub e: Vec<C64>,
    pub f: Vec<C64>,
    pub amplitude: Vec<f64>,
    pub signs: Vec<i8>,
    pub va: CVec,
    pub wa: CVec,
}

/// γ_1..γ_g from Σ γ_k V_{a_k} = 0 with γ_{n+1} = 1.
pub fn solve_gamma(vs: &[CVec], gamma_free: &[f64]) -> Result<(Vec<f64>, f64)> {
    let total = vs.len();
    let g = vs[0].len();
    if total < g + 1 || gamma_free.len() != total - 1 - g {
        return Err(Error::InvalidInput(format!(
            "need n+1 ≥ g+1 points and n−g free gammas (got {} points, {} gammas)",
            total,
            gamma_free.len()
        )));
    }
    let mut gamma = vec![0.0; total];
    gamma[total - 1] = 1.0;
    gamma[g..total - 1].copy_from_slice(gamma_free);
    let mut rhs = CVec::zeros(g);
    for k in g..total {
        rhs -= &vs[k] * C64::new(gamma[k], 0.0);
    }
    let mut mat = CMat::zeros(g, g);
    for k in 0..g {
        mat.set_column(k, &vs[k]);
    }
    let cond = condition_number(&mat);
    if !(cond < 1e10) {
        return Err(Error::SingularGammaSystem(cond));
    }
    let sol = mat
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularGammaSystem(f64::INFINITY))?;
    for k in 0..g {
        gamma[k] = sol[k].re;
    }
    let mut resid = CVec::zeros(g);
    for k in 0..total {
        resid += &vs[k] * C64::new(gamma[k], 0.0);
    }
    let scale = vs.iter().map(|v| v.norm()).fold(0.0, f64::max);
    Ok((gamma, resid.norm() / scale))
}

pub fn nls_assemble(surface: &Surface, spec: NlsSpec) -> Result<NlsSolution> {
    let g = surface.genus();
    let np1 = spec.points.len();
    if np1 < 2 {
        return Err(Error::InvalidInput(
            "n-NLS needs at least two points".into(),
        ));
    }
    let n = np1 - 1;
    for i in 0..np1 {
        for j in 0..i {
            if spec.points[i].lambda == spec.points[j].lambda {
                return Err(Error::InvalidInput(
                    "n-NLS points need distinct projections".into(),
                ));
            }
        }
    }
    let tau = spec.involution;
    if let Some(bad) = spec.points.iter().find(|p| !tau.maps(p, p, 1e-10)) {
        return Err(Error::TauConstraintViolated(format!(
            "n-NLS point over {} is not fixed by τ",
            bad.lambda
        )));
    }
    if spec.alpha.len() != n {
        return Err(Error::InvalidInput(format!(
            "expected {n} intersection indices"
        )));
    }
    let theta_series = ThetaSeries::new(surface.riemann())?;
    let exps = spec
        .points
        .iter()
        .map(|p| surface.local_expansion(p))
        .collect::<Result<Vec<_>>>()?;
    let vs: Vec<CVec> = exps.iter().map(|e| e.v.clone()).collect();
    let (gamma, gamma_residual) = solve_gamma(&vs, &spec.gamma_free)?;
    if gamma_residual > 1e-10 {
        log::warn!(
            "γ-relation residual {gamma_residual:.3e}: the real projection of the solve is inexact"
        );
    }
    let ch = fay::find_odd_nonsingular_characteristic(&theta_series)?;
    let an = spec.points[n];
    let fay = (0..n)
        .map(|j| {
            fay_constants(
                &theta_series,
                &ch,
                PairData::from_surface(surface, &an, &spec.points[j])?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let sum_q1: C64 = (0..n).map(|k| fay[k].q1 * gamma[k]).sum();
    let e = fay.iter().map(|f| f.k1).collect();
    let f = fay.iter().map(|fc| fc.k2 - sum_q1 * 2.0).collect();
    let m: Vec<Vec<i64>> = if spec.m.is_empty() {
        vec![vec![0; g]; n]
    } else {
        spec.m.clone()
    };
    let amplitude = (0..n)
        .map(|j| {
            let md = CVec::from_iterator(g, m[j].iter().map(|&x| C64::new(x as f64, 0.0)));
            gamma[j].abs().sqrt() * fay[j].q2.norm().sqrt() * (0.5 * spec.d.dot(&md)).exp().norm()
        })
        .collect();
    let focusing = !surface.layout.real;
    let signs = (0..n)
        .map(|j| {
            if focusing {
                1
            } else {
                let s = if (1 + spec.alpha[j]).rem_euclid(2) == 0 {
                    1
                } else {
                    -1
                };
                if gamma[j] < 0.0 {
                    -s
                } else {
                    s
                }
            }
        })
        .collect();
    let exp_an = &exps[n];
    let (va, wa) = (exp_an.v.clone(), exp_an.w.clone());
    Ok(NlsSolution {
        spec,
        theta_series,
        gamma,
        gamma_residual,
        fay,
        e,
        f,
        amplitude,
        signs,
        va,
        wa,
    })
}

#[derive(Debug, Clone)]
pub struct NlsSample {
    pub psi: Vec<C64>,
    pub res1: f64,
    pub res2: f64,
}

impl NlsSolution {
    pub fn components(&self) -> usize {
        self.fay.len()
    }

    pub fn z_vector(&self, x: f64, t: f64) -> CVec {
        (&self.va * C64::new(x, 0.0) + &self.wa * C64::new(t, 0.0)) * I
    }

    pub fn sample(&self, x: f64, t: f64) -> Option<NlsSample> {
        let z = self.z_vector(x, t) - &self.spec.d;
        self.sample_at(&z, x, t)
    }

    pub fn sample_at(&self, z: &CVec, x: f64, t: f64) -> Option<NlsSample> {
        let th = &self.theta_series;
        let zero = Characteristic::zero(th.g);
        let n = self.components();
        // one evaluation at z serves every component: slots V_a, W_a, V_{b_j}
        let mut dirs: Vec<&CVec> = vec![&self.va, &self.wa];
        dirs.extend(self.fay.iter().map(|f| &f.pair.vb));
        let mut pairs = vec![(0usize, 0usize)];
        pairs.extend((0..n).map(|j| (0, 2 + j)));
        let at = th.eval(z, &zero, &dirs, &pairs);
        if at.series.norm() <= 1e-12 * at.abs_sum {
            return None;
        }
        let base = at.ln_value();
        let mut psi = Vec::with_capacity(n);
        let (mut res1, mut res2) = (0.0f64, 0.0f64);
        let phase0 = C64::new(0.0, self.spec.theta).exp();
        for (j, fc) in self.fay.iter().enumerate() {
            let p = &fc.pair;
            let at_j = fay::ProbeValues::from_eval(&at, 0, 1, Some(1 + j), 0);
            let plus = th.eval(&(z + &p.r), &zero, &[&self.va, &self.wa], &[(0, 0)]);
            let plus_j = fay::ProbeValues::from_eval(&plus, 0, 1, None, 0);
            let minus_ln = th.eval(&(z - &p.r), &zero, &[], &[]).ln_value();
            let (r1, r2) = fay::residuals_from_values(fc, &at_j, &plus_j, minus_ln);
            res1 = res1.max(r1);
            res2 = res2.max(r2);
            let ph = -I * (self.e[j] * x - self.f[j] * t);
            psi.push(phase0 * self.amplitude[j] * (plus_j.ln - base + ph).exp());
        }
        Some(NlsSample { psi, res1, res2 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Chebyshev,
    Uniform,
}

#[derive(Debug, Clone)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub kind: NodeKind,
}

impl Axis {
    /// Ascending node positions.
    pub fn nodes(&self) -> Vec<f64> {
        let n = self.count;
        if n == 0 {
            return Vec::new();
        }
        if n == 1 {
            return vec![0.5 * (self.lo + self.hi)];
        }
        match self.kind {
            NodeKind::Uniform => (0..n)
                .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64)
                .collect(),
            NodeKind::Chebyshev => chebyshev_nodes(n - 1)
                .into_iter()
                .rev()
                .map(|x| 0.5 * (self.lo + self.hi) + 0.5 * (self.hi - self.lo) * x)
                .collect(),
        }
    }

    /// Differentiation matrix in physical units for the ascending nodes.
    pub fn diff_matrix(&self) -> Result<DMatrix<f64>> {
        if self.kind != NodeKind::Chebyshev {
            return Err(Error::InvalidInput(
                "spectral differentiation needs Chebyshev nodes".into(),
            ));
        }
        let n = self.count - 1;
        let d = chebyshev_diff_matrix(n)?.entries;
        let s = 2.0 / (self.hi - self.lo);
        Ok(DMatrix::from_fn(n + 1, n + 1, |i, j| d[(n - i, n - j)] * s))
    }
}

/// Evaluated samples on a (x, y[, t]) or (x, t) tensor grid, row-major with
/// the last axis fastest.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub axis_names: Vec<String>,
    pub coords: Vec<Vec<f64>>,
    /// per sample, per component (NaN where the denominator vanishes)
    pub psi: Vec<Vec<C64>>,
    pub phi: Option<Vec<f64>>,
    pub res1: Vec<f64>,
    pub res2: Vec<f64>,
    /// DS only: |ψ* − ρψ̄| / |ψ|
    pub reality: Vec<f64>,
    pub poles: usize,
}

impl FieldGrid {
    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    pub fn components(&self) -> usize {
        self.psi.first().map_or(0, |p| p.len())
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut rem = idx;
        let mut out = vec![0.0; self.coords.len()];
        for ax in (0..self.coords.len()).rev() {
            let n = self.coords[ax].len();
            out[ax] = self.coords[ax][rem % n];
            rem /= n;
        }
        out
    }

    pub fn max_res1(&self) -> f64 {
        self.res1.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_res2(&self) -> f64 {
        self.res2.iter().cloned().fold(0.0, f64::max)
    }

    pub fn median_residual(&self) -> f64 {
        let mut v: Vec<f64> = self
            .res1
            .iter()
            .zip(&self.res2)
            .map(|(a, b)| a.max(*b))
            .collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }
}

fn nan_c() -> C64 {
    C64::new(f64::NAN, f64::NAN)
}

/// DS fields over x × y at each time in `times`.
pub fn ds_grid(sol: &DsSolution, x: &Axis, y: &Axis, times: &[f64]) -> FieldGrid {
    let xs = x.nodes();
    let ys = y.nodes();
    let total = times.len() * xs.len() * ys.len();
    let samples: Vec<Option<DsSample>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let j = idx % ys.len();
            let i = (idx / ys.len()) % xs.len();
            let k = idx / (ys.len() * xs.len());
            sol.sample_xy(xs[i], ys[j], times[k])
        })
        .collect();
    let mut grid = FieldGrid {
        axis_names: vec!["t".into(), "x".into(), "y".into()],
        coords: vec![times.to_vec(), xs, ys],
        psi: Vec::with_capacity(total),
        phi: Some(Vec::with_capacity(total)),
        res1: Vec::with_capacity(total),
        res2: Vec::with_capacity(total),
        reality: Vec::with_capacity(total),
        poles: 0,
    };
    for s in samples {
        match s {
            Some(s) => {
                grid.psi.push(vec![s.psi]);
                grid.phi.as_mut().unwrap().push(s.phi.re);
                grid.res1.push(s.res1);
                grid.res2.push(s.res2);
                let target = s.psi.conj() * sol.rho;
                grid.reality
                    .push((s.psi_star - target).norm() / s.psi.norm().max(f64::MIN_POSITIVE));
            }
            None => {
                grid.poles += 1;
                grid.psi.push(vec![nan_c()]);
                grid.phi.as_mut().unwrap().push(f64::NAN);
                grid.res1.push(f64::NAN);
                grid.res2.push(f64::NAN);
                grid.reality.push(f64::NAN);
            }
        }
    }
    grid
}

/// n-NLS fields over x × t.
pub fn nls_grid(sol: &NlsSolution, x: &Axis, t: &Axis) -> FieldGrid {
    let xs = x.nodes();
    let ts = t.nodes();
    let total = xs.len() * ts.len();
    let samples: Vec<Option<NlsSample>> = (0..total)
        .into_par_iter()
        .map(|idx| sol.sample(xs[idx / ts.len()], ts[idx % ts.len()]))
        .collect();
    let n = sol.components();
    let mut grid = FieldGrid {
        axis_names: vec!["x".into(), "t".into()],
        coords: vec![xs, ts],
        psi: Vec::with_capacity(total),
        phi: None,
        res1: Vec::with_capacity(total),
        res2: Vec::with_capacity(total),
        reality: Vec::new(),
        poles: 0,
    };
    for s in samples {
        match s {
            Some(s) => {
                grid.psi.push(s.psi);
                grid.res1.push(s.res1);
                grid.res2.push(s.res2);
            }
            None => {
                grid.poles += 1;
                grid.psi.push(vec![nan_c(); n]);
                grid.res1.push(f64::NAN);
                grid.res2.push(f64::NAN);
            }
        }
    }
    grid
}

fn apply_rows(d: &DMatrix<f64>, f: &[C64], nx: usize, ny: usize, along_x: bool) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            let mut acc = C64::new(0.0, 0.0);
            if along_x {
                for k in 0..nx {
                    acc += f[k * ny + j] * d[(i, k)];
                }
            } else {
                for k in 0..ny {
                    acc += f[i * ny + k] * d[(j, k)];
                }
            }
            out[i * ny + j] = acc;
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct PdeResidual {
    pub max: f64,
    pub median: f64,
}

fn summarize(mut v: Vec<f64>) -> PdeResidual {
    if v.is_empty() {
        return PdeResidual {
            max: 0.0,
            median: 0.0,
        };
    }
    v.sort_by(f64::total_cmp);
    PdeResidual {
        max: *v.last().unwrap(),
        median: v[v.len() / 2],
    }
}

/// Spectral residual of iψ_t + ψ_xx + 2(Σ ŝ_k|ψ_k|²)ψ_j on interior (x, t) nodes.
pub fn nls_pde_residual(
    sol: &NlsSolution,
    grid: &FieldGrid,
    x: &Axis,
    t: &Axis,
) -> Result<PdeResidual> {
    let dx = x.diff_matrix()?;
    let dt = t.diff_matrix()?;
    let (nx, nt) = (x.count, t.count);
    let n = sol.components();
    let mut out = Vec::new();
    let comps: Vec<Vec<C64>> = (0..n)
        .map(|j| grid.psi.iter().map(|p| p[j]).collect())
        .collect();
    let mut nonlin = vec![0.0; nx * nt];
    for (idx, p) in grid.psi.iter().enumerate() {
        nonlin[idx] = (0..n).map(|k| sol.signs[k] as f64 * p[k].norm_sqr()).sum();
    }
    let mut per_point = vec![0.0f64; nx * nt];
    for f in &comps {
        let fx = apply_rows(&dx, f, nx, nt, true);
        let fxx = apply_rows(&dx, &fx, nx, nt, true);
        let ft = apply_rows(&dt, f, nx, nt, false);
        for i in 1..nx - 1 {
            for j in 1..nt - 1 {
                let k = i * nt + j;
                let r = I * ft[k] + fxx[k] + f[k] * (2.0 * nonlin[k]);
                per_point[k] = per_point[k].max(r.norm());
            }
        }
    }
    for i in 1..nx - 1 {
        for j in 1..nt - 1 {
            out.push(per_point[i * nt + j]);
        }
    }
    Ok(summarize(out))
}

/// Spectral residual of both DS equations at time `t0`; ψ_t comes from a
/// short Chebyshev t-axis centred on `t0`.
pub fn ds_pde_residual(sol: &DsSolution, x: &Axis, y: &Axis, t0: f64) -> Result<PdeResidual> {
    // window short enough that 11 nodes resolve the time dependence
    let tau = (0.5 / sol.time_frequency().max(1e-3)).min(0.05);
    let t_axis = Axis {
        lo: t0 - tau,
        hi: t0 + tau,
        count: 11,
        kind: NodeKind::Chebyshev,
    };
    let grid = ds_grid(sol, x, y, &t_axis.nodes());
    if grid.poles > 0 {
        return Err(Error::ThetaZeroOnGrid);
    }
    let (nx, ny) = (x.count, y.count);
    let plane = nx * ny;
    let dt = t_axis.diff_matrix()?;
    let mid = t_axis.count / 2;
    let psi_at =
        |k: usize| -> Vec<C64> { (0..plane).map(|p| grid.psi[k * plane + p][0]).collect() };
    let slices: Vec<Vec<C64>> = (0..t_axis.count).map(psi_at).collect();
    let psi = &slices[mid];
    let phi: Vec<C64> = (0..plane)
        .map(|p| C64::new(grid.phi.as_ref().unwrap()[mid * plane + p], 0.0))
        .collect();
    let mut psi_t = vec![C64::new(0.0, 0.0); plane];
    for (k, s) in slices.iter().enumerate() {
        let w = dt[(mid, k)];
        for p in 0..plane {
            psi_t[p] += s[p] * w;
        }
    }
    let dx = x.diff_matrix()?;
    let dy = y.diff_matrix()?;
    let second = |f: &[C64], along_x: bool| -> Vec<C64> {
        let d = if along_x { &dx } else { &dy };
        let f1 = apply_rows(d, f, nx, ny, along_x);
        apply_rows(d, &f1, nx, ny, along_x)
    };
    let alpha = sol.spec.variant.alpha();
    let c = (1.0 / (I * alpha)).powi(2);
    let mod2: Vec<C64> = psi.iter().map(|p| C64::new(p.norm_sqr(), 0.0)).collect();
    let (pxx, pyy) = (second(psi, true), second(psi, false));
    let (fxx, fyy) = (second(&phi, true), second(&phi, false));
    let (mxx, myy) = (second(&mod2, true), second(&mod2, false));
    let mut out = Vec::new();
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let k = i * ny + j;
            let lap_psi = (pxx[k] + c * pyy[k]) * 2.0;
            let r1 = I * psi_t[k] + 0.5 * lap_psi + 2.0 * phi[k] * psi[k];
            let mix_phi = fxx[k] - c * fyy[k];
            let lap_mod = (mxx[k] + c * myy[k]) * 2.0;
            let r2 = mix_phi + sol.rho * 0.5 * lap_mod;
            out.push(r1.norm().max(r2.norm()));
        }
    }
    Ok(summarize(out))
}
