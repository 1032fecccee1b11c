//! Real-surface structure: reality matrices ℍ, ingested period data, integer
//! symplectic changes of basis onto a basis adapted to the involution, the
//! induced theta characteristic and the transformation of the Fay constants.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fay::FayConstants;
use crate::hyperelliptic::{condition_number, PeriodData};
use crate::theta::{Characteristic, ThetaSeries};
use crate::{CMat, CVec, C64, TWO_PI_I};

pub type IMat = DMatrix<i64>;
pub type RMat = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Dividing,
    NonDividing,
    NoRealOval,
}

impl Topology {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "dividing" => Ok(Self::Dividing),
            "non-dividing" => Ok(Self::NonDividing),
            "none" | "no-real-oval" => Ok(Self::NoRealOval),
            o => Err(Error::InvalidInput(format!("unknown topology '{o}'"))),
        }
    }
}

/// ℍ in the action τ(𝒜, ℬ) = (𝒜, ℍ𝒜 − ℬ).
#[derive(Debug, Clone, PartialEq)]
pub struct RealityMatrix {
    pub h: IMat,
    pub topology: Topology,
    pub ovals: usize,
}

fn block_matrix(g: usize, blocks: usize, ones: usize) -> IMat {
    let mut h = IMat::zeros(g, g);
    for k in 0..blocks {
        h[(2 * k, 2 * k + 1)] = 1;
        h[(2 * k + 1, 2 * k)] = 1;
    }
    for i in 0..ones {
        h[(2 * blocks + i, 2 * blocks + i)] = 1;
    }
    h
}

fn nonzero_rows(h: &IMat) -> usize {
    (0..h.nrows())
        .filter(|&i| h.row(i).iter().any(|&v| v != 0))
        .count()
}

impl RealityMatrix {
    /// The normal form for the given topology and number of real ovals.
    pub fn catalog(g: usize, topology: Topology, ovals: usize) -> Result<Self> {
        let h = match topology {
            Topology::NoRealOval => {
                if ovals != 0 {
                    return Err(Error::InvalidInput("no-real-oval curves have k = 0".into()));
                }
                block_matrix(g, g / 2, 0)
            }
            _ if ovals == 0 || ovals > g + 1 => {
                return Err(Error::InvalidInput(format!(
                    "need 1 ≤ k ≤ g+1 real ovals, got {ovals}"
                )));
            }
            Topology::Dividing => {
                let rank = g + 1 - ovals;
                if rank % 2 != 0 {
                    return Err(Error::InvalidInput(format!(
                        "dividing curve of genus {g} cannot have {ovals} ovals"
                    )));
                }
                block_matrix(g, rank / 2, 0)
            }
            Topology::NonDividing => {
                if ovals == g + 1 {
                    return Err(Error::InvalidInput("an M-curve is always dividing".into()));
                }
                block_matrix(g, 0, g + 1 - ovals)
            }
        };
        Ok(Self { h, topology, ovals })
    }

    pub fn m_curve(g: usize) -> Self {
        Self {
            h: IMat::zeros(g, g),
            topology: Topology::Dividing,
            ovals: g + 1,
        }
    }

    /// Validate an explicit matrix against the catalog for `topology`.
    pub fn from_matrix(h: IMat, topology: Topology) -> Result<Self> {
        let g = h.nrows();
        let rank = nonzero_rows(&h);
        let ovals = match topology {
            Topology::NoRealOval => 0,
            _ => g + 1 - rank,
        };
        let expected = Self::catalog(g, topology, ovals)?;
        if expected.h != h {
            return Err(Error::InvalidInput(format!(
                "ℍ does not match the {topology:?} normal form"
            )));
        }
        Ok(expected)
    }

    /// Classify a bare matrix; block-only matrices default to dividing.
    pub fn infer(h: IMat) -> Result<Self> {
        Self::from_matrix(h.clone(), Topology::Dividing)
            .or_else(|_| Self::from_matrix(h, Topology::NonDividing))
    }

    pub fn genus(&self) -> usize {
        self.h.nrows()
    }

    pub fn rank(&self) -> usize {
        nonzero_rows(&self.h)
    }

    pub fn is_m_curve(&self) -> bool {
        self.h.iter().all(|&v| v == 0)
    }

    pub fn as_real(&self) -> RMat {
        self.h.map(|v| v as f64)
    }
}

/// ℍ read off a Riemann matrix in a basis adapted to the involution, where
/// Im 𝔹 ≡ πℍ (mod 2π).
pub fn reality_matrix_from_riemann(b: &CMat) -> IMat {
    b.map(|z| {
        let k = (z.im / PI).round();
        if (z.im / PI - k).abs() > 1e-6 {
            log::warn!(
                "Im 𝔹 entry {} is not a multiple of π; basis is not adapted",
                z.im
            );
        }
        (k as i64).rem_euclid(2)
    })
}

/// Externally computed periods in an arbitrary canonical basis; rows are cycles.
#[derive(Debug, Clone)]
pub struct IngestedPeriods {
    pub pa: CMat,
    pub pb: CMat,
    pub label: String,
    /// decimal places the data can be trusted to
    pub digits: u32,
    pub reality: Option<RealityMatrix>,
}

impl IngestedPeriods {
    pub fn new(pa: CMat, pb: CMat, label: impl Into<String>, digits: u32) -> Result<Self> {
        let g = pa.nrows();
        if pa.ncols() != g || pb.nrows() != g || pb.ncols() != g {
            return Err(Error::InvalidInput(
                "period matrices must be square and of equal size".into(),
            ));
        }
        let out = Self {
            pa,
            pb,
            label: label.into(),
            digits,
            reality: None,
        };
        out.validate()?;
        Ok(out)
    }

    /// Periods of an internally computed surface, rescaled by a global phase so
    /// that the 𝒜-periods are as real as possible (differentials ν ↦ cν leave
    /// 𝔹 untouched).
    pub fn from_period_data(p: &PeriodData, label: impl Into<String>) -> Result<Self> {
        let big =
            p.pa.iter().cloned().fold(
                C64::new(0.0, 0.0),
                |m, z| if z.norm() > m.norm() { z } else { m },
            );
        let mut phase = C64::new(0.0, -big.arg()).exp();
        if big.re * phase.re < 0.0 {
            phase = -phase;
        }
        let phase = if (big * phase).re < 0.0 {
            -phase
        } else {
            phase
        };
        Self::new(&p.pa * phase, &p.pb * phase, label, 12)
    }

    pub fn genus(&self) -> usize {
        self.pa.nrows()
    }

    /// Relative tolerance implied by the trust level.
    pub fn tolerance(&self) -> f64 {
        10f64.powi(2 - self.digits as i32).max(1e-10)
    }

    /// Tolerance for rounding derived quantities to integers / half-integers.
    pub fn integer_tolerance(&self) -> f64 {
        10f64.powi(2 - self.digits as i32).max(1e-6)
    }

    pub fn raw_riemann(&self) -> Result<CMat> {
        let inv = self
            .pa
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularPartMatrix("A-period".into()))?;
        Ok(&self.pb * inv * TWO_PI_I)
    }

    /// Symmetrized 𝔹̃.
    pub fn riemann(&self) -> Result<CMat> {
        let b = self.raw_riemann()?;
        Ok((&b + b.transpose()) * C64::new(0.5, 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.raw_riemann()?;
        let scale = b.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let asym = (&b - b.transpose())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if asym > self.tolerance() * scale {
            return Err(Error::InvalidInput(format!(
                "ingested Riemann matrix asymmetric by {asym:.3e} (trust {} digits)",
                self.digits
            )));
        }
        let sym = (&b + b.transpose()) * C64::new(0.5, 0.0);
        let re = sym.map(|z| z.re);
        let top = re
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if top >= 0.0 {
            return Err(Error::NotNegativeDefinite(top));
        }
        Ok(())
    }

    pub fn parse(text: &str, label: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidInput(format!("{label}: {m}"));
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .peekable();
        let mut g = None;
        let mut h: Option<IMat> = None;
        let mut topology = None;
        let mut digits = 4;
        let mut pa = None;
        let mut pb = None;
        let read_rows =
            |lines: &mut dyn Iterator<Item = &str>, g: usize| -> Result<Vec<Vec<f64>>> {
                (0..g)
                    .map(|_| {
                        let l = lines
                            .next()
                            .ok_or_else(|| bad("unexpected end of file".into()))?;
                        l.split_whitespace()
                            .map(|t| t.parse::<f64>().map_err(|e| bad(format!("'{t}': {e}"))))
                            .collect()
                    })
                    .collect()
            };
        while let Some(line) = lines.next() {
            let mut it = line.split_whitespace();
            let key = it.next().unwrap_or("");
            let rest: Vec<&str> = it.collect();
            match key {
                "genus" => {
                    g = Some(
                        rest.first()
                            .and_then(|s| s.parse::<usize>().ok())
                            .ok_or_else(|| bad("bad genus".into()))?,
                    )
                }
                "digits" => {
                    digits = rest
                        .first()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad("bad digits".into()))?
                }
                "topology" => {
                    topology = Some(Topology::parse(rest.first().copied().unwrap_or(""))?)
                }
                "hmatrix" | "PA" | "PB" => {
                    let gg = g.ok_or_else(|| bad("genus must precede matrices".into()))?;
                    let rows = read_rows(&mut lines, gg)?;
                    if key == "hmatrix" {
                        let mut m = IMat::zeros(gg, gg);
                        for (i, r) in rows.iter().enumerate() {
                            if r.len() != gg {
                                return Err(bad(format!("hmatrix row {i} needs {gg} entries")));
                            }
                            for (j, v) in r.iter().enumerate() {
                                if v.fract() != 0.0 {
                                    return Err(bad("hmatrix entries must be integers".into()));
                                }
                                m[(i, j)] = *v as i64;
                            }
                        }
                        h = Some(m);
                    } else {
                        let mut m = CMat::zeros(gg, gg);
                        for (i, r) in rows.iter().enumerate() {
                            if r.len() != 2 * gg {
                                return Err(bad(format!("{key} row {i} needs {} reals", 2 * gg)));
                            }
                            for j in 0..gg {
                                m[(i, j)] = C64::new(r[2 * j], r[2 * j + 1]);
                            }
                        }
                        if key == "PA" {
                            pa = Some(m)
                        } else {
                            pb = Some(m)
                        }
                    }
                }
                "label" => {}
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        let pa = pa.ok_or_else(|| bad("missing PA".into()))?;
        let pb = pb.ok_or_else(|| bad("missing PB".into()))?;
        let mut out = Self::new(pa, pb, label, digits)?;
        if let Some(h) = h {
            out.reality = Some(match topology {
                Some(t) => RealityMatrix::from_matrix(h, t)?,
                None => RealityMatrix::infer(h)?,
            });
        }
        Ok(out)
    }

    /// Inverse of [`IngestedPeriods::parse`]; values printed with 17 significant digits.
    pub fn to_text(&self) -> String {
        let g = self.genus();
        let mut out = format!("label {}\ngenus {g}\ndigits {}\n", self.label, self.digits);
        if let Some(h) = &self.reality {
            let name = match h.topology {
                Topology::Dividing => "dividing",
                Topology::NonDividing => "non-dividing",
                Topology::NoRealOval => "none",
            };
            out += &format!("topology {name}\nhmatrix\n");
            for i in 0..g {
                let row: Vec<String> = (0..g).map(|j| h.h[(i, j)].to_string()).collect();
                out += &(row.join(" ") + "\n");
            }
        }
        for (key, m) in [("PA", &self.pa), ("PB", &self.pb)] {
            out += key;
            out += "\n";
            for i in 0..g {
                let row: Vec<String> = (0..g)
                    .flat_map(|j| {
                        [
                            format!("{:.16e}", m[(i, j)].re),
                            format!("{:.16e}", m[(i, j)].im),
                        ]
                    })
                    .collect();
                out += &(row.join(" ") + "\n");
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn re_a(&self) -> RMat {
        self.pa.map(|z| z.re)
    }
    pub fn im_a(&self) -> RMat {
        self.pa.map(|z| z.im)
    }
    pub fn re_b(&self) -> RMat {
        self.pb.map(|z| z.re)
    }
    pub fn im_b(&self) -> RMat {
        self.pb.map(|z| z.im)
    }
}

/// Integer symplectic matrix [A B; C D].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymplecticMatrix {
    pub a: IMat,
    pub b: IMat,
    pub c: IMat,
    pub d: IMat,
}

impl SymplecticMatrix {
    pub fn new(a: IMat, b: IMat, c: IMat, d: IMat) -> Result<Self> {
        let s = Self { a, b, c, d };
        if !s.is_symplectic() {
            return Err(Error::InvalidInput(
                "matrix is not integer symplectic".into(),
            ));
        }
        Ok(s)
    }

    pub fn identity(g: usize) -> Self {
        Self {
            a: IMat::identity(g, g),
            b: IMat::zeros(g, g),
            c: IMat::zeros(g, g),
            d: IMat::identity(g, g),
        }
    }

    pub fn genus(&self) -> usize {
        self.a.nrows()
    }

    /// AᵗD − CᵗB = I, AᵗC = CᵗA, DᵗB = BᵗD, all in exact integer arithmetic.
    pub fn is_symplectic(&self) -> bool {
        let (a, b, c, d) = (&self.a, &self.b, &self.c, &self.d);
        let g = a.nrows();
        a.transpose() * d - c.transpose() * b == IMat::identity(g, g)
            && a.transpose() * c == c.transpose() * a
            && d.transpose() * b == b.transpose() * d
    }

    /// [Dᵗ −Bᵗ; −Cᵗ Aᵗ]
    pub fn inverse(&self) -> Self {
        Self {
            a: self.d.transpose(),
            b: -self.b.transpose(),
            c: -self.c.transpose(),
            d: self.a.transpose(),
        }
    }

    fn cplx(m: &IMat) -> CMat {
        m.map(|v| C64::new(v as f64, 0.0))
    }

    /// (P_A, P_B) ↦ (A P_A + B P_B, C P_A + D P_B)
    pub fn apply(&self, pa: &CMat, pb: &CMat) -> (CMat, CMat) {
        let (a, b, c, d) = (
            Self::cplx(&self.a),
            Self::cplx(&self.b),
            Self::cplx(&self.c),
            Self::cplx(&self.d),
        );
        (&a * pa + &b * pb, &c * pa + &d * pb)
    }

    /// K̃ = 2πi A + B 𝔹̃
    pub fn k_matrix(&self, riemann: &CMat) -> CMat {
        Self::cplx(&self.a) * TWO_PI_I + Self::cplx(&self.b) * riemann
    }

    /// ½ Diag(DᵗB ; CᵗA), read exactly from the integer blocks.
    pub fn block_characteristic(&self) -> Characteristic {
        let db = self.d.transpose() * &self.b;
        let ca = self.c.transpose() * &self.a;
        let g = self.genus();
        Characteristic::new(
            (0..g).map(|i| db[(i, i)].rem_euclid(2) as u8).collect(),
            (0..g).map(|i| ca[(i, i)].rem_euclid(2) as u8).collect(),
        )
    }

    /// Map (N, M) to the computed basis: (AᵗN + CᵗM, BᵗN + DᵗM).
    pub fn map_nm(&self, n: &[i64], m: &[i64]) -> (Vec<i64>, Vec<i64>) {
        let g = self.genus();
        let nv = nalgebra::DVector::from_column_slice(n);
        let mv = nalgebra::DVector::from_column_slice(m);
        let n2 = self.a.transpose() * &nv + self.c.transpose() * &mv;
        let m2 = self.b.transpose() * &nv + self.d.transpose() * &mv;
        debug_assert_eq!(n2.len(), g);
        (n2.iter().cloned().collect(), m2.iter().cloned().collect())
    }
}

impl fmt::Display for SymplecticMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = self.genus();
        for i in 0..g {
            let row = |m: &IMat| {
                (0..g)
                    .map(|j| format!("{:3}", m[(i, j)]))
                    .collect::<Vec<_>>()
                    .join("")
            };
            writeln!(
                f,
                "[{} |{} ]  [{} |{} ]",
                row(&self.a),
                row(&self.b),
                row(&self.c),
                row(&self.d)
            )?;
        }
        Ok(())
    }
}

fn rcond(m: &RMat) -> f64 {
    condition_number(&m.map(|v| C64::new(v, 0.0)))
}

fn inverse_checked(m: &RMat, name: &str) -> Result<RMat> {
    if !(rcond(m) < 1e10) {
        return Err(Error::SingularPartMatrix(name.into()));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularPartMatrix(name.into()))
}

fn round_integer(m: &RMat, name: &str, tol: f64) -> Result<IMat> {
    let mut out = IMat::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            let r = v.round();
            if !((v - r).abs() <= tol) {
                return Err(Error::NonIntegerCompletion {
                    entry: format!("{name}[{i},{j}]"),
                    dev: (v - r).abs(),
                });
            }
            out[(i, j)] = r as i64;
        }
    }
    Ok(out)
}

/// The two known blocks handed to [`lemma_closures`].
#[derive(Debug, Clone)]
pub enum PartialSymplectic {
    AB(IMat, IMat),
    CD(IMat, IMat),
}

/// Complete a quadruple from two of its blocks via the closed forms
/// Aᵗ = ImP̃_B [C ImP̃_A + D ImP̃_B]⁻¹, Bᵗ = −ImP̃_A [·]⁻¹,
/// Cᵗ = ½Aᵗℍ − ReP̃_B [A ReP̃_A + B ReP̃_B]⁻¹, Dᵗ = ½Bᵗℍ + ReP̃_A [·]⁻¹.
pub fn lemma_closures(
    partial: PartialSymplectic,
    periods: &IngestedPeriods,
    h: &RealityMatrix,
) -> Result<SymplecticMatrix> {
    let tol = periods.integer_tolerance();
    let hr = h.as_real();
    let f = |m: &IMat| m.map(|v| v as f64);
    match partial {
        PartialSymplectic::AB(a, b) => {
            let inner = f(&a) * periods.re_a() + f(&b) * periods.re_b();
            let inv = inverse_checked(&inner, "A·ReP_A + B·ReP_B")?;
            let ct = f(&a).transpose() * &hr * 0.5 - periods.re_b() * &inv;
            let dt = f(&b).transpose() * &hr * 0.5 + periods.re_a() * &inv;
            let c = round_integer(&ct.transpose(), "C", tol)?;
            let d = round_integer(&dt.transpose(), "D", tol)?;
            Ok(SymplecticMatrix { a, b, c, d })
        }
        PartialSymplectic::CD(c, d) => {
            let inner = f(&c) * periods.im_a() + f(&d) * periods.im_b();
            let inv = inverse_checked(&inner, "C·ImP_A + D·ImP_B")?;
            let at = periods.im_b() * &inv;
            let bt = -(periods.im_a() * &inv);
            let a = round_integer(&at.transpose(), "A", tol)?;
            let b = round_integer(&bt.transpose(), "B", tol)?;
            Ok(SymplecticMatrix { a, b, c, d })
        }
    }
}

/// Max relative violation of P_A ∈ ℝ and P̄_B = −P_B + ℍP_A after the transform.
pub fn reality_defect(s: &SymplecticMatrix, periods: &IngestedPeriods, h: &RealityMatrix) -> f64 {
    let (pa, pb) = s.apply(&periods.pa, &periods.pb);
    let scale = pa
        .iter()
        .chain(pb.iter())
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let hc = h.as_real().map(|v| C64::new(v, 0.0));
    let e1 = pa.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let e2 = (pb.map(|z| z.conj()) + &pb - hc * &pa)
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    e1.max(e2) / scale
}

#[derive(Debug, Clone)]
pub struct VinnikovTransform {
    pub s: SymplecticMatrix,
    pub characteristic: Characteristic,
    /// K̃ = 2πi A + B 𝔹̃
    pub k: CMat,
    pub mixing: RMat,
    pub reality_defect: f64,
    pub imag_h: Option<f64>,
}

impl VinnikovTransform {
    pub fn assemble(
        s: SymplecticMatrix,
        periods: &IngestedPeriods,
        h: &RealityMatrix,
    ) -> Result<Self> {
        let characteristic = characteristic_from_transform(&s, periods, h)?;
        let k = s.k_matrix(&periods.riemann()?);
        let mixing = mixing_matrix(periods);
        let reality_defect = reality_defect(&s, periods, h);
        Ok(Self {
            s,
            characteristic,
            k,
            mixing,
            reality_defect,
            imag_h: None,
        })
    }

    /// d in the computed basis: (2πi)⁻¹ K̃ᵗ d.
    pub fn map_d(&self, d: &CVec) -> CVec {
        self.k.transpose() * d / TWO_PI_I
    }

    /// (K̃ᵗ)⁻¹ B
    pub fn correction(&self) -> Result<CMat> {
        correction_matrix(&self.s, &self.k)
    }
}

/// M̃ = ImP̃_Bᵗ ReP̃_A − ImP̃_Aᵗ ReP̃_B
pub fn mixing_matrix(p: &IngestedPeriods) -> RMat {
    p.im_b().transpose() * p.re_a() - p.im_a().transpose() * p.re_b()
}

fn candidate_count(g: usize, radius: i64) -> Option<u64> {
    (2 * radius as u64 + 1).checked_pow((g * g) as u32)
}

fn decode(idx: u64, g: usize, radius: i64) -> IMat {
    let base = 2 * radius as u64 + 1;
    let mut rem = idx;
    IMat::from_fn(g, g, |_, _| {
        let v = (rem % base) as i64 - radius;
        rem /= base;
        v
    })
}

fn signed_permutations(g: usize) -> Vec<IMat> {
    fn perms(k: usize, cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in 0..k {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                perms(k, cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut ps = Vec::new();
    perms(g, &mut Vec::new(), &mut vec![false; g], &mut ps);
    let mut out = Vec::new();
    for p in ps {
        for signs in 0..(1u32 << g) {
            let mut m = IMat::zeros(g, g);
            for (i, &j) in p.iter().enumerate() {
                m[(i, j)] = if signs >> i & 1 == 1 { -1 } else { 1 };
            }
            out.push(m);
        }
    }
    out
}

/// Search an ansatz for one free block (A when ImP̃_B is invertible, B when
/// ImP̃_A is) in the order identity, signed permutations, then all integer
/// matrices of growing max-norm up to `budget`.
pub fn search_transform(
    periods: &IngestedPeriods,
    h: &RealityMatrix,
    budget: i64,
) -> Result<VinnikovTransform> {
    let g = periods.genus();
    let tol = periods.integer_tolerance();
    let (free_is_a, x) = if rcond(&periods.im_b()) < 1e10 {
        (
            true,
            periods.im_a() * inverse_checked(&periods.im_b(), "Im P_B")?,
        )
    } else if rcond(&periods.im_a()) < 1e10 {
        (
            false,
            periods.im_b() * inverse_checked(&periods.im_a(), "Im P_A")?,
        )
    } else {
        return Err(Error::SingularPartMatrix("Im P_A and Im P_B".into()));
    };
    let defect_tol = periods.tolerance();
    let attempt = |m: &IMat| -> Option<SymplecticMatrix> {
        // A ImP_A + B ImP_B = 0 fixes the partner block
        let partner = -(m.map(|v| v as f64) * &x);
        let partner = round_integer(&partner, "partner", tol).ok()?;
        let (a, b) = if free_is_a {
            (m.clone(), partner)
        } else {
            (partner, m.clone())
        };
        let s = lemma_closures(PartialSymplectic::AB(a, b), periods, h).ok()?;
        (s.is_symplectic() && reality_defect(&s, periods, h) <= defect_tol).then_some(s)
    };
    let mut firsts = vec![IMat::identity(g, g)];
    firsts.extend(signed_permutations(g));
    if let Some(s) = firsts.iter().find_map(attempt) {
        return VinnikovTransform::assemble(s, periods, h);
    }
    for radius in 1..=budget {
        let Some(count) = candidate_count(g, radius) else {
            break;
        };
        let found = (0..count).into_par_iter().find_map_first(|idx| {
            let m = decode(idx, g, radius);
            if m.iter().map(|v| v.abs()).max() != Some(radius) {
                return None;
            }
            attempt(&m)
        });
        if let Some(s) = found {
            log::info!("symplectic completion found at radius {radius}");
            return VinnikovTransform::assemble(s, periods, h);
        }
    }
    Err(Error::SearchExhausted(budget))
}

fn halves_to_characteristic(d1: &[f64], d2: &[f64], tol: f64) -> Result<Characteristic> {
    Characteristic::from_halves(d1, d2, tol)
}

/// δ̃₁ = ¼ diag(BᵗℍB − 2 ReP̃_A M̃⁻¹ ImP̃_Aᵗ), δ̃₂ = ¼ diag(AᵗℍA − 2 ReP̃_B M̃⁻¹ ImP̃_Bᵗ), mod 1.
pub fn characteristic_from_transform(
    s: &SymplecticMatrix,
    periods: &IngestedPeriods,
    h: &RealityMatrix,
) -> Result<Characteristic> {
    let m = mixing_matrix(periods);
    if !(rcond(&m) < 1e10) {
        return Err(Error::SingularMixingMatrix);
    }
    let minv = m.try_inverse().ok_or(Error::SingularMixingMatrix)?;
    let hr = h.as_real();
    let a = s.a.map(|v| v as f64);
    let b = s.b.map(|v| v as f64);
    let t1 = b.transpose() * &hr * &b - periods.re_a() * &minv * periods.im_a().transpose() * 2.0;
    let t2 = a.transpose() * &hr * &a - periods.re_b() * &minv * periods.im_b().transpose() * 2.0;
    let g = periods.genus();
    let d1: Vec<f64> = (0..g).map(|i| 0.25 * t1[(i, i)]).collect();
    let d2: Vec<f64> = (0..g).map(|i| 0.25 * t2[(i, i)]).collect();
    halves_to_characteristic(&d1, &d2, periods.integer_tolerance().min(5e-4))
}

/// Characteristic of an M-curve directly from the periods (no symplectic matrix).
pub fn mcurve_characteristic(periods: &IngestedPeriods) -> Result<Characteristic> {
    if let Some(h) = &periods.reality {
        if !h.is_m_curve() {
            return Err(Error::InvalidInput(
                "closed-form characteristic needs ℍ = 0".into(),
            ));
        }
    }
    let m = mixing_matrix(periods);
    if !(rcond(&m) < 1e10) {
        return Err(Error::SingularMixingMatrix);
    }
    let minv = m.try_inverse().ok_or(Error::SingularMixingMatrix)?;
    let t1 = periods.re_a() * &minv * periods.im_a().transpose();
    let t2 = periods.re_b() * &minv * periods.im_b().transpose();
    let g = periods.genus();
    let d1: Vec<f64> = (0..g).map(|i| 0.5 * t1[(i, i)]).collect();
    let d2: Vec<f64> = (0..g).map(|i| 0.5 * t2[(i, i)]).collect();
    halves_to_characteristic(&d1, &d2, periods.integer_tolerance().min(5e-4))
}

/// X = K̃⁻¹ B
pub fn correction_matrix(s: &SymplecticMatrix, k: &CMat) -> Result<CMat> {
    let k_inv = k
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularPartMatrix("K".into()))?;
    Ok(k_inv * s.b.map(|v| C64::new(v as f64, 0.0)))
}

fn bilinear(u: &CVec, x: &CMat, v: &CVec) -> C64 {
    u.dot(&(x * v))
}

/// Fay constants of the adapted basis from those of the computed basis.
/// The expansion data of the result is mapped by V = 2πi (K̃ᵗ)⁻¹ Ṽ.
pub fn transform_fay_quantities(
    fc: &FayConstants,
    s: &SymplecticMatrix,
    k: &CMat,
) -> Result<FayConstants> {
    let x = correction_matrix(s, k)?;
    let p = &fc.pair;
    let q2 = fc.q2 * (-bilinear(&p.r, &x, &p.r)).exp();
    // each constant picks up derivatives of ½ zᵗXz; K₂ carries D_a² ln Θ at
    // two arguments, hence the doubled V_aᵗXV_a term
    let q1 = fc.q1 + 0.5 * (bilinear(&p.va, &x, &p.vb) + bilinear(&p.vb, &x, &p.va));
    let k1 = fc.k1 + 0.5 * (bilinear(&p.va, &x, &p.r) + bilinear(&p.r, &x, &p.va));
    let k2 = fc.k2
        - 0.5 * (bilinear(&p.wa, &x, &p.r) + bilinear(&p.r, &x, &p.wa))
        - 2.0 * bilinear(&p.va, &x, &p.va);
    let map = k
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::SingularPartMatrix("K".into()))?
        * TWO_PI_I;
    let pair = crate::fay::PairData {
        va: &map * &p.va,
        wa: &map * &p.wa,
        vb: &map * &p.vb,
        wb: &map * &p.wb,
        r: &map * &p.r,
    };
    Ok(FayConstants {
        q1,
        q2,
        k1,
        k2,
        characteristic: fc.characteristic.clone(),
        pair,
    })
}

/// h̃ = −ṼaᵗXṼa − ṼbᵗXṼb
pub fn h_shift(fc: &FayConstants, s: &SymplecticMatrix, k: &CMat) -> Result<C64> {
    let x = correction_matrix(s, k)?;
    Ok(-bilinear(&fc.pair.va, &x, &fc.pair.va) - bilinear(&fc.pair.vb, &x, &fc.pair.vb))
}

/// Im h̃ = ½ ln|Θ[δ̃](Z̃ + r̃) / Θ[δ̃](Z̃ − r̃)| − Im G̃₃.
pub fn imag_h_correction(
    theta: &ThetaSeries,
    delta: &Characteristic,
    z: &CVec,
    r: &CVec,
    g3_imag: f64,
) -> Result<f64> {
    let plus = theta.eval(&(z + r), delta, &[], &[]);
    let minus = theta.eval(&(z - r), delta, &[], &[]);
    for e in [&plus, &minus] {
        if e.series.norm() <= 1e-14 * e.abs_sum {
            return Err(Error::ThetaZeroAtZ);
        }
    }
    Ok(0.5 * (plus.ln_value() - minus.ln_value()).re - g3_imag)
}
