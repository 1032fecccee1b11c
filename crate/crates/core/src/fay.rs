//! Constants q₁, q₂, K₁, K₂ built from an odd non-singular characteristic, and
//! the two bilinear theta identities they satisfy, used as certificates.

use crate::error::{Error, Result};
use crate::hyperelliptic::{SheetPoint, Surface};
use crate::theta::{Characteristic, ThetaEval, ThetaSeries};
use crate::{CVec, C64};

/// Expansion data for an ordered point pair.
#[derive(Debug, Clone)]
pub struct PairData {
    pub va: CVec,
    pub wa: CVec,
    pub vb: CVec,
    pub wb: CVec,
    /// ∫_a^b ω
    pub r: CVec,
}

impl PairData {
    pub fn from_surface(s: &Surface, a: &SheetPoint, b: &SheetPoint) -> Result<Self> {
        let ea = s.local_expansion(a)?;
        let eb = s.local_expansion(b)?;
        let r = s.abel_map(a, b)?;
        Ok(Self {
            va: ea.v,
            wa: ea.w,
            vb: eb.v,
            wb: eb.w,
            r,
        })
    }

    pub fn swapped(&self) -> Self {
        Self {
            va: self.vb.clone(),
            wa: self.wb.clone(),
            vb: self.va.clone(),
            wb: self.wa.clone(),
            r: -&self.r,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FayConstants {
    pub q1: C64,
    pub q2: C64,
    pub k1: C64,
    pub k2: C64,
    pub characteristic: Characteristic,
    pub pair: PairData,
}

/// Odd characteristic with the largest gradient at the origin.
pub fn find_odd_nonsingular_characteristic(theta: &ThetaSeries) -> Result<Characteristic> {
    let g = theta.g;
    let units: Vec<CVec> = (0..g)
        .map(|i| {
            let mut e = CVec::zeros(g);
            e[i] = C64::new(1.0, 0.0);
            e
        })
        .collect();
    let dirs: Vec<&CVec> = units.iter().collect();
    let zero = CVec::zeros(g);
    let scale = theta
        .eval(&zero, &Characteristic::zero(g), &[], &[])
        .abs_sum;
    let mut best: Option<(f64, Characteristic)> = None;
    for ch in Characteristic::all(g).into_iter().filter(|c| c.is_odd()) {
        let e = theta.eval(&zero, &ch, &dirs, &[]);
        let norm = (0..g).map(|k| e.d(k).norm_sqr()).sum::<f64>().sqrt();
        if best.as_ref().map_or(true, |(n, _)| norm > *n) {
            best = Some((norm, ch));
        }
    }
    match best {
        Some((n, ch)) if n > 1e-10 * scale => {
            if n < 1e-8 * scale {
                log::warn!("odd characteristic {ch} is nearly singular (gradient {n:.3e})");
            }
            Ok(ch)
        }
        _ => Err(Error::NoNonsingularOddCharacteristic),
    }
}

pub fn fay_constants(
    theta: &ThetaSeries,
    ch: &Characteristic,
    pair: PairData,
) -> Result<FayConstants> {
    let g = theta.g;
    let zero = CVec::zeros(g);
    let zc = Characteristic::zero(g);
    let e0 = theta.eval(&zero, ch, &[&pair.va, &pair.vb, &pair.wa], &[]);
    let er = theta.eval(&pair.r, ch, &[&pair.va, &pair.vb], &[(0, 1)]);
    if er.series.norm() < 1e-12 * er.abs_sum {
        return Err(Error::ThetaVanishesAtR);
    }
    let q1 = er.d2_ln(0);
    let q2 = e0.d(0) * e0.d(1) / (er.ln_value() * 2.0).exp();
    let k1 = 0.5 * e0.d(2) / e0.d(0) + er.d_ln(0);
    let fr = theta.eval(&pair.r, &zc, &[&pair.va, &pair.wa], &[(0, 0)]);
    let f0 = theta.eval(&zero, &zc, &[&pair.va], &[(0, 0)]);
    let la = fr.d_ln(0);
    let k2 = -fr.d_ln(1) - (fr.d2_ln(0) + f0.d2_ln(0)) - (la - k1) * (la - k1);
    Ok(FayConstants {
        q1,
        q2,
        k1,
        k2,
        characteristic: ch.clone(),
        pair,
    })
}

/// Directions used by [`probe`]: V_a, V_b, W_a; pairs (a,b), (a,a), (b,b).
pub const PROBE_PAIRS: [(usize, usize); 3] = [(0, 1), (0, 0), (1, 1)];

/// Zero-characteristic evaluation carrying everything the residuals need.
pub fn probe(theta: &ThetaSeries, z: &CVec, pair: &PairData) -> ThetaEval {
    theta.eval(
        z,
        &Characteristic::zero(theta.g),
        &[&pair.va, &pair.vb, &pair.wa],
        &PROBE_PAIRS,
    )
}

/// The scalars of ln Θ entering both identities at one argument.
#[derive(Debug, Clone, Copy)]
pub struct ProbeValues {
    pub ln: C64,
    /// D_a ln Θ
    pub da: C64,
    /// D_{W_a} ln Θ
    pub dwa: C64,
    /// D_a D_b ln Θ
    pub dab: C64,
    /// D_a² ln Θ
    pub daa: C64,
}

impl ProbeValues {
    /// Read from an evaluation with first-derivative slots `ia`, `iwa` and
    /// pair slots `pab`, `paa` (missing slots give zero).
    pub fn from_eval(e: &ThetaEval, ia: usize, iwa: usize, pab: Option<usize>, paa: usize) -> Self {
        Self {
            ln: e.ln_value(),
            da: e.d_ln(ia),
            dwa: e.d_ln(iwa),
            dab: pab.map_or(C64::new(0.0, 0.0), |p| e.d2_ln(p)),
            daa: e.d2_ln(paa),
        }
    }

    fn from_probe(e: &ThetaEval) -> Self {
        Self::from_eval(e, 0, 2, Some(0), 1)
    }
}

/// Both identity residuals from probes at z, z + r and z − r.
pub fn residuals_from_probes(
    fc: &FayConstants,
    at: &ThetaEval,
    plus: &ThetaEval,
    minus: &ThetaEval,
) -> (f64, f64) {
    residuals_from_values(
        fc,
        &ProbeValues::from_probe(at),
        &ProbeValues::from_probe(plus),
        minus.ln_value(),
    )
}

/// Residuals from the scalars at z and z + r and ln Θ(z − r).
pub fn residuals_from_values(
    fc: &FayConstants,
    at: &ProbeValues,
    plus: &ProbeValues,
    minus_ln: C64,
) -> (f64, f64) {
    let lab = at.dab;
    let t = fc.q2 * (plus.ln + minus_ln - at.ln * 2.0).exp();
    let r1 = (lab - fc.q1 - t).norm() / lab.norm().max(fc.q1.norm()).max(t.norm());
    let da = plus.da - at.da - fc.k1;
    let terms = [
        plus.dwa - at.dwa,
        plus.daa - at.daa,
        da * da,
        at.daa * 2.0,
        fc.k2,
    ];
    let sum: C64 = terms.iter().sum();
    let scale = terms.iter().map(|t| t.norm()).fold(0.0, f64::max);
    (r1, sum.norm() / scale)
}

fn checked_probe(theta: &ThetaSeries, z: &CVec, pair: &PairData) -> Result<ThetaEval> {
    let e = probe(theta, z, pair);
    if e.series.norm() <= 1e-12 * e.abs_sum {
        return Err(Error::ThetaZeroAtZ);
    }
    Ok(e)
}

pub fn identity_residual_1(theta: &ThetaSeries, z: &CVec, fc: &FayConstants) -> Result<f64> {
    let at = checked_probe(theta, z, &fc.pair)?;
    let plus = probe(theta, &(z + &fc.pair.r), &fc.pair);
    let minus = probe(theta, &(z - &fc.pair.r), &fc.pair);
    Ok(residuals_from_probes(fc, &at, &plus, &minus).0)
}

pub fn identity_residual_2(theta: &ThetaSeries, z: &CVec, fc: &FayConstants) -> Result<f64> {
    let at = checked_probe(theta, z, &fc.pair)?;
    let plus = checked_probe(theta, &(z + &fc.pair.r), &fc.pair)?;
    let minus = probe(theta, &(z - &fc.pair.r), &fc.pair);
    Ok(residuals_from_probes(fc, &at, &plus, &minus).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperelliptic::{BranchPointList, Involution};
    use crate::TWO_PI_I;

    fn setup(points: &[f64], a: (f64, u8), b: (f64, u8)) -> (ThetaSeries, FayConstants) {
        let pts = points.iter().map(|&x| C64::new(x, 0.0)).collect();
        let s = Surface::new(
            BranchPointList::new(pts, 1.0, Involution::Tau2).unwrap(),
            128,
        )
        .unwrap();
        let th = ThetaSeries::new(s.riemann()).unwrap();
        let ch = find_odd_nonsingular_characteristic(&th).unwrap();
        let pa = s.point(C64::new(a.0, 0.0), a.1).unwrap();
        let pb = s.point(C64::new(b.0, 0.0), b.1).unwrap();
        let fc = fay_constants(&th, &ch, PairData::from_surface(&s, &pa, &pb).unwrap()).unwrap();
        (th, fc)
    }

    fn zs(g: usize) -> Vec<CVec> {
        (0..8)
            .map(|k| {
                CVec::from_fn(g, |i, _| {
                    C64::new(
                        (k as f64 * 0.37 + i as f64).sin() * 3.0,
                        (k as f64 * 1.3 - i as f64).cos() * 4.0,
                    )
                })
            })
            .collect()
    }

    #[test]
    fn identities_hold() {
        for (pts, a, b) in [
            (&[-2.0, -1.0, 1.0, 2.0][..], (-1.5, 1), (1.5, 2)),
            (&[-2.0, -1.0, 0.0, 1.0, 2.0, 3.0], (-1.9, 1), (-1.1, 2)),
            (
                &[-2.0, -1.0, 0.0, 1e-10, 2.0, 2.0000000001],
                (-1.9, 1),
                (-1.8, 1),
            ),
            (
                &[-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0],
                (-2.5, 1),
                (0.5, 2),
            ),
        ] {
            let (th, fc) = setup(pts, a, b);
            for z in zs(th.g) {
                let r1 = identity_residual_1(&th, &z, &fc).unwrap();
                let r2 = identity_residual_2(&th, &z, &fc).unwrap();
                assert!(r1 < 1e-9 && r2 < 1e-9, "{pts:?}: {r1:e} {r2:e}");
            }
        }
    }

    #[test]
    fn residuals_lattice_invariant() {
        let (th, fc) = setup(&[-2.0, -1.0, 0.0, 1.0, 2.0, 3.0], (-1.9, 1), (-1.1, 2));
        for z in zs(2) {
            let shifted = &z + CVec::from_vec(vec![TWO_PI_I * 2.0, -TWO_PI_I]);
            let d1 = identity_residual_1(&th, &z, &fc).unwrap()
                - identity_residual_1(&th, &shifted, &fc).unwrap();
            let d2 = identity_residual_2(&th, &z, &fc).unwrap()
                - identity_residual_2(&th, &shifted, &fc).unwrap();
            assert!(d1.abs() < 1e-10 && d2.abs() < 1e-10);
        }
    }

    #[test]
    fn deterministic_constants() {
        let (th, fc) = setup(&[-2.0, -1.0, 0.0, 1.0, 2.0, 3.0], (-1.9, 1), (-1.1, 2));
        let again = fay_constants(&th, &fc.characteristic, fc.pair.clone()).unwrap();
        assert_eq!(
            (again.q1, again.q2, again.k1, again.k2),
            (fc.q1, fc.q2, fc.k1, fc.k2)
        );
        assert_eq!(
            find_odd_nonsingular_characteristic(&th).unwrap(),
            fc.characteristic
        );
        assert!(fc.characteristic.is_odd());
    }
}
