//! Real hyperelliptic curves μ² = σ₀ Π(λ − λ_i) without branching at
//! infinity: cut system, periods, normalized differentials, Abel map.
//!
//! Sheet 1 is the principal square root of σ₀Π(λ−λ_i) (with the root of a
//! negative real taken as +i·√|·|); sheet 2 is its negative. Periods use a
//! separate cut-system branch μ₁ that is analytic off the cuts.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::quadrature::{clenshaw_curtis_rule, ChebyshevRule};
use crate::{CMat, CVec, C64, I, TWO_PI_I};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Involution {
    /// (λ, μ) ↦ (λ̄, μ̄)
    Tau1,
    /// (λ, μ) ↦ (λ̄, −μ̄)
    Tau2,
}

impl Involution {
    pub fn apply(self, p: &SheetPoint) -> (C64, C64) {
        match self {
            Self::Tau1 => (p.lambda.conj(), p.mu.conj()),
            Self::Tau2 => (p.lambda.conj(), -p.mu.conj()),
        }
    }

    /// Whether `b` is the image of `a`, to relative precision `tol`.
    pub fn maps(self, a: &SheetPoint, b: &SheetPoint, tol: f64) -> bool {
        let (lam, mu) = self.apply(a);
        (lam - b.lambda).norm() <= tol * lam.norm().max(1.0)
            && (mu - b.mu).norm() <= tol * mu.norm().max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone)]
pub struct BranchPointList {
    pub points: Vec<C64>,
    pub sigma0: f64,
    pub involution: Involution,
}

impl BranchPointList {
    pub fn new(points: Vec<C64>, sigma0: f64, involution: Involution) -> Result<Self> {
        let n = points.len();
        if n % 2 == 1 {
            return Err(Error::InvalidInput(
                "odd number of branch points (branching at infinity) is not supported".into(),
            ));
        }
        if n < 4 {
            return Err(Error::InvalidInput(format!(
                "need at least 4 branch points, got {n}"
            )));
        }
        if sigma0 != 1.0 && sigma0 != -1.0 {
            return Err(Error::InvalidInput(format!(
                "sigma0 must be ±1, got {sigma0}"
            )));
        }
        for i in 0..n {
            for j in 0..i {
                if points[i] == points[j] {
                    return Err(Error::InvalidInput(format!(
                        "repeated branch point {}",
                        points[i]
                    )));
                }
            }
        }
        let scale = points.iter().map(|z| z.norm()).fold(1.0, f64::max);
        for z in &points {
            let closed = points
                .iter()
                .any(|w| (w - z.conj()).norm() <= 1e-14 * scale);
            if !closed {
                return Err(Error::InvalidInput(format!(
                    "branch point {z} has no conjugate partner"
                )));
            }
        }
        Ok(Self {
            points,
            sigma0,
            involution,
        })
    }

    pub fn genus(&self) -> usize {
        self.points.len() / 2 - 1
    }

    /// σ₀ Π_{i ∉ skip} (λ − λ_i)
    pub fn product(&self, lam: C64, skip: &[usize]) -> C64 {
        let mut v = C64::new(self.sigma0, 0.0);
        for (i, z) in self.points.iter().enumerate() {
            if !skip.contains(&i) {
                v *= lam - z;
            }
        }
        v
    }

    pub fn is_real(&self) -> bool {
        self.points.iter().all(|z| z.im == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SheetPoint {
    pub lambda: C64,
    pub sheet: u8,
    pub mu: C64,
}

impl SheetPoint {
    pub fn swapped(&self) -> Self {
        Self {
            lambda: self.lambda,
            sheet: 3 - self.sheet,
            mu: -self.mu,
        }
    }
}

/// Root taken on sheet 1 at λ.
pub fn principal_root(p: C64) -> C64 {
    if p.im == 0.0 && p.re < 0.0 {
        C64::new(0.0, (-p.re).sqrt())
    } else {
        p.sqrt()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Cut {
    /// indices into the branch point list
    pub p: usize,
    pub q: usize,
}

#[derive(Debug, Clone)]
pub struct HomologyLayout {
    pub cuts: Vec<Cut>,
    /// index of the base branch point ξ
    pub base: usize,
    pub real: bool,
}

pub fn build_homology(curve: &BranchPointList) -> Result<HomologyLayout> {
    let pts = &curve.points;
    let n_real = pts.iter().filter(|z| z.im == 0.0).count();
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    let cuts = if n_real == pts.len() {
        idx.sort_by(|&a, &b| pts[a].re.total_cmp(&pts[b].re));
        idx.chunks(2)
            .map(|c| Cut { p: c[0], q: c[1] })
            .collect::<Vec<_>>()
    } else if n_real == 0 {
        let mut up: Vec<usize> = idx.into_iter().filter(|&i| pts[i].im > 0.0).collect();
        up.sort_by(|&a, &b| {
            pts[a]
                .re
                .total_cmp(&pts[b].re)
                .then(pts[a].im.total_cmp(&pts[b].im))
        });
        up.into_iter()
            .map(|i| {
                let q = (0..pts.len())
                    .min_by(|&a, &b| {
                        (pts[a] - pts[i].conj())
                            .norm()
                            .total_cmp(&(pts[b] - pts[i].conj()).norm())
                    })
                    .unwrap();
                Cut { p: i, q }
            })
            .collect()
    } else {
        return Err(Error::MixedRealityUnsupported);
    };
    let base = cuts[0].p;
    Ok(HomologyLayout {
        cuts,
        base,
        real: n_real == pts.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisTag {
    CutAdapted,
    Ingested,
}

/// Periods with cycles along rows: `pa[(k, j)] = ∫_{A_k} ν_j`.
#[derive(Debug, Clone)]
pub struct PeriodData {
    pub pa: CMat,
    pub pb: CMat,
    pub riemann: CMat,
    /// ω = 𝒩 ν; satisfies 𝒩 P_Aᵗ = 2πi I.
    pub norm: CMat,
    pub tag: BasisTag,
    /// max |𝔹 − 𝔹ᵗ| before symmetrization
    pub asymmetry: f64,
}

impl PeriodData {
    pub fn from_matrices(pa: CMat, pb: CMat, tag: BasisTag) -> Result<Self> {
        let g = pa.nrows();
        let cond = condition_number(&pa);
        if cond > 1e12 {
            log::warn!("near-singular A-periods (condition {cond:.3e})");
        }
        let pa_inv = pa
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularPartMatrix("A-period".into()))?;
        let b = (&pb * &pa_inv) * TWO_PI_I;
        let asymmetry = (&b - b.transpose())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        let riemann = (&b + b.transpose()) * C64::new(0.5, 0.0);
        let norm = pa_inv.transpose() * TWO_PI_I;
        debug_assert_eq!(norm.nrows(), g);
        Ok(Self {
            pa,
            pb,
            riemann,
            norm,
            tag,
            asymmetry,
        })
    }
}

pub fn condition_number(m: &CMat) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let mx = sv.iter().cloned().fold(0.0, f64::max);
    let mn = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if mn == 0.0 {
        f64::INFINITY
    } else {
        mx / mn
    }
}

/// Continue a square root along an ordered sample set, starting from a known
/// value at `anchor`: at each step the root closer to its predecessor wins.
pub(crate) fn continue_roots(squares: &[C64], anchor: usize, value: C64) -> Vec<C64> {
    let n = squares.len();
    let mut out = vec![C64::new(0.0, 0.0); n];
    out[anchor] = value;
    let mut prev = value;
    for i in anchor + 1..n {
        let mut r = squares[i].sqrt();
        if (r - prev).norm() > (r + prev).norm() {
            r = -r;
        }
        out[i] = r;
        prev = r;
    }
    prev = value;
    for i in (0..anchor).rev() {
        let mut r = squares[i].sqrt();
        if (r - prev).norm() > (r + prev).norm() {
            r = -r;
        }
        out[i] = r;
        prev = r;
    }
    out
}

fn odd_sqrt_pair(w: C64) -> C64 {
    // √(w−1)√(w+1), made odd in w to keep the cut exactly on [−1, 1]
    if w.re >= 0.0 {
        (w - 1.0).sqrt() * (w + 1.0).sqrt()
    } else {
        -((-w - 1.0).sqrt() * (-w + 1.0).sqrt())
    }
}

fn segment_distance(z: C64, a: C64, b: C64) -> f64 {
    let d = b - a;
    let len2 = d.norm_sqr();
    if len2 == 0.0 {
        return (z - a).norm();
    }
    let t = (((z - a) * d.conj()).re / len2).clamp(0.0, 1.0);
    (z - (a + d * t)).norm()
}

const CLEARANCE: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct Surface {
    pub curve: BranchPointList,
    pub layout: HomologyLayout,
    pub periods: PeriodData,
    rule: ChebyshevRule,
    /// un-normalized ∫_ξ^β ν along the cut system, per branch point β
    half_periods: Vec<CVec>,
}

impl Surface {
    pub fn new(curve: BranchPointList, nc: usize) -> Result<Self> {
        let nc = if nc % 2 == 1 { nc + 1 } else { nc };
        let rule = clenshaw_curtis_rule(nc)?;
        let layout = build_homology(&curve)?;
        let mut s = Self {
            curve,
            layout,
            periods: PeriodData::from_matrices(
                CMat::identity(1, 1),
                CMat::identity(1, 1),
                BasisTag::CutAdapted,
            )?,
            rule,
            half_periods: Vec::new(),
        };
        let (pa, pb, gaps) = s.raw_periods();
        s.periods = PeriodData::from_matrices(pa.clone(), pb, BasisTag::CutAdapted)?;
        s.half_periods = s.build_half_periods(&pa, &gaps);
        Ok(s)
    }

    pub fn genus(&self) -> usize {
        self.curve.genus()
    }

    pub fn riemann(&self) -> &CMat {
        &self.periods.riemann
    }

    pub fn rule(&self) -> &ChebyshevRule {
        &self.rule
    }

    fn cut_geometry(&self, l: usize) -> (C64, C64) {
        let c = self.layout.cuts[l];
        let (p, q) = (self.curve.points[c.p], self.curve.points[c.q]);
        ((p + q) * 0.5, (q - p) * 0.5)
    }

    /// Cut-system branch of μ, analytic off the cuts; `skip` omits one cut factor.
    pub fn mu_cut(&self, lam: C64, skip: Option<usize>) -> C64 {
        let mut v = if self.curve.sigma0 > 0.0 {
            C64::new(1.0, 0.0)
        } else {
            I
        };
        for l in 0..self.layout.cuts.len() {
            if Some(l) == skip {
                continue;
            }
            let (c, r) = self.cut_geometry(l);
            v *= r * odd_sqrt_pair((lam - c) / r);
        }
        v
    }

    fn powers(&self, lam: C64) -> CVec {
        let g = self.genus();
        let mut v = CVec::zeros(g);
        let mut p = C64::new(1.0, 0.0);
        for k in 0..g {
            v[k] = p;
            p *= lam;
        }
        v
    }

    /// ∫ λ^k dλ/μ over the straight segment between branch points `ip → iq`,
    /// with μ fixed by its value at the midpoint.
    fn segment_between_branch_points(&self, ip: usize, iq: usize, mu_mid: C64) -> CVec {
        let (p, q) = (self.curve.points[ip], self.curve.points[iq]);
        let (c, r) = ((p + q) * 0.5, (q - p) * 0.5);
        let nodes = &self.rule.nodes;
        let lams: Vec<C64> = nodes
            .iter()
            .map(|&x| c + r * (FRAC_PI_2 * x).sin())
            .collect();
        let sq: Vec<C64> = lams
            .iter()
            .map(|&l| -self.curve.product(l, &[ip, iq]))
            .collect();
        let mid = nodes.len() / 2;
        let red = continue_roots(&sq, mid, mu_mid / r);
        let mut acc = CVec::zeros(self.genus());
        for ((&l, &m), &w) in lams.iter().zip(&red).zip(&self.rule.weights) {
            acc += self.powers(l) * (w * FRAC_PI_2 / m);
        }
        acc
    }

    /// ∫ ν from the right end of cut `left` to the left end of cut `left+1`
    /// along the real axis; each half uses a cosh substitution that absorbs
    /// the root at the nearer endpoint.
    fn real_gap(&self, left: usize) -> CVec {
        let right = left + 1;
        let pts = &self.curve.points;
        let m = (pts[self.layout.cuts[left].q] + pts[self.layout.cuts[right].p]) * 0.5;
        let mut acc = CVec::zeros(self.genus());
        for (cut, sign) in [(left, 1.0), (right, -1.0)] {
            let (c, r) = self.cut_geometry(cut);
            let u_max = (sign * (m - c).re / r.re).acosh();
            for (&x, &w) in self.rule.nodes.iter().zip(&self.rule.weights) {
                let u = 0.5 * u_max * (x + 1.0);
                let lam = c + r * (sign * u.cosh());
                acc += self.powers(lam) * (sign * 0.5 * u_max * w / self.mu_cut(lam, Some(cut)));
            }
        }
        acc
    }

    fn raw_periods(&self) -> (CMat, CMat, Vec<CVec>) {
        let g = self.genus();
        let mut pa = CMat::zeros(g, g);
        let mut pb = CMat::zeros(g, g);
        let mut gaps = Vec::with_capacity(g);
        let mut running = CVec::zeros(g);
        for k in 1..=g {
            let cut = self.layout.cuts[k];
            let (c, r) = self.cut_geometry(k);
            let anchor = self.mu_cut(c, Some(k)) * (-I * r);
            let a = self.segment_between_branch_points(cut.p, cut.q, anchor) * C64::new(2.0, 0.0);
            pa.set_row(k - 1, &a.transpose());
            let gap = if self.layout.real {
                self.real_gap(k - 1)
            } else {
                let from = self.layout.cuts[k - 1].q;
                let mid = (self.curve.points[from] + self.curve.points[cut.p]) * 0.5;
                self.segment_between_branch_points(from, cut.p, self.mu_cut(mid, None))
            };
            running += &gap * C64::new(2.0, 0.0);
            pb.set_row(k - 1, &running.transpose());
            gaps.push(gap);
        }
        (pa, pb, gaps)
    }

    fn build_half_periods(&self, pa: &CMat, gaps: &[CVec]) -> Vec<CVec> {
        let g = self.genus();
        let mut h = vec![CVec::zeros(g); self.curve.points.len()];
        let cuts = &self.layout.cuts;
        // the loops around all cuts add up to zero
        let mut a0 = CVec::zeros(g);
        for k in 0..g {
            a0 -= pa.row(k).transpose();
        }
        h[cuts[0].q] = a0 * C64::new(0.5, 0.0);
        for k in 1..=g {
            h[cuts[k].p] = &h[cuts[k - 1].q] + &gaps[k - 1];
            h[cuts[k].q] = &h[cuts[k].p] + pa.row(k - 1).transpose() * C64::new(0.5, 0.0);
        }
        h
    }

    pub fn is_branch_point(&self, lam: C64) -> bool {
        let scale = lam.norm().max(1.0);
        self.curve
            .points
            .iter()
            .any(|z| (z - lam).norm() <= 1e-14 * scale)
    }

    pub fn point(&self, lam: C64, sheet: u8) -> Result<SheetPoint> {
        if self.is_branch_point(lam) {
            return Err(Error::PointIsBranchPoint);
        }
        let r = principal_root(self.curve.product(lam, &[]));
        let mu = if sheet == 2 { -r } else { r };
        Ok(SheetPoint {
            lambda: lam,
            sheet: if sheet == 2 { 2 } else { 1 },
            mu,
        })
    }

    fn clearance(&self, from: usize, lam: C64) -> f64 {
        let z = self.curve.points[from];
        let len = (lam - z).norm();
        self.curve
            .points
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != from)
            .map(|(_, &w)| segment_distance(w, z, lam) / len)
            .fold(f64::INFINITY, f64::min)
    }

    /// Branch point from which the straight path to λ is used: ξ itself unless
    /// that segment grazes another branch point.
    pub fn path_origin(&self, lam: C64) -> Result<usize> {
        let base = self.layout.base;
        if self.clearance(base, lam) >= CLEARANCE {
            return Ok(base);
        }
        let (best, clear) = (0..self.curve.points.len())
            .map(|i| (i, self.clearance(i, lam)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if clear < 1e-10 {
            return Err(Error::PathTooCloseToBranchPoint {
                point: format!("{}", self.curve.points[best]),
                dist: clear,
            });
        }
        if clear < CLEARANCE {
            log::debug!("Abel path to {lam} has clearance {clear:.3e}");
        }
        Ok(best)
    }

    /// Un-normalized ∫_β^p ν on a straight segment from branch point β.
    fn integral_from_branch_point(&self, beta: usize, p: &SheetPoint) -> CVec {
        let b = self.curve.points[beta];
        let (c, r) = ((b + p.lambda) * 0.5, (p.lambda - b) * 0.5);
        let s2r = (r * 2.0).sqrt();
        let nodes = &self.rule.nodes;
        let svals: Vec<f64> = nodes.iter().map(|&x| FRAC_PI_2 * x).collect();
        let lams: Vec<C64> = svals.iter().map(|&s| c + r * s.sin()).collect();
        let sq: Vec<C64> = lams
            .iter()
            .map(|&l| self.curve.product(l, &[beta]))
            .collect();
        // nodes[0] = 1 is the endpoint p itself
        let m = continue_roots(&sq, 0, p.mu / s2r);
        let mut acc = CVec::zeros(self.genus());
        for i in 0..nodes.len() {
            let f = s2r * (FRAC_PI_4 + 0.5 * svals[i]).cos() / m[i];
            acc += self.powers(lams[i]) * (f * self.rule.weights[i] * FRAC_PI_2);
        }
        acc
    }

    /// ∫_ξ^p ω
    pub fn abel_from_base(&self, p: &SheetPoint) -> Result<CVec> {
        if self.is_branch_point(p.lambda) {
            return Err(Error::PointIsBranchPoint);
        }
        let beta = self.path_origin(p.lambda)?;
        let raw = &self.half_periods[beta] + self.integral_from_branch_point(beta, p);
        Ok(&self.periods.norm * raw)
    }

    /// ∫_a^b ω = ∫_ξ^b ω − ∫_ξ^a ω
    pub fn abel_map(&self, a: &SheetPoint, b: &SheetPoint) -> Result<CVec> {
        if a == b {
            return Ok(CVec::zeros(self.genus()));
        }
        Ok(self.abel_from_base(b)? - self.abel_from_base(a)?)
    }

    pub fn local_expansion(&self, p: &SheetPoint) -> Result<LocalExpansion> {
        if self.is_branch_point(p.lambda) {
            return Err(Error::PointIsBranchPoint);
        }
        let g = self.genus();
        let lam = p.lambda;
        let v = self.powers(lam);
        let mut dv = CVec::zeros(g);
        for k in 1..g {
            dv[k] = v[k - 1] * k as f64;
        }
        let log_der: C64 = self.curve.points.iter().map(|z| 0.5 / (lam - z)).sum();
        let vv = &self.periods.norm * (&v / p.mu);
        let ww = &self.periods.norm * ((dv - &v * log_der) / p.mu);
        Ok(LocalExpansion {
            point: *p,
            v: vv,
            w: ww,
        })
    }

    /// Walk from `start` along the polyline, continuing μ; returns the end
    /// point together with the normalized integral of ω along the path.
    pub fn path_integral(&self, path: &[C64], start: &SheetPoint) -> Result<(SheetPoint, CVec)> {
        let rule = clenshaw_curtis_rule(32)?;
        let g = self.genus();
        let mut acc = CVec::zeros(g);
        let mut z = start.lambda;
        let mut mu = start.mu;
        let min_dist = |z: C64| {
            self.curve
                .points
                .iter()
                .map(|w| (w - z).norm())
                .fold(f64::INFINITY, f64::min)
        };
        for &target in path.iter().skip_while(|&&w| w == start.lambda) {
            let mut steps = 0usize;
            while z != target {
                let d = min_dist(z);
                if d < 1e-12 {
                    return Err(Error::PathTooCloseToBranchPoint {
                        point: format!("{z}"),
                        dist: d,
                    });
                }
                steps += 1;
                if steps > 1_000_000 {
                    return Err(Error::ContinuationAmbiguous(steps));
                }
                let rem = target - z;
                let h = rem.norm().min(0.4 * d);
                let next = if h >= rem.norm() {
                    target
                } else {
                    z + rem * (h / rem.norm())
                };
                // nodes from z (x = −1) to next (x = 1)
                let n = rule.nodes.len();
                let lams: Vec<C64> = (0..n)
                    .map(|j| {
                        let x = rule.nodes[n - 1 - j];
                        z * (0.5 * (1.0 - x)) + next * (0.5 * (1.0 + x))
                    })
                    .collect();
                let sq: Vec<C64> = lams.iter().map(|&l| self.curve.product(l, &[])).collect();
                let mut roots = Vec::with_capacity(n);
                let mut prev = mu;
                for s in &sq {
                    let mut r = s.sqrt();
                    let (dm, dp) = ((r - prev).norm(), (r + prev).norm());
                    if (dm - dp).abs() <= 10.0 * f64::EPSILON * r.norm() {
                        return Err(Error::ContinuationAmbiguous(steps));
                    }
                    if dm > dp {
                        r = -r;
                    }
                    roots.push(r);
                    prev = r;
                }
                let half = (next - z) * 0.5;
                for j in 0..n {
                    acc += self.powers(lams[j]) * (half * rule.weights[n - 1 - j] / roots[j]);
                }
                mu = roots[n - 1];
                z = next;
            }
        }
        let root = principal_root(self.curve.product(z, &[]));
        let sheet = if (mu - root).norm() <= (mu + root).norm() {
            1
        } else {
            2
        };
        Ok((
            SheetPoint {
                lambda: z,
                sheet,
                mu,
            },
            &self.periods.norm * acc,
        ))
    }

    pub fn continue_mu(&self, path: &[C64], start: &SheetPoint) -> Result<SheetPoint> {
        Ok(self.path_integral(path, start)?.0)
    }

    /// max over the real part eigenvalues of the symmetrized Riemann matrix
    pub fn max_real_eigenvalue(&self) -> f64 {
        let re: DMatrix<f64> = self.periods.riemann.map(|z| z.re);
        let sym = (&re + re.transpose()) * 0.5;
        sym.symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct LocalExpansion {
    pub point: SheetPoint,
    pub v: CVec,
    pub w: CVec,
}
