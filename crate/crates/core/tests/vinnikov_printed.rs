//! Printed period matrices of three genus-3 plane quartics and the
//! symplectic quadruples printed alongside them.

use std::path::PathBuf;

use thetawave::theta::Characteristic;
use thetawave::vinnikov::{
    characteristic_from_transform, lemma_closures, mcurve_characteristic, reality_defect,
    search_transform, IMat, IngestedPeriods, PartialSymplectic, RealityMatrix, SymplecticMatrix,
};

fn load(name: &str) -> (IngestedPeriods, RealityMatrix) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(format!("{name}.periods"));
    let p = IngestedPeriods::load(&path).unwrap();
    p.validate().unwrap();
    let h = p.reality.clone().unwrap();
    (p, h)
}

fn m3(v: [i64; 9]) -> IMat {
    IMat::from_row_slice(3, 3, &v)
}

fn quadruple(a: [i64; 9], b: [i64; 9], c: [i64; 9], d: [i64; 9]) -> SymplecticMatrix {
    SymplecticMatrix::new(m3(a), m3(b), m3(c), m3(d))
        .expect("printed quadruple is integer symplectic")
}

fn ch(a: [u8; 3], b: [u8; 3]) -> Characteristic {
    Characteristic::new(a.to_vec(), b.to_vec())
}

const TOL: f64 = 5e-4;

#[test]
fn trott() {
    let (p, h) = load("trott");
    assert!(h.is_m_curve());
    let s = quadruple(
        [1, 0, 0, 0, 1, 0, 0, 0, 1],
        [-1, 0, 0, 0, -1, 0, 0, 0, 0],
        [1, 0, 0, 0, 1, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 0, 0, 1],
    );
    assert!(reality_defect(&s, &p, &h) < TOL);
    let want = ch([0, 0, 0], [1, 1, 0]);
    assert_eq!(characteristic_from_transform(&s, &p, &h).unwrap(), want);
    assert_eq!(mcurve_characteristic(&p).unwrap(), want);
    // A = I and the printed B close to the printed C, D
    let closed = lemma_closures(PartialSymplectic::AB(s.a.clone(), s.b.clone()), &p, &h).unwrap();
    assert_eq!(closed, s);
    let found = search_transform(&p, &h, 2).unwrap();
    assert!(found.s.is_symplectic());
    assert_eq!(found.characteristic, want);
}

#[test]
fn dividing() {
    let (p, h) = load("dividing_g3");
    assert_eq!((h.rank(), h.ovals), (2, 2));
    let s = quadruple(
        [-1, 2, -1, 2, -1, 0, 0, 2, -1],
        [1, 0, 1, 0, 1, 0, 1, 0, 0],
        [1, -1, -1, -1, 1, -1, 0, 0, 1],
        [0, 1, 1, 1, 0, 1, 0, 0, -1],
    );
    assert!(reality_defect(&s, &p, &h) < TOL);
    assert_eq!(
        characteristic_from_transform(&s, &p, &h).unwrap(),
        ch([0, 0, 1], [1, 1, 0])
    );
    assert_eq!(
        lemma_closures(PartialSymplectic::AB(s.a.clone(), s.b.clone()), &p, &h).unwrap(),
        s
    );
    // the search may land on another valid basis; it must still be one
    let found = search_transform(&p, &h, 2).unwrap();
    assert!(found.s.is_symplectic() && found.reality_defect < TOL);
}

#[test]
fn fermat() {
    let (p, h) = load("fermat4");
    assert_eq!(h.h, m3([0, 1, 0, 1, 0, 0, 0, 0, 0]));
    let s = quadruple(
        [0, 1, 1, 1, 0, 0, 0, 0, 1],
        [-1, -2, -1, 0, 0, -1, -1, -1, 0],
        [0, 1, 0, 0, 0, 1, 1, -1, 0],
        [0, 0, -1, 0, -1, 0, 0, 0, 1],
    );
    assert!(reality_defect(&s, &p, &h) < TOL);
    assert_eq!(
        characteristic_from_transform(&s, &p, &h).unwrap(),
        ch([0, 0, 1], [0, 1, 0])
    );
    assert_eq!(
        lemma_closures(PartialSymplectic::CD(s.c.clone(), s.d.clone()), &p, &h).unwrap(),
        s
    );
    assert!(mcurve_characteristic(&p).is_err());
}

#[test]
fn perturbed_quadruple_rejected() {
    let (p, h) = load("trott");
    let bad = SymplecticMatrix {
        a: m3([1, 0, 0, 0, 1, 0, 0, 0, 1]),
        b: m3([0; 9]),
        c: m3([0; 9]),
        d: m3([1, 0, 0, 0, 1, 0, 0, 0, 1]),
    };
    assert!(bad.is_symplectic());
    // identity is symplectic but does not reach a Vinnikov basis
    assert!(reality_defect(&bad, &p, &h) > 0.1);
}
