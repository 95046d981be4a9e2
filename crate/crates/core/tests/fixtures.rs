mod common;

use arnnsci::determinant::{enumerate_sector, passes_symmetry};
use arnnsci::driver::{build_seed, cisd_space};
use arnnsci::eigensolver::{fci_reference, lowest_eigenpair, n_ca, samples_to_reach};
use arnnsci::integrals::assemble_subspace;
use arnnsci::{Error, SeedKind, CHEMICAL_ACCURACY};

#[test]
fn headers_match_reference_files() {
    for name in ["h2", "h4", "lih", "h2o", "c2h2", "c2_631g"] {
        let (t, r) = common::load(name);
        assert_eq!(t.n_spatial(), r.norb, "{name}");
        assert_eq!(t.n_electrons(), r.nelec, "{name}");
    }
}

#[test]
fn hartree_fock_diagonal_matches_reference() {
    for name in ["h2", "h4", "lih", "h2o", "c2h2", "c2_631g"] {
        let (t, r) = common::load(name);
        let hf = t.hartree_fock();
        assert!(passes_symmetry(&hf, &t.sector()).unwrap());
        let e = t.matrix_element(&hf, &hf);
        assert!((e - r.hf).abs() < 1e-8, "{name}: {e} vs {}", r.hf);
    }
}

#[test]
fn fci_matches_reference() {
    for (name, tol) in [("h2", 1e-8), ("h4", 1e-8), ("lih", 1e-7), ("h2o", 1e-7)] {
        let (t, r) = common::load(name);
        let gs = fci_reference(&t, &t.sector()).unwrap();
        let want = r.fci.unwrap();
        assert!((gs.energy - want).abs() < tol, "{name}: {} vs {want}", gs.energy);
        assert!((gs.norm_sqr() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn cisd_matches_reference() {
    for name in ["h2", "h4", "lih", "h2o"] {
        let (t, r) = common::load(name);
        let s = build_seed(SeedKind::Cisd, &t, &t.sector()).unwrap();
        let want = r.cisd.unwrap();
        assert!((s.energy - want).abs() < 1e-7, "{name}: {} vs {want}", s.energy);
    }
}

#[test]
fn h2_cisd_spans_sector() {
    let (t, _) = common::load("h2");
    let s = t.sector();
    let mut cisd = cisd_space(&t, &s).unwrap();
    let mut all: Vec<_> = enumerate_sector(&s).unwrap().collect();
    cisd.sort();
    all.sort();
    assert_eq!(cisd, all);
}

#[test]
fn c2h2_symmetric_sector_size() {
    let (t, _) = common::load("c2h2");
    assert_eq!(t.sector().count(), 78_992);
    assert_eq!(t.n_spin_orbitals(), 24);
}

#[test]
fn h2o_sector_with_and_without_spatial_symmetry() {
    let (t, _) = common::load("h2o");
    assert_eq!(t.sector().count(), 133);
    assert_eq!(arnnsci::determinant::count_sector(14, 10, true).unwrap(), 441);
}

#[test]
fn large_basis_guard() {
    let (t, _) = common::load("c2_631g");
    match fci_reference(&t, &t.sector()) {
        Err(Error::GuardExceeded { size, .. }) => assert!(size > 1_000_000),
        other => panic!("expected guard error, got {other:?}"),
    }
}

#[test]
fn n_ca_matches_linear_scan() {
    let (t, _) = common::load("h4");
    let gs = fci_reference(&t, &t.sector()).unwrap();
    let k = n_ca(&gs, &t, CHEMICAL_ACCURACY).unwrap();
    let sorted: Vec<_> = gs.sorted_by_probability().into_iter().map(|(c, _)| c).collect();
    let scan = (1..=sorted.len())
        .find(|&j| {
            let h = assemble_subspace(&sorted[..j], &t).unwrap();
            lowest_eigenpair(&h, 1e-9).unwrap().energy - gs.energy <= CHEMICAL_ACCURACY
        })
        .unwrap();
    assert_eq!(k, scan);
    assert_eq!(n_ca(&gs, &t, f64::INFINITY).unwrap(), 1);
    assert!(samples_to_reach(&gs, k).unwrap() >= 1);
}

#[test]
fn nested_bases_are_variational() {
    let (t, _) = common::load("h4");
    let gs = fci_reference(&t, &t.sector()).unwrap();
    let sorted: Vec<_> = gs.sorted_by_probability().into_iter().map(|(c, _)| c).collect();
    let mut last = f64::INFINITY;
    for k in 1..=sorted.len() {
        let e = lowest_eigenpair(&assemble_subspace(&sorted[..k], &t).unwrap(), 1e-9).unwrap().energy;
        assert!(e <= last + 1e-12);
        assert!(e >= gs.energy - 1e-10);
        last = e;
    }
}
