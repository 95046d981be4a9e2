#![allow(dead_code)]

use std::path::PathBuf;

use arnnsci::determinant::{spatial_of, Block};
use arnnsci::IntegralTable;
use rand::{Rng, SeedableRng};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub struct Reference {
    pub hf: f64,
    pub cisd: Option<f64>,
    pub fci: Option<f64>,
    pub norb: usize,
    pub nelec: usize,
}

pub fn load(name: &str) -> (IntegralTable, Reference) {
    let dir = fixture_dir();
    let t = IntegralTable::from_path(dir.join(format!("{name}.fcidump"))).expect("fixture parses");
    let text = std::fs::read_to_string(dir.join(format!("{name}.ref"))).expect("reference file");
    let v: serde_json::Value = serde_json::from_str(&text).expect("reference is JSON");
    let r = Reference {
        hf: v["hf_energy"].as_f64().expect("hf_energy"),
        cisd: v["cisd_energy"].as_f64(),
        fci: v["fci_energy"].as_f64(),
        norb: v["norb"].as_u64().expect("norb") as usize,
        nelec: v["nelec"].as_u64().expect("nelec") as usize,
    };
    (t, r)
}

/// Random table with `n` spatial orbitals, all irreps totally symmetric.
pub fn random_table(n: usize, n_electrons: usize, seed: u64) -> IntegralTable {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut h1 = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..=p {
            let v = rng.random_range(-1.0..1.0);
            h1[p * n + q] = v;
            h1[q * n + p] = v;
        }
    }
    let idx = |p: usize, q: usize, r: usize, s: usize| ((p * n + q) * n + r) * n + s;
    let mut h2 = vec![f64::NAN; n * n * n * n];
    for p in 0..n {
        for q in 0..n {
            for r in 0..n {
                for s in 0..n {
                    if !h2[idx(p, q, r, s)].is_nan() {
                        continue;
                    }
                    let v = rng.random_range(-0.5..0.5);
                    for (a, b, c, d) in [
                        (p, q, r, s),
                        (q, p, r, s),
                        (p, q, s, r),
                        (q, p, s, r),
                        (r, s, p, q),
                        (s, r, p, q),
                        (r, s, q, p),
                        (s, r, q, p),
                    ] {
                        h2[idx(a, b, c, d)] = v;
                    }
                }
            }
        }
    }
    let core = rng.random_range(-1.0..1.0);
    IntegralTable::from_parts(n_electrons, 0, core, h1, h2, vec![0; n], 0).expect("valid random table")
}

/// Column-sparse operator on the 2^M Fock space: column `j` maps to
/// `(row, coefficient)` or nothing. Ladder operators have this form and
/// the form is closed under products.
#[derive(Clone)]
pub struct Monomial(Vec<Option<(usize, f64)>>);

impl Monomial {
    /// `a_q` under the Jordan–Wigner string over bits `< q`.
    pub fn annihilate(m: usize, q: usize) -> Self {
        Monomial(
            (0..1usize << m)
                .map(|j| {
                    if j >> q & 1 == 0 {
                        return None;
                    }
                    let sign = if (j & ((1 << q) - 1)).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
                    Some((j ^ (1 << q), sign))
                })
                .collect(),
        )
    }

    pub fn create(m: usize, q: usize) -> Self {
        Monomial(
            (0..1usize << m)
                .map(|j| {
                    if j >> q & 1 == 1 {
                        return None;
                    }
                    let sign = if (j & ((1 << q) - 1)).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
                    Some((j ^ (1 << q), sign))
                })
                .collect(),
        )
    }

    /// Matrix product `self · rhs`.
    pub fn then(&self, rhs: &Monomial) -> Monomial {
        Monomial(
            rhs.0
                .iter()
                .map(|e| e.and_then(|(k, c)| self.0[k].map(|(i, d)| (i, c * d))))
                .collect(),
        )
    }
}

/// Dense `2^M × 2^M` Hamiltonian
/// `E_core + Σ h_PQ a†_P a_Q + ½ Σ (PS|QR) a†_P a†_Q a_R a_S` over spin-orbitals.
pub fn brute_force_hamiltonian(t: &IntegralTable) -> Vec<Vec<f64>> {
    let m = t.n_spin_orbitals();
    let dim = 1usize << m;
    let orb = |q: usize| spatial_of(m, q);
    let ad: Vec<Monomial> = (0..m).map(|q| Monomial::create(m, q)).collect();
    let a: Vec<Monomial> = (0..m).map(|q| Monomial::annihilate(m, q)).collect();
    let mut h = vec![vec![0.0; dim]; dim];
    for (j, row) in h.iter_mut().enumerate() {
        row[j] += t.core_energy();
    }
    let mut add = |op: &Monomial, coef: f64| {
        for (j, e) in op.0.iter().enumerate() {
            if let Some((i, c)) = e {
                h[*i][j] += coef * c;
            }
        }
    };
    for p in 0..m {
        for q in 0..m {
            let ((sp, bp), (sq, bq)) = (orb(p), orb(q));
            if bp == bq {
                add(&ad[p].then(&a[q]), t.h1(sp, sq));
            }
        }
    }
    for p in 0..m {
        for q in 0..m {
            for r in 0..m {
                for s in 0..m {
                    let (op, oq, or, os) = (orb(p), orb(q), orb(r), orb(s));
                    // (PS|QR): spin of P matches S, spin of Q matches R
                    if op.1 != os.1 || oq.1 != or.1 {
                        continue;
                    }
                    let v = t.h2(op.0, os.0, oq.0, or.0);
                    if v == 0.0 {
                        continue;
                    }
                    let term = ad[p].then(&ad[q]).then(&a[r]).then(&a[s]);
                    add(&term, 0.5 * v);
                }
            }
        }
    }
    h
}

pub fn block_of(m: usize, q: usize) -> Block {
    spatial_of(m, q).1
}
