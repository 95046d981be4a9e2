//! Molecular integrals and Hamiltonian matrix elements between determinants.
//!
//! The Hamiltonian is
//!
//! ```text
//! H = E_core + Σ_pq h_pq a†_p a_q + ½ Σ_pqrs (ps|qr) a†_p a†_q a_r a_s
//! ```
//!
//! over spin-orbitals, where `(pq|rs)` are chemists'-notation integrals over
//! spatial orbitals carrying spin deltas `δ(σp,σq) δ(σr,σs)`. Fermionic signs
//! follow the creation-operator order of increasing bit index.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use crate::determinant::{spatial_of, Block, Configuration, ExcitationOrder, SymmetrySector};
use crate::eigensolver::SparseMatrix;
use crate::error::{Error, Result};

/// Bases larger than this are assembled through excitation connectivity
/// rather than an all-pairs scan.
pub const ALL_PAIRS_LIMIT: usize = 5000;

const SYMMETRY_TOL: f64 = 1e-12;

/// Core energy and one-/two-electron integrals over spatial orbitals.
#[derive(Debug, Clone)]
pub struct IntegralTable {
    n_spatial: usize,
    n_electrons: usize,
    ms2: i32,
    core_energy: f64,
    h1: Vec<f64>,
    h2: Vec<f64>,
    orbital_irreps: Vec<u8>,
    target_irrep: u8,
    // per spin-orbital: spatial index and spin
    so_spatial: Vec<usize>,
    so_up: Vec<bool>,
}

/// Excitation degree of a determinant pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExcitationDegree {
    Zero,
    One,
    Two,
    Higher,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixElement {
    pub value: f64,
    pub degree: ExcitationDegree,
}

impl IntegralTable {
    /// Build from full (not symmetry-reduced) arrays. `h1` is `n×n`
    /// row-major, `h2` is `n⁴` with index `((p n + q) n + r) n + s` for `(pq|rs)`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n_electrons: usize,
        ms2: i32,
        core_energy: f64,
        h1: Vec<f64>,
        h2: Vec<f64>,
        orbital_irreps: Vec<u8>,
        target_irrep: u8,
    ) -> Result<Self> {
        let n = orbital_irreps.len();
        if h1.len() != n * n || h2.len() != n * n * n * n {
            return Err(Error::InvalidArgument(format!(
                "integral arrays do not match {n} spatial orbitals"
            )));
        }
        if 2 * n > crate::determinant::MAX_SPIN_ORBITALS {
            return Err(Error::InvalidArgument(format!("{} spin-orbitals exceeds 64", 2 * n)));
        }
        if n_electrons > 2 * n {
            return Err(Error::InvalidArgument(format!("{n_electrons} electrons in {n} orbitals")));
        }
        if (n_electrons as i32 + ms2) % 2 != 0 || ms2.unsigned_abs() as usize > n_electrons {
            return Err(Error::InvalidArgument(format!("MS2={ms2} incompatible with {n_electrons} electrons")));
        }
        let t = Self::assemble(n, n_electrons, ms2, core_energy, h1, h2, orbital_irreps, target_irrep);
        t.check_symmetry()?;
        Ok(t)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        n: usize,
        n_electrons: usize,
        ms2: i32,
        core_energy: f64,
        h1: Vec<f64>,
        h2: Vec<f64>,
        orbital_irreps: Vec<u8>,
        target_irrep: u8,
    ) -> Self {
        let m = 2 * n;
        let (so_spatial, so_up) = (0..m)
            .map(|q| {
                let (p, block) = spatial_of(m, q);
                (p, block == Block::Up)
            })
            .unzip();
        IntegralTable {
            n_spatial: n,
            n_electrons,
            ms2,
            core_energy,
            h1,
            h2,
            orbital_irreps,
            target_irrep,
            so_spatial,
            so_up,
        }
    }

    fn check_symmetry(&self) -> Result<()> {
        let n = self.n_spatial;
        for p in 0..n {
            for q in 0..n {
                if (self.h1(p, q) - self.h1(q, p)).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidArgument(format!("h1 not symmetric at ({p},{q})")));
                }
                for r in 0..n {
                    for s in 0..n {
                        let v = self.h2(p, q, r, s);
                        let perms = [
                            self.h2(q, p, r, s),
                            self.h2(p, q, s, r),
                            self.h2(q, p, s, r),
                            self.h2(r, s, p, q),
                            self.h2(s, r, p, q),
                            self.h2(r, s, q, p),
                            self.h2(s, r, q, p),
                        ];
                        if perms.iter().any(|w| (w - v).abs() > SYMMETRY_TOL) {
                            return Err(Error::InvalidArgument(format!(
                                "h2 lacks 8-fold symmetry at ({p}{q}|{r}{s})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_fcidump(&text)
    }

    pub fn n_spatial(&self) -> usize {
        self.n_spatial
    }

    pub fn n_spin_orbitals(&self) -> usize {
        2 * self.n_spatial
    }

    pub fn n_electrons(&self) -> usize {
        self.n_electrons
    }

    pub fn ms2(&self) -> i32 {
        self.ms2
    }

    pub fn core_energy(&self) -> f64 {
        self.core_energy
    }

    pub fn orbital_irreps(&self) -> &[u8] {
        &self.orbital_irreps
    }

    pub fn target_irrep(&self) -> u8 {
        self.target_irrep
    }

    #[inline]
    pub fn h1(&self, p: usize, q: usize) -> f64 {
        self.h1[p * self.n_spatial + q]
    }

    /// Chemists' `(pq|rs)` over spatial orbitals.
    #[inline]
    pub fn h2(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        let n = self.n_spatial;
        self.h2[((p * n + q) * n + r) * n + s]
    }

    /// Spin-orbital one-electron integral.
    #[inline]
    pub fn one_body(&self, p: usize, q: usize) -> f64 {
        if self.so_up[p] == self.so_up[q] {
            self.h1(self.so_spatial[p], self.so_spatial[q])
        } else {
            0.0
        }
    }

    /// Spin-orbital chemists' integral `(pq|rs)`.
    #[inline]
    pub fn chem(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        if self.so_up[p] == self.so_up[q] && self.so_up[r] == self.so_up[s] {
            self.h2(self.so_spatial[p], self.so_spatial[q], self.so_spatial[r], self.so_spatial[s])
        } else {
            0.0
        }
    }

    /// Physical sector implied by the header: electron count, `Sz = 0` when
    /// `MS2 = 0`, target irrep and orbital irreps.
    pub fn sector(&self) -> SymmetrySector {
        SymmetrySector::new(self.n_electrons, self.ms2 == 0, self.target_irrep, self.orbital_irreps.clone())
            .expect("integral table validated at construction")
    }

    /// Aufbau determinant in the integral basis.
    pub fn hartree_fock(&self) -> Configuration {
        let n_down = (self.n_electrons as i32 - self.ms2) as usize / 2;
        let n_up = (self.n_electrons as i32 + self.ms2) as usize / 2;
        Configuration::aufbau(self.n_spatial, n_down, n_up).expect("validated electron count")
    }

    fn check_dim(&self, c: &Configuration) -> Result<()> {
        if c.n_bits() != self.n_spin_orbitals() {
            Err(Error::DimensionMismatch { expected: self.n_spin_orbitals(), found: c.n_bits() })
        } else {
            Ok(())
        }
    }

    /// `⟨a|H|b⟩` for configurations of matching dimension (unchecked).
    #[inline]
    pub fn matrix_element(&self, a: &Configuration, b: &Configuration) -> f64 {
        if a.popcount() != b.popcount() {
            return 0.0;
        }
        let diff = a.bits() ^ b.bits();
        match diff.count_ones() {
            0 => self.diagonal(a.bits()),
            2 => {
                let (lo, hi) = canonical(a.bits(), b.bits());
                self.single(lo, hi)
            }
            4 => {
                let (lo, hi) = canonical(a.bits(), b.bits());
                self.double(lo, hi)
            }
            _ => 0.0,
        }
    }

    fn diagonal(&self, bits: u64) -> f64 {
        let mut e = self.core_energy;
        let occ: Vec<usize> = bit_indices(bits).collect();
        for (x, &i) in occ.iter().enumerate() {
            e += self.one_body(i, i);
            for &j in &occ[x + 1..] {
                e += self.chem(i, i, j, j) - self.chem(i, j, j, i);
            }
        }
        e
    }

    fn single(&self, from: u64, to: u64) -> f64 {
        let diff = from ^ to;
        let i = (from & diff).trailing_zeros() as usize;
        let k = (to & diff).trailing_zeros() as usize;
        let mut v = self.one_body(k, i);
        for j in bit_indices(from) {
            if j != i {
                v += self.chem(k, i, j, j) - self.chem(k, j, j, i);
            }
        }
        let between = between_mask(i, k);
        if (from & between).count_ones() % 2 == 1 {
            -v
        } else {
            v
        }
    }

    fn double(&self, from: u64, to: u64) -> f64 {
        let diff = from ^ to;
        let holes = from & diff;
        let parts = to & diff;
        if holes.count_ones() != 2 {
            return 0.0;
        }
        let i = holes.trailing_zeros() as usize;
        let j = (holes & (holes - 1)).trailing_zeros() as usize;
        let k = parts.trailing_zeros() as usize;
        let l = (parts & (parts - 1)).trailing_zeros() as usize;
        // sign of a†_k a†_l a_j a_i |from⟩
        let mut state = from;
        let mut parity = (state & below(i)).count_ones();
        state &= !(1 << i);
        parity += (state & below(j)).count_ones();
        state &= !(1 << j);
        parity += (state & below(l)).count_ones();
        state |= 1 << l;
        parity += (state & below(k)).count_ones();
        let v = self.chem(k, i, l, j) - self.chem(k, j, l, i);
        if parity % 2 == 1 {
            -v
        } else {
            v
        }
    }
}

#[inline]
fn canonical(a: u64, b: u64) -> (u64, u64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[inline]
fn below(q: usize) -> u64 {
    (1u64 << q) - 1
}

#[inline]
fn between_mask(i: usize, k: usize) -> u64 {
    let (lo, hi) = if i < k { (i, k) } else { (k, i) };
    below(hi) & !below(lo + 1)
}

fn bit_indices(mut bits: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if bits == 0 {
            None
        } else {
            let q = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(q)
        }
    })
}

/// Checked Slater–Condon evaluation of `⟨a|H|b⟩`.
pub fn slater_condon(a: &Configuration, b: &Configuration, t: &IntegralTable) -> Result<MatrixElement> {
    t.check_dim(a)?;
    t.check_dim(b)?;
    let degree = if a.popcount() != b.popcount() {
        ExcitationDegree::Higher
    } else {
        match (a.bits() ^ b.bits()).count_ones() {
            0 => ExcitationDegree::Zero,
            2 => ExcitationDegree::One,
            4 => ExcitationDegree::Two,
            _ => ExcitationDegree::Higher,
        }
    };
    let value = match degree {
        ExcitationDegree::Higher => 0.0,
        _ => t.matrix_element(a, b),
    };
    Ok(MatrixElement { value, degree })
}

/// Sparse symmetric Hamiltonian restricted to `basis`, in basis order.
pub fn assemble_subspace(basis: &[Configuration], t: &IntegralTable) -> Result<SparseMatrix> {
    let mut index: HashMap<u64, usize> = HashMap::with_capacity(basis.len());
    for (i, c) in basis.iter().enumerate() {
        t.check_dim(c)?;
        if index.insert(c.bits(), i).is_some() {
            return Err(Error::DuplicateConfiguration(c.to_string()));
        }
    }
    let rows: Vec<Vec<(usize, f64)>> = if basis.len() <= ALL_PAIRS_LIMIT {
        basis
            .par_iter()
            .map(|a| {
                let mut row = Vec::new();
                for (j, b) in basis.iter().enumerate() {
                    if (a.bits() ^ b.bits()).count_ones() <= 4 {
                        let v = t.matrix_element(a, b);
                        if v != 0.0 || a == b {
                            row.push((j, v));
                        }
                    }
                }
                row
            })
            .collect()
    } else {
        basis
            .par_iter()
            .enumerate()
            .map(|(i, a)| {
                let mut row = vec![(i, t.matrix_element(a, a))];
                for order in [ExcitationOrder::Singles, ExcitationOrder::Doubles] {
                    for b in a.excitations(order) {
                        if let Some(&j) = index.get(&b.bits()) {
                            let v = t.matrix_element(a, &b);
                            if v != 0.0 {
                                row.push((j, v));
                            }
                        }
                    }
                }
                row.sort_unstable_by_key(|&(j, _)| j);
                row
            })
            .collect()
    };
    Ok(SparseMatrix::from_rows(basis.len(), rows))
}

/// Parse FCIDUMP text (Molpro-style namelist header, chemists' notation,
/// 1-based indices, `i=j=k=l=0` for the core energy).
pub fn parse_fcidump(text: &str) -> Result<IntegralTable> {
    let mut lines = text.lines().enumerate();
    let mut header = String::new();
    let mut started = false;
    let mut terminated = false;
    for (no, line) in lines.by_ref() {
        let upper = line.to_ascii_uppercase();
        if !started {
            if upper.trim().is_empty() {
                continue;
            }
            if !upper.contains("&FCI") {
                return Err(Error::Fcidump { line: no + 1, msg: "expected &FCI namelist header".into() });
            }
            started = true;
        }
        let end = upper.find("&END").or_else(|| upper.trim_end().ends_with('/').then(|| upper.rfind('/').unwrap()));
        match end {
            Some(pos) => {
                header.push_str(&upper[..pos]);
                terminated = true;
                break;
            }
            None => {
                header.push_str(&upper);
                header.push(' ');
            }
        }
    }
    if !terminated {
        return Err(Error::Fcidump { line: 0, msg: "unterminated namelist header".into() });
    }
    let fields = parse_namelist(&header.replacen("&FCI", "", 1));
    let scalar = |key: &str| -> Result<Option<i64>> {
        match fields.get(key) {
            None => Ok(None),
            Some(v) if v.len() == 1 => v[0]
                .parse::<i64>()
                .map(Some)
                .map_err(|_| Error::Fcidump { line: 1, msg: format!("invalid {key} value {:?}", v[0]) }),
            Some(v) => Err(Error::Fcidump { line: 1, msg: format!("{key} expects one value, got {}", v.len()) }),
        }
    };
    let norb = scalar("NORB")?.ok_or(Error::Fcidump { line: 1, msg: "missing NORB".into() })?;
    let nelec = scalar("NELEC")?.ok_or(Error::Fcidump { line: 1, msg: "missing NELEC".into() })?;
    let ms2 = scalar("MS2")?.unwrap_or(0);
    let isym = scalar("ISYM")?.unwrap_or(1);
    if norb <= 0 || nelec < 0 {
        return Err(Error::Fcidump { line: 1, msg: format!("invalid NORB={norb} NELEC={nelec}") });
    }
    let n = norb as usize;
    if 2 * n > crate::determinant::MAX_SPIN_ORBITALS {
        return Err(Error::Fcidump { line: 1, msg: format!("NORB={n} exceeds 32 spatial orbitals") });
    }
    let molpro_to_mask = |k: i64| -> Result<u8> {
        if (1..=8).contains(&k) {
            Ok((k - 1) as u8)
        } else {
            Err(Error::Fcidump { line: 1, msg: format!("irrep label {k} outside 1..=8") })
        }
    };
    let orbital_irreps = match fields.get("ORBSYM") {
        Some(v) => {
            if v.len() != n {
                return Err(Error::Fcidump { line: 1, msg: format!("ORBSYM has {} entries, NORB={n}", v.len()) });
            }
            v.iter()
                .map(|s| {
                    s.parse::<i64>()
                        .map_err(|_| Error::Fcidump { line: 1, msg: format!("invalid ORBSYM entry {s:?}") })
                        .and_then(molpro_to_mask)
                })
                .collect::<Result<Vec<u8>>>()?
        }
        None => vec![0; n],
    };
    let target_irrep = molpro_to_mask(isym)?;

    let mut h1 = vec![0.0; n * n];
    let mut h2 = vec![0.0; n * n * n * n];
    let mut core = None;
    for (no, line) in lines {
        let line_no = no + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(Error::Fcidump { line: line_no, msg: format!("expected 5 fields, got {}", toks.len()) });
        }
        let value: f64 = toks[0]
            .replace(['D', 'd'], "E")
            .parse()
            .map_err(|_| Error::Fcidump { line: line_no, msg: format!("invalid value {:?}", toks[0]) })?;
        let mut idx = [0usize; 4];
        for (slot, tok) in idx.iter_mut().zip(&toks[1..]) {
            let v: usize = tok
                .parse()
                .map_err(|_| Error::Fcidump { line: line_no, msg: format!("invalid index {tok:?}") })?;
            if v > n {
                return Err(Error::Fcidump { line: line_no, msg: format!("index {v} out of range 0..={n}") });
            }
            *slot = v;
        }
        match idx {
            [0, 0, 0, 0] => core = Some(value),
            [i, 0, 0, 0] if i > 0 => {} // orbital energy
            [i, j, 0, 0] if i > 0 && j > 0 => {
                h1[(i - 1) * n + (j - 1)] = value;
                h1[(j - 1) * n + (i - 1)] = value;
            }
            [i, j, k, l] if i > 0 && j > 0 && k > 0 && l > 0 => {
                let (p, q, r, s) = (i - 1, j - 1, k - 1, l - 1);
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
                    h2[((a * n + b) * n + c) * n + d] = value;
                }
            }
            _ => {
                return Err(Error::Fcidump { line: line_no, msg: format!("malformed index pattern {idx:?}") });
            }
        }
    }
    let core_energy = core.unwrap_or_else(|| {
        log::warn!("FCIDUMP has no core-energy line; assuming 0");
        0.0
    });
    if (nelec + ms2) % 2 != 0 || ms2.abs() > nelec || nelec as usize > 2 * n {
        return Err(Error::Fcidump { line: 1, msg: format!("inconsistent NELEC={nelec} MS2={ms2}") });
    }
    Ok(IntegralTable::assemble(n, nelec as usize, ms2 as i32, core_energy, h1, h2, orbital_irreps, target_irrep))
}

fn parse_namelist(header: &str) -> HashMap<String, Vec<String>> {
    let mut fields: HashMap<String, Vec<String>> = HashMap::new();
    let mut key: Option<String> = None;
    for tok in header.replace(',', " ").split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            let k = k.trim().to_string();
            let entry = fields.entry(k.clone()).or_default();
            entry.clear();
            if !v.is_empty() {
                entry.push(v.to_string());
            }
            key = Some(k);
        } else if let Some(k) = &key {
            fields.get_mut(k).expect("key inserted").push(tok.to_string());
        }
    }
    fields
}

#[cfg(test)]
mod tests {
    use super::*;

    const H2_LIKE: &str = " &FCI NORB=2,NELEC=2,MS2=0,\n  ORBSYM=1,1,\n  ISYM=1,\n &END\n\
        0.6757 1 1 1 1\n0.1809 2 1 2 1\n0.6646 2 2 1 1\n0.6986 2 2 2 2\n\
        -1.2563 1 1 0 0\n-0.4719 2 2 0 0\n0.7137 0 0 0 0\n";

    #[test]
    fn parses_header_and_core() {
        let t = parse_fcidump(H2_LIKE).unwrap();
        assert_eq!(t.n_spatial(), 2);
        assert_eq!(t.n_spin_orbitals(), 4);
        assert_eq!(t.n_electrons(), 2);
        assert_eq!(t.ms2(), 0);
        assert_eq!(t.core_energy(), 0.7137);
        assert_eq!(t.h2(1, 0, 1, 0), 0.1809);
        assert_eq!(t.h2(0, 1, 0, 1), 0.1809);
        assert_eq!(t.h2(0, 0, 1, 1), 0.6646);
        assert!(t.check_symmetry().is_ok());
    }

    #[test]
    fn fortran_exponents_and_slash_terminator() {
        let text = "&FCI NORB=1, NELEC=2, MS2=0 /\n 1.5D-01 1 1 1 1\n-1.0d0 1 1 0 0\n";
        let t = parse_fcidump(text).unwrap();
        assert_eq!(t.h2(0, 0, 0, 0), 0.15);
        assert_eq!(t.h1(0, 0), -1.0);
        assert_eq!(t.core_energy(), 0.0);
        assert_eq!(t.hartree_fock().to_string(), "11");
        // E = 2 h11 + (11|11)
        let hf = t.hartree_fock();
        assert!((t.matrix_element(&hf, &hf) - (-2.0 + 0.15)).abs() < 1e-15);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_fcidump("garbage"), Err(Error::Fcidump { .. })));
        assert!(parse_fcidump("&FCI NELEC=2 &END\n").is_err());
        let bad_index = "&FCI NORB=2,NELEC=2,MS2=0 &END\n0.5 3 1 1 1\n";
        assert!(matches!(parse_fcidump(bad_index), Err(Error::Fcidump { line: 2, .. })));
        let bad_sym = "&FCI NORB=2,NELEC=2,ORBSYM=1,9 &END\n";
        assert!(parse_fcidump(bad_sym).is_err());
        assert!(parse_fcidump("&FCI NORB=2,NELEC=2\n0.1 1 1 1 1\n").is_err());
    }

    #[test]
    fn degree_rules() {
        let t = parse_fcidump(H2_LIKE).unwrap();
        let a: Configuration = "0101".parse().unwrap();
        let b: Configuration = "1010".parse().unwrap();
        let e = slater_condon(&a, &b, &t).unwrap();
        assert_eq!(e.degree, ExcitationDegree::Two);
        let e0 = slater_condon(&a, &a, &t).unwrap();
        assert_eq!(e0.degree, ExcitationDegree::Zero);
        let c: Configuration = "01".parse().unwrap();
        assert!(matches!(slater_condon(&a, &c, &t), Err(Error::DimensionMismatch { .. })));
        // different electron numbers never couple
        let d: Configuration = "0111".parse().unwrap();
        assert_eq!(slater_condon(&a, &d, &t).unwrap().value, 0.0);
    }

    #[test]
    fn higher_excitations_vanish() {
        let n = 6;
        let t = IntegralTable::from_parts(
            6,
            0,
            0.0,
            vec![0.1; n * n],
            vec![0.01; n * n * n * n],
            vec![0; n],
            0,
        )
        .unwrap();
        let a = Configuration::aufbau(6, 3, 3).unwrap();
        let b = Configuration::new(a.bits().reverse_bits() >> 52, 12).unwrap();
        assert_eq!(a.excitation_degree(&b), 6);
        let e = slater_condon(&a, &b, &t).unwrap();
        assert_eq!(e.degree, ExcitationDegree::Higher);
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn duplicate_basis_rejected() {
        let t = parse_fcidump(H2_LIKE).unwrap();
        let hf = t.hartree_fock();
        assert!(matches!(assemble_subspace(&[hf, hf], &t), Err(Error::DuplicateConfiguration(_))));
    }

    #[test]
    fn asymmetric_parts_rejected() {
        let mut h1 = vec![0.0; 4];
        h1[1] = 0.3;
        assert!(IntegralTable::from_parts(2, 0, 0.0, h1, vec![0.0; 16], vec![0, 0], 0).is_err());
    }
}
