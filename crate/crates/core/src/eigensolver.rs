//! Lowest eigenpairs of subspace Hamiltonians and exact sector references.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

use crate::determinant::{enumerate_sector, Configuration, SymmetrySector};
use crate::error::{Error, Result};
use crate::integrals::{assemble_subspace, IntegralTable};

/// Dimension up to which the dense symmetric solver is used.
pub const DENSE_LIMIT: usize = 2000;
/// Lanczos iteration (matrix-vector product) cap.
pub const LANCZOS_MAX_ITER: usize = 500;
/// Default residual tolerance, Hartree.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Largest sector [`fci_reference`] will diagonalize.
pub const FCI_GUARD: u128 = 1_000_000;
/// Gap below which a degeneracy warning is logged.
pub const DEGENERACY_GAP: f64 = 1e-8;

const KRYLOV_BLOCK: usize = 120;

/// Compressed-sparse-row symmetric matrix with both triangles stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from per-row `(column, value)` lists; columns need not be sorted.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(rows.len(), n);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                assert!(j < n, "column {j} out of range");
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix { n, row_ptr, col_idx, values }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let rows = (0..n)
            .map(|i| (0..n).filter(|&j| m[(i, j)] != 0.0 || i == j).map(|j| (j, m[(i, j)])).collect())
            .collect();
        SparseMatrix::from_rows(n, rows)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[row.clone()].binary_search(&j) {
            Ok(k) => self.values[row.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// `y = A x`, parallel over rows with a fixed per-row summation order.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .into_par_iter()
            .with_min_len(256)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// Rayleigh quotient `xᵀAx / xᵀx`.
    pub fn rayleigh_quotient(&self, x: &[f64]) -> f64 {
        let ax = self.matvec(x);
        dot(x, &ax) / dot(x, x)
    }

    /// Restriction to the given rows/columns, in the given order.
    pub fn submatrix(&self, indices: &[usize]) -> SparseMatrix {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &i) in indices.iter().enumerate() {
            pos[i] = k;
        }
        let rows = indices
            .iter()
            .map(|&i| self.row(i).filter(|&(j, _)| pos[j] != usize::MAX).map(|(j, v)| (pos[j], v)).collect())
            .collect();
        SparseMatrix::from_rows(indices.len(), rows)
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub energy: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual_norm(h: &SparseMatrix, x: &[f64], e: f64) -> f64 {
    let hx = h.matvec(x);
    hx.iter().zip(x).map(|(a, b)| (a - e * b).powi(2)).sum::<f64>().sqrt()
}

/// Flip the sign so the largest-magnitude entry (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Lowest eigenvalue and normalized eigenvector of a symmetric matrix.
///
/// Dense solve up to [`DENSE_LIMIT`], restarted Lanczos with full
/// reorthogonalization above. The residual `‖Hx − Ex‖` is recomputed with
/// one explicit matrix-vector product before returning.
pub fn lowest_eigenpair(h: &SparseMatrix, tol: f64) -> Result<Eigenpair> {
    if h.dim() == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let (energy, mut vector, gap) = if h.dim() <= DENSE_LIMIT {
        dense_lowest(h)
    } else {
        lanczos_lowest(h, tol)?
    };
    fix_sign(&mut vector);
    if let Some(gap) = gap {
        if gap < DEGENERACY_GAP {
            log::warn!("near-degenerate ground state (gap {gap:.3e} Ha)");
        }
    }
    let residual = residual_norm(h, &vector, energy);
    if !residual.is_finite() || residual > tol {
        return Err(Error::NonConvergence { iterations: 0, residual });
    }
    Ok(Eigenpair { energy, vector, residual })
}

fn dense_lowest(h: &SparseMatrix) -> (f64, Vec<f64>, Option<f64>) {
    let n = h.dim();
    if n == 1 {
        return (h.get(0, 0), vec![1.0], None);
    }
    let eig = SymmetricEigen::new(h.to_dense());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let k = order[0];
    let vector: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
    let gap = eig.eigenvalues[order[1]] - eig.eigenvalues[k];
    (eig.eigenvalues[k], vector, Some(gap))
}

fn tridiagonal_lowest(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>, Option<f64>) {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let y = eig.eigenvectors.column(order[0]).iter().copied().collect();
    let gap = (k > 1).then(|| eig.eigenvalues[order[1]] - eig.eigenvalues[order[0]]);
    (eig.eigenvalues[order[0]], y, gap)
}

fn lanczos_lowest(h: &SparseMatrix, tol: f64) -> Result<(f64, Vec<f64>, Option<f64>)> {
    let n = h.dim();
    // Start on the lowest diagonal entry with a small deterministic admixture.
    let diag = h.diagonal();
    let start = (0..n).min_by(|&a, &b| diag[a].total_cmp(&diag[b])).expect("n > 0");
    let mut rng = crate::rng::stream(0x1A2C_305E, "lanczos", n as u64);
    let mut x: Vec<f64> = (0..n).map(|_| 1e-3 * (rng.random::<f64>() - 0.5)).collect();
    x[start] += 1.0;
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);

    let mut iterations = 0;
    let mut best = (f64::INFINITY, x.clone(), f64::INFINITY, None);
    while iterations < LANCZOS_MAX_ITER {
        let block = KRYLOV_BLOCK.min(n).min(LANCZOS_MAX_ITER - iterations);
        let mut basis: Vec<Vec<f64>> = vec![x.clone()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        for step in 0..block {
            let mut w = h.matvec(&basis[step]);
            iterations += 1;
            let a = dot(&basis[step], &w);
            alpha.push(a);
            // two passes of classical Gram–Schmidt against the whole basis
            for _ in 0..2 {
                let coeffs: Vec<f64> = basis.par_iter().map(|v| dot(v, &w)).collect();
                for (v, c) in basis.iter().zip(&coeffs) {
                    w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
                }
            }
            let b = norm(&w);
            let (_, y, _) = tridiagonal_lowest(&alpha, &beta);
            let estimate = (b * y[y.len() - 1]).abs();
            if estimate < 0.1 * tol || b < 1e-14 || step + 1 == block {
                break;
            }
            beta.push(b);
            w.iter_mut().for_each(|v| *v /= b);
            basis.push(w);
        }
        let (theta, y, gap) = tridiagonal_lowest(&alpha, &beta[..alpha.len() - 1]);
        let mut ritz = vec![0.0; n];
        for (v, c) in basis.iter().zip(&y) {
            ritz.iter_mut().zip(v).for_each(|(r, vi)| *r += c * vi);
        }
        let nr = norm(&ritz);
        ritz.iter_mut().for_each(|v| *v /= nr);
        let residual = residual_norm(h, &ritz, theta);
        if residual < best.2 {
            best = (theta, ritz.clone(), residual, gap);
        }
        if residual <= tol {
            return Ok((theta, ritz, gap));
        }
        x = ritz;
    }
    Err(Error::NonConvergence { iterations, residual: best.2 })
}

/// Normalized sparse wavefunction with real amplitudes over its support.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseState {
    pub support: Vec<Configuration>,
    pub amplitudes: Vec<f64>,
    pub energy: f64,
}

impl SparseState {
    /// Point mass on one configuration with the given energy.
    pub fn point(c: Configuration, energy: f64) -> Self {
        SparseState { support: vec![c], amplitudes: vec![1.0], energy }
    }

    /// Diagonalize `H` over `basis` and return its ground state.
    pub fn ground_state(basis: Vec<Configuration>, t: &IntegralTable, tol: f64) -> Result<Self> {
        let h = assemble_subspace(&basis, t)?;
        let pair = lowest_eigenpair(&h, tol)?;
        Ok(SparseState { support: basis, amplitudes: pair.vector, energy: pair.energy })
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a).sum()
    }

    pub fn amplitude_of(&self, c: &Configuration) -> f64 {
        self.support.iter().position(|x| x == c).map_or(0.0, |i| self.amplitudes[i])
    }

    /// `(configuration, amplitude)` pairs ordered by Born probability,
    /// largest first, ties broken lexicographically.
    pub fn sorted_by_probability(&self) -> Vec<(Configuration, f64)> {
        let mut v: Vec<(Configuration, f64)> =
            self.support.iter().copied().zip(self.amplitudes.iter().copied()).collect();
        v.sort_by(|a, b| (b.1 * b.1).total_cmp(&(a.1 * a.1)).then_with(|| a.0.cmp(&b.0)));
        v
    }
}

/// Exact ground state over the whole symmetry sector.
pub fn fci_reference(t: &IntegralTable, s: &SymmetrySector) -> Result<SparseState> {
    fci_reference_with_guard(t, s, FCI_GUARD)
}

pub fn fci_reference_with_guard(t: &IntegralTable, s: &SymmetrySector, guard: u128) -> Result<SparseState> {
    if s.n_bits() != t.n_spin_orbitals() {
        return Err(Error::DimensionMismatch { expected: t.n_spin_orbitals(), found: s.n_bits() });
    }
    let size = s.count();
    if size > guard {
        return Err(Error::GuardExceeded { size, guard });
    }
    let basis: Vec<Configuration> = enumerate_sector(s)?.collect();
    if basis.is_empty() {
        return Err(Error::InvalidArgument("symmetry sector is empty".into()));
    }
    SparseState::ground_state(basis, t, DEFAULT_TOL)
}

/// Subspace ground energy of the `k` most probable configurations of `sorted`.
fn prefix_energy(sorted: &[Configuration], k: usize, t: &IntegralTable) -> Result<f64> {
    let h = assemble_subspace(&sorted[..k], t)?;
    Ok(lowest_eigenpair(&h, DEFAULT_TOL)?.energy)
}

/// Smallest number of Born-probability-sorted configurations whose subspace
/// ground energy lies within `chem_acc` of `gs.energy`, found by bisection.
pub fn n_ca(gs: &SparseState, t: &IntegralTable, chem_acc: f64) -> Result<usize> {
    if gs.is_empty() {
        return Err(Error::InvalidArgument("empty ground state".into()));
    }
    let sorted: Vec<Configuration> = gs.sorted_by_probability().into_iter().map(|(c, _)| c).collect();
    let ok = |k: usize| -> Result<bool> { Ok(prefix_energy(&sorted, k, t)? - gs.energy <= chem_acc) };
    if ok(1)? {
        return Ok(1);
    }
    // invariant: !ok(lo), ok(hi)
    let (mut lo, mut hi) = (1usize, sorted.len());
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Expected number of direct samples needed to see the `n_ca`-th most
/// probable configuration: `ceil(1 / p_{n_ca})`.
pub fn samples_to_reach(gs: &SparseState, n_ca: usize) -> Result<u64> {
    let sorted = gs.sorted_by_probability();
    let (_, amp) = sorted
        .get(n_ca.checked_sub(1).ok_or_else(|| Error::InvalidArgument("n_ca must be ≥ 1".into()))?)
        .ok_or_else(|| Error::InvalidArgument(format!("n_ca {n_ca} exceeds support")))?;
    let p = amp * amp / gs.norm_sqr();
    if p <= 0.0 {
        return Err(Error::InvalidArgument("configuration has zero probability".into()));
    }
    Ok((1.0 / p).ceil() as u64)
}
