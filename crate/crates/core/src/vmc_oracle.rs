//! Local-energy and sampled-amplitude identities used as validation oracles.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::determinant::{Configuration, ExcitationOrder};
use crate::eigensolver::SparseMatrix;
use crate::error::{Error, Result};
use crate::integrals::IntegralTable;
use crate::eigensolver::SparseState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalEnergySample {
    pub config: Configuration,
    pub e_loc: f64,
    pub weight: f64,
}

fn amplitude_map(psi: &SparseState) -> HashMap<u64, f64> {
    psi.support.iter().zip(&psi.amplitudes).map(|(c, a)| (c.bits(), *a)).collect()
}

fn local_energy_with(map: &HashMap<u64, f64>, c: &Configuration, t: &IntegralTable) -> Result<f64> {
    let a = map.get(&c.bits()).copied().unwrap_or(0.0);
    if a == 0.0 {
        return Err(Error::ZeroAmplitude(c.to_string()));
    }
    let mut sum = t.matrix_element(c, c) * a;
    for order in [ExcitationOrder::Singles, ExcitationOrder::Doubles] {
        for n in c.excitations(order) {
            if let Some(b) = map.get(&n.bits()) {
                sum += t.matrix_element(c, &n) * b;
            }
        }
    }
    Ok(sum / a)
}

/// `E_loc(n) = Σ_n' H_nn' Ψ(n') / Ψ(n)`, with `Ψ = 0` off the support.
pub fn local_energy(psi: &SparseState, c: &Configuration, t: &IntegralTable) -> Result<f64> {
    local_energy_with(&amplitude_map(psi), c, t)
}

/// Local energies over the support, weighted by Born probability.
pub fn local_energies(psi: &SparseState, t: &IntegralTable) -> Result<Vec<LocalEnergySample>> {
    let map = amplitude_map(psi);
    let norm = psi.norm_sqr();
    psi.support
        .iter()
        .zip(&psi.amplitudes)
        .filter(|(_, a)| **a != 0.0)
        .map(|(c, a)| Ok(LocalEnergySample { config: *c, e_loc: local_energy_with(&map, c, t)?, weight: a * a / norm }))
        .collect()
}

/// `Σ_n P(n) E_loc(n)` under exact Born probabilities.
pub fn local_energy_expectation(psi: &SparseState, t: &IntegralTable) -> Result<f64> {
    Ok(local_energies(psi, t)?.iter().map(|s| s.weight * s.e_loc).sum())
}

/// `(Υ, Λ)` for amplitudes `sqrt(N_n / |S|) e^{iλ_n}` built from counts.
///
/// With real phases the functional is
/// `Υ = Σ_nn' sqrt(N_n N_n') / |S| · H_nn' · cos(λ_n' − λ_n)` and `Λ = Σ N_n / |S| = 1`.
pub fn upsilon_lambda(
    psi0: &SparseState,
    counts: &[(Configuration, f64)],
    phases: &[f64],
    t: &IntegralTable,
) -> Result<(f64, f64)> {
    if counts.len() != phases.len() {
        return Err(Error::DimensionMismatch { expected: counts.len(), found: phases.len() });
    }
    let support: std::collections::HashSet<u64> = psi0.support.iter().map(|c| c.bits()).collect();
    if let Some((c, _)) = counts.iter().find(|(c, _)| !support.contains(&c.bits())) {
        return Err(Error::InvalidArgument(format!("{c} is outside the reference support")));
    }
    let total: f64 = counts.iter().map(|(_, n)| n).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("counts sum to zero".into()));
    }
    let mut upsilon = 0.0;
    for (i, (a, na)) in counts.iter().enumerate() {
        for (j, (b, nb)) in counts.iter().enumerate() {
            let h = t.matrix_element(a, b);
            if h != 0.0 {
                upsilon += (na * nb).sqrt() / total * h * (phases[j] - phases[i]).cos();
            }
        }
    }
    let lambda = counts.iter().map(|(_, n)| n / total).sum();
    Ok((upsilon, lambda))
}

/// Minimize the Rayleigh quotient of `h` over real vectors by locally optimal
/// three-term steepest descent with Rayleigh–Ritz on `{x, r, p}`.
///
/// Returns the minimum and the minimizer. Used to check that optimizing
/// sampled amplitudes and phases reproduces exact diagonalization.
pub fn minimize_rayleigh(h: &SparseMatrix, max_iter: usize, tol: f64) -> (f64, Vec<f64>) {
    let n = h.dim();
    let diag = h.diagonal();
    let start = (0..n).min_by(|&a, &b| diag[a].total_cmp(&diag[b])).unwrap_or(0);
    let mut x: Vec<f64> = (0..n).map(|i| if i == start { 1.0 } else { 1e-3 * ((i * 7919) % 13) as f64 }).collect();
    normalize(&mut x);
    let mut p: Option<Vec<f64>> = None;
    let mut e = h.rayleigh_quotient(&x);
    for _ in 0..max_iter {
        let hx = h.matvec(&x);
        e = dot(&x, &hx);
        let r: Vec<f64> = hx.iter().zip(&x).map(|(a, b)| a - e * b).collect();
        if norm(&r) < tol {
            break;
        }
        let mut basis = vec![x.clone()];
        for v in std::iter::once(r).chain(p.clone()) {
            let mut w = v;
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(b, &w);
                    w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= c * bi);
                }
            }
            let nw = norm(&w);
            if nw > 1e-12 {
                w.iter_mut().for_each(|v| *v /= nw);
                basis.push(w);
            }
        }
        let k = basis.len();
        let hb: Vec<Vec<f64>> = basis.iter().map(|b| h.matvec(b)).collect();
        let small = DMatrix::from_fn(k, k, |i, j| 0.5 * (dot(&basis[i], &hb[j]) + dot(&basis[j], &hb[i])));
        let eig = SymmetricEigen::new(small);
        let imin = (0..k).min_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).expect("k ≥ 1");
        let y = eig.eigenvectors.column(imin);
        let mut xn = vec![0.0; n];
        for (b, c) in basis.iter().zip(y.iter()) {
            xn.iter_mut().zip(b).for_each(|(xi, bi)| *xi += c * bi);
        }
        normalize(&mut xn);
        // search direction: the part of the update orthogonal to x
        let mut d: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let c = dot(&d, &xn);
        d.iter_mut().zip(&xn).for_each(|(di, xi)| *di -= c * xi);
        p = if norm(&d) > 1e-14 { Some(d) } else { None };
        x = xn;
    }
    (e.min(h.rayleigh_quotient(&x)), x)
}

/// Counts and phases encoding a real vector: `N_n ∝ x_n²`, `λ_n ∈ {0, π}`.
pub fn counts_and_phases(basis: &[Configuration], x: &[f64]) -> (Vec<(Configuration, f64)>, Vec<f64>) {
    let counts = basis.iter().zip(x).map(|(c, v)| (*c, v * v)).collect();
    let phases = x.iter().map(|v| if *v < 0.0 { std::f64::consts::PI } else { 0.0 }).collect();
    (counts, phases)
}

/// Metropolis–Hastings acceptance `min(1, P(new) / P(old))` from log-probabilities.
pub fn metropolis_ratio(log_p_new: f64, log_p_old: f64) -> f64 {
    (log_p_new - log_p_old).exp().min(1.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: &mut [f64]) {
    let n = norm(a);
    a.iter_mut().for_each(|v| *v /= n);
}
