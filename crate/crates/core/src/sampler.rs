//! Temperature-scaled auto-regressive sampling.
//!
//! Samples are grown bit by bit as a prefix tree. Each live prefix carries a
//! count; at bit `q` the count splits binomially between the two children
//! with success probability
//!
//! ```text
//! P_q(1)^β / (P_q(0)^β + P_q(1)^β) = σ(β (log P_q(1) − log P_q(0)))
//! ```
//!
//! so the work grows with the number of distinct prefixes, not with the
//! number of samples. Each split draws from a random stream keyed by
//! `(seed, q, prefix)`, which makes results independent of scheduling.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;

use crate::arnn::{ArnnModel, PrefixCache};
use crate::determinant::{passes_symmetry, Configuration, SymmetrySector};
use crate::error::{Error, Result};
use crate::trainer::binomial;

/// Lowest inverse temperature tried by [`find_beta`].
pub const BETA_MIN: f64 = 0.05;
pub const BETA_PROBES: usize = 12;
pub const BETA_TOLERANCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleEntry {
    pub config: Configuration,
    pub count: u64,
    /// Undeformed model log-probability.
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    /// Unique configurations in lexicographic order.
    pub entries: Vec<SampleEntry>,
    pub n_requested: u64,
    pub beta: f64,
    pub n_discarded_unphysical: u64,
}

impl SampleBatch {
    pub fn n_unique(&self) -> usize {
        self.entries.len()
    }

    pub fn total_count(&self) -> u64 {
        self.entries.iter().map(|e| e.count).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bitstring,count,log_prob\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{:.12e}\n", e.config, e.count, e.log_prob));
        }
        s
    }

    /// Configurations ranked by count, then log-probability, then lexicographically.
    pub fn ranked(&self) -> Vec<SampleEntry> {
        let mut v = self.entries.clone();
        v.sort_by(|a, b| {
            b.count
                .cmp(&a.count)
                .then_with(|| b.log_prob.total_cmp(&a.log_prob))
                .then_with(|| a.config.cmp(&b.config))
        });
        v
    }
}

struct Node {
    cache: PrefixCache,
    bits: u64,
    count: u64,
    log_prob: f64,
}

/// Success probability of bit value 1 under the deformed conditional.
#[inline]
pub fn deformed_one(log_p: [f64; 2], beta: f64) -> f64 {
    1.0 / (1.0 + (-beta * (log_p[1] - log_p[0])).exp())
}

/// Draw `n` samples from the per-conditional deformed distribution.
pub fn sample_fast(m: &ArnnModel, n: u64, beta: f64, seed: u64) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("number of samples must be ≥ 1".into()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta {beta} must be positive")));
    }
    let n_bits = m.n_bits();
    let mut live = vec![Node { cache: m.empty_cache(), bits: 0, count: n, log_prob: 0.0 }];
    for q in 0..n_bits {
        let level_seed = crate::rng::derive_seed(seed, "prefix", q as u64);
        let next: Vec<Vec<Node>> = live
            .into_par_iter()
            .map(|mut node| {
                let lp = m.step(&mut node.cache, q);
                if !(lp[0].is_finite() && lp[1].is_finite()) {
                    return Err(Error::NonFinite(format!("conditional at bit {q} is not finite")));
                }
                let p1 = deformed_one(lp, beta);
                let mut rng = crate::rng::stream(level_seed, "split", node.bits);
                let k1 = binomial(node.count, p1, &mut rng);
                let k0 = node.count - k1;
                let mut out = Vec::with_capacity(2);
                match (k0 > 0, k1 > 0) {
                    (true, true) => {
                        let mut c1 = node.cache.clone();
                        c1.set_bit(q, true);
                        node.cache.set_bit(q, false);
                        out.push(Node { cache: node.cache, bits: node.bits, count: k0, log_prob: node.log_prob + lp[0] });
                        out.push(Node { cache: c1, bits: node.bits | 1 << q, count: k1, log_prob: node.log_prob + lp[1] });
                    }
                    (true, false) => {
                        node.cache.set_bit(q, false);
                        out.push(Node { count: k0, log_prob: node.log_prob + lp[0], ..node });
                    }
                    _ => {
                        node.cache.set_bit(q, true);
                        out.push(Node { bits: node.bits | 1 << q, count: k1, log_prob: node.log_prob + lp[1], ..node });
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        live = next.into_iter().flatten().collect();
    }
    let entries = live
        .into_iter()
        .map(|node| SampleEntry {
            config: Configuration::new(node.bits, n_bits).expect("bits within width"),
            count: node.count,
            log_prob: node.log_prob,
        })
        .collect();
    Ok(SampleBatch { entries, n_requested: n, beta, n_discarded_unphysical: 0 })
}

/// Log-probability of `c` under the per-conditional deformed distribution.
pub fn deformed_log_prob(m: &ArnnModel, c: &Configuration, beta: f64) -> Result<f64> {
    let rows = m.conditional_log_probs(c)?;
    Ok((0..c.n_bits())
        .map(|q| {
            let p1 = deformed_one(rows[q], beta);
            if c.is_occupied(q) {
                p1.ln()
            } else {
                (1.0 - p1).ln()
            }
        })
        .sum())
}

/// `n` independent draws, one bit at a time, aggregated like [`sample_fast`].
pub fn sample_sequential<R: Rng + ?Sized>(m: &ArnnModel, n: u64, beta: f64, rng: &mut R) -> Result<SampleBatch> {
    let mut counts: std::collections::BTreeMap<Configuration, (u64, f64)> = Default::default();
    for _ in 0..n {
        let mut cache = m.empty_cache();
        let mut bits = 0u64;
        let mut lp = 0.0;
        for q in 0..m.n_bits() {
            let row = m.step(&mut cache, q);
            let one = rng.random::<f64>() < deformed_one(row, beta);
            cache.set_bit(q, one);
            bits |= (one as u64) << q;
            lp += row[one as usize];
        }
        let e = counts.entry(Configuration::new(bits, m.n_bits())?).or_insert((0, lp));
        e.0 += 1;
    }
    let entries = counts.into_iter().map(|(config, (count, log_prob))| SampleEntry { config, count, log_prob }).collect();
    Ok(SampleBatch { entries, n_requested: n, beta, n_discarded_unphysical: 0 })
}

/// Drop configurations outside the sector, adding their counts to the discard tally.
pub fn filter_physical(b: &SampleBatch, s: &SymmetrySector) -> Result<SampleBatch> {
    let mut out = SampleBatch { entries: Vec::with_capacity(b.entries.len()), ..b.clone() };
    for e in &b.entries {
        if passes_symmetry(&e.config, s)? {
            out.entries.push(*e);
        } else {
            out.n_discarded_unphysical += e.count;
        }
    }
    Ok(out)
}

/// Forced configurations first, then sampled ones by rank, truncated to
/// `max(cap, |forced|)`.
pub fn select_unique(b: &SampleBatch, cap: usize, forced: &[Configuration]) -> Vec<Configuration> {
    if cap < forced.len() {
        log::warn!("unique cap {cap} below {} forced configurations; keeping all forced", forced.len());
    }
    let limit = cap.max(forced.len());
    let mut seen: HashSet<u64> = HashSet::with_capacity(limit);
    let mut out = Vec::with_capacity(limit);
    for c in forced {
        if seen.insert(c.bits()) {
            out.push(*c);
        }
    }
    for e in b.ranked() {
        if out.len() >= limit {
            break;
        }
        if seen.insert(e.config.bits()) {
            out.push(e.config);
        }
    }
    out
}

fn physical_unique(b: &SampleBatch, s: Option<&SymmetrySector>) -> Result<(usize, SampleBatch)> {
    let f = match s {
        Some(s) => filter_physical(b, s)?,
        None => b.clone(),
    };
    Ok((f.n_unique(), f))
}

/// Bisect `β ∈ [BETA_MIN, 1]` until the physical unique count is within 10%
/// of `target_unique`. Returns the closest probe; the batch is pre-filter.
pub fn find_beta(
    m: &ArnnModel,
    n: u64,
    target_unique: usize,
    s: Option<&SymmetrySector>,
    seed: u64,
) -> Result<(f64, SampleBatch)> {
    if target_unique == 0 {
        return Err(Error::InvalidArgument("target_unique must be ≥ 1".into()));
    }
    let target = target_unique as f64;
    let within = |u: usize| (u as f64 - target).abs() <= BETA_TOLERANCE * target;
    let mut probe = 0u64;
    let mut run = |beta: f64| -> Result<(usize, SampleBatch)> {
        let batch = sample_fast(m, n, beta, crate::rng::derive_seed(seed, "beta-probe", probe))?;
        probe += 1;
        let (u, _) = physical_unique(&batch, s)?;
        log::debug!("beta probe {beta:.4}: {u} physical unique (target {target_unique})");
        Ok((u, batch))
    };
    let (u_hi, b_hi) = run(1.0)?;
    if u_hi as f64 >= (1.0 - BETA_TOLERANCE) * target {
        return Ok((1.0, b_hi));
    }
    let (u_lo, b_lo) = run(BETA_MIN)?;
    if within(u_lo) {
        return Ok((BETA_MIN, b_lo));
    }
    if (u_lo as f64) < target {
        log::warn!("target of {target_unique} unique configurations unreachable; using beta {BETA_MIN} ({u_lo} unique)");
        return Ok((BETA_MIN, b_lo));
    }
    let mut best = if (u_lo as f64 - target).abs() < (u_hi as f64 - target).abs() {
        (u_lo, BETA_MIN, b_lo)
    } else {
        (u_hi, 1.0, b_hi)
    };
    let (mut lo, mut hi) = (BETA_MIN, 1.0);
    for _ in 2..BETA_PROBES {
        let mid = 0.5 * (lo + hi);
        let (u, b) = run(mid)?;
        if (u as f64 - target).abs() < (best.0 as f64 - target).abs() {
            best = (u, mid, b);
        }
        if within(u) {
            break;
        }
        if u as f64 > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((best.1, best.2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arnn::{all_configurations, random_model, ArnnConfig};

    fn zero_model(n: usize) -> ArnnModel {
        let mut c = ArnnConfig::small(n, 0);
        c.init_scale = 0.0;
        ArnnModel::init(c).unwrap()
    }

    #[test]
    fn counts_are_conserved_and_sorted() {
        let m = random_model(10, 2, 3, 1).unwrap();
        let b = sample_fast(&m, 123_457, 0.7, 5).unwrap();
        assert_eq!(b.total_count(), 123_457);
        assert!(b.entries.windows(2).all(|w| w[0].config < w[1].config));
        for e in &b.entries {
            assert!((e.log_prob - m.log_prob(&e.config).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn reproducible_from_seed() {
        let m = random_model(8, 2, 2, 3).unwrap();
        assert_eq!(sample_fast(&m, 10_000, 0.5, 9).unwrap(), sample_fast(&m, 10_000, 0.5, 9).unwrap());
        assert_ne!(sample_fast(&m, 10_000, 0.5, 9).unwrap(), sample_fast(&m, 10_000, 0.5, 10).unwrap());
    }

    #[test]
    fn near_zero_beta_is_uniform() {
        let m = random_model(4, 2, 2, 2).unwrap();
        let n = 1u64 << 20;
        let b = sample_fast(&m, n, 1e-9, 4).unwrap();
        assert_eq!(b.n_unique(), 16);
        let mean = n as f64 / 16.0;
        let sigma = (n as f64 * (1.0 / 16.0) * (15.0 / 16.0)).sqrt();
        for e in &b.entries {
            assert!((e.count as f64 - mean).abs() < 5.0 * sigma);
        }
    }

    #[test]
    fn deformed_distribution_is_normalized() {
        let m = random_model(6, 2, 2, 8).unwrap();
        for beta in [0.1, 0.5, 1.0, 2.0] {
            let total: f64 = all_configurations(6)
                .unwrap()
                .iter()
                .map(|c| deformed_log_prob(&m, c, beta).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_deformed_distribution_l1() {
        let m = random_model(8, 2, 3, 6).unwrap();
        let n = 1_000_000u64;
        let b = sample_fast(&m, n, 0.5, 1).unwrap();
        let mut l1 = 0.0;
        for c in all_configurations(8).unwrap() {
            let p = deformed_log_prob(&m, &c, 0.5).unwrap().exp();
            let k = b.entries.iter().find(|e| e.config == c).map_or(0, |e| e.count);
            l1 += (k as f64 / n as f64 - p).abs();
        }
        assert!(l1 < 0.01, "L1 = {l1}");
    }

    #[test]
    fn chi_square_against_sequential() {
        // both samplers against the exact deformed distribution
        let m = random_model(5, 2, 2, 12).unwrap();
        let beta = 0.7;
        let n = 200_000u64;
        let fast = sample_fast(&m, n, beta, 2).unwrap();
        let mut rng = crate::rng::stream(3, "seq", 0);
        let seq = sample_sequential(&m, n, beta, &mut rng).unwrap();
        for batch in [&fast, &seq] {
            let mut chi2 = 0.0;
            for c in all_configurations(5).unwrap() {
                let e = n as f64 * deformed_log_prob(&m, &c, beta).unwrap().exp();
                let k = batch.entries.iter().find(|x| x.config == c).map_or(0, |x| x.count) as f64;
                chi2 += (k - e).powi(2) / e;
            }
            // 31 degrees of freedom; p = 0.001 at 61.1
            assert!(chi2 < 61.1, "chi2 = {chi2}");
        }
    }

    #[test]
    fn point_mass_model() {
        let mut m = zero_model(6);
        // large biases towards "110000"
        let target: Configuration = "110000".parse().unwrap();
        let n_params = m.n_params();
        let bias_start = n_params - 12;
        for q in 0..6 {
            let v = if target.is_occupied(q) { 1 } else { 0 };
            m.params_mut()[bias_start + 2 * q + v] = 60.0;
        }
        let b = sample_fast(&m, 1_000_000, 1.0, 0).unwrap();
        assert_eq!(b.entries.len(), 1);
        assert_eq!(b.entries[0].config, target);
        assert_eq!(b.entries[0].count, 1_000_000);
    }

    #[test]
    fn filter_and_select() {
        let m = zero_model(8);
        let n = 1_000_000u64;
        let b = sample_fast(&m, n, 1.0, 1).unwrap();
        let s = SymmetrySector::without_point_group(4, 4, false).unwrap();
        let f = filter_physical(&b, &s).unwrap();
        assert_eq!(f.n_unique(), 70);
        assert_eq!(f.total_count() + f.n_discarded_unphysical, n);
        let expect = n as f64 * (1.0 - 70.0 / 256.0);
        assert!((f.n_discarded_unphysical as f64 - expect).abs() < 5.0 * (n as f64 * 0.25).sqrt());

        let hf: Configuration = "00110011".parse().unwrap();
        let only_hf = SampleBatch {
            entries: vec![SampleEntry { config: hf, count: 3, log_prob: -1.0 }],
            n_requested: 3,
            beta: 1.0,
            n_discarded_unphysical: 0,
        };
        let sz = SymmetrySector::without_point_group(4, 4, true).unwrap();
        assert_eq!(filter_physical(&only_hf, &sz).unwrap(), only_hf);
        let empty = SampleBatch { entries: vec![], ..only_hf.clone() };
        assert_eq!(filter_physical(&empty, &sz).unwrap().entries, vec![]);

        let all = select_unique(&f, 1000, &[]);
        assert_eq!(all.len(), 70);
        let capped = select_unique(&f, 10, &[hf]);
        assert_eq!(capped.len(), 10);
        assert_eq!(capped[0], hf);
        let forced_only = select_unique(&f, 1, &[hf, "11000011".parse().unwrap()]);
        assert_eq!(forced_only.len(), 2);
    }

    #[test]
    fn tie_break_by_log_prob() {
        let a: Configuration = "0011".parse().unwrap();
        let b: Configuration = "1100".parse().unwrap();
        let batch = SampleBatch {
            entries: vec![
                SampleEntry { config: a, count: 5, log_prob: -3.0 },
                SampleEntry { config: b, count: 5, log_prob: -1.0 },
            ],
            n_requested: 10,
            beta: 1.0,
            n_discarded_unphysical: 0,
        };
        assert_eq!(select_unique(&batch, 2, &[]), vec![b, a]);
    }

    #[test]
    fn find_beta_hits_target() {
        let mut m = random_model(8, 2, 3, 21).unwrap();
        m.params_mut().iter_mut().for_each(|p| *p *= 4.0);
        let (beta, b) = find_beta(&m, 3_000, 200, None, 1).unwrap();
        assert!(beta < 1.0);
        let u = b.n_unique();
        assert!((180..=220).contains(&u), "{u} unique at beta {beta}");
        let (beta1, _) = find_beta(&zero_model(8), 100_000, 100, None, 1).unwrap();
        assert_eq!(beta1, 1.0);
    }

    #[test]
    fn find_beta_unreachable_returns_minimum() {
        let m = random_model(6, 2, 2, 1).unwrap();
        let (beta, b) = find_beta(&m, 100, 1000, None, 0).unwrap();
        assert_eq!(beta, BETA_MIN);
        assert!(b.n_unique() <= 64);
    }
}
