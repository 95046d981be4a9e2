//! Maximum-likelihood training of the network on weighted configuration data.
//!
//! Minimizing the weighted negative log-likelihood `−Σ_n P_data(n) log P(n)`
//! is equivalent to minimizing `KL(P_data ‖ P)`; the entropy of the data
//! does not depend on the parameters.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand_distr::{Binomial, Distribution, weighted::WeightedAliasIndex};

use crate::arnn::ArnnModel;
use crate::determinant::Configuration;
use crate::eigensolver::SparseState;
use crate::error::{Error, Result};

/// Normalized probabilities over a finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTable {
    entries: Vec<(Configuration, f64)>,
}

impl ProbabilityTable {
    /// Normalize non-negative weights over unique configurations.
    pub fn from_weights(entries: Vec<(Configuration, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("empty probability table".into()));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for (c, w) in &entries {
            if !seen.insert(c.bits()) {
                return Err(Error::DuplicateConfiguration(c.to_string()));
            }
            if !(*w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("weight {w} for {c}")));
            }
        }
        let total: f64 = entries.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("weights sum to zero".into()));
        }
        Ok(ProbabilityTable { entries: entries.into_iter().map(|(c, w)| (c, w / total)).collect() })
    }

    /// Born probabilities of a state.
    pub fn from_state(state: &SparseState) -> Result<Self> {
        rescale_sparse(state, 1.0)
    }

    pub fn entries(&self) -> &[(Configuration, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, c: &Configuration) -> f64 {
        self.entries.iter().find(|(x, _)| x == c).map_or(0.0, |(_, p)| *p)
    }
}

/// `p_n ∝ |a_n|^(2 β₀)` over the state's support.
pub fn rescale_sparse(state: &SparseState, beta0: f64) -> Result<ProbabilityTable> {
    if state.is_empty() {
        return Err(Error::InvalidArgument("empty state".into()));
    }
    if !(beta0 > 0.0 && beta0.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta0 {beta0} must be positive")));
    }
    let entries = state
        .support
        .iter()
        .zip(&state.amplitudes)
        .map(|(c, a)| (*c, (a * a).powf(beta0)))
        .collect();
    ProbabilityTable::from_weights(entries)
}

/// Unique configurations with positive integer counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSet {
    entries: Vec<(Configuration, u64)>,
    total: u64,
}

impl TrainingSet {
    pub fn new(entries: Vec<(Configuration, u64)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (c, k) in &entries {
            if *k == 0 {
                return Err(Error::InvalidArgument(format!("zero count for {c}")));
            }
            if !seen.insert(c.bits()) {
                return Err(Error::DuplicateConfiguration(c.to_string()));
            }
        }
        let total = entries.iter().map(|(_, k)| k).sum();
        if total == 0 {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        Ok(TrainingSet { entries, total })
    }

    pub fn entries(&self) -> &[(Configuration, u64)] {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count_of(&self, c: &Configuration) -> u64 {
        self.entries.iter().find(|(x, _)| x == c).map_or(0, |(_, k)| *k)
    }

    /// Empirical distribution `count / total`.
    pub fn to_table(&self) -> ProbabilityTable {
        ProbabilityTable {
            entries: self.entries.iter().map(|(c, k)| (*c, *k as f64 / self.total as f64)).collect(),
        }
    }
}

/// Multinomial draw of `n_samples` from `p`, aggregated into counts.
///
/// Implemented as a chain of conditional binomials in table order.
pub fn draw_training_set<R: Rng + ?Sized>(p: &ProbabilityTable, n_samples: u64, rng: &mut R) -> Result<TrainingSet> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be ≥ 1".into()));
    }
    let mut remaining = n_samples;
    let mut mass = 1.0f64;
    let mut entries = Vec::new();
    let last = p.len() - 1;
    for (i, (c, pi)) in p.entries.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let k = if i == last {
            remaining
        } else {
            let ratio = (pi / mass).clamp(0.0, 1.0);
            mass -= pi;
            binomial(remaining, ratio, rng)
        };
        if k > 0 {
            entries.push((*c, k));
            remaining -= k;
        }
    }
    TrainingSet::new(entries)
}

pub(crate) fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if p <= 0.0 || n == 0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("probability in (0,1)").sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub beta0: f64,
    pub shuffle_seed: u64,
    /// Stop when the epoch loss improves by less than this relative amount
    /// over `early_stop_window` epochs; 0 disables.
    pub early_stop_rel: f64,
    pub early_stop_window: usize,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 200,
            minibatch_size: 256,
            beta0: 0.4,
            shuffle_seed: 0,
            early_stop_rel: 1e-4,
            early_stop_window: 10,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if !(self.beta0 > 0.0 && self.beta0 <= 1.0) {
            return Err(Error::InvalidArgument(format!("beta0 {} outside (0,1]", self.beta0)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::InvalidArgument("invalid ADAM constants".into()));
        }
        if self.minibatch_size == 0 {
            return Err(Error::InvalidArgument("minibatch_size must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    /// Minibatch index within the epoch; `None` marks the full-data epoch loss.
    pub minibatch: Option<usize>,
    pub nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<LossRecord>,
    pub epochs_run: usize,
    pub final_loss: f64,
}

impl TrainReport {
    /// Full-data loss after each epoch.
    pub fn epoch_losses(&self) -> Vec<f64> {
        self.trace.iter().filter(|r| r.minibatch.is_none()).map(|r| r.nll).collect()
    }

    /// CSV with header `epoch,minibatch,nll`; epoch-level rows have an empty minibatch field.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,minibatch,nll\n");
        for r in &self.trace {
            let mb = r.minibatch.map(|m| m.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{:.12e}\n", r.epoch, mb, r.nll));
        }
        s
    }
}

/// Mean negative log-likelihood of the data under the model.
pub fn nll(m: &ArnnModel, data: &TrainingSet) -> Result<f64> {
    let configs: Vec<Configuration> = data.entries.iter().map(|(c, _)| *c).collect();
    let lps = m.log_probs(&configs)?;
    let total: f64 = data.entries.iter().zip(&lps).map(|((_, k), lp)| *k as f64 * lp).sum();
    Ok(-total / data.total as f64)
}

/// ADAM on minibatches drawn with probability proportional to count.
///
/// An epoch is `ceil(N_T / minibatch_size)` steps, one pass over the samples
/// the counts represent. Moments start from zero on every call.
pub fn train(m: &mut ArnnModel, data: &TrainingSet, plan: &TrainPlan) -> Result<TrainReport> {
    plan.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if let Some((c, _)) = data.entries.first() {
        if c.n_bits() != m.n_bits() {
            return Err(Error::DimensionMismatch { expected: m.n_bits(), found: c.n_bits() });
        }
    }
    let mut trace = Vec::new();
    if plan.epochs == 0 {
        let final_loss = nll(m, data)?;
        return Ok(TrainReport { trace, epochs_run: 0, final_loss });
    }
    let weights: Vec<f64> = data.entries.iter().map(|(_, k)| *k as f64).collect();
    let picker = WeightedAliasIndex::new(weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let steps_per_epoch = data.total.div_ceil(plan.minibatch_size as u64) as usize;
    let n = m.n_params();
    let (mut m1, mut m2) = (vec![0.0; n], vec![0.0; n]);
    let mut t = 0i32;
    let mut rng = crate::rng::stream(plan.shuffle_seed, "minibatch", 0);
    let mut epoch_losses: Vec<f64> = Vec::new();
    let mut epochs_run = 0;
    for epoch in 0..plan.epochs {
        for mb in 0..steps_per_epoch {
            let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
            for _ in 0..plan.minibatch_size {
                *counts.entry(picker.sample(&mut rng)).or_default() += 1;
            }
            let scale = 1.0 / plan.minibatch_size as f64;
            let batch: Vec<(Configuration, f64)> =
                counts.iter().map(|(&i, &k)| (data.entries[i].0, k as f64 * scale)).collect();
            let dropout_seed = crate::rng::derive_seed(plan.shuffle_seed, "dropout", t as u64);
            let (grad, ll) = m.weighted_grad(&batch, Some(dropout_seed))?;
            if !ll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("training diverged at epoch {epoch}, minibatch {mb}")));
            }
            trace.push(LossRecord { epoch, minibatch: Some(mb), nll: -ll });
            t += 1;
            let c1 = 1.0 - plan.adam_beta1.powi(t);
            let c2 = 1.0 - plan.adam_beta2.powi(t);
            for (k, p) in m.params_mut().iter_mut().enumerate() {
                // descend on −log-likelihood
                let g = -grad[k];
                m1[k] = plan.adam_beta1 * m1[k] + (1.0 - plan.adam_beta1) * g;
                m2[k] = plan.adam_beta2 * m2[k] + (1.0 - plan.adam_beta2) * g * g;
                *p -= plan.learning_rate * (m1[k] / c1) / ((m2[k] / c2).sqrt() + plan.adam_eps);
            }
        }
        let loss = nll(m, data)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss non-finite after epoch {epoch}")));
        }
        trace.push(LossRecord { epoch, minibatch: None, nll: loss });
        epoch_losses.push(loss);
        epochs_run = epoch + 1;
        let w = plan.early_stop_window;
        if plan.early_stop_rel > 0.0 && w > 0 && epoch_losses.len() > w {
            let old = epoch_losses[epoch_losses.len() - 1 - w];
            if (old - loss) / old.abs().max(1e-300) < plan.early_stop_rel {
                log::debug!("training stopped early after {epochs_run} epochs");
                break;
            }
        }
    }
    let final_loss = *epoch_losses.last().expect("at least one epoch");
    Ok(TrainReport { trace, epochs_run, final_loss })
}

/// `Σ_n p(n) (log p(n) − log P_model(n))` over the table's support.
pub fn kl_divergence_exact(p: &ProbabilityTable, m: &ArnnModel) -> Result<f64> {
    let configs: Vec<Configuration> = p.entries.iter().map(|(c, _)| *c).collect();
    let lps = m.log_probs(&configs)?;
    Ok(p.entries
        .iter()
        .zip(lps)
        .filter(|((_, pi), _)| *pi > 0.0)
        .map(|((_, pi), lq)| pi * (pi.ln() - lq))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arnn::{all_configurations, random_model, ArnnConfig};

    fn cfg(s: &str) -> Configuration {
        s.parse().unwrap()
    }

    fn state(amps2: &[f64]) -> SparseState {
        let support = (0..amps2.len()).map(|i| Configuration::new(1 << i, 4).unwrap()).collect();
        SparseState { support, amplitudes: amps2.iter().map(|a| a.sqrt()).collect(), energy: 0.0 }
    }

    #[test]
    fn rescale_example() {
        let p = rescale_sparse(&state(&[0.64, 0.16, 0.16, 0.04]), 0.5).unwrap();
        let expect = [4.0 / 9.0, 2.0 / 9.0, 2.0 / 9.0, 1.0 / 9.0];
        for ((_, a), b) in p.entries().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let id = rescale_sparse(&state(&[0.64, 0.16, 0.16, 0.04]), 1.0).unwrap();
        for ((_, a), b) in id.entries().iter().zip([0.64, 0.16, 0.16, 0.04]) {
            assert!((a - b).abs() < 1e-15);
        }
        let u = rescale_sparse(&state(&[0.25; 4]), 0.3).unwrap();
        assert!(u.entries().iter().all(|(_, p)| (p - 0.25).abs() < 1e-15));
        assert!(rescale_sparse(&state(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn rescale_preserves_order() {
        let s = state(&[0.5, 0.3, 0.15, 0.05]);
        let p = rescale_sparse(&s, 0.4).unwrap();
        let v: Vec<f64> = p.entries().iter().map(|e| e.1).collect();
        assert!(v.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(p.len(), 4);
    }

    #[test]
    fn draw_point_mass_and_binomial_statistics() {
        let mut rng = crate::rng::stream(1, "t", 0);
        let p = ProbabilityTable::from_weights(vec![(cfg("0011"), 1.0)]).unwrap();
        let t = draw_training_set(&p, 10_000, &mut rng).unwrap();
        assert_eq!(t.entries(), &[(cfg("0011"), 10_000)]);

        let p = ProbabilityTable::from_weights(vec![(cfg("0011"), 0.5), (cfg("1100"), 0.5)]).unwrap();
        let n = 100_000u64;
        let t = draw_training_set(&p, n, &mut rng).unwrap();
        assert_eq!(t.total(), n);
        let sigma = (n as f64 * 0.25).sqrt();
        for (_, k) in t.entries() {
            assert!((*k as f64 - 50_000.0).abs() < 5.0 * sigma);
        }
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let mut m = random_model(6, 2, 2, 1).unwrap();
        let before = m.clone();
        let data = TrainingSet::new(vec![(cfg("110000"), 3)]).unwrap();
        let plan = TrainPlan { epochs: 0, ..TrainPlan::default() };
        train(&mut m, &data, &plan).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn overfits_single_configuration() {
        let mut m = ArnnModel::init(ArnnConfig::new(6, 2, 4, 0.0, 3)).unwrap();
        let target = cfg("101100");
        let data = TrainingSet::new(vec![(target, 100)]).unwrap();
        let plan = TrainPlan { learning_rate: 0.05, epochs: 400, early_stop_rel: 0.0, ..TrainPlan::default() };
        let report = train(&mut m, &data, &plan).unwrap();
        assert!(m.log_prob(&target).unwrap().exp() > 0.99);
        let l = report.epoch_losses();
        assert!(l.last().unwrap() < &l[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let data = TrainingSet::new(vec![(cfg("1010"), 5), (cfg("0101"), 2), (cfg("0110"), 1)]).unwrap();
        let plan = TrainPlan { epochs: 20, shuffle_seed: 9, ..TrainPlan::default() };
        let mut a = ArnnModel::init(ArnnConfig::small(4, 1)).unwrap();
        let mut b = a.clone();
        let ra = train(&mut a, &data, &plan).unwrap();
        let rb = train(&mut b, &data, &plan).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.to_csv().starts_with("epoch,minibatch,nll\n"));
    }

    #[test]
    fn learns_product_distribution() {
        // independent bits with P(n_q = 1) = probs[q]
        let probs = [0.1, 0.8, 0.3, 0.6, 0.5, 0.9, 0.2, 0.7];
        let entries: Vec<(Configuration, f64)> = all_configurations(8)
            .unwrap()
            .into_iter()
            .map(|c| {
                let w = (0..8).map(|q| if c.is_occupied(q) { probs[q] } else { 1.0 - probs[q] }).product();
                (c, w)
            })
            .collect();
        let p = ProbabilityTable::from_weights(entries).unwrap();
        let counts: Vec<(Configuration, u64)> =
            p.entries().iter().map(|(c, w)| (*c, (w * 1e5).round() as u64)).filter(|e| e.1 > 0).collect();
        let data = TrainingSet::new(counts).unwrap();
        let mut m = ArnnModel::init(ArnnConfig::new(8, 1, 0, 0.0, 5)).unwrap();
        let plan = TrainPlan {
            learning_rate: 0.01,
            epochs: 120,
            minibatch_size: 8192,
            early_stop_rel: 0.0,
            ..TrainPlan::default()
        };
        train(&mut m, &data, &plan).unwrap();
        let kl = kl_divergence_exact(&p, &m).unwrap();
        assert!(kl < 1e-3, "KL = {kl}");
    }

    #[test]
    fn kl_properties() {
        let m = random_model(6, 2, 2, 4).unwrap();
        let all = all_configurations(6).unwrap();
        let own = ProbabilityTable::from_weights(all.iter().map(|c| (*c, m.log_prob(c).unwrap().exp())).collect()).unwrap();
        assert!(kl_divergence_exact(&own, &m).unwrap().abs() < 1e-9);
        let uniform = ProbabilityTable::from_weights(all.iter().map(|c| (*c, 1.0)).collect()).unwrap();
        let mut zc = ArnnConfig::small(6, 0);
        zc.init_scale = 0.0;
        let zero = ArnnModel::init(zc).unwrap();
        assert!(kl_divergence_exact(&uniform, &zero).unwrap().abs() < 1e-12);
        assert!(kl_divergence_exact(&uniform, &m).unwrap() >= -1e-12);
    }

    #[test]
    fn empirical_gradient_equals_exact_kl_gradient() {
        let m = random_model(6, 2, 3, 6).unwrap();
        let weights = [3u64, 1, 4, 1, 5, 9, 2, 6];
        let configs = ["110000", "101000", "100100", "011000", "010100", "001100", "100010", "000011"];
        let data =
            TrainingSet::new(configs.iter().zip(weights).map(|(c, k)| (cfg(c), k)).collect()).unwrap();
        let p = data.to_table();
        // ∇ KL = −Σ p ∇ log P
        let exact = m.log_prob_grad(p.entries()).unwrap();
        let total = data.total() as f64;
        let empirical: Vec<(Configuration, f64)> =
            data.entries().iter().map(|(c, k)| (*c, *k as f64 / total)).collect();
        let g = m.log_prob_grad(&empirical).unwrap();
        for (a, b) in exact.iter().zip(&g) {
            assert!((a - b).abs() < 1e-14);
        }
        // one-sample-per-draw expansion gives the same mean
        let mut expanded = Vec::new();
        for (c, k) in data.entries() {
            for _ in 0..*k {
                expanded.push((*c, 1.0 / total));
            }
        }
        let ge = m.log_prob_grad(&expanded).unwrap();
        for (a, b) in exact.iter().zip(&ge) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn training_set_validation() {
        assert!(TrainingSet::new(vec![]).is_err());
        assert!(TrainingSet::new(vec![(cfg("01"), 0)]).is_err());
        assert!(TrainingSet::new(vec![(cfg("01"), 1), (cfg("01"), 2)]).is_err());
    }
}
