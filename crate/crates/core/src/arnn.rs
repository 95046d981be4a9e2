//! Masked-dense auto-regressive network.
//!
//! Units are laid out bit-major: unit `q·F + f` is feature `f` of bit `q`.
//! The first layer connects bit `q` to input bits `< q`; later layers
//! connect bit `q` to all features of bits `≤ q`. Every unit therefore reads
//! a contiguous prefix of the previous layer, so weights are stored as one
//! ragged row per unit inside a single flat parameter vector.
//!
//! The last layer emits two logits per bit, normalized by a log-softmax into
//! `log P_q(n_q = v | n_0..n_{q-1})`. Inputs are encoded as `2 n_q − 1`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::determinant::Configuration;
use crate::error::{Error, Result};

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

const MAGIC: &[u8; 8] = b"ARNNSCI\0";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Selu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Selu => {
                if z > 0.0 {
                    SELU_LAMBDA * z
                } else {
                    SELU_LAMBDA * SELU_ALPHA * z.exp_m1()
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Selu => {
                if z > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * z.exp()
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Selu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Selu),
            1 => Ok(Activation::Tanh),
            _ => Err(Error::Checkpoint(format!("unknown activation code {c}"))),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "selu" => Ok(Activation::Selu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::Config(format!("unknown activation '{s}'"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Selu => "selu",
            Activation::Tanh => "tanh",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArnnConfig {
    pub n_bits: usize,
    /// Number of masked-dense layers, including the output layer.
    pub n_layers: usize,
    /// Width per bit of every hidden layer.
    pub features_per_bit: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
    pub seed: u64,
    /// Multiplier on the fan-in scaled uniform initialization; 0 gives the
    /// uniform distribution.
    pub init_scale: f64,
}

impl ArnnConfig {
    pub fn new(n_bits: usize, n_layers: usize, features_per_bit: usize, dropout_rate: f64, seed: u64) -> Self {
        ArnnConfig {
            n_bits,
            n_layers,
            features_per_bit,
            dropout_rate,
            activation: Activation::Selu,
            seed,
            init_scale: 1.0,
        }
    }

    /// Two layers, four features per bit, dropout 0.05.
    pub fn small(n_bits: usize, seed: u64) -> Self {
        Self::new(n_bits, 2, 4, 0.05, seed)
    }

    /// Four layers, eight features per bit, dropout 0.1.
    pub fn large(n_bits: usize, seed: u64) -> Self {
        Self::new(n_bits, 4, 8, 0.1, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bits == 0 || self.n_bits > crate::determinant::MAX_SPIN_ORBITALS {
            return Err(Error::InvalidArgument(format!("n_bits {} outside 1..=64", self.n_bits)));
        }
        if self.n_layers == 0 {
            return Err(Error::InvalidArgument("n_layers must be ≥ 1".into()));
        }
        if self.n_layers > 1 && self.features_per_bit == 0 {
            return Err(Error::InvalidArgument("features_per_bit must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0,1)", self.dropout_rate)));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidArgument("init_scale must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerLayout {
    in_per_bit: usize,
    out_per_bit: usize,
    strict: bool,
    /// Offset of each unit's weight row.
    row_start: Vec<usize>,
    bias_start: usize,
}

impl LayerLayout {
    #[inline]
    fn fan_in(&self, q: usize) -> usize {
        if self.strict {
            q * self.in_per_bit
        } else {
            (q + 1) * self.in_per_bit
        }
    }
}

fn build_layout(cfg: &ArnnConfig) -> (Vec<LayerLayout>, usize) {
    let m = cfg.n_bits;
    let mut offset = 0;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let in_per_bit = if l == 0 { 1 } else { cfg.features_per_bit };
        let out_per_bit = if l + 1 == cfg.n_layers { 2 } else { cfg.features_per_bit };
        let mut layer = LayerLayout { in_per_bit, out_per_bit, strict: l == 0, row_start: Vec::new(), bias_start: 0 };
        for q in 0..m {
            for _ in 0..out_per_bit {
                layer.row_start.push(offset);
                offset += layer.fan_in(q);
            }
        }
        layer.bias_start = offset;
        offset += m * out_per_bit;
        layers.push(layer);
    }
    (layers, offset)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArnnModel {
    config: ArnnConfig,
    layers: Vec<LayerLayout>,
    params: Vec<f64>,
}

/// Activations of a partially evaluated input, reused across bits.
#[derive(Debug, Clone)]
pub(crate) struct PrefixCache {
    x: Vec<f64>,
    hidden: Vec<Vec<f64>>,
}

impl PrefixCache {
    pub(crate) fn set_bit(&mut self, q: usize, occupied: bool) {
        self.x[q] = if occupied { 1.0 } else { -1.0 };
    }
}

#[inline]
fn log_softmax2(l0: f64, l1: f64) -> [f64; 2] {
    let m = l0.max(l1);
    let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
    [l0 - lse, l1 - lse]
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ArnnModel {
    /// Fresh model with fan-in scaled uniform weights and zero biases.
    pub fn init(cfg: ArnnConfig) -> Result<Self> {
        cfg.validate()?;
        let (layers, n_params) = build_layout(&cfg);
        let mut params = vec![0.0; n_params];
        let mut rng = crate::rng::stream(cfg.seed, "init", 0);
        if cfg.init_scale > 0.0 {
            for layer in &layers {
                for (u, &start) in layer.row_start.iter().enumerate() {
                    let fan_in = layer.fan_in(u / layer.out_per_bit);
                    if fan_in == 0 {
                        continue;
                    }
                    let limit = cfg.init_scale * (3.0 / fan_in as f64).sqrt();
                    for w in &mut params[start..start + fan_in] {
                        *w = rng.random_range(-limit..limit);
                    }
                }
            }
        }
        Ok(ArnnModel { config: cfg, layers, params })
    }

    pub fn from_params(cfg: ArnnConfig, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let (layers, n_params) = build_layout(&cfg);
        if params.len() != n_params {
            return Err(Error::DimensionMismatch { expected: n_params, found: params.len() });
        }
        Ok(ArnnModel { config: cfg, layers, params })
    }

    pub fn config(&self) -> &ArnnConfig {
        &self.config
    }

    pub fn n_bits(&self) -> usize {
        self.config.n_bits
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check(&self, c: &Configuration) -> Result<()> {
        if c.n_bits() != self.n_bits() {
            return Err(Error::DimensionMismatch { expected: self.n_bits(), found: c.n_bits() });
        }
        Ok(())
    }

    pub(crate) fn empty_cache(&self) -> PrefixCache {
        let width = self.n_bits() * self.config.features_per_bit;
        PrefixCache { x: vec![-1.0; self.n_bits()], hidden: vec![vec![0.0; width]; self.layers.len() - 1] }
    }

    /// Evaluate every layer's units for bit `q`, given a cache already
    /// holding bits `< q`, and return `log P_q(·)`.
    pub(crate) fn step(&self, cache: &mut PrefixCache, q: usize) -> [f64; 2] {
        let n_layers = self.layers.len();
        let mut logits = [0.0; 2];
        for (l, layer) in self.layers.iter().enumerate() {
            let fan_in = layer.fan_in(q);
            let (prev, rest) = cache.hidden.split_at_mut(l);
            let input: &[f64] = if l == 0 { &cache.x } else { &prev[l - 1] };
            for f in 0..layer.out_per_bit {
                let u = q * layer.out_per_bit + f;
                let start = layer.row_start[u];
                let z = self.params[layer.bias_start + u] + dot(&self.params[start..start + fan_in], &input[..fan_in]);
                if l + 1 == n_layers {
                    logits[f] = z;
                } else {
                    rest[0][u] = self.config.activation.apply(z);
                }
            }
        }
        log_softmax2(logits[0], logits[1])
    }

    /// `[q][v] = log P_q(n_q = v | prefix of c)`, evaluation mode.
    pub fn conditional_log_probs(&self, c: &Configuration) -> Result<Vec<[f64; 2]>> {
        self.check(c)?;
        let mut cache = self.empty_cache();
        for q in 0..self.n_bits() {
            cache.set_bit(q, c.is_occupied(q));
        }
        Ok((0..self.n_bits()).map(|q| self.step(&mut cache, q)).collect())
    }

    /// Conditionals with inverted dropout on hidden activations, masks drawn from `rng`.
    pub fn conditional_log_probs_train<R: Rng + ?Sized>(&self, c: &Configuration, rng: &mut R) -> Result<Vec<[f64; 2]>> {
        self.check(c)?;
        let trace = self.forward_trace(c, Some(rng));
        Ok(trace.log_p)
    }

    /// `log P(n) = Σ_q log P_q(n_q | n_<q)`.
    pub fn log_prob(&self, c: &Configuration) -> Result<f64> {
        self.check(c)?;
        let mut cache = self.empty_cache();
        let mut total = 0.0;
        for q in 0..self.n_bits() {
            cache.set_bit(q, c.is_occupied(q));
        }
        for q in 0..self.n_bits() {
            total += self.step(&mut cache, q)[c.is_occupied(q) as usize];
        }
        Ok(total)
    }

    pub fn log_probs(&self, configs: &[Configuration]) -> Result<Vec<f64>> {
        configs.par_iter().map(|c| self.log_prob(c)).collect()
    }

    fn forward_trace<R: Rng + ?Sized>(&self, c: &Configuration, mut rng: Option<&mut R>) -> Trace {
        let m = self.n_bits();
        let n_layers = self.layers.len();
        let x: Vec<f64> = (0..m).map(|q| if c.is_occupied(q) { 1.0 } else { -1.0 }).collect();
        let p = self.config.dropout_rate;
        let keep_scale = 1.0 / (1.0 - p);
        let mut pre = Vec::with_capacity(n_layers);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut scale = Vec::with_capacity(n_layers);
        let mut log_p = Vec::with_capacity(m);
        for (l, layer) in self.layers.iter().enumerate() {
            let input: &[f64] = if l == 0 { &x } else { &post[l - 1] };
            let width = m * layer.out_per_bit;
            let mut z = vec![0.0; width];
            for (u, zu) in z.iter_mut().enumerate() {
                let fan_in = layer.fan_in(u / layer.out_per_bit);
                let start = layer.row_start[u];
                *zu = self.params[layer.bias_start + u] + dot(&self.params[start..start + fan_in], &input[..fan_in]);
            }
            if l + 1 == n_layers {
                for q in 0..m {
                    log_p.push(log_softmax2(z[2 * q], z[2 * q + 1]));
                }
                pre.push(z);
                break;
            }
            let mut s = vec![1.0; width];
            if let Some(r) = rng.as_deref_mut() {
                if p > 0.0 {
                    for v in &mut s {
                        *v = if r.random::<f64>() < p { 0.0 } else { keep_scale };
                    }
                }
            }
            let a: Vec<f64> = z.iter().zip(&s).map(|(&zu, &su)| su * self.config.activation.apply(zu)).collect();
            pre.push(z);
            post.push(a);
            scale.push(s);
        }
        Trace { x, pre, post, scale, log_p }
    }

    /// Accumulate `weight · ∇ log P(c)` into `grad`; returns `log P(c)`.
    fn accumulate<R: Rng + ?Sized>(&self, c: &Configuration, weight: f64, rng: Option<&mut R>, grad: &mut [f64]) -> f64 {
        let m = self.n_bits();
        let trace = self.forward_trace(c, rng);
        let log_prob: f64 = (0..m).map(|q| trace.log_p[q][c.is_occupied(q) as usize]).sum();
        if weight == 0.0 {
            return log_prob;
        }
        let n_layers = self.layers.len();
        let mut delta: Vec<f64> = Vec::with_capacity(2 * m);
        for q in 0..m {
            let n = c.is_occupied(q) as usize;
            for v in 0..2 {
                let target = if v == n { 1.0 } else { 0.0 };
                delta.push(weight * (target - trace.log_p[q][v].exp()));
            }
        }
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let input: &[f64] = if l == 0 { &trace.x } else { &trace.post[l - 1] };
            let mut g_in = if l > 0 { vec![0.0; input.len()] } else { Vec::new() };
            for (u, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[layer.bias_start + u] += d;
                let fan_in = layer.fan_in(u / layer.out_per_bit);
                let start = layer.row_start[u];
                let w = &self.params[start..start + fan_in];
                for (g, &a) in grad[start..start + fan_in].iter_mut().zip(&input[..fan_in]) {
                    *g += d * a;
                }
                if l > 0 {
                    for (gi, &wk) in g_in[..fan_in].iter_mut().zip(w) {
                        *gi += d * wk;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let z = &trace.pre[l - 1];
            let s = &trace.scale[l - 1];
            delta = g_in
                .iter()
                .zip(z)
                .zip(s)
                .map(|((&g, &zu), &su)| g * su * self.config.activation.derivative(zu))
                .collect();
        }
        log_prob
    }

    /// Gradient of `Σ weight · log P(n)` over the batch, evaluation mode.
    pub fn log_prob_grad(&self, batch: &[(Configuration, f64)]) -> Result<Vec<f64>> {
        self.log_prob_grad_with(batch, None)
    }

    /// As [`log_prob_grad`](Self::log_prob_grad); with `Some(seed)` dropout is
    /// active and entry `k` draws its masks from stream `(seed, "dropout", k)`.
    pub fn log_prob_grad_with(&self, batch: &[(Configuration, f64)], dropout_seed: Option<u64>) -> Result<Vec<f64>> {
        Ok(self.weighted_grad(batch, dropout_seed)?.0)
    }

    /// Gradient and `Σ weight · log P(n)`, reduced over fixed-size shards in order.
    pub(crate) fn weighted_grad(&self, batch: &[(Configuration, f64)], dropout_seed: Option<u64>) -> Result<(Vec<f64>, f64)> {
        const SHARD: usize = 32;
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        for (c, w) in batch {
            self.check(c)?;
            if !(*w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("batch weight {w} must be finite and ≥ 0")));
            }
        }
        let n_params = self.n_params();
        let partials: Vec<(Vec<f64>, f64)> = batch
            .par_chunks(SHARD)
            .enumerate()
            .map(|(s, chunk)| {
                let mut g = vec![0.0; n_params];
                let mut total = 0.0;
                for (k, (c, w)) in chunk.iter().enumerate() {
                    let lp = match dropout_seed {
                        Some(seed) => {
                            let mut r = crate::rng::stream(seed, "dropout", (s * SHARD + k) as u64);
                            self.accumulate(c, *w, Some(&mut r), &mut g)
                        }
                        None => self.accumulate::<crate::rng::StreamRng>(c, *w, None, &mut g),
                    };
                    total += w * lp;
                }
                (g, total)
            })
            .collect();
        let mut grad = vec![0.0; n_params];
        let mut total = 0.0;
        for (g, t) in partials {
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            total += t;
        }
        Ok((grad, total))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        self.write_to(&mut f).map_err(|e| Error::io(path, e))?;
        f.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let c = &self.config;
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [c.n_bits, c.n_layers, c.features_per_bit] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&c.dropout_rate.to_le_bytes())?;
        w.write_all(&[c.activation.code()])?;
        w.write_all(&c.seed.to_le_bytes())?;
        w.write_all(&c.init_scale.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
        Self::read_from(&mut f)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b).map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
            Ok(b)
        }
        if &take::<8, _>(r)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(take(r)?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let n_bits = u32::from_le_bytes(take(r)?) as usize;
        let n_layers = u32::from_le_bytes(take(r)?) as usize;
        let features_per_bit = u32::from_le_bytes(take(r)?) as usize;
        let dropout_rate = f64::from_le_bytes(take(r)?);
        let activation = Activation::from_code(take::<1, _>(r)?[0])?;
        let seed = u64::from_le_bytes(take(r)?);
        let init_scale = f64::from_le_bytes(take(r)?);
        let n = u64::from_le_bytes(take(r)?) as usize;
        let cfg = ArnnConfig { n_bits, n_layers, features_per_bit, dropout_rate, activation, seed, init_scale };
        cfg.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let (_, expected) = build_layout(&cfg);
        if n != expected {
            return Err(Error::Checkpoint(format!("{n} parameters, layout needs {expected}")));
        }
        let params = (0..n).map(|_| take(r).map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
        Self::from_params(cfg, params)
    }
}

struct Trace {
    x: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    scale: Vec<Vec<f64>>,
    log_p: Vec<[f64; 2]>,
}

/// Build a model from `cfg`; alias of [`ArnnModel::init`].
pub fn init_model(cfg: ArnnConfig) -> Result<ArnnModel> {
    ArnnModel::init(cfg)
}

/// Every configuration of `n_bits` spin-orbitals, for exhaustive checks.
pub fn all_configurations(n_bits: usize) -> Result<Vec<Configuration>> {
    if n_bits > 24 {
        return Err(Error::GuardExceeded { size: 1u128 << n_bits, guard: 1 << 24 });
    }
    (0..1u64 << n_bits).map(|b| Configuration::new(b, n_bits)).collect()
}

/// Seeded model whose biases are also randomized, for tests and benchmarks.
pub fn random_model(n_bits: usize, n_layers: usize, features_per_bit: usize, seed: u64) -> Result<ArnnModel> {
    let mut m = ArnnModel::init(ArnnConfig::new(n_bits, n_layers, features_per_bit, 0.0, seed))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    for p in m.params_mut() {
        *p += rng.random_range(-0.5..0.5);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(s: &str) -> Configuration {
        s.parse().unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let mut c = ArnnConfig::small(8, 1);
        c.init_scale = 0.0;
        let m = ArnnModel::init(c).unwrap();
        let x = cfg("00110011");
        for row in m.conditional_log_probs(&x).unwrap() {
            assert_eq!(row, [-(2f64.ln()), -(2f64.ln())]);
        }
        assert!((m.log_prob(&x).unwrap() + 8.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn rows_normalized() {
        let m = random_model(6, 3, 3, 2).unwrap();
        for c in all_configurations(6).unwrap() {
            for row in m.conditional_log_probs(&c).unwrap() {
                assert!((row[0].exp() + row[1].exp() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalization_exhaustive() {
        for (m_bits, layers) in [(6, 1), (8, 2), (10, 3)] {
            let m = random_model(m_bits, layers, 3, 7).unwrap();
            let total: f64 = m.log_probs(&all_configurations(m_bits).unwrap()).unwrap().iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9, "{total}");
        }
    }

    #[test]
    fn autoregressive_exhaustive_m8() {
        let m = random_model(8, 3, 2, 3).unwrap();
        let all = all_configurations(8).unwrap();
        let table: Vec<Vec<[f64; 2]>> = all.iter().map(|c| m.conditional_log_probs(c).unwrap()).collect();
        for (i, c) in all.iter().enumerate() {
            for q in 0..8 {
                // flip any subset of bits ≥ q
                for tail in 0u64..(1 << (8 - q)) {
                    let mut bits = c.bits();
                    for k in 0..(8 - q) {
                        if tail >> k & 1 == 1 {
                            bits ^= 1 << (q + k);
                        }
                    }
                    let j = bits as usize;
                    assert_eq!(table[i][q], table[j][q], "bit {q} depends on later bits");
                }
            }
        }
    }

    #[test]
    fn first_bit_input_independent() {
        let m = random_model(5, 2, 2, 4).unwrap();
        let rows: Vec<[f64; 2]> = all_configurations(5).unwrap().iter().map(|c| m.conditional_log_probs(c).unwrap()[0]).collect();
        assert!(rows.iter().all(|r| *r == rows[0]));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = random_model(6, 3, 2, 11).unwrap();
        let c = cfg("101100");
        let g = m.log_prob_grad(&[(c, 1.0)]).unwrap();
        let h = 1e-5;
        for k in (0..m.n_params()).step_by(7) {
            let mut plus = m.clone();
            plus.params_mut()[k] += h;
            let mut minus = m.clone();
            minus.params_mut()[k] -= h;
            let fd = (plus.log_prob(&c).unwrap() - minus.log_prob(&c).unwrap()) / (2.0 * h);
            let denom = fd.abs().max(g[k].abs()).max(1e-8);
            assert!((fd - g[k]).abs() / denom < 1e-6 || (fd - g[k]).abs() < 1e-10, "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn gradient_linearity() {
        let m = random_model(6, 2, 3, 5).unwrap();
        let c = cfg("011010");
        let g1 = m.log_prob_grad(&[(c, 0.7), (c, 0.7)]).unwrap();
        let g2 = m.log_prob_grad(&[(c, 1.4)]).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-13);
        }
        let z = m.log_prob_grad(&[(c, 0.0)]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(m.log_prob_grad(&[]).is_err());
    }

    #[test]
    fn dropout_only_in_training() {
        let mut c = ArnnConfig::small(6, 9);
        c.dropout_rate = 0.5;
        let m = ArnnModel::init(c).unwrap();
        let x = cfg("110010");
        let eval = m.conditional_log_probs(&x).unwrap();
        let mut r1 = crate::rng::stream(1, "t", 0);
        let mut r2 = crate::rng::stream(1, "t", 0);
        let t1 = m.conditional_log_probs_train(&x, &mut r1).unwrap();
        let t2 = m.conditional_log_probs_train(&x, &mut r2).unwrap();
        assert_eq!(t1, t2);
        assert_ne!(t1, eval);
        let g1 = m.log_prob_grad_with(&[(x, 1.0)], Some(3)).unwrap();
        let g2 = m.log_prob_grad_with(&[(x, 1.0)], Some(3)).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn init_is_reproducible() {
        let a = ArnnModel::init(ArnnConfig::large(10, 42)).unwrap();
        let b = ArnnModel::init(ArnnConfig::large(10, 42)).unwrap();
        let c = ArnnModel::init(ArnnConfig::large(10, 43)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        assert!(a.params().iter().any(|&p| p != 0.0));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ArnnModel::init(ArnnConfig::new(6, 0, 2, 0.0, 0)).is_err());
        assert!(ArnnModel::init(ArnnConfig::new(6, 2, 0, 0.0, 0)).is_err());
        assert!(ArnnModel::init(ArnnConfig::new(6, 2, 2, 1.0, 0)).is_err());
        assert!(ArnnModel::init(ArnnConfig::new(6, 1, 0, 0.0, 0)).is_ok());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = random_model(7, 3, 2, 8).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = ArnnModel::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        buf[0] = b'X';
        assert!(ArnnModel::read_from(&mut buf.as_slice()).is_err());
        assert!(ArnnModel::read_from(&mut &buf[..20]).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let m = random_model(6, 2, 2, 1).unwrap();
        assert!(m.log_prob(&cfg("0101")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn autoregressive_random_m16(seed in 0u64..1000, bits in any::<u16>(), flips in any::<u16>(), q in 0usize..16) {
            let m = random_model(16, 2, 2, seed).unwrap();
            let a = Configuration::new(bits as u64, 16).unwrap();
            let mask = (flips as u64) & !((1u64 << q) - 1);
            let b = Configuration::new(a.bits() ^ mask, 16).unwrap();
            let ra = m.conditional_log_probs(&a).unwrap();
            let rb = m.conditional_log_probs(&b).unwrap();
            for k in 0..=q {
                prop_assert_eq!(ra[k], rb[k]);
            }
        }

        #[test]
        fn batch_equals_single(seed in 0u64..1000, raw in proptest::collection::vec(0u64..1024, 1..12)) {
            let m = random_model(10, 2, 2, seed).unwrap();
            let cs: Vec<Configuration> = raw.iter().map(|&b| Configuration::new(b, 10).unwrap()).collect();
            let batch = m.log_probs(&cs).unwrap();
            for (c, lp) in cs.iter().zip(batch) {
                prop_assert_eq!(m.log_prob(c).unwrap().to_bits(), lp.to_bits());
            }
        }
    }
}
