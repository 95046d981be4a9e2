//! The selection loop.
//!
//! Iteration zero diagonalizes the seed's support (or raw samples of the
//! exact ground state) together with the forced configurations. Every later
//! iteration rescales the current state by `β₀`, trains a network on samples
//! of it, samples the network at inverse temperature `β`, and diagonalizes
//! the Hamiltonian in the selected basis.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::arnn::{Activation, ArnnConfig, ArnnModel};
use crate::determinant::{passes_symmetry, Configuration, ExcitationOrder, SymmetrySector};
use crate::eigensolver::{fci_reference_with_guard, SparseState, DEFAULT_TOL, FCI_GUARD};
use crate::error::{Error, Result};
use crate::integrals::IntegralTable;
use crate::sampler::{filter_physical, find_beta, sample_fast, SampleBatch};
use crate::trainer::{draw_training_set, rescale_sparse, train, ProbabilityTable, TrainPlan};

/// Largest CISD space the seed builder will diagonalize.
pub const CISD_GUARD: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedKind {
    Hf,
    Cisd,
    GsSample,
}

impl std::str::FromStr for SeedKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hf" => Ok(SeedKind::Hf),
            "cisd" => Ok(SeedKind::Cisd),
            "gs_sample" => Ok(SeedKind::GsSample),
            _ => Err(Error::Config(format!("unknown seed kind '{s}' (hf, cisd, gs_sample)"))),
        }
    }
}

impl std::fmt::Display for SeedKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SeedKind::Hf => "hf",
            SeedKind::Cisd => "cisd",
            SeedKind::GsSample => "gs_sample",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BetaSchedule {
    /// Bisect for the unique cap on each tempered iteration.
    Auto,
    /// Explicit β for iterations 1, 2, ...; 1 once the list is exhausted.
    Fixed(Vec<f64>),
}

/// One network size and its training budget.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub n_layers: usize,
    pub features_per_bit: usize,
    pub dropout_rate: f64,
    pub n_train: u64,
}

impl StageConfig {
    pub fn small() -> Self {
        StageConfig { n_layers: 2, features_per_bit: 4, dropout_rate: 0.05, n_train: 10_000 }
    }

    pub fn large() -> Self {
        StageConfig { n_layers: 4, features_per_bit: 8, dropout_rate: 0.1, n_train: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub fcidump_path: PathBuf,
    pub seed_kind: SeedKind,
    /// Raw samples of the exact ground state at iteration zero (`gs_sample`).
    pub n_gs_samples: u64,
    pub n_network_samples: u64,
    /// `None` keeps every selected configuration.
    pub n_unique_cap: Option<usize>,
    pub beta_schedule: BetaSchedule,
    /// Number of leading iterations that use `β ≠ 1`.
    pub beta_iterations: usize,
    pub beta0: f64,
    pub stages: Vec<StageConfig>,
    pub max_iterations: usize,
    pub epsilon_ha: f64,
    pub patience: usize,
    pub rng_seed: u64,
    pub warm_start: bool,
    /// Inject HF, singles and doubles into every basis; HF is always injected.
    pub force_cisd: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub activation: Activation,
    pub init_scale: f64,
    /// Sectors up to this size get an exact reference for ΔE; 0 disables.
    pub reference_guard: u128,
    pub output_dir: Option<PathBuf>,
    pub write_loss_trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            fcidump_path: PathBuf::new(),
            seed_kind: SeedKind::Cisd,
            n_gs_samples: 1000,
            n_network_samples: 100_000,
            n_unique_cap: None,
            beta_schedule: BetaSchedule::Auto,
            beta_iterations: 3,
            beta0: 0.4,
            stages: vec![StageConfig::small(), StageConfig::large()],
            max_iterations: 60,
            epsilon_ha: 1e-5,
            patience: 3,
            rng_seed: 0,
            warm_start: false,
            force_cisd: true,
            learning_rate: 1e-3,
            epochs: 200,
            minibatch_size: 256,
            activation: Activation::Selu,
            init_scale: 1.0,
            reference_guard: FCI_GUARD,
            output_dir: None,
            write_loss_trace: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.stages.is_empty() {
            return bad("at least one model stage is required");
        }
        if self.n_unique_cap == Some(0) {
            return bad("n_unique_cap must be ≥ 1");
        }
        if !(self.epsilon_ha > 0.0) {
            return bad("epsilon_ha must be > 0");
        }
        if self.patience == 0 {
            return bad("patience must be ≥ 1");
        }
        if !(self.beta0 > 0.0 && self.beta0 <= 1.0) {
            return bad("beta0 must lie in (0, 1]");
        }
        if self.n_network_samples == 0 || self.n_gs_samples == 0 {
            return bad("sample counts must be ≥ 1");
        }
        if let BetaSchedule::Fixed(v) = &self.beta_schedule {
            if v.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
                return bad("beta values must be positive");
            }
        }
        for (k, s) in self.stages.iter().enumerate() {
            if s.n_train == 0 {
                return Err(Error::Config(format!("stage {k}: n_train must be ≥ 1")));
            }
            self.arnn_config(s, 1, 0).validate().map_err(|e| Error::Config(format!("stage {k}: {e}")))?;
        }
        self.train_plan(0).validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn arnn_config(&self, s: &StageConfig, n_bits: usize, seed: u64) -> ArnnConfig {
        ArnnConfig {
            n_bits,
            n_layers: s.n_layers,
            features_per_bit: s.features_per_bit,
            dropout_rate: s.dropout_rate,
            activation: self.activation,
            seed,
            init_scale: self.init_scale,
        }
    }

    fn train_plan(&self, seed: u64) -> TrainPlan {
        TrainPlan {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            minibatch_size: self.minibatch_size,
            beta0: self.beta0,
            shuffle_seed: seed,
            ..TrainPlan::default()
        }
    }

    /// β for iteration `i ≥ 1`; `None` means search.
    fn beta_for(&self, i: usize) -> Option<f64> {
        if i > self.beta_iterations {
            return Some(1.0);
        }
        match &self.beta_schedule {
            BetaSchedule::Auto => None,
            BetaSchedule::Fixed(v) => Some(v.get(i - 1).copied().unwrap_or(1.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub index: usize,
    pub energy: f64,
    /// Energy above the exact reference, when one was computed.
    pub delta_e: Option<f64>,
    pub n_unique: usize,
    /// `None` at iteration zero.
    pub beta: Option<f64>,
    pub n_discarded: u64,
    pub stage: usize,
    pub seconds: f64,
}

pub const RECORDS_HEADER: &str = "i,energy_Ha,delta_e_Ha,n_unique,beta,discarded,stage,seconds";

impl IterationRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.12},{},{},{},{},{},{:.3}",
            self.index,
            self.energy,
            self.delta_e.map(|d| format!("{d:.6e}")).unwrap_or_default(),
            self.n_unique,
            self.beta.map(|b| format!("{b:.6}")).unwrap_or_default(),
            self.n_discarded,
            self.stage,
            self.seconds
        )
    }
}

pub fn records_csv(records: &[IterationRecord]) -> String {
    let mut s = format!("{RECORDS_HEADER}\n");
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub records: Vec<IterationRecord>,
    pub state: SparseState,
    pub reference_energy: Option<f64>,
}

/// HF plus all symmetry-allowed singles and doubles, HF first.
pub fn cisd_space(t: &IntegralTable, s: &SymmetrySector) -> Result<Vec<Configuration>> {
    let hf = t.hartree_fock();
    let mut seen = HashSet::new();
    let mut out = vec![hf];
    seen.insert(hf.bits());
    for order in [ExcitationOrder::Singles, ExcitationOrder::Doubles] {
        for c in hf.excitations(order) {
            if passes_symmetry(&c, s)? && seen.insert(c.bits()) {
                out.push(c);
            }
        }
    }
    if out.len() > CISD_GUARD {
        return Err(Error::GuardExceeded { size: out.len() as u128, guard: CISD_GUARD as u128 });
    }
    Ok(out)
}

/// Seed state: HF point mass, CISD ground state, or the exact ground state.
pub fn build_seed(kind: SeedKind, t: &IntegralTable, s: &SymmetrySector) -> Result<SparseState> {
    match kind {
        SeedKind::Hf => {
            let hf = t.hartree_fock();
            Ok(SparseState::point(hf, t.matrix_element(&hf, &hf)))
        }
        SeedKind::Cisd => SparseState::ground_state(cisd_space(t, s)?, t, DEFAULT_TOL),
        SeedKind::GsSample => fci_reference_with_guard(t, s, FCI_GUARD),
    }
}

/// Basis for one diagonalization: forced configurations, then the previous
/// support by probability, then candidates in the given order, truncated at
/// `cap` (never below the forced set).
pub fn select_basis(
    forced: &[Configuration],
    previous: Option<&SparseState>,
    candidates: &[Configuration],
    cap: Option<usize>,
) -> Vec<Configuration> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for c in forced {
        if seen.insert(c.bits()) {
            out.push(*c);
        }
    }
    if cap.is_some_and(|c| c < out.len()) {
        log::warn!("unique cap {} below {} forced configurations; keeping all forced", cap.unwrap_or(0), out.len());
    }
    let limit = cap.map_or(usize::MAX, |c| c.max(out.len()));
    let retained = previous.map(|p| p.sorted_by_probability()).unwrap_or_default();
    for c in retained.iter().map(|(c, _)| c).chain(candidates) {
        if out.len() >= limit {
            break;
        }
        if seen.insert(c.bits()) {
            out.push(*c);
        }
    }
    out
}

/// Next iterate. Without a cap the basis is everything on offer. With a cap,
/// the previous support plus up to `cap` new candidates is diagonalized
/// first, and the `cap` most probable configurations of that state (plus the
/// forced set) are diagonalized again.
pub fn next_state(
    forced: &[Configuration],
    previous: &SparseState,
    candidates: &[Configuration],
    cap: Option<usize>,
    t: &IntegralTable,
) -> Result<SparseState> {
    let Some(cap) = cap else {
        return SparseState::ground_state(select_basis(forced, Some(previous), candidates, None), t, DEFAULT_TOL);
    };
    let floor = previous.len().max(forced.len());
    let wide = select_basis(forced, Some(previous), candidates, Some(floor + cap));
    let wide = SparseState::ground_state(wide, t, DEFAULT_TOL)?;
    if wide.len() <= cap {
        return Ok(wide);
    }
    SparseState::ground_state(select_basis(forced, Some(&wide), &[], Some(cap)), t, DEFAULT_TOL)
}

struct RunDir {
    path: PathBuf,
}

impl RunDir {
    fn create(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        Ok(RunDir { path: path.to_path_buf() })
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let p = self.path.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }
}

pub fn state_csv(state: &SparseState) -> String {
    let mut s = String::from("bitstring,amplitude\n");
    for (c, a) in state.support.iter().zip(&state.amplitudes) {
        s.push_str(&format!("{c},{a:.15e}\n"));
    }
    s
}

/// The full loop for a configuration whose integrals are on disk.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let t = IntegralTable::from_path(&cfg.fcidump_path)?;
    run_with_table(cfg, &t)
}

/// The full loop on an in-memory integral table.
pub fn run_with_table(cfg: &RunConfig, t: &IntegralTable) -> Result<RunOutcome> {
    cfg.validate()?;
    let s = t.sector();
    let dir = cfg.output_dir.as_deref().map(RunDir::create).transpose()?;
    if let Some(d) = &dir {
        d.write("config.cfg", &crate::config::to_text(cfg))?;
    }
    let n_bits = t.n_spin_orbitals();
    let sector_size = s.count();

    let exact = if sector_size <= cfg.reference_guard {
        Some(fci_reference_with_guard(t, &s, cfg.reference_guard)?)
    } else {
        log::info!("sector of {sector_size} exceeds reference guard; ΔE not reported");
        None
    };
    let reference_energy = exact.as_ref().map(|e| e.energy);
    let delta = |e: f64| reference_energy.map(|r| e - r);

    let forced = if cfg.force_cisd { cisd_space(t, &s)? } else { vec![t.hartree_fock()] };

    // iteration zero
    let clock = Instant::now();
    let candidates: Vec<Configuration> = match cfg.seed_kind {
        SeedKind::GsSample => {
            let gs = match &exact {
                Some(e) => e.clone(),
                None => build_seed(SeedKind::GsSample, t, &s)?,
            };
            let p = ProbabilityTable::from_state(&gs)?;
            let mut rng = crate::rng::stream(cfg.rng_seed, "gs-sample", 0);
            let drawn = draw_training_set(&p, cfg.n_gs_samples, &mut rng)?;
            let mut entries: Vec<(Configuration, u64)> = drawn.entries().to_vec();
            entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            entries.into_iter().map(|(c, _)| c).collect()
        }
        kind => build_seed(kind, t, &s)?.sorted_by_probability().into_iter().map(|(c, _)| c).collect(),
    };
    let basis = select_basis(&forced, None, &candidates, cfg.n_unique_cap);
    let mut state = SparseState::ground_state(basis, t, DEFAULT_TOL)?;
    let mut records = vec![IterationRecord {
        index: 0,
        energy: state.energy,
        delta_e: delta(state.energy),
        n_unique: state.len(),
        beta: None,
        n_discarded: 0,
        stage: 0,
        seconds: clock.elapsed().as_secs_f64(),
    }];
    log::info!("iteration 0: E = {:.10} Ha, {} configurations", state.energy, state.len());

    let mut stage = 0usize;
    let mut stalls = 0usize;
    let mut status = RunStatus::MaxIterations;
    let mut model: Option<(usize, ArnnModel)> = None;
    let mut loss_trace = String::from("iteration,epoch,minibatch,nll\n");

    for i in 1..=cfg.max_iterations {
        let clock = Instant::now();
        let sc = &cfg.stages[stage];
        let p = rescale_sparse(&state, cfg.beta0)?;
        let mut rng = crate::rng::stream(cfg.rng_seed, "train-data", i as u64);
        let data = draw_training_set(&p, sc.n_train, &mut rng)?;
        let mut net = match model.take() {
            Some((k, m)) if cfg.warm_start && k == stage => m,
            _ => ArnnModel::init(cfg.arnn_config(sc, n_bits, crate::rng::derive_seed(cfg.rng_seed, "init", i as u64)))?,
        };
        let report = train(&mut net, &data, &cfg.train_plan(crate::rng::derive_seed(cfg.rng_seed, "train", i as u64)))?;
        if cfg.write_loss_trace {
            for line in report.to_csv().lines().skip(1) {
                loss_trace.push_str(&format!("{i},{line}\n"));
            }
        }

        let sample_seed = crate::rng::derive_seed(cfg.rng_seed, "sample", i as u64);
        let (beta, batch): (f64, SampleBatch) = match cfg.beta_for(i) {
            Some(b) => (b, sample_fast(&net, cfg.n_network_samples, b, sample_seed)?),
            None => {
                let target = 2 * cfg.n_unique_cap.unwrap_or(state.len());
                find_beta(&net, cfg.n_network_samples, target, Some(&s), sample_seed)?
            }
        };
        let physical = filter_physical(&batch, &s)?;
        let sampled: Vec<Configuration> = physical.ranked().into_iter().map(|e| e.config).collect();
        let candidate = next_state(&forced, &state, &sampled, cfg.n_unique_cap, t)?;
        let improvement = state.energy - candidate.energy;
        if candidate.energy <= state.energy {
            state = candidate;
        } else {
            log::info!("iteration {i}: subspace energy rose by {:.3e} Ha; previous state kept", -improvement);
        }
        let record = IterationRecord {
            index: i,
            energy: state.energy,
            delta_e: delta(state.energy),
            n_unique: state.len(),
            beta: Some(beta),
            n_discarded: physical.n_discarded_unphysical,
            stage,
            seconds: clock.elapsed().as_secs_f64(),
        };
        log::info!(
            "iteration {i}: E = {:.10} Ha, {} configurations, beta {beta:.3}, stage {stage}",
            state.energy,
            state.len()
        );
        records.push(record);

        let finished_stage = stage;
        if improvement.max(0.0) < cfg.epsilon_ha {
            stalls += 1;
        } else {
            stalls = 0;
        }
        let mut converged = false;
        if stalls >= cfg.patience {
            if stage + 1 < cfg.stages.len() {
                stage += 1;
                stalls = 0;
                log::info!("switching to model stage {stage}");
            } else {
                converged = true;
            }
        }
        if let Some(d) = &dir {
            if stage != finished_stage || converged || i == cfg.max_iterations {
                let p = d.path.join(format!("model_stage{finished_stage}.ckpt"));
                net.save(&p)?;
            }
        }
        model = Some((finished_stage, net));
        if converged {
            status = RunStatus::Converged;
            break;
        }
    }

    if let Some(d) = &dir {
        d.write("records.csv", &records_csv(&records))?;
        d.write("final_state.csv", &state_csv(&state))?;
        if cfg.write_loss_trace {
            d.write("loss_trace.csv", &loss_trace)?;
        }
    }
    Ok(RunOutcome { status, records, state, reference_energy })
}
