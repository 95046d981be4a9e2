mod plot;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use arnnsci::driver::{self, RunStatus};
use arnnsci::eigensolver::{fci_reference_with_guard, n_ca, samples_to_reach, FCI_GUARD};
use arnnsci::sampler::{filter_physical, sample_fast};
use arnnsci::{config, ArnnModel, IntegralTable, RunConfig, SeedKind, CHEMICAL_ACCURACY};
use clap::{Args, Parser, Subcommand};

const EXIT_ERROR: u8 = 1;
const EXIT_MAX_ITERATIONS: u8 = 2;
const EXIT_GUARD: u8 = 3;

#[derive(Parser)]
#[command(name = "arnnsci", version, about = "Neural-network guided selected configuration interaction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (key = value with [run] and [stage.N] sections)
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `n_unique_cap=16` or `stage.0.n_train=1e4`
    #[arg(long = "override", short = 'o', value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// FCIDUMP file; takes precedence over the configuration
    #[arg(long)]
    fcidump: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => config::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            config::apply_override(&mut cfg, o)?;
        }
        if let Some(f) = &self.fcidump {
            cfg.fcidump_path = f.clone();
        }
        if cfg.fcidump_path.as_os_str().is_empty() {
            bail!("no FCIDUMP given (use --fcidump or set `fcidump` in the configuration)");
        }
        Ok(cfg)
    }

    fn table(&self) -> Result<(RunConfig, IntegralTable)> {
        let cfg = self.resolve()?;
        let t = IntegralTable::from_path(&cfg.fcidump_path)?;
        Ok((cfg, t))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the selection loop and write a run directory
    Run {
        #[command(flatten)]
        common: Common,
        /// Run directory (default: `output_dir` from the configuration, else ./arnnsci-run)
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Exact ground state of the symmetry sector and its sorted Born table
    Fci {
        #[command(flatten)]
        common: Common,
        /// Report N_CA, the number of leading configurations within this error, and the matching sample count
        #[arg(long, value_name = "HARTREE", num_args = 0..=1, default_missing_value = "1.6e-3")]
        chem_acc: Option<f64>,
        /// Largest sector to diagonalize
        #[arg(long, default_value_t = FCI_GUARD)]
        guard: u128,
        /// Born table output (CSV)
        #[arg(long, default_value = "born.csv")]
        out: PathBuf,
    },
    /// Build a seed state (hf, cisd or gs_sample) and write it as CSV
    Seed {
        #[command(flatten)]
        common: Common,
        /// Seed kind; defaults to `seed_kind` from the configuration
        #[arg(long)]
        kind: Option<SeedKind>,
        #[arg(long, default_value = "seed_state.csv")]
        out: PathBuf,
    },
    /// Draw samples from a saved network
    Sample {
        /// Checkpoint written by `run`
        #[arg(long)]
        model: PathBuf,
        #[arg(long, short, default_value_t = 100_000)]
        n: u64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Drop configurations outside this FCIDUMP's symmetry sector
        #[arg(long)]
        fcidump: Option<PathBuf>,
        /// Output CSV (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize an FCIDUMP, a checkpoint, or a records CSV
    Inspect { path: PathBuf },
    /// Static SVG plots of ΔE against iteration, or of configuration filling
    Plot {
        /// records.csv files or run directories; a directory of runs overlays every run inside it
        #[arg(long, required_unless_present = "born")]
        records: Vec<PathBuf>,
        /// Sorted Born table from `fci`; switches to the filling plot
        #[arg(long, requires = "state")]
        born: Option<PathBuf>,
        /// State CSVs (final_state.csv or seed_state.csv) to compare against the Born table
        #[arg(long)]
        state: Vec<PathBuf>,
        /// Leading configurations of the Born table to cover (default: the whole table)
        #[arg(long)]
        top: Option<usize>,
        #[arg(long, default_value_t = 100)]
        bins: usize,
        #[arg(long, default_value = "plot.svg")]
        out: PathBuf,
    },
}

fn configure_threads() {
    if let Some(n) = std::env::var("ARNNSCI_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("ARNNSCI_THREADS ignored: {e}");
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    configure_threads();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let guard = e.chain().any(|c| matches!(c.downcast_ref(), Some(arnnsci::Error::GuardExceeded { .. })));
            ExitCode::from(if guard { EXIT_GUARD } else { EXIT_ERROR })
        }
    }
}

fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Run { common, output_dir } => cmd_run(&common, output_dir),
        Command::Fci { common, chem_acc, guard, out } => cmd_fci(&common, chem_acc, guard, &out),
        Command::Seed { common, kind, out } => cmd_seed(&common, kind, &out),
        Command::Sample { model, n, beta, seed, fcidump, out } => cmd_sample(&model, n, beta, seed, fcidump, out),
        Command::Inspect { path } => cmd_inspect(&path),
        Command::Plot { records, born, state, top, bins, out } => match born {
            Some(b) => plot::filling(&b, &state, top, bins, &out).map(|_| 0),
            None => plot::convergence(&records, &out).map(|_| 0),
        },
    }
}

fn cmd_run(common: &Common, output_dir: Option<PathBuf>) -> Result<u8> {
    let mut cfg = common.resolve()?;
    if let Some(d) = output_dir {
        cfg.output_dir = Some(d);
    }
    if cfg.output_dir.is_none() {
        cfg.output_dir = Some(PathBuf::from("arnnsci-run"));
    }
    if !cfg.fcidump_path.exists() {
        bail!("FCIDUMP not found: {}", cfg.fcidump_path.display());
    }
    let out = driver::run(&cfg)?;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    write!(w, "{}", driver::records_csv(&out.records))?;
    let dir = cfg.output_dir.as_deref().unwrap_or(Path::new("."));
    match out.status {
        RunStatus::Converged => {
            log::info!("converged; results in {}", dir.display());
            Ok(0)
        }
        RunStatus::MaxIterations => {
            log::warn!("stopped at max_iterations = {}; results in {}", cfg.max_iterations, dir.display());
            Ok(EXIT_MAX_ITERATIONS)
        }
    }
}

fn cmd_fci(common: &Common, chem_acc: Option<f64>, guard: u128, out: &Path) -> Result<u8> {
    let (_, t) = common.table()?;
    let sector = t.sector();
    println!("sector: {} configurations over {} spin-orbitals", sector.count(), t.n_spin_orbitals());
    let gs = fci_reference_with_guard(&t, &sector, guard)?;
    println!("E_FCI = {:.10} Ha", gs.energy);
    let sorted = gs.sorted_by_probability();
    let mut csv = String::from("rank,bitstring,amplitude,probability,cumulative\n");
    let mut cumulative = 0.0;
    for (rank, (c, a)) in sorted.iter().enumerate() {
        cumulative += a * a;
        csv.push_str(&format!("{},{c},{a:.15e},{:.15e},{cumulative:.15e}\n", rank + 1, a * a));
    }
    std::fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    println!("Born table: {}", out.display());
    if let Some(acc) = chem_acc {
        let k = n_ca(&gs, &t, acc)?;
        let nn = samples_to_reach(&gs, k)?;
        println!("N_CA({acc:e} Ha) = {k}");
        println!("N_N = {nn} (expected samples to draw configuration {k} once)");
    }
    Ok(0)
}

fn cmd_seed(common: &Common, kind: Option<SeedKind>, out: &Path) -> Result<u8> {
    let (cfg, t) = common.table()?;
    let kind = kind.unwrap_or(cfg.seed_kind);
    let state = driver::build_seed(kind, &t, &t.sector())?;
    println!("{kind} seed: E = {:.10} Ha over {} configurations", state.energy, state.len());
    std::fs::write(out, driver::state_csv(&state)).with_context(|| format!("writing {}", out.display()))?;
    println!("state: {}", out.display());
    Ok(0)
}

fn cmd_sample(model: &Path, n: u64, beta: f64, seed: u64, fcidump: Option<PathBuf>, out: Option<PathBuf>) -> Result<u8> {
    let m = ArnnModel::load(model)?;
    let mut batch = sample_fast(&m, n, beta, seed)?;
    if let Some(f) = fcidump {
        let t = IntegralTable::from_path(&f)?;
        if t.n_spin_orbitals() != m.n_bits() {
            bail!("model has {} bits but {} describes {} spin-orbitals", m.n_bits(), f.display(), t.n_spin_orbitals());
        }
        batch = filter_physical(&batch, &t.sector())?;
        log::info!("{} samples outside the sector discarded", batch.n_discarded_unphysical);
    }
    log::info!("{} unique configurations from {n} samples at beta {beta}", batch.n_unique());
    match out {
        Some(p) => std::fs::write(&p, batch.to_csv()).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().lock().write_all(batch.to_csv().as_bytes())?,
    }
    Ok(0)
}

fn cmd_inspect(path: &Path) -> Result<u8> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(b"ARNNSCI\0") {
        let m = ArnnModel::read_from(&mut bytes.as_slice())?;
        let c = m.config();
        println!("checkpoint: {}", path.display());
        println!("bits {}  layers {}  features/bit {}", c.n_bits, c.n_layers, c.features_per_bit);
        println!("dropout {}  activation {}  parameters {}", c.dropout_rate, c.activation, m.n_params());
        return Ok(0);
    }
    let text = String::from_utf8(bytes).with_context(|| format!("{} is not text", path.display()))?;
    if text.starts_with(driver::RECORDS_HEADER) {
        let records = plot::parse_records(&text)?;
        let last = records.last().context("records file has no rows")?;
        println!("records: {} ({} iterations)", path.display(), records.len().saturating_sub(1));
        println!("final energy {:.10} Ha", last.energy);
        if let Some(de) = last.delta_e {
            println!("final ΔE {de:.3e} Ha ({})", if de < CHEMICAL_ACCURACY { "within chemical accuracy" } else { "above chemical accuracy" });
        }
        return Ok(0);
    }
    let t = arnnsci::integrals::parse_fcidump(&text)?;
    let s = t.sector();
    let hf = t.hartree_fock();
    println!("FCIDUMP: {}", path.display());
    println!("spatial orbitals {}  spin-orbitals {}  electrons {}  MS2 {}", t.n_spatial(), t.n_spin_orbitals(), t.n_electrons(), t.ms2());
    println!("orbital irreps {:?}  target irrep {}", t.orbital_irreps(), t.target_irrep());
    println!("core energy {:.10} Ha", t.core_energy());
    println!("sector {} of {} configurations", s.count(), 1u128 << t.n_spin_orbitals());
    println!("HF {hf}  E_HF = {:.10} Ha", t.matrix_element(&hf, &hf));
    Ok(0)
}
