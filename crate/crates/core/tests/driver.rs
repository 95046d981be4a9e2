mod common;

use arnnsci::driver::{self, BetaSchedule, StageConfig, RECORDS_HEADER};
use arnnsci::eigensolver::fci_reference;
use arnnsci::vmc_oracle::local_energy_expectation;
use arnnsci::{config, IterationRecord, RunConfig, RunStatus, SeedKind, SparseState, CHEMICAL_ACCURACY};

fn h4_config(kind: SeedKind) -> RunConfig {
    RunConfig {
        fcidump_path: common::fixture_dir().join("h4.fcidump"),
        seed_kind: kind,
        n_network_samples: 20_000,
        n_unique_cap: Some(12),
        max_iterations: 6,
        stages: vec![StageConfig { n_train: 5_000, ..StageConfig::small() }],
        epochs: 40,
        ..RunConfig::default()
    }
}

fn strip_time(r: &[IterationRecord]) -> Vec<IterationRecord> {
    r.iter().map(|x| IterationRecord { seconds: 0.0, ..x.clone() }).collect()
}

#[test]
fn h4_reaches_chemical_accuracy_from_every_seed() {
    let (_, reference) = common::load("h4");
    for kind in [SeedKind::Hf, SeedKind::Cisd, SeedKind::GsSample] {
        for force_cisd in [true, false] {
            let out = driver::run(&RunConfig { force_cisd, n_unique_cap: None, ..h4_config(kind) }).unwrap();
            let last = out.records.last().unwrap();
            let de = last.energy - reference.fci.unwrap();
            assert!(de < CHEMICAL_ACCURACY, "{kind} force_cisd={force_cisd}: ΔE {de:e}");
            assert!(de > -1e-10);
            assert!((out.reference_energy.unwrap() - reference.fci.unwrap()).abs() < 1e-8);
        }
    }
}

#[test]
fn same_seed_same_records() {
    let cfg = RunConfig { force_cisd: false, n_unique_cap: Some(8), ..h4_config(SeedKind::Hf) };
    let a = driver::run(&cfg).unwrap();
    let b = driver::run(&cfg).unwrap();
    assert_eq!(strip_time(&a.records), strip_time(&b.records));
    assert_eq!(a.state, b.state);
}

#[test]
fn stopping_rule_with_infinite_epsilon() {
    let cfg = RunConfig { patience: 1, epsilon_ha: f64::INFINITY, ..h4_config(SeedKind::Cisd) };
    let out = driver::run(&cfg).unwrap();
    assert_eq!(out.records.len(), 2);
    assert_eq!(out.status, RunStatus::Converged);
    let two = RunConfig { stages: vec![StageConfig::small(), StageConfig::small()], ..cfg };
    let out = driver::run(&two).unwrap();
    assert_eq!(out.records.len(), 3);
    assert_eq!(out.records[2].stage, 1);
}

#[test]
fn max_iterations_status() {
    let cfg = RunConfig { max_iterations: 2, epsilon_ha: 1e-30, ..h4_config(SeedKind::Hf) };
    let out = driver::run(&cfg).unwrap();
    assert_eq!(out.status, RunStatus::MaxIterations);
    assert_eq!(out.records.len(), 3);
}

#[test]
fn records_are_monotone_and_inside_sector() {
    let (t, r) = common::load("h2o");
    let sector = t.sector();
    for seed in 0..3 {
        let cfg = RunConfig {
            fcidump_path: common::fixture_dir().join("h2o.fcidump"),
            seed_kind: SeedKind::Hf,
            force_cisd: false,
            n_unique_cap: Some(20 + 5 * seed as usize),
            n_network_samples: 10_000,
            max_iterations: 4,
            rng_seed: seed,
            stages: vec![StageConfig { n_train: 2_000, ..StageConfig::small() }],
            epochs: 20,
            ..RunConfig::default()
        };
        let out = driver::run_with_table(&cfg, &t).unwrap();
        for w in out.records.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-12);
        }
        assert!(out.state.support.iter().all(|c| sector.contains(c)));
        assert!(out.state.energy >= r.fci.unwrap() - 1e-10);
        assert_eq!(out.records[0].beta, None);
        assert!(out.records[1..].iter().all(|x| x.beta.is_some()));
    }
}

#[test]
fn saturated_ground_state_sampling_gives_fci() {
    let (t, r) = common::load("h4");
    let size = t.sector().count() as usize;
    let cfg = RunConfig {
        seed_kind: SeedKind::GsSample,
        n_gs_samples: 100 * size as u64 * 1000,
        n_unique_cap: Some(size),
        force_cisd: false,
        max_iterations: 0,
        ..h4_config(SeedKind::GsSample)
    };
    let out = driver::run_with_table(&cfg, &t).unwrap();
    assert_eq!(out.records.len(), 1);
    assert!((out.records[0].energy - r.fci.unwrap()).abs() < 1e-9);
}

#[test]
fn single_ground_state_sample_plus_forced_set() {
    let (t, _) = common::load("h4");
    let cfg = RunConfig { n_gs_samples: 1, force_cisd: false, max_iterations: 0, ..h4_config(SeedKind::GsSample) };
    let out = driver::run_with_table(&cfg, &t).unwrap();
    assert!(out.records[0].n_unique <= 2);
    assert!(out.state.support.contains(&t.hartree_fock()));
}

#[test]
fn hf_seed_with_forced_cisd_is_cisd_energy() {
    let (t, r) = common::load("h2o");
    let cfg = RunConfig { seed_kind: SeedKind::Hf, max_iterations: 0, ..RunConfig::default() };
    let out = driver::run_with_table(&cfg, &t).unwrap();
    assert!((out.records[0].energy - r.cisd.unwrap()).abs() < 1e-7);
}

#[test]
fn uncapped_loop_on_water() {
    let (t, r) = common::load("h2o");
    let cfg = RunConfig {
        seed_kind: SeedKind::Hf,
        force_cisd: false,
        n_unique_cap: Some(t.sector().count() as usize),
        n_network_samples: 100_000,
        max_iterations: 5,
        stages: vec![StageConfig::small()],
        ..RunConfig::default()
    };
    let out = driver::run_with_table(&cfg, &t).unwrap();
    assert!(out.records.len() <= 6);
    assert!(out.state.energy - r.fci.unwrap() < CHEMICAL_ACCURACY);
}

#[test]
fn untempered_loop_keeps_fci_fixed_point() {
    let (t, r) = common::load("h4");
    let size = t.sector().count() as usize;
    let cfg = RunConfig {
        seed_kind: SeedKind::GsSample,
        n_gs_samples: 1_000_000,
        n_unique_cap: Some(size),
        beta_schedule: BetaSchedule::Fixed(vec![]),
        beta0: 1.0,
        max_iterations: 3,
        ..h4_config(SeedKind::GsSample)
    };
    let out = driver::run_with_table(&cfg, &t).unwrap();
    for rec in &out.records {
        assert!((rec.energy - r.fci.unwrap()).abs() < 1e-9);
        assert!(rec.beta.is_none_or(|b| b == 1.0));
    }
}

#[test]
fn output_directory_contents() {
    let dir = std::env::temp_dir().join(format!("arnnsci-driver-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let cfg = RunConfig {
        output_dir: Some(dir.clone()),
        write_loss_trace: true,
        max_iterations: 2,
        ..h4_config(SeedKind::Cisd)
    };
    let out = driver::run(&cfg).unwrap();
    let read = |f: &str| std::fs::read_to_string(dir.join(f)).unwrap();
    let records = read("records.csv");
    assert_eq!(records.lines().next().unwrap(), RECORDS_HEADER);
    assert_eq!(records.lines().count(), out.records.len() + 1);
    let state = read("final_state.csv");
    assert_eq!(state.lines().next().unwrap(), "bitstring,amplitude");
    assert_eq!(state.lines().count(), out.state.len() + 1);
    assert!(read("loss_trace.csv").starts_with("iteration,epoch,minibatch,nll\n"));
    let snapshot = config::parse(&read("config.cfg"), None).unwrap();
    assert_eq!(snapshot, cfg);
    assert!(dir.join("model_stage0.ckpt").exists());
    let m = arnnsci::ArnnModel::load(dir.join("model_stage0.ckpt")).unwrap();
    assert_eq!(m.n_bits(), 8);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn missing_fcidump_is_an_error() {
    let cfg = RunConfig { fcidump_path: "/nonexistent/x.fcidump".into(), ..RunConfig::default() };
    assert!(driver::run(&cfg).is_err());
}

#[test]
fn local_energy_matches_rayleigh_quotient_on_fixture_states() {
    for name in ["h2", "h4", "lih", "h2o"] {
        let (t, _) = common::load(name);
        let sector = t.sector();
        let gs = fci_reference(&t, &sector).unwrap();
        let cisd = driver::build_seed(SeedKind::Cisd, &t, &sector).unwrap();
        let truncated = SparseState::ground_state(
            gs.sorted_by_probability().into_iter().take(6).map(|(c, _)| c).collect(),
            &t,
            1e-10,
        )
        .unwrap();
        for psi in [gs, cisd, truncated] {
            let e = local_energy_expectation(&psi, &t).unwrap();
            let h = arnnsci::integrals::assemble_subspace(&psi.support, &t).unwrap();
            let rq = h.rayleigh_quotient(&psi.amplitudes);
            assert!((e - rq).abs() < 1e-9, "{name}: {e} vs {rq}");
        }
    }
}
