//! Plain-text run configuration.
//!
//! ```text
//! [run]
//! fcidump = fixtures/h2o.fcidump
//! seed_kind = cisd
//! n_unique_cap = 200
//!
//! [stage.0]
//! n_layers = 2
//! features_per_bit = 4
//! dropout = 0.05
//! n_train = 10000
//! ```
//!
//! Keys outside a section belong to `[run]`. Any `[stage.N]` section replaces
//! the default stage list; stages must be numbered `0..K` without gaps.
//! Overrides use the same keys, with `stage.N.key` for stage entries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::driver::{BetaSchedule, RunConfig, StageConfig};
use crate::error::{Error, Result};

fn err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => err(format!("{key}: expected true/false, found '{v}'")),
    }
}

fn parse_count(key: &str, v: &str) -> Result<u64> {
    // accept 1e5-style literals for sample counts
    if let Ok(n) = v.parse::<u64>() {
        return Ok(n);
    }
    let f: f64 = parse_num(key, v)?;
    if f >= 0.0 && f.fract() == 0.0 && f < 1.8e19 {
        Ok(f as u64)
    } else {
        err(format!("{key}: '{v}' is not a non-negative integer"))
    }
}

fn set_run(cfg: &mut RunConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "fcidump" => cfg.fcidump_path = PathBuf::from(v),
        "seed_kind" => cfg.seed_kind = v.parse()?,
        "n_gs_samples" => cfg.n_gs_samples = parse_count(key, v)?,
        "n_network_samples" => cfg.n_network_samples = parse_count(key, v)?,
        "n_unique_cap" => {
            cfg.n_unique_cap = if v == "none" { None } else { Some(parse_count(key, v)? as usize) }
        }
        "beta_schedule" => {
            cfg.beta_schedule = if v == "auto" {
                BetaSchedule::Auto
            } else {
                BetaSchedule::Fixed(
                    v.split(',').map(|x| parse_num(key, x.trim())).collect::<Result<Vec<f64>>>()?,
                )
            }
        }
        "beta_iterations" => cfg.beta_iterations = parse_num(key, v)?,
        "beta0" => cfg.beta0 = parse_num(key, v)?,
        "max_iterations" => cfg.max_iterations = parse_num(key, v)?,
        "epsilon_ha" => cfg.epsilon_ha = parse_num(key, v)?,
        "patience" => cfg.patience = parse_num(key, v)?,
        "rng_seed" => cfg.rng_seed = parse_num(key, v)?,
        "warm_start" => cfg.warm_start = parse_bool(key, v)?,
        "force_cisd" => cfg.force_cisd = parse_bool(key, v)?,
        "learning_rate" => cfg.learning_rate = parse_num(key, v)?,
        "epochs" => cfg.epochs = parse_num(key, v)?,
        "minibatch_size" => cfg.minibatch_size = parse_num(key, v)?,
        "activation" => cfg.activation = v.parse()?,
        "init_scale" => cfg.init_scale = parse_num(key, v)?,
        "reference_guard" => cfg.reference_guard = parse_count(key, v)? as u128,
        "output_dir" => cfg.output_dir = if v == "none" { None } else { Some(PathBuf::from(v)) },
        "loss_trace" => cfg.write_loss_trace = parse_bool(key, v)?,
        _ => return err(format!("unknown key '{key}' in [run]")),
    }
    Ok(())
}

fn set_stage(s: &mut StageConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "n_layers" => s.n_layers = parse_num(key, v)?,
        "features_per_bit" => s.features_per_bit = parse_num(key, v)?,
        "dropout" => s.dropout_rate = parse_num(key, v)?,
        "n_train" => s.n_train = parse_count(key, v)?,
        _ => return err(format!("unknown stage key '{key}'")),
    }
    Ok(())
}

fn stage_index(section: &str) -> Option<Result<usize>> {
    section.strip_prefix("stage.").map(|n| parse_num("stage", n))
}

/// Parse configuration text. Relative `fcidump` and `output_dir` paths are
/// resolved against `base_dir` when given.
pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut section = String::from("run");
    let mut stages: BTreeMap<usize, StageConfig> = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            match stage_index(&section) {
                Some(k) => {
                    stages.entry(k?).or_insert_with(StageConfig::small);
                }
                None if section == "run" => {}
                None => return err(format!("line {}: unknown section [{section}]", n + 1)),
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let res = match stage_index(&section) {
            Some(k) => set_stage(stages.get_mut(&k?).expect("section registered"), key, value),
            None => set_run(&mut cfg, key, value),
        };
        res.map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
    }
    if !stages.is_empty() {
        if stages.keys().copied().ne(0..stages.len()) {
            return err("stage sections must be numbered 0..K without gaps");
        }
        cfg.stages = stages.into_values().collect();
    }
    if let Some(base) = base_dir {
        if cfg.fcidump_path.is_relative() && !cfg.fcidump_path.as_os_str().is_empty() {
            cfg.fcidump_path = base.join(&cfg.fcidump_path);
        }
    }
    Ok(cfg)
}

pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path.parent())
}

/// Apply one `key=value` override; `stage.N.key` addresses stage `N`.
pub fn apply_override(cfg: &mut RunConfig, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let (key, value) = (key.trim(), value.trim());
    if let Some(rest) = key.strip_prefix("stage.") {
        let (k, field) =
            rest.split_once('.').ok_or_else(|| Error::Config(format!("override key '{key}' lacks a field")))?;
        let k: usize = parse_num("stage", k)?;
        if k == cfg.stages.len() {
            cfg.stages.push(StageConfig::small());
        }
        let stage = cfg
            .stages
            .get_mut(k)
            .ok_or_else(|| Error::Config(format!("stage {k} does not exist")))?;
        return set_stage(stage, field, value);
    }
    set_run(cfg, key, value)
}

/// Serialize every field; parsing the result reproduces `cfg`.
pub fn to_text(cfg: &RunConfig) -> String {
    let beta = match &cfg.beta_schedule {
        BetaSchedule::Auto => "auto".to_string(),
        BetaSchedule::Fixed(v) => v.iter().map(|b| format!("{b:?}")).collect::<Vec<_>>().join(","),
    };
    let mut s = String::from("[run]\n");
    let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
    kv("fcidump", cfg.fcidump_path.display().to_string());
    kv("seed_kind", cfg.seed_kind.to_string());
    kv("n_gs_samples", cfg.n_gs_samples.to_string());
    kv("n_network_samples", cfg.n_network_samples.to_string());
    kv("n_unique_cap", cfg.n_unique_cap.map_or("none".into(), |c| c.to_string()));
    kv("beta_schedule", beta);
    kv("beta_iterations", cfg.beta_iterations.to_string());
    kv("beta0", format!("{:?}", cfg.beta0));
    kv("max_iterations", cfg.max_iterations.to_string());
    kv("epsilon_ha", format!("{:?}", cfg.epsilon_ha));
    kv("patience", cfg.patience.to_string());
    kv("rng_seed", cfg.rng_seed.to_string());
    kv("warm_start", cfg.warm_start.to_string());
    kv("force_cisd", cfg.force_cisd.to_string());
    kv("learning_rate", format!("{:?}", cfg.learning_rate));
    kv("epochs", cfg.epochs.to_string());
    kv("minibatch_size", cfg.minibatch_size.to_string());
    kv("activation", cfg.activation.to_string());
    kv("init_scale", format!("{:?}", cfg.init_scale));
    kv("reference_guard", cfg.reference_guard.to_string());
    kv("output_dir", cfg.output_dir.as_ref().map_or("none".into(), |p| p.display().to_string()));
    kv("loss_trace", cfg.write_loss_trace.to_string());
    for (k, st) in cfg.stages.iter().enumerate() {
        s.push_str(&format!(
            "\n[stage.{k}]\nn_layers = {}\nfeatures_per_bit = {}\ndropout = {:?}\nn_train = {}\n",
            st.n_layers, st.features_per_bit, st.dropout_rate, st.n_train
        ));
    }
    s
}
