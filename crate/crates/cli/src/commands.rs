use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use aps_core::simulator::{run_experiment_with_workers, ExperimentConfig};
use aps_core::survey::{compare_allocations, ingest_reader, CompareOptions};
use aps_service::{BatchRecord, ServiceConfig, Session, SessionDefinition, TargetOverrides};
use serde::Deserialize;

/// An error with the process exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

/// Unreadable input or unwritable output.
const EXIT_IO: u8 = 2;
/// Input that was read but rejected.
const EXIT_INVALID: u8 = 1;

impl Failure {
    fn io(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_IO,
            error: error.into(),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(error: E) -> Self {
        Self {
            code: EXIT_INVALID,
            error: error.into(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(anyhow!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(anyhow!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::io(anyhow!("cannot write {}: {e}", path.display())))
}

fn parse_thetas(raw: &[String]) -> anyhow::Result<BTreeMap<String, f64>> {
    raw.iter()
        .map(|s| {
            let (name, value) = s
                .split_once('=')
                .ok_or_else(|| anyhow!("--theta expects NAME=VALUE, got `{s}`"))?;
            let value: f64 = value
                .trim()
                .parse()
                .with_context(|| format!("--theta {name}: not a number"))?;
            Ok((name.trim().to_string(), value))
        })
        .collect()
}

pub fn simulate(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    replications: Option<usize>,
    workers: Option<usize>,
) -> Outcome {
    let text = read(config)?;
    let mut cfg: ExperimentConfig =
        toml::from_str(&text).with_context(|| format!("invalid experiment config {}", config.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(r) = replications {
        cfg.replications = r;
    }
    cfg.validate().context("invalid experiment config")?;
    let workers = workers
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1);
    tracing::info!(replications = cfg.replications, workers, "running experiment");
    let report = run_experiment_with_workers(&cfg, workers)?;

    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write(&out.join("report.csv"), &csv)?;
    write(&out.join("report.json"), &serde_json::to_vec_pretty(&report)?)?;

    let n = cfg.budget;
    for s in &report.strategies {
        let last = s.last();
        println!("{:<20} regret at N={n}: {:.4e} (se {:.1e})", s.strategy, last.regret, last.regret_se);
    }
    for p in &report.paired {
        println!("{} - {}: {:.3e} (z = {:.2})", p.first, p.second, p.difference, p.z_score());
    }
    Ok(())
}

/// Options file for `analyze-survey`; command-line flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurveyConfig {
    batch_size: Option<u64>,
    replications: Option<usize>,
    seed: Option<u64>,
    eta: Option<f64>,
    budget: Option<u64>,
    overall_target: Option<f64>,
    #[serde(default)]
    theta: BTreeMap<String, f64>,
}

pub struct SurveyFlags {
    pub seed: Option<u64>,
    pub batch_size: Option<u64>,
    pub replications: Option<usize>,
    pub thetas: Vec<String>,
    pub overall_target: Option<f64>,
}

pub fn analyze_survey(input: &Path, config: Option<&Path>, out: &Path, flags: SurveyFlags) -> Outcome {
    let file_cfg: SurveyConfig = match config {
        Some(path) => {
            toml::from_str(&read(path)?).with_context(|| format!("invalid survey options {}", path.display()))?
        }
        None => SurveyConfig::default(),
    };
    let text = read(input)?;
    let mut ds = ingest_reader(text.as_bytes()).with_context(|| format!("invalid survey file {}", input.display()))?;

    let mut thetas = file_cfg.theta;
    thetas.extend(parse_thetas(&flags.thetas)?);
    for (name, value) in thetas {
        let cat = ds
            .categories
            .iter_mut()
            .find(|c| c.name == name)
            .ok_or_else(|| anyhow!("theta given for unknown category `{name}`"))?;
        cat.theta = Some(value);
    }
    if let Some(t) = flags.overall_target.or(file_cfg.overall_target) {
        ds.overall_target = Some(t);
    }
    if let Some(b) = file_cfg.budget {
        ds.budget = Some(b);
    }
    let defaults = CompareOptions::default();
    let options = CompareOptions {
        batch_size: flags.batch_size.or(file_cfg.batch_size).unwrap_or(defaults.batch_size),
        replications: flags.replications.or(file_cfg.replications).unwrap_or(defaults.replications),
        seed: flags.seed.or(file_cfg.seed).unwrap_or(defaults.seed),
        eta: file_cfg.eta,
    };
    let table = compare_allocations(&ds, &options)?;

    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    write(&out.join("comparison.csv"), &csv)?;
    write(&out.join("comparison.json"), &serde_json::to_vec_pretty(&table)?)?;

    let mut stdout = std::io::stdout().lock();
    stdout.write_all(&csv)?;
    writeln!(
        stdout,
        "targets {} (lambda = {:.4}); max relative gap {:.4}",
        if table.feasible { "feasible" } else { "infeasible" },
        table.constrained_lambda,
        table.max_relative_gap()
    )?;
    Ok(())
}

/// Anything carrying a session definition and its batches; the service's
/// session view qualifies.
#[derive(Debug, Deserialize)]
struct Snapshot {
    #[serde(default)]
    id: Option<String>,
    definition: SessionDefinition,
    #[serde(default)]
    batches: Vec<BatchRecord>,
    #[serde(default)]
    state_hash: Option<String>,
}

pub fn plan_batch(
    snapshot: &Path,
    batch_size: u64,
    thetas: &[String],
    overall_target: Option<f64>,
    out: Option<&Path>,
) -> Outcome {
    let snap: Snapshot = serde_json::from_str(&read(snapshot)?)
        .with_context(|| format!("invalid snapshot {}", snapshot.display()))?;
    let names: Vec<String> = snap.definition.categories.iter().map(|c| c.name.clone()).collect();
    let mut session = Session::new(snap.id.unwrap_or_default(), snap.definition)?;
    for batch in &snap.batches {
        session.apply(batch)?;
    }
    if let Some(expected) = &snap.state_hash {
        let actual = session.state_hash();
        if &actual != expected {
            return Err(anyhow!("snapshot state hash {expected} does not match its batches ({actual})").into());
        }
    }
    let overrides_by_name = parse_thetas(thetas)?;
    for name in overrides_by_name.keys() {
        if !names.contains(name) {
            return Err(anyhow!("theta given for unknown category `{name}`").into());
        }
    }
    let overrides = TargetOverrides {
        targets: (!overrides_by_name.is_empty()).then(|| {
            names
                .iter()
                .zip(&session.definition().categories)
                .map(|(n, c)| overrides_by_name.get(n).copied().or(c.theta))
                .collect()
        }),
        overall_target,
    };
    let rec = session.recommend(batch_size, &overrides)?;
    let mut json = serde_json::to_vec_pretty(&rec)?;
    json.push(b'\n');
    match out {
        Some(path) => write(path, &json),
        None => std::io::stdout().write_all(&json).map_err(Failure::io),
    }
}

pub fn serve(addr: SocketAddr, journal: Option<PathBuf>, token: Option<String>) -> Outcome {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime
        .block_on(aps_service::serve(addr, ServiceConfig { journal, token }))
        .map_err(Failure::io)
}
