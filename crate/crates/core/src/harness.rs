//! Experiment execution and reporting: seeded runs, on-disk artifacts, and
//! cross-execution comparison tables.
//!
//! Every file is written to a temp path and renamed into place, so a crash
//! never leaves a partially written artifact. With timing capture disabled
//! (the default) a rerun of the same config and seeds reproduces every
//! output byte for byte.

use crate::agent::hyperparam_values;
use crate::config::{ExperimentConfig, ResolvedConfig};
use crate::error::{Error, Result};
use crate::gp::ObservationDataset;
use crate::meta::{optimize, run_comparison, ComparisonRow, MetaEpisodeRecord, OptimizerKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const OUT_ENV_VAR: &str = "METATUNE_OUT";

/// Output root resolution: the `METATUNE_OUT` environment variable
/// overrides everything, then an explicit `--out`, then `./results`.
pub fn output_root(cli_out: Option<&Path>) -> PathBuf {
    if let Ok(dir) = std::env::var(OUT_ENV_VAR) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    cli_out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("results"))
}

fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Short content hash of the canonical config serialization.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    let mut hex = String::with_capacity(16);
    for byte in &digest[..8] {
        write!(hex, "{byte:02x}").unwrap();
    }
    hex
}

/// One completed execution (one optimizer, one seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub config_hash: String,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub best_theta: BTreeMap<String, f64>,
    pub best_y: f64,
    pub total_train_steps: u64,
    pub total_rollout_steps: u64,
    pub total_wallclock_ms: u64,
    pub records: Vec<MetaEpisodeRecord>,
}

fn fmt_f64(v: f64) -> String {
    // Shortest round-trip representation; stable across runs.
    format!("{v}")
}

fn records_csv(
    config: &ResolvedConfig,
    records: &[MetaEpisodeRecord],
    hp_names: &[&str],
) -> Result<String> {
    let mut out = String::from("meta_episode");
    for name in hp_names {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",y,best_so_far,is_new_max,train_steps,rollout_steps,wallclock_ms\n");
    for r in records {
        let values =
            hyperparam_values(&config.settings.space, &r.theta, &config.settings.pinned)?;
        write!(out, "{}", r.index).unwrap();
        for name in hp_names {
            let v = values
                .get(*name)
                .ok_or_else(|| Error::Config(format!("missing hyperparameter \"{name}\"")))?;
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        writeln!(
            out,
            ",{},{},{},{},{},{}",
            fmt_f64(r.y),
            fmt_f64(r.best_so_far),
            r.is_new_max,
            r.train_steps,
            r.rollout_steps,
            r.wallclock_ms
        )
        .unwrap();
    }
    Ok(out)
}

#[derive(Serialize)]
struct Summary<'a> {
    name: &'a str,
    optimizer: &'a str,
    seed: u64,
    config_hash: &'a str,
    best_theta: &'a BTreeMap<String, f64>,
    best_y: f64,
    meta_episodes: usize,
    total_train_steps: u64,
    total_rollout_steps: u64,
    total_wallclock_ms: u64,
    wallclock_ms: Vec<u64>,
    diverged: Vec<bool>,
}

#[derive(Serialize)]
struct DatasetFile<'a> {
    points: &'a [Vec<f64>],
    outputs: &'a [f64],
}

#[derive(Serialize, Deserialize)]
struct DemoLine {
    episode: usize,
    step: usize,
    state: usize,
    action: usize,
    reward: f64,
    next_state: usize,
    done: bool,
}

fn demos_jsonl(psi: &crate::bc::DemonstrationSet) -> String {
    let mut out = String::new();
    for (episode, trajectory) in psi.trajectories.iter().enumerate() {
        for (step, t) in trajectory.transitions.iter().enumerate() {
            let line = DemoLine {
                episode,
                step,
                state: t.state,
                action: t.action,
                reward: t.reward,
                next_state: t.next_state,
                done: t.done,
            };
            out.push_str(&serde_json::to_string(&line).expect("demo line serializes"));
            out.push('\n');
        }
    }
    out
}

fn dataset_json(dataset: &ObservationDataset) -> String {
    serde_json::to_string_pretty(&DatasetFile {
        points: dataset.points(),
        outputs: dataset.outputs(),
    })
    .expect("dataset serializes")
}

/// Runs every configured optimizer for every seed (plus the offset) and
/// writes `<root>/<name>/<optimizer>/seed<k>/{records.csv, summary.json,
/// dataset.json, demos.jsonl}`.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_root: &Path,
    seed_offset: u64,
) -> Result<Vec<ExecutionRecord>> {
    let resolved = config.validate()?;
    let hash = config_hash(config);
    let hp_names = resolved.settings.agent_kind.hyperparam_names();
    let experiment_dir = out_root.join(&resolved.name);
    // Fail on an unwritable output root before any computation.
    std::fs::create_dir_all(&experiment_dir)?;
    let mut executions = Vec::new();
    for &optimizer in &resolved.optimizers {
        for &seed in &resolved.seeds {
            let seed = seed + seed_offset;
            let mut env = resolved.env.build()?;
            let outcome = optimize(optimizer, &resolved.settings, env.as_mut(), seed)?;
            let dir = experiment_dir.join(optimizer.dir_name()).join(format!("seed{seed}"));
            std::fs::create_dir_all(&dir)?;
            let best_values = hyperparam_values(
                &resolved.settings.space,
                &outcome.best_theta,
                &resolved.settings.pinned,
            )?;
            let total_train_steps = outcome.records.iter().map(|r| r.train_steps).sum();
            let total_rollout_steps = outcome.records.iter().map(|r| r.rollout_steps).sum();
            let total_wallclock_ms = outcome.records.iter().map(|r| r.wallclock_ms).sum();
            atomic_write(
                &dir.join("records.csv"),
                &records_csv(&resolved, &outcome.records, hp_names)?,
            )?;
            let summary = Summary {
                name: &resolved.name,
                optimizer: optimizer.dir_name(),
                seed,
                config_hash: &hash,
                best_theta: &best_values,
                best_y: outcome.best_y,
                meta_episodes: outcome.records.len(),
                total_train_steps,
                total_rollout_steps,
                total_wallclock_ms,
                wallclock_ms: outcome.records.iter().map(|r| r.wallclock_ms).collect(),
                diverged: outcome.records.iter().map(|r| r.diverged).collect(),
            };
            atomic_write(
                &dir.join("summary.json"),
                &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"),
            )?;
            atomic_write(&dir.join("dataset.json"), &(dataset_json(&outcome.dataset) + "\n"))?;
            atomic_write(&dir.join("demos.jsonl"), &demos_jsonl(&outcome.psi))?;
            executions.push(ExecutionRecord {
                config_hash: hash.clone(),
                optimizer,
                seed,
                best_theta: best_values,
                best_y: outcome.best_y,
                total_train_steps,
                total_rollout_steps,
                total_wallclock_ms,
                records: outcome.records,
            });
        }
    }
    Ok(executions)
}

/// The slice of records.csv the comparison needs.
fn parse_records_csv(text: &str) -> Result<Vec<MetaEpisodeRecord>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty records.csv".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    let find = |name: &str| {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Parse(format!("records.csv missing column {name}")))
    };
    let idx_episode = find("meta_episode")?;
    let idx_y = find("y")?;
    let idx_best = find("best_so_far")?;
    let idx_new_max = find("is_new_max")?;
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::Parse(format!(
                "records.csv line {}: {} fields, expected {}",
                lineno + 2,
                fields.len(),
                columns.len()
            )));
        }
        let parse_f = |i: usize| {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("records.csv line {}: {e}", lineno + 2)))
        };
        records.push(MetaEpisodeRecord {
            index: fields[idx_episode]
                .parse()
                .map_err(|e| Error::Parse(format!("records.csv line {}: {e}", lineno + 2)))?,
            theta: crate::space::ThetaVector(Vec::new()),
            y: parse_f(idx_y)?,
            best_so_far: parse_f(idx_best)?,
            is_new_max: fields[idx_new_max] == "true",
            diverged: false,
            train_steps: 0,
            rollout_steps: 0,
            wallclock_ms: 0,
            seed: 0,
        });
    }
    Ok(records)
}

#[derive(Debug)]
pub struct ReportOutcome {
    pub rows: Vec<ComparisonRow>,
    /// Partial or unreadable executions, listed and excluded.
    pub warnings: Vec<String>,
}

fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("optimizer,meta_episode,mean_best,ci_low,ci_high,mean_reward\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.optimizer,
            r.meta_episode,
            fmt_f64(r.mean_best),
            fmt_f64(r.ci_low),
            fmt_f64(r.ci_high),
            fmt_f64(r.mean_reward)
        )
        .unwrap();
    }
    out
}

fn mean_and_ci(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, 1.96 * var.sqrt() / k.sqrt())
}

fn curve_csv(header: &str, groups: &[(String, Vec<Vec<f64>>)]) -> String {
    let mut out = format!("optimizer,meta_episode,{header},ci_low,ci_high\n");
    for (name, executions) in groups {
        let n = executions.first().map_or(0, Vec::len);
        for idx in 0..n {
            let values: Vec<f64> = executions.iter().map(|e| e[idx]).collect();
            let (mean, half) = mean_and_ci(&values);
            writeln!(
                out,
                "{name},{idx},{},{},{}",
                fmt_f64(mean),
                fmt_f64(mean - half),
                fmt_f64(mean + half)
            )
            .unwrap();
        }
    }
    out
}

/// Aggregates completed executions under the given experiment directories
/// into plot-ready comparison tables: `comparison.csv` (long format),
/// `max_reached.csv`, and `cumulative_reward.csv`, written next to the data
/// in `<dir>/report/`.
pub fn report(in_dirs: &[PathBuf]) -> Result<Vec<ReportOutcome>> {
    if in_dirs.is_empty() {
        return Err(Error::Config("report needs at least one input directory".into()));
    }
    let mut outcomes = Vec::new();
    for dir in in_dirs {
        let mut warnings = Vec::new();
        let mut groups: Vec<(String, Vec<Vec<MetaEpisodeRecord>>)> = Vec::new();
        let mut optimizer_dirs: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n != "report"))
            .collect();
        optimizer_dirs.sort();
        for opt_dir in optimizer_dirs {
            let optimizer =
                opt_dir.file_name().unwrap().to_string_lossy().into_owned();
            let mut seed_dirs: Vec<PathBuf> = std::fs::read_dir(&opt_dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            seed_dirs.sort();
            let mut executions = Vec::new();
            let mut expected_len: Option<usize> = None;
            for seed_dir in seed_dirs {
                let csv_path = seed_dir.join("records.csv");
                let records = match std::fs::read_to_string(&csv_path)
                    .map_err(Error::from)
                    .and_then(|text| parse_records_csv(&text))
                {
                    Ok(r) if !r.is_empty() => r,
                    Ok(_) => {
                        warnings.push(format!("{}: no records", csv_path.display()));
                        continue;
                    }
                    Err(e) => {
                        warnings.push(format!("{}: {e}", csv_path.display()));
                        continue;
                    }
                };
                match expected_len {
                    None => expected_len = Some(records.len()),
                    Some(n) if n != records.len() => {
                        warnings.push(format!(
                            "{}: partial execution ({} of {n} meta-episodes)",
                            csv_path.display(),
                            records.len()
                        ));
                        continue;
                    }
                    _ => {}
                }
                executions.push(records);
            }
            if !executions.is_empty() {
                groups.push((optimizer, executions));
            }
        }
        if groups.is_empty() {
            return Err(Error::Aggregation(format!(
                "{}: no completed executions found",
                dir.display()
            )));
        }
        let rows = run_comparison(&groups)?;
        let report_dir = dir.join("report");
        std::fs::create_dir_all(&report_dir)?;
        atomic_write(&report_dir.join("comparison.csv"), &comparison_csv(&rows))?;
        let best_curves: Vec<(String, Vec<Vec<f64>>)> = groups
            .iter()
            .map(|(name, execs)| {
                (
                    name.clone(),
                    execs
                        .iter()
                        .map(|e| e.iter().map(|r| r.best_so_far).collect())
                        .collect(),
                )
            })
            .collect();
        atomic_write(
            &report_dir.join("max_reached.csv"),
            &curve_csv("mean_best", &best_curves),
        )?;
        let cum_curves: Vec<(String, Vec<Vec<f64>>)> = groups
            .iter()
            .map(|(name, execs)| {
                (
                    name.clone(),
                    execs
                        .iter()
                        .map(|e| {
                            let mut acc = 0.0;
                            e.iter()
                                .map(|r| {
                                    acc += r.y;
                                    acc
                                })
                                .collect()
                        })
                        .collect(),
                )
            })
            .collect();
        atomic_write(
            &report_dir.join("cumulative_reward.csv"),
            &curve_csv("mean_cumulative_reward", &cum_curves),
        )?;
        outcomes.push(ReportOutcome { rows, warnings });
    }
    Ok(outcomes)
}
