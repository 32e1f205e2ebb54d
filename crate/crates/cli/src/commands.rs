//! The four subcommands.
//!
//! Layout of a results directory written by [`cmd_run`]:
//!
//! ```text
//! results.csv            one row per scenario
//! summary.json           means over scenarios, failures
//! runs/<name>/rounds.json
//! runs/<name>/membership.json   (only after a split)
//! runs/<name>/eval.json
//! runs/<name>/nodes.csv
//! ```
//!
//! `<name>` is the scenario file name without extension. [`cmd_report`]
//! adds a `report/` directory next to these.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use asncfl_core::acoustics::{dominant_sources, generate_scenario, Scenario};
use asncfl_core::eval::{score_fusion, EvalResult, FusionMode, FusionScore};
use asncfl_core::nn::{read_checkpoint, write_checkpoint};
use asncfl_core::{Autoencoder, Error};

use crate::config::RunConfig;
use crate::pipeline::{pretraining_corpus, run_scenario, scenario_params, ScenarioResult};
use crate::CliError;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "pretrain_loss.csv";
pub const SCENARIO_DIR: &str = "scenarios";

fn failed(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Failed(format!("{context}: {e}"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| failed(&dir.display().to_string(), e))?;
    }
    fs::write(path, contents).map_err(|e| failed(&path.display().to_string(), e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map_err(|e| failed("json", e))
}

/// Trains the autoencoder on a synthetic corpus, then freezes everything
/// but the bottleneck. Writes the checkpoint and a loss trace; returns the
/// checkpoint path.
pub fn cmd_pretrain(c: &RunConfig) -> Result<PathBuf, CliError> {
    let corpus = pretraining_corpus(c).map_err(|e| failed("corpus", e))?;
    let mut model = Autoencoder::new(c.seed);
    let trace = model
        .pretrain_with(&corpus, c.pretrain_epochs, c.pretrain_lr, |e, loss| {
            eprintln!("epoch {e}: loss {loss:.6}");
        })
        .map_err(|e| match e {
            Error::Diverged { epoch } => CliError::Failed(format!("pretraining diverged at epoch {epoch}")),
            e => failed("pretraining", e),
        })?;
    model.freeze_all_but_bottleneck();

    let mut bytes = Vec::new();
    write_checkpoint(&model, &mut bytes).map_err(|e| failed("checkpoint", e))?;
    let path = c.out.join(CHECKPOINT_FILE);
    write(&path, bytes)?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in trace.iter().enumerate() {
        csv.push_str(&format!("{e},{l}\n"));
    }
    write(&c.out.join(LOSS_FILE), csv)?;
    Ok(path)
}

/// Writes `n` scenario files with seeds `seed + index`. Scenarios whose
/// placement constraints cannot be met are skipped with a warning; fails
/// only if none succeed.
pub fn cmd_simulate(c: &RunConfig, n: usize) -> Result<Vec<PathBuf>, CliError> {
    if n == 0 {
        return Err(CliError::Invalid("need at least one scenario".into()));
    }
    let params = scenario_params(c);
    let mut written = Vec::new();
    for i in 0..n {
        let seed = c.seed + i as u64;
        match generate_scenario(seed, &params) {
            Ok(s) => {
                let path = c.out.join(SCENARIO_DIR).join(format!("scenario_{i:03}.json"));
                write(&path, s.to_json().map_err(|e| failed("scenario", e))?)?;
                written.push(path);
            }
            Err(e @ Error::Unsatisfiable { .. }) => eprintln!("warning: scenario seed {seed} skipped: {e}"),
            Err(e) => return Err(failed("scenario", e)),
        }
    }
    if written.is_empty() {
        return Err(CliError::Failed("no scenario could be generated".into()));
    }
    Ok(written)
}

/// Scenario files of a directory (or a single file), sorted by name.
pub fn scenario_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Invalid(format!("no scenario files in {}", path.display())));
    }
    Ok(files)
}

pub fn load_checkpoint(path: &Path) -> Result<Autoencoder, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let mut model = read_checkpoint(&bytes[..]).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    model.freeze_all_but_bottleneck();
    Ok(model)
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    Scenario::from_json(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRow {
    /// `plain` or `mv v=<v>`.
    pub setting: String,
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub scenario: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub scenarios: Vec<String>,
    pub failed: Vec<Failure>,
    /// Fraction of scenarios in which CFL split.
    pub split_rate: f64,
    pub assignment_accuracy: f64,
    /// Mean of `d_tilde[x][z]` over scenarios.
    pub d_tilde: [[f64; 2]; 2],
    pub fusion: Vec<FusionRow>,
}

fn setting_name(mode: FusionMode, v: Option<f64>) -> String {
    match (mode, v) {
        (FusionMode::Plain, _) => "plain".into(),
        (FusionMode::MvWeighted, Some(v)) => format!("mv v={v}"),
        (FusionMode::MvWeighted, None) => "mv".into(),
    }
}

/// Means over the scenarios that ran.
pub fn summarize(names: &[String], evals: &[&EvalResult], failures: Vec<Failure>) -> Result<Summary, CliError> {
    // Means of nothing are reported as zero.
    let n = evals.len().max(1) as f64;
    let mut d = [[0.0; 2]; 2];
    for e in evals {
        for x in 0..2 {
            for z in 0..2 {
                d[x][z] += e.d_tilde[x][z] / n;
            }
        }
    }
    let settings = evals.first().map(|e| e.fusion.len()).unwrap_or(0);
    let fusion = (0..settings)
        .map(|k| {
            let first = &evals[0].fusion[k];
            let per: Vec<_> = evals.iter().map(|e| e.fusion[k].clusters.clone()).collect();
            let FusionScore { accuracy, f1 } = score_fusion(&per).map_err(|e| failed("fusion", e))?;
            Ok(FusionRow {
                setting: setting_name(first.mode, first.v),
                accuracy,
                f1,
            })
        })
        .collect::<Result<_, CliError>>()?;
    Ok(Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        scenarios: names.to_vec(),
        failed: failures,
        split_rate: evals.iter().filter(|e| e.cluster_count > 1).count() as f64 / n,
        assignment_accuracy: evals.iter().map(|e| e.assignment_accuracy).sum::<f64>() / n,
        d_tilde: d,
        fusion,
    })
}

fn results_csv(rows: &[(String, &EvalResult)]) -> String {
    let mut s = String::from("scenario,seed,clusters,d11,d12,d21,d22,assignment_accuracy");
    if let Some((_, e)) = rows.first() {
        for f in &e.fusion {
            s.push_str(&format!(",{}", setting_name(f.mode, f.v).replace(' ', "_")));
        }
    }
    s.push('\n');
    for (name, e) in rows {
        let d = e.d_tilde;
        s.push_str(&format!(
            "{name},{},{},{},{},{},{},{}",
            e.seed, e.cluster_count, d[0][0], d[0][1], d[1][0], d[1][1], e.assignment_accuracy
        ));
        for f in &e.fusion {
            let right = f.clusters.iter().filter(|(p, t)| p == t).count();
            s.push_str(&format!(",{}", right as f64 / f.clusters.len() as f64));
        }
        s.push('\n');
    }
    s
}

fn nodes_csv(scenario: &Scenario, r: &ScenarioResult) -> String {
    let truth = dominant_sources(scenario);
    let mut s = String::from("node,x,y,z,dominant,cluster,mu\n");
    for (i, p) in scenario.nodes.iter().enumerate() {
        let (cluster, mu) = match &r.membership {
            Some(m) => m
                .nodes
                .iter()
                .find(|n| n.node == i)
                .map(|n| (n.cluster, n.mu))
                .unwrap_or((0, 0.0)),
            None => (0, 1.0),
        };
        s.push_str(&format!("{i},{},{},{},{},{cluster},{mu}\n", p[0], p[1], p[2], truth[i]));
    }
    s
}

/// Runs every scenario, then writes all outputs in scenario-name order.
/// With `dry_run`, only checks the inputs. Returns the summary.
pub fn cmd_run(c: &RunConfig, checkpoint: &Path, scenarios: &Path, workers: usize, dry_run: bool) -> Result<Summary, CliError> {
    let model = load_checkpoint(checkpoint)?;
    let files = scenario_files(scenarios)?;
    let loaded: Vec<(String, Scenario)> = files
        .iter()
        .map(|f| Ok((stem(f), load_scenario(f)?)))
        .collect::<Result<_, CliError>>()?;
    if dry_run {
        return summarize(&[], &[], Vec::new());
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| failed("thread pool", e))?;
    let results: Vec<Result<ScenarioResult, String>> = pool.install(|| {
        loaded
            .par_iter()
            .map(|(_, s)| run_scenario(c, &model, s).map_err(|e| e.to_string()))
            .collect()
    });

    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for ((name, scenario), r) in loaded.iter().zip(&results) {
        match r {
            Ok(r) => {
                let dir = c.out.join("runs").join(name);
                write(&dir.join("rounds.json"), to_json(&r.log)?)?;
                if let Some(m) = &r.membership {
                    write(&dir.join("membership.json"), to_json(m)?)?;
                }
                write(&dir.join("eval.json"), to_json(&r.eval)?)?;
                write(&dir.join("nodes.csv"), nodes_csv(scenario, r))?;
                ok.push((name.clone(), &r.eval));
            }
            Err(e) => {
                eprintln!("warning: {name} failed: {e}");
                failures.push(Failure {
                    scenario: name.clone(),
                    error: e.clone(),
                });
            }
        }
    }
    if ok.is_empty() {
        let summary = summarize(&[], &[], failures)?;
        write(&c.out.join("summary.json"), to_json(&summary)?)?;
        return Err(CliError::Failed("every scenario failed".into()));
    }
    let names: Vec<String> = ok.iter().map(|(n, _)| n.clone()).collect();
    let evals: Vec<&EvalResult> = ok.iter().map(|(_, e)| *e).collect();
    let summary = summarize(&names, &evals, failures)?;
    write(&c.out.join("results.csv"), results_csv(&ok))?;
    write(&c.out.join("summary.json"), to_json(&summary)?)?;
    Ok(summary)
}

/// Text tables for a summary: the 2x2 cluster-to-source distances and the
/// fusion grid.
pub fn render_tables(s: &Summary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{} scenarios, {} failed, split in {:.0}%, assignment accuracy {:.3}\n\n",
        s.scenarios.len(),
        s.failed.len(),
        100.0 * s.split_rate,
        s.assignment_accuracy
    ));
    out.push_str("normalized cluster-to-source distance\n");
    out.push_str("          s1      s2\n");
    for (x, row) in s.d_tilde.iter().enumerate() {
        out.push_str(&format!("c{}    {:6.3}  {:6.3}\n", x + 1, row[0], row[1]));
    }
    out.push_str("\ncluster label fusion\n");
    out.push_str(&format!("{:<10}", ""));
    for f in &s.fusion {
        out.push_str(&format!("{:>10}", f.setting.replace("mv ", "")));
    }
    out.push('\n');
    for (label, pick) in [("accuracy", 0), ("F1", 1)] {
        out.push_str(&format!("{label:<10}"));
        for f in &s.fusion {
            let v = if pick == 0 { f.accuracy } else { f.f1 };
            out.push_str(&format!("{:>9.1}%", 100.0 * v));
        }
        out.push('\n');
    }
    out
}

/// Prints the tables of a results directory and writes `report/` with
/// `table2.csv`, `table4.csv` and `mu_nodes.csv`. Returns the printed text.
pub fn cmd_report(dir: &Path) -> Result<String, CliError> {
    let summary_path = dir.join("summary.json");
    let text = fs::read_to_string(&summary_path)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", summary_path.display())))?;
    let summary: Summary =
        serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", summary_path.display())))?;
    if summary.scenarios.is_empty() {
        return Err(CliError::Failed(format!("{} holds no results", dir.display())));
    }
    let report = dir.join("report");
    let mut t2 = String::from("cluster,s1,s2\n");
    for (x, row) in summary.d_tilde.iter().enumerate() {
        t2.push_str(&format!("c{},{},{}\n", x + 1, row[0], row[1]));
    }
    write(&report.join("table2.csv"), t2)?;
    let mut t4 = String::from("setting,accuracy,f1\n");
    for f in &summary.fusion {
        t4.push_str(&format!("{},{},{}\n", f.setting, f.accuracy, f.f1));
    }
    write(&report.join("table4.csv"), t4)?;
    let mut mu = String::from("scenario,node,x,y,z,dominant,cluster,mu\n");
    for name in &summary.scenarios {
        let path = dir.join("runs").join(name).join("nodes.csv");
        let text = fs::read_to_string(&path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        for line in text.lines().skip(1) {
            mu.push_str(&format!("{name},{line}\n"));
        }
    }
    write(&report.join("mu_nodes.csv"), mu)?;
    Ok(render_tables(&summary))
}
