//! Run orchestration: train each seed, run the bandwidth battery on final
//! checkpoints, persist manifests/logs/reports.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::bandwidth::{build_budget, BandwidthReport, MaskStrategy, TraceStats};
use crate::comm::{BitMask, ReparamVariant};
use crate::traffic::MapSpec;
use crate::train::model::{AgentModel, Framework};
use crate::train::rollout::absorb_trace;
use crate::train::{evaluate, EvalReport, MappoTrainer, MetricRecord, QmixTrainer};
use crate::{CgibError, Result};

use super::config::{RunConfig, MCR_BATTERY};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Artifact root: $CGIBNET_RUNS or ./runs.
pub fn artifact_root() -> PathBuf {
    std::env::var_os("CGIBNET_RUNS")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub config_hash: String,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    /// Node-sampler variant in effect for this run.
    pub reparam: ReparamVariant,
    pub status: RunStatus,
    pub config: RunConfig,
    pub artifacts: Vec<String>,
}

/// Per-MCR-target constrained evaluation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstrainedEval {
    pub target_mcr: f64,
    pub strategy: String,
    pub return_mean: f64,
    pub return_std: f64,
    pub success_rate: f64,
    pub bandwidth: BandwidthReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    /// Standard evaluation (structure pruning only, no bit masking).
    pub standard: ConstrainedEval,
    pub battery: Vec<ConstrainedEval>,
    pub confusion: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub config_hash: String,
    pub seeds: Vec<SeedReport>,
    /// Seed means in battery order: [standard, mcr targets...].
    pub mean_returns: Vec<f64>,
    pub mean_scr: f64,
    pub mean_scr_per_round: Vec<f64>,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}

/// Rebuild the model skeleton a run config describes and load a checkpoint.
pub fn load_model(config: &RunConfig, ckpt: &Path) -> Result<AgentModel> {
    let spec = MapSpec::builtin(config.map);
    let mut model = AgentModel::new(
        config.framework,
        &spec,
        config.comm_mode,
        config.comm_config(),
        config.embed_dim,
        config.seeds.first().copied().unwrap_or(0),
    );
    model.load(ckpt)?;
    Ok(model)
}

/// Standard + constrained evaluation battery on one trained model.
pub fn run_battery(
    model: &AgentModel,
    spec: &MapSpec,
    eval_seed: u64,
    episodes: usize,
    strategy: MaskStrategy,
) -> Result<SeedReport> {
    let standard = evaluate(model, spec, eval_seed, episodes, None)?;
    let standard_record = constrained_record(&standard, 0.0, strategy);

    let mut battery = Vec::new();
    for &target in MCR_BATTERY.iter() {
        let record = evaluate_constrained(model, spec, eval_seed, episodes, &standard.stats, target, strategy)?;
        battery.push(record);
    }

    let confusion = standard
        .first_episode_rounds
        .get(standard.first_episode_rounds.len() / 2)
        .and_then(|rounds| rounds.last())
        .map(|round| {
            crate::bandwidth::confusion_matrix(
                round,
                &BitMask::keep_all(model.num_agents, model.comm_cfg.bits_per_message),
            )
        })
        .unwrap_or_default();

    Ok(SeedReport {
        seed: eval_seed,
        standard: standard_record,
        battery,
        confusion,
    })
}

/// Build a budget from a reference trace and evaluate under it.
pub fn evaluate_constrained(
    model: &AgentModel,
    spec: &MapSpec,
    eval_seed: u64,
    episodes: usize,
    reference: &TraceStats,
    target_mcr: f64,
    strategy: MaskStrategy,
) -> Result<ConstrainedEval> {
    if episodes == 0 {
        return Err(CgibError::usage("evaluate_constrained needs episodes >= 1"));
    }
    let budget = build_budget(reference, target_mcr, strategy)?;
    let report = evaluate(model, spec, eval_seed, episodes, Some(&budget.mask))?;
    Ok(constrained_record_with_target(&report, target_mcr, strategy))
}

fn constrained_record(report: &EvalReport, target: f64, strategy: MaskStrategy) -> ConstrainedEval {
    constrained_record_with_target(report, target, strategy)
}

fn constrained_record_with_target(report: &EvalReport, target: f64, strategy: MaskStrategy) -> ConstrainedEval {
    ConstrainedEval {
        target_mcr: target,
        strategy: strategy.to_string(),
        return_mean: report.return_mean,
        return_std: report.return_std,
        success_rate: report.success_rate,
        bandwidth: report.bandwidth.clone(),
    }
}

/// Execute a full experiment: train every seed, evaluate, persist.
pub fn run_experiment(config: &RunConfig, name: Option<&str>, root: Option<&Path>) -> Result<RunManifest> {
    config.validate()?;
    let hash = config.config_hash();
    let name = name
        .map(str::to_string)
        .unwrap_or_else(|| format!("{}-{}-{}-{}", config.framework, config.map, config.comm_mode, &hash[..8]));
    let root = root.map(Path::to_path_buf).unwrap_or_else(artifact_root);
    let dir = root.join(&name);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), config.to_toml())?;

    let mut manifest = RunManifest {
        name: name.clone(),
        config_hash: hash.clone(),
        code_version: CODE_VERSION.to_string(),
        seeds: config.seeds.clone(),
        started_unix: now_unix(),
        finished_unix: None,
        reparam: config.reparam,
        status: RunStatus::Running,
        config: config.clone(),
        artifacts: vec!["config.toml".into()],
    };
    write_manifest(&dir, &manifest)?;

    let spec = MapSpec::builtin(config.map);
    let mut seed_reports = Vec::new();
    for &seed in &config.seeds {
        let seed_dir = dir.join(format!("seed_{seed}"));
        let result: Result<(Vec<MetricRecord>, AgentModel)> = match config.framework {
            Framework::Mappo => {
                let mut tr = MappoTrainer::new(config.mappo_cfg(seed));
                tr.train(Some(&seed_dir)).map(|records| (records, tr.model))
            }
            Framework::Qmix => {
                let mut tr = QmixTrainer::new(config.qmix_cfg(seed));
                tr.train(Some(&seed_dir)).map(|records| (records, tr.model))
            }
        };
        let (_records, model) = match result {
            Ok(v) => v,
            Err(e) => {
                manifest.status = RunStatus::Failed;
                manifest.finished_unix = Some(now_unix());
                write_manifest(&dir, &manifest)?;
                return Err(e);
            }
        };
        manifest.artifacts.push(format!("seed_{seed}/metrics.jsonl"));
        manifest.artifacts.push(format!("seed_{seed}/ckpt_final"));

        let mut report = run_battery(
            &model,
            &spec,
            seed ^ 0xbeef,
            config.final_eval_episodes,
            MaskStrategy::KlRank,
        )?;
        report.seed = seed;
        std::fs::write(
            seed_dir.join("battery.json"),
            serde_json::to_vec_pretty(&report)?,
        )?;
        manifest.artifacts.push(format!("seed_{seed}/battery.json"));
        seed_reports.push(report);
    }

    let report = summarize(&name, &hash, seed_reports);
    std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    manifest.artifacts.push("report.json".into());
    manifest.status = RunStatus::Complete;
    manifest.finished_unix = Some(now_unix());
    write_manifest(&dir, &manifest)?;
    Ok(manifest)
}

fn summarize(name: &str, hash: &str, seeds: Vec<SeedReport>) -> RunReport {
    let n = seeds.len().max(1) as f64;
    let battery_len = seeds.first().map(|s| s.battery.len()).unwrap_or(0);
    let mut mean_returns = vec![0.0; battery_len + 1];
    let mut mean_scr = 0.0;
    let mut scr_rounds: Vec<f64> = Vec::new();
    for s in &seeds {
        mean_returns[0] += s.standard.return_mean / n;
        for (i, b) in s.battery.iter().enumerate() {
            mean_returns[i + 1] += b.return_mean / n;
        }
        mean_scr += s.standard.bandwidth.scr() / n;
        if scr_rounds.len() < s.standard.bandwidth.scr_per_round.len() {
            scr_rounds.resize(s.standard.bandwidth.scr_per_round.len(), 0.0);
        }
        for (i, v) in s.standard.bandwidth.scr_per_round.iter().enumerate() {
            scr_rounds[i] += v / n;
        }
    }
    RunReport {
        name: name.to_string(),
        config_hash: hash.to_string(),
        seeds,
        mean_returns,
        mean_scr,
        mean_scr_per_round: scr_rounds,
    }
}

/// Re-derive trace statistics for an existing checkpoint (used by the CLI
/// `eval` verb when a reference trace is needed for budget construction).
pub fn reference_stats(model: &AgentModel, spec: &MapSpec, eval_seed: u64, episodes: usize) -> Result<TraceStats> {
    Ok(evaluate(model, spec, eval_seed, episodes, None)?.stats)
}
