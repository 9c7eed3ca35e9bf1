//! Pipeline stages and their on-disk artifacts.
//!
//! Layout under the artifact root:
//! `data/dataset.jsonl`, `data/manifest.json`, `data/normalizer_{human,robot}.json`,
//! `checkpoints/<stage>.ckpt`, `reports/trace_<stage>.json`,
//! `reports/benchmark.{json,csv}`, `reports/rollout_<trial>_<method>.json`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use interact_core::baselines::{fit_gaussian_baseline, GaussianTrajectoryModel};
use interact_core::checkpoint::Checkpoint;
use interact_core::data::{
    fit_normalizer, normalized_windows, read_dataset, split_trials, synth_generate_hhi, synth_generate_hri, write_dataset,
    AgentKind, Embodiment, InteractionTrial, Normalizer, PairType,
};
use interact_core::dynamics::{hhi_groups, train_dynamics, DynamicsModel};
use interact_core::embedding::{train_embedding, EmbeddingModel};
use interact_core::eval::{run_benchmark, BenchmarkModels, BenchmarkReport};
use interact_core::generation::{rollout_robot, RolloutOptions};
use interact_core::robot_map::{train_robot_mapping, HumanContext, RobotModel};
use interact_core::train::TrainTrace;
use serde::{Deserialize, Serialize};

use crate::config::{hex_digest, PipelineConfig};
use crate::{CliError, MethodArg};

pub const HUMAN_EMBEDDING: &str = "human_embedding";
pub const DYNAMICS: &str = "dynamics";
pub const ROBOT_EMBEDDING: &str = "robot_embedding";
pub const ROBOT_MAP: &str = "robot_map";
pub const RAW_HR: &str = "raw_hr";
pub const RAW_R: &str = "raw_r";
pub const GAUSSIAN: &str = "gaussian";

/// Command that produces an artifact, as named in prerequisite errors.
pub fn producing_step(artifact: &str) -> &'static str {
    match artifact {
        HUMAN_EMBEDDING => "Step 1 (`train-embedding --agent human`)",
        DYNAMICS => "Step 2 (`train-dynamics`)",
        ROBOT_EMBEDDING => "Step 3 (`train-embedding --agent robot`)",
        ROBOT_MAP => "Step 4 (`train-robot`)",
        RAW_HR | RAW_R | GAUSSIAN => "`train-baselines`",
        _ => "`synth`",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn dataset(&self) -> PathBuf {
        self.root.join("data").join("dataset.jsonl")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("data").join("manifest.json")
    }

    pub fn normalizer(&self, kind: AgentKind) -> PathBuf {
        let k = match kind {
            AgentKind::Human => "human",
            AgentKind::Robot => "robot",
        };
        self.root.join("data").join(format!("normalizer_{k}.json"))
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.ckpt"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(interact_core::Error::from)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub dataset_sha256: String,
    pub test_fraction: f64,
    /// Trial counts per pair type and action.
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<InteractionTrial>,
    pub test: Vec<InteractionTrial>,
}

impl Dataset {
    pub fn train_of(&self, pair: PairType) -> Vec<InteractionTrial> {
        self.train.iter().filter(|t| t.pair_type == pair).cloned().collect()
    }

    pub fn test_of(&self, pair: PairType) -> Vec<InteractionTrial> {
        self.test.iter().filter(|t| t.pair_type == pair).cloned().collect()
    }
}

/// Resolved configuration plus artifact locations for one invocation.
pub struct Context {
    pub cfg: PipelineConfig,
    pub hash: String,
    pub layout: Layout,
    pub force: bool,
}

impl Context {
    pub fn new(cfg: PipelineConfig, force: bool) -> Self {
        Self {
            hash: cfg.hash(),
            layout: Layout { root: cfg.root.clone() },
            cfg,
            force,
        }
    }

    fn check(&self, what: &str, field: &str, found: Option<&str>, expected: &str) -> Result<(), CliError> {
        if found == Some(expected) {
            return Ok(());
        }
        let msg = format!("{what} has {field} {}, expected {expected}", found.unwrap_or("<none>"));
        if self.force {
            log::warn!("{msg}; continuing because of --force");
            Ok(())
        } else {
            Err(CliError::Stale(msg))
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset, CliError> {
        let path = self.layout.dataset();
        let missing = |p: &Path| CliError::Missing {
            what: format!("dataset {}", p.display()),
            step: producing_step("dataset").into(),
        };
        let bytes = std::fs::read(&path).map_err(|_| missing(&path))?;
        let text = std::fs::read_to_string(self.layout.manifest()).map_err(|_| missing(&self.layout.manifest()))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Other(format!("manifest: {e}")))?;
        self.check("dataset manifest", "config hash", Some(&manifest.config_hash), &self.hash)?;
        self.check("dataset", "sha256", Some(&hex_digest(&bytes)), &manifest.dataset_sha256)?;
        let trials = read_dataset(&bytes[..])?;
        let by_id: BTreeMap<&str, &InteractionTrial> = trials.iter().map(|t| (t.trial_id.as_str(), t)).collect();
        let pick = |ids: &[String]| -> Result<Vec<InteractionTrial>, CliError> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|t| (*t).clone())
                        .ok_or_else(|| CliError::Other(format!("manifest names unknown trial {id}")))
                })
                .collect()
        };
        Ok(Dataset {
            train: pick(&manifest.train)?,
            test: pick(&manifest.test)?,
            manifest,
        })
    }

    pub fn save_checkpoint(&self, name: &str, mut ckpt: Checkpoint, ds: &Dataset) -> Result<(), CliError> {
        ckpt.header.meta.insert("config_hash".into(), self.hash.clone().into());
        ckpt.header.meta.insert("dataset_sha256".into(), ds.manifest.dataset_sha256.clone().into());
        ckpt.header.meta.insert("stage".into(), name.into());
        write_atomic(&self.layout.checkpoint(name), &ckpt.to_bytes()?)?;
        log::info!("wrote {}", self.layout.checkpoint(name).display());
        Ok(())
    }

    pub fn load_checkpoint(&self, name: &str, ds: &Dataset) -> Result<Checkpoint, CliError> {
        let path = self.layout.checkpoint(name);
        if !path.exists() {
            return Err(CliError::Missing {
                what: format!("checkpoint {}", path.display()),
                step: producing_step(name).into(),
            });
        }
        let ckpt = Checkpoint::load(&path)?;
        let meta = |k: &str| ckpt.header.meta.get(k).and_then(|v| v.as_str()).map(str::to_string);
        self.check(&format!("checkpoint {name}"), "config hash", meta("config_hash").as_deref(), &self.hash)?;
        self.check(
            &format!("checkpoint {name}"),
            "dataset sha256",
            meta("dataset_sha256").as_deref(),
            &ds.manifest.dataset_sha256,
        )?;
        Ok(ckpt)
    }

    fn save_trace(&self, name: &str, trace: &TrainTrace) -> Result<(), CliError> {
        write_json(&self.layout.report(&format!("trace_{name}.json")), trace)
    }
}

fn counts(trials: &[InteractionTrial]) -> BTreeMap<String, BTreeMap<String, usize>> {
    let mut out: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for t in trials {
        let pair = serde_json::to_value(t.pair_type).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        *out.entry(pair).or_default().entry(t.action.to_string()).or_default() += 1;
    }
    out
}

/// Generates both pair types, splits them, and writes dataset plus manifest.
pub fn cmd_synth(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let mut trials = synth_generate_hhi(&cfg.synth)?;
    trials.extend(synth_generate_hri(&cfg.synth, &Embodiment::default())?);
    let (train, test) = split_trials(&trials, cfg.test_fraction, cfg.seed)?;
    let mut bytes = Vec::new();
    write_dataset(&trials, &mut bytes)?;
    let manifest = Manifest {
        config_hash: ctx.hash.clone(),
        seed: cfg.seed,
        dataset_sha256: hex_digest(&bytes),
        test_fraction: cfg.test_fraction,
        counts: counts(&trials),
        train: train.iter().map(|t| t.trial_id.clone()).collect(),
        test: test.iter().map(|t| t.trial_id.clone()).collect(),
    };
    write_atomic(&ctx.layout.dataset(), &bytes)?;
    write_json(&ctx.layout.manifest(), &manifest)?;
    println!(
        "synth: {} trials ({} train, {} test) -> {}",
        trials.len(),
        train.len(),
        test.len(),
        ctx.layout.dataset().display()
    );
    for (pair, per_action) in &manifest.counts {
        for (action, n) in per_action {
            println!("  {pair} {action}: {n}");
        }
    }
    Ok(())
}

fn fit_embedding(ctx: &Context, ds: &Dataset, kind: AgentKind, trials: &[InteractionTrial]) -> Result<EmbeddingModel, CliError> {
    let (cfg, name) = match kind {
        AgentKind::Human => (&ctx.cfg.human_embedding, HUMAN_EMBEDDING),
        AgentKind::Robot => (&ctx.cfg.robot_embedding, ROBOT_EMBEDDING),
    };
    let normalizer = fit_normalizer(trials, kind)?;
    let windows = normalized_windows(trials.iter().flat_map(|t| t.streams_of(kind)), &normalizer, cfg.window)?;
    log::info!("{name}: {} training windows of {} values", windows.rows(), windows.cols());
    let (model, trace) = train_embedding(&windows, kind, normalizer.clone(), cfg)?;
    ctx.save_checkpoint(name, model.to_checkpoint()?, ds)?;
    write_json(&ctx.layout.normalizer(kind), &normalizer)?;
    ctx.save_trace(name, &trace)?;
    println!(
        "{name}: {} epochs, final loss {:.4}",
        trace.epoch_loss.len(),
        trace.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(model)
}

/// Step 1: human motion embedding on the human-human training trials.
pub fn cmd_train_human_embedding(ctx: &Context) -> Result<(), CliError> {
    let ds = ctx.load_dataset()?;
    fit_embedding(ctx, &ds, AgentKind::Human, &ds.train_of(PairType::Hhi)).map(|_| ())
}

pub fn load_embedding(ctx: &Context, ds: &Dataset, name: &str) -> Result<EmbeddingModel, CliError> {
    Ok(EmbeddingModel::from_checkpoint(&ctx.load_checkpoint(name, ds)?)?)
}

pub fn load_dynamics(ctx: &Context, ds: &Dataset) -> Result<DynamicsModel, CliError> {
    Ok(DynamicsModel::from_checkpoint(&ctx.load_checkpoint(DYNAMICS, ds)?)?)
}

pub fn load_robot_model(ctx: &Context, ds: &Dataset, name: &str) -> Result<RobotModel, CliError> {
    Ok(RobotModel::from_checkpoint(&ctx.load_checkpoint(name, ds)?)?)
}

pub fn load_gaussian(ctx: &Context, ds: &Dataset) -> Result<GaussianTrajectoryModel, CliError> {
    Ok(GaussianTrajectoryModel::from_checkpoint(&ctx.load_checkpoint(GAUSSIAN, ds)?)?)
}

/// Step 2: shared task dynamics over both partners of every human-human
/// training trial.
pub fn cmd_train_dynamics(ctx: &Context) -> Result<(), CliError> {
    let ds = ctx.load_dataset()?;
    let embedding = load_embedding(ctx, &ds, HUMAN_EMBEDDING)?;
    let train = ds.train_of(PairType::Hhi);
    let (model, trace) = train_dynamics(&hhi_groups(&train), &embedding, &ctx.cfg.dynamics)?;
    ctx.save_checkpoint(DYNAMICS, model.to_checkpoint()?, &ds)?;
    ctx.save_trace(DYNAMICS, &trace)?;
    println!(
        "dynamics: {} epochs, final loss {:.4}",
        trace.epoch_loss.len(),
        trace.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Step 3: robot motion embedding on the human-robot training trials.
pub fn cmd_train_robot_embedding(ctx: &Context) -> Result<(), CliError> {
    let ds = ctx.load_dataset()?;
    ctx.load_checkpoint(DYNAMICS, &ds)?;
    fit_embedding(ctx, &ds, AgentKind::Robot, &ds.train_of(PairType::Hri)).map(|_| ())
}

fn fit_robot(ctx: &Context, ds: &Dataset, name: &str, embedding: &EmbeddingModel, context: HumanContext) -> Result<(), CliError> {
    let (model, trace, rows) = train_robot_mapping(&ds.train_of(PairType::Hri), embedding, context, &ctx.cfg.robot_map)?;
    ctx.save_checkpoint(name, model.to_checkpoint()?, ds)?;
    ctx.save_trace(name, &trace)?;
    println!(
        "{name}: {rows} rows per epoch, {} epochs, final loss {:.4}",
        trace.epoch_loss.len(),
        trace.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Step 4: robot mapping driven by the extracted task dynamics.
pub fn cmd_train_robot(ctx: &Context) -> Result<(), CliError> {
    let ds = ctx.load_dataset()?;
    let dynamics = load_dynamics(ctx, &ds)?;
    let embedding = load_embedding(ctx, &ds, ROBOT_EMBEDDING)?;
    fit_robot(ctx, &ds, ROBOT_MAP, &embedding, HumanContext::Dynamics(Box::new(dynamics)))
}

/// Gaussian baseline plus the raw human and robot-only mapping variants.
pub fn cmd_train_baselines(ctx: &Context) -> Result<(), CliError> {
    let ds = ctx.load_dataset()?;
    let human = load_embedding(ctx, &ds, HUMAN_EMBEDDING)?;
    let embedding = load_embedding(ctx, &ds, ROBOT_EMBEDDING)?;
    let gaussian = fit_gaussian_baseline(&ds.train_of(PairType::Hri), ctx.cfg.baselines)?;
    ctx.save_checkpoint(GAUSSIAN, gaussian.to_checkpoint()?, &ds)?;
    for (action, joints) in &gaussian.actions {
        println!("gaussian: {action} T_DTW = {}", joints[0].len());
    }
    fit_robot(ctx, &ds, RAW_HR, &embedding, HumanContext::RawHuman(human.normalizer.clone()))?;
    fit_robot(ctx, &ds, RAW_R, &embedding, HumanContext::RobotOnly)
}

/// Runs the benchmark on the test split and writes JSON and CSV reports.
pub fn cmd_eval(ctx: &Context) -> Result<BenchmarkReport, CliError> {
    let ds = ctx.load_dataset()?;
    let hme = load_robot_model(ctx, &ds, ROBOT_MAP)?;
    let raw_hr = load_robot_model(ctx, &ds, RAW_HR)?;
    let raw_r = load_robot_model(ctx, &ds, RAW_R)?;
    let gaussian = load_gaussian(ctx, &ds)?;
    let models = BenchmarkModels {
        hme: &hme,
        raw_hr: &raw_hr,
        raw_r: &raw_r,
        gaussian: &gaussian,
    };
    let report = run_benchmark(&models, &ds.test, &ctx.cfg.benchmark, ctx.cfg.seed, &ctx.hash)?;
    write_json(&ctx.layout.report("benchmark.json"), &report)?;
    write_atomic(&ctx.layout.report("benchmark.csv"), report.to_csv().as_bytes())?;
    println!("{:<10} {:>8}   per joint", "method", "NRMSD");
    for (name, m) in &report.methods {
        let joints: Vec<String> = m.nrmsd_per_joint.iter().map(|v| format!("{v:.3}")).collect();
        println!("{name:<10} {:>8.4}   {}", m.nrmsd_avg, joints.join(" "));
    }
    for (action, e) in &report.entrainment.per_action {
        println!(
            "entrainment {action}: factor-2 corr {:.3} (threshold {:.3}), mean lag {:.1}",
            e.factor2_corr, e.threshold, e.lag
        );
    }
    println!("report -> {}", ctx.layout.report("benchmark.json").display());
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub trial_id: String,
    pub method: String,
    pub observe: usize,
    pub horizon: usize,
    pub predicted: Vec<Vec<f64>>,
    /// Recorded robot frames over the predicted span, where available.
    pub recorded: Vec<Vec<f64>>,
}

fn method_name(m: MethodArg) -> &'static str {
    match m {
        MethodArg::Hme => "hme",
        MethodArg::RawHr => "raw_hr",
        MethodArg::RawR => "raw_r",
        MethodArg::Gaussian => "gaussian",
    }
}

/// Predicts `horizon` robot frames after `observe` recorded frames of one
/// test trial.
pub fn cmd_rollout(ctx: &Context, trial: Option<&str>, method: MethodArg, observe: usize, horizon: usize) -> Result<(), CliError> {
    let ds = ctx.load_dataset()?;
    let hri = ds.test_of(PairType::Hri);
    let (idx, t) = match trial {
        Some(id) => hri
            .iter()
            .enumerate()
            .find(|(_, t)| t.trial_id == id)
            .ok_or_else(|| CliError::Other(format!("no human-robot test trial {id}")))?,
        None => hri.iter().enumerate().next().ok_or_else(|| CliError::Other("no human-robot test trials".into()))?,
    };
    if observe == 0 || observe > t.len() {
        return Err(CliError::Other(format!("--observe must be in 1..={}", t.len())));
    }
    let name = method_name(method);
    let predicted = match method {
        MethodArg::Gaussian => {
            let g = load_gaussian(ctx, &ds)?.sample(t.action, ctx.cfg.seed.wrapping_add(idx as u64))?;
            (observe..observe + horizon).map(|i| g[i.min(g.len() - 1)].clone()).collect()
        }
        _ => {
            let ckpt = match method {
                MethodArg::Hme => ROBOT_MAP,
                MethodArg::RawHr => RAW_HR,
                _ => RAW_R,
            };
            let model = load_robot_model(ctx, &ds, ckpt)?;
            let opts = RolloutOptions {
                refresh_every: ctx.cfg.benchmark.refresh_every,
                sample_seed: None,
            };
            rollout_robot(&model, &t.a1.frames[..observe], &t.a2.frames[..observe], horizon, opts)?
        }
    };
    let end = (observe + horizon).min(t.len());
    let report = RolloutReport {
        trial_id: t.trial_id.clone(),
        method: name.into(),
        observe,
        horizon,
        predicted,
        recorded: t.a2.frames[observe..end].to_vec(),
    };
    let path = ctx.layout.report(&format!("rollout_{}_{name}.json", t.trial_id));
    write_json(&path, &report)?;
    println!("rollout {} ({name}): {horizon} frames -> {}", t.trial_id, path.display());
    Ok(())
}

/// Human normalizer sidecar written by Step 1.
pub fn load_normalizer(ctx: &Context, kind: AgentKind) -> Result<Normalizer, CliError> {
    let path = ctx.layout.normalizer(kind);
    let text = std::fs::read_to_string(&path).map_err(|_| CliError::Missing {
        what: format!("normalizer {}", path.display()),
        step: producing_step(if kind == AgentKind::Human { HUMAN_EMBEDDING } else { ROBOT_EMBEDDING }).into(),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}
