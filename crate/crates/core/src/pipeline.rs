//! End-to-end commands over a data directory.
//!
//! Layout below `paths.data_dir`:
//!
//! ```text
//! raw/sim.txt                    simulated tracks, NGSIM column layout
//! instances/{train,test}.jsonl   extracted prediction instances
//! models/<mode>.ckpt             trained parameters
//! models/<mode>.loss.csv         per-epoch loss curve
//! models/cv.json                 fitted constant-velocity noise levels
//! eval/report.{csv,jsonl}        horizon metrics per model
//! mask/report.{csv,json}         masking experiment
//! heatmap/{heatmap,trajectories}.csv
//! manifests/<command>.json       what each command produced
//! ```
//!
//! Manifests carry no timestamps, so a rerun with the same config and seed
//! reproduces them byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baseline::{fit_noise, CvKalman, CvKalmanConfig};
use crate::config::RunConfig;
use crate::data::{
    extract_instances, parse_ngsim, read_instances, split, write_instances, write_ngsim, DatasetSplit, Lateral,
    PredictionInstance, Scene,
};
use crate::heatmap::heatmap;
use crate::mask::{degradation, mask_split};
use crate::metrics::{evaluate, reports_to_csv, reports_to_jsonl, EvalReport};
use crate::model::{CspModel, ModelMode};
use crate::sim::simulate;
use crate::train::{train_split, TrainConfig};
use csp_tensor::Checkpoint;

pub const MANIFEST_FORMAT: &str = "forecast-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MASK_FORMAT: &str = "forecast-mask-report";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing {what} at {path}; run `{hint}` first")]
    Missing { what: &'static str, path: PathBuf, hint: &'static str },
    #[error("no test instance matches the heatmap selection ({0})")]
    NoInstance(String),
    #[error("cannot serialize {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the data directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<Artifact>,
    pub summary: BTreeMap<String, String>,
}

/// Paths of the standard artifacts.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn sim_tracks(&self) -> PathBuf {
        self.root.join("raw/sim.txt")
    }
    pub fn train_instances(&self) -> PathBuf {
        self.root.join("instances/train.jsonl")
    }
    pub fn test_instances(&self) -> PathBuf {
        self.root.join("instances/test.jsonl")
    }
    pub fn checkpoint(&self, mode: ModelMode) -> PathBuf {
        self.root.join(format!("models/{}.ckpt", mode.slug()))
    }
    pub fn loss_curve(&self, mode: ModelMode) -> PathBuf {
        self.root.join(format!("models/{}.loss.csv", mode.slug()))
    }
    pub fn cv_config(&self) -> PathBuf {
        self.root.join("models/cv.json")
    }
    pub fn eval_csv(&self) -> PathBuf {
        self.root.join("eval/report.csv")
    }
    pub fn eval_jsonl(&self) -> PathBuf {
        self.root.join("eval/report.jsonl")
    }
    pub fn mask_csv(&self) -> PathBuf {
        self.root.join("mask/report.csv")
    }
    pub fn mask_json(&self) -> PathBuf {
        self.root.join("mask/report.json")
    }
    pub fn heatmap_csv(&self) -> PathBuf {
        self.root.join("heatmap/heatmap.csv")
    }
    pub fn trajectories_csv(&self) -> PathBuf {
        self.root.join("heatmap/trajectories.csv")
    }
    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join(format!("manifests/{command}.json"))
    }
}

fn ensure_parent(path: &Path) -> crate::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: &[u8]) -> crate::Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents)?;
    Ok(())
}

fn require(path: PathBuf, what: &'static str, hint: &'static str) -> crate::Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::Missing { what, path, hint }.into())
    }
}

fn to_json<T: Serialize>(value: &T, what: &str) -> crate::Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| PipelineError::Serialize(format!("{what}: {e}")).into())
}

/// Collects artifacts and summary lines, then writes the manifest.
struct Recorder<'a> {
    layout: &'a Layout,
    config: &'a RunConfig,
    command: &'static str,
    artifacts: Vec<Artifact>,
    summary: BTreeMap<String, String>,
}

impl<'a> Recorder<'a> {
    fn new(layout: &'a Layout, config: &'a RunConfig, command: &'static str) -> Self {
        Recorder { layout, config, command, artifacts: Vec::new(), summary: BTreeMap::new() }
    }

    fn write(&mut self, path: &Path, contents: &[u8]) -> crate::Result<()> {
        write_file(path, contents)?;
        self.record(path)
    }

    fn record(&mut self, path: &Path) -> crate::Result<()> {
        let bytes = fs::read(path)?;
        let rel = path.strip_prefix(&self.layout.root).unwrap_or(path);
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        self.artifacts.push(Artifact {
            path: rel,
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn note(&mut self, key: impl Into<String>, value: impl ToString) {
        self.summary.insert(key.into(), value.to_string());
    }

    fn finish(mut self) -> crate::Result<Manifest> {
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            command: self.command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: self.config.hash(),
            seed: self.config.seed,
            artifacts: self.artifacts,
            summary: self.summary,
        };
        let mut text = to_json(&manifest, "manifest")?;
        text.push('\n');
        write_file(&self.layout.manifest(self.command), text.as_bytes())?;
        Ok(manifest)
    }
}

/// Simulates traffic and writes it in the NGSIM column layout.
pub fn cmd_simulate(config: &RunConfig) -> crate::Result<Manifest> {
    let layout = Layout::new(&config.data_dir);
    let mut rec = Recorder::new(&layout, config, "simulate");
    let sim = simulate(&config.sim)?;
    let mut buf = Vec::new();
    write_ngsim(&sim.tracks, &mut buf)?;
    rec.write(&layout.sim_tracks(), &buf)?;
    rec.note("vehicles", sim.tracks.len());
    rec.note("lane_changes", sim.stats.lane_changes);
    rec.note("brake_events", sim.stats.brake_events);
    rec.note("gap_clamps", sim.stats.gap_clamps);
    info!("simulated {} vehicles", sim.tracks.len());
    rec.finish()
}

/// Parses track files, extracts instances and writes the train/test split.
/// Without `ingest.files` the simulator output is used.
pub fn cmd_ingest(config: &RunConfig) -> crate::Result<Manifest> {
    let layout = Layout::new(&config.data_dir);
    let mut rec = Recorder::new(&layout, config, "ingest");
    let files: Vec<PathBuf> = if config.ingest_files.is_empty() {
        vec![require(layout.sim_tracks(), "simulated tracks", "forecast simulate")?]
    } else {
        config.ingest_files.iter().map(|p| config.resolve(p)).collect()
    };
    let mut instances = Vec::new();
    let (mut dropped_rows, mut short, mut skipped, mut dropped_neighbors) = (0, 0, 0, 0);
    for file in &files {
        let parsed = parse_ngsim(file, &config.columns)?;
        dropped_rows += parsed.dropped_rows;
        let source = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let report = extract_instances(&Scene::new(source, parsed.tracks), &config.extract);
        short += report.short_tracks;
        skipped += report.skipped_windows;
        dropped_neighbors += report.dropped_neighbors;
        info!("{}: {} instances", file.display(), report.instances.len());
        instances.extend(report.instances);
    }
    let split = split(instances);
    ensure_parent(&layout.train_instances())?;
    write_instances(&layout.train_instances(), &split.train)?;
    write_instances(&layout.test_instances(), &split.test)?;
    rec.record(&layout.train_instances())?;
    rec.record(&layout.test_instances())?;
    rec.note("files", files.len());
    rec.note("train_instances", split.train.len());
    rec.note("test_instances", split.test.len());
    rec.note("dropped_rows", dropped_rows);
    rec.note("short_tracks", short);
    rec.note("skipped_windows", skipped);
    rec.note("dropped_neighbors", dropped_neighbors);
    rec.finish()
}

fn load_split(layout: &Layout) -> crate::Result<DatasetSplit> {
    let train = read_instances(&require(layout.train_instances(), "training instances", "forecast ingest")?)?;
    let test = read_instances(&require(layout.test_instances(), "test instances", "forecast ingest")?)?;
    Ok(DatasetSplit { train, test })
}

fn train_config(config: &RunConfig, mode: ModelMode) -> TrainConfig {
    let mut t = config.train.clone();
    t.model.mode = mode;
    t.seed = config.seed;
    t
}

/// Trains every configured mode and fits the constant-velocity noise levels.
pub fn cmd_train(config: &RunConfig) -> crate::Result<Manifest> {
    let layout = Layout::new(&config.data_dir);
    let mut rec = Recorder::new(&layout, config, "train");
    let data = load_split(&layout)?;
    let cv = if config.fit_cv { fit_noise(&data.train, &config.cv)? } else { config.cv };
    rec.write(&layout.cv_config(), format!("{}\n", to_json(&cv, "cv config")?).as_bytes())?;
    rec.note("cv.process_noise", cv.process_noise);
    rec.note("cv.measurement_noise", cv.measurement_noise);
    for &mode in &config.modes {
        info!("training {mode}");
        let out = train_split(&data, &train_config(config, mode))?;
        let ckpt = layout.checkpoint(mode);
        ensure_parent(&ckpt)?;
        out.model.to_checkpoint().write(&ckpt).map_err(crate::model::ModelError::from)?;
        rec.record(&ckpt)?;
        rec.write(&layout.loss_curve(mode), out.curve.to_csv().as_bytes())?;
        rec.note(format!("{}.best_epoch", mode.slug()), out.best_epoch);
        if let Some(l) = out.curve.final_train() {
            rec.note(format!("{}.final_train_loss", mode.slug()), format!("{l:.6}"));
        }
    }
    rec.finish()
}

pub fn load_model(layout: &Layout, mode: ModelMode) -> crate::Result<CspModel> {
    let path = require(layout.checkpoint(mode), "checkpoint", "forecast train")?;
    let ckpt = Checkpoint::read(&path).map_err(crate::model::ModelError::from)?;
    Ok(CspModel::from_checkpoint(&ckpt)?)
}

fn load_cv(layout: &Layout, config: &RunConfig) -> crate::Result<CvKalman> {
    let path = layout.cv_config();
    let cv: CvKalmanConfig = if path.exists() {
        serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| PipelineError::Serialize(format!("cv config: {e}")))?
    } else {
        config.cv
    };
    Ok(CvKalman { config: cv })
}

/// Evaluates the CV baseline and every configured mode on the test split.
pub fn cmd_eval(config: &RunConfig) -> crate::Result<Manifest> {
    let layout = Layout::new(&config.data_dir);
    let mut rec = Recorder::new(&layout, config, "eval");
    let test = read_instances(&require(layout.test_instances(), "test instances", "forecast ingest")?)?;
    let mut reports = vec![evaluate(&load_cv(&layout, config)?, &test, config.seed)?];
    for &mode in &config.modes {
        reports.push(evaluate(&load_model(&layout, mode)?, &test, config.seed)?);
    }
    for r in &reports {
        if let Some(v) = r.rmse_at(5) {
            rec.note(format!("{}.rmse_5s", r.mode), format!("{v:.6}"));
        }
        if let Some(v) = r.nll_at(5) {
            rec.note(format!("{}.nll_5s", r.mode), format!("{v:.6}"));
        }
    }
    rec.write(&layout.eval_csv(), reports_to_csv(&reports).as_bytes())?;
    rec.write(&layout.eval_jsonl(), reports_to_jsonl(&reports).as_bytes())?;
    rec.finish()
}

/// One mode's result in the masking experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskOutcome {
    pub mode: String,
    pub unmasked_rmse_5s: f64,
    pub masked_rmse_5s: f64,
    pub degradation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub format: String,
    pub seed: u64,
    pub train_instances: usize,
    pub masked_train_instances: usize,
    pub masked_test_instances: usize,
    pub outcomes: Vec<MaskOutcome>,
}

impl MaskReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("# {MASK_FORMAT} v1\nmode,unmasked_rmse_5s,masked_rmse_5s,degradation\n");
        for o in &self.outcomes {
            s.push_str(&format!("{},{},{},{}\n", o.mode, o.unmasked_rmse_5s, o.masked_rmse_5s, o.degradation));
        }
        s
    }

    pub fn degradation_of(&self, mode: ModelMode) -> Option<f64> {
        self.outcomes.iter().find(|o| o.mode == mode.name()).map(|o| o.degradation)
    }
}

/// Trains each mask mode on the full and the masked training set and
/// compares both on the masked test set.
pub fn mask_experiment(data: &DatasetSplit, config: &RunConfig) -> crate::Result<MaskReport> {
    let masked = mask_split(data, &config.mask)?;
    let mut outcomes = Vec::new();
    for &mode in &config.mask_modes {
        let cfg = train_config(config, mode);
        let full = train_split(data, &cfg)?;
        let part = train_split(&masked, &cfg)?;
        let rmse = |m: &CspModel| -> crate::Result<f64> {
            let r: EvalReport = evaluate(m, &masked.test, config.seed)?;
            Ok(r.rmse_at(5).unwrap_or(f64::NAN))
        };
        let (u, m) = (rmse(&full.model)?, rmse(&part.model)?);
        info!("{mode}: unmasked {u:.4} masked {m:.4}");
        outcomes.push(MaskOutcome { mode: mode.name().into(), unmasked_rmse_5s: u, masked_rmse_5s: m, degradation: degradation(u, m) });
    }
    Ok(MaskReport {
        format: MASK_FORMAT.into(),
        seed: config.seed,
        train_instances: data.train.len(),
        masked_train_instances: masked.train.len(),
        masked_test_instances: masked.test.len(),
        outcomes,
    })
}

pub fn cmd_mask_experiment(config: &RunConfig) -> crate::Result<Manifest> {
    let layout = Layout::new(&config.data_dir);
    let mut rec = Recorder::new(&layout, config, "mask-experiment");
    let data = load_split(&layout)?;
    let report = mask_experiment(&data, config)?;
    for o in &report.outcomes {
        rec.note(format!("{}.degradation", o.mode), format!("{:.6}", o.degradation));
    }
    rec.write(&layout.mask_json(), format!("{}\n", to_json(&report, "mask report")?).as_bytes())?;
    rec.write(&layout.mask_csv(), report.to_csv().as_bytes())?;
    rec.finish()
}

/// The configured instance, or the first lane-changing one.
pub fn select_instance<'a>(test: &'a [PredictionInstance], config: &RunConfig) -> crate::Result<&'a PredictionInstance> {
    let found = match (config.heatmap_vehicle, config.heatmap_frame) {
        (None, None) => test.iter().find(|i| i.lateral != Lateral::Keep),
        (v, f) => test
            .iter()
            .find(|i| v.is_none_or(|v| i.vehicle_id == v) && f.is_none_or(|f| i.frame == f)),
    };
    found.ok_or_else(|| {
        PipelineError::NoInstance(format!("vehicle {:?}, frame {:?}", config.heatmap_vehicle, config.heatmap_frame)).into()
    })
}

/// Renders the predictive density of one test instance on a grid.
pub fn cmd_heatmap(config: &RunConfig) -> crate::Result<Manifest> {
    let layout = Layout::new(&config.data_dir);
    let mut rec = Recorder::new(&layout, config, "heatmap");
    let test = read_instances(&require(layout.test_instances(), "test instances", "forecast ingest")?)?;
    let inst = select_instance(&test, config)?;
    let model = load_model(&layout, config.heatmap_mode)?;
    let grid = heatmap(&model.predict(inst)?, &config.heatmap);
    let empty = grid.empty_steps();
    if !empty.is_empty() {
        log::warn!("heatmap grid misses the mass at steps {empty:?}");
    }
    rec.write(&layout.heatmap_csv(), grid.to_csv().as_bytes())?;
    rec.write(&layout.trajectories_csv(), grid.trajectories_csv().as_bytes())?;
    rec.note("vehicle_id", inst.vehicle_id);
    rec.note("frame", inst.frame);
    rec.note("lateral", format!("{:?}", inst.lateral));
    rec.note("longitudinal", format!("{:?}", inst.longitudinal));
    rec.note("empty_steps", empty.len());
    rec.finish()
}
