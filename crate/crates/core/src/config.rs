//! Run configuration: a flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored; everything after
//! the first `=` is the value. Keys are dotted (`sim.lane_count`,
//! `train.epochs`, ...). `--set key=value` overrides use the same keys.
//! Relative paths resolve against `paths.data_dir`, which defaults to
//! `$FORECAST_DATA_DIR` or `./data`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baseline::CvKalmanConfig;
use crate::data::{ColumnMap, ExtractConfig};
use crate::heatmap::HeatmapSpec;
use crate::mask::{MaskConfig, Parity};
use crate::sim::SimConfig;
use crate::train::TrainConfig;

pub const DATA_DIR_ENV: &str = "FORECAST_DATA_DIR";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
}

/// Parses `key = value` lines in order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: n + 1, text: raw.to_string() });
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: n + 1, text: raw.to_string() });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    /// NGSIM-format inputs for `ingest`; empty means the simulator output.
    pub ingest_files: Vec<PathBuf>,
    pub seed: u64,
    /// Modes trained by `train` and evaluated by `eval`.
    pub modes: Vec<crate::model::ModelMode>,
    pub fit_cv: bool,
    pub sim: SimConfig,
    pub extract: ExtractConfig,
    pub columns: ColumnMap,
    pub train: TrainConfig,
    pub cv: CvKalmanConfig,
    pub mask: MaskConfig,
    /// Modes compared by the masking experiment.
    pub mask_modes: Vec<crate::model::ModelMode>,
    pub heatmap: HeatmapSpec,
    /// Mode whose checkpoint `heatmap` uses.
    pub heatmap_mode: crate::model::ModelMode,
    /// Instance picked by `heatmap`: test-set vehicle and frame.
    pub heatmap_vehicle: Option<u32>,
    pub heatmap_frame: Option<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"));
        RunConfig {
            data_dir,
            ingest_files: Vec::new(),
            seed: 0,
            modes: crate::model::ModelMode::ALL.to_vec(),
            fit_cv: true,
            sim: SimConfig::default(),
            extract: ExtractConfig::default(),
            columns: ColumnMap::default(),
            train: TrainConfig::default(),
            cv: CvKalmanConfig::default(),
            mask: MaskConfig::default(),
            mask_modes: vec![crate::model::ModelMode::CsLstm, crate::model::ModelMode::SLstm],
            heatmap: HeatmapSpec::default(),
            heatmap_mode: crate::model::ModelMode::CsLstmM,
            heatmap_vehicle: None,
            heatmap_frame: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::BadValue { key: key.into(), value: value.into(), reason: "expected true or false".into() }),
    }
}

fn parse_parity(key: &str, value: &str) -> Result<Parity, ConfigError> {
    match value {
        "odd" => Ok(Parity::Odd),
        "even" => Ok(Parity::Even),
        _ => Err(ConfigError::BadValue { key: key.into(), value: value.into(), reason: "expected odd or even".into() }),
    }
}

fn parse_modes(key: &str, value: &str) -> Result<Vec<crate::model::ModelMode>, ConfigError> {
    list(value)
        .map(|m| {
            m.parse().map_err(|e: crate::model::ModelError| ConfigError::BadValue {
                key: key.into(),
                value: value.into(),
                reason: e.to_string(),
            })
        })
        .collect()
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        Self::from_text(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: 0, text: assignment.to_string() })?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let k = key;
        let v = value;
        match k {
            "paths.data_dir" => self.data_dir = PathBuf::from(v),
            "ingest.files" => self.ingest_files = list(v).map(PathBuf::from).collect(),
            "seed" => {
                self.seed = parse(k, v)?;
                self.sync_seed();
            }
            "modes" => self.modes = parse_modes(k, v)?,
            "mask.modes" => self.mask_modes = parse_modes(k, v)?,
            "cv.fit" => self.fit_cv = parse_bool(k, v)?,
            "cv.process_noise" => self.cv.process_noise = parse(k, v)?,
            "cv.measurement_noise" => self.cv.measurement_noise = parse(k, v)?,
            "sim.lane_count" => self.sim.lane_count = parse(k, v)?,
            "sim.lane_width_ft" => self.sim.lane_width_ft = parse(k, v)?,
            "sim.vehicle_count" => self.sim.vehicle_count = parse(k, v)?,
            "sim.duration_s" => self.sim.duration_s = parse(k, v)?,
            "sim.warmup_s" => self.sim.warmup_s = parse(k, v)?,
            "sim.road_length_ft" => self.sim.road_length_ft = parse(k, v)?,
            "sim.speed_min" => self.sim.speed_min = parse(k, v)?,
            "sim.speed_max" => self.sim.speed_max = parse(k, v)?,
            "sim.lane_change_rate" => self.sim.lane_change_rate = parse(k, v)?,
            "sim.blocked_multiplier" => self.sim.blocked_multiplier = parse(k, v)?,
            "sim.brake_rate" => self.sim.brake_rate = parse(k, v)?,
            "sim.lane_change_duration_s" => self.sim.lane_change_duration_s = parse(k, v)?,
            "sim.lane_change_cooldown_s" => self.sim.lane_change_cooldown_s = parse(k, v)?,
            "sim.brake_factor" => self.sim.brake_factor = parse(k, v)?,
            "sim.brake_ramp_s" => self.sim.brake_ramp_s = parse(k, v)?,
            "sim.brake_hold_s" => self.sim.brake_hold_s = parse(k, v)?,
            "sim.min_gap_ft" => self.sim.min_gap_ft = parse(k, v)?,
            "sim.time_headway_s" => self.sim.time_headway_s = parse(k, v)?,
            "sim.accel_max" => self.sim.accel_max = parse(k, v)?,
            "sim.comfortable_decel" => self.sim.comfortable_decel = parse(k, v)?,
            "sim.decel_max" => self.sim.decel_max = parse(k, v)?,
            "sim.lateral_wander_ft" => self.sim.lateral_wander_ft = parse(k, v)?,
            "sim.wander_time_s" => self.sim.wander_time_s = parse(k, v)?,
            "extract.stride" => self.extract.stride = parse(k, v)?,
            "extract.neighbor_range_ft" => self.extract.neighbor_range_ft = parse(k, v)?,
            "labels.lane_change_window" => self.extract.labels.lane_change_window = parse(k, v)?,
            "labels.brake_ratio" => self.extract.labels.brake_ratio = parse(k, v)?,
            "labels.horizon" => self.extract.labels.horizon = parse(k, v)?,
            "labels.decreasing_lane_is_left" => self.extract.labels.decreasing_lane_is_left = parse_bool(k, v)?,
            "columns.vehicle_id" => self.columns.vehicle_id = parse(k, v)?,
            "columns.frame" => self.columns.frame = parse(k, v)?,
            "columns.x" => self.columns.x = parse(k, v)?,
            "columns.y" => self.columns.y = parse(k, v)?,
            "columns.lane" => self.columns.lane = parse(k, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(k, v)?,
            "train.lr_decay" => self.train.lr_decay = parse(k, v)?,
            "train.batch_size" => self.train.batch_size = parse(k, v)?,
            "train.epochs" => self.train.epochs = parse(k, v)?,
            "train.patience" => self.train.patience = parse(k, v)?,
            "train.grad_clip" => self.train.grad_clip = parse(k, v)?,
            "mask.train_excluded" => self.mask.train_excluded = parse_parity(k, v)?,
            "heatmap.cells_x" => self.heatmap.cells_x = parse(k, v)?,
            "heatmap.cells_y" => self.heatmap.cells_y = parse(k, v)?,
            "heatmap.sigmas" => self.heatmap.sigmas = parse(k, v)?,
            "heatmap.min_weight" => self.heatmap.min_weight = parse(k, v)?,
            "heatmap.mode" => {
                self.heatmap_mode = v.parse().map_err(|e: crate::model::ModelError| ConfigError::BadValue {
                    key: k.into(),
                    value: v.into(),
                    reason: e.to_string(),
                })?
            }
            "heatmap.vehicle_id" => self.heatmap_vehicle = Some(parse(k, v)?),
            "heatmap.frame" => self.heatmap_frame = Some(parse(k, v)?),
            _ => match k.strip_prefix("model.") {
                Some(mk) if mk != "mode" => self.train.model.set(mk, v).map_err(|e| match e {
                    crate::model::ModelError::Config(m) if m.starts_with("unknown model key") => {
                        ConfigError::UnknownKey(k.to_string())
                    }
                    e => ConfigError::BadValue { key: k.into(), value: v.into(), reason: e.to_string() },
                })?,
                _ => return Err(ConfigError::UnknownKey(k.to_string())),
            },
        }
        Ok(())
    }

    /// The seed drives the simulator and training alike.
    fn sync_seed(&mut self) {
        self.sim.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sync_seed();
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_dir.join(p)
        }
    }

    /// Every setting as sorted `key = value` lines; the data directory is
    /// left out so relocated runs hash identically.
    pub fn canonical(&self) -> String {
        let s = &self.sim;
        let l = &self.extract.labels;
        let c = &self.columns;
        let t = &self.train;
        let h = &self.heatmap;
        let join = |v: &[String]| v.join(",");
        let mut pairs: Vec<(String, String)> = vec![
            ("ingest.files".into(), join(&self.ingest_files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>())),
            ("seed".into(), self.seed.to_string()),
            ("modes".into(), join(&self.modes.iter().map(|m| m.name().to_string()).collect::<Vec<_>>())),
            ("mask.modes".into(), join(&self.mask_modes.iter().map(|m| m.name().to_string()).collect::<Vec<_>>())),
            ("cv.fit".into(), self.fit_cv.to_string()),
            ("cv.process_noise".into(), format!("{:?}", self.cv.process_noise)),
            ("cv.measurement_noise".into(), format!("{:?}", self.cv.measurement_noise)),
            ("sim.lane_count".into(), s.lane_count.to_string()),
            ("sim.lane_width_ft".into(), format!("{:?}", s.lane_width_ft)),
            ("sim.vehicle_count".into(), s.vehicle_count.to_string()),
            ("sim.duration_s".into(), format!("{:?}", s.duration_s)),
            ("sim.warmup_s".into(), format!("{:?}", s.warmup_s)),
            ("sim.road_length_ft".into(), format!("{:?}", s.road_length_ft)),
            ("sim.speed_min".into(), format!("{:?}", s.speed_min)),
            ("sim.speed_max".into(), format!("{:?}", s.speed_max)),
            ("sim.lane_change_rate".into(), format!("{:?}", s.lane_change_rate)),
            ("sim.blocked_multiplier".into(), format!("{:?}", s.blocked_multiplier)),
            ("sim.brake_rate".into(), format!("{:?}", s.brake_rate)),
            ("sim.lane_change_duration_s".into(), format!("{:?}", s.lane_change_duration_s)),
            ("sim.lane_change_cooldown_s".into(), format!("{:?}", s.lane_change_cooldown_s)),
            ("sim.brake_factor".into(), format!("{:?}", s.brake_factor)),
            ("sim.brake_ramp_s".into(), format!("{:?}", s.brake_ramp_s)),
            ("sim.brake_hold_s".into(), format!("{:?}", s.brake_hold_s)),
            ("sim.min_gap_ft".into(), format!("{:?}", s.min_gap_ft)),
            ("sim.time_headway_s".into(), format!("{:?}", s.time_headway_s)),
            ("sim.accel_max".into(), format!("{:?}", s.accel_max)),
            ("sim.comfortable_decel".into(), format!("{:?}", s.comfortable_decel)),
            ("sim.decel_max".into(), format!("{:?}", s.decel_max)),
            ("sim.lateral_wander_ft".into(), format!("{:?}", s.lateral_wander_ft)),
            ("sim.wander_time_s".into(), format!("{:?}", s.wander_time_s)),
            ("extract.stride".into(), self.extract.stride.to_string()),
            ("extract.neighbor_range_ft".into(), format!("{:?}", self.extract.neighbor_range_ft)),
            ("labels.lane_change_window".into(), l.lane_change_window.to_string()),
            ("labels.brake_ratio".into(), format!("{:?}", l.brake_ratio)),
            ("labels.horizon".into(), l.horizon.to_string()),
            ("labels.decreasing_lane_is_left".into(), l.decreasing_lane_is_left.to_string()),
            ("columns.vehicle_id".into(), c.vehicle_id.to_string()),
            ("columns.frame".into(), c.frame.to_string()),
            ("columns.x".into(), c.x.to_string()),
            ("columns.y".into(), c.y.to_string()),
            ("columns.lane".into(), c.lane.to_string()),
            ("train.learning_rate".into(), format!("{:?}", t.learning_rate)),
            ("train.lr_decay".into(), format!("{:?}", t.lr_decay)),
            ("train.batch_size".into(), t.batch_size.to_string()),
            ("train.epochs".into(), t.epochs.to_string()),
            ("train.patience".into(), t.patience.to_string()),
            ("train.grad_clip".into(), format!("{:?}", t.grad_clip)),
            (
                "mask.train_excluded".into(),
                match self.mask.train_excluded {
                    Parity::Odd => "odd".into(),
                    Parity::Even => "even".into(),
                },
            ),
            ("heatmap.cells_x".into(), h.cells_x.to_string()),
            ("heatmap.cells_y".into(), h.cells_y.to_string()),
            ("heatmap.sigmas".into(), format!("{:?}", h.sigmas)),
            ("heatmap.min_weight".into(), format!("{:?}", h.min_weight)),
            ("heatmap.mode".into(), self.heatmap_mode.name().into()),
        ];
        if let Some(v) = self.heatmap_vehicle {
            pairs.push(("heatmap.vehicle_id".into(), v.to_string()));
        }
        if let Some(f) = self.heatmap_frame {
            pairs.push(("heatmap.frame".into(), f.to_string()));
        }
        for (k, v) in t.model.to_pairs() {
            if k != "mode" {
                pairs.push((format!("model.{k}"), v));
            }
        }
        pairs.sort();
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let text = "# comment\n\nseed = 7\ntrain.epochs=3\nmodel.encoder_dim = 16\nmodes = CS-LSTM, V-LSTM\n";
        let mut cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.sim.seed, 7);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.model.encoder_dim, 16);
        assert_eq!(cfg.modes.len(), 2);
        cfg.apply_override("sim.vehicle_count=12").unwrap();
        assert_eq!(cfg.sim.vehicle_count, 12);
    }

    #[test]
    fn errors_name_the_offending_key() {
        let err = RunConfig::from_text("sim.lanes = 3").unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey("sim.lanes".into()));
        let err = RunConfig::from_text("train.epochs = many").unwrap_err();
        assert!(err.to_string().contains("train.epochs"), "{err}");
        let err = RunConfig::from_text("model.bogus = 1").unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey("model.bogus".into()));
        assert!(matches!(RunConfig::from_text("just words"), Err(ConfigError::Syntax { line: 1, .. })));
    }

    #[test]
    fn canonical_form_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("sim.brake_rate", "0.05").unwrap();
        cfg.set("mask.train_excluded", "even").unwrap();
        cfg.set("columns.x", "4").unwrap();
        let back = RunConfig::from_text(&cfg.canonical()).unwrap();
        assert_eq!(back.canonical(), cfg.canonical());
        assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.set_seed(99);
        assert_ne!(other.hash(), cfg.hash());
    }
}
