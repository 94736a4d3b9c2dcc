use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Which architecture to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelMode {
    /// Convolutional social pooling with the maneuver-conditioned decoder.
    CsLstmM,
    /// Convolutional social pooling, single-mode decoder.
    CsLstm,
    /// Fully connected social pooling, single-mode decoder.
    SLstm,
    /// No social context.
    VLstm,
}

impl ModelMode {
    pub const ALL: [ModelMode; 4] = [ModelMode::CsLstmM, ModelMode::CsLstm, ModelMode::SLstm, ModelMode::VLstm];

    pub fn name(self) -> &'static str {
        match self {
            ModelMode::CsLstmM => "CS-LSTM(M)",
            ModelMode::CsLstm => "CS-LSTM",
            ModelMode::SLstm => "S-LSTM",
            ModelMode::VLstm => "V-LSTM",
        }
    }

    /// File-name form: `cs-lstm-m`, `cs-lstm`, `s-lstm`, `v-lstm`.
    pub fn slug(self) -> &'static str {
        match self {
            ModelMode::CsLstmM => "cs-lstm-m",
            ModelMode::CsLstm => "cs-lstm",
            ModelMode::SLstm => "s-lstm",
            ModelMode::VLstm => "v-lstm",
        }
    }

    pub fn uses_maneuvers(self) -> bool {
        self == ModelMode::CsLstmM
    }

    pub fn social(self) -> SocialKind {
        match self {
            ModelMode::CsLstmM | ModelMode::CsLstm => SocialKind::Convolutional,
            ModelMode::SLstm => SocialKind::FullyConnected,
            ModelMode::VLstm => SocialKind::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocialKind {
    Convolutional,
    FullyConnected,
    None,
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "cslstmm" => Ok(ModelMode::CsLstmM),
            "cslstm" => Ok(ModelMode::CsLstm),
            "slstm" => Ok(ModelMode::SLstm),
            "vlstm" => Ok(ModelMode::VLstm),
            _ => Err(ModelError::Config(format!(
                "unknown model mode `{s}` (expected CS-LSTM(M), CS-LSTM, S-LSTM or V-LSTM)"
            ))),
        }
    }
}

/// Architecture hyperparameters. Positions enter the network divided by the
/// per-axis scales and means leave it multiplied by them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: ModelMode,
    /// Width of the linear input embedding; 0 feeds raw coordinates.
    pub embed_dim: usize,
    pub encoder_dim: usize,
    pub decoder_dim: usize,
    pub dynamics_dim: usize,
    pub conv1_channels: usize,
    pub conv1_kernel: (usize, usize),
    pub conv2_channels: usize,
    pub conv2_kernel: (usize, usize),
    pub pool: (usize, usize),
    /// Output width of the fully connected pooling layer; 0 matches the
    /// convolutional branch.
    pub social_fc_dim: usize,
    pub lateral_scale_ft: f64,
    pub longitudinal_scale_ft: f64,
    pub sigma_floor_ft: f64,
    pub rho_margin: f64,
    /// Multiplier on the maneuver log-probability term of the training loss.
    pub maneuver_loss_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: ModelMode::CsLstmM,
            embed_dim: 32,
            encoder_dim: 64,
            decoder_dim: 128,
            dynamics_dim: 32,
            conv1_channels: 64,
            conv1_kernel: (3, 3),
            conv2_channels: 16,
            conv2_kernel: (3, 1),
            pool: (2, 1),
            social_fc_dim: 0,
            lateral_scale_ft: 10.0,
            longitudinal_scale_ft: 100.0,
            sigma_floor_ft: 1e-2,
            rho_margin: 1e-4,
            maneuver_loss_weight: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn with_mode(mode: ModelMode) -> Self {
        ModelConfig { mode, ..ModelConfig::default() }
    }

    /// Smaller widths for single-core experiments.
    pub fn desk(mode: ModelMode) -> Self {
        ModelConfig {
            mode,
            embed_dim: 16,
            encoder_dim: 32,
            decoder_dim: 64,
            dynamics_dim: 32,
            conv1_channels: 32,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.encoder_dim == 0 || self.decoder_dim == 0 || self.dynamics_dim == 0 {
            return bad("encoder, decoder and dynamics widths must be positive".into());
        }
        if !(self.lateral_scale_ft > 0.0 && self.longitudinal_scale_ft > 0.0) {
            return bad("position scales must be positive".into());
        }
        if !(self.sigma_floor_ft > 0.0) || !(self.rho_margin > 0.0 && self.rho_margin < 1.0) {
            return bad("sigma_floor_ft must be positive and rho_margin in (0, 1)".into());
        }
        if !(self.maneuver_loss_weight > 0.0 && self.maneuver_loss_weight.is_finite()) {
            return bad("maneuver_loss_weight must be positive".into());
        }
        if self.mode.social() == SocialKind::Convolutional || self.social_fc_dim == 0 {
            self.conv_output_dim()?;
        }
        Ok(())
    }

    /// Spatial extents after each stage of the convolutional branch.
    pub fn conv_extents(&self) -> Result<[(usize, usize); 3], ModelError> {
        let shrink = |(h, w): (usize, usize), (kh, kw): (usize, usize), stage: &str| {
            if kh == 0 || kw == 0 || kh > h || kw > w {
                Err(ModelError::Config(format!("{stage} kernel {kh}x{kw} does not fit a {h}x{w} input")))
            } else {
                Ok((h - kh + 1, w - kw + 1))
            }
        };
        let a = shrink((super::GRID_ROWS, super::GRID_COLS), self.conv1_kernel, "conv1")?;
        let b = shrink(a, self.conv2_kernel, "conv2")?;
        let (ph, pw) = self.pool;
        if ph == 0 || pw == 0 || ph > b.0 || pw > b.1 {
            return Err(ModelError::Config(format!("pool {ph}x{pw} does not fit a {}x{} input", b.0, b.1)));
        }
        Ok([a, b, (b.0 / ph, b.1 / pw)])
    }

    pub fn conv_output_dim(&self) -> Result<usize, ModelError> {
        let [_, _, (h, w)] = self.conv_extents()?;
        Ok(self.conv2_channels * h * w)
    }

    pub fn social_dim(&self) -> Result<usize, ModelError> {
        Ok(match self.mode.social() {
            SocialKind::Convolutional => self.conv_output_dim()?,
            SocialKind::FullyConnected if self.social_fc_dim > 0 => self.social_fc_dim,
            SocialKind::FullyConnected => self.conv_output_dim()?,
            SocialKind::None => 0,
        })
    }

    pub fn encoding_dim(&self) -> Result<usize, ModelError> {
        Ok(self.social_dim()? + self.dynamics_dim)
    }

    /// Flat `key value` pairs for checkpoint metadata.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let pair = |(a, b): (usize, usize)| format!("{a}x{b}");
        vec![
            ("mode".into(), self.mode.name().into()),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("encoder_dim".into(), self.encoder_dim.to_string()),
            ("decoder_dim".into(), self.decoder_dim.to_string()),
            ("dynamics_dim".into(), self.dynamics_dim.to_string()),
            ("conv1_channels".into(), self.conv1_channels.to_string()),
            ("conv1_kernel".into(), pair(self.conv1_kernel)),
            ("conv2_channels".into(), self.conv2_channels.to_string()),
            ("conv2_kernel".into(), pair(self.conv2_kernel)),
            ("pool".into(), pair(self.pool)),
            ("social_fc_dim".into(), self.social_fc_dim.to_string()),
            ("lateral_scale_ft".into(), format!("{:?}", self.lateral_scale_ft)),
            ("longitudinal_scale_ft".into(), format!("{:?}", self.longitudinal_scale_ft)),
            ("sigma_floor_ft".into(), format!("{:?}", self.sigma_floor_ft)),
            ("rho_margin".into(), format!("{:?}", self.rho_margin)),
            ("maneuver_loss_weight".into(), format!("{:?}", self.maneuver_loss_weight)),
        ]
    }

    /// Applies one `key value` pair; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        let err = || ModelError::Config(format!("bad value `{value}` for model key `{key}`"));
        let usize_ = || value.trim().parse::<usize>().map_err(|_| err());
        let f64_ = || value.trim().parse::<f64>().map_err(|_| err());
        let pair = || -> Result<(usize, usize), ModelError> {
            let (a, b) = value.trim().split_once('x').ok_or_else(err)?;
            Ok((a.parse().map_err(|_| err())?, b.parse().map_err(|_| err())?))
        };
        match key {
            "mode" => self.mode = value.trim().parse()?,
            "embed_dim" => self.embed_dim = usize_()?,
            "encoder_dim" => self.encoder_dim = usize_()?,
            "decoder_dim" => self.decoder_dim = usize_()?,
            "dynamics_dim" => self.dynamics_dim = usize_()?,
            "conv1_channels" => self.conv1_channels = usize_()?,
            "conv1_kernel" => self.conv1_kernel = pair()?,
            "conv2_channels" => self.conv2_channels = usize_()?,
            "conv2_kernel" => self.conv2_kernel = pair()?,
            "pool" => self.pool = pair()?,
            "social_fc_dim" => self.social_fc_dim = usize_()?,
            "lateral_scale_ft" => self.lateral_scale_ft = f64_()?,
            "longitudinal_scale_ft" => self.longitudinal_scale_ft = f64_()?,
            "sigma_floor_ft" => self.sigma_floor_ft = f64_()?,
            "rho_margin" => self.rho_margin = f64_()?,
            "maneuver_loss_weight" => self.maneuver_loss_weight = f64_()?,
            _ => return Err(ModelError::Config(format!("unknown model key `{key}`"))),
        }
        Ok(())
    }
}
