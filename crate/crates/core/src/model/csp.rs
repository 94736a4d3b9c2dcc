use csp_tensor::nn::{ConvLayer, Linear, LstmCell, LEAKY_RELU_ALPHA};
use csp_tensor::{Bound, Checkpoint, Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::social::{occupancy, SocialTensor, GRID_CELLS, GRID_COLS, GRID_ROWS};
use super::{
    maneuvers, BivariateGaussian, GaussianParamSequence, ManeuverDistribution, ModelConfig, ModelError, ModelMode,
    PredictiveDistribution, Predictor, SocialKind, MANEUVER_COUNT,
};
use crate::data::{Lateral, Longitudinal, PredictionInstance, FUTURE_LEN, HISTORY_LEN};

type Result<T> = std::result::Result<T, ModelError>;

/// Raw log-σ outputs are clamped to `±SIGMA_RAW_LIMIT` before `exp`.
pub const SIGMA_RAW_LIMIT: f64 = 20.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const PREDICT_CHUNK: usize = 128;
const CHECKPOINT_PREFIX: &str = "model.";

enum SocialBranch {
    Conv { first: ConvLayer, second: ConvLayer },
    Fc(Linear),
    None,
}

struct Net {
    embed: Option<Linear>,
    encoder: LstmCell,
    social: SocialBranch,
    dynamics: Linear,
    lateral: Option<Linear>,
    longitudinal: Option<Linear>,
    decoder: LstmCell,
    head: Linear,
}

/// The trajectory forecaster. Parameters live in a [`ParamStore`]; every
/// forward pass builds a fresh graph over them.
pub struct CspModel {
    config: ModelConfig,
    params: ParamStore,
    net: Net,
}

/// Vehicle histories and grid assignments for one batch. Rows `0..batch`
/// of the history block are the egos; neighbors follow.
struct Prepared {
    batch: usize,
    vehicles: usize,
    history: Vec<f64>,
    cells: Vec<Option<usize>>,
}

/// Graph handles of the per-step Gaussian parameters, each `[rows·25, 1]`.
struct Outputs {
    mu_x: Var,
    mu_y: Var,
    sigma_x: Var,
    sigma_y: Var,
    rho: Var,
}

/// Maps one raw head output `(μx, μy, log σx, log σy, atanh-ish ρ)` to a
/// valid Gaussian, exactly as the network does.
pub fn gaussian_from_raw(raw: [f64; 5], config: &ModelConfig) -> BivariateGaussian {
    let sx = config.lateral_scale_ft;
    let sy = config.longitudinal_scale_ft;
    let sigma = |r: f64, s: f64| config.sigma_floor_ft + s * r.clamp(-SIGMA_RAW_LIMIT, SIGMA_RAW_LIMIT).exp();
    BivariateGaussian {
        mu_x: raw[0] * sx,
        mu_y: raw[1] * sy,
        sigma_x: sigma(raw[2], sx),
        sigma_y: sigma(raw[3], sy),
        rho: (1.0 - config.rho_margin) * raw[4].tanh(),
    }
}

fn check_onehot(v: &[f64], n: usize, what: &str) -> Result<usize> {
    let ones: Vec<usize> = v.iter().enumerate().filter(|(_, x)| **x == 1.0).map(|(i, _)| i).collect();
    if v.len() != n || ones.len() != 1 || v.iter().any(|x| *x != 0.0 && *x != 1.0) {
        return Err(ModelError::Contract(format!("{what} one-hot must have length {n} and exactly one 1, got {v:?}")));
    }
    Ok(ones[0])
}

fn onehot_row(lat: Lateral, lon: Longitudinal) -> [f64; 5] {
    let mut row = [0.0; 5];
    row[lat.index()] = 1.0;
    row[3 + lon.index()] = 1.0;
    row
}

impl CspModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = config.encoder_dim;
        let embed = if config.embed_dim > 0 {
            Some(Linear::new(&mut store, &mut rng, "encoder.embed", 2, config.embed_dim)?)
        } else {
            None
        };
        let encoder_in = if config.embed_dim > 0 { config.embed_dim } else { 2 };
        let encoder = LstmCell::new(&mut store, &mut rng, "encoder.lstm", encoder_in, h)?;
        let social = match config.mode.social() {
            SocialKind::Convolutional => SocialBranch::Conv {
                first: ConvLayer::new(&mut store, &mut rng, "social.conv1", h, config.conv1_channels, config.conv1_kernel, (0, 0))?,
                second: ConvLayer::new(
                    &mut store,
                    &mut rng,
                    "social.conv2",
                    config.conv1_channels,
                    config.conv2_channels,
                    config.conv2_kernel,
                    (0, 0),
                )?,
            },
            SocialKind::FullyConnected => {
                SocialBranch::Fc(Linear::new(&mut store, &mut rng, "social.fc", h * GRID_CELLS, config.social_dim()?)?)
            }
            SocialKind::None => SocialBranch::None,
        };
        let dynamics = Linear::new(&mut store, &mut rng, "dynamics", h, config.dynamics_dim)?;
        let enc = config.encoding_dim()?;
        let (lateral, longitudinal) = if config.mode.uses_maneuvers() {
            (
                Some(Linear::new(&mut store, &mut rng, "maneuver.lateral", enc, 3)?),
                Some(Linear::new(&mut store, &mut rng, "maneuver.longitudinal", enc, 2)?),
            )
        } else {
            (None, None)
        };
        let decoder_in = enc + if config.mode.uses_maneuvers() { 5 } else { 0 };
        let decoder = LstmCell::new(&mut store, &mut rng, "decoder.lstm", decoder_in, config.decoder_dim)?;
        let head = Linear::new(&mut store, &mut rng, "decoder.head", config.decoder_dim, 5)?;
        Ok(CspModel {
            config,
            params: store,
            net: Net {
                embed,
                encoder,
                social,
                dynamics,
                lateral,
                longitudinal,
                decoder,
                head,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> ModelMode {
        self.config.mode
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Checkpoint carrying the architecture under `model.*` metadata keys.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: self
                .config
                .to_pairs()
                .into_iter()
                .map(|(k, v)| (format!("{CHECKPOINT_PREFIX}{k}"), v))
                .collect(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut config = ModelConfig::default();
        for (k, v) in &ckpt.meta {
            if let Some(key) = k.strip_prefix(CHECKPOINT_PREFIX) {
                config.set(key, v)?;
            }
        }
        let mut model = CspModel::new(config, 0)?;
        model.params.load_values(&ckpt.params)?;
        if ckpt.params.len() != model.params.len() {
            return Err(ModelError::Config(format!(
                "checkpoint holds {} parameters, architecture expects {}",
                ckpt.params.len(),
                model.params.len()
            )));
        }
        Ok(model)
    }

    // ----- batch assembly ---------------------------------------------------

    fn scaled(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0] / self.config.lateral_scale_ft, p[1] / self.config.longitudinal_scale_ft]
    }

    fn prepare(&self, instances: &[&PredictionInstance]) -> Result<Prepared> {
        if instances.is_empty() {
            return Err(ModelError::Input("empty batch".into()));
        }
        let batch = instances.len();
        let mut history = Vec::with_capacity(batch * HISTORY_LEN * 2 * 4);
        let push = |h: &[[f64; 2]], out: &mut Vec<f64>, who: &str| -> Result<()> {
            if h.len() != HISTORY_LEN {
                return Err(ModelError::Input(format!("{who} history has {} points, expected {HISTORY_LEN}", h.len())));
            }
            for &p in h {
                out.extend_from_slice(&self.scaled(p));
            }
            Ok(())
        };
        for inst in instances {
            push(&inst.history, &mut history, "ego")?;
        }
        let mut vehicles = batch;
        let mut cells = vec![None; if self.config.mode.social() == SocialKind::None { 0 } else { batch * GRID_CELLS }];
        if !cells.is_empty() {
            for (b, inst) in instances.iter().enumerate() {
                for (cell, who) in occupancy(&inst.neighbors).iter().enumerate() {
                    if let Some(i) = who {
                        push(&inst.neighbors[*i].history, &mut history, "neighbor")?;
                        cells[b * GRID_CELLS + cell] = Some(vehicles);
                        vehicles += 1;
                    }
                }
            }
        }
        Ok(Prepared {
            batch,
            vehicles,
            history,
            cells,
        })
    }

    // ----- graph pieces -----------------------------------------------------

    /// Final encoder hidden states `[n, H]` for `n` histories laid out as
    /// `[n·16, 2]` rows ordered (vehicle, step).
    fn encode_graph(&self, g: &mut Graph, p: &Bound, history: Var, n: usize) -> Result<Var> {
        let h = self.config.encoder_dim;
        let mut x = history;
        if let Some(embed) = &self.net.embed {
            let e = embed.forward(g, p, x)?;
            x = g.leaky_relu(e, LEAKY_RELU_ALPHA);
        }
        let proj = self.net.encoder.project_input(g, p, x)?;
        let proj = g.reshape(proj, &[n, HISTORY_LEN * 4 * h])?;
        let mut hs = g.constant(Tensor::zeros(&[n, h]));
        let mut cs = g.constant(Tensor::zeros(&[n, h]));
        for k in 0..HISTORY_LEN {
            let xw = g.slice_last(proj, k * 4 * h, 4 * h)?;
            (hs, cs) = self.net.encoder.step_projected(g, p, xw, hs, cs)?;
        }
        Ok(hs)
    }

    /// Social context `[B, S]` from a grid `[B, H, 13, 3]`.
    fn social_graph(&self, g: &mut Graph, p: &Bound, grid: Var) -> Result<Var> {
        let b = g.shape(grid)[0];
        match &self.net.social {
            SocialBranch::Conv { first, second } => {
                let a = first.forward(g, p, grid)?;
                let a = g.leaky_relu(a, LEAKY_RELU_ALPHA);
                let a = second.forward(g, p, a)?;
                let a = g.leaky_relu(a, LEAKY_RELU_ALPHA);
                let (ph, pw) = self.config.pool;
                let a = g.max_pool2d(a, ph, pw)?;
                let width = g.shape(a)[1..].iter().product();
                Ok(g.reshape(a, &[b, width])?)
            }
            SocialBranch::Fc(fc) => {
                let flat = g.reshape(grid, &[b, self.config.encoder_dim * GRID_CELLS])?;
                let a = fc.forward(g, p, flat)?;
                Ok(g.leaky_relu(a, LEAKY_RELU_ALPHA))
            }
            SocialBranch::None => Err(ModelError::Contract(format!("{} has no social pooling", self.config.mode))),
        }
    }

    fn dynamics_graph(&self, g: &mut Graph, p: &Bound, ego: Var) -> Result<Var> {
        let d = self.net.dynamics.forward(g, p, ego)?;
        Ok(g.leaky_relu(d, LEAKY_RELU_ALPHA))
    }

    /// Trajectory encodings `[B, E]`.
    fn encoding_graph(&self, g: &mut Graph, p: &Bound, prep: &Prepared) -> Result<Var> {
        let hist = g.constant(Tensor::new(&[prep.vehicles * HISTORY_LEN, 2], prep.history.clone())?);
        let states = self.encode_graph(g, p, hist, prep.vehicles)?;
        let ego = g.gather_rows(states, (0..prep.batch).map(Some).collect())?;
        let dynamics = self.dynamics_graph(g, p, ego)?;
        if self.config.mode.social() == SocialKind::None {
            return Ok(dynamics);
        }
        let h = self.config.encoder_dim;
        let cells = g.gather_rows(states, prep.cells.clone())?;
        let cells = g.reshape(cells, &[prep.batch, GRID_CELLS, h])?;
        let chw = g.swap_last2(cells)?;
        let grid = g.reshape(chw, &[prep.batch, h, GRID_ROWS, GRID_COLS])?;
        let social = self.social_graph(g, p, grid)?;
        Ok(g.concat(&[social, dynamics])?)
    }

    /// Log class probabilities `([B, 3], [B, 2])`.
    fn maneuver_graph(&self, g: &mut Graph, p: &Bound, enc: Var) -> Result<(Var, Var)> {
        let (Some(lat), Some(lon)) = (&self.net.lateral, &self.net.longitudinal) else {
            return Err(ModelError::Contract(format!("{} has no maneuver heads", self.config.mode)));
        };
        let a = lat.forward(g, p, enc)?;
        let b = lon.forward(g, p, enc)?;
        Ok((g.log_softmax(a), g.log_softmax(b)))
    }

    /// Unrolls the decoder over the horizon for every row of `input`.
    fn decode_graph(&self, g: &mut Graph, p: &Bound, input: Var) -> Result<Outputs> {
        let rows = g.shape(input)[0];
        let hd = self.config.decoder_dim;
        let xw = self.net.decoder.project_input(g, p, input)?;
        let mut h = g.constant(Tensor::zeros(&[rows, hd]));
        let mut c = g.constant(Tensor::zeros(&[rows, hd]));
        let mut states = Vec::with_capacity(FUTURE_LEN);
        for _ in 0..FUTURE_LEN {
            (h, c) = self.net.decoder.step_projected(g, p, xw, h, c)?;
            states.push(h);
        }
        let all = g.concat(&states)?;
        let all = g.reshape(all, &[rows * FUTURE_LEN, hd])?;
        let raw = self.net.head.forward(g, p, all)?;
        let cfg = &self.config;
        let col = |g: &mut Graph, i: usize| g.slice_last(raw, i, 1);
        let mx = col(g, 0)?;
        let my = col(g, 1)?;
        let lsx = col(g, 2)?;
        let lsy = col(g, 3)?;
        let r = col(g, 4)?;
        let sigma = |g: &mut Graph, v: Var, s: f64| {
            let v = g.clamp(v, -SIGMA_RAW_LIMIT, SIGMA_RAW_LIMIT);
            let v = g.exp(v);
            let v = g.scale(v, s);
            g.offset(v, cfg.sigma_floor_ft)
        };
        let sigma_x = sigma(g, lsx, cfg.lateral_scale_ft);
        let sigma_y = sigma(g, lsy, cfg.longitudinal_scale_ft);
        let rho = g.tanh(r);
        Ok(Outputs {
            mu_x: g.scale(mx, cfg.lateral_scale_ft),
            mu_y: g.scale(my, cfg.longitudinal_scale_ft),
            sigma_x,
            sigma_y,
            rho: g.scale(rho, 1.0 - cfg.rho_margin),
        })
    }

    fn read_sequences(g: &Graph, out: &Outputs, rows: usize) -> Vec<GaussianParamSequence> {
        let (mx, my, sx, sy, r) =
            (g.value(out.mu_x), g.value(out.mu_y), g.value(out.sigma_x), g.value(out.sigma_y), g.value(out.rho));
        (0..rows)
            .map(|m| GaussianParamSequence {
                steps: (m * FUTURE_LEN..(m + 1) * FUTURE_LEN)
                    .map(|i| BivariateGaussian {
                        mu_x: mx[i],
                        mu_y: my[i],
                        sigma_x: sx[i],
                        sigma_y: sy[i],
                        rho: r[i],
                    })
                    .collect(),
            })
            .collect()
    }

    /// Summed per-step bivariate NLL (feet) of `truth` under `out`, one
    /// value per row, as `[rows·25, 1]` terms summed to a scalar.
    fn nll_graph(g: &mut Graph, out: &Outputs, truth: &[[f64; 2]]) -> Result<Var> {
        let n = truth.len();
        let tx = g.constant(Tensor::new(&[n, 1], truth.iter().map(|p| p[0]).collect())?);
        let ty = g.constant(Tensor::new(&[n, 1], truth.iter().map(|p| p[1]).collect())?);
        let ex = g.sub(tx, out.mu_x)?;
        let dx = g.div(ex, out.sigma_x)?;
        let ey = g.sub(ty, out.mu_y)?;
        let dy = g.div(ey, out.sigma_y)?;
        let rho2 = g.square(out.rho);
        let neg = g.scale(rho2, -1.0);
        let one_m = g.offset(neg, 1.0);
        let dx2 = g.square(dx);
        let dy2 = g.square(dy);
        let quad = g.add(dx2, dy2)?;
        let dxy = g.mul(dx, dy)?;
        let cross = g.mul(out.rho, dxy)?;
        let cross = g.scale(cross, -2.0);
        let z = g.add(quad, cross)?;
        let two_om = g.scale(one_m, 2.0);
        let zterm = g.div(z, two_om)?;
        let lsx = g.log(out.sigma_x);
        let lsy = g.log(out.sigma_y);
        let lom = g.log(one_m);
        let half_lom = g.scale(lom, 0.5);
        let a = g.add(lsx, lsy)?;
        let a = g.add(a, half_lom)?;
        let a = g.add(a, zterm)?;
        let a = g.offset(a, LN_2PI);
        Ok(g.sum(a))
    }

    /// Training objective on a batch: mean over instances of the summed
    /// NLL of the true future under the true-maneuver sequence, minus the
    /// log probability of the true maneuvers (times `maneuver_loss_weight`)
    /// when the model predicts them.
    pub fn build_loss(&self, g: &mut Graph, p: &Bound, instances: &[&PredictionInstance]) -> Result<Var> {
        let prep = self.prepare(instances)?;
        let b = prep.batch;
        let enc = self.encoding_graph(g, p, &prep)?;
        let mut truth = Vec::with_capacity(b * FUTURE_LEN);
        for inst in instances {
            if inst.future.len() != FUTURE_LEN {
                return Err(ModelError::Input(format!("future has {} points, expected {FUTURE_LEN}", inst.future.len())));
            }
            truth.extend_from_slice(&inst.future);
        }
        if !self.config.mode.uses_maneuvers() {
            let out = self.decode_graph(g, p, enc)?;
            let nll = Self::nll_graph(g, &out, &truth)?;
            return Ok(g.scale(nll, 1.0 / b as f64));
        }
        let (lat_lp, lon_lp) = self.maneuver_graph(g, p, enc)?;
        let hot: Vec<f64> = instances.iter().flat_map(|i| onehot_row(i.lateral, i.longitudinal)).collect();
        let hot_t = Tensor::new(&[b, 5], hot.clone())?;
        let onehots = g.constant(hot_t);
        let input = g.concat(&[enc, onehots])?;
        let out = self.decode_graph(g, p, input)?;
        let nll = Self::nll_graph(g, &out, &truth)?;
        let lat_hot = g.constant(Tensor::new(&[b, 3], hot.chunks(5).flat_map(|r| r[..3].to_vec()).collect())?);
        let lon_hot = g.constant(Tensor::new(&[b, 2], hot.chunks(5).flat_map(|r| r[3..].to_vec()).collect())?);
        let lat_t = g.mul(lat_lp, lat_hot)?;
        let lon_t = g.mul(lon_lp, lon_hot)?;
        let lat_s = g.sum(lat_t);
        let lon_s = g.sum(lon_t);
        let ce = g.add(lat_s, lon_s)?;
        let ce = g.scale(ce, self.config.maneuver_loss_weight);
        let total = g.sub(nll, ce)?;
        Ok(g.scale(total, 1.0 / b as f64))
    }

    pub fn training_loss(&self, instances: &[&PredictionInstance]) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let loss = self.build_loss(&mut g, &p, instances)?;
        Ok(g.scalar(loss))
    }

    /// Evaluates the loss and adds its gradient into every parameter.
    pub fn accumulate_gradients(&mut self, instances: &[&PredictionInstance]) -> Result<f64> {
        let (value, bound, grads) = {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g);
            let loss = self.build_loss(&mut g, &p, instances)?;
            let grads = g.backward(loss)?;
            (g.scalar(loss), p, grads)
        };
        self.params.accumulate(&bound, &grads)?;
        Ok(value)
    }

    // ----- value-level blocks ----------------------------------------------

    /// Final encoder state of one history.
    pub fn encode_vehicle(&self, history: &[[f64; 2]]) -> Result<Vec<f64>> {
        if history.len() != HISTORY_LEN {
            return Err(ModelError::Input(format!("history has {} points, expected {HISTORY_LEN}", history.len())));
        }
        let data = history.iter().flat_map(|&p| self.scaled(p)).collect();
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let x = g.constant(Tensor::new(&[HISTORY_LEN, 2], data)?);
        let h = self.encode_graph(&mut g, &p, x, 1)?;
        Ok(g.value(h).to_vec())
    }

    pub fn social_pool(&self, tensor: &SocialTensor) -> Result<Vec<f64>> {
        let h = self.config.encoder_dim;
        if tensor.dim() != h {
            return Err(ModelError::Input(format!("social tensor of dim {}, encoder has {h}", tensor.dim())));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let grid = g.constant(Tensor::new(&[1, h, GRID_ROWS, GRID_COLS], tensor.to_chw())?);
        let out = self.social_graph(&mut g, &p, grid)?;
        Ok(g.value(out).to_vec())
    }

    pub fn dynamics_encode(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let x = g.constant(Tensor::new(&[1, state.len()], state.to_vec())?);
        let out = self.dynamics_graph(&mut g, &p, x)?;
        Ok(g.value(out).to_vec())
    }

    /// Decodes one trajectory encoding. Maneuver-aware models need a
    /// one-hot for each axis; the others take empty slices.
    pub fn decode(&self, encoding: &[f64], lateral: &[f64], longitudinal: &[f64]) -> Result<GaussianParamSequence> {
        let mut input = encoding.to_vec();
        if self.config.mode.uses_maneuvers() {
            check_onehot(lateral, 3, "lateral")?;
            check_onehot(longitudinal, 2, "longitudinal")?;
            input.extend_from_slice(lateral);
            input.extend_from_slice(longitudinal);
        } else if !lateral.is_empty() || !longitudinal.is_empty() {
            return Err(ModelError::Contract(format!("{} takes no maneuver one-hots", self.config.mode)));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let x = g.constant(Tensor::new(&[1, input.len()], input)?);
        let out = self.decode_graph(&mut g, &p, x)?;
        Ok(Self::read_sequences(&g, &out, 1).remove(0))
    }

    /// Trajectory encoding of one instance.
    pub fn encoding(&self, instance: &PredictionInstance) -> Result<Vec<f64>> {
        let prep = self.prepare(&[instance])?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let enc = self.encoding_graph(&mut g, &p, &prep)?;
        Ok(g.value(enc).to_vec())
    }

    pub fn predict(&self, instance: &PredictionInstance) -> Result<PredictiveDistribution> {
        Ok(self.predict_chunk(&[instance])?.remove(0))
    }

    fn predict_chunk(&self, instances: &[&PredictionInstance]) -> Result<Vec<PredictiveDistribution>> {
        let prep = self.prepare(instances)?;
        let b = prep.batch;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let enc = self.encoding_graph(&mut g, &p, &prep)?;
        if !self.config.mode.uses_maneuvers() {
            let out = self.decode_graph(&mut g, &p, enc)?;
            return Ok(Self::read_sequences(&g, &out, b).into_iter().map(PredictiveDistribution::unimodal).collect());
        }
        let (lat_lp, lon_lp) = self.maneuver_graph(&mut g, &p, enc)?;
        let index = (0..b).flat_map(|i| std::iter::repeat_n(Some(i), MANEUVER_COUNT)).collect();
        let rep = g.gather_rows(enc, index)?;
        let hot: Vec<f64> = (0..b).flat_map(|_| maneuvers().flat_map(|(a, o)| onehot_row(a, o))).collect();
        let hot = g.constant(Tensor::new(&[b * MANEUVER_COUNT, 5], hot)?);
        let input = g.concat(&[rep, hot])?;
        let out = self.decode_graph(&mut g, &p, input)?;
        let mut seqs = Self::read_sequences(&g, &out, b * MANEUVER_COUNT).into_iter();
        let lat = g.value(lat_lp);
        let lon = g.value(lon_lp);
        Ok((0..b)
            .map(|i| {
                let m = ManeuverDistribution {
                    lateral: [lat[3 * i].exp(), lat[3 * i + 1].exp(), lat[3 * i + 2].exp()],
                    longitudinal: [lon[2 * i].exp(), lon[2 * i + 1].exp()],
                };
                PredictiveDistribution::multimodal(m, seqs.by_ref().take(MANEUVER_COUNT).collect())
            })
            .collect())
    }

    pub fn predict_all(&self, instances: &[PredictionInstance]) -> Result<Vec<PredictiveDistribution>> {
        let mut out = Vec::with_capacity(instances.len());
        for chunk in instances.chunks(PREDICT_CHUNK) {
            let refs: Vec<&PredictionInstance> = chunk.iter().collect();
            out.extend(self.predict_chunk(&refs)?);
        }
        Ok(out)
    }

    /// Grid cell of every neighbor that reaches the social tensor.
    pub fn occupied_cells(instance: &PredictionInstance) -> Vec<(usize, usize)> {
        occupancy(&instance.neighbors)
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_some())
            .map(|(i, _)| (i / GRID_COLS, i % GRID_COLS))
            .collect()
    }
}

impl Predictor for CspModel {
    fn name(&self) -> String {
        self.config.mode.name().to_string()
    }

    fn predict_batch(&self, instances: &[PredictionInstance]) -> crate::Result<Vec<PredictiveDistribution>> {
        Ok(self.predict_all(instances)?)
    }
}
