//! Windowed motion VAE: `q(z | x_{t:t+w})` and `p(x_{t:t+w} | z)` with a
//! standard-normal prior.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{AgentKind, Normalizer, WindowSpec};
use crate::error::{shape_err, Error, Result};
use crate::nn::gaussian::{gaussian_loglik, kl_diag_gaussian, reparameterize, standard_normal_vec, GaussianParams};
use crate::nn::layers::mlp_forward_batch;
use crate::nn::{Activation, AdamConfig, AdamState, GaussianHead, Graph, Mat, ParamSet, Var};
use crate::train::{EpochSchedule, TrainTrace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub window: WindowSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    /// Linear KL warm-up length in epochs; 0 keeps the KL weight at 1.
    pub kl_warmup_epochs: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            hidden: vec![256, 256],
            activation: Activation::Tanh,
            window: WindowSpec::default(),
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            kl_warmup_epochs: 0,
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.window.w == 0 || self.window.stride == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("latent_dim, window and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidArgument("learning_rate must be > 0 and lr_decay in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> EpochSchedule {
        EpochSchedule {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            lr_decay: self.lr_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    pub config: EmbeddingConfig,
    pub agent_kind: AgentKind,
    /// Values per frame.
    pub dims: usize,
    pub normalizer: Normalizer,
    pub params: ParamSet,
    pub encoder: GaussianHead,
    pub decoder: GaussianHead,
}

/// One-sample evidence lower bound and its two parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboParts {
    pub elbo: f64,
    pub loglik: f64,
    pub kl: f64,
}

/// Batch posterior or likelihood parameters, one row per window.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBatch {
    pub mean: Mat,
    pub log_var: Mat,
}

impl GaussianBatch {
    pub fn row(&self, r: usize) -> GaussianParams {
        GaussianParams {
            mean: self.mean.row(r).to_vec(),
            log_var: self.log_var.row(r).to_vec(),
        }
    }
}

fn split_batch(out: &Mat, dim: usize) -> GaussianBatch {
    let rows = out.rows();
    let mut mean = Mat::zeros(rows, dim);
    let mut log_var = Mat::zeros(rows, dim);
    for r in 0..rows {
        let o = out.row(r);
        mean.row_mut(r).copy_from_slice(&o[..dim]);
        for (d, v) in log_var.row_mut(r).iter_mut().zip(&o[dim..]) {
            *d = crate::nn::gaussian::clamp_log_var(*v);
        }
    }
    GaussianBatch { mean, log_var }
}

pub fn model_kind(kind: AgentKind) -> &'static str {
    match kind {
        AgentKind::Human => "embedding-human",
        AgentKind::Robot => "embedding-robot",
    }
}

impl EmbeddingModel {
    /// Fresh model with Glorot-initialized weights drawn from `config.seed`.
    pub fn new(config: EmbeddingConfig, agent_kind: AgentKind, normalizer: Normalizer) -> Result<Self> {
        config.validate()?;
        if normalizer.kind != agent_kind {
            return Err(Error::InvalidArgument("normalizer was fitted on another agent kind".into()));
        }
        let dims = normalizer.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let x_dim = config.window.w * dims;
        let encoder = GaussianHead::new(&mut params, "encoder", x_dim, &config.hidden, config.latent_dim, config.activation, &mut rng);
        let mut rev = config.hidden.clone();
        rev.reverse();
        let decoder = GaussianHead::new(&mut params, "decoder", config.latent_dim, &rev, x_dim, config.activation, &mut rng);
        Ok(Self {
            config,
            agent_kind,
            dims,
            normalizer,
            params,
            encoder,
            decoder,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn window_len(&self) -> usize {
        self.config.window.w
    }

    /// Flat window length `w * dims`.
    pub fn x_dim(&self) -> usize {
        self.config.window.w * self.dims
    }

    pub fn encode(&self, window: &[f64]) -> Result<GaussianParams> {
        if window.len() != self.x_dim() {
            return Err(shape_err("encode", self.x_dim(), window.len()));
        }
        self.encoder.forward(&self.params, window)
    }

    pub fn decode(&self, z: &[f64]) -> Result<GaussianParams> {
        if z.len() != self.latent_dim() {
            return Err(shape_err("decode", self.latent_dim(), z.len()));
        }
        self.decoder.forward(&self.params, z)
    }

    pub fn encode_batch(&self, windows: &Mat) -> Result<GaussianBatch> {
        if windows.cols() != self.x_dim() {
            return Err(shape_err("encode_batch", self.x_dim(), windows.cols()));
        }
        Ok(split_batch(&mlp_forward_batch(&self.encoder.mlp, &self.params, windows)?, self.latent_dim()))
    }

    pub fn decode_batch(&self, z: &Mat) -> Result<GaussianBatch> {
        if z.cols() != self.latent_dim() {
            return Err(shape_err("decode_batch", self.latent_dim(), z.cols()));
        }
        Ok(split_batch(&mlp_forward_batch(&self.decoder.mlp, &self.params, z)?, self.x_dim()))
    }

    /// Single-sample ELBO with the supplied standard-normal `noise`.
    pub fn elbo(&self, window: &[f64], noise: &[f64]) -> Result<ElboParts> {
        let q = self.encode(window)?;
        let z = reparameterize(&q, noise)?;
        let px = self.decode(&z)?;
        let loglik = gaussian_loglik(window, &px)?;
        let kl = kl_diag_gaussian(&q, &GaussianParams::standard(self.latent_dim()))?;
        Ok(ElboParts {
            elbo: loglik - kl,
            loglik,
            kl,
        })
    }

    /// Records the batch ELBO on `g`: returns per-row `(loglik, kl)` nodes.
    pub fn elbo_graph(&self, g: &mut Graph<'_>, x: Var, noise: Mat) -> Result<(Var, Var)> {
        let rows = g.value(x).rows();
        let (qm, qlv) = self.encoder.forward_graph(g, x)?;
        let z = g.reparam(qm, qlv, noise)?;
        let (pm, plv) = self.decoder.forward_graph(g, z)?;
        let loglik = g.loglik(x, pm, plv)?;
        let zeros = g.input(Mat::zeros(rows, self.latent_dim()));
        let kl = g.kl_diag(qm, qlv, zeros, zeros)?;
        Ok((loglik, kl))
    }

    /// Mean `-ELBO` per window over a batch, with KL weight `beta`.
    pub fn batch_loss<'a>(&self, g: &mut Graph<'a>, x: &Mat, noise: Mat, beta: f64) -> Result<Var> {
        let xv = g.input(x.clone());
        let (loglik, kl) = self.elbo_graph(g, xv, noise)?;
        let kl = g.affine(kl, beta, 0.0);
        let elbo = g.sub(loglik, kl)?;
        let total = g.sum_all(elbo);
        Ok(g.affine(total, -1.0 / x.rows() as f64, 0.0))
    }

    /// Posterior-mean reconstruction of every row.
    pub fn reconstruct(&self, windows: &Mat) -> Result<Mat> {
        let q = self.encode_batch(windows)?;
        Ok(self.decode_batch(&q.mean)?.mean)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(model_kind(self.agent_kind), &self.config, Some(&self.normalizer))?;
        c.push_params("", &self.params);
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(&["embedding-human", "embedding-robot"])?;
        let kind = if c.header.model_kind == "embedding-human" {
            AgentKind::Human
        } else {
            AgentKind::Robot
        };
        let mut m = Self::new(c.config()?, kind, c.normalizer()?.clone())?;
        c.load_params("", &mut m.params)?;
        Ok(m)
    }
}

/// Per-frame-dimension RMSE of posterior-mean reconstructions, averaged over
/// every window position (normalized units).
pub fn reconstruction_rmse(model: &EmbeddingModel, windows: &Mat) -> Result<Vec<f64>> {
    let rec = model.reconstruct(windows)?;
    let mut sq = vec![0.0; model.dims];
    for (a, b) in windows.data().iter().zip(rec.data()).enumerate().map(|(i, (a, b))| (i, a - b)) {
        sq[a % model.dims] += b * b;
    }
    let n = (windows.data().len() / model.dims) as f64;
    Ok(sq.into_iter().map(|s| (s / n).sqrt()).collect())
}

/// Minibatch Adam on `-ELBO`. `windows` holds normalized flat windows, one per
/// row. Returns the model and the per-epoch mean loss.
pub fn train_embedding(
    windows: &Mat,
    agent_kind: AgentKind,
    normalizer: Normalizer,
    config: &EmbeddingConfig,
) -> Result<(EmbeddingModel, TrainTrace)> {
    let mut model = EmbeddingModel::new(config.clone(), agent_kind, normalizer)?;
    if windows.rows() == 0 {
        return Err(Error::InsufficientData("no training windows".into()));
    }
    if windows.cols() != model.x_dim() {
        return Err(shape_err("train_embedding windows", model.x_dim(), windows.cols()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..windows.rows()).collect();
    let mut trace = TrainTrace::default();
    let schedule = config.schedule();
    for epoch in 0..config.epochs {
        adam.set_learning_rate(schedule.learning_rate(epoch));
        let beta = if config.kl_warmup_epochs > 0 {
            ((epoch + 1) as f64 / config.kl_warmup_epochs as f64).min(1.0)
        } else {
            1.0
        };
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = windows.select_rows(chunk);
            let noise = Mat::from_vec(chunk.len(), model.latent_dim(), standard_normal_vec(&mut rng, chunk.len() * model.latent_dim()));
            let mut g = Graph::new(&model.params);
            let loss = model.batch_loss(&mut g, &x, noise, beta)?;
            let value = g.value(loss).get(0, 0);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("embedding loss at epoch {epoch}, batch {b}: {value}")));
            }
            let grads = g.backward(loss)?;
            drop(g);
            adam.step(&mut model.params, &grads)?;
            total += value * chunk.len() as f64;
        }
        let mean = total / windows.rows() as f64;
        log::debug!("embedding epoch {epoch}: loss {mean:.4}");
        trace.epoch_loss.push(mean);
    }
    Ok((model, trace))
}
