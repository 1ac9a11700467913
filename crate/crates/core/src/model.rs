//! The functional neural ODE: encoders for `z0` and `γ`, the hypernetwork
//! `γ ↦ θ`, the latent ODE `dz/dt = f_θ(z, t)`, the decoder, and the
//! annealed evidence lower bound used to train them.

use std::f64::consts::PI;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grad::{Bound, Program};
use crate::nets::{
    forward_layers, slice_layers, Decoder, Encoder, FinalActivation, GaussianParams, GaussianVars, Hypernetwork, Layer,
    MlpSpec,
};
use crate::odeint::{integrate, SolverConfig, TimeGrid, VectorField};
use crate::syndata::{PanelDataset, Trajectory};
use crate::tape::{Tape, Var};
use crate::tensor::{ParamSet, Tensor};

pub const ENC_Z0: &str = "enc_z0";
pub const ENC_GAMMA: &str = "enc_gamma";
pub const HYPER: &str = "hyper";
pub const DECODER: &str = "dec";

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Latent width `p`.
    pub latent_dim: usize,
    pub gamma_dim: usize,
    pub obs_dim: usize,
    /// Most observations an encoder accepts per trajectory.
    pub slots: usize,
    pub field_hidden: Vec<usize>,
    pub hyper_hidden: Vec<usize>,
    pub z0_encoder_hidden: Vec<usize>,
    pub gamma_encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Observation noise standard deviation of the likelihood.
    pub sigma_x: f64,
    pub step_size: f64,
    pub lambda_init: f64,
    /// Time at which `z0` lives; observation times must not precede it.
    pub t0: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 8,
            gamma_dim: 16,
            obs_dim: 1,
            slots: 10,
            field_hidden: vec![100, 100],
            hyper_hidden: vec![128, 128],
            z0_encoder_hidden: vec![16],
            gamma_encoder_hidden: vec![64, 64],
            decoder_hidden: vec![64],
            sigma_x: 0.05,
            step_size: 0.1,
            lambda_init: 0.1,
            t0: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.latent_dim, self.gamma_dim, self.obs_dim, self.slots];
        if dims.contains(&0) {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if !(self.sigma_x > 0.0 && self.sigma_x.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma_x must be positive, got {}",
                self.sigma_x
            )));
        }
        if !(self.step_size > 0.0) || !self.lambda_init.is_finite() || !self.t0.is_finite() {
            return Err(Error::invalid("step size must be positive; lambda_init and t0 finite"));
        }
        if self.z0_encoder_hidden.is_empty() || self.gamma_encoder_hidden.is_empty() {
            return Err(Error::invalid("encoders need at least one hidden layer"));
        }
        Ok(())
    }

    /// Architecture of `f_θ`: `[p + 1, hidden.., p]`, the extra input being time.
    pub fn field_spec(&self) -> Result<MlpSpec> {
        let mut widths = vec![self.latent_dim + 1];
        widths.extend_from_slice(&self.field_hidden);
        widths.push(self.latent_dim);
        MlpSpec::new(widths, FinalActivation::None)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FnodeModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub enc_z0: Encoder,
    pub enc_gamma: Encoder,
    pub hyper: Hypernetwork,
    pub field: MlpSpec,
    pub decoder: Decoder,
    pub solver: SolverConfig,
}

/// Evidence lower bound of one trajectory, split into its terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ElboBreakdown {
    pub total: f64,
    pub recon_loglik: f64,
    pub kl_z0: f64,
    pub kl_gamma: f64,
    pub kl_weight: f64,
}

impl ElboBreakdown {
    fn new(recon_loglik: f64, kl_z0: f64, kl_gamma: f64, kl_weight: f64) -> Self {
        ElboBreakdown {
            total: recon_loglik - kl_weight * (kl_z0 + kl_gamma),
            recon_loglik,
            kl_z0,
            kl_gamma,
            kl_weight,
        }
    }

    pub fn mean(items: &[ElboBreakdown]) -> ElboBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = ElboBreakdown::default();
        for b in items {
            m.total += b.total / n;
            m.recon_loglik += b.recon_loglik / n;
            m.kl_z0 += b.kl_z0 / n;
            m.kl_gamma += b.kl_gamma / n;
            m.kl_weight += b.kl_weight / n;
        }
        m
    }
}

/// Output of [`forward`] for one trajectory.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub recon: Vec<Tensor>,
    pub z_path: Vec<Tensor>,
    pub z0: Tensor,
    pub gamma: Tensor,
    pub q_z0: GaussianParams,
    pub q_gamma: GaussianParams,
}

/// `f_θ(z, t)` with weights sliced from a `θ` node.
struct FunctionalField<'a> {
    spec: &'a MlpSpec,
    layers: Vec<Layer>,
}

impl VectorField for FunctionalField<'_> {
    fn eval(&self, tape: &mut Tape, z: Var, t: f64) -> Result<Var> {
        let time = tape.scalar(t);
        let input = tape.concat(&[z, time])?;
        forward_layers(tape, self.spec, &self.layers, input)
    }
}

/// `μ + exp(log_var / 2) ⊙ noise`.
pub fn reparameterize(g: &GaussianParams, noise: &Tensor) -> Result<Tensor> {
    if noise.len() != g.dim() {
        return Err(Error::shape(
            "reparameterize",
            format!("noise width {} vs distribution width {}", noise.len(), g.dim()),
        ));
    }
    let data = g
        .mean
        .data()
        .iter()
        .zip(g.log_var.data())
        .zip(noise.data())
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    Tensor::new(g.mean.shape().to_vec(), data)
}

fn reparameterize_vars(tape: &mut Tape, q: GaussianVars, noise: Var) -> Result<Var> {
    let half = tape.scale(q.log_var, 0.5)?;
    let std = tape.exp(half)?;
    let scaled = tape.mul(std, noise)?;
    tape.add(q.mean, scaled)
}

/// `KL(N(μ, diag(exp(log_var))) ‖ N(0, I))`.
pub fn kl_gaussian(q: &GaussianParams) -> f64 {
    0.5 * q
        .mean
        .data()
        .iter()
        .zip(q.log_var.data())
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// Sum over all entries of the elementwise Gaussian KL.
fn kl_vars(tape: &mut Tape, q: GaussianVars) -> Result<Var> {
    let var = tape.exp(q.log_var)?;
    let m2 = tape.square(q.mean)?;
    let a = tape.add(var, m2)?;
    let b = tape.sub(a, q.log_var)?;
    let s = tape.sum(b)?;
    let n = tape.value(q.mean).len() as f64;
    let shift = tape.scalar(-n);
    let t = tape.add(s, shift)?;
    tape.scale(t, 0.5)
}

fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_raw(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect())
}

impl FnodeModel {
    /// Randomly initialised model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = FnodeModel::skeleton(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        model.enc_z0.init(&mut rng, &mut params)?;
        model.enc_gamma.init(&mut rng, &mut params)?;
        model.hyper.init(model.config.lambda_init, &mut rng, &mut params)?;
        model.decoder.init(&mut rng, &mut params)?;
        model.params = params;
        Ok(model)
    }

    /// Rebuilds a model from stored parameters, checking every name and shape.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let template = FnodeModel::new(config, 0)?;
        if template.params.len() != params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (name, t) in template.params.iter() {
            let got = params.require(name)?;
            if got.shape() != t.shape() {
                return Err(Error::invalid(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(FnodeModel { params, ..template })
    }

    fn skeleton(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let field = config.field_spec()?;
        let enc_z0 = Encoder::new(
            config.slots,
            config.obs_dim,
            &config.z0_encoder_hidden,
            config.latent_dim,
            ENC_Z0,
        )?;
        let enc_gamma = Encoder::new(
            config.slots,
            config.obs_dim,
            &config.gamma_encoder_hidden,
            config.gamma_dim,
            ENC_GAMMA,
        )?;
        let hyper = Hypernetwork::new(config.gamma_dim, &config.hyper_hidden, &field, HYPER)?;
        let decoder = Decoder::new(config.latent_dim, &config.decoder_hidden, config.obs_dim, DECODER)?;
        let solver = SolverConfig::rk4(config.step_size)?;
        Ok(FnodeModel {
            config,
            params: ParamSet::new(),
            enc_z0,
            enc_gamma,
            hyper,
            field,
            decoder,
            solver,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn gamma_dim(&self) -> usize {
        self.config.gamma_dim
    }

    pub fn lambda(&self) -> f64 {
        self.params
            .get(&self.hyper.lambda_name())
            .and_then(Tensor::item)
            .unwrap_or(0.0)
    }

    /// Solves the latent ODE from `z0` (at `t0`) with weights `theta` and
    /// decodes the states at `times`. Returns the latent states and a
    /// `[len(times), obs_dim]` reconstruction node.
    fn rollout(&self, tape: &mut Tape, bound: &Bound, z0: Var, theta: Var, times: &[f64]) -> Result<(Vec<Var>, Var)> {
        let t0 = self.config.t0;
        let first = *times.first().ok_or_else(|| Error::invalid("no evaluation times"))?;
        if first < t0 {
            return Err(Error::invalid(format!("time {first} precedes the model origin {t0}")));
        }
        let prepend = first > t0;
        let mut grid_times = Vec::with_capacity(times.len() + 1);
        if prepend {
            grid_times.push(t0);
        }
        grid_times.extend_from_slice(times);
        let grid = TimeGrid::new(grid_times)?;
        let field = FunctionalField {
            spec: &self.field,
            layers: slice_layers(tape, &self.field, theta)?,
        };
        let mut path = integrate(tape, &field, z0, &grid, &self.solver)?;
        if prepend {
            path.remove(0);
        }
        let stacked = tape.concat(&path)?;
        let steps = tape.reshape(stacked, &[times.len(), self.config.latent_dim])?;
        let recon = self.decoder.decode(tape, bound, steps)?;
        Ok((path, recon))
    }

    /// Encodes a batch, draws `(z0, γ)` with the given standard-normal noise
    /// (`[rows, p]` and `[rows, d_γ]`, rows = batch × replicas) and rolls
    /// every row out over its trajectory's own times.
    fn record_batch(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &[&Trajectory],
        replicas: usize,
        noise_z0: &Tensor,
        noise_gamma: &Tensor,
    ) -> Result<BatchNodes> {
        let rows: Vec<&Trajectory> = batch.iter().flat_map(|x| std::iter::repeat_n(*x, replicas)).collect();
        let (p, d) = (self.latent_dim(), self.gamma_dim());
        let n = rows.len();
        if noise_z0.shape() != [n, p] || noise_gamma.shape() != [n, d] {
            return Err(Error::shape(
                "forward",
                format!(
                    "noise shapes {:?} / {:?}, expected [{n}, {p}] / [{n}, {d}]",
                    noise_z0.shape(),
                    noise_gamma.shape()
                ),
            ));
        }
        let feats = tape.leaf(self.enc_z0.batch_features(&rows)?);
        let q_z0 = self.enc_z0.encode(tape, bound, feats)?;
        let q_gamma = self.enc_gamma.encode(tape, bound, feats)?;
        let e0 = tape.leaf(noise_z0.clone());
        let eg = tape.leaf(noise_gamma.clone());
        let z0 = reparameterize_vars(tape, q_z0, e0)?;
        let gamma = reparameterize_vars(tape, q_gamma, eg)?;
        let theta = self.hyper.map(tape, bound, gamma)?;
        let wc = self.field.weight_count();
        let mut paths = Vec::with_capacity(n);
        let mut recon = Vec::with_capacity(n);
        for (r, x) in rows.iter().enumerate() {
            let z0_r = tape.slice(z0, r * p, p)?;
            let theta_r = tape.slice(theta, r * wc, wc)?;
            let (path, rec) = self
                .rollout(tape, bound, z0_r, theta_r, &x.times)
                .map_err(|e| Error::InSample {
                    sample: x.id,
                    source: Box::new(e),
                })?;
            paths.push(path);
            recon.push(rec);
        }
        Ok(BatchNodes {
            q_z0,
            q_gamma,
            z0,
            gamma,
            paths,
            recon,
        })
    }

    /// Decodes trajectories for explicit `(z0, γ)` pairs over `times`.
    pub fn decode_many(&self, z0s: &[Tensor], gammas: &[Tensor], times: &TimeGrid) -> Result<Vec<Vec<Tensor>>> {
        if z0s.len() != gammas.len() {
            return Err(Error::invalid("z0 and gamma counts differ"));
        }
        let (p, d) = (self.latent_dim(), self.gamma_dim());
        let mut out = Vec::with_capacity(z0s.len());
        // Chunked to bound tape memory.
        for (zc, gc) in z0s.chunks(32).zip(gammas.chunks(32)) {
            let mut tape = Tape::new();
            let bound = self.bind_generative(&mut tape);
            let mut gdata = Vec::with_capacity(gc.len() * d);
            for g in gc {
                if g.len() != d {
                    return Err(Error::shape("decode", format!("gamma width {} vs {d}", g.len())));
                }
                gdata.extend_from_slice(g.data());
            }
            let gvar = tape.leaf(Tensor::new(vec![gc.len(), d], gdata)?);
            let theta = self.hyper.map(&mut tape, &bound, gvar)?;
            let wc = self.field.weight_count();
            for (i, z0) in zc.iter().enumerate() {
                if z0.len() != p {
                    return Err(Error::shape("decode", format!("z0 width {} vs {p}", z0.len())));
                }
                let zv = tape.leaf(z0.clone().reshaped(vec![p])?);
                let th = tape.slice(theta, i * wc, wc)?;
                let (_, rec) = self
                    .rollout(&mut tape, &bound, zv, th, times.times())
                    .map_err(|e| Error::InSample {
                        sample: out.len(),
                        source: Box::new(e),
                    })?;
                out.push(rows_of(tape.value(rec)));
            }
        }
        Ok(out)
    }

    /// Binds only the hypernetwork and decoder parameters.
    fn bind_generative(&self, tape: &mut Tape) -> Bound {
        let mut subset = ParamSet::new();
        for (name, t) in self.params.iter() {
            if name.starts_with(HYPER) || name.starts_with(DECODER) {
                subset.insert(name, t.clone()).expect("unique names");
            }
        }
        Bound::bind(tape, &subset)
    }

    pub fn encode_z0(&self, x: &Trajectory) -> Result<GaussianParams> {
        self.enc_z0.encode_tensor(&self.params, x)
    }

    pub fn encode_gamma(&self, x: &Trajectory) -> Result<GaussianParams> {
        self.enc_gamma.encode_tensor(&self.params, x)
    }

    /// Weights of `f_θ` for a given `γ`.
    pub fn theta_for(&self, gamma: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind_generative(&mut tape);
        let g = tape.leaf(gamma.clone());
        let theta = self.hyper.map(&mut tape, &bound, g)?;
        Ok(tape.value(theta).clone())
    }
}

struct BatchNodes {
    q_z0: GaussianVars,
    q_gamma: GaussianVars,
    z0: Var,
    gamma: Var,
    paths: Vec<Vec<Var>>,
    recon: Vec<Var>,
}

fn rows_of(t: &Tensor) -> Vec<Tensor> {
    let cols = *t.shape().last().expect("rank >= 1");
    t.data()
        .chunks(cols)
        .map(|c| Tensor::from_raw(vec![cols], c.to_vec()))
        .collect()
}

fn gaussian_row(tape: &Tape, q: GaussianVars, r: usize) -> GaussianParams {
    let m = tape.value(q.mean);
    let lv = tape.value(q.log_var);
    let w = *m.shape().last().expect("rank 2");
    GaussianParams {
        mean: Tensor::from_raw(vec![w], m.row(r).to_vec()),
        log_var: Tensor::from_raw(vec![w], lv.row(r).to_vec()),
    }
}

fn targets(x: &Trajectory) -> Tensor {
    Tensor::from_raw(vec![x.len(), x.obs_dim()], x.values.iter().flatten().copied().collect())
}

/// Single-trajectory forward pass with explicit noise.
pub fn forward(m: &FnodeModel, x: &Trajectory, noise_z0: &Tensor, noise_gamma: &Tensor) -> Result<ForwardOutput> {
    let (p, d) = (m.latent_dim(), m.gamma_dim());
    let mut tape = Tape::new();
    let bound = Bound::bind(&mut tape, &m.params);
    let nodes = m.record_batch(
        &mut tape,
        &bound,
        &[x],
        1,
        &noise_z0.clone().reshaped(vec![1, p])?,
        &noise_gamma.clone().reshaped(vec![1, d])?,
    )?;
    Ok(ForwardOutput {
        recon: rows_of(tape.value(nodes.recon[0])),
        z_path: nodes.paths[0].iter().map(|v| tape.value(*v).clone()).collect(),
        z0: tape.value(nodes.z0).clone().reshaped(vec![p])?,
        gamma: tape.value(nodes.gamma).clone().reshaped(vec![d])?,
        q_z0: gaussian_row(&tape, nodes.q_z0, 0),
        q_gamma: gaussian_row(&tape, nodes.q_gamma, 0),
    })
}

/// Negative ELBO of a batch with fixed noise, as a [`Program`] over the
/// model's parameters. The loss is the batch mean of `−ELBO`, with the
/// reconstruction term averaged over `replicas` Monte-Carlo draws.
pub struct ElboObjective<'a> {
    pub model: &'a FnodeModel,
    pub batch: Vec<&'a Trajectory>,
    pub replicas: usize,
    pub noise_z0: Tensor,
    pub noise_gamma: Tensor,
    pub kl_weight: f64,
}

struct ObjectiveNodes {
    loss: Var,
    sse: Vec<Var>,
    nodes: BatchNodes,
}

impl<'a> ElboObjective<'a> {
    pub fn with_rng<R: Rng + ?Sized>(
        model: &'a FnodeModel,
        batch: Vec<&'a Trajectory>,
        replicas: usize,
        kl_weight: f64,
        rng: &mut R,
    ) -> Self {
        let n = batch.len() * replicas;
        let noise_z0 = normal_tensor(rng, &[n, model.latent_dim()]);
        let noise_gamma = normal_tensor(rng, &[n, model.gamma_dim()]);
        ElboObjective {
            model,
            batch,
            replicas,
            noise_z0,
            noise_gamma,
            kl_weight,
        }
    }

    fn record_nodes(&self, tape: &mut Tape, bound: &Bound) -> Result<ObjectiveNodes> {
        let m = self.model;
        if self.batch.is_empty() || self.replicas == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let nodes = m.record_batch(
            tape,
            bound,
            &self.batch,
            self.replicas,
            &self.noise_z0,
            &self.noise_gamma,
        )?;
        let sigma = m.config.sigma_x;
        let rows = self.batch.len() * self.replicas;
        let mut sse = Vec::with_capacity(rows);
        for (r, rec) in nodes.recon.iter().enumerate() {
            let x = self.batch[r / self.replicas];
            let target = tape.leaf(targets(x));
            let diff = tape.sub(*rec, target)?;
            let sq = tape.square(diff)?;
            sse.push(tape.sum(sq)?);
        }
        let sse_total = tape.lincomb(&sse.iter().map(|v| (*v, 1.0)).collect::<Vec<_>>())?;
        let kl0 = kl_vars(tape, nodes.q_z0)?;
        let klg = kl_vars(tape, nodes.q_gamma)?;
        let points: usize = self.batch.iter().map(|x| x.len() * x.obs_dim()).sum();
        let normalizer = tape.scalar(points as f64 * (sigma * (2.0 * PI).sqrt()).ln());
        let b = self.batch.len() as f64;
        let r = rows as f64;
        let loss = tape.lincomb(&[
            (sse_total, 1.0 / (2.0 * sigma * sigma * r)),
            (normalizer, 1.0 / b),
            (kl0, self.kl_weight / r),
            (klg, self.kl_weight / r),
        ])?;
        Ok(ObjectiveNodes { loss, sse, nodes })
    }

    fn breakdowns(&self, tape: &Tape, on: &ObjectiveNodes) -> Vec<ElboBreakdown> {
        let sigma = self.model.config.sigma_x;
        let log_norm = (sigma * (2.0 * PI).sqrt()).ln();
        self.batch
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let first = j * self.replicas;
                let mean_sse = (first..first + self.replicas)
                    .map(|r| tape.value(on.sse[r]).data()[0])
                    .sum::<f64>()
                    / self.replicas as f64;
                let recon = -mean_sse / (2.0 * sigma * sigma) - (x.len() * x.obs_dim()) as f64 * log_norm;
                let kl0 = kl_gaussian(&gaussian_row(tape, on.nodes.q_z0, first));
                let klg = kl_gaussian(&gaussian_row(tape, on.nodes.q_gamma, first));
                ElboBreakdown::new(recon, kl0, klg, self.kl_weight)
            })
            .collect()
    }

    /// Per-trajectory breakdowns, the loss and its gradient.
    pub fn evaluate_with_gradient(&self) -> Result<(Vec<ElboBreakdown>, f64, ParamSet)> {
        let mut tape = Tape::new();
        let bound = Bound::bind(&mut tape, &self.model.params);
        let on = self.record_nodes(&mut tape, &bound)?;
        let mut grads = tape.backward(on.loss)?;
        let mut out = ParamSet::new();
        for (name, var) in bound.iter() {
            out.insert(name, grads.take(var))?;
        }
        Ok((self.breakdowns(&tape, &on), tape.value(on.loss).data()[0], out))
    }

    pub fn evaluate(&self) -> Result<(Vec<ElboBreakdown>, f64)> {
        let mut tape = Tape::new();
        let bound = Bound::bind(&mut tape, &self.model.params);
        let on = self.record_nodes(&mut tape, &bound)?;
        Ok((self.breakdowns(&tape, &on), tape.value(on.loss).data()[0]))
    }
}

impl Program for ElboObjective<'_> {
    fn record(&self, tape: &mut Tape, params: &Bound, _inputs: &[Var]) -> Result<Var> {
        Ok(self.record_nodes(tape, params)?.loss)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub kl_anneal_epochs: usize,
    pub seed: u64,
    pub mc_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            kl_anneal_epochs: 50,
            seed: 0,
            mc_samples: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.kl_anneal_epochs == 0 || self.mc_samples == 0 {
            return Err(Error::invalid(
                "batch_size, kl_anneal_epochs and mc_samples must be positive",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.epochs > 0 && self.kl_anneal_epochs > self.epochs {
            return Err(Error::invalid("kl_anneal_epochs must not exceed epochs"));
        }
        Ok(())
    }
}

/// Linear KL weight ramp from `1/kl_anneal_epochs` up to 1.
pub fn kl_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    ((epoch + 1) as f64 / cfg.kl_anneal_epochs.max(1) as f64).min(1.0)
}

/// ELBO of one trajectory with `cfg.mc_samples` fresh draws.
pub fn elbo_loss<R: Rng + ?Sized>(
    m: &FnodeModel,
    x: &Trajectory,
    cfg: &TrainConfig,
    kl_weight: f64,
    rng: &mut R,
) -> Result<ElboBreakdown> {
    if !(0.0..=1.0).contains(&kl_weight) {
        return Err(Error::invalid(format!("kl_weight must lie in [0, 1], got {kl_weight}")));
    }
    let obj = ElboObjective::with_rng(m, vec![x], cfg.mc_samples.max(1), kl_weight, rng);
    Ok(obj.evaluate()?.0[0])
}

/// Adam with the usual bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: ParamSet,
    v: ParamSet,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let g = grads.require(name)?.data();
            let m = self.m.get_mut(name).expect("same names").data_mut();
            let v = self.v.get_mut(name).expect("same names").data_mut();
            for (((pi, gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Trains on `data` and returns the per-epoch mean ELBO terms.
pub fn fit(m: &FnodeModel, data: &PanelDataset, cfg: &TrainConfig) -> Result<(FnodeModel, Vec<ElboBreakdown>)> {
    fit_with(m, data, cfg, |_, _| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with(
    m: &FnodeModel,
    data: &PanelDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ElboBreakdown),
) -> Result<(FnodeModel, Vec<ElboBreakdown>)> {
    cfg.validate()?;
    data.validate()?;
    if data.obs_dim != m.config.obs_dim {
        return Err(Error::invalid(format!(
            "dataset observation dimension {} differs from the model's {}",
            data.obs_dim, m.config.obs_dim
        )));
    }
    let mut model = m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let kl_weight = kl_schedule(epoch, cfg);
        shuffle(&mut order, &mut rng);
        let mut epoch_terms = Vec::with_capacity(data.len());
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Trajectory> = chunk.iter().map(|&i| &data.trajectories[i]).collect();
            let diverged = |reason: String| Error::Divergence {
                epoch,
                batch: b,
                reason,
            };
            let obj = ElboObjective::with_rng(&model, batch, cfg.mc_samples, kl_weight, &mut rng);
            let (terms, loss, grads) = obj.evaluate_with_gradient().map_err(|e| diverged(e.to_string()))?;
            if !loss.is_finite() {
                return Err(diverged(format!("loss = {loss}")));
            }
            adam.step(&mut model.params, &grads)?;
            if model
                .params
                .iter()
                .any(|(_, t)| t.data().iter().any(|v| !v.is_finite()))
            {
                return Err(diverged("non-finite parameter after update".into()));
            }
            epoch_terms.extend(terms);
        }
        let summary = ElboBreakdown::mean(&epoch_terms);
        on_epoch(epoch, &summary);
        history.push(summary);
    }
    Ok((model, history))
}

/// Fisher–Yates with the crate's seeded generator.
pub(crate) fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Decodes `x` over `times`, from the posterior means or from one posterior draw.
pub fn reconstruct<R: Rng + ?Sized>(
    m: &FnodeModel,
    x: &Trajectory,
    times: &TimeGrid,
    use_posterior_mean: bool,
    rng: &mut R,
) -> Result<Vec<Tensor>> {
    let q0 = m.encode_z0(x)?;
    let qg = m.encode_gamma(x)?;
    let (z0, gamma) = if use_posterior_mean {
        (q0.mean, qg.mean)
    } else {
        let e0 = normal_tensor(rng, &[m.latent_dim()]);
        let eg = normal_tensor(rng, &[m.gamma_dim()]);
        (reparameterize(&q0, &e0)?, reparameterize(&qg, &eg)?)
    };
    Ok(m.decode_many(&[z0], &[gamma], times)?.remove(0))
}
