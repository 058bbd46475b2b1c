//! Loss, reverse-mode gradients, optimizer and the epoch loop.
//!
//! Per channel the objective is the normalized MSE between the unit-energy
//! target `σ·o` and the best complex rescaling `σ′·o′` of the network
//! output. Channels are mixed with adaptive spectral weights `α_w`, and an
//! optional hinge penalty `β·max(η_th − η_w, 0)` pushes the mean
//! diffraction efficiency `η_w` above a threshold:
//!
//! `L = (1/N_w) Σ_w (α_w·L_MSE,w + β·L_Eff,w)`.
//!
//! Gradients are exact. Complex quantities carry `∂f/∂conj(z)`; the
//! stack's backward pass turns those into thickness derivatives.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{FovField, C64, SIM_PITCH};
use crate::propagation::PropagationPlan;
use crate::rng;
use crate::stack::{thickness_derivative, ChannelOptics, DiffractiveModel, ForwardTrace};
use crate::taskgen::{Dataset, Pair};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_BATCH_SIZE: usize = 8;
pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_BETA: f64 = 1e4;
/// Efficiency threshold for lossless or dispersion-free materials.
pub const ETA_THRESHOLD_LOSSLESS: f64 = 3e-4;
/// Efficiency threshold for absorbing materials.
pub const ETA_THRESHOLD_ABSORBING: f64 = 3e-5;
/// Step size of the spectral-weight update.
pub const ALPHA_RATE: f64 = 0.1;

/// `(σ, σ′)`: target energy normalization and the least-squares complex
/// scale of the output. `σ′ = 0` when the output is identically zero.
pub fn scale_coefficients(target: &FovField, output: &FovField) -> Result<(f64, C64)> {
    let target_energy = target.energy();
    if !(target_energy > 0.0) {
        return Err(Error::DegenerateTarget);
    }
    let sigma = 1.0 / target_energy.sqrt();
    let out_energy = output.energy();
    if out_energy == 0.0 {
        return Ok((sigma, C64::new(0.0, 0.0)));
    }
    let cross: C64 = target
        .values()
        .iter()
        .zip(output.values())
        .map(|(o, p)| o * p.conj())
        .sum();
    Ok((sigma, cross * sigma / out_energy))
}

/// `(1/N_o) Σ |σ·o[n] − σ′·o′[n]|²`
pub fn channel_loss(target: &FovField, output: &FovField) -> Result<f64> {
    check_lengths(target, output)?;
    let (sigma, sigma_p) = scale_coefficients(target, output)?;
    let sum: f64 = target
        .values()
        .iter()
        .zip(output.values())
        .map(|(o, p)| (o * sigma - p * sigma_p).norm_sqr())
        .sum();
    Ok(sum / target.len() as f64)
}

fn check_lengths(target: &FovField, output: &FovField) -> Result<()> {
    if target.len() != output.len() {
        return Err(Error::Sizing(format!(
            "target has {} pixels, output has {}",
            target.len(),
            output.len()
        )));
    }
    Ok(())
}

/// Loss and `∂L/∂conj(o′)`, differentiating through `σ′`.
///
/// With `a = σ·o`, `c = Σ conj(o′)·a` and `s = ‖o′‖²`, the loss equals
/// `(1/N)(‖a‖² − |c|²/s)`, whose conjugate gradient is
/// `−(1/N)(a·conj(c)/s − |c|²·o′/s²)`. At `o′ = 0` the zero subgradient
/// is returned.
pub fn channel_loss_with_grad(target: &FovField, output: &FovField) -> Result<(f64, Vec<C64>)> {
    let loss = channel_loss(target, output)?;
    let n = target.len() as f64;
    let s = output.energy();
    if s == 0.0 {
        return Ok((loss, vec![C64::new(0.0, 0.0); output.len()]));
    }
    let sigma = 1.0 / target.energy().sqrt();
    let c: C64 = target
        .values()
        .iter()
        .zip(output.values())
        .map(|(o, p)| p.conj() * o * sigma)
        .sum();
    let c2 = c.norm_sqr();
    let grad = target
        .values()
        .iter()
        .zip(output.values())
        .map(|(o, p)| -(o * sigma * c.conj() / s - p * (c2 / (s * s))) / n)
        .collect();
    Ok((loss, grad))
}

/// `η = Σ|o′|² / Σ|i|²` for one sample.
pub fn efficiency(output: &FovField, input: &FovField) -> Result<f64> {
    let e_in = input.energy();
    if !(e_in > 0.0) {
        return Err(Error::DegenerateInput);
    }
    Ok(output.energy() / e_in)
}

/// Batch mean efficiency `η_w` and its hinge penalty `max(η_th − η_w, 0)`.
pub fn efficiency_terms(outputs: &[FovField], inputs: &[FovField], eta_threshold: f64) -> Result<(f64, f64)> {
    if outputs.is_empty() || outputs.len() != inputs.len() {
        return Err(Error::Parameter(
            "efficiency needs equally many, non-zero, outputs and inputs".into(),
        ));
    }
    let mut sum = 0.0;
    for (o, i) in outputs.iter().zip(inputs) {
        sum += efficiency(o, i)?;
    }
    let eta = sum / outputs.len() as f64;
    Ok((eta, (eta_threshold - eta).max(0.0)))
}

/// `(1/N_w) Σ_w (α_w·L_w + β·P_w)`
pub fn total_loss(mse: &[f64], alpha: &[f64], penalties: &[f64], beta: f64) -> f64 {
    let n_w = mse.len() as f64;
    mse.iter()
        .zip(alpha)
        .zip(penalties)
        .map(|((l, a), p)| a * l + beta * p)
        .sum::<f64>()
        / n_w
}

/// Adaptive per-channel loss weights. The reference channel stays at 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralWeights {
    alpha: Vec<f64>,
    reference: usize,
}

impl SpectralWeights {
    pub fn new(n_channels: usize, reference: usize) -> Self {
        assert!(reference < n_channels.max(1));
        Self {
            alpha: vec![1.0; n_channels],
            reference,
        }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    /// `α_w ← max(0.1·(L_w − L_ref) + α_w, 0)`
    pub fn update(&mut self, losses: &[f64]) {
        let reference_loss = losses[self.reference];
        for (w, (a, l)) in self.alpha.iter_mut().zip(losses).enumerate() {
            if w != self.reference {
                *a = (ALPHA_RATE * (l - reference_loss) + *a).max(0.0);
            }
        }
    }
}

/// `lr₀ · 0.5^⌊epoch/10⌋`
pub fn learning_rate(lr0: f64, epoch: usize) -> f64 {
    lr0 * 0.5f64.powi((epoch / 10) as i32)
}

/// AdamW with decoupled weight decay, PyTorch defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(shape: &[Vec<f64>], weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = shape.iter().map(|l| vec![0.0; l.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let decay = 1.0 - lr * self.weight_decay;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *p *= decay;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let denom = (*v / bc2).sqrt() + self.eps;
                *p -= lr * (*m / bc1) / denom;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    pub beta: f64,
    pub eta_threshold: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            beta: 0.0,
            eta_threshold: ETA_THRESHOLD_LOSSLESS,
        }
    }
}

/// Result of one forward/backward sweep over a batch.
#[derive(Clone, Debug)]
pub struct StepReport {
    /// `∂L/∂h_v`, shaped like the model latents.
    pub grads: Vec<Vec<f64>>,
    /// Batch-mean normalized MSE per channel.
    pub mse: Vec<f64>,
    /// Batch-mean diffraction efficiency per channel.
    pub eta: Vec<f64>,
    pub penalties: Vec<f64>,
    pub total: f64,
}

/// Precomputed propagation plans, one per channel, reused across steps.
#[derive(Clone, Debug)]
pub struct PlanCache {
    plans: Vec<Arc<PropagationPlan>>,
}

impl PlanCache {
    pub fn new(model: &DiffractiveModel) -> Result<Self> {
        let g = model.geometry();
        let plans = g
            .channels
            .iter()
            .map(|&wl| {
                PropagationPlan::with_boundary(g.grid_side, g.grid_side, SIM_PITCH, g.distance, wl, g.boundary)
                    .map(Arc::new)
            })
            .collect::<Result<_>>()?;
        Ok(Self { plans })
    }

    pub fn optics(&self, model: &DiffractiveModel) -> Result<Vec<ChannelOptics>> {
        self.plans.iter().map(|p| model.optics_with_plan(p.clone())).collect()
    }
}

/// Exact gradient of the total loss with respect to every latent.
///
/// `batch[w]` holds the samples of channel `w`. Quantization, if the model
/// has a bit depth, is applied in the forward pass and treated as the
/// identity in the backward pass.
pub fn gradients(
    model: &DiffractiveModel,
    batch: &[&[Pair]],
    alpha: &[f64],
    settings: LossSettings,
) -> Result<StepReport> {
    let optics = PlanCache::new(model)?.optics(model)?;
    gradients_with(model, &optics, batch, alpha, settings)
}

pub fn gradients_with(
    model: &DiffractiveModel,
    optics: &[ChannelOptics],
    batch: &[&[Pair]],
    alpha: &[f64],
    settings: LossSettings,
) -> Result<StepReport> {
    let n_w = model.geometry().n_channels();
    if batch.len() != n_w || alpha.len() != n_w {
        return Err(Error::Parameter(format!(
            "batch covers {} channels and α {}, model has {n_w}",
            batch.len(),
            alpha.len()
        )));
    }
    if batch.iter().any(|b| b.is_empty()) {
        return Err(Error::Parameter("every channel needs a non-empty batch".into()));
    }
    let jobs: Vec<(usize, &Pair)> = batch
        .iter()
        .enumerate()
        .flat_map(|(w, pairs)| pairs.iter().map(move |p| (w, p)))
        .collect();

    let traces: Vec<ForwardTrace> = jobs
        .par_iter()
        .map(|(w, p)| optics[*w].forward_traced(&p.input))
        .collect::<Result<_>>()?;

    let mut mse = vec![0.0; n_w];
    let mut eta = vec![0.0; n_w];
    let mut penalties = vec![0.0; n_w];
    let mut out_grads: Vec<Vec<C64>> = Vec::with_capacity(jobs.len());
    let mut sample_grads: Vec<(f64, Vec<C64>)> = Vec::with_capacity(jobs.len());
    for ((w, p), trace) in jobs.iter().zip(&traces) {
        let (loss, grad) = channel_loss_with_grad(&p.target, &trace.output)?;
        mse[*w] += loss;
        eta[*w] += efficiency(&trace.output, &p.input)?;
        sample_grads.push((loss, grad));
    }
    for w in 0..n_w {
        let b = batch[w].len() as f64;
        mse[w] /= b;
        eta[w] /= b;
        penalties[w] = (settings.eta_threshold - eta[w]).max(0.0);
        if !mse[w].is_finite() || !eta[w].is_finite() {
            return Err(Error::NonFinite(format!("loss of channel {}", w + 1)));
        }
    }
    let total = total_loss(&mse, alpha, &penalties, settings.beta);

    let nw = n_w as f64;
    for (((w, p), trace), (_, grad)) in jobs.iter().zip(&traces).zip(sample_grads) {
        let b = batch[*w].len() as f64;
        let mse_scale = alpha[*w] / (nw * b);
        // the hinge is inactive at η_w = η_th exactly
        let hinge_active = settings.beta != 0.0 && eta[*w] < settings.eta_threshold;
        let eff_scale = if hinge_active {
            settings.beta / (nw * b * p.input.energy())
        } else {
            0.0
        };
        out_grads.push(
            grad.iter()
                .zip(trace.output.values())
                .map(|(g, o)| g * mse_scale - o * eff_scale)
                .collect(),
        );
    }

    let side = model.geometry().fov_side;
    let per_sample: Vec<Vec<Vec<f64>>> = jobs
        .par_iter()
        .zip(&traces)
        .zip(&out_grads)
        .map(|(((w, _), trace), g)| {
            let g = FovField::new(side, g.clone())?;
            optics[*w].backward(trace, &g).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what}, channel {}", w + 1)),
                other => other,
            })
        })
        .collect::<Result<_>>()?;

    // fixed-order reduction keeps results bit-reproducible
    let mut grads: Vec<Vec<f64>> = model.latents().iter().map(|l| vec![0.0; l.len()]).collect();
    for sample in &per_sample {
        for (acc, layer) in grads.iter_mut().zip(sample) {
            acc.iter_mut().zip(layer).for_each(|(a, d)| *a += d);
        }
    }
    for (acc, latents) in grads.iter_mut().zip(model.latents()) {
        for (g, &v) in acc.iter_mut().zip(latents) {
            *g *= thickness_derivative(v);
        }
    }
    if let Some((layer, _)) = grads.iter().enumerate().find(|(_, l)| l.iter().any(|g| !g.is_finite())) {
        return Err(Error::NonFinite(format!("latent gradient of layer {}", layer + 1)));
    }
    Ok(StepReport {
        grads,
        mse,
        eta,
        penalties,
        total,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossSettings,
    pub adaptive_weights: bool,
    pub weight_decay: f64,
    pub shuffle_seed: u64,
    /// First epoch to run; non-zero when resuming.
    pub start_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            loss: LossSettings::default(),
            adaptive_weights: true,
            weight_decay: 0.01,
            shuffle_seed: 0,
            start_epoch: 0,
        }
    }
}

/// Mutable optimization state carried across steps.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub weights: SpectralWeights,
    pub optimizer: AdamW,
    pub epoch: usize,
    pub learning_rate: f64,
    pub adaptive_weights: bool,
    pub best_val: f64,
    pub best_epoch: Option<usize>,
    pub best_latents: Option<Vec<Vec<f64>>>,
}

impl TrainState {
    pub fn new(model: &DiffractiveModel, config: &TrainConfig) -> Self {
        let g = model.geometry();
        Self {
            weights: SpectralWeights::new(g.n_channels(), g.reference_channel()),
            optimizer: AdamW::new(model.latents(), config.weight_decay),
            epoch: config.start_epoch,
            learning_rate: learning_rate(config.learning_rate, config.start_epoch),
            adaptive_weights: config.adaptive_weights,
            best_val: f64::INFINITY,
            best_epoch: None,
            best_latents: None,
        }
    }
}

/// Applies one AdamW update, then the spectral-weight update driven by
/// the losses of the same step.
pub fn optimizer_step(state: &mut TrainState, model: &mut DiffractiveModel, report: &StepReport) {
    let lr = state.learning_rate;
    state.optimizer.step(model.latents_mut(), &report.grads, lr);
    if state.adaptive_weights {
        state.weights.update(&report.mse);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub channel: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub alpha: f64,
    pub eta: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    /// CSV with columns `epoch,channel,train_mse,val_mse,alpha,eta,lr`.
    /// Channels are numbered from 1.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        write_history_rows(w, &self.records, true)
    }

    pub fn epoch(&self, epoch: usize) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.epoch == epoch)
    }
}

/// Appends history rows, optionally preceded by the header line.
pub fn write_history_rows(w: impl Write, records: &[EpochRecord], header: bool) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    if header {
        out.write_record(["epoch", "channel", "train_mse", "val_mse", "alpha", "eta", "lr"])
            .map_err(csv_err)?;
    }
    for r in records {
        out.write_record([
            r.epoch.to_string(),
            (r.channel + 1).to_string(),
            format!("{:e}", r.train_mse),
            format!("{:e}", r.val_mse),
            format!("{:e}", r.alpha),
            format!("{:e}", r.eta),
            format!("{:e}", r.lr),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Unweighted per-channel mean of the normalized MSE over `pairs`.
pub fn split_mse(optics: &[ChannelOptics], pairs: &[&[Pair]]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .zip(optics)
        .map(|(pairs, optics)| {
            let losses: Vec<f64> = pairs
                .par_iter()
                .map(|p| channel_loss(&p.target, &optics.forward(&p.input)?))
                .collect::<Result<_>>()?;
            Ok(losses.iter().sum::<f64>() / losses.len() as f64)
        })
        .collect()
}

/// Progress notification handed to [`fit_with`]'s callback after each epoch.
pub struct EpochEvent<'a> {
    pub epoch: usize,
    pub model: &'a DiffractiveModel,
    pub records: &'a [EpochRecord],
    pub val_mse: f64,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// The snapshot with the lowest validation loss.
    pub best: DiffractiveModel,
    pub best_epoch: usize,
    pub best_val: f64,
    /// The model after the final epoch.
    pub last: DiffractiveModel,
    pub history: History,
    pub state: TrainState,
}

fn permutation(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, &[rng::TAG_SHUFFLE, epoch as u64]);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = (rng::uniform(&mut r) * (i + 1) as f64) as usize;
        idx.swap(i, j.min(i));
    }
    idx
}

pub fn fit(model: DiffractiveModel, dataset: &Dataset, config: &TrainConfig) -> Result<FitOutcome> {
    fit_with(model, dataset, config, |_| Ok(()))
}

/// Runs epochs `start_epoch..epochs`, keeping the best-validation snapshot.
pub fn fit_with(
    mut model: DiffractiveModel,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochEvent) -> Result<()>,
) -> Result<FitOutcome> {
    let n_w = model.geometry().n_channels();
    if dataset.n_channels() != n_w {
        return Err(Error::Parameter(format!(
            "dataset has {} channels, model has {n_w}",
            dataset.n_channels()
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::Parameter("batch size must be at least 1".into()));
    }
    if config.start_epoch >= config.epochs {
        return Err(Error::Parameter(format!(
            "start epoch {} is not before the final epoch {}",
            config.start_epoch, config.epochs
        )));
    }
    let n_train = dataset.channels().iter().map(|c| c.train.len()).min().unwrap_or(0);
    if n_train == 0 {
        return Err(Error::Parameter("empty training split".into()));
    }
    let plans = PlanCache::new(&model)?;
    let mut state = TrainState::new(&model, config);
    let mut history = History::default();
    let val: Vec<&[Pair]> = dataset.channels().iter().map(|c| c.val.as_slice()).collect();

    for epoch in config.start_epoch..config.epochs {
        state.epoch = epoch;
        state.learning_rate = learning_rate(config.learning_rate, epoch);
        let order = permutation(n_train, config.shuffle_seed, epoch);
        let mut train_sum = vec![0.0; n_w];
        let mut eta_sum = vec![0.0; n_w];
        let mut n_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Vec<Pair>> = dataset
                .channels()
                .iter()
                .map(|c| chunk.iter().map(|&k| c.train[k].clone()).collect())
                .collect();
            let views: Vec<&[Pair]> = batch.iter().map(Vec::as_slice).collect();
            let optics = plans.optics(&model)?;
            let report = gradients_with(&model, &optics, &views, state.weights.alpha(), config.loss)
                .map_err(|e| diverged(epoch, e))?;
            if !report.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("non-finite loss {}", report.total),
                });
            }
            for w in 0..n_w {
                train_sum[w] += report.mse[w];
                eta_sum[w] += report.eta[w];
            }
            n_batches += 1;
            optimizer_step(&mut state, &mut model, &report);
        }

        let optics = plans.optics(&model)?;
        let val_mse = split_mse(&optics, &val).map_err(|e| diverged(epoch, e))?;
        let mean_val = val_mse.iter().sum::<f64>() / n_w as f64;
        if !mean_val.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite validation loss".into(),
            });
        }
        let improved = mean_val < state.best_val;
        if improved {
            state.best_val = mean_val;
            state.best_epoch = Some(epoch);
            state.best_latents = Some(model.latents().to_vec());
        }
        let first = history.records.len();
        for w in 0..n_w {
            history.records.push(EpochRecord {
                epoch,
                channel: w,
                train_mse: train_sum[w] / n_batches as f64,
                val_mse: val_mse[w],
                alpha: state.weights.alpha()[w],
                eta: eta_sum[w] / n_batches as f64,
                lr: state.learning_rate,
            });
        }
        on_epoch(&EpochEvent {
            epoch,
            model: &model,
            records: &history.records[first..],
            val_mse: mean_val,
            improved,
        })?;
    }

    let mut best = model.clone();
    if let Some(latents) = &state.best_latents {
        best.latents_mut().clone_from_slice(latents);
    }
    Ok(FitOutcome {
        best,
        best_epoch: state.best_epoch.expect("at least one epoch ran"),
        best_val: state.best_val,
        last: model,
        history,
        state,
    })
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Diverged {
            epoch,
            reason: format!("non-finite value in {what}"),
        },
        other => other,
    }
}
