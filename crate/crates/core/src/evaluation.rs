//! Realized transforms `A′_w`, accuracy metrics, diffraction efficiency
//! and the bit-depth and wavelength-jitter sweeps.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{energy, inner, ComplexMatrix, FovField, C64};
use crate::stack::{BitDepth, ChannelOptics, DiffractiveModel};
use crate::taskgen::{Dataset, Pair, TransformSet};
use crate::training::{channel_loss, csv_err, efficiency};

/// Builds the `N_o × N_i` matrix of a linear FOV map by probing it with
/// each standard-basis input; column `n` is the response to `e_n`.
pub fn extract_with(input_side: usize, mut probe: impl FnMut(&FovField) -> Result<FovField>) -> Result<ComplexMatrix> {
    let n_i = input_side * input_side;
    let mut columns = Vec::with_capacity(n_i);
    for n in 0..n_i {
        columns.push(probe(&FovField::basis(input_side, n))?.into_values());
    }
    let rows = columns.first().map_or(0, Vec::len);
    ComplexMatrix::from_columns(rows, columns)
}

pub fn extract_optics(optics: &ChannelOptics, fov_side: usize) -> Result<ComplexMatrix> {
    extract_with(fov_side, |e| optics.forward(e))
}

/// `A′_w` of channel `channel`.
pub fn extract_transform(model: &DiffractiveModel, channel: usize) -> Result<ComplexMatrix> {
    extract_optics(&model.channel_optics(channel)?, model.geometry().fov_side)
}

fn check_shapes(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<()> {
    if (a.rows(), a.cols()) != (b.rows(), b.cols()) {
        return Err(Error::Sizing(format!(
            "matrices are {}×{} and {}×{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// `m = Σ a·conj(a′) / Σ|a′|²`, or 0 when `A′ = 0`.
pub fn scale_match(a: &ComplexMatrix, a_prime: &ComplexMatrix) -> C64 {
    let e = energy(a_prime.data());
    if e == 0.0 {
        return C64::new(0.0, 0.0);
    }
    inner(a_prime.data(), a.data()) / e
}

/// `(1/(N_i N_o)) Σ |a[n] − m·a′[n]|²` over the column-major vectorization.
pub fn mse_transformation(a: &ComplexMatrix, a_prime: &ComplexMatrix) -> Result<f64> {
    check_shapes(a, a_prime)?;
    let m = scale_match(a, a_prime);
    let sum: f64 = a
        .data()
        .iter()
        .zip(a_prime.data())
        .map(|(x, y)| (x - m * y).norm_sqr())
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `|aᴴ·â′| / (‖a‖·‖â′‖)` with `â′ = m·a′`. The complex scale cancels, so
/// orthogonal matrices give 0 rather than 0/0.
pub fn cosine_similarity(a: &ComplexMatrix, a_prime: &ComplexMatrix) -> Result<f64> {
    check_shapes(a, a_prime)?;
    let ea = energy(a.data());
    let eb = energy(a_prime.data());
    if ea == 0.0 || eb == 0.0 {
        return Err(Error::UndefinedMetric("cosine similarity of a zero matrix"));
    }
    Ok((inner(a.data(), a_prime.data()).norm() / (ea.sqrt() * eb.sqrt())).min(1.0))
}

/// Largest `|CosSim|` between any two transforms of a set.
pub fn max_pairwise_cos_sim(transforms: &TransformSet) -> Result<f64> {
    let m = transforms.matrices();
    let mut worst: f64 = 0.0;
    for u in 0..m.len() {
        for v in u + 1..m.len() {
            worst = worst.max(cosine_similarity(&m[u], &m[v])?);
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputStats {
    pub mean: f64,
    /// Population standard deviation over the samples.
    pub std: f64,
    pub per_sample: Vec<f64>,
}

fn require_pairs(pairs: &[Pair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Parameter("evaluation split is empty".into()));
    }
    Ok(())
}

/// Normalized output MSE over a whole split.
pub fn mse_output(optics: &ChannelOptics, pairs: &[Pair]) -> Result<OutputStats> {
    require_pairs(pairs)?;
    let per_sample: Vec<f64> = pairs
        .par_iter()
        .map(|p| channel_loss(&p.target, &optics.forward(&p.input)?))
        .collect::<Result<_>>()?;
    let n = per_sample.len() as f64;
    let mean = per_sample.iter().sum::<f64>() / n;
    let std = (per_sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(OutputStats { mean, std, per_sample })
}

/// Mean output/input energy ratio over a whole split.
pub fn diffraction_efficiency(optics: &ChannelOptics, pairs: &[Pair]) -> Result<f64> {
    require_pairs(pairs)?;
    let etas: Vec<f64> = pairs
        .par_iter()
        .map(|p| efficiency(&optics.forward(&p.input)?, &p.input))
        .collect::<Result<_>>()?;
    Ok(etas.iter().sum::<f64>() / etas.len() as f64)
}

/// Metrics of one channel at one sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMetrics {
    pub channel: usize,
    /// Nominal channel wavelength, in `λ_m`.
    pub wavelength: f64,
    /// Illumination offset from the nominal wavelength, in `λ_m`.
    pub delta: f64,
    pub bit_depth: BitDepth,
    pub mse_transformation: f64,
    pub cos_sim: f64,
    pub mse_output: f64,
    pub mse_output_std: f64,
    pub eta: f64,
}

/// Evaluates channel `channel` illuminated at its wavelength plus `delta`,
/// scored against that channel's target transform and test pairs.
pub fn evaluate_channel(
    model: &DiffractiveModel,
    channel: usize,
    target: &ComplexMatrix,
    test: &[Pair],
    delta: f64,
) -> Result<ChannelMetrics> {
    let wavelength = model.geometry().channel_wavelength(channel)?;
    let shifted = wavelength + delta;
    if !(shifted > 0.0) {
        return Err(Error::Parameter(format!(
            "shifted wavelength {shifted} of channel {} is not positive",
            channel + 1
        )));
    }
    let optics = model.optics(shifted)?;
    let a_prime = extract_optics(&optics, model.geometry().fov_side)?;
    let out = mse_output(&optics, test)?;
    let metrics = ChannelMetrics {
        channel,
        wavelength,
        delta,
        bit_depth: model.bit_depth(),
        mse_transformation: mse_transformation(target, &a_prime)?,
        cos_sim: cosine_similarity(target, &a_prime)?,
        mse_output: out.mean,
        mse_output_std: out.std,
        eta: diffraction_efficiency(&optics, test)?,
    };
    let finite = [
        metrics.mse_transformation,
        metrics.cos_sim,
        metrics.mse_output,
        metrics.eta,
    ]
    .iter()
    .all(|x| x.is_finite());
    if !finite {
        return Err(Error::NonFinite(format!("metrics of channel {}", channel + 1)));
    }
    Ok(metrics)
}

/// Per-channel metrics of a whole model at one sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub channels: Vec<ChannelMetrics>,
}

impl MetricsRecord {
    fn mean_std(&self, f: impl Fn(&ChannelMetrics) -> f64) -> (f64, f64) {
        let n = self.channels.len() as f64;
        let mean = self.channels.iter().map(&f).sum::<f64>() / n;
        let var = self.channels.iter().map(|c| (f(c) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    pub fn mse_transformation(&self) -> (f64, f64) {
        self.mean_std(|c| c.mse_transformation)
    }

    pub fn cos_sim(&self) -> (f64, f64) {
        self.mean_std(|c| c.cos_sim)
    }

    pub fn mse_output(&self) -> (f64, f64) {
        self.mean_std(|c| c.mse_output)
    }

    pub fn eta(&self) -> (f64, f64) {
        self.mean_std(|c| c.eta)
    }
}

fn check_task(model: &DiffractiveModel, transforms: &TransformSet, dataset: &Dataset) -> Result<()> {
    let n_w = model.geometry().n_channels();
    if transforms.len() != n_w || dataset.n_channels() != n_w {
        return Err(Error::Parameter(format!(
            "model has {n_w} channels, transforms {}, dataset {}",
            transforms.len(),
            dataset.n_channels()
        )));
    }
    Ok(())
}

/// Base evaluation of every channel on the test split.
pub fn evaluate(model: &DiffractiveModel, transforms: &TransformSet, dataset: &Dataset) -> Result<MetricsRecord> {
    check_task(model, transforms, dataset)?;
    let channels = (0..model.geometry().n_channels())
        .map(|w| evaluate_channel(model, w, transforms.matrix(w), &dataset.channel(w).test, 0.0))
        .collect::<Result<_>>()?;
    Ok(MetricsRecord { channels })
}

/// Channel `channel` evaluated at each wavelength offset, in order.
pub fn sweep_jitter(
    model: &DiffractiveModel,
    channel: usize,
    target: &ComplexMatrix,
    test: &[Pair],
    offsets: &[f64],
) -> Result<Vec<ChannelMetrics>> {
    offsets
        .iter()
        .map(|&d| evaluate_channel(model, channel, target, test, d))
        .collect()
}

/// Every channel evaluated on a copy quantized to each bit depth, in order.
pub fn sweep_bitdepth(
    model: &DiffractiveModel,
    depths: &[u32],
    transforms: &TransformSet,
    dataset: &Dataset,
) -> Result<Vec<MetricsRecord>> {
    let bit_depths = depths.iter().map(|&q| BitDepth::bits(q)).collect::<Result<Vec<_>>>()?;
    bit_depths
        .into_iter()
        .map(|q| evaluate(&model.clone().with_bit_depth(q), transforms, dataset))
        .collect()
}

/// Writes metrics rows with columns `run_id, N_w, N, K, channel,
/// lambda_over_lambda_m, bit_depth, delta_lambda_over_lambda_m,
/// mse_transformation, cos_sim, mse_output, eta`. Channels are numbered
/// from 1.
pub struct MetricsCsv<W: Write> {
    out: csv::Writer<W>,
    run_id: String,
    n_w: usize,
    neurons: usize,
    layers: usize,
}

impl<W: Write> MetricsCsv<W> {
    pub fn new(w: W, run_id: &str, model: &DiffractiveModel) -> Result<Self> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "run_id",
            "N_w",
            "N",
            "K",
            "channel",
            "lambda_over_lambda_m",
            "bit_depth",
            "delta_lambda_over_lambda_m",
            "mse_transformation",
            "cos_sim",
            "mse_output",
            "eta",
        ])
        .map_err(csv_err)?;
        let g = model.geometry();
        Ok(Self {
            out,
            run_id: run_id.to_string(),
            n_w: g.n_channels(),
            neurons: g.neurons(),
            layers: g.layers,
        })
    }

    pub fn row(&mut self, m: &ChannelMetrics) -> Result<()> {
        self.out
            .write_record([
                self.run_id.clone(),
                self.n_w.to_string(),
                self.neurons.to_string(),
                self.layers.to_string(),
                (m.channel + 1).to_string(),
                format!("{}", m.wavelength),
                m.bit_depth.to_string(),
                format!("{}", m.delta),
                format!("{:e}", m.mse_transformation),
                format!("{:e}", m.cos_sim),
                format!("{:e}", m.mse_output),
                format!("{:e}", m.eta),
            ])
            .map_err(csv_err)
    }

    pub fn record(&mut self, r: &MetricsRecord) -> Result<()> {
        r.channels.iter().try_for_each(|m| self.row(m))
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        self.out.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}
