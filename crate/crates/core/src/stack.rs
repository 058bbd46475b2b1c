//! The diffractive layer stack: geometry, thickness parameterization,
//! quantization, per-wavelength transmission and the multi-layer forward
//! pass with its reverse-mode companion.
//!
//! A neuron's total thickness is `h = h_base + h_learnable`, where
//! `h_learnable = (h_max/2)(sin h_v + 1)` maps the unconstrained latent
//! `h_v` into `[0, h_max]`. A neuron transmits
//! `t = exp(−2πκh/λ) · exp(j(n − 1)2πh/λ)`.
//!
//! The forward pass is: embed input FOV → propagate `d` → for each layer,
//! multiply by `t` then propagate `d` → bin the output FOV.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::field::{bin_fov, centered_offset, embed_fov, ComplexGrid, FovField, C64, SAMPLES_PER_PIXEL, SIM_PITCH};
use crate::materials::Material;
use crate::propagation::{Boundary, PropagationPlan};
use crate::rng;

/// Upper bound of the learnable thickness, in units of `λ_m`.
pub const H_MAX: f64 = 1.25;
/// Substrate thickness under every neuron, in units of `λ_m`.
pub const H_BASE: f64 = 0.25;
pub const N_AIR: f64 = 1.0;
pub const DEFAULT_LAYERS: usize = 8;

/// First and last channel of the default wavelength ladder, in `λ_m`.
pub const LADDER_MIN: f64 = 0.9125;
pub const LADDER_MAX: f64 = 1.0875;

/// Number of thickness levels a neuron may take.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Continuous,
    Bits(u32),
}

impl BitDepth {
    pub fn bits(q: u32) -> Result<Self> {
        if !(1..=32).contains(&q) {
            return Err(Error::Parameter(format!("bit depth must be within 1..=32, got {q}")));
        }
        Ok(BitDepth::Bits(q))
    }

    #[inline]
    pub fn apply(self, h_learnable: f64) -> f64 {
        match self {
            BitDepth::Continuous => h_learnable,
            BitDepth::Bits(q) => quantize(h_learnable, q),
        }
    }
}

impl fmt::Display for BitDepth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BitDepth::Continuous => f.write_str("continuous"),
            BitDepth::Bits(q) => write!(f, "{q}"),
        }
    }
}

impl FromStr for BitDepth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "continuous" => Ok(BitDepth::Continuous),
            other => {
                BitDepth::bits(other.parse().map_err(|_| {
                    Error::Parameter(format!("bit depth must be 1..=32 or \"continuous\", got {other:?}"))
                })?)
            }
        }
    }
}

/// `h_learnable = (h_max/2)(sin h_v + 1)`.
#[inline]
pub fn thickness(latent: f64) -> f64 {
    0.5 * H_MAX * (latent.sin() + 1.0)
}

/// `d h_learnable / d h_v`.
#[inline]
pub fn thickness_derivative(latent: f64) -> f64 {
    0.5 * H_MAX * latent.cos()
}

/// Rounds to the nearest of `2^q` equally spaced levels on `[0, h_max]`;
/// ties go to the higher level.
pub fn quantize(h_learnable: f64, q: u32) -> f64 {
    let top = ((1u64 << q) - 1) as f64;
    let step = H_MAX / top;
    let level = (h_learnable / step + 0.5).floor().clamp(0.0, top);
    if level == top {
        H_MAX
    } else {
        level * step
    }
}

/// Complex transmission of a neuron of total thickness `h` at `wavelength`.
pub fn transmission(h: f64, wavelength: f64, material: &Material) -> Result<C64> {
    let (n, kappa) = material.complex_index(wavelength)?;
    Ok(transmission_from_index(h, wavelength, n, kappa))
}

#[inline]
fn transmission_from_index(h: f64, wavelength: f64, n: f64, kappa: f64) -> C64 {
    let k = 2.0 * PI * h / wavelength;
    C64::from_polar((-kappa * k).exp(), (n - N_AIR) * k)
}

/// Default channel ladder: `N_w` wavelengths equally spaced on
/// `[0.9125, 1.0875]·λ_m`, or `λ_m` alone when `N_w = 1`.
pub fn default_channels(n_w: usize) -> Vec<f64> {
    match n_w {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => {
            let step = (LADDER_MAX - LADDER_MIN) / (n_w - 1) as f64;
            (0..n_w).map(|w| LADDER_MIN + step * w as f64).collect()
        }
    }
}

/// Index of the reference channel for the spectral weights: the middle
/// channel, `⌈N_w/2⌉` counted from one.
pub fn reference_channel(n_w: usize) -> usize {
    n_w.saturating_sub(1) / 2
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackGeometry {
    pub layers: usize,
    /// Neurons per layer edge, each `λ_m/2` wide.
    pub layer_side: usize,
    /// FOV pixels per edge, each `2λ_m` wide.
    pub fov_side: usize,
    /// Simulation samples per plane edge.
    pub grid_side: usize,
    /// Axial spacing between successive planes, in `λ_m`.
    pub distance: f64,
    /// Channel wavelengths in `λ_m`.
    pub channels: Vec<f64>,
    pub boundary: Boundary,
}

impl StackGeometry {
    /// Geometry with the default sizing rules: the simulation grid is the
    /// larger of the layer and the FOV, and `d = 0.5·D_layer`.
    pub fn new(layers: usize, layer_side: usize, fov_side: usize, channels: Vec<f64>) -> Result<Self> {
        let geometry = Self {
            layers,
            layer_side,
            fov_side,
            grid_side: layer_side.max(SAMPLES_PER_PIXEL * fov_side),
            distance: 0.5 * layer_side as f64 * SIM_PITCH,
            channels,
            boundary: Boundary::ZeroPadded,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn with_grid_side(mut self, grid_side: usize) -> Result<Self> {
        self.grid_side = grid_side;
        self.validate()?;
        Ok(self)
    }

    pub fn with_distance(mut self, distance: f64) -> Result<Self> {
        self.distance = distance;
        self.validate()?;
        Ok(self)
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("at least one diffractive layer is required".into()));
        }
        if self.layer_side == 0 || self.fov_side == 0 {
            return Err(Error::Config("layer and FOV sides must be at least 1".into()));
        }
        let fov_span = SAMPLES_PER_PIXEL * self.fov_side;
        if self.grid_side < fov_span {
            return Err(Error::Config(format!(
                "simulation grid of {} samples is smaller than the {fov_span}-sample field of view",
                self.grid_side
            )));
        }
        if self.grid_side < self.layer_side {
            return Err(Error::Config(format!(
                "simulation grid of {} samples is smaller than the {}-neuron layer",
                self.grid_side, self.layer_side
            )));
        }
        if !(self.distance > 0.0) || !self.distance.is_finite() {
            return Err(Error::Config(format!(
                "layer distance must be positive, got {}",
                self.distance
            )));
        }
        if self.channels.is_empty() {
            return Err(Error::Config("at least one wavelength channel is required".into()));
        }
        if let Some(bad) = self.channels.iter().find(|wl| !(**wl > 0.0) || !wl.is_finite()) {
            return Err(Error::Config(format!("channel wavelength must be positive, got {bad}")));
        }
        Ok(())
    }

    /// Total trainable neurons `N = K · layer_side²`.
    pub fn neurons(&self) -> usize {
        self.layers * self.layer_side * self.layer_side
    }

    pub fn neurons_per_layer(&self) -> usize {
        self.layer_side * self.layer_side
    }

    /// Pixels per FOV, `N_i = N_o`.
    pub fn fov_pixels(&self) -> usize {
        self.fov_side * self.fov_side
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn reference_channel(&self) -> usize {
        reference_channel(self.channels.len())
    }

    pub fn channel_wavelength(&self, channel: usize) -> Result<f64> {
        self.channels.get(channel).copied().ok_or_else(|| {
            Error::Parameter(format!(
                "channel {channel} out of range for {} channels",
                self.channels.len()
            ))
        })
    }

    pub fn layer_offset(&self) -> usize {
        centered_offset(self.grid_side, self.layer_side)
    }
}

impl fmt::Display for StackGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "layers={} layer_side={} fov_side={} grid_side={} distance={} channels={:?}",
            self.layers, self.layer_side, self.fov_side, self.grid_side, self.distance, self.channels
        )
    }
}

/// K layers of latent thickness variables plus everything needed to
/// simulate them. The latents are the only trainable state.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffractiveModel {
    geometry: StackGeometry,
    latents: Vec<Vec<f64>>,
    material: Material,
    bit_depth: BitDepth,
    seed: u64,
}

impl DiffractiveModel {
    /// Latents drawn i.i.d. from a standard normal on a stream seeded by `seed`.
    pub fn random(geometry: StackGeometry, material: Material, bit_depth: BitDepth, seed: u64) -> Result<Self> {
        geometry.validate()?;
        let mut rng = rng::stream(seed, &[rng::TAG_LATENTS]);
        let per_layer = geometry.neurons_per_layer();
        let latents = (0..geometry.layers)
            .map(|_| (0..per_layer).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Ok(Self {
            geometry,
            latents,
            material,
            bit_depth,
            seed,
        })
    }

    pub fn from_latents(
        geometry: StackGeometry,
        material: Material,
        bit_depth: BitDepth,
        seed: u64,
        latents: Vec<Vec<f64>>,
    ) -> Result<Self> {
        geometry.validate()?;
        if latents.len() != geometry.layers || latents.iter().any(|l| l.len() != geometry.neurons_per_layer()) {
            return Err(Error::Sizing(format!(
                "latents do not match {} layers of {}×{} neurons",
                geometry.layers, geometry.layer_side, geometry.layer_side
            )));
        }
        if latents.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent thickness variables".into()));
        }
        Ok(Self {
            geometry,
            latents,
            material,
            bit_depth,
            seed,
        })
    }

    pub fn geometry(&self) -> &StackGeometry {
        &self.geometry
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    pub fn bit_depth(&self) -> BitDepth {
        self.bit_depth
    }

    pub fn set_bit_depth(&mut self, bit_depth: BitDepth) {
        self.bit_depth = bit_depth;
    }

    pub fn with_bit_depth(mut self, bit_depth: BitDepth) -> Self {
        self.bit_depth = bit_depth;
        self
    }

    pub fn set_material(&mut self, material: Material) {
        self.material = material;
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Latents as `layers × layer_side²`, each layer row-major.
    pub fn latents(&self) -> &[Vec<f64>] {
        &self.latents
    }

    pub fn latents_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.latents
    }

    /// Learnable thickness of every neuron of `layer` after quantization.
    pub fn learnable_thicknesses(&self, layer: usize) -> Vec<f64> {
        self.latents[layer]
            .iter()
            .map(|&v| self.bit_depth.apply(thickness(v)))
            .collect()
    }

    /// Total thickness `h_base + h_learnable` of every neuron of `layer`.
    pub fn thicknesses(&self, layer: usize) -> Vec<f64> {
        self.learnable_thicknesses(layer)
            .into_iter()
            .map(|h| h + H_BASE)
            .collect()
    }

    /// Everything needed to run the stack at one wavelength.
    pub fn optics(&self, wavelength: f64) -> Result<ChannelOptics> {
        let g = &self.geometry;
        let plan =
            PropagationPlan::with_boundary(g.grid_side, g.grid_side, SIM_PITCH, g.distance, wavelength, g.boundary)?;
        self.optics_with_plan(Arc::new(plan))
    }

    /// Like [`optics`](Self::optics) but reusing a plan built for this
    /// geometry, which is much cheaper when the latents change every step.
    pub fn optics_with_plan(&self, plan: Arc<PropagationPlan>) -> Result<ChannelOptics> {
        let g = &self.geometry;
        let wavelength = plan.wavelength();
        if plan.shape() != (g.grid_side, g.grid_side) || plan.distance() != g.distance {
            return Err(Error::Sizing(
                "propagation plan does not match the stack geometry".into(),
            ));
        }
        let (n, kappa) = self.material.complex_index(wavelength)?;
        let offset = g.layer_offset();
        let transmissions = (0..g.layers)
            .map(|layer| {
                let hs = self.thicknesses(layer);
                let mut t = ComplexGrid::zeros(g.grid_side, g.grid_side);
                for r in 0..g.layer_side {
                    for c in 0..g.layer_side {
                        let h = hs[r * g.layer_side + c];
                        t.set(offset + r, offset + c, transmission_from_index(h, wavelength, n, kappa));
                    }
                }
                t
            })
            .collect();
        Ok(ChannelOptics {
            wavelength,
            plan,
            transmissions,
            // d t / d h = t · (2π/λ)(j(n − 1) − κ)
            index_factor: C64::new(-kappa, n - N_AIR) * (2.0 * PI / wavelength),
            fov_side: g.fov_side,
            grid_side: g.grid_side,
            layer_side: g.layer_side,
            layer_offset: offset,
        })
    }

    pub fn channel_optics(&self, channel: usize) -> Result<ChannelOptics> {
        self.optics(self.geometry.channel_wavelength(channel)?)
    }

    /// Output field for `input` at channel `channel`.
    pub fn forward(&self, input: &FovField, channel: usize) -> Result<FovField> {
        self.channel_optics(channel)?.forward(input)
    }

    /// Output field for `input` illuminated at an arbitrary wavelength.
    pub fn forward_at(&self, input: &FovField, wavelength: f64) -> Result<FovField> {
        self.optics(wavelength)?.forward(input)
    }
}

/// Intermediate fields of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Field just after each layer's modulation.
    pub modulated: Vec<ComplexGrid>,
    pub output: FovField,
}

/// Per-wavelength precomputation: layer transmissions and the
/// propagation plan between planes.
#[derive(Clone, Debug)]
pub struct ChannelOptics {
    wavelength: f64,
    plan: Arc<PropagationPlan>,
    transmissions: Vec<ComplexGrid>,
    index_factor: C64,
    fov_side: usize,
    grid_side: usize,
    layer_side: usize,
    layer_offset: usize,
}

impl ChannelOptics {
    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn transmissions(&self) -> &[ComplexGrid] {
        &self.transmissions
    }

    fn check_input(&self, input: &FovField) -> Result<()> {
        if input.side() != self.fov_side {
            return Err(Error::Sizing(format!(
                "input FOV has side {}, the model expects {}",
                input.side(),
                self.fov_side
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &FovField) -> Result<FovField> {
        self.check_input(input)?;
        let mut field = self.plan.propagate(&embed_fov(input, self.grid_side)?)?;
        for t in &self.transmissions {
            field = self.plan.propagate(&field.hadamard(t))?;
        }
        bin_fov(&field, self.fov_side)
    }

    pub fn forward_traced(&self, input: &FovField) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let mut field = self.plan.propagate(&embed_fov(input, self.grid_side)?)?;
        let mut modulated = Vec::with_capacity(self.transmissions.len());
        for t in &self.transmissions {
            let z = field.hadamard(t);
            field = self.plan.propagate(&z)?;
            modulated.push(z);
        }
        Ok(ForwardTrace {
            modulated,
            output: bin_fov(&field, self.fov_side)?,
        })
    }

    /// Reverse pass. `output_grad` is `∂f/∂conj(o′)` for a real objective
    /// `f`; returns `∂f/∂h` for every neuron's total thickness, per layer
    /// (row-major, `layer_side²` entries each).
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &FovField) -> Result<Vec<Vec<f64>>> {
        let norm = 1.0 / (SAMPLES_PER_PIXEL * SAMPLES_PER_PIXEL) as f64;
        let mut grad = self
            .plan
            .adjoint(&embed_fov(output_grad, self.grid_side)?.scaled(C64::new(norm, 0.0)))?;
        let mut out = vec![Vec::new(); self.transmissions.len()];
        for layer in (0..self.transmissions.len()).rev() {
            if !grad.is_finite() {
                return Err(Error::NonFinite(format!(
                    "backward field at layer {} (λ = {})",
                    layer + 1,
                    self.wavelength
                )));
            }
            let z = &trace.modulated[layer];
            let mut dh = Vec::with_capacity(self.layer_side * self.layer_side);
            for r in 0..self.layer_side {
                for c in 0..self.layer_side {
                    let (rr, cc) = (self.layer_offset + r, self.layer_offset + c);
                    // δf = 2 Re(conj(G) δz), δz = z · index_factor · δh
                    dh.push(2.0 * (grad.get(rr, cc).conj() * z.get(rr, cc) * self.index_factor).re);
                }
            }
            out[layer] = dh;
            if layer > 0 {
                let t = &self.transmissions[layer];
                let mut g = grad;
                g.data_mut().iter_mut().zip(t.data()).for_each(|(g, t)| *g *= t.conj());
                grad = self.plan.adjoint(&g)?;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::energy;
    use crate::propagation::propagate;
    use proptest::prelude::*;

    fn random_fov(side: usize, seed: u64) -> FovField {
        let mut r = rng::stream(seed, &[99]);
        let values = (0..side * side)
            .map(|_| C64::new(rng::uniform(&mut r) - 0.5, rng::uniform(&mut r) - 0.5))
            .collect();
        FovField::new(side, values).unwrap()
    }

    fn small_model(layers: usize, n_w: usize, seed: u64) -> DiffractiveModel {
        let g = StackGeometry::new(layers, 12, 2, default_channels(n_w)).unwrap();
        DiffractiveModel::random(g, Material::dispersion_free(), BitDepth::Continuous, seed).unwrap()
    }

    #[test]
    fn thickness_examples() {
        assert!((thickness(0.0) - 0.625).abs() < 1e-15);
        assert!((thickness(0.0) + H_BASE - 0.875).abs() < 1e-15);
        assert!((thickness(PI / 2.0) - H_MAX).abs() < 1e-15);
        assert!(thickness(-PI / 2.0).abs() < 1e-15);
        assert!(thickness_derivative(PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.6 * H_MAX, 1), H_MAX);
        assert!((quantize(0.4 * H_MAX, 2) - H_MAX / 3.0).abs() < 1e-15);
        let x = 0.123_456_789;
        assert!((quantize(x, 32) - x).abs() <= H_MAX / ((1u64 << 32) - 1) as f64);
        // tie between 0 and h_max/3 goes up
        assert!((quantize(H_MAX / 6.0, 2) - H_MAX / 3.0).abs() < 1e-15);
        assert_eq!(quantize(0.0, 4), 0.0);
        assert_eq!(quantize(H_MAX, 4), H_MAX);
    }

    #[test]
    fn bit_depth_parses() {
        assert_eq!("continuous".parse::<BitDepth>().unwrap(), BitDepth::Continuous);
        assert_eq!("8".parse::<BitDepth>().unwrap(), BitDepth::Bits(8));
        assert!("0".parse::<BitDepth>().is_err());
        assert!("33".parse::<BitDepth>().is_err());
        assert_eq!(BitDepth::Bits(12).to_string(), "12");
    }

    #[test]
    fn transmission_examples() {
        let m = Material::dispersion_free();
        assert_eq!(transmission(0.0, 0.95, &m).unwrap(), C64::new(1.0, 0.0));
        for h in [0.1, 0.7, 1.5] {
            assert!((transmission(h, 1.03, &m).unwrap().norm() - 1.0).abs() < 1e-15);
        }
        let wl = 1.0292;
        let t = transmission(wl / 0.72, wl, &m).unwrap();
        assert!((t - C64::new(1.0, 0.0)).norm() < 1e-12);
        let lossy = Material::constant(1.6, 0.05).unwrap();
        assert!(transmission(0.8, 1.0, &lossy).unwrap().norm() < 1.0);
    }

    #[test]
    fn default_ladder_matches_published_channels() {
        let ladder = default_channels(4);
        let expect = [0.9125, 0.9708, 1.0292, 1.0875];
        for (wl, e) in ladder.iter().zip(expect) {
            assert!(((wl * 1e4).round() / 1e4 - e).abs() < 1e-12, "{wl} vs {e}");
        }
        for n_w in [1, 2, 3, 8, 17] {
            let ch = default_channels(n_w);
            let mean = ch.iter().sum::<f64>() / n_w as f64;
            assert!((mean - 1.0).abs() < 1e-12);
        }
        assert_eq!(reference_channel(4), 1);
        assert_eq!(reference_channel(3), 1);
        assert_eq!(reference_channel(2), 0);
        assert_eq!(reference_channel(1), 0);
    }

    #[test]
    fn geometry_rules() {
        let g = StackGeometry::new(8, 32, 3, default_channels(2)).unwrap();
        assert_eq!(g.neurons(), 8 * 32 * 32);
        assert_eq!(g.grid_side, 32);
        assert!((g.distance - 8.0).abs() < 1e-15);
        let small = StackGeometry::new(4, 6, 3, vec![1.0]).unwrap();
        assert_eq!(small.grid_side, 12);
        assert!(matches!(small.clone().with_grid_side(10), Err(Error::Config(_))));
        assert!(matches!(StackGeometry::new(0, 6, 3, vec![1.0]), Err(Error::Config(_))));
        assert!(matches!(StackGeometry::new(2, 6, 3, vec![]), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_latents() {
        let a = small_model(2, 2, 11);
        let b = small_model(2, 2, 11);
        assert_eq!(a.latents(), b.latents());
        assert_ne!(a.latents(), small_model(2, 2, 12).latents());
    }

    #[test]
    fn latents_are_standard_normal() {
        let g = StackGeometry::new(1, 100, 1, vec![1.0]).unwrap();
        let m = DiffractiveModel::random(g, Material::dispersion_free(), BitDepth::Continuous, 5).unwrap();
        let xs = &m.latents()[0];
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((0.95..1.05).contains(&std), "std {std}");
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let m = small_model(3, 2, 1);
        let out = m.forward(&FovField::zeros(2), 1).unwrap();
        assert!(out.values().iter().all(|v| *v == C64::new(0.0, 0.0)));
    }

    #[test]
    fn channel_out_of_range_is_rejected() {
        let m = small_model(1, 2, 1);
        assert!(matches!(m.forward(&FovField::zeros(2), 2), Err(Error::Parameter(_))));
    }

    #[test]
    fn forward_is_linear() {
        let m = small_model(3, 2, 4);
        for trial in 0..5 {
            let i1 = random_fov(2, trial);
            let i2 = random_fov(2, trial + 50);
            let a = C64::new(0.3, -1.1);
            let b = C64::new(-0.7, 0.2);
            let mix: Vec<C64> = i1
                .values()
                .iter()
                .zip(i2.values())
                .map(|(x, y)| a * x + b * y)
                .collect();
            let mix = FovField::new(2, mix).unwrap();
            for w in 0..2 {
                let lhs = m.forward(&mix, w).unwrap();
                let o1 = m.forward(&i1, w).unwrap();
                let o2 = m.forward(&i2, w).unwrap();
                let rhs: Vec<C64> = o1
                    .values()
                    .iter()
                    .zip(o2.values())
                    .map(|(x, y)| a * x + b * y)
                    .collect();
                let diff: Vec<C64> = lhs.values().iter().zip(&rhs).map(|(x, y)| x - y).collect();
                assert!(energy(&diff).sqrt() < 1e-10 * energy(&rhs).sqrt());
            }
        }
    }

    #[test]
    fn transparent_layers_reduce_to_free_space() {
        // h = λ/0.72 gives exactly one wave of phase on a lossless n = 1.72 layer.
        let wl = 1.0;
        let h_learn = wl / 0.72 - H_BASE;
        let latent = (2.0 * h_learn / H_MAX - 1.0).asin();
        let layers = 3;
        let g = StackGeometry::new(layers, 16, 2, vec![wl])
            .unwrap()
            .with_boundary(Boundary::Periodic);
        let latents = vec![vec![latent; 256]; layers];
        let m =
            DiffractiveModel::from_latents(g.clone(), Material::dispersion_free(), BitDepth::Continuous, 0, latents)
                .unwrap();
        let input = random_fov(2, 3);
        let out = m.forward(&input, 0).unwrap();
        let plan = PropagationPlan::with_boundary(
            16,
            16,
            SIM_PITCH,
            (layers + 1) as f64 * g.distance,
            wl,
            Boundary::Periodic,
        )
        .unwrap();
        let direct = bin_fov(&plan.propagate(&embed_fov(&input, 16).unwrap()).unwrap(), 2).unwrap();
        let diff: Vec<C64> = out.values().iter().zip(direct.values()).map(|(x, y)| x - y).collect();
        assert!(energy(&diff).sqrt() < 1e-8 * direct.energy().sqrt());
    }

    #[test]
    fn output_energy_never_exceeds_input() {
        for seed in 0..6 {
            let m = small_model(4, 2, seed);
            let input = random_fov(2, seed + 7);
            for w in 0..2 {
                let out = m.forward(&input, w).unwrap();
                assert!(out.energy() <= input.energy());
            }
        }
    }

    #[test]
    fn monochrome_equals_matching_channel() {
        let multi = small_model(2, 4, 9);
        let wl = multi.geometry().channels[2];
        let mut g = multi.geometry().clone();
        g.channels = vec![wl];
        let mono = DiffractiveModel::from_latents(
            g,
            Material::dispersion_free(),
            BitDepth::Continuous,
            9,
            multi.latents().to_vec(),
        )
        .unwrap();
        let input = random_fov(2, 1);
        assert_eq!(mono.forward(&input, 0).unwrap(), multi.forward(&input, 2).unwrap());
    }

    #[test]
    fn quantized_model_uses_levels() {
        let m = small_model(1, 1, 3).with_bit_depth(BitDepth::Bits(2));
        let step = H_MAX / 3.0;
        for h in m.learnable_thicknesses(0) {
            let k = h / step;
            assert!((k - k.round()).abs() < 1e-12);
        }
    }

    #[test]
    fn free_space_padding_matches_plain_propagation() {
        // one-layer stack of fully transparent neurons in zero-padded mode
        let wl = 1.0;
        let h_learn = wl / 0.72 - H_BASE;
        let latent = (2.0 * h_learn / H_MAX - 1.0).asin();
        let g = StackGeometry::new(1, 12, 2, vec![wl]).unwrap();
        let m = DiffractiveModel::from_latents(
            g.clone(),
            Material::dispersion_free(),
            BitDepth::Continuous,
            0,
            vec![vec![latent; 144]],
        )
        .unwrap();
        let input = random_fov(2, 8);
        let e = embed_fov(&input, 12).unwrap();
        let twice = propagate(&propagate(&e, g.distance, wl).unwrap(), g.distance, wl).unwrap();
        let expect = bin_fov(&twice, 2).unwrap();
        let out = m.forward(&input, 0).unwrap();
        let diff: Vec<C64> = out.values().iter().zip(expect.values()).map(|(x, y)| x - y).collect();
        assert!(energy(&diff).sqrt() < 1e-12 * expect.energy().sqrt());
    }

    proptest! {
        #[test]
        fn quantize_is_idempotent(x in 0.0f64..=H_MAX, q in 1u32..=32) {
            let once = quantize(x, q);
            prop_assert_eq!(quantize(once, q), once);
        }

        #[test]
        fn total_thickness_is_bounded(latent in -1e3f64..1e3) {
            let h = thickness(latent) + H_BASE;
            prop_assert!((H_BASE..=H_BASE + H_MAX).contains(&h));
        }
    }
}
