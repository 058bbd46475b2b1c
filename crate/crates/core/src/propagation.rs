//! Free-space scalar propagation between parallel planes.
//!
//! [`PropagationPlan`] implements the angular-spectrum transfer function
//! `H(fx, fy) = exp(j 2π d sqrt(1/λ² − fx² − fy²))`, keeping only modes with
//! `fx² + fy² ≤ min(1/λ², f_nyq²)`. Everything else (evanescent modes and
//! propagating modes above the grid Nyquist frequency) is zeroed.
//!
//! [`direct_rs_reference`] evaluates the Rayleigh-Sommerfeld impulse
//! response by brute-force summation and exists to validate the plan.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::{ComplexGrid, C64};

/// How the finite grid is extended before the discrete Fourier transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Zero-pad to twice the linear size, then crop back. Suppresses
    /// circular wrap-around; light leaving the window is lost.
    ZeroPadded,
    /// No padding; the grid is treated as one period of a periodic field.
    Periodic,
}

/// Precomputed transfer function and FFT plans for one
/// (grid, distance, wavelength) triple. Immutable and shareable.
#[derive(Clone)]
pub struct PropagationPlan {
    distance: f64,
    wavelength: f64,
    pitch: f64,
    height: usize,
    width: usize,
    padded_height: usize,
    padded_width: usize,
    // Stored transposed: index kx * padded_height + ky.
    transfer: Vec<C64>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for PropagationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PropagationPlan")
            .field("distance", &self.distance)
            .field("wavelength", &self.wavelength)
            .field("pitch", &self.pitch)
            .field("height", &self.height)
            .field("width", &self.width)
            .field("padded_height", &self.padded_height)
            .field("padded_width", &self.padded_width)
            .finish()
    }
}

#[inline]
fn signed_index(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

impl PropagationPlan {
    pub fn new(height: usize, width: usize, pitch: f64, distance: f64, wavelength: f64) -> Result<Self> {
        Self::with_boundary(height, width, pitch, distance, wavelength, Boundary::ZeroPadded)
    }

    pub fn with_boundary(
        height: usize,
        width: usize,
        pitch: f64,
        distance: f64,
        wavelength: f64,
        boundary: Boundary,
    ) -> Result<Self> {
        if !(wavelength > 0.0) || !wavelength.is_finite() {
            return Err(Error::Parameter(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        if !(pitch > 0.0) || !pitch.is_finite() {
            return Err(Error::Parameter(format!("pitch must be positive, got {pitch}")));
        }
        if !distance.is_finite() {
            return Err(Error::Parameter(format!("distance must be finite, got {distance}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::Sizing("propagation grid must be non-empty".into()));
        }
        let factor = match boundary {
            Boundary::ZeroPadded => 2,
            Boundary::Periodic => 1,
        };
        let (ph, pw) = (height * factor, width * factor);

        let inv_wl2 = 1.0 / (wavelength * wavelength);
        let nyquist = 1.0 / (2.0 * pitch);
        let limit2 = inv_wl2.min(nyquist * nyquist);
        let mut transfer = Vec::with_capacity(ph * pw);
        for kx in 0..pw {
            let fx = signed_index(kx, pw) / (pw as f64 * pitch);
            for ky in 0..ph {
                let fy = signed_index(ky, ph) / (ph as f64 * pitch);
                let f2 = fx * fx + fy * fy;
                transfer.push(if f2 <= limit2 {
                    C64::from_polar(1.0, 2.0 * PI * distance * (inv_wl2 - f2).sqrt())
                } else {
                    C64::new(0.0, 0.0)
                });
            }
        }

        let mut planner = FftPlanner::new();
        Ok(Self {
            distance,
            wavelength,
            pitch,
            height,
            width,
            padded_height: ph,
            padded_width: pw,
            transfer,
            row_fwd: planner.plan_fft_forward(pw),
            row_inv: planner.plan_fft_inverse(pw),
            col_fwd: planner.plan_fft_forward(ph),
            col_inv: planner.plan_fft_inverse(ph),
        })
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// `(height, width)` of the fields this plan accepts.
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn transfer_function(&self) -> &[C64] {
        &self.transfer
    }

    /// Field on the parallel plane at the plan's distance.
    pub fn propagate(&self, field: &ComplexGrid) -> Result<ComplexGrid> {
        self.apply(field, false)
    }

    /// Exact adjoint of [`PropagationPlan::propagate`] under Σ conj(a)·b.
    pub fn adjoint(&self, field: &ComplexGrid) -> Result<ComplexGrid> {
        self.apply(field, true)
    }

    fn apply(&self, field: &ComplexGrid, conjugate: bool) -> Result<ComplexGrid> {
        if field.height() != self.height || field.width() != self.width {
            return Err(Error::Sizing(format!(
                "plan built for {}×{} grids, got {}×{}",
                self.height,
                self.width,
                field.height(),
                field.width()
            )));
        }
        if field.pitch() != self.pitch {
            return Err(Error::Parameter(format!(
                "plan pitch {} does not match field pitch {}",
                self.pitch,
                field.pitch()
            )));
        }
        if !field.is_finite() {
            return Err(Error::NonFinite("propagation input".into()));
        }
        let (ph, pw) = (self.padded_height, self.padded_width);
        let zero = C64::new(0.0, 0.0);

        let mut buf = vec![zero; ph * pw];
        for (r, row) in field.data().chunks_exact(self.width).enumerate() {
            buf[r * pw..r * pw + self.width].copy_from_slice(row);
        }
        self.row_fwd.process(&mut buf);
        let mut spec = transpose(&buf, ph, pw);
        self.col_fwd.process(&mut spec);
        if conjugate {
            spec.iter_mut().zip(&self.transfer).for_each(|(s, h)| *s *= h.conj());
        } else {
            spec.iter_mut().zip(&self.transfer).for_each(|(s, h)| *s *= h);
        }
        self.col_inv.process(&mut spec);
        let mut buf = transpose(&spec, pw, ph);
        self.row_inv.process(&mut buf);

        let norm = 1.0 / (ph * pw) as f64;
        let mut out = Vec::with_capacity(self.height * self.width);
        for r in 0..self.height {
            out.extend(buf[r * pw..r * pw + self.width].iter().map(|v| v * norm));
        }
        Ok(ComplexGrid::from_vec(self.height, self.width, out)?.with_pitch(self.pitch))
    }
}

fn transpose(src: &[C64], rows: usize, cols: usize) -> Vec<C64> {
    let mut dst = vec![C64::new(0.0, 0.0); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
    dst
}

/// Propagates `field` by `distance` at `wavelength` with zero padding.
pub fn propagate(field: &ComplexGrid, distance: f64, wavelength: f64) -> Result<ComplexGrid> {
    PropagationPlan::new(field.height(), field.width(), field.pitch(), distance, wavelength)?.propagate(field)
}

pub fn adjoint_propagate(field: &ComplexGrid, distance: f64, wavelength: f64) -> Result<ComplexGrid> {
    PropagationPlan::new(field.height(), field.width(), field.pitch(), distance, wavelength)?.adjoint(field)
}

/// Rayleigh-Sommerfeld secondary-wave kernel
/// `(d/r²)(1/(2πr) + 1/(jλ)) exp(j2πr/λ)` for a source cell of area `area`.
pub fn rs_kernel(dx: f64, dy: f64, distance: f64, wavelength: f64, area: f64) -> C64 {
    let r2 = dx * dx + dy * dy + distance * distance;
    let r = r2.sqrt();
    let amp = C64::new(1.0 / (2.0 * PI * r), -1.0 / wavelength) * (distance / r2);
    amp * C64::from_polar(area, 2.0 * PI * r / wavelength)
}

/// Literal O(M²) summation of the Rayleigh-Sommerfeld integral over every
/// source sample, evaluated on the same sample positions.
pub fn direct_rs_reference(field: &ComplexGrid, distance: f64, wavelength: f64) -> Result<ComplexGrid> {
    if !(distance > 0.0) {
        return Err(Error::Parameter(format!(
            "direct summation needs a positive distance, got {distance}"
        )));
    }
    if !(wavelength > 0.0) {
        return Err(Error::Parameter(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    let (h, w, p) = (field.height(), field.width(), field.pitch());
    let area = p * p;
    let sources: Vec<(usize, usize, C64)> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .map(|(r, c)| (r, c, field.get(r, c)))
        .filter(|(_, _, v)| *v != C64::new(0.0, 0.0))
        .collect();
    Ok(ComplexGrid::from_fn(h, w, |r, c| {
        sources
            .iter()
            .map(|&(sr, sc, v)| {
                let dy = (r as f64 - sr as f64) * p;
                let dx = (c as f64 - sc as f64) * p;
                v * rs_kernel(dx, dy, distance, wavelength, area)
            })
            .sum()
    })
    .with_pitch(p))
}
