//! Complex field containers shared by every stage of the pipeline.
//!
//! All lengths are expressed in units of the mean wavelength `λ_m`. The
//! simulation planes are sampled at `λ_m / 2`; input and output apertures
//! (the fields of view) use pixels of `2 λ_m`, i.e. 4×4 simulation samples.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Sampling period of every simulation plane, in units of `λ_m`.
pub const SIM_PITCH: f64 = 0.5;

/// Pixel size of the input/output fields of view, in units of `λ_m`.
pub const FOV_PIXEL_PITCH: f64 = 2.0;

/// Simulation samples per FOV pixel along one axis.
pub const SAMPLES_PER_PIXEL: usize = 4;

/// Σ conj(a)·b
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn energy(values: &[C64]) -> f64 {
    values.iter().map(|v| v.norm_sqr()).sum()
}

/// 2D complex field sampled on a regular grid, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    data: Vec<C64>,
    height: usize,
    width: usize,
    pitch: f64,
}

impl ComplexGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: vec![C64::new(0.0, 0.0); height * width],
            height,
            width,
            pitch: SIM_PITCH,
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<C64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Sizing("grid dimensions must be at least 1".into()));
        }
        if data.len() != height * width {
            return Err(Error::Sizing(format!(
                "{} samples cannot fill a {height}×{width} grid",
                data.len()
            )));
        }
        Ok(Self {
            data,
            height,
            width,
            pitch: SIM_PITCH,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            data,
            height,
            width,
            pitch: SIM_PITCH,
        }
    }

    pub fn with_pitch(mut self, pitch: f64) -> Self {
        self.pitch = pitch;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: C64) {
        self.data[row * self.width + col] = value;
    }

    pub fn energy(&self) -> f64 {
        energy(&self.data)
    }

    pub fn inner(&self, other: &ComplexGrid) -> C64 {
        inner(&self.data, &other.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn scaled(mut self, factor: C64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= factor);
        self
    }

    /// Elementwise product with another grid of the same shape.
    pub fn hadamard(&self, other: &ComplexGrid) -> ComplexGrid {
        debug_assert_eq!(self.data.len(), other.data.len());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        ComplexGrid { data, ..*self }
    }
}

/// Square field of view, vectorized in column-major pixel order.
#[derive(Clone, Debug, PartialEq)]
pub struct FovField {
    values: Vec<C64>,
    side: usize,
}

impl FovField {
    pub fn new(side: usize, values: Vec<C64>) -> Result<Self> {
        if side == 0 || values.len() != side * side {
            return Err(Error::Sizing(format!(
                "{} values do not form a {side}×{side} field of view",
                values.len()
            )));
        }
        Ok(Self { values, side })
    }

    pub fn zeros(side: usize) -> Self {
        Self {
            values: vec![C64::new(0.0, 0.0); side * side],
            side,
        }
    }

    /// Standard basis vector `e_n` of the vectorized field.
    pub fn basis(side: usize, n: usize) -> Self {
        let mut f = Self::zeros(side);
        f.values[n] = C64::new(1.0, 0.0);
        f
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn pixel_pitch(&self) -> f64 {
        FOV_PIXEL_PITCH
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> C64 {
        self.values[row + self.side * col]
    }

    pub fn energy(&self) -> f64 {
        energy(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Column-major flattening of a square pixel array given as rows.
pub fn vectorize(pixels: &[Vec<C64>]) -> Result<Vec<C64>> {
    let side = pixels.len();
    if pixels.iter().any(|row| row.len() != side) {
        return Err(Error::Sizing("vectorize expects a square array".into()));
    }
    let mut out = Vec::with_capacity(side * side);
    for col in 0..side {
        for row in pixels {
            out.push(row[col]);
        }
    }
    Ok(out)
}

/// Inverse of [`vectorize`].
pub fn devectorize(values: &[C64]) -> Result<Vec<Vec<C64>>> {
    let side = (values.len() as f64).sqrt().round() as usize;
    if side * side != values.len() {
        return Err(Error::Sizing(format!(
            "{} values are not a square number of pixels",
            values.len()
        )));
    }
    Ok((0..side)
        .map(|row| (0..side).map(|col| values[row + side * col]).collect())
        .collect())
}

/// Offset of a centered window of `inner` samples inside `outer` samples.
/// An odd remainder puts the extra sample after the window.
#[inline]
pub fn centered_offset(outer: usize, inner: usize) -> usize {
    (outer - inner) / 2
}

/// Replicates each FOV pixel over its 4×4 sample block on a zero grid of
/// `grid_side × grid_side` samples, with the FOV centered.
pub fn embed_fov(f: &FovField, grid_side: usize) -> Result<ComplexGrid> {
    let span = SAMPLES_PER_PIXEL * f.side;
    if grid_side < span {
        return Err(Error::Sizing(format!(
            "a {grid_side}-sample grid cannot hold a {}-pixel field of view ({span} samples)",
            f.side
        )));
    }
    let offset = centered_offset(grid_side, span);
    let mut grid = ComplexGrid::zeros(grid_side, grid_side);
    for col in 0..f.side {
        for row in 0..f.side {
            let v = f.pixel(row, col);
            for dr in 0..SAMPLES_PER_PIXEL {
                let r = offset + row * SAMPLES_PER_PIXEL + dr;
                for dc in 0..SAMPLES_PER_PIXEL {
                    grid.set(r, offset + col * SAMPLES_PER_PIXEL + dc, v);
                }
            }
        }
    }
    Ok(grid)
}

/// Coherent 4×4 binning of the centered FOV region: each pixel is the
/// complex mean of its sample block.
pub fn bin_fov(g: &ComplexGrid, side: usize) -> Result<FovField> {
    let span = SAMPLES_PER_PIXEL * side;
    if side == 0 || g.height() < span || g.width() < span {
        return Err(Error::Sizing(format!(
            "a {side}-pixel field of view does not fit in a {}×{} grid",
            g.height(),
            g.width()
        )));
    }
    let r0 = centered_offset(g.height(), span);
    let c0 = centered_offset(g.width(), span);
    let norm = 1.0 / (SAMPLES_PER_PIXEL * SAMPLES_PER_PIXEL) as f64;
    let mut values = Vec::with_capacity(side * side);
    for col in 0..side {
        for row in 0..side {
            let mut block = [C64::new(0.0, 0.0); SAMPLES_PER_PIXEL * SAMPLES_PER_PIXEL];
            for dr in 0..SAMPLES_PER_PIXEL {
                let r = r0 + row * SAMPLES_PER_PIXEL + dr;
                for dc in 0..SAMPLES_PER_PIXEL {
                    block[dr * SAMPLES_PER_PIXEL + dc] = g.get(r, c0 + col * SAMPLES_PER_PIXEL + dc);
                }
            }
            values.push(pairwise_sum(&mut block) * norm);
        }
    }
    Ok(FovField { values, side })
}

// Tree reduction: a block of identical values sums to exactly 16·v, so
// binning a replicated pixel returns it bit-exactly.
fn pairwise_sum(block: &mut [C64]) -> C64 {
    let mut len = block.len();
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            block[i] = block[2 * i] + block[2 * i + 1];
        }
        len = half;
    }
    block[0]
}

/// Dense complex matrix stored column-major, so that `data()` is the
/// column-major vectorization used by the transformation metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_column_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Sizing(format!(
                "{} entries cannot fill a {rows}×{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_columns(rows: usize, columns: Vec<Vec<C64>>) -> Result<Self> {
        let cols = columns.len();
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Sizing("columns of unequal length".into()));
        }
        Ok(Self {
            rows,
            cols,
            data: columns.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row + self.rows * col]
    }

    pub fn column(&self, col: usize) -> &[C64] {
        &self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..*self
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = vec![C64::new(0.0, 0.0); self.rows];
        for (col, xc) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.column(col)) {
                *o += a * xc;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn lcg_field(side: usize, seed: u64) -> FovField {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let values = (0..side * side).map(|_| c(next(), next())).collect();
        FovField::new(side, values).unwrap()
    }

    #[test]
    fn single_pixel_embeds_as_centered_block() {
        let f = FovField::new(1, vec![c(1.0, 0.0)]).unwrap();
        let g = embed_fov(&f, 8).unwrap();
        for r in 0..8 {
            for col in 0..8 {
                let inside = (2..6).contains(&r) && (2..6).contains(&col);
                let expect = if inside { c(1.0, 0.0) } else { c(0.0, 0.0) };
                assert_eq!(g.get(r, col), expect, "sample ({r},{col})");
            }
        }
    }

    #[test]
    fn zero_fov_embeds_to_zero_grid() {
        let g = embed_fov(&FovField::zeros(3), 16).unwrap();
        assert!(g.data().iter().all(|v| *v == c(0.0, 0.0)));
    }

    #[test]
    fn embedding_multiplies_energy_by_sixteen() {
        let f = lcg_field(2, 3);
        let g = embed_fov(&f, 12).unwrap();
        assert!((g.energy() - 16.0 * f.energy()).abs() < 1e-12 * g.energy());
    }

    #[test]
    fn embed_rejects_small_grid() {
        assert!(matches!(embed_fov(&FovField::zeros(3), 11), Err(Error::Sizing(_))));
        assert!(matches!(bin_fov(&ComplexGrid::zeros(8, 8), 3), Err(Error::Sizing(_))));
    }

    #[test]
    fn odd_margin_goes_to_bottom_right() {
        let f = FovField::new(1, vec![c(1.0, 0.0)]).unwrap();
        let g = embed_fov(&f, 7).unwrap();
        assert_eq!(g.get(1, 1), c(1.0, 0.0));
        assert_eq!(g.get(0, 0), c(0.0, 0.0));
        assert_eq!(g.get(4, 4), c(1.0, 0.0));
        assert_eq!(g.get(5, 5), c(0.0, 0.0));
        assert_eq!(g.get(6, 6), c(0.0, 0.0));
    }

    #[test]
    fn constant_grid_bins_to_constant() {
        let value = c(0.3, -1.2);
        let g = ComplexGrid::from_fn(20, 20, |_, _| value);
        let f = bin_fov(&g, 4).unwrap();
        assert!(f.values().iter().all(|v| *v == value));
    }

    #[test]
    fn binning_matches_loop_oracle() {
        let g = ComplexGrid::from_fn(8, 8, |r, col| {
            c((r * 8 + col) as f64 * 0.37 - 3.0, ((r * 3 + col * 5) % 7) as f64 - 2.5)
        });
        let f = bin_fov(&g, 2).unwrap();
        // The 8×8 sample window exactly covers a 2×2 FOV; pixel (pr, pc)
        // spans rows 4pr..4pr+4, cols 4pc..4pc+4.
        for pr in 0..2 {
            for pc in 0..2 {
                let mut sum = c(0.0, 0.0);
                for r in 4 * pr..4 * pr + 4 {
                    for col in 4 * pc..4 * pc + 4 {
                        sum += g.get(r, col);
                    }
                }
                let expect = sum / 16.0;
                assert!((f.pixel(pr, pc) - expect).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn vectorize_is_column_major() {
        let (a, b, cc, d) = (c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0), c(4.0, 0.0));
        let v = vectorize(&[vec![a, b], vec![cc, d]]).unwrap();
        assert_eq!(v, vec![a, cc, b, d]);
    }

    #[test]
    fn vectorize_matches_index_formula() {
        let x: Vec<Vec<C64>> = (0..3)
            .map(|i| (0..3).map(|j| c(i as f64, j as f64 * 10.0)).collect())
            .collect();
        let v = vectorize(&x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(v[i + 3 * j], x[i][j]);
            }
        }
        assert_eq!(devectorize(&v).unwrap(), x);
        assert!(vectorize(&[vec![c(0.0, 0.0)], vec![]]).is_err());
    }

    #[test]
    fn matrix_apply_matches_columns() {
        let m = ComplexMatrix::from_columns(2, vec![vec![c(1.0, 0.0), c(0.0, 1.0)], vec![c(2.0, 0.0), c(3.0, 0.0)]])
            .unwrap();
        assert_eq!(m.get(1, 0), c(0.0, 1.0));
        let y = m.apply(&[c(1.0, 0.0), c(0.0, 1.0)]);
        assert_eq!(y, vec![c(1.0, 2.0), c(0.0, 4.0)]);
    }

    proptest! {
        #[test]
        fn bin_inverts_embed(side in 1usize..5, extra in 0usize..6, seed in any::<u64>()) {
            let f = lcg_field(side, seed);
            let g = embed_fov(&f, 4 * side + extra).unwrap();
            prop_assert_eq!(bin_fov(&g, side).unwrap(), f);
        }

        #[test]
        fn embed_and_bin_are_adjoint_up_to_sixteen(side in 1usize..4, extra in 0usize..5, seed in any::<u64>()) {
            let f = lcg_field(side, seed);
            let n = 4 * side + extra;
            let other = lcg_field(n, seed ^ 0x9e37);
            let g = ComplexGrid::from_vec(n, n, other.into_values()).unwrap();
            let lhs = embed_fov(&f, n).unwrap().inner(&g);
            let rhs = inner(f.values(), bin_fov(&g, side).unwrap().values()) * 16.0;
            prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + lhs.norm()));
        }

        #[test]
        fn vectorize_round_trips_and_preserves_energy(side in 1usize..6, seed in any::<u64>()) {
            let v = lcg_field(side, seed).into_values();
            let pixels = devectorize(&v).unwrap();
            let back = vectorize(&pixels).unwrap();
            prop_assert_eq!(energy(&back), energy(&v));
            prop_assert_eq!(back, v);
        }
    }
}
