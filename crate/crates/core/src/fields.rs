//! Grids, field containers, discrete differentiation and quadrature.
//!
//! The tangential direction is the torus `[0, 2π)` sampled at `n_x` uniform
//! points and differentiated pseudo-spectrally. The normal direction is
//! `[-1, 1]` sampled at an odd number `n_z` of uniform nodes so that the
//! interface `z = 0` is the grid line with index `(n_z - 1) / 2`.
//!
//! Bulk fields are stored row-major by normal node: row `j` holds the
//! tangential samples at `z_j`. The row at `z = 0` stores the (continuous)
//! interface trace; derivatives across it are taken one-sidedly.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_finite, Result, StefanError};

/// Period of the torus in every tangential direction.
pub const PERIOD: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TangentialGrid {
    n: usize,
}

impl TangentialGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || !n.is_multiple_of(2) {
            return Err(StefanError::Config(format!(
                "tangential grid needs an even n_x >= 8, got {n}"
            )));
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spacing(&self) -> f64 {
        PERIOD / self.n as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormalGrid {
    n: usize,
}

impl NormalGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 5 || n.is_multiple_of(2) {
            return Err(StefanError::Config(format!(
                "normal grid needs an odd n_z >= 5, got {n}"
            )));
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spacing(&self) -> f64 {
        2.0 / (self.n - 1) as f64
    }

    /// Index of the interface node `z = 0`.
    pub fn center(&self) -> usize {
        (self.n - 1) / 2
    }

    pub fn node(&self, j: usize) -> f64 {
        let c = self.center() as f64;
        (j as f64 - c) / c
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }
}

/// Cached FFT plans and wavenumbers for one tangential resolution.
pub struct Fourier {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fourier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fourier").field("n", &self.n).finish()
    }
}

impl Fourier {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    /// Signed integer wavenumber of FFT bin `i`.
    pub fn wavenumber(&self, i: usize) -> f64 {
        if i <= self.n / 2 {
            i as f64
        } else {
            i as f64 - self.n as f64
        }
    }

    pub fn is_nyquist(&self, i: usize) -> bool {
        i == self.n / 2
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse transform (normalized), keeping the real part.
    pub fn inverse(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.inverse.process(&mut spectrum);
        let scale = 1.0 / self.n as f64;
        spectrum.iter().map(|c| c.re * scale).collect()
    }

    /// Multiplies every mode by `symbol(k)` and transforms back.
    pub fn apply_symbol(&self, values: &[f64], symbol: impl Fn(f64) -> Complex64) -> Vec<f64> {
        let mut spec = self.forward(values);
        for (i, c) in spec.iter_mut().enumerate() {
            *c *= symbol(self.wavenumber(i));
        }
        self.inverse(spec)
    }

    /// `order`-th derivative; the Nyquist mode is dropped for odd orders.
    pub fn derivative(&self, values: &[f64], order: u32) -> Vec<f64> {
        if order == 0 {
            return values.to_vec();
        }
        let mut spec = self.forward(values);
        let i_unit = Complex64::new(0.0, 1.0);
        for (i, c) in spec.iter_mut().enumerate() {
            if order % 2 == 1 && self.is_nyquist(i) {
                *c = Complex64::new(0.0, 0.0);
                continue;
            }
            *c *= (i_unit * self.wavenumber(i)).powu(order);
        }
        self.inverse(spec)
    }
}

/// Tensor grid `T × [-1, 1]` with cached spectral machinery.
#[derive(Debug, Clone)]
pub struct Grid {
    pub tangential: TangentialGrid,
    pub normal: NormalGrid,
    fourier: Arc<Fourier>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.tangential == other.tangential && self.normal == other.normal
    }
}

impl Grid {
    pub fn new(n_x: usize, n_z: usize) -> Result<Self> {
        let tangential = TangentialGrid::new(n_x)?;
        let normal = NormalGrid::new(n_z)?;
        Ok(Self {
            tangential,
            normal,
            fourier: Arc::new(Fourier::new(n_x)),
        })
    }

    pub fn n_x(&self) -> usize {
        self.tangential.len()
    }

    pub fn n_z(&self) -> usize {
        self.normal.len()
    }

    pub fn dx(&self) -> f64 {
        self.tangential.spacing()
    }

    pub fn dz(&self) -> f64 {
        self.normal.spacing()
    }

    pub fn center(&self) -> usize {
        self.normal.center()
    }

    pub fn fourier(&self) -> &Fourier {
        &self.fourier
    }

    pub fn point_count(&self) -> usize {
        self.n_x() * self.n_z()
    }

    /// Rows belonging to one closed half of the normal interval, in increasing z.
    pub fn half_rows(&self, half: Half) -> Range<usize> {
        match half {
            Half::Lower => 0..self.center() + 1,
            Half::Upper => self.center()..self.n_z(),
        }
    }
}

/// One of the two phases `Ω⁻ = T × [-1, 0]` and `Ω⁺ = T × [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half {
    Lower,
    Upper,
}

impl Half {
    pub const BOTH: [Half; 2] = [Half::Lower, Half::Upper];
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceField {
    values: Vec<f64>,
}

impl InterfaceField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite("interface field", &values)?;
        Ok(Self { values })
    }

    pub(crate) fn from_vec(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self {
            values: vec![value; grid.n_x()],
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: grid.tangential.nodes().into_iter().map(f).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_vec(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_vec(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// Spectral derivative (no finiteness check; see [`d_tangential`]).
    pub fn dx(&self, grid: &Grid, order: u32) -> Self {
        Self::from_vec(grid.fourier().derivative(&self.values, order))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BulkField {
    n_x: usize,
    n_z: usize,
    values: Vec<f64>,
}

impl BulkField {
    pub fn new(n_x: usize, n_z: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_x * n_z {
            return Err(StefanError::GridMismatch(format!(
                "bulk field with {} values does not fit {n_x} x {n_z}",
                values.len()
            )));
        }
        check_finite("bulk field", &values)?;
        Ok(Self { n_x, n_z, values })
    }

    pub(crate) fn from_vec(n_x: usize, n_z: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n_x * n_z);
        Self { n_x, n_z, values }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::from_vec(grid.n_x(), grid.n_z(), vec![0.0; grid.point_count()])
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let xs = grid.tangential.nodes();
        let mut values = Vec::with_capacity(grid.point_count());
        for z in grid.normal.nodes() {
            values.extend(xs.iter().map(|&x| f(x, z)));
        }
        Self::from_vec(grid.n_x(), grid.n_z(), values)
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_x..(j + 1) * self.n_x]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.n_x..(j + 1) * self.n_x]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.n_x + i]
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_vec(self.n_x, self.n_z, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.values.len(), other.values.len());
        Self::from_vec(
            self.n_x,
            self.n_z,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// Trace on the row `z = 0`.
    pub fn trace(&self, grid: &Grid) -> InterfaceField {
        InterfaceField::from_vec(self.row(grid.center()).to_vec())
    }

    /// Rows `rows` as a new field (used to split the two phases).
    pub fn rows(&self, rows: Range<usize>) -> Self {
        let n_z = rows.len();
        Self::from_vec(
            self.n_x,
            n_z,
            self.values[rows.start * self.n_x..rows.end * self.n_x].to_vec(),
        )
    }

    /// Spectral tangential derivative of every row.
    pub fn dx(&self, grid: &Grid, order: u32) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..self.n_z {
            values.extend(grid.fourier().derivative(self.row(j), order));
        }
        Self::from_vec(self.n_x, self.n_z, values)
    }

    /// Multiplies each row `j` pointwise by `weights[j]`.
    pub fn scale_rows(&self, weights: &[f64]) -> Self {
        let mut out = self.clone();
        for (j, &w) in weights.iter().enumerate() {
            out.row_mut(j).iter_mut().for_each(|v| *v *= w);
        }
        out
    }
}

pub(crate) fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Spectral tangential derivative of a periodic row.
pub fn d_tangential(grid: &Grid, f: &[f64], order: u32) -> Result<Vec<f64>> {
    if f.len() != grid.n_x() {
        return Err(StefanError::GridMismatch(format!(
            "row of length {} on a tangential grid of {}",
            f.len(),
            grid.n_x()
        )));
    }
    if !(1..=2).contains(&order) {
        return Err(StefanError::Config(format!(
            "tangential derivative order must be 1 or 2, got {order}"
        )));
    }
    check_finite("tangential derivative input", f)?;
    Ok(grid.fourier().derivative(f, order))
}

/// Which one-sided stencil to use on the interface row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Forward stencil at `z = 0⁺`.
    Above,
    /// Backward stencil at `z = 0⁻`.
    Below,
    /// Centered at `z = 0`; only first order if the field has a kink there.
    Centered,
}

/// First normal derivative: centered in the interior, second-order
/// one-sided 3-point stencils at the walls and (for `Above`/`Below`) on the
/// interface row.
pub fn d_normal(grid: &Grid, f: &BulkField, side: Side) -> Result<BulkField> {
    if f.n_x() != grid.n_x() || f.n_z() != grid.n_z() {
        return Err(StefanError::GridMismatch("d_normal input".into()));
    }
    check_finite("normal derivative input", f.values())?;
    let mut out = slab_dz(f, grid.dz());
    let c = grid.center();
    let h = grid.dz();
    let stencil: Option<[(usize, f64); 3]> = match side {
        Side::Above => Some([(c, -1.5), (c + 1, 2.0), (c + 2, -0.5)]),
        Side::Below => Some([(c, 1.5), (c - 1, -2.0), (c - 2, 0.5)]),
        Side::Centered => None,
    };
    if let Some(stencil) = stencil {
        for i in 0..grid.n_x() {
            let v: f64 = stencil.iter().map(|&(j, w)| w * f.get(i, j)).sum();
            out.row_mut(c)[i] = v / h;
        }
    }
    Ok(out)
}

/// `[u_n]⁻₊ = ∂_z u(0⁻) − ∂_z u(0⁺)` with one-sided 3-point stencils.
pub(crate) fn normal_jump(grid: &Grid, f: &BulkField) -> Vec<f64> {
    let c = grid.center();
    let h = grid.dz();
    (0..grid.n_x())
        .map(|i| {
            let below = 1.5 * f.get(i, c) - 2.0 * f.get(i, c - 1) + 0.5 * f.get(i, c - 2);
            let above = -1.5 * f.get(i, c) + 2.0 * f.get(i, c + 1) - 0.5 * f.get(i, c + 2);
            (below - above) / h
        })
        .collect()
}

/// First derivative along the rows of a slab (any number of rows ≥ 3):
/// centered inside, one-sided second order at both ends.
pub fn slab_dz(f: &BulkField, h: f64) -> BulkField {
    let (n_x, n_z) = (f.n_x(), f.n_z());
    let mut out = vec![0.0; n_x * n_z];
    for j in 0..n_z {
        for i in 0..n_x {
            out[j * n_x + i] = if j == 0 {
                -1.5 * f.get(i, 0) + 2.0 * f.get(i, 1) - 0.5 * f.get(i, 2)
            } else if j == n_z - 1 {
                1.5 * f.get(i, j) - 2.0 * f.get(i, j - 1) + 0.5 * f.get(i, j - 2)
            } else {
                0.5 * (f.get(i, j + 1) - f.get(i, j - 1))
            } / h;
        }
    }
    BulkField::from_vec(n_x, n_z, out)
}

/// Second derivative along the rows of a slab (≥ 4 rows): centered inside,
/// one-sided 4-point second order at both ends.
pub fn slab_dzz(f: &BulkField, h: f64) -> BulkField {
    let (n_x, n_z) = (f.n_x(), f.n_z());
    let h2 = h * h;
    let mut out = vec![0.0; n_x * n_z];
    for j in 0..n_z {
        for i in 0..n_x {
            out[j * n_x + i] = if j == 0 {
                2.0 * f.get(i, 0) - 5.0 * f.get(i, 1) + 4.0 * f.get(i, 2) - f.get(i, 3)
            } else if j == n_z - 1 {
                2.0 * f.get(i, j) - 5.0 * f.get(i, j - 1) + 4.0 * f.get(i, j - 2)
                    - f.get(i, j - 3)
            } else {
                f.get(i, j + 1) - 2.0 * f.get(i, j) + f.get(i, j - 1)
            } / h2;
        }
    }
    BulkField::from_vec(n_x, n_z, out)
}

/// Trapezoid weights for `n` equispaced nodes with spacing `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

/// Rectangle rule on the torus.
pub fn integrate_torus(grid: &Grid, f: &[f64]) -> f64 {
    f.iter().sum::<f64>() * grid.dx()
}

/// Rectangle × trapezoid rule over a slab with normal spacing `dz`.
pub fn integrate_slab(grid: &Grid, f: &BulkField, dz: f64) -> f64 {
    let w = trapezoid_weights(f.n_z(), dz);
    (0..f.n_z())
        .map(|j| w[j] * f.row(j).iter().sum::<f64>())
        .sum::<f64>()
        * grid.dx()
}

/// Rectangle × trapezoid rule over the whole bulk `T × [-1, 1]`.
pub fn integrate_bulk(grid: &Grid, f: &BulkField) -> f64 {
    integrate_slab(grid, f, grid.dz())
}

/// Fraction of spectral energy carried by the top third of the resolved modes.
pub fn spectral_tail_fraction(grid: &Grid, f: &[f64]) -> f64 {
    let fourier = grid.fourier();
    let spec = fourier.forward(f);
    let cutoff = grid.n_x() as f64 / 3.0;
    let (mut total, mut tail) = (0.0, 0.0);
    for (i, c) in spec.iter().enumerate() {
        let e = c.norm_sqr();
        total += e;
        if fourier.wavenumber(i).abs() > cutoff {
            tail += e;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        tail / total
    }
}
