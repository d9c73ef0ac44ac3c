//! The discrete transformed heat operator on the two half-slabs and its
//! per-Fourier-mode tridiagonal approximation.
//!
//! On every row except `z = 0` the spatial operator is
//! `A[u] = −u_xx − a u_zz + B u_xz + c u_z` with centered differences in z.
//! The walls carry homogeneous Neumann data through a ghost node:
//! `u_z = 0`, `u_zz = 2(u_nbr − u)/Δz²`. The row `z = 0` holds Dirichlet data
//! and is left out of every operator.

use num_complex::Complex64;

use crate::fields::{BulkField, Grid, Half};
use crate::hanzawa::TransformCoefficients;

/// Centered normal derivatives `(u_z, u_zz)` with the wall convention above;
/// the interface row is zero in both.
pub(crate) fn normal_derivatives(u: &BulkField, grid: &Grid) -> (BulkField, BulkField) {
    let (n_x, n_z) = (grid.n_x(), grid.n_z());
    let (h, c) = (grid.dz(), grid.center());
    let mut uz = vec![0.0; n_x * n_z];
    let mut uzz = vec![0.0; n_x * n_z];
    for j in 0..n_z {
        if j == c {
            continue;
        }
        for i in 0..n_x {
            let k = j * n_x + i;
            if j == 0 || j == n_z - 1 {
                let nbr = if j == 0 { 1 } else { n_z - 2 };
                uzz[k] = 2.0 * (u.get(i, nbr) - u.get(i, j)) / (h * h);
            } else {
                let (up, dn, v) = (u.get(i, j + 1), u.get(i, j - 1), u.get(i, j));
                uz[k] = 0.5 * (up - dn) / h;
                uzz[k] = (up - 2.0 * v + dn) / (h * h);
            }
        }
    }
    (
        BulkField::from_vec(n_x, n_z, uz),
        BulkField::from_vec(n_x, n_z, uzz),
    )
}

/// `A[u]` with the frozen coefficients; zero on the interface row.
pub(crate) fn apply_spatial(u: &BulkField, coeffs: &TransformCoefficients, grid: &Grid) -> BulkField {
    let (uz, uzz) = normal_derivatives(u, grid);
    let uxx = u.dx(grid, 2);
    let uxz = uz.dx(grid, 1);
    let (a, b, c) = (&coeffs.a, &coeffs.b[0], &coeffs.c);
    let mut out: Vec<f64> = (0..u.values().len())
        .map(|k| {
            -uxx.values()[k] - a.values()[k] * uzz.values()[k]
                + b.values()[k] * uxz.values()[k]
                + c.values()[k] * uz.values()[k]
        })
        .collect();
    let n_x = grid.n_x();
    let center = grid.center();
    out[center * n_x..(center + 1) * n_x].fill(0.0);
    BulkField::from_vec(n_x, grid.n_z(), out)
}

/// `A_P[u] = −u_xx − ā(z) u_zz + c̄(z) u_z`, the x-averaged part of `A`.
pub(crate) fn apply_mean_spatial(u: &BulkField, pre: &ModeOperator, grid: &Grid) -> BulkField {
    let (uz, uzz) = normal_derivatives(u, grid);
    let uxx = u.dx(grid, 2);
    let n_x = grid.n_x();
    let mut out = vec![0.0; u.values().len()];
    for j in 0..grid.n_z() {
        if j == grid.center() {
            continue;
        }
        for i in 0..n_x {
            let k = j * n_x + i;
            out[k] = -uxx.values()[k] - pre.abar[j] * uzz.values()[k] + pre.cbar[j] * uz.values()[k];
        }
    }
    BulkField::from_vec(n_x, grid.n_z(), out)
}

/// Row means of a bulk field.
pub(crate) fn row_means(f: &BulkField) -> Vec<f64> {
    (0..f.n_z())
        .map(|j| f.row(j).iter().sum::<f64>() / f.n_x() as f64)
        .collect()
}

/// Per-mode operator `inv_dt + θ(k² − ā ∂_zz + c̄ ∂_z)` on one half-slab.
#[derive(Debug, Clone)]
pub(crate) struct ModeOperator {
    pub inv_dt: f64,
    pub theta: f64,
    pub abar: Vec<f64>,
    pub cbar: Vec<f64>,
}

/// Rows of a half in distance order from the interface (interface excluded).
pub(crate) fn half_rows_outward(grid: &Grid, half: Half) -> Vec<usize> {
    let c = grid.center();
    match half {
        Half::Upper => (c + 1..grid.n_z()).collect(),
        Half::Lower => (0..c).rev().collect(),
    }
}

impl ModeOperator {
    pub fn new(inv_dt: f64, theta: f64, coeffs: &TransformCoefficients) -> Self {
        Self {
            inv_dt,
            theta,
            abar: row_means(&coeffs.a),
            cbar: row_means(&coeffs.c),
        }
    }

    /// Solves one mode on one half. `rhs` is in outward order, `dirichlet`
    /// is the interface value.
    pub fn solve(
        &self,
        grid: &Grid,
        half: Half,
        k2: f64,
        rhs: &[Complex64],
        dirichlet: Complex64,
    ) -> Vec<Complex64> {
        let rows = half_rows_outward(grid, half);
        let m = rows.len();
        let h = grid.dz();
        let s = match half {
            Half::Upper => 1.0,
            Half::Lower => -1.0,
        };
        let th = self.theta;
        let mut lower = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut upper = vec![0.0; m];
        for (p, &j) in rows.iter().enumerate() {
            let (a, c) = (self.abar[j], self.cbar[j]);
            diag[p] = self.inv_dt + th * k2 + 2.0 * th * a / (h * h);
            if p == m - 1 {
                lower[p] = -2.0 * th * a / (h * h);
            } else {
                lower[p] = -th * a / (h * h) - th * c * s / (2.0 * h);
                upper[p] = -th * a / (h * h) + th * c * s / (2.0 * h);
            }
        }
        let mut b: Vec<Complex64> = rhs.to_vec();
        b[0] -= dirichlet * lower[0];
        thomas(&lower, &diag, &upper, &mut b);
        b
    }
}

/// Tridiagonal solve with real bands and a complex right-hand side;
/// `lower[0]` and `upper[m-1]` are ignored.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], b: &mut [Complex64]) {
    let m = b.len();
    let mut cp = vec![0.0; m];
    let mut den = diag[0];
    cp[0] = upper[0] / den;
    b[0] /= den;
    for p in 1..m {
        den = diag[p] - lower[p] * cp[p - 1];
        cp[p] = if p + 1 < m { upper[p] / den } else { 0.0 };
        let prev = b[p - 1];
        b[p] = (b[p] - prev * lower[p]) / den;
    }
    for p in (0..m - 1).rev() {
        let next = b[p + 1];
        b[p] -= next * cp[p];
    }
}

/// Mode-by-mode data of a bulk field: `[lower, upper]`, each indexed
/// `[row in outward order][mode]`.
pub(crate) type HalfSpectra = [Vec<Vec<Complex64>>; 2];

pub(crate) fn to_spectra(f: &BulkField, grid: &Grid) -> HalfSpectra {
    Half::BOTH.map(|half| {
        half_rows_outward(grid, half)
            .iter()
            .map(|&j| grid.fourier().forward(f.row(j)))
            .collect()
    })
}

/// Inverse of [`to_spectra`]; the interface row is set to `trace`.
pub(crate) fn from_spectra(spec: HalfSpectra, trace: &[f64], grid: &Grid) -> BulkField {
    let mut out = BulkField::zeros(grid);
    for (half, rows) in Half::BOTH.into_iter().zip(spec) {
        for (&j, row) in half_rows_outward(grid, half).iter().zip(rows) {
            out.row_mut(j).copy_from_slice(&grid.fourier().inverse(row));
        }
    }
    out.row_mut(grid.center()).copy_from_slice(trace);
    out
}

/// Solves `P û = r̂` mode by mode with interface values `dirichlet[mode]`.
pub(crate) fn solve_spectra(
    pre: &ModeOperator,
    rhs: &HalfSpectra,
    dirichlet: &[Complex64],
    grid: &Grid,
) -> HalfSpectra {
    let fourier = grid.fourier();
    let n_x = grid.n_x();
    let mut out: HalfSpectra = [Vec::new(), Vec::new()];
    for (hi, half) in Half::BOTH.into_iter().enumerate() {
        let m = rhs[hi].len();
        let mut cols = vec![vec![Complex64::new(0.0, 0.0); n_x]; m];
        for i in 0..n_x {
            let k = fourier.wavenumber(i);
            let column: Vec<Complex64> = (0..m).map(|p| rhs[hi][p][i]).collect();
            let sol = pre.solve(grid, half, k * k, &column, dirichlet[i]);
            for p in 0..m {
                cols[p][i] = sol[p];
            }
        }
        out[hi] = cols;
    }
    out
}

/// `[u_n]⁻₊` of a mode-wise field with interface values `dirichlet`.
pub(crate) fn spectral_jump(spec: &HalfSpectra, dirichlet: &[Complex64], grid: &Grid) -> Vec<Complex64> {
    let h = grid.dz();
    (0..grid.n_x())
        .map(|i| {
            let near = spec[0][0][i] + spec[1][0][i];
            let far = spec[0][1][i] + spec[1][1][i];
            (dirichlet[i] * 6.0 - near * 4.0 + far) / (2.0 * h)
        })
        .collect()
}

/// Scale that turns an operator residual into units of `u`.
pub(crate) fn residual_scale(inv_dt: f64, theta: f64, grid: &Grid) -> f64 {
    inv_dt + theta * (1.0 + 2.0 / (grid.dz() * grid.dz()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::InterfaceField;
    use crate::hanzawa::{coefficients, Cutoff, CutoffProfile};

    #[test]
    fn thomas_matches_dense_solve() {
        let lower = [0.0, -1.0, -1.5, -2.0];
        let diag = [4.0, 5.0, 6.0, 7.0];
        let upper = [-1.0, -0.5, -1.0, 0.0];
        let rhs = [1.0, 2.0, -1.0, 0.5];
        let mut b: Vec<Complex64> = rhs.iter().map(|&r| Complex64::new(r, 2.0 * r)).collect();
        thomas(&lower, &diag, &upper, &mut b);
        for p in 0..4 {
            let mut r = diag[p] * b[p];
            if p > 0 {
                r += lower[p] * b[p - 1];
            }
            if p < 3 {
                r += upper[p] * b[p + 1];
            }
            assert!((r - Complex64::new(rhs[p], 2.0 * rhs[p])).norm() < 1e-13);
        }
    }

    #[test]
    fn mode_operator_agrees_with_physical_operator_on_flat_coefficients() {
        let g = Grid::new(16, 17).unwrap();
        let cut = Cutoff::new(0.25, CutoffProfile::Quintic).unwrap();
        let zero = InterfaceField::zeros(&g);
        let co = coefficients(&zero, &zero, &cut, &g).unwrap();
        let pre = ModeOperator::new(10.0, 1.0, &co);
        let rhs = BulkField::from_fn(&g, |x, z| (2.0 * x).cos() * (1.0 + z * z));
        let trace: Vec<f64> = g.tangential.nodes().iter().map(|x| x.sin()).collect();
        let dir = g.fourier().forward(&trace);
        let sol = from_spectra(solve_spectra(&pre, &to_spectra(&rhs, &g), &dir, &g), &trace, &g);
        let applied = apply_spatial(&sol, &co, &g);
        for j in 0..g.n_z() {
            if j == g.center() {
                assert_eq!(sol.row(j), &trace[..]);
                continue;
            }
            for i in 0..g.n_x() {
                let lhs = 10.0 * sol.get(i, j) + applied.get(i, j);
                assert!((lhs - rhs.get(i, j)).abs() < 1e-10);
            }
        }
    }
}
