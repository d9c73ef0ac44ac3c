use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Result, StefanError};

/// Spectrum of the problem linearized about the flat state `(0, 0)` for one
/// tangential wavenumber.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedMode {
    pub k: u32,
    pub epsilon: f64,
    pub matrix_dim: usize,
    /// Sorted by real part, largest first.
    pub eigenvalues: Vec<Complex64>,
}

impl LinearizedMode {
    pub fn leading(&self) -> Complex64 {
        self.eigenvalues[0]
    }

    /// Decay rate of a quadratic functional of the leading mode, `2|Re λ₁|`.
    pub fn energy_decay_rate(&self) -> f64 {
        2.0 * self.leading().re.abs()
    }
}

/// Dense eigenproblem for mode `k`:
///
/// ```text
/// λû = û_zz − k²û            on (−1,0) ∪ (0,1),
/// û(0±) = −k²ρ̂,  û_z(±1) = 0,
/// (1 + εk⁴)λρ̂ = û_z(0⁻) − û_z(0⁺),
/// ```
///
/// second-order differences with `n_cells` cells per half. Only the flat
/// state `ρ̄ = 0` is supported: there `a = 1` and `B = c = 0`.
pub fn linearized_spectrum(k: u32, n_cells: usize, epsilon: f64) -> Result<LinearizedMode> {
    if n_cells < 64 {
        return Err(StefanError::Config(format!(
            "dense spectrum needs at least 64 cells per half, got {n_cells}"
        )));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(StefanError::Config(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let kf = f64::from(k);
    let k2 = kf * kf;
    let h = 1.0 / n_cells as f64;
    let ih2 = 1.0 / (h * h);
    // Unknowns: upper nodes z = h..1, lower nodes z = −h..−1 (distance order), ρ̂.
    let m = n_cells;
    let dim = 2 * m + 1;
    let r = 2 * m;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    for side in 0..2 {
        let off = side * m;
        for p in 0..m {
            let row = off + p;
            a[(row, row)] = -2.0 * ih2 - k2;
            if p == 0 {
                a[(row, r)] += ih2 * (-k2);
            } else {
                a[(row, row - 1)] += ih2;
            }
            if p == m - 1 {
                a[(row, row - 1)] += ih2;
            } else {
                a[(row, row + 1)] += ih2;
            }
        }
    }
    // û_z(0⁻) − û_z(0⁺) with one-sided three-point stencils, û(0) = −k²ρ̂.
    let scale = 1.0 / (1.0 + epsilon * k2 * k2);
    let w = scale / (2.0 * h);
    for off in [0, m] {
        a[(r, off)] -= 4.0 * w;
        a[(r, off + 1)] += w;
    }
    a[(r, r)] -= 6.0 * k2 * w;
    let mut eigenvalues: Vec<Complex64> = a
        .complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect();
    if eigenvalues.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(StefanError::Eigen(format!("non-finite eigenvalue for k = {k}")));
    }
    eigenvalues.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    Ok(LinearizedMode {
        k,
        epsilon,
        matrix_dim: dim,
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Root of `λ(1 + εk⁴) + 2k² s tanh s = 0`, `s = (λ + k²)^{1/2}`, in
    /// `(−k², 0)`, by bisection.
    fn dispersion_root(k: f64, eps: f64) -> f64 {
        let f = |l: f64| {
            let s = (l + k * k).sqrt();
            l * (1.0 + eps * k.powi(4)) + 2.0 * k * k * s * s.tanh()
        };
        let (mut lo, mut hi) = (-k * k, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn zero_mode_has_a_zero_eigenvalue() {
        for eps in [0.0, 1.0] {
            let m = linearized_spectrum(0, 64, eps).unwrap();
            assert!(m.leading().norm() < 1e-10);
            assert!(m.eigenvalues[1].re < -1.0);
        }
    }

    #[test]
    fn leading_eigenvalue_matches_the_dispersion_relation() {
        for (k, eps) in [(1, 0.0), (2, 0.0), (1, 0.5)] {
            let m = linearized_spectrum(k, 256, eps).unwrap();
            let exact = dispersion_root(f64::from(k), eps);
            assert!(m.leading().im.abs() < 1e-12);
            assert!((m.leading().re - exact).abs() < 1e-4 * exact.abs(), "{k} {eps}");
        }
    }

    #[test]
    fn flat_state_is_stable_and_modes_order_by_wavenumber() {
        let mut prev = 0.0;
        for k in 1..=8 {
            let lead = linearized_spectrum(k, 64, 0.0).unwrap().leading().re;
            assert!(lead < prev);
            prev = lead;
        }
    }

    #[test]
    fn regularization_slows_the_interface_mode() {
        let rates: Vec<f64> = [0.0, 1e-2, 1.0]
            .iter()
            .map(|&e| linearized_spectrum(2, 64, e).unwrap().leading().re.abs())
            .collect();
        assert!(rates[0] >= rates[1] && rates[1] >= rates[2]);
    }

    #[test]
    fn leading_eigenvalue_converges_at_second_order() {
        let l: Vec<f64> = [64, 128, 256]
            .iter()
            .map(|&n| linearized_spectrum(1, n, 0.0).unwrap().leading().re)
            .collect();
        let ratio = (l[0] - l[1]) / (l[1] - l[2]);
        assert!((ratio - 4.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn k1_leading_eigenvalue_regression() {
        let lead = linearized_spectrum(1, 256, 0.0).unwrap().leading().re;
        assert!((lead - dispersion_root(1.0, 0.0)).abs() < 1e-4);
        assert!((-0.7..-0.5).contains(&lead), "{lead}");
    }

    #[test]
    fn coarse_matrices_are_refused() {
        assert!(linearized_spectrum(1, 32, 0.0).is_err());
    }
}
