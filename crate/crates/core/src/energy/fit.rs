use serde::Serialize;

/// Result of fitting `ln V(t) ≈ c − K₂ t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DecayFit {
    Fitted { rate: f64, r_squared: f64, samples: usize },
    /// Too few usable samples, or the series is identically zero.
    Degenerate,
}

impl DecayFit {
    pub fn rate(&self) -> Option<f64> {
        match self {
            DecayFit::Fitted { rate, .. } => Some(*rate),
            DecayFit::Degenerate => None,
        }
    }

    pub fn r_squared(&self) -> Option<f64> {
        match self {
            DecayFit::Fitted { r_squared, .. } => Some(*r_squared),
            DecayFit::Degenerate => None,
        }
    }
}

/// Values below this count as zero.
const FLOOR: f64 = 1e-300;

/// Least-squares slope of `ln v` against `t` after discarding the first 20%
/// of the samples. `values` is typically `E + ‖ρ − ρ̄‖²`.
pub fn decay_fit(times: &[f64], values: &[f64]) -> DecayFit {
    let n = times.len().min(values.len());
    let start = n / 5;
    let pts: Vec<(f64, f64)> = (start..n)
        .filter(|&i| values[i].is_finite() && values[i] > FLOOR)
        .map(|i| (times[i], values[i].ln()))
        .collect();
    if pts.len() < 3 || pts.len() * 2 < n - start {
        return DecayFit::Degenerate;
    }
    let m = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let stt: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ym).powi(2)).sum();
    if stt == 0.0 {
        return DecayFit::Degenerate;
    }
    let slope = sty / stt;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sty * sty) / (stt * syy)
    };
    DecayFit::Fitted {
        rate: -slope,
        r_squared,
        samples: pts.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_exponential() {
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.01).collect();
        let v: Vec<f64> = t.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect();
        let fit = decay_fit(&t, &v);
        assert_relative_eq!(fit.rate().unwrap(), 2.0, max_relative = 1e-12);
        assert_relative_eq!(fit.r_squared().unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_series_is_degenerate() {
        let t: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert_eq!(decay_fit(&t, &vec![0.0; 50]), DecayFit::Degenerate);
        assert_eq!(decay_fit(&t[..2], &[1.0, 0.5]), DecayFit::Degenerate);
    }

    #[test]
    fn transient_is_discarded() {
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 0.02).collect();
        let v: Vec<f64> = t
            .iter()
            .enumerate()
            .map(|(i, t)| if i < 20 { 1e3 } else { (-1.5 * t).exp() })
            .collect();
        assert_relative_eq!(decay_fit(&t, &v).rate().unwrap(), 1.5, max_relative = 1e-12);
    }
}
