use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{lit, Real, Tensor};
use crate::error::{Error, Result};

/// Weights whose estimated largest singular value falls below this are left alone.
pub const DEGENERATE_SIGMA: f64 = 1e-12;

/// Persistent left singular-vector estimate for one normalized weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    pub u: Vec<f64>,
    pub iterations: usize,
}

impl SpectralState {
    /// Random unit `u` of length `rows`, one power iteration per call.
    pub fn new(rows: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut u);
        Self { u, iterations: 1 }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations.max(1);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectralOutcome {
    Normalized { sigma: f64 },
    /// The weight was (numerically) zero and was returned unchanged.
    Degenerate { sigma: f64 },
}

impl SpectralOutcome {
    pub fn sigma(&self) -> f64 {
        match *self {
            SpectralOutcome::Normalized { sigma } | SpectralOutcome::Degenerate { sigma } => sigma,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, SpectralOutcome::Degenerate { .. })
    }
}

pub(crate) struct Estimate {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub degenerate: bool,
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}

/// Runs `state.iterations` rounds of `v ← Wᵀu/‖Wᵀu‖, u ← Wv/‖Wv‖` on the
/// row-major `rows × cols` matrix `w` and returns `σ̂ = uᵀWv`.
pub fn power_iteration_estimate(w: &[f64], rows: usize, cols: usize, state: &mut SpectralState) -> Result<f64> {
    power_iteration(w, rows, cols, state).map(|e| e.sigma)
}

pub(crate) fn power_iteration(w: &[f64], rows: usize, cols: usize, state: &mut SpectralState) -> Result<Estimate> {
    if rows == 0 || cols == 0 || w.len() != rows * cols {
        return Err(Error::shape(format!("cannot view {} values as {rows}x{cols}", w.len())));
    }
    if state.u.len() != rows {
        return Err(Error::shape(format!(
            "spectral state has {} entries for a weight with {rows} rows",
            state.u.len()
        )));
    }
    let mut u = state.u.clone();
    let mut v = vec![0.0; cols];
    let mut degenerate = false;
    for _ in 0..state.iterations.max(1) {
        v.iter_mut().for_each(|x| *x = 0.0);
        for (r, &ur) in u.iter().enumerate() {
            for (vc, &wv) in v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *vc += wv * ur;
            }
        }
        if normalize(&mut v) < DEGENERATE_SIGMA {
            degenerate = true;
            break;
        }
        let mut next: Vec<f64> = (0..rows)
            .map(|r| w[r * cols..(r + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        if normalize(&mut next) < DEGENERATE_SIGMA {
            degenerate = true;
            break;
        }
        u = next;
    }
    if degenerate {
        return Ok(Estimate {
            sigma: 0.0,
            u: state.u.clone(),
            v,
            degenerate: true,
        });
    }
    let sigma: f64 = (0..rows)
        .map(|r| u[r] * w[r * cols..(r + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    state.u.clone_from(&u);
    Ok(Estimate {
        sigma,
        u,
        v,
        degenerate: sigma.abs() < DEGENERATE_SIGMA,
    })
}

/// Divides `weight` (viewed as `shape[0] × rest`) by its estimated largest
/// singular value, updating `state.u`. A zero weight comes back unchanged
/// with [`SpectralOutcome::Degenerate`].
pub fn spectral_normalize<T: Real>(weight: &Tensor<T>, state: &mut SpectralState) -> Result<(Tensor<T>, SpectralOutcome)> {
    let rows = weight.shape()[0];
    let cols = weight.len() / rows;
    let w: Vec<f64> = weight.data().iter().map(|v| v.as_f64()).collect();
    let est = power_iteration(&w, rows, cols, state)?;
    if est.degenerate {
        log::warn!("spectral normalization skipped: degenerate weight (sigma {:e})", est.sigma);
        let mut out = weight.clone();
        out.zero_grad();
        return Ok((out, SpectralOutcome::Degenerate { sigma: est.sigma }));
    }
    let s: T = lit(est.sigma);
    Ok((weight.map(|x| x / s), SpectralOutcome::Normalized { sigma: est.sigma }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let w = Tensor::<f64>::from_vec(&[2, 2], vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let mut st = SpectralState::new(2, 0).with_iterations(50);
        let (out, outcome) = spectral_normalize(&w, &mut st).unwrap();
        assert!((outcome.sigma() - 3.0).abs() / 3.0 < 1e-3);
        assert!((out.data()[0] - 1.0).abs() < 1e-3);
        assert!((out.data()[3] - 1.0 / 3.0).abs() < 1e-3);
        let n: f64 = st.u.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identity_unchanged() {
        let w = Tensor::<f64>::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let mut st = SpectralState::new(3, 4).with_iterations(50);
        let (out, _) = spectral_normalize(&w, &mut st).unwrap();
        assert!(out.max_abs_diff(&w) < 1e-12);
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        let w = Tensor::<f64>::zeros(&[2, 3]);
        let mut st = SpectralState::new(2, 1);
        let before = st.u.clone();
        let (out, outcome) = spectral_normalize(&w, &mut st).unwrap();
        assert!(outcome.is_degenerate());
        assert_eq!(out, w);
        assert_eq!(st.u, before);
    }

    #[test]
    fn state_length_mismatch() {
        let w = Tensor::<f64>::ones(&[2, 3]);
        let mut st = SpectralState::new(3, 1);
        assert!(spectral_normalize(&w, &mut st).is_err());
    }
}
