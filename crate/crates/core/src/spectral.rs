//! Spectral normalization by power iteration.
//!
//! A weight tensor is viewed as a matrix with its leading extent as rows
//! (conv kernels become `C_out × (C_in·k·k)`). The state keeps the left
//! singular-vector estimate `u`; each call refines it and divides the weight
//! by `σ̂ = uᵀ W v`. `u` and `v` are treated as constants for differentiation,
//! so gradients flow through `W` and through `σ̂`'s dependence on `W`.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::tensor::Tensor;

pub const SIGMA_FLOOR: f64 = 1e-12;
pub const WARMUP_ITERATIONS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub u: Vec<f64>,
    pub n_power_iterations: usize,
}

impl SpectralState {
    /// Random unit `u` of length `rows`, one iteration per normalization.
    pub fn random<R: Rng + ?Sized>(rows: usize, rng: &mut R) -> Result<Self> {
        if rows == 0 {
            return Err(Error::invalid("spectral state needs at least one row"));
        }
        let mut u: Vec<f64> = (0..rows).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm(&u);
        if n < SIGMA_FLOOR {
            u.iter_mut().for_each(|v| *v = 0.0);
            u[0] = 1.0;
        } else {
            u.iter_mut().for_each(|v| *v /= n);
        }
        Ok(SpectralState { u, n_power_iterations: 1 })
    }

    /// Runs the initialization warm-up iterations against `w`.
    pub fn warm_up(&mut self, w: &Tensor) -> Result<()> {
        let (rows, cols) = matrix_view(w)?;
        let mut v = alloc::vec![0.0; cols];
        for _ in 0..WARMUP_ITERATIONS {
            power_step(w.data(), rows, cols, &mut self.u, &mut v);
        }
        Ok(())
    }
}

fn matrix_view(w: &Tensor) -> Result<(usize, usize)> {
    let rows = *w.shape().first().ok_or_else(|| Error::shape("spectral_normalize", "rank-0 weight"))?;
    if rows == 0 || w.is_empty() {
        return Err(Error::shape("spectral_normalize", "weight needs at least one row and column"));
    }
    Ok((rows, w.len() / rows))
}

/// `v ← normalize(Wᵀu)`, `u ← normalize(Wv)`; a vector whose norm falls
/// below the floor keeps its previous value so `u` stays unit length.
fn power_step(w: &[f64], rows: usize, cols: usize, u: &mut [f64], v: &mut [f64]) {
    let mut nv = alloc::vec![0.0; cols];
    for (r, &ur) in u.iter().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        nv.iter_mut().zip(row).for_each(|(a, &x)| *a += ur * x);
    }
    let n = norm(&nv);
    if n > SIGMA_FLOOR {
        v.iter_mut().zip(&nv).for_each(|(a, b)| *a = b / n);
    }
    let mut nu: Vec<f64> = (0..rows).map(|r| crate::kernels::dot(&w[r * cols..(r + 1) * cols], v)).collect();
    let n = norm(&nu);
    if n > SIGMA_FLOOR {
        nu.iter_mut().for_each(|x| *x /= n);
        u.copy_from_slice(&nu);
    }
}

/// Result of one normalization.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub weight: Tensor,
    pub sigma: f64,
    pub state: SpectralState,
}

/// Normalizes `w` running `state.n_power_iterations` refinement steps.
pub fn spectral_normalize(w: &Tensor, state: &SpectralState) -> Result<Normalized> {
    spectral_normalize_with(w, state, state.n_power_iterations)
}

/// As [`spectral_normalize`] with an explicit iteration count; zero reuses
/// the stored `u` without refining it (inference).
pub fn spectral_normalize_with(w: &Tensor, state: &SpectralState, iterations: usize) -> Result<Normalized> {
    let (rows, cols) = matrix_view(w)?;
    if state.u.len() != rows {
        return Err(Error::shape(
            "spectral_normalize",
            alloc::format!("u has {} entries, weight has {rows} rows", state.u.len()),
        ));
    }
    let mut u = state.u.clone();
    let mut v = alloc::vec![0.0; cols];
    // v always derives from the (possibly refined) u.
    for _ in 0..iterations {
        power_step(w.data(), rows, cols, &mut u, &mut v);
    }
    let mut wtu = alloc::vec![0.0; cols];
    for (r, &ur) in u.iter().enumerate() {
        wtu.iter_mut().zip(&w.data()[r * cols..(r + 1) * cols]).for_each(|(a, &x)| *a += ur * x);
    }
    let n = norm(&wtu);
    if n > SIGMA_FLOOR {
        v.iter_mut().zip(&wtu).for_each(|(a, b)| *a = b / n);
    }
    let weight = apply(w, &u, &v, rows, cols)?;
    let sigma = weight.1;
    Ok(Normalized { weight: weight.0, sigma, state: SpectralState { u, n_power_iterations: state.n_power_iterations } })
}

/// `W / max(uᵀWv, floor)` as a differentiable function of `W` with `u`, `v`
/// held constant.
pub fn normalize_with_vectors(w: &Tensor, u: &[f64], v: &[f64]) -> Result<Tensor> {
    let (rows, cols) = matrix_view(w)?;
    if u.len() != rows || v.len() != cols {
        return Err(Error::shape("spectral_normalize", "singular vector lengths do not match weight"));
    }
    Ok(apply(w, u, v, rows, cols)?.0)
}

fn apply(w: &Tensor, u: &[f64], v: &[f64], rows: usize, cols: usize) -> Result<(Tensor, f64)> {
    let wm = w.reshape(&[rows, cols])?;
    let ut = Tensor::new(&[1, rows], u.to_vec())?;
    let vt = Tensor::new(&[cols, 1], v.to_vec())?;
    let sigma = ut.matmul(&wm)?.matmul(&vt)?;
    let s = sigma.item();
    let sigma = if s > SIGMA_FLOOR { sigma } else { Tensor::scalar(SIGMA_FLOOR) };
    let out = w.scale_by(&sigma.reshape(&[1])?.recip())?;
    Ok((out, s.max(SIGMA_FLOOR)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive, Stream};

    fn state_for(rows: usize) -> SpectralState {
        SpectralState::random(rows, &mut derive(7, Stream::Test, 0)).unwrap()
    }

    #[test]
    fn diagonal_matrix() {
        let w = Tensor::new(&[2, 2], alloc::vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let mut s = state_for(2);
        s.n_power_iterations = 30;
        let n = spectral_normalize(&w, &s).unwrap();
        assert!((n.sigma - 3.0).abs() < 1e-9);
        let d = n.weight.data();
        assert!((d[0] - 1.0).abs() < 1e-9 && (d[3] - 1.0 / 3.0).abs() < 1e-9);
        assert!(d[1].abs() < 1e-12 && d[2].abs() < 1e-12);
    }

    #[test]
    fn identity_is_fixed_point() {
        let w = Tensor::new(&[3, 3], alloc::vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let n = spectral_normalize(&w, &state_for(3)).unwrap();
        for (a, b) in n.weight.data().iter().zip(w.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_matrix_uses_floor_and_keeps_unit_u() {
        let w = Tensor::zeros(&[3, 2]);
        let n = spectral_normalize(&w, &state_for(3)).unwrap();
        assert_eq!(n.sigma, SIGMA_FLOOR);
        assert!(n.weight.data().iter().all(|v| *v == 0.0));
        assert!((norm(&n.state.u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_state() {
        let w = Tensor::zeros(&[3, 2]);
        assert!(spectral_normalize(&w, &state_for(2)).is_err());
    }
}
