//! Shared helpers for the integration tests: a linear dynamics model and the
//! closed-form Kalman filter it makes exact.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dse_core::filters::{DynamicsModel, GaussianBelief};
use dse_core::Result;

/// Linear system x_{k+1} = F x_k, y = H x_k wearing the DynamicsModel trait.
pub struct LinearModel {
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

impl DynamicsModel for LinearModel {
    fn dim_state(&self) -> usize {
        self.f.nrows()
    }

    fn dim_meas(&self) -> usize {
        self.h.nrows()
    }

    fn propagate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.f * x)
    }

    fn transition_matrix(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.f.clone())
    }

    fn measure(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.h * x)
    }

    fn measurement_matrix(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.h.clone())
    }
}

/// A random stable linear system (spectral radius scaled to `radius`).
pub fn random_stable_system(n: usize, p: usize, radius: f64, seed: u64) -> LinearModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.gen::<f64>() - 0.5);
    let raw = draw(n, n);
    let rho = raw
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0f64, f64::max);
    LinearModel {
        f: raw * (radius / rho),
        h: draw(p, n),
    }
}

/// One closed-form Kalman filter step for the linear model.
pub fn kalman_step(
    belief: &GaussianBelief,
    model: &LinearModel,
    y: &DVector<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> GaussianBelief {
    let n = belief.mean.len();
    let mean_pred = &model.f * &belief.mean;
    let cov_pred = &model.f * &belief.cov * model.f.transpose() + q;
    let pyy = &model.h * &cov_pred * model.h.transpose() + r;
    let gain = (&cov_pred * model.h.transpose()) * pyy.try_inverse().expect("pyy invertible");
    let mean = &mean_pred + &gain * (y - &model.h * &mean_pred);
    let ikh = DMatrix::identity(n, n) - &gain * &model.h;
    // Joseph form for symmetry.
    let cov = &ikh * &cov_pred * ikh.transpose() + &gain * r * gain.transpose();
    GaussianBelief { mean, cov }
}

/// A deterministic pseudo-random measurement stream for oracle comparisons.
pub fn measurement_stream(model: &LinearModel, x0: &DVector<f64>, steps: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0.clone();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        x = &model.f * &x;
        let y = &model.h * &x
            + DVector::from_fn(model.h.nrows(), |_, _| 0.01 * (rng.gen::<f64>() - 0.5));
        out.push(y);
    }
    out
}
