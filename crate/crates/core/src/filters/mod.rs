//! Stochastic estimators: EKF, UKF, SR-UKF, and CKF over a shared
//! predict/update contract.
//!
//! All four operate on a [`DynamicsModel`] describing one discrete sample
//! interval. Each step is a pure function from belief to belief and also
//! reports the innovation statistics used for attack detection.

pub mod linalg;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{DseError, Result};
use crate::powermodel::{f_eval, h_eval, jacobian_f, jacobian_h, SystemCase};
use crate::sim::rk4_step;
use linalg::{
    chol_rank1, cholesky_clipped, clip_eigenvalues, solve_lower_right, solve_lower_transpose,
    symmetrize, triangularize,
};

/// Estimator mean and full covariance.
#[derive(Debug, Clone)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Estimator mean and lower-triangular Cholesky factor of the covariance.
#[derive(Debug, Clone)]
pub struct SqrtBelief {
    pub mean: DVector<f64>,
    pub sqrt_factor: DMatrix<f64>,
}

impl SqrtBelief {
    pub fn from_gaussian(belief: &GaussianBelief) -> Result<Self> {
        Ok(SqrtBelief {
            mean: belief.mean.clone(),
            sqrt_factor: cholesky_clipped(&belief.cov)?,
        })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.sqrt_factor * self.sqrt_factor.transpose()
    }
}

/// Filter tuning: UT spread, process and measurement covariances.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    pub ut_kappa: f64,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl FilterConfig {
    /// Classic defaults: kappa = 3 - n, R = diag(0.01^2), Q = 0.
    pub fn new(n: usize, p: usize) -> Self {
        FilterConfig {
            ut_kappa: 3.0 - n as f64,
            q: DMatrix::zeros(n, n),
            r: DMatrix::from_diagonal_element(p, p, 0.01 * 0.01),
        }
    }
}

/// One discrete sample interval of a dynamic system with outputs.
pub trait DynamicsModel {
    fn dim_state(&self) -> usize;
    fn dim_meas(&self) -> usize;
    /// Propagates a state over one sample interval.
    fn propagate(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    /// State transition matrix of the discrete map, linearized at `x` (EKF).
    fn transition_matrix(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
    fn measure(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn measurement_matrix(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
}

/// The power-system model over one sample interval: RK4 propagation of the
/// two-axis dynamics (no unknown-input term; the estimator's model excludes
/// it by construction) and the PMU measurement map.
pub struct PowerDiscreteModel<'a> {
    pub case: &'a SystemCase,
    pub u: &'a DVector<f64>,
    pub y_net: &'a DMatrix<Complex64>,
    pub dt: f64,
    pub substeps: usize,
}

impl<'a> PowerDiscreteModel<'a> {
    pub fn new(
        case: &'a SystemCase,
        u: &'a DVector<f64>,
        y_net: &'a DMatrix<Complex64>,
        dt: f64,
    ) -> Self {
        // Micro-steps matching the truth simulation's 600/s grid.
        let substeps = ((dt * 600.0).round() as usize).max(1);
        PowerDiscreteModel {
            case,
            u,
            y_net,
            dt,
            substeps,
        }
    }
}

impl DynamicsModel for PowerDiscreteModel<'_> {
    fn dim_state(&self) -> usize {
        self.case.n_states()
    }

    fn dim_meas(&self) -> usize {
        self.case.n_meas()
    }

    fn propagate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let f = |xv: &DVector<f64>| f_eval(self.case, xv, self.u, self.y_net);
        let h = self.dt / self.substeps as f64;
        let mut x = x.clone();
        for _ in 0..self.substeps {
            x = rk4_step(&f, &x, h)?;
        }
        Ok(x)
    }

    fn transition_matrix(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let jac = jacobian_f(self.case, x, self.u, self.y_net)?;
        Ok(DMatrix::identity(x.len(), x.len()) + jac * self.dt)
    }

    fn measure(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        h_eval(self.case, x, self.y_net)
    }

    fn measurement_matrix(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        jacobian_h(self.case, x, self.y_net)
    }
}

/// RK4 propagation of the estimator's model over one sample interval.
pub fn discrete_f(
    case: &SystemCase,
    x: &DVector<f64>,
    u: &DVector<f64>,
    y_net: &DMatrix<Complex64>,
    dt: f64,
) -> Result<DVector<f64>> {
    if dt == 0.0 {
        return Ok(x.clone());
    }
    PowerDiscreteModel::new(case, u, y_net, dt).propagate(x)
}

/// Innovation statistics of one filter step.
#[derive(Debug, Clone)]
pub struct StepStats {
    pub predicted_meas: DVector<f64>,
    pub innovation: DVector<f64>,
    pub pyy_diag: DVector<f64>,
}

/// A weighted deterministic point set encoding a Gaussian's first two moments.
#[derive(Debug, Clone)]
pub struct PointSet {
    pub points: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
}

/// Unscented transform points: {mean, mean +- sqrt(n + kappa) * col_i(S)}
/// with center weight kappa / (n + kappa).
pub fn ut_sigma_points(belief: &GaussianBelief, kappa: f64) -> Result<PointSet> {
    let s = cholesky_clipped(&belief.cov)?;
    Ok(ut_sigma_points_from_sqrt(&belief.mean, &s, kappa))
}

pub fn ut_sigma_points_from_sqrt(mean: &DVector<f64>, s: &DMatrix<f64>, kappa: f64) -> PointSet {
    let n = mean.len();
    let lam = n as f64 + kappa;
    let scale = lam.sqrt();
    let mut points = Vec::with_capacity(2 * n + 1);
    let mut weights = Vec::with_capacity(2 * n + 1);
    points.push(mean.clone());
    weights.push(kappa / lam);
    for i in 0..n {
        let col = s.column(i) * scale;
        points.push(mean + &col);
        points.push(mean - &col);
        weights.push(1.0 / (2.0 * lam));
        weights.push(1.0 / (2.0 * lam));
    }
    PointSet { points, weights }
}

/// Third-degree spherical-radial cubature points: 2n equally weighted points,
/// no center stem.
pub fn cubature_points(belief: &GaussianBelief) -> Result<PointSet> {
    let n = belief.mean.len();
    let s = cholesky_clipped(&belief.cov)?;
    let scale = (n as f64).sqrt();
    let mut points = Vec::with_capacity(2 * n);
    for i in 0..n {
        let col = s.column(i) * scale;
        points.push(&belief.mean + &col);
        points.push(&belief.mean - &col);
    }
    Ok(PointSet {
        points,
        weights: vec![1.0 / (2.0 * n as f64); 2 * n],
    })
}

impl PointSet {
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.points[0].len());
        for (p, &w) in self.points.iter().zip(&self.weights) {
            m += p * w;
        }
        m
    }

    pub fn covariance(&self, mean: &DVector<f64>) -> DMatrix<f64> {
        let n = mean.len();
        let mut cov = DMatrix::zeros(n, n);
        for (p, &w) in self.points.iter().zip(&self.weights) {
            let d = p - mean;
            cov += &d * d.transpose() * w;
        }
        cov
    }
}

/// Symmetrizes and, when indefinite, repairs a covariance by eigenvalue
/// clipping at 1e-12.
fn hygiene(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(cov);
    if sym.clone().cholesky().is_some() {
        sym
    } else {
        clip_eigenvalues(&sym, 1e-12)
    }
}

/// Extended Kalman filter step with Joseph-form covariance update.
pub fn ekf_step(
    belief: &GaussianBelief,
    model: &dyn DynamicsModel,
    y: &DVector<f64>,
    cfg: &FilterConfig,
) -> Result<(GaussianBelief, StepStats)> {
    let n = belief.mean.len();
    let f = model.transition_matrix(&belief.mean)?;
    let mean_pred = model.propagate(&belief.mean)?;
    let cov_pred = hygiene(&(&f * &belief.cov * f.transpose() + &cfg.q));

    let h = model.measurement_matrix(&mean_pred)?;
    let y_pred = model.measure(&mean_pred)?;
    let pyy = &h * &cov_pred * h.transpose() + &cfg.r;
    let innovation = y - &y_pred;
    let pyy_chol = symmetrize(&pyy)
        .cholesky()
        .ok_or(DseError::SingularUpdate)?;
    // K = P H^T Pyy^{-1}
    let pht = &cov_pred * h.transpose();
    let gain = pyy_chol.solve(&pht.transpose()).transpose();

    let mean = &mean_pred + &gain * &innovation;
    let ikh = DMatrix::identity(n, n) - &gain * &h;
    let cov = hygiene(&(&ikh * &cov_pred * ikh.transpose() + &gain * &cfg.r * gain.transpose()));
    Ok((
        GaussianBelief { mean, cov },
        StepStats {
            pyy_diag: pyy.diagonal(),
            predicted_meas: y_pred,
            innovation,
        },
    ))
}

/// Shared measurement update for the point-based filters: redraws points
/// about the predicted moments and performs the Kalman update.
fn point_update(
    mean_pred: &DVector<f64>,
    cov_pred: &DMatrix<f64>,
    points: &PointSet,
    model: &dyn DynamicsModel,
    y: &DVector<f64>,
    r: &DMatrix<f64>,
) -> Result<(GaussianBelief, StepStats)> {
    let meas_points: Vec<DVector<f64>> = points
        .points
        .iter()
        .map(|p| model.measure(p))
        .collect::<Result<_>>()?;
    let mut y_pred = DVector::zeros(y.len());
    for (yp, &w) in meas_points.iter().zip(&points.weights) {
        y_pred += yp * w;
    }
    let mut pyy_points = DMatrix::zeros(y.len(), y.len());
    let mut pxy = DMatrix::zeros(mean_pred.len(), y.len());
    for ((p, yp), &w) in points.points.iter().zip(&meas_points).zip(&points.weights) {
        let dy = yp - &y_pred;
        pyy_points += &dy * dy.transpose() * w;
        pxy += (p - mean_pred) * dy.transpose() * w;
    }
    // A negative-weight center point can push the point sum indefinite; repair
    // it before adding R so the noise floor survives the clipping.
    let pyy = hygiene(&pyy_points) + r;
    let innovation = y - &y_pred;
    let pyy_chol = symmetrize(&pyy)
        .cholesky()
        .ok_or(DseError::SingularUpdate)?;
    let gain = pyy_chol.solve(&pxy.transpose()).transpose();
    let mean = mean_pred + &gain * &innovation;
    let cov = hygiene(&(cov_pred - &gain * &pyy * gain.transpose()));
    Ok((
        GaussianBelief { mean, cov },
        StepStats {
            pyy_diag: pyy.diagonal(),
            predicted_meas: y_pred,
            innovation,
        },
    ))
}

/// Unscented Kalman filter step.
pub fn ukf_step(
    belief: &GaussianBelief,
    model: &dyn DynamicsModel,
    y: &DVector<f64>,
    cfg: &FilterConfig,
) -> Result<(GaussianBelief, StepStats)> {
    let points = ut_sigma_points(belief, cfg.ut_kappa)?;
    let propagated = PointSet {
        points: points
            .points
            .iter()
            .map(|p| model.propagate(p))
            .collect::<Result<_>>()?,
        weights: points.weights,
    };
    let mean_pred = propagated.mean();
    let cov_pred = hygiene(&propagated.covariance(&mean_pred)) + &cfg.q;
    let redrawn = ut_sigma_points(
        &GaussianBelief {
            mean: mean_pred.clone(),
            cov: cov_pred.clone(),
        },
        cfg.ut_kappa,
    )?;
    point_update(&mean_pred, &cov_pred, &redrawn, model, y, &cfg.r)
}

/// Cubature Kalman filter step.
pub fn ckf_step(
    belief: &GaussianBelief,
    model: &dyn DynamicsModel,
    y: &DVector<f64>,
    cfg: &FilterConfig,
) -> Result<(GaussianBelief, StepStats)> {
    let points = cubature_points(belief)?;
    let propagated = PointSet {
        points: points
            .points
            .iter()
            .map(|p| model.propagate(p))
            .collect::<Result<_>>()?,
        weights: points.weights,
    };
    let mean_pred = propagated.mean();
    let cov_pred = hygiene(&propagated.covariance(&mean_pred)) + &cfg.q;
    let redrawn = cubature_points(&GaussianBelief {
        mean: mean_pred.clone(),
        cov: cov_pred.clone(),
    })?;
    point_update(&mean_pred, &cov_pred, &redrawn, model, y, &cfg.r)
}

/// Symmetric PSD square root via eigendecomposition (handles singular Q).
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Builds a lower-triangular factor from weighted deviations plus an additive
/// covariance factor, handling the negative-weight center point by a rank-1
/// downdate. Falls back to a full-covariance rebuild with eigenvalue clipping
/// if the downdate fails.
fn sqrt_factor_from_deviations(
    devs: &[DVector<f64>],
    weights: &[f64],
    additive_sqrt: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = devs[0].len();
    let additive_cov = || additive_sqrt * additive_sqrt.transpose();
    let dev_cov = || {
        let mut cov = DMatrix::zeros(n, n);
        for (d, &w) in devs.iter().zip(weights) {
            cov += d * d.transpose() * w;
        }
        cov
    };

    // Factor the deviation sum alone first, so the repair of an indefinite
    // sum happens before the additive noise is folded in, exactly as in the
    // full-covariance filters (hygiene, then + Q).
    let mut cols = Vec::new();
    for (d, &w) in devs.iter().zip(weights) {
        if w > 0.0 {
            cols.push(d * w.sqrt());
        }
    }
    let mut compound = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        compound.set_column(j, c);
    }
    let mut s = triangularize(&compound);
    for (d, &w) in devs.iter().zip(weights) {
        if w < 0.0 {
            match chol_rank1(&s, &(d * w.abs().sqrt()), -1.0) {
                Ok(updated) => s = updated,
                Err(_) => {
                    // Indefinite deviation sum: clip it, add the noise, and
                    // refactor.
                    let cov = clip_eigenvalues(&symmetrize(&dev_cov()), 1e-12) + additive_cov();
                    return cholesky_clipped(&cov);
                }
            }
        }
    }

    // Fold in the (PSD) additive noise through rank-1 updates; a zero pivot
    // forces a refactor of the explicit sum.
    let base = s.clone();
    for j in 0..additive_sqrt.ncols() {
        match chol_rank1(&s, &additive_sqrt.column(j).into_owned(), 1.0) {
            Ok(updated) => s = updated,
            Err(_) => {
                let cov = &base * base.transpose() + additive_cov();
                return cholesky_clipped(&cov);
            }
        }
    }
    Ok(s)
}

/// Square-root UKF step: identical moments to [`ukf_step`] but propagating the
/// Cholesky factor via QR and rank-1 updates.
pub fn srukf_step(
    belief: &SqrtBelief,
    model: &dyn DynamicsModel,
    y: &DVector<f64>,
    cfg: &FilterConfig,
) -> Result<(SqrtBelief, StepStats)> {
    let points = ut_sigma_points_from_sqrt(&belief.mean, &belief.sqrt_factor, cfg.ut_kappa);
    let propagated: Vec<DVector<f64>> = points
        .points
        .iter()
        .map(|p| model.propagate(p))
        .collect::<Result<_>>()?;
    let mut mean_pred = DVector::zeros(belief.mean.len());
    for (p, &w) in propagated.iter().zip(&points.weights) {
        mean_pred += p * w;
    }
    let devs: Vec<DVector<f64>> = propagated.iter().map(|p| p - &mean_pred).collect();
    let s_pred = sqrt_factor_from_deviations(&devs, &points.weights, &psd_sqrt(&cfg.q))?;

    // Redraw about the predicted moments.
    let redrawn = ut_sigma_points_from_sqrt(&mean_pred, &s_pred, cfg.ut_kappa);
    let meas_points: Vec<DVector<f64>> = redrawn
        .points
        .iter()
        .map(|p| model.measure(p))
        .collect::<Result<_>>()?;
    let mut y_pred = DVector::zeros(y.len());
    for (yp, &w) in meas_points.iter().zip(&redrawn.weights) {
        y_pred += yp * w;
    }
    let meas_devs: Vec<DVector<f64>> = meas_points.iter().map(|yp| yp - &y_pred).collect();
    let r_sqrt = cholesky_clipped(&cfg.r)?;
    let syy = sqrt_factor_from_deviations(&meas_devs, &redrawn.weights, &r_sqrt)?;

    let mut pxy = DMatrix::zeros(mean_pred.len(), y.len());
    for ((p, dy), &w) in redrawn.points.iter().zip(&meas_devs).zip(&redrawn.weights) {
        pxy += (p - &mean_pred) * dy.transpose() * w;
    }

    // K Syy Syy^T = Pxy via two triangular solves.
    let u = solve_lower_transpose(&syy, &pxy);
    let gain = solve_lower_right(&syy, &u);
    let innovation = y - &y_pred;
    let mean = &mean_pred + &gain * &innovation;

    // Downdate the state factor by the columns of U = K * Syy.
    let mut s = s_pred.clone();
    let mut ok = true;
    for j in 0..u.ncols() {
        match chol_rank1(&s, &u.column(j).into_owned(), -1.0) {
            Ok(updated) => s = updated,
            Err(_) => {
                ok = false;
                break;
            }
        }
    }
    if !ok {
        let cov = &s_pred * s_pred.transpose() - &u * u.transpose();
        s = cholesky_clipped(&clip_eigenvalues(&cov, 1e-12))?;
    }
    let pyy = &syy * syy.transpose();
    Ok((
        SqrtBelief {
            mean,
            sqrt_factor: s,
        },
        StepStats {
            pyy_diag: pyy.diagonal(),
            predicted_meas: y_pred,
            innovation,
        },
    ))
}
