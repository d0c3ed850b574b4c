//! One-sided Lipschitz nonlinear observer: logarithmic-norm machinery,
//! sampling-based constant estimation, LMI feasibility solving, gain
//! computation, and the nonlinear-output observer dynamics.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DseError, Result};
use crate::filters::linalg::{clip_eigenvalues, symmetrize};
use crate::powermodel::{f_eval, h_eval, SystemCase};
use crate::sim::rk4_step;

/// Logarithmic matrix norm beta(H) = lambda_max((H + H^T)/2).
pub fn log_norm(h: &DMatrix<f64>) -> f64 {
    symmetrize(h).symmetric_eigen().eigenvalues.max()
}

/// Box region of the state space where the constants are estimated.
#[derive(Debug, Clone)]
pub struct RegionOfInterest {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub n_samples: usize,
}

impl RegionOfInterest {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>, n_samples: usize) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(DseError::Dimension("region bounds length mismatch".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l >= u) {
            return Err(DseError::InvalidConfig(
                "region lower bounds must be strictly below upper bounds".into(),
            ));
        }
        if n_samples < 2 {
            return Err(DseError::InvalidConfig("need at least 2 samples".into()));
        }
        Ok(RegionOfInterest {
            lower,
            upper,
            n_samples,
        })
    }

    /// A box of half-width `radius` around a center state.
    pub fn around(center: &DVector<f64>, radius: &DVector<f64>, n_samples: usize) -> Result<Self> {
        Self::new(center - radius, center + radius, n_samples)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(self.lower.len(), |i, _| {
            self.lower[i] + (self.upper[i] - self.lower[i]) * rng.gen::<f64>()
        })
    }
}

/// Central finite-difference Jacobian of an arbitrary vector function.
fn fd_jacobian<F>(phi: &F, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let f0 = phi(x)?;
    let mut jac = DMatrix::zeros(f0.len(), n);
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1.0);
        let hi = (x[j] + h) - x[j];
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] = x[j] + hi;
        xm[j] = x[j] - hi;
        jac.set_column(j, &((phi(&xp)? - phi(&xm)?) / (2.0 * hi)));
    }
    Ok(jac)
}

/// Estimates the one-sided Lipschitz constant: running maximum of the
/// logarithmic norm of the Jacobian over uniform samples in the region.
pub fn estimate_rho<F>(phi: &F, region: &RegionOfInterest, seed: u64) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rho = f64::NEG_INFINITY;
    let mut used = 0usize;
    for _ in 0..region.n_samples {
        let x = region.sample(&mut rng);
        let jac = match fd_jacobian(phi, &x) {
            Ok(j) if j.iter().all(|v| v.is_finite()) => j,
            _ => {
                eprintln!("estimate_rho: skipping sample with non-finite Jacobian");
                continue;
            }
        };
        rho = rho.max(log_norm(&jac));
        used += 1;
    }
    if used == 0 {
        return Err(DseError::Estimation("all samples had non-finite Jacobians".into()));
    }
    Ok(rho)
}

/// Precomputed quantities of one sampled pair for the quadratic
/// inner-boundedness inequality.
#[derive(Debug, Clone, Copy)]
pub struct QibPair {
    /// ||phi(x_i) - phi(x_j)||^2
    pub dphi2: f64,
    /// ||x_i - x_j||^2
    pub dx2: f64,
    /// <phi(x_i) - phi(x_j), x_i - x_j>
    pub inner: f64,
}

pub fn sample_qib_pairs<F>(
    phi: &F,
    region: &RegionOfInterest,
    seed: u64,
    n_pairs: usize,
) -> Result<Vec<QibPair>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    while pairs.len() < n_pairs {
        let xi = region.sample(&mut rng);
        let xj = region.sample(&mut rng);
        let dx = &xi - &xj;
        if dx.norm_squared() == 0.0 {
            continue;
        }
        let dphi = phi(&xi)? - phi(&xj)?;
        pairs.push(QibPair {
            dphi2: dphi.norm_squared(),
            dx2: dx.norm_squared(),
            inner: dphi.dot(&dx),
        });
    }
    Ok(pairs)
}

/// Checks the inner-boundedness inequality on every pair (with a small
/// floating-point slack).
pub fn qib_holds(pairs: &[QibPair], mu: f64, varphi: f64) -> bool {
    pairs.iter().all(|p| {
        let rhs = mu * p.dx2 + varphi * p.inner;
        p.dphi2 <= rhs + 1e-9 * (1.0 + p.dphi2.abs() + rhs.abs())
    })
}

fn mu_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    let mut v = 1e-6;
    while v <= 1e6 * 1.0001 {
        g.push(v);
        v *= 10f64.powf(1.0 / 3.0);
    }
    g
}

fn varphi_grid() -> Vec<f64> {
    // Ordered by increasing magnitude, positive before negative.
    let mut g = vec![0.0];
    let mut v = 1e-3;
    while v <= 1e3 * 1.0001 {
        g.push(v);
        g.push(-v);
        v *= 10f64.powf(1.0 / 3.0);
    }
    g
}

/// Finds the lexicographically smallest grid point (mu, varphi) satisfying
/// the inner-boundedness inequality on all sampled pairs.
pub fn estimate_mu_phi<F>(
    phi: &F,
    region: &RegionOfInterest,
    seed: u64,
    n_pairs: usize,
) -> Result<(f64, f64)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let pairs = sample_qib_pairs(phi, region, seed, n_pairs)?;
    for mu in mu_grid() {
        for varphi in varphi_grid() {
            if qib_holds(&pairs, mu, varphi) {
                return Ok((mu, varphi));
            }
        }
    }
    Err(DseError::Estimation(
        "no feasible (mu, varphi) on grid mu in [1e-6, 1e6], varphi in [-1e3, 1e3]".into(),
    ))
}

/// One-sided Lipschitz and inner-boundedness constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LipschitzConstants {
    pub rho: f64,
    pub mu: f64,
    pub varphi: f64,
}

/// Certified observer gain from the LMI solve.
#[derive(Debug, Clone)]
pub struct ObserverGain {
    pub l: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub eps1: f64,
    pub eps2: f64,
    pub sigma: f64,
    pub lmi_max_eig: f64,
    pub constants: LipschitzConstants,
}

/// Assembles the 2n x 2n observer-design LMI block at the given variables.
pub fn assemble_lmi(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    consts: &LipschitzConstants,
    eps1: f64,
    eps2: f64,
    sigma: f64,
    p: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::identity(n, n);
    let top_left = a.transpose() * p
        + p * a
        + &eye * (eps1 * consts.rho + eps2 * consts.mu)
        - c.transpose() * c * sigma;
    let off = p + &eye * ((consts.varphi * eps2 - eps1) / 2.0);
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&symmetrize(&top_left));
    block.view_mut((0, n), (n, n)).copy_from(&off);
    block.view_mut((n, 0), (n, n)).copy_from(&off.transpose());
    block.view_mut((n, n), (n, n)).copy_from(&(-eps2 * eye));
    block
}

/// Feasibility margin required of the certified LMI (after trace(P) = n
/// normalization).
pub const LMI_FEAS_MARGIN: f64 = 1e-8;

/// Solves the observer-design LMI by projected-subgradient minimization of
/// the maximum eigenvalue over (P, eps1, eps2, sigma). The LMI is homogeneous
/// in the decision variables, so P is kept normalized to trace n.
pub fn solve_observer_lmi(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    consts: &LipschitzConstants,
    max_iters: usize,
) -> Result<ObserverGain> {
    let n = a.nrows();
    let mut p = DMatrix::identity(n, n);
    let mut eps1 = 1.0f64;
    let mut eps2 = 1.0f64;
    let mut sigma = 1.0f64;
    let mut best_eig = f64::INFINITY;
    let mut best = (p.clone(), eps1, eps2, sigma);

    for iter in 0..max_iters {
        let block = assemble_lmi(a, c, consts, eps1, eps2, sigma, &p);
        let eig = block.symmetric_eigen();
        let (mut lam_max, mut idx) = (f64::NEG_INFINITY, 0);
        for (i, &v) in eig.eigenvalues.iter().enumerate() {
            if v > lam_max {
                lam_max = v;
                idx = i;
            }
        }
        if lam_max < best_eig {
            best_eig = lam_max;
            best = (p.clone(), eps1, eps2, sigma);
        }
        if lam_max <= -LMI_FEAS_MARGIN {
            break;
        }
        let v = eig.eigenvectors.column(idx);
        let v1 = v.rows(0, n).into_owned();
        let v2 = v.rows(n, n).into_owned();

        // Subgradients of lambda_max through the affine map.
        let av1 = a * &v1;
        let g_p = symmetrize(&(&v1 * av1.transpose() + &av1 * v1.transpose()
            + &v1 * v2.transpose()
            + &v2 * v1.transpose()));
        let g_e1 = consts.rho * v1.norm_squared() - v1.dot(&v2);
        let g_e2 = consts.mu * v1.norm_squared() + consts.varphi * v1.dot(&v2) - v2.norm_squared();
        let g_sigma = -(c * &v1).norm_squared();

        let g_norm2 = g_p.norm_squared() + g_e1 * g_e1 + g_e2 * g_e2 + g_sigma * g_sigma;
        if g_norm2 < 1e-30 {
            break;
        }
        // Polyak-style step toward a mildly negative target.
        let target = -0.1 * (1.0 + lam_max.abs());
        let alpha = ((lam_max - target) / g_norm2).max(1e-12) / (1.0 + iter as f64 * 1e-4);

        p -= g_p * alpha;
        eps1 -= g_e1 * alpha;
        eps2 -= g_e2 * alpha;
        sigma -= g_sigma * alpha;

        // Projection: P symmetric PD with trace n, scalars positive.
        p = clip_eigenvalues(&p, 1e-6);
        p *= n as f64 / p.trace();
        eps1 = eps1.max(1e-6);
        eps2 = eps2.max(1e-6);
        sigma = sigma.max(1e-6);
    }

    let (p, eps1, eps2, sigma) = best;
    if best_eig > -LMI_FEAS_MARGIN {
        return Err(DseError::LmiInfeasible {
            iterations: max_iters,
            best_eig,
        });
    }
    let p_inv = p
        .clone()
        .cholesky()
        .ok_or_else(|| DseError::NumericalInstability("P not positive definite".into()))?
        .inverse();
    let l = p_inv * c.transpose() * (sigma / 2.0);
    Ok(ObserverGain {
        l,
        p,
        eps1,
        eps2,
        sigma,
        lmi_max_eig: best_eig,
        constants: *consts,
    })
}

impl ObserverGain {
    /// Independent re-verification of the certificate.
    pub fn verify(&self, a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<()> {
        let block = assemble_lmi(
            a,
            c,
            &self.constants,
            self.eps1,
            self.eps2,
            self.sigma,
            &self.p,
        );
        let max_eig = block.symmetric_eigen().eigenvalues.max();
        if max_eig >= 0.0 {
            return Err(DseError::NumericalInstability(format!(
                "gain certificate failed: LMI max eigenvalue {max_eig:.3e}"
            )));
        }
        let p_inv = self
            .p
            .clone()
            .cholesky()
            .ok_or_else(|| DseError::NumericalInstability("P not positive definite".into()))?
            .inverse();
        let l_expected = p_inv * c.transpose() * (self.sigma / 2.0);
        if (&self.l - &l_expected).amax() >= 1e-10 {
            return Err(DseError::NumericalInstability(
                "gain does not match (sigma/2) P^-1 C^T".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GainFile::from_gain(self)).expect("gain serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GainFile = serde_json::from_str(text)?;
        file.into_gain()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct GainFile {
    /// Row-major n x p gain.
    l: Vec<f64>,
    l_rows: usize,
    l_cols: usize,
    /// Row-major n x n.
    p: Vec<f64>,
    eps1: f64,
    eps2: f64,
    sigma: f64,
    lmi_max_eig: f64,
    constants: LipschitzConstants,
}

impl GainFile {
    fn from_gain(g: &ObserverGain) -> Self {
        let row_major = |m: &DMatrix<f64>| {
            let (r, c) = m.shape();
            (0..r * c).map(|k| m[(k / c, k % c)]).collect()
        };
        GainFile {
            l: row_major(&g.l),
            l_rows: g.l.nrows(),
            l_cols: g.l.ncols(),
            p: row_major(&g.p),
            eps1: g.eps1,
            eps2: g.eps2,
            sigma: g.sigma,
            lmi_max_eig: g.lmi_max_eig,
            constants: g.constants,
        }
    }

    fn into_gain(self) -> Result<ObserverGain> {
        let n = self.l_rows;
        let p_meas = self.l_cols;
        if self.l.len() != n * p_meas || self.p.len() != n * n {
            return Err(DseError::InvalidConfig("gain file dimensions inconsistent".into()));
        }
        Ok(ObserverGain {
            l: DMatrix::from_row_slice(n, p_meas, &self.l),
            p: DMatrix::from_row_slice(n, n, &self.p),
            eps1: self.eps1,
            eps2: self.eps2,
            sigma: self.sigma,
            lmi_max_eig: self.lmi_max_eig,
            constants: self.constants,
        })
    }
}

/// One observer step: RK4 integration of
/// xhat' = f(xhat, u) + L (y - h(xhat)) over a sample interval, with the
/// measurement held constant (zero-order hold). f = A x + B u + phi
/// reconstructs exactly, so the dynamics are evaluated through f directly.
pub fn observer_step(
    case: &SystemCase,
    xhat: &DVector<f64>,
    u: &DVector<f64>,
    y_meas: &DVector<f64>,
    gain: &ObserverGain,
    y_net: &DMatrix<Complex64>,
    dt: f64,
) -> Result<DVector<f64>> {
    let substeps = ((dt * 600.0).round() as usize).max(1);
    let h = dt / substeps as f64;
    let deriv = |x: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(f_eval(case, x, u, y_net)? + &gain.l * (y_meas - h_eval(case, x, y_net)?))
    };
    let mut x = xhat.clone();
    for _ in 0..substeps {
        x = rk4_step(&deriv, &x, h)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DseError::Diverged { t: f64::NAN });
        }
    }
    Ok(x)
}
