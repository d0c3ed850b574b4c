//! Two-axis 4th-order multi-machine generator model.
//!
//! States per machine: rotor angle `delta` (rad), rotor speed `omega` (rad/s),
//! q-axis transient EMF `eq` (pu), d-axis transient EMF `ed` (pu), stored in
//! per-machine blocks of four. Measurements are PMU phasor parts packed as all
//! `eR` channels first, then all `eI`, `iR`, `iI`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DseError, Result};

/// Per-machine constants of the two-axis transient model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MachineParams {
    /// Inertia constant (s).
    pub h: f64,
    /// Damping coefficient (pu).
    pub d: f64,
    /// d-axis synchronous reactance (pu).
    pub xd: f64,
    /// q-axis synchronous reactance (pu).
    pub xq: f64,
    /// d-axis transient reactance (pu).
    pub xdp: f64,
    /// q-axis transient reactance (pu).
    pub xqp: f64,
    /// d-axis open-circuit time constant (s).
    pub td0p: f64,
    /// q-axis open-circuit time constant (s).
    pub tq0p: f64,
}

impl MachineParams {
    pub fn validate(&self, idx: usize) -> Result<()> {
        let ok = self.h > 0.0
            && self.td0p > 0.0
            && self.tq0p > 0.0
            && self.xd >= self.xdp
            && self.xdp > 0.0
            && self.xq >= self.xqp
            && self.xqp > 0.0
            && self.d >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(DseError::InvalidCase(format!(
                "machine {idx}: parameter invariants violated"
            )))
        }
    }
}

/// A complete simulation case: machines, pre/post-fault reduced admittance
/// matrices, steady-state inputs, and the pre-fault equilibrium state.
#[derive(Debug, Clone)]
pub struct SystemCase {
    pub machines: Vec<MachineParams>,
    pub y_pre: DMatrix<Complex64>,
    pub y_post: DMatrix<Complex64>,
    pub omega_s: f64,
    pub u0: DVector<f64>,
    pub x0: DVector<f64>,
}

/// State index helpers (per-machine blocks of four).
pub const DELTA: usize = 0;
pub const OMEGA: usize = 1;
pub const EQ: usize = 2;
pub const ED: usize = 3;

impl SystemCase {
    pub fn n_machines(&self) -> usize {
        self.machines.len()
    }

    /// State dimension n = 4m.
    pub fn n_states(&self) -> usize {
        4 * self.machines.len()
    }

    /// Measurement dimension p = 4m.
    pub fn n_meas(&self) -> usize {
        4 * self.machines.len()
    }

    /// Input dimension v = 2m.
    pub fn n_inputs(&self) -> usize {
        2 * self.machines.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.machines.len();
        if m == 0 {
            return Err(DseError::InvalidCase("no machines".into()));
        }
        for (i, mp) in self.machines.iter().enumerate() {
            mp.validate(i)?;
        }
        for (name, y) in [("y_pre", &self.y_pre), ("y_post", &self.y_post)] {
            if y.nrows() != m || y.ncols() != m {
                return Err(DseError::InvalidCase(format!(
                    "{name} must be {m}x{m}, got {}x{}",
                    y.nrows(),
                    y.ncols()
                )));
            }
        }
        if self.u0.len() != 2 * m {
            return Err(DseError::InvalidCase("u0 must have length 2m".into()));
        }
        if self.x0.len() != 4 * m {
            return Err(DseError::InvalidCase("x0 must have length 4m".into()));
        }
        if !self.omega_s.is_finite() || self.omega_s <= 0.0 {
            return Err(DseError::InvalidCase("omega_s must be positive".into()));
        }
        // x0 must be a pre-fault equilibrium.
        let f0 = f_eval(self, &self.x0, &self.u0, &self.y_pre)?;
        let resid = f0.amax();
        if resid >= 1e-6 {
            return Err(DseError::InvalidCase(format!(
                "x0 is not an equilibrium of the pre-fault system (residual {resid:.3e})"
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CaseFile = serde_json::from_str(text)?;
        let case = file.into_case()?;
        case.validate()?;
        Ok(case)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CaseFile::from_case(self)).expect("case serialization")
    }
}

#[derive(Serialize, Deserialize)]
struct CaseFile {
    machines: Vec<MachineParams>,
    /// Row-major [re, im] pairs.
    y_pre: Vec<[f64; 2]>,
    y_post: Vec<[f64; 2]>,
    omega_s: f64,
    u0: Vec<f64>,
    x0: Vec<f64>,
}

impl CaseFile {
    fn into_case(self) -> Result<SystemCase> {
        let m = self.machines.len();
        let to_mat = |name: &str, v: &[[f64; 2]]| -> Result<DMatrix<Complex64>> {
            if v.len() != m * m {
                return Err(DseError::InvalidCase(format!(
                    "{name} must have {} entries, got {}",
                    m * m,
                    v.len()
                )));
            }
            Ok(DMatrix::from_fn(m, m, |r, c| {
                let [re, im] = v[r * m + c];
                Complex64::new(re, im)
            }))
        };
        Ok(SystemCase {
            y_pre: to_mat("y_pre", &self.y_pre)?,
            y_post: to_mat("y_post", &self.y_post)?,
            machines: self.machines,
            omega_s: self.omega_s,
            u0: DVector::from_vec(self.u0),
            x0: DVector::from_vec(self.x0),
        })
    }

    fn from_case(case: &SystemCase) -> Self {
        let flat = |y: &DMatrix<Complex64>| {
            let m = y.nrows();
            (0..m * m)
                .map(|k| {
                    let z = y[(k / m, k % m)];
                    [z.re, z.im]
                })
                .collect()
        };
        CaseFile {
            machines: case.machines.clone(),
            y_pre: flat(&case.y_pre),
            y_post: flat(&case.y_post),
            omega_s: case.omega_s,
            u0: case.u0.iter().copied().collect(),
            x0: case.x0.iter().copied().collect(),
        }
    }
}

/// Network interface currents, in both machine (d/q) and network (R/I) frames.
#[derive(Debug, Clone)]
pub struct Currents {
    pub ir: DVector<f64>,
    pub ii: DVector<f64>,
    pub id: DVector<f64>,
    pub iq: DVector<f64>,
}

/// Computes per-machine terminal currents behind the reduced admittance matrix.
pub fn interface_currents(
    case: &SystemCase,
    state: &DVector<f64>,
    y: &DMatrix<Complex64>,
) -> Result<Currents> {
    let m = case.n_machines();
    if y.nrows() != m || y.ncols() != m || state.len() != 4 * m {
        return Err(DseError::Contract(format!(
            "interface_currents: Y is {}x{}, state length {}, expected {m}x{m} and {}",
            y.nrows(),
            y.ncols(),
            state.len(),
            4 * m
        )));
    }
    // Internal EMF phasor in the network frame.
    let psi = DVector::from_fn(m, |i, _| {
        let d = state[4 * i + DELTA];
        let eq = state[4 * i + EQ];
        let ed = state[4 * i + ED];
        let (s, c) = d.sin_cos();
        Complex64::new(ed * s + eq * c, eq * s - ed * c)
    });
    let current = y * psi;
    let mut out = Currents {
        ir: DVector::zeros(m),
        ii: DVector::zeros(m),
        id: DVector::zeros(m),
        iq: DVector::zeros(m),
    };
    for i in 0..m {
        let d = state[4 * i + DELTA];
        let (s, c) = d.sin_cos();
        let (ir, ii) = (current[i].re, current[i].im);
        out.ir[i] = ir;
        out.ii[i] = ii;
        out.id[i] = ir * s - ii * c;
        out.iq[i] = ir * c + ii * s;
    }
    Ok(out)
}

/// Continuous-time state derivative of the two-axis model.
pub fn f_eval(
    case: &SystemCase,
    state: &DVector<f64>,
    u: &DVector<f64>,
    y: &DMatrix<Complex64>,
) -> Result<DVector<f64>> {
    let m = case.n_machines();
    if u.len() != 2 * m {
        return Err(DseError::Contract(format!(
            "f_eval: input length {} != {}",
            u.len(),
            2 * m
        )));
    }
    let cur = interface_currents(case, state, y)?;
    let ws = case.omega_s;
    let mut dx = DVector::zeros(4 * m);
    for (i, p) in case.machines.iter().enumerate() {
        let omega = state[4 * i + OMEGA];
        let eq = state[4 * i + EQ];
        let ed = state[4 * i + ED];
        let (tm, efd) = (u[i], u[m + i]);
        let (id, iq) = (cur.id[i], cur.iq[i]);
        let te = ed * id + eq * iq + (p.xqp - p.xdp) * id * iq;
        dx[4 * i + DELTA] = omega - ws;
        dx[4 * i + OMEGA] = ws / (2.0 * p.h) * (tm - te - p.d / ws * (omega - ws));
        dx[4 * i + EQ] = (efd - eq - (p.xd - p.xdp) * id) / p.td0p;
        dx[4 * i + ED] = (-ed + (p.xq - p.xqp) * iq) / p.tq0p;
        for k in 0..4 {
            if !dx[4 * i + k].is_finite() {
                return Err(DseError::NonFinite {
                    context: "f_eval".into(),
                    machine: i,
                });
            }
        }
    }
    Ok(dx)
}

/// PMU measurement function: terminal voltage and current phasor parts,
/// packed as [eR.. , eI.., iR.., iI..].
pub fn h_eval(
    case: &SystemCase,
    state: &DVector<f64>,
    y: &DMatrix<Complex64>,
) -> Result<DVector<f64>> {
    let m = case.n_machines();
    let cur = interface_currents(case, state, y)?;
    let mut out = DVector::zeros(4 * m);
    for (i, p) in case.machines.iter().enumerate() {
        let d = state[4 * i + DELTA];
        let eq = state[4 * i + EQ];
        let ed = state[4 * i + ED];
        let (s, c) = d.sin_cos();
        // Terminal voltage in the machine frame, then rotated to network frame.
        let vq = eq - p.xdp * cur.id[i];
        let vd = ed + p.xqp * cur.iq[i];
        out[i] = vd * s + vq * c; // eR
        out[m + i] = vq * s - vd * c; // eI
        out[2 * m + i] = cur.ir[i];
        out[3 * m + i] = cur.ii[i];
        for k in [i, m + i, 2 * m + i, 3 * m + i] {
            if !out[k].is_finite() {
                return Err(DseError::NonFinite {
                    context: "h_eval".into(),
                    machine: i,
                });
            }
        }
    }
    Ok(out)
}

/// Linear/nonlinear decomposition f(x, u) = A x + B u + phi(x, u).
#[derive(Debug, Clone)]
pub struct LinearSplit {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearSplit {
    /// Nonlinear residual phi(x, u) = f(x, u) - A x - B u.
    pub fn phi(
        &self,
        case: &SystemCase,
        state: &DVector<f64>,
        u: &DVector<f64>,
        y: &DMatrix<Complex64>,
    ) -> Result<DVector<f64>> {
        Ok(f_eval(case, state, u, y)? - &self.a * state - &self.b * u)
    }
}

/// Extracts the linear part of the model: speed coupling and damping in A,
/// input gains in B. Everything else (currents, torques, constant offsets)
/// stays in phi.
pub fn split_linear(case: &SystemCase) -> LinearSplit {
    let m = case.n_machines();
    let n = 4 * m;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, 2 * m);
    for (i, p) in case.machines.iter().enumerate() {
        a[(4 * i + DELTA, 4 * i + OMEGA)] = 1.0;
        a[(4 * i + OMEGA, 4 * i + OMEGA)] = -p.d / (2.0 * p.h);
        a[(4 * i + EQ, 4 * i + EQ)] = -1.0 / p.td0p;
        a[(4 * i + ED, 4 * i + ED)] = -1.0 / p.tq0p;
        b[(4 * i + OMEGA, i)] = case.omega_s / (2.0 * p.h);
        b[(4 * i + EQ, m + i)] = 1.0 / p.td0p;
    }
    LinearSplit { a, b }
}

/// Central finite-difference step for coordinate value `xi`.
fn fd_step(xi: f64) -> f64 {
    1e-6 * xi.abs().max(1.0)
}

/// Central finite-difference Jacobian of the state derivative w.r.t. the state.
pub fn jacobian_f(
    case: &SystemCase,
    state: &DVector<f64>,
    u: &DVector<f64>,
    y: &DMatrix<Complex64>,
) -> Result<DMatrix<f64>> {
    let n = state.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = fd_step(state[j]);
        // Make the realized step exactly representable.
        let hi = (state[j] + h) - state[j];
        let mut xp = state.clone();
        let mut xm = state.clone();
        xp[j] = state[j] + hi;
        xm[j] = state[j] - hi;
        let fp = f_eval(case, &xp, u, y)?;
        let fm = f_eval(case, &xm, u, y)?;
        let col = (fp - fm) / (2.0 * hi);
        jac.set_column(j, &col);
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(DseError::NonFinite {
            context: "jacobian_f".into(),
            machine: 0,
        });
    }
    Ok(jac)
}

/// Central finite-difference Jacobian of the measurement function; supplies
/// the C matrix for observer synthesis.
pub fn jacobian_h(
    case: &SystemCase,
    state: &DVector<f64>,
    y: &DMatrix<Complex64>,
) -> Result<DMatrix<f64>> {
    let n = state.len();
    let p = case.n_meas();
    let mut jac = DMatrix::zeros(p, n);
    for j in 0..n {
        let h = fd_step(state[j]);
        let hi = (state[j] + h) - state[j];
        let mut xp = state.clone();
        let mut xm = state.clone();
        xp[j] = state[j] + hi;
        xm[j] = state[j] - hi;
        let col = (h_eval(case, &xp, y)? - h_eval(case, &xm, y)?) / (2.0 * hi);
        jac.set_column(j, &col);
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(DseError::NonFinite {
            context: "jacobian_h".into(),
            machine: 0,
        });
    }
    Ok(jac)
}
