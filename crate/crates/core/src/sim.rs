//! Ground-truth trajectory generation: post-fault dynamics under unknown
//! inputs and discrete process noise, sampled at the PMU rate.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DseError, Result};
use crate::powermodel::{f_eval, h_eval, SystemCase};

/// Unknown-input channel: an n x 8 weight matrix driving the 8-component
/// deterministic signal w(t).
#[derive(Debug, Clone)]
pub struct UnknownInputSpec {
    pub bw: DMatrix<f64>,
    pub omega_u: f64,
}

impl UnknownInputSpec {
    /// No model uncertainty.
    pub fn zero(n: usize) -> Self {
        UnknownInputSpec {
            bw: DMatrix::zeros(n, 8),
            omega_u: 100.0,
        }
    }

    /// Draws Bw row-wise from N(0, (0.5 * dx_max_i)^2) with a seeded generator.
    pub fn random(dx_max: &DVector<f64>, seed: u64) -> Self {
        let n = dx_max.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bw = DMatrix::from_fn(n, 8, |i, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.5 * dx_max[i] * z
        });
        UnknownInputSpec { bw, omega_u: 100.0 }
    }
}

/// The 8-component unknown-input signal.
pub fn w_eval(t: f64, omega_u: f64) -> DVector<f64> {
    let a = omega_u * t;
    DVector::from_vec(vec![
        0.5 * a.cos(),
        0.5 * a.sin(),
        0.5 * a.cos(),
        0.5 * a.sin(),
        -(-5.0 * t).exp(),
        0.2 * (-t).exp() * a.cos(),
        0.2 * a.cos(),
        0.1 * a.sin(),
    ])
}

/// Scenario timing: horizon, integration step, sampling, and the window in
/// which the estimators use the wrong (pre-fault) admittance matrix.
#[derive(Debug, Clone)]
pub struct ScenarioSchedule {
    pub t_end: f64,
    pub dt: f64,
    pub sample_rate: f64,
    pub wrong_admittance_until: f64,
}

impl Default for ScenarioSchedule {
    fn default() -> Self {
        ScenarioSchedule {
            t_end: 10.0,
            dt: 1.0 / 600.0,
            sample_rate: 60.0,
            wrong_admittance_until: 1.0,
        }
    }
}

impl ScenarioSchedule {
    pub fn validate(&self) -> Result<()> {
        let per_sample = 1.0 / self.sample_rate / self.dt;
        if (per_sample - per_sample.round()).abs() > 1e-9 {
            return Err(DseError::InvalidConfig(
                "dt must divide the sample interval".into(),
            ));
        }
        if self.wrong_admittance_until < 0.0 || self.wrong_admittance_until > self.t_end {
            return Err(DseError::InvalidConfig(
                "wrong_admittance_until must lie in [0, t_end]".into(),
            ));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.t_end * self.sample_rate).round() as usize + 1
    }

    pub fn substeps_per_sample(&self) -> usize {
        (1.0 / self.sample_rate / self.dt).round() as usize
    }
}

/// Truth trajectory sampled at the measurement rate.
#[derive(Debug, Clone)]
pub struct TruthTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub clean_measurements: Vec<DVector<f64>>,
    pub delta_max: DVector<f64>,
}

/// One classical 4th-order Runge-Kutta step of dx/dt = f(x).
pub fn rk4_step<F>(f: &F, x: &DVector<f64>, dt: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(x)?;
    let k2 = f(&(x + &k1 * (dt / 2.0)))?;
    let k3 = f(&(x + &k2 * (dt / 2.0)))?;
    let k4 = f(&(x + &k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

fn check_finite(x: &DVector<f64>, t: f64) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DseError::Diverged { t });
    }
    Ok(())
}

/// Integrates the truth system over one sample interval. Time-dependent
/// forcing is evaluated at each RK4 stage time.
fn integrate_sample(
    case: &SystemCase,
    x: &DVector<f64>,
    t0: f64,
    schedule: &ScenarioSchedule,
    ui: &UnknownInputSpec,
) -> Result<DVector<f64>> {
    let mut x = x.clone();
    let dt = schedule.dt;
    for k in 0..schedule.substeps_per_sample() {
        let t = t0 + k as f64 * dt;
        // RK4 with stage-correct forcing times.
        let deriv = |xv: &DVector<f64>, tv: f64| -> Result<DVector<f64>> {
            Ok(f_eval(case, xv, &case.u0, &case.y_post)? + &ui.bw * w_eval(tv, ui.omega_u))
        };
        let k1 = deriv(&x, t)?;
        let k2 = deriv(&(&x + &k1 * (dt / 2.0)), t + dt / 2.0)?;
        let k3 = deriv(&(&x + &k2 * (dt / 2.0)), t + dt / 2.0)?;
        let k4 = deriv(&(&x + &k3 * dt), t + dt)?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        check_finite(&x, t + dt)?;
    }
    Ok(x)
}

/// Largest per-state excursion from the initial state.
pub fn largest_state_change(states: &[DVector<f64>]) -> DVector<f64> {
    let x0 = &states[0];
    let mut dx: DVector<f64> = DVector::zeros(x0.len());
    for x in states {
        for i in 0..x0.len() {
            dx[i] = dx[i].max((x[i] - x0[i]).abs());
        }
    }
    dx
}

/// Simulates the post-fault truth system.
///
/// A noise-free, uncertainty-free pre-pass of the same fault response fixes
/// the per-state largest changes used to scale the process noise (and,
/// upstream, Bw). Process noise with std 0.05 * dx_max is injected once per
/// measurement sample.
pub fn simulate_truth(
    case: &SystemCase,
    schedule: &ScenarioSchedule,
    ui: &UnknownInputSpec,
    q_seed: u64,
) -> Result<TruthTrajectory> {
    schedule.validate()?;
    let n = case.n_states();
    let dx_max = largest_state_change(&noise_free_states(case, schedule)?);
    let q_std = dx_max.map(|v| 0.05 * v);

    let mut rng = ChaCha8Rng::seed_from_u64(q_seed);
    let n_samples = schedule.n_samples();
    let mut times = Vec::with_capacity(n_samples);
    let mut states = Vec::with_capacity(n_samples);
    let mut meas = Vec::with_capacity(n_samples);

    let mut x = case.x0.clone();
    for k in 0..n_samples {
        let t = k as f64 / schedule.sample_rate;
        if k > 0 {
            let t_prev = (k - 1) as f64 / schedule.sample_rate;
            x = integrate_sample(case, &x, t_prev, schedule, ui)?;
            for i in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[i] += q_std[i] * z;
            }
            check_finite(&x, t)?;
        }
        times.push(t);
        states.push(x.clone());
        meas.push(h_eval(case, &x, &case.y_post)?);
    }

    Ok(TruthTrajectory {
        times,
        states,
        clean_measurements: meas,
        delta_max: dx_max,
    })
}

/// Deterministic pre-pass: post-fault response with no unknown inputs and no
/// process noise, sampled at the measurement rate.
pub fn noise_free_states(
    case: &SystemCase,
    schedule: &ScenarioSchedule,
) -> Result<Vec<DVector<f64>>> {
    schedule.validate()?;
    let ui = UnknownInputSpec::zero(case.n_states());
    let mut states = Vec::with_capacity(schedule.n_samples());
    let mut x = case.x0.clone();
    states.push(x.clone());
    for k in 1..schedule.n_samples() {
        let t_prev = (k - 1) as f64 / schedule.sample_rate;
        x = integrate_sample(case, &x, t_prev, schedule, &ui)?;
        states.push(x.clone());
    }
    Ok(states)
}

/// Writes a trajectory as CSV with header `t, x_1..x_n, y_1..y_p`.
pub fn trajectory_csv(traj: &TruthTrajectory) -> String {
    let n = traj.states[0].len();
    let p = traj.clean_measurements[0].len();
    let mut out = String::from("t");
    for i in 1..=n {
        out.push_str(&format!(",x_{i}"));
    }
    for j in 1..=p {
        out.push_str(&format!(",y_{j}"));
    }
    out.push('\n');
    for k in 0..traj.times.len() {
        out.push_str(&format!("{}", traj.times[k]));
        for v in traj.states[k].iter().chain(traj.clean_measurements[k].iter()) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
