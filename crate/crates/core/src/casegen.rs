//! Construction of the shipped synthetic 3-machine case.
//!
//! Machine constants are typical two-axis transient values; the reduced
//! admittance matrices are hand-picked with positive transfer susceptances so
//! the pre-fault equilibrium is oscillatory-stable. The equilibrium itself is
//! solved exactly: rotor angles and q-axis EMFs are chosen, the d-axis EMFs
//! follow from a Newton solve of their algebraic steady-state condition, and
//! the steady-state inputs are then read off the remaining equations.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{DseError, Result};
use crate::powermodel::{interface_currents, MachineParams, SystemCase, DELTA, ED, EQ, OMEGA};

fn cm(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Builds the desk-scale 3-machine case (n = 12 states, p = 12 measurements).
pub fn synthetic_three_machine() -> Result<SystemCase> {
    let machines = vec![
        MachineParams {
            h: 6.5,
            d: 5.0,
            xd: 1.80,
            xq: 1.70,
            xdp: 0.30,
            xqp: 0.55,
            td0p: 8.0,
            tq0p: 0.40,
        },
        MachineParams {
            h: 4.0,
            d: 4.0,
            xd: 1.60,
            xq: 1.50,
            xdp: 0.28,
            xqp: 0.50,
            td0p: 7.0,
            tq0p: 0.45,
        },
        MachineParams {
            h: 5.0,
            d: 4.5,
            xd: 1.70,
            xq: 1.60,
            xdp: 0.32,
            xqp: 0.52,
            td0p: 7.5,
            tq0p: 0.42,
        },
    ];

    let y_pre = DMatrix::from_row_slice(
        3,
        3,
        &[
            cm(0.36, -1.04),
            cm(0.05, 0.40),
            cm(0.04, 0.36),
            cm(0.05, 0.40),
            cm(0.40, -1.12),
            cm(0.06, 0.44),
            cm(0.04, 0.36),
            cm(0.06, 0.44),
            cm(0.32, -0.96),
        ],
    );
    // Post-fault network: the corridor between machines 1 and 2 loses a
    // parallel line, weakening that coupling by 10%. Diagonals are trimmed by
    // the balance solve below.
    let mut y_post = y_pre.clone();
    y_post[(0, 1)] = cm(0.045, 0.36);
    y_post[(1, 0)] = cm(0.045, 0.36);

    let omega_s = 2.0 * std::f64::consts::PI * 60.0;
    let delta0 = [0.90, 0.90, 0.90];
    let eq0 = [1.08, 1.12, 1.10];

    let mut case = build_equilibrium_case(machines, y_pre, y_post, omega_s, &delta0, &eq0)?;
    balance_post_fault(&mut case, &[0.0, -0.03, 0.02])?;
    case.validate()?;
    Ok(case)
}

/// Adjusts the post-fault diagonal admittances so that an exact post-fault
/// equilibrium exists at the pre-fault EMFs with rotor angles shifted by
/// `delta_shift`. Without a governor the swing dynamics have no frequency
/// restoring force, so a lasting torque imbalance would make the whole system
/// drift in angle instead of ringing down; anchoring a nearby equilibrium
/// with identical machine-frame currents makes the fault response a pure
/// rotor swing of designable amplitude.
///
/// The construction is closed-form: with target angles d* and unchanged EMFs
/// the internal phasors P* are known, the target currents are the pre-fault
/// machine-frame currents re-rotated by the angle shifts, and the complex
/// diagonal corrections follow from solving (Y + diag(c)) P* = I_target for
/// diag(c) elementwise.
fn balance_post_fault(case: &mut SystemCase, delta_shift: &[f64]) -> Result<()> {
    let m = case.n_machines();
    assert_eq!(delta_shift.len(), m);

    let psi = |x: &DVector<f64>| -> DVector<Complex64> {
        DVector::from_fn(m, |i, _| {
            let d = x[4 * i + DELTA];
            let eq = x[4 * i + EQ];
            let ed = x[4 * i + ED];
            cm(ed * d.sin() + eq * d.cos(), eq * d.sin() - ed * d.cos())
        })
    };

    let psi0 = psi(&case.x0);
    let i0 = &case.y_pre * &psi0;

    let mut x_star = case.x0.clone();
    for i in 0..m {
        x_star[4 * i + DELTA] += delta_shift[i];
    }
    let psi_star = psi(&x_star);
    let base = &case.y_post * &psi_star;
    for i in 0..m {
        let rot = cm(delta_shift[i].cos(), delta_shift[i].sin());
        let target = i0[i] * rot;
        if psi_star[i].norm() < 1e-9 {
            return Err(DseError::InvalidCase(
                "degenerate internal phasor in post-fault balance".into(),
            ));
        }
        let c = (target - base[i]) / psi_star[i];
        case.y_post[(i, i)] += c;
    }

    // The shifted state must now be an exact post-fault equilibrium.
    let f_star = crate::powermodel::f_eval(case, &x_star, &case.u0, &case.y_post)?;
    if f_star.amax() >= 1e-9 {
        return Err(DseError::InvalidCase(format!(
            "post-fault balance failed (residual {:.3e})",
            f_star.amax()
        )));
    }
    Ok(())
}

/// Completes a case from chosen rotor angles and q-axis EMFs: solves the
/// d-axis EMF steady-state condition by Newton iteration and sets inputs so
/// the result is an exact equilibrium of the pre-fault system.
pub fn build_equilibrium_case(
    machines: Vec<MachineParams>,
    y_pre: DMatrix<Complex64>,
    y_post: DMatrix<Complex64>,
    omega_s: f64,
    delta0: &[f64],
    eq0: &[f64],
) -> Result<SystemCase> {
    let m = machines.len();
    assert_eq!(delta0.len(), m);
    assert_eq!(eq0.len(), m);

    let mut case = SystemCase {
        machines,
        y_pre,
        y_post,
        omega_s,
        u0: DVector::zeros(2 * m),
        x0: DVector::zeros(4 * m),
    };
    for i in 0..m {
        case.x0[4 * i + DELTA] = delta0[i];
        case.x0[4 * i + OMEGA] = omega_s;
        case.x0[4 * i + EQ] = eq0[i];
        case.x0[4 * i + ED] = 0.1;
    }

    // Steady state requires ed_i = (xq_i - xqp_i) * iq_i(x); Newton on ed.
    let residual = |case: &SystemCase, ed: &DVector<f64>| -> Result<DVector<f64>> {
        let mut x = case.x0.clone();
        for i in 0..m {
            x[4 * i + ED] = ed[i];
        }
        let cur = interface_currents(case, &x, &case.y_pre)?;
        Ok(DVector::from_fn(m, |i, _| {
            ed[i] - (case.machines[i].xq - case.machines[i].xqp) * cur.iq[i]
        }))
    };

    let mut ed = DVector::from_element(m, 0.1);
    for _ in 0..100 {
        let r = residual(&case, &ed)?;
        if r.amax() < 1e-13 {
            break;
        }
        let mut jac = DMatrix::zeros(m, m);
        let h = 1e-7;
        for j in 0..m {
            let mut edp = ed.clone();
            let mut edm = ed.clone();
            edp[j] += h;
            edm[j] -= h;
            jac.set_column(j, &((residual(&case, &edp)? - residual(&case, &edm)?) / (2.0 * h)));
        }
        let step = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| DseError::InvalidCase("singular Jacobian in equilibrium solve".into()))?;
        ed -= step;
    }
    let r = residual(&case, &ed)?;
    if r.amax() >= 1e-10 {
        return Err(DseError::InvalidCase(format!(
            "equilibrium Newton solve did not converge (residual {:.3e})",
            r.amax()
        )));
    }
    for i in 0..m {
        case.x0[4 * i + ED] = ed[i];
    }

    // Inputs from the remaining steady-state equations.
    let cur = interface_currents(&case, &case.x0, &case.y_pre)?;
    for i in 0..m {
        let p = &case.machines[i];
        let eq = case.x0[4 * i + EQ];
        let edv = case.x0[4 * i + ED];
        let te = edv * cur.id[i] + eq * cur.iq[i] + (p.xqp - p.xdp) * cur.id[i] * cur.iq[i];
        case.u0[i] = te; // Tm
        case.u0[m + i] = eq + (p.xd - p.xdp) * cur.id[i]; // Efd
    }

    case.validate()?;
    Ok(case)
}
