//! Attack-detection statistics and trajectory error metrics.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{DseError, Result};
use crate::powermodel::{h_eval, SystemCase};

/// Normalized innovation ratio lambda = (y - yhat) / sqrt(Pyy).
pub fn innovation_ratio(y: f64, y_pred: f64, pyy: f64) -> Result<f64> {
    if pyy <= 0.0 {
        return Err(DseError::UndefinedMetric(format!(
            "predicted measurement variance {pyy:.3e} is not positive"
        )));
    }
    Ok((y - y_pred) / pyy.sqrt())
}

/// Raw measurement innovation for the observer (no measurement covariance).
pub fn observer_innovation(
    case: &SystemCase,
    y: &DVector<f64>,
    xhat: &DVector<f64>,
    y_net: &DMatrix<Complex64>,
) -> Result<DVector<f64>> {
    Ok(y - h_eval(case, xhat, y_net)?)
}

/// 2-norm of the componentwise relative error; components with |x_i| below
/// the division guard are excluded and counted.
pub fn rel_error_norm(x: &DVector<f64>, xhat: &DVector<f64>) -> Result<(f64, usize)> {
    const EPS_DIV: f64 = 1e-9;
    let mut sum = 0.0;
    let mut excluded = 0usize;
    for i in 0..x.len() {
        if x[i].abs() <= EPS_DIV {
            excluded += 1;
            continue;
        }
        let e = (x[i] - xhat[i]) / x[i];
        sum += e * e;
    }
    if excluded == x.len() {
        return Err(DseError::UndefinedMetric(
            "all components excluded by the division guard".into(),
        ));
    }
    Ok((sum.sqrt(), excluded))
}

/// Per-channel detection flags and detection / false-alarm rates.
#[derive(Debug, Clone)]
pub struct DetectionOutcome {
    /// flags[k][j]: channel j flagged at sample k (false before warmup).
    pub flags: Vec<Vec<bool>>,
    pub detection_rate: f64,
    pub false_alarm_rate: f64,
}

/// Thresholds the |ratio| series. Rates are flagged fractions per
/// channel-step after the warmup, computed separately over attacked and
/// clean channels. For the detection rate only samples inside the attack
/// window count.
pub fn flag_compromised(
    ratios: &[DVector<f64>],
    times: &[f64],
    attacked_channels: &[usize],
    attack_window: [f64; 2],
    threshold: f64,
    warmup: f64,
) -> DetectionOutcome {
    let p = ratios.first().map(|r| r.len()).unwrap_or(0);
    let attacked = |j: usize| attacked_channels.contains(&j);
    let mut flags = Vec::with_capacity(ratios.len());
    let (mut det_hits, mut det_total) = (0usize, 0usize);
    let (mut fa_hits, mut fa_total) = (0usize, 0usize);
    for (k, r) in ratios.iter().enumerate() {
        let t = times[k];
        let mut row = vec![false; p];
        for j in 0..p {
            let hit = t >= warmup && r[j].abs() > threshold;
            row[j] = hit;
            if t < warmup {
                continue;
            }
            if attacked(j) {
                if t >= attack_window[0] && t <= attack_window[1] {
                    det_total += 1;
                    if hit {
                        det_hits += 1;
                    }
                }
            } else {
                fa_total += 1;
                if hit {
                    fa_hits += 1;
                }
            }
        }
        flags.push(row);
    }
    let rate = |hits: usize, total: usize| if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    DetectionOutcome {
        flags,
        detection_rate: rate(det_hits, det_total),
        false_alarm_rate: rate(fa_hits, fa_total),
    }
}

/// Per-estimator summary row.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub estimator: String,
    pub rel_err: Vec<f64>,
    pub final_err: f64,
    pub mean_err: f64,
    pub detection_rate: f64,
    pub false_alarm_rate: f64,
    pub wall_time_s: f64,
    pub diverged: bool,
}
