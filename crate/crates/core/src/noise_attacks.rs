//! Measurement noise generators (Gaussian, Laplace, Cauchy) and the attack
//! transforms applied to the measurement stream before any estimator sees it.
//!
//! Pipeline order is fixed: truth -> attack -> noise.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DseError, Result};

/// Measurement noise family and parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    Gaussian { std: f64 },
    Laplace { m: f64, s: f64 },
    Cauchy { a: f64, b: f64 },
}

impl NoiseSpec {
    pub fn gaussian_default() -> Self {
        NoiseSpec::Gaussian { std: 0.01 }
    }

    pub fn laplace_default() -> Self {
        NoiseSpec::Laplace { m: 0.0, s: 0.02 }
    }

    pub fn cauchy_default() -> Self {
        NoiseSpec::Cauchy { a: 0.0, b: 1e-4 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            NoiseSpec::Gaussian { std } => *std > 0.0,
            NoiseSpec::Laplace { s, .. } => *s > 0.0,
            NoiseSpec::Cauchy { b, .. } => *b > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(DseError::InvalidConfig("noise scale must be positive".into()))
        }
    }

    /// One noise sample from the given generator.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            NoiseSpec::Gaussian { std } => {
                let z: f64 = StandardNormal.sample(rng);
                std * z
            }
            NoiseSpec::Laplace { m, s } => {
                // U1 uniform on (-0.5, 0.5].
                let u1 = 0.5 - rng.gen::<f64>();
                laplace_noise(*m, *s, u1)
            }
            NoiseSpec::Cauchy { a, b } => {
                // U2 uniform on (0, 1).
                let mut u2 = rng.gen::<f64>();
                while u2 == 0.0 {
                    u2 = rng.gen::<f64>();
                }
                cauchy_noise(*a, *b, u2)
            }
        }
    }
}

/// A vector of i.i.d. N(0, std^2) samples from a seeded generator.
pub fn gaussian_noise(p: usize, std: f64, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(p, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        std * z
    })
}

/// Laplace sample via the inverse-CDF formula r = m - s*sgn(u1)*ln(1 - 2|u1|).
pub fn laplace_noise(m: f64, s: f64, u1: f64) -> f64 {
    // u1 = 0.5 hits the log singularity; clamp just inside.
    let u = if u1.abs() >= 0.5 {
        0.5 - 1e-15
    } else {
        u1.abs()
    };
    let sgn = if u1 > 0.0 {
        1.0
    } else if u1 < 0.0 {
        -1.0
    } else {
        0.0
    };
    m - s * sgn * (1.0 - 2.0 * u).ln()
}

/// Cauchy sample via the inverse CDF r = a + b*tan(pi*(u2 - 0.5)).
pub fn cauchy_noise(a: f64, b: f64, u2: f64) -> f64 {
    a + b * (std::f64::consts::PI * (u2 - 0.5)).tan()
}

/// Attack transform on the measurement stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    None,
    Integrity,
    Dos,
    Replay,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Targeted channel indices (0-based into the measurement vector).
    pub channels: Vec<usize>,
    /// Per-channel scaling factors for the integrity attack (same length as
    /// `channels`).
    pub factors: Vec<f64>,
    /// Active window [t_start, t_end] in seconds.
    pub window: [f64; 2],
    /// Replay shift in seconds.
    pub replay_shift: f64,
}

impl AttackSpec {
    pub fn none() -> Self {
        AttackSpec {
            kind: AttackKind::None,
            channels: vec![],
            factors: vec![],
            window: [0.0, 0.0],
            replay_shift: 0.0,
        }
    }

    /// The default attacked channel set: the eR channels of every other
    /// machine (ceil(m/2) of them), mirroring the half-of-the-fleet coverage
    /// of the reference recipe while leaving clean voltage anchors in place.
    pub fn default_channels(n_machines: usize) -> Vec<usize> {
        (0..n_machines).step_by(2).collect()
    }

    /// Integrity attack over the whole run: the first half of the attacked
    /// channels scaled by 0.6, the rest by 1/0.6.
    pub fn integrity_default(n_machines: usize, t_end: f64) -> Self {
        let channels = Self::default_channels(n_machines);
        let half = channels.len().div_ceil(2);
        let factors = (0..channels.len())
            .map(|i| if i < half { 0.6 } else { 1.0 / 0.6 })
            .collect();
        AttackSpec {
            kind: AttackKind::Integrity,
            channels,
            factors,
            window: [0.0, t_end],
            replay_shift: 0.0,
        }
    }

    /// DoS on the default channels: values frozen over [3 s, 6 s].
    pub fn dos_default(n_machines: usize) -> Self {
        AttackSpec {
            kind: AttackKind::Dos,
            channels: Self::default_channels(n_machines),
            factors: vec![],
            window: [3.0, 6.0],
            replay_shift: 0.0,
        }
    }

    /// Replay on the default channels: y(t) = y(t - 3) over [3 s, 6 s].
    pub fn replay_default(n_machines: usize) -> Self {
        AttackSpec {
            kind: AttackKind::Replay,
            channels: Self::default_channels(n_machines),
            factors: vec![],
            window: [3.0, 6.0],
            replay_shift: 3.0,
        }
    }

    pub fn validate(&self, p: usize, t_end: f64) -> Result<()> {
        if self.channels.iter().any(|&c| c >= p) {
            return Err(DseError::InvalidConfig("attack channel out of range".into()));
        }
        if self.kind == AttackKind::Integrity && self.factors.len() != self.channels.len() {
            return Err(DseError::InvalidConfig(
                "integrity attack needs one factor per channel".into(),
            ));
        }
        if self.window[0] > self.window[1] || self.window[0] < 0.0 || self.window[1] > t_end {
            return Err(DseError::InvalidConfig("attack window outside [0, t_end]".into()));
        }
        if self.kind == AttackKind::Replay && self.replay_shift > self.window[0] {
            return Err(DseError::Contract(
                "replay shift must not reach before t = 0".into(),
            ));
        }
        Ok(())
    }
}

/// Applies the attack transform to a uniformly sampled measurement series.
/// Untargeted channels and out-of-window samples pass through unmodified.
pub fn apply_attack(
    stream: &[DVector<f64>],
    times: &[f64],
    spec: &AttackSpec,
) -> Result<Vec<DVector<f64>>> {
    if stream.len() != times.len() {
        return Err(DseError::Contract("stream/times length mismatch".into()));
    }
    let mut out: Vec<DVector<f64>> = stream.to_vec();
    if spec.kind == AttackKind::None || stream.is_empty() {
        return Ok(out);
    }
    let sample_dt = if times.len() > 1 {
        times[1] - times[0]
    } else {
        1.0
    };
    let in_window = |t: f64| t >= spec.window[0] - 1e-12 && t <= spec.window[1] + 1e-12;
    for (k, &t) in times.iter().enumerate() {
        if !in_window(t) {
            continue;
        }
        match spec.kind {
            AttackKind::Integrity => {
                for (ci, &ch) in spec.channels.iter().enumerate() {
                    out[k][ch] = stream[k][ch] * spec.factors[ci];
                }
            }
            AttackKind::Dos => {
                // Frozen at the value seen when the window opened.
                let k0 = (spec.window[0] / sample_dt).ceil() as usize;
                for &ch in &spec.channels {
                    out[k][ch] = stream[k0][ch];
                }
            }
            AttackKind::Replay => {
                let shift = (spec.replay_shift / sample_dt).round() as usize;
                if shift > k {
                    return Err(DseError::Contract(
                        "replay would read before the start of the stream".into(),
                    ));
                }
                for &ch in &spec.channels {
                    out[k][ch] = stream[k - shift][ch];
                }
            }
            AttackKind::None => unreachable!(),
        }
    }
    Ok(out)
}

/// Adds measurement noise to an (already attacked) stream.
pub fn add_noise(stream: &[DVector<f64>], spec: &NoiseSpec, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    stream
        .iter()
        .map(|y| DVector::from_fn(y.len(), |i, _| y[i] + spec.sample(&mut rng)))
        .collect()
}
