//! Unit tests for the noise generators and attack transforms.

use approx::assert_abs_diff_eq;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dse_core::noise_attacks::{
    add_noise, apply_attack, cauchy_noise, gaussian_noise, laplace_noise, AttackKind, AttackSpec,
    NoiseSpec,
};

#[test]
fn gaussian_noise_deterministic_and_scaled() {
    let a = gaussian_noise(100, 0.01, 42);
    let b = gaussian_noise(100, 0.01, 42);
    assert_eq!(a, b);
    let c = gaussian_noise(100, 0.02, 42);
    for i in 0..100 {
        assert_abs_diff_eq!(2.0 * a[i], c[i], epsilon = 1e-15);
    }
}

#[test]
fn gaussian_noise_variance_law_of_large_numbers() {
    let v = gaussian_noise(1_000_000, 0.01, 7);
    let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    assert!(
        (var - 1e-4).abs() < 1e-6,
        "sample variance {var} outside 1% of 1e-4"
    );
}

#[test]
fn laplace_inverse_cdf_hand_values() {
    // u1 = 0 maps to the location parameter (sgn(0) = 0).
    assert_eq!(laplace_noise(0.3, 0.02, 0.0), 0.3);
    // m = 0, s = 0.02, u1 = 0.25: r = -0.02 ln(0.5) = +0.013863.
    assert_abs_diff_eq!(laplace_noise(0.0, 0.02, 0.25), 0.013862943611198906, epsilon = 1e-15);
    // Symmetric for negative u1.
    assert_abs_diff_eq!(
        laplace_noise(0.0, 0.02, -0.25),
        -0.013862943611198906,
        epsilon = 1e-15
    );
    // u1 = 0.5 hits the log singularity and is clamped to a finite value.
    assert!(laplace_noise(0.0, 0.02, 0.5).is_finite());
}

#[test]
fn laplace_sample_variance_identity() {
    let spec = NoiseSpec::laplace_default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1_000_000;
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..n {
        let r = spec.sample(&mut rng);
        sum += r;
        sum2 += r * r;
    }
    let mean = sum / n as f64;
    let var = sum2 / n as f64 - mean * mean;
    let expected = 2.0 * 0.02 * 0.02;
    assert!(
        (var - expected).abs() / expected < 0.02,
        "Laplace sample variance {var} outside 2% of {expected}"
    );
}

#[test]
fn cauchy_inverse_cdf_hand_values() {
    // u2 = 0.5 maps to the location parameter.
    assert_eq!(cauchy_noise(0.7, 1e-4, 0.5), 0.7);
    // a = 0, b = 1e-4, u2 = 0.75: r = 1e-4 tan(pi/4) = 1e-4.
    assert_abs_diff_eq!(cauchy_noise(0.0, 1e-4, 0.75), 1e-4, epsilon = 1e-18);
}

#[test]
fn cauchy_empirical_median_near_location() {
    let spec = NoiseSpec::cauchy_default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut samples: Vec<f64> = (0..100_000).map(|_| spec.sample(&mut rng)).collect();
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = samples[samples.len() / 2];
    assert!(
        median.abs() < 5.0 * 1e-4 * 10.0,
        "Cauchy median {median} too far from 0"
    );
}

#[test]
fn noise_spec_validation() {
    assert!(NoiseSpec::Gaussian { std: 0.01 }.validate().is_ok());
    assert!(NoiseSpec::Gaussian { std: 0.0 }.validate().is_err());
    assert!(NoiseSpec::Laplace { m: 0.0, s: -1.0 }.validate().is_err());
    assert!(NoiseSpec::Cauchy { a: 0.0, b: 0.0 }.validate().is_err());
}

fn stream(p: usize, n: usize) -> (Vec<DVector<f64>>, Vec<f64>) {
    // Deterministic, time-varying stream so freeze/replay effects are visible.
    let times: Vec<f64> = (0..n).map(|k| k as f64 / 60.0).collect();
    let s = times
        .iter()
        .map(|&t| DVector::from_fn(p, |j, _| 1.0 + j as f64 + (t * (1.0 + j as f64)).sin()))
        .collect();
    (s, times)
}

#[test]
fn integrity_attack_scales_by_factors() {
    let (s, times) = stream(12, 601);
    let spec = AttackSpec::integrity_default(3, 10.0);
    assert_eq!(spec.channels, vec![0, 2]);
    assert_eq!(spec.factors, vec![0.6, 1.0 / 0.6]);
    let out = apply_attack(&s, &times, &spec).unwrap();
    for k in 0..s.len() {
        assert_abs_diff_eq!(out[k][0], 0.6 * s[k][0], epsilon = 1e-15);
        assert_abs_diff_eq!(out[k][2], s[k][2] / 0.6, epsilon = 1e-15);
        // Untargeted channels bit-identical.
        for j in [1, 3, 4, 5, 6, 7, 8, 9, 10, 11] {
            assert_eq!(out[k][j], s[k][j]);
        }
    }
}

#[test]
fn integrity_unit_value_scales_to_0_6() {
    let times: Vec<f64> = (0..10).map(|k| k as f64).collect();
    let s = vec![DVector::from_element(4, 1.0); 10];
    let spec = AttackSpec {
        kind: AttackKind::Integrity,
        channels: vec![0],
        factors: vec![0.6],
        window: [0.0, 9.0],
        replay_shift: 0.0,
    };
    let out = apply_attack(&s, &times, &spec).unwrap();
    assert_eq!(out[3][0], 0.6);
    assert_eq!(out[3][1], 1.0);
}

#[test]
fn dos_freezes_at_window_entry() {
    let (s, times) = stream(12, 601);
    let spec = AttackSpec::dos_default(3);
    assert_eq!(spec.window, [3.0, 6.0]);
    let out = apply_attack(&s, &times, &spec).unwrap();
    let k3 = 180; // t = 3.0 s
    let k45 = 270; // t = 4.5 s
    for &ch in &spec.channels {
        assert_eq!(out[k45][ch], s[k3][ch], "channel {ch} not frozen at 3.0 s");
    }
    // Outside the window untouched.
    assert_eq!(out[100], s[100]);
    assert_eq!(out[400], s[400]);
}

#[test]
fn replay_shifts_by_three_seconds() {
    let (s, times) = stream(12, 601);
    let spec = AttackSpec::replay_default(3);
    let out = apply_attack(&s, &times, &spec).unwrap();
    let k5 = 300; // t = 5 s
    let k2 = 120; // t = 2 s
    for &ch in &spec.channels {
        assert_eq!(out[k5][ch], s[k2][ch], "channel {ch} not replayed");
    }
    for j in 0..12 {
        if !spec.channels.contains(&j) {
            assert_eq!(out[k5][j], s[k5][j]);
        }
    }
}

#[test]
fn none_attack_is_identity() {
    let (s, times) = stream(12, 601);
    let out = apply_attack(&s, &times, &AttackSpec::none()).unwrap();
    assert_eq!(out, s);
    // Applying twice is still the identity.
    let out2 = apply_attack(&out, &times, &AttackSpec::none()).unwrap();
    assert_eq!(out2, s);
}

#[test]
fn integrity_on_zero_stream_stays_zero() {
    let times: Vec<f64> = (0..100).map(|k| k as f64 / 60.0).collect();
    let s = vec![DVector::zeros(12); 100];
    let out = apply_attack(&s, &times, &AttackSpec::integrity_default(3, 2.0)).unwrap();
    assert_eq!(out, s);
}

#[test]
fn attack_validation_rejects_bad_specs() {
    // Channel out of range.
    let mut spec = AttackSpec::integrity_default(3, 10.0);
    spec.channels.push(99);
    spec.factors.push(1.0);
    assert!(spec.validate(12, 10.0).is_err());
    // Factor count mismatch.
    let mut spec = AttackSpec::integrity_default(3, 10.0);
    spec.factors.pop();
    assert!(spec.validate(12, 10.0).is_err());
    // Window outside horizon.
    let mut spec = AttackSpec::dos_default(3);
    spec.window = [3.0, 12.0];
    assert!(spec.validate(12, 10.0).is_err());
    // Replay reaching before t = 0.
    let mut spec = AttackSpec::replay_default(3);
    spec.replay_shift = 4.0;
    assert!(spec.validate(12, 10.0).is_err());
    // The shipped defaults validate.
    assert!(AttackSpec::integrity_default(3, 10.0).validate(12, 10.0).is_ok());
    assert!(AttackSpec::dos_default(3).validate(12, 10.0).is_ok());
    assert!(AttackSpec::replay_default(3).validate(12, 10.0).is_ok());
}

#[test]
fn default_channels_cover_every_other_machine() {
    assert_eq!(AttackSpec::default_channels(3), vec![0, 2]);
    assert_eq!(AttackSpec::default_channels(4), vec![0, 2]);
    assert_eq!(AttackSpec::default_channels(16), vec![0, 2, 4, 6, 8, 10, 12, 14]);
}

#[test]
fn noise_after_attack_pipeline_order() {
    // Noise is applied to the already-attacked stream: attacking after adding
    // noise would scale the noise too, which must not match the pipeline.
    let (s, times) = stream(4, 100);
    let spec = AttackSpec {
        kind: AttackKind::Integrity,
        channels: vec![0],
        factors: vec![0.6],
        window: [0.0, 2.0],
        replay_shift: 0.0,
    };
    let attacked = apply_attack(&s, &times, &spec).unwrap();
    let noisy = add_noise(&attacked, &NoiseSpec::gaussian_default(), 9);
    // Reconstruct the identical noise stream and check additivity.
    let zero = vec![DVector::zeros(4); 100];
    let pure_noise = add_noise(&zero, &NoiseSpec::gaussian_default(), 9);
    for k in 0..100 {
        for j in 0..4 {
            assert_abs_diff_eq!(
                noisy[k][j],
                attacked[k][j] + pure_noise[k][j],
                epsilon = 1e-15
            );
        }
    }
}

#[test]
fn add_noise_deterministic() {
    let (s, _times) = stream(12, 50);
    for spec in [
        NoiseSpec::gaussian_default(),
        NoiseSpec::laplace_default(),
        NoiseSpec::cauchy_default(),
    ] {
        let a = add_noise(&s, &spec, 13);
        let b = add_noise(&s, &spec, 13);
        assert_eq!(a, b);
        let c = add_noise(&s, &spec, 14);
        assert_ne!(a, c);
    }
}

#[test]
fn noise_spec_json_round_trip() {
    for spec in [
        NoiseSpec::gaussian_default(),
        NoiseSpec::laplace_default(),
        NoiseSpec::cauchy_default(),
    ] {
        let text = serde_json::to_string(&spec).unwrap();
        let back: NoiseSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(text, serde_json::to_string(&back).unwrap());
    }
    let g: NoiseSpec = serde_json::from_str(r#"{"kind":"gaussian","std":0.01}"#).unwrap();
    assert!(matches!(g, NoiseSpec::Gaussian { std } if std == 0.01));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Laplace inverse CDF is odd around the location parameter.
    #[test]
    fn prop_laplace_symmetry(u in 0.0f64..0.499, s in 0.001f64..1.0, m in -1.0f64..1.0) {
        let plus = laplace_noise(m, s, u);
        let minus = laplace_noise(m, s, -u);
        prop_assert!(((plus - m) + (minus - m)).abs() < 1e-12);
    }

    /// Cauchy inverse CDF is monotone in u2.
    #[test]
    fn prop_cauchy_monotone(u in 0.01f64..0.98) {
        let a = cauchy_noise(0.0, 1e-4, u);
        let b = cauchy_noise(0.0, 1e-4, u + 0.01);
        prop_assert!(b > a);
    }

    /// Out-of-window samples are bit-identical through any attack.
    #[test]
    fn prop_out_of_window_untouched(kind in 0usize..2) {
        let (s, times) = stream(12, 601);
        let spec = match kind {
            0 => AttackSpec::dos_default(3),
            _ => AttackSpec::replay_default(3),
        };
        let out = apply_attack(&s, &times, &spec).unwrap();
        for (k, &t) in times.iter().enumerate() {
            if !(3.0 - 1e-9..=6.0 + 1e-9).contains(&t) {
                prop_assert_eq!(&out[k], &s[k]);
            }
        }
    }
}
