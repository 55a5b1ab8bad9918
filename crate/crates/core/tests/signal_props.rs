//! Invariants of the STFT, the SCM trackers and the segmental metrics.

use mixbf::linalg::{HermitianScm, C64};
use mixbf::metrics::{segddr, segdir, SegmentSet, DEFAULT_DELTA};
use mixbf::scm::{InterferenceTracker, ScmTracker};
use mixbf::stft::{analyze, synthesize, StftConfig};
use mixbf::testkit::{random_hpd, random_vector, rng};
use mixbf::MultichannelAudio;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn noise(seed: u64, channels: usize, len: usize) -> MultichannelAudio {
    let mut r = rng(seed);
    MultichannelAudio::new(
        16000,
        (0..channels).map(|_| (0..len).map(|_| r.sample(StandardNormal)).collect()).collect(),
    )
    .unwrap()
}

fn tr(a: &HermitianScm) -> f64 {
    a.trace_real()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stft_reconstructs_interior_samples(seed in any::<u64>(), extra in 0usize..2000, channels in 1usize..4) {
        let cfg = StftConfig::default();
        let len = 16000 + extra;
        let x = noise(seed, channels, len);
        let mut y = synthesize(&analyze(&x, &cfg).unwrap(), &cfg).unwrap();
        y.truncate(len);
        prop_assert_eq!(y.len(), len);
        let (mut num, mut den) = (0.0, 0.0);
        for m in 0..channels {
            for i in cfg.window_len..len - cfg.window_len {
                num += (y.channel(m)[i] - x.channel(m)[i]).powi(2);
                den += x.channel(m)[i].powi(2);
            }
        }
        prop_assert!((num / den).sqrt() < 1e-10);
    }

    #[test]
    fn stft_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let cfg = StftConfig::default();
        let x = noise(seed, 2, 4000);
        let y = noise(seed.wrapping_add(1), 2, 4000);
        let mix = x.scaled(a).add(&y.scaled(b)).unwrap();
        let (fx, fy, fm) = (analyze(&x, &cfg).unwrap(), analyze(&y, &cfg).unwrap(), analyze(&mix, &cfg).unwrap());
        for ((px, py), pm) in fx.iter().zip(&fy).zip(&fm) {
            for ((vx, vy), vm) in px.as_slice().iter().zip(py.as_slice()).zip(pm.as_slice()) {
                let expect = vx * a + vy * b;
                prop_assert!((vm - expect).norm() <= 1e-12 * (1.0 + expect.norm()));
            }
        }
    }
}

proptest! {
    #[test]
    fn tracked_scm_stays_in_the_convex_hull(seed in any::<u64>(), m in 2usize..=8, beta in 0.5f64..1.0) {
        let mut r = rng(seed);
        let phi0 = random_hpd(&mut r, m);
        let mut tracker = ScmTracker::with_inverse(beta, phi0.clone()).unwrap();
        let mut bound = tr(&phi0);
        for _ in 0..100 {
            let x = random_vector(&mut r, m);
            bound = bound.max(x.iter().map(C64::norm_sqr).sum());
            tracker.update(&x);
            prop_assert!(tr(tracker.phi()) <= bound * (1.0 + 1e-12));
            let z = random_vector(&mut r, m);
            prop_assert!(tracker.phi().quadratic_form(&z) >= -1e-10 * tr(tracker.phi()));
        }
        prop_assert!(tracker.inverse_residual().unwrap() < 1e-6);
    }

    #[test]
    fn constant_input_is_forgotten_exponentially(seed in any::<u64>(), m in 2usize..=6, beta in 0.5f64..0.99, k in 1i32..40) {
        let mut r = rng(seed);
        let phi0 = random_hpd(&mut r, m);
        let x = random_vector(&mut r, m);
        let target = HermitianScm::outer(&x);
        let mut tracker = ScmTracker::new(beta, phi0.clone()).unwrap();
        for _ in 0..k {
            tracker.update(&x);
        }
        let before = phi0.sub(&target).unwrap().frobenius_norm();
        let after = tracker.phi().sub(&target).unwrap().frobenius_norm();
        prop_assert!(after <= beta.powi(k) * before * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn full_presence_freezes_the_interference_scm(seed in any::<u64>(), m in 2usize..=6) {
        let mut r = rng(seed);
        let phi0 = random_hpd(&mut r, m);
        let mut tracker = InterferenceTracker::new(InterferenceTracker::DEFAULT_ALPHA, phi0.clone()).unwrap();
        for _ in 0..50 {
            tracker.update(&random_vector(&mut r, m), 1.0).unwrap();
        }
        prop_assert_eq!(tracker.phi_v(), &phi0);
    }

    #[test]
    fn metrics_are_gain_invariant(seed in any::<u64>(), g in 0.01f64..100.0) {
        let d = noise(seed, 2, 8000);
        let v = noise(seed.wrapping_add(7), 2, 8000).scaled(0.3);
        let d_hat = d.scaled(0.9).add(&v.scaled(0.05)).unwrap();
        let segs = SegmentSet::all(DEFAULT_DELTA, d.len()).unwrap();
        let a = segdir(&d_hat, &v, &segs).unwrap();
        let b = segdir(&d_hat.scaled(g), &v.scaled(g), &segs).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        let a = segddr(&d_hat, &d, &segs).unwrap();
        let b = segddr(&d_hat.scaled(g), &d.scaled(g), &segs).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn shrinking_interference_raises_segdir(seed in any::<u64>(), g in 0.05f64..0.999) {
        let d = noise(seed, 2, 8000);
        let v = noise(seed.wrapping_add(3), 2, 8000);
        let segs = SegmentSet::all(DEFAULT_DELTA, d.len()).unwrap();
        prop_assert!(segdir(&d, &v.scaled(g), &segs).unwrap() > segdir(&d, &v, &segs).unwrap());
    }
}
