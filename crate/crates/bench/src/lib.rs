//! Fixtures shared by the benchmarks.

use mixbf::testkit::{random_hpd, random_vector, rng};
use mixbf::{BeamformerKind, Enhancer, MultichannelSpectrum, NoiseScmMode, RunConfig, StftConfig};

/// An enhancer with a random fixed interference SCM, warmed up on `warm`
/// frames, plus a pool of random frames to feed it.
pub struct Fixture {
    pub enhancer: Enhancer,
    pool: Vec<MultichannelSpectrum>,
    next: usize,
}

impl Fixture {
    pub fn new(kind: BeamformerKind, mode: NoiseScmMode, channels: usize, warm: usize) -> Self {
        let stft = StftConfig::default();
        let bins = stft.num_bins();
        let mut r = rng(channels as u64);
        let noise = vec![random_hpd(&mut r, channels); bins];
        let cfg = RunConfig {
            noise_scm_mode: mode,
            ..RunConfig::for_kind(kind)
        };
        let enhancer = Enhancer::new(cfg, channels, Some(noise)).expect("valid fixture");
        let pool = (0..64)
            .map(|_| {
                let mut f = MultichannelSpectrum::zeros(0, channels, bins);
                f.as_mut_slice().copy_from_slice(&random_vector(&mut r, channels * bins));
                f
            })
            .collect();
        let mut fx = Self { enhancer, pool, next: 0 };
        for _ in 0..warm {
            fx.step();
        }
        fx
    }

    /// Processes one frame.
    pub fn step(&mut self) -> MultichannelSpectrum {
        let k = self.next % self.pool.len();
        self.pool[k].frame_index = self.next;
        self.next += 1;
        self.enhancer.process(&self.pool[k]).expect("frame processes")
    }
}
