//! Streaming STFT analysis and overlap-add synthesis.
//!
//! Frame `t` covers the `window_len` most recent samples after `t + 1` hops
//! have been pushed, with `window_len − hop` zeros preceding the signal. The
//! analyzer therefore never needs samples beyond `t·hop + hop`, and the
//! synthesizer emits the `hop` samples that frame `t` completes.

use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::audio::MultichannelAudio;
use crate::error::{Error, Result};
use crate::linalg::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// Square-root periodic Hann on analysis and synthesis.
    #[default]
    SqrtHann,
    /// Rectangular analysis and synthesis.
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::SqrtHann => (0..n)
                .map(|i| {
                    let phase = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    (0.5 - 0.5 * phase.cos()).sqrt()
                })
                .collect(),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 20 ms window, 5 ms shift at 16 kHz.
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            window_len: 320,
            hop: 80,
            window: WindowKind::SqrtHann,
        }
    }
}

impl StftConfig {
    pub fn fft_size(&self) -> usize {
        self.window_len
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size() / 2 + 1
    }

    /// Samples of algorithmic delay between input and output.
    pub fn latency_samples(&self) -> usize {
        self.window_len - self.hop
    }

    pub fn hop_duration_s(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    /// Frames produced by [`analyze`] for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop) + self.window_len / self.hop - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.hop == 0 || self.sample_rate == 0 {
            return Err(Error::InvalidConfig("STFT sizes must be positive".into()));
        }
        if self.window_len % 2 != 0 {
            return Err(Error::InvalidConfig("window_len must be even".into()));
        }
        if self.window_len % self.hop != 0 {
            return Err(Error::InvalidConfig(format!(
                "hop {} does not divide window_len {}",
                self.hop, self.window_len
            )));
        }
        cola_gain(self).map(|_| ())
    }
}

/// Constant `Σₖ w²[n + k·hop]`; errors when the window pair is not COLA to
/// 1e-12 relative.
fn cola_gain(cfg: &StftConfig) -> Result<f64> {
    let w = cfg.window.coefficients(cfg.window_len);
    let sums: Vec<f64> = (0..cfg.hop)
        .map(|n| (n..cfg.window_len).step_by(cfg.hop).map(|i| w[i] * w[i]).sum())
        .collect();
    let mean = sums.iter().sum::<f64>() / sums.len() as f64;
    let worst = sums.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max);
    if !(mean > 0.0) || worst > 1e-12 * mean {
        return Err(Error::InvalidConfig(format!(
            "{:?} window with hop {} is not constant-overlap-add",
            cfg.window, cfg.hop
        )));
    }
    Ok(mean)
}

/// One STFT frame: `F` complex vectors of length `M`, bin-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MultichannelSpectrum {
    pub frame_index: usize,
    channels: usize,
    bins: usize,
    data: Vec<C64>,
}

impl MultichannelSpectrum {
    pub fn zeros(frame_index: usize, channels: usize, bins: usize) -> Self {
        Self {
            frame_index,
            channels,
            bins,
            data: vec![C64::new(0.0, 0.0); channels * bins],
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    /// The observation vector `x_{t,f}`.
    #[inline]
    pub fn bin(&self, f: usize) -> &[C64] {
        &self.data[f * self.channels..(f + 1) * self.channels]
    }

    #[inline]
    pub fn bin_mut(&mut self, f: usize) -> &mut [C64] {
        &mut self.data[f * self.channels..(f + 1) * self.channels]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

pub struct StreamingAnalyzer {
    cfg: StftConfig,
    channels: usize,
    window: Vec<f64>,
    history: Vec<Vec<f64>>,
    fft: Arc<dyn RealToComplex<f64>>,
    input: Vec<f64>,
    output: Vec<C64>,
    scratch: Vec<C64>,
    next_index: usize,
}

impl StreamingAnalyzer {
    pub fn new(cfg: StftConfig, channels: usize) -> Result<Self> {
        cfg.validate()?;
        if channels == 0 {
            return Err(Error::NoChannels);
        }
        let fft = RealFftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size());
        Ok(Self {
            window: cfg.window.coefficients(cfg.window_len),
            history: vec![vec![0.0; cfg.window_len]; channels],
            input: fft.make_input_vec(),
            output: fft.make_output_vec(),
            scratch: fft.make_scratch_vec(),
            fft,
            cfg,
            channels,
            next_index: 0,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// Consumes one hop of samples per channel (shorter slices are
    /// zero-padded) and returns the frame they complete.
    pub fn push(&mut self, hop: &[&[f64]]) -> Result<MultichannelSpectrum> {
        if hop.len() != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                found: hop.len(),
            });
        }
        let h = self.cfg.hop;
        let n = self.cfg.window_len;
        let bins = self.cfg.num_bins();
        let mut frame = MultichannelSpectrum::zeros(self.next_index, self.channels, bins);
        for (m, samples) in hop.iter().enumerate() {
            if samples.len() > h {
                return Err(Error::LengthMismatch {
                    channel: m,
                    expected: h,
                    found: samples.len(),
                });
            }
            let hist = &mut self.history[m];
            hist.copy_within(h.., 0);
            let tail = &mut hist[n - h..];
            tail[..samples.len()].copy_from_slice(samples);
            tail[samples.len()..].iter_mut().for_each(|v| *v = 0.0);

            for ((dst, &x), &w) in self.input.iter_mut().zip(hist.iter()).zip(&self.window) {
                *dst = x * w;
            }
            self.fft
                .process_with_scratch(&mut self.input, &mut self.output, &mut self.scratch)
                .expect("buffer sizes come from the plan");
            for (f, v) in self.output.iter().enumerate() {
                frame.data[f * self.channels + m] = *v;
            }
        }
        self.next_index += 1;
        Ok(frame)
    }
}

pub struct StreamingSynthesizer {
    cfg: StftConfig,
    channels: usize,
    window: Vec<f64>,
    gain: f64,
    acc: Vec<Vec<f64>>,
    ifft: Arc<dyn ComplexToReal<f64>>,
    spectrum: Vec<C64>,
    time: Vec<f64>,
    scratch: Vec<C64>,
    next_index: usize,
}

impl StreamingSynthesizer {
    pub fn new(cfg: StftConfig, channels: usize) -> Result<Self> {
        cfg.validate()?;
        if channels == 0 {
            return Err(Error::NoChannels);
        }
        let ifft = RealFftPlanner::<f64>::new().plan_fft_inverse(cfg.fft_size());
        Ok(Self {
            window: cfg.window.coefficients(cfg.window_len),
            gain: cola_gain(&cfg)? * cfg.fft_size() as f64,
            acc: vec![vec![0.0; cfg.window_len]; channels],
            spectrum: ifft.make_input_vec(),
            time: ifft.make_output_vec(),
            scratch: ifft.make_scratch_vec(),
            ifft,
            cfg,
            channels,
            next_index: 0,
        })
    }

    /// Overlap-adds one frame and returns the `hop` samples per channel it
    /// completes.
    pub fn push(&mut self, frame: &MultichannelSpectrum) -> Result<Vec<Vec<f64>>> {
        if frame.frame_index != self.next_index {
            return Err(Error::FrameOrder {
                expected: self.next_index,
                found: frame.frame_index,
            });
        }
        if frame.num_bins() != self.cfg.num_bins() {
            return Err(Error::BinCount {
                expected: self.cfg.num_bins(),
                found: frame.num_bins(),
            });
        }
        if frame.num_channels() != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                found: frame.num_channels(),
            });
        }
        let h = self.cfg.hop;
        let bins = self.cfg.num_bins();
        let mut out = Vec::with_capacity(self.channels);
        for m in 0..self.channels {
            for f in 0..bins {
                self.spectrum[f] = frame.data[f * self.channels + m];
            }
            // one-sided spectrum of a real signal: DC and Nyquist are real
            self.spectrum[0].im = 0.0;
            self.spectrum[bins - 1].im = 0.0;
            self.ifft
                .process_with_scratch(&mut self.spectrum, &mut self.time, &mut self.scratch)
                .expect("buffer sizes come from the plan");
            let acc = &mut self.acc[m];
            for ((a, &t), &w) in acc.iter_mut().zip(&self.time).zip(&self.window) {
                *a += t * w / self.gain;
            }
            out.push(acc[..h].to_vec());
            acc.copy_within(h.., 0);
            let n = acc.len();
            acc[n - h..].iter_mut().for_each(|v| *v = 0.0);
        }
        self.next_index += 1;
        Ok(out)
    }
}

/// Batch analysis; `cfg.num_frames(len)` frames, zero-padded at both edges.
pub fn analyze(audio: &MultichannelAudio, cfg: &StftConfig) -> Result<Vec<MultichannelSpectrum>> {
    let mut an = StreamingAnalyzer::new(*cfg, audio.num_channels())?;
    let len = audio.len();
    let frames = cfg.num_frames(len);
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let a = (t * cfg.hop).min(len);
        let b = (a + cfg.hop).min(len);
        let chunk: Vec<&[f64]> = audio.channels().iter().map(|c| &c[a..b]).collect();
        out.push(an.push(&chunk)?);
    }
    Ok(out)
}

/// Batch overlap-add synthesis. Returns `T·hop − (window_len − hop)` samples
/// aligned with the analyzed input; callers truncate to the original length.
pub fn synthesize<'a, I>(frames: I, cfg: &StftConfig) -> Result<MultichannelAudio>
where
    I: IntoIterator<Item = &'a MultichannelSpectrum>,
{
    let mut iter = frames.into_iter().peekable();
    let channels = match iter.peek() {
        Some(f) => f.num_channels(),
        None => return Ok(MultichannelAudio::zeros(cfg.sample_rate, 1, 0)),
    };
    let mut syn = StreamingSynthesizer::new(*cfg, channels)?;
    let mut out = vec![Vec::new(); channels];
    for frame in iter {
        for (dst, chunk) in out.iter_mut().zip(syn.push(frame)?) {
            dst.extend_from_slice(&chunk);
        }
    }
    let skip = cfg.latency_samples();
    for ch in &mut out {
        ch.drain(..skip.min(ch.len()));
    }
    MultichannelAudio::new(cfg.sample_rate, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::rng;
    use rand::Rng;

    fn noise(seed: u64, channels: usize, len: usize) -> MultichannelAudio {
        let mut r = rng(seed);
        let ch = (0..channels)
            .map(|_| (0..len).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        MultichannelAudio::new(16000, ch).unwrap()
    }

    #[test]
    fn default_config_has_161_bins() {
        let cfg = StftConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.num_bins(), 161);
        let frames = analyze(&noise(0, 3, 16000), &cfg).unwrap();
        assert_eq!(frames.len(), cfg.num_frames(16000));
        assert!(frames.iter().all(|f| f.num_bins() == 161 && f.num_channels() == 3));
    }

    #[test]
    fn rejects_non_cola_configs() {
        let bad_hop = StftConfig {
            hop: 96,
            ..Default::default()
        };
        assert!(bad_hop.validate().is_err());
        // sqrt-Hann at 50% overlap is still COLA; at hop = window_len it is not
        let no_overlap = StftConfig {
            hop: 320,
            ..Default::default()
        };
        assert!(no_overlap.validate().is_err());
    }

    #[test]
    fn zero_input_gives_zero_frames() {
        let audio = MultichannelAudio::zeros(16000, 2, 1000);
        let frames = analyze(&audio, &StftConfig::default()).unwrap();
        assert!(frames.iter().all(|f| f.as_slice().iter().all(|v| v.norm() == 0.0)));
        let back = synthesize(&frames, &StftConfig::default()).unwrap();
        assert!(back.channels().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_matches_naive_dft_of_window() {
        let cfg = StftConfig::default();
        let mut x = vec![0.0; 400];
        x[0] = 1.0;
        let frames = analyze(&MultichannelAudio::new(16000, vec![x]).unwrap(), &cfg).unwrap();
        // with window_len − hop leading zeros, sample 0 sits at window index 240 of frame 0
        let n = cfg.window_len;
        let pos = cfg.latency_samples();
        let w = cfg.window.coefficients(n);
        let mut frame_in = vec![0.0; n];
        frame_in[pos] = w[pos];
        for f in 0..cfg.num_bins() {
            let naive: C64 = frame_in
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let ph = -2.0 * std::f64::consts::PI * (f * i) as f64 / n as f64;
                    C64::from_polar(v, ph)
                })
                .sum();
            assert!((frames[0].bin(f)[0] - naive).norm() < 1e-12, "bin {f}");
        }
    }

    #[test]
    fn round_trip_reconstructs() {
        let cfg = StftConfig::default();
        let x = noise(1, 2, 16000);
        let frames = analyze(&x, &cfg).unwrap();
        let mut y = synthesize(&frames, &cfg).unwrap();
        assert!(y.len() >= x.len());
        y.truncate(x.len());
        let err = y.sub(&x).unwrap().energy().sqrt() / x.energy().sqrt();
        assert!(err < 1e-12, "relative error {err}");
    }

    #[test]
    fn streaming_matches_batch() {
        let cfg = StftConfig::default();
        let x = noise(2, 2, 3000);
        let batch = analyze(&x, &cfg).unwrap();
        let mut an = StreamingAnalyzer::new(cfg, 2).unwrap();
        for (t, frame) in batch.iter().enumerate().take(20) {
            let a = t * cfg.hop;
            let chunk: Vec<&[f64]> = x.channels().iter().map(|c| &c[a..a + cfg.hop]).collect();
            assert_eq!(&an.push(&chunk).unwrap(), frame);
        }
    }

    #[test]
    fn synthesis_rejects_out_of_order_and_bad_bins() {
        let cfg = StftConfig::default();
        let mut syn = StreamingSynthesizer::new(cfg, 1).unwrap();
        let f1 = MultichannelSpectrum::zeros(1, 1, 161);
        assert!(matches!(syn.push(&f1), Err(Error::FrameOrder { expected: 0, found: 1 })));
        let bad = MultichannelSpectrum::zeros(0, 1, 100);
        assert!(matches!(syn.push(&bad), Err(Error::BinCount { .. })));
    }

    #[test]
    fn frame_only_depends_on_samples_up_to_its_hop() {
        // changing samples after frame t's last input must not change frame t
        let cfg = StftConfig::default();
        let x = noise(3, 1, 2000);
        let mut y = x.clone();
        let t = 10;
        let cutoff = t * cfg.hop + cfg.hop;
        for v in &mut y.channel_mut(0)[cutoff..] {
            *v += 1.0;
        }
        let fx = analyze(&x, &cfg).unwrap();
        let fy = analyze(&y, &cfg).unwrap();
        assert_eq!(fx[t], fy[t]);
        assert_ne!(fx[t + 1], fy[t + 1]);
    }

    #[test]
    fn rectangular_window_round_trip() {
        let cfg = StftConfig {
            window: WindowKind::Rectangular,
            ..Default::default()
        };
        let x = noise(4, 1, 2000);
        let mut y = synthesize(&analyze(&x, &cfg).unwrap(), &cfg).unwrap();
        y.truncate(x.len());
        assert!(y.sub(&x).unwrap().energy().sqrt() < 1e-10 * x.energy().sqrt());
    }
}
