//! Synthetic noisy reverberant multichannel scenes with ground truth.
//!
//! Each source reaches the array through a synthetic room response made of a
//! sinc-interpolated direct path followed by an exponentially decaying
//! Gaussian tail. The tail is built from plane waves arriving from random
//! directions, so it has the spatial coherence of a diffuse field rather than
//! being independent per microphone. The first `early_ms` after the direct
//! path count as desired signal; the rest of the tail and an additive diffuse
//! noise make up the interference.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::MultichannelAudio;
use crate::error::{Error, Result};
use crate::linalg::C64;

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Taps of the windowed-sinc direct-path interpolator.
pub const SINC_TAPS: usize = 32;

/// Five of the eight vertices of a cube with the given edge, centred on the
/// origin.
pub fn cube_array(edge: f64) -> Vec<[f64; 3]> {
    [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]
        .iter()
        .map(|v| [(v[0] - 0.5) * edge, (v[1] - 0.5) * edge, (v[2] - 0.5) * edge])
        .collect()
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Independent RNG stream `stream` of `seed`.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn random_direction(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let n = dot3(&v, &v).sqrt();
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    /// Metres, in the array's frame.
    pub position: [f64; 3],
    /// Mono WAV with the dry source signal. Without one a speech-like signal
    /// is generated from the scene seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav: Option<PathBuf>,
}

impl SourceSpec {
    pub fn at(position: [f64; 3]) -> Self {
        Self { position, wav: None }
    }

    /// Horizontal-plane position at `azimuth` radians and `radius` metres.
    pub fn azimuth(azimuth: f64, radius: f64) -> Self {
        Self::at([radius * azimuth.cos(), radius * azimuth.sin(), 0.0])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub mic_geometry: Vec<[f64; 3]>,
    pub sources: Vec<SourceSpec>,
    /// Reverberation time in seconds.
    pub t60: f64,
    /// Reverberant-mixture-to-noise ratio over the whole file; `None`
    /// renders without additive noise.
    pub rmnr_db: Option<f64>,
    pub sample_rate: u32,
    /// Length of the early part kept in the desired signal, after the direct path.
    pub early_ms: f64,
    pub duration_s: f64,
    /// Silence before generated speech starts.
    pub lead_in_s: f64,
    /// Sets the reverberant level through Sabine's critical distance.
    pub room_volume_m3: f64,
    /// Direct-to-reverberant energy ratio; overrides `room_volume_m3`.
    pub drr_db: Option<f64>,
    /// Length of the separately rendered noise-only reference.
    pub noise_reference_s: f64,
    /// Plane waves per diffuse field.
    pub plane_waves: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            mic_geometry: cube_array(0.04),
            sources: vec![
                SourceSpec::azimuth(0.0, 1.0),
                SourceSpec::azimuth(0.75 * std::f64::consts::PI, 1.0),
            ],
            t60: 0.38,
            rmnr_db: Some(20.0),
            sample_rate: 16000,
            early_ms: 50.0,
            duration_s: 10.0,
            lead_in_s: 0.5,
            room_volume_m3: 120.0,
            drr_db: None,
            noise_reference_s: 5.0,
            plane_waves: 64,
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// Two talkers 1 m from the array at random, well separated azimuths.
    pub fn two_talkers(seed: u64, rmnr_db: f64) -> Self {
        let mut r = stream_rng(seed, 0);
        let a: f64 = r.random_range(0.0..std::f64::consts::TAU);
        let b = a + std::f64::consts::PI + r.random_range(-0.25..0.25) * std::f64::consts::PI;
        Self {
            sources: vec![SourceSpec::azimuth(a, 1.0), SourceSpec::azimuth(b, 1.0)],
            rmnr_db: Some(rmnr_db),
            seed,
            ..Self::default()
        }
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.mic_geometry.is_empty() {
            return Err(Error::NoChannels);
        }
        if self.sources.is_empty() {
            return bad("scene has no sources".into());
        }
        if !(self.t60 > 0.0) {
            return bad(format!("t60 must be positive, got {}", self.t60));
        }
        if !(self.early_ms > 0.0) {
            return bad(format!("early_ms must be positive, got {}", self.early_ms));
        }
        if !(self.duration_s > 0.0) || self.sample_rate == 0 {
            return bad("duration and sample rate must be positive".into());
        }
        if !(self.room_volume_m3 > 0.0) {
            return bad("room volume must be positive".into());
        }
        if self.plane_waves == 0 {
            return bad("plane_waves must be at least 1".into());
        }
        if !(self.lead_in_s >= 0.0 && self.noise_reference_s >= 0.0) {
            return bad("lead-in and noise reference lengths must be >= 0".into());
        }
        for (n, s) in self.sources.iter().enumerate() {
            for (m, p) in self.mic_geometry.iter().enumerate() {
                if !(distance(&s.position, p) > 0.0) {
                    return bad(format!("source {n} coincides with microphone {m}"));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text).map_err(|e| {
            Error::InvalidConfig(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        spec.validate()?;
        Ok(spec)
    }

    /// Direct-to-reverberant ratio used for a source at `dist` metres.
    pub fn drr_db_at(&self, dist: f64) -> f64 {
        self.drr_db.unwrap_or_else(|| {
            let critical = 0.057 * (self.room_volume_m3 / self.t60).sqrt();
            20.0 * (critical / dist).log10()
        })
    }
}

/// Parameters of one array response.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RirParams {
    pub t60: f64,
    pub sample_rate: u32,
    pub drr_db: f64,
    pub plane_waves: usize,
}

/// Room response of one source at one microphone.
#[derive(Clone, Debug, PartialEq)]
pub struct Rir {
    pub samples: Vec<f64>,
    /// Direct-path delay in (fractional) samples.
    pub direct_delay: f64,
}

/// Windowed-sinc fractional delay: `gain·δ(n − delay)` added into `out`.
fn add_sinc_impulse(out: &mut [f64], delay: f64, gain: f64) {
    let half = (SINC_TAPS / 2) as isize;
    let base = delay.floor() as isize;
    for k in (base - half + 1)..=(base + half) {
        if k < 0 || k as usize >= out.len() {
            continue;
        }
        let t = k as f64 - delay;
        let sinc = if t.abs() < 1e-12 {
            1.0
        } else {
            (std::f64::consts::PI * t).sin() / (std::f64::consts::PI * t)
        };
        let w = 0.5 + 0.5 * (std::f64::consts::PI * t / half as f64).cos();
        out[k as usize] += gain * sinc * w;
    }
}

/// FFT helpers on zero-padded real signals.
struct Spectral {
    planner: RealFftPlanner<f64>,
}

impl Spectral {
    fn new() -> Self {
        Self {
            planner: RealFftPlanner::new(),
        }
    }

    fn forward(&mut self, x: &[f64], n: usize) -> Vec<C64> {
        let fft = self.planner.plan_fft_forward(n);
        let mut buf = vec![0.0; n];
        let k = x.len().min(n);
        buf[..k].copy_from_slice(&x[..k]);
        let mut out = fft.make_output_vec();
        fft.process(&mut buf, &mut out).expect("buffer sizes match the plan");
        out
    }

    /// Inverse transform, normalized, truncated to `len`.
    fn inverse(&mut self, mut spec: Vec<C64>, n: usize, len: usize) -> Vec<f64> {
        let ifft = self.planner.plan_fft_inverse(n);
        spec[0].im = 0.0;
        if n % 2 == 0 {
            let last = spec.len() - 1;
            spec[last].im = 0.0;
        }
        let mut out = ifft.make_output_vec();
        ifft.process(&mut spec, &mut out).expect("buffer sizes match the plan");
        let scale = 1.0 / n as f64;
        out.truncate(len);
        out.iter_mut().for_each(|v| *v *= scale);
        out
    }

    /// `(a ∗ b)[..len]`.
    fn convolve(&mut self, a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
        if a.is_empty() || b.is_empty() {
            return vec![0.0; len];
        }
        let n = (a.len() + b.len() - 1).next_power_of_two();
        let fa = self.forward(a, n);
        let fb = self.forward(b, n);
        let prod = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
        let mut out = self.inverse(prod, n, len);
        out.resize(len, 0.0);
        out
    }

    /// Sums plane waves: wave `k` with spectrum `waves[k]` delayed by
    /// `delays[k]` samples.
    fn delayed_sum(&mut self, waves: &[Vec<C64>], delays: &[f64], n: usize, len: usize) -> Vec<f64> {
        let bins = n / 2 + 1;
        let mut acc = vec![C64::new(0.0, 0.0); bins];
        for (w, &d) in waves.iter().zip(delays) {
            let step = C64::from_polar(1.0, -std::f64::consts::TAU * d / n as f64);
            let mut phase = C64::new(1.0, 0.0);
            for (a, v) in acc.iter_mut().zip(w) {
                *a += v * phase;
                phase *= step;
            }
        }
        self.inverse(acc, n, len)
    }
}

/// Envelope `10^(−3t/t60)` of the tail amplitude, `1.5·t60` long.
fn tail_envelope(t60: f64, sr: u32) -> Vec<f64> {
    let len = ((1.5 * t60 * sr as f64).ceil() as usize).max(1);
    (0..len)
        .map(|n| 10f64.powf(-3.0 * n as f64 / (t60 * sr as f64)))
        .collect()
}

/// Responses of one source at every microphone. The tail is a sum of
/// `plane_waves` decaying Gaussian sequences, each delayed according to its
/// arrival direction, and starts at the mean direct-path arrival.
pub fn synth_array_rirs(
    src: &[f64; 3],
    mics: &[[f64; 3]],
    params: &RirParams,
    seed: u64,
) -> Result<Vec<Rir>> {
    let sr = params.sample_rate as f64;
    let dists: Vec<f64> = mics.iter().map(|m| distance(src, m)).collect();
    if let Some(d) = dists.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::InvalidConfig(format!("source-microphone distance {d} must be positive")));
    }
    let delays: Vec<f64> = dists.iter().map(|d| d / SPEED_OF_SOUND * sr).collect();
    let mean_dist = dists.iter().sum::<f64>() / dists.len() as f64;
    let onset = delays.iter().sum::<f64>() / delays.len() as f64 + 2.0;
    let env = tail_envelope(params.t60, params.sample_rate);
    let aperture = mics.iter().map(|p| dot3(p, p).sqrt()).fold(0.0, f64::max) / SPEED_OF_SOUND * sr;
    let len = (onset + aperture).ceil() as usize + env.len() + SINC_TAPS;
    let n = (len + SINC_TAPS).next_power_of_two();

    let env_energy: f64 = env.iter().map(|e| e * e).sum();
    let direct_energy = 1.0 / (mean_dist * mean_dist);
    let tail_gain = (direct_energy * 10f64.powf(-params.drr_db / 10.0) / env_energy).sqrt();
    let k = params.plane_waves;
    let mut rng = stream_rng(seed, 1);
    let mut spectral = Spectral::new();
    let mut dirs = Vec::with_capacity(k);
    let mut waves = Vec::with_capacity(k);
    for _ in 0..k {
        dirs.push(random_direction(&mut rng));
        let seq: Vec<f64> = env
            .iter()
            .map(|e| e * tail_gain / (k as f64).sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        waves.push(spectral.forward(&seq, n));
    }
    Ok(mics
        .iter()
        .zip(&delays)
        .zip(&dists)
        .map(|((p, &delay), &dist)| {
            let taus: Vec<f64> = dirs.iter().map(|u| onset - dot3(u, p) / SPEED_OF_SOUND * sr).collect();
            let mut samples = spectral.delayed_sum(&waves, &taus, n, len);
            add_sinc_impulse(&mut samples, delay, 1.0 / dist);
            Rir {
                samples,
                direct_delay: delay,
            }
        })
        .collect())
}

/// Response of a single source-microphone pair.
pub fn synth_rir(src: &[f64; 3], mic: &[f64; 3], t60: f64, sample_rate: u32, seed: u64) -> Result<Rir> {
    let spec = SceneSpec {
        t60,
        ..SceneSpec::default()
    };
    let params = RirParams {
        t60,
        sample_rate,
        drr_db: spec.drr_db_at(distance(src, mic)),
        plane_waves: spec.plane_waves,
    };
    Ok(synth_array_rirs(src, std::slice::from_ref(mic), &params, seed)?.remove(0))
}

/// Early and late parts of a response; `early + late` equals the response.
#[derive(Clone, Debug, PartialEq)]
pub struct RirSplit {
    pub early: Vec<f64>,
    pub late: Vec<f64>,
    /// First sample of the late part.
    pub boundary: usize,
}

pub fn split_rir(rir: &Rir, early_ms: f64, sample_rate: u32) -> RirSplit {
    let boundary = ((rir.direct_delay + early_ms * 1e-3 * sample_rate as f64).ceil() as usize).min(rir.samples.len());
    let mut early = rir.samples.clone();
    let mut late = vec![0.0; rir.samples.len()];
    late[boundary..].copy_from_slice(&rir.samples[boundary..]);
    early[boundary..].iter_mut().for_each(|v| *v = 0.0);
    RirSplit { early, late, boundary }
}

/// Approximately spherically isotropic noise: `plane_waves` independent
/// white Gaussian plane waves from directions uniform on the sphere.
pub fn make_diffuse_noise(
    geometry: &[[f64; 3]],
    len: usize,
    sample_rate: u32,
    seed: u64,
    plane_waves: usize,
) -> MultichannelAudio {
    let sr = sample_rate as f64;
    let aperture = geometry.iter().map(|p| dot3(p, p).sqrt()).fold(0.0, f64::max) / SPEED_OF_SOUND * sr;
    let pad = aperture.ceil() as usize + SINC_TAPS;
    let n = (len + 2 * pad).next_power_of_two();
    let mut rng = stream_rng(seed, 2);
    let mut spectral = Spectral::new();
    let mut dirs = Vec::with_capacity(plane_waves);
    let mut waves = Vec::with_capacity(plane_waves);
    let gain = 1.0 / (plane_waves as f64).sqrt();
    for _ in 0..plane_waves {
        dirs.push(random_direction(&mut rng));
        let g: Vec<f64> = (0..len + 2 * pad)
            .map(|_| gain * rng.sample::<f64, _>(StandardNormal))
            .collect();
        waves.push(spectral.forward(&g, n));
    }
    let channels = geometry
        .iter()
        .map(|p| {
            let taus: Vec<f64> = dirs.iter().map(|u| pad as f64 - dot3(u, p) / SPEED_OF_SOUND * sr).collect();
            let full = spectral.delayed_sum(&waves, &taus, n, len + 2 * pad);
            full[2 * pad..2 * pad + len].to_vec()
        })
        .collect();
    MultichannelAudio::new(sample_rate, channels).expect("equal-length channels")
}

/// Speech-like stand-in: syllable-length bursts of formant-shaped, often
/// harmonic noise under a Hann envelope, with random pauses. Unit RMS.
pub fn speech_like(len: usize, sample_rate: u32, lead_in_s: f64, seed: u64) -> Vec<f64> {
    let sr = sample_rate as f64;
    let mut rng = stream_rng(seed, 3);
    let mut spectral = Spectral::new();
    let mut s = vec![0.0; len];
    let mut i = (lead_in_s * sr) as usize;
    while i < len {
        let dur = ((rng.random_range(0.1..0.3) * sr) as usize).max(16);
        if rng.random::<f64>() < 0.2 {
            i += (rng.random_range(0.2..0.6) * sr) as usize;
            continue;
        }
        let seg: Vec<f64> = (0..dur).map(|_| rng.sample(StandardNormal)).collect();
        let mut spec = spectral.forward(&seg, dur);
        let formants = [
            rng.random_range(300.0..900.0),
            rng.random_range(900.0..2500.0),
            rng.random_range(2500.0..3500.0),
        ];
        let f0: f64 = rng.random_range(100.0..250.0);
        let voiced = rng.random::<f64>() < 0.7;
        let harmonics = (4000.0 / f0) as usize;
        for (b, v) in spec.iter_mut().enumerate() {
            let f = b as f64 * sr / dur as f64;
            let mut shape = 0.05;
            for fc in formants {
                shape += (-((f - fc) / 150.0).powi(2)).exp();
            }
            if voiced {
                let mut comb = 0.05;
                for k in 1..harmonics {
                    comb += (-((f - k as f64 * f0) / 15.0).powi(2)).exp();
                }
                shape *= comb;
            }
            *v *= shape;
        }
        let mut burst = spectral.inverse(spec, dur, dur);
        let level: f64 = rng.random_range(0.3..1.0);
        let denom = (dur - 1).max(1) as f64;
        for (n, v) in burst.iter_mut().enumerate() {
            *v *= level * (0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / denom).cos());
        }
        let end = (i + dur).min(len);
        for (dst, v) in s[i..end].iter_mut().zip(&burst) {
            *dst += v;
        }
        i += (dur as f64 * 0.8) as usize;
    }
    let rms = (s.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        s.iter_mut().for_each(|v| *v /= rms);
    }
    s
}

/// Rendered scene. `captured = desired + interference` and
/// `desired = Σ per_source_desired` hold sample-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneOutput {
    pub captured: MultichannelAudio,
    pub desired: MultichannelAudio,
    pub per_source_desired: Vec<MultichannelAudio>,
    pub interference: MultichannelAudio,
    /// Late reverberation of all sources (part of `interference`).
    pub late_reverb: MultichannelAudio,
    /// Scaled additive noise (the rest of `interference`).
    pub noise: MultichannelAudio,
    /// A separate noise-only realization with the same gain.
    pub noise_reference: MultichannelAudio,
    /// Per-source activity per segment of `activity_delta` samples.
    pub activity: Vec<Vec<bool>>,
    pub activity_delta: usize,
    pub noise_gain: f64,
    pub rmnr_measured_db: Option<f64>,
    pub direct_delays: Vec<Vec<f64>>,
}

/// Activity threshold relative to the loudest segment of each source.
pub const ACTIVITY_THRESHOLD_DB: f64 = -40.0;

/// Segment energies summed over channels, full segments only.
pub fn segment_energies(audio: &MultichannelAudio, delta: usize) -> Vec<f64> {
    let segs = audio.len() / delta;
    (0..segs)
        .map(|t| {
            audio
                .channels()
                .iter()
                .map(|c| c[t * delta..(t + 1) * delta].iter().map(|v| v * v).sum::<f64>())
                .sum()
        })
        .collect()
}

/// Whether each segment exceeds the loudest one minus `threshold_db`.
pub fn segment_activity(audio: &MultichannelAudio, delta: usize, threshold_db: f64) -> Vec<bool> {
    let e = segment_energies(audio, delta);
    let peak = e.iter().copied().fold(0.0, f64::max);
    let thr = peak * 10f64.powf(threshold_db / 10.0);
    e.iter().map(|&v| peak > 0.0 && v > thr).collect()
}

/// Response seed from the scene seed and the source position, so a source
/// keeps its response when other sources are added or removed.
fn position_seed(seed: u64, p: &[f64; 3]) -> u64 {
    p.iter().fold(seed ^ 0x9E37_79B9_7F4A_7C15, |h, v| {
        (h ^ v.to_bits()).wrapping_mul(0x100_0000_01B3).rotate_left(17)
    })
}

fn sum_audio(parts: &[MultichannelAudio], sr: u32, m: usize, len: usize) -> Result<MultichannelAudio> {
    let mut acc = MultichannelAudio::zeros(sr, m, len);
    for p in parts {
        acc = acc.add(p)?;
    }
    Ok(acc)
}

/// Renders with the given dry source signals, one per source; each is cut or
/// zero-padded to the scene length.
pub fn render_scene_with_signals(spec: &SceneSpec, signals: &[Vec<f64>]) -> Result<SceneOutput> {
    spec.validate()?;
    if signals.len() != spec.sources.len() {
        return Err(Error::InvalidConfig(format!(
            "{} source signals for {} sources",
            signals.len(),
            spec.sources.len()
        )));
    }
    let sr = spec.sample_rate;
    let len = spec.num_samples();
    let m = spec.mic_geometry.len();
    let mut spectral = Spectral::new();
    let mut per_source = Vec::with_capacity(signals.len());
    let mut lates = Vec::with_capacity(signals.len());
    let mut delays = Vec::with_capacity(signals.len());
    for (n, (src, sig)) in spec.sources.iter().zip(signals).enumerate() {
        let energy: f64 = sig.iter().take(len).map(|v| v * v).sum();
        if !(energy > 0.0) {
            return Err(Error::SilentSource { index: n, lambda: energy });
        }
        let mean_dist = spec.mic_geometry.iter().map(|p| distance(&src.position, p)).sum::<f64>() / m as f64;
        let params = RirParams {
            t60: spec.t60,
            sample_rate: sr,
            drr_db: spec.drr_db_at(mean_dist),
            plane_waves: spec.plane_waves,
        };
        let rirs = synth_array_rirs(&src.position, &spec.mic_geometry, &params, position_seed(spec.seed, &src.position))?;
        let sig = &sig[..sig.len().min(len)];
        let mut early_ch = Vec::with_capacity(m);
        let mut late_ch = Vec::with_capacity(m);
        for rir in &rirs {
            let split = split_rir(rir, spec.early_ms, sr);
            early_ch.push(spectral.convolve(sig, &split.early, len));
            late_ch.push(spectral.convolve(sig, &split.late, len));
        }
        delays.push(rirs.iter().map(|r| r.direct_delay).collect());
        per_source.push(MultichannelAudio::new(sr, early_ch)?);
        lates.push(MultichannelAudio::new(sr, late_ch)?);
    }
    let desired = sum_audio(&per_source, sr, m, len)?;
    let late_reverb = sum_audio(&lates, sr, m, len)?;
    let noise_seed = spec.seed.wrapping_add(0x5EED_0000);
    let (noise_gain, noise, reference, rmnr_measured_db) = match spec.rmnr_db {
        Some(rmnr) => {
            let raw = make_diffuse_noise(&spec.mic_geometry, len, sr, noise_seed, spec.plane_waves);
            let p_rev = desired.add(&late_reverb)?.energy();
            let g = (p_rev / (raw.energy() * 10f64.powf(rmnr / 10.0))).sqrt();
            let noise = raw.scaled(g);
            let ref_len = (spec.noise_reference_s * sr as f64).round() as usize;
            let reference =
                make_diffuse_noise(&spec.mic_geometry, ref_len, sr, noise_seed.wrapping_add(1), spec.plane_waves).scaled(g);
            let measured = 10.0 * (p_rev / noise.energy()).log10();
            (g, noise, reference, Some(measured))
        }
        None => (
            0.0,
            MultichannelAudio::zeros(sr, m, len),
            MultichannelAudio::zeros(sr, m, 0),
            None,
        ),
    };
    let interference = late_reverb.add(&noise)?;
    let captured = desired.add(&interference)?;
    let delta = (0.05 * sr as f64).round() as usize;
    let activity = per_source
        .iter()
        .map(|d| segment_activity(d, delta, ACTIVITY_THRESHOLD_DB))
        .collect();
    Ok(SceneOutput {
        captured,
        desired,
        per_source_desired: per_source,
        interference,
        late_reverb,
        noise,
        noise_reference: reference,
        activity,
        activity_delta: delta,
        noise_gain,
        rmnr_measured_db,
        direct_delays: delays,
    })
}

/// Renders a scene, generating or loading every source signal.
pub fn render_scene(spec: &SceneSpec) -> Result<SceneOutput> {
    spec.validate()?;
    let len = spec.num_samples();
    let signals = spec
        .sources
        .iter()
        .enumerate()
        .map(|(n, s)| match &s.wav {
            Some(path) => {
                let audio = crate::wav::read_wav(path)?;
                if audio.sample_rate != spec.sample_rate {
                    return Err(Error::InvalidConfig(format!(
                        "{}: sample rate {} differs from the scene's {}",
                        path.display(),
                        audio.sample_rate,
                        spec.sample_rate
                    )));
                }
                Ok(audio.channel(0).to_vec())
            }
            None => Ok(speech_like(
                len,
                spec.sample_rate,
                spec.lead_in_s,
                spec.seed.wrapping_mul(31).wrapping_add(n as u64),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    render_scene_with_signals(spec, &signals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SceneSpec {
        SceneSpec {
            duration_s: 1.0,
            noise_reference_s: 1.0,
            lead_in_s: 0.05,
            plane_waves: 16,
            seed,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn direct_path_delay_example() {
        let rir = synth_rir(&[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0], 0.001, 16000, 1).unwrap();
        assert!((rir.direct_delay - 16000.0 / 343.0).abs() < 1e-12);
        assert!((rir.direct_delay - 46.6).abs() < 0.1);
        // With a vanishing T60 almost all energy is the delayed impulse.
        let peak = rir.samples.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap();
        assert!(peak.0 == 46 || peak.0 == 47);
        let mut ideal = vec![0.0; rir.samples.len()];
        add_sinc_impulse(&mut ideal, rir.direct_delay, 1.0);
        let err: f64 = rir.samples.iter().zip(&ideal).map(|(a, b)| (a - b).powi(2)).sum();
        let e: f64 = ideal.iter().map(|v| v * v).sum();
        assert!(err / e < 1e-2, "{}", err / e);
    }

    #[test]
    fn tail_decays_sixty_db_per_t60() {
        let t60 = 0.38;
        let rir = synth_rir(&[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0], t60, 16000, 7).unwrap();
        assert!(rir.samples.len() as f64 >= 1.5 * t60 * 16000.0);
        // Least-squares slope of 10·log10 of 10 ms block energies.
        let start = rir.direct_delay as usize + 40;
        let block = 160;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for b in 0..((1.2 * t60 * 16000.0) as usize / block) {
            let s = start + b * block;
            let e: f64 = rir.samples[s..s + block].iter().map(|v| v * v).sum();
            xs.push((s - start) as f64 / 16000.0);
            ys.push(10.0 * e.log10());
        }
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        let decay_at_t60 = -slope * t60;
        assert!((decay_at_t60 - 60.0).abs() < 2.0, "{decay_at_t60}");
    }

    #[test]
    fn split_examples() {
        let rir = synth_rir(&[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0], 0.38, 16000, 2).unwrap();
        let s = split_rir(&rir, 50.0, 16000);
        assert_eq!(s.boundary, (rir.direct_delay + 800.0).ceil() as usize);
        for i in 0..rir.samples.len() {
            assert_eq!(s.early[i] + s.late[i], rir.samples[i]);
        }
        let all = split_rir(&rir, 1e6, 16000);
        assert!(all.late.iter().all(|&v| v == 0.0));
        assert_eq!(all.early, rir.samples);
    }

    #[test]
    fn render_invariants_and_rmnr() {
        let out = render_scene(&small(3)).unwrap();
        for m in 0..5 {
            for i in 0..out.captured.len() {
                assert_eq!(out.captured.channel(m)[i], out.desired.channel(m)[i] + out.interference.channel(m)[i]);
                let sum = 0.0 + out.per_source_desired[0].channel(m)[i] + out.per_source_desired[1].channel(m)[i];
                assert_eq!(out.desired.channel(m)[i], sum);
            }
        }
        assert!((out.rmnr_measured_db.unwrap() - 20.0).abs() < 0.1);
        assert_eq!(out.captured.num_channels(), 5);
        assert_eq!(out.captured.len(), 16000);
        assert_eq!(out.noise_reference.len(), 16000);
    }

    #[test]
    fn rendering_is_deterministic() {
        assert_eq!(render_scene(&small(4)).unwrap(), render_scene(&small(4)).unwrap());
        assert_ne!(render_scene(&small(4)).unwrap().captured, render_scene(&small(5)).unwrap().captured);
    }

    #[test]
    fn dry_anechoic_single_source_is_a_delayed_copy() {
        let spec = SceneSpec {
            sources: vec![SourceSpec::at([1.0, 0.0, 0.0])],
            mic_geometry: vec![[0.0, 0.0, 0.0]],
            t60: 0.001,
            rmnr_db: None,
            ..small(1)
        };
        let sig: Vec<f64> = speech_like(16000, 16000, 0.1, 9);
        let out = render_scene_with_signals(&spec, std::slice::from_ref(&sig)).unwrap();
        assert!(out.interference.energy() < 1e-20 * out.desired.energy());
        let mut ideal = vec![0.0; 128];
        add_sinc_impulse(&mut ideal, out.direct_delays[0][0], 1.0);
        let want = Spectral::new().convolve(&sig, &ideal, 16000);
        let err: f64 = out.captured.channel(0).iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(err / want.iter().map(|v| v * v).sum::<f64>() < 1e-2);
    }

    #[test]
    fn two_sources_sum_of_solo_renders() {
        let spec = small(6);
        let sigs: Vec<Vec<f64>> = (0..2).map(|n| speech_like(16000, 16000, 0.1, n)).collect();
        let both = render_scene_with_signals(&spec, &sigs).unwrap();
        let solos: Vec<SceneOutput> = (0..2)
            .map(|n| {
                let solo = SceneSpec {
                    sources: vec![spec.sources[n].clone()],
                    ..spec.clone()
                };
                render_scene_with_signals(&solo, &sigs[n..n + 1]).unwrap()
            })
            .collect();
        assert_eq!(solos[0].desired.add(&solos[1].desired).unwrap(), both.desired);
        assert_eq!(solos[0].late_reverb.add(&solos[1].late_reverb).unwrap(), both.late_reverb);
    }

    #[test]
    fn coincident_mics_get_identical_noise() {
        let noise = make_diffuse_noise(&[[0.0; 3], [0.0; 3]], 4000, 16000, 1, 64);
        assert_eq!(noise.channel(0), noise.channel(1));
        assert_eq!(noise, make_diffuse_noise(&[[0.0; 3], [0.0; 3]], 4000, 16000, 1, 64));
    }

    #[test]
    fn spec_validation() {
        let mut s = SceneSpec::default();
        s.sources.clear();
        assert!(s.validate().is_err());
        let s = SceneSpec {
            t60: 0.0,
            ..SceneSpec::default()
        };
        assert!(s.validate().is_err());
        let s = SceneSpec {
            sources: vec![SourceSpec::at(cube_array(0.04)[0])],
            ..SceneSpec::default()
        };
        assert!(s.validate().is_err());
        assert!(SceneSpec::from_json("{\"t60\": 0.5,\n \"nope\": 1}").unwrap_err().to_string().contains("line 2"));
        let silent = render_scene_with_signals(&small(1), &[vec![0.0; 10], vec![1.0; 10]]);
        assert!(matches!(silent, Err(Error::SilentSource { index: 0, .. })));
    }

    #[test]
    fn activity_threshold() {
        let mut ch = vec![1.0; 8000];
        ch.extend(vec![0.0; 8000]);
        let a = MultichannelAudio::new(16000, vec![ch]).unwrap();
        let act = segment_activity(&a, 800, -40.0);
        assert_eq!(act.iter().filter(|&&b| b).count(), 10);
    }
}
