//! Frame-by-frame streaming enhancement.
//!
//! Each frequency bin carries its own trackers. Per frame the bin updates
//! `Φx` (and `Φv` in online mode), then applies `Wᴴ` to the observation
//! without ever forming `W`, which keeps the cost at `O(M²)`:
//!
//! * Mod-PMWF: `Wᴴs = Φx·Φv⁻¹·s / (γ + λx)`
//! * GEV-MVDR: `Wᴴs = b·(uᴴs)`
//! * UR-MWF: `Wᴴs = s − Φv·Φx⁻¹·s`
//!
//! The same per-frame operator can be applied to extra "shadow" spectra so
//! that the desired and interference components are filtered exactly like
//! the captured signal.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::audio::MultichannelAudio;
use crate::beamformer::{self, BeamformerWeights, WeightKind, DEGENERATE_LAMBDA};
use crate::config::{BeamformerKind, NoiseScmMode, RunConfig};
use crate::error::{Error, Result};
use crate::linalg::{dot, power_iteration, trace_of_product, vec_norm, CMatrix, HermitianScm, C64};
use crate::scm::{spp_from_inverses, InterferenceTracker, ScmTracker};
use crate::stft::{analyze, synthesize, MultichannelSpectrum, StreamingAnalyzer, StreamingSynthesizer};

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Clone, Debug)]
enum NoiseModel {
    Fixed {
        phi_v: HermitianScm,
        phi_v_inv: HermitianScm,
    },
    Tracked(InterferenceTracker),
}

impl NoiseModel {
    fn phi_v(&self) -> &HermitianScm {
        match self {
            NoiseModel::Fixed { phi_v, .. } => phi_v,
            NoiseModel::Tracked(t) => t.phi_v(),
        }
    }

    fn phi_v_inv(&self) -> &HermitianScm {
        match self {
            NoiseModel::Fixed { phi_v_inv, .. } => phi_v_inv,
            NoiseModel::Tracked(t) => t.phi_v_inv(),
        }
    }
}

/// The `Wᴴ` of one bin for the current frame.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Operator {
    Identity,
    Zero,
    /// `s/M` for silent frames.
    Uniform,
    Mod { scale: f64 },
    Gev,
    Ur,
}

/// Per-bin mutable state.
#[derive(Clone, Debug)]
pub struct BinState {
    phi_x: ScmTracker,
    noise: NoiseModel,
    u: Vec<C64>,
    b: Vec<C64>,
    q: f64,
    op: Operator,
    scratch: Vec<C64>,
}

impl BinState {
    fn new(cfg: &RunConfig, phi_v: HermitianScm) -> Result<Self> {
        let m = phi_v.dim();
        let online = cfg.noise_scm_mode == NoiseScmMode::OnlineSpp;
        let needs_x_inverse = online || cfg.beamformer == BeamformerKind::UrMwf;
        let beta = cfg.effective_beta();
        let phi_x = if needs_x_inverse {
            ScmTracker::with_inverse(beta, phi_v.clone())?
        } else {
            ScmTracker::new(beta, phi_v.clone())?
        };
        let noise = if online {
            NoiseModel::Tracked(InterferenceTracker::new(cfg.alpha, phi_v)?)
        } else {
            let phi_v_inv = crate::linalg::invert_hpd(&phi_v)?;
            NoiseModel::Fixed { phi_v, phi_v_inv }
        };
        let mut u = vec![ZERO; m];
        u[0] = C64::new(1.0, 0.0);
        Ok(Self {
            phi_x,
            noise,
            u,
            b: vec![ZERO; m],
            q: 0.0,
            op: Operator::Identity,
            scratch: vec![ZERO; m],
        })
    }

    pub fn phi_x(&self) -> &HermitianScm {
        self.phi_x.phi()
    }

    pub fn phi_v(&self) -> &HermitianScm {
        self.noise.phi_v()
    }

    pub fn phi_v_inv(&self) -> &HermitianScm {
        self.noise.phi_v_inv()
    }

    /// Power-iteration vector.
    pub fn u(&self) -> &[C64] {
        &self.u
    }

    /// Speech presence probability of the last frame (online mode only).
    pub fn spp(&self) -> f64 {
        self.q
    }

    fn update(&mut self, cfg: &RunConfig, x: &[C64]) -> Result<()> {
        if let NoiseModel::Tracked(tracker) = &mut self.noise {
            // Presence is judged against the Φx that predates x.
            let est = spp_from_inverses(
                x,
                tracker.phi_v_inv(),
                tracker.log_det(),
                self.phi_x.inverse().expect("online mode tracks the inverse of phi_x"),
                self.phi_x.log_det().expect("online mode tracks the inverse of phi_x"),
                cfg.spp,
            );
            self.q = est.q;
            tracker.update(x, est.q)?;
        }
        self.phi_x.update(x);
        self.op = match cfg.beamformer {
            BeamformerKind::Identity => Operator::Identity,
            BeamformerKind::Zero => Operator::Zero,
            BeamformerKind::ModPmwf => {
                let lambda = trace_of_product(self.noise.phi_v_inv(), self.phi_x.phi())?;
                let denom = cfg.gamma.value() + lambda;
                if denom.is_finite() && denom >= DEGENERATE_LAMBDA {
                    Operator::Mod { scale: 1.0 / denom }
                } else {
                    Operator::Uniform
                }
            }
            BeamformerKind::GevMvdr => {
                let it = power_iteration(
                    self.noise.phi_v_inv(),
                    self.phi_x.phi(),
                    &self.u,
                    cfg.power_iters,
                )?;
                self.u = it.u;
                self.noise.phi_v().matvec_into(&self.u, &mut self.b);
                let denom = dot(&self.u, &self.b).re;
                if denom > 0.0 && denom.is_finite() {
                    self.b.iter_mut().for_each(|v| *v /= denom);
                    Operator::Gev
                } else {
                    Operator::Uniform
                }
            }
            BeamformerKind::UrMwf => Operator::Ur,
        };
        Ok(())
    }

    /// `y = Wᴴs` with the operator of the current frame.
    fn apply(&mut self, s: &[C64], y: &mut [C64]) {
        match self.op {
            Operator::Identity => y.copy_from_slice(s),
            Operator::Zero => y.fill(ZERO),
            Operator::Uniform => {
                let k = 1.0 / s.len() as f64;
                y.iter_mut().zip(s).for_each(|(o, v)| *o = v * k);
            }
            Operator::Mod { scale } => {
                self.noise.phi_v_inv().matvec_into(s, &mut self.scratch);
                self.phi_x.phi().matvec_into(&self.scratch, y);
                y.iter_mut().for_each(|v| *v *= scale);
            }
            Operator::Gev => {
                let proj = dot(&self.u, s);
                y.iter_mut().zip(&self.b).for_each(|(o, b)| *o = b * proj);
            }
            Operator::Ur => {
                let inv = self.phi_x.inverse().expect("UR-MWF tracks the inverse of phi_x");
                inv.matvec_into(s, &mut self.scratch);
                self.noise.phi_v().matvec_into(&self.scratch, y);
                y.iter_mut().zip(s).for_each(|(o, v)| *o = v - *o);
            }
        }
    }

    /// The explicit `W` of the current frame, built with the reference
    /// formulas. `O(M³)`; meant for verification.
    pub fn weights(&self, cfg: &RunConfig) -> Result<BeamformerWeights> {
        let m = self.u.len();
        match (cfg.beamformer, self.op) {
            (_, Operator::Identity) => Ok(BeamformerWeights::identity(m)),
            (_, Operator::Zero) => BeamformerWeights::new(WeightKind::Identity, CMatrix::zeros(m, m)),
            (BeamformerKind::ModPmwf, _) => {
                beamformer::mod_pmwf_approx(self.phi_v_inv(), self.phi_x(), cfg.gamma)
            }
            (BeamformerKind::GevMvdr, _) => beamformer::max_snr(self.phi_v(), &self.u),
            (BeamformerKind::UrMwf, _) => beamformer::ur_mwf(self.phi_x(), self.phi_v()),
            (_, Operator::Uniform) => Ok(BeamformerWeights::scaled_identity(WeightKind::Identity, m)),
            _ => unreachable!("operator and kind disagree"),
        }
    }
}

#[derive(Clone, Debug)]
enum Phase {
    Warmup { acc: Vec<CMatrix>, count: usize },
    Running(Vec<BinState>),
}

/// Per-frame wall-clock statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub frames: usize,
    pub channels: usize,
    pub bins: usize,
    pub hop_ms: f64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    /// Frames whose processing took longer than one hop.
    pub frames_over_budget: usize,
    /// Processing time divided by signal duration.
    pub real_time_factor: f64,
}

impl TimingReport {
    pub fn from_durations(durations_s: &[f64], channels: usize, bins: usize, hop_s: f64) -> Self {
        let frames = durations_s.len();
        let mut sorted = durations_s.to_vec();
        sorted.sort_by(f64::total_cmp);
        let pct = |p: f64| -> f64 {
            if sorted.is_empty() {
                return 0.0;
            }
            let idx = ((p * frames as f64).ceil() as usize).clamp(1, frames) - 1;
            sorted[idx] * 1e3
        };
        let total: f64 = durations_s.iter().sum();
        Self {
            frames,
            channels,
            bins,
            hop_ms: hop_s * 1e3,
            mean_ms: if frames > 0 { total / frames as f64 * 1e3 } else { 0.0 },
            p50_ms: pct(0.5),
            p99_ms: pct(0.99),
            max_ms: sorted.last().copied().unwrap_or(0.0) * 1e3,
            frames_over_budget: durations_s.iter().filter(|&&d| d > hop_s).count(),
            real_time_factor: if frames > 0 { total / (frames as f64 * hop_s) } else { 0.0 },
        }
    }
}

/// Streaming enhancer over STFT frames.
#[derive(Clone, Debug)]
pub struct Enhancer {
    cfg: RunConfig,
    channels: usize,
    bins: usize,
    phase: Phase,
    next_frame: usize,
    first_interior: usize,
    durations: Vec<f64>,
}

impl Enhancer {
    /// `noise_scm` holds one `Φv` per bin. It is required for
    /// `precomputed_from_file` and optional for `online_spp`.
    pub fn new(cfg: RunConfig, channels: usize, noise_scm: Option<Vec<HermitianScm>>) -> Result<Self> {
        cfg.validate()?;
        if channels == 0 {
            return Err(Error::NoChannels);
        }
        let kind = cfg.beamformer;
        if kind.is_multichannel() && channels < 2 {
            return Err(Error::InvalidConfig(format!(
                "{kind} needs at least 2 channels, got {channels}"
            )));
        }
        let bins = cfg.stft.num_bins();
        let first_interior = cfg.stft.window_len / cfg.stft.hop - 1;
        let phase = match noise_scm {
            Some(scms) => Phase::Running(Self::build_bins(&cfg, channels, scms)?),
            None if !kind.is_multichannel() => {
                let scms = vec![HermitianScm::identity(channels); bins];
                Phase::Running(Self::build_bins(&cfg, channels, scms)?)
            }
            None => match cfg.noise_scm_mode {
                NoiseScmMode::PrecomputedFromFile => {
                    return Err(Error::InvalidConfig(
                        "precomputed_from_file needs a noise recording".into(),
                    ))
                }
                NoiseScmMode::OnlineSpp if cfg.warmup_frames < crate::scm::MIN_NOISE_FRAMES => {
                    return Err(Error::InvalidConfig(format!(
                        "online_spp without a noise recording needs warmup_frames >= {}",
                        crate::scm::MIN_NOISE_FRAMES
                    )))
                }
                NoiseScmMode::OnlineSpp => Phase::Warmup {
                    acc: vec![CMatrix::zeros(channels, channels); bins],
                    count: 0,
                },
            },
        };
        Ok(Self {
            cfg,
            channels,
            bins,
            phase,
            next_frame: 0,
            first_interior,
            durations: Vec::new(),
        })
    }

    fn build_bins(cfg: &RunConfig, channels: usize, scms: Vec<HermitianScm>) -> Result<Vec<BinState>> {
        let bins = cfg.stft.num_bins();
        if scms.len() != bins {
            return Err(Error::BinCount {
                expected: bins,
                found: scms.len(),
            });
        }
        if let Some(bad) = scms.iter().find(|s| s.dim() != channels) {
            return Err(Error::ChannelMismatch {
                expected: channels,
                found: bad.dim(),
            });
        }
        let scms = floor_silent_bins(scms)?;
        scms.into_iter()
            .enumerate()
            .map(|(f, phi_v)| BinState::new(cfg, phi_v).map_err(|e| e.at_bin(f)))
            .collect()
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Per-bin state, or `None` while still warming up.
    pub fn bin_states(&self) -> Option<&[BinState]> {
        match &self.phase {
            Phase::Running(b) => Some(b),
            Phase::Warmup { .. } => None,
        }
    }

    pub fn is_warming_up(&self) -> bool {
        matches!(self.phase, Phase::Warmup { .. })
    }

    /// Processes one frame and returns `Wᴴx`.
    pub fn process(&mut self, x: &MultichannelSpectrum) -> Result<MultichannelSpectrum> {
        let mut out = self.process_with_shadows(x, &[])?;
        Ok(out.swap_remove(0))
    }

    /// Processes one frame, returning `Wᴴx` followed by `Wᴴs` for every shadow
    /// spectrum. Shadows never influence the state.
    pub fn process_with_shadows(
        &mut self,
        x: &MultichannelSpectrum,
        shadows: &[&MultichannelSpectrum],
    ) -> Result<Vec<MultichannelSpectrum>> {
        let start = Instant::now();
        self.check_frame(x)?;
        for s in shadows {
            self.check_frame(s)?;
            if s.frame_index != x.frame_index {
                return Err(Error::FrameOrder {
                    expected: x.frame_index,
                    found: s.frame_index,
                });
            }
        }
        if x.frame_index != self.next_frame {
            return Err(Error::FrameOrder {
                expected: self.next_frame,
                found: x.frame_index,
            });
        }
        let inputs: Vec<&MultichannelSpectrum> = std::iter::once(x).chain(shadows.iter().copied()).collect();
        let mut outputs: Vec<MultichannelSpectrum> = inputs
            .iter()
            .map(|s| MultichannelSpectrum::zeros(s.frame_index, self.channels, self.bins))
            .collect();

        self.warmup_step(x)?;
        match &mut self.phase {
            Phase::Warmup { .. } => {
                for (o, s) in outputs.iter_mut().zip(&inputs) {
                    o.as_mut_slice().copy_from_slice(s.as_slice());
                }
            }
            Phase::Running(bins) => {
                let finite = x.is_finite();
                for (f, state) in bins.iter_mut().enumerate() {
                    let xf = x.bin(f);
                    if finite {
                        state.update(&self.cfg, xf).map_err(|e| e.at_bin(f))?;
                    }
                    for (o, s) in outputs.iter_mut().zip(&inputs) {
                        state.apply(s.bin(f), o.bin_mut(f));
                    }
                }
                if !finite {
                    log::warn!("frame {} has non-finite bins; state left unchanged", x.frame_index);
                }
            }
        }
        self.next_frame += 1;
        self.durations.push(start.elapsed().as_secs_f64());
        Ok(outputs)
    }

    fn check_frame(&self, x: &MultichannelSpectrum) -> Result<()> {
        if x.num_channels() != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                found: x.num_channels(),
            });
        }
        if x.num_bins() != self.bins {
            return Err(Error::BinCount {
                expected: self.bins,
                found: x.num_bins(),
            });
        }
        Ok(())
    }

    /// Accumulates warmup statistics; switches to running once enough
    /// full-window frames were seen.
    fn warmup_step(&mut self, x: &MultichannelSpectrum) -> Result<()> {
        let Phase::Warmup { acc, count } = &mut self.phase else {
            return Ok(());
        };
        if x.frame_index < self.first_interior || !x.is_finite() {
            return Ok(());
        }
        for (f, a) in acc.iter_mut().enumerate() {
            let xf = x.bin(f);
            for i in 0..self.channels {
                for j in 0..self.channels {
                    a[(i, j)] += xf[i] * xf[j].conj();
                }
            }
        }
        *count += 1;
        if *count < self.cfg.warmup_frames {
            return Ok(());
        }
        let scale = 1.0 / *count as f64;
        let scms = acc
            .iter()
            .map(|a| HermitianScm::new(a.scale_real(scale)))
            .collect::<Result<Vec<_>>>()?;
        if scms.iter().all(|s| s.trace_real() == 0.0) {
            return Err(Error::SilentInput);
        }
        log::debug!("warmup finished after {} frames", *count);
        self.phase = Phase::Running(Self::build_bins(&self.cfg, self.channels, scms)?);
        Ok(())
    }

    pub fn frames_processed(&self) -> usize {
        self.next_frame
    }

    pub fn timing(&self) -> TimingReport {
        TimingReport::from_durations(
            &self.durations,
            self.channels,
            self.bins,
            self.cfg.stft.hop_duration_s(),
        )
    }

    /// Mean speech presence probability over bins for the last frame.
    pub fn mean_spp(&self) -> Option<f64> {
        match &self.phase {
            Phase::Running(b) if self.cfg.noise_scm_mode == NoiseScmMode::OnlineSpp => {
                Some(b.iter().map(|s| s.q).sum::<f64>() / b.len() as f64)
            }
            _ => None,
        }
    }
}

/// Bins whose noise power is negligible next to the average get a small
/// scaled identity so they stay invertible.
fn floor_silent_bins(scms: Vec<HermitianScm>) -> Result<Vec<HermitianScm>> {
    let m = scms.first().map(|s| s.dim()).unwrap_or(1) as f64;
    let mean_power = scms.iter().map(|s| s.trace_real()).sum::<f64>() / (scms.len().max(1) as f64 * m);
    if !(mean_power > 0.0 && mean_power.is_finite()) {
        return Err(Error::SilentInput);
    }
    let floor = 1e-10 * mean_power;
    Ok(scms
        .into_iter()
        .map(|s| {
            if s.trace_real() < floor * m {
                HermitianScm::scaled_identity(s.dim(), floor)
            } else {
                s
            }
        })
        .collect())
}

/// Result of a batch run.
#[derive(Clone, Debug)]
pub struct EnhanceOutput {
    /// All `M` output channels, aligned with and as long as the input.
    pub enhanced: MultichannelAudio,
    /// Shadow signals filtered with the same weights, in input order.
    pub shadows: Vec<MultichannelAudio>,
    pub timing: TimingReport,
}

/// Runs the enhancer over a whole signal. `shadows` (for example the desired
/// and interference components of a simulated scene) are filtered with the
/// weights driven by `audio`.
pub fn enhance(
    audio: &MultichannelAudio,
    cfg: &RunConfig,
    noise_scm: Option<Vec<HermitianScm>>,
    shadows: &[&MultichannelAudio],
) -> Result<EnhanceOutput> {
    for s in shadows {
        audio.check_compatible(s)?;
    }
    let mut enh = Enhancer::new(cfg.clone(), audio.num_channels(), noise_scm)?;
    let frames = analyze(audio, &cfg.stft)?;
    let shadow_frames = shadows
        .iter()
        .map(|s| analyze(s, &cfg.stft))
        .collect::<Result<Vec<_>>>()?;
    let mut outs: Vec<Vec<MultichannelSpectrum>> = vec![Vec::with_capacity(frames.len()); shadows.len() + 1];
    for (t, x) in frames.iter().enumerate() {
        let sh: Vec<&MultichannelSpectrum> = shadow_frames.iter().map(|s| &s[t]).collect();
        for (dst, y) in outs.iter_mut().zip(enh.process_with_shadows(x, &sh)?) {
            dst.push(y);
        }
    }
    let mut signals = outs
        .iter()
        .map(|o| {
            let mut a = synthesize(o, &cfg.stft)?;
            a.truncate(audio.len());
            Ok(a)
        })
        .collect::<Result<Vec<_>>>()?;
    let enhanced = signals.remove(0);
    Ok(EnhanceOutput {
        enhanced,
        shadows: signals,
        timing: enh.timing(),
    })
}

/// Sample-in, sample-out wrapper: analysis, enhancement and synthesis one
/// hop at a time.
pub struct StreamingEnhancer {
    analyzer: StreamingAnalyzer,
    enhancer: Enhancer,
    synthesizer: StreamingSynthesizer,
}

impl StreamingEnhancer {
    pub fn new(cfg: RunConfig, channels: usize, noise_scm: Option<Vec<HermitianScm>>) -> Result<Self> {
        Ok(Self {
            analyzer: StreamingAnalyzer::new(cfg.stft, channels)?,
            synthesizer: StreamingSynthesizer::new(cfg.stft, channels)?,
            enhancer: Enhancer::new(cfg, channels, noise_scm)?,
        })
    }

    /// Consumes one hop per channel and emits one hop per channel, delayed by
    /// `window_len − hop` samples.
    pub fn push(&mut self, hop: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let x = self.analyzer.push(hop)?;
        let y = self.enhancer.process(&x)?;
        self.synthesizer.push(&y)
    }

    pub fn enhancer(&self) -> &Enhancer {
        &self.enhancer
    }
}

/// `‖a − b‖ / ‖b‖` over all bins; used by tests comparing spectra.
pub fn relative_spectrum_error(a: &MultichannelSpectrum, b: &MultichannelSpectrum) -> f64 {
    let diff: Vec<C64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y).collect();
    vec_norm(&diff) / vec_norm(b.as_slice()).max(1e-300)
}
