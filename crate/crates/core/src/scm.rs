//! Online spatial-covariance estimation.
//!
//! [`ScmTracker`] is the exponentially-forgotten captured-signal SCM
//! `Φx,t = β·Φx,t−1 + (1−β)·x·xᴴ`, optionally co-tracking its inverse and
//! log-determinant in `O(M²)` per frame. [`InterferenceTracker`] is the
//! interference SCM whose forgetting factor is pushed towards one while
//! speech is present, `α' = α + (1−α)·q`.

use serde::{Deserialize, Serialize};

use crate::audio::MultichannelAudio;
use crate::error::{Error, Result};
use crate::linalg::{rank1_inverse_update_with_log_det, Cholesky, HermitianScm, C64};
use crate::stft::{analyze, MultichannelSpectrum, StftConfig};

/// Frames between full re-inversions of a tracked inverse.
pub const REINVERT_INTERVAL: u64 = 1000;

/// Minimum interior frames required by [`init_from_noise`].
pub const MIN_NOISE_FRAMES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    /// `x` contained NaN or Inf; the tracker is unchanged.
    SkippedNonFinite,
    /// Effective forgetting factor of one; the tracker is unchanged.
    Frozen,
}

#[derive(Clone, Debug)]
struct TrackedInverse {
    inv: HermitianScm,
    log_det: f64,
}

impl TrackedInverse {
    fn from_phi(phi: &HermitianScm) -> Result<Self> {
        let chol = Cholesky::new(phi)?;
        Ok(Self {
            inv: chol.inverse(),
            log_det: chol.log_det(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ScmTracker {
    beta: f64,
    phi: HermitianScm,
    inverse: Option<TrackedInverse>,
    updates: u64,
    skipped: u64,
    inverse_failures: u64,
}

impl ScmTracker {
    /// Tracker without inverse; `β ∈ [0, 1]`.
    pub fn new(beta: f64, phi0: HermitianScm) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidForgetting(beta));
        }
        Ok(Self {
            beta,
            phi: phi0,
            inverse: None,
            updates: 0,
            skipped: 0,
            inverse_failures: 0,
        })
    }

    /// Tracker maintaining `Φ⁻¹` and `ln det Φ`; `β ∈ (0, 1]` and `phi0` must
    /// be positive definite.
    pub fn with_inverse(beta: f64, phi0: HermitianScm) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidForgetting(beta));
        }
        let inverse = Some(TrackedInverse::from_phi(&phi0)?);
        Ok(Self {
            inverse,
            ..Self::new(beta, phi0)?
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn phi(&self) -> &HermitianScm {
        &self.phi
    }

    pub fn inverse(&self) -> Option<&HermitianScm> {
        self.inverse.as_ref().map(|t| &t.inv)
    }

    pub fn log_det(&self) -> Option<f64> {
        self.inverse.as_ref().map(|t| t.log_det)
    }

    pub fn skipped_frames(&self) -> u64 {
        self.skipped
    }

    /// Updates whose inverse could be neither rank-1 updated nor recomputed.
    pub fn inverse_failures(&self) -> u64 {
        self.inverse_failures
    }

    /// `‖Φ·Φ⁻¹ − I‖∞` of the tracked pair.
    pub fn inverse_residual(&self) -> Option<f64> {
        let inv = self.inverse()?;
        let prod = self.phi.matmul(inv).ok()?;
        let m = self.phi.dim();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - C64::new(target, 0.0)).norm());
            }
        }
        Some(worst)
    }

    pub fn update(&mut self, x: &[C64]) -> UpdateOutcome {
        self.update_with_factor(self.beta, x)
    }

    pub(crate) fn update_with_factor(&mut self, factor: f64, x: &[C64]) -> UpdateOutcome {
        debug_assert_eq!(x.len(), self.phi.dim());
        if !x.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            self.skipped += 1;
            log::debug!("skipping non-finite frame in SCM update");
            return UpdateOutcome::SkippedNonFinite;
        }
        if factor >= 1.0 {
            return UpdateOutcome::Frozen;
        }
        self.phi.rank1_blend(factor, x);
        self.updates += 1;
        if self.inverse.is_some() {
            self.update_inverse(factor, x);
        }
        UpdateOutcome::Applied
    }

    fn update_inverse(&mut self, factor: f64, x: &[C64]) {
        let tracked = self.inverse.as_mut().expect("checked by caller");
        let periodic = self.updates % REINVERT_INTERVAL == 0;
        if !periodic {
            if let Ok(up) = rank1_inverse_update_with_log_det(&tracked.inv, x, factor) {
                if up.inverse.is_finite() && up.log_det_delta.is_finite() {
                    tracked.inv = up.inverse;
                    tracked.log_det += up.log_det_delta;
                    return;
                }
            }
        }
        match TrackedInverse::from_phi(&self.phi) {
            Ok(fresh) => *tracked = fresh,
            Err(_) => {
                // keep the last good inverse
                self.inverse_failures += 1;
            }
        }
    }
}

/// Interference SCM gated by speech presence.
#[derive(Clone, Debug)]
pub struct InterferenceTracker {
    alpha: f64,
    inner: ScmTracker,
    q_last: f64,
}

impl InterferenceTracker {
    pub const DEFAULT_ALPHA: f64 = 0.9998;

    pub fn new(alpha: f64, phi_v0: HermitianScm) -> Result<Self> {
        Ok(Self {
            alpha,
            inner: ScmTracker::with_inverse(alpha, phi_v0)?,
            q_last: 0.0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `α' = α + (1−α)·q`.
    pub fn effective_factor(&self, q: f64) -> f64 {
        (self.alpha + (1.0 - self.alpha) * q).clamp(self.alpha, 1.0)
    }

    pub fn phi_v(&self) -> &HermitianScm {
        self.inner.phi()
    }

    pub fn phi_v_inv(&self) -> &HermitianScm {
        self.inner.inverse().expect("interference tracker always tracks its inverse")
    }

    pub fn log_det(&self) -> f64 {
        self.inner.log_det().expect("interference tracker always tracks its inverse")
    }

    pub fn q_last(&self) -> f64 {
        self.q_last
    }

    pub fn tracker(&self) -> &ScmTracker {
        &self.inner
    }

    pub fn update(&mut self, x: &[C64], q: f64) -> Result<UpdateOutcome> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidConfig(format!(
                "speech presence probability {q} outside [0, 1]"
            )));
        }
        let outcome = if q >= 1.0 {
            UpdateOutcome::Frozen
        } else {
            self.inner.update_with_factor(self.effective_factor(q), x)
        };
        if outcome != UpdateOutcome::SkippedNonFinite {
            self.q_last = q;
        }
        Ok(outcome)
    }
}

/// Gaussian likelihood-ratio speech presence model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SppModel {
    /// A-priori probability of speech presence.
    pub prior: f64,
}

impl Default for SppModel {
    fn default() -> Self {
        Self { prior: 0.2 }
    }
}

impl SppModel {
    pub const NEUTRAL: SppModel = SppModel { prior: 0.5 };

    /// Posterior presence probability from `ln Λ`, the log-likelihood ratio
    /// of `N(0, Φx)` against `N(0, Φv)`. The log-odds are clamped to
    /// `[−30, 30]` before exponentiation.
    pub fn posterior(&self, log_glr: f64) -> f64 {
        let prior_odds = (self.prior / (1.0 - self.prior)).ln();
        let log_odds = (log_glr + prior_odds).clamp(-30.0, 30.0);
        1.0 / (1.0 + (-log_odds).exp())
    }
}

/// Sufficient statistics of the log-likelihood ratio
/// `ln Λ = ln det Φv − ln det Φx + xᴴΦv⁻¹x − xᴴΦx⁻¹x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlrStatistics {
    pub log_det_v: f64,
    pub log_det_x: f64,
    pub quad_v: f64,
    pub quad_x: f64,
}

impl GlrStatistics {
    pub fn log_glr(&self) -> f64 {
        self.log_det_v - self.log_det_x + self.quad_v - self.quad_x
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SppEstimate {
    pub q: f64,
    /// Φx could not be factored; `q` is the prior.
    pub degenerate: bool,
}

/// Speech presence probability of `x` under the interference model `Φv` and
/// the captured-signal model `Φx`.
pub fn spp_estimate(
    x: &[C64],
    phi_v_inv: &HermitianScm,
    phi_x: &HermitianScm,
    model: SppModel,
) -> Result<SppEstimate> {
    let m = x.len();
    if phi_v_inv.dim() != m || phi_x.dim() != m {
        return Err(Error::ShapeMismatch {
            expected: (m, m),
            found: phi_x.shape(),
        });
    }
    let degenerate = SppEstimate {
        q: model.prior,
        degenerate: true,
    };
    let chol_x = match Cholesky::new(phi_x) {
        Ok(c) => c,
        Err(_) => return Ok(degenerate),
    };
    let chol_vinv = match Cholesky::new(phi_v_inv) {
        Ok(c) => c,
        Err(_) => return Ok(degenerate),
    };
    let mut sx = x.to_vec();
    chol_x.solve_vec_in_place(&mut sx);
    let stats = GlrStatistics {
        log_det_v: -chol_vinv.log_det(),
        log_det_x: chol_x.log_det(),
        quad_v: phi_v_inv.quadratic_form(x),
        quad_x: x.iter().zip(&sx).map(|(a, b)| (a.conj() * b).re).sum(),
    };
    Ok(SppEstimate {
        q: model.posterior(stats.log_glr()),
        degenerate: false,
    })
}

/// [`spp_estimate`] from already-tracked inverses and log-determinants, in
/// `O(M²)`.
pub fn spp_from_inverses(
    x: &[C64],
    phi_v_inv: &HermitianScm,
    log_det_v: f64,
    phi_x_inv: &HermitianScm,
    log_det_x: f64,
    model: SppModel,
) -> SppEstimate {
    let stats = GlrStatistics {
        log_det_v,
        log_det_x,
        quad_v: phi_v_inv.quadratic_form(x),
        quad_x: phi_x_inv.quadratic_form(x),
    };
    let llr = stats.log_glr();
    if !llr.is_finite() {
        return SppEstimate {
            q: model.prior,
            degenerate: true,
        };
    }
    SppEstimate {
        q: model.posterior(llr),
        degenerate: false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SilentNoise {
    #[default]
    Reject,
    AllowZero,
}

/// Per-bin time average of `x·xᴴ` over the given frames.
pub fn average_outer_products(frames: &[MultichannelSpectrum]) -> Result<Vec<HermitianScm>> {
    let first = frames.first().ok_or(Error::InsufficientData {
        found: 0,
        required: 1,
    })?;
    let (m, bins) = (first.num_channels(), first.num_bins());
    let mut acc = vec![crate::linalg::CMatrix::zeros(m, m); bins];
    for frame in frames {
        if frame.num_channels() != m {
            return Err(Error::ChannelMismatch {
                expected: m,
                found: frame.num_channels(),
            });
        }
        if frame.num_bins() != bins {
            return Err(Error::BinCount {
                expected: bins,
                found: frame.num_bins(),
            });
        }
        for (f, a) in acc.iter_mut().enumerate() {
            let x = frame.bin(f);
            for i in 0..m {
                for j in 0..m {
                    a[(i, j)] += x[i] * x[j].conj();
                }
            }
        }
    }
    let scale = 1.0 / frames.len() as f64;
    acc.into_iter()
        .map(|a| HermitianScm::new(a.scale_real(scale)))
        .collect()
}

/// Per-bin interference SCMs from a noise-only recording, averaged over the
/// frames whose window lies entirely inside the signal.
pub fn init_from_noise(
    audio: &MultichannelAudio,
    cfg: &StftConfig,
    silent: SilentNoise,
) -> Result<Vec<HermitianScm>> {
    let frames = analyze(audio, cfg)?;
    let first_interior = cfg.window_len / cfg.hop - 1;
    let end = (audio.len() / cfg.hop).min(frames.len());
    let interior = if end > first_interior {
        &frames[first_interior..end]
    } else {
        &frames[..0]
    };
    if interior.len() < MIN_NOISE_FRAMES {
        return Err(Error::InsufficientData {
            found: interior.len(),
            required: MIN_NOISE_FRAMES,
        });
    }
    let scms = average_outer_products(interior)?;
    if silent == SilentNoise::Reject && scms.iter().all(|s| s.trace_real() == 0.0) {
        return Err(Error::SilentInput);
    }
    Ok(scms)
}
