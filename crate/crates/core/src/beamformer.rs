//! Per-frequency beamformer weight matrices.
//!
//! Every formula returns the full `M×M` matrix `W`, applied as `y = Wᴴ·x` so
//! that column `m` of `W` produces the estimate at microphone `m`. All of them
//! are built from a fixed interference SCM `Φv` (passed as its inverse where
//! the formula only needs `Φv⁻¹`) and a desired or captured SCM.
//!
//! * Mod-PMWF: `Φv⁻¹Φd / (γ + tr{Φv⁻¹Φd})` with the SCM of the whole desired
//!   mixture. It equals a power-weighted sum of per-source MVDRs.
//! * Approximate Mod-PMWF: the same with the captured-signal SCM `Φx` in place
//!   of `Φd`; this is what runs online.
//! * GEV-MVDR: `u·uᴴΦv / tr{u·uᴴΦv}` with `u` the dominant generalized
//!   eigenvector of `(Φx, Φv)`.
//! * UR-MWF: `Φx⁻¹(Φx − Φv)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    dot, power_iteration, solve_hpd, trace_of_product, CMatrix, HermitianScm, C64,
};

/// Below this, `γ + λ` is treated as zero (silent frame).
pub const DEGENERATE_LAMBDA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    ModPmwfApprox,
    ModPmwfExact,
    PmwfSingle,
    MvdrPerSource,
    GevMvdr,
    MaxSnr,
    UrMwf,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamformerWeights {
    pub kind: WeightKind,
    w: CMatrix,
    /// The formula hit a silent or degenerate frame and a fallback was used.
    pub degenerate: bool,
    /// `pmwf_single` was given an SCM that is not numerically rank one.
    pub rank_warning: bool,
}

impl BeamformerWeights {
    pub fn new(kind: WeightKind, w: CMatrix) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::ShapeMismatch {
                expected: (w.rows(), w.rows()),
                found: w.shape(),
            });
        }
        if !w.is_finite() {
            return Err(Error::Degenerate("non-finite beamformer weights"));
        }
        Ok(Self {
            kind,
            w,
            degenerate: false,
            rank_warning: false,
        })
    }

    pub fn identity(m: usize) -> Self {
        Self {
            kind: WeightKind::Identity,
            w: CMatrix::identity(m),
            degenerate: false,
            rank_warning: false,
        }
    }

    /// `I/M`, the fallback for silent frames.
    pub fn scaled_identity(kind: WeightKind, m: usize) -> Self {
        Self {
            kind,
            w: CMatrix::identity(m).scale_real(1.0 / m as f64),
            degenerate: true,
            rank_warning: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.w
    }

    /// `y = Wᴴ·x`.
    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        apply(self, x)
    }
}

/// Speech-distortion tradeoff weight `γ ≥ 0`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TradeoffGamma(f64);

impl TradeoffGamma {
    pub const ZERO: TradeoffGamma = TradeoffGamma(0.0);

    pub fn new(gamma: f64) -> Result<Self> {
        if gamma.is_finite() && gamma >= 0.0 {
            Ok(Self(gamma))
        } else {
            Err(Error::InvalidConfig(format!("gamma must be >= 0, got {gamma}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TradeoffGamma {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TradeoffGamma> for f64 {
    fn from(g: TradeoffGamma) -> f64 {
        g.0
    }
}

fn check_square(a: &CMatrix, m: usize) -> Result<()> {
    if a.shape() != (m, m) {
        return Err(Error::ShapeMismatch {
            expected: (m, m),
            found: a.shape(),
        });
    }
    Ok(())
}

/// `Φv⁻¹·Φ / (γ + tr{Φv⁻¹Φ})`, falling back to `I/M` when the denominator
/// vanishes.
fn normalized_pencil(
    kind: WeightKind,
    phi_v_inv: &CMatrix,
    phi: &CMatrix,
    gamma: TradeoffGamma,
) -> Result<BeamformerWeights> {
    let m = phi.rows();
    check_square(phi, m)?;
    check_square(phi_v_inv, m)?;
    let p = phi_v_inv.matmul(phi)?;
    let lambda = p.trace().re;
    let denom = gamma.value() + lambda;
    if !(denom.is_finite() && denom >= DEGENERATE_LAMBDA) {
        return Ok(BeamformerWeights::scaled_identity(kind, m));
    }
    BeamformerWeights::new(kind, p.scale_real(1.0 / denom))
}

/// Approximate Mod-PMWF from the captured-signal SCM.
pub fn mod_pmwf_approx(
    phi_v_inv: &CMatrix,
    phi_x: &HermitianScm,
    gamma: TradeoffGamma,
) -> Result<BeamformerWeights> {
    normalized_pencil(WeightKind::ModPmwfApprox, phi_v_inv, phi_x, gamma)
}

/// Mod-PMWF from the SCM of the desired mixture.
pub fn mod_pmwf_exact(
    phi_v_inv: &CMatrix,
    phi_d: &HermitianScm,
    gamma: TradeoffGamma,
) -> Result<BeamformerWeights> {
    normalized_pencil(WeightKind::ModPmwfExact, phi_v_inv, phi_d, gamma)
}

/// MVDR for one source: `Φv⁻¹Φd⁽ⁿ⁾ / tr{Φv⁻¹Φd⁽ⁿ⁾}`. Distortionless for a
/// rank-1 `Φd⁽ⁿ⁾ = σ²·h·hᴴ`.
pub fn per_source_mvdr(phi_v_inv: &CMatrix, phi_d_n: &HermitianScm) -> Result<BeamformerWeights> {
    let m = phi_d_n.dim();
    check_square(phi_v_inv, m)?;
    let p = phi_v_inv.matmul(phi_d_n)?;
    let lambda = p.trace().re;
    if !(lambda > DEGENERATE_LAMBDA) {
        return Err(Error::SilentSource { index: 0, lambda });
    }
    BeamformerWeights::new(WeightKind::MvdrPerSource, p.scale_real(1.0 / lambda))
}

/// Per-source weights `μₙ = λ⁽ⁿ⁾ / (γ + Σλ⁽ⁿ⁾)` of the MVDR decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub mu: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub lambda_total: f64,
}

pub fn decomposition_weights(
    phi_v_inv: &CMatrix,
    phi_d_list: &[HermitianScm],
    gamma: TradeoffGamma,
) -> Result<Decomposition> {
    let lambdas = phi_d_list
        .iter()
        .map(|phi| trace_of_product(phi_v_inv, phi))
        .collect::<Result<Vec<f64>>>()?;
    if let Some((index, &lambda)) = lambdas.iter().enumerate().find(|(_, l)| **l < 0.0) {
        return Err(Error::SilentSource { index, lambda });
    }
    let lambda_total: f64 = lambdas.iter().sum();
    if !(lambda_total > DEGENERATE_LAMBDA) {
        return Err(Error::AllSourcesSilent);
    }
    let denom = gamma.value() + lambda_total;
    Ok(Decomposition {
        mu: lambdas.iter().map(|l| l / denom).collect(),
        lambdas,
        lambda_total,
    })
}

/// Single-source PMWF `Φv⁻¹Φd⁽¹⁾ / (γ + λd)`. Reduces to MVDR at `γ = 0` and to
/// the multichannel Wiener filter at `γ = 1`.
pub fn pmwf_single(
    phi_v_inv: &CMatrix,
    phi_d1: &HermitianScm,
    gamma: TradeoffGamma,
) -> Result<BeamformerWeights> {
    let mut out = normalized_pencil(WeightKind::PmwfSingle, phi_v_inv, phi_d1, gamma)?;
    if !is_numerically_rank_one(phi_d1) {
        log::warn!("pmwf_single: desired SCM is not rank one; the PMWF identity does not hold");
        out.rank_warning = true;
    }
    Ok(out)
}

/// Second eigenvalue below 1e-6 of the first, judged from `tr(A)` and `‖A‖F`:
/// for PSD `A`, `(tr² − ‖A‖F²)/2 = Σ_{i<j} λᵢλⱼ ≥ λ₁λ₂`.
fn is_numerically_rank_one(a: &HermitianScm) -> bool {
    let t = a.trace_real();
    if !(t > 0.0) {
        return false;
    }
    let f2 = a.frobenius_norm().powi(2);
    let e2 = ((t * t - f2) / 2.0).max(0.0);
    e2 / (t * t) < 1e-6
}

/// GEV-MVDR with a warm-started power iteration. Returns the weights and the
/// updated eigenvector estimate.
pub fn gev_mvdr(
    phi_v: &HermitianScm,
    phi_v_inv: &CMatrix,
    phi_x: &HermitianScm,
    u_prev: &[C64],
    iters: usize,
) -> Result<(BeamformerWeights, Vec<C64>)> {
    let m = phi_v.dim();
    check_square(phi_x, m)?;
    let it = power_iteration(phi_v_inv, phi_x, u_prev, iters)?;
    let u = it.u;
    let uu = CMatrix::outer(&u, &u);
    let num = uu.matmul(phi_v)?;
    let denom = num.trace().re;
    if !(denom > 0.0 && denom.is_finite()) {
        return Ok((BeamformerWeights::scaled_identity(WeightKind::GevMvdr, m), u));
    }
    let mut w = BeamformerWeights::new(WeightKind::GevMvdr, num.scale_real(1.0 / denom))?;
    w.degenerate = it.degenerate;
    Ok((w, u))
}

/// MaxSNR realization `u·bᴴ` with `b = Φv·u / tr{u·uᴴΦv}`.
pub fn max_snr(phi_v: &HermitianScm, u: &[C64]) -> Result<BeamformerWeights> {
    let m = phi_v.dim();
    if u.len() != m {
        return Err(Error::ShapeMismatch {
            expected: (m, 1),
            found: (u.len(), 1),
        });
    }
    let b = phi_v.matvec(u)?;
    let denom = dot(u, &b).re;
    if !(denom > 0.0 && denom.is_finite()) {
        return Ok(BeamformerWeights::scaled_identity(WeightKind::MaxSnr, m));
    }
    let b: Vec<C64> = b.iter().map(|v| v / denom).collect();
    BeamformerWeights::new(WeightKind::MaxSnr, CMatrix::outer(u, &b))
}

/// UR-MWF `Φx⁻¹(Φx − Φv)`.
pub fn ur_mwf(phi_x: &HermitianScm, phi_v: &HermitianScm) -> Result<BeamformerWeights> {
    let m = phi_x.dim();
    check_square(phi_v, m)?;
    let rhs = phi_x.sub(phi_v)?;
    BeamformerWeights::new(WeightKind::UrMwf, solve_hpd(phi_x, &rhs)?)
}

/// `η = λd / (γ + λd)`, the gain that maps the `γ = 0` Mod-PMWF onto the
/// `γ > 0` one.
pub fn eta_factor(lambda_d: f64, gamma: TradeoffGamma) -> f64 {
    if gamma.value() == 0.0 {
        return 1.0;
    }
    lambda_d / (gamma.value() + lambda_d)
}

/// `y = Wᴴ·x`.
pub fn apply(weights: &BeamformerWeights, x: &[C64]) -> Result<Vec<C64>> {
    let m = weights.dim();
    if x.len() != m {
        return Err(Error::ShapeMismatch {
            expected: (m, 1),
            found: (x.len(), 1),
        });
    }
    let mut y = vec![C64::new(0.0, 0.0); m];
    weights.w.adjoint_matvec_into(x, &mut y);
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::invert_hpd;
    use crate::testkit::{random_hpd, random_rank1, random_vector, rng};

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn close(a: &CMatrix, b: &CMatrix, tol: f64) -> bool {
        a.sub(b).unwrap().max_abs() <= tol * b.max_abs().max(1e-300)
    }

    #[test]
    fn approx_with_noise_only_is_scaled_identity() {
        let mut r = rng(1);
        let phi_v = random_hpd(&mut r, 4);
        let inv = invert_hpd(&phi_v).unwrap();
        let w = mod_pmwf_approx(&inv, &phi_v, TradeoffGamma::ZERO).unwrap();
        assert!(close(w.matrix(), &CMatrix::identity(4).scale_real(0.25), 1e-10));
        assert!(!w.degenerate);
    }

    #[test]
    fn scalar_case_cancels() {
        let inv = CMatrix::from_diagonal(&[1.0 / 3.0]);
        let phi_x = HermitianScm::from_diagonal(&[7.5]);
        let w = mod_pmwf_approx(&inv, &phi_x, TradeoffGamma::ZERO).unwrap();
        assert!((w.matrix()[(0, 0)] - c(1.0)).norm() < 1e-15);
    }

    #[test]
    fn silent_frame_falls_back_to_scaled_identity() {
        let w = mod_pmwf_approx(&CMatrix::identity(3), &HermitianScm::zeros(3), TradeoffGamma::ZERO)
            .unwrap();
        assert!(w.degenerate);
        assert!(close(w.matrix(), &CMatrix::identity(3).scale_real(1.0 / 3.0), 0.0));
    }

    #[test]
    fn exact_gamma_scaling_matches_eta() {
        let mut r = rng(2);
        let inv = invert_hpd(&random_hpd(&mut r, 3)).unwrap();
        let phi_d = random_hpd(&mut r, 3);
        let w0 = mod_pmwf_exact(&inv, &phi_d, TradeoffGamma::ZERO).unwrap();
        let lambda = trace_of_product(&inv, &phi_d).unwrap();
        for g in [0.1, 1.0, 10.0] {
            let gamma = TradeoffGamma::new(g).unwrap();
            let wg = mod_pmwf_exact(&inv, &phi_d, gamma).unwrap();
            let scaled = w0.matrix().scale_real(eta_factor(lambda, gamma));
            assert!(close(wg.matrix(), &scaled, 1e-12));
        }
    }

    #[test]
    fn mvdr_identity_steering() {
        let h = [c(1.0), c(0.0)];
        let w = per_source_mvdr(&CMatrix::identity(2), &HermitianScm::outer(&h)).unwrap();
        assert!(close(w.matrix(), &CMatrix::outer(&h, &h), 0.0));
        let y = w.apply(&h).unwrap();
        assert_eq!(y, h.to_vec());
    }

    #[test]
    fn mvdr_is_distortionless_and_scale_free() {
        let mut r = rng(3);
        for _ in 0..100 {
            let inv = invert_hpd(&random_hpd(&mut r, 5)).unwrap();
            let (phi_d, h, _) = random_rank1(&mut r, 5);
            let w = per_source_mvdr(&inv, &phi_d).unwrap();
            let y = w.apply(&h).unwrap();
            let err: f64 = y.iter().zip(&h).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10 * crate::linalg::vec_norm(&h));
            let w2 = per_source_mvdr(&inv, &phi_d.scaled(37.0)).unwrap();
            assert!(close(w2.matrix(), w.matrix(), 1e-12));
        }
    }

    #[test]
    fn mvdr_rejects_silent_source() {
        let err = per_source_mvdr(&CMatrix::identity(2), &HermitianScm::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::SilentSource { .. }));
    }

    #[test]
    fn decomposition_weight_examples() {
        let inv = CMatrix::identity(2);
        let one = HermitianScm::outer(&[c(1.0), c(1.0)]);
        let d = decomposition_weights(&inv, std::slice::from_ref(&one), TradeoffGamma::ZERO).unwrap();
        assert!((d.mu[0] - 1.0).abs() < 1e-15);

        let other = HermitianScm::outer(&[c(1.0), c(-1.0)]);
        let d = decomposition_weights(&inv, &[one.clone(), other.clone()], TradeoffGamma::ZERO).unwrap();
        assert_eq!(d.mu, vec![0.5, 0.5]);

        let gamma = TradeoffGamma::new(d.lambda_total).unwrap();
        let d = decomposition_weights(&inv, &[one, other], gamma).unwrap();
        assert!((d.mu.iter().sum::<f64>() - 0.5).abs() < 1e-15);

        assert!(matches!(
            decomposition_weights(&inv, &[HermitianScm::zeros(2)], TradeoffGamma::ZERO),
            Err(Error::AllSourcesSilent)
        ));
    }

    #[test]
    fn pmwf_matches_mvdr_at_gamma_zero_and_wiener_at_gamma_one() {
        let mut r = rng(4);
        let inv = invert_hpd(&random_hpd(&mut r, 4)).unwrap();
        let (phi_d, _, _) = random_rank1(&mut r, 4);
        let p = pmwf_single(&inv, &phi_d, TradeoffGamma::ZERO).unwrap();
        let mvdr = per_source_mvdr(&inv, &phi_d).unwrap();
        assert!(close(p.matrix(), mvdr.matrix(), 1e-14));
        assert!(!p.rank_warning);

        let (pd, pv) = (3.0, 0.5);
        let w = pmwf_single(
            &CMatrix::from_diagonal(&[1.0 / pv]),
            &HermitianScm::from_diagonal(&[pd]),
            TradeoffGamma::new(1.0).unwrap(),
        )
        .unwrap();
        assert!((w.matrix()[(0, 0)].re - pd / (pd + pv)).abs() < 1e-15);
    }

    #[test]
    fn pmwf_warns_on_full_rank_desired() {
        let mut r = rng(5);
        let p = pmwf_single(&CMatrix::identity(3), &random_hpd(&mut r, 3), TradeoffGamma::ZERO).unwrap();
        assert!(p.rank_warning);
    }

    #[test]
    fn gev_diagonal_example_and_trace() {
        let phi_v = HermitianScm::identity(2);
        let phi_x = HermitianScm::from_diagonal(&[4.0, 1.0]);
        let (w, u) = gev_mvdr(&phi_v, &CMatrix::identity(2), &phi_x, &[c(1.0), c(0.0)], 1).unwrap();
        assert_eq!(u, vec![c(1.0), c(0.0)]);
        assert!(close(w.matrix(), &CMatrix::from_diagonal(&[1.0, 0.0]), 0.0));

        let mut r = rng(6);
        let phi_v = random_hpd(&mut r, 4);
        let inv = invert_hpd(&phi_v).unwrap();
        let (w, u) = gev_mvdr(&phi_v, &inv, &random_hpd(&mut r, 4), &random_vector(&mut r, 4), 3).unwrap();
        assert!((w.matrix().trace() - c(1.0)).norm() < 1e-10);
        let ms = max_snr(&phi_v, &u).unwrap();
        assert!(close(w.matrix(), ms.matrix(), 1e-12));
    }

    #[test]
    fn ur_mwf_limits() {
        let mut r = rng(7);
        let phi_x = random_hpd(&mut r, 3);
        let w = ur_mwf(&phi_x, &HermitianScm::zeros(3)).unwrap();
        assert!(close(w.matrix(), &CMatrix::identity(3), 1e-12));
        let w = ur_mwf(&phi_x, &phi_x).unwrap();
        assert!(w.matrix().max_abs() == 0.0);
        let w = ur_mwf(&HermitianScm::from_diagonal(&[5.0]), &HermitianScm::from_diagonal(&[2.0])).unwrap();
        assert!((w.matrix()[(0, 0)].re - 0.6).abs() < 1e-15);
    }

    #[test]
    fn eta_examples() {
        assert_eq!(eta_factor(3.0, TradeoffGamma::ZERO), 1.0);
        assert_eq!(eta_factor(3.0, TradeoffGamma::new(3.0).unwrap()), 0.5);
        assert_eq!(eta_factor(0.0, TradeoffGamma::new(2.0).unwrap()), 0.0);
        assert!(TradeoffGamma::new(-1.0).is_err());
    }

    #[test]
    fn apply_examples() {
        let mut r = rng(8);
        let x = random_vector(&mut r, 3);
        assert_eq!(BeamformerWeights::identity(3).apply(&x).unwrap(), x);
        let zero = BeamformerWeights::new(WeightKind::UrMwf, CMatrix::zeros(3, 3)).unwrap();
        assert!(zero.apply(&x).unwrap().iter().all(|v| v.norm() == 0.0));
        assert!(zero.apply(&x[..2]).is_err());

        let w = CMatrix::from_row_major(3, 3, random_vector(&mut r, 9)).unwrap();
        let bw = BeamformerWeights::new(WeightKind::ModPmwfApprox, w.clone()).unwrap();
        let y = bw.apply(&x).unwrap();
        for j in 0..3 {
            let mut naive = c(0.0);
            for i in 0..3 {
                naive += w[(i, j)].conj() * x[i];
            }
            assert!((y[j] - naive).norm() < 1e-14);
        }
    }
}
