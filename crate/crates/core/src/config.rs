use serde::{Deserialize, Serialize};

use crate::beamformer::TradeoffGamma;
use crate::error::{Error, Result};
use crate::scm::{InterferenceTracker, SppModel};
use crate::stft::StftConfig;

/// Which online beamformer the enhancer runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeamformerKind {
    #[default]
    ModPmwf,
    GevMvdr,
    UrMwf,
    /// `W = I`; output equals input up to the STFT round trip.
    Identity,
    /// `W = 0`; a reference point for the metrics.
    Zero,
}

impl BeamformerKind {
    pub const ALL: [BeamformerKind; 5] = [
        BeamformerKind::ModPmwf,
        BeamformerKind::GevMvdr,
        BeamformerKind::UrMwf,
        BeamformerKind::Identity,
        BeamformerKind::Zero,
    ];

    pub fn default_beta(self) -> f64 {
        match self {
            BeamformerKind::UrMwf => 0.99,
            _ => 0.85,
        }
    }

    /// Whether the kind spatially filters, and so needs `M ≥ 2` and a noise model.
    pub fn is_multichannel(self) -> bool {
        matches!(
            self,
            BeamformerKind::ModPmwf | BeamformerKind::GevMvdr | BeamformerKind::UrMwf
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            BeamformerKind::ModPmwf => "mod-pmwf",
            BeamformerKind::GevMvdr => "gev-mvdr",
            BeamformerKind::UrMwf => "ur-mwf",
            BeamformerKind::Identity => "identity",
            BeamformerKind::Zero => "zero",
        }
    }
}

impl std::fmt::Display for BeamformerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BeamformerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BeamformerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown beamformer '{s}'")))
    }
}

/// Source of the interference SCM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScmMode {
    /// Fixed `Φv` averaged from a separate noise-only recording.
    #[default]
    PrecomputedFromFile,
    /// `Φv` tracked online, gated by speech presence. Seeded from the noise
    /// recording when one is given, otherwise from the first frames.
    OnlineSpp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub beamformer: BeamformerKind,
    pub gamma: TradeoffGamma,
    /// Forgetting factor for `Φx`; `None` picks the per-kind default.
    pub beta: Option<f64>,
    pub alpha: f64,
    pub noise_scm_mode: NoiseScmMode,
    pub stft: StftConfig,
    pub power_iters: usize,
    pub spp: SppModel,
    /// Frames averaged into the initial `Φv` when running online without a
    /// noise recording. The output passes through unchanged meanwhile.
    pub warmup_frames: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            beamformer: BeamformerKind::default(),
            gamma: TradeoffGamma::ZERO,
            beta: None,
            alpha: InterferenceTracker::DEFAULT_ALPHA,
            noise_scm_mode: NoiseScmMode::default(),
            stft: StftConfig::default(),
            power_iters: 1,
            spp: SppModel::default(),
            warmup_frames: 50,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn for_kind(kind: BeamformerKind) -> Self {
        Self {
            beamformer: kind,
            ..Self::default()
        }
    }

    pub fn effective_beta(&self) -> f64 {
        self.beta.unwrap_or_else(|| self.beamformer.default_beta())
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        let beta = self.effective_beta();
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidForgetting(beta));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidForgetting(self.alpha));
        }
        TradeoffGamma::new(self.gamma.value())?;
        if self.power_iters == 0 {
            return Err(Error::InvalidConfig("power_iters must be at least 1".into()));
        }
        if !(self.spp.prior > 0.0 && self.spp.prior < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "spp prior must lie in (0, 1), got {}",
                self.spp.prior
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            Error::InvalidConfig(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}
