//! Implementation of the `mixbf` subcommands. `main.rs` only parses
//! arguments and maps errors to exit codes.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mixbf::metrics::{active_segments, component_pass, DEFAULT_DELTA};
use mixbf::scene::render_scene;
use mixbf::scm::{init_from_noise, SilentNoise};
use mixbf::wav::{read_wav, write_wav};
use mixbf::{BeamformerKind, HermitianScm, MetricReport, MultichannelAudio, NoiseScmMode, RunConfig, SceneSpec, TimingReport};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Data {
        context: String,
        #[source]
        source: mixbf::Error,
    },
    /// Missing or malformed input data.
    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data { source: mixbf::Error::InvalidConfig(_), .. } => 1,
            CliError::Data { .. } | CliError::Input(_) => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<mixbf::Error>> Context<T> for std::result::Result<T, E> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| CliError::Data {
            context: what(),
            source: e.into(),
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "mixbf", version, about = "Online beamforming for speech mixtures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a simulated scene (captured mixture plus ground-truth components).
    Simulate(SimulateArgs),
    /// Enhance a recording or a scene directory.
    Enhance(EnhanceArgs),
    /// Score a beamformer on a scene directory.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene spec JSON. Omitted fields take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// Run configuration JSON. Flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub beamformer: Option<BeamformerKind>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// `precomputed_from_file` or `online_spp`.
    #[arg(long, value_parser = parse_mode)]
    pub noise_scm_mode: Option<NoiseScmMode>,
    #[arg(long)]
    pub power_iters: Option<usize>,
}

fn parse_mode(s: &str) -> Result<NoiseScmMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("expected precomputed_from_file or online_spp, got '{s}'"))
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = read_text(p)?;
                RunConfig::from_json(&text).context(|| p.display().to_string())?
            }
            None => RunConfig::default(),
        };
        if let Some(k) = self.beamformer {
            cfg.beamformer = k;
        }
        if let Some(g) = self.gamma {
            cfg.gamma = mixbf::TradeoffGamma::new(g).context(|| "--gamma".into())?;
        }
        if self.beta.is_some() {
            cfg.beta = self.beta;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(m) = self.noise_scm_mode {
            cfg.noise_scm_mode = m;
        }
        if let Some(n) = self.power_iters {
            cfg.power_iters = n;
        }
        cfg.validate().map_err(|e| CliError::Usage(format!("run configuration: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Multichannel WAV, or a directory written by `simulate`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Noise-only recording for the initial interference SCM.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// Timing report JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write every output channel instead of the reference microphone only.
    #[arg(long)]
    pub all_channels: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-segment rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFiles {
    pub captured: String,
    pub desired: String,
    pub interference: String,
    pub late_reverb: String,
    pub noise: String,
    pub noise_reference: String,
    pub per_source_desired: Vec<String>,
}

impl SceneFiles {
    fn for_sources(n: usize) -> Self {
        Self {
            captured: "captured.wav".into(),
            desired: "desired.wav".into(),
            interference: "interference.wav".into(),
            late_reverb: "late_reverb.wav".into(),
            noise: "noise.wav".into(),
            noise_reference: "noise_reference.wav".into(),
            per_source_desired: (0..n).map(|i| format!("desired_source{}.wav", i + 1)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SceneSpec,
    pub sample_rate: u32,
    pub channels: usize,
    pub samples: usize,
    pub rmnr_target_db: Option<f64>,
    pub rmnr_measured_db: Option<f64>,
    /// Window over which the measured RMNR was computed.
    pub rmnr_window: String,
    pub noise_gain: f64,
    pub activity_delta: usize,
    /// Per source, per segment.
    pub activity: Vec<Vec<bool>>,
    /// Direct-path delays in samples, per source and microphone.
    pub direct_delays: Vec<Vec<f64>>,
    pub files: SceneFiles,
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(CliError::Input(format!("{} not found", path.display())));
    }
    let text = read_text(&path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column())))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).context(|| path.display().to_string())
}

fn load(path: &Path) -> CliResult<MultichannelAudio> {
    if !path.is_file() {
        return Err(CliError::Input(format!("{} not found", path.display())));
    }
    read_wav(path).context(|| path.display().to_string())
}

fn save(path: &Path, audio: &MultichannelAudio) -> CliResult<()> {
    write_wav(path, audio).context(|| path.display().to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).context(|| path.display().to_string())
}

pub fn simulate(args: &SimulateArgs) -> CliResult<Manifest> {
    let mut spec = match &args.spec {
        Some(p) => {
            let mut spec = SceneSpec::from_json(&read_text(p)?).context(|| p.display().to_string())?;
            let base = p.parent().unwrap_or(Path::new("."));
            for s in &mut spec.sources {
                if let Some(w) = &s.wav {
                    if w.is_relative() {
                        s.wav = Some(base.join(w));
                    }
                }
            }
            spec
        }
        None => SceneSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let out = render_scene(&spec).context(|| "rendering scene".into())?;
    fs::create_dir_all(&args.out).context(|| args.out.display().to_string())?;
    let files = SceneFiles::for_sources(out.per_source_desired.len());
    let dir = &args.out;
    save(&dir.join(&files.captured), &out.captured)?;
    save(&dir.join(&files.desired), &out.desired)?;
    save(&dir.join(&files.interference), &out.interference)?;
    save(&dir.join(&files.late_reverb), &out.late_reverb)?;
    save(&dir.join(&files.noise), &out.noise)?;
    save(&dir.join(&files.noise_reference), &out.noise_reference)?;
    for (name, d) in files.per_source_desired.iter().zip(&out.per_source_desired) {
        save(&dir.join(name), d)?;
    }
    let manifest = Manifest {
        sample_rate: spec.sample_rate,
        channels: out.captured.num_channels(),
        samples: out.captured.len(),
        rmnr_target_db: spec.rmnr_db,
        rmnr_measured_db: out.rmnr_measured_db,
        rmnr_window: "full-file".into(),
        noise_gain: out.noise_gain,
        activity_delta: out.activity_delta,
        activity: out.activity,
        direct_delays: out.direct_delays,
        files,
        spec,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

fn noise_scm(noise: &MultichannelAudio, x: &MultichannelAudio, cfg: &RunConfig) -> CliResult<Vec<HermitianScm>> {
    if noise.sample_rate != x.sample_rate {
        return Err(CliError::Usage(format!(
            "noise recording is at {} Hz, input at {} Hz",
            noise.sample_rate, x.sample_rate
        )));
    }
    if noise.num_channels() != x.num_channels() {
        return Err(CliError::Usage(format!(
            "noise recording has {} channels, input has {}",
            noise.num_channels(),
            x.num_channels()
        )));
    }
    init_from_noise(noise, &cfg.stft, SilentNoise::Reject).context(|| "noise recording".into())
}

fn check_rate(x: &MultichannelAudio, cfg: &RunConfig) -> CliResult<()> {
    if x.sample_rate != cfg.stft.sample_rate {
        return Err(CliError::Usage(format!(
            "input is at {} Hz but the STFT is configured for {} Hz",
            x.sample_rate, cfg.stft.sample_rate
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnhanceReport {
    pub input: String,
    pub beamformer: BeamformerKind,
    pub noise_scm_mode: NoiseScmMode,
    pub noise_source: Option<String>,
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: u32,
    pub output_channels: usize,
    pub timing: TimingReport,
}

pub fn enhance_cmd(args: &EnhanceArgs) -> CliResult<EnhanceReport> {
    let cfg = args.config.resolve()?;
    let (x, scene_noise) = if args.input.is_dir() {
        let m = read_manifest(&args.input)?;
        (
            load(&args.input.join(&m.files.captured))?,
            Some(args.input.join(&m.files.noise_reference)),
        )
    } else {
        (load(&args.input)?, None)
    };
    check_rate(&x, &cfg)?;
    // A scene's noise reference stands in for a missing --noise only when a
    // fixed interference SCM is required.
    let noise_path = args.noise.clone().or(match cfg.noise_scm_mode {
        NoiseScmMode::PrecomputedFromFile => scene_noise,
        NoiseScmMode::OnlineSpp => None,
    });
    let phi_v = match (&noise_path, cfg.beamformer.is_multichannel()) {
        (Some(p), true) => Some(noise_scm(&load(p)?, &x, &cfg)?),
        _ => None,
    };
    let out = mixbf::enhance(&x, &cfg, phi_v, &[]).context(|| args.input.display().to_string())?;
    let y = if args.all_channels {
        out.enhanced
    } else {
        out.enhanced.select_channels(&[0]).context(|| "output".into())?
    };
    save(&args.out, &y)?;
    let report = EnhanceReport {
        input: args.input.display().to_string(),
        beamformer: cfg.beamformer,
        noise_scm_mode: cfg.noise_scm_mode,
        noise_source: noise_path.map(|p| p.display().to_string()),
        channels: x.num_channels(),
        samples: x.len(),
        sample_rate: x.sample_rate,
        output_channels: y.num_channels(),
        timing: out.timing,
    };
    if let Some(p) = &args.report {
        write_json(p, &report)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub scene: String,
    pub beamformer: BeamformerKind,
    pub noise_scm_mode: NoiseScmMode,
    #[serde(flatten)]
    pub metrics: MetricReport,
    /// `‖d̂ + v̂ − y‖ / ‖y‖` of the component pass.
    pub linearity_error: f64,
    pub timing: TimingReport,
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<EvaluateReport> {
    let cfg = args.config.resolve()?;
    let m = read_manifest(&args.scene)?;
    let dir = &args.scene;
    let x = load(&dir.join(&m.files.captured))?;
    let d = load(&dir.join(&m.files.desired))?;
    let v = load(&dir.join(&m.files.interference))?;
    let per_source = m
        .files
        .per_source_desired
        .iter()
        .map(|f| load(&dir.join(f)))
        .collect::<CliResult<Vec<_>>>()?;
    check_rate(&x, &cfg)?;
    let phi_v = match (cfg.noise_scm_mode, cfg.beamformer.is_multichannel()) {
        (NoiseScmMode::PrecomputedFromFile, true) => {
            Some(noise_scm(&load(&dir.join(&m.files.noise_reference))?, &x, &cfg)?)
        }
        _ => None,
    };
    let segs = active_segments(&per_source, DEFAULT_DELTA).context(|| "activity".into())?;
    let pass = component_pass(&x, &d, &v, &cfg, phi_v).context(|| dir.display().to_string())?;
    let keep_rows = args.csv.is_some();
    let metrics = MetricReport::compute(&d, &v, &pass.d_hat, &pass.v_hat, &segs, keep_rows).context(|| "metrics".into())?;
    if let Some(p) = &args.csv {
        fs::write(p, metrics.to_csv()).context(|| p.display().to_string())?;
    }
    let report = EvaluateReport {
        scene: dir.display().to_string(),
        beamformer: cfg.beamformer,
        noise_scm_mode: cfg.noise_scm_mode,
        linearity_error: pass.linearity_error().context(|| "metrics".into())?,
        metrics: MetricReport {
            per_segment: None,
            ..metrics
        },
        timing: pass.timing,
    };
    write_json(&args.out, &report)?;
    Ok(report)
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => {
            let m = simulate(a)?;
            log::info!(
                "wrote {} channels x {} samples, measured RMNR {:?} dB",
                m.channels,
                m.samples,
                m.rmnr_measured_db
            );
        }
        Command::Enhance(a) => {
            let r = enhance_cmd(a)?;
            log::info!(
                "{} frames, p99 {:.3} ms, real-time factor {:.4}",
                r.timing.frames,
                r.timing.p99_ms,
                r.timing.real_time_factor
            );
        }
        Command::Evaluate(a) => {
            let r = evaluate(a)?;
            println!(
                "SegDIR {:.2} dB (improvement {:+.2} dB), SegDDR {:.2} dB over {} of {} segments",
                r.metrics.segdir_db,
                r.metrics.segdir_improvement_db,
                r.metrics.segddr_db,
                r.metrics.active_segments,
                r.metrics.total_segments
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_parse() {
        assert_eq!(parse_mode("online_spp"), Ok(NoiseScmMode::OnlineSpp));
        assert_eq!(parse_mode("precomputed_from_file"), Ok(NoiseScmMode::PrecomputedFromFile));
        assert!(parse_mode("online").is_err());
    }

    #[test]
    fn overrides_apply_on_top_of_defaults() {
        let args = ConfigArgs {
            beamformer: Some(BeamformerKind::UrMwf),
            gamma: Some(2.0),
            power_iters: Some(3),
            ..Default::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.beamformer, BeamformerKind::UrMwf);
        assert_eq!(cfg.gamma.value(), 2.0);
        assert_eq!(cfg.power_iters, 3);
        assert_eq!(cfg.effective_beta(), 0.99);
    }

    #[test]
    fn invalid_overrides_are_usage_errors() {
        for args in [
            ConfigArgs { alpha: Some(0.0), ..Default::default() },
            ConfigArgs { power_iters: Some(0), ..Default::default() },
            ConfigArgs { gamma: Some(-1.0), ..Default::default() },
        ] {
            assert_eq!(args.resolve().unwrap_err().exit_code(), 1);
        }
    }

    #[test]
    fn cli_parses_all_subcommands() {
        let c = Cli::try_parse_from(["mixbf", "simulate", "--out", "d", "--seed", "3"]).unwrap();
        assert!(matches!(c.command, Command::Simulate(SimulateArgs { seed: Some(3), .. })));
        let c = Cli::try_parse_from(["mixbf", "enhance", "--in", "x.wav", "--out", "y.wav", "--beamformer", "gev-mvdr"]).unwrap();
        assert!(matches!(c.command, Command::Enhance(EnhanceArgs { all_channels: false, .. })));
        assert!(Cli::try_parse_from(["mixbf", "evaluate", "--scene", "d"]).is_err());
    }
}
