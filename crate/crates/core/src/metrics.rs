//! Segmental desired-to-interference (SegDIR) and desired-to-distortion
//! (SegDDR) ratios, averaged in dB over segments where a source is active.

use serde::{Deserialize, Serialize};

use crate::audio::MultichannelAudio;
use crate::config::RunConfig;
use crate::enhancer::{enhance, TimingReport};
use crate::error::{Error, Result};
use crate::linalg::HermitianScm;
use crate::scene::{segment_energies, ACTIVITY_THRESHOLD_DB};

/// Per-segment ratios are clamped to `±SEGMENT_CAP_DB`.
pub const SEGMENT_CAP_DB: f64 = 100.0;

pub const DEFAULT_DELTA: usize = 800;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSet {
    pub delta: usize,
    /// Ascending indices of active segments.
    pub active: Vec<usize>,
    /// Number of full segments in the signal.
    pub total: usize,
}

impl SegmentSet {
    pub fn new(delta: usize, active: Vec<usize>, total: usize) -> Result<Self> {
        if delta == 0 {
            return Err(Error::InvalidConfig("segment length must be positive".into()));
        }
        if active.windows(2).any(|w| w[0] >= w[1]) || active.last().is_some_and(|&a| a >= total) {
            return Err(Error::InvalidConfig("active segments must be ascending and in range".into()));
        }
        Ok(Self { delta, active, total })
    }

    /// Every full segment of a `len`-sample signal.
    pub fn all(delta: usize, len: usize) -> Result<Self> {
        let total = len / delta.max(1);
        Self::new(delta, (0..total).collect(), total)
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }
}

/// Segments where any source exceeds its own loudest segment minus
/// `|threshold_db|`.
pub fn active_segments_with_threshold(
    per_source_desired: &[MultichannelAudio],
    delta: usize,
    threshold_db: f64,
) -> Result<SegmentSet> {
    let first = per_source_desired
        .first()
        .ok_or_else(|| Error::InvalidConfig("no sources given".into()))?;
    if delta == 0 {
        return Err(Error::InvalidConfig("segment length must be positive".into()));
    }
    let total = first.len() / delta;
    let mut active = vec![false; total];
    for src in per_source_desired {
        first.check_compatible(src)?;
        let e = segment_energies(src, delta);
        let peak = e.iter().copied().fold(0.0, f64::max);
        let thr = peak * 10f64.powf(-threshold_db.abs() / 10.0);
        for (a, &v) in active.iter_mut().zip(&e) {
            *a |= peak > 0.0 && v > thr;
        }
    }
    let active: Vec<usize> = active.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i).collect();
    if active.is_empty() {
        log::warn!("all sources are silent; no active segments");
    }
    SegmentSet::new(delta, active, total)
}

pub fn active_segments(per_source_desired: &[MultichannelAudio], delta: usize) -> Result<SegmentSet> {
    active_segments_with_threshold(per_source_desired, delta, ACTIVITY_THRESHOLD_DB)
}

/// `10·log10(num/den)` clamped to the cap; `0/0` counts as 0 dB.
fn capped_ratio_db(num: f64, den: f64) -> f64 {
    if num == 0.0 && den == 0.0 {
        return 0.0;
    }
    (10.0 * (num / den).log10()).clamp(-SEGMENT_CAP_DB, SEGMENT_CAP_DB)
}

fn segment_energy(a: &MultichannelAudio, t: usize, delta: usize) -> f64 {
    a.channels()
        .iter()
        .map(|c| c[t * delta..(t + 1) * delta].iter().map(|v| v * v).sum::<f64>())
        .sum()
}

fn segment_distortion(a: &MultichannelAudio, b: &MultichannelAudio, t: usize, delta: usize) -> f64 {
    a.channels()
        .iter()
        .zip(b.channels())
        .map(|(x, y)| {
            x[t * delta..(t + 1) * delta]
                .iter()
                .zip(&y[t * delta..(t + 1) * delta])
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
        })
        .sum()
}

fn check_segments(a: &MultichannelAudio, b: &MultichannelAudio, segs: &SegmentSet) -> Result<()> {
    a.check_compatible(b)?;
    if segs.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    if segs.active.last().map_or(false, |&t| (t + 1) * segs.delta > a.len()) {
        return Err(Error::InvalidConfig("segment set exceeds the signal length".into()));
    }
    Ok(())
}

/// Per-segment SegDIR values in dB.
pub fn segdir_per_segment(d_hat: &MultichannelAudio, v_hat: &MultichannelAudio, segs: &SegmentSet) -> Result<Vec<f64>> {
    check_segments(d_hat, v_hat, segs)?;
    Ok(segs
        .active
        .iter()
        .map(|&t| capped_ratio_db(segment_energy(d_hat, t, segs.delta), segment_energy(v_hat, t, segs.delta)))
        .collect())
}

/// Per-segment SegDDR values in dB.
pub fn segddr_per_segment(d_hat: &MultichannelAudio, d: &MultichannelAudio, segs: &SegmentSet) -> Result<Vec<f64>> {
    check_segments(d_hat, d, segs)?;
    Ok(segs
        .active
        .iter()
        .map(|&t| capped_ratio_db(segment_energy(d, t, segs.delta), segment_distortion(d_hat, d, t, segs.delta)))
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn segdir(d_hat: &MultichannelAudio, v_hat: &MultichannelAudio, segs: &SegmentSet) -> Result<f64> {
    Ok(mean(&segdir_per_segment(d_hat, v_hat, segs)?))
}

pub fn segddr(d_hat: &MultichannelAudio, d: &MultichannelAudio, segs: &SegmentSet) -> Result<f64> {
    Ok(mean(&segddr_per_segment(d_hat, d, segs)?))
}

/// Output of filtering a scene's components with the weights driven by the
/// captured signal.
#[derive(Clone, Debug)]
pub struct ComponentPass {
    pub enhanced: MultichannelAudio,
    pub d_hat: MultichannelAudio,
    pub v_hat: MultichannelAudio,
    pub timing: TimingReport,
}

impl ComponentPass {
    /// `‖d̂ + v̂ − y‖ / ‖y‖`.
    pub fn linearity_error(&self) -> Result<f64> {
        let sum = self.d_hat.add(&self.v_hat)?;
        let num = sum.sub(&self.enhanced)?.energy().sqrt();
        let den = self.enhanced.energy().sqrt();
        Ok(if den > 0.0 { num / den } else { num })
    }
}

pub fn component_pass(
    x: &MultichannelAudio,
    d: &MultichannelAudio,
    v: &MultichannelAudio,
    cfg: &RunConfig,
    noise_scm: Option<Vec<HermitianScm>>,
) -> Result<ComponentPass> {
    let mut out = enhance(x, cfg, noise_scm, &[d, v])?;
    let v_hat = out.shadows.pop().expect("two shadows");
    let d_hat = out.shadows.pop().expect("two shadows");
    Ok(ComponentPass {
        enhanced: out.enhanced,
        d_hat,
        v_hat,
        timing: out.timing,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub segment: usize,
    pub observed_dir_db: f64,
    pub dir_db: f64,
    pub ddr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub segdir_db: f64,
    pub segddr_db: f64,
    pub observed_segdir_db: f64,
    pub segdir_improvement_db: f64,
    pub active_segments: usize,
    pub total_segments: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_segment: Option<Vec<SegmentRow>>,
}

impl MetricReport {
    /// Scores `d̂, v̂` against the unprocessed components `d, v`.
    pub fn compute(
        d: &MultichannelAudio,
        v: &MultichannelAudio,
        d_hat: &MultichannelAudio,
        v_hat: &MultichannelAudio,
        segs: &SegmentSet,
        keep_rows: bool,
    ) -> Result<Self> {
        let observed = segdir_per_segment(d, v, segs)?;
        let dir = segdir_per_segment(d_hat, v_hat, segs)?;
        let ddr = segddr_per_segment(d_hat, d, segs)?;
        let (o, e) = (mean(&observed), mean(&dir));
        let per_segment = keep_rows.then(|| {
            segs.active
                .iter()
                .enumerate()
                .map(|(k, &t)| SegmentRow {
                    segment: t,
                    observed_dir_db: observed[k],
                    dir_db: dir[k],
                    ddr_db: ddr[k],
                })
                .collect()
        });
        Ok(Self {
            segdir_db: e,
            segddr_db: mean(&ddr),
            observed_segdir_db: o,
            segdir_improvement_db: e - o,
            active_segments: segs.active.len(),
            total_segments: segs.total,
            per_segment,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("segment,observed_dir_db,dir_db,ddr_db\n");
        for r in self.per_segment.iter().flatten() {
            s.push_str(&format!("{},{},{},{}\n", r.segment, r.observed_dir_db, r.dir_db, r.ddr_db));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mono(v: Vec<f64>) -> MultichannelAudio {
        MultichannelAudio::new(16000, vec![v]).unwrap()
    }

    fn constant(level: f64, len: usize) -> MultichannelAudio {
        mono(vec![level; len])
    }

    #[test]
    fn segdir_examples() {
        let segs = SegmentSet::all(4, 4).unwrap();
        assert!((segdir(&constant(5.0, 4), &constant(0.5, 4), &segs).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(segdir(&constant(1.0, 4), &constant(0.0, 4), &segs).unwrap(), 100.0);

        let d = mono(vec![1.0, 1.0, 1.0, 1.0]);
        let v = mono(vec![10f64.powf(-0.5), 10f64.powf(-0.5), 10f64.powf(-1.5), 10f64.powf(-1.5)]);
        let two = SegmentSet::all(2, 4).unwrap();
        assert!((segdir(&d, &v, &two).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn segddr_examples() {
        let d = mono(vec![0.3, -1.0, 2.0, 0.5]);
        let segs = SegmentSet::all(4, 4).unwrap();
        assert_eq!(segddr(&d, &d, &segs).unwrap(), 100.0);
        assert!(segddr(&constant(0.0, 4), &d, &segs).unwrap().abs() < 1e-12);
        assert!(segddr(&d.scaled(2.0), &d, &segs).unwrap().abs() < 1e-12);
    }

    #[test]
    fn empty_active_set_is_an_error() {
        let segs = SegmentSet::new(4, vec![], 1).unwrap();
        assert!(matches!(segdir(&constant(1.0, 4), &constant(1.0, 4), &segs), Err(Error::EmptyActiveSet)));
    }

    #[test]
    fn segment_set_validation() {
        assert!(SegmentSet::new(0, vec![], 0).is_err());
        assert!(SegmentSet::new(2, vec![1, 1], 3).is_err());
        assert!(SegmentSet::new(2, vec![3], 3).is_err());
    }

    #[test]
    fn activity_examples() {
        let loud = constant(1.0, 8000);
        assert_eq!(active_segments(&[loud], 800).unwrap().active.len(), 10);

        let mut half = vec![1.0; 4000];
        half.extend(vec![0.0; 4000]);
        assert_eq!(active_segments(&[mono(half)], 800).unwrap().active, vec![0, 1, 2, 3, 4]);

        let silent = active_segments(&[constant(0.0, 8000)], 800).unwrap();
        assert!(silent.is_empty());
    }

    #[test]
    fn threshold_sensitivity_only_touches_quiet_segments() {
        let levels = [1.0, 0.5, 0.03, 0.015, 0.0, 1.0];
        let sig: Vec<f64> = levels.iter().flat_map(|&l| vec![l; 100]).collect();
        let a = active_segments_with_threshold(&[mono(sig.clone())], 100, -40.0).unwrap();
        let b = active_segments_with_threshold(&[mono(sig)], 100, -30.0).unwrap();
        assert_eq!(a.active, vec![0, 1, 2, 3, 5]);
        assert_eq!(b.active, vec![0, 1, 5]);
    }

    #[test]
    fn report_identity_has_zero_improvement() {
        let d = mono((0..1600).map(|i| (i as f64 * 0.1).sin()).collect());
        let v = mono((0..1600).map(|i| 0.1 * (i as f64 * 0.37).cos()).collect());
        let segs = SegmentSet::all(800, 1600).unwrap();
        let r = MetricReport::compute(&d, &v, &d, &v, &segs, true).unwrap();
        assert_eq!(r.segdir_improvement_db, 0.0);
        assert_eq!(r.segddr_db, 100.0);
        assert_eq!(r.per_segment.as_ref().unwrap().len(), 2);
        assert_eq!(r.to_csv().lines().count(), 3);
    }
}
