//! Window-sweep evaluation, confidence calibration, and multi-source
//! peak extraction.
//!
//! Every estimator is scored the same way: tile a session into windows
//! with 50% overlap, estimate a direction per window, and compare against
//! the ground-truth source direction in the sensor frame at the window's
//! center frame. Aggregates are mean angular error with a 95% CI
//! half-width per (method, condition, window length).

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{lsdd, srp_phat, SteeringTable, LSDD_ALPHA, LSDD_BAND_HZ, SRP_BAND_HZ};
use crate::contrast::world_transform;
use crate::data::{featurize_with_stft, FeatureConfig, SessionFeatures};
use crate::dsp::StftTensor;
use crate::error::{CslError, Result};
use crate::geometry::{angular_error, RotationMatrix, Sensor, SphericalGrid, UnitVector3};
use crate::nn::{predict_field, Mlp};
use num_traits::Float;
use crate::sim::{load_manifest, load_session, Split};
use crate::train::{infer_window, DoaEstimate};

/// Windows whose per-source frame energy stays this far below the session
/// peak are treated as source-absent and skipped.
pub const PRESENCE_GATE_DB: f64 = -40.0;

/// A window length for the sweep: a duration in seconds, or the whole
/// session at once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowLen {
    Seconds(f64),
    Full,
}

impl WindowLen {
    /// Number of STFT frames covered, or `None` for a full-session window.
    pub fn frames(&self, sample_rate: f64, hop: usize) -> Option<usize> {
        match self {
            WindowLen::Seconds(s) => {
                let f = (s * sample_rate / hop as f64).round() as usize;
                Some(f.max(1))
            }
            WindowLen::Full => None,
        }
    }
}

impl fmt::Display for WindowLen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowLen::Seconds(s) => write!(f, "{s}"),
            WindowLen::Full => write!(f, "full"),
        }
    }
}

impl FromStr for WindowLen {
    type Err = CslError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(WindowLen::Full);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| CslError::invalid(format!("bad window length {s:?}")))?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(CslError::invalid(format!(
                "window length must be positive, got {v}"
            )));
        }
        Ok(WindowLen::Seconds(v))
    }
}

/// Everything the evaluators need from one session: the STFT for the
/// geometry-aware baselines and the feature rows for the learned model.
pub struct EvalSession {
    pub y: StftTensor,
    pub sf: SessionFeatures,
}

pub fn prepare_session(dir: &Path, cfg: &FeatureConfig) -> Result<EvalSession> {
    let session = load_session(dir)?;
    let (sf, y) = featurize_with_stft(&session, cfg)?;
    Ok(EvalSession { y, sf })
}

/// Loads every session listed in the manifest (optionally one split only),
/// in manifest order, keeping both STFT and features.
pub fn prepare_dataset(
    dataset_dir: &Path,
    cfg: &FeatureConfig,
    split: Option<Split>,
) -> Result<Vec<EvalSession>> {
    let manifest = load_manifest(dataset_dir)?;
    let wanted: Vec<&str> = manifest
        .sessions
        .iter()
        .filter(|e| split.map_or(true, |s| e.split == s))
        .map(|e| e.session_id.as_str())
        .collect();
    if wanted.is_empty() {
        return Err(CslError::invalid(format!(
            "dataset {} has no sessions to evaluate",
            dataset_dir.display()
        )));
    }
    wanted
        .par_iter()
        .map(|id| prepare_session(&dataset_dir.join(id), cfg))
        .collect()
}

/// A direction estimator that can be scored by `window_sweep`.
pub enum Estimator<'a> {
    SrpPhat { table: &'a SteeringTable, grid: &'a SphericalGrid },
    Lsdd { table: &'a SteeringTable, grid: &'a SphericalGrid },
    Csl { net: &'a Mlp<f32> },
}

impl Estimator<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::SrpPhat { .. } => "srp-phat",
            Estimator::Lsdd { .. } => "lsdd",
            Estimator::Csl { .. } => "csl",
        }
    }

    fn estimate(&self, es: &EvalSession, window: (usize, usize)) -> Result<DoaEstimate> {
        match self {
            Estimator::SrpPhat { table, grid } => {
                srp_phat(&es.y, table, grid, window, SRP_BAND_HZ)
            }
            Estimator::Lsdd { table, grid } => {
                lsdd(&es.y, table, grid, window, LSDD_BAND_HZ, LSDD_ALPHA)
            }
            Estimator::Csl { net } => infer_window(net, &es.sf, window),
        }
    }
}

/// Tiles `[0, n_frames)` into windows of `len` frames with 50% overlap.
/// A window longer than the session degrades to one full-session window,
/// as does `len = None`.
pub fn tile_windows(n_frames: usize, len: Option<usize>) -> Vec<(usize, usize)> {
    let l = match len {
        Some(l) if l < n_frames => l,
        _ => return vec![(0, n_frames)],
    };
    let step = (l / 2).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start + l <= n_frames {
        out.push((start, start + l));
        start += step;
    }
    out
}

/// Indices of sources whose energy inside the window reaches the presence
/// gate relative to the loudest frame of the whole session.
fn present_sources(sf: &SessionFeatures, window: (usize, usize)) -> Vec<usize> {
    let session_max = sf
        .frame_energies
        .iter()
        .flat_map(|e| e.iter())
        .fold(0.0f64, |m, &v| m.max(v as f64));
    if session_max <= 0.0 {
        return Vec::new();
    }
    let thresh = session_max * 10f64.powf(PRESENCE_GATE_DB / 10.0);
    let mut present = Vec::new();
    for (s, energies) in sf.frame_energies.iter().enumerate() {
        let hi = window.1.min(energies.len());
        let wmax = energies[window.0..hi]
            .iter()
            .fold(0.0f64, |m, &v| m.max(v as f64));
        if wmax >= thresh {
            present.push(s);
        }
    }
    present
}

fn center_frame(window: (usize, usize)) -> usize {
    window.0 + (window.1 - window.0 - 1) / 2
}

fn sensor_truth_at(
    sf: &SessionFeatures,
    source: usize,
    frame: usize,
) -> Result<UnitVector3<Sensor>> {
    let v = sf.rotations[frame].apply_transpose_vec3(sf.truth[source].as_array());
    UnitVector3::normalized(v)
}

/// Sample mean and 95% CI half-width (`1.96 * stderr`); the CI is zero
/// for a single sample.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// One aggregate line of a sweep report.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub condition: String,
    pub l_win: String,
    pub mean_deg: f64,
    pub ci_deg: f64,
    pub n: usize,
}

/// Scores one estimator over a single-source dataset at each window length.
pub fn window_sweep(
    est: &Estimator,
    sessions: &[EvalSession],
    lens: &[WindowLen],
    condition: &str,
) -> Result<Vec<SweepRow>> {
    if sessions.is_empty() {
        return Err(CslError::invalid("window sweep needs at least one session"));
    }
    for es in sessions {
        if es.sf.truth.len() != 1 {
            return Err(CslError::invalid(format!(
                "session {} has {} sources; the sweep protocol is single-source",
                es.sf.session_id,
                es.sf.truth.len()
            )));
        }
    }
    let mut rows = Vec::with_capacity(lens.len());
    for len in lens {
        let per_session: Vec<Vec<f64>> = sessions
            .par_iter()
            .map(|es| -> Result<Vec<f64>> {
                let frames = len.frames(es.y.sample_rate as f64, es.y.hop);
                let mut errs = Vec::new();
                for w in tile_windows(es.sf.n_frames, frames) {
                    if present_sources(&es.sf, w).is_empty() {
                        continue;
                    }
                    let doa = est.estimate(es, w)?;
                    let c = center_frame(w);
                    let Some(dir) = doa.sensor_at(c) else { continue };
                    let truth = sensor_truth_at(&es.sf, 0, c)?;
                    errs.push(angular_error(&dir, &truth));
                }
                Ok(errs)
            })
            .collect::<Result<_>>()?;
        let errors: Vec<f64> = per_session.into_iter().flatten().collect();
        if errors.is_empty() {
            return Err(CslError::invalid(format!(
                "no usable windows at length {len} for {}",
                est.name()
            )));
        }
        let (mean, ci) = mean_ci(&errors);
        rows.push(SweepRow {
            method: est.name().to_string(),
            condition: condition.to_string(),
            l_win: len.to_string(),
            mean_deg: mean,
            ci_deg: ci,
            n: errors.len(),
        });
    }
    Ok(rows)
}

/// Fraction of adjacent pairs in which the sequence does not increase.
pub fn fraction_non_increasing(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 1.0;
    }
    let ok = xs.windows(2).filter(|p| p[1] <= p[0] + 1e-12).count();
    ok as f64 / (xs.len() - 1) as f64
}

/// Kernel density estimation over a direction grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KdeConfig {
    /// Kernel bandwidth in degrees of angular distance.
    pub bandwidth_deg: f64,
    /// How many peaks to extract.
    pub n_src: usize,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig { bandwidth_deg: 1.0, n_src: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct KdePeaks {
    /// `(grid index, density)` ranked by density, ties to the lower index.
    pub peaks: Vec<(usize, f64)>,
    /// True when the field had fewer local maxima than requested.
    pub found_fewer: bool,
    /// Full density field over the grid.
    pub density: Vec<f64>,
}

/// Confidence-weighted spherical KDE of a world-frame prediction field.
/// Each prediction contributes its norm times `exp(-angle / bandwidth)`.
pub fn kde_multi_source(
    world: &[[f64; 3]],
    cfg: &KdeConfig,
    grid: &SphericalGrid,
) -> Result<KdePeaks> {
    if world.is_empty() {
        return Err(CslError::invalid("density estimate needs at least one prediction"));
    }
    if !(cfg.bandwidth_deg > 0.0) || !cfg.bandwidth_deg.is_finite() {
        return Err(CslError::invalid(format!(
            "kernel bandwidth must be positive, got {}",
            cfg.bandwidth_deg
        )));
    }
    if cfg.n_src == 0 {
        return Err(CslError::invalid("n_src must be at least 1"));
    }
    // Contributions beyond 25 bandwidths are below 2e-11 of the kernel
    // peak; cutting them there keeps the dot products cheap.
    let cutoff_deg = (25.0 * cfg.bandwidth_deg).min(179.0);
    let dot_min = cutoff_deg.to_radians().cos();
    let mut dirs = Vec::with_capacity(world.len());
    for v in world {
        let w = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !w.is_finite() {
            return Err(CslError::numeric("non-finite prediction in density estimate"));
        }
        if w > 0.0 {
            dirs.push(([v[0] / w, v[1] / w, v[2] / w], w));
        }
    }
    let density: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|j| {
            let g = grid.directions()[j].as_array();
            let mut psi = 0.0;
            for (d, w) in &dirs {
                let dot = g[0] * d[0] + g[1] * d[1] + g[2] * d[2];
                if dot >= dot_min {
                    let sigma = dot.clamp(-1.0, 1.0).acos().to_degrees();
                    psi += w * (-sigma / cfg.bandwidth_deg).exp();
                }
            }
            psi
        })
        .collect();

    let mut candidates: Vec<(usize, f64)> = (0..grid.len())
        .filter(|&j| {
            density[j] > 0.0
                && grid.neighbors(j).iter().all(|&nb| density[j] >= density[nb as usize])
        })
        .map(|j| (j, density[j]))
        .collect();
    candidates.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
    });
    let found_fewer = candidates.len() < cfg.n_src;
    candidates.truncate(cfg.n_src);
    Ok(KdePeaks { peaks: candidates, found_fewer, density })
}

/// Symmetric set-to-set angular distance: unweighted mean over the truth
/// side, confidence-weighted mean over the prediction side.
pub fn weighted_chamfer(
    pred: &[(UnitVector3<Sensor>, f64)],
    truth: &[UnitVector3<Sensor>],
) -> Result<f64> {
    if pred.is_empty() || truth.is_empty() {
        return Err(CslError::invalid("chamfer distance needs non-empty sets"));
    }
    let mut total_w = 0.0;
    for &(_, w) in pred {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(CslError::invalid(format!("bad prediction weight {w}")));
        }
        total_w += w;
    }
    if total_w <= 0.0 {
        return Err(CslError::invalid("chamfer distance with zero total weight"));
    }
    let truth_term = truth
        .iter()
        .map(|t| {
            pred.iter()
                .map(|(p, _)| angular_error(p, t))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / truth.len() as f64;
    let pred_term = pred
        .iter()
        .map(|(p, w)| {
            w * truth
                .iter()
                .map(|t| angular_error(p, t))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / total_w;
    Ok(truth_term + pred_term)
}

/// Calibration curve over 20 confidence quantile bins, low to high.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceReport {
    /// 21 bin edges over the confidence axis.
    pub edges: Vec<f64>,
    /// Mean angular error per bin, degrees.
    pub mean_error_deg: Vec<f64>,
    pub n_per_bin: Vec<usize>,
}

impl ConfidenceReport {
    /// Fraction of adjacent bin pairs where error does not grow with
    /// confidence.
    pub fn non_increasing_fraction(&self) -> f64 {
        fraction_non_increasing(&self.mean_error_deg)
    }
}

pub const CONFIDENCE_BINS: usize = 20;

/// Bins `(confidence, error_deg)` samples into 20 equal-count quantile
/// bins sorted by confidence.
pub fn confidence_curve(samples: &[(f64, f64)]) -> Result<ConfidenceReport> {
    if samples.len() < CONFIDENCE_BINS {
        return Err(CslError::invalid(format!(
            "confidence curve needs at least {CONFIDENCE_BINS} samples, got {}",
            samples.len()
        )));
    }
    for &(c, e) in samples {
        if !c.is_finite() || !e.is_finite() {
            return Err(CslError::numeric("non-finite confidence sample"));
        }
        if !(0.0..=180.0).contains(&e) {
            return Err(CslError::invalid(format!("angular error {e} outside [0, 180]")));
        }
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        samples[a]
            .0
            .partial_cmp(&samples[b].0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let n = order.len();
    let mut edges = Vec::with_capacity(CONFIDENCE_BINS + 1);
    let mut means = Vec::with_capacity(CONFIDENCE_BINS);
    let mut counts = Vec::with_capacity(CONFIDENCE_BINS);
    for b in 0..CONFIDENCE_BINS {
        let lo = b * n / CONFIDENCE_BINS;
        let hi = (b + 1) * n / CONFIDENCE_BINS;
        edges.push(samples[order[lo]].0);
        let slice = &order[lo..hi];
        let mean = slice.iter().map(|&i| samples[i].1).sum::<f64>() / slice.len() as f64;
        means.push(mean);
        counts.push(slice.len());
    }
    edges.push(samples[order[n - 1]].0);
    Ok(ConfidenceReport { edges, mean_error_deg: means, n_per_bin: counts })
}

/// One high-confidence bin for the scatter overlay.
#[derive(Debug, Clone, Serialize)]
pub struct ScatterRow {
    pub session_id: String,
    pub k: u16,
    pub n: u16,
    pub confidence: f64,
}

/// Per-bin calibration of a trained model over single-source sessions:
/// prediction-norm confidence against instantaneous angular error, plus
/// the bins above the 95th confidence percentile for plotting.
pub fn confidence_analysis<T: Float>(
    net: &Mlp<T>,
    sessions: &[SessionFeatures],
) -> Result<(ConfidenceReport, Vec<ScatterRow>)> {
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut tagged: Vec<(usize, u16, u16, f64)> = Vec::new();
    for (si, sf) in sessions.iter().enumerate() {
        if sf.truth.len() != 1 {
            return Err(CslError::invalid(format!(
                "session {} has {} sources; calibration is single-source",
                sf.session_id,
                sf.truth.len()
            )));
        }
        let field = predict_field(net, &sf.features)?;
        for i in 0..field.len() {
            let conf = field.confidence(i);
            if !(conf > 0.0) {
                continue;
            }
            let [x, y, z] = field.outputs[i];
            let dir = UnitVector3::<Sensor>::normalized([x / conf, y / conf, z / conf])?;
            let (k, n) = field.bins[i];
            let truth = sensor_truth_at(sf, 0, n as usize)?;
            let err = angular_error(&dir, &truth);
            samples.push((conf, err));
            tagged.push((si, k, n, conf));
        }
    }
    let report = confidence_curve(&samples)?;
    let mut confs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    confs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let cutoff = confs[(confs.len() * 95) / 100..][0];
    let scatter = tagged
        .into_iter()
        .filter(|&(_, _, _, c)| c >= cutoff)
        .map(|(si, k, n, c)| ScatterRow {
            session_id: sessions[si].session_id.clone(),
            k,
            n,
            confidence: c,
        })
        .collect();
    Ok((report, scatter))
}

/// Chamfer distance for one window: KDE peaks of the world-frame field,
/// back-rotated to the sensor frame at the center frame, against the
/// truth directions.
pub fn two_source_window(
    world: &[[f64; 3]],
    truth: &[UnitVector3<Sensor>],
    rot_center: &RotationMatrix,
    cfg: &KdeConfig,
    grid: &SphericalGrid,
) -> Result<f64> {
    let peaks = kde_multi_source(world, cfg, grid)?;
    if peaks.peaks.is_empty() {
        return Err(CslError::invalid("no density peaks in window"));
    }
    let pred: Vec<(UnitVector3<Sensor>, f64)> = peaks
        .peaks
        .iter()
        .map(|&(j, psi)| -> Result<_> {
            let s = rot_center.apply_transpose_vec3(grid.directions()[j].as_array());
            Ok((UnitVector3::normalized(s)?, psi))
        })
        .collect::<Result<_>>()?;
    weighted_chamfer(&pred, truth)
}

/// Multi-source sweep for the learned model: per window, KDE peaks of the
/// prediction field scored by weighted Chamfer distance against every
/// source present in the window.
pub fn two_source_eval<T: Float + Send + Sync>(
    net: &Mlp<T>,
    sessions: &[EvalSession],
    lens: &[WindowLen],
    cfg: &KdeConfig,
    grid: &SphericalGrid,
    condition: &str,
) -> Result<Vec<SweepRow>> {
    if sessions.is_empty() {
        return Err(CslError::invalid("two-source eval needs at least one session"));
    }
    struct Prepared<'a> {
        es: &'a EvalSession,
        world: Vec<[f64; 3]>,
        bins: Vec<(u16, u16)>,
    }
    let prepared: Vec<Prepared> = sessions
        .par_iter()
        .map(|es| -> Result<Prepared> {
            let field = predict_field(net, &es.sf.features)?;
            let world = world_transform(&field, &es.sf.rotations)?;
            Ok(Prepared { es, world, bins: field.bins })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(lens.len());
    for len in lens {
        let per_session: Vec<Vec<f64>> = prepared
            .par_iter()
            .map(|p| -> Result<Vec<f64>> {
                let frames = len.frames(p.es.y.sample_rate as f64, p.es.y.hop);
                let mut dists = Vec::new();
                for w in tile_windows(p.es.sf.n_frames, frames) {
                    let present = present_sources(&p.es.sf, w);
                    if present.is_empty() {
                        continue;
                    }
                    let world: Vec<[f64; 3]> = p
                        .bins
                        .iter()
                        .zip(&p.world)
                        .filter(|((_, n), _)| (w.0..w.1).contains(&(*n as usize)))
                        .map(|(_, v)| *v)
                        .collect();
                    if world.is_empty() {
                        continue;
                    }
                    let c = center_frame(w);
                    let truth: Vec<UnitVector3<Sensor>> = present
                        .iter()
                        .map(|&s| sensor_truth_at(&p.es.sf, s, c))
                        .collect::<Result<_>>()?;
                    dists.push(two_source_window(
                        &world,
                        &truth,
                        &p.es.sf.rotations[c],
                        cfg,
                        grid,
                    )?);
                }
                Ok(dists)
            })
            .collect::<Result<_>>()?;
        let dists: Vec<f64> = per_session.into_iter().flatten().collect();
        if dists.is_empty() {
            return Err(CslError::invalid(format!(
                "no usable windows at length {len} for two-source eval"
            )));
        }
        let (mean, ci) = mean_ci(&dists);
        rows.push(SweepRow {
            method: "csl".to_string(),
            condition: condition.to_string(),
            l_win: len.to_string(),
            mean_deg: mean,
            ci_deg: ci,
            n: dists.len(),
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("method,condition,l_win,mean_deg,ci_deg,n\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method, r.condition, r.l_win, r.mean_deg, r.ci_deg, r.n
        ));
    }
    out
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    fs::write(path, sweep_csv(rows))?;
    Ok(())
}

pub fn write_sweep_json(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, rows)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn write_confidence_csv(path: &Path, report: &ConfidenceReport) -> Result<()> {
    let mut out = String::from("bin,conf_lo,conf_hi,mean_error_deg,n\n");
    for b in 0..report.mean_error_deg.len() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            b,
            report.edges[b],
            report.edges[b + 1],
            report.mean_error_deg[b],
            report.n_per_bin[b]
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_scatter_csv(path: &Path, rows: &[ScatterRow]) -> Result<()> {
    let mut out = String::from("session_id,k,n,confidence\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.session_id, r.k, r.n, r.confidence));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_density_csv(path: &Path, density: &[f64]) -> Result<()> {
    let mut out = String::from("grid_index,log_psi\n");
    for (j, psi) in density.iter().enumerate() {
        out.push_str(&format!("{},{}\n", j, psi.max(1e-300).ln()));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, random_direction, World};
    use crate::sim::{gen_dataset, ArraySpec, Condition, GenConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;
    use tempfile::tempdir;

    fn grid_642() -> &'static SphericalGrid {
        static GRID: OnceLock<SphericalGrid> = OnceLock::new();
        GRID.get_or_init(|| build_grid(642, 14).unwrap())
    }

    fn grid_2562() -> &'static SphericalGrid {
        static GRID: OnceLock<SphericalGrid> = OnceLock::new();
        GRID.get_or_init(|| build_grid(2562, 2002).unwrap())
    }

    #[test]
    fn tile_windows_overlap_by_half() {
        assert_eq!(tile_windows(10, Some(4)), vec![(0, 4), (2, 6), (4, 8), (6, 10)]);
        assert_eq!(tile_windows(10, Some(20)), vec![(0, 10)]);
        assert_eq!(tile_windows(10, None), vec![(0, 10)]);
        assert_eq!(tile_windows(5, Some(1)), vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
    }

    #[test]
    fn window_len_parsing_and_frames() {
        assert_eq!("full".parse::<WindowLen>().unwrap(), WindowLen::Full);
        assert_eq!("0.05".parse::<WindowLen>().unwrap(), WindowLen::Seconds(0.05));
        assert!("-1".parse::<WindowLen>().is_err());
        assert!("abc".parse::<WindowLen>().is_err());
        // 50 ms at 16 kHz with a 160-sample hop is 5 frames.
        assert_eq!(WindowLen::Seconds(0.05).frames(16000.0, 160), Some(5));
        assert_eq!(WindowLen::Seconds(1.0).frames(16000.0, 160), Some(100));
        assert_eq!(WindowLen::Full.frames(16000.0, 160), None);
        assert_eq!(WindowLen::Seconds(0.05).to_string(), "0.05");
        assert_eq!(WindowLen::Full.to_string(), "full");
    }

    fn unit<F: crate::geometry::Frame>(v: [f64; 3]) -> UnitVector3<F> {
        UnitVector3::normalized(v).unwrap()
    }

    #[test]
    fn chamfer_identical_sets_is_zero() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let dirs: Vec<UnitVector3<Sensor>> =
                (0..4).map(|_| random_direction(&mut rng)).collect();
            let pred: Vec<_> =
                dirs.iter().map(|d| (*d, rng.gen_range(0.1..3.0))).collect();
            let d = weighted_chamfer(&pred, &dirs).unwrap();
            // acos loses precision right at 1, so "zero" means sub-microdegree
            assert!(d.abs() < 1e-5, "chamfer of a set with itself was {d}");
        }
    }

    #[test]
    fn chamfer_orthogonal_singletons_is_180() {
        let pred = vec![(unit::<Sensor>([1.0, 0.0, 0.0]), 1.0)];
        let truth = vec![unit::<Sensor>([0.0, 1.0, 0.0])];
        let d = weighted_chamfer(&pred, &truth).unwrap();
        assert!((d - 180.0).abs() < 1e-9, "expected 90 + 90, got {d}");
    }

    #[test]
    fn chamfer_rejects_degenerate_inputs() {
        let x = unit::<Sensor>([1.0, 0.0, 0.0]);
        assert!(weighted_chamfer(&[], &[x]).is_err());
        assert!(weighted_chamfer(&[(x, 1.0)], &[]).is_err());
        assert!(weighted_chamfer(&[(x, 0.0), (x, 0.0)], &[x]).is_err());
        assert!(weighted_chamfer(&[(x, -1.0)], &[x]).is_err());
    }

    #[test]
    fn chamfer_is_invariant_to_weight_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth: Vec<UnitVector3<Sensor>> =
            (0..3).map(|_| random_direction(&mut rng)).collect();
        let pred: Vec<(UnitVector3<Sensor>, f64)> = (0..5)
            .map(|i| (random_direction(&mut rng), 0.1 + i as f64))
            .collect();
        let scaled: Vec<_> = pred.iter().map(|&(d, w)| (d, w * 37.0)).collect();
        let a = weighted_chamfer(&pred, &truth).unwrap();
        let b = weighted_chamfer(&scaled, &truth).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn chamfer_spurious_peak_vanishes_with_its_weight() {
        let x = unit::<Sensor>([1.0, 0.0, 0.0]);
        let y = unit::<Sensor>([0.0, 1.0, 0.0]);
        let truth = vec![x];
        let base = weighted_chamfer(&[(x, 1.0)], &truth).unwrap();
        assert!(base.abs() < 1e-12);
        let coarse = weighted_chamfer(&[(x, 1.0), (y, 1e-3)], &truth).unwrap();
        let fine = weighted_chamfer(&[(x, 1.0), (y, 1e-6)], &truth).unwrap();
        assert!(coarse > fine, "spurious-peak penalty should shrink with weight");
        assert!(fine < 1e-3, "near-zero-weight spurious peak still cost {fine}");
    }

    #[test]
    fn kde_point_mass_peaks_at_its_grid_point_with_count_density() {
        let grid = grid_642();
        let j = 123;
        let d = grid.directions()[j].as_array();
        let world: Vec<[f64; 3]> = (0..60).map(|_| d).collect();
        let cfg = KdeConfig { bandwidth_deg: 1.0, n_src: 1 };
        let peaks = kde_multi_source(&world, &cfg, grid).unwrap();
        assert_eq!(peaks.peaks[0].0, j);
        assert!((peaks.peaks[0].1 - 60.0).abs() < 1e-9, "density {}", peaks.peaks[0].1);
        assert!(!peaks.found_fewer);
    }

    fn jittered_cluster(
        center: [f64; 3],
        count: usize,
        spread: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<[f64; 3]> {
        use rand::Rng;
        (0..count)
            .map(|_| {
                let v = [
                    center[0] + spread * rng.gen_range(-1.0..1.0),
                    center[1] + spread * rng.gen_range(-1.0..1.0),
                    center[2] + spread * rng.gen_range(-1.0..1.0),
                ];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                [v[0] / n, v[1] / n, v[2] / n]
            })
            .collect()
    }

    #[test]
    fn kde_two_clusters_give_two_peaks_near_centers() {
        let grid = grid_2562();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let c1 = [1.0, 0.0, 0.0];
        let c2 = [0.0, 1.0, 0.0];
        let mut world = jittered_cluster(c1, 100, 0.02, &mut rng);
        world.extend(jittered_cluster(c2, 100, 0.02, &mut rng));
        let cfg = KdeConfig { bandwidth_deg: 1.0, n_src: 2 };
        let peaks = kde_multi_source(&world, &cfg, grid).unwrap();
        assert_eq!(peaks.peaks.len(), 2);
        assert!(!peaks.found_fewer);
        let got: Vec<[f64; 3]> =
            peaks.peaks.iter().map(|&(j, _)| grid.directions()[j].as_array()).collect();
        for c in [c1, c2] {
            let cd = unit::<World>(c);
            let best = got
                .iter()
                .map(|g| angular_error(&unit::<World>(*g), &cd))
                .fold(f64::INFINITY, f64::min);
            assert!(best <= 2.5, "no peak within 2.5 deg of cluster center, best {best}");
        }
    }

    #[test]
    fn kde_single_peak_request_picks_denser_cluster() {
        let grid = grid_2562();
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let c1 = [0.0, 0.0, 1.0];
        let c2 = [1.0, 0.0, 0.0];
        // A clear density contrast so grid snap cannot flip the ranking.
        let mut world = jittered_cluster(c1, 200, 0.02, &mut rng);
        world.extend(jittered_cluster(c2, 50, 0.02, &mut rng));
        let cfg = KdeConfig { bandwidth_deg: 5.0, n_src: 1 };
        let peaks = kde_multi_source(&world, &cfg, grid).unwrap();
        assert_eq!(peaks.peaks.len(), 1);
        let got = unit::<World>(grid.directions()[peaks.peaks[0].0].as_array());
        assert!(angular_error(&got, &unit::<World>(c1)) <= 2.5);
    }

    #[test]
    fn kde_flags_fewer_maxima_than_requested() {
        let grid = grid_642();
        let world = vec![grid.directions()[7].as_array(); 10];
        let cfg = KdeConfig { bandwidth_deg: 1.0, n_src: 3 };
        let peaks = kde_multi_source(&world, &cfg, grid).unwrap();
        assert!(peaks.found_fewer);
        assert_eq!(peaks.peaks.len(), 1);
        assert_eq!(peaks.peaks[0].0, 7);
    }

    #[test]
    fn kde_peak_locations_ignore_uniform_confidence_scaling() {
        let grid = grid_642();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut world = jittered_cluster([0.0, 1.0, 0.0], 80, 0.03, &mut rng);
        world.extend(jittered_cluster([0.0, 0.0, -1.0], 50, 0.03, &mut rng));
        let scaled: Vec<[f64; 3]> =
            world.iter().map(|v| [7.0 * v[0], 7.0 * v[1], 7.0 * v[2]]).collect();
        let cfg = KdeConfig { bandwidth_deg: 1.0, n_src: 2 };
        let a = kde_multi_source(&world, &cfg, grid).unwrap();
        let b = kde_multi_source(&scaled, &cfg, grid).unwrap();
        let ia: Vec<usize> = a.peaks.iter().map(|p| p.0).collect();
        let ib: Vec<usize> = b.peaks.iter().map(|p| p.0).collect();
        assert_eq!(ia, ib);
        for (pa, pb) in a.peaks.iter().zip(&b.peaks) {
            assert!((pb.1 - 7.0 * pa.1).abs() < 1e-9 * pb.1.max(1.0));
        }
    }

    #[test]
    fn kde_rejects_empty_and_bad_bandwidth() {
        let grid = grid_642();
        let cfg = KdeConfig::default();
        assert!(kde_multi_source(&[], &cfg, grid).is_err());
        let bad = KdeConfig { bandwidth_deg: 0.0, n_src: 1 };
        assert!(kde_multi_source(&[[1.0, 0.0, 0.0]], &bad, grid).is_err());
        let none = KdeConfig { bandwidth_deg: 1.0, n_src: 0 };
        assert!(kde_multi_source(&[[1.0, 0.0, 0.0]], &none, grid).is_err());
    }

    #[test]
    fn calibrated_samples_give_strictly_decreasing_curve() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples: Vec<(f64, f64)> = (0..2000)
            .map(|_| {
                let c: f64 = rng.gen_range(0.0..1.0);
                (c, 120.0 * (1.0 - c))
            })
            .collect();
        let report = confidence_curve(&samples).unwrap();
        assert_eq!(report.mean_error_deg.len(), CONFIDENCE_BINS);
        assert_eq!(report.edges.len(), CONFIDENCE_BINS + 1);
        for w in report.mean_error_deg.windows(2) {
            assert!(w[1] < w[0], "calibrated curve must strictly decrease: {w:?}");
        }
        assert_eq!(report.non_increasing_fraction(), 1.0);
    }

    #[test]
    fn constant_confidence_collapses_without_error() {
        let samples: Vec<(f64, f64)> = (0..200).map(|i| (0.5, (i % 90) as f64)).collect();
        let report = confidence_curve(&samples).unwrap();
        assert_eq!(report.mean_error_deg.len(), CONFIDENCE_BINS);
        assert!(report.edges.iter().all(|&e| e == 0.5));
        let total: usize = report.n_per_bin.iter().sum();
        assert_eq!(total, 200);
    }

    #[test]
    fn confidence_curve_needs_enough_samples() {
        let samples: Vec<(f64, f64)> = (0..19).map(|i| (i as f64, 1.0)).collect();
        assert!(confidence_curve(&samples).is_err());
        let bad = vec![(1.0, 200.0); 40];
        assert!(confidence_curve(&bad).is_err());
    }

    #[test]
    fn fraction_non_increasing_counts_pairs() {
        assert_eq!(fraction_non_increasing(&[3.0, 2.0, 2.0, 5.0, 1.0]), 0.75);
        assert_eq!(fraction_non_increasing(&[1.0]), 1.0);
    }

    fn tiny_dataset() -> &'static (tempfile::TempDir, Vec<EvalSession>) {
        static DATA: OnceLock<(tempfile::TempDir, Vec<EvalSession>)> = OnceLock::new();
        DATA.get_or_init(|| {
            let dir = tempdir().unwrap();
            let cfg = GenConfig {
                n_sessions: 2,
                duration_s: 1.0,
                condition: Condition::Anechoic,
                seed: 4242,
                ..GenConfig::default()
            };
            gen_dataset(&cfg, dir.path()).unwrap();
            let sessions =
                prepare_dataset(dir.path(), &FeatureConfig::default(), None).unwrap();
            (dir, sessions)
        })
    }

    #[test]
    fn full_window_sweep_on_one_session_has_zero_ci() {
        let (_dir, sessions) = tiny_dataset();
        let grid = grid_642();
        let array = ArraySpec::default();
        let table = crate::baselines::build_steering(
            &array,
            grid,
            sessions[0].y.sample_rate,
            sessions[0].y.frame_len,
        )
        .unwrap();
        let est = Estimator::SrpPhat { table: &table, grid };
        let rows =
            window_sweep(&est, &sessions[..1], &[WindowLen::Full], "anechoic").unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n, 1);
        assert_eq!(rows[0].ci_deg, 0.0);
        assert_eq!(rows[0].method, "srp-phat");
        assert_eq!(rows[0].l_win, "full");
        assert!(rows[0].mean_deg.is_finite());
    }

    #[test]
    fn window_sweep_is_deterministic() {
        let (_dir, sessions) = tiny_dataset();
        let grid = grid_642();
        let array = ArraySpec::default();
        let table = crate::baselines::build_steering(
            &array,
            grid,
            sessions[0].y.sample_rate,
            sessions[0].y.frame_len,
        )
        .unwrap();
        let est = Estimator::Lsdd { table: &table, grid };
        let lens = [WindowLen::Seconds(0.2), WindowLen::Full];
        let a = window_sweep(&est, sessions, &lens, "anechoic").unwrap();
        let b = window_sweep(&est, sessions, &lens, "anechoic").unwrap();
        assert_eq!(sweep_csv(&a), sweep_csv(&b));
        for row in &a {
            assert!(row.n > 0);
        }
    }

    #[test]
    fn csl_estimator_runs_through_the_sweep() {
        let (_dir, sessions) = tiny_dataset();
        let width = sessions[0].sf.features.width;
        let net: Mlp<f32> = Mlp::he_init(&[width, 16, 3], 7).unwrap();
        let est = Estimator::Csl { net: &net };
        let rows = window_sweep(
            &est,
            sessions,
            &[WindowLen::Seconds(0.2), WindowLen::Full],
            "anechoic",
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert!(row.n > 0);
            assert!((0.0..=180.0).contains(&row.mean_deg));
        }
    }

    #[test]
    fn confidence_analysis_bins_and_scatters() {
        let (_dir, sessions) = tiny_dataset();
        let feats: Vec<SessionFeatures> =
            sessions.iter().map(|es| es.sf.clone()).collect();
        let width = feats[0].features.width;
        let net: Mlp<f32> = Mlp::he_init(&[width, 16, 3], 21).unwrap();
        let (report, scatter) = confidence_analysis(&net, &feats).unwrap();
        assert_eq!(report.mean_error_deg.len(), CONFIDENCE_BINS);
        assert!(report.mean_error_deg.iter().all(|&e| (0.0..=180.0).contains(&e)));
        let total: usize = report.n_per_bin.iter().sum();
        assert!(!scatter.is_empty());
        // The overlay keeps roughly the top 5% of bins by confidence.
        assert!(scatter.len() <= total / 15);
        let cutoff = scatter.iter().map(|r| r.confidence).fold(f64::INFINITY, f64::min);
        assert!(cutoff >= report.edges[CONFIDENCE_BINS - 1]);
    }

    #[test]
    fn two_source_window_scores_clustered_field() {
        let grid = grid_642();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c1 = [1.0, 0.0, 0.0];
        let c2 = [0.0, 0.0, 1.0];
        let mut world = jittered_cluster(c1, 120, 0.015, &mut rng);
        world.extend(jittered_cluster(c2, 120, 0.015, &mut rng));
        let rot = RotationMatrix::identity();
        let truth = vec![unit::<Sensor>(c1), unit::<Sensor>(c2)];
        let cfg = KdeConfig { bandwidth_deg: 1.0, n_src: 2 };
        let d = two_source_window(&world, &truth, &rot, &cfg, grid).unwrap();
        assert!(d <= 2.0 * grid.resolution_deg(), "chamfer {d} too large");

        // A single-source field pushed through the same path should not
        // be penalized much for its weak second peak.
        let solo = jittered_cluster(c1, 120, 0.015, &mut rng);
        let d1 = two_source_window(&solo, &[unit::<Sensor>(c1)], &rot, &cfg, grid).unwrap();
        assert!(d1 <= 2.0 * grid.resolution_deg(), "single-source chamfer {d1}");
    }

    #[test]
    fn report_writers_round_trip() {
        let dir = tempdir().unwrap();
        let rows = vec![SweepRow {
            method: "lsdd".into(),
            condition: "anechoic".into(),
            l_win: "0.05".into(),
            mean_deg: 1.5,
            ci_deg: 0.25,
            n: 42,
        }];
        let csv_path = dir.path().join("report.csv");
        let json_path = dir.path().join("report.json");
        write_sweep_csv(&csv_path, &rows).unwrap();
        write_sweep_json(&json_path, &rows).unwrap();
        let csv = fs::read_to_string(&csv_path).unwrap();
        assert_eq!(csv, "method,condition,l_win,mean_deg,ci_deg,n\nlsdd,anechoic,0.05,1.5,0.25,42\n");
        let back: Vec<SweepRow> =
            serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(back, rows);

        let report = ConfidenceReport {
            edges: (0..=CONFIDENCE_BINS).map(|i| i as f64).collect(),
            mean_error_deg: vec![1.0; CONFIDENCE_BINS],
            n_per_bin: vec![5; CONFIDENCE_BINS],
        };
        write_confidence_csv(&dir.path().join("conf.csv"), &report).unwrap();
        write_scatter_csv(
            &dir.path().join("scatter.csv"),
            &[ScatterRow { session_id: "s0".into(), k: 3, n: 9, confidence: 0.8 }],
        )
        .unwrap();
        write_density_csv(&dir.path().join("density.csv"), &[1.0, 0.0]).unwrap();
        let density = fs::read_to_string(dir.path().join("density.csv")).unwrap();
        assert!(density.starts_with("grid_index,log_psi\n0,0\n"));
    }
}
