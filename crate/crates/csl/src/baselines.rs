//! Reference DOA estimators with known array geometry: SRP-PHAT over a
//! spherical grid and least-squares direct-path dominance (LSDD) with a soft
//! time-frequency mask. Both pool evidence in the sensor frame, which is
//! exactly what makes them suffer on long windows when the array rotates.

use rustfft::num_complex::{Complex32, Complex64};

use crate::dsp::StftTensor;
use crate::error::{CslError, Result};
use crate::geometry::SphericalGrid;
use crate::sim::ArraySpec;
use crate::train::DoaEstimate;

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const SRP_BAND_HZ: (f64, f64) = (340.0, 6000.0);
pub const LSDD_BAND_HZ: (f64, f64) = (1800.0, 3600.0);
pub const LSDD_ALPHA: f64 = 3.0;
/// CPSD terms below this magnitude carry no usable phase and are skipped.
pub const CPSD_FLOOR: f64 = 1e-12;
/// Mask floor in radians: exact steering matches would otherwise get
/// infinite weight.
pub const MASK_FLOOR_RAD: f64 = 1e-6;

/// Far-field steering entries H^m_k(r_j) = exp(−i·2π·f_k·τ_m(r_j)) with
/// τ_m(r) = −⟨p_m, r⟩/c (plane wave arriving from direction r reaches the
/// mic with the largest ⟨p, r⟩ first). Laid out [k][j][m] so both scoring
/// loops stream one contiguous k-block at a time.
pub struct SteeringTable {
    h: Vec<Complex32>,
    pub n_mics: usize,
    pub n_bins: usize,
    pub n_dirs: usize,
    pub sample_rate: u32,
    pub frame_len: usize,
}

impl SteeringTable {
    #[inline]
    pub fn at(&self, k: usize, j: usize) -> &[Complex32] {
        let base = (k * self.n_dirs + j) * self.n_mics;
        &self.h[base..base + self.n_mics]
    }
}

pub fn build_steering(
    array: &ArraySpec,
    grid: &SphericalGrid,
    sample_rate: u32,
    frame_len: usize,
) -> Result<SteeringTable> {
    if frame_len == 0 || sample_rate == 0 {
        return Err(CslError::invalid("steering table needs a frame length and sample rate"));
    }
    let mics = array.mic_positions();
    let n_mics = mics.len();
    let n_bins = frame_len / 2 + 1;
    let n_dirs = grid.len();
    let df = sample_rate as f64 / frame_len as f64;
    let mut h = vec![Complex32::default(); n_bins * n_dirs * n_mics];
    for j in 0..n_dirs {
        let r = grid.direction_as_sensor(j);
        let ra = r.as_array();
        for (m, p) in mics.iter().enumerate() {
            let tau = -(p[0] * ra[0] + p[1] * ra[1] + p[2] * ra[2]) / SPEED_OF_SOUND;
            for k in 0..n_bins {
                let phase = -std::f64::consts::TAU * (k as f64 * df) * tau;
                h[(k * n_dirs + j) * n_mics + m] =
                    Complex32::new(phase.cos() as f32, phase.sin() as f32);
            }
        }
    }
    Ok(SteeringTable { h, n_mics, n_bins, n_dirs, sample_rate, frame_len })
}

fn check_window(y: &StftTensor, table: &SteeringTable, window: (usize, usize)) -> Result<()> {
    if y.n_ch != table.n_mics || y.frame_len != table.frame_len || y.sample_rate != table.sample_rate
    {
        return Err(CslError::invalid(
            "STFT and steering table disagree on mics, frame length, or sample rate",
        ));
    }
    if window.0 >= window.1 || window.1 > y.n_frames {
        return Err(CslError::invalid(format!(
            "window [{}, {}) invalid for {} frames",
            window.0, window.1, y.n_frames
        )));
    }
    Ok(())
}

fn estimate_at_center(
    grid: &SphericalGrid,
    window: (usize, usize),
    j_best: usize,
    score: f64,
    n_bins: usize,
) -> DoaEstimate {
    let center = window.0 + (window.1 - window.0 - 1) / 2;
    DoaEstimate {
        frame_range: window,
        center_frame: center,
        world: None,
        sensor_per_frame: vec![(center, grid.direction_as_sensor(j_best))],
        confidence_mass: score,
        n_bins,
    }
}

/// Steered response power with phase transform: CPSDs against mic 0 are
/// averaged over the window, magnitude-normalized, and matched against the
/// steering phases. The argmax direction is reported at the window's center
/// frame.
pub fn srp_phat(
    y: &StftTensor,
    table: &SteeringTable,
    grid: &SphericalGrid,
    window: (usize, usize),
    band: (f64, f64),
) -> Result<DoaEstimate> {
    check_window(y, table, window)?;
    let (k_lo, k_hi) = y.band_bins(band)?;
    let m_count = y.n_ch;
    let frames = window.1 - window.0;

    // per (k, m): window-averaged CPSD vs mic 0, then phase-normalized
    let n_k = k_hi - k_lo + 1;
    let mut phat = vec![Complex32::default(); n_k * m_count];
    let mut keep = vec![false; n_k * m_count];
    for k in k_lo..=k_hi {
        for m in 0..m_count {
            let mut acc = Complex64::default();
            for n in window.0..window.1 {
                acc += y.at(m, k, n) * y.at(0, k, n).conj();
            }
            acc /= frames as f64;
            let mag = acc.norm();
            let idx = (k - k_lo) * m_count + m;
            if mag >= CPSD_FLOOR {
                phat[idx] = Complex32::new((acc.re / mag) as f32, (acc.im / mag) as f32);
                keep[idx] = true;
            }
        }
    }

    let mut scores = vec![0.0f64; grid.len()];
    let mut k_used = 0usize;
    for k in k_lo..=k_hi {
        let row = &phat[(k - k_lo) * m_count..(k - k_lo + 1) * m_count];
        let kept = &keep[(k - k_lo) * m_count..(k - k_lo + 1) * m_count];
        if !kept.iter().any(|&b| b) {
            continue;
        }
        k_used += 1;
        for j in 0..grid.len() {
            let h = table.at(k, j);
            let mut acc = Complex32::default();
            for m in 0..m_count {
                if kept[m] {
                    acc += h[m].conj() * row[m];
                }
            }
            scores[j] += acc.norm_sqr() as f64;
        }
    }
    if k_used == 0 {
        // silence: every CPSD term fell below the floor, nothing to steer on
        return Ok(DoaEstimate::empty(window));
    }
    let (j_best, best) = argmax(&scores);
    Ok(estimate_at_center(grid, window, j_best, best, k_used))
}

/// LSDD spatial-spectrum scores per grid direction for one window, plus the
/// number of usable bins. Exposed so the α → 0 limit can be checked against
/// the unweighted average directly.
pub fn lsdd_scores(
    y: &StftTensor,
    table: &SteeringTable,
    grid: &SphericalGrid,
    window: (usize, usize),
    band: (f64, f64),
    alpha: f64,
) -> Result<(Vec<f64>, usize)> {
    check_window(y, table, window)?;
    let (k_lo, k_hi) = y.band_bins(band)?;
    let m_count = y.n_ch;
    let sqrt_m = (m_count as f64).sqrt() as f32;
    let n_dirs = grid.len();

    let mut scores = vec![0.0f64; n_dirs];
    let mut n_used = 0usize;
    let mut yv = vec![Complex32::default(); m_count];
    let mut phi = vec![0.0f32; n_dirs];
    for k in k_lo..=k_hi {
        for n in window.0..window.1 {
            let mut norm2 = 0.0f64;
            for m in 0..m_count {
                let c = y.at(m, k, n);
                norm2 += c.norm_sqr();
                yv[m] = Complex32::new(c.re as f32, c.im as f32);
            }
            if norm2 <= 0.0 {
                continue;
            }
            n_used += 1;
            let denom = sqrt_m * (norm2 as f32).sqrt();
            let mut u_max = 0.0f32;
            for j in 0..n_dirs {
                let h = table.at(k, j);
                let mut acc = Complex32::default();
                for m in 0..m_count {
                    acc += h[m].conj() * yv[m];
                }
                let u = (acc.norm() / denom).clamp(0.0, 1.0);
                if u > u_max {
                    u_max = u;
                }
                phi[j] = u.acos();
            }
            let w = (u_max.acos() as f64).max(MASK_FLOOR_RAD);
            let weight = w.powf(-alpha);
            for j in 0..n_dirs {
                scores[j] += weight * phi[j] as f64;
            }
        }
    }
    Ok((scores, n_used))
}

/// Direct-path-dominance estimator: per-bin angular distance to each
/// steering vector, weighted by w^{−α} where w is the bin's best match
/// anywhere on the grid. Windows with only zero bins yield an empty
/// estimate.
pub fn lsdd(
    y: &StftTensor,
    table: &SteeringTable,
    grid: &SphericalGrid,
    window: (usize, usize),
    band: (f64, f64),
    alpha: f64,
) -> Result<DoaEstimate> {
    let (scores, n_used) = lsdd_scores(y, table, grid, window, band, alpha)?;
    if n_used == 0 {
        return Ok(DoaEstimate::empty(window));
    }
    let (j_best, best) = argmin(&scores);
    Ok(estimate_at_center(grid, window, j_best, best, n_used))
}

fn argmax(xs: &[f64]) -> (usize, f64) {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, &x) in xs.iter().enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

fn argmin(xs: &[f64]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, &x) in xs.iter().enumerate() {
        if x < best.1 {
            best = (i, x);
        }
    }
    best
}
