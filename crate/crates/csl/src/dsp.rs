//! STFT analysis, per-bin feature extraction, energy-based bin selection,
//! interval splitting, and GCC-PHAT delay estimation.

use std::io::{Read as _, Write as _};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{CslError, Result};

pub const DEFAULT_FRAME_LEN: usize = 400;
pub const DEFAULT_HOP: usize = 160;
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
/// Bin-selection defaults: threshold relative to the loudest frame at the
/// same frequency, restricted to a frequency band in Hz.
pub const DEFAULT_THRESHOLD_DB: f64 = -40.0;
pub const DEFAULT_BAND_HZ: (f64, f64) = (340.0, 8000.0);
/// Break-point ratio bounds for sub-interval splits.
pub const DEFAULT_C1: f64 = 0.2;
pub const DEFAULT_C2: f64 = 0.8;

/// One-sided STFT coefficients indexed [channel][bin][frame].
#[derive(Clone, Debug)]
pub struct StftTensor {
    coeffs: Vec<Complex64>,
    pub n_ch: usize,
    pub n_bins: usize,
    pub n_frames: usize,
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
}

impl StftTensor {
    #[inline]
    pub fn at(&self, m: usize, k: usize, n: usize) -> Complex64 {
        self.coeffs[(m * self.n_bins + k) * self.n_frames + n]
    }

    /// Contiguous frame axis for fixed (channel, bin).
    #[inline]
    pub fn frames_of(&self, m: usize, k: usize) -> &[Complex64] {
        let base = (m * self.n_bins + k) * self.n_frames;
        &self.coeffs[base..base + self.n_frames]
    }

    pub fn k_max(&self) -> usize {
        self.n_bins - 1
    }

    pub fn freq_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.frame_len as f64
    }

    /// Inclusive bin index range whose center frequencies lie in `band`.
    pub fn band_bins(&self, band: (f64, f64)) -> Result<(usize, usize)> {
        let df = self.sample_rate as f64 / self.frame_len as f64;
        let k_lo = (band.0 / df).ceil().max(0.0) as usize;
        let k_hi = ((band.1 / df).floor() as usize).min(self.k_max());
        if k_lo > k_hi {
            return Err(CslError::invalid(format!(
                "band {:?} Hz selects no bins at {} Hz resolution",
                band, df
            )));
        }
        Ok((k_lo, k_hi))
    }
}

/// Number of complete frames: floor((n_samples − frame_len)/hop) + 1.
pub fn frame_count(n_samples: usize, frame_len: usize, hop: usize) -> Option<usize> {
    if n_samples < frame_len {
        None
    } else {
        Some((n_samples - frame_len) / hop + 1)
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / len as f64).cos())
        .collect()
}

/// Multichannel STFT with non-centered full frames (no padding), so frame n
/// starts at sample n·hop and aligns exactly with rotation index n.
pub fn stft(audio: &[Vec<f64>], sample_rate: u32, frame_len: usize, hop: usize) -> Result<StftTensor> {
    if audio.is_empty() {
        return Err(CslError::invalid("no channels"));
    }
    let n_samples = audio[0].len();
    if audio.iter().any(|c| c.len() != n_samples) {
        return Err(CslError::invalid("channels have unequal lengths"));
    }
    let n_frames = frame_count(n_samples, frame_len, hop).ok_or_else(|| {
        CslError::invalid(format!(
            "audio of {n_samples} samples is shorter than one frame ({frame_len})"
        ))
    })?;
    let n_bins = frame_len / 2 + 1;
    let window = hann(frame_len);
    let fft = FftPlanner::new().plan_fft_forward(frame_len);
    let mut coeffs = vec![Complex64::default(); audio.len() * n_bins * n_frames];
    let mut buf = vec![Complex64::default(); frame_len];
    for (m, ch) in audio.iter().enumerate() {
        for n in 0..n_frames {
            let start = n * hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(ch[start + i] * window[i], 0.0);
            }
            fft.process(&mut buf);
            for k in 0..n_bins {
                coeffs[(m * n_bins + k) * n_frames + n] = buf[k];
            }
        }
    }
    Ok(StftTensor {
        coeffs,
        n_ch: audio.len(),
        n_bins,
        n_frames,
        sample_rate,
        frame_len,
        hop,
    })
}

pub fn stft_default(audio: &[Vec<f64>], sample_rate: u32) -> Result<StftTensor> {
    stft(audio, sample_rate, DEFAULT_FRAME_LEN, DEFAULT_HOP)
}

/// Time-frequency bins that survived the per-frequency energy threshold.
#[derive(Clone, Debug)]
pub struct BinSelection {
    /// (k, n) pairs, ordered by k then n.
    pub bins: Vec<(u16, u16)>,
    pub threshold_db: f64,
    pub band_hz: (f64, f64),
}

/// Keeps bin (k, n) iff f_k lies in `band` and the max-over-channels
/// magnitude at (k, n) is nonzero and within `threshold_db` of the loudest
/// frame at the same k. An empty result is not an error; callers skip the
/// session for training.
pub fn select_bins(y: &StftTensor, threshold_db: f64, band: (f64, f64)) -> Result<BinSelection> {
    let (k_lo, k_hi) = y.band_bins(band)?;
    let factor = 10f64.powf(threshold_db / 20.0);
    let mut bins = Vec::new();
    let mut stat = vec![0.0f64; y.n_frames];
    for k in k_lo..=k_hi {
        for s in stat.iter_mut() {
            *s = 0.0;
        }
        for m in 0..y.n_ch {
            for (n, c) in y.frames_of(m, k).iter().enumerate() {
                let mag = c.norm();
                if mag > stat[n] {
                    stat[n] = mag;
                }
            }
        }
        let col_max = stat.iter().cloned().fold(0.0f64, f64::max);
        if col_max <= 0.0 {
            continue;
        }
        let cut = col_max * factor;
        for (n, &s) in stat.iter().enumerate() {
            if s > 0.0 && s >= cut {
                bins.push((k as u16, n as u16));
            }
        }
    }
    Ok(BinSelection { bins, threshold_db, band_hz: band })
}

/// Per-bin input vectors: [Re Y¹..Y^M, Im Y¹..Y^M] scaled to unit norm, with
/// k̃ = k/k_max appended. Width is 2M+1 (17 for the default 8-mic array).
#[derive(Clone, Debug)]
pub struct FeatureTensor {
    pub data: Vec<f32>,
    pub width: usize,
    /// (k, n) per row, same order as `data` rows.
    pub bins: Vec<(u16, u16)>,
    pub k_max: usize,
}

impl FeatureTensor {
    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

pub fn extract_features(y: &StftTensor, sel: &BinSelection) -> FeatureTensor {
    let m = y.n_ch;
    let width = 2 * m + 1;
    let k_max = y.k_max();
    let mut data = Vec::with_capacity(sel.bins.len() * width);
    let mut bins = Vec::with_capacity(sel.bins.len());
    let mut v = vec![0.0f64; 2 * m];
    for &(k, n) in &sel.bins {
        let mut norm2 = 0.0;
        for ch in 0..m {
            let c = y.at(ch, k as usize, n as usize);
            v[ch] = c.re;
            v[m + ch] = c.im;
            norm2 += c.re * c.re + c.im * c.im;
        }
        if norm2 <= 0.0 {
            continue; // all-zero bins are dropped, not NaN-ed
        }
        let inv = 1.0 / norm2.sqrt();
        for &x in v.iter() {
            data.push((x * inv) as f32);
        }
        data.push((k as f64 / k_max as f64) as f32);
        bins.push((k, n));
    }
    FeatureTensor { data, width, bins, k_max }
}

/// Contiguous two-way split of an interval of frames: frames before
/// `break_point` form sub-interval 1, the rest sub-interval 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IntervalSplit {
    pub n_frames: usize,
    pub break_point: usize,
    /// Set when no break point satisfies the ratio bounds and the nearest
    /// admissible one was used instead.
    pub fallback: bool,
}

impl IntervalSplit {
    #[inline]
    pub fn sub_of(&self, frame: usize) -> u8 {
        if frame < self.break_point {
            1
        } else {
            2
        }
    }
}

/// Admissible break points b with c1 ≤ b/(n−b) ≤ c2, intersected with
/// [1, n−1]. Empty when the interval is too short for the bounds.
pub fn admissible_breaks(n_frames: usize, c1: f64, c2: f64) -> Option<(usize, usize)> {
    if n_frames < 2 {
        return None;
    }
    let n = n_frames as f64;
    let lo = ((c1 * n / (1.0 + c1)).ceil() as usize).max(1);
    let hi = ((c2 * n / (1.0 + c2)).floor() as usize).min(n_frames - 1);
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

/// Samples a break point uniformly from the admissible range; when none is
/// admissible, falls back to the break point whose ratio violates the bounds
/// least (flagged). Errors on intervals shorter than 2 frames.
pub fn split_interval<R: Rng>(
    n_frames: usize,
    c1: f64,
    c2: f64,
    rng: &mut R,
) -> Result<IntervalSplit> {
    if !(0.0 < c1 && c1 <= c2) {
        return Err(CslError::invalid(format!("ratio bounds ({c1}, {c2}) must satisfy 0 < c1 ≤ c2")));
    }
    if n_frames < 2 {
        return Err(CslError::invalid(format!(
            "interval of {n_frames} frames cannot be split"
        )));
    }
    if let Some((lo, hi)) = admissible_breaks(n_frames, c1, c2) {
        let b = rng.gen_range(lo..=hi);
        return Ok(IntervalSplit { n_frames, break_point: b, fallback: false });
    }
    let mut best = 1;
    let mut best_violation = f64::INFINITY;
    for b in 1..n_frames {
        let ratio = b as f64 / (n_frames - b) as f64;
        let violation = if ratio < c1 {
            c1 - ratio
        } else if ratio > c2 {
            ratio - c2
        } else {
            0.0
        };
        if violation < best_violation {
            best_violation = violation;
            best = b;
        }
    }
    Ok(IntervalSplit { n_frames, break_point: best, fallback: true })
}

/// PHAT-weighted generalized cross-correlation delay between two equal-length
/// snippets, in (fractional) samples. Positive output means `a` lags `b`.
/// Returns (delay, peak value).
pub fn gcc_phat_delay(a: &[f64], b: &[f64], max_lag: usize) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CslError::invalid("gcc inputs must be equal-length and non-empty"));
    }
    if max_lag >= a.len() {
        return Err(CslError::invalid("max_lag must be below the snippet length"));
    }
    let n = (a.len() + max_lag + 1).next_power_of_two().max(8);
    let mut planner = FftPlanner::new();
    let fwd: Arc<dyn Fft<f64>> = planner.plan_fft_forward(n);
    let inv: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(n);
    let mut fa = vec![Complex64::default(); n];
    let mut fb = vec![Complex64::default(); n];
    for (dst, &src) in fa.iter_mut().zip(a) {
        *dst = Complex64::new(src, 0.0);
    }
    for (dst, &src) in fb.iter_mut().zip(b) {
        *dst = Complex64::new(src, 0.0);
    }
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    let mut cross: Vec<Complex64> = fa
        .iter()
        .zip(&fb)
        .map(|(x, y)| {
            let c = x * y.conj();
            let mag = c.norm();
            if mag < 1e-12 {
                Complex64::default()
            } else {
                c / mag
            }
        })
        .collect();
    inv.process(&mut cross);
    let corr = |lag: i64| -> f64 {
        let idx = lag.rem_euclid(n as i64) as usize;
        cross[idx].re
    };
    let mut best_lag = 0i64;
    let mut best = f64::NEG_INFINITY;
    for lag in -(max_lag as i64)..=(max_lag as i64) {
        let v = corr(lag);
        if v > best {
            best = v;
            best_lag = lag;
        }
    }
    // Parabolic sub-sample refinement around the peak.
    let (ym, y0, yp) = (corr(best_lag - 1), best, corr(best_lag + 1));
    let denom = ym - 2.0 * y0 + yp;
    let frac = if denom.abs() > 1e-12 {
        (0.5 * (ym - yp) / denom).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    Ok((best_lag as f64 + frac, best))
}

#[derive(Serialize, Deserialize)]
struct FeatureSidecar {
    shape: [usize; 2],
    dtype: String,
    session_id: String,
    k_max: usize,
    bins: Vec<(u16, u16)>,
}

/// Persists features as a raw little-endian f32 matrix plus a JSON sidecar
/// describing shape and bin coordinates (training-cache reuse).
pub fn write_feature_dump(base: &Path, session_id: &str, f: &FeatureTensor) -> Result<()> {
    let side = FeatureSidecar {
        shape: [f.len(), f.width],
        dtype: "f32".into(),
        session_id: session_id.into(),
        k_max: f.k_max,
        bins: f.bins.clone(),
    };
    let mut bin = std::io::BufWriter::new(std::fs::File::create(base.with_extension("bin"))?);
    for v in &f.data {
        bin.write_all(&v.to_le_bytes())?;
    }
    bin.flush()?;
    std::fs::write(
        base.with_extension("json"),
        serde_json::to_string_pretty(&side)?,
    )?;
    Ok(())
}

pub fn read_feature_dump(base: &Path) -> Result<(FeatureTensor, String)> {
    let side: FeatureSidecar =
        serde_json::from_str(&std::fs::read_to_string(base.with_extension("json"))?)?;
    if side.dtype != "f32" {
        return Err(CslError::invalid(format!("unsupported dtype {}", side.dtype)));
    }
    let mut raw = Vec::new();
    std::fs::File::open(base.with_extension("bin"))?.read_to_end(&mut raw)?;
    let expect = side.shape[0] * side.shape[1] * 4;
    if raw.len() != expect {
        return Err(CslError::invalid(format!(
            "feature dump holds {} bytes, expected {expect}",
            raw.len()
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((
        FeatureTensor {
            data,
            width: side.shape[1],
            bins: side.bins,
            k_max: side.k_max,
        },
        side.session_id,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn white_noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn three_seconds_gives_298_frames() {
        let audio = vec![white_noise(48_000, 1)];
        let y = stft_default(&audio, 16_000).unwrap();
        assert_eq!(y.n_frames, 298);
        assert_eq!(y.n_bins, 201);
    }

    #[test]
    fn tone_lands_in_bin_25() {
        let tone: Vec<f64> = (0..8000)
            .map(|i| (std::f64::consts::TAU * 1000.0 * i as f64 / 16_000.0).sin())
            .collect();
        let y = stft_default(&[tone], 16_000).unwrap();
        let (mut best_k, mut best) = (0, 0.0);
        for k in 0..y.n_bins {
            let mag = y.at(0, k, 3).norm();
            if mag > best {
                best = mag;
                best_k = k;
            }
        }
        assert_eq!(best_k, 25);
    }

    #[test]
    fn zero_input_gives_zero_tensor() {
        let y = stft_default(&[vec![0.0; 4000]], 16_000).unwrap();
        assert!(y.coeffs.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn too_short_input_rejected() {
        assert!(stft_default(&[vec![0.0; 399]], 16_000).is_err());
    }

    #[test]
    fn parseval_on_white_noise() {
        let x = white_noise(4000, 7);
        let y = stft_default(&[x.clone()], 16_000).unwrap();
        let w = hann(400);
        for n in [0usize, 5, 20] {
            let t_energy: f64 = (0..400)
                .map(|i| {
                    let s = x[n * 160 + i] * w[i];
                    s * s
                })
                .sum();
            let mut f_energy = y.at(0, 0, n).norm_sqr() + y.at(0, 200, n).norm_sqr();
            for k in 1..200 {
                f_energy += 2.0 * y.at(0, k, n).norm_sqr();
            }
            f_energy /= 400.0;
            assert!(
                (t_energy - f_energy).abs() <= 1e-6 * t_energy,
                "frame {n}: {t_energy} vs {f_energy}"
            );
        }
    }

    #[test]
    fn overlap_add_reconstructs_interior() {
        // Weighted overlap-add with a matching synthesis window recovers the
        // interior of the signal; error must sit below −40 dB.
        let x = white_noise(8000, 9);
        let y = stft_default(&[x.clone()], 16_000).unwrap();
        let w = hann(400);
        let mut planner = FftPlanner::new();
        let inv = planner.plan_fft_inverse(400);
        let mut acc = vec![0.0f64; 8000];
        let mut den = vec![0.0f64; 8000];
        let mut buf = vec![Complex64::default(); 400];
        for n in 0..y.n_frames {
            for k in 0..=200 {
                buf[k] = y.at(0, k, n);
            }
            for k in 201..400 {
                buf[k] = y.at(0, 400 - k, n).conj();
            }
            inv.process(&mut buf);
            for i in 0..400 {
                let s = buf[i].re / 400.0;
                acc[n * 160 + i] += s * w[i];
                den[n * 160 + i] += w[i] * w[i];
            }
        }
        let mut err = 0.0;
        let mut sig = 0.0;
        for i in 800..7200 {
            let rec = acc[i] / den[i].max(1e-12);
            err += (rec - x[i]).powi(2);
            sig += x[i] * x[i];
        }
        assert!(err / sig < 1e-4, "reconstruction at {} dB", 10.0 * (err / sig).log10());
    }

    fn tensor_with_single_bin(m: usize) -> StftTensor {
        // one channel nonzero at (k_max, 0)
        let n_bins = 201;
        let n_frames = 4;
        let mut coeffs = vec![Complex64::default(); m * n_bins * n_frames];
        coeffs[(0 * n_bins + 200) * n_frames] = Complex64::new(1.0, 0.0);
        StftTensor {
            coeffs,
            n_ch: m,
            n_bins,
            n_frames,
            sample_rate: 16_000,
            frame_len: 400,
            hop: 160,
        }
    }

    #[test]
    fn feature_layout_and_k_tilde() {
        let y = tensor_with_single_bin(8);
        let sel = BinSelection {
            bins: vec![(200, 0)],
            threshold_db: -40.0,
            band_hz: DEFAULT_BAND_HZ,
        };
        let f = extract_features(&y, &sel);
        assert_eq!(f.width, 17);
        let row = f.row(0);
        assert!((row[0] - 1.0).abs() < 1e-6);
        assert!(row[1..16].iter().all(|&v| v == 0.0));
        assert!((row[16] - 1.0).abs() < 1e-7, "k̃ at Nyquist must be 1");
    }

    #[test]
    fn features_invariant_to_positive_scaling() {
        let audio: Vec<Vec<f64>> = (0..4).map(|c| white_noise(4000, 20 + c)).collect();
        let y1 = stft_default(&audio, 16_000).unwrap();
        let scaled: Vec<Vec<f64>> = audio
            .iter()
            .map(|ch| ch.iter().map(|v| v * 10.0).collect())
            .collect();
        let y2 = stft_default(&scaled, 16_000).unwrap();
        let sel = select_bins(&y1, -40.0, DEFAULT_BAND_HZ).unwrap();
        let sel2 = select_bins(&y2, -40.0, DEFAULT_BAND_HZ).unwrap();
        assert_eq!(sel.bins, sel2.bins, "bin selection must ignore global gain");
        let (f1, f2) = (extract_features(&y1, &sel), extract_features(&y2, &sel2));
        for (a, b) in f1.data.iter().zip(&f2.data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn feature_rows_are_unit_norm() {
        let audio: Vec<Vec<f64>> = (0..8).map(|c| white_noise(4000, 40 + c)).collect();
        let y = stft_default(&audio, 16_000).unwrap();
        let sel = select_bins(&y, -40.0, DEFAULT_BAND_HZ).unwrap();
        let f = extract_features(&y, &sel);
        assert!(!f.is_empty());
        for i in 0..f.len() {
            let row = f.row(i);
            let n: f32 = row[..16].iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_tone_selects_every_frame() {
        let tone: Vec<f64> = (0..48_000)
            .map(|i| (std::f64::consts::TAU * 1000.0 * i as f64 / 16_000.0).sin())
            .collect();
        let y = stft_default(&[tone], 16_000).unwrap();
        let sel = select_bins(&y, -40.0, DEFAULT_BAND_HZ).unwrap();
        let hits = sel.bins.iter().filter(|&&(k, _)| k == 25).count();
        assert_eq!(hits, y.n_frames);
    }

    #[test]
    fn out_of_band_bins_never_selected() {
        let audio: Vec<Vec<f64>> = vec![white_noise(48_000, 50)];
        let y = stft_default(&audio, 16_000).unwrap();
        let sel = select_bins(&y, -40.0, DEFAULT_BAND_HZ).unwrap();
        // 340 Hz sits between bins 8 (320 Hz) and 9 (360 Hz).
        assert!(sel.bins.iter().all(|&(k, _)| k >= 9 && k <= 200));
    }

    #[test]
    fn infinitely_permissive_threshold_takes_all_nonzero_bins() {
        let audio: Vec<Vec<f64>> = vec![white_noise(4000, 51)];
        let y = stft_default(&audio, 16_000).unwrap();
        let sel = select_bins(&y, -1e9, DEFAULT_BAND_HZ).unwrap();
        let mut nonzero = 0;
        for k in 9..=200usize {
            for n in 0..y.n_frames {
                if y.at(0, k, n).norm() > 0.0 {
                    nonzero += 1;
                }
            }
        }
        assert_eq!(sel.bins.len(), nonzero);
    }

    #[test]
    fn split_bounds_for_hundred_frames() {
        let (lo, hi) = admissible_breaks(100, 0.2, 0.8).unwrap();
        assert_eq!((lo, hi), (17, 44));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let s = split_interval(100, 0.2, 0.8, &mut rng).unwrap();
            assert!(!s.fallback);
            assert!((17..=44).contains(&s.break_point));
            let ratio = s.break_point as f64 / (100 - s.break_point) as f64;
            assert!((0.2..=0.8).contains(&ratio));
        }
    }

    #[test]
    fn two_frame_interval_falls_back_with_flag() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = split_interval(2, 0.2, 0.8, &mut rng).unwrap();
        assert_eq!(s.break_point, 1);
        assert!(s.fallback);
        assert!(split_interval(1, 0.2, 0.8, &mut rng).is_err());
    }

    #[test]
    fn split_is_reproducible_and_contiguous() {
        let a = split_interval(298, 0.2, 0.8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = split_interval(298, 0.2, 0.8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let n = rng.gen_range(2..500);
            let s = split_interval(n, 0.2, 0.8, &mut rng).unwrap();
            assert!(s.break_point >= 1 && s.break_point < n);
            // contiguity: membership flips exactly once
            let flips = (1..n)
                .filter(|&f| s.sub_of(f) != s.sub_of(f - 1))
                .count();
            assert_eq!(flips, 1);
            if !s.fallback {
                let ratio = s.break_point as f64 / (n - s.break_point) as f64;
                assert!((0.2..=0.8).contains(&ratio));
            }
        }
    }

    #[test]
    fn gcc_phat_recovers_integer_and_fractional_delays() {
        let base = white_noise(2048, 60);
        // b delayed by 5 relative to a → a leads → negative output
        let a: Vec<f64> = base[5..1500 + 5].to_vec();
        let b: Vec<f64> = base[0..1500].to_vec();
        let (d, peak) = gcc_phat_delay(&b, &a, 32).unwrap();
        assert!((d - 5.0).abs() < 0.25, "got {d}");
        assert!(peak > 0.0);
        let (d2, _) = gcc_phat_delay(&a, &b, 32).unwrap();
        assert!((d2 + 5.0).abs() < 0.25, "got {d2}");

        // fractional delay via sinc interpolation of a bandlimited signal
        let long = white_noise(4096, 61);
        let frac = 2.4f64;
        let delayed: Vec<f64> = (0..2000)
            .map(|i| {
                let t = i as f64 + 512.0 - frac;
                let lo = (t.floor() as isize - 30).max(0) as usize;
                let hi = ((t.floor() as isize) + 30).min(4095) as usize;
                (lo..=hi)
                    .map(|j| {
                        let x = t - j as f64;
                        let s = if x.abs() < 1e-12 {
                            1.0
                        } else {
                            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
                        };
                        long[j] * s
                    })
                    .sum()
            })
            .collect();
        let reference: Vec<f64> = long[512..512 + 2000].to_vec();
        let (d3, _) = gcc_phat_delay(&delayed, &reference, 16).unwrap();
        // parabolic refinement of the whitened (sinc-shaped) peak carries a
        // known sub-sample bias; quarter-sample accuracy is what sign checks need
        assert!((d3 - frac).abs() < 0.25, "fractional delay got {d3}");
    }

    #[test]
    fn feature_dump_round_trip() {
        let audio: Vec<Vec<f64>> = (0..8).map(|c| white_noise(4000, 70 + c)).collect();
        let y = stft_default(&audio, 16_000).unwrap();
        let sel = select_bins(&y, -40.0, DEFAULT_BAND_HZ).unwrap();
        let f = extract_features(&y, &sel);
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("feat");
        write_feature_dump(&base, "s0001", &f).unwrap();
        let (g, id) = read_feature_dump(&base).unwrap();
        assert_eq!(id, "s0001");
        assert_eq!(f.bins, g.bins);
        assert_eq!(f.data, g.data);
    }
}
