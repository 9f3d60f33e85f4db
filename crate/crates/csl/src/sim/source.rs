//! Dry source material: a deterministic speech-like synthesizer and an
//! ingestion path for user-supplied WAV recordings.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{CslError, Result};
use crate::sim::{SignalKind, SourceSignal};

const FS: f64 = 16_000.0;

/// Speech-like test signal: alternating voiced stretches (drifting-pitch
/// harmonic stacks with a −6 dB/octave tilt) and unvoiced noise bursts
/// (2–8 kHz), separated by short silences. Deterministic per seed.
pub fn synth_speech(duration_s: f64, seed: u64) -> Result<SourceSignal> {
    if !(1.0..=10.0).contains(&duration_s) {
        return Err(CslError::invalid(format!(
            "duration {duration_s} s outside [1, 10] s"
        )));
    }
    let n = (duration_s * FS).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0f64; n];
    let mut pos = 0usize;
    let mut voiced_next = true;
    while pos < n {
        let seg_len = if voiced_next {
            (rng.gen_range(0.15..0.40) * FS) as usize
        } else {
            (rng.gen_range(0.08..0.20) * FS) as usize
        };
        let seg_len = seg_len.min(n - pos);
        if voiced_next {
            voiced_segment(&mut out[pos..pos + seg_len], &mut rng);
        } else {
            unvoiced_segment(&mut out[pos..pos + seg_len], &mut rng);
        }
        pos += seg_len;
        voiced_next = !voiced_next;
        if pos < n && rng.gen_bool(0.7) {
            let gap = ((rng.gen_range(0.05..0.20) * FS) as usize).min(n - pos);
            pos += gap; // silence
        }
    }
    let peak = out.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    if peak > 0.0 {
        let g = 0.95 / peak;
        for s in &mut out {
            *s *= g;
        }
    }
    SourceSignal::new(out, FS as u32, SignalKind::SyntheticSpeech)
}

fn envelope(i: usize, len: usize, attack: usize) -> f64 {
    let rise = ((i + 1) as f64 / attack as f64).min(1.0);
    let fall = ((len - i) as f64 / attack as f64).min(1.0);
    rise.min(fall)
}

fn voiced_segment<R: Rng>(seg: &mut [f64], rng: &mut R) {
    let f0_a: f64 = rng.gen_range(80.0..250.0);
    let f0_b = (f0_a * rng.gen_range(0.8..1.25)).clamp(80.0, 250.0);
    let level = rng.gen_range(0.35..1.0);
    let trem_rate = rng.gen_range(2.0..5.0);
    let trem_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let f0_max = f0_a.max(f0_b);
    let n_harm = (7800.0 / f0_max).floor() as usize;
    // −6 dB/octave: harmonic h at amplitude 1/h
    let norm: f64 = (1..=n_harm).map(|h| 1.0 / h as f64).sum();
    let attack = (0.010 * FS) as usize;
    let len = seg.len();
    let mut phase = 0.0f64;
    for (i, s) in seg.iter_mut().enumerate() {
        let u = i as f64 / len as f64;
        let f0 = f0_a + (f0_b - f0_a) * u;
        phase += std::f64::consts::TAU * f0 / FS;
        let mut v = 0.0;
        for h in 1..=n_harm {
            v += (h as f64 * phase).sin() / h as f64;
        }
        let trem = 1.0 + 0.2 * (std::f64::consts::TAU * trem_rate * i as f64 / FS + trem_phase).sin();
        *s = level * trem * envelope(i, len, attack) * v / norm;
    }
}

fn unvoiced_segment<R: Rng>(seg: &mut [f64], rng: &mut R) {
    let len = seg.len();
    if len < 8 {
        return;
    }
    let level = rng.gen_range(0.15..0.5);
    let nfft = len.next_power_of_two();
    let mut buf: Vec<Complex64> = (0..nfft)
        .map(|i| {
            if i < len {
                Complex64::new(rng.gen_range(-1.0..1.0), 0.0)
            } else {
                Complex64::default()
            }
        })
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(nfft).process(&mut buf);
    let df = FS / nfft as f64;
    for (k, b) in buf.iter_mut().enumerate() {
        let f = if k <= nfft / 2 { k as f64 * df } else { (nfft - k) as f64 * df };
        if !(2000.0..=8000.0).contains(&f) {
            *b = Complex64::default();
        }
    }
    planner.plan_fft_inverse(nfft).process(&mut buf);
    let rms = (buf[..len].iter().map(|c| c.re * c.re).sum::<f64>() / len as f64).sqrt();
    if rms <= 0.0 {
        return;
    }
    let g = level * 0.3 / rms;
    let attack = (0.005 * FS) as usize;
    for (i, s) in seg.iter_mut().enumerate() {
        *s = buf[i].re * g * envelope(i, len, attack);
    }
}

/// Loads a (possibly multichannel) 16 kHz WAV as a mono dry source,
/// averaging channels and normalizing the peak to 0.95.
pub fn load_wav_source(path: &Path) -> Result<SourceSignal> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| CslError::invalid(format!("cannot read {}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.sample_rate != FS as u32 {
        return Err(CslError::invalid(format!(
            "{} is sampled at {} Hz; resample to 16 kHz first",
            path.display(),
            spec.sample_rate
        )));
    }
    let ch = spec.channels as usize;
    let raw: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CslError::invalid(e.to_string()))?,
        (hound::SampleFormat::Int, bits) => {
            let scale = (1i64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CslError::invalid(e.to_string()))?
        }
        (fmt, bits) => {
            return Err(CslError::invalid(format!(
                "unsupported WAV format {fmt:?}/{bits}-bit"
            )))
        }
    };
    let mut mono: Vec<f64> = raw
        .chunks_exact(ch)
        .map(|frame| frame.iter().sum::<f64>() / ch as f64)
        .collect();
    let peak = mono.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    if peak > 0.0 {
        let g = 0.95 / peak;
        for s in &mut mono {
            *s *= g;
        }
    }
    SourceSignal::new(mono, FS as u32, SignalKind::WavFile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp;

    #[test]
    fn three_seconds_has_expected_length_and_peak() {
        let s = synth_speech(3.0, 42).unwrap();
        assert_eq!(s.samples.len(), 48_000);
        let peak = s.samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(peak <= 1.0 && peak > 0.9);
        assert!(synth_speech(0.5, 1).is_err());
        assert!(synth_speech(11.0, 1).is_err());
    }

    #[test]
    fn same_seed_is_bit_identical_and_seeds_differ() {
        let a = synth_speech(2.0, 7).unwrap();
        let b = synth_speech(2.0, 7).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = synth_speech(2.0, 8).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn enough_frames_are_active_in_band() {
        for seed in [0u64, 3, 9] {
            let s = synth_speech(3.0, seed).unwrap();
            let y = dsp::stft_default(&[s.samples.clone()], 16_000).unwrap();
            let (k_lo, k_hi) = y.band_bins((340.0, 8000.0)).unwrap();
            let energies: Vec<f64> = (0..y.n_frames)
                .map(|n| {
                    (k_lo..=k_hi)
                        .map(|k| y.at(0, k, n).norm_sqr())
                        .sum()
                })
                .collect();
            let max = energies.iter().cloned().fold(0.0, f64::max);
            let active = energies.iter().filter(|&&e| e > max * 1e-4).count();
            assert!(
                active as f64 >= 0.3 * y.n_frames as f64,
                "seed {seed}: only {active}/{} frames active",
                y.n_frames
            );
        }
    }

    #[test]
    fn spectrum_covers_low_and_high_bands() {
        let s = synth_speech(3.0, 4).unwrap();
        let y = dsp::stft_default(&[s.samples.clone()], 16_000).unwrap();
        let band_energy = |lo: f64, hi: f64| -> f64 {
            let (k_lo, k_hi) = y.band_bins((lo, hi)).unwrap();
            (0..y.n_frames)
                .map(|n| (k_lo..=k_hi).map(|k| y.at(0, k, n).norm_sqr()).sum::<f64>())
                .sum()
        };
        let total = band_energy(340.0, 8000.0);
        assert!(band_energy(340.0, 2000.0) > 0.02 * total);
        assert!(band_energy(2000.0, 8000.0) > 0.02 * total);
    }

    #[test]
    fn wav_round_trip_reads_back_as_source() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dry.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..32_000 {
            let v = (0.5 * (std::f64::consts::TAU * 500.0 * i as f64 / 16_000.0).sin()
                * 32_767.0) as i16;
            w.write_sample(v).unwrap();
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let s = load_wav_source(&path).unwrap();
        assert_eq!(s.kind, SignalKind::WavFile);
        assert_eq!(s.samples.len(), 32_000);
        let peak = s.samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!((peak - 0.95).abs() < 1e-6);
    }
}
