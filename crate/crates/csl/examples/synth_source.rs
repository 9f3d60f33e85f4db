//! Generate a synthetic speech-like source signal and write it as WAV:
//! voiced harmonic stretches with pitch drift, unvoiced noise bursts, and
//! silences, shaped by a slow envelope.
//!
//!     cargo run --release -p csl --example synth_source [seconds] [seed] [out.wav]

use csl::sim::synth_speech;

fn main() -> csl::Result<()> {
    let mut args = std::env::args().skip(1);
    let secs: f64 = args.next().map(|s| s.parse().unwrap_or(3.0)).unwrap_or(3.0);
    let seed: u64 = args.next().map(|s| s.parse().unwrap_or(7)).unwrap_or(7);
    let out = args.next().unwrap_or_else(|| "source.wav".to_string());

    let sig = synth_speech(secs, seed)?;
    let n = sig.samples.len();
    let rms = (sig.samples.iter().map(|s| s * s).sum::<f64>() / n as f64).sqrt();
    let peak = sig.samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    // Fraction of 10 ms frames below -40 dB of the loudest frame.
    let flen = sig.sample_rate as usize / 100;
    let energies: Vec<f64> = sig
        .samples
        .chunks(flen)
        .map(|c| c.iter().map(|s| s * s).sum::<f64>())
        .collect();
    let emax = energies.iter().cloned().fold(0.0f64, f64::max);
    let silent = energies.iter().filter(|&&e| e < emax * 1e-4).count();

    println!("{secs} s at {} Hz, seed {seed}", sig.sample_rate);
    println!("rms {rms:.4}  peak {peak:.4}");
    println!(
        "silent frames {}/{} ({:.0}%)",
        silent,
        energies.len(),
        100.0 * silent as f64 / energies.len() as f64
    );

    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sig.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(&out, spec)
        .map_err(|e| csl::CslError::invalid(e.to_string()))?;
    let scale = 0.95 / peak.max(1e-12);
    for &s in &sig.samples {
        writer
            .write_sample((s * scale * i16::MAX as f64) as i16)
            .map_err(|e| csl::CslError::invalid(e.to_string()))?;
    }
    writer.finalize().map_err(|e| csl::CslError::invalid(e.to_string()))?;
    println!("wrote {out}");
    Ok(())
}
