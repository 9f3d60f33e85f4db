//! On-disk session layout: `<id>/audio.wav` (float32 PCM), `rotations.csv`
//! (frame index + row-major matrix entries), `meta.json`.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CslError, Result};
use crate::geometry::{Quaternion, RotationMatrix, UnitVector3};
use crate::sim::{Manifest, MotionTrajectory, SessionData, Split};

#[derive(Serialize, Deserialize)]
struct MotionMeta {
    initial_orientation: [f64; 4],
    axis: [f64; 3],
    angular_speed_rad_s: f64,
    frame_hop_s: f64,
}

#[derive(Serialize, Deserialize)]
struct SessionMeta {
    session_id: String,
    split: Split,
    seed: u64,
    t60: f64,
    sample_rate: u32,
    truth_world_dirs: Vec<[f64; 3]>,
    motion: MotionMeta,
    frame_energies: Vec<Vec<f32>>,
}

pub fn write_wav_f32(path: &Path, audio: &[Vec<f32>], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: audio.len() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec)
        .map_err(|e| CslError::invalid(format!("cannot create {}: {e}", path.display())))?;
    let n = audio.first().map(|c| c.len()).unwrap_or(0);
    for i in 0..n {
        for ch in audio {
            w.write_sample(ch[i])
                .map_err(|e| CslError::invalid(e.to_string()))?;
        }
    }
    w.finalize().map_err(|e| CslError::invalid(e.to_string()))?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f32>>, u32)> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| CslError::invalid(format!("cannot read {}: {e}", path.display())))?;
    let spec = reader.spec();
    let ch = spec.channels as usize;
    let flat: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CslError::invalid(e.to_string()))?,
        (hound::SampleFormat::Int, bits) => {
            let scale = (1i64 << (bits - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CslError::invalid(e.to_string()))?
        }
        (fmt, bits) => {
            return Err(CslError::invalid(format!(
                "unsupported WAV format {fmt:?}/{bits}-bit"
            )))
        }
    };
    let mut audio = vec![Vec::with_capacity(flat.len() / ch); ch];
    for frame in flat.chunks_exact(ch) {
        for (c, &v) in frame.iter().enumerate() {
            audio[c].push(v);
        }
    }
    Ok((audio, spec.sample_rate))
}

fn write_rotations_csv(path: &Path, rotations: &[RotationMatrix]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "n,r00,r01,r02,r10,r11,r12,r20,r21,r22")?;
    for (n, r) in rotations.iter().enumerate() {
        let m = r.rows();
        write!(w, "{n}")?;
        for row in m {
            for v in row {
                write!(w, ",{v}")?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rotations_csv(path: &Path) -> Result<Vec<RotationMatrix>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if i == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(CslError::invalid(format!(
                "rotation row {i} has {} fields",
                fields.len()
            )));
        }
        let n: usize = fields[0]
            .parse()
            .map_err(|_| CslError::invalid(format!("bad frame index {:?}", fields[0])))?;
        let mut m = [[0.0f64; 3]; 3];
        for (j, f) in fields[1..].iter().enumerate() {
            m[j / 3][j % 3] = f
                .parse()
                .map_err(|_| CslError::invalid(format!("bad matrix entry {f:?}")))?;
        }
        out.push(RotationMatrix::from_rows(m)?.with_frame_index(n));
    }
    Ok(out)
}

pub fn save_session(dir: &Path, session: &SessionData) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_wav_f32(&dir.join("audio.wav"), &session.audio, session.sample_rate)?;
    write_rotations_csv(&dir.join("rotations.csv"), &session.rotations)?;
    let q = &session.motion.initial_orientation;
    let meta = SessionMeta {
        session_id: session.session_id.clone(),
        split: session.split,
        seed: session.seed,
        t60: session.t60,
        sample_rate: session.sample_rate,
        truth_world_dirs: session.truth_world_dirs.iter().map(|d| d.as_array()).collect(),
        motion: MotionMeta {
            initial_orientation: [q.w, q.x, q.y, q.z],
            axis: session.motion.axis.as_array(),
            angular_speed_rad_s: session.motion.angular_speed,
            frame_hop_s: session.motion.frame_hop,
        },
        frame_energies: session.frame_energies.clone(),
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_session(dir: &Path) -> Result<SessionData> {
    let meta: SessionMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
    let (audio, sample_rate) = read_wav(&dir.join("audio.wav"))?;
    if sample_rate != meta.sample_rate {
        return Err(CslError::invalid("meta and WAV disagree on sample rate"));
    }
    let rotations = read_rotations_csv(&dir.join("rotations.csv"))?;
    let [w, x, y, z] = meta.motion.initial_orientation;
    let motion = MotionTrajectory::new(
        Quaternion::new(w, x, y, z)?,
        UnitVector3::normalized(meta.motion.axis)?,
        meta.motion.angular_speed_rad_s,
        meta.motion.frame_hop_s,
    )?;
    let truth_world_dirs = meta
        .truth_world_dirs
        .iter()
        .map(|&d| UnitVector3::normalized(d))
        .collect::<Result<Vec<_>>>()?;
    Ok(SessionData {
        audio,
        sample_rate,
        rotations,
        truth_world_dirs,
        t60: meta.t60,
        session_id: meta.session_id,
        split: meta.split,
        motion,
        frame_energies: meta.frame_energies,
        seed: meta.seed,
    })
}

pub fn save_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest)?,
    )?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CslError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(serde_json::from_str(&text)?)
}
