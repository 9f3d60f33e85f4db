//! Session simulator: dry sources, image-source room acoustics, and
//! time-varying spatialization of a rotating microphone array.

pub mod gen;
pub mod io;
pub mod rir;
pub mod source;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{CslError, Result};
use crate::geometry::{Quaternion, RotationMatrix, Sensor, UnitVector3, World};

pub use gen::{gen_dataset, plan_sessions, Condition, GenConfig, Manifest, ManifestEntry, SessionPlan};
pub use io::{load_manifest, load_session, save_session};
pub use rir::{compute_rir, schroeder_t60};
pub use source::{load_wav_source, synth_speech};

/// Rectangular room with uniform walls.
#[derive(Clone, Copy, Debug)]
pub struct RoomSpec {
    pub dimensions: [f64; 3],
    pub t60: f64,
    pub speed_of_sound: f64,
}

impl RoomSpec {
    pub fn new(dimensions: [f64; 3], t60: f64) -> Result<Self> {
        if dimensions.iter().any(|&l| !(l > 0.0)) {
            return Err(CslError::invalid(format!("room dimensions {dimensions:?} must be positive")));
        }
        if !(t60 >= 0.0) {
            return Err(CslError::invalid(format!("t60 {t60} must be non-negative")));
        }
        Ok(Self { dimensions, t60, speed_of_sound: 343.0 })
    }

    pub fn with_speed_of_sound(mut self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(CslError::invalid("speed of sound must be positive"));
        }
        self.speed_of_sound = c;
        Ok(self)
    }

    pub fn center(&self) -> [f64; 3] {
        [self.dimensions[0] / 2.0, self.dimensions[1] / 2.0, self.dimensions[2] / 2.0]
    }
}

/// Microphone positions in the sensor frame, centered on its origin.
#[derive(Clone, Debug)]
pub struct ArraySpec {
    mic_positions: Vec<[f64; 3]>,
}

impl ArraySpec {
    pub fn new(mic_positions: Vec<[f64; 3]>) -> Result<Self> {
        if mic_positions.len() < 2 {
            return Err(CslError::invalid("array needs at least 2 microphones"));
        }
        let n = mic_positions.len() as f64;
        for a in 0..3 {
            let c: f64 = mic_positions.iter().map(|p| p[a]).sum::<f64>() / n;
            if c.abs() > 1e-9 {
                return Err(CslError::invalid(format!(
                    "array centroid off origin by {c:.3e} m on axis {a}"
                )));
            }
        }
        Ok(Self { mic_positions })
    }

    /// Eight omnidirectional mics on the corners of a cube.
    pub fn cube(edge_m: f64) -> Self {
        let h = edge_m / 2.0;
        let mut pos = Vec::with_capacity(8);
        for i in 0..8u8 {
            let s = |bit: u8| if bit == 0 { -h } else { h };
            pos.push([s(i & 1), s((i >> 1) & 1), s((i >> 2) & 1)]);
        }
        Self { mic_positions: pos }
    }

    pub fn n_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn mic_positions(&self) -> &[[f64; 3]] {
        &self.mic_positions
    }
}

impl Default for ArraySpec {
    fn default() -> Self {
        Self::cube(0.05)
    }
}

/// Constant-rate rotation about a body axis: R(n) = R(q₀)·Rot(axis, ω·n·hop).
#[derive(Clone, Debug)]
pub struct MotionTrajectory {
    pub initial_orientation: Quaternion,
    pub axis: UnitVector3<Sensor>,
    pub angular_speed: f64,
    pub frame_hop: f64,
}

impl MotionTrajectory {
    pub fn new(
        initial_orientation: Quaternion,
        axis: UnitVector3<Sensor>,
        angular_speed: f64,
        frame_hop: f64,
    ) -> Result<Self> {
        if !(angular_speed >= 0.0) {
            return Err(CslError::invalid("angular speed must be non-negative"));
        }
        if !(frame_hop > 0.0) {
            return Err(CslError::invalid("frame hop must be positive"));
        }
        Ok(Self { initial_orientation, axis, angular_speed, frame_hop })
    }

    pub fn static_identity(frame_hop: f64) -> Self {
        Self {
            initial_orientation: Quaternion::new(1.0, 0.0, 0.0, 0.0).unwrap(),
            axis: UnitVector3::new(0.0, 0.0, 1.0).unwrap(),
            angular_speed: 0.0,
            frame_hop,
        }
    }

    pub fn rotation_at(&self, frame: usize) -> RotationMatrix {
        let r0 = crate::geometry::quat_to_rotation(&self.initial_orientation)
            .expect("orientation validated at construction");
        let angle = self.angular_speed * frame as f64 * self.frame_hop;
        let spin = RotationMatrix::from_axis_angle(self.axis.as_array(), angle)
            .expect("axis is unit length");
        r0.compose(&spin).with_frame_index(frame)
    }

    pub fn rotations(&self, n_frames: usize) -> Vec<RotationMatrix> {
        (0..n_frames).map(|n| self.rotation_at(n)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    SyntheticSpeech,
    WavFile,
}

/// Dry mono source waveform at 16 kHz.
#[derive(Clone, Debug)]
pub struct SourceSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub kind: SignalKind,
}

impl SourceSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32, kind: SignalKind) -> Result<Self> {
        let duration = samples.len() as f64 / sample_rate as f64;
        if !(1.0..=10.0 + 1e-9).contains(&duration) {
            return Err(CslError::invalid(format!(
                "source duration {duration:.2} s outside [1, 10] s"
            )));
        }
        if samples.iter().any(|s| !s.is_finite() || s.abs() > 1.0 + 1e-9) {
            return Err(CslError::invalid("source samples must be finite with peak ≤ 1"));
        }
        Ok(Self { samples, sample_rate, kind })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = CslError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CslError::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// One simulated recording: multichannel audio, the per-frame array
/// orientations, and the ground truth that evaluation needs.
#[derive(Clone, Debug)]
pub struct SessionData {
    pub audio: Vec<Vec<f32>>,
    pub sample_rate: u32,
    pub rotations: Vec<RotationMatrix>,
    pub truth_world_dirs: Vec<UnitVector3<World>>,
    pub t60: f64,
    pub session_id: String,
    pub split: Split,
    pub motion: MotionTrajectory,
    /// Per source, per frame: energy of that source's contribution summed
    /// over channels (drives presence weighting in multi-source scoring).
    pub frame_energies: Vec<Vec<f32>>,
    pub seed: u64,
}

impl SessionData {
    pub fn n_frames(&self) -> usize {
        self.rotations.len()
    }

    pub fn n_channels(&self) -> usize {
        self.audio.len()
    }

    /// Ground truth seen from the array at a given frame.
    pub fn sensor_truth(&self, frame: usize, source: usize) -> UnitVector3<Sensor> {
        self.rotations[frame].world_to_sensor(&self.truth_world_dirs[source])
    }

    pub fn audio_f64(&self) -> Vec<Vec<f64>> {
        self.audio
            .iter()
            .map(|ch| ch.iter().map(|&s| s as f64).collect())
            .collect()
    }

    pub fn validate(&self, frame_len: usize, hop: usize) -> Result<()> {
        let n = self.audio.first().map(|c| c.len()).unwrap_or(0);
        let frames = dsp::frame_count(n, frame_len, hop)
            .ok_or_else(|| CslError::invalid("audio shorter than one frame"))?;
        if frames != self.rotations.len() {
            return Err(CslError::invalid(format!(
                "{} rotations for {frames} frames",
                self.rotations.len()
            )));
        }
        if self.truth_world_dirs.is_empty() {
            return Err(CslError::invalid("session has no truth directions"));
        }
        for r in &self.rotations {
            if r.orthogonality_deviation() > 1e-9 || (r.det() - 1.0).abs() > 1e-9 {
                return Err(CslError::numeric("rotation list fails orthogonality"));
            }
        }
        Ok(())
    }
}

/// Rendering knobs for `spatialize`.
#[derive(Clone, Copy, Debug)]
pub struct SpatializeConfig {
    /// Frames per piecewise-static RIR block.
    pub block_frames: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub source_distance_m: f64,
    /// Per-channel white noise at this SNR (dB) when set.
    pub snr_db: Option<f64>,
}

impl Default for SpatializeConfig {
    fn default() -> Self {
        Self {
            block_frames: 10,
            frame_len: dsp::DEFAULT_FRAME_LEN,
            hop: dsp::DEFAULT_HOP,
            source_distance_m: 1.0,
            snr_db: None,
        }
    }
}

pub fn mic_world_positions(
    room: &RoomSpec,
    array: &ArraySpec,
    orientation: &RotationMatrix,
) -> Vec<[f64; 3]> {
    let c = room.center();
    array
        .mic_positions()
        .iter()
        .map(|p| {
            let r = orientation.apply_vec3(*p);
            [c[0] + r[0], c[1] + r[1], c[2] + r[2]]
        })
        .collect()
}

/// y[i+j] += x[i]·h[j], skipping exact-zero input samples. All rendering
/// paths funnel through this so that their summation order is identical.
pub fn convolve_axpy(x: &[f32], x_offset: usize, h: &[f32], y: &mut [f32]) {
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            let out = &mut y[x_offset + i..x_offset + i + h.len()];
            for (o, &hj) in out.iter_mut().zip(h) {
                *o += xi * hj;
            }
        }
    }
}

/// Full static convolution (reference path for a non-rotating array).
pub fn convolve_full(x: &[f32], h: &[f32]) -> Vec<f32> {
    let mut y = vec![0.0f32; x.len() + h.len()];
    convolve_axpy(x, 0, h, &mut y);
    y
}

fn per_frame_energies(audio: &[Vec<f32>], n_frames: usize, frame_len: usize, hop: usize) -> Vec<f32> {
    (0..n_frames)
        .map(|n| {
            audio
                .iter()
                .map(|ch| {
                    ch[n * hop..n * hop + frame_len]
                        .iter()
                        .map(|&s| s * s)
                        .sum::<f32>()
                })
                .sum()
        })
        .collect()
}

/// Renders one rotating-array session: RIRs are recomputed per block of
/// `block_frames` frames at the block-center orientation and adjacent blocks
/// are cross-faded over one hop. The seed only feeds the optional noise.
pub fn spatialize(
    source: &SourceSignal,
    room: &RoomSpec,
    array: &ArraySpec,
    motion: &MotionTrajectory,
    source_world_dir: &UnitVector3<World>,
    cfg: &SpatializeConfig,
    seed: u64,
) -> Result<SessionData> {
    if cfg.block_frames == 0 {
        return Err(CslError::invalid("block_frames must be at least 1"));
    }
    let n_samples = source.samples.len();
    let n_frames = dsp::frame_count(n_samples, cfg.frame_len, cfg.hop)
        .ok_or_else(|| CslError::invalid("source shorter than one frame"))?;
    let center = room.center();
    let d = cfg.source_distance_m;
    let src_pos = [
        center[0] + d * source_world_dir.x(),
        center[1] + d * source_world_dir.y(),
        center[2] + d * source_world_dir.z(),
    ];
    let n_mics = array.n_mics();
    let x: Vec<f32> = source.samples.iter().map(|&s| s as f32).collect();
    let n_blocks = n_frames.div_ceil(cfg.block_frames);

    let mut audio: Vec<Vec<f32>> = Vec::with_capacity(n_mics);
    let mut prev_rirs: Vec<Vec<f32>> = Vec::new();
    let mut tails: Vec<Vec<f32>> = vec![Vec::new(); n_mics];
    for b in 0..n_blocks {
        let first = b * cfg.block_frames;
        let last = ((b + 1) * cfg.block_frames).min(n_frames);
        let center_frame = first + (last - first) / 2;
        let orientation = motion.rotation_at(center_frame);
        let mics = mic_world_positions(room, array, &orientation);
        let rirs: Vec<Vec<f32>> = mics
            .iter()
            .map(|&m| {
                compute_rir(room, src_pos, m, None, source.sample_rate)
                    .map(|h| h.into_iter().map(|t| t as f32).collect())
            })
            .collect::<Result<_>>()?;

        let span_start = first * cfg.hop;
        let span_end = if b + 1 == n_blocks { n_samples } else { last * cfg.hop };
        for m in 0..n_mics {
            if b == 0 {
                audio.push(vec![0.0f32; n_samples + rirs[m].len()]);
            }
            let y = &mut audio[m];
            if y.len() < span_end + rirs[m].len() {
                y.resize(span_end + rirs[m].len(), 0.0);
            }
            let h = &rirs[m];
            let mut i = span_start;
            if b > 0 {
                // cross-fade from the previous block's response over one hop
                let hp = &prev_rirs[m];
                let fade = &mut tails[m];
                let fade_end = (span_start + cfg.hop).min(span_end);
                while i < fade_end {
                    let xi = x[i];
                    if xi != 0.0 {
                        let t = (i - span_start + 1) as f32 / (cfg.hop + 1) as f32;
                        fade.clear();
                        fade.extend(
                            hp.iter()
                                .zip(h)
                                .map(|(&a, &bb)| a + t * (bb - a)),
                        );
                        convolve_axpy(&x[i..=i], i, fade, y);
                    }
                    i += 1;
                }
            }
            convolve_axpy(&x[i..span_end], i, h, y);
        }
        prev_rirs = rirs;
    }
    for ch in &mut audio {
        ch.truncate(n_samples);
    }

    let frame_energy = per_frame_energies(&audio, n_frames, cfg.frame_len, cfg.hop);

    if let Some(snr_db) = cfg.snr_db {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        add_noise(&mut audio, snr_db, &mut rng);
    }

    Ok(SessionData {
        audio,
        sample_rate: source.sample_rate,
        rotations: motion.rotations(n_frames),
        truth_world_dirs: vec![*source_world_dir],
        t60: room.t60,
        session_id: String::new(),
        split: Split::Train,
        motion: motion.clone(),
        frame_energies: vec![frame_energy],
        seed,
    })
}

/// Adds white Gaussian noise per channel at `snr_db` relative to that
/// channel's power.
pub fn add_noise<R: Rng>(audio: &mut [Vec<f32>], snr_db: f64, rng: &mut R) {
    for ch in audio.iter_mut() {
        let power: f64 = ch.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / ch.len() as f64;
        if power <= 0.0 {
            continue;
        }
        let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        for s in ch.iter_mut() {
            // Box-Muller on two uniform draws
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let g = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            *s += (sigma * g) as f32;
        }
    }
}

/// Sums two single-source renderings of the same room and trajectory into a
/// two-source session (shorter audio is zero-padded).
pub fn merge_sessions(a: SessionData, b: SessionData) -> Result<SessionData> {
    if a.n_channels() != b.n_channels() || a.sample_rate != b.sample_rate {
        return Err(CslError::invalid("sessions to merge have mismatched formats"));
    }
    if (a.t60 - b.t60).abs() > 1e-12 {
        return Err(CslError::invalid("sessions to merge have different rooms"));
    }
    let (mut long, short) = if a.audio[0].len() >= b.audio[0].len() { (a, b) } else { (b, a) };
    for (lc, sc) in long.audio.iter_mut().zip(&short.audio) {
        for (l, &s) in lc.iter_mut().zip(sc) {
            *l += s;
        }
    }
    let n_frames = long.n_frames();
    long.truth_world_dirs.extend(short.truth_world_dirs);
    for mut e in short.frame_energies {
        e.resize(n_frames, 0.0);
        long.frame_energies.push(e);
    }
    Ok(long)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angular_error;
    use rand::SeedableRng;

    fn hop_s() -> f64 {
        dsp::DEFAULT_HOP as f64 / 16_000.0
    }

    #[test]
    fn room_and_array_invariants() {
        assert!(RoomSpec::new([4.0, -1.0, 4.0], 0.1).is_err());
        assert!(RoomSpec::new([4.0, 4.0, 4.0], -0.1).is_err());
        assert!(ArraySpec::new(vec![[0.0, 0.0, 0.0]]).is_err());
        assert!(ArraySpec::new(vec![[0.1, 0.0, 0.0], [0.1, 0.0, 0.0]]).is_err());
        let cube = ArraySpec::cube(0.05);
        assert_eq!(cube.n_mics(), 8);
        for p in cube.mic_positions() {
            assert!((p[0].abs() - 0.025).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectory_accumulates_constant_rate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (q0, axis) = crate::geometry::random_rotation::<Sensor, _>(&mut rng);
        let motion =
            MotionTrajectory::new(q0, axis, std::f64::consts::FRAC_PI_2, hop_s()).unwrap();
        let rots = motion.rotations(298);
        assert_eq!(rots.len(), 298);
        let mut total = 0.0;
        for w in rots.windows(2) {
            let rel = w[0].transpose().compose(&w[1]);
            let tr = rel.rows()[0][0] + rel.rows()[1][1] + rel.rows()[2][2];
            total += ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        }
        let expected = std::f64::consts::FRAC_PI_2 * 297.0 * hop_s();
        assert!((total - expected).abs() < 1e-6, "accumulated {total} vs {expected}");
    }

    fn tone_source(duration: f64) -> SourceSignal {
        let n = (duration * 16_000.0) as usize;
        let samples: Vec<f64> = (0..n)
            .map(|i| 0.9 * (std::f64::consts::TAU * 440.0 * i as f64 / 16_000.0).sin())
            .collect();
        SourceSignal::new(samples, 16_000, SignalKind::SyntheticSpeech).unwrap()
    }

    #[test]
    fn spatialize_output_shape_and_rotation_consistency() {
        let room = RoomSpec::new([4.0, 4.0, 4.0], 0.0).unwrap();
        let array = ArraySpec::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let (q0, axis) = crate::geometry::random_rotation::<Sensor, _>(&mut rng);
        let motion =
            MotionTrajectory::new(q0, axis, std::f64::consts::FRAC_PI_2, hop_s()).unwrap();
        let dir = crate::geometry::random_direction::<World, _>(&mut rng);
        let s = spatialize(
            &tone_source(3.0),
            &room,
            &array,
            &motion,
            &dir,
            &SpatializeConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(s.n_channels(), 8);
        assert_eq!(s.sample_rate, 16_000);
        assert_eq!(s.audio[0].len(), 48_000);
        assert_eq!(s.n_frames(), 298);
        s.validate(400, 160).unwrap();
        for n in [0, 100, 297] {
            let sensor = s.sensor_truth(n, 0);
            let back = s.rotations[n].sensor_to_world(&sensor);
            assert!(angular_error(&back, &dir) < 1e-6);
        }
    }

    #[test]
    fn static_far_field_delays_match_geometry() {
        let room = RoomSpec::new([4.0, 4.0, 4.0], 0.0).unwrap();
        let array = ArraySpec::default();
        let motion = MotionTrajectory::static_identity(hop_s());
        let dir = UnitVector3::new(1.0, 0.0, 0.0).unwrap();
        let src = {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
            let samples: Vec<f64> = (0..32_000).map(|_| rng.gen_range(-0.9..0.9)).collect();
            SourceSignal::new(samples, 16_000, SignalKind::SyntheticSpeech).unwrap()
        };
        let s = spatialize(&src, &room, &array, &motion, &dir, &SpatializeConfig::default(), 0)
            .unwrap();
        // mics 0 (x = −h) and 1 (x = +h) differ by the edge length along x;
        // the +x mic is closer to the source so channel 1 leads channel 0
        let a: Vec<f64> = s.audio[0].iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = s.audio[1].iter().map(|&v| v as f64).collect();
        let (delay, _) = dsp::gcc_phat_delay(&a[2000..10_000], &b[2000..10_000], 16).unwrap();
        let expected = 0.05 / 343.0 * 16_000.0;
        assert!((delay - expected).abs() <= 1.0, "delay {delay}, expected {expected}");
    }

    #[test]
    fn channel_energy_falls_as_inverse_square() {
        let room = RoomSpec::new([6.0, 6.0, 6.0], 0.0).unwrap();
        let array = ArraySpec::default();
        let motion = MotionTrajectory::static_identity(hop_s());
        let dir = UnitVector3::new(0.0, 1.0, 0.0).unwrap();
        let src = tone_source(1.0);
        let energy = |dist: f64| -> f64 {
            let cfg = SpatializeConfig { source_distance_m: dist, ..Default::default() };
            let s = spatialize(&src, &room, &array, &motion, &dir, &cfg, 0).unwrap();
            s.audio
                .iter()
                .flat_map(|ch| ch.iter())
                .map(|&v| (v as f64).powi(2))
                .sum()
        };
        let ratio = energy(1.0) / energy(2.0);
        assert!((ratio - 4.0).abs() < 0.2, "energy ratio {ratio}");
    }

    #[test]
    fn zero_speed_blockwise_matches_static_convolution() {
        let room = RoomSpec::new([4.0, 4.0, 4.0], 0.25).unwrap();
        let array = ArraySpec::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let (q0, axis) = crate::geometry::random_rotation::<Sensor, _>(&mut rng);
        let motion = MotionTrajectory::new(q0, axis, 0.0, hop_s()).unwrap();
        let dir = crate::geometry::random_direction::<World, _>(&mut rng);
        let src = tone_source(1.5);
        let cfg = SpatializeConfig::default();
        let s = spatialize(&src, &room, &array, &motion, &dir, &cfg, 0).unwrap();

        let orientation = motion.rotation_at(0);
        let mics = mic_world_positions(&room, &array, &orientation);
        let center = room.center();
        let src_pos = [center[0] + dir.x(), center[1] + dir.y(), center[2] + dir.z()];
        let x: Vec<f32> = src.samples.iter().map(|&v| v as f32).collect();
        for (m, &mic) in mics.iter().enumerate() {
            let h: Vec<f32> = compute_rir(&room, src_pos, mic, None, 16_000)
                .unwrap()
                .into_iter()
                .map(|t| t as f32)
                .collect();
            let mut y = convolve_full(&x, &h);
            y.truncate(x.len());
            assert_eq!(y.len(), s.audio[m].len());
            for (i, (a, b)) in y.iter().zip(&s.audio[m]).enumerate() {
                assert!(
                    a.to_bits() == b.to_bits(),
                    "channel {m} sample {i}: {a:e} vs {b:e}"
                );
            }
        }
    }

    #[test]
    fn merge_pads_and_sums() {
        let room = RoomSpec::new([4.0, 4.0, 4.0], 0.0).unwrap();
        let array = ArraySpec::default();
        let motion = MotionTrajectory::static_identity(hop_s());
        let d1 = UnitVector3::new(1.0, 0.0, 0.0).unwrap();
        let d2 = UnitVector3::new(0.0, 0.0, 1.0).unwrap();
        let cfg = SpatializeConfig::default();
        let s1 = spatialize(&tone_source(2.0), &room, &array, &motion, &d1, &cfg, 0).unwrap();
        let s2 = spatialize(&tone_source(1.0), &room, &array, &motion, &d2, &cfg, 0).unwrap();
        let merged = merge_sessions(s1.clone(), s2.clone()).unwrap();
        assert_eq!(merged.truth_world_dirs.len(), 2);
        assert_eq!(merged.audio[0].len(), 32_000);
        assert_eq!(merged.frame_energies.len(), 2);
        assert_eq!(merged.frame_energies[0].len(), merged.n_frames());
        let i = 20_000; // past the short session's end
        assert_eq!(merged.audio[3][i], s1.audio[3][i]);
        let j = 5_000;
        let want = s1.audio[3][j] + s2.audio[3][j];
        assert!((merged.audio[3][j] - want).abs() < 1e-7);
    }

    #[test]
    fn snr_flag_adds_noise_at_requested_level() {
        let room = RoomSpec::new([4.0, 4.0, 4.0], 0.0).unwrap();
        let array = ArraySpec::default();
        let motion = MotionTrajectory::static_identity(hop_s());
        let dir = UnitVector3::new(1.0, 0.0, 0.0).unwrap();
        let clean_cfg = SpatializeConfig::default();
        let noisy_cfg = SpatializeConfig { snr_db: Some(10.0), ..Default::default() };
        let src = tone_source(1.0);
        let clean = spatialize(&src, &room, &array, &motion, &dir, &clean_cfg, 7).unwrap();
        let noisy = spatialize(&src, &room, &array, &motion, &dir, &noisy_cfg, 7).unwrap();
        let p_sig: f64 = clean.audio[0].iter().map(|&v| (v as f64).powi(2)).sum::<f64>()
            / clean.audio[0].len() as f64;
        let p_noise: f64 = clean.audio[0]
            .iter()
            .zip(&noisy.audio[0])
            .map(|(&c, &n)| ((n - c) as f64).powi(2))
            .sum::<f64>()
            / clean.audio[0].len() as f64;
        let snr = 10.0 * (p_sig / p_noise).log10();
        assert!((snr - 10.0).abs() < 0.5, "realized SNR {snr}");
    }
}
