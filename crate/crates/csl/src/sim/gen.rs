//! Dataset-level generation: plans per-session draws from one root seed,
//! renders sessions (in parallel when a rayon pool is configured), and
//! writes the manifest.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derive_seed_n;
use crate::error::{CslError, Result};
use crate::geometry::{random_direction, random_rotation, Quaternion, Sensor, UnitVector3, World};
use crate::sim::{
    io, merge_sessions, spatialize, synth_speech, ArraySpec, MotionTrajectory, RoomSpec,
    SessionData, SpatializeConfig, Split,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Anechoic,
    T250,
    T500,
    T750,
    Mixed,
}

impl Condition {
    fn draw_t60<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Condition::Anechoic => 0.0,
            Condition::T250 => 0.25,
            Condition::T500 => 0.5,
            Condition::T750 => 0.75,
            Condition::Mixed => rng.gen_range(0.0..0.75),
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Condition::Anechoic => "anechoic",
            Condition::T250 => "t250",
            Condition::T500 => "t500",
            Condition::T750 => "t750",
            Condition::Mixed => "mixed",
        })
    }
}

impl std::str::FromStr for Condition {
    type Err = CslError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anechoic" => Ok(Condition::Anechoic),
            "t250" => Ok(Condition::T250),
            "t500" => Ok(Condition::T500),
            "t750" => Ok(Condition::T750),
            "mixed" => Ok(Condition::Mixed),
            other => Err(CslError::invalid(format!("unknown condition {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub condition: Condition,
    pub n_sessions: usize,
    pub n_sources: usize,
    pub split_fractions: (f64, f64, f64),
    pub seed: u64,
    pub duration_s: f64,
    pub angular_speed: f64,
    pub room_dims: [f64; 3],
    pub snr_db: Option<f64>,
    pub block_frames: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            condition: Condition::Anechoic,
            n_sessions: 1,
            n_sources: 1,
            split_fractions: (0.8, 0.1, 0.1),
            seed: 0,
            duration_s: 3.0,
            angular_speed: std::f64::consts::FRAC_PI_2,
            room_dims: [4.0, 4.0, 4.0],
            snr_db: None,
            block_frames: 10,
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<()> {
        if self.n_sessions == 0 {
            return Err(CslError::invalid("n_sessions must be at least 1"));
        }
        if !(self.n_sources == 1 || self.n_sources == 2) {
            return Err(CslError::invalid("n_sources must be 1 or 2"));
        }
        let (a, b, c) = self.split_fractions;
        if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(CslError::invalid("split fractions must be non-negative and sum to 1"));
        }
        Ok(())
    }
}

/// Everything about a session that is decided before any audio is rendered.
#[derive(Clone, Debug)]
pub struct SessionPlan {
    pub index: usize,
    pub session_id: String,
    pub seed: u64,
    pub t60: f64,
    pub truth_dirs: Vec<UnitVector3<World>>,
    pub initial_orientation: Quaternion,
    pub axis: UnitVector3<Sensor>,
    pub split: Split,
}

/// Deterministic per-session draws: reverberation, motion, truth directions,
/// and the split assignment (contiguous blocks by fraction).
pub fn plan_sessions(cfg: &GenConfig) -> Result<Vec<SessionPlan>> {
    cfg.validate()?;
    let n = cfg.n_sessions;
    let n_train = (cfg.split_fractions.0 * n as f64).round() as usize;
    let n_val = ((cfg.split_fractions.1 * n as f64).round() as usize).min(n - n_train.min(n));
    let mut plans = Vec::with_capacity(n);
    for i in 0..n {
        let seed = derive_seed_n(cfg.seed, "session", i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t60 = cfg.condition.draw_t60(&mut rng);
        let (q0, axis) = random_rotation::<Sensor, _>(&mut rng);
        let truth_dirs: Vec<UnitVector3<World>> =
            (0..cfg.n_sources).map(|_| random_direction(&mut rng)).collect();
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        plans.push(SessionPlan {
            index: i,
            session_id: format!("s{i:05}"),
            seed,
            t60,
            truth_dirs,
            initial_orientation: q0,
            axis,
            split,
        });
    }
    Ok(plans)
}

/// Renders the audio for one planned session.
pub fn render_session(plan: &SessionPlan, cfg: &GenConfig) -> Result<SessionData> {
    let room = RoomSpec::new(cfg.room_dims, plan.t60)?;
    let array = ArraySpec::default();
    let hop_s = crate::dsp::DEFAULT_HOP as f64 / crate::dsp::DEFAULT_SAMPLE_RATE as f64;
    let motion =
        MotionTrajectory::new(plan.initial_orientation, plan.axis, cfg.angular_speed, hop_s)?;
    let sp_cfg = SpatializeConfig {
        block_frames: cfg.block_frames,
        snr_db: None,
        ..Default::default()
    };
    let mut rendered: Option<SessionData> = None;
    for (j, dir) in plan.truth_dirs.iter().enumerate() {
        let src = synth_speech(cfg.duration_s, derive_seed_n(plan.seed, "source", j as u64))?;
        let one = spatialize(&src, &room, &array, &motion, dir, &sp_cfg, plan.seed)?;
        rendered = Some(match rendered {
            None => one,
            Some(acc) => merge_sessions(acc, one)?,
        });
    }
    let mut session = rendered.expect("n_sources validated to be 1 or 2");
    if let Some(snr) = cfg.snr_db {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_n(plan.seed, "noise", 0));
        crate::sim::add_noise(&mut session.audio, snr, &mut rng);
    }
    session.session_id = plan.session_id.clone();
    session.split = plan.split;
    session.seed = plan.seed;
    Ok(session)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub session_id: String,
    pub split: Split,
    pub seed: u64,
    pub t60: f64,
    pub truth_world_dirs: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub condition: Condition,
    pub n_sessions: usize,
    pub n_sources: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub angular_speed: f64,
    pub room_dims: [f64; 3],
    pub snr_db: Option<f64>,
    pub block_frames: usize,
    pub split_fractions: [f64; 3],
    pub sessions: Vec<ManifestEntry>,
}

pub const MANIFEST_SCHEMA: &str = "csl-dataset-v1";

/// Generates a dataset under `out_dir`: one directory per session plus
/// `manifest.json`. Fully reproducible from (seed, config).
pub fn gen_dataset(cfg: &GenConfig, out_dir: &Path) -> Result<Manifest> {
    let plans = plan_sessions(cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let entries: Vec<ManifestEntry> = plans
        .par_iter()
        .map(|plan| -> Result<ManifestEntry> {
            let session = render_session(plan, cfg)?;
            io::save_session(&out_dir.join(&plan.session_id), &session)?;
            Ok(ManifestEntry {
                session_id: plan.session_id.clone(),
                split: plan.split,
                seed: plan.seed,
                t60: plan.t60,
                truth_world_dirs: plan.truth_dirs.iter().map(|d| d.as_array()).collect(),
            })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        condition: cfg.condition,
        n_sessions: cfg.n_sessions,
        n_sources: cfg.n_sources,
        seed: cfg.seed,
        sample_rate: crate::dsp::DEFAULT_SAMPLE_RATE,
        duration_s: cfg.duration_s,
        angular_speed: cfg.angular_speed,
        room_dims: cfg.room_dims,
        snr_db: cfg.snr_db,
        block_frames: cfg.block_frames,
        split_fractions: [
            cfg.split_fractions.0,
            cfg.split_fractions.1,
            cfg.split_fractions.2,
        ],
        sessions: entries,
    };
    io::save_manifest(out_dir, &manifest)?;
    Ok(manifest)
}
