//! Feature caching for training and evaluation: turns stored sessions into
//! per-bin feature rows plus the rotation/truth context needed downstream.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{
    extract_features, select_bins, stft, FeatureTensor, DEFAULT_BAND_HZ, DEFAULT_FRAME_LEN,
    DEFAULT_HOP, DEFAULT_THRESHOLD_DB,
};
use crate::error::{CslError, Result};
use crate::geometry::{RotationMatrix, UnitVector3, World};
use crate::sim::{load_manifest, load_session, SessionData, Split};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub threshold_db: f64,
    pub band_hz: (f64, f64),
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_len: DEFAULT_FRAME_LEN,
            hop: DEFAULT_HOP,
            threshold_db: DEFAULT_THRESHOLD_DB,
            band_hz: DEFAULT_BAND_HZ,
        }
    }
}

/// One session reduced to what the learner and evaluators consume.
#[derive(Clone)]
pub struct SessionFeatures {
    pub session_id: String,
    pub split: Split,
    pub t60: f64,
    pub seed: u64,
    /// Selected-bin feature rows; `features.bins` carries (k, n) per row.
    pub features: FeatureTensor,
    pub rotations: Vec<RotationMatrix>,
    pub truth: Vec<UnitVector3<World>>,
    pub n_frames: usize,
    /// Per source, per frame energy (for presence gating in multi-source eval).
    pub frame_energies: Vec<Vec<f32>>,
}

impl SessionFeatures {
    pub fn n_bins(&self) -> usize {
        self.features.bins.len()
    }
}

/// STFT → threshold bin selection → normalized feature rows.
pub fn featurize(session: &SessionData, cfg: &FeatureConfig) -> Result<SessionFeatures> {
    featurize_with_stft(session, cfg).map(|(sf, _)| sf)
}

/// Like `featurize`, but also hands back the STFT for consumers that need
/// the raw coefficients (the geometry-aware baselines).
pub fn featurize_with_stft(
    session: &SessionData,
    cfg: &FeatureConfig,
) -> Result<(SessionFeatures, crate::dsp::StftTensor)> {
    let audio = session.audio_f64();
    let y = stft(&audio, session.sample_rate, cfg.frame_len, cfg.hop)?;
    if y.n_frames > session.rotations.len() {
        return Err(CslError::invalid(format!(
            "session {}: {} STFT frames but only {} rotations",
            session.session_id,
            y.n_frames,
            session.rotations.len()
        )));
    }
    let sel = select_bins(&y, cfg.threshold_db, cfg.band_hz)?;
    let features = extract_features(&y, &sel);
    let sf = SessionFeatures {
        session_id: session.session_id.clone(),
        split: session.split,
        t60: session.t60,
        seed: session.seed,
        features,
        rotations: session.rotations.clone(),
        truth: session.truth_world_dirs.clone(),
        n_frames: y.n_frames,
        frame_energies: session.frame_energies.clone(),
    };
    Ok((sf, y))
}

pub fn load_session_features(dir: &Path, cfg: &FeatureConfig) -> Result<SessionFeatures> {
    let session = load_session(dir)?;
    featurize(&session, cfg)
}

/// Loads every session listed in the manifest (optionally one split only),
/// in manifest order. Featurization fans out across workers.
pub fn load_dataset(
    dataset_dir: &Path,
    cfg: &FeatureConfig,
    split: Option<Split>,
) -> Result<Vec<SessionFeatures>> {
    let manifest = load_manifest(dataset_dir)?;
    let wanted: Vec<&str> = manifest
        .sessions
        .iter()
        .filter(|e| split.map_or(true, |s| e.split == s))
        .map(|e| e.session_id.as_str())
        .collect();
    if wanted.is_empty() {
        return Err(CslError::invalid(format!(
            "dataset {} has no sessions{}",
            dataset_dir.display(),
            split.map_or(String::new(), |s| format!(" in split {s}"))
        )));
    }
    wanted
        .par_iter()
        .map(|id| load_session_features(&dataset_dir.join(id), cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{gen_dataset, Condition, GenConfig};
    use tempfile::tempdir;

    #[test]
    fn featurize_and_load_round_trip() {
        let dir = tempdir().unwrap();
        let cfg = GenConfig {
            condition: Condition::Anechoic,
            n_sessions: 3,
            seed: 11,
            duration_s: 1.0,
            ..GenConfig::default()
        };
        gen_dataset(&cfg, dir.path()).unwrap();
        let all = load_dataset(dir.path(), &FeatureConfig::default(), None).unwrap();
        assert_eq!(all.len(), 3);
        for sf in &all {
            assert!(sf.n_bins() > 100, "speech should light up many bins");
            assert_eq!(sf.features.width, 2 * 8 + 1);
            assert_eq!(sf.rotations.len(), sf.n_frames);
            // every bin's frame index must have a rotation
            assert!(sf.features.bins.iter().all(|&(_, n)| (n as usize) < sf.n_frames));
        }
        let train_only = load_dataset(dir.path(), &FeatureConfig::default(), Some(Split::Train)).unwrap();
        assert!(!train_only.is_empty());
        assert!(train_only.iter().all(|s| s.split == Split::Train));
    }
}
