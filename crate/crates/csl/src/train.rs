//! Self-supervised training: mini-batch loop over rotating-array intervals,
//! per-epoch break-point resampling, validation tracking, global sign
//! disambiguation, and window inference with the trained network.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrast::{sub_loss_interval, IntervalOutcome, PooledDirection, SubIntervalId, EPSILON_POOL};
use crate::data::{featurize, FeatureConfig, SessionFeatures};
use crate::derive_seed_n;
use crate::dsp::{gcc_phat_delay, split_interval};
use crate::error::{CslError, Result};
use crate::geometry::{angular_error, Sensor, UnitVector3, World};
use crate::nn::{adam_step, forward_batch, predict_field, save_checkpoint, AdamConfig, AdamState, Mlp};
use crate::sim::{ArraySpec, SessionData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignMethod {
    /// Physical vote: GCC-PHAT delay sign on the widest x-separated mic pair
    /// against the sign the prediction implies. Works on any dataset.
    MicPair,
    /// Assumes sources satisfy ⟨r̂ˢ₀, x̂⟩ > 0 at the first frame.
    InitialOrientation,
    /// Compares against ground truth; evaluation only.
    Oracle,
}

impl std::fmt::Display for SignMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SignMethod::MicPair => "mic-pair",
            SignMethod::InitialOrientation => "initial-orientation",
            SignMethod::Oracle => "oracle",
        })
    }
}

impl std::str::FromStr for SignMethod {
    type Err = CslError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mic-pair" => Ok(SignMethod::MicPair),
            "initial-orientation" => Ok(SignMethod::InitialOrientation),
            "oracle" => Ok(SignMethod::Oracle),
            other => Err(CslError::invalid(format!("unknown sign method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Admissible break-point band: a break b must leave each sub-interval
    /// between c1/(1+c1) and c2/(1+c2) of the frames.
    pub c1: f64,
    pub c2: f64,
    pub seed: u64,
    pub epsilon_pool: f64,
    pub hidden: Vec<usize>,
    /// Cap on bins drawn per interval per epoch (fresh subset each epoch);
    /// None uses every selected bin.
    pub max_bins_per_interval: Option<usize>,
    pub sign_method: SignMethod,
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            lr: 1e-5,
            c1: 0.2,
            c2: 0.8,
            seed: 0,
            epsilon_pool: EPSILON_POOL,
            hidden: vec![1024, 512, 256],
            max_bins_per_interval: None,
            sign_method: SignMethod::MicPair,
            features: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CslError::invalid("epochs and batch_size must be positive"));
        }
        if !(self.lr > 0.0) || !(self.epsilon_pool > 0.0) {
            return Err(CslError::invalid("lr and epsilon_pool must be positive"));
        }
        if !(0.0 < self.c1 && self.c1 <= self.c2) {
            return Err(CslError::invalid("need 0 < c1 <= c2"));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err(CslError::invalid("hidden sizes must be non-empty and positive"));
        }
        Ok(())
    }

    pub fn mlp_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.hidden.len() + 2);
        s.push(input_dim);
        s.extend_from_slice(&self.hidden);
        s.push(3);
        s
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignDecision {
    pub method: SignMethod,
    pub flipped: bool,
    /// Winning side's share of the vote.
    pub vote_fraction: f64,
    pub n_votes: usize,
    /// True when the vote margin fell below 60%; no flip is applied then.
    pub ambiguous: bool,
}

/// Direction estimate for one window of one session.
#[derive(Clone, Debug)]
pub struct DoaEstimate {
    /// [start, end) in frames.
    pub frame_range: (usize, usize),
    pub center_frame: usize,
    /// Pooled world-frame direction; None when no usable bins fell in the
    /// window (empty estimate).
    pub world: Option<UnitVector3<World>>,
    /// Back-transformed sensor-frame direction per frame in the window.
    pub sensor_per_frame: Vec<(usize, UnitVector3<Sensor>)>,
    /// Sum of prediction norms over the window's bins.
    pub confidence_mass: f64,
    pub n_bins: usize,
}

impl DoaEstimate {
    pub fn empty(frame_range: (usize, usize)) -> Self {
        let center = frame_range.0 + (frame_range.1 - frame_range.0).saturating_sub(1) / 2;
        Self {
            frame_range,
            center_frame: center,
            world: None,
            sensor_per_frame: Vec::new(),
            confidence_mass: 0.0,
            n_bins: 0,
        }
    }

    pub fn sensor_at(&self, frame: usize) -> Option<&UnitVector3<Sensor>> {
        self.sensor_per_frame.iter().find(|(n, _)| *n == frame).map(|(_, d)| d)
    }
}

#[derive(Serialize)]
struct EpochRecord<'a> {
    event: &'a str,
    epoch: usize,
    train_loss: f64,
    val_error_deg: Option<f64>,
    wall_time_s: f64,
    n_degenerate: usize,
    n_batches_skipped: usize,
}

pub struct TrainReport {
    pub net: Mlp<f32>,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub final_val_error_deg: Option<f64>,
    pub sign: Option<SignDecision>,
}

/// Evidence handed to sign disambiguation. Mic-pair voting needs raw audio;
/// the other methods work from cached features.
pub struct SignEvidence<'a> {
    pub features: &'a [SessionFeatures],
    pub sessions: Option<&'a [SessionData]>,
    pub array: ArraySpec,
}

fn gather_rows(sf: &SessionFeatures, idx: &[usize]) -> (Vec<f32>, Vec<u16>) {
    let w = sf.features.width;
    let mut x = Vec::with_capacity(idx.len() * w);
    let mut frames = Vec::with_capacity(idx.len());
    for &i in idx {
        x.extend_from_slice(sf.features.row(i));
        frames.push(sf.features.bins[i].1);
    }
    (x, frames)
}

fn subsample_indices(n: usize, cap: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match cap {
        Some(c) if c < n => {
            let mut idx = rand::seq::index::sample(rng, n, c).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

/// Full-window pooled world direction from a fixed bin subset; the
/// validation metric compares it (sign-agnostically) against truth.
fn pooled_world(net: &Mlp<f32>, sf: &SessionFeatures, idx: &[usize]) -> Result<Option<UnitVector3<World>>> {
    if idx.is_empty() {
        return Ok(None);
    }
    let (x, frames) = gather_rows(sf, idx);
    let (y, _) = forward_batch(net, &x, frames.len())?;
    let mut sum = [0.0f64; 3];
    for (i, &f) in frames.iter().enumerate() {
        let r = &sf.rotations[f as usize];
        let v = [y[3 * i] as f64, y[3 * i + 1] as f64, y[3 * i + 2] as f64];
        let w = r.apply_vec3(v);
        for a in 0..3 {
            sum[a] += w[a];
        }
    }
    Ok(PooledDirection::from_sum(sum, 0, SubIntervalId::All, EPSILON_POOL).dir)
}

/// Sign-agnostic angular error in degrees: min over ±r̄ against truth.
pub fn ambiguous_error_deg(est: &UnitVector3<World>, truth: &UnitVector3<World>) -> f64 {
    angular_error(est, truth).min(angular_error(&est.neg(), truth))
}

fn validation_error(
    net: &Mlp<f32>,
    val: &[SessionFeatures],
    val_bins: &[Vec<usize>],
) -> Result<Option<f64>> {
    let per: Vec<Option<f64>> = val
        .par_iter()
        .zip(val_bins)
        .map(|(sf, idx)| {
            if sf.truth.len() != 1 {
                return Ok(None);
            }
            Ok(pooled_world(net, sf, idx)?.map(|d| ambiguous_error_deg(&d, &sf.truth[0])))
        })
        .collect::<Result<_>>()?;
    let errs: Vec<f64> = per.into_iter().flatten().collect();
    if errs.is_empty() {
        Ok(None)
    } else {
        Ok(Some(errs.iter().sum::<f64>() / errs.len() as f64))
    }
}

/// Contrastive training over interval-sessions (one session = one interval).
/// Writes a JSON-lines log and an atomic checkpoint under `out_dir`; aborts
/// with a diagnostic dump on non-finite loss.
pub fn train(
    train_set: &[SessionFeatures],
    val_set: &[SessionFeatures],
    cfg: &TrainConfig,
    evidence: Option<&SignEvidence>,
    out_dir: &Path,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(CslError::invalid("no training sessions"));
    }
    let width = train_set[0].features.width;
    if train_set.iter().chain(val_set).any(|s| s.features.width != width) {
        return Err(CslError::invalid("sessions disagree on feature width"));
    }
    std::fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    serde_json::to_writer(&mut log, &serde_json::json!({"event": "config", "config": cfg}))?;
    log.write_all(b"\n")?;

    let mut net = Mlp::<f32>::he_init(&cfg.mlp_sizes(width), derive_seed_n(cfg.seed, "init", 0))?;
    let mut adam = AdamState::new(&net);
    let adam_cfg = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };

    // fixed validation subsets so the metric is comparable across epochs
    let val_bins: Vec<Vec<usize>> = val_set
        .iter()
        .enumerate()
        .map(|(i, sf)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_n(cfg.seed, "valbins", i as u64));
            subsample_indices(sf.n_bins(), cfg.max_bins_per_interval, &mut rng)
        })
        .collect();

    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut last_loss = f64::NAN;
    let mut last_val = None;
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_n(cfg.seed, "order", epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut used = 0usize;
        let mut degenerate = 0usize;
        let mut skipped_batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let outcomes: Vec<(usize, Result<IntervalOutcome<f32>>)> = batch
                .par_iter()
                .map(|&si| {
                    let sf = &train_set[si];
                    let tag = (epoch as u64) * (n as u64) + si as u64;
                    let mut srng =
                        ChaCha8Rng::seed_from_u64(derive_seed_n(cfg.seed, "split", tag));
                    let split = match split_interval(sf.n_frames, cfg.c1, cfg.c2, &mut srng) {
                        Ok(s) => s,
                        Err(e) => return (si, Err(e)),
                    };
                    let mut brng =
                        ChaCha8Rng::seed_from_u64(derive_seed_n(cfg.seed, "bins", tag));
                    let idx = subsample_indices(sf.n_bins(), cfg.max_bins_per_interval, &mut brng);
                    if idx.is_empty() {
                        return (
                            si,
                            Err(CslError::invalid(format!(
                                "session {} has no selected bins",
                                sf.session_id
                            ))),
                        );
                    }
                    let (x, frames) = gather_rows(sf, &idx);
                    (
                        si,
                        sub_loss_interval(
                            &net,
                            &x,
                            &frames,
                            &sf.rotations,
                            split.break_point,
                            si,
                            cfg.epsilon_pool,
                            true,
                        ),
                    )
                })
                .collect();

            let mut batch_grads = net.zeros_like();
            let mut batch_loss = 0.0;
            let mut batch_used = 0usize;
            for (si, out) in outcomes {
                let out = match out {
                    Ok(o) => o,
                    Err(e) => {
                        if matches!(e, CslError::Numeric(_)) {
                            let dump = out_dir.join("diagnostics.json");
                            let _ = std::fs::write(
                                &dump,
                                serde_json::to_vec_pretty(&serde_json::json!({
                                    "epoch": epoch,
                                    "session": train_set[si].session_id,
                                    "error": e.to_string(),
                                    "last_train_loss": last_loss,
                                }))
                                .unwrap_or_default(),
                            );
                        }
                        return Err(e);
                    }
                };
                if out.degenerate() {
                    degenerate += 1;
                    continue;
                }
                if !out.loss.is_finite() {
                    return Err(CslError::numeric(format!(
                        "non-finite loss in epoch {epoch} on session {}",
                        train_set[si].session_id
                    )));
                }
                batch_loss += out.loss;
                batch_used += 1;
                batch_grads.accumulate(out.grads.as_ref().expect("grads requested"));
            }
            if batch_used == 0 {
                skipped_batches += 1;
                continue;
            }
            adam_step(&mut net, &batch_grads, &mut adam, &adam_cfg);
            epoch_loss += batch_loss;
            used += batch_used;
        }
        if used == 0 {
            return Err(CslError::numeric(format!(
                "epoch {epoch}: every interval was degenerate; nothing to learn from"
            )));
        }
        net.validate_finite().map_err(|e| {
            CslError::numeric(format!("parameters went non-finite after epoch {epoch}: {e}"))
        })?;
        last_loss = epoch_loss / used as f64;
        last_val = validation_error(&net, val_set, &val_bins)?;
        let rec = EpochRecord {
            event: "epoch",
            epoch,
            train_loss: last_loss,
            val_error_deg: last_val,
            wall_time_s: t0.elapsed().as_secs_f64(),
            n_degenerate: degenerate,
            n_batches_skipped: skipped_batches,
        };
        serde_json::to_writer(&mut log, &rec)?;
        log.write_all(b"\n")?;
        log.flush()?;
    }

    let sign = match evidence {
        Some(ev) => {
            let d = disambiguate_sign(&mut net, cfg.sign_method, ev, &cfg.features)?;
            serde_json::to_writer(&mut log, &serde_json::json!({"event": "sign", "decision": &d}))?;
            log.write_all(b"\n")?;
            Some(d)
        }
        None => None,
    };
    log.flush()?;

    let checkpoint_path = out_dir.join("model.ckpt");
    let extra = serde_json::json!({
        "config": cfg,
        "epochs_run": cfg.epochs,
        "final_train_loss": last_loss,
        "sign": sign,
    });
    save_checkpoint(&checkpoint_path, &net, cfg.epochs as u64, extra)?;

    Ok(TrainReport {
        net,
        checkpoint_path,
        log_path,
        epochs_run: cfg.epochs,
        final_train_loss: last_loss,
        final_val_error_deg: last_val,
        sign,
    })
}

/// Resolves the global reflection ambiguity and flips the network output
/// layer in place when the evidence says the mapping is mirrored. A vote
/// margin below 60% leaves the network untouched and flags the decision.
pub fn disambiguate_sign(
    net: &mut Mlp<f32>,
    method: SignMethod,
    evidence: &SignEvidence,
    fcfg: &FeatureConfig,
) -> Result<SignDecision> {
    let (flip_votes, keep_votes) = match method {
        SignMethod::MicPair => {
            let sessions = evidence.sessions.ok_or_else(|| {
                CslError::invalid("mic-pair disambiguation needs raw session audio")
            })?;
            micpair_votes(net, sessions, &evidence.array, fcfg)?
        }
        SignMethod::InitialOrientation => {
            let mut flip = 0usize;
            let mut keep = 0usize;
            for sf in evidence.features {
                let idx: Vec<usize> = (0..sf.n_bins()).collect();
                if let Some(w) = pooled_world(net, sf, &idx)? {
                    let s0 = sf.rotations[0].apply_transpose_vec3(w.as_array());
                    if s0[0] > 0.0 {
                        keep += 1;
                    } else {
                        flip += 1;
                    }
                }
            }
            (flip, keep)
        }
        SignMethod::Oracle => {
            let mut flip = 0usize;
            let mut keep = 0usize;
            for sf in evidence.features {
                if sf.truth.len() != 1 {
                    continue;
                }
                let idx: Vec<usize> = (0..sf.n_bins()).collect();
                if let Some(w) = pooled_world(net, sf, &idx)? {
                    let err = angular_error(&w, &sf.truth[0]);
                    let err_flip = angular_error(&w.neg(), &sf.truth[0]);
                    if err_flip < err {
                        flip += 1;
                    } else {
                        keep += 1;
                    }
                }
            }
            (flip, keep)
        }
    };
    let n_votes = flip_votes + keep_votes;
    if n_votes == 0 {
        return Ok(SignDecision {
            method,
            flipped: false,
            vote_fraction: 0.5,
            n_votes: 0,
            ambiguous: true,
        });
    }
    let winner = flip_votes.max(keep_votes);
    let vote_fraction = winner as f64 / n_votes as f64;
    let ambiguous = vote_fraction < 0.6;
    let flipped = !ambiguous && flip_votes > keep_votes;
    if flipped {
        net.negate_output();
    }
    Ok(SignDecision { method, flipped, vote_fraction, n_votes, ambiguous })
}

/// Physical sign votes: for high-confidence bins, compare the measured
/// GCC-PHAT delay sign on the widest x-separated mic pair with the sign the
/// predicted sensor direction implies. Returns (flip, keep) counts.
fn micpair_votes(
    net: &Mlp<f32>,
    sessions: &[SessionData],
    array: &ArraySpec,
    fcfg: &FeatureConfig,
) -> Result<(usize, usize)> {
    let mut flip = 0usize;
    let mut keep = 0usize;
    for session in sessions {
        let sf = featurize(session, fcfg)?;
        if sf.n_bins() == 0 {
            continue;
        }
        let pred = predict_field(net, &sf.features)?;
        let (f, k) = micpair_votes_field(&pred, session, array, fcfg)?;
        flip += f;
        keep += k;
    }
    Ok((flip, keep))
}

/// Vote core over an explicit prediction field, separated so oracle
/// predictions can be fed in directly.
pub fn micpair_votes_field(
    pred: &crate::nn::PredictionField,
    session: &SessionData,
    array: &ArraySpec,
    fcfg: &FeatureConfig,
) -> Result<(usize, usize)> {
    let mics = array.mic_positions();
    let (mut ia, mut ib) = (0, 1);
    let mut best = f64::NEG_INFINITY;
    for a in 0..mics.len() {
        for b in 0..mics.len() {
            let dx = mics[b][0] - mics[a][0];
            if dx > best {
                best = dx;
                ia = a;
                ib = b;
            }
        }
    }
    let delta = [
        mics[ib][0] - mics[ia][0],
        mics[ib][1] - mics[ia][1],
        mics[ib][2] - mics[ia][2],
    ];
    let delta_norm = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
    if !(delta_norm > 0.0) {
        return Err(CslError::invalid("array has no x-separated mic pair"));
    }
    if pred.len() == 0 {
        return Ok((0, 0));
    }
    let mut confidences: Vec<f64> = (0..pred.len()).map(|i| pred.confidence(i)).collect();
    confidences.sort_by(|a, b| a.total_cmp(b));
    let cutoff = confidences[(confidences.len() * 9) / 10];

    let frame_len = fcfg.frame_len;
    let hop = fcfg.hop;
    let a64: Vec<f64> = session.audio[ia].iter().map(|&v| v as f64).collect();
    let b64: Vec<f64> = session.audio[ib].iter().map(|&v| v as f64).collect();
    let mut frame_delay: std::collections::HashMap<u16, Option<f64>> =
        std::collections::HashMap::new();
    let mut flip = 0usize;
    let mut keep = 0usize;
    for (i, &(_, nf)) in pred.bins.iter().enumerate() {
        if pred.confidence(i) < cutoff {
            continue;
        }
        let r = pred.outputs[i];
        let along = delta[0] * r[0] + delta[1] * r[1] + delta[2] * r[2];
        let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        if norm <= 0.0 || along.abs() < 0.15 * delta_norm * norm {
            continue; // near-broadside: delay sign carries no information
        }
        let delay = *frame_delay.entry(nf).or_insert_with(|| {
            let start = nf as usize * hop;
            let end = start + frame_len;
            if end > a64.len() {
                return None;
            }
            match gcc_phat_delay(&a64[start..end], &b64[start..end], 8) {
                Ok((d, _)) if d.abs() >= 0.2 => Some(d),
                _ => None,
            }
        });
        let Some(d) = delay else { continue };
        // positive delay: channel a lags b, wavefront reached b first,
        // so ⟨Δp, r̂ˢ⟩ > 0
        if (d > 0.0) == (along > 0.0) {
            keep += 1;
        } else {
            flip += 1;
        }
    }
    Ok((flip, keep))
}

/// Pools the network's predictions over one frame window into a single
/// world direction, then back-transforms it per frame. Windows with no
/// usable bins yield an empty estimate.
pub fn infer_window(
    net: &Mlp<f32>,
    sf: &SessionFeatures,
    frame_range: (usize, usize),
) -> Result<DoaEstimate> {
    let (start, end) = frame_range;
    if start >= end || end > sf.n_frames {
        return Err(CslError::invalid(format!(
            "window [{start}, {end}) out of range for {} frames",
            sf.n_frames
        )));
    }
    let idx: Vec<usize> = sf
        .features
        .bins
        .iter()
        .enumerate()
        .filter(|(_, &(_, n))| (n as usize) >= start && (n as usize) < end)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Ok(DoaEstimate::empty(frame_range));
    }
    let (x, frames) = gather_rows(sf, &idx);
    let (y, _) = forward_batch(net, &x, frames.len())?;
    let mut sum = [0.0f64; 3];
    let mut mass = 0.0f64;
    for (i, &f) in frames.iter().enumerate() {
        let v = [y[3 * i] as f64, y[3 * i + 1] as f64, y[3 * i + 2] as f64];
        mass += (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let w = sf.rotations[f as usize].apply_vec3(v);
        for a in 0..3 {
            sum[a] += w[a];
        }
    }
    let pooled = PooledDirection::from_sum(sum, 0, SubIntervalId::All, EPSILON_POOL);
    let Some(world) = pooled.dir else {
        return Ok(DoaEstimate::empty(frame_range));
    };
    let sensor_per_frame = (start..end)
        .map(|nf| {
            let s = sf.rotations[nf].apply_transpose_vec3(world.as_array());
            Ok((nf, UnitVector3::normalized(s)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DoaEstimate {
        frame_range,
        center_frame: start + (end - start - 1) / 2,
        world: Some(world),
        sensor_per_frame,
        confidence_mass: mass,
        n_bins: idx.len(),
    })
}
