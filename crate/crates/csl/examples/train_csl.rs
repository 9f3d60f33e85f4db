//! Train the contrastive localizer end to end on a small simulated
//! dataset: no labels enter the loss; the network only ever sees
//! time-frequency features and the array's own rotation signal. The
//! mirror ambiguity is resolved afterwards from microphone physics.
//!
//!     cargo run --release -p csl --example train_csl -- [out_dir]

use csl::data::load_dataset;
use csl::sim::{gen_dataset, load_session, ArraySpec, Condition, GenConfig, Split};
use csl::train::{train, SignEvidence, SignMethod, TrainConfig};

fn main() -> csl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "train_csl_out".to_string());
    let out = std::path::PathBuf::from(out);

    let data_dir = tempfile::tempdir().map_err(csl::CslError::from)?;
    let gen = GenConfig {
        condition: Condition::Anechoic,
        n_sessions: 16,
        duration_s: 2.0,
        seed: 400,
        ..GenConfig::default()
    };
    println!("simulating {} sessions...", gen.n_sessions);
    let manifest = gen_dataset(&gen, data_dir.path())?;

    let cfg = TrainConfig {
        epochs: 12,
        lr: 3e-4,
        hidden: vec![64, 32],
        max_bins_per_interval: Some(800),
        seed: 1,
        sign_method: SignMethod::MicPair,
        ..TrainConfig::default()
    };
    let train_set = load_dataset(data_dir.path(), &cfg.features, Some(Split::Train))?;
    let val_set = load_dataset(data_dir.path(), &cfg.features, Some(Split::Val))?;
    println!(
        "{} train / {} val sessions, {} feature dims",
        train_set.len(),
        val_set.len(),
        train_set[0].features.width
    );

    // Raw audio from a few sessions feeds the mic-pair sign vote.
    let audio: Vec<_> = manifest
        .sessions
        .iter()
        .filter(|e| e.split == Split::Train)
        .take(6)
        .map(|e| load_session(&data_dir.path().join(&e.session_id)))
        .collect::<csl::Result<_>>()?;
    let evidence = SignEvidence {
        features: &train_set,
        sessions: Some(&audio),
        array: ArraySpec::default(),
    };

    let report = train(&train_set, &val_set, &cfg, Some(&evidence), &out)?;
    println!(
        "\n{} epochs, final train loss {:.4}",
        report.epochs_run, report.final_train_loss
    );
    if let Some(v) = report.final_val_error_deg {
        println!("validation error {v:.1} deg (sign-ambiguous, full-session windows)");
    }
    if let Some(sign) = &report.sign {
        println!(
            "mirror fix: flipped={} from {} votes ({:.0}% agreement)",
            sign.flipped,
            sign.n_votes,
            100.0 * sign.vote_fraction.max(1.0 - sign.vote_fraction)
        );
    }
    println!("checkpoint: {}", report.checkpoint_path.display());
    println!("log:        {}", report.log_path.display());
    Ok(())
}
