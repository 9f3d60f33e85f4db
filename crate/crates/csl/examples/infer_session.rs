//! Per-window inference from a trained checkpoint: pool the prediction
//! field over each window in the world frame, back-rotate to the sensor
//! frame, and report direction, confidence mass, and error against truth.
//!
//! Point it at a checkpoint from `train_csl` or the `csl train` command;
//! with no arguments it trains a small model first.
//!
//!     cargo run --release -p csl --example infer_session -- [model.ckpt dataset_dir]

use csl::data::{featurize, FeatureConfig};
use csl::geometry::angular_error;
use csl::nn::{load_checkpoint, Mlp};
use csl::sim::{gen_dataset, load_session, Condition, GenConfig};
use csl::train::infer_window;

fn main() -> csl::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (net, data_dir, _keep): (Mlp<f32>, std::path::PathBuf, Option<tempfile::TempDir>) =
        match args.as_slice() {
            [ckpt, dataset] => {
                let (net, meta) = load_checkpoint(std::path::Path::new(ckpt))?;
                println!("loaded {} (layers {:?}, step {})", ckpt, net.sizes(), meta.step);
                (net, dataset.into(), None)
            }
            _ => {
                println!("no checkpoint given; training a small model first\n");
                let dir = tempfile::tempdir().map_err(csl::CslError::from)?;
                let gen = GenConfig {
                    condition: Condition::Anechoic,
                    n_sessions: 12,
                    duration_s: 2.0,
                    seed: 401,
                    ..GenConfig::default()
                };
                gen_dataset(&gen, dir.path())?;
                let cfg = csl::train::TrainConfig {
                    epochs: 10,
                    lr: 3e-4,
                    hidden: vec![64, 32],
                    max_bins_per_interval: Some(800),
                    seed: 2,
                    sign_method: csl::train::SignMethod::Oracle,
                    ..Default::default()
                };
                let train_set =
                    csl::data::load_dataset(dir.path(), &cfg.features, Some(csl::sim::Split::Train))?;
                let evidence = csl::train::SignEvidence {
                    features: &train_set,
                    sessions: None,
                    array: csl::sim::ArraySpec::default(),
                };
                let out = dir.path().join("run");
                let report = csl::train::train(&train_set, &[], &cfg, Some(&evidence), &out)?;
                let path = dir.path().to_path_buf();
                (report.net, path, Some(dir))
            }
        };

    let manifest = csl::sim::load_manifest(&data_dir)?;
    let session = load_session(&data_dir.join(&manifest.sessions[0].session_id))?;
    let sf = featurize(&session, &FeatureConfig::default())?;
    println!(
        "session {} ({} frames, {} selected bins)\n",
        sf.session_id,
        sf.n_frames,
        sf.features.bins.len()
    );

    let l = 50; // half-second windows
    println!(
        "{:>11} {:>8} {:>8} {:>8} {:>10} {:>9}",
        "frames", "x", "y", "z", "conf_mass", "err_deg"
    );
    let mut start = 0;
    while start + l <= sf.n_frames {
        let w = (start, start + l);
        let est = infer_window(&net, &sf, w)?;
        let c = est.center_frame;
        if let Some(dir) = est.sensor_at(c) {
            let truth = session.sensor_truth(c, 0);
            let [x, y, z] = dir.as_array();
            println!(
                "{:>5}..{:<5} {x:>8.3} {y:>8.3} {z:>8.3} {:>10.2} {:>9.2}",
                w.0,
                w.1,
                est.confidence_mass,
                angular_error(&dir, &truth)
            );
        }
        start += l;
    }
    Ok(())
}
