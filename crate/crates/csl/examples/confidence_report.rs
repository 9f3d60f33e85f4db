//! Does the model know when it is right? The prediction norm acts as a
//! confidence score: bin every time-frequency prediction into confidence
//! quantiles and check that the error falls as confidence rises.
//!
//!     cargo run --release -p csl --example confidence_report -- [model.ckpt dataset_dir]
//!
//! Without arguments it trains a small model on simulated sessions first.

use csl::data::{load_dataset, FeatureConfig};
use csl::eval::{confidence_analysis, write_confidence_csv, write_scatter_csv};
use csl::nn::load_checkpoint;
use csl::sim::{gen_dataset, Condition, GenConfig, Split};

fn main() -> csl::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (net, data_dir, _keep) = match args.as_slice() {
        [ckpt, dataset] => {
            let (net, _) = load_checkpoint(std::path::Path::new(ckpt))?;
            (net, std::path::PathBuf::from(dataset), None)
        }
        _ => {
            println!("no checkpoint given; training a small model first\n");
            let dir = tempfile::tempdir().map_err(csl::CslError::from)?;
            let gen = GenConfig {
                condition: Condition::Anechoic,
                n_sessions: 14,
                duration_s: 2.0,
                seed: 402,
                ..GenConfig::default()
            };
            gen_dataset(&gen, dir.path())?;
            let cfg = csl::train::TrainConfig {
                epochs: 12,
                lr: 3e-4,
                hidden: vec![64, 32],
                max_bins_per_interval: Some(800),
                seed: 3,
                sign_method: csl::train::SignMethod::Oracle,
                ..Default::default()
            };
            let train_set = load_dataset(dir.path(), &cfg.features, Some(Split::Train))?;
            let evidence = csl::train::SignEvidence {
                features: &train_set,
                sessions: None,
                array: csl::sim::ArraySpec::default(),
            };
            let report =
                csl::train::train(&train_set, &[], &cfg, Some(&evidence), &dir.path().join("run"))?;
            (report.net, dir.path().to_path_buf(), Some(dir))
        }
    };

    let sessions = load_dataset(&data_dir, &FeatureConfig::default(), None)?;
    let (report, scatter) = confidence_analysis(&net, &sessions)?;

    println!("{:>4} {:>12} {:>12} {:>8}", "bin", "conf_edge", "mean_err_deg", "n");
    for b in 0..report.mean_error_deg.len() {
        println!(
            "{:>4} {:>12.4} {:>12.2} {:>8}",
            b, report.edges[b], report.mean_error_deg[b], report.n_per_bin[b]
        );
    }
    println!(
        "\nerror non-increasing with confidence in {:.0}% of adjacent bin pairs",
        100.0 * report.non_increasing_fraction()
    );
    println!("{} bins above the 95th confidence percentile", scatter.len());

    write_confidence_csv(std::path::Path::new("confidence.csv"), &report)?;
    write_scatter_csv(std::path::Path::new("confidence_scatter.csv"), &scatter)?;
    println!("wrote confidence.csv and confidence_scatter.csv");
    Ok(())
}
