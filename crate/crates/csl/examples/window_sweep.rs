//! Error versus window length: tile sessions with half-overlapped windows
//! at several lengths and aggregate each estimator's angular error. Longer
//! windows integrate more rotation and should help every method.
//!
//!     cargo run --release -p csl --example window_sweep -- [model.ckpt dataset_dir]
//!
//! Without arguments it simulates a few sessions and sweeps the two
//! classical baselines; with a checkpoint it sweeps the learned model too.

use csl::baselines::build_steering;
use csl::data::FeatureConfig;
use csl::eval::{prepare_dataset, sweep_csv, window_sweep, Estimator, WindowLen};
use csl::geometry::build_grid;
use csl::nn::load_checkpoint;
use csl::sim::{gen_dataset, ArraySpec, Condition, GenConfig};

fn main() -> csl::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (net, data_dir, _keep) = match args.as_slice() {
        [ckpt, dataset] => {
            let (net, _) = load_checkpoint(std::path::Path::new(ckpt))?;
            (Some(net), std::path::PathBuf::from(dataset), None)
        }
        _ => {
            let dir = tempfile::tempdir().map_err(csl::CslError::from)?;
            let gen = GenConfig {
                condition: Condition::Anechoic,
                n_sessions: 4,
                duration_s: 2.0,
                seed: 52,
                block_frames: 2,
                ..GenConfig::default()
            };
            println!("simulating {} anechoic sessions...", gen.n_sessions);
            gen_dataset(&gen, dir.path())?;
            (None, dir.path().to_path_buf(), Some(dir))
        }
    };

    let manifest = csl::sim::load_manifest(&data_dir)?;
    let condition = manifest.condition.to_string();
    let sessions = prepare_dataset(&data_dir, &FeatureConfig::default(), None)?;
    let grid = build_grid(2562, 2002)?;
    let table = build_steering(
        &ArraySpec::default(),
        &grid,
        sessions[0].y.sample_rate,
        sessions[0].y.frame_len,
    )?;

    let lens = [
        WindowLen::Seconds(0.05),
        WindowLen::Seconds(0.2),
        WindowLen::Seconds(0.5),
        WindowLen::Seconds(1.0),
        WindowLen::Full,
    ];
    let mut rows = Vec::new();
    rows.extend(window_sweep(
        &Estimator::SrpPhat { table: &table, grid: &grid },
        &sessions,
        &lens,
        &condition,
    )?);
    rows.extend(window_sweep(
        &Estimator::Lsdd { table: &table, grid: &grid },
        &sessions,
        &lens,
        &condition,
    )?);
    if let Some(net) = &net {
        rows.extend(window_sweep(&Estimator::Csl { net }, &sessions, &lens, &condition)?);
    }

    print!("\n{}", sweep_csv(&rows));
    std::fs::write("window_sweep.csv", sweep_csv(&rows))?;
    println!("\nwrote window_sweep.csv");
    Ok(())
}
