//! Classical baselines on one simulated session: steer a direction grid,
//! score SRP-PHAT and LSDD window by window, and compare against the
//! rotating ground truth.
//!
//!     cargo run --release -p csl --example localize_baselines

use csl::baselines::{build_steering, lsdd, srp_phat, LSDD_ALPHA, LSDD_BAND_HZ, SRP_BAND_HZ};
use csl::data::{featurize_with_stft, FeatureConfig};
use csl::geometry::{angular_error, build_grid};
use csl::sim::{gen_dataset, ArraySpec, Condition, GenConfig};

fn main() -> csl::Result<()> {
    let dir = tempfile::tempdir().map_err(csl::CslError::from)?;
    let cfg = GenConfig {
        condition: Condition::Anechoic,
        n_sessions: 1,
        duration_s: 2.0,
        seed: 31,
        block_frames: 2,
        ..GenConfig::default()
    };
    let manifest = gen_dataset(&cfg, dir.path())?;
    let session = csl::sim::load_session(&dir.path().join(&manifest.sessions[0].session_id))?;
    let (sf, y) = featurize_with_stft(&session, &FeatureConfig::default())?;

    let grid = build_grid(2562, 2002)?;
    let table = build_steering(&ArraySpec::default(), &grid, y.sample_rate, y.frame_len)?;
    println!(
        "grid {} directions ({:.2} deg spacing), {} mics, {} frames",
        grid.len(),
        grid.resolution_deg(),
        table.n_mics,
        sf.n_frames
    );

    // 200 ms windows, half-overlapped.
    let l = 20;
    println!("\n{:>6} {:>10} {:>10}", "frame", "srp_deg", "lsdd_deg");
    let mut srp_sum = 0.0;
    let mut lsdd_sum = 0.0;
    let mut count = 0;
    let mut start = 0;
    while start + l <= sf.n_frames {
        let w = (start, start + l);
        let center = start + (l - 1) / 2;
        let truth = session.sensor_truth(center, 0);
        let s = srp_phat(&y, &table, &grid, w, SRP_BAND_HZ)?;
        let d = lsdd(&y, &table, &grid, w, LSDD_BAND_HZ, LSDD_ALPHA)?;
        if let (Some(se), Some(de)) = (s.sensor_at(center), d.sensor_at(center)) {
            let es = angular_error(&se, &truth);
            let ed = angular_error(&de, &truth);
            if count % 4 == 0 {
                println!("{center:>6} {es:>10.2} {ed:>10.2}");
            }
            srp_sum += es;
            lsdd_sum += ed;
            count += 1;
        }
        start += l / 2;
    }
    println!(
        "\nmean over {count} windows: srp-phat {:.2} deg, lsdd {:.2} deg",
        srp_sum / count as f64,
        lsdd_sum / count as f64
    );
    Ok(())
}
