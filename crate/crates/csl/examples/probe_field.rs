use std::path::Path;

use csl::contrast::world_transform;
use csl::data::{featurize, FeatureConfig};
use csl::eval::{kde_multi_source, KdeConfig};
use csl::geometry::build_grid;
use csl::nn::{load_checkpoint, predict_field};
use csl::sim::{load_manifest, load_session, Split};

fn angle(a: [f64; 3], b: [f64; 3]) -> f64 {
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb);
    dot.clamp(-1.0, 1.0).acos().to_degrees()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = Path::new(&args[1]);
    let dataset = Path::new(&args[2]);
    let (net, _) = load_checkpoint(ckpt).unwrap();
    let manifest = load_manifest(dataset).unwrap();
    let grid = build_grid(2562, 2002).unwrap();
    let cfg = FeatureConfig::default();

    for entry in manifest.sessions.iter().filter(|e| e.split == Split::Val) {
        let session = load_session(&dataset.join(&entry.session_id)).unwrap();
        let sf = featurize(&session, &cfg).unwrap();
        let field = predict_field(&net, &sf.features).unwrap();
        let world = world_transform(&field, &sf.rotations).unwrap();
        let truth = entry.truth_world_dirs[0];

        let mut pooled = [0.0f64; 3];
        let mut w_pos = 0.0;
        let mut w_neg = 0.0;
        let mut w_sum = 0.0;
        let mut w_max: f64 = 0.0;
        for v in &world {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let dot = v[0] * truth[0] + v[1] * truth[1] + v[2] * truth[2];
            if dot >= 0.0 {
                w_pos += n;
            } else {
                w_neg += n;
            }
            w_sum += n;
            w_max = w_max.max(n);
            for a in 0..3 {
                pooled[a] += v[a];
            }
        }
        let pooled_err = angle(pooled, truth);

        for bw in [2.0, 8.0] {
            let peaks = kde_multi_source(
                &world,
                &KdeConfig { bandwidth_deg: bw, n_src: 3 },
                &grid,
            )
            .unwrap();
            let descr: Vec<String> = peaks
                .peaks
                .iter()
                .map(|&(j, psi)| {
                    format!(
                        "{:6.2}deg psi={:9.1}",
                        angle(grid.directions()[j].as_array(), truth),
                        psi
                    )
                })
                .collect();
            println!(
                "{} bw={:4.1} pooled={:6.2} negpsi={:.3} wmax={:8.1} peaks: {}",
                entry.session_id,
                bw,
                pooled_err,
                w_neg / (w_pos + w_neg),
                w_max,
                descr.join(" | ")
            );
        }
        let _ = w_sum;
    }
}
