use std::collections::HashMap;
use std::path::Path;

use csl::data::{featurize, FeatureConfig};
use csl::nn::{load_checkpoint, predict_field};
use csl::sim::load_session;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (net, _) = load_checkpoint(Path::new(&args[1])).unwrap();
    let session = load_session(Path::new(&args[2])).unwrap();
    let sf = featurize(&session, &FeatureConfig::default()).unwrap();
    let field = predict_field(&net, &sf.features).unwrap();

    let mut by_norm: HashMap<u64, (usize, usize)> = HashMap::new();
    for i in 0..field.len() {
        let e = by_norm.entry(field.confidence(i).to_bits()).or_insert((0, i));
        e.0 += 1;
    }
    let mut top: Vec<_> = by_norm.into_iter().collect();
    top.sort_by_key(|(_, (c, _))| std::cmp::Reverse(*c));
    println!("{} selected bins, {} distinct norms", sf.n_bins(), top.len());
    for (bits, (count, first)) in top.iter().take(4) {
        let (k, n) = sf.features.bins[*first];
        println!(
            "norm {:.17} count {count} first at (k={k}, n={n}) row {:?}",
            f64::from_bits(*bits),
            sf.features.row(*first)
        );
    }
}
