use csl::sim::{compute_rir, schroeder_t60, RoomSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let fs = 16000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for &t60 in &[0.25, 0.5, 0.75] {
        for &scale in &[3.5f64, 4.5, 6.0] {
            let dims = [scale, scale * 0.9, scale * 0.8];
            let room = RoomSpec::new(dims, t60).unwrap();
            let mut worst = 0.0f64;
            for _ in 0..3 {
                let p = |rng: &mut ChaCha8Rng| {
                    [
                        rng.gen_range(0.5..dims[0] - 0.5),
                        rng.gen_range(0.5..dims[1] - 0.5),
                        rng.gen_range(0.5..dims[2] - 0.5),
                    ]
                };
                let src = p(&mut rng);
                let mic = p(&mut rng);
                let h = compute_rir(&room, src, mic, None, fs).unwrap();
                let est = schroeder_t60(&h, fs).unwrap();
                worst = worst.max((est - t60).abs() / t60);
            }
            println!("t60 {t60:4.2} scale {scale:3.1}: worst rel err {:5.1}%", worst * 100.0);
        }
    }
}
