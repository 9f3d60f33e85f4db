//! Image-source room impulse responses for rectangular rooms, plus the
//! Schroeder backward-integration reverberation-time measurement.

use std::sync::OnceLock;

use crate::error::{CslError, Result};
use crate::sim::RoomSpec;

/// Windowed-sinc fractional-delay kernel length (must be odd).
pub const KERNEL_TAPS: usize = 81;
const KERNEL_HALF: usize = KERNEL_TAPS / 2;
/// Sub-sample resolution of the precomputed kernel table.
const KERNEL_STEPS: usize = 8192;
/// Reflections are kept until the diffuse tail has decayed this far below
/// the direct sound; beyond that they no longer move the Schroeder fit.
const CULL_DB: f64 = 40.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Rows of 81 taps for fractions 0/8192 .. 8192/8192 inclusive.
fn kernel_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity((KERNEL_STEPS + 1) * KERNEL_TAPS);
        for step in 0..=KERNEL_STEPS {
            let frac = step as f64 / KERNEL_STEPS as f64;
            for j in 0..KERNEL_TAPS {
                let w = 0.5
                    - 0.5
                        * (std::f64::consts::TAU * j as f64 / (KERNEL_TAPS - 1) as f64).cos();
                t.push(w * sinc(j as f64 - KERNEL_HALF as f64 - frac));
            }
        }
        t
    })
}

/// Specular decay in near-cubic rooms is a mixture of per-direction rates;
/// the slow (axial) directions dominate the late Schroeder fit, so a plain
/// Eyring inversion measures ~30% long. Calibrated against the Schroeder
/// measurement on generated responses.
const AXIAL_DECAY_EXCESS: f64 = 1.3;

/// Uniform wall reflection coefficient that makes the Schroeder-measured
/// decay of the generated response hit the requested reverberation time
/// (Eyring's relation, inverted, with a mixing calibration).
pub fn wall_reflection(room: &RoomSpec) -> f64 {
    if room.t60 <= 0.0 {
        return 0.0;
    }
    let [lx, ly, lz] = room.dimensions;
    let volume = lx * ly * lz;
    let surface = 2.0 * (lx * ly + lx * lz + ly * lz);
    // T60 = 24 ln10 · V / (−c S ln(1−α)), β = √(1−α)
    (-12.0 * std::f64::consts::LN_10 * volume * AXIAL_DECAY_EXCESS
        / (room.speed_of_sound * surface * room.t60))
        .exp()
}

fn check_inside(room: &RoomSpec, p: [f64; 3], what: &str) -> Result<()> {
    for a in 0..3 {
        if !(p[a] > 0.0 && p[a] < room.dimensions[a]) {
            return Err(CslError::invalid(format!(
                "{what} position {p:?} is not strictly inside room {:?}",
                room.dimensions
            )));
        }
    }
    Ok(())
}

/// Per-axis image description: signed coordinate offset to the receiver and
/// the number of wall reflections the image implies on that axis.
struct AxisImages {
    delta: Vec<f64>,
    order: Vec<u32>,
}

fn axis_images(src: f64, rcv: f64, len: f64, l_max: i64, reach: f64) -> AxisImages {
    let mut delta = Vec::new();
    let mut order = Vec::new();
    for p in 0..2i64 {
        for l in -l_max..=l_max {
            let d = (1 - 2 * p) as f64 * src + 2.0 * l as f64 * len - rcv;
            if d.abs() > reach {
                continue;
            }
            delta.push(d);
            order.push(((l - p).unsigned_abs() + l.unsigned_abs()) as u32);
        }
    }
    AxisImages { delta, order }
}

/// Image-source impulse response from `source` to `mic`, both in room
/// coordinates (meters). With `max_order` unset, images are kept out to the
/// distance where the tail has decayed `CULL_DB` below the direct path;
/// an explicit order caps the reflection count instead.
pub fn compute_rir(
    room: &RoomSpec,
    source: [f64; 3],
    mic: [f64; 3],
    max_order: Option<usize>,
    sample_rate: u32,
) -> Result<Vec<f64>> {
    check_inside(room, source, "source")?;
    check_inside(room, mic, "mic")?;
    let fs = sample_rate as f64;
    let c = room.speed_of_sound;
    let beta = wall_reflection(room);
    let direct = ((source[0] - mic[0]).powi(2)
        + (source[1] - mic[1]).powi(2)
        + (source[2] - mic[2]).powi(2))
    .sqrt();

    // horizon: how far out images can still matter
    let reach = match (max_order, beta > 0.0) {
        (Some(k), _) => {
            // all images of order ≤ k lie within (k+1) room spans of the mic
            let span = room
                .dimensions
                .iter()
                .fold(0.0f64, |acc, &l| acc.max(l));
            direct + 2.0 * (k as f64 + 1.0) * span
        }
        (None, false) => direct + 1.0,
        (None, true) => direct + c * room.t60 * (CULL_DB / 60.0),
    };
    let order_cap = max_order.map(|k| k as u32).unwrap_or(u32::MAX);

    let n_taps = (reach / c * fs).ceil() as usize + KERNEL_TAPS + 1;
    let mut rir = vec![0.0f64; n_taps];
    let table = kernel_table();

    let axes: Vec<AxisImages> = (0..3)
        .map(|a| {
            let l_max = (reach / (2.0 * room.dimensions[a])).ceil() as i64 + 1;
            axis_images(source[a], mic[a], room.dimensions[a], l_max, reach)
        })
        .collect();

    let reach2 = reach * reach;
    let log_beta = if beta > 0.0 { beta.ln() } else { 0.0 };
    for (iz, &dz) in axes[2].delta.iter().enumerate() {
        let oz = axes[2].order[iz];
        let dz2 = dz * dz;
        for (iy, &dy) in axes[1].delta.iter().enumerate() {
            let oy = axes[1].order[iy];
            let dzy2 = dz2 + dy * dy;
            if dzy2 > reach2 {
                continue;
            }
            let ozy = oz + oy;
            for (ix, &dx) in axes[0].delta.iter().enumerate() {
                let d2 = dzy2 + dx * dx;
                if d2 > reach2 {
                    continue;
                }
                let order = ozy + axes[0].order[ix];
                if order > order_cap {
                    continue;
                }
                if order > 0 && beta <= 0.0 {
                    continue;
                }
                let d = d2.sqrt();
                let amp = (order as f64 * log_beta).exp()
                    / (4.0 * std::f64::consts::PI * d.max(1e-3));
                let delay = d / c * fs;
                let i0 = delay.floor() as usize;
                let frac = delay - i0 as f64;
                let row = (frac * KERNEL_STEPS as f64).round() as usize;
                let kernel = &table[row * KERNEL_TAPS..(row + 1) * KERNEL_TAPS];
                let base = i0 as isize - KERNEL_HALF as isize;
                let j_lo = (-base).max(0) as usize;
                let out = &mut rir[(base + j_lo as isize) as usize
                    ..(base + KERNEL_TAPS as isize) as usize];
                for (o, &k) in out.iter_mut().zip(&kernel[j_lo..]) {
                    *o += amp * k;
                }
            }
        }
    }
    Ok(rir)
}

/// Reverberation time from Schroeder backward integration, fitted between
/// −5 dB and −25 dB (or as deep as the response decays, when shallower).
pub fn schroeder_t60(rir: &[f64], sample_rate: u32) -> Result<f64> {
    let total: f64 = rir.iter().map(|x| x * x).sum();
    if !(total > 0.0) {
        return Err(CslError::numeric("silent impulse response"));
    }
    let mut curve = vec![0.0f64; rir.len()];
    let mut acc = 0.0;
    for (i, x) in rir.iter().enumerate().rev() {
        acc += x * x;
        curve[i] = acc;
    }
    let db: Vec<f64> = curve
        .iter()
        .map(|&e| 10.0 * (e / total).max(1e-300).log10())
        .collect();
    let floor_db = db[db.len() - 1].max(-120.0);
    let hi = -5.0;
    let lo = (-25.0f64).max(floor_db + 5.0);
    if lo > hi - 10.0 {
        return Err(CslError::numeric(format!(
            "response decays only to {floor_db:.1} dB, too shallow for a fit"
        )));
    }
    let i_hi = db
        .iter()
        .position(|&v| v <= hi)
        .ok_or_else(|| CslError::numeric("decay never crosses -5 dB"))?;
    let i_lo = db
        .iter()
        .position(|&v| v <= lo)
        .ok_or_else(|| CslError::numeric("decay never crosses fit floor"))?;
    if i_lo <= i_hi + 1 {
        return Err(CslError::numeric("fit region too short"));
    }
    // least-squares line through (t, dB) on the fit region
    let n = (i_lo - i_hi) as f64;
    let (mut st, mut sd, mut stt, mut std_) = (0.0, 0.0, 0.0, 0.0);
    for i in i_hi..i_lo {
        let t = i as f64 / sample_rate as f64;
        st += t;
        sd += db[i];
        stt += t * t;
        std_ += t * db[i];
    }
    let slope = (n * std_ - st * sd) / (n * stt - st * st);
    if !(slope < 0.0) {
        return Err(CslError::numeric("non-decaying Schroeder curve"));
    }
    Ok(-60.0 / slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn room(t60: f64) -> RoomSpec {
        RoomSpec::new([4.0, 4.0, 4.0], t60).unwrap()
    }

    #[test]
    fn anechoic_peak_sits_at_direct_delay() {
        let r = room(0.0);
        let h = compute_rir(&r, [1.0, 2.0, 2.0], [2.0, 2.0, 2.0], None, 16_000).unwrap();
        let peak = h
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
            .0;
        // 1 m at 343 m/s and 16 kHz → 46.65 samples
        assert!((peak as f64 - 16_000.0 / 343.0).abs() <= 1.0, "peak at {peak}");
        // energy concentrated at the (interpolated) impulse
        let total: f64 = h.iter().map(|x| x * x).sum();
        let local: f64 = h[peak - 8..=peak + 8].iter().map(|x| x * x).sum();
        assert!(local / total > 0.98, "main lobe holds {}", local / total);
    }

    #[test]
    fn anechoic_delay_tracks_distance_over_random_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = room(0.0);
        for _ in 0..100 {
            let p = [0.5 + 3.0 * rng.gen::<f64>(), 0.5 + 3.0 * rng.gen::<f64>(), 0.5 + 3.0 * rng.gen::<f64>()];
            let q = [0.5 + 3.0 * rng.gen::<f64>(), 0.5 + 3.0 * rng.gen::<f64>(), 0.5 + 3.0 * rng.gen::<f64>()];
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            if d < 0.2 {
                continue;
            }
            let h = compute_rir(&r, p, q, None, 16_000).unwrap();
            let peak = h
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .unwrap()
                .0;
            assert!(
                (peak as f64 - d / 343.0 * 16_000.0).abs() <= 1.0,
                "distance {d}: peak {peak}"
            );
        }
    }

    #[test]
    fn positions_outside_room_rejected() {
        let r = room(0.0);
        assert!(compute_rir(&r, [4.5, 2.0, 2.0], [2.0, 2.0, 2.0], None, 16_000).is_err());
        assert!(compute_rir(&r, [1.0, 2.0, 2.0], [2.0, 0.0, 2.0], None, 16_000).is_err());
    }

    #[test]
    fn order_zero_keeps_only_direct_path() {
        let r = room(0.5);
        let capped = compute_rir(&r, [1.0, 2.0, 2.0], [2.5, 2.0, 2.0], Some(0), 16_000).unwrap();
        let free = compute_rir(&room(0.0), [1.0, 2.0, 2.0], [2.5, 2.0, 2.0], None, 16_000).unwrap();
        for (i, &v) in capped.iter().enumerate() {
            let f = free.get(i).copied().unwrap_or(0.0);
            assert!((v - f).abs() < 1e-12, "tap {i}: {v} vs {f}");
        }
    }

    #[test]
    fn schroeder_recovers_synthetic_decay() {
        // alternating-sign exponential with an exact 0.4 s decay time
        let fs = 16_000u32;
        let t60 = 0.4;
        let h: Vec<f64> = (0..(fs as usize))
            .map(|i| {
                let t = i as f64 / fs as f64;
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                sign * 10f64.powf(-3.0 * t / t60)
            })
            .collect();
        let est = schroeder_t60(&h, fs).unwrap();
        assert!((est - t60).abs() < 0.02 * t60, "estimated {est}");
    }

    #[test]
    fn reverberant_rir_hits_requested_t60() {
        let r = room(0.5);
        let h = compute_rir(&r, [1.3, 2.2, 1.8], [2.6, 2.0, 2.1], None, 16_000).unwrap();
        let est = schroeder_t60(&h, 16_000).unwrap();
        assert!((0.4..=0.6).contains(&est), "measured T60 {est}");
    }

    #[test]
    fn reciprocity_under_position_swap() {
        let r = room(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let p = [0.8 + 2.4 * rng.gen::<f64>(), 0.8 + 2.4 * rng.gen::<f64>(), 0.8 + 2.4 * rng.gen::<f64>()];
            let q = [0.8 + 2.4 * rng.gen::<f64>(), 0.8 + 2.4 * rng.gen::<f64>(), 0.8 + 2.4 * rng.gen::<f64>()];
            let ab = compute_rir(&r, p, q, None, 16_000).unwrap();
            let ba = compute_rir(&r, q, p, None, 16_000).unwrap();
            assert_eq!(ab.len(), ba.len());
            for (x, y) in ab.iter().zip(&ba) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn silent_and_shallow_responses_rejected() {
        assert!(schroeder_t60(&[0.0; 100], 16_000).is_err());
        // a lone impulse either refuses the fit or measures the kernel's own
        // microsecond-scale tail, never a room-like decay
        let h = compute_rir(&room(0.0), [1.0, 2.0, 2.0], [2.0, 2.0, 2.0], None, 16_000).unwrap();
        if let Ok(est) = schroeder_t60(&h, 16_000) {
            assert!(est < 0.01, "impulse measured as {est} s");
        }
    }
}
