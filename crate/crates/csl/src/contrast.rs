//! Contrastive objectives over world-frame prediction fields: spherical
//! centroids per sub-interval, the sub-contrastive loss and its exact
//! gradient, and the quadratic full-contrastive reference loss.

use num_traits::Float;

use crate::error::{CslError, Result};
use crate::geometry::{RotationMatrix, UnitVector3, World};
use crate::nn::{backward_batch, forward_batch, Mlp, PredictionField};

/// Pooled sums with a norm at or below this are treated as degenerate and
/// dropped from the loss (their normalization Jacobian would blow up).
pub const EPSILON_POOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubIntervalId {
    One,
    Two,
    All,
}

/// Spherical centroid of a set of world-frame predictions: the normalized
/// vector sum, which confidence-weights bins by their prediction norms.
#[derive(Clone, Debug)]
pub struct PooledDirection {
    pub sum: [f64; 3],
    pub dir: Option<UnitVector3<World>>,
    pub interval_id: usize,
    pub sub: SubIntervalId,
}

impl PooledDirection {
    pub fn from_sum(sum: [f64; 3], interval_id: usize, sub: SubIntervalId, eps: f64) -> Self {
        let norm = (sum[0] * sum[0] + sum[1] * sum[1] + sum[2] * sum[2]).sqrt();
        let dir = if norm.is_finite() && norm > eps {
            Some(UnitVector3::new(sum[0] / norm, sum[1] / norm, sum[2] / norm).expect("normalized"))
        } else {
            None
        };
        Self { sum, dir, interval_id, sub }
    }

    pub fn degenerate(&self) -> bool {
        self.dir.is_none()
    }

    pub fn norm(&self) -> f64 {
        let [x, y, z] = self.sum;
        (x * x + y * y + z * z).sqrt()
    }
}

/// Centroid over an explicit set of world vectors.
pub fn centroid(
    world: &[[f64; 3]],
    interval_id: usize,
    sub: SubIntervalId,
    eps: f64,
) -> Result<PooledDirection> {
    if world.is_empty() {
        return Err(CslError::invalid("centroid of an empty bin set"));
    }
    let mut sum = [0.0; 3];
    for w in world {
        for a in 0..3 {
            sum[a] += w[a];
        }
    }
    Ok(PooledDirection::from_sum(sum, interval_id, sub, eps))
}

/// Applies the per-frame rotations to a sensor-frame prediction field:
/// r̃ʷ = R_n·r̃ˢ. Norms are untouched (isometry).
pub fn world_transform(
    pred: &PredictionField,
    rotations: &[RotationMatrix],
) -> Result<Vec<[f64; 3]>> {
    pred.bins
        .iter()
        .zip(&pred.outputs)
        .map(|(&(_, n), &v)| {
            let r = rotations.get(n as usize).ok_or_else(|| {
                CslError::invalid(format!("no rotation for frame {n}"))
            })?;
            Ok(r.apply_vec3(v))
        })
        .collect()
}

/// Exact pairwise loss Σ‖r̃ʷ − r̃ʷ‖² over unordered bin pairs. Quadratic;
/// exposed as a test oracle, not used for training.
pub fn full_contrastive_loss(world: &[[f64; 3]]) -> f64 {
    let mut loss = 0.0;
    for i in 0..world.len() {
        for j in i + 1..world.len() {
            let d = [
                world[i][0] - world[j][0],
                world[i][1] - world[j][1],
                world[i][2] - world[j][2],
            ];
            loss += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        }
    }
    loss
}

/// Sub-contrastive loss of one interval given its two pooled directions:
/// ‖r̄ʷ₁ − r̄ʷ₂‖², or None when either side is degenerate.
pub fn sub_loss_from_pooled(p1: &PooledDirection, p2: &PooledDirection) -> Option<f64> {
    let (d1, d2) = (p1.dir.as_ref()?, p2.dir.as_ref()?);
    let d = [d1.x() - d2.x(), d1.y() - d2.y(), d1.z() - d2.z()];
    Some(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}

/// Everything the training loop needs back from one interval.
pub struct IntervalOutcome<T> {
    pub loss: f64,
    /// None when the interval was degenerate (or gradients not requested).
    pub grads: Option<Mlp<T>>,
    pub pooled: [PooledDirection; 2],
    pub n_bins: [usize; 2],
}

impl<T> IntervalOutcome<T> {
    pub fn degenerate(&self) -> bool {
        self.pooled[0].degenerate() || self.pooled[1].degenerate()
    }
}

/// Forward + pool + loss (+ exact gradients) for one interval whose frames
/// are split at `break_point`. `x` holds `frames.len()` feature rows; each
/// bin belongs to sub-interval 1 when its frame index is below the break.
#[allow(clippy::too_many_arguments)]
pub fn sub_loss_interval<T: Float>(
    net: &Mlp<T>,
    x: &[T],
    frames: &[u16],
    rotations: &[RotationMatrix],
    break_point: usize,
    interval_id: usize,
    eps_pool: f64,
    want_grads: bool,
) -> Result<IntervalOutcome<T>> {
    let n = frames.len();
    if n == 0 {
        return Err(CslError::invalid("interval with no bins"));
    }
    let (y, cache) = forward_batch(net, x, n)?;

    // rotations in working precision, indexed by frame
    let mut rot_t: Vec<[T; 9]> = Vec::with_capacity(rotations.len());
    for r in rotations {
        let m = r.rows();
        rot_t.push([
            T::from(m[0][0]).unwrap(), T::from(m[0][1]).unwrap(), T::from(m[0][2]).unwrap(),
            T::from(m[1][0]).unwrap(), T::from(m[1][1]).unwrap(), T::from(m[1][2]).unwrap(),
            T::from(m[2][0]).unwrap(), T::from(m[2][1]).unwrap(), T::from(m[2][2]).unwrap(),
        ]);
    }

    let mut sums = [[0.0f64; 3]; 2];
    let mut counts = [0usize; 2];
    for (i, &f) in frames.iter().enumerate() {
        let m = rot_t.get(f as usize).ok_or_else(|| {
            CslError::invalid(format!("no rotation for frame {f}"))
        })?;
        let s = &y[3 * i..3 * i + 3];
        let w = [
            m[0] * s[0] + m[1] * s[1] + m[2] * s[2],
            m[3] * s[0] + m[4] * s[1] + m[5] * s[2],
            m[6] * s[0] + m[7] * s[1] + m[8] * s[2],
        ];
        let sub = usize::from((f as usize) >= break_point);
        counts[sub] += 1;
        for a in 0..3 {
            sums[sub][a] += w[a].to_f64().unwrap();
        }
    }
    if sums.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CslError::numeric(
            "pooled sums went non-finite; inputs or parameters diverged",
        ));
    }
    let pooled = [
        PooledDirection::from_sum(sums[0], interval_id, SubIntervalId::One, eps_pool),
        PooledDirection::from_sum(sums[1], interval_id, SubIntervalId::Two, eps_pool),
    ];
    let loss = match sub_loss_from_pooled(&pooled[0], &pooled[1]) {
        Some(l) => l,
        None => {
            return Ok(IntervalOutcome { loss: 0.0, grads: None, pooled, n_bins: counts });
        }
    };
    if !want_grads {
        return Ok(IntervalOutcome { loss, grads: None, pooled, n_bins: counts });
    }

    // dL/ds_l = (I − c·cᵀ)/‖s‖ · (±2(c₁ − c₂)), identical for every bin of
    // the sub-interval; per frame it only needs one transpose-rotation.
    let c1 = pooled[0].dir.as_ref().unwrap().as_array();
    let c2 = pooled[1].dir.as_ref().unwrap().as_array();
    let g_c = [2.0 * (c1[0] - c2[0]), 2.0 * (c1[1] - c2[1]), 2.0 * (c1[2] - c2[2])];
    let mut g_s = [[0.0f64; 3]; 2];
    for (l, (c, sign)) in [(c1, 1.0f64), (c2, -1.0)].iter().enumerate() {
        let norm = pooled[l].norm();
        let along = c[0] * g_c[0] + c[1] * g_c[1] + c[2] * g_c[2];
        for a in 0..3 {
            g_s[l][a] = sign * (g_c[a] - along * c[a]) / norm;
        }
    }
    let mut upstream = vec![T::zero(); 3 * n];
    for (i, &f) in frames.iter().enumerate() {
        let sub = usize::from((f as usize) >= break_point);
        let g = &g_s[sub];
        let m = &rot_t[f as usize];
        let gt = [
            T::from(g[0]).unwrap(),
            T::from(g[1]).unwrap(),
            T::from(g[2]).unwrap(),
        ];
        // Rᵀ·g
        upstream[3 * i] = m[0] * gt[0] + m[3] * gt[1] + m[6] * gt[2];
        upstream[3 * i + 1] = m[1] * gt[0] + m[4] * gt[1] + m[7] * gt[2];
        upstream[3 * i + 2] = m[2] * gt[0] + m[5] * gt[1] + m[8] * gt[2];
    }
    let grads = backward_batch(net, &cache, &upstream)?;
    Ok(IntervalOutcome { loss, grads: Some(grads), pooled, n_bins: counts })
}
