//! Rotations, unit-sphere math, quasi-uniform spherical grids, and the
//! angular error metric. Directions carry a compile-time frame tag (sensor
//! vs world) so mixing frames in a comparison refuses to compile.

use std::io::{BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CslError, Result};

pub const UNIT_TOL: f64 = 1e-9;

/// Coordinate frame marker. `Sensor` is rigidly attached to the (rotating)
/// array, `World` to the room.
pub trait Frame: Copy + Clone + std::fmt::Debug + PartialEq + Send + Sync + 'static {
    const NAME: &'static str;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sensor;
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct World;

impl Frame for Sensor {
    const NAME: &'static str = "sensor";
}
impl Frame for World {
    const NAME: &'static str = "world";
}

/// Unit-norm direction in frame `F`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitVector3<F: Frame> {
    x: f64,
    y: f64,
    z: f64,
    _frame: PhantomData<F>,
}

impl<F: Frame> UnitVector3<F> {
    /// Accepts components already unit-norm within 1e-9, then renormalizes
    /// away the residual.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(CslError::invalid(format!(
                "direction ({x}, {y}, {z}) has norm {n}, not unit within 1e-9"
            )));
        }
        Ok(Self { x: x / n, y: y / n, z: z / n, _frame: PhantomData })
    }

    /// Normalizes an arbitrary nonzero vector onto the sphere.
    pub fn normalized(v: [f64; 3]) -> Result<Self> {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(CslError::invalid(format!(
                "cannot normalize vector with norm {n}"
            )));
        }
        Ok(Self { x: v[0] / n, y: v[1] / n, z: v[2] / n, _frame: PhantomData })
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn neg(&self) -> Self {
        Self { x: -self.x, y: -self.y, z: -self.z, _frame: PhantomData }
    }

    /// Reinterpret the same coordinates in another frame. Deliberately
    /// explicit: use it only where a direction set is frame-agnostic by
    /// construction (e.g. grid points used as sensor-frame candidates).
    pub fn retag<G: Frame>(&self) -> UnitVector3<G> {
        UnitVector3 { x: self.x, y: self.y, z: self.z, _frame: PhantomData }
    }
}

/// Angle between two unit directions of the same frame, in degrees.
/// The inner product is clamped to [−1, 1] before acos.
pub fn angular_error<F: Frame>(a: &UnitVector3<F>, b: &UnitVector3<F>) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Uniform direction on the sphere (three normal deviates, normalized).
pub fn random_direction<F: Frame, R: Rng>(rng: &mut R) -> UnitVector3<F> {
    loop {
        let v = [normal(rng), normal(rng), normal(rng)];
        if let Ok(d) = UnitVector3::normalized(v) {
            return d;
        }
    }
}

/// One standard normal deviate via Box-Muller.
fn normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// Unit quaternion (w, x, y, z).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = Self { w, x, y, z };
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(CslError::invalid(format!(
                "quaternion norm {} deviates from 1 beyond 1e-6",
                q.norm()
            )));
        }
        Ok(q)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !(n > 0.0) {
            return Err(CslError::invalid("axis must be nonzero"));
        }
        let (s, c) = ((angle / 2.0).sin(), (angle / 2.0).cos());
        Ok(Self { w: c, x: s * axis[0] / n, y: s * axis[1] / n, z: s * axis[2] / n })
    }
}

/// Converts a unit quaternion to its rotation matrix. Rejects quaternions
/// whose norm deviates from 1 beyond 1e-6; smaller residuals are normalized
/// away so the output passes the orthogonality invariants.
pub fn quat_to_rotation(q: &Quaternion) -> Result<RotationMatrix> {
    let n = q.norm();
    if (n - 1.0).abs() > 1e-6 {
        return Err(CslError::invalid(format!(
            "quaternion norm {n} deviates from 1 beyond 1e-6"
        )));
    }
    let (w, x, y, z) = (q.w / n, q.x / n, q.y / n, q.z / n);
    let m = [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ];
    Ok(RotationMatrix { m, frame_index: 0 })
}

/// Proper rotation (orthogonal, det +1). `frame_index` records which STFT
/// frame the rotation belongs to when it is part of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix {
    m: [[f64; 3]; 3],
    pub frame_index: usize,
}

impl RotationMatrix {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            frame_index: 0,
        }
    }

    /// Validates orthogonality and det = +1 within 1e-9.
    pub fn from_rows(m: [[f64; 3]; 3]) -> Result<Self> {
        let r = Self { m, frame_index: 0 };
        let dev = r.orthogonality_deviation();
        if dev > UNIT_TOL {
            return Err(CslError::invalid(format!(
                "matrix is not orthogonal: max |RᵀR − I| = {dev:e}"
            )));
        }
        if (r.det() - 1.0).abs() > UNIT_TOL {
            return Err(CslError::invalid(format!(
                "matrix determinant {} is not +1",
                r.det()
            )));
        }
        Ok(r)
    }

    /// Rodrigues formula. The axis need not be unit length.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Self> {
        let q = Quaternion::from_axis_angle(axis, angle)?;
        quat_to_rotation(&q)
    }

    pub fn with_frame_index(mut self, n: usize) -> Self {
        self.frame_index = n;
        self
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn orthogonality_deviation(&self) -> f64 {
        let m = &self.m;
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += m[k][i] * m[k][j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
            frame_index: self.frame_index,
        }
    }

    pub fn compose(&self, other: &Self) -> Self {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Self { m: out, frame_index: self.frame_index }
    }

    pub fn apply_vec3(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn apply_transpose_vec3(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
        ]
    }

    /// r^w = R r^s.
    pub fn sensor_to_world(&self, v: &UnitVector3<Sensor>) -> UnitVector3<World> {
        let o = self.apply_vec3(v.as_array());
        UnitVector3 { x: o[0], y: o[1], z: o[2], _frame: PhantomData }
    }

    /// r^s = Rᵀ r^w.
    pub fn world_to_sensor(&self, v: &UnitVector3<World>) -> UnitVector3<Sensor> {
        let o = self.apply_transpose_vec3(v.as_array());
        UnitVector3 { x: o[0], y: o[1], z: o[2], _frame: PhantomData }
    }
}

/// Uniformly random orientation (normalized-Gaussian quaternion) plus a
/// uniformly random axis, from one RNG stream.
pub fn random_rotation<F: Frame, R: Rng>(rng: &mut R) -> (Quaternion, UnitVector3<F>) {
    let q = loop {
        let (w, x, y, z) = (normal(rng), normal(rng), normal(rng), normal(rng));
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if n > 1e-12 {
            break Quaternion { w: w / n, x: x / n, y: y / n, z: z / n };
        }
    };
    let axis = random_direction(rng);
    (q, axis)
}

/// True iff ‖RP − PR‖_F < tol for `n_samples` random rotations R: a
/// numerical witness that only P = ±I commutes with all of SO(3).
/// P must be orthogonal within 1e-6 (either handedness is accepted).
pub fn commutation_check(p: &[[f64; 3]; 3], n_samples: usize, tol: f64) -> Result<bool> {
    let mut dev = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for k in 0..3 {
                s += p[k][i] * p[k][j];
            }
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((s - target).abs());
        }
    }
    if dev > 1e-6 {
        return Err(CslError::invalid(format!(
            "P is not orthogonal: max |PᵀP − I| = {dev:e}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0_777u64);
    for _ in 0..n_samples {
        let (q, _) = random_rotation::<World, _>(&mut rng);
        let r = quat_to_rotation(&q)?;
        let rm = r.rows();
        let mut fro2 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut rp = 0.0;
                let mut pr = 0.0;
                for k in 0..3 {
                    rp += rm[i][k] * p[k][j];
                    pr += p[i][k] * rm[k][j];
                }
                fro2 += (rp - pr) * (rp - pr);
            }
        }
        if fro2.sqrt() >= tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Quasi-uniform direction grid with a symmetric k-nearest-neighbor
/// adjacency, used for beamforming search and KDE peak finding.
#[derive(Clone, Debug)]
pub struct SphericalGrid {
    directions: Vec<UnitVector3<World>>,
    neighbors: Vec<Vec<u32>>,
    resolution_deg: f64,
}

const GRID_NEIGHBORS: usize = 6;

impl SphericalGrid {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[UnitVector3<World>] {
        &self.directions
    }

    pub fn direction(&self, j: usize) -> &UnitVector3<World> {
        &self.directions[j]
    }

    /// Grid points double as sensor-frame steering candidates; the lattice
    /// itself is frame-agnostic.
    pub fn direction_as_sensor(&self, j: usize) -> UnitVector3<Sensor> {
        self.directions[j].retag()
    }

    pub fn neighbors(&self, j: usize) -> &[u32] {
        &self.neighbors[j]
    }

    /// Measured mean nearest-neighbor spacing in degrees.
    pub fn resolution_deg(&self) -> f64 {
        self.resolution_deg
    }

    /// Builds the adjacency (k = 6 nearest by angle, symmetrized by union)
    /// and spacing stats for an explicit direction list.
    pub fn from_directions(directions: Vec<UnitVector3<World>>) -> Result<Self> {
        if directions.is_empty() {
            return Err(CslError::invalid("grid needs at least one direction"));
        }
        let n = directions.len();
        let k = GRID_NEIGHBORS.min(n.saturating_sub(1));
        let mut neighbors: Vec<Vec<u32>> = vec![Vec::with_capacity(k + 2); n];
        let mut nn_dot = vec![-2.0f64; n];
        for i in 0..n {
            // best[k] holds the k largest dot products (closest directions).
            let mut best_dot = [-2.0f64; GRID_NEIGHBORS];
            let mut best_idx = [u32::MAX; GRID_NEIGHBORS];
            let di = directions[i];
            for (j, dj) in directions.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d = di.dot(dj);
                if d > best_dot[k - 1] {
                    let mut pos = k - 1;
                    while pos > 0 && best_dot[pos - 1] < d {
                        best_dot[pos] = best_dot[pos - 1];
                        best_idx[pos] = best_idx[pos - 1];
                        pos -= 1;
                    }
                    best_dot[pos] = d;
                    best_idx[pos] = j as u32;
                }
            }
            nn_dot[i] = best_dot[0];
            neighbors[i].extend(best_idx.iter().take(k).copied());
        }
        // Symmetrize by union.
        for i in 0..n {
            for idx in 0..neighbors[i].len() {
                let j = neighbors[i][idx] as usize;
                if !neighbors[j].contains(&(i as u32)) {
                    neighbors[j].push(i as u32);
                }
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let mean_nn = if n > 1 {
            nn_dot
                .iter()
                .map(|d| d.clamp(-1.0, 1.0).acos().to_degrees())
                .sum::<f64>()
                / n as f64
        } else {
            0.0
        };
        Ok(Self { directions, neighbors, resolution_deg: mean_nn })
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "index,x,y,z")?;
        for (i, d) in self.directions.iter().enumerate() {
            writeln!(f, "{},{},{},{}", i, d.x(), d.y(), d.z())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn import_csv(path: &Path) -> Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut dirs = Vec::new();
        for (ln, line) in f.lines().enumerate() {
            let line = line?;
            if ln == 0 {
                continue;
            }
            let mut it = line.split(',');
            let _idx = it.next();
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| CslError::invalid(format!("short row {ln}")))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| CslError::invalid(format!("row {ln}: {e}")))
            };
            let (x, y, z) = (parse(it.next())?, parse(it.next())?, parse(it.next())?);
            dirs.push(UnitVector3::new(x, y, z)?);
        }
        Self::from_directions(dirs)
    }
}

/// Fibonacci (golden-angle) spherical lattice with `n_points` directions,
/// given a deterministic random overall orientation from `seed`.
pub fn build_grid(n_points: usize, seed: u64) -> Result<SphericalGrid> {
    if n_points < 12 {
        return Err(CslError::invalid(format!(
            "grid needs at least 12 points, got {n_points}"
        )));
    }
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (q, _) = random_rotation::<World, _>(&mut rng);
    let r = quat_to_rotation(&q)?;
    let n = n_points as f64;
    let mut dirs = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let z = 1.0 - (2.0 * i as f64 + 1.0) / n;
        let rad = (1.0 - z * z).max(0.0).sqrt();
        let theta = golden_angle * i as f64;
        let v = r.apply_vec3([rad * theta.cos(), rad * theta.sin(), z]);
        dirs.push(UnitVector3::normalized(v)?);
    }
    SphericalGrid::from_directions(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_quaternion_gives_identity_matrix() {
        let q = Quaternion::new(1.0, 0.0, 0.0, 0.0).unwrap();
        let r = quat_to_rotation(&q).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((r.rows()[i][j] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let q = Quaternion::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2).unwrap();
        let r = quat_to_rotation(&q).unwrap();
        let v = r.apply_vec3([1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12 && v[2].abs() < 1e-12);
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        let q = Quaternion { w: 1.1, x: 0.0, y: 0.0, z: 0.0 };
        assert!(quat_to_rotation(&q).is_err());
    }

    #[test]
    fn random_quaternions_give_proper_rotations() {
        let mut r = rng(11);
        for _ in 0..200 {
            let (q, _) = random_rotation::<World, _>(&mut r);
            let m = quat_to_rotation(&q).unwrap();
            assert!(m.orthogonality_deviation() < 1e-12, "deviation {}", m.orthogonality_deviation());
            assert!((m.det() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn double_cover_q_and_minus_q_agree() {
        let mut r = rng(12);
        for _ in 0..50 {
            let (q, _) = random_rotation::<World, _>(&mut r);
            let nq = Quaternion { w: -q.w, x: -q.x, y: -q.y, z: -q.z };
            let (a, b) = (quat_to_rotation(&q).unwrap(), quat_to_rotation(&nq).unwrap());
            for i in 0..3 {
                for j in 0..3 {
                    assert!((a.rows()[i][j] - b.rows()[i][j]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn rotation_preserves_norms() {
        let mut r = rng(13);
        for _ in 0..10_000 {
            let (q, _) = random_rotation::<World, _>(&mut r);
            let m = quat_to_rotation(&q).unwrap();
            let v = [normal(&mut r), normal(&mut r), normal(&mut r)];
            let n0 = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let w = m.apply_vec3(v);
            let n1 = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
            assert!((n0 - n1).abs() < 1e-12 * n0.max(1.0));
        }
    }

    #[test]
    fn scaled_vector_keeps_its_length() {
        let m = RotationMatrix::from_axis_angle([0.0, 0.0, 1.0], 0.7).unwrap();
        let v = m.apply_vec3([2.0, 0.0, 0.0]);
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        assert!((n - 2.0).abs() < 1e-12);
    }

    #[test]
    fn angular_error_basics() {
        let ex = UnitVector3::<World>::new(1.0, 0.0, 0.0).unwrap();
        let ey = UnitVector3::<World>::new(0.0, 1.0, 0.0).unwrap();
        assert!(angular_error(&ex, &ex) < 1e-9);
        assert!((angular_error(&ex, &ey) - 90.0).abs() < 1e-9);
        assert!((angular_error(&ex, &ex.neg()) - 180.0).abs() < 1e-9);
    }

    #[test]
    fn angular_error_symmetry_and_triangle() {
        let mut r = rng(14);
        for _ in 0..1000 {
            let a = random_direction::<World, _>(&mut r);
            let b = random_direction::<World, _>(&mut r);
            let c = random_direction::<World, _>(&mut r);
            let (ab, ba) = (angular_error(&a, &b), angular_error(&b, &a));
            assert!((ab - ba).abs() < 1e-9);
            assert!(angular_error(&a, &c) <= ab + angular_error(&b, &c) + 1e-9);
        }
    }

    #[test]
    fn rotation_round_trip_world_sensor() {
        let mut r = rng(15);
        for _ in 0..100 {
            let (q, _) = random_rotation::<World, _>(&mut r);
            let m = quat_to_rotation(&q).unwrap();
            let w = random_direction::<World, _>(&mut r);
            let s = m.world_to_sensor(&w);
            let back = m.sensor_to_world(&s);
            for (a, b) in w.as_array().iter().zip(back.as_array()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn random_rotation_is_deterministic_and_unbiased() {
        let (q1, a1) = random_rotation::<World, _>(&mut rng(77));
        let (q2, a2) = random_rotation::<World, _>(&mut rng(77));
        assert_eq!(q1, q2);
        assert_eq!(a1.as_array(), a2.as_array());

        let mut r = rng(78);
        let mut qm = [0.0f64; 4];
        let mut am = [0.0f64; 3];
        let n = 10_000;
        for _ in 0..n {
            let (q, a) = random_rotation::<World, _>(&mut r);
            qm[0] += q.w;
            qm[1] += q.x;
            qm[2] += q.y;
            qm[3] += q.z;
            for (s, c) in am.iter_mut().zip(a.as_array()) {
                *s += c;
            }
        }
        // 3 standard errors: quaternion components have variance 1/4 on S³,
        // axis components 1/3 on S².
        for m in qm {
            assert!((m / n as f64).abs() < 3.0 * 0.5 / (n as f64).sqrt() + 1e-3);
        }
        for m in am {
            assert!((m / n as f64).abs() < 3.0 * 0.58 / (n as f64).sqrt() + 1e-3);
        }
        let (q, _) = random_rotation::<World, _>(&mut r);
        assert!((q.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn commutation_check_identity_cases() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let neg = [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(commutation_check(&id, 100, 1e-6).unwrap());
        assert!(commutation_check(&neg, 100, 1e-6).unwrap());
        let rz = RotationMatrix::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2)
            .unwrap();
        assert!(!commutation_check(rz.rows(), 100, 1e-6).unwrap());
        let skewed = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(commutation_check(&skewed, 10, 1e-6).is_err());
    }

    #[test]
    fn grid_default_size_has_two_degree_spacing() {
        let g = build_grid(13744, 1).unwrap();
        assert_eq!(g.len(), 13744);
        assert!(
            (g.resolution_deg() - 2.0).abs() <= 0.5,
            "mean nn spacing {}",
            g.resolution_deg()
        );
        // Adjacency: at least 6 symmetric neighbors everywhere.
        for j in 0..g.len() {
            assert!(g.neighbors(j).len() >= 6);
            for &nb in g.neighbors(j) {
                assert!(g.neighbors(nb as usize).contains(&(j as u32)));
            }
        }
        // Spacing window: every nearest neighbor within [0.5x, 2x] nominal,
        // and no pair closer than 0.25x nominal.
        let nominal = g.resolution_deg();
        for j in 0..g.len() {
            let nn = g
                .neighbors(j)
                .iter()
                .map(|&nb| angular_error(g.direction(j), g.direction(nb as usize)))
                .fold(f64::INFINITY, f64::min);
            assert!(nn >= 0.25 * nominal, "point {j} nn {nn}");
            assert!(nn >= 0.5 * nominal && nn <= 2.0 * nominal, "point {j} nn {nn}");
        }
    }

    #[test]
    fn grid_minimal_and_invalid_sizes() {
        let g = build_grid(12, 3).unwrap();
        assert_eq!(g.len(), 12);
        for j in 0..12 {
            assert!(g.neighbors(j).len() >= 5);
        }
        assert!(build_grid(11, 3).is_err());
    }

    #[test]
    fn grid_is_deterministic() {
        let a = build_grid(500, 9).unwrap();
        let b = build_grid(500, 9).unwrap();
        for (x, y) in a.directions().iter().zip(b.directions()) {
            assert_eq!(x.as_array(), y.as_array());
        }
        let c = build_grid(500, 10).unwrap();
        assert!(a.direction(0).as_array() != c.direction(0).as_array());
    }

    #[test]
    fn grid_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        let g = build_grid(64, 5).unwrap();
        g.export_csv(&path).unwrap();
        let h = SphericalGrid::import_csv(&path).unwrap();
        assert_eq!(g.len(), h.len());
        for (a, b) in g.directions().iter().zip(h.directions()) {
            assert!(angular_error(a, b) < 1e-9);
        }
    }
}
