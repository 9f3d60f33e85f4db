//! The acoustic-spatial MLP: parameter-free weight normalization on the
//! hidden layers, analytic backpropagation, Adam, and checkpoint I/O.
//!
//! Generic over the float type so the same code runs gradient checks in
//! f64 and training in f32.

use std::io::{Read, Write};
use std::path::Path;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureTensor;
use crate::error::{CslError, Result};

pub const DEFAULT_HIDDEN: [usize; 3] = [1024, 512, 256];
pub const OUTPUT_DIM: usize = 3;

fn t<T: Float>(x: f64) -> T {
    T::from(x).expect("constant fits any float")
}

/// Fully-connected network parameters (also reused as a gradient container).
/// Hidden layers apply row-normalized weights + ReLU; the final layer is a
/// plain affine map to R³.
#[derive(Clone, Debug)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    /// Row-major [fan_out × fan_in] per layer.
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Float> Mlp<T> {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(CslError::invalid(format!("bad layer sizes {sizes:?}")));
        }
        let weights = sizes
            .windows(2)
            .map(|w| vec![T::zero(); w[0] * w[1]])
            .collect();
        let biases = sizes[1..].iter().map(|&s| vec![T::zero(); s]).collect();
        Ok(Self { sizes: sizes.to_vec(), weights, biases })
    }

    /// He-uniform draws (limit √(6/fan_in)) with the output layer scaled by
    /// 0.1 so initial confidences stay moderate. Biases start at zero.
    pub fn he_init(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = net.weights.len();
        for l in 0..n_layers {
            let fan_in = net.sizes[l] as f64;
            let limit = (6.0 / fan_in).sqrt();
            let gain = if l + 1 == n_layers { 0.1 } else { 1.0 };
            for w in net.weights[l].iter_mut() {
                *w = t(gain * rng.gen_range(-limit..limit));
            }
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes).expect("own sizes are valid")
    }

    pub fn validate_finite(&self) -> Result<()> {
        let ok = self
            .weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(CslError::numeric("non-finite network parameter"))
        }
    }

    pub fn convert<U: Float>(&self) -> Mlp<U> {
        let cast = |v: &Vec<T>| v.iter().map(|&x| U::from(x.to_f64().unwrap()).unwrap()).collect();
        Mlp {
            sizes: self.sizes.clone(),
            weights: self.weights.iter().map(cast).collect(),
            biases: self.biases.iter().map(cast).collect(),
        }
    }

    /// Negates the output layer: f → −f. Used for sign disambiguation.
    pub fn negate_output(&mut self) {
        let l = self.weights.len() - 1;
        for w in self.weights[l].iter_mut() {
            *w = -*w;
        }
        for b in self.biases[l].iter_mut() {
            *b = -*b;
        }
    }

    /// Elementwise add, used to accumulate gradients across intervals.
    pub fn accumulate(&mut self, other: &Self) {
        assert_eq!(self.sizes, other.sizes, "accumulating mismatched nets");
        for l in 0..self.weights.len() {
            for (a, b) in self.weights[l].iter_mut().zip(&other.weights[l]) {
                *a = *a + *b;
            }
            for (a, b) in self.biases[l].iter_mut().zip(&other.biases[l]) {
                *a = *a + *b;
            }
        }
    }

    /// Mutable view over every parameter in a fixed order (weights then
    /// biases per layer); the optimizer and tests index through this.
    pub fn param_mut(&mut self, idx: usize) -> &mut T {
        let mut i = idx;
        for l in 0..self.weights.len() {
            if i < self.weights[l].len() {
                return &mut self.weights[l][i];
            }
            i -= self.weights[l].len();
            if i < self.biases[l].len() {
                return &mut self.biases[l][i];
            }
            i -= self.biases[l].len();
        }
        panic!("parameter index {idx} out of range");
    }

    pub fn param(&self, idx: usize) -> T {
        let mut i = idx;
        for l in 0..self.weights.len() {
            if i < self.weights[l].len() {
                return self.weights[l][i];
            }
            i -= self.weights[l].len();
            if i < self.biases[l].len() {
                return self.biases[l][i];
            }
            i -= self.biases[l].len();
        }
        panic!("parameter index {idx} out of range");
    }
}

/// Activations retained by `forward_batch` for the backward pass.
pub struct ForwardCache<T> {
    /// activations[0] is the input; activations[l] the post-ReLU output of
    /// hidden layer l.
    activations: Vec<Vec<T>>,
    /// Pre-activations per hidden layer.
    preacts: Vec<Vec<T>>,
    /// Row norms and normalized rows per hidden layer.
    row_norms: Vec<Vec<T>>,
    normalized: Vec<Vec<T>>,
    n: usize,
}

fn normalize_rows<T: Float>(w: &[T], fan_out: usize, fan_in: usize) -> (Vec<T>, Vec<T>) {
    let mut norms = Vec::with_capacity(fan_out);
    let mut wn = vec![T::zero(); w.len()];
    for j in 0..fan_out {
        let row = &w[j * fan_in..(j + 1) * fan_in];
        let norm = row.iter().fold(T::zero(), |a, &x| a + x * x).sqrt();
        norms.push(norm);
        if norm > T::zero() {
            for (d, &s) in wn[j * fan_in..(j + 1) * fan_in].iter_mut().zip(row) {
                *d = s / norm;
            }
        }
    }
    (wn, norms)
}

/// Runs `n` input rows (row-major, width = input_dim) through the net.
/// Returns outputs [n × 3] and the cache for `backward_batch`.
pub fn forward_batch<T: Float>(net: &Mlp<T>, x: &[T], n: usize) -> Result<(Vec<T>, ForwardCache<T>)> {
    if x.len() != n * net.input_dim() {
        return Err(CslError::invalid(format!(
            "input of {} values is not {n} rows of width {}",
            x.len(),
            net.input_dim()
        )));
    }
    net.validate_finite()?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(CslError::numeric("non-finite network input"));
    }
    let n_layers = net.weights.len();
    let mut activations = vec![x.to_vec()];
    let mut preacts = Vec::with_capacity(n_layers - 1);
    let mut row_norms = Vec::with_capacity(n_layers - 1);
    let mut normalized = Vec::with_capacity(n_layers - 1);
    for l in 0..n_layers {
        let fan_in = net.sizes[l];
        let fan_out = net.sizes[l + 1];
        let last = l + 1 == n_layers;
        let w: &[T] = if last {
            &net.weights[l]
        } else {
            let (wn, norms) = normalize_rows(&net.weights[l], fan_out, fan_in);
            normalized.push(wn);
            row_norms.push(norms);
            normalized.last().unwrap()
        };
        let input = activations.last().unwrap();
        let mut z = vec![T::zero(); n * fan_out];
        for i in 0..n {
            let xi = &input[i * fan_in..(i + 1) * fan_in];
            let zi = &mut z[i * fan_out..(i + 1) * fan_out];
            for j in 0..fan_out {
                let row = &w[j * fan_in..(j + 1) * fan_in];
                let mut acc = net.biases[l][j];
                for (&a, &b) in row.iter().zip(xi) {
                    acc = acc + a * b;
                }
                zi[j] = acc;
            }
        }
        if last {
            let cache = ForwardCache { activations, preacts, row_norms, normalized, n };
            return Ok((z, cache));
        }
        let a: Vec<T> = z.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        preacts.push(z);
        activations.push(a);
    }
    unreachable!("loop returns at the output layer")
}

/// Analytic gradients for a batch, given dL/dy per output row. Includes the
/// row-normalization Jacobian (I − ŵŵᵀ)/‖w‖ on hidden layers; ReLU takes
/// subgradient 0 at 0. Bins are accumulated in input order.
pub fn backward_batch<T: Float>(
    net: &Mlp<T>,
    cache: &ForwardCache<T>,
    upstream: &[T],
) -> Result<Mlp<T>> {
    let n = cache.n;
    if upstream.len() != n * net.output_dim() {
        return Err(CslError::invalid(format!(
            "upstream of {} values is not {n} rows of width {}",
            upstream.len(),
            net.output_dim()
        )));
    }
    let n_layers = net.weights.len();
    let mut grads = net.zeros_like();
    let mut delta = upstream.to_vec();
    for l in (0..n_layers).rev() {
        let fan_in = net.sizes[l];
        let fan_out = net.sizes[l + 1];
        let last = l + 1 == n_layers;
        let input = &cache.activations[l];
        let w_eff: &[T] = if last { &net.weights[l] } else { &cache.normalized[l] };

        // bias and (effective-)weight gradients, bins in order
        {
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for i in 0..n {
                let di = &delta[i * fan_out..(i + 1) * fan_out];
                let xi = &input[i * fan_in..(i + 1) * fan_in];
                for j in 0..fan_out {
                    let dj = di[j];
                    if dj != T::zero() {
                        gb[j] = gb[j] + dj;
                        let row = &mut gw[j * fan_in..(j + 1) * fan_in];
                        for (g, &x) in row.iter_mut().zip(xi) {
                            *g = *g + dj * x;
                        }
                    }
                }
            }
        }

        if !last {
            // pull the accumulated dL/dŴ back through the normalization
            let norms = &cache.row_norms[l];
            let gw = &mut grads.weights[l];
            for j in 0..fan_out {
                let wn = &cache.normalized[l][j * fan_in..(j + 1) * fan_in];
                let row = &mut gw[j * fan_in..(j + 1) * fan_in];
                if norms[j] > T::zero() {
                    let along = row.iter().zip(wn).fold(T::zero(), |a, (&g, &u)| a + g * u);
                    for (g, &u) in row.iter_mut().zip(wn) {
                        *g = (*g - along * u) / norms[j];
                    }
                } else {
                    for g in row.iter_mut() {
                        *g = T::zero();
                    }
                }
            }
        }

        if l > 0 {
            // propagate to the previous layer and gate by its ReLU
            let z_prev = &cache.preacts[l - 1];
            let mut next = vec![T::zero(); n * fan_in];
            for i in 0..n {
                let di = &delta[i * fan_out..(i + 1) * fan_out];
                let out = &mut next[i * fan_in..(i + 1) * fan_in];
                for j in 0..fan_out {
                    let dj = di[j];
                    if dj != T::zero() {
                        let row = &w_eff[j * fan_in..(j + 1) * fan_in];
                        for (o, &wv) in out.iter_mut().zip(row) {
                            *o = *o + dj * wv;
                        }
                    }
                }
                let zi = &z_prev[i * fan_in..(i + 1) * fan_in];
                for (o, &z) in out.iter_mut().zip(zi) {
                    if z <= T::zero() {
                        *o = T::zero();
                    }
                }
            }
            delta = next;
        }
    }
    Ok(grads)
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second-moment accumulators mirroring the parameter shapes.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Mlp<T>,
    v: Mlp<T>,
    pub step: u64,
}

impl<T: Float> AdamState<T> {
    pub fn new(like: &Mlp<T>) -> Self {
        Self { m: like.zeros_like(), v: like.zeros_like(), step: 0 }
    }
}

/// Standard bias-corrected Adam update, in place.
pub fn adam_step<T: Float>(
    params: &mut Mlp<T>,
    grads: &Mlp<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let b1: T = t(cfg.beta1);
    let b2: T = t(cfg.beta2);
    let lr: T = t(cfg.lr);
    let eps: T = t(cfg.eps);
    let one = T::one();
    let bc1 = one - t::<T>(cfg.beta1.powi(state.step as i32));
    let bc2 = one - t::<T>(cfg.beta2.powi(state.step as i32));
    let update = |p: &mut Vec<T>, g: &Vec<T>, m: &mut Vec<T>, v: &mut Vec<T>| {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    };
    for l in 0..params.weights.len() {
        update(&mut params.weights[l], &grads.weights[l], &mut state.m.weights[l], &mut state.v.weights[l]);
        update(&mut params.biases[l], &grads.biases[l], &mut state.m.biases[l], &mut state.v.biases[l]);
    }
}

/// Per-bin sensor-frame predictions; the vector norm is the confidence.
#[derive(Clone, Debug)]
pub struct PredictionField {
    pub outputs: Vec<[f64; 3]>,
    pub bins: Vec<(u16, u16)>,
}

impl PredictionField {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn confidence(&self, i: usize) -> f64 {
        let [x, y, z] = self.outputs[i];
        (x * x + y * y + z * z).sqrt()
    }
}

/// Full-tensor inference: every feature row through the net.
pub fn predict_field<T: Float>(net: &Mlp<T>, features: &FeatureTensor) -> Result<PredictionField> {
    if features.width != net.input_dim() {
        return Err(CslError::invalid(format!(
            "feature width {} does not match network input {}",
            features.width,
            net.input_dim()
        )));
    }
    let n = features.len();
    let x: Vec<T> = features.data.iter().map(|&v| t(v as f64)).collect();
    let (y, _) = forward_batch(net, &x, n)?;
    let outputs = (0..n)
        .map(|i| {
            [
                y[i * 3].to_f64().unwrap(),
                y[i * 3 + 1].to_f64().unwrap(),
                y[i * 3 + 2].to_f64().unwrap(),
            ]
        })
        .collect();
    Ok(PredictionField { outputs, bins: features.bins.clone() })
}

const CHECKPOINT_MAGIC: &[u8] = b"CSL-MLP-v1\n";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub sizes: Vec<usize>,
    pub step: u64,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Single-file checkpoint: magic, little-endian u32 header length, JSON
/// header, then raw little-endian f32 tensors (weights then biases, per
/// layer). Written atomically via a temp file + rename.
pub fn save_checkpoint(path: &Path, net: &Mlp<f32>, step: u64, extra: serde_json::Value) -> Result<()> {
    let meta = CheckpointMeta { sizes: net.sizes.clone(), step, extra };
    let header = serde_json::to_vec(&meta)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(CHECKPOINT_MAGIC)?;
        f.write_all(&(header.len() as u32).to_le_bytes())?;
        f.write_all(&header)?;
        for l in 0..net.weights.len() {
            for &v in &net.weights[l] {
                f.write_all(&v.to_le_bytes())?;
            }
            for &v in &net.biases[l] {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Mlp<f32>, CheckpointMeta)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = vec![0u8; CHECKPOINT_MAGIC.len()];
    f.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CslError::invalid(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut len4 = [0u8; 4];
    f.read_exact(&mut len4)?;
    let mut header = vec![0u8; u32::from_le_bytes(len4) as usize];
    f.read_exact(&mut header)?;
    let meta: CheckpointMeta = serde_json::from_slice(&header)?;
    let mut net = Mlp::<f32>::zeros(&meta.sizes)?;
    let mut buf = [0u8; 4];
    for l in 0..net.weights.len() {
        for slot in net.weights[l]
            .iter_mut()
            .chain(net.biases[l].iter_mut())
        {
            f.read_exact(&mut buf).map_err(|_| {
                CslError::invalid("checkpoint truncated: tensor data missing")
            })?;
            *slot = f32::from_le_bytes(buf);
        }
    }
    net.validate_finite()?;
    Ok((net, meta))
}
