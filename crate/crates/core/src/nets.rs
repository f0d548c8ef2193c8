//! Small fully connected networks with hand-written backpropagation, an
//! Adam optimizer, and the binary checkpoint format.
//!
//! Parameters live in one flat vector, layer by layer, weights (row-major,
//! `out x in`) before biases. Gradients use the same layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite gradient at {path}")]
    NonFiniteGradient { path: String },
    #[error("network needs at least an input and an output layer")]
    TooFewLayers,
    #[error("scalar head needs output size 1, got {0}")]
    ScalarHead(usize),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Logits,
    Scalar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    head: Head,
    params: Vec<f64>,
}

/// Layer outputs recorded by [`Mlp::forward_cached`]; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Mlp {
    /// Uniform init in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new(sizes: &[usize], hidden: Activation, head: Head, seed: u64) -> Result<Self, NetError> {
        let mut net = Self::zeros(sizes, hidden, head)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[off..off + fan_in * fan_out + fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, head: Head) -> Result<Self, NetError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NetError::TooFewLayers);
        }
        let out = *sizes.last().unwrap();
        if head == Head::Scalar && out != 1 {
            return Err(NetError::ScalarHead(out));
        }
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            hidden,
            head,
            params: vec![0.0; n],
        })
    }

    pub fn from_params(sizes: &[usize], hidden: Activation, head: Head, params: Vec<f64>) -> Result<Self, NetError> {
        let mut net = Self::zeros(sizes, hidden, head)?;
        if params.len() != net.params.len() {
            return Err(NetError::Shape {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn hidden(&self) -> Activation {
        self.hidden
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (weight offset, fan_in, fan_out)
        self.sizes.windows(2).scan(0usize, |off, w| {
            let here = *off;
            *off += w[0] * w[1] + w[1];
            Some((here, w[0], w[1]))
        })
    }

    /// Human-readable location of a flat parameter index.
    pub fn param_path(&self, index: usize) -> String {
        for (l, (off, fan_in, fan_out)) in self.layers().enumerate() {
            let end = off + fan_in * fan_out + fan_out;
            if index < end {
                let local = index - off;
                return if local < fan_in * fan_out {
                    format!("layers[{l}].weight[{}][{}]", local / fan_in, local % fan_in)
                } else {
                    format!("layers[{l}].bias[{}]", local - fan_in * fan_out)
                };
            }
        }
        format!("params[{index}]")
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetError> {
        if x.len() != self.input_size() {
            return Err(NetError::Shape {
                expected: self.input_size(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check_input(x)?;
        let n_layers = self.sizes.len() - 1;
        let mut cur = x.to_vec();
        for (l, (off, fan_in, fan_out)) in self.layers().enumerate() {
            cur = self.layer_forward(&cur, off, fan_in, fan_out, l + 1 == n_layers);
        }
        Ok(cur)
    }

    /// Single output of a scalar-head network.
    pub fn forward_scalar(&self, x: &[f64]) -> Result<f64, NetError> {
        Ok(self.forward(x)?[0])
    }

    fn layer_forward(&self, x: &[f64], off: usize, fan_in: usize, fan_out: usize, last: bool) -> Vec<f64> {
        let w = &self.params[off..off + fan_in * fan_out];
        let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        (0..fan_out)
            .map(|o| {
                let z = b[o] + dot(&w[o * fan_in..(o + 1) * fan_in], x);
                if last {
                    z
                } else {
                    self.hidden.apply(z)
                }
            })
            .collect()
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache, NetError> {
        self.check_input(x)?;
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        for (l, (off, fan_in, fan_out)) in self.layers().enumerate() {
            let next = self.layer_forward(&acts[l], off, fan_in, fan_out, l + 1 == n_layers);
            acts.push(next);
        }
        Ok(ForwardCache { acts })
    }

    /// Accumulate `d(upstream · output)/d(params)` into `grads` and return
    /// the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>, NetError> {
        self.backward_impl(cache, upstream, grads, true)
    }

    /// Like [`Mlp::backward`] but skips the input gradient.
    pub fn backward_params(&self, cache: &ForwardCache, upstream: &[f64], grads: &mut [f64]) -> Result<(), NetError> {
        self.backward_impl(cache, upstream, grads, false).map(|_| ())
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut [f64],
        input_grad: bool,
    ) -> Result<Vec<f64>, NetError> {
        if upstream.len() != self.output_size() {
            return Err(NetError::Shape {
                expected: self.output_size(),
                got: upstream.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(NetError::Shape {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        if cache.acts.len() != self.sizes.len() || cache.acts[0].len() != self.input_size() {
            return Err(NetError::Shape {
                expected: self.input_size(),
                got: cache.acts[0].len(),
            });
        }
        let layers: Vec<_> = self.layers().collect();
        let mut delta = upstream.to_vec();
        for (l, &(off, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            let x = &cache.acts[l];
            let (gw, rest) = grads[off..].split_at_mut(fan_in * fan_out);
            let gb = &mut rest[..fan_out];
            for o in 0..fan_out {
                if delta[o] != 0.0 {
                    axpy(delta[o], x, &mut gw[o * fan_in..(o + 1) * fan_in]);
                }
                gb[o] += delta[o];
            }
            if l == 0 && !input_grad {
                return Ok(Vec::new());
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut dx = vec![0.0; fan_in];
            for o in 0..fan_out {
                if delta[o] != 0.0 {
                    axpy(delta[o], &w[o * fan_in..(o + 1) * fan_in], &mut dx);
                }
            }
            if l > 0 {
                for (d, a) in dx.iter_mut().zip(x) {
                    *d *= self.hidden.derivative_from_output(*a);
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// Apply one optimizer step, rejecting non-finite gradients.
    pub fn apply_gradients(&mut self, opt: &mut Adam, grads: &[f64]) -> Result<(), NetError> {
        if grads.len() != self.params.len() {
            return Err(NetError::Shape {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NetError::NonFiniteGradient { path: self.param_path(i) });
        }
        opt.step(&mut self.params, grads)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

const MOMENT_FLOOR: f64 = 1e-150;

/// Adaptive-moment optimizer minimizing the loss whose gradient is passed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// `params -= lr * m_hat / (sqrt(v_hat) + eps)`. An all-zero gradient or a
    /// zero learning rate leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NetError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NetError::Shape {
                expected: self.m.len(),
                got: grads.len().min(params.len()),
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NetError::NonFiniteGradient { path: format!("params[{i}]") });
        }
        if self.lr == 0.0 || grads.iter().all(|g| *g == 0.0) {
            return Ok(());
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            // decayed moments of long-idle parameters would otherwise turn
            // subnormal, which is very slow to compute with
            if self.m[i].abs() < MOMENT_FLOOR {
                self.m[i] = 0.0;
            }
            if self.v[i] < MOMENT_FLOOR {
                self.v[i] = 0.0;
            }
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"SGCKPT01";

/// Metadata written before the flat parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// What the parameters are: `actor`, `critic`, `refiner`, `embeddings`, ...
    pub kind: String,
    pub layer_sizes: Vec<usize>,
    pub hidden: Option<Activation>,
    pub head: Option<Head>,
    pub seed: u64,
    pub config_hash: String,
    /// Kind-specific metadata (e.g. the token order of an embedding table).
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// `MAGIC | u64 header_len | header JSON | u64 count | count * f64`, all little-endian.
pub fn write_checkpoint<W: Write>(mut w: W, header: &CheckpointHeader, params: &[f64]) -> Result<(), NetError> {
    let json = serde_json::to_vec(header).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, Vec<f64>), NetError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    r.read_exact(&mut len)?;
    let n = u64::from_le_bytes(len) as usize;
    let mut params = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        params.push(f64::from_le_bytes(buf));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(NetError::Checkpoint("trailing bytes".into()));
    }
    Ok((header, params))
}

impl Mlp {
    pub fn checkpoint_header(&self, kind: &str, seed: u64, config_hash: &str) -> CheckpointHeader {
        CheckpointHeader {
            kind: kind.to_string(),
            layer_sizes: self.sizes.clone(),
            hidden: Some(self.hidden),
            head: Some(self.head),
            seed,
            config_hash: config_hash.to_string(),
            extra: serde_json::Value::Null,
        }
    }

    pub fn from_checkpoint(header: &CheckpointHeader, params: Vec<f64>) -> Result<Self, NetError> {
        let (Some(hidden), Some(head)) = (header.hidden, header.head) else {
            return Err(NetError::Checkpoint(format!("`{}` checkpoint is not a network", header.kind)));
        };
        Self::from_params(&header.layer_sizes, hidden, head, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Tanh, Head::Logits).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut p = vec![0.0; 3 * 3 + 3];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        let net = Mlp::from_params(&[3, 3], Activation::Tanh, Head::Logits, p).unwrap();
        assert_eq!(net.forward(&[0.5, -7.0, 2.0]).unwrap(), vec![0.5, -7.0, 2.0]);
    }

    #[test]
    fn golden_forward() {
        let net = Mlp::new(&[4, 5, 3], Activation::Tanh, Head::Logits, 2024).unwrap();
        let out = net.forward(&[0.3, -0.1, 0.7, 1.2]).unwrap();
        let golden = [0.3337003522219891, 0.7639367896630309, 0.0335205326491918];
        for (o, g) in out.iter().zip(golden) {
            assert!((o - g).abs() < 1e-12, "{out:?}");
        }
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::new(&[4, 5, 1], Activation::Tanh, Head::Scalar, 1).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(NetError::Shape { expected: 4, got: 1 })));
        let cache = net.forward_cached(&[0.0; 4]).unwrap();
        let mut g = vec![0.0; net.num_params()];
        assert!(net.backward(&cache, &[1.0, 2.0], &mut g).is_err());
        assert!(matches!(Mlp::zeros(&[4, 2], Activation::Tanh, Head::Scalar), Err(NetError::ScalarHead(2))));
        assert!(Mlp::zeros(&[4], Activation::Tanh, Head::Logits).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0; 5]), vec![0.2; 5]);
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln(), 4f64.ln(), 10f64.ln()]);
        for (a, b) in p.iter().zip([0.05, 0.10, 0.15, 0.20, 0.50]) {
            assert!((a - b).abs() < 1e-12);
        }
        let big = softmax(&[1000.0, 1000.0]);
        assert_eq!(big, vec![0.5, 0.5]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Mlp::new(&[3, 6, 4], Activation::Tanh, Head::Logits, 9).unwrap();
        let cache = net.forward_cached(&[0.1, 0.2, 0.3]).unwrap();
        let mut g = vec![0.0; net.num_params()];
        let dx = net.backward(&cache, &[0.0; 4], &mut g).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        let net = Mlp::new(&[3, 2], Activation::Tanh, Head::Logits, 4).unwrap();
        let x = [0.5, -1.0, 2.0];
        let up = [3.0, -0.5];
        let cache = net.forward_cached(&x).unwrap();
        let mut g = vec![0.0; net.num_params()];
        let dx = net.backward(&cache, &up, &mut g).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g[o * 3 + i], up[o] * x[i]);
            }
            assert_eq!(g[6 + o], up[o]);
        }
        for i in 0..3 {
            let want = up[0] * net.params()[i] + up[1] * net.params()[3 + i];
            assert!((dx[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn param_paths() {
        let net = Mlp::zeros(&[3, 2, 1], Activation::Tanh, Head::Scalar).unwrap();
        assert_eq!(net.param_path(0), "layers[0].weight[0][0]");
        assert_eq!(net.param_path(5), "layers[0].weight[1][2]");
        assert_eq!(net.param_path(7), "layers[0].bias[1]");
        assert_eq!(net.param_path(8), "layers[1].weight[0][0]");
        assert_eq!(net.param_path(10), "layers[1].bias[0]");
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut p = vec![1.0];
        let mut opt = Adam::new(1, 0.1);
        opt.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn adam_zero_gradient_noop_and_deterministic() {
        let mut p = vec![0.3, -0.2];
        let mut opt = Adam::new(2, 0.1);
        opt.step(&mut p, &[0.5, 0.1]).unwrap();
        let before = (p.clone(), opt.clone());
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!((p.clone(), opt.clone()), before);

        let (mut p2, mut o2) = before.clone();
        let (mut p3, mut o3) = before;
        o2.step(&mut p2, &[0.7, -3.0]).unwrap();
        o3.step(&mut p3, &[0.7, -3.0]).unwrap();
        assert_eq!(p2, p3);
        assert_eq!(o2, o3);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut net = Mlp::new(&[2, 2, 1], Activation::Tanh, Head::Scalar, 3).unwrap();
        let mut opt = Adam::new(net.num_params(), 0.01);
        let mut g = vec![0.0; net.num_params()];
        g[7] = f64::NAN;
        match net.apply_gradients(&mut opt, &g) {
            Err(NetError::NonFiniteGradient { path }) => assert_eq!(path, "layers[1].weight[0][1]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = Mlp::new(&[5, 7, 3], Activation::Tanh, Head::Logits, 77).unwrap();
        let header = net.checkpoint_header("actor", 77, "abc123");
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &header, net.params()).unwrap();
        let (h2, p2) = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(h2, header);
        let back = Mlp::from_checkpoint(&h2, p2).unwrap();
        assert!(back.params().iter().zip(net.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let mut again = Vec::new();
        write_checkpoint(&mut again, &h2, back.params()).unwrap();
        assert_eq!(bytes, again);

        bytes.push(0);
        assert!(read_checkpoint(bytes.as_slice()).is_err());
        assert!(read_checkpoint(&b"NOTACKPT"[..]).is_err());
    }
}
