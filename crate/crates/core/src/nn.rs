//! Feed-forward networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat vector. Each layer stores its weight matrix
//! row-major (`n_out x n_in`) followed by its bias, so the parameter count is
//! `sum((n_in + 1) * n_out)`.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MLPW";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    /// Bounded head in `[-1, 1]`.
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Tanh),
            _ => Err(Error::Format(format!("unknown activation code {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    hidden: Activation,
    output: Activation,
}

/// Layer outputs recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `layers[0]` is the input, `layers[k]` the output of layer `k`.
    layers: Vec<Vec<f64>>,
}

impl Trace {
    /// Input followed by each layer's post-activation output.
    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("trace has at least the input")
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Architecture(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; param_count(sizes)], hidden, output })
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            for p in &mut net.params[offset..offset + (n_in + 1) * n_out] {
                *p = rng.random_range(-bound..=bound);
            }
            offset += (n_in + 1) * n_out;
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], hidden: Activation, output: Activation, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        if params.len() != net.params.len() {
            return Err(Error::Dimension { expected: net.params.len(), got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes && self.hidden == other.hidden && self.output == other.output
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 2 == self.sizes.len() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: input.len() });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(input)?.layers.pop().expect("non-empty"))
    }

    pub fn trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut layers = Vec::with_capacity(self.sizes.len());
        layers.push(input.to_vec());
        let mut offset = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let act = self.activation(l);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
            let x = &layers[l];
            let y: Vec<f64> = weights
                .chunks_exact(n_in)
                .zip(bias)
                .map(|(row, b)| act.apply(dot(row, x) + b))
                .collect();
            layers.push(y);
            offset += (n_in + 1) * n_out;
        }
        Ok(Trace { layers })
    }

    /// Backpropagate `output_grad` through a recorded trace, accumulating the
    /// parameter gradient into `param_grad` and returning the input gradient.
    pub fn backward_trace(&self, trace: &Trace, output_grad: &[f64], param_grad: &mut [f64]) -> Result<Vec<f64>> {
        self.backward_inner(trace, output_grad, false, param_grad)
    }

    /// Like [`Mlp::backward_trace`], but `pre_grad` is the gradient with
    /// respect to the pre-activation of the output layer.
    pub fn backward_trace_pre(&self, trace: &Trace, pre_grad: &[f64], param_grad: &mut [f64]) -> Result<Vec<f64>> {
        self.backward_inner(trace, pre_grad, true, param_grad)
    }

    /// Pre-activation values of the output layer for a recorded trace.
    pub fn output_pre_activation(&self, trace: &Trace) -> Vec<f64> {
        let l = self.sizes.len() - 2;
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let offset = self.params.len() - (n_in + 1) * n_out;
        let weights = &self.params[offset..offset + n_in * n_out];
        let bias = &self.params[offset + n_in * n_out..];
        weights.chunks_exact(n_in).zip(bias).map(|(row, b)| dot(row, &trace.layers[l]) + b).collect()
    }

    fn backward_inner(&self, trace: &Trace, grad: &[f64], grad_is_pre: bool, param_grad: &mut [f64]) -> Result<Vec<f64>> {
        if grad.len() != self.output_dim() {
            return Err(Error::Dimension { expected: self.output_dim(), got: grad.len() });
        }
        if param_grad.len() != self.params.len() {
            return Err(Error::Dimension { expected: self.params.len(), got: param_grad.len() });
        }
        let last = self.sizes.len() - 2;
        let mut upstream = grad.to_vec();
        let mut offset = self.params.len();
        for l in (0..self.sizes.len() - 1).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= (n_in + 1) * n_out;
            let act = self.activation(l);
            let x = &trace.layers[l];
            let y = &trace.layers[l + 1];
            let delta: Vec<f64> = if grad_is_pre && l == last {
                upstream
            } else {
                upstream.iter().zip(y).map(|(g, &yo)| g * act.derivative_from_output(yo)).collect()
            };
            let (w_grad, b_grad) = param_grad[offset..offset + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
            for ((row, bg), &d) in w_grad.chunks_exact_mut(n_in).zip(b_grad.iter_mut()).zip(&delta) {
                *bg += d;
                if d != 0.0 {
                    row.iter_mut().zip(x).for_each(|(g, xi)| *g += d * xi);
                }
            }
            let weights = &self.params[offset..offset + n_in * n_out];
            let mut down = vec![0.0; n_in];
            for (row, &d) in weights.chunks_exact(n_in).zip(&delta) {
                if d != 0.0 {
                    down.iter_mut().zip(row).for_each(|(g, w)| *g += d * w);
                }
            }
            upstream = down;
        }
        Ok(upstream)
    }

    /// Gradients of `output_grad · f(input)` with respect to the parameters and the input.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.trace(input)?;
        let mut grad = vec![0.0; self.params.len()];
        let input_grad = self.backward_trace(&trace, output_grad, &mut grad)?;
        Ok((grad, input_grad))
    }

    /// Polyak averaging `self <- tau * online + (1 - tau) * self`.
    pub fn soft_update(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if !self.same_architecture(online) {
            return Err(Error::Architecture("soft update between different architectures".into()));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::domain(format!("tau {tau} outside [0, 1]")));
        }
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = tau * o + (1.0 - tau) * *t;
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        w.write_all(&[self.hidden.code(), self.output.code()])?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad parameter file magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported parameter file version {version}")));
        }
        let n_layers = read_u32(&mut r)? as usize;
        if !(2..=64).contains(&n_layers) {
            return Err(Error::Format(format!("implausible layer count {n_layers}")));
        }
        let sizes = (0..n_layers).map(|_| read_u32(&mut r).map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
        let mut acts = [0u8; 2];
        r.read_exact(&mut acts)?;
        let (hidden, output) = (Activation::from_code(acts[0])?, Activation::from_code(acts[1])?);
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let n = u64::from_le_bytes(len) as usize;
        if n != param_count(&sizes) {
            return Err(Error::Format(format!("parameter count {n} does not match architecture {sizes:?}")));
        }
        let mut params = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            params.push(f64::from_le_bytes(buf));
        }
        Self::from_params(&sizes, hidden, output, params)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adaptive-moment optimizer state for one network.
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
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One descent step along `grad`. Non-finite gradients leave everything untouched.
    pub fn apply_update(&mut self, net: &mut Mlp, grad: &[f64]) -> Result<()> {
        if grad.len() != net.num_params() || self.m.len() != grad.len() {
            return Err(Error::Dimension { expected: net.num_params(), got: grad.len() });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.t += 1;
        let t = self.t as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        let step = self.lr * c2.sqrt() / c1;
        let eps = self.eps * c2.sqrt();
        for (((p, g), m), v) in net.params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Relu, Activation::Identity).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(net.num_params(), 4 * 4 + 5 * 2);
    }

    #[test]
    fn scalar_linear_net() {
        let net = Mlp::from_params(&[1, 1], Activation::Relu, Activation::Identity, vec![2.0, 1.0]).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
        let (g, gi) = net.backward(&[3.0], &[1.0]).unwrap();
        assert_eq!(g, vec![3.0, 1.0]);
        assert_eq!(gi, vec![2.0]);
    }

    #[test]
    fn seeded_init_reproducible() {
        let a = Mlp::new(&[4, 8, 2], Activation::Relu, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = Mlp::new(&[4, 8, 2], Activation::Relu, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4];
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
        let bound = 1.0 / 2.0;
        assert!(a.params()[..40].iter().all(|p| p.abs() <= bound));
    }

    #[test]
    fn dimension_errors() {
        let net = Mlp::zeros(&[3, 2], Activation::Relu, Activation::Identity).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(Mlp::zeros(&[3], Activation::Relu, Activation::Identity).is_err());
    }

    #[test]
    fn zero_output_grad_zero_param_grad() {
        let net = Mlp::new(&[3, 5, 2], Activation::Relu, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (g, gi) = net.backward(&[0.3, -0.1, 0.9], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(gi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn soft_update_cases() {
        let online = Mlp::from_params(&[1, 1], Activation::Relu, Activation::Identity, vec![1.0, 1.0]).unwrap();
        let mut t = Mlp::zeros(&[1, 1], Activation::Relu, Activation::Identity).unwrap();
        t.soft_update(&online, 0.01).unwrap();
        assert!((t.params()[0] - 0.01).abs() < 1e-15);
        let before = t.clone();
        t.soft_update(&online, 0.0).unwrap();
        assert_eq!(t, before);
        t.soft_update(&online, 1.0).unwrap();
        assert_eq!(t.params(), online.params());
        let other = Mlp::zeros(&[1, 2], Activation::Relu, Activation::Identity).unwrap();
        assert!(t.soft_update(&other, 0.5).is_err());
    }

    #[test]
    fn soft_update_contracts_by_one_minus_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let online = Mlp::new(&[3, 6, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let mut target = Mlp::new(&[3, 6, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let dist = |a: &Mlp, b: &Mlp| a.params().iter().zip(b.params()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let d0 = dist(&target, &online);
        target.soft_update(&online, 0.2).unwrap();
        assert!((dist(&target, &online) - 0.8 * d0).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut net = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let before = net.clone();
        let mut opt = Adam::new(net.num_params(), 1e-3);
        let zero = vec![0.0; net.num_params()];
        opt.apply_update(&mut net, &zero).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Relu, Activation::Identity).unwrap();
        let mut opt = Adam::new(2, 1e-3);
        assert!(opt.apply_update(&mut net, &[f64::NAN, 0.0]).is_err());
        assert_eq!(opt.steps(), 0);
        assert_eq!(net.params(), &[0.0, 0.0]);
    }

    #[test]
    fn adam_descends_quadratic() {
        // f(theta) = theta^2 on the bias of a 1-1 net with a zero input.
        let mut net = Mlp::from_params(&[1, 1], Activation::Relu, Activation::Identity, vec![0.0, 1.0]).unwrap();
        let mut opt = Adam::new(2, 1e-3);
        let theta = |n: &Mlp| n.params()[1];
        let g = 2.0 * theta(&net);
        opt.apply_update(&mut net, &[0.0, g]).unwrap();
        assert!(theta(&net).abs() < 1.0);
        let mut opt = Adam::new(2, 1e-2);
        let mut steps = 0;
        while theta(&net).abs() >= 1e-3 && steps < 10_000 {
            let g = 2.0 * theta(&net);
            opt.apply_update(&mut net, &[0.0, g]).unwrap();
            steps += 1;
        }
        assert!(theta(&net).abs() < 1e-3, "theta = {} after {steps} steps", theta(&net));
    }

    #[test]
    fn serialization_round_trip_bit_exact() {
        let net = Mlp::new(&[5, 7, 3], Activation::Relu, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let back = Mlp::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        let x = [0.1, 0.5, -0.2, 0.3, 0.9];
        let (a, b) = (net.forward(&x).unwrap(), back.forward(&x).unwrap());
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn load_rejects_non_finite_and_garbage() {
        let net = Mlp::from_params(&[1, 1], Activation::Relu, Activation::Identity, vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let n = buf.len();
        buf[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(Mlp::read_from(buf.as_slice()), Err(Error::NonFinite(_))));
        assert!(Mlp::read_from(&b"nope"[..]).is_err());
        assert!(Mlp::from_params(&[1, 1], Activation::Relu, Activation::Identity, vec![f64::INFINITY, 0.0]).is_err());
    }
}
