//! Small neural-network toolkit: fully connected tanh networks with exact
//! reverse-mode gradients, Adam, categorical and diagonal-Gaussian policy
//! heads, and a binary checkpoint format.

use rand::Rng;
use rand_distr::StandardNormal;
use std::io::{Read, Write};

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("non-finite gradient; step refused")]
    NonFiniteGradient,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Multi-layer perceptron: tanh on hidden layers, identity output.
///
/// Parameters are stored flat; for each layer the weights (out×in,
/// row-major) come first, then the biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub params: Vec<f64>,
}

/// Per-layer activations recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct Cache {
    /// `acts[0]` is the input, `acts[l+1]` the output of layer `l`.
    pub acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output dims");
        Self {
            dims: dims.to_vec(),
            params: vec![0.0; param_count(dims)],
        }
    }

    /// Uniform fan-in initialization U(±√(3/fan_in)); the output layer is
    /// scaled by `out_scale`. Biases start at zero.
    pub fn new(dims: &[usize], out_scale: f64, rng: &mut impl Rng) -> Self {
        let mut gains = vec![1.0; dims.len() - 1];
        *gains.last_mut().unwrap() = out_scale;
        Self::with_gains(dims, &gains, rng)
    }

    /// Fan-in initialization with one weight gain per layer.
    pub fn with_gains(dims: &[usize], gains: &[f64], rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(dims);
        assert_eq!(gains.len(), dims.len() - 1, "one gain per layer");
        let mut off = 0;
        for (l, &gain) in gains.iter().enumerate() {
            let (fan_in, out) = (dims[l], dims[l + 1]);
            let bound = if fan_in == 0 { 0.0 } else { (3.0 / fan_in as f64).sqrt() };
            for w in &mut net.params[off..off + fan_in * out] {
                *w = (rng.random::<f64>() * 2.0 - 1.0) * bound * gain;
            }
            off += fan_in * out + out;
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, LearnError> {
        Ok(self.forward_cached(input)?.acts.pop().unwrap())
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<Cache, LearnError> {
        if input.len() != self.dims[0] {
            return Err(LearnError::Dim {
                expected: self.dims[0],
                got: input.len(),
            });
        }
        let layers = self.dims.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(input.to_vec());
        let mut off = 0;
        for l in 0..layers {
            let (nin, nout) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[off..off + nin * nout];
            let b = &self.params[off + nin * nout..off + nin * nout + nout];
            let x = &acts[l];
            let mut y: Vec<f64> = b.to_vec();
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &w[o * nin..(o + 1) * nin];
                *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < layers {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(y);
            off += nin * nout + nout;
        }
        Ok(Cache { acts })
    }

    /// Accumulates ∂(upstream·output)/∂params into `grads`.
    pub fn backward_into(&self, cache: &Cache, upstream: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        debug_assert_eq!(upstream.len(), self.output_dim());
        let layers = self.dims.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.dims[l] * self.dims[l + 1] + self.dims[l + 1];
        }
        let mut delta = upstream.to_vec();
        for l in (0..layers).rev() {
            let (nin, nout) = (self.dims[l], self.dims[l + 1]);
            if l + 1 < layers {
                // Through tanh: d tanh = 1 - y².
                for (d, y) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            let off = offsets[l];
            let x = &cache.acts[l];
            let (gw, gb) = grads[off..off + nin * nout + nout].split_at_mut(nin * nout);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, xi) in gw[o * nin..(o + 1) * nin].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if l > 0 {
                let w = &self.params[off..off + nin * nout];
                let mut next = vec![0.0; nin];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (n, wi) in next.iter_mut().zip(&w[o * nin..(o + 1) * nin]) {
                        *n += d * wi;
                    }
                }
                delta = next;
            }
        }
    }

    pub fn backward(&self, cache: &Cache, upstream: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.params.len()];
        self.backward_into(cache, upstream, &mut g);
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Bias-corrected Adam update (descending `grads`). Refuses non-finite
    /// gradients without touching the state.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), LearnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(LearnError::Dim {
                expected: self.m.len(),
                got: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(LearnError::NonFiniteGradient);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Log-softmax over the unmasked logits; masked entries get -∞.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(l, _)| (l - max).exp())
            .sum::<f64>()
            .ln();
    logits.iter().zip(mask).map(|(l, &m)| if m { l - lse } else { f64::NEG_INFINITY }).collect()
}

/// Policy heads over a network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyHead {
    Categorical,
    /// Diagonal Gaussian with a state-independent log-std vector.
    Gaussian,
}

/// Inverse-CDF sample from a masked categorical; returns (action, logprob).
pub fn categorical_sample(logits: &[f64], mask: &[bool], rng: &mut impl Rng) -> (usize, f64) {
    let lp = masked_log_softmax(logits, mask);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &l) in lp.iter().enumerate() {
        if l == f64::NEG_INFINITY {
            continue;
        }
        last = i;
        acc += l.exp();
        if u < acc {
            return (i, l);
        }
    }
    (last, lp[last])
}

pub fn categorical_argmax(logits: &[f64], mask: &[bool]) -> usize {
    let mut best = None;
    for (i, (&l, &m)) in logits.iter().zip(mask).enumerate() {
        if m && best.is_none_or(|(_, b)| l > b) {
            best = Some((i, l));
        }
    }
    best.map_or(0, |(i, _)| i)
}

pub fn categorical_entropy(logp: &[f64]) -> f64 {
    -logp.iter().filter(|l| l.is_finite()).map(|&l| l.exp() * l).sum::<f64>()
}

/// Gradients of `coef_lp·logp(action) + coef_ent·H` w.r.t. the logits.
pub fn categorical_grad(logits: &[f64], mask: &[bool], action: usize, coef_lp: f64, coef_ent: f64) -> Vec<f64> {
    let lp = masked_log_softmax(logits, mask);
    let h = categorical_entropy(&lp);
    lp.iter()
        .enumerate()
        .map(|(i, &l)| {
            if !mask[i] {
                return 0.0;
            }
            let p = l.exp();
            let dlp = f64::from(u8::from(i == action)) - p;
            let dh = -p * (l + h);
            coef_lp * dlp + coef_ent * dh
        })
        .collect()
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn gaussian_logprob(z: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    z.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&z, &m), &ls)| {
            let s = ls.exp();
            let u = (z - m) / s;
            -0.5 * u * u - ls - 0.5 * LN_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (LN_2PI + 1.0)).sum()
}

/// Reparameterized draw z = μ + σ·ε; returns (z, logprob).
pub fn gaussian_sample(mean: &[f64], log_std: &[f64], rng: &mut impl Rng) -> (Vec<f64>, f64) {
    let z: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .map(|(&m, &ls)| {
            let e: f64 = rng.sample(StandardNormal);
            m + ls.exp() * e
        })
        .collect();
    let lp = gaussian_logprob(&z, mean, log_std);
    (z, lp)
}

/// Gradients of `coef_lp·logp(z) + coef_ent·H` w.r.t. (mean, log_std).
pub fn gaussian_grad(z: &[f64], mean: &[f64], log_std: &[f64], coef_lp: f64, coef_ent: f64) -> (Vec<f64>, Vec<f64>) {
    let mut gm = Vec::with_capacity(z.len());
    let mut gs = Vec::with_capacity(z.len());
    for ((&z, &m), &ls) in z.iter().zip(mean).zip(log_std) {
        let s2 = (2.0 * ls).exp();
        let d = z - m;
        gm.push(coef_lp * d / s2);
        gs.push(coef_lp * (d * d / s2 - 1.0) + coef_ent);
    }
    (gm, gs)
}

/// Sample for a head, given the network output (logits or means) and, for
/// the Gaussian head, the log-std vector.
pub fn sample_and_logprob(
    head: PolicyHead,
    net_output: &[f64],
    log_std: &[f64],
    mask: Option<&[bool]>,
    rng: &mut impl Rng,
) -> (Vec<f64>, f64) {
    match head {
        PolicyHead::Categorical => {
            let all = vec![true; net_output.len()];
            let (a, lp) = categorical_sample(net_output, mask.unwrap_or(&all), rng);
            (vec![a as f64], lp)
        }
        PolicyHead::Gaussian => gaussian_sample(net_output, log_std, rng),
    }
}

const MAGIC: &[u8; 4] = b"SRIS";
const VERSION: u32 = 1;

/// Writes networks back to back: magic, version, layer count, dims, then
/// the little-endian f64 parameters.
pub fn write_checkpoint(nets: &[&Mlp], mut w: impl Write) -> Result<(), LearnError> {
    for net in nets {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(net.dims.len() as u32).to_le_bytes())?;
        for &d in &net.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for p in &net.params {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Vec<Mlp>, LearnError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8], LearnError> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| LearnError::Checkpoint("unexpected end of data".into()))?;
        pos += n;
        Ok(s)
    };
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let mut nets = Vec::new();
    loop {
        let Ok(magic) = take(4) else { break };
        if magic != MAGIC {
            return Err(LearnError::Checkpoint("bad magic".into()));
        }
        let version = u32_at(take(4)?);
        if version != VERSION {
            return Err(LearnError::Checkpoint(format!("unsupported version {version}")));
        }
        let layers = u32_at(take(4)?) as usize;
        if layers < 2 || layers > 64 {
            return Err(LearnError::Checkpoint(format!("implausible layer count {layers}")));
        }
        let mut dims = Vec::with_capacity(layers);
        for _ in 0..layers {
            dims.push(u32_at(take(4)?) as usize);
        }
        let mut net = Mlp::zeros(&dims);
        for p in net.params.iter_mut() {
            *p = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
        nets.push(net);
    }
    if nets.is_empty() {
        return Err(LearnError::Checkpoint("no networks".into()));
    }
    Ok(nets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2]);
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(net.forward(&[1.0]), Err(LearnError::Dim { expected: 3, got: 1 })));
    }

    #[test]
    fn identity_net_echoes() {
        let mut net = Mlp::zeros(&[2, 2]);
        net.params[0] = 1.0;
        net.params[3] = 1.0;
        assert_eq!(net.forward(&[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
    }

    #[test]
    fn golden_forward() {
        let net = Mlp::new(&[3, 4, 2], 1.0, &mut stream(42, &[]));
        let y = net.forward(&[0.1, -0.2, 0.3]).unwrap();
        let again = Mlp::new(&[3, 4, 2], 1.0, &mut stream(42, &[])).forward(&[0.1, -0.2, 0.3]).unwrap();
        assert_eq!(y, again);
        assert_relative_eq!(y[0], 0.5182865672998125, epsilon = 1e-12);
        assert_relative_eq!(y[1], 0.1241266490174335, epsilon = 1e-12);
    }

    #[test]
    fn linear_gradient_is_input() {
        let net = Mlp::zeros(&[3, 1]);
        let x = [0.5, -1.5, 2.0];
        let c = net.forward_cached(&x).unwrap();
        let g = net.backward(&c, &[1.0]);
        assert_eq!(&g[..3], &x);
        assert_eq!(g[3], 1.0);
        assert!(net.backward(&c, &[0.0]).iter().all(|&v| v == 0.0));
    }

    pub(crate) fn finite_difference_check(dims: &[usize], seed: u64) -> f64 {
        let mut rng = stream(seed, &[]);
        let net = Mlp::new(dims, 1.0, &mut rng);
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let up: Vec<f64> = (0..*dims.last().unwrap()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let f = |n: &Mlp| -> f64 { n.forward(&x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum() };
        let g = net.backward(&net.forward_cached(&x).unwrap(), &up);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let i = rng.random_range(0..net.num_params());
            let mut p = net.clone();
            p.params[i] += h;
            let mut m = net.clone();
            m.params[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradient_check() {
        let shapes = [vec![5, 128, 128, 8], vec![40, 128, 128, 40], vec![40, 128, 128, 1], vec![6, 16, 16, 1]];
        for dims in shapes {
            assert!(finite_difference_check(&dims, 7) < 1e-4, "{dims:?}");
        }
    }

    #[test]
    fn adam_examples() {
        let mut p = vec![1.0, -2.0];
        let mut a = AdamState::new(2, 3e-4);
        a.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);

        let mut a = AdamState::new(2, 3e-4);
        a.step(&mut p, &[0.5, -3.0]).unwrap();
        assert_relative_eq!(p[0], 1.0 - 3e-4, epsilon = 1e-9);
        assert_relative_eq!(p[1], -2.0 + 3e-4, epsilon = 1e-9);

        let before = p.clone();
        assert!(a.step(&mut p, &[f64::NAN, 0.0]).is_err());
        assert_eq!(p, before);
    }

    #[test]
    fn adam_minimizes_square() {
        let mut x: Vec<f64> = vec![1.0];
        let mut a = AdamState::new(1, 3e-4);
        let mut steps = 0;
        while x[0].abs() >= 1e-3 && steps < 10_000 {
            let g = vec![2.0 * x[0]];
            a.step(&mut x, &g).unwrap();
            steps += 1;
        }
        // Adam moves about lr per step, so roughly 1/lr steps are needed.
        assert!(x[0].abs() < 1e-3, "x={} after {steps} steps", x[0]);
        assert_eq!(steps, 6640);
    }

    #[test]
    fn categorical_examples() {
        let mut rng = stream(1, &[]);
        let mut zeros = 0;
        for _ in 0..1000 {
            let (a, _) = categorical_sample(&[1000.0, 0.0], &[true, true], &mut rng);
            zeros += usize::from(a == 0);
        }
        assert!(zeros >= 999);
        let logits = [0.3, -1.2, 2.0, 0.0, 0.7];
        let lp = masked_log_softmax(&logits, &[true; 5]);
        let total: f64 = lp.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(lp.iter().all(|&l| l <= 0.0));
        let h = categorical_entropy(&lp);
        assert!(h >= 0.0 && h <= 5f64.ln());
        let masked = masked_log_softmax(&logits, &[true, false, true, false, false]);
        assert_eq!(masked[1], f64::NEG_INFINITY);
        let (a, _) = categorical_sample(&logits, &[false, false, false, true, false], &mut rng);
        assert_eq!(a, 3);
    }

    #[test]
    fn categorical_grad_matches_fd() {
        let logits = vec![0.3, -1.2, 2.0, 0.0];
        let mask = [true, true, false, true];
        let g = categorical_grad(&logits, &mask, 1, 0.7, 0.01);
        let f = |l: &[f64]| {
            let lp = masked_log_softmax(l, &mask);
            0.7 * lp[1] + 0.01 * categorical_entropy(&lp)
        };
        for i in [0, 1, 3] {
            let mut p = logits.clone();
            p[i] += 1e-6;
            let mut m = logits.clone();
            m[i] -= 1e-6;
            assert!(((f(&p) - f(&m)) / 2e-6 - g[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn gaussian_examples() {
        let mut rng = stream(2, &[]);
        let (z, _) = gaussian_sample(&[0.4, -0.3], &[-40.0, -40.0], &mut rng);
        assert!((z[0] - 0.4).abs() < 1e-12 && (z[1] + 0.3).abs() < 1e-12);
        let (gm, gs) = gaussian_grad(&[0.5], &[0.1], &[0.2], 1.0, 0.0);
        let f = |m: f64, s: f64| gaussian_logprob(&[0.5], &[m], &[s]);
        assert!(((f(0.1 + 1e-6, 0.2) - f(0.1 - 1e-6, 0.2)) / 2e-6 - gm[0]).abs() < 1e-6);
        assert!(((f(0.1, 0.2 + 1e-6) - f(0.1, 0.2 - 1e-6)) / 2e-6 - gs[0]).abs() < 1e-6);
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = Mlp::new(&[3, 5, 2], 1.0, &mut stream(3, &[]));
        let b = Mlp::new(&[0, 4], 1.0, &mut stream(4, &[]));
        let mut buf = Vec::new();
        write_checkpoint(&[&a, &b], &mut buf).unwrap();
        assert_eq!(&buf[..4], b"SRIS");
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, vec![a, b]);
        assert!(read_checkpoint(&b"XXXX"[..]).is_err());
    }
}
