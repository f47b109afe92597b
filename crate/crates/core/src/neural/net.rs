use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::NeuralError;

/// Fully connected network: ReLU on every hidden layer, identity output.
///
/// Parameters live in one flat vector laid out as all weight matrices
/// (row-major, `outputs × inputs`) layer by layer, followed by all bias
/// vectors layer by layer. Optimizers, soft updates and checkpoints all
/// operate on that flat slice.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    params: Vec<f64>,
    w_off: Vec<usize>,
    b_off: Vec<usize>,
}

/// Intermediate values of a batched forward pass, needed for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    batch: usize,
    /// Input of each layer (`acts[0]` is the network input), `batch × sizes[k]`.
    acts: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer, `batch × sizes[k + 1]`.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn offsets(sizes: &[usize]) -> (Vec<usize>, Vec<usize>, usize) {
    let mut w_off = Vec::with_capacity(sizes.len() - 1);
    let mut at = 0;
    for k in 0..sizes.len() - 1 {
        w_off.push(at);
        at += sizes[k] * sizes[k + 1];
    }
    let mut b_off = Vec::with_capacity(sizes.len() - 1);
    for k in 0..sizes.len() - 1 {
        b_off.push(at);
        at += sizes[k + 1];
    }
    (w_off, b_off, at)
}

/// Number of parameters of a network with these layer sizes.
pub fn param_count(sizes: &[usize]) -> usize {
    if sizes.len() < 2 {
        return 0;
    }
    offsets(sizes).2
}

/// `c (m×n) = a (m×k) · b (k×n)` with explicit strides, overwriting `c`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    // SAFETY: callers pass slices whose extents match the given shapes and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl DenseNet {
    /// All-zero network with the given layer sizes `[U₀, …, U_K]`.
    pub fn zeros(sizes: &[usize]) -> Result<Self, NeuralError> {
        if sizes.len() < 2 {
            return Err(NeuralError::Architecture(
                "a network needs at least an input and an output layer".into(),
            ));
        }
        if sizes[1..].iter().any(|&s| s == 0) {
            return Err(NeuralError::Architecture(
                "hidden and output layers must have at least one unit".into(),
            ));
        }
        let (w_off, b_off, n) = offsets(sizes);
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
            w_off,
            b_off,
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self, NeuralError> {
        let mut net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(NeuralError::Dimension {
                what: "parameters",
                expected: net.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NeuralError::NonFinite);
        }
        net.params = params;
        Ok(net)
    }

    /// He-uniform hidden layers, zero biases, output layer scaled by `output_scale`.
    pub fn init_he<R: Rng>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Result<Self, NeuralError> {
        let mut net = Self::zeros(sizes)?;
        let layers = net.num_layers();
        for k in 0..layers {
            let fan_in = sizes[k].max(1) as f64;
            let limit = (6.0 / fan_in).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            let scale = if k + 1 == layers { output_scale } else { 1.0 };
            for w in net.weight_mut(k) {
                *w = dist.sample(rng) * scale;
            }
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Number of affine layers `K`.
    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn hidden_units(&self) -> usize {
        self.sizes[1..self.sizes.len() - 1].iter().sum()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Row-major `outputs × inputs` weight matrix of layer `k`.
    pub fn weight(&self, k: usize) -> &[f64] {
        &self.params[self.w_off[k]..self.w_off[k] + self.sizes[k] * self.sizes[k + 1]]
    }

    pub fn weight_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.sizes[k] * self.sizes[k + 1];
        &mut self.params[self.w_off[k]..self.w_off[k] + len]
    }

    pub fn bias(&self, k: usize) -> &[f64] {
        &self.params[self.b_off[k]..self.b_off[k] + self.sizes[k + 1]]
    }

    pub fn bias_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.sizes[k + 1];
        &mut self.params[self.b_off[k]..self.b_off[k] + len]
    }

    /// Weight from input `i` to output `j` of layer `k`.
    pub fn w(&self, k: usize, j: usize, i: usize) -> f64 {
        self.params[self.w_off[k] + j * self.sizes[k] + i]
    }

    pub fn same_architecture(&self, other: &DenseNet) -> bool {
        self.sizes == other.sizes
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
        Ok(self.forward_batch(input, 1)?.output)
    }

    /// Forward pass over `batch` row-major samples.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<ForwardTrace, NeuralError> {
        let n_in = self.input_dim();
        if input.len() != batch * n_in {
            return Err(NeuralError::Dimension {
                what: "input values",
                expected: batch * n_in,
                got: input.len(),
            });
        }
        let layers = self.num_layers();
        let mut acts = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers.saturating_sub(1));
        let mut current = input.to_vec();
        for k in 0..layers {
            let (fan_in, fan_out) = (self.sizes[k], self.sizes[k + 1]);
            let mut z = vec![0.0; batch * fan_out];
            gemm(
                batch,
                fan_in,
                fan_out,
                &current,
                fan_in as isize,
                1,
                self.weight(k),
                1,
                fan_in as isize,
                &mut z,
            );
            let b = self.bias(k);
            for row in z.chunks_mut(fan_out) {
                row.iter_mut().zip(b).for_each(|(v, bj)| *v += bj);
            }
            acts.push(std::mem::replace(&mut current, Vec::new()));
            if k + 1 < layers {
                current = z.iter().map(|&v| v.max(0.0)).collect();
                pre.push(z);
            } else {
                current = z;
            }
        }
        Ok(ForwardTrace {
            batch,
            acts,
            pre,
            output: current,
        })
    }

    /// Reverse-mode gradients for a batch given `upstream = ∂L/∂output`
    /// (`batch × output_dim`). Returns `(∂L/∂params, ∂L/∂input)`, summed over
    /// the batch for parameters. The ReLU derivative at exactly 0 is 0.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NeuralError> {
        let batch = trace.batch;
        if upstream.len() != batch * self.output_dim() {
            return Err(NeuralError::Dimension {
                what: "upstream gradient values",
                expected: batch * self.output_dim(),
                got: upstream.len(),
            });
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.to_vec();
        for k in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[k], self.sizes[k + 1]);
            let x = &trace.acts[k];
            {
                let gw = &mut grads[self.w_off[k]..self.w_off[k] + fan_in * fan_out];
                gemm(
                    fan_out,
                    batch,
                    fan_in,
                    &delta,
                    1,
                    fan_out as isize,
                    x,
                    fan_in as isize,
                    1,
                    gw,
                );
            }
            {
                let gb = &mut grads[self.b_off[k]..self.b_off[k] + fan_out];
                for row in delta.chunks(fan_out) {
                    gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                }
            }
            let mut dx = vec![0.0; batch * fan_in];
            gemm(
                batch,
                fan_out,
                fan_in,
                &delta,
                fan_out as isize,
                1,
                self.weight(k),
                fan_in as isize,
                1,
                &mut dx,
            );
            if k > 0 {
                let z = &trace.pre[k - 1];
                dx.iter_mut().zip(z).for_each(|(d, &zv)| {
                    if zv <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = dx;
        }
        Ok((grads, delta))
    }

    /// Single-sample gradients: `(∂L/∂params, ∂L/∂input)`.
    pub fn gradients(&self, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NeuralError> {
        let trace = self.forward_batch(input, 1)?;
        self.backward(&trace, upstream)
    }

    /// Upper bound on the ∞-norm Lipschitz constant: product of induced ∞-norms.
    pub fn lipschitz_inf(&self) -> f64 {
        (0..self.num_layers())
            .map(|k| {
                self.weight(k)
                    .chunks(self.sizes[k].max(1))
                    .map(|row| row.iter().map(|w| w.abs()).sum::<f64>())
                    .fold(0.0, f64::max)
            })
            .product()
    }
}

/// `target ← τ·source + (1 − τ)·target`, elementwise.
pub fn soft_update(target: &mut DenseNet, source: &DenseNet, tau: f64) -> Result<(), NeuralError> {
    if !target.same_architecture(source) {
        return Err(NeuralError::Architecture(format!(
            "soft update between {:?} and {:?}",
            target.sizes, source.sizes
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(NeuralError::Domain(format!("tau must lie in [0, 1], got {tau}")));
    }
    for (t, s) in target.params.iter_mut().zip(&source.params) {
        *t = tau * s + (1.0 - tau) * *t;
    }
    Ok(())
}
