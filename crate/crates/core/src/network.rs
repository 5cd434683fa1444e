//! A bias-free multilayer perceptron with exact backpropagation.
//!
//! Layer `j` maps `d_{j-1} → d_j` through `W_j ∈ R^{d_j × d_{j-1}}`. Hidden
//! layers apply the activation; the output layer is linear (logits for
//! cross-entropy). Samples are columns, so a batch is `d_0 × N`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{gaussian_matrix, LinalgError, Matrix};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("layer {layer}: weight shape {got:?}, expected {expected:?}")]
    WeightShape {
        layer: usize,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("batch shape mismatch: {0}")]
    BatchShape(String),
    #[error("cache was produced for different weights")]
    StaleCache,
    #[error("invalid synthetic data request: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `(1/N) Σ_n ‖ŷ_n − y_n‖²`
    Mse,
    /// Softmax cross-entropy averaged over samples.
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub loss: Loss,
    pub seed: u64,
    /// Report gradients of the summed rather than the averaged batch loss.
    pub sum_gradients: bool,
}

impl NetworkSpec {
    pub fn new(layer_dims: Vec<usize>, activation: Activation, loss: Loss, seed: u64) -> Result<Self> {
        let spec = Self { layer_dims, activation, loss, seed, sum_gradients: false };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(NetworkError::InvalidSpec("need at least one layer (two dims)".into()));
        }
        if self.layer_dims.contains(&0) {
            return Err(NetworkError::InvalidSpec(format!("zero width in {:?}", self.layer_dims)));
        }
        if let Activation::LeakyRelu(a) = self.activation {
            if !(0.0..1.0).contains(&a) {
                return Err(NetworkError::InvalidSpec(format!("leaky slope {a} not in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// `(rows, cols)` of `W_j`, zero-based.
    pub fn weight_shape(&self, j: usize) -> (usize, usize) {
        (self.layer_dims[j + 1], self.layer_dims[j])
    }

    /// Gaussian init with standard deviation `1/√fan_in`.
    pub fn init_weights(&self) -> Vec<Matrix> {
        (0..self.num_layers())
            .map(|j| {
                let (rows, cols) = self.weight_shape(j);
                let seed = self.seed.wrapping_mul(1_000_003).wrapping_add(j as u64);
                gaussian_matrix(rows, cols, seed).scale(1.0 / (cols as f64).sqrt())
            })
            .collect()
    }

    fn check_weights(&self, weights: &[Matrix]) -> Result<()> {
        if weights.len() != self.num_layers() {
            return Err(NetworkError::InvalidSpec(format!(
                "{} weight matrices for {} layers",
                weights.len(),
                self.num_layers()
            )));
        }
        for (j, w) in weights.iter().enumerate() {
            if w.shape() != self.weight_shape(j) {
                return Err(NetworkError::WeightShape { layer: j, got: w.shape(), expected: self.weight_shape(j) });
            }
        }
        Ok(())
    }
}

/// Samples as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.cols() != targets.cols() {
            return Err(NetworkError::BatchShape(format!(
                "{} inputs vs {} targets",
                inputs.cols(),
                targets.cols()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn size(&self) -> usize {
        self.inputs.cols()
    }

    /// Sub-batch with the given sample columns.
    pub fn select(&self, idx: &[usize]) -> Batch {
        let pick = |m: &Matrix| Matrix::from_fn(m.rows(), idx.len(), |i, k| m.get(i, idx[k]));
        Batch { inputs: pick(&self.inputs), targets: pick(&self.targets) }
    }

    /// Deterministic minibatch of `size` distinct samples.
    pub fn sample(&self, size: usize, seed: u64) -> Batch {
        if size == 0 || size >= self.size() {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.size()).collect();
        idx.shuffle(&mut crate::linalg::seeded_rng(seed));
        idx.truncate(size);
        idx.sort_unstable();
        self.select(&idx)
    }

    /// Each target column sums to one and has a single 1 entry.
    pub fn is_one_hot(&self) -> bool {
        (0..self.targets.cols()).all(|c| {
            let col = self.targets.col(c);
            col.iter().all(|&x| x == 0.0 || x == 1.0) && col.iter().sum::<f64>() == 1.0
        })
    }
}

/// Activations recorded by [`forward`] for use in [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `pre[j] = W_j · post[j]`.
    pre: Vec<Matrix>,
    /// `post[0]` is the input; `post[j+1] = act(pre[j])` for hidden layers.
    post: Vec<Matrix>,
    targets: Matrix,
    fingerprint: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.pre.last().expect("at least one layer")
    }
}

fn fingerprint(weights: &[Matrix]) -> u64 {
    // FNV-1a over shapes and bit patterns.
    let mut h: u64 = 0xcbf29ce484222325;
    let mut feed = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for w in weights {
        feed(w.rows() as u64);
        feed(w.cols() as u64);
        for x in w.data() {
            feed(x.to_bits());
        }
    }
    h
}

fn softmax_columns(logits: &Matrix) -> Matrix {
    let (c, n) = logits.shape();
    let mut out = Matrix::zeros(c, n);
    for k in 0..n {
        let max = (0..c).map(|i| logits.get(i, k)).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..c).map(|i| (logits.get(i, k) - max).exp()).sum();
        for i in 0..c {
            out.set(i, k, (logits.get(i, k) - max).exp() / denom);
        }
    }
    out
}

fn loss_value(loss: Loss, output: &Matrix, targets: &Matrix) -> Result<f64> {
    let n = output.cols() as f64;
    match loss {
        Loss::Mse => Ok(output.sub(targets)?.fro_norm_sq() / n),
        Loss::CrossEntropy => {
            let (c, cols) = output.shape();
            let mut total = 0.0;
            for k in 0..cols {
                let max = (0..c).map(|i| output.get(i, k)).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..c).map(|i| (output.get(i, k) - max).exp()).sum::<f64>().ln();
                for i in 0..c {
                    let y = targets.get(i, k);
                    if y != 0.0 {
                        total += y * (lse - output.get(i, k));
                    }
                }
            }
            Ok(total / n)
        }
    }
}

/// Batch-mean loss and the activation cache.
pub fn forward(spec: &NetworkSpec, weights: &[Matrix], batch: &Batch) -> Result<(f64, ForwardCache)> {
    spec.check_weights(weights)?;
    let (d0, dl) = (spec.layer_dims[0], *spec.layer_dims.last().expect("validated"));
    if batch.inputs.rows() != d0 || batch.targets.rows() != dl {
        return Err(NetworkError::BatchShape(format!(
            "batch is {}→{}, network is {d0}→{dl}",
            batch.inputs.rows(),
            batch.targets.rows()
        )));
    }
    let layers = spec.num_layers();
    let mut pre = Vec::with_capacity(layers);
    let mut post = Vec::with_capacity(layers);
    post.push(batch.inputs.clone());
    for (j, w) in weights.iter().enumerate() {
        let z = w.matmul(&post[j])?;
        if j + 1 < layers {
            post.push(z.map(|x| spec.activation.apply(x)));
        }
        pre.push(z);
    }
    let loss = loss_value(spec.loss, pre.last().expect("nonempty"), &batch.targets)?;
    Ok((loss, ForwardCache { pre, post, targets: batch.targets.clone(), fingerprint: fingerprint(weights) }))
}

/// Exact gradients of the batch loss with respect to each weight matrix.
pub fn backward(spec: &NetworkSpec, weights: &[Matrix], cache: &ForwardCache) -> Result<Vec<Matrix>> {
    spec.check_weights(weights)?;
    if cache.fingerprint != fingerprint(weights) || cache.pre.len() != weights.len() {
        return Err(NetworkError::StaleCache);
    }
    let output = cache.output();
    let n = output.cols() as f64;
    let scale = if spec.sum_gradients { n } else { 1.0 };
    let mut delta = match spec.loss {
        Loss::Mse => output.sub(&cache.targets)?.scale(2.0 * scale / n),
        Loss::CrossEntropy => softmax_columns(output).sub(&cache.targets)?.scale(scale / n),
    };
    let mut grads = vec![Matrix::zeros(1, 1); weights.len()];
    for j in (0..weights.len()).rev() {
        grads[j] = delta.matmul_t(&cache.post[j])?;
        if j > 0 {
            let back = weights[j].t_matmul(&delta)?;
            let act = spec.activation;
            delta = back.hadamard(&cache.pre[j - 1].map(|x| act.derivative(x)))?;
        }
    }
    Ok(grads)
}

/// Loss and gradients in one call.
pub fn loss_and_grads(spec: &NetworkSpec, weights: &[Matrix], batch: &Batch) -> Result<(f64, Vec<Matrix>)> {
    let (loss, cache) = forward(spec, weights, batch)?;
    Ok((loss, backward(spec, weights, &cache)?))
}

/// Fraction of samples whose arg-max output matches the arg-max target.
pub fn accuracy(spec: &NetworkSpec, weights: &[Matrix], batch: &Batch) -> Result<f64> {
    let (_, cache) = forward(spec, weights, batch)?;
    let out = cache.output();
    let argmax = |m: &Matrix, k: usize| (0..m.rows()).max_by(|&a, &b| m.get(a, k).total_cmp(&m.get(b, k))).unwrap_or(0);
    let hits = (0..out.cols()).filter(|&k| argmax(out, k) == argmax(&batch.targets, k)).count();
    Ok(hits as f64 / out.cols() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// `Y = W*·X + noise·E` with `rank(W*) = rank`.
    LowRankRegression { rank: usize, noise: f64 },
    /// Gaussian clusters around `separation`-scaled random class means.
    Classification { classes: usize, separation: f64 },
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub batch: Batch,
    /// `W*` for regression data.
    pub ground_truth: Option<Matrix>,
}

/// Seeded synthetic dataset with `samples` columns.
pub fn make_synthetic(kind: SyntheticKind, d_in: usize, d_out: usize, samples: usize, seed: u64) -> Result<Synthetic> {
    if d_in == 0 || d_out == 0 || samples == 0 {
        return Err(NetworkError::InvalidData(format!("dims {d_in}→{d_out} with {samples} samples")));
    }
    let x_seed = seed.wrapping_mul(31).wrapping_add(1);
    match kind {
        SyntheticKind::LowRankRegression { rank, noise } => {
            if rank == 0 || rank > d_in.min(d_out) {
                return Err(NetworkError::InvalidData(format!("rank {rank} exceeds min({d_in}, {d_out})")));
            }
            if !(noise >= 0.0) {
                return Err(NetworkError::InvalidData(format!("noise {noise} must be nonnegative")));
            }
            let left = gaussian_matrix(d_out, rank, seed.wrapping_mul(31).wrapping_add(2));
            let right = gaussian_matrix(rank, d_in, seed.wrapping_mul(31).wrapping_add(3));
            let w_star = left.matmul(&right)?.scale(1.0 / ((rank * d_in) as f64).sqrt());
            let x = gaussian_matrix(d_in, samples, x_seed);
            let mut y = w_star.matmul(&x)?;
            if noise > 0.0 {
                y.axpy(noise, &gaussian_matrix(d_out, samples, seed.wrapping_mul(31).wrapping_add(4)))?;
            }
            Ok(Synthetic { batch: Batch::new(x, y)?, ground_truth: Some(w_star) })
        }
        SyntheticKind::Classification { classes, separation } => {
            if classes < 2 || classes != d_out {
                return Err(NetworkError::InvalidData(format!("{classes} classes for output width {d_out}")));
            }
            let means = gaussian_matrix(d_in, classes, seed.wrapping_mul(31).wrapping_add(5)).scale(separation);
            let mut x = gaussian_matrix(d_in, samples, x_seed);
            let mut y = Matrix::zeros(classes, samples);
            for k in 0..samples {
                let c = k % classes;
                y.set(c, k, 1.0);
                for i in 0..d_in {
                    x.set(i, k, x.get(i, k) + means.get(i, c));
                }
            }
            Ok(Synthetic { batch: Batch::new(x, y)?, ground_truth: None })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;

    /// Central differences along random unit directions.
    fn fd_check(spec: &NetworkSpec, weights: &[Matrix], batch: &Batch, seed: u64) {
        let (_, grads) = loss_and_grads(spec, weights, batch).unwrap();
        let h = 1e-5;
        for j in 0..weights.len() {
            for d in 0..20 {
                let (r, c) = weights[j].shape();
                let e = gaussian_matrix(r, c, seed * 1000 + (j * 20 + d) as u64);
                let e = e.scale(1.0 / e.fro_norm());
                let mut plus = weights.to_vec();
                plus[j].axpy(h, &e).unwrap();
                let mut minus = weights.to_vec();
                minus[j].axpy(-h, &e).unwrap();
                let fp = forward(spec, &plus, batch).unwrap().0;
                let fm = forward(spec, &minus, batch).unwrap().0;
                let numeric = (fp - fm) / (2.0 * h);
                let analytic: f64 = grads[j].hadamard(&e).unwrap().sum();
                let scale = analytic.abs().max(numeric.abs()).max(1.0);
                assert!(
                    (numeric - analytic).abs() <= 1e-5 * scale,
                    "layer {j} dir {d}: numeric {numeric} vs analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn identity_net_fits_its_inputs() {
        let spec = NetworkSpec::new(vec![3, 3], Activation::Identity, Loss::Mse, 0).unwrap();
        let x = gaussian_matrix(3, 5, 1);
        let batch = Batch::new(x.clone(), x).unwrap();
        let (loss, cache) = forward(&spec, &[Matrix::identity(3)], &batch).unwrap();
        assert_eq!(loss, 0.0);
        let grads = backward(&spec, &[Matrix::identity(3)], &cache).unwrap();
        assert!(grads[0].max_abs() <= 1e-12);
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let spec = NetworkSpec::new(vec![2, 4], Activation::Relu, Loss::CrossEntropy, 0).unwrap();
        let mut y = Matrix::zeros(4, 3);
        for k in 0..3 {
            y.set(k, k, 1.0);
        }
        let batch = Batch::new(gaussian_matrix(2, 3, 1), y).unwrap();
        let (loss, _) = forward(&spec, &[Matrix::zeros(4, 2)], &batch).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn two_layer_loss_regression_pin() {
        let spec = NetworkSpec::new(vec![4, 5, 3], Activation::Relu, Loss::Mse, 42).unwrap();
        let data = make_synthetic(SyntheticKind::LowRankRegression { rank: 2, noise: 0.1 }, 4, 3, 16, 7).unwrap();
        let (loss, _) = forward(&spec, &spec.init_weights(), &data.batch).unwrap();
        assert!((loss - TWO_LAYER_PINNED_LOSS).abs() <= 1e-12, "loss {loss:.17}");
    }

    /// Frozen from the first reference run.
    const TWO_LAYER_PINNED_LOSS: f64 = 5.511_607_861_522_997_5;

    #[test]
    fn linear_layer_closed_form() {
        let spec = NetworkSpec::new(vec![4, 3], Activation::Identity, Loss::Mse, 0).unwrap();
        let w = gaussian_matrix(3, 4, 1);
        let x = gaussian_matrix(4, 6, 2);
        let y = gaussian_matrix(3, 6, 3);
        let batch = Batch::new(x.clone(), y.clone()).unwrap();
        let (_, grads) = loss_and_grads(&spec, &[w.clone()], &batch).unwrap();
        let expected = w.matmul(&x).unwrap().sub(&y).unwrap().matmul_t(&x).unwrap().scale(2.0 / 6.0);
        assert!(grads[0].sub(&expected).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn finite_differences_all_specs() {
        let specs = [
            (vec![5, 4], Activation::Identity, Loss::Mse),
            (vec![5, 6, 3], Activation::Relu, Loss::Mse),
            (vec![5, 6, 4, 3], Activation::LeakyRelu(0.1), Loss::Mse),
            (vec![5, 6, 3], Activation::Relu, Loss::CrossEntropy),
            (vec![5, 7, 6, 3], Activation::LeakyRelu(0.2), Loss::CrossEntropy),
        ];
        for (k, (dims, act, loss)) in specs.into_iter().enumerate() {
            let spec = NetworkSpec::new(dims.clone(), act, loss, k as u64).unwrap();
            let d_out = *dims.last().unwrap();
            let kind = match loss {
                Loss::Mse => SyntheticKind::LowRankRegression { rank: 2, noise: 0.1 },
                Loss::CrossEntropy => SyntheticKind::Classification { classes: d_out, separation: 1.0 },
            };
            let data = make_synthetic(kind, dims[0], d_out, 12, k as u64).unwrap();
            fd_check(&spec, &spec.init_weights(), &data.batch, k as u64);
        }
    }

    #[test]
    fn sum_flag_scales_gradients() {
        let mut spec = NetworkSpec::new(vec![3, 4, 2], Activation::Relu, Loss::Mse, 1).unwrap();
        let data = make_synthetic(SyntheticKind::LowRankRegression { rank: 1, noise: 0.0 }, 3, 2, 8, 1).unwrap();
        let w = spec.init_weights();
        let (_, mean) = loss_and_grads(&spec, &w, &data.batch).unwrap();
        spec.sum_gradients = true;
        let (_, sum) = loss_and_grads(&spec, &w, &data.batch).unwrap();
        for (a, b) in mean.iter().zip(&sum) {
            assert!(a.scale(8.0).sub(b).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn stale_cache_and_shape_errors() {
        let spec = NetworkSpec::new(vec![3, 2], Activation::Relu, Loss::Mse, 0).unwrap();
        let data = make_synthetic(SyntheticKind::LowRankRegression { rank: 1, noise: 0.0 }, 3, 2, 4, 0).unwrap();
        let w = spec.init_weights();
        let (_, cache) = forward(&spec, &w, &data.batch).unwrap();
        let moved = vec![w[0].scale(2.0)];
        assert!(matches!(backward(&spec, &moved, &cache), Err(NetworkError::StaleCache)));
        let wrong = vec![Matrix::zeros(3, 3)];
        assert!(matches!(forward(&spec, &wrong, &data.batch), Err(NetworkError::WeightShape { layer: 0, .. })));
        assert!(NetworkSpec::new(vec![3], Activation::Relu, Loss::Mse, 0).is_err());
        assert!(NetworkSpec::new(vec![3, 0], Activation::Relu, Loss::Mse, 0).is_err());
        assert!(NetworkSpec::new(vec![3, 2], Activation::LeakyRelu(1.0), Loss::Mse, 0).is_err());
    }

    #[test]
    fn realizable_regression_has_zero_loss_at_truth() {
        let data = make_synthetic(SyntheticKind::LowRankRegression { rank: 1, noise: 0.0 }, 6, 4, 20, 3).unwrap();
        let spec = NetworkSpec::new(vec![6, 4], Activation::Identity, Loss::Mse, 0).unwrap();
        let (loss, _) = forward(&spec, &[data.ground_truth.unwrap()], &data.batch).unwrap();
        assert!(loss < 1e-28);
    }

    #[test]
    fn synthetic_is_deterministic_and_one_hot() {
        let kind = SyntheticKind::Classification { classes: 3, separation: 2.0 };
        let a = make_synthetic(kind, 5, 3, 30, 9).unwrap();
        let b = make_synthetic(kind, 5, 3, 30, 9).unwrap();
        assert_eq!(a.batch, b.batch);
        assert!(a.batch.is_one_hot());
        assert!(make_synthetic(SyntheticKind::LowRankRegression { rank: 5, noise: 0.0 }, 4, 4, 3, 0).is_err());
        assert!(make_synthetic(kind, 5, 4, 30, 0).is_err());
    }

    #[test]
    fn minibatch_sampling_is_deterministic() {
        let data = make_synthetic(SyntheticKind::LowRankRegression { rank: 1, noise: 0.0 }, 3, 2, 50, 0).unwrap();
        let a = data.batch.sample(10, 4);
        assert_eq!(a, data.batch.sample(10, 4));
        assert_eq!(a.size(), 10);
        assert_eq!(data.batch.sample(0, 4), data.batch);
    }
}
