//! Benchmark objectives and stochastic-gradient oracles.
//!
//! Three objectives: the matrix Rosenbrock benchmark, a Gaussian-blob
//! synthetic-classification MLP, and a convex quadratic whose smoothness and
//! gradient bounds are certifiable exactly (used for bound-vs-empirical
//! sanity runs). Parameters are lists of matrix blocks; Rosenbrock and the
//! quadratic use a single block, the MLP one weight and one bias block per
//! layer.

use crate::error::Error;
use crate::mat::Mat;
use crate::rng::{derive_stream, RngStream};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Rosenbrock,
    SyntheticMlp,
    Quadratic,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Rosenbrock => "rosenbrock",
            ProblemKind::SyntheticMlp => "mlp",
            ProblemKind::Quadratic => "quadratic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Weight shape for Rosenbrock and the quadratic.
    pub m: usize,
    pub n: usize,
    /// Additive per-entry gradient noise scale (before the 1/sqrt(batch)
    /// reduction); 0 gives the exact analytic gradient.
    pub noise_sigma: f64,
    /// Layer widths including input and output, e.g. `[8, 16, 3]`.
    pub mlp_layers: Vec<usize>,
    pub dataset_seed: u64,
    pub dataset_size: usize,
    pub num_classes: usize,
    /// Minibatch size used by each worker's gradient sample.
    pub batch_size: usize,
}

impl ProblemSpec {
    pub fn rosenbrock(m: usize, n: usize) -> ProblemSpec {
        ProblemSpec {
            kind: ProblemKind::Rosenbrock,
            m,
            n,
            noise_sigma: 0.0,
            mlp_layers: Vec::new(),
            dataset_seed: 0,
            dataset_size: 0,
            num_classes: 0,
            batch_size: 1,
        }
    }

    pub fn quadratic(m: usize, n: usize) -> ProblemSpec {
        ProblemSpec {
            kind: ProblemKind::Quadratic,
            ..ProblemSpec::rosenbrock(m, n)
        }
    }

    pub fn mlp(layers: Vec<usize>, dataset_seed: u64, dataset_size: usize, num_classes: usize, batch_size: usize) -> ProblemSpec {
        ProblemSpec {
            kind: ProblemKind::SyntheticMlp,
            m: 0,
            n: 0,
            noise_sigma: 0.0,
            mlp_layers: layers,
            dataset_seed,
            dataset_size,
            num_classes,
            batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ProblemKind::Rosenbrock => {
                if self.m < 1 || self.n < 2 {
                    return Err(Error::Config("rosenbrock needs m >= 1 and n >= 2".into()));
                }
            }
            ProblemKind::Quadratic => {
                if self.m < 1 || self.n < 1 {
                    return Err(Error::Config("quadratic needs m, n >= 1".into()));
                }
            }
            ProblemKind::SyntheticMlp => {
                if self.mlp_layers.len() < 2 {
                    return Err(Error::Config("mlp needs at least input and output layers".into()));
                }
                if self.num_classes < 2 {
                    return Err(Error::Config("mlp needs num_classes >= 2".into()));
                }
                if *self.mlp_layers.last().unwrap() != self.num_classes {
                    return Err(Error::Config("mlp output width must equal num_classes".into()));
                }
                if self.mlp_layers[0] < self.num_classes {
                    return Err(Error::Config(
                        "blob dataset needs input dim >= num_classes".into(),
                    ));
                }
                if self.dataset_size < 1 || self.batch_size < 1 {
                    return Err(Error::Config("mlp needs dataset_size and batch_size >= 1".into()));
                }
            }
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// One stochastic-gradient draw.
#[derive(Debug, Clone)]
pub struct GradSample {
    pub value: f64,
    pub grad: Vec<Mat>,
    pub batch_ids: Vec<usize>,
}

/// `F(W) = sum_j 100 ||W_{j+1} - W_j^2||^2 + ||1 - W_j||^2` over columns
/// `j = 1..n-1`, squares elementwise.
pub fn rosenbrock_value(w: &Mat) -> f64 {
    assert!(w.cols() >= 2, "rosenbrock needs n >= 2");
    let (m, n) = (w.rows(), w.cols());
    let mut total = 0.0;
    for j in 0..n - 1 {
        let mut coupling = 0.0;
        let mut anchor = 0.0;
        for i in 0..m {
            let wj = w.get(i, j);
            let d = w.get(i, j + 1) - wj * wj;
            coupling += d * d;
            let a = 1.0 - wj;
            anchor += a * a;
        }
        total += 100.0 * coupling + anchor;
    }
    total
}

/// Analytic gradient of [`rosenbrock_value`]. Column `j` collects
/// `-2(1 - W_j) + 400 W_j (W_j^2 - W_{j+1})` from its own term and
/// `200 (W_j - W_{j-1}^2)` from the preceding one.
pub fn rosenbrock_grad(w: &Mat) -> Mat {
    assert!(w.cols() >= 2, "rosenbrock needs n >= 2");
    let (m, n) = (w.rows(), w.cols());
    let mut g = Mat::zeros(m, n);
    for j in 0..n - 1 {
        for i in 0..m {
            let wj = w.get(i, j);
            let next = w.get(i, j + 1);
            let own = -2.0 * (1.0 - wj) + 400.0 * wj * (wj * wj - next);
            g.set(i, j, g.get(i, j) + own);
            g.set(i, j + 1, g.get(i, j + 1) + 200.0 * (next - wj * wj));
        }
    }
    g
}

/// Deterministic Gaussian-blob classification set. Labels are assigned
/// round-robin, class `c` is centered at `2 sqrt(2) * e_c` (pairwise mean
/// separation exactly 4 at unit noise), features are mean + standard normal.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Mat, // size x input_dim
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
}

const DATASET_STREAM: u64 = 0x6461;
const INIT_STREAM: u64 = 0x696e;
const BATCH_STREAM: u64 = 0x6261;
const NOISE_STREAM: u64 = 0x6e6f;

pub fn make_synthetic_dataset(spec: &ProblemSpec) -> Result<Dataset> {
    spec.validate()?;
    if spec.kind != ProblemKind::SyntheticMlp {
        return Err(Error::Config("dataset generation applies to the mlp problem".into()));
    }
    let dim = spec.mlp_layers[0];
    let size = spec.dataset_size;
    let sep_scale = 8.0f64.sqrt(); // pairwise distance 4 between basis means
    let mut rng = RngStream::new(spec.dataset_seed, derive_stream(DATASET_STREAM, 0, 0));
    let mut features = Mat::zeros(size, dim);
    let mut labels = Vec::with_capacity(size);
    for i in 0..size {
        let label = i % spec.num_classes;
        labels.push(label);
        for d in 0..dim {
            let mean = if d == label { sep_scale } else { 0.0 };
            features.set(i, d, mean + rng.next_normal());
        }
    }
    Ok(Dataset {
        features,
        labels,
        num_classes: spec.num_classes,
        seed: spec.dataset_seed,
    })
}

/// A problem spec bound to its runtime data (the MLP's dataset).
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub dataset: Option<Dataset>,
}

impl Problem {
    pub fn new(spec: &ProblemSpec) -> Result<Problem> {
        spec.validate()?;
        let dataset = match spec.kind {
            ProblemKind::SyntheticMlp => Some(make_synthetic_dataset(spec)?),
            _ => None,
        };
        Ok(Problem {
            spec: spec.clone(),
            dataset,
        })
    }

    /// Initial parameter point, deterministic in `seed`.
    pub fn initial_point(&self, seed: u64) -> Vec<Mat> {
        let mut rng = RngStream::new(seed, derive_stream(INIT_STREAM, 0, 0));
        match self.spec.kind {
            // W_0 ~ N(1, 0.1^2) entrywise
            ProblemKind::Rosenbrock | ProblemKind::Quadratic => {
                let mut w = Mat::filled(self.spec.m, self.spec.n, 1.0);
                for v in w.as_mut_slice().iter_mut() {
                    *v += 0.1 * rng.next_normal();
                }
                vec![w]
            }
            ProblemKind::SyntheticMlp => {
                let mut blocks = Vec::new();
                let widths = &self.spec.mlp_layers;
                for l in 0..widths.len() - 1 {
                    let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let mut w = Mat::zeros(fan_in, fan_out);
                    for v in w.as_mut_slice().iter_mut() {
                        *v = (2.0 * rng.next_f64() - 1.0) * bound;
                    }
                    blocks.push(w);
                    blocks.push(Mat::zeros(1, fan_out));
                }
                blocks
            }
        }
    }

    /// Exact objective and full (noise-free, whole-dataset) gradient.
    pub fn true_loss_grad(&self, w: &[Mat]) -> Result<(f64, Vec<Mat>)> {
        match self.spec.kind {
            ProblemKind::Rosenbrock => Ok((rosenbrock_value(&w[0]), vec![rosenbrock_grad(&w[0])])),
            ProblemKind::Quadratic => {
                Ok((0.5 * w[0].frob_norm_sq(), vec![w[0].clone()]))
            }
            ProblemKind::SyntheticMlp => {
                let ids: Vec<usize> = (0..self.spec.dataset_size).collect();
                self.batch_loss_grad(w, &ids)
            }
        }
    }

    /// One worker's stochastic gradient draw.
    pub fn sample_grad(&self, w: &[Mat], rng: &mut RngStream, batch: usize) -> Result<GradSample> {
        assert!(batch >= 1, "batch must be >= 1");
        match self.spec.kind {
            ProblemKind::Rosenbrock | ProblemKind::Quadratic => {
                let (value, mut grad) = self.true_loss_grad(w)?;
                if self.spec.noise_sigma > 0.0 {
                    let std = self.spec.noise_sigma / (batch as f64).sqrt();
                    for block in grad.iter_mut() {
                        for v in block.as_mut_slice().iter_mut() {
                            *v += std * rng.next_normal();
                        }
                    }
                }
                Ok(GradSample {
                    value,
                    grad,
                    batch_ids: Vec::new(),
                })
            }
            ProblemKind::SyntheticMlp => {
                let size = self.spec.dataset_size;
                let ids: Vec<usize> = (0..batch).map(|_| (rng.next_u64() % size as u64) as usize).collect();
                let (value, grad) = self.batch_loss_grad(w, &ids)?;
                Ok(GradSample {
                    value,
                    grad,
                    batch_ids: ids,
                })
            }
        }
    }

    /// Mean softmax cross-entropy over the given sample indices.
    pub fn batch_loss(&self, w: &[Mat], ids: &[usize]) -> Result<f64> {
        Ok(self.mlp_forward_backward(w, ids, false)?.0)
    }

    /// Loss and backprop gradient over the given sample indices.
    pub fn batch_loss_grad(&self, w: &[Mat], ids: &[usize]) -> Result<(f64, Vec<Mat>)> {
        let (loss, grad) = self.mlp_forward_backward(w, ids, true)?;
        Ok((loss, grad))
    }

    fn mlp_forward_backward(&self, w: &[Mat], ids: &[usize], want_grad: bool) -> Result<(f64, Vec<Mat>)> {
        let data = self
            .dataset
            .as_ref()
            .ok_or_else(|| Error::Config("problem has no dataset".into()))?;
        let layers = w.len() / 2;
        let b = ids.len();
        let dim = data.features.cols();
        let mut x = Mat::zeros(b, dim);
        for (row, &id) in ids.iter().enumerate() {
            for d in 0..dim {
                x.set(row, d, data.features.get(id, d));
            }
        }
        // forward, keeping pre-activations for backprop
        let mut acts = vec![x]; // activations entering each layer
        let mut zs = Vec::with_capacity(layers);
        for l in 0..layers {
            let wl = &w[2 * l];
            let bl = &w[2 * l + 1];
            let mut z = acts[l].matmul(wl)?;
            for i in 0..b {
                for j in 0..z.cols() {
                    z.set(i, j, z.get(i, j) + bl.get(0, j));
                }
            }
            let a = if l + 1 < layers { z.map(|v| v.max(0.0)) } else { z.clone() };
            zs.push(z);
            acts.push(a);
        }
        // softmax cross-entropy, mean over batch
        let logits = &acts[layers];
        let k = logits.cols();
        let mut loss = 0.0;
        let mut dlogits = Mat::zeros(b, k);
        for (i, &id) in ids.iter().enumerate() {
            let row = logits.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &v in row {
                denom += (v - mx).exp();
            }
            let label = data.labels[id];
            loss += -(logits.get(i, label) - mx - denom.ln());
            if want_grad {
                for j in 0..k {
                    let p = (logits.get(i, j) - mx).exp() / denom;
                    let y = if j == label { 1.0 } else { 0.0 };
                    dlogits.set(i, j, (p - y) / b as f64);
                }
            }
        }
        loss /= b as f64;
        if !want_grad {
            return Ok((loss, Vec::new()));
        }
        let mut grads = vec![Mat::zeros(1, 1); w.len()];
        let mut delta = dlogits;
        for l in (0..layers).rev() {
            let wl = &w[2 * l];
            grads[2 * l] = acts[l].transpose().matmul(&delta)?;
            let mut db = Mat::zeros(1, delta.cols());
            for i in 0..b {
                for j in 0..delta.cols() {
                    db.set(0, j, db.get(0, j) + delta.get(i, j));
                }
            }
            grads[2 * l + 1] = db;
            if l > 0 {
                let da = delta.matmul(&wl.transpose())?;
                delta = da.zip_map(&zs[l - 1], "relu_back", |d, z| if z > 0.0 { d } else { 0.0 })?;
            }
        }
        Ok((loss, grads))
    }

    /// Fraction of the dataset classified correctly.
    pub fn train_accuracy(&self, w: &[Mat]) -> Result<f64> {
        let data = self
            .dataset
            .as_ref()
            .ok_or_else(|| Error::Config("problem has no dataset".into()))?;
        let layers = w.len() / 2;
        let mut correct = 0usize;
        let size = data.labels.len();
        for i in 0..size {
            let mut act: Vec<f64> = data.features.row(i).to_vec();
            for l in 0..layers {
                let wl = &w[2 * l];
                let bl = &w[2 * l + 1];
                let mut next = vec![0.0; wl.cols()];
                for (j, nx) in next.iter_mut().enumerate() {
                    let mut z = bl.get(0, j);
                    for (p, &a) in act.iter().enumerate() {
                        z += a * wl.get(p, j);
                    }
                    *nx = if l + 1 < layers { z.max(0.0) } else { z };
                }
                act = next;
            }
            let pred = act
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred == data.labels[i] {
                correct += 1;
            }
        }
        Ok(correct as f64 / size as f64)
    }
}

/// Stream tags used by the training loop and tests to key per-worker,
/// per-iteration draws.
pub fn batch_stream(seed: u64, worker: u64, iteration: u64) -> RngStream {
    RngStream::new(seed, derive_stream(BATCH_STREAM ^ worker, worker, iteration))
}

pub fn noise_stream(seed: u64, worker: u64, iteration: u64) -> RngStream {
    RngStream::new(seed, derive_stream(NOISE_STREAM ^ worker, worker, iteration))
}
