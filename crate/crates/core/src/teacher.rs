//! Synthetic XOR-like teachers and their datasets.
//!
//! Each hidden neuron draws raw input weights from `{−1, 0, 1}^fan_in`, an
//! output weight from `{−1, 1}` and a bias from
//! `{−2/3·√3, −1/3·√3, 0, 1/3·√3, 2/3·√3}`. The weight vector is normalised
//! and then both weights and bias are multiplied by 3, so every hyperplane
//! sits at distance `|b_raw|` from the origin with a steep activation on its
//! positive side. Deeper layers see standardised activations of the layer
//! below, folded into their weights and biases. The output is standardised
//! to zero mean and unit variance over a construction batch.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{Layer, NetworkParams};
use crate::seeds::{self, derive_seed, stream};

pub const SQRT_3: f64 = 1.732_050_807_568_877_2;
pub const WEIGHT_SCALE: f64 = 3.0;
pub const MAX_REJECTIONS: usize = 1_000_000;
pub const DEFAULT_SAMPLES: usize = 30_000;

pub fn bias_grid() -> [f64; 5] {
    [
        -2.0 / 3.0 * SQRT_3,
        -1.0 / 3.0 * SQRT_3,
        0.0,
        1.0 / 3.0 * SQRT_3,
        2.0 / 3.0 * SQRT_3,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub d_in: usize,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    /// Inputs are uniform on `[−input_range, input_range]`.
    #[serde(default = "default_range")]
    pub input_range: f64,
    /// Size of the batch used to standardise layer inputs and the output.
    #[serde(default = "default_batch")]
    pub construction_samples: usize,
}

fn default_range() -> f64 {
    SQRT_3
}

fn default_batch() -> usize {
    DEFAULT_SAMPLES
}

impl TeacherSpec {
    pub fn new(d_in: usize, hidden_sizes: Vec<usize>, activation: Activation, seed: u64) -> Self {
        TeacherSpec {
            d_in,
            hidden_sizes,
            activation,
            seed,
            input_range: SQRT_3,
            construction_samples: DEFAULT_SAMPLES,
        }
    }

    pub fn shallow(d_in: usize, r: usize, activation: Activation, seed: u64) -> Self {
        TeacherSpec::new(d_in, vec![r], activation, seed)
    }

    pub fn depth(&self) -> usize {
        self.hidden_sizes.len()
    }

    fn validate(&self) -> Result<()> {
        if self.d_in == 0 {
            return Err(Error::InfeasibleSpec("d_in must be at least 1".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::InfeasibleSpec(format!(
                "hidden sizes {:?} must be non-empty and positive",
                self.hidden_sizes
            )));
        }
        if !(self.input_range > 0.0 && self.input_range.is_finite()) {
            return Err(Error::InfeasibleSpec("input range must be positive".into()));
        }
        if self.construction_samples < 2 {
            return Err(Error::InfeasibleSpec("construction batch needs ≥ 2 samples".into()));
        }
        Ok(())
    }

    /// Per-unit input statistics consumed by each layer during construction.
    fn construction_batch(&self) -> DMatrix<f64> {
        uniform_inputs(
            self.construction_samples,
            self.d_in,
            self.input_range,
            derive_seed(self.seed, stream::TEACHER, 1),
        )
    }
}

/// I.i.d. uniform inputs on `[−range, range]`.
pub fn uniform_inputs(n: usize, d: usize, range: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = seeds::rng(seed);
    // row-major draw order, independent of the matrix storage order
    let mut m = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            m[(i, j)] = rng.gen_range(-range..=range);
        }
    }
    m
}

struct RawNeuron {
    w: Vec<i8>,
    b: usize,
    a: f64,
}

fn same_hyperplane(p: &RawNeuron, q: &RawNeuron, sign_symmetric: bool) -> bool {
    let grid_len = bias_grid().len();
    if p.w == q.w && p.b == q.b {
        return true;
    }
    // (−w, −b) cancels too when the activation has a sign symmetry
    sign_symmetric && p.w.iter().zip(&q.w).all(|(x, y)| *x == -*y) && p.b == grid_len - 1 - q.b
}

/// Draw one layer of raw neurons, resampling every neuron that is all-zero
/// or duplicates an earlier one.
fn sample_raw_layer<R: Rng>(
    rng: &mut R,
    fan_in: usize,
    fan_out: usize,
    sign_symmetric: bool,
    budget: &mut usize,
) -> Result<Vec<RawNeuron>> {
    let mut out: Vec<RawNeuron> = Vec::with_capacity(fan_out);
    while out.len() < fan_out {
        if *budget == 0 {
            return Err(Error::InfeasibleSpec(format!(
                "could not place {fan_out} distinct neurons on {fan_in} inputs within {MAX_REJECTIONS} draws"
            )));
        }
        *budget -= 1;
        let cand = RawNeuron {
            w: (0..fan_in).map(|_| rng.gen_range(-1i8..=1)).collect(),
            b: rng.gen_range(0..bias_grid().len()),
            a: if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
        };
        if cand.w.iter().all(|&v| v == 0) {
            continue;
        }
        if out.iter().any(|p| same_hyperplane(p, &cand, sign_symmetric)) {
            continue;
        }
        out.push(cand);
    }
    Ok(out)
}

/// Scaled input weights (`3·w/‖w‖`) and biases (`3·b`) of a raw layer.
fn scaled_layer(raw: &[RawNeuron], fan_in: usize) -> Layer {
    let grid = bias_grid();
    let mut weights = DMatrix::zeros(raw.len(), fan_in);
    let mut bias = DVector::zeros(raw.len());
    for (i, n) in raw.iter().enumerate() {
        let norm = (n.w.iter().map(|&v| (v as f64).powi(2)).sum::<f64>()).sqrt();
        for (j, &v) in n.w.iter().enumerate() {
            weights[(i, j)] = WEIGHT_SCALE * v as f64 / norm;
        }
        bias[i] = WEIGHT_SCALE * grid[n.b];
    }
    Layer { weights, bias }
}

/// Mean and (population) standard deviation of each column.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn unit_stats(h: &DMatrix<f64>) -> UnitStats {
    let n = h.nrows() as f64;
    let mut mean = Vec::with_capacity(h.ncols());
    let mut std = Vec::with_capacity(h.ncols());
    for c in h.column_iter() {
        let m = c.sum() / n;
        mean.push(m);
        std.push((c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt());
    }
    UnitStats { mean, std }
}

/// Rescale the linear output layer so outputs over `x` have zero mean and
/// unit standard deviation.
pub fn standardize_output(params: &NetworkParams, x: &DMatrix<f64>) -> Result<NetworkParams> {
    let y = params.predict(x)?;
    let stats = unit_stats(&y);
    let mut out = params.clone();
    let last = out.layers.last_mut().expect("at least one layer");
    for k in 0..y.ncols() {
        let (mean, std) = (stats.mean[k], stats.std[k]);
        if !(std >= 1e-12) {
            return Err(Error::DegenerateTeacher(std));
        }
        for j in 0..last.fan_in() {
            last.weights[(k, j)] /= std;
        }
        last.bias[k] = (last.bias[k] - mean) / std;
    }
    Ok(out)
}

/// One-hidden-layer teacher.
pub fn sample_shallow_teacher(spec: &TeacherSpec) -> Result<NetworkParams> {
    spec.validate()?;
    if spec.depth() != 1 {
        return Err(Error::Argument(format!(
            "shallow teacher needs exactly one hidden layer, got {:?}",
            spec.hidden_sizes
        )));
    }
    Ok(sample_teacher_with_stats(spec)?.0)
}

/// Teacher of any depth; depth 1 gives the same network as
/// [`sample_shallow_teacher`].
pub fn sample_deep_teacher(spec: &TeacherSpec) -> Result<NetworkParams> {
    spec.validate()?;
    Ok(sample_teacher_with_stats(spec)?.0)
}

pub fn sample_teacher(spec: &TeacherSpec) -> Result<NetworkParams> {
    sample_deep_teacher(spec)
}

/// Teacher together with the construction-batch statistics of every hidden
/// layer's activations (the quantities folded into the next layer).
pub fn sample_teacher_with_stats(spec: &TeacherSpec) -> Result<(NetworkParams, Vec<UnitStats>)> {
    spec.validate()?;
    let mut rng = seeds::rng(derive_seed(spec.seed, stream::TEACHER, 0));
    let sign_symmetric = spec.activation.symmetry().has_sign_symmetry();
    let x = spec.construction_batch();
    let mut budget = MAX_REJECTIONS;

    let mut layers: Vec<Layer> = Vec::with_capacity(spec.depth() + 1);
    let mut stats = Vec::with_capacity(spec.depth());
    let mut h = x.clone();
    let mut fan_in = spec.d_in;
    let mut last_raw = Vec::new();
    for (l, &width) in spec.hidden_sizes.iter().enumerate() {
        let raw = sample_raw_layer(&mut rng, fan_in, width, sign_symmetric, &mut budget)?;
        let mut layer = scaled_layer(&raw, fan_in);
        if l > 0 {
            // fold ĥ = (h − μ)/s into the consuming layer
            let s: &UnitStats = stats.last().expect("previous layer stats");
            for i in 0..layer.fan_out() {
                let mut shift = 0.0;
                for j in 0..fan_in {
                    let w = layer.weights[(i, j)] / s.std[j];
                    shift += w * s.mean[j];
                    layer.weights[(i, j)] = w;
                }
                layer.bias[i] -= shift;
            }
        }
        let act = spec.activation;
        h = layer.affine(&h).map(|v| act.eval(v));
        let st = unit_stats(&h);
        if let Some(&bad) = st.std.iter().find(|&&s| !(s >= 1e-12)) {
            return Err(Error::DegenerateTeacher(bad));
        }
        stats.push(st);
        layers.push(layer);
        fan_in = width;
        last_raw = raw;
    }
    let out_w = DMatrix::from_iterator(1, fan_in, last_raw.iter().map(|n| n.a));
    layers.push(Layer {
        weights: out_w,
        bias: DVector::zeros(1),
    });
    let net = NetworkParams::new(layers, spec.activation)?
        .with_seed(spec.seed)
        .with_provenance(format!(
            "teacher d_in={} hidden={:?} act={}",
            spec.d_in, spec.hidden_sizes, spec.activation
        ));
    let net = standardize_output(&net, &x)?;
    Ok((net, stats))
}

/// Inputs uniform on `[−√3, √3]` labelled by `teacher`.
pub fn gen_dataset(teacher: &NetworkParams, n: usize, seed: u64) -> Result<Dataset> {
    gen_dataset_with_range(teacher, n, seed, SQRT_3)
}

pub fn gen_dataset_with_range(teacher: &NetworkParams, n: usize, seed: u64, range: f64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Argument("dataset needs n ≥ 1".into()));
    }
    let x = uniform_inputs(n, teacher.d_in(), range, derive_seed(seed, stream::DATA, 0));
    Dataset::from_teacher(teacher, x, seed)
}
