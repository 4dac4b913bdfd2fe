//! Dense feed-forward networks with a linear read-out.
//!
//! Samples are rows: an input batch is an `n × d_in` matrix and every layer
//! maps an `n × fan_in` batch to `n × fan_out` via `Z = H·Wᵀ + 1·bᵀ`. Hidden
//! layers apply the network's activation; the last layer does not.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// One dense layer: `weights` is `fan_out × fan_in`, `bias` has `fan_out` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "layer has {} weight rows but {} biases",
                weights.nrows(),
                bias.len()
            )));
        }
        Ok(Layer { weights, bias })
    }

    pub fn zeros(fan_out: usize, fan_in: usize) -> Self {
        Layer {
            weights: DMatrix::zeros(fan_out, fan_in),
            bias: DVector::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// `input · Wᵀ + 1·bᵀ`.
    pub fn affine(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = input * self.weights.transpose();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.bias[j]);
        }
        z
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Parameters of a feed-forward network. The universal carrier for teachers,
/// students and reconstructions.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub seed: u64,
    pub provenance: String,
}

/// Pre-activations of every layer plus post-activations of hidden layers.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pre: Vec<DMatrix<f64>>,
    pub post: Vec<DMatrix<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &DMatrix<f64> {
        self.pre.last().expect("a network has at least one layer")
    }

    /// The input seen by layer `l` (`l ≥ 1`); layer 0 reads the data itself.
    pub fn layer_input(&self, l: usize) -> &DMatrix<f64> {
        &self.post[l - 1]
    }
}

/// Gradient with the same shapes as [`NetworkParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.norm_squared() + l.bias.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layers.iter().map(Layer::param_count).sum());
        for layer in &self.layers {
            push_layer(&mut out, layer);
        }
        out
    }
}

fn push_layer(out: &mut Vec<f64>, layer: &Layer) {
    for i in 0..layer.fan_out() {
        for j in 0..layer.fan_in() {
            out.push(layer.weights[(i, j)]);
        }
    }
    out.extend(layer.bias.iter());
}

impl NetworkParams {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        let net = NetworkParams {
            layers,
            activation,
            seed: 0,
            provenance: String::new(),
        };
        net.validate()?;
        Ok(net)
    }

    /// Zero-initialised network with the given widths `[d_in, h1, …, d_out]`.
    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Argument(format!("invalid layer widths {dims:?}")));
        }
        let layers = dims.windows(2).map(|w| Layer::zeros(w[1], w[0])).collect();
        NetworkParams::new(layers, activation)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.weights.nrows() != layer.bias.len() {
                return Err(Error::Shape(format!(
                    "layer {l}: {} weight rows vs {} biases",
                    layer.weights.nrows(),
                    layer.bias.len()
                )));
            }
            if layer.fan_in() == 0 || layer.fan_out() == 0 {
                return Err(Error::Shape(format!("layer {l} has an empty dimension")));
            }
            if !layer.is_finite() {
                return Err(Error::Numeric {
                    layer: l,
                    what: "parameter".into(),
                });
            }
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[1].fan_in() != pair[0].fan_out() {
                return Err(Error::Shape(format!(
                    "layer {} expects {} inputs but layer {l} produces {}",
                    l + 1,
                    pair[1].fan_in(),
                    pair[0].fan_out()
                )));
            }
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map(Layer::fan_out).unwrap_or(0)
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.depth()].iter().map(Layer::fan_out).collect()
    }

    /// `[d_in, h1, …, d_out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.d_in()];
        dims.extend(self.layers.iter().map(Layer::fan_out));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Parameters flattened layer by layer: weights row-major, then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            push_layer(&mut out, layer);
        }
        out
    }

    /// Inverse of [`NetworkParams::to_flat`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, network has {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut k = 0;
        for layer in &mut self.layers {
            for i in 0..layer.weights.nrows() {
                for j in 0..layer.weights.ncols() {
                    layer.weights[(i, j)] = flat[k];
                    k += 1;
                }
            }
            for b in layer.bias.iter_mut() {
                *b = flat[k];
                k += 1;
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.d_in() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.d_in()
            )));
        }
        Ok(())
    }

    /// Forward pass keeping every layer's pre- and post-activations.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(last);
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &post[l - 1] };
            let z = layer.affine(input);
            if l < last {
                let act = self.activation;
                post.push(z.map(|v| act.eval(v)));
            }
            pre.push(z);
        }
        Ok(ForwardTrace { pre, post })
    }

    /// Network outputs, `n × d_out`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h: Option<DMatrix<f64>> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(h.as_ref().unwrap_or(x));
            if l < last {
                let act = self.activation;
                z.apply(|v| *v = act.eval(*v));
            }
            h = Some(z);
        }
        Ok(h.expect("at least one layer"))
    }

    /// Activations of hidden layer `l` (0-based) over `x`.
    pub fn hidden_activations(&self, x: &DMatrix<f64>, l: usize) -> Result<DMatrix<f64>> {
        if l >= self.depth() {
            return Err(Error::Argument(format!("network has no hidden layer {l}")));
        }
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers[..=l] {
            let act = self.activation;
            h = layer.affine(&h).map(|v| act.eval(v));
        }
        Ok(h)
    }

    pub fn mse(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
        let out = self.predict(x)?;
        check_targets(&out, y)?;
        Ok((out - y).norm_squared() / y.len() as f64)
    }

    /// Mean squared error together with its exact reverse-mode gradient.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(f64, Gradient)> {
        self.check_input(x)?;
        if x.nrows() == 0 {
            return Err(Error::Argument("empty batch".into()));
        }
        let last = self.layers.len() - 1;
        let act = self.activation;
        let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(last);
        let mut slopes: Vec<DMatrix<f64>> = Vec::with_capacity(last);
        let mut out = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &post[l - 1] };
            let mut z = layer.affine(input);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: l,
                    what: "pre-activation".into(),
                });
            }
            if l < last {
                let mut d = DMatrix::zeros(z.nrows(), z.ncols());
                for (zv, dv) in z.iter_mut().zip(d.iter_mut()) {
                    let (f, fp) = act.eval_with_deriv(*zv);
                    *zv = f;
                    *dv = fp;
                }
                post.push(z);
                slopes.push(d);
            } else {
                out = Some(z);
            }
        }
        let mut delta = out.expect("at least one layer");
        check_targets(&delta, y)?;
        delta -= y;
        let loss = delta.norm_squared() / y.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric {
                layer: last,
                what: "loss".into(),
            });
        }
        delta *= 2.0 / y.len() as f64;

        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = if l == 0 { x } else { &post[l - 1] };
            let gw = delta.tr_mul(input);
            let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            grads.push(Layer { weights: gw, bias: gb });
            if l > 0 {
                let mut next = &delta * &self.layers[l].weights;
                next.component_mul_assign(&slopes[l - 1]);
                delta = next;
            }
        }
        grads.reverse();
        Ok((loss, Gradient { layers: grads }))
    }
}

impl NetworkParams {
    /// Outputs (`n × d_out`) and the Jacobian of the stacked outputs with
    /// respect to the flat parameters: row `i + o·n` holds `∂f_o(x_i)/∂θ`,
    /// columns follow [`NetworkParams::to_flat`].
    pub fn output_jacobian(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mut jac = DMatrix::zeros(0, 0);
        let out = self.output_jacobian_into(x, None, &mut jac)?;
        Ok((out, jac))
    }

    /// [`NetworkParams::output_jacobian`] restricted to the flat parameter
    /// indices `columns` (all when `None`), written into a reusable buffer.
    pub fn output_jacobian_into(
        &self,
        x: &DMatrix<f64>,
        columns: Option<&[usize]>,
        jac: &mut DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let n = x.nrows();
        let last = self.layers.len() - 1;
        let act = self.activation;
        let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(last);
        let mut slopes: Vec<DMatrix<f64>> = Vec::with_capacity(last);
        let mut out = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &post[l - 1] };
            let mut z = layer.affine(input);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: l,
                    what: "pre-activation".into(),
                });
            }
            if l < last {
                let mut d = DMatrix::zeros(z.nrows(), z.ncols());
                for (zv, dv) in z.iter_mut().zip(d.iter_mut()) {
                    let (f, fp) = act.eval_with_deriv(*zv);
                    *zv = f;
                    *dv = fp;
                }
                post.push(z);
                slopes.push(d);
            } else {
                out = Some(z);
            }
        }
        let out = out.expect("at least one layer");
        let d_out = self.d_out();
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.param_count();
        }
        let mut target_col: Vec<Option<usize>> = match columns {
            None => (0..off).map(Some).collect(),
            Some(_) => vec![None; off],
        };
        if let Some(cols) = columns {
            for (c, &flat) in cols.iter().enumerate() {
                if flat >= off {
                    return Err(Error::Argument(format!("parameter index {flat} out of range")));
                }
                target_col[flat] = Some(c);
            }
        }
        let width = columns.map_or(off, |c| c.len());
        if jac.shape() != (n * d_out, width) {
            *jac = DMatrix::zeros(n * d_out, width);
        } else if d_out > 1 {
            // rows of other outputs are structurally zero for the last layer
            jac.fill(0.0);
        }
        for o in 0..d_out {
            let rows = o * n..(o + 1) * n;
            // δ of the output layer is the indicator of output o
            let mut delta = DMatrix::zeros(n, d_out);
            delta.column_mut(o).fill(1.0);
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let input = if l == 0 { x } else { &post[l - 1] };
                let (fo, fi) = (layer.fan_out(), layer.fan_in());
                let total = jac.nrows();
                let js = jac.as_mut_slice();
                for k in 0..fo {
                    if l == last && k != o {
                        continue;
                    }
                    let dk = &delta.as_slice()[k * n..(k + 1) * n];
                    for j in 0..fi {
                        let Some(col) = target_col[offsets[l] + k * fi + j] else {
                            continue;
                        };
                        let hj = &input.as_slice()[j * n..(j + 1) * n];
                        let start = col * total + rows.start;
                        for ((t, d), h) in js[start..start + n].iter_mut().zip(dk).zip(hj) {
                            *t = d * h;
                        }
                    }
                    if let Some(col) = target_col[offsets[l] + fo * fi + k] {
                        let start = col * total + rows.start;
                        js[start..start + n].copy_from_slice(dk);
                    }
                }
                if l > 0 {
                    let mut next = &delta * &layer.weights;
                    next.component_mul_assign(&slopes[l - 1]);
                    delta = next;
                }
            }
        }
        Ok(out)
    }
}

fn check_targets(out: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if out.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "outputs are {:?} but targets are {:?}",
            out.shape(),
            y.shape()
        )));
    }
    Ok(())
}

/// Mean over samples and output dimensions of the squared error.
pub fn mse_loss(params: &NetworkParams, data: &Dataset) -> Result<f64> {
    params.mse(&data.x, &data.y)
}

pub fn gradient(params: &NetworkParams, data: &Dataset) -> Result<Gradient> {
    Ok(params.loss_and_gradient(&data.x, &data.y)?.1)
}

pub fn rmse(params: &NetworkParams, data: &Dataset) -> Result<f64> {
    Ok(mse_loss(params, data)?.sqrt())
}

// ---------------------------------------------------------------------------
// JSON file format

#[derive(Serialize, Deserialize)]
struct LayerFile {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    activation: Activation,
    layers: Vec<LayerFile>,
    #[serde(default)]
    seed: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    provenance: String,
}

impl NetworkParams {
    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            activation: self.activation,
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    w: l.weights.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    b: l.bias.iter().copied().collect(),
                })
                .collect(),
            seed: self.seed,
            provenance: self.provenance.clone(),
        };
        serde_json::to_string_pretty(&file).expect("network serialises")
    }

    /// Parse and validate a network JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text)?;
        let mut layers = Vec::with_capacity(file.layers.len());
        for (l, lf) in file.layers.into_iter().enumerate() {
            let rows = lf.w.len();
            let cols = lf.w.first().map(Vec::len).unwrap_or(0);
            if lf.w.iter().any(|r| r.len() != cols) {
                return Err(Error::Format(format!("layer {l}: ragged weight matrix")));
            }
            let weights = DMatrix::from_row_iterator(rows, cols, lf.w.into_iter().flatten());
            layers.push(Layer::new(weights, DVector::from_vec(lf.b))?);
        }
        let net = NetworkParams {
            layers,
            activation: file.activation,
            seed: file.seed,
            provenance: file.provenance,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        NetworkParams::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}
