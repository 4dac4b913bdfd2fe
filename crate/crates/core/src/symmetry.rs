//! Symmetries of hidden neurons: canonical forms, the catalogue of neuron
//! types found near zero loss, and exact reduction of a shallow student to a
//! minimal network plus an affine residual `Θx + β`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::{Activation, SymmetryClass};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{Layer, NetworkParams};

/// One hidden neuron seen from outside: input weights, bias and outgoing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronView {
    pub w: DVector<f64>,
    pub b: f64,
    pub a: DVector<f64>,
    pub layer: usize,
    pub student: usize,
    pub index: usize,
    /// `(min, max)` of `w·x + b` over the inputs reaching this layer.
    pub preact_range: (f64, f64),
}

/// Views of every neuron of hidden layer `l`, given the inputs `x_in` that reach it.
pub fn neuron_views(net: &NetworkParams, l: usize, x_in: &DMatrix<f64>, student: usize) -> Result<Vec<NeuronView>> {
    if l >= net.depth() {
        return Err(Error::Argument(format!("network has no hidden layer {l}")));
    }
    let layer = &net.layers[l];
    if x_in.ncols() != layer.fan_in() {
        return Err(Error::Shape(format!(
            "layer {l} expects {} inputs, got {}",
            layer.fan_in(),
            x_in.ncols()
        )));
    }
    let z = layer.affine(x_in);
    let next = &net.layers[l + 1];
    Ok((0..layer.fan_out())
        .map(|k| {
            let col = z.column(k);
            NeuronView {
                w: layer.weights.row(k).transpose(),
                b: layer.bias[k],
                a: next.weights.column(k).into_owned(),
                layer: l,
                student,
                index: k,
                preact_range: (col.min(), col.max()),
            }
        })
        .collect())
}

/// Inputs reaching hidden layer `l`.
pub fn layer_input(net: &NetworkParams, x: &DMatrix<f64>, l: usize) -> Result<DMatrix<f64>> {
    if l == 0 {
        Ok(x.clone())
    } else {
        net.hidden_activations(x, l - 1)
    }
}

/// Relative margin under which two magnitudes count as tied for the pivot.
const PIVOT_TIE: f64 = 1e-3;

/// Index of the first coordinate whose magnitude is within [`PIVOT_TIE`] of
/// the largest; `None` for a zero vector. The margin keeps the pivot, and so
/// the canonical sign, stable when small noise perturbs exactly tied
/// magnitudes.
pub fn pivot(w: &[f64]) -> Option<usize> {
    let m = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(m > 0.0) {
        return None;
    }
    w.iter().position(|v| v.abs() >= m * (1.0 - PIVOT_TIE))
}

/// Canonical `(w, b)` of a neuron and the sign and scale that produced it:
/// `canonical = sign · (w, b) / scale`.
///
/// The sign makes the pivot coordinate positive when the class has a sign
/// symmetry; the scale is `‖w‖` for positively homogeneous activations and 1
/// otherwise. A zero weight vector is returned unchanged.
pub fn canonical_form(w: &[f64], b: f64, class: SymmetryClass) -> (Vec<f64>, f64, f64, f64) {
    let sign = match (class.has_sign_symmetry(), pivot(w)) {
        (true, Some(p)) if w[p] < 0.0 => -1.0,
        _ => 1.0,
    };
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = if class.has_positive_scaling() && norm > 0.0 {
        norm
    } else {
        1.0
    };
    let cw = w.iter().map(|v| sign * v / scale).collect();
    (cw, sign * b / scale, sign, scale)
}

/// Linear correction `Θx + β` from the input of a layer to the pre-activation
/// of the layer after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineAccumulator {
    pub theta: DMatrix<f64>,
    pub beta: DVector<f64>,
    /// Number of sign flips absorbed.
    pub flips: usize,
}

impl AffineAccumulator {
    pub fn zeros(d_out: usize, d_in: usize) -> Self {
        AffineAccumulator {
            theta: DMatrix::zeros(d_out, d_in),
            beta: DVector::zeros(d_out),
            flips: 0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.theta.iter().chain(self.beta.iter()).all(|&v| v == 0.0)
    }

    /// `a ⊗ w · coef` into Θ, `a · b · coef` into β.
    pub fn add_neuron(&mut self, a: &DVector<f64>, w: &DVector<f64>, b: f64, coef: f64) {
        self.theta += a * w.transpose() * coef;
        self.beta += a * (b * coef);
    }

    /// Rows of `x` mapped through `Θx + β`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * self.theta.transpose();
        for mut row in out.row_iter_mut() {
            row += self.beta.transpose();
        }
        out
    }

    /// Singular values above `threshold`.
    pub fn rank(&self, threshold: f64) -> usize {
        if self.theta.is_empty() {
            return 0;
        }
        self.theta
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .filter(|&&s| s > threshold)
            .count()
    }
}

/// Affine term produced by flipping the even+linear neurons `(a, w, b)`:
/// `a·σ(−(w·x+b)) = a·σ(w·x+b) + Θx + β` with `Θ = −2c1·Σ a⊗w`, `β = −2c1·Σ a·b`.
pub fn affine_of_flips(flipped: &[(DVector<f64>, DVector<f64>, f64)], c1: f64) -> Result<AffineAccumulator> {
    let Some((a0, w0, _)) = flipped.first() else {
        return Ok(AffineAccumulator::zeros(0, 0));
    };
    let mut acc = AffineAccumulator::zeros(a0.len(), w0.len());
    for (a, w, b) in flipped {
        if a.len() != a0.len() || w.len() != w0.len() {
            return Err(Error::Shape("flipped neurons must share fan-in and fan-out".into()));
        }
        acc.add_neuron(a, w, *b, -2.0 * c1);
        acc.flips += 1;
    }
    Ok(acc)
}

/// Per-neuron record of a canonicalisation, enough to restore the original
/// function.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonRecord {
    pub layer: usize,
    pub signs: Vec<f64>,
    pub scales: Vec<f64>,
    /// Neurons with a zero weight vector, left untouched (constant-type hint).
    pub skipped: Vec<usize>,
    /// Linear term from flipping even+linear neurons, from the layer input to
    /// the next layer's pre-activation.
    pub skip: AffineAccumulator,
}

/// Bring every neuron of hidden layer `l` to canonical form, compensating in
/// the next layer where the network can represent it. Odd activations flip
/// the outgoing weights (and shift the next bias by `2c0·a`) and positive
/// scaling is moved into the outgoing weights. Even+linear flips leave a
/// linear term that is kept in the record; see [`CanonRecord::replay`].
pub fn canonicalize_layer(net: &NetworkParams, l: usize) -> Result<(NetworkParams, CanonRecord)> {
    if l >= net.depth() {
        return Err(Error::Argument(format!("network has no hidden layer {l}")));
    }
    let act = net.activation;
    let class = act.symmetry();
    let mut out = net.clone();
    let fan_in = net.layers[l].fan_in();
    let fan_out_next = net.layers[l + 1].fan_out();
    let mut rec = CanonRecord {
        layer: l,
        signs: vec![1.0; net.layers[l].fan_out()],
        scales: vec![1.0; net.layers[l].fan_out()],
        skipped: Vec::new(),
        skip: AffineAccumulator::zeros(fan_out_next, fan_in),
    };
    let c0 = act.c0();
    let c1 = act.c1();
    for k in 0..net.layers[l].fan_out() {
        let w: Vec<f64> = net.layers[l].weights.row(k).iter().copied().collect();
        let b = net.layers[l].bias[k];
        if pivot(&w).is_none() {
            rec.skipped.push(k);
            continue;
        }
        let (cw, cb, sign, scale) = canonical_form(&w, b, class);
        rec.signs[k] = sign;
        rec.scales[k] = scale;
        let a = net.layers[l + 1].weights.column(k).into_owned();
        for (j, v) in cw.iter().enumerate() {
            out.layers[l].weights[(k, j)] = *v;
        }
        out.layers[l].bias[k] = cb;
        let mut new_a = &a * scale;
        if sign < 0.0 {
            if class.is_odd() {
                // a·σ(u) = −a·σ(−u) + 2c0·a
                out.layers[l + 1].bias += &a * (2.0 * c0);
                new_a = -new_a;
            } else if class.is_even_linear() {
                // a·σ(u) = a·σ(−u) + 2c1·a·u, with u the original pre-activation
                let wv = DVector::from_vec(w.clone());
                rec.skip.add_neuron(&a, &wv, b, 2.0 * c1);
                rec.skip.flips += 1;
            }
        }
        out.layers[l + 1].weights.set_column(k, &new_a);
    }
    Ok((out, rec))
}

impl CanonRecord {
    /// Outputs of the canonicalised network with the recorded linear term
    /// added back; equals the original network's outputs.
    pub fn replay(&self, canon: &NetworkParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let l = self.layer;
        let h_in = layer_input(canon, x, l)?;
        let act = canon.activation;
        let h = canon.layers[l].affine(&h_in).map(|v| act.eval(v));
        let mut z = canon.layers[l + 1].affine(&h) + self.skip.apply(&h_in);
        for layer in &canon.layers[l + 2..] {
            z.apply(|v| *v = act.eval(*v));
            z = layer.affine(&z);
        }
        Ok(z)
    }
}

/// Catalogue of neuron types near zero loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "group", rename_all = "snake_case")]
pub enum NeuronLabel {
    Duplicate(usize),
    ZeroType(usize),
    ConstantType,
    LinearType(usize),
    LinearDuplicate(usize),
    Offbound,
}

impl NeuronLabel {
    pub fn group(self) -> Option<usize> {
        match self {
            NeuronLabel::Duplicate(g)
            | NeuronLabel::ZeroType(g)
            | NeuronLabel::LinearType(g)
            | NeuronLabel::LinearDuplicate(g) => Some(g),
            NeuronLabel::ConstantType | NeuronLabel::Offbound => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NeuronLabel::Duplicate(_) => "duplicate",
            NeuronLabel::ZeroType(_) => "zero",
            NeuronLabel::ConstantType => "constant",
            NeuronLabel::LinearType(_) => "linear",
            NeuronLabel::LinearDuplicate(_) => "linear_duplicate",
            NeuronLabel::Offbound => "offbound",
        }
    }
}

/// Tolerances for classification and reduction. Relative entries are scaled
/// as documented per field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Alignment of canonical `(w, b)`, times `‖w‖` (unit-norm for relu-like).
    pub align_rel: f64,
    /// Zero output contribution, times the median outgoing-weight norm.
    pub zero_rel: f64,
    /// Absolute `‖w‖` below which a neuron is constant-type.
    pub w_abs: f64,
    /// Offbound margin, times the pre-activation spread.
    pub margin_rel: f64,
    /// Functional equivalence, times `std(Y)`.
    pub equiv_rel: f64,
    /// Absolute equivalence tolerance overriding `equiv_rel`.
    pub equiv_abs: Option<f64>,
    /// Largest layer width for which the flip stage searches exhaustively.
    pub exhaustive_flips: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            align_rel: 1e-4,
            zero_rel: 1e-6,
            w_abs: 1e-6,
            margin_rel: 0.05,
            equiv_rel: 1e-8,
            equiv_abs: None,
            exhaustive_flips: 16,
        }
    }
}

impl Tolerances {
    pub fn equiv(&self, data: &Dataset) -> f64 {
        self.equiv_abs
            .unwrap_or_else(|| self.equiv_rel * data.target_variance().sqrt())
    }
}

/// Canonical vector used for alignment tests: `(w, b)` for most classes,
/// `(w/‖w‖, b/‖w‖)` for positively homogeneous ones.
struct Canon {
    v: Vec<f64>,
    sign: f64,
    scale: f64,
    norm: f64,
}

fn canon(w: &DVector<f64>, b: f64, class: SymmetryClass) -> Canon {
    let (mut v, cb, sign, scale) = canonical_form(w.as_slice(), b, class);
    v.push(cb);
    Canon {
        v,
        sign,
        scale,
        norm: w.norm(),
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Union-find grouping of indices whose canonical vectors are within tolerance.
fn align_groups(items: &[(usize, Canon)], class: SymmetryClass, tol: &Tolerances) -> Vec<Vec<usize>> {
    let n = items.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let (ci, cj) = (&items[i].1, &items[j].1);
            let scale = if class.has_positive_scaling() {
                1.0
            } else {
                ci.norm.max(cj.norm)
            };
            if dist(&ci.v, &cj.v) <= tol.align_rel * scale {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn is_offbound(range: (f64, f64), tol: &Tolerances) -> bool {
    let margin = tol.margin_rel * (range.1 - range.0);
    range.0 - margin > 0.0 || range.1 + margin < 0.0
}

/// Label every neuron of hidden layer `l`.
pub fn classify_layer(net: &NetworkParams, l: usize, data: &Dataset, tol: &Tolerances) -> Result<Vec<NeuronLabel>> {
    let x_in = layer_input(net, &data.x, l)?;
    let views = neuron_views(net, l, &x_in, 0)?;
    Ok(label_views(&views, net.activation, tol))
}

/// Labels for every hidden layer, indexed `[layer][neuron]`.
pub fn classify_neurons(net: &NetworkParams, data: &Dataset, tol: &Tolerances) -> Result<Vec<Vec<NeuronLabel>>> {
    (0..net.depth()).map(|l| classify_layer(net, l, data, tol)).collect()
}

fn label_views(views: &[NeuronView], act: Activation, tol: &Tolerances) -> Vec<NeuronLabel> {
    let class = act.symmetry();
    let mut labels = vec![NeuronLabel::Duplicate(usize::MAX); views.len()];
    let a_med = median(views.iter().map(|v| v.a.norm()).collect());
    let tol_zero = tol.zero_rel * a_med.max(f64::MIN_POSITIVE);
    let mut rest = Vec::new();
    for (k, v) in views.iter().enumerate() {
        if v.w.norm() <= tol.w_abs {
            labels[k] = NeuronLabel::ConstantType;
        } else if is_offbound(v.preact_range, tol) {
            labels[k] = NeuronLabel::Offbound;
        } else {
            rest.push((k, canon(&v.w, v.b, class)));
        }
    }
    for (g, members) in align_groups(&rest, class, tol).into_iter().enumerate() {
        let d_out = views[0].a.len();
        let mut total = DVector::zeros(d_out);
        let mut flipped = DVector::zeros(d_out);
        let mut both = (false, false);
        for &m in &members {
            let (k, c) = (&rest[m].0, &rest[m].1);
            let a = &views[*k].a * c.scale;
            if c.sign > 0.0 {
                both.0 = true;
            } else {
                both.1 = true;
            }
            if class.is_odd() {
                total += &a * c.sign;
            } else {
                total += &a;
                if c.sign < 0.0 {
                    flipped += &a;
                }
            }
        }
        let mixed = both.0 && both.1;
        let label = if class.is_even_linear() {
            // Σ a cancels the even part; the flipped members leave a linear term
            match (total.norm() <= tol_zero, flipped.norm() <= tol_zero) {
                (true, true) => NeuronLabel::ZeroType(g),
                (true, false) => NeuronLabel::LinearType(g),
                (false, _) if mixed => NeuronLabel::LinearDuplicate(g),
                _ => NeuronLabel::Duplicate(g),
            }
        } else if total.norm() <= tol_zero {
            NeuronLabel::ZeroType(g)
        } else {
            NeuronLabel::Duplicate(g)
        };
        for &m in &members {
            labels[rest[m].0] = label;
        }
    }
    labels
}

/// Deviation of one reduction stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub neurons: usize,
    pub max_deviation: f64,
}

/// A minimal network with `f_student(x) = f_network(x) + Θx + β`.
#[derive(Debug, Clone)]
pub struct ReducedStudent {
    pub network: NetworkParams,
    pub residual: AffineAccumulator,
    pub stages: Vec<StageReport>,
}

impl ReducedStudent {
    /// The reduced network with `β` moved into its output bias.
    pub fn fold_bias(&self) -> NetworkParams {
        let mut net = self.network.clone();
        let last = net.layers.len() - 1;
        net.layers[last].bias += &self.residual.beta;
        net
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.network.predict(x)? + self.residual.apply(x))
    }
}

/// Working set of a shallow reduction: neurons `(w, b, a)` plus the output
/// bias and the accumulated affine residual.
struct Work {
    act: Activation,
    w: Vec<DVector<f64>>,
    b: Vec<f64>,
    a: Vec<DVector<f64>>,
    out_bias: DVector<f64>,
    acc: AffineAccumulator,
}

impl Work {
    fn from_net(net: &NetworkParams) -> Self {
        let (hid, out) = (&net.layers[0], &net.layers[1]);
        Work {
            act: net.activation,
            w: (0..hid.fan_out()).map(|k| hid.weights.row(k).transpose()).collect(),
            b: hid.bias.iter().copied().collect(),
            a: (0..hid.fan_out()).map(|k| out.weights.column(k).into_owned()).collect(),
            out_bias: out.bias.clone(),
            acc: AffineAccumulator::zeros(out.fan_out(), hid.fan_in()),
        }
    }

    fn len(&self) -> usize {
        self.w.len()
    }

    fn network(&self, template: &NetworkParams) -> NetworkParams {
        let d_in = template.d_in();
        let d_out = template.d_out();
        let m = self.len();
        let hid = Layer {
            weights: DMatrix::from_fn(m, d_in, |k, j| self.w[k][j]),
            bias: DVector::from_vec(self.b.clone()),
        };
        let out = Layer {
            weights: DMatrix::from_fn(d_out, m, |i, k| self.a[k][i]),
            bias: self.out_bias.clone(),
        };
        NetworkParams {
            layers: vec![hid, out],
            activation: self.act,
            seed: template.seed,
            provenance: template.provenance.clone(),
        }
    }

    fn keep(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.w.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.b.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.a.retain(|_| *it.next().unwrap());
    }

    fn preact_range(&self, k: usize, x: &DMatrix<f64>) -> (f64, f64) {
        let z = x * &self.w[k];
        (z.min() + self.b[k], z.max() + self.b[k])
    }
}

/// Reduce a near-zero-loss shallow student to a minimal network, keeping
/// functional equivalence on the dataset after every stage:
///
/// 1. merge same-orientation duplicates, summing output weights;
/// 2. delete zero-type neurons, absorbing constant-type ones into `β`;
/// 3. delete offbound neurons, absorbing their asymptote into `Θ, β`;
/// 4. merge opposite-orientation duplicates, the remainder going to `Θ, β`;
/// 5. flip the subset of even+linear neurons that minimises `‖Θ‖`.
pub fn reduce_student(student: &NetworkParams, data: &Dataset, tol: &Tolerances) -> Result<ReducedStudent> {
    if student.depth() != 1 {
        return Err(Error::Argument("reduce_student works on shallow students".into()));
    }
    let reference = student.predict(&data.x)?;
    let tol_equiv = tol.equiv(data);
    let class = student.activation.symmetry();
    let act = student.activation;
    let a_med = median(
        (0..student.layers[0].fan_out())
            .map(|k| student.layers[1].weights.column(k).norm())
            .collect(),
    );
    let tol_zero = tol.zero_rel * a_med.max(f64::MIN_POSITIVE);
    let mut work = Work::from_net(student);
    let mut stages = Vec::new();

    let check = |work: &Work, stage: &'static str, stages: &mut Vec<StageReport>| -> Result<()> {
        let net = work.network(student);
        let out = net.predict(&data.x)? + work.acc.apply(&data.x);
        let dev = (out - &reference).amax();
        stages.push(StageReport {
            stage: stage.to_string(),
            neurons: work.len(),
            max_deviation: dev,
        });
        if dev > tol_equiv || !dev.is_finite() {
            return Err(Error::Reduction { stage, deviation: dev });
        }
        Ok(())
    };

    // 1. same-orientation duplicates
    merge_aligned(&mut work, class, tol, false);
    check(&work, "merge_duplicates", &mut stages)?;

    // 2. zero and constant types
    let mut keep = vec![true; work.len()];
    for k in 0..work.len() {
        let contribution = work.a[k].norm()
            * if class.has_positive_scaling() {
                work.w[k].norm()
            } else {
                1.0
            };
        if work.w[k].norm() <= tol.w_abs {
            // a·σ(b + w·x) ≈ a·σ(b) + a·σ'(b)·w·x
            let (s, ds) = act.eval_with_deriv(work.b[k]);
            work.acc.beta += &work.a[k] * s;
            work.acc.theta += &work.a[k] * work.w[k].transpose() * ds;
            keep[k] = false;
        } else if contribution <= tol_zero {
            keep[k] = false;
        }
    }
    work.keep(&keep);
    check(&work, "remove_zero", &mut stages)?;

    // 3. offbound neurons whose asymptote is accurate on the data
    let mut keep = vec![true; work.len()];
    let budget = 0.1 * tol_equiv;
    for k in 0..work.len() {
        let range = work.preact_range(k, &data.x);
        if !is_offbound(range, tol) {
            continue;
        }
        let positive = range.0 > 0.0;
        let (slope, intercept) = act.asymptote(positive);
        let z = &data.x * &work.w[k];
        let a_max = work.a[k].amax();
        let err = z
            .iter()
            .map(|&u| {
                let u = u + work.b[k];
                (act.eval(u) - slope * u - intercept).abs()
            })
            .fold(0.0, f64::max);
        if err * a_max <= budget {
            let (a, w, b) = (work.a[k].clone(), work.w[k].clone(), work.b[k]);
            work.acc.add_neuron(&a, &w, b, slope);
            work.acc.beta += &a * intercept;
            keep[k] = false;
        }
    }
    work.keep(&keep);
    check(&work, "remove_offbound", &mut stages)?;

    // 4. opposite-orientation duplicates
    if class.has_sign_symmetry() {
        merge_aligned(&mut work, class, tol, true);
        let keep: Vec<bool> = (0..work.len())
            .map(|k| {
                work.a[k].norm()
                    * if class.has_positive_scaling() {
                        work.w[k].norm()
                    } else {
                        1.0
                    }
                    > tol_zero
            })
            .collect();
        work.keep(&keep);
    }
    check(&work, "merge_linear_duplicates", &mut stages)?;

    // 5. flips minimising ‖Θ‖
    if class.is_even_linear() && work.len() > 0 {
        let c1 = act.c1();
        let deltas: Vec<AffineAccumulator> = (0..work.len())
            .map(|k| {
                // flipping k changes f_network by −2c1·a·u, so the residual gains +2c1·a·u
                let mut d = AffineAccumulator::zeros(work.acc.theta.nrows(), work.acc.theta.ncols());
                d.add_neuron(&work.a[k], &work.w[k], work.b[k], 2.0 * c1);
                d
            })
            .collect();
        let flips = best_flip_subset(&work.acc.theta, &deltas, tol.exhaustive_flips);
        for (k, &f) in flips.iter().enumerate() {
            if f {
                work.acc.theta += &deltas[k].theta;
                work.acc.beta += &deltas[k].beta;
                work.acc.flips += 1;
                work.w[k] = -&work.w[k];
                work.b[k] = -work.b[k];
            }
        }
    }
    check(&work, "flip_signs", &mut stages)?;

    Ok(ReducedStudent {
        network: work.network(student),
        residual: work.acc,
        stages,
    })
}

/// Merge aligned neurons. Without `opposite` only neurons of identical
/// orientation merge; with it, aligned neurons of both orientations merge into
/// the canonical orientation and the remainder goes into the accumulator.
fn merge_aligned(work: &mut Work, class: SymmetryClass, tol: &Tolerances, opposite: bool) {
    if work.len() == 0 {
        return;
    }
    let group_class = if opposite { class } else { strip_sign(class) };
    let items: Vec<(usize, Canon)> = (0..work.len())
        .map(|k| (k, canon(&work.w[k], work.b[k], group_class)))
        .collect();
    let groups = align_groups(&items, group_class, tol);
    let (c0, c1) = (work.act.c0(), work.act.c1());
    let mut new = Work {
        act: work.act,
        w: Vec::new(),
        b: Vec::new(),
        a: Vec::new(),
        out_bias: work.out_bias.clone(),
        acc: work.acc.clone(),
    };
    for members in groups {
        let d_in = work.w[0].len();
        let mut w = DVector::zeros(d_in);
        let mut b = 0.0;
        let mut a = DVector::zeros(work.a[0].len());
        for &m in &members {
            let c = &items[m].1;
            let k = items[m].0;
            let cw = DVector::from_column_slice(&c.v[..d_in]);
            let cb = c.v[d_in];
            w += &cw;
            b += cb;
            // a·σ(u) with u = sign·scale·(cw·x + cb)
            let a_scaled = &work.a[k] * c.scale;
            if c.sign > 0.0 {
                a += &a_scaled;
            } else if class.is_odd() {
                // a·σ(−v) = 2c0·a − a·σ(v)
                a -= &a_scaled;
                new.acc.beta += &a_scaled * (2.0 * c0);
            } else {
                // a·σ(−v) = a·σ(v) − 2c1·a·v, v in canonical units
                a += &a_scaled;
                new.acc.add_neuron(&a_scaled, &cw, cb, -2.0 * c1);
            }
        }
        let n = members.len() as f64;
        new.w.push(w / n);
        new.b.push(b / n);
        new.a.push(a);
    }
    *work = new;
}

fn strip_sign(class: SymmetryClass) -> SymmetryClass {
    if class.has_positive_scaling() {
        SymmetryClass::EvenLinearPosScale
    } else {
        SymmetryClass::None
    }
}

/// Subset of `deltas` whose addition to `theta` gives the smallest Frobenius
/// norm; exhaustive up to `exhaustive` candidates, greedy single flips above.
fn best_flip_subset(theta: &DMatrix<f64>, deltas: &[AffineAccumulator], exhaustive: usize) -> Vec<bool> {
    let m = deltas.len();
    let base = theta.norm();
    if m <= exhaustive {
        let mut best = (base, 0u64);
        for mask in 1u64..(1u64 << m) {
            let mut t = theta.clone();
            for (k, d) in deltas.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    t += &d.theta;
                }
            }
            let n = t.norm();
            // strict improvement keeps the fewest flips on ties
            if n < best.0 * (1.0 - 1e-12) - 1e-300 {
                best = (n, mask);
            }
        }
        return (0..m).map(|k| best.1 >> k & 1 == 1).collect();
    }
    let mut chosen = vec![false; m];
    let mut t = theta.clone();
    loop {
        let mut step: Option<(usize, f64)> = None;
        for k in 0..m {
            let cand = if chosen[k] {
                &t - &deltas[k].theta
            } else {
                &t + &deltas[k].theta
            };
            let n = cand.norm();
            if n < step.map_or(t.norm() * (1.0 - 1e-12), |s| s.1) {
                step = Some((k, n));
            }
        }
        match step {
            Some((k, _)) => {
                if chosen[k] {
                    t -= &deltas[k].theta;
                } else {
                    t += &deltas[k].theta;
                }
                chosen[k] = !chosen[k];
            }
            None => return chosen,
        }
    }
}
