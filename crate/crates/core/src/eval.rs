//! Matching recovered neurons to teacher neurons modulo the activation's
//! symmetries, and the evaluation metrics of a reconstruction.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::activation::{Activation, SymmetryClass};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{Layer, NetworkParams};
use crate::pipeline::ReconstructionResult;
use crate::symmetry::{classify_layer, NeuronLabel, Tolerances};

/// Largest side for which the matcher enumerates every injective map.
pub const EXHAUSTIVE_LIMIT: usize = 8;

/// Below this outgoing-weight norm an excess neuron is flagged as a putative zero neuron.
pub const PUTATIVE_ZERO_NORM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub recovered: usize,
    pub teacher: usize,
    /// Matching cost: cosine distance of the augmented `(w, b)` vectors.
    pub cost: f64,
    pub input_distance: f64,
    pub output_distance: f64,
    /// The recovered neuron points opposite to the teacher neuron.
    pub sign_flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessNeuron {
    pub recovered: usize,
    pub nearest_teacher: Option<usize>,
    pub input_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// `assignment[i]` is the teacher neuron matched to recovered neuron `i`.
    pub assignment: Vec<Option<usize>>,
    pub pairs: Vec<MatchedPair>,
    pub excess: Vec<ExcessNeuron>,
    pub unmatched_teacher: Vec<usize>,
    pub total_cost: f64,
}

/// One hidden layer in comparable coordinates: input weights `w` (rows),
/// biases `b` and outgoing weights `a` (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerView {
    pub w: DMatrix<f64>,
    pub b: Vec<f64>,
    pub a: DMatrix<f64>,
}

impl LayerView {
    /// Hidden layer `l` of `net` as stored.
    pub fn of(net: &NetworkParams, l: usize) -> Result<Self> {
        if l >= net.depth() {
            return Err(Error::Argument(format!("network has no hidden layer {l}")));
        }
        let layer: &Layer = &net.layers[l];
        Ok(LayerView {
            w: layer.weights.clone(),
            b: layer.bias.iter().copied().collect(),
            a: net.layers[l + 1].weights.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.w.nrows() == 0
    }
}

/// Two zero vectors count as aligned, one zero vector as orthogonal.
fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine distance, or its absolute-value variant `1 − |cos|` when `absolute`.
pub fn cosine_distance(a: &[f64], b: &[f64], absolute: bool) -> f64 {
    let c = cosine(a, b);
    if absolute {
        1.0 - c.abs()
    } else {
        1.0 - c
    }
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn augmented(v: &LayerView, i: usize) -> Vec<f64> {
    let mut r = row(&v.w, i);
    r.push(v.b[i]);
    r
}

/// Minimum-cost injective matching between the rows and the columns of
/// `cost` (every row or every column is used, whichever are fewer). Returns
/// `match[row] = Some(col)`. Exhaustive up to [`EXHAUSTIVE_LIMIT`], Hungarian
/// above.
pub fn min_cost_matching(cost: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (r, c) = cost.shape();
    if r == 0 || c == 0 {
        return vec![None; r];
    }
    if r.max(c) <= EXHAUSTIVE_LIMIT {
        exhaustive_matching(cost)
    } else {
        hungarian(cost)
    }
}

/// Enumerates every injective map of the smaller side into the larger one;
/// ties keep the lexicographically first map.
pub fn exhaustive_matching(cost: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (r, c) = cost.shape();
    let transpose = r > c;
    let m = if transpose { cost.transpose() } else { cost.clone() };
    let (small, large) = (m.nrows(), m.ncols());
    let mut best = (f64::INFINITY, vec![0usize; small]);
    let mut cur = Vec::with_capacity(small);
    let mut used = vec![false; large];
    fn rec(m: &DMatrix<f64>, cur: &mut Vec<usize>, used: &mut [bool], acc: f64, best: &mut (f64, Vec<usize>)) {
        let i = cur.len();
        if i == m.nrows() {
            if acc < best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        for j in 0..m.ncols() {
            if used[j] {
                continue;
            }
            let next = acc + m[(i, j)];
            if next >= best.0 {
                continue;
            }
            used[j] = true;
            cur.push(j);
            rec(m, cur, used, next, best);
            cur.pop();
            used[j] = false;
        }
    }
    rec(&m, &mut cur, &mut used, 0.0, &mut best);
    if best.0.is_infinite() {
        // all costs infinite or NaN: fall back to the identity-order map
        best.1 = (0..small).collect();
    }
    let mut out = vec![None; r];
    for (i, &j) in best.1.iter().enumerate() {
        if transpose {
            out[j] = Some(i);
        } else {
            out[i] = Some(j);
        }
    }
    out
}

/// Kuhn-Munkres with potentials, `O(n²m)` for `n ≤ m`.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (r, c) = cost.shape();
    let transpose = r > c;
    let a = if transpose { cost.transpose() } else { cost.clone() };
    let (n, m) = (a.nrows(), a.ncols());
    let inf = f64::INFINITY;
    // 1-based arrays; p[j] is the row matched to column j
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; r];
    for j in 1..=m {
        if p[j] != 0 {
            let (row, col) = (p[j] - 1, j - 1);
            if transpose {
                out[col] = Some(row);
            } else {
                out[row] = Some(col);
            }
        }
    }
    out
}

/// Match the neurons of a recovered layer to those of a teacher layer.
///
/// Both views must already be in the teacher's coordinates (for deeper
/// layers see [`match_network`]). The cost is the cosine distance of the
/// augmented `(w, b)` vectors, in its absolute-value form when `class`
/// allows sign flips.
pub fn match_neurons(recovered: &LayerView, teacher: &LayerView, class: SymmetryClass) -> Result<MatchReport> {
    if recovered.w.ncols() != teacher.w.ncols() {
        return Err(Error::Shape(format!(
            "recovered fan-in {} differs from teacher fan-in {}",
            recovered.w.ncols(),
            teacher.w.ncols()
        )));
    }
    let absolute = class.has_sign_symmetry();
    let (m, r) = (recovered.len(), teacher.len());
    let cost = DMatrix::from_fn(m, r, |i, j| {
        cosine_distance(&augmented(recovered, i), &augmented(teacher, j), absolute)
    });
    let assignment = min_cost_matching(&cost);
    let mut pairs = Vec::new();
    let mut excess = Vec::new();
    for (i, t) in assignment.iter().enumerate() {
        let wr = row(&recovered.w, i);
        match *t {
            Some(j) => {
                let wt = row(&teacher.w, j);
                let sign_flipped = absolute && cosine(&augmented(recovered, i), &augmented(teacher, j)) < 0.0;
                let ar: Vec<f64> = recovered.a.column(i).iter().copied().collect();
                let mut at: Vec<f64> = teacher.a.column(j).iter().copied().collect();
                if sign_flipped && class.is_odd() {
                    // a·σ(u) = −a·σ(−u) + const
                    at.iter_mut().for_each(|v| *v = -*v);
                }
                pairs.push(MatchedPair {
                    recovered: i,
                    teacher: j,
                    cost: cost[(i, j)],
                    input_distance: cosine_distance(&wr, &wt, absolute),
                    output_distance: cosine_distance(&ar, &at, false),
                    sign_flipped,
                });
            }
            None => {
                let nearest = (0..r).min_by(|&x, &y| cost[(i, x)].total_cmp(&cost[(i, y)]));
                excess.push(ExcessNeuron {
                    recovered: i,
                    nearest_teacher: nearest,
                    input_distance: nearest.map_or(f64::NAN, |j| cosine_distance(&wr, &row(&teacher.w, j), absolute)),
                });
            }
        }
    }
    let matched: Vec<usize> = assignment.iter().flatten().copied().collect();
    let unmatched_teacher = (0..r).filter(|j| !matched.contains(j)).collect();
    let total_cost = pairs.iter().map(|p| p.cost).sum();
    Ok(MatchReport {
        assignment,
        pairs,
        excess,
        unmatched_teacher,
        total_cost,
    })
}

/// Per matched recovered neuron, how its pre-activation (`pre`) and output
/// (`post`) relate to its teacher's: `z = pre·z*`, `h ≈ post·h* + affine`.
fn factors(rec: &LayerView, teacher: &LayerView, report: &MatchReport, act: Activation) -> Vec<Option<(f64, f64)>> {
    let class = act.symmetry();
    let mut out = vec![None; rec.len()];
    for p in &report.pairs {
        let sign = if p.sign_flipped { -1.0 } else { 1.0 };
        let scale = if class.has_positive_scaling() {
            let nr = augmented(rec, p.recovered).iter().map(|v| v * v).sum::<f64>().sqrt();
            let nt = augmented(teacher, p.teacher).iter().map(|v| v * v).sum::<f64>().sqrt();
            if nt > 0.0 {
                nr / nt
            } else {
                1.0
            }
        } else {
            1.0
        };
        let post = if class.is_odd() { sign * scale } else { scale };
        out[p.recovered] = Some((sign * scale, post));
    }
    out
}

/// Match every hidden layer of `recovered` against `teacher`, carrying each
/// layer's assignment (with its sign and scale factors) into the input
/// coordinates of the next layer.
pub fn match_network(recovered: &NetworkParams, teacher: &NetworkParams) -> Result<Vec<MatchReport>> {
    if recovered.depth() != teacher.depth()
        || recovered.d_in() != teacher.d_in()
        || recovered.d_out() != teacher.d_out()
    {
        return Err(Error::Shape(
            "recovered and teacher networks have different depth or interface".into(),
        ));
    }
    let act = teacher.activation;
    let class = act.symmetry();
    let depth = teacher.depth();
    // matching of layer l−1: teacher index → (recovered index, post factor)
    let mut prev: Option<Vec<Option<(usize, f64)>>> = None;
    let mut reports = Vec::with_capacity(depth);
    let mut views = Vec::with_capacity(depth);
    for l in 0..depth {
        let rv = LayerView::of(recovered, l)?;
        let tv = LayerView::of(teacher, l)?;
        let rv = match &prev {
            None => rv,
            Some(map) => {
                let w = DMatrix::from_fn(rv.len(), map.len(), |i, j| match map[j] {
                    Some((src, post)) => rv.w[(i, src)] * post,
                    None => 0.0,
                });
                LayerView { w, ..rv }
            }
        };
        let report = match_neurons(&rv, &tv, class)?;
        let f = factors(&rv, &tv, &report, act);
        let mut map = vec![None; tv.len()];
        for p in &report.pairs {
            map[p.teacher] = Some((p.recovered, f[p.recovered].expect("matched").1));
        }
        prev = Some(map);
        views.push((rv, tv, f));
        reports.push(report);
    }
    // outgoing distances of inner layers in the next layer's teacher order
    for l in 0..depth.saturating_sub(1) {
        let next = &reports[l + 1];
        let next_f = &views[l + 1].2;
        let (rv, tv, _) = &views[l];
        let pairs: Vec<(usize, usize)> = next.pairs.iter().map(|p| (p.recovered, p.teacher)).collect();
        for p in &mut reports[l].pairs {
            let mut ar = vec![0.0; tv.a.nrows()];
            for &(k_rec, k_t) in &pairs {
                let pre = next_f[k_rec].expect("matched").0;
                let post = views[l].2[p.recovered].expect("matched").1;
                ar[k_t] = rv.a[(k_rec, p.recovered)] * post / pre;
            }
            let at: Vec<f64> = tv.a.column(p.teacher).iter().copied().collect();
            p.output_distance = cosine_distance(&ar, &at, false);
        }
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessReport {
    pub neuron: usize,
    pub nearest_teacher: Option<usize>,
    pub input_distance: f64,
    pub label: String,
    pub output_norm: f64,
    pub putative_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub layer: usize,
    pub recovered: usize,
    pub teacher: usize,
    pub size_ratio: f64,
    pub mean_input_distance: Option<f64>,
    pub max_input_distance: Option<f64>,
    pub mean_output_distance: Option<f64>,
    pub max_output_distance: Option<f64>,
    pub pairs: Vec<MatchedPair>,
    pub excess: Vec<ExcessReport>,
    pub unmatched_teacher: Vec<usize>,
}

/// Evaluation of a reconstruction against its teacher. Field names are the
/// stable metrics JSON schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub final_loss: f64,
    pub recovered_sizes: Vec<usize>,
    pub teacher_sizes: Vec<usize>,
    /// `None` when the depths differ and no neuron matching is possible.
    pub layers: Option<Vec<LayerMetrics>>,
}

fn mean_max(values: impl Iterator<Item = f64> + Clone) -> (Option<f64>, Option<f64>) {
    let n = values.clone().count();
    if n == 0 {
        return (None, None);
    }
    let sum: f64 = values.clone().sum();
    (Some(sum / n as f64), values.reduce(f64::max))
}

/// Metrics of a recovered network against the teacher that generated `data`.
pub fn network_metrics(
    recovered: &NetworkParams,
    teacher: &NetworkParams,
    data: &Dataset,
    tol: &Tolerances,
) -> Result<Metrics> {
    let final_loss = recovered.mse(&data.x, &data.y)?;
    let mut out = Metrics {
        rmse: final_loss.sqrt(),
        final_loss,
        recovered_sizes: recovered.hidden_sizes(),
        teacher_sizes: teacher.hidden_sizes(),
        layers: None,
    };
    if recovered.depth() != teacher.depth() {
        return Ok(out);
    }
    let reports = match_network(recovered, teacher)?;
    let mut layers = Vec::with_capacity(reports.len());
    for (l, rep) in reports.into_iter().enumerate() {
        let labels = classify_layer(recovered, l, data, tol)?;
        let a = &recovered.layers[l + 1].weights;
        let excess = rep
            .excess
            .iter()
            .map(|e| {
                let norm = a.column(e.recovered).norm();
                ExcessReport {
                    neuron: e.recovered,
                    nearest_teacher: e.nearest_teacher,
                    input_distance: e.input_distance,
                    label: labels[e.recovered].name().to_string(),
                    output_norm: norm,
                    putative_zero: norm < PUTATIVE_ZERO_NORM,
                }
            })
            .collect();
        let (mean_in, max_in) = mean_max(rep.pairs.iter().map(|p| p.input_distance));
        let (mean_out, max_out) = mean_max(rep.pairs.iter().map(|p| p.output_distance));
        let (m, r) = (recovered.hidden_sizes()[l], teacher.hidden_sizes()[l]);
        layers.push(LayerMetrics {
            layer: l,
            recovered: m,
            teacher: r,
            size_ratio: m as f64 / r as f64,
            mean_input_distance: mean_in,
            max_input_distance: max_in,
            mean_output_distance: mean_out,
            max_output_distance: max_out,
            pairs: rep.pairs,
            excess,
            unmatched_teacher: rep.unmatched_teacher,
        });
    }
    out.layers = Some(layers);
    Ok(out)
}

/// [`network_metrics`] of a pipeline result.
pub fn metrics(result: &ReconstructionResult, teacher: &NetworkParams, data: &Dataset) -> Result<Metrics> {
    network_metrics(&result.network, teacher, data, &Tolerances::default())
}

/// Labels of the neurons [`match_neurons`] left unmatched, for reports.
pub fn excess_labels(net: &NetworkParams, l: usize, report: &MatchReport, data: &Dataset) -> Result<Vec<NeuronLabel>> {
    let labels = classify_layer(net, l, data, &Tolerances::default())?;
    Ok(report.excess.iter().map(|e| labels[e.recovered]).collect())
}
