//! Expand-and-Cluster end to end: probe a width, train an ensemble, then
//! reconstruct one hidden layer at a time by clustering canonicalised neurons
//! across students, retraining the deeper layers on top of the frozen
//! reconstruction, and finally fine-tuning everything.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activation::Activation;
use crate::cluster::{
    average_linkage, collapse_clusters, filter_alignment, pairwise_distances, select_threshold, ClusterReport,
    CollapsedLayer, Metric, NeuronRef, PooledNeuron,
};
use crate::data::{column_variances, Dataset};
use crate::error::{Error, Result};
use crate::net::{Layer, NetworkParams};
use crate::seeds::{derive_seed, stream};
use crate::symmetry::{canonicalize_layer, classify_layer, layer_input, pivot, NeuronLabel, Tolerances};
use crate::trainer::{
    finetune, glorot_init, probe_expansion, train_ensemble, train_population, InitDistribution, ParamMask, ProbeConfig,
    ProbeResult, StudentEnsemble, TrainConfig,
};

/// How the student widths are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Widths {
    /// Run the expansion probe over these candidate widths (shared by all layers).
    Probe {
        candidates: Vec<usize>,
    },
    /// `rho` times the given per-layer base widths.
    Rho {
        rho: usize,
        base: Vec<usize>,
    },
    Explicit {
        widths: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Ensemble size `N`.
    pub n_students: usize,
    pub gamma: f64,
    /// Alignment threshold in radians.
    pub beta: f64,
    /// Optional per-layer replacement for `beta`.
    #[serde(default)]
    pub beta_per_layer: Option<Vec<f64>>,
    pub activation: Activation,
    pub widths: Widths,
    pub probe: ProbeConfig,
    /// Training of the first full-depth ensemble.
    pub ensemble: TrainConfig,
    /// Training of the students stacked on a reconstructed prefix.
    pub retrain: TrainConfig,
    /// Final fine-tuning of the reconstruction.
    pub finetune: TrainConfig,
    /// Neurons whose retrained bias varies more than this across students are removed.
    pub bias_std_cutoff: f64,
    /// `true` keeps an input coordinate; see [`apply_input_mask`].
    #[serde(default)]
    pub input_mask: Option<Vec<bool>>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Largest reconstructed layer for which all sign patterns are tried in
    /// [`resolve_signs`]; larger layers use a greedy search.
    pub exhaustive_signs: usize,
    /// After fine-tuning, delete neurons classified as zero, constant,
    /// linear or offbound type when the network survives without them.
    #[serde(default = "default_true")]
    pub prune_inert: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_students: 10,
            gamma: 0.8,
            beta: std::f64::consts::PI / 24.0,
            beta_per_layer: None,
            activation: Activation::G,
            widths: Widths::Probe {
                candidates: vec![2, 4, 8, 16, 32],
            },
            probe: ProbeConfig::default(),
            ensemble: TrainConfig::default(),
            retrain: TrainConfig::default(),
            finetune: TrainConfig::monotone(500),
            bias_std_cutoff: 0.1,
            input_mask: None,
            tolerances: Tolerances::default(),
            exhaustive_signs: 12,
            prune_inert: true,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Argument(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        let betas = std::iter::once(self.beta).chain(self.beta_per_layer.iter().flatten().copied());
        for b in betas {
            if !(b > 0.0 && b <= std::f64::consts::PI) {
                return Err(Error::Argument(format!("beta must lie in (0, π], got {b}")));
            }
        }
        if !(self.bias_std_cutoff > 0.0) {
            return Err(Error::Argument("bias_std_cutoff must be positive".into()));
        }
        if self.n_students == 0 {
            return Err(Error::Argument("N must be at least 1".into()));
        }
        match &self.widths {
            Widths::Probe { candidates } if candidates.is_empty() => {
                return Err(Error::Argument("probe needs candidate widths".into()));
            }
            Widths::Rho { rho, base } if *rho == 0 || base.is_empty() || base.contains(&0) => {
                return Err(Error::Argument("rho and every base width must be positive".into()));
            }
            Widths::Explicit { widths } if widths.is_empty() || widths.contains(&0) => {
                return Err(Error::Argument("explicit widths must be positive".into()));
            }
            _ => {}
        }
        self.ensemble.validate()?;
        self.retrain.validate()?;
        self.finetune.validate()
    }

    pub fn beta_for(&self, layer: usize) -> f64 {
        self.beta_per_layer
            .as_ref()
            .and_then(|b| b.get(layer).copied())
            .unwrap_or(self.beta)
    }

    /// SHA-256 of the canonical JSON of this configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Where a reconstruction came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub config_hash: String,
    pub seed: u64,
    /// Master seed of every ensemble, in training order.
    pub ensemble_seeds: Vec<u64>,
    pub version: String,
}

/// Per-layer bookkeeping of a reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    /// Kept clusters before the bias-spread filter.
    pub clustered: usize,
    /// Neurons removed because their retrained bias varied across students.
    pub removed: Vec<usize>,
    /// Width of the layer in the final network.
    pub size: usize,
    /// Sign flips applied by [`resolve_signs`].
    pub flipped: Vec<usize>,
    /// Best student loss of the ensemble this layer was read from.
    pub best_student_loss: f64,
    /// Inert neurons deleted after fine-tuning, indexed as in the tuned layer.
    #[serde(default)]
    pub pruned: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub network: NetworkParams,
    pub per_layer_reports: Vec<ClusterReport>,
    pub layers: Vec<LayerSummary>,
    /// Equals `mse_loss(network, dataset)` on the dataset given to
    /// [`expand_and_cluster`].
    pub final_loss: f64,
    /// Per hidden layer, neurons beyond one per duplicate group as labelled
    /// by the neuron-type classifier on the final network.
    pub excess_neurons: Vec<usize>,
    pub probe: Option<ProbeResult>,
    pub widths: Vec<usize>,
    pub input_mask: Option<Vec<bool>>,
    pub provenance: RunProvenance,
}

impl ReconstructionResult {
    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.network.hidden_sizes()
    }
}

/// Affine read-out `targets ≈ h·Aᵀ + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    /// `d_out × m`.
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    /// Mean squared residual.
    pub residual: f64,
    /// Set when the design `[h, 1]` was rank deficient and the minimum-norm
    /// solution was used.
    pub degenerate: bool,
}

/// Least-squares affine fit of `targets` on `hidden`, via an SVD of the design
/// `[hidden, 1]`.
pub fn fit_readout(hidden: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Readout> {
    let (n, m) = hidden.shape();
    if targets.nrows() != n {
        return Err(Error::Shape(format!(
            "{n} hidden rows but {} target rows",
            targets.nrows()
        )));
    }
    if n <= m + 1 {
        return Err(Error::Argument(format!(
            "read-out needs more than {} samples, got {n}",
            m + 1
        )));
    }
    let mut design = DMatrix::from_element(n, m + 1, 1.0);
    design.columns_mut(0, m).copy_from(hidden);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * (n as f64) * f64::EPSILON;
    let degenerate = svd.singular_values.iter().any(|&s| s <= eps);
    if degenerate {
        log::warn!("read-out design is rank deficient; using the minimum-norm solution");
    }
    let coef = svd
        .solve(targets, eps)
        .map_err(|e| Error::Argument(format!("read-out solve failed: {e}")))?;
    let resid = &design * &coef - targets;
    let residual = resid.norm_squared() / targets.len().max(1) as f64;
    Ok(Readout {
        a: coef.rows(0, m).transpose(),
        c: coef.row(m).transpose(),
        residual,
        degenerate,
    })
}

/// Drop input coordinates whose sample variance is at most
/// `threshold · max variance`. Returns the reduced dataset and the keep-mask.
pub fn apply_input_mask(data: &Dataset, threshold: f64) -> Result<(Dataset, Vec<bool>)> {
    if !(threshold >= 0.0) {
        return Err(Error::Argument("mask threshold must be non-negative".into()));
    }
    let var = column_variances(&data.x);
    let vmax = var.iter().copied().fold(0.0, f64::max);
    let mask: Vec<bool> = var.iter().map(|&v| v > threshold * vmax).collect();
    let masked = mask_inputs(data, &mask)?;
    Ok((masked, mask))
}

fn mask_inputs(data: &Dataset, mask: &[bool]) -> Result<Dataset> {
    if mask.len() != data.d_in() {
        return Err(Error::Shape(format!(
            "mask has {} entries for {} inputs",
            mask.len(),
            data.d_in()
        )));
    }
    let keep: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
    if keep.is_empty() {
        return Err(Error::Argument("every input coordinate is masked".into()));
    }
    data.with_inputs(data.x.select_columns(&keep))
}

/// First-layer weights re-inflated to the unmasked input size; masked
/// coordinates get weight 0.
pub fn inflate_inputs(net: &NetworkParams, mask: &[bool]) -> Result<NetworkParams> {
    let kept = mask.iter().filter(|&&k| k).count();
    if kept != net.d_in() {
        return Err(Error::Shape(format!(
            "mask keeps {kept} inputs, network has {}",
            net.d_in()
        )));
    }
    let mut out = net.clone();
    let first = &net.layers[0];
    let mut w = DMatrix::zeros(first.fan_out(), mask.len());
    let mut src = 0;
    for (j, &k) in mask.iter().enumerate() {
        if k {
            w.set_column(j, &first.weights.column(src));
            src += 1;
        }
    }
    out.layers[0].weights = w;
    Ok(out)
}

/// Canonicalised neurons of one hidden layer pooled across students, in
/// clustering order.
#[derive(Debug, Clone)]
pub struct NeuronPool {
    /// Clustering vectors: `(w, b)`; unit `w` for positively homogeneous activations.
    pub vectors: Vec<Vec<f64>>,
    pub refs: Vec<NeuronRef>,
    pub neurons: Vec<PooledNeuron>,
    pub metric: Metric,
}

/// Canonicalise hidden layer `l` of every student and pool its neurons.
/// Under the cosine metric, neurons with a zero weight vector are left out.
pub fn pool_layer(students: &[NetworkParams], l: usize) -> Result<NeuronPool> {
    let Some(first) = students.first() else {
        return Err(Error::Argument("no students to pool".into()));
    };
    let metric = if first.activation.symmetry().has_positive_scaling() {
        Metric::Cosine
    } else {
        Metric::Euclidean
    };
    let mut pool = NeuronPool {
        vectors: Vec::new(),
        refs: Vec::new(),
        neurons: Vec::new(),
        metric,
    };
    for (s, student) in students.iter().enumerate() {
        if student.depth() <= l {
            return Err(Error::Shape(format!("student {s} has no hidden layer {l}")));
        }
        let (canon, _) = canonicalize_layer(student, l)?;
        let layer = &canon.layers[l];
        let next = &canon.layers[l + 1];
        for k in 0..layer.fan_out() {
            let w: Vec<f64> = layer.weights.row(k).iter().copied().collect();
            if metric == Metric::Cosine && pivot(&w).is_none() {
                continue;
            }
            let b = layer.bias[k];
            let mut v = w.clone();
            v.push(b);
            pool.vectors.push(v);
            pool.refs.push(NeuronRef { student: s, neuron: k });
            pool.neurons.push(PooledNeuron {
                w: DVector::from_vec(w),
                b,
                a: next.weights.column(k).into_owned(),
            });
        }
    }
    if pool.vectors.is_empty() {
        return Err(Error::EmptySelection { min_size: 1 });
    }
    Ok(pool)
}

/// Cluster, filter and collapse a pooled layer.
pub fn cluster_pool(
    pool: &NeuronPool,
    student_losses: &[f64],
    gamma: f64,
    beta: f64,
    n_students: usize,
) -> Result<(ClusterReport, CollapsedLayer)> {
    let dist = pairwise_distances(&pool.vectors, pool.metric)?;
    if dist.kept.len() != pool.vectors.len() {
        return Err(Error::Argument("pooled clustering vectors must be nonzero".into()));
    }
    let dendro = average_linkage(&dist.matrix)?;
    let selection = select_threshold(&dendro, gamma, n_students)?;
    let weights: Vec<Vec<f64>> = pool.neurons.iter().map(|n| n.w.iter().copied().collect()).collect();
    let report = filter_alignment(&selection, &dendro, &weights, &pool.refs, beta, gamma, n_students)?;
    let collapsed = collapse_clusters(&report, &pool.neurons, student_losses)?;
    Ok((report, collapsed))
}

/// Pool, cluster, filter and collapse hidden layer `l` of an ensemble.
pub fn cluster_layer(
    ensemble: &StudentEnsemble,
    l: usize,
    gamma: f64,
    beta: f64,
) -> Result<(ClusterReport, CollapsedLayer)> {
    let pool = pool_layer(&ensemble.students, l)?;
    cluster_pool(&pool, &ensemble.final_losses, gamma, beta, ensemble.len())
}

/// For even+linear activations a clustered neuron is known only up to
/// `(w, b) → (−w, −b)`. Choose the orientation of every neuron of `layer`
/// so that `targets` is best explained by an affine read-out of
/// `σ(layer(x_in))`, using `σ(−u) = σ(u) − 2c1·u`. All patterns are tried up
/// to `exhaustive` neurons, a greedy toggle search beyond. Returns the
/// flipped neuron indices; `layer` is updated in place.
pub fn resolve_signs(
    layer: &mut Layer,
    x_in: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    activation: Activation,
    exhaustive: usize,
) -> Result<Vec<usize>> {
    if !activation.symmetry().is_even_linear() {
        return Ok(Vec::new());
    }
    let m = layer.fan_out();
    let n = x_in.nrows();
    if m == 0 || n <= m + 1 {
        return Ok(Vec::new());
    }
    let c1 = activation.c1();
    let u = layer.affine(x_in);
    let h = u.map(|v| activation.eval(v));
    // Gram of [H, U, 1] and its products with the targets
    let mut basis = DMatrix::from_element(n, 2 * m + 1, 1.0);
    basis.columns_mut(0, m).copy_from(&h);
    basis.columns_mut(m, m).copy_from(&u);
    let gram = crate::optim::gram(&basis);
    let cross = basis.tr_mul(targets);
    let yy = targets.norm_squared();
    let residual = |flips: &[bool]| -> f64 {
        let mut t = DMatrix::zeros(2 * m + 1, m + 1);
        for k in 0..m {
            t[(k, k)] = 1.0;
            if flips[k] {
                t[(m + k, k)] = -2.0 * c1;
            }
        }
        t[(2 * m, m)] = 1.0;
        let a = t.transpose() * &gram * &t;
        let r = t.transpose() * &cross;
        let Ok(sol) = a.clone().svd(true, true).solve(&r, 1e-13 * a.diagonal().max()) else {
            return f64::INFINITY;
        };
        (yy - (r.transpose() * sol).trace()).max(0.0)
    };
    let better = |cand: f64, cur: f64| cand < cur * (1.0 - 1e-9) - 1e-300;
    let mut best = vec![false; m];
    let mut best_res = residual(&best);
    if m <= exhaustive.min(20) {
        // ascending masks visit fewer flips first, so ties keep the simplest pattern
        let mut order: Vec<u32> = (1..(1u32 << m)).collect();
        order.sort_by_key(|s| (s.count_ones(), *s));
        for s in order {
            let flips: Vec<bool> = (0..m).map(|k| s >> k & 1 == 1).collect();
            let r = residual(&flips);
            if better(r, best_res) {
                best_res = r;
                best = flips;
            }
        }
    } else {
        loop {
            let mut step = None;
            for k in 0..m {
                let mut cand = best.clone();
                cand[k] = !cand[k];
                let r = residual(&cand);
                if better(r, best_res) && step.is_none_or(|(_, s)| r < s) {
                    step = Some((k, r));
                }
            }
            match step {
                Some((k, r)) => {
                    best[k] = !best[k];
                    best_res = r;
                }
                None => break,
            }
        }
    }
    let flipped: Vec<usize> = (0..m).filter(|&k| best[k]).collect();
    for &k in &flipped {
        for j in 0..layer.fan_in() {
            layer.weights[(k, j)] = -layer.weights[(k, j)];
        }
        layer.bias[k] = -layer.bias[k];
    }
    Ok(flipped)
}

fn hidden_widths(cfg: &PipelineConfig, data: &Dataset, depth: usize) -> Result<(Vec<usize>, Option<ProbeResult>)> {
    match &cfg.widths {
        Widths::Probe { candidates } => {
            let mut probe_cfg = cfg.probe.clone();
            probe_cfg.train.seed = derive_seed(cfg.seed, stream::PROBE, 0);
            let probe = probe_expansion(data, candidates, depth, cfg.activation, &probe_cfg)?;
            Ok((vec![probe.chosen; depth], Some(probe)))
        }
        Widths::Rho { rho, base } => {
            if base.len() != depth {
                return Err(Error::Argument(format!(
                    "{} base widths given for depth {depth}",
                    base.len()
                )));
            }
            Ok((base.iter().map(|b| b * rho).collect(), None))
        }
        Widths::Explicit { widths } => {
            if widths.len() != depth {
                return Err(Error::Argument(format!(
                    "{} widths given for depth {depth}",
                    widths.len()
                )));
            }
            Ok((widths.clone(), None))
        }
    }
}

/// Students for the next layer: the reconstructed prefix (layers `0..=l`)
/// followed by fresh Glorot layers of the remaining widths.
fn stacked_inits(
    prefix: &[Layer],
    remaining: &[usize],
    data: &Dataset,
    activation: Activation,
    n: usize,
    seed: u64,
) -> Result<Vec<NetworkParams>> {
    let top = prefix.last().expect("non-empty prefix").fan_out();
    let mut dims = vec![top];
    dims.extend_from_slice(remaining);
    dims.push(data.d_out());
    (0..n)
        .map(|i| {
            let fresh = glorot_init(
                &dims,
                activation,
                InitDistribution::Normal,
                derive_seed(seed, stream::STUDENT, i as u64),
            )?;
            let mut layers = prefix.to_vec();
            layers.extend(fresh.layers);
            Ok(NetworkParams::new(layers, activation)?
                .with_seed(fresh.seed)
                .with_provenance("stacked"))
        })
        .collect()
}

/// Remove neuron `k` of hidden layer `l`.
fn drop_neuron(net: &NetworkParams, l: usize, k: usize) -> NetworkParams {
    let mut out = net.clone();
    let keep: Vec<usize> = (0..net.layers[l].fan_out()).filter(|&i| i != k).collect();
    out.layers[l].weights = net.layers[l].weights.select_rows(&keep);
    out.layers[l].bias = net.layers[l].bias.select_rows(&keep);
    out.layers[l + 1].weights = net.layers[l + 1].weights.select_columns(&keep);
    out
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Delete the inert neurons of layer `l` (every label but duplicate) and
/// re-tune; all at once when that keeps the loss within 10× of
/// `max(loss, equiv²)`, otherwise one at a time under the same test.
fn prune_inert(
    net: &NetworkParams,
    l: usize,
    data: &Dataset,
    tol: &Tolerances,
    tune: &dyn Fn(&NetworkParams) -> Result<NetworkParams>,
) -> Result<(NetworkParams, Vec<usize>)> {
    let labels = classify_layer(net, l, data, tol)?;
    let inert: Vec<usize> = (0..labels.len())
        .filter(|&k| !matches!(labels[k], NeuronLabel::Duplicate(_)))
        .collect();
    if inert.is_empty() || inert.len() == labels.len() {
        return Ok((net.clone(), Vec::new()));
    }
    let loss = net.mse(&data.x, &data.y)?;
    let bound = 10.0 * loss.max(tol.equiv(data).powi(2));
    let without = |net: &NetworkParams, ks: &[usize]| -> Result<Option<NetworkParams>> {
        let cut = ks.iter().rev().fold(net.clone(), |acc, &k| drop_neuron(&acc, l, k));
        let cut = tune(&cut)?;
        Ok((cut.mse(&data.x, &data.y)? <= bound).then_some(cut))
    };
    if let Some(cut) = without(net, &inert)? {
        log::info!("layer {l}: pruned inert neurons {inert:?}");
        return Ok((cut, inert));
    }
    let mut current = net.clone();
    let mut pruned = Vec::new();
    // indices shift as neurons go; walk from the back
    for &k in inert.iter().rev() {
        if let Some(cut) = without(&current, &[k])? {
            current = cut;
            pruned.push(k);
        }
    }
    pruned.reverse();
    if !pruned.is_empty() {
        log::info!("layer {l}: pruned inert neurons {pruned:?}");
    }
    Ok((current, pruned))
}

fn excess_of(labels: &[NeuronLabel]) -> usize {
    let groups: std::collections::BTreeSet<usize> = labels
        .iter()
        .filter_map(|l| match l {
            NeuronLabel::Duplicate(g) => Some(*g),
            _ => None,
        })
        .collect();
    labels.len() - groups.len()
}

fn at_layer(layer: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Pipeline {
        layer,
        source: Box::new(e),
    }
}

/// Network made of the reconstructed `prefix` and an affine read-out fitted
/// to `data.y` on its last hidden layer.
fn with_readout(prefix: &[Layer], data: &Dataset, activation: Activation) -> Result<(NetworkParams, Readout)> {
    let partial = NetworkParams::new(
        prefix
            .iter()
            .cloned()
            .chain(std::iter::once(Layer::zeros(
                data.d_out(),
                prefix.last().expect("prefix").fan_out(),
            )))
            .collect(),
        activation,
    )?;
    let h = partial.hidden_activations(&data.x, prefix.len() - 1)?;
    let readout = fit_readout(&h, &data.y)?;
    let mut net = partial;
    let last = net.layers.len() - 1;
    net.layers[last] = Layer::new(readout.a.clone(), readout.c.clone())?;
    Ok((net, readout))
}

/// Run Expand-and-Cluster on `dataset` for a network with `depth` hidden layers.
pub fn expand_and_cluster(dataset: &Dataset, cfg: &PipelineConfig, depth: usize) -> Result<ReconstructionResult> {
    cfg.validate()?;
    if depth == 0 {
        return Err(Error::Argument("depth must be at least 1".into()));
    }
    let act = cfg.activation;
    let data = match &cfg.input_mask {
        Some(mask) => mask_inputs(dataset, mask)?,
        None => dataset.clone(),
    };
    let (widths, probe) = hidden_widths(cfg, &data, depth)?;
    log::info!("student widths {widths:?}");
    let ens_cfg = cfg.ensemble.clone().with_seed(cfg.seed);
    let ensemble = train_ensemble(&widths, &data, act, &ens_cfg, cfg.n_students).map_err(at_layer(0))?;
    reconstruct_from_ensemble(dataset, cfg, ensemble, probe)
}

/// Steps 3 and 4 of [`expand_and_cluster`] on an already trained ensemble,
/// whose depth and widths define the reconstruction. Students were trained
/// on `dataset` with `cfg.input_mask` applied.
pub fn reconstruct_from_ensemble(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    ensemble: StudentEnsemble,
    probe: Option<ProbeResult>,
) -> Result<ReconstructionResult> {
    cfg.validate()?;
    let act = cfg.activation;
    let data = match &cfg.input_mask {
        Some(mask) => mask_inputs(dataset, mask)?,
        None => dataset.clone(),
    };
    let Some(first) = ensemble.students.first() else {
        return Err(Error::Argument("empty ensemble".into()));
    };
    if first.activation != act || first.d_in() != data.d_in() || first.d_out() != data.d_out() {
        return Err(Error::Shape("ensemble does not match the dataset or activation".into()));
    }
    let depth = first.depth();
    let widths = first.hidden_sizes();
    let mut ensemble = ensemble;
    let mut ensemble_seeds = vec![ensemble.master_seed];
    let mut prefix: Vec<Layer> = Vec::new();
    let mut reports = Vec::with_capacity(depth);
    let mut summaries = Vec::with_capacity(depth);

    for l in 0..depth {
        let (best_idx, best) = ensemble.best();
        let best = best.clone();
        let best_loss = ensemble.final_losses[best_idx];
        log::info!("layer {l}: best student loss {best_loss:e}");
        let (report, collapsed) = cluster_layer(&ensemble, l, cfg.gamma, cfg.beta_for(l)).map_err(at_layer(l))?;
        let mut layer = Layer::new(collapsed.weights.clone(), collapsed.bias.clone())?;
        let clustered = layer.fan_out();
        log::info!("layer {l}: {clustered} kept clusters");
        reports.push(report);

        // the students' prefix biases may have moved during retraining
        for (k, p) in prefix.iter_mut().enumerate() {
            p.bias = best.layers[k].bias.clone();
        }
        let x_in = layer_input(&best, &data.x, l)?;
        let targets = if l + 1 == depth {
            data.y.clone()
        } else {
            // next pre-activation of the best student
            let h = best.hidden_activations(&data.x, l)?;
            best.layers[l + 1].affine(&h)
        };
        let flipped = resolve_signs(&mut layer, &x_in, &targets, act, cfg.exhaustive_signs)?;
        prefix.push(layer);

        let mut removed = Vec::new();
        if l + 1 < depth {
            let retrain_seed = derive_seed(cfg.seed, stream::RETRAIN, l as u64);
            ensemble_seeds.push(retrain_seed);
            let inits = stacked_inits(&prefix, &widths[l + 1..], &data, act, cfg.n_students, retrain_seed)?;
            let rcfg = cfg.retrain.clone().with_seed(retrain_seed);
            let partial_error = |e: Error, prefix: &[Layer]| -> Error {
                match e {
                    Error::Divergence { step, .. } => match with_readout(prefix, &data, act) {
                        Ok((partial, _)) => Error::Pipeline {
                            layer: l,
                            source: Box::new(Error::Divergence {
                                step,
                                last_finite: Box::new(partial),
                            }),
                        },
                        Err(e2) => at_layer(l)(e2),
                    },
                    other => at_layer(l)(other),
                }
            };
            // fit the fresh layers on the frozen prefix first: from a random
            // start, free prefix biases would absorb the early large steps
            let retrain = |nets: Vec<NetworkParams>| -> Result<StudentEnsemble> {
                let frozen: Vec<ParamMask> = nets.iter().map(|n| ParamMask::freeze_prefix(n, l + 1)).collect();
                let warm = train_population(nets, &data, Some(&frozen), &rcfg, retrain_seed)?;
                let free: Vec<ParamMask> = warm
                    .students
                    .iter()
                    .map(|n| ParamMask::freeze_prefix_weights(n, l + 1))
                    .collect();
                train_population(warm.students, &data, Some(&free), &rcfg, retrain_seed)
            };
            ensemble = retrain(inits).map_err(|e| partial_error(e, &prefix))?;
            let new_best = ensemble.final_losses[ensemble.best().0];
            if new_best > 10.0 * best_loss {
                log::warn!("layer {l}: retrained best loss {new_best:e} is above 10× the previous {best_loss:e}");
            }
            // bias spread of the reconstructed neurons across students
            let spread: Vec<f64> = (0..prefix[l].fan_out())
                .map(|k| {
                    let bs: Vec<f64> = ensemble.students.iter().map(|s| s.layers[l].bias[k]).collect();
                    std_dev(&bs)
                })
                .collect();
            log::debug!(
                "layer {l}: bias spread {spread:?}, retrained losses {:?}",
                ensemble.final_losses
            );
            removed = (0..spread.len()).filter(|&k| spread[k] > cfg.bias_std_cutoff).collect();
            if removed.len() == spread.len() {
                log::warn!("layer {l}: every neuron exceeds the bias spread cutoff; keeping them all");
                removed.clear();
            }
            if !removed.is_empty() {
                log::info!("layer {l}: removing neurons {removed:?} for bias spread");
                let shrink = |net: &NetworkParams| {
                    removed
                        .iter()
                        .rev()
                        .fold(net.clone(), |acc, &k| drop_neuron(&acc, l, k))
                };
                let shrunk: Vec<NetworkParams> = ensemble.students.iter().map(shrink).collect();
                prefix[l] = shrink(&ensemble.students[0]).layers[l].clone();
                let masks: Vec<ParamMask> = shrunk
                    .iter()
                    .map(|n| ParamMask::freeze_prefix_weights(n, l + 1))
                    .collect();
                ensemble = train_population(shrunk, &data, Some(&masks), &rcfg, retrain_seed)
                    .map_err(|e| partial_error(e, &prefix))?;
            }
        }
        summaries.push(LayerSummary {
            layer: l,
            clustered,
            removed,
            size: prefix[l].fan_out(),
            flipped,
            best_student_loss: best_loss,
            pruned: Vec::new(),
        });
    }

    let (assembled, readout) = with_readout(&prefix, &data, act).map_err(at_layer(depth - 1))?;
    log::info!("read-out residual {:e}", readout.residual);
    let mut ft_cfg = cfg.finetune.clone();
    ft_cfg.seed = cfg.seed;
    let tune = |net: &NetworkParams| -> Result<NetworkParams> {
        match finetune(net, &data, &ParamMask::all(net), &ft_cfg) {
            Ok(out) => Ok(out.params),
            Err(Error::Divergence { last_finite, .. }) => Ok(*last_finite),
            Err(e) => Err(e),
        }
    };
    let mut tuned = tune(&assembled).map_err(at_layer(depth - 1))?;
    if cfg.prune_inert {
        for l in 0..depth {
            let (net, pruned) = prune_inert(&tuned, l, &data, &cfg.tolerances, &tune).map_err(at_layer(l))?;
            tuned = net;
            summaries[l].pruned = pruned;
            summaries[l].size = tuned.layers[l].fan_out();
        }
    }
    let mut network = match &cfg.input_mask {
        Some(mask) => inflate_inputs(&tuned, mask)?,
        None => tuned,
    };
    network = network.with_seed(cfg.seed).with_provenance("expand-and-cluster");
    let final_loss = network.mse(&dataset.x, &dataset.y)?;
    let excess_neurons = (0..depth)
        .map(|l| classify_layer(&network, l, dataset, &cfg.tolerances).map(|labels| excess_of(&labels)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReconstructionResult {
        network,
        per_layer_reports: reports,
        layers: summaries,
        final_loss,
        excess_neurons,
        probe,
        widths,
        input_mask: cfg.input_mask.clone(),
        provenance: RunProvenance {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            ensemble_seeds,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    })
}
