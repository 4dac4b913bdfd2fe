//! Full-batch student training: Glorot initialisation, an Adam phase with
//! plateau decay, and a BFGS refinement phase that drives the imitation loss
//! towards machine precision.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{Layer, NetworkParams};
use crate::optim::{
    self, AdamConfig, LeastSquares, LmConfig, Objective, Progress, QuasiNewtonConfig, StopReason, Stopping,
};
use crate::seeds::{self, derive_seed, stream};

/// Second phase after Adam. Both methods are monotone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Refine {
    Bfgs(QuasiNewtonConfig),
    Lm(LmConfig),
}

impl Refine {
    pub fn steps(&self) -> usize {
        match self {
            Refine::Bfgs(c) => c.steps,
            Refine::Lm(c) => c.steps,
        }
    }
}

impl Default for Refine {
    fn default() -> Self {
        Refine::Lm(LmConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: Option<AdamConfig>,
    pub refine: Option<Refine>,
    pub max_steps: usize,
    pub loss_stop: f64,
    pub grad_stop: f64,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: None,
            refine: Some(Refine::default()),
            max_steps: 50_000,
            loss_stop: 1e-24,
            grad_stop: 1e-12,
            log_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss_stop > 0.0) || !(self.grad_stop > 0.0) || self.max_steps == 0 {
            return Err(Error::Argument(
                "loss_stop and grad_stop must be positive and max_steps ≥ 1".into(),
            ));
        }
        Ok(())
    }

    /// Refinement only (no Adam); every accepted step decreases the loss.
    pub fn monotone(steps: usize) -> Self {
        TrainConfig {
            adam: None,
            refine: Some(Refine::Lm(LmConfig {
                steps,
                ..Default::default()
            })),
            max_steps: steps,
            ..Default::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn stopping(&self) -> Stopping {
        Stopping {
            loss_stop: self.loss_stop,
            grad_stop: self.grad_stop,
            log_every: self.log_every,
        }
    }
}

/// Which parameters a training run may change, congruent to
/// [`NetworkParams::to_flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMask {
    pub trainable: Vec<bool>,
}

impl ParamMask {
    pub fn all(net: &NetworkParams) -> Self {
        ParamMask {
            trainable: vec![true; net.param_count()],
        }
    }

    pub fn none(net: &NetworkParams) -> Self {
        ParamMask {
            trainable: vec![false; net.param_count()],
        }
    }

    fn from_fn(net: &NetworkParams, mut f: impl FnMut(usize, bool) -> bool) -> Self {
        let mut trainable = Vec::with_capacity(net.param_count());
        for (l, layer) in net.layers.iter().enumerate() {
            trainable.extend(std::iter::repeat(f(l, false)).take(layer.weights.len()));
            trainable.extend(std::iter::repeat(f(l, true)).take(layer.bias.len()));
        }
        ParamMask { trainable }
    }

    /// Only biases may move.
    pub fn biases_only(net: &NetworkParams) -> Self {
        ParamMask::from_fn(net, |_, is_bias| is_bias)
    }

    /// Weight matrices of layers `< frozen` are fixed; everything else moves.
    /// Freeze every parameter of the first `frozen` layers.
    pub fn freeze_prefix(net: &NetworkParams, frozen: usize) -> Self {
        ParamMask::from_fn(net, |l, _| l >= frozen)
    }

    pub fn freeze_prefix_weights(net: &NetworkParams, frozen: usize) -> Self {
        ParamMask::from_fn(net, |l, is_bias| is_bias || l >= frozen)
    }

    fn free_indices(&self) -> Vec<usize> {
        self.trainable
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| t.then_some(i))
            .collect()
    }
}

/// MSE of a network over a fixed dataset as a function of its free parameters.
pub struct NetObjective<'a> {
    net: NetworkParams,
    data: &'a Dataset,
    free: Vec<usize>,
    full: Vec<f64>,
}

impl<'a> NetObjective<'a> {
    pub fn new(net: &NetworkParams, data: &'a Dataset, mask: &ParamMask) -> Result<Self> {
        if mask.trainable.len() != net.param_count() {
            return Err(Error::Shape(format!(
                "mask has {} entries, network has {} parameters",
                mask.trainable.len(),
                net.param_count()
            )));
        }
        Ok(NetObjective {
            net: net.clone(),
            data,
            free: mask.free_indices(),
            full: net.to_flat(),
        })
    }

    pub fn initial(&self) -> Vec<f64> {
        self.free.iter().map(|&i| self.full[i]).collect()
    }

    pub fn network(&mut self, theta: &[f64]) -> NetworkParams {
        for (&i, &v) in self.free.iter().zip(theta) {
            self.full[i] = v;
        }
        self.net.assign_flat(&self.full).expect("congruent parameters");
        self.net.clone()
    }
}

impl Objective for NetObjective<'_> {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn eval(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        for (&i, &v) in self.free.iter().zip(theta) {
            self.full[i] = v;
        }
        self.net.assign_flat(&self.full)?;
        let (loss, g) = self.net.loss_and_gradient(&self.data.x, &self.data.y)?;
        let flat = g.to_flat();
        for (out, &i) in grad.iter_mut().zip(&self.free) {
            *out = flat[i];
        }
        Ok(loss)
    }
}

impl LeastSquares for NetObjective<'_> {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn residuals(&mut self, theta: &[f64], jacobian: Option<&mut DMatrix<f64>>) -> Result<DVector<f64>> {
        for (&i, &v) in self.free.iter().zip(theta) {
            self.full[i] = v;
        }
        self.net.assign_flat(&self.full)?;
        let out = match jacobian {
            Some(jac) => {
                let cols = (self.free.len() != self.full.len()).then_some(self.free.as_slice());
                self.net.output_jacobian_into(&self.data.x, cols, jac)?
            }
            None => self.net.predict(&self.data.x)?,
        };
        let r = out - &self.data.y;
        let r = DVector::from_column_slice(r.as_slice());
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                layer: self.net.layers.len() - 1,
                what: "output".into(),
            });
        }
        Ok(r)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub final_loss: f64,
    pub grad_norm: f64,
    pub steps: usize,
    pub stop: StopReason,
    /// `(step, loss)` every `log_every` steps.
    pub trace: Vec<(usize, f64)>,
}

/// Train every parameter of `init`.
pub fn train(init: &NetworkParams, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_masked(init, data, &ParamMask::all(init), cfg)
}

/// Train only the entries of `mask`; frozen entries are bit-identical afterwards.
pub fn train_masked(init: &NetworkParams, data: &Dataset, mask: &ParamMask, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if init.d_in() != data.d_in() || init.d_out() != data.d_out() {
        return Err(Error::Shape(format!(
            "network maps {} → {}, data maps {} → {}",
            init.d_in(),
            init.d_out(),
            data.d_in(),
            data.d_out()
        )));
    }
    let mut obj = NetObjective::new(init, data, mask)?;
    let mut theta = obj.initial();
    let stop = cfg.stopping();
    let mut progress = Progress::new(&theta);
    let mut reason = StopReason::Budget;

    if Objective::dim(&obj) == 0 {
        let mut g = [];
        let loss = obj.eval(&theta, &mut g)?;
        return Ok(TrainOutcome {
            params: init.clone(),
            final_loss: loss,
            grad_norm: 0.0,
            steps: 0,
            stop: StopReason::Budget,
            trace: vec![(0, loss)],
        });
    }

    if let Some(adam_cfg) = &cfg.adam {
        reason = optim::adam(&mut obj, &mut theta, adam_cfg, cfg.max_steps, &stop, &mut progress)?;
        if reason == StopReason::Diverged {
            let last_finite = obj.network(&progress.best_theta);
            return Err(Error::Divergence {
                step: progress.steps,
                last_finite: Box::new(last_finite),
            });
        }
    }
    let reached = matches!(reason, StopReason::LossTarget | StopReason::GradientTarget);
    if let (Some(refine), false) = (&cfg.refine, reached) {
        if progress.steps < cfg.max_steps {
            let mut start = progress.best_theta.clone();
            reason = match refine {
                Refine::Bfgs(qn) => optim::quasi_newton(&mut obj, &mut start, qn, cfg.max_steps, &stop, &mut progress)?,
                Refine::Lm(lm) => {
                    optim::levenberg_marquardt(&mut obj, &mut start, lm, cfg.max_steps, &stop, &mut progress)?
                }
            };
            if reason == StopReason::Diverged {
                let last_finite = obj.network(&progress.best_theta);
                return Err(Error::Divergence {
                    step: progress.steps,
                    last_finite: Box::new(last_finite),
                });
            }
        }
    }
    let best = progress.best_theta.clone();
    let params = obj.network(&best);
    let last = (progress.steps, progress.best_loss);
    if progress.trace.last() != Some(&last) {
        progress.trace.push(last);
    }
    Ok(TrainOutcome {
        params,
        final_loss: progress.best_loss,
        grad_norm: progress.last_grad_norm,
        steps: progress.steps,
        stop: reason,
        trace: progress.trace,
    })
}

/// Monotone fine-tuning of the entries selected by `mask`.
pub fn finetune(params: &NetworkParams, data: &Dataset, mask: &ParamMask, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let monotone = TrainConfig {
        adam: None,
        refine: cfg.refine.clone().or_else(|| Some(Refine::default())),
        ..cfg.clone()
    };
    train_masked(params, data, mask, &monotone)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitDistribution {
    Normal,
    Uniform,
}

/// Glorot initialisation; biases are zero.
///
/// Normal: `N(0, 2/(fan_in+fan_out))`. Uniform: `U(±√(6/(fan_in+fan_out)))`.
pub fn glorot_init(
    dims: &[usize],
    activation: Activation,
    distribution: InitDistribution,
    seed: u64,
) -> Result<NetworkParams> {
    let mut net = NetworkParams::zeros(dims, activation)?.with_seed(seed);
    let mut rng = seeds::rng(seed);
    for layer in &mut net.layers {
        let (fan_out, fan_in) = (layer.fan_out(), layer.fan_in());
        let total = (fan_in + fan_out) as f64;
        let draw: Box<dyn FnMut() -> f64> = match distribution {
            InitDistribution::Normal => {
                let d = Normal::new(0.0, (2.0 / total).sqrt()).expect("positive std");
                let rng = &mut rng;
                Box::new(move || d.sample(rng))
            }
            InitDistribution::Uniform => {
                let a = (6.0 / total).sqrt();
                let d = Uniform::new_inclusive(-a, a);
                let rng = &mut rng;
                Box::new(move || d.sample(rng))
            }
        };
        let mut draw = draw;
        let mut w = DMatrix::zeros(fan_out, fan_in);
        for i in 0..fan_out {
            for j in 0..fan_in {
                w[(i, j)] = draw();
            }
        }
        *layer = Layer {
            weights: w,
            bias: DVector::zeros(fan_out),
        };
    }
    Ok(net.with_provenance("glorot"))
}

/// Widths `[d_in, hidden…, d_out]` of a student for `data`.
pub fn student_dims(data: &Dataset, hidden: &[usize]) -> Vec<usize> {
    let mut dims = vec![data.d_in()];
    dims.extend_from_slice(hidden);
    dims.push(data.d_out());
    dims
}

/// Result of training a population of students.
#[derive(Debug, Clone)]
pub struct StudentEnsemble {
    pub students: Vec<NetworkParams>,
    pub final_losses: Vec<f64>,
    pub traces: Vec<Vec<(usize, f64)>>,
    pub steps: Vec<usize>,
    pub diverged: Vec<bool>,
    pub hidden_widths: Vec<usize>,
    pub master_seed: u64,
}

impl StudentEnsemble {
    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }

    /// Student indices from lowest to highest final loss.
    pub fn order_by_loss(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.final_losses[a].total_cmp(&self.final_losses[b]).then(a.cmp(&b)));
        idx
    }

    pub fn best(&self) -> (usize, &NetworkParams) {
        let i = self.order_by_loss()[0];
        (i, &self.students[i])
    }

    /// Write `ensemble.json` (losses, steps, seeds) and one
    /// `student_NNN.json` per student into `dir`, creating it if needed.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let index = EnsembleIndex {
            master_seed: self.master_seed,
            hidden_widths: self.hidden_widths.clone(),
            final_losses: self.final_losses.iter().map(|l| l.is_finite().then_some(*l)).collect(),
            steps: self.steps.clone(),
            diverged: self.diverged.clone(),
            traces: self.traces.clone(),
        };
        std::fs::write(dir.join("ensemble.json"), serde_json::to_string_pretty(&index)?)?;
        for (i, s) in self.students.iter().enumerate() {
            s.save(dir.join(format!("student_{i:03}.json")))?;
        }
        Ok(())
    }

    /// Inverse of [`StudentEnsemble::save_dir`].
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let index: EnsembleIndex = serde_json::from_str(&std::fs::read_to_string(dir.join("ensemble.json"))?)?;
        let n = index.final_losses.len();
        if [index.steps.len(), index.diverged.len(), index.traces.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Format("ensemble index lists differ in length".into()));
        }
        let students = (0..n)
            .map(|i| NetworkParams::load(dir.join(format!("student_{i:03}.json"))))
            .collect::<Result<Vec<_>>>()?;
        if students.iter().any(|s| s.hidden_sizes() != index.hidden_widths) {
            return Err(Error::Format("student widths disagree with the ensemble index".into()));
        }
        Ok(StudentEnsemble {
            students,
            final_losses: index.final_losses.iter().map(|l| l.unwrap_or(f64::INFINITY)).collect(),
            traces: index.traces,
            steps: index.steps,
            diverged: index.diverged,
            hidden_widths: index.hidden_widths,
            master_seed: index.master_seed,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct EnsembleIndex {
    master_seed: u64,
    hidden_widths: Vec<usize>,
    /// `null` for a diverged student, JSON having no infinity.
    final_losses: Vec<Option<f64>>,
    steps: Vec<usize>,
    diverged: Vec<bool>,
    traces: Vec<Vec<(usize, f64)>>,
}

/// Train `inits` independently (and concurrently) on `data`.
/// Divergent students keep their last finite parameters and are flagged; the
/// population fails only if every member diverges.
pub fn train_population(
    inits: Vec<NetworkParams>,
    data: &Dataset,
    mask: Option<&[ParamMask]>,
    cfg: &TrainConfig,
    master_seed: u64,
) -> Result<StudentEnsemble> {
    if inits.is_empty() {
        return Err(Error::Argument("population must contain at least one student".into()));
    }
    let hidden_widths = inits[0].hidden_sizes();
    let results: Vec<Result<(TrainOutcome, bool)>> = inits
        .par_iter()
        .enumerate()
        .map(|(i, init)| {
            let m = match mask {
                Some(masks) => masks[i].clone(),
                None => ParamMask::all(init),
            };
            match train_masked(init, data, &m, cfg) {
                Ok(out) => Ok((out, false)),
                Err(Error::Divergence { step, last_finite }) => {
                    let loss = last_finite.mse(&data.x, &data.y).unwrap_or(f64::INFINITY);
                    let loss = if loss.is_finite() { loss } else { f64::INFINITY };
                    Ok((
                        TrainOutcome {
                            params: *last_finite,
                            final_loss: loss,
                            grad_norm: f64::NAN,
                            steps: step,
                            stop: StopReason::Diverged,
                            trace: vec![(step, loss)],
                        },
                        true,
                    ))
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut ens = StudentEnsemble {
        students: Vec::with_capacity(inits.len()),
        final_losses: Vec::new(),
        traces: Vec::new(),
        steps: Vec::new(),
        diverged: Vec::new(),
        hidden_widths,
        master_seed,
    };
    for r in results {
        let (out, div) = r?;
        ens.students.push(out.params);
        ens.final_losses.push(out.final_loss);
        ens.traces.push(out.trace);
        ens.steps.push(out.steps);
        ens.diverged.push(div);
    }
    if ens.diverged.iter().all(|&d| d) {
        return Err(Error::Divergence {
            step: ens.steps.iter().copied().max().unwrap_or(0),
            last_finite: Box::new(ens.students[0].clone()),
        });
    }
    Ok(ens)
}

/// Train `n` students with the given hidden widths from Glorot-normal
/// initialisations seeded by `derive_seed(cfg.seed, STUDENT, i)`.
pub fn train_ensemble(
    hidden: &[usize],
    data: &Dataset,
    activation: Activation,
    cfg: &TrainConfig,
    n: usize,
) -> Result<StudentEnsemble> {
    if n == 0 {
        return Err(Error::Argument("ensemble needs N ≥ 1".into()));
    }
    let dims = student_dims(data, hidden);
    let inits = (0..n)
        .map(|i| {
            glorot_init(
                &dims,
                activation,
                InitDistribution::Normal,
                derive_seed(cfg.seed, stream::STUDENT, i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    train_population(inits, data, None, cfg, cfg.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub train: TrainConfig,
    /// A width qualifies when its probe loss is at most `tau · var(Y)`.
    pub tau: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            train: TrainConfig::monotone(200),
            tau: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub chosen: usize,
    pub widths: Vec<usize>,
    pub losses: Vec<f64>,
    pub threshold: f64,
    /// Set when no width reached the threshold.
    pub warning: bool,
}

/// Smallest width whose loss is below `threshold`, otherwise the width with
/// the lowest loss (flagged).
pub fn choose_width(widths: &[usize], losses: &[f64], threshold: f64) -> Result<(usize, bool)> {
    if widths.is_empty() || widths.len() != losses.len() {
        return Err(Error::Argument(
            "probe needs one loss per width and at least one width".into(),
        ));
    }
    if let Some(i) = losses.iter().position(|&l| l <= threshold) {
        return Ok((widths[i], false));
    }
    let best = (0..widths.len())
        .min_by(|&a, &b| losses[a].total_cmp(&losses[b]))
        .expect("non-empty");
    Ok((widths[best], true))
}

/// Short training runs of increasing width (shallow students, or `depth`
/// equal-width hidden layers).
pub fn probe_expansion(
    data: &Dataset,
    widths: &[usize],
    depth: usize,
    activation: Activation,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if widths.is_empty() {
        return Err(Error::Argument("probe needs at least one width".into()));
    }
    if widths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("probe widths must be strictly ascending".into()));
    }
    let threshold = cfg.tau * data.target_variance();
    let losses = widths
        .par_iter()
        .map(|&w| {
            let dims = student_dims(data, &vec![w; depth.max(1)]);
            let init = glorot_init(
                &dims,
                activation,
                InitDistribution::Normal,
                derive_seed(cfg.train.seed, stream::PROBE, w as u64),
            )?;
            match train(&init, data, &cfg.train) {
                Ok(out) => Ok(out.final_loss),
                Err(Error::Divergence { .. }) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let (chosen, warning) = choose_width(widths, &losses, threshold)?;
    if warning {
        log::warn!("no probe width reached loss {threshold:e}; using width {chosen}");
    }
    Ok(ProbeResult {
        chosen,
        widths: widths.to_vec(),
        losses,
        threshold,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher::{gen_dataset, sample_shallow_teacher, TeacherSpec};

    #[test]
    fn ensembles_survive_a_directory_round_trip() {
        let (_, d) = small_data(40);
        let mut ens = train_ensemble(&[3], &d, Activation::G, &TrainConfig::monotone(5).with_seed(41), 3).unwrap();
        ens.final_losses[1] = f64::INFINITY;
        ens.diverged[1] = true;
        let dir = std::env::temp_dir().join(format!("expclust_ens_{}", std::process::id()));
        ens.save_dir(&dir).unwrap();
        let back = StudentEnsemble::load_dir(&dir).unwrap();
        assert_eq!(back.students, ens.students);
        assert_eq!(back.final_losses, ens.final_losses);
        assert_eq!(
            (back.steps, back.diverged, back.traces),
            (ens.steps, ens.diverged, ens.traces)
        );
        assert_eq!(
            (back.hidden_widths, back.master_seed),
            (ens.hidden_widths, ens.master_seed)
        );
        std::fs::remove_file(dir.join("student_002.json")).unwrap();
        assert!(StudentEnsemble::load_dir(&dir).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    fn small_data(seed: u64) -> (NetworkParams, Dataset) {
        let mut s = TeacherSpec::shallow(2, 2, Activation::G, seed);
        s.construction_samples = 2000;
        let t = sample_shallow_teacher(&s).unwrap();
        let d = gen_dataset(&t, 500, seed).unwrap();
        (t, d)
    }

    #[test]
    fn glorot_std_matches_formula() {
        let net = glorot_init(&[4, 16], Activation::Tanh, InitDistribution::Normal, 1).unwrap();
        assert_eq!(net.layers[0].bias, DVector::zeros(16));
        let target = (2.0f64 / 20.0).sqrt();
        assert!((target - 0.3162).abs() < 1e-4);
        let big = glorot_init(&[4, 16], Activation::Tanh, InitDistribution::Normal, 2).unwrap();
        let _ = big;
        // 10^5 samples: 4·16·1563 ≈ 1e5
        let mut vals = Vec::new();
        for s in 0..1563 {
            let n = glorot_init(&[4, 16], Activation::Tanh, InitDistribution::Normal, 100 + s).unwrap();
            vals.extend(n.layers[0].weights.iter().copied());
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((std / target - 1.0).abs() < 0.02, "{std}");

        let u = glorot_init(&[4, 16], Activation::Tanh, InitDistribution::Uniform, 3).unwrap();
        let a = (6.0f64 / 20.0).sqrt();
        assert!(u.layers[0].weights.iter().all(|v| v.abs() <= a));
    }

    #[test]
    fn training_from_the_teacher_stops_immediately() {
        let (t, d) = small_data(1);
        let out = train(&t, &d, &TrainConfig::default()).unwrap();
        assert_eq!(out.steps, 0);
        assert!(out.final_loss <= 1e-24);
        assert_eq!(out.stop, StopReason::LossTarget);
    }

    #[test]
    fn full_freeze_returns_input() {
        let (t, d) = small_data(2);
        let init = glorot_init(&[2, 3, 1], Activation::G, InitDistribution::Normal, 4).unwrap();
        let out = finetune(&init, &d, &ParamMask::none(&init), &TrainConfig::default()).unwrap();
        assert_eq!(out.params, init);
        let _ = t;
    }

    #[test]
    fn masked_entries_are_bit_identical() {
        let (_, d) = small_data(3);
        let init = glorot_init(&[2, 4, 1], Activation::G, InitDistribution::Normal, 5).unwrap();
        let mask = ParamMask::freeze_prefix_weights(&init, 1);
        let out = train_masked(&init, &d, &mask, &TrainConfig::monotone(50)).unwrap();
        assert_eq!(out.params.layers[0].weights, init.layers[0].weights);
        assert_ne!(out.params.layers[0].bias, init.layers[0].bias);
        let bias_mask = ParamMask::biases_only(&init);
        let out = train_masked(&init, &d, &bias_mask, &TrainConfig::monotone(20)).unwrap();
        assert_eq!(out.params.layers[1].weights, init.layers[1].weights);
    }

    #[test]
    fn finetune_trace_is_monotone() {
        let (_, d) = small_data(4);
        let init = glorot_init(&[2, 4, 1], Activation::G, InitDistribution::Normal, 6).unwrap();
        let cfg = TrainConfig {
            log_every: 1,
            ..TrainConfig::monotone(200)
        };
        let out = finetune(&init, &d, &ParamMask::all(&init), &cfg).unwrap();
        assert!(out.trace.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn linear_student_reaches_least_squares_solution() {
        let teacher = NetworkParams::new(
            vec![
                Layer::new(
                    DMatrix::from_row_slice(1, 3, &[0.7, -1.1, 0.4]),
                    DVector::from_vec(vec![0.3]),
                )
                .unwrap(),
                Layer::new(DMatrix::from_row_slice(1, 1, &[1.5]), DVector::from_vec(vec![-0.2])).unwrap(),
            ],
            Activation::Identity,
        )
        .unwrap();
        let d = gen_dataset(&teacher, 400, 9).unwrap();
        let init = glorot_init(&[3, 1, 1], Activation::Identity, InitDistribution::Normal, 1).unwrap();
        let out = train(&init, &d, &TrainConfig::default()).unwrap();
        assert!(out.final_loss <= 1e-20, "{}", out.final_loss);

        // closed-form least squares on [x, 1]
        let n = d.len();
        let design = DMatrix::from_fn(n, 4, |i, j| if j < 3 { d.x[(i, j)] } else { 1.0 });
        let gram = design.transpose() * &design;
        let rhs = design.transpose() * &d.y;
        let coef = gram.cholesky().unwrap().solve(&rhs);
        let p = &out.params;
        let a = p.layers[1].weights[(0, 0)];
        for j in 0..3 {
            assert!((a * p.layers[0].weights[(0, j)] - coef[j]).abs() < 1e-8);
        }
        let c = a * p.layers[0].bias[0] + p.layers[1].bias[0];
        assert!((c - coef[3]).abs() < 1e-8);
    }

    #[test]
    fn ensembles_are_deterministic() {
        let (_, d) = small_data(5);
        let cfg = TrainConfig {
            adam: Some(AdamConfig {
                steps: 30,
                ..Default::default()
            }),
            refine: Some(Refine::Bfgs(QuasiNewtonConfig {
                steps: 30,
                ..Default::default()
            })),
            max_steps: 60,
            seed: 17,
            ..Default::default()
        };
        let a = train_ensemble(&[4], &d, Activation::G, &cfg, 3).unwrap();
        let b = train_ensemble(&[4], &d, Activation::G, &cfg, 3).unwrap();
        assert_eq!(a.students, b.students);
        assert_eq!(a.final_losses, b.final_losses);
        assert_eq!(a.len(), 3);
        let order = a.order_by_loss();
        assert!(order.windows(2).all(|w| a.final_losses[w[0]] <= a.final_losses[w[1]]));
    }

    #[test]
    fn divergence_is_reported_with_finite_params() {
        let (_, d) = small_data(6);
        let init = glorot_init(&[2, 3, 1], Activation::Relu, InitDistribution::Normal, 7).unwrap();
        let cfg = TrainConfig {
            adam: Some(AdamConfig {
                lr: 1e200,
                steps: 100,
                patience: 1000,
                ..Default::default()
            }),
            refine: None,
            max_steps: 100,
            ..Default::default()
        };
        match train(&init, &d, &cfg) {
            Err(Error::Divergence { last_finite, .. }) => {
                assert!(last_finite.to_flat().iter().all(|v| v.is_finite()));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn choose_width_prefers_smallest_qualifying() {
        let widths = [4, 8, 16, 32];
        // monotone decrease then flat tail
        let losses = [1e-2, 1e-9, 1e-12, 1e-12];
        assert_eq!(choose_width(&widths, &losses, 1e-6).unwrap(), (8, false));
        assert_eq!(choose_width(&widths, &[1.0, 0.5, 0.1, 0.2], 1e-6).unwrap(), (16, true));
        assert!(choose_width(&[], &[], 1.0).is_err());
    }

    #[test]
    fn probe_with_tiny_budget_warns() {
        let (_, d) = small_data(7);
        let cfg = ProbeConfig {
            train: TrainConfig {
                adam: Some(AdamConfig {
                    steps: 2,
                    ..Default::default()
                }),
                refine: None,
                max_steps: 2,
                ..Default::default()
            },
            tau: 1e-6,
        };
        let res = probe_expansion(&d, &[2], 1, Activation::G, &cfg).unwrap();
        assert!(res.warning);
        assert_eq!(res.chosen, 2);
        assert!(probe_expansion(&d, &[], 1, Activation::G, &cfg).is_err());
    }
}
