//! Full-batch first- and quasi-second-order minimisers over flat parameter
//! vectors.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

/// A smooth objective over a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Value at `theta`, writing the gradient into `grad`.
    fn eval(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<f64>;
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Why a minimiser stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum StopReason {
    LossTarget,
    GradientTarget,
    Budget,
    /// The line search could not make progress at machine precision.
    Stalled,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct Stopping {
    pub loss_stop: f64,
    pub grad_stop: f64,
    pub log_every: usize,
}

/// Running state shared by the optimiser phases: best point, trace, step count.
#[derive(Debug, Clone)]
pub struct Progress {
    pub best_theta: Vec<f64>,
    pub best_loss: f64,
    pub last_grad_norm: f64,
    pub steps: usize,
    pub trace: Vec<(usize, f64)>,
}

impl Progress {
    pub fn new(theta: &[f64]) -> Self {
        Progress {
            best_theta: theta.to_vec(),
            best_loss: f64::INFINITY,
            last_grad_norm: f64::INFINITY,
            steps: 0,
            trace: Vec::new(),
        }
    }

    fn record(&mut self, theta: &[f64], loss: f64, grad_norm: f64, stop: &Stopping) {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_theta.copy_from_slice(theta);
        }
        self.last_grad_norm = grad_norm;
        if stop.log_every > 0 && self.steps.is_multiple_of(stop.log_every) {
            self.trace.push((self.steps, loss));
        }
    }

    fn done(&self, loss: f64, grad_norm: f64, stop: &Stopping) -> Option<StopReason> {
        if loss <= stop.loss_stop {
            Some(StopReason::LossTarget)
        } else if grad_norm <= stop.grad_stop {
            Some(StopReason::GradientTarget)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps without a relative improvement of `1e-3` before the rate is decayed.
    pub patience: usize,
    pub decay: f64,
    pub min_lr: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-2,
            steps: 3000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-12,
            patience: 200,
            decay: 0.5,
            min_lr: 1e-5,
        }
    }
}

/// Adam with plateau-triggered learning-rate decay. Starts from `theta`,
/// leaves the last iterate in `theta`; the best iterate lives in `progress`.
pub fn adam<O: Objective>(
    obj: &mut O,
    theta: &mut [f64],
    cfg: &AdamConfig,
    max_steps: usize,
    stop: &Stopping,
    progress: &mut Progress,
) -> Result<StopReason> {
    let n = theta.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut lr = cfg.lr;
    let mut plateau_ref = f64::INFINITY;
    let mut since = 0usize;
    let limit = progress.steps + cfg.steps.min(max_steps.saturating_sub(progress.steps));
    let mut t = 0i32;
    loop {
        let loss = match obj.eval(theta, &mut g) {
            Ok(l) => l,
            Err(crate::error::Error::Numeric { .. }) => return Ok(StopReason::Diverged),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Ok(StopReason::Diverged);
        }
        let gn = norm(&g);
        progress.record(theta, loss, gn, stop);
        if let Some(reason) = progress.done(loss, gn, stop) {
            return Ok(reason);
        }
        if progress.steps >= limit {
            return Ok(StopReason::Budget);
        }
        if loss < plateau_ref * (1.0 - 1e-3) {
            plateau_ref = loss;
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience && lr > cfg.min_lr {
                lr = (lr * cfg.decay).max(cfg.min_lr);
                since = 0;
                plateau_ref = loss;
            }
        }
        t = t.saturating_add(1);
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            theta[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
        }
        progress.steps += 1;
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuasiNewtonConfig {
    pub steps: usize,
    /// Above this many parameters the limited-memory variant is used.
    pub dense_limit: usize,
    pub memory: usize,
}

impl Default for QuasiNewtonConfig {
    fn default() -> Self {
        QuasiNewtonConfig {
            steps: 5000,
            dense_limit: 1500,
            memory: 30,
        }
    }
}

const WOLFE_C1: f64 = 1e-4;
const WOLFE_C2: f64 = 0.9;

struct Trial {
    alpha: f64,
    f: f64,
    dg: f64,
    g: Vec<f64>,
}

struct LineSearch<'a, O: Objective> {
    obj: &'a mut O,
    x: &'a [f64],
    p: &'a [f64],
    f0: f64,
    dg0: f64,
    buf: Vec<f64>,
    evals: usize,
}

impl<'a, O: Objective> LineSearch<'a, O> {
    fn eval(&mut self, alpha: f64) -> Result<Trial> {
        for ((b, x), p) in self.buf.iter_mut().zip(self.x).zip(self.p) {
            *b = x + alpha * p;
        }
        let mut g = vec![0.0; self.x.len()];
        self.evals += 1;
        let f = match self.obj.eval(&self.buf, &mut g) {
            Ok(f) if f.is_finite() && g.iter().all(|v| v.is_finite()) => f,
            Ok(_) | Err(crate::error::Error::Numeric { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let dg = if f.is_finite() { dot(&g, self.p) } else { f64::NAN };
        Ok(Trial { alpha, f, dg, g })
    }

    fn armijo(&self, t: &Trial) -> bool {
        t.f <= self.f0 + WOLFE_C1 * t.alpha * self.dg0
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.dg.abs() <= -WOLFE_C2 * self.dg0
    }

    /// Strong-Wolfe search (bracketing then zoom with cubic interpolation).
    /// Falls back to the best decreasing trial when the conditions cannot be
    /// met at machine precision.
    fn run(mut self, alpha0: f64) -> Result<Option<Trial>> {
        let mut prev = Trial {
            alpha: 0.0,
            f: self.f0,
            dg: self.dg0,
            g: Vec::new(),
        };
        let mut alpha = alpha0;
        let mut best: Option<Trial> = None;
        for i in 0..25 {
            let t = self.eval(alpha)?;
            if t.f < self.f0 && best.as_ref().is_none_or(|b| t.f < b.f) {
                best = Some(Trial { g: t.g.clone(), ..t });
            }
            if !t.f.is_finite() {
                return self.zoom(prev, t, best);
            }
            if !self.armijo(&t) || (i > 0 && t.f >= prev.f) {
                return self.zoom(prev, t, best);
            }
            if self.curvature(&t) {
                return Ok(Some(t));
            }
            if t.dg >= 0.0 {
                return self.zoom(t, prev, best);
            }
            alpha = t.alpha * 2.0;
            prev = t;
        }
        Ok(best)
    }

    fn zoom(&mut self, mut lo: Trial, mut hi: Trial, mut best: Option<Trial>) -> Result<Option<Trial>> {
        for _ in 0..30 {
            let width = hi.alpha - lo.alpha;
            if width.abs() <= 1e-16 * lo.alpha.abs().max(1e-300) {
                break;
            }
            let mut a = cubic_min(&lo, &hi).unwrap_or(lo.alpha + 0.5 * width);
            let (left, right) = if lo.alpha < hi.alpha {
                (lo.alpha, hi.alpha)
            } else {
                (hi.alpha, lo.alpha)
            };
            let margin = 0.1 * (right - left);
            if !(a > left + margin && a < right - margin) {
                a = lo.alpha + 0.5 * width;
            }
            let t = self.eval(a)?;
            if t.f < self.f0 && best.as_ref().is_none_or(|b| t.f < b.f) {
                best = Some(Trial { g: t.g.clone(), ..t });
            }
            if !t.f.is_finite() || !self.armijo(&t) || t.f >= lo.f {
                hi = t;
            } else {
                if self.curvature(&t) {
                    return Ok(Some(t));
                }
                if t.dg * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
        }
        Ok(best)
    }
}

/// Minimiser of the cubic interpolating value and slope at both ends.
fn cubic_min(a: &Trial, b: &Trial) -> Option<f64> {
    if !(a.f.is_finite() && b.f.is_finite() && a.dg.is_finite() && b.dg.is_finite()) {
        return None;
    }
    let d1 = a.dg + b.dg - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.dg * b.dg;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let denom = b.dg - a.dg + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let x = b.alpha - (b.alpha - a.alpha) * (b.dg + d2 - d1) / denom;
    x.is_finite().then_some(x)
}

enum Curvature {
    Dense {
        h: Vec<f64>,
        n: usize,
    },
    Limited {
        s: Vec<Vec<f64>>,
        y: Vec<Vec<f64>>,
        memory: usize,
        gamma: f64,
    },
}

impl Curvature {
    fn new(n: usize, cfg: &QuasiNewtonConfig) -> Self {
        if n <= cfg.dense_limit {
            let mut h = vec![0.0; n * n];
            for i in 0..n {
                h[i * n + i] = 1.0;
            }
            Curvature::Dense { h, n }
        } else {
            Curvature::Limited {
                s: Vec::new(),
                y: Vec::new(),
                memory: cfg.memory.max(1),
                gamma: 1.0,
            }
        }
    }

    fn reset(&mut self, scale: f64) {
        match self {
            Curvature::Dense { h, n } => {
                h.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..*n {
                    h[i * *n + i] = scale;
                }
            }
            Curvature::Limited { s, y, gamma, .. } => {
                s.clear();
                y.clear();
                *gamma = scale;
            }
        }
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        match self {
            Curvature::Dense { h, n } => (0..*n).map(|i| -dot(&h[i * n..(i + 1) * n], g)).collect(),
            Curvature::Limited { s, y, gamma, .. } => {
                let mut q = g.to_vec();
                let k = s.len();
                let mut alpha = vec![0.0; k];
                for i in (0..k).rev() {
                    let rho = 1.0 / dot(&y[i], &s[i]);
                    alpha[i] = rho * dot(&s[i], &q);
                    q.iter_mut().zip(&y[i]).for_each(|(qv, yv)| *qv -= alpha[i] * yv);
                }
                q.iter_mut().for_each(|v| *v *= *gamma);
                for i in 0..k {
                    let rho = 1.0 / dot(&y[i], &s[i]);
                    let beta = rho * dot(&y[i], &q);
                    q.iter_mut()
                        .zip(&s[i])
                        .for_each(|(qv, sv)| *qv += (alpha[i] - beta) * sv);
                }
                q.iter_mut().for_each(|v| *v = -*v);
                q
            }
        }
    }

    /// Standard inverse-Hessian update; skipped when `yᵀs` is not positive.
    fn update(&mut self, s_new: Vec<f64>, y_new: Vec<f64>, first: bool) {
        let ys = dot(&y_new, &s_new);
        let yy = dot(&y_new, &y_new);
        if !(ys > 1e-300) || !(yy > 0.0) {
            return;
        }
        match self {
            Curvature::Dense { h, n } => {
                let n = *n;
                if first {
                    let scale = ys / yy;
                    h.iter_mut().for_each(|v| *v = 0.0);
                    for i in 0..n {
                        h[i * n + i] = scale;
                    }
                }
                let rho = 1.0 / ys;
                // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
                let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y_new)).collect();
                let yhy = dot(&y_new, &hy);
                let coef = rho * rho * yhy + rho;
                for i in 0..n {
                    let row = &mut h[i * n..(i + 1) * n];
                    for j in 0..n {
                        row[j] += coef * s_new[i] * s_new[j] - rho * (hy[i] * s_new[j] + s_new[i] * hy[j]);
                    }
                }
            }
            Curvature::Limited { s, y, memory, gamma } => {
                *gamma = ys / yy;
                if s.len() == *memory {
                    s.remove(0);
                    y.remove(0);
                }
                s.push(s_new);
                y.push(y_new);
            }
        }
    }
}

/// BFGS (dense inverse Hessian, or limited memory above `dense_limit`
/// parameters) with a strong-Wolfe line search. Monotone: every accepted
/// step decreases the objective.
pub fn quasi_newton<O: Objective>(
    obj: &mut O,
    theta: &mut [f64],
    cfg: &QuasiNewtonConfig,
    max_steps: usize,
    stop: &Stopping,
    progress: &mut Progress,
) -> Result<StopReason> {
    let n = theta.len();
    let mut g = vec![0.0; n];
    let mut f = match obj.eval(theta, &mut g) {
        Ok(l) => l,
        Err(crate::error::Error::Numeric { .. }) => return Ok(StopReason::Diverged),
        Err(e) => return Err(e),
    };
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Ok(StopReason::Diverged);
    }
    let mut curv = Curvature::new(n, cfg);
    let limit = progress.steps + cfg.steps.min(max_steps.saturating_sub(progress.steps));
    let mut first = true;
    let mut failures = 0;
    loop {
        let gn = norm(&g);
        progress.record(theta, f, gn, stop);
        if let Some(reason) = progress.done(f, gn, stop) {
            return Ok(reason);
        }
        if progress.steps >= limit {
            return Ok(StopReason::Budget);
        }
        let mut p = curv.direction(&g);
        let mut dg0 = dot(&p, &g);
        if !(dg0 < 0.0) {
            curv.reset(1.0 / gn.max(1e-300));
            first = true;
            p = curv.direction(&g);
            dg0 = dot(&p, &g);
        }
        let alpha0 = if first { (1.0 / gn).min(1.0) } else { 1.0 };
        let ls = LineSearch {
            obj: &mut *obj,
            x: theta,
            p: &p,
            f0: f,
            dg0,
            buf: vec![0.0; n],
            evals: 0,
        };
        match ls.run(alpha0)? {
            Some(t) => {
                let s: Vec<f64> = p.iter().map(|v| v * t.alpha).collect();
                let y: Vec<f64> = t.g.iter().zip(&g).map(|(a, b)| a - b).collect();
                theta.iter_mut().zip(&s).for_each(|(x, sv)| *x += sv);
                f = t.f;
                g = t.g;
                curv.update(s, y, first);
                first = false;
                failures = 0;
            }
            None => {
                failures += 1;
                if failures >= 2 {
                    return Ok(StopReason::Stalled);
                }
                curv.reset(1.0 / gn.max(1e-300));
                first = true;
            }
        }
        progress.steps += 1;
    }
}

/// A sum-of-squares objective `‖r(θ)‖² / m` exposing residuals and Jacobian.
pub trait LeastSquares {
    fn dim(&self) -> usize;

    /// Residual vector at `theta`. When `jacobian` is given it is resized if
    /// needed and overwritten with `∂r/∂θ`.
    fn residuals(&mut self, theta: &[f64], jacobian: Option<&mut DMatrix<f64>>) -> Result<DVector<f64>>;
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LmConfig {
    pub steps: usize,
    /// Initial damping relative to the largest diagonal entry of `JᵀJ`.
    pub tau: f64,
    /// Damping above which the phase is considered stalled.
    pub max_damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            steps: 1000,
            tau: 1e-3,
            max_damping: 1e20,
        }
    }
}

fn normal_equations(jac: &DMatrix<f64>, r: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    (gram(jac), jac.tr_mul(r))
}

/// `JᵀJ` from the upper block triangle only, mirrored. Reads `Jᵀ` through
/// swapped strides so the tall Jacobian is never copied.
pub fn gram(jac: &DMatrix<f64>) -> DMatrix<f64> {
    const BLOCK: usize = 48;
    let (m, p) = jac.shape();
    let mut out = DMatrix::<f64>::zeros(p, p);
    if m == 0 || p == 0 {
        return out;
    }
    let src = jac.as_ptr();
    let dst = out.as_mut_ptr();
    for i0 in (0..p).step_by(BLOCK) {
        let bi = BLOCK.min(p - i0);
        for j0 in (i0..p).step_by(BLOCK) {
            let bj = BLOCK.min(p - j0);
            // SAFETY: every pointer stays inside its column-major buffer
            // (`jac` is m × p, `out` is p × p) and the output block is
            // disjoint from both inputs.
            unsafe {
                matrixmultiply::dgemm(
                    bi,
                    m,
                    bj,
                    1.0,
                    src.add(i0 * m),
                    m as isize,
                    1,
                    src.add(j0 * m),
                    1,
                    m as isize,
                    0.0,
                    dst.add(i0 + j0 * p),
                    1,
                    p as isize,
                );
            }
        }
    }
    for j in 0..p {
        for i in (j + 1)..p {
            out[(i, j)] = out[(j, i)];
        }
    }
    out
}

/// Levenberg-Marquardt with Marquardt diagonal scaling and Nielsen's damping
/// update. Monotone: only steps that decrease the objective are accepted.
pub fn levenberg_marquardt<O: LeastSquares>(
    obj: &mut O,
    theta: &mut [f64],
    cfg: &LmConfig,
    max_steps: usize,
    stop: &Stopping,
    progress: &mut Progress,
) -> Result<StopReason> {
    let eval = |obj: &mut O, t: &[f64], jac: Option<&mut DMatrix<f64>>| match obj.residuals(t, jac) {
        Ok(v) => Ok(Some(v)),
        Err(crate::error::Error::Numeric { .. }) => Ok(None),
        Err(e) => Err(e),
    };
    // the Jacobian buffer is reused across steps; it is the dominant allocation
    let mut jac = DMatrix::zeros(0, 0);
    let Some(mut r) = eval(obj, theta, Some(&mut jac))? else {
        return Ok(StopReason::Diverged);
    };
    let m = r.len().max(1) as f64;
    let mut f = r.norm_squared() / m;
    if !f.is_finite() {
        return Ok(StopReason::Diverged);
    }
    let (mut a, mut g) = normal_equations(&jac, &r);
    let mut mu = cfg.tau * a.diagonal().max().max(f64::MIN_POSITIVE);
    let mut nu = 2.0;
    let limit = progress.steps + cfg.steps.min(max_steps.saturating_sub(progress.steps));
    loop {
        let gn = 2.0 / m * g.norm();
        progress.record(theta, f, gn, stop);
        if let Some(reason) = progress.done(f, gn, stop) {
            return Ok(reason);
        }
        if progress.steps >= limit {
            return Ok(StopReason::Budget);
        }
        if mu > cfg.max_damping {
            return Ok(StopReason::Stalled);
        }
        progress.steps += 1;
        let floor = 1e-12 * a.diagonal().max().max(f64::MIN_POSITIVE);
        let mut damped = a.clone();
        for i in 0..damped.nrows() {
            damped[(i, i)] += mu * a[(i, i)].max(floor);
        }
        let Some(chol) = damped.cholesky() else {
            mu *= nu;
            nu *= 2.0;
            continue;
        };
        let delta = chol.solve(&(-&g));
        let trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
        let new_r = match eval(obj, &trial, None)? {
            Some(nr) if nr.iter().all(|v| v.is_finite()) => nr,
            _ => {
                mu *= nu;
                nu *= 2.0;
                continue;
            }
        };
        // gain ratio: actual over predicted decrease of ½‖r‖²
        let actual = 0.5 * (r.norm_squared() - new_r.norm_squared());
        let predicted = -delta.dot(&g) - 0.5 * delta.dot(&(&a * &delta));
        let rho = if predicted > 0.0 { actual / predicted } else { -1.0 };
        if actual > 0.0 && rho > 0.0 {
            theta.copy_from_slice(&trial);
            let Some(nr) = eval(obj, theta, Some(&mut jac))? else {
                return Ok(StopReason::Diverged);
            };
            r = nr;
            f = r.norm_squared() / m;
            let (na, ng) = normal_equations(&jac, &r);
            a = na;
            g = ng;
            mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
        } else {
            mu *= nu;
            nu *= 2.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }

        fn eval(&mut self, t: &[f64], g: &mut [f64]) -> Result<f64> {
            let (x, y) = (t[0], t[1]);
            g[0] = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
            g[1] = 200.0 * (y - x * x);
            Ok((1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2))
        }
    }

    struct Quadratic(Vec<f64>);

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.0.len()
        }

        fn eval(&mut self, t: &[f64], g: &mut [f64]) -> Result<f64> {
            let mut f = 0.0;
            for i in 0..t.len() {
                g[i] = 2.0 * self.0[i] * (t[i] - 1.0);
                f += self.0[i] * (t[i] - 1.0).powi(2);
            }
            Ok(f)
        }
    }

    fn stopping() -> Stopping {
        Stopping {
            loss_stop: 1e-28,
            grad_stop: 1e-14,
            log_every: 1,
        }
    }

    #[test]
    fn bfgs_solves_rosenbrock() {
        let mut theta = vec![-1.2, 1.0];
        let mut progress = Progress::new(&theta);
        let cfg = QuasiNewtonConfig::default();
        quasi_newton(&mut Rosenbrock, &mut theta, &cfg, 500, &stopping(), &mut progress).unwrap();
        assert!(progress.best_loss < 1e-20, "{}", progress.best_loss);
        assert!((progress.best_theta[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bfgs_trace_is_monotone() {
        let mut theta = vec![-1.2, 1.0];
        let mut progress = Progress::new(&theta);
        quasi_newton(
            &mut Rosenbrock,
            &mut theta,
            &QuasiNewtonConfig::default(),
            200,
            &stopping(),
            &mut progress,
        )
        .unwrap();
        assert!(progress.trace.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn limited_memory_solves_ill_conditioned_quadratic() {
        let scales: Vec<f64> = (0..50).map(|i| 10f64.powf(i as f64 / 12.0)).collect();
        let mut obj = Quadratic(scales);
        let mut theta = vec![0.0; 50];
        let mut progress = Progress::new(&theta);
        let cfg = QuasiNewtonConfig {
            dense_limit: 10,
            ..Default::default()
        };
        quasi_newton(&mut obj, &mut theta, &cfg, 2000, &stopping(), &mut progress).unwrap();
        assert!(progress.best_loss < 1e-20, "{}", progress.best_loss);
    }

    #[test]
    fn adam_descends_and_records_best() {
        let mut theta = vec![-1.2, 1.0];
        let mut progress = Progress::new(&theta);
        let cfg = AdamConfig {
            lr: 1e-2,
            steps: 3000,
            ..Default::default()
        };
        adam(&mut Rosenbrock, &mut theta, &cfg, 3000, &stopping(), &mut progress).unwrap();
        assert!(progress.best_loss < 1e-2);
        assert_eq!(progress.steps, 3000);
    }

    #[test]
    fn cubic_interpolation_finds_quadratic_minimum() {
        // f(a) = (a − 0.3)², sampled at 0 and 1
        let lo = Trial {
            alpha: 0.0,
            f: 0.09,
            dg: -0.6,
            g: vec![],
        };
        let hi = Trial {
            alpha: 1.0,
            f: 0.49,
            dg: 1.4,
            g: vec![],
        };
        assert!((cubic_min(&lo, &hi).unwrap() - 0.3).abs() < 1e-12);
    }
}
