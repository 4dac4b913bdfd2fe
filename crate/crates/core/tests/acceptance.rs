//! Acceptance criteria of the library, one numbered check each. Runs without
//! the libtest harness so that every criterion prints exactly one PASS/FAIL
//! line in order. Pass criterion numbers as arguments to run a subset:
//! `cargo test --release --test acceptance -- 1 3 7`.

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use expclust::activation::{classify_activation_symmetry, Activation, SymmetryClass};
use expclust::cluster::{average_linkage, collapse_clusters, filter_alignment, pairwise_distances, select_threshold};
use expclust::eval::{match_neurons, LayerView};
use expclust::net::{rmse, Layer, NetworkParams};
use expclust::pipeline::{expand_and_cluster, pool_layer, PipelineConfig, Widths};
use expclust::symmetry::{affine_of_flips, reduce_student, Tolerances};
use expclust::teacher::{
    gen_dataset, sample_deep_teacher, sample_shallow_teacher, uniform_inputs, TeacherSpec, SQRT_3,
};
use expclust::trainer::{glorot_init, train, train_ensemble, InitDistribution, TrainConfig};
use expclust::Dataset;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(took: Duration, limit: Duration) -> String {
    format!("{:.2}s (limit {:.0}s)", took.as_secs_f64(), limit.as_secs_f64())
}

fn timed(limit: Duration, run: impl FnOnce() -> Outcome) -> Outcome {
    let t0 = Instant::now();
    let o = run();
    let took = t0.elapsed();
    outcome(
        o.pass && took <= limit,
        format!("{}; {}", o.detail, within(took, limit)),
    )
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn shallow(act: Activation, w: DMatrix<f64>, b: Vec<f64>, a: Vec<f64>, c: f64) -> NetworkParams {
    let m = w.nrows();
    NetworkParams::new(
        vec![
            Layer::new(w, DVector::from_vec(b)).unwrap(),
            Layer::new(DMatrix::from_row_slice(1, m, &a), DVector::from_element(1, c)).unwrap(),
        ],
        act,
    )
    .unwrap()
}

// ---------------------------------------------------------------------------

fn c1_symmetry_table() -> Outcome {
    timed(Duration::from_secs(1), || {
        let g = |x: f64| Activation::G.eval(x);
        let table: [(&str, &dyn Fn(f64) -> f64, SymmetryClass); 9] = [
            ("g", &g, SymmetryClass::None),
            ("tanh", &|x: f64| Activation::Tanh.eval(x), SymmetryClass::Odd),
            (
                "sigmoid",
                &|x: f64| Activation::Sigmoid.eval(x),
                SymmetryClass::OddConstant,
            ),
            ("gelu", &|x: f64| Activation::Gelu.eval(x), SymmetryClass::EvenLinear),
            ("silu", &|x: f64| Activation::Silu.eval(x), SymmetryClass::EvenLinear),
            (
                "softplus",
                &|x: f64| Activation::Softplus.eval(x),
                SymmetryClass::EvenLinearConstant,
            ),
            (
                "relu",
                &|x: f64| Activation::Relu.eval(x),
                SymmetryClass::EvenLinearPosScale,
            ),
            (
                "leakyrelu",
                &|x: f64| Activation::LeakyRelu.eval(x),
                SymmetryClass::EvenLinearPosScale,
            ),
            // the closed forms, independent of the library's evaluators
            (
                "relu(closed form)",
                &|x: f64| x.max(0.0),
                SymmetryClass::EvenLinearPosScale,
            ),
        ];
        let mut wrong = Vec::new();
        for (name, f, want) in table {
            match classify_activation_symmetry(f) {
                Ok(info) if info.class == want => {}
                other => wrong.push(format!("{name}: {other:?}")),
            }
        }
        outcome(
            wrong.is_empty(),
            if wrong.is_empty() {
                "9/9 classes".to_string()
            } else {
                wrong.join(", ")
            },
        )
    })
}

fn c2_gradient_check() -> Outcome {
    timed(Duration::from_secs(10), || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst: f64 = 0.0;
        for i in 0..20 {
            let act = Activation::ALL[i % Activation::ALL.len()];
            let depth = rng.gen_range(1..=3);
            let mut dims = vec![rng.gen_range(1..=8)];
            for _ in 0..depth {
                dims.push(rng.gen_range(1..=8));
            }
            dims.push(rng.gen_range(1..=3));
            let mut net = glorot_init(&dims, act, InitDistribution::Normal, i as u64).unwrap();
            let mut theta = net.to_flat();
            for t in theta.iter_mut() {
                *t += 0.3 * normal(&mut rng);
            }
            net.assign_flat(&theta).unwrap();
            let x = DMatrix::from_fn(40, dims[0], |_, _| rng.gen_range(-SQRT_3..SQRT_3));
            let y = DMatrix::from_fn(40, *dims.last().unwrap(), |_, _| normal(&mut rng));
            let (_, grad) = net.loss_and_gradient(&x, &y).unwrap();
            let grad = grad.to_flat();
            let h = 1e-6;
            let fd: Vec<f64> = (0..theta.len())
                .map(|k| {
                    let mut p = theta.clone();
                    p[k] += h;
                    let mut plus = net.clone();
                    plus.assign_flat(&p).unwrap();
                    p[k] -= 2.0 * h;
                    let mut minus = net.clone();
                    minus.assign_flat(&p).unwrap();
                    (plus.mse(&x, &y).unwrap() - minus.mse(&x, &y).unwrap()) / (2.0 * h)
                })
                .collect();
            let diff: f64 = grad.iter().zip(&fd).map(|(g, f)| (g - f).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = fd.iter().map(|f| f * f).sum::<f64>().sqrt().max(1e-12);
            worst = worst.max(diff / scale);
        }
        outcome(
            worst <= 1e-5,
            format!("worst relative error {worst:.2e} over 20 nets (tol 1e-5)"),
        )
    })
}

fn c3_exact_reduction() -> Outcome {
    timed(Duration::from_secs(5), || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d_in = 3;
        // teacher: 4 relu neurons
        let tw = DMatrix::from_fn(4, d_in, |_, _| normal(&mut rng));
        let tb: Vec<f64> = (0..4).map(|_| 0.5 * normal(&mut rng)).collect();
        let ta: Vec<f64> = vec![1.0, -0.7, 0.9, 1.3];
        let tc = 0.2;
        let teacher = shallow(Activation::Relu, tw.clone(), tb.clone(), ta.clone(), tc);

        let mut sw: Vec<Vec<f64>> = Vec::new();
        let mut sb = Vec::new();
        let mut sa = Vec::new();
        let row = |k: usize, s: f64| -> Vec<f64> { tw.row(k).iter().map(|v| v * s).collect() };
        // neuron 0 split into two positively scaled duplicates
        sw.push(row(0, 1.0));
        sb.push(tb[0]);
        sa.push(0.3 * ta[0]);
        sw.push(row(0, 2.0));
        sb.push(2.0 * tb[0]);
        sa.push(0.35 * ta[0]);
        // neuron 1 sign flipped: a·relu(u) = a·relu(−u) + a·u
        sw.push(row(1, -1.0));
        sb.push(-tb[1]);
        sa.push(ta[1]);
        // a·w1·x from two opposite-orientation pairs, a·b1 into the output bias
        let z: Vec<f64> = (0..d_in).map(|_| normal(&mut rng)).collect();
        for s in [1.0, -1.0] {
            let v: Vec<f64> = (0..d_in).map(|j| 0.5 * tw[(1, j)] + s * z[j]).collect();
            sw.push(v.clone());
            sb.push(0.0);
            sa.push(ta[1]);
            sw.push(v.iter().map(|x| -x).collect());
            sb.push(0.0);
            sa.push(-ta[1]);
        }
        let out_bias = tc + ta[1] * tb[1];
        // neurons 2 and 3 as they are
        for k in [2, 3] {
            sw.push(row(k, 1.0));
            sb.push(tb[k]);
            sa.push(ta[k]);
        }
        // zero group: same orientation, cancelling output weights
        let q: Vec<f64> = (0..d_in).map(|_| normal(&mut rng)).collect();
        sw.push(q.clone());
        sb.push(0.4);
        sa.push(0.5);
        sw.push(q.iter().map(|x| 3.0 * x).collect());
        sb.push(1.2);
        sa.push(-0.5 / 3.0);
        // offbound: pre-activation below zero on the whole input cube
        let o: Vec<f64> = (0..d_in).map(|_| normal(&mut rng)).collect();
        let reach: f64 = o.iter().map(|v| v.abs()).sum::<f64>() * SQRT_3;
        sw.push(o);
        sb.push(-reach - 1.0);
        sa.push(2.0);
        assert_eq!(sw.len(), 12);
        let student = shallow(
            Activation::Relu,
            DMatrix::from_fn(12, d_in, |i, j| sw[i][j]),
            sb,
            sa,
            out_bias,
        );
        let x = uniform_inputs(30_000, d_in, SQRT_3, 33);
        let data = Dataset::from_teacher(&teacher, x.clone(), 0).unwrap();
        let pre = (student.predict(&x).unwrap() - &data.y).amax();
        let tol = Tolerances {
            equiv_abs: Some(1e-10),
            ..Default::default()
        };
        let reduced = match reduce_student(&student, &data, &tol) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("reduction failed: {e}")),
        };
        let stage_dev = reduced.stages.iter().map(|s| s.max_deviation).fold(0.0, f64::max);
        let net = reduced.fold_bias();
        let m = net.layers[0].fan_out();
        // teacher neuron k ↔ reduced neuron with w' = s·w, b' = s·b, a' = a/s, s > 0
        let mut param_err: f64 = 0.0;
        let mut used = vec![false; m];
        for k in 0..4 {
            let tn = tw.row(k).norm();
            let best = (0..m)
                .filter(|&j| !used[j])
                .map(|j| {
                    let rn = net.layers[0].weights.row(j).norm();
                    let s = rn / tn;
                    let dw = (net.layers[0].weights.row(j) - tw.row(k) * s).amax();
                    let db = (net.layers[0].bias[j] - tb[k] * s).abs();
                    let da = (net.layers[1].weights[(0, j)] * s - ta[k]).abs();
                    (j, dw.max(db).max(da))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match best {
                Some((j, e)) => {
                    used[j] = true;
                    param_err = param_err.max(e);
                }
                None => param_err = f64::INFINITY,
            }
        }
        let theta = reduced.residual.theta.amax();
        let bias_err = (net.layers[1].bias[0] - tc).abs();
        let pass =
            pre <= 1e-12 && m == 4 && param_err <= 1e-10 && stage_dev <= 1e-10 && theta <= 1e-10 && bias_err <= 1e-10;
        outcome(
            pass,
            format!(
                "12 → {m} neurons, parameter error {param_err:.1e}, max stage deviation {stage_dev:.1e}, ‖Θ‖∞ {theta:.1e}"
            ),
        )
    })
}

fn c4_planted_clusters() -> Outcome {
    timed(Duration::from_secs(10), || {
        let (d_in, r, n) = (4, 4, 10);
        let mut failures = Vec::new();
        for act in [Activation::G, Activation::Tanh] {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let teacher = sample_shallow_teacher(&TeacherSpec::shallow(d_in, r, act, 40)).unwrap();
            let students: Vec<NetworkParams> = (0..n)
                .map(|_| {
                    let m = 3 * r;
                    let mut order: Vec<usize> = (0..m).collect();
                    order.shuffle(&mut rng);
                    let mut w = DMatrix::zeros(m, d_in);
                    let mut b = vec![0.0; m];
                    let mut a = vec![0.0; m];
                    for (slot, &k) in order.iter().enumerate() {
                        if k < r {
                            for j in 0..d_in {
                                w[(slot, j)] = teacher.layers[0].weights[(k, j)] + 1e-6 * normal(&mut rng);
                            }
                            b[slot] = teacher.layers[0].bias[k] + 1e-6 * normal(&mut rng);
                            a[slot] = teacher.layers[1].weights[(0, k)] + 1e-6 * normal(&mut rng);
                        } else {
                            // half inert (near-zero weights, constant look-alikes), half
                            // scattered far out with log-uniform norms
                            let scale = if k % 2 == 0 {
                                10f64.powf(rng.gen_range(-4.0..-2.0))
                            } else {
                                10f64.powf(rng.gen_range(1.0..3.0))
                            };
                            let mut v: Vec<f64> = (0..=d_in).map(|_| normal(&mut rng)).collect();
                            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                            v.iter_mut().for_each(|x| *x *= scale / norm);
                            for j in 0..d_in {
                                w[(slot, j)] = v[j];
                            }
                            b[slot] = v[d_in];
                            a[slot] = 0.1 * normal(&mut rng);
                        }
                    }
                    shallow(act, w, b, a, teacher.layers[1].bias[0])
                })
                .collect();
            let losses: Vec<f64> = (0..n).map(|i| 1e-12 * (1.0 + i as f64)).collect();
            let pool = pool_layer(&students, 0).unwrap();
            let dist = pairwise_distances(&pool.vectors, pool.metric).unwrap();
            let dendro = average_linkage(&dist.matrix).unwrap();
            let weights: Vec<Vec<f64>> = pool.neurons.iter().map(|p| p.w.iter().copied().collect()).collect();
            // the canonical teacher, for comparison with the collapsed layer
            let canon_teacher = pool_layer(std::slice::from_ref(&teacher), 0).unwrap();
            for gamma in [0.5, 0.8] {
                for beta in [PI / 24.0, PI / 6.0] {
                    let result = select_threshold(&dendro, gamma, n)
                        .and_then(|sel| filter_alignment(&sel, &dendro, &weights, &pool.refs, beta, gamma, n))
                        .and_then(|rep| collapse_clusters(&rep, &pool.neurons, &losses).map(|c| (rep, c)));
                    let (rep, layer) = match result {
                        Ok(v) => v,
                        Err(e) => {
                            failures.push(format!("{act} γ={gamma} β={beta:.3}: {e}"));
                            continue;
                        }
                    };
                    if rep.kept_count() != r {
                        failures.push(format!("{act} γ={gamma} β={beta:.3}: {} clusters", rep.kept_count()));
                        continue;
                    }
                    let mut err: f64 = 0.0;
                    for t in &canon_teacher.neurons {
                        let best = (0..r)
                            .map(|k| {
                                let dw = (layer.weights.row(k).transpose() - &t.w).amax();
                                let db = (layer.bias[k] - t.b).abs();
                                let da = (layer.out_weights.column(k) - &t.a).amax();
                                dw.max(db).max(da)
                            })
                            .fold(f64::INFINITY, f64::min);
                        err = err.max(best);
                    }
                    if err > 1e-5 {
                        failures.push(format!("{act} γ={gamma} β={beta:.3}: layer error {err:.1e}"));
                    }
                }
            }
        }
        let detail = if failures.is_empty() {
            "r clusters and the layer within 1e-5 for g and tanh at every γ, β".to_string()
        } else {
            failures.join("; ")
        };
        outcome(failures.is_empty(), detail)
    })
}

/// The shallow g-teacher used by the end-to-end checks.
fn benchmark_task(seed: u64) -> (NetworkParams, Dataset) {
    let teacher = sample_shallow_teacher(&TeacherSpec::shallow(4, 4, Activation::G, seed)).unwrap();
    let data = gen_dataset(&teacher, 30_000, seed).unwrap();
    (teacher, data)
}

const STUDENT_STEPS: usize = 300;

fn c5_end_to_end() -> Outcome {
    let t0 = Instant::now();
    let mut good = 0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let (_, data) = benchmark_task(seed);
        let cfg = PipelineConfig {
            n_students: 10,
            gamma: 0.5,
            beta: PI / 24.0,
            widths: Widths::Rho { rho: 4, base: vec![4] },
            ensemble: TrainConfig::monotone(STUDENT_STEPS),
            seed,
            ..Default::default()
        };
        match expand_and_cluster(&data, &cfg, 1) {
            Ok(res) => {
                let m = res.hidden_sizes()[0];
                let e = rmse(&res.network, &data).unwrap();
                let ok = (4..=5).contains(&m) && e <= 1e-6;
                good += ok as usize;
                lines.push(format!("{seed}:{m}/{e:.0e}"));
            }
            Err(e) => lines.push(format!("{seed}:error({e})")),
        }
    }
    outcome(
        good >= 8,
        format!(
            "{good}/10 runs with m̂ ∈ {{4,5}} and RMSE ≤ 1e-6 [{}]; {:.0}s",
            lines.join(" "),
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn c6_overparameterisation_helps() -> Outcome {
    let t0 = Instant::now();
    let (_, data) = benchmark_task(0);
    let cfg = TrainConfig::monotone(STUDENT_STEPS);
    let run = |width: usize, seed: u64| -> f64 {
        let init = glorot_init(&[4, width, 1], Activation::G, InitDistribution::Normal, seed).unwrap();
        match train(&init, &data, &cfg.clone().with_seed(seed)) {
            Ok(out) => out.final_loss,
            Err(_) => f64::INFINITY,
        }
    };
    let mut converged = [0usize; 2];
    let mut stuck_rho1 = 0;
    for seed in 0..20u64 {
        let l1 = run(4, 600 + seed);
        let l4 = run(16, 600 + seed);
        converged[0] += (l1 <= 1e-8) as usize;
        converged[1] += (l4 <= 1e-8) as usize;
        stuck_rho1 += (l1 >= 1e-4) as usize;
    }
    outcome(
        converged[1] > converged[0] && stuck_rho1 >= 1,
        format!(
            "loss ≤ 1e-8 in {}/20 runs at ρ=4 vs {}/20 at ρ=1; {stuck_rho1} runs at ρ=1 end ≥ 1e-4; {:.0}s",
            converged[1],
            converged[0],
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn c7_flip_rank() -> Outcome {
    timed(Duration::from_secs(1), || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut bad = Vec::new();
        let mut cases = 0;
        for k in 0..=6usize {
            for d_in in 2..=5usize {
                for d_out in 2..=5usize {
                    let flipped: Vec<(DVector<f64>, DVector<f64>, f64)> = (0..k)
                        .map(|_| {
                            (
                                DVector::from_fn(d_out, |_, _| normal(&mut rng)),
                                DVector::from_fn(d_in, |_, _| normal(&mut rng)),
                                normal(&mut rng),
                            )
                        })
                        .collect();
                    let acc = affine_of_flips(&flipped, Activation::Relu.c1()).unwrap();
                    cases += 1;
                    if acc.rank(1e-10) != k.min(d_in).min(d_out) {
                        bad.push(format!("K={k} d_in={d_in} d_out={d_out}: rank {}", acc.rank(1e-10)));
                    }
                }
            }
        }
        outcome(
            bad.is_empty(),
            if bad.is_empty() {
                format!("{cases} shapes")
            } else {
                bad.join(", ")
            },
        )
    })
}

fn brute_force(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], i: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if i == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(cost, i + 1, used, acc + cost[i][j], best);
                used[j] = false;
            }
        }
    }
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    // enumerate from the smaller side
    let c: Vec<Vec<f64>> = if rows <= cols {
        cost.to_vec()
    } else {
        (0..cols).map(|j| (0..rows).map(|i| cost[i][j]).collect()).collect()
    };
    let mut best = f64::INFINITY;
    go(&c, 0, &mut vec![false; rows.max(cols)], 0.0, &mut best);
    best
}

fn naive_cos_distance(a: &[f64], b: &[f64], absolute: bool) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let c = (dot / (na * nb)).clamp(-1.0, 1.0);
    if absolute {
        1.0 - c.abs()
    } else {
        1.0 - c
    }
}

fn c8_matching() -> Outcome {
    timed(Duration::from_secs(5), || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let classes = [
            SymmetryClass::None,
            SymmetryClass::Odd,
            SymmetryClass::EvenLinear,
            SymmetryClass::EvenLinearPosScale,
        ];
        let mut worst: f64 = 0.0;
        let mut ambiguous = 0;
        for i in 0..200 {
            let class = classes[i % classes.len()];
            let d = rng.gen_range(2..=4);
            let r = rng.gen_range(1..=7);
            let m = rng.gen_range(1..=7);
            let teacher = LayerView {
                w: DMatrix::from_fn(r, d, |_, _| normal(&mut rng)),
                b: (0..r).map(|_| normal(&mut rng)).collect(),
                a: DMatrix::from_fn(1, r, |_, _| normal(&mut rng)),
            };
            // recovered rows: noisy, possibly sign-flipped teacher rows plus random extras
            let mut w = DMatrix::zeros(m, d);
            let mut b = vec![0.0; m];
            for k in 0..m {
                let sign = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
                let src = rng.gen_range(0..r);
                let fresh = rng.gen_bool(0.3);
                for j in 0..d {
                    w[(k, j)] = if fresh {
                        normal(&mut rng)
                    } else {
                        sign * teacher.w[(src, j)] + 0.05 * normal(&mut rng)
                    };
                }
                b[k] = if fresh { normal(&mut rng) } else { sign * teacher.b[src] };
                if sign < 0.0 && !fresh {
                    ambiguous += 1;
                }
            }
            let rec = LayerView {
                w,
                b,
                a: DMatrix::from_fn(1, m, |_, _| normal(&mut rng)),
            };
            let absolute = class.has_sign_symmetry();
            let aug = |v: &LayerView, k: usize| -> Vec<f64> {
                let mut x: Vec<f64> = v.w.row(k).iter().copied().collect();
                x.push(v.b[k]);
                x
            };
            let cost: Vec<Vec<f64>> = (0..m)
                .map(|i| {
                    (0..r)
                        .map(|j| naive_cos_distance(&aug(&rec, i), &aug(&teacher, j), absolute))
                        .collect()
                })
                .collect();
            let oracle = brute_force(&cost);
            let report = match_neurons(&rec, &teacher, class).unwrap();
            let used: f64 = report.pairs.iter().map(|p| cost[p.recovered][p.teacher]).sum();
            let pairs_ok = report.pairs.len() == m.min(r) && report.excess.len() == m - m.min(r);
            let err = (report.total_cost - oracle).abs().max((used - oracle).abs());
            worst = worst.max(if pairs_ok { err } else { f64::INFINITY });
        }
        outcome(
            worst <= 1e-12,
            format!("200 instances ({ambiguous} sign-flipped neurons), worst cost gap {worst:.1e}"),
        )
    })
}

fn c9_deep() -> Outcome {
    let t0 = Instant::now();
    let limit = Duration::from_secs(3600);
    let teacher = sample_deep_teacher(&TeacherSpec::new(8, vec![4, 2], Activation::G, 0)).unwrap();
    let data = gen_dataset(&teacher, 10_000, 0).unwrap();
    let direct = train_ensemble(
        &[4, 2],
        &data,
        Activation::G,
        &TrainConfig::monotone(STUDENT_STEPS).with_seed(1000),
        10,
    );
    let best_direct = match direct {
        Ok(ens) => ens.final_losses.iter().copied().fold(f64::INFINITY, f64::min).sqrt(),
        Err(e) => return outcome(false, format!("direct training failed: {e}")),
    };
    let cfg = PipelineConfig {
        n_students: 10,
        gamma: 0.5,
        beta: PI / 24.0,
        widths: Widths::Rho {
            rho: 4,
            base: vec![4, 2],
        },
        ensemble: TrainConfig::monotone(STUDENT_STEPS),
        retrain: TrainConfig::monotone(STUDENT_STEPS),
        seed: 0,
        ..Default::default()
    };
    let res = match expand_and_cluster(&data, &cfg, 2) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("pipeline failed: {e}")),
    };
    let sizes = res.hidden_sizes();
    let e = rmse(&res.network, &data).unwrap();
    let took = t0.elapsed();
    let sizes_ok = sizes.len() == 2 && (4..=5).contains(&sizes[0]) && (2..=3).contains(&sizes[1]);
    outcome(
        sizes_ok && e * 100.0 <= best_direct && took <= limit,
        format!(
            "hidden sizes {sizes:?} (teacher [4, 2]), RMSE {e:.1e} vs best direct {best_direct:.1e}; {}",
            within(took, limit)
        ),
    )
}

fn main() {
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "symmetry classification table", c1_symmetry_table),
        (2, "backprop matches finite differences", c2_gradient_check),
        (3, "exact reduction oracle", c3_exact_reduction),
        (4, "planted-cluster recovery", c4_planted_clusters),
        (5, "end-to-end shallow recovery", c5_end_to_end),
        (
            6,
            "overparameterisation improves convergence",
            c6_overparameterisation_helps,
        ),
        (7, "rank of the flip-induced linear term", c7_flip_rank),
        (8, "neuron matching agrees with brute force", c8_matching),
        (9, "deep layerwise reconstruction", c9_deep),
    ];
    let mut failed = 0;
    let mut stderr = std::io::stderr();
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let o = check();
        failed += !o.pass as usize;
        let _ = writeln!(
            stderr,
            "criterion {id} [{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        let _ = writeln!(stderr, "{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
