//! Finite-difference checks of every differentiable op against f64 reference
//! forwards written independently of the library, and the small MLP
//! training run.

use asr_core::autograd::{self as ag, Variable};
use asr_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-3;
pub const TOL: f64 = 1e-3;
pub const SEEDS: u64 = 100;

struct Input {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn rand_input(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Input {
    let n = shape.iter().product();
    Input { shape: shape.to_vec(), data: (0..n).map(|_| rng.gen_range(lo..hi)).collect() }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-2)
}

/// Compares autodiff gradients of `build` against central differences of
/// `oracle`. Returns the worst relative error seen.
fn check(
    inputs: &[Input],
    build: impl Fn(&[Variable]) -> Variable,
    oracle: impl Fn(&[Vec<f64>]) -> f64,
) -> Result<f64, String> {
    let vars: Vec<Variable> =
        inputs.iter().map(|i| Variable::parameter(Tensor::new(i.shape.clone(), i.data.clone()).unwrap())).collect();
    let root = build(&vars);
    root.backward().map_err(|e| e.to_string())?;

    let mut point: Vec<Vec<f64>> = inputs.iter().map(|i| i.data.iter().map(|&v| v as f64).collect()).collect();
    let mut worst: f64 = 0.0;
    for (vi, var) in vars.iter().enumerate() {
        let grad = var.grad_or_zeros();
        for j in 0..point[vi].len() {
            let x0 = point[vi][j];
            point[vi][j] = x0 + EPS;
            let fp = oracle(&point);
            point[vi][j] = x0 - EPS;
            let fm = oracle(&point);
            point[vi][j] = x0;
            let f0 = oracle(&point);
            let (right, left) = ((fp - f0) / EPS, (f0 - fm) / EPS);
            if (right - left).abs() > 1e-2 * right.abs().max(left.abs()).max(1.0) {
                // stencil straddles a kink
                continue;
            }
            let numeric = (fp - fm) / (2.0 * EPS);
            let err = rel_err(grad.data()[j] as f64, numeric);
            if err > TOL {
                return Err(format!("input {vi} coord {j}: analytic {} vs numeric {numeric}", grad.data()[j]));
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn weighted_sum(out: &Variable, weights: &[f32]) -> Variable {
    let w = Variable::constant(Tensor::new(out.shape(), weights.to_vec()).unwrap());
    ag::reduce_sum(&ag::mul(out, &w).unwrap())
}

fn ref_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    out
}

fn dot(a: &[f64], w: &[f32]) -> f64 {
    a.iter().zip(w).map(|(x, &y)| x * y as f64).sum()
}

pub fn matmul_gradients(seed: u64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rand_input(&mut rng, &[4, 5], -1.0, 1.0);
    let b = rand_input(&mut rng, &[5, 3], -1.0, 1.0);
    let w = rand_input(&mut rng, &[4, 3], -1.0, 1.0).data;
    let w2 = w.clone();
    worst = worst.max(check(
        &[a, b],
        |v| weighted_sum(&ag::matmul(&v[0], &v[1]).unwrap(), &w),
        |p| dot(&ref_matmul(&p[0], &p[1], 4, 5, 3), &w2),
    )?);
    Ok(worst)
}

fn ref_conv1d(
    x: &[f64],
    k: &[f64],
    t: usize,
    cin: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let t_out = (t + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; t_out * cout];
    for to in 0..t_out {
        for co in 0..cout {
            let mut acc = 0.0;
            for tap in 0..kw {
                let src = (to * stride + tap) as isize - pad as isize;
                if src < 0 || src as usize >= t {
                    continue;
                }
                for ci in 0..cin {
                    acc += x[src as usize * cin + ci] * k[(tap * cin + ci) * cout + co];
                }
            }
            out[to * cout + co] = acc;
        }
    }
    out
}

pub fn conv1d_gradients(seed: u64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let stride = 1 + (seed % 2) as usize;
    let pad = (seed % 3) as usize;
    let (t, cin, kw, cout) = (10, 2, 3, 3);
    let t_out = (t + 2 * pad - kw) / stride + 1;
    let x = rand_input(&mut rng, &[t, cin], -1.0, 1.0);
    let k = rand_input(&mut rng, &[kw, cin, cout], -1.0, 1.0);
    let w = rand_input(&mut rng, &[t_out, cout], -1.0, 1.0).data;
    let w2 = w.clone();
    worst = worst.max(check(
        &[x, k],
        |v| weighted_sum(&ag::conv1d(&v[0], &v[1], stride, pad).unwrap(), &w),
        |p| dot(&ref_conv1d(&p[0], &p[1], t, cin, kw, cout, stride, pad), &w2),
    )?);
    Ok(worst)
}

pub fn elementwise_gradients(seed: u64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
    let a = || rand_input(&mut ChaCha8Rng::seed_from_u64(2000 + seed), &[3, 3], -1.0, 1.0);
    let b = rand_input(&mut rng, &[3, 3], -1.0, 1.0);
    let w = rand_input(&mut rng, &[3, 3], -1.0, 1.0).data;
    let bd = b.data.clone();
    let mk = |d: &Vec<f32>| Input { shape: vec![3, 3], data: d.clone() };

    let (w1, w2) = (w.clone(), w.clone());
    worst = worst.max(check(
        &[a(), mk(&bd)],
        |v| weighted_sum(&ag::mul(&v[0], &v[1]).unwrap(), &w1),
        |p| p[0].iter().zip(&p[1]).zip(&w2).map(|((x, y), &r)| x * y * r as f64).sum(),
    )?);
    let (w1, w2) = (w.clone(), w.clone());
    worst = worst.max(check(
        &[a(), mk(&bd)],
        |v| weighted_sum(&ag::add(&v[0], &v[1]).unwrap(), &w1),
        |p| p[0].iter().zip(&p[1]).zip(&w2).map(|((x, y), &r)| (x + y) * r as f64).sum(),
    )?);
    let (w1, w2) = (w.clone(), w.clone());
    worst = worst.max(check(
        &[a(), mk(&bd)],
        |v| weighted_sum(&ag::sub(&v[0], &v[1]).unwrap(), &w1),
        |p| p[0].iter().zip(&p[1]).zip(&w2).map(|((x, y), &r)| (x - y) * r as f64).sum(),
    )?);
    let (w1, w2) = (w.clone(), w.clone());
    worst = worst.max(check(
        &[a()],
        |v| weighted_sum(&ag::relu(&v[0]), &w1),
        |p| p[0].iter().zip(&w2).map(|(x, &r)| x.max(0.0) * r as f64).sum(),
    )?);
    let (w1, w2) = (w.clone(), w.clone());
    worst = worst.max(check(
        &[a()],
        |v| weighted_sum(&ag::sigmoid(&v[0]), &w1),
        |p| p[0].iter().zip(&w2).map(|(x, &r)| r as f64 / (1.0 + (-x).exp())).sum(),
    )?);
    let (w1, w2) = (w.clone(), w.clone());
    worst = worst.max(check(
        &[a()],
        |v| weighted_sum(&ag::add_scalar(&ag::scale(&v[0], -2.5), 0.75), &w1),
        |p| p[0].iter().zip(&w2).map(|(x, &r)| (0.75 - 2.5 * x) * r as f64).sum(),
    )?);
    let pos = rand_input(&mut rng, &[3, 3], 0.5, 1.5);
    let (w1, w2) = (w.clone(), w.clone());
    worst = worst.max(check(
        &[pos],
        |v| weighted_sum(&ag::log(&v[0]), &w1),
        |p| p[0].iter().zip(&w2).map(|(x, &r)| x.ln() * r as f64).sum(),
    )?);
    worst = worst.max(check(&[a()], |v| ag::reduce_sum(&v[0]), |p| p[0].iter().sum())?);
    worst = worst.max(check(&[a()], |v| ag::reduce_mean(&v[0]), |p| p[0].iter().sum::<f64>() / 9.0)?);
    Ok(worst)
}

pub fn add_row_gradients(seed: u64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
    let x = rand_input(&mut rng, &[4, 3], -1.0, 1.0);
    let b = rand_input(&mut rng, &[3], -1.0, 1.0);
    let w = rand_input(&mut rng, &[4, 3], -1.0, 1.0).data;
    let w2 = w.clone();
    worst = worst.max(check(
        &[x, b],
        |v| weighted_sum(&ag::add_row(&v[0], &v[1]).unwrap(), &w),
        |p| (0..12).map(|i| (p[0][i] + p[1][i % 3]) * w2[i] as f64).sum(),
    )?);
    Ok(worst)
}

fn ref_log_softmax(x: &[f64], n: usize) -> Vec<f64> {
    x.chunks(n)
        .flat_map(|row| {
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            row.iter().map(move |v| v - lse).collect::<Vec<_>>()
        })
        .collect()
}

pub fn log_softmax_gradients_and_normalization(seed: u64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
    let x = rand_input(&mut rng, &[5, 7], -1.0, 1.0);
    let y =
        ag::log_softmax(&Variable::constant(Tensor::new(x.shape.clone(), x.data.clone()).unwrap())).unwrap().tensor();
    for row in y.data().chunks(7) {
        let total: f64 = row.iter().map(|&v| (v as f64).exp()).sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(format!("log_softmax row sums to {total}"));
        }
    }
    let w = rand_input(&mut rng, &[5, 7], -1.0, 1.0).data;
    let w2 = w.clone();
    worst = worst.max(check(
        &[x],
        |v| weighted_sum(&ag::log_softmax(&v[0]).unwrap(), &w),
        |p| dot(&ref_log_softmax(&p[0], 7), &w2),
    )?);
    Ok(worst)
}

/// One hidden layer MLP with binary cross-entropy, written in the
/// forward/criterion style of the classic autodiff training loop.
pub fn mlp_bce(w0: &Variable, w1: &Variable, x: &Variable, y: &Variable) -> Variable {
    let hidden = ag::relu(&ag::matmul(w0, x).unwrap());
    let yhat = ag::matmul(w1, &hidden).unwrap();
    let probs = ag::sigmoid(&yhat);
    let one_minus = |v: &Variable| ag::add_scalar(&ag::neg(v), 1.0);
    let pos = ag::mul(y, &ag::log(&probs)).unwrap();
    let negp = ag::mul(&one_minus(y), &ag::log(&one_minus(&probs))).unwrap();
    ag::neg(&ag::reduce_sum(&ag::add(&pos, &negp).unwrap()))
}

pub fn mlp_bce_gradients(seed: u64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let (d, h) = (3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
    let w0 = rand_input(&mut rng, &[h, d], -1.0, 1.0);
    let w1 = rand_input(&mut rng, &[1, h], -1.0, 1.0);
    let x = rand_input(&mut rng, &[d, 1], -1.0, 1.0);
    let label = if rng.gen_bool(0.5) { 1.0f32 } else { 0.0 };
    let xv = Variable::constant(Tensor::new(x.shape.clone(), x.data.clone()).unwrap());
    let yv = Variable::constant(Tensor::scalar(label).reshape(vec![1, 1]).unwrap());
    let xs: Vec<f64> = x.data.iter().map(|&v| v as f64).collect();
    worst = worst.max(check(
        &[w0, w1],
        |v| mlp_bce(&v[0], &v[1], &xv, &yv),
        |p| {
            let hid: Vec<f64> = ref_matmul(&p[0], &xs, h, d, 1).iter().map(|v| v.max(0.0)).collect();
            let z = ref_matmul(&p[1], &hid, 1, h, 1)[0];
            let prob = 1.0 / (1.0 + (-z).exp());
            let y = label as f64;
            -(y * prob.ln() + (1.0 - y) * (1.0 - prob).ln())
        },
    )?);
    Ok(worst)
}

pub type OpCheck = fn(u64) -> Result<f64, String>;

/// Every differentiable op family with its checker.
pub const OP_CHECKS: [(&str, OpCheck); 6] = [
    ("matmul", matmul_gradients),
    ("conv1d", conv1d_gradients),
    ("elementwise", elementwise_gradients),
    ("add_row", add_row_gradients),
    ("log_softmax", log_softmax_gradients_and_normalization),
    ("mlp_bce", mlp_bce_gradients),
];

/// All op checks over `seeds` seeds; returns the worst relative error.
pub fn all_op_checks(seeds: u64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for (name, f) in OP_CHECKS {
        for seed in 0..seeds {
            worst = worst.max(f(seed).map_err(|e| format!("{name} seed {seed}: {e}"))?);
        }
    }
    Ok(worst)
}

/// Two Gaussian-ish blobs on either side of a random line through the
/// origin, with a margin. Inputs carry a constant 1 feature so the bias-free
/// network can learn an offset.
pub fn separable_set(rng: &mut ChaCha8Rng, count: usize) -> Vec<([f32; 3], f32)> {
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let normal = [angle.cos(), angle.sin()];
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p = [rng.gen_range(-1.0f32..1.0), rng.gen_range(-1.0f32..1.0)];
        let side = p[0] * normal[0] + p[1] * normal[1];
        if side.abs() < 0.2 {
            continue;
        }
        out.push(([p[0], p[1], 1.0], if side > 0.0 { 1.0 } else { 0.0 }));
    }
    out
}

#[derive(Debug, Clone)]
pub struct MlpRun {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Per-example SGD on the one-hidden-layer MLP, as in the classic loop:
/// backward, `w -= lr * grad`, zero the gradient. Stops once the mean
/// cross-entropy over the set drops below `target` or after `max_steps`.
pub fn mlp_training(seed: u64, max_steps: usize, target: f64) -> Result<MlpRun, String> {
    let (d, h) = (3usize, 8usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = separable_set(&mut rng, 32);
    let init = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
        let bound = 1.0 / (cols as f32).sqrt();
        let v: Vec<f32> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        Variable::parameter(Tensor::new(vec![rows, cols], v).unwrap())
    };
    let weights = [init(&mut rng, h, d), init(&mut rng, 1, h)];
    let examples: Vec<(Variable, Variable)> = data
        .iter()
        .map(|(x, y)| {
            (
                Variable::constant(Tensor::new(vec![d, 1], x.to_vec()).unwrap()),
                Variable::constant(Tensor::new(vec![1, 1], vec![*y]).unwrap()),
            )
        })
        .collect();
    let mean_loss = |w: &[Variable; 2]| -> f64 {
        let frozen: Vec<Variable> = w.iter().map(|v| Variable::constant(v.tensor())).collect();
        examples.iter().map(|(x, y)| mlp_bce(&frozen[0], &frozen[1], x, y).value().item() as f64).sum::<f64>()
            / examples.len() as f64
    };
    let lr = 0.5f32;
    let initial_loss = mean_loss(&weights);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut steps = 0;
    let mut loss = initial_loss;
    while steps < max_steps && loss >= target {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = &examples[i];
            mlp_bce(&weights[0], &weights[1], x, y).backward().map_err(|e| e.to_string())?;
            for w in &weights {
                let g = w.grad_or_zeros();
                let next = w.tensor().zip_map(&g, |a, b| a - lr * b).map_err(|e| e.to_string())?;
                w.set_value(next);
                w.zero_grad();
            }
            steps += 1;
            loss = mean_loss(&weights);
            if loss < target || steps == max_steps {
                break;
            }
        }
    }
    if !loss.is_finite() {
        return Err(format!("loss diverged after {steps} steps"));
    }
    Ok(MlpRun { steps, initial_loss, final_loss: loss })
}
