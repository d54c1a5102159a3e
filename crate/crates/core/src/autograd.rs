//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Graphs are built eagerly as operations run. A [`Variable`] is a cheap
//! handle; the graph it roots lives as long as any handle to it. Graphs are
//! single-threaded (`Variable` is not `Send`): data-parallel workers each
//! build their own graph from shared parameter tensors.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::tensor::{check_same_shape, matmul_at_raw, matmul_bt_raw, matmul_raw, Tensor, TensorError};

/// Maps the gradient of an op's output to gradients of each of its parents
/// (same order as the parents passed to [`Variable::from_op`]).
pub type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: RefCell<Tensor>,
    grad: RefCell<Option<Tensor>>,
    requires_grad: bool,
    parents: Vec<Variable>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Variable(Rc<Node>);

impl std::fmt::Debug for Variable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Variable")
            .field("value", &*self.0.value.borrow())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Variable {
    /// A learnable leaf.
    pub fn parameter(value: Tensor) -> Self {
        Self::leaf(value, true)
    }

    /// A leaf that never receives gradients (inputs, targets).
    pub fn constant(value: Tensor) -> Self {
        Self::leaf(value, false)
    }

    fn leaf(value: Tensor, requires_grad: bool) -> Self {
        Variable(Rc::new(Node {
            value: RefCell::new(value),
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Record the result of a custom operation. The backward rule is only
    /// kept when at least one parent requires gradients.
    pub fn from_op(value: Tensor, parents: Vec<Variable>, backward: BackwardFn) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Variable(Rc::new(Node {
            value: RefCell::new(value),
            grad: RefCell::new(None),
            requires_grad,
            parents: if requires_grad { parents } else { Vec::new() },
            backward: if requires_grad { Some(backward) } else { None },
        }))
    }

    pub fn value(&self) -> Ref<'_, Tensor> {
        self.0.value.borrow()
    }

    /// Cheap clone of the current value.
    pub fn tensor(&self) -> Tensor {
        self.0.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.borrow().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.0.grad.borrow().clone()
    }

    /// Gradient, materializing zeros if nothing has been accumulated yet.
    pub fn grad_or_zeros(&self) -> Tensor {
        self.grad().unwrap_or_else(|| Tensor::zeros(self.0.value.borrow().shape()))
    }

    pub fn zero_grad(&self) {
        let zeros = Tensor::zeros(self.0.value.borrow().shape());
        *self.0.grad.borrow_mut() = Some(zeros);
    }

    /// Replace the value of a leaf (optimizer updates). Panics on a non-leaf
    /// or on a shape change.
    pub fn set_value(&self, value: Tensor) {
        assert!(self.is_leaf(), "set_value on a non-leaf variable");
        assert_eq!(value.shape(), self.0.value.borrow().shape(), "set_value must preserve shape");
        *self.0.value.borrow_mut() = value;
    }

    fn accumulate(&self, g: &Tensor) {
        let mut slot = self.0.grad.borrow_mut();
        *slot = Some(match slot.take() {
            Some(prev) => prev.add(g).expect("gradient shape matches value"),
            None => g.clone(),
        });
    }

    fn key(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    /// Backpropagate from this scalar. Every reachable variable that
    /// requires gradients gets `grad += d(self)/d(var)`.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.0.value.borrow().numel() != 1 {
            return Err(TensorError::Contract(format!("backward needs a scalar root, got shape {:?}", self.shape())));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS gives a topological order.
        let mut order: Vec<Variable> = Vec::new();
        let mut visited: HashMap<*const Node, ()> = HashMap::new();
        let mut stack: Vec<(Variable, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.key(), ());
        while let Some((var, child)) = stack.pop() {
            if child < var.0.parents.len() {
                let parent = var.0.parents[child].clone();
                stack.push((var, child + 1));
                if parent.requires_grad() && visited.insert(parent.key(), ()).is_none() {
                    stack.push((parent, 0));
                }
            } else {
                order.push(var);
            }
        }

        let mut pending: HashMap<*const Node, Tensor> = HashMap::new();
        pending.insert(self.key(), Tensor::ones(&self.shape()));
        for var in order.iter().rev() {
            let Some(g) = pending.remove(&var.key()) else {
                continue;
            };
            var.accumulate(&g);
            if let Some(rule) = &var.0.backward {
                let parent_grads = rule(&g);
                debug_assert_eq!(parent_grads.len(), var.0.parents.len());
                for (parent, pg) in var.0.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !parent.requires_grad() {
                        continue;
                    }
                    match pending.get_mut(&parent.key()) {
                        Some(acc) => *acc = acc.add(&pg).expect("gradient shape"),
                        None => {
                            pending.insert(parent.key(), pg);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn binary_check(a: &Variable, b: &Variable) -> Result<(), TensorError> {
    check_same_shape(&a.value(), &b.value())
}

pub fn add(a: &Variable, b: &Variable) -> Result<Variable, TensorError> {
    binary_check(a, b)?;
    let out = a.value().add(&b.value())?;
    Ok(Variable::from_op(out, vec![a.clone(), b.clone()], Box::new(|g| vec![Some(g.clone()), Some(g.clone())])))
}

pub fn sub(a: &Variable, b: &Variable) -> Result<Variable, TensorError> {
    binary_check(a, b)?;
    let out = a.value().zip_map(&b.value(), |x, y| x - y)?;
    Ok(Variable::from_op(out, vec![a.clone(), b.clone()], Box::new(|g| vec![Some(g.clone()), Some(g.scale(-1.0))])))
}

/// Elementwise product.
pub fn mul(a: &Variable, b: &Variable) -> Result<Variable, TensorError> {
    binary_check(a, b)?;
    let (av, bv) = (a.tensor(), b.tensor());
    let out = av.zip_map(&bv, |x, y| x * y)?;
    Ok(Variable::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            vec![Some(g.zip_map(&bv, |g, y| g * y).expect("shape")), Some(g.zip_map(&av, |g, x| g * x).expect("shape"))]
        }),
    ))
}

/// `c · x`
pub fn scale(x: &Variable, c: f32) -> Variable {
    let out = x.value().scale(c);
    Variable::from_op(out, vec![x.clone()], Box::new(move |g| vec![Some(g.scale(c))]))
}

/// `x + c`
pub fn add_scalar(x: &Variable, c: f32) -> Variable {
    let out = x.value().map(|v| v + c);
    Variable::from_op(out, vec![x.clone()], Box::new(|g| vec![Some(g.clone())]))
}

pub fn neg(x: &Variable) -> Variable {
    scale(x, -1.0)
}

pub fn relu(x: &Variable) -> Variable {
    let xv = x.tensor();
    let out = xv.map(|v| v.max(0.0));
    Variable::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g| vec![Some(g.zip_map(&xv, |g, v| if v > 0.0 { g } else { 0.0 }).expect("shape"))]),
    )
}

pub fn sigmoid(x: &Variable) -> Variable {
    let out = x.value().map(|v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    });
    let s = out.clone();
    Variable::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g| vec![Some(g.zip_map(&s, |g, s| g * s * (1.0 - s)).expect("shape"))]),
    )
}

/// Natural logarithm.
pub fn log(x: &Variable) -> Variable {
    let xv = x.tensor();
    let out = xv.map(f32::ln);
    Variable::from_op(out, vec![x.clone()], Box::new(move |g| vec![Some(g.zip_map(&xv, |g, v| g / v).expect("shape"))]))
}

pub fn reduce_sum(x: &Variable) -> Variable {
    let shape = x.shape();
    let out = Tensor::scalar(x.value().sum());
    Variable::from_op(out, vec![x.clone()], Box::new(move |g| vec![Some(Tensor::full(&shape, g.item()))]))
}

pub fn reduce_mean(x: &Variable) -> Variable {
    let n = x.value().numel() as f32;
    scale(&reduce_sum(x), 1.0 / n)
}

/// Matrix product of `a[m×k]` and `b[k×n]`.
pub fn matmul(a: &Variable, b: &Variable) -> Result<Variable, TensorError> {
    let (av, bv) = (a.tensor(), b.tensor());
    if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
        return Err(TensorError::Dimension(format!("matmul of {:?} and {:?}", av.shape(), bv.shape())));
    }
    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
    let out = Tensor::new(vec![m, n], matmul_raw(av.data(), bv.data(), m, k, n))?;
    Ok(Variable::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let ga = matmul_bt_raw(g.data(), bv.data(), m, k, n);
            let gb = matmul_at_raw(av.data(), g.data(), m, k, n);
            vec![Some(Tensor::new(vec![m, k], ga).expect("shape")), Some(Tensor::new(vec![k, n], gb).expect("shape"))]
        }),
    ))
}

/// Adds a bias row `b[n]` to every row of `x[m×n]`.
pub fn add_row(x: &Variable, b: &Variable) -> Result<Variable, TensorError> {
    let (xv, bv) = (x.tensor(), b.tensor());
    let (m, n) = xv.matrix_dims();
    if xv.rank() != 2 || bv.numel() != n {
        return Err(TensorError::Dimension(format!("add_row of {:?} and bias {:?}", xv.shape(), bv.shape())));
    }
    let mut out = xv.to_vec();
    for row in out.chunks_mut(n) {
        for (o, &bias) in row.iter_mut().zip(bv.data()) {
            *o += bias;
        }
    }
    let bias_shape = bv.shape().to_vec();
    Ok(Variable::from_op(
        Tensor::new(vec![m, n], out)?,
        vec![x.clone(), b.clone()],
        Box::new(move |g| {
            let mut gb = vec![0.0f32; n];
            for row in g.data().chunks(n) {
                for (acc, &v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            vec![Some(g.clone()), Some(Tensor::new(bias_shape.clone(), gb).expect("shape"))]
        }),
    ))
}

/// Temporal cross-correlation of `input[T×Cin]` with `kernel[K×Cin×Cout]`.
/// Output length is `floor((T + 2·padding − K) / stride) + 1`.
pub fn conv1d(input: &Variable, kernel: &Variable, stride: usize, padding: usize) -> Result<Variable, TensorError> {
    let (iv, kv) = (input.tensor(), kernel.tensor());
    if iv.rank() != 2 || kv.rank() != 3 || iv.shape()[1] != kv.shape()[1] {
        return Err(TensorError::Dimension(format!("conv1d of input {:?} with kernel {:?}", iv.shape(), kv.shape())));
    }
    if stride == 0 {
        return Err(TensorError::Dimension("conv1d stride must be >= 1".into()));
    }
    let (t_in, cin) = (iv.shape()[0], iv.shape()[1]);
    let (k, cout) = (kv.shape()[0], kv.shape()[2]);
    let padded = t_in + 2 * padding;
    if k > padded {
        return Err(TensorError::Dimension(format!("conv1d output length < 1: T={t_in}, padding={padding}, K={k}")));
    }
    let t_out = (padded - k) / stride + 1;
    let geometry = ConvGeometry { t_in, k, t_out, stride, padding };

    let mut out = vec![0.0f32; t_out * cout];
    geometry.for_each_tap(|t, tap, src| {
        let x = &iv.data()[src * cin..(src + 1) * cin];
        let o = &mut out[t * cout..(t + 1) * cout];
        for (ci, &xv) in x.iter().enumerate() {
            let w = &kv.data()[(tap * cin + ci) * cout..(tap * cin + ci + 1) * cout];
            for (ov, &wv) in o.iter_mut().zip(w) {
                *ov += xv * wv;
            }
        }
    });

    Ok(Variable::from_op(
        Tensor::new(vec![t_out, cout], out)?,
        vec![input.clone(), kernel.clone()],
        Box::new(move |g| {
            let mut gi = vec![0.0f32; t_in * cin];
            let mut gk = vec![0.0f32; k * cin * cout];
            geometry.for_each_tap(|t, tap, src| {
                let go = &g.data()[t * cout..(t + 1) * cout];
                for ci in 0..cin {
                    let w_off = (tap * cin + ci) * cout;
                    let w = &kv.data()[w_off..w_off + cout];
                    gi[src * cin + ci] += go.iter().zip(w).map(|(a, b)| a * b).sum::<f32>();
                    let xv = iv.data()[src * cin + ci];
                    for (acc, &gv) in gk[w_off..w_off + cout].iter_mut().zip(go) {
                        *acc += xv * gv;
                    }
                }
            });
            vec![
                Some(Tensor::new(vec![t_in, cin], gi).expect("shape")),
                Some(Tensor::new(vec![k, cin, cout], gk).expect("shape")),
            ]
        }),
    ))
}

#[derive(Clone, Copy)]
struct ConvGeometry {
    t_in: usize,
    k: usize,
    t_out: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeometry {
    /// Calls `f(output_frame, kernel_tap, input_frame)` for every tap that
    /// lands inside the unpadded input.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for t in 0..self.t_out {
            for tap in 0..self.k {
                let pos = (t * self.stride + tap) as isize - self.padding as isize;
                if pos >= 0 && (pos as usize) < self.t_in {
                    f(t, tap, pos as usize);
                }
            }
        }
    }
}

/// Row-wise log-softmax over the last axis.
pub fn log_softmax(x: &Variable) -> Result<Variable, TensorError> {
    let xv = x.tensor();
    if !xv.all_finite() {
        return Err(TensorError::Numeric("log_softmax of non-finite input".into()));
    }
    let (rows, n) = xv.matrix_dims();
    let mut out = vec![0.0f32; rows * n];
    for (src, dst) in xv.data().chunks(n).zip(out.chunks_mut(n)) {
        let max = src.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse = max + src.iter().map(|&v| ((v - max) as f64).exp()).sum::<f64>().ln() as f32;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s - lse;
        }
    }
    let out = Tensor::new(xv.shape().to_vec(), out)?;
    let y = out.clone();
    Ok(Variable::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0f32; rows * n];
            for ((gr, yr), dst) in g.data().chunks(n).zip(y.data().chunks(n)).zip(gx.chunks_mut(n)) {
                let total: f32 = gr.iter().sum();
                for ((d, &gv), &yv) in dst.iter_mut().zip(gr).zip(yr) {
                    *d = gv - yv.exp() * total;
                }
            }
            vec![Some(Tensor::new(y.shape().to_vec(), gx).expect("shape"))]
        }),
    ))
}

/// SGD with classical momentum: `v ← μ·v + g; w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub lr: f32,
    pub momentum: f32,
    pub velocity: Vec<Tensor>,
}

impl SgdMomentum {
    pub fn new(lr: f32, momentum: f32, shapes: &[Vec<usize>]) -> Self {
        Self { lr, momentum, velocity: shapes.iter().map(|s| Tensor::zeros(s)).collect() }
    }

    /// Update raw parameter tensors from matching gradients.
    pub fn step_tensors(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), TensorError> {
        if params.len() != self.velocity.len() || grads.len() != params.len() {
            return Err(TensorError::Contract(format!(
                "sgd: {} params, {} grads, {} velocities",
                params.len(),
                grads.len(),
                self.velocity.len()
            )));
        }
        for ((w, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            let mu = self.momentum;
            let nv = v.zip_map(g, |v, g| mu * v + g)?;
            let lr = self.lr;
            *w = w.zip_map(&nv, |w, v| w - lr * v)?;
            *v = nv;
        }
        Ok(())
    }

    /// Update leaf variables in place from their accumulated gradients.
    /// Gradients are left untouched.
    pub fn step(&mut self, params: &[Variable]) -> Result<(), TensorError> {
        let mut values: Vec<Tensor> = params.iter().map(Variable::tensor).collect();
        let grads: Vec<Tensor> = params.iter().map(Variable::grad_or_zeros).collect();
        self.step_tensors(&mut values, &grads)?;
        for (p, v) in params.iter().zip(values) {
            p.set_value(v);
        }
        Ok(())
    }
}
