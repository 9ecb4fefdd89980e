//! Reverse-mode automatic differentiation on a linear tape.
//!
//! The primitive set is fixed: affine maps (matmul + bias), elementwise
//! tanh/relu/exp/log/square, elementwise add/sub/mul, scaling by a constant,
//! column concatenation, and the reductions sum/mean. Anything differentiable
//! for the lab is composed from these. Every forward op checks its output for
//! non-finite values and fails loudly instead of propagating NaN.

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    AddBias(usize, usize),
    ConcatCols(usize, usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Introduce a differentiable leaf (parameter or data input).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf, value, "leaf")
    }

    /// A leaf that is treated as constant data; gradients still accumulate to
    /// it internally but callers simply never read them.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value)
    }

    fn binary_same_shape(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        name: &'static str,
    ) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{name}: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op, value, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, |x, y| x + y, Op::Add(a.0, b.0), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, |x, y| x - y, Op::Sub(a.0, b.0), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, |x, y| x * y, Op::Mul(a.0, b.0), "mul")
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().map(|&x| k * x).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::Scale(a.0, k), value, "scale")
    }

    /// Matrix product of [r,c] by [c,k].
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::ShapeMismatch(format!(
                "matmul: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (r, c, k) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let value = Tensor::new(vec![r, k], mat_mul(ta.data(), tb.data(), r, c, k))?;
        self.push(Op::MatMul(a.0, b.0), value, "matmul")
    }

    /// Add a length-c bias vector to every row of an [r,c] matrix.
    pub fn add_bias(&mut self, m: Var, bias: Var) -> Result<Var> {
        let (tm, tb) = (&self.nodes[m.0].value, &self.nodes[bias.0].value);
        if tm.shape().len() != 2 || tb.shape().len() != 1 || tm.shape()[1] != tb.shape()[0] {
            return Err(Error::ShapeMismatch(format!(
                "add_bias: {:?} + {:?}",
                tm.shape(),
                tb.shape()
            )));
        }
        let (r, c) = (tm.shape()[0], tm.shape()[1]);
        let mut data = tm.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += tb.data()[j];
            }
        }
        let value = Tensor::new(vec![r, c], data)?;
        self.push(Op::AddBias(m.0, bias.0), value, "add_bias")
    }

    /// Concatenate two matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(Error::ShapeMismatch(format!(
                "concat_cols: {:?} ++ {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (r, ca, cb) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(&ta.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&tb.data()[i * cb..(i + 1) * cb]);
        }
        let value = Tensor::new(vec![r, ca + cb], data)?;
        self.push(Op::ConcatCols(a.0, b.0), value, "concat_cols")
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op, name: &'static str) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op, value, name)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, Op::Tanh(a.0), "tanh")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a.0), "relu")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::exp, Op::Exp(a.0), "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::ln, Op::Log(a.0), "log")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x * x, Op::Square(a.0), "square")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Op::Sum(a.0), Tensor::scalar(s), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.numel() == 0 {
            return Err(Error::EmptyBatch);
        }
        let m: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Op::Mean(a.0), Tensor::scalar(m), "mean")
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d)?;
        self.mean(sq)
    }

    /// Reverse pass from a scalar output. Returns one adjoint per node.
    pub fn backward(&self, output: Var) -> Result<Vec<Tensor>> {
        if self.nodes[output.0].value.numel() != 1 {
            return Err(Error::ShapeMismatch(
                "backward requires a scalar output".into(),
            ));
        }
        let mut adj: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros_like(&n.value))
            .collect();
        adj[output.0].data_mut()[0] = 1.0;

        for idx in (0..=output.0).rev() {
            let g = adj[idx].clone();
            if g.data().iter().all(|&v| v == 0.0) {
                continue;
            }
            match self.nodes[idx].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut adj[a], g.data());
                    accumulate(&mut adj[b], g.data());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[a], g.data());
                    accumulate_scaled(&mut adj[b], g.data(), -1.0);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (
                        self.nodes[a].value.data().to_vec(),
                        self.nodes[b].value.data().to_vec(),
                    );
                    accumulate_prod(&mut adj[a], g.data(), &vb);
                    accumulate_prod(&mut adj[b], g.data(), &va);
                }
                Op::Scale(a, k) => accumulate_scaled(&mut adj[a], g.data(), k),
                Op::MatMul(a, b) => {
                    let ta = &self.nodes[a].value;
                    let tb = &self.nodes[b].value;
                    let (r, c, k) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    // dA += G * B^T ; dB += A^T * G
                    let da = mat_mul_nt(g.data(), tb.data(), r, k, c);
                    let db = mat_mul_tn(ta.data(), g.data(), c, r, k);
                    accumulate(&mut adj[a], &da);
                    accumulate(&mut adj[b], &db);
                }
                Op::AddBias(m, bias) => {
                    accumulate(&mut adj[m], g.data());
                    let c = self.nodes[bias].value.numel();
                    let r = g.numel() / c;
                    let gb = adj[bias].data_mut();
                    for i in 0..r {
                        for j in 0..c {
                            gb[j] += g.data()[i * c + j];
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.nodes[a].value.shape()[1];
                    let cb = self.nodes[b].value.shape()[1];
                    let r = self.nodes[a].value.shape()[0];
                    let ga = adj[a].data_mut();
                    for i in 0..r {
                        for j in 0..ca {
                            ga[i * ca + j] += g.data()[i * (ca + cb) + j];
                        }
                    }
                    let gb = adj[b].data_mut();
                    for i in 0..r {
                        for j in 0..cb {
                            gb[i * cb + j] += g.data()[i * (ca + cb) + ca + j];
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = self.nodes[idx].value.data().to_vec();
                    let ga = adj[a].data_mut();
                    for (i, gi) in g.data().iter().enumerate() {
                        ga[i] += gi * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Relu(a) => {
                    let x = self.nodes[a].value.data().to_vec();
                    let ga = adj[a].data_mut();
                    for (i, gi) in g.data().iter().enumerate() {
                        if x[i] > 0.0 {
                            ga[i] += gi;
                        }
                    }
                }
                Op::Exp(a) => {
                    let y = self.nodes[idx].value.data().to_vec();
                    let ga = adj[a].data_mut();
                    for (i, gi) in g.data().iter().enumerate() {
                        ga[i] += gi * y[i];
                    }
                }
                Op::Log(a) => {
                    let x = self.nodes[a].value.data().to_vec();
                    let ga = adj[a].data_mut();
                    for (i, gi) in g.data().iter().enumerate() {
                        ga[i] += gi / x[i];
                    }
                }
                Op::Square(a) => {
                    let x = self.nodes[a].value.data().to_vec();
                    let ga = adj[a].data_mut();
                    for (i, gi) in g.data().iter().enumerate() {
                        ga[i] += 2.0 * x[i] * gi;
                    }
                }
                Op::Sum(a) => {
                    let g0 = g.data()[0];
                    for v in adj[a].data_mut() {
                        *v += g0;
                    }
                }
                Op::Mean(a) => {
                    let n = self.nodes[a].value.numel() as f64;
                    let g0 = g.data()[0] / n;
                    for v in adj[a].data_mut() {
                        *v += g0;
                    }
                }
            }
        }
        for t in &adj {
            if !t.all_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(adj)
    }
}

fn accumulate(target: &mut Tensor, src: &[f64]) {
    for (t, s) in target.data_mut().iter_mut().zip(src) {
        *t += s;
    }
}

fn accumulate_scaled(target: &mut Tensor, src: &[f64], k: f64) {
    for (t, s) in target.data_mut().iter_mut().zip(src) {
        *t += k * s;
    }
}

fn accumulate_prod(target: &mut Tensor, g: &[f64], other: &[f64]) {
    for ((t, gi), oi) in target.data_mut().iter_mut().zip(g).zip(other) {
        *t += gi * oi;
    }
}

/// C[r,k] = A[r,c] * B[c,k], row-major, i-k-j loop order.
fn mat_mul(a: &[f64], b: &[f64], r: usize, c: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * k];
    for i in 0..r {
        for l in 0..c {
            let av = a[i * c + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * k..(l + 1) * k];
            let orow = &mut out[i * k..(i + 1) * k];
            for j in 0..k {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// C[r,c] = G[r,k] * B[c,k]^T
fn mat_mul_nt(g: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let grow = &g[i * k..(i + 1) * k];
        let orow = &mut out[i * c..(i + 1) * c];
        for l in 0..c {
            let brow = &b[l * k..(l + 1) * k];
            let mut acc = 0.0;
            for j in 0..k {
                acc += grow[j] * brow[j];
            }
            orow[l] += acc;
        }
    }
    out
}

/// C[c,k] = A[r,c]^T * G[r,k]
fn mat_mul_tn(a: &[f64], g: &[f64], c: usize, r: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * k];
    for i in 0..r {
        let arow = &a[i * c..(i + 1) * c];
        let grow = &g[i * k..(i + 1) * k];
        for l in 0..c {
            let av = arow[l];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[l * k..(l + 1) * k];
            for j in 0..k {
                orow[j] += av * grow[j];
            }
        }
    }
    out
}

/// Named leaf handles for a ParamSet placed on a tape, in set order.
pub struct VarSet {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl VarSet {
    pub fn get(&self, name: &str) -> Option<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

fn place_params(tape: &mut Tape, params: &ParamSet) -> Result<VarSet> {
    let mut names = Vec::with_capacity(params.len());
    let mut vars = Vec::with_capacity(params.len());
    for (name, tensor) in params.iter() {
        names.push(name.to_string());
        vars.push(tape.leaf(tensor.clone())?);
    }
    Ok(VarSet { names, vars })
}

/// Reverse-mode gradient of a scalar-valued function of a ParamSet. The
/// returned set mirrors `params` in names and shapes.
pub fn grad<F>(loss_fn: F, params: &ParamSet) -> Result<ParamSet>
where
    F: Fn(&mut Tape, &VarSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = place_params(&mut tape, params)?;
    let loss = loss_fn(&mut tape, &vars)?;
    if tape.value(loss).numel() != 1 {
        return Err(Error::ShapeMismatch("loss must be scalar".into()));
    }
    let adj = tape.backward(loss)?;
    let mut out = ParamSet::new();
    for (i, (name, _)) in params.iter().enumerate() {
        out.insert(name, adj[vars.vars[i].0].clone())?;
    }
    Ok(out)
}

/// Forward-only evaluation of the same closures `grad` accepts.
pub fn eval_scalar<F>(loss_fn: F, params: &ParamSet) -> Result<f64>
where
    F: Fn(&mut Tape, &VarSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = place_params(&mut tape, params)?;
    let loss = loss_fn(&mut tape, &vars)?;
    tape.value(loss).scalar_value()
}

/// Max relative error between reverse-mode gradients and central finite
/// differences over every parameter entry. Entries where both magnitudes are
/// below 1e-8 are compared absolutely.
pub fn check_gradient<F>(loss_fn: F, params: &ParamSet, fd_step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &VarSet) -> Result<Var>,
{
    if fd_step <= 0.0 {
        return Err(Error::InvalidParam("fd_step must be positive".into()));
    }
    let analytic = grad(&loss_fn, params)?;
    let mut max_err: f64 = 0.0;
    let mut work = params.clone();
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    for name in &names {
        let n = params.get(name).unwrap().numel();
        for i in 0..n {
            let orig = params.get(name).unwrap().data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + fd_step;
            let plus = eval_scalar(&loss_fn, &work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig - fd_step;
            let minus = eval_scalar(&loss_fn, &work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * fd_step);
            let an = analytic.get(name).unwrap().data()[i];
            let denom = an.abs().max(fd.abs());
            let err = if denom < 1e-8 {
                (an - fd).abs()
            } else {
                (an - fd).abs() / denom
            };
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn grad_of_x_squared_at_3_is_6() {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(3.0)).unwrap();
        let g = grad(
            |t, v| {
                let x = v.get("x").unwrap();
                let sq = t.square(x)?;
                t.sum(sq)
            },
            &p,
        )
        .unwrap();
        assert!((g.get("x").unwrap().data()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn grad_of_product_is_swapped_values() {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(2.0)).unwrap();
        p.insert("y", Tensor::scalar(5.0)).unwrap();
        let g = grad(
            |t, v| {
                let prod = t.mul(v.get("x").unwrap(), v.get("y").unwrap())?;
                t.sum(prod)
            },
            &p,
        )
        .unwrap();
        assert_eq!(g.get("x").unwrap().data()[0], 5.0);
        assert_eq!(g.get("y").unwrap().data()[0], 2.0);
    }

    #[test]
    fn affine_mse_matches_finite_differences() {
        // 2 -> 2 affine map, MSE over 4 fixed samples.
        let mut p = ParamSet::new();
        p.insert(
            "w",
            Tensor::matrix(2, 2, vec![0.4, -0.3, 0.2, 0.7]).unwrap(),
        )
        .unwrap();
        p.insert("b", Tensor::vector(vec![0.1, -0.2])).unwrap();
        let xs = Tensor::matrix(4, 2, vec![1.0, 2.0, -0.5, 0.3, 0.0, 1.0, 2.0, -1.0]).unwrap();
        let ys = Tensor::matrix(4, 2, vec![0.5, 0.1, 0.0, -0.3, 1.0, 1.0, -0.2, 0.4]).unwrap();
        let loss = move |t: &mut Tape, v: &VarSet| {
            let x = t.constant(xs.clone())?;
            let y = t.constant(ys.clone())?;
            let wx = t.matmul(x, v.get("w").unwrap())?;
            let pred = t.add_bias(wx, v.get("b").unwrap())?;
            t.mse(pred, y)
        };
        let err = check_gradient(loss, &p, 1e-5).unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn check_gradient_on_x_squared() {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(3.0)).unwrap();
        let err = check_gradient(
            |t, v| {
                let sq = t.square(v.get("x").unwrap())?;
                t.sum(sq)
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn constant_loss_has_zero_gradient_and_zero_error() {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::vector(vec![1.0, -2.0, 0.5])).unwrap();
        let loss = |t: &mut Tape, _v: &VarSet| {
            let c = t.constant(Tensor::scalar(4.0))?;
            t.sum(c)
        };
        let g = grad(loss, &p).unwrap();
        assert!(g.get("x").unwrap().data().iter().all(|&v| v == 0.0));
        let err = check_gradient(loss, &p, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn three_layer_network_gradcheck_under_1e4() {
        let mut rng = Rng::new(1234);
        for draw in 0..10 {
            let mut p = ParamSet::new();
            let dims = [3usize, 5, 4, 1];
            for l in 0..3 {
                let (fi, fo) = (dims[l], dims[l + 1]);
                let bound = (1.0 / fi as f64).sqrt();
                p.insert(
                    &format!("w{l}"),
                    Tensor::matrix(
                        fi,
                        fo,
                        (0..fi * fo)
                            .map(|_| rng.uniform_in(-bound, bound))
                            .collect(),
                    )
                    .unwrap(),
                )
                .unwrap();
                p.insert(
                    &format!("b{l}"),
                    Tensor::vector((0..fo).map(|_| rng.uniform_in(-bound, bound)).collect()),
                )
                .unwrap();
            }
            let x =
                Tensor::matrix(4, 3, (0..12).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap();
            let y =
                Tensor::matrix(4, 1, (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap();
            let loss = move |t: &mut Tape, v: &VarSet| {
                let mut h = t.constant(x.clone())?;
                for l in 0..3 {
                    let wx = t.matmul(h, v.get(&format!("w{l}")).unwrap())?;
                    h = t.add_bias(wx, v.get(&format!("b{l}")).unwrap())?;
                    if l < 2 {
                        h = t.tanh(h)?;
                    }
                }
                let target = t.constant(y.clone())?;
                t.mse(h, target)
            };
            let err = check_gradient(loss, &p, 1e-5).unwrap();
            assert!(err < 1e-4, "draw {draw}: max rel err {err}");
        }
    }

    #[test]
    fn gradients_are_bit_identical_across_runs() {
        let mut rng = Rng::new(7);
        let mut p = ParamSet::new();
        p.insert(
            "w",
            Tensor::matrix(3, 3, (0..9).map(|_| rng.normal()).collect()).unwrap(),
        )
        .unwrap();
        let loss = |t: &mut Tape, v: &VarSet| {
            let w = v.get("w").unwrap();
            let th = t.tanh(w)?;
            let sq = t.square(th)?;
            t.mean(sq)
        };
        let g1 = grad(loss, &p).unwrap();
        let g2 = grad(loss, &p).unwrap();
        for ((_, a), (_, b)) in g1.iter().zip(g2.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn log_of_negative_input_errors() {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(-1.0)).unwrap();
        let res = grad(
            |t, v| {
                let lg = t.log(v.get("x").unwrap())?;
                t.sum(lg)
            },
            &p,
        );
        assert!(matches!(res, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap()).unwrap();
        let b = t.leaf(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap()).unwrap();
        assert!(t.matmul(a, b).is_err());
    }
}
