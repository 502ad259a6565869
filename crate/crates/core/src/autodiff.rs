//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and the backward pass is a single reverse sweep.
//! Binary element-wise ops broadcast an operand whose shape is a suffix of
//! the other's (e.g. a `[n]` bias against a `[batch, n]` activation) or
//! which holds a single element.

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, softplus, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MaxScalar(Var, f64),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize, end: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        return Ok(sa.to_vec());
    }
    let suffix = |big: &[usize], small: &[usize]| {
        small.len() <= big.len() && big[big.len() - small.len()..] == *small
    };
    if b.len() == 1 || suffix(sa, sb) {
        Ok(sa.to_vec())
    } else if a.len() == 1 || suffix(sb, sa) {
        Ok(sb.to_vec())
    } else {
        Err(Error::Shape {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })
    }
}

/// Sums `grad` (full output shape) down onto an operand of `len` elements.
fn reduce_to(grad: &[f64], len: usize) -> Vec<f64> {
    if grad.len() == len {
        return grad.to_vec();
    }
    let mut out = vec![0.0; len];
    for (i, g) in grad.iter().enumerate() {
        out[i % len] += g;
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input. Parameters and constants are both leaves; only
    /// the ones passed to [`Tape::gradient`] are reported.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        node: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(op, ta, tb)?;
        let n: usize = shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let data = (0..n).map(|i| f(da[i % da.len()], db[i % db.len()])).collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, node))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// Element-wise `max(x, c)`; the gradient flows only where `x > c`.
    pub fn max_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x.max(c), Op::MaxScalar(a, c))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Sums over the trailing axis: `[.., n] -> [..]`.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.last_dim();
        let data: Vec<f64> = t.data().chunks(n).map(|c| c.iter().sum()).collect();
        let shape = t.shape()[..t.shape().len().saturating_sub(1)].to_vec();
        let out = Tensor::new(shape, data).expect("reduction keeps element count");
        self.push(out, Op::SumLast(a))
    }

    /// Concatenates along the trailing axis; leading shapes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).shape().to_vec();
        let lead = &first[..first.len() - 1];
        let mut width = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            width += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                let w = t.last_dim();
                data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(width);
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..end` of the trailing axis.
    pub fn slice(&mut self, src: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(src);
        let w = t.last_dim();
        if start >= end || end > w {
            return Err(Error::Shape {
                op: "slice",
                lhs: t.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let data = t
            .data()
            .chunks(w)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Slice { src, start, end }))
    }

    /// Gradients of the scalar `loss` with respect to each of `wrt`, in order.
    ///
    /// A variable the loss does not depend on gets a zero tensor.
    pub fn gradient(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let grads = self.backward(loss)?;
        Ok(wrt
            .iter()
            .map(|&v| {
                grads[v.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
            })
            .collect())
    }

    fn backward(&self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let g_data = g.data();
            let y = node.value.data();
            let mut acc = |v: Var, contribution: Vec<f64>| {
                let slot = &mut grads[v.0];
                match slot {
                    Some(t) => t
                        .data_mut()
                        .iter_mut()
                        .zip(contribution)
                        .for_each(|(a, c)| *a += c),
                    None => {
                        let shape = self.value(v).shape().to_vec();
                        *slot = Some(Tensor::new(shape, contribution).expect("grad shape"));
                    }
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(*a, reduce_to(g_data, self.value(*a).len()));
                    acc(*b, reduce_to(g_data, self.value(*b).len()));
                }
                Op::Sub(a, b) => {
                    acc(*a, reduce_to(g_data, self.value(*a).len()));
                    let neg: Vec<f64> = g_data.iter().map(|x| -x).collect();
                    acc(*b, reduce_to(&neg, self.value(*b).len()));
                }
                Op::Mul(a, b) => {
                    let (da, db) = (self.value(*a).data(), self.value(*b).data());
                    let ga: Vec<f64> = (0..g_data.len())
                        .map(|i| g_data[i] * db[i % db.len()])
                        .collect();
                    let gb: Vec<f64> = (0..g_data.len())
                        .map(|i| g_data[i] * da[i % da.len()])
                        .collect();
                    acc(*a, reduce_to(&ga, da.len()));
                    acc(*b, reduce_to(&gb, db.len()));
                }
                Op::Div(a, b) => {
                    let (da, db) = (self.value(*a).data(), self.value(*b).data());
                    let ga: Vec<f64> = (0..g_data.len())
                        .map(|i| g_data[i] / db[i % db.len()])
                        .collect();
                    let gb: Vec<f64> = (0..g_data.len())
                        .map(|i| {
                            let d = db[i % db.len()];
                            -g_data[i] * da[i % da.len()] / (d * d)
                        })
                        .collect();
                    acc(*a, reduce_to(&ga, da.len()));
                    acc(*b, reduce_to(&gb, db.len()));
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    // dA = G B^T, dB = A^T G
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g_data[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                ga[i * k + p] += gij * tb.data()[p * n + j];
                            }
                        }
                    }
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = ta.data()[i * k + p];
                            let row = &mut gb[p * n..(p + 1) * n];
                            for (r, gij) in row.iter_mut().zip(&g_data[i * n..(i + 1) * n]) {
                                *r += aip * gij;
                            }
                        }
                    }
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Tanh(a) => acc(*a, zip_map(g_data, y, |g, y| g * (1.0 - y * y))),
                Op::Sigmoid(a) => acc(*a, zip_map(g_data, y, |g, y| g * y * (1.0 - y))),
                Op::Softplus(a) => {
                    let x = self.value(*a).data();
                    acc(*a, zip_map(g_data, x, |g, x| g * sigmoid(x)));
                }
                Op::Exp(a) => acc(*a, zip_map(g_data, y, |g, y| g * y)),
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    acc(*a, zip_map(g_data, x, |g, x| g / x));
                }
                Op::Scale(a, c) => acc(*a, g_data.iter().map(|g| g * c).collect()),
                Op::AddScalar(a) => acc(*a, g_data.to_vec()),
                Op::MaxScalar(a, c) => {
                    let x = self.value(*a).data();
                    acc(*a, zip_map(g_data, x, |g, x| if x > *c { g } else { 0.0 }));
                }
                Op::Sum(a) => acc(*a, vec![g_data[0]; self.value(*a).len()]),
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    acc(*a, vec![g_data[0] / n as f64; n]);
                }
                Op::SumLast(a) => {
                    let t = self.value(*a);
                    let w = t.last_dim();
                    acc(*a, (0..t.len()).map(|i| g_data[i / w]).collect());
                }
                Op::Concat(parts) => {
                    let width = node.value.last_dim();
                    let rows = node.value.leading();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).last_dim();
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            let base = r * width + offset;
                            gp.extend_from_slice(&g_data[base..base + w]);
                        }
                        acc(p, gp);
                        offset += w;
                    }
                }
                Op::Slice { src, start, end } => {
                    let t = self.value(*src);
                    let w = t.last_dim();
                    let sw = end - start;
                    let mut gs = vec![0.0; t.len()];
                    for r in 0..t.leading() {
                        gs[r * w + start..r * w + end]
                            .copy_from_slice(&g_data[r * sw..(r + 1) * sw]);
                    }
                    acc(*src, gs);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(grads)
    }
}

fn zip_map(g: &[f64], x: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.iter().zip(x).map(|(&g, &x)| f(g, x)).collect()
}

/// Row-major `[m, k] x [k, n]`.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            for (o, bpj) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bpj;
            }
        }
    }
    out
}
