//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its output value and enough saved
//! state to run its vector-Jacobian product. Operands always precede their
//! results, so a single reverse sweep over the node list visits each node
//! once in a valid order.

use super::error::{shape_err, NumericsError, Result};
use super::kernels;
use super::scalar::Scalar;
use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        x: usize,
        rows: usize,
        cols: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    AddBias {
        x: usize,
        bias: usize,
        cols: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        factor: T,
    },
    MulScalar {
        x: usize,
        s: usize,
    },
    Exp {
        x: usize,
    },
    Gelu {
        x: usize,
    },
    Relu {
        x: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        cols: usize,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax {
        x: usize,
        cols: usize,
    },
    L2Normalize {
        x: usize,
        cols: usize,
        norms: Vec<T>,
    },
    SliceRows {
        x: usize,
        start: usize,
        cols: usize,
    },
    ConcatRows {
        a: usize,
        b: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
        len: usize,
        cols: usize,
    },
    ConcatCols {
        parts: Vec<(usize, usize)>,
    },
    GatherRows {
        table: usize,
        ids: Vec<usize>,
        cols: usize,
    },
    Reshape {
        x: usize,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        cols: usize,
        probs: Vec<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Recorded computation graph. Single-threaded; build one per sample when
/// running samples in parallel.
#[derive(Debug, Clone, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v).map_or_else(|| vec![T::zero(); len], <[T]>::to_vec)
    }

    /// Copy the gradient of `v` into `tensor.grad`.
    pub fn populate(&self, v: Var, tensor: &mut Tensor<T>) {
        if tensor.requires_grad {
            tensor.grad = Some(self.get_or_zeros(v, tensor.numel()));
        }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, delta: &[T]) {
    match slot {
        Some(g) => {
            for (a, &d) in g.iter_mut().zip(delta) {
                *a = *a + d;
            }
        }
        None => *slot = Some(delta.to_vec()),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Snapshot a node as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let shape = &self.nodes[v.0].shape;
        let cols = *shape.last().unwrap_or(&1);
        (self.nodes[v.0].value.len() / cols.max(1), cols)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        value: Vec<T>,
        requires_grad: bool,
        op: Op<T>,
    ) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { op: op_name });
        }
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Record a leaf. Its gradient is tracked iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: &Tensor<T>) -> Var {
        self.leaf_raw(tensor.shape().to_vec(), tensor.data().to_vec(), tensor.requires_grad)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Var {
        self.leaf_raw(shape.to_vec(), data, false)
    }

    fn leaf_raw(&mut self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(
            "matmul",
            vec![m, n],
            value,
            rg,
            Op::MatMul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(shape_err("transpose", &s, &[]));
        }
        let value = kernels::transpose(self.value(x), s[0], s[1]);
        let rg = self.rg(x);
        self.push(
            "transpose",
            vec![s[1], s[0]],
            value,
            rg,
            Op::Transpose {
                x: x.0,
                rows: s[0],
                cols: s[1],
            },
        )
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push("add", shape, value, rg, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("sub", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push("sub", shape, value, rg, Op::Sub { a: a.0, b: b.0 })
    }

    /// Adds a `[cols]` bias to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, cols) = self.dims2(x);
        if self.value(bias).len() != cols {
            return Err(shape_err("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias);
        let value = self
            .value(x)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bv)| v + bv))
            .collect();
        let rg = self.rg(x) || self.rg(bias);
        let shape = self.shape(x).to_vec();
        self.push(
            "add_bias",
            shape,
            value,
            rg,
            Op::AddBias {
                x: x.0,
                bias: bias.0,
                cols,
            },
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push("mul", shape, value, rg, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let value = self.value(x).iter().map(|&v| v * factor).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push("scale", shape, value, rg, Op::Scale { x: x.0, factor })
    }

    /// Multiplies every element of `x` by the single element of `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err("mul_scalar", self.shape(x), self.shape(s)));
        }
        let sv = self.value(s)[0];
        let value = self.value(x).iter().map(|&v| v * sv).collect();
        let rg = self.rg(x) || self.rg(s);
        let shape = self.shape(x).to_vec();
        self.push("mul_scalar", shape, value, rg, Op::MulScalar { x: x.0, s: s.0 })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).iter().map(|v| v.exp()).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push("exp", shape, value, rg, Op::Exp { x: x.0 })
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).iter().map(|&v| kernels::gelu(v)).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push("gelu", shape, value, rg, Op::Gelu { x: x.0 })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self
            .value(x)
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push("relu", shape, value, rg, Op::Relu { x: x.0 })
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (rows, cols) = self.dims2(x);
        if self.value(gamma).len() != cols || self.value(beta).len() != cols {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let (value, mean, rstd) =
            kernels::layer_norm(self.value(x), self.value(gamma), self.value(beta), rows, cols, eps);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let shape = self.shape(x).to_vec();
        self.push(
            "layer_norm",
            shape,
            value,
            rg,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                cols,
                mean,
                rstd,
            },
        )
    }

    /// Softmax over the last axis. `causal` masks entries above the diagonal.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Result<Var> {
        let (rows, cols) = self.dims2(x);
        let value = kernels::softmax_rows(self.value(x), rows, cols, causal);
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push("softmax", shape, value, rg, Op::Softmax { x: x.0, cols })
    }

    /// Scales each row (last axis) to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.dims2(x);
        let norms = kernels::row_norms(self.value(x), rows, cols);
        let eps = T::from_f64_lossy(super::NORM_EPS);
        if let Some(r) = norms.iter().position(|&n| n <= eps) {
            return Err(NumericsError::Degenerate {
                op: "l2_normalize",
                detail: format!("row {r} has zero norm"),
            });
        }
        let value = self
            .value(x)
            .chunks(cols)
            .zip(&norms)
            .flat_map(|(row, &n)| row.iter().map(move |&v| v / n))
            .collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(
            "l2_normalize",
            shape,
            value,
            rg,
            Op::L2Normalize { x: x.0, cols, norms },
        )
    }

    /// Rows `start..start+len` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x);
        if start + len > rows || len == 0 {
            return Err(NumericsError::Index {
                op: "slice_rows",
                index: start + len,
                bound: rows + 1,
            });
        }
        let value = self.value(x)[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(x);
        self.push(
            "slice_rows",
            vec![len, cols],
            value,
            rg,
            Op::SliceRows { x: x.0, start, cols },
        )
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims2(a);
        let (rb, cb) = self.dims2(b);
        if ca != cb {
            return Err(shape_err("concat_rows", self.shape(a), self.shape(b)));
        }
        let mut value = self.value(a).to_vec();
        value.extend_from_slice(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(
            "concat_rows",
            vec![ra + rb, ca],
            value,
            rg,
            Op::ConcatRows { a: a.0, b: b.0 },
        )
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x);
        if start + len > cols || len == 0 {
            return Err(NumericsError::Index {
                op: "slice_cols",
                index: start + len,
                bound: cols + 1,
            });
        }
        let value = self
            .value(x)
            .chunks(cols)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let rg = self.rg(x);
        self.push(
            "slice_cols",
            vec![rows, len],
            value,
            rg,
            Op::SliceCols {
                x: x.0,
                start,
                len,
                cols,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| NumericsError::Contract("concat_cols of nothing".into()))?;
        let (rows, _) = self.dims2(first);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p);
            if r != rows {
                return Err(shape_err("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push((p.0, c));
        }
        let total: usize = widths.iter().map(|w| w.1).sum();
        let mut value = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &(id, c) in &widths {
                value.extend_from_slice(&self.nodes[id].value[r * c..(r + 1) * c]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            "concat_cols",
            vec![rows, total],
            value,
            rg,
            Op::ConcatCols { parts: widths },
        )
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::Index {
                op: "gather_rows",
                index: bad,
                bound: rows,
            });
        }
        let t = self.value(table);
        let value = ids
            .iter()
            .flat_map(|&i| t[i * cols..(i + 1) * cols].iter().copied())
            .collect();
        let rg = self.rg(table);
        self.push(
            "gather_rows",
            vec![ids.len(), cols],
            value,
            rg,
            Op::GatherRows {
                table: table.0,
                ids: ids.to_vec(),
                cols,
            },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let value = self.value(x).to_vec();
        let rg = self.rg(x);
        self.push("reshape", shape.to_vec(), value, rg, Op::Reshape { x: x.0 })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let mut acc = T::zero();
        for &v in self.value(x) {
            acc = acc + v;
        }
        let rg = self.rg(x);
        self.push("sum", vec![1], vec![acc], rg, Op::Sum { x: x.0 })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::from_usize(self.value(x).len()).unwrap();
        let mut acc = T::zero();
        for &v in self.value(x) {
            acc = acc + v;
        }
        let rg = self.rg(x);
        self.push("mean", vec![1], vec![acc / n], rg, Op::Mean { x: x.0 })
    }

    /// Mean over rows of `-log softmax(logits[r])[targets[r]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2(logits);
        if targets.len() != rows {
            return Err(shape_err("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(NumericsError::Index {
                op: "cross_entropy",
                index: bad,
                bound: cols,
            });
        }
        let x = self.value(logits);
        let lse = kernels::logsumexp_rows(x, rows, cols);
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            total = total + (lse[r] - x[r * cols + t]);
        }
        let loss = total / T::from_usize(rows).unwrap();
        let probs = kernels::softmax_rows(x, rows, cols, false);
        let rg = self.rg(logits);
        self.push(
            "cross_entropy",
            vec![1],
            vec![loss],
            rg,
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                cols,
                probs,
            },
        )
    }

    /// Cosine similarity of two equal-length vectors, as a `[1]` node.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.value(a).len();
        if self.value(b).len() != d {
            return Err(shape_err("cosine", self.shape(a), self.shape(b)));
        }
        let a2 = self.reshape(a, &[1, d])?;
        let b2 = self.reshape(b, &[1, d])?;
        let an = self.l2_normalize(a2)?;
        let bn = self.l2_normalize(b2)?;
        let prod = self.mul(an, bn)?;
        self.sum(prod)
    }

    /// Backpropagate from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_with_seed(loss, &[T::one()])
    }

    /// Backpropagate an arbitrary upstream gradient `seed` from `output`.
    pub fn backward_with_seed(&self, output: Var, seed: &[T]) -> Result<Gradients<T>> {
        if seed.len() != self.value(output).len() {
            return Err(shape_err("backward", self.shape(output), &[seed.len()]));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.to_vec());
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NumericsError::NonFinite { op: "backward" });
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |i: usize| nodes[i].requires_grad;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if wants(a) {
                    let da = kernels::matmul_nt(g, &nodes[b].value, m, n, k);
                    accumulate(&mut grads[a], &da);
                }
                if wants(b) {
                    let db = kernels::matmul_tn(&nodes[a].value, g, m, k, n);
                    accumulate(&mut grads[b], &db);
                }
            }
            &Op::Transpose { x, rows, cols } => {
                if wants(x) {
                    let dx = kernels::transpose(g, cols, rows);
                    accumulate(&mut grads[x], &dx);
                }
            }
            &Op::Add { a, b } => {
                if wants(a) {
                    accumulate(&mut grads[a], g);
                }
                if wants(b) {
                    accumulate(&mut grads[b], g);
                }
            }
            &Op::Sub { a, b } => {
                if wants(a) {
                    accumulate(&mut grads[a], g);
                }
                if wants(b) {
                    let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                    accumulate(&mut grads[b], &neg);
                }
            }
            &Op::AddBias { x, bias, cols } => {
                if wants(x) {
                    accumulate(&mut grads[x], g);
                }
                if wants(bias) {
                    let mut db = vec![T::zero(); cols];
                    for row in g.chunks(cols) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    accumulate(&mut grads[bias], &db);
                }
            }
            &Op::Mul { a, b } => {
                if wants(a) {
                    let da: Vec<T> = g.iter().zip(&nodes[b].value).map(|(&gv, &bv)| gv * bv).collect();
                    accumulate(&mut grads[a], &da);
                }
                if wants(b) {
                    let db: Vec<T> = g.iter().zip(&nodes[a].value).map(|(&gv, &av)| gv * av).collect();
                    accumulate(&mut grads[b], &db);
                }
            }
            &Op::Scale { x, factor } => {
                let dx: Vec<T> = g.iter().map(|&v| v * factor).collect();
                accumulate(&mut grads[x], &dx);
            }
            &Op::MulScalar { x, s } => {
                let sv = nodes[s].value[0];
                if wants(x) {
                    let dx: Vec<T> = g.iter().map(|&v| v * sv).collect();
                    accumulate(&mut grads[x], &dx);
                }
                if wants(s) {
                    let ds = kernels::dot(g, &nodes[x].value);
                    accumulate(&mut grads[s], &[ds]);
                }
            }
            &Op::Exp { x } => {
                let dx: Vec<T> = g.iter().zip(&node.value).map(|(&gv, &y)| gv * y).collect();
                accumulate(&mut grads[x], &dx);
            }
            &Op::Gelu { x } => {
                let dx: Vec<T> = g
                    .iter()
                    .zip(&nodes[x].value)
                    .map(|(&gv, &xv)| gv * kernels::gelu_grad(xv))
                    .collect();
                accumulate(&mut grads[x], &dx);
            }
            &Op::Relu { x } => {
                let dx: Vec<T> = g
                    .iter()
                    .zip(&nodes[x].value)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(&mut grads[x], &dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cols,
                mean,
                rstd,
            } => {
                let (x, gamma, beta, cols) = (*x, *gamma, *beta, *cols);
                let xv = &nodes[x].value;
                let gam = &nodes[gamma].value;
                let n = T::from_usize(cols).unwrap();
                let mut dgamma = vec![T::zero(); cols];
                let mut dbeta = vec![T::zero(); cols];
                let mut dx = vec![T::zero(); xv.len()];
                for (r, (&mu, &rs)) in mean.iter().zip(rstd).enumerate() {
                    let row = &xv[r * cols..(r + 1) * cols];
                    let grow = &g[r * cols..(r + 1) * cols];
                    let mut sum_dxhat = T::zero();
                    let mut sum_dxhat_xhat = T::zero();
                    for c in 0..cols {
                        let xhat = (row[c] - mu) * rs;
                        let dxhat = grow[c] * gam[c];
                        dgamma[c] = dgamma[c] + grow[c] * xhat;
                        dbeta[c] = dbeta[c] + grow[c];
                        sum_dxhat = sum_dxhat + dxhat;
                        sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                    }
                    for c in 0..cols {
                        let xhat = (row[c] - mu) * rs;
                        let dxhat = grow[c] * gam[c];
                        dx[r * cols + c] = rs * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                    }
                }
                if wants(x) {
                    accumulate(&mut grads[x], &dx);
                }
                if wants(gamma) {
                    accumulate(&mut grads[gamma], &dgamma);
                }
                if wants(beta) {
                    accumulate(&mut grads[beta], &dbeta);
                }
            }
            &Op::Softmax { x, cols } => {
                let y = &node.value;
                let mut dx = vec![T::zero(); y.len()];
                for r in 0..y.len() / cols {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let inner = kernels::dot(yr, gr);
                    for c in 0..cols {
                        dx[r * cols + c] = yr[c] * (gr[c] - inner);
                    }
                }
                accumulate(&mut grads[x], &dx);
            }
            Op::L2Normalize { x, cols, norms } => {
                let (x, cols) = (*x, *cols);
                let y = &node.value;
                let mut dx = vec![T::zero(); y.len()];
                for (r, &nrm) in norms.iter().enumerate() {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let inner = kernels::dot(yr, gr);
                    for c in 0..cols {
                        dx[r * cols + c] = (gr[c] - yr[c] * inner) / nrm;
                    }
                }
                accumulate(&mut grads[x], &dx);
            }
            &Op::SliceRows { x, start, cols } => {
                let mut dx = vec![T::zero(); nodes[x].value.len()];
                dx[start * cols..start * cols + g.len()].copy_from_slice(g);
                accumulate(&mut grads[x], &dx);
            }
            &Op::ConcatRows { a, b } => {
                let na = nodes[a].value.len();
                if wants(a) {
                    accumulate(&mut grads[a], &g[..na]);
                }
                if wants(b) {
                    accumulate(&mut grads[b], &g[na..]);
                }
            }
            &Op::SliceCols { x, start, len, cols } => {
                let mut dx = vec![T::zero(); nodes[x].value.len()];
                for (r, grow) in g.chunks(len).enumerate() {
                    dx[r * cols + start..r * cols + start + len].copy_from_slice(grow);
                }
                accumulate(&mut grads[x], &dx);
            }
            Op::ConcatCols { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for &(id, c) in parts {
                    if wants(id) {
                        let mut dp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        accumulate(&mut grads[id], &dp);
                    }
                    offset += c;
                }
            }
            Op::GatherRows { table, ids, cols } => {
                let (table, cols) = (*table, *cols);
                let mut dt = vec![T::zero(); nodes[table].value.len()];
                for (i, &id) in ids.iter().enumerate() {
                    for c in 0..cols {
                        dt[id * cols + c] = dt[id * cols + c] + g[i * cols + c];
                    }
                }
                accumulate(&mut grads[table], &dt);
            }
            &Op::Reshape { x } => accumulate(&mut grads[x], g),
            &Op::Sum { x } => {
                let dx = vec![g[0]; nodes[x].value.len()];
                accumulate(&mut grads[x], &dx);
            }
            &Op::Mean { x } => {
                let n = nodes[x].value.len();
                let dx = vec![g[0] / T::from_usize(n).unwrap(); n];
                accumulate(&mut grads[x], &dx);
            }
            Op::CrossEntropy {
                logits,
                targets,
                cols,
                probs,
            } => {
                let cols = *cols;
                let rows = targets.len();
                let scale = g[0] / T::from_usize(rows).unwrap();
                let mut dx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    dx[r * cols + t] = dx[r * cols + t] - scale;
                }
                accumulate(&mut grads[*logits], &dx);
            }
        }
    }
}
