//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every op evaluates eagerly and appends a node to the [`Tape`]. Nodes are
//! stored in creation order, so the tape is topologically sorted by
//! construction and [`Tape::backward`] is a single reverse sweep.
//!
//! The primitive set is deliberately small: matmul, add, mul, scale, relu,
//! gelu, softmax, layer-norm, embedding lookup, dropout and softmax
//! cross-entropy, plus the shape-only ops reshape, permute and sum.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{MatLayout, Scalar};
use crate::tensor::{NamedTensorStore, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Matmul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_rhs: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: T,
    },
    Relu {
        a: Var,
    },
    Gelu {
        a: Var,
    },
    Softmax {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        a: Var,
        mask: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        count: usize,
    },
    Reshape {
        a: Var,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Sum {
        a: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Records operations for one forward pass. Confined to a single thread.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    dropout_rng: Option<ChaCha8Rng>,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// Inference tape: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            dropout_rng: None,
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Training tape: dropout masks are drawn from a generator seeded here.
    pub fn training(seed: u64) -> Self {
        Self {
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::new()
        }
    }

    /// Enables or disables the post-op NaN/Inf check (on by default in
    /// debug builds).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape nodes hold consistent shapes")
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    /// Adds a leaf holding a copy of `t`; it receives a gradient when
    /// `t.requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push_raw(t.shape().to_vec(), t.values().to_vec(), t.requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<T>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != value.len() || numel == 0 {
            return Err(Error::Shape(format!(
                "constant of shape {shape:?} given {} values",
                value.len()
            )));
        }
        Ok(self.push_raw(shape, value, false, Op::Leaf))
    }

    /// Adds a named parameter leaf. Names are reported back through
    /// [`Gradients::named`].
    pub fn param(&mut self, name: &str, t: &Tensor<T>, requires_grad: bool) -> Var {
        let v = self.push_raw(t.shape().to_vec(), t.values().to_vec(), requires_grad, Op::Leaf);
        if requires_grad {
            self.params.push((name.to_string(), v));
        }
        v
    }

    fn push_raw(&mut self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, value: Vec<T>, inputs: &[Var], op: Op<T>) -> Result<Var> {
        if self.check_finite && value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(shape, value, requires_grad, op))
    }

    /// Matrix product over the last two axes. Leading axes of `a` are batch
    /// axes; `b` is either a plain matrix shared by every batch entry or has
    /// the same leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let dim_err = || Error::Dimension {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(dim_err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(dim_err());
        }
        let lead = &sa[..sa.len() - 2];
        let shared_rhs = sb.len() == 2;
        if !shared_rhs && sb[..sb.len() - 2] != *lead {
            return Err(dim_err());
        }
        let batch: usize = lead.iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            if shared_rhs {
                T::gemm(
                    batch * m,
                    k,
                    n,
                    av,
                    MatLayout::row_major(k),
                    bv,
                    MatLayout::row_major(n),
                    T::zero(),
                    &mut out,
                );
            } else {
                for i in 0..batch {
                    T::gemm(
                        m,
                        k,
                        n,
                        &av[i * m * k..(i + 1) * m * k],
                        MatLayout::row_major(k),
                        &bv[i * k * n..(i + 1) * k * n],
                        MatLayout::row_major(n),
                        T::zero(),
                        &mut out[i * m * n..(i + 1) * m * n],
                    );
                }
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        self.push(
            "matmul",
            shape,
            out,
            &[a, b],
            Op::Matmul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            },
        )
    }

    /// Elementwise sum; `b` may have a shape equal to a trailing suffix of
    /// `a`'s shape, in which case it is broadcast over the leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::Dimension {
                op: "add",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let out: Vec<T> = av
            .chunks(bv.len())
            .flat_map(|chunk| chunk.iter().zip(bv).map(|(&x, &y)| x + y))
            .collect();
        let shape = sa.to_vec();
        self.push("add", shape, out, &[a, b], Op::Add { a, b })
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<T> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push("mul", shape, out, &[a, b], Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let out: Vec<T> = self.nodes[a.0].value.iter().map(|&x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.push("scale", shape, out, &[a], Op::Scale { a, factor })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out: Vec<T> = self.nodes[a.0]
            .value
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let shape = self.shape(a).to_vec();
        self.push("relu", shape, out, &[a], Op::Relu { a })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out: Vec<T> = self.nodes[a.0].value.iter().map(|&x| gelu_fwd(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push("gelu", shape, out, &[a], Op::Gelu { a })
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let d = *self.shape(a).last().expect("tensors have rank >= 1");
        let mut out = self.nodes[a.0].value.clone();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        let shape = self.shape(a).to_vec();
        self.push("softmax", shape, out, &[a], Op::Softmax { a })
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().expect("tensors have rank >= 1");
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: sx.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        let dt = T::from_usize(d).expect("feature width fits the scalar type");
        let xv = &self.nodes[x.0].value;
        let gv = &self.nodes[gain.0].value;
        let bv = &self.nodes[bias.0].value;
        let rows = xv.len() / d;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        self.push(
            "layer_norm",
            sx,
            out,
            &[x, gain, bias],
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Row lookup: returns a tensor of shape `lead_shape ++ [width]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], lead_shape: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(Error::Shape(format!("embedding table must be 2-D, got {st:?}")));
        }
        if lead_shape.iter().product::<usize>() != ids.len() || ids.is_empty() {
            return Err(Error::Shape(format!(
                "{} ids cannot fill lookup shape {lead_shape:?}",
                ids.len()
            )));
        }
        let (rows, width) = (st[0], st[1]);
        let tv = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index { index: id, size: rows });
            }
            out.extend_from_slice(&tv[id * width..(id + 1) * width]);
        }
        let mut shape = lead_shape.to_vec();
        shape.push(width);
        self.push(
            "embedding",
            shape,
            out,
            &[table],
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Inverted dropout. Identity on inference tapes or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Contract(format!("dropout probability {p} not in [0,1)")));
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(a);
        };
        if p == 0.0 {
            return Ok(a);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.nodes[a.0].value.len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out: Vec<T> = self.nodes[a.0].value.iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let shape = self.shape(a).to_vec();
        self.push("dropout", shape, out, &[a], Op::Dropout { a, mask })
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` (`[..., V]`, flattened to rows). `None` targets are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        let v = *sl.last().expect("tensors have rank >= 1");
        if v < 2 {
            return Err(Error::Contract(format!(
                "cross-entropy needs at least 2 classes, got {v}"
            )));
        }
        let rows = self.nodes[logits.0].value.len() / v;
        if targets.len() != rows {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: sl,
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().flatten().find(|&&t| t >= v) {
            return Err(Error::Index { index: bad, size: v });
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(Error::Contract("cross-entropy over zero targets".into()));
        }
        let mut probs = self.nodes[logits.0].value.clone();
        let mut total = T::zero();
        for (row, target) in probs.chunks_mut(v).zip(targets) {
            let lse = log_sum_exp(row);
            if let Some(t) = *target {
                total += lse - row[t];
            }
            for p in row.iter_mut() {
                *p = (*p - lse).exp();
            }
        }
        let loss = total / T::from_usize(count).expect("count fits the scalar type");
        self.push(
            "cross_entropy",
            vec![1],
            vec![loss],
            &[logits],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.nodes[a.0].value.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = self.nodes[a.0].value.clone();
        self.push("reshape", shape.to_vec(), out, &[a], Op::Reshape { a })
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let mut seen = vec![false; sa.len()];
        if perm.len() != sa.len()
            || perm
                .iter()
                .any(|&p| p >= sa.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Dimension {
                op: "permute",
                lhs: sa,
                rhs: perm.to_vec(),
            });
        }
        let (out, shape) = permute_data(&self.nodes[a.0].value, &sa, perm);
        self.push("permute", shape, out, &[a], Op::Permute { a, perm: perm.to_vec() })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.iter().copied().sum::<T>();
        self.push("sum", vec![1], vec![s], &[a], Op::Sum { a })
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backward_node(&nodes, node, &g, &mut grads);
        }
        let leaf_grads = nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| {
                if matches!(n.op, Op::Leaf) && n.requires_grad {
                    Some(g.unwrap_or_else(|| vec![T::zero(); n.value.len()]))
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients {
            grads: leaf_grads,
            params: self.params,
        })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(String, Var)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of the named parameter leaves, in registration order.
    pub fn named(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.params.iter().map(|(name, v)| {
            (
                name.as_str(),
                self.grads[v.0].as_deref().expect("named params require grad"),
            )
        })
    }

    /// Adds each named gradient into the matching tensor's `grad` field.
    pub fn accumulate_into(&self, store: &mut NamedTensorStore<T>) -> Result<()> {
        for (name, g) in self.named() {
            let t = store
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("no tensor `{name}` in store")))?;
            t.accumulate_grad(g)?;
        }
        Ok(())
    }
}

fn add_into<T: Scalar>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var, contrib: Vec<T>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contrib),
    }
}

fn backward_node<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let rg = |v: Var| nodes[v.0].requires_grad;
    match &node.op {
        Op::Leaf => {}
        &Op::Matmul {
            a,
            b,
            batch,
            m,
            k,
            n,
            shared_rhs,
        } => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            if rg(a) {
                let mut da = vec![T::zero(); batch * m * k];
                if shared_rhs {
                    T::gemm(
                        batch * m,
                        n,
                        k,
                        g,
                        MatLayout::row_major(n),
                        bv,
                        MatLayout::transposed(n),
                        T::zero(),
                        &mut da,
                    );
                } else {
                    for i in 0..batch {
                        T::gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            MatLayout::row_major(n),
                            &bv[i * k * n..(i + 1) * k * n],
                            MatLayout::transposed(n),
                            T::zero(),
                            &mut da[i * m * k..(i + 1) * m * k],
                        );
                    }
                }
                add_into(grads, nodes, a, da);
            }
            if rg(b) {
                let mut db = vec![T::zero(); bv.len()];
                if shared_rhs {
                    T::gemm(
                        k,
                        batch * m,
                        n,
                        av,
                        MatLayout::transposed(k),
                        g,
                        MatLayout::row_major(n),
                        T::zero(),
                        &mut db,
                    );
                } else {
                    for i in 0..batch {
                        T::gemm(
                            k,
                            m,
                            n,
                            &av[i * m * k..(i + 1) * m * k],
                            MatLayout::transposed(k),
                            &g[i * m * n..(i + 1) * m * n],
                            MatLayout::row_major(n),
                            T::zero(),
                            &mut db[i * k * n..(i + 1) * k * n],
                        );
                    }
                }
                add_into(grads, nodes, b, db);
            }
        }
        &Op::Add { a, b } => {
            if rg(b) {
                let len = nodes[b.0].value.len();
                let mut db = vec![T::zero(); len];
                for chunk in g.chunks(len) {
                    db.iter_mut().zip(chunk).for_each(|(d, &x)| *d += x);
                }
                add_into(grads, nodes, b, db);
            }
            if rg(a) {
                add_into(grads, nodes, a, g.to_vec());
            }
        }
        &Op::Mul { a, b } => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            if rg(a) {
                add_into(grads, nodes, a, g.iter().zip(bv).map(|(&x, &y)| x * y).collect());
            }
            if rg(b) {
                add_into(grads, nodes, b, g.iter().zip(av).map(|(&x, &y)| x * y).collect());
            }
        }
        &Op::Scale { a, factor } => {
            add_into(grads, nodes, a, g.iter().map(|&x| x * factor).collect());
        }
        &Op::Relu { a } => {
            let av = &nodes[a.0].value;
            let da = g
                .iter()
                .zip(av)
                .map(|(&x, &v)| if v > T::zero() { x } else { T::zero() })
                .collect();
            add_into(grads, nodes, a, da);
        }
        &Op::Gelu { a } => {
            let av = &nodes[a.0].value;
            let da = g.iter().zip(av).map(|(&x, &v)| x * gelu_grad(v)).collect();
            add_into(grads, nodes, a, da);
        }
        &Op::Softmax { a } => {
            let d = *node.shape.last().expect("rank >= 1");
            let y = &node.value;
            let mut da = vec![T::zero(); y.len()];
            for ((dr, yr), gr) in da.chunks_mut(d).zip(y.chunks(d)).zip(g.chunks(d)) {
                let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                for j in 0..d {
                    dr[j] = yr[j] * (gr[j] - dot);
                }
            }
            add_into(grads, nodes, a, da);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let d = *node.shape.last().expect("rank >= 1");
            let gv = &nodes[gain.0].value;
            if rg(*gain) || rg(*bias) {
                let mut dg = vec![T::zero(); d];
                let mut db = vec![T::zero(); d];
                for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        dg[j] += gr[j] * hr[j];
                        db[j] += gr[j];
                    }
                }
                add_into(grads, nodes, *gain, dg);
                add_into(grads, nodes, *bias, db);
            }
            if rg(*x) {
                let dt = T::from_usize(d).expect("width fits");
                let mut dx = vec![T::zero(); g.len()];
                for (r, ((dr, gr), hr)) in dx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate() {
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh /= dt;
                    mean_dh_h /= dt;
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        dr[j] = rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                add_into(grads, nodes, *x, dx);
            }
        }
        Op::Embedding { table, ids } => {
            let width = nodes[table.0].shape[1];
            let mut dt = vec![T::zero(); nodes[table.0].value.len()];
            for (&id, gr) in ids.iter().zip(g.chunks(width)) {
                dt[id * width..(id + 1) * width]
                    .iter_mut()
                    .zip(gr)
                    .for_each(|(d, &x)| *d += x);
            }
            add_into(grads, nodes, *table, dt);
        }
        Op::Dropout { a, mask } => {
            add_into(grads, nodes, *a, g.iter().zip(mask).map(|(&x, &m)| x * m).collect());
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
            count,
        } => {
            let v = *nodes[logits.0].shape.last().expect("rank >= 1");
            let scale = g[0] / T::from_usize(*count).expect("count fits");
            let mut dl = vec![T::zero(); probs.len()];
            for ((dr, pr), t) in dl.chunks_mut(v).zip(probs.chunks(v)).zip(targets) {
                if let Some(t) = *t {
                    for j in 0..v {
                        dr[j] = pr[j] * scale;
                    }
                    dr[t] -= scale;
                }
            }
            add_into(grads, nodes, *logits, dl);
        }
        &Op::Reshape { a } => add_into(grads, nodes, a, g.to_vec()),
        Op::Permute { a, perm } => {
            let mut inverse = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            let (da, _) = permute_data(g, &node.shape, &inverse);
            add_into(grads, nodes, *a, da);
        }
        &Op::Sum { a } => add_into(grads, nodes, a, vec![g[0]; nodes[a.0].value.len()]),
    }
}

fn permute_data<T: Copy>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        s += *x;
    }
    for x in row.iter_mut() {
        *x /= s;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_fwd<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn matmul_identity_and_small_product() {
        let mut tape = Tape::<f64>::new();
        let i2 = tape.leaf(&t64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.leaf(&t64(&[2, 2], &[2.0, 3.0, 4.0, 5.0]));
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p), &[2.0, 3.0, 4.0, 5.0]);

        let a = tape.leaf(&t64(&[1, 2], &[1.0, 2.0]));
        let b = tape.leaf(&t64(&[2, 1], &[3.0, 4.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[11.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch_naming_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(&Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(&Tensor::zeros(vec![4, 5]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut tape = Tape::<f64>::new();
        let uniform = tape.leaf(&Tensor::zeros(vec![1, 8]));
        let l = tape.cross_entropy(uniform, &[Some(5)]).unwrap();
        assert!((tape.item(l) - 8f64.ln()).abs() < 1e-12);

        let mut sat = vec![0.0; 8];
        sat[3] = 30.0;
        let s = tape.leaf(&t64(&[1, 8], &sat));
        let l = tape.cross_entropy(s, &[Some(3)]).unwrap();
        assert!(tape.item(l) < 1e-12);

        let x = tape.leaf(&t64(&[1, 3], &[1.0, 2.0, 3.0]));
        let l = tape.cross_entropy(x, &[Some(2)]).unwrap();
        assert!((tape.item(l) - 0.40761).abs() < 1e-5);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(&Tensor::zeros(vec![2, 4]));
        assert!(matches!(
            tape.cross_entropy(x, &[Some(1), Some(4)]),
            Err(Error::Index { index: 4, size: 4 })
        ));
    }

    #[test]
    fn backward_square_and_independent_param() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param("x", &t64(&[1, 1], &[3.0]), true);
        let p = tape.param("p", &t64(&[1, 1], &[7.0]), true);
        let y = tape.matmul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0]);
        assert_eq!(grads.get(p).unwrap(), &[0.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&t64(&[2], &[1.0, 2.0]).with_grad());
        let y = tape.relu(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::<f64>::new();
        let vals: Vec<f64> = (0..24).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let x = tape.leaf(&t64(&[4, 6], &vals));
        let y = tape.softmax(x).unwrap();
        for row in tape.value(y).chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut tape = Tape::<f64>::new();
        let vals: Vec<f64> = (0..40).map(|i| ((i * 13) % 17) as f64 * 3.0 - 20.0).collect();
        let x = tape.leaf(&t64(&[4, 10], &vals));
        let g = tape.leaf(&Tensor::full(vec![10], 1.0));
        let b = tape.leaf(&Tensor::zeros(vec![10]));
        let y = tape.layer_norm(x, g, b).unwrap();
        for row in tape.value(y).chunks(10) {
            let mean = row.iter().sum::<f64>() / 10.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = tape.permute(x, &[1, 0]).unwrap();
        assert_eq!(tape.shape(y), &[3, 2]);
        assert_eq!(tape.value(y), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn non_finite_results_are_errors_when_checked() {
        let mut tape = Tape::<f32>::new();
        tape.set_check_finite(true);
        let x = tape.leaf(&Tensor::full(vec![2], f32::MAX));
        assert!(matches!(tape.scale(x, 10.0), Err(Error::NonFinite { op: "scale" })));
    }

    #[test]
    fn dropout_is_identity_at_inference_and_seeded_in_training() {
        let x = t64(&[64], &vec![1.0; 64]);
        let mut tape = Tape::<f64>::new();
        let v = tape.leaf(&x);
        assert_eq!(tape.dropout(v, 0.5).unwrap(), v);

        let run = |seed| {
            let mut tape = Tape::<f64>::training(seed);
            let v = tape.leaf(&x);
            let d = tape.dropout(v, 0.5).unwrap();
            tape.value(d).to_vec()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
        assert!(run(3).iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
