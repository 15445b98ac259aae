//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] is a single-threaded, append-only record of primitive
//! applications. Leaves registered through [`Tape::leaf`] are the trainable
//! parameters; [`Tensor::constant`] wraps data gradients never flow into.
//! An operation records itself only when one of its inputs is tracked, so
//! inference-style forwards pay no taping cost. [`Tape::backward`] consumes
//! the tape and returns the gradient of a scalar loss with respect to every
//! leaf.
//!
//! Sparse operands (propagation operators, attention patterns) are constants
//! by construction: no gradient is ever computed for a sparse matrix.
//!
//! Every primitive checks its output for non-finite values and reports the
//! offending operation, so numerical blowups surface at their source.

mod adam;
mod grad_check;

pub use adam::{Adam, AdamConfig};
pub use grad_check::{gradient_check, GradCheckReport};

use std::rc::Rc;

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::graph::Label;
use crate::scalar::Scalar;
use crate::sparse::Csr;

#[derive(Clone, Debug)]
pub struct Tensor<S> {
    value: Rc<Mat<S>>,
    node: Option<usize>,
}

impl<S: Scalar> Tensor<S> {
    /// Untracked data; gradients never flow into it.
    pub fn constant(value: Mat<S>) -> Self {
        Tensor {
            value: Rc::new(value),
            node: None,
        }
    }

    pub fn value(&self) -> &Mat<S> {
        &self.value
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// The scalar held by a 1x1 tensor.
    pub fn scalar(&self) -> S {
        assert_eq!(self.shape(), (1, 1), "scalar() on non-scalar tensor");
        self.value.at(0, 0)
    }
}

enum Op<S> {
    Leaf,
    Matmul {
        a: Rc<Mat<S>>,
        b: Rc<Mat<S>>,
        an: Option<usize>,
        bn: Option<usize>,
    },
    Spmm {
        s: Rc<Csr<S>>,
        xn: usize,
    },
    Add {
        an: Option<usize>,
        bn: Option<usize>,
    },
    MulScalar {
        c: S,
        an: usize,
    },
    ConcatCols {
        parts: Vec<(Option<usize>, usize)>,
    },
    Relu {
        x: Rc<Mat<S>>,
        an: usize,
    },
    LeakyRelu {
        x: Rc<Mat<S>>,
        slope: S,
        an: usize,
    },
    Elu {
        x: Rc<Mat<S>>,
        an: usize,
    },
    SoftmaxRows {
        y: Rc<Mat<S>>,
        an: usize,
    },
    RowMaxPool {
        argmax: Vec<usize>,
        in_rows: usize,
        an: usize,
    },
    MaskedCrossEntropy {
        probs: Rc<Mat<S>>,
        labels: Vec<Label>,
        mask_rows: Vec<usize>,
        an: usize,
    },
    Mix {
        weights: Rc<Mat<S>>,
        parts: Vec<Rc<Mat<S>>>,
        wn: Option<usize>,
        part_nodes: Vec<Option<usize>>,
    },
    SoftmaxEntropyRow {
        probs: Vec<S>,
        entropy: S,
        an: usize,
    },
    SparseAttention {
        pattern: Rc<Csr<S>>,
        s_tgt: Rc<Mat<S>>,
        s_src: Rc<Mat<S>>,
        v: Rc<Mat<S>>,
        weights: Vec<S>,
        slope: S,
        tn: Option<usize>,
        sn: Option<usize>,
        vn: Option<usize>,
    },
    SumAll {
        an: usize,
    },
}

struct Node<S> {
    rows: usize,
    cols: usize,
    op: Op<S>,
}

#[derive(Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    consumed: bool,
}

/// Gradients produced by one backward pass, addressed by the tensors whose
/// tape the pass consumed.
pub struct Gradients<S> {
    by_node: Vec<Option<Mat<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to `t`. Leaves that did not
    /// influence the loss get zeros of their own shape.
    pub fn wrt(&self, t: &Tensor<S>) -> Mat<S> {
        let node = t.node.expect("gradient of an untracked tensor");
        match &self.by_node[node] {
            Some(g) => g.clone(),
            None => Mat::zeros(t.value.rows(), t.value.cols()),
        }
    }
}

pub(crate) fn softmax_rows_impl<S: Scalar>(x: &Mat<S>) -> Mat<S> {
    let mut out = Mat::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let row = x.row(i);
        let max = row.iter().fold(S::neg_infinity(), |m, &v| if v > m { v } else { m });
        let orow = out.row_mut(i);
        let mut sum = S::zero();
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o = *o / sum;
        }
    }
    out
}

/// Entropy of a probability vector, with the 0 ln 0 = 0 convention.
pub fn entropy_of_probs<S: Scalar>(probs: &[S]) -> S {
    let tiny = S::of(1e-300);
    probs
        .iter()
        .map(|&p| if p > tiny { -p * p.ln() } else { S::zero() })
        .sum()
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a trainable leaf.
    pub fn leaf(&mut self, value: Mat<S>) -> Tensor<S> {
        let node = self.push(value.rows(), value.cols(), Op::Leaf);
        Tensor {
            value: Rc::new(value),
            node: Some(node),
        }
    }

    fn push(&mut self, rows: usize, cols: usize, op: Op<S>) -> usize {
        self.nodes.push(Node { rows, cols, op });
        self.nodes.len() - 1
    }

    fn finish(&mut self, op_name: &str, value: Mat<S>, op: Option<Op<S>>) -> Result<Tensor<S>> {
        if !value.all_finite() {
            return Err(Error::numerical(op_name, "non-finite value in output"));
        }
        let node = op.map(|op| self.push(value.rows(), value.cols(), op));
        Ok(Tensor {
            value: Rc::new(value),
            node,
        })
    }

    pub fn matmul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        if a.value.cols() != b.value.rows() {
            return Err(shape_err("matmul", a, b));
        }
        let value = a.value.matmul(&b.value);
        let op = (a.node.is_some() || b.node.is_some()).then(|| Op::Matmul {
            a: Rc::clone(&a.value),
            b: Rc::clone(&b.value),
            an: a.node,
            bn: b.node,
        });
        self.finish("matmul", value, op)
    }

    /// Sparse constant times dense. The sparse operand never receives
    /// gradients.
    pub fn spmm(&mut self, s: &Rc<Csr<S>>, x: &Tensor<S>) -> Result<Tensor<S>> {
        if s.n_cols() != x.value.rows() {
            return Err(Error::Shape {
                op: "spmm",
                detail: format!(
                    "{}x{} sparse vs {}x{} dense",
                    s.n_rows(),
                    s.n_cols(),
                    x.value.rows(),
                    x.value.cols()
                ),
            });
        }
        let value = s.spmm(&x.value);
        let op = x.node.map(|xn| Op::Spmm { s: Rc::clone(s), xn });
        self.finish("spmm", value, op)
    }

    pub fn add(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        if a.shape() != b.shape() {
            return Err(shape_err("add", a, b));
        }
        let value = a.value.add(&b.value);
        let op = (a.node.is_some() || b.node.is_some()).then_some(Op::Add {
            an: a.node,
            bn: b.node,
        });
        self.finish("add", value, op)
    }

    pub fn mul_scalar(&mut self, a: &Tensor<S>, c: S) -> Result<Tensor<S>> {
        let value = a.value.scale(c);
        let op = a.node.map(|an| Op::MulScalar { c, an });
        self.finish("mul_scalar", value, op)
    }

    pub fn concat_cols(&mut self, parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
        if parts.is_empty() {
            return Err(Error::Shape {
                op: "concat_cols",
                detail: "no parts".into(),
            });
        }
        let rows = parts[0].value.rows();
        if parts.iter().any(|p| p.value.rows() != rows) {
            return Err(Error::Shape {
                op: "concat_cols",
                detail: "row counts differ".into(),
            });
        }
        let mats: Vec<&Mat<S>> = parts.iter().map(|p| &*p.value).collect();
        let value = Mat::hcat(&mats);
        let op = parts.iter().any(|p| p.node.is_some()).then(|| Op::ConcatCols {
            parts: parts.iter().map(|p| (p.node, p.value.cols())).collect(),
        });
        self.finish("concat_cols", value, op)
    }

    pub fn relu(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let value = a.value.map(|v| if v > S::zero() { v } else { S::zero() });
        let op = a.node.map(|an| Op::Relu {
            x: Rc::clone(&a.value),
            an,
        });
        self.finish("relu", value, op)
    }

    /// Derivative at exactly zero is `slope`.
    pub fn leaky_relu(&mut self, a: &Tensor<S>, slope: S) -> Result<Tensor<S>> {
        let value = a.value.map(|v| if v > S::zero() { v } else { slope * v });
        let op = a.node.map(|an| Op::LeakyRelu {
            x: Rc::clone(&a.value),
            slope,
            an,
        });
        self.finish("leaky_relu", value, op)
    }

    pub fn elu(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let value = a
            .value
            .map(|v| if v > S::zero() { v } else { v.exp() - S::one() });
        let op = a.node.map(|an| Op::Elu {
            x: Rc::clone(&a.value),
            an,
        });
        self.finish("elu", value, op)
    }

    pub fn softmax_rows(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let value = softmax_rows_impl(&a.value);
        let y = Rc::new(value);
        let op = a.node.map(|an| Op::SoftmaxRows { y: Rc::clone(&y), an });
        if !y.all_finite() {
            return Err(Error::numerical("softmax_rows", "non-finite value in output"));
        }
        let node = op.map(|op| self.push(y.rows(), y.cols(), op));
        Ok(Tensor { value: y, node })
    }

    /// Per-row maximum over the columns selected by `pattern`'s rows:
    /// out[v, c] = max over u in pattern.row(v) of x[u, c]. Rows with an
    /// empty pattern produce zeros. Gradient flows only to the argmax entry;
    /// ties resolve to the lowest index u.
    pub fn row_max_pool(&mut self, pattern: &Rc<Csr<S>>, x: &Tensor<S>) -> Result<Tensor<S>> {
        if pattern.n_cols() != x.value.rows() {
            return Err(Error::Shape {
                op: "row_max_pool",
                detail: format!(
                    "pattern {}x{} vs dense {}x{}",
                    pattern.n_rows(),
                    pattern.n_cols(),
                    x.value.rows(),
                    x.value.cols()
                ),
            });
        }
        let n = pattern.n_rows();
        let d = x.value.cols();
        let mut value = Mat::zeros(n, d);
        let mut argmax = vec![usize::MAX; n * d];
        for v in 0..n {
            let (cols, _) = pattern.row(v);
            if cols.is_empty() {
                continue;
            }
            let orow = value.row_mut(v);
            for c in 0..d {
                let mut best_u = cols[0];
                let mut best = x.value.at(cols[0], c);
                for &u in &cols[1..] {
                    let cand = x.value.at(u, c);
                    if cand > best {
                        best = cand;
                        best_u = u;
                    }
                }
                orow[c] = best;
                argmax[v * d + c] = best_u;
            }
        }
        let op = x.node.map(|an| Op::RowMaxPool {
            argmax,
            in_rows: x.value.rows(),
            an,
        });
        self.finish("row_max_pool", value, op)
    }

    /// Mean cross-entropy over the masked rows of `logits`.
    pub fn masked_cross_entropy(
        &mut self,
        logits: &Tensor<S>,
        labels: &[Label],
        mask: &[bool],
    ) -> Result<Tensor<S>> {
        let (n, c) = logits.shape();
        if labels.len() != n || mask.len() != n {
            return Err(Error::Shape {
                op: "masked_cross_entropy",
                detail: format!("{n} logit rows vs {} labels, {} mask", labels.len(), mask.len()),
            });
        }
        let mask_rows: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        if mask_rows.is_empty() {
            return Err(Error::numerical("masked_cross_entropy", "empty mask"));
        }
        for &i in &mask_rows {
            if labels[i] < 0 || labels[i] as usize >= c {
                return Err(Error::data(format!(
                    "masked row {i} has invalid label {} for {c} classes",
                    labels[i]
                )));
            }
        }
        let probs = Rc::new(softmax_rows_impl(&logits.value));
        let m = S::of(mask_rows.len() as f64);
        let tiny = S::of(1e-300);
        let mut loss = S::zero();
        for &i in &mask_rows {
            let p = probs.at(i, labels[i] as usize).max(tiny);
            loss -= p.ln();
        }
        loss = loss / m;
        let value = Mat::from_vec(1, 1, vec![loss]);
        let op = logits.node.map(|an| Op::MaskedCrossEntropy {
            probs: Rc::clone(&probs),
            labels: labels.to_vec(),
            mask_rows,
            an,
        });
        self.finish("masked_cross_entropy", value, op)
    }

    /// Weighted sum of equally shaped matrices: sum_k weights[0, k] *
    /// parts[k]. Gradients flow to the weights row and to every part.
    pub fn mix(&mut self, weights: &Tensor<S>, parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
        if weights.value.rows() != 1 || weights.value.cols() != parts.len() {
            return Err(Error::Shape {
                op: "mix",
                detail: format!(
                    "weights {}x{} vs {} parts",
                    weights.value.rows(),
                    weights.value.cols(),
                    parts.len()
                ),
            });
        }
        if parts.is_empty() {
            return Err(Error::Shape {
                op: "mix",
                detail: "no parts".into(),
            });
        }
        let shape = parts[0].shape();
        if parts.iter().any(|p| p.shape() != shape) {
            return Err(Error::Shape {
                op: "mix",
                detail: "part shapes differ".into(),
            });
        }
        let mut value = Mat::zeros(shape.0, shape.1);
        for (k, p) in parts.iter().enumerate() {
            let w = weights.value.at(0, k);
            for (o, &x) in value.data_mut().iter_mut().zip(p.value.data()) {
                *o = *o + w * x;
            }
        }
        let tracked = weights.node.is_some() || parts.iter().any(|p| p.node.is_some());
        let op = tracked.then(|| Op::Mix {
            weights: Rc::clone(&weights.value),
            parts: parts.iter().map(|p| Rc::clone(&p.value)).collect(),
            wn: weights.node,
            part_nodes: parts.iter().map(|p| p.node).collect(),
        });
        self.finish("mix", value, op)
    }

    /// Entropy of softmax(alpha) for a 1xK row, as a differentiable scalar.
    /// d entropy / d alpha_j = -p_j (ln p_j + entropy).
    pub fn softmax_entropy_row(&mut self, alpha: &Tensor<S>) -> Result<Tensor<S>> {
        if alpha.value.rows() != 1 {
            return Err(Error::Shape {
                op: "softmax_entropy_row",
                detail: format!("expected 1xK, got {}x{}", alpha.value.rows(), alpha.value.cols()),
            });
        }
        let probs_mat = softmax_rows_impl(&alpha.value);
        let probs: Vec<S> = probs_mat.row(0).to_vec();
        let entropy = entropy_of_probs(&probs);
        let value = Mat::from_vec(1, 1, vec![entropy]);
        let op = alpha.node.map(|an| Op::SoftmaxEntropyRow {
            probs,
            entropy,
            an,
        });
        self.finish("softmax_entropy_row", value, op)
    }

    /// Attention-weighted aggregation over a fixed sparsity pattern.
    /// Per row i with neighborhood N(i) = pattern.row(i):
    /// w = softmax_u(leaky_relu(s_tgt[i] + s_src[u])), out[i] = sum w_u v[u].
    pub fn sparse_attention(
        &mut self,
        pattern: &Rc<Csr<S>>,
        s_tgt: &Tensor<S>,
        s_src: &Tensor<S>,
        v: &Tensor<S>,
        slope: S,
    ) -> Result<Tensor<S>> {
        let n = pattern.n_rows();
        if pattern.n_cols() != n
            || s_tgt.shape() != (n, 1)
            || s_src.shape() != (n, 1)
            || v.value.rows() != n
        {
            return Err(Error::Shape {
                op: "sparse_attention",
                detail: format!(
                    "pattern {}x{}, s_tgt {:?}, s_src {:?}, v {:?}",
                    pattern.n_rows(),
                    pattern.n_cols(),
                    s_tgt.shape(),
                    s_src.shape(),
                    v.shape()
                ),
            });
        }
        let d = v.value.cols();
        let mut value = Mat::zeros(n, d);
        let mut weights = vec![S::zero(); pattern.nnz()];
        let offsets = pattern.row_offsets();
        for i in 0..n {
            let (cols, _) = pattern.row(i);
            if cols.is_empty() {
                continue;
            }
            let span = offsets[i]..offsets[i + 1];
            let mut max_e = S::neg_infinity();
            for (slot, &u) in span.clone().zip(cols) {
                let z = s_tgt.value.at(i, 0) + s_src.value.at(u, 0);
                let e = if z > S::zero() { z } else { slope * z };
                weights[slot] = e;
                if e > max_e {
                    max_e = e;
                }
            }
            let mut sum = S::zero();
            for slot in span.clone() {
                weights[slot] = (weights[slot] - max_e).exp();
                sum += weights[slot];
            }
            let orow = value.row_mut(i);
            for (slot, &u) in span.zip(cols) {
                weights[slot] = weights[slot] / sum;
                let w = weights[slot];
                for (o, &x) in orow.iter_mut().zip(v.value.row(u)) {
                    *o = *o + w * x;
                }
            }
        }
        let tracked = s_tgt.node.is_some() || s_src.node.is_some() || v.node.is_some();
        let op = tracked.then(|| Op::SparseAttention {
            pattern: Rc::clone(pattern),
            s_tgt: Rc::clone(&s_tgt.value),
            s_src: Rc::clone(&s_src.value),
            v: Rc::clone(&v.value),
            weights,
            slope,
            tn: s_tgt.node,
            sn: s_src.node,
            vn: v.node,
        });
        self.finish("sparse_attention", value, op)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum_all(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let value = Mat::from_vec(1, 1, vec![a.value.data().iter().copied().sum()]);
        let op = a.node.map(|an| Op::SumAll { an });
        self.finish("sum_all", value, op)
    }

    /// Reverse pass from a scalar loss. Consumes the tape: recording further
    /// ops or running backward again is an error.
    pub fn backward(&mut self, loss: &Tensor<S>) -> Result<Gradients<S>> {
        if self.consumed {
            return Err(Error::numerical(
                "backward",
                "tape already consumed by a previous backward pass",
            ));
        }
        if loss.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be 1x1, got {:?}", loss.shape()),
            });
        }
        let root = loss.node.ok_or_else(|| {
            Error::numerical("backward", "loss does not depend on any tracked leaf")
        })?;
        self.consumed = true;
        let mut grads: Vec<Option<Mat<S>>> = vec![None; self.nodes.len()];
        grads[root] = Some(Mat::from_vec(1, 1, vec![S::one()]));

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::Matmul { a, b, an, bn } => {
                    if let Some(an) = *an {
                        acc(&mut grads[an], g.matmul(&b.transpose()));
                    }
                    if let Some(bn) = *bn {
                        acc(&mut grads[bn], a.transpose().matmul(&g));
                    }
                }
                Op::Spmm { s, xn } => {
                    acc(&mut grads[*xn], s.transpose().spmm(&g));
                }
                Op::Add { an, bn } => {
                    if let Some(an) = *an {
                        acc(&mut grads[an], g.clone());
                    }
                    if let Some(bn) = *bn {
                        acc(&mut grads[bn], g);
                    }
                }
                Op::MulScalar { c, an } => {
                    acc(&mut grads[*an], g.scale(*c));
                }
                Op::ConcatCols { parts } => {
                    let mut off = 0;
                    for &(pn, width) in parts {
                        if let Some(pn) = pn {
                            let mut part = Mat::zeros(g.rows(), width);
                            for r in 0..g.rows() {
                                part.row_mut(r).copy_from_slice(&g.row(r)[off..off + width]);
                            }
                            acc(&mut grads[pn], part);
                        }
                        off += width;
                    }
                }
                Op::Relu { x, an } => {
                    let dx = g.zip_map(x, |gv, xv| if xv > S::zero() { gv } else { S::zero() });
                    acc(&mut grads[*an], dx);
                }
                Op::LeakyRelu { x, slope, an } => {
                    let slope = *slope;
                    let dx = g.zip_map(x, |gv, xv| if xv > S::zero() { gv } else { slope * gv });
                    acc(&mut grads[*an], dx);
                }
                Op::Elu { x, an } => {
                    let dx = g.zip_map(x, |gv, xv| if xv > S::zero() { gv } else { gv * xv.exp() });
                    acc(&mut grads[*an], dx);
                }
                Op::SoftmaxRows { y, an } => {
                    let mut dx = Mat::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        let dr = dx.row_mut(i);
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - dot);
                        }
                    }
                    acc(&mut grads[*an], dx);
                }
                Op::RowMaxPool { argmax, in_rows, an } => {
                    let d = g.cols();
                    let mut dx = Mat::zeros(*in_rows, d);
                    for vr in 0..g.rows() {
                        for c in 0..d {
                            let u = argmax[vr * d + c];
                            if u != usize::MAX {
                                dx.set(u, c, dx.at(u, c) + g.at(vr, c));
                            }
                        }
                    }
                    acc(&mut grads[*an], dx);
                }
                Op::MaskedCrossEntropy {
                    probs,
                    labels,
                    mask_rows,
                    an,
                } => {
                    let scale = g.at(0, 0) / S::of(mask_rows.len() as f64);
                    let mut dx = Mat::zeros(probs.rows(), probs.cols());
                    for &i in mask_rows {
                        let target = labels[i] as usize;
                        let dr = dx.row_mut(i);
                        for (c, (d, &p)) in dr.iter_mut().zip(probs.row(i)).enumerate() {
                            let delta = if c == target { S::one() } else { S::zero() };
                            *d = scale * (p - delta);
                        }
                    }
                    acc(&mut grads[*an], dx);
                }
                Op::Mix {
                    weights,
                    parts,
                    wn,
                    part_nodes,
                } => {
                    if let Some(wn) = *wn {
                        let mut dw = Mat::zeros(1, parts.len());
                        for (k, p) in parts.iter().enumerate() {
                            dw.set(0, k, g.frob_dot(p));
                        }
                        acc(&mut grads[wn], dw);
                    }
                    for (k, pn) in part_nodes.iter().enumerate() {
                        if let Some(pn) = *pn {
                            acc(&mut grads[pn], g.scale(weights.at(0, k)));
                        }
                    }
                }
                Op::SoftmaxEntropyRow { probs, entropy, an } => {
                    let gs = g.at(0, 0);
                    let tiny = S::of(1e-300);
                    let mut dx = Mat::zeros(1, probs.len());
                    for (j, &p) in probs.iter().enumerate() {
                        if p > tiny {
                            dx.set(0, j, -gs * p * (p.ln() + *entropy));
                        }
                    }
                    acc(&mut grads[*an], dx);
                }
                Op::SparseAttention {
                    pattern,
                    s_tgt,
                    s_src,
                    v,
                    weights,
                    slope,
                    tn,
                    sn,
                    vn,
                } => {
                    let n = pattern.n_rows();
                    let d = v.cols();
                    let mut d_tgt = Mat::zeros(n, 1);
                    let mut d_src = Mat::zeros(n, 1);
                    let mut d_v = Mat::zeros(n, d);
                    let offsets = pattern.row_offsets();
                    for i in 0..n {
                        let (cols, _) = pattern.row(i);
                        if cols.is_empty() {
                            continue;
                        }
                        let span = offsets[i]..offsets[i + 1];
                        let gi = g.row(i);
                        // dL/dw_u and the softmax correction term.
                        let mut dot_sum = S::zero();
                        let mut dl_dw = Vec::with_capacity(cols.len());
                        for (slot, &u) in span.clone().zip(cols) {
                            let dlw: S = gi.iter().zip(v.row(u)).map(|(&a, &b)| a * b).sum();
                            dot_sum += weights[slot] * dlw;
                            dl_dw.push(dlw);
                        }
                        for ((slot, &u), dlw) in span.zip(cols).zip(dl_dw) {
                            let w = weights[slot];
                            let dl_de = w * (dlw - dot_sum);
                            let z = s_tgt.at(i, 0) + s_src.at(u, 0);
                            let dz = if z > S::zero() { dl_de } else { *slope * dl_de };
                            d_tgt.set(i, 0, d_tgt.at(i, 0) + dz);
                            d_src.set(u, 0, d_src.at(u, 0) + dz);
                            for (dvc, &gc) in d_v.row_mut(u).iter_mut().zip(gi) {
                                *dvc += w * gc;
                            }
                        }
                    }
                    if let Some(tn) = *tn {
                        acc(&mut grads[tn], d_tgt);
                    }
                    if let Some(sn) = *sn {
                        acc(&mut grads[sn], d_src);
                    }
                    if let Some(vn) = *vn {
                        acc(&mut grads[vn], d_v);
                    }
                }
                Op::SumAll { an } => {
                    let meta = &self.nodes[*an];
                    acc(&mut grads[*an], Mat::filled(meta.rows, meta.cols, g.at(0, 0)));
                }
            }
        }

        // Only leaves keep their slots; interior grads were consumed above.
        for (id, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[id] = None;
            }
        }
        Ok(Gradients { by_node: grads })
    }
}

fn acc<S: Scalar>(slot: &mut Option<Mat<S>>, delta: Mat<S>) {
    match slot {
        Some(g) => g.add_assign(&delta),
        None => *slot = Some(delta),
    }
}

fn shape_err<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Error {
    Error::Shape {
        op,
        detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
    }
}
