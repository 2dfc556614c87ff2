//! Dense 2-D tensors with tape-based reverse-mode automatic differentiation.
//!
//! Everything is 64-bit and row-major. Tensors are immutable values; a
//! [`Tape`] records operations during a forward pass and walks them in
//! reverse to produce exact gradients. One backward per forward is the
//! contract — a tape is not reused across losses.
//!
//! Trainable state lives in [`ParameterGroup`]s. A [`GradientVector`] is the
//! flat gradient of one scalar loss with respect to one group; flattening
//! order is the declaration order of the group's named tensors, each
//! row-major, so gradients from different losses align coordinate-wise.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ── Tensor ──────────────────────────────────────────────────────────

/// A dense row-major tensor. The fusion model only needs rank ≤ 2; scalars
/// are `[1, 1]` and vectors `[1, n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    #[serde(default)]
    pub requires_grad: bool,
}

impl Tensor {
    /// Builds a tensor, validating the shape/data contract and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} expects {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("tensor construction".into()));
        }
        Ok(Self { shape, data, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![0.0; numel], requires_grad: false }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1, 1], data: vec![v], requires_grad: false }
    }

    /// Marks the tensor as trainable.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count under the 2-D convention.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count under the 2-D convention.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Display for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)
    }
}

/// Numerically stable softmax of a plain tensor along `axis` (0 = down
/// columns, 1 = across rows). Each slice along the axis sums to 1; the
/// result is invariant to adding a constant to the input.
#[allow(clippy::needless_range_loop)]
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if x.shape.len() != 2 || axis > 1 {
        return Err(Error::ShapeMismatch(format!(
            "softmax expects a 2-D tensor and axis 0 or 1, got shape {:?} axis {}",
            x.shape, axis
        )));
    }
    if x.shape[axis] == 0 {
        return Err(Error::ShapeMismatch("softmax over an empty axis".into()));
    }
    let (m, n) = (x.rows(), x.cols());
    let mut out = vec![0.0; m * n];
    match axis {
        1 => {
            for i in 0..m {
                softmax_slice(&x.data[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
            }
        }
        _ => {
            let mut col = vec![0.0; m];
            let mut res = vec![0.0; m];
            for j in 0..n {
                for i in 0..m {
                    col[i] = x.at(i, j);
                }
                softmax_slice(&col, &mut res);
                for i in 0..m {
                    out[i * n + j] = res[i];
                }
            }
        }
    }
    Tensor::new(x.shape.clone(), out)
}

/// Max-subtracted softmax on one slice.
fn softmax_slice(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

// ── Parameter groups ────────────────────────────────────────────────

/// Identity of a trainable parameter group. Each fusion module owns one,
/// plus one for the shared classification head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupId {
    Theta1,
    Theta2,
    Theta3,
    ThetaCls,
}

impl GroupId {
    pub fn as_str(&self) -> &'static str {
        match self {
            GroupId::Theta1 => "theta1",
            GroupId::Theta2 => "theta2",
            GroupId::Theta3 => "theta3",
            GroupId::ThetaCls => "theta_cls",
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A named list of trainable tensors. Declaration order is significant:
/// it fixes the flattening order of [`GradientVector`]s.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterGroup {
    pub id: GroupId,
    tensors: Vec<(String, Tensor)>,
}

impl ParameterGroup {
    pub fn new(id: GroupId) -> Self {
        Self { id, tensors: Vec::new() }
    }

    /// Appends a named tensor. Names must be unique within the group.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(
            self.tensors.iter().all(|(n, _)| *n != name),
            "duplicate tensor name {name:?} in group {}",
            self.id
        );
        self.tensors.push((name, tensor.with_grad()));
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Total parameter count.
    pub fn dim(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Flattens all tensors in declaration order, each row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for (_, t) in &self.tensors {
            out.extend_from_slice(&t.data);
        }
        out
    }

    /// Writes a flat vector back into the tensors, inverse of [`flatten`].
    ///
    /// [`flatten`]: ParameterGroup::flatten
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.dim(), "flat length mismatch for {}", self.id);
        let mut off = 0;
        for (_, t) in &mut self.tensors {
            let n = t.numel();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }
}

/// Flat gradient of one scalar loss with respect to one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector {
    pub group: GroupId,
    pub values: Vec<f64>,
}

impl GradientVector {
    pub fn zeros(group: GroupId, dim: usize) -> Self {
        Self { group, values: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { group: self.group, values: self.values.iter().map(|v| v * c).collect() }
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, other: &Self, c: f64) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }
}

// ── Tape ────────────────────────────────────────────────────────────

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// C = A · B.
    MatMul { a: NodeId, b: NodeId },
    /// Elementwise sum, same shape.
    Add { a: NodeId, b: NodeId },
    /// Matrix plus a `[1, n]` row broadcast over every row.
    AddBiasRow { a: NodeId, bias: NodeId },
    /// Elementwise product, same shape.
    Mul { a: NodeId, b: NodeId },
    /// Multiplication by a compile-time constant.
    Scale { a: NodeId, c: f64 },
    /// Multiplication by a `[1, 1]` node.
    ScaleByScalar { a: NodeId, s: NodeId },
    Transpose { a: NodeId },
    /// `[m, n] → [1, n]` column means.
    MeanRows { a: NodeId },
    /// Horizontal concatenation; all parts share a row count.
    ConcatCols { parts: Vec<NodeId> },
    /// Columns `start .. start + len` of `a`.
    SliceCols { a: NodeId, start: usize, len: usize },
    /// Row-wise stable softmax.
    SoftmaxRows { a: NodeId },
    /// Sum of all entries, `[1, 1]`.
    SumAll { a: NodeId },
    /// Same data, new shape.
    Reshape { a: NodeId },
    /// Mean cross-entropy of row logits against class indices,
    /// computed via log-sum-exp.
    CrossEntropyLogits { logits: NodeId, labels: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for one backward pass. Confined to one
/// thread; ops are pure so independent tapes may run concurrently.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Inserts an input or parameter tensor as a graph leaf.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        let (m, k, k2, n) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        matmul_nn_acc(&ta.data, &tb.data, &mut out, m, k, n);
        self.push(Tensor { shape: vec![m, n], data: out, requires_grad: false }, Op::MatMul { a, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(ta.shape, tb.shape, "add shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        self.push(Tensor { shape: ta.shape.clone(), data, requires_grad: false }, Op::Add { a, b })
    }

    pub fn add_bias_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[bias].value);
        let (m, n) = (ta.rows(), ta.cols());
        assert_eq!(tb.shape, vec![1, n], "bias must be [1, {n}]");
        let mut data = ta.data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += tb.data[j];
            }
        }
        self.push(Tensor { shape: vec![m, n], data, requires_grad: false }, Op::AddBiasRow { a, bias })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(ta.shape, tb.shape, "mul shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        self.push(Tensor { shape: ta.shape.clone(), data, requires_grad: false }, Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let ta = &self.nodes[a].value;
        let data = ta.data.iter().map(|x| x * c).collect();
        self.push(Tensor { shape: ta.shape.clone(), data, requires_grad: false }, Op::Scale { a, c })
    }

    pub fn scale_by_scalar(&mut self, a: NodeId, s: NodeId) -> NodeId {
        let sv = &self.nodes[s].value;
        assert!(sv.is_scalar(), "scale_by_scalar expects a [1,1] node");
        let c = sv.data[0];
        let ta = &self.nodes[a].value;
        let data = ta.data.iter().map(|x| x * c).collect();
        self.push(
            Tensor { shape: ta.shape.clone(), data, requires_grad: false },
            Op::ScaleByScalar { a, s },
        )
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a].value;
        let (m, n) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = ta.data[i * n + j];
            }
        }
        self.push(Tensor { shape: vec![n, m], data, requires_grad: false }, Op::Transpose { a })
    }

    #[allow(clippy::needless_range_loop)]
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a].value;
        let (m, n) = (ta.rows(), ta.cols());
        assert!(m > 0, "mean_rows over zero rows");
        let mut data = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                data[j] += ta.data[i * n + j];
            }
        }
        for v in &mut data {
            *v /= m as f64;
        }
        self.push(Tensor { shape: vec![1, n], data, requires_grad: false }, Op::MeanRows { a })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let m = self.nodes[parts[0]].value.rows();
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.cols()).sum();
        let mut data = vec![0.0; m * total];
        let mut off = 0;
        for &p in parts {
            let tp = &self.nodes[p].value;
            assert_eq!(tp.rows(), m, "concat_cols row mismatch");
            let n = tp.cols();
            for i in 0..m {
                data[i * total + off..i * total + off + n]
                    .copy_from_slice(&tp.data[i * n..(i + 1) * n]);
            }
            off += n;
        }
        self.push(
            Tensor { shape: vec![m, total], data, requires_grad: false },
            Op::ConcatCols { parts: parts.to_vec() },
        )
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let ta = &self.nodes[a].value;
        let (m, n) = (ta.rows(), ta.cols());
        assert!(start + len <= n, "slice_cols out of range");
        let mut data = vec![0.0; m * len];
        for i in 0..m {
            data[i * len..(i + 1) * len].copy_from_slice(&ta.data[i * n + start..i * n + start + len]);
        }
        self.push(
            Tensor { shape: vec![m, len], data, requires_grad: false },
            Op::SliceCols { a, start, len },
        )
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a].value;
        let (m, n) = (ta.rows(), ta.cols());
        assert!(n > 0, "softmax over an empty axis");
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            softmax_slice(&ta.data[i * n..(i + 1) * n], &mut data[i * n..(i + 1) * n]);
        }
        self.push(Tensor { shape: vec![m, n], data, requires_grad: false }, Op::SoftmaxRows { a })
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { a })
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> NodeId {
        let ta = &self.nodes[a].value;
        assert_eq!(shape.iter().product::<usize>(), ta.numel(), "reshape numel mismatch");
        self.push(
            Tensor { shape, data: ta.data.clone(), requires_grad: false },
            Op::Reshape { a },
        )
    }

    /// Mean cross-entropy over rows of `logits` against `labels`, one class
    /// index per row, computed as `logsumexp(z) − z[label]`.
    pub fn cross_entropy_logits(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let tl = &self.nodes[logits].value;
        let (m, n) = (tl.rows(), tl.cols());
        assert_eq!(m, labels.len(), "one label per logits row");
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            assert!(y < n, "label {y} out of range for {n} classes");
            let row = &tl.data[i * n..(i + 1) * n];
            total += log_sum_exp(row) - row[y];
        }
        let loss = total / m as f64;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropyLogits { logits, labels: labels.to_vec() },
        )
    }

    /// Reverse-mode sweep from a scalar `loss` node. Returns one flat
    /// gradient buffer per node; leaves untouched by the loss keep zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Vec<f64>>> {
        let lt = &self.nodes[loss].value;
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape.clone()));
        }
        if !lt.all_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Vec<f64>> =
            self.nodes.iter().map(|n| vec![0.0; n.value.numel()]).collect();
        grads[loss][0] = 1.0;

        for id in (0..=loss).rev() {
            let go = std::mem::take(&mut grads[id]);
            if go.iter().all(|v| *v == 0.0) {
                grads[id] = go;
                continue;
            }
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    // dA += dC · Bᵀ ; dB += Aᵀ · dC
                    if a == b {
                        let ga = &mut grads[*a];
                        matmul_nt_acc(&go, &tb.data, ga, m, n, k);
                        matmul_tn_acc(&ta.data, &go, ga, k, m, n);
                    } else {
                        let (ga, gb) = split_two(&mut grads, *a, *b);
                        matmul_nt_acc(&go, &tb.data, ga, m, n, k);
                        matmul_tn_acc(&ta.data, &go, gb, k, m, n);
                    }
                }
                Op::Add { a, b } => {
                    acc(&mut grads[*a], &go, 1.0);
                    acc(&mut grads[*b], &go, 1.0);
                }
                Op::AddBiasRow { a, bias } => {
                    acc(&mut grads[*a], &go, 1.0);
                    let n = self.nodes[*bias].value.cols();
                    let m = self.nodes[*a].value.rows();
                    let gb = &mut grads[*bias];
                    for i in 0..m {
                        for j in 0..n {
                            gb[j] += go[i * n + j];
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (da, db): (Vec<f64>, Vec<f64>) = {
                        let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                        (
                            go.iter().zip(&tb.data).map(|(g, y)| g * y).collect(),
                            go.iter().zip(&ta.data).map(|(g, x)| g * x).collect(),
                        )
                    };
                    acc(&mut grads[*a], &da, 1.0);
                    acc(&mut grads[*b], &db, 1.0);
                }
                Op::Scale { a, c } => acc(&mut grads[*a], &go, *c),
                Op::ScaleByScalar { a, s } => {
                    let c = self.nodes[*s].value.data[0];
                    acc(&mut grads[*a], &go, c);
                    let ds: f64 =
                        go.iter().zip(&self.nodes[*a].value.data).map(|(g, x)| g * x).sum();
                    grads[*s][0] += ds;
                }
                Op::Transpose { a } => {
                    let ta = &self.nodes[*a].value;
                    let (m, n) = (ta.rows(), ta.cols());
                    let ga = &mut grads[*a];
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += go[j * m + i];
                        }
                    }
                }
                Op::MeanRows { a } => {
                    let ta = &self.nodes[*a].value;
                    let (m, n) = (ta.rows(), ta.cols());
                    let w = 1.0 / m as f64;
                    let ga = &mut grads[*a];
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += go[j] * w;
                        }
                    }
                }
                Op::ConcatCols { parts } => {
                    let m = self.nodes[id].value.rows();
                    let total = self.nodes[id].value.cols();
                    let mut off = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.cols();
                        let gp = &mut grads[p];
                        for i in 0..m {
                            for j in 0..n {
                                gp[i * n + j] += go[i * total + off + j];
                            }
                        }
                        off += n;
                    }
                }
                Op::SliceCols { a, start, len } => {
                    let n = self.nodes[*a].value.cols();
                    let m = self.nodes[*a].value.rows();
                    let ga = &mut grads[*a];
                    for i in 0..m {
                        for j in 0..*len {
                            ga[i * n + start + j] += go[i * len + j];
                        }
                    }
                }
                Op::SoftmaxRows { a } => {
                    let y = &self.nodes[id].value;
                    let (m, n) = (y.rows(), y.cols());
                    let ga = &mut grads[*a];
                    for i in 0..m {
                        let yr = &y.data[i * n..(i + 1) * n];
                        let gr = &go[i * n..(i + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..n {
                            ga[i * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::SumAll { a } => acc_scalar(&mut grads[*a], go[0]),
                Op::Reshape { a } => acc(&mut grads[*a], &go, 1.0),
                Op::CrossEntropyLogits { logits, labels } => {
                    let tl = &self.nodes[*logits].value;
                    let (m, n) = (tl.rows(), tl.cols());
                    let scale = go[0] / m as f64;
                    let gl = &mut grads[*logits];
                    let mut probs = vec![0.0; n];
                    for (i, &y) in labels.iter().enumerate() {
                        softmax_slice(&tl.data[i * n..(i + 1) * n], &mut probs);
                        for j in 0..n {
                            let indicator = if j == y { 1.0 } else { 0.0 };
                            gl[i * n + j] += scale * (probs[j] - indicator);
                        }
                    }
                }
            }
            grads[id] = go;
        }
        Ok(grads)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn acc(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn acc_scalar(dst: &mut [f64], c: f64) {
    for d in dst.iter_mut() {
        *d += c;
    }
}

/// Two disjoint mutable gradient buffers for distinct nodes.
fn split_two(grads: &mut [Vec<f64>], a: NodeId, b: NodeId) -> (&mut [f64], &mut [f64]) {
    debug_assert_ne!(a, b);
    if a < b {
        let (lo, hi) = grads.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = grads.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

// C[m,n] += A[m,k] · B[k,n]
fn matmul_nn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
}

// C[m,k] += A[m,n] · B[k,n]ᵀ   (B stored row-major as [k, n])
fn matmul_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let crow = &mut c[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += arow[j] * brow[j];
            }
            crow[p] += s;
        }
    }
}

// C[k,n] += A[m,k]ᵀ · B[m,n]   (A stored row-major as [m, k])
fn matmul_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], k: usize, m: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
}

// ── Group bindings ──────────────────────────────────────────────────

/// Leaf ids of parameter groups registered on a tape, in declaration order.
pub struct ParamBinding {
    entries: Vec<(GroupId, Vec<(String, NodeId)>)>,
}

impl ParamBinding {
    /// Registers every tensor of every group as a tape leaf.
    pub fn register(tape: &mut Tape, groups: &[&ParameterGroup]) -> Self {
        let entries = groups
            .iter()
            .map(|g| {
                let ids = g
                    .tensors()
                    .iter()
                    .map(|(n, t)| (n.clone(), tape.leaf(t.clone())))
                    .collect();
                (g.id, ids)
            })
            .collect();
        Self { entries }
    }

    /// Leaf id of a tensor by position within a group.
    pub fn node(&self, group: GroupId, index: usize) -> NodeId {
        self.group_entries(group)[index].1
    }

    /// Leaf id of a named tensor within a group.
    pub fn named(&self, group: GroupId, name: &str) -> NodeId {
        self.group_entries(group)
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .unwrap_or_else(|| panic!("no tensor {name:?} in group {group}"))
    }

    fn group_entries(&self, group: GroupId) -> &[(String, NodeId)] {
        self.entries
            .iter()
            .find(|(g, _)| *g == group)
            .map(|(_, ids)| ids.as_slice())
            .expect("group not registered")
    }
}

/// Reverse-mode gradients of a recorded scalar loss with respect to every
/// registered group. Groups the loss never touched map to zero vectors.
pub fn backward(
    tape: &Tape,
    loss: NodeId,
    binding: &ParamBinding,
) -> Result<BTreeMap<GroupId, GradientVector>> {
    let grads = tape.backward(loss)?;
    let mut out = BTreeMap::new();
    for (group, ids) in &binding.entries {
        let mut values = Vec::new();
        for (_, id) in ids {
            values.extend_from_slice(&grads[*id]);
        }
        out.insert(*group, GradientVector { group: *group, values });
    }
    Ok(out)
}

// ── Finite differences ──────────────────────────────────────────────

/// Central-difference gradient estimate of `loss_fn` with respect to one
/// parameter group: `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / (2h)` per coordinate.
///
/// This is a test oracle; it never touches the tape.
pub fn finite_diff<F>(loss_fn: F, group: &ParameterGroup, step: f64) -> Result<GradientVector>
where
    F: Fn(&ParameterGroup) -> Result<f64>,
{
    if step <= 0.0 {
        return Err(Error::InvalidConfig(format!("finite_diff step must be > 0, got {step}")));
    }
    let base = group.flatten();
    let mut perturbed = group.clone();
    let mut values = vec![0.0; base.len()];
    let mut work = base.clone();
    for i in 0..base.len() {
        work[i] = base[i] + step;
        perturbed.set_from_flat(&work);
        let up = loss_fn(&perturbed)?;
        work[i] = base[i] - step;
        perturbed.set_from_flat(&work);
        let down = loss_fn(&perturbed)?;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("finite_diff at coordinate {i}")));
        }
        values[i] = (up - down) / (2.0 * step);
        work[i] = base[i];
    }
    Ok(GradientVector { group: group.id, values })
}

/// Relative error between two gradients:
/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-12)`. Zero against zero is 0.
pub fn grad_relative_error(a: &GradientVector, b: &GradientVector) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let diff: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / a.norm().max(b.norm()).max(1e-12)
}
