use crate::error::{Error, Result};

use super::matrix::{layer_norm_rows, sigmoid, silu, softmax_rows, softplus, Matrix, LAYER_NORM_EPS};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Scale(NodeId, f64),
    Silu(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    LayerNormRows(NodeId),
    /// Columnwise product with a 1 x cols row vector.
    MulRow(NodeId, NodeId),
    /// Columnwise addition of a 1 x cols row vector.
    AddRow(NodeId, NodeId),
    SoftmaxRows(NodeId),
    Transpose(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    MeanRows(NodeId),
    SumAll(NodeId),
    /// Mean negative log-likelihood of target columns under row softmax.
    CrossEntropy(NodeId, Vec<usize>),
}

struct Node {
    op: Op,
    value: Matrix,
}

/// Records primitive operations during a forward pass so [`Tape::backward`]
/// can replay them in reverse. One tape per model instance; not shared
/// across threads.
///
/// Each primitive's backward rule is hand-written here and checked against
/// finite differences in the test suite; every composite gets its gradient
/// for free by taping.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients per node, produced by [`Tape::backward`]. Nodes that do not
/// influence the loss have no entry.
pub struct Gradients {
    by_node: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.by_node.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.by_node.get_mut(id.0).and_then(|g| g.take())
    }

    /// Gradient for `id`, or an explicit zero matrix of the given shape.
    pub fn get_or_zero(&self, id: NodeId, rows: usize, cols: usize) -> Matrix {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Matrix::zeros(rows, cols),
        }
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// The value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.shape(), (1, 1));
        v.get(0, 0)
    }

    fn push(&mut self, op: Op, value: Matrix) -> Result<NodeId> {
        value.check_finite(op_name(&op))?;
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Register an input. Parameters and constants alike enter as leaves;
    /// the caller keeps the ids of the ones whose gradients it wants.
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).sub(self.value(b))?;
        self.push(Op::Sub(a, b), value)
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).hadamard(self.value(b))?;
        self.push(Op::Hadamard(a, b), value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let value = self.value(a).scale(c)?;
        self.push(Op::Scale(a, c), value)
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(silu);
        self.push(Op::Silu(a), value)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(softplus);
        self.push(Op::Softplus(a), value)
    }

    pub fn layer_norm_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let value = layer_norm_rows(self.value(a));
        self.push(Op::LayerNormRows(a), value)
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let value = broadcast_row(self.value(a), self.value(row), "mul_row", |x, r| x * r)?;
        self.push(Op::MulRow(a, row), value)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let value = broadcast_row(self.value(a), self.value(row), "add_row", |x, r| x + r)?;
        self.push(Op::AddRow(a, row), value)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let value = softmax_rows(self.value(a));
        self.push(Op::SoftmaxRows(a), value)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_rows(&values)?;
        self.push(Op::ConcatRows(parts.to_vec()), value)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<Matrix> = parts.iter().map(|&p| self.value(p).transpose()).collect();
        let refs: Vec<&Matrix> = values.iter().collect();
        let value = Matrix::concat_rows(&refs)?.transpose();
        self.push(Op::ConcatCols(parts.to_vec()), value)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let value = self.value(a).slice_rows(start, len)?;
        self.push(Op::SliceRows(a, start), value)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a);
        if start + len > v.cols() {
            return Err(Error::invalid(
                "slice_cols",
                format!("cols {}..{} out of bounds for {} cols", start, start + len, v.cols()),
            ));
        }
        let mut out = Matrix::zeros(v.rows(), len);
        for i in 0..v.rows() {
            out.row_mut(i).copy_from_slice(&v.row(i)[start..start + len]);
        }
        self.push(Op::SliceCols(a, start), out)
    }

    /// Select rows by index, with repetition allowed. The gradient
    /// scatter-adds back, so this doubles as embedding lookup.
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let v = self.value(a);
        let mut out = Matrix::zeros(indices.len(), v.cols());
        for (i, &idx) in indices.iter().enumerate() {
            if idx >= v.rows() {
                return Err(Error::invalid(
                    "gather_rows",
                    format!("row index {} out of bounds for {} rows", idx, v.rows()),
                ));
            }
            out.row_mut(i).copy_from_slice(v.row(idx));
        }
        self.push(Op::GatherRows(a, indices.to_vec()), out)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.rows() == 0 {
            return Err(Error::invalid("mean_rows", "empty matrix"));
        }
        let mut out = Matrix::zeros(1, v.cols());
        for i in 0..v.rows() {
            for j in 0..v.cols() {
                out.set(0, j, out.get(0, j) + v.get(i, j));
            }
        }
        let out = out.scale(1.0 / v.rows() as f64)?;
        self.push(Op::MeanRows(a), out)
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let value = Matrix::from_vec_unchecked(1, 1, vec![self.value(a).sum()]);
        self.push(Op::SumAll(a), value)
    }

    /// Mean cross-entropy of `targets` under the row softmax of `logits`,
    /// fused for numerical stability. One target per logit row.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let v = self.value(logits);
        if targets.len() != v.rows() {
            return Err(Error::invalid(
                "cross_entropy",
                format!("{} targets for {} logit rows", targets.len(), v.rows()),
            ));
        }
        if targets.is_empty() {
            return Err(Error::invalid("cross_entropy", "no targets"));
        }
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= v.cols() {
                return Err(Error::invalid(
                    "cross_entropy",
                    format!("target {} out of bounds for {} classes", t, v.cols()),
                ));
            }
            let row = v.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let logsum = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
            total += logsum - row[t];
        }
        let value = Matrix::from_vec_unchecked(1, 1, vec![total / targets.len() as f64]);
        self.push(Op::CrossEntropy(logits, targets.to_vec()), value)
    }

    /// Reverse pass from a scalar loss node. Visits nodes in reverse
    /// recording order (a topological order of the DAG), accumulating each
    /// node's gradient exactly once per consuming edge. Consumes the tape.
    pub fn backward(self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::invalid(
                "backward",
                format!("loss must be 1x1, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.nodes[b.0].value.transpose())?;
                    let db = self.nodes[a.0].value.transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0)?)?;
                    accumulate(&mut grads, *a, g)?;
                }
                Op::Hadamard(a, b) => {
                    let da = g.hadamard(&self.nodes[b.0].value)?;
                    let db = g.hadamard(&self.nodes[a.0].value)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)?)?,
                Op::Silu(a) => {
                    let x = &self.nodes[a.0].value;
                    let da = zip3(&g, x, |gv, xv| {
                        let s = sigmoid(xv);
                        gv * s * (1.0 + xv * (1.0 - s))
                    });
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    let da = zip3(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let da = zip3(&g, y, |gv, yv| gv * yv * (1.0 - yv));
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Softplus(a) => {
                    let x = &self.nodes[a.0].value;
                    let da = zip3(&g, x, |gv, xv| gv * sigmoid(xv));
                    accumulate(&mut grads, *a, da)?;
                }
                Op::LayerNormRows(a) => {
                    let x = &self.nodes[a.0].value;
                    let y = &node.value;
                    let mut da = Matrix::zeros(x.rows(), x.cols());
                    let n = x.cols() as f64;
                    for i in 0..x.rows() {
                        let xr = x.row(i);
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let mean = xr.iter().sum::<f64>() / n;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let g_mean = gr.iter().sum::<f64>() / n;
                        let gy_mean = gr.iter().zip(yr).map(|(gv, yv)| gv * yv).sum::<f64>() / n;
                        for j in 0..x.cols() {
                            da.set(i, j, inv * (gr[j] - g_mean - yr[j] * gy_mean));
                        }
                    }
                    accumulate(&mut grads, *a, da)?;
                }
                Op::MulRow(a, r) => {
                    let x = &self.nodes[a.0].value;
                    let row = &self.nodes[r.0].value;
                    let mut da = Matrix::zeros(x.rows(), x.cols());
                    let mut dr = Matrix::zeros(1, x.cols());
                    for i in 0..x.rows() {
                        for j in 0..x.cols() {
                            da.set(i, j, g.get(i, j) * row.get(0, j));
                            dr.set(0, j, dr.get(0, j) + g.get(i, j) * x.get(i, j));
                        }
                    }
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *r, dr)?;
                }
                Op::AddRow(a, r) => {
                    let mut dr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            dr.set(0, j, dr.get(0, j) + g.get(i, j));
                        }
                    }
                    accumulate(&mut grads, *a, g)?;
                    accumulate(&mut grads, *r, dr)?;
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(gv, yv)| gv * yv).sum();
                        for j in 0..y.cols() {
                            da.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose())?,
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let r = self.nodes[p.0].value.rows();
                        if r > 0 {
                            accumulate(&mut grads, p, g.slice_rows(start, r)?)?;
                        }
                        start += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let gt = g.transpose();
                    let mut start = 0;
                    for &p in parts {
                        let c = self.nodes[p.0].value.cols();
                        if c > 0 {
                            accumulate(&mut grads, p, gt.slice_rows(start, c)?.transpose())?;
                        }
                        start += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let src = &self.nodes[a.0].value;
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    for i in 0..g.rows() {
                        da.row_mut(start + i).copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, da)?;
                }
                Op::SliceCols(a, start) => {
                    let src = &self.nodes[a.0].value;
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    for i in 0..g.rows() {
                        da.row_mut(i)[*start..start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, da)?;
                }
                Op::GatherRows(a, indices) => {
                    let src = &self.nodes[a.0].value;
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    for (i, &idx) in indices.iter().enumerate() {
                        let row = da.row_mut(idx);
                        for (dst, &gv) in row.iter_mut().zip(g.row(i)) {
                            *dst += gv;
                        }
                    }
                    accumulate(&mut grads, *a, da)?;
                }
                Op::MeanRows(a) => {
                    let src = &self.nodes[a.0].value;
                    let scale = 1.0 / src.rows() as f64;
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    for i in 0..src.rows() {
                        for j in 0..src.cols() {
                            da.set(i, j, g.get(0, j) * scale);
                        }
                    }
                    accumulate(&mut grads, *a, da)?;
                }
                Op::SumAll(a) => {
                    let src = &self.nodes[a.0].value;
                    accumulate(&mut grads, *a, Matrix::filled(src.rows(), src.cols(), g.get(0, 0)))?;
                }
                Op::CrossEntropy(logits, targets) => {
                    let probs = softmax_rows(&self.nodes[logits.0].value);
                    let scale = g.get(0, 0) / targets.len() as f64;
                    let mut da = probs.scale(scale)?;
                    for (i, &t) in targets.iter().enumerate() {
                        da.set(i, t, da.get(i, t) - scale);
                    }
                    accumulate(&mut grads, *logits, da)?;
                }
            }
        }
        Ok(Gradients { by_node: grads })
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Hadamard(..) => "hadamard",
        Op::Scale(..) => "scale",
        Op::Silu(..) => "silu",
        Op::Relu(..) => "relu",
        Op::Sigmoid(..) => "sigmoid",
        Op::Softplus(..) => "softplus",
        Op::LayerNormRows(..) => "layer_norm_rows",
        Op::MulRow(..) => "mul_row",
        Op::AddRow(..) => "add_row",
        Op::SoftmaxRows(..) => "softmax_rows",
        Op::Transpose(..) => "transpose",
        Op::ConcatRows(..) => "concat_rows",
        Op::ConcatCols(..) => "concat_cols",
        Op::SliceRows(..) => "slice_rows",
        Op::SliceCols(..) => "slice_cols",
        Op::GatherRows(..) => "gather_rows",
        Op::MeanRows(..) => "mean_rows",
        Op::SumAll(..) => "sum_all",
        Op::CrossEntropy(..) => "cross_entropy",
    }
}

fn broadcast_row(
    a: &Matrix,
    row: &Matrix,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Matrix> {
    if row.rows() != 1 || row.cols() != a.cols() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: row.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows(), a.cols());
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            out.set(i, j, f(a.get(i, j), row.get(0, j)));
        }
    }
    Ok(out)
}

fn zip3(g: &Matrix, x: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = g
        .data()
        .iter()
        .zip(x.data())
        .map(|(&gv, &xv)| f(gv, xv))
        .collect();
    Matrix::from_vec_unchecked(g.rows(), g.cols(), data)
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => {
            *existing = existing.add(&g)?;
        }
        slot @ None => *slot = Some(g),
    }
    Ok(())
}
