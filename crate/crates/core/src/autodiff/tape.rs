use super::params::{ParamId, ParamStore};
use crate::error::{arg_err, Result};
use crate::heads::chamfer::chamfer_matches;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Variable-size groups of row indices stored compactly (CSR layout).
///
/// Used for neighborhood and instance pooling: output row `g` of a group-max
/// is the component-wise maximum over input rows `group(g)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RowGroups {
    offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl RowGroups {
    pub fn new() -> Self {
        RowGroups {
            offsets: vec![0],
            indices: Vec::new(),
        }
    }

    pub fn push(&mut self, group: impl IntoIterator<Item = usize>) {
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        self.indices.extend(group.into_iter().map(|i| i as u32));
        self.offsets.push(self.indices.len());
    }

    /// A single group spanning rows `0..rows`.
    pub fn all(rows: usize) -> Self {
        let mut g = RowGroups::new();
        g.push(0..rows);
        g
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn group(&self, g: usize) -> &[u32] {
        &self.indices[self.offsets[g]..self.offsets[g + 1]]
    }

    pub fn total_members(&self) -> usize {
        self.indices.len()
    }
}

enum Op {
    Constant,
    Param,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    ConcatCols(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    // argmax[r * cols + c] = input row that supplied output (r, c)
    GroupMax(NodeId, Vec<u32>),
    Reshape(NodeId),
    SoftmaxCe {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Matrix,
    },
    Chamfer {
        pred: NodeId,
        target: Matrix,
        pred_to_target: Vec<usize>,
        target_to_pred: Vec<usize>,
    },
    Sum(NodeId),
    SumSquares(NodeId),
    MeanOf(Vec<NodeId>),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Append-only record of a forward computation.
///
/// Nodes are created in evaluation order, so every input of node `i` has an
/// id smaller than `i`; backward is a single reverse sweep.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
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

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// Leaf for a learnable tensor. Repeated calls return the same node so
    /// all uses accumulate into one gradient.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        let n = self.push(self.params.get(id).clone(), Op::Param);
        self.param_nodes[id.0] = Some(n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// Adds a 1×c row vector to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.rows(), 1, "bias must be a row vector");
        assert_eq!(av.cols(), bv.cols(), "bias width mismatch");
        let mut v = av.clone();
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(bv.row(0)) {
                *x += b;
            }
        }
        self.push(v, Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).map(|x| x * factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of zero parts");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p);
                assert_eq!(src.rows(), rows, "concat row mismatch");
                v.row_mut(r)[off..off + src.cols()].copy_from_slice(src.row(r));
                off += src.cols();
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> NodeId {
        let v = self.value(a).select_rows(rows);
        self.push(v, Op::GatherRows(a, rows.to_vec()))
    }

    /// Component-wise max over each group of input rows. The winning row is
    /// recorded per entry (lowest row index on ties) and backward routes the
    /// gradient only to it.
    pub fn group_max(&mut self, a: NodeId, groups: &RowGroups) -> NodeId {
        let src = self.value(a);
        let cols = src.cols();
        let mut v = Matrix::zeros(groups.len(), cols);
        let mut argmax = vec![0u32; groups.len() * cols];
        for g in 0..groups.len() {
            let members = groups.group(g);
            assert!(!members.is_empty(), "group-max over an empty group");
            let out = &mut v.row_mut(g)[..];
            let arg = &mut argmax[g * cols..(g + 1) * cols];
            out.copy_from_slice(src.row(members[0] as usize));
            arg.fill(members[0]);
            let ascending = members.windows(2).all(|w| w[0] < w[1]);
            for &m in &members[1..] {
                let row = src.row(m as usize);
                if ascending {
                    // Later members have larger indices, so ties keep the earlier row.
                    for ((o, a), &x) in out.iter_mut().zip(arg.iter_mut()).zip(row) {
                        let better = x > *o;
                        *o = if better { x } else { *o };
                        *a = if better { m } else { *a };
                    }
                } else {
                    for c in 0..cols {
                        let x = row[c];
                        if x > out[c] || (x == out[c] && m < arg[c]) {
                            out[c] = x;
                            arg[c] = m;
                        }
                    }
                }
            }
        }
        self.push(v, Op::GroupMax(a, argmax))
    }

    /// Max over all rows, producing a 1×c row.
    pub fn max_rows(&mut self, a: NodeId) -> NodeId {
        let groups = RowGroups::all(self.value(a).rows());
        self.group_max(a, &groups)
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let v = self.value(a).clone().reshaped(rows, cols);
        self.push(v, Op::Reshape(a))
    }

    /// Mean softmax cross-entropy over rows; returns a 1×1 node.
    pub fn softmax_ce(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.rows() != labels.len() {
            return Err(arg_err!(
                "{} label(s) for {} logit row(s)",
                labels.len(),
                lv.rows()
            ));
        }
        if lv.rows() == 0 {
            return Err(arg_err!("cross-entropy over zero rows"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= lv.cols()) {
            return Err(arg_err!("label {bad} outside {} classes", lv.cols()));
        }
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &x in row {
                z += (x - max).exp();
            }
            let log_z = z.ln() + max;
            total += log_z - row[label];
            for (p, &x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - log_z).exp();
            }
        }
        let v = Matrix::scalar(total / labels.len() as f64);
        Ok(self.push(
            v,
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Squared symmetric chamfer distance from an n×3 node to a fixed set.
    pub fn chamfer_to(&mut self, pred: NodeId, target: &Matrix) -> Result<NodeId> {
        let m = chamfer_matches(self.value(pred), target)?;
        Ok(self.push(
            Matrix::scalar(m.value),
            Op::Chamfer {
                pred,
                target: target.clone(),
                pred_to_target: m.a_to_b,
                target_to_pred: m.b_to_a,
            },
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).as_slice().iter().sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).as_slice().iter().map(|x| x * x).sum();
        self.push(Matrix::scalar(s), Op::SumSquares(a))
    }

    /// Arithmetic mean of 1×1 nodes.
    pub fn mean_of(&mut self, items: &[NodeId]) -> NodeId {
        assert!(!items.is_empty(), "mean of zero nodes");
        let mut s = 0.0;
        for &i in items {
            s += self.value(i).item();
        }
        let v = Matrix::scalar(s / items.len() as f64);
        self.push(v, Op::MeanOf(items.to_vec()))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(arg_err!(
                "backward needs a scalar loss, got {:?}",
                lv.shape()
            ));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant | Op::Param => {
                    // Leaves keep their gradient for the caller.
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_bt(self.value(*b));
                    let db = self.value(*a).matmul_at(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddBias(a, b) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, x) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *b, db);
                    accumulate(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    accumulate(&mut grads, *a, g.map(|x| x * f));
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    for (x, y) in d.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                        *x *= 1.0 - y * y;
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        let mut d = Matrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        off += cols;
                        accumulate(&mut grads, p, d);
                    }
                }
                Op::GatherRows(a, rows) => {
                    let src = self.value(*a);
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    for (o, &i) in rows.iter().enumerate() {
                        for (x, y) in d.row_mut(i).iter_mut().zip(g.row(o)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::GroupMax(a, argmax) => {
                    let src = self.value(*a);
                    let cols = src.cols();
                    let mut d = Matrix::zeros(src.rows(), cols);
                    let ds = d.as_mut_slice();
                    for (k, (&gv, &arg)) in g.as_slice().iter().zip(argmax).enumerate() {
                        ds[arg as usize * cols + k % cols] += gv;
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, g.reshaped(r, c));
                }
                Op::SoftmaxCe {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = g.item() / labels.len() as f64;
                    let mut d = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        let row = d.row_mut(r);
                        row[l] -= 1.0;
                        for x in row.iter_mut() {
                            *x *= scale;
                        }
                    }
                    accumulate(&mut grads, *logits, d);
                }
                Op::Chamfer {
                    pred,
                    target,
                    pred_to_target,
                    target_to_pred,
                } => {
                    let pv = self.value(*pred);
                    let gs = g.item();
                    let wa = 2.0 * gs / pv.rows() as f64;
                    let wb = 2.0 * gs / target.rows() as f64;
                    let mut d = Matrix::zeros(pv.rows(), pv.cols());
                    for (i, &j) in pred_to_target.iter().enumerate() {
                        let (a, b) = (pv.row(i), target.row(j));
                        for ((x, ai), bi) in d.row_mut(i).iter_mut().zip(a).zip(b) {
                            *x += wa * (ai - bi);
                        }
                    }
                    for (j, &i) in target_to_pred.iter().enumerate() {
                        let (a, b) = (pv.row(i), target.row(j));
                        for ((x, ai), bi) in d.row_mut(i).iter_mut().zip(a).zip(b) {
                            *x += wb * (ai - bi);
                        }
                    }
                    accumulate(&mut grads, *pred, d);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.item()));
                }
                Op::SumSquares(a) => {
                    let gs = g.item();
                    let d = self.value(*a).map(|x| 2.0 * gs * x);
                    accumulate(&mut grads, *a, d);
                }
                Op::MeanOf(items) => {
                    let share = g.item() / items.len() as f64;
                    for &i in items {
                        accumulate(&mut grads, i, Matrix::scalar(share));
                    }
                }
            }
        }

        let params = self
            .param_nodes
            .iter()
            .map(|n| n.and_then(|n| grads[n.0].take()))
            .collect();
        Ok(Gradients {
            params,
            leaves: grads,
        })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, d: Matrix) {
    match &mut grads[id.0] {
        Some(g) => g.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    params: Vec<Option<Matrix>>,
    leaves: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of a parameter, or `None` if the loss does not depend on it.
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params[id.0].as_ref()
    }

    /// Gradient of a constant leaf node.
    pub fn leaf(&self, id: NodeId) -> Option<&Matrix> {
        self.leaves.get(id.0).and_then(Option::as_ref)
    }

    /// Dense per-parameter gradients; unreached parameters get zeros.
    pub fn into_dense(self, params: &ParamStore) -> Vec<Matrix> {
        self.params
            .into_iter()
            .zip(params.values())
            .map(|(g, p)| g.unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
            .collect()
    }
}
