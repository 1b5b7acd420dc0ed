use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::tensor::{broadcast_to, broadcastable, sum_to, Tensor};

/// Values supplied for named leaves at evaluation time.
pub type Bindings = HashMap<String, Tensor>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Input(String),
    Param(String, Tensor),
    Const(Tensor),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Relu(NodeId),
    /// Heaviside step with step(0) = 0; treated as locally constant.
    Step(NodeId),
    Tanh(NodeId),
    Pow(NodeId, f64),
    BroadcastTo(NodeId),
    SumTo(NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(..) => "param",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Relu(_) => "relu",
            Op::Step(_) => "step",
            Op::Tanh(_) => "tanh",
            Op::Pow(..) => "pow",
            Op::BroadcastTo(_) => "broadcast",
            Op::SumTo(_) => "sum",
            Op::ConcatCols(..) => "concat",
            Op::SliceCols(..) => "slice",
        }
    }

    fn operands(&self) -> [Option<NodeId>; 2] {
        match *self {
            Op::Input(_) | Op::Param(..) | Op::Const(_) => [None, None],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::ConcatCols(a, b) => {
                [Some(a), Some(b)]
            }
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Step(a)
            | Op::Tanh(a)
            | Op::Pow(a, _)
            | Op::BroadcastTo(a)
            | Op::SumTo(a)
            | Op::SliceCols(a, ..) => [Some(a), None],
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) shape: Vec<usize>,
}

/// An append-only expression graph. Node ids are a topological order, so
/// differentiation simply appends the adjoint computation to the same graph.
#[derive(Clone, Debug, Default)]
pub struct ExprGraph {
    pub(crate) nodes: Vec<Node>,
    leaves: BTreeMap<String, NodeId>,
    outputs: BTreeMap<String, NodeId>,
}

impl ExprGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, shape });
        NodeId(self.nodes.len() - 1)
    }

    fn add_leaf(&mut self, name: &str, op: Op, shape: Vec<usize>) -> Result<NodeId> {
        if self.leaves.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate leaf `{name}`")));
        }
        let id = self.push(op, shape);
        self.leaves.insert(name.to_string(), id);
        Ok(id)
    }

    /// Declares an input leaf that must be bound at evaluation time.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        self.add_leaf(name, Op::Input(name.to_string()), shape.to_vec())
    }

    /// Declares a trainable leaf carrying its current value.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<NodeId> {
        let shape = value.shape().to_vec();
        self.add_leaf(name, Op::Param(name.to_string(), value), shape)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Const(value), shape)
    }

    pub fn leaf(&self, name: &str) -> Result<NodeId> {
        self.leaves.get(name).copied().ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    /// Names of trainable leaves, in name order.
    pub fn param_names(&self) -> Vec<String> {
        self.leaves
            .iter()
            .filter(|(_, id)| matches!(self.nodes[id.0].op, Op::Param(..)))
            .map(|(name, _)| name.clone())
            .collect()
    }

    pub(crate) fn param_value(&self, name: &str) -> Result<&Tensor> {
        match &self.nodes[self.leaf(name)?.0].op {
            Op::Param(_, v) => Ok(v),
            _ => Err(Error::UnknownName(name.to_string())),
        }
    }

    pub fn set_output(&mut self, name: &str, id: NodeId) {
        self.outputs.insert(name.to_string(), id);
    }

    pub fn output(&self, name: &str) -> Result<NodeId> {
        self.outputs.get(name).copied().ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    pub fn outputs(&self) -> &BTreeMap<String, NodeId> {
        &self.outputs
    }

    // ---- builders -------------------------------------------------------

    fn broadcast_pair(&mut self, a: NodeId, b: NodeId) -> Result<(NodeId, NodeId)> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa == sb {
            Ok((a, b))
        } else if broadcastable(&sb, &sa) {
            Ok((a, self.broadcast_to(b, &sa)?))
        } else if broadcastable(&sa, &sb) {
            Ok((self.broadcast_to(a, &sb)?, b))
        } else {
            Err(Error::Shape(format!("cannot broadcast {sa:?} with {sb:?}")))
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (a, b) = self.broadcast_pair(a, b)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Add(a, b), shape))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (a, b) = self.broadcast_pair(a, b)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Sub(a, b), shape))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (a, b) = self.broadcast_pair(a, b)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Mul(a, b), shape))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Scale(a, c), shape)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let shape = vec![sa[0], sb[1]];
        Ok(self.push(Op::MatMul(a, b), shape))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::Shape(format!("transpose of {s:?}")));
        }
        let shape = vec![s[1], s[0]];
        Ok(self.push(Op::Transpose(a), shape))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Relu(a), shape)
    }

    pub fn step(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Step(a), shape)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Tanh(a), shape)
    }

    /// Elementwise power. `p == 1` returns `a` itself and `p == 0` a ones constant.
    pub fn pow(&mut self, a: NodeId, p: f64) -> NodeId {
        let shape = self.shape(a).to_vec();
        if p == 1.0 {
            a
        } else if p == 0.0 {
            self.constant(Tensor::ones(&shape))
        } else {
            self.push(Op::Pow(a, p), shape)
        }
    }

    pub fn broadcast_to(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let s = self.shape(a);
        if s == shape {
            return Ok(a);
        }
        if !broadcastable(s, shape) {
            return Err(Error::Shape(format!("cannot broadcast {s:?} to {shape:?}")));
        }
        Ok(self.push(Op::BroadcastTo(a), shape.to_vec()))
    }

    pub fn sum_to(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let s = self.shape(a);
        if s == shape {
            return Ok(a);
        }
        if !broadcastable(shape, s) {
            return Err(Error::Shape(format!("cannot reduce {s:?} to {shape:?}")));
        }
        Ok(self.push(Op::SumTo(a), shape.to_vec()))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.sum_to(a, &[]).expect("every shape reduces to a scalar")
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n: usize = self.shape(a).iter().product();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Column-wise mean of an `(n, f)` matrix, shape `(f)`.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::Shape(format!("mean_rows of {s:?}")));
        }
        let summed = self.sum_to(a, &[s[1]])?;
        Ok(self.scale(summed, 1.0 / s[0] as f64))
    }

    /// Euclidean norm of each row, shape `(n, 1)`.
    pub fn row_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::Shape(format!("row_norm of {s:?}")));
        }
        let sq = self.mul(a, a)?;
        let summed = self.sum_to(sq, &[s[0], 1])?;
        Ok(self.pow(summed, 0.5))
    }

    /// Row-wise affine interpolation `alpha * a + (1 - alpha) * b` for a
    /// fixed `(n, 1)` weight column.
    pub fn lerp(&mut self, a: NodeId, b: NodeId, alpha: &Tensor) -> Result<NodeId> {
        let n = self.shape(a).first().copied().unwrap_or(1);
        if alpha.shape() != [n, 1] {
            return Err(Error::Shape(format!("interpolation weights {:?} for {n} rows", alpha.shape())));
        }
        let complement = alpha.map(|t| 1.0 - t);
        let wa = self.constant(alpha.clone());
        let wb = self.constant(complement);
        let ta = self.mul(a, wa)?;
        let tb = self.mul(b, wb)?;
        self.add(ta, tb)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::Shape(format!("concat {sa:?} with {sb:?}")));
        }
        let shape = vec![sa[0], sa[1] + sb[1]];
        Ok(self.push(Op::ConcatCols(a, b), shape))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let s = self.shape(a);
        if s.len() != 2 || start > end || end > s[1] {
            return Err(Error::Shape(format!("slice {start}..{end} of {s:?}")));
        }
        if start == 0 && end == s[1] {
            return Ok(a);
        }
        let shape = vec![s[0], end - start];
        Ok(self.push(Op::SliceCols(a, start, end), shape))
    }

    // ---- evaluation -----------------------------------------------------

    /// Evaluates every named output.
    pub fn evaluate(&self, bindings: &Bindings) -> Result<BTreeMap<String, Tensor>> {
        let targets: Vec<NodeId> = self.outputs.values().copied().collect();
        let values = self.eval_nodes(bindings, &targets)?;
        Ok(self
            .outputs
            .iter()
            .map(|(name, id)| (name.clone(), values[id.0].clone().expect("target evaluated").into_owned()))
            .collect())
    }

    /// Evaluates the given nodes, returning their values in the same order.
    pub fn eval(&self, bindings: &Bindings, targets: &[NodeId]) -> Result<Vec<Tensor>> {
        let values = self.eval_nodes(bindings, targets)?;
        Ok(targets
            .iter()
            .map(|id| values[id.0].clone().expect("target evaluated").into_owned())
            .collect())
    }

    fn eval_nodes<'a>(
        &'a self,
        bindings: &'a Bindings,
        targets: &[NodeId],
    ) -> Result<Vec<Option<Cow<'a, Tensor>>>> {
        let mut needed = vec![false; self.nodes.len()];
        for t in targets {
            needed[t.0] = true;
        }
        for i in (0..self.nodes.len()).rev() {
            if needed[i] {
                for operand in self.nodes[i].op.operands().into_iter().flatten() {
                    needed[operand.0] = true;
                }
            }
        }
        let mut values: Vec<Option<Cow<'a, Tensor>>> = vec![None; self.nodes.len()];
        for i in 0..self.nodes.len() {
            if !needed[i] {
                continue;
            }
            let node = &self.nodes[i];
            let v = |id: NodeId| -> &Tensor { values[id.0].as_deref().expect("operand evaluated") };
            let out: Cow<'a, Tensor> = match &node.op {
                Op::Input(name) => {
                    let t = bindings.get(name).ok_or_else(|| Error::UnboundLeaf(name.clone()))?;
                    if t.shape() != node.shape.as_slice() {
                        return Err(Error::Shape(format!(
                            "leaf `{name}` declared {:?}, bound {:?}",
                            node.shape,
                            t.shape()
                        )));
                    }
                    Cow::Borrowed(t)
                }
                Op::Param(name, value) => match bindings.get(name) {
                    Some(t) if t.shape() != node.shape.as_slice() => {
                        return Err(Error::Shape(format!("param `{name}` rebound with shape {:?}", t.shape())))
                    }
                    Some(t) => Cow::Borrowed(t),
                    None => Cow::Borrowed(value),
                },
                Op::Const(t) => Cow::Borrowed(t),
                Op::Add(a, b) => Cow::Owned(v(*a).zip_map(v(*b), |x, y| x + y)),
                Op::Sub(a, b) => Cow::Owned(v(*a).zip_map(v(*b), |x, y| x - y)),
                Op::Mul(a, b) => Cow::Owned(v(*a).zip_map(v(*b), |x, y| x * y)),
                Op::Scale(a, c) => Cow::Owned(v(*a).map(|x| x * c)),
                Op::MatMul(a, b) => Cow::Owned(v(*a).matmul(v(*b))?),
                Op::Transpose(a) => Cow::Owned(v(*a).transpose()),
                Op::Relu(a) => Cow::Owned(v(*a).map(|x| if x > 0.0 { x } else { 0.0 })),
                Op::Step(a) => Cow::Owned(v(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 })),
                Op::Tanh(a) => Cow::Owned(v(*a).map(f64::tanh)),
                Op::Pow(a, p) => Cow::Owned(v(*a).map(|x| x.powf(*p))),
                Op::BroadcastTo(a) => Cow::Owned(broadcast_to(v(*a), &node.shape)),
                Op::SumTo(a) => Cow::Owned(sum_to(v(*a), &node.shape)),
                Op::ConcatCols(a, b) => Cow::Owned(v(*a).concat_cols(v(*b))?),
                Op::SliceCols(a, s, e) => Cow::Owned(v(*a).slice_cols(*s, *e)?),
            };
            if !out.is_finite() {
                return Err(Error::NonFinite { op: node.op.name(), node: i });
            }
            values[i] = Some(out);
        }
        Ok(values)
    }

    // ---- differentiation ------------------------------------------------

    /// Appends nodes computing d`output`/d`wrt` for each entry of `wrt` and
    /// returns their ids. `wrt` may name interior nodes as well as leaves.
    pub fn differentiate(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        if !self.shape(output).is_empty() {
            return Err(Error::NotScalar(self.shape(output).to_vec()));
        }
        let limit = output.0 + 1;
        let mut active = vec![false; limit];
        for w in wrt {
            if w.0 < limit {
                active[w.0] = true;
            }
        }
        for i in 0..limit {
            if active[i] || matches!(self.nodes[i].op, Op::Step(_)) {
                continue;
            }
            active[i] = self.nodes[i].op.operands().into_iter().flatten().any(|o| active[o.0]);
        }

        let mut adjoint: HashMap<usize, NodeId> = HashMap::new();
        if active[output.0] {
            let seed = self.constant(Tensor::scalar(1.0));
            adjoint.insert(output.0, seed);
        }
        for i in (0..limit).rev() {
            let Some(&d) = adjoint.get(&i) else { continue };
            let op = self.nodes[i].op.clone();
            let me = NodeId(i);
            let contributions: Vec<(NodeId, NodeId)> = match op {
                Op::Input(_) | Op::Param(..) | Op::Const(_) | Op::Step(_) => vec![],
                Op::Add(a, b) => vec![(a, d), (b, d)],
                Op::Sub(a, b) => {
                    let mut c = vec![(a, d)];
                    if active[b.0] {
                        c.push((b, self.neg(d)));
                    }
                    c
                }
                Op::Mul(a, b) => {
                    let mut c = vec![];
                    if active[a.0] {
                        c.push((a, self.mul(d, b)?));
                    }
                    if active[b.0] {
                        c.push((b, self.mul(d, a)?));
                    }
                    c
                }
                Op::Scale(a, k) => vec![(a, self.scale(d, k))],
                Op::MatMul(a, b) => {
                    let mut c = vec![];
                    if active[a.0] {
                        let bt = self.transpose(b)?;
                        c.push((a, self.matmul(d, bt)?));
                    }
                    if active[b.0] {
                        let at = self.transpose(a)?;
                        c.push((b, self.matmul(at, d)?));
                    }
                    c
                }
                Op::Transpose(a) => vec![(a, self.transpose(d)?)],
                Op::Relu(a) => {
                    let mask = self.step(a);
                    vec![(a, self.mul(d, mask)?)]
                }
                Op::Tanh(a) => {
                    let sq = self.mul(me, me)?;
                    let ones = self.constant(Tensor::ones(&self.nodes[i].shape));
                    let deriv = self.sub(ones, sq)?;
                    vec![(a, self.mul(d, deriv)?)]
                }
                Op::Pow(a, p) => {
                    let lowered = self.pow(a, p - 1.0);
                    let deriv = self.scale(lowered, p);
                    vec![(a, self.mul(d, deriv)?)]
                }
                Op::BroadcastTo(a) => {
                    let s = self.nodes[a.0].shape.clone();
                    vec![(a, self.sum_to(d, &s)?)]
                }
                Op::SumTo(a) => {
                    let s = self.nodes[a.0].shape.clone();
                    vec![(a, self.broadcast_to(d, &s)?)]
                }
                Op::ConcatCols(a, b) => {
                    let wa = self.nodes[a.0].shape[1];
                    let wb = self.nodes[b.0].shape[1];
                    let mut c = vec![];
                    if active[a.0] {
                        c.push((a, self.slice_cols(d, 0, wa)?));
                    }
                    if active[b.0] {
                        c.push((b, self.slice_cols(d, wa, wa + wb)?));
                    }
                    c
                }
                Op::SliceCols(a, s, e) => {
                    let src = self.nodes[a.0].shape.clone();
                    let mut padded = d;
                    if s > 0 {
                        let left = self.constant(Tensor::zeros(&[src[0], s]));
                        padded = self.concat_cols(left, padded)?;
                    }
                    if e < src[1] {
                        let right = self.constant(Tensor::zeros(&[src[0], src[1] - e]));
                        padded = self.concat_cols(padded, right)?;
                    }
                    vec![(a, padded)]
                }
            };
            for (target, contribution) in contributions {
                if !active[target.0] {
                    continue;
                }
                let acc = match adjoint.get(&target.0) {
                    Some(&prev) => self.add(prev, contribution)?,
                    None => contribution,
                };
                adjoint.insert(target.0, acc);
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match adjoint.get(&w.0) {
                Some(&g) => g,
                None => {
                    let s = self.nodes[w.0].shape.clone();
                    self.constant(Tensor::zeros(&s))
                }
            })
            .collect())
    }

    /// Returns a new graph whose outputs are the gradients of the named
    /// scalar output with respect to the named leaves, registered as
    /// `d<output>/d<leaf>`. The result can be differentiated again.
    pub fn gradient(&self, output: &str, wrt: &[&str]) -> Result<ExprGraph> {
        let out = self.output(output)?;
        let ids = wrt.iter().map(|n| self.leaf(n)).collect::<Result<Vec<_>>>()?;
        let mut g = self.clone();
        let grads = g.differentiate(out, &ids)?;
        g.outputs.clear();
        for (name, id) in wrt.iter().zip(grads) {
            g.set_output(&format!("d{output}/d{name}"), id);
        }
        Ok(g)
    }
}
