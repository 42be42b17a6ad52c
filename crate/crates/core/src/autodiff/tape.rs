use super::tensor::{sigmoid, Tensor};
use super::{AutodiffError, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Kinds of recorded operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Input,
    Param,
    MatMul,
    Add,
    Mul,
    Scale,
    Sigmoid,
    Relu,
    Transpose,
    Sum,
    Mean,
    MeanRows,
    Concat,
    Embedding,
    SoftmaxCrossEntropy,
    GradReverse,
    ZeroDiag,
    HeavisideSurrogate,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Param => "param",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Relu => "relu",
            OpKind::Transpose => "transpose",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::MeanRows => "mean_rows",
            OpKind::Concat => "concat",
            OpKind::Embedding => "embedding",
            OpKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            OpKind::GradReverse => "grad_reverse",
            OpKind::ZeroDiag => "zero_diag",
            OpKind::HeavisideSurrogate => "heaviside_surrogate",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        const ALL: [OpKind; 18] = [
            OpKind::Input,
            OpKind::Param,
            OpKind::MatMul,
            OpKind::Add,
            OpKind::Mul,
            OpKind::Scale,
            OpKind::Sigmoid,
            OpKind::Relu,
            OpKind::Transpose,
            OpKind::Sum,
            OpKind::Mean,
            OpKind::MeanRows,
            OpKind::Concat,
            OpKind::Embedding,
            OpKind::SoftmaxCrossEntropy,
            OpKind::GradReverse,
            OpKind::ZeroDiag,
            OpKind::HeavisideSurrogate,
        ];
        ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Concat(Vec<Var>),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
    GradReverse(Var, f64),
    ZeroDiag(Var),
    Heaviside(Var, f64),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Input => OpKind::Input,
            Op::Param(_) => OpKind::Param,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Relu(_) => OpKind::Relu,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::MeanRows(_) => OpKind::MeanRows,
            Op::Concat(_) => OpKind::Concat,
            Op::Embedding { .. } => OpKind::Embedding,
            Op::SoftmaxCe { .. } => OpKind::SoftmaxCrossEntropy,
            Op::GradReverse(..) => OpKind::GradReverse,
            Op::ZeroDiag(_) => OpKind::ZeroDiag,
            Op::Heaviside(..) => OpKind::HeavisideSurrogate,
        }
    }

    fn operands(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::GradReverse(a, _)
            | Op::ZeroDiag(a)
            | Op::Heaviside(a, _) => vec![*a],
            Op::Concat(parts) => parts.clone(),
            Op::Embedding { table, .. } => vec![*table],
            Op::SoftmaxCe { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Scales every adjoint an operation kind sends to its operands. Test hook
/// for showing the gradient checker catches a broken backward rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fault {
    pub kind: OpKind,
    pub factor: f64,
}

/// Records operations in creation order, which is a topological order, so
/// the backward pass is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

/// Adjoints of every node after a backward sweep.
#[derive(Debug)]
pub struct Adjoints {
    values: Vec<Option<Tensor>>,
}

impl Adjoints {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.values.get(v.0).and_then(Option::as_ref)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// `b` matches `a` exactly, or `b` is a single row as wide as `a`'s last axis.
fn broadcast_ok(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() || (b.rows() == 1 && b.cols() == a.cols() && b.shape().len() <= 2)
}

/// Sums `grad` (shaped like the larger operand) down to `like`'s shape.
fn reduce_to(grad: Tensor, like: &Tensor) -> Tensor {
    if grad.shape() == like.shape() {
        return grad;
    }
    let c = like.cols();
    let mut out = Tensor::zeros(like.shape());
    for (i, g) in grad.data().iter().enumerate() {
        out.data_mut()[i % c] += g;
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn with_fault(fault: Fault) -> Self {
        Tape {
            nodes: Vec::new(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        if cfg!(debug_assertions) && !value.is_finite() {
            let inputs_finite = op.operands().iter().all(|&o| self.val(o).is_finite());
            assert!(
                !inputs_finite,
                "{} produced a non-finite value from finite inputs",
                op.kind().name()
            );
        }
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; receives an adjoint but no parameter update.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(Op::Param(id), store.get(id).value.clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.val(a), self.val(b));
        if !ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = ta.matmul_raw(tb);
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// Elementwise sum; `b` may be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, "add", |x, y| x + y)
            .map(|out| self.push(Op::Add(a, b), out))
    }

    /// Elementwise product; `b` may be a single row broadcast over `a`'s rows.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, "mul", |x, y| x * y)
            .map(|out| self.push(Op::Mul(a, b), out))
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, AutodiffError> {
        let (ta, tb) = (self.val(a), self.val(b));
        if !broadcast_ok(ta, tb) {
            return Err(shape_err(op, ta, tb));
        }
        let c = tb.len();
        let mut out = ta.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = f(*v, tb.data()[i % c]);
        }
        Ok(out)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.val(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.val(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.val(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), out)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.val(a);
        if !t.is_matrix() {
            return Err(shape_err("transpose", t, t));
        }
        let out = t.transpose();
        Ok(self.push(Op::Transpose(a), out))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Mean over all elements.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.val(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Op::Mean(a), Tensor::scalar(s))
    }

    /// Mean over rows: `[n×d] -> [1×d]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.val(a);
        let (n, d) = (t.rows(), t.cols());
        if n == 0 {
            return Err(shape_err("mean_rows", t, t));
        }
        let mut out = vec![0.0; d];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        Ok(self.push(Op::MeanRows(a), Tensor::matrix(1, d, out)))
    }

    /// Concatenation along the last axis of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts
            .first()
            .map(|&p| self.val(p))
            .ok_or(AutodiffError::Empty("concat"))?;
        let n = first.rows();
        for &p in parts {
            let t = self.val(p);
            if !t.is_matrix() || t.rows() != n {
                return Err(shape_err("concat", first, t));
            }
        }
        let width: usize = parts.iter().map(|&p| self.val(p).cols()).sum();
        let mut out = Vec::with_capacity(n * width);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.val(p).row(i));
            }
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::matrix(n, width, out)))
    }

    /// Gathers rows of `table` (`[v×d]`) for each id, giving `[ids.len()×d]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.val(table);
        if !t.is_matrix() {
            return Err(shape_err("embedding_lookup", t, t));
        }
        let (v, d) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(AutodiffError::IndexOutOfVocab { id, vocab: v });
            }
            out.extend_from_slice(t.row(id));
        }
        let out = Tensor::matrix(ids.len(), d, out);
        Ok(self.push(
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            out,
        ))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<Var, AutodiffError> {
        let t = self.val(logits);
        let (n, c) = (t.rows(), t.cols());
        if n != labels.len() || n == 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: t.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let mut probs = Tensor::zeros(&[n, c]);
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            if label >= c {
                return Err(AutodiffError::IndexOutOfVocab {
                    id: label,
                    vocab: c,
                });
            }
            let row = t.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let log_z = max + z.ln();
            loss += log_z - row[label];
            for (j, x) in row.iter().enumerate() {
                probs.data_mut()[i * c + j] = (x - log_z).exp();
            }
        }
        let out = Tensor::scalar(loss / n as f64);
        Ok(self.push(
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            out,
        ))
    }

    /// Identity forward; backward multiplies the adjoint by `-lambda`.
    pub fn grad_reverse(&mut self, a: Var, lambda: f64) -> Result<Var, AutodiffError> {
        if lambda.is_nan() || lambda < 0.0 {
            return Err(AutodiffError::NegativeLambda(lambda));
        }
        let out = self.val(a).clone();
        Ok(self.push(Op::GradReverse(a, lambda), out))
    }

    /// Copy of a square matrix with its main diagonal set to zero.
    pub fn zero_diag(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.val(a);
        if !t.is_matrix() || t.rows() != t.cols() {
            return Err(AutodiffError::NotSquare(t.shape().to_vec()));
        }
        let n = t.rows();
        let mut out = t.clone();
        for i in 0..n {
            out.data_mut()[i * n + i] = 0.0;
        }
        Ok(self.push(Op::ZeroDiag(a), out))
    }

    /// Heaviside step forward (`x > 0` gives 1, else 0). Backward uses the
    /// derivative of `sigmoid(k x)`, i.e. `k σ(kx)(1 - σ(kx))`.
    pub fn heaviside_surrogate(&mut self, a: Var, k: f64) -> Result<Var, AutodiffError> {
        if k.is_nan() || k <= 0.0 {
            return Err(AutodiffError::BadSteepness(k));
        }
        let out = self.val(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        Ok(self.push(Op::Heaviside(a, k), out))
    }

    /// Reverse sweep from `loss`, returning adjoints of every node.
    pub fn adjoints(&self, loss: Var) -> Result<Adjoints, AutodiffError> {
        let lv = self.val(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::NotScalarLoss(lv.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let scale = match self.fault {
                Some(f) if f.kind == node.op.kind() => f.factor,
                _ => 1.0,
            };
            for (target, contrib) in self.local_backward(&node.op, &node.value, &g) {
                let contrib = if scale != 1.0 {
                    contrib.map(|x| x * scale)
                } else {
                    contrib
                };
                match &mut adj[target.0] {
                    Some(existing) => existing.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            adj[idx] = Some(g);
        }
        Ok(Adjoints { values: adj })
    }

    /// Runs the backward pass and adds each parameter's gradient into its
    /// accumulator in `store`. Consumes the tape.
    pub fn backward(self, loss: Var, store: &mut ParamStore) -> Result<(), AutodiffError> {
        let adj = self.adjoints(loss)?;
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let (Op::Param(id), Some(g)) = (&node.op, adj.get(Var(i))) {
                store.get_mut(*id).grad.add_assign(g);
            }
        }
        Ok(())
    }

    fn local_backward(&self, op: &Op, out: &Tensor, g: &Tensor) -> Vec<(Var, Tensor)> {
        match op {
            Op::Input | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let ga = g.matmul_raw(&tb.transpose());
                let gb = ta.transpose().matmul_raw(g);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b) => {
                let gb = reduce_to(g.clone(), self.val(*b));
                vec![(*a, g.clone()), (*b, gb)]
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let c = tb.len();
                let mut ga = g.clone();
                let mut gb_full = g.clone();
                for (i, v) in ga.data_mut().iter_mut().enumerate() {
                    *v *= tb.data()[i % c];
                }
                for (v, x) in gb_full.data_mut().iter_mut().zip(ta.data()) {
                    *v *= x;
                }
                vec![(*a, ga), (*b, reduce_to(gb_full, tb))]
            }
            Op::Scale(a, f) => vec![(*a, g.map(|x| x * f))],
            Op::Sigmoid(a) => {
                let mut ga = g.clone();
                for (v, y) in ga.data_mut().iter_mut().zip(out.data()) {
                    *v *= y * (1.0 - y);
                }
                vec![(*a, ga)]
            }
            Op::Relu(a) => {
                let mut ga = g.clone();
                for (v, x) in ga.data_mut().iter_mut().zip(self.val(*a).data()) {
                    if *x <= 0.0 {
                        *v = 0.0;
                    }
                }
                vec![(*a, ga)]
            }
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::Sum(a) => {
                let s = g.data()[0];
                vec![(*a, Tensor::filled(self.val(*a).shape(), s))]
            }
            Op::Mean(a) => {
                let t = self.val(*a);
                let s = g.data()[0] / t.len().max(1) as f64;
                vec![(*a, Tensor::filled(t.shape(), s))]
            }
            Op::MeanRows(a) => {
                let t = self.val(*a);
                let n = t.rows() as f64;
                let d = t.cols();
                let mut ga = Tensor::zeros(t.shape());
                for (i, v) in ga.data_mut().iter_mut().enumerate() {
                    *v = g.data()[i % d] / n;
                }
                vec![(*a, ga)]
            }
            Op::Concat(parts) => {
                let n = out.rows();
                let width = out.cols();
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let c = self.val(p).cols();
                        let mut gp = Vec::with_capacity(n * c);
                        for i in 0..n {
                            gp.extend_from_slice(
                                &g.data()[i * width + offset..i * width + offset + c],
                            );
                        }
                        offset += c;
                        (p, Tensor::matrix(n, c, gp))
                    })
                    .collect()
            }
            Op::Embedding { table, ids } => {
                let t = self.val(*table);
                let d = t.cols();
                let mut gt = Tensor::zeros(t.shape());
                for (i, &id) in ids.iter().enumerate() {
                    let dst = &mut gt.data_mut()[id * d..(id + 1) * d];
                    for (o, v) in dst.iter_mut().zip(&g.data()[i * d..(i + 1) * d]) {
                        *o += v;
                    }
                }
                vec![(*table, gt)]
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len();
                let c = probs.cols();
                let s = g.data()[0] / n as f64;
                let mut gl = probs.clone();
                for (i, &label) in labels.iter().enumerate() {
                    gl.data_mut()[i * c + label] -= 1.0;
                }
                for v in gl.data_mut() {
                    *v *= s;
                }
                let gl = Tensor::new(self.val(*logits).shape().to_vec(), gl.into_data())
                    .expect("logit gradient shape");
                vec![(*logits, gl)]
            }
            Op::GradReverse(a, lambda) => vec![(*a, g.map(|x| -lambda * x))],
            Op::ZeroDiag(a) => {
                let n = g.rows();
                let mut ga = g.clone();
                for i in 0..n {
                    ga.data_mut()[i * n + i] = 0.0;
                }
                vec![(*a, ga)]
            }
            Op::Heaviside(a, k) => {
                let mut ga = g.clone();
                for (v, x) in ga.data_mut().iter_mut().zip(self.val(*a).data()) {
                    let s = sigmoid(k * x);
                    *v *= k * s * (1.0 - s);
                }
                vec![(*a, ga)]
            }
        }
    }
}
