//! Reverse-mode differentiation over an explicit operation tape.
//!
//! Nodes are appended in evaluation order, so inputs always precede their
//! consumers and a single reverse sweep visits every reachable node once.

use super::{Gradients, KernelError, ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative given the input `x` and the output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => sigmoid(x),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Floor applied to standard deviations inside log and variance terms.
pub const SD_CLAMP: f64 = 1e-6;
/// Floor applied to probabilities inside cross-entropy terms.
pub const PROB_FLOOR: f64 = 1e-12;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Affine { w: Var, b: Option<Var>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Activation(Activation, Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    SelectCols(Var, Vec<usize>),
    Sum(Var),
    GaussianNll { x: Vec<f64>, mask: Vec<bool>, mean: Var, sd: Var },
    CategoricalCe { probs: Var, labels: Vec<usize>, mask: Vec<bool> },
    KlDiag { mq: Var, sq: Var, mp: Var, sp: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Affine { .. } => "affine",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRowBroadcast(..) => "add_row_broadcast",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Activation(..) => "activation",
            Op::Softmax(_) => "softmax",
            Op::ConcatCols(_) => "concat_cols",
            Op::SelectCols(..) => "select_cols",
            Op::Sum(_) => "sum",
            Op::GaussianNll { .. } => "gaussian_nll",
            Op::CategoricalCe { .. } => "categorical_ce",
            Op::KlDiag { .. } => "kl_diag",
        }
    }
}

struct Node {
    op: Op,
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor>,
}

/// A computation tape bound to a parameter store.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

/// Per-node adjoints produced by a reverse sweep.
pub struct Adjoints {
    adj: Vec<Option<Vec<f64>>>,
}

impl Adjoints {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not
    /// influence the loss.
    pub fn of(&self, v: Var, len: usize) -> Vec<f64> {
        self.adj[v.0].clone().unwrap_or_else(|| vec![0.0; len])
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
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

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var, KernelError> {
        if !value.is_finite() {
            return Err(KernelError::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node { op, value: Some(value) });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers a constant input.
    pub fn input(&mut self, value: Tensor) -> Result<Var, KernelError> {
        self.push(Op::Input, value)
    }

    /// Registers a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node { op: Op::Param(id), value: None });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// `W x + b` for a vector `x`, or row-wise for a matrix `x`.
    pub fn affine(&mut self, w: Var, b: Option<Var>, x: Var) -> Result<Var, KernelError> {
        let (wt, xt) = (self.value(w), self.value(x));
        if wt.shape().len() != 2 {
            return Err(KernelError::Shape(format!("affine weight must be 2-D, got {:?}", wt.shape())));
        }
        let (m, n) = (wt.shape()[0], wt.shape()[1]);
        if xt.cols() != n || xt.shape().is_empty() {
            return Err(KernelError::Shape(format!(
                "affine weight {:?} cannot multiply input {:?}",
                wt.shape(),
                xt.shape()
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != m {
                return Err(KernelError::Shape(format!(
                    "affine bias has {} entries, expected {m}",
                    self.value(b).len()
                )));
            }
        }
        let rows = xt.rows();
        let wd = wt.data();
        let xd = xt.data();
        let mut out = vec![0.0; rows * m];
        for r in 0..rows {
            let xr = &xd[r * n..(r + 1) * n];
            let or = &mut out[r * m..(r + 1) * m];
            for (i, o) in or.iter_mut().enumerate() {
                let wi = &wd[i * n..(i + 1) * n];
                *o = wi.iter().zip(xr).map(|(a, b)| a * b).sum();
            }
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            for r in 0..rows {
                for i in 0..m {
                    out[r * m + i] += bd[i];
                }
            }
        }
        let shape = if xt.shape().len() == 1 { vec![m] } else { vec![rows, m] };
        self.push(Op::Affine { w, b, x }, Tensor::new(shape, out)?)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(), KernelError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(KernelError::Shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, KernelError> {
        self.same_shape(a, b, op.name())?;
        let (at, bt) = (self.value(a), self.value(b));
        let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(at.shape().to_vec(), data)?;
        self.push(op, t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds vector `v` to every row of `m`.
    pub fn add_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var, KernelError> {
        let (mt, vt) = (self.value(m), self.value(v));
        if vt.len() != mt.cols() {
            return Err(KernelError::Shape(format!(
                "add_row_broadcast: {:?} rows vs vector {:?}",
                mt.shape(),
                vt.shape()
            )));
        }
        let c = mt.cols();
        let data = mt.data().iter().enumerate().map(|(i, x)| x + vt.data()[i % c]).collect();
        let t = Tensor::new(mt.shape().to_vec(), data)?;
        self.push(Op::AddRowBroadcast(m, v), t)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, KernelError> {
        let t = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), t)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, KernelError> {
        let t = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), t)
    }

    pub fn activation(&mut self, kind: Activation, a: Var) -> Result<Var, KernelError> {
        let t = self.value(a).map(|x| kind.apply(x));
        self.push(Op::Activation(kind, a), t)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, KernelError> {
        self.activation(Activation::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, KernelError> {
        self.activation(Activation::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, KernelError> {
        self.activation(Activation::Tanh, a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, KernelError> {
        self.activation(Activation::Softplus, a)
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var, KernelError> {
        let at = self.value(a);
        if at.cols() < 2 {
            return Err(KernelError::Shape("softmax needs at least two classes".into()));
        }
        let c = at.cols();
        let mut data = at.data().to_vec();
        for row in data.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let t = Tensor::new(at.shape().to_vec(), data)?;
        self.push(Op::Softmax(a), t)
    }

    /// Concatenates along the last dimension; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, KernelError> {
        let first = parts.first().ok_or_else(|| KernelError::Shape("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        let all_vectors = parts.iter().all(|p| self.value(*p).shape().len() <= 1);
        let mut total = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(KernelError::Shape(format!(
                    "concat_cols: row counts {rows} and {} differ",
                    t.rows()
                )));
            }
            total += t.cols();
        }
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for p in parts {
            let t = self.value(*p);
            let c = t.cols();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + c].copy_from_slice(t.row(r));
            }
            offset += c;
        }
        let shape = if all_vectors { vec![total] } else { vec![rows, total] };
        self.push(Op::ConcatCols(parts.to_vec()), Tensor::new(shape, data)?)
    }

    /// Picks columns `idx` (in order) from every row.
    pub fn select_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var, KernelError> {
        let at = self.value(a);
        let c = at.cols();
        if let Some(bad) = idx.iter().find(|&&i| i >= c) {
            return Err(KernelError::Shape(format!("select_cols: column {bad} out of {c}")));
        }
        let rows = at.rows();
        let mut data = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            let row = at.row(r);
            data.extend(idx.iter().map(|&i| row[i]));
        }
        let shape = if at.shape().len() == 2 { vec![rows, idx.len()] } else { vec![idx.len()] };
        self.push(Op::SelectCols(a, idx.to_vec()), Tensor::new(shape, data)?)
    }

    /// Contiguous column range `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, KernelError> {
        let idx: Vec<usize> = (start..end).collect();
        self.select_cols(a, &idx)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, KernelError> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Sum of scalar nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var, KernelError> {
        let mut iter = terms.iter();
        let mut acc = *iter.next().ok_or_else(|| KernelError::Shape("add_all of nothing".into()))?;
        for t in iter {
            acc = self.add(acc, *t)?;
        }
        Ok(acc)
    }

    /// Σ over observed cells of `½ln(2πσ²) + (x−μ)²/(2σ²)`.
    ///
    /// Values of `x` at unobserved cells are never read.
    pub fn gaussian_nll(&mut self, x: &[f64], mask: &[bool], mean: Var, sd: Var) -> Result<Var, KernelError> {
        self.same_shape(mean, sd, "gaussian_nll")?;
        let (mt, st) = (self.value(mean), self.value(sd));
        if x.len() != mt.len() || mask.len() != mt.len() {
            return Err(KernelError::Shape(format!(
                "gaussian_nll: {} targets / {} mask cells for {} predictions",
                x.len(),
                mask.len(),
                mt.len()
            )));
        }
        let mut total = 0.0;
        let mut xs = vec![0.0; x.len()];
        for i in 0..x.len() {
            if !mask[i] {
                continue;
            }
            xs[i] = x[i];
            let s = st.data()[i].max(SD_CLAMP);
            let r = x[i] - mt.data()[i];
            total += HALF_LN_2PI + s.ln() + r * r / (2.0 * s * s);
        }
        let op = Op::GaussianNll { x: xs, mask: mask.to_vec(), mean, sd };
        self.push(op, Tensor::scalar(total))
    }

    /// Σ over observed rows of `−ln p[label]`, with `p` floored at 1e-12.
    pub fn categorical_ce(&mut self, probs: Var, labels: &[usize], mask: &[bool]) -> Result<Var, KernelError> {
        let pt = self.value(probs);
        let (rows, k) = (pt.rows(), pt.cols());
        if labels.len() != rows || mask.len() != rows {
            return Err(KernelError::Shape(format!(
                "categorical_ce: {} labels / {} mask rows for {rows} rows",
                labels.len(),
                mask.len()
            )));
        }
        let mut total = 0.0;
        let mut ls = vec![0; rows];
        for r in 0..rows {
            if !mask[r] {
                continue;
            }
            if labels[r] >= k {
                return Err(KernelError::Shape(format!("class {} out of {k}", labels[r])));
            }
            ls[r] = labels[r];
            total -= pt.get(r, labels[r]).max(PROB_FLOOR).ln();
        }
        let op = Op::CategoricalCe { probs, labels: ls, mask: mask.to_vec() };
        self.push(op, Tensor::scalar(total))
    }

    /// Σ over cells of `KL(N(mq, sq²) ‖ N(mp, sp²))`.
    pub fn kl_diag(&mut self, mq: Var, sq: Var, mp: Var, sp: Var) -> Result<Var, KernelError> {
        self.same_shape(mq, sq, "kl_diag")?;
        self.same_shape(mq, mp, "kl_diag")?;
        self.same_shape(mq, sp, "kl_diag")?;
        let total = kl_diag_value(
            self.value(mq).data(),
            self.value(sq).data(),
            self.value(mp).data(),
            self.value(sp).data(),
        );
        self.push(Op::KlDiag { mq, sq, mp, sp }, Tensor::scalar(total))
    }

    /// Reverse sweep from a scalar `loss`, returning parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients, KernelError> {
        let adj = self.backward_all(loss)?;
        let mut grads = Gradients::zeros_like(self.params);
        for (i, slot) in self.param_nodes.iter().enumerate() {
            if let Some(v) = slot {
                if let Some(g) = &adj.adj[v.0] {
                    grads.get_mut(ParamId(i)).copy_from_slice(g);
                }
            }
        }
        Ok(grads)
    }

    /// Reverse sweep returning the adjoint of every node.
    pub fn backward_all(&self, loss: Var) -> Result<Adjoints, KernelError> {
        if self.value(loss).len() != 1 {
            return Err(KernelError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        if adj.iter().flatten().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(KernelError::NonFinite("gradient".into()));
        }
        Ok(Adjoints { adj })
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let out = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::Affine { w, b, x } => {
                let (wt, xt) = (self.value(*w), self.value(*x));
                let (m, n) = (wt.shape()[0], wt.shape()[1]);
                let rows = xt.rows();
                let (wd, xd) = (wt.data(), xt.data());
                {
                    let dx = slot(adj, *x, rows * n);
                    for r in 0..rows {
                        let gr = &g[r * m..(r + 1) * m];
                        let dxr = &mut dx[r * n..(r + 1) * n];
                        for (ii, &gi) in gr.iter().enumerate() {
                            if gi == 0.0 {
                                continue;
                            }
                            let wi = &wd[ii * n..(ii + 1) * n];
                            for (d, &wv) in dxr.iter_mut().zip(wi) {
                                *d += gi * wv;
                            }
                        }
                    }
                }
                {
                    let dw = slot(adj, *w, m * n);
                    for r in 0..rows {
                        let gr = &g[r * m..(r + 1) * m];
                        let xr = &xd[r * n..(r + 1) * n];
                        for (ii, &gi) in gr.iter().enumerate() {
                            if gi == 0.0 {
                                continue;
                            }
                            let dwi = &mut dw[ii * n..(ii + 1) * n];
                            for (d, &xv) in dwi.iter_mut().zip(xr) {
                                *d += gi * xv;
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    let db = slot(adj, *b, m);
                    for r in 0..rows {
                        for ii in 0..m {
                            db[ii] += g[r * m + ii];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                accumulate(slot(adj, *a, g.len()), g);
                accumulate(slot(adj, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                accumulate(slot(adj, *a, g.len()), g);
                let db = slot(adj, *b, g.len());
                for (d, gv) in db.iter_mut().zip(g) {
                    *d -= gv;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let da = slot(adj, *a, g.len());
                for k in 0..g.len() {
                    da[k] += g[k] * bv[k];
                }
                let db = slot(adj, *b, g.len());
                for k in 0..g.len() {
                    db[k] += g[k] * av[k];
                }
            }
            Op::AddRowBroadcast(m, v) => {
                accumulate(slot(adj, *m, g.len()), g);
                let c = self.value(*v).len();
                let dv = slot(adj, *v, c);
                for (k, gv) in g.iter().enumerate() {
                    dv[k % c] += gv;
                }
            }
            Op::Scale(a, f) => {
                let da = slot(adj, *a, g.len());
                for (d, gv) in da.iter_mut().zip(g) {
                    *d += gv * f;
                }
            }
            Op::AddScalar(a) => accumulate(slot(adj, *a, g.len()), g),
            Op::Activation(kind, a) => {
                let xv = self.value(*a).data();
                let yv = out.data();
                let da = slot(adj, *a, g.len());
                for k in 0..g.len() {
                    da[k] += g[k] * kind.derivative(xv[k], yv[k]);
                }
            }
            Op::Softmax(a) => {
                let c = out.cols();
                let yv = out.data();
                let da = slot(adj, *a, g.len());
                for (r, (gr, yr)) in g.chunks(c).zip(yv.chunks(c)).enumerate() {
                    let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    for k in 0..c {
                        da[r * c + k] += yr[k] * (gr[k] - dot);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let rows = out.rows();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    let dp = slot(adj, *p, rows * c);
                    for r in 0..rows {
                        for k in 0..c {
                            dp[r * c + k] += g[r * total + offset + k];
                        }
                    }
                    offset += c;
                }
            }
            Op::SelectCols(a, idx) => {
                let at = self.value(*a);
                let (rows, c) = (at.rows(), at.cols());
                let da = slot(adj, *a, rows * c);
                let n = idx.len();
                for r in 0..rows {
                    for (k, &col) in idx.iter().enumerate() {
                        da[r * c + col] += g[r * n + k];
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let da = slot(adj, *a, n);
                for d in da.iter_mut() {
                    *d += g[0];
                }
            }
            Op::GaussianNll { x, mask, mean, sd } => {
                let (mv, sv) = (self.value(*mean).data(), self.value(*sd).data());
                let n = mv.len();
                let mut dm = vec![0.0; n];
                let mut ds = vec![0.0; n];
                for k in 0..n {
                    if !mask[k] {
                        continue;
                    }
                    let r = x[k] - mv[k];
                    if sv[k] >= SD_CLAMP {
                        let s = sv[k];
                        dm[k] = -g[0] * r / (s * s);
                        ds[k] = g[0] * (1.0 / s - r * r / (s * s * s));
                    } else {
                        let s = SD_CLAMP;
                        dm[k] = -g[0] * r / (s * s);
                    }
                }
                accumulate(slot(adj, *mean, n), &dm);
                accumulate(slot(adj, *sd, n), &ds);
            }
            Op::CategoricalCe { probs, labels, mask } => {
                let pt = self.value(*probs);
                let c = pt.cols();
                let dp = slot(adj, *probs, pt.len());
                for (r, (&l, &m)) in labels.iter().zip(mask).enumerate() {
                    let p = pt.get(r, l);
                    if m && p > PROB_FLOOR {
                        dp[r * c + l] -= g[0] / p;
                    }
                }
            }
            Op::KlDiag { mq, sq, mp, sp } => {
                let (mqv, sqv) = (self.value(*mq).data(), self.value(*sq).data());
                let (mpv, spv) = (self.value(*mp).data(), self.value(*sp).data());
                let n = mqv.len();
                let (mut dmq, mut dsq, mut dmp, mut dsp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                for k in 0..n {
                    let q = sqv[k].max(SD_CLAMP);
                    let p = spv[k].max(SD_CLAMP);
                    let d = mqv[k] - mpv[k];
                    dmq[k] = g[0] * d / (p * p);
                    dmp[k] = -dmq[k];
                    if sqv[k] >= SD_CLAMP {
                        dsq[k] = g[0] * (-1.0 / q + q / (p * p));
                    }
                    if spv[k] >= SD_CLAMP {
                        dsp[k] = g[0] * (1.0 / p - (q * q + d * d) / (p * p * p));
                    }
                }
                accumulate(slot(adj, *mq, n), &dmq);
                accumulate(slot(adj, *sq, n), &dsq);
                accumulate(slot(adj, *mp, n), &dmp);
                accumulate(slot(adj, *sp, n), &dsp);
            }
        }
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Closed-form diagonal Gaussian KL, summed over cells.
pub fn kl_diag_value(mq: &[f64], sq: &[f64], mp: &[f64], sp: &[f64]) -> f64 {
    let mut total = 0.0;
    for k in 0..mq.len() {
        let q = sq[k].max(SD_CLAMP);
        let p = sp[k].max(SD_CLAMP);
        let d = mq[k] - mp[k];
        total += (p / q).ln() + (q * q + d * d) / (2.0 * p * p) - 0.5;
    }
    total
}
