use std::collections::HashMap;

use super::{ParamStore, Scalar};
use crate::error::{Error, Result};

/// Row-major matrix used inside a [`Graph`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(rows * cols, data.len(), "Mat::from_vec element count");
        Self { rows, cols, data }
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        Self::from_vec(rows, cols, data.iter().map(|&v| S::lift(v)).collect())
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn view(&self) -> View<'_, S> {
        View {
            ptr: self.data.as_ptr(),
            rows: self.rows,
            cols: self.cols,
            rs: self.cols as isize,
            cs: 1,
            _m: std::marker::PhantomData,
        }
    }
}

#[derive(Clone, Copy)]
struct View<'a, S> {
    ptr: *const S,
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
    _m: std::marker::PhantomData<&'a S>,
}

impl<S> View<'_, S> {
    fn t_if(self, t: bool) -> Self {
        if t {
            Self {
                rows: self.cols,
                cols: self.rows,
                rs: self.cs,
                cs: self.rs,
                ..self
            }
        } else {
            self
        }
    }
}

/// `out (viewed transposed if `out_t`) += a * b`.
fn gemm_acc<S: Scalar>(a: View<'_, S>, b: View<'_, S>, out: &mut Mat<S>, out_t: bool) {
    debug_assert_eq!(a.cols, b.rows);
    let (m, n) = (a.rows, b.cols);
    let (rsc, csc) = if out_t {
        debug_assert_eq!((out.cols, out.rows), (m, n));
        (1, out.cols as isize)
    } else {
        debug_assert_eq!((out.rows, out.cols), (m, n));
        (out.cols as isize, 1)
    };
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: views borrow live buffers whose extents match the dimensions;
    // `out` is uniquely borrowed and never aliases the inputs.
    unsafe {
        S::gemm(
            m,
            a.cols,
            n,
            S::one(),
            a.ptr,
            a.rs,
            a.cs,
            b.ptr,
            b.rs,
            b.cs,
            S::one(),
            out.data.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Abs(Var),
    PowScalar(Var, f64),
    SoftmaxRows(Var),
    SoftmaxGroups(Var, usize),
    SumGroups(Var, usize),
    MaxGroups(Var, Vec<u32>),
    LayerNormRows(Var, Vec<f64>),
    NormalizeCols(Var, Vec<f64>),
    Transpose(Var),
    GatherRows(Var, Vec<u32>),
    ConcatCols(Var, Var),
    SumCols(Var),
    SumAll(Var),
}

struct Node<S> {
    value: Mat<S>,
    op: Op,
}

/// Tape of differentiable operations over 2-D matrices.
///
/// Nodes are appended in evaluation order; [`Graph::backward`] walks the
/// tape in reverse and accumulates gradients into every node reachable from
/// the output.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    params: HashMap<String, Var>,
    param_order: Vec<(String, Var)>,
    grads: Vec<Option<Mat<S>>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

const NORM_EPS: f64 = 1e-5;

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat<S>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let m = self.value(v);
        (m.rows, m.cols)
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data[0].as_f64()
    }

    pub fn input(&mut self, m: Mat<S>) -> Var {
        self.push(m, Op::Input)
    }

    /// Binds a named weight from `store`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let w = store
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
        let v = self.push(w.to_mat(), Op::Param);
        self.params.insert(name.to_string(), v);
        self.param_order.push((name.to_string(), v));
        Ok(v)
    }

    fn check_same(&self, ctx: &str, a: Var, b: Var) {
        assert_eq!(self.shape(a), self.shape(b), "{ctx}: shape mismatch");
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(S) -> S) -> Var {
        let src = self.value(a);
        let value = Mat::from_vec(src.rows, src.cols, src.data.iter().map(|&x| f(x)).collect());
        self.push(value, op)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(S, S) -> S) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect();
        let value = Mat::from_vec(x.rows, x.cols, data);
        self.push(value, op)
    }

    /// `op(a) * op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let va = self.value(a).view().t_if(ta);
        let vb = self.value(b).view().t_if(tb);
        assert_eq!(va.cols, vb.rows, "matmul inner dimension");
        let mut out = Mat::zeros(va.rows, vb.cols);
        gemm_acc(va, vb, &mut out, false);
        self.push(out, Op::MatMul { a, b, ta, tb })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.check_same("add", a, b);
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.check_same("sub", a, b);
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.check_same("mul", a, b);
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a `[1 x cols]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((r.rows, r.cols), (1, x.cols), "add_row shape");
        let mut out = x.clone();
        for chunk in out.data.chunks_exact_mut(x.cols.max(1)) {
            for (o, &b) in chunk.iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `[1 x cols]` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((r.rows, r.cols), (1, x.cols), "mul_row shape");
        let mut out = x.clone();
        for chunk in out.data.chunks_exact_mut(x.cols.max(1)) {
            for (o, &b) in chunk.iter_mut().zip(&r.data) {
                *o *= b;
            }
        }
        self.push(out, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let s = S::lift(c);
        self.map(a, Op::Scale(a, c), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let s = S::lift(c);
        self.map(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > S::zero() { x } else { S::zero() })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = S::lift(slope);
        self.map(a, Op::LeakyRelu(a, slope), |x| if x > S::zero() { x } else { x * s })
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, Op::Abs(a), |x| x.abs())
    }

    /// Elementwise `a^q`; inputs must be positive.
    pub fn pow_scalar(&mut self, a: Var, q: f64) -> Var {
        let e = S::lift(q);
        self.map(a, Op::PowScalar(a, q), |x| x.powf(e))
    }

    /// Softmax across the columns of each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let cols = out.cols;
        if cols > 0 {
            let mut exps = vec![0.0f64; cols];
            for row in out.data.chunks_exact_mut(cols) {
                softmax_slice(row, &mut exps);
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Softmax over consecutive groups of `k` rows, independently per column.
    pub fn softmax_groups(&mut self, a: Var, k: usize) -> Var {
        let src = self.value(a);
        assert!(k > 0 && src.rows % k == 0, "softmax_groups: rows not divisible by k");
        let cols = src.cols;
        let mut out = src.clone();
        let mut max = vec![f64::NEG_INFINITY; cols];
        let mut sum = vec![0.0f64; cols];
        for g in 0..src.rows / k {
            max.fill(f64::NEG_INFINITY);
            sum.fill(0.0);
            let block = &mut out.data[g * k * cols..(g + 1) * k * cols];
            for row in block.chunks_exact(cols) {
                for (m, &v) in max.iter_mut().zip(row) {
                    *m = m.max(v.as_f64());
                }
            }
            for row in block.chunks_exact_mut(cols) {
                for ((v, s), m) in row.iter_mut().zip(sum.iter_mut()).zip(&max) {
                    let e = (v.as_f64() - m).exp();
                    *s += e;
                    *v = S::lift(e);
                }
            }
            for row in block.chunks_exact_mut(cols) {
                for (v, s) in row.iter_mut().zip(&sum) {
                    *v = S::lift(v.as_f64() / s);
                }
            }
        }
        self.push(out, Op::SoftmaxGroups(a, k))
    }

    /// Sums consecutive groups of `k` rows: `[n*k x c] -> [n x c]`.
    pub fn sum_groups(&mut self, a: Var, k: usize) -> Var {
        let src = self.value(a);
        assert!(k > 0 && src.rows % k == 0, "sum_groups: rows not divisible by k");
        let cols = src.cols;
        let n = src.rows / k;
        let mut acc = vec![0.0f64; cols];
        let mut out = Mat::zeros(n, cols);
        for g in 0..n {
            acc.fill(0.0);
            for r in 0..k {
                for (s, &v) in acc.iter_mut().zip(src.row(g * k + r)) {
                    *s += v.as_f64();
                }
            }
            for (o, s) in out.row_mut(g).iter_mut().zip(&acc) {
                *o = S::lift(*s);
            }
        }
        self.push(out, Op::SumGroups(a, k))
    }

    /// Columnwise max over consecutive groups of `k` rows.
    pub fn max_groups(&mut self, a: Var, k: usize) -> Var {
        let src = self.value(a);
        assert!(k > 0 && src.rows % k == 0, "max_groups: rows not divisible by k");
        let cols = src.cols;
        let n = src.rows / k;
        let mut out = Mat::zeros(n, cols);
        let mut arg = vec![0u32; n * cols];
        for g in 0..n {
            let base = g * k;
            out.row_mut(g).copy_from_slice(src.row(base));
            arg[g * cols..(g + 1) * cols].fill(base as u32);
            for r in 1..k {
                let row = src.row(base + r);
                for c in 0..cols {
                    if row[c] > out.data[g * cols + c] {
                        out.data[g * cols + c] = row[c];
                        arg[g * cols + c] = (base + r) as u32;
                    }
                }
            }
        }
        self.push(out, Op::MaxGroups(a, arg))
    }

    /// Normalizes each row to zero mean and unit variance.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let cols = out.cols;
        let mut inv = Vec::with_capacity(out.rows);
        if cols > 0 {
            for row in out.data.chunks_exact_mut(cols) {
                let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / cols as f64;
                let is = 1.0 / (var + NORM_EPS).sqrt();
                for v in row.iter_mut() {
                    *v = S::lift((v.as_f64() - mean) * is);
                }
                inv.push(is);
            }
        }
        self.push(out, Op::LayerNormRows(a, inv))
    }

    /// Normalizes each column over the rows (statistics across points).
    pub fn normalize_cols(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let (rows, cols) = (src.rows, src.cols);
        let mut mean = vec![0.0f64; cols];
        let mut var = vec![0.0f64; cols];
        for row in src.data.chunks_exact(cols.max(1)) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows.max(1) as f64);
        for row in src.data.chunks_exact(cols.max(1)) {
            for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v.as_f64() - m).powi(2);
            }
        }
        let inv: Vec<f64> = var
            .iter()
            .map(|s| 1.0 / (s / rows.max(1) as f64 + NORM_EPS).sqrt())
            .collect();
        let mut out = src.clone();
        for row in out.data.chunks_exact_mut(cols.max(1)) {
            for ((v, m), is) in row.iter_mut().zip(&mean).zip(&inv) {
                *v = S::lift((v.as_f64() - m) * is);
            }
        }
        self.push(out, Op::NormalizeCols(a, inv))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut out = Mat::zeros(src.cols, src.rows);
        for r in 0..src.rows {
            for c in 0..src.cols {
                out.data[c * src.rows + r] = src.data[r * src.cols + c];
            }
        }
        self.push(out, Op::Transpose(a))
    }

    /// Selects rows by index: `out[r] = a[idx[r]]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a);
        let cols = src.cols;
        let mut out = Mat::zeros(idx.len(), cols);
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < src.rows, "gather_rows index out of range");
            out.row_mut(r).copy_from_slice(src.row(i));
        }
        let idx = idx.iter().map(|&i| i as u32).collect();
        self.push(out, Op::GatherRows(a, idx))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.rows, y.rows, "concat_cols row count");
        let cols = x.cols + y.cols;
        let mut data = Vec::with_capacity(x.rows * cols);
        for r in 0..x.rows {
            data.extend_from_slice(x.row(r));
            data.extend_from_slice(y.row(r));
        }
        let out = Mat::from_vec(x.rows, cols, data);
        self.push(out, Op::ConcatCols(a, b))
    }

    /// Sum across columns: `[r x c] -> [r x 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let data = (0..src.rows)
            .map(|r| S::lift(src.row(r).iter().map(|v| v.as_f64()).sum()))
            .collect();
        let out = Mat::from_vec(src.rows, 1, data);
        self.push(out, Op::SumCols(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data.iter().map(|v| v.as_f64()).sum();
        self.push(Mat::from_vec(1, 1, vec![S::lift(s)]), Op::SumAll(a))
    }

    /// `x * w + b` for a `[in x out]` weight and `[1 x out]` bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul(x, w);
        match b {
            Some(b) => self.add_row(y, b),
            None => y,
        }
    }

    /// Gradient of the last `backward` call with respect to `v`, if reached.
    pub fn grad(&self, v: Var) -> Option<&Mat<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Parameters bound in this graph, in binding order.
    pub fn bound_params(&self) -> &[(String, Var)] {
        &self.param_order
    }

    /// Adds `scale * dL/dw` for every bound parameter into the store's
    /// gradient slots.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore, scale: f64) -> Result<()> {
        for (name, v) in &self.param_order {
            if let Some(g) = self.grad(*v) {
                store.accumulate_grad(name, g.data.iter().map(|x| x.as_f64() * scale))?;
            }
        }
        Ok(())
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&mut self, out: Var) {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat<S>>> = (0..n).map(|_| None).collect();
        grads[out.0] = Some(Mat::from_vec(1, 1, vec![S::one()]));
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
    }

    fn backprop_node(&self, i: usize, g: &Mat<S>, grads: &mut [Option<Mat<S>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul { a, b, ta, tb } => {
                let va = val(*a).view().t_if(*ta);
                let vb = val(*b).view().t_if(*tb);
                let gv = g.view();
                {
                    let ga = slot(grads, *a, val(*a));
                    // d op(a) = g * op(b)^T
                    gemm_acc(gv, vb.t_if(true), ga, *ta);
                }
                {
                    let gb = slot(grads, *b, val(*b));
                    // d op(b) = op(a)^T * g
                    gemm_acc(va.t_if(true), gv, gb, *tb);
                }
            }
            Op::Add(a, b) => {
                axpy(slot(grads, *a, val(*a)), g, S::one());
                axpy(slot(grads, *b, val(*b)), g, S::one());
            }
            Op::Sub(a, b) => {
                axpy(slot(grads, *a, val(*a)), g, S::one());
                axpy(slot(grads, *b, val(*b)), g, -S::one());
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                let ga = slot(grads, *a, xa);
                for ((o, &gi), &bi) in ga.data.iter_mut().zip(&g.data).zip(&xb.data) {
                    *o += gi * bi;
                }
                let gb = slot(grads, *b, xb);
                for ((o, &gi), &ai) in gb.data.iter_mut().zip(&g.data).zip(&xa.data) {
                    *o += gi * ai;
                }
            }
            Op::AddRow(a, r) => {
                axpy(slot(grads, *a, val(*a)), g, S::one());
                let cols = g.cols;
                let mut acc = vec![0.0f64; cols];
                for row in g.data.chunks_exact(cols.max(1)) {
                    for (s, &v) in acc.iter_mut().zip(row) {
                        *s += v.as_f64();
                    }
                }
                let gr = slot(grads, *r, val(*r));
                for (o, s) in gr.data.iter_mut().zip(acc) {
                    *o += S::lift(s);
                }
            }
            Op::MulRow(a, r) => {
                let (xa, xr) = (val(*a), val(*r));
                let cols = g.cols.max(1);
                let ga = slot(grads, *a, xa);
                for (grow, orow) in g.data.chunks_exact(cols).zip(ga.data.chunks_exact_mut(cols)) {
                    for ((o, &gi), &ri) in orow.iter_mut().zip(grow).zip(&xr.data) {
                        *o += gi * ri;
                    }
                }
                let mut acc = vec![0.0f64; g.cols];
                for (grow, arow) in g.data.chunks_exact(cols).zip(xa.data.chunks_exact(cols)) {
                    for ((s, &gi), &ai) in acc.iter_mut().zip(grow).zip(arow) {
                        *s += (gi * ai).as_f64();
                    }
                }
                let gr = slot(grads, *r, xr);
                for (o, s) in gr.data.iter_mut().zip(acc) {
                    *o += S::lift(s);
                }
            }
            Op::Scale(a, c) => axpy(slot(grads, *a, val(*a)), g, S::lift(*c)),
            Op::AddScalar(a) => axpy(slot(grads, *a, val(*a)), g, S::one()),
            Op::Relu(a) => {
                let ga = slot(grads, *a, val(*a));
                for ((o, &gi), &yi) in ga.data.iter_mut().zip(&g.data).zip(&y.data) {
                    if yi > S::zero() {
                        *o += gi;
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let s = S::lift(*slope);
                let x = val(*a);
                let ga = slot(grads, *a, x);
                for ((o, &gi), &xi) in ga.data.iter_mut().zip(&g.data).zip(&x.data) {
                    *o += if xi > S::zero() { gi } else { gi * s };
                }
            }
            Op::Abs(a) => {
                let x = val(*a);
                let ga = slot(grads, *a, x);
                for ((o, &gi), &xi) in ga.data.iter_mut().zip(&g.data).zip(&x.data) {
                    if xi > S::zero() {
                        *o += gi;
                    } else if xi < S::zero() {
                        *o -= gi;
                    }
                }
            }
            Op::PowScalar(a, q) => {
                let x = val(*a);
                let qs = S::lift(*q);
                let ga = slot(grads, *a, x);
                for (((o, &gi), &xi), &yi) in ga.data.iter_mut().zip(&g.data).zip(&x.data).zip(&y.data) {
                    // d x^q = q x^q / x
                    *o += gi * qs * yi / xi;
                }
            }
            Op::SoftmaxRows(a) => {
                let cols = y.cols.max(1);
                let ga = slot(grads, *a, val(*a));
                for ((yr, gr), or) in y
                    .data
                    .chunks_exact(cols)
                    .zip(g.data.chunks_exact(cols))
                    .zip(ga.data.chunks_exact_mut(cols))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(&p, &q)| (p * q).as_f64()).sum();
                    let dot = S::lift(dot);
                    for ((o, &yi), &gi) in or.iter_mut().zip(yr).zip(gr) {
                        *o += yi * (gi - dot);
                    }
                }
            }
            Op::SoftmaxGroups(a, k) => {
                let (k, cols) = (*k, y.cols);
                let ga = slot(grads, *a, val(*a));
                let mut dot = vec![0.0f64; cols];
                for grp in 0..y.rows / k {
                    dot.fill(0.0);
                    for r in grp * k..(grp + 1) * k {
                        for (c, d) in dot.iter_mut().enumerate() {
                            *d += (y.at(r, c) * g.at(r, c)).as_f64();
                        }
                    }
                    for r in grp * k..(grp + 1) * k {
                        for (c, d) in dot.iter().enumerate() {
                            ga.data[r * cols + c] += y.at(r, c) * (g.at(r, c) - S::lift(*d));
                        }
                    }
                }
            }
            Op::SumGroups(a, k) => {
                let ga = slot(grads, *a, val(*a));
                let cols = g.cols;
                for r in 0..ga.rows {
                    let src = &g.data[(r / k) * cols..(r / k + 1) * cols];
                    for (o, &v) in ga.row_mut(r).iter_mut().zip(src) {
                        *o += v;
                    }
                }
            }
            Op::MaxGroups(a, arg) => {
                let ga = slot(grads, *a, val(*a));
                let cols = g.cols;
                for (j, (&gi, &src_row)) in g.data.iter().zip(arg).enumerate() {
                    ga.data[src_row as usize * cols + j % cols] += gi;
                }
            }
            Op::LayerNormRows(a, inv) => {
                let cols = y.cols.max(1);
                let n = y.cols as f64;
                let ga = slot(grads, *a, val(*a));
                for (((yr, gr), or), &is) in y
                    .data
                    .chunks_exact(cols)
                    .zip(g.data.chunks_exact(cols))
                    .zip(ga.data.chunks_exact_mut(cols))
                    .zip(inv)
                {
                    let mg = gr.iter().map(|v| v.as_f64()).sum::<f64>() / n;
                    let mgy = yr.iter().zip(gr).map(|(&p, &q)| (p * q).as_f64()).sum::<f64>() / n;
                    for ((o, &yi), &gi) in or.iter_mut().zip(yr).zip(gr) {
                        *o += S::lift(is * (gi.as_f64() - mg - yi.as_f64() * mgy));
                    }
                }
            }
            Op::NormalizeCols(a, inv) => {
                let (rows, cols) = (y.rows, y.cols);
                let n = rows as f64;
                let mut mg = vec![0.0f64; cols];
                let mut mgy = vec![0.0f64; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let gi = g.at(r, c).as_f64();
                        mg[c] += gi;
                        mgy[c] += gi * y.at(r, c).as_f64();
                    }
                }
                let ga = slot(grads, *a, val(*a));
                for r in 0..rows {
                    for c in 0..cols {
                        let v = inv[c] * (g.at(r, c).as_f64() - mg[c] / n - y.at(r, c).as_f64() * mgy[c] / n);
                        ga.data[r * cols + c] += S::lift(v);
                    }
                }
            }
            Op::Transpose(a) => {
                let ga = slot(grads, *a, val(*a));
                let (rows, cols) = (g.rows, g.cols);
                for r in 0..rows {
                    for c in 0..cols {
                        ga.data[c * rows + r] += g.data[r * cols + c];
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                let ga = slot(grads, *a, val(*a));
                let cols = g.cols;
                for (r, &i) in idx.iter().enumerate() {
                    let src = &g.data[r * cols..(r + 1) * cols];
                    for (o, &v) in ga.row_mut(i as usize).iter_mut().zip(src) {
                        *o += v;
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols;
                {
                    let ga = slot(grads, *a, val(*a));
                    for r in 0..g.rows {
                        for (o, &v) in ga.row_mut(r).iter_mut().zip(&g.row(r)[..ca]) {
                            *o += v;
                        }
                    }
                }
                let gb = slot(grads, *b, val(*b));
                for r in 0..g.rows {
                    for (o, &v) in gb.row_mut(r).iter_mut().zip(&g.row(r)[ca..]) {
                        *o += v;
                    }
                }
            }
            Op::SumCols(a) => {
                let ga = slot(grads, *a, val(*a));
                for r in 0..ga.rows {
                    let gi = g.data[r];
                    for o in ga.row_mut(r) {
                        *o += gi;
                    }
                }
            }
            Op::SumAll(a) => {
                let gi = g.data[0];
                for o in slot(grads, *a, val(*a)).data.iter_mut() {
                    *o += gi;
                }
            }
        }
    }
}

fn slot<'a, S: Scalar>(grads: &'a mut [Option<Mat<S>>], v: Var, like: &Mat<S>) -> &'a mut Mat<S> {
    grads[v.0].get_or_insert_with(|| Mat::zeros(like.rows, like.cols))
}

fn axpy<S: Scalar>(dst: &mut Mat<S>, g: &Mat<S>, alpha: S) {
    for (o, &v) in dst.data.iter_mut().zip(&g.data) {
        *o += alpha * v;
    }
}

fn softmax_slice<S: Scalar>(row: &mut [S], exps: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let mut sum = 0.0;
    for (e, v) in exps.iter_mut().zip(row.iter()) {
        *e = (v.as_f64() - max).exp();
        sum += *e;
    }
    for (v, e) in row.iter_mut().zip(exps.iter()) {
        *v = S::lift(e / sum);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{RealArray, RngStream};

    fn rand_mat(rng: &mut RngStream, r: usize, c: usize) -> Mat<f64> {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect())
    }

    /// Central-difference check of d(sum(w ⊙ f(x)))/dx for one op.
    fn check_unary(build: impl Fn(&mut Graph<f64>, Var) -> Var, x: Mat<f64>) {
        let mut rng = RngStream::new(99);
        let probe = {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let y = build(&mut g, xv);
            let (r, c) = g.shape(y);
            rand_mat(&mut rng, r, c)
        };
        let eval = |xm: &Mat<f64>| -> (f64, Option<Mat<f64>>) {
            let mut g = Graph::new();
            let xv = g.input(xm.clone());
            let y = build(&mut g, xv);
            let p = g.input(probe.clone());
            let prod = g.mul(y, p);
            let s = g.sum_all(prod);
            g.backward(s);
            (g.scalar(s), g.grad(xv).cloned())
        };
        let (_, analytic) = eval(&x);
        let analytic = analytic.unwrap_or_else(|| Mat::zeros(x.rows, x.cols));
        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (eval(&xp).0 - eval(&xm).0) / (2.0 * h);
            let a = analytic.data[i];
            assert!((fd - a).abs() <= 1e-6 * (1.0 + fd.abs().max(a.abs())), "coord {i}: fd {fd} vs analytic {a}");
        }
    }

    #[test]
    fn elementwise_and_reduction_grads() {
        let mut rng = RngStream::new(1);
        let x = rand_mat(&mut rng, 6, 4);
        check_unary(|g, v| g.softmax_rows(v), x.clone());
        check_unary(|g, v| g.softmax_groups(v, 3), x.clone());
        check_unary(|g, v| g.sum_groups(v, 2), x.clone());
        check_unary(|g, v| g.max_groups(v, 3), x.clone());
        check_unary(|g, v| g.layer_norm_rows(v), x.clone());
        check_unary(|g, v| g.normalize_cols(v), x.clone());
        check_unary(|g, v| g.transpose(v), x.clone());
        check_unary(|g, v| g.gather_rows(v, &[0, 5, 5, 2]), x.clone());
        check_unary(|g, v| g.sum_cols(v), x.clone());
        check_unary(|g, v| g.leaky_relu(v, 0.2), x.clone());
        check_unary(|g, v| g.relu(v), x.clone());
        check_unary(|g, v| g.abs(v), x.clone());
        check_unary(
            |g, v| {
                let a = g.abs(v);
                let b = g.add_scalar(a, 0.01);
                g.pow_scalar(b, 0.4)
            },
            x.clone(),
        );
        check_unary(|g, v| g.concat_cols(v, v), x.clone());
        check_unary(
            |g, v| {
                let s = g.scale(v, -1.5);
                g.mul(s, v)
            },
            x,
        );
    }

    #[test]
    fn matmul_grads_all_transpose_modes() {
        let mut rng = RngStream::new(2);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let a_shape = if ta { (3, 4) } else { (4, 3) };
            let b_shape = if tb { (5, 3) } else { (3, 5) };
            let b = rand_mat(&mut rng, b_shape.0, b_shape.1);
            let a = rand_mat(&mut rng, a_shape.0, a_shape.1);
            let bb = b.clone();
            check_unary(
                move |g, v| {
                    let bv = g.input(bb.clone());
                    g.matmul_t(v, bv, ta, tb)
                },
                a.clone(),
            );
            let aa = a.clone();
            check_unary(
                move |g, v| {
                    let av = g.input(aa.clone());
                    g.matmul_t(av, v, ta, tb)
                },
                b,
            );
        }
    }

    #[test]
    fn row_broadcast_grads() {
        let mut rng = RngStream::new(4);
        let x = rand_mat(&mut rng, 5, 3);
        let r = rand_mat(&mut rng, 1, 3);
        let rr = r.clone();
        check_unary(
            move |g, v| {
                let rv = g.input(rr.clone());
                let a = g.add_row(v, rv);
                g.mul_row(a, rv)
            },
            x.clone(),
        );
        check_unary(
            move |g, v| {
                let xv = g.input(x.clone());
                let a = g.add_row(xv, v);
                g.mul_row(a, v)
            },
            r,
        );
    }

    #[test]
    fn param_binding_is_cached() {
        let mut store = ParamStore::new();
        store.insert("w", RealArray::zeros(&[2, 2])).unwrap();
        let mut g: Graph<f32> = Graph::new();
        let a = g.param(&store, "w").unwrap();
        let b = g.param(&store, "w").unwrap();
        assert_eq!(a, b);
        assert!(g.param(&store, "missing").is_err());
    }
}
