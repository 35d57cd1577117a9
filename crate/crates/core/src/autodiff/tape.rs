use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{Array2, Axis};

use crate::autodiff::params::{ParamId, ParameterStore};
use crate::error::{Error, Result};

/// A differentiable 2-D array. Cheap to clone; the payload is shared.
///
/// A value is *recorded* when it was produced by a tape operation while
/// recording was on. Only recorded values can seed a backward pass, and only
/// parameters ever receive gradients.
#[derive(Debug, Clone)]
pub struct Value {
    data: Rc<Array2<f64>>,
    src: Src,
}

#[derive(Debug, Clone)]
enum Src {
    Constant,
    Param(ParamId),
    Node { idx: usize, gen: u64 },
}

impl Value {
    /// Wraps a plain array; never receives gradients.
    pub fn constant(data: Array2<f64>) -> Self {
        Value {
            data: Rc::new(data),
            src: Src::Constant,
        }
    }

    pub fn scalar_const(x: f64) -> Self {
        Value::constant(Array2::from_elem((1, 1), x))
    }

    /// Wraps a parameter; gradients reaching it accumulate into the store.
    pub fn param(store: &ParameterStore, id: ParamId) -> Self {
        Value {
            data: store.value_rc(id),
            src: Src::Param(id),
        }
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    /// The single element of a 1x1 value.
    pub fn scalar(&self) -> f64 {
        debug_assert_eq!(self.data.dim(), (1, 1));
        self.data[[0, 0]]
    }

    pub fn is_recorded(&self) -> bool {
        matches!(self.src, Src::Node { .. })
    }
}

/// Position on the tape; nodes recorded after a mark can be freed while the
/// ones before it stay alive.
#[derive(Debug, Clone, Copy)]
pub struct TapeMark {
    len: usize,
}

#[derive(Debug, Clone)]
enum In {
    Node(usize),
    Param(ParamId),
    Const(Rc<Array2<f64>>),
}

#[derive(Debug)]
enum Op {
    MatMul { a: In, b: In },
    MatMulNt { a: In, b: In },
    Add { a: In, b: In },
    Sub { a: In, b: In },
    Mul { a: In, b: In },
    MulScalar { a: In, s: In },
    Scale { a: In, c: f64 },
    Transpose { a: In },
    ConcatCols { parts: Vec<(In, usize)> },
    SliceCols { a: In, start: usize, in_cols: usize },
    Reshape { a: In, from: (usize, usize) },
    SoftmaxMaskedRows { a: In, mask: Rc<Array2<bool>> },
    LeakyRelu { a: In, slope: f64 },
    Relu { a: In },
    Tanh { a: In },
    Sigmoid { a: In },
    Exp { a: In },
    Ln { a: In },
    MeanRows { a: In, rows: usize },
    SumAll { a: In, shape: (usize, usize) },
    GatherRows { a: In, idx: Rc<Vec<usize>>, in_rows: usize },
    Clamp { a: In, lo: f64, hi: f64 },
}

#[derive(Debug)]
struct Node {
    gen: u64,
    op: Op,
    out: Rc<Array2<f64>>,
    elems: usize,
}

#[derive(Debug, Default)]
struct TapeInner {
    nodes: Vec<Node>,
    next_gen: u64,
    recording: bool,
    live_elems: usize,
    peak_elems: usize,
}

impl TapeInner {
    fn push(&mut self, op: Op, out: Array2<f64>) -> (usize, u64, Rc<Array2<f64>>) {
        let elems = out.len();
        let out = Rc::new(out);
        let gen = self.next_gen;
        self.next_gen += 1;
        let idx = self.nodes.len();
        self.nodes.push(Node {
            gen,
            op,
            out: Rc::clone(&out),
            elems,
        });
        self.live_elems += elems;
        self.peak_elems = self.peak_elems.max(self.live_elems);
        (idx, gen, out)
    }

    fn truncate(&mut self, len: usize) {
        while self.nodes.len() > len {
            let node = self.nodes.pop().unwrap();
            self.live_elems -= node.elems;
        }
    }
}

/// Records primitive operations for reverse-mode differentiation.
///
/// Single-writer: one tape per worker. A fresh tape starts with recording
/// off; wrap forward passes in [`Tape::record_scope`] or call
/// [`Tape::set_recording`].
#[derive(Debug, Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

enum FreeMode {
    All,
    Above(TapeMark),
    Retain,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Runs `body` with recording forced to `enabled`; the previous state is
    /// restored afterwards (innermost scope wins).
    pub fn record_scope<R>(&self, enabled: bool, body: impl FnOnce() -> R) -> R {
        let prev = {
            let mut inner = self.inner.borrow_mut();
            std::mem::replace(&mut inner.recording, enabled)
        };
        let out = body();
        self.inner.borrow_mut().recording = prev;
        out
    }

    pub fn set_recording(&self, enabled: bool) {
        self.inner.borrow_mut().recording = enabled;
    }

    pub fn is_recording(&self) -> bool {
        self.inner.borrow().recording
    }

    /// Starts a retained-memory accounting epoch: the peak counter restarts
    /// from the currently live element count.
    pub fn begin_epoch(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.peak_elems = inner.live_elems;
    }

    /// Peak number of simultaneously retained tape elements since the last
    /// [`Tape::begin_epoch`].
    pub fn peak_retained(&self) -> usize {
        self.inner.borrow().peak_elems
    }

    /// Currently live tape elements.
    pub fn live_retained(&self) -> usize {
        self.inner.borrow().live_elems
    }

    /// Number of live nodes (unweighted).
    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn mark(&self) -> TapeMark {
        TapeMark {
            len: self.inner.borrow().nodes.len(),
        }
    }

    /// Frees every node.
    pub fn clear(&self) {
        self.inner.borrow_mut().truncate(0);
    }

    /// Frees the nodes recorded after `mark`.
    pub fn free_above(&self, mark: TapeMark) {
        self.inner.borrow_mut().truncate(mark.len);
    }

    // ---- op recording -----------------------------------------------------

    fn input_of(&self, v: &Value) -> In {
        match v.src {
            Src::Constant => In::Const(Rc::clone(&v.data)),
            Src::Param(id) => In::Param(id),
            Src::Node { idx, .. } => In::Node(idx),
        }
    }

    fn emit(&self, op_builder: impl FnOnce(&Self) -> Op, out: Array2<f64>) -> Value {
        let inner = self.inner.borrow_mut();
        if !inner.recording {
            return Value::constant(out);
        }
        drop(inner);
        let op = op_builder(self);
        let mut inner = self.inner.borrow_mut();
        let (idx, gen, data) = inner.push(op, out);
        Value {
            data,
            src: Src::Node { idx, gen },
        }
    }

    pub fn matmul(&self, a: &Value, b: &Value) -> Result<Value> {
        let (m, k) = a.dim();
        let (k2, n) = b.dim();
        if k != k2 {
            return Err(Error::Shape(format!("matmul ({m},{k}) x ({k2},{n})")));
        }
        let out = a.data().dot(b.data());
        Ok(self.emit(|t| Op::MatMul { a: t.input_of(a), b: t.input_of(b) }, out))
    }

    /// `a b^T` without materializing the transpose.
    pub fn matmul_nt(&self, a: &Value, b: &Value) -> Result<Value> {
        let (m, k) = a.dim();
        let (n, k2) = b.dim();
        if k != k2 {
            return Err(Error::Shape(format!("matmul_nt ({m},{k}) x ({n},{k2})^T")));
        }
        let out = a.data().dot(&b.data().t());
        Ok(self.emit(|t| Op::MatMulNt { a: t.input_of(a), b: t.input_of(b) }, out))
    }

    /// Elementwise sum. `b` may also be a (1, n) row or a (1, 1) scalar,
    /// broadcast over `a`.
    pub fn add(&self, a: &Value, b: &Value) -> Result<Value> {
        check_broadcast("add", a.dim(), b.dim())?;
        let out = a.data() + b.data();
        Ok(self.emit(|t| Op::Add { a: t.input_of(a), b: t.input_of(b) }, out))
    }

    /// Elementwise difference, with the same `b` broadcasts as [`Tape::add`].
    pub fn sub(&self, a: &Value, b: &Value) -> Result<Value> {
        check_broadcast("sub", a.dim(), b.dim())?;
        let out = a.data() - b.data();
        Ok(self.emit(|t| Op::Sub { a: t.input_of(a), b: t.input_of(b) }, out))
    }

    /// Hadamard product of same-shape values, or scaling by a (1, 1) value
    /// on either side.
    pub fn mul(&self, a: &Value, b: &Value) -> Result<Value> {
        if a.dim() == b.dim() && a.dim() != (1, 1) {
            let out = a.data() * b.data();
            return Ok(self.emit(|t| Op::Mul { a: t.input_of(a), b: t.input_of(b) }, out));
        }
        let (big, small) = if b.dim() == (1, 1) {
            (a, b)
        } else if a.dim() == (1, 1) {
            (b, a)
        } else {
            return Err(Error::Shape(format!(
                "mul {:?} x {:?}",
                a.dim(),
                b.dim()
            )));
        };
        let out = big.data() * small.scalar();
        Ok(self.emit(
            |t| Op::MulScalar { a: t.input_of(big), s: t.input_of(small) },
            out,
        ))
    }

    /// Multiplication by a plain constant.
    pub fn scale(&self, a: &Value, c: f64) -> Value {
        let out = a.data() * c;
        self.emit(|t| Op::Scale { a: t.input_of(a), c }, out)
    }

    pub fn neg(&self, a: &Value) -> Value {
        self.scale(a, -1.0)
    }

    pub fn transpose(&self, a: &Value) -> Value {
        let out = a.data().t().to_owned();
        self.emit(|t| Op::Transpose { a: t.input_of(a) }, out)
    }

    pub fn concat_cols(&self, parts: &[&Value]) -> Result<Value> {
        if parts.is_empty() {
            return Err(Error::Parameter("concat of zero parts".into()));
        }
        let rows = parts[0].dim().0;
        if parts.iter().any(|p| p.dim().0 != rows) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let total: usize = parts.iter().map(|p| p.dim().1).sum();
        let mut out = Array2::zeros((rows, total));
        let mut at = 0;
        for p in parts {
            let w = p.dim().1;
            out.slice_mut(ndarray::s![.., at..at + w]).assign(p.data());
            at += w;
        }
        Ok(self.emit(
            |t| Op::ConcatCols {
                parts: parts.iter().map(|p| (t.input_of(p), p.dim().1)).collect(),
            },
            out,
        ))
    }

    pub fn slice_cols(&self, a: &Value, range: std::ops::Range<usize>) -> Result<Value> {
        let (rows, cols) = a.dim();
        if range.end > cols || range.start >= range.end {
            return Err(Error::Shape(format!(
                "slice_cols {range:?} of ({rows},{cols})"
            )));
        }
        let out = a.data().slice(ndarray::s![.., range.clone()]).to_owned();
        Ok(self.emit(
            |t| Op::SliceCols { a: t.input_of(a), start: range.start, in_cols: cols },
            out,
        ))
    }

    pub fn reshape(&self, a: &Value, rows: usize, cols: usize) -> Result<Value> {
        let from = a.dim();
        if from.0 * from.1 != rows * cols {
            return Err(Error::Shape(format!(
                "reshape {:?} -> ({rows},{cols})",
                from
            )));
        }
        let out = a
            .data()
            .to_owned()
            .into_shape_with_order((rows, cols))
            .expect("element count checked");
        Ok(self.emit(|t| Op::Reshape { a: t.input_of(a), from }, out))
    }

    /// Row-wise softmax with excluded positions (`mask == true`) receiving
    /// exactly zero weight. A fully masked row is a degenerate-mask error.
    pub fn softmax_masked(&self, logits: &Value, mask: &Rc<Array2<bool>>) -> Result<Value> {
        let dim = logits.dim();
        if mask.dim() != dim {
            return Err(Error::Shape(format!(
                "mask {:?} vs logits {:?}",
                mask.dim(),
                dim
            )));
        }
        let mut out = Array2::zeros(dim);
        for r in 0..dim.0 {
            let mut max = f64::NEG_INFINITY;
            for c in 0..dim.1 {
                if !mask[[r, c]] {
                    max = max.max(logits.data()[[r, c]]);
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::DegenerateMask(format!(
                    "softmax row {r} has every position masked"
                )));
            }
            let mut sum = 0.0;
            for c in 0..dim.1 {
                if !mask[[r, c]] {
                    let e = (logits.data()[[r, c]] - max).exp();
                    out[[r, c]] = e;
                    sum += e;
                }
            }
            for c in 0..dim.1 {
                out[[r, c]] /= sum;
            }
        }
        Ok(self.emit(
            |t| Op::SoftmaxMaskedRows { a: t.input_of(logits), mask: Rc::clone(mask) },
            out,
        ))
    }

    pub fn leaky_relu(&self, a: &Value, slope: f64) -> Value {
        let out = a.data().mapv(|x| if x >= 0.0 { x } else { slope * x });
        self.emit(|t| Op::LeakyRelu { a: t.input_of(a), slope }, out)
    }

    pub fn relu(&self, a: &Value) -> Value {
        let out = a.data().mapv(|x| x.max(0.0));
        self.emit(|t| Op::Relu { a: t.input_of(a) }, out)
    }

    pub fn tanh(&self, a: &Value) -> Value {
        let out = a.data().mapv(f64::tanh);
        self.emit(|t| Op::Tanh { a: t.input_of(a) }, out)
    }

    pub fn sigmoid(&self, a: &Value) -> Value {
        let out = a.data().mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.emit(|t| Op::Sigmoid { a: t.input_of(a) }, out)
    }

    pub fn exp(&self, a: &Value) -> Value {
        let out = a.data().mapv(f64::exp);
        self.emit(|t| Op::Exp { a: t.input_of(a) }, out)
    }

    pub fn ln(&self, a: &Value) -> Value {
        let out = a.data().mapv(f64::ln);
        self.emit(|t| Op::Ln { a: t.input_of(a) }, out)
    }

    /// Mean over rows: (m, n) -> (1, n).
    pub fn mean_rows(&self, a: &Value) -> Value {
        let rows = a.dim().0;
        let out = a
            .data()
            .mean_axis(Axis(0))
            .expect("nonempty")
            .insert_axis(Axis(0));
        self.emit(|t| Op::MeanRows { a: t.input_of(a), rows }, out)
    }

    pub fn sum_all(&self, a: &Value) -> Value {
        let shape = a.dim();
        let out = Array2::from_elem((1, 1), a.data().sum());
        self.emit(|t| Op::SumAll { a: t.input_of(a), shape }, out)
    }

    /// Row selection: rows `idx` of `a`, in order (repeats allowed).
    pub fn gather_rows(&self, a: &Value, idx: &[usize]) -> Result<Value> {
        let (rows, cols) = a.dim();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape(format!("gather row {bad} of {rows}")));
        }
        let mut out = Array2::zeros((idx.len(), cols));
        for (k, &r) in idx.iter().enumerate() {
            out.row_mut(k).assign(&a.data().row(r));
        }
        let idx = Rc::new(idx.to_vec());
        Ok(self.emit(
            |t| Op::GatherRows { a: t.input_of(a), idx: Rc::clone(&idx), in_rows: rows },
            out,
        ))
    }

    pub fn clamp(&self, a: &Value, lo: f64, hi: f64) -> Value {
        let out = a.data().mapv(|x| x.clamp(lo, hi));
        self.emit(|t| Op::Clamp { a: t.input_of(a), lo, hi }, out)
    }

    // ---- backward ---------------------------------------------------------

    /// Backpropagates from a recorded scalar, accumulating `d root / d p`
    /// into every parameter's gradient slot, then frees the whole tape.
    pub fn backward(&self, root: &Value, store: &mut ParameterStore) -> Result<()> {
        self.backward_impl(root, store, FreeMode::All)
    }

    /// Backward pass that keeps the graph alive, so the same root can be
    /// backpropagated again (gradients keep accumulating).
    pub fn backward_retain(&self, root: &Value, store: &mut ParameterStore) -> Result<()> {
        self.backward_impl(root, store, FreeMode::Retain)
    }

    /// Backward pass that afterwards frees only the nodes recorded after
    /// `mark`, keeping the earlier subgraph for later steps.
    pub fn backward_free_above(
        &self,
        root: &Value,
        store: &mut ParameterStore,
        mark: TapeMark,
    ) -> Result<()> {
        self.backward_impl(root, store, FreeMode::Above(mark))
    }

    fn backward_impl(&self, root: &Value, store: &mut ParameterStore, free: FreeMode) -> Result<()> {
        let Src::Node { idx: root_idx, gen: root_gen } = root.src else {
            return Err(Error::Parameter(
                "backward root is not a recorded value".into(),
            ));
        };
        if root.dim() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward root must be scalar, got {:?}",
                root.dim()
            )));
        }
        let mut inner = self.inner.borrow_mut();
        if root_idx >= inner.nodes.len() || inner.nodes[root_idx].gen != root_gen {
            return Err(Error::Lifecycle(
                "backward on a value whose tape nodes were freed".into(),
            ));
        }

        let mut grads: Vec<Option<Array2<f64>>> = (0..=root_idx).map(|_| None).collect();
        grads[root_idx] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=root_idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &inner.nodes[i];
            match &node.op {
                Op::MatMul { a, b } => {
                    let av = resolve(&inner, store, a);
                    let bv = resolve(&inner, store, b);
                    let da = g.dot(&bv.t());
                    let db = av.t().dot(&g);
                    route(&mut grads, store, a, da);
                    route(&mut grads, store, b, db);
                }
                Op::MatMulNt { a, b } => {
                    let av = resolve(&inner, store, a);
                    let bv = resolve(&inner, store, b);
                    let da = g.dot(&*bv);
                    let db = g.t().dot(&*av);
                    route(&mut grads, store, a, da);
                    route(&mut grads, store, b, db);
                }
                Op::Add { a, b } => {
                    let db = reduce_to(&g, dim_of(&inner, store, b));
                    route(&mut grads, store, b, db);
                    route(&mut grads, store, a, g);
                }
                Op::Sub { a, b } => {
                    let db = reduce_to(&g, dim_of(&inner, store, b)).mapv(|x| -x);
                    route(&mut grads, store, b, db);
                    route(&mut grads, store, a, g);
                }
                Op::Mul { a, b } => {
                    let av = resolve(&inner, store, a);
                    let bv = resolve(&inner, store, b);
                    let da = &g * &*bv;
                    let db = &g * &*av;
                    route(&mut grads, store, a, da);
                    route(&mut grads, store, b, db);
                }
                Op::MulScalar { a, s } => {
                    let av = resolve(&inner, store, a);
                    let sv = resolve(&inner, store, s)[[0, 0]];
                    let ds = Array2::from_elem((1, 1), (&g * &*av).sum());
                    let da = &g * sv;
                    route(&mut grads, store, a, da);
                    route(&mut grads, store, s, ds);
                }
                Op::Scale { a, c } => {
                    route(&mut grads, store, a, &g * *c);
                }
                Op::Transpose { a } => {
                    route(&mut grads, store, a, g.t().to_owned());
                }
                Op::ConcatCols { parts } => {
                    let mut at = 0;
                    let parts = parts.clone();
                    for (input, w) in &parts {
                        let piece = g.slice(ndarray::s![.., at..at + w]).to_owned();
                        at += w;
                        route(&mut grads, store, input, piece);
                    }
                }
                Op::SliceCols { a, start, in_cols } => {
                    let mut da = Array2::zeros((g.dim().0, *in_cols));
                    da.slice_mut(ndarray::s![.., *start..*start + g.dim().1])
                        .assign(&g);
                    route(&mut grads, store, a, da);
                }
                Op::Reshape { a, from } => {
                    let da = g.into_shape_with_order(*from).expect("same element count");
                    route(&mut grads, store, a, da);
                }
                Op::SoftmaxMaskedRows { a, mask } => {
                    let p = Rc::clone(&node.out);
                    let mask = Rc::clone(mask);
                    let (rows, cols) = g.dim();
                    let mut da = Array2::zeros((rows, cols));
                    for r in 0..rows {
                        let mut dot = 0.0;
                        for c in 0..cols {
                            if !mask[[r, c]] {
                                dot += g[[r, c]] * p[[r, c]];
                            }
                        }
                        for c in 0..cols {
                            if !mask[[r, c]] {
                                da[[r, c]] = p[[r, c]] * (g[[r, c]] - dot);
                            }
                        }
                    }
                    route(&mut grads, store, a, da);
                }
                Op::LeakyRelu { a, slope } => {
                    let av = resolve(&inner, store, a);
                    let slope = *slope;
                    let da = ndarray::Zip::from(&g)
                        .and(&*av)
                        .map_collect(|&gv, &x| if x >= 0.0 { gv } else { slope * gv });
                    route(&mut grads, store, a, da);
                }
                Op::Relu { a } => {
                    let av = resolve(&inner, store, a);
                    let da = ndarray::Zip::from(&g)
                        .and(&*av)
                        .map_collect(|&gv, &x| if x > 0.0 { gv } else { 0.0 });
                    route(&mut grads, store, a, da);
                }
                Op::Tanh { a } => {
                    let out = Rc::clone(&node.out);
                    let da = ndarray::Zip::from(&g)
                        .and(&*out)
                        .map_collect(|&gv, &y| gv * (1.0 - y * y));
                    route(&mut grads, store, a, da);
                }
                Op::Sigmoid { a } => {
                    let out = Rc::clone(&node.out);
                    let da = ndarray::Zip::from(&g)
                        .and(&*out)
                        .map_collect(|&gv, &y| gv * y * (1.0 - y));
                    route(&mut grads, store, a, da);
                }
                Op::Exp { a } => {
                    let out = Rc::clone(&node.out);
                    let da = &g * &*out;
                    route(&mut grads, store, a, da);
                }
                Op::Ln { a } => {
                    let av = resolve(&inner, store, a);
                    let da = &g / &*av;
                    route(&mut grads, store, a, da);
                }
                Op::MeanRows { a, rows } => {
                    let rows = *rows;
                    let row = &g / rows as f64;
                    let mut da = Array2::zeros((rows, g.dim().1));
                    for r in 0..rows {
                        da.row_mut(r).assign(&row.row(0));
                    }
                    route(&mut grads, store, a, da);
                }
                Op::SumAll { a, shape } => {
                    let da = Array2::from_elem(*shape, g[[0, 0]]);
                    route(&mut grads, store, a, da);
                }
                Op::GatherRows { a, idx, in_rows } => {
                    let mut da = Array2::zeros((*in_rows, g.dim().1));
                    for (k, &r) in idx.iter().enumerate() {
                        let mut row = da.row_mut(r);
                        row += &g.row(k);
                    }
                    route(&mut grads, store, a, da);
                }
                Op::Clamp { a, lo, hi } => {
                    let av = resolve(&inner, store, a);
                    let (lo, hi) = (*lo, *hi);
                    let da = ndarray::Zip::from(&g)
                        .and(&*av)
                        .map_collect(|&gv, &x| if x > lo && x < hi { gv } else { 0.0 });
                    route(&mut grads, store, a, da);
                }
            }
        }

        match free {
            FreeMode::All => inner.truncate(0),
            FreeMode::Above(mark) => inner.truncate(mark.len),
            FreeMode::Retain => {}
        }
        Ok(())
    }
}

fn dim_of(inner: &TapeInner, store: &ParameterStore, input: &In) -> (usize, usize) {
    match input {
        In::Node(i) => inner.nodes[*i].out.dim(),
        In::Param(id) => store.value(*id).dim(),
        In::Const(d) => d.dim(),
    }
}

fn resolve(inner: &TapeInner, store: &ParameterStore, input: &In) -> Rc<Array2<f64>> {
    match input {
        In::Node(i) => Rc::clone(&inner.nodes[*i].out),
        In::Param(id) => store.value_rc(*id),
        In::Const(d) => Rc::clone(d),
    }
}

/// Sums an upstream gradient down to the shape of a broadcast input.
fn reduce_to(g: &Array2<f64>, dim: (usize, usize)) -> Array2<f64> {
    if g.dim() == dim {
        return g.clone();
    }
    if dim == (1, 1) {
        return Array2::from_elem((1, 1), g.sum());
    }
    // (1, n) row broadcast over (m, n)
    g.sum_axis(Axis(0)).insert_axis(Axis(0))
}

fn route(
    grads: &mut [Option<Array2<f64>>],
    store: &mut ParameterStore,
    input: &In,
    delta: Array2<f64>,
) {
    match input {
        In::Node(i) => match &mut grads[*i] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        },
        In::Param(id) => store.grad_add(*id, &delta),
        In::Const(_) => {}
    }
}

fn check_broadcast(op: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    let ok = a == b || b == (1, 1) || (b.0 == 1 && b.1 == a.1);
    if ok {
        Ok(())
    } else {
        Err(Error::Shape(format!("{op} {a:?} with {b:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store_with(v: Array2<f64>) -> (ParameterStore, ParamId) {
        let mut store = ParameterStore::new();
        let id = store.add("p", v).unwrap();
        (store, id)
    }

    #[test]
    fn square_gradient() {
        let (mut store, id) = store_with(array![[3.0]]);
        let tape = Tape::new();
        tape.set_recording(true);
        let p = Value::param(&store, id);
        let y = tape.mul(&p, &p).unwrap();
        tape.backward(&y, &mut store).unwrap();
        assert_eq!(store.grad(id), &array![[6.0]]);
    }

    #[test]
    fn successive_backwards_accumulate() {
        let (mut store, id) = store_with(array![[3.0]]);
        let tape = Tape::new();
        tape.set_recording(true);
        let p = Value::param(&store, id);
        let y = tape.mul(&p, &p).unwrap();
        tape.backward_retain(&y, &mut store).unwrap();
        tape.backward_retain(&y, &mut store).unwrap();
        assert_eq!(store.grad(id), &array![[12.0]]);
    }

    #[test]
    fn k_backwards_scale_linearly() {
        let (mut store, id) = store_with(array![[1.25, -0.5], [0.75, 2.0]]);
        let tape = Tape::new();
        tape.set_recording(true);
        let p = Value::param(&store, id);
        let y = tape.sum_all(&tape.tanh(&tape.matmul(&p, &tape.transpose(&p)).unwrap()));
        tape.backward_retain(&y, &mut store).unwrap();
        let single = store.flat_grads();

        // Doubling is exact in binary floating point.
        tape.backward_retain(&y, &mut store).unwrap();
        let double = store.flat_grads();
        for (s, d) in single.iter().zip(&double) {
            assert_eq!(*d, s * 2.0, "bitwise 2x accumulation expected");
        }

        for _ in 0..3 {
            tape.backward_retain(&y, &mut store).unwrap();
        }
        let five = store.flat_grads();
        for (s, f) in single.iter().zip(&five) {
            let expect = s * 5.0;
            assert!(
                (f - expect).abs() <= 4.0 * f64::EPSILON * expect.abs(),
                "5x accumulation within rounding: {f} vs {expect}"
            );
        }

        // Identical op order reproduces the accumulated gradient bitwise.
        let mut store2 = store.clone();
        store2.zero_grads();
        for _ in 0..5 {
            tape.backward_retain(&y, &mut store2).unwrap();
        }
        assert_eq!(store.flat_grads(), store2.flat_grads());
    }

    #[test]
    fn backward_after_free_is_lifecycle_error() {
        let (mut store, id) = store_with(array![[2.0]]);
        let tape = Tape::new();
        tape.set_recording(true);
        let p = Value::param(&store, id);
        let y = tape.mul(&p, &p).unwrap();
        tape.backward(&y, &mut store).unwrap();
        assert!(matches!(
            tape.backward(&y, &mut store),
            Err(Error::Lifecycle(_))
        ));
    }

    #[test]
    fn non_scalar_root_is_shape_error() {
        let (mut store, id) = store_with(array![[1.0, 2.0]]);
        let tape = Tape::new();
        tape.set_recording(true);
        let p = Value::param(&store, id);
        let y = tape.scale(&p, 2.0);
        assert!(matches!(tape.backward(&y, &mut store), Err(Error::Shape(_))));
    }

    #[test]
    fn record_scope_controls_node_creation() {
        let (store, id) = store_with(array![[2.0]]);
        let tape = Tape::new();
        let p = Value::param(&store, id);

        tape.begin_epoch();
        let off = tape.record_scope(false, || tape.mul(&p, &p).unwrap());
        assert!(!off.is_recorded());
        assert_eq!(tape.peak_retained(), 0);

        tape.record_scope(true, || {
            let a = tape.mul(&p, &p).unwrap();
            let b = tape.add(&a, &p).unwrap();
            let _c = tape.scale(&b, 0.5);
        });
        assert_eq!(tape.node_count(), 3);
        assert_eq!(tape.peak_retained(), 3); // three scalar ops

        // nested: innermost wins
        tape.clear();
        tape.record_scope(true, || {
            let _a = tape.mul(&p, &p).unwrap();
            tape.record_scope(false, || {
                let inner = tape.mul(&p, &p).unwrap();
                assert!(!inner.is_recorded());
            });
        });
        assert_eq!(tape.node_count(), 1);
    }

    #[test]
    fn peak_is_monotone_within_epoch_and_survives_frees() {
        let (mut store, id) = store_with(array![[1.0, 2.0], [3.0, 4.0]]);
        let tape = Tape::new();
        tape.set_recording(true);
        tape.begin_epoch();
        let p = Value::param(&store, id);
        let a = tape.mul(&p, &p).unwrap(); // 4 elems
        let b = tape.sum_all(&a); // 1 elem
        assert_eq!(tape.peak_retained(), 5);
        tape.backward(&b, &mut store).unwrap(); // frees all
        assert_eq!(tape.live_retained(), 0);
        assert_eq!(tape.peak_retained(), 5);
    }

    #[test]
    fn free_above_mark_keeps_earlier_subgraph() {
        let (mut store, id) = store_with(array![[0.5]]);
        let tape = Tape::new();
        tape.set_recording(true);
        let p = Value::param(&store, id);
        let base = tape.mul(&p, &p).unwrap(); // stays alive
        let mark = tape.mark();

        for _ in 0..3 {
            let step = tape.mul(&base, &p).unwrap(); // p^3
            tape.backward_free_above(&step, &mut store, mark).unwrap();
            assert_eq!(tape.node_count(), 1);
        }
        // d(p^3)/dp = 3 p^2 = 0.75 per step, accumulated 3 times
        assert!((store.grad(id)[[0, 0]] - 2.25).abs() < 1e-12);
    }

    #[test]
    fn degenerate_mask_is_an_error() {
        let tape = Tape::new();
        tape.set_recording(true);
        let logits = Value::constant(array![[1.0, 2.0]]);
        let mask = Rc::new(array![[true, true]]);
        assert!(matches!(
            tape.softmax_masked(&logits, &mask),
            Err(Error::DegenerateMask(_))
        ));
    }

    #[test]
    fn masked_softmax_rows_sum_to_one_with_zero_masked_weight() {
        let tape = Tape::new();
        let logits = Value::constant(array![[1.0, -2.0, 0.3, 4.0], [0.0, 0.0, 0.0, 0.0]]);
        let mask = Rc::new(array![
            [false, true, false, false],
            [true, false, false, true]
        ]);
        let p = tape.softmax_masked(&logits, &mask).unwrap();
        for r in 0..2 {
            let row: f64 = p.data().row(r).sum();
            assert!((row - 1.0).abs() < 1e-12);
        }
        assert_eq!(p.data()[[0, 1]], 0.0);
        assert_eq!(p.data()[[1, 0]], 0.0);
        assert_eq!(p.data()[[1, 3]], 0.0);
        assert_eq!(p.data()[[1, 1]], 0.5);
    }

    #[test]
    fn constants_never_receive_gradients() {
        let (mut store, id) = store_with(array![[2.0]]);
        let tape = Tape::new();
        tape.set_recording(true);
        let p = Value::param(&store, id);
        let c = Value::scalar_const(5.0);
        let y = tape.mul(&p, &c).unwrap();
        tape.backward(&y, &mut store).unwrap();
        assert_eq!(store.grad(id), &array![[5.0]]);
    }
}
