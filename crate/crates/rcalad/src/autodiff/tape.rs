//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! Forward evaluation is eager: recording an op also computes its value, so
//! tape nodes double as the forward cache. `backward` walks the tape once in
//! reverse, which is a valid reverse-topological order because an op can only
//! reference earlier nodes.
//!
//! Leaves come in two kinds. `param` leaves want gradients; `constant` leaves
//! do not, and whole subgraphs that depend only on constants are skipped
//! during the backward sweep. The trainer leans on this to run the same
//! forward code for both halves of an adversarial step while only paying for
//! the gradients it needs.

use crate::autodiff::kernels::gemm;
use crate::autodiff::rng::RngStream;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a node on a [`Tape`].
pub type NodeId = usize;

/// Pointwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    /// Leaky rectifier with the given negative-side slope.
    LRelu(f64),
    Relu,
    Tanh,
    Sigmoid,
    /// Identity, used for linear output layers.
    None,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::LRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::None => x,
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn deriv(&self, x: f64, y: f64) -> f64 {
        match *self {
            Activation::LRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::None => 1.0,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `op(a) [m,k] * op(b) [k,n]`; a flag means the buffer stores the
    /// transpose of the logical operand.
    Matmul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// `[n,d] + [1,d]` with the row broadcast down the batch.
    AddRow { x: NodeId, r: NodeId },
    /// `[n,d] * [1,d]` elementwise per row.
    MulRow { x: NodeId, r: NodeId },
    /// Elementwise multiply by a `[1,1]` node.
    MulScalar { x: NodeId, s: NodeId },
    Scale { x: NodeId, c: f64 },
    // The constant is captured at forward time; kept here for Debug output.
    AddConst {
        x: NodeId,
        #[allow(dead_code)]
        c: f64,
    },
    MaxConst { x: NodeId, c: f64 },
    Recip { x: NodeId },
    Sqrt { x: NodeId },
    Ln { x: NodeId },
    Clamp { x: NodeId, lo: f64, hi: f64 },
    Act { x: NodeId, kind: Activation },
    /// Column-wise concatenation; all parts share a row count.
    Concat { parts: Vec<NodeId> },
    /// Column means, `[n,d] -> [1,d]`.
    MeanRows { x: NodeId },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    requires: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by leaf node id.
pub struct Grads {
    g: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient for a leaf, if it required one and was reachable from the root.
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.g.get(id).and_then(|o| o.as_deref())
    }
}

/// Recording tape. Create one per training step and drop it afterwards.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        [self.nodes[id].rows, self.nodes[id].cols]
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].data
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id].requires
    }

    /// Copies a node's value out as a tensor tagged with its id.
    pub fn to_tensor(&self, id: NodeId) -> Tensor {
        let n = &self.nodes[id];
        let mut t = Tensor::new([n.rows, n.cols], n.data.clone()).expect("node shape is valid");
        t.node = Some(id);
        t
    }

    /// Registers a leaf that wants a gradient.
    pub fn param(&mut self, t: &Tensor) -> NodeId {
        self.push(Op::Leaf, t.shape(), t.data().to_vec(), true)
    }

    /// Registers a leaf that is treated as a constant.
    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        self.push(Op::Leaf, t.shape(), t.data().to_vec(), false)
    }

    /// Constant leaf built from a raw buffer.
    pub fn constant_from(&mut self, shape: [usize; 2], data: Vec<f64>) -> Result<NodeId> {
        if shape[0] * shape[1] != data.len() {
            return Err(Error::Invalid(format!(
                "constant shape {:?} needs {} values, got {}",
                shape,
                shape[0] * shape[1],
                data.len()
            )));
        }
        Ok(self.push(Op::Leaf, shape, data, false))
    }

    fn push(&mut self, op: Op, shape: [usize; 2], data: Vec<f64>, requires: bool) -> NodeId {
        debug_assert_eq!(shape[0] * shape[1], data.len());
        self.nodes.push(Node {
            op,
            rows: shape[0],
            cols: shape[1],
            data,
            requires,
        });
        self.nodes.len() - 1
    }

    fn shape_err(&self, op: &'static str, a: NodeId, b: NodeId) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    /// `a * b` with both operands stored plainly.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) * op(b)` where a set flag treats the buffer as transposed.
    pub fn matmul_t(&mut self, a: NodeId, ta: bool, b: NodeId, tb: bool) -> Result<NodeId> {
        let [ar, ac] = self.shape(a);
        let [br, bc] = self.shape(b);
        let (m, ka) = if ta { (ac, ar) } else { (ar, ac) };
        let (kb, n) = if tb { (bc, br) } else { (br, bc) };
        if ka != kb {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            ka,
            n,
            1.0,
            &self.nodes[a].data,
            ta,
            &self.nodes[b].data,
            tb,
            0.0,
            &mut out,
        );
        let req = self.nodes[a].requires || self.nodes[b].requires;
        Ok(self.push(Op::Matmul { a, b, ta, tb }, [m, n], out, req))
    }

    fn zip_elementwise(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err(name, a, b));
        }
        let out: Vec<f64> = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let req = self.nodes[a].requires || self.nodes[b].requires;
        let shape = self.shape(a);
        Ok(self.push(op, shape, out, req))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn rowwise(
        &mut self,
        name: &'static str,
        x: NodeId,
        r: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let [n, d] = self.shape(x);
        if self.shape(r) != [1, d] {
            return Err(self.shape_err(name, x, r));
        }
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] = f(self.nodes[x].data[i * d + j], self.nodes[r].data[j]);
            }
        }
        let req = self.nodes[x].requires || self.nodes[r].requires;
        Ok(self.push(op, [n, d], out, req))
    }

    /// Adds a `[1, d]` row to every row of `[n, d]`.
    pub fn add_row(&mut self, x: NodeId, r: NodeId) -> Result<NodeId> {
        self.rowwise("add_row", x, r, |a, b| a + b, Op::AddRow { x, r })
    }

    /// Multiplies every row of `[n, d]` by a `[1, d]` row.
    pub fn mul_row(&mut self, x: NodeId, r: NodeId) -> Result<NodeId> {
        self.rowwise("mul_row", x, r, |a, b| a * b, Op::MulRow { x, r })
    }

    /// Multiplies a tensor by a `[1, 1]` node.
    pub fn mul_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.shape(s) != [1, 1] {
            return Err(self.shape_err("mul_scalar", x, s));
        }
        let sv = self.nodes[s].data[0];
        let out: Vec<f64> = self.nodes[x].data.iter().map(|&v| v * sv).collect();
        let req = self.nodes[x].requires || self.nodes[s].requires;
        let shape = self.shape(x);
        Ok(self.push(Op::MulScalar { x, s }, shape, out, req))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let out: Vec<f64> = self.nodes[x].data.iter().map(|&v| f(v)).collect();
        let req = self.nodes[x].requires;
        let shape = self.shape(x);
        self.push(op, shape, out, req)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |v| v * c, Op::Scale { x, c })
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |v| v + c, Op::AddConst { x, c })
    }

    /// Elementwise `max(x, c)`; the gradient is zero at and below the floor.
    pub fn max_const(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |v| v.max(c), Op::MaxConst { x, c })
    }

    pub fn recip(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| 1.0 / v, Op::Recip { x })
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.sqrt(), Op::Sqrt { x })
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.ln(), Op::Ln { x })
    }

    /// Clamps into `[lo, hi]`; the gradient passes only strictly inside.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn activation(&mut self, kind: Activation, x: NodeId) -> NodeId {
        self.unary(x, |v| kind.apply(v), Op::Act { x, kind })
    }

    /// Concatenates along columns. All parts must share a row count.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat of zero tensors".into()));
        }
        if parts.len() == 1 {
            // Identity; reuse the node rather than copying.
            return Ok(parts[0]);
        }
        let n = self.nodes[parts[0]].rows;
        for &p in parts {
            if self.nodes[p].rows != n {
                return Err(self.shape_err("concat", parts[0], p));
            }
        }
        let total: usize = parts.iter().map(|&p| self.nodes[p].cols).sum();
        let mut out = vec![0.0; n * total];
        for i in 0..n {
            let mut off = 0;
            for &p in parts {
                let d = self.nodes[p].cols;
                out[i * total + off..i * total + off + d]
                    .copy_from_slice(&self.nodes[p].data[i * d..(i + 1) * d]);
                off += d;
            }
        }
        let req = parts.iter().any(|&p| self.nodes[p].requires);
        Ok(self.push(Op::Concat { parts: parts.to_vec() }, [n, total], out, req))
    }

    /// Column means: `[n, d] -> [1, d]`.
    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let [n, d] = self.shape(x);
        let mut out = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                out[j] += self.nodes[x].data[i * d + j];
            }
        }
        for v in &mut out {
            *v /= n as f64;
        }
        let req = self.nodes[x].requires;
        self.push(Op::MeanRows { x }, [1, d], out, req)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x].data.iter().sum();
        let req = self.nodes[x].requires;
        self.push(Op::SumAll { x }, [1, 1], vec![s], req)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x].data.len();
        let s: f64 = self.nodes[x].data.iter().sum();
        let req = self.nodes[x].requires;
        self.push(Op::MeanAll { x }, [1, 1], vec![s / n as f64], req)
    }

    /// `x * w + b` for `x: [n, in]`, `w: [in, out]`, `b: [1, out]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)` so the
    /// expected activation is unchanged and inference needs no rescaling.
    /// A rate of exactly 1.0 zeroes everything out.
    pub fn dropout(&mut self, x: NodeId, rate: f64, rng: &mut RngStream) -> Result<NodeId> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Invalid(format!("dropout rate {rate} outside [0, 1]")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let inv = if keep > 0.0 { 1.0 / keep } else { 0.0 };
        let shape = self.shape(x);
        let mask: Vec<f64> = (0..shape[0] * shape[1])
            .map(|_| if rng.next_f64() < keep { inv } else { 0.0 })
            .collect();
        let m = self.push(Op::Leaf, shape, mask, false);
        self.mul(x, m)
    }

    /// Batch normalization in training mode, built from primitive ops so the
    /// gradient through the batch statistics comes out of the normal backward
    /// sweep. Returns the output node plus the batch mean and (biased) batch
    /// variance for running-average bookkeeping.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<(NodeId, Vec<f64>, Vec<f64>)> {
        let [n, d] = self.shape(x);
        if n < 2 {
            return Err(Error::DegenerateBatch { n });
        }
        if self.shape(gamma) != [1, d] || self.shape(beta) != [1, d] {
            return Err(self.shape_err("batch_norm", x, gamma));
        }
        let mean = self.mean_rows(x);
        let neg_mean = self.scale(mean, -1.0);
        let centered = self.add_row(x, neg_mean)?;
        let sq = self.mul(centered, centered)?;
        let var = self.mean_rows(sq);
        let bumped = self.add_const(var, eps);
        let denom = self.sqrt(bumped);
        let inv = self.recip(denom);
        let normed = self.mul_row(centered, inv)?;
        let scaled = self.mul_row(normed, gamma)?;
        let y = self.add_row(scaled, beta)?;
        Ok((y, self.nodes[mean].data.clone(), self.nodes[var].data.clone()))
    }

    /// Reverse sweep from a scalar root. Visits each node once, in reverse
    /// recording order, and returns gradients for `param` leaves.
    pub fn backward(&self, root: NodeId) -> Result<Grads> {
        let rn = &self.nodes[root];
        if rn.rows * rn.cols != 1 {
            return Err(Error::Invalid(format!(
                "backward root must be a scalar, got shape [{}, {}]",
                rn.rows, rn.cols
            )));
        }
        let mut g: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !rn.requires {
            // Nothing reachable wants a gradient.
            return Ok(Grads { g });
        }
        g[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            if g[id].is_none() || !self.nodes[id].requires {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue; // keep the accumulated gradient for the caller
            }
            let gy = g[id].take().expect("checked above");
            self.accumulate(&mut g, id, &gy);
        }
        Ok(Grads { g })
    }

    /// Pushes `gy` (gradient at `id`) into the gradients of `id`'s inputs.
    fn accumulate(&self, g: &mut Vec<Option<Vec<f64>>>, id: NodeId, gy: &[f64]) {
        // Lazily zero-initialized gradient buffer for one input.
        macro_rules! buf {
            ($i:expr) => {{
                let len = self.nodes[$i].data.len();
                g[$i].get_or_insert_with(|| vec![0.0; len])
            }};
        }
        let node = &self.nodes[id];
        match node.op {
            Op::Leaf => unreachable!("leaves are handled by the caller"),
            Op::Matmul { a, b, ta, tb } => {
                let [m, n] = [node.rows, node.cols];
                let k = if ta { self.nodes[a].rows } else { self.nodes[a].cols };
                if self.nodes[a].requires {
                    let bd = &self.nodes[b].data;
                    // Split borrow: gradient buffers never alias node data.
                    let ga = buf!(a);
                    if !ta {
                        gemm(m, n, k, 1.0, gy, false, bd, !tb, 1.0, ga);
                    } else {
                        gemm(k, n, m, 1.0, bd, tb, gy, true, 1.0, ga);
                    }
                }
                if self.nodes[b].requires {
                    let ad = &self.nodes[a].data;
                    let gb = buf!(b);
                    if !tb {
                        gemm(k, m, n, 1.0, ad, !ta, gy, false, 1.0, gb);
                    } else {
                        gemm(n, m, k, 1.0, gy, true, ad, ta, 1.0, gb);
                    }
                }
            }
            Op::Add { a, b } => {
                if self.nodes[a].requires {
                    for (d, s) in buf!(a).iter_mut().zip(gy) {
                        *d += s;
                    }
                }
                if self.nodes[b].requires {
                    for (d, s) in buf!(b).iter_mut().zip(gy) {
                        *d += s;
                    }
                }
            }
            Op::Sub { a, b } => {
                if self.nodes[a].requires {
                    for (d, s) in buf!(a).iter_mut().zip(gy) {
                        *d += s;
                    }
                }
                if self.nodes[b].requires {
                    for (d, s) in buf!(b).iter_mut().zip(gy) {
                        *d -= s;
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.nodes[a].requires {
                    let bd = &self.nodes[b].data;
                    for i in 0..gy.len() {
                        buf!(a)[i] += gy[i] * bd[i];
                    }
                }
                if self.nodes[b].requires {
                    let ad = &self.nodes[a].data;
                    for i in 0..gy.len() {
                        buf!(b)[i] += gy[i] * ad[i];
                    }
                }
            }
            Op::AddRow { x, r } => {
                let d = node.cols;
                if self.nodes[x].requires {
                    for (dst, s) in buf!(x).iter_mut().zip(gy) {
                        *dst += s;
                    }
                }
                if self.nodes[r].requires {
                    let gr = buf!(r);
                    for (i, s) in gy.iter().enumerate() {
                        gr[i % d] += s;
                    }
                }
            }
            Op::MulRow { x, r } => {
                let d = node.cols;
                if self.nodes[x].requires {
                    let rd = &self.nodes[r].data;
                    for i in 0..gy.len() {
                        buf!(x)[i] += gy[i] * rd[i % d];
                    }
                }
                if self.nodes[r].requires {
                    let xd = &self.nodes[x].data;
                    let gr = buf!(r);
                    for i in 0..gy.len() {
                        gr[i % d] += gy[i] * xd[i];
                    }
                }
            }
            Op::MulScalar { x, s } => {
                let sv = self.nodes[s].data[0];
                if self.nodes[x].requires {
                    for i in 0..gy.len() {
                        buf!(x)[i] += gy[i] * sv;
                    }
                }
                if self.nodes[s].requires {
                    let xd = &self.nodes[x].data;
                    let dot: f64 = gy.iter().zip(xd).map(|(a, b)| a * b).sum();
                    buf!(s)[0] += dot;
                }
            }
            Op::Scale { x, c } => {
                if self.nodes[x].requires {
                    for i in 0..gy.len() {
                        buf!(x)[i] += gy[i] * c;
                    }
                }
            }
            Op::AddConst { x, .. } => {
                if self.nodes[x].requires {
                    for (d, s) in buf!(x).iter_mut().zip(gy) {
                        *d += s;
                    }
                }
            }
            Op::MaxConst { x, c } => {
                if self.nodes[x].requires {
                    let xd = &self.nodes[x].data;
                    for i in 0..gy.len() {
                        if xd[i] > c {
                            buf!(x)[i] += gy[i];
                        }
                    }
                }
            }
            Op::Recip { x } => {
                if self.nodes[x].requires {
                    let yd = &node.data;
                    for i in 0..gy.len() {
                        buf!(x)[i] -= gy[i] * yd[i] * yd[i];
                    }
                }
            }
            Op::Sqrt { x } => {
                if self.nodes[x].requires {
                    let yd = &node.data;
                    for i in 0..gy.len() {
                        buf!(x)[i] += gy[i] / (2.0 * yd[i]);
                    }
                }
            }
            Op::Ln { x } => {
                if self.nodes[x].requires {
                    let xd = &self.nodes[x].data;
                    for i in 0..gy.len() {
                        buf!(x)[i] += gy[i] / xd[i];
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.nodes[x].requires {
                    let xd = &self.nodes[x].data;
                    for i in 0..gy.len() {
                        if xd[i] > lo && xd[i] < hi {
                            buf!(x)[i] += gy[i];
                        }
                    }
                }
            }
            Op::Act { x, kind } => {
                if self.nodes[x].requires {
                    let xd = &self.nodes[x].data;
                    let yd = &node.data;
                    for i in 0..gy.len() {
                        buf!(x)[i] += gy[i] * kind.deriv(xd[i], yd[i]);
                    }
                }
            }
            Op::Concat { ref parts } => {
                let n = node.rows;
                let total = node.cols;
                let mut off = 0;
                for &p in parts {
                    let d = self.nodes[p].cols;
                    if self.nodes[p].requires {
                        let gp = buf!(p);
                        for i in 0..n {
                            for j in 0..d {
                                gp[i * d + j] += gy[i * total + off + j];
                            }
                        }
                    }
                    off += d;
                }
            }
            Op::MeanRows { x } => {
                if self.nodes[x].requires {
                    let n = self.nodes[x].rows;
                    let d = self.nodes[x].cols;
                    let inv = 1.0 / n as f64;
                    let gx = buf!(x);
                    for i in 0..n {
                        for j in 0..d {
                            gx[i * d + j] += gy[j] * inv;
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if self.nodes[x].requires {
                    let s = gy[0];
                    for d in buf!(x).iter_mut() {
                        *d += s;
                    }
                }
            }
            Op::MeanAll { x } => {
                if self.nodes[x].requires {
                    let s = gy[0] / self.nodes[x].data.len() as f64;
                    for d in buf!(x).iter_mut() {
                        *d += s;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 2], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn affine_known_values() {
        let mut tape = Tape::new();
        let x = tape.constant(&t([1, 2], &[2.0, 3.0]));
        let w = tape.param(&t([2, 2], &[1.0, 1.0, 1.0, -1.0]));
        let b = tape.param(&t([1, 2], &[1.0, 0.0]));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.data(y), &[6.0, -1.0]);
    }

    #[test]
    fn affine_shape_mismatch_names_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(&t([1, 3], &[0.0; 3]));
        let w = tape.param(&t([2, 2], &[0.0; 4]));
        let b = tape.param(&t([1, 2], &[0.0; 2]));
        let err = tape.affine(x, w, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn backward_of_squared_norm() {
        // loss = mean(x * x) over 4 entries, so dloss/dx = 2x / 4.
        let mut tape = Tape::new();
        let x = tape.param(&t([2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.mean_all(sq);
        let grads = tape.backward(loss).unwrap();
        let gx = grads.get(x).unwrap();
        for (g, v) in gx.iter().zip([1.0, -2.0, 3.0, 0.5]) {
            assert!((g - 0.5 * v).abs() < 1e-15);
        }
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(&t([1, 2], &[1.0, 2.0]));
        let w = tape.param(&t([2, 1], &[3.0, 4.0]));
        let y = tape.matmul(x, w).unwrap();
        let loss = tape.mean_all(y);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
        assert!(grads.get(w).is_some());
    }

    #[test]
    fn matmul_gradients_match_hand_computation() {
        // loss = sum(A * B), A [2,3], B [3,2]; dA = 1 * B^T, dB = A^T * 1.
        let mut tape = Tape::new();
        let a_vals = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b_vals = [0.5, -1.0, 2.0, 1.5, -0.5, 1.0];
        let a = tape.param(&t([2, 3], &a_vals));
        let b = tape.param(&t([3, 2], &b_vals));
        let c = tape.matmul(a, b).unwrap();
        let loss = tape.sum_all(c);
        let grads = tape.backward(loss).unwrap();
        let ga = grads.get(a).unwrap();
        let gb = grads.get(b).unwrap();
        // Row sums of B^T are column... spell it out: dA[i,p] = sum_j B[p,j].
        for i in 0..2 {
            for p in 0..3 {
                let want: f64 = b_vals[p * 2] + b_vals[p * 2 + 1];
                assert!((ga[i * 3 + p] - want).abs() < 1e-14);
            }
        }
        // dB[p,j] = sum_i A[i,p].
        for p in 0..3 {
            for j in 0..2 {
                let want: f64 = a_vals[p] + a_vals[3 + p];
                assert!((gb[p * 2 + j] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn concat_splits_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(&t([2, 1], &[1.0, 2.0]));
        let b = tape.param(&t([2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.data(c), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        // Weight the three columns differently to catch transposed splits.
        let w = tape.constant(&t([1, 3], &[1.0, 10.0, 100.0]));
        let weighted = tape.mul_row(c, w).unwrap();
        let loss = tape.sum_all(weighted);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[1.0, 1.0]);
        assert_eq!(grads.get(b).unwrap(), &[10.0, 100.0, 10.0, 100.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.param(&t([2, 2], &[0.0; 4]));
        let y = tape.scale(x, 2.0);
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn batch_norm_normalizes_a_pair() {
        // Batch [1, 3]: mean 2, biased variance 1, so the output is close to
        // [-1, 1], shy of exact by the epsilon inside the square root.
        let mut tape = Tape::new();
        let x = tape.param(&t([2, 1], &[1.0, 3.0]));
        let gamma = tape.param(&t([1, 1], &[1.0]));
        let beta = tape.param(&t([1, 1], &[0.0]));
        let eps = 1e-5;
        let (y, mean, var) = tape.batch_norm(x, gamma, beta, eps).unwrap();
        assert_eq!(mean, vec![2.0]);
        assert_eq!(var, vec![1.0]);
        let want = 1.0 / (1.0 + eps).sqrt();
        let got = tape.data(y);
        assert!((got[0] + want).abs() < 1e-12, "{got:?}");
        assert!((got[1] - want).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_rejects_single_row() {
        let mut tape = Tape::new();
        let x = tape.param(&t([1, 2], &[1.0, 2.0]));
        let gamma = tape.param(&t([1, 2], &[1.0, 1.0]));
        let beta = tape.param(&t([1, 2], &[0.0, 0.0]));
        match tape.batch_norm(x, gamma, beta, 1e-5) {
            Err(Error::DegenerateBatch { n: 1 }) => {}
            other => panic!("expected degenerate batch error, got {other:?}"),
        }
    }

    #[test]
    fn dropout_rate_one_zeroes_everything() {
        let mut rng = RngStream::from_seed(0);
        let mut tape = Tape::new();
        let x = tape.param(&t([4, 4], &[1.0; 16]));
        let y = tape.dropout(x, 1.0, &mut rng).unwrap();
        assert!(tape.data(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_keeps_expectation() {
        let mut rng = RngStream::from_seed(1);
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::filled(100, 100, 1.0));
        let y = tape.dropout(x, 0.5, &mut rng).unwrap();
        let mean: f64 = tape.data(y).iter().sum::<f64>() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.05, "kept mean {mean}");
        // Survivors are scaled by 1/keep.
        assert!(tape.data(y).iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn dropout_rejects_out_of_range() {
        let mut rng = RngStream::from_seed(2);
        let mut tape = Tape::new();
        let x = tape.param(&t([1, 2], &[1.0, 2.0]));
        assert!(tape.dropout(x, -0.1, &mut rng).is_err());
        assert!(tape.dropout(x, 1.5, &mut rng).is_err());
    }

    #[test]
    fn shared_input_accumulates_both_paths() {
        // loss = sum(x) + sum(x * x): dx = 1 + 2x.
        let mut tape = Tape::new();
        let x = tape.param(&t([1, 3], &[1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let s1 = tape.sum_all(x);
        let s2 = tape.sum_all(sq);
        let loss = tape.add(s1, s2).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gx = grads.get(x).unwrap();
        for (g, v) in gx.iter().zip([1.0, 2.0, 3.0]) {
            assert!((g - (1.0 + 2.0 * v)).abs() < 1e-14);
        }
    }
}
