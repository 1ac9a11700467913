//! Reverse-mode differentiation over a recorded sequence of dense tensor
//! primitives.
//!
//! Every primitive appends one node to the [`Tape`] holding its forward value.
//! [`Tape::backward`] walks the nodes in reverse order and accumulates
//! vector-Jacobian products into each input. Leaves are ordinary nodes, so
//! values such as network weights produced by another network can flow through
//! the record like any other intermediate.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    BroadcastAdd(Var, Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    LinComb(Vec<(Var, f64)>),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize },
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the seeded output with respect to `v`; zeros when `v`
    /// does not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => Tensor::from_raw(self.shapes[v.0].clone(), g.clone()),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => Tensor::from_raw(self.shapes[v.0].clone(), g),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// (rows, cols) of a rank-1 or rank-2 tensor; rank-1 is a single row.
fn as_rows(t: &Tensor) -> Option<(usize, usize)> {
    match t.shape() {
        [n] => Some((1, *n)),
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y[o] = w[o, :] · x` for a row-major `[y.len(), cols]` matrix, four rows
/// at a time.
fn matvec(w: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
    let full = y.len() / 4 * 4;
    let split = cols / 4 * 4;
    for o in (0..full).step_by(4) {
        let rows = &w[o * cols..(o + 4) * cols];
        let (r0, rest) = rows.split_at(cols);
        let (r1, rest) = rest.split_at(cols);
        let (r2, r3) = rest.split_at(cols);
        let mut acc = [[0.0f64; 4]; 4];
        for ((((xc, a), b), c), d) in x[..split]
            .chunks_exact(4)
            .zip(r0.chunks_exact(4))
            .zip(r1.chunks_exact(4))
            .zip(r2.chunks_exact(4))
            .zip(r3.chunks_exact(4))
        {
            for l in 0..4 {
                acc[0][l] += a[l] * xc[l];
                acc[1][l] += b[l] * xc[l];
                acc[2][l] += c[l] * xc[l];
                acc[3][l] += d[l] * xc[l];
            }
        }
        for (k, (a, row)) in acc.iter().zip([r0, r1, r2, r3]).enumerate() {
            let mut s = (a[0] + a[1]) + (a[2] + a[3]);
            for i in split..cols {
                s += row[i] * x[i];
            }
            y[o + k] = s;
        }
    }
    for o in full..y.len() {
        y[o] = dot(&w[o * cols..(o + 1) * cols], x);
    }
}

/// Large products go to a blocked kernel; the choice depends on shape only,
/// so equal shapes always round identically.
fn use_gemm(m: usize, k: usize, n: usize) -> bool {
    m >= 4 && m * k * n >= 1 << 15
}

/// `c[m, n] += a[m, k] · b[k, n]` where `a` and `b` are given with their
/// (row, column) strides and `c` is row-major with row stride `rsc`.
fn gemm(
    (m, k, n): (usize, usize, usize),
    (a, rsa, csa): (&[f64], usize, usize),
    (b, rsb, csb): (&[f64], usize, usize),
    c: &mut [f64],
    rsc: usize,
) {
    let reach = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= reach(m, k, rsa, csa));
    assert!(b.len() >= reach(k, n, rsb, csb));
    assert!(c.len() >= reach(m, n, rsc, 1));
    // SAFETY: the assertions above keep every strided access in bounds and
    // `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        let index = self.nodes.len();
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name, index });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(index))
    }

    fn zip_map(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::from_raw(ta.shape().to_vec(), data);
        self.push(name, value, op)
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let ta = self.value(a);
        let value = Tensor::from_raw(ta.shape().to_vec(), ta.data().iter().map(|x| f(*x)).collect());
        self.push(name, value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Matrix product. A rank-1 left operand is a row vector and a rank-1
    /// right operand a column vector; the output drops that axis accordingly.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = as_rows(ta).ok_or_else(|| Error::shape("matmul", format!("left operand rank {}", ta.rank())))?;
        let (k2, n) = match tb.shape() {
            [k2] => (*k2, 1),
            [k2, n] => (*k2, *n),
            s => return Err(Error::shape("matmul", format!("right operand shape {s:?}"))),
        };
        if k != k2 {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                axpy(ad[i * k + p], &bd[p * n..(p + 1) * n], row);
            }
        }
        let shape = match (ta.rank(), tb.rank()) {
            (1, 1) => vec![1],
            (1, _) => vec![n],
            (_, 1) => vec![m],
            _ => vec![m, n],
        };
        self.push("matmul", Tensor::from_raw(shape, out), Op::MatMul(a, b))
    }

    /// Affine map `x · wᵀ + b` with `w` stored `[out, in]` row-major.
    /// `x` is `[in]` or `[rows, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (rows, inp) = as_rows(tx).ok_or_else(|| Error::shape("linear", format!("input rank {}", tx.rank())))?;
        let (out, inw) = match tw.shape() {
            [o, i] => (*o, *i),
            s => return Err(Error::shape("linear", format!("weight shape {s:?}"))),
        };
        if inp != inw || tb.shape() != [out] {
            return Err(Error::shape(
                "linear",
                format!("input {:?}, weight {:?}, bias {:?}", tx.shape(), tw.shape(), tb.shape()),
            ));
        }
        let (xd, wd, bd) = (tx.data(), tw.data(), tb.data());
        let mut y = vec![0.0; rows * out];
        if use_gemm(rows, inp, out) {
            for r in 0..rows {
                y[r * out..(r + 1) * out].copy_from_slice(bd);
            }
            // y += x · wᵀ
            gemm((rows, inp, out), (xd, inp, 1), (wd, 1, inp), &mut y, out);
        } else {
            for r in 0..rows {
                let xr = &xd[r * inp..(r + 1) * inp];
                let yr = &mut y[r * out..(r + 1) * out];
                matvec(wd, inp, xr, yr);
                for (yo, bo) in yr.iter_mut().zip(bd) {
                    *yo += bo;
                }
            }
        }
        let shape = if tx.rank() == 1 { vec![out] } else { vec![rows, out] };
        self.push("linear", Tensor::from_raw(shape, y), Op::Linear { x, w, b })
    }

    /// `a[n, m] + b[m]`, broadcasting `b` over rows.
    pub fn broadcast_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (_, cols) = as_rows(ta).ok_or_else(|| Error::shape("broadcast_add", format!("left rank {}", ta.rank())))?;
        if tb.shape() != [cols] {
            return Err(Error::shape(
                "broadcast_add",
                format!("{:?} + {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tb.data()[i % cols])
            .collect();
        let value = Tensor::from_raw(ta.shape().to_vec(), data);
        self.push("broadcast_add", value, Op::BroadcastAdd(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map("log", a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map("square", a, |x| x * x, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::shape("mean", "empty input"));
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(a))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("scale", a, |x| c * x, Op::Scale(a, c))
    }

    /// Multiplication by a one-element tensor on the tape.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let c = self
            .value(s)
            .item()
            .ok_or_else(|| Error::shape("scale_by", format!("scale shape {:?}", self.shape(s))))?;
        self.map("scale_by", a, |x| c * x, Op::ScaleBy(a, s))
    }

    /// `Σ cᵢ·vᵢ` over same-shaped operands.
    pub fn lincomb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, c0) = *terms.first().ok_or_else(|| Error::shape("lincomb", "no terms"))?;
        let shape = self.shape(first).to_vec();
        let mut out: Vec<f64> = self.value(first).data().iter().map(|x| c0 * x).collect();
        for &(v, c) in &terms[1..] {
            let t = self.value(v);
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("lincomb", format!("{:?} vs {shape:?}", t.shape())));
            }
            axpy(c, t.data(), &mut out);
        }
        self.push("lincomb", Tensor::from_raw(shape, out), Op::LinComb(terms.to_vec()))
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat", "no operands"))?;
        let (rows, _) =
            as_rows(self.value(first)).ok_or_else(|| Error::shape("concat", "operands must be rank 1 or 2"))?;
        let rank = self.value(first).rank();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            match as_rows(t) {
                Some((r, c)) if r == rows && t.rank() == rank => widths.push(c),
                _ => {
                    return Err(Error::shape(
                        "concat",
                        format!("{:?} does not stack with {:?}", t.shape(), self.shape(first)),
                    ))
                }
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let shape = if rank == 1 { vec![total] } else { vec![rows, total] };
        self.push("concat", Tensor::from_raw(shape, out), Op::Concat(parts.to_vec()))
    }

    /// Contiguous run of `len` entries of the flattened operand, as a vector.
    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(src);
        if start + len > t.len() {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} out of bounds for {} entries", start + len, t.len()),
            ));
        }
        let value = Tensor::from_raw(vec![len], t.data()[start..start + len].to_vec());
        self.push("slice", value, Op::Slice { src, start })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape(a))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let t = self.value(output);
        if t.len() != 1 {
            return Err(Error::NotScalar(t.shape().to_vec()));
        }
        self.backward_seeded(&[(output, Tensor::filled(t.shape(), 1.0))])
    }

    /// Reverse sweep from arbitrary upstream gradients on several nodes.
    pub fn backward_seeded(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut top = 0;
        for (v, g) in seeds {
            same_shape("backward", self.value(*v), g)?;
            accumulate(&mut grads, *v, g.data(), self.value(*v).len());
            top = top.max(v.0 + 1);
        }
        for i in (0..top).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let len = |v: Var| self.nodes[v.0].value.len();
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g, len(*a));
                accumulate(grads, *b, g, len(*b));
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g, len(*a));
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                accumulate(grads, *b, &neg, len(*b));
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                let gb: Vec<f64> = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                accumulate(grads, *a, &ga, len(*a));
                accumulate(grads, *b, &gb, len(*b));
            }
            Op::MatMul(a, b) => {
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let (m, k) = as_rows(ta).expect("checked in forward");
                let n = tb.len() / k;
                let (ad, bd) = (ta.data(), tb.data());
                // dA = dC · Bᵀ
                let mut ga = vec![0.0; m * k];
                for r in 0..m {
                    for p in 0..k {
                        ga[r * k + p] = dot(&g[r * n..(r + 1) * n], &bd[p * n..(p + 1) * n]);
                    }
                }
                // dB = Aᵀ · dC
                let mut gb = vec![0.0; k * n];
                for r in 0..m {
                    for p in 0..k {
                        axpy(ad[r * k + p], &g[r * n..(r + 1) * n], &mut gb[p * n..(p + 1) * n]);
                    }
                }
                accumulate(grads, *a, &ga, ga.len());
                accumulate(grads, *b, &gb, gb.len());
            }
            Op::Linear { x, w, b } => {
                let tx = &self.nodes[x.0].value;
                let tw = &self.nodes[w.0].value;
                let (rows, inp) = as_rows(tx).expect("checked in forward");
                let out = tw.shape()[0];
                let (xd, wd) = (tx.data(), tw.data());
                let mut gx = vec![0.0; rows * inp];
                let mut gb = vec![0.0; out];
                // The weight gradient is summed in place; it is the largest
                // buffer here and usually shared by many evaluations.
                let mut own = Vec::new();
                let gw: &mut [f64] = if *w != *x && *w != *b {
                    grads[w.0].get_or_insert_with(|| vec![0.0; out * inp])
                } else {
                    own.resize(out * inp, 0.0);
                    &mut own
                };
                if use_gemm(rows, inp, out) {
                    // gx = g · w, gw += gᵀ · x
                    gemm((rows, out, inp), (g, out, 1), (wd, inp, 1), &mut gx, inp);
                    gemm((out, rows, inp), (g, 1, out), (xd, inp, 1), gw, inp);
                    for gr in g.chunks(out) {
                        for (b, x) in gb.iter_mut().zip(gr) {
                            *b += x;
                        }
                    }
                } else {
                    for r in 0..rows {
                        let xr = &xd[r * inp..(r + 1) * inp];
                        let gxr = &mut gx[r * inp..(r + 1) * inp];
                        for o in 0..out {
                            let go = g[r * out + o];
                            if go == 0.0 {
                                continue;
                            }
                            axpy(go, &wd[o * inp..(o + 1) * inp], gxr);
                            axpy(go, xr, &mut gw[o * inp..(o + 1) * inp]);
                            gb[o] += go;
                        }
                    }
                }
                if !own.is_empty() {
                    accumulate(grads, *w, &own, own.len());
                }
                accumulate(grads, *x, &gx, gx.len());
                accumulate(grads, *b, &gb, gb.len());
            }
            Op::BroadcastAdd(a, b) => {
                accumulate(grads, *a, g, len(*a));
                let cols = len(*b);
                let mut gb = vec![0.0; cols];
                for (i, gi) in g.iter().enumerate() {
                    gb[i % cols] += gi;
                }
                accumulate(grads, *b, &gb, cols);
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let ga: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                accumulate(grads, *a, &ga, len(*a));
            }
            Op::Exp(a) => {
                let y = node.value.data();
                let ga: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y).collect();
                accumulate(grads, *a, &ga, len(*a));
            }
            Op::Log(a) => {
                let ga: Vec<f64> = g.iter().zip(val(*a)).map(|(g, x)| g / x).collect();
                accumulate(grads, *a, &ga, len(*a));
            }
            Op::Square(a) => {
                let ga: Vec<f64> = g.iter().zip(val(*a)).map(|(g, x)| 2.0 * g * x).collect();
                accumulate(grads, *a, &ga, len(*a));
            }
            Op::Sum(a) => {
                let ga = vec![g[0]; len(*a)];
                accumulate(grads, *a, &ga, len(*a));
            }
            Op::Mean(a) => {
                let n = len(*a);
                let ga = vec![g[0] / n as f64; n];
                accumulate(grads, *a, &ga, n);
            }
            Op::Scale(a, c) => {
                let ga: Vec<f64> = g.iter().map(|g| c * g).collect();
                accumulate(grads, *a, &ga, len(*a));
            }
            Op::ScaleBy(a, s) => {
                let c = val(*s)[0];
                let ga: Vec<f64> = g.iter().map(|g| c * g).collect();
                let gs = dot(g, val(*a));
                accumulate(grads, *a, &ga, len(*a));
                accumulate(grads, *s, &[gs], 1);
            }
            Op::LinComb(terms) => {
                for &(v, c) in terms {
                    let gv: Vec<f64> = g.iter().map(|g| c * g).collect();
                    accumulate(grads, v, &gv, len(v));
                }
            }
            Op::Concat(parts) => {
                let rows = as_rows(&node.value).expect("checked in forward").0;
                let total = node.value.len() / rows;
                let mut offset = 0;
                for &p in parts {
                    let w = len(p) / rows;
                    let mut gp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, p, &gp, len(p));
                    offset += w;
                }
            }
            Op::Slice { src, start } => {
                let n = len(*src);
                let slot = grads[src.0].get_or_insert_with(|| vec![0.0; n]);
                for (d, s) in slot[*start..*start + g.len()].iter_mut().zip(g) {
                    *d += s;
                }
            }
            Op::Reshape(a) => accumulate(grads, *a, g, len(*a)),
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], n: usize) {
    debug_assert_eq!(g.len(), n);
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}
