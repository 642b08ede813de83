//! Forward op builders. Each checks shapes, computes the value, and records
//! the op for the backward pass.

use std::sync::Arc;

use super::{axis_split, numel, Op, Tape, TensorId};
use crate::error::{Error, Result};
use crate::par;
use crate::scalar::Scalar;

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_TAU: f64 = 0.398_942_280_401_432_7; // 1/sqrt(2*pi)

/// Standard normal CDF, the exact GELU gate.
pub(crate) fn phi<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::ONE + (x * T::from_f64(SQRT_HALF)).erf())
}

/// Standard normal PDF, used by the GELU derivative.
pub(crate) fn phi_pdf<T: Scalar>(x: T) -> T {
    T::from_f64(INV_SQRT_TAU) * (-(x * x) * T::from_f64(0.5)).exp()
}

/// `y[m,n] = sum_p a[m,p] * b[p,n]`, row-parallel.
pub(crate) fn matmul_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    par::fill_chunks(&mut out, n, k * n, |i, row| {
        for p in 0..k {
            let aval = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aval * bv;
            }
        }
    });
    out
}

/// `y[m,p] = sum_n a[m,n] * b[p,n]` (a · b-transpose), row-parallel.
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * p];
    par::fill_chunks(&mut out, p, n * p, |i, row| {
        let arow = &a[i * n..(i + 1) * n];
        for (j, o) in row.iter_mut().enumerate() {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = T::ZERO;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o = acc;
        }
    });
    out
}

/// `y[k,n] = sum_m a[m,k] * b[m,n]` (a-transpose · b), row-parallel over k.
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; k * n];
    par::fill_chunks(&mut out, n, m * n, |p, row| {
        for i in 0..m {
            let aval = a[i * k + p];
            let brow = &b[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aval * bv;
            }
        }
    });
    out
}

impl<T: Scalar> Tape<T> {
    /// Matrix product `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.shape_err("matmul", a, b));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_nn(self.value(a), self.value(b), m, k, n);
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(Arc::new(out), vec![m, n], Op::Matmul { a, b }, rg))
    }

    fn zip_same_shape(
        &mut self,
        opname: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err(opname, a, b));
        }
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(Arc::new(out), shape, op, rg))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn row_op(
        &mut self,
        opname: &'static str,
        a: TensorId,
        row: TensorId,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let cols = *sa.last().unwrap_or(&0);
        if sa.len() < 2 || numel(self.shape(row)) != cols {
            return Err(self.shape_err(opname, a, row));
        }
        let rv = self.value(row).to_vec();
        let out: Vec<T> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, rv[i % cols]))
            .collect();
        let rg = self.grad_of(&[a, row]);
        Ok(self.push(Arc::new(out), sa, op, rg))
    }

    /// Broadcast-add a length-C vector to every row of `[.., C]`.
    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId> {
        self.row_op("add_row", a, row, |x, y| x + y, Op::AddRow { a, row })
    }

    /// Broadcast-multiply every row of `[.., C]` by a length-C vector.
    pub fn mul_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId> {
        self.row_op("mul_row", a, row, |x, y| x * y, Op::MulRow { a, row })
    }

    /// Scale row r of `[R, C]` by `col[r]`.
    pub fn mul_col(&mut self, a: TensorId, col: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || numel(self.shape(col)) != sa[0] {
            return Err(self.shape_err("mul_col", a, col));
        }
        let cols = sa[1];
        let cv = self.value(col).to_vec();
        let out: Vec<T> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x * cv[i / cols])
            .collect();
        let rg = self.grad_of(&[a, col]);
        Ok(self.push(Arc::new(out), sa, Op::MulCol { a, col }, rg))
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let cv = T::from_f64(c);
        let out: Vec<T> = self.value(a).iter().map(|&x| x + cv).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires_grad(a);
        self.push(Arc::new(out), shape, Op::AddScalar { a }, rg)
    }

    pub fn mul_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let cv = T::from_f64(c);
        let out: Vec<T> = self.value(a).iter().map(|&x| x * cv).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires_grad(a);
        self.push(Arc::new(out), shape, Op::MulScalar { a, c }, rg)
    }

    /// Select rows of an `[R, C]` matrix; backward scatter-adds into the source.
    pub fn gather(&mut self, a: TensorId, idx: Arc<Vec<usize>>) -> Result<TensorId> {
        let sa = self.shape(a);
        if sa.len() != 2 {
            return Err(Error::contract(format!(
                "gather expects a matrix, got shape {sa:?}"
            )));
        }
        let (rows, cols) = (sa[0], sa[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::contract(format!(
                "gather index {bad} out of range for {rows} rows"
            )));
        }
        if idx.is_empty() {
            return Err(Error::contract("gather needs at least one index"));
        }
        let av = self.value(a);
        let mut out = vec![T::ZERO; idx.len() * cols];
        par::fill_chunks(&mut out, cols, cols, |m, row| {
            row.copy_from_slice(&av[idx[m] * cols..(idx[m] + 1) * cols]);
        });
        let rg = self.requires_grad(a);
        Ok(self.push(
            Arc::new(out),
            vec![idx.len(), cols],
            Op::Gather { a, idx },
            rg,
        ))
    }

    /// Concatenate two matrices along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, a: TensorId, b: TensorId, axis: usize) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || axis > 1 || sa[1 - axis] != sb[1 - axis] {
            return Err(self.shape_err("concat", a, b));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let (out, shape) = if axis == 0 {
            let mut out = Vec::with_capacity(av.len() + bv.len());
            out.extend_from_slice(av);
            out.extend_from_slice(bv);
            (out, vec![sa[0] + sb[0], sa[1]])
        } else {
            let rows = sa[0];
            let (ca, cb) = (sa[1], sb[1]);
            let mut out = Vec::with_capacity(av.len() + bv.len());
            for r in 0..rows {
                out.extend_from_slice(&av[r * ca..(r + 1) * ca]);
                out.extend_from_slice(&bv[r * cb..(r + 1) * cb]);
            }
            (out, vec![rows, ca + cb])
        };
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(Arc::new(out), shape, Op::Concat { a, b, axis }, rg))
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || start + len > sa[1] || len == 0 {
            return Err(Error::contract(format!(
                "slice_cols [{start}, {}) out of range for shape {sa:?}",
                start + len
            )));
        }
        let cols = sa[1];
        let av = self.value(a);
        let mut out = Vec::with_capacity(sa[0] * len);
        for r in 0..sa[0] {
            out.extend_from_slice(&av[r * cols + start..r * cols + start + len]);
        }
        let rg = self.requires_grad(a);
        Ok(self.push(
            Arc::new(out),
            vec![sa[0], len],
            Op::SliceCols { a, start },
            rg,
        ))
    }

    /// Reinterpret the buffer under a new shape with equal element count.
    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId> {
        if numel(shape) != numel(self.shape(a)) {
            return Err(Error::contract(format!(
                "reshape {:?} -> {shape:?} changes element count",
                self.shape(a)
            )));
        }
        let value = Arc::clone(&self.nodes[a.0].value);
        let rg = self.requires_grad(a);
        Ok(self.push(value, shape.to_vec(), Op::Reshape { a }, rg))
    }

    /// Softmax along `axis`, stabilized by max subtraction.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::contract(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let av = self.value(a);
        let mut out = vec![T::ZERO; av.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mut mx = av[at(0)];
                for j in 1..len {
                    mx = mx.max(av[at(j)]);
                }
                let mut total = T::ZERO;
                for j in 0..len {
                    let e = (av[at(j)] - mx).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let rg = self.requires_grad(a);
        Ok(self.push(Arc::new(out), shape, Op::Softmax { a, axis }, rg))
    }

    fn reduce_axis(
        &mut self,
        opname: &'static str,
        a: TensorId,
        axis: usize,
        op: Op,
        kind: ReduceKind,
    ) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::contract(format!(
                "{opname} axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let av = self.value(a);
        let mut out = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let red = match kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let mut acc = T::ZERO;
                        for j in 0..len {
                            acc += av[at(j)];
                        }
                        if matches!(kind, ReduceKind::Mean) {
                            acc / T::from_f64(len as f64)
                        } else {
                            acc
                        }
                    }
                    ReduceKind::Max => {
                        let mut best = av[at(0)];
                        for j in 1..len {
                            let v = av[at(j)];
                            if v > best {
                                best = v;
                            }
                        }
                        best
                    }
                };
                out[o * inner + i] = red;
            }
        }
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = self.requires_grad(a);
        Ok(self.push(Arc::new(out), out_shape, op, rg))
    }

    pub fn sum_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        self.reduce_axis("sum_axis", a, axis, Op::SumAxis { a, axis }, ReduceKind::Sum)
    }

    pub fn mean_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        self.reduce_axis(
            "mean_axis",
            a,
            axis,
            Op::MeanAxis { a, axis },
            ReduceKind::Mean,
        )
    }

    /// Max along an axis; ties resolve to the first occurrence in backward.
    pub fn max_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        self.reduce_axis("max_axis", a, axis, Op::MaxAxis { a, axis }, ReduceKind::Max)
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let mut acc = T::ZERO;
        for &v in self.value(a) {
            acc += v;
        }
        let rg = self.requires_grad(a);
        self.push(Arc::new(vec![acc]), vec![1], Op::SumAll { a }, rg)
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let n = self.value(a).len();
        let mut acc = T::ZERO;
        for &v in self.value(a) {
            acc += v;
        }
        let rg = self.requires_grad(a);
        self.push(
            Arc::new(vec![acc / T::from_f64(n as f64)]),
            vec![1],
            Op::MeanAll { a },
            rg,
        )
    }

    fn unary(&mut self, a: TensorId, f: impl Fn(T) -> T, op: Op) -> TensorId {
        let out: Vec<T> = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires_grad(a);
        self.push(Arc::new(out), shape, op, rg)
    }

    /// Exact-CDF GELU: x * Phi(x).
    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| x * phi(x), Op::Gelu { a })
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.unary(
            a,
            |x| T::ONE / (T::ONE + (-x).exp()),
            Op::Sigmoid { a },
        )
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| x.tanh(), Op::Tanh { a })
    }

    /// |x|; the subgradient at 0 is defined as 0.
    pub fn abs(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| x.abs(), Op::Abs { a })
    }

    /// Layer normalization over the last axis with affine gain/bias.
    pub fn layernorm(
        &mut self,
        a: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        let d = *shape.last().ok_or_else(|| {
            Error::contract("layernorm needs at least one axis".to_string())
        })?;
        if numel(self.shape(gain)) != d {
            return Err(self.shape_err("layernorm gain", a, gain));
        }
        if numel(self.shape(bias)) != d {
            return Err(self.shape_err("layernorm bias", a, bias));
        }
        let av = self.value(a);
        let gv = self.value(gain).to_vec();
        let bv = self.value(bias).to_vec();
        let epsv = T::from_f64(eps);
        let dn = T::from_f64(d as f64);
        let mut out = vec![T::ZERO; av.len()];
        for (slice, outs) in av.chunks(d).zip(out.chunks_mut(d)) {
            let mut mean = T::ZERO;
            for &v in slice {
                mean += v;
            }
            mean /= dn;
            let mut var = T::ZERO;
            for &v in slice {
                let c = v - mean;
                var += c * c;
            }
            var /= dn;
            let inv_std = T::ONE / (var + epsv).sqrt();
            for j in 0..d {
                outs[j] = (slice[j] - mean) * inv_std * gv[j] + bv[j];
            }
        }
        let rg = self.grad_of(&[a, gain, bias]);
        Ok(self.push(
            Arc::new(out),
            shape,
            Op::LayerNorm { a, gain, bias, eps },
            rg,
        ))
    }
}

#[derive(Clone, Copy)]
enum ReduceKind {
    Sum,
    Mean,
    Max,
}
