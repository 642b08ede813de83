//! Reverse pass: replays the tape in reverse execution order and accumulates
//! gradients with fixed index ordering, so results are reproducible bit for
//! bit for a given element type.

use super::ops::{matmul_nt, matmul_tn, phi, phi_pdf};
use super::{axis_split, numel, Op, Tape, TensorId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-tensor gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: TensorId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

impl<T: Scalar> Tape<T> {
    /// Populate gradients of every `requires_grad` ancestor of a scalar loss.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients<T>> {
        if numel(self.shape(loss)) != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::ONE]);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].clone() else { continue };
            self.step_back(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], id: TensorId, f: impl Fn(&mut [T])) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let slot =
            grads[id.0].get_or_insert_with(|| vec![T::ZERO; self.nodes[id.0].value.len()]);
        f(slot);
    }

    fn step_back(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match node.op.clone() {
            Op::Leaf => {}

            Op::Matmul { a, b } => {
                let sa = self.shape(a);
                let (m, k, n) = (sa[0], sa[1], self.shape(b)[1]);
                let da = matmul_nt(g, self.value(b), m, n, k);
                self.acc(grads, a, |dst| add_into(dst, &da));
                let db = matmul_tn(self.value(a), g, m, k, n);
                self.acc(grads, b, |dst| add_into(dst, &db));
            }

            Op::Add { a, b } => {
                self.acc(grads, a, |dst| add_into(dst, g));
                self.acc(grads, b, |dst| add_into(dst, g));
            }

            Op::Sub { a, b } => {
                self.acc(grads, a, |dst| add_into(dst, g));
                self.acc(grads, b, |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d -= gv;
                    }
                });
            }

            Op::Mul { a, b } => {
                let (av, bv) = (self.value(a), self.value(b));
                self.acc(grads, a, |dst| {
                    for ((d, &gv), &y) in dst.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                });
                self.acc(grads, b, |dst| {
                    for ((d, &gv), &x) in dst.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                });
            }

            Op::AddRow { a, row } => {
                let cols = numel(self.shape(row));
                self.acc(grads, a, |dst| add_into(dst, g));
                self.acc(grads, row, |dst| {
                    for (i, &gv) in g.iter().enumerate() {
                        dst[i % cols] += gv;
                    }
                });
            }

            Op::MulRow { a, row } => {
                let cols = numel(self.shape(row));
                let (av, rv) = (self.value(a), self.value(row));
                self.acc(grads, a, |dst| {
                    for (i, (d, &gv)) in dst.iter_mut().zip(g).enumerate() {
                        *d += gv * rv[i % cols];
                    }
                });
                self.acc(grads, row, |dst| {
                    for (i, &gv) in g.iter().enumerate() {
                        dst[i % cols] += gv * av[i];
                    }
                });
            }

            Op::MulCol { a, col } => {
                let cols = self.shape(a)[1];
                let (av, cv) = (self.value(a), self.value(col));
                self.acc(grads, a, |dst| {
                    for (i, (d, &gv)) in dst.iter_mut().zip(g).enumerate() {
                        *d += gv * cv[i / cols];
                    }
                });
                self.acc(grads, col, |dst| {
                    for (i, &gv) in g.iter().enumerate() {
                        dst[i / cols] += gv * av[i];
                    }
                });
            }

            Op::AddScalar { a } => {
                self.acc(grads, a, |dst| add_into(dst, g));
            }

            Op::MulScalar { a, c } => {
                let cv = T::from_f64(c);
                self.acc(grads, a, |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv * cv;
                    }
                });
            }

            Op::Gather { a, idx } => {
                let cols = self.shape(a)[1];
                // Scatter-add in index order keeps accumulation deterministic.
                self.acc(grads, a, |dst| {
                    for (m, &src_row) in idx.iter().enumerate() {
                        let grow = &g[m * cols..(m + 1) * cols];
                        let drow = &mut dst[src_row * cols..(src_row + 1) * cols];
                        add_into(drow, grow);
                    }
                });
            }

            Op::Concat { a, b, axis } => {
                let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
                if axis == 0 {
                    let na = numel(&sa);
                    self.acc(grads, a, |dst| add_into(dst, &g[..na]));
                    self.acc(grads, b, |dst| add_into(dst, &g[na..]));
                } else {
                    let (ca, cb) = (sa[1], sb[1]);
                    let cols = ca + cb;
                    self.acc(grads, a, |dst| {
                        for r in 0..sa[0] {
                            add_into(
                                &mut dst[r * ca..(r + 1) * ca],
                                &g[r * cols..r * cols + ca],
                            );
                        }
                    });
                    self.acc(grads, b, |dst| {
                        for r in 0..sb[0] {
                            add_into(
                                &mut dst[r * cb..(r + 1) * cb],
                                &g[r * cols + ca..(r + 1) * cols],
                            );
                        }
                    });
                }
            }

            Op::SliceCols { a, start } => {
                let cols = self.shape(a)[1];
                let len = node.shape[1];
                self.acc(grads, a, |dst| {
                    for r in 0..node.shape[0] {
                        add_into(
                            &mut dst[r * cols + start..r * cols + start + len],
                            &g[r * len..(r + 1) * len],
                        );
                    }
                });
            }

            Op::Reshape { a } => {
                self.acc(grads, a, |dst| add_into(dst, g));
            }

            Op::Softmax { a, axis } => {
                let shape = &node.shape;
                let (outer, len, inner) = axis_split(shape, axis);
                let s = &node.value;
                let mut dg = vec![T::ZERO; s.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + i;
                        let mut dot = T::ZERO;
                        for j in 0..len {
                            dot += g[at(j)] * s[at(j)];
                        }
                        for j in 0..len {
                            dg[at(j)] = s[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                self.acc(grads, a, |dst| add_into(dst, &dg));
            }

            Op::SumAxis { a, axis } => {
                let shape = self.shape(a).to_vec();
                let (outer, len, inner) = axis_split(&shape, axis);
                self.acc(grads, a, |dst| {
                    for o in 0..outer {
                        for j in 0..len {
                            for i in 0..inner {
                                dst[o * len * inner + j * inner + i] += g[o * inner + i];
                            }
                        }
                    }
                });
            }

            Op::MeanAxis { a, axis } => {
                let shape = self.shape(a).to_vec();
                let (outer, len, inner) = axis_split(&shape, axis);
                let scale = T::ONE / T::from_f64(len as f64);
                self.acc(grads, a, |dst| {
                    for o in 0..outer {
                        for j in 0..len {
                            for i in 0..inner {
                                dst[o * len * inner + j * inner + i] +=
                                    g[o * inner + i] * scale;
                            }
                        }
                    }
                });
            }

            Op::MaxAxis { a, axis } => {
                let shape = self.shape(a).to_vec();
                let (outer, len, inner) = axis_split(&shape, axis);
                let av = self.value(a);
                // Ties route to the first occurrence.
                self.acc(grads, a, |dst| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let mut arg = 0;
                            for j in 1..len {
                                if av[at(j)] > av[at(arg)] {
                                    arg = j;
                                }
                            }
                            dst[at(arg)] += g[o * inner + i];
                        }
                    }
                });
            }

            Op::SumAll { a } => {
                let gv = g[0];
                self.acc(grads, a, |dst| {
                    for d in dst.iter_mut() {
                        *d += gv;
                    }
                });
            }

            Op::MeanAll { a } => {
                let n = self.value(a).len();
                let gv = g[0] / T::from_f64(n as f64);
                self.acc(grads, a, |dst| {
                    for d in dst.iter_mut() {
                        *d += gv;
                    }
                });
            }

            Op::Gelu { a } => {
                let av = self.value(a);
                self.acc(grads, a, |dst| {
                    for ((d, &gv), &x) in dst.iter_mut().zip(g).zip(av) {
                        *d += gv * (phi(x) + x * phi_pdf(x));
                    }
                });
            }

            Op::Sigmoid { a } => {
                let yv = &node.value;
                self.acc(grads, a, |dst| {
                    for ((d, &gv), &y) in dst.iter_mut().zip(g).zip(yv.iter()) {
                        *d += gv * y * (T::ONE - y);
                    }
                });
            }

            Op::Tanh { a } => {
                let yv = &node.value;
                self.acc(grads, a, |dst| {
                    for ((d, &gv), &y) in dst.iter_mut().zip(g).zip(yv.iter()) {
                        *d += gv * (T::ONE - y * y);
                    }
                });
            }

            Op::Abs { a } => {
                let av = self.value(a);
                self.acc(grads, a, |dst| {
                    for ((d, &gv), &x) in dst.iter_mut().zip(g).zip(av) {
                        if x > T::ZERO {
                            *d += gv;
                        } else if x < T::ZERO {
                            *d -= gv;
                        }
                    }
                });
            }

            Op::LayerNorm { a, gain, bias, eps } => {
                let d = *node.shape.last().unwrap();
                let av = self.value(a);
                let gv = self.value(gain);
                let dn = T::from_f64(d as f64);
                let epsv = T::from_f64(eps);

                let rows = av.len() / d;
                let mut dx = vec![T::ZERO; av.len()];
                let mut dgain = vec![T::ZERO; d];
                let mut dbias = vec![T::ZERO; d];
                for r in 0..rows {
                    let xs = &av[r * d..(r + 1) * d];
                    let gs = &g[r * d..(r + 1) * d];
                    let mut mean = T::ZERO;
                    for &v in xs {
                        mean += v;
                    }
                    mean /= dn;
                    let mut var = T::ZERO;
                    for &v in xs {
                        let c = v - mean;
                        var += c * c;
                    }
                    var /= dn;
                    let inv_std = T::ONE / (var + epsv).sqrt();

                    let mut dxhat_sum = T::ZERO;
                    let mut dxhat_xhat_sum = T::ZERO;
                    for j in 0..d {
                        let xhat = (xs[j] - mean) * inv_std;
                        let dxhat = gs[j] * gv[j];
                        dgain[j] += gs[j] * xhat;
                        dbias[j] += gs[j];
                        dxhat_sum += dxhat;
                        dxhat_xhat_sum += dxhat * xhat;
                    }
                    for j in 0..d {
                        let xhat = (xs[j] - mean) * inv_std;
                        let dxhat = gs[j] * gv[j];
                        dx[r * d + j] =
                            inv_std / dn * (dn * dxhat - dxhat_sum - xhat * dxhat_xhat_sum);
                    }
                }
                self.acc(grads, a, |dst| add_into(dst, &dx));
                self.acc(grads, gain, |dst| add_into(dst, &dgain));
                self.acc(grads, bias, |dst| add_into(dst, &dbias));
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
