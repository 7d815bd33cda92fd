use super::tape::Var;
use super::{numel, Element};
use crate::error::{Error, Result};

impl<'t, T: Element> Var<'t, T> {
    /// Matrix product over the last two axes.
    ///
    /// `self` is `[..., m, k]`. `rhs` is either `[..., k, n]` with identical
    /// leading axes, or a plain `[k, n]` matrix shared across the batch.
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.product(rhs, false)
    }

    /// `self · rhsᵀ` over the last two axes, with `rhs` shaped `[..., n, k]`.
    /// Same result as `matmul(rhs.transpose())` without the copy.
    pub fn matmul_nt(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.product(rhs, true)
    }

    fn product(self, rhs: Var<'t, T>, rhs_t: bool) -> Result<Var<'t, T>> {
        self.same_tape(&rhs);
        let op = if rhs_t { "matmul_nt" } else { "matmul" };
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::dim(op, &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (r0, r1) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (kb, n) = if rhs_t { (r1, r0) } else { (r0, r1) };
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        let shared = batch_b.is_empty();
        if k != kb || (!shared && batch_a != batch_b) {
            return Err(Error::dim(op, &sa, &sb));
        }
        let batch = numel(batch_a);
        let mut out_shape = batch_a.to_vec();
        out_shape.extend([m, n]);

        let (ia, ib) = (self.id(), rhs.id());
        let tape = self.tape();
        let value = {
            let nodes = tape.nodes();
            let (a, b) = (&nodes[ia].value, &nodes[ib].value);
            let mut c = vec![T::zero(); batch * m * n];
            if shared {
                T::gemm(batch * m, k, n, a, false, b, rhs_t, &mut c, false);
            } else {
                for i in 0..batch {
                    let (ai, bi) = (&a[i * m * k..], &b[i * k * n..]);
                    T::gemm(m, k, n, ai, false, bi, rhs_t, &mut c[i * m * n..], false);
                }
            }
            c
        };
        Ok(tape.push(out_shape, value, &[ia, ib], move |nodes, _, g, sink| {
            let (a, b) = (&nodes[ia].value, &nodes[ib].value);
            let (count, rows) = if shared { (1, batch * m) } else { (batch, m) };
            let b_step = if shared { 0 } else { k * n };
            if let Some(da) = sink.buffer(ia) {
                // dA = G·Bᵀ, or G·B when B arrived transposed
                for i in 0..count {
                    let (gi, bi) = (&g[i * rows * n..], &b[i * b_step..]);
                    T::gemm(rows, n, k, gi, false, bi, !rhs_t, &mut da[i * rows * k..], true);
                }
            }
            if let Some(db) = sink.buffer(ib) {
                for i in 0..count {
                    let (ai, gi) = (&a[i * rows * k..], &g[i * rows * n..]);
                    let dbi = &mut db[i * b_step..];
                    if rhs_t {
                        // d(Bᵀ) = Aᵀ·G, so dB = Gᵀ·A
                        T::gemm(n, rows, k, gi, true, ai, false, dbi, true);
                    } else {
                        T::gemm(k, rows, n, ai, true, gi, false, dbi, true);
                    }
                }
            }
        }))
    }

    /// Elementwise sum where `rhs`'s shape is a suffix of `self`'s shape
    /// (bias and embedding broadcasts).
    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&rhs);
        let (sa, sb) = (self.shape(), rhs.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != sb[..] {
            return Err(Error::dim("add", &sa, &sb));
        }
        let (ia, ib) = (self.id(), rhs.id());
        let tape = self.tape();
        let value = {
            let nodes = tape.nodes();
            let (a, b) = (&nodes[ia].value, &nodes[ib].value);
            let mut out = a.clone();
            for chunk in out.chunks_exact_mut(b.len()) {
                for (o, &v) in chunk.iter_mut().zip(b) {
                    *o = *o + v;
                }
            }
            out
        };
        Ok(tape.push(sa, value, &[ia, ib], move |_, _, g, sink| {
            sink.add(ia, g);
            if let Some(db) = sink.buffer(ib) {
                let nb = db.len();
                for chunk in g.chunks_exact(nb) {
                    for (d, &v) in db.iter_mut().zip(chunk) {
                        *d = *d + v;
                    }
                }
            }
        }))
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&rhs);
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa != sb {
            return Err(Error::dim("mul", &sa, &sb));
        }
        let (ia, ib) = (self.id(), rhs.id());
        let tape = self.tape();
        let value = {
            let nodes = tape.nodes();
            let (a, b) = (&nodes[ia].value, &nodes[ib].value);
            a.iter().zip(b).map(|(&x, &y)| x * y).collect()
        };
        Ok(tape.push(sa, value, &[ia, ib], move |nodes, _, g, sink| {
            let (a, b) = (&nodes[ia].value, &nodes[ib].value);
            if let Some(da) = sink.buffer(ia) {
                for ((d, &gi), &bi) in da.iter_mut().zip(g).zip(b.iter()) {
                    *d = *d + gi * bi;
                }
            }
            if let Some(db) = sink.buffer(ib) {
                for ((d, &gi), &ai) in db.iter_mut().zip(g).zip(a.iter()) {
                    *d = *d + gi * ai;
                }
            }
        }))
    }

    pub fn scale(self, factor: f64) -> Var<'t, T> {
        let s = T::from_f64_lossy(factor);
        let ia = self.id();
        let tape = self.tape();
        let value = tape.nodes()[ia].value.iter().map(|&x| x * s).collect();
        tape.push(self.shape(), value, &[ia], move |_, _, g, sink| {
            if let Some(da) = sink.buffer(ia) {
                for (d, &gi) in da.iter_mut().zip(g) {
                    *d = *d + gi * s;
                }
            }
        })
    }

    /// Sum of all elements as a scalar (shape `[]`).
    pub fn sum(self) -> Var<'t, T> {
        let ia = self.id();
        let tape = self.tape();
        let total = tape.nodes()[ia].value.iter().copied().sum();
        tape.push(Vec::new(), vec![total], &[ia], move |_, _, g, sink| {
            if let Some(da) = sink.buffer(ia) {
                for d in da.iter_mut() {
                    *d = *d + g[0];
                }
            }
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::{Tape, Tensor};

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let tape = Tape::new();
        let eye = tape.leaf(&t(&[2, 2], &[1., 0., 0., 1.]));
        let m = tape.leaf(&t(&[2, 2], &[1., 2., 3., 4.]));
        let out = eye.matmul(m).unwrap().value();
        assert_eq!(out.data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn row_times_column_is_dot_product() {
        let tape = Tape::new();
        let a = tape.leaf(&t(&[1, 2], &[1., 2.]));
        let b = tape.leaf(&t(&[2, 1], &[3., 4.]));
        let out = a.matmul(b).unwrap().value();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data(), &[11.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(&Tensor::<f64>::zeros([2, 3]));
        let b = tape.leaf(&Tensor::<f64>::zeros([2, 3]));
        let err = a.matmul(b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn matmul_backward_matches_transpose_rule() {
        let tape = Tape::new();
        let a = tape.leaf(&t(&[1, 2], &[1., 2.]).requiring_grad());
        let b = tape.leaf(&t(&[2, 1], &[3., 4.]).requiring_grad());
        let out = a.matmul(b).unwrap().sum();
        let grads = tape.backward(out).unwrap();
        assert_eq!(grads.slice(a).unwrap(), &[3., 4.]);
        assert_eq!(grads.slice(b).unwrap(), &[1., 2.]);
    }

    #[test]
    fn broadcast_add_sums_bias_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::<f64>::zeros([3, 2]).requiring_grad());
        let b = tape.leaf(&t(&[2], &[1., -1.]).requiring_grad());
        let y = x.add(b).unwrap();
        assert_eq!(y.value().data(), &[1., -1., 1., -1., 1., -1.]);
        let grads = tape.backward(y.sum()).unwrap();
        assert_eq!(grads.slice(b).unwrap(), &[3., 3.]);
        assert!(tape.leaf(&Tensor::<f64>::zeros([3])).add(b).is_err());
    }
}
