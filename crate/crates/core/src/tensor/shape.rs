use super::tape::Var;
use super::{numel, Element};
use crate::error::{Error, Result};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Walks the permuted layout in output order, calling `f(out, src)` on each
/// contiguous run of the innermost output axis.
fn permute_walk(shape: &[usize], perm: &[usize], mut f: impl FnMut(usize, usize, usize, usize)) {
    let rank = perm.len();
    if rank == 0 {
        f(0, 0, 1, 1);
        return;
    }
    let src_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let moved: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let total = numel(shape);
    if total == 0 {
        return;
    }
    let inner = out_shape[rank - 1];
    let inner_stride = moved[rank - 1];
    let mut counter = vec![0usize; rank];
    let mut base = 0usize;
    let mut out = 0usize;
    while out < total {
        f(out, base, inner, inner_stride);
        out += inner;
        let mut axis = rank - 1;
        while axis > 0 {
            axis -= 1;
            counter[axis] += 1;
            base += moved[axis];
            if counter[axis] < out_shape[axis] {
                break;
            }
            base -= moved[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let src = self.shape();
        if numel(&src) != numel(shape) {
            return Err(Error::dim("reshape", &src, shape));
        }
        let ia = self.id();
        let tape = self.tape();
        let value = tape.nodes()[ia].value.clone();
        Ok(tape.push(shape.to_vec(), value, &[ia], move |_, _, g, sink| sink.add(ia, g)))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let src = self.shape();
        let mut seen = vec![false; src.len()];
        if perm.len() != src.len() || perm.iter().any(|&p| p >= src.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim("permute", &src, perm));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| src[p]).collect();
        let (shape, order) = (src.clone(), perm.to_vec());
        let ia = self.id();
        let tape = self.tape();
        let value = {
            let nodes = tape.nodes();
            let a = &nodes[ia].value;
            let mut out = vec![T::zero(); a.len()];
            permute_walk(&shape, &order, |o, s, n, stride| {
                let dst = &mut out[o..o + n];
                if stride == 1 {
                    dst.copy_from_slice(&a[s..s + n]);
                } else {
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d = a[s + j * stride];
                    }
                }
            });
            out
        };
        Ok(tape.push(out_shape, value, &[ia], move |_, _, g, sink| {
            if let Some(da) = sink.buffer(ia) {
                permute_walk(&shape, &order, |o, s, n, stride| {
                    for (j, &gi) in g[o..o + n].iter().enumerate() {
                        let i = s + j * stride;
                        da[i] = da[i] + gi;
                    }
                });
            }
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let rank = self.shape().len();
        if rank < 2 {
            return Err(Error::dim("transpose", &self.shape(), &[]));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(&perm)
    }

    /// Picks `index` along `axis`, dropping that axis.
    pub fn select(self, axis: usize, index: usize) -> Result<Var<'t, T>> {
        let src = self.shape();
        if axis >= src.len() || index >= src[axis] {
            return Err(Error::dim("select", &src, &[axis, index]));
        }
        let outer = numel(&src[..axis]);
        let extent = src[axis];
        let inner = numel(&src[axis + 1..]);
        let mut out_shape = src.clone();
        out_shape.remove(axis);
        let ia = self.id();
        let tape = self.tape();
        let value = {
            let nodes = tape.nodes();
            let a = &nodes[ia].value;
            let mut out = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                let start = (o * extent + index) * inner;
                out.extend_from_slice(&a[start..start + inner]);
            }
            out
        };
        Ok(tape.push(out_shape, value, &[ia], move |_, _, g, sink| {
            if let Some(da) = sink.buffer(ia) {
                for o in 0..outer {
                    let start = (o * extent + index) * inner;
                    for (d, &gi) in da[start..start + inner].iter_mut().zip(&g[o * inner..]) {
                        *d = *d + gi;
                    }
                }
            }
        }))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn cat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("cat of zero tensors".into()))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::dim("cat", &base, &[axis]));
        }
        let mut extents = Vec::with_capacity(parts.len());
        for p in parts {
            first.same_tape(p);
            let s = p.shape();
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::dim("cat", &base, &s));
            }
            extents.push(s[axis]);
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let total: usize = extents.iter().sum();
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id()).collect();
        let tape = first.tape();
        let value = {
            let nodes = tape.nodes();
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for (&id, &e) in ids.iter().zip(&extents) {
                    let chunk = e * inner;
                    out.extend_from_slice(&nodes[id].value[o * chunk..(o + 1) * chunk]);
                }
            }
            out
        };
        let parents = ids.clone();
        Ok(tape.push(out_shape, value, &parents, move |_, _, g, sink| {
            let row = total * inner;
            let mut offset = 0;
            for (&id, &e) in ids.iter().zip(&extents) {
                let chunk = e * inner;
                if let Some(d) = sink.buffer(id) {
                    for o in 0..outer {
                        let src = &g[o * row + offset..o * row + offset + chunk];
                        for (di, &gi) in d[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                            *di = *di + gi;
                        }
                    }
                }
                offset += chunk;
            }
        }))
    }

    /// Repeats a tensor whose leading extent is 1 `count` times along that
    /// axis.
    pub fn expand_leading(self, count: usize) -> Result<Var<'t, T>> {
        let src = self.shape();
        if src.first() != Some(&1) || count == 0 {
            return Err(Error::dim("expand_leading", &src, &[count]));
        }
        let mut out_shape = src;
        out_shape[0] = count;
        let ia = self.id();
        let tape = self.tape();
        let value = {
            let nodes = tape.nodes();
            nodes[ia].value.repeat(count)
        };
        Ok(tape.push(out_shape, value, &[ia], move |_, _, g, sink| {
            if let Some(da) = sink.buffer(ia) {
                let n = da.len();
                for chunk in g.chunks_exact(n) {
                    for (d, &gi) in da.iter_mut().zip(chunk) {
                        *d = *d + gi;
                    }
                }
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn transpose_reorders() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::from_fn([2, 3], |i| i as f64));
        assert_eq!(x.transpose().unwrap().value().data(), &[0., 3., 1., 4., 2., 5.]);
        assert_eq!(x.permute(&[0, 1]).unwrap().value().data(), &[0., 1., 2., 3., 4., 5.]);
    }

    #[test]
    fn permute_three_axes() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::from_fn([2, 3, 4], |i| i as f64));
        let y = x.permute(&[2, 0, 1]).unwrap().value();
        assert_eq!(y.shape(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(y.at(&[c, a, b]), (a * 12 + b * 4 + c) as f64);
                }
            }
        }
    }

    #[test]
    fn select_and_cat() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::from_fn([2, 3, 2], |i| i as f64));
        let mid = x.select(1, 1).unwrap().value();
        assert_eq!(mid.shape(), &[2, 2]);
        assert_eq!(mid.data(), &[2., 3., 8., 9.]);
        let y = tape.leaf(&Tensor::from_fn([2, 1, 2], |i| -(i as f64)));
        let c = super::Var::cat(&[y, x], 1).unwrap().value();
        assert_eq!(c.shape(), &[2, 4, 2]);
        assert_eq!(c.at(&[1, 0, 1]), -3.);
        assert_eq!(c.at(&[1, 3, 1]), 11.);
    }

    #[test]
    fn permute_rejects_bad_axes() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::zeros([2, 3]));
        assert!(x.permute(&[0, 0]).is_err());
        assert!(x.permute(&[0]).is_err());
    }
}
