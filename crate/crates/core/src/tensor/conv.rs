use super::tape::Var;
use super::Element;
use crate::error::{Error, Result};

/// Output extent of a convolution along one axis, or `None` when the kernel
/// does not fit inside the padded input.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Calls `f(col_index, image_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let cols = self.col_cols();
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for oy in 0..self.ho {
                        let y = (oy * self.sh + ki) as isize - self.ph as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let src_row = (c * self.h + y as usize) * self.w;
                        let dst_row = row * cols + oy * self.wo;
                        for ox in 0..self.wo {
                            let x = (ox * self.sw + kj) as isize - self.pw as isize;
                            if x < 0 || x >= self.w as isize {
                                continue;
                            }
                            f(dst_row + ox, src_row + x as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Element>(&self, image: &[T], cols: &mut [T]) {
        cols.fill(T::zero());
        self.for_each_tap(|dst, src| cols[dst] = image[src]);
    }

    fn col2im_add<T: Element>(&self, cols: &[T], image: &mut [T]) {
        self.for_each_tap(|src, dst| image[dst] = image[dst] + cols[src]);
    }
}

impl<'t, T: Element> Var<'t, T> {
    /// 2-D cross-correlation of `[B, C, H, W]` input with `[O, C, kh, kw]`
    /// weights and an optional `[O]` bias.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: [usize; 2],
        padding: [usize; 2],
    ) -> Result<Var<'t, T>> {
        self.same_tape(&weight);
        let xs = self.shape();
        let ws = weight.shape();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(Error::dim("conv2d", &xs, &ws));
        }
        if let Some(b) = &bias {
            self.same_tape(b);
            if b.shape() != [ws[0]] {
                return Err(Error::dim("conv2d bias", &ws, &b.shape()));
            }
        }
        let (batch, o) = (xs[0], ws[0]);
        let ho = conv_output_extent(xs[2], ws[2], stride[0], padding[0]);
        let wo = conv_output_extent(xs[3], ws[3], stride[1], padding[1]);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(Error::Config(format!(
                "conv2d output extent not positive: input {xs:?}, kernel {ws:?}, stride {stride:?}, padding {padding:?}"
            )));
        };
        let geo = Geometry {
            c: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            sh: stride[0],
            sw: stride[1],
            ph: padding[0],
            pw: padding[1],
            ho,
            wo,
        };
        let (rows, cols_n) = (geo.col_rows(), geo.col_cols());
        let in_plane = geo.c * geo.h * geo.w;
        let out_plane = o * cols_n;

        let ix = self.id();
        let iw = weight.id();
        let ib = bias.map(|b| b.id());
        let tape = self.tape();
        let value = {
            let nodes = tape.nodes();
            let (x, w) = (&nodes[ix].value, &nodes[iw].value);
            let mut out = vec![T::zero(); batch * out_plane];
            let mut cols = vec![T::zero(); rows * cols_n];
            for b in 0..batch {
                geo.im2col(&x[b * in_plane..(b + 1) * in_plane], &mut cols);
                let dst = &mut out[b * out_plane..(b + 1) * out_plane];
                T::gemm(o, rows, cols_n, w, false, &cols, false, dst, false);
                if let Some(ib) = ib {
                    for (row, &bv) in dst.chunks_exact_mut(cols_n).zip(&nodes[ib].value) {
                        row.iter_mut().for_each(|v| *v = *v + bv);
                    }
                }
            }
            out
        };
        let mut parents = vec![ix, iw];
        parents.extend(ib);
        Ok(tape.push(vec![batch, o, ho, wo], value, &parents, move |nodes, _, g, sink| {
            let (x, w) = (&nodes[ix].value, &nodes[iw].value);
            let mut cols = vec![T::zero(); rows * cols_n];
            if sink.wants(iw) {
                let dw = sink.buffer(iw).expect("weight grad");
                for b in 0..batch {
                    geo.im2col(&x[b * in_plane..(b + 1) * in_plane], &mut cols);
                    let gb = &g[b * out_plane..(b + 1) * out_plane];
                    T::gemm(o, cols_n, rows, gb, false, &cols, true, dw, true);
                }
            }
            if let Some(dx) = sink.buffer(ix) {
                for b in 0..batch {
                    let gb = &g[b * out_plane..(b + 1) * out_plane];
                    T::gemm(rows, o, cols_n, w, true, gb, false, &mut cols, false);
                    geo.col2im_add(&cols, &mut dx[b * in_plane..(b + 1) * in_plane]);
                }
            }
            if let Some(db) = ib.and_then(|ib| sink.buffer(ib)) {
                for b in 0..batch {
                    let gb = &g[b * out_plane..(b + 1) * out_plane];
                    for (d, row) in db.iter_mut().zip(gb.chunks_exact(cols_n)) {
                        *d = *d + row.iter().copied().sum();
                    }
                }
            }
        }))
    }
}
