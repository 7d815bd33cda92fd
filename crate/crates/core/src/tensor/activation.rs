use super::tape::Var;
use super::{numel, Element};
use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl<'t, T: Element> Var<'t, T> {
    pub fn relu(self) -> Var<'t, T> {
        let ia = self.id();
        let tape = self.tape();
        let value = tape.nodes()[ia]
            .value
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        tape.push(self.shape(), value, &[ia], move |nodes, _, g, sink| {
            let x = &nodes[ia].value;
            if let Some(dx) = sink.buffer(ia) {
                for ((d, &gi), &xi) in dx.iter_mut().zip(g).zip(x.iter()) {
                    if xi > T::zero() {
                        *d = *d + gi;
                    }
                }
            }
        })
    }

    /// Exact GELU, `x · Φ(x)`.
    pub fn gelu(self) -> Var<'t, T> {
        let ia = self.id();
        let tape = self.tape();
        let half = T::from_f64_lossy(0.5);
        let inv_sqrt2 = T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);
        let cdf: Vec<T> = tape.nodes()[ia]
            .value
            .iter()
            .map(|&v| half * (T::one() + (v * inv_sqrt2).erf()))
            .collect();
        let value = tape.nodes()[ia].value.iter().zip(&cdf).map(|(&v, &c)| v * c).collect();
        tape.push(self.shape(), value, &[ia], move |nodes, _, g, sink| {
            let x = &nodes[ia].value;
            let c = T::from_f64_lossy(FRAC_1_SQRT_2PI);
            if let Some(dx) = sink.buffer(ia) {
                for (((d, &gi), &xi), &phi) in dx.iter_mut().zip(g).zip(x.iter()).zip(&cdf) {
                    let pdf = c * (-half * xi * xi).exp();
                    *d = *d + gi * (phi + xi * pdf);
                }
            }
        })
    }

    /// Softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::dim("softmax", &shape, &[axis]));
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let ia = self.id();
        let tape = self.tape();
        let value = {
            let nodes = tape.nodes();
            let x = &nodes[ia].value;
            let mut y = vec![T::zero(); x.len()];
            if inner == 1 {
                for (xr, yr) in x.chunks_exact(len).zip(y.chunks_exact_mut(len)) {
                    let max = xr.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for (yi, &xi) in yr.iter_mut().zip(xr) {
                        *yi = (xi - max).exp();
                        total = total + *yi;
                    }
                    let inv = total.recip();
                    yr.iter_mut().for_each(|v| *v = *v * inv);
                }
            } else {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let max = (0..len).map(|k| x[at(k)]).fold(T::neg_infinity(), T::max);
                        let mut total = T::zero();
                        for k in 0..len {
                            let e = (x[at(k)] - max).exp();
                            y[at(k)] = e;
                            total = total + e;
                        }
                        for k in 0..len {
                            y[at(k)] = y[at(k)] / total;
                        }
                    }
                }
            }
            y
        };
        Ok(tape.push(shape, value, &[ia], move |_, y, g, sink| {
            if let Some(dx) = sink.buffer(ia) {
                if inner == 1 {
                    let rows = dx.chunks_exact_mut(len).zip(y.chunks_exact(len)).zip(g.chunks_exact(len));
                    for ((dr, yr), gr) in rows {
                        let dot = yr.iter().zip(gr).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                        for ((d, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = *d + yi * (gi - dot);
                        }
                    }
                    return;
                }
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let dot = (0..len).fold(T::zero(), |acc, k| acc + g[at(k)] * y[at(k)]);
                        for k in 0..len {
                            let j = at(k);
                            dx[j] = dx[j] + y[j] * (g[j] - dot);
                        }
                    }
                }
            }
        }))
    }
}
