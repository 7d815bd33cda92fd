use serde::{Deserialize, Serialize};

use super::tape::Var;
use super::Element;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running statistics for batch norm. Starts at mean 0, var 1.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

impl<'t, T: Element> Var<'t, T> {
    /// Batch normalization over `[B, C, H, W]` with per-channel gain and bias.
    ///
    /// In [`Mode::Train`] the batch statistics normalize the input and are
    /// folded into `stats` with weight `momentum` (unbiased variance). In
    /// [`Mode::Eval`] `stats` is used as-is.
    pub fn batchnorm2d(
        self,
        gain: Var<'t, T>,
        bias: Var<'t, T>,
        stats: &mut RunningStats<T>,
        mode: Mode,
        momentum: f64,
        eps: f64,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&gain);
        self.same_tape(&bias);
        let xs = self.shape();
        if xs.len() != 4 {
            return Err(Error::dim("batchnorm2d", &xs, &[]));
        }
        let (batch, ch, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        for p in [&gain, &bias] {
            if p.shape() != [ch] {
                return Err(Error::dim("batchnorm2d params", &xs, &p.shape()));
            }
        }
        if stats.mean.len() != ch || stats.var.len() != ch {
            return Err(Error::dim("batchnorm2d stats", &xs, &[stats.mean.len()]));
        }
        let count = batch * plane;
        let eps_t = T::from_f64_lossy(eps);
        let (ix, ig, ib) = (self.id(), gain.id(), bias.id());
        let tape = self.tape();

        let (mean, invstd) = match mode {
            Mode::Train => {
                let nodes = tape.nodes();
                let x = &nodes[ix].value;
                let mut mean = vec![T::zero(); ch];
                let mut var = vec![T::zero(); ch];
                for c in 0..ch {
                    let mut s = 0.0;
                    for b in 0..batch {
                        let off = (b * ch + c) * plane;
                        s += x[off..off + plane].iter().map(|v| v.to_f64_lossy()).sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut ss = 0.0;
                    for b in 0..batch {
                        let off = (b * ch + c) * plane;
                        ss += x[off..off + plane]
                            .iter()
                            .map(|v| (v.to_f64_lossy() - m).powi(2))
                            .sum::<f64>();
                    }
                    mean[c] = T::from_f64_lossy(m);
                    var[c] = T::from_f64_lossy(ss / count as f64);
                    let unbiased = if count > 1 { ss / (count - 1) as f64 } else { 0.0 };
                    let mom = T::from_f64_lossy(momentum);
                    stats.mean[c] = (T::one() - mom) * stats.mean[c] + mom * mean[c];
                    stats.var[c] = (T::one() - mom) * stats.var[c] + mom * T::from_f64_lossy(unbiased);
                }
                let invstd = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect::<Vec<_>>();
                (mean, invstd)
            }
            Mode::Eval => (
                stats.mean.clone(),
                stats.var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect(),
            ),
        };

        let (xhat, value) = {
            let nodes = tape.nodes();
            let (x, g, bv) = (&nodes[ix].value, &nodes[ig].value, &nodes[ib].value);
            let mut xhat = vec![T::zero(); x.len()];
            let mut out = vec![T::zero(); x.len()];
            for b in 0..batch {
                for c in 0..ch {
                    let off = (b * ch + c) * plane;
                    for i in off..off + plane {
                        xhat[i] = (x[i] - mean[c]) * invstd[c];
                        out[i] = g[c] * xhat[i] + bv[c];
                    }
                }
            }
            (xhat, out)
        };

        Ok(tape.push(xs, value, &[ix, ig, ib], move |nodes, _, g, sink| {
            let gain = &nodes[ig].value;
            let mut sum_g = vec![T::zero(); ch];
            let mut sum_gx = vec![T::zero(); ch];
            for b in 0..batch {
                for c in 0..ch {
                    let off = (b * ch + c) * plane;
                    for i in off..off + plane {
                        sum_g[c] = sum_g[c] + g[i];
                        sum_gx[c] = sum_gx[c] + g[i] * xhat[i];
                    }
                }
            }
            sink.add(ig, &sum_gx);
            sink.add(ib, &sum_g);
            if let Some(dx) = sink.buffer(ix) {
                let n = T::from_usize(count).expect("count");
                for b in 0..batch {
                    for c in 0..ch {
                        let off = (b * ch + c) * plane;
                        for i in off..off + plane {
                            let d = match mode {
                                Mode::Train => {
                                    gain[c] * invstd[c] / n
                                        * (n * g[i] - sum_g[c] - xhat[i] * sum_gx[c])
                                }
                                Mode::Eval => g[i] * gain[c] * invstd[c],
                            };
                            dx[i] = dx[i] + d;
                        }
                    }
                }
            }
        }))
    }

    /// Layer normalization over the last axis.
    pub fn layernorm(self, gain: Var<'t, T>, bias: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        self.same_tape(&gain);
        self.same_tape(&bias);
        let xs = self.shape();
        let dim = *xs.last().ok_or_else(|| Error::dim("layernorm", &xs, &[]))?;
        for p in [&gain, &bias] {
            if p.shape() != [dim] {
                return Err(Error::dim("layernorm params", &xs, &p.shape()));
            }
        }
        let eps_t = T::from_f64_lossy(eps);
        let n = T::from_usize(dim).expect("dim");
        let (ix, ig, ib) = (self.id(), gain.id(), bias.id());
        let tape = self.tape();
        let (xhat, invstd, value) = {
            let nodes = tape.nodes();
            let (x, g, bv) = (&nodes[ix].value, &nodes[ig].value, &nodes[ib].value);
            let rows = x.len() / dim;
            let mut xhat = vec![T::zero(); x.len()];
            let mut invstd = vec![T::zero(); rows];
            let mut out = vec![T::zero(); x.len()];
            for r in 0..rows {
                let row = &x[r * dim..(r + 1) * dim];
                let mean = row.iter().copied().sum::<T>() / n;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                let inv = T::one() / (var + eps_t).sqrt();
                invstd[r] = inv;
                for j in 0..dim {
                    let i = r * dim + j;
                    xhat[i] = (x[i] - mean) * inv;
                    out[i] = g[j] * xhat[i] + bv[j];
                }
            }
            (xhat, invstd, out)
        };
        Ok(tape.push(xs, value, &[ix, ig, ib], move |nodes, _, g, sink| {
            let gain = &nodes[ig].value;
            let mut dgain = vec![T::zero(); dim];
            let mut dbias = vec![T::zero(); dim];
            for (grow, xrow) in g.chunks_exact(dim).zip(xhat.chunks_exact(dim)) {
                for j in 0..dim {
                    dgain[j] = dgain[j] + grow[j] * xrow[j];
                    dbias[j] = dbias[j] + grow[j];
                }
            }
            sink.add(ig, &dgain);
            sink.add(ib, &dbias);
            if let Some(dx) = sink.buffer(ix) {
                for (r, &inv) in invstd.iter().enumerate() {
                    let span = r * dim..(r + 1) * dim;
                    let (grow, xrow) = (&g[span.clone()], &xhat[span.clone()]);
                    let mut s = T::zero();
                    let mut sx = T::zero();
                    for j in 0..dim {
                        let d = grow[j] * gain[j];
                        s = s + d;
                        sx = sx + d * xrow[j];
                    }
                    for (j, out) in dx[span].iter_mut().enumerate() {
                        let d = grow[j] * gain[j];
                        *out = *out + inv / n * (n * d - s - xrow[j] * sx);
                    }
                }
            }
        }))
    }
}
