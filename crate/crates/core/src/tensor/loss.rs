use super::tape::Var;
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Tolerance on target rows summing to one.
pub const TARGET_SUM_TOL: f64 = 1e-6;

impl<'t, T: Element> Var<'t, T> {
    /// Mean over the batch of `−Σ target · log softmax(logits)` for `[B, K]`
    /// logits and a matching matrix of target distributions.
    pub fn cross_entropy(self, targets: &Tensor<T>) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape.len() != 2 || targets.shape() != shape.as_slice() {
            return Err(Error::dim("cross_entropy", &shape, targets.shape()));
        }
        let (batch, k) = (shape[0], shape[1]);
        for (row, t) in targets.data().chunks_exact(k).enumerate() {
            let s: f64 = t.iter().map(|v| v.to_f64_lossy()).sum();
            if (s - 1.0).abs() > TARGET_SUM_TOL {
                return Err(Error::Input(format!("target row {row} sums to {s}, expected 1")));
            }
        }
        let t = targets.data().to_vec();
        let ia = self.id();
        let tape = self.tape();
        let (probs, loss) = {
            let nodes = tape.nodes();
            let z = &nodes[ia].value;
            let mut probs = vec![T::zero(); z.len()];
            let mut loss = 0.0f64;
            for b in 0..batch {
                let row = &z[b * k..(b + 1) * k];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
                for j in 0..k {
                    let logp = row[j] - lse;
                    probs[b * k + j] = logp.exp();
                    loss -= (t[b * k + j] * logp).to_f64_lossy();
                }
            }
            (probs, loss / batch as f64)
        };
        Ok(tape.push(Vec::new(), vec![T::from_f64_lossy(loss)], &[ia], move |_, _, g, sink| {
            if let Some(dz) = sink.buffer(ia) {
                let scale = g[0] / T::from_usize(batch).expect("batch");
                for b in 0..batch {
                    let span = b * k..(b + 1) * k;
                    let mass: T = t[span.clone()].iter().copied().sum();
                    for j in span {
                        dz[j] = dz[j] + scale * (probs[j] * mass - t[j]);
                    }
                }
            }
        }))
    }
}
