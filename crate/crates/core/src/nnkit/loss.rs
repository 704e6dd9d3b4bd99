use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Class;

use super::tensor::Tensor;

/// Per-class weights of the cross-entropy loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassWeights {
    pub background: f64,
    pub boundary: f64,
    pub cell: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self { background: 1.0, boundary: 10.0, cell: 5.0 }
    }
}

impl ClassWeights {
    pub fn uniform(w: f64) -> Self {
        Self { background: w, boundary: w, cell: w }
    }

    pub fn get(&self, class: Class) -> f64 {
        match class {
            Class::Background => self.background,
            Class::Boundary => self.boundary,
            Class::Cell => self.cell,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.background, self.boundary, self.cell];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) || ws.iter().all(|&w| w == 0.0) {
            return Err(Error::Config(format!("invalid class weights {ws:?}")));
        }
        Ok(())
    }
}

/// Class-weighted softmax cross-entropy averaged over pixels.
///
/// `scores` is `(n, 3, h, w)`; `targets` holds `n * h * w` classes in
/// `(sample, row, col)` order. Returns the loss and its gradient with
/// respect to the scores.
pub fn weighted_ce(scores: &Tensor, targets: &[Class], weights: &ClassWeights) -> Result<(f64, Tensor)> {
    let (n, c, h, w) = scores.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 class scores, got {c}")));
    }
    let hw = h * w;
    if targets.len() != n * hw {
        return Err(Error::Shape(format!("{} targets for {} pixels", targets.len(), n * hw)));
    }
    let count = (n * hw) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros_like(scores);
    let s = scores.data();
    for sample in 0..n {
        let base = sample * 3 * hw;
        for p in 0..hw {
            let z = [s[base + p], s[base + hw + p], s[base + 2 * hw + p]];
            let zmax = z[0].max(z[1]).max(z[2]);
            let e = z.map(|v| (v - zmax).exp());
            let sum = e[0] + e[1] + e[2];
            let t = targets[sample * hw + p];
            let ti = t.code() as usize;
            let wt = weights.get(t);
            loss += wt * (sum.ln() - (z[ti] - zmax));
            let g = grad.data_mut();
            for k in 0..3 {
                let softmax = e[k] / sum;
                let onehot = if k == ti { 1.0 } else { 0.0 };
                g[base + k * hw + p] = wt * (softmax - onehot) / count;
            }
        }
    }
    Ok((loss / count, grad))
}
