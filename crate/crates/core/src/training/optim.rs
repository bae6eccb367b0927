use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale all gradients by `max_norm / g` when their global L2 norm `g`
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_gradients<S: AsRef<str>>(grads: &mut [Vec<f64>], names: &[S], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::contract(format!("clip norm must be positive, got {max_norm}")));
    }
    let mut sq = 0.0;
    for (i, g) in grads.iter().enumerate() {
        if let Some(k) = g.iter().position(|x| !x.is_finite()) {
            let name = names.get(i).map_or("<unnamed>", |s| s.as_ref());
            return Err(Error::Numeric {
                param: name.to_string(),
                detail: format!("gradient entry {k} is {}", g[k]),
            });
        }
        sq += g.iter().map(|x| x * x).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    Ok(norm)
}

/// Adam with bias correction; one moment pair per parameter array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed steps.
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m,
            v,
        }
    }

    /// Start a step; call once before the [`apply`](Self::apply) calls.
    pub fn tick(&mut self) {
        self.t += 1;
    }

    /// Update one array with its gradient, using the current step count.
    pub fn apply(&mut self, i: usize, param: &mut [f64], grad: &[f64], lr: f64) {
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (m, v) = (&mut self.m[i], &mut self.v[i]);
        for k in 0..param.len() {
            let g = grad[k];
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            param[k] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }

    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>], lr: f64) {
        self.tick();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.apply(i, p, g, lr);
        }
    }

    pub fn matches(&self, sizes: &[usize]) -> bool {
        self.m.len() == sizes.len()
            && self.m.iter().zip(sizes).all(|(m, &n)| m.len() == n)
            && self.v.iter().zip(sizes).all(|(v, &n)| v.len() == n)
    }
}
