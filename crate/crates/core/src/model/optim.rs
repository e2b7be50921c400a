use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use ndarray::Array2;

use super::params::{Linear, Parameters};

/// A named collection of tensors the optimizer can update.
pub trait TensorSet: Clone {
    fn named_tensors(&self) -> Vec<(String, &Array2<f64>)>;
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>));

    fn zeroed(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, t| t.fill(0.0));
        z
    }
}

impl TensorSet for Parameters {
    fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        self.tensors()
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.for_each_mut(f)
    }
}

impl TensorSet for Linear {
    fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// The learning rate ramps linearly from `lr / warmup_steps` to `lr`
    /// over the first `warmup_steps` updates.
    #[serde(default)]
    pub warmup_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
            warmup_steps: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<P = Parameters> {
    pub config: AdamConfig,
    m: P,
    v: P,
    t: u64,
}

impl<P: TensorSet> Adam<P> {
    pub fn new(config: AdamConfig, like: &P) -> Self {
        Self {
            config,
            m: like.zeroed(),
            v: like.zeroed(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Learning rate of update number `self.t` (1-based).
    fn current_learning_rate(&self) -> f64 {
        let c = &self.config;
        if self.t < c.warmup_steps {
            c.learning_rate * self.t as f64 / c.warmup_steps as f64
        } else {
            c.learning_rate
        }
    }

    /// Applies one update and returns the pre-clip gradient norm. Parameters
    /// are left untouched when any gradient entry is non-finite.
    pub fn step(&mut self, params: &mut P, grads: &P) -> Result<f64> {
        let g: Vec<_> = grads.named_tensors();
        if let Some((name, _)) = g.iter().find(|(_, t)| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
        let norm = g.iter().map(|(_, t)| t.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let learning_rate = self.current_learning_rate();
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let g: Vec<_> = g.into_iter().map(|(_, t)| t).collect();
        let mut ms = Vec::with_capacity(g.len());
        let mut i = 0;
        self.m.visit_mut(&mut |_, m| {
            m.zip_mut_with(g[i], |m, &g| *m = beta1 * *m + (1.0 - beta1) * g * scale);
            ms.push(m.clone());
            i += 1;
        });
        let mut i = 0;
        let mut vs = Vec::with_capacity(g.len());
        self.v.visit_mut(&mut |_, v| {
            v.zip_mut_with(g[i], |v, &g| {
                let g = g * scale;
                *v = beta2 * *v + (1.0 - beta2) * g * g
            });
            vs.push(v.clone());
            i += 1;
        });
        let mut i = 0;
        params.visit_mut(&mut |_, p| {
            let (m, v) = (&ms[i], &vs[i]);
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                *p -= learning_rate * (m / bc1) / ((v / bc2).sqrt() + eps);
            });
            i += 1;
        });
        Ok(norm)
    }
}
