//! Adam with externally visible state for checkpointing.

use tch::Tensor;

use crate::checkpoint::Checkpoint;
use crate::Result;

#[derive(Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i64,
    params: Vec<(String, Tensor)>,
    lr_scale: Vec<f64>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: Vec<(String, Tensor)>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let m = params.iter().map(|(_, p)| p.zeros_like().detach()).collect();
        let v = params.iter().map(|(_, p)| p.zeros_like().detach()).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            lr_scale: vec![1.0; params.len()],
            params,
            m,
            v,
        }
    }

    /// Multiplies the step size of every parameter whose name starts with `prefix`.
    pub fn scale_lr(&mut self, prefix: &str, factor: f64) {
        for ((name, _), s) in self.params.iter().zip(&mut self.lr_scale) {
            if name.starts_with(prefix) {
                *s *= factor;
            }
        }
    }

    pub fn steps(&self) -> i64 {
        self.step
    }

    pub fn zero_grad(&self) {
        for (_, p) in &self.params {
            let mut g = p.grad();
            if g.defined() {
                let _ = g.detach_().zero_();
            }
        }
    }

    pub fn step(&mut self) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        tch::no_grad(|| {
            let groups = self.params.iter().zip(&self.lr_scale).zip(&mut self.m).zip(&mut self.v);
            for ((((_, p), scale), m), v) in groups {
                let g = p.grad();
                if !g.defined() {
                    continue;
                }
                let _ = m.g_mul_scalar_(self.beta1).g_add_(&(&g * (1.0 - self.beta1)));
                let _ = v.g_mul_scalar_(self.beta2).g_add_(&(&g * &g * (1.0 - self.beta2)));
                let denom = v.sqrt() / bc2.sqrt() + self.eps;
                let update = &*m / denom * (self.lr * scale / bc1);
                let _ = p.shallow_clone().g_sub_(&update);
            }
        });
    }

    /// Moment buffers and the step counter, named under `prefix`.
    pub fn state(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![(format!("{prefix}step"), Tensor::from_slice(&[self.step]))];
        for ((name, _), (m, v)) in self.params.iter().zip(self.m.iter().zip(&self.v)) {
            out.push((format!("{prefix}{name}.m"), m.shallow_clone()));
            out.push((format!("{prefix}{name}.v"), v.shallow_clone()));
        }
        out
    }

    pub fn restore(&mut self, prefix: &str, ck: &Checkpoint, path: &std::path::Path) -> Result<()> {
        let moments: Vec<(String, Tensor)> = self.state("").into_iter().skip(1).collect();
        ck.restore_into(prefix, &moments, path)?;
        let step = ck.get(&format!("{prefix}step")).ok_or_else(|| crate::Error::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!("missing {prefix}step"),
        })?;
        self.step = step.int64_value(&[0]);
        Ok(())
    }
}
