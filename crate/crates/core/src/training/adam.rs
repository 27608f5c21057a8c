//! Adaptive-moment optimizer with bias correction; moments are checkpointed
//! so a resumed run is bit-identical to an uninterrupted one.

use std::collections::BTreeMap;

use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Tensor<f32>>,
    pub v: BTreeMap<String, Tensor<f32>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update over (name, parameter, gradient) triples. Zero learning
    /// rate still advances moments but leaves parameters bit-identical.
    pub fn step(&mut self, updates: Vec<(&str, &mut Tensor<f32>, &Tensor<f32>)>) {
        self.t += 1;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let bc1 = 1.0 - (self.beta1).powi(self.t as i32);
        let bc2 = 1.0 - (self.beta2).powi(self.t as i32);
        let lr = self.lr as f32;
        let eps = self.eps as f32;
        for (name, param, grad) in updates {
            debug_assert_eq!(param.dim(), grad.dim(), "gradient shape for {name}");
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(param.dim()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(param.dim()));
            ndarray::Zip::from(&mut *m).and(grad).for_each(|mv, &g| {
                *mv = b1 * *mv + (1.0 - b1) * g;
            });
            ndarray::Zip::from(&mut *v).and(grad).for_each(|vv, &g| {
                *vv = b2 * *vv + (1.0 - b2) * g * g;
            });
            if lr != 0.0 {
                ndarray::Zip::from(param).and(&*m).and(&*v).for_each(|p, &mv, &vv| {
                    let mhat = mv / bc1 as f32;
                    let vhat = vv / bc2 as f32;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
            }
        }
    }
}
