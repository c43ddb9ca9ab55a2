use std::collections::BTreeMap;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::{Module, Real};

#[derive(Debug, Clone)]
pub struct AdamSlot<T> {
    pub m: ArrayD<T>,
    pub v: ArrayD<T>,
}

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    #[serde(skip)]
    pub slots: BTreeMap<String, AdamSlot<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            slots: BTreeMap::new(),
        }
    }

    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &mut M) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let lr_t = T::lit(self.lr * bc2.sqrt() / bc1);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let eps = T::lit(self.eps * bc2.sqrt());
        let slots = &mut self.slots;
        module.visit_params("", &mut |name, p| {
            if !p.trainable {
                return;
            }
            let slot = slots.entry(name.to_string()).or_insert_with(|| AdamSlot {
                m: ArrayD::zeros(p.value.raw_dim()),
                v: ArrayD::zeros(p.value.raw_dim()),
            });
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(&mut slot.m)
                .and(&mut slot.v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    *w -= lr_t * *m / (v.sqrt() + eps);
                });
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{join, Init, Param};

    struct Quadratic {
        p: Param<f64>,
    }

    impl Module<f64> for Quadratic {
        fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
            f(&join(prefix, "p"), &mut self.p);
        }
    }

    #[test]
    fn minimizes_quadratic() {
        let mut q = Quadratic {
            p: Param::new(&[3], Init::Zeros),
        };
        q.p.value.fill(5.0);
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            q.p.grad = q.p.value.mapv(|v| 2.0 * (v - 1.0));
            opt.step(&mut q);
        }
        assert!(q.p.value.iter().all(|v| (v - 1.0).abs() < 1e-2));
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut q = Quadratic {
            p: Param::new(&[2], Init::Zeros),
        };
        q.p.value.fill(0.3);
        let mut opt = Adam::new(2e-4);
        opt.step(&mut q);
        assert!(q.p.value.iter().all(|&v| v == 0.3));
    }
}
