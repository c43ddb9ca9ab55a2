//! Minimal CPU training engine: dense NCHW tensors on `ndarray`, layers with
//! hand-written backward passes, and Adam.
//!
//! Layers cache what they need for the backward pass during a training
//! forward. Everything is generic over [`Real`] so the same code runs in
//! `f32` for training and `f64` for gradient checking.

mod layers;
mod optim;

pub use layers::{
    AvgPool2, BasicBlock, BatchNorm2d, Conv2d, ConvBlock, Linear, MaxPool3s2, Relu, Upsample2x,
};
pub use optim::{Adam, AdamSlot};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{ArrayD, IxDyn, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

/// Floating point element type usable by the engine.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// How a parameter is filled by [`initialize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// He-normal with the given fan-in.
    KaimingNormal { fan_in: usize },
    Uniform { bound: f64 },
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
    pub init: Init,
    /// Buffers (batch-norm running statistics) are saved but never optimized.
    pub trainable: bool,
}

impl<T: Real> Param<T> {
    pub fn new(shape: &[usize], init: Init) -> Self {
        Self {
            value: ArrayD::zeros(IxDyn(shape)),
            grad: ArrayD::zeros(IxDyn(shape)),
            init,
            trainable: true,
        }
    }

    pub fn buffer(shape: &[usize], init: Init) -> Self {
        Self {
            trainable: false,
            ..Self::new(shape, init)
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    fn fill(&mut self, rng: &mut ChaCha8Rng) {
        match self.init {
            Init::Zeros => self.value.fill(T::zero()),
            Init::Ones => self.value.fill(T::one()),
            Init::Const(c) => self.value.fill(T::lit(c)),
            Init::KaimingNormal { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                self.value.mapv_inplace(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    T::lit(z * std)
                });
            }
            Init::Uniform { bound } => {
                let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                self.value.mapv_inplace(|_| T::lit(u.sample(rng)));
            }
        }
    }
}

/// Anything that owns named parameters.
pub trait Module<T: Real> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed.wrapping_mul(0x9e3779b97f4a7c15)
}

/// Fills every parameter from a stream keyed by `(seed, parameter name)`, so
/// identically named sub-modules get identical weights across architectures.
pub fn initialize<T: Real, M: Module<T> + ?Sized>(module: &mut M, seed: u64) {
    module.visit_params("", &mut |name, p| {
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
        p.fill(&mut rng);
    });
}

pub fn zero_grad<T: Real, M: Module<T> + ?Sized>(module: &mut M) {
    module.visit_params("", &mut |_, p| p.grad.fill(T::zero()));
}

pub fn param_count<T: Real, M: Module<T> + ?Sized>(module: &mut M) -> usize {
    let mut n = 0;
    module.visit_params("", &mut |_, p| {
        if p.trainable {
            n += p.len()
        }
    });
    n
}

/// Copies parameter values between two models with identical parameter
/// tables, converting the element type.
pub fn copy_params<A: Real, B: Real, MA: Module<A> + ?Sized, MB: Module<B> + ?Sized>(
    from: &mut MA,
    to: &mut MB,
) {
    let mut values = std::collections::BTreeMap::new();
    from.visit_params("", &mut |name, p| {
        values.insert(name.to_string(), p.value.mapv(|v| v.as_f64()));
    });
    to.visit_params("", &mut |name, p| {
        let v = values
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing in source"));
        assert_eq!(v.shape(), p.value.shape(), "shape mismatch for {name}");
        p.value = v.mapv(B::lit);
    });
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
