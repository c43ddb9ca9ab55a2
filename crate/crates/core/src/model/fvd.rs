use ndarray::{Array2, Array4};

use super::ModelConfig;
use crate::nn::{join, ConvBlock, Linear, Module, Param, Real, Relu, Upsample2x};

/// One view-decoupling branch: a two-layer MLP over the flattened
/// perspective features, reshaped to a `c_d x p x p` grid, then four
/// nearest-upsample + conv-block decoders (16x total).
#[derive(Debug, Clone)]
pub struct ViewBranch<T> {
    fc1: Linear<T>,
    act: Relu<T>,
    fc2: Linear<T>,
    decoders: Vec<ConvBlock<T>>,
    channels: usize,
    cells: usize,
}

impl<T: Real> ViewBranch<T> {
    pub fn new(cfg: &ModelConfig) -> Self {
        let p = cfg.pv_cells();
        let cd = cfg.decoded_channels;
        Self {
            fc1: Linear::new(cfg.bottleneck_channels * p * p, cfg.mlp_hidden),
            act: Relu::new(),
            fc2: Linear::new(cfg.mlp_hidden, cd * p * p),
            decoders: (0..4).map(|_| ConvBlock::new(cd, cd, 3, 1)).collect(),
            channels: cd,
            cells: p,
        }
    }

    pub fn forward(&mut self, pv: &Array4<T>, train: bool) -> Array4<T> {
        let (n, c, h, w) = pv.dim();
        let flat = pv
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, c * h * w))
            .expect("flatten");
        let hidden = self.fc1.forward(&flat, train);
        let hidden = self
            .act
            .forward(hidden.into_shape_with_order((n, self.fc1.out_dim, 1, 1)).expect("shape"), train)
            .into_shape_with_order((n, self.fc1.out_dim))
            .expect("shape");
        let out = self.fc2.forward(&hidden, train);
        let mut y = out
            .into_shape_with_order((n, self.channels, self.cells, self.cells))
            .expect("reshape to grid");
        for dec in &mut self.decoders {
            y = dec.forward(&Upsample2x.forward(&y), train);
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let mut d = dy.clone();
        for dec in self.decoders.iter_mut().rev() {
            d = Upsample2x.backward(&dec.backward(&d));
        }
        let n = d.dim().0;
        let d2: Array2<T> = d
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, self.fc2.out_dim))
            .expect("flatten");
        let dh = self.fc2.backward(&d2);
        let dh = self
            .act
            .backward(&dh.into_shape_with_order((n, self.fc1.out_dim, 1, 1)).expect("shape"))
            .into_shape_with_order((n, self.fc1.out_dim))
            .expect("shape");
        let dx = self.fc1.backward(&dh);
        let p = self.cells;
        let c_in = self.fc1.in_dim / (p * p);
        dx.into_shape_with_order((n, c_in, p, p)).expect("shape")
    }
}

impl<T: Real> Module<T> for ViewBranch<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.fc1.visit_params(&join(prefix, "mlp.fc1"), f);
        self.fc2.visit_params(&join(prefix, "mlp.fc2"), f);
        for (i, d) in self.decoders.iter_mut().enumerate() {
            d.visit_params(&join(prefix, &format!("decoder{i}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FusionKind;
    use crate::nn::initialize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            input_size: 256,
            backbone_widths: [4, 4, 4, 4],
            bottleneck_channels: 8,
            decoded_channels: 4,
            mlp_hidden: 32,
            n_classes: 1,
            fusion: FusionKind::Scf,
        }
    }

    fn pv(seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn((1, 8, 4, 4), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn lifts_4_to_64() {
        let mut b = ViewBranch::<f64>::new(&cfg());
        initialize(&mut b, 1);
        assert_eq!(b.forward(&pv(0), false).dim(), (1, 4, 64, 64));
    }

    #[test]
    fn zero_mlp_gives_input_independent_output() {
        let mut b = ViewBranch::<f64>::new(&cfg());
        initialize(&mut b, 1);
        for p in [&mut b.fc1.weight, &mut b.fc1.bias, &mut b.fc2.weight, &mut b.fc2.bias] {
            p.value.fill(0.0);
        }
        let a = b.forward(&pv(1), false);
        let c = b.forward(&pv(2), false);
        assert_eq!(a, c);
    }

    #[test]
    fn single_input_element_reaches_every_output() {
        let mut b = ViewBranch::<f64>::new(&cfg());
        initialize(&mut b, 3);
        let x = pv(4);
        let base = b.forward(&x, false);
        let mut xp = x.clone();
        xp[[0, 3, 1, 2]] += 1e-3;
        let moved = b.forward(&xp, false);
        // cells clamped to zero by the last ReLU in both runs carry no signal
        let (active, changed) = base.iter().zip(moved.iter()).fold((0, 0), |(a, c), (u, v)| {
            if *u == 0.0 && *v == 0.0 {
                (a, c)
            } else {
                (a + 1, c + usize::from(u != v))
            }
        });
        assert!(active > base.len() / 4);
        assert!(changed as f64 > 0.9 * active as f64, "{changed} of {active}");
    }
}
