use ndarray::Array4;

use crate::nn::{join, AvgPool2, BasicBlock, ConvBlock, MaxPool3s2, Module, Param, Real};

/// ResNet-18 trunk (stride 32) followed by a 3x3 bottleneck convolution and
/// 2x mean pooling, giving stride-64 perspective features.
#[derive(Debug, Clone)]
pub struct Backbone<T> {
    stem: ConvBlock<T>,
    pool: MaxPool3s2,
    stages: Vec<[BasicBlock<T>; 2]>,
    neck: ConvBlock<T>,
    mean_pool: AvgPool2,
}

impl<T: Real> Backbone<T> {
    pub fn new(widths: [usize; 4], out_channels: usize) -> Self {
        let mut stages = Vec::with_capacity(4);
        let mut in_ch = widths[0];
        for (i, &w) in widths.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            stages.push([BasicBlock::new(in_ch, w, stride), BasicBlock::new(w, w, 1)]);
            in_ch = w;
        }
        Self {
            stem: ConvBlock::new(3, widths[0], 7, 2),
            pool: MaxPool3s2::new(),
            stages,
            neck: ConvBlock::new(widths[3], out_channels, 3, 1),
            mean_pool: AvgPool2,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let y = self.stem.forward(x, train);
        let mut y = self.pool.forward(&y, train);
        for stage in &mut self.stages {
            for block in stage.iter_mut() {
                y = block.forward(&y, train);
            }
        }
        let y = self.neck.forward(&y, train);
        self.mean_pool.forward(&y)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let d = self.mean_pool.backward(dy);
        let mut d = self.neck.backward(&d);
        for stage in self.stages.iter_mut().rev() {
            for block in stage.iter_mut().rev() {
                d = block.backward(&d);
            }
        }
        let d = self.pool.backward(&d);
        self.stem.backward(&d)
    }
}

impl<T: Real> Module<T> for Backbone<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.stem.visit_params(&join(prefix, "stem"), f);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for (j, block) in stage.iter_mut().enumerate() {
                block.visit_params(&join(prefix, &format!("layer{}.{j}", i + 1)), f);
            }
        }
        self.neck.visit_params(&join(prefix, "neck"), f);
    }
}
