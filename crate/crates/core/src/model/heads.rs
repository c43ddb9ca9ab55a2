use ndarray::Array4;

use crate::nn::{join, Conv2d, ConvBlock, Init, Module, Param, Real};

/// Output widths of the detection heads after the class heatmap:
/// `(offset_col, offset_row, z)`, log dims, `(sin yaw, cos yaw)`.
pub const HEAD_CHANNELS: [usize; 3] = [3, 3, 2];

/// Initial heatmap bias: `sigmoid(-2.19) ~= 0.1`.
const HEATMAP_PRIOR: f64 = -2.19;

/// Conv block + 1x1 projection producing per-cell foreground logits.
#[derive(Debug, Clone)]
pub struct SegHead<T> {
    block: ConvBlock<T>,
    proj: Conv2d<T>,
}

impl<T: Real> SegHead<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            block: ConvBlock::new(channels, channels, 3, 1),
            proj: Conv2d::projection(channels, 1),
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let y = self.block.forward(x, train);
        self.proj.forward(&y, train)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let d = self.proj.backward(dy);
        self.block.backward(&d)
    }
}

impl<T: Real> Module<T> for SegHead<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.block.visit_params(&join(prefix, "block"), f);
        self.proj.visit_params(&join(prefix, "proj"), f);
    }
}

/// Batched raw head outputs on the BEV grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs<T> {
    /// `[n, classes, rows, cols]` logits.
    pub heatmap: Array4<T>,
    /// `[n, 3, rows, cols]`: sub-cell column/row offsets and center height (m).
    pub offset_z: Array4<T>,
    /// `[n, 3, rows, cols]`: log of length, width, height.
    pub dims: Array4<T>,
    /// `[n, 2, rows, cols]`: unnormalized `(sin, cos)` of yaw.
    pub yaw: Array4<T>,
}

impl<T: Real> HeadOutputs<T> {
    pub fn map(&self, f: impl Fn(&Array4<T>) -> Array4<T>) -> Self {
        Self {
            heatmap: f(&self.heatmap),
            offset_z: f(&self.offset_z),
            dims: f(&self.dims),
            yaw: f(&self.yaw),
        }
    }

    pub fn batch(&self) -> usize {
        self.heatmap.dim().0
    }

    pub fn all_finite(&self) -> bool {
        [&self.heatmap, &self.offset_z, &self.dims, &self.yaw]
            .iter()
            .all(|a| a.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone)]
struct Head<T> {
    block: ConvBlock<T>,
    proj: Conv2d<T>,
}

impl<T: Real> Head<T> {
    fn new(channels: usize, out: usize) -> Self {
        Self {
            block: ConvBlock::new(channels, channels, 3, 1),
            proj: Conv2d::projection(channels, out),
        }
    }

    fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let y = self.block.forward(x, train);
        self.proj.forward(&y, train)
    }

    fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        self.block.backward(&self.proj.backward(dy))
    }
}

/// Four parallel heads: class heatmap, offset + z, dims, yaw.
#[derive(Debug, Clone)]
pub struct DetHeads<T> {
    heads: [Head<T>; 4],
}

const HEAD_NAMES: [&str; 4] = ["heatmap", "offset_z", "dims", "yaw"];

impl<T: Real> DetHeads<T> {
    pub fn new(channels: usize, n_classes: usize) -> Self {
        let mut heatmap = Head::new(channels, n_classes);
        if let Some(b) = &mut heatmap.proj.bias {
            b.init = Init::Const(HEATMAP_PRIOR);
        }
        Self {
            heads: [
                heatmap,
                Head::new(channels, HEAD_CHANNELS[0]),
                Head::new(channels, HEAD_CHANNELS[1]),
                Head::new(channels, HEAD_CHANNELS[2]),
            ],
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> HeadOutputs<T> {
        let [a, b, c, d] = &mut self.heads;
        HeadOutputs {
            heatmap: a.forward(x, train),
            offset_z: b.forward(x, train),
            dims: c.forward(x, train),
            yaw: d.forward(x, train),
        }
    }

    pub fn backward(&mut self, g: &HeadOutputs<T>) -> Array4<T> {
        let [a, b, c, d] = &mut self.heads;
        let mut dx = a.backward(&g.heatmap);
        dx += &b.backward(&g.offset_z);
        dx += &c.backward(&g.dims);
        dx += &d.backward(&g.yaw);
        dx
    }
}

impl<T: Real> Module<T> for DetHeads<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (head, name) in self.heads.iter_mut().zip(HEAD_NAMES) {
            head.block.visit_params(&join(prefix, &format!("{name}.block")), f);
            head.proj.visit_params(&join(prefix, &format!("{name}.proj")), f);
        }
    }
}
