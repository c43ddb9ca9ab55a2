use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, ArrayViewMut2, Axis};

use super::{join, Init, Module, Param, Real};

fn as_mat<T: Real>(p: &Param<T>, rows: usize, cols: usize) -> ArrayView2<'_, T> {
    p.value
        .view()
        .into_shape_with_order((rows, cols))
        .expect("contiguous parameter")
}

fn as_mat_mut<T: Real>(p: &mut ndarray::ArrayD<T>, rows: usize, cols: usize) -> ArrayViewMut2<'_, T> {
    p.view_mut()
        .into_shape_with_order((rows, cols))
        .expect("contiguous parameter")
}

fn contiguous<T: Real>(x: &Array4<T>) -> std::borrow::Cow<'_, [T]> {
    match x.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(x.iter().cloned().collect()),
    }
}

/// Output index range `[lo, hi)` of positions whose input tap
/// `o * stride + offset - pad` lands inside `[0, len)`.
fn valid_range(len: usize, out: usize, stride: usize, offset: usize, pad: usize) -> (usize, usize) {
    let pad = pad as isize;
    let off = offset as isize;
    let s = stride as isize;
    // o * s + off - pad >= 0
    let lo = if pad > off { (pad - off + s - 1) / s } else { 0 };
    // o * s + off - pad <= len - 1
    let top = len as isize - 1 + pad - off;
    let hi = if top < 0 { 0 } else { (top / s + 1).min(out as isize) };
    (lo.min(hi) as usize, hi as usize)
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Array2<T> {
    let ncols = g.cols();
    let rows = g.c * g.k * g.k;
    let mut cols = vec![T::zero(); rows * ncols];
    let plane = g.h * g.w;
    let out_plane = g.ho * g.wo;
    for ci in 0..g.c {
        for ki in 0..g.k {
            let (oh_lo, oh_hi) = valid_range(g.h, g.ho, g.stride, ki, g.pad);
            for kj in 0..g.k {
                let (ow_lo, ow_hi) = valid_range(g.w, g.wo, g.stride, kj, g.pad);
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.n {
                    let src = &x[(b * g.c + ci) * plane..][..plane];
                    let dst_b = &mut dst[b * out_plane..][..out_plane];
                    for oh in oh_lo..oh_hi {
                        let ih = oh * g.stride + ki - g.pad;
                        let srow = &src[ih * g.w..][..g.w];
                        let drow = &mut dst_b[oh * g.wo..][..g.wo];
                        if g.stride == 1 {
                            let iw0 = ow_lo + kj - g.pad;
                            drow[ow_lo..ow_hi].copy_from_slice(&srow[iw0..iw0 + (ow_hi - ow_lo)]);
                        } else {
                            for ow in ow_lo..ow_hi {
                                drow[ow] = srow[ow * g.stride + kj - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((rows, ncols), cols).expect("im2col shape")
}

fn col2im<T: Real>(cols: &Array2<T>, g: &ConvGeom) -> Array4<T> {
    let ncols = g.cols();
    let cs = cols.as_slice().expect("standard layout");
    let plane = g.h * g.w;
    let out_plane = g.ho * g.wo;
    let mut x = vec![T::zero(); g.n * g.c * plane];
    for ci in 0..g.c {
        for ki in 0..g.k {
            let (oh_lo, oh_hi) = valid_range(g.h, g.ho, g.stride, ki, g.pad);
            for kj in 0..g.k {
                let (ow_lo, ow_hi) = valid_range(g.w, g.wo, g.stride, kj, g.pad);
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &cs[row * ncols..(row + 1) * ncols];
                for b in 0..g.n {
                    let dst = &mut x[(b * g.c + ci) * plane..][..plane];
                    let src_b = &src[b * out_plane..][..out_plane];
                    for oh in oh_lo..oh_hi {
                        let ih = oh * g.stride + ki - g.pad;
                        let drow = &mut dst[ih * g.w..][..g.w];
                        let srow = &src_b[oh * g.wo..][..g.wo];
                        for ow in ow_lo..ow_hi {
                            drow[ow * g.stride + kj - g.pad] += srow[ow];
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((g.n, g.c, g.h, g.w), x).expect("col2im shape")
}

/// `[n, c, h, w]` to `[c, n*h*w]`.
fn to_channel_major<T: Real>(x: &Array4<T>) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    let xs = contiguous(x);
    let hw = h * w;
    let mut out = vec![T::zero(); c * n * hw];
    for b in 0..n {
        for ci in 0..c {
            out[ci * n * hw + b * hw..][..hw].copy_from_slice(&xs[(b * c + ci) * hw..][..hw]);
        }
    }
    Array2::from_shape_vec((c, n * hw), out).expect("shape")
}

fn from_channel_major<T: Real>(m: &Array2<T>, n: usize, h: usize, w: usize) -> Array4<T> {
    let c = m.nrows();
    let ms = m.as_slice().expect("standard layout");
    let hw = h * w;
    let mut out = vec![T::zero(); n * c * hw];
    for b in 0..n {
        for ci in 0..c {
            out[(b * c + ci) * hw..][..hw].copy_from_slice(&ms[ci * n * hw + b * hw..][..hw]);
        }
    }
    Array4::from_shape_vec((n, c, h, w), out).expect("shape")
}

/// 2-D convolution via im2col + GEMM. Weight layout `[out, in, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    input: Option<Array4<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize, bias: bool) -> Self {
        let fan_in = in_ch * k * k;
        Self {
            weight: Param::new(&[out_ch, in_ch, k, k], Init::KaimingNormal { fan_in }),
            bias: bias.then(|| Param::new(&[out_ch], Init::Zeros)),
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            input: None,
        }
    }

    /// 1x1 projection with bias, the last layer of every head.
    pub fn projection(in_ch: usize, out_ch: usize) -> Self {
        let mut c = Self::new(in_ch, out_ch, 1, 1, 0, true);
        c.weight.init = Init::Uniform {
            bound: (1.0 / in_ch as f64).sqrt(),
        };
        c
    }

    fn geom(&self, x: &Array4<T>) -> ConvGeom {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_ch, "conv expects {} input channels, got {c}", self.in_ch);
        ConvGeom {
            n,
            c,
            h,
            w,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
            ho: (h + 2 * self.pad - self.k) / self.stride + 1,
            wo: (w + 2 * self.pad - self.k) / self.stride + 1,
        }
    }

    fn columns(&self, x: &Array4<T>, g: &ConvGeom) -> Array2<T> {
        if self.k == 1 && self.stride == 1 && self.pad == 0 {
            to_channel_major(x)
        } else {
            im2col(&contiguous(x), g)
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let g = self.geom(x);
        let cols = self.columns(x, &g);
        let w = as_mat(&self.weight, self.out_ch, self.in_ch * self.k * self.k);
        let mut out = Array2::<T>::zeros((self.out_ch, g.cols()));
        general_mat_mul(T::one(), &w, &cols, T::zero(), &mut out);
        if let Some(b) = &self.bias {
            for (mut row, &bv) in out.axis_iter_mut(Axis(0)).zip(b.value.iter()) {
                row.mapv_inplace(|v| v + bv);
            }
        }
        self.input = train.then(|| x.clone());
        from_channel_major(&out, g.n, g.ho, g.wo)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let x = self.input.take().expect("conv backward without training forward");
        let g = self.geom(&x);
        let cols = self.columns(&x, &g);
        let dy2 = to_channel_major(dy);
        let ckk = self.in_ch * self.k * self.k;
        {
            let mut gw = as_mat_mut(&mut self.weight.grad, self.out_ch, ckk);
            general_mat_mul(T::one(), &dy2, &cols.t(), T::one(), &mut gw);
        }
        if let Some(b) = &mut self.bias {
            for (gb, row) in b.grad.iter_mut().zip(dy2.axis_iter(Axis(0))) {
                *gb += row.sum();
            }
        }
        let w = as_mat(&self.weight, self.out_ch, ckk);
        let mut dcols = Array2::<T>::zeros((ckk, g.cols()));
        general_mat_mul(T::one(), &w.t(), &dy2, T::zero(), &mut dcols);
        if self.k == 1 && self.stride == 1 && self.pad == 0 {
            from_channel_major(&dcols, g.n, g.h, g.w)
        } else {
            col2im(&dcols, &g)
        }
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Batch normalization over `(n, h, w)` per channel.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<(Array4<T>, Vec<T>)>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(ch: usize) -> Self {
        Self {
            gamma: Param::new(&[ch], Init::Ones),
            beta: Param::new(&[ch], Init::Zeros),
            running_mean: Param::buffer(&[ch], Init::Zeros),
            running_var: Param::buffer(&[ch], Init::Ones),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        let hw = h * w;
        let m = n * hw;
        let xs = contiguous(x);
        let mut out = vec![T::zero(); xs.len()];
        let eps = T::lit(self.eps);
        if train {
            let mut xhat = vec![T::zero(); xs.len()];
            let mut inv_stds = Vec::with_capacity(c);
            let mom = T::lit(self.momentum);
            for ci in 0..c {
                let mut sum = T::zero();
                for b in 0..n {
                    sum += xs[(b * c + ci) * hw..][..hw].iter().copied().sum::<T>();
                }
                let mean = sum / T::lit(m as f64);
                let mut sq = T::zero();
                for b in 0..n {
                    for &v in &xs[(b * c + ci) * hw..][..hw] {
                        let d = v - mean;
                        sq += d * d;
                    }
                }
                let var = sq / T::lit(m as f64);
                let inv_std = T::one() / (var + eps).sqrt();
                inv_stds.push(inv_std);
                let gm = self.gamma.value[ci];
                let bt = self.beta.value[ci];
                for b in 0..n {
                    let off = (b * c + ci) * hw;
                    for i in off..off + hw {
                        let xh = (xs[i] - mean) * inv_std;
                        xhat[i] = xh;
                        out[i] = gm * xh + bt;
                    }
                }
                let unbiased = if m > 1 { sq / T::lit((m - 1) as f64) } else { var };
                let rm = &mut self.running_mean.value[ci];
                *rm = *rm * (T::one() - mom) + mean * mom;
                let rv = &mut self.running_var.value[ci];
                *rv = *rv * (T::one() - mom) + unbiased * mom;
            }
            let xhat = Array4::from_shape_vec((n, c, h, w), xhat).expect("shape");
            self.cache = Some((xhat, inv_stds));
        } else {
            for ci in 0..c {
                let inv_std = T::one() / (self.running_var.value[ci] + eps).sqrt();
                let scale = self.gamma.value[ci] * inv_std;
                let shift = self.beta.value[ci] - self.running_mean.value[ci] * scale;
                for b in 0..n {
                    let off = (b * c + ci) * hw;
                    for i in off..off + hw {
                        out[i] = xs[i] * scale + shift;
                    }
                }
            }
            self.cache = None;
        }
        Array4::from_shape_vec((n, c, h, w), out).expect("shape")
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let (xhat, inv_stds) = self.cache.take().expect("bn backward without training forward");
        let (n, c, h, w) = dy.dim();
        let hw = h * w;
        let m = T::lit((n * hw) as f64);
        let dys = contiguous(dy);
        let xh = xhat.as_slice().expect("standard layout");
        let mut dx = vec![T::zero(); dys.len()];
        for ci in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xh = T::zero();
            for b in 0..n {
                let off = (b * c + ci) * hw;
                for i in off..off + hw {
                    sum_dy += dys[i];
                    sum_dy_xh += dys[i] * xh[i];
                }
            }
            self.gamma.grad[ci] += sum_dy_xh;
            self.beta.grad[ci] += sum_dy;
            let k = self.gamma.value[ci] * inv_stds[ci] / m;
            for b in 0..n {
                let off = (b * c + ci) * hw;
                for i in off..off + hw {
                    dx[i] = k * (m * dys[i] - sum_dy - xh[i] * sum_dy_xh);
                }
            }
        }
        Array4::from_shape_vec((n, c, h, w), dx).expect("shape")
    }
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    output: Option<Array4<T>>,
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Self { output: None }
    }

    pub fn forward(&mut self, x: Array4<T>, train: bool) -> Array4<T> {
        let y = x.mapv_into(|v| v.max(T::zero()));
        self.output = train.then(|| y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let y = self.output.take().expect("relu backward without training forward");
        let mut dx = dy.clone();
        ndarray::Zip::from(&mut dx).and(&y).for_each(|d, &o| {
            if o <= T::zero() {
                *d = T::zero();
            }
        });
        dx
    }
}

/// Convolution (no bias), batch norm and ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    relu: Relu<T>,
}

impl<T: Real> ConvBlock<T> {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, stride: usize) -> Self {
        Self {
            conv: Conv2d::new(in_ch, out_ch, k, stride, k / 2, false),
            bn: BatchNorm2d::new(out_ch),
            relu: Relu::new(),
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let y = self.conv.forward(x, train);
        let y = self.bn.forward(&y, train);
        self.relu.forward(y, train)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let d = self.relu.backward(dy);
        let d = self.bn.backward(&d);
        self.conv.backward(&d)
    }
}

impl<T: Real> Module<T> for ConvBlock<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
    }
}

/// ResNet basic block: two 3x3 convolutions with an identity or 1x1
/// projection shortcut.
#[derive(Debug, Clone)]
pub struct BasicBlock<T> {
    conv1: ConvBlock<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    down: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    relu: Relu<T>,
}

impl<T: Real> BasicBlock<T> {
    pub fn new(in_ch: usize, out_ch: usize, stride: usize) -> Self {
        let down = (stride != 1 || in_ch != out_ch).then(|| {
            (
                Conv2d::new(in_ch, out_ch, 1, stride, 0, false),
                BatchNorm2d::new(out_ch),
            )
        });
        Self {
            conv1: ConvBlock::new(in_ch, out_ch, 3, stride),
            conv2: Conv2d::new(out_ch, out_ch, 3, 1, 1, false),
            bn2: BatchNorm2d::new(out_ch),
            down,
            relu: Relu::new(),
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let y = self.conv1.forward(x, train);
        let y = self.conv2.forward(&y, train);
        let mut y = self.bn2.forward(&y, train);
        match &mut self.down {
            Some((conv, bn)) => {
                let s = conv.forward(x, train);
                y += &bn.forward(&s, train);
            }
            None => y += x,
        }
        self.relu.forward(y, train)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let d = self.relu.backward(dy);
        let mut dx = match &mut self.down {
            Some((conv, bn)) => conv.backward(&bn.backward(&d)),
            None => d.clone(),
        };
        let dm = self.bn2.backward(&d);
        let dm = self.conv2.backward(&dm);
        dx += &self.conv1.backward(&dm);
        dx
    }
}

impl<T: Real> Module<T> for BasicBlock<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
        if let Some((conv, bn)) = &mut self.down {
            conv.visit_params(&join(prefix, "down.conv"), f);
            bn.visit_params(&join(prefix, "down.bn"), f);
        }
    }
}

/// 3x3 max pooling, stride 2, padding 1.
#[derive(Debug, Clone, Default)]
pub struct MaxPool3s2 {
    argmax: Option<(Vec<usize>, [usize; 4])>,
}

impl MaxPool3s2 {
    pub fn new() -> Self {
        Self { argmax: None }
    }

    pub fn forward<T: Real>(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        let ho = (h + 2 - 3) / 2 + 1;
        let wo = (w + 2 - 3) / 2 + 1;
        let xs = contiguous(x);
        let mut out = vec![T::zero(); n * c * ho * wo];
        let mut idx = vec![0usize; out.len()];
        for p in 0..n * c {
            let base = p * h * w;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut bi = 0;
                    for ki in 0..3 {
                        let ih = (oh * 2 + ki) as isize - 1;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for kj in 0..3 {
                            let iw = (ow * 2 + kj) as isize - 1;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let i = base + ih as usize * w + iw as usize;
                            if xs[i] > best {
                                best = xs[i];
                                bi = i;
                            }
                        }
                    }
                    let o = (p * ho + oh) * wo + ow;
                    out[o] = best;
                    idx[o] = bi;
                }
            }
        }
        self.argmax = train.then_some((idx, [n, c, h, w]));
        Array4::from_shape_vec((n, c, ho, wo), out).expect("shape")
    }

    pub fn backward<T: Real>(&mut self, dy: &Array4<T>) -> Array4<T> {
        let (idx, [n, c, h, w]) = self.argmax.take().expect("pool backward without forward");
        let mut dx = vec![T::zero(); n * c * h * w];
        for (&i, &g) in idx.iter().zip(contiguous(dy).iter()) {
            dx[i] += g;
        }
        Array4::from_shape_vec((n, c, h, w), dx).expect("shape")
    }
}

/// 2x2 mean pooling, stride 2.
#[derive(Debug, Clone, Copy, Default)]
pub struct AvgPool2;

impl AvgPool2 {
    pub fn forward<T: Real>(&self, x: &Array4<T>) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        let quarter = T::lit(0.25);
        Array4::from_shape_fn((n, c, h / 2, w / 2), |(b, ci, i, j)| {
            (x[[b, ci, 2 * i, 2 * j]]
                + x[[b, ci, 2 * i, 2 * j + 1]]
                + x[[b, ci, 2 * i + 1, 2 * j]]
                + x[[b, ci, 2 * i + 1, 2 * j + 1]])
                * quarter
        })
    }

    pub fn backward<T: Real>(&self, dy: &Array4<T>) -> Array4<T> {
        let (n, c, h, w) = dy.dim();
        let quarter = T::lit(0.25);
        Array4::from_shape_fn((n, c, h * 2, w * 2), |(b, ci, i, j)| {
            dy[[b, ci, i / 2, j / 2]] * quarter
        })
    }
}

/// Nearest-neighbour 2x upsampling.
#[derive(Debug, Clone, Copy, Default)]
pub struct Upsample2x;

impl Upsample2x {
    pub fn forward<T: Real>(&self, x: &Array4<T>) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        Array4::from_shape_fn((n, c, h * 2, w * 2), |(b, ci, i, j)| x[[b, ci, i / 2, j / 2]])
    }

    pub fn backward<T: Real>(&self, dy: &Array4<T>) -> Array4<T> {
        let (n, c, h, w) = dy.dim();
        Array4::from_shape_fn((n, c, h / 2, w / 2), |(b, ci, i, j)| {
            dy[[b, ci, 2 * i, 2 * j]]
                + dy[[b, ci, 2 * i, 2 * j + 1]]
                + dy[[b, ci, 2 * i + 1, 2 * j]]
                + dy[[b, ci, 2 * i + 1, 2 * j + 1]]
        })
    }
}

/// Fully connected layer on `[n, in]` rows. Weight layout `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_dim: usize,
    pub out_dim: usize,
    input: Option<Array2<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Param::new(&[out_dim, in_dim], Init::KaimingNormal { fan_in: in_dim }),
            bias: Param::new(&[out_dim], Init::Zeros),
            in_dim,
            out_dim,
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<T>, train: bool) -> Array2<T> {
        assert_eq!(x.ncols(), self.in_dim, "linear input width");
        let w = as_mat(&self.weight, self.out_dim, self.in_dim);
        let mut y = Array2::<T>::zeros((x.nrows(), self.out_dim));
        general_mat_mul(T::one(), x, &w.t(), T::zero(), &mut y);
        for mut row in y.axis_iter_mut(Axis(0)) {
            row.zip_mut_with(&self.bias.value, |a, &b| *a += b);
        }
        self.input = train.then(|| x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array2<T>) -> Array2<T> {
        let x = self.input.take().expect("linear backward without training forward");
        {
            let mut gw = as_mat_mut(&mut self.weight.grad, self.out_dim, self.in_dim);
            general_mat_mul(T::one(), &dy.t(), &x, T::one(), &mut gw);
        }
        for row in dy.axis_iter(Axis(0)) {
            self.bias.grad.zip_mut_with(&row, |g, &d| *g += d);
        }
        let w = as_mat(&self.weight, self.out_dim, self.in_dim);
        let mut dx = Array2::<T>::zeros((dy.nrows(), self.in_dim));
        general_mat_mul(T::one(), dy, &w, T::zero(), &mut dx);
        dx
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::initialize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn naive_conv(x: &Array4<f64>, w: &ndarray::ArrayD<f64>, stride: usize, pad: usize) -> Array4<f64> {
        let (n, c, h, wd) = x.dim();
        let (o, k) = (w.shape()[0], w.shape()[2]);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        Array4::from_shape_fn((n, o, ho, wo), |(b, oc, i, j)| {
            let mut acc = 0.0;
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let ih = (i * stride + ki) as isize - pad as isize;
                        let iw = (j * stride + kj) as isize - pad as isize;
                        if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd {
                            acc += x[[b, ci, ih as usize, iw as usize]] * w[[oc, ci, ki, kj]];
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_direct_loop() {
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (7, 2, 3), (1, 2, 0), (1, 1, 0)] {
            let mut conv = Conv2d::<f64>::new(3, 4, k, s, p, false);
            initialize(&mut conv, 3);
            let x = random4((2, 3, 9, 8), 11);
            let y = conv.forward(&x, false);
            let want = naive_conv(&x, &conv.weight.value, s, p);
            assert_eq!(y.dim(), want.dim());
            let err = (&y - &want).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(err < 1e-12, "k={k} s={s} p={p}: {err}");
        }
    }

    fn check_input_grad(mut f: impl FnMut(&Array4<f64>) -> (f64, Array4<f64>), x: &Array4<f64>) {
        let (_, analytic) = f(x);
        let h = 1e-6;
        for idx in [(0, 0, 0, 0), (1, 1, 2, 3), (0, 2, 4, 5), (1, 0, 7, 1)] {
            if idx.1 >= x.dim().1 || idx.2 >= x.dim().2 || idx.3 >= x.dim().3 {
                continue;
            }
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let num = (f(&xp).0 - f(&xm).0) / (2.0 * h);
            let a = analytic[idx];
            assert!((a - num).abs() <= 1e-6 * (1.0 + a.abs()), "{idx:?}: {a} vs {num}");
        }
    }

    #[test]
    fn conv_block_input_gradient() {
        let mut block = ConvBlock::<f64>::new(3, 4, 3, 2);
        initialize(&mut block, 5);
        let probe = random4((2, 4, 4, 4), 9);
        let x = random4((2, 3, 8, 8), 1);
        check_input_grad(
            |x| {
                let y = block.forward(x, true);
                let loss = (&y * &probe).sum();
                let dx = block.backward(&probe);
                (loss, dx)
            },
            &x,
        );
    }

    #[test]
    fn basic_block_input_gradient() {
        let mut block = BasicBlock::<f64>::new(3, 5, 2);
        initialize(&mut block, 5);
        let probe = random4((2, 5, 4, 4), 19);
        let x = random4((2, 3, 8, 8), 2);
        check_input_grad(
            |x| {
                let y = block.forward(x, true);
                let loss = (&y * &probe).sum();
                (loss, block.backward(&probe))
            },
            &x,
        );
    }

    #[test]
    fn pooling_and_upsampling_gradients() {
        let x = random4((2, 3, 8, 8), 4);
        let mut pool = MaxPool3s2::new();
        let probe = random4((2, 3, 4, 4), 5);
        check_input_grad(
            |x| {
                let y = pool.forward(x, true);
                ((&y * &probe).sum(), pool.backward(&probe))
            },
            &x,
        );
        check_input_grad(
            |x| {
                let y = AvgPool2.forward(x);
                ((&y * &probe).sum(), AvgPool2.backward(&probe))
            },
            &x,
        );
        let probe_up = random4((2, 3, 16, 16), 6);
        check_input_grad(
            |x| {
                let y = Upsample2x.forward(x);
                ((&y * &probe_up).sum(), Upsample2x.backward(&probe_up))
            },
            &x,
        );
    }

    #[test]
    fn linear_weight_gradient() {
        let mut lin = Linear::<f64>::new(5, 3);
        initialize(&mut lin, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
        let probe = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let y = lin.forward(&x, true);
        let _ = (&y * &probe).sum();
        lin.backward(&probe);
        let h = 1e-6;
        for (i, j) in [(0, 0), (2, 4), (1, 3)] {
            let base = lin.weight.value[[i, j]];
            lin.weight.value[[i, j]] = base + h;
            let lp = (&lin.forward(&x, false) * &probe).sum();
            lin.weight.value[[i, j]] = base - h;
            let lm = (&lin.forward(&x, false) * &probe).sum();
            lin.weight.value[[i, j]] = base;
            let num = (lp - lm) / (2.0 * h);
            assert!((lin.weight.grad[[i, j]] - num).abs() < 1e-8);
        }
    }

    #[test]
    fn eval_batch_norm_uses_running_stats() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        initialize(&mut bn, 0);
        let x = random4((3, 2, 4, 4), 3);
        let y = bn.forward(&x, false);
        // running mean 0, var 1 -> near identity
        let err = (&y - &x).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-4);
    }
}
