//! Cross-view fusion of front-view and BEV grids.
//!
//! All variants build a `2C`-channel input from `f_bev` and a front-view
//! contribution, then apply one conv block back to `C` channels:
//!
//! * `Scf`: `concat(f_bev[i, j], s[i, j] * f_c[i])` where `f_c` is the
//!   front view averaged over height and `s[i, j] = <f_c[i], f_bev[i, j]> / sqrt(C)`
//!   only compares cells sharing the lateral column `i`.
//! * `Cpf`: `concat(f_bev[i, j], f_c[i])`, the condensed column pushed along depth.
//! * `Sgf`: dot-product attention of every BEV cell over every front-view cell.
//! * `None`: the conv block on `f_bev` alone.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use super::{FeatureGrid, View};
use crate::error::{Error, Result};
use crate::nn::{join, ConvBlock, Module, Param, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FusionKind {
    None,
    Sgf,
    Cpf,
    Scf,
}

impl FusionKind {
    pub const ALL: [FusionKind; 4] = [FusionKind::None, FusionKind::Sgf, FusionKind::Cpf, FusionKind::Scf];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::None => "NONE",
            FusionKind::Sgf => "SGF",
            FusionKind::Cpf => "CPF",
            FusionKind::Scf => "SCF",
        }
    }
}

impl std::str::FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NONE" | "VANILLA" => Ok(FusionKind::None),
            "SGF" => Ok(FusionKind::Sgf),
            "CPF" => Ok(FusionKind::Cpf),
            "SCF" => Ok(FusionKind::Scf),
            other => Err(Error::InvalidConfig(format!("unknown fusion variant {other}"))),
        }
    }
}

/// Mean over the height rows: `[n, c, z, x] -> [n, c, x]`.
pub fn condense_front_view<T: Real>(fv: &Array4<T>) -> Array3<T> {
    fv.mean_axis(Axis(2)).expect("non-empty height axis")
}

/// Column-constrained similarity `s[n, j, i] = <f_c[n, :, i], f_bev[n, :, j, i]> / sqrt(C)`.
pub fn column_similarity<T: Real>(fc: &Array3<T>, bev: &Array4<T>) -> Array3<T> {
    let (n, c, rows, cols) = bev.dim();
    let scale = T::one() / T::lit(c as f64).sqrt();
    let mut s = Array3::<T>::zeros((n, rows, cols));
    for b in 0..n {
        for ch in 0..c {
            let f = fc.slice(s![b, ch, ..]);
            let plane = bev.slice(s![b, ch, .., ..]);
            let mut sb = s.slice_mut(s![b, .., ..]);
            for j in 0..rows {
                for i in 0..cols {
                    sb[[j, i]] += f[i] * plane[[j, i]];
                }
            }
        }
    }
    s.mapv_inplace(|v| v * scale);
    s
}

/// `concat(f_bev, w * f_c)` with `f_c` broadcast along depth. `weights`
/// of `None` pushes `f_c` unweighted.
pub fn pushed_input<T: Real>(bev: &Array4<T>, fc: &Array3<T>, weights: Option<&Array3<T>>) -> Array4<T> {
    let (n, c, rows, cols) = bev.dim();
    let mut out = Array4::<T>::zeros((n, 2 * c, rows, cols));
    out.slice_mut(s![.., ..c, .., ..]).assign(bev);
    for b in 0..n {
        for ch in 0..c {
            let mut plane = out.slice_mut(s![b, c + ch, .., ..]);
            for j in 0..rows {
                for i in 0..cols {
                    let w = weights.map_or(T::one(), |w| w[[b, j, i]]);
                    plane[[j, i]] = w * fc[[b, ch, i]];
                }
            }
        }
    }
    out
}

fn as_matrix<T: Real>(x: ArrayView4<'_, T>, b: usize) -> ArrayView2<'_, T> {
    let (_, c, h, w) = x.dim();
    x.slice_move(s![b, .., .., ..])
        .into_shape_with_order((c, h * w))
        .expect("contiguous feature map")
}

/// Global dot-product attention. Returns the attended front-view features
/// laid out like `bev` and the per-sample weight matrices
/// `[bev cells, fv cells]` (rows sum to one).
pub fn global_attention<T: Real>(fv: &Array4<T>, bev: &Array4<T>) -> (Array4<T>, Vec<Array2<T>>) {
    let (n, c, rows, cols) = bev.dim();
    let scale = T::one() / T::lit(c as f64).sqrt();
    let fv = fv.as_standard_layout();
    let bev_std = bev.as_standard_layout();
    let mut attended = Array4::<T>::zeros((n, c, rows, cols));
    let mut weights = Vec::with_capacity(n);
    for b in 0..n {
        let q = as_matrix(bev_std.view(), b);
        let k = as_matrix(fv.view(), b);
        let mut logits = Array2::<T>::zeros((q.ncols(), k.ncols()));
        general_mat_mul(scale, &q.t(), &k, T::zero(), &mut logits);
        for mut row in logits.axis_iter_mut(Axis(0)) {
            let m = row.fold(T::neg_infinity(), |a, &v| a.max(v));
            row.mapv_inplace(|v| (v - m).exp());
            let z = row.sum();
            row.mapv_inplace(|v| v / z);
        }
        let mut att = Array2::<T>::zeros((c, q.ncols()));
        general_mat_mul(T::one(), &k, &logits.t(), T::zero(), &mut att);
        attended
            .slice_mut(s![b, .., .., ..])
            .assign(&att.into_shape_with_order((c, rows, cols)).expect("shape"));
        weights.push(logits);
    }
    (attended, weights)
}

fn concat_channels<T: Real>(a: &Array4<T>, b: &Array4<T>) -> Array4<T> {
    let (n, c, h, w) = a.dim();
    let c2 = b.dim().1;
    let mut out = Array4::<T>::zeros((n, c + c2, h, w));
    out.slice_mut(s![.., ..c, .., ..]).assign(a);
    out.slice_mut(s![.., c.., .., ..]).assign(b);
    out
}

#[derive(Debug, Clone)]
enum FusionCache<T> {
    None,
    Bypass {
        fv_dim: (usize, usize, usize, usize),
    },
    Column {
        fv_rows: usize,
        fc: Array3<T>,
        bev: Array4<T>,
        sim: Option<Array3<T>>,
    },
    Global {
        fv: Array4<T>,
        bev: Array4<T>,
        weights: Vec<Array2<T>>,
    },
}

#[derive(Debug, Clone)]
pub struct Fusion<T> {
    pub kind: FusionKind,
    pub block: ConvBlock<T>,
    channels: usize,
    cache: FusionCache<T>,
}

impl<T: Real> Fusion<T> {
    pub fn new(kind: FusionKind, channels: usize) -> Self {
        let in_ch = if kind == FusionKind::None { channels } else { 2 * channels };
        Self {
            kind,
            block: ConvBlock::new(in_ch, channels, 3, 1),
            channels,
            cache: FusionCache::None,
        }
    }

    fn check(fv: &FeatureGrid<T>, bev: &FeatureGrid<T>) -> Result<()> {
        if fv.view != View::Front || bev.view != View::Bird {
            return Err(Error::Shape("fusion expects (front view, BEV) grids".into()));
        }
        let [n1, c1, _, x1] = fv.shape();
        let [n2, c2, _, x2] = bev.shape();
        if x1 != x2 {
            return Err(Error::Shape(format!(
                "front view has {x1} columns but BEV has {x2}; the grids must share the x axis"
            )));
        }
        if c1 != c2 || n1 != n2 {
            return Err(Error::Shape(format!(
                "channel/batch mismatch: front view {:?}, BEV {:?}",
                fv.shape(),
                bev.shape()
            )));
        }
        Ok(())
    }

    /// The `2C` (or `C` for `None`) input of the fusion conv block.
    pub fn fused_input(&self, fv: &FeatureGrid<T>, bev: &FeatureGrid<T>) -> Result<Array4<T>> {
        Self::check(fv, bev)?;
        Ok(self.build_input(&fv.data, &bev.data).0)
    }

    fn build_input(&self, fv: &Array4<T>, bev: &Array4<T>) -> (Array4<T>, FusionCache<T>) {
        match self.kind {
            FusionKind::None => (bev.clone(), FusionCache::Bypass { fv_dim: fv.dim() }),
            FusionKind::Cpf | FusionKind::Scf => {
                let fc = condense_front_view(fv);
                let sim = (self.kind == FusionKind::Scf).then(|| column_similarity(&fc, bev));
                let input = pushed_input(bev, &fc, sim.as_ref());
                let cache = FusionCache::Column {
                    fv_rows: fv.dim().2,
                    fc,
                    bev: bev.clone(),
                    sim,
                };
                (input, cache)
            }
            FusionKind::Sgf => {
                let (att, weights) = global_attention(fv, bev);
                let input = concat_channels(bev, &att);
                let cache = FusionCache::Global {
                    fv: fv.clone(),
                    bev: bev.clone(),
                    weights,
                };
                (input, cache)
            }
        }
    }

    pub fn forward(&mut self, fv: &FeatureGrid<T>, bev: &FeatureGrid<T>, train: bool) -> Result<FeatureGrid<T>> {
        Self::check(fv, bev)?;
        let (input, cache) = self.build_input(&fv.data, &bev.data);
        self.cache = if train { cache } else { FusionCache::None };
        Ok(FeatureGrid::new(self.block.forward(&input, train), View::Bird))
    }

    /// Returns `(d f_fv, d f_bev)`.
    pub fn backward(&mut self, d_out: &Array4<T>) -> (Array4<T>, Array4<T>) {
        let d_in = self.block.backward(d_out);
        let c = self.channels;
        let mut d_bev = d_in.slice(s![.., ..c, .., ..]).to_owned();
        match std::mem::replace(&mut self.cache, FusionCache::None) {
            FusionCache::None => panic!("fusion backward without training forward"),
            // the front view does not reach the output
            FusionCache::Bypass { fv_dim } => (Array4::zeros(fv_dim), d_bev),
            FusionCache::Column { fv_rows, fc, bev, sim } => {
                let dg = d_in.slice(s![.., c.., .., ..]);
                let (n, _, rows, cols) = bev.dim();
                let scale = T::one() / T::lit(c as f64).sqrt();
                let mut dfc = Array3::<T>::zeros((n, c, cols));
                match &sim {
                    None => {
                        dfc.assign(&dg.sum_axis(Axis(2)));
                    }
                    Some(sim) => {
                        // ds[b, j, i] = sum_c dg * fc
                        let mut ds = Array3::<T>::zeros((n, rows, cols));
                        for b in 0..n {
                            for ch in 0..c {
                                for j in 0..rows {
                                    for i in 0..cols {
                                        let g = dg[[b, ch, j, i]];
                                        ds[[b, j, i]] += g * fc[[b, ch, i]];
                                        dfc[[b, ch, i]] += g * sim[[b, j, i]];
                                    }
                                }
                            }
                        }
                        for b in 0..n {
                            for ch in 0..c {
                                for j in 0..rows {
                                    for i in 0..cols {
                                        let d = ds[[b, j, i]] * scale;
                                        dfc[[b, ch, i]] += d * bev[[b, ch, j, i]];
                                        d_bev[[b, ch, j, i]] += d * fc[[b, ch, i]];
                                    }
                                }
                            }
                        }
                    }
                }
                let inv_rows = T::one() / T::lit(fv_rows as f64);
                let d_fv = Array4::from_shape_fn((n, c, fv_rows, cols), |(b, ch, _, i)| {
                    dfc[[b, ch, i]] * inv_rows
                });
                (d_fv, d_bev)
            }
            FusionCache::Global { fv, bev, weights } => {
                let (n, _, rows, cols) = bev.dim();
                let (_, _, fz, fx) = fv.dim();
                let scale = T::one() / T::lit(c as f64).sqrt();
                let datt_all = d_in.slice(s![.., c.., .., ..]).to_owned();
                let mut d_fv = Array4::<T>::zeros((n, c, fz, fx));
                for b in 0..n {
                    let a = &weights[b];
                    let k = as_matrix(fv.view(), b);
                    let q = as_matrix(bev.view(), b);
                    let datt = datt_all
                        .slice(s![b, .., .., ..])
                        .to_owned()
                        .into_shape_with_order((c, rows * cols))
                        .expect("shape");
                    // d fv (value path) = datt * a
                    let mut dk = Array2::<T>::zeros((c, fz * fx));
                    general_mat_mul(T::one(), &datt, a, T::zero(), &mut dk);
                    // da[q, k] = sum_c datt[c, q] fv[c, k]
                    let mut da = Array2::<T>::zeros(a.dim());
                    general_mat_mul(T::one(), &datt.t(), &k, T::zero(), &mut da);
                    // softmax backward
                    let mut dl = da;
                    for (mut drow, arow) in dl.axis_iter_mut(Axis(0)).zip(a.axis_iter(Axis(0))) {
                        let dot: T = drow.iter().zip(arow.iter()).map(|(&d, &p)| d * p).sum();
                        drow.zip_mut_with(&arow, |d, &p| *d = p * (*d - dot));
                    }
                    // logits = scale * q^T k
                    let mut dq = Array2::<T>::zeros((c, rows * cols));
                    general_mat_mul(scale, &k, &dl.t(), T::zero(), &mut dq);
                    general_mat_mul(scale, &q, &dl, T::one(), &mut dk);
                    d_fv.slice_mut(s![b, .., .., ..])
                        .assign(&dk.into_shape_with_order((c, fz, fx)).expect("shape"));
                    let mut db = d_bev.slice_mut(s![b, .., .., ..]);
                    db += &dq.into_shape_with_order((c, rows, cols)).expect("shape");
                }
                (d_fv, d_bev)
            }
        }
    }
}

impl<T: Real> Module<T> for Fusion<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.block.visit_params(&join(prefix, "block"), f);
    }
}
