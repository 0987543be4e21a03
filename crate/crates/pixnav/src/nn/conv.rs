//! Convolutional pieces: im2col conv, group norm, average pooling, and the
//! residual frame encoder used for both the goal and observation towers.

use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::layers::{relu, relu_backward, Linear};
use super::{GradStore, Init, Param, ParamBuilder, Scalar};

pub struct Conv2d<T> {
    pub w: Param<T>,
    pub b: Param<T>,
    pub stride: usize,
    pub pad: usize,
}

pub struct Conv2dCache<T> {
    cols: Array2<T>,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        builder: &mut ParamBuilder<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            w: builder.tensor(&format!("{name}.w"), &[out_ch, in_ch, kernel, kernel], Init::KaimingFanIn(fan_in)),
            b: builder.tensor(&format!("{name}.b"), &[out_ch], Init::Zeros),
            stride,
            pad,
        }
    }

    pub fn kernel(&self) -> usize {
        self.w.value.shape()[2]
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Array4<T>) -> (Array4<T>, Conv2dCache<T>) {
        let &[n, c, h, w] = x.shape() else { unreachable!() };
        let k = self.kernel();
        let oc = self.w.value.shape()[0];
        let (oh, ow) = self.out_size(h, w);
        let cols = im2col(x, k, self.stride, self.pad, oh, ow);
        let w2 = self
            .w
            .value
            .view()
            .into_shape_with_order((oc, c * k * k))
            .unwrap();
        let mut y2 = cols.dot(&w2.t());
        let b = self.b.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        y2 += &b;
        let y = y2
            .into_shape_with_order((n, oh, ow, oc))
            .unwrap()
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .to_owned();
        (y, Conv2dCache { cols, in_shape: [n, c, h, w], out_hw: (oh, ow) })
    }

    pub fn backward(
        &self,
        cache: &Conv2dCache<T>,
        dy: &Array4<T>,
        grads: &mut GradStore<T>,
    ) -> Array4<T> {
        let [n, c, h, w] = cache.in_shape;
        let (oh, ow) = cache.out_hw;
        let k = self.kernel();
        let oc = self.w.value.shape()[0];
        let dy2 = dy
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((n * oh * ow, oc))
            .unwrap();
        let dw = dy2.t().dot(&cache.cols);
        grads.accum(&self.w, &dw.into_shape_with_order([oc, c, k, k]).unwrap().into_dyn());
        grads.accum(&self.b, &dy2.sum_axis(Axis(0)).into_dyn());
        let w2 = self
            .w
            .value
            .view()
            .into_shape_with_order((oc, c * k * k))
            .unwrap();
        let dcols = dy2.dot(&w2);
        col2im(&dcols, [n, c, h, w], k, self.stride, self.pad, oh, ow)
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.w);
        f(&self.b);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

fn im2col<T: Scalar>(
    x: &Array4<T>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<T> {
    let &[n, c, h, w] = x.shape() else { unreachable!() };
    let xs = x.as_slice().expect("conv input must be standard layout");
    let ckk = c * k * k;
    let mut cols = Array2::<T>::zeros((n * oh * ow, ckk));
    let cs = cols.as_slice_mut().unwrap();
    for ni in 0..n {
        for oy in 0..oh {
            let iy0 = (oy * stride) as isize - pad as isize;
            for ox in 0..ow {
                let ix0 = (ox * stride) as isize - pad as isize;
                let row_base = ((ni * oh + oy) * ow + ox) * ckk;
                for ci in 0..c {
                    let src_chan = (ni * c + ci) * h * w;
                    for ky in 0..k {
                        let iy = iy0 + ky as isize;
                        let dst = row_base + (ci * k + ky) * k;
                        if iy < 0 || iy >= h as isize {
                            continue; // zero padding
                        }
                        let src_row = src_chan + iy as usize * w;
                        if ix0 >= 0 && ix0 + k as isize <= w as isize {
                            let s = src_row + ix0 as usize;
                            cs[dst..dst + k].copy_from_slice(&xs[s..s + k]);
                        } else {
                            for kx in 0..k {
                                let ix = ix0 + kx as isize;
                                if ix >= 0 && ix < w as isize {
                                    cs[dst + kx] = xs[src_row + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(
    dcols: &Array2<T>,
    in_shape: [usize; 4],
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array4<T> {
    let [n, c, h, w] = in_shape;
    let ckk = c * k * k;
    let ds = dcols.as_slice().expect("dcols standard layout");
    let mut dx = Array4::<T>::zeros((n, c, h, w));
    let xs = dx.as_slice_mut().unwrap();
    for ni in 0..n {
        for oy in 0..oh {
            let iy0 = (oy * stride) as isize - pad as isize;
            for ox in 0..ow {
                let ix0 = (ox * stride) as isize - pad as isize;
                let row_base = ((ni * oh + oy) * ow + ox) * ckk;
                for ci in 0..c {
                    let dst_chan = (ni * c + ci) * h * w;
                    for ky in 0..k {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = dst_chan + iy as usize * w;
                        let src = row_base + (ci * k + ky) * k;
                        for kx in 0..k {
                            let ix = ix0 + kx as isize;
                            if ix >= 0 && ix < w as isize {
                                xs[dst_row + ix as usize] += ds[src + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn norm_groups(channels: usize) -> usize {
    for g in [8usize, 4, 2] {
        if channels % g == 0 {
            return g;
        }
    }
    1
}

pub struct GroupNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub groups: usize,
    pub eps: f64,
}

pub struct GroupNormCache<T> {
    xhat: Array4<T>,
    inv_std: Array2<T>,
}

impl<T: Scalar> GroupNorm<T> {
    pub fn new(builder: &mut ParamBuilder<T>, name: &str, channels: usize) -> Self {
        GroupNorm {
            gamma: builder.tensor(&format!("{name}.gamma"), &[channels], Init::Ones),
            beta: builder.tensor(&format!("{name}.beta"), &[channels], Init::Zeros),
            groups: norm_groups(channels),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Array4<T>) -> (Array4<T>, GroupNormCache<T>) {
        let &[n, c, h, w] = x.shape() else { unreachable!() };
        let g = self.groups;
        let cg = c / g;
        let m = cg * h * w;
        let inv_m = T::from_f64(1.0 / m as f64);
        let eps = T::from_f64(self.eps);
        let mut xhat = x.clone();
        let mut inv_std = Array2::zeros((n, g));
        for ni in 0..n {
            for gi in 0..g {
                let mut slab = xhat.slice_mut(ndarray::s![ni, gi * cg..(gi + 1) * cg, .., ..]);
                let mean = slab.sum() * inv_m;
                slab.mapv_inplace(|v| v - mean);
                let var = slab.iter().map(|v| *v * *v).fold(T::zero(), |a, b| a + b) * inv_m;
                let is = T::one() / (var + eps).sqrt();
                slab.mapv_inplace(|v| v * is);
                inv_std[[ni, gi]] = is;
            }
        }
        let mut y = xhat.clone();
        let gamma = &self.gamma.value;
        let beta = &self.beta.value;
        for ci in 0..c {
            let ga = gamma[[ci]];
            let be = beta[[ci]];
            y.slice_mut(ndarray::s![.., ci, .., ..])
                .mapv_inplace(|v| v * ga + be);
        }
        (y, GroupNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        cache: &GroupNormCache<T>,
        dy: &Array4<T>,
        grads: &mut GradStore<T>,
    ) -> Array4<T> {
        let &[n, c, h, w] = dy.shape() else { unreachable!() };
        let g = self.groups;
        let cg = c / g;
        let m = cg * h * w;
        let inv_m = T::from_f64(1.0 / m as f64);
        let mut dgamma = ndarray::Array1::<T>::zeros(c);
        let mut dbeta = ndarray::Array1::<T>::zeros(c);
        for ci in 0..c {
            let dys = dy.slice(ndarray::s![.., ci, .., ..]);
            let xhs = cache.xhat.slice(ndarray::s![.., ci, .., ..]);
            dgamma[ci] = dys.iter().zip(xhs.iter()).map(|(a, b)| *a * *b).fold(T::zero(), |a, b| a + b);
            dbeta[ci] = dys.sum();
        }
        grads.accum(&self.gamma, &dgamma.into_dyn());
        grads.accum(&self.beta, &dbeta.into_dyn());

        let mut dx = Array4::zeros(dy.raw_dim());
        for ni in 0..n {
            for gi in 0..g {
                let sl = ndarray::s![ni, gi * cg..(gi + 1) * cg, .., ..];
                let dy_slab = dy.slice(sl);
                let xh_slab = cache.xhat.slice(sl);
                let mut m1 = T::zero();
                let mut m2 = T::zero();
                for ci in 0..cg {
                    let ga = self.gamma.value[[gi * cg + ci]];
                    for (dyv, xh) in dy_slab
                        .index_axis(Axis(0), ci)
                        .iter()
                        .zip(xh_slab.index_axis(Axis(0), ci).iter())
                    {
                        let dxh = *dyv * ga;
                        m1 += dxh;
                        m2 += dxh * *xh;
                    }
                }
                m1 *= inv_m;
                m2 *= inv_m;
                let inv = cache.inv_std[[ni, gi]];
                let mut dx_slab = dx.slice_mut(sl);
                for ci in 0..cg {
                    let ga = self.gamma.value[[gi * cg + ci]];
                    let dy_ch = dy_slab.index_axis(Axis(0), ci);
                    let xh_ch = xh_slab.index_axis(Axis(0), ci);
                    for ((dxv, dyv), xh) in dx_slab
                        .index_axis_mut(Axis(0), ci)
                        .iter_mut()
                        .zip(dy_ch.iter())
                        .zip(xh_ch.iter())
                    {
                        let dxh = *dyv * ga;
                        *dxv = inv * (dxh - m1 - *xh * m2);
                    }
                }
            }
        }
        dx
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

/// Parameter-free k x k average pooling with stride k (exact division).
pub struct AvgPool2d {
    pub k: usize,
}

impl AvgPool2d {
    pub fn forward<T: Scalar>(&self, x: &Array4<T>) -> Array4<T> {
        let &[n, c, h, w] = x.shape() else { unreachable!() };
        let k = self.k;
        assert!(h % k == 0 && w % k == 0, "pool input {h}x{w} not divisible by {k}");
        let (oh, ow) = (h / k, w / k);
        let inv = T::from_f64(1.0 / (k * k) as f64);
        let mut y = Array4::zeros((n, c, oh, ow));
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = T::zero();
                        for ky in 0..k {
                            for kx in 0..k {
                                acc += x[[ni, ci, oy * k + ky, ox * k + kx]];
                            }
                        }
                        y[[ni, ci, oy, ox]] = acc * inv;
                    }
                }
            }
        }
        y
    }

    pub fn backward<T: Scalar>(&self, dy: &Array4<T>, in_hw: (usize, usize)) -> Array4<T> {
        let &[n, c, oh, ow] = dy.shape() else { unreachable!() };
        let k = self.k;
        let inv = T::from_f64(1.0 / (k * k) as f64);
        let mut dx = Array4::zeros((n, c, in_hw.0, in_hw.1));
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = dy[[ni, ci, oy, ox]] * inv;
                        for ky in 0..k {
                            for kx in 0..k {
                                dx[[ni, ci, oy * k + ky, ox * k + kx]] = g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

struct BasicBlock<T> {
    conv1: Conv2d<T>,
    gn1: GroupNorm<T>,
    conv2: Conv2d<T>,
    gn2: GroupNorm<T>,
    down: Option<(Conv2d<T>, GroupNorm<T>)>,
}

struct BasicBlockCache<T> {
    x: Array4<T>,
    c1: Conv2dCache<T>,
    g1: GroupNormCache<T>,
    a1: Array4<T>, // gn1 output (pre-relu)
    c2: Conv2dCache<T>,
    g2: GroupNormCache<T>,
    down: Option<(Conv2dCache<T>, GroupNormCache<T>)>,
    pre_relu: Array4<T>,
}

impl<T: Scalar> BasicBlock<T> {
    fn new(builder: &mut ParamBuilder<T>, name: &str, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        let down = if stride != 1 || in_ch != out_ch {
            Some((
                Conv2d::new(builder, &format!("{name}.down"), in_ch, out_ch, 1, stride, 0),
                GroupNorm::new(builder, &format!("{name}.down_gn"), out_ch),
            ))
        } else {
            None
        };
        BasicBlock {
            conv1: Conv2d::new(builder, &format!("{name}.conv1"), in_ch, out_ch, 3, stride, 1),
            gn1: GroupNorm::new(builder, &format!("{name}.gn1"), out_ch),
            conv2: Conv2d::new(builder, &format!("{name}.conv2"), out_ch, out_ch, 3, 1, 1),
            gn2: GroupNorm::new(builder, &format!("{name}.gn2"), out_ch),
            down,
        }
    }

    fn forward(&self, x: &Array4<T>) -> (Array4<T>, BasicBlockCache<T>) {
        let (h1, c1) = self.conv1.forward(x);
        let (a1, g1) = self.gn1.forward(&h1);
        let r1 = relu(&a1);
        let (h2, c2) = self.conv2.forward(&r1);
        let (a2, g2) = self.gn2.forward(&h2);
        let (skip, down) = match &self.down {
            Some((conv, gn)) => {
                let (s1, dc) = conv.forward(x);
                let (s2, dg) = gn.forward(&s1);
                (s2, Some((dc, dg)))
            }
            None => (x.clone(), None),
        };
        let pre_relu = &a2 + &skip;
        let y = relu(&pre_relu);
        (y, BasicBlockCache { x: x.clone(), c1, g1, a1, c2, g2, down, pre_relu })
    }

    fn backward(&self, cache: &BasicBlockCache<T>, dy: &Array4<T>, grads: &mut GradStore<T>) -> Array4<T> {
        let dpre = relu_backward(&cache.pre_relu, dy);
        let dskip = match (&self.down, &cache.down) {
            (Some((conv, gn)), Some((dc, dg))) => {
                let ds = gn.backward(dg, &dpre, grads);
                conv.backward(dc, &ds, grads)
            }
            _ => dpre.clone(),
        };
        let dh2 = self.gn2.backward(&cache.g2, &dpre, grads);
        let dr1 = self.conv2.backward(&cache.c2, &dh2, grads);
        let da1 = relu_backward(&cache.a1, &dr1);
        let dh1 = self.gn1.backward(&cache.g1, &da1, grads);
        let dx_main = self.conv1.backward(&cache.c1, &dh1, grads);
        dx_main + dskip
    }

    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.conv1.visit(f);
        self.gn1.visit(f);
        self.conv2.visit(f);
        self.gn2.visit(f);
        if let Some((conv, gn)) = &self.down {
            conv.visit(f);
            gn.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv1.visit_mut(f);
        self.gn1.visit_mut(f);
        self.conv2.visit_mut(f);
        self.gn2.visit_mut(f);
        if let Some((conv, gn)) = &mut self.down {
            conv.visit_mut(f);
            gn.visit_mut(f);
        }
    }
}

/// Residual frame encoder: optional input downsampling, a strided stem,
/// residual stages, global average pooling, and a linear head to the token
/// dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvEncoderConfig {
    pub in_channels: usize,
    pub input_downsample: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_pool: bool,
    /// (channels, first-block stride, blocks) per stage.
    pub stages: Vec<(usize, usize, usize)>,
    pub out_dim: usize,
}

pub struct ConvEncoder<T> {
    pub config: ConvEncoderConfig,
    input_pool: Option<AvgPool2d>,
    stem: Conv2d<T>,
    stem_gn: GroupNorm<T>,
    stem_pool: Option<AvgPool2d>,
    blocks: Vec<BasicBlock<T>>,
    head: Linear<T>,
}

pub struct ConvEncoderCache<T> {
    pooled_in_hw: (usize, usize),
    raw_in_hw: (usize, usize),
    stem_cache: Conv2dCache<T>,
    stem_gn_cache: GroupNormCache<T>,
    stem_act: Array4<T>, // gn output pre-relu
    stem_out: Array4<T>, // after relu (and before stem pool)
    block_caches: Vec<BasicBlockCache<T>>,
    gap_in: Array4<T>,
    gap_out: Array2<T>,
}

impl<T: Scalar> ConvEncoder<T> {
    pub fn new(builder: &mut ParamBuilder<T>, name: &str, config: ConvEncoderConfig) -> Self {
        let input_pool = (config.input_downsample > 1).then_some(AvgPool2d { k: config.input_downsample });
        let stem = Conv2d::new(
            builder,
            &format!("{name}.stem"),
            config.in_channels,
            config.stem_channels,
            config.stem_kernel,
            config.stem_stride,
            config.stem_kernel / 2,
        );
        let stem_gn = GroupNorm::new(builder, &format!("{name}.stem_gn"), config.stem_channels);
        let stem_pool = config.stem_pool.then_some(AvgPool2d { k: 2 });
        let mut blocks = Vec::new();
        let mut prev = config.stem_channels;
        for (si, &(ch, stride, nblocks)) in config.stages.iter().enumerate() {
            for bi in 0..nblocks {
                let s = if bi == 0 { stride } else { 1 };
                blocks.push(BasicBlock::new(builder, &format!("{name}.s{si}b{bi}"), prev, ch, s));
                prev = ch;
            }
        }
        let head = Linear::new(builder, &format!("{name}.head"), prev, config.out_dim, Init::Normal(0.02));
        ConvEncoder { config, input_pool, stem, stem_gn, stem_pool, blocks, head }
    }

    /// x: [n, c, h, w] -> tokens [n, out_dim]
    pub fn forward(&self, x: &Array4<T>) -> (Array2<T>, ConvEncoderCache<T>) {
        let raw_in_hw = (x.shape()[2], x.shape()[3]);
        let pooled = match &self.input_pool {
            Some(p) => p.forward(x),
            None => x.clone(),
        };
        let pooled_in_hw = (pooled.shape()[2], pooled.shape()[3]);
        let (h, stem_cache) = self.stem.forward(&pooled);
        let (a, stem_gn_cache) = self.stem_gn.forward(&h);
        let r = relu(&a);
        let stem_out = match &self.stem_pool {
            Some(p) => p.forward(&r),
            None => r.clone(),
        };
        let mut cur = stem_out.clone();
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(&cur);
            block_caches.push(cache);
            cur = next;
        }
        let gap_in = cur;
        let &[n, c, gh, gw] = gap_in.shape() else { unreachable!() };
        let inv = T::from_f64(1.0 / (gh * gw) as f64);
        let mut pooled_feat = Array2::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                pooled_feat[[ni, ci]] =
                    gap_in.slice(ndarray::s![ni, ci, .., ..]).sum() * inv;
            }
        }
        let tokens = self.head.forward(&pooled_feat);
        (
            tokens,
            ConvEncoderCache {
                pooled_in_hw,
                raw_in_hw,
                stem_cache,
                stem_gn_cache,
                stem_act: a,
                stem_out: r,
                block_caches,
                gap_in,
                gap_out: pooled_feat,
            },
        )
    }

    /// Backward to parameter gradients only (input gradients are discarded:
    /// frames are leaves).
    pub fn backward(&self, cache: &ConvEncoderCache<T>, d_tokens: &Array2<T>, grads: &mut GradStore<T>) {
        let d_pooled = self.head.backward(&cache.gap_out, d_tokens, grads);
        let &[n, c, gh, gw] = cache.gap_in.shape() else { unreachable!() };
        let inv = T::from_f64(1.0 / (gh * gw) as f64);
        let mut dcur = Array4::zeros((n, c, gh, gw));
        for ni in 0..n {
            for ci in 0..c {
                let g = d_pooled[[ni, ci]] * inv;
                dcur.slice_mut(ndarray::s![ni, ci, .., ..]).fill(g);
            }
        }
        for (block, bcache) in self.blocks.iter().zip(&cache.block_caches).rev() {
            dcur = block.backward(bcache, &dcur, grads);
        }
        let dr = match &self.stem_pool {
            Some(p) => {
                let hw = (cache.stem_out.shape()[2], cache.stem_out.shape()[3]);
                p.backward(&dcur, hw)
            }
            None => dcur,
        };
        let da = relu_backward(&cache.stem_act, &dr);
        let dh = self.stem_gn.backward(&cache.stem_gn_cache, &da, grads);
        let _dx = self.stem.backward(&cache.stem_cache, &dh, grads);
        let _ = (cache.pooled_in_hw, cache.raw_in_hw);
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.stem.visit(f);
        self.stem_gn.visit(f);
        for b in &self.blocks {
            b.visit(f);
        }
        self.head.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stem.visit_mut(f);
        self.stem_gn.visit_mut(f);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel_passes_through() {
        let mut b = ParamBuilder::<f64>::new(0);
        let mut conv = Conv2d::new(&mut b, "c", 1, 1, 3, 1, 1);
        conv.w.value.fill(0.0);
        conv.w.value[[0, 0, 1, 1]] = 1.0;
        let x = Array4::from_shape_fn((1, 1, 4, 5), |(_, _, y, x)| (y * 5 + x) as f64);
        let (y, _) = conv.forward(&x);
        assert_eq!(y, x);
    }

    #[test]
    fn conv_backward_shapes_match() {
        let mut b = ParamBuilder::<f64>::new(1);
        let conv = Conv2d::new(&mut b, "c", 2, 3, 3, 2, 1);
        let x = Array4::from_shape_fn((2, 2, 8, 6), |(n, c, y, x)| (n + c + y + x) as f64 * 0.1);
        let (y, cache) = conv.forward(&x);
        let mut grads = GradStore::new(b.num_tensors());
        let dy = Array4::from_elem(y.raw_dim(), 1.0);
        let dx = conv.backward(&cache, &dy, &mut grads);
        assert_eq!(dx.shape(), x.shape());
        assert!(grads.get(conv.w.id).is_some());
    }

    #[test]
    fn avgpool_roundtrip_constant() {
        let pool = AvgPool2d { k: 2 };
        let x = Array4::from_elem((1, 1, 4, 4), 3.0f64);
        let y = pool.forward(&x);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.iter().all(|v| (*v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn groupnorm_normalizes_groups() {
        let mut b = ParamBuilder::<f64>::new(0);
        let gn = GroupNorm::new(&mut b, "gn", 4);
        let x = Array4::from_shape_fn((1, 4, 2, 2), |(_, c, y, x)| (c * 10 + y * 2 + x) as f64);
        let (y, _) = gn.forward(&x);
        // Each group's output should have (approximately) zero mean.
        let g = gn.groups;
        let cg = 4 / g;
        for gi in 0..g {
            let mean: f64 = y
                .slice(ndarray::s![0, gi * cg..(gi + 1) * cg, .., ..])
                .mean()
                .unwrap();
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn encoder_output_shape() {
        let cfg = ConvEncoderConfig {
            in_channels: 3,
            input_downsample: 2,
            stem_channels: 8,
            stem_kernel: 5,
            stem_stride: 4,
            stem_pool: false,
            stages: vec![(8, 2, 1), (16, 2, 1)],
            out_dim: 32,
        };
        let mut b = ParamBuilder::<f32>::new(7);
        let enc = ConvEncoder::new(&mut b, "enc", cfg);
        let x = Array4::from_elem((2, 3, 120, 160), 0.5f32);
        let (tokens, _) = enc.forward(&x);
        assert_eq!(tokens.shape(), &[2, 32]);
    }
}
