//! Causally masked multi-head self-attention and the pre-norm decoder block.
//!
//! The forward pass computes each output row from prefix slices only, so the
//! output at position i is bit-identical no matter what later tokens hold.

use ndarray::{s, Array2};

use super::layers::{gelu, gelu_backward, LayerNorm, LayerNormCache, Linear};
use super::{GradStore, Init, Param, ParamBuilder, Scalar};

pub struct MultiHeadAttention<T> {
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    pub n_heads: usize,
}

pub struct AttentionCache<T> {
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    /// Per-head [t, t] attention weights, zero above the diagonal.
    probs: Vec<Array2<T>>,
    ctx: Array2<T>,
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn new(builder: &mut ParamBuilder<T>, name: &str, dim: usize, n_heads: usize) -> Self {
        assert!(dim % n_heads == 0, "model width {dim} not divisible by {n_heads} heads");
        let init = Init::Normal(0.02);
        MultiHeadAttention {
            wq: Linear::new(builder, &format!("{name}.wq"), dim, dim, init),
            wk: Linear::new(builder, &format!("{name}.wk"), dim, dim, init),
            wv: Linear::new(builder, &format!("{name}.wv"), dim, dim, init),
            wo: Linear::new(builder, &format!("{name}.wo"), dim, dim, init),
            n_heads: n_heads,
        }
    }

    /// x: [t, d] -> [t, d], causal.
    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, AttentionCache<T>) {
        let t = x.nrows();
        let d = x.ncols();
        let hd = d / self.n_heads;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);
        let mut ctx = Array2::<T>::zeros((t, d));
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut ph = Array2::<T>::zeros((t, t));
            for i in 0..t {
                // Scores over the causal prefix j <= i only.
                let qi = qh.row(i);
                let mut row_max = T::neg_infinity();
                let mut scores = vec![T::zero(); i + 1];
                for (j, slot) in scores.iter_mut().enumerate() {
                    let s = qi.dot(&kh.row(j)) * scale;
                    *slot = s;
                    row_max = row_max.max(s);
                }
                let mut sum = T::zero();
                for slot in scores.iter_mut() {
                    *slot = (*slot - row_max).exp();
                    sum += *slot;
                }
                let mut ctx_row = ctx.row_mut(i);
                for (j, w) in scores.iter().enumerate() {
                    let p = *w / sum;
                    ph[[i, j]] = p;
                    let vr = vh.row(j);
                    for (c, vv) in vr.iter().enumerate() {
                        ctx_row[h * hd + c] += p * *vv;
                    }
                }
            }
            probs.push(ph);
        }
        let y = self.wo.forward(&ctx);
        (y, AttentionCache { q, k, v, probs, ctx })
    }

    pub fn backward(
        &self,
        x: &Array2<T>,
        cache: &AttentionCache<T>,
        dy: &Array2<T>,
        grads: &mut GradStore<T>,
    ) -> Array2<T> {
        let t = x.nrows();
        let d = x.ncols();
        let hd = d / self.n_heads;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let dctx = self.wo.backward(&cache.ctx, dy, grads);
        let mut dq = Array2::<T>::zeros((t, d));
        let mut dk = Array2::<T>::zeros((t, d));
        let mut dv = Array2::<T>::zeros((t, d));
        for h in 0..self.n_heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let qh = cache.q.slice(cols).to_owned();
            let kh = cache.k.slice(cols).to_owned();
            let vh = cache.v.slice(cols).to_owned();
            let ph = &cache.probs[h];
            let dctx_h = dctx.slice(cols).to_owned();
            // dP = dCtx . V^T ; dV = P^T . dCtx   (masked entries of P are 0)
            let dp = dctx_h.dot(&vh.t());
            let dvh = ph.t().dot(&dctx_h);
            // Softmax backward per row over the causal prefix.
            let mut ds = Array2::<T>::zeros((t, t));
            for i in 0..t {
                let mut inner = T::zero();
                for j in 0..=i {
                    inner += ph[[i, j]] * dp[[i, j]];
                }
                for j in 0..=i {
                    ds[[i, j]] = ph[[i, j]] * (dp[[i, j]] - inner);
                }
            }
            let dqh = ds.dot(&kh).mapv(|v| v * scale);
            let dkh = ds.t().dot(&qh).mapv(|v| v * scale);
            dq.slice_mut(cols).assign(&dqh);
            dk.slice_mut(cols).assign(&dkh);
            dv.slice_mut(cols).assign(&dvh);
        }
        let dx_q = self.wq.backward(x, &dq, grads);
        let dx_k = self.wk.backward(x, &dk, grads);
        let dx_v = self.wv.backward(x, &dv, grads);
        dx_q + dx_k + dx_v
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.wq.visit(f);
        self.wk.visit(f);
        self.wv.visit(f);
        self.wo.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.wq.visit_mut(f);
        self.wk.visit_mut(f);
        self.wv.visit_mut(f);
        self.wo.visit_mut(f);
    }
}

/// Pre-norm transformer decoder block: x + attn(ln1(x)), then + mlp(ln2(.)).
pub struct DecoderBlock<T> {
    pub ln1: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub ln2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

pub struct DecoderBlockCache<T> {
    ln1c: LayerNormCache<T>,
    u: Array2<T>,
    attnc: AttentionCache<T>,
    x1: Array2<T>,
    ln2c: LayerNormCache<T>,
    v: Array2<T>,
    h_pre: Array2<T>,
    h: Array2<T>,
}

impl<T: Scalar> DecoderBlock<T> {
    pub fn new(builder: &mut ParamBuilder<T>, name: &str, dim: usize, n_heads: usize, mlp_dim: usize) -> Self {
        DecoderBlock {
            ln1: LayerNorm::new(builder, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(builder, &format!("{name}.attn"), dim, n_heads),
            ln2: LayerNorm::new(builder, &format!("{name}.ln2"), dim),
            fc1: Linear::new(builder, &format!("{name}.fc1"), dim, mlp_dim, Init::Normal(0.02)),
            fc2: Linear::new(builder, &format!("{name}.fc2"), mlp_dim, dim, Init::Normal(0.02)),
        }
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, DecoderBlockCache<T>) {
        let (u, ln1c) = self.ln1.forward(x);
        let (a, attnc) = self.attn.forward(&u);
        let x1 = x + &a;
        let (v, ln2c) = self.ln2.forward(&x1);
        let h_pre = self.fc1.forward(&v);
        let h = gelu(&h_pre);
        let m = self.fc2.forward(&h);
        let y = &x1 + &m;
        (y, DecoderBlockCache { ln1c, u, attnc, x1, ln2c, v, h_pre, h })
    }

    pub fn backward(&self, cache: &DecoderBlockCache<T>, dy: &Array2<T>, grads: &mut GradStore<T>) -> Array2<T> {
        let dh = self.fc2.backward(&cache.h, dy, grads);
        let dh_pre = gelu_backward(&cache.h_pre, &dh);
        let dv = self.fc1.backward(&cache.v, &dh_pre, grads);
        let dx1 = self.ln2.backward(&cache.ln2c, &dv, grads) + dy;
        let du = self.attn.backward(&cache.u, &cache.attnc, &dx1, grads);
        self.ln1.backward(&cache.ln1c, &du, grads) + &dx1
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.ln1.visit(f);
        self.attn.visit(f);
        self.ln2.visit(f);
        self.fc1.visit(f);
        self.fc2.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.ln1.visit_mut(f);
        self.attn.visit_mut(f);
        self.ln2.visit_mut(f);
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_is_causal_bit_exact() {
        let mut b = ParamBuilder::<f32>::new(3);
        let attn = MultiHeadAttention::new(&mut b, "a", 16, 4);
        let x1 = Array2::from_shape_fn((6, 16), |(i, j)| ((i * 17 + j * 3) % 11) as f32 * 0.1);
        let mut x2 = x1.clone();
        for j in 0..16 {
            x2[[4, j]] += 1.5; // perturb token 4
            x2[[5, j]] -= 0.7;
        }
        let (y1, _) = attn.forward(&x1);
        let (y2, _) = attn.forward(&x2);
        for i in 0..4 {
            for j in 0..16 {
                assert_eq!(y1[[i, j]].to_bits(), y2[[i, j]].to_bits(), "row {i} col {j}");
            }
        }
        assert!(y1.row(4).iter().zip(y2.row(4)).any(|(a, b)| a != b));
    }

    #[test]
    fn decoder_block_preserves_shape() {
        let mut b = ParamBuilder::<f64>::new(4);
        let block = DecoderBlock::new(&mut b, "blk", 8, 2, 16);
        let x = Array2::from_shape_fn((5, 8), |(i, j)| (i as f64 - j as f64) * 0.05);
        let (y, cache) = block.forward(&x);
        assert_eq!(y.shape(), x.shape());
        let mut grads = GradStore::new(b.num_tensors());
        let dy = Array2::from_elem(y.raw_dim(), 1.0);
        let dx = block.backward(&cache, &dy, &mut grads);
        assert_eq!(dx.shape(), x.shape());
    }
}
