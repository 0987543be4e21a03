//! The policy network. Observation tokens from a residual encoder carry a
//! fused goal feature (or follow a goal prefix token when fusion is off),
//! run through a causally masked transformer decoder, and feed three linear
//! heads: action logits, tracked pixel, and scaled temporal distance.

use ndarray::{s, Array1, Array2, Array4, ArrayD, Axis};

use super::{PolicyConfig, PolicyError, PolicyOutput, DISTANCE_SCALE};
use crate::nn::{
    sigmoid, sigmoid_backward, ConvEncoder, ConvEncoderCache, DecoderBlock, DecoderBlockCache,
    GradStore, Init, LayerNorm, LayerNormCache, Linear, Param, ParamBuilder, Scalar,
};

pub struct PixNavModel<T> {
    pub config: PolicyConfig,
    pub init_seed: u64,
    num_tensors: usize,
    goal_enc: ConvEncoder<T>,
    obs_enc: ConvEncoder<T>,
    fusion: Option<Linear<T>>,
    prefix_proj: Option<Linear<T>>,
    pos_emb: Param<T>,
    blocks: Vec<DecoderBlock<T>>,
    final_ln: LayerNorm<T>,
    policy_head: Linear<T>,
    track_head: Option<Linear<T>>,
    dist_head: Option<Linear<T>>,
}

pub struct EpisodeOutputs<T> {
    /// [frames, 6] action logits.
    pub logits: Array2<T>,
    /// [frames, 2] tracked pixel in [0,1]^2 (sigmoid output).
    pub pixels: Option<Array2<T>>,
    /// [frames, 1] scaled temporal distance (multiply by 10 for steps).
    pub dist_raw: Option<Array2<T>>,
}

impl<T: Scalar> EpisodeOutputs<T> {
    pub fn len(&self) -> usize {
        self.logits.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn step_outputs(&self) -> Vec<PolicyOutput> {
        (0..self.len())
            .map(|t| {
                let mut logits = [0f32; 6];
                for (i, slot) in logits.iter_mut().enumerate() {
                    *slot = self.logits[[t, i]].as_f64() as f32;
                }
                PolicyOutput {
                    logits,
                    pixel: self.pixels.as_ref().map(|p| {
                        (p[[t, 0]].as_f64() as f32, p[[t, 1]].as_f64() as f32)
                    }),
                    temporal_distance: self
                        .dist_raw
                        .as_ref()
                        .map(|d| (d[[t, 0]].as_f64() * DISTANCE_SCALE) as f32),
                }
            })
            .collect()
    }
}

pub struct EpisodeCache<T> {
    goal_cache: ConvEncoderCache<T>,
    obs_cache: ConvEncoderCache<T>,
    goal_token: Array2<T>,
    obs_tokens: Array2<T>,
    seq_in: Array2<T>,
    block_caches: Vec<DecoderBlockCache<T>>,
    final_ln_cache: LayerNormCache<T>,
    head_in: Array2<T>,
    pixels_pre_sigmoid: Option<Array2<T>>,
    frames: usize,
}

impl<T: Scalar> PixNavModel<T> {
    pub fn new(config: PolicyConfig, seed: u64) -> Self {
        let mut b = ParamBuilder::<T>::new(seed);
        let width = config.decoder_width();
        let goal_enc = ConvEncoder::new(&mut b, "goal_enc", config.goal_encoder.clone());
        let obs_enc = ConvEncoder::new(&mut b, "obs_enc", config.obs_encoder.clone());
        let fusion = config.use_goal_fusion.then(|| {
            Linear::new(&mut b, "goal_fusion", config.goal_token_dim, config.fusion_dim, Init::Normal(0.02))
        });
        let prefix_proj = (!config.use_goal_fusion).then(|| {
            Linear::new(&mut b, "goal_prefix", config.goal_token_dim, width, Init::Normal(0.02))
        });
        // One extra position for the goal prefix in the no-fusion layout.
        let pos_emb = b.tensor("pos_emb", &[config.max_seq + 1, width], Init::Normal(0.01));
        let blocks = (0..config.decoder_layers)
            .map(|i| DecoderBlock::new(&mut b, &format!("decoder.{i}"), width, config.n_heads, config.mlp_dim))
            .collect();
        let final_ln = LayerNorm::new(&mut b, "final_ln", width);
        let policy_head = Linear::new(&mut b, "policy_head", width, 6, Init::Normal(0.02));
        let track_head = config
            .use_tracking_head
            .then(|| Linear::new(&mut b, "track_head", width, 2, Init::Normal(0.02)));
        let dist_head = config
            .use_distance_head
            .then(|| Linear::new(&mut b, "dist_head", width, 1, Init::Normal(0.02)));
        PixNavModel {
            config,
            init_seed: seed,
            num_tensors: b.num_tensors(),
            goal_enc,
            obs_enc,
            fusion,
            prefix_proj,
            pos_emb,
            blocks,
            final_ln,
            policy_head,
            track_head,
            dist_head,
        }
    }

    pub fn num_tensors(&self) -> usize {
        self.num_tensors
    }

    pub fn grad_store(&self) -> GradStore<T> {
        GradStore::new(self.num_tensors)
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.goal_enc.visit(f);
        self.obs_enc.visit(f);
        if let Some(l) = &self.fusion {
            l.visit(f);
        }
        if let Some(l) = &self.prefix_proj {
            l.visit(f);
        }
        f(&self.pos_emb);
        for blk in &self.blocks {
            blk.visit(f);
        }
        self.final_ln.visit(f);
        self.policy_head.visit(f);
        if let Some(l) = &self.track_head {
            l.visit(f);
        }
        if let Some(l) = &self.dist_head {
            l.visit(f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.goal_enc.visit_mut(f);
        self.obs_enc.visit_mut(f);
        if let Some(l) = &mut self.fusion {
            l.visit_mut(f);
        }
        if let Some(l) = &mut self.prefix_proj {
            l.visit_mut(f);
        }
        f(&mut self.pos_emb);
        for blk in &mut self.blocks {
            blk.visit_mut(f);
        }
        self.final_ln.visit_mut(f);
        self.policy_head.visit_mut(f);
        if let Some(l) = &mut self.track_head {
            l.visit_mut(f);
        }
        if let Some(l) = &mut self.dist_head {
            l.visit_mut(f);
        }
    }

    /// Encodes the 4-channel goal input into the goal token.
    pub fn encode_goal(&self, goal_x: &Array4<T>) -> Result<Array1<T>, PolicyError> {
        let want = (self.config.frame_width, self.config.frame_height);
        let got = (goal_x.shape()[3] as u32, goal_x.shape()[2] as u32);
        if got != want || goal_x.shape()[1] != 4 {
            return Err(PolicyError::DimMismatch { got, want });
        }
        let (tokens, _) = self.goal_enc.forward(goal_x);
        Ok(tokens.row(0).to_owned())
    }

    /// Full-episode forward: frames [F,3,H,W] plus the goal input [1,4,H,W].
    /// Output t depends only on frames up to t and the goal.
    pub fn forward_episode(
        &self,
        obs_x: &Array4<T>,
        goal_x: &Array4<T>,
    ) -> Result<(EpisodeOutputs<T>, EpisodeCache<T>), PolicyError> {
        let frames = obs_x.shape()[0];
        if frames == 0 {
            return Err(PolicyError::EmptyEpisode);
        }
        if frames > self.config.max_seq {
            return Err(PolicyError::SequenceOverflow { len: frames, max: self.config.max_seq });
        }
        let want = (self.config.frame_width, self.config.frame_height);
        let got = (obs_x.shape()[3] as u32, obs_x.shape()[2] as u32);
        if got != want {
            return Err(PolicyError::DimMismatch { got, want });
        }
        let (goal_token, goal_cache) = self.goal_enc.forward(goal_x);
        let (obs_tokens, obs_cache) = self.obs_enc.forward(obs_x);
        let width = self.config.decoder_width();

        let (mut seq, head_rows_start) = match (&self.fusion, &self.prefix_proj) {
            (Some(fusion), None) => {
                let fused = fusion.forward(&goal_token); // [1, fusion_dim]
                let mut seq = Array2::<T>::zeros((frames, width));
                seq.slice_mut(s![.., ..self.config.obs_token_dim]).assign(&obs_tokens);
                let f_row = fused.row(0);
                for mut row in seq.slice_mut(s![.., self.config.obs_token_dim..]).rows_mut() {
                    row.assign(&f_row);
                }
                (seq, 0usize)
            }
            (None, Some(prefix)) => {
                let goal_row = prefix.forward(&goal_token); // [1, width]
                let mut seq = Array2::<T>::zeros((frames + 1, width));
                seq.row_mut(0).assign(&goal_row.row(0));
                seq.slice_mut(s![1.., ..]).assign(&obs_tokens);
                (seq, 1usize)
            }
            _ => unreachable!("exactly one of fusion/prefix exists"),
        };
        let rows = seq.nrows();
        let pos = self.pos_emb.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        seq += &pos.slice(s![..rows, ..]);
        let seq_in = seq.clone();

        let mut cur = seq;
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (next, cache) = blk.forward(&cur);
            block_caches.push(cache);
            cur = next;
        }
        let (normed, final_ln_cache) = self.final_ln.forward(&cur);
        let head_in = normed.slice(s![head_rows_start.., ..]).to_owned();

        let logits = self.policy_head.forward(&head_in);
        let (pixels, pixels_pre_sigmoid) = match &self.track_head {
            Some(head) => {
                let pre = head.forward(&head_in);
                (Some(sigmoid(&pre)), Some(pre))
            }
            None => (None, None),
        };
        let dist_raw = self.dist_head.as_ref().map(|head| head.forward(&head_in));

        Ok((
            EpisodeOutputs { logits, pixels, dist_raw },
            EpisodeCache {
                goal_cache,
                obs_cache,
                goal_token,
                obs_tokens,
                seq_in,
                block_caches,
                final_ln_cache,
                head_in,
                pixels_pre_sigmoid,
                frames,
            },
        ))
    }

    /// Backpropagates output gradients into `grads`. `d_pixels` is the
    /// gradient w.r.t. the sigmoid *output*.
    pub fn backward_episode(
        &self,
        cache: &EpisodeCache<T>,
        outputs: &EpisodeOutputs<T>,
        d_logits: &Array2<T>,
        d_pixels: Option<&Array2<T>>,
        d_dist_raw: Option<&Array2<T>>,
        grads: &mut GradStore<T>,
    ) {
        let mut d_head_in = self.policy_head.backward(&cache.head_in, d_logits, grads);
        if let (Some(head), Some(dp), Some(pix), Some(pre)) = (
            &self.track_head,
            d_pixels,
            outputs.pixels.as_ref(),
            cache.pixels_pre_sigmoid.as_ref(),
        ) {
            let d_pre = sigmoid_backward(pix, dp);
            let _ = pre;
            d_head_in = d_head_in + head.backward(&cache.head_in, &d_pre, grads);
        }
        if let (Some(head), Some(dd)) = (&self.dist_head, d_dist_raw) {
            d_head_in = d_head_in + head.backward(&cache.head_in, dd, grads);
        }

        let rows = cache.seq_in.nrows();
        let width = self.config.decoder_width();
        let head_rows_start = rows - cache.frames;
        let mut d_normed = Array2::<T>::zeros((rows, width));
        d_normed.slice_mut(s![head_rows_start.., ..]).assign(&d_head_in);

        let mut d_cur = self.final_ln.backward(&cache.final_ln_cache, &d_normed, grads);
        for (blk, bc) in self.blocks.iter().zip(&cache.block_caches).rev() {
            d_cur = blk.backward(bc, &d_cur, grads);
        }

        // Position embeddings: rows 0..rows receive the sequence gradient.
        let mut d_pos = ArrayD::<T>::zeros(self.pos_emb.value.raw_dim());
        d_pos
            .slice_mut(s![..rows, ..])
            .assign(&d_cur.view().into_dyn());
        grads.accum(&self.pos_emb, &d_pos);

        match (&self.fusion, &self.prefix_proj) {
            (Some(fusion), None) => {
                let d_obs = d_cur.slice(s![.., ..self.config.obs_token_dim]).to_owned();
                let d_fused_rows = d_cur.slice(s![.., self.config.obs_token_dim..]);
                let d_fused = d_fused_rows
                    .sum_axis(Axis(0))
                    .insert_axis(Axis(0));
                let d_goal_token = fusion.backward(&cache.goal_token, &d_fused, grads);
                self.obs_enc.backward(&cache.obs_cache, &d_obs, grads);
                self.goal_enc.backward(&cache.goal_cache, &d_goal_token, grads);
            }
            (None, Some(prefix)) => {
                let d_prefix = d_cur.slice(s![..1, ..]).to_owned();
                let d_obs = d_cur.slice(s![1.., ..]).to_owned();
                let d_goal_token = prefix.backward(&cache.goal_token, &d_prefix, grads);
                self.obs_enc.backward(&cache.obs_cache, &d_obs, grads);
                self.goal_enc.backward(&cache.goal_cache, &d_goal_token, grads);
            }
            _ => unreachable!(),
        }
    }
}
