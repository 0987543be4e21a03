//! Supervised training over imitation episodes: seeded shuffling, padded
//! batching, Adam with cosine decay and gradient clipping, JSONL metrics,
//! and checkpoint/resume.

mod batch;
#[cfg(test)]
mod tests;

pub use batch::{make_batch, PaddedBatch};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{DatagenError, DatasetReader, Episode};
use crate::nn::{clip_global_norm, cosine_lr, Adam, AdamConfig};
use crate::policy::{
    loss_with_grads, save_checkpoint, CheckpointMeta, PixNavModel, PolicyConfig, PolicyError,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training config invalid: {0}")]
    BadConfig(String),
    #[error("loss became non-finite at step {step}; diagnostics at {dump:?}")]
    NanLoss { step: u64, dump: PathBuf },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Dataset(#[from] DatagenError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub min_lr_frac: f64,
    pub steps: u64,
    pub grad_clip: f64,
    pub seed: u64,
    pub policy_init_seed: u64,
    pub policy: PolicyConfig,
    pub adam: AdamConfig,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            lr: 3e-4,
            warmup_steps: 100,
            min_lr_frac: 0.02,
            steps: 4000,
            grad_clip: 1.0,
            seed: 7,
            policy_init_seed: 7,
            policy: PolicyConfig::desk(),
            adam: AdamConfig::default(),
            eval_every: 500,
            eval_episodes: 32,
            checkpoint_every: 1000,
            log_every: 10,
        }
    }
}

/// Anything that can hand out episodes by index.
pub trait EpisodeSource {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn load(&self, index: usize) -> Result<Episode, TrainError>;
}

impl EpisodeSource for DatasetReader {
    fn len(&self) -> usize {
        DatasetReader::len(self)
    }
    fn load(&self, index: usize) -> Result<Episode, TrainError> {
        Ok(self.load_episode(index)?)
    }
}

impl EpisodeSource for Vec<Episode> {
    fn len(&self) -> usize {
        (**self).len()
    }
    fn load(&self, index: usize) -> Result<Episode, TrainError> {
        Ok(self[index].clone())
    }
}

/// Seed-deterministic episode order for one epoch.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e3779b97f4a7c15));
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub il: f64,
    pub distance: f64,
    pub track: f64,
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_loss: Option<f64>,
}

pub struct TrainOutcome {
    pub model: PixNavModel<f32>,
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub last_loss: f64,
    pub steps_run: u64,
}

/// One gradient step over a batch of episodes; returns the loss terms and
/// pre-clip gradient norm. Episodes forward/backward one at a time into a
/// shared gradient store, so memory stays flat in the batch size.
pub fn train_step(
    model: &mut PixNavModel<f32>,
    optimizer: &mut Adam<f32>,
    episodes: &[Episode],
    lr: f64,
    grad_clip: f64,
) -> Result<(crate::policy::LossTerms, f64), TrainError> {
    let mut forwards = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let obs = crate::policy::frames_to_input::<f32, _>(&ep.frames)?;
        let goal = crate::policy::goal_input::<f32, _>(&ep.frames[0], ep.goal_pixel)?;
        let (out, cache) = model.forward_episode(&obs, &goal)?;
        forwards.push((out, cache, ep.labels()));
    }
    let pairs: Vec<_> = forwards.iter().map(|(out, _, labels)| (out, labels)).collect();
    let (terms, out_grads) = loss_with_grads(&pairs, &model.config)?;
    let mut grads = model.grad_store();
    for ((out, cache, _), og) in forwards.iter().zip(&out_grads) {
        model.backward_episode(
            cache,
            out,
            &og.d_logits,
            og.d_pixels.as_ref(),
            og.d_dist_raw.as_ref(),
            &mut grads,
        );
    }
    let norm = clip_global_norm(&mut grads, grad_clip);
    optimizer.begin_step();
    model.visit_params_mut(&mut |p| optimizer.update_param(p, &grads, lr));
    Ok((terms, norm))
}

/// Full training loop. Writes `metrics.jsonl` and checkpoints under
/// `out_dir`; returns the trained model and the final checkpoint path.
pub fn train(
    source: &dyn EpisodeSource,
    config: &TrainConfig,
    out_dir: &Path,
    resume_from: Option<&Path>,
    mut progress: impl FnMut(u64, u64, f64),
) -> Result<TrainOutcome, TrainError> {
    if source.is_empty() {
        return Err(TrainError::BadConfig("dataset is empty".into()));
    }
    if config.batch_size == 0 || config.steps == 0 || config.lr <= 0.0 {
        return Err(TrainError::BadConfig(
            "batch size, steps, and learning rate must be positive".into(),
        ));
    }
    std::fs::create_dir_all(out_dir)?;
    let (mut model, mut optimizer, start_step) = match resume_from {
        Some(path) => {
            let ckpt = crate::policy::load_checkpoint(path)?;
            if ckpt.model.config != config.policy {
                return Err(TrainError::BadConfig(
                    "checkpoint policy config differs from training config".into(),
                ));
            }
            let opt = ckpt.optimizer.ok_or_else(|| {
                TrainError::BadConfig("checkpoint has no optimizer state to resume from".into())
            })?;
            (ckpt.model, opt, ckpt.meta.train_step)
        }
        None => {
            let model = PixNavModel::<f32>::new(config.policy.clone(), config.policy_init_seed);
            let optimizer = Adam::new(model.num_tensors(), config.adam);
            (model, optimizer, 0)
        }
    };

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics = std::io::BufWriter::new(
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&metrics_path)?,
    );

    let n = source.len();
    let steps_per_epoch = n.div_ceil(config.batch_size) as u64;
    let mut last_loss = f64::NAN;
    for step in start_step..config.steps {
        let epoch = step / steps_per_epoch;
        let pos = (step % steps_per_epoch) as usize;
        let perm = epoch_permutation(n, config.seed, epoch);
        let lo = pos * config.batch_size;
        let hi = (lo + config.batch_size).min(n);
        let mut episodes = Vec::with_capacity(hi - lo);
        for &idx in &perm[lo..hi] {
            episodes.push(source.load(idx)?);
        }
        let lr = cosine_lr(config.lr, step, config.steps, config.warmup_steps, config.min_lr_frac);
        let (terms, grad_norm) =
            train_step(&mut model, &mut optimizer, &episodes, lr, config.grad_clip)?;
        last_loss = terms.total;

        if !terms.total.is_finite() {
            let dump = out_dir.join("nan_dump.json");
            let diag = serde_json::json!({
                "step": step,
                "lr": lr,
                "terms": {"il": terms.il, "distance": terms.distance, "track": terms.track},
                "grad_norm": grad_norm,
                "config": config,
            });
            std::fs::write(&dump, serde_json::to_string_pretty(&diag).unwrap())?;
            return Err(TrainError::NanLoss { step, dump });
        }

        let log_now = step % config.log_every.max(1) == 0 || step + 1 == config.steps;
        let probe = if config.eval_every > 0 && (step + 1) % config.eval_every == 0 {
            Some(probe_loss(&model, source, config.eval_episodes)?)
        } else {
            None
        };
        if log_now || probe.is_some() {
            let rec = MetricsRecord {
                step,
                lr,
                total: terms.total,
                il: terms.il,
                distance: terms.distance,
                track: terms.track,
                grad_norm,
                probe_loss: probe,
            };
            serde_json::to_writer(&mut metrics, &rec)
                .map_err(|e| TrainError::BadConfig(e.to_string()))?;
            metrics.write_all(b"\n")?;
            metrics.flush()?;
        }
        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
            let meta = CheckpointMeta { train_step: step + 1, extra: serde_json::Value::Null };
            save_checkpoint(&out_dir.join(format!("ckpt_{:06}.ckpt", step + 1)), &model, Some(&optimizer), &meta)?;
        }
        progress(step + 1, config.steps, terms.total);
    }

    let final_path = out_dir.join("final.ckpt");
    let meta = CheckpointMeta { train_step: config.steps, extra: serde_json::Value::Null };
    save_checkpoint(&final_path, &model, Some(&optimizer), &meta)?;
    Ok(TrainOutcome {
        model,
        final_checkpoint: final_path,
        metrics_path,
        last_loss,
        steps_run: config.steps - start_step,
    })
}

/// Mean loss over a fixed probe slice of the dataset (diagnostic only).
fn probe_loss(
    model: &PixNavModel<f32>,
    source: &dyn EpisodeSource,
    episodes: usize,
) -> Result<f64, TrainError> {
    let count = episodes.min(source.len()).max(1);
    let mut forwards = Vec::with_capacity(count);
    for i in 0..count {
        let ep = source.load(i)?;
        let obs = crate::policy::frames_to_input::<f32, _>(&ep.frames)?;
        let goal = crate::policy::goal_input::<f32, _>(&ep.frames[0], ep.goal_pixel)?;
        let (out, _) = model.forward_episode(&obs, &goal)?;
        forwards.push((out, ep.labels()));
    }
    let pairs: Vec<_> = forwards.iter().map(|(o, l)| (o, l)).collect();
    Ok(crate::policy::compute_loss(&pairs, &model.config)?.total)
}

/// Teacher-forced expert-action accuracy over a set of episodes.
pub fn action_accuracy(
    model: &PixNavModel<f32>,
    episodes: &[Episode],
) -> Result<f64, TrainError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for ep in episodes {
        let obs = crate::policy::frames_to_input::<f32, _>(&ep.frames)?;
        let goal = crate::policy::goal_input::<f32, _>(&ep.frames[0], ep.goal_pixel)?;
        let (out, _) = model.forward_episode(&obs, &goal)?;
        for (t, action) in ep.expert_actions.iter().enumerate() {
            let row = out.logits.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            if argmax == action.index() {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}
