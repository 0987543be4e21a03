//! Right-padded label batching with a validity mask. Frames stay per-episode
//! (the encoder consumes ragged sequences); the padded arrays align labels
//! for inspection, export, and the batching contract tests.

use ndarray::{Array2, Array3};

use super::TrainError;
use crate::datagen::Episode;

#[derive(Debug, Clone)]
pub struct PaddedBatch {
    pub episodes: Vec<Episode>,
    pub max_len: usize,
    /// [batch, max_len] expert action indices; padding holds 0 (Stop).
    pub actions: Array2<i64>,
    /// [batch, max_len] true on real steps.
    pub mask: Array2<bool>,
    /// [batch, max_len, 2] normalized tracked pixels.
    pub pixels: Array3<f32>,
    pub visible: Array2<bool>,
    pub distances: Array2<u32>,
}

impl PaddedBatch {
    pub fn real_steps(&self) -> usize {
        self.mask.iter().filter(|v| **v).count()
    }
}

pub fn make_batch(episodes: Vec<Episode>, max_len: usize) -> Result<PaddedBatch, TrainError> {
    if episodes.is_empty() {
        return Err(TrainError::BadConfig("cannot batch zero episodes".into()));
    }
    let longest = episodes.iter().map(|e| e.len()).max().unwrap();
    if longest > max_len {
        return Err(TrainError::BadConfig(format!(
            "episode of length {longest} exceeds max_len {max_len}"
        )));
    }
    let b = episodes.len();
    let mut actions = Array2::<i64>::zeros((b, longest));
    let mut mask = Array2::<bool>::from_elem((b, longest), false);
    let mut pixels = Array3::<f32>::zeros((b, longest, 2));
    let mut visible = Array2::<bool>::from_elem((b, longest), false);
    let mut distances = Array2::<u32>::zeros((b, longest));
    for (bi, ep) in episodes.iter().enumerate() {
        let labels = ep.labels();
        for t in 0..ep.len() {
            actions[[bi, t]] = labels.actions[t].index() as i64;
            mask[[bi, t]] = true;
            pixels[[bi, t, 0]] = labels.pixels[t].0;
            pixels[[bi, t, 1]] = labels.pixels[t].1;
            visible[[bi, t]] = labels.visible[t];
            distances[[bi, t]] = labels.distances[t];
        }
    }
    Ok(PaddedBatch { episodes, max_len: longest, actions, mask, pixels, visible, distances })
}
