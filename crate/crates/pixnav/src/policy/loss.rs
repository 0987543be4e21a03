//! Combined training objective: action cross-entropy plus MSE terms for the
//! temporal-distance and tracked-pixel heads, summed unweighted. Distance
//! targets are pre-divided by 10; tracking is masked where the goal is out
//! of view (configurable); padded steps never reach this code — batches pass
//! per-episode slices.

use ndarray::Array2;

use super::model::EpisodeOutputs;
use super::{PolicyConfig, PolicyError, DISTANCE_SCALE};
use crate::nn::Scalar;
use crate::worldsim::ActionId;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLabels {
    pub actions: Vec<ActionId>,
    /// Normalized [0,1]^2 tracked-pixel targets, one per frame.
    pub pixels: Vec<(f32, f32)>,
    pub visible: Vec<bool>,
    /// Remaining steps including the final Stop (1..=max horizon).
    pub distances: Vec<u32>,
}

impl EpisodeLabels {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub il: f64,
    pub distance: f64,
    pub track: f64,
}

pub struct OutputGrads<T> {
    pub d_logits: Array2<T>,
    pub d_pixels: Option<Array2<T>>,
    pub d_dist_raw: Option<Array2<T>>,
}

pub fn compute_loss<T: Scalar>(
    batch: &[(&EpisodeOutputs<T>, &EpisodeLabels)],
    config: &PolicyConfig,
) -> Result<LossTerms, PolicyError> {
    let (terms, _) = loss_impl(batch, config, false)?;
    Ok(terms)
}

pub fn loss_with_grads<T: Scalar>(
    batch: &[(&EpisodeOutputs<T>, &EpisodeLabels)],
    config: &PolicyConfig,
) -> Result<(LossTerms, Vec<OutputGrads<T>>), PolicyError> {
    let (terms, grads) = loss_impl(batch, config, true)?;
    Ok((terms, grads))
}

fn loss_impl<T: Scalar>(
    batch: &[(&EpisodeOutputs<T>, &EpisodeLabels)],
    config: &PolicyConfig,
    want_grads: bool,
) -> Result<(LossTerms, Vec<OutputGrads<T>>), PolicyError> {
    let mut n_steps = 0usize;
    let mut n_vis = 0usize;
    for (out, labels) in batch {
        let t = out.len();
        if labels.actions.len() != t
            || labels.pixels.len() != t
            || labels.visible.len() != t
            || labels.distances.len() != t
        {
            return Err(PolicyError::LabelMismatch);
        }
        n_steps += t;
        n_vis += labels
            .visible
            .iter()
            .filter(|v| config.track_invisible_targets || **v)
            .count();
    }
    if n_steps == 0 {
        return Err(PolicyError::AllPadded);
    }

    let inv_steps = T::from_f64(1.0 / n_steps as f64);
    let inv_vis = T::from_f64(if n_vis > 0 { 1.0 / n_vis as f64 } else { 0.0 });
    let inv_scale = T::from_f64(1.0 / DISTANCE_SCALE);
    let two = T::from_f64(2.0);

    let mut il_sum = T::zero();
    let mut dist_sum = T::zero();
    let mut track_sum = T::zero();
    let mut grads = Vec::with_capacity(if want_grads { batch.len() } else { 0 });

    for (out, labels) in batch {
        let t = out.len();
        let mut d_logits = Array2::<T>::zeros((t, 6));
        for ti in 0..t {
            let row = out.logits.row(ti);
            let max = row.iter().fold(T::neg_infinity(), |a, b| a.max(*b));
            let mut sum_exp = T::zero();
            for v in row.iter() {
                sum_exp += (*v - max).exp();
            }
            let log_z = max + sum_exp.ln();
            let target = labels.actions[ti].index();
            il_sum += log_z - row[target];
            if want_grads {
                for a in 0..6 {
                    let p = (row[a] - log_z).exp();
                    let y = if a == target { T::one() } else { T::zero() };
                    d_logits[[ti, a]] = (p - y) * inv_steps;
                }
            }
        }

        let d_dist = match (&out.dist_raw, config.use_distance_head) {
            (Some(raw), true) => {
                let mut dd = Array2::<T>::zeros((t, 1));
                for ti in 0..t {
                    let target = T::from_f64(labels.distances[ti] as f64) * inv_scale;
                    let diff = raw[[ti, 0]] - target;
                    dist_sum += diff * diff;
                    if want_grads {
                        dd[[ti, 0]] = two * diff * inv_steps;
                    }
                }
                Some(dd)
            }
            _ => None,
        };

        let d_pix = match (&out.pixels, config.use_tracking_head) {
            (Some(pix), true) => {
                let mut dp = Array2::<T>::zeros((t, 2));
                for ti in 0..t {
                    if !(config.track_invisible_targets || labels.visible[ti]) {
                        continue;
                    }
                    let tx = T::from_f64(labels.pixels[ti].0 as f64);
                    let ty = T::from_f64(labels.pixels[ti].1 as f64);
                    let dx = pix[[ti, 0]] - tx;
                    let dy = pix[[ti, 1]] - ty;
                    track_sum += dx * dx + dy * dy;
                    if want_grads {
                        dp[[ti, 0]] = two * dx * inv_vis;
                        dp[[ti, 1]] = two * dy * inv_vis;
                    }
                }
                Some(dp)
            }
            _ => None,
        };

        if want_grads {
            grads.push(OutputGrads { d_logits, d_pixels: d_pix, d_dist_raw: d_dist });
        }
    }

    let il = (il_sum * inv_steps).as_f64();
    let distance = (dist_sum * inv_steps).as_f64();
    let track = (track_sum * inv_vis).as_f64();
    Ok((LossTerms { total: il + distance + track, il, distance, track }, grads))
}
