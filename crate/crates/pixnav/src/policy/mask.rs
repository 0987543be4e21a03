//! Goal-mask construction and frame-to-tensor input assembly.

use ndarray::Array4;

use super::{PolicyError, GOAL_MASK_DELTA};
use crate::nn::Scalar;

/// Anything that exposes an RGB8 image buffer; implemented by simulator
/// frames and by RGB-only dataset frames.
pub trait RgbSource {
    fn dims(&self) -> (u32, u32);
    fn rgb_data(&self) -> &[u8];
}

impl RgbSource for crate::worldsim::Frame {
    fn dims(&self) -> (u32, u32) {
        (self.width, self.height_px)
    }
    fn rgb_data(&self) -> &[u8] {
        &self.rgb
    }
}

/// Binary goal mask: ones exactly inside the clipped box
/// (x-delta, y-delta, x+delta, y+delta), zeros elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl GoalMask {
    pub fn at(&self, x: u32, y: u32) -> u8 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn ones(&self) -> usize {
        self.data.iter().filter(|v| **v == 1).count()
    }
}

pub fn build_goal_mask(
    pixel: (u32, u32),
    width: u32,
    height: u32,
    delta: u32,
) -> Result<GoalMask, PolicyError> {
    let (px, py) = pixel;
    if px >= width || py >= height {
        return Err(PolicyError::PixelOutOfBounds(px, py));
    }
    let mut data = vec![0u8; (width * height) as usize];
    let x0 = px.saturating_sub(delta);
    let x1 = (px + delta).min(width - 1);
    let y0 = py.saturating_sub(delta);
    let y1 = (py + delta).min(height - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            data[(y * width + x) as usize] = 1;
        }
    }
    Ok(GoalMask { width, height, data })
}

/// Stacks RGB frames into a [frames, 3, H, W] tensor scaled to [0, 1].
pub fn frames_to_input<T: Scalar, F: RgbSource>(frames: &[F]) -> Result<Array4<T>, PolicyError> {
    let first = frames.first().ok_or(PolicyError::EmptyEpisode)?;
    let (w, h) = first.dims();
    let (w, h) = (w as usize, h as usize);
    let mut x = Array4::<T>::zeros((frames.len(), 3, h, w));
    let scale = T::from_f64(1.0 / 255.0);
    for (fi, frame) in frames.iter().enumerate() {
        if frame.dims() != (w as u32, h as u32) {
            return Err(PolicyError::DimMismatch { got: frame.dims(), want: (w as u32, h as u32) });
        }
        let rgb = frame.rgb_data();
        for y in 0..h {
            for xx in 0..w {
                let i = (y * w + xx) * 3;
                x[[fi, 0, y, xx]] = T::from_f64(rgb[i] as f64) * scale;
                x[[fi, 1, y, xx]] = T::from_f64(rgb[i + 1] as f64) * scale;
                x[[fi, 2, y, xx]] = T::from_f64(rgb[i + 2] as f64) * scale;
            }
        }
    }
    Ok(x)
}

/// Channel-wise concatenation of the first frame with its goal mask:
/// a [1, 4, H, W] tensor.
pub fn goal_input<T: Scalar, F: RgbSource>(
    frame0: &F,
    goal_pixel: (u32, u32),
) -> Result<Array4<T>, PolicyError> {
    let (wu, hu) = frame0.dims();
    let (w, h) = (wu as usize, hu as usize);
    let mask = build_goal_mask(goal_pixel, wu, hu, GOAL_MASK_DELTA)?;
    let rgb = frame0.rgb_data();
    let mut x = Array4::<T>::zeros((1, 4, h, w));
    let scale = T::from_f64(1.0 / 255.0);
    for y in 0..h {
        for xx in 0..w {
            let i = (y * w + xx) * 3;
            x[[0, 0, y, xx]] = T::from_f64(rgb[i] as f64) * scale;
            x[[0, 1, y, xx]] = T::from_f64(rgb[i + 1] as f64) * scale;
            x[[0, 2, y, xx]] = T::from_f64(rgb[i + 2] as f64) * scale;
            x[[0, 3, y, xx]] = T::from_f64(mask.data[y * w + xx] as f64);
        }
    }
    Ok(x)
}
