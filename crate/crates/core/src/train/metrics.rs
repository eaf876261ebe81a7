//! PSNR per frame and over a split.

use alloc::vec::Vec;

use crate::math;
use crate::render::Image;

/// MSE floor; caps PSNR at 120 dB.
pub const MSE_FLOOR: f64 = 1e-12;

pub fn mse(pred: &Image, target: &Image) -> f64 {
    let n = pred.data.len().min(target.data.len()).max(1);
    pred.data
        .iter()
        .zip(&target.data)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n as f64
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    10.0 * math::log10(1.0 / mse.max(MSE_FLOOR))
}

/// `10·log10(1/MSE)` over RGB values in `[0, 1]`.
pub fn psnr(pred: &Image, target: &Image) -> f64 {
    psnr_from_mse(mse(pred, target))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScore {
    pub identity: usize,
    pub frame: usize,
    pub mse: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub frames: Vec<FrameScore>,
    /// PSNR of the MSE pooled over every frame.
    pub psnr: f64,
    /// Mean of the per-frame PSNRs.
    pub mean_frame_psnr: f64,
}

impl Metrics {
    pub fn from_frames(frames: Vec<FrameScore>) -> Self {
        let n = frames.len().max(1) as f64;
        let pooled = frames.iter().map(|f| f.mse).sum::<f64>() / n;
        let mean = frames.iter().map(|f| f.psnr).sum::<f64>() / n;
        Metrics {
            frames,
            psnr: psnr_from_mse(pooled),
            mean_frame_psnr: mean,
        }
    }

    /// Pooled PSNR over the frames of one identity.
    pub fn identity_psnr(&self, identity: usize) -> f64 {
        let sel: Vec<f64> = self
            .frames
            .iter()
            .filter(|f| f.identity == identity)
            .map(|f| f.mse)
            .collect();
        psnr_from_mse(sel.iter().sum::<f64>() / sel.len().max(1) as f64)
    }
}
