//! Photometric, mask and isometry losses with their gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::deform::iso_losses;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianGrad, GaussianSet};
use crate::math;
use crate::render::{AlphaMask, Image};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub mask: f64,
    pub isopos: f64,
    pub isocov: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            mask: 0.1,
            isopos: 1.0,
            isocov: 100.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.l1, self.mask, self.isopos, self.isocov];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::arg("loss weights must be finite and non-negative"))
        }
    }
}

/// Unweighted loss terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub l1: f64,
    pub mask: f64,
    pub isopos: f64,
    pub isocov: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub image: Image,
    pub mask: AlphaMask,
    /// Isometry gradients on the canonical Gaussians (empty without a pair).
    pub canonical: Vec<GaussianGrad>,
    /// Isometry gradients on the deformed Gaussians (empty without a pair).
    pub observed: Vec<GaussianGrad>,
}

/// Canonical/deformed Gaussians plus the edges the isometry terms run over.
#[derive(Debug, Clone, Copy)]
pub struct DeformPair<'a> {
    pub canonical: &'a GaussianSet,
    pub observed: &'a GaussianSet,
    pub edges: &'a [(usize, usize)],
}

/// `λ_l1·mean|ΔRGB| + λ_mask·mean|Δmask| + λ_isopos·L_isopos + λ_isocov·L_isocov`.
pub fn total_loss(
    pred: (&Image, &AlphaMask),
    target: (&Image, &AlphaMask),
    pair: Option<DeformPair<'_>>,
    weights: &LossWeights,
) -> Result<(LossTerms, LossGrads)> {
    let (pi, pm) = pred;
    let (ti, tm) = target;
    if (pi.width, pi.height) != (ti.width, ti.height)
        || (pm.width, pm.height) != (tm.width, tm.height)
        || (pi.width, pi.height) != (pm.width, pm.height)
        || pi.data.len() != ti.data.len()
        || pm.data.len() != tm.data.len()
    {
        return Err(Error::shape(
            "total_loss",
            (ti.width, ti.height),
            (pi.width, pi.height),
        ));
    }
    let mut terms = LossTerms::default();
    let n_rgb = pi.data.len().max(1) as f64;
    let mut g_img = vec![0.0; pi.data.len()];
    for ((g, p), t) in g_img.iter_mut().zip(&pi.data).zip(&ti.data) {
        terms.l1 += (p - t).abs();
        *g = weights.l1 * math::sign0(p - t) / n_rgb;
    }
    terms.l1 /= n_rgb;
    let n_px = pm.data.len().max(1) as f64;
    let mut g_mask = vec![0.0; pm.data.len()];
    for ((g, p), t) in g_mask.iter_mut().zip(&pm.data).zip(&tm.data) {
        terms.mask += (p - t).abs();
        *g = weights.mask * math::sign0(p - t) / n_px;
    }
    terms.mask /= n_px;
    let (mut canonical, mut observed) = (Vec::new(), Vec::new());
    if let Some(pair) = pair {
        if weights.isopos != 0.0 || weights.isocov != 0.0 {
            let iso = iso_losses(
                pair.canonical,
                pair.observed,
                pair.edges,
                weights.isopos,
                weights.isocov,
            )?;
            terms.isopos = iso.isopos;
            terms.isocov = iso.isocov;
            canonical = iso.grad_canonical;
            observed = iso.grad_observed;
        }
    }
    terms.total = weights.l1 * terms.l1
        + weights.mask * terms.mask
        + weights.isopos * terms.isopos
        + weights.isocov * terms.isocov;
    let grads = LossGrads {
        image: Image {
            width: pi.width,
            height: pi.height,
            data: g_img,
        },
        mask: AlphaMask {
            width: pm.width,
            height: pm.height,
            data: g_mask,
        },
        canonical,
        observed,
    };
    Ok((terms, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_inputs_give_zero() {
        let img = Image::from_vec(2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let mask = AlphaMask::from_vec(2, 1, vec![0.3, 0.9]).unwrap();
        let set = GaussianSet::default();
        let pair = DeformPair {
            canonical: &set,
            observed: &set,
            edges: &[],
        };
        let (t, g) = total_loss(
            (&img, &mask),
            (&img, &mask),
            Some(pair),
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!(t.total, 0.0);
        assert!(g.image.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn white_versus_black() {
        let white = Image::from_vec(2, 2, vec![1.0; 12]).unwrap();
        let black = Image::black(2, 2);
        let m = AlphaMask::zeros(2, 2);
        let w = LossWeights {
            l1: 1.0,
            mask: 0.0,
            isopos: 0.0,
            isocov: 0.0,
        };
        let (t, _) = total_loss((&white, &m), (&black, &m), None, &w).unwrap();
        assert_eq!(t.total, 1.0);
        assert!(total_loss((&white, &m), (&Image::black(1, 2), &m), None, &w).is_err());
    }
}
