//! Adam with per-block learning rates and exponential decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gaussian::{Block, ParamLayout};
use crate::math;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Learning-rate group of one trainable entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrGroup {
    /// Position rows of the params factor and the identity and Gaussian
    /// factors; exponentially decayed.
    Decayed,
    Scale,
    Rotation,
    Appearance,
    Opacity,
}

impl LrGroup {
    pub fn for_block(block: Block) -> LrGroup {
        match block {
            Block::Position => LrGroup::Decayed,
            Block::ScaleLog => LrGroup::Scale,
            Block::Rotation => LrGroup::Rotation,
            Block::Appearance => LrGroup::Appearance,
            Block::OpacityLogit => LrGroup::Opacity,
        }
    }

    /// Group of each column of `layout`.
    pub fn columns(layout: &ParamLayout) -> Vec<LrGroup> {
        (0..layout.total())
            .map(|c| LrGroup::for_block(layout.block_of(c)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub decayed_init: f64,
    pub decayed_final: f64,
    pub scale: f64,
    pub rotation: f64,
    pub appearance: f64,
    pub opacity: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            decayed_init: 1.6e-4,
            decayed_final: 1.6e-6,
            scale: 5e-3,
            rotation: 1e-3,
            appearance: 2.5e-3,
            opacity: 5e-2,
        }
    }
}

impl LearningRates {
    /// Rates calibrated for small synthetic scenes trained for a few
    /// thousand iterations.
    pub fn desk_scale() -> Self {
        LearningRates {
            decayed_init: 1.6e-2,
            decayed_final: 4.8e-3,
            scale: 3e-2,
            rotation: 6e-3,
            appearance: 1.5e-2,
            opacity: 3e-1,
        }
    }

    pub fn zero() -> Self {
        LearningRates {
            decayed_init: 0.0,
            decayed_final: 0.0,
            scale: 0.0,
            rotation: 0.0,
            appearance: 0.0,
            opacity: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.decayed_init,
            self.decayed_final,
            self.scale,
            self.rotation,
            self.appearance,
            self.opacity,
        ];
        if !all.iter().all(|r| r.is_finite() && *r >= 0.0) {
            return Err(Error::arg("learning rates must be finite and non-negative"));
        }
        if self.decayed_init > 0.0 && self.decayed_final == 0.0 {
            return Err(Error::arg("decayed learning rate cannot decay to zero"));
        }
        Ok(())
    }

    /// `init · (final / init)^(step / max_steps)`, clamped at `final` beyond
    /// `max_steps`.
    pub fn decayed(&self, step: u64, max_steps: u64) -> f64 {
        if self.decayed_init == 0.0 {
            return 0.0;
        }
        if max_steps == 0 || step >= max_steps {
            return self.decayed_final;
        }
        let frac = step as f64 / max_steps as f64;
        self.decayed_init * math::powf(self.decayed_final / self.decayed_init, frac)
    }

    /// Rates indexed by `LrGroup as usize`.
    pub fn at(&self, step: u64, max_steps: u64) -> [f64; 5] {
        [
            self.decayed(step, max_steps),
            self.scale,
            self.rotation,
            self.appearance,
            self.opacity,
        ]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        LearningRates {
            decayed_init: self.decayed_init * factor,
            decayed_final: self.decayed_final * factor,
            scale: self.scale * factor,
            rotation: self.rotation * factor,
            appearance: self.appearance * factor,
            opacity: self.opacity * factor,
        }
    }
}

/// Adam moments over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    skipped: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            skipped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Entries whose update was skipped because their gradient was not finite.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// One bias-corrected Adam update over `segments` (concatenated in order),
    /// touching only entries whose `mask` bit is set. `rates[group as usize]`
    /// is the learning rate for each entry's group.
    pub fn step(
        &mut self,
        segments: Vec<&mut [f64]>,
        grads: &[f64],
        mask: &[bool],
        groups: &[LrGroup],
        rates: &[f64; 5],
    ) -> Result<()> {
        let n = self.m.len();
        let total: usize = segments.iter().map(|s| s.len()).sum();
        if total != n || grads.len() != n || mask.len() != n || groups.len() != n {
            return Err(Error::shape(
                "AdamState::step",
                n,
                (total, grads.len(), mask.len(), groups.len()),
            ));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - math::powf(BETA1, t);
        let bc2 = 1.0 - math::powf(BETA2, t);
        let mut idx = 0;
        for seg in segments {
            for p in seg.iter_mut() {
                let e = idx;
                idx += 1;
                if !mask[e] {
                    continue;
                }
                let g = grads[e];
                if !g.is_finite() {
                    self.skipped += 1;
                    continue;
                }
                self.m[e] = BETA1 * self.m[e] + (1.0 - BETA1) * g;
                self.v[e] = BETA2 * self.v[e] + (1.0 - BETA2) * g * g;
                let m_hat = self.m[e] / bc1;
                let v_hat = self.v[e] / bc2;
                *p -= rates[groups[e] as usize] * m_hat / (math::sqrt(v_hat) + EPSILON);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        let mut adam = AdamState::new(2);
        let mut x = [1.0, 1.0];
        let rates = [0.1; 5];
        adam.step(
            vec![&mut x[..]],
            &[1.0, -3.0],
            &[true, true],
            &[LrGroup::Scale; 2],
            &rates,
        )
        .unwrap();
        let expect = 0.1 * (1.0 / (1.0 + EPSILON));
        assert!((x[0] - (1.0 - expect)).abs() < 1e-15);
        assert!((x[1] - (1.0 + 0.1 * 3.0 / (3.0 + EPSILON))).abs() < 1e-15);
    }

    #[test]
    fn masked_and_non_finite_entries_untouched() {
        let mut adam = AdamState::new(4);
        let mut a = [0.3, -0.7];
        let mut b = [1.5, 2.5];
        let before = (a, b);
        let mask = [true, false, true, false];
        let grads = [f64::NAN, 1.0, 2.0, 3.0];
        adam.step(
            vec![&mut a[..], &mut b[..]],
            &grads,
            &mask,
            &[LrGroup::Decayed; 4],
            &[0.5; 5],
        )
        .unwrap();
        assert_eq!(a[0].to_bits(), before.0[0].to_bits());
        assert_eq!(a[1].to_bits(), before.0[1].to_bits());
        assert_eq!(b[1].to_bits(), before.1[1].to_bits());
        assert_ne!(b[0], before.1[0]);
        assert_eq!(adam.skipped(), 1);
        assert!(adam
            .step(
                vec![&mut a[..]],
                &grads,
                &mask,
                &[LrGroup::Decayed; 4],
                &[0.5; 5]
            )
            .is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let lr = LearningRates::default();
        assert_eq!(lr.decayed(0, 1000), 1.6e-4);
        assert_eq!(lr.decayed(1000, 1000), 1.6e-6);
        let mid = lr.decayed(500, 1000);
        assert!((mid - 1.6e-5).abs() < 1e-18);
        assert_eq!(LearningRates::zero().decayed(10, 100), 0.0);
        assert!(LearningRates {
            decayed_final: 0.0,
            ..lr
        }
        .validate()
        .is_err());
    }

    #[test]
    fn per_block_groups() {
        let g = LrGroup::columns(&ParamLayout::splat2d());
        use LrGroup::*;
        assert_eq!(
            g,
            vec![
                Decayed, Decayed, Scale, Scale, Rotation, Appearance, Appearance, Appearance,
                Opacity
            ]
        );
    }
}
