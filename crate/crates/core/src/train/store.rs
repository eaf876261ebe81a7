//! Trainable parameter stores seen as flat vectors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gaussian::{
    inverse_activate, make_mask, slice_backward, Block, FactorizedAvatarStore, GaussianSet,
    MaskMode, ParamLayout,
};
use crate::tensor::Mat;

use super::optim::LrGroup;

/// Anything the training loop can optimize: it yields per-identity raw
/// slices and maps slice gradients onto a flat parameter vector.
pub trait ParamStore {
    fn layout(&self) -> &ParamLayout;
    fn n_identities(&self) -> usize;
    fn raw_slice(&self, i: usize) -> Result<Mat>;
    /// Total trainable entries, frozen or not.
    fn param_len(&self) -> usize;
    /// Learning-rate group of every entry.
    fn lr_groups(&self) -> Vec<LrGroup>;
    /// Entries a step in `mode` may change.
    fn mask(&self, mode: MaskMode) -> Result<Vec<bool>>;
    /// Flat gradient of a loss on identity `i`'s raw slice.
    fn flat_grad(&self, i: usize, raw_grad: &Mat) -> Result<Vec<f64>>;
    /// Parameter storage in flat order.
    fn segments_mut(&mut self) -> Vec<&mut [f64]>;
}

impl ParamStore for FactorizedAvatarStore {
    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn n_identities(&self) -> usize {
        FactorizedAvatarStore::n_identities(self)
    }

    fn raw_slice(&self, i: usize) -> Result<Mat> {
        FactorizedAvatarStore::raw_slice(self, i)
    }

    fn param_len(&self) -> usize {
        let m = &self.model;
        let res = self
            .personalization
            .as_ref()
            .map_or(0, |p| p.iter().map(|r| r.data().len()).sum());
        (m.n_params() + m.n_identities() + m.n_gaussians()) * m.rank() + res
    }

    fn lr_groups(&self) -> Vec<LrGroup> {
        let m = &self.model;
        let r = m.rank();
        let mut out = Vec::with_capacity(self.param_len());
        for p in 0..m.n_params() {
            out.extend(core::iter::repeat_n(
                LrGroup::for_block(self.layout.block_of(p)),
                r,
            ));
        }
        out.extend(core::iter::repeat_n(
            LrGroup::Decayed,
            (m.n_identities() + m.n_gaussians()) * r,
        ));
        if let Some(res) = &self.personalization {
            let cols: Vec<LrGroup> = self
                .layout
                .residual_columns()
                .map(|c| LrGroup::for_block(self.layout.block_of(c)))
                .collect();
            for r in res {
                for _ in 0..r.rows() {
                    out.extend_from_slice(&cols);
                }
            }
        }
        out
    }

    fn mask(&self, mode: MaskMode) -> Result<Vec<bool>> {
        let res_len = self.n_gaussians() * self.layout.residual_width();
        Ok(make_mask(self, mode)?.flatten(res_len))
    }

    fn flat_grad(&self, i: usize, raw_grad: &Mat) -> Result<Vec<f64>> {
        let (fg, res) = slice_backward(self, i, raw_grad)?;
        let mut out = Vec::with_capacity(self.param_len());
        out.extend_from_slice(fg.g_params.data());
        out.extend_from_slice(fg.g_identity.data());
        out.extend_from_slice(fg.g_gaussian.data());
        if let (Some(all), Some(gi)) = (&self.personalization, res) {
            for (j, r) in all.iter().enumerate() {
                if j == i {
                    out.extend_from_slice(gi.data());
                } else {
                    out.extend(core::iter::repeat_n(0.0, r.data().len()));
                }
            }
        }
        Ok(out)
    }

    fn segments_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.model.u_params.data_mut(),
            self.model.u_identity.data_mut(),
            self.model.u_gaussian.data_mut(),
        ];
        if let Some(res) = &mut self.personalization {
            out.extend(res.iter_mut().map(|r| r.data_mut()));
        }
        out
    }
}

/// Unshared baseline: one free `N_g × M` raw matrix per identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStore {
    pub layout: ParamLayout,
    pub slices: Vec<Mat>,
}

impl DenseStore {
    /// Every identity starts from the same seed Gaussians.
    pub fn from_seed(seed_set: &GaussianSet, n_identities: usize) -> Result<Self> {
        if n_identities == 0 {
            return Err(Error::arg("dense store needs at least one identity"));
        }
        let layout = ParamLayout::splat2d();
        let raw = inverse_activate(&layout, seed_set)?;
        Ok(DenseStore {
            layout,
            slices: vec![raw; n_identities],
        })
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.slices.len() {
            return Err(Error::Index {
                what: "identity",
                index: i,
                len: self.slices.len(),
            });
        }
        Ok(())
    }
}

impl ParamStore for DenseStore {
    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn n_identities(&self) -> usize {
        self.slices.len()
    }

    fn raw_slice(&self, i: usize) -> Result<Mat> {
        self.check(i)?;
        Ok(self.slices[i].clone())
    }

    fn param_len(&self) -> usize {
        self.slices.iter().map(|s| s.data().len()).sum()
    }

    fn lr_groups(&self) -> Vec<LrGroup> {
        let cols = LrGroup::columns(&self.layout);
        let mut out = Vec::with_capacity(self.param_len());
        for s in &self.slices {
            for _ in 0..s.rows() {
                out.extend_from_slice(&cols);
            }
        }
        out
    }

    /// `PerIdentity(i)` and `NovelIdentity(i)` free slice `i`;
    /// `Personalization(i)` frees its appearance and opacity columns.
    fn mask(&self, mode: MaskMode) -> Result<Vec<bool>> {
        let m = self.layout.total();
        let mut out = Vec::with_capacity(self.param_len());
        let target = match mode {
            MaskMode::Full => None,
            MaskMode::PerIdentity(i)
            | MaskMode::NovelIdentity(i)
            | MaskMode::Personalization(i) => {
                self.check(i)?;
                Some(i)
            }
        };
        for (j, s) in self.slices.iter().enumerate() {
            for _ in 0..s.rows() {
                for c in 0..m {
                    let on = match mode {
                        MaskMode::Full => true,
                        MaskMode::Personalization(_) => {
                            Some(j) == target
                                && matches!(
                                    self.layout.block_of(c),
                                    Block::Appearance | Block::OpacityLogit
                                )
                        }
                        _ => Some(j) == target,
                    };
                    out.push(on);
                }
            }
        }
        Ok(out)
    }

    fn flat_grad(&self, i: usize, raw_grad: &Mat) -> Result<Vec<f64>> {
        self.check(i)?;
        if raw_grad.shape() != self.slices[i].shape() {
            return Err(Error::shape(
                "DenseStore::flat_grad",
                self.slices[i].shape(),
                raw_grad.shape(),
            ));
        }
        let mut out = Vec::with_capacity(self.param_len());
        for (j, s) in self.slices.iter().enumerate() {
            if j == i {
                out.extend_from_slice(raw_grad.data());
            } else {
                out.extend(core::iter::repeat_n(0.0, s.data().len()));
            }
        }
        Ok(out)
    }

    fn segments_mut(&mut self) -> Vec<&mut [f64]> {
        self.slices.iter_mut().map(|s| s.data_mut()).collect()
    }
}
