//! Parameter layouts, activations and the factorized multi-identity store.
//!
//! The tensor stores raw, pre-activation values. Activations map them to
//! valid Gaussians: `scale = exp(scale_log)`, `opacity = sigmoid(logit)`,
//! colors through a sigmoid in the 2D layout, quaternions normalized in the
//! 3D layout, positions and 2D angles used as stored.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cp::{self, CPModel, FactorGrads, PowerOptions};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{rel_error, Mat, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    /// `2 + 2 + 1 + 3 + 1 = 9`: position, log-scale, angle, RGB logits, opacity logit.
    Splat2d,
    /// `3 + 3 + 4 + 32 + 1 = 43`: position, log-scale, quaternion, features, opacity logit.
    Splat3d,
}

/// Named block of a per-Gaussian parameter row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Position,
    ScaleLog,
    Rotation,
    Appearance,
    OpacityLogit,
}

impl Block {
    pub const ALL: [Block; 5] = [
        Block::Position,
        Block::ScaleLog,
        Block::Rotation,
        Block::Appearance,
        Block::OpacityLogit,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    kind: LayoutKind,
    lengths: [usize; 5],
}

impl ParamLayout {
    pub fn splat2d() -> Self {
        ParamLayout {
            kind: LayoutKind::Splat2d,
            lengths: [2, 2, 1, 3, 1],
        }
    }

    pub fn splat3d() -> Self {
        ParamLayout {
            kind: LayoutKind::Splat3d,
            lengths: [3, 3, 4, 32, 1],
        }
    }

    pub fn kind(&self) -> LayoutKind {
        self.kind
    }

    /// Stable identifier used by checkpoints.
    pub fn id(&self) -> u32 {
        match self.kind {
            LayoutKind::Splat2d => 0,
            LayoutKind::Splat3d => 1,
        }
    }

    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            0 => Ok(Self::splat2d()),
            1 => Ok(Self::splat3d()),
            _ => Err(Error::arg(alloc::format!("unknown layout id {id}"))),
        }
    }

    /// Row length `M`.
    pub fn total(&self) -> usize {
        self.lengths.iter().sum()
    }

    pub fn range(&self, block: Block) -> Range<usize> {
        let idx = block as usize;
        let start: usize = self.lengths[..idx].iter().sum();
        start..start + self.lengths[idx]
    }

    pub fn block_of(&self, column: usize) -> Block {
        let mut end = 0;
        for block in Block::ALL {
            end += self.lengths[block as usize];
            if column < end {
                return block;
            }
        }
        panic!("column {column} outside layout of width {}", self.total());
    }

    /// Columns covered by a personalization residual: appearance then opacity.
    pub fn residual_columns(&self) -> Range<usize> {
        self.range(Block::Appearance).start..self.range(Block::OpacityLogit).end
    }

    pub fn residual_width(&self) -> usize {
        self.residual_columns().len()
    }

    /// Activated values of one raw row, in the same slots.
    pub fn activate_row(&self, raw: &[f64]) -> Vec<f64> {
        let mut out = raw.to_vec();
        for c in self.range(Block::ScaleLog) {
            out[c] = math::exp(raw[c]);
        }
        if self.kind == LayoutKind::Splat3d {
            let q = self.range(Block::Rotation);
            let n = math::sqrt(raw[q.clone()].iter().map(|x| x * x).sum());
            for c in q {
                out[c] = if n > 0.0 { raw[c] / n } else { 0.0 };
            }
            if n == 0.0 {
                out[self.range(Block::Rotation).start] = 1.0;
            }
        } else {
            for c in self.range(Block::Appearance) {
                out[c] = math::sigmoid(raw[c]);
            }
        }
        for c in self.range(Block::OpacityLogit) {
            out[c] = math::sigmoid(raw[c]);
        }
        out
    }

    /// Chain rule of [`activate_row`](Self::activate_row).
    pub fn activate_row_backward(&self, raw: &[f64], grad_activated: &[f64]) -> Vec<f64> {
        let mut out = grad_activated.to_vec();
        for c in self.range(Block::ScaleLog) {
            out[c] = grad_activated[c] * math::exp(raw[c]);
        }
        if self.kind == LayoutKind::Splat3d {
            let q = self.range(Block::Rotation);
            let n = math::sqrt(raw[q.clone()].iter().map(|x| x * x).sum());
            if n > 0.0 {
                // d(q/|q|) = (I - q̂q̂ᵀ)/|q|
                let dot: f64 = q.clone().map(|c| raw[c] / n * grad_activated[c]).sum();
                for c in q {
                    out[c] = (grad_activated[c] - raw[c] / n * dot) / n;
                }
            } else {
                q.for_each(|c| out[c] = 0.0);
            }
        } else {
            for c in self.range(Block::Appearance) {
                let s = math::sigmoid(raw[c]);
                out[c] = grad_activated[c] * s * (1.0 - s);
            }
        }
        for c in self.range(Block::OpacityLogit) {
            let s = math::sigmoid(raw[c]);
            out[c] = grad_activated[c] * s * (1.0 - s);
        }
        out
    }
}

/// One activated 2D Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2D {
    pub position: [f64; 2],
    /// Standard deviations along the rotated axes, world units.
    pub scale: [f64; 2],
    /// Radians.
    pub angle: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

impl Gaussian2D {
    pub fn is_valid(&self) -> bool {
        let finite = self
            .position
            .iter()
            .chain(&self.scale)
            .chain(&self.color)
            .all(|x| x.is_finite())
            && self.angle.is_finite()
            && self.opacity.is_finite();
        finite
            && self.scale.iter().all(|&s| s > 0.0)
            && self.color.iter().all(|&c| (0.0..=1.0).contains(&c))
            && (0.0..=1.0).contains(&self.opacity)
    }
}

/// Activated Gaussians of one identity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianSet {
    pub gaussians: Vec<Gaussian2D>,
}

impl GaussianSet {
    pub fn new(gaussians: Vec<Gaussian2D>) -> Self {
        GaussianSet { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn is_valid(&self) -> bool {
        self.gaussians.iter().all(Gaussian2D::is_valid)
    }
}

/// Per-Gaussian gradient in activated space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GaussianGrad {
    pub position: [f64; 2],
    pub scale: [f64; 2],
    pub angle: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

impl GaussianGrad {
    pub fn add_assign(&mut self, o: &GaussianGrad) {
        for a in 0..2 {
            self.position[a] += o.position[a];
            self.scale[a] += o.scale[a];
        }
        self.angle += o.angle;
        for c in 0..3 {
            self.color[c] += o.color[c];
        }
        self.opacity += o.opacity;
    }

    fn to_row(self) -> [f64; 9] {
        let [px, py] = self.position;
        let [sx, sy] = self.scale;
        let [r, g, b] = self.color;
        [px, py, sx, sy, self.angle, r, g, b, self.opacity]
    }
}

fn check_2d(layout: &ParamLayout) -> Result<()> {
    if layout.kind() != LayoutKind::Splat2d {
        return Err(Error::arg("operation requires the 2D splat layout"));
    }
    Ok(())
}

/// Activates an `N_g × 9` raw slice into a [`GaussianSet`].
pub fn activate(layout: &ParamLayout, raw: &Mat) -> Result<GaussianSet> {
    check_2d(layout)?;
    if raw.cols() != layout.total() {
        return Err(Error::shape("activate", layout.total(), raw.cols()));
    }
    let gaussians = (0..raw.rows())
        .map(|g| {
            let a = layout.activate_row(raw.row(g));
            Gaussian2D {
                position: [a[0], a[1]],
                scale: [a[2], a[3]],
                angle: a[4],
                color: [a[5], a[6], a[7]],
                opacity: a[8],
            }
        })
        .collect();
    Ok(GaussianSet { gaussians })
}

const PROB_EPS: f64 = 1e-9;

/// Raw slice whose activation reproduces `set`. Colors and opacities are
/// clamped into `[1e-9, 1 - 1e-9]` so the logits stay finite.
pub fn inverse_activate(layout: &ParamLayout, set: &GaussianSet) -> Result<Mat> {
    check_2d(layout)?;
    let logit = |p: f64| math::logit(p.clamp(PROB_EPS, 1.0 - PROB_EPS));
    let mut raw = Mat::zeros(set.len(), layout.total());
    for (g, gs) in set.gaussians.iter().enumerate() {
        if !gs.scale.iter().all(|&s| s > 0.0) {
            return Err(Error::arg("inverse_activate: scales must be positive"));
        }
        raw.row_mut(g).copy_from_slice(&[
            gs.position[0],
            gs.position[1],
            math::ln(gs.scale[0]),
            math::ln(gs.scale[1]),
            gs.angle,
            logit(gs.color[0]),
            logit(gs.color[1]),
            logit(gs.color[2]),
            logit(gs.opacity),
        ]);
    }
    Ok(raw)
}

/// Gradient on the raw slice given gradients on the activated Gaussians.
pub fn activation_backward(layout: &ParamLayout, raw: &Mat, grads: &[GaussianGrad]) -> Result<Mat> {
    check_2d(layout)?;
    if raw.rows() != grads.len() || raw.cols() != layout.total() {
        return Err(Error::shape(
            "activation_backward",
            (grads.len(), layout.total()),
            raw.shape(),
        ));
    }
    let mut out = Mat::zeros(raw.rows(), raw.cols());
    for (g, grad) in grads.iter().enumerate() {
        let row = layout.activate_row_backward(raw.row(g), &grad.to_row());
        out.row_mut(g).copy_from_slice(&row);
    }
    Ok(out)
}

/// All identities' Gaussian parameters as one CP model, plus optional
/// per-identity appearance residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedAvatarStore {
    pub model: CPModel,
    pub layout: ParamLayout,
    /// One `N_g × residual_width` matrix per identity, added to the
    /// appearance and opacity columns before activation.
    pub personalization: Option<Vec<Mat>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitReport {
    /// Relative error of the CP fit to the seed slice.
    pub seed_rel_error: f64,
    /// Components whose weight is below `1e-10` of the strongest one;
    /// non-zero means the seed slice has lower rank than requested.
    pub negligible_components: usize,
}

impl FactorizedAvatarStore {
    pub fn new(model: CPModel, layout: ParamLayout) -> Result<Self> {
        if model.n_params() != layout.total() {
            return Err(Error::shape(
                "FactorizedAvatarStore::new",
                layout.total(),
                model.n_params(),
            ));
        }
        Ok(FactorizedAvatarStore {
            model,
            layout,
            personalization: None,
        })
    }

    pub fn n_identities(&self) -> usize {
        self.model.n_identities()
    }

    pub fn n_gaussians(&self) -> usize {
        self.model.n_gaussians()
    }

    /// Starts every identity with a zero residual. No-op if already enabled.
    pub fn enable_personalization(&mut self) {
        if self.personalization.is_none() {
            let width = self.layout.residual_width();
            self.personalization = Some(vec![
                Mat::zeros(self.n_gaussians(), width);
                self.n_identities()
            ]);
        }
    }

    /// Raw (pre-activation) slice of identity `i`, residual included.
    pub fn raw_slice(&self, i: usize) -> Result<Mat> {
        let mut raw = cp::reconstruct_slice(&self.model, i)?;
        if let Some(res) = &self.personalization {
            add_residual(&self.layout, &mut raw, &res[i]);
        }
        Ok(raw)
    }

    /// Identity `i`'s activated Gaussians.
    pub fn slice_identity(&self, i: usize) -> Result<GaussianSet> {
        activate(&self.layout, &self.raw_slice(i)?)
    }

    /// Appends an identity whose factor row is the column-wise mean of the
    /// existing rows. Existing slices are untouched.
    pub fn add_identity(&mut self) {
        let (ni, r) = self.model.u_identity.shape();
        let mut mean = vec![0.0; r];
        for i in 0..ni {
            for (m, x) in mean.iter_mut().zip(self.model.u_identity.row(i)) {
                *m += x;
            }
        }
        if ni > 0 {
            mean.iter_mut().for_each(|m| *m /= ni as f64);
        }
        let mut data = self.model.u_identity.data().to_vec();
        data.extend_from_slice(&mean);
        self.model.u_identity = Mat::from_vec(ni + 1, r, data).expect("row appended");
        if let Some(res) = &mut self.personalization {
            res.push(Mat::zeros(
                self.model.n_gaussians(),
                self.layout.residual_width(),
            ));
        }
    }
}

pub(crate) fn add_residual(layout: &ParamLayout, raw: &mut Mat, residual: &Mat) {
    let cols = layout.residual_columns();
    for g in 0..raw.rows() {
        for (c, r) in cols.clone().zip(residual.row(g)) {
            raw[(g, c)] += r;
        }
    }
}

/// Builds a store from one identity's Gaussians: the seed slice is fitted
/// with [`cp::cp_power`] and its identity row copied to all identities.
pub fn init_store(
    seed_set: &GaussianSet,
    n_identities: usize,
    rank: usize,
    seed: u64,
) -> Result<(FactorizedAvatarStore, InitReport)> {
    if n_identities == 0 {
        return Err(Error::arg("init_store needs at least one identity"));
    }
    if seed_set.is_empty() {
        return Err(Error::arg("init_store needs a non-empty seed set"));
    }
    let layout = ParamLayout::splat2d();
    let raw = inverse_activate(&layout, seed_set)?;
    let slice = Tensor3::from_vec([1, raw.rows(), raw.cols()], raw.into_vec())?;
    let single = cp::cp_power(&slice, &PowerOptions::new(rank, seed))?;
    let seed_rel_error = rel_error(&slice, &cp::reconstruct_full(&single))?;
    let weights: Vec<f64> = (0..rank)
        .map(|r| math::sqrt(single.u_gaussian.col(r).iter().map(|x| x * x).sum()))
        .collect();
    let strongest = weights.iter().copied().fold(0.0, f64::max);
    let negligible_components = weights.iter().filter(|&&w| w <= 1e-10 * strongest).count();
    let (mut u_params, mut u_gaussian) = (single.u_params, single.u_gaussian);
    let mut row = single.u_identity.row(0).to_vec();
    balance_components(
        &mut u_params,
        &mut row,
        &mut u_gaussian,
        1e-10 * strongest,
        seed,
    );
    let mut ident = Mat::zeros(n_identities, rank);
    for i in 0..n_identities {
        ident.row_mut(i).copy_from_slice(&row);
    }
    let model = CPModel::new(u_params, ident, u_gaussian)?;
    Ok((
        FactorizedAvatarStore::new(model, layout)?,
        InitReport {
            seed_rel_error,
            negligible_components,
        },
    ))
}

/// Relative size of the random columns given to negligible components.
const DEAD_COMPONENT_SCALE: f64 = 1e-3;

/// Rescales each component so the three factors have equal RMS entries,
/// leaving the product unchanged. Components with weight at most `floor`
/// get a zero identity entry and small random Gaussian and params columns:
/// the slice is unchanged and the identity rows can still move apart.
fn balance_components(
    u_params: &mut Mat,
    identity_row: &mut [f64],
    u_gaussian: &mut Mat,
    floor: f64,
    seed: u64,
) {
    let rms = |m: &Mat, r: usize| {
        math::sqrt(m.col(r).iter().map(|x| x * x).sum::<f64>() / m.rows() as f64)
    };
    let mut dead = Vec::new();
    let mut typical = 0.0;
    for (r, id) in identity_row.iter_mut().enumerate() {
        let (a, b, c) = (rms(u_params, r), rms(u_gaussian, r), id.abs());
        let weight = a * b * c * math::sqrt((u_params.rows() * u_gaussian.rows()) as f64);
        if !(weight > floor) {
            dead.push(r);
            continue;
        }
        let target = math::powf(a * b * c, 1.0 / 3.0);
        typical = f64::max(typical, target);
        for p in 0..u_params.rows() {
            u_params.row_mut(p)[r] *= target / a;
        }
        for g in 0..u_gaussian.rows() {
            u_gaussian.row_mut(g)[r] *= target / b;
        }
        *id *= target / c;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for r in dead {
        identity_row[r] = 0.0;
        for g in 0..u_gaussian.rows() {
            u_gaussian.row_mut(g)[r] =
                DEAD_COMPONENT_SCALE * typical * rng.sample::<f64, _>(StandardNormal);
        }
        for p in 0..u_params.rows() {
            u_params.row_mut(p)[r] =
                DEAD_COMPONENT_SCALE * typical * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Whole CP model; residuals frozen.
    Full,
    /// Shared factors plus identity row `i`.
    PerIdentity(usize),
    /// Identity row `i` only (and residual `i` when personalization is on).
    NovelIdentity(usize),
    /// Residual `i` only.
    Personalization(usize),
}

/// Which parameters an optimizer step may change.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMask {
    pub mode: MaskMode,
    pub params: Vec<bool>,
    pub identity: Vec<bool>,
    pub gaussian: Vec<bool>,
    /// One flag per identity residual; empty when personalization is off.
    pub residuals: Vec<bool>,
}

impl TrainMask {
    pub fn count_cp(&self) -> usize {
        [&self.params, &self.identity, &self.gaussian]
            .iter()
            .map(|m| m.iter().filter(|&&b| b).count())
            .sum()
    }

    /// Entry-wise mask in the store's flat parameter order: params factor,
    /// identity factor, Gaussian factor, then each identity's residual.
    pub fn flatten(&self, residual_len: usize) -> Vec<bool> {
        let mut out = Vec::with_capacity(
            self.params.len()
                + self.identity.len()
                + self.gaussian.len()
                + residual_len * self.residuals.len(),
        );
        out.extend_from_slice(&self.params);
        out.extend_from_slice(&self.identity);
        out.extend_from_slice(&self.gaussian);
        for &on in &self.residuals {
            out.extend(core::iter::repeat_n(on, residual_len));
        }
        out
    }
}

pub fn make_mask(store: &FactorizedAvatarStore, mode: MaskMode) -> Result<TrainMask> {
    let m = &store.model;
    let r = m.rank();
    let ni = m.n_identities();
    let has_res = store.personalization.is_some();
    let target = match mode {
        MaskMode::Full => None,
        MaskMode::PerIdentity(i) | MaskMode::NovelIdentity(i) | MaskMode::Personalization(i) => {
            Some(i)
        }
    };
    if let Some(i) = target {
        if i >= ni {
            return Err(Error::Index {
                what: "identity",
                index: i,
                len: ni,
            });
        }
    }
    let row_only = |i: usize| (0..ni * r).map(|e| e / r == i).collect::<Vec<_>>();
    let all = |n: usize, v: bool| vec![v; n];
    let res = |sel: Option<usize>| {
        if has_res {
            (0..ni).map(|j| Some(j) == sel).collect()
        } else {
            Vec::new()
        }
    };
    let mask = match mode {
        MaskMode::Full => TrainMask {
            mode,
            params: all(m.n_params() * r, true),
            identity: all(ni * r, true),
            gaussian: all(m.n_gaussians() * r, true),
            residuals: res(None),
        },
        MaskMode::PerIdentity(i) => TrainMask {
            mode,
            params: all(m.n_params() * r, true),
            identity: row_only(i),
            gaussian: all(m.n_gaussians() * r, true),
            residuals: res(None),
        },
        MaskMode::NovelIdentity(i) => TrainMask {
            mode,
            params: all(m.n_params() * r, false),
            identity: row_only(i),
            gaussian: all(m.n_gaussians() * r, false),
            residuals: res(Some(i)),
        },
        MaskMode::Personalization(i) => {
            if !has_res {
                return Err(Error::arg(
                    "personalization mask requires personalization to be enabled",
                ));
            }
            TrainMask {
                mode,
                params: all(m.n_params() * r, false),
                identity: all(ni * r, false),
                gaussian: all(m.n_gaussians() * r, false),
                residuals: res(Some(i)),
            }
        }
    };
    Ok(mask)
}

/// Gradients of a loss on identity `i`'s raw slice with respect to the CP
/// factors and, when enabled, residual `i`.
pub fn slice_backward(
    store: &FactorizedAvatarStore,
    i: usize,
    raw_grad: &Mat,
) -> Result<(FactorGrads, Option<Mat>)> {
    let fg = cp::backward_slice(&store.model, i, raw_grad)?;
    let res = store.personalization.as_ref().map(|_| {
        let cols = store.layout.residual_columns();
        Mat::from_fn(raw_grad.rows(), cols.len(), |g, c| {
            raw_grad[(g, cols.start + c)]
        })
    });
    Ok((fg, res))
}
