//! Joint multi-identity training, novel-identity fitting, personalization
//! and evaluation.

mod dataset;
mod loss;
mod metrics;
mod optim;
mod store;

pub use dataset::{generate_dataset, DatasetSpec, Frame, IdentityData, Split, SyntheticDataset};
pub use loss::{total_loss, DeformPair, LossGrads, LossTerms, LossWeights};
pub use metrics::{mse, psnr, psnr_from_mse, FrameScore, Metrics, MSE_FLOOR};
pub use optim::{AdamState, LearningRates, LrGroup, BETA1, BETA2, EPSILON};
pub use store::{DenseStore, ParamStore};

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::deform::{forward_kinematics, lbs_apply, lbs_backward, KnnCache, Pose, Skeleton2D};
use crate::error::{Error, Result};
use crate::gaussian::{
    activate, activation_backward, FactorizedAvatarStore, MaskMode, ParamLayout,
};
use crate::render::{render, render_backward, Rendered, Viewport};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: LearningRates,
    /// Length of the decay schedule; `None` uses `iterations`.
    pub decay_steps: Option<u64>,
    pub weights: LossWeights,
    pub mode: MaskMode,
    /// Iterations at the start that evaluate the loss without updating.
    pub warmup: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            lr: LearningRates::default(),
            decay_steps: None,
            weights: LossWeights::default(),
            mode: MaskMode::Full,
            warmup: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.lr.validate()?;
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    pub identity: usize,
    pub frame: usize,
    pub loss: LossTerms,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<IterRecord>,
    /// Gradient entries skipped for being non-finite.
    pub skipped_grads: u64,
    pub knn_rebuilds: usize,
}

/// Frames of one subject, trained as store identity `identity`.
#[derive(Debug, Clone, Copy)]
pub struct Sequence<'a> {
    pub identity: usize,
    pub skeleton: &'a Skeleton2D,
    pub frames: &'a [Frame],
}

/// Loss of one frame and its gradient with respect to the raw slice, over
/// the chain activation → skinning → rendering. Isometry terms use `edges`.
pub fn frame_gradient(
    layout: &ParamLayout,
    raw: &Mat,
    skeleton: &Skeleton2D,
    frame: &Frame,
    vp: &Viewport,
    weights: &LossWeights,
    edges: &[(usize, usize)],
) -> Result<(LossTerms, Mat, Rendered)> {
    let canonical = activate(layout, raw)?;
    let bt = forward_kinematics(skeleton, &frame.pose)?;
    let observed = lbs_apply(&canonical, &bt, skeleton)?;
    let rendered = render(&observed, vp)?;
    let pair = DeformPair {
        canonical: &canonical,
        observed: &observed,
        edges,
    };
    let (terms, grads) = total_loss(
        (&rendered.image, &rendered.mask),
        (&frame.image, &frame.mask),
        Some(pair),
        weights,
    )?;
    let mut g_obs = render_backward(&observed, vp, &grads.image, &grads.mask)?;
    for (g, iso) in g_obs.iter_mut().zip(&grads.observed) {
        g.add_assign(iso);
    }
    let mut g_canon = lbs_backward(&canonical, &bt, skeleton, &g_obs)?;
    for (g, iso) in g_canon.iter_mut().zip(&grads.canonical) {
        g.add_assign(iso);
    }
    let raw_grad = activation_backward(layout, raw, &g_canon)?;
    Ok((terms, raw_grad, rendered))
}

/// Renders identity `i` of `store` in `pose`.
pub fn render_identity<S: ParamStore + ?Sized>(
    store: &S,
    i: usize,
    skeleton: &Skeleton2D,
    pose: &Pose,
    vp: &Viewport,
) -> Result<Rendered> {
    let canonical = activate(store.layout(), &store.raw_slice(i)?)?;
    let posed = lbs_apply(&canonical, &forward_kinematics(skeleton, pose)?, skeleton)?;
    render(&posed, vp)
}

/// Round-robin optimization over `sequences`, one frame per sequence per
/// cycle, frames visited in a seeded order that is reshuffled each pass.
pub fn train_sequences<S: ParamStore + ?Sized>(
    store: &mut S,
    sequences: &[Sequence<'_>],
    vp: &Viewport,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    let n_ids = store.n_identities();
    for s in sequences {
        if s.identity >= n_ids {
            return Err(Error::Index {
                what: "identity",
                index: s.identity,
                len: n_ids,
            });
        }
    }
    let active: Vec<&Sequence<'_>> = sequences.iter().filter(|s| !s.frames.is_empty()).collect();
    let mut history = TrainHistory::default();
    if active.is_empty() || config.iterations == 0 {
        return Ok(history);
    }
    let mask = store.mask(config.mode)?;
    let groups = store.lr_groups();
    let mut adam = AdamState::new(store.param_len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut orders: Vec<Vec<usize>> = active
        .iter()
        .map(|s| dataset::shuffled(s.frames.len(), &mut rng))
        .collect();
    let mut cursors = alloc::vec![0usize; active.len()];
    let mut knn: Vec<KnnCache> = (0..active.len()).map(|_| KnnCache::default()).collect();
    let layout = store.layout().clone();
    let max_steps = config.decay_steps.unwrap_or(config.iterations as u64);
    history.records.reserve(config.iterations);
    for it in 0..config.iterations {
        let s = it % active.len();
        let seq = active[s];
        if cursors[s] == orders[s].len() {
            orders[s] = dataset::shuffled(seq.frames.len(), &mut rng);
            cursors[s] = 0;
        }
        let f = orders[s][cursors[s]];
        cursors[s] += 1;
        let frame = &seq.frames[f];
        let raw = store.raw_slice(seq.identity)?;
        let use_iso = config.weights.isopos != 0.0 || config.weights.isocov != 0.0;
        let edges: Vec<(usize, usize)> = if use_iso {
            knn[s].edges(&activate(&layout, &raw)?).to_vec()
        } else {
            Vec::new()
        };
        let (loss, raw_grad, rendered) = frame_gradient(
            &layout,
            &raw,
            seq.skeleton,
            frame,
            vp,
            &config.weights,
            &edges,
        )?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                identity: seq.identity,
            });
        }
        history.records.push(IterRecord {
            iteration: it,
            identity: seq.identity,
            frame: f,
            loss,
            psnr: psnr(&rendered.image, &frame.image),
        });
        if it < config.warmup {
            continue;
        }
        let grad = store.flat_grad(seq.identity, &raw_grad)?;
        let rates = config.lr.at(adam.step_count(), max_steps);
        adam.step(store.segments_mut(), &grad, &mask, &groups, &rates)?;
    }
    history.skipped_grads = adam.skipped();
    history.knn_rebuilds = knn.iter().map(|k| k.rebuilds()).sum();
    Ok(history)
}

fn mode_identities(mode: MaskMode, n: usize) -> Vec<usize> {
    match mode {
        MaskMode::Full => (0..n).collect(),
        MaskMode::PerIdentity(i) | MaskMode::NovelIdentity(i) | MaskMode::Personalization(i) => {
            alloc::vec![i]
        }
    }
}

/// Trains on the dataset's training frames. `Full` visits every identity;
/// the single-identity modes visit only their identity.
pub fn train<S: ParamStore + ?Sized>(
    store: &mut S,
    data: &SyntheticDataset,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    if store.n_identities() != data.identities.len() {
        return Err(Error::shape(
            "train",
            data.identities.len(),
            store.n_identities(),
        ));
    }
    let ids = mode_identities(config.mode, data.identities.len());
    let mut seqs = Vec::with_capacity(ids.len());
    for i in ids {
        let id = data.identities.get(i).ok_or(Error::Index {
            what: "identity",
            index: i,
            len: data.identities.len(),
        })?;
        seqs.push(Sequence {
            identity: i,
            skeleton: &id.skeleton,
            frames: &id.train,
        });
    }
    train_sequences(store, &seqs, &data.viewport, config)
}

/// Appends an identity initialized to the mean identity row and fits only
/// that row (and its residual, when personalization is on) to `frames`.
/// Returns the new identity's index.
pub fn fit_novel_identity(
    store: &mut FactorizedAvatarStore,
    skeleton: &Skeleton2D,
    frames: &[Frame],
    vp: &Viewport,
    config: &TrainConfig,
) -> Result<(usize, TrainHistory)> {
    config.validate()?;
    store.add_identity();
    let i = store.n_identities() - 1;
    let cfg = TrainConfig {
        mode: MaskMode::NovelIdentity(i),
        ..*config
    };
    let seq = Sequence {
        identity: i,
        skeleton,
        frames,
    };
    let history = train_sequences(store, &[seq], vp, &cfg)?;
    Ok((i, history))
}

/// Enables per-identity residuals and fits only identity `i`'s residual.
pub fn personalize(
    store: &mut FactorizedAvatarStore,
    i: usize,
    skeleton: &Skeleton2D,
    frames: &[Frame],
    vp: &Viewport,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    if i >= store.n_identities() {
        return Err(Error::Index {
            what: "identity",
            index: i,
            len: store.n_identities(),
        });
    }
    store.enable_personalization();
    let cfg = TrainConfig {
        mode: MaskMode::Personalization(i),
        ..*config
    };
    train_sequences(
        store,
        &[Sequence {
            identity: i,
            skeleton,
            frames,
        }],
        vp,
        &cfg,
    )
}

/// Renders every frame of `split` for each identity of the dataset.
pub fn evaluate<S: ParamStore + ?Sized>(
    store: &S,
    data: &SyntheticDataset,
    split: Split,
) -> Result<Metrics> {
    let mut scores = Vec::new();
    for (i, id) in data.identities.iter().enumerate() {
        for (f, frame) in id.frames(split).iter().enumerate() {
            let r = render_identity(store, i, &id.skeleton, &frame.pose, &data.viewport)?;
            let m = mse(&r.image, &frame.image);
            scores.push(FrameScore {
                identity: i,
                frame: f,
                mse: m,
                psnr: psnr_from_mse(m),
            });
        }
    }
    Ok(Metrics::from_frames(scores))
}
