//! Seeded synthetic multi-identity scenes rendered by this crate's renderer.

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::deform::{forward_kinematics, lbs_apply, Bone, Pose, Skeleton2D};
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian2D, GaussianSet};
use crate::math;
use crate::render::{render, AlphaMask, Image, Viewport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub n_identities: usize,
    pub n_gaussians: usize,
    pub n_bones: usize,
    pub width: usize,
    pub height: usize,
    pub train_poses: usize,
    pub held_out_poses: usize,
    /// Training pose angles are drawn from `[-train_max_angle, train_max_angle]`.
    pub train_max_angle: f64,
    /// Held-out angles have magnitude in `[held_out_min_angle, held_out_max_angle]`.
    pub held_out_min_angle: f64,
    pub held_out_max_angle: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_identities: 4,
            n_gaussians: 64,
            n_bones: 3,
            width: 32,
            height: 32,
            train_poses: 8,
            held_out_poses: 4,
            train_max_angle: 0.35,
            held_out_min_angle: 0.5,
            held_out_max_angle: 0.8,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities == 0 || self.n_gaussians == 0 || self.n_bones == 0 {
            return Err(Error::arg(
                "identities, gaussians and bones must be positive",
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::arg("image size must be positive"));
        }
        let a = [
            self.train_max_angle,
            self.held_out_min_angle,
            self.held_out_max_angle,
        ];
        if !a.iter().all(|x| x.is_finite() && *x >= 0.0) {
            return Err(Error::arg(
                "pose angle ranges must be finite and non-negative",
            ));
        }
        if self.held_out_min_angle <= self.train_max_angle
            || self.held_out_max_angle < self.held_out_min_angle
        {
            return Err(Error::arg(
                "held-out angle range must lie strictly outside the training range",
            ));
        }
        Ok(())
    }

    /// Whether `angle` can occur in a training pose.
    pub fn in_train_range(&self, angle: f64) -> bool {
        angle.abs() <= self.train_max_angle
    }

    /// Whether `angle` can occur in a held-out pose.
    pub fn in_held_out_range(&self, angle: f64) -> bool {
        let a = angle.abs();
        a >= self.held_out_min_angle && a <= self.held_out_max_angle
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    HeldOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pose: Pose,
    pub image: Image,
    pub mask: AlphaMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityData {
    pub truth: GaussianSet,
    pub skeleton: Skeleton2D,
    pub train: Vec<Frame>,
    pub held_out: Vec<Frame>,
}

impl IdentityData {
    pub fn frames(&self, split: Split) -> &[Frame] {
        match split {
            Split::Train => &self.train,
            Split::HeldOut => &self.held_out,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: DatasetSpec,
    pub seed: u64,
    pub viewport: Viewport,
    /// Initial Gaussians for a new store: points near the first identity's
    /// body with default scale, color and opacity.
    pub seed_set: GaussianSet,
    pub identities: Vec<IdentityData>,
}

const ROOT: [f64; 2] = [0.0, -0.8];
const TORSO: f64 = 0.8;
const SEED_SCALE: f64 = 0.1;
const SEED_OPACITY: f64 = 0.1;

/// Rest directions and unit-proportion lengths: a vertical torso with a
/// limb chain hanging off its top.
fn template_bones(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|b| {
            if b == 0 {
                (FRAC_PI_2, TORSO)
            } else {
                (
                    -0.3 - 0.2 * (b - 1) as f64,
                    0.6 * math::powf(0.85, (b - 1) as f64),
                )
            }
        })
        .collect()
}

fn skeleton(n_bones: usize, proportion: f64) -> Result<Skeleton2D> {
    let mut bones = Vec::with_capacity(n_bones);
    let mut origin = ROOT;
    for (b, (direction, len)) in template_bones(n_bones).into_iter().enumerate() {
        let bone = Bone {
            parent: b.checked_sub(1),
            origin,
            direction,
            length: len * proportion,
        };
        origin = bone.end();
        bones.push(bone);
    }
    Skeleton2D::new(bones)
}

struct Template {
    bone: usize,
    along: f64,
    across: f64,
    scale_log: [f64; 2],
    angle: f64,
    color_logit: [f64; 3],
    opacity_logit: f64,
}

struct IdentityCoeffs {
    proportion: f64,
    width: f64,
    scale_shift: f64,
    tint: f64,
    limb_tint: f64,
}

fn truth_set(
    templates: &[Template],
    sk: &Skeleton2D,
    c: &IdentityCoeffs,
    tints: &[[f64; 3]; 2],
) -> GaussianSet {
    let bones = sk.bones();
    GaussianSet::new(
        templates
            .iter()
            .map(|t| {
                let b = &bones[t.bone];
                let (s, co) = (math::sin(b.direction), math::cos(b.direction));
                let off = t.along * b.length;
                let side = c.width * t.across;
                let position = [
                    b.origin[0] + off * co - side * s,
                    b.origin[1] + off * s + side * co,
                ];
                let limb = if t.bone > 0 { 1.0 } else { 0.0 };
                let mut color = [0.0; 3];
                for (k, out) in color.iter_mut().enumerate() {
                    *out = math::sigmoid(
                        t.color_logit[k] + c.tint * tints[0][k] + c.limb_tint * limb * tints[1][k],
                    );
                }
                Gaussian2D {
                    position,
                    scale: [
                        math::exp(t.scale_log[0] + c.scale_shift),
                        math::exp(t.scale_log[1] + c.scale_shift),
                    ],
                    angle: t.angle,
                    color,
                    opacity: math::sigmoid(t.opacity_logit),
                }
            })
            .collect(),
    )
}

fn sample_pose(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Pose {
    Pose::new(
        (0..n)
            .map(|_| {
                let mag = rng.gen_range(lo..=hi);
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect(),
    )
}

fn render_frame(truth: &GaussianSet, sk: &Skeleton2D, pose: Pose, vp: &Viewport) -> Result<Frame> {
    let posed = lbs_apply(truth, &forward_kinematics(sk, &pose)?, sk)?;
    let r = render(&posed, vp)?;
    Ok(Frame {
        pose,
        image: r.image,
        mask: r.mask,
    })
}

/// Identities share a Gaussian template and differ through a handful of
/// per-identity coefficients (body proportions, width, blob size, two color
/// tints), so their stacked raw parameters have low CP rank.
pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = 3.2;
    let viewport = Viewport::centered(spec.width, spec.height, [0.35, 0.0], extent)?;
    let templates: Vec<Template> = (0..spec.n_gaussians)
        .map(|g| {
            let mut normal = || rng.sample::<f64, _>(StandardNormal);
            let color_logit = [0.8 * normal(), 0.8 * normal(), 0.8 * normal()];
            Template {
                bone: g % spec.n_bones,
                along: rng.gen_range(0.05..0.95),
                across: rng.gen_range(-0.12..0.12),
                scale_log: [
                    math::ln(rng.gen_range(0.07..0.15)),
                    math::ln(rng.gen_range(0.07..0.15)),
                ],
                angle: rng.gen_range(-1.5..1.5),
                color_logit,
                opacity_logit: rng.gen_range(0.5..2.5),
            }
        })
        .collect();
    let tints = [
        [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ],
        [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ],
    ];
    let mut identities = Vec::with_capacity(spec.n_identities);
    let mut seed_set = GaussianSet::default();
    for i in 0..spec.n_identities {
        let coeffs = IdentityCoeffs {
            proportion: rng.gen_range(0.85..1.15),
            width: rng.gen_range(0.7..1.3),
            scale_shift: rng.gen_range(-0.25..0.25),
            tint: rng.gen_range(-1.0..1.0),
            limb_tint: rng.gen_range(-1.0..1.0),
        };
        let sk = skeleton(spec.n_bones, coeffs.proportion)?;
        let truth = truth_set(&templates, &sk, &coeffs, &tints);
        if i == 0 {
            seed_set = GaussianSet::new(
                truth
                    .gaussians
                    .iter()
                    .map(|g| Gaussian2D {
                        position: [
                            g.position[0] + 0.02 * rng.sample::<f64, _>(StandardNormal),
                            g.position[1] + 0.02 * rng.sample::<f64, _>(StandardNormal),
                        ],
                        scale: [SEED_SCALE; 2],
                        angle: 0.0,
                        color: [0.5; 3],
                        opacity: SEED_OPACITY,
                    })
                    .collect(),
            );
        }
        let mut train = Vec::with_capacity(spec.train_poses);
        for _ in 0..spec.train_poses {
            let pose = sample_pose(&mut rng, spec.n_bones, 0.0, spec.train_max_angle);
            train.push(render_frame(&truth, &sk, pose, &viewport)?);
        }
        let mut held_out = Vec::with_capacity(spec.held_out_poses);
        for _ in 0..spec.held_out_poses {
            let pose = sample_pose(
                &mut rng,
                spec.n_bones,
                spec.held_out_min_angle,
                spec.held_out_max_angle,
            );
            held_out.push(render_frame(&truth, &sk, pose, &viewport)?);
        }
        identities.push(IdentityData {
            truth,
            skeleton: sk,
            train,
            held_out,
        });
    }
    Ok(SyntheticDataset {
        spec: *spec,
        seed,
        viewport,
        seed_set,
        identities,
    })
}

/// Deterministic permutation of `0..n` used for frame ordering.
pub(crate) fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}
