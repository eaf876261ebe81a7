//! 2D skeletal deformation: forward kinematics, an analytic skinning field,
//! linear blend skinning of Gaussian sets, and the as-isometric-as-possible
//! regularizers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianGrad, GaussianSet};
use crate::math;
use crate::render::{covariance_backward, covariance_unchecked, Sym2};

/// Softmax temperature of the skinning field, world units.
pub const SKINNING_TEMPERATURE: f64 = 0.1;
pub const KNN_K: usize = 5;
/// RMS canonical drift that triggers a k-NN rebuild.
pub const KNN_REBUILD_RMS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bone {
    /// `None` only for bone 0.
    pub parent: Option<usize>,
    /// Joint position in canonical space; the bone rotates about it.
    pub origin: [f64; 2],
    /// Rest direction, radians.
    pub direction: f64,
    pub length: f64,
}

impl Bone {
    pub fn end(&self) -> [f64; 2] {
        [
            self.origin[0] + self.length * math::cos(self.direction),
            self.origin[1] + self.length * math::sin(self.direction),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton2D {
    bones: Vec<Bone>,
    /// Bones ordered so every parent precedes its children.
    order: Vec<usize>,
}

impl Skeleton2D {
    pub fn new(bones: Vec<Bone>) -> Result<Self> {
        let n = bones.len();
        if n == 0 {
            return Err(Error::arg("skeleton needs at least one bone"));
        }
        for (b, bone) in bones.iter().enumerate() {
            if !(bone.length > 0.0 && bone.length.is_finite()) {
                return Err(Error::arg(alloc::format!(
                    "bone {b} has non-positive length"
                )));
            }
            if !(bone.origin.iter().all(|x| x.is_finite()) && bone.direction.is_finite()) {
                return Err(Error::NonFinite("bone geometry"));
            }
            match (b, bone.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::arg("bone 0 must be the root")),
                (_, None) => return Err(Error::arg(alloc::format!("bone {b} has no parent"))),
                (_, Some(p)) if p >= n || p == b => {
                    return Err(Error::arg(alloc::format!(
                        "bone {b} has invalid parent {p}"
                    )))
                }
                _ => {}
            }
        }
        // every chain must reach the root within n steps
        for b in 0..n {
            let mut cur = b;
            let mut steps = 0;
            while let Some(p) = bones[cur].parent {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(Error::arg("skeleton parents contain a cycle"));
                }
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut placed = vec![false; n];
        while order.len() < n {
            for b in 0..n {
                if !placed[b] && bones[b].parent.is_none_or(|p| placed[p]) {
                    placed[b] = true;
                    order.push(b);
                }
            }
        }
        Ok(Skeleton2D { bones, order })
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn len(&self) -> usize {
        self.bones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bones.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    /// Per-bone rotation relative to rest, radians.
    pub angles: Vec<f64>,
    pub root_translation: [f64; 2],
}

impl Pose {
    pub fn new(angles: Vec<f64>) -> Self {
        Pose {
            angles,
            root_translation: [0.0, 0.0],
        }
    }

    pub fn rest(n_bones: usize) -> Self {
        Pose::new(vec![0.0; n_bones])
    }
}

/// Rigid map `p ↦ R(angle) p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub angle: f64,
    pub cos: f64,
    pub sin: f64,
    pub translation: [f64; 2],
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        angle: 0.0,
        cos: 1.0,
        sin: 0.0,
        translation: [0.0, 0.0],
    };

    pub fn rotation_about(angle: f64, pivot: [f64; 2]) -> Self {
        if angle == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (math::sin(angle), math::cos(angle));
        RigidTransform {
            angle,
            cos: c,
            sin: s,
            translation: [
                pivot[0] - (c * pivot[0] - s * pivot[1]),
                pivot[1] - (s * pivot[0] + c * pivot[1]),
            ],
        }
    }

    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.cos * p[0] - self.sin * p[1] + self.translation[0],
            self.sin * p[0] + self.cos * p[1] + self.translation[1],
        ]
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        if *other == Self::IDENTITY {
            return *self;
        }
        if *self == Self::IDENTITY {
            return *other;
        }
        let cos = self.cos * other.cos - self.sin * other.sin;
        let sin = self.sin * other.cos + self.cos * other.sin;
        RigidTransform {
            angle: self.angle + other.angle,
            cos,
            sin,
            translation: self.apply(other.translation),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// Canonical-to-observed transform of every bone.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneTransforms(pub Vec<RigidTransform>);

pub fn forward_kinematics(sk: &Skeleton2D, pose: &Pose) -> Result<BoneTransforms> {
    if pose.angles.len() != sk.len() {
        return Err(Error::shape(
            "forward_kinematics",
            sk.len(),
            pose.angles.len(),
        ));
    }
    if !pose
        .angles
        .iter()
        .chain(&pose.root_translation)
        .all(|x| x.is_finite())
    {
        return Err(Error::NonFinite("pose"));
    }
    let mut out = vec![RigidTransform::IDENTITY; sk.len()];
    for &b in &sk.order {
        let bone = &sk.bones[b];
        let local = RigidTransform::rotation_about(pose.angles[b], bone.origin);
        let parent = match bone.parent {
            Some(p) => out[p],
            None => RigidTransform {
                translation: pose.root_translation,
                ..RigidTransform::IDENTITY
            },
        };
        out[b] = parent.compose(&local);
    }
    Ok(BoneTransforms(out))
}

/// Distance from `p` to a bone segment and its gradient w.r.t. `p`.
fn segment_distance(p: [f64; 2], bone: &Bone) -> (f64, [f64; 2]) {
    let a = bone.origin;
    let e = bone.end();
    let ab = [e[0] - a[0], e[1] - a[1]];
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1]))
        .clamp(0.0, 1.0);
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    let d = [p[0] - q[0], p[1] - q[1]];
    let dist = math::sqrt(d[0] * d[0] + d[1] * d[1]);
    if dist == 0.0 {
        (0.0, [0.0, 0.0])
    } else {
        (dist, [d[0] / dist, d[1] / dist])
    }
}

/// Softmax of negative bone distances; strictly positive, sums to one.
pub fn skinning_weights(p: [f64; 2], sk: &Skeleton2D, temperature: f64) -> Vec<f64> {
    skinning_weights_with_grad(p, sk, temperature).0
}

/// Weights and `∂z_b/∂p` where `z_b = −dist_b / τ` are the softmax logits.
fn skinning_weights_with_grad(
    p: [f64; 2],
    sk: &Skeleton2D,
    temperature: f64,
) -> (Vec<f64>, Vec<[f64; 2]>) {
    let mut z = Vec::with_capacity(sk.len());
    let mut dz = Vec::with_capacity(sk.len());
    for bone in &sk.bones {
        let (d, g) = segment_distance(p, bone);
        z.push(-d / temperature);
        dz.push([-g[0] / temperature, -g[1] / temperature]);
    }
    let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = z.iter().map(|&v| math::exp(v - zmax)).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    (w, dz)
}

/// Per-Gaussian blended transform pieces shared by forward and backward.
struct Blend {
    weights: Vec<f64>,
    dz: Vec<[f64; 2]>,
    /// Blended linear part `Σ w_b R_b`.
    lin: [[f64; 2]; 2],
}

fn blend(p: [f64; 2], bt: &BoneTransforms, sk: &Skeleton2D, temperature: f64) -> Blend {
    let (weights, dz) = skinning_weights_with_grad(p, sk, temperature);
    let mut lin = [[0.0; 2]; 2];
    for (w, t) in weights.iter().zip(&bt.0) {
        lin[0][0] += w * t.cos;
        lin[0][1] -= w * t.sin;
        lin[1][0] += w * t.sin;
        lin[1][1] += w * t.cos;
    }
    Blend { weights, dz, lin }
}

/// Linear blend skinning of canonical Gaussians. Positions move by the
/// weighted bone displacements; angles gain the rotation of the blended
/// linear part (`atan2` of its first column). Scale, color and opacity are
/// carried over.
pub fn lbs_apply(gs: &GaussianSet, bt: &BoneTransforms, sk: &Skeleton2D) -> Result<GaussianSet> {
    if bt.0.len() != sk.len() {
        return Err(Error::shape("lbs_apply", sk.len(), bt.0.len()));
    }
    let mut out = gs.clone();
    for g in out.gaussians.iter_mut() {
        let p = g.position;
        let bl = blend(p, bt, sk, SKINNING_TEMPERATURE);
        let mut disp = [0.0; 2];
        for (w, t) in bl.weights.iter().zip(&bt.0) {
            let q = t.apply(p);
            disp[0] += w * (q[0] - p[0]);
            disp[1] += w * (q[1] - p[1]);
        }
        g.position = [p[0] + disp[0], p[1] + disp[1]];
        g.angle += math::atan2(bl.lin[1][0], bl.lin[0][0]);
    }
    Ok(out)
}

/// Gradients w.r.t. the canonical Gaussians given gradients on the output
/// of [`lbs_apply`], including the skinning field's dependence on position.
pub fn lbs_backward(
    canonical: &GaussianSet,
    bt: &BoneTransforms,
    sk: &Skeleton2D,
    grad_observed: &[GaussianGrad],
) -> Result<Vec<GaussianGrad>> {
    if grad_observed.len() != canonical.len() || bt.0.len() != sk.len() {
        return Err(Error::shape(
            "lbs_backward",
            canonical.len(),
            grad_observed.len(),
        ));
    }
    let mut out = grad_observed.to_vec();
    for (g, (canon, up)) in out
        .iter_mut()
        .zip(canonical.gaussians.iter().zip(grad_observed))
    {
        let p = canon.position;
        let bl = blend(p, bt, sk, SKINNING_TEMPERATURE);
        let gm = up.position;
        let gphi = up.angle;
        // direct term: (I + Σ w_b (R_b − I))ᵀ gm
        let mut jac = [[1.0, 0.0], [0.0, 1.0]];
        for (w, t) in bl.weights.iter().zip(&bt.0) {
            jac[0][0] += w * (t.cos - 1.0);
            jac[0][1] += w * -t.sin;
            jac[1][0] += w * t.sin;
            jac[1][1] += w * (t.cos - 1.0);
        }
        let mut gp = [
            jac[0][0] * gm[0] + jac[1][0] * gm[1],
            jac[0][1] * gm[0] + jac[1][1] * gm[1],
        ];
        // weight term: Σ_b s_b ∇w_b = Σ_b w_b (s_b − s̄) ∇z_b
        let (t00, t10) = (bl.lin[0][0], bl.lin[1][0]);
        let denom = t00 * t00 + t10 * t10;
        let s: Vec<f64> =
            bt.0.iter()
                .map(|t| {
                    let q = t.apply(p);
                    let disp = gm[0] * (q[0] - p[0]) + gm[1] * (q[1] - p[1]);
                    disp + gphi * (t00 * t.sin - t10 * t.cos) / denom
                })
                .collect();
        let s_bar: f64 = bl.weights.iter().zip(&s).map(|(w, s)| w * s).sum();
        for ((w, s), dz) in bl.weights.iter().zip(&s).zip(&bl.dz) {
            let c = w * (s - s_bar);
            gp[0] += c * dz[0];
            gp[1] += c * dz[1];
        }
        g.position = gp;
    }
    Ok(out)
}

/// Directed k-nearest-neighbor edges; ties break toward the lower index.
pub fn knn_edges(positions: &[[f64; 2]], k: usize) -> Vec<(usize, usize)> {
    let n = positions.len();
    let mut edges = Vec::with_capacity(n * k.min(n.saturating_sub(1)));
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for a in 0..n {
        cand.clear();
        for b in 0..n {
            if b != a {
                let d = [
                    positions[a][0] - positions[b][0],
                    positions[a][1] - positions[b][1],
                ];
                cand.push((d[0] * d[0] + d[1] * d[1], b));
            }
        }
        cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        edges.extend(cand.iter().take(k).map(|&(_, b)| (a, b)));
    }
    edges
}

/// k-NN edge set that is rebuilt only after the canonical positions drift
/// by more than [`KNN_REBUILD_RMS`].
#[derive(Debug, Clone, Default)]
pub struct KnnCache {
    reference: Vec<[f64; 2]>,
    edges: Vec<(usize, usize)>,
    rebuilds: usize,
}

impl KnnCache {
    pub fn edges(&mut self, gs: &GaussianSet) -> &[(usize, usize)] {
        let positions: Vec<[f64; 2]> = gs.gaussians.iter().map(|g| g.position).collect();
        let stale = positions.len() != self.reference.len() || {
            let sq: f64 = positions
                .iter()
                .zip(&self.reference)
                .map(|(a, b)| (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]))
                .sum();
            math::sqrt(sq / positions.len().max(1) as f64) > KNN_REBUILD_RMS
        };
        if stale {
            self.edges = knn_edges(&positions, KNN_K);
            self.reference = positions;
            self.rebuilds += 1;
        }
        &self.edges
    }

    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsoLosses {
    pub isopos: f64,
    pub isocov: f64,
    /// Gradients of `isopos` and `isocov`, weighted and summed as requested.
    pub grad_canonical: Vec<GaussianGrad>,
    pub grad_observed: Vec<GaussianGrad>,
    /// Edges dropped because their canonical endpoints coincide.
    pub skipped_edges: usize,
}

const COINCIDENT: f64 = 1e-12;

fn frob_diff(a: Sym2, b: Sym2) -> (f64, Sym2) {
    let d = Sym2 {
        xx: a.xx - b.xx,
        xy: a.xy - b.xy,
        yy: a.yy - b.yy,
    };
    let f = math::sqrt(d.xx * d.xx + 2.0 * d.xy * d.xy + d.yy * d.yy);
    if f == 0.0 {
        return (
            0.0,
            Sym2 {
                xx: 0.0,
                xy: 0.0,
                yy: 0.0,
            },
        );
    }
    (
        f,
        Sym2 {
            xx: d.xx / f,
            xy: 2.0 * d.xy / f,
            yy: d.yy / f,
        },
    )
}

/// As-isometric-as-possible losses over k-NN edges:
/// `isopos = mean | ‖Δμ_c‖ − ‖Δμ_o‖ |` and
/// `isocov = mean | ‖ΔΣ_o‖_F − ‖ΔΣ_c‖_F |`.
/// Gradients are those of `w_pos · isopos + w_cov · isocov`.
pub fn iso_losses(
    canonical: &GaussianSet,
    observed: &GaussianSet,
    edges: &[(usize, usize)],
    w_pos: f64,
    w_cov: f64,
) -> Result<IsoLosses> {
    let n = canonical.len();
    if observed.len() != n {
        return Err(Error::shape("iso_losses", n, observed.len()));
    }
    let mut gc = vec![GaussianGrad::default(); n];
    let mut go = vec![GaussianGrad::default(); n];
    let used: Vec<(usize, usize)> = edges
        .iter()
        .copied()
        .filter(|&(a, b)| {
            let p = canonical.gaussians[a].position;
            let q = canonical.gaussians[b].position;
            math::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1])) > COINCIDENT
        })
        .collect();
    let skipped_edges = edges.len() - used.len();
    if used.is_empty() {
        return Ok(IsoLosses {
            isopos: 0.0,
            isocov: 0.0,
            grad_canonical: gc,
            grad_observed: go,
            skipped_edges,
        });
    }
    let inv_n = 1.0 / used.len() as f64;
    let cov_c: Vec<Sym2> = canonical
        .gaussians
        .iter()
        .map(|g| covariance_unchecked(g.scale, g.angle))
        .collect();
    let cov_o: Vec<Sym2> = observed
        .gaussians
        .iter()
        .map(|g| covariance_unchecked(g.scale, g.angle))
        .collect();
    let mut g_cov_c = vec![
        Sym2 {
            xx: 0.0,
            xy: 0.0,
            yy: 0.0
        };
        n
    ];
    let mut g_cov_o = vec![
        Sym2 {
            xx: 0.0,
            xy: 0.0,
            yy: 0.0
        };
        n
    ];
    let (mut isopos, mut isocov) = (0.0, 0.0);
    for &(a, b) in &used {
        let (ca, cb) = (
            canonical.gaussians[a].position,
            canonical.gaussians[b].position,
        );
        let (oa, ob) = (
            observed.gaussians[a].position,
            observed.gaussians[b].position,
        );
        let dc = [ca[0] - cb[0], ca[1] - cb[1]];
        let dobs = [oa[0] - ob[0], oa[1] - ob[1]];
        let lc = math::sqrt(dc[0] * dc[0] + dc[1] * dc[1]);
        let lo = math::sqrt(dobs[0] * dobs[0] + dobs[1] * dobs[1]);
        isopos += (lc - lo).abs();
        let sp = math::sign0(lc - lo) * w_pos * inv_n;
        for ax in 0..2 {
            let u = sp * dc[ax] / lc;
            gc[a].position[ax] += u;
            gc[b].position[ax] -= u;
            if lo > 0.0 {
                let v = sp * dobs[ax] / lo;
                go[a].position[ax] -= v;
                go[b].position[ax] += v;
            }
        }

        let (fo, dfo) = frob_diff(cov_o[a], cov_o[b]);
        let (fc, dfc) = frob_diff(cov_c[a], cov_c[b]);
        isocov += (fo - fc).abs();
        let sc = math::sign0(fo - fc) * w_cov * inv_n;
        for (target, sign, d) in [(&mut g_cov_o, 1.0, dfo), (&mut g_cov_c, -1.0, dfc)] {
            let k = sc * sign;
            target[a].xx += k * d.xx;
            target[a].xy += k * d.xy;
            target[a].yy += k * d.yy;
            target[b].xx -= k * d.xx;
            target[b].xy -= k * d.xy;
            target[b].yy -= k * d.yy;
        }
    }
    for i in 0..n {
        let (s, t) = covariance_backward(
            canonical.gaussians[i].scale,
            canonical.gaussians[i].angle,
            g_cov_c[i],
        );
        gc[i].scale[0] += s[0];
        gc[i].scale[1] += s[1];
        gc[i].angle += t;
        let (s, t) = covariance_backward(
            observed.gaussians[i].scale,
            observed.gaussians[i].angle,
            g_cov_o[i],
        );
        go[i].scale[0] += s[0];
        go[i].scale[1] += s[1];
        go[i].angle += t;
    }
    Ok(IsoLosses {
        isopos: isopos * inv_n,
        isocov: isocov * inv_n,
        grad_canonical: gc,
        grad_observed: go,
        skipped_edges,
    })
}
