//! End-to-end acceptance checks. Every criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cpsplat::checkpoint::Checkpoint;
use cpsplat::commands;
use cpsplat::config::RunConfig;
use cpsplat_core::cp::{
    backward_full, backward_slice, cp_als, cp_power, param_count, reconstruct_full,
    reconstruct_slice, AlsOptions, CPModel, PowerOptions,
};
use cpsplat_core::deform::{
    forward_kinematics, knn_edges, lbs_apply, lbs_backward, Bone, Pose, Skeleton2D,
};
use cpsplat_core::gaussian::{
    activate, activation_backward, init_store, inverse_activate, FactorizedAvatarStore, Gaussian2D,
    GaussianGrad, GaussianSet, MaskMode, ParamLayout,
};
use cpsplat_core::render::{render, render_backward, AlphaMask, Image, Viewport};
use cpsplat_core::tensor::{fold, khatri_rao, mttkrp, rel_error, unfold, Mat, Mode, Tensor3};
use cpsplat_core::train::{
    self, evaluate, fit_novel_identity, frame_gradient, generate_dataset, mse, personalize,
    psnr_from_mse, render_identity, DatasetSpec, DenseStore, Frame, IdentityData, LearningRates,
    LossWeights, ParamStore, Split, SyntheticDataset, TrainConfig,
};

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const HARNESS_SEED: u64 = 7;
const ALS_SLACK: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_mat(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| r.gen_range(-1.0..1.0))
}

fn central_diff(x: &mut [f64], idx: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[idx];
    x[idx] = orig + FD_STEP;
    let plus = f(x);
    x[idx] = orig - FD_STEP;
    let minus = f(x);
    x[idx] = orig;
    (plus - minus) / (2.0 * FD_STEP)
}

/// Largest entry-wise relative error, with differences below `1e-6` in
/// magnitude compared absolutely.
fn worst_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn fd_gradient(x0: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x0.to_vec();
    (0..x.len())
        .map(|i| central_diff(&mut x, i, &mut f))
        .collect()
}

fn pack(gs: &GaussianSet) -> Vec<f64> {
    gs.gaussians
        .iter()
        .flat_map(|g| {
            [
                g.position[0],
                g.position[1],
                g.scale[0],
                g.scale[1],
                g.angle,
                g.color[0],
                g.color[1],
                g.color[2],
                g.opacity,
            ]
        })
        .collect()
}

fn unpack(x: &[f64]) -> GaussianSet {
    GaussianSet::new(
        x.chunks(9)
            .map(|c| Gaussian2D {
                position: [c[0], c[1]],
                scale: [c[2], c[3]],
                angle: c[4],
                color: [c[5], c[6], c[7]],
                opacity: c[8],
            })
            .collect(),
    )
}

fn pack_grads(g: &[GaussianGrad]) -> Vec<f64> {
    g.iter()
        .flat_map(|g| {
            [
                g.position[0],
                g.position[1],
                g.scale[0],
                g.scale[1],
                g.angle,
                g.color[0],
                g.color[1],
                g.color[2],
                g.opacity,
            ]
        })
        .collect()
}

fn random_scene(r: &mut ChaCha8Rng, n: usize) -> GaussianSet {
    GaussianSet::new(
        (0..n)
            .map(|_| Gaussian2D {
                position: [r.gen_range(-0.8..0.8), r.gen_range(-0.8..0.8)],
                scale: [r.gen_range(0.08..0.3), r.gen_range(0.08..0.3)],
                angle: r.gen_range(-1.5..1.5),
                color: [
                    r.gen_range(0.05..0.95),
                    r.gen_range(0.05..0.95),
                    r.gen_range(0.05..0.95),
                ],
                opacity: r.gen_range(0.2..0.9),
            })
            .collect(),
    )
}

fn chain() -> Skeleton2D {
    Skeleton2D::new(vec![
        Bone {
            parent: None,
            origin: [0.0, -0.7],
            direction: 1.4,
            length: 0.7,
        },
        Bone {
            parent: Some(0),
            origin: [0.12, -0.01],
            direction: -0.2,
            length: 0.5,
        },
        Bone {
            parent: Some(1),
            origin: [0.61, -0.11],
            direction: -0.6,
            length: 0.4,
        },
    ])
    .unwrap()
}

fn vp16() -> Viewport {
    Viewport::centered(16, 16, [0.0, 0.0], 2.4).unwrap()
}

fn criterion_1() -> Outcome {
    let pc = param_count(43, 30, 50_000, 100);
    outcome(
        pc.factorized == 5_007_300 && pc.dense == 64_500_000 && pc.ratio > 10.0,
        format!(
            "param_count(43, 30, 50000, 100) = {} vs {} (ratio {:.2})",
            pc.factorized, pc.dense, pc.ratio
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut r = rng(2);
    let truth = CPModel::new(
        random_mat(&mut r, 15, 5),
        random_mat(&mut r, 20, 5),
        random_mat(&mut r, 30, 5),
    )
    .unwrap();
    let t = reconstruct_full(&truth);
    let start = Instant::now();
    let (m, rep) = cp_als(
        &t,
        &AlsOptions {
            rank: 5,
            max_sweeps: 200,
            tol: 0.0,
            seed: 3,
        },
    )
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let err = rel_error(&t, &reconstruct_full(&m)).unwrap();
    let worst_rise = rep
        .errors
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let reached = rep.errors.iter().position(|&e| e < 1e-8).map(|k| k + 1);
    outcome(
        err < 1e-8 && worst_rise <= ALS_SLACK && reached.is_some() && elapsed < 1.0,
        format!(
            "rank-5 20x30x15: rel_error {err:.2e}, below 1e-8 after {reached:?} sweeps, worst per-sweep rise {worst_rise:.1e} (slack {ALS_SLACK:.0e}), {elapsed:.3} s"
        ),
    )
}

fn abs_cosine(x: &[f64], y: &[f64]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    dot(x, y).abs() / (dot(x, x) * dot(y, y)).sqrt()
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let (a, b, c) = (
        random_mat(&mut r, 6, 1),
        random_mat(&mut r, 11, 1),
        random_mat(&mut r, 9, 1),
    );
    let t = reconstruct_full(&CPModel::new(c.clone(), a.clone(), b.clone()).unwrap());
    let m = cp_power(&t, &PowerOptions::new(1, 4)).unwrap();
    let cos = [
        abs_cosine(&m.u_identity.col(0), a.data()),
        abs_cosine(&m.u_gaussian.col(0), b.data()),
        abs_cosine(&m.u_params.col(0), c.data()),
    ];
    let err = rel_error(&t, &reconstruct_full(&m)).unwrap();
    outcome(
        cos.iter().all(|&x| x > 0.999) && err < 1e-8,
        format!(
            "rank-1 recovery: |cos| = {:.6}/{:.6}/{:.6}, rel_error {err:.2e}",
            cos[0], cos[1], cos[2]
        ),
    )
}

fn grad_render() -> f64 {
    let mut r = rng(41);
    let gs = random_scene(&mut r, 10);
    let vp = vp16();
    let wi = Image::from_vec(16, 16, (0..768).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    let wm =
        AlphaMask::from_vec(16, 16, (0..256).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    let analytic = pack_grads(&render_backward(&gs, &vp, &wi, &wm).unwrap());
    let numeric = fd_gradient(&pack(&gs), |x| {
        let out = render(&unpack(x), &vp).unwrap();
        out.image
            .data
            .iter()
            .zip(&wi.data)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + out
                .mask
                .data
                .iter()
                .zip(&wm.data)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    });
    worst_rel_err(&analytic, &numeric)
}

fn grad_lbs() -> f64 {
    let mut r = rng(42);
    let gs = random_scene(&mut r, 10);
    let sk = chain();
    let bt = forward_kinematics(&sk, &Pose::new(vec![0.3, -0.7, 0.9])).unwrap();
    let up: Vec<GaussianGrad> = (0..10)
        .map(|_| GaussianGrad {
            position: [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)],
            scale: [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)],
            angle: r.gen_range(-1.0..1.0),
            color: [
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
            ],
            opacity: r.gen_range(-1.0..1.0),
        })
        .collect();
    let upv = pack_grads(&up);
    let analytic = pack_grads(&lbs_backward(&gs, &bt, &sk, &up).unwrap());
    let numeric = fd_gradient(&pack(&gs), |x| {
        let o = lbs_apply(&unpack(x), &bt, &sk).unwrap();
        pack(&o).iter().zip(&upv).map(|(a, b)| a * b).sum()
    });
    worst_rel_err(&analytic, &numeric)
}

fn grad_activation() -> f64 {
    let mut r = rng(43);
    let layout = ParamLayout::splat2d();
    let raw = random_mat(&mut r, 10, 9);
    let up: Vec<f64> = (0..90).map(|_| r.gen_range(-1.0..1.0)).collect();
    let up_grads: Vec<GaussianGrad> = up
        .chunks(9)
        .map(|c| GaussianGrad {
            position: [c[0], c[1]],
            scale: [c[2], c[3]],
            angle: c[4],
            color: [c[5], c[6], c[7]],
            opacity: c[8],
        })
        .collect();
    let analytic = activation_backward(&layout, &raw, &up_grads).unwrap();
    let numeric = fd_gradient(raw.data(), |x| {
        let m = Mat::from_vec(10, 9, x.to_vec()).unwrap();
        pack(&activate(&layout, &m).unwrap())
            .iter()
            .zip(&up)
            .map(|(a, b)| a * b)
            .sum()
    });
    worst_rel_err(analytic.data(), &numeric)
}

fn flat_factors(m: &CPModel) -> Vec<f64> {
    [m.u_params.data(), m.u_identity.data(), m.u_gaussian.data()].concat()
}

fn model_from_flat(like: &CPModel, x: &[f64]) -> CPModel {
    let (np, ni, ng, r) = (
        like.n_params(),
        like.n_identities(),
        like.n_gaussians(),
        like.rank(),
    );
    CPModel::new(
        Mat::from_vec(np, r, x[..np * r].to_vec()).unwrap(),
        Mat::from_vec(ni, r, x[np * r..(np + ni) * r].to_vec()).unwrap(),
        Mat::from_vec(ng, r, x[(np + ni) * r..].to_vec()).unwrap(),
    )
    .unwrap()
}

fn grad_cp() -> (f64, f64) {
    let mut r = rng(44);
    let m = CPModel::new(
        random_mat(&mut r, 9, 3),
        random_mat(&mut r, 4, 3),
        random_mat(&mut r, 10, 3),
    )
    .unwrap();
    let up = Tensor3::from_fn([4, 10, 9], |_, _, _| r.gen_range(-1.0..1.0));
    let g = backward_full(&m, &up).unwrap();
    let analytic = [g.g_params.data(), g.g_identity.data(), g.g_gaussian.data()].concat();
    let numeric = fd_gradient(&flat_factors(&m), |x| {
        let t = reconstruct_full(&model_from_flat(&m, x));
        t.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
    });
    let full = worst_rel_err(&analytic, &numeric);
    let up_slice = up.slice_first(2);
    let g = backward_slice(&m, 2, &up_slice).unwrap();
    let analytic = [g.g_params.data(), g.g_identity.data(), g.g_gaussian.data()].concat();
    let numeric = fd_gradient(&flat_factors(&m), |x| {
        let s = reconstruct_slice(&model_from_flat(&m, x), 2).unwrap();
        s.data()
            .iter()
            .zip(up_slice.data())
            .map(|(a, b)| a * b)
            .sum()
    });
    (full, worst_rel_err(&analytic, &numeric))
}

fn tiny_frame(sk: &Skeleton2D, truth: &GaussianSet, pose: Pose, vp: &Viewport) -> Frame {
    let obs = lbs_apply(truth, &forward_kinematics(sk, &pose).unwrap(), sk).unwrap();
    let out = render(&obs, vp).unwrap();
    Frame {
        pose,
        image: out.image,
        mask: out.mask,
    }
}

fn grad_composite() -> f64 {
    let mut r = rng(45);
    let layout = ParamLayout::splat2d();
    let sk = chain();
    let vp = vp16();
    let truth = random_scene(&mut r, 8);
    let frame = tiny_frame(&sk, &truth, Pose::new(vec![0.2, -0.3, 0.25]), &vp);
    let raw_truth = inverse_activate(&layout, &truth).unwrap();
    let noise = random_mat(&mut r, 8, 9);
    let u_gaussian = Mat::from_fn(8, 9, |g, c| raw_truth[(g, c)] + 0.05 * noise[(g, c)]);
    let store = FactorizedAvatarStore::new(
        CPModel::new(Mat::identity(9), Mat::filled(1, 9, 1.0), u_gaussian).unwrap(),
        layout.clone(),
    )
    .unwrap();
    let positions: Vec<[f64; 2]> = truth.gaussians.iter().map(|g| g.position).collect();
    let edges = knn_edges(&positions, 5);
    let weights = LossWeights::default();
    let (_, raw_grad, _) = frame_gradient(
        &layout,
        &store.raw_slice(0).unwrap(),
        &sk,
        &frame,
        &vp,
        &weights,
        &edges,
    )
    .unwrap();
    let analytic = store.flat_grad(0, &raw_grad).unwrap();
    let numeric = fd_gradient(&flat_factors(&store.model), |x| {
        let s =
            FactorizedAvatarStore::new(model_from_flat(&store.model, x), layout.clone()).unwrap();
        frame_gradient(
            &layout,
            &s.raw_slice(0).unwrap(),
            &sk,
            &frame,
            &vp,
            &weights,
            &edges,
        )
        .unwrap()
        .0
        .total
    });
    worst_rel_err(&analytic, &numeric)
}

fn criterion_4() -> Outcome {
    let (full, slice) = grad_cp();
    let errs = [
        ("render", grad_render()),
        ("lbs", grad_lbs()),
        ("activation", grad_activation()),
        ("cp_full", full),
        ("cp_slice", slice),
        ("total_loss", grad_composite()),
    ];
    let detail: Vec<String> = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(
        errs.iter().all(|(_, e)| *e < FD_TOL),
        format!("worst FD rel err: {}", detail.join(", ")),
    )
}

fn criterion_5() -> Outcome {
    let mut r = rng(5);
    let t = Tensor3::from_fn([4, 6, 5], |_, _, _| r.gen_range(-1.0..1.0));
    let modes = [Mode::First, Mode::Second, Mode::Third];
    let folds = modes.iter().all(|&m| {
        let back = fold(&unfold(&t, m), m, t.dims()).unwrap();
        back.data()
            .iter()
            .zip(t.data())
            .all(|(a, b)| a.to_bits() == b.to_bits())
    });
    // naive MTTKRP: the other two modes in increasing order, lower one slowest
    let factors = [
        random_mat(&mut r, 4, 3),
        random_mat(&mut r, 6, 3),
        random_mat(&mut r, 5, 3),
    ];
    let mut mttkrp_err: f64 = 0.0;
    for (n, &mode) in modes.iter().enumerate() {
        let (lo, hi) = match n {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let got = mttkrp(&t, &factors[lo], &factors[hi], mode).unwrap();
        let d = t.dims();
        for a in 0..d[n] {
            for c in 0..3 {
                let mut s = 0.0;
                for p in 0..d[lo] {
                    for q in 0..d[hi] {
                        let mut idx = [0; 3];
                        idx[n] = a;
                        idx[lo] = p;
                        idx[hi] = q;
                        s += t.get(idx[0], idx[1], idx[2])
                            * factors[lo][(p, c)]
                            * factors[hi][(q, c)];
                    }
                }
                mttkrp_err = mttkrp_err.max((got[(a, c)] - s).abs());
            }
        }
    }
    let (a, b) = (random_mat(&mut r, 3, 4), random_mat(&mut r, 5, 4));
    let kr = khatri_rao(&a, &b).unwrap();
    let kr_exact = (0..3).all(|i| {
        (0..5).all(|j| {
            (0..4).all(|c| kr[(i * 5 + j, c)].to_bits() == (a[(i, c)] * b[(j, c)]).to_bits())
        })
    });
    let mut store = FactorizedAvatarStore::new(
        CPModel::new(
            random_mat(&mut r, 9, 4),
            random_mat(&mut r, 3, 4),
            random_mat(&mut r, 7, 4),
        )
        .unwrap(),
        ParamLayout::splat2d(),
    )
    .unwrap();
    store.enable_personalization();
    store.personalization.as_mut().unwrap()[2] = random_mat(&mut r, 7, 4);
    let bytes = Checkpoint::from_store(&store).encode();
    let reloaded = Checkpoint::decode(&bytes).unwrap();
    let ck_exact = reloaded.encode() == bytes && reloaded.into_store().unwrap() == store;
    outcome(
        folds && mttkrp_err <= 1e-12 && kr_exact && ck_exact,
        format!(
            "fold/unfold bit-exact {folds}, mttkrp max err {mttkrp_err:.1e}, khatri_rao exact {kr_exact}, checkpoint byte-identical {ck_exact}"
        ),
    )
}

fn criterion_6() -> Outcome {
    let data = generate_dataset(
        &DatasetSpec {
            n_identities: 3,
            n_gaussians: 10,
            width: 16,
            height: 16,
            train_poses: 3,
            ..DatasetSpec::default()
        },
        6,
    )
    .unwrap();
    let mut store = init_store(&data.seed_set, 3, 6, 6).unwrap().0;
    let mut r = rng(6);
    for v in store.model.u_identity.data_mut() {
        *v += 0.1 * r.gen_range(-1.0..1.0);
    }
    let layout = store.layout.clone();
    let rank = store.model.rank();
    let n_params_entries = store.model.n_params() * rank;
    let mut zero_rows = true;
    for i in 0..3 {
        let id = &data.identities[i];
        let (_, raw_grad, _) = frame_gradient(
            &layout,
            &store.raw_slice(i).unwrap(),
            &id.skeleton,
            &id.train[0],
            &data.viewport,
            &LossWeights::default(),
            &[],
        )
        .unwrap();
        let flat = store.flat_grad(i, &raw_grad).unwrap();
        let ident = &flat[n_params_entries..n_params_entries + 3 * rank];
        for j in 0..3 {
            let row = &ident[j * rank..(j + 1) * rank];
            if j != i && row.iter().any(|&g| g != 0.0) {
                zero_rows = false;
            }
        }
    }
    let before = store.model.u_identity.clone();
    let cfg = TrainConfig {
        iterations: 30,
        lr: LearningRates::desk_scale(),
        mode: MaskMode::PerIdentity(1),
        ..TrainConfig::default()
    };
    train::train(&mut store, &data, &cfg).unwrap();
    let after = &store.model.u_identity;
    let frozen = [0, 2].iter().all(|&j| {
        before
            .row(j)
            .iter()
            .zip(after.row(j))
            .all(|(a, b)| a.to_bits() == b.to_bits())
    });
    let moved = before.row(1) != after.row(1);
    outcome(
        zero_rows && frozen && moved,
        format!("off-identity gradient rows exactly zero {zero_rows}, per_identity(1) leaves rows 0,2 bit-unchanged {frozen}"),
    )
}

fn harness_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        lr: LearningRates::desk_scale(),
        ..TrainConfig::default()
    }
}

/// The four-identity harness scene plus a fifth identity held back for
/// novel-identity fitting.
fn harness_scene() -> (SyntheticDataset, IdentityData) {
    let spec = DatasetSpec {
        n_identities: 5,
        ..DatasetSpec::default()
    };
    let mut data = generate_dataset(&spec, HARNESS_SEED).unwrap();
    let novel = data.identities.pop().unwrap();
    data.spec.n_identities = 4;
    (data, novel)
}

fn criterion_7(data: &SyntheticDataset) -> (Outcome, FactorizedAvatarStore) {
    let cfg = harness_config(2000);
    let mut dense = DenseStore::from_seed(&data.seed_set, 4).unwrap();
    train::train(&mut dense, data, &cfg).unwrap();
    let dense_psnr = evaluate(&dense, data, Split::Train).unwrap().psnr;
    let mut store = init_store(&data.seed_set, 4, 16, 1).unwrap().0;
    train::train(&mut store, data, &cfg).unwrap();
    let cp_psnr = evaluate(&store, data, Split::Train).unwrap().psnr;
    let out = outcome(
        dense_psnr > 40.0 && cp_psnr >= dense_psnr - 3.0,
        format!("train-pose PSNR: dense {dense_psnr:.2} dB (> 40), factorized R=16 {cp_psnr:.2} dB (gap {:.2} dB, <= 3)", dense_psnr - cp_psnr),
    );
    (out, store)
}

fn criterion_8() -> Outcome {
    let spec = DatasetSpec {
        n_identities: 8,
        ..DatasetSpec::default()
    };
    let data = generate_dataset(&spec, HARNESS_SEED).unwrap();
    let cfg = harness_config(2000);
    let scores: Vec<f64> = [2, 8, 32]
        .iter()
        .map(|&rank| {
            let mut store = init_store(&data.seed_set, 8, rank, 1).unwrap().0;
            train::train(&mut store, &data, &cfg).unwrap();
            evaluate(&store, &data, Split::HeldOut).unwrap().psnr
        })
        .collect();
    let ok = scores.windows(2).all(|w| w[1] >= w[0] - 0.5);
    outcome(
        ok,
        format!(
            "held-out PSNR R=2 {:.2}, R=8 {:.2}, R=32 {:.2} dB",
            scores[0], scores[1], scores[2]
        ),
    )
}

fn renders(store: &FactorizedAvatarStore, data: &SyntheticDataset, ids: &[usize]) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    for &i in ids {
        let id = &data.identities[i];
        for f in &id.train {
            let r = render_identity(store, i, &id.skeleton, &f.pose, &data.viewport).unwrap();
            out.push(
                r.image
                    .data
                    .iter()
                    .chain(&r.mask.data)
                    .map(|x| x.to_bits())
                    .collect(),
            );
        }
    }
    out
}

fn frames_psnr(store: &FactorizedAvatarStore, i: usize, id: &IdentityData, vp: &Viewport) -> f64 {
    let total: f64 = id
        .train
        .iter()
        .map(|f| {
            mse(
                &render_identity(store, i, &id.skeleton, &f.pose, vp)
                    .unwrap()
                    .image,
                &f.image,
            )
        })
        .sum();
    psnr_from_mse(total / id.train.len() as f64)
}

fn criterion_9(
    store: &mut FactorizedAvatarStore,
    data: &SyntheticDataset,
    novel: &IdentityData,
) -> Outcome {
    let existing = renders(store, data, &[0, 1, 2, 3]);
    let mut init = store.clone();
    init.add_identity();
    let before = frames_psnr(&init, 4, novel, &data.viewport);
    let (i, _) = fit_novel_identity(
        store,
        &novel.skeleton,
        &novel.train,
        &data.viewport,
        &harness_config(500),
    )
    .unwrap();
    let after = frames_psnr(store, i, novel, &data.viewport);
    let unchanged = renders(store, data, &[0, 1, 2, 3]) == existing;
    outcome(
        after >= before + 5.0 && unchanged,
        format!("novel identity PSNR {before:.2} -> {after:.2} dB (+{:.2}), existing renders bit-identical {unchanged}", after - before),
    )
}

fn mean_l1(store: &FactorizedAvatarStore, i: usize, id: &IdentityData, vp: &Viewport) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for f in &id.train {
        let r = render_identity(store, i, &id.skeleton, &f.pose, vp).unwrap();
        sum += r
            .image
            .data
            .iter()
            .zip(&f.image.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
        n += r.image.data.len();
    }
    sum / n as f64
}

fn criterion_10(store: &mut FactorizedAvatarStore, data: &SyntheticDataset) -> Outcome {
    let target = 1;
    let others = [0, 2, 3];
    let id = &data.identities[target];
    let before_others = renders(store, data, &others);
    let before = mean_l1(store, target, id, &data.viewport);
    personalize(
        store,
        target,
        &id.skeleton,
        &id.train,
        &data.viewport,
        &harness_config(500),
    )
    .unwrap();
    let after = mean_l1(store, target, id, &data.viewport);
    let unchanged = renders(store, data, &others) == before_others;
    let drop = (before - after) / before;
    outcome(
        drop >= 0.05 && unchanged,
        format!("identity {target} L1 {before:.3e} -> {after:.3e} ({:.1}% lower), other renders bit-identical {unchanged}", 100.0 * drop),
    )
}

fn run_pipeline(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut cfg = RunConfig {
        dataset: DatasetSpec {
            n_identities: 2,
            n_gaussians: 16,
            width: 16,
            height: 16,
            train_poses: 4,
            held_out_poses: 2,
            ..DatasetSpec::default()
        },
        ..RunConfig::default()
    };
    cfg.train.iterations = 150;
    cfg.rank = 6;
    let data = root.join("data");
    commands::gen(&cfg, &data).unwrap();
    let ck = root.join("model.migs");
    let csv = root.join("metrics.csv");
    commands::train(&cfg, &data, &ck, &csv).unwrap();
    let eval_train = commands::eval(&ck, &data, Split::Train).unwrap();
    let eval_held = commands::eval(&ck, &data, Split::HeldOut).unwrap();
    let poses = data.join("id1/held_out/poses.txt");
    let img = root.join("frame.ppm");
    commands::render(&ck, &data, 1, &poses, &img).unwrap();
    let anim = root.join("anim");
    commands::animate(&ck, &data, 0, &poses, &anim).unwrap();
    let mut out = vec![
        ("checkpoint".to_string(), fs::read(&ck).unwrap()),
        ("metrics.csv".to_string(), fs::read(&csv).unwrap()),
        (
            "eval".to_string(),
            [eval_train, eval_held].concat().into_bytes(),
        ),
        ("frame.ppm".to_string(), fs::read(&img).unwrap()),
    ];
    let mut frames: Vec<_> = fs::read_dir(&anim)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    frames.sort();
    for f in frames {
        out.push((
            f.file_name().unwrap().to_string_lossy().into_owned(),
            fs::read(&f).unwrap(),
        ));
    }
    out
}

fn criterion_11() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_pipeline(a.path());
    let rb = run_pipeline(b.path());
    let same = ra == rb;
    outcome(
        same,
        format!(
            "two gen+train+eval+render runs: {} artifacts byte-identical {same}",
            ra.len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let (data, novel) = harness_scene();
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "parameter count", criterion_1()),
        (2, "CP-ALS recovery", criterion_2()),
        (3, "power-method rank-1 recovery", criterion_3()),
        (4, "gradient suite", criterion_4()),
        (5, "structural exactness", criterion_5()),
        (6, "identity locality", criterion_6()),
    ];
    let (c7, mut store) = criterion_7(&data);
    results.push((7, "factorization quality", c7));
    results.push((8, "rank ablation", criterion_8()));
    results.push((9, "novel identity", criterion_9(&mut store, &data, &novel)));
    results.push((10, "personalization", criterion_10(&mut store, &data)));
    results.push((11, "determinism", criterion_11()));
    // straight to the stderr handle so the report survives output capture
    let mut report = std::io::stderr().lock();
    for (n, name, o) in &results {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        writeln!(report, "criterion {n:>2} {verdict} {name}: {}", o.detail).unwrap();
    }
    drop(report);
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
