//! Command implementations. Each returns the text it would print.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cpsplat_core::cp::{cp_als, cp_power, param_count, AlsOptions, PowerOptions};
use cpsplat_core::gaussian::{init_store, LayoutKind};
use cpsplat_core::tensor::{rel_error, Tensor3};
use cpsplat_core::train::{self, generate_dataset, render_identity, Split, TrainHistory};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::{dataset, ppm, tensor_file, Error, Result};

/// `1234567` → `"1,234,567"`.
pub fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (k, c) in digits.chars().enumerate() {
        if k > 0 && (digits.len() - k).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn gen(config: &RunConfig, out_dir: &Path) -> Result<String> {
    let data = generate_dataset(&config.dataset, config.seed)?;
    dataset::save(&data, out_dir)?;
    let s = &config.dataset;
    Ok(format!(
        "wrote {} identities x ({} train + {} held-out) frames to {}\n",
        s.n_identities,
        s.train_poses,
        s.held_out_poses,
        out_dir.display()
    ))
}

pub fn metrics_csv(history: &TrainHistory) -> String {
    let mut s = String::from("iter,identity,frame,l1,mask,isopos,isocov,total,psnr\n");
    for r in &history.records {
        let l = &r.loss;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration, r.identity, r.frame, l.l1, l.mask, l.isopos, l.isocov, l.total, r.psnr
        );
    }
    s
}

pub fn train(
    config: &RunConfig,
    dataset_dir: &Path,
    checkpoint: &Path,
    metrics: &Path,
) -> Result<String> {
    let data = dataset::load(dataset_dir)?;
    let (mut store, report) = init_store(
        &data.seed_set,
        data.identities.len(),
        config.rank,
        config.seed,
    )?;
    let history = train::train(&mut store, &data, &config.train)?;
    Checkpoint::from_store(&store).save(checkpoint)?;
    fs::write(metrics, metrics_csv(&history)).map_err(|e| Error::io(metrics, e))?;
    let m = train::evaluate(&store, &data, Split::Train)?;
    let mut out = String::new();
    let _ = writeln!(out, "seed fit rel error {:.3e}", report.seed_rel_error);
    let _ = writeln!(
        out,
        "{} iterations, {} skipped gradient entries",
        history.records.len(),
        history.skipped_grads
    );
    let _ = writeln!(out, "train PSNR {:.2} dB", m.psnr);
    let _ = writeln!(
        out,
        "wrote {} and {}",
        checkpoint.display(),
        metrics.display()
    );
    Ok(out)
}

pub fn parse_split(name: &str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "held_out" => Ok(Split::HeldOut),
        _ => Err(Error::format(
            "split",
            format!("expected train or held_out, got {name:?}"),
        )),
    }
}

pub fn eval(checkpoint: &Path, dataset_dir: &Path, split: Split) -> Result<String> {
    let store = Checkpoint::load(checkpoint)?.into_store()?;
    let data = dataset::load(dataset_dir)?;
    if store.n_identities() < data.identities.len() {
        return Err(Error::format(
            "checkpoint",
            "fewer identities than the dataset",
        ));
    }
    let m = train::evaluate(&store, &data, split)?;
    let mut out = format!("split {}\nidentity  psnr_db\n", dataset::split_name(split));
    for i in 0..data.identities.len() {
        let _ = writeln!(out, "{i:>8}  {:.2}", m.identity_psnr(i));
    }
    let _ = writeln!(out, "{:>8}  {:.2}", "all", m.psnr);
    let _ = writeln!(out, "mean per-frame {:.2}", m.mean_frame_psnr);
    Ok(out)
}

pub fn render(
    checkpoint: &Path,
    dataset_dir: &Path,
    identity: usize,
    pose_file: &Path,
    out: &Path,
) -> Result<String> {
    let frames = animate_frames(checkpoint, dataset_dir, identity, pose_file)?;
    let first = frames
        .into_iter()
        .next()
        .ok_or_else(|| Error::format("pose file", "no poses"))?;
    fs::write(out, first).map_err(|e| Error::io(out, e))?;
    Ok(format!("wrote {}\n", out.display()))
}

fn animate_frames(
    checkpoint: &Path,
    dataset_dir: &Path,
    identity: usize,
    pose_file: &Path,
) -> Result<Vec<Vec<u8>>> {
    let store = Checkpoint::load(checkpoint)?.into_store()?;
    if identity >= store.n_identities() {
        return Err(Error::format(
            "identity",
            format!("checkpoint has {} identities", store.n_identities()),
        ));
    }
    let (sk, vp) = dataset::load_rig(dataset_dir, identity)?;
    let poses = dataset::load_poses(pose_file, sk.len())?;
    poses
        .iter()
        .map(|p| {
            Ok(ppm::encode_image(
                &render_identity(&store, identity, &sk, p, &vp)?.image,
            ))
        })
        .collect()
}

pub fn animate(
    checkpoint: &Path,
    dataset_dir: &Path,
    identity: usize,
    pose_file: &Path,
    out_dir: &Path,
) -> Result<String> {
    let frames = animate_frames(checkpoint, dataset_dir, identity, pose_file)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (k, bytes) in frames.iter().enumerate() {
        let path = out_dir.join(format!("frame_{k:04}.ppm"));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(format!(
        "wrote {} frames to {}\n",
        frames.len(),
        out_dir.display()
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Als,
    Power,
}

pub fn decompose(
    tensor: &Path,
    rank: usize,
    method: Method,
    seed: u64,
    out: Option<&Path>,
) -> Result<String> {
    let t: Tensor3 = tensor_file::load(tensor)?;
    let mut text = String::new();
    let model = match method {
        Method::Als => {
            let (model, report) = cp_als(
                &t,
                &AlsOptions {
                    rank,
                    max_sweeps: 500,
                    tol: 1e-12,
                    seed,
                },
            )?;
            let _ = writeln!(text, "sweeps {}", report.errors.len());
            model
        }
        Method::Power => cp_power(&t, &PowerOptions::new(rank, seed))?,
    };
    let err = rel_error(&t, &cpsplat_core::cp::reconstruct_full(&model))?;
    let _ = writeln!(text, "rel_error {err:.6e}");
    if let Some(path) = out {
        let layout = cpsplat_core::gaussian::ParamLayout::splat2d();
        let layout = (layout.total() == model.n_params()).then_some(layout);
        Checkpoint {
            model,
            layout,
            personalization: None,
        }
        .save(path)?;
        let _ = writeln!(text, "wrote {}", path.display());
    }
    Ok(text)
}

pub fn info(checkpoint: &Path) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let m = &ck.model;
    let pc = param_count(
        m.n_params() as u64,
        m.n_identities() as u64,
        m.n_gaussians() as u64,
        m.rank() as u64,
    );
    let layout = match ck.layout.as_ref().map(|l| l.kind()) {
        Some(LayoutKind::Splat2d) => "splat2d",
        Some(LayoutKind::Splat3d) => "splat3d",
        None => "raw",
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "dims M={} N_i={} N_g={}",
        m.n_params(),
        m.n_identities(),
        m.n_gaussians()
    );
    let _ = writeln!(out, "rank {}", m.rank());
    let _ = writeln!(out, "layout {layout}");
    let _ = writeln!(
        out,
        "personalization {}",
        if ck.personalization.is_some() {
            "on"
        } else {
            "off"
        }
    );
    let _ = writeln!(
        out,
        "parameters {} vs {} dense ({:.2}x fewer)",
        group_thousands(pc.factorized),
        group_thousands(pc.dense),
        pc.ratio
    );
    Ok(out)
}
