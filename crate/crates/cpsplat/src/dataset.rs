//! On-disk synthetic datasets.
//!
//! ```text
//! manifest.txt          header, spec, seed and viewport
//! seed_set.txt          initial Gaussians, one per line
//! truth.ten             raw ground-truth tensor (N_i × N_g × M)
//! id<i>/truth.txt       ground-truth Gaussians
//! id<i>/skeleton.txt    one bone per line: parent ox oy direction length
//! id<i>/<split>/poses.txt            one angle list per frame
//! id<i>/<split>/frame_<k>.ppm, mask_<k>.ppm
//! ```
//!
//! Gaussian lines hold `px py sx sy angle r g b opacity`. Splits are `train`
//! and `held_out`. Images reload quantized to 8 bits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cpsplat_core::deform::{Bone, Pose, Skeleton2D};
use cpsplat_core::gaussian::{inverse_activate, Gaussian2D, GaussianSet, ParamLayout};
use cpsplat_core::render::Viewport;
use cpsplat_core::tensor::Tensor3;
use cpsplat_core::train::{DatasetSpec, Frame, IdentityData, Split, SyntheticDataset};

use crate::{ppm, tensor_file, Error, Result};

const HEADER: &str = "cpsplat-dataset 1";

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn numbers(line: &str, what: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::format(what, format!("bad number {t:?}")))
        })
        .collect()
}

pub fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::HeldOut => "held_out",
    }
}

pub fn gaussians_to_text(set: &GaussianSet) -> String {
    let mut s = String::new();
    for g in &set.gaussians {
        let _ = writeln!(
            s,
            "{:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            g.position[0],
            g.position[1],
            g.scale[0],
            g.scale[1],
            g.angle,
            g.color[0],
            g.color[1],
            g.color[2],
            g.opacity
        );
    }
    s
}

pub fn gaussians_from_text(text: &str) -> Result<GaussianSet> {
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v = numbers(line, "Gaussian list")?;
        if v.len() != 9 {
            return Err(Error::format(
                "Gaussian list",
                format!("expected 9 values, found {}", v.len()),
            ));
        }
        out.push(Gaussian2D {
            position: [v[0], v[1]],
            scale: [v[2], v[3]],
            angle: v[4],
            color: [v[5], v[6], v[7]],
            opacity: v[8],
        });
    }
    let set = GaussianSet::new(out);
    if !set.is_valid() {
        return Err(Error::format("Gaussian list", "parameters out of range"));
    }
    Ok(set)
}

pub fn skeleton_to_text(sk: &Skeleton2D) -> String {
    let mut s = String::new();
    for b in sk.bones() {
        let parent = b.parent.map_or("-".to_string(), |p| p.to_string());
        let _ = writeln!(
            s,
            "{parent} {:?} {:?} {:?} {:?}",
            b.origin[0], b.origin[1], b.direction, b.length
        );
    }
    s
}

pub fn skeleton_from_text(text: &str) -> Result<Skeleton2D> {
    let mut bones = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (parent, rest) = line
            .trim()
            .split_once(char::is_whitespace)
            .unwrap_or((line.trim(), ""));
        let parent = match parent {
            "-" => None,
            p => Some(
                p.parse()
                    .map_err(|_| Error::format("skeleton", format!("bad parent {p:?}")))?,
            ),
        };
        let v = numbers(rest, "skeleton")?;
        if v.len() != 4 {
            return Err(Error::format(
                "skeleton",
                "expected parent ox oy direction length",
            ));
        }
        bones.push(Bone {
            parent,
            origin: [v[0], v[1]],
            direction: v[2],
            length: v[3],
        });
    }
    Ok(Skeleton2D::new(bones)?)
}

pub fn poses_to_text(poses: &[&Pose]) -> String {
    let mut s = String::new();
    for p in poses {
        let line: Vec<String> = p.angles.iter().map(|a| format!("{a:?}")).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

/// One pose per non-empty line; every pose must have `n_bones` angles.
pub fn poses_from_text(text: &str, n_bones: usize) -> Result<Vec<Pose>> {
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v = numbers(line, "pose file")?;
        if v.len() != n_bones || v.iter().any(|a| !a.is_finite()) {
            return Err(Error::format(
                "pose file",
                format!("expected {n_bones} finite angles, found {}", v.len()),
            ));
        }
        out.push(Pose::new(v));
    }
    Ok(out)
}

pub fn load_poses(path: &Path, n_bones: usize) -> Result<Vec<Pose>> {
    poses_from_text(&read_text(path)?, n_bones)
}

fn identity_dir(root: &Path, i: usize) -> PathBuf {
    root.join(format!("id{i}"))
}

/// Raw ground-truth tensor stacked over identities.
pub fn truth_tensor(data: &SyntheticDataset) -> Result<Tensor3> {
    let layout = ParamLayout::splat2d();
    let mut values = Vec::new();
    for id in &data.identities {
        values.extend_from_slice(inverse_activate(&layout, &id.truth)?.data());
    }
    Ok(Tensor3::from_vec(
        [data.identities.len(), data.spec.n_gaussians, layout.total()],
        values,
    )?)
}

fn manifest(data: &SyntheticDataset) -> String {
    let s = &data.spec;
    let vp = &data.viewport;
    format!(
        "{HEADER}\nseed {}\nidentities {}\ngaussians {}\nbones {}\nsize {} {}\nposes {} {}\nangles {:?} {:?} {:?}\nviewport {:?} {:?} {:?}\n",
        data.seed,
        s.n_identities,
        s.n_gaussians,
        s.n_bones,
        s.width,
        s.height,
        s.train_poses,
        s.held_out_poses,
        s.train_max_angle,
        s.held_out_min_angle,
        s.held_out_max_angle,
        vp.scale,
        vp.origin[0],
        vp.origin[1],
    )
}

pub fn save(data: &SyntheticDataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write(&root.join("manifest.txt"), manifest(data))?;
    write(
        &root.join("seed_set.txt"),
        gaussians_to_text(&data.seed_set),
    )?;
    tensor_file::save(&truth_tensor(data)?, &root.join("truth.ten"))?;
    for (i, id) in data.identities.iter().enumerate() {
        let dir = identity_dir(root, i);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write(&dir.join("truth.txt"), gaussians_to_text(&id.truth))?;
        write(&dir.join("skeleton.txt"), skeleton_to_text(&id.skeleton))?;
        for split in [Split::Train, Split::HeldOut] {
            let sdir = dir.join(split_name(split));
            fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
            let frames = id.frames(split);
            let poses: Vec<&Pose> = frames.iter().map(|f| &f.pose).collect();
            write(&sdir.join("poses.txt"), poses_to_text(&poses))?;
            for (k, f) in frames.iter().enumerate() {
                write(
                    &sdir.join(format!("frame_{k:04}.ppm")),
                    ppm::encode_image(&f.image),
                )?;
                write(
                    &sdir.join(format!("mask_{k:04}.ppm")),
                    ppm::encode_mask(&f.mask),
                )?;
            }
        }
    }
    Ok(())
}

struct Manifest {
    seed: u64,
    spec: DatasetSpec,
    viewport: Viewport,
}

fn parse_manifest(text: &str) -> Result<Manifest> {
    let bad = |msg: String| Error::format("manifest", msg);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HEADER) {
        return Err(bad(format!("expected header {HEADER:?}")));
    }
    let mut fields = std::collections::HashMap::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .trim()
            .split_once(' ')
            .ok_or_else(|| bad(format!("bad line {line:?}")))?;
        fields.insert(k.to_string(), numbers(v, "manifest")?);
    }
    let get = |k: &str, n: usize| -> Result<Vec<f64>> {
        let v = fields.get(k).ok_or_else(|| bad(format!("missing {k}")))?;
        if v.len() != n {
            return Err(bad(format!("{k} needs {n} values")));
        }
        Ok(v.clone())
    };
    let int = |x: f64| -> Result<usize> {
        if x >= 0.0 && x.fract() == 0.0 && x < 1e12 {
            Ok(x as usize)
        } else {
            Err(bad(format!("{x} is not a count")))
        }
    };
    let size = get("size", 2)?;
    let poses = get("poses", 2)?;
    let angles = get("angles", 3)?;
    let vp = get("viewport", 3)?;
    let spec = DatasetSpec {
        n_identities: int(get("identities", 1)?[0])?,
        n_gaussians: int(get("gaussians", 1)?[0])?,
        n_bones: int(get("bones", 1)?[0])?,
        width: int(size[0])?,
        height: int(size[1])?,
        train_poses: int(poses[0])?,
        held_out_poses: int(poses[1])?,
        train_max_angle: angles[0],
        held_out_min_angle: angles[1],
        held_out_max_angle: angles[2],
    };
    spec.validate()?;
    let seed_field = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("seed "))
        .ok_or_else(|| bad("missing seed".into()))?;
    let seed = seed_field
        .trim()
        .parse()
        .map_err(|_| bad("bad seed".into()))?;
    let viewport = Viewport::new(spec.width, spec.height, vp[0], [vp[1], vp[2]])?;
    Ok(Manifest {
        seed,
        spec,
        viewport,
    })
}

fn load_frames(dir: &Path, count: usize, n_bones: usize, vp: &Viewport) -> Result<Vec<Frame>> {
    let poses = load_poses(&dir.join("poses.txt"), n_bones)?;
    if poses.len() != count {
        return Err(Error::format(
            "pose file",
            format!("{}: expected {count} poses", dir.display()),
        ));
    }
    let mut frames = Vec::with_capacity(count);
    for (k, pose) in poses.into_iter().enumerate() {
        let image = ppm::decode_image(&read(&dir.join(format!("frame_{k:04}.ppm")))?)?;
        let mask = ppm::decode_mask(&read(&dir.join(format!("mask_{k:04}.ppm")))?)?;
        if (image.width, image.height) != (vp.width, vp.height)
            || (mask.width, mask.height) != (vp.width, vp.height)
        {
            return Err(Error::format(
                "frame",
                format!("{}: frame {k} has the wrong size", dir.display()),
            ));
        }
        frames.push(Frame { pose, image, mask });
    }
    Ok(frames)
}

/// Reads the dataset written by [`save`].
pub fn load(root: &Path) -> Result<SyntheticDataset> {
    let m = parse_manifest(&read_text(&root.join("manifest.txt"))?)?;
    let spec = m.spec;
    let seed_set = gaussians_from_text(&read_text(&root.join("seed_set.txt"))?)?;
    if seed_set.len() != spec.n_gaussians {
        return Err(Error::format(
            "seed set",
            "Gaussian count differs from manifest",
        ));
    }
    let mut identities = Vec::with_capacity(spec.n_identities);
    for i in 0..spec.n_identities {
        let dir = identity_dir(root, i);
        let truth = gaussians_from_text(&read_text(&dir.join("truth.txt"))?)?;
        let skeleton = skeleton_from_text(&read_text(&dir.join("skeleton.txt"))?)?;
        if truth.len() != spec.n_gaussians || skeleton.len() != spec.n_bones {
            return Err(Error::format(
                "identity",
                format!("id{i} disagrees with the manifest"),
            ));
        }
        let train = load_frames(
            &dir.join("train"),
            spec.train_poses,
            spec.n_bones,
            &m.viewport,
        )?;
        let held_out = load_frames(
            &dir.join("held_out"),
            spec.held_out_poses,
            spec.n_bones,
            &m.viewport,
        )?;
        identities.push(IdentityData {
            truth,
            skeleton,
            train,
            held_out,
        });
    }
    Ok(SyntheticDataset {
        spec,
        seed: m.seed,
        viewport: m.viewport,
        seed_set,
        identities,
    })
}

/// Skeleton, viewport and bone count without loading any frames.
pub fn load_rig(root: &Path, identity: usize) -> Result<(Skeleton2D, Viewport)> {
    let m = parse_manifest(&read_text(&root.join("manifest.txt"))?)?;
    if identity >= m.spec.n_identities {
        return Err(Error::format(
            "identity",
            format!("dataset has {} identities", m.spec.n_identities),
        ));
    }
    let sk = skeleton_from_text(&read_text(
        &identity_dir(root, identity).join("skeleton.txt"),
    )?)?;
    Ok((sk, m.viewport))
}
