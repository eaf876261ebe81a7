//! Run configuration in TOML.
//!
//! ```text
//! seed = 7
//! [dataset]
//! identities = 4
//! [model]
//! rank = 16
//! [train]
//! mode = "per_identity:2"
//! ```
//!
//! Sections: top level (`seed`), `dataset`, `model`, `train`, `lr`, `loss`.
//! Every key is optional and falls back to [`RunConfig::default`]. Unknown
//! sections, unknown keys and repeated keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use cpsplat_core::gaussian::MaskMode;
use cpsplat_core::train::{DatasetSpec, LearningRates, TrainConfig};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub rank: usize,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            rank: 16,
            dataset: DatasetSpec::default(),
            train: TrainConfig {
                lr: LearningRates::desk_scale(),
                ..TrainConfig::default()
            },
        }
    }
}

const MAX_COUNT: usize = 1 << 24;

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    #[serde(default)]
    dataset: DatasetSection,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    lr: LrSection,
    #[serde(default)]
    loss: LossSection,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    identities: Option<usize>,
    gaussians: Option<usize>,
    bones: Option<usize>,
    width: Option<usize>,
    height: Option<usize>,
    train_poses: Option<usize>,
    held_out_poses: Option<usize>,
    train_max_angle: Option<f64>,
    held_out_min_angle: Option<f64>,
    held_out_max_angle: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    rank: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    iterations: Option<usize>,
    warmup: Option<usize>,
    decay_steps: Option<u64>,
    mode: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LrSection {
    decayed_init: Option<f64>,
    decayed_final: Option<f64>,
    scale: Option<f64>,
    rotation: Option<f64>,
    appearance: Option<f64>,
    opacity: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LossSection {
    l1: Option<f64>,
    mask: Option<f64>,
    isopos: Option<f64>,
    isocov: Option<f64>,
}

pub fn parse_mode(value: &str) -> Option<MaskMode> {
    if value == "full" {
        return Some(MaskMode::Full);
    }
    let (name, idx) = value.split_once(':')?;
    let i: usize = idx.trim().parse().ok()?;
    match name.trim() {
        "per_identity" => Some(MaskMode::PerIdentity(i)),
        "novel_identity" => Some(MaskMode::NovelIdentity(i)),
        "personalization" => Some(MaskMode::Personalization(i)),
        _ => None,
    }
}

pub fn mode_name(mode: MaskMode) -> String {
    match mode {
        MaskMode::Full => "full".into(),
        MaskMode::PerIdentity(i) => format!("per_identity:{i}"),
        MaskMode::NovelIdentity(i) => format!("novel_identity:{i}"),
        MaskMode::Personalization(i) => format!("personalization:{i}"),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `[section]` (or the top level when `section` is empty).
fn key_line(text: &str, section: &str, key: &str) -> usize {
    let mut current = "";
    for (n, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = content.strip_prefix('[').and_then(|c| c.strip_suffix(']')) {
            current = name.trim();
        } else if current == section && content.split('=').next().map(str::trim) == Some(key) {
            return n + 1;
        }
    }
    0
}

/// Checks one supplied value and reports the line it came from.
struct Checker<'a> {
    text: &'a str,
    section: &'static str,
}

impl Checker<'_> {
    fn fail(&self, key: &str, msg: String) -> Error {
        Error::Config {
            line: key_line(self.text, self.section, key),
            msg,
        }
    }

    fn count(&self, slot: &mut usize, value: Option<usize>, key: &str, min: usize) -> Result<()> {
        if let Some(v) = value {
            if v < min || v > MAX_COUNT {
                return Err(self.fail(key, format!("{key} must be in {min}..={MAX_COUNT}")));
            }
            *slot = v;
        }
        Ok(())
    }

    fn real(&self, slot: &mut f64, value: Option<f64>, key: &str) -> Result<()> {
        if let Some(v) = value {
            if !v.is_finite() || v < 0.0 {
                return Err(self.fail(key, format!("{key} must be finite and non-negative")));
            }
            *slot = v;
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let file: FileConfig = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            msg: e.message().to_string(),
        })?;
        let mut cfg = RunConfig::default();
        if let Some(seed) = file.seed {
            cfg.seed = seed;
        }

        let c = Checker {
            text,
            section: "dataset",
        };
        let (d, f) = (&mut cfg.dataset, &file.dataset);
        c.count(&mut d.n_identities, f.identities, "identities", 1)?;
        c.count(&mut d.n_gaussians, f.gaussians, "gaussians", 1)?;
        c.count(&mut d.n_bones, f.bones, "bones", 1)?;
        c.count(&mut d.width, f.width, "width", 1)?;
        c.count(&mut d.height, f.height, "height", 1)?;
        c.count(&mut d.train_poses, f.train_poses, "train_poses", 0)?;
        c.count(&mut d.held_out_poses, f.held_out_poses, "held_out_poses", 0)?;
        c.real(&mut d.train_max_angle, f.train_max_angle, "train_max_angle")?;
        c.real(
            &mut d.held_out_min_angle,
            f.held_out_min_angle,
            "held_out_min_angle",
        )?;
        c.real(
            &mut d.held_out_max_angle,
            f.held_out_max_angle,
            "held_out_max_angle",
        )?;

        let c = Checker {
            text,
            section: "model",
        };
        c.count(&mut cfg.rank, file.model.rank, "rank", 1)?;

        let c = Checker {
            text,
            section: "train",
        };
        let (t, f) = (&mut cfg.train, &file.train);
        c.count(&mut t.iterations, f.iterations, "iterations", 0)?;
        c.count(&mut t.warmup, f.warmup, "warmup", 0)?;
        if let Some(ds) = f.decay_steps {
            if ds == 0 {
                return Err(c.fail("decay_steps", "decay_steps must be at least 1".into()));
            }
            t.decay_steps = Some(ds);
        }
        if let Some(m) = &f.mode {
            t.mode = parse_mode(m).ok_or_else(|| c.fail("mode", format!("unknown mode {m:?}")))?;
        }

        let c = Checker {
            text,
            section: "lr",
        };
        let (l, f) = (&mut cfg.train.lr, &file.lr);
        c.real(&mut l.decayed_init, f.decayed_init, "decayed_init")?;
        c.real(&mut l.decayed_final, f.decayed_final, "decayed_final")?;
        c.real(&mut l.scale, f.scale, "scale")?;
        c.real(&mut l.rotation, f.rotation, "rotation")?;
        c.real(&mut l.appearance, f.appearance, "appearance")?;
        c.real(&mut l.opacity, f.opacity, "opacity")?;

        let c = Checker {
            text,
            section: "loss",
        };
        let (w, f) = (&mut cfg.train.weights, &file.loss);
        c.real(&mut w.l1, f.l1, "l1")?;
        c.real(&mut w.mask, f.mask, "mask")?;
        c.real(&mut w.isopos, f.isopos, "isopos")?;
        c.real(&mut w.isocov, f.isocov, "isocov")?;

        cfg.validate().map_err(|e| Error::Config {
            line: 0,
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Text that parses back to `self`.
    pub fn to_text(&self) -> String {
        let (d, t) = (&self.dataset, &self.train);
        let file = FileConfig {
            seed: Some(self.seed),
            dataset: DatasetSection {
                identities: Some(d.n_identities),
                gaussians: Some(d.n_gaussians),
                bones: Some(d.n_bones),
                width: Some(d.width),
                height: Some(d.height),
                train_poses: Some(d.train_poses),
                held_out_poses: Some(d.held_out_poses),
                train_max_angle: Some(d.train_max_angle),
                held_out_min_angle: Some(d.held_out_min_angle),
                held_out_max_angle: Some(d.held_out_max_angle),
            },
            model: ModelSection {
                rank: Some(self.rank),
            },
            train: TrainSection {
                iterations: Some(t.iterations),
                warmup: Some(t.warmup),
                decay_steps: t.decay_steps,
                mode: Some(mode_name(t.mode)),
            },
            lr: LrSection {
                decayed_init: Some(t.lr.decayed_init),
                decayed_final: Some(t.lr.decayed_final),
                scale: Some(t.lr.scale),
                rotation: Some(t.lr.rotation),
                appearance: Some(t.lr.appearance),
                opacity: Some(t.lr.opacity),
            },
            loss: LossSection {
                l1: Some(t.weights.l1),
                mask: Some(t.weights.mask),
                isopos: Some(t.weights.isopos),
                isocov: Some(t.weights.isocov),
            },
        };
        toml::to_string(&file).expect("plain tables always serialize")
    }
}
