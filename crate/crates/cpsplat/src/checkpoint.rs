//! Versioned little-endian binary checkpoints with a trailing CRC32.
//!
//! Layout: `MIGS`, version, `M N_i N_g R`, layout id, flags (all `u32`),
//! then the params, identity and Gaussian factors row-major as `f64`,
//! then one `N_g × residual_width` residual per identity when flag bit 0 is
//! set, then the CRC32 of everything before it.

use std::path::Path;

use cpsplat_core::cp::CPModel;
use cpsplat_core::gaussian::{FactorizedAvatarStore, ParamLayout};
use cpsplat_core::tensor::Mat;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MIGS";
pub const VERSION: u32 = 1;
/// Layout id for factors that are not Gaussian parameters.
pub const RAW_LAYOUT: u32 = u32::MAX;
const FLAG_PERSONALIZATION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CPModel,
    /// `None` for plain tensor factors.
    pub layout: Option<ParamLayout>,
    pub personalization: Option<Vec<Mat>>,
}

impl Checkpoint {
    pub fn from_store(store: &FactorizedAvatarStore) -> Self {
        Checkpoint {
            model: store.model.clone(),
            layout: Some(store.layout.clone()),
            personalization: store.personalization.clone(),
        }
    }

    pub fn into_store(self) -> Result<FactorizedAvatarStore> {
        let layout = self
            .layout
            .ok_or_else(|| Error::format("checkpoint", "factors carry no Gaussian layout"))?;
        let mut store = FactorizedAvatarStore::new(self.model, layout)?;
        store.personalization = self.personalization;
        Ok(store)
    }

    pub fn encode(&self) -> Vec<u8> {
        let m = &self.model;
        let mut out = Vec::with_capacity(
            32 + 8
                * (m.u_params.data().len() + m.u_identity.data().len() + m.u_gaussian.data().len())
                + 4,
        );
        out.extend_from_slice(MAGIC);
        let flags = if self.personalization.is_some() {
            FLAG_PERSONALIZATION
        } else {
            0
        };
        let layout = self.layout.as_ref().map_or(RAW_LAYOUT, |l| l.id());
        for v in [
            VERSION,
            m.n_params() as u32,
            m.n_identities() as u32,
            m.n_gaussians() as u32,
            m.rank() as u32,
            layout,
            flags,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut mats = vec![&m.u_params, &m.u_identity, &m.u_gaussian];
        if let Some(res) = &self.personalization {
            mats.extend(res.iter());
        }
        for mat in mats {
            for v in mat.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::format("checkpoint", msg);
        if bytes.len() < 4 + 7 * 4 + 4 {
            return Err(bad("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if &body[..4] != MAGIC {
            return Err(bad("missing MIGS magic"));
        }
        if crc32fast::hash(body) != stored {
            return Err(bad("CRC mismatch"));
        }
        let word =
            |k: usize| u32::from_le_bytes(body[4 + 4 * k..8 + 4 * k].try_into().expect("4 bytes"));
        if word(0) != VERSION {
            return Err(bad(&format!("unsupported version {}", word(0))));
        }
        let [m, ni, ng, r] = [word(1), word(2), word(3), word(4)].map(|v| v as usize);
        let layout = match word(5) {
            RAW_LAYOUT => None,
            id => {
                let l = ParamLayout::from_id(id)?;
                if l.total() != m {
                    return Err(bad("layout does not match M"));
                }
                Some(l)
            }
        };
        let flags = word(6);
        if flags & !FLAG_PERSONALIZATION != 0 {
            return Err(bad("unknown flags"));
        }
        let personalized = flags & FLAG_PERSONALIZATION != 0;
        let res_width = match (&layout, personalized) {
            (Some(l), true) => l.residual_width(),
            (None, true) => return Err(bad("residuals need a Gaussian layout")),
            _ => 0,
        };
        let counts = [m * r, ni * r, ng * r];
        let expected = counts.iter().sum::<usize>() + ni * ng * res_width;
        let data = &body[32..];
        if data.len() != expected * 8 {
            return Err(bad(&format!(
                "expected {} factor bytes, found {}",
                expected * 8,
                data.len()
            )));
        }
        let mut values = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |rows: usize, cols: usize| {
            Mat::from_vec(rows, cols, values.by_ref().take(rows * cols).collect())
        };
        let u_params = take(m, r)?;
        let u_identity = take(ni, r)?;
        let u_gaussian = take(ng, r)?;
        let personalization = if personalized {
            Some(
                (0..ni)
                    .map(|_| take(ng, res_width))
                    .collect::<std::result::Result<_, _>>()?,
            )
        } else {
            None
        };
        Ok(Checkpoint {
            model: CPModel::new(u_params, u_identity, u_gaussian)?,
            layout,
            personalization,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
