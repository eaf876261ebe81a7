//! Differentiable 2D Gaussian splatting.
//!
//! Per pixel center `x`, Gaussians are composited front to back in index
//! order (the 2D stand-in for a depth sort):
//!
//! ```text
//! a_g = min(opacity_g · exp(-½ dᵀ Σ_g⁻¹ d), 0.999),   d = x − μ_g   (pixels)
//! C   = Σ_g c_g · a_g · Π_{j<g} (1 − a_j)
//! A   = 1 − Π_g (1 − a_g)
//! ```
//!
//! A Gaussian only touches pixels inside its axis-aligned 3σ box; the box is
//! treated as constant support by the backward pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian2D, GaussianGrad, GaussianSet};
use crate::math;

pub const ALPHA_MAX: f64 = 0.999;
const SUPPORT_SIGMAS: f64 = 3.0;
const JITTER: f64 = 1e-8;

/// Maps world coordinates to pixels: `pixel = (world − origin) · scale`.
/// Pixel `(px, py)` is sampled at its center `(px + ½, py + ½)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewport {
    pub width: usize,
    pub height: usize,
    /// Pixels per world unit.
    pub scale: f64,
    /// World coordinate of the top-left pixel corner.
    pub origin: [f64; 2],
}

impl Viewport {
    pub fn new(width: usize, height: usize, scale: f64, origin: [f64; 2]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg("viewport dimensions must be positive"));
        }
        if !(scale.is_finite() && scale > 0.0) || !origin.iter().all(|x| x.is_finite()) {
            return Err(Error::arg("viewport map must be finite and invertible"));
        }
        Ok(Viewport {
            width,
            height,
            scale,
            origin,
        })
    }

    /// Viewport of `width × height` pixels centered on `center`, `extent`
    /// world units across horizontally.
    pub fn centered(width: usize, height: usize, center: [f64; 2], extent: f64) -> Result<Self> {
        let scale = width as f64 / extent;
        let origin = [
            center[0] - width as f64 / (2.0 * scale),
            center[1] - height as f64 / (2.0 * scale),
        ];
        Viewport::new(width, height, scale, origin)
    }

    #[inline]
    pub fn to_pixel(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.origin[0]) * self.scale,
            (p[1] - self.origin[1]) * self.scale,
        ]
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// RGB image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn black(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(
                "Image::from_vec",
                width * height * 3,
                data.len(),
            ));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }
}

/// Accumulated opacity per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl AlphaMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        AlphaMask {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                "AlphaMask::from_vec",
                width * height,
                data.len(),
            ));
        }
        Ok(AlphaMask {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: Image,
    pub mask: AlphaMask,
    /// Gaussians whose covariance needed diagonal jitter.
    pub jittered: usize,
}

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }
}

/// `R(θ) · diag(s1², s2²) · R(θ)ᵀ`.
pub fn covariance2d(scale: [f64; 2], angle: f64) -> Result<Sym2> {
    if !(scale[0] > 0.0 && scale[1] > 0.0) {
        return Err(Error::arg("covariance2d: scales must be positive"));
    }
    Ok(covariance_unchecked(scale, angle))
}

#[inline]
pub(crate) fn covariance_unchecked(scale: [f64; 2], angle: f64) -> Sym2 {
    let (s, c) = (math::sin(angle), math::cos(angle));
    let a = scale[0] * scale[0];
    let b = scale[1] * scale[1];
    Sym2 {
        xx: c * c * a + s * s * b,
        xy: c * s * (a - b),
        yy: s * s * a + c * c * b,
    }
}

/// Gradient of a loss w.r.t. `(scale, angle)` given its gradient w.r.t. the
/// covariance entries (`xy` counted once, as a free parameter).
pub(crate) fn covariance_backward(scale: [f64; 2], angle: f64, g: Sym2) -> ([f64; 2], f64) {
    let (s, c) = (math::sin(angle), math::cos(angle));
    let a = scale[0] * scale[0];
    let b = scale[1] * scale[1];
    let d_s1 = 2.0 * scale[0] * (g.xx * c * c + g.yy * s * s + g.xy * c * s);
    let d_s2 = 2.0 * scale[1] * (g.xx * s * s + g.yy * c * c - g.xy * c * s);
    let d_theta = (a - b) * (-2.0 * c * s * g.xx + 2.0 * c * s * g.yy + (c * c - s * s) * g.xy);
    ([d_s1, d_s2], d_theta)
}

/// Pixel-space quantities of one Gaussian.
#[derive(Debug, Clone, Copy)]
struct Projected {
    mean: [f64; 2],
    cov: Sym2,
    conic: Sym2,
    radius: [f64; 2],
    jittered: bool,
}

fn project(g: &Gaussian2D, vp: &Viewport) -> Result<Projected> {
    let w = covariance2d(g.scale, g.angle)?;
    let k2 = vp.scale * vp.scale;
    let mut cov = Sym2 {
        xx: w.xx * k2,
        xy: w.xy * k2,
        yy: w.yy * k2,
    };
    let tr = cov.xx + cov.yy;
    let jittered = !(cov.det() > 1e-12 * tr * tr);
    if jittered {
        cov.xx += JITTER;
        cov.yy += JITTER;
    }
    let det = cov.det();
    let conic = Sym2 {
        xx: cov.yy / det,
        xy: -cov.xy / det,
        yy: cov.xx / det,
    };
    Ok(Projected {
        mean: vp.to_pixel(g.position),
        cov,
        conic,
        radius: [
            SUPPORT_SIGMAS * math::sqrt(cov.xx),
            SUPPORT_SIGMAS * math::sqrt(cov.yy),
        ],
        jittered,
    })
}

fn project_all(gs: &GaussianSet, vp: &Viewport) -> Result<Vec<Projected>> {
    gs.gaussians.iter().map(|g| project(g, vp)).collect()
}

/// Contribution of one Gaussian at one pixel, kept for the backward pass.
#[derive(Debug, Clone, Copy)]
struct Hit {
    index: usize,
    d: [f64; 2],
    falloff: f64,
    alpha: f64,
    clamped: bool,
}

/// Visits the Gaussians covering pixel center `x` in composite order.
fn hits_at(proj: &[Projected], gs: &GaussianSet, x: [f64; 2], out: &mut Vec<Hit>) {
    out.clear();
    for (index, p) in proj.iter().enumerate() {
        let d = [x[0] - p.mean[0], x[1] - p.mean[1]];
        if d[0].abs() > p.radius[0] || d[1].abs() > p.radius[1] {
            continue;
        }
        let power = -0.5
            * (p.conic.xx * d[0] * d[0]
                + 2.0 * p.conic.xy * d[0] * d[1]
                + p.conic.yy * d[1] * d[1]);
        let falloff = math::exp(power);
        let raw = gs.gaussians[index].opacity * falloff;
        let clamped = raw > ALPHA_MAX;
        out.push(Hit {
            index,
            d,
            falloff,
            alpha: if clamped { ALPHA_MAX } else { raw.max(0.0) },
            clamped,
        });
    }
}

pub fn render(gs: &GaussianSet, vp: &Viewport) -> Result<Rendered> {
    let proj = project_all(gs, vp)?;
    let mut image = Image::black(vp.width, vp.height);
    let mut mask = AlphaMask::zeros(vp.width, vp.height);
    let mut hits = Vec::new();
    for py in 0..vp.height {
        for px in 0..vp.width {
            hits_at(&proj, gs, [px as f64 + 0.5, py as f64 + 0.5], &mut hits);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for h in &hits {
                let col = gs.gaussians[h.index].color;
                let w = h.alpha * t;
                for ch in 0..3 {
                    c[ch] += col[ch] * w;
                }
                t *= 1.0 - h.alpha;
            }
            let o = py * vp.width + px;
            image.data[o * 3..o * 3 + 3].copy_from_slice(&c);
            mask.data[o] = 1.0 - t;
        }
    }
    Ok(Rendered {
        image,
        mask,
        jittered: proj.iter().filter(|p| p.jittered).count(),
    })
}

/// Analytic gradients of `render` for upstream image and mask gradients.
/// Returned per Gaussian in activated space (world position, scale, angle,
/// color, opacity).
pub fn render_backward(
    gs: &GaussianSet,
    vp: &Viewport,
    grad_image: &Image,
    grad_mask: &AlphaMask,
) -> Result<Vec<GaussianGrad>> {
    if (grad_image.width, grad_image.height) != (vp.width, vp.height)
        || (grad_mask.width, grad_mask.height) != (vp.width, vp.height)
        || grad_image.data.len() != vp.n_pixels() * 3
        || grad_mask.data.len() != vp.n_pixels()
    {
        return Err(Error::shape(
            "render_backward",
            (vp.width, vp.height),
            (
                (grad_image.width, grad_image.height),
                (grad_mask.width, grad_mask.height),
            ),
        ));
    }
    let proj = project_all(gs, vp)?;
    let mut grads = vec![GaussianGrad::default(); gs.len()];
    // per Gaussian: d loss / d mean_px and d loss / d conic
    let mut g_mean = vec![[0.0; 2]; gs.len()];
    let mut g_conic = vec![
        Sym2 {
            xx: 0.0,
            xy: 0.0,
            yy: 0.0
        };
        gs.len()
    ];
    let mut hits = Vec::new();
    let mut trans = Vec::new();
    for py in 0..vp.height {
        for px in 0..vp.width {
            let o = py * vp.width + px;
            let gc = [
                grad_image.data[o * 3],
                grad_image.data[o * 3 + 1],
                grad_image.data[o * 3 + 2],
            ];
            let ga = grad_mask.data[o];
            if gc == [0.0; 3] && ga == 0.0 {
                continue;
            }
            hits_at(&proj, gs, [px as f64 + 0.5, py as f64 + 0.5], &mut hits);
            trans.clear();
            let mut t = 1.0;
            for h in &hits {
                trans.push(t);
                t *= 1.0 - h.alpha;
            }
            let t_final = t;
            // color accumulated behind the current Gaussian
            let mut behind = [0.0; 3];
            for (h, &t_k) in hits.iter().zip(&trans).rev() {
                let g = &gs.gaussians[h.index];
                let w = h.alpha * t_k;
                let out = &mut grads[h.index];
                for ch in 0..3 {
                    out.color[ch] += gc[ch] * w;
                }
                let inv = 1.0 / (1.0 - h.alpha);
                let mut d_alpha = ga * t_final * inv;
                for ch in 0..3 {
                    d_alpha += gc[ch] * (g.color[ch] * t_k - behind[ch] * inv);
                }
                for ch in 0..3 {
                    behind[ch] += g.color[ch] * w;
                }
                if h.clamped {
                    continue;
                }
                out.opacity += d_alpha * h.falloff;
                let d_power = d_alpha * g.opacity * h.falloff;
                let c = &proj[h.index].conic;
                // power = -½ (qxx dx² + 2 qxy dx dy + qyy dy²), d = x − mean
                g_mean[h.index][0] += d_power * (c.xx * h.d[0] + c.xy * h.d[1]);
                g_mean[h.index][1] += d_power * (c.xy * h.d[0] + c.yy * h.d[1]);
                let gq = &mut g_conic[h.index];
                gq.xx += d_power * -0.5 * h.d[0] * h.d[0];
                gq.xy += d_power * -h.d[0] * h.d[1];
                gq.yy += d_power * -0.5 * h.d[1] * h.d[1];
            }
        }
    }
    let k = vp.scale;
    for (idx, g) in gs.gaussians.iter().enumerate() {
        let p = &proj[idx];
        let out = &mut grads[idx];
        out.position = [g_mean[idx][0] * k, g_mean[idx][1] * k];
        let q = g_conic[idx];
        let (a, b, c) = (p.cov.xx, p.cov.xy, p.cov.yy);
        let det = p.cov.det();
        let d2 = det * det;
        // conic = [[c, -b], [-b, a]] / det
        let g_cov = Sym2 {
            xx: q.xx * (-c * c / d2) + q.yy * (-b * b / d2) + q.xy * (b * c / d2),
            yy: q.xx * (-b * b / d2) + q.yy * (-a * a / d2) + q.xy * (b * a / d2),
            xy: q.xx * (2.0 * c * b / d2)
                + q.yy * (2.0 * a * b / d2)
                + q.xy * ((-det - 2.0 * b * b) / d2),
        };
        let k2 = k * k;
        let g_world = Sym2 {
            xx: g_cov.xx * k2,
            xy: g_cov.xy * k2,
            yy: g_cov.yy * k2,
        };
        let (gs_scale, g_angle) = covariance_backward(g.scale, g.angle, g_world);
        out.scale = gs_scale;
        out.angle = g_angle;
    }
    Ok(grads)
}
