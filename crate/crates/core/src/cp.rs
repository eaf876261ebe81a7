//! CP (CANDECOMP/PARAFAC) models over the `identity × gaussian × params`
//! parameter tensor.
//!
//! The ground-truth element formula is
//! `w[i, g, p] = Σ_r u_identity[i, r] · u_gaussian[g, r] · u_params[p, r]`,
//! i.e. tensor mode 1 is the identity mode, mode 2 the Gaussian mode and
//! mode 3 the per-Gaussian parameter mode.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{mttkrp, rel_error, Mat, Mode, Tensor3};

/// Rank-`R` factor matrices approximating an `N_i × N_g × M` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct CPModel {
    /// `M × R`
    pub u_params: Mat,
    /// `N_i × R`
    pub u_identity: Mat,
    /// `N_g × R`
    pub u_gaussian: Mat,
}

impl CPModel {
    pub fn new(u_params: Mat, u_identity: Mat, u_gaussian: Mat) -> Result<Self> {
        let r = u_params.cols();
        if r == 0 || u_identity.cols() != r || u_gaussian.cols() != r {
            return Err(Error::shape(
                "CPModel::new",
                "equal positive ranks",
                (u_params.cols(), u_identity.cols(), u_gaussian.cols()),
            ));
        }
        if !(u_params.is_finite() && u_identity.is_finite() && u_gaussian.is_finite()) {
            return Err(Error::NonFinite("CP factors"));
        }
        Ok(CPModel {
            u_params,
            u_identity,
            u_gaussian,
        })
    }

    pub fn zeros(n_params: usize, n_identities: usize, n_gaussians: usize, rank: usize) -> Self {
        CPModel {
            u_params: Mat::zeros(n_params, rank),
            u_identity: Mat::zeros(n_identities, rank),
            u_gaussian: Mat::zeros(n_gaussians, rank),
        }
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.u_params.cols()
    }

    #[inline]
    pub fn n_params(&self) -> usize {
        self.u_params.rows()
    }

    #[inline]
    pub fn n_identities(&self) -> usize {
        self.u_identity.rows()
    }

    #[inline]
    pub fn n_gaussians(&self) -> usize {
        self.u_gaussian.rows()
    }

    /// Tensor dimensions `[N_i, N_g, M]`.
    pub fn dims(&self) -> [usize; 3] {
        [self.n_identities(), self.n_gaussians(), self.n_params()]
    }

    fn check_identity(&self, i: usize) -> Result<()> {
        if i >= self.n_identities() {
            return Err(Error::Index {
                what: "identity",
                index: i,
                len: self.n_identities(),
            });
        }
        Ok(())
    }
}

/// Gradients of a scalar loss with respect to each factor of a [`CPModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGrads {
    pub g_params: Mat,
    pub g_identity: Mat,
    pub g_gaussian: Mat,
}

impl FactorGrads {
    pub fn zeros_like(m: &CPModel) -> Self {
        FactorGrads {
            g_params: Mat::zeros(m.n_params(), m.rank()),
            g_identity: Mat::zeros(m.n_identities(), m.rank()),
            g_gaussian: Mat::zeros(m.n_gaussians(), m.rank()),
        }
    }
}

fn slice_from_identity_row(m: &CPModel, identity_row: &[f64]) -> Mat {
    let (ng, np, r) = (m.n_gaussians(), m.n_params(), m.rank());
    let mut out = Mat::zeros(ng, np);
    let mut scaled = vec![0.0; r];
    for g in 0..ng {
        for ((s, a), b) in scaled.iter_mut().zip(identity_row).zip(m.u_gaussian.row(g)) {
            *s = a * b;
        }
        let orow = out.row_mut(g);
        for (p, o) in orow.iter_mut().enumerate() {
            *o = scaled
                .iter()
                .zip(m.u_params.row(p))
                .map(|(s, c)| s * c)
                .sum();
        }
    }
    out
}

/// The `N_g × M` parameter matrix of identity `i`. Reads only row `i` of
/// the identity factor.
pub fn reconstruct_slice(m: &CPModel, i: usize) -> Result<Mat> {
    m.check_identity(i)?;
    Ok(slice_from_identity_row(m, m.u_identity.row(i)))
}

/// Reconstruction from an identity-factor row that need not belong to the
/// model, e.g. a candidate row for an identity being added.
pub fn reconstruct_with_row(m: &CPModel, identity_row: &[f64]) -> Result<Mat> {
    if identity_row.len() != m.rank() {
        return Err(Error::shape(
            "reconstruct_with_row",
            m.rank(),
            identity_row.len(),
        ));
    }
    Ok(slice_from_identity_row(m, identity_row))
}

/// Full `N_i × N_g × M` tensor; slice `i` is bit-identical to
/// [`reconstruct_slice`].
pub fn reconstruct_full(m: &CPModel) -> Tensor3 {
    let mut data = Vec::with_capacity(m.n_identities() * m.n_gaussians() * m.n_params());
    for i in 0..m.n_identities() {
        data.extend_from_slice(slice_from_identity_row(m, m.u_identity.row(i)).data());
    }
    Tensor3::from_vec(m.dims(), data).expect("dims match by construction")
}

/// Chain rule through the trilinear reconstruction: each factor gradient is
/// the MTTKRP of the upstream gradient with the other two factors.
pub fn backward_full(m: &CPModel, grad_t: &Tensor3) -> Result<FactorGrads> {
    if grad_t.dims() != m.dims() {
        return Err(Error::shape("backward_full", m.dims(), grad_t.dims()));
    }
    Ok(FactorGrads {
        g_identity: mttkrp(grad_t, &m.u_gaussian, &m.u_params, Mode::First)?,
        g_gaussian: mttkrp(grad_t, &m.u_identity, &m.u_params, Mode::Second)?,
        g_params: mttkrp(grad_t, &m.u_identity, &m.u_gaussian, Mode::Third)?,
    })
}

/// Gradient of a loss that depends only on identity `i`'s slice. Rows of
/// `g_identity` other than `i` are exactly zero.
pub fn backward_slice(m: &CPModel, i: usize, grad_slice: &Mat) -> Result<FactorGrads> {
    m.check_identity(i)?;
    let want = (m.n_gaussians(), m.n_params());
    if grad_slice.shape() != want {
        return Err(Error::shape("backward_slice", want, grad_slice.shape()));
    }
    let single = Tensor3::from_vec([1, want.0, want.1], grad_slice.data().to_vec())?;
    let row = Mat::from_vec(1, m.rank(), m.u_identity.row(i).to_vec())?;
    let g_row = mttkrp(&single, &m.u_gaussian, &m.u_params, Mode::First)?;
    let mut g_identity = Mat::zeros(m.n_identities(), m.rank());
    g_identity.row_mut(i).copy_from_slice(g_row.row(0));
    Ok(FactorGrads {
        g_identity,
        g_gaussian: mttkrp(&single, &row, &m.u_params, Mode::Second)?,
        g_params: mttkrp(&single, &row, &m.u_gaussian, Mode::Third)?,
    })
}

/// Factorized versus dense parameter counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamCount {
    pub factorized: u64,
    pub dense: u64,
    pub ratio: f64,
}

pub fn param_count(n_params: u64, n_identities: u64, n_gaussians: u64, rank: u64) -> ParamCount {
    let factorized = (n_params + n_identities + n_gaussians) * rank;
    let dense = n_params * n_identities * n_gaussians;
    ParamCount {
        factorized,
        dense,
        ratio: dense as f64 / factorized as f64,
    }
}

/// Eigenvalues below this fraction of the largest are treated as zero by
/// the pseudo-inverse.
const PINV_CUTOFF: f64 = 1e-12;

fn to_na(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

fn from_na(m: &DMatrix<f64>) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
}

/// Solves `X · V = rhs` for symmetric positive semi-definite `V`. Uses
/// Cholesky when `V` is well conditioned, otherwise the minimum-norm
/// pseudo-inverse solution; the flag reports the fallback.
fn solve_spd_right(rhs: &Mat, v: &Mat) -> (Mat, bool) {
    let vn = to_na(v);
    let largest_diag = (0..v.rows())
        .map(|d| v[(d, d)].abs())
        .fold(0.0_f64, f64::max);
    if let Some(chol) = vn.clone().cholesky() {
        if chol
            .l_dirty()
            .diagonal()
            .iter()
            .all(|&d| d * d > PINV_CUTOFF * largest_diag)
        {
            // X V = B  <=>  V Xᵀ = Bᵀ
            return (
                from_na(&chol.solve(&to_na(rhs).transpose()).transpose()),
                false,
            );
        }
    }
    (rhs.matmul(&pseudo_inverse(v)).expect("square system"), true)
}

fn pseudo_inverse(v: &Mat) -> Mat {
    let eig = SymmetricEigen::new(to_na(v));
    let cutoff = PINV_CUTOFF * eig.eigenvalues.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let inv = eig
        .eigenvalues
        .map(|x| if x > cutoff { 1.0 / x } else { 0.0 });
    let q = &eig.eigenvectors;
    from_na(&(q * DMatrix::from_diagonal(&inv) * q.transpose()))
}

/// Normalizes columns in place and returns their norms (0 for zero columns).
fn normalize_columns(m: &mut Mat) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let mut norms = vec![0.0; cols];
    for r in 0..rows {
        for (n, x) in norms.iter_mut().zip(m.row(r)) {
            *n += x * x;
        }
    }
    for n in norms.iter_mut() {
        *n = math::sqrt(*n);
    }
    for r in 0..rows {
        for (x, n) in m.row_mut(r).iter_mut().zip(&norms) {
            if *n > 0.0 {
                *x /= n;
            }
        }
    }
    norms
}

fn scale_columns(m: &mut Mat, weights: &[f64]) {
    for r in 0..m.rows() {
        for (x, w) in m.row_mut(r).iter_mut().zip(weights) {
            *x *= w;
        }
    }
}

fn random_normal_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

#[derive(Debug, Clone, Copy)]
pub struct AlsOptions {
    pub rank: usize,
    pub max_sweeps: usize,
    /// Stop once the relative error changes by less than this between sweeps.
    pub tol: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct AlsReport {
    /// Relative reconstruction error after each sweep.
    pub errors: Vec<f64>,
    /// Number of least-squares solves that fell back to the pseudo-inverse.
    pub pseudo_inverse_solves: usize,
}

/// Alternating least squares. Each factor update is the exact least-squares
/// solution `mttkrp · (Gram ∘ Gram)⁻¹`; column norms are carried separately
/// and folded into the Gaussian factor on return.
pub fn cp_als(t: &Tensor3, opts: &AlsOptions) -> Result<(CPModel, AlsReport)> {
    if opts.rank == 0 {
        return Err(Error::arg("CP rank must be at least 1"));
    }
    if opts.max_sweeps == 0 {
        return Err(Error::arg("max_sweeps must be at least 1"));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite("cp_als input tensor"));
    }
    let [ni, ng, np] = t.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut a = random_normal_mat(ni, opts.rank, &mut rng);
    let mut b = random_normal_mat(ng, opts.rank, &mut rng);
    let mut c = random_normal_mat(np, opts.rank, &mut rng);
    normalize_columns(&mut a);
    normalize_columns(&mut b);
    normalize_columns(&mut c);

    let mut report = AlsReport {
        errors: Vec::new(),
        pseudo_inverse_solves: 0,
    };
    let mut weights;
    loop {
        let (next, reg) = solve_spd_right(
            &mttkrp(t, &b, &c, Mode::First)?,
            &b.gram().hadamard(&c.gram())?,
        );
        a = next;
        report.pseudo_inverse_solves += reg as usize;
        normalize_columns(&mut a);

        let (next, reg) = solve_spd_right(
            &mttkrp(t, &a, &c, Mode::Second)?,
            &a.gram().hadamard(&c.gram())?,
        );
        b = next;
        report.pseudo_inverse_solves += reg as usize;
        normalize_columns(&mut b);

        let (next, reg) = solve_spd_right(
            &mttkrp(t, &a, &b, Mode::Third)?,
            &a.gram().hadamard(&b.gram())?,
        );
        c = next;
        report.pseudo_inverse_solves += reg as usize;
        weights = normalize_columns(&mut c);

        let mut weighted_b = b.clone();
        scale_columns(&mut weighted_b, &weights);
        let model = CPModel {
            u_params: c.clone(),
            u_identity: a.clone(),
            u_gaussian: weighted_b,
        };
        let err = rel_error(t, &reconstruct_full(&model))?;
        let change = report.errors.last().map(|prev| (prev - err).abs());
        report.errors.push(err);
        if report.errors.len() >= opts.max_sweeps || change.is_some_and(|d| d < opts.tol) {
            return Ok((model, report));
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PowerOptions {
    pub rank: usize,
    pub iters_per_component: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl PowerOptions {
    pub fn new(rank: usize, seed: u64) -> Self {
        PowerOptions {
            rank,
            iters_per_component: 100,
            restarts: 5,
            seed,
        }
    }
}

/// Contracts `t` with two of `a` (mode 1), `b` (mode 2), `c` (mode 3),
/// leaving the `free` mode open.
fn contract(t: &Tensor3, a: &[f64], b: &[f64], c: &[f64], free: Mode) -> Vec<f64> {
    let [n1, n2, n3] = t.dims();
    let data = t.data();
    let mut out = vec![0.0; t.dims()[free.axis()]];
    for i in 0..n1 {
        for j in 0..n2 {
            let row = &data[(i * n2 + j) * n3..(i * n2 + j + 1) * n3];
            match free {
                Mode::First => out[i] += b[j] * dot(row, c),
                Mode::Second => out[j] += a[i] * dot(row, c),
                Mode::Third => {
                    let s = a[i] * b[j];
                    for (o, x) in out.iter_mut().zip(row) {
                        *o += s * x;
                    }
                }
            }
        }
    }
    out
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Normalizes `v`; returns false when it is zero.
fn normalize(v: &mut [f64]) -> bool {
    let n = math::sqrt(dot(v, v));
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        if normalize(&mut v) {
            return v;
        }
    }
}

/// Greedy rank-1 fitting by tensor power iteration with deflation. Each
/// component keeps the best of `restarts` random starts by `|λ|`; the weight
/// `λ` is folded into the Gaussian-factor column.
pub fn cp_power(t: &Tensor3, opts: &PowerOptions) -> Result<CPModel> {
    if opts.rank == 0 {
        return Err(Error::arg("CP rank must be at least 1"));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite("cp_power input tensor"));
    }
    let [ni, ng, np] = t.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut residual = t.clone();
    let mut model = CPModel::zeros(np, ni, ng, opts.rank);
    for r in 0..opts.rank {
        // (fitted weight, identity, gaussian, params vectors)
        let mut best: Option<(f64, [Vec<f64>; 3])> = None;
        for _ in 0..opts.restarts.max(1) {
            let mut a = random_unit(ni, &mut rng);
            let mut b = random_unit(ng, &mut rng);
            let mut c = random_unit(np, &mut rng);
            for _ in 0..opts.iters_per_component {
                let mut na = contract(&residual, &a, &b, &c, Mode::First);
                if !normalize(&mut na) {
                    break;
                }
                a = na;
                let mut nb = contract(&residual, &a, &b, &c, Mode::Second);
                if !normalize(&mut nb) {
                    break;
                }
                b = nb;
                let mut nc = contract(&residual, &a, &b, &c, Mode::Third);
                if !normalize(&mut nc) {
                    break;
                }
                c = nc;
            }
            let lambda = dot(&contract(&residual, &a, &b, &c, Mode::Third), &c);
            if best.as_ref().is_none_or(|(l, ..)| lambda.abs() > l.abs()) {
                best = Some((lambda, [a, b, c]));
            }
        }
        let (lambda, [a, b, c]) = best.expect("at least one restart");
        if lambda == 0.0 {
            // nothing left to explain; remaining components carry zero weight
            continue;
        }
        for i in 0..ni {
            for j in 0..ng {
                let s = lambda * a[i] * b[j];
                for k in 0..np {
                    let o = residual.offset(i, j, k);
                    residual.data_mut()[o] -= s * c[k];
                }
            }
        }
        for i in 0..ni {
            model.u_identity[(i, r)] = a[i];
        }
        for j in 0..ng {
            model.u_gaussian[(j, r)] = lambda * b[j];
        }
        for k in 0..np {
            model.u_params[(k, r)] = c[k];
        }
    }
    Ok(model)
}
