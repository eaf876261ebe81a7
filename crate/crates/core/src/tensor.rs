//! Dense third-order tensors and the matricization kernels built on them.
//!
//! Index conventions, fixed once for the whole crate:
//!
//! * storage is row-major: `t[i, j, k]` lives at `(i * n2 + j) * n3 + k`;
//! * the mode-`n` unfolding puts the mode-`n` coordinate on the rows and
//!   linearizes the two remaining modes with the lower-numbered one varying
//!   slowest, so column indices are `j * n3 + k` (mode 1), `i * n3 + k`
//!   (mode 2) and `i * n2 + j` (mode 3);
//! * `khatri_rao(a, b)` places `a[ia, r] * b[ib, r]` at row `ia * b.rows + ib`,
//!   which makes `unfold(t, n) * khatri_rao(lower, higher)` the MTTKRP for
//!   mode `n` with `lower`/`higher` the factors of the remaining modes.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::math;

/// A row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Mat::from_vec", rows * cols, data.len()));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", (self.cols, "x"), (other.rows, "x")));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Mat {
        let n = self.cols;
        let mut g = Mat::zeros(n, n);
        for r in 0..self.rows {
            let row = self.row(r);
            for a in 0..n {
                for b in 0..n {
                    g.data[a * n + b] += row[a] * row[b];
                }
            }
        }
        g
    }

    pub fn hadamard(&self, other: &Mat) -> Result<Mat> {
        if self.shape() != other.shape() {
            return Err(Error::shape("hadamard", self.shape(), other.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frob_norm(&self) -> f64 {
        math::sqrt(self.data.iter().map(|x| x * x).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// One of the three tensor modes, numbered from 1 as in the unfolding
/// convention above.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    First,
    Second,
    Third,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::First, Mode::Second, Mode::Third];

    pub fn from_number(n: usize) -> Result<Mode> {
        match n {
            1 => Ok(Mode::First),
            2 => Ok(Mode::Second),
            3 => Ok(Mode::Third),
            _ => Err(Error::arg(alloc::format!(
                "tensor mode must be 1, 2 or 3, got {n}"
            ))),
        }
    }

    #[inline]
    pub(crate) fn axis(self) -> usize {
        match self {
            Mode::First => 0,
            Mode::Second => 1,
            Mode::Third => 2,
        }
    }

    /// The two remaining axes, lower first.
    #[inline]
    fn others(self) -> (usize, usize) {
        match self {
            Mode::First => (1, 2),
            Mode::Second => (0, 2),
            Mode::Third => (0, 1),
        }
    }
}

/// Dense `n1 × n2 × n3` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Tensor3 {
            dims,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::shape("Tensor3::from_vec", n, data.len()));
        }
        Ok(Tensor3 { dims, data })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Tensor3 { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    /// The `n2 × n3` matrix at first-mode index `i`.
    pub fn slice_first(&self, i: usize) -> Mat {
        let n = self.dims[1] * self.dims[2];
        Mat {
            rows: self.dims[1],
            cols: self.dims[2],
            data: self.data[i * n..(i + 1) * n].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn frob_norm(&self) -> f64 {
        math::sqrt(self.data.iter().map(|x| x * x).sum())
    }
}

/// Row/column of element `idx` (as `[i, j, k]`) in the mode unfolding.
#[inline]
fn unfold_position(dims: [usize; 3], mode: Mode, idx: [usize; 3]) -> (usize, usize) {
    let (lo, hi) = mode.others();
    (idx[mode.axis()], idx[lo] * dims[hi] + idx[hi])
}

fn unfold_shape(dims: [usize; 3], mode: Mode) -> (usize, usize) {
    let (lo, hi) = mode.others();
    (dims[mode.axis()], dims[lo] * dims[hi])
}

pub fn unfold(t: &Tensor3, mode: Mode) -> Mat {
    let (rows, cols) = unfold_shape(t.dims, mode);
    let mut m = Mat::zeros(rows, cols);
    let [n1, n2, n3] = t.dims;
    for i in 0..n1 {
        for j in 0..n2 {
            for k in 0..n3 {
                let (r, c) = unfold_position(t.dims, mode, [i, j, k]);
                m.data[r * cols + c] = t.data[(i * n2 + j) * n3 + k];
            }
        }
    }
    m
}

pub fn fold(m: &Mat, mode: Mode, dims: [usize; 3]) -> Result<Tensor3> {
    let shape = unfold_shape(dims, mode);
    if m.shape() != shape {
        return Err(Error::shape("fold", shape, m.shape()));
    }
    let mut t = Tensor3::zeros(dims);
    let [n1, n2, n3] = dims;
    for i in 0..n1 {
        for j in 0..n2 {
            for k in 0..n3 {
                let (r, c) = unfold_position(dims, mode, [i, j, k]);
                t.data[(i * n2 + j) * n3 + k] = m.data[r * shape.1 + c];
            }
        }
    }
    Ok(t)
}

/// Column-wise Kronecker product; row `ia * b.rows + ib`.
pub fn khatri_rao(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.cols {
        return Err(Error::shape("khatri_rao", a.cols, b.cols));
    }
    let r = a.cols;
    let mut out = Mat::zeros(a.rows * b.rows, r);
    for ia in 0..a.rows {
        let arow = a.row(ia);
        for ib in 0..b.rows {
            let brow = b.row(ib);
            let orow = out.row_mut(ia * b.rows + ib);
            for c in 0..r {
                orow[c] = arow[c] * brow[c];
            }
        }
    }
    Ok(out)
}

/// `unfold(t, mode) · khatri_rao(lower, higher)` without materializing the
/// Khatri-Rao product. `lower` is the factor of the lower-numbered remaining
/// mode.
pub fn mttkrp(t: &Tensor3, lower: &Mat, higher: &Mat, mode: Mode) -> Result<Mat> {
    let (lo, hi) = mode.others();
    let dims = t.dims;
    if lower.rows != dims[lo] || higher.rows != dims[hi] || lower.cols != higher.cols {
        return Err(Error::shape(
            "mttkrp",
            (dims[lo], dims[hi], "R"),
            (lower.rows, higher.rows, (lower.cols, higher.cols)),
        ));
    }
    let rank = lower.cols;
    let mut out = Mat::zeros(dims[mode.axis()], rank);
    let [n1, n2, n3] = dims;
    let mut acc = vec![0.0; rank];
    for i in 0..n1 {
        for j in 0..n2 {
            let base = (i * n2 + j) * n3;
            match mode {
                // k is the higher remaining mode for modes 1 and 2
                Mode::First | Mode::Second => {
                    let (row, lo_idx) = if mode == Mode::First { (i, j) } else { (j, i) };
                    let lrow = lower.row(lo_idx);
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for k in 0..n3 {
                        let x = t.data[base + k];
                        if x == 0.0 {
                            continue;
                        }
                        for (a, h) in acc.iter_mut().zip(higher.row(k)) {
                            *a += x * h;
                        }
                    }
                    let orow = out.row_mut(row);
                    for c in 0..rank {
                        orow[c] += lrow[c] * acc[c];
                    }
                }
                Mode::Third => {
                    let lrow = lower.row(i);
                    let hrow = higher.row(j);
                    for k in 0..n3 {
                        let x = t.data[base + k];
                        if x == 0.0 {
                            continue;
                        }
                        let orow = out.row_mut(k);
                        for c in 0..rank {
                            orow[c] += x * lrow[c] * hrow[c];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn frob_norm(t: &Tensor3) -> f64 {
    t.frob_norm()
}

/// `‖t − approx‖ / ‖t‖`, defined as 0 when both are zero.
pub fn rel_error(t: &Tensor3, approx: &Tensor3) -> Result<f64> {
    if t.dims != approx.dims {
        return Err(Error::shape("rel_error", t.dims, approx.dims));
    }
    let diff: f64 = t
        .data
        .iter()
        .zip(&approx.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let norm = t.frob_norm();
    let diff = math::sqrt(diff);
    if norm == 0.0 {
        return Ok(if diff == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(diff / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_mat, random_tensor};
    use proptest::prelude::*;

    #[test]
    fn unfold_singleton() {
        let t = Tensor3::from_vec([1, 1, 1], vec![5.0]).unwrap();
        for mode in Mode::ALL {
            assert_eq!(unfold(&t, mode), Mat::from_vec(1, 1, vec![5.0]).unwrap());
        }
    }

    #[test]
    fn unfold_mode2_matches_enumeration() {
        let t = Tensor3::from_vec([2, 2, 2], (0..8).map(|x| x as f64).collect()).unwrap();
        let m = unfold(&t, Mode::Second);
        assert_eq!(m.shape(), (2, 4));
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert_eq!(m[(j, i * 2 + k)], t.get(i, j, k));
                }
            }
        }
        assert_eq!(m.row(0), &[0.0, 1.0, 4.0, 5.0]);
    }

    #[test]
    fn unfold_index_map_all_modes() {
        let t = random_tensor([3, 4, 2], 11);
        let m1 = unfold(&t, Mode::First);
        let m2 = unfold(&t, Mode::Second);
        let m3 = unfold(&t, Mode::Third);
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..2 {
                    assert_eq!(m1[(i, j * 2 + k)], t.get(i, j, k));
                    assert_eq!(m2[(j, i * 2 + k)], t.get(i, j, k));
                    assert_eq!(m3[(k, i * 4 + j)], t.get(i, j, k));
                }
            }
        }
    }

    #[test]
    fn fold_basics() {
        let m = Mat::from_vec(1, 1, vec![5.0]).unwrap();
        assert_eq!(fold(&m, Mode::First, [1, 1, 1]).unwrap().data(), &[5.0]);
        let z = fold(&Mat::zeros(4, 6), Mode::Second, [3, 4, 2]).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
        assert!(fold(&Mat::zeros(4, 5), Mode::Second, [3, 4, 2]).is_err());
        assert!(Mode::from_number(4).is_err());
    }

    #[test]
    fn khatri_rao_examples() {
        let a = Mat::from_vec(2, 1, vec![1.0, 2.0]).unwrap();
        let b = Mat::from_vec(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(khatri_rao(&a, &b).unwrap().data(), &[3.0, 4.0, 6.0, 8.0]);

        let ones = Mat::filled(3, 1, 1.0);
        let b = Mat::from_vec(2, 1, vec![-1.5, 7.0]).unwrap();
        assert_eq!(
            khatri_rao(&ones, &b).unwrap().data(),
            &[-1.5, 7.0, -1.5, 7.0, -1.5, 7.0]
        );

        assert!(khatri_rao(&Mat::zeros(2, 2), &Mat::zeros(2, 3)).is_err());
    }

    #[test]
    fn khatri_rao_naive_loop() {
        let a = random_mat(3, 2, 1);
        let b = random_mat(2, 2, 2);
        let kr = khatri_rao(&a, &b).unwrap();
        for ia in 0..3 {
            for ib in 0..2 {
                for r in 0..2 {
                    assert_eq!(kr[(ia * 2 + ib, r)], a[(ia, r)] * b[(ib, r)]);
                }
            }
        }
    }

    #[test]
    fn mttkrp_all_ones() {
        let t = Tensor3::from_vec([2, 2, 2], vec![1.0; 8]).unwrap();
        let f = Mat::filled(2, 1, 1.0);
        for mode in Mode::ALL {
            let m = mttkrp(&t, &f, &f, mode).unwrap();
            assert_eq!(m.data(), &[4.0, 4.0]);
        }
    }

    #[test]
    fn mttkrp_matches_reference_composition() {
        let t = random_tensor([4, 5, 3], 3);
        let f = [
            random_mat(4, 2, 4),
            random_mat(5, 2, 5),
            random_mat(3, 2, 6),
        ];
        for (mode, (lo, hi)) in Mode::ALL.into_iter().zip([(1, 2), (0, 2), (0, 1)]) {
            let fast = mttkrp(&t, &f[lo], &f[hi], mode).unwrap();
            let reference = unfold(&t, mode)
                .matmul(&khatri_rao(&f[lo], &f[hi]).unwrap())
                .unwrap();
            for (a, b) in fast.data().iter().zip(reference.data()) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn mttkrp_zero_and_mismatch() {
        let t = Tensor3::zeros([2, 3, 4]);
        let m = mttkrp(&t, &random_mat(2, 3, 1), &random_mat(4, 3, 2), Mode::Second).unwrap();
        assert!(m.data().iter().all(|&x| x == 0.0));
        assert!(mttkrp(&t, &random_mat(3, 3, 1), &random_mat(4, 3, 2), Mode::Second).is_err());
    }

    #[test]
    fn norms() {
        let t = Tensor3::from_vec([1, 2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(frob_norm(&t), 5.0);
        assert_eq!(rel_error(&t, &t).unwrap(), 0.0);
        assert_eq!(rel_error(&t, &Tensor3::zeros([1, 2, 1])).unwrap(), 1.0);
        let z = Tensor3::zeros([2, 2, 2]);
        assert_eq!(rel_error(&z, &z).unwrap(), 0.0);
        assert!(rel_error(&t, &z).is_err());
    }

    proptest! {
        #[test]
        fn fold_unfold_round_trip(n1 in 1usize..5, n2 in 1usize..5, n3 in 1usize..5, seed in any::<u64>()) {
            let t = random_tensor([n1, n2, n3], seed);
            let before = t.clone();
            for mode in Mode::ALL {
                let back = fold(&unfold(&t, mode), mode, t.dims()).unwrap();
                prop_assert_eq!(&back, &t);
            }
            prop_assert_eq!(t, before);
        }
    }
}
