//! Panel containers, matrix norms and the SVD convention shared by every estimator.
//!
//! All matrices are `nalgebra::DMatrix<f64>` with units on rows and periods on columns.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Outcome `y` and regressors `x[j]`, all `N x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    y: Mat,
    x: Vec<Mat>,
}

impl PanelData {
    /// Validated constructor: `N >= 2`, `T >= 4`, equal shapes, finite entries.
    pub fn new(y: Mat, x: Vec<Mat>) -> Result<Self> {
        if y.nrows() < 2 || y.ncols() < 4 {
            return Err(Error::Argument(format!(
                "panel must have at least 2 units and 4 periods, got {}x{}",
                y.nrows(),
                y.ncols()
            )));
        }
        Self::from_parts(y, x)
    }

    /// Like [`PanelData::new`] without the minimum-size rule. Regime and group
    /// slices of a valid panel go through here.
    pub fn from_parts(y: Mat, x: Vec<Mat>) -> Result<Self> {
        let shape = y.shape();
        for (j, xj) in x.iter().enumerate() {
            if xj.shape() != shape {
                return Err(Error::Dimension(format!(
                    "regressor {} is {:?}, outcome is {:?}",
                    j + 1,
                    xj.shape(),
                    shape
                )));
            }
        }
        check_finite(&y, "y")?;
        for (j, xj) in x.iter().enumerate() {
            check_finite(xj, &format!("x{}", j + 1))?;
        }
        Ok(Self { y, x })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn t_len(&self) -> usize {
        self.y.ncols()
    }

    pub fn p(&self) -> usize {
        self.x.len()
    }

    pub fn y(&self) -> &Mat {
        &self.y
    }

    pub fn x(&self) -> &[Mat] {
        &self.x
    }

    /// Sub-panel on the given units (in the given order) and period range.
    pub fn select(&self, units: &[usize], periods: Range<usize>) -> PanelData {
        let take = |m: &Mat| {
            Mat::from_fn(units.len(), periods.len(), |a, b| m[(units[a], periods.start + b)])
        };
        PanelData { y: take(&self.y), x: self.x.iter().map(take).collect() }
    }

    /// All units, a contiguous block of periods.
    pub fn periods(&self, periods: Range<usize>) -> PanelData {
        let t = periods.len();
        let take = |m: &Mat| m.columns(periods.start, t).into_owned();
        PanelData { y: take(&self.y), x: self.x.iter().map(take).collect() }
    }

    /// `T x p` regressor matrix of unit `i`.
    pub fn unit_design(&self, i: usize) -> Mat {
        Mat::from_fn(self.t_len(), self.p(), |t, j| self.x[j][(i, t)])
    }

    /// Outcome series of unit `i` as a length-`T` vector.
    pub fn unit_outcome(&self, i: usize) -> DVector<f64> {
        self.y.row(i).transpose()
    }
}

/// The `p + 1` coefficient matrices: index 0 is the intercept matrix, 1..=p the slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefSet {
    thetas: Vec<Mat>,
}

impl CoefSet {
    pub fn new(thetas: Vec<Mat>) -> Result<Self> {
        let Some(first) = thetas.first() else {
            return Err(Error::Argument("coefficient set needs at least the intercept".into()));
        };
        let shape = first.shape();
        if let Some(bad) = thetas.iter().position(|m| m.shape() != shape) {
            return Err(Error::Dimension(format!("theta {bad} has a different shape")));
        }
        Ok(Self { thetas })
    }

    pub fn zeros(p: usize, n: usize, t_len: usize) -> Self {
        Self { thetas: vec![Mat::zeros(n, t_len); p + 1] }
    }

    pub fn p(&self) -> usize {
        self.thetas.len() - 1
    }

    pub fn n(&self) -> usize {
        self.thetas[0].nrows()
    }

    pub fn t_len(&self) -> usize {
        self.thetas[0].ncols()
    }

    pub fn theta(&self, j: usize) -> &Mat {
        &self.thetas[j]
    }

    pub fn thetas(&self) -> &[Mat] {
        &self.thetas
    }

    pub fn thetas_mut(&mut self) -> &mut [Mat] {
        &mut self.thetas
    }

    pub fn into_inner(self) -> Vec<Mat> {
        self.thetas
    }

    fn check_against(&self, panel: &PanelData) -> Result<()> {
        if self.p() != panel.p() {
            return Err(Error::Dimension(format!(
                "{} coefficient matrices for {} regressors",
                self.thetas.len(),
                panel.p()
            )));
        }
        if self.thetas[0].shape() != panel.y().shape() {
            return Err(Error::Dimension(format!(
                "coefficients are {:?}, panel is {:?}",
                self.thetas[0].shape(),
                panel.y().shape()
            )));
        }
        Ok(())
    }
}

/// Leading singular triples. Columns of `u` follow the sign convention: the
/// entry of largest magnitude is nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdTriple {
    pub u: Mat,
    pub s: DVector<f64>,
    pub v: Mat,
}

impl SvdTriple {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> Mat {
        let mut us = self.u.clone();
        for (k, &sk) in self.s.iter().enumerate() {
            us.column_mut(k).scale_mut(sk);
        }
        &us * self.v.transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub frobenius: f64,
    pub operator: f64,
    pub nuclear: f64,
    pub max_abs: f64,
}

pub fn check_finite(m: &Mat, what: &str) -> Result<()> {
    match m.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(k) => Err(Error::Numeric(format!(
            "non-finite entry in {what} at ({}, {})",
            k % m.nrows().max(1),
            k / m.nrows().max(1)
        ))),
    }
}

fn to_faer(m: &Mat) -> faer::MatRef<'_, f64> {
    faer::mat::from_column_major_slice::<f64>(m.as_slice(), m.nrows(), m.ncols())
}

fn from_faer(m: faer::MatRef<'_, f64>) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m.read(i, j))
}

/// Thin SVD with all `min(N, T)` triples, singular values nonincreasing.
pub fn svd_full(m: &Mat) -> SvdTriple {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return SvdTriple {
            u: Mat::zeros(m.nrows(), 0),
            s: DVector::zeros(0),
            v: Mat::zeros(m.ncols(), 0),
        };
    }
    let svd = to_faer(m).thin_svd();
    let s_f = svd.s_diagonal();
    let mut order: Vec<usize> = (0..k).collect();
    // faer already sorts; a stable sort keeps its order among ties
    order.sort_by(|&a, &b| s_f.read(b).total_cmp(&s_f.read(a)));
    let u_f = from_faer(svd.u());
    let v_f = from_faer(svd.v());
    let mut u = Mat::zeros(m.nrows(), k);
    let mut v = Mat::zeros(m.ncols(), k);
    let mut s = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u_f.column(src));
        v.set_column(dst, &v_f.column(src));
        s[dst] = s_f.read(src).max(0.0);
    }
    apply_sign_convention(&mut u, &mut v);
    SvdTriple { u, s, v }
}

/// Flips column pairs so that the largest-magnitude entry of each `u` column is
/// nonnegative. The first index wins among equal magnitudes.
pub fn apply_sign_convention(u: &mut Mat, v: &mut Mat) {
    for k in 0..u.ncols() {
        let col = u.column(k);
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col.len() > 0 && col[best] < 0.0 {
            u.column_mut(k).neg_mut();
            if k < v.ncols() {
                v.column_mut(k).neg_mut();
            }
        }
    }
}

/// Leading `r` singular triples of `m`.
pub fn svd_truncated(m: &Mat, r: usize) -> Result<SvdTriple> {
    let k = m.nrows().min(m.ncols());
    if r > k {
        return Err(Error::Argument(format!("rank {r} exceeds min(N, T) = {k}")));
    }
    if r == 0 {
        return Ok(SvdTriple {
            u: Mat::zeros(m.nrows(), 0),
            s: DVector::zeros(0),
            v: Mat::zeros(m.ncols(), 0),
        });
    }
    let full = svd_full(m);
    Ok(SvdTriple {
        u: full.u.columns(0, r).into_owned(),
        s: full.s.rows(0, r).into_owned(),
        v: full.v.columns(0, r).into_owned(),
    })
}

/// Singular values only, nonincreasing.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.nrows().min(m.ncols()) == 0 {
        return Vec::new();
    }
    let mut s = to_faer(m).singular_values();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn norms(m: &Mat) -> Result<Norms> {
    check_finite(m, "matrix")?;
    let s = singular_values(m);
    Ok(Norms {
        frobenius: m.norm(),
        operator: s.first().copied().unwrap_or(0.0),
        nuclear: s.iter().sum(),
        max_abs: m.amax(),
    })
}

/// `Y - Theta_0 - sum_j X_j .* Theta_j`.
pub fn composite_residual(panel: &PanelData, coefs: &CoefSet) -> Result<Mat> {
    coefs.check_against(panel)?;
    let mut r = panel.y() - coefs.theta(0);
    for (xj, th) in panel.x().iter().zip(&coefs.thetas()[1..]) {
        r -= xj.component_mul(th);
    }
    Ok(r)
}

/// Minimum-norm least squares via SVD. Returns the solution and whether `a`
/// was numerically rank deficient.
pub fn lstsq_min_norm(a: &Mat, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let k = a.ncols();
    let svd = svd_full(a);
    let smax = svd.s.get(0).copied().unwrap_or(0.0);
    let tol = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    let utb = svd.u.transpose() * b;
    let mut x = DVector::zeros(k);
    let mut deficient = svd.s.len() < k;
    for (c, &sc) in svd.s.iter().enumerate() {
        if sc > tol && sc > 0.0 {
            x += svd.v.column(c) * (utb[c] / sc);
        } else {
            deficient = true;
        }
    }
    (x, deficient)
}

/// Solves `a x = b` for a symmetric positive definite `a` by Cholesky.
pub fn solve_spd(a: &Mat, b: &Mat) -> Option<Mat> {
    let chol = a.clone().cholesky()?;
    let x = chol.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Inverse of a symmetric positive definite matrix.
pub fn inv_spd(a: &Mat) -> Option<Mat> {
    solve_spd(a, &Mat::identity(a.nrows(), a.nrows()))
}

/// `I - A (A'A)^{-1} A'` for a tall `A` with full column rank. `None` if `A'A` is singular.
pub fn annihilator(a: &Mat) -> Option<Mat> {
    let n = a.nrows();
    if a.ncols() == 0 {
        return Some(Mat::identity(n, n));
    }
    let gram = a.transpose() * a;
    let inv = inv_spd(&gram)?;
    Some(Mat::identity(n, n) - a * inv * a.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: u64, n: usize, m: usize) -> Mat {
        let mut s = seed;
        Mat::from_fn(n, m, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn sign_convention_and_orthogonality() {
        let m = lcg(3, 7, 5);
        let t = svd_full(&m);
        let eye = Mat::identity(5, 5);
        assert!((t.u.transpose() * &t.u - &eye).amax() < 1e-10);
        assert!((t.v.transpose() * &t.v - &eye).amax() < 1e-10);
        for k in 0..5 {
            let c = t.u.column(k);
            let imax = c.iamax();
            assert!(c[imax] >= 0.0);
        }
        assert!(t.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn wide_matrix_svd() {
        let m = lcg(9, 3, 8);
        let t = svd_full(&m);
        assert_eq!(t.u.shape(), (3, 3));
        assert_eq!(t.v.shape(), (8, 3));
        assert!((t.reconstruct() - &m).norm() < 1e-10);
    }

    #[test]
    fn lstsq_matches_normal_equations_when_full_rank() {
        let a = lcg(5, 10, 3);
        let b = lcg(6, 10, 1).column(0).into_owned();
        let (x, deficient) = lstsq_min_norm(&a, &b);
        assert!(!deficient);
        let atb = Mat::from_column_slice(3, 1, (a.transpose() * &b).as_slice());
        let xt = solve_spd(&(a.transpose() * &a), &atb).unwrap();
        assert!((x - xt.column(0)).amax() < 1e-10);
    }

    #[test]
    fn lstsq_flags_collinear_design() {
        let mut a = lcg(8, 6, 2);
        let c0 = a.column(0).into_owned();
        a.set_column(1, &(c0 * 2.0));
        let b = lcg(2, 6, 1).column(0).into_owned();
        let (x, deficient) = lstsq_min_norm(&a, &b);
        assert!(deficient);
        // min-norm solution lies in the row space: x2 = 2 x1
        assert!((x[1] - 2.0 * x[0]).abs() < 1e-10);
    }

    #[test]
    fn panel_size_rules() {
        assert!(PanelData::new(Mat::zeros(1, 5), vec![]).is_err());
        assert!(PanelData::new(Mat::zeros(2, 3), vec![]).is_err());
        assert!(PanelData::new(Mat::zeros(2, 4), vec![Mat::zeros(2, 5)]).is_err());
        let mut y = Mat::zeros(2, 4);
        y[(1, 2)] = f64::NAN;
        assert!(matches!(PanelData::new(y, vec![]), Err(Error::Numeric(_))));
        assert!(PanelData::from_parts(Mat::zeros(1, 2), vec![]).is_ok());
    }
}
