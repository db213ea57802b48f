//! Factor extraction from the regularized estimates and the single row/column
//! least-squares refinement that yields `Theta_dot`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{composite_residual, lstsq_min_norm, solve_spd, svd_truncated, CoefSet, Mat, PanelData};
use crate::nnr::NnrResult;

/// `u` is `N x r`, `v` is `T x r`; `Theta = u v'`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub u: Mat,
    pub v: Mat,
}

impl FactorPair {
    pub fn empty(n: usize, t_len: usize) -> Self {
        Self { u: Mat::zeros(n, 0), v: Mat::zeros(t_len, 0) }
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn product(&self) -> Mat {
        &self.u * self.v.transpose()
    }
}

/// One pair per block, index 0 for the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    pub pairs: Vec<FactorPair>,
    pub ranks: Vec<usize>,
}

impl FactorSet {
    pub fn new(pairs: Vec<FactorPair>) -> Self {
        let ranks = pairs.iter().map(FactorPair::rank).collect();
        Self { pairs, ranks }
    }

    pub fn total_rank(&self) -> usize {
        self.ranks.iter().sum()
    }
}

/// Block coefficients from one least-squares pass. `blocks[j]` has one row per
/// unit (row pass) or period (column pass). Rank-deficient rows were solved by
/// minimum-norm least squares and are listed in `flagged`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageFit {
    pub blocks: Vec<Mat>,
    pub flagged: Vec<usize>,
}

/// `V = sqrt(T) * (leading right singular vectors of theta / sqrt(NT))`, `U = theta V / T`.
pub fn extract_factors(theta: &Mat, r: usize, n: usize, t_len: usize) -> Result<FactorPair> {
    if theta.shape() != (n, t_len) {
        return Err(Error::Dimension(format!("theta is {:?}, expected ({n}, {t_len})", theta.shape())));
    }
    let scaled = theta / ((n * t_len) as f64).sqrt();
    let svd = svd_truncated(&scaled, r)?;
    let v = svd.v * (t_len as f64).sqrt();
    let u = theta * &v / t_len as f64;
    Ok(FactorPair { u, v })
}

/// Regressor for block `j`: 1 for the intercept, `X_j` otherwise.
fn regressor(panel: &PanelData, j: usize, i: usize, t: usize) -> f64 {
    if j == 0 {
        1.0
    } else {
        panel.x()[j - 1][(i, t)]
    }
}

/// Solves one least-squares row; returns the solution and a rank-deficiency flag.
fn solve_ls(a: &Mat, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let gram = a.transpose() * a;
    let diag_max = gram.diagonal().amax();
    if diag_max > 0.0 {
        if let Some(chol) = gram.clone().cholesky() {
            let l = chol.l_dirty();
            let dmin = (0..l.nrows()).map(|k| l[(k, k)] * l[(k, k)]).fold(f64::INFINITY, f64::min);
            // Cholesky succeeds on nearly singular systems; guard on the pivots
            if dmin > diag_max * 1e-12 {
                let x = chol.solve(&(a.transpose() * b));
                return (x, false);
            }
        }
    }
    let (x, deficient) = lstsq_min_norm(a, b);
    (x, deficient || diag_max == 0.0)
}

fn split_blocks(sol: &[DVector<f64>], ranks: &[usize]) -> Vec<Mat> {
    let rows = sol.len();
    let mut out = Vec::with_capacity(ranks.len());
    let mut off = 0;
    for &r in ranks {
        out.push(Mat::from_fn(rows, r, |a, k| sol[a][off + k]));
        off += r;
    }
    out
}

/// Per unit: least squares of `Y_it` on `(v_{t,0}, v_{t,1} X_{1,it}, ..)`.
pub fn row_regressions(panel: &PanelData, v_set: &FactorSet) -> Result<StageFit> {
    check_blocks(panel, v_set.pairs.iter().map(|p| &p.v), panel.t_len(), "period")?;
    let ranks = &v_set.ranks;
    let width: usize = ranks.iter().sum();
    if width == 0 {
        return Err(Error::Argument("row regressions need at least one factor".into()));
    }
    let t_len = panel.t_len();
    let mut sols = Vec::with_capacity(panel.n());
    let mut flagged = Vec::new();
    for i in 0..panel.n() {
        let mut a = Mat::zeros(t_len, width);
        let mut col = 0;
        for (j, pair) in v_set.pairs.iter().enumerate() {
            for k in 0..pair.rank() {
                for t in 0..t_len {
                    a[(t, col)] = pair.v[(t, k)] * regressor(panel, j, i, t);
                }
                col += 1;
            }
        }
        let (x, bad) = solve_ls(&a, &panel.unit_outcome(i));
        if bad {
            flagged.push(i);
        }
        sols.push(x);
    }
    Ok(StageFit { blocks: split_blocks(&sols, ranks), flagged })
}

/// Per period: least squares of `Y_it` on `(u_{i,0}, u_{i,1} X_{1,it}, ..)`.
pub fn col_regressions(panel: &PanelData, u_set: &[Mat]) -> Result<StageFit> {
    check_blocks(panel, u_set.iter(), panel.n(), "unit")?;
    let ranks: Vec<usize> = u_set.iter().map(|u| u.ncols()).collect();
    let width: usize = ranks.iter().sum();
    if width == 0 {
        return Err(Error::Argument("column regressions need at least one factor".into()));
    }
    let n = panel.n();
    let mut sols = Vec::with_capacity(panel.t_len());
    let mut flagged = Vec::new();
    for t in 0..panel.t_len() {
        let mut a = Mat::zeros(n, width);
        let mut col = 0;
        for (j, u) in u_set.iter().enumerate() {
            for k in 0..u.ncols() {
                for i in 0..n {
                    a[(i, col)] = u[(i, k)] * regressor(panel, j, i, t);
                }
                col += 1;
            }
        }
        let (x, bad) = solve_ls(&a, &panel.y().column(t).into_owned());
        if bad {
            flagged.push(t);
        }
        sols.push(x);
    }
    Ok(StageFit { blocks: split_blocks(&sols, &ranks), flagged })
}

fn check_blocks<'a>(
    panel: &PanelData,
    blocks: impl ExactSizeIterator<Item = &'a Mat>,
    rows: usize,
    what: &str,
) -> Result<()> {
    if blocks.len() != panel.p() + 1 {
        return Err(Error::Dimension(format!("need {} factor blocks", panel.p() + 1)));
    }
    for (j, b) in blocks.enumerate() {
        if b.nrows() != rows {
            return Err(Error::Dimension(format!("block {j} has {} rows, expected one per {what}", b.nrows())));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub theta_dot: CoefSet,
    /// Refined pairs `(u_dot, v_dot)`.
    pub factors: FactorSet,
    /// Pairs from the truncated SVD, before the regressions.
    pub initial: FactorSet,
    pub flagged_units: Vec<usize>,
    pub flagged_periods: Vec<usize>,
}

/// Truncated-SVD factors, one row pass, one column pass, `Theta_dot = u_dot v_dot'`.
pub fn refine(panel: &PanelData, nnr: &NnrResult, ranks: &[usize]) -> Result<Refined> {
    refine_coefs(panel, &nnr.coefs, ranks)
}

/// [`refine`] from any coefficient set.
pub fn refine_coefs(panel: &PanelData, coefs: &CoefSet, ranks: &[usize]) -> Result<Refined> {
    let (n, t_len, p) = (panel.n(), panel.t_len(), panel.p());
    if coefs.p() != p || ranks.len() != p + 1 {
        return Err(Error::Dimension(format!("need {} coefficient matrices and ranks", p + 1)));
    }
    let pairs = coefs
        .thetas()
        .iter()
        .zip(ranks)
        .map(|(th, &r)| extract_factors(th, r, n, t_len))
        .collect::<Result<Vec<_>>>()?;
    let initial = FactorSet::new(pairs);
    if initial.total_rank() == 0 {
        return Ok(Refined {
            theta_dot: CoefSet::zeros(p, n, t_len),
            factors: initial.clone(),
            initial,
            flagged_units: Vec::new(),
            flagged_periods: Vec::new(),
        });
    }
    let rows = row_regressions(panel, &initial)?;
    let cols = col_regressions(panel, &rows.blocks)?;
    let pairs: Vec<FactorPair> = rows
        .blocks
        .into_iter()
        .zip(cols.blocks)
        .map(|(u, v)| FactorPair { u, v })
        .collect();
    let factors = FactorSet::new(pairs);
    let theta_dot = CoefSet::new(factors.pairs.iter().map(FactorPair::product).collect())?;
    Ok(Refined {
        theta_dot,
        factors,
        initial,
        flagged_units: rows.flagged,
        flagged_periods: cols.flagged,
    })
}

/// `sum_it (Y - Theta_0 - sum X_j .* Theta_j)^2`.
pub fn fit_objective(panel: &PanelData, coefs: &CoefSet) -> Result<f64> {
    Ok(composite_residual(panel, coefs)?.norm_squared())
}

/// Coefficient set from factor products.
pub fn products(set: &FactorSet) -> Result<CoefSet> {
    CoefSet::new(set.pairs.iter().map(FactorPair::product).collect())
}

/// Dense normal-equations solve, kept for cross-checks.
pub fn normal_equations(a: &Mat, b: &DVector<f64>) -> Option<DVector<f64>> {
    let rhs = Mat::from_column_slice(b.len(), 1, b.as_slice());
    solve_spd(&(a.transpose() * a), &(a.transpose() * rhs)).map(|x| x.column(0).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_matrix_factors() {
        let theta = Mat::from_element(4, 6, 0.7);
        let f = extract_factors(&theta, 1, 4, 6).unwrap();
        assert!((f.v.column(0).add_scalar(-1.0)).amax() < 1e-10);
        assert!((f.u.column(0).add_scalar(-0.7)).amax() < 1e-10);
        assert!(extract_factors(&theta, 5, 4, 6).is_err());
        let e = extract_factors(&theta, 0, 4, 6).unwrap();
        assert_eq!(e.product(), Mat::zeros(4, 6));
    }

    #[test]
    fn row_mean_on_constant_factor() {
        let y = Mat::from_fn(3, 5, |i, t| (i * 7 + t * t) as f64);
        let panel = PanelData::new(y.clone(), vec![]).unwrap();
        let set = FactorSet::new(vec![FactorPair { u: Mat::zeros(3, 1), v: Mat::from_element(5, 1, 1.0) }]);
        let fit = row_regressions(&panel, &set).unwrap();
        for i in 0..3 {
            assert!((fit.blocks[0][(i, 0)] - y.row(i).mean()).abs() < 1e-12);
        }
        assert!(fit.flagged.is_empty());
    }

    #[test]
    fn zero_regressor_is_flagged_not_fatal() {
        let y = Mat::from_fn(2, 4, |i, t| (i + t) as f64);
        let mut x = Mat::from_fn(2, 4, |i, t| ((i * 3 + t) % 5) as f64 - 2.0);
        x.row_mut(1).fill(0.0);
        let panel = PanelData::new(y, vec![x]).unwrap();
        let ones = Mat::from_element(4, 1, 1.0);
        let set = FactorSet::new(vec![
            FactorPair { u: Mat::zeros(2, 1), v: ones.clone() },
            FactorPair { u: Mat::zeros(2, 1), v: ones },
        ]);
        let fit = row_regressions(&panel, &set).unwrap();
        assert_eq!(fit.flagged, vec![1]);
        assert!(fit.blocks[1][(1, 0)].abs() < 1e-12);
    }
}
