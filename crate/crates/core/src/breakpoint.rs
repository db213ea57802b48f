//! Break dating by least-squares binary segmentation of `Theta_dot` or of the
//! normalized singular vectors, the per-unit sup-F test, and sequential
//! splitting for several breaks.
//!
//! A break index `s` counts pre-break periods: periods `1..=s` form the first
//! segment, `s+1..=T` the second.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factors::{refine, FactorSet};
use crate::ife::{fit_ife_hetero, sandwich, IfeConfig};
use crate::stk::Kernel;
use crate::linalg::{inv_spd, CoefSet, Mat, PanelData};
use crate::nnr::{estimate_rank, fit_tuned, DEFAULT_C_NU};

/// Default trimming fraction for the sup-F search.
pub const DEFAULT_EPSILON: f64 = 0.15;
/// Default per-unit sup-F cutoff (two regressors).
pub const DEFAULT_SUPF_CRITICAL: f64 = 15.37;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakMethod {
    SlopeMatrix,
    SingularVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakResult {
    pub t1_hat: usize,
    /// `profile[s - 2] = L(s)` for `s = 2..=T-1`.
    pub profile: Vec<f64>,
    pub method: BreakMethod,
    /// The profile range is below 1e-10: the data carry no break information.
    pub flat: bool,
}

impl BreakResult {
    pub fn objective_at(&self, s: usize) -> f64 {
        self.profile[s - 2]
    }
}

/// Within-segment sum of squares of every row of `rows`, for each split
/// `s = 2..=T-1`, summed over rows. Uses the identity
/// `within(s) = SS - T P_s^2 / (s (T - s))` with `P_s` the prefix sum of the
/// row-centered series.
fn within_profile(rows: &[&[f64]], t_len: usize) -> Vec<f64> {
    let mut prof = vec![0.0; t_len.saturating_sub(2)];
    for row in rows {
        let mean = row.iter().sum::<f64>() / t_len as f64;
        let ss: f64 = row.iter().map(|x| (x - mean) * (x - mean)).sum();
        let mut prefix = 0.0;
        for s in 1..t_len {
            prefix += row[s - 1] - mean;
            if s >= 2 {
                let sf = s as f64;
                let between = t_len as f64 * prefix * prefix / (sf * (t_len as f64 - sf));
                prof[s - 2] += (ss - between).max(0.0);
            }
        }
    }
    prof
}

/// `scale` bounds the rounding error of the profile (the uncentered sum of
/// squares under the same normalization).
fn argmin_smallest(profile: &[f64], scale: f64) -> usize {
    let min = profile.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = profile.iter().fold(scale, |a, b| a.max(b.abs()));
    // values within rounding of the minimum count as ties
    let pos = profile.iter().position(|&v| v <= min + 1e-12 * scale).unwrap_or(0);
    pos + 2
}

fn slope_rows(theta_dot: &CoefSet) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for th in &theta_dot.thetas()[1..] {
        for i in 0..th.nrows() {
            rows.push(th.row(i).iter().copied().collect());
        }
    }
    rows
}

/// `(1/(pNT)) sum_{j>=1} sum_i` of the two-segment within sum of squares at `s`.
pub fn break_objective(theta_dot: &CoefSet, s: usize) -> Result<f64> {
    let (n, t_len, p) = (theta_dot.n(), theta_dot.t_len(), theta_dot.p());
    if s < 2 || s + 1 > t_len {
        return Err(Error::Argument(format!("split {s} outside 2..={}", t_len.saturating_sub(1))));
    }
    if p == 0 {
        return Err(Error::Argument("break objective needs at least one slope block".into()));
    }
    let mut total = 0.0;
    for th in &theta_dot.thetas()[1..] {
        for i in 0..n {
            let row = th.row(i);
            let m1 = row.columns(0, s).mean();
            let m2 = row.columns(s, t_len - s).mean();
            total += row.columns(0, s).iter().map(|x| (x - m1).powi(2)).sum::<f64>();
            total += row.columns(s, t_len - s).iter().map(|x| (x - m2).powi(2)).sum::<f64>();
        }
    }
    Ok(total / (p * n * t_len) as f64)
}

pub fn estimate_break(theta_dot: &CoefSet) -> Result<BreakResult> {
    let (n, t_len, p) = (theta_dot.n(), theta_dot.t_len(), theta_dot.p());
    if t_len < 4 {
        return Err(Error::Argument(format!("need at least 4 periods, got {t_len}")));
    }
    if p == 0 {
        return Err(Error::Argument("break estimation needs at least one slope block".into()));
    }
    let rows = slope_rows(theta_dot);
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let norm = (p * n * t_len) as f64;
    let profile: Vec<f64> = within_profile(&refs, t_len).into_iter().map(|v| v / norm).collect();
    Ok(finish(profile, BreakMethod::SlopeMatrix, sum_sq(&refs) / norm))
}

fn sum_sq(rows: &[&[f64]]) -> f64 {
    rows.iter().flat_map(|r| r.iter()).map(|v| v * v).sum()
}

fn finish(profile: Vec<f64>, method: BreakMethod, scale: f64) -> BreakResult {
    let t1_hat = argmin_smallest(&profile, scale);
    let hi = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = profile.iter().copied().fold(f64::INFINITY, f64::min);
    BreakResult { t1_hat, flat: hi - lo < 1e-10, profile, method }
}

/// Stacked unit-length rows `v_dot_{t,j} / ||v_dot_{t,j}||` over slope blocks,
/// as a `T x sum r_j` matrix.
pub fn normalized_factor_rows(factors: &FactorSet) -> Result<Mat> {
    let blocks: Vec<(usize, &Mat)> = factors
        .pairs
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, p)| p.rank() > 0)
        .map(|(j, p)| (j, &p.v))
        .collect();
    if let Some((j, v)) = blocks.iter().find(|(_, v)| v.ncols() > 2) {
        return Err(Error::Domain(format!("block {j} has rank {}, the singular-vector method allows at most 2", v.ncols())));
    }
    if blocks.is_empty() {
        return Err(Error::Domain("no slope block has positive rank".into()));
    }
    let t_len = blocks[0].1.nrows();
    let width: usize = blocks.iter().map(|(_, v)| v.ncols()).sum();
    let mut out = Mat::zeros(t_len, width);
    for t in 0..t_len {
        let mut col = 0;
        for (j, v) in &blocks {
            let row = v.row(t);
            let norm = row.norm();
            if norm == 0.0 {
                return Err(Error::DegenerateFactor { t: t + 1, j: *j });
            }
            for k in 0..v.ncols() {
                out[(t, col)] = row[k] / norm;
                col += 1;
            }
        }
    }
    Ok(out)
}

/// Binary segmentation of the normalized singular-vector rows; the objective
/// is `(1/T)` times the two-segment within sum of squares.
pub fn estimate_break_sv(factors: &FactorSet) -> Result<BreakResult> {
    let v = normalized_factor_rows(factors)?;
    let t_len = v.nrows();
    if t_len < 4 {
        return Err(Error::Argument(format!("need at least 4 periods, got {t_len}")));
    }
    let cols: Vec<Vec<f64>> = (0..v.ncols()).map(|k| v.column(k).iter().copied().collect()).collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let profile = within_profile(&refs, t_len).into_iter().map(|x| x / t_len as f64).collect();
    Ok(finish(profile, BreakMethod::SingularVector, sum_sq(&refs) / t_len as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupFResult {
    pub f_nt: f64,
    pub per_unit: Vec<f64>,
    /// Break maximizing the statistic of the unit attaining `f_nt`.
    pub candidate_break: usize,
    /// Per-unit maximizing break.
    pub per_unit_break: Vec<usize>,
    pub epsilon: f64,
    pub critical_value: f64,
    pub reject: bool,
    /// Candidate breaks at which a regime fit failed and was skipped.
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupFConfig {
    pub r0: usize,
    pub epsilon: f64,
    pub critical_value: f64,
    pub kernel: Kernel,
    pub ife: IfeConfig,
}

impl SupFConfig {
    pub fn new(r0: usize) -> Self {
        Self {
            r0,
            epsilon: DEFAULT_EPSILON,
            critical_value: DEFAULT_SUPF_CRITICAL,
            kernel: Kernel::default(),
            ife: IfeConfig::default(),
        }
    }
}

/// Trimmed candidate set `ceil(eps T) ..= T - ceil(eps T)`.
pub fn trimmed_range(t_len: usize, epsilon: f64) -> std::ops::RangeInclusive<usize> {
    let lo = (epsilon * t_len as f64).ceil() as usize;
    lo..=t_len.saturating_sub(lo)
}

pub fn supf_test(panel: &PanelData, r0: usize, epsilon: f64, critical_value: f64) -> Result<SupFResult> {
    supf_test_with(panel, &SupFConfig { epsilon, critical_value, ..SupFConfig::new(r0) })
}

/// Per-unit sup over `T_1` of
/// `F_i(T_1) = ((T - 2p)/p) d' S^{-1} d`, `d` the difference of the regime
/// slopes and `S = T (V_1/T_1 + V_2/T_2)` the sum of the two regime sandwich
/// covariances on the `sqrt(T)` scale.
pub fn supf_test_with(panel: &PanelData, cfg: &SupFConfig) -> Result<SupFResult> {
    let (n, t_len, p) = (panel.n(), panel.t_len(), panel.p());
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 0.5) {
        return Err(Error::Argument(format!("epsilon must lie in (0, 0.5), got {}", cfg.epsilon)));
    }
    if p == 0 {
        return Err(Error::Argument("sup-F needs at least one regressor".into()));
    }
    let range = trimmed_range(t_len, cfg.epsilon);
    if *range.start() < p + 2 || range.is_empty() {
        return Err(Error::Argument(format!(
            "trimmed regimes too short: ceil(eps T) = {} < p + 2 = {}",
            range.start(),
            p + 2
        )));
    }
    let scale = (t_len as f64 - 2.0 * p as f64) / p as f64;
    let candidates: Vec<usize> = range.collect();
    // each candidate gives a length-N vector of statistics, or None if skipped
    let stats: Vec<Option<Vec<f64>>> = candidates
        .par_iter()
        .map(|&t1| supf_at(panel, t1, cfg).ok().map(|v| v.into_iter().map(|f| f * scale).collect()))
        .collect();
    let skipped = stats.iter().filter(|s| s.is_none()).count();
    if skipped == candidates.len() {
        return Err(Error::Numeric("every candidate break failed to fit".into()));
    }
    let mut per_unit = vec![f64::NEG_INFINITY; n];
    let mut per_unit_break = vec![0; n];
    for (&t1, st) in candidates.iter().zip(&stats) {
        if let Some(v) = st {
            for i in 0..n {
                if v[i] > per_unit[i] {
                    per_unit[i] = v[i];
                    per_unit_break[i] = t1;
                }
            }
        }
    }
    let best = (0..n).fold(0, |b, i| if per_unit[i] > per_unit[b] { i } else { b });
    let f_nt = per_unit[best];
    Ok(SupFResult {
        f_nt,
        candidate_break: per_unit_break[best],
        per_unit,
        per_unit_break,
        epsilon: cfg.epsilon,
        critical_value: cfg.critical_value,
        reject: f_nt > cfg.critical_value,
        skipped,
    })
}

/// `d' S^{-1} d` for every unit at one candidate break (without the `(T-2p)/p` factor).
fn supf_at(panel: &PanelData, t1: usize, cfg: &SupFConfig) -> Result<Vec<f64>> {
    let t_len = panel.t_len();
    let pre = panel.periods(0..t1);
    let post = panel.periods(t1..t_len);
    let f1 = fit_ife_hetero(&pre, cfg.r0, cfg.ife.tol, cfg.ife.max_iter)?;
    let f2 = fit_ife_hetero(&post, cfg.r0, cfg.ife.tol, cfg.ife.max_iter)?;
    let (t1f, t2f, tf) = (t1 as f64, (t_len - t1) as f64, t_len as f64);
    let mut out = Vec::with_capacity(panel.n());
    for i in 0..panel.n() {
        let v1 = sandwich(&pre, &f1, i, cfg.kernel)?;
        let v2 = sandwich(&post, &f2, i, cfg.kernel)?;
        let s = v1 * (tf / t1f) + v2 * (tf / t2f);
        let sinv = inv_spd(&s).ok_or(Error::Singular { kind: "sup-F covariance", index: i })?;
        let d = (f1.thetas.row(i) - f2.thetas.row(i)).transpose();
        out.push((d.transpose() * sinv * &d)[(0, 0)]);
    }
    Ok(out)
}

/// Ranks, refinement and break dating on one sample: the single-break path.
pub fn break_on_sample(panel: &PanelData) -> Result<BreakResult> {
    let fit = fit_tuned(panel, DEFAULT_C_NU, 1e-8, 5000)?;
    let ranks = fit
        .result
        .coefs
        .thetas()
        .iter()
        .zip(&fit.tuning.nu)
        .map(|(th, &nu)| estimate_rank(th, nu))
        .collect::<Result<Vec<_>>>()?;
    let refined = refine(panel, &fit.result, &ranks)?;
    estimate_break(&refined.theta_dot)
}

/// Sup-F on the full sample; on rejection date the break on that sample,
/// split, and recurse until no segment rejects or `max_b` breaks are found.
/// Returned indices are sorted and relative to the full sample.
pub fn sequential_breaks(
    panel: &PanelData,
    r0: usize,
    epsilon: f64,
    critical_value: f64,
    max_b: usize,
) -> Result<Vec<usize>> {
    let cfg = SupFConfig { epsilon, critical_value, ..SupFConfig::new(r0) };
    sequential_breaks_with(panel, &cfg, max_b, &break_on_sample)
}

/// [`sequential_breaks`] with a pluggable single-sample break estimator.
pub fn sequential_breaks_with(
    panel: &PanelData,
    cfg: &SupFConfig,
    max_b: usize,
    dater: &dyn Fn(&PanelData) -> Result<BreakResult>,
) -> Result<Vec<usize>> {
    let mut breaks = Vec::new();
    // work list of (offset, length) segments, processed in time order
    let mut stack = vec![(0usize, panel.t_len())];
    while let Some((off, len)) = stack.pop() {
        if breaks.len() >= max_b {
            break;
        }
        let trim = (cfg.epsilon * len as f64).ceil() as usize;
        if len < 2 * trim || len < 4 || trim < panel.p() + 2 {
            continue;
        }
        let seg = panel.periods(off..off + len);
        let test = supf_test_with(&seg, cfg)?;
        if !test.reject {
            continue;
        }
        let found = dater(&seg)?;
        let s = found.t1_hat;
        breaks.push(off + s);
        stack.push((off + s, len - s));
        stack.push((off, s));
    }
    breaks.sort_unstable();
    Ok(breaks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn piecewise(n: usize, t_len: usize, t1: usize) -> CoefSet {
        let th = Mat::from_fn(n, t_len, |i, t| if t < t1 { i as f64 + 1.0 } else { -(i as f64) - 0.5 });
        CoefSet::new(vec![Mat::zeros(n, t_len), th]).unwrap()
    }

    #[test]
    fn exact_piecewise_constant() {
        let c = piecewise(3, 10, 6);
        let b = estimate_break(&c).unwrap();
        assert_eq!(b.t1_hat, 6);
        assert!(b.objective_at(6).abs() < 1e-12);
        for s in 2..=9 {
            if s != 6 {
                assert!(b.objective_at(s) > 1e-6);
            }
        }
    }

    #[test]
    fn profile_matches_direct_objective() {
        let c = piecewise(4, 8, 3);
        let b = estimate_break(&c).unwrap();
        for s in 2..=7 {
            assert!((b.objective_at(s) - break_objective(&c, s).unwrap()).abs() < 1e-12);
        }
        assert!(break_objective(&c, 1).is_err());
        assert!(break_objective(&c, 8).is_err());
    }

    #[test]
    fn flat_profile_picks_two() {
        let th = Mat::from_fn(3, 9, |i, _| i as f64 * 0.3 + 0.1);
        let c = CoefSet::new(vec![Mat::zeros(3, 9), th]).unwrap();
        let b = estimate_break(&c).unwrap();
        assert_eq!(b.t1_hat, 2);
        assert!(b.flat);
    }

    #[test]
    fn trimming() {
        assert_eq!(trimmed_range(100, 0.15), 15..=85);
        assert_eq!(trimmed_range(20, 0.15), 3..=17);
    }
}
