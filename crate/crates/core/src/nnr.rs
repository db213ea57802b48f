//! Nuclear-norm regularized panel regression solved by cyclic singular value
//! thresholding, plus the plug-in tuning rule and the SVT rank criterion.

use crate::error::{Error, Result};
use crate::linalg::{composite_residual, singular_values, svd_full, CoefSet, Mat, PanelData};

/// Constant in front of the tuning rate.
pub const DEFAULT_C_NU: f64 = 2.1;
/// Lower clamp for every tuning parameter.
pub const NU_FLOOR: f64 = 1e-8;
/// 1 / Phi^{-1}(3/4): MAD to standard deviation under normality.
const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnrConfig {
    pub nu: Vec<f64>,
    pub step: Step,
    pub tol: f64,
    pub max_iter: usize,
}

impl NnrConfig {
    pub fn new(nu: Vec<f64>) -> Self {
        Self { nu, step: Step::Auto, tol: 1e-8, max_iter: 5000 }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.nu.len() != p + 1 {
            return Err(Error::Argument(format!("need {} tuning parameters, got {}", p + 1, self.nu.len())));
        }
        if let Some(bad) = self.nu.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Argument(format!("tuning parameter must be positive, got {bad}")));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Argument("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Argument("max_iter must be at least 1".into()));
        }
        if let Step::Fixed(tau) = self.step {
            if !(tau > 0.0) || !tau.is_finite() {
                return Err(Error::Argument(format!("step must be positive, got {tau}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnrResult {
    pub coefs: CoefSet,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// `U diag(max(s - lambda, 0)) V'`: the prox of `lambda * ||.||_*`.
pub fn soft_threshold_svd(m: &Mat, lambda: f64) -> Result<Mat> {
    if !(lambda >= 0.0) {
        return Err(Error::Argument(format!("threshold must be nonnegative, got {lambda}")));
    }
    Ok(shrink(m, lambda))
}

fn shrink(m: &Mat, lambda: f64) -> Mat {
    let svd = svd_full(m);
    let keep = svd.s.iter().take_while(|&&s| s > lambda).count();
    let mut out = Mat::zeros(m.nrows(), m.ncols());
    for k in 0..keep {
        let w = svd.s[k] - lambda;
        out.ger(w, &svd.u.column(k), &svd.v.column(k), 1.0);
    }
    out
}

/// `(1/NT) ||Y - Theta_0 - sum X_j .* Theta_j||_F^2 + sum_j nu_j ||Theta_j||_*`.
pub fn nnr_objective(panel: &PanelData, coefs: &CoefSet, nu: &[f64]) -> Result<f64> {
    let r = composite_residual(panel, coefs)?;
    Ok(objective_from_residual(&r, coefs, nu))
}

fn objective_from_residual(r: &Mat, coefs: &CoefSet, nu: &[f64]) -> f64 {
    let nt = (r.nrows() * r.ncols()) as f64;
    let penalty: f64 = coefs
        .thetas()
        .iter()
        .zip(nu)
        .map(|(th, &v)| if v == 0.0 { 0.0 } else { v * singular_values(th).iter().sum::<f64>() })
        .sum();
    r.norm_squared() / nt + penalty
}

/// `0.5 / max_it (1 + sum_j X_{j,it}^2)`.
pub fn auto_step(panel: &PanelData) -> f64 {
    let mut worst: f64 = 1.0;
    for i in 0..panel.n() {
        for t in 0..panel.t_len() {
            let s: f64 = panel.x().iter().map(|x| x[(i, t)] * x[(i, t)]).sum();
            worst = worst.max(1.0 + s);
        }
    }
    0.5 / worst
}

pub fn solve_nnr(panel: &PanelData, cfg: &NnrConfig) -> Result<NnrResult> {
    solve_nnr_from(panel, cfg, None)
}

/// As [`solve_nnr`], starting from `init` instead of zero.
pub fn solve_nnr_from(panel: &PanelData, cfg: &NnrConfig, init: Option<&CoefSet>) -> Result<NnrResult> {
    let p = panel.p();
    cfg.validate(p)?;
    let (n, t) = (panel.n(), panel.t_len());
    let nt = (n * t) as f64;
    let tau = match cfg.step {
        Step::Auto => auto_step(panel),
        Step::Fixed(v) => v,
    };
    let mut coefs = match init {
        Some(c) => {
            if c.p() != p || c.n() != n || c.t_len() != t {
                return Err(Error::Dimension("warm start does not match the panel".into()));
            }
            c.clone()
        }
        None => CoefSet::zeros(p, n, t),
    };
    // r always holds Y - Theta_0 - sum X_j .* Theta_j for the current iterate
    let mut r = composite_residual(panel, &coefs)?;
    let mut trace = Vec::new();
    let mut prev = objective_from_residual(&r, &coefs, &cfg.nu);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        {
            let th = &mut coefs.thetas_mut()[0];
            let partial = &r + &*th;
            let new = shrink(&partial, cfg.nu[0] * nt / 2.0);
            r = partial - &new;
            *th = new;
        }
        for j in 1..=p {
            let xj = &panel.x()[j - 1];
            let th = &mut coefs.thetas_mut()[j];
            let grad_point = &*th + xj.component_mul(&r) * tau;
            let new = shrink(&grad_point, tau * cfg.nu[j] * nt / 2.0);
            r -= xj.component_mul(&(&new - &*th));
            *th = new;
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite iterate at sweep {iterations}")));
        }
        let obj = objective_from_residual(&r, &coefs, &cfg.nu);
        trace.push(obj);
        let rel = (prev - obj).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev = obj;
        if rel < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(NnrResult { coefs, objective_trace: trace, iterations, converged })
}

/// `C * max(sqrt N, sqrt(T ln T)) / (NT) * sigma`, floored at [`NU_FLOOR`].
pub fn tuning_value(n: usize, t_len: usize, sigma: f64, c_nu: f64) -> f64 {
    let (nf, tf) = (n as f64, t_len as f64);
    let rate = nf.sqrt().max((tf * tf.ln()).sqrt()) / (nf * tf);
    (c_nu * rate * sigma).max(NU_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tuning {
    pub nu: Vec<f64>,
    pub sigma: f64,
    /// Set when the scale estimate was zero and the floor was used.
    pub degenerate: bool,
}

/// First-pass tuning: robust scale of the two-way demeaned outcome, shared by all blocks.
pub fn select_tuning(panel: &PanelData) -> Tuning {
    select_tuning_with(panel, DEFAULT_C_NU)
}

pub fn select_tuning_with(panel: &PanelData, c_nu: f64) -> Tuning {
    tuning_from_sigma(panel, mad_sigma(&two_way_demean(panel.y())), c_nu)
}

/// Tuning from a supplied residual scale. Block `j` uses `sigma * rms(X_j)`
/// (the intercept block has unit regressor), the scale of `X_j .* E`.
pub fn tuning_from_sigma(panel: &PanelData, sigma: f64, c_nu: f64) -> Tuning {
    let degenerate = !(sigma > 0.0) || !sigma.is_finite();
    let sigma = if degenerate { 0.0 } else { sigma };
    let mut nu = vec![tuning_value(panel.n(), panel.t_len(), sigma, c_nu)];
    for xj in panel.x() {
        let rms = (xj.norm_squared() / xj.len() as f64).sqrt();
        nu.push(tuning_value(panel.n(), panel.t_len(), sigma * rms, c_nu));
    }
    Tuning { nu, sigma, degenerate }
}

pub fn two_way_demean(m: &Mat) -> Mat {
    let (n, t) = m.shape();
    let rows: Vec<f64> = (0..n).map(|i| m.row(i).mean()).collect();
    let cols: Vec<f64> = (0..t).map(|s| m.column(s).mean()).collect();
    let grand = m.mean();
    Mat::from_fn(n, t, |i, s| m[(i, s)] - rows[i] - cols[s] + grand)
}

/// `1.4826 * median |x - median x|`.
pub fn mad_sigma(m: &Mat) -> f64 {
    let mut v: Vec<f64> = m.iter().copied().collect();
    if v.is_empty() {
        return 0.0;
    }
    let med = median(&mut v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    MAD_SCALE * median(&mut dev)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Outcome of the two-pass tuned fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TunedFit {
    pub first: Tuning,
    pub tuning: Tuning,
    pub result: NnrResult,
    /// Sweeps spent in the first pass.
    pub first_iterations: usize,
}

/// Pass 1 tunes from the demeaned outcome and solves; pass 2 re-tunes from the
/// pass-1 residuals and re-solves once, warm-started.
pub fn fit_tuned(panel: &PanelData, c_nu: f64, tol: f64, max_iter: usize) -> Result<TunedFit> {
    let first = select_tuning_with(panel, c_nu);
    let mut cfg = NnrConfig { nu: first.nu.clone(), step: Step::Auto, tol, max_iter };
    let pass1 = solve_nnr(panel, &cfg)?;
    let resid = composite_residual(panel, &pass1.coefs)?;
    let tuning = tuning_from_sigma(panel, mad_sigma(&resid), c_nu);
    cfg.nu = tuning.nu.clone();
    let result = solve_nnr_from(panel, &cfg, Some(&pass1.coefs))?;
    Ok(TunedFit { first, tuning, result, first_iterations: pass1.iterations })
}

/// `#{i : s_i >= 0.5 sqrt(nu * ||theta||_op)}`; zero for the zero matrix.
pub fn estimate_rank(theta: &Mat, nu: f64) -> Result<usize> {
    if !(nu > 0.0) {
        return Err(Error::Argument(format!("tuning parameter must be positive, got {nu}")));
    }
    let s = singular_values(theta);
    let op = s.first().copied().unwrap_or(0.0);
    if op == 0.0 {
        return Ok(0);
    }
    Ok(rank_from_singular_values(&s, nu))
}

pub fn rank_from_singular_values(s: &[f64], nu: f64) -> usize {
    let op = s.first().copied().unwrap_or(0.0);
    if op == 0.0 {
        return 0;
    }
    let threshold = 0.5 * (nu * op).sqrt();
    s.iter().filter(|&&v| v >= threshold).count()
}
