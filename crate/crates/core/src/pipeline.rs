//! End-to-end estimation: regularized fit, ranks, refinement, break date,
//! sequential testing K-means per regime, and bias-corrected group slopes.

use crate::breakpoint::{estimate_break, estimate_break_sv, BreakMethod, BreakResult};
use crate::error::{Error, Result};
use crate::factors::{refine, Refined};
use crate::ife::{bias_and_variance, fit_ife_grouped, GroupFit};
use crate::linalg::PanelData;
use crate::nnr::{estimate_rank, fit_tuned, Tuning, DEFAULT_C_NU};
use crate::stk::{build_beta, stk_run, GroupStructure, Kernel, Regime, StkConfig, StkResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub c_nu: f64,
    pub nnr_tol: f64,
    pub nnr_max_iter: usize,
    /// Number of factors; estimated from the intercept block when `None`.
    pub r0: Option<usize>,
    pub stk: StkConfig,
    /// Kernel for the serial terms of the bias correction.
    pub bias_kernel: Kernel,
    /// Lagged outcome among the regressors: the homogeneity HAC uses no lags.
    pub dynamic: bool,
    pub bias_correction: bool,
    pub break_method: BreakMethod,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            c_nu: DEFAULT_C_NU,
            nnr_tol: 1e-8,
            nnr_max_iter: 5000,
            r0: None,
            stk: StkConfig::default(),
            bias_kernel: Kernel::default(),
            dynamic: false,
            bias_correction: true,
            break_method: BreakMethod::SlopeMatrix,
        }
    }
}

impl PipelineConfig {
    fn stk_config(&self) -> StkConfig {
        let mut stk = self.stk;
        if self.dynamic {
            stk.kernel = stk.kernel.for_dynamic();
        }
        stk
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeEstimate {
    pub regime: Regime,
    pub start: usize,
    pub len: usize,
    pub stk: StkResult,
    pub fit: GroupFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub tuning: Tuning,
    pub first_tuning: Tuning,
    pub nnr_iterations: usize,
    pub nnr_first_iterations: usize,
    pub nnr_converged: bool,
    pub ranks: Vec<usize>,
    pub r0: usize,
    pub refined: Refined,
    pub break_result: BreakResult,
    pub pre: RegimeEstimate,
    pub post: RegimeEstimate,
}

/// Steps 1 to 3: regularized fit, ranks, refinement and break date.
#[derive(Debug, Clone, PartialEq)]
pub struct Front {
    pub tuning: Tuning,
    pub first_tuning: Tuning,
    pub nnr_iterations: usize,
    pub nnr_first_iterations: usize,
    pub nnr_converged: bool,
    pub ranks: Vec<usize>,
    pub refined: Refined,
    pub break_result: BreakResult,
}

pub fn front(panel: &PanelData, cfg: &PipelineConfig) -> Result<Front> {
    let fit = fit_tuned(panel, cfg.c_nu, cfg.nnr_tol, cfg.nnr_max_iter)?;
    let ranks = fit
        .result
        .coefs
        .thetas()
        .iter()
        .zip(&fit.tuning.nu)
        .map(|(th, &nu)| estimate_rank(th, nu))
        .collect::<Result<Vec<_>>>()?;
    let refined = refine(panel, &fit.result, &ranks)?;
    let break_result = match cfg.break_method {
        BreakMethod::SlopeMatrix => estimate_break(&refined.theta_dot)?,
        BreakMethod::SingularVector => estimate_break_sv(&refined.factors)?,
    };
    Ok(Front {
        tuning: fit.tuning,
        first_tuning: fit.first,
        nnr_iterations: fit.result.iterations,
        nnr_first_iterations: fit.first_iterations,
        nnr_converged: fit.result.converged,
        ranks,
        refined,
        break_result,
    })
}

/// Grouped fit on one regime, with bias correction and variance unless disabled.
pub fn regime_fit(regime_panel: &PanelData, groups: &GroupStructure, r0: usize, cfg: &PipelineConfig) -> Result<GroupFit> {
    let fit = fit_ife_grouped(regime_panel, groups, r0, &cfg.stk.ife)?;
    let mut done = bias_and_variance(fit, regime_panel, cfg.bias_kernel)?;
    if !cfg.bias_correction {
        done.alphas_corrected = done.alphas.clone();
        done.bias.fill(0.0);
    }
    Ok(done)
}

pub fn estimate(panel: &PanelData, cfg: &PipelineConfig) -> Result<Estimate> {
    let fr = front(panel, cfg)?;
    let r0 = cfg.r0.unwrap_or(fr.ranks[0]);
    let t1 = fr.break_result.t1_hat;
    let t_len = panel.t_len();
    if t1 < 2 || t1 + 2 > t_len {
        return Err(Error::Domain(format!("estimated break {t1} leaves a regime shorter than 2 periods")));
    }
    let (pre_prof, post_prof) = build_beta(&fr.refined.theta_dot, t1)?;
    let stk_cfg = cfg.stk_config();
    let mut regimes = Vec::with_capacity(2);
    for (regime, prof, start, len) in [(Regime::Pre, pre_prof, 0, t1), (Regime::Post, post_prof, t1, t_len - t1)] {
        let sub = panel.periods(start..start + len);
        let stk = stk_run(&sub, &prof, r0, &stk_cfg)?;
        let fit = regime_fit(&sub, &stk.groups, r0, cfg)?;
        regimes.push(RegimeEstimate { regime, start, len, stk, fit });
    }
    let post = regimes.pop().expect("two regimes");
    let pre = regimes.pop().expect("two regimes");
    Ok(Estimate {
        tuning: fr.tuning,
        first_tuning: fr.first_tuning,
        nnr_iterations: fr.nnr_iterations,
        nnr_first_iterations: fr.nnr_first_iterations,
        nnr_converged: fr.nnr_converged,
        ranks: fr.ranks,
        r0,
        refined: fr.refined,
        break_result: fr.break_result,
        pre,
        post,
    })
}
