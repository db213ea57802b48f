//! The four subcommands. Each one computes everything first and then writes
//! its artifacts in one go.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use ifebreak::breakpoint::{
    break_on_sample, sequential_breaks_with, supf_test_with, BreakMethod, SupFConfig, DEFAULT_EPSILON,
    DEFAULT_SUPF_CRITICAL,
};
use ifebreak::mc::{generate, replicate, DgpSpec, ReplicateConfig};
use ifebreak::pipeline::{estimate, front, Estimate, PipelineConfig, RegimeEstimate};
use ifebreak::stk::{Bandwidth, Kernel, KernelKind};
use serde_json::Value;

use crate::config::{Auto, BreakArg, KernelArg, Options};
use crate::ingest::{ingest_csv, write_panel, Ingested};
use crate::output::{num, Artifacts, Report};

const DEFAULT_REPS: usize = 100;

fn kernel(opts: &Options) -> Result<Kernel> {
    let kind = match opts.kernel.unwrap_or(KernelArg::Bartlett) {
        KernelArg::Bartlett => KernelKind::Bartlett,
        KernelArg::None => return Ok(Kernel::none()),
    };
    let bandwidth = match opts.bandwidth.unwrap_or(Auto::Auto) {
        Auto::Auto => Bandwidth::Auto,
        Auto::Value(b) => Bandwidth::Fixed(b as f64),
    };
    Ok(Kernel { kind, bandwidth })
}

pub fn pipeline_config(opts: &Options) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    cfg.r0 = match opts.r0.unwrap_or(Auto::Auto) {
        Auto::Auto => None,
        Auto::Value(r) => Some(r),
    };
    cfg.stk.varsigma = match opts.varsigma.unwrap_or(Auto::Auto) {
        Auto::Auto => None,
        Auto::Value(v) if v > 0.0 && v < 1.0 => Some(v),
        Auto::Value(v) => bail!("--varsigma must lie in (0, 1), got {v}"),
    };
    let k = kernel(opts)?;
    cfg.stk.kernel = k;
    cfg.bias_kernel = k;
    cfg.stk.seed = opts.seed.unwrap_or(0);
    cfg.dynamic = opts.dynamic;
    cfg.bias_correction = !opts.no_bias_correction;
    cfg.break_method = match opts.break_method.unwrap_or(BreakArg::Slope) {
        BreakArg::Slope => BreakMethod::SlopeMatrix,
        BreakArg::Sv => BreakMethod::SingularVector,
    };
    Ok(cfg)
}

fn pool(opts: &Options) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers()?)
        .build()
        .map_err(|e| anyhow!("cannot start worker pool: {e}"))
}

fn regressor_name(j: usize) -> String {
    if j == 0 {
        "intercept".into()
    } else {
        format!("x{j}")
    }
}

fn regime_name(r: &RegimeEstimate) -> &'static str {
    match r.regime {
        ifebreak::stk::Regime::Pre => "pre",
        ifebreak::stk::Regime::Post => "post",
    }
}

fn estimate_artifacts(data: &Ingested, est: &Estimate, cfg: &PipelineConfig) -> Result<Artifacts> {
    let panel = &data.panel;
    let mut out = Artifacts::default();
    out.csv(
        "ranks.csv",
        &["block", "regressor", "rank", "nu"],
        est.ranks.iter().enumerate().map(|(j, r)| vec![j.to_string(), regressor_name(j), r.to_string(), est.tuning.nu[j].to_string()]),
    )?;
    let t1 = est.break_result.t1_hat;
    out.csv(
        "break.csv",
        &["s", "time", "objective", "selected"],
        est.break_result.profile.iter().enumerate().map(|(k, v)| {
            let s = k + 2;
            vec![s.to_string(), data.times[s - 1].clone(), v.to_string(), u8::from(s == t1).to_string()]
        }),
    )?;
    for reg in [&est.pre, &est.post] {
        out.csv(
            &format!("groups_{}.csv", regime_name(reg)),
            &["unit", "group"],
            reg.fit.labels.iter().enumerate().map(|(i, l)| vec![data.units[i].clone(), (l + 1).to_string()]),
        )?;
    }
    let mut rows = Vec::new();
    for reg in [&est.pre, &est.post] {
        let f = &reg.fit;
        for g in 0..f.k {
            for j in 0..panel.p() {
                rows.push(vec![
                    regime_name(reg).to_string(),
                    (g + 1).to_string(),
                    f.sizes[g].to_string(),
                    regressor_name(j + 1),
                    f.alphas[(g, j)].to_string(),
                    f.alphas_corrected[(g, j)].to_string(),
                    f.bias[(g, j)].to_string(),
                    f.se[(g, j)].to_string(),
                ]);
            }
        }
    }
    out.csv("slopes.csv", &["regime", "group", "size", "regressor", "alpha", "alpha_corrected", "bias", "se"], rows)?;

    let mut d = Report::default();
    d.set("n", panel.n()).set("t", panel.t_len()).set("p", panel.p());
    d.set("r0", est.r0).set("r0_estimated", cfg.r0.is_none());
    d.set("ranks", est.ranks.clone());
    d.nums("nu", &est.tuning.nu).num("sigma", est.tuning.sigma).set("tuning_degenerate", est.tuning.degenerate);
    d.nums("nu_first_pass", &est.first_tuning.nu);
    d.set("nnr_iterations_first_pass", est.nnr_first_iterations);
    d.set("nnr_iterations", est.nnr_iterations).set("nnr_converged", est.nnr_converged);
    d.set("flagged_units", est.refined.flagged_units.clone());
    d.set("flagged_periods", est.refined.flagged_periods.clone());
    d.set("t1_hat", t1).set("t1_hat_time", data.times[t1 - 1].clone());
    d.set("break_flat", est.break_result.flat);
    d.set(
        "break_method",
        match est.break_result.method {
            BreakMethod::SlopeMatrix => "slope",
            BreakMethod::SingularVector => "sv",
        },
    );
    d.set("seed", cfg.stk.seed).set("bias_correction", cfg.bias_correction).set("dynamic", cfg.dynamic);
    d.num("varsigma", cfg.stk.varsigma.unwrap_or(1.0 / (panel.n() as f64).powi(2)));
    for reg in [&est.pre, &est.post] {
        let name = regime_name(reg);
        let stk = &reg.stk;
        d.set(&format!("k_hat_{name}"), stk.k_hat);
        d.set(&format!("stk_converged_{name}"), stk.converged);
        d.nums(&format!("gamma_trace_{name}"), &stk.reports.iter().map(|r| r.gamma_m).collect::<Vec<_>>());
        d.nums(&format!("critical_trace_{name}"), &stk.reports.iter().map(|r| r.critical).collect::<Vec<_>>());
        d.set(&format!("ife_iterations_{name}"), reg.fit.iterations);
        d.set(&format!("ife_converged_{name}"), reg.fit.converged);
        d.num(&format!("ife_objective_{name}"), reg.fit.objective);
    }
    out.json("diagnostics.json", d.0)?;
    Ok(out)
}

pub fn run_estimate(opts: &Options) -> Result<Artifacts> {
    let data = ingest_csv(opts.input()?)?;
    let cfg = pipeline_config(opts)?;
    let est = pool(opts)?.install(|| estimate(&data.panel, &cfg)).context("estimation failed")?;
    estimate_artifacts(&data, &est, &cfg)
}

pub fn run_test(opts: &Options) -> Result<Artifacts> {
    let data = ingest_csv(opts.input()?)?;
    let panel = &data.panel;
    let pcfg = pipeline_config(opts)?;
    let pool = pool(opts)?;
    let r0 = match pcfg.r0 {
        Some(r) => r,
        None => pool.install(|| front(panel, &pcfg)).context("estimating the number of factors")?.ranks[0],
    };
    let cfg = SupFConfig {
        r0,
        epsilon: opts.epsilon.unwrap_or(DEFAULT_EPSILON),
        critical_value: opts.critical.unwrap_or(DEFAULT_SUPF_CRITICAL),
        kernel: kernel(opts)?,
        ..SupFConfig::new(r0)
    };
    let res = pool.install(|| supf_test_with(panel, &cfg)).context("sup-F test failed")?;
    let max_b = opts.max_breaks.unwrap_or(0);
    let breaks = if max_b > 0 {
        Some(pool.install(|| sequential_breaks_with(panel, &cfg, max_b, &break_on_sample)).context("sequential breaks failed")?)
    } else {
        None
    };
    let mut out = Artifacts::default();
    out.csv(
        "supf.csv",
        &["unit", "f_stat", "break"],
        (0..panel.n()).map(|i| vec![data.units[i].clone(), res.per_unit[i].to_string(), res.per_unit_break[i].to_string()]),
    )?;
    let mut r = Report::default();
    r.num("f_nt", res.f_nt).num("critical_value", res.critical_value).set("reject", res.reject);
    r.set("candidate_break", res.candidate_break).num("epsilon", res.epsilon).set("skipped", res.skipped);
    r.set("r0", r0).set("n", panel.n()).set("t", panel.t_len());
    if let Some(b) = breaks {
        r.set("breaks", b.clone());
        r.set("break_times", Value::Array(b.iter().map(|&s| Value::from(data.times[s - 1].clone())).collect()));
    }
    out.json("supf.json", r.0)?;
    Ok(out)
}

fn dgp_spec(opts: &Options) -> Result<DgpSpec> {
    let code = opts.dgp.as_deref().ok_or_else(|| anyhow!("--dgp is required"))?;
    let n = opts.n.ok_or_else(|| anyhow!("--n is required"))?;
    let t = opts.t.ok_or_else(|| anyhow!("--t is required"))?;
    Ok(DgpSpec::new(code, n, t, opts.seed.unwrap_or(0))?)
}

pub fn run_simulate(opts: &Options) -> Result<Artifacts> {
    let spec = dgp_spec(opts)?;
    let sim = generate(&spec)?;
    let units: Vec<String> = (1..=spec.n).map(|i| i.to_string()).collect();
    let times: Vec<String> = (1..=spec.t_len).map(|t| t.to_string()).collect();
    let mut out = Artifacts::default();
    out.add("panel.csv", write_panel(&sim.panel, &units, &times)?);
    let truth = &sim.truth;
    out.csv(
        "truth_groups.csv",
        &["unit", "group_pre", "group_post"],
        (0..spec.n).map(|i| vec![units[i].clone(), (truth.labels_pre[i] + 1).to_string(), (truth.labels_post[i] + 1).to_string()]),
    )?;
    let table = |m: &ifebreak::Mat| Value::Array((0..m.nrows()).map(|g| Value::Array(m.row(g).iter().map(|&v| num(v)).collect())).collect());
    let mut r = Report::default();
    r.set("dgp", spec.code()).set("n", spec.n).set("t", spec.t_len).set("seed", spec.seed);
    r.set("t1", truth.t1).set("k_pre", truth.k_pre).set("k_post", truth.k_post).set("ranks", truth.ranks.clone());
    r.set("alpha_pre", table(&truth.alpha_pre)).set("alpha_post", table(&truth.alpha_post));
    out.json("truth.json", r.0)?;
    Ok(out)
}

pub fn run_replicate(opts: &Options) -> Result<Artifacts> {
    let spec = dgp_spec(opts)?;
    let mut cfg = ReplicateConfig::new(opts.reps.unwrap_or(DEFAULT_REPS));
    cfg.workers = opts.workers()?;
    cfg.pipeline = pipeline_config(opts)?;
    let summary = replicate(&spec, &cfg)?;
    let mut out = Artifacts::default();
    let header = summary.csv_header();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv("summary.csv", &header, [summary.csv_row()])?;
    Ok(out)
}

/// Runs a command and writes its artifacts; returns the written paths.
pub fn execute(cmd: fn(&Options) -> Result<Artifacts>, opts: &Options) -> Result<Vec<PathBuf>> {
    let dir = opts.output_dir()?.to_path_buf();
    let artifacts = cmd(opts)?;
    artifacts.write_to(&dir)
}
