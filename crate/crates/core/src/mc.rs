//! Simulation designs and the replication harness.
//!
//! Every design has one factor, two regressors and a single break `t1`
//! (the last pre-break period, 1-based). Variants:
//! * `v1`: same two groups before and after, slopes scaled by 1/2 after the break;
//! * `v2`: same slope values, memberships redrawn after the break;
//! * `v3`: two groups before, three after (shares 0.4/0.3/0.3).
//!
//! Families: `dgp1` iid N(0,1) errors, `dgp2` heteroskedastic, `dgp3`
//! heteroskedastic AR(0.2), `dgp4` dynamic panel with `x1 = y_{t-1}`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ife::GroupFit;
use crate::linalg::{singular_values, CoefSet, Mat, PanelData};
use crate::pipeline::{estimate, regime_fit, PipelineConfig};
use crate::stk::{build_beta, kmeans_with_init, same_partition, GroupStructure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Dgp1,
    Dgp2,
    Dgp3,
    Dgp4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    V1,
    V2,
    V3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DgpSpec {
    pub family: Family,
    pub variant: Variant,
    pub n: usize,
    pub t_len: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(code: &str, n: usize, t_len: usize, seed: u64) -> Result<Self> {
        let (family, variant) = parse_code(code)?;
        let spec = Self { family, variant, n, t_len, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn code(&self) -> String {
        let f = match self.family {
            Family::Dgp1 => 1,
            Family::Dgp2 => 2,
            Family::Dgp3 => 3,
            Family::Dgp4 => 4,
        };
        let v = match self.variant {
            Variant::V1 => 1,
            Variant::V2 => 2,
            Variant::V3 => 3,
        };
        format!("{f}.{v}")
    }

    pub fn validate(&self) -> Result<()> {
        // three post-break groups need at least one unit each
        if self.n < 4 {
            return Err(Error::Argument(format!("need at least 4 units, got {}", self.n)));
        }
        if self.t_len < 8 {
            return Err(Error::Argument(format!("need at least 8 periods, got {}", self.t_len)));
        }
        Ok(())
    }
}

impl fmt::Display for DgpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DGP {} (N={}, T={}, seed={})", self.code(), self.n, self.t_len, self.seed)
    }
}

fn parse_code(code: &str) -> Result<(Family, Variant)> {
    let bad = || Error::Argument(format!("unknown design '{code}', expected e.g. 1.1 or 4.3"));
    let (a, b) = code.trim().split_once('.').ok_or_else(bad)?;
    let family = match a {
        "1" => Family::Dgp1,
        "2" => Family::Dgp2,
        "3" => Family::Dgp3,
        "4" => Family::Dgp4,
        _ => return Err(bad()),
    };
    let variant = match b {
        "1" => Variant::V1,
        "2" => Variant::V2,
        "3" => Variant::V3,
        _ => return Err(bad()),
    };
    Ok((family, variant))
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_code(&format!("{s}.1")).map(|(f, _)| f)
    }
}

/// True break, memberships (0-based labels), slope tables and ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub t1: usize,
    pub k_pre: usize,
    pub k_post: usize,
    pub labels_pre: Vec<usize>,
    pub labels_post: Vec<usize>,
    /// `k_pre x p`.
    pub alpha_pre: Mat,
    /// `k_post x p`.
    pub alpha_post: Mat,
    /// `r_0, r_1, .., r_p`.
    pub ranks: Vec<usize>,
}

/// A generated panel with everything needed to audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub spec: DgpSpec,
    pub panel: PanelData,
    pub truth: GroundTruth,
    /// True coefficient matrices; index 0 holds the factor component `lambda f'`.
    pub coefs: CoefSet,
    pub loadings: DVector<f64>,
    pub factors: DVector<f64>,
    pub errors: Mat,
    /// Initial outcome for the dynamic design.
    pub y0: Option<DVector<f64>>,
}

/// Slope matrices `Theta_1..Theta_p` built from the truth tables; index 0 is zero.
pub fn theta_from_groups(truth: &GroundTruth, n: usize, t_len: usize) -> CoefSet {
    let p = truth.alpha_pre.ncols();
    let mut thetas = vec![Mat::zeros(n, t_len)];
    for j in 0..p {
        thetas.push(Mat::from_fn(n, t_len, |i, t| {
            if t < truth.t1 {
                truth.alpha_pre[(truth.labels_pre[i], j)]
            } else {
                truth.alpha_post[(truth.labels_post[i], j)]
            }
        }));
    }
    CoefSet::new(thetas).expect("equal shapes by construction")
}

/// Numerical rank with a relative tolerance.
pub fn numerical_rank(m: &Mat) -> usize {
    let s = singular_values(m);
    let top = s.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > top * 1e-9).count()
}

/// `(alpha_pre, alpha_post)` for a design; columns are the two regressors.
pub fn slope_tables(family: Family, variant: Variant) -> (Mat, Mat) {
    let first = if family == Family::Dgp4 { [0.1, 0.7] } else { [0.1, 0.9] };
    let second = [0.1, 0.9];
    let pre = Mat::from_row_slice(2, 2, &[first[0], second[0], first[1], second[1]]);
    match variant {
        Variant::V1 => (pre.clone(), pre * 0.5),
        Variant::V2 => (pre.clone(), pre),
        Variant::V3 => {
            let mid1 = if family == Family::Dgp4 { 0.4 } else { 0.5 };
            let post = Mat::from_row_slice(
                3,
                2,
                &[first[0], second[0], mid1, 0.5, first[1], second[1]],
            );
            (pre, post)
        }
    }
}

/// Group sizes `floor(share * n)` with the remainder added to the last group.
pub fn group_sizes(shares: &[f64], n: usize) -> Vec<usize> {
    let mut sizes: Vec<usize> = shares.iter().map(|s| (s * n as f64).floor() as usize).collect();
    let used: usize = sizes.iter().sum();
    *sizes.last_mut().expect("at least one group") += n - used;
    sizes
}

fn draw_labels(rng: &mut ChaCha8Rng, shares: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut labels = vec![0; n];
    let mut pos = 0;
    for (k, size) in group_sizes(shares, n).into_iter().enumerate() {
        for &i in &idx[pos..pos + size] {
            labels[i] = k;
        }
        pos += size;
    }
    labels
}

/// Generator for replication `stream` under master `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn generate(spec: &DgpSpec) -> Result<Simulated> {
    generate_with(spec, &mut rng_for(spec.seed, 0))
}

pub fn generate_with(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> Result<Simulated> {
    spec.validate()?;
    let (n, t_len) = (spec.n, spec.t_len);
    let lo = (0.4 * t_len as f64).floor() as usize;
    let hi = (0.6 * t_len as f64).ceil() as usize;
    let t1 = rng.gen_range(lo..=hi);

    let labels_pre = draw_labels(rng, &[0.5, 0.5], n);
    let labels_post = match spec.variant {
        Variant::V1 => labels_pre.clone(),
        Variant::V2 => draw_labels(rng, &[0.5, 0.5], n),
        Variant::V3 => draw_labels(rng, &[0.4, 0.3, 0.3], n),
    };
    let (alpha_pre, alpha_post) = slope_tables(spec.family, spec.variant);
    let mut truth = GroundTruth {
        t1,
        k_pre: alpha_pre.nrows(),
        k_post: alpha_post.nrows(),
        labels_pre,
        labels_post,
        alpha_pre,
        alpha_post,
        ranks: Vec::new(),
    };

    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let loadings = DVector::from_fn(n, |_, _| normal(rng));
    let factors = DVector::from_fn(t_len, |_, _| normal(rng));
    let unif = Uniform::new(-2.0, 2.0);
    // draw row-major so the stream layout does not depend on storage order
    let draw_matrix = |rng: &mut ChaCha8Rng, f: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| {
        let mut m = Mat::zeros(n, t_len);
        for i in 0..n {
            for t in 0..t_len {
                m[(i, t)] = f(rng);
            }
        }
        m
    };
    let x1_draw = draw_matrix(rng, &mut |r| unif.sample(r));
    let x2 = draw_matrix(rng, &mut |r| unif.sample(r));
    let errors = match spec.family {
        Family::Dgp1 => draw_matrix(rng, &mut |r| normal(r)),
        Family::Dgp2 => {
            let var = Uniform::new(0.5, 1.0);
            draw_matrix(rng, &mut |r| {
                let s2: f64 = var.sample(r);
                s2.sqrt() * normal(r)
            })
        }
        Family::Dgp3 => {
            let var = Uniform::new(0.5, 1.0);
            let innov = draw_matrix(rng, &mut |r| {
                let s2: f64 = var.sample(r);
                s2.sqrt() * normal(r)
            });
            let mut e = Mat::zeros(n, t_len);
            for i in 0..n {
                let mut prev = 0.0;
                for t in 0..t_len {
                    prev = 0.2 * prev + innov[(i, t)];
                    e[(i, t)] = prev;
                }
            }
            e
        }
        Family::Dgp4 => draw_matrix(rng, &mut |r| 0.5f64.sqrt() * normal(r)),
    };
    let y0 = (spec.family == Family::Dgp4).then(|| DVector::from_fn(n, |_, _| normal(rng)));

    let slopes = theta_from_groups(&truth, n, t_len);
    let common = &loadings * factors.transpose();
    let (y, x1) = match &y0 {
        None => {
            let y = &common
                + x1_draw.component_mul(slopes.theta(1))
                + x2.component_mul(slopes.theta(2))
                + &errors;
            (y, x1_draw)
        }
        Some(y0) => dynamic_outcome(&common, slopes.theta(1), slopes.theta(2), &x2, &errors, y0),
    };
    let mut thetas = slopes.into_inner();
    thetas[0] = common;
    truth.ranks = thetas.iter().map(numerical_rank).collect();
    let coefs = CoefSet::new(thetas)?;
    let panel = PanelData::new(y, vec![x1, x2])?;
    Ok(Simulated { spec: *spec, panel, truth, coefs, loadings, factors, errors, y0 })
}

/// Runs the autoregressive recursion; returns `(Y, lagged Y)`.
pub fn dynamic_outcome(
    common: &Mat,
    theta1: &Mat,
    theta2: &Mat,
    x2: &Mat,
    errors: &Mat,
    y0: &DVector<f64>,
) -> (Mat, Mat) {
    let (n, t_len) = common.shape();
    let mut y = Mat::zeros(n, t_len);
    let mut lag = Mat::zeros(n, t_len);
    for i in 0..n {
        let mut prev = y0[i];
        for t in 0..t_len {
            lag[(i, t)] = prev;
            prev = common[(i, t)] + theta1[(i, t)] * prev + theta2[(i, t)] * x2[(i, t)] + errors[(i, t)];
            y[(i, t)] = prev;
        }
    }
    (y, lag)
}

/// Recomputes the dynamic outcome from stored shocks.
pub fn rebuild_dynamic(sim: &Simulated) -> Option<Mat> {
    let y0 = sim.y0.as_ref()?;
    let (y, _) = dynamic_outcome(
        sim.coefs.theta(0),
        sim.coefs.theta(1),
        sim.coefs.theta(2),
        &sim.panel.x()[1],
        &sim.errors,
        y0,
    );
    Some(y)
}

/// Indicators from one replication.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RepRecord {
    pub failed: bool,
    pub rank_correct: Vec<bool>,
    pub break_correct: bool,
    /// Exact partition recovery with the true number of groups imposed.
    pub member_oracle_k: [bool; 2],
    /// Exact partition recovery with the estimated number of groups.
    pub member_feasible: [bool; 2],
    pub k_hat: [usize; 2],
    pub k_correct: [bool; 2],
    /// Mean over groups and regressors of the bias-corrected estimation error,
    /// with true break and groups.
    pub oracle_error: [f64; 2],
    /// Fraction of group-regressor intervals covering the truth, true break and groups.
    pub oracle_cover: [f64; 2],
    /// Same with estimated break and groups; `None` when the group count is wrong.
    pub feasible_error: [Option<f64>; 2],
    pub feasible_cover: [Option<f64>; 2],
}

/// Which stages a replication runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    /// Break, clustering and feasible slopes.
    pub pipeline: bool,
    /// Grouped fits with the true break and memberships.
    pub oracle: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self { pipeline: true, oracle: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateConfig {
    pub reps: usize,
    pub workers: usize,
    pub pipeline: PipelineConfig,
    pub stages: Stages,
    /// Impose the true number of factors instead of the estimated one.
    pub true_r0: bool,
}

impl ReplicateConfig {
    pub fn new(reps: usize) -> Self {
        Self { reps, workers: 1, pipeline: PipelineConfig::default(), stages: Stages::default(), true_r0: false }
    }
}

/// Aggregated frequencies over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub dgp: String,
    pub n: usize,
    pub t_len: usize,
    pub reps: usize,
    pub failures: usize,
    pub rank_freq: Vec<f64>,
    pub break_freq: f64,
    pub member_oracle_k: [f64; 2],
    pub member_feasible: [f64; 2],
    pub k_freq: [f64; 2],
    /// Frequencies of an estimated group count of 1, 2, 3, 4 and 5 or more.
    pub k_dist: [[f64; 5]; 2],
    pub oracle_bias: [f64; 2],
    pub oracle_coverage: [f64; 2],
    pub feasible_bias: [f64; 2],
    pub feasible_coverage: [f64; 2],
}

fn coverage(est: &GroupFit, truth: &Mat, map: &[usize]) -> (f64, f64) {
    let (mut err, mut cover, mut cnt) = (0.0, 0.0, 0.0);
    for g in 0..est.k {
        for j in 0..truth.ncols() {
            let a = truth[(map[g], j)];
            let d = est.alphas_corrected[(g, j)] - a;
            err += d;
            if d.abs() <= 1.959963984540054 * est.se[(g, j)] {
                cover += 1.0;
            }
            cnt += 1.0;
        }
    }
    (err / cnt, cover / cnt)
}

/// True group of the majority of each estimated group's members.
fn majority_map(est: &[usize], k: usize, truth: &[usize], k_true: usize) -> Vec<usize> {
    (0..k)
        .map(|g| {
            let mut counts = vec![0usize; k_true];
            for (e, t) in est.iter().zip(truth) {
                if *e == g {
                    counts[*t] += 1;
                }
            }
            (0..k_true).fold(0, |b, c| if counts[c] > counts[b] { c } else { b })
        })
        .collect()
}

/// One replication; errors are reported through `failed`.
pub fn run_replication(template: &DgpSpec, index: usize, cfg: &ReplicateConfig) -> RepRecord {
    run_replication_inner(template, index, cfg).unwrap_or_else(|_| RepRecord { failed: true, ..RepRecord::default() })
}

fn run_replication_inner(template: &DgpSpec, index: usize, cfg: &ReplicateConfig) -> Result<RepRecord> {
    let sim = generate_with(template, &mut rng_for(template.seed, index as u64))?;
    let truth = &sim.truth;
    if let Some(j) = truth.ranks.iter().skip(1).position(|&r| r > 2) {
        return Err(Error::Domain(format!("slope matrix {} has rank {} > 2", j + 1, truth.ranks[j + 1])));
    }
    let panel = &sim.panel;
    let t_len = panel.t_len();
    let mut pcfg = cfg.pipeline;
    pcfg.stk.seed = template.seed.wrapping_add(index as u64);
    if cfg.true_r0 {
        pcfg.r0 = Some(truth.ranks[0]);
    }
    let mut rec = RepRecord::default();
    let true_labels = [&truth.labels_pre, &truth.labels_post];
    let true_alpha = [&truth.alpha_pre, &truth.alpha_post];
    let true_k = [truth.k_pre, truth.k_post];
    if cfg.stages.pipeline {
        let est = estimate(panel, &pcfg)?;
        rec.rank_correct = est.ranks.iter().zip(&truth.ranks).map(|(a, b)| a == b).collect();
        rec.break_correct = est.break_result.t1_hat == truth.t1;
        let (pre_prof, post_prof) = build_beta(&est.refined.theta_dot, est.break_result.t1_hat)?;
        for (l, (reg, prof)) in [(&est.pre, pre_prof), (&est.post, post_prof)].into_iter().enumerate() {
            let oracle_k = kmeans_with_init(&prof.betas, true_k[l], pcfg.stk.restarts, pcfg.stk.seed, None)?;
            rec.member_oracle_k[l] = same_partition(&oracle_k.labels, true_labels[l]);
            rec.k_hat[l] = reg.stk.k_hat;
            rec.k_correct[l] = reg.stk.k_hat == true_k[l];
            rec.member_feasible[l] = rec.k_correct[l] && same_partition(&reg.stk.groups.labels, true_labels[l]);
            if rec.k_correct[l] {
                let map = majority_map(&reg.fit.labels, reg.fit.k, true_labels[l], true_k[l]);
                let (e, c) = coverage(&reg.fit, true_alpha[l], &map);
                rec.feasible_error[l] = Some(e);
                rec.feasible_cover[l] = Some(c);
            }
        }
    }
    if cfg.stages.oracle {
        let r0 = pcfg.r0.unwrap_or(truth.ranks[0]);
        for (l, range) in [(0, 0..truth.t1), (1, truth.t1..t_len)] {
            let sub = panel.periods(range);
            let groups = GroupStructure::from_labels(true_labels[l].clone())?;
            let fit = regime_fit(&sub, &groups, r0, &pcfg)?;
            let map: Vec<usize> = (0..fit.k).collect();
            let (e, c) = coverage(&fit, true_alpha[l], &map);
            rec.oracle_error[l] = e;
            rec.oracle_cover[l] = c;
        }
    }
    Ok(rec)
}

/// Runs `cfg.reps` replications of `template`; replication `r` draws from
/// stream `r` of the master seed, so results do not depend on `workers`.
pub fn replicate(template: &DgpSpec, cfg: &ReplicateConfig) -> Result<Summary> {
    if cfg.reps == 0 {
        return Err(Error::Argument("reps must be at least 1".into()));
    }
    template.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    let records: Vec<RepRecord> =
        pool.install(|| (0..cfg.reps).into_par_iter().map(|r| run_replication(template, r, cfg)).collect());
    Ok(summarize(template, &records))
}

pub fn summarize(template: &DgpSpec, records: &[RepRecord]) -> Summary {
    let ok: Vec<&RepRecord> = records.iter().filter(|r| !r.failed).collect();
    // failed replications count as incorrect in frequencies and are left out of averages
    let total = records.len().max(1) as f64;
    let denom = ok.len().max(1) as f64;
    let freq = |f: &dyn Fn(&RepRecord) -> bool| ok.iter().filter(|r| f(r)).count() as f64 / total;
    let mean = |f: &dyn Fn(&RepRecord) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / denom;
    let width = ok.iter().map(|r| r.rank_correct.len()).max().unwrap_or(0);
    let rank_freq = (0..width).map(|j| freq(&|r| r.rank_correct.get(j).copied().unwrap_or(false))).collect();
    let opt_mean = |f: &dyn Fn(&RepRecord) -> Option<f64>| {
        let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let mut k_dist = [[0.0; 5]; 2];
    for (l, dist) in k_dist.iter_mut().enumerate() {
        for r in &ok {
            let b = r.k_hat[l].clamp(1, 5) - 1;
            dist[b] += 1.0 / total;
        }
    }
    Summary {
        dgp: template.code(),
        n: template.n,
        t_len: template.t_len,
        reps: records.len(),
        failures: records.len() - ok.len(),
        rank_freq,
        break_freq: freq(&|r| r.break_correct),
        member_oracle_k: [freq(&|r| r.member_oracle_k[0]), freq(&|r| r.member_oracle_k[1])],
        member_feasible: [freq(&|r| r.member_feasible[0]), freq(&|r| r.member_feasible[1])],
        k_freq: [freq(&|r| r.k_correct[0]), freq(&|r| r.k_correct[1])],
        k_dist,
        oracle_bias: [mean(&|r| r.oracle_error[0]), mean(&|r| r.oracle_error[1])],
        oracle_coverage: [mean(&|r| r.oracle_cover[0]), mean(&|r| r.oracle_cover[1])],
        feasible_bias: [opt_mean(&|r| r.feasible_error[0]), opt_mean(&|r| r.feasible_error[1])],
        feasible_coverage: [opt_mean(&|r| r.feasible_cover[0]), opt_mean(&|r| r.feasible_cover[1])],
    }
}

impl Summary {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["dgp", "n", "t", "reps", "failures"].iter().map(|s| s.to_string()).collect();
        h.extend((0..self.rank_freq.len()).map(|j| format!("rank{j}_freq")));
        h.push("break_freq".into());
        for reg in ["pre", "post"] {
            h.push(format!("member_oracle_k_{reg}"));
            h.push(format!("member_feasible_{reg}"));
            h.push(format!("k_freq_{reg}"));
            for b in ["1", "2", "3", "4", "5plus"] {
                h.push(format!("k{b}_{reg}"));
            }
            h.push(format!("oracle_bias_{reg}"));
            h.push(format!("oracle_coverage_{reg}"));
            h.push(format!("feasible_bias_{reg}"));
            h.push(format!("feasible_coverage_{reg}"));
        }
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![self.dgp.clone(), self.n.to_string(), self.t_len.to_string(), self.reps.to_string(), self.failures.to_string()];
        r.extend(self.rank_freq.iter().map(|v| v.to_string()));
        r.push(self.break_freq.to_string());
        for l in 0..2 {
            r.push(self.member_oracle_k[l].to_string());
            r.push(self.member_feasible[l].to_string());
            r.push(self.k_freq[l].to_string());
            r.extend(self.k_dist[l].iter().map(|v| v.to_string()));
            r.push(self.oracle_bias[l].to_string());
            r.push(self.oracle_coverage[l].to_string());
            r.push(self.feasible_bias[l].to_string());
            r.push(self.feasible_coverage[l].to_string());
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables() {
        let (pre, post) = slope_tables(Family::Dgp1, Variant::V1);
        assert_eq!(pre.column(0).as_slice(), &[0.1, 0.9]);
        assert_eq!(post.column(0).as_slice(), &[0.05, 0.45]);
        let (pre, post) = slope_tables(Family::Dgp4, Variant::V1);
        assert_eq!(pre.column(0).as_slice(), &[0.1, 0.7]);
        assert_eq!(post.column(0).as_slice(), &[0.05, 0.35]);
        assert_eq!(pre.column(1).as_slice(), &[0.1, 0.9]);
        let (_, post) = slope_tables(Family::Dgp4, Variant::V3);
        assert_eq!(post.column(0).as_slice(), &[0.1, 0.4, 0.7]);
        let (_, post) = slope_tables(Family::Dgp2, Variant::V3);
        assert_eq!(post.column(1).as_slice(), &[0.1, 0.5, 0.9]);
    }

    #[test]
    fn sizes() {
        assert_eq!(group_sizes(&[0.5, 0.5], 100), vec![50, 50]);
        assert_eq!(group_sizes(&[0.4, 0.3, 0.3], 100), vec![40, 30, 30]);
        assert_eq!(group_sizes(&[0.4, 0.3, 0.3], 11), vec![4, 3, 4]);
    }

    #[test]
    fn codes() {
        let s = DgpSpec::new("3.2", 10, 20, 1).unwrap();
        assert_eq!(s.family, Family::Dgp3);
        assert_eq!(s.variant, Variant::V2);
        assert_eq!(s.code(), "3.2");
        assert!(DgpSpec::new("5.1", 10, 20, 1).is_err());
        assert!(DgpSpec::new("1.1", 10, 4, 1).is_err());
    }
}
