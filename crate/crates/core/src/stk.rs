//! Sequential testing K-means: slope profiles per regime, K-means clustering,
//! the within-group homogeneity statistics and the stopping rule.

use nalgebra::SymmetricEigen;
use rand::Rng;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::ife::{homogeneity_gamma, IfeConfig};
use crate::linalg::{CoefSet, Mat, PanelData};
use crate::mc::rng_for;

pub const DEFAULT_RESTARTS: usize = 20;
pub const DEFAULT_MAX_M: usize = 8;
const MAX_LLOYD: usize = 200;
const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Bartlett,
    Parzen,
    /// Uniform weights up to the bandwidth; not guaranteed PSD.
    Truncated,
    /// No lag terms.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// `floor(4 (T/100)^(2/9))`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub kind: KernelKind,
    pub bandwidth: Bandwidth,
}

impl Default for Kernel {
    fn default() -> Self {
        Self { kind: KernelKind::Bartlett, bandwidth: Bandwidth::Auto }
    }
}

impl Kernel {
    pub fn none() -> Self {
        Self { kind: KernelKind::None, bandwidth: Bandwidth::Fixed(0.0) }
    }

    /// Martingale-difference errors: no lag terms.
    pub fn for_dynamic(self) -> Self {
        Self { bandwidth: Bandwidth::Fixed(0.0), ..self }
    }

    pub fn bandwidth_for(&self, t_len: usize) -> f64 {
        match (self.kind, self.bandwidth) {
            (KernelKind::None, _) => 0.0,
            (_, Bandwidth::Auto) => newey_west_bandwidth(t_len),
            (_, Bandwidth::Fixed(s)) => s,
        }
    }

    /// `(lag, weight)` pairs with nonzero weight for a series of length `t_len`.
    pub fn lag_weights(&self, t_len: usize) -> Vec<(usize, f64)> {
        lag_weights(self.kind, self.bandwidth_for(t_len), t_len)
    }
}

pub fn newey_west_bandwidth(t_len: usize) -> f64 {
    (4.0 * (t_len as f64 / 100.0).powf(2.0 / 9.0)).floor()
}

pub fn kernel_weight(kind: KernelKind, u: f64) -> f64 {
    let u = u.abs();
    match kind {
        KernelKind::Bartlett => (1.0 - u).max(0.0),
        KernelKind::Parzen => {
            if u <= 0.5 {
                1.0 - 6.0 * u * u + 6.0 * u * u * u
            } else if u <= 1.0 {
                2.0 * (1.0 - u).powi(3)
            } else {
                0.0
            }
        }
        KernelKind::Truncated => {
            if u <= 1.0 {
                1.0
            } else {
                0.0
            }
        }
        KernelKind::None => 0.0,
    }
}

fn lag_weights(kind: KernelKind, s_t: f64, t_len: usize) -> Vec<(usize, f64)> {
    if s_t <= 0.0 || kind == KernelKind::None {
        return Vec::new();
    }
    (1..t_len)
        .map(|j| (j, kernel_weight(kind, j as f64 / s_t)))
        .filter(|(_, w)| *w != 0.0)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HacEstimate {
    pub matrix: Mat,
    /// Smallest eigenvalue before any flooring.
    pub min_eigenvalue: f64,
    /// The raw estimate was not PSD and its eigenvalues were floored.
    pub floored: bool,
}

/// `(1/T) [sum_t z_t z_t' e_t^2 + sum_{j>=1} k(j/S) sum_t (z_t z_{t+j}' + z_{t+j} z_t') e_t e_{t+j}]`
/// with rows `z_t` of `z` (`T x p`).
pub fn hac_covariance(z: &Mat, e: &[f64], kind: KernelKind, s_t: f64) -> Result<HacEstimate> {
    let (t_len, p) = z.shape();
    if e.len() != t_len {
        return Err(Error::Dimension(format!("{} residuals for {} rows", e.len(), t_len)));
    }
    if !(s_t >= 0.0) {
        return Err(Error::Argument(format!("bandwidth must be nonnegative, got {s_t}")));
    }
    // scaled scores g_t = z_t e_t
    let g = Mat::from_fn(t_len, p, |t, k| z[(t, k)] * e[t]);
    let mut omega = g.transpose() * &g;
    for (j, w) in lag_weights(kind, s_t, t_len) {
        let lead = g.rows(j, t_len - j);
        let lag = g.rows(0, t_len - j);
        let gamma = lag.transpose() * lead;
        omega += (&gamma + gamma.transpose()) * w;
    }
    omega /= t_len as f64;
    let omega = (&omega + omega.transpose()) * 0.5;
    let eig = SymmetricEigen::new(omega.clone());
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eigenvalue >= 0.0 || p == 0 {
        return Ok(HacEstimate { matrix: omega, min_eigenvalue, floored: false });
    }
    Ok(HacEstimate { matrix: floor_eigen(&eig), min_eigenvalue, floored: true })
}

fn floor_eigen(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> Mat {
    let vals = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
    let q = &eig.eigenvectors;
    let m = q * Mat::from_diagonal(&vals) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Symmetric matrix with eigenvalues raised to at least 1e-12. Returns the
/// matrix and whether anything changed.
pub fn eigen_floor(m: &Mat) -> (Mat, bool) {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    if eig.eigenvalues.iter().all(|&v| v >= EIGEN_FLOOR) {
        return (m.clone(), false);
    }
    (floor_eigen(&eig), true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaProfiles {
    pub regime: Regime,
    /// Row `i`: `(Theta_dot_{1,i}, .., Theta_dot_{p,i})` over the regime, scaled by `1/sqrt(T_l)`.
    pub betas: Mat,
    pub t_len_regime: usize,
}

/// Slices `Theta_dot` at `t1_hat` and stacks the slope blocks per unit.
pub fn build_beta(theta_dot: &CoefSet, t1_hat: usize) -> Result<(BetaProfiles, BetaProfiles)> {
    let t_len = theta_dot.t_len();
    if t1_hat < 2 || t1_hat + 2 > t_len {
        return Err(Error::Argument(format!("break {t1_hat} leaves a regime shorter than 2 periods (T = {t_len})")));
    }
    let make = |regime, start: usize, len: usize| {
        let p = theta_dot.p();
        let scale = 1.0 / (len as f64).sqrt();
        let betas = Mat::from_fn(theta_dot.n(), p * len, |i, c| {
            let (j, t) = (c / len, c % len);
            theta_dot.theta(j + 1)[(i, start + t)] * scale
        });
        BetaProfiles { regime, betas, t_len_regime: len }
    };
    Ok((make(Regime::Pre, 0, t1_hat), make(Regime::Post, t1_hat, t_len - t1_hat)))
}

/// Partition of units; labels are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStructure {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centers: Mat,
}

impl GroupStructure {
    /// Structure from known labels; centers are left empty.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().copied().max().map_or(0, |m| m + 1);
        let gs = Self { k, labels, centers: Mat::zeros(k, 0) };
        if gs.sizes().iter().any(|&s| s == 0) {
            return Err(Error::Argument("every group must be nonempty".into()));
        }
        Ok(gs)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == k).collect()
    }
}

/// Labels renumbered in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Two labelings describe the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && canonical_labels(a) == canonical_labels(b)
}

fn sq_dist(a: nalgebra::DMatrixView<'_, f64>, b: nalgebra::DMatrixView<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `(1/N) sum_i ||beta_i - center_{label_i}||^2`.
pub fn kmeans_objective(betas: &Mat, labels: &[usize], centers: &Mat) -> f64 {
    let n = betas.nrows();
    let total: f64 = (0..n)
        .map(|i| sq_dist(betas.rows(i, 1), centers.rows(labels[i], 1)))
        .sum();
    total / n as f64
}

/// Objective of a partition evaluated at its own group means.
pub fn partition_objective(betas: &Mat, labels: &[usize], k: usize) -> f64 {
    let centers = group_means(betas, labels, k);
    kmeans_objective(betas, labels, &centers)
}

fn group_means(betas: &Mat, labels: &[usize], k: usize) -> Mat {
    let mut c = Mat::zeros(k, betas.ncols());
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        let mut row = c.row_mut(l);
        row += betas.row(i);
        counts[l] += 1;
    }
    for (l, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            c.row_mut(l).scale_mut(1.0 / cnt as f64);
        }
    }
    c
}

fn assign(betas: &Mat, centers: &Mat) -> Vec<usize> {
    (0..betas.nrows())
        .map(|i| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for k in 0..centers.nrows() {
                let d = sq_dist(betas.rows(i, 1), centers.rows(k, 1));
                if d < best_d {
                    best = k;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

fn plus_plus_init(betas: &Mat, m: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Mat {
    let n = betas.nrows();
    let mut centers = Mat::zeros(m, betas.ncols());
    let first = rng.gen_range(0..n);
    centers.set_row(0, &betas.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(betas.rows(i, 1), centers.rows(0, 1))).collect();
    for k in 1..m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centers.set_row(k, &betas.row(pick));
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(betas.rows(i, 1), centers.rows(k, 1)));
        }
    }
    centers
}

/// Moves the point farthest from its center into every empty cluster.
fn repair_empty(betas: &Mat, labels: &mut [usize], centers: &Mat, m: usize) {
    loop {
        let mut counts = vec![0usize; m];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let mut far = None;
        let mut far_d = -1.0;
        for i in 0..labels.len() {
            if counts[labels[i]] > 1 {
                let d = sq_dist(betas.rows(i, 1), centers.rows(labels[i], 1));
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
        }
        match far {
            Some(i) => labels[i] = empty,
            None => return,
        }
    }
}

fn lloyd(betas: &Mat, mut centers: Mat, m: usize) -> (Vec<usize>, Mat) {
    let mut labels = assign(betas, &centers);
    repair_empty(betas, &mut labels, &centers, m);
    for _ in 0..MAX_LLOYD {
        centers = group_means(betas, &labels, m);
        let mut next = assign(betas, &centers);
        repair_empty(betas, &mut next, &centers, m);
        if next == labels {
            break;
        }
        labels = next;
    }
    (labels, centers)
}

/// K-means with `m` groups: best of `restarts` k-means++ starts.
pub fn kmeans(profiles: &BetaProfiles, m: usize, restarts: usize, seed: u64) -> Result<GroupStructure> {
    kmeans_with_init(&profiles.betas, m, restarts, seed, None)
}

/// K-means on the rows of `betas`. `init` adds one extra start from a given
/// labeling.
pub fn kmeans_with_init(
    betas: &Mat,
    m: usize,
    restarts: usize,
    seed: u64,
    init: Option<&[usize]>,
) -> Result<GroupStructure> {
    let n = betas.nrows();
    if m == 0 || m > n {
        return Err(Error::Argument(format!("group count {m} must lie in 1..={n}")));
    }
    let mut best: Option<(f64, Vec<usize>, Mat)> = None;
    let mut consider = |labels: Vec<usize>, centers: Mat| {
        let obj = kmeans_objective(betas, &labels, &centers);
        if best.as_ref().map_or(true, |(b, _, _)| obj < *b) {
            best = Some((obj, labels, centers));
        }
    };
    if let Some(init) = init {
        if init.len() != n || init.iter().any(|&l| l >= m) {
            return Err(Error::Argument("initial labels do not match the data".into()));
        }
        let (l, c) = lloyd(betas, group_means(betas, init, m), m);
        consider(l, c);
    }
    for r in 0..restarts.max(1) {
        let mut rng = rng_for(seed, r as u64);
        let start = plus_plus_init(betas, m, &mut rng);
        let (l, c) = lloyd(betas, start, m);
        consider(l, c);
    }
    let (_, labels, centers) = best.expect("at least one start");
    // renumber by first appearance so results do not depend on start order
    let canon = canonical_labels(&labels);
    let mut perm = vec![0; m];
    for (&old, &new) in labels.iter().zip(&canon) {
        perm[new] = old;
    }
    let centers = Mat::from_fn(m, betas.ncols(), |k, c| centers[(perm[k], c)]);
    Ok(GroupStructure { k: m, labels: canon, centers })
}

/// Quantile of the maximum of `m` independent chi-square(1) variables at `1 - varsigma`.
pub fn critical_value(m: usize, varsigma: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::Argument("m must be at least 1".into()));
    }
    if !(varsigma > 0.0 && varsigma < 1.0) {
        return Err(Error::Argument(format!("significance level must lie in (0, 1), got {varsigma}")));
    }
    // upper tail of a single chi-square(1): 1 - (1 - varsigma)^(1/m), computed without cancellation
    let tail = -((-varsigma).ln_1p() / m as f64).exp_m1();
    let upper = |z: f64| if z <= 0.0 { 1.0 } else { gamma_ur(0.5, z / 2.0) };
    let (mut lo, mut hi) = (0.0, 1.0);
    while upper(hi) > tail {
        hi *= 2.0;
    }
    while hi - lo > 1e-11 {
        let mid = 0.5 * (lo + hi);
        if upper(mid) > tail {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Homogeneity statistic of one group inside a regime panel.
pub fn group_gamma(regime_panel: &PanelData, group: &[usize], r0: usize, kernel: Kernel) -> Result<f64> {
    group_gamma_with(regime_panel, group, r0, kernel, &IfeConfig::default())
}

pub fn group_gamma_with(
    regime_panel: &PanelData,
    group: &[usize],
    r0: usize,
    kernel: Kernel,
    ife: &IfeConfig,
) -> Result<f64> {
    if group.len() < 2 {
        return Err(Error::Argument(format!("group has {} member(s), need at least 2", group.len())));
    }
    let sub = regime_panel.select(group, 0..regime_panel.t_len());
    Ok(homogeneity_gamma(&sub, r0, kernel, ife)?.gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaReport {
    pub m: usize,
    pub per_group: Vec<f64>,
    pub gamma_m: f64,
    pub critical: f64,
    pub reject: bool,
    pub groups: GroupStructure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StkConfig {
    /// `None` means `N^-2`.
    pub varsigma: Option<f64>,
    pub max_m: usize,
    pub restarts: usize,
    pub seed: u64,
    pub kernel: Kernel,
    pub ife: IfeConfig,
}

impl Default for StkConfig {
    fn default() -> Self {
        Self {
            varsigma: None,
            max_m: DEFAULT_MAX_M,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            kernel: Kernel::default(),
            ife: IfeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StkResult {
    pub k_hat: usize,
    pub groups: GroupStructure,
    pub reports: Vec<GammaReport>,
    /// False when `max_m` was reached without a non-rejection.
    pub converged: bool,
}

/// Statistics for a given partition. Groups with fewer than two members carry
/// no within-group variation and contribute zero.
pub fn gamma_report(
    regime_panel: &PanelData,
    groups: GroupStructure,
    r0: usize,
    varsigma: f64,
    cfg: &StkConfig,
) -> Result<GammaReport> {
    let m = groups.k;
    let mut per_group = Vec::with_capacity(m);
    for k in 0..m {
        let members = groups.members(k);
        let g = if members.len() < 2 {
            0.0
        } else {
            group_gamma_with(regime_panel, &members, r0, cfg.kernel, &cfg.ife)?
        };
        per_group.push(g);
    }
    let gamma_m = per_group.iter().map(|g| g * g).fold(0.0, f64::max);
    let critical = critical_value(m, varsigma)?;
    Ok(GammaReport { m, per_group, gamma_m, critical, reject: gamma_m > critical, groups })
}

/// For `m = 1, 2, ..` cluster into `m` groups and stop at the first `m` whose
/// largest squared group statistic does not exceed the critical value.
pub fn stk_run(regime_panel: &PanelData, profiles: &BetaProfiles, r0: usize, cfg: &StkConfig) -> Result<StkResult> {
    let n = regime_panel.n();
    if profiles.betas.nrows() != n {
        return Err(Error::Dimension(format!("{} profiles for {} units", profiles.betas.nrows(), n)));
    }
    if cfg.max_m == 0 {
        return Err(Error::Argument("max_m must be at least 1".into()));
    }
    let varsigma = cfg.varsigma.unwrap_or(1.0 / (n as f64 * n as f64));
    let mut reports = Vec::new();
    for m in 1..=cfg.max_m.min(n) {
        let groups = kmeans_with_init(&profiles.betas, m, cfg.restarts, cfg.seed, None)?;
        let report = gamma_report(regime_panel, groups, r0, varsigma, cfg)?;
        let stop = !report.reject;
        reports.push(report);
        if stop {
            let groups = reports.last().expect("just pushed").groups.clone();
            return Ok(StkResult { k_hat: m, groups, reports, converged: true });
        }
    }
    let last = reports.last().expect("max_m >= 1");
    Ok(StkResult { k_hat: last.m, groups: last.groups.clone(), reports, converged: false })
}
