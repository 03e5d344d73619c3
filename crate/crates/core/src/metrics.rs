//! Distances between generated and reference trajectory sets.
//!
//! * MISE: Gaussian-KDE marginal densities per target step, squared difference
//!   integrated by trapezoid over the pooled 0.1%–99.9% range, averaged.
//! * TD: `|Δq_0.05| + |Δq_0.95|` per target step, averaged, clipped at 10.
//! * MSE: squared difference of the per-step cross-sectional means, averaged.
//! * MMD: unbiased squared MMD of terminal values with a Gaussian kernel whose
//!   bandwidth is the median pairwise distance of the pooled sample; the
//!   reported value is `sqrt(max(0, ·))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::PathBatch;

pub const TD_CLIP: f64 = 10.0;
pub const BANDWIDTH_FLOOR: f64 = 1e-6;
pub const DEFAULT_KDE_POINTS: usize = 256;
pub const MIN_MISE_PATHS: usize = 30;
pub const MIN_TD_PATHS: usize = 100;
/// Largest pooled subsample used for the median-distance bandwidth.
pub const MEDIAN_SUBSAMPLE: usize = 1000;

/// Largest values each metric may take when real and fake are two disjoint
/// 10⁴-path draws of one process with a marginal scale of order one: a few
/// standard errors of the estimator under the null.
pub const SAME_PROCESS_MISE: f64 = 0.005;
pub const SAME_PROCESS_TD: f64 = 0.1;
pub const SAME_PROCESS_MSE: f64 = 1e-3;
pub const SAME_PROCESS_MMD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmdMode {
    /// MMD between terminal values.
    #[default]
    Terminal,
    /// MMD averaged over every target step.
    PerStepMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDefinitions {
    pub mise: String,
    pub td: String,
    pub mse: String,
    pub mmd: String,
}

impl MetricDefinitions {
    pub fn current(mode: MmdMode, kde_points: usize) -> Self {
        Self {
            mise: format!(
                "mean over target steps of trapezoid integral of (kde_real - kde_fake)^2 on {kde_points} points spanning pooled 0.1%-99.9% quantiles; gaussian kernel, silverman bandwidth 0.9*min(sd, iqr/1.34)*n^-0.2, floor {BANDWIDTH_FLOOR}"
            ),
            td: format!(
                "mean over target steps of |q05_fake - q05_real| + |q95_fake - q95_real| (linear-interpolated quantiles), clipped at {TD_CLIP}"
            ),
            mse: "mean over target steps of (mean_real - mean_fake)^2; raw units, scale factor in mse_scale".into(),
            mmd: String::from(match mode {
                MmdMode::Terminal => "sqrt(max(0, unbiased mmd^2)) of terminal values",
                MmdMode::PerStepMean => "mean over target steps of sqrt(max(0, unbiased mmd^2))",
            }) + &format!(
                "; gaussian kernel exp(-d^2/(2h^2)), h = median pairwise distance of a strided pooled subsample of at most {MEDIAN_SUBSAMPLE} points, floor {BANDWIDTH_FLOOR}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mise: f64,
    pub td: f64,
    pub mse: f64,
    pub mmd: f64,
    pub n_real: usize,
    pub n_fake: usize,
    /// MMD kernel bandwidth (terminal values, or the mean over steps).
    pub bandwidth: f64,
    pub seed: u64,
    pub config_hash: String,
    /// Factor applied to `mse` (always 1: values are raw).
    pub mse_scale: f64,
    pub target_from: usize,
    pub mmd_mode: MmdMode,
    pub definitions: MetricDefinitions,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn table_header() -> &'static str {
        "dataset,model,mise,td,mse,mmd"
    }

    pub fn table_row(&self, dataset: &str, model: &str) -> String {
        format!("{dataset},{model},{},{},{},{}", self.mise, self.td, self.mse, self.mmd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// First grid index of the target window.
    pub target_from: usize,
    pub kde_points: usize,
    pub mmd_mode: MmdMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            target_from: 100,
            kde_points: DEFAULT_KDE_POINTS,
            mmd_mode: MmdMode::Terminal,
        }
    }
}

fn check_pair(real: &PathBatch, fake: &PathBatch, from: usize) -> Result<()> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::invalid("metric inputs must be non-empty"));
    }
    if !real.same_grid(fake) {
        return Err(Error::invalid("real and fake paths are on different grids"));
    }
    if from >= real.grid.points() {
        return Err(Error::invalid(format!("target window starts at {from}, grid has {} points", real.grid.points())));
    }
    Ok(())
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation quantile of an already sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Silverman's rule `0.9 · min(sd, IQR/1.34) · n^(-1/5)`, floored; the flag
/// marks a floored value.
fn silverman(sorted: &[f64]) -> (f64, bool) {
    let n = sorted.len() as f64;
    let m = mean(sorted);
    let sd = (sorted.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > BANDWIDTH_FLOOR {
        (h, false)
    } else {
        (BANDWIDTH_FLOOR, true)
    }
}

fn kde_on_grid(sorted: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (sorted.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let cutoff = 8.0 * h;
    grid.iter()
        .map(|&x| {
            let lo = sorted.partition_point(|&v| v < x - cutoff);
            let hi = sorted.partition_point(|&v| v <= x + cutoff);
            sorted[lo..hi]
                .iter()
                .map(|&v| {
                    let z = (x - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// Kernel density estimates of two samples on a shared grid spanning the
/// pooled 0.1%-99.9% quantile range.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurves {
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Either bandwidth hit the floor.
    pub floored: bool,
}

pub fn kde_curves(a: &[f64], b: &[f64], grid_points: usize) -> Result<DensityCurves> {
    if a.len() < 2 || b.len() < 2 || grid_points < 2 {
        return Err(Error::invalid("kde needs two samples of size >= 2 and >= 2 grid points"));
    }
    let (sa, sb) = (sorted(a), sorted(b));
    let pooled = sorted(&[a, b].concat());
    let (lo, hi) = (quantile_sorted(&pooled, 0.001), quantile_sorted(&pooled, 0.999));
    let (ha, fa) = silverman(&sa);
    let (hb, fb) = silverman(&sb);
    // a collapsed pooled sample still gets a grid of distinct points
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let step = (hi - lo) / (grid_points - 1) as f64;
    let x: Vec<f64> = (0..grid_points).map(|i| lo + i as f64 * step).collect();
    Ok(DensityCurves {
        a: kde_on_grid(&sa, ha, &x),
        b: kde_on_grid(&sb, hb, &x),
        x,
        floored: fa || fb,
    })
}

/// KDE estimate of `∫ (p_a - p_b)²` for two samples; the flag reports a
/// floored bandwidth.
pub fn kde_ise(a: &[f64], b: &[f64], grid_points: usize) -> Result<(f64, bool)> {
    if a.len() < 2 || b.len() < 2 || grid_points < 2 {
        return Err(Error::invalid("kde_ise needs two samples of size >= 2 and >= 2 grid points"));
    }
    let pooled = sorted(&[a, b].concat());
    if quantile_sorted(&pooled, 0.999) <= quantile_sorted(&pooled, 0.001) {
        // pooled sample collapsed onto a single value
        return Ok((0.0, silverman(&sorted(a)).1 || silverman(&sorted(b)).1));
    }
    let c = kde_curves(a, b, grid_points)?;
    let step = c.x[1] - c.x[0];
    let sq: Vec<f64> = c.a.iter().zip(&c.b).map(|(x, y)| (x - y) * (x - y)).collect();
    let integral = step * (sq.iter().sum::<f64>() - 0.5 * (sq[0] + sq[grid_points - 1]));
    Ok((integral, c.floored))
}

/// MISE over the target window `from..` of the grid.
pub fn mise(real: &PathBatch, fake: &PathBatch, from: usize, grid_points: usize) -> Result<f64> {
    Ok(mise_with_warnings(real, fake, from, grid_points)?.0)
}

fn mise_with_warnings(real: &PathBatch, fake: &PathBatch, from: usize, grid_points: usize) -> Result<(f64, Vec<String>)> {
    check_pair(real, fake, from)?;
    if real.len() < MIN_MISE_PATHS || fake.len() < MIN_MISE_PATHS {
        return Err(Error::invalid(format!("MISE needs at least {MIN_MISE_PATHS} paths per set")));
    }
    let mut warnings = Vec::new();
    let mut total = 0.0;
    for k in from..real.grid.points() {
        let (ise, floored) = kde_ise(&real.column(k), &fake.column(k), grid_points)?;
        if floored {
            log::warn!("KDE bandwidth floored at step {k}");
            warnings.push(format!("kde bandwidth floored at step {k}"));
        }
        total += ise;
    }
    Ok((total / (real.grid.points() - from) as f64, warnings))
}

/// `|Δq_0.05| + |Δq_0.95|` between two samples, unclipped.
pub fn quantile_gap(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb) = (sorted(a), sorted(b));
    (quantile_sorted(&sa, 0.05) - quantile_sorted(&sb, 0.05)).abs()
        + (quantile_sorted(&sa, 0.95) - quantile_sorted(&sb, 0.95)).abs()
}

/// Tail difference averaged over the target window, before clipping.
pub fn tail_difference_raw(real: &PathBatch, fake: &PathBatch, from: usize) -> Result<f64> {
    check_pair(real, fake, from)?;
    if real.len() < MIN_TD_PATHS || fake.len() < MIN_TD_PATHS {
        return Err(Error::invalid(format!(
            "tail difference needs at least {MIN_TD_PATHS} paths per set, got {} and {}",
            real.len(),
            fake.len()
        )));
    }
    let steps = from..real.grid.points();
    let n = steps.len() as f64;
    Ok(steps.map(|k| quantile_gap(&real.column(k), &fake.column(k))).sum::<f64>() / n)
}

pub fn tail_difference(real: &PathBatch, fake: &PathBatch, from: usize) -> Result<f64> {
    Ok(tail_difference_raw(real, fake, from)?.min(TD_CLIP))
}

/// Squared error of the mean trajectory over the target window.
pub fn mse(real: &PathBatch, fake: &PathBatch, from: usize) -> Result<f64> {
    check_pair(real, fake, from)?;
    let steps = from..real.grid.points();
    let n = steps.len() as f64;
    Ok(steps
        .map(|k| (mean(&real.column(k)) - mean(&fake.column(k))).powi(2))
        .sum::<f64>()
        / n)
}

/// Median pairwise distance over a strided subsample of the pooled values.
pub fn median_bandwidth(a: &[f64], b: &[f64]) -> (f64, bool) {
    let total = a.len() + b.len();
    let stride = total.div_ceil(MEDIAN_SUBSAMPLE).max(1);
    let pooled: Vec<f64> = a.iter().chain(b).step_by(stride).copied().collect();
    let mut dists = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            dists.push((pooled[i] - pooled[j]).abs());
        }
    }
    if dists.is_empty() {
        return (BANDWIDTH_FLOOR, true);
    }
    let mid = dists.len() / 2;
    let (_, &mut median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    if median > BANDWIDTH_FLOOR {
        (median, false)
    } else {
        (BANDWIDTH_FLOOR, true)
    }
}

/// Unbiased estimate of squared MMD with kernel `exp(-d²/(2h²))`.
pub fn mmd_squared_unbiased(a: &[f64], b: &[f64], h: f64) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("MMD needs at least two samples per set"));
    }
    let gamma = 0.5 / (h * h);
    let within = |xs: &[f64]| {
        let mut s = 0.0;
        for i in 0..xs.len() {
            let xi = xs[i];
            for &xj in &xs[i + 1..] {
                let d = xi - xj;
                s += (-gamma * d * d).exp();
            }
        }
        2.0 * s / (xs.len() * (xs.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for &x in a {
        for &y in b {
            let d = x - y;
            cross += (-gamma * d * d).exp();
        }
    }
    Ok(within(a) + within(b) - 2.0 * cross / (a.len() * b.len()) as f64)
}

/// `sqrt(max(0, MMD²_u))` with the median-heuristic bandwidth, and that bandwidth.
pub fn mmd(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("MMD needs at least two samples per set"));
    }
    let (h, floored) = median_bandwidth(a, b);
    if floored {
        log::warn!("MMD bandwidth floored at {BANDWIDTH_FLOOR}");
    }
    Ok((mmd_squared_unbiased(a, b, h)?.max(0.0).sqrt(), h))
}

/// All four metrics between a reference set and generated paths.
pub fn evaluate(real: &PathBatch, fake: &PathBatch, opts: &EvalOptions, seed: u64, config_hash: &str) -> Result<MetricsReport> {
    let from = opts.target_from;
    let (mise, mut warnings) = mise_with_warnings(real, fake, from, opts.kde_points)?;
    let td = tail_difference(real, fake, from)?;
    let mse = mse(real, fake, from)?;
    let (mmd, bandwidth) = match opts.mmd_mode {
        MmdMode::Terminal => {
            let (a, b) = (real.terminal(), fake.terminal());
            if median_bandwidth(&a, &b).1 {
                warnings.push("mmd bandwidth floored".into());
            }
            mmd(&a, &b)?
        }
        MmdMode::PerStepMean => {
            let steps = from..real.grid.points();
            let n = steps.len() as f64;
            let (mut m, mut h) = (0.0, 0.0);
            for k in steps {
                let (v, bw) = mmd(&real.column(k), &fake.column(k))?;
                m += v;
                h += bw;
            }
            (m / n, h / n)
        }
    };
    let report = MetricsReport {
        mise,
        td,
        mse,
        mmd,
        n_real: real.len(),
        n_fake: fake.len(),
        bandwidth,
        seed,
        config_hash: config_hash.to_string(),
        mse_scale: 1.0,
        target_from: from,
        mmd_mode: opts.mmd_mode,
        definitions: MetricDefinitions::current(opts.mmd_mode, opts.kde_points),
        warnings,
    };
    if ![report.mise, report.td, report.mse, report.mmd].iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalAbort("non-finite metric value".into()));
    }
    Ok(report)
}
