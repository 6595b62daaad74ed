//! Posterior summaries of the sweep stream: point predictions, credible
//! regions and convergence diagnostics.
//!
//! Sample quantiles are left-continuous, matching
//! [`crate::indices::weighted_quantile`]: the `p`-quantile of `n` sorted
//! values is the `⌈p·n⌉`-th smallest.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{ChainOutput, VarianceMode};
use crate::indices::SummarySpec;

/// Default region level (90% regions).
pub const DEFAULT_ALPHA: f64 = 0.10;

/// Effective sample sizes below this trigger a warning.
pub const MIN_ESS: f64 = 400.0;

/// Running-mean drift over the last quarter beyond this many standard
/// errors raises the drift flag.
pub const DRIFT_SE: f64 = 3.0;

pub fn posterior_mean(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples after burn-in"));
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Left-continuous empirical quantile of sorted values.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64 * (1.0 - 1e-12)).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(())
}

/// Equal-tailed region: empirical `α/2` and `1 − α/2` quantiles.
pub fn symmetric_region(samples: &[f64], alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if samples.is_empty() {
        return Err(Error::invalid("no samples after burn-in"));
    }
    let s = sorted(samples);
    Ok((sorted_quantile(&s, alpha / 2.0), sorted_quantile(&s, 1.0 - alpha / 2.0)))
}

/// Shortest interval spanning `⌈(1 − α)·n⌉` sorted samples. Ties in width
/// go to the leftmost window.
pub fn hpd_region(samples: &[f64], alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if samples.is_empty() {
        return Err(Error::invalid("no samples after burn-in"));
    }
    let s = sorted(samples);
    let n = s.len();
    let k = (((1.0 - alpha) * n as f64) * (1.0 - 1e-12)).ceil().clamp(1.0, n as f64) as usize;
    let best = (0..=n - k)
        .min_by(|&a, &b| (s[a + k - 1] - s[a]).total_cmp(&(s[b + k - 1] - s[b])))
        .expect("at least one window");
    Ok((s[best], s[best + k - 1]))
}

/// Running means `ḡ_1, ḡ_2, ...`.
pub fn running_means(samples: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    samples
        .iter()
        .enumerate()
        .map(|(i, x)| {
            acc += x;
            acc / (i + 1) as f64
        })
        .collect()
}

/// Effective sample size from the initial positive sequence of
/// autocorrelation pairs.
pub fn effective_sample_size(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 4 {
        return n as f64;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = samples.iter().map(|x| x - mean).collect();
    let var = c.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * var);
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    n as f64 / tau.max(1.0 / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub running_means: Vec<f64>,
    /// `ḡ_n − ḡ_{⌊3n/4⌋}`.
    pub last_quarter_drift: f64,
    /// Least-squares slope of the running mean over the last quarter, per
    /// sweep.
    pub last_quarter_slope: f64,
    /// Mean of the second half minus mean of the first half.
    pub split_half_delta: f64,
    pub effective_sample_size: f64,
    pub drift_flag: bool,
    pub warnings: Vec<String>,
}

pub fn convergence_report(samples: &[f64]) -> Result<ConvergenceReport> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid("convergence diagnostics need at least two sweeps"));
    }
    let rm = running_means(samples);
    let q = (3 * n / 4).max(1);
    let drift = rm[n - 1] - rm[q - 1];

    let tail = &rm[q - 1..];
    let slope = if tail.len() >= 2 {
        let m = tail.len() as f64;
        let xbar = (m - 1.0) / 2.0;
        let ybar = tail.iter().sum::<f64>() / m;
        let (sxy, sxx) = tail.iter().enumerate().fold((0.0, 0.0), |(sxy, sxx), (i, y)| {
            let dx = i as f64 - xbar;
            (sxy + dx * (y - ybar), sxx + dx * dx)
        });
        sxy / sxx
    } else {
        0.0
    };

    let half = n / 2;
    let split = posterior_mean(&samples[half..])? - posterior_mean(&samples[..half])?;

    let mean = rm[n - 1];
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let drift_flag = drift.abs() > DRIFT_SE * sd / (n as f64).sqrt();
    let ess = effective_sample_size(samples);

    let mut warnings = Vec::new();
    if drift_flag {
        warnings.push(format!(
            "running mean moved by {drift:.3e} over the last quarter of sweeps"
        ));
    }
    if ess < MIN_ESS {
        warnings.push(format!("effective sample size {ess:.0} is below {MIN_ESS:.0}"));
    }
    Ok(ConvergenceReport {
        running_means: rm,
        last_quarter_drift: drift,
        last_quarter_slope: slope,
        split_half_delta: split,
        effective_sample_size: ess,
        drift_flag,
        warnings,
    })
}

/// Largest pairwise difference between per-chain posterior means.
pub fn multi_seed_delta(means: &[f64]) -> f64 {
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if means.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    #[default]
    EqualTailed,
    Hpd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub spec: SummarySpec,
    /// Posterior prediction: the mean of the per-sweep plug-in values `ĝ`,
    /// which is the posterior mean of `g` with the sampling error
    /// integrated out.
    pub mean: f64,
    /// Mean of the `g` draws themselves.
    pub mean_g: f64,
    /// Posterior standard deviation of `g`.
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub region: RegionKind,
    pub n_used: usize,
    /// Largest difference between chain means of `ĝ` (0 for one chain).
    pub chain_delta: f64,
    pub diagnostics: ConvergenceReport,
}

/// Aggregation settings applied after sampling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregation {
    pub burn_in: usize,
    pub alpha: f64,
    pub region: RegionKind,
}

impl Default for Aggregation {
    fn default() -> Self {
        Self {
            burn_in: 1_000,
            alpha: DEFAULT_ALPHA,
            region: RegionKind::EqualTailed,
        }
    }
}

/// Post-burn-in `(ĝ, g)` series of summary `i`, all chains concatenated.
pub fn summary_series(chains: &[ChainOutput], i: usize, burn_in: usize) -> (Vec<f64>, Vec<f64>) {
    let mut g_hat = Vec::new();
    let mut g = Vec::new();
    for c in chains {
        for r in c.records.iter().filter(|r| r.sweep > burn_in) {
            g_hat.push(r.draws[i].g_hat);
            g.push(r.draws[i].g);
        }
    }
    (g_hat, g)
}

/// One [`PosteriorSummary`] per requested summary, in request order.
pub fn summarize(chains: &[ChainOutput], agg: &Aggregation) -> Result<Vec<PosteriorSummary>> {
    let first = chains.first().ok_or_else(|| Error::invalid("no chains"))?;
    check_alpha(agg.alpha)?;
    (0..first.summaries.len())
        .into_par_iter()
        .map(|i| {
            let (g_hat, g) = summary_series(chains, i, agg.burn_in);
            let mean = posterior_mean(&g_hat)?;
            let mean_g = posterior_mean(&g)?;
            let sd = if g.len() > 1 {
                (g.iter().map(|x| (x - mean_g).powi(2)).sum::<f64>() / (g.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            let (lower, upper) = match agg.region {
                RegionKind::EqualTailed => symmetric_region(&g, agg.alpha)?,
                RegionKind::Hpd => hpd_region(&g, agg.alpha)?,
            };
            let chain_means = chains
                .iter()
                .map(|c| {
                    let (h, _) = summary_series(std::slice::from_ref(c), i, agg.burn_in);
                    posterior_mean(&h)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut diagnostics = convergence_report(&g)?;
            if (g.len() as f64) < 2.0 / agg.alpha {
                diagnostics
                    .warnings
                    .push(format!("only {} draws for a {} region", g.len(), 1.0 - agg.alpha));
            }
            if !(lower <= mean && mean <= upper) {
                diagnostics
                    .warnings
                    .push("posterior prediction lies outside its region".into());
            }
            Ok(PosteriorSummary {
                spec: first.summaries[i],
                mean,
                mean_g,
                sd,
                lower,
                upper,
                alpha: agg.alpha,
                region: agg.region,
                n_used: g.len(),
                chain_delta: multi_seed_delta(&chain_means),
                diagnostics,
            })
        })
        .collect()
}

/// Labels the variance cadence for run metadata.
pub fn cadence_label(mode: VarianceMode) -> String {
    match mode {
        VarianceMode::FastApprox => format!(
            "linearization recomputed every {} sweeps",
            crate::gibbs::FAST_APPROX_CADENCE
        ),
        m => format!("{m} at every sweep"),
    }
}
