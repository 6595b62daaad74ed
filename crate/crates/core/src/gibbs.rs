//! Gibbs sampler over `(b, Σ_1.., latent wealth, E)`.
//!
//! Each sweep draws, in order: the stacked coefficients `b`; every observed
//! pattern's precision matrix; every held wealth component of every
//! household (ascending component index, truncated normal in log scale
//! restricted to the household's censoring domain); and the sampling error
//! `E`. After the sweep the plug-in estimate `ĝ` and its design variance
//! `v̂` are computed on the current totals, giving `g = ĝ + √v̂ · E`.
//!
//! Households draw from their own RNG substreams, so the latent step runs
//! in parallel without affecting reproducibility.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::censoring::{build_domain, CensoringDomain, DomainConfig};
use crate::data_model::SurveyDataset;
use crate::design_variance::{ht_variance, jackknife_variance, linearize, SampleDesign};
use crate::error::{Error, Result};
use crate::hierarchy::{
    coefficient_full_conditional, component_full_conditional, invert_spd, residual_cross_product,
    sigma_full_conditional, CovarianceStructure, ModelData, ModelParams,
};
use crate::indices::{evaluate_summary, SummarySpec, WeightedSample};
use crate::variates::{rng_stream, std_normal, substream, truncated_normal, wishart, StreamRng};

/// How `v̂` is obtained at each sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Analytic linearization variance at every sweep.
    #[default]
    Linearization,
    /// Delete-one jackknife at every sweep.
    Jackknife,
    /// Linearization variance recomputed every [`FAST_APPROX_CADENCE`]
    /// sweeps and reused in between.
    FastApprox,
}

pub const FAST_APPROX_CADENCE: usize = 10;

impl std::str::FromStr for VarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linearization" => Ok(VarianceMode::Linearization),
            "jackknife" => Ok(VarianceMode::Jackknife),
            "fast-approx" | "fast_approx" => Ok(VarianceMode::FastApprox),
            _ => Err(Error::invalid(format!(
                "unknown variance mode {s:?} (expected linearization, jackknife or fast-approx)"
            ))),
        }
    }
}

impl std::fmt::Display for VarianceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VarianceMode::Linearization => "linearization",
            VarianceMode::Jackknife => "jackknife",
            VarianceMode::FastApprox => "fast-approx",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    pub total_sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub chains: usize,
    pub summaries: Vec<SummarySpec>,
    pub variance_mode: VarianceMode,
    pub covariance: CovarianceStructure,
    pub domain: DomainConfig,
    /// Check every household's domain membership every this many sweeps
    /// (0 disables the audit).
    pub audit_every: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            total_sweeps: 20_000,
            burn_in: 1_000,
            seed: 0,
            chains: 1,
            summaries: SummarySpec::default_set(),
            variance_mode: VarianceMode::default(),
            covariance: CovarianceStructure::default(),
            domain: DomainConfig::default(),
            audit_every: if cfg!(debug_assertions) { 1 } else { 50 },
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.total_sweeps {
            return Err(Error::invalid(format!(
                "burn-in {} must be smaller than the number of sweeps {}",
                self.burn_in, self.total_sweeps
            )));
        }
        if self.chains == 0 {
            return Err(Error::invalid("at least one chain is required"));
        }
        if self.summaries.is_empty() {
            return Err(Error::invalid("no summaries requested"));
        }
        for s in &self.summaries {
            s.validate()?;
        }
        Ok(())
    }
}

/// One summary's values at one sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryDraw {
    pub g_hat: f64,
    pub v_hat: f64,
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub e: f64,
    /// In the order of [`ChainConfig::summaries`].
    pub draws: Vec<SummaryDraw>,
}

#[derive(Clone, Debug)]
pub struct ChainState {
    pub params: ModelParams,
    /// Log amounts of each household's held components.
    pub latent: Vec<DVector<f64>>,
    pub e: f64,
    pub sweep: usize,
    chain_rng: StreamRng,
    household_rngs: Vec<StreamRng>,
}

impl ChainState {
    /// Wealth vector (all components, zeros where not held) of household `k`.
    pub fn wealth(&self, sampler: &Sampler, k: usize) -> Vec<f64> {
        sampler.wealth_vector(k, &self.latent[k])
    }
}

#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub chain: usize,
    pub summaries: Vec<SummarySpec>,
    /// All sweeps, burn-in included.
    pub records: Vec<SweepRecord>,
    pub final_state: ChainState,
}

/// Everything about a dataset that stays fixed during sampling.
#[derive(Clone, Debug)]
pub struct Sampler {
    pub data: ModelData,
    pub domains: Vec<CensoringDomain>,
    pub ids: Vec<String>,
    pub weights: Vec<f64>,
    pub shares: Vec<Vec<f64>>,
    pub design: SampleDesign,
    n_components: usize,
}

/// Auxiliary matrix of the calibration variables. Variables name columns
/// of the financial component's covariate vector: `const` or `x1`, `x2`, ...
pub fn calibration_aux(ds: &SurveyDataset) -> Result<Option<DMatrix<f64>>> {
    let vars = &ds.design.calibration_totals;
    if vars.is_empty() {
        return Ok(None);
    }
    let cols = vars
        .iter()
        .map(|c| match c.variable.as_str() {
            "const" => Ok(0),
            v => v
                .strip_prefix('x')
                .and_then(|j| j.parse::<usize>().ok())
                .filter(|&j| j >= 1)
                .ok_or_else(|| Error::invalid(format!("unknown calibration variable {v:?}"))),
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut aux = DMatrix::zeros(ds.len(), cols.len());
    for (k, r) in ds.records.iter().enumerate() {
        let x = r.covariates[0].as_ref().expect("financial wealth is always held");
        for (c, &j) in cols.iter().enumerate() {
            aux[(k, c)] = *x
                .get(j)
                .ok_or_else(|| Error::invalid(format!("calibration variable x{j} exceeds covariate length")))?;
        }
    }
    Ok(Some(aux))
}

impl Sampler {
    pub fn new(ds: &SurveyDataset, domain: &DomainConfig) -> Result<Self> {
        let data = ModelData::new(ds)?;
        let domains = ds
            .records
            .par_iter()
            .map(|r| build_domain(&r.id, &r.holdings, &r.shares, &r.evidence, domain))
            .collect::<Result<Vec<_>>>()?;
        let mut design = SampleDesign::from_dataset(ds)?;
        if let Some(aux) = calibration_aux(ds)? {
            design = design.with_calibration(aux)?;
        }
        Ok(Self {
            data,
            domains,
            ids: ds.records.iter().map(|r| r.id.clone()).collect(),
            weights: ds.weights(),
            shares: ds.records.iter().map(|r| r.shares.clone()).collect(),
            design,
            n_components: ds.components.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn wealth_vector(&self, k: usize, latent: &DVector<f64>) -> Vec<f64> {
        let mut w = vec![0.0; self.n_components];
        for (a, &l) in self.data.households[k].held.iter().enumerate() {
            w[l] = latent[a].exp();
        }
        w
    }

    fn total(&self, k: usize, latent: &DVector<f64>) -> f64 {
        self.data.households[k]
            .held
            .iter()
            .enumerate()
            .map(|(a, &l)| self.shares[k][l] * latent[a].exp())
            .sum()
    }

    /// Current totals `t_k`.
    pub fn totals(&self, latent: &[DVector<f64>]) -> Vec<f64> {
        (0..self.len()).map(|k| self.total(k, &latent[k])).collect()
    }

    fn check_groups(&self) -> Result<()> {
        for p in self.data.observed_patterns() {
            let size = self.data.by_pattern[p - 1].len();
            let needed = self.data.pattern_held[p - 1].len() + 1;
            if size < needed {
                return Err(Error::InsufficientGroup {
                    pattern: p,
                    size,
                    needed,
                });
            }
        }
        Ok(())
    }

    fn initial_latent(&self, k: usize) -> Result<DVector<f64>> {
        let dom = &self.domains[k];
        let held = &self.data.households[k].held;
        let mut w: Vec<f64> = dom.boxes().iter().map(|b| (b.lo * b.hi).sqrt()).collect();
        if !dom.contains(&w) {
            w = dom.interior_point().ok_or_else(|| Error::InconsistentEvidence {
                household: self.ids[k].clone(),
                constraint: "no feasible starting point".into(),
            })?;
        }
        // Repair pass: move each component to the log-midpoint of its
        // conditional interval, which keeps the vector inside the domain.
        for &l in held {
            let iv = dom.conditional_interval(l, &w)?;
            w[l] = (iv.lo * iv.hi).sqrt().clamp(iv.lo, iv.hi);
        }
        Ok(DVector::from_iterator(held.len(), held.iter().map(|&l| w[l].ln())))
    }

    pub fn init_state(&self, config: &ChainConfig, chain: usize) -> Result<ChainState> {
        self.check_groups()?;
        let latent = (0..self.len())
            .into_par_iter()
            .map(|k| {
                self.initial_latent(k).map_err(|e| Error::Chain {
                    sweep: 0,
                    household: self.ids[k].clone(),
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n_patterns = self.data.by_pattern.len();
        let mut precisions = vec![None; n_patterns];
        for p in self.data.observed_patterns() {
            let members = &self.data.by_pattern[p - 1];
            let dim = self.data.pattern_held[p - 1].len();
            let m = members.len() as f64;
            let diag = DVector::from_fn(dim, |a, _| {
                let mean = members.iter().map(|&k| latent[k][a]).sum::<f64>() / m;
                let var = members.iter().map(|&k| (latent[k][a] - mean).powi(2)).sum::<f64>() / m;
                1.0 / var.max(1e-2)
            });
            precisions[p - 1] = Some(DMatrix::from_diagonal(&diag));
        }
        let b = DVector::zeros(self.data.layout.n_coef);
        let params = ModelParams::from_precisions(b, precisions)?;
        Ok(ChainState {
            params,
            latent,
            e: 0.0,
            sweep: 0,
            chain_rng: rng_stream(config.seed, chain as u64),
            household_rngs: self
                .ids
                .iter()
                .map(|id| substream(config.seed, chain as u64, id))
                .collect(),
        })
    }

    fn draw_precision(
        &self,
        pattern: usize,
        b: &DVector<f64>,
        latent: &[DVector<f64>],
        structure: CovarianceStructure,
        rng: &mut StreamRng,
    ) -> Result<DMatrix<f64>> {
        match structure {
            CovarianceStructure::Full => {
                let (df, scale) = sigma_full_conditional(&self.data, pattern, b, latent)?;
                wishart(df, &scale, rng)
            }
            CovarianceStructure::Diagonal => {
                let (df, _) = sigma_full_conditional(&self.data, pattern, b, latent)?;
                let s = residual_cross_product(&self.data, pattern, b, latent);
                let p = s.nrows();
                let mut q = DMatrix::zeros(p, p);
                for a in 0..p {
                    let one = DMatrix::from_element(1, 1, 1.0 / s[(a, a)]);
                    q[(a, a)] = wishart(df, &one, rng)?[(0, 0)];
                }
                Ok(q)
            }
        }
    }

    fn update_household(
        &self,
        k: usize,
        params: &ModelParams,
        y: &mut DVector<f64>,
        rng: &mut StreamRng,
    ) -> Result<()> {
        let hh = &self.data.households[k];
        let mu = self.data.mean(k, &params.b);
        let q = params.precisions[hh.pattern - 1]
            .as_ref()
            .expect("observed pattern has a precision");
        let dom = &self.domains[k];
        let mut w = self.wealth_vector(k, y);
        for (a, &l) in hh.held.iter().enumerate() {
            let iv = dom.conditional_interval(l, &w)?;
            let value = if iv.hi - iv.lo <= 1e-12 * iv.hi {
                iv.lo
            } else {
                let (m, sd) = component_full_conditional(&mu, q, y, a);
                truncated_normal(m, sd, iv.lo.ln(), iv.hi.ln(), rng)?
                    .exp()
                    .clamp(iv.lo, iv.hi)
            };
            w[l] = value;
            y[a] = value.ln();
        }
        Ok(())
    }

    /// One full sweep in the fixed block order.
    pub fn sweep(&self, state: &mut ChainState, config: &ChainConfig) -> Result<()> {
        let sweep = state.sweep + 1;
        let chain_err = |household: &str, e: Error| Error::Chain {
            sweep,
            household: household.to_string(),
            source: Box::new(e),
        };

        let post = coefficient_full_conditional(&self.data, &state.params.precisions, &state.latent)
            .map_err(|e| chain_err("-", e))?;
        let z = DVector::from_fn(post.mean.len(), |_, _| std_normal(&mut state.chain_rng));
        let b = post.draw(&z);

        let mut precisions = vec![None; self.data.by_pattern.len()];
        for p in self.data.observed_patterns() {
            let q = self
                .draw_precision(p, &b, &state.latent, config.covariance, &mut state.chain_rng)
                .map_err(|e| chain_err(&format!("pattern {p}"), e))?;
            precisions[p - 1] = Some(q);
        }
        let sigmas = precisions
            .iter()
            .map(|q| q.as_ref().map(invert_spd).transpose())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| chain_err("-", e))?;
        state.params = ModelParams { b, sigmas, precisions };

        let params = &state.params;
        state
            .latent
            .par_iter_mut()
            .zip(state.household_rngs.par_iter_mut())
            .enumerate()
            .try_for_each(|(k, (y, rng))| {
                self.update_household(k, params, y, rng)
                    .map_err(|e| chain_err(&self.ids[k], e))
            })?;

        state.e = std_normal(&mut state.chain_rng);
        state.sweep = sweep;

        if config.audit_every > 0 && sweep.is_multiple_of(config.audit_every) {
            if let Some(k) = (0..self.len())
                .into_par_iter()
                .find_first(|&k| !self.domains[k].contains(&self.wealth_vector(k, &state.latent[k])))
            {
                return Err(chain_err(
                    &self.ids[k],
                    Error::ConditionalInfeasibility {
                        component: 0,
                        detail: "latent wealth left the censoring domain".into(),
                    },
                ));
            }
        }
        Ok(())
    }

    fn variance(&self, spec: SummarySpec, sample: &WeightedSample, mode: VarianceMode) -> Result<f64> {
        let v = match mode {
            VarianceMode::Jackknife => jackknife_variance(spec, sample, &self.design)?.value,
            VarianceMode::Linearization | VarianceMode::FastApprox => {
                ht_variance(&linearize(spec, sample)?, &self.design)?.value
            }
        };
        Ok(v.max(0.0))
    }

    /// Summaries on the current latent totals. `previous` supplies the
    /// variances reused between FastApprox recomputations.
    pub fn record(
        &self,
        state: &ChainState,
        config: &ChainConfig,
        previous: Option<&SweepRecord>,
    ) -> Result<SweepRecord> {
        let sample = WeightedSample::new(self.totals(&state.latent), self.weights.clone())?;
        let reuse = config.variance_mode == VarianceMode::FastApprox
            && previous.is_some()
            && state.sweep % FAST_APPROX_CADENCE != 1;
        let draws = config
            .summaries
            .par_iter()
            .enumerate()
            .map(|(i, &spec)| {
                let g_hat = evaluate_summary(spec, &sample)?;
                let v_hat = match previous {
                    Some(prev) if reuse => prev.draws[i].v_hat,
                    _ => self.variance(spec, &sample, config.variance_mode)?,
                };
                Ok(SummaryDraw {
                    g_hat,
                    v_hat,
                    g: g_hat + v_hat.sqrt() * state.e,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Chain {
                sweep: state.sweep,
                household: "-".into(),
                source: Box::new(e),
            })?;
        Ok(SweepRecord {
            sweep: state.sweep,
            e: state.e,
            draws,
        })
    }

    /// Runs one chain for `config.total_sweeps` sweeps, recording every
    /// sweep.
    pub fn run_chain(&self, config: &ChainConfig, chain: usize) -> Result<ChainOutput> {
        config.validate()?;
        let mut state = self.init_state(config, chain)?;
        let mut records: Vec<SweepRecord> = Vec::with_capacity(config.total_sweeps);
        for _ in 0..config.total_sweeps {
            self.sweep(&mut state, config)?;
            let rec = self.record(&state, config, records.last())?;
            records.push(rec);
        }
        Ok(ChainOutput {
            chain,
            summaries: config.summaries.clone(),
            records,
            final_state: state,
        })
    }
}

/// Builds the sampler and runs `config.chains` chains in parallel.
pub fn run(ds: &SurveyDataset, config: &ChainConfig) -> Result<Vec<ChainOutput>> {
    config.validate()?;
    let sampler = Sampler::new(ds, &config.domain)?;
    (0..config.chains)
        .into_par_iter()
        .map(|c| sampler.run_chain(config, c))
        .collect()
}
