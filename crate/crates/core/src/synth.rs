//! Synthetic populations with known truth, survey sampling from them, and
//! censoring of the sampled wealth into bracket evidence.
//!
//! Log-wealth follows the pattern-specific lognormal model the sampler
//! estimates, so every finite-population summary of a generated population
//! is known exactly and the constructed evidence always contains the true
//! wealth vector. Currency amounts are whole cents.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::censoring::{CensoringEvidence, Interval, IsfRecord, NondeductibleBounds};
use crate::data_model::{
    total_wealth, ComponentCount, DesignKind, HoldingsVector, HouseholdRecord, Population, PopulationUnit,
    ResponseRate, StratumInfo, SurveyDataset, SurveyDesign,
};
use crate::design_variance::nonresponse_adjust;
use crate::error::{Error, Result};
use crate::indices::{evaluate_summary, SummarySpec, WeightedSample};
use crate::variates::{mvn, rng_stream, substream, StreamRng};

/// Group sizes of the eight 5-component holding patterns in the reference
/// survey, used as default pattern weights.
pub const REFERENCE_PATTERN_SIZES: [f64; 8] = [658.0, 984.0, 837.0, 147.0, 3274.0, 342.0, 275.0, 3175.0];

/// Financial-wealth range card, also used for the total wealth question.
pub const OVERVIEW_GRID: [f64; 12] = [
    0.0, 3_000.0, 7_500.0, 15_000.0, 30_000.0, 45_000.0, 75_000.0, 105_000.0, 150_000.0, 225_000.0, 300_000.0,
    450_000.0,
];

/// Checking-account range card.
pub const CHECKING_GRID: [f64; 5] = [0.0, 750.0, 1_500.0, 3_000.0, 7_500.0];

/// Occupation categories; the covariate vector carries dummies for the
/// first three, `Other` is the base.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occupation {
    SelfEmployed,
    Executive,
    Retired,
    Other,
}

impl Occupation {
    const ALL: [Occupation; 4] = [
        Occupation::SelfEmployed,
        Occupation::Executive,
        Occupation::Retired,
        Occupation::Other,
    ];

    fn label(self) -> &'static str {
        match self {
            Occupation::SelfEmployed => "self",
            Occupation::Executive => "exec",
            Occupation::Retired => "retired",
            Occupation::Other => "other",
        }
    }
}

/// Covariates are `[1, age/10, (age/10)², self-employed, executive,
/// retired, rich neighborhood]`.
pub const COVARIATE_DIM: usize = 7;

/// True lognormal model in the original covariate scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueModel {
    /// Per component: coefficients on the covariate vector, constant first.
    pub coefficients: Vec<Vec<f64>>,
    /// Per pattern (index 0 is pattern 1): additive shift applied to every
    /// held component.
    pub pattern_shift: Vec<f64>,
    /// Full 5×5 covariance; each pattern uses the submatrix of its held
    /// components multiplied by `pattern_scale`.
    pub covariance: Vec<Vec<f64>>,
    pub pattern_scale: Vec<f64>,
}

impl Default for TrueModel {
    fn default() -> Self {
        let sd = [1.3, 0.6, 0.9, 1.4, 1.0];
        let corr = 0.3;
        let covariance = (0..5)
            .map(|a| {
                (0..5)
                    .map(|b| if a == b { sd[a] * sd[a] } else { corr * sd[a] * sd[b] })
                    .collect()
            })
            .collect();
        // Age profile 0.8·a − 0.065·a² peaks near 62 years; constants absorb
        // its level of about 2.2.
        let coefficients = vec![
            vec![9.6 - 2.2, 0.8, -0.065, 0.3, 0.5, 0.3, 0.5],
            vec![11.9 - 2.2, 0.8, -0.065, 0.1, 0.2, 0.0, 0.5],
            vec![11.5 - 2.2, 0.8, -0.065, 0.2, 0.3, 0.1, 0.5],
            vec![11.3 - 2.2, 0.8, -0.065, 0.8, 0.0, -0.2, 0.5],
            vec![9.0 - 2.2, 0.8, -0.065, 0.2, 0.2, 0.1, 0.5],
        ];
        Self {
            coefficients,
            pattern_shift: vec![0.3, 0.2, 0.2, 0.1, 0.0, 0.0, 0.0, -0.2],
            covariance,
            pattern_scale: vec![1.0, 1.0, 1.0, 1.1, 0.9, 1.0, 1.1, 0.9],
        }
    }
}

impl TrueModel {
    fn validate(&self) -> Result<()> {
        if self.coefficients.len() != 5 || self.coefficients.iter().any(|c| c.len() != COVARIATE_DIM) {
            return Err(Error::invalid(format!(
                "true model needs 5 coefficient vectors of length {COVARIATE_DIM}"
            )));
        }
        if self.pattern_shift.len() != 8 || self.pattern_scale.len() != 8 {
            return Err(Error::invalid("true model needs 8 pattern shifts and scales"));
        }
        if self.pattern_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("pattern scales must be positive"));
        }
        let c = self.covariance_matrix()?;
        if c.cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("true covariance".into()));
        }
        Ok(())
    }

    fn covariance_matrix(&self) -> Result<DMatrix<f64>> {
        if self.covariance.len() != 5 || self.covariance.iter().any(|r| r.len() != 5) {
            return Err(Error::invalid("true covariance must be 5×5"));
        }
        Ok(DMatrix::from_fn(5, 5, |a, b| self.covariance[a][b]))
    }

    /// Covariance of the held components of `pattern`.
    pub fn pattern_covariance(&self, pattern: usize) -> Result<DMatrix<f64>> {
        let c = self.covariance_matrix()?;
        let held: Vec<usize> = ComponentCount::Five
            .pattern_flags(pattern)?
            .iter()
            .enumerate()
            .filter_map(|(l, &h)| h.then_some(l))
            .collect();
        let s = self.pattern_scale[pattern - 1];
        Ok(DMatrix::from_fn(held.len(), held.len(), |a, b| {
            s * c[(held[a], held[b])]
        }))
    }
}

/// How true amounts are turned into evidence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "ratio")]
pub enum BracketMode {
    /// Survey-style evidence: financial wealth on the overview range card
    /// narrowed by the detailed asset brackets, self-chosen brackets
    /// (sometimes exact) for real estate and professional wealth, a loose
    /// bracket for the remainder, the total wealth bracket, and the
    /// wealth-tax record.
    Survey,
    /// Every held component measured exactly.
    Point,
    /// Every held component in a bracket whose upper/lower ratio is
    /// `1 + ratio`, randomly positioned around the truth.
    Relative(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub population_size: usize,
    /// Expected number of responding households.
    pub target_sample: usize,
    pub components: ComponentCount,
    /// Pattern probabilities (index 0 is pattern 1); normalized on use.
    pub pattern_probs: Vec<f64>,
    pub model: TrueModel,
    pub brackets: BracketMode,
    pub design: DesignKind,
    /// Share of households in rich neighborhoods.
    pub rich_share: f64,
    /// Oversampling factor per cell, rich neighborhoods first, occupations
    /// in [`Occupation`] order.
    pub oversampling: [[f64; 4]; 2],
    /// Response rate per cell, same layout as `oversampling`.
    pub response: [[f64; 4]; 2],
    /// Households per PSU in the two-stage design.
    pub psu_size: usize,
    /// Households interviewed per sampled PSU in the two-stage design.
    pub psu_take: usize,
    pub tax_threshold: f64,
    /// True amounts are capped here so the domain cap never binds.
    pub max_amount: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            population_size: 20_000,
            target_sample: 2_000,
            components: ComponentCount::Five,
            pattern_probs: REFERENCE_PATTERN_SIZES.to_vec(),
            model: TrueModel::default(),
            brackets: BracketMode::Survey,
            design: DesignKind::StratifiedSrs,
            rich_share: 0.15,
            oversampling: [[4.0, 3.0, 3.0, 2.0], [2.0, 1.5, 1.5, 1.0]],
            response: [[0.60, 0.65, 0.70, 0.65], [0.70, 0.75, 0.80, 0.75]],
            psu_size: 10,
            psu_take: 5,
            tax_threshold: 720_000.0,
            max_amount: 5e7,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pattern_probs.len() != 8 || self.pattern_probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::invalid("pattern_probs needs 8 nonnegative entries"));
        }
        if !(self.pattern_probs.iter().sum::<f64>() > 0.0) {
            return Err(Error::invalid("pattern_probs sum to zero"));
        }
        if self.target_sample < 10 || self.target_sample >= self.population_size {
            return Err(Error::invalid(format!(
                "target sample {} must lie in [10, population size {})",
                self.target_sample, self.population_size
            )));
        }
        if !(0.0..1.0).contains(&self.rich_share) {
            return Err(Error::invalid("rich_share must lie in [0, 1)"));
        }
        let cells = self.oversampling.iter().flatten().zip(self.response.iter().flatten());
        for (f, r) in cells {
            if !(*f > 0.0) || !(*r > 0.0 && *r <= 1.0) {
                return Err(Error::invalid(
                    "oversampling factors must be positive and response rates in (0, 1]",
                ));
            }
        }
        if self.psu_take < 2 || self.psu_take > self.psu_size {
            return Err(Error::invalid("psu_take must lie in [2, psu_size]"));
        }
        if let BracketMode::Relative(r) = self.brackets {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::invalid("relative bracket ratio must be positive"));
            }
        }
        self.model.validate()
    }
}

/// Tax-relevant facts of a household that are not wealth components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaxProfile {
    pub debt: f64,
    /// True nondeductible professional wealth (at most the professional
    /// component).
    pub nondeductible: f64,
    /// Taxable fraction of the remainder.
    pub remainder_taxable: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub summary: SummarySpec,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticPopulation {
    pub population: Population,
    pub tax: Vec<TaxProfile>,
    pub occupation: Vec<Occupation>,
    pub rich: Vec<bool>,
    pub truth: Vec<TruthRow>,
}

impl SyntheticPopulation {
    pub fn truth_of(&self, spec: SummarySpec) -> Option<f64> {
        self.truth.iter().find(|t| t.summary == spec).map(|t| t.value)
    }
}

fn to_cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn floor_cents(x: f64) -> f64 {
    (x * 100.0).floor() / 100.0
}

fn ceil_cents(x: f64) -> f64 {
    (x * 100.0).ceil() / 100.0
}

fn cell_label(rich: bool, occ: Occupation) -> String {
    format!("{}-{}", if rich { "rich" } else { "other" }, occ.label())
}

fn cell_index(rich: bool, occ: Occupation) -> (usize, usize) {
    (
        if rich { 0 } else { 1 },
        Occupation::ALL.iter().position(|&o| o == occ).unwrap(),
    )
}

fn draw_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Taxable wealth of a unit under the synthetic tax rule.
pub fn taxable_wealth(unit: &PopulationUnit, tax: &TaxProfile) -> f64 {
    let w = &unit.wealth;
    w[0] + 0.8 * unit.shares[1] * w[1] + w[2] + tax.nondeductible + tax.remainder_taxable * w[4] - tax.debt
}

fn generate_unit(
    config: &GeneratorConfig,
    k: usize,
    seed: u64,
) -> Result<(PopulationUnit, TaxProfile, Occupation, bool)> {
    let id = format!("h{k:06}");
    let mut rng = substream(seed, 0, &id);
    let age: f64 = rng.random_range(25.0..85.0);
    let rich = rng.random::<f64>() < config.rich_share;
    let occ = if age >= 60.0 && rng.random::<f64>() < 0.7 {
        Occupation::Retired
    } else {
        [Occupation::SelfEmployed, Occupation::Executive, Occupation::Other]
            [draw_categorical(&[0.14, 0.21, 0.65], &mut rng)]
    };
    let a = age / 10.0;
    let x = vec![
        1.0,
        a,
        a * a,
        (occ == Occupation::SelfEmployed) as u8 as f64,
        (occ == Occupation::Executive) as u8 as f64,
        (occ == Occupation::Retired) as u8 as f64,
        rich as u8 as f64,
    ];
    let pattern = draw_categorical(&config.pattern_probs, &mut rng) + 1;
    let holdings = HoldingsVector::from_pattern(ComponentCount::Five, pattern)?;
    let held: Vec<usize> = holdings.held().collect();
    let mean = DVector::from_iterator(
        held.len(),
        held.iter().map(|&l| {
            let b = &config.model.coefficients[l];
            b.iter().zip(&x).map(|(b, x)| b * x).sum::<f64>() + config.model.pattern_shift[pattern - 1]
        }),
    );
    let logs = mvn(&mean, &config.model.pattern_covariance(pattern)?, &mut rng)?;
    let mut wealth = vec![0.0; 5];
    for (a, &l) in held.iter().enumerate() {
        wealth[l] = to_cents(logs[a].exp().clamp(1.0, config.max_amount));
    }
    let mut shares = vec![1.0; 5];
    if holdings.holds(1) && rng.random::<f64>() < 0.3 {
        shares[1] = 0.5;
    }
    let debt = if holdings.holds(1) && rng.random::<f64>() < 0.4 {
        to_cents(0.3 * shares[1] * wealth[1] * rng.random::<f64>())
    } else {
        0.0
    };
    let nondeductible = if holdings.holds(3) && rng.random::<f64>() < 0.5 {
        floor_cents(wealth[3] * rng.random::<f64>()).max(0.01)
    } else {
        0.0
    };
    let tax = TaxProfile {
        debt,
        nondeductible,
        remainder_taxable: rng.random::<f64>(),
    };
    let (ri, oi) = cell_index(rich, occ);
    let unit = PopulationUnit {
        id,
        wealth,
        holdings,
        shares,
        covariates: (0..5).map(|l| holdings.holds(l).then(|| x.clone())).collect(),
        stratum: cell_label(rich, occ),
        psu: String::new(),
        size_measure: config.oversampling[ri][oi],
    };
    Ok((unit, tax, occ, rich))
}

/// Draws a population and evaluates the default summaries on it exactly.
pub fn generate_population(config: &GeneratorConfig, seed: u64) -> Result<SyntheticPopulation> {
    config.validate()?;
    let drawn = (0..config.population_size)
        .into_par_iter()
        .map(|k| generate_unit(config, k, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut units = Vec::with_capacity(drawn.len());
    let mut tax = Vec::with_capacity(drawn.len());
    let mut occupation = Vec::with_capacity(drawn.len());
    let mut rich = Vec::with_capacity(drawn.len());
    for (u, t, o, r) in drawn {
        units.push(u);
        tax.push(t);
        occupation.push(o);
        rich.push(r);
    }
    // PSUs: consecutive runs of `psu_size` households within each cell.
    let mut by_cell: std::collections::BTreeMap<String, Vec<usize>> = Default::default();
    for (k, u) in units.iter().enumerate() {
        by_cell.entry(u.stratum.clone()).or_default().push(k);
    }
    for (cell, members) in &by_cell {
        for (j, &k) in members.iter().enumerate() {
            units[k].psu = format!("{cell}/{:04}", j / config.psu_size);
        }
    }
    let population = Population {
        components: ComponentCount::Five,
        units,
    };
    let totals = WeightedSample::unweighted(population.totals())?;
    let truth = SummarySpec::default_set()
        .into_iter()
        .map(|s| {
            Ok(TruthRow {
                summary: s,
                value: evaluate_summary(s, &totals)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticPopulation {
        population,
        tax,
        occupation,
        rich,
        truth,
    })
}

/// Bracket on a grid of lower ends; the last bracket is open.
pub fn grid_bracket(grid: &[f64], value: f64) -> Interval {
    let i = grid.iter().rposition(|&g| g <= value).unwrap_or(0);
    Interval::new(grid[i], grid.get(i + 1).copied().unwrap_or(f64::INFINITY))
}

/// Self-reported bracket around `value`: width ratio drawn from `ratios`,
/// random position, ends rounded outward to two significant digits.
fn chosen_bracket<R: Rng + ?Sized>(value: f64, ratios: &[f64], rng: &mut R) -> Interval {
    let ratio = ratios[rng.random_range(0..ratios.len())];
    let u: f64 = rng.random();
    let lo = value * ratio.powf(-u);
    let hi = value * ratio.powf(1.0 - u);
    let unit = |x: f64| 10f64.powf((x.log10().floor() - 1.0).max(-2.0));
    let lo = ((lo / unit(lo)).floor() * unit(lo)).min(value);
    let hi = ((hi / unit(hi)).ceil() * unit(hi)).max(value);
    Interval::new(floor_cents(lo), ceil_cents(hi))
}

/// Bracket ratios of self-reported amounts.
const CHOSEN_RATIOS: [f64; 3] = [1.25, 1.5, 2.0];

/// The remainder is reported loosely.
const REMAINDER_RATIOS: [f64; 3] = [2.0, 3.0, 4.0];

/// Share of exact answers for real estate amounts.
const REAL_ESTATE_POINT_SHARE: f64 = 0.12;

fn intersect(a: Interval, b: Interval) -> Interval {
    Interval::new(a.lo.max(b.lo), a.hi.min(b.hi))
}

fn relative_bracket<R: Rng + ?Sized>(value: f64, ratio: f64, rng: &mut R) -> Interval {
    let u: f64 = rng.random();
    let lo = floor_cents(value * (1.0 + ratio).powf(-u)).min(value);
    let hi = ceil_cents(value * (1.0 + ratio).powf(1.0 - u)).max(value);
    Interval::new(lo, hi)
}

/// Evidence for one sampled household. The true wealth vector always lies
/// in the resulting domain.
pub fn censor(unit: &PopulationUnit, tax: &TaxProfile, config: &GeneratorConfig, seed: u64) -> CensoringEvidence {
    let mut rng = substream(seed, 2, &unit.id);
    let w = &unit.wealth;
    let held = |l: usize| unit.holdings.holds(l);
    match config.brackets {
        BracketMode::Point => CensoringEvidence {
            component_bounds: (0..5).map(|l| held(l).then(|| Interval::point(w[l]))).collect(),
            total_bracket: None,
            isf: None,
        },
        BracketMode::Relative(r) => CensoringEvidence {
            component_bounds: (0..5)
                .map(|l| held(l).then(|| relative_bracket(w[l], r, &mut rng)))
                .collect(),
            total_bracket: None,
            isf: None,
        },
        BracketMode::Survey => {
            let component_bounds = (0..5)
                .map(|l| {
                    held(l).then(|| match l {
                        // overview card intersected with the sum of the
                        // detailed asset brackets
                        0 => intersect(
                            grid_bracket(&OVERVIEW_GRID, w[0]),
                            chosen_bracket(w[0], &CHOSEN_RATIOS, &mut rng),
                        ),
                        1 | 2 if rng.random::<f64>() < REAL_ESTATE_POINT_SHARE => Interval::point(w[l]),
                        1..=3 => chosen_bracket(w[l], &CHOSEN_RATIOS, &mut rng),
                        _ => chosen_bracket(w[l], &REMAINDER_RATIOS, &mut rng),
                    })
                })
                .collect();
            let total = total_wealth(&unit.holdings, &unit.shares, w);
            let nd = (tax.nondeductible > 0.0).then(|| {
                let b = chosen_bracket(tax.nondeductible, &CHOSEN_RATIOS, &mut rng);
                NondeductibleBounds { min: b.lo, max: b.hi }
            });
            let pays = taxable_wealth(unit, tax) > config.tax_threshold;
            CensoringEvidence {
                component_bounds,
                total_bracket: Some(grid_bracket(&OVERVIEW_GRID, total)),
                isf: Some(IsfRecord {
                    pays_tax: pays,
                    debt: tax.debt,
                    i_flag: nd.is_some(),
                    nd,
                }),
            }
        }
    }
}

/// Units selected by a design, with their pre-nonresponse inclusion
/// probabilities and design labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleDraw {
    pub units: Vec<usize>,
    pub inclusion_probs: Vec<f64>,
    pub strata: Vec<String>,
    pub psus: Vec<String>,
    pub design: SurveyDesign,
}

fn cells(pop: &SyntheticPopulation) -> std::collections::BTreeMap<String, Vec<usize>> {
    let mut m: std::collections::BTreeMap<String, Vec<usize>> = Default::default();
    for (k, u) in pop.population.units.iter().enumerate() {
        m.entry(u.stratum.clone()).or_default().push(k);
    }
    m
}

fn mean_response(pop: &SyntheticPopulation, config: &GeneratorConfig, weight: impl Fn(usize) -> f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..pop.population.len() {
        let (ri, oi) = cell_index(pop.rich[k], pop.occupation[k]);
        num += weight(k) * config.response[ri][oi];
        den += weight(k);
    }
    num / den
}

/// Fixed-size inclusion probabilities proportional to `x`, with units whose
/// probability would exceed 1 taken with certainty.
pub fn pps_probabilities(x: &[f64], n: usize) -> Result<Vec<f64>> {
    if n > x.len() {
        return Err(Error::invalid(format!(
            "sample size {n} exceeds population size {}",
            x.len()
        )));
    }
    let mut certain = vec![false; x.len()];
    loop {
        let remaining = n - certain.iter().filter(|c| **c).count();
        let mass: f64 = x.iter().zip(&certain).filter(|(_, c)| !**c).map(|(v, _)| v).sum();
        let pi: Vec<f64> = x
            .iter()
            .zip(&certain)
            .map(|(v, c)| if *c { 1.0 } else { remaining as f64 * v / mass })
            .collect();
        let mut changed = false;
        for (k, p) in pi.iter().enumerate() {
            if !certain[k] && *p >= 1.0 {
                certain[k] = true;
                changed = true;
            }
        }
        if !changed {
            return Ok(pi);
        }
    }
}

/// Systematic sampling over a random ordering of the units.
pub fn systematic_pps<R: Rng + ?Sized>(pi: &[f64], rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pi.len()).collect();
    order.shuffle(rng);
    let start: f64 = rng.random();
    let mut cum = 0.0;
    let mut next = start;
    let mut chosen = Vec::new();
    for k in order {
        cum += pi[k];
        while next < cum - 1e-12 {
            chosen.push(k);
            next += 1.0;
        }
    }
    chosen.sort_unstable();
    chosen.dedup();
    chosen
}

/// Draws the sample before nonresponse.
pub fn draw_sample(pop: &SyntheticPopulation, config: &GeneratorConfig, rng: &mut StreamRng) -> Result<SampleDraw> {
    let n_pop = pop.population.len();
    let units = &pop.population.units;
    let cell_map = cells(pop);
    match config.design {
        DesignKind::Srswor => {
            let n = (config.target_sample as f64 / mean_response(pop, config, |_| 1.0)).round() as usize;
            let n = n.min(n_pop);
            let mut chosen = rand::seq::index::sample(rng, n_pop, n).into_vec();
            chosen.sort_unstable();
            Ok(SampleDraw {
                inclusion_probs: vec![n as f64 / n_pop as f64; n],
                strata: vec!["all".into(); n],
                psus: chosen.iter().map(|&k| units[k].id.clone()).collect(),
                units: chosen,
                design: SurveyDesign::new(DesignKind::Srswor).with_strata(vec![StratumInfo {
                    id: "all".into(),
                    population_size: Some(n_pop as f64),
                    allocation: Some(n),
                }]),
            })
        }
        DesignKind::StratifiedSrs => {
            let size = |k: usize| units[k].size_measure;
            let scale =
                config.target_sample as f64 / (mean_response(pop, config, size) * (0..n_pop).map(size).sum::<f64>());
            let mut draw = SampleDraw {
                units: Vec::new(),
                inclusion_probs: Vec::new(),
                strata: Vec::new(),
                psus: Vec::new(),
                design: SurveyDesign::new(DesignKind::StratifiedSrs),
            };
            let mut strata = Vec::new();
            for (cell, members) in &cell_map {
                let big = members.len();
                let n = ((scale * units[members[0]].size_measure * big as f64).round() as usize).clamp(2.min(big), big);
                let mut picked: Vec<usize> = rand::seq::index::sample(rng, big, n)
                    .into_iter()
                    .map(|i| members[i])
                    .collect();
                picked.sort_unstable();
                for k in picked {
                    draw.units.push(k);
                    draw.inclusion_probs.push(n as f64 / big as f64);
                    draw.strata.push(cell.clone());
                    draw.psus.push(units[k].id.clone());
                }
                strata.push(StratumInfo {
                    id: cell.clone(),
                    population_size: Some(big as f64),
                    allocation: Some(n),
                });
            }
            draw.design = draw.design.with_strata(strata);
            Ok(draw)
        }
        DesignKind::UnequalProbFixedSize => {
            let x: Vec<f64> = units.iter().map(|u| u.size_measure).collect();
            let pi0 = pps_probabilities(&x, config.target_sample)?;
            let n = (config.target_sample as f64 / mean_response(pop, config, |k| pi0[k])).round() as usize;
            let pi = pps_probabilities(&x, n.min(n_pop))?;
            let chosen = systematic_pps(&pi, rng);
            Ok(SampleDraw {
                inclusion_probs: chosen.iter().map(|&k| pi[k]).collect(),
                strata: vec!["all".into(); chosen.len()],
                psus: chosen.iter().map(|&k| units[k].id.clone()).collect(),
                units: chosen,
                design: SurveyDesign::new(DesignKind::UnequalProbFixedSize).with_strata(vec![StratumInfo {
                    id: "all".into(),
                    population_size: Some(n_pop as f64),
                    allocation: None,
                }]),
            })
        }
        DesignKind::TwoStageCluster => {
            let size = |k: usize| units[k].size_measure;
            let take = config.psu_take as f64 / config.psu_size as f64;
            let scale = config.target_sample as f64
                / (take * mean_response(pop, config, size) * (0..n_pop).map(size).sum::<f64>());
            let mut draw = SampleDraw {
                units: Vec::new(),
                inclusion_probs: Vec::new(),
                strata: Vec::new(),
                psus: Vec::new(),
                design: SurveyDesign::new(DesignKind::TwoStageCluster),
            };
            let mut strata = Vec::new();
            for (cell, members) in &cell_map {
                let mut psu_map: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
                for &k in members {
                    psu_map.entry(units[k].psu.as_str()).or_default().push(k);
                }
                let psus: Vec<(&str, Vec<usize>)> = psu_map.into_iter().collect();
                let big = psus.len();
                let m = ((scale * units[members[0]].size_measure * big as f64).round() as usize).clamp(2.min(big), big);
                let mut picked = rand::seq::index::sample(rng, big, m).into_vec();
                picked.sort_unstable();
                for i in picked {
                    let (label, hh) = &psus[i];
                    let t = config.psu_take.min(hh.len());
                    let mut within: Vec<usize> = rand::seq::index::sample(rng, hh.len(), t)
                        .into_iter()
                        .map(|j| hh[j])
                        .collect();
                    within.sort_unstable();
                    for k in within {
                        draw.units.push(k);
                        draw.inclusion_probs
                            .push((m as f64 / big as f64) * (t as f64 / hh.len() as f64));
                        draw.strata.push(cell.clone());
                        draw.psus.push(label.to_string());
                    }
                }
                strata.push(StratumInfo {
                    id: cell.clone(),
                    population_size: Some(big as f64),
                    allocation: Some(m),
                });
            }
            draw.design = draw.design.with_strata(strata);
            Ok(draw)
        }
    }
}

/// A generated population, the responding sample as a dataset, and the
/// population truth.
#[derive(Clone, Debug)]
pub struct SyntheticExperiment {
    pub population: SyntheticPopulation,
    pub dataset: SurveyDataset,
    /// Population indices of the respondents, in dataset order.
    pub respondents: Vec<usize>,
}

/// Sample draw, unit nonresponse with weight adjustment within response
/// cells, and censoring of the respondents.
pub fn sample_dataset(
    pop: &SyntheticPopulation,
    config: &GeneratorConfig,
    seed: u64,
) -> Result<(SurveyDataset, Vec<usize>)> {
    config.validate()?;
    let mut rng = rng_stream(seed, 1);
    let draw = draw_sample(pop, config, &mut rng)?;
    let units = &pop.population.units;
    let responded: Vec<bool> = draw
        .units
        .iter()
        .map(|&k| {
            let (ri, oi) = cell_index(pop.rich[k], pop.occupation[k]);
            rng.random::<f64>() < config.response[ri][oi]
        })
        .collect();
    let base: Vec<f64> = draw.inclusion_probs.iter().map(|p| 1.0 / p).collect();
    let cell_of: Vec<String> = draw.units.iter().map(|&k| units[k].stratum.clone()).collect();
    let weights = nonresponse_adjust(&base, &cell_of, &responded)?;

    let mut design = draw.design.clone();
    let mut rates: std::collections::BTreeMap<String, (f64, f64)> = Default::default();
    for (i, c) in cell_of.iter().enumerate() {
        let e = rates.entry(c.clone()).or_default();
        e.0 += base[i];
        if responded[i] {
            e.1 += base[i];
        }
    }
    design.response_rates = rates
        .into_iter()
        .map(|(stratum, (all, resp))| ResponseRate {
            stratum,
            rate: resp / all,
        })
        .collect();

    let kept: Vec<usize> = (0..draw.units.len()).filter(|&i| responded[i]).collect();
    if config.design == DesignKind::UnequalProbFixedSize {
        design.inclusion_probs = Some(weights.iter().map(|w| (1.0 / w).min(1.0)).collect());
    }
    let records: Vec<HouseholdRecord> = kept
        .par_iter()
        .zip(weights.par_iter())
        .map(|(&i, &w)| {
            let k = draw.units[i];
            let u = &units[k];
            HouseholdRecord {
                id: u.id.clone(),
                weight: w,
                stratum: draw.strata[i].clone(),
                psu: draw.psus[i].clone(),
                holdings: u.holdings,
                shares: u.shares.clone(),
                covariates: u.covariates.clone(),
                evidence: censor(u, &pop.tax[k], config, seed),
            }
        })
        .collect();
    let respondents: Vec<usize> = kept.iter().map(|&i| draw.units[i]).collect();
    let ds = SurveyDataset::new(ComponentCount::Five, design, records)?;
    let ds = match config.components {
        ComponentCount::Five => ds,
        ComponentCount::Four => ds.aggregate_real_estate()?,
    };
    // Dataset records are sorted by id, as are population ids.
    let mut respondents = respondents;
    respondents.sort_unstable();
    Ok((ds, respondents))
}

/// Population, sample and evidence from one seed.
pub fn simulate(config: &GeneratorConfig, seed: u64) -> Result<SyntheticExperiment> {
    let population = generate_population(config, seed)?;
    let (dataset, respondents) = sample_dataset(&population, config, seed)?;
    Ok(SyntheticExperiment {
        population,
        dataset,
        respondents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::censoring::{build_domain, DomainConfig};

    fn small(design: DesignKind, brackets: BracketMode) -> GeneratorConfig {
        GeneratorConfig {
            population_size: 4_000,
            target_sample: 600,
            design,
            brackets,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn degenerate_model_gives_unit_wealth() {
        let mut cfg = small(DesignKind::Srswor, BracketMode::Point);
        cfg.model.coefficients = vec![vec![0.0; COVARIATE_DIM]; 5];
        cfg.model.pattern_shift = vec![0.0; 8];
        cfg.model.covariance = (0..5)
            .map(|a| (0..5).map(|b| if a == b { 1e-300 } else { 0.0 }).collect())
            .collect();
        cfg.pattern_probs = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let pop = generate_population(&cfg, 1).unwrap();
        assert!(pop
            .population
            .units
            .iter()
            .all(|u| u.wealth[0] == 1.0 && u.wealth[4] == 1.0));
        assert_eq!(pop.truth_of(SummarySpec::Gini).unwrap(), 0.0);
    }

    #[test]
    fn pattern_shares_match_probabilities() {
        let cfg = GeneratorConfig::default();
        let pop = generate_population(&cfg, 7).unwrap();
        let n = pop.population.len() as f64;
        let total: f64 = REFERENCE_PATTERN_SIZES.iter().sum();
        let mut counts = [0.0; 8];
        for u in &pop.population.units {
            counts[u.holdings.pattern() - 1] += 1.0;
        }
        for p in 0..8 {
            let prob = REFERENCE_PATTERN_SIZES[p] / total;
            let se = (prob * (1.0 - prob) / n).sqrt();
            assert!((counts[p] / n - prob).abs() < 4.0 * se, "pattern {}", p + 1);
        }
    }

    #[test]
    fn same_seed_same_population() {
        let cfg = small(DesignKind::Srswor, BracketMode::Survey);
        let a = generate_population(&cfg, 3).unwrap();
        let b = generate_population(&cfg, 3).unwrap();
        assert_eq!(a.population.units, b.population.units);
        assert_eq!(a.truth, b.truth);
        let c = generate_population(&cfg, 4).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn grid_examples() {
        assert_eq!(grid_bracket(&CHECKING_GRID, 800.0), Interval::new(750.0, 1500.0));
        assert_eq!(grid_bracket(&CHECKING_GRID, 750.0), Interval::new(750.0, 1500.0));
        assert_eq!(
            grid_bracket(&OVERVIEW_GRID, 1e6),
            Interval::new(450_000.0, f64::INFINITY)
        );
        assert_eq!(grid_bracket(&OVERVIEW_GRID, 0.5), Interval::new(0.0, 3_000.0));
    }

    #[test]
    fn truth_is_inside_every_domain() {
        for (design, brackets, comps) in [
            (DesignKind::StratifiedSrs, BracketMode::Survey, ComponentCount::Five),
            (DesignKind::StratifiedSrs, BracketMode::Survey, ComponentCount::Four),
            (DesignKind::Srswor, BracketMode::Relative(0.3), ComponentCount::Five),
        ] {
            let mut cfg = small(design, brackets);
            cfg.components = comps;
            let exp = simulate(&cfg, 11).unwrap();
            let config = DomainConfig::default();
            for (r, &k) in exp.dataset.records.iter().zip(&exp.respondents) {
                let u = &exp.population.population.units[k];
                assert_eq!(r.id, u.id);
                let dom = build_domain(&r.id, &r.holdings, &r.shares, &r.evidence, &config).unwrap();
                let w: Vec<f64> = match comps {
                    ComponentCount::Five => u.wealth.clone(),
                    ComponentCount::Four => vec![
                        u.wealth[0],
                        u.shares[1] * u.wealth[1] + u.wealth[2],
                        u.wealth[3],
                        u.wealth[4],
                    ],
                };
                assert!(dom.contains(&w), "{} {:?}", r.id, r.evidence);
            }
        }
    }

    #[test]
    fn tax_payers_exist_and_are_consistent() {
        let cfg = small(DesignKind::StratifiedSrs, BracketMode::Survey);
        let exp = simulate(&cfg, 5).unwrap();
        let payers = exp
            .dataset
            .records
            .iter()
            .filter(|r| r.evidence.isf.as_ref().unwrap().pays_tax)
            .count();
        assert!(payers > 0 && payers < exp.dataset.len() / 2, "{payers}");
    }

    #[test]
    fn srswor_weights_before_nonresponse() {
        let cfg = small(DesignKind::Srswor, BracketMode::Point);
        let pop = generate_population(&cfg, 2).unwrap();
        let draw = draw_sample(&pop, &cfg, &mut rng_stream(2, 1)).unwrap();
        let n = draw.units.len() as f64;
        assert!(draw.inclusion_probs.iter().all(|&p| p == n / 4_000.0));
    }

    #[test]
    fn oversampling_factor_four_has_four_times_base_probability() {
        let cfg = GeneratorConfig::default();
        let pop = generate_population(&cfg, 9).unwrap();
        let draw = draw_sample(&pop, &cfg, &mut rng_stream(9, 1)).unwrap();
        let pi_of = |cell: &str| {
            draw.strata
                .iter()
                .zip(&draw.inclusion_probs)
                .find(|(s, _)| *s == cell)
                .map(|(_, p)| *p)
                .unwrap()
        };
        let ratio = pi_of("rich-self") / pi_of("other-other");
        // allocation rounding in a stratum of a few hundred households
        assert!((ratio - 4.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn default_sample_size_is_about_two_thousand() {
        let exp = simulate(&GeneratorConfig::default(), 1).unwrap();
        assert_eq!(exp.population.population.len(), 20_000);
        let m = exp.dataset.len();
        assert!((1_850..=2_150).contains(&m), "{m}");
        let sum: usize = exp.dataset.pattern_sizes().iter().sum();
        assert_eq!(sum, m);
    }

    #[test]
    fn pps_probabilities_sum_to_n_and_cap_at_one() {
        let x = [100.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let pi = pps_probabilities(&x, 3).unwrap();
        assert_eq!(pi[0], 1.0);
        assert!((pi.iter().sum::<f64>() - 3.0).abs() < 1e-12);
        let mut rng = rng_stream(0, 0);
        for _ in 0..100 {
            let s = systematic_pps(&pi, &mut rng);
            assert_eq!(s.len(), 3);
            assert!(s.contains(&0));
        }
    }

    #[test]
    fn ht_total_is_unbiased_over_replicates() {
        let cfg = small(DesignKind::StratifiedSrs, BracketMode::Point);
        let pop = generate_population(&cfg, 21).unwrap();
        let truth: f64 = pop.population.units.iter().map(|u| u.wealth[0]).sum();
        let reps = 10_000;
        let est: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let draw = draw_sample(&pop, &cfg, &mut rng_stream(r, 1)).unwrap();
                draw.units
                    .iter()
                    .zip(&draw.inclusion_probs)
                    .map(|(&k, p)| pop.population.units[k].wealth[0] / p)
                    .sum()
            })
            .collect();
        let mean = est.iter().sum::<f64>() / reps as f64;
        let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!(
            (mean - truth).abs() < 4.0 * sd / (reps as f64).sqrt(),
            "{mean} vs {truth}"
        );
    }

    #[test]
    fn all_designs_produce_valid_datasets() {
        for design in [
            DesignKind::Srswor,
            DesignKind::StratifiedSrs,
            DesignKind::UnequalProbFixedSize,
            DesignKind::TwoStageCluster,
        ] {
            let exp = simulate(&small(design, BracketMode::Point), 4).unwrap();
            let w: f64 = exp.dataset.weights().iter().sum();
            assert!((w / 4_000.0 - 1.0).abs() < 0.15, "{design:?} total weight {w}");
            assert!(
                exp.dataset.len() > 450 && exp.dataset.len() < 750,
                "{design:?} {}",
                exp.dataset.len()
            );
        }
    }
}
