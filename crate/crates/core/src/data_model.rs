//! Shared domain types: holdings patterns, household records, populations
//! and survey designs.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::censoring::CensoringEvidence;
use crate::error::{Error, Result};

/// Largest supported number of wealth components.
pub const MAX_COMPONENTS: usize = 5;

/// Number of wealth components in a dataset. This is a dataset-level
/// constant; records with different counts are never mixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComponentCount {
    /// Financial, real estate (residence share plus other), professional, remainder.
    #[serde(rename = "4")]
    Four,
    /// Financial, principal residence, other real estate, professional, remainder.
    #[serde(rename = "5")]
    Five,
}

// Optional-component flags in pattern order. Components 1 and n are always
// held, so only the middle flags vary.
const FIVE_PATTERNS: [[bool; 3]; 8] = [
    [true, true, true],
    [true, true, false],
    [true, false, true],
    [false, true, true],
    [true, false, false],
    [false, true, false],
    [false, false, true],
    [false, false, false],
];

const FOUR_PATTERNS: [[bool; 2]; 4] = [[true, true], [true, false], [false, true], [false, false]];

impl ComponentCount {
    pub fn from_len(n: usize) -> Result<Self> {
        match n {
            4 => Ok(ComponentCount::Four),
            5 => Ok(ComponentCount::Five),
            _ => Err(Error::invalid(format!("component count must be 4 or 5, got {n}"))),
        }
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> usize {
        match self {
            ComponentCount::Four => 4,
            ComponentCount::Five => 5,
        }
    }

    pub fn pattern_count(self) -> usize {
        match self {
            ComponentCount::Four => 4,
            ComponentCount::Five => 8,
        }
    }

    /// Index of the component carrying a fractional ownership share
    /// (the principal residence). The 4-component model has none.
    pub fn share_component(self) -> Option<usize> {
        match self {
            ComponentCount::Five => Some(1),
            ComponentCount::Four => None,
        }
    }

    /// Index of the professional-wealth component.
    pub fn professional_component(self) -> usize {
        match self {
            ComponentCount::Five => 3,
            ComponentCount::Four => 2,
        }
    }

    /// Full flag vector (length `len()`) of a 1-based pattern index.
    pub fn pattern_flags(self, pattern: usize) -> Result<Vec<bool>> {
        if pattern == 0 || pattern > self.pattern_count() {
            return Err(Error::invalid(format!(
                "pattern index {pattern} outside 1..={}",
                self.pattern_count()
            )));
        }
        let middle: &[bool] = match self {
            ComponentCount::Five => &FIVE_PATTERNS[pattern - 1],
            ComponentCount::Four => &FOUR_PATTERNS[pattern - 1],
        };
        let mut flags = Vec::with_capacity(self.len());
        flags.push(true);
        flags.extend_from_slice(middle);
        flags.push(true);
        Ok(flags)
    }
}

impl fmt::Display for ComponentCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.len())
    }
}

/// Which wealth components a household holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HoldingsVector {
    count: ComponentCount,
    flags: [bool; MAX_COMPONENTS],
    pattern: usize,
}

impl HoldingsVector {
    pub fn new(count: ComponentCount, flags: &[bool]) -> Result<Self> {
        let pattern = pattern_index_of(count, flags)?;
        let mut f = [false; MAX_COMPONENTS];
        f[..flags.len()].copy_from_slice(flags);
        Ok(Self {
            count,
            flags: f,
            pattern,
        })
    }

    pub fn from_pattern(count: ComponentCount, pattern: usize) -> Result<Self> {
        let flags = count.pattern_flags(pattern)?;
        Self::new(count, &flags)
    }

    pub fn count(&self) -> ComponentCount {
        self.count
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags[..self.count.len()]
    }

    pub fn holds(&self, component: usize) -> bool {
        component < self.count.len() && self.flags[component]
    }

    /// Held component indices in ascending order.
    pub fn held(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags().iter().enumerate().filter(|(_, &h)| h).map(|(l, _)| l)
    }

    pub fn n_held(&self) -> usize {
        self.flags().iter().filter(|&&h| h).count()
    }

    /// 1-based pattern index.
    pub fn pattern(&self) -> usize {
        self.pattern
    }
}

/// Maps a holdings flag vector to its 1-based pattern index.
pub fn pattern_index(d: &HoldingsVector) -> usize {
    d.pattern
}

/// Fallible form of [`pattern_index`] on raw flags.
pub fn pattern_index_of(count: ComponentCount, flags: &[bool]) -> Result<usize> {
    let n = count.len();
    if flags.len() != n {
        return Err(Error::invalid(format!(
            "holdings vector has {} flags, expected {n}",
            flags.len()
        )));
    }
    if !flags[0] || !flags[n - 1] {
        return Err(Error::invalid("financial wealth and remainder must always be held"));
    }
    let middle = &flags[1..n - 1];
    let found = match count {
        ComponentCount::Five => FIVE_PATTERNS.iter().position(|p| p[..] == *middle),
        ComponentCount::Four => FOUR_PATTERNS.iter().position(|p| p[..] == *middle),
    };
    found
        .map(|i| i + 1)
        .ok_or_else(|| Error::invalid("unknown holdings pattern"))
}

/// Total wealth `Σ s^l w^l`; components that are not held contribute 0.
pub fn total_wealth(holdings: &HoldingsVector, shares: &[f64], wealth: &[f64]) -> f64 {
    holdings.held().map(|l| shares[l] * wealth[l]).sum()
}

/// One sampled (responding) household.
#[derive(Clone, Debug, PartialEq)]
pub struct HouseholdRecord {
    pub id: String,
    pub weight: f64,
    pub stratum: String,
    pub psu: String,
    pub holdings: HoldingsVector,
    pub shares: Vec<f64>,
    /// Covariates per component, present exactly for held components.
    pub covariates: Vec<Option<Vec<f64>>>,
    pub evidence: CensoringEvidence,
}

impl HouseholdRecord {
    pub fn components(&self) -> ComponentCount {
        self.holdings.count()
    }

    pub fn validate(&self) -> Result<()> {
        let count = self.components();
        let n = count.len();
        let bad = |m: String| Err(Error::invalid(format!("household {}: {m}", self.id)));
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return bad(format!("weight must be positive, got {}", self.weight));
        }
        if self.shares.len() != n {
            return bad(format!("expected {n} shares, got {}", self.shares.len()));
        }
        for (l, &s) in self.shares.iter().enumerate() {
            let fractional = count.share_component() == Some(l);
            if fractional {
                if !(s > 0.0 && s <= 1.0) {
                    return bad(format!("share of component {} must lie in (0, 1], got {s}", l + 1));
                }
            } else if s != 1.0 {
                return bad(format!("share of component {} must be 1, got {s}", l + 1));
            }
        }
        if self.covariates.len() != n {
            return bad(format!("expected {n} covariate slots, got {}", self.covariates.len()));
        }
        for (l, cov) in self.covariates.iter().enumerate() {
            match (self.holdings.holds(l), cov) {
                (true, Some(x)) => {
                    if x.first() != Some(&1.0) {
                        return bad(format!("covariates of component {} must start with 1", l + 1));
                    }
                    if x.iter().any(|v| !v.is_finite()) {
                        return bad(format!("covariates of component {} are not finite", l + 1));
                    }
                }
                (true, None) => {
                    return bad(format!("held component {} has no covariates", l + 1));
                }
                (false, Some(_)) => {
                    return bad(format!("component {} is not held but has covariates", l + 1));
                }
                (false, None) => {}
            }
        }
        self.evidence.validate(&self.holdings, &self.id)
    }

    /// Collapses the principal residence and other real estate into one
    /// real-estate component, giving the 4-component representation.
    /// The aggregated component uses the household-level covariates of the
    /// financial component.
    pub fn aggregate_real_estate(&self) -> Result<HouseholdRecord> {
        if self.components() != ComponentCount::Five {
            return Err(Error::invalid("aggregation requires a 5-component record"));
        }
        let f = self.holdings.flags();
        let real_estate = f[1] || f[2];
        let holdings = HoldingsVector::new(ComponentCount::Four, &[true, real_estate, f[3], true])?;
        let covariates = vec![
            self.covariates[0].clone(),
            real_estate.then(|| self.covariates[0].clone()).flatten(),
            self.covariates[3].clone(),
            self.covariates[4].clone(),
        ];
        Ok(HouseholdRecord {
            id: self.id.clone(),
            weight: self.weight,
            stratum: self.stratum.clone(),
            psu: self.psu.clone(),
            holdings,
            shares: vec![1.0; 4],
            covariates,
            evidence: self.evidence.aggregate_real_estate(&self.holdings, self.shares[1]),
        })
    }
}

/// One unit of a finite population with its true wealth.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationUnit {
    pub id: String,
    pub wealth: Vec<f64>,
    pub holdings: HoldingsVector,
    pub shares: Vec<f64>,
    pub covariates: Vec<Option<Vec<f64>>>,
    pub stratum: String,
    pub psu: String,
    /// Size measure for unequal-probability designs.
    pub size_measure: f64,
}

impl PopulationUnit {
    pub fn total_wealth(&self) -> f64 {
        total_wealth(&self.holdings, &self.shares, &self.wealth)
    }
}

#[derive(Clone, Debug)]
pub struct Population {
    pub components: ComponentCount,
    pub units: Vec<PopulationUnit>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.units.iter().map(PopulationUnit::total_wealth).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Srswor,
    StratifiedSrs,
    UnequalProbFixedSize,
    TwoStageCluster,
}

/// Design information for one stratum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumInfo {
    pub id: String,
    /// Population count of units (or of PSUs for two-stage designs). When
    /// absent it is estimated by the sum of weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population_size: Option<f64>,
    /// Planned sample size (units, or PSUs for two-stage designs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTotal {
    pub variable: String,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseRate {
    pub stratum: String,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurveyDesign {
    pub kind: DesignKind,
    #[serde(default)]
    pub strata: Vec<StratumInfo>,
    /// First-order inclusion probabilities of the sampled units, in record
    /// order. When absent they are taken as inverse weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inclusion_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calibration_totals: Vec<CalibrationTotal>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub response_rates: Vec<ResponseRate>,
}

impl SurveyDesign {
    pub fn new(kind: DesignKind) -> Self {
        Self {
            kind,
            strata: Vec::new(),
            inclusion_probs: None,
            calibration_totals: Vec::new(),
            response_rates: Vec::new(),
        }
    }

    pub fn with_strata(mut self, strata: Vec<StratumInfo>) -> Self {
        self.strata = strata;
        self
    }

    pub fn stratum(&self, id: &str) -> Option<&StratumInfo> {
        self.strata.iter().find(|s| s.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(pi) = &self.inclusion_probs {
            if let Some(p) = pi.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
                return Err(Error::invalid(format!("inclusion probability {p} outside (0, 1]")));
            }
            // After nonresponse adjustment the respondents' probabilities are
            // the inverse adjusted weights and need not sum to an integer.
            if self.kind == DesignKind::UnequalProbFixedSize && self.strata.len() <= 1 && self.response_rates.is_empty()
            {
                let sum: f64 = pi.iter().sum();
                if (sum - sum.round()).abs() > 1e-6 * sum.max(1.0) {
                    return Err(Error::invalid(format!(
                        "fixed-size design inclusion probabilities sum to {sum}, not an integer sample size"
                    )));
                }
            }
        }
        for r in &self.response_rates {
            if !(r.rate > 0.0 && r.rate <= 1.0) {
                return Err(Error::invalid(format!(
                    "response rate {} of stratum {} outside (0, 1]",
                    r.rate, r.stratum
                )));
            }
        }
        let mut seen = HashSet::new();
        for s in &self.strata {
            if !seen.insert(&s.id) {
                return Err(Error::invalid(format!("duplicate stratum {}", s.id)));
            }
        }
        Ok(())
    }
}

/// A validated collection of household records sharing one component count
/// and one survey design. Records are kept sorted by id so every reduction
/// over households has a canonical order.
#[derive(Clone, Debug)]
pub struct SurveyDataset {
    pub components: ComponentCount,
    pub design: SurveyDesign,
    pub records: Vec<HouseholdRecord>,
}

impl SurveyDataset {
    pub fn new(components: ComponentCount, design: SurveyDesign, mut records: Vec<HouseholdRecord>) -> Result<Self> {
        design.validate()?;
        let mut ids = HashSet::new();
        for r in &records {
            if r.components() != components {
                return Err(Error::invalid(format!(
                    "household {} has {} components but the dataset has {}",
                    r.id,
                    r.components(),
                    components
                )));
            }
            if !ids.insert(r.id.as_str()) {
                return Err(Error::invalid(format!("duplicate household id {}", r.id)));
            }
            r.validate()?;
        }
        if let Some(pi) = &design.inclusion_probs {
            if pi.len() != records.len() {
                return Err(Error::invalid("inclusion_probs length differs from record count"));
            }
            let mut paired: Vec<(HouseholdRecord, f64)> = records.into_iter().zip(pi.iter().copied()).collect();
            paired.sort_by(|a, b| a.0.id.cmp(&b.0.id));
            let (r, p): (Vec<_>, Vec<_>) = paired.into_iter().unzip();
            records = r;
            let mut design = design;
            design.inclusion_probs = Some(p);
            return Ok(Self {
                components,
                design,
                records,
            });
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self {
            components,
            design,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.weight).collect()
    }

    /// Number of households in each pattern (index 0 is pattern 1).
    pub fn pattern_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.components.pattern_count()];
        for r in &self.records {
            sizes[r.holdings.pattern() - 1] += 1;
        }
        sizes
    }

    /// The 4-component version of a 5-component dataset.
    pub fn aggregate_real_estate(&self) -> Result<SurveyDataset> {
        let records = self
            .records
            .iter()
            .map(HouseholdRecord::aggregate_real_estate)
            .collect::<Result<Vec<_>>>()?;
        SurveyDataset::new(ComponentCount::Four, self.design.clone(), records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hv(flags: &[u8]) -> Result<HoldingsVector> {
        let f: Vec<bool> = flags.iter().map(|&x| x == 1).collect();
        HoldingsVector::new(ComponentCount::from_len(f.len())?, &f)
    }

    #[test]
    fn pattern_table_examples() {
        assert_eq!(pattern_index(&hv(&[1, 1, 1, 1, 1]).unwrap()), 1);
        assert_eq!(pattern_index(&hv(&[1, 0, 0, 0, 1]).unwrap()), 8);
        assert_eq!(pattern_index(&hv(&[1, 1, 0, 0, 1]).unwrap()), 5);
        assert_eq!(pattern_index(&hv(&[1, 0, 1, 1, 1]).unwrap()), 4);
        assert_eq!(pattern_index(&hv(&[1, 1, 0, 1]).unwrap()), 2);
        assert_eq!(pattern_index(&hv(&[1, 0, 0, 1]).unwrap()), 4);
    }

    #[test]
    fn pattern_rejects_missing_financial_or_remainder() {
        assert!(hv(&[0, 1, 1, 1, 1]).is_err());
        assert!(hv(&[1, 1, 1, 1, 0]).is_err());
        assert!(hv(&[1, 1, 1]).is_err());
    }

    #[test]
    fn pattern_round_trip_is_bijective() {
        for count in [ComponentCount::Four, ComponentCount::Five] {
            let mut seen = HashSet::new();
            for p in 1..=count.pattern_count() {
                let h = HoldingsVector::from_pattern(count, p).unwrap();
                assert_eq!(h.pattern(), p);
                assert!(seen.insert(h.flags().to_vec()));
            }
            let n_mid = count.len() - 2;
            assert_eq!(seen.len(), 1 << n_mid);
        }
    }

    #[test]
    fn published_group_sizes_sum_to_respondents() {
        let sizes = [658, 984, 837, 147, 3274, 342, 275, 3175];
        assert_eq!(sizes.iter().sum::<usize>(), 9692);
    }

    #[test]
    fn total_wealth_examples() {
        let all = hv(&[1, 1, 1, 1, 1]).unwrap();
        let only = hv(&[1, 0, 0, 0, 1]).unwrap();
        assert_eq!(total_wealth(&only, &[1.0; 5], &[10.0, 0.0, 0.0, 0.0, 5.0]), 15.0);
        let res = hv(&[1, 1, 0, 0, 1]).unwrap();
        assert_eq!(
            total_wealth(&res, &[1.0, 0.5, 1.0, 1.0, 1.0], &[1.0, 100.0, 0.0, 0.0, 1.0]),
            52.0
        );
        // Components not held contribute nothing even if a value is present.
        assert_eq!(total_wealth(&only, &[1.0; 5], &[1.0, 7.0, 7.0, 7.0, 1.0]), 2.0);
        assert_eq!(total_wealth(&all, &[1.0; 5], &[1.0; 5]), 5.0);
    }

    #[test]
    fn total_wealth_is_monotone() {
        let h = hv(&[1, 1, 1, 1, 1]).unwrap();
        let s = [1.0, 0.3, 1.0, 1.0, 1.0];
        let base = [5.0, 4.0, 3.0, 2.0, 1.0];
        let t0 = total_wealth(&h, &s, &base);
        for l in 0..5 {
            let mut w = base;
            w[l] += 0.5;
            assert!(total_wealth(&h, &s, &w) >= t0);
        }
    }
}
