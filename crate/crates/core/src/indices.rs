//! Inequality functionals and their weighted plug-in estimators.
//!
//! Ranks follow a stable-sort convention: tied values receive distinct,
//! consecutive ranks in input order, so an equal distribution has a Gini of
//! exactly zero. With unit weights and distinct values this coincides with
//! the usual `r(k) = #{i : t_i <= t_k}`. For weighted samples a unit of
//! weight `w` occupies the rank block `(R - w, R]`, where `R` is the
//! cumulative weight through that unit, which makes an integer-weighted
//! sample equivalent to the population obtained by replicating each unit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative slack used when comparing cumulative weights against `p · W`,
/// so that e.g. `0.9 · 100` still selects the 90th of 100 unit-weight values.
const QUANTILE_SLACK: f64 = 1e-12;

/// Nonnegative values with positive sampling weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSample {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedSample {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} values but {} weights",
                values.len(),
                weights.len()
            )));
        }
        if values.is_empty() {
            return Err(Error::invalid("empty sample"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("value {v} is not a nonnegative real")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::invalid(format!("weight {w} is not positive")));
        }
        Ok(Self { values, weights })
    }

    /// Unit weights.
    pub fn unweighted(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, vec![1.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn weighted_total(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(t, w)| t * w).sum()
    }

    pub fn mean(&self) -> f64 {
        self.weighted_total() / self.total_weight()
    }

    /// Same sample with weights replaced.
    pub fn reweighted(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.values.clone(), weights)
    }

    fn require_positive(&self, what: &'static str) -> Result<()> {
        if self.values.iter().any(|&t| t <= 0.0) {
            return Err(Error::NonPositiveWealth(what));
        }
        Ok(())
    }
}

/// Indices that sort `values` ascending; ties keep input order.
pub fn stable_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

/// A finite-population functional together with its plug-in estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SummarySpec {
    Mean,
    Median,
    Quantile(f64),
    QuantileRatio(f64, f64),
    Gini,
    Theil,
    Atkinson(f64),
}

impl SummarySpec {
    /// The 17 summaries of the standard results table, in table order.
    pub fn default_set() -> Vec<SummarySpec> {
        use SummarySpec::*;
        vec![
            Mean,
            Median,
            Quantile(0.99),
            Quantile(0.95),
            Quantile(0.90),
            Quantile(0.75),
            Quantile(0.25),
            Quantile(0.10),
            QuantileRatio(0.95, 0.5),
            QuantileRatio(0.99, 0.5),
            QuantileRatio(0.75, 0.25),
            QuantileRatio(0.9, 0.1),
            QuantileRatio(0.9, 0.5),
            Gini,
            Theil,
            Atkinson(1.5),
            Atkinson(2.0),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |p: f64| p > 0.0 && p < 1.0;
        match *self {
            SummarySpec::Quantile(p) if !in_unit(p) => {
                Err(Error::invalid(format!("quantile level {p} outside (0, 1)")))
            }
            SummarySpec::QuantileRatio(p, q) if !in_unit(p) || !in_unit(q) => {
                Err(Error::invalid(format!("quantile ratio levels {p}/{q} outside (0, 1)")))
            }
            SummarySpec::Atkinson(e) if !(e > 0.0 && e.is_finite()) => {
                Err(Error::invalid(format!("Atkinson aversion {e} must be positive")))
            }
            _ => Ok(()),
        }
    }

    /// Short human-readable row label (`P99`, `Q3/Q1`, `Atkinson (1.5)`, ...).
    pub fn display_name(&self) -> String {
        fn q_name(p: f64, in_ratio: bool) -> String {
            let pct = (p * 100.0 * 1e6).round() / 1e6;
            match pct {
                25.0 => "Q1".into(),
                75.0 => "Q3".into(),
                x if in_ratio && x % 10.0 == 0.0 => format!("D{}", x / 10.0),
                x => format!("P{x}"),
            }
        }
        match *self {
            SummarySpec::Mean => "Mean".into(),
            SummarySpec::Median => "Median".into(),
            SummarySpec::Quantile(p) => q_name(p, false),
            SummarySpec::QuantileRatio(p, q) => format!("{}/{}", q_name(p, true), q_name(q, true)),
            SummarySpec::Gini => "Gini".into(),
            SummarySpec::Theil => "Theil".into(),
            SummarySpec::Atkinson(e) => format!("Atkinson ({e})"),
        }
    }
}

/// Machine label: `mean`, `median`, `quantile:0.9`, `ratio:0.9/0.1`, `gini`,
/// `theil`, `atkinson:1.5`.
impl fmt::Display for SummarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SummarySpec::Mean => write!(f, "mean"),
            SummarySpec::Median => write!(f, "median"),
            SummarySpec::Quantile(p) => write!(f, "quantile:{p}"),
            SummarySpec::QuantileRatio(p, q) => write!(f, "ratio:{p}/{q}"),
            SummarySpec::Gini => write!(f, "gini"),
            SummarySpec::Theil => write!(f, "theil"),
            SummarySpec::Atkinson(e) => write!(f, "atkinson:{e}"),
        }
    }
}

impl FromStr for SummarySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number {x:?} in summary {s:?}")))
        };
        let spec = match s.split_once(':') {
            None => match s.to_ascii_lowercase().as_str() {
                "mean" => SummarySpec::Mean,
                "median" => SummarySpec::Median,
                "gini" => SummarySpec::Gini,
                "theil" => SummarySpec::Theil,
                _ => return Err(Error::invalid(format!("unknown summary {s:?}"))),
            },
            Some((kind, arg)) => match kind.to_ascii_lowercase().as_str() {
                "quantile" => SummarySpec::Quantile(num(arg)?),
                "atkinson" => SummarySpec::Atkinson(num(arg)?),
                "ratio" => {
                    let (p, q) = arg
                        .split_once('/')
                        .ok_or_else(|| Error::invalid(format!("ratio needs p/q in {s:?}")))?;
                    SummarySpec::QuantileRatio(num(p)?, num(q)?)
                }
                _ => return Err(Error::invalid(format!("unknown summary {s:?}"))),
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for SummarySpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SummarySpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Population Gini `[Σ (2 r(k) − 1) t_k] / (N² t̄) − 1`.
pub fn gini_population(t: &[f64]) -> Result<f64> {
    gini_weighted(&WeightedSample::unweighted(t.to_vec())?)
}

/// Design-based Gini estimator with weighted ranks.
pub fn gini_weighted(s: &WeightedSample) -> Result<f64> {
    let total = s.weighted_total();
    if total <= 0.0 {
        return Err(Error::DegeneratePopulation);
    }
    let w_sum = s.total_weight();
    let mut cum = 0.0;
    let mut acc = 0.0;
    for k in stable_order(&s.values) {
        let w = s.weights[k];
        cum += w;
        acc += (2.0 * cum - w) * w * s.values[k];
    }
    // Exact value is nonnegative; clamp rounding noise on equal distributions.
    Ok((acc / (w_sum * total) - 1.0).max(0.0))
}

/// Population Atkinson index with inequality aversion `eps`.
pub fn atkinson(t: &[f64], eps: f64) -> Result<f64> {
    atkinson_weighted(&WeightedSample::unweighted(t.to_vec())?, eps)
}

pub fn atkinson_weighted(s: &WeightedSample, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("Atkinson aversion {eps} must be positive")));
    }
    s.require_positive("Atkinson")?;
    let w_sum = s.total_weight();
    let mean = s.mean();
    let ede_ratio = if eps == 1.0 {
        let mean_log: f64 = s
            .values
            .iter()
            .zip(&s.weights)
            .map(|(t, w)| w * (t / mean).ln())
            .sum::<f64>()
            / w_sum;
        mean_log.exp()
    } else {
        let a = 1.0 - eps;
        let m: f64 = s
            .values
            .iter()
            .zip(&s.weights)
            .map(|(t, w)| w * (t / mean).powf(a))
            .sum::<f64>()
            / w_sum;
        m.powf(1.0 / a)
    };
    Ok(1.0 - ede_ratio)
}

/// Population Theil index (natural logarithm).
pub fn theil(t: &[f64]) -> Result<f64> {
    theil_weighted(&WeightedSample::unweighted(t.to_vec())?)
}

pub fn theil_weighted(s: &WeightedSample) -> Result<f64> {
    s.require_positive("Theil")?;
    let mean = s.mean();
    let acc: f64 = s
        .values
        .iter()
        .zip(&s.weights)
        .map(|(t, w)| {
            let r = t / mean;
            w * r * r.ln()
        })
        .sum();
    Ok(acc / s.total_weight())
}

/// Left-continuous inverse of the weighted CDF: the smallest value whose
/// cumulative normalized weight reaches `p`.
pub fn weighted_quantile(s: &WeightedSample, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile level {p} outside (0, 1)")));
    }
    let order = stable_order(&s.values);
    let target = p * s.total_weight() * (1.0 - QUANTILE_SLACK);
    let mut cum = 0.0;
    for &k in &order {
        cum += s.weights[k];
        if cum >= target {
            return Ok(s.values[k]);
        }
    }
    Ok(s.values[*order.last().expect("nonempty sample")])
}

pub fn evaluate_summary(spec: SummarySpec, s: &WeightedSample) -> Result<f64> {
    spec.validate()?;
    match spec {
        SummarySpec::Mean => Ok(s.mean()),
        SummarySpec::Median => weighted_quantile(s, 0.5),
        SummarySpec::Quantile(p) => weighted_quantile(s, p),
        SummarySpec::QuantileRatio(p, q) => {
            let den = weighted_quantile(s, q)?;
            if den <= 0.0 {
                return Err(Error::invalid(format!(
                    "quantile ratio denominator (level {q}) is zero"
                )));
            }
            Ok(weighted_quantile(s, p)? / den)
        }
        SummarySpec::Gini => gini_weighted(s),
        SummarySpec::Theil => theil_weighted(s),
        SummarySpec::Atkinson(e) => atkinson_weighted(s, e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Gini via mean absolute difference over all ordered pairs.
    fn gini_pairwise(t: &[f64]) -> f64 {
        let n = t.len() as f64;
        let mean = t.iter().sum::<f64>() / n;
        let mut acc = 0.0;
        for a in t {
            for b in t {
                acc += (a - b).abs();
            }
        }
        acc / (2.0 * n * n * mean)
    }

    fn expand(values: &[f64], weights: &[u32]) -> Vec<f64> {
        values
            .iter()
            .zip(weights)
            .flat_map(|(&v, &w)| std::iter::repeat_n(v, w as usize))
            .collect()
    }

    #[test]
    fn gini_examples() {
        assert!(gini_population(&[7.0; 13]).unwrap().abs() < 1e-15);
        assert!((gini_population(&[1.0, 3.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!((gini_population(&[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((gini_pairwise(&[1.0, 3.0]) - 0.25).abs() < 1e-15);
        assert!(matches!(gini_population(&[0.0, 0.0]), Err(Error::DegeneratePopulation)));
    }

    #[test]
    fn gini_weighted_examples() {
        let s = WeightedSample::unweighted(vec![1.0, 3.0]).unwrap();
        assert!((gini_weighted(&s).unwrap() - 0.25).abs() < 1e-15);
        let single = WeightedSample::new(vec![42.0], vec![17.5]).unwrap();
        assert_eq!(gini_weighted(&single).unwrap(), 0.0);
        let zero = WeightedSample::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert!(gini_weighted(&zero).is_err());
    }

    #[test]
    fn atkinson_examples() {
        assert!(atkinson(&[5.0; 4], 0.5).unwrap().abs() < 1e-15);
        assert!(atkinson(&[5.0; 4], 1.0).unwrap().abs() < 1e-15);
        assert!(atkinson(&[5.0; 4], 2.0).unwrap().abs() < 1e-15);
        let a1 = atkinson(&[1.0, 3.0], 1.0).unwrap();
        assert!((a1 - (1.0 - 3f64.sqrt() / 2.0)).abs() < 1e-15);
        assert!((a1 - 0.133975).abs() < 1e-6);
        assert!(matches!(atkinson(&[1.0, 0.0], 2.0), Err(Error::NonPositiveWealth(_))));
        assert!(atkinson(&[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn atkinson_is_continuous_at_one() {
        let t = [1.0, 2.0, 5.0, 40.0, 3.5];
        let a1 = atkinson(&t, 1.0).unwrap();
        let mut last = f64::INFINITY;
        for d in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
            let gap = (atkinson(&t, 1.0 + d).unwrap() - a1)
                .abs()
                .max((atkinson(&t, 1.0 - d).unwrap() - a1).abs());
            assert!(gap < last);
            last = gap;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn theil_examples() {
        assert!(theil(&[3.0; 6]).unwrap().abs() < 1e-15);
        let expected = 0.5 * (0.5 * 0.5f64.ln() + 1.5 * 1.5f64.ln());
        assert!((theil(&[1.0, 3.0]).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.130812).abs() < 1e-6);
        assert!(theil(&[0.0, 1.0]).is_err());
        // Groups with constant within-group values: Theil equals the
        // between-group Theil, i.e. the same index on the group values.
        let t = [2.0, 2.0, 2.0, 8.0];
        assert!((theil(&t).unwrap() - theil(&[2.0, 2.0, 2.0, 8.0]).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn quantile_examples() {
        let s = WeightedSample::unweighted(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(weighted_quantile(&s, 0.5).unwrap(), 2.0);
        let s = WeightedSample::new(vec![10.0, 20.0], vec![3.0, 1.0]).unwrap();
        assert_eq!(weighted_quantile(&s, 0.5).unwrap(), 10.0);
        assert_eq!(weighted_quantile(&s, 0.76).unwrap(), 20.0);
        assert!(weighted_quantile(&s, 1.0).is_err());
    }

    #[test]
    fn summary_examples() {
        let s = WeightedSample::unweighted(vec![1.0, 3.0]).unwrap();
        assert!((evaluate_summary(SummarySpec::Gini, &s).unwrap() - 0.25).abs() < 1e-15);
        let eq = WeightedSample::unweighted(vec![4.0; 5]).unwrap();
        assert!(evaluate_summary(SummarySpec::Atkinson(2.0), &eq).unwrap().abs() < 1e-15);
        let hundred = WeightedSample::unweighted((1..=100).map(f64::from).collect()).unwrap();
        let r = evaluate_summary(SummarySpec::QuantileRatio(0.9, 0.1), &hundred).unwrap();
        assert_eq!(r, 9.0);
    }

    #[test]
    fn summary_labels_round_trip() {
        for spec in SummarySpec::default_set() {
            let parsed: SummarySpec = spec.to_string().parse().unwrap();
            assert_eq!(parsed, spec);
        }
        let names: Vec<String> = SummarySpec::default_set()
            .iter()
            .map(SummarySpec::display_name)
            .collect();
        assert_eq!(
            names,
            [
                "Mean",
                "Median",
                "P99",
                "P95",
                "P90",
                "Q3",
                "Q1",
                "P10",
                "P95/D5",
                "P99/D5",
                "Q3/Q1",
                "D9/D1",
                "D9/D5",
                "Gini",
                "Theil",
                "Atkinson (1.5)",
                "Atkinson (2)"
            ]
        );
        assert!("quantile:1.5".parse::<SummarySpec>().is_err());
        assert!("atkinson:-1".parse::<SummarySpec>().is_err());
        assert!("bogus".parse::<SummarySpec>().is_err());
    }

    fn brute_quantile(values: &[f64], weights: &[f64], p: f64) -> f64 {
        // Scan candidate values; the answer is the smallest v with F(v) >= p.
        let total: f64 = weights.iter().sum();
        let mut cands = values.to_vec();
        cands.sort_by(f64::total_cmp);
        for v in cands {
            let f: f64 = values
                .iter()
                .zip(weights)
                .filter(|(x, _)| **x <= v)
                .map(|(_, w)| w)
                .sum();
            if f >= p * total * (1.0 - 1e-12) {
                return v;
            }
        }
        unreachable!()
    }

    proptest! {
        #[test]
        fn quantile_matches_brute_force(
            data in prop::collection::vec((0u32..50, 1u32..6), 1..40),
            p in 0.01f64..0.99,
        ) {
            let values: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            let weights: Vec<f64> = data.iter().map(|d| d.1 as f64).collect();
            let s = WeightedSample::new(values.clone(), weights.clone()).unwrap();
            prop_assert_eq!(weighted_quantile(&s, p).unwrap(), brute_quantile(&values, &weights, p));
        }

        #[test]
        fn gini_matches_pairwise_oracle(t in prop::collection::vec(0.0f64..1e4, 1..60)) {
            prop_assume!(t.iter().sum::<f64>() > 0.0);
            let g = gini_population(&t).unwrap();
            prop_assert!((g - gini_pairwise(&t)).abs() < 1e-12);
            prop_assert!((0.0..1.0).contains(&g));
        }

        #[test]
        fn integer_weights_match_expansion(
            data in prop::collection::vec((0.5f64..100.0, 1u32..5), 1..25),
            eps in 0.2f64..3.0,
        ) {
            let values: Vec<f64> = data.iter().map(|d| (d.0 * 4.0).round() / 4.0).collect();
            let w: Vec<u32> = data.iter().map(|d| d.1).collect();
            let s = WeightedSample::new(values.clone(), w.iter().map(|&x| x as f64).collect()).unwrap();
            let expanded = expand(&values, &w);
            let pop = WeightedSample::unweighted(expanded.clone()).unwrap();
            prop_assert!((gini_weighted(&s).unwrap() - gini_population(&expanded).unwrap()).abs() < 1e-12);
            prop_assert!((theil_weighted(&s).unwrap() - theil(&expanded).unwrap()).abs() < 1e-12);
            prop_assert!((atkinson_weighted(&s, eps).unwrap() - atkinson(&expanded, eps).unwrap()).abs() < 1e-12);
            for p in [0.1, 0.25, 0.5, 0.9] {
                prop_assert_eq!(weighted_quantile(&s, p).unwrap(), weighted_quantile(&pop, p).unwrap());
            }
        }

        #[test]
        fn pigou_dalton_transfers_reduce_inequality(
            mut t in prop::collection::vec(1.0f64..1000.0, 3..30),
            frac in 0.01f64..0.49,
            eps in 0.3f64..3.0,
        ) {
            t.sort_by(f64::total_cmp);
            let (poor, rich) = (0, t.len() - 1);
            prop_assume!(t[rich] - t[poor] > 1e-3);
            // Transfer keeps the pair's order and does not cross any other unit.
            let gap_poor = t[1] - t[0];
            let gap_rich = t[rich] - t[rich - 1];
            let delta = frac * gap_poor.min(gap_rich).min((t[rich] - t[poor]) / 2.0);
            prop_assume!(delta > 1e-6);
            let mut moved = t.clone();
            moved[poor] += delta;
            moved[rich] -= delta;
            prop_assert!(gini_population(&moved).unwrap() < gini_population(&t).unwrap());
            prop_assert!(theil(&moved).unwrap() < theil(&t).unwrap());
            prop_assert!(atkinson(&moved, eps).unwrap() < atkinson(&t, eps).unwrap());
        }
    }
}
