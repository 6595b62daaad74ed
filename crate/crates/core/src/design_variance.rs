//! Design-based variance estimation for plug-in summaries.
//!
//! Nonlinear estimators are linearized into per-unit influence values `z_k`
//! and the variance of the Horvitz–Thompson total `Σ w_k z_k` is estimated
//! analytically under the sampling design. Supported designs:
//!
//! * SRSWOR and stratified SRSWOR (exact unbiased formulas);
//! * fixed-size unequal-probability sampling treated as maximum entropy,
//!   using an approximation that needs only first-order inclusion
//!   probabilities;
//! * stratified two-stage cluster sampling, with-replacement PSU
//!   approximation unless PSU counts per stratum are known.
//!
//! After calibration, the variance is computed on the residuals of `z` on
//! the calibration auxiliaries.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{DesignKind, SurveyDataset, SurveyDesign};
use crate::error::{Error, Result};
use crate::indices::{evaluate_summary, stable_order, weighted_quantile, SummarySpec, WeightedSample};

/// Influence values of a summary at the sampled units.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedSample {
    pub z: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Linearization,
    Jackknife,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponent {
    pub stratum: String,
    /// 1 for the first sampling stage, 2 for the within-PSU stage.
    pub stage: u8,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub method: VarianceMethod,
    pub components: Vec<VarianceComponent>,
}

#[derive(Clone, Debug)]
struct StratumBlock {
    id: String,
    population_size: Option<f64>,
    units: Vec<usize>,
    /// Units grouped by PSU, in first-appearance order.
    psus: Vec<Vec<usize>>,
}

/// Sample-level design structure: which units share a stratum and a PSU,
/// plus optional calibration auxiliaries.
#[derive(Clone, Debug)]
pub struct SampleDesign {
    kind: DesignKind,
    strata: Vec<StratumBlock>,
    inclusion_probs: Option<Vec<f64>>,
    aux: Option<DMatrix<f64>>,
    n: usize,
}

impl SampleDesign {
    /// `strata` and `psus` give the stratum and PSU label of each sampled unit.
    pub fn new(design: &SurveyDesign, strata: &[String], psus: &[String]) -> Result<Self> {
        let n = strata.len();
        if psus.len() != n {
            return Err(Error::invalid("stratum and PSU label counts differ"));
        }
        if let Some(pi) = &design.inclusion_probs {
            if pi.len() != n {
                return Err(Error::invalid("inclusion probability count differs from sample"));
            }
        }
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (k, s) in strata.iter().enumerate() {
            let key = if design.kind == DesignKind::Srswor {
                String::from("all")
            } else {
                s.clone()
            };
            groups.entry(key.clone()).or_insert_with(|| {
                order.push(key.clone());
                Vec::new()
            });
            groups.get_mut(&key).unwrap().push(k);
        }
        let blocks = order
            .into_iter()
            .map(|id| {
                let units = groups.remove(&id).unwrap();
                let mut psu_order: Vec<&str> = Vec::new();
                let mut psu_map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
                for &k in &units {
                    let p = psus[k].as_str();
                    psu_map.entry(p).or_insert_with(|| {
                        psu_order.push(p);
                        Vec::new()
                    });
                    psu_map.get_mut(p).unwrap().push(k);
                }
                let psus = psu_order.iter().map(|p| psu_map.remove(p).unwrap()).collect();
                let population_size = if design.kind == DesignKind::Srswor {
                    design.strata.first().and_then(|s| s.population_size)
                } else {
                    design.stratum(&id).and_then(|s| s.population_size)
                };
                StratumBlock {
                    id,
                    population_size,
                    units,
                    psus,
                }
            })
            .collect();
        Ok(Self {
            kind: design.kind,
            strata: blocks,
            inclusion_probs: design.inclusion_probs.clone(),
            aux: None,
            n,
        })
    }

    pub fn from_dataset(ds: &SurveyDataset) -> Result<Self> {
        let strata: Vec<String> = ds.records.iter().map(|r| r.stratum.clone()).collect();
        let psus: Vec<String> = ds.records.iter().map(|r| r.psu.clone()).collect();
        Self::new(&ds.design, &strata, &psus)
    }

    /// Variance is thereafter computed on regression residuals of the
    /// linearized variable on these auxiliaries (one row per unit).
    pub fn with_calibration(mut self, aux: DMatrix<f64>) -> Result<Self> {
        if aux.nrows() != self.n {
            return Err(Error::invalid("auxiliary matrix row count differs from sample"));
        }
        self.aux = Some(aux);
        Ok(self)
    }

    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn sampling_fraction(&self, block: &StratumBlock, weights: &[f64], sampled: usize) -> f64 {
        let pop = block
            .population_size
            .unwrap_or_else(|| block.units.iter().map(|&k| weights[k]).sum());
        (sampled as f64 / pop).clamp(0.0, 1.0)
    }
}

/// Horvitz–Thompson total `Σ w_k v_k`.
pub fn ht_total(values: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    values.iter().zip(weights).map(|(v, w)| v * w).sum()
}

fn residualize(z: &[f64], weights: &[f64], aux: &DMatrix<f64>) -> Result<Vec<f64>> {
    let q = aux.ncols();
    let mut xtwx = DMatrix::<f64>::zeros(q, q);
    let mut xtwz = DVector::<f64>::zeros(q);
    for k in 0..z.len() {
        let row = aux.row(k);
        for a in 0..q {
            xtwz[a] += weights[k] * row[a] * z[k];
            for b in 0..q {
                xtwx[(a, b)] += weights[k] * row[a] * row[b];
            }
        }
    }
    let coef = xtwx
        .cholesky()
        .ok_or_else(|| Error::RankDeficient {
            columns: collinear_columns(aux, weights)
                .into_iter()
                .map(|c| format!("aux[{c}]"))
                .collect(),
        })?
        .solve(&xtwz);
    Ok((0..z.len()).map(|k| z[k] - (aux.row(k) * &coef)[0]).collect())
}

fn centered_sum_sq(values: impl Iterator<Item = f64> + Clone) -> (f64, usize) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    (values.map(|v| (v - mean).powi(2)).sum(), n)
}

/// Analytic variance of the HT total of the linearized variable.
pub fn ht_variance(lin: &LinearizedSample, design: &SampleDesign) -> Result<VarianceEstimate> {
    if lin.z.len() != design.n || lin.weights.len() != design.n {
        return Err(Error::invalid("linearized sample does not match design size"));
    }
    let w = &lin.weights;
    let e = match &design.aux {
        Some(aux) => residualize(&lin.z, w, aux)?,
        None => lin.z.clone(),
    };
    let mut components = Vec::new();
    for block in &design.strata {
        match design.kind {
            DesignKind::Srswor | DesignKind::StratifiedSrs => {
                let nh = block.units.len();
                if nh < 2 {
                    return Err(Error::invalid(format!(
                        "stratum {} has {nh} sampled unit(s); at least 2 are needed",
                        block.id
                    )));
                }
                let f = design.sampling_fraction(block, w, nh);
                let (ss, _) = centered_sum_sq(block.units.iter().map(|&k| w[k] * e[k]));
                components.push(VarianceComponent {
                    stratum: block.id.clone(),
                    stage: 1,
                    value: (1.0 - f) * nh as f64 / (nh as f64 - 1.0) * ss,
                });
            }
            DesignKind::UnequalProbFixedSize => {
                let nh = block.units.len();
                if nh < 2 {
                    return Err(Error::invalid(format!(
                        "stratum {} has {nh} sampled unit(s); at least 2 are needed",
                        block.id
                    )));
                }
                let pi = |k: usize| match &design.inclusion_probs {
                    Some(p) => p[k],
                    None => (1.0 / w[k]).min(1.0),
                };
                let scale = nh as f64 / (nh as f64 - 1.0);
                let c: Vec<f64> = block.units.iter().map(|&k| scale * (1.0 - pi(k))).collect();
                let y: Vec<f64> = block.units.iter().map(|&k| e[k] / pi(k)).collect();
                let c_sum: f64 = c.iter().sum();
                let value = if c_sum > 0.0 {
                    let y_star = c.iter().zip(&y).map(|(c, y)| c * y).sum::<f64>() / c_sum;
                    c.iter().zip(&y).map(|(c, y)| c * (y - y_star).powi(2)).sum()
                } else {
                    0.0
                };
                components.push(VarianceComponent {
                    stratum: block.id.clone(),
                    stage: 1,
                    value,
                });
            }
            DesignKind::TwoStageCluster => {
                let n_psu = block.psus.len();
                if n_psu < 2 {
                    return Err(Error::invalid(format!(
                        "stratum {} has {n_psu} sampled PSU(s); at least 2 are needed",
                        block.id
                    )));
                }
                let totals = block.psus.iter().map(|p| p.iter().map(|&k| w[k] * e[k]).sum::<f64>());
                let (ss, _) = centered_sum_sq(totals);
                let nf = n_psu as f64;
                let f1 = block
                    .population_size
                    .map(|big| (nf / big).clamp(0.0, 1.0))
                    .unwrap_or(0.0);
                components.push(VarianceComponent {
                    stratum: block.id.clone(),
                    stage: 1,
                    value: (1.0 - f1) * nf / (nf - 1.0) * ss,
                });
                if let Some(big) = block.population_size {
                    // Within-PSU SRSWOR term; PSU sizes are estimated from weights.
                    let mut second = 0.0;
                    for psu in &block.psus {
                        let m = psu.len();
                        if m < 2 {
                            continue;
                        }
                        let size = psu.iter().map(|&k| w[k]).sum::<f64>() * nf / big;
                        let f2 = (m as f64 / size).clamp(0.0, 1.0);
                        let ys = psu.iter().map(|&k| e[k]);
                        let (ss2, _) = centered_sum_sq(ys);
                        let s2 = ss2 / (m as f64 - 1.0);
                        second += (big / nf) * size * size * (1.0 - f2) * s2 / m as f64;
                    }
                    components.push(VarianceComponent {
                        stratum: block.id.clone(),
                        stage: 2,
                        value: second,
                    });
                }
            }
        }
    }
    let value = components.iter().map(|c| c.value).sum::<f64>().max(0.0);
    Ok(VarianceEstimate {
        value,
        method: VarianceMethod::Linearization,
        components,
    })
}

/// Weighted Gaussian-kernel density at `x` with a robust Silverman bandwidth.
fn kernel_density(s: &WeightedSample, x: f64) -> f64 {
    let w_sum = s.total_weight();
    let mean = s.mean();
    let var = s
        .values()
        .iter()
        .zip(s.weights())
        .map(|(t, w)| w * (t - mean).powi(2))
        .sum::<f64>()
        / w_sum;
    let iqr = weighted_quantile(s, 0.75).unwrap_or(0.0) - weighted_quantile(s, 0.25).unwrap_or(0.0);
    let spread = match (var.sqrt(), iqr / 1.34) {
        (sd, r) if r > 0.0 => sd.min(r),
        (sd, _) => sd,
    };
    let h = 0.9 * spread * (s.len() as f64).powf(-0.2);
    if h <= 0.0 {
        return f64::INFINITY;
    }
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h * w_sum);
    s.values()
        .iter()
        .zip(s.weights())
        .map(|(t, w)| w * (-0.5 * ((t - x) / h).powi(2)).exp())
        .sum::<f64>()
        * norm
}

fn quantile_influence(s: &WeightedSample, p: f64) -> Result<(f64, Vec<f64>)> {
    let q = weighted_quantile(s, p)?;
    let density = kernel_density(s, q);
    let n_hat = s.total_weight();
    let z = s
        .values()
        .iter()
        .map(|&t| {
            if density.is_infinite() {
                0.0
            } else {
                -((t <= q) as u8 as f64 - p) / (n_hat * density)
            }
        })
        .collect();
    Ok((q, z))
}

/// Per-unit influence values of a summary's plug-in estimator.
pub fn linearize(spec: SummarySpec, s: &WeightedSample) -> Result<LinearizedSample> {
    spec.validate()?;
    let t = s.values();
    let w = s.weights();
    let n_hat = s.total_weight();
    let total = s.weighted_total();
    let mu = total / n_hat;
    let z: Vec<f64> = match spec {
        SummarySpec::Mean => t.iter().map(|&tk| (tk - mu) / n_hat).collect(),
        SummarySpec::Median => quantile_influence(s, 0.5)?.1,
        SummarySpec::Quantile(p) => quantile_influence(s, p)?.1,
        SummarySpec::QuantileRatio(p, q) => {
            let (qp, zp) = quantile_influence(s, p)?;
            let (qq, zq) = quantile_influence(s, q)?;
            if qq <= 0.0 {
                return Err(Error::invalid("quantile ratio denominator is zero"));
            }
            let r = qp / qq;
            zp.iter().zip(&zq).map(|(a, b)| (a - r * b) / qq).collect()
        }
        SummarySpec::Gini => {
            if total <= 0.0 {
                return Err(Error::DegeneratePopulation);
            }
            let g = evaluate_summary(SummarySpec::Gini, s)?;
            let order = stable_order(t);
            // Mid-block rank and wealth held by units ranked above (half of
            // the unit's own block counted on each side).
            let mut mid_rank = vec![0.0; t.len()];
            let mut above = vec![0.0; t.len()];
            let mut cum_w = 0.0;
            let mut cum_t = 0.0;
            for &k in &order {
                mid_rank[k] = cum_w + w[k] / 2.0;
                above[k] = total - cum_t - w[k] * t[k] / 2.0;
                cum_w += w[k];
                cum_t += w[k] * t[k];
            }
            (0..t.len())
                .map(|k| {
                    (2.0 * mid_rank[k] * t[k] + 2.0 * above[k] - (g + 1.0) * (total + n_hat * t[k])) / (n_hat * total)
                })
                .collect()
        }
        SummarySpec::Theil => {
            if t.iter().any(|&x| x <= 0.0) {
                return Err(Error::NonPositiveWealth("Theil"));
            }
            let s_log: f64 = t.iter().zip(w).map(|(t, w)| w * t * t.ln()).sum();
            t.iter()
                .map(|&tk| (tk * tk.ln() - tk * s_log / total - tk) / total + 1.0 / n_hat)
                .collect()
        }
        SummarySpec::Atkinson(eps) => {
            if t.iter().any(|&x| x <= 0.0) {
                return Err(Error::NonPositiveWealth("Atkinson"));
            }
            if eps == 1.0 {
                let l: f64 = t.iter().zip(w).map(|(t, w)| w * t.ln()).sum::<f64>() / n_hat;
                let m = l.exp();
                t.iter()
                    .map(|&tk| -(m / mu) * ((tk.ln() - l) / n_hat - (tk - mu) / (n_hat * mu)))
                    .collect()
            } else {
                let a = 1.0 - eps;
                let p: f64 = t.iter().zip(w).map(|(t, w)| w * t.powf(a)).sum();
                let m = (p / n_hat).powf(1.0 / a);
                t.iter()
                    .map(|&tk| -(m / mu) * ((tk.powf(a) - p / n_hat) / (a * p) - (tk - mu) / (n_hat * mu)))
                    .collect()
            }
        }
    };
    Ok(LinearizedSample { z, weights: w.to_vec() })
}

/// Delete-one jackknife (units within strata, or PSUs for cluster designs)
/// with the finite-population correction applied per stratum.
pub fn jackknife_variance(spec: SummarySpec, s: &WeightedSample, design: &SampleDesign) -> Result<VarianceEstimate> {
    if s.len() != design.n {
        return Err(Error::invalid("sample does not match design size"));
    }
    if design.kind == DesignKind::UnequalProbFixedSize {
        return Err(Error::UnsupportedDesign(
            "jackknife is implemented for SRSWOR, stratified SRS and cluster designs".into(),
        ));
    }
    let w = s.weights();
    let mut components = Vec::new();
    for block in &design.strata {
        let groups: Vec<Vec<usize>> = match design.kind {
            DesignKind::TwoStageCluster => block.psus.clone(),
            _ => block.units.iter().map(|&k| vec![k]).collect(),
        };
        let nh = groups.len();
        if nh < 2 {
            return Err(Error::invalid(format!(
                "stratum {} has {nh} jackknife group(s); at least 2 are needed",
                block.id
            )));
        }
        let f = match design.kind {
            DesignKind::TwoStageCluster => block
                .population_size
                .map(|big| (nh as f64 / big).clamp(0.0, 1.0))
                .unwrap_or(0.0),
            _ => design.sampling_fraction(block, w, nh),
        };
        let inflate = nh as f64 / (nh as f64 - 1.0);
        let replicates: Vec<f64> = groups
            .par_iter()
            .map(|dropped| {
                let mut rw = w.to_vec();
                for &k in &block.units {
                    rw[k] *= inflate;
                }
                let keep: Vec<bool> = {
                    let mut keep = vec![true; rw.len()];
                    for &k in dropped {
                        keep[k] = false;
                    }
                    keep
                };
                let values: Vec<f64> = s
                    .values()
                    .iter()
                    .zip(&keep)
                    .filter(|(_, &k)| k)
                    .map(|(v, _)| *v)
                    .collect();
                let weights: Vec<f64> = rw.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect();
                let rs = WeightedSample::new(values, weights)?;
                evaluate_summary(spec, &rs)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (ss, _) = centered_sum_sq(replicates.iter().copied());
        components.push(VarianceComponent {
            stratum: block.id.clone(),
            stage: 1,
            value: (1.0 - f) * (nh as f64 - 1.0) / nh as f64 * ss,
        });
    }
    let value = components.iter().map(|c| c.value).sum();
    Ok(VarianceEstimate {
        value,
        method: VarianceMethod::Jackknife,
        components,
    })
}

/// Divides respondent weights by the (weighted) response rate of their
/// stratum; nonrespondents are dropped. Returns respondent weights in input
/// order.
pub fn nonresponse_adjust(weights: &[f64], strata: &[String], responded: &[bool]) -> Result<Vec<f64>> {
    if weights.len() != strata.len() || weights.len() != responded.len() {
        return Err(Error::invalid("weights, strata and response flags differ in length"));
    }
    let mut sums: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for k in 0..weights.len() {
        let e = sums.entry(strata[k].as_str()).or_default();
        e.0 += weights[k];
        if responded[k] {
            e.1 += weights[k];
        }
    }
    if let Some((h, _)) = sums.iter().find(|(_, (_, r))| *r <= 0.0) {
        return Err(Error::invalid(format!("stratum {h} has no respondents")));
    }
    Ok((0..weights.len())
        .filter(|&k| responded[k])
        .map(|k| {
            let (all, resp) = sums[strata[k].as_str()];
            weights[k] * all / resp
        })
        .collect())
}

/// Columns (0-based) that are linearly dependent on earlier columns under
/// the weighted inner product.
pub fn collinear_columns(aux: &DMatrix<f64>, weights: &[f64]) -> Vec<usize> {
    let sw: DVector<f64> = DVector::from_iterator(weights.len(), weights.iter().map(|w| w.sqrt()));
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..aux.ncols() {
        let col = aux.column(j).component_mul(&sw);
        let norm0 = col.norm();
        let mut r = col.clone_owned();
        for b in &basis {
            let proj = r.dot(b);
            r -= b * proj;
        }
        let norm = r.norm();
        if norm0 == 0.0 || norm <= 1e-10 * norm0 {
            dependent.push(j);
        } else {
            basis.push(r / norm);
        }
    }
    dependent
}

/// Linear (GREG) calibration: the chi-square-closest weights whose
/// HT totals of the auxiliaries equal `known_totals`.
pub fn calibrate(weights: &[f64], aux: &DMatrix<f64>, known_totals: &[f64]) -> Result<Vec<f64>> {
    let (n, q) = aux.shape();
    if weights.len() != n || known_totals.len() != q {
        return Err(Error::invalid("calibration dimensions do not match"));
    }
    let dependent = collinear_columns(aux, weights);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient {
            columns: dependent.iter().map(|c| format!("aux[{c}]")).collect(),
        });
    }
    let mut t = DMatrix::<f64>::zeros(q, q);
    let mut current = DVector::<f64>::zeros(q);
    for (k, &wk) in weights.iter().enumerate().take(n) {
        let row = aux.row(k);
        for a in 0..q {
            current[a] += wk * row[a];
            for b in 0..q {
                t[(a, b)] += wk * row[a] * row[b];
            }
        }
    }
    let gap = DVector::from_column_slice(known_totals) - current;
    let lambda = t
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("calibration cross-product".into()))?
        .solve(&gap);
    Ok((0..n).map(|k| weights[k] * (1.0 + (aux.row(k) * &lambda)[0])).collect())
}
