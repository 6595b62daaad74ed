//! Pattern-mixture lognormal model for the held wealth components and its
//! conjugate full conditionals.
//!
//! For a household `k` in holdings pattern `i`, the log amounts of the held
//! components are `y_k = x_k b + u_k` with `u_k ~ N(0, Σ_i)`. The stacked
//! coefficient vector `b` contains, per component `l`, one fixed effect for
//! every observed pattern holding `l` except the reference (the lowest
//! observed such pattern, normally pattern 1), followed by
//! the coefficients of the covariates `x_{k,l}` (leading constant included).
//! The prior is flat in `b` and `∝ |Σ_i|^{-(p_i+1)/2}` per pattern.
//!
//! Covariates other than the constant are standardized internally;
//! [`ModelLayout::to_original_scale`] maps coefficients back.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_model::{ComponentCount, SurveyDataset};
use crate::error::{Error, Result};

/// Column bookkeeping of the stacked coefficient vector.
#[derive(Clone, Debug)]
pub struct ComponentBlock {
    pub component: usize,
    pub offset: usize,
    /// Patterns (1-based) with a fixed-effect column, in column order.
    pub pattern_effects: Vec<usize>,
    /// Number of covariates including the constant.
    pub covariate_dim: usize,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl ComponentBlock {
    pub fn len(&self) -> usize {
        self.pattern_effects.len() + self.covariate_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn encode(&self, pattern: usize, covariates: &[f64]) -> DVector<f64> {
        let mut x = DVector::zeros(self.len());
        if let Some(j) = self.pattern_effects.iter().position(|&p| p == pattern) {
            x[j] = 1.0;
        }
        let base = self.pattern_effects.len();
        for (j, v) in covariates.iter().enumerate() {
            x[base + j] = if j == 0 {
                *v
            } else {
                (v - self.center[j]) / self.scale[j]
            };
        }
        x
    }
}

#[derive(Clone, Debug)]
pub struct ModelLayout {
    pub components: ComponentCount,
    /// One block per component, `None` when no household holds it.
    pub blocks: Vec<Option<ComponentBlock>>,
    pub n_coef: usize,
}

impl ModelLayout {
    /// Human-readable name of every coefficient column.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.n_coef];
        for b in self.blocks.iter().flatten() {
            for (j, p) in b.pattern_effects.iter().enumerate() {
                names[b.offset + j] = format!("W{}:pattern{}", b.component + 1, p);
            }
            let base = b.offset + b.pattern_effects.len();
            for j in 0..b.covariate_dim {
                names[base + j] = if j == 0 {
                    format!("W{}:const", b.component + 1)
                } else {
                    format!("W{}:x{}", b.component + 1, j)
                };
            }
        }
        names
    }

    /// Coefficients on the original covariate scale.
    pub fn to_original_scale(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        for blk in self.blocks.iter().flatten() {
            let base = blk.offset + blk.pattern_effects.len();
            let mut shift = 0.0;
            for j in 1..blk.covariate_dim {
                out[base + j] = b[base + j] / blk.scale[j];
                shift += b[base + j] * blk.center[j] / blk.scale[j];
            }
            out[base] = b[base] - shift;
        }
        out
    }

    /// Inverse of [`ModelLayout::to_original_scale`].
    pub fn to_internal_scale(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        for blk in self.blocks.iter().flatten() {
            let base = blk.offset + blk.pattern_effects.len();
            let mut shift = 0.0;
            for j in 1..blk.covariate_dim {
                out[base + j] = b[base + j] * blk.scale[j];
                shift += b[base + j] * blk.center[j];
            }
            out[base] = b[base] + shift;
        }
        out
    }
}

/// Design rows of one household: one encoded row per held component.
#[derive(Clone, Debug)]
pub struct HouseholdDesign {
    pub pattern: usize,
    pub held: Vec<usize>,
    rows: Vec<DVector<f64>>,
}

/// Fixed (covariate-only) parts of the model for a dataset.
#[derive(Clone, Debug)]
pub struct ModelData {
    pub layout: ModelLayout,
    pub households: Vec<HouseholdDesign>,
    /// Household indices per pattern (index 0 is pattern 1).
    pub by_pattern: Vec<Vec<usize>>,
    /// Held components per pattern.
    pub pattern_held: Vec<Vec<usize>>,
    // cross[i][a][b] = Σ_{k in pattern i} x_{k,a} x_{k,b}' over held positions a, b.
    cross: Vec<Vec<Vec<DMatrix<f64>>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceStructure {
    #[default]
    Full,
    /// Comparison mode only: independent components within each pattern.
    Diagonal,
}

impl ModelData {
    pub fn new(ds: &SurveyDataset) -> Result<Self> {
        let count = ds.components;
        let n = count.len();
        let n_patterns = count.pattern_count();
        let sizes = ds.pattern_sizes();
        let pattern_held: Vec<Vec<usize>> = (1..=n_patterns)
            .map(|p| {
                count
                    .pattern_flags(p)
                    .expect("valid pattern")
                    .iter()
                    .enumerate()
                    .filter(|(_, &h)| h)
                    .map(|(l, _)| l)
                    .collect()
            })
            .collect();

        let mut blocks = Vec::with_capacity(n);
        let mut offset = 0;
        for l in 0..n {
            let holders: Vec<&Vec<f64>> = ds.records.iter().filter_map(|r| r.covariates[l].as_ref()).collect();
            if holders.is_empty() {
                blocks.push(None);
                continue;
            }
            let dim = holders[0].len();
            if let Some(bad) = ds
                .records
                .iter()
                .find(|r| r.covariates[l].as_ref().is_some_and(|x| x.len() != dim))
            {
                return Err(Error::invalid(format!(
                    "household {}: component {} has a covariate vector of different length",
                    bad.id,
                    l + 1
                )));
            }
            let m = holders.len() as f64;
            let mut center = vec![0.0; dim];
            let mut scale = vec![1.0; dim];
            for j in 1..dim {
                let mean = holders.iter().map(|x| x[j]).sum::<f64>() / m;
                let var = holders.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / m;
                if var > 0.0 {
                    center[j] = mean;
                    scale[j] = var.sqrt();
                }
            }
            // The lowest observed pattern holding `l` is the reference level
            // (pattern 1 whenever it is observed).
            let pattern_effects: Vec<usize> = (1..=n_patterns)
                .filter(|&p| sizes[p - 1] > 0 && pattern_held[p - 1].contains(&l))
                .skip(1)
                .collect();
            let blk = ComponentBlock {
                component: l,
                offset,
                pattern_effects,
                covariate_dim: dim,
                center,
                scale,
            };
            offset += blk.len();
            blocks.push(Some(blk));
        }
        let layout = ModelLayout {
            components: count,
            blocks,
            n_coef: offset,
        };

        let mut by_pattern = vec![Vec::new(); n_patterns];
        let households: Vec<HouseholdDesign> = ds
            .records
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let pattern = r.holdings.pattern();
                by_pattern[pattern - 1].push(k);
                let held: Vec<usize> = r.holdings.held().collect();
                let rows = held
                    .iter()
                    .map(|&l| {
                        layout.blocks[l]
                            .as_ref()
                            .expect("held component has a block")
                            .encode(pattern, r.covariates[l].as_ref().expect("validated covariates"))
                    })
                    .collect();
                HouseholdDesign { pattern, held, rows }
            })
            .collect();

        let cross = (0..n_patterns)
            .map(|i| {
                let held = &pattern_held[i];
                held.iter()
                    .enumerate()
                    .map(|(a, &la)| {
                        held.iter()
                            .enumerate()
                            .map(|(b, &lb)| {
                                let ra = layout.blocks[la].as_ref().map_or(0, |x| x.len());
                                let rb = layout.blocks[lb].as_ref().map_or(0, |x| x.len());
                                let mut c = DMatrix::zeros(ra, rb);
                                for &k in &by_pattern[i] {
                                    let h = &households[k];
                                    c += &h.rows[a] * h.rows[b].transpose();
                                }
                                c
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();

        let data = Self {
            layout,
            households,
            by_pattern,
            pattern_held,
            cross,
        };
        data.check_identified()?;
        Ok(data)
    }

    pub fn pattern_sizes(&self) -> Vec<usize> {
        self.by_pattern.iter().map(Vec::len).collect()
    }

    /// Patterns (1-based) with at least one household.
    pub fn observed_patterns(&self) -> Vec<usize> {
        (1..=self.by_pattern.len())
            .filter(|&p| !self.by_pattern[p - 1].is_empty())
            .collect()
    }

    /// Precision-weighted cross-product `Σ_k x_k' Σ_i^{-1} x_k`.
    pub fn information(&self, precisions: &[Option<DMatrix<f64>>]) -> DMatrix<f64> {
        let d = self.layout.n_coef;
        let mut lambda = DMatrix::zeros(d, d);
        for (i, held) in self.pattern_held.iter().enumerate() {
            if self.by_pattern[i].is_empty() {
                continue;
            }
            let Some(p) = &precisions[i] else { continue };
            for (a, &la) in held.iter().enumerate() {
                let oa = self.layout.blocks[la].as_ref().unwrap().offset;
                for (b, &lb) in held.iter().enumerate() {
                    let ob = self.layout.blocks[lb].as_ref().unwrap().offset;
                    let c = &self.cross[i][a][b];
                    let mut view = lambda.view_mut((oa, ob), c.shape());
                    view += c * p[(a, b)];
                }
            }
        }
        lambda
    }

    fn check_identified(&self) -> Result<()> {
        let identity: Vec<Option<DMatrix<f64>>> = self
            .pattern_held
            .iter()
            .map(|h| Some(DMatrix::identity(h.len(), h.len())))
            .collect();
        let lambda = self.information(&identity);
        let dependent = dependent_columns(&lambda);
        if dependent.is_empty() {
            Ok(())
        } else {
            let names = self.layout.column_names();
            Err(Error::RankDeficient {
                columns: dependent.into_iter().map(|j| names[j].clone()).collect(),
            })
        }
    }

    /// Mean vector `x_k b` of household `k` (held components in order).
    pub fn mean(&self, k: usize, b: &DVector<f64>) -> DVector<f64> {
        let h = &self.households[k];
        DVector::from_iterator(
            h.held.len(),
            h.held.iter().zip(&h.rows).map(|(&l, row)| {
                let off = self.layout.blocks[l].as_ref().unwrap().offset;
                row.dot(&b.rows(off, row.len()))
            }),
        )
    }
}

/// Columns of a symmetric positive semidefinite matrix that are linear
/// combinations of earlier columns, found by pivot tests during a Cholesky
/// factorization.
pub fn dependent_columns(a: &DMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut dependent = Vec::new();
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 1e-10 * a[(j, j)].abs().max(f64::MIN_POSITIVE)) {
            dependent.push(j);
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    dependent
}

/// Model parameters on the internal (standardized) covariate scale.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub b: DVector<f64>,
    /// `Σ_i` for observed patterns (index 0 is pattern 1).
    pub sigmas: Vec<Option<DMatrix<f64>>>,
    /// `Σ_i^{-1}`, kept in sync with `sigmas`.
    pub precisions: Vec<Option<DMatrix<f64>>>,
}

impl ModelParams {
    pub fn from_precisions(b: DVector<f64>, precisions: Vec<Option<DMatrix<f64>>>) -> Result<Self> {
        let sigmas = precisions
            .iter()
            .map(|p| p.as_ref().map(invert_spd).transpose())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { b, sigmas, precisions })
    }
}

/// Inverse of a symmetric positive definite matrix.
pub fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} matrix", m.nrows(), m.ncols())))?
        .inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Normal full conditional of `b`, represented through its precision.
#[derive(Clone, Debug)]
pub struct CoefficientPosterior {
    pub mean: DVector<f64>,
    /// Lower Cholesky factor of the precision `Σ_b^{-1}`.
    pub precision_factor: DMatrix<f64>,
}

impl CoefficientPosterior {
    pub fn covariance(&self) -> DMatrix<f64> {
        let linv = self
            .precision_factor
            .clone()
            .solve_lower_triangular(&DMatrix::identity(self.mean.len(), self.mean.len()))
            .expect("nonsingular factor");
        linv.transpose() * linv
    }

    /// `mean + L^{-T} z`, which has covariance `Σ_b`.
    pub fn draw(&self, z: &DVector<f64>) -> DVector<f64> {
        let step = self
            .precision_factor
            .transpose()
            .solve_upper_triangular(z)
            .expect("nonsingular factor");
        &self.mean + step
    }
}

/// `Σ_b = (Σ_k x_k' Σ_i^{-1} x_k)^{-1}`, `b̂ = Σ_b Σ_k x_k' Σ_i^{-1} y_k`.
/// `y[k]` holds the log amounts of household `k`'s held components.
pub fn coefficient_full_conditional(
    data: &ModelData,
    precisions: &[Option<DMatrix<f64>>],
    y: &[DVector<f64>],
) -> Result<CoefficientPosterior> {
    let lambda = data.information(precisions);
    let mut h = DVector::zeros(data.layout.n_coef);
    for (k, hh) in data.households.iter().enumerate() {
        let p = precisions[hh.pattern - 1]
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("no covariance for pattern {}", hh.pattern)))?;
        let v = p * &y[k];
        for (a, (&l, row)) in hh.held.iter().zip(&hh.rows).enumerate() {
            let off = data.layout.blocks[l].as_ref().unwrap().offset;
            let mut seg = h.rows_mut(off, row.len());
            seg += row * v[a];
        }
    }
    let chol = lambda.clone().cholesky().ok_or_else(|| {
        let names = data.layout.column_names();
        let dependent = dependent_columns(&lambda);
        if dependent.is_empty() {
            Error::NotPositiveDefinite("coefficient information matrix".into())
        } else {
            Error::RankDeficient {
                columns: dependent.into_iter().map(|j| names[j].clone()).collect(),
            }
        }
    })?;
    let mean = chol.solve(&h);
    Ok(CoefficientPosterior {
        mean,
        precision_factor: chol.l(),
    })
}

/// Degrees of freedom and scale of the Wishart full conditional of
/// `Σ_i^{-1}`: `(m_i, S_i^{-1})` with `S_i = Σ_k (y_k − x_k b)(y_k − x_k b)'`.
pub fn sigma_full_conditional(
    data: &ModelData,
    pattern: usize,
    b: &DVector<f64>,
    y: &[DVector<f64>],
) -> Result<(usize, DMatrix<f64>)> {
    let members = &data.by_pattern[pattern - 1];
    let p = data.pattern_held[pattern - 1].len();
    let m = members.len();
    if m < p + 1 {
        return Err(Error::InsufficientGroup {
            pattern,
            size: m,
            needed: p + 1,
        });
    }
    let s = residual_cross_product(data, pattern, b, y);
    let scale = invert_spd(&s)
        .map_err(|_| Error::NotPositiveDefinite(format!("residual cross-product of pattern {pattern}")))?;
    Ok((m, scale))
}

/// `S_i = Σ_{k in pattern i} (y_k − x_k b)(y_k − x_k b)'`.
pub fn residual_cross_product(data: &ModelData, pattern: usize, b: &DVector<f64>, y: &[DVector<f64>]) -> DMatrix<f64> {
    let p = data.pattern_held[pattern - 1].len();
    let mut s = DMatrix::zeros(p, p);
    for &k in &data.by_pattern[pattern - 1] {
        let r = &y[k] - data.mean(k, b);
        s += &r * r.transpose();
    }
    s
}

/// Log-scale normal full conditional `(mean, sd)` of held position `j`
/// given the others, from the pattern precision `q`:
/// mean `μ_j − Σ_{i≠j} q_ji (y_i − μ_i) / q_jj`, variance `1 / q_jj`.
pub fn component_full_conditional(mu: &DVector<f64>, q: &DMatrix<f64>, y: &DVector<f64>, j: usize) -> (f64, f64) {
    let qjj = q[(j, j)];
    let mut shift = 0.0;
    for i in 0..mu.len() {
        if i != j {
            shift += q[(j, i)] * (y[i] - mu[i]);
        }
    }
    (mu[j] - shift / qjj, (1.0 / qjj).sqrt())
}

/// `Σ_i −(p_i + 1)/2 · log det Σ_i`, up to an additive constant. The prior
/// is improper.
pub fn log_prior(sigmas: &[Option<DMatrix<f64>>]) -> Result<f64> {
    let mut total = 0.0;
    for s in sigmas.iter().flatten() {
        let chol = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("pattern covariance".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        total -= (s.nrows() as f64 + 1.0) / 2.0 * log_det;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::censoring::{CensoringEvidence, Interval};
    use crate::data_model::{DesignKind, HoldingsVector, HouseholdRecord, SurveyDesign};
    use crate::variates::{rng_stream, std_normal, wishart};
    use rand::Rng;

    fn dataset(patterns: &[usize], covs: impl Fn(usize) -> Vec<f64>) -> SurveyDataset {
        let records = patterns
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let holdings = HoldingsVector::from_pattern(ComponentCount::Five, p).unwrap();
                let covariates = (0..5).map(|l| holdings.holds(l).then(|| covs(k))).collect();
                let component_bounds = (0..5)
                    .map(|l| holdings.holds(l).then(|| Interval::point(1.0)))
                    .collect();
                HouseholdRecord {
                    id: format!("h{k:04}"),
                    weight: 1.0,
                    stratum: "s".into(),
                    psu: format!("{k}"),
                    holdings,
                    shares: vec![1.0; 5],
                    covariates,
                    evidence: CensoringEvidence {
                        component_bounds,
                        total_bracket: None,
                        isf: None,
                    },
                }
            })
            .collect();
        SurveyDataset::new(ComponentCount::Five, SurveyDesign::new(DesignKind::Srswor), records).unwrap()
    }

    #[test]
    fn single_component_reduces_to_ols() {
        // Pattern 8 only: two components; check component 1 with Σ = I.
        let n = 30;
        let ds = dataset(&vec![8; n], |k| vec![1.0, k as f64, ((k * 7) % 5) as f64]);
        let data = ModelData::new(&ds).unwrap();
        let mut rng = rng_stream(1, 0);
        let y: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(2, |_, _| rng.random_range(0.0..5.0)))
            .collect();
        let mut prec = vec![None; 8];
        prec[7] = Some(DMatrix::identity(2, 2));
        let post = coefficient_full_conditional(&data, &prec, &y).unwrap();
        let b = data.layout.to_original_scale(&post.mean);
        let x = DMatrix::from_fn(n, 3, |k, j| ds.records[k].covariates[0].as_ref().unwrap()[j]);
        let yy = DVector::from_fn(n, |k, _| y[k][0]);
        let ols = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * yy));
        for j in 0..3 {
            assert!((b[j] - ols[j]).abs() < 1e-9, "{} vs {}", b[j], ols[j]);
        }
    }

    #[test]
    fn gls_with_known_correlated_covariance() {
        let n = 40;
        let ds = dataset(&vec![8; n], |k| vec![1.0, (k as f64).sqrt()]);
        let data = ModelData::new(&ds).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
        let q = invert_spd(&sigma).unwrap();
        let mut rng = rng_stream(2, 0);
        let y: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(2, |_, _| std_normal(&mut rng)))
            .collect();
        let mut prec = vec![None; 8];
        prec[7] = Some(q.clone());
        let post = coefficient_full_conditional(&data, &prec, &y).unwrap();
        let b = data.layout.to_original_scale(&post.mean);
        // Independent GLS on the explicitly stacked system.
        let mut xtqx = DMatrix::zeros(4, 4);
        let mut xtqy = DVector::zeros(4);
        for (k, yk) in y.iter().enumerate() {
            let x = ds.records[k].covariates[0].as_ref().unwrap();
            let mut xk = DMatrix::zeros(2, 4);
            xk[(0, 0)] = x[0];
            xk[(0, 1)] = x[1];
            xk[(1, 2)] = x[0];
            xk[(1, 3)] = x[1];
            xtqx += xk.transpose() * &q * &xk;
            xtqy += xk.transpose() * &q * yk;
        }
        let gls = xtqx.cholesky().unwrap().solve(&xtqy);
        assert!((b - gls).amax() < 1e-9);
    }

    #[test]
    fn duplicating_households_halves_covariance() {
        let n = 20;
        let base: Vec<usize> = (0..n).map(|k| if k % 2 == 0 { 8 } else { 5 }).collect();
        let cov = |k: usize| vec![1.0, ((k % 10) as f64).powi(2), (k % 3) as f64];
        let ds1 = dataset(&base, cov);
        let doubled: Vec<usize> = base.iter().chain(&base).copied().collect();
        let ds2 = dataset(&doubled, |k| cov(k % n));
        let d1 = ModelData::new(&ds1).unwrap();
        let d2 = ModelData::new(&ds2).unwrap();
        let prec: Vec<Option<DMatrix<f64>>> = d1
            .pattern_held
            .iter()
            .map(|h| Some(DMatrix::identity(h.len(), h.len()) * 0.5))
            .collect();
        let y1: Vec<DVector<f64>> = d1
            .households
            .iter()
            .map(|h| DVector::from_element(h.held.len(), 1.0))
            .collect();
        let y2: Vec<DVector<f64>> = d2
            .households
            .iter()
            .map(|h| DVector::from_element(h.held.len(), 1.0))
            .collect();
        let c1 = coefficient_full_conditional(&d1, &prec, &y1).unwrap().covariance();
        let c2 = coefficient_full_conditional(&d2, &prec, &y2).unwrap().covariance();
        assert!((c1 * 0.5 - c2).amax() < 1e-10);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        // A covariate equal to the constant in every household.
        let ds = dataset(&[8, 8, 8, 5, 5, 5], |_| vec![1.0, 3.0]);
        match ModelData::new(&ds) {
            Err(Error::RankDeficient { columns }) => {
                assert!(columns.iter().any(|c| c == "W1:x1"), "{columns:?}");
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn two_patterns_with_generic_covariates_are_identified() {
        let ds = dataset(&[1, 1, 1, 8, 8, 8, 5, 5, 5, 2, 2, 2], |k| {
            vec![1.0, (k as f64).ln_1p(), ((k * 5) % 7) as f64]
        });
        assert!(ModelData::new(&ds).is_ok());
    }

    #[test]
    fn sigma_conditional_checks() {
        let ds = dataset(&[8, 8], |k| vec![1.0, k as f64]);
        let data = ModelData::new(&ds).unwrap_or_else(|_| panic!("identified"));
        let y = vec![DVector::from_element(2, 1.0); 2];
        let b = DVector::zeros(data.layout.n_coef);
        assert!(matches!(
            sigma_full_conditional(&data, 8, &b, &y),
            Err(Error::InsufficientGroup {
                pattern: 8,
                size: 2,
                needed: 3
            })
        ));
        let ds = dataset(&[8; 5], |k| vec![1.0, k as f64]);
        let data = ModelData::new(&ds).unwrap();
        let b = DVector::zeros(data.layout.n_coef);
        let y = vec![DVector::zeros(2); 5];
        assert!(matches!(
            sigma_full_conditional(&data, 8, &b, &y),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn inverse_wishart_mean_matches_moment() {
        let n = 25;
        let ds = dataset(&vec![8; n], |k| vec![1.0, k as f64]);
        let data = ModelData::new(&ds).unwrap();
        let mut rng = rng_stream(3, 0);
        let y: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(2, |_, _| 2.0 * std_normal(&mut rng)))
            .collect();
        let b = DVector::zeros(data.layout.n_coef);
        let (df, scale) = sigma_full_conditional(&data, 8, &b, &y).unwrap();
        let s = residual_cross_product(&data, 8, &b, &y);
        let draws = 10_000;
        let mut sum = DMatrix::zeros(2, 2);
        let mut sq = DMatrix::zeros(2, 2);
        for _ in 0..draws {
            let sigma = invert_spd(&wishart(df, &scale, &mut rng).unwrap()).unwrap();
            sq += sigma.component_mul(&sigma);
            sum += sigma;
        }
        let mean = &sum / draws as f64;
        let target = &s / (df as f64 - 2.0 - 1.0);
        for i in 0..2 {
            for j in 0..2 {
                let var = sq[(i, j)] / draws as f64 - mean[(i, j)].powi(2);
                assert!((mean[(i, j)] - target[(i, j)]).abs() < 4.0 * (var / draws as f64).sqrt());
            }
        }
    }

    #[test]
    fn scalar_case_is_scaled_inverse_chi_square() {
        // For p = 1 the density of σ² under the full conditional is
        // ∝ (σ²)^{-(m/2+1)} exp(−S/(2σ²)); compare density ratios on a grid
        // via the Wishart density of the precision τ = 1/σ².
        let m = 9.0;
        let s = 4.5;
        let log_density_tau = |tau: f64| (m / 2.0 - 1.0) * tau.ln() - s * tau / 2.0;
        let log_density_sigma2 = |v: f64| -(m / 2.0 + 1.0) * v.ln() - s / (2.0 * v);
        let grid = [0.2, 0.5, 1.0, 2.0];
        for w in grid.windows(2) {
            let (a, b) = (w[0], w[1]);
            // Change of variables σ² = 1/τ with Jacobian τ^{-2}.
            let via_tau =
                (log_density_tau(1.0 / b) + 2.0 * (1.0 / b).ln()) - (log_density_tau(1.0 / a) + 2.0 * (1.0 / a).ln());
            let direct = log_density_sigma2(b) - log_density_sigma2(a);
            assert!((via_tau - direct).abs() < 1e-12);
        }
        // Monte Carlo: mean of σ² is S/(m − 2).
        let mut rng = rng_stream(4, 0);
        let scale = DMatrix::from_element(1, 1, 1.0 / s);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| 1.0 / wishart(9, &scale, &mut rng).unwrap()[(0, 0)])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - s / (m - 2.0)).abs() < 4.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn component_conditional_identities() {
        let mu = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0, 1.0]));
        let y = DVector::from_vec(vec![0.0, 10.0, -4.0]);
        let (m, sd) = component_full_conditional(&mu, &invert_spd(&diag).unwrap(), &y, 1);
        assert!((m - 2.0).abs() < 1e-12 && (sd - 3.0).abs() < 1e-12);

        let (sigma, rho) = (1.5_f64, 0.7_f64);
        let cov = DMatrix::from_row_slice(
            2,
            2,
            &[sigma * sigma, rho * sigma * sigma, rho * sigma * sigma, sigma * sigma],
        );
        let (_, sd) = component_full_conditional(&DVector::zeros(2), &invert_spd(&cov).unwrap(), &DVector::zeros(2), 0);
        assert!((sd * sd - sigma * sigma * (1.0 - rho * rho)).abs() < 1e-12);
    }

    #[test]
    fn component_conditional_matches_density_ratio() {
        let mut rng = rng_stream(5, 0);
        for _ in 0..50 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let cov = &a * a.transpose() + DMatrix::identity(3, 3) * 0.3;
            let q = invert_spd(&cov).unwrap();
            let mu = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let mut y = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let j = rng.random_range(0..3);
            let (m, sd) = component_full_conditional(&mu, &q, &y, j);
            let log_joint = |y: &DVector<f64>| -0.5 * ((y - &mu).transpose() * &q * (y - &mu))[(0, 0)];
            let (x1, x2) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            y[j] = x1;
            let l1 = log_joint(&y);
            y[j] = x2;
            let l2 = log_joint(&y);
            let cond = |x: f64| -0.5 * ((x - m) / sd).powi(2);
            assert!(((l2 - l1) - (cond(x2) - cond(x1))).abs() < 1e-9);
        }
    }

    #[test]
    fn conditional_sweeps_reproduce_joint_covariance() {
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 2.0, -0.3, 0.2, -0.3, 0.8]);
        let q = invert_spd(&cov).unwrap();
        let mu = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let mut y = mu.clone();
        let mut rng = rng_stream(6, 0);
        let n = 200_000;
        let mut sq = DMatrix::zeros(3, 3);
        for _ in 0..n {
            for j in 0..3 {
                let (m, sd) = component_full_conditional(&mu, &q, &y, j);
                y[j] = m + sd * std_normal(&mut rng);
            }
            let d = &y - &mu;
            sq += &d * d.transpose();
        }
        let emp = sq / n as f64;
        // Autocorrelated draws: allow a generous multiple of the iid error.
        assert!((emp - cov).amax() < 0.05);
    }

    #[test]
    fn log_prior_examples() {
        let id = vec![Some(DMatrix::identity(3, 3)), None, Some(DMatrix::identity(1, 1))];
        assert_eq!(log_prior(&id).unwrap(), 0.0);
        let c: f64 = 2.5;
        let scaled = vec![Some(DMatrix::identity(3, 3) * c)];
        assert!((log_prior(&scaled).unwrap() + 2.0 * 3.0 * c.ln()).abs() < 1e-12);
    }

    #[test]
    fn scale_maps_are_inverse() {
        let patterns: Vec<usize> = (0..30).map(|k| [1, 8, 5][k % 3]).collect();
        let ds = dataset(&patterns, |k| vec![1.0, k as f64 * 3.0 + 1.0, ((k * k) % 7) as f64]);
        let data = ModelData::new(&ds).unwrap();
        let b = DVector::from_fn(data.layout.n_coef, |i, _| i as f64 * 0.1 - 0.5);
        let back = data.layout.to_internal_scale(&data.layout.to_original_scale(&b));
        assert!((back - b).amax() < 1e-12);
    }
}
