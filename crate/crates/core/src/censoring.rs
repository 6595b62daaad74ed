//! Censoring domains: the set of wealth vectors compatible with a
//! household's bracket answers, overview question and wealth-tax status.
//!
//! A domain is a box intersected with constraints `g(w) ≥ θ` or `g(w) ≤ θ`
//! where `g` is a sum of nondecreasing one-dimensional terms (linear or
//! linear-then-flat). Holding every other component fixed, the admissible
//! values of one component therefore form an interval, which is computed
//! here in closed form.

use std::fmt;

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use crate::data_model::{ComponentCount, HoldingsVector};
use crate::error::{Error, Result};

/// Relative tolerance of membership tests.
pub const TOLERANCE: f64 = 1e-9;

/// Closed interval `[lo, hi]`; `hi` may be `+∞` for open-ended brackets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        let tol = TOLERANCE
            * 1f64
                .max(self.lo.abs())
                .max(if self.hi.is_finite() { self.hi.abs() } else { 0.0 });
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Bounds on the nondeductible part of professional wealth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NondeductibleBounds {
    pub min: f64,
    pub max: f64,
}

/// Linked wealth-tax information for one household.
#[derive(Clone, Debug, PartialEq)]
pub struct IsfRecord {
    pub pays_tax: bool,
    /// Deductible debts.
    pub debt: f64,
    /// Present only when professional wealth is held; absent means no
    /// nondeductible professional wealth.
    pub nd: Option<NondeductibleBounds>,
    /// Whether some professional wealth might not be deductible.
    pub i_flag: bool,
}

/// Everything the survey tells us about one household's wealth.
#[derive(Clone, Debug, PartialEq)]
pub struct CensoringEvidence {
    /// One entry per component; `Some` exactly for held components.
    pub component_bounds: Vec<Option<Interval>>,
    /// Bracket on total wealth `Σ s^l w^l`.
    pub total_bracket: Option<Interval>,
    pub isf: Option<IsfRecord>,
}

impl CensoringEvidence {
    pub fn validate(&self, holdings: &HoldingsVector, household: &str) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("household {household}: {m}")));
        let n = holdings.count().len();
        if self.component_bounds.len() != n {
            return bad(format!(
                "expected {n} component bounds, got {}",
                self.component_bounds.len()
            ));
        }
        for (l, b) in self.component_bounds.iter().enumerate() {
            match (holdings.holds(l), b) {
                (true, Some(iv)) => {
                    if !(iv.lo.is_finite() && iv.lo >= 0.0) {
                        return bad(format!("component {} lower bound {} is invalid", l + 1, iv.lo));
                    }
                    if iv.hi.is_nan() || iv.hi < iv.lo {
                        return bad(format!("component {} has empty bracket {iv}", l + 1));
                    }
                }
                (true, None) => return bad(format!("held component {} has no bracket", l + 1)),
                (false, Some(_)) => return bad(format!("component {} is not held but has a bracket", l + 1)),
                (false, None) => {}
            }
        }
        if let Some(t) = &self.total_bracket {
            if !(t.lo.is_finite() && t.lo >= 0.0) || t.hi.is_nan() || t.hi < t.lo {
                return bad(format!("total bracket {t} is invalid"));
            }
        }
        if let Some(isf) = &self.isf {
            if !(isf.debt.is_finite() && isf.debt >= 0.0) {
                return bad(format!("deductible debt {} is invalid", isf.debt));
            }
            let prof = holdings.count().professional_component();
            if let Some(nd) = &isf.nd {
                if !holdings.holds(prof) {
                    return bad("nondeductible bounds given without professional wealth".into());
                }
                if !(nd.min.is_finite() && nd.min >= 0.0 && nd.max >= nd.min) {
                    return bad(format!("nondeductible bounds [{}, {}] are invalid", nd.min, nd.max));
                }
            }
        }
        Ok(())
    }

    /// Evidence for the 4-component representation, where the principal
    /// residence share and other real estate form one component. Brackets
    /// of the new component are the share-weighted sums of the originals.
    pub fn aggregate_real_estate(&self, holdings: &HoldingsVector, share2: f64) -> CensoringEvidence {
        let b = &self.component_bounds;
        let combined = match (holdings.holds(1), holdings.holds(2)) {
            (false, false) => None,
            (h2, h3) => {
                let (lo2, hi2) = if h2 {
                    let iv = b[1].unwrap_or(Interval::point(0.0));
                    (share2 * iv.lo, share2 * iv.hi)
                } else {
                    (0.0, 0.0)
                };
                let (lo3, hi3) = if h3 {
                    let iv = b[2].unwrap_or(Interval::point(0.0));
                    (iv.lo, iv.hi)
                } else {
                    (0.0, 0.0)
                };
                Some(Interval::new(lo2 + lo3, hi2 + hi3))
            }
        };
        CensoringEvidence {
            component_bounds: vec![b[0], combined, b[3], b[4]],
            total_bracket: self.total_bracket,
            isf: self.isf.clone(),
        }
    }
}

/// One-dimensional nondecreasing term of a constraint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Term {
    /// `c · w`
    Linear(f64),
    /// `c · min(w, κ)`
    Capped(f64, f64),
}

impl Term {
    pub fn eval(&self, w: f64) -> f64 {
        match *self {
            Term::Linear(c) => c * w,
            Term::Capped(c, k) => c * w.min(k),
        }
    }

    fn coef(&self) -> f64 {
        match *self {
            Term::Linear(c) | Term::Capped(c, _) => c,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sense {
    AtLeast(f64),
    AtMost(f64),
}

impl Sense {
    fn threshold(&self) -> f64 {
        match *self {
            Sense::AtLeast(t) | Sense::AtMost(t) => t,
        }
    }
}

/// `Σ term_l(w_l) + offset` compared with a threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneConstraint {
    pub name: String,
    pub terms: Vec<(usize, Term)>,
    pub offset: f64,
    pub sense: Sense,
}

impl MonotoneConstraint {
    pub fn new(name: impl Into<String>, terms: Vec<(usize, Term)>, offset: f64, sense: Sense) -> Self {
        Self {
            name: name.into(),
            terms,
            offset,
            sense,
        }
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        self.terms.iter().map(|(l, t)| t.eval(w[*l])).sum::<f64>() + self.offset
    }

    fn tolerance(&self, w: &[f64]) -> f64 {
        let scale = self
            .terms
            .iter()
            .map(|(l, t)| t.eval(w[*l]).abs())
            .sum::<f64>()
            .max(self.offset.abs())
            .max(self.sense.threshold().abs())
            .max(1.0);
        TOLERANCE * scale
    }

    pub fn is_satisfied(&self, w: &[f64]) -> bool {
        let g = self.eval(w);
        let tol = self.tolerance(w);
        match self.sense {
            Sense::AtLeast(t) => g >= t - tol,
            Sense::AtMost(t) => g <= t + tol,
        }
    }

    fn involves(&self, l: usize) -> Option<Term> {
        self.terms.iter().find(|(j, _)| *j == l).map(|(_, t)| *t)
    }

    fn check_monotone(&self) -> Result<()> {
        for (l, t) in &self.terms {
            let ok = match *t {
                Term::Linear(c) => c.is_finite() && c >= 0.0,
                Term::Capped(c, k) => c.is_finite() && c >= 0.0 && k > 0.0,
            };
            if !ok {
                return Err(Error::invalid(format!(
                    "constraint {}: term on component {} is not nondecreasing",
                    self.name,
                    l + 1
                )));
            }
        }
        if !(self.offset.is_finite() && self.sense.threshold().is_finite()) {
            return Err(Error::invalid(format!(
                "constraint {}: nonfinite offset or threshold",
                self.name
            )));
        }
        Ok(())
    }
}

/// Global settings for domain construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainConfig {
    /// Replaces unbounded bracket uppers.
    pub cap: f64,
    /// Lower bound substituted for held components reported at zero.
    pub floor: f64,
    /// Taxable wealth above which the wealth tax is due.
    pub tax_threshold: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            cap: 1e8,
            floor: 1.0,
            tax_threshold: 720_000.0,
        }
    }
}

/// Admissible wealth vectors of one household. Components that are not
/// held have the degenerate box `[0, 0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CensoringDomain {
    boxes: Vec<Interval>,
    constraints: Vec<MonotoneConstraint>,
}

impl CensoringDomain {
    /// Validates monotonicity and joint feasibility.
    pub fn new(boxes: Vec<Interval>, constraints: Vec<MonotoneConstraint>) -> Result<Self> {
        Self::checked(boxes, constraints, "<domain>")
    }

    fn checked(boxes: Vec<Interval>, constraints: Vec<MonotoneConstraint>, household: &str) -> Result<Self> {
        let inconsistent = |c: String| Error::InconsistentEvidence {
            household: household.to_string(),
            constraint: c,
        };
        for (l, b) in boxes.iter().enumerate() {
            if !(b.lo.is_finite() && b.hi.is_finite()) || b.hi < b.lo {
                return Err(inconsistent(format!(
                    "component {} box {b} is empty or unbounded",
                    l + 1
                )));
            }
        }
        for c in &constraints {
            c.check_monotone()?;
            if let Some((l, _)) = c.terms.iter().find(|(l, _)| *l >= boxes.len()) {
                return Err(Error::invalid(format!(
                    "constraint {} refers to component {} of {}",
                    c.name,
                    l + 1,
                    boxes.len()
                )));
            }
        }
        let dom = Self { boxes, constraints };
        let lows: Vec<f64> = dom.boxes.iter().map(|b| b.lo).collect();
        let highs: Vec<f64> = dom.boxes.iter().map(|b| b.hi).collect();
        for c in &dom.constraints {
            let ok = match c.sense {
                Sense::AtLeast(_) => c.is_satisfied(&highs),
                Sense::AtMost(_) => c.is_satisfied(&lows),
            };
            if !ok {
                return Err(inconsistent(c.name.clone()));
            }
        }
        if dom.interior_point().is_none() {
            let names: Vec<&str> = dom.constraints.iter().map(|c| c.name.as_str()).collect();
            return Err(inconsistent(format!("jointly infeasible: {}", names.join(", "))));
        }
        Ok(dom)
    }

    pub fn boxes(&self) -> &[Interval] {
        &self.boxes
    }

    pub fn constraints(&self) -> &[MonotoneConstraint] {
        &self.constraints
    }

    pub fn dim(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_rectangular(&self) -> bool {
        self.constraints.is_empty()
    }

    /// True iff `w` lies in every box and satisfies every constraint, up
    /// to a relative tolerance of 1e-9.
    pub fn contains(&self, w: &[f64]) -> bool {
        w.len() == self.boxes.len()
            && self.boxes.iter().zip(w).all(|(b, &v)| b.contains(v))
            && self.constraints.iter().all(|c| c.is_satisfied(w))
    }

    /// The set `{x : (w with w_l = x) ∈ domain}`.
    pub fn conditional_interval(&self, l: usize, fixed: &[f64]) -> Result<Interval> {
        let infeasible = |detail: String| Error::ConditionalInfeasibility {
            component: l + 1,
            detail,
        };
        if l >= self.boxes.len() || fixed.len() != self.boxes.len() {
            return Err(Error::invalid("component index or vector length out of range"));
        }
        let mut lo = self.boxes[l].lo;
        let mut hi = self.boxes[l].hi;
        for c in &self.constraints {
            let Some(term) = c.involves(l) else {
                if !c.is_satisfied(fixed) {
                    return Err(infeasible(format!(
                        "constraint {} violated by fixed components",
                        c.name
                    )));
                }
                continue;
            };
            let rest: f64 = c
                .terms
                .iter()
                .filter(|(j, _)| *j != l)
                .map(|(j, t)| t.eval(fixed[*j]))
                .sum::<f64>()
                + c.offset;
            let tol = c.tolerance(fixed);
            match c.sense {
                Sense::AtLeast(theta) => {
                    let need = theta - rest;
                    let c0 = term.coef();
                    if need <= 0.0 {
                        continue;
                    }
                    if c0 == 0.0 {
                        if need > tol {
                            return Err(infeasible(format!("constraint {} cannot be reached", c.name)));
                        }
                        continue;
                    }
                    let x = need / c0;
                    if let Term::Capped(_, kappa) = term {
                        if x > kappa && need - c0 * kappa > tol {
                            return Err(infeasible(format!(
                                "constraint {} needs {x} beyond the cap {kappa}",
                                c.name
                            )));
                        }
                        lo = lo.max(x.min(kappa));
                    } else {
                        lo = lo.max(x);
                    }
                }
                Sense::AtMost(theta) => {
                    let room = theta - rest;
                    let c0 = term.coef();
                    if c0 == 0.0 {
                        if room < -tol {
                            return Err(infeasible(format!("constraint {} is exceeded", c.name)));
                        }
                        continue;
                    }
                    let x = room / c0;
                    match term {
                        Term::Capped(_, kappa) if x >= kappa => {}
                        _ => hi = hi.min(x),
                    }
                }
            }
        }
        if lo > hi {
            let scale = 1f64.max(lo.abs()).max(hi.abs());
            if lo - hi <= 1e-7 * scale {
                let mid = 0.5 * (lo + hi);
                return Ok(Interval::point(mid));
            }
            return Err(infeasible(format!("empty interval [{lo}, {hi}]")));
        }
        Ok(Interval::new(lo, hi))
    }

    /// A point of the domain that maximizes the smallest normalized slack
    /// over boxes and constraints, or `None` if the domain is empty.
    pub fn interior_point(&self) -> Option<Vec<f64>> {
        // AtMost constraints with capped terms are not convex; enumerate
        // which side of each cap the point lies on.
        let capped_at_most: Vec<(usize, usize)> = self
            .constraints
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!(c.sense, Sense::AtMost(_)))
            .flat_map(|(ci, c)| {
                c.terms
                    .iter()
                    .enumerate()
                    .filter(|(_, (_, t))| matches!(t, Term::Capped(..)))
                    .map(move |(ti, _)| (ci, ti))
            })
            .collect();
        let cases = 1usize << capped_at_most.len().min(16);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for case in 0..cases {
            if let Some((margin, w)) = self.solve_case(&capped_at_most, case) {
                if best.as_ref().is_none_or(|(m, _)| margin > *m) {
                    best = Some((margin, w));
                }
            }
        }
        best.map(|(_, w)| w).filter(|w| self.contains(w))
    }

    fn solve_case(&self, capped_at_most: &[(usize, usize)], case: usize) -> Option<(f64, Vec<f64>)> {
        const SCALE: f64 = 1e4;
        let mut lp = Problem::new(OptimizationDirection::Maximize);
        let margin = lp.add_var(1.0, (0.0, 0.5));
        let vars: Vec<_> = self
            .boxes
            .iter()
            .map(|b| lp.add_var(0.0, (b.lo / SCALE, b.hi / SCALE)))
            .collect();
        for (l, b) in self.boxes.iter().enumerate() {
            let width = b.width() / SCALE;
            if width > 0.0 {
                lp.add_constraint([(vars[l], 1.0), (margin, -width)], ComparisonOp::Ge, b.lo / SCALE);
                lp.add_constraint([(vars[l], 1.0), (margin, width)], ComparisonOp::Le, b.hi / SCALE);
            }
        }
        for (ci, c) in self.constraints.iter().enumerate() {
            let theta = c.sense.threshold();
            let spread = 1f64.max(theta.abs()).max(c.offset.abs()) / SCALE;
            let slack = 1e-3 * spread;
            let tol = TOLERANCE * spread;
            let mut expr: Vec<(minilp::Variable, f64)> = Vec::new();
            let mut constant = c.offset / SCALE;
            for (ti, (l, term)) in c.terms.iter().enumerate() {
                match (*term, c.sense) {
                    (Term::Linear(k), _) => expr.push((vars[*l], k)),
                    (Term::Capped(k, kappa), Sense::AtLeast(_)) => {
                        let y = lp.add_var(0.0, (0.0, kappa / SCALE));
                        lp.add_constraint([(y, 1.0), (vars[*l], -1.0)], ComparisonOp::Le, 0.0);
                        expr.push((y, k));
                    }
                    (Term::Capped(k, kappa), Sense::AtMost(_)) => {
                        let idx = capped_at_most.iter().position(|&p| p == (ci, ti)).unwrap_or(0);
                        let above = idx < 16 && (case >> idx) & 1 == 1;
                        if above {
                            lp.add_constraint([(vars[*l], 1.0)], ComparisonOp::Ge, kappa / SCALE);
                            constant += k * kappa / SCALE;
                        } else {
                            lp.add_constraint([(vars[*l], 1.0)], ComparisonOp::Le, kappa / SCALE);
                            expr.push((vars[*l], k));
                        }
                    }
                }
            }
            match c.sense {
                Sense::AtLeast(_) => {
                    expr.push((margin, -slack));
                    lp.add_constraint(expr, ComparisonOp::Ge, theta / SCALE - constant - tol);
                }
                Sense::AtMost(_) => {
                    expr.push((margin, slack));
                    lp.add_constraint(expr, ComparisonOp::Le, theta / SCALE - constant + tol);
                }
            }
        }
        let sol = lp.solve().ok()?;
        let w: Vec<f64> = vars
            .iter()
            .zip(&self.boxes)
            .map(|(v, b)| (sol.var_value(*v) * SCALE).clamp(b.lo, b.hi))
            .collect();
        Some((*sol.var_value(margin), w))
    }
}

fn isf_constraint(
    count: ComponentCount,
    holdings: &HoldingsVector,
    shares: &[f64],
    isf: &IsfRecord,
    threshold: f64,
) -> MonotoneConstraint {
    let held = |l: usize| holdings.holds(l);
    let nd = isf.nd.unwrap_or(NondeductibleBounds { min: 0.0, max: 0.0 });
    let mut terms = Vec::new();
    let push = |l: usize, t: Term, terms: &mut Vec<(usize, Term)>| {
        if held(l) {
            terms.push((l, t));
        }
    };
    match (count, isf.pays_tax) {
        (ComponentCount::Five, true) => {
            push(0, Term::Linear(1.0), &mut terms);
            push(1, Term::Linear(0.8 * shares[1]), &mut terms);
            push(2, Term::Linear(1.0), &mut terms);
            if isf.i_flag && nd.max > 0.0 {
                push(3, Term::Capped(1.0, nd.max), &mut terms);
            }
            push(4, Term::Linear(1.0), &mut terms);
            MonotoneConstraint::new(
                "wealth tax payer: upper taxable-wealth bound reaches threshold",
                terms,
                -isf.debt,
                Sense::AtLeast(threshold),
            )
        }
        (ComponentCount::Five, false) => {
            push(0, Term::Linear(1.0), &mut terms);
            push(1, Term::Linear(0.8 * shares[1]), &mut terms);
            push(2, Term::Linear(1.0), &mut terms);
            MonotoneConstraint::new(
                "wealth tax non-payer: lower taxable-wealth bound stays below threshold",
                terms,
                nd.min - isf.debt,
                Sense::AtMost(threshold),
            )
        }
        (ComponentCount::Four, true) => {
            push(0, Term::Linear(1.0), &mut terms);
            push(1, Term::Linear(1.0), &mut terms);
            if isf.i_flag && nd.max > 0.0 {
                push(2, Term::Capped(1.0, nd.max), &mut terms);
            }
            push(3, Term::Linear(1.0), &mut terms);
            MonotoneConstraint::new(
                "wealth tax payer: upper taxable-wealth bound reaches threshold",
                terms,
                -isf.debt,
                Sense::AtLeast(threshold),
            )
        }
        (ComponentCount::Four, false) => {
            push(0, Term::Linear(1.0), &mut terms);
            push(1, Term::Linear(0.8), &mut terms);
            MonotoneConstraint::new(
                "wealth tax non-payer: lower taxable-wealth bound stays below threshold",
                terms,
                nd.min - isf.debt,
                Sense::AtMost(threshold),
            )
        }
    }
}

/// Builds the domain of a household from its evidence.
pub fn build_domain(
    household: &str,
    holdings: &HoldingsVector,
    shares: &[f64],
    evidence: &CensoringEvidence,
    config: &DomainConfig,
) -> Result<CensoringDomain> {
    evidence.validate(holdings, household)?;
    let count = holdings.count();
    let mut boxes = Vec::with_capacity(count.len());
    for (l, b) in evidence.component_bounds.iter().enumerate() {
        let Some(b) = b else {
            boxes.push(Interval::point(0.0));
            continue;
        };
        let lo = if b.lo == 0.0 { config.floor } else { b.lo };
        let hi = if b.hi.is_finite() { b.hi } else { config.cap };
        if hi < lo {
            return Err(Error::InconsistentEvidence {
                household: household.to_string(),
                constraint: format!(
                    "component {} bracket {b} lies outside [floor {}, cap {}]",
                    l + 1,
                    config.floor,
                    config.cap
                ),
            });
        }
        boxes.push(Interval::new(lo, hi));
    }
    let mut constraints = Vec::new();
    if let Some(t) = &evidence.total_bracket {
        let terms: Vec<(usize, Term)> = holdings.held().map(|l| (l, Term::Linear(shares[l]))).collect();
        constraints.push(MonotoneConstraint::new(
            "total wealth bracket lower end",
            terms.clone(),
            0.0,
            Sense::AtLeast(t.lo),
        ));
        if t.hi.is_finite() {
            constraints.push(MonotoneConstraint::new(
                "total wealth bracket upper end",
                terms,
                0.0,
                Sense::AtMost(t.hi),
            ));
        }
    }
    if let Some(isf) = &evidence.isf {
        constraints.push(isf_constraint(count, holdings, shares, isf, config.tax_threshold));
    }
    CensoringDomain::checked(boxes, constraints, household)
}
