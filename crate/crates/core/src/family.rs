//! Parametric families `Q(y | theta)` over a finite outcome space.
//!
//! A [`ParametricFamily`] is the channel every solver works on. Families with
//! infinite support are truncated once at construction and each row is
//! renormalized; continuous outcomes are binned. `k` iid trials are folded in
//! through the family's sufficient statistic so the outcome space stays small.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infomath::{entropy, PriorGrid};

/// Default bin count for binned continuous families.
pub const DEFAULT_BINS: usize = 256;
/// Default discarded tail mass for truncated infinite supports.
pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-10;

const TRUNCATION_SCAN_POINTS: usize = 1001;
const NORMAL_SPAN_SDS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub index: usize,
    /// Represented outcome value, or the bin center for binned families.
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaDomain {
    pub lo: f64,
    pub hi: f64,
}

impl ThetaDomain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::param(format!("invalid theta domain [{lo}, {hi}]")));
        }
        Ok(ThetaDomain { lo, hi })
    }

    pub fn contains(&self, theta: f64) -> bool {
        theta >= self.lo && theta <= self.hi
    }

    pub fn check(&self, theta: f64) -> Result<()> {
        if self.contains(theta) {
            Ok(())
        } else {
            Err(Error::Domain { theta, lo: self.lo, hi: self.hi })
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

#[derive(Debug, Clone)]
enum Kind {
    /// Number of successes in `trials` Bernoulli draws.
    Binomial { coeffs: Vec<f64> },
    /// Sum of `trials` Poisson(theta) draws, i.e. Poisson(trials * theta).
    Poisson { tol: f64 },
    /// Failures before the `r * trials`-th success; theta is the success probability.
    NegativeBinomial { r: f64, tol: f64 },
    /// Sample mean of `trials` N(theta, sigma^2) draws, binned.
    Normal { sigma: f64, bins: usize, edges: Vec<f64> },
    /// Finite input alphabet; theta is the row index.
    Table { rows: Vec<Vec<f64>> },
    /// Every theta yields the same outcome distribution.
    Constant { probs: Vec<f64> },
}

/// A conditional model `Q(y | theta)` on a closed real interval of theta.
///
/// Immutable after construction and cheap to clone.
#[derive(Clone)]
pub struct ParametricFamily {
    name: String,
    domain: ThetaDomain,
    outcomes: Vec<Outcome>,
    trials: u32,
    truncation_mass: f64,
    kind: Arc<Kind>,
}

impl fmt::Debug for ParametricFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametricFamily")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("outcomes", &self.outcomes.len())
            .field("trials", &self.trials)
            .field("truncation_mass", &self.truncation_mass)
            .finish()
    }
}

fn ln_factorial(n: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0)
}

fn binomial_coeffs(n: u32) -> Vec<f64> {
    let n = n as usize;
    let mut c = vec![1.0; n + 1];
    for y in 1..=n {
        // exact for every n where the result fits f64 mantissa, rounded otherwise
        c[y] = c[y - 1] * (n + 1 - y) as f64 / y as f64;
    }
    c
}

fn poisson_ln_pmf(mean: f64, y: usize) -> f64 {
    if mean == 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    y as f64 * mean.ln() - mean - ln_factorial(y)
}

fn negbin_ln_pmf(r: f64, p: f64, y: usize) -> f64 {
    if p >= 1.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let yf = y as f64;
    libm::lgamma(yf + r) - libm::lgamma(r) - ln_factorial(y) + r * p.ln() + yf * (-p).ln_1p()
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Smallest `y_max` such that the tail mass above it is at most `tol` for
/// every theta on a dense scan of the domain. Returns `(y_max, sup tail)`.
fn truncate_support(
    domain: ThetaDomain,
    tol: f64,
    ln_pmf: impl Fn(f64, usize) -> f64,
    upper_guess: impl Fn(f64) -> usize,
) -> (usize, f64) {
    let scan: Vec<f64> = linspace(domain.lo, domain.hi, TRUNCATION_SCAN_POINTS);
    let mut y_max = 0usize;
    for &theta in &scan {
        let top = upper_guess(theta);
        // tail(y) = sum_{j > y} pmf(j), accumulated from the top down
        let mut tail = 0.0;
        let mut needed = 0usize;
        for y in (0..top).rev() {
            tail += ln_pmf(theta, y + 1).exp();
            if tail > tol {
                needed = y + 1;
                break;
            }
        }
        y_max = y_max.max(needed);
    }
    let mut sup_tail: f64 = 0.0;
    for &theta in &scan {
        let kept: f64 = (0..=y_max).map(|y| ln_pmf(theta, y).exp()).sum();
        sup_tail = sup_tail.max((1.0 - kept).max(0.0));
    }
    (y_max, sup_tail)
}

/// `n` evenly spaced points over `[lo, hi]`, endpoints exact. A single point
/// sits at the midpoint.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

fn counting_outcomes(n: usize) -> Vec<Outcome> {
    (0..n).map(|i| Outcome { index: i, value: i as f64 }).collect()
}

fn normalize_in_place(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    if total > 0.0 {
        for q in row.iter_mut() {
            *q /= total;
        }
    }
}

fn normal_edges(domain: ThetaDomain, sigma: f64, trials: u32, bins: usize) -> Vec<f64> {
    let spread = NORMAL_SPAN_SDS * sigma / (trials as f64).sqrt();
    linspace(domain.lo - spread, domain.hi + spread, bins + 1)
}

impl ParametricFamily {
    /// One Bernoulli trial, theta = success probability on [0, 1].
    pub fn bernoulli() -> Self {
        Self::binomial_on(1, ThetaDomain { lo: 0.0, hi: 1.0 })
    }

    /// Success count of `trials` Bernoulli draws.
    pub fn binomial(trials: u32) -> Result<Self> {
        if trials == 0 {
            return Err(Error::param("trials must be >= 1"));
        }
        Ok(Self::binomial_on(trials, ThetaDomain { lo: 0.0, hi: 1.0 }))
    }

    /// Bernoulli family restricted to a sub-interval of [0, 1].
    pub fn binomial_with_domain(trials: u32, lo: f64, hi: f64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::param("trials must be >= 1"));
        }
        let domain = ThetaDomain::new(lo, hi)?;
        if lo < 0.0 || hi > 1.0 {
            return Err(Error::param("Bernoulli domain must lie inside [0, 1]"));
        }
        Ok(Self::binomial_on(trials, domain))
    }

    fn binomial_on(trials: u32, domain: ThetaDomain) -> Self {
        ParametricFamily {
            name: "bernoulli".into(),
            domain,
            outcomes: counting_outcomes(trials as usize + 1),
            trials,
            truncation_mass: 0.0,
            kind: Arc::new(Kind::Binomial { coeffs: binomial_coeffs(trials) }),
        }
    }

    /// Poisson rate family on `[lo, hi]` (lo >= 0), truncated so that no more
    /// than `tol` mass is discarded anywhere on the domain.
    pub fn poisson(lo: f64, hi: f64, tol: f64) -> Result<Self> {
        Self::poisson_trials(lo, hi, tol, 1)
    }

    fn poisson_trials(lo: f64, hi: f64, tol: f64, trials: u32) -> Result<Self> {
        let domain = ThetaDomain::new(lo, hi)?;
        if lo < 0.0 {
            return Err(Error::param("Poisson rate must be nonnegative"));
        }
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Error::param("truncation tolerance must lie in (0, 1)"));
        }
        let k = trials as f64;
        let (y_max, mass) = truncate_support(
            domain,
            tol,
            |theta, y| poisson_ln_pmf(k * theta, y),
            |theta| {
                let m = k * theta;
                (m + 40.0 * m.sqrt() + 60.0).ceil() as usize
            },
        );
        Ok(ParametricFamily {
            name: "poisson".into(),
            domain,
            outcomes: counting_outcomes(y_max + 1),
            trials,
            truncation_mass: mass,
            kind: Arc::new(Kind::Poisson { tol }),
        })
    }

    /// Negative binomial with `r` successes; theta is the success probability
    /// and the outcome the number of failures. The domain must exclude 0.
    pub fn negative_binomial(r: f64, lo: f64, hi: f64, tol: f64) -> Result<Self> {
        Self::negbin_trials(r, lo, hi, tol, 1)
    }

    fn negbin_trials(r: f64, lo: f64, hi: f64, tol: f64, trials: u32) -> Result<Self> {
        let domain = ThetaDomain::new(lo, hi)?;
        if !(lo > 0.0 && hi <= 1.0) {
            return Err(Error::param(
                "negative binomial success probability domain must lie in (0, 1]",
            ));
        }
        if !(r > 0.0) {
            return Err(Error::param("negative binomial r must be positive"));
        }
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Error::param("truncation tolerance must lie in (0, 1)"));
        }
        let r_total = r * trials as f64;
        let (y_max, mass) = truncate_support(
            domain,
            tol,
            |theta, y| negbin_ln_pmf(r_total, theta, y),
            |theta| {
                let mean = r_total * (1.0 - theta) / theta;
                let sd = (r_total * (1.0 - theta)).sqrt() / theta;
                (mean + 40.0 * sd + 60.0).ceil() as usize
            },
        );
        Ok(ParametricFamily {
            name: "negative_binomial".into(),
            domain,
            outcomes: counting_outcomes(y_max + 1),
            trials,
            truncation_mass: mass,
            kind: Arc::new(Kind::NegativeBinomial { r, tol }),
        })
    }

    /// Normal mean family with known `sigma`. The outcome is the binned sample
    /// mean over a uniform grid spanning the domain plus six standard errors
    /// on either side.
    pub fn normal(sigma: f64, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        Self::normal_trials(sigma, lo, hi, bins, 1)
    }

    fn normal_trials(sigma: f64, lo: f64, hi: f64, bins: usize, trials: u32) -> Result<Self> {
        let domain = ThetaDomain::new(lo, hi)?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::param("sigma must be positive"));
        }
        if bins < 2 {
            return Err(Error::param("need at least 2 bins"));
        }
        let edges = normal_edges(domain, sigma, trials, bins);
        let se = sigma / (trials as f64).sqrt();
        let outcomes = (0..bins)
            .map(|i| Outcome { index: i, value: 0.5 * (edges[i] + edges[i + 1]) })
            .collect();
        let tail_at = |theta: f64| {
            std_normal_cdf((edges[0] - theta) / se) + std_normal_cdf((theta - edges[bins]) / se)
        };
        let truncation_mass = tail_at(domain.lo).max(tail_at(domain.hi));
        Ok(ParametricFamily {
            name: "normal".into(),
            domain,
            outcomes,
            trials,
            truncation_mass,
            kind: Arc::new(Kind::Normal { sigma, bins, edges }),
        })
    }

    /// Finite channel given as a row-stochastic matrix; theta ranges over the
    /// row indices `0..n_theta`.
    pub fn from_matrix(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_theta = rows.len();
        if n_theta == 0 {
            return Err(Error::Matrix("no rows".into()));
        }
        let n_y = rows[0].len();
        if n_y == 0 {
            return Err(Error::Matrix("no columns".into()));
        }
        let mut rows = rows;
        for (i, row) in rows.iter_mut().enumerate() {
            if row.len() != n_y {
                return Err(Error::Matrix(format!(
                    "row {i} has {} entries, expected {n_y}",
                    row.len()
                )));
            }
            if row.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
                return Err(Error::Matrix(format!("row {i} has an entry outside [0, 1]")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Matrix(format!("row {i} sums to {total}, not 1")));
            }
            normalize_in_place(row);
        }
        Ok(ParametricFamily {
            name: "matrix".into(),
            domain: ThetaDomain { lo: 0.0, hi: (n_theta - 1) as f64 },
            outcomes: counting_outcomes(n_y),
            trials: 1,
            truncation_mass: 0.0,
            kind: Arc::new(Kind::Table { rows }),
        })
    }

    /// Parses the plain-text matrix format: a header line `n_theta n_y`
    /// followed by `n_theta` rows of `n_y` probabilities.
    pub fn from_matrix_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Matrix("empty input".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Matrix(format!("bad header `{header}`: {e}")))?;
        let [n_theta, n_y] = dims[..] else {
            return Err(Error::Matrix(format!("header `{header}` must be `n_theta n_y`")));
        };
        let mut rows = Vec::with_capacity(n_theta);
        for (i, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Matrix(format!("row {i}: {e}")))?;
            if row.len() != n_y {
                return Err(Error::Matrix(format!(
                    "row {i} has {} entries, expected {n_y}",
                    row.len()
                )));
            }
            rows.push(row);
        }
        if rows.len() != n_theta {
            return Err(Error::Matrix(format!("expected {n_theta} rows, found {}", rows.len())));
        }
        Self::from_matrix(rows)
    }

    /// Degenerate family: every theta in `[lo, hi]` produces `probs`.
    pub fn constant(probs: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        let domain = ThetaDomain::new(lo, hi)?;
        if probs.is_empty() || probs.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
            return Err(Error::param("constant family needs probabilities in [0, 1]"));
        }
        let mut probs = probs;
        normalize_in_place(&mut probs);
        Ok(ParametricFamily {
            name: "constant".into(),
            domain,
            outcomes: counting_outcomes(probs.len()),
            trials: 1,
            truncation_mass: 0.0,
            kind: Arc::new(Kind::Constant { probs }),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> ThetaDomain {
        self.domain
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn trials(&self) -> u32 {
        self.trials
    }

    pub fn truncation_mass(&self) -> f64 {
        self.truncation_mass
    }

    /// True when theta ranges over a finite index set rather than an interval.
    pub fn is_discrete(&self) -> bool {
        matches!(*self.kind, Kind::Table { .. })
    }

    /// Writes the renormalized row `Q(. | theta)` into `out`.
    pub fn row_into(&self, theta: f64, out: &mut [f64]) -> Result<()> {
        self.domain.check(theta)?;
        if out.len() != self.outcomes.len() {
            return Err(Error::Shape(format!(
                "row buffer has {} slots, family has {} outcomes",
                out.len(),
                self.outcomes.len()
            )));
        }
        let k = self.trials;
        match &*self.kind {
            Kind::Binomial { coeffs } => {
                let n = k as i32;
                let fail = 1.0 - theta;
                for (y, q) in out.iter_mut().enumerate() {
                    *q = coeffs[y] * theta.powi(y as i32) * fail.powi(n - y as i32);
                }
            }
            Kind::Poisson { .. } => {
                let mean = k as f64 * theta;
                for (y, q) in out.iter_mut().enumerate() {
                    *q = poisson_ln_pmf(mean, y).exp();
                }
            }
            Kind::NegativeBinomial { r, .. } => {
                let r_total = r * k as f64;
                for (y, q) in out.iter_mut().enumerate() {
                    *q = negbin_ln_pmf(r_total, theta, y).exp();
                }
            }
            Kind::Normal { sigma, edges, .. } => {
                let se = sigma / (k as f64).sqrt();
                let mut lower = std_normal_cdf((edges[0] - theta) / se);
                for (y, q) in out.iter_mut().enumerate() {
                    let upper = std_normal_cdf((edges[y + 1] - theta) / se);
                    *q = (upper - lower).max(0.0);
                    lower = upper;
                }
            }
            Kind::Table { rows } => {
                if theta.fract() != 0.0 {
                    return Err(Error::Domain { theta, lo: self.domain.lo, hi: self.domain.hi });
                }
                out.copy_from_slice(&rows[theta as usize]);
                return Ok(());
            }
            Kind::Constant { probs } => {
                out.copy_from_slice(probs);
                return Ok(());
            }
        }
        normalize_in_place(out);
        Ok(())
    }

    /// Renormalized row `Q(. | theta)`.
    pub fn row(&self, theta: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.outcomes.len()];
        self.row_into(theta, &mut out)?;
        Ok(out)
    }

    pub fn cond_prob(&self, theta: f64, y: Outcome) -> Result<f64> {
        if y.index >= self.outcomes.len() {
            return Err(Error::Outcome { index: y.index, size: self.outcomes.len() });
        }
        Ok(self.row(theta)?[y.index])
    }

    /// `H(Y | theta)` in nats.
    pub fn cond_entropy(&self, theta: f64) -> Result<f64> {
        Ok(entropy(&self.row(theta)?))
    }

    /// Family of the sufficient statistic of `k` iid draws from `self`.
    pub fn sufficient_reduce(&self, k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("k must be >= 1"));
        }
        if k == 1 {
            return Ok(self.clone());
        }
        let trials = self
            .trials
            .checked_mul(k)
            .ok_or_else(|| Error::param("trial count overflows"))?;
        let d = self.domain;
        match &*self.kind {
            Kind::Binomial { .. } => Ok(Self::binomial_on(trials, d)),
            Kind::Poisson { tol } => Self::poisson_trials(d.lo, d.hi, *tol, trials),
            Kind::NegativeBinomial { r, tol } => Self::negbin_trials(*r, d.lo, d.hi, *tol, trials),
            Kind::Normal { sigma, bins, .. } => {
                Self::normal_trials(*sigma, d.lo, d.hi, *bins, trials)
            }
            Kind::Table { .. } | Kind::Constant { .. } => {
                Err(Error::UnsupportedReduction(self.name.clone()))
            }
        }
    }

    /// Fisher information `h(theta)` from central second differences of
    /// `log Q(y | theta)` with step `max(1e-4, 1e-4 |theta|)`.
    pub fn fisher_information(&self, theta: f64) -> Result<FisherInformation> {
        if self.is_discrete() {
            return Err(Error::Unsupported {
                family: self.name.clone(),
                reason: "Fisher information needs a continuous parameter".into(),
            });
        }
        self.domain.check(theta)?;
        let step = 1e-4_f64.max(1e-4 * theta.abs());
        let (minus, plus) = (theta - step, theta + step);
        if minus < self.domain.lo || plus > self.domain.hi {
            return Err(Error::Domain { theta, lo: self.domain.lo, hi: self.domain.hi });
        }
        let q0 = self.row(theta)?;
        let qm = self.row(minus)?;
        let qp = self.row(plus)?;
        let mut value = 0.0;
        let mut dropped = 0usize;
        for y in 0..q0.len() {
            if q0[y] == 0.0 {
                continue;
            }
            if qm[y] == 0.0 || qp[y] == 0.0 {
                dropped += 1;
                continue;
            }
            let second = (qp[y].ln() - 2.0 * q0[y].ln() + qm[y].ln()) / (step * step);
            value -= q0[y] * second;
        }
        let warning = if dropped > 0 {
            Some(format!(
                "{dropped} outcome(s) vanish within one step of theta = {theta}; second difference unstable"
            ))
        } else if !value.is_finite() {
            Some(format!("non-finite second difference at theta = {theta}"))
        } else {
            None
        };
        Ok(FisherInformation { theta, value, warning })
    }

    /// Grid prior proportional to `h(theta)^(1/2)`.
    pub fn jeffreys_weights(&self, grid: &[f64]) -> Result<PriorGrid> {
        let mut weights = Vec::with_capacity(grid.len());
        for &theta in grid {
            let h = self.fisher_information(theta)?;
            if !(h.value >= 0.0) {
                return Err(Error::NegativeFisher { theta, value: h.value });
            }
            weights.push(h.value.sqrt());
        }
        PriorGrid::from_unnormalized(grid.to_vec(), weights)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherInformation {
    pub theta: f64,
    pub value: f64,
    pub warning: Option<String>,
}

/// Expense function for a moment constraint on the prior.
#[derive(Clone)]
pub enum Expense {
    /// `e(theta) = theta^2`.
    Square,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Expense {
    pub fn eval(&self, theta: f64) -> f64 {
        match self {
            Expense::Square => theta * theta,
            Expense::Custom(f) => f(theta),
        }
    }
}

impl fmt::Debug for Expense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expense::Square => f.write_str("Square"),
            Expense::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Lagrangian constraint `E_p[e(theta)] <= budget` with fixed multiplier.
#[derive(Debug, Clone)]
pub struct ConstraintSpec {
    pub expense: Expense,
    pub multiplier: f64,
    /// Target expected expense; reporting only.
    pub budget: f64,
}

impl ConstraintSpec {
    pub fn new(expense: Expense, multiplier: f64, budget: f64) -> Result<Self> {
        if !(multiplier >= 0.0 && multiplier.is_finite()) {
            return Err(Error::param("constraint multiplier must be finite and >= 0"));
        }
        Ok(ConstraintSpec { expense, multiplier, budget })
    }

    pub fn squared(multiplier: f64, budget: f64) -> Result<Self> {
        Self::new(Expense::Square, multiplier, budget)
    }

    /// The additive exponent term `-s e(theta)`.
    pub fn penalty(&self, theta: f64) -> f64 {
        -self.multiplier * self.expense.eval(theta)
    }
}
