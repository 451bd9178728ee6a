//! Priors on theta grids, marginals, and the information measures built on
//! them. All logarithms are natural; `0 log 0 = 0` throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::ParametricFamily;

const NORMALIZATION_SLACK: f64 = 1e-9;

/// Probability vector over a strictly increasing grid of theta values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorGrid {
    grid: Vec<f64>,
    weights: Vec<f64>,
}

impl PriorGrid {
    /// Validates and renormalizes. Weights must already sum to one within
    /// `1e-9`; use [`PriorGrid::from_unnormalized`] otherwise.
    pub fn new(grid: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let total = Self::check(&grid, &weights)?;
        if (total - 1.0).abs() > NORMALIZATION_SLACK {
            return Err(Error::InvalidPrior(format!("weights sum to {total}")));
        }
        Ok(Self::scaled(grid, weights, total))
    }

    pub fn from_unnormalized(grid: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let total = Self::check(&grid, &weights)?;
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidPrior(format!("weights sum to {total}")));
        }
        Ok(Self::scaled(grid, weights, total))
    }

    pub fn uniform(grid: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        Self::from_unnormalized(grid, vec![1.0; n])
    }

    pub fn point_mass(grid: Vec<f64>, index: usize) -> Result<Self> {
        if index >= grid.len() {
            return Err(Error::InvalidPrior(format!("index {index} outside grid")));
        }
        let mut w = vec![0.0; grid.len()];
        w[index] = 1.0;
        Self::new(grid, w)
    }

    fn check(grid: &[f64], weights: &[f64]) -> Result<f64> {
        if grid.is_empty() {
            return Err(Error::InvalidPrior("empty grid".into()));
        }
        if grid.len() != weights.len() {
            return Err(Error::Shape(format!(
                "grid has {} points but {} weights",
                grid.len(),
                weights.len()
            )));
        }
        if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPrior("grid must be finite and strictly increasing".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidPrior("weights must be finite and nonnegative".into()));
        }
        Ok(weights.iter().sum())
    }

    fn scaled(grid: Vec<f64>, mut weights: Vec<f64>, total: f64) -> Self {
        for w in &mut weights {
            *w /= total;
        }
        PriorGrid { grid, weights }
    }

    /// Replaces the weights on the same grid.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::from_unnormalized(self.grid.clone(), weights)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Cumulative weights at each grid point.
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect()
    }

    /// `E_p[f(theta)]`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.grid.iter().zip(&self.weights).map(|(&t, &w)| w * f(t)).sum()
    }

    pub fn check_domain(&self, family: &ParametricFamily) -> Result<()> {
        let d = family.domain();
        for &theta in &self.grid {
            d.check(theta)?;
        }
        Ok(())
    }
}

/// Outcome distribution indexed like the family's outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub probs: Vec<f64>,
}

impl Marginal {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::param("marginal entries must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_SLACK {
            return Err(Error::param(format!("marginal sums to {total}")));
        }
        Ok(Marginal { probs: probs.into_iter().map(|p| p / total).collect() })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Shannon entropy in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// `sum_y p[y] log(p[y] / q[y])`; `+inf` when `p` is not absolutely
/// continuous with respect to `q`.
pub fn relative_entropy(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut d = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            d += pi * (pi / qi).ln();
        }
    }
    // rounding can push a true zero slightly negative
    d.max(0.0)
}

pub fn kl_divergence(p: &Marginal, q: &Marginal) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("outcome spaces differ: {} vs {}", p.len(), q.len())));
    }
    Ok(relative_entropy(&p.probs, &q.probs))
}

/// `Q(y) = sum_i p_i Q(y | theta_i)`.
pub fn marginal(prior: &PriorGrid, family: &ParametricFamily) -> Result<Marginal> {
    prior.check_domain(family)?;
    let mut probs = vec![0.0; family.n_outcomes()];
    let mut row = vec![0.0; family.n_outcomes()];
    for (&theta, &w) in prior.grid().iter().zip(prior.weights()) {
        if w == 0.0 {
            continue;
        }
        family.row_into(theta, &mut row)?;
        for (m, q) in probs.iter_mut().zip(&row) {
            *m += w * q;
        }
    }
    Ok(Marginal { probs })
}

/// `I(Theta, Y) = sum_i p_i D(Q_{theta_i} || Q_p)` in nats.
pub fn mutual_information(prior: &PriorGrid, family: &ParametricFamily) -> Result<f64> {
    let m = marginal(prior, family)?;
    let mut info = 0.0;
    for (&theta, &w) in prior.grid().iter().zip(prior.weights()) {
        if w == 0.0 {
            continue;
        }
        info += w * relative_entropy(&family.row(theta)?, &m.probs);
    }
    Ok(info)
}

/// Kolmogorov-Smirnov distance between two priors on the same ordered grid.
pub fn ks_distance(p: &PriorGrid, q: &PriorGrid) -> Result<f64> {
    if p.grid() != q.grid() {
        return Err(Error::Shape("priors live on different grids".into()));
    }
    Ok(ks_weights(p.weights(), q.weights()))
}

/// KS distance between two weight vectors over a shared ordered support.
pub fn ks_weights(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let (mut cp, mut cq, mut d) = (0.0, 0.0, 0.0_f64);
    for (a, b) in p.iter().zip(q) {
        cp += a;
        cq += b;
        d = d.max((cp - cq).abs());
    }
    d.min(1.0)
}

/// KS distance between the empirical CDF of `samples` and the CDF of
/// `reference` linearly interpolated between its grid points (zero below the
/// first grid point, one from the last grid point on).
pub fn ks_samples_to_grid(samples: &[f64], reference: &PriorGrid) -> f64 {
    if samples.is_empty() {
        return 1.0;
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let grid = reference.grid();
    let cdf = reference.cdf();
    let n = xs.len() as f64;

    let reference_at = |x: f64| -> f64 {
        if x < grid[0] {
            return 0.0;
        }
        let j = grid.partition_point(|&g| g <= x);
        if j >= grid.len() {
            return 1.0;
        }
        // grid[j - 1] <= x < grid[j]
        let (g0, g1) = (grid[j - 1], grid[j]);
        let frac = (x - g0) / (g1 - g0);
        cdf[j - 1] + frac * (cdf[j] - cdf[j - 1])
    };
    // F_emp(x) and F_emp(x-)
    let empirical = |x: f64| -> (f64, f64) {
        let below = xs.partition_point(|&s| s < x) as f64;
        let at_or_below = xs.partition_point(|&s| s <= x) as f64;
        (at_or_below / n, below / n)
    };

    let mut d: f64 = 0.0;
    for &x in xs.iter().chain(grid) {
        let (f, f_left) = empirical(x);
        let g = reference_at(x);
        // the reference only jumps at the first grid point
        let g_left = if x == grid[0] { 0.0 } else { g };
        d = d.max((f - g).abs()).max((f_left - g_left).abs());
    }
    d.min(1.0)
}
