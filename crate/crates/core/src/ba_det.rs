//! Deterministic Blahut-Arimoto on a fixed theta grid.
//!
//! One step maps `p` to `T[p](theta) ∝ p(theta) exp(D(Q_theta || Q_p) - s e(theta))`.
//! Iteration stops once the capacity sandwich
//! `sum_theta p(theta) D(Q_theta || Q_p) <= C <= max_theta D(Q_theta || Q_p)`
//! is tighter than the requested tolerance.

use rand::Rng;

use crate::error::{Error, Result};
use crate::family::{ConstraintSpec, ParametricFamily};
use crate::infomath::{ks_weights, relative_entropy, PriorGrid};
use crate::rng;

/// Mixing rate with the uniform prior used by the boundary-clamped operator.
pub const CLAMP_RATE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BaOptions {
    fn default() -> Self {
        BaOptions { tol: 1e-8, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BAFixedPointResult {
    pub prior: PriorGrid,
    /// Mutual information of `prior`, nats.
    pub capacity: f64,
    pub iterations: usize,
    pub lower_bound_trace: Vec<f64>,
    pub upper_bound_trace: Vec<f64>,
    pub converged: bool,
    /// `E_p[e(theta)]` when a constraint was supplied.
    pub expected_expense: Option<f64>,
}

/// The channel restricted to a grid: rows precomputed once.
#[derive(Debug, Clone)]
pub struct Channel {
    grid: Vec<f64>,
    rows: Vec<f64>,
    n_y: usize,
    penalty: Option<Vec<f64>>,
}

/// Marginal and per-row divergences for one prior.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub marginal: Vec<f64>,
    pub divergence: Vec<f64>,
}

impl Channel {
    pub fn new(
        family: &ParametricFamily,
        grid: &[f64],
        constraint: Option<&ConstraintSpec>,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::param("grid is empty"));
        }
        let n_y = family.n_outcomes();
        let mut rows = vec![0.0; grid.len() * n_y];
        for (i, &theta) in grid.iter().enumerate() {
            family.row_into(theta, &mut rows[i * n_y..(i + 1) * n_y])?;
        }
        let penalty = constraint.map(|c| grid.iter().map(|&t| c.penalty(t)).collect());
        Ok(Channel { grid: grid.to_vec(), rows, n_y, penalty })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n_theta(&self) -> usize {
        self.grid.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n_y..(i + 1) * self.n_y]
    }

    pub fn marginal(&self, weights: &[f64]) -> Vec<f64> {
        let mut m = vec![0.0; self.n_y];
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (acc, q) in m.iter_mut().zip(self.row(i)) {
                *acc += w * q;
            }
        }
        m
    }

    pub fn evaluate(&self, weights: &[f64]) -> Evaluation {
        let marginal = self.marginal(weights);
        let divergence = self.divergences(&marginal);
        Evaluation { marginal, divergence }
    }

    #[cfg(feature = "parallel")]
    fn divergences(&self, marginal: &[f64]) -> Vec<f64> {
        use rayon::prelude::*;
        if self.rows.len() < 1 << 15 {
            return (0..self.n_theta()).map(|i| relative_entropy(self.row(i), marginal)).collect();
        }
        (0..self.n_theta())
            .into_par_iter()
            .map(|i| relative_entropy(self.row(i), marginal))
            .collect()
    }

    #[cfg(not(feature = "parallel"))]
    fn divergences(&self, marginal: &[f64]) -> Vec<f64> {
        (0..self.n_theta()).map(|i| relative_entropy(self.row(i), marginal)).collect()
    }

    fn exponent(&self, i: usize, eval: &Evaluation) -> f64 {
        eval.divergence[i] + self.penalty.as_ref().map_or(0.0, |p| p[i])
    }

    /// `(lower, upper)` bounds on the (Lagrangian) capacity at `weights`.
    pub fn bounds(&self, weights: &[f64], eval: &Evaluation) -> (f64, f64) {
        let mut lower = 0.0;
        let mut upper = f64::NEG_INFINITY;
        for (i, &w) in weights.iter().enumerate() {
            let e = self.exponent(i, eval);
            if w > 0.0 {
                lower += w * e;
            }
            upper = upper.max(e);
        }
        (lower, upper)
    }

    /// `T[p]` given the evaluation of `p`. Zero weights stay exactly zero.
    pub fn step_from(&self, weights: &[f64], eval: &Evaluation) -> Result<Vec<f64>> {
        let mut top = f64::NEG_INFINITY;
        let mut live = vec![false; weights.len()];
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                let e = self.exponent(i, eval);
                if e.is_finite() {
                    top = top.max(e);
                    live[i] = true;
                    continue;
                }
                // A vanishing marginal is only legitimate when w * Q(y|theta)
                // itself underflowed; that row's weight underflows too.
                let genuine = (0..self.n_y).find(|&y| {
                    let q = self.row(i)[y];
                    eval.marginal[y] <= 0.0 && q > 0.0 && w * q > 0.0
                });
                if let Some(outcome) = genuine {
                    return Err(Error::DegenerateMarginal { outcome });
                }
                if e.is_nan() {
                    return Err(Error::DegenerateMarginal { outcome: 0 });
                }
            }
        }
        if top == f64::NEG_INFINITY {
            return Err(Error::InvalidPrior("no weight left to renormalize".into()));
        }
        let mut next: Vec<f64> = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| if live[i] { w * (self.exponent(i, eval) - top).exp() } else { 0.0 })
            .collect();
        let total: f64 = next.iter().sum();
        for x in &mut next {
            *x /= total;
        }
        Ok(next)
    }

    pub fn step(&self, weights: &[f64]) -> Result<Vec<f64>> {
        let eval = self.evaluate(weights);
        self.step_from(weights, &eval)
    }

    /// `T` applied after mixing with the uniform prior at [`CLAMP_RATE`],
    /// which keeps every grid point in the support.
    pub fn step_clamped(&self, weights: &[f64]) -> Result<Vec<f64>> {
        self.step(&mix_uniform(weights, CLAMP_RATE))
    }
}

pub fn mix_uniform(weights: &[f64], rate: f64) -> Vec<f64> {
    let u = rate / weights.len() as f64;
    weights.iter().map(|w| (1.0 - rate) * w + u).collect()
}

/// One Blahut-Arimoto update of `prior`.
pub fn ba_step(
    prior: &PriorGrid,
    family: &ParametricFamily,
    constraint: Option<&ConstraintSpec>,
) -> Result<PriorGrid> {
    let channel = Channel::new(family, prior.grid(), constraint)?;
    prior.with_weights(channel.step(prior.weights())?)
}

/// Iterates from the uniform prior on `grid` until the capacity gap is at
/// most `options.tol` or `options.max_iter` steps have been taken.
pub fn ba_solve(
    family: &ParametricFamily,
    grid: &[f64],
    options: &BaOptions,
    constraint: Option<&ConstraintSpec>,
) -> Result<BAFixedPointResult> {
    if !(options.tol > 0.0) {
        return Err(Error::param("tolerance must be positive"));
    }
    let start = PriorGrid::uniform(grid.to_vec())?;
    start.check_domain(family)?;
    let channel = Channel::new(family, grid, constraint)?;
    let mut weights = start.weights().to_vec();
    let mut lower_trace = Vec::new();
    let mut upper_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut info;
    loop {
        let eval = channel.evaluate(&weights);
        info = weights
            .iter()
            .zip(&eval.divergence)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, d)| w * d)
            .sum::<f64>();
        let (lo, up) = channel.bounds(&weights, &eval);
        lower_trace.push(lo);
        upper_trace.push(up);
        if up - lo <= options.tol {
            converged = true;
            break;
        }
        if iterations == options.max_iter {
            break;
        }
        weights = channel.step_from(&weights, &eval)?;
        iterations += 1;
    }
    let prior = start.with_weights(weights)?;
    let expected_expense = constraint.map(|c| prior.expect(|t| c.expense.eval(t)));
    Ok(BAFixedPointResult {
        prior,
        capacity: info,
        iterations,
        lower_bound_trace: lower_trace,
        upper_bound_trace: upper_trace,
        converged,
        expected_expense,
    })
}

/// `lower = I(prior)`, `upper = max over grid of D(Q_theta || Q_prior)`.
pub fn capacity_bounds(prior: &PriorGrid, family: &ParametricFamily) -> Result<(f64, f64)> {
    prior.check_domain(family)?;
    let channel = Channel::new(family, prior.grid(), None)?;
    let eval = channel.evaluate(prior.weights());
    Ok(channel.bounds(prior.weights(), &eval))
}

/// Largest observed `d(T[p], T[q]) / d(p, q)` over `trials` random pairs of
/// the simplex on `grid`, using the boundary-clamped operator. A lower
/// estimate of the KS Lipschitz constant of `T`.
pub fn estimate_lipschitz(
    family: &ParametricFamily,
    grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::param("trials must be >= 1"));
    }
    if grid.len() < 2 {
        return Err(Error::param("Lipschitz estimate needs at least two grid points"));
    }
    let channel = Channel::new(family, grid, None)?;
    let mut rng = rng::stream(seed, 0);
    let mut beta: f64 = 0.0;
    for _ in 0..trials {
        let (p, q, d) = loop {
            let p = rng::simplex_point(&mut rng, grid.len());
            let q = rng::simplex_point(&mut rng, grid.len());
            let d = ks_weights(&p, &q);
            if d > 0.0 {
                break (p, q, d);
            }
            // burn one draw so a degenerate generator state cannot repeat forever
            let _: f64 = rng.gen();
        };
        let tp = channel.step_clamped(&p)?;
        let tq = channel.step_clamped(&q)?;
        beta = beta.max(ks_weights(&tp, &tq) / d);
    }
    Ok(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::linspace;
    use crate::infomath::{ks_distance, mutual_information};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bsc(eps: f64) -> ParametricFamily {
        ParametricFamily::from_matrix(vec![vec![1.0 - eps, eps], vec![eps, 1.0 - eps]]).unwrap()
    }

    #[test]
    fn step_examples() {
        let b = ParametricFamily::bernoulli();
        let u = PriorGrid::uniform(vec![0.0, 0.5, 1.0]).unwrap();
        let next = ba_step(&u, &b, None).unwrap();
        for (w, want) in next.weights().iter().zip([0.4, 0.2, 0.4]) {
            assert_abs_diff_eq!(*w, want, epsilon = 1e-15);
        }
        let sym = ParametricFamily::from_matrix(vec![
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.7, 0.2],
            vec![0.2, 0.1, 0.7],
        ])
        .unwrap();
        let u3 = PriorGrid::uniform(vec![0.0, 1.0, 2.0]).unwrap();
        let fixed = ba_step(&u3, &sym, None).unwrap();
        assert!(ks_distance(&fixed, &u3).unwrap() < 1e-15);
        let pm = PriorGrid::point_mass(vec![0.2, 0.5, 0.8], 1).unwrap();
        assert_eq!(ba_step(&pm, &b, None).unwrap(), pm);
    }

    #[test]
    fn solve_examples() {
        let b = ParametricFamily::bernoulli();
        let opts = BaOptions { tol: 1e-9, max_iter: 10_000 };
        let r = ba_solve(&b, &[0.0, 0.5, 1.0], &opts, None).unwrap();
        assert!(r.converged);
        assert_abs_diff_eq!(r.capacity, 2f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(r.prior.weights()[0], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(r.prior.weights()[1], 0.0, epsilon = 1e-8);

        let r = ba_solve(&bsc(0.1), &[0.0, 1.0], &opts, None).unwrap();
        assert!(r.converged);
        assert_abs_diff_eq!(r.capacity, 0.368064, epsilon = 1e-6);
        assert_abs_diff_eq!(r.prior.weights()[0], 0.5, epsilon = 1e-12);

        let r = ba_solve(&b, &[0.5], &opts, None).unwrap();
        assert!(r.converged);
        assert_eq!(r.capacity, 0.0);
        assert_eq!(r.prior.weights(), &[1.0]);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn solve_reports_nonconvergence() {
        let b = ParametricFamily::bernoulli().sufficient_reduce(5).unwrap();
        let r = ba_solve(&b, &linspace(0.0, 1.0, 41), &BaOptions { tol: 1e-12, max_iter: 3 }, None)
            .unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
        assert_eq!(r.lower_bound_trace.len(), 4);
    }

    #[test]
    fn bounds_examples() {
        let b = ParametricFamily::bernoulli();
        let pm = PriorGrid::point_mass(vec![0.2, 0.7], 0).unwrap();
        let (lo, up) = capacity_bounds(&pm, &b).unwrap();
        assert_eq!(lo, 0.0);
        let direct = 0.7 * (0.7f64 / 0.2).ln() + 0.3 * (0.3f64 / 0.8).ln();
        assert_abs_diff_eq!(up, direct, epsilon = 1e-14);

        let u = PriorGrid::uniform(vec![0.0, 1.0]).unwrap();
        let (lo, up) = capacity_bounds(&u, &bsc(0.1)).unwrap();
        assert_abs_diff_eq!(lo, 0.368064, epsilon = 1e-6);
        assert_abs_diff_eq!(up, lo, epsilon = 1e-15);
    }

    #[test]
    fn lipschitz_examples() {
        let flat = ParametricFamily::constant(vec![0.3, 0.7], 0.0, 1.0).unwrap();
        let beta = estimate_lipschitz(&flat, &[0.1, 0.5, 0.9], 200, 7).unwrap();
        assert_abs_diff_eq!(beta, 1.0, epsilon = 1e-8);

        let b = ParametricFamily::bernoulli();
        let one = estimate_lipschitz(&b, &[0.0, 0.5, 1.0], 1, 3).unwrap();
        assert!(one.is_finite() && one > 0.0);

        let a = estimate_lipschitz(&b, &[0.0, 0.5, 1.0], 1000, 42).unwrap();
        let again = estimate_lipschitz(&b, &[0.0, 0.5, 1.0], 1000, 42).unwrap();
        assert_eq!(a.to_bits(), again.to_bits());
        assert!(a.is_finite() && a > 0.0);
        assert!(estimate_lipschitz(&b, &[0.5], 10, 1).is_err());
    }

    #[test]
    fn constrained_expense_decreases_with_multiplier() {
        let n = ParametricFamily::normal(1.0, -4.0, 4.0, 96).unwrap();
        let grid = linspace(-4.0, 4.0, 41);
        let opts = BaOptions { tol: 1e-7, max_iter: 2000 };
        let mut last = f64::INFINITY;
        for s in [0.0, 0.1, 0.2, 0.4, 0.8] {
            let c = ConstraintSpec::squared(s, 1.0).unwrap();
            let r = ba_solve(&n, &grid, &opts, Some(&c)).unwrap();
            let e = r.expected_expense.unwrap();
            assert!(e < last, "expense {e} did not drop below {last} at s = {s}");
            last = e;
        }
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_map(|v| {
            let v: Vec<f64> = v.into_iter().map(|x| x + 1e-4).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn step_never_decreases_information(w in simplex(6)) {
            let grid = vec![0.05, 0.2, 0.4, 0.6, 0.8, 0.95];
            let fam = ParametricFamily::binomial(4).unwrap();
            let p = PriorGrid::new(grid, w).unwrap();
            let next = ba_step(&p, &fam, None).unwrap();
            prop_assert!(mutual_information(&next, &fam).unwrap() >= mutual_information(&p, &fam).unwrap() - 1e-10);
        }

        #[test]
        fn zero_weights_stay_zero(w in simplex(4), zero in 0usize..4) {
            let mut w = w;
            w[zero] = 0.0;
            let p = PriorGrid::from_unnormalized(vec![0.1, 0.4, 0.6, 0.9], w).unwrap();
            let next = ba_step(&p, &ParametricFamily::bernoulli(), None).unwrap();
            prop_assert_eq!(next.weights()[zero], 0.0);
        }
    }
}
