//! Finite-grid stochastic Blahut-Arimoto with shared uniforms.
//!
//! One fixed set of `N` uniforms drives every resampling step: the operator
//! `U_N` maps a grid prior to the empirical distribution of its inverse-CDF
//! images of those uniforms. Alternating `U_N` with the (clamped) BA step gives
//! `q~(n) = [U_N . T]^n . U_N(p(0))`, which stays within KS distance `eps` of
//! the exact iterate `T^n p(0)` with probability at least `1 - alpha` once
//! `N >= gamma_n^2 ln(2/alpha) / (2 eps^2)`, where `beta` bounds the KS
//! Lipschitz constant of `T` and `gamma_n = sum_{j<=n} beta^j`.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::ba_det::{estimate_lipschitz, Channel};
use crate::error::{Error, Result};
use crate::family::ParametricFamily;
use crate::infomath::{ks_weights, PriorGrid};
use crate::rng;

/// Largest sample size [`verify_theorem`] will attempt.
pub const DEFAULT_SAMPLE_CAP: u64 = 100_000_000;
/// Safety factor applied to the estimated Lipschitz constant.
pub const BETA_INFLATION: f64 = 1.1;
pub const DEFAULT_LIPSCHITZ_TRIALS: usize = 2000;

/// The shared uniforms in ascending order: `U_N` only depends on how many of
/// them fall below each cumulative weight. Values are stored as
/// `sorted[i] / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformStream {
    sorted: Vec<f64>,
    scale: f64,
    seed: Option<u64>,
}

impl UniformStream {
    /// `n` iid uniforms, generated directly in sorted order as normalized
    /// partial sums of `n + 1` standard exponentials.
    pub fn generate(n: usize, seed: u64, stream_id: u64) -> Self {
        let mut rng = rng::stream(seed, stream_id);
        let mut sorted = Vec::with_capacity(n);
        let mut total = 0.0;
        for _ in 0..n {
            total += rng.sample::<f64, _>(Exp1);
            sorted.push(total);
        }
        total += rng.sample::<f64, _>(Exp1);
        UniformStream { sorted, scale: total, seed: Some(seed) }
    }

    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("uniform stream must be nonempty"));
        }
        if values.iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(Error::param("uniform stream values must lie in [0, 1]"));
        }
        values.sort_unstable_by(f64::total_cmp);
        Ok(UniformStream { sorted: values, scale: 1.0, seed: None })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn value(&self, i: usize) -> f64 {
        self.sorted[i] / self.scale
    }

    /// Number of values strictly below `c`.
    fn count_below(&self, c: f64) -> usize {
        self.sorted.partition_point(|&s| s / self.scale < c)
    }

    /// `sup_c |G_N(c) - c|` over `c` in `[0, 1]`, with `G_N` the empirical CDF
    /// (left limits included).
    pub fn ks_to_uniform(&self) -> f64 {
        let n = self.sorted.len() as f64;
        (0..self.sorted.len()).fold(0.0f64, |acc, i| {
            let u = self.value(i);
            acc.max((i as f64 + 1.0) / n - u).max(u - i as f64 / n)
        })
    }
}

fn draw_weights(weights: &[f64], stream: &UniformStream) -> Vec<f64> {
    let n = stream.len();
    let mut out = Vec::with_capacity(weights.len());
    let mut cum = 0.0;
    let mut below = 0usize;
    for (i, w) in weights.iter().enumerate() {
        cum += w;
        // the last cell takes everything left, so rounding in `cum` cannot drop samples
        let upto = if i + 1 == weights.len() { n } else { stream.count_below(cum) };
        let upto = upto.max(below);
        out.push((upto - below) as f64 / n as f64);
        below = upto;
    }
    out
}

/// `U_N(p)`: the empirical distribution of `theta_j` where `U_i` falls in
/// `[P(j-1), P(j))`, `P` the cumulative weights of `p`.
pub fn draw_common(p: &PriorGrid, stream: &UniformStream) -> PriorGrid {
    let weights = draw_weights(p.weights(), stream);
    PriorGrid::new(p.grid().to_vec(), weights).expect("counts over N sum to one")
}

/// `gamma_n = (beta^(n+1) - 1) / (beta - 1)`, or `n + 1` at `beta = 1`.
pub fn gamma_n(beta: f64, n: u32) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::param("beta must be positive and finite"));
    }
    let m = f64::from(n) + 1.0;
    let log_beta = beta.ln();
    if log_beta == 0.0 {
        return Ok(m);
    }
    // expm1 keeps the ratio accurate as beta approaches 1
    Ok((m * log_beta).exp_m1() / log_beta.exp_m1())
}

/// Smallest `N >= 1` with `N >= gamma^2 ln(2/alpha) / (2 eps^2)`, as a real
/// so astronomically large requirements can still be reported.
pub fn required_samples(epsilon: f64, alpha: f64, beta: f64, n: u32) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::param("epsilon must be positive"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha must lie in (0, 1)"));
    }
    let gamma = gamma_n(beta, n)?;
    let bound = gamma * gamma * (2.0 / alpha).ln() / (2.0 * epsilon * epsilon);
    Ok(bound.ceil().max(1.0))
}

/// [`required_samples`] as an integer; errors if it does not fit in `u64`.
pub fn sample_bound(epsilon: f64, alpha: f64, beta: f64, n: u32) -> Result<u64> {
    let required = required_samples(epsilon, alpha, beta, n)?;
    if required >= u64::MAX as f64 {
        return Err(Error::Infeasible { beta, required, cap: u64::MAX });
    }
    Ok(required as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticRunResult {
    /// `q~(0) .. q~(n)`.
    pub q_tilde_trace: Vec<PriorGrid>,
    /// `p(0) .. p(n)`, the exact iterates.
    pub deterministic_trace: Vec<PriorGrid>,
    /// `d(q~(t), p(t))`.
    pub ks_trace: Vec<f64>,
}

impl StochasticRunResult {
    pub fn final_ks(&self) -> f64 {
        *self.ks_trace.last().expect("trace always holds step 0")
    }
}

/// `n` rounds of resampling with `draw` followed by the clamped BA step,
/// alongside the exact iterates from `p0`.
pub fn stochastic_iterate_with(
    p0: &PriorGrid,
    family: &ParametricFamily,
    n: u32,
    mut draw: impl FnMut(&[f64]) -> Vec<f64>,
) -> Result<StochasticRunResult> {
    p0.check_domain(family)?;
    let channel = Channel::new(family, p0.grid(), None)?;
    let grid = p0.grid().to_vec();
    let prior = |w: Vec<f64>| PriorGrid::from_unnormalized(grid.clone(), w);

    let mut exact = p0.weights().to_vec();
    let mut tilde = draw(&exact);
    let mut result = StochasticRunResult {
        q_tilde_trace: vec![prior(tilde.clone())?],
        deterministic_trace: vec![prior(exact.clone())?],
        ks_trace: vec![ks_weights(&tilde, &exact)],
    };
    for _ in 0..n {
        exact = channel.step_clamped(&exact)?;
        tilde = draw(&channel.step_clamped(&tilde)?);
        result.ks_trace.push(ks_weights(&tilde, &exact));
        result.q_tilde_trace.push(prior(tilde.clone())?);
        result.deterministic_trace.push(prior(exact.clone())?);
    }
    Ok(result)
}

/// `q~(n) = [U_N . T]^n . U_N(p0)` with the same stream at every `U_N`.
pub fn stochastic_iterate(
    p0: &PriorGrid,
    family: &ParametricFamily,
    n: u32,
    stream: &UniformStream,
) -> Result<StochasticRunResult> {
    stochastic_iterate_with(p0, family, n, |w| draw_weights(w, stream))
}

#[derive(Debug, Clone)]
pub struct TheoremConfig {
    pub family: ParametricFamily,
    pub grid: Vec<f64>,
    pub n: u32,
    pub epsilon: f64,
    pub alpha: f64,
    pub replications: usize,
    pub seed: u64,
    /// Use this Lipschitz constant instead of the inflated estimate.
    pub beta_override: Option<f64>,
    /// Use this sample size instead of the theorem's bound.
    pub samples_override: Option<u64>,
    pub sample_cap: u64,
    pub lipschitz_trials: usize,
}

impl TheoremConfig {
    pub fn new(family: ParametricFamily, grid: Vec<f64>, n: u32, epsilon: f64, alpha: f64) -> Self {
        TheoremConfig {
            family,
            grid,
            n,
            epsilon,
            alpha,
            replications: 500,
            seed: 0,
            beta_override: None,
            samples_override: None,
            sample_cap: DEFAULT_SAMPLE_CAP,
            lipschitz_trials: DEFAULT_LIPSCHITZ_TRIALS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub beta_hat: f64,
    pub gamma_n: f64,
    #[serde(rename = "N_used")]
    pub n_used: u64,
    pub epsilon: f64,
    pub alpha: f64,
    pub replications: usize,
    pub coverage: f64,
    #[serde(skip)]
    pub final_ks: Vec<f64>,
}

/// Fraction of replications, each with its own stream, whose final KS
/// distance to the exact iterate is below `epsilon`.
pub fn verify_theorem_with(config: &TheoremConfig) -> Result<TheoremReport> {
    if config.replications == 0 {
        return Err(Error::param("replications must be >= 1"));
    }
    let beta = match config.beta_override {
        Some(b) => b,
        None if config.grid.len() < 2 => 1.0,
        None => {
            BETA_INFLATION
                * estimate_lipschitz(&config.family, &config.grid, config.lipschitz_trials, config.seed)?
        }
    };
    let gamma = gamma_n(beta, config.n)?;
    let n_used = match config.samples_override {
        Some(n) if n >= 1 => n,
        Some(_) => return Err(Error::param("sample size must be >= 1")),
        None => {
            let required = required_samples(config.epsilon, config.alpha, beta, config.n)?;
            if required > config.sample_cap as f64 {
                return Err(Error::Infeasible { beta, required, cap: config.sample_cap });
            }
            required as u64
        }
    };
    let p0 = PriorGrid::uniform(config.grid.clone())?;
    let replicate = |rep: usize| -> Result<f64> {
        let stream = UniformStream::generate(n_used as usize, config.seed, rep as u64 + 1);
        Ok(stochastic_iterate(&p0, &config.family, config.n, &stream)?.final_ks())
    };
    #[cfg(feature = "parallel")]
    let final_ks: Vec<f64> = {
        use rayon::prelude::*;
        (0..config.replications).into_par_iter().map(replicate).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let final_ks: Vec<f64> = (0..config.replications).map(replicate).collect::<Result<_>>()?;

    let covered = final_ks.iter().filter(|&&d| d < config.epsilon).count();
    Ok(TheoremReport {
        beta_hat: beta,
        gamma_n: gamma,
        n_used,
        epsilon: config.epsilon,
        alpha: config.alpha,
        replications: config.replications,
        coverage: covered as f64 / config.replications as f64,
        final_ks,
    })
}

pub fn verify_theorem(
    family: &ParametricFamily,
    grid: &[f64],
    n: u32,
    epsilon: f64,
    alpha: f64,
    replications: usize,
    seed: u64,
) -> Result<TheoremReport> {
    let mut config = TheoremConfig::new(family.clone(), grid.to_vec(), n, epsilon, alpha);
    config.replications = replications;
    config.seed = seed;
    verify_theorem_with(&config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::linspace;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid3() -> Vec<f64> {
        vec![0.0, 0.5, 1.0]
    }

    #[test]
    fn draw_examples() {
        let stream = UniformStream::generate(50, 3, 0);
        let point = PriorGrid::point_mass(grid3(), 1).unwrap();
        assert_eq!(draw_common(&point, &stream).weights(), &[0.0, 1.0, 0.0]);
        let low = UniformStream::from_values(vec![0.01, 0.1, 0.2]).unwrap();
        let p = PriorGrid::new(grid3(), vec![0.3, 0.3, 0.4]).unwrap();
        assert_eq!(draw_common(&p, &low).weights(), &[1.0, 0.0, 0.0]);
        let hand = UniformStream::from_values(vec![0.1, 0.6, 0.4, 0.9]).unwrap();
        let half = PriorGrid::uniform(vec![0.0, 1.0]).unwrap();
        assert_eq!(draw_common(&half, &hand).weights(), &[0.5, 0.5]);
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_n(1.0, 3).unwrap(), 4.0);
        assert_abs_diff_eq!(gamma_n(2.0, 2).unwrap(), 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gamma_n(0.5, 1).unwrap(), 1.5, epsilon = 1e-12);
        for n in [0, 1, 5, 40] {
            let near = gamma_n(1.0 + 1e-12, n).unwrap();
            assert!((near - f64::from(n + 1)).abs() < 1e-6, "n = {n}: {near}");
            let below = gamma_n(1.0 - 1e-12, n).unwrap();
            assert!((below - f64::from(n + 1)).abs() < 1e-6);
        }
        assert!(gamma_n(0.0, 1).is_err());
    }

    #[test]
    fn bound_examples() {
        assert_eq!(sample_bound(0.1, 0.05, 1.0, 0).unwrap(), 185);
        let base = sample_bound(0.01, 0.05, 1.0, 0).unwrap() as f64;
        let doubled = sample_bound(0.01, 0.05, 1.0, 1).unwrap() as f64;
        assert!((doubled / base - 4.0).abs() < 4.0 / base);
        assert_eq!(sample_bound(1e12, 0.05, 1.0, 3).unwrap(), 1);
        assert!(matches!(sample_bound(0.05, 0.05, 3.0, 60), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn single_point_grid_has_zero_distances() {
        let stream = UniformStream::generate(100, 1, 0);
        let p0 = PriorGrid::uniform(vec![0.5]).unwrap();
        let r = stochastic_iterate(&p0, &ParametricFamily::bernoulli(), 4, &stream).unwrap();
        assert_eq!(r.ks_trace, vec![0.0; 5]);
    }

    #[test]
    fn identity_draw_reproduces_exact_trace() {
        let family = ParametricFamily::binomial(3).unwrap();
        let p0 = PriorGrid::uniform(linspace(0.0, 1.0, 7)).unwrap();
        let r = stochastic_iterate_with(&p0, &family, 6, |w| w.to_vec()).unwrap();
        assert_eq!(r.q_tilde_trace, r.deterministic_trace);
        assert!(r.ks_trace.iter().all(|&d| d == 0.0));
        assert_eq!(r.ks_trace.len(), 7);
    }

    #[test]
    fn large_stream_tracks_exact_iterate() {
        let stream = UniformStream::generate(1_000_000, 8, 0);
        let p0 = PriorGrid::uniform(linspace(0.0, 1.0, 5)).unwrap();
        let r = stochastic_iterate(&p0, &ParametricFamily::bernoulli(), 3, &stream).unwrap();
        assert!(r.final_ks() <= 0.01, "final KS {}", r.final_ks());
        assert!(r.ks_trace[0] <= stream.ks_to_uniform() + 1e-15);
    }

    #[test]
    fn vacuous_radius_covers_everything() {
        let family = ParametricFamily::bernoulli();
        let report = verify_theorem(&family, &linspace(0.0, 1.0, 5), 2, 1.0, 0.05, 100, 4).unwrap();
        assert_eq!(report.coverage, 1.0);
        assert_eq!(report.final_ks.len(), 100);
    }

    #[test]
    fn forced_large_beta_is_infeasible() {
        let mut config =
            TheoremConfig::new(ParametricFamily::bernoulli(), linspace(0.0, 1.0, 5), 20, 0.05, 0.05);
        config.beta_override = Some(3.0);
        match verify_theorem_with(&config) {
            Err(Error::Infeasible { required, .. }) => assert!(required > 1e20),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn replications_are_reproducible() {
        let mut config =
            TheoremConfig::new(ParametricFamily::bernoulli(), linspace(0.0, 1.0, 5), 2, 0.1, 0.05);
        config.replications = 20;
        config.seed = 9;
        config.samples_override = Some(500);
        let a = verify_theorem_with(&config).unwrap();
        let b = verify_theorem_with(&config).unwrap();
        assert_eq!(a.final_ks, b.final_ks);
        assert_eq!(a.n_used, 500);
    }

    proptest! {
        #[test]
        fn shared_stream_deviation_bounds_every_prior(
            raw in prop::collection::vec(0.0f64..1.0, 1..12),
            n in 1usize..200,
            seed in any::<u64>(),
        ) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 0.0);
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let grid = linspace(0.0, 1.0, weights.len());
            let p = PriorGrid::new(grid, weights).unwrap();
            let stream = UniformStream::generate(n, seed, 0);
            let drawn = draw_common(&p, &stream);
            let d = ks_weights(drawn.weights(), p.weights());
            prop_assert!(d <= stream.ks_to_uniform() + 1e-12);
            prop_assert!((drawn.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
