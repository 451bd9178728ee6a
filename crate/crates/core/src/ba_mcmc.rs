//! MCMC Blahut-Arimoto on a continuous parameter.
//!
//! The `t`-th Blahut-Arimoto iterate started from a flat prior has the
//! exponential form
//!
//! ```text
//! log p(t+1)(theta) = -(t+1) H(Y|theta) - sum_y Q(y|theta) W(t)(y) + const,
//! W(t)(y) = sum_{s<=t} log Q(s)(y),
//! ```
//!
//! so the only state carried between iterations is the accumulator `W` over
//! the outcome space and the current sample. Each iteration:
//!
//! 1. estimates the predictive marginal from the current sample,
//! 2. adds its log to `W`,
//! 3. samples the next iterate with Metropolis-Hastings,
//! 4. reports the minimax-risk estimate (mean divergence of sampled rows
//!    from the estimated marginal).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::family::{ConstraintSpec, ParametricFamily, ThetaDomain};
use crate::infomath::{entropy, ks_samples_to_grid, relative_entropy, Marginal, PriorGrid};
use crate::rng;

pub const DEFAULT_STEPS: usize = 10_000;
pub const DEFAULT_BURN_IN: f64 = 0.2;
pub const DEFAULT_CHAINS: usize = 512;
pub const DEFAULT_SMOOTHING_FLOOR: f64 = 1e-12;
pub const DEFAULT_HIST_BINS: usize = 100;

/// Running `W(t)(y) = sum_{s<=t} log Qhat(s)(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WAccumulator {
    w: Vec<f64>,
    t: i64,
}

impl WAccumulator {
    /// Zero accumulator at `t = -1`.
    pub fn new(n_outcomes: usize) -> Self {
        WAccumulator { w: vec![0.0; n_outcomes], t: -1 }
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn t(&self) -> i64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn accumulate(&mut self, q_hat: &Marginal) -> Result<()> {
        if q_hat.len() != self.w.len() {
            return Err(Error::Shape(format!(
                "marginal has {} outcomes, accumulator {}",
                q_hat.len(),
                self.w.len()
            )));
        }
        let next: Vec<f64> = self.w.iter().zip(&q_hat.probs).map(|(w, q)| w + q.ln()).collect();
        if let Some(outcome) = next.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteAccumulator { outcome });
        }
        self.w = next;
        self.t += 1;
        Ok(())
    }
}

/// Functional form of [`WAccumulator::accumulate`].
pub fn accumulate_w(w: &WAccumulator, q_hat: &Marginal) -> Result<WAccumulator> {
    let mut next = w.clone();
    next.accumulate(q_hat)?;
    Ok(next)
}

/// Unnormalized log density of the iterate that `w` defines.
#[derive(Debug, Clone, Copy)]
pub struct IterateDensity<'a> {
    pub family: &'a ParametricFamily,
    pub w: &'a WAccumulator,
    pub constraint: Option<&'a ConstraintSpec>,
}

impl<'a> IterateDensity<'a> {
    pub fn new(family: &'a ParametricFamily, w: &'a WAccumulator) -> Self {
        IterateDensity { family, w, constraint: None }
    }

    pub fn with_constraint(mut self, constraint: Option<&'a ConstraintSpec>) -> Self {
        self.constraint = constraint;
        self
    }

    fn power(&self) -> f64 {
        (self.w.t + 1) as f64
    }

    /// `-(t+1) H(Y|theta) - sum_y Q(y|theta) W(y) - (t+1) s e(theta)`; `buf`
    /// receives the row.
    pub fn log_density_with(&self, theta: f64, buf: &mut [f64]) -> Result<f64> {
        self.family.row_into(theta, buf)?;
        let cross: f64 = buf.iter().zip(&self.w.w).filter(|(q, _)| **q > 0.0).map(|(q, w)| q * w).sum();
        let penalty = self.constraint.map_or(0.0, |c| c.penalty(theta));
        Ok(self.power() * (penalty - entropy(buf)) - cross)
    }

    pub fn log_density(&self, theta: f64) -> Result<f64> {
        let mut buf = vec![0.0; self.family.n_outcomes()];
        self.log_density_with(theta, &mut buf)
    }

    /// `log p(theta) / p(phi)`.
    pub fn log_ratio(&self, theta: f64, phi: f64) -> Result<f64> {
        Ok(self.log_density(theta)? - self.log_density(phi)?)
    }
}

/// `log p(t+1)(theta) / p(t+1)(phi)` for the iterate defined by `w`, where
/// `t` must match the accumulator's iteration counter.
pub fn log_ratio(
    theta: f64,
    phi: f64,
    t: i64,
    w: &WAccumulator,
    family: &ParametricFamily,
) -> Result<f64> {
    if w.t != t {
        return Err(Error::param(format!("accumulator is at t = {}, not {t}", w.t)));
    }
    if w.len() != family.n_outcomes() {
        return Err(Error::Shape("accumulator does not match the family's outcomes".into()));
    }
    IterateDensity::new(family, w).log_ratio(theta, phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub thetas: Vec<f64>,
    pub iteration: usize,
    pub acceptance_rate: f64,
    pub chain_seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    fn flag_acceptance(&mut self) {
        if self.acceptance_rate < 0.01 || self.acceptance_rate > 0.99 {
            self.warnings.push(format!(
                "iteration {}: acceptance rate {:.4} outside [0.01, 0.99]",
                self.iteration, self.acceptance_rate
            ));
        }
    }
}

/// Chain length, burn-in and thinning for one Metropolis-Hastings run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSettings {
    pub steps: usize,
    pub proposal_halfwidth: f64,
    /// Fraction of `steps` discarded before collecting.
    pub burn_in: f64,
    /// Stride between kept states; `None` spreads samples over the retained steps.
    pub thin: Option<usize>,
}

struct ChainRun {
    thetas: Vec<f64>,
    accepted: usize,
    steps: usize,
}

fn reflect(mut x: f64, d: ThetaDomain) -> f64 {
    if d.width() == 0.0 {
        return d.lo;
    }
    while x < d.lo || x > d.hi {
        if x < d.lo {
            x = 2.0 * d.lo - x;
        }
        if x > d.hi {
            x = 2.0 * d.hi - x;
        }
    }
    x.clamp(d.lo, d.hi)
}

fn run_chain(
    target: &IterateDensity<'_>,
    n_samples: usize,
    settings: &ChainSettings,
    start: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ChainRun> {
    let domain = target.family.domain();
    domain.check(start)?;
    let burn = (settings.burn_in * settings.steps as f64).floor() as usize;
    let retained = settings.steps.saturating_sub(burn);
    let stride = match settings.thin {
        Some(s) if s > 0 => s,
        Some(_) => return Err(Error::param("thinning stride must be >= 1")),
        None => (retained / n_samples.max(1)).max(1),
    };
    if n_samples == 0 || n_samples * stride > retained {
        return Err(Error::param(format!(
            "{} steps with burn-in {} cannot yield {n_samples} samples at stride {stride}",
            settings.steps, settings.burn_in
        )));
    }
    let h = settings.proposal_halfwidth;
    let mut buf = vec![0.0; target.family.n_outcomes()];
    let mut current = start;
    let mut current_ld = target.log_density_with(current, &mut buf)?;
    let mut accepted = 0usize;
    let mut thetas = Vec::with_capacity(n_samples);
    let first_kept = burn + retained - n_samples * stride;
    for step in 0..settings.steps {
        let u: f64 = rng.gen();
        let proposal = reflect(current + h * (2.0 * u - 1.0), domain);
        let proposal_ld = target.log_density_with(proposal, &mut buf)?;
        let log_u = (1.0 - rng.gen::<f64>()).ln();
        if log_u < proposal_ld - current_ld {
            current = proposal;
            current_ld = proposal_ld;
            accepted += 1;
        }
        if step >= first_kept && (step - first_kept + 1) % stride == 0 {
            thetas.push(current);
        }
    }
    debug_assert_eq!(thetas.len(), n_samples);
    Ok(ChainRun { thetas, accepted, steps: settings.steps })
}

/// Metropolis-Hastings on the iterate `p(t+1)` defined by `w`, with a
/// reflected uniform proposal, started at the domain midpoint.
pub fn mh_chain(
    w: &WAccumulator,
    t: i64,
    family: &ParametricFamily,
    n_samples: usize,
    steps: usize,
    proposal_halfwidth: f64,
    seed: u64,
) -> Result<SampleSet> {
    if w.t != t {
        return Err(Error::param(format!("accumulator is at t = {}, not {t}", w.t)));
    }
    let settings =
        ChainSettings { steps, proposal_halfwidth, burn_in: DEFAULT_BURN_IN, thin: None };
    let target = IterateDensity::new(family, w);
    let mut rng = rng::stream(seed, 0);
    let run = run_chain(&target, n_samples, &settings, family.domain().midpoint(), &mut rng)?;
    let mut set = SampleSet {
        thetas: run.thetas,
        iteration: (t + 1).max(0) as usize,
        acceptance_rate: run.accepted as f64 / run.steps as f64,
        chain_seed: seed,
        warnings: Vec::new(),
    };
    set.flag_acceptance();
    Ok(set)
}

/// Mixture of the sampled rows, floored at `floor` and renormalized, along
/// with the per-outcome sample variance of `Q(y | theta_i)`.
fn marginal_with_spread(
    samples: &SampleSet,
    family: &ParametricFamily,
    floor: f64,
) -> Result<(Marginal, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::param("empty sample set"));
    }
    if !(floor >= 0.0 && floor < 1.0) {
        return Err(Error::param("smoothing floor must lie in [0, 1)"));
    }
    let n_y = family.n_outcomes();
    let mut sum = vec![0.0; n_y];
    let mut sum_sq = vec![0.0; n_y];
    let mut row = vec![0.0; n_y];
    for &theta in &samples.thetas {
        family.row_into(theta, &mut row)?;
        for y in 0..n_y {
            sum[y] += row[y];
            sum_sq[y] += row[y] * row[y];
        }
    }
    let n = samples.len() as f64;
    let variance: Vec<f64> = if samples.len() > 1 {
        (0..n_y)
            .map(|y| ((sum_sq[y] - sum[y] * sum[y] / n) / (n - 1.0)).max(0.0))
            .collect()
    } else {
        vec![0.0; n_y]
    };
    let mut probs: Vec<f64> = sum.iter().map(|s| (s / n).max(floor)).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok((Marginal { probs }, variance))
}

/// `Qhat(y) = mean_i Q(y | theta_i)`, then each entry raised to at least
/// `floor` and renormalized.
pub fn update_marginal(
    samples: &SampleSet,
    family: &ParametricFamily,
    floor: f64,
) -> Result<Marginal> {
    Ok(marginal_with_spread(samples, family, floor)?.0)
}

/// Sample mean of `D(Q_theta_i || q_hat)`: the minimax-risk estimate.
pub fn minimax_estimate(
    samples: &SampleSet,
    q_hat: &Marginal,
    family: &ParametricFamily,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::param("empty sample set"));
    }
    if q_hat.len() != family.n_outcomes() {
        return Err(Error::Shape("marginal does not match the family's outcomes".into()));
    }
    let mut row = vec![0.0; family.n_outcomes()];
    let mut total = 0.0;
    for &theta in &samples.thetas {
        family.row_into(theta, &mut row)?;
        total += relative_entropy(&row, &q_hat.probs);
    }
    Ok(total / samples.len() as f64)
}

/// Sample sizes `N_s = n0 + c s^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub n0: usize,
    pub c: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { n0: 500, c: 20 }
    }
}

impl Schedule {
    pub fn size(&self, s: usize) -> usize {
        self.n0 + self.c * s * s
    }
}

#[derive(Debug, Clone)]
pub struct McmcRunConfig {
    pub family: ParametricFamily,
    pub iterations: usize,
    pub schedule: Schedule,
    /// Metropolis-Hastings steps per iteration, shared across chains.
    pub steps: usize,
    /// Defaults to a tenth of the domain width.
    pub proposal_halfwidth: Option<f64>,
    pub burn_in: f64,
    pub thin: Option<usize>,
    /// Independent chains per iteration, each warm-started at a stratified
    /// quantile of the previous sample.
    pub chains: usize,
    pub seed: u64,
    pub smoothing_floor: f64,
    /// Reuse the same random streams in every iteration.
    pub common_random: bool,
    pub constraint: Option<ConstraintSpec>,
    /// Grid prior to report KS distances against.
    pub oracle: Option<PriorGrid>,
}

impl McmcRunConfig {
    pub fn new(family: ParametricFamily, iterations: usize) -> Self {
        McmcRunConfig {
            family,
            iterations,
            schedule: Schedule::default(),
            steps: DEFAULT_STEPS,
            proposal_halfwidth: None,
            burn_in: DEFAULT_BURN_IN,
            thin: None,
            chains: DEFAULT_CHAINS,
            seed: 0,
            smoothing_floor: DEFAULT_SMOOTHING_FLOOR,
            common_random: false,
            constraint: None,
            oracle: None,
        }
    }

    pub fn halfwidth(&self) -> f64 {
        self.proposal_halfwidth.unwrap_or(self.family.domain().width() / 10.0)
    }

    fn validate(&self) -> Result<()> {
        if self.schedule.n0 == 0 {
            return Err(Error::param("schedule n0 must be >= 1"));
        }
        if self.chains == 0 || self.steps == 0 {
            return Err(Error::param("chains and steps must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::param("burn-in fraction must lie in [0, 1)"));
        }
        if !(self.halfwidth() > 0.0) {
            return Err(Error::param("proposal half-width must be positive"));
        }
        if !(0.0..1.0).contains(&self.smoothing_floor) {
            return Err(Error::param("smoothing floor must lie in [0, 1)"));
        }
        if self.family.is_discrete() {
            return Err(Error::Unsupported {
                family: self.family.name().into(),
                reason: "MCMC needs a continuous parameter; use the grid solver".into(),
            });
        }
        if let Some(oracle) = &self.oracle {
            oracle.check_domain(&self.family)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Index of the sample set this iteration produced (1-based).
    pub iter: usize,
    pub n_samples: usize,
    pub acceptance_rate: f64,
    pub minimax_estimate_nats: f64,
    pub tau_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks_to_oracle: Option<f64>,
    /// Size of the sample the marginal was estimated from.
    #[serde(skip)]
    pub marginal_samples: usize,
    /// Per-outcome sample variance of `Q(y | theta_i)` in that sample.
    #[serde(skip)]
    pub row_variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub final_samples: SampleSet,
}

#[derive(Debug, Error)]
#[error("{error} (after {} completed iterations)", partial.records.len())]
pub struct RunFailure {
    pub error: Error,
    pub partial: Box<RunTrace>,
}

/// Everything carried from one iteration to the next.
#[derive(Debug, Clone)]
pub struct McmcState {
    pub w: WAccumulator,
    pub samples: SampleSet,
}

fn variance_term(row_variance: &[f64], n: usize) -> f64 {
    row_variance.iter().sum::<f64>() / n as f64
}

/// Running `tau^2(t) = sum_{s<=t} sigma_s^2 / N_s`, where `sigma_s^2` sums the
/// per-outcome sample variances of `Q(y | theta_i)` in iteration `s`.
pub fn variance_diagnostic(trace: &RunTrace, family: &ParametricFamily) -> Result<Vec<f64>> {
    let mut tau = 0.0;
    trace
        .records
        .iter()
        .map(|r| {
            if r.row_variance.len() != family.n_outcomes() {
                return Err(Error::Shape("trace does not match the family's outcomes".into()));
            }
            tau += variance_term(&r.row_variance, r.marginal_samples);
            Ok(tau)
        })
        .collect()
}

pub fn initial_samples(config: &McmcRunConfig) -> SampleSet {
    let d = config.family.domain();
    let mut rng = rng::stream(config.seed, 0);
    let n = config.schedule.size(0);
    let thetas = (0..n).map(|_| d.lo + d.width() * rng.gen::<f64>()).collect();
    SampleSet {
        thetas,
        iteration: 0,
        acceptance_rate: 1.0,
        chain_seed: config.seed,
        warnings: Vec::new(),
    }
}

/// Draws `n` samples of the iterate `target` with `config.chains` chains
/// whose starting points are stratified quantiles of `previous`.
fn sample_iterate(
    target: &IterateDensity<'_>,
    n: usize,
    previous: &SampleSet,
    iteration: usize,
    config: &McmcRunConfig,
) -> Result<SampleSet> {
    let chains = config.chains.min(n);
    let mut sorted = previous.thetas.clone();
    sorted.sort_by(f64::total_cmp);
    let base_steps = config.steps.div_ceil(chains);
    let keep = 1.0 - config.burn_in;
    // chain j produces the samples in [bounds[j], bounds[j+1]) and starts at
    // the previous sample's quantile at the middle of that share
    let bounds: Vec<usize> = (0..=chains).map(|j| (n * j + chains / 2) / chains).collect();
    let jobs: Vec<(usize, f64, ChainSettings, u64)> = (0..chains)
        .map(|j| {
            let n_j = bounds[j + 1] - bounds[j];
            let mid = (bounds[j] + bounds[j + 1]) as f64 / (2.0 * n as f64);
            let rank = (mid * sorted.len() as f64 - 0.5).round().max(0.0) as usize;
            let start = sorted[rank.min(sorted.len() - 1)];
            let stride = config.thin.unwrap_or(1).max(1);
            let needed = ((n_j * stride) as f64 / keep).ceil() as usize + 1;
            let settings = ChainSettings {
                steps: base_steps.max(needed),
                proposal_halfwidth: config.halfwidth(),
                burn_in: config.burn_in,
                thin: config.thin,
            };
            let round = if config.common_random { 0 } else { iteration as u64 };
            let stream = 1 + round * config.chains as u64 + j as u64;
            (n_j, start, settings, stream)
        })
        .collect();

    let run = |&(n_j, start, settings, stream): &(usize, f64, ChainSettings, u64)| {
        let mut rng = rng::stream(config.seed, stream);
        run_chain(target, n_j, &settings, start, &mut rng)
    };
    #[cfg(feature = "parallel")]
    let runs: Vec<Result<ChainRun>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<Result<ChainRun>> = jobs.iter().map(run).collect();

    let mut thetas = Vec::with_capacity(n);
    let (mut accepted, mut steps) = (0usize, 0usize);
    for r in runs {
        let r = r?;
        thetas.extend(r.thetas);
        accepted += r.accepted;
        steps += r.steps;
    }
    let mut set = SampleSet {
        thetas,
        iteration,
        acceptance_rate: accepted as f64 / steps as f64,
        chain_seed: config.seed,
        warnings: Vec::new(),
    };
    set.flag_acceptance();
    Ok(set)
}

pub fn run_mcmc_ba(config: &McmcRunConfig) -> std::result::Result<RunTrace, RunFailure> {
    run_mcmc_ba_with(config, |_, _| {})
}

/// Runs the algorithm, calling `observe` after every completed iteration with
/// its record and the freshly drawn sample.
pub fn run_mcmc_ba_with(
    config: &McmcRunConfig,
    mut observe: impl FnMut(&IterationRecord, &SampleSet),
) -> std::result::Result<RunTrace, RunFailure> {
    let initial = initial_samples(config);
    let fail = |error: Error, records: Vec<IterationRecord>, samples: SampleSet| RunFailure {
        error,
        partial: Box::new(RunTrace { records, final_samples: samples }),
    };
    if let Err(e) = config.validate() {
        return Err(fail(e, Vec::new(), initial));
    }
    let family = &config.family;
    let mut state = McmcState { w: WAccumulator::new(family.n_outcomes()), samples: initial };
    let mut records = Vec::with_capacity(config.iterations);
    let mut tau_sq = 0.0;

    for t in 0..config.iterations {
        let step = (|| -> Result<(IterationRecord, SampleSet)> {
            let (q_hat, row_variance) =
                marginal_with_spread(&state.samples, family, config.smoothing_floor)?;
            state.w.accumulate(&q_hat)?;
            let target =
                IterateDensity::new(family, &state.w).with_constraint(config.constraint.as_ref());
            let n_next = config.schedule.size(t + 1);
            let next = sample_iterate(&target, n_next, &state.samples, t + 1, config)?;
            let r_hat = minimax_estimate(&next, &q_hat, family)?;
            let marginal_samples = state.samples.len();
            let record = IterationRecord {
                iter: t + 1,
                n_samples: next.len(),
                acceptance_rate: next.acceptance_rate,
                minimax_estimate_nats: r_hat,
                tau_sq: tau_sq + variance_term(&row_variance, marginal_samples),
                ks_to_oracle: config.oracle.as_ref().map(|o| ks_samples_to_grid(&next.thetas, o)),
                marginal_samples,
                row_variance,
            };
            Ok((record, next))
        })();
        match step {
            Ok((record, next)) => {
                tau_sq = record.tau_sq;
                observe(&record, &next);
                records.push(record);
                state.samples = next;
            }
            Err(e) => return Err(fail(e, records, state.samples)),
        }
    }
    Ok(RunTrace { records, final_samples: state.samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Counts over `bins` equal cells of `domain`; the last cell is closed.
pub fn histogram(thetas: &[f64], domain: ThetaDomain, bins: usize) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    let width = domain.width() / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in thetas {
        if !domain.contains(x) {
            continue;
        }
        let idx = if width > 0.0 { ((x - domain.lo) / width) as usize } else { 0 };
        counts[idx.min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: domain.lo + width * i as f64,
            hi: if i + 1 == bins { domain.hi } else { domain.lo + width * (i + 1) as f64 },
            count,
        })
        .collect()
}
