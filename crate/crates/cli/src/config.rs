//! Run configuration files.
//!
//! A config is TOML: an optional top-level `seed` and `out`, a `[family]`
//! table, an optional `[constraint]` table and one table per command. Unknown
//! keys are rejected. Resolution fills in every default so that the copy
//! written next to the outputs replays the run exactly.

use std::path::{Path, PathBuf};

use refprior::ba_det::BaOptions;
use refprior::ba_mcmc::{self, McmcRunConfig, Schedule};
use refprior::common_random::{self, TheoremConfig};
use refprior::family::{self, linspace, ParametricFamily};
use refprior::ConstraintSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub family: FamilySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<CapacitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refprior: Option<RefpriorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_verify: Option<KsVerifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jeffreys: Option<JeffreysSection>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    #[default]
    Bernoulli,
    Poisson,
    NegativeBinomial,
    Normal,
    Matrix,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    pub name: FamilyName,
    /// Number of iid observations, folded in through the sufficient statistic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Text file with a `n_theta n_y` header line followed by the rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_file: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpenseName {
    #[default]
    Square,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSection {
    #[serde(default)]
    pub expense: ExpenseName,
    pub multiplier: f64,
    #[serde(default = "one")]
    pub budget: f64,
}

fn one() -> f64 {
    1.0
}

/// Parameter points: an explicit `grid`, or `grid_points` spread over the
/// domain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridSpec {
    pub grid: Option<Vec<f64>>,
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapacitySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CapacitySection {
    fn default() -> Self {
        let d = BaOptions::default();
        CapacitySection { grid: None, grid_points: None, tol: d.tol, max_iter: d.max_iter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefpriorSection {
    pub iterations: usize,
    pub n0: usize,
    pub c: usize,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposal_halfwidth: Option<f64>,
    pub burn_in: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thin: Option<usize>,
    pub chains: usize,
    pub smoothing_floor: f64,
    pub common_random: bool,
    /// Write `hist_<t>.csv` every this many iterations (the last is always written).
    pub hist_every: usize,
    pub hist_bins: usize,
    /// Solve the grid problem on this many points and report KS distances to it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_grid_points: Option<usize>,
}

impl Default for RefpriorSection {
    fn default() -> Self {
        let s = Schedule::default();
        RefpriorSection {
            iterations: 30,
            n0: s.n0,
            c: s.c,
            steps: ba_mcmc::DEFAULT_STEPS,
            proposal_halfwidth: None,
            burn_in: ba_mcmc::DEFAULT_BURN_IN,
            thin: None,
            chains: ba_mcmc::DEFAULT_CHAINS,
            smoothing_floor: ba_mcmc::DEFAULT_SMOOTHING_FLOOR,
            common_random: false,
            hist_every: 1,
            hist_bins: ba_mcmc::DEFAULT_HIST_BINS,
            oracle_grid_points: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KsVerifySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    pub n: u32,
    pub epsilon: f64,
    pub alpha: f64,
    pub replications: usize,
    /// Fixed Lipschitz constant in place of the estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Fixed sample size in place of the bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    pub sample_cap: u64,
    pub lipschitz_trials: usize,
}

impl Default for KsVerifySection {
    fn default() -> Self {
        KsVerifySection {
            grid: None,
            grid_points: None,
            n: 5,
            epsilon: 0.05,
            alpha: 0.05,
            replications: 500,
            beta: None,
            samples: None,
            sample_cap: common_random::DEFAULT_SAMPLE_CAP,
            lipschitz_trials: common_random::DEFAULT_LIPSCHITZ_TRIALS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JeffreysSection {
    /// An explicit grid, or `grid_points` cell midpoints of the domain.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
}

const DEFAULT_GRID_POINTS: usize = 201;
const DEFAULT_JEFFREYS_POINTS: usize = 200;

pub fn parse(text: &str) -> Result<ConfigFile, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

pub fn load(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

fn reject(name: FamilyName, key: &str, present: bool) -> Result<(), CliError> {
    if present {
        return Err(CliError::Config(format!("family `{name:?}` does not take `{key}`")));
    }
    Ok(())
}

impl FamilySection {
    /// Fills defaults and inlines `matrix_file` (relative to `base`).
    pub fn resolve(&self, base: &Path) -> Result<FamilySection, CliError> {
        use FamilyName::*;
        let name = self.name;
        let mut out = FamilySection { name, ..Default::default() };
        reject(name, "r", self.r.is_some() && name != NegativeBinomial)?;
        reject(name, "sigma", self.sigma.is_some() && name != Normal)?;
        reject(name, "bins", self.bins.is_some() && name != Normal)?;
        reject(
            name,
            "truncation_tol",
            self.truncation_tol.is_some() && !matches!(name, Poisson | NegativeBinomial),
        )?;
        let is_matrix = name == Matrix;
        reject(name, "matrix", self.matrix.is_some() && !is_matrix)?;
        reject(name, "matrix_file", self.matrix_file.is_some() && !is_matrix)?;
        if is_matrix {
            for (key, present) in
                [("trials", self.trials.is_some()), ("lo", self.lo.is_some()), ("hi", self.hi.is_some())]
            {
                reject(name, key, present)?;
            }
            out.matrix = Some(match (&self.matrix, &self.matrix_file) {
                (Some(m), None) => m.clone(),
                (None, Some(file)) => {
                    let path = base.join(file);
                    let text = std::fs::read_to_string(&path).map_err(|e| {
                        CliError::Config(format!("cannot read {}: {e}", path.display()))
                    })?;
                    matrix_rows(&text)?
                }
                _ => {
                    return Err(CliError::Config(
                        "matrix family needs exactly one of `matrix` or `matrix_file`".into(),
                    ))
                }
            });
            return Ok(out);
        }
        let (lo, hi) = match name {
            Bernoulli => (0.0, 1.0),
            Poisson => (0.0, 5.0),
            NegativeBinomial => (0.1, 1.0),
            Normal => (-15.0, 15.0),
            Matrix => unreachable!(),
        };
        out.trials = Some(self.trials.unwrap_or(1));
        out.lo = Some(self.lo.unwrap_or(lo));
        out.hi = Some(self.hi.unwrap_or(hi));
        match name {
            Poisson => out.truncation_tol = Some(self.truncation_tol.unwrap_or(family::DEFAULT_TRUNCATION_TOL)),
            NegativeBinomial => {
                out.r = Some(self.r.ok_or_else(|| {
                    CliError::Config("negative_binomial family needs `r`".into())
                })?);
                out.truncation_tol = Some(self.truncation_tol.unwrap_or(family::DEFAULT_TRUNCATION_TOL));
            }
            Normal => {
                out.sigma = Some(self.sigma.unwrap_or(1.0));
                out.bins = Some(self.bins.unwrap_or(family::DEFAULT_BINS));
            }
            _ => {}
        }
        Ok(out)
    }

    /// Builds the family from a resolved section.
    pub fn build(&self) -> Result<ParametricFamily, CliError> {
        let missing = |key: &str| CliError::Config(format!("unresolved family key `{key}`"));
        if self.name == FamilyName::Matrix {
            let rows = self.matrix.clone().ok_or_else(|| missing("matrix"))?;
            return Ok(ParametricFamily::from_matrix(rows)?);
        }
        let trials = self.trials.ok_or_else(|| missing("trials"))?;
        let lo = self.lo.ok_or_else(|| missing("lo"))?;
        let hi = self.hi.ok_or_else(|| missing("hi"))?;
        let single = match self.name {
            FamilyName::Bernoulli => ParametricFamily::binomial_with_domain(1, lo, hi)?,
            FamilyName::Poisson => {
                ParametricFamily::poisson(lo, hi, self.truncation_tol.ok_or_else(|| missing("truncation_tol"))?)?
            }
            FamilyName::NegativeBinomial => ParametricFamily::negative_binomial(
                self.r.ok_or_else(|| missing("r"))?,
                lo,
                hi,
                self.truncation_tol.ok_or_else(|| missing("truncation_tol"))?,
            )?,
            FamilyName::Normal => ParametricFamily::normal(
                self.sigma.ok_or_else(|| missing("sigma"))?,
                lo,
                hi,
                self.bins.ok_or_else(|| missing("bins"))?,
            )?,
            FamilyName::Matrix => unreachable!(),
        };
        Ok(single.sufficient_reduce(trials)?)
    }
}

fn matrix_rows(text: &str) -> Result<Vec<Vec<f64>>, CliError> {
    let family = ParametricFamily::from_matrix_text(text)?;
    let n = family.domain().hi as usize + 1;
    (0..n).map(|i| family.row(i as f64).map_err(CliError::from)).collect()
}

impl ConstraintSection {
    pub fn build(&self) -> Result<ConstraintSpec, CliError> {
        match self.expense {
            ExpenseName::Square => Ok(ConstraintSpec::squared(self.multiplier, self.budget)?),
        }
    }
}

type GridKeys = (Option<Vec<f64>>, Option<usize>);

fn grid_spec(grid: Option<Vec<f64>>, points: Option<usize>, default: usize) -> Result<GridKeys, CliError> {
    match (grid, points) {
        (Some(_), Some(_)) => {
            Err(CliError::Config("give either `grid` or `grid_points`, not both".into()))
        }
        (Some(g), None) => Ok((Some(g), None)),
        (None, p) => Ok((None, Some(p.unwrap_or(default)))),
    }
}

impl GridSpec {
    /// Explicit grid, else evenly spaced points (row indices for a matrix).
    pub fn points(&self, family: &ParametricFamily) -> Vec<f64> {
        if let Some(g) = &self.grid {
            return g.clone();
        }
        let d = family.domain();
        if family.is_discrete() {
            return (0..=d.hi as usize).map(|i| i as f64).collect();
        }
        linspace(d.lo, d.hi, self.grid_points.unwrap_or(DEFAULT_GRID_POINTS))
    }

    /// Explicit grid, else cell midpoints so no point touches the boundary.
    pub fn interior_points(&self, family: &ParametricFamily) -> Vec<f64> {
        if let Some(g) = &self.grid {
            return g.clone();
        }
        let d = family.domain();
        let n = self.grid_points.unwrap_or(DEFAULT_JEFFREYS_POINTS);
        let w = d.width() / n as f64;
        (0..n).map(|i| d.lo + w * (i as f64 + 0.5)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Capacity,
    Refprior,
    KsVerify,
    Jeffreys,
}

/// A config reduced to what one command needs, with every default filled.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub file: ConfigFile,
    pub family: ParametricFamily,
    pub constraint: Option<ConstraintSpec>,
    pub seed: u64,
    pub out: PathBuf,
}

pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn resolve(
    raw: &ConfigFile,
    base: &Path,
    command: Command,
    overrides: &Overrides,
) -> Result<Resolved, CliError> {
    let family_section = raw.family.resolve(base)?;
    let family = family_section.build()?;
    let constraint = raw.constraint.as_ref().map(ConstraintSection::build).transpose()?;
    if constraint.is_some() && !matches!(command, Command::Capacity | Command::Refprior) {
        return Err(CliError::Config("a constraint only applies to capacity and refprior".into()));
    }
    let seed = overrides.seed.or(raw.seed).unwrap_or(0);
    let out = match (&overrides.out, &raw.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => PathBuf::from("refprior-out"),
    };
    let mut file = ConfigFile {
        seed: Some(seed),
        out: raw.out.clone(),
        family: family_section,
        constraint: raw.constraint.clone(),
        ..Default::default()
    };
    match command {
        Command::Capacity => {
            let mut s = raw.capacity.clone().unwrap_or_default();
            (s.grid, s.grid_points) = grid_spec(s.grid, s.grid_points, DEFAULT_GRID_POINTS)?;
            file.capacity = Some(s);
        }
        Command::Refprior => {
            file.refprior = Some(raw.refprior.clone().unwrap_or_default());
        }
        Command::KsVerify => {
            let mut s = raw.ks_verify.clone().unwrap_or_default();
            (s.grid, s.grid_points) = grid_spec(s.grid, s.grid_points, 5)?;
            file.ks_verify = Some(s);
        }
        Command::Jeffreys => {
            let mut s = raw.jeffreys.clone().unwrap_or_default();
            (s.grid, s.grid_points) = grid_spec(s.grid, s.grid_points, DEFAULT_JEFFREYS_POINTS)?;
            file.jeffreys = Some(s);
        }
    }
    Ok(Resolved { file, family, constraint, seed, out })
}

impl Resolved {
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.file).expect("resolved config serializes")
    }

    pub fn mcmc_config(&self) -> McmcRunConfig {
        let s = self.file.refprior.clone().unwrap_or_default();
        let mut c = McmcRunConfig::new(self.family.clone(), s.iterations);
        c.schedule = Schedule { n0: s.n0, c: s.c };
        c.steps = s.steps;
        c.proposal_halfwidth = s.proposal_halfwidth;
        c.burn_in = s.burn_in;
        c.thin = s.thin;
        c.chains = s.chains;
        c.seed = self.seed;
        c.smoothing_floor = s.smoothing_floor;
        c.common_random = s.common_random;
        c.constraint = self.constraint.clone();
        c
    }

    pub fn theorem_config(&self) -> TheoremConfig {
        let s = self.file.ks_verify.clone().unwrap_or_default();
        let grid = GridSpec { grid: s.grid, grid_points: s.grid_points }.points(&self.family);
        let mut c = TheoremConfig::new(self.family.clone(), grid, s.n, s.epsilon, s.alpha);
        c.replications = s.replications;
        c.seed = self.seed;
        c.beta_override = s.beta;
        c.samples_override = s.samples;
        c.sample_cap = s.sample_cap;
        c.lipschitz_trials = s.lipschitz_trials;
        c
    }
}
