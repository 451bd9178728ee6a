use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use refprior::ba_det::{ba_solve, BaOptions};
use refprior::ba_mcmc::{histogram, initial_samples, run_mcmc_ba_with, IterationRecord};
use refprior::common_random::verify_theorem_with;
use refprior::family::linspace;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{self, Command, GridSpec, Overrides, Resolved};
use crate::output::{self, num};
use crate::CliError;

const NATS_PER_BIT: f64 = std::f64::consts::LN_2;

#[derive(Clone, Copy)]
struct Unit {
    bits: bool,
}

impl Unit {
    fn name(self) -> &'static str {
        if self.bits { "bits" } else { "nats" }
    }

    fn convert(self, nats: f64) -> f64 {
        if self.bits { nats / NATS_PER_BIT } else { nats }
    }
}

pub fn run(
    command: Command,
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    bits: bool,
) -> Result<u8, CliError> {
    let raw = config::load(config_path)?;
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let resolved = config::resolve(&raw, base, command, &Overrides { seed, out })?;
    output::create_dir(&resolved.out)?;
    output::write(&resolved.out, "resolved_config.toml", &resolved.to_toml())?;

    let started_ms = output::unix_ms();
    let clock = Instant::now();
    let unit = Unit { bits };
    let result = match command {
        Command::Capacity => capacity(&resolved, unit),
        Command::Refprior => refprior(&resolved, unit, clock),
        Command::KsVerify => ks_verify(&resolved),
        Command::Jeffreys => jeffreys(&resolved),
    };
    let exit_code = match &result {
        Ok(code) => *code,
        Err(e) => e.exit_code(),
    };
    let metadata = json!({
        "command": command_name(command),
        "version": env!("CARGO_PKG_VERSION"),
        "config": config_path.display().to_string(),
        "started_unix_ms": started_ms as u64,
        "wallclock_ms": clock.elapsed().as_millis() as u64,
        "exit_code": exit_code,
    });
    output::write(&resolved.out, "metadata.json", &output::json_pretty(&metadata))?;
    result
}

fn command_name(command: Command) -> &'static str {
    match command {
        Command::Capacity => "capacity",
        Command::Refprior => "refprior",
        Command::KsVerify => "ks-verify",
        Command::Jeffreys => "jeffreys",
    }
}

fn finish(r: &Resolved, summary: &Value) -> Result<(), CliError> {
    let text = output::json_pretty(summary);
    output::write(&r.out, "summary.json", &text)?;
    print!("{text}");
    Ok(())
}

fn capacity(r: &Resolved, unit: Unit) -> Result<u8, CliError> {
    let s = r.file.capacity.clone().unwrap_or_default();
    let grid = GridSpec { grid: s.grid, grid_points: s.grid_points }.points(&r.family);
    let options = BaOptions { tol: s.tol, max_iter: s.max_iter };
    let result = ba_solve(&r.family, &grid, &options, r.constraint.as_ref())?;

    output::write(&r.out, "prior.csv", &output::prior_csv(&result.prior))?;
    let mut bounds = String::from("iter,lower,upper\n");
    for (i, (lo, hi)) in result.lower_bound_trace.iter().zip(&result.upper_bound_trace).enumerate() {
        let _ = writeln!(bounds, "{i},{},{}", num(unit.convert(*lo)), num(unit.convert(*hi)));
    }
    output::write(&r.out, "bounds.csv", &bounds)?;

    let mut summary = json!({
        "capacity": unit.convert(result.capacity),
        "unit": unit.name(),
        "lower_bound": result.lower_bound_trace.last().map(|x| unit.convert(*x)),
        "upper_bound": result.upper_bound_trace.last().map(|x| unit.convert(*x)),
        "iterations": result.iterations,
        "converged": result.converged,
        "grid_points": grid.len(),
        "truncation_mass": r.family.truncation_mass(),
    });
    if let Some(e) = result.expected_expense {
        summary["expected_expense"] = json!(e);
    }
    finish(r, &summary)?;
    if result.converged {
        Ok(0)
    } else {
        output::warn(
            "capacity",
            &format!("not converged after {} iterations (tol {})", result.iterations, s.tol),
        );
        Ok(2)
    }
}

#[derive(Serialize)]
struct TraceLine<'a> {
    #[serde(flatten)]
    record: &'a IterationRecord,
    wallclock_ms: u64,
}

fn refprior(r: &Resolved, unit: Unit, clock: Instant) -> Result<u8, CliError> {
    let s = r.file.refprior.clone().unwrap_or_default();
    let mut cfg = r.mcmc_config();
    if let Some(points) = s.oracle_grid_points {
        let d = r.family.domain();
        let fixed = ba_solve(
            &r.family,
            &linspace(d.lo, d.hi, points),
            &BaOptions::default(),
            r.constraint.as_ref(),
        )?;
        if !fixed.converged {
            output::warn("refprior", "oracle grid solve did not converge; KS distances are to its last iterate");
        }
        cfg.oracle = Some(fixed.prior);
    }
    let domain = r.family.domain();
    let initial = initial_samples(&cfg);
    output::write(&r.out, "hist_0.csv", &output::histogram_csv(&histogram(&initial.thetas, domain, s.hist_bins)))?;

    let every = s.hist_every.max(1);
    let mut trace = String::new();
    let mut write_error = None;
    let outcome = run_mcmc_ba_with(&cfg, |record, samples| {
        let line = TraceLine { record, wallclock_ms: clock.elapsed().as_millis() as u64 };
        let _ = writeln!(trace, "{}", serde_json::to_string(&line).expect("trace line serializes"));
        for w in &samples.warnings {
            output::warn("refprior", w);
        }
        if record.iter % every == 0 || record.iter == cfg.iterations {
            let csv = output::histogram_csv(&histogram(&samples.thetas, domain, s.hist_bins));
            if let Err(e) = output::write(&r.out, &format!("hist_{}.csv", record.iter), &csv) {
                write_error.get_or_insert(e);
            }
        }
    });
    output::write(&r.out, "trace.jsonl", &trace)?;
    if let Some(e) = write_error {
        return Err(e);
    }
    let run = match outcome {
        Ok(run) => run,
        Err(failure) => {
            output::write(&r.out, "samples.csv", &output::samples_csv(&failure.partial.final_samples.thetas))?;
            return Err(failure.error.into());
        }
    };
    let thetas = &run.final_samples.thetas;
    output::write(&r.out, "samples.csv", &output::samples_csv(thetas))?;

    let n = thetas.len() as f64;
    let mid = domain.midpoint();
    let last = run.records.last();
    let summary = json!({
        "iterations": run.records.len(),
        "final_samples": thetas.len(),
        "minimax_estimate": last.map(|l| unit.convert(l.minimax_estimate_nats)),
        "unit": unit.name(),
        "acceptance_rate": last.map(|l| l.acceptance_rate),
        "tau_sq": last.map(|l| l.tau_sq),
        "ks_to_oracle": last.and_then(|l| l.ks_to_oracle),
        "sample_mean": thetas.iter().sum::<f64>() / n,
        "sample_second_moment": thetas.iter().map(|t| t * t).sum::<f64>() / n,
        "mass_below_midpoint": thetas.iter().filter(|&&t| t < mid).count() as f64 / n,
    });
    finish(r, &summary)?;
    Ok(0)
}

fn ks_verify(r: &Resolved) -> Result<u8, CliError> {
    let config = r.theorem_config();
    let report = verify_theorem_with(&config)?;
    let mut csv = String::from("replication,ks\n");
    for (i, d) in report.final_ks.iter().enumerate() {
        let _ = writeln!(csv, "{i},{}", num(*d));
    }
    output::write(&r.out, "final_ks.csv", &csv)?;
    finish(r, &serde_json::to_value(&report).expect("report serializes"))?;
    if report.coverage >= 1.0 - report.alpha {
        Ok(0)
    } else {
        output::warn(
            "ks-verify",
            &format!("coverage {} below 1 - alpha = {}", report.coverage, 1.0 - report.alpha),
        );
        Ok(4)
    }
}

fn jeffreys(r: &Resolved) -> Result<u8, CliError> {
    let s = r.file.jeffreys.clone().unwrap_or_default();
    let grid = GridSpec { grid: s.grid, grid_points: s.grid_points }.interior_points(&r.family);
    let d = r.family.domain();
    for &theta in &grid {
        let info = r.family.fisher_information(theta).map_err(|e| match e {
            refprior::Error::Domain { .. } => CliError::Config(format!(
                "Fisher information at theta = {theta} needs room on both sides; \
                 use grid points strictly inside [{}, {}] ({e})",
                d.lo, d.hi
            )),
            other => other.into(),
        })?;
        if let Some(w) = info.warning {
            output::warn("jeffreys", &w);
        }
    }
    let prior = r.family.jeffreys_weights(&grid)?;
    output::write(&r.out, "prior.csv", &output::prior_csv(&prior))?;
    finish(r, &json!({ "grid_points": grid.len(), "family": r.family.name() }))?;
    Ok(0)
}
