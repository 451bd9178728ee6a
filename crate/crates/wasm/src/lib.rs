//! Browser bindings. Every export takes plain numbers and returns a JSON
//! string, so the page needs no generated type glue beyond `wasm-bindgen`.

use refprior::ba_det::{ba_solve, BaOptions};
use refprior::ba_mcmc::{histogram, run_mcmc_ba_with, McmcRunConfig, Schedule};
use refprior::family::linspace;
use refprior::infomath::mutual_information;
use refprior::ParametricFamily;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn family(name: &str, param: f64) -> Result<ParametricFamily, String> {
    let f = match name {
        "binomial" => ParametricFamily::binomial(param.round().max(1.0) as u32),
        "poisson" => ParametricFamily::poisson(0.0, param, 1e-10),
        "normal" => ParametricFamily::normal(1.0, -param, param, 256),
        other => return Err(format!("unknown family {other}")),
    };
    f.map_err(|e| e.to_string())
}

fn respond(result: Result<Value, String>) -> String {
    result.unwrap_or_else(|e| json!({ "error": e })).to_string()
}

fn capacity_json(name: &str, param: f64, points: usize) -> Result<Value, String> {
    let f = family(name, param)?;
    let d = f.domain();
    let grid = linspace(d.lo, d.hi, points.max(2));
    let r = ba_solve(&f, &grid, &BaOptions::default(), None).map_err(|e| e.to_string())?;
    Ok(json!({
        "grid": r.prior.grid(),
        "weights": r.prior.weights(),
        "capacity_nats": r.capacity,
        "iterations": r.iterations,
        "converged": r.converged,
    }))
}

/// Grid capacity and capacity-achieving prior.
#[wasm_bindgen]
pub fn capacity(family_name: &str, param: f64, grid_points: usize) -> String {
    respond(capacity_json(family_name, param, grid_points))
}

fn jeffreys_json(name: &str, param: f64, points: usize) -> Result<Value, String> {
    let f = family(name, param)?;
    let d = f.domain();
    let n = points.max(2);
    let cell = d.width() / n as f64;
    let grid: Vec<f64> = (0..n).map(|i| d.lo + (i as f64 + 0.5) * cell).collect();
    let optimal = ba_solve(&f, &grid, &BaOptions::default(), None).map_err(|e| e.to_string())?;
    let jeffreys = f.jeffreys_weights(&grid).map_err(|e| e.to_string())?;
    let mi = mutual_information(&jeffreys, &f).map_err(|e| e.to_string())?;
    Ok(json!({
        "grid": grid,
        "optimal": optimal.prior.weights(),
        "jeffreys": jeffreys.weights(),
        "mi_optimal_nats": optimal.capacity,
        "mi_jeffreys_nats": mi,
    }))
}

/// Optimal and Jeffreys priors on the same cell-midpoint grid, with the
/// mutual information each one attains.
#[wasm_bindgen]
pub fn jeffreys_comparison(family_name: &str, param: f64, grid_points: usize) -> String {
    respond(jeffreys_json(family_name, param, grid_points))
}

fn mcmc_json(name: &str, param: f64, iterations: usize, n0: usize, seed: u64, bins: usize) -> Result<Value, String> {
    let f = family(name, param)?;
    let d = f.domain();
    let mut cfg = McmcRunConfig::new(f, iterations);
    cfg.schedule = Schedule { n0, c: Schedule::default().c };
    cfg.seed = seed;
    let mut frames = Vec::new();
    let run = run_mcmc_ba_with(&cfg, |record, samples| {
        let counts: Vec<usize> = histogram(&samples.thetas, d, bins.max(1)).iter().map(|b| b.count).collect();
        frames.push(json!({
            "iter": record.iter,
            "n_samples": record.n_samples,
            "minimax_estimate_nats": record.minimax_estimate_nats,
            "acceptance_rate": record.acceptance_rate,
            "counts": counts,
        }));
    });
    if let Err(failure) = run {
        return Err(failure.error.to_string());
    }
    Ok(json!({ "lo": d.lo, "hi": d.hi, "frames": frames }))
}

/// MCMC Blahut-Arimoto run, returning one sample histogram per iteration.
#[wasm_bindgen]
pub fn mcmc_histograms(family_name: &str, param: f64, iterations: usize, n0: usize, seed: u64, bins: usize) -> String {
    respond(mcmc_json(family_name, param, iterations, n0, seed, bins))
}
