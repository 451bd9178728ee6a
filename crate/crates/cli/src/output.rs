use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use refprior::ba_mcmc::HistogramBin;
use refprior::PriorGrid;
use serde::Serialize;
use serde_json::json;

use crate::CliError;

/// `x` rounded to 12 significant digits, printed in its shortest form.
pub fn num(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    let mag = rounded.abs();
    if rounded != 0.0 && !(1e-4..1e15).contains(&mag) {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|source| CliError::Io { context: format!("writing {}", path.display()), source })
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|source| CliError::Io { context: format!("creating {}", dir.display()), source })
}

pub fn prior_csv(prior: &PriorGrid) -> String {
    let mut s = String::from("theta,weight\n");
    for (t, w) in prior.grid().iter().zip(prior.weights()) {
        let _ = writeln!(s, "{},{}", num(*t), num(*w));
    }
    s
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{}", num(b.lo), num(b.hi), b.count);
    }
    s
}

pub fn samples_csv(thetas: &[f64]) -> String {
    let mut s = String::from("theta\n");
    for t in thetas {
        let _ = writeln!(s, "{}", num(*t));
    }
    s
}

pub fn json_pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

pub fn warn(command: &str, message: &str) {
    eprintln!("{}", json!({ "level": "warning", "command": command, "message": message }));
}

pub fn report_error(e: &CliError) {
    let mut obj = json!({ "level": "error", "message": e.to_string() });
    if let CliError::Core(refprior::Error::Infeasible { beta, required, cap }) = e {
        obj["beta"] = json!(beta);
        obj["required_samples"] = json!(required);
        obj["sample_cap"] = json!(cap);
    }
    eprintln!("{obj}");
}

pub fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}
