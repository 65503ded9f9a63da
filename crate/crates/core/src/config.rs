//! Line-oriented scenario files: `key = value`, `#` starts a comment, lists
//! are comma separated. Unset keys keep their [`ScenarioConfig::default`]
//! values. Powers may be given linearly or in dB (`<key>_db`).
//!
//! ```text
//! n_antennas = 16
//! coherent_aoas = 10, 18
//! cnr_db = 20
//! grid_start = -25
//! grid_stop = 25
//! grid_step = 1
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ConfigIssue, Error, Result};
use crate::signal::{db_to_linear, ScenarioConfig};

const KEYS: &[&str] = &[
    "n_antennas",
    "n_pulses",
    "n_secondary",
    "theta_target",
    "coherent_aoas",
    "sigma_alpha_sq",
    "sigma_alpha_sq_db",
    "sigma_k_sq",
    "sigma_k_sq_db",
    "phase_offsets",
    "cnr_db",
    "rho_c",
    "sigma_n_sq",
    "sigma_n_sq_db",
    "grid_start",
    "grid_stop",
    "grid_step",
    "m_cap",
    "mismatch_delta_theta",
    "rng_seed",
];

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str, issues: &mut Vec<ConfigIssue>) -> Option<T> {
    match value.parse() {
        Ok(v) => Some(v),
        Err(_) => {
            issues.push(ConfigIssue::new(key, format!("cannot parse '{value}'")));
            None
        }
    }
}

fn parse_list(key: &str, value: &str, issues: &mut Vec<ConfigIssue>) -> Option<Vec<f64>> {
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        out.push(parse_scalar::<f64>(key, item, issues)?);
    }
    Some(out)
}

/// Parses and validates a scenario; every problem is reported, nothing is partially applied.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::default();
    let mut issues = Vec::new();
    let mut seen = BTreeSet::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            issues.push(ConfigIssue::new(
                format!("line {}", lineno + 1),
                format!("expected 'key = value', got '{line}'"),
            ));
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        if !KEYS.contains(&key) {
            issues.push(ConfigIssue::new(key, "unknown key"));
            continue;
        }
        let base = key.strip_suffix("_db").filter(|b| *b != "cnr").unwrap_or(key);
        if !seen.insert(base.to_string()) {
            issues.push(ConfigIssue::new(key, "set more than once"));
            continue;
        }
        match key {
            "n_antennas" => cfg.n_antennas = parse_scalar(key, value, &mut issues).unwrap_or(cfg.n_antennas),
            "n_pulses" => cfg.n_pulses = parse_scalar(key, value, &mut issues).unwrap_or(cfg.n_pulses),
            "n_secondary" => cfg.n_secondary = parse_scalar(key, value, &mut issues).unwrap_or(cfg.n_secondary),
            "m_cap" => cfg.m_cap = parse_scalar(key, value, &mut issues).unwrap_or(cfg.m_cap),
            "rng_seed" => cfg.rng_seed = parse_scalar(key, value, &mut issues).unwrap_or(cfg.rng_seed),
            "theta_target" => cfg.theta_target = parse_scalar(key, value, &mut issues).unwrap_or(cfg.theta_target),
            "cnr_db" => cfg.cnr_db = parse_scalar(key, value, &mut issues).unwrap_or(cfg.cnr_db),
            "rho_c" => cfg.rho_c = parse_scalar(key, value, &mut issues).unwrap_or(cfg.rho_c),
            "grid_start" => cfg.grid.start = parse_scalar(key, value, &mut issues).unwrap_or(cfg.grid.start),
            "grid_stop" => cfg.grid.stop = parse_scalar(key, value, &mut issues).unwrap_or(cfg.grid.stop),
            "grid_step" => cfg.grid.step = parse_scalar(key, value, &mut issues).unwrap_or(cfg.grid.step),
            "mismatch_delta_theta" => {
                cfg.mismatch_delta_theta =
                    parse_scalar(key, value, &mut issues).unwrap_or(cfg.mismatch_delta_theta)
            }
            "sigma_alpha_sq" | "sigma_alpha_sq_db" | "sigma_n_sq" | "sigma_n_sq_db" => {
                if let Some(v) = parse_scalar::<f64>(key, value, &mut issues) {
                    let v = if key.ends_with("_db") { db_to_linear(v) } else { v };
                    if base == "sigma_alpha_sq" {
                        cfg.sigma_alpha_sq = v;
                    } else {
                        cfg.sigma_n_sq = v;
                    }
                }
            }
            "coherent_aoas" => cfg.coherent_aoas = parse_list(key, value, &mut issues).unwrap_or_default(),
            "phase_offsets" => cfg.phase_offsets = parse_list(key, value, &mut issues).unwrap_or_default(),
            "sigma_k_sq" | "sigma_k_sq_db" => {
                let v = parse_list(key, value, &mut issues).unwrap_or_default();
                cfg.sigma_k_sq = if key.ends_with("_db") {
                    v.into_iter().map(db_to_linear).collect()
                } else {
                    v
                };
            }
            _ => unreachable!("key list and match arms agree"),
        }
    }
    if !seen.contains("sigma_k_sq") {
        // coherent signals default to the target power
        cfg.sigma_k_sq = vec![cfg.sigma_alpha_sq; cfg.coherent_aoas.len()];
    }
    if issues.is_empty() {
        issues = cfg.issues();
    }
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(issues))
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Loads and checks a scenario file, returning the config or every violation.
pub fn validate_config(path: &Path) -> std::result::Result<ScenarioConfig, Vec<ConfigIssue>> {
    load_config(path).map_err(|e| match e {
        Error::Config(issues) => issues,
        other => vec![ConfigIssue::new("config", other.to_string())],
    })
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ")
}

/// Serializes a scenario in the file format; parsing the result gives back `cfg`.
pub fn render_config(cfg: &ScenarioConfig) -> String {
    let mut out = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    put("n_antennas", cfg.n_antennas.to_string());
    put("n_pulses", cfg.n_pulses.to_string());
    put("n_secondary", cfg.n_secondary.to_string());
    put("theta_target", format!("{:?}", cfg.theta_target));
    put("coherent_aoas", join(&cfg.coherent_aoas));
    put("sigma_alpha_sq", format!("{:?}", cfg.sigma_alpha_sq));
    put("sigma_k_sq", join(&cfg.sigma_k_sq));
    put("phase_offsets", join(&cfg.phase_offsets));
    put("cnr_db", format!("{:?}", cfg.cnr_db));
    put("rho_c", format!("{:?}", cfg.rho_c));
    put("sigma_n_sq", format!("{:?}", cfg.sigma_n_sq));
    put("grid_start", format!("{:?}", cfg.grid.start));
    put("grid_stop", format!("{:?}", cfg.grid.stop));
    put("grid_step", format!("{:?}", cfg.grid.step));
    put("m_cap", cfg.m_cap.to_string());
    put("mismatch_delta_theta", format!("{:?}", cfg.mismatch_delta_theta));
    put("rng_seed", cfg.rng_seed.to_string());
    out
}
