//! Run configuration: a TOML file with dotted sections, plus `--set` overrides.

use std::path::{Path, PathBuf};

use hardyheat::grid::{Grid, Stencil};
use hardyheat::hardy::{kappa_star, HardyParams};
use hardyheat::perturbation::SeriesSettings;
use hardyheat::verify::{log_spaced, CalibrationSettings};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// The configuration shipped with the binary, selected by `--config default`.
pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    /// Exactly one of `delta` and `kappa` must be given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    pub t_list: Points,
    pub x_list: Points,
    pub y_list: Points,
    pub grid: GridSection,
    pub series: SeriesSettings,
    pub sweep: SweepSection,
    pub mc: McSection,
    pub verify: VerifySection,
    pub calibrate: CalibrateSection,
    pub blowup: BlowupSection,
    pub output: OutputSection,
}

/// A list of points, given explicitly or as a log-spaced range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Points {
    List(Vec<f64>),
    LogSpaced(LogSpaced),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogSpaced {
    pub from: f64,
    pub to: f64,
    pub count: usize,
}

impl Points {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Points::List(v) => v.clone(),
            Points::LogSpaced(r) => log_spaced(r.from, r.to, r.count),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub length: f64,
    pub n: usize,
    /// Defaults to the spacing `length / n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_eps: Option<f64>,
    #[serde(default)]
    pub stencil: Stencil,
}

impl GridSection {
    pub fn build(&self) -> hardyheat::Result<Grid> {
        build_grid(self.length, self.n, self.cutoff_eps)
    }
}

pub fn build_grid(length: f64, n: usize, cutoff_eps: Option<f64>) -> hardyheat::Result<Grid> {
    let g = Grid::new(length, n)?;
    match cutoff_eps {
        Some(c) => g.with_cutoff(c),
        None => Ok(g),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Grid,
    Series,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub route: Route,
    /// Largest accepted `ratio_max / ratio_min` against the perturbed envelope.
    pub max_bracket: f64,
    /// The same for the κ=0 kernel against its envelope.
    pub dirichlet_max_bracket: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub y_halfwidth: f64,
    /// Triples `[t, x0, y_center]`.
    pub points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Checks to run, by name; see `CHECKS`.
    pub checks: Vec<String>,
    /// Grid for the integral identities, which need a longer domain than the sweep.
    pub identity_length: f64,
    pub identity_n: usize,
    /// `[t, x, y]` for the Duhamel, Chapman–Kolmogorov and cross-route checks.
    pub point: [f64; 3],
    pub invariance_tol: f64,
    pub negative_shift: f64,
    pub negative_min_error: f64,
    pub supermedian_tol: f64,
    pub mass_tol: f64,
    pub harmonicity_betas: Vec<f64>,
    pub dead_band: f64,
    pub duhamel_tol: f64,
    pub ck_tol: f64,
    pub series_tol: f64,
    pub mc_max_z: f64,
    pub moment_gamma: f64,
    pub moment_max_bracket: f64,
}

/// Names accepted in `verify.checks`.
pub const CHECKS: &[&str] = &[
    "sweep",
    "dirichlet_sweep",
    "invariance",
    "invariance_negative_control",
    "supermedian",
    "weighted_mass",
    "harmonicity",
    "duhamel",
    "chapman_kolmogorov",
    "cross_route",
    "pd_moment",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    pub beta: f64,
    pub gamma: f64,
    pub length: f64,
    pub n: usize,
    pub quadrature: CalibrationSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlowupSection {
    /// `[t, x, y]`.
    pub point: [f64; 3],
    pub n: usize,
    /// Domain lengths, coarse to fine; each grid uses cutoff `length / n`.
    pub lengths: Vec<f64>,
    pub max_terms: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub format: Format,
}

/// Coupling after resolving `delta` or `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub alpha: f64,
    /// `None` for κ = 0 and for supercritical couplings.
    pub delta: Option<f64>,
    pub kappa: f64,
    pub kappa_star: f64,
}

impl Resolved {
    pub fn supercritical(&self) -> bool {
        self.kappa > self.kappa_star * (1.0 + 1e-13)
    }

    pub fn hardy(&self) -> Option<HardyParams> {
        self.delta.map(|d| HardyParams::from_delta(self.alpha, d).expect("validated"))
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Reads the configuration named by `--config`; `default` selects the shipped file.
pub fn load_text(location: &str) -> Result<String, CliError> {
    if location == "default" {
        return Ok(DEFAULT_CONFIG.to_string());
    }
    let path = Path::new(location);
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))
}

/// Parses `text`, applies `key=value` overrides (dotted keys address sections),
/// and validates the result.
pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut table: toml::Table = text.parse().map_err(|e| usage(format!("invalid config: {e}")))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| usage(format!("invalid config: {}", e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| usage(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(usage(format!("malformed key `{key}`")));
    }
    let mut current = table;
    for part in &parts[..parts.len() - 1] {
        current = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| usage(format!("`{part}` in `{key}` is not a section")))?;
    }
    let last = parts[parts.len() - 1];
    // Setting one way of giving the coupling replaces the other.
    if parts.len() == 1 && (last == "delta" || last == "kappa") {
        current.remove(if last == "delta" { "kappa" } else { "delta" });
    }
    current.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.delta.is_some() == self.kappa.is_some() {
            return Err(usage("exactly one of `delta` and `kappa` must be given"));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(usage(format!("alpha must lie in (0, 2), got {}", self.alpha)));
        }
        for (name, p) in [("t_list", &self.t_list), ("x_list", &self.x_list), ("y_list", &self.y_list)] {
            let v = p.values();
            if v.is_empty() {
                return Err(usage(format!("{name} must not be empty")));
            }
            if let Some(bad) = v.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
                return Err(usage(format!("{name} values must be positive, got {bad}")));
            }
        }
        if let Some(c) = self.verify.checks.iter().find(|c| !CHECKS.contains(&c.as_str())) {
            return Err(usage(format!("unknown check `{c}`; known checks: {}", CHECKS.join(", "))));
        }
        if self.mc.points.is_empty() {
            return Err(usage("mc.points must not be empty"));
        }
        if self.blowup.lengths.is_empty() {
            return Err(usage("blowup.lengths must not be empty"));
        }
        self.grid.build().map_err(|e| usage(format!("grid: {e}")))?;
        self.resolve()?;
        Ok(())
    }

    /// Resolves the coupling; supercritical `kappa` is accepted here and
    /// rejected by every subcommand except `blowup`.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let star = kappa_star(self.alpha);
        match (self.delta, self.kappa) {
            (Some(d), None) => {
                let hp = HardyParams::from_delta(self.alpha, d).map_err(|e| usage(e.to_string()))?;
                Ok(Resolved {
                    alpha: self.alpha,
                    delta: Some(d),
                    kappa: hp.kappa(),
                    kappa_star: star,
                })
            }
            (None, Some(k)) => {
                if !(k >= 0.0 && k.is_finite()) {
                    return Err(usage(format!("kappa must be non-negative, got {k}")));
                }
                let delta = if k == 0.0 || k > star * (1.0 + 1e-13) {
                    None
                } else {
                    Some(HardyParams::from_kappa(self.alpha, k).map_err(|e| usage(e.to_string()))?.delta())
                };
                Ok(Resolved {
                    alpha: self.alpha,
                    delta,
                    kappa: k,
                    kappa_star: star,
                })
            }
            _ => Err(usage("exactly one of `delta` and `kappa` must be given")),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parses() {
        let cfg = parse(DEFAULT_CONFIG, &[]).unwrap();
        assert_eq!(cfg.alpha, 1.0);
        assert_eq!(cfg.x_list.values().len(), 13);
    }

    #[test]
    fn round_trip() {
        let cfg = parse(DEFAULT_CONFIG, &[]).unwrap();
        let again = parse(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn overrides() {
        let cfg = parse(DEFAULT_CONFIG, &["grid.n=256".into(), "kappa=0.1".into(), "t_list=[1.0]".into()]).unwrap();
        assert_eq!(cfg.grid.n, 256);
        assert_eq!(cfg.kappa, Some(0.1));
        assert_eq!(cfg.delta, None);
        assert_eq!(cfg.t_list, Points::List(vec![1.0]));
    }

    #[test]
    fn unknown_key_is_named() {
        match parse(DEFAULT_CONFIG, &["grid.bogus=1".into()]) {
            Err(CliError::Usage(m)) => assert!(m.contains("bogus"), "{m}"),
            other => panic!("expected a usage error, got {other:?}"),
        }
    }

    #[test]
    fn both_couplings_rejected() {
        let text = format!("kappa = 0.1\n{DEFAULT_CONFIG}");
        assert!(parse(&text, &[]).is_err());
    }

    #[test]
    fn supercritical_resolves_without_delta() {
        let cfg = parse(DEFAULT_CONFIG, &["kappa=0.5".into()]).unwrap();
        let r = cfg.resolve().unwrap();
        assert!(r.supercritical());
        assert!(r.delta.is_none());
    }
}
