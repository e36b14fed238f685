//! Line-based `key = value` run configuration.
//!
//! A config file holds one `key = value` pair per line with dotted keys;
//! `#` starts a comment. Command-line flags are applied after the file, so
//! they win.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qsol_core::balance::FlowMode;
use qsol_core::spectral::{GapMetric, XiPolicy};
use qsol_core::toric::ReflexivePolytope;

use crate::error::ConfigError;

/// Every accepted key with its default and meaning.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "manifold",
        "CP1",
        "preset polytope (CP1, CP2, CP1xCP1, dP6, dP7, dP8)",
    ),
    ("p", "4", "level or level range, e.g. 8, 4..12 or 2,4,8"),
    (
        "mode",
        "verify",
        "catalog | basis | xi | balance | spectrum | verify | report",
    ),
    ("out", "qsol-run", "run directory"),
    (
        "weights",
        "",
        "optional starting log-weights (weights_final.csv layout)",
    ),
    ("quad.tol", "1e-10", "quadrature doubling tolerance"),
    (
        "quad.max_order",
        "16384",
        "cap on quadrature nodes per axis",
    ),
    (
        "solver.tol",
        "1e-12",
        "Newton gradient tolerance for soliton fields",
    ),
    (
        "flow.tol",
        "1e-9",
        "balanced residual at which a flow stops",
    ),
    ("flow.max_iter", "500", "iteration budget of a flow"),
    (
        "flow.mode",
        "t",
        "t (T-iteration) | gradient (Euler gradient flow)",
    ),
    (
        "flow.init",
        "reference",
        "reference (Gram of the reference potential) | uniform",
    ),
    ("spectrum.metric", "reference", "reference | balanced"),
    ("spectrum.xi", "zero", "zero | quantized"),
    (
        "spectrum.count",
        "4",
        "channel eigenvalues reported per level",
    ),
    (
        "spectrum.degree",
        "8",
        "polynomial degree of the Galerkin space",
    ),
    (
        "verify.threshold",
        "1e-8",
        "largest accepted relative residual",
    ),
    (
        "verify.lie_weight_scale",
        "1",
        "multiplier on L_xi weights in the Tuynman check (testing hook)",
    ),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Catalog,
    Basis,
    Xi,
    Balance,
    Spectrum,
    Verify,
    Report,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Catalog,
        Mode::Basis,
        Mode::Xi,
        Mode::Balance,
        Mode::Spectrum,
        Mode::Verify,
        Mode::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Catalog => "catalog",
            Mode::Basis => "basis",
            Mode::Xi => "xi",
            Mode::Balance => "balance",
            Mode::Spectrum => "spectrum",
            Mode::Verify => "verify",
            Mode::Report => "report",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Mode::ALL.iter().map(|m| m.name()).collect();
                format!("expected one of {}", names.join(", "))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowInit {
    Reference,
    Uniform,
}

/// Fully resolved configuration of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub manifold: String,
    pub levels: Vec<u32>,
    pub mode: Mode,
    pub out: PathBuf,
    pub weights: Option<PathBuf>,
    pub quad_tol: f64,
    pub quad_max_order: usize,
    pub solver_tol: f64,
    pub flow_tol: f64,
    pub flow_max_iter: usize,
    pub flow_mode: FlowMode,
    pub flow_init: FlowInit,
    pub spectrum_metric: GapMetric,
    pub spectrum_xi: XiPolicy,
    pub spectrum_count: usize,
    pub spectrum_degree: usize,
    pub verify_threshold: f64,
    pub lie_weight_scale: f64,
    /// Effective value of every key, as text.
    pub echo: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn polytope(&self) -> ReflexivePolytope {
        ReflexivePolytope::preset(&self.manifold).expect("validated when loading")
    }
}

/// Parses an inclusive level list: comma-separated integers or `a..b` ranges.
pub fn parse_levels(text: &str) -> Result<Vec<u32>, ConfigError> {
    let err = |position: usize, reason: &str| ConfigError::Range {
        input: text.to_string(),
        position,
        reason: reason.to_string(),
    };
    let mut levels = Vec::new();
    let mut offset = 0;
    for item in text.split(',') {
        let start = offset + 1 + (item.len() - item.trim_start().len());
        let trimmed = item.trim();
        offset += item.len() + 1;
        if trimmed.is_empty() {
            return Err(err(start, "expected a level"));
        }
        let number = |s: &str, pos: usize| -> Result<u32, ConfigError> {
            let v: u32 = s
                .trim()
                .parse()
                .map_err(|_| err(pos, "expected a positive integer"))?;
            if v == 0 {
                return Err(err(pos, "levels start at 1"));
            }
            Ok(v)
        };
        match trimmed.find("..") {
            None => levels.push(number(trimmed, start)?),
            Some(dots) => {
                let lo = number(&trimmed[..dots], start)?;
                let hi_text = trimmed[dots + 2..]
                    .strip_prefix('=')
                    .unwrap_or(&trimmed[dots + 2..]);
                let hi_pos = start + trimmed.len() - hi_text.len();
                if hi_text.is_empty() {
                    return Err(err(hi_pos, "range needs an upper end"));
                }
                let hi = number(hi_text, hi_pos)?;
                if hi < lo {
                    return Err(err(start, "empty range"));
                }
                levels.extend(lo..=hi);
            }
        }
    }
    levels.sort_unstable();
    levels.dedup();
    Ok(levels)
}

/// The valid key closest to `key`, if any is reasonably close.
pub fn nearest_key(key: &str) -> Option<&'static str> {
    KEYS.iter()
        .map(|k| (strsim::damerau_levenshtein(key, k.0), k.0))
        .filter(|(d, k)| *d <= (k.len() / 2).max(2))
        .min()
        .map(|(_, k)| k)
}

fn unknown(key: &str, line: Option<usize>) -> ConfigError {
    ConfigError::UnknownKey {
        key: key.to_string(),
        suggestion: nearest_key(key).map(str::to_string),
        line,
    }
}

/// Reads `key = value` lines.
pub fn parse_file_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.to_string(),
        })?;
        let key = key.trim();
        if !KEYS.iter().any(|k| k.0 == key) {
            return Err(unknown(key, Some(i + 1)));
        }
        pairs.push((key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Builds the configuration from an optional file followed by flag overrides.
pub fn load_config(
    file: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<RunConfig, ConfigError> {
    let mut values: BTreeMap<String, String> = KEYS
        .iter()
        .map(|k| (k.0.to_string(), k.1.to_string()))
        .collect();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        for (k, v) in parse_file_text(&text)? {
            values.insert(k, v);
        }
    }
    for (k, v) in overrides {
        if !values.contains_key(k) {
            return Err(unknown(k, None));
        }
        values.insert(k.clone(), v.clone());
    }
    resolve(values)
}

fn invalid(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn positive(values: &BTreeMap<String, String>, key: &str) -> Result<f64, ConfigError> {
    let v = &values[key];
    match v.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err(invalid(key, v, "expected a positive number")),
    }
}

fn count(values: &BTreeMap<String, String>, key: &str) -> Result<usize, ConfigError> {
    let v = &values[key];
    match v.parse::<usize>() {
        Ok(x) if x > 0 => Ok(x),
        _ => Err(invalid(key, v, "expected a positive integer")),
    }
}

fn resolve(values: BTreeMap<String, String>) -> Result<RunConfig, ConfigError> {
    let mode_text = &values["mode"];
    let mode: Mode = mode_text
        .parse()
        .map_err(|r: String| invalid("mode", mode_text, r))?;
    let manifold = values["manifold"].clone();
    ReflexivePolytope::preset(&manifold)
        .map_err(|e| invalid("manifold", &manifold, e.to_string()))?;
    let levels = parse_levels(&values["p"])?;
    let pick = |key: &str, options: &[&str]| -> Result<usize, ConfigError> {
        let v = &values[key];
        options
            .iter()
            .position(|o| o == v)
            .ok_or_else(|| invalid(key, v, format!("expected one of {}", options.join(", "))))
    };
    let flow_mode =
        [FlowMode::TIteration, FlowMode::GradientFlow][pick("flow.mode", &["t", "gradient"])?];
    let flow_init =
        [FlowInit::Reference, FlowInit::Uniform][pick("flow.init", &["reference", "uniform"])?];
    let spectrum_metric = [GapMetric::Reference, GapMetric::Balanced]
        [pick("spectrum.metric", &["reference", "balanced"])?];
    let spectrum_xi =
        [XiPolicy::Zero, XiPolicy::Quantized][pick("spectrum.xi", &["zero", "quantized"])?];
    let scale_text = &values["verify.lie_weight_scale"];
    let lie_weight_scale = scale_text
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| invalid("verify.lie_weight_scale", scale_text, "expected a number"))?;
    let weights = Some(values["weights"].clone())
        .filter(|w| !w.is_empty())
        .map(PathBuf::from);
    let out = PathBuf::from(&values["out"]);
    if out.as_os_str().is_empty() {
        return Err(invalid("out", "", "run directory must not be empty"));
    }
    let spectrum_count = count(&values, "spectrum.count")?;
    if spectrum_count < 2 {
        return Err(invalid(
            "spectrum.count",
            &values["spectrum.count"],
            "need at least two eigenvalues",
        ));
    }
    Ok(RunConfig {
        manifold,
        levels,
        mode,
        out,
        weights,
        quad_tol: positive(&values, "quad.tol")?,
        quad_max_order: count(&values, "quad.max_order")?,
        solver_tol: positive(&values, "solver.tol")?,
        flow_tol: positive(&values, "flow.tol")?,
        flow_max_iter: count(&values, "flow.max_iter")?,
        flow_mode,
        flow_init,
        spectrum_metric,
        spectrum_xi,
        spectrum_count,
        spectrum_degree: count(&values, "spectrum.degree")?,
        verify_threshold: positive(&values, "verify.threshold")?,
        lie_weight_scale,
        echo: values,
    })
}

/// Text of the documented defaults, one `key = value  # meaning` per line.
pub fn defaults_text() -> String {
    let width = KEYS.iter().map(|k| k.0.len()).max().unwrap_or(0);
    KEYS.iter()
        .map(|(k, default, doc)| format!("{k:<width$} = {default:<10} # {doc}\n"))
        .collect()
}
