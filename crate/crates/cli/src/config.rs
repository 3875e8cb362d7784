//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cgtns::correlators::AnsatzKind;
use cgtns::hamiltonian::DEFAULT_DENSE_LIMIT;
use cgtns::optimizer::PtConfig;
use cgtns::workflow::RefineMethod;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub integrals: Option<PathBuf>,
    /// `None` takes NELEC from the integral file.
    pub electrons: Option<usize>,
    /// `2·Ms`; `None` takes MS2 from the integral file.
    pub two_ms: Option<i32>,
    /// `2·S`; `None` means `S = |Ms|`.
    pub two_s: Option<u32>,
    pub irreps: bool,
    pub ansatz: AnsatzKind,
    pub window: (f64, f64),
    pub selected_si: bool,
    pub seed: u64,
    pub t_min: f64,
    pub t_max: f64,
    pub replicas: usize,
    pub sweeps: u64,
    pub swap_interval: u64,
    pub step_size: f64,
    pub adapt_acceptance: Option<f64>,
    pub refine: RefineMethod,
    pub seed_refine: RefineMethod,
    pub refine_iterations: usize,
    pub refine_tol: f64,
    pub screen: f64,
    pub checkpoint_interval: u64,
    pub dense_limit: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pt = PtConfig::default();
        RunConfig {
            integrals: None,
            electrons: None,
            two_ms: None,
            two_s: None,
            irreps: false,
            ansatz: AnsatzKind::TwoSite,
            window: (0.02, 1.98),
            selected_si: true,
            seed: pt.seed,
            t_min: pt.t_min,
            t_max: pt.t_max,
            replicas: pt.replicas,
            sweeps: pt.sweeps,
            swap_interval: pt.swap_interval,
            step_size: pt.step_size,
            adapt_acceptance: pt.adapt_acceptance,
            refine: RefineMethod::None,
            seed_refine: RefineMethod::Bfgs,
            refine_iterations: 200,
            refine_tol: 1e-7,
            screen: 0.0,
            checkpoint_interval: 0,
            dense_limit: DEFAULT_DENSE_LIMIT,
            out: PathBuf::from("cgtns-run"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| bad(format!("{key}: cannot parse {value:?}")))
}

fn parse_float(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = parse_num(key, value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(format!("{key}: {value} is not finite")))
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn auto<T>(value: &str, parse: impl FnOnce(&str) -> Result<T, ConfigError>) -> Result<Option<T>, ConfigError> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(value).map(Some)
    }
}

/// Parses a half-integer such as `0`, `0.5` or `-1.5` into twice its value.
fn parse_half(key: &str, value: &str) -> Result<i64, ConfigError> {
    let v = parse_float(key, value)?;
    let twice = 2.0 * v;
    if twice.fract() != 0.0 {
        return Err(bad(format!("{key}: {value} is not a multiple of 1/2")));
    }
    Ok(twice as i64)
}

fn format_half(twice: i64) -> String {
    format!("{}", twice as f64 / 2.0)
}

/// Parses `LO,HI`.
pub fn parse_window(value: &str) -> Result<(f64, f64), ConfigError> {
    let (lo, hi) = value
        .split_once(',')
        .ok_or_else(|| bad(format!("window: expected LO,HI, got {value:?}")))?;
    let lo = parse_float("window", lo.trim())?;
    let hi = parse_float("window", hi.trim())?;
    if !(lo < hi) {
        return Err(bad(format!("window: lower bound {lo} must be below upper bound {hi}")));
    }
    Ok((lo, hi))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(bad(format!("line {}: {key} given twice", n + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "integrals" => self.integrals = auto(value, |v| Ok(PathBuf::from(v)))?,
            "electrons" => self.electrons = auto(value, |v| parse_num(key, v))?,
            "ms" => {
                self.two_ms = auto(value, |v| {
                    i32::try_from(parse_half(key, v)?).map_err(|_| bad(format!("ms: {v} out of range")))
                })?
            }
            "s" => {
                self.two_s = auto(value, |v| {
                    u32::try_from(parse_half(key, v)?).map_err(|_| bad(format!("s: {v} must be non-negative")))
                })?
            }
            "irreps" => self.irreps = parse_bool(key, value)?,
            "ansatz" => self.ansatz = value.parse().map_err(|e: cgtns::Error| bad(e.to_string()))?,
            "window" => self.window = parse_window(value)?,
            "selected_si" => self.selected_si = parse_bool(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "pt.t_min" => self.t_min = parse_float(key, value)?,
            "pt.t_max" => self.t_max = parse_float(key, value)?,
            "pt.replicas" => self.replicas = parse_num(key, value)?,
            "pt.sweeps" => self.sweeps = parse_num(key, value)?,
            "pt.swap_interval" => self.swap_interval = parse_num(key, value)?,
            "pt.step_size" => self.step_size = parse_float(key, value)?,
            "pt.adapt_acceptance" => {
                self.adapt_acceptance = if value == "none" { None } else { Some(parse_float(key, value)?) }
            }
            "refine" => self.refine = value.parse().map_err(|e: cgtns::Error| bad(e.to_string()))?,
            "seed_refine" => self.seed_refine = value.parse().map_err(|e: cgtns::Error| bad(e.to_string()))?,
            "refine_iterations" => self.refine_iterations = parse_num(key, value)?,
            "refine_tol" => self.refine_tol = parse_float(key, value)?,
            "screen" => self.screen = parse_float(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = parse_num(key, value)?,
            "dense_limit" => self.dense_limit = parse_num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(bad(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key in canonical order; parsing the output gives back `self`.
    pub fn dump(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("integrals", opt(self.integrals.as_ref().map(|p| p.display().to_string())));
        put("electrons", opt(self.electrons.map(|n| n.to_string())));
        put("ms", opt(self.two_ms.map(|m| format_half(m as i64))));
        put("s", opt(self.two_s.map(|m| format_half(m as i64))));
        put("irreps", self.irreps.to_string());
        put("ansatz", self.ansatz.label().into());
        put("window", format!("{},{}", self.window.0, self.window.1));
        put("selected_si", self.selected_si.to_string());
        put("seed", self.seed.to_string());
        put("pt.t_min", self.t_min.to_string());
        put("pt.t_max", self.t_max.to_string());
        put("pt.replicas", self.replicas.to_string());
        put("pt.sweeps", self.sweeps.to_string());
        put("pt.swap_interval", self.swap_interval.to_string());
        put("pt.step_size", self.step_size.to_string());
        put(
            "pt.adapt_acceptance",
            self.adapt_acceptance.map_or_else(|| "none".into(), |a| a.to_string()),
        );
        put("refine", self.refine.to_string());
        put("seed_refine", self.seed_refine.to_string());
        put("refine_iterations", self.refine_iterations.to_string());
        put("refine_tol", self.refine_tol.to_string());
        put("screen", self.screen.to_string());
        put("checkpoint_interval", self.checkpoint_interval.to_string());
        put("dense_limit", self.dense_limit.to_string());
        put("out", self.out.display().to_string());
        s
    }

    pub fn pt_config(&self) -> PtConfig {
        PtConfig {
            t_min: self.t_min,
            t_max: self.t_max,
            replicas: self.replicas,
            sweeps: self.sweeps,
            swap_interval: self.swap_interval,
            step_size: self.step_size,
            seed: self.seed,
            adapt_acceptance: self.adapt_acceptance,
        }
    }
}
