//! Line-based `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a documented
//! default (see [`KEYS`]); unknown keys are rejected so typos never pass
//! silently.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use fdns_core::coefficients::{CoefficientSet, ScenarioPreset};
use fdns_core::config::{GridConfig, McConfig, PicardConfig};
use fdns_core::fields::DomainDescriptor;
use sha2::{Digest, Sha256};

/// A configuration problem, always tied to one key (or to the file itself).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config key `{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.into(),
        message: message.into(),
    }
}

/// Known keys with their defaults and meaning. An empty default means the
/// value is derived from other keys.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("preset", "burgers1d", "zero | constant | burgers1d | taylor-green | taylor-green-nopressure"),
    ("domain", "torus", "torus | free"),
    ("domain.lo", "-4", "free-space box lower corner"),
    ("domain.hi", "4", "free-space box upper corner"),
    ("dimension", "", "spatial dimension (implied by the preset)"),
    ("T", "0.5", "horizon"),
    ("kappa", "0.1", "viscosity"),
    ("amplitude", "0.5", "initial amplitude of burgers1d / taylor-green"),
    ("constant", "0.3,-0.2", "initial value of the constant preset"),
    ("grid.n", "64", "points per axis"),
    ("grid.M", "50", "time intervals"),
    ("mc.particles", "20000", "particles per ensemble"),
    ("mc.dt", "", "Euler step (default T/200)"),
    ("mc.dt_max", "", "largest accepted Euler step (default T/50)"),
    ("mc.h_jac", "1e-4", "drift Jacobian difference step"),
    ("mc.fd_eps", "1e-3", "gradient difference step factor"),
    ("mc.block", "256", "particles per task"),
    ("mc.refine", "4", "evaluation grid refinement per axis for drift and forcing"),
    ("picard.tol", "1e-3", "convergence tolerance"),
    ("picard.max_iter", "30", "iteration cap"),
    ("picard.damping", "1", "relaxation in (0, 1]"),
    ("picard.lambdas", "0,1,5", "weights of the gap diagnostics"),
    ("picard.divergence_factor", "10", "divergence threshold relative to the first gap"),
    ("seed", "1", "master seed"),
    ("validate.error_fraction", "0.05", "sup-error tolerance relative to the solution scale"),
    ("validate.oracle_tol", "1e-3", "agreement of the deterministic oracles"),
    ("validate.se_units", "4", "standard errors in every Monte Carlo tolerance"),
    ("validate.truncation_factor", "2", "multiple of the leading finite-difference truncation term"),
    ("validate.min_particles", "10000", "documented minimum particle count for taylor-green"),
    ("validate.regularity_flatness", "10", "allowed max/median of the regularity table"),
    ("validate.negative_control_factor", "5", "required divergence excess without pressure"),
    ("validate.divergence_fraction", "0.02", "absolute divergence bound as a fraction of 2π amplitude"),
    ("validate.contraction_ratio", "0.8", "largest accepted ratio of successive Picard gaps"),
    ("validate.heat_tolerance", "0.1", "relative tolerance of the heat-limit checks"),
    ("oracle.resolution", "4", "oracle points per field grid point"),
    ("oracle.refine", "4", "oracle time steps per field time interval"),
    ("oracle.mild_tol", "1e-6", "mild-solution iteration tolerance"),
    ("oracle.mild_max_iter", "200", "mild-solution iteration cap"),
    ("gradcheck.t", "0", "start time of the gradient checks"),
    ("gradcheck.gaps", "1e-3,3e-3,1e-2,3e-2,1e-1", "time gaps of the scaling table"),
    ("gradcheck.points", "3", "evaluation points of the scaling table, spread over ±10 widths of the step"),
    ("gradcheck.particles", "20000", "particles per gradient estimate"),
    ("gradcheck.width", "1e-3", "transition width of the smoothed step"),
    ("gradcheck.slope_min", "-0.6", "lower bound of the fitted slope"),
    ("gradcheck.slope_max", "-0.4", "upper bound of the fitted slope"),
    ("gradcheck.step_dt", "1e-3", "Euler step of the scaling table"),
    ("gradcheck.cases", "10", "random (t, s, x, v) cases of the estimator comparison"),
    ("gradcheck.triad_particles", "20000", "particles per estimator comparison"),
    ("forward.particles", "20000", "particles per forward-equation check"),
    ("forward.half_steps", "4", "half width of the centered time difference in Euler steps"),
    ("flowcheck.configs", "20", "random (t, s, r, x) configurations"),
    ("flowcheck.particles", "64", "particles per configuration"),
];

/// Initial-condition family of a run.
#[derive(Debug, Clone, PartialEq)]
pub enum PresetKind {
    Zero,
    Constant,
    Burgers,
    TaylorGreen { pressure: bool },
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    pub preset: PresetKind,
    pub domain: DomainDescriptor,
    pub horizon: f64,
    pub kappa: f64,
    pub amplitude: f64,
    pub constant: Vec<f64>,
    pub grid: GridConfig,
    pub mc: McConfig,
    pub picard: PicardConfig,
    pub seed: u64,
}

fn parse_text(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut raw = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(err(line, format!("line {} is not `key = value`", lineno + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if raw.insert(k.to_string(), v.to_string()).is_some() {
            return Err(err(k, "key given twice"));
        }
    }
    Ok(raw)
}

pub fn read_config(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| err("--config", format!("cannot read {}: {e}", path.display())))
}

/// Splits a `key=value` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| err(s, "override must look like key=value"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| err(key, format!("expected a finite number, got `{v}`")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse::<usize>()
        .map_err(|_| err(key, format!("expected a non-negative integer, got `{v}`")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',').map(|p| parse_f64(key, p.trim())).collect()
}

impl RunConfig {
    /// Parses configuration text; `overrides` are applied on top (same key rules).
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        Self::parse_layers(&[text], overrides)
    }

    /// Later layers override earlier ones; a key may appear once per layer.
    pub fn parse_layers(layers: &[&str], overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut raw = BTreeMap::new();
        for text in layers {
            raw.extend(parse_text(text)?);
        }
        for (k, v) in overrides {
            raw.insert(k.clone(), v.clone());
        }
        Self::from_map(raw)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        Self::parse(&read_config(path)?, overrides)
    }

    fn from_map(raw: BTreeMap<String, String>) -> Result<Self, ConfigError> {
        if let Some(k) = raw.keys().find(|k| !KEYS.iter().any(|(name, _, _)| name == k)) {
            return Err(err(k, "unknown key"));
        }
        let mut values: BTreeMap<String, String> = KEYS
            .iter()
            .map(|(k, d, _)| (k.to_string(), d.to_string()))
            .collect();
        values.extend(raw);
        let get = |k: &str| values[k].as_str();

        let horizon = parse_f64("T", get("T"))?;
        let kappa = parse_f64("kappa", get("kappa"))?;
        let amplitude = parse_f64("amplitude", get("amplitude"))?;
        let constant = parse_list("constant", get("constant"))?;
        let preset = match get("preset") {
            "zero" => PresetKind::Zero,
            "constant" => PresetKind::Constant,
            "burgers1d" => PresetKind::Burgers,
            "taylor-green" => PresetKind::TaylorGreen { pressure: true },
            "taylor-green-nopressure" => PresetKind::TaylorGreen { pressure: false },
            other => return Err(err("preset", format!("unknown preset `{other}`"))),
        };
        let implied = match preset {
            PresetKind::Constant => Some(constant.len()),
            PresetKind::Burgers => Some(1),
            PresetKind::TaylorGreen { .. } => Some(2),
            PresetKind::Zero => None,
        };
        let dim = match (get("dimension"), implied) {
            ("", Some(d)) => d,
            ("", None) => 1,
            (v, _) => parse_usize("dimension", v)?,
        };
        if !(1..=3).contains(&dim) {
            return Err(err("dimension", format!("must be 1, 2 or 3, got {dim}")));
        }
        let domain = match get("domain") {
            "torus" => DomainDescriptor::torus(dim),
            "free" => DomainDescriptor::free_space(
                dim,
                parse_f64("domain.lo", get("domain.lo"))?,
                parse_f64("domain.hi", get("domain.hi"))?,
            ),
            other => return Err(err("domain", format!("expected torus or free, got `{other}`"))),
        };
        let grid = GridConfig {
            n: parse_usize("grid.n", get("grid.n"))?,
            time_steps: parse_usize("grid.M", get("grid.M"))?,
        };
        let mut mc = McConfig::for_horizon(horizon, parse_usize("mc.particles", get("mc.particles"))?);
        if !get("mc.dt").is_empty() {
            mc.dt = parse_f64("mc.dt", get("mc.dt"))?;
        }
        if !get("mc.dt_max").is_empty() {
            mc.dt_max = parse_f64("mc.dt_max", get("mc.dt_max"))?;
        }
        mc.h_jac = parse_f64("mc.h_jac", get("mc.h_jac"))?;
        mc.fd_eps = parse_f64("mc.fd_eps", get("mc.fd_eps"))?;
        mc.block = parse_usize("mc.block", get("mc.block"))?;
        mc.refine = parse_usize("mc.refine", get("mc.refine"))?;
        let picard = PicardConfig {
            tol: parse_f64("picard.tol", get("picard.tol"))?,
            max_iter: parse_usize("picard.max_iter", get("picard.max_iter"))?,
            damping: parse_f64("picard.damping", get("picard.damping"))?,
            lambdas: parse_list("picard.lambdas", get("picard.lambdas"))?,
            divergence_factor: parse_f64("picard.divergence_factor", get("picard.divergence_factor"))?,
        };
        let seed = get("seed")
            .parse::<u64>()
            .map_err(|_| err("seed", format!("expected an unsigned integer, got `{}`", get("seed"))))?;

        // numeric keys that are only read later still have to parse now
        for (k, _, _) in KEYS {
            if ["validate.", "oracle.", "gradcheck.", "forward."].iter().any(|p| k.starts_with(p)) {
                if k.ends_with("gaps") {
                    parse_list(k, &values[*k])?;
                } else {
                    parse_f64(k, &values[*k])?;
                }
            }
            if k.starts_with("flowcheck.")
                || k.ends_with("particles")
                || k.ends_with("max_iter")
                || k.ends_with("cases")
                || k.ends_with("points")
                || k.ends_with("half_steps")
                || *k == "oracle.resolution"
                || *k == "oracle.refine"
            {
                parse_usize(k, &values[*k])?;
            }
        }

        let mut cfg = Self {
            values,
            preset,
            domain,
            horizon,
            kappa,
            amplitude,
            constant,
            grid,
            mc,
            picard,
            seed,
        };
        cfg.check()?;
        cfg.values.insert("dimension".into(), dim.to_string());
        cfg.values.insert("mc.dt".into(), fmt_f64(cfg.mc.dt));
        cfg.values.insert("mc.dt_max".into(), fmt_f64(cfg.mc.dt_max));
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        let map = |key: &'static str| move |e: fdns_core::Error| err(key, e.to_string());
        self.domain.validate().map_err(map("domain"))?;
        if !(self.horizon > 0.0) {
            return Err(err("T", "must be > 0"));
        }
        if !(self.kappa > 0.0) {
            return Err(err("kappa", "must be > 0"));
        }
        if self.grid.n < 4 {
            return Err(err("grid.n", "must be >= 4"));
        }
        if self.grid.time_steps == 0 {
            return Err(err("grid.M", "must be >= 1"));
        }
        if self.mc.particles < 2 {
            return Err(err("mc.particles", "must be >= 2"));
        }
        if !(self.mc.dt > 0.0) || self.mc.dt > self.mc.dt_max * (1.0 + 1e-12) {
            return Err(err("mc.dt", format!("must lie in (0, mc.dt_max = {}]", self.mc.dt_max)));
        }
        let steps = self.horizon / self.mc.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps {
            return Err(err("mc.dt", "must divide T into a whole number of steps"));
        }
        if !(steps.round() as usize).is_multiple_of(self.grid.time_steps) {
            return Err(err(
                "grid.M",
                format!("must divide the {} Euler steps T / mc.dt", steps.round()),
            ));
        }
        if self.mc.refine == 0 {
            return Err(err("mc.refine", "must be >= 1"));
        }
        self.mc.validate().map_err(map("mc.block"))?;
        if !(self.picard.tol > 0.0) {
            return Err(err("picard.tol", "must be > 0"));
        }
        if self.picard.max_iter == 0 {
            return Err(err("picard.max_iter", "must be >= 1"));
        }
        if !(self.picard.damping > 0.0 && self.picard.damping <= 1.0) {
            return Err(err("picard.damping", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Raw resolved value of a known key.
    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.get(key).parse().unwrap_or(f64::NAN)
    }

    pub fn usize(&self, key: &str) -> usize {
        self.get(key).parse().unwrap_or(0)
    }

    pub fn list(&self, key: &str) -> Vec<f64> {
        parse_list(key, self.get(key)).unwrap_or_default()
    }

    /// The preset of this run as an engine preset.
    pub fn scenario_preset(&self) -> ScenarioPreset {
        match self.preset {
            PresetKind::Zero => ScenarioPreset::ZeroAll,
            PresetKind::Constant => ScenarioPreset::ConstantU0(self.constant.clone()),
            PresetKind::Burgers => ScenarioPreset::Burgers1D {
                amplitude: self.amplitude,
            },
            PresetKind::TaylorGreen { pressure } => ScenarioPreset::TaylorGreen2D {
                amplitude: self.amplitude,
                pressure,
            },
        }
    }

    pub fn coefficients(&self) -> Result<CoefficientSet, ConfigError> {
        self.scenario_preset()
            .build(self.domain, self.horizon, self.kappa)
            .map_err(|e| err("preset", e.to_string()))
    }

    /// Every key with its resolved value, sorted by key.
    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Canonical `key = value` text of the resolved configuration.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }

    /// Leading 64 bits of [`hash`](Self::hash).
    pub fn hash_u64(&self) -> u64 {
        let d = Sha256::digest(self.canonical().as_bytes());
        u64::from_be_bytes(d[..8].try_into().unwrap())
    }

    /// Copy with `key` replaced.
    pub fn with(&self, key: &str, value: &str) -> Result<Self, ConfigError> {
        let mut raw = self.values.clone();
        raw.insert(key.into(), value.into());
        for derived in ["dimension", "mc.dt", "mc.dt_max"] {
            if derived != key && (key == "T" || key == "preset" || key == "constant") {
                raw.insert(derived.into(), String::new());
            }
        }
        Self::from_map(raw)
    }
}

/// Shortest decimal that round-trips.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Built-in configuration of a named scenario.
pub fn scenario_config(name: &str) -> Option<&'static str> {
    Some(match name {
        "trivial-constant" => "preset = constant\nconstant = 0.3,-0.2\nT = 0.5\nkappa = 0.1\ngrid.n = 8\ngrid.M = 10\nmc.particles = 64\n",
        "burgers1d" => "preset = burgers1d\namplitude = 0.5\nT = 0.5\nkappa = 0.1\ngrid.n = 64\ngrid.M = 50\nmc.particles = 20000\n",
        "taylor-green" => "preset = taylor-green\namplitude = 0.5\nT = 0.25\nkappa = 0.1\ngrid.n = 32\ngrid.M = 25\nmc.particles = 10000\nmc.dt = 0.0025\n",
        "heat-limit" => "preset = burgers1d\namplitude = 1e-6\nT = 0.5\nkappa = 0.1\ngrid.n = 32\ngrid.M = 20\nmc.particles = 20000\n",
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_and_hash_is_stable() {
        let a = RunConfig::parse("", &[]).unwrap();
        let b = RunConfig::parse("# comment\n\nT = 0.5\n", &[]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.get("mc.dt"), "0.0025");
        assert_eq!(a.get("dimension"), "1");
        assert_eq!(a.mc.dt, 0.5 / 200.0);
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::parse("kapa = 0.1\n", &[]).unwrap_err();
        assert_eq!(e.key, "kapa");
        assert!(e.to_string().contains("kapa"));
    }

    #[test]
    fn bad_values_name_their_key() {
        for (text, key) in [
            ("kappa = -1", "kappa"),
            ("grid.n = x", "grid.n"),
            ("picard.damping = 2", "picard.damping"),
            ("mc.dt = 0.3", "mc.dt"),
            ("grid.M = 7", "grid.M"),
            ("preset = vortex", "preset"),
            ("validate.se_units = four", "validate.se_units"),
            ("T", "T"),
        ] {
            let e = RunConfig::parse(text, &[]).unwrap_err();
            assert_eq!(e.key, key, "{text}: {e}");
        }
    }

    #[test]
    fn overrides_and_derived_keys() {
        let c = RunConfig::parse("preset = taylor-green\nT = 0.25\n", &[("seed".into(), "9".into())]).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.domain.dim, 2);
        assert_eq!(c.mc.dt, 0.25 / 200.0);
        let d = c.with("T", "0.5").unwrap();
        assert_eq!(d.mc.dt, 0.5 / 200.0);
        assert_ne!(c.hash(), d.hash());
    }

    #[test]
    fn scenarios_parse() {
        for name in ["trivial-constant", "burgers1d", "taylor-green", "heat-limit"] {
            let c = RunConfig::parse(scenario_config(name).unwrap(), &[]).unwrap();
            c.coefficients().unwrap();
        }
        assert!(scenario_config("nope").is_none());
    }
}
