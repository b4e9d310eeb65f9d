//! Run settings. Defaults are overlaid by a `key = value` file, then by flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tracemix::recovery::{MomentTolerance, RecoveryConfig, SearchSettings};
use tracemix::zgrid::{default_l, ArcWidth, GridSpec};
use tracemix::ProblemParams;

use crate::CliError;

/// Every key accepted in a config file or through `--set`.
pub const KEYS: &[&str] = &[
    "n",
    "ell",
    "p",
    "eps",
    "seed",
    "samples",
    "workers",
    "m",
    "dist",
    "traces",
    "out",
    "grid",
    "grid_width",
    "L",
    "grid_points",
    "max_points",
    "delta",
    "eta",
    "gate_noise_factor",
    "coeff_tolerances",
    "scale_floor",
    "alpha_known",
    "m_slack",
    "c",
    "c_prime",
    "validation_abs",
    "validation_sigmas",
    "smallp_budget",
    "weight_grid",
    "margin_abs",
    "margin_sigmas",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Estimate,
    Recover,
    Distinguish,
    OracleCheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Estimate => "estimate",
            Mode::Recover => "recover",
            Mode::Distinguish => "distinguish",
            Mode::OracleCheck => "oracle-check",
        }
    }
}

/// Raw merged settings, kept as text so a manifest can replay them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    /// Parses `key = value` lines. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut out = Settings::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Param(format!("config line {}: expected key = value", lineno + 1)))?;
            out.set(key.trim(), value.trim())?;
        }
        Ok(out)
    }

    /// Reads a config file. A manifest written by an earlier run is also accepted.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        if text.trim_start().starts_with('{') {
            #[derive(Deserialize)]
            struct Replay {
                settings: Settings,
            }
            let replay: Replay = serde_json::from_str(&text)
                .map_err(|e| CliError::Param(format!("{}: not a manifest: {e}", path.display())))?;
            let mut out = Settings::default();
            for (k, v) in replay.settings.0 {
                out.set(&k, &v)?;
            }
            return Ok(out);
        }
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !KEYS.contains(&key) {
            return Err(CliError::Param(format!("unknown setting {key:?}")));
        }
        self.0.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Param(format!("setting {key} = {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    /// Renders the settings back into config-file text.
    pub fn to_text(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridShape {
    Arc,
    Circle,
}

/// Fully resolved configuration for one run.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub params: ProblemParams,
    pub seed: u64,
    pub sample_count: u64,
    pub workers: Option<usize>,
    pub grid_shape: GridShape,
    pub grid: GridSpec,
    pub search: SearchSettings,
    pub validation: MomentTolerance,
    pub smallp_budget: f64,
    pub weight_grid: f64,
    pub margin: MomentTolerance,
    pub dist: Option<PathBuf>,
    pub traces: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Values taken from input files when the settings leave them open.
#[derive(Debug, Clone, Copy, Default)]
pub struct InputHints {
    pub n: Option<usize>,
    pub p: Option<f64>,
    pub ell: Option<usize>,
    pub trace_count: Option<u64>,
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Param(format!("setting {key}: {e}")))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn resolve(mode: Mode, s: &Settings, hints: InputHints) -> Result<Self, CliError> {
        let n = match (s.get::<usize>("n")?, hints.n) {
            (Some(a), Some(b)) if a != b => {
                return Err(CliError::Param(format!("n = {a} but the input has length {b}")));
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(CliError::Param(format!("{} needs n", mode.name()))),
        };
        let p = match (s.get::<f64>("p")?, hints.p) {
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(CliError::Param(format!("{} needs p", mode.name()))),
        };
        let ell = s.get::<usize>("ell")?.or(hints.ell).unwrap_or(2);
        let eps = s.get_or("eps", 0.1)?;
        let params = ProblemParams::new(n, ell, p, eps)?;

        let sample_count = match (s.get::<u64>("samples")?, hints.trace_count) {
            (Some(c), _) => c,
            (None, Some(c)) => c,
            (None, None) => 100_000,
        };
        if sample_count == 0 {
            return Err(CliError::Param("samples must be at least 1".into()));
        }

        let grid_shape = match s.raw("grid").unwrap_or("arc") {
            "arc" => GridShape::Arc,
            "circle" => GridShape::Circle,
            other => return Err(CliError::Param(format!("grid must be arc or circle, got {other:?}"))),
        };
        let width = match s.raw("grid_width").unwrap_or("one_over_l") {
            "one_over_l" => ArcWidth::OneOverL,
            "two_pi_over_l" => ArcWidth::TwoPiOverL,
            other => {
                return Err(CliError::Param(format!(
                    "grid_width must be one_over_l or two_pi_over_l, got {other:?}"
                )))
            }
        };
        let points = s.get_or("grid_points", 65usize)?;
        let max_points = s.get_or("max_points", 257usize)?.max(points);
        let mut grid = match grid_shape {
            GridShape::Circle => GridSpec::full_circle(points)?,
            GridShape::Arc => {
                let l = s.get_or("L", default_l(n, p))?;
                GridSpec::arc_with_points(l, width, points)?
            }
        };
        grid.max_points = max_points;

        let d = SearchSettings::default();
        let alpha_known = match s.raw("alpha_known") {
            None | Some("none") => None,
            Some(_) => s.get::<f64>("alpha_known")?,
        };
        let m_slack = match s.raw("m_slack") {
            None => d.m_slack,
            Some("auto") => None,
            Some(_) => s.get::<u32>("m_slack")?,
        };
        let coeff_tolerances = match s.raw("coeff_tolerances") {
            None => d.coeff_tolerances.clone(),
            Some(raw) => parse_list("coeff_tolerances", raw)?,
        };
        let search = SearchSettings {
            alpha_known,
            m_slack,
            c: s.get_or("c", d.c)?,
            c_prime: s.get_or("c_prime", d.c_prime)?,
            delta: s.get_or("delta", d.delta)?,
            eta: s.get_or("eta", d.eta)?,
            gate_noise_factor: s.get_or("gate_noise_factor", d.gate_noise_factor)?,
            coeff_tolerances,
            scale_floor: s.get_or("scale_floor", d.scale_floor)?,
        };
        search.validate()?;

        let validation = MomentTolerance {
            abs: s.get_or("validation_abs", 1e-9)?,
            sigmas: s.get_or("validation_sigmas", 5.0)?,
        };
        let margin = MomentTolerance {
            abs: s.get_or("margin_abs", 1e-9)?,
            sigmas: s.get_or("margin_sigmas", 5.0)?,
        };
        for (name, tol) in [("validation", &validation), ("margin", &margin)] {
            if !(tol.abs >= 0.0 && tol.sigmas >= 0.0) {
                return Err(CliError::Param(format!("{name} tolerances must be nonnegative")));
            }
        }
        let weight_grid = s.get_or("weight_grid", eps / (4.0 * ell as f64))?;
        let workers = s.get::<usize>("workers")?;
        if workers == Some(0) {
            return Err(CliError::Param("workers must be at least 1".into()));
        }

        Ok(Self {
            mode,
            params,
            seed: s.get_or("seed", 0u64)?,
            sample_count,
            workers,
            grid_shape,
            grid,
            search,
            validation,
            smallp_budget: s.get_or("smallp_budget", 1e-4)?,
            weight_grid,
            margin,
            dist: s.path("dist"),
            traces: s.path("traces"),
            out: s.path("out"),
        })
    }

    pub fn recovery(&self) -> RecoveryConfig {
        RecoveryConfig {
            grid: self.grid,
            sample_count: self.sample_count,
            seed: self.seed,
            search: self.search.clone(),
            validation: self.validation,
            smallp_budget: self.smallp_budget,
        }
    }

    pub fn require_out(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Param(format!("{} needs --out", self.mode.name())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(text: &str) -> Settings {
        Settings::parse(text).unwrap()
    }

    #[test]
    fn parses_comments_and_blank_lines() {
        let s = settings("# run\n n = 8 \n\nell=2 # two strings\n");
        assert_eq!(s.get::<usize>("n").unwrap(), Some(8));
        assert_eq!(s.raw("ell"), Some("2"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        assert!(matches!(Settings::parse("colour = red"), Err(CliError::Param(_))));
        assert!(matches!(Settings::parse("n 8"), Err(CliError::Param(_))));
    }

    #[test]
    fn later_values_win() {
        let mut s = settings("seed = 1");
        s.set("seed", "9").unwrap();
        assert_eq!(s.get::<u64>("seed").unwrap(), Some(9));
    }

    #[test]
    fn text_round_trip() {
        let s = settings("n = 8\np = 0.9\ncoeff_tolerances = 2,3");
        assert_eq!(Settings::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn resolve_defaults() {
        let cfg = ExperimentConfig::resolve(Mode::Recover, &settings("n = 8\np = 0.9"), InputHints::default()).unwrap();
        assert_eq!(cfg.params.ell(), 2);
        assert_eq!(cfg.sample_count, 100_000);
        assert_eq!(cfg.grid_shape, GridShape::Arc);
        assert_eq!(cfg.search, SearchSettings::default());
        assert!((cfg.weight_grid - 0.1 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn resolve_takes_hints_and_checks_conflicts() {
        let hints = InputHints { n: Some(6), p: Some(0.7), ell: None, trace_count: Some(42) };
        let cfg = ExperimentConfig::resolve(Mode::Recover, &settings(""), hints).unwrap();
        assert_eq!((cfg.params.n(), cfg.sample_count), (6, 42));
        assert_eq!(cfg.params.p(), 0.7);
        let err = ExperimentConfig::resolve(Mode::Recover, &settings("n = 5"), hints).unwrap_err();
        assert!(matches!(err, CliError::Param(_)));
    }

    #[test]
    fn resolve_search_overrides() {
        let s = settings("n=8\np=0.9\nm_slack=auto\nalpha_known=0.25\ncoeff_tolerances=1.5, 3\ngrid=circle\ngrid_points=17");
        let cfg = ExperimentConfig::resolve(Mode::Recover, &s, InputHints::default()).unwrap();
        assert_eq!(cfg.search.m_slack, None);
        assert_eq!(cfg.search.alpha_known, Some(0.25));
        assert_eq!(cfg.search.coeff_tolerances, vec![1.5, 3.0]);
        assert_eq!(cfg.grid.max_points, 257);
        assert_eq!(cfg.grid_shape, GridShape::Circle);
    }

    #[test]
    fn missing_required_values() {
        let err = ExperimentConfig::resolve(Mode::Simulate, &settings("n = 8"), InputHints::default()).unwrap_err();
        assert!(err.to_string().contains("needs p"));
        let err = ExperimentConfig::resolve(Mode::Recover, &settings("n=8\np=0.9\nsamples=0"), InputHints::default())
            .unwrap_err();
        assert!(matches!(err, CliError::Param(_)));
    }
}
