//! Scenario configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment. Keys:
//!
//! ```text
//! application     = robust | vaccines | abatement | screening   (robust)
//! utility.family  = quadratic | unit          (unit for vaccines, else quadratic)
//! utility.beta    = <f64 > 0>                 (1)
//! types.family    = uniform | explicit        (uniform)
//! types.range     = <lo>, <hi>                (0, 1)
//! types.n         = <usize>                   (101)
//! types.grid      = <f64>, <f64>, ...         (explicit only)
//! types.weights   = <f64>, <f64>, ...         (explicit only; equal if absent)
//! cost            = <f64>                     (required except abatement, screening)
//! mu              = <f64>                     (required)
//! cap             = <f64>                     (1)
//! sign            = positive | negative       (positive)
//! benchmark       = unknown | positive_corr | negative_corr   (unknown)
//! xi_bar          = <f64>                     (absent)
//! cost.gamma      = <f64>                     (abatement only)
//! capacity.Q      = <f64>                     (screening only)
//! ```

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::model::{Benchmark, Scenario, Sign, TypeDistribution, UtilityModel, Violation};

const KEYS: &[&str] = &[
    "application",
    "utility.family",
    "utility.beta",
    "types.family",
    "types.range",
    "types.n",
    "types.grid",
    "types.weights",
    "cost",
    "mu",
    "cap",
    "sign",
    "benchmark",
    "xi_bar",
    "cost.gamma",
    "capacity.Q",
];

/// Malformed configuration: bad syntax, unknown keys or unparseable values.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("key `{key}`: cannot parse `{value}` as {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("cannot read config: {0}")]
    Io(String),
}

/// Either a parse failure or a well-formed config that breaks invariants.
#[derive(Debug, Clone, PartialEq)]
pub enum BuildError {
    Parse(ConfigError),
    Invalid(Vec<Violation>),
}

impl fmt::Display for BuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildError::Parse(e) => write!(f, "{e}"),
            BuildError::Invalid(vs) => {
                write!(f, "invalid scenario:")?;
                for v in vs {
                    write!(f, "\n  {v}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for BuildError {}

impl From<ConfigError> for BuildError {
    fn from(e: ConfigError) -> Self {
        BuildError::Parse(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Application {
    Robust,
    Vaccines,
    Abatement,
    Screening,
}

impl Application {
    pub fn name(&self) -> &'static str {
        match self {
            Application::Robust => "robust",
            Application::Vaccines => "vaccines",
            Application::Abatement => "abatement",
            Application::Screening => "screening",
        }
    }
}

/// Parsed but not yet interpreted key-value pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: "empty key or value".into(),
                });
            }
            if !KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey(k.to_string()));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::Duplicate(k.to_string()));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Overrides or adds a key, as a sweep does.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Sorted `key = value` lines; the basis of the config hash.
    pub fn canonical(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>().map_err(|_| ConfigError::BadValue {
                    key: key.into(),
                    value: v.into(),
                    expected: "a number",
                })
            })
            .transpose()
    }

    fn required_f64(&self, key: &'static str) -> Result<f64, ConfigError> {
        self.f64(key)?.ok_or(ConfigError::Missing(key))
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|x| {
                        x.trim().parse::<f64>().map_err(|_| ConfigError::BadValue {
                            key: key.into(),
                            value: v.into(),
                            expected: "a comma-separated list of numbers",
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    fn choice<T: Copy>(
        &self,
        key: &str,
        options: &[(&str, T)],
        default: T,
        expected: &'static str,
    ) -> Result<T, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => options
                .iter()
                .find(|(name, _)| *name == v)
                .map(|&(_, t)| t)
                .ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    value: v.into(),
                    expected,
                }),
        }
    }

    pub fn application(&self) -> Result<Application, ConfigError> {
        self.choice(
            "application",
            &[
                ("robust", Application::Robust),
                ("vaccines", Application::Vaccines),
                ("abatement", Application::Abatement),
                ("screening", Application::Screening),
            ],
            Application::Robust,
            "robust | vaccines | abatement | screening",
        )
    }

    fn types(&self) -> Result<Result<TypeDistribution, Vec<Violation>>, ConfigError> {
        let family = self.choice(
            "types.family",
            &[("uniform", false), ("explicit", true)],
            false,
            "uniform | explicit",
        )?;
        if family {
            let grid = self
                .list("types.grid")?
                .ok_or(ConfigError::Missing("types.grid"))?;
            let weights = match self.list("types.weights")? {
                Some(w) => w,
                None => vec![1.0 / grid.len().max(1) as f64; grid.len()],
            };
            let t = TypeDistribution::new_unchecked(grid, weights);
            let v = t.violations();
            return Ok(if v.is_empty() { Ok(t) } else { Err(v) });
        }
        let range = self.list("types.range")?.unwrap_or_else(|| vec![0.0, 1.0]);
        if range.len() != 2 {
            return Err(ConfigError::BadValue {
                key: "types.range".into(),
                value: self.get("types.range").unwrap_or_default().into(),
                expected: "`lo, hi`",
            });
        }
        let n = match self.get("types.n") {
            None => 101,
            Some(v) => v.parse::<usize>().map_err(|_| ConfigError::BadValue {
                key: "types.n".into(),
                value: v.into(),
                expected: "a positive integer",
            })?,
        };
        let t = TypeDistribution::uniform_unchecked(range[0], range[1], n);
        let v = t.violations();
        Ok(if v.is_empty() { Ok(t) } else { Err(v) })
    }

    /// Interprets the entries, then validates the scenario and the
    /// application's own parameters.
    pub fn build(&self) -> Result<RunConfig, BuildError> {
        let application = self.application()?;
        let default_family = if application == Application::Vaccines {
            "unit"
        } else {
            "quadratic"
        };
        let family = self.get("utility.family").unwrap_or(default_family);
        let utility = match family {
            "quadratic" => UtilityModel::Quadratic {
                beta: self.f64("utility.beta")?.unwrap_or(1.0),
            },
            "unit" => UtilityModel::LinearUnitDemand,
            other => {
                return Err(ConfigError::BadValue {
                    key: "utility.family".into(),
                    value: other.into(),
                    expected: "quadratic | unit",
                }
                .into())
            }
        };
        let types = self.types()?;
        let cost = match application {
            Application::Robust | Application::Vaccines => self.required_f64("cost")?,
            Application::Abatement | Application::Screening => self.f64("cost")?.unwrap_or(1.0),
        };
        let mu = self.required_f64("mu")?;
        let cap = self.f64("cap")?.unwrap_or(1.0);
        let sign = self.choice(
            "sign",
            &[("positive", Sign::Positive), ("negative", Sign::Negative)],
            Sign::Positive,
            "positive | negative",
        )?;
        let benchmark = self.choice(
            "benchmark",
            &[
                ("unknown", Benchmark::Unknown),
                ("positive_corr", Benchmark::PositiveCorr),
                ("negative_corr", Benchmark::NegativeCorr),
            ],
            Benchmark::Unknown,
            "unknown | positive_corr | negative_corr",
        )?;
        let xi_bar = self.f64("xi_bar")?;
        let gamma = self.f64("cost.gamma")?;
        let capacity = self.f64("capacity.Q")?;

        let (types, mut violations) = match types {
            Ok(t) => (t, Vec::new()),
            // placeholder keeps the remaining checks running
            Err(v) => (TypeDistribution::new_unchecked(vec![0.0], vec![1.0]), v),
        };
        let scenario = Scenario {
            utility,
            types,
            cost,
            mu,
            cap,
            sign,
            benchmark,
            xi_bar,
        };
        let types_failed = !violations.is_empty();
        violations.extend(
            scenario
                .validate()
                .into_iter()
                .filter(|v| !(types_failed && v.field.starts_with("types"))),
        );
        match application {
            Application::Robust => {
                if !scenario.utility.is_strictly_concave() {
                    violations.push(Violation::new(
                        "utility.family",
                        "unit demand is only supported by the vaccines application",
                    ));
                }
            }
            Application::Vaccines => {
                if scenario.utility != UtilityModel::LinearUnitDemand {
                    violations.push(Violation::new(
                        "utility.family",
                        "vaccines require unit demand",
                    ));
                }
                if scenario.sign != Sign::Positive {
                    violations.push(Violation::new(
                        "sign",
                        "vaccines require a positive externality",
                    ));
                }
            }
            Application::Abatement => match gamma {
                Some(g) if g.is_finite() && g > 0.0 => {}
                Some(_) => violations.push(Violation::new("cost.gamma", "must be finite and > 0")),
                None => return Err(ConfigError::Missing("cost.gamma").into()),
            },
            Application::Screening => match capacity {
                Some(q) if q > 0.0 && q < 1.0 => {}
                Some(_) => violations.push(Violation::new("capacity.Q", "must lie in (0, 1)")),
                None => return Err(ConfigError::Missing("capacity.Q").into()),
            },
        }
        if application != Application::Abatement && gamma.is_some() {
            violations.push(Violation::new(
                "cost.gamma",
                "only used by the abatement application",
            ));
        }
        if application != Application::Screening && capacity.is_some() {
            violations.push(Violation::new(
                "capacity.Q",
                "only used by the screening application",
            ));
        }
        if !violations.is_empty() {
            return Err(BuildError::Invalid(violations));
        }
        Ok(RunConfig {
            application,
            scenario,
            gamma,
            capacity,
        })
    }
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub application: Application,
    pub scenario: Scenario,
    pub gamma: Option<f64>,
    pub capacity: Option<f64>,
}
