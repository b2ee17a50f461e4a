//! Run configuration documents.
//!
//! A run is described by one TOML document with the sections `population`,
//! `design`, `estimators`, `run` and `output`. Unknown keys are rejected.
//! Bundled presets are available by name through [`preset`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::estimators::{EstimatorId, FactorMode};
use crate::population::{MicrodataSchema, Rule, SplitMethod, SyntheticPopSpec};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown preset `{0}` (available: {list})", list = preset_names().join(", "))]
    UnknownPreset(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub population: PopulationConfig,
    pub design: DesignConfig,
    pub estimators: EstimatorsConfig,
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    /// `A`, `B`, `C`, `D` or `stochastic`.
    pub rule: String,
    #[serde(default)]
    pub split: SplitMethod,
    pub synthetic: Option<SyntheticPopSpec>,
    pub microdata: Option<MicrodataConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrodataConfig {
    pub path: PathBuf,
    pub schema: MicrodataSchema,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKindConfig {
    /// Unclustered web-only sample plus clustered sample with full follow-up.
    Hybrid,
    /// Clustered sample, a fraction of web nonrespondents followed up in
    /// every PSU.
    UnitSubsampling,
    /// Clustered sample, all web nonrespondents followed up in a subsample
    /// of PSUs.
    PsuSubsampling,
    /// Unclustered sample with unit follow-up subsampling.
    Unclustered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub kind: DesignKindConfig,
    /// Unclustered sample size (hybrid and unclustered designs).
    pub unclustered_n: Option<usize>,
    pub n_psus: Option<usize>,
    pub m_per_psu: Option<usize>,
    /// Unit follow-up rate (unit subsampling and unclustered designs).
    pub omega: Option<f64>,
    /// PSUs followed up (PSU subsampling).
    pub psus_followed: Option<usize>,
    /// Group PSUs into balanced variance units under PSU subsampling.
    #[serde(default = "yes")]
    pub variance_units: bool,
}

fn yes() -> bool {
    true
}

/// A factor given either as a mode name or as a fixed number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorSetting {
    Value(f64),
    Name(String),
}

impl FactorSetting {
    pub fn resolve(&self, field: &str) -> Result<FactorMode, ConfigError> {
        match self {
            FactorSetting::Value(v) if (0.0..=1.0).contains(v) => Ok(FactorMode::Fixed(*v)),
            FactorSetting::Value(v) => Err(invalid(field, format!("{v} is outside [0, 1]"))),
            FactorSetting::Name(n) => match n.as_str() {
                "effective_size" => Ok(FactorMode::EffectiveSize),
                "estimated_icc" => Ok(FactorMode::EstimatedIcc),
                other => Err(invalid(
                    field,
                    format!("`{other}` is not one of effective_size, estimated_icc or a number"),
                )),
            },
        }
    }
}

impl Default for FactorSetting {
    fn default() -> Self {
        FactorSetting::Name("effective_size".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EstimatorEntry {
    Name(String),
    Detailed(EstimatorDetail),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorDetail {
    pub id: String,
    pub label: Option<String>,
    pub lambda: Option<FactorSetting>,
    pub kappa: Option<FactorSetting>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorsConfig {
    pub list: Vec<EstimatorEntry>,
    #[serde(default)]
    pub lambda: FactorSetting,
    #[serde(default)]
    pub kappa: FactorSetting,
    /// Intraclass correlation used for effective-size compositing factors.
    #[serde(default = "default_icc")]
    pub planning_icc: f64,
    /// Use the known population size as `N̂` in TDF2.
    #[serde(default)]
    pub known_n: bool,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_icc() -> f64 {
    0.02
}

fn default_confidence() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub id: String,
    pub iterations: usize,
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Write the per-iteration CSV.
    #[serde(default = "yes")]
    pub per_iteration: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            per_iteration: true,
        }
    }
}

/// Label source for the pseudopopulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RuleChoice {
    Rule(Rule),
    Stochastic,
}

/// Fully resolved estimator entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorVariant {
    pub id: EstimatorId,
    pub label: String,
    pub lambda: FactorMode,
    pub kappa: FactorMode,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // microdata paths are relative to the config file
        if let (Some(m), Some(dir)) = (cfg.population.microdata.as_mut(), path.parent()) {
            if m.path.is_relative() {
                m.path = dir.join(&m.path);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn rule(&self) -> Result<RuleChoice, ConfigError> {
        let r = self.population.rule.trim();
        if r.eq_ignore_ascii_case("stochastic") {
            return Ok(RuleChoice::Stochastic);
        }
        Rule::parse(r)
            .map(RuleChoice::Rule)
            .ok_or_else(|| invalid("population.rule", format!("`{r}` is not A, B, C, D or stochastic")))
    }

    pub fn estimator_variants(&self) -> Result<Vec<EstimatorVariant>, ConfigError> {
        let e = &self.estimators;
        let default_lambda = e.lambda.resolve("estimators.lambda")?;
        let default_kappa = e.kappa.resolve("estimators.kappa")?;
        let mut out: Vec<EstimatorVariant> = Vec::new();
        for (i, entry) in e.list.iter().enumerate() {
            let field = format!("estimators.list[{i}]");
            let (name, label, lambda, kappa) = match entry {
                EstimatorEntry::Name(n) => (n.as_str(), None, None, None),
                EstimatorEntry::Detailed(d) => (d.id.as_str(), d.label.clone(), d.lambda.as_ref(), d.kappa.as_ref()),
            };
            let id = EstimatorId::parse(name).ok_or_else(|| invalid(&field, format!("unknown estimator `{name}`")))?;
            let lambda = lambda.map_or(Ok(default_lambda), |s| s.resolve(&field))?;
            let kappa = kappa.map_or(Ok(default_kappa), |s| s.resolve(&field))?;
            let label = label.unwrap_or_else(|| id.name().to_string());
            if out.iter().any(|v| v.label == label) {
                return Err(invalid(&field, format!("duplicate estimator label `{label}`")));
            }
            out.push(EstimatorVariant { id, label, lambda, kappa });
        }
        Ok(out)
    }

    /// Checks the whole document before any computation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.population;
        self.rule()?;
        match (&p.synthetic, &p.microdata) {
            (Some(s), None) => s
                .validate()
                .map_err(|e| invalid("population.synthetic", e.to_string()))?,
            (None, Some(m)) => {
                if m.schema.variables.is_empty() {
                    return Err(invalid("population.microdata.variables", "at least one variable is required"));
                }
            }
            _ => {
                return Err(invalid(
                    "population",
                    "exactly one of [population.synthetic] or [population.microdata] is required",
                ))
            }
        }
        if matches!(self.rule()?, RuleChoice::Stochastic) {
            if let Some(s) = &p.synthetic {
                if !s.propensities {
                    return Err(invalid(
                        "population.synthetic.propensities",
                        "the stochastic rule needs propensities = true",
                    ));
                }
            }
        }

        let d = &self.design;
        let need = |v: Option<usize>, field: &str| -> Result<usize, ConfigError> {
            match v {
                Some(n) if n > 0 => Ok(n),
                Some(_) => Err(invalid(field, "must be positive")),
                None => Err(invalid(field, format!("required for design kind {:?}", d.kind))),
            }
        };
        let omega_ok = |field: &str| -> Result<(), ConfigError> {
            match d.omega {
                Some(w) if w > 0.0 && w <= 1.0 => Ok(()),
                Some(w) => Err(invalid(field, format!("{w} is outside (0, 1]"))),
                None => Err(invalid(field, format!("required for design kind {:?}", d.kind))),
            }
        };
        match d.kind {
            DesignKindConfig::Hybrid => {
                need(d.unclustered_n, "design.unclustered_n")?;
                need(d.n_psus, "design.n_psus")?;
                need(d.m_per_psu, "design.m_per_psu")?;
            }
            DesignKindConfig::UnitSubsampling => {
                need(d.n_psus, "design.n_psus")?;
                need(d.m_per_psu, "design.m_per_psu")?;
                omega_ok("design.omega")?;
            }
            DesignKindConfig::PsuSubsampling => {
                let n = need(d.n_psus, "design.n_psus")?;
                need(d.m_per_psu, "design.m_per_psu")?;
                let f = need(d.psus_followed, "design.psus_followed")?;
                if f > n {
                    return Err(invalid("design.psus_followed", format!("{f} exceeds n_psus = {n}")));
                }
            }
            DesignKindConfig::Unclustered => {
                need(d.unclustered_n, "design.unclustered_n")?;
                omega_ok("design.omega")?;
            }
        }

        let variants = self.estimator_variants()?;
        if variants.is_empty() {
            return Err(invalid("estimators.list", "at least one estimator is required"));
        }
        for v in &variants {
            if v.id.needs_unclustered() && d.kind != DesignKindConfig::Hybrid {
                return Err(invalid(
                    "estimators.list",
                    format!("{} needs the hybrid design, not {:?}", v.id, d.kind),
                ));
            }
            if v.id.needs_psu_subsample() && d.kind != DesignKindConfig::PsuSubsampling {
                return Err(invalid(
                    "estimators.list",
                    format!("{} needs PSU subsampling, not {:?}", v.id, d.kind),
                ));
            }
        }
        let e = &self.estimators;
        if !(0.0..1.0).contains(&e.planning_icc) {
            return Err(invalid("estimators.planning_icc", "must be in [0, 1)"));
        }
        if !(e.confidence > 0.0 && e.confidence < 1.0) {
            return Err(invalid("estimators.confidence", "must be in (0, 1)"));
        }
        if self.run.iterations == 0 {
            return Err(invalid("run.iterations", "must be at least 1"));
        }
        if self.run.id.trim().is_empty() {
            return Err(invalid("run.id", "must not be empty"));
        }
        Ok(())
    }
}

const PRESETS: [(&str, &str); 6] = [
    ("a1a-synthetic", include_str!("../presets/a1a-synthetic.toml")),
    ("b1a-synthetic", include_str!("../presets/b1a-synthetic.toml")),
    ("c1a-synthetic", include_str!("../presets/c1a-synthetic.toml")),
    ("d1a-synthetic", include_str!("../presets/d1a-synthetic.toml")),
    ("b2p-synthetic", include_str!("../presets/b2p-synthetic.toml")),
    ("b2u-synthetic", include_str!("../presets/b2u-synthetic.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    let key = name.trim().to_ascii_lowercase();
    PRESETS.iter().find(|(n, _)| *n == key).map(|(_, t)| *t)
}

pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    let text = preset_text(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    RunConfig::from_toml(text)
}
