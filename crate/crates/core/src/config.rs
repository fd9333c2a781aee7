//! Declarative model and scenario documents (TOML).
//!
//! A model document has the sections `[longitudinal]`, one or more
//! `[[survival]]` tables, and optional `[priors]`, `[sampler]` and `[data]`.
//! Unknown keys are rejected everywhere.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::baseline::Family;
use crate::data::JointDataset;
use crate::error::{Error, Result};
use crate::ghsurv::{LinkStructure, SurvivalSpec};
use crate::longitudinal::{default_breakpoints, LongitudinalSpec, OutcomeFamily, Term, TimeBasis};
use crate::model::{Layout, ModelSpec, ParameterVector};
use crate::priors::PriorConfig;
use crate::sampler::SamplerConfig;

fn default_degree() -> usize {
    3
}

fn default_interior() -> usize {
    1
}

fn default_cause() -> String {
    "event".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplineConfig {
    pub column: String,
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Distinct breakpoints including both boundary knots. When absent they
    /// are placed at the data range and its quantiles.
    #[serde(default)]
    pub knots: Option<Vec<f64>>,
    #[serde(default = "default_interior")]
    pub interior_knots: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongitudinalConfig {
    #[serde(default)]
    pub family: OutcomeFamily,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub splines: Vec<SplineConfig>,
    #[serde(default)]
    pub time_varying: Vec<String>,
    #[serde(default)]
    pub p1: TimeBasis,
    #[serde(default)]
    pub p2: TimeBasis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvivalConfig {
    #[serde(default = "default_cause")]
    pub cause: String,
    pub family: Family,
    /// Link structure; the individual `share_*` flags override it.
    #[serde(default)]
    pub structure: Option<LinkStructure>,
    #[serde(default)]
    pub share_intercept: Option<bool>,
    #[serde(default)]
    pub share_slope: Option<bool>,
    #[serde(default)]
    pub share_gamma: Option<bool>,
    #[serde(default)]
    pub time_scale: Vec<String>,
    #[serde(default)]
    pub hazard_scale: Vec<String>,
    /// Hazard-scale regressors entering linearly (coefficients λ).
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub splines: Vec<SplineConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Covariates to centre and scale before fitting.
    #[serde(default)]
    pub standardize: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub longitudinal: LongitudinalConfig,
    pub survival: Vec<SurvivalConfig>,
    #[serde(default)]
    pub priors: PriorConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub data: DataConfig,
}

pub(crate) fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Validation(vec![format!("{what}: {}", e.message())]))
}

fn spline_terms(splines: &[SplineConfig], data: Option<&JointDataset>) -> Result<Vec<Term>> {
    splines
        .iter()
        .map(|s| {
            let knots = match (&s.knots, data) {
                (Some(k), _) => k.clone(),
                (None, Some(d)) => default_breakpoints(&d.column(&s.column)?, s.interior_knots)?,
                (None, None) => {
                    return Err(Error::validation(format!("spline on {:?} needs explicit knots here", s.column)));
                }
            };
            Ok(Term::bspline(&s.column, s.degree, knots))
        })
        .collect()
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = parse_toml(text, "model config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::validation(format!("cannot serialise model config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.survival.is_empty() {
            problems.push("at least one [[survival]] table is required".to_string());
        }
        for s in &self.survival {
            if s.structure.is_none() && s.share_intercept.is_none() && s.share_slope.is_none() && s.share_gamma.is_none()
            {
                log::debug!("cause {:?} has no link to the longitudinal process", s.cause);
            }
        }
        if let Err(Error::Validation(p)) = self.priors.validate() {
            problems.extend(p);
        }
        if let Err(Error::Validation(p)) = self.sampler.validate() {
            problems.extend(p);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Build the model. `data` supplies default spline knots; pass `None`
    /// when every spline has explicit knots.
    pub fn to_spec(&self, data: Option<&JointDataset>) -> Result<ModelSpec> {
        let l = &self.longitudinal;
        let mut terms: Vec<Term> = l.covariates.iter().map(|c| Term::raw(c)).collect();
        terms.extend(spline_terms(&l.splines, data)?);
        let mut longitudinal = LongitudinalSpec::new(terms, l.time_varying.clone(), l.family)?;
        longitudinal.p1 = l.p1;
        longitudinal.p2 = l.p2;
        let causes = self
            .survival
            .iter()
            .map(|s| {
                let mut spec = SurvivalSpec::new(&s.cause, s.family);
                if let Some(st) = s.structure {
                    spec = spec.with_structure(st);
                }
                spec.share_intercept = s.share_intercept.unwrap_or(spec.share_intercept);
                spec.share_slope = s.share_slope.unwrap_or(spec.share_slope);
                spec.share_gamma = s.share_gamma.unwrap_or(spec.share_gamma);
                spec.time_scale = s.time_scale.clone();
                spec.hazard_scale = s.hazard_scale.clone();
                spec.terms = s.covariates.iter().map(|c| Term::raw(c)).collect();
                spec.terms.extend(spline_terms(&s.splines, data)?);
                Ok(spec)
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = ModelSpec { longitudinal, causes, priors: self.priors.clone() };
        spec.validate()?;
        Ok(spec)
    }

    /// Override the link structure of every cause.
    pub fn with_structure(mut self, s: LinkStructure) -> Self {
        for c in &mut self.survival {
            c.structure = Some(s);
            c.share_intercept = None;
            c.share_slope = None;
            c.share_gamma = None;
        }
        self
    }
}

/// Visit schedule for longitudinal measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Schedule {
    /// Visits at 0, Δ, 2Δ, … ; Δ defaults to a fifth of the median event time.
    Equidistant {
        #[serde(default)]
        delta: Option<f64>,
    },
    /// Visits separated by exponential gaps with the given rate.
    Exponential { rate: f64 },
    /// Periodic visits plus additional exponential-gap visits.
    Mixed {
        #[serde(default)]
        delta: Option<f64>,
        rate: f64,
    },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Equidistant { delta: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensoringConfig {
    /// Calibrate the administrative time to this censoring proportion.
    #[serde(default)]
    pub target: Option<f64>,
    /// Fixed administrative censoring time (ignored when `target` is set).
    #[serde(default)]
    pub admin_time: Option<f64>,
    /// Rate of additional exponential random censoring.
    #[serde(default)]
    pub random_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Link structure used when fitting, if it differs from the generating one.
    #[serde(default)]
    pub fit_structure: Option<LinkStructure>,
    pub model: ModelConfig,
    /// True values keyed by parameter name (random effects excluded).
    pub truth: BTreeMap<String, f64>,
    #[serde(default)]
    pub censoring: CensoringConfig,
    #[serde(default)]
    pub schedule: Schedule,
}

const SHIPPED: [(&str, &str); 4] = [
    ("scenario0", include_str!("../scenarios/scenario0.toml")),
    ("scenario1", include_str!("../scenarios/scenario1.toml")),
    ("scenario2", include_str!("../scenarios/scenario2.toml")),
    ("scenario3", include_str!("../scenarios/scenario3.toml")),
];

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = parse_toml(text, "scenario config")?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::validation(format!("cannot serialise scenario: {e}")))
    }

    /// One of the scenarios shipped with the library: `0`–`3` or `scenarioK`.
    pub fn builtin(name: &str) -> Result<Self> {
        let key = if name.len() == 1 { format!("scenario{name}") } else { name.to_string() };
        let text = SHIPPED
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::validation(format!("unknown scenario {name:?}; shipped: 0, 1, 2, 3")))?;
        Self::from_toml(text)
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        SHIPPED.iter().map(|(k, _)| *k)
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.n == 0 {
            p.push("n must be at least 1".to_string());
        }
        let c = &self.censoring;
        if let Some(t) = c.target {
            if !(t > 0.0 && t < 1.0) {
                p.push(format!("censoring.target must lie in (0, 1), got {t}"));
            }
        } else {
            match c.admin_time {
                Some(a) if a > 0.0 && a.is_finite() => {}
                Some(a) => p.push(format!("censoring.admin_time must be positive, got {a}")),
                None => p.push("censoring needs either target or admin_time".into()),
            }
        }
        if !(c.random_rate >= 0.0 && c.random_rate.is_finite()) {
            p.push(format!("censoring.random_rate must be non-negative, got {}", c.random_rate));
        }
        match self.schedule {
            Schedule::Equidistant { delta: Some(d) } | Schedule::Mixed { delta: Some(d), .. } if !(d > 0.0) => {
                p.push(format!("schedule.delta must be positive, got {d}"))
            }
            Schedule::Exponential { rate } | Schedule::Mixed { rate, .. } if !(rate > 0.0 && rate.is_finite()) => {
                p.push(format!("schedule.rate must be positive, got {rate}"))
            }
            _ => {}
        }
        if let Err(Error::Validation(v)) = self.model.validate() {
            p.extend(v.into_iter().map(|m| format!("model: {m}")));
        }
        if p.is_empty() {
            if let Err(e) = self.truth_parameters() {
                p.push(e.to_string());
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }

    /// The generating model; splines must carry explicit knots.
    pub fn generating_spec(&self) -> Result<ModelSpec> {
        self.model.to_spec(None)
    }

    /// The model configuration used to fit data from this scenario.
    pub fn fit_config(&self) -> ModelConfig {
        match self.fit_structure {
            Some(s) => self.model.clone().with_structure(s),
            None => self.model.clone(),
        }
    }

    /// Truth values in layout order, without random effects.
    pub fn truth_parameters(&self) -> Result<ParameterVector> {
        let spec = self.generating_spec()?;
        let layout = Layout::new(&spec, 0);
        let names = layout.names(&spec, &[]);
        let missing: Vec<&String> = names.iter().filter(|n| !self.truth.contains_key(*n)).collect();
        let unknown: Vec<&String> = self.truth.keys().filter(|k| !names.contains(k)).collect();
        if !missing.is_empty() || !unknown.is_empty() {
            let mut p = Vec::new();
            if !missing.is_empty() {
                p.push(format!("truth is missing {missing:?}"));
            }
            if !unknown.is_empty() {
                p.push(format!("truth has unknown keys {unknown:?}"));
            }
            return Err(Error::Validation(p));
        }
        let flat: Vec<f64> = names.iter().map(|n| self.truth[n]).collect();
        ParameterVector::unpack(&spec, &layout, &flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_scenarios_parse() {
        for name in ScenarioConfig::builtin_names() {
            let s = ScenarioConfig::builtin(name).unwrap();
            assert!(s.n > 0);
            s.truth_parameters().unwrap();
        }
        assert_eq!(ScenarioConfig::builtin("0").unwrap().fit_structure, Some(LinkStructure::M3));
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = "[longitudinal]\ncovariates = []\ncolour = 1\n[[survival]]\nfamily = \"pgw\"\n";
        let e = ModelConfig::from_toml(text).unwrap_err();
        assert!(e.to_string().contains("colour"), "{e}");
        let text = "[longitudinal]\n[[survival]]\nfamily = \"pgw\"\n[priors]\nbeta_var = -1.0\n";
        assert!(ModelConfig::from_toml(text).unwrap_err().is_validation());
    }

    #[test]
    fn zero_subjects_rejected() {
        let mut s = ScenarioConfig::builtin("1").unwrap();
        s.n = 0;
        assert!(ScenarioConfig::from_toml(&s.to_toml().unwrap()).unwrap_err().is_validation());
    }

    #[test]
    fn structure_override() {
        let s = ScenarioConfig::builtin("1").unwrap();
        let fit = s.model.clone().with_structure(LinkStructure::M3).to_spec(None).unwrap();
        assert!(fit.causes[0].share_intercept && !fit.causes[0].share_slope);
    }
}
