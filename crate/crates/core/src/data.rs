//! In-memory joint dataset: one record per subject with covariates, repeated
//! measurements and the event outcome.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::ghsurv::EventRecord;
use crate::longitudinal::Covariates;

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: String,
    pub covariates: Covariates,
    /// Measurement times, in file order.
    pub obs_times: Vec<f64>,
    pub outcomes: Vec<f64>,
    pub event: EventRecord,
}

impl Subject {
    pub fn n_obs(&self) -> usize {
        self.obs_times.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct JointDataset {
    pub subjects: Vec<Subject>,
}

impl JointDataset {
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        let d = Self { subjects };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }

    /// Collects every problem rather than stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        for s in &self.subjects {
            if !seen.insert(s.id.as_str()) {
                problems.push(format!("subject {:?} appears more than once", s.id));
            }
            if let Err(e) = s.event.censoring.validate() {
                problems.push(format!("subject {:?}: {e}", s.id));
                continue;
            }
            if s.obs_times.len() != s.outcomes.len() {
                problems.push(format!("subject {:?}: {} times but {} outcomes", s.id, s.obs_times.len(), s.outcomes.len()));
            }
            let horizon = s.event.censoring.horizon();
            for &t in &s.obs_times {
                if !(t >= 0.0 && t <= horizon) {
                    problems.push(format!(
                        "subject {:?}: measurement time {t} outside [0, {horizon}] (event/censoring time)",
                        s.id
                    ));
                }
            }
            if s.outcomes.iter().any(|y| !y.is_finite()) {
                problems.push(format!("subject {:?}: non-finite outcome", s.id));
            }
            if s.covariates.values().any(|x| !x.is_finite()) {
                problems.push(format!("subject {:?}: non-finite covariate", s.id));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Fraction of subjects whose event time was not observed exactly.
    pub fn censoring_rate(&self) -> f64 {
        if self.subjects.is_empty() {
            return 0.0;
        }
        let c = self
            .subjects
            .iter()
            .filter(|s| !matches!(s.event.censoring, crate::ghsurv::Censoring::Exact(_)))
            .count();
        c as f64 / self.subjects.len() as f64
    }

    /// Values of one covariate across subjects.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        self.subjects
            .iter()
            .map(|s| s.covariates.get(name).copied().ok_or_else(|| Error::shape(format!("subject {:?} lacks covariate {name:?}", s.id))))
            .collect()
    }

    /// Centre and scale the named covariates in place; returns `(mean, sd)` per column.
    pub fn standardize(&mut self, columns: &[String]) -> Result<Vec<(f64, f64)>> {
        let mut out = Vec::with_capacity(columns.len());
        for c in columns {
            let v = self.column(c)?;
            let m = crate::stats::mean(&v);
            let sd = crate::stats::variance(&v).sqrt();
            if !(sd > 0.0) {
                return Err(Error::validation(format!("cannot standardize constant column {c:?}")));
            }
            for s in &mut self.subjects {
                let x = s.covariates.get_mut(c).expect("checked above");
                *x = (*x - m) / sd;
            }
            out.push((m, sd));
        }
        Ok(out)
    }
}
