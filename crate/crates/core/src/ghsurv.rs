//! General-hazard survival sub-model.
//!
//! For subject `i` the hazard is
//!
//! ```text
//! h(t) = h₀(t·exp{A} | θ) · exp{B}
//! A = wᵀκ + α₁(x̃ᵀγ + b₁)         (time scale)
//! B = w̃ᵀκ̃ + sᵀλ + α₀b₀          (hazard scale)
//! ```
//!
//! and the cumulative hazard is available in closed form,
//! `H(t) = H₀(t·exp{A} | θ) · exp{B − A}`. With `A = 0` this is a proportional
//! hazards model; with `A = B` it is an accelerated failure time model.

use serde::{Deserialize, Serialize};

use crate::baseline::{self, BaselineHazard, Family};
use crate::error::{Error, Result};
use crate::longitudinal::{design_row, dot, lookup, Covariates, Term};
use crate::scalar::Scalar;

/// How the survival process is linked to the longitudinal random effects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkStructure {
    /// Random slope and fixed time-dependent effects on the time scale, random
    /// intercept on the hazard scale.
    M1,
    /// Random slope on the time scale, random intercept on the hazard scale.
    M2,
    /// Random intercept on the hazard scale only.
    M3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalSpec {
    /// Cause label; single-cause models use any label.
    pub cause: String,
    pub family: Family,
    /// Covariates acting on the time scale (`w`, coefficients κ).
    pub time_scale: Vec<String>,
    /// Covariates acting on the hazard scale (`w̃`, coefficients κ̃).
    pub hazard_scale: Vec<String>,
    /// Hazard-scale regression terms, possibly spline-expanded (`s`, coefficients λ).
    pub terms: Vec<Term>,
    /// α₀ present: random intercept on the hazard scale.
    pub share_intercept: bool,
    /// α₁ present: random slope on the time scale.
    pub share_slope: bool,
    /// The longitudinal time-dependent block x̃ᵀγ joins the random slope under α₁.
    pub share_gamma: bool,
}

impl SurvivalSpec {
    pub fn new(cause: &str, family: Family) -> Self {
        Self {
            cause: cause.to_string(),
            family,
            time_scale: vec![],
            hazard_scale: vec![],
            terms: vec![],
            share_intercept: false,
            share_slope: false,
            share_gamma: false,
        }
    }

    pub fn with_structure(mut self, s: LinkStructure) -> Self {
        let (i, sl, g) = match s {
            LinkStructure::M1 => (true, true, true),
            LinkStructure::M2 => (true, true, false),
            LinkStructure::M3 => (true, false, false),
        };
        self.share_intercept = i;
        self.share_slope = sl;
        self.share_gamma = g;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.share_gamma && !self.share_slope {
            return Err(Error::shape(format!(
                "cause {:?}: sharing the time-dependent block requires sharing the random slope",
                self.cause
            )));
        }
        for t in &self.terms {
            t.validate()?;
        }
        Ok(())
    }

    pub fn n_lambda(&self) -> usize {
        self.terms.iter().map(Term::width).sum()
    }

    pub fn design(&self, covariates: &Covariates) -> Result<SurvivalDesign> {
        Ok(SurvivalDesign {
            w: self.time_scale.iter().map(|c| lookup(covariates, c)).collect::<Result<_>>()?,
            w_tilde: self.hazard_scale.iter().map(|c| lookup(covariates, c)).collect::<Result<_>>()?,
            s: design_row(&self.terms, covariates)?,
        })
    }

    fn has_time_scale_effects(&self) -> bool {
        !self.time_scale.is_empty() || self.share_slope
    }

    fn has_hazard_scale_effects(&self) -> bool {
        !self.hazard_scale.is_empty() || !self.terms.is_empty() || self.share_intercept
    }

    /// A Weibull-equivalent baseline makes time-scale and hazard-scale effects
    /// indistinguishable. Returns a warning message in that situation.
    pub fn identifiability_warning(&self, baseline: &BaselineHazard) -> Option<String> {
        let weibull = matches!(baseline.family(), Family::Pgw | Family::GenGamma) && baseline.params()[2] == 1.0;
        (weibull && self.has_time_scale_effects() && self.has_hazard_scale_effects()).then(|| {
            format!(
                "cause {:?}: {} baseline with δ = 1 is a Weibull; time-scale and hazard-scale effects are not identifiable",
                self.cause,
                baseline.family()
            )
        })
    }
}

/// Expanded survival covariates of one subject.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurvivalDesign {
    pub w: Vec<f64>,
    pub w_tilde: Vec<f64>,
    pub s: Vec<f64>,
}

/// Parameters of one cause-specific general hazard model.
#[derive(Clone, Debug, PartialEq)]
pub struct CauseParams {
    pub baseline: BaselineHazard,
    pub kappa: Vec<f64>,
    pub kappa_tilde: Vec<f64>,
    pub lambda: Vec<f64>,
    pub alpha0: f64,
    pub alpha1: f64,
}

impl CauseParams {
    pub fn baseline_only(baseline: BaselineHazard, spec: &SurvivalSpec) -> Self {
        Self {
            baseline,
            kappa: vec![0.0; spec.time_scale.len()],
            kappa_tilde: vec![0.0; spec.hazard_scale.len()],
            lambda: vec![0.0; spec.n_lambda()],
            alpha0: 0.0,
            alpha1: 0.0,
        }
    }
}

/// The time-scale and hazard-scale exponents `(A, B)` of one subject.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exponents {
    pub time: f64,
    pub hazard: f64,
}

/// Subject-level quantities shared with the longitudinal model.
#[derive(Clone, Copy, Debug)]
pub struct Shared<'a> {
    /// Longitudinal time-dependent coefficients γ.
    pub gamma: &'a [f64],
    /// The subject's time-dependent covariates x̃.
    pub x_tilde: &'a [f64],
    /// Random effects (b₀, b₁).
    pub b: [f64; 2],
}

impl Shared<'_> {
    pub const NONE: Shared<'static> = Shared { gamma: &[], x_tilde: &[], b: [0.0, 0.0] };
}

pub fn exponents(spec: &SurvivalSpec, p: &CauseParams, shared: Shared<'_>, d: &SurvivalDesign) -> Result<Exponents> {
    if d.w.len() != p.kappa.len() || d.w_tilde.len() != p.kappa_tilde.len() || d.s.len() != p.lambda.len() {
        return Err(Error::shape(format!("cause {:?}: coefficient and design lengths differ", spec.cause)));
    }
    if spec.share_gamma && shared.gamma.len() != shared.x_tilde.len() {
        return Err(Error::shape("gamma and x̃ lengths differ"));
    }
    let mut time = dot(&d.w, &p.kappa);
    if spec.share_slope {
        let tv = if spec.share_gamma { dot(shared.x_tilde, shared.gamma) } else { 0.0 };
        time += p.alpha1 * (tv + shared.b[1]);
    }
    let mut hazard = dot(&d.w_tilde, &p.kappa_tilde) + dot(&d.s, &p.lambda);
    if spec.share_intercept {
        hazard += p.alpha0 * shared.b[0];
    }
    Ok(Exponents { time, hazard })
}

pub fn gh_hazard(spec: &SurvivalSpec, p: &CauseParams, shared: Shared<'_>, d: &SurvivalDesign, t: f64) -> Result<f64> {
    let e = exponents(spec, p, shared, d)?;
    Ok((p.baseline.log_hazard0(t * e.time.exp())? + e.hazard).exp())
}

pub fn gh_cum_hazard(
    spec: &SurvivalSpec,
    p: &CauseParams,
    shared: Shared<'_>,
    d: &SurvivalDesign,
    t: f64,
) -> Result<f64> {
    let e = exponents(spec, p, shared, d)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("cumulative hazard needs finite t >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(p.baseline.cum_hazard0(t * e.time.exp())? * (e.hazard - e.time).exp())
}

/// Observed event information.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Censoring {
    Exact(f64),
    Right(f64),
    Left(f64),
    Interval(f64, f64),
}

impl Censoring {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Censoring::Exact(t) | Censoring::Right(t) | Censoring::Left(t) => {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(Error::domain(format!("event time must be positive and finite, got {t}")));
                }
            }
            Censoring::Interval(l, r) => {
                if !(l > 0.0 && r > l && r.is_finite()) {
                    return Err(Error::domain(format!("interval censoring needs 0 < t_L < t_R, got [{l}, {r}]")));
                }
            }
        }
        Ok(())
    }

    /// Last time the subject is known to be at risk or observed.
    pub fn horizon(&self) -> f64 {
        match *self {
            Censoring::Exact(t) | Censoring::Right(t) | Censoring::Left(t) => t,
            Censoring::Interval(_, r) => r,
        }
    }

    pub fn status_str(&self) -> &'static str {
        match self {
            Censoring::Exact(_) => "exact",
            Censoring::Right(_) => "right",
            Censoring::Left(_) => "left",
            Censoring::Interval(..) => "interval",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub censoring: Censoring,
    pub cause: Option<String>,
}

impl EventRecord {
    pub fn exact(t: f64) -> Self {
        Self { censoring: Censoring::Exact(t), cause: None }
    }

    pub fn right(t: f64) -> Self {
        Self { censoring: Censoring::Right(t), cause: None }
    }

    pub fn with_cause(mut self, cause: &str) -> Self {
        self.cause = Some(cause.to_string());
        self
    }
}

/// `log f_S` for one subject from its exponents, generic over the scalar type.
pub fn log_fs_generic<S: Scalar>(family: Family, theta: &[S], a: S, b: S, c: &Censoring) -> Result<S> {
    let cum = |t: f64| -> Result<S> { Ok(baseline::cum_hazard0(family, theta, a.exp() * t)? * (b - a).exp()) };
    Ok(match *c {
        Censoring::Exact(t) => baseline::log_hazard0(family, theta, a.exp() * t)? + b - cum(t)?,
        Censoring::Right(t) => -cum(t)?,
        Censoring::Left(t) => (-(-cum(t)?).exp_m1()).ln(),
        Censoring::Interval(l, r) => {
            let hl = cum(l)?;
            let hr = cum(r)?;
            if !(hr.value() > hl.value()) {
                return Err(Error::numeric(format!(
                    "interval [{l}, {r}] has no survival mass (H(t_L) = {}, H(t_R) = {})",
                    hl.value(),
                    hr.value()
                )));
            }
            // log(S_L − S_R) = log S_L + log(1 − exp(log S_R − log S_L))
            -hl + (-(hl - hr).exp_m1()).ln()
        }
    })
}

/// Cause-`k` term of a competing-risks contribution: `log h_k(t) − H_k(t)` when
/// the event is from this cause, `−H_k(t)` otherwise.
pub fn cause_term_generic<S: Scalar>(family: Family, theta: &[S], a: S, b: S, t: f64, is_event: bool) -> Result<S> {
    let u = a.exp() * t;
    let cum = baseline::cum_hazard0(family, theta, u)? * (b - a).exp();
    Ok(if is_event { baseline::log_hazard0(family, theta, u)? + b - cum } else { -cum })
}

pub fn log_fs(
    spec: &SurvivalSpec,
    p: &CauseParams,
    shared: Shared<'_>,
    d: &SurvivalDesign,
    rec: &EventRecord,
) -> Result<f64> {
    rec.censoring.validate()?;
    let e = exponents(spec, p, shared, d)?;
    log_fs_generic(spec.family, p.baseline.params(), e.time, e.hazard, &rec.censoring)
}

/// Index of the cause an event record belongs to.
pub fn resolve_cause(specs: &[SurvivalSpec], rec: &EventRecord) -> Result<Option<usize>> {
    match rec.censoring {
        Censoring::Right(_) => Ok(None),
        Censoring::Exact(_) if specs.len() == 1 => Ok(Some(0)),
        Censoring::Exact(_) => {
            let label = rec.cause.as_deref().ok_or_else(|| Error::domain("competing-risks event without a cause label"))?;
            specs
                .iter()
                .position(|s| s.cause == label)
                .map(Some)
                .ok_or_else(|| Error::domain(format!("unknown cause label {label:?}")))
        }
        _ if specs.len() == 1 => Ok(Some(0)),
        _ => Err(Error::domain("competing-risks records must be exact or right-censored")),
    }
}

/// Competing-risks contribution `log h_k(t) − Σ_j H_j(t)` (event of cause `k`)
/// or `−Σ_j H_j(t)` (censored). With a single cause this is [`log_fs`].
pub fn cr_log_fs(
    specs: &[SurvivalSpec],
    params: &[CauseParams],
    shared: Shared<'_>,
    designs: &[SurvivalDesign],
    rec: &EventRecord,
) -> Result<f64> {
    if specs.is_empty() || specs.len() != params.len() || specs.len() != designs.len() {
        return Err(Error::shape("need one spec, parameter set and design per cause"));
    }
    rec.censoring.validate()?;
    if specs.len() == 1 {
        return log_fs(&specs[0], &params[0], shared, &designs[0], rec);
    }
    let k = resolve_cause(specs, rec)?;
    let t = rec.censoring.horizon();
    let mut total = 0.0;
    for (j, ((spec, p), d)) in specs.iter().zip(params).zip(designs).enumerate() {
        let e = exponents(spec, p, shared, d)?;
        total += cause_term_generic(spec.family, p.baseline.params(), e.time, e.hazard, t, k == Some(j))?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_exponential() -> (SurvivalSpec, CauseParams) {
        let spec = SurvivalSpec::new("event", Family::Gamma);
        let p = CauseParams::baseline_only(BaselineHazard::gamma(1.0, 1.0).unwrap(), &spec);
        (spec, p)
    }

    #[test]
    fn contribution_examples() {
        let (spec, p) = unit_exponential();
        let d = SurvivalDesign::default();
        let right = log_fs(&spec, &p, Shared::NONE, &d, &EventRecord::right(2.0)).unwrap();
        assert!((right + 2.0).abs() < 1e-14);
        let exact = log_fs(&spec, &p, Shared::NONE, &d, &EventRecord::exact(2.0)).unwrap();
        assert!((exact + 2.0).abs() < 1e-14);
        let rec = EventRecord { censoring: Censoring::Interval(1.0, 2.0), cause: None };
        let interval = log_fs(&spec, &p, Shared::NONE, &d, &rec).unwrap();
        let want = ((-1.0f64).exp() - (-2.0f64).exp()).ln();
        assert!((interval - want).abs() < 1e-14);
        assert!((want + 1.4586).abs() < 1e-4);
        let rec = EventRecord { censoring: Censoring::Left(2.0), cause: None };
        let left = log_fs(&spec, &p, Shared::NONE, &d, &rec).unwrap();
        assert!((left - (1.0 - (-2.0f64).exp()).ln()).abs() < 1e-14);
    }

    #[test]
    fn tight_interval_is_stable() {
        let (spec, p) = unit_exponential();
        let rec = EventRecord { censoring: Censoring::Interval(1.0, 1.0 + 1e-9), cause: None };
        let v = log_fs(&spec, &p, Shared::NONE, &SurvivalDesign::default(), &rec).unwrap();
        // ≈ log(f(1) · 1e-9)
        assert!((v - (-1.0 + 1e-9f64.ln())).abs() < 1e-6);
    }

    #[test]
    fn invalid_records() {
        let (spec, p) = unit_exponential();
        let d = SurvivalDesign::default();
        let bad = EventRecord { censoring: Censoring::Interval(2.0, 1.0), cause: None };
        assert!(log_fs(&spec, &p, Shared::NONE, &d, &bad).is_err());
        assert!(log_fs(&spec, &p, Shared::NONE, &d, &EventRecord::exact(0.0)).is_err());
    }

    #[test]
    fn zero_modifiers_reduce_to_baseline() {
        let b = BaselineHazard::pgw(1.3, 0.8, 2.0).unwrap();
        let spec = SurvivalSpec::new("x", Family::Pgw).with_structure(LinkStructure::M2);
        let p = CauseParams::baseline_only(b, &spec);
        let d = SurvivalDesign::default();
        for &t in &[0.1, 1.0, 5.0] {
            assert_eq!(gh_hazard(&spec, &p, Shared::NONE, &d, t).unwrap(), b.hazard0(t).unwrap());
            assert_eq!(gh_cum_hazard(&spec, &p, Shared::NONE, &d, t).unwrap(), b.cum_hazard0(t).unwrap());
        }
        assert_eq!(gh_cum_hazard(&spec, &p, Shared::NONE, &d, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn sharing_gamma_requires_slope() {
        let mut s = SurvivalSpec::new("x", Family::LogNormal);
        s.share_gamma = true;
        assert!(s.validate().is_err());
    }

    #[test]
    fn weibull_identifiability_flag() {
        let mut s = SurvivalSpec::new("x", Family::Pgw).with_structure(LinkStructure::M2);
        let weibull = BaselineHazard::pgw(1.0, 1.5, 1.0).unwrap();
        assert!(s.identifiability_warning(&weibull).is_some());
        assert!(s.identifiability_warning(&BaselineHazard::pgw(1.0, 1.5, 2.0).unwrap()).is_none());
        s = s.with_structure(LinkStructure::M3);
        assert!(s.identifiability_warning(&weibull).is_none());
    }

    #[test]
    fn competing_risks_reductions() {
        let (spec, p) = unit_exponential();
        let d = SurvivalDesign::default();
        for rec in [EventRecord::exact(1.3), EventRecord::right(0.7)] {
            let single = cr_log_fs(std::slice::from_ref(&spec), std::slice::from_ref(&p), Shared::NONE, std::slice::from_ref(&d), &rec).unwrap();
            assert_eq!(single, log_fs(&spec, &p, Shared::NONE, &d, &rec).unwrap());
        }
        let mut s2 = spec.clone();
        s2.cause = "other".into();
        let specs = [spec.clone(), s2];
        let two = cr_log_fs(&specs, &[p.clone(), p.clone()], Shared::NONE, &[d.clone(), d.clone()], &EventRecord::right(0.7)).unwrap();
        let one = log_fs(&spec, &p, Shared::NONE, &d, &EventRecord::right(0.7)).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-15);
        let unknown = EventRecord::exact(1.0).with_cause("nope");
        assert!(cr_log_fs(&specs, &[p.clone(), p], Shared::NONE, &[d.clone(), d], &unknown).is_err());
    }
}
