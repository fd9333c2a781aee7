//! Longitudinal sub-model: a generalised linear mixed model with random
//! intercept and slope.
//!
//! The linear predictor of subject `i` at time `t` is
//!
//! ```text
//! β̃₀ + sᵢᵀβ + (x̃ᵢᵀγ)·P₁(t) + b₀ᵢ + (β̃₁ + b₁ᵢ)·P₂(t)
//! ```
//!
//! where `sᵢ` stacks the (possibly spline-expanded) covariate terms and `x̃ᵢ`
//! is the subset of covariates with a time-dependent effect.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{self, LN_2PI};

pub type Covariates = BTreeMap<String, f64>;

/// Cox–de Boor B-spline basis on a clamped knot vector.
///
/// `breakpoints` are the distinct, strictly increasing knots (boundary knots
/// included); the boundary knots are repeated `degree` extra times internally.
/// Returns `breakpoints.len() - 1 + degree` values.
pub fn bspline_basis(x: f64, degree: usize, breakpoints: &[f64]) -> Result<Vec<f64>> {
    if degree < 1 {
        return Err(Error::domain("spline degree must be at least 1"));
    }
    validate_breakpoints(breakpoints)?;
    let (lo, hi) = (breakpoints[0], breakpoints[breakpoints.len() - 1]);
    if !(x >= lo && x <= hi) {
        return Err(Error::domain(format!("x = {x} lies outside the knot span [{lo}, {hi}]")));
    }
    let mut knots = Vec::with_capacity(breakpoints.len() + 2 * degree);
    knots.extend(std::iter::repeat_n(lo, degree));
    knots.extend_from_slice(breakpoints);
    knots.extend(std::iter::repeat_n(hi, degree));
    let n_basis = knots.len() - degree - 1;

    // span index with knots[span] <= x < knots[span + 1]; the right end is closed
    let span = if x >= hi {
        knots.len() - degree - 2
    } else {
        knots.partition_point(|&k| k <= x) - 1
    };

    // triangular Cox–de Boor on the degree + 1 non-zero functions
    let mut local = vec![0.0; degree + 1];
    local[0] = 1.0;
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { local[r] / denom };
            local[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        local[j] = saved;
    }
    let mut out = vec![0.0; n_basis];
    for (r, v) in local.into_iter().enumerate() {
        out[span - degree + r] = v;
    }
    Ok(out)
}

fn validate_breakpoints(b: &[f64]) -> Result<()> {
    if b.len() < 2 {
        return Err(Error::domain("a spline needs at least two knots"));
    }
    if b.iter().any(|k| !k.is_finite()) || b.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("spline knots must be finite and strictly increasing"));
    }
    Ok(())
}

/// Boundary knots at the data range, interior knots at empirical quantiles.
pub fn default_breakpoints(values: &[f64], n_interior: usize) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < 2 {
        return Err(Error::domain("need at least two finite values to place knots"));
    }
    v.sort_by(f64::total_cmp);
    let mut out = vec![v[0]];
    for k in 1..=n_interior {
        out.push(crate::stats::quantile_sorted(&v, k as f64 / (n_interior + 1) as f64));
    }
    out.push(v[v.len() - 1]);
    out.dedup_by(|a, b| *a <= *b);
    validate_breakpoints(&out)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expansion {
    Raw,
    /// B-spline with the first basis function dropped so the block is not
    /// collinear with an intercept.
    BSpline { degree: usize, breakpoints: Vec<f64> },
}

/// One covariate entering a regression block, either linearly or through a
/// spline expansion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub column: String,
    pub expansion: Expansion,
}

impl Term {
    pub fn raw(column: &str) -> Self {
        Self { column: column.to_string(), expansion: Expansion::Raw }
    }

    pub fn bspline(column: &str, degree: usize, breakpoints: Vec<f64>) -> Self {
        Self { column: column.to_string(), expansion: Expansion::BSpline { degree, breakpoints } }
    }

    pub fn width(&self) -> usize {
        match &self.expansion {
            Expansion::Raw => 1,
            Expansion::BSpline { degree, breakpoints } => breakpoints.len() - 2 + degree,
        }
    }

    pub fn is_spline(&self) -> bool {
        matches!(self.expansion, Expansion::BSpline { .. })
    }

    pub fn spline_degree(&self) -> Option<usize> {
        match self.expansion {
            Expansion::BSpline { degree, .. } => Some(degree),
            Expansion::Raw => None,
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        match &self.expansion {
            Expansion::Raw => vec![self.column.clone()],
            Expansion::BSpline { .. } => (2..=self.width() + 1).map(|k| format!("{}:bs{k}", self.column)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Expansion::BSpline { degree, breakpoints } = &self.expansion {
            if *degree < 1 {
                return Err(Error::domain(format!("spline on {} needs degree >= 1", self.column)));
            }
            validate_breakpoints(breakpoints)?;
        }
        Ok(())
    }

    pub fn expand_into(&self, x: f64, out: &mut Vec<f64>) -> Result<()> {
        match &self.expansion {
            Expansion::Raw => out.push(x),
            Expansion::BSpline { degree, breakpoints } => {
                let basis = bspline_basis(x, *degree, breakpoints)
                    .map_err(|e| Error::domain(format!("covariate {}: {e}", self.column)))?;
                out.extend_from_slice(&basis[1..]);
            }
        }
        Ok(())
    }
}

/// Expand a list of terms for one subject's covariates.
pub fn design_row(terms: &[Term], covariates: &Covariates) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(terms.iter().map(Term::width).sum());
    for term in terms {
        let x = lookup(covariates, &term.column)?;
        term.expand_into(x, &mut row)?;
    }
    Ok(row)
}

pub(crate) fn lookup(covariates: &Covariates, column: &str) -> Result<f64> {
    covariates
        .get(column)
        .copied()
        .ok_or_else(|| Error::shape(format!("covariate column {column:?} is missing")))
}

/// Scalar time basis `P(t)`; `Polynomial { degree }` is the monomial `t^degree`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TimeBasis {
    #[default]
    Identity,
    Polynomial { degree: u32 },
}

impl TimeBasis {
    #[inline]
    pub fn eval(self, t: f64) -> f64 {
        match self {
            TimeBasis::Identity => t,
            TimeBasis::Polynomial { degree } => t.powi(degree as i32),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeFamily {
    #[default]
    #[serde(rename = "gaussian")]
    Gaussian,
    #[serde(rename = "bernoulli-logit")]
    BernoulliLogit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LongitudinalSpec {
    pub terms: Vec<Term>,
    /// Columns with a time-dependent effect; each must also appear in `terms`.
    pub time_varying: Vec<String>,
    pub p1: TimeBasis,
    pub p2: TimeBasis,
    pub family: OutcomeFamily,
}

impl LongitudinalSpec {
    pub fn new(terms: Vec<Term>, time_varying: Vec<String>, family: OutcomeFamily) -> Result<Self> {
        let spec = Self { terms, time_varying, p1: TimeBasis::Identity, p2: TimeBasis::Identity, family };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.terms {
            t.validate()?;
        }
        for c in &self.time_varying {
            if !self.terms.iter().any(|t| &t.column == c) {
                return Err(Error::shape(format!("time-varying column {c:?} is not among the covariate terms")));
            }
        }
        Ok(())
    }

    pub fn n_beta(&self) -> usize {
        self.terms.iter().map(Term::width).sum()
    }

    pub fn n_gamma(&self) -> usize {
        self.time_varying.len()
    }

    pub fn has_dispersion(&self) -> bool {
        self.family == OutcomeFamily::Gaussian
    }

    pub fn design(&self, covariates: &Covariates) -> Result<LongDesign> {
        let s = design_row(&self.terms, covariates)?;
        let x_tilde = self.time_varying.iter().map(|c| lookup(covariates, c)).collect::<Result<Vec<_>>>()?;
        Ok(LongDesign { s, x_tilde })
    }
}

/// Expanded design of one subject.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LongDesign {
    pub s: Vec<f64>,
    pub x_tilde: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LongitudinalParams {
    pub intercept: f64,
    pub slope: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Residual variance σ² (gaussian outcomes only).
    pub sigma2: f64,
}

impl LongitudinalParams {
    pub fn zeros(spec: &LongitudinalSpec) -> Self {
        Self { intercept: 0.0, slope: 0.0, beta: vec![0.0; spec.n_beta()], gamma: vec![0.0; spec.n_gamma()], sigma2: 1.0 }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn linear_predictor(
    spec: &LongitudinalSpec,
    params: &LongitudinalParams,
    b: [f64; 2],
    design: &LongDesign,
    t: f64,
) -> Result<f64> {
    if design.s.len() != params.beta.len() || params.beta.len() != spec.n_beta() {
        return Err(Error::shape(format!(
            "beta has {} entries, design has {}, spec expects {}",
            params.beta.len(),
            design.s.len(),
            spec.n_beta()
        )));
    }
    if design.x_tilde.len() != params.gamma.len() || params.gamma.len() != spec.n_gamma() {
        return Err(Error::shape(format!(
            "gamma has {} entries, design has {}, spec expects {}",
            params.gamma.len(),
            design.x_tilde.len(),
            spec.n_gamma()
        )));
    }
    Ok(params.intercept
        + dot(&design.s, &params.beta)
        + dot(&design.x_tilde, &params.gamma) * spec.p1.eval(t)
        + b[0]
        + (params.slope + b[1]) * spec.p2.eval(t))
}

/// Log-density of one outcome given its linear predictor.
pub fn log_density_at(family: OutcomeFamily, y: f64, eta: f64, sigma2: f64) -> Result<f64> {
    match family {
        OutcomeFamily::Gaussian => {
            if !y.is_finite() {
                return Err(Error::domain(format!("gaussian outcome must be finite, got {y}")));
            }
            if !(sigma2 > 0.0) {
                return Err(Error::domain(format!("residual variance must be positive, got {sigma2}")));
            }
            let r = y - eta;
            Ok(-0.5 * (LN_2PI + sigma2.ln()) - 0.5 * r * r / sigma2)
        }
        OutcomeFamily::BernoulliLogit => {
            if y != 0.0 && y != 1.0 {
                return Err(Error::domain(format!("binary outcome must be 0 or 1, got {y}")));
            }
            Ok(y * eta - special::softplus(eta))
        }
    }
}

pub fn log_density_obs(
    spec: &LongitudinalSpec,
    params: &LongitudinalParams,
    b: [f64; 2],
    design: &LongDesign,
    t: f64,
    y: f64,
) -> Result<f64> {
    let eta = linear_predictor(spec, params, b, design, t)?;
    log_density_at(spec.family, y, eta, params.sigma2)
}

/// Covariance of the random intercept and slope, `(σ₁², σ₂², ρ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomEffectsCov {
    pub sigma1sq: f64,
    pub sigma2sq: f64,
    pub rho: f64,
}

impl RandomEffectsCov {
    pub fn new(sigma1sq: f64, sigma2sq: f64, rho: f64) -> Result<Self> {
        let c = Self { sigma1sq, sigma2sq, rho };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1sq > 0.0 && self.sigma1sq.is_finite()) || !(self.sigma2sq > 0.0 && self.sigma2sq.is_finite()) {
            return Err(Error::domain("random-effect variances must be positive and finite"));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::domain(format!("random-effect correlation must lie in (-1, 1), got {}", self.rho)));
        }
        Ok(())
    }

    /// Lower Cholesky factor `[[l00, 0], [l10, l11]]`.
    pub fn cholesky(&self) -> [f64; 3] {
        let s1 = self.sigma1sq.sqrt();
        let s2 = self.sigma2sq.sqrt();
        [s1, self.rho * s2, s2 * (1.0 - self.rho * self.rho).sqrt()]
    }

    /// `b = L z`.
    #[inline]
    pub fn correlate(&self, z: [f64; 2]) -> [f64; 2] {
        let l = self.cholesky();
        [l[0] * z[0], l[1] * z[0] + l[2] * z[1]]
    }

    /// Inverse of [`Self::correlate`].
    pub fn decorrelate(&self, b: [f64; 2]) -> [f64; 2] {
        let l = self.cholesky();
        let z0 = b[0] / l[0];
        [z0, (b[1] - l[1] * z0) / l[2]]
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let c = self.rho * (self.sigma1sq * self.sigma2sq).sqrt();
        [[self.sigma1sq, c], [c, self.sigma2sq]]
    }
}

/// Bivariate normal log-density of the random effects.
pub fn log_density_re(b: [f64; 2], cov: &RandomEffectsCov) -> Result<f64> {
    cov.validate()?;
    let l = cov.cholesky();
    let z = cov.decorrelate(b);
    Ok(-LN_2PI - (l[0] * l[2]).ln() - 0.5 * (z[0] * z[0] + z[1] * z[1]))
}
