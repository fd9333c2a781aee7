//! Prior distributions and the constrained ↔ unconstrained parameter maps.
//!
//! Every flat coordinate is assigned exactly one [`PriorTerm`]. The same
//! assignment list drives the log prior, its gradient, initial values and the
//! audit of unpriored parameters.
//!
//! Unconstrained scales: log for variances and positive baseline parameters,
//! atanh for ρ, identity elsewhere. The random effects are whitened,
//! `bᵢ = L zᵢ` with `L` the Cholesky factor of Σ, and `zᵢ ~ N(0, I)`. Since
//! `log N(zᵢ; 0, I) = log φ(bᵢ | Σ) + log|L|`, the whitened prior already carries
//! the Jacobian of that map.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baseline::Family;
use crate::data::JointDataset;
use crate::error::{Error, Result};
use crate::longitudinal::{RandomEffectsCov, Term};
use crate::model::{Layout, ModelSpec, ParameterVector};
use crate::special::{self, ln_gamma, ln_half_cauchy, LN_2PI};
use crate::stats::order_free_sum;

/// Hyperparameters. Field names are the configuration keys.
///
/// Gamma priors use the shape–rate convention: `delta_shape = 1.83`,
/// `delta_rate = 0.65` has mean `1.83 / 0.65 ≈ 2.815`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Variance of the normal prior on the longitudinal intercept and slope.
    pub beta_tilde_var: f64,
    /// Variance for linearly entering longitudinal coefficients β.
    pub beta_var: f64,
    pub gamma_var: f64,
    /// Variance for linearly entering hazard-scale coefficients λ.
    pub lambda_var: f64,
    /// Variance for κ and κ̃.
    pub kappa_var: f64,
    pub alpha_var: f64,
    /// Variance of the normal prior on the log-normal location μ.
    pub mu_var: f64,
    /// Half-Cauchy scale for baseline scale parameters (and the Gamma scale 1/ζ).
    pub eta_scale: f64,
    /// Half-Cauchy scale for baseline shape ν.
    pub nu_scale: f64,
    /// Inverse-gamma shape and scale for σ², σ₁², σ₂².
    pub variance_shape: f64,
    pub variance_scale: f64,
    /// Beta(a, b) prior on (ρ + 1)/2.
    pub rho_a: f64,
    pub rho_b: f64,
    /// g-prior factor for spline blocks of β; defaults to n/q.
    pub g_beta: Option<f64>,
    /// g-prior factor for spline blocks of λ; defaults to n/q.
    pub g_lambda: Option<f64>,
    /// Dispersion η² multiplying the λ g-prior covariance.
    pub lambda_dispersion: f64,
    pub delta_shape: f64,
    pub delta_rate: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            beta_tilde_var: 100.0,
            beta_var: 100.0,
            gamma_var: 100.0,
            lambda_var: 100.0,
            kappa_var: 100.0,
            alpha_var: 100.0,
            mu_var: 100.0,
            eta_scale: 2.5,
            nu_scale: 2.5,
            variance_shape: 0.01,
            variance_scale: 0.01,
            rho_a: 1.0,
            rho_b: 1.0,
            g_beta: None,
            g_lambda: None,
            lambda_dispersion: 1.0,
            delta_shape: 1.83,
            delta_rate: 0.65,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("beta_tilde_var", self.beta_tilde_var),
            ("beta_var", self.beta_var),
            ("gamma_var", self.gamma_var),
            ("lambda_var", self.lambda_var),
            ("kappa_var", self.kappa_var),
            ("alpha_var", self.alpha_var),
            ("mu_var", self.mu_var),
            ("eta_scale", self.eta_scale),
            ("nu_scale", self.nu_scale),
            ("variance_shape", self.variance_shape),
            ("variance_scale", self.variance_scale),
            ("rho_a", self.rho_a),
            ("rho_b", self.rho_b),
            ("lambda_dispersion", self.lambda_dispersion),
            ("delta_shape", self.delta_shape),
            ("delta_rate", self.delta_rate),
            ("g_beta", self.g_beta.unwrap_or(1.0)),
            ("g_lambda", self.g_lambda.unwrap_or(1.0)),
        ];
        let bad: Vec<String> = fields
            .iter()
            .filter(|(_, v)| !(*v > 0.0 && v.is_finite()))
            .map(|(k, v)| format!("priors.{k} must be positive and finite, got {v}"))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }
}

/// `g = n / q` for a spline block of degree `q` fitted to `n` subjects.
pub fn g_factor(n: usize, q: usize) -> f64 {
    n as f64 / q as f64
}

/// Where the dispersion of a g-prior comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dispersion {
    /// Flat index of a log-variance coordinate.
    Param(usize),
    Fixed(f64),
}

/// A spline block with prior `N(0, g·(S̃ᵀS̃)⁻¹·dispersion)`.
#[derive(Clone, Debug)]
pub struct GBlock {
    pub name: String,
    pub range: Range<usize>,
    /// `S̃ᵀS̃`.
    pub gram: DMatrix<f64>,
    pub log_det_gram: f64,
    pub g: f64,
    pub dispersion: Dispersion,
}

impl GBlock {
    fn new(name: String, range: Range<usize>, rows: &[Vec<f64>], g: f64, dispersion: Dispersion) -> Result<Self> {
        let k = range.len();
        // Entry-wise order-free sums keep the prior independent of subject order.
        let mut gram = DMatrix::zeros(k, k);
        let mut buf = Vec::with_capacity(rows.len());
        for a in 0..k {
            for b in 0..=a {
                buf.clear();
                buf.extend(rows.iter().map(|r| r[a] * r[b]));
                let v = order_free_sum(&mut buf);
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }
        let chol = gram.clone().cholesky().ok_or_else(|| {
            Error::numeric(format!("spline design for {name} is rank deficient; its g-prior is improper"))
        })?;
        let log_det_gram = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det_gram.is_finite() {
            return Err(Error::numeric(format!("spline design for {name} is numerically singular")));
        }
        Ok(Self { name, range, gram, log_det_gram, g, dispersion })
    }

    /// Covariance `g·M·dispersion` with `M = (S̃ᵀS̃)⁻¹`.
    pub fn covariance(&self, dispersion: f64) -> DMatrix<f64> {
        let inv = self.gram.clone().try_inverse().expect("gram matrix was Cholesky-factorised");
        inv * (self.g * dispersion)
    }

    fn log_density(&self, beta: &[f64], dispersion: f64) -> (f64, f64) {
        let k = beta.len() as f64;
        let v = DVector::from_column_slice(beta);
        let quad = (v.transpose() * &self.gram * &v)[(0, 0)];
        let s = self.g * dispersion;
        let lp = -0.5 * k * LN_2PI + 0.5 * self.log_det_gram - 0.5 * k * s.ln() - 0.5 * quad / s;
        (lp, quad)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PriorTerm {
    Normal { var: f64 },
    /// Member of the `k`-th g-prior block.
    GPrior { block: usize },
    /// Inverse-gamma on a variance (sampled on the log scale).
    InvGamma { shape: f64, scale: f64 },
    /// Beta(a, b) on (ρ + 1)/2 (sampled on the atanh scale).
    CorrBeta { a: f64, b: f64 },
    /// Half-Cauchy on a positive parameter (sampled on the log scale).
    HalfCauchy { scale: f64 },
    /// Half-Cauchy on the reciprocal of a positive parameter, i.e. on the
    /// Gamma-baseline scale 1/ζ while the rate ζ is the stored parameter.
    HalfCauchyOnInverse { scale: f64 },
    /// Gamma(shape, rate) on a positive parameter (sampled on the log scale).
    Gamma { shape: f64, rate: f64 },
    /// Whitened random effect, standard normal.
    RandomEffect,
}

impl PriorTerm {
    /// Whether the coordinate is sampled on the log scale.
    pub fn is_log_scale(self) -> bool {
        matches!(
            self,
            PriorTerm::InvGamma { .. }
                | PriorTerm::HalfCauchy { .. }
                | PriorTerm::HalfCauchyOnInverse { .. }
                | PriorTerm::Gamma { .. }
        )
    }

    /// Log-density on the natural scale. Not defined for g-prior members and
    /// random effects, which are handled jointly.
    pub fn log_density(self, x: f64) -> f64 {
        match self {
            PriorTerm::Normal { var } => -0.5 * (LN_2PI + var.ln()) - 0.5 * x * x / var,
            PriorTerm::InvGamma { shape: a, scale: b } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
            }
            PriorTerm::CorrBeta { a, b } => {
                if x.abs() >= 1.0 {
                    return f64::NEG_INFINITY;
                }
                let p = 0.5 * (x + 1.0);
                (a - 1.0) * p.ln() + (b - 1.0) * (1.0 - p).ln() - ln_beta(a, b) - std::f64::consts::LN_2
            }
            PriorTerm::HalfCauchy { scale } => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                ln_half_cauchy(x, scale)
            }
            PriorTerm::HalfCauchyOnInverse { scale } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                ln_half_cauchy(1.0 / x, scale) - 2.0 * x.ln()
            }
            PriorTerm::Gamma { shape: a, rate: b } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                a * b.ln() - ln_gamma(a) + (a - 1.0) * x.ln() - b * x
            }
            PriorTerm::GPrior { .. } | PriorTerm::RandomEffect => f64::NAN,
        }
    }

    /// Log-density of the unconstrained coordinate `u` (natural-scale density
    /// plus log-Jacobian) and its derivative.
    pub fn log_density_unconstrained(self, u: f64) -> (f64, f64) {
        match self {
            PriorTerm::Normal { var } => (-0.5 * (LN_2PI + var.ln()) - 0.5 * u * u / var, -u / var),
            PriorTerm::RandomEffect => (-0.5 * LN_2PI - 0.5 * u * u, -u),
            PriorTerm::InvGamma { shape: a, scale: b } => {
                let e = b * (-u).exp();
                (a * b.ln() - ln_gamma(a) - a * u - e, -a + e)
            }
            PriorTerm::CorrBeta { a, b } => {
                let log_p = -special::softplus(-2.0 * u);
                let log_q = -special::softplus(2.0 * u);
                let p = special::sigmoid(2.0 * u);
                (
                    a * log_p + b * log_q - ln_beta(a, b) + std::f64::consts::LN_2,
                    2.0 * a * (1.0 - p) - 2.0 * b * p,
                )
            }
            PriorTerm::HalfCauchy { scale } => {
                let r = (u.exp() / scale).powi(2);
                ((2.0 / (std::f64::consts::PI * scale)).ln() - r.ln_1p() + u, 1.0 - 2.0 * r / (1.0 + r))
            }
            PriorTerm::HalfCauchyOnInverse { scale } => {
                let r = ((-u).exp() / scale).powi(2);
                ((2.0 / (std::f64::consts::PI * scale)).ln() - r.ln_1p() - u, 2.0 * r / (1.0 + r) - 1.0)
            }
            PriorTerm::Gamma { shape: a, rate: b } => {
                let e = b * u.exp();
                (a * b.ln() - ln_gamma(a) + a * u - e, a - e)
            }
            PriorTerm::GPrior { .. } => (f64::NAN, f64::NAN),
        }
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn baseline_terms(family: Family, cfg: &PriorConfig) -> Vec<PriorTerm> {
    let hc_eta = PriorTerm::HalfCauchy { scale: cfg.eta_scale };
    let hc_nu = PriorTerm::HalfCauchy { scale: cfg.nu_scale };
    let delta = PriorTerm::Gamma { shape: cfg.delta_shape, rate: cfg.delta_rate };
    match family {
        Family::LogNormal => vec![PriorTerm::Normal { var: cfg.mu_var }, hc_eta],
        Family::Gamma => vec![hc_nu, PriorTerm::HalfCauchyOnInverse { scale: cfg.eta_scale }],
        Family::Pgw | Family::GenGamma => vec![hc_eta, hc_nu, delta],
    }
}

/// The prior of a model: one term per flat coordinate plus the g-prior blocks.
#[derive(Clone, Debug)]
pub struct PriorSet {
    pub terms: Vec<PriorTerm>,
    pub blocks: Vec<GBlock>,
}

impl PriorSet {
    /// Builds the assignment list; spline blocks take their Gram matrices from
    /// the subjects' covariates.
    pub fn build(spec: &ModelSpec, layout: &Layout, data: &JointDataset) -> Result<Self> {
        let cfg = &spec.priors;
        let mut terms: Vec<Option<PriorTerm>> = vec![None; layout.dim];
        let mut blocks = Vec::new();
        let set = |r: Range<usize>, t: PriorTerm, terms: &mut Vec<Option<PriorTerm>>| {
            for k in r {
                terms[k] = Some(t);
            }
        };
        let n = data.len();
        let beta_tilde = PriorTerm::Normal { var: cfg.beta_tilde_var };
        set(layout.intercept..layout.intercept + 1, beta_tilde, &mut terms);
        set(layout.slope..layout.slope + 1, beta_tilde, &mut terms);

        let long_disp = layout.sigma2.map_or(Dispersion::Fixed(1.0), Dispersion::Param);
        let mut assign_terms = |terms_spec: &[Term],
                                start: usize,
                                raw_var: f64,
                                g_override: Option<f64>,
                                disp: Dispersion,
                                label: &str,
                                terms: &mut Vec<Option<PriorTerm>>|
         -> Result<()> {
            let mut off = start;
            for term in terms_spec {
                let r = off..off + term.width();
                off = r.end;
                match term.spline_degree() {
                    None => set(r, PriorTerm::Normal { var: raw_var }, terms),
                    Some(q) => {
                        let name = format!("{label}[{}:bs*]", term.column);
                        if n == 0 && g_override.is_none() {
                            return Err(Error::numeric(format!("spline block {name} has no data for its g-prior")));
                        }
                        let rows = data
                            .subjects
                            .iter()
                            .map(|s| {
                                let x = s.covariates.get(&term.column).copied().ok_or_else(|| {
                                    Error::shape(format!("subject {:?} lacks covariate {:?}", s.id, term.column))
                                })?;
                                let mut row = Vec::with_capacity(r.len());
                                term.expand_into(x, &mut row)?;
                                Ok(row)
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let g = g_override.unwrap_or_else(|| g_factor(n, q));
                        let block = GBlock::new(name, r.clone(), &rows, g, disp)?;
                        set(r, PriorTerm::GPrior { block: blocks.len() }, terms);
                        blocks.push(block);
                    }
                }
            }
            Ok(())
        };
        assign_terms(
            &spec.longitudinal.terms,
            layout.beta.start,
            cfg.beta_var,
            cfg.g_beta,
            long_disp,
            "long.beta",
            &mut terms,
        )?;
        set(layout.gamma.clone(), PriorTerm::Normal { var: cfg.gamma_var }, &mut terms);
        let variance = PriorTerm::InvGamma { shape: cfg.variance_shape, scale: cfg.variance_scale };
        if let Some(k) = layout.sigma2 {
            set(k..k + 1, variance, &mut terms);
        }
        set(layout.re..layout.re + 2, variance, &mut terms);
        set(layout.re + 2..layout.re + 3, PriorTerm::CorrBeta { a: cfg.rho_a, b: cfg.rho_b }, &mut terms);
        for (cl, c) in layout.causes.iter().zip(&spec.causes) {
            for (k, t) in cl.theta.clone().zip(baseline_terms(c.family, cfg)) {
                set(k..k + 1, t, &mut terms);
            }
            let kappa = PriorTerm::Normal { var: cfg.kappa_var };
            set(cl.kappa.clone(), kappa, &mut terms);
            set(cl.kappa_tilde.clone(), kappa, &mut terms);
            assign_terms(
                &c.terms,
                cl.lambda.start,
                cfg.lambda_var,
                cfg.g_lambda,
                Dispersion::Fixed(cfg.lambda_dispersion),
                &format!("surv.{}.lambda", c.cause),
                &mut terms,
            )?;
            let alpha = PriorTerm::Normal { var: cfg.alpha_var };
            for k in cl.alpha0.iter().chain(&cl.alpha1) {
                set(*k..*k + 1, alpha, &mut terms);
            }
        }
        set(layout.z..layout.dim, PriorTerm::RandomEffect, &mut terms);
        drop(assign_terms);
        let missing: Vec<usize> = terms.iter().enumerate().filter(|(_, t)| t.is_none()).map(|(k, _)| k).collect();
        if !missing.is_empty() {
            return Err(Error::shape(format!("coordinates {missing:?} have no prior")));
        }
        Ok(Self { terms: terms.into_iter().map(Option::unwrap).collect(), blocks })
    }

    /// Names of parameters without a proper prior term (empty for a
    /// well-formed model).
    pub fn audit(&self, names: &[String]) -> Vec<String> {
        let mut out = Vec::new();
        for (k, t) in self.terms.iter().enumerate() {
            let proper = match *t {
                PriorTerm::Normal { var } => var > 0.0 && var.is_finite(),
                PriorTerm::GPrior { block } => self.blocks.get(block).is_some_and(|b| b.range.contains(&k)),
                PriorTerm::InvGamma { shape, scale } => shape > 0.0 && scale > 0.0,
                PriorTerm::CorrBeta { a, b } => a > 0.0 && b > 0.0,
                PriorTerm::HalfCauchy { scale } | PriorTerm::HalfCauchyOnInverse { scale } => scale > 0.0,
                PriorTerm::Gamma { shape, rate } => shape > 0.0 && rate > 0.0,
                PriorTerm::RandomEffect => true,
            };
            if !proper {
                out.push(names.get(k).cloned().unwrap_or_else(|| format!("#{k}")));
            }
        }
        if names.len() != self.terms.len() {
            out.extend(names.iter().skip(self.terms.len()).cloned());
        }
        out
    }

    fn dispersion_value(&self, d: Dispersion, natural: impl Fn(usize) -> f64) -> f64 {
        match d {
            Dispersion::Param(k) => natural(k),
            Dispersion::Fixed(v) => v,
        }
    }

    /// Log prior on the natural scale, excluding the random effects (whose
    /// density `φ(bᵢ | Σ)` belongs to the likelihood side).
    pub fn log_prior(&self, constrained: &[f64]) -> f64 {
        let mut lp = 0.0;
        for (k, t) in self.terms.iter().enumerate() {
            if !matches!(t, PriorTerm::GPrior { .. } | PriorTerm::RandomEffect) {
                lp += t.log_density(constrained[k]);
            }
        }
        for b in &self.blocks {
            let d = self.dispersion_value(b.dispersion, |k| constrained[k]);
            lp += b.log_density(&constrained[b.range.clone()], d).0;
        }
        lp
    }

    /// Log prior density of the unconstrained vector (including the
    /// log-Jacobian of every coordinate map) and, optionally, its gradient
    /// added into `grad`.
    ///
    /// With `skip_random_effects` the whitened random-effect terms are left
    /// out, so a caller can fold them into per-subject sums.
    pub fn log_prior_unconstrained(&self, u: &[f64], mut grad: Option<&mut [f64]>, skip_random_effects: bool) -> f64 {
        let mut lp = 0.0;
        for (k, t) in self.terms.iter().enumerate() {
            match t {
                PriorTerm::GPrior { .. } => continue,
                PriorTerm::RandomEffect if skip_random_effects => continue,
                _ => {}
            }
            let (v, d) = t.log_density_unconstrained(u[k]);
            lp += v;
            if let Some(g) = grad.as_deref_mut() {
                g[k] += d;
            }
        }
        for b in &self.blocks {
            let d = self.dispersion_value(b.dispersion, |k| u[k].exp());
            let beta = &u[b.range.clone()];
            let (v, quad) = b.log_density(beta, d);
            lp += v;
            if let Some(g) = grad.as_deref_mut() {
                let s = b.g * d;
                let gb = &b.gram * DVector::from_column_slice(beta);
                for (j, k) in b.range.clone().enumerate() {
                    g[k] -= gb[j] / s;
                }
                if let Dispersion::Param(k) = b.dispersion {
                    g[k] += -0.5 * beta.len() as f64 + 0.5 * quad / s;
                }
            }
        }
        lp
    }

    /// Tempered prior draw on the unconstrained scale: normal coordinates use a
    /// tenth of the prior variance, everything else a N(0, 1/10); each
    /// coordinate is clipped to [−2, 2].
    pub fn initial_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.terms
            .iter()
            .map(|t| {
                let var = match *t {
                    PriorTerm::Normal { var } => var,
                    _ => 1.0,
                };
                let e: f64 = StandardNormal.sample(rng);
                (e * (var / 10.0).sqrt()).clamp(-2.0, 2.0)
            })
            .collect()
    }
}

fn unconstrain_one(t: PriorTerm, x: f64) -> f64 {
    match t {
        PriorTerm::CorrBeta { .. } => x.atanh(),
        t if t.is_log_scale() => x.ln(),
        _ => x,
    }
}

/// Natural-scale parameters to the unconstrained sampling vector. The random
/// effects are whitened with Σ's Cholesky factor.
pub fn to_unconstrained(spec: &ModelSpec, layout: &Layout, priors: &PriorSet, p: &ParameterVector) -> Result<Vec<f64>> {
    p.re.validate()?;
    let v = p.pack(layout)?;
    // Round-trip through unpack to validate every constraint.
    ParameterVector::unpack(spec, layout, &v)?;
    let mut u: Vec<f64> = v.iter().zip(&priors.terms).map(|(&x, &t)| unconstrain_one(t, x)).collect();
    for (i, b) in p.b.iter().enumerate() {
        let z = p.re.decorrelate(*b);
        let [k0, k1] = layout.b_index(i);
        u[k0] = z[0];
        u[k1] = z[1];
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("parameter on the boundary of its support"));
    }
    Ok(u)
}

/// Inverse of [`to_unconstrained`], returning the parameters and the summed
/// log-Jacobian of the elementwise maps (the whitening map is excluded; see
/// the module documentation).
pub fn from_unconstrained(spec: &ModelSpec, layout: &Layout, priors: &PriorSet, u: &[f64]) -> Result<(ParameterVector, f64)> {
    if u.len() != layout.dim {
        return Err(Error::shape(format!("unconstrained vector has {} entries, layout expects {}", u.len(), layout.dim)));
    }
    let mut log_jac = 0.0;
    let mut v = u.to_vec();
    for (k, t) in priors.terms.iter().enumerate().take(layout.z) {
        match t {
            PriorTerm::CorrBeta { .. } => {
                v[k] = u[k].tanh();
                log_jac += log_one_minus_tanh_sq(u[k]);
            }
            t if t.is_log_scale() => {
                v[k] = u[k].exp();
                log_jac += u[k];
            }
            _ => {}
        }
    }
    let re = RandomEffectsCov::new(v[layout.re], v[layout.re + 1], v[layout.re + 2])?;
    for i in 0..layout.n_subjects {
        let [k0, k1] = layout.b_index(i);
        let b = re.correlate([u[k0], u[k1]]);
        v[k0] = b[0];
        v[k1] = b[1];
    }
    Ok((ParameterVector::unpack(spec, layout, &v)?, log_jac))
}

/// `log(1 − tanh²u) = log 4 − 2·softplus(2u) + 2u`, stable for large |u|.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let a = u.abs();
    (4.0f64).ln() - 2.0 * a - 2.0 * (-2.0 * a).exp().ln_1p()
}

/// Natural-scale parameters implied by an unconstrained vector, packed flat.
pub fn constrained_flat(spec: &ModelSpec, layout: &Layout, priors: &PriorSet, u: &[f64]) -> Result<Vec<f64>> {
    from_unconstrained(spec, layout, priors, u)?.0.pack(layout)
}
