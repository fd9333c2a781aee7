//! Joint log-posterior on the unconstrained sampling space, its gradient, and
//! a Gauss–Hermite evaluation of the marginal likelihood over the random
//! effects.
//!
//! Gradients are assembled by hand: longitudinal terms are linear in the
//! coefficients, and each survival contribution is differentiated with a
//! five-slot dual number seeded on the two predictor exponents and the
//! unconstrained baseline parameters.

use log::warn;

use crate::baseline::Family;
use crate::data::JointDataset;
use crate::error::{Error, Result};
use crate::ghsurv::{self, Censoring, SurvivalDesign};
use crate::longitudinal::{dot, log_density_re, LongDesign, OutcomeFamily, RandomEffectsCov};
use crate::model::{Layout, ModelSpec, ParameterVector};
use crate::priors::{self, PriorSet};
use crate::scalar::Dual;
use crate::special::{self, LN_2PI};
use crate::stats::order_free_sum;

#[derive(Clone, Debug)]
struct SubjectCache {
    long: LongDesign,
    surv: Vec<SurvivalDesign>,
    p1: Vec<f64>,
    p2: Vec<f64>,
    /// Index of the cause of an observed event (competing risks).
    cause: Option<usize>,
}

/// A joint model bound to a dataset.
#[derive(Clone, Debug)]
pub struct JointModel {
    pub spec: ModelSpec,
    pub data: JointDataset,
    pub layout: Layout,
    pub priors: PriorSet,
    cache: Vec<SubjectCache>,
}

/// Per-subject log-likelihood split by process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubjectTerms {
    pub longitudinal: f64,
    pub survival: f64,
}

impl JointModel {
    pub fn new(spec: ModelSpec, data: JointDataset) -> Result<Self> {
        spec.validate()?;
        data.validate()?;
        let layout = Layout::new(&spec, data.len());
        let priors = PriorSet::build(&spec, &layout, &data)?;
        let cache = data
            .subjects
            .iter()
            .map(|s| {
                let ctx = |e: Error| Error::validation(format!("subject {:?}: {e}", s.id));
                let cause = if spec.causes.len() > 1 {
                    ghsurv::resolve_cause(&spec.causes, &s.event).map_err(ctx)?
                } else {
                    None
                };
                Ok(SubjectCache {
                    long: spec.longitudinal.design(&s.covariates).map_err(ctx)?,
                    surv: spec.causes.iter().map(|c| c.design(&s.covariates)).collect::<Result<_>>().map_err(ctx)?,
                    p1: s.obs_times.iter().map(|&t| spec.longitudinal.p1.eval(t)).collect(),
                    p2: s.obs_times.iter().map(|&t| spec.longitudinal.p2.eval(t)).collect(),
                    cause,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for s in &data.subjects {
            if spec.longitudinal.family == OutcomeFamily::BernoulliLogit && s.outcomes.iter().any(|&y| y != 0.0 && y != 1.0) {
                return Err(Error::validation(format!("subject {:?}: binary outcomes must be 0 or 1", s.id)));
            }
        }
        Ok(Self { spec, data, layout, priors, cache })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn n_subjects(&self) -> usize {
        self.data.len()
    }

    /// Names of the constrained coordinates.
    pub fn names(&self) -> Vec<String> {
        self.layout.names(&self.spec, &self.data.ids())
    }

    pub fn to_unconstrained(&self, p: &ParameterVector) -> Result<Vec<f64>> {
        priors::to_unconstrained(&self.spec, &self.layout, &self.priors, p)
    }

    pub fn from_unconstrained(&self, u: &[f64]) -> Result<ParameterVector> {
        Ok(priors::from_unconstrained(&self.spec, &self.layout, &self.priors, u)?.0)
    }

    /// Constrained (natural-scale) flat vector for an unconstrained point.
    pub fn constrain(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.from_unconstrained(u)?.pack(&self.layout)
    }

    /// Unconstrained point for a constrained flat vector.
    pub fn unconstrain(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.to_unconstrained(&ParameterVector::unpack(&self.spec, &self.layout, v)?)
    }

    /// Log-likelihood of subject `i` given the random effects `b`, split by
    /// process. Optionally accumulates the gradient with respect to the
    /// unconstrained fixed parameters into `grad` and returns `∂/∂b`.
    fn subject_eval(
        &self,
        p: &ParameterVector,
        theta_u: &[[f64; 3]],
        i: usize,
        b: [f64; 2],
        mut grad: Option<&mut [f64]>,
    ) -> Result<(SubjectTerms, [f64; 2])> {
        let s = &self.data.subjects[i];
        let c = &self.cache[i];
        let lay = &self.layout;
        let mut gb = [0.0; 2];

        // Longitudinal process.
        let base = p.long.intercept + dot(&c.long.s, &p.long.beta);
        let tv = dot(&c.long.x_tilde, &p.long.gamma);
        let (mut g0, mut g1, mut g2, mut gs) = (0.0, 0.0, 0.0, 0.0);
        let mut long = 0.0;
        let sigma2 = p.long.sigma2;
        let gaussian = self.spec.longitudinal.family == OutcomeFamily::Gaussian;
        let log_norm = -0.5 * (LN_2PI + sigma2.ln());
        for j in 0..s.n_obs() {
            let eta = base + tv * c.p1[j] + b[0] + (p.long.slope + b[1]) * c.p2[j];
            let y = s.outcomes[j];
            let d = if gaussian {
                let r = y - eta;
                long += log_norm - 0.5 * r * r / sigma2;
                gs += -0.5 + 0.5 * r * r / sigma2;
                r / sigma2
            } else {
                long += y * eta - special::softplus(eta);
                y - special::sigmoid(eta)
            };
            g0 += d;
            g1 += d * c.p1[j];
            g2 += d * c.p2[j];
        }
        if !long.is_finite() {
            return Err(Error::NonFinite { subject: Some(i), term: "longitudinal" });
        }
        gb[0] += g0;
        gb[1] += g2;
        if let Some(g) = grad.as_deref_mut() {
            g[lay.intercept] += g0;
            g[lay.slope] += g2;
            for (k, x) in lay.beta.clone().zip(&c.long.s) {
                g[k] += g0 * x;
            }
            for (k, x) in lay.gamma.clone().zip(&c.long.x_tilde) {
                g[k] += g1 * x;
            }
            if let Some(k) = lay.sigma2 {
                g[k] += gs;
            }
        }

        // Survival process, one term per cause.
        let mut surv = 0.0;
        let multi = self.spec.causes.len() > 1;
        for (k, ((spec, cp), cl)) in self.spec.causes.iter().zip(&p.causes).zip(&lay.causes).enumerate() {
            let d = &c.surv[k];
            let shared_tv = if spec.share_gamma { tv } else { 0.0 };
            let mut a = dot(&d.w, &cp.kappa);
            if spec.share_slope {
                a += cp.alpha1 * (shared_tv + b[1]);
            }
            let mut h = dot(&d.w_tilde, &cp.kappa_tilde) + dot(&d.s, &cp.lambda);
            if spec.share_intercept {
                h += cp.alpha0 * b[0];
            }
            let v = survival_term(spec.family, &theta_u[k], a, h, &s.event.censoring, multi.then_some(c.cause == Some(k)))
                .map_err(|e| match e {
                    Error::Numeric(m) | Error::Domain(m) => Error::numeric(format!("subject {i}: {m}")),
                    other => other,
                })?;
            if !v.v.is_finite() || v.d.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { subject: Some(i), term: "survival" });
            }
            surv += v.v;
            let (da, dh) = (v.d[0], v.d[1]);
            if spec.share_slope {
                gb[1] += da * cp.alpha1;
            }
            if spec.share_intercept {
                gb[0] += dh * cp.alpha0;
            }
            if let Some(g) = grad.as_deref_mut() {
                for (j, idx) in cl.theta.clone().enumerate() {
                    g[idx] += v.d[2 + j];
                }
                for (idx, x) in cl.kappa.clone().zip(&d.w) {
                    g[idx] += da * x;
                }
                for (idx, x) in cl.kappa_tilde.clone().zip(&d.w_tilde) {
                    g[idx] += dh * x;
                }
                for (idx, x) in cl.lambda.clone().zip(&d.s) {
                    g[idx] += dh * x;
                }
                if let Some(idx) = cl.alpha1 {
                    g[idx] += da * (shared_tv + b[1]);
                }
                if spec.share_gamma {
                    for (idx, x) in lay.gamma.clone().zip(&c.long.x_tilde) {
                        g[idx] += da * cp.alpha1 * x;
                    }
                }
                if let Some(idx) = cl.alpha0 {
                    g[idx] += dh * b[0];
                }
            }
        }
        Ok((SubjectTerms { longitudinal: long, survival: surv }, gb))
    }

    /// Per-subject log-likelihood contributions at natural-scale parameters.
    pub fn subject_terms(&self, p: &ParameterVector, i: usize) -> Result<SubjectTerms> {
        let theta_u = theta_unconstrained(p);
        Ok(self.subject_eval(p, &theta_u, i, p.b[i], None)?.0)
    }

    /// Log-posterior density of an unconstrained point.
    pub fn log_posterior(&self, u: &[f64]) -> Result<f64> {
        self.eval(u, None)
    }

    /// Log-posterior and its gradient (written into `grad`).
    pub fn log_posterior_grad(&self, u: &[f64], grad: &mut [f64]) -> Result<f64> {
        if grad.len() != self.dim() {
            return Err(Error::shape("gradient buffer has the wrong length"));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.eval(u, Some(grad))
    }

    fn eval(&self, u: &[f64], mut grad: Option<&mut [f64]>) -> Result<f64> {
        let (p, _log_jac) = priors::from_unconstrained(&self.spec, &self.layout, &self.priors, u)?;
        let theta_u = theta_unconstrained(&p);
        let lay = &self.layout;
        let l = p.re.cholesky();
        let (sigma2, rho) = (p.re.sigma2sq.sqrt(), p.re.rho);
        let (mut g_l00, mut g_re2, mut g_rho) = (0.0, 0.0, 0.0);
        let mut parts = Vec::with_capacity(self.n_subjects());
        for i in 0..self.n_subjects() {
            let [k0, k1] = lay.b_index(i);
            let z = [u[k0], u[k1]];
            let b = p.b[i];
            let (terms, gb) = self.subject_eval(&p, &theta_u, i, b, grad.as_deref_mut())?;
            parts.push(terms.longitudinal + terms.survival - LN_2PI - 0.5 * (z[0] * z[0] + z[1] * z[1]));
            if let Some(g) = grad.as_deref_mut() {
                // b₀ = l₀₀z₀, b₁ = l₁₀z₀ + l₁₁z₁
                g[k0] += gb[0] * l[0] + gb[1] * l[1] - z[0];
                g[k1] += gb[1] * l[2] - z[1];
                g_l00 += gb[0] * z[0];
                g_re2 += gb[1] * b[1];
                g_rho += gb[1] * (z[0] * (1.0 - rho * rho) - z[1] * rho * (1.0 - rho * rho).sqrt()) * sigma2;
            }
        }
        let lik = order_free_sum(&mut parts);
        let prior = self.priors.log_prior_unconstrained(u, grad.as_deref_mut(), true);
        if let Some(g) = grad.as_deref_mut() {
            // l₀₀ = exp(u/2); l₁₀, l₁₁ scale with exp(u₂/2); ρ = tanh(u₃).
            g[lay.re] += 0.5 * g_l00 * l[0];
            g[lay.re + 1] += 0.5 * g_re2;
            g[lay.re + 2] += g_rho;
        }
        // The unconstrained prior densities already include the log-Jacobians.
        let total = lik + prior;
        if !total.is_finite() {
            return Err(Error::NonFinite { subject: None, term: "prior" });
        }
        Ok(total)
    }

    /// `Σᵢ log ∫ [Πⱼ f_L]·f_S·φ(bᵢ | Σ) dbᵢ` by adapted Gauss–Hermite
    /// quadrature on a `nodes × nodes` grid centred at each subject's mode.
    ///
    /// Subjects whose mode search fails or whose Hessian is not negative
    /// definite fall back to a grid centred at the prior; the number of such
    /// subjects is returned alongside the estimate.
    pub fn marginal_loglik_ghq(&self, p: &ParameterVector, nodes: usize) -> Result<(f64, usize)> {
        if nodes < 5 {
            return Err(Error::domain(format!("marginal likelihood quadrature needs at least 5 nodes, got {nodes}")));
        }
        p.re.validate()?;
        let (x, w) = special::gauss_hermite(nodes)?;
        let ln_w: Vec<f64> = w.iter().map(|w| w.ln()).collect();
        let theta_u = theta_unconstrained(p);
        let mut fallbacks = 0;
        let mut parts = Vec::with_capacity(self.n_subjects());
        for i in 0..self.n_subjects() {
            let f = |b: [f64; 2]| -> Result<(f64, [f64; 2])> {
                let (t, gb) = self.subject_eval(p, &theta_u, i, b, None)?;
                let (lp, gp) = re_log_density_grad(b, &p.re);
                Ok((t.longitudinal + t.survival + lp, [gb[0] + gp[0], gb[1] + gp[1]]))
            };
            let v = match adapted_grid(&f, &p.re) {
                Some((mode, chol)) => {
                    // b = m + √2·C x with C the Cholesky factor of the inverse
                    // negative Hessian.
                    let log_det = (chol[0] * chol[2]).ln() + std::f64::consts::LN_2;
                    let mut terms = Vec::with_capacity(nodes * nodes);
                    for (a, xa) in x.iter().enumerate() {
                        for (c, xc) in x.iter().enumerate() {
                            let s = [std::f64::consts::SQRT_2 * xa, std::f64::consts::SQRT_2 * xc];
                            let b = [mode[0] + chol[0] * s[0], mode[1] + chol[1] * s[0] + chol[2] * s[1]];
                            terms.push(ln_w[a] + ln_w[c] + f(b)?.0 + xa * xa + xc * xc);
                        }
                    }
                    log_det + special::log_sum_exp(&terms)
                }
                None => {
                    fallbacks += 1;
                    warn!("subject {i}: adapted quadrature unavailable, using prior-centred nodes");
                    let mut terms = Vec::with_capacity(nodes * nodes);
                    for (a, xa) in x.iter().enumerate() {
                        for (c, xc) in x.iter().enumerate() {
                            let b = p.re.correlate([std::f64::consts::SQRT_2 * xa, std::f64::consts::SQRT_2 * xc]);
                            let (t, _) = self.subject_eval(p, &theta_u, i, b, None)?;
                            terms.push(ln_w[a] + ln_w[c] + t.longitudinal + t.survival);
                        }
                    }
                    special::log_sum_exp(&terms) - std::f64::consts::PI.ln()
                }
            };
            if !v.is_finite() {
                return Err(Error::NonFinite { subject: Some(i), term: "marginal likelihood" });
            }
            parts.push(v);
        }
        Ok((order_free_sum(&mut parts), fallbacks))
    }

    /// Log-likelihood conditional on the random effects stored in `p`,
    /// `Σᵢ [Σⱼ log f_L + log f_S]`.
    pub fn conditional_loglik(&self, p: &ParameterVector) -> Result<f64> {
        let theta_u = theta_unconstrained(p);
        let mut parts = (0..self.n_subjects())
            .map(|i| self.subject_eval(p, &theta_u, i, p.b[i], None).map(|(t, _)| t.longitudinal + t.survival))
            .collect::<Result<Vec<_>>>()?;
        Ok(order_free_sum(&mut parts))
    }

    /// Natural-scale log joint density `log p(Data, b | ψ) + log π(ψ)`.
    pub fn log_joint(&self, p: &ParameterVector) -> Result<f64> {
        let theta_u = theta_unconstrained(p);
        let mut parts = (0..self.n_subjects())
            .map(|i| {
                let (t, _) = self.subject_eval(p, &theta_u, i, p.b[i], None)?;
                Ok(t.longitudinal + t.survival + log_density_re(p.b[i], &p.re)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(order_free_sum(&mut parts) + self.priors.log_prior(&p.pack(&self.layout)?))
    }
}

fn theta_unconstrained(p: &ParameterVector) -> Vec<[f64; 3]> {
    p.causes
        .iter()
        .map(|c| {
            let mut t = [0.0; 3];
            for (k, v) in c.baseline.unconstrained().into_iter().enumerate() {
                t[k] = v;
            }
            t
        })
        .collect()
}

/// Survival contribution of one cause with derivatives with respect to
/// (time-scale exponent, hazard-scale exponent, unconstrained θ₀..θ₂).
/// `event_of_this_cause` is `Some` under competing risks.
fn survival_term(
    family: Family,
    theta_u: &[f64; 3],
    a: f64,
    h: f64,
    censoring: &Censoring,
    event_of_this_cause: Option<bool>,
) -> Result<Dual<5>> {
    let tu: [Dual<5>; 3] = std::array::from_fn(|k| Dual::var(theta_u[k], 2 + k));
    let theta = family.constrain(&tu);
    let theta = &theta[..family.n_params()];
    let a = Dual::var(a, 0);
    let h = Dual::var(h, 1);
    match event_of_this_cause {
        None => ghsurv::log_fs_generic(family, theta, a, h, censoring),
        Some(is_event) => ghsurv::cause_term_generic(family, theta, a, h, censoring.horizon(), is_event),
    }
}

fn re_log_density_grad(b: [f64; 2], cov: &RandomEffectsCov) -> (f64, [f64; 2]) {
    let l = cov.cholesky();
    let z = cov.decorrelate(b);
    let lp = -LN_2PI - (l[0] * l[2]).ln() - 0.5 * (z[0] * z[0] + z[1] * z[1]);
    // ∇ = −Σ⁻¹b = −L⁻ᵀz
    let g1 = -z[1] / l[2];
    let g0 = (-z[0] - l[1] * g1) / l[0];
    (lp, [g0, g1])
}

/// Newton search for the mode of a 2-D log-integrand; returns the mode and the
/// Cholesky factor `[c00, c10, c11]` of the inverse negative Hessian, or
/// `None` when the curvature is not usable.
fn adapted_grid(f: &dyn Fn([f64; 2]) -> Result<(f64, [f64; 2])>, cov: &RandomEffectsCov) -> Option<([f64; 2], [f64; 3])> {
    let hess = |b: [f64; 2]| -> Option<[f64; 3]> {
        let mut h = [0.0; 4];
        for k in 0..2 {
            let step = 1e-5 * (1.0 + b[k].abs());
            let mut bp = b;
            let mut bm = b;
            bp[k] += step;
            bm[k] -= step;
            let gp = f(bp).ok()?.1;
            let gm = f(bm).ok()?.1;
            h[2 * k] = (gp[0] - gm[0]) / (2.0 * step);
            h[2 * k + 1] = (gp[1] - gm[1]) / (2.0 * step);
        }
        Some([-h[0], -0.5 * (h[1] + h[2]), -h[3]])
    };
    let mut b = [0.0; 2];
    let (mut fb, mut g) = f(b).ok()?;
    let scale = cov.sigma1sq.max(cov.sigma2sq).sqrt();
    for _ in 0..100 {
        let nh = hess(b)?;
        let det = nh[0] * nh[2] - nh[1] * nh[1];
        if !(nh[0] > 0.0 && det > 0.0) {
            return None;
        }
        let step = [(nh[2] * g[0] - nh[1] * g[1]) / det, (nh[0] * g[1] - nh[1] * g[0]) / det];
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = [b[0] + t * step[0], b[1] + t * step[1]];
            if let Ok((fc, gc)) = f(cand) {
                if fc >= fb - 1e-12 * fb.abs() {
                    b = cand;
                    fb = fc;
                    g = gc;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if (step[0].abs() + step[1].abs()) * t < 1e-10 * (1.0 + scale) {
            break;
        }
    }
    if g[0].abs() + g[1].abs() > 1e-4 {
        return None;
    }
    let nh = hess(b)?;
    let det = nh[0] * nh[2] - nh[1] * nh[1];
    if !(nh[0] > 0.0 && det > 0.0) {
        return None;
    }
    // Inverse of [[a, c], [c, d]] is [[d, −c], [−c, a]] / det.
    let (i00, i10, i11) = (nh[2] / det, -nh[1] / det, nh[0] / det);
    let c00 = i00.sqrt();
    let c10 = i10 / c00;
    let c11 = (i11 - c10 * c10).sqrt();
    c11.is_finite().then_some((b, [c00, c10, c11]))
}
