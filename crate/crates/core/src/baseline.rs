//! Parametric baseline hazards: log-normal, Gamma, power generalised Weibull
//! (PGW) and generalised gamma (GG).
//!
//! Parameterisations:
//!
//! | family    | params                      | survival `S₀(t)`                         |
//! |-----------|-----------------------------|------------------------------------------|
//! | LogNormal | `(μ, η)`                    | `1 − Φ((log t − μ)/η)`                   |
//! | Gamma     | `(ν shape, ζ rate)`         | `Q(ν, ζt)`                               |
//! | PGW       | `(η scale, ν shape, δ power)` | `exp{1 − [1 + (t/η)^ν]^{1/δ}}`         |
//! | GenGamma  | `(η scale, ν shape, δ shape)` | `Q(δ, (t/η)^ν)`                        |
//!
//! The generalised gamma density is `ν t^{νδ−1} exp{−(t/η)^ν} / (η^{νδ} Γ(δ))`,
//! so `δ = 1` gives a Weibull and `ν = 1` a Gamma with shape `δ` and rate `1/η`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::special::{self, ln_gamma_pq};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[serde(alias = "ln", alias = "log-normal")]
    LogNormal,
    Gamma,
    Pgw,
    #[serde(alias = "gg", alias = "generalised-gamma", alias = "generalized-gamma")]
    GenGamma,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::LogNormal, Family::Gamma, Family::Pgw, Family::GenGamma];

    pub fn n_params(self) -> usize {
        match self {
            Family::LogNormal | Family::Gamma => 2,
            Family::Pgw | Family::GenGamma => 3,
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::LogNormal => &["mu", "eta"],
            Family::Gamma => &["nu", "zeta"],
            Family::Pgw | Family::GenGamma => &["eta", "nu", "delta"],
        }
    }

    /// Whether parameter `k` is restricted to be positive.
    pub fn is_positive(self, k: usize) -> bool {
        !(self == Family::LogNormal && k == 0)
    }

    /// Map unconstrained coordinates to the natural parameters.
    pub fn constrain<S: Scalar>(self, u: &[S]) -> [S; 3] {
        let mut out = [S::cst(0.0); 3];
        for k in 0..self.n_params() {
            out[k] = if self.is_positive(k) { u[k].exp() } else { u[k] };
        }
        out
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::LogNormal => "lognormal",
            Family::Gamma => "gamma",
            Family::Pgw => "pgw",
            Family::GenGamma => "gengamma",
        };
        f.write_str(s)
    }
}

/// A baseline family together with its parameter vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineHazard {
    family: Family,
    params: [f64; 3],
}

impl BaselineHazard {
    pub fn new(family: Family, params: &[f64]) -> Result<Self> {
        if params.len() != family.n_params() {
            return Err(Error::shape(format!(
                "{family} baseline takes {} parameters, got {}",
                family.n_params(),
                params.len()
            )));
        }
        let mut p = [0.0; 3];
        for (k, &v) in params.iter().enumerate() {
            if !v.is_finite() || (family.is_positive(k) && v <= 0.0) {
                return Err(Error::domain(format!(
                    "{family} parameter {} must be {}, got {v}",
                    family.param_names()[k],
                    if family.is_positive(k) { "positive and finite" } else { "finite" }
                )));
            }
            p[k] = v;
        }
        Ok(Self { family, params: p })
    }

    pub fn lognormal(mu: f64, eta: f64) -> Result<Self> {
        Self::new(Family::LogNormal, &[mu, eta])
    }

    /// Gamma with shape `nu` and rate `zeta`.
    pub fn gamma(nu: f64, zeta: f64) -> Result<Self> {
        Self::new(Family::Gamma, &[nu, zeta])
    }

    pub fn pgw(eta: f64, nu: f64, delta: f64) -> Result<Self> {
        Self::new(Family::Pgw, &[eta, nu, delta])
    }

    pub fn gen_gamma(eta: f64, nu: f64, delta: f64) -> Result<Self> {
        Self::new(Family::GenGamma, &[eta, nu, delta])
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params[..self.family.n_params()]
    }

    /// Scale `1/ζ` of a Gamma baseline, reported alongside the rate.
    pub fn gamma_scale(&self) -> Option<f64> {
        (self.family == Family::Gamma).then(|| 1.0 / self.params[1])
    }

    /// Unconstrained coordinates (log for positive parameters).
    pub fn unconstrained(&self) -> Vec<f64> {
        (0..self.family.n_params())
            .map(|k| if self.family.is_positive(k) { self.params[k].ln() } else { self.params[k] })
            .collect()
    }

    pub fn hazard0(&self, t: f64) -> Result<f64> {
        Ok(self.log_hazard0(t)?.exp())
    }

    pub fn log_hazard0(&self, t: f64) -> Result<f64> {
        check_positive_time(t)?;
        log_hazard0(self.family, &self.params, t)
    }

    pub fn cum_hazard0(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) || t.is_infinite() {
            return Err(Error::domain(format!("cumulative hazard needs finite t >= 0, got {t}")));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        cum_hazard0(self.family, &self.params, t)
    }

    pub fn survival0(&self, t: f64) -> Result<f64> {
        Ok((-self.cum_hazard0(t)?).exp())
    }

    /// `F₀(t) = 1 − S₀(t)`, computed without cancellation for small `H₀`.
    pub fn cdf0(&self, t: f64) -> Result<f64> {
        Ok(-(-self.cum_hazard0(t)?).exp_m1())
    }

    pub fn log_pdf0(&self, t: f64) -> Result<f64> {
        check_positive_time(t)?;
        log_pdf0(self.family, &self.params, t)
    }

    pub fn pdf0(&self, t: f64) -> Result<f64> {
        Ok(self.log_pdf0(t)?.exp())
    }

    /// Inverse CDF. Closed form for log-normal and PGW; bracketed bisection
    /// with Newton polishing on `H₀(t) = −log(1 − u)` for Gamma and GG.
    pub fn quantile0(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::domain(format!("quantile needs 0 < u < 1, got {u}")));
        }
        let p = &self.params;
        match self.family {
            Family::LogNormal => Ok((p[0] + p[1] * special::norm_quantile(u)?).exp()),
            Family::Pgw => {
                let target = -(-u).ln_1p();
                // (1 - log(1-u))^δ - 1, via expm1 for small targets
                let inner = (p[2] * target.ln_1p()).exp_m1();
                Ok(p[0] * inner.powf(1.0 / p[1]))
            }
            Family::Gamma | Family::GenGamma => self.invert_cum_hazard(-(-u).ln_1p()),
        }
    }

    /// The time at which `H₀` reaches `h`. Works on the cumulative-hazard
    /// scale so large `h` (survival near zero) keeps full precision.
    pub fn inverse_cum_hazard0(&self, h: f64) -> Result<f64> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::domain(format!("cumulative hazard target must be positive and finite, got {h}")));
        }
        let p = &self.params;
        match self.family {
            Family::LogNormal => {
                let s = (-h).exp();
                if s == 0.0 {
                    return Err(Error::numeric(format!("survival underflows at H0 = {h}")));
                }
                let z = if s < 0.5 { -special::norm_quantile(s)? } else { special::norm_quantile(-(-h).exp_m1())? };
                Ok((p[0] + p[1] * z).exp())
            }
            Family::Pgw => Ok(p[0] * (p[2] * h.ln_1p()).exp_m1().powf(1.0 / p[1])),
            Family::Gamma | Family::GenGamma => self.invert_cum_hazard(h),
        }
    }

    fn invert_cum_hazard(&self, target: f64) -> Result<f64> {
        const MAX_ITER: usize = 200;
        const TOL: f64 = 1e-12;
        let f = |log_t: f64| -> Result<f64> { Ok(cum_hazard0(self.family, &self.params, log_t.exp())? - target) };
        // bracket on the log-time scale by doubling the step
        let mut lo = 0.0_f64;
        let mut hi = 0.0_f64;
        let f0 = f(0.0)?;
        if f0 < 0.0 {
            let mut step = 1.0;
            hi = step;
            let mut it = 0;
            while f(hi)? < 0.0 {
                lo = hi;
                step *= 2.0;
                hi += step;
                it += 1;
                if it > MAX_ITER || hi > 700.0 {
                    return Err(Error::numeric(format!("could not bracket quantile for H0 = {target}")));
                }
            }
        } else {
            let mut step = 1.0;
            lo = -step;
            let mut it = 0;
            while f(lo)? > 0.0 {
                hi = lo;
                step *= 2.0;
                lo -= step;
                it += 1;
                if it > MAX_ITER || lo < -700.0 {
                    return Err(Error::numeric(format!("could not bracket quantile for H0 = {target}")));
                }
            }
        }
        // bisection down to a narrow bracket, then Newton on log t
        let mut it = 0;
        while hi - lo > 1e-3 {
            let mid = 0.5 * (lo + hi);
            if f(mid)? < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            it += 1;
            if it > MAX_ITER {
                break;
            }
        }
        let mut x = 0.5 * (lo + hi);
        let mut residual = f64::INFINITY;
        for _ in it..MAX_ITER {
            let t = x.exp();
            let g = cum_hazard0(self.family, &self.params, t)? - target;
            residual = g;
            if g.abs() <= TOL * target.max(1e-300) {
                return Ok(t);
            }
            if g < 0.0 {
                lo = lo.max(x);
            } else {
                hi = hi.min(x);
            }
            // dH/dlog t = t h(t)
            let slope = (log_hazard0(self.family, &self.params, t)? + x).exp();
            let newton = x - g / slope;
            if (newton - x).abs() <= TOL * x.abs().max(1.0) {
                return Ok(newton.exp());
            }
            x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        Err(Error::numeric(format!(
            "quantile inversion did not converge (target H0 = {target}, residual = {residual:e})"
        )))
    }
}

fn check_positive_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("time must be positive and finite, got {t}")))
    }
}

/// `log h₀(t | θ)` on natural parameters.
pub fn log_hazard0<S: Scalar>(family: Family, p: &[S], t: S) -> Result<S> {
    Ok(match family {
        Family::LogNormal => {
            let z = (t.ln() - p[0]) / p[1];
            let ln_pdf = z * z * (-0.5) - 0.5 * special::LN_2PI;
            ln_pdf - p[1].ln() - t.ln() - z.ln_norm_sf()
        }
        Family::Gamma => {
            let (_, lq) = ln_gamma_pq(p[0], p[1] * t)?;
            gamma_log_pdf(p, t) - lq
        }
        Family::Pgw => {
            let (eta, nu, delta) = (p[0], p[1], p[2]);
            let log_ratio = t.ln() - eta.ln();
            let x = (nu * log_ratio).exp();
            nu.ln() - delta.ln() - eta.ln() + (nu - 1.0) * log_ratio + (delta.recip() - 1.0) * x.ln_1p()
        }
        Family::GenGamma => {
            let x = (p[1] * (t.ln() - p[0].ln())).exp();
            let (_, lq) = ln_gamma_pq(p[2], x)?;
            gen_gamma_log_pdf(p, t, x) - lq
        }
    })
}

/// `H₀(t | θ)` on natural parameters, closed form.
pub fn cum_hazard0<S: Scalar>(family: Family, p: &[S], t: S) -> Result<S> {
    Ok(match family {
        Family::LogNormal => -((t.ln() - p[0]) / p[1]).ln_norm_sf(),
        Family::Gamma => -ln_gamma_pq(p[0], p[1] * t)?.1,
        Family::Pgw => {
            let x = (p[1] * (t.ln() - p[0].ln())).exp();
            (x.ln_1p() / p[2]).exp_m1()
        }
        Family::GenGamma => {
            let x = (p[1] * (t.ln() - p[0].ln())).exp();
            -ln_gamma_pq(p[2], x)?.1
        }
    })
}

/// `log f₀(t | θ)`.
pub fn log_pdf0<S: Scalar>(family: Family, p: &[S], t: S) -> Result<S> {
    Ok(match family {
        Family::Gamma => gamma_log_pdf(p, t),
        Family::GenGamma => {
            let x = (p[1] * (t.ln() - p[0].ln())).exp();
            gen_gamma_log_pdf(p, t, x)
        }
        Family::LogNormal | Family::Pgw => log_hazard0(family, p, t)? - cum_hazard0(family, p, t)?,
    })
}

fn gamma_log_pdf<S: Scalar>(p: &[S], t: S) -> S {
    let (nu, zeta) = (p[0], p[1]);
    nu * zeta.ln() + (nu - 1.0) * t.ln() - zeta * t - nu.ln_gamma()
}

fn gen_gamma_log_pdf<S: Scalar>(p: &[S], t: S, x: S) -> S {
    let (eta, nu, delta) = (p[0], p[1], p[2]);
    let nd = nu * delta;
    nu.ln() + (nd - 1.0) * t.ln() - x - nd * eta.ln() - delta.ln_gamma()
}
