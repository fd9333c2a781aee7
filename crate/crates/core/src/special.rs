//! Special functions: incomplete gamma, normal tails, gamma-function wrappers.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::{erf, gamma};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 10_000;
const FPMIN: f64 = 1e-300;

pub fn ln_gamma(x: f64) -> f64 {
    gamma::ln_gamma(x)
}

pub fn digamma(x: f64) -> f64 {
    gamma::digamma(x)
}

#[inline]
pub fn ln_norm_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / SQRT_2)
}

/// `log(1 - Φ(z))`.
pub fn ln_norm_sf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z < 30.0 {
        return (0.5 * erf::erfc(z / SQRT_2)).ln();
    }
    // Asymptotic expansion of the Mills ratio.
    let z2 = z * z;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..12 {
        term *= -((2 * k - 1) as f64) / z2;
        sum += term;
    }
    ln_norm_pdf(z) - z.ln() + sum.ln()
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("normal quantile needs 0 < p < 1, got {p}")));
    }
    let z = if p < 0.5 {
        -SQRT_2 * erf::erfc_inv(2.0 * p)
    } else {
        SQRT_2 * erf::erfc_inv(2.0 * (1.0 - p))
    };
    // One Newton step on the log scale of the relevant tail.
    let z = if p < 0.5 {
        let lp = ln_norm_sf(-z);
        z - (lp - p.ln()) / (ln_norm_pdf(z) - lp).exp()
    } else {
        let lq = ln_norm_sf(z);
        z + (lq - (1.0 - p).ln()) / (ln_norm_pdf(z) - lq).exp()
    };
    Ok(z)
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-sum-exp over a slice; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log of the lower and upper regularized incomplete gamma functions,
/// `(log P(a, x), log Q(a, x))`.
///
/// Series expansion for `x < a + 1`, Lentz continued fraction otherwise. Works
/// over any [`Scalar`], so derivatives with respect to both the shape and the
/// argument propagate through the iteration.
pub fn ln_gamma_pq<S: Scalar>(a: S, x: S) -> Result<(S, S)> {
    let av = a.value();
    let xv = x.value();
    if !(av > 0.0) || !av.is_finite() || !(xv >= 0.0) || xv.is_nan() {
        return Err(Error::domain(format!("incomplete gamma needs a > 0, x >= 0 (a = {av}, x = {xv})")));
    }
    if xv == 0.0 {
        return Ok((S::cst(f64::NEG_INFINITY), S::cst(0.0)));
    }
    if xv.is_infinite() {
        return Ok((S::cst(0.0), S::cst(f64::NEG_INFINITY)));
    }
    let log_prefix = a * x.ln() - x - a.ln_gamma();
    if xv < av + 1.0 {
        let mut ap = a;
        let mut del = a.recip();
        let mut sum = del;
        let mut converged = false;
        for _ in 0..GAMMA_MAX_ITER {
            ap = ap + 1.0;
            del = del * x / ap;
            sum += del;
            if del.magnitude() < sum.magnitude() * GAMMA_EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::numeric(format!("incomplete gamma series did not converge (a = {av}, x = {xv})")));
        }
        let lp = log_prefix + sum.ln();
        let lq = (-lp.exp()).ln_1p();
        Ok((lp, lq))
    } else {
        let mut b = x + 1.0 - a;
        let mut c = S::cst(1.0 / FPMIN);
        let mut d = b.recip();
        let mut h = d;
        let mut converged = false;
        for i in 1..GAMMA_MAX_ITER {
            let fi = i as f64;
            let an = -(S::cst(fi) * (S::cst(fi) - a));
            b = b + 2.0;
            d = an * d + b;
            if d.value().abs() < FPMIN {
                d = S::cst(FPMIN);
            }
            c = b + an / c;
            if c.value().abs() < FPMIN {
                c = S::cst(FPMIN);
            }
            d = d.recip();
            let del = d * c;
            h *= del;
            if (del - 1.0).magnitude() < GAMMA_EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::numeric(format!(
                "incomplete gamma continued fraction did not converge (a = {av}, x = {xv})"
            )));
        }
        let lq = log_prefix + h.ln();
        let lp = (-lq.exp()).ln_1p();
        Ok((lp, lq))
    }
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> Result<f64> {
    let (lp, _) = ln_gamma_pq(a, x)?;
    Ok(lp.exp())
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> Result<f64> {
    let (_, lq) = ln_gamma_pq(a, x)?;
    Ok(lq.exp())
}

/// Half-Cauchy(0, s) log-density.
pub fn ln_half_cauchy(x: f64, s: f64) -> f64 {
    (2.0 / (PI * s)).ln() - ((x / s).powi(2)).ln_1p()
}

pub const LN_2PI: f64 = 2.0 * LN_SQRT_2PI;

/// Gauss–Hermite nodes and weights for the weight function `exp(−x²)`,
/// found by Newton iteration on the orthonormal Hermite recurrence.
/// Nodes are returned in decreasing order.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::domain("Gauss-Hermite rule needs at least one node"));
    }
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^(−1/4)
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::numeric(format!("Gauss-Hermite root {i} of {n} did not converge")));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    Ok((x, w))
}
