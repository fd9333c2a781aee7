//! Convergence diagnostics for multiple chains: split-R̂, effective sample
//! size from Geyer's initial monotone sequence, and Monte Carlo standard error.

use crate::error::{Error, Result};
use crate::stats::{mean, variance};

pub const MIN_DRAWS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDiagnostics {
    pub rhat: f64,
    pub ess: f64,
    pub mcse: f64,
    /// All draws identical; R̂ and ESS are not meaningful.
    pub degenerate: bool,
}

fn check(chains: &[Vec<f64>]) -> Result<usize> {
    let n = chains.first().map_or(0, Vec::len);
    if chains.is_empty() || chains.iter().any(|c| c.len() != n) {
        return Err(Error::shape("chains must be non-empty and of equal length"));
    }
    if n < MIN_DRAWS {
        return Err(Error::validation(format!("at least {MIN_DRAWS} draws per chain are needed, got {n}")));
    }
    if chains.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::numeric("non-finite draw"));
    }
    Ok(n)
}

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let half = chains[0].len() / 2;
    let n = chains[0].len();
    chains
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[n - half..].to_vec()])
        .collect()
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let x0 = chains[0][0];
    chains.iter().flatten().all(|x| *x == x0)
}

/// Potential scale reduction computed on half-chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    check(chains)?;
    if is_constant(chains) {
        return Ok(f64::NAN);
    }
    let s = split(chains);
    let n = s[0].len() as f64;
    let means: Vec<f64> = s.iter().map(|c| mean(c)).collect();
    let w = mean(&s.iter().map(|c| variance(c)).collect::<Vec<_>>());
    let b = n * variance(&means);
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt())
}

/// Biased autocovariance at lags `0..n`.
fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let d: Vec<f64> = x.iter().map(|v| v - m).collect();
    (0..n).map(|lag| d[..n - lag].iter().zip(&d[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64).collect()
}

/// Effective sample size of the pooled split chains.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    check(chains)?;
    if is_constant(chains) {
        return Ok(f64::NAN);
    }
    let s = split(chains);
    let m = s.len();
    let n = s[0].len();
    let acov: Vec<Vec<f64>> = s.iter().map(|c| autocovariance(c)).collect();
    let means: Vec<f64> = s.iter().map(|c| mean(c)).collect();
    let mean_var = acov.iter().map(|a| a[0] * n as f64 / (n as f64 - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += variance(&means);
    }
    let rho_at = |t: usize| -> f64 {
        let ac = acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
        1.0 - (mean_var - ac) / var_plus
    };
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    rho[1] = rho_at(1);
    let mut t = 1;
    while t + 2 < n {
        rho[t + 1] = rho_at(t + 1);
        rho[t + 2] = rho_at(t + 2);
        if rho[t + 1] + rho[t + 2] < 0.0 {
            break;
        }
        t += 2;
    }
    let max_t = t;
    // Monotone pair sums.
    let mut k = 1;
    while k + 2 <= max_t {
        let prev = rho[k - 1] + rho[k];
        if rho[k + 1] + rho[k + 2] > prev {
            rho[k + 1] = prev / 2.0;
            rho[k + 2] = prev / 2.0;
        }
        k += 2;
    }
    // the first lag past the truncation point enters only when positive
    let tail = if max_t + 1 < n { rho[max_t + 1].max(0.0) } else { 0.0 };
    let tau = -1.0 + 2.0 * rho[..=max_t].iter().sum::<f64>() + tail;
    let total = (m * n) as f64;
    let tau = tau.max(1.0 / total.log10());
    Ok(total / tau)
}

pub fn diagnose(chains: &[Vec<f64>]) -> Result<ParamDiagnostics> {
    check(chains)?;
    if is_constant(chains) {
        return Ok(ParamDiagnostics { rhat: f64::NAN, ess: f64::NAN, mcse: 0.0, degenerate: true });
    }
    let rhat = split_rhat(chains)?;
    let ess = ess(chains)?;
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let mcse = variance(&pooled).sqrt() / ess.sqrt();
    Ok(ParamDiagnostics { rhat, ess, mcse, degenerate: false })
}

/// Diagnostics for every coordinate of draw vectors `draws[chain][iteration][k]`.
pub fn diagnose_all(draws: &[Vec<Vec<f64>>]) -> Result<Vec<ParamDiagnostics>> {
    let dim = draws.first().and_then(|c| c.first()).map_or(0, Vec::len);
    (0..dim)
        .map(|k| {
            let per_chain: Vec<Vec<f64>> = draws.iter().map(|c| c.iter().map(|d| d[k]).collect()).collect();
            diagnose(&per_chain)
        })
        .collect()
}
