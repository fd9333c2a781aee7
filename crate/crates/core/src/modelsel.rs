//! Marginal likelihoods by bridge sampling, posterior model probabilities and
//! log₁₀ Bayes factors.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diagnostics;
use crate::error::{Error, Result};
use crate::posterior::JointModel;
use crate::sampler::{LogDensity, PosteriorChain};
use crate::special::{log_sum_exp, LN_2PI};

#[derive(Clone, Debug, PartialEq)]
pub struct BridgeConfig {
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self { seed: 1, tol: 1e-8, max_iter: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BridgeEstimate {
    pub log_marginal: f64,
    /// Approximate standard error of `log_marginal`.
    pub se: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

struct Proposal {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl Proposal {
    fn fit(draws: &[&Vec<f64>], warnings: &mut Vec<String>) -> Result<Self> {
        let d = draws[0].len();
        let n = draws.len() as f64;
        let mut mean = DVector::zeros(d);
        for x in draws {
            mean += DVector::from_column_slice(x);
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for x in draws {
            let r = DVector::from_column_slice(x) - &mean;
            cov.syger(1.0, &r, &r, 1.0);
        }
        cov /= n - 1.0;
        cov.fill_upper_triangle_with_lower_triangle();
        let scale = (cov.trace() / d as f64).max(1e-300);
        let mut jitter = 0.0;
        for attempt in 0..12 {
            let mut c = cov.clone();
            for k in 0..d {
                c[(k, k)] += jitter;
            }
            if let Some(ch) = c.cholesky() {
                if attempt > 0 {
                    warnings.push(format!(
                        "proposal covariance not positive definite; inflated the diagonal by {jitter:.3e}"
                    ));
                }
                let l = ch.l();
                let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
                return Ok(Self { mean, chol: l, log_det });
            }
            jitter = if jitter == 0.0 { 1e-10 * scale } else { jitter * 10.0 };
        }
        Err(Error::numeric("proposal covariance could not be regularised"))
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        let r = DVector::from_column_slice(x) - &self.mean;
        let z = self.chol.solve_lower_triangular(&r).expect("non-singular factor");
        -0.5 * (d * LN_2PI + self.log_det + z.norm_squared())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let z = DVector::from_iterator(self.mean.len(), (0..self.mean.len()).map(|_| StandardNormal.sample(rng)));
        (&self.mean + &self.chol * z).iter().copied().collect()
    }
}

/// Iterative bridge estimate of `log ∫ q(θ) dθ` from posterior draws of
/// `target` (one vector per retained draw, grouped by chain).
///
/// A multivariate normal proposal is moment-matched to the second half of
/// every chain; the first halves enter the fixed-point iteration. The
/// standard error follows the relative mean-squared-error approximation of
/// Frühwirth-Schnatter, with the posterior-side variance inflated by the
/// autocorrelation of the chains.
pub fn log_marginal_bridge<T: LogDensity + ?Sized>(
    target: &T,
    chains: &[PosteriorChain],
    cfg: &BridgeConfig,
) -> Result<BridgeEstimate> {
    let draws: Vec<Vec<Vec<f64>>> = chains.iter().map(|c| c.draws.clone()).collect();
    log_marginal_bridge_draws(target, &draws, cfg)
}

/// As [`log_marginal_bridge`], from raw unconstrained draws `[chain][iteration]`.
pub fn log_marginal_bridge_draws<T: LogDensity + ?Sized>(
    target: &T,
    chains: &[Vec<Vec<f64>>],
    cfg: &BridgeConfig,
) -> Result<BridgeEstimate> {
    let mut warnings = Vec::new();
    if chains.is_empty() || chains.iter().any(|c| c.len() < 2 * diagnostics::MIN_DRAWS) {
        return Err(Error::validation(format!(
            "bridge sampling needs at least {} draws per chain",
            2 * diagnostics::MIN_DRAWS
        )));
    }
    let dim = target.dim();
    if chains.iter().flatten().any(|d| d.len() != dim) {
        return Err(Error::shape("draw length differs from the target dimension"));
    }
    if let Ok(all) = diagnostics::diagnose_all(chains) {
        let worst = all.iter().filter(|d| !d.degenerate).map(|d| d.rhat).fold(0.0, f64::max);
        if worst > 1.05 {
            warnings.push(format!("largest split R-hat is {worst:.3}; the chains may not have converged"));
        }
    }
    let half = chains[0].len() / 2;
    let fit_draws: Vec<&Vec<f64>> = chains.iter().flat_map(|c| c[half..].iter()).collect();
    let iter_chains: Vec<&[Vec<f64>]> = chains.iter().map(|c| &c[..half]).collect();
    let proposal = Proposal::fit(&fit_draws, &mut warnings)?;

    let eval = |x: &[f64]| -> f64 {
        match target.log_density(x) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    };
    // l = log q − log g on posterior draws (per chain) and proposal draws.
    let l1_chains: Vec<Vec<f64>> =
        iter_chains.iter().map(|c| c.iter().map(|x| eval(x) - proposal.log_density(x)).collect()).collect();
    let l1: Vec<f64> = l1_chains.iter().flatten().copied().collect();
    if l1.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("log density is not finite at a posterior draw"));
    }
    let n1 = l1.len();
    let n2 = n1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let l2: Vec<f64> = (0..n2)
        .map(|_| {
            let x = proposal.sample(&mut rng);
            eval(&x) - proposal.log_density(&x)
        })
        .collect();

    let s1 = n1 as f64 / (n1 + n2) as f64;
    let s2 = n2 as f64 / (n1 + n2) as f64;
    let lstar = crate::stats::quantile(&l1, 0.5);
    let (ls1, ls2) = (s1.ln(), s2.ln());
    // log(s1·e^{l−l*} + s2·r)
    let denom = |l: f64, log_r: f64| crate::special::log_add_exp(ls1 + l - lstar, ls2 + log_r);
    let mut log_r = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut buf2 = vec![0.0; n2];
    let mut buf1 = vec![0.0; n1];
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        for (b, &l) in buf2.iter_mut().zip(&l2) {
            *b = if l == f64::NEG_INFINITY { f64::NEG_INFINITY } else { l - lstar - denom(l, log_r) };
        }
        for (b, &l) in buf1.iter_mut().zip(&l1) {
            *b = -denom(l, log_r);
        }
        let num = log_sum_exp(&buf2) - (n2 as f64).ln();
        let den = log_sum_exp(&buf1) - (n1 as f64).ln();
        let next = num - den;
        if !next.is_finite() {
            return Err(Error::numeric("bridge iteration produced a non-finite value"));
        }
        let rel = (next - log_r).exp_m1().abs();
        log_r = next;
        if rel <= cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(format!("bridge iteration did not converge in {} steps", cfg.max_iter));
    }
    let log_marginal = log_r + lstar;

    // Relative mean-squared error with the normalised posterior p = q/Z:
    // f₁ = p/(s₁p + s₂g) under the proposal, f₂ = g/(s₁p + s₂g) under the posterior.
    let log_mix = |l: f64| crate::special::log_add_exp(ls1 + l - log_marginal, ls2);
    let f1: Vec<f64> = l2
        .iter()
        .map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { (l - log_marginal - log_mix(l)).exp() })
        .collect();
    let f2_chains: Vec<Vec<f64>> = l1_chains.iter().map(|c| c.iter().map(|&l| (-log_mix(l)).exp()).collect()).collect();
    let f2: Vec<f64> = f2_chains.iter().flatten().copied().collect();
    let rel_var = |v: &[f64]| crate::stats::variance(v) / crate::stats::mean(v).powi(2);
    let ess_f2 = diagnostics::ess(&f2_chains).ok().filter(|e| e.is_finite() && *e > 0.0).unwrap_or(n1 as f64);
    let re2 = rel_var(&f1) / n2 as f64 + rel_var(&f2) / ess_f2.min(n1 as f64);
    log::debug!("bridge error terms: f1 {:?}, f2 {:?}, ess {ess_f2}", rel_var(&f1), rel_var(&f2));
    let se = re2.sqrt();
    Ok(BridgeEstimate { log_marginal, se, iterations, converged, warnings })
}

/// Which space the bridge estimator integrates over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BridgeSpace {
    /// Fixed parameters only; random effects are integrated out of every
    /// density evaluation by adapted Gauss–Hermite quadrature.
    #[default]
    Marginal,
    /// Fixed parameters and whitened random effects jointly, as sampled.
    Augmented,
}

/// Log posterior of a joint model's fixed parameters (unconstrained scale)
/// with the random effects integrated out by adapted Gauss–Hermite quadrature.
pub struct FixedEffectsMarginal<'a> {
    pub model: &'a JointModel,
    pub nodes: usize,
}

impl FixedEffectsMarginal<'_> {
    fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.model.dim()];
        u[..x.len()].copy_from_slice(x);
        u
    }
}

impl LogDensity for FixedEffectsMarginal<'_> {
    fn dim(&self) -> usize {
        self.model.layout.z
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::shape("point length differs from the number of fixed parameters"));
        }
        let u = self.full(x);
        let p = self.model.from_unconstrained(&u)?;
        let (ll, _) = self.model.marginal_loglik_ghq(&p, self.nodes)?;
        let lp = self.model.priors.log_prior_unconstrained(&u, None, true);
        let v = ll + lp;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { subject: None, term: "marginal posterior" })
        }
    }

    /// Central differences; only needed when this target is sampled directly.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let mut y = x.to_vec();
        for k in 0..x.len() {
            let h = 1e-5 * (1.0 + x[k].abs());
            y[k] = x[k] + h;
            let up = self.log_density(&y)?;
            y[k] = x[k] - h;
            let down = self.log_density(&y)?;
            y[k] = x[k];
            grad[k] = (up - down) / (2.0 * h);
        }
        self.log_density(x)
    }
}

/// Default number of quadrature nodes per random-effect dimension.
pub const MARGINAL_NODES: usize = 15;

/// Log marginal likelihood of a fitted joint model.
pub fn log_marginal_joint(
    model: &JointModel,
    chains: &[PosteriorChain],
    space: BridgeSpace,
    cfg: &BridgeConfig,
) -> Result<BridgeEstimate> {
    match space {
        BridgeSpace::Augmented => log_marginal_bridge(model, chains, cfg),
        BridgeSpace::Marginal => {
            let target = FixedEffectsMarginal { model, nodes: MARGINAL_NODES };
            let k = target.dim();
            let draws: Vec<Vec<Vec<f64>>> =
                chains.iter().map(|c| c.draws.iter().map(|d| d[..k].to_vec()).collect()).collect();
            log_marginal_bridge_draws(&target, &draws, cfg)
        }
    }
}

/// Posterior model probabilities from log marginal likelihoods and prior
/// model probabilities (equal when `prior` is `None`).
pub fn posterior_model_probs(log_marginals: &[f64], prior: Option<&[f64]>) -> Result<Vec<f64>> {
    if log_marginals.is_empty() {
        return Err(Error::validation("no models to compare"));
    }
    if log_marginals.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("log marginal likelihoods must be finite"));
    }
    let m = log_marginals.len();
    let log_prior: Vec<f64> = match prior {
        None => vec![-(m as f64).ln(); m],
        Some(p) => {
            if p.len() != m {
                return Err(Error::shape("one prior probability per model is required"));
            }
            let total: f64 = p.iter().sum();
            if p.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::domain("prior model probabilities must be non-negative and sum to 1"));
            }
            p.iter().map(|v| v.ln()).collect()
        }
    };
    let a: Vec<f64> = log_marginals.iter().zip(&log_prior).map(|(l, p)| l + p).collect();
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = a.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / s).collect())
}

/// `log₁₀ BF` in favour of model `v` over model `j`.
pub fn log10_bayes_factor(log_marg_v: f64, log_marg_j: f64) -> Result<f64> {
    if !(log_marg_v.is_finite() && log_marg_j.is_finite()) {
        return Err(Error::domain("log marginal likelihoods must be finite"));
    }
    Ok((log_marg_v - log_marg_j) / std::f64::consts::LN_10)
}

/// Matrix of pairwise log₁₀ Bayes factors, `[v][j]` in favour of `v`.
pub fn lbf_matrix(log_marginals: &[f64]) -> Result<Vec<Vec<f64>>> {
    log_marginals.iter().map(|&v| log_marginals.iter().map(|&j| log10_bayes_factor(v, j)).collect()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub model: String,
    pub log_marginal: f64,
    pub se: f64,
}

/// Comparison table: one row per model with PMP, then the LBF matrix.
pub fn comparison_report(rows: &[ComparisonRow]) -> Result<String> {
    let lm: Vec<f64> = rows.iter().map(|r| r.log_marginal).collect();
    let pmp = posterior_model_probs(&lm, None)?;
    let lbf = lbf_matrix(&lm)?;
    let mut out = String::from("model,log_marginal,se,pmp\n");
    for (r, p) in rows.iter().zip(&pmp) {
        out.push_str(&format!("{},{:.6},{:.6},{:.6}\n", csv_field(&r.model), r.log_marginal, r.se, p));
    }
    out.push_str("\nlbf");
    for r in rows {
        out.push(',');
        out.push_str(&csv_field(&r.model));
    }
    out.push('\n');
    for (r, row) in rows.iter().zip(&lbf) {
        out.push_str(&csv_field(&r.model));
        for v in row {
            out.push_str(&format!(",{v:.4}"));
        }
        out.push('\n');
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmp_examples() {
        let p = posterior_model_probs(&[-3.0, -3.0, -3.0, -3.0], None).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let gap = (0.9944f64 / 0.0056).ln();
        let p = posterior_model_probs(&[10.0 + gap, 10.0], None).unwrap();
        assert!((p[0] - 0.9944).abs() < 1e-12 && (p[1] - 0.0056).abs() < 1e-12);
        let q = posterior_model_probs(&[1e4 + gap, 1e4], None).unwrap();
        assert!((q[0] - p[0]).abs() < 1e-9);
        assert!(posterior_model_probs(&[], None).is_err());
        assert!(posterior_model_probs(&[0.0, 1.0], Some(&[0.3, 0.3])).is_err());
    }

    #[test]
    fn lbf_identities() {
        assert_eq!(log10_bayes_factor(2.5, 2.5).unwrap(), 0.0);
        let lm = [-120.3, -103.72, -165.3];
        let m = lbf_matrix(&lm).unwrap();
        for v in 0..3 {
            for j in 0..3 {
                assert_eq!(m[v][j], -m[j][v]);
                for k in 0..3 {
                    assert!((m[v][k] - (m[v][j] + m[j][k])).abs() < 1e-12);
                }
            }
        }
        assert!(log10_bayes_factor(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn report_lists_every_model() {
        let rows = vec![
            ComparisonRow { model: "a".into(), log_marginal: -10.0, se: 0.01 },
            ComparisonRow { model: "b,c".into(), log_marginal: -12.0, se: 0.02 },
        ];
        let r = comparison_report(&rows).unwrap();
        assert!(r.starts_with("model,log_marginal,se,pmp\na,-10.000000,0.010000,0.880797\n"));
        assert!(r.contains("\"b,c\""));
    }
}
