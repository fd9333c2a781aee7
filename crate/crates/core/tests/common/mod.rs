//! Shared fixtures and independent reference implementations for the
//! integration tests.
#![allow(dead_code)]

use ghjm::config::ScenarioConfig;
use ghjm::data::JointDataset;
use ghjm::posterior::JointModel;
use ghjm::simulate::Simulator;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as RNormal};
use statrs::distribution::{Beta, Cauchy, Continuous, ContinuousCDF, InverseGamma, LogNormal, Normal};

/// Scenario 1 with a fixed administrative censoring time, so fixtures do
/// not pay for the censoring calibration.
pub fn scenario1(n: usize, seed: u64) -> (Simulator, JointDataset, Vec<[f64; 2]>) {
    let mut sc = ScenarioConfig::builtin("1").unwrap();
    sc.seed = seed;
    sc.censoring.target = None;
    sc.censoring.admin_time = Some(12.0);
    let sim = Simulator::new(&sc).unwrap();
    let (data, b) = sim.dataset(n).unwrap();
    (sim, data, b)
}

pub fn scenario1_model(n: usize, seed: u64) -> (JointModel, Vec<f64>) {
    let (sim, data, b) = scenario1(n, seed);
    let model = JointModel::new(sim.spec.clone(), data).unwrap();
    let mut truth = sim.truth.clone();
    truth.b = b;
    let u = model.to_unconstrained(&truth).unwrap();
    (model, u)
}

/// A random point near `centre`: fixed parameters jittered by N(0, 0.3²),
/// whitened random effects by N(0, 0.5²).
pub fn jitter(centre: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = RNormal::new(0.0, 1.0).unwrap();
    centre.iter().map(|x| x + 0.3 * d.sample(&mut rng)).collect()
}

/// Central differences with a relative step.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let step = h * x[k].abs().max(1.0);
        xp[k] = x[k] + step;
        let fp = f(&xp);
        xp[k] = x[k] - step;
        let fm = f(&xp);
        xp[k] = x[k];
        g[k] = (fp - fm) / (2.0 * step);
    }
    g
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0)).fold(0.0, f64::max)
}

/// Scenario-1 log-posterior written out directly with `statrs` densities.
///
/// Unconstrained layout: intercept, slope, β_sex, β_age, log σ², log σ₁²,
/// log σ₂², atanh ρ, μ, log η, κ̃_comorb, λ_sex, λ_age, α₀, α₁, then
/// (z₀, z₁) per subject.
pub fn naive_scenario1_log_posterior(data: &JointDataset, u: &[f64]) -> f64 {
    let (b0, b1, bsex, bage) = (u[0], u[1], u[2], u[3]);
    let sigma2 = u[4].exp();
    let (s1, s2, rho) = (u[5].exp(), u[6].exp(), u[7].tanh());
    let (mu, eta) = (u[8], u[9].exp());
    let (kt, lsex, lage, a0, a1) = (u[10], u[11], u[12], u[13], u[14]);

    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let base = LogNormal::new(mu, eta).unwrap();
    let mut total = 0.0;
    for (i, s) in data.subjects.iter().enumerate() {
        let z0 = u[15 + 2 * i];
        let z1 = u[16 + 2 * i];
        let rb0 = s1.sqrt() * z0;
        let rb1 = rho * s2.sqrt() * z0 + s2.sqrt() * (1.0 - rho * rho).sqrt() * z1;
        let sex = s.covariates["sex"];
        let age = s.covariates["age"];
        let comorb = s.covariates["comorb"];
        let resid = Normal::new(0.0, sigma2.sqrt()).unwrap();
        for (t, y) in s.obs_times.iter().zip(&s.outcomes) {
            let m = b0 + b1 * t + bsex * sex + bage * age + rb0 + rb1 * t;
            total += resid.ln_pdf(y - m);
        }
        let a = a1 * rb1;
        let h = kt * comorb + lsex * sex + lage * age + a0 * rb0;
        let t = s.event.censoring.horizon();
        let x = t * a.exp();
        let cum = -base.sf(x).ln() * (h - a).exp();
        total -= cum;
        if s.event.censoring.status_str() == "exact" {
            total += (base.pdf(x) / base.sf(x)).ln() + h;
        }
        total += std_normal.ln_pdf(z0) + std_normal.ln_pdf(z1);
    }
    let wide = Normal::new(0.0, 10.0).unwrap();
    for k in [0, 1, 2, 3, 8, 10, 11, 12, 13, 14] {
        total += wide.ln_pdf(u[k]);
    }
    let ig = InverseGamma::new(0.01, 0.01).unwrap();
    for k in [4, 5, 6] {
        total += ig.ln_pdf(u[k].exp()) + u[k];
    }
    let beta = Beta::new(1.0, 1.0).unwrap();
    total += beta.ln_pdf(0.5 * (rho + 1.0)) + (0.5 * (1.0 - rho * rho)).ln();
    let cauchy = Cauchy::new(0.0, 2.5).unwrap();
    total += (2.0 * cauchy.pdf(eta)).ln() + u[9];
    total
}

/// Minimal L-BFGS maximiser with a backtracking Armijo search; returns the
/// final point.
pub fn lbfgs_max(f: &dyn Fn(&[f64], &mut [f64]) -> f64, x0: &[f64], tol: f64, max_iter: usize) -> Vec<f64> {
    let n = x0.len();
    let m = 10;
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = -f(&x, &mut g);
    g.iter_mut().for_each(|v| *v = -*v);
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    for _ in 0..max_iter {
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn <= tol {
            break;
        }
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, r) in hist.iter().rev() {
            let a = r * s.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>();
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.last() {
            let gamma = s.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / y.iter().map(|v| v * v).sum::<f64>();
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, r), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = r * y.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>();
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        let (dir, slope) = if slope < 0.0 { (dir, slope) } else { (g.iter().map(|v| -v).collect(), -gn * gn) };
        let mut t = 1.0;
        let mut gnew = vec![0.0; n];
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let fnew = -f(&xn, &mut gnew);
            if fnew.is_finite() && fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        gnew.iter_mut().for_each(|v| *v = -*v);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-300 {
            hist.push((s, y, 1.0 / sy));
            if hist.len() > m {
                hist.remove(0);
            }
        }
        x = xn;
        fx = fnew;
        g = gnew;
    }
    x
}

/// Newton polishing of a maximum with a finite-difference Hessian of the
/// analytic gradient; stops when the gradient norm falls below `tol`.
pub fn newton_polish(f: &dyn Fn(&[f64], &mut [f64]) -> f64, x0: &[f64], tol: f64, max_iter: usize) -> Vec<f64> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    for _ in 0..max_iter {
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() <= tol {
            break;
        }
        let mut h = nalgebra::DMatrix::zeros(n, n);
        let (mut gp, mut gm) = (vec![0.0; n], vec![0.0; n]);
        for k in 0..n {
            let step = 1e-5 * x[k].abs().max(1.0);
            let mut xp = x.clone();
            xp[k] += step;
            f(&xp, &mut gp);
            xp[k] -= 2.0 * step;
            f(&xp, &mut gm);
            for j in 0..n {
                h[(j, k)] = -(gp[j] - gm[j]) / (2.0 * step);
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        let Some(chol) = h.cholesky() else { break };
        let dir = chol.solve(&nalgebra::DVector::from_column_slice(&g));
        let mut t = 1.0;
        let mut gn = vec![0.0; n];
        let mut moved = false;
        for _ in 0..30 {
            let xn: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            let fn_ = f(&xn, &mut gn);
            if fn_ >= fx - 1e-12 * fx.abs() {
                x = xn;
                fx = fn_;
                g.copy_from_slice(&gn);
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    x
}

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Adaptive quadrature comparing 10- and 20-point Gauss–Legendre rules on
/// each panel and bisecting panels that disagree beyond `rel_tol`.
pub struct Integrator {
    coarse: (Vec<f64>, Vec<f64>),
    fine: (Vec<f64>, Vec<f64>),
}

impl Default for Integrator {
    fn default() -> Self {
        Self { coarse: gauss_legendre(10), fine: gauss_legendre(20) }
    }
}

impl Integrator {
    fn rule(rule: &(Vec<f64>, Vec<f64>), f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        rule.0.iter().zip(&rule.1).map(|(x, w)| w * f(c + h * x)).sum::<f64>() * h
    }

    pub fn integrate(&self, f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
        self.panel(f, a, b, rel_tol, 0)
    }

    fn panel(&self, f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64, depth: usize) -> f64 {
        let lo = Self::rule(&self.coarse, f, a, b);
        let hi = Self::rule(&self.fine, f, a, b);
        if (hi - lo).abs() <= rel_tol * hi.abs() || depth > 40 {
            return hi;
        }
        let m = 0.5 * (a + b);
        self.panel(f, a, m, rel_tol, depth + 1) + self.panel(f, m, b, rel_tol, depth + 1)
    }

    /// `∫₀^{t_k} h` at every point of an increasing positive grid. Integrates
    /// `h(eˢ)eˢ` in log time; the piece below the first grid point is summed
    /// in unit-width slabs until a slab stops contributing.
    pub fn cumulative_hazard(&self, h: &dyn Fn(f64) -> f64, grid: &[f64], rel_tol: f64) -> Vec<f64> {
        let g = |s: f64| {
            let t = s.exp();
            h(t) * t
        };
        let mut s_hi = grid[0].ln();
        let mut total = 0.0;
        for _ in 0..2000 {
            let slab = self.integrate(&g, s_hi - 1.0, s_hi, rel_tol);
            total += slab;
            s_hi -= 1.0;
            if slab <= 1e-17 * total || s_hi < -700.0 {
                break;
            }
        }
        let mut out = Vec::with_capacity(grid.len());
        out.push(total);
        for w in grid.windows(2) {
            total += self.integrate(&g, w[0].ln(), w[1].ln(), rel_tol);
            out.push(total);
        }
        out
    }
}

/// Asymptotic Kolmogorov tail probability with Stephens' small-sample
/// correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        p += if j % 2 == 1 { 2.0 * term } else { -2.0 * term };
        if term < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov statistic of `xs` against `cdf`.
pub fn ks_statistic(xs: &mut [f64], cdf: &dyn Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// A random baseline with parameters spread over the ranges used in
/// practice: shapes between 0.3 and 5, scales over two decades.
pub fn random_baseline<R: rand::Rng>(family: ghjm::baseline::Family, rng: &mut R) -> ghjm::baseline::BaselineHazard {
    use ghjm::baseline::{BaselineHazard, Family};
    let log_unif = |rng: &mut R, lo: f64, hi: f64| (rng.random_range(lo.ln()..hi.ln())).exp();
    match family {
        Family::LogNormal => BaselineHazard::lognormal(rng.random_range(-1.0..3.0), log_unif(rng, 0.2, 2.0)),
        Family::Gamma => BaselineHazard::gamma(log_unif(rng, 0.3, 5.0), log_unif(rng, 0.05, 5.0)),
        Family::Pgw => BaselineHazard::pgw(log_unif(rng, 0.1, 10.0), log_unif(rng, 0.3, 4.0), log_unif(rng, 0.2, 5.0)),
        Family::GenGamma => {
            BaselineHazard::gen_gamma(log_unif(rng, 0.1, 10.0), log_unif(rng, 0.3, 4.0), log_unif(rng, 0.3, 5.0))
        }
    }
    .unwrap()
}

/// Independent normal means with known observation scales and normal priors.
pub struct NormalNormal {
    pub groups: Vec<Group>,
}

pub struct Group {
    pub y: Vec<f64>,
    pub sigma: f64,
    pub prior_mean: f64,
    pub prior_sd: f64,
}

impl NormalNormal {
    pub fn simulate(seed: u64, n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = [(1.3, 0.8, 0.0, 2.0), (-0.4, 1.5, 1.0, 1.0), (2.0, 0.5, 0.0, 5.0)];
        let groups = spec
            .iter()
            .map(|&(mu, sigma, prior_mean, prior_sd)| {
                let d = RNormal::new(mu, sigma).unwrap();
                Group { y: (0..n).map(|_| d.sample(&mut rng)).collect(), sigma, prior_mean, prior_sd }
            })
            .collect();
        Self { groups }
    }

    pub fn duplicated(&self) -> Self {
        let groups = self
            .groups
            .iter()
            .map(|g| Group { y: [g.y.clone(), g.y.clone()].concat(), ..*g })
            .collect();
        Self { groups }
    }

    /// log p(y) = log p(y | μ) + log p(μ) − log p(μ | y), evaluated at the
    /// posterior mean.
    pub fn analytic_log_evidence(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| {
                let n = g.y.len() as f64;
                let prec = 1.0 / g.prior_sd.powi(2) + n / g.sigma.powi(2);
                let m = (g.prior_mean / g.prior_sd.powi(2) + g.y.iter().sum::<f64>() / g.sigma.powi(2)) / prec;
                let lik = Normal::new(m, g.sigma).unwrap();
                let ll: f64 = g.y.iter().map(|y| lik.ln_pdf(*y)).sum();
                let lp = Normal::new(g.prior_mean, g.prior_sd).unwrap().ln_pdf(m);
                let lq = Normal::new(m, prec.sqrt().recip()).unwrap().ln_pdf(m);
                ll + lp - lq
            })
            .sum()
    }
}

impl ghjm::sampler::LogDensity for NormalNormal {
    fn dim(&self) -> usize {
        self.groups.len()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> ghjm::Result<f64> {
        let mut lp = 0.0;
        for (k, g) in self.groups.iter().enumerate() {
            let s2 = g.sigma * g.sigma;
            let t2 = g.prior_sd * g.prior_sd;
            let mut gk = -(x[k] - g.prior_mean) / t2;
            lp += -0.5 * (2.0 * std::f64::consts::PI * t2).ln() - 0.5 * (x[k] - g.prior_mean).powi(2) / t2;
            for y in &g.y {
                lp += -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * (y - x[k]).powi(2) / s2;
                gk += (y - x[k]) / s2;
            }
            grad[k] = gk;
        }
        Ok(lp)
    }
}
