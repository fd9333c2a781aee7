//! Hamiltonian Monte Carlo with dual-averaging step-size adaptation and a
//! diagonal metric estimated in doubling warm-up windows.
//!
//! Two transition kernels are available: the multinomial no-U-turn sampler
//! (dynamic trajectory length, generalised U-turn criterion) and static HMC
//! with a fixed number of leapfrog steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::JointModel;

/// A differentiable log-density on ℝᵈ.
pub trait LogDensity {
    fn dim(&self) -> usize;
    /// Writes the gradient into `grad` and returns the log-density.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64>;

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        let mut g = vec![0.0; self.dim()];
        self.log_density_grad(x, &mut g)
    }
}

impl LogDensity for JointModel {
    fn dim(&self) -> usize {
        JointModel::dim(self)
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.log_posterior_grad(x, grad)
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.log_posterior(x)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Nuts,
    /// Static HMC with `leapfrog_steps` steps per transition.
    Hmc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub target_accept: f64,
    /// Upper bound on leapfrog steps per transition; sets the tree depth limit.
    pub max_leapfrog: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub leapfrog_steps: usize,
    /// Fraction of divergent post-warm-up transitions that triggers a warning.
    pub divergence_warning: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            burn_in: 1000,
            thin: 5,
            chains: 2,
            target_accept: 0.8,
            max_leapfrog: 1023,
            seed: 1,
            algorithm: Algorithm::Nuts,
            leapfrog_steps: 16,
            divergence_warning: 0.01,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.iterations == 0 {
            p.push("sampler.iterations must be positive".to_string());
        }
        if self.burn_in >= self.iterations {
            p.push(format!("sampler.burn_in ({}) must be below sampler.iterations ({})", self.burn_in, self.iterations));
        }
        if self.thin == 0 {
            p.push("sampler.thin must be at least 1".into());
        }
        if self.chains == 0 {
            p.push("sampler.chains must be at least 1".into());
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            p.push(format!("sampler.target_accept must lie in (0, 1), got {}", self.target_accept));
        }
        if self.max_leapfrog == 0 || self.leapfrog_steps == 0 {
            p.push("sampler.max_leapfrog and sampler.leapfrog_steps must be positive".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    fn max_depth(&self) -> usize {
        // A tree of depth d holds 2^d − 1 leapfrog steps beyond the start.
        ((self.max_leapfrog + 1) as f64).log2().floor().max(1.0) as usize
    }
}

/// Warm-up outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct Adaptation {
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
}

/// Draws of one chain on the unconstrained scale.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorChain {
    pub chain: usize,
    pub seed: u64,
    pub draws: Vec<Vec<f64>>,
    /// Mean acceptance statistic per retained iteration.
    pub accept_stat: Vec<f64>,
    pub n_leapfrog: Vec<usize>,
    pub divergent: Vec<bool>,
    /// Divergences during warm-up (not retained).
    pub warmup_divergences: usize,
    pub adaptation: Adaptation,
    pub warnings: Vec<String>,
}

impl PosteriorChain {
    pub fn n_divergent(&self) -> usize {
        self.divergent.iter().filter(|d| **d).count()
    }

    pub fn mean_accept(&self) -> f64 {
        crate::stats::mean(&self.accept_stat)
    }
}

/// The RNG owned by chain `chain` of a run seeded with `seed`.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
    rng.set_stream(chain as u64);
    rng
}

#[derive(Clone, Debug)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Hamiltonian<'a, T: LogDensity + ?Sized> {
    target: &'a T,
    inv_metric: Vec<f64>,
}

impl<T: LogDensity + ?Sized> Hamiltonian<'_, T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn energy(&self, s: &State) -> f64 {
        let e = -s.logp + self.kinetic(&s.p);
        if e.is_nan() {
            f64::INFINITY
        } else {
            e
        }
    }

    fn velocity(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn sample_momentum<R: Rng>(&self, rng: &mut R, p: &mut [f64]) {
        for (p, m) in p.iter_mut().zip(&self.inv_metric) {
            let e: f64 = StandardNormal.sample(rng);
            *p = e / m.sqrt();
        }
    }

    /// Evaluate the target at `s.q`. Failures of the target count as zero
    /// density; a NaN gradient at a finite density is fatal.
    fn update(&self, s: &mut State) -> Result<()> {
        match self.target.log_density_grad(&s.q, &mut s.grad) {
            Ok(lp) if lp.is_finite() => {
                if let Some(k) = s.grad.iter().position(|g| g.is_nan()) {
                    return Err(Error::numeric(format!("NaN gradient at coordinate {k}")));
                }
                s.logp = if s.grad.iter().all(|g| g.is_finite()) { lp } else { f64::NEG_INFINITY };
            }
            _ => s.logp = f64::NEG_INFINITY,
        }
        Ok(())
    }

    fn leapfrog(&self, s: &mut State, eps: f64) -> Result<()> {
        if !s.logp.is_finite() {
            return Ok(());
        }
        for (p, g) in s.p.iter_mut().zip(&s.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in s.q.iter_mut().zip(&s.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        self.update(s)?;
        if s.logp.is_finite() {
            for (p, g) in s.p.iter_mut().zip(&s.grad) {
                *p += 0.5 * eps * g;
            }
        }
        Ok(())
    }
}

const MAX_DELTA_H: f64 = 1000.0;

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    crate::special::log_add_exp(a, b)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, x) in acc.iter_mut().zip(x) {
        *a += x;
    }
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

struct TreeStats {
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

struct Nuts<'a, 'r, T: LogDensity + ?Sized, R: Rng> {
    ham: &'a Hamiltonian<'a, T>,
    rng: &'r mut R,
    eps: f64,
    h0: f64,
    stats: TreeStats,
}

impl<T: LogDensity + ?Sized, R: Rng> Nuts<'_, '_, T, R> {
    /// Extends the trajectory by `2^depth` leapfrog steps from `z`.
    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut State,
        z_propose: &mut State,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        sign: f64,
        log_sum_weight: &mut f64,
    ) -> Result<bool> {
        let dim = z.q.len();
        if depth == 0 {
            self.ham.leapfrog(z, sign * self.eps)?;
            self.stats.n_leapfrog += 1;
            let h = self.ham.energy(z);
            if h - self.h0 > MAX_DELTA_H || !h.is_finite() {
                self.stats.divergent = true;
            }
            *log_sum_weight = log_sum_exp2(*log_sum_weight, self.h0 - h);
            self.stats.sum_metro_prob += if self.h0 - h > 0.0 { 1.0 } else { (self.h0 - h).exp() };
            z_propose.clone_from(z);
            *p_sharp_beg = self.ham.velocity(&z.p);
            p_sharp_end.clone_from(p_sharp_beg);
            add_into(rho, &z.p);
            p_beg.clone_from(&z.p);
            p_end.clone_from(p_beg);
            return Ok(!self.stats.divergent);
        }
        // Initial subtree.
        let mut lsw_init = f64::NEG_INFINITY;
        let mut p_init_end = vec![0.0; dim];
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        if !self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            sign,
            &mut lsw_init,
        )? {
            return Ok(false);
        }
        // Final subtree.
        let mut z_propose_final = z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let mut p_final_beg = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut rho_final = vec![0.0; dim];
        if !self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            sign,
            &mut lsw_final,
        )? {
            return Ok(false);
        }
        // Multinomial sample from the right subtree.
        let lsw_subtree = log_sum_exp2(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp2(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || self.rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            *z_propose = z_propose_final;
        }
        let mut rho_subtree = rho_init.clone();
        add_into(&mut rho_subtree, &rho_final);
        add_into(rho, &rho_subtree);
        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        let mut rho_ext = rho_init.clone();
        add_into(&mut rho_ext, &p_final_beg);
        persist &= criterion(p_sharp_beg, &p_sharp_final_beg, &rho_ext);
        let mut rho_ext = rho_final;
        add_into(&mut rho_ext, &p_init_end);
        persist &= criterion(&p_sharp_init_end, p_sharp_end, &rho_ext);
        Ok(persist)
    }
}

struct Transition {
    state: State,
    accept_stat: f64,
    n_leapfrog: usize,
    divergent: bool,
}

fn nuts_transition<T: LogDensity + ?Sized, R: Rng>(
    ham: &Hamiltonian<'_, T>,
    rng: &mut R,
    start: &State,
    eps: f64,
    max_depth: usize,
) -> Result<Transition> {
    let dim = start.q.len();
    let mut z = start.clone();
    ham.sample_momentum(rng, &mut z.p);
    let h0 = ham.energy(&z);
    let mut z_fwd = z.clone();
    let mut z_bck = z.clone();
    let mut z_sample = z.clone();
    let mut z_propose = z.clone();

    let v0 = ham.velocity(&z.p);
    let mut p_fwd_fwd = z.p.clone();
    let mut p_sharp_fwd_fwd = v0.clone();
    let mut p_fwd_bck = z.p.clone();
    let mut p_sharp_fwd_bck = v0.clone();
    let mut p_bck_fwd = z.p.clone();
    let mut p_sharp_bck_fwd = v0.clone();
    let mut p_bck_bck = z.p.clone();
    let mut p_sharp_bck_bck = v0;
    let mut rho = z.p.clone();
    let mut log_sum_weight = 0.0;

    let mut nuts = Nuts { ham, rng, eps, h0, stats: TreeStats { n_leapfrog: 0, sum_metro_prob: 0.0, divergent: false } };
    let mut depth = 0;
    while depth < max_depth {
        let mut rho_fwd = vec![0.0; dim];
        let mut rho_bck = vec![0.0; dim];
        let mut lsw_subtree = f64::NEG_INFINITY;
        let valid = if nuts.rng.random::<f64>() > 0.5 {
            // the old trajectory now ends the backward part; its junction
            // with the new subtree is its forward end
            rho_bck.clone_from(&rho);
            p_bck_fwd.clone_from(&p_fwd_fwd);
            p_sharp_bck_fwd.clone_from(&p_sharp_fwd_fwd);
            let v = nuts.build_tree(
                depth,
                &mut z_fwd,
                &mut z_propose,
                &mut p_sharp_fwd_bck,
                &mut p_sharp_fwd_fwd,
                &mut rho_fwd,
                &mut p_fwd_bck,
                &mut p_fwd_fwd,
                1.0,
                &mut lsw_subtree,
            )?;
            v
        } else {
            rho_fwd.clone_from(&rho);
            p_fwd_bck.clone_from(&p_bck_bck);
            p_sharp_fwd_bck.clone_from(&p_sharp_bck_bck);
            nuts.build_tree(
                depth,
                &mut z_bck,
                &mut z_propose,
                &mut p_sharp_bck_fwd,
                &mut p_sharp_bck_bck,
                &mut rho_bck,
                &mut p_bck_fwd,
                &mut p_bck_bck,
                -1.0,
                &mut lsw_subtree,
            )?
        };
        if !valid {
            break;
        }
        depth += 1;
        if lsw_subtree > log_sum_weight || nuts.rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
            z_sample.clone_from(&z_propose);
        }
        log_sum_weight = log_sum_exp2(log_sum_weight, lsw_subtree);
        rho = rho_bck.clone();
        add_into(&mut rho, &rho_fwd);
        let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
        let mut rho_ext = rho_bck;
        add_into(&mut rho_ext, &p_fwd_bck);
        persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
        let mut rho_ext = rho_fwd;
        add_into(&mut rho_ext, &p_bck_fwd);
        persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
        if !persist {
            break;
        }
    }
    let n = nuts.stats.n_leapfrog.max(1);
    Ok(Transition {
        state: z_sample,
        accept_stat: nuts.stats.sum_metro_prob / n as f64,
        n_leapfrog: nuts.stats.n_leapfrog,
        divergent: nuts.stats.divergent,
    })
}

fn hmc_transition<T: LogDensity + ?Sized, R: Rng>(
    ham: &Hamiltonian<'_, T>,
    rng: &mut R,
    start: &State,
    eps: f64,
    steps: usize,
) -> Result<Transition> {
    let mut z = start.clone();
    ham.sample_momentum(rng, &mut z.p);
    let h0 = ham.energy(&z);
    for _ in 0..steps {
        ham.leapfrog(&mut z, eps)?;
        if !z.logp.is_finite() {
            break;
        }
    }
    let h = ham.energy(&z);
    let divergent = !h.is_finite() || h - h0 > MAX_DELTA_H;
    let accept = if h.is_finite() { (h0 - h).exp().min(1.0) } else { 0.0 };
    let state = if rng.random::<f64>() < accept { z } else { start.clone() };
    Ok(Transition { state, accept_stat: accept, n_leapfrog: steps, divergent })
}

/// Nesterov dual averaging of the log step size.
#[derive(Clone, Debug)]
struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, delta: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), s_bar: 0.0, x_bar: 0.0, counter: 0.0, delta }
    }

    fn update(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Doubling windows for metric estimation inside the warm-up.
#[derive(Clone, Debug)]
struct Windows {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window: usize,
    next_end: usize,
}

impl Windows {
    fn new(warmup: usize) -> Option<Self> {
        let (mut init, mut term, mut base) = (75, 50, 25);
        if warmup < 20 {
            return None;
        }
        if init + term + base > warmup {
            init = (0.15 * warmup as f64) as usize;
            term = (0.1 * warmup as f64) as usize;
            base = warmup - init - term;
        }
        let mut w = Self { warmup, init_buffer: init, term_buffer: term, window: base, next_end: 0 };
        w.next_end = w.compute_end(init, base);
        Some(w)
    }

    fn compute_end(&self, start: usize, size: usize) -> usize {
        let end = start + size;
        // Stretch the last window to the terminal buffer.
        let next_size = 2 * size;
        if end + next_size > self.warmup - self.term_buffer {
            self.warmup - self.term_buffer
        } else {
            end
        }
    }

    fn in_window(&self, it: usize) -> bool {
        it >= self.init_buffer && it < self.warmup - self.term_buffer
    }

    /// True when iteration `it` closes a window; advances to the next one.
    fn end_of_window(&mut self, it: usize) -> bool {
        if it + 1 == self.next_end && it + 1 <= self.warmup - self.term_buffer {
            self.window *= 2;
            self.next_end = self.compute_end(it + 1, self.window);
            true
        } else {
            false
        }
    }
}

#[derive(Clone, Debug)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self { n: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = x - *m;
            *m += d / self.n;
            *s += d * (x - *m);
        }
    }

    /// Variance shrunk towards 1e-3, as in common HMC practice.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2.iter().map(|s| (n / (n + 5.0)) * (s / (n - 1.0)) + 1e-3 * (5.0 / (n + 5.0))).collect()
    }
}

fn initial_step_size<T: LogDensity + ?Sized, R: Rng>(
    ham: &Hamiltonian<'_, T>,
    rng: &mut R,
    state: &State,
    mut eps: f64,
) -> Result<f64> {
    let probe = |rng: &mut R, eps: f64| -> Result<f64> {
        let mut z = state.clone();
        ham.sample_momentum(rng, &mut z.p);
        let h0 = ham.energy(&z);
        ham.leapfrog(&mut z, eps)?;
        let dh = h0 - ham.energy(&z);
        Ok(if dh.is_nan() { f64::NEG_INFINITY } else { dh })
    };
    let target = 0.8f64.ln();
    let direction = if probe(rng, eps)? > target { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let dh = probe(rng, eps)?;
        if (direction > 0.0 && !(dh > target)) || (direction < 0.0 && !(dh < target)) {
            break;
        }
        eps = if direction > 0.0 { 2.0 * eps } else { 0.5 * eps };
        if eps > 1e7 {
            return Err(Error::numeric("step size search diverged; the posterior may be improper"));
        }
        if eps < 1e-12 {
            break;
        }
    }
    Ok(eps)
}

/// Run one chain from `init`.
pub fn run_chain<T: LogDensity + ?Sized>(target: &T, cfg: &SamplerConfig, chain: usize, init: &[f64]) -> Result<PosteriorChain> {
    let mut rng = chain_rng(cfg.seed, chain);
    run_chain_with_rng(target, cfg, chain, init, &mut rng)
}

fn run_chain_with_rng<T: LogDensity + ?Sized, R: Rng>(
    target: &T,
    cfg: &SamplerConfig,
    chain: usize,
    init: &[f64],
    rng: &mut R,
) -> Result<PosteriorChain> {
    cfg.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::shape(format!("initial point has {} entries, target has {dim}", init.len())));
    }
    let mut ham = Hamiltonian { target, inv_metric: vec![1.0; dim] };
    let mut state = State { q: init.to_vec(), p: vec![0.0; dim], grad: vec![0.0; dim], logp: 0.0 };
    ham.update(&mut state)?;
    if !state.logp.is_finite() {
        return Err(Error::numeric("log density is not finite at the initial point"));
    }
    let mut eps = initial_step_size(&ham, rng, &state, 1.0)?;
    let mut da = DualAveraging::new(eps, cfg.target_accept);
    let mut windows = Windows::new(cfg.burn_in);
    let mut welford = Welford::new(dim);
    let max_depth = cfg.max_depth();

    let mut out = PosteriorChain {
        chain,
        seed: cfg.seed,
        draws: Vec::with_capacity(cfg.retained()),
        accept_stat: Vec::with_capacity(cfg.retained()),
        n_leapfrog: Vec::with_capacity(cfg.retained()),
        divergent: Vec::with_capacity(cfg.retained()),
        warmup_divergences: 0,
        adaptation: Adaptation { step_size: eps, inv_metric: vec![1.0; dim] },
        warnings: Vec::new(),
    };
    for it in 0..cfg.iterations {
        let tr = match cfg.algorithm {
            Algorithm::Nuts => nuts_transition(&ham, rng, &state, eps, max_depth)?,
            Algorithm::Hmc => hmc_transition(&ham, rng, &state, eps, cfg.leapfrog_steps)?,
        };
        state = tr.state;
        if it < cfg.burn_in {
            out.warmup_divergences += tr.divergent as usize;
            eps = da.update(tr.accept_stat);
            if let Some(w) = windows.as_mut() {
                if w.in_window(it) {
                    welford.add(&state.q);
                }
                if w.end_of_window(it) {
                    ham.inv_metric = welford.regularized_variance();
                    welford = Welford::new(dim);
                    eps = initial_step_size(&ham, rng, &state, eps)?;
                    da = DualAveraging::new(eps, cfg.target_accept);
                }
            }
            if it + 1 == cfg.burn_in {
                eps = da.final_step();
                out.adaptation = Adaptation { step_size: eps, inv_metric: ham.inv_metric.clone() };
            }
            continue;
        }
        if (it - cfg.burn_in + 1) % cfg.thin == 0 {
            out.draws.push(state.q.clone());
            out.accept_stat.push(tr.accept_stat);
            out.n_leapfrog.push(tr.n_leapfrog);
            out.divergent.push(tr.divergent);
        }
    }
    if cfg.burn_in == 0 {
        out.adaptation = Adaptation { step_size: eps, inv_metric: ham.inv_metric.clone() };
    }
    let n_div = out.n_divergent();
    if !out.draws.is_empty() && n_div as f64 > cfg.divergence_warning * out.draws.len() as f64 {
        out.warnings.push(format!(
            "chain {chain}: {n_div} of {} retained transitions diverged; results may be biased",
            out.draws.len()
        ));
    }
    if out.draws.len() != cfg.retained() {
        return Err(Error::numeric("retained draw count does not match the configuration"));
    }
    Ok(out)
}

/// Run `cfg.chains` chains. Chain `k` draws its initial point from `init`
/// with its own RNG stream; up to 100 attempts are made to find a point with
/// finite log density.
pub fn run_hmc<T, F>(target: &T, cfg: &SamplerConfig, mut init: F) -> Result<Vec<PosteriorChain>>
where
    T: LogDensity + ?Sized,
    F: FnMut(&mut ChaCha8Rng) -> Vec<f64>,
{
    cfg.validate()?;
    let mut grad = vec![0.0; target.dim()];
    (0..cfg.chains)
        .map(|k| {
            let mut rng = chain_rng(cfg.seed, k);
            let mut start = None;
            for _ in 0..100 {
                let x = init(&mut rng);
                if matches!(target.log_density_grad(&x, &mut grad), Ok(lp) if lp.is_finite())
                    && grad.iter().all(|g| g.is_finite())
                {
                    start = Some(x);
                    break;
                }
            }
            let start = start.ok_or_else(|| Error::numeric(format!("chain {k}: no initial point with finite log density")))?;
            run_chain_with_rng(target, cfg, k, &start, &mut rng)
        })
        .collect()
}

/// One leapfrog step of size `eps` under a unit metric; exposed for
/// reversibility checks.
pub fn leapfrog_unit<T: LogDensity + ?Sized>(target: &T, q: &mut [f64], p: &mut [f64], eps: f64) -> Result<()> {
    let ham = Hamiltonian { target, inv_metric: vec![1.0; q.len()] };
    let mut s = State { q: q.to_vec(), p: p.to_vec(), grad: vec![0.0; q.len()], logp: 0.0 };
    ham.update(&mut s)?;
    ham.leapfrog(&mut s, eps)?;
    q.copy_from_slice(&s.q);
    p.copy_from_slice(&s.p);
    Ok(())
}

/// Multivariate normal target with precision matrix `prec` (row-major), for tests.
#[derive(Clone, Debug)]
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    pub prec: Vec<f64>,
}

impl GaussianTarget {
    /// Bivariate normal with unit variances and correlation `rho`.
    pub fn bivariate(rho: f64) -> Self {
        let d = 1.0 - rho * rho;
        Self { mean: vec![0.0, 0.0], prec: vec![1.0 / d, -rho / d, -rho / d, 1.0 / d] }
    }
}

impl LogDensity for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let d = self.mean.len();
        let r: Vec<f64> = x.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        let mut lp = 0.0;
        for i in 0..d {
            let row: f64 = (0..d).map(|j| self.prec[i * d + j] * r[j]).sum();
            grad[i] = -row;
            lp -= 0.5 * r[i] * row;
        }
        Ok(lp)
    }
}
