//! Exact simulation from the joint model.
//!
//! Per subject: random effects, then the event time by inverting the
//! subject's survival function at a uniform draw, then longitudinal outcomes
//! at visit times up to the observed follow-up. Competing risks use latent
//! cause-specific times and record the earliest.
//!
//! Every subject draws from its own ChaCha stream keyed by `(seed, index)`,
//! so a dataset does not depend on how many subjects are generated after it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::config::{ScenarioConfig, Schedule};
use crate::data::{JointDataset, Subject};
use crate::error::{Error, Result};
use crate::ghsurv::{exponents, CauseParams, EventRecord, Shared, SurvivalDesign, SurvivalSpec};
use crate::longitudinal::{linear_predictor, Covariates, OutcomeFamily};
use crate::model::{ModelSpec, ParameterVector};
use crate::special::sigmoid;

/// Subjects used to calibrate the administrative censoring time.
pub const CALIBRATION_SIZE: usize = 100_000;
const CALIBRATION_KEY: u64 = 0x3c6e_f372_fe94_f82b;

/// Time at which the subject's survival function equals `1 − u`.
pub fn simulate_event_time(
    spec: &SurvivalSpec,
    p: &CauseParams,
    shared: Shared<'_>,
    d: &SurvivalDesign,
    u: f64,
) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::domain(format!("uniform draw must lie in (0, 1), got {u}")));
    }
    let e = exponents(spec, p, shared, d)?;
    let h0 = -(-u).ln_1p() * (e.time - e.hazard).exp();
    let t = p.baseline.inverse_cum_hazard0(h0)? / e.time.exp();
    if t > 0.0 && t.is_finite() {
        Ok(t)
    } else {
        Err(Error::numeric(format!("simulated event time is not representable ({t}) at u = {u}")))
    }
}

/// Raw age from the three-component uniform mixture.
pub fn draw_raw_age<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let c: f64 = rng.random();
    let (lo, hi) = if c < 0.25 {
        (30.0, 65.0)
    } else if c < 0.60 {
        (65.0, 75.0)
    } else {
        (75.0, 85.0)
    };
    rng.random_range(lo..hi)
}

/// Age (centred at 70, per decade), sex and comorbidity indicators.
pub fn draw_covariates<R: Rng + ?Sized>(rng: &mut R) -> Covariates {
    let age = (draw_raw_age(rng) - 70.0) / 10.0;
    let sex = f64::from(u8::from(rng.random_bool(0.5)));
    let comorb = f64::from(u8::from(rng.random_bool(0.5)));
    Covariates::from([("age".to_string(), age), ("sex".to_string(), sex), ("comorb".to_string(), comorb)])
}

fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Latent event draw: the earliest cause-specific time and its cause index.
fn latent_event<R: Rng + ?Sized>(
    spec: &ModelSpec,
    truth: &ParameterVector,
    cov: &Covariates,
    b: [f64; 2],
    rng: &mut R,
) -> Result<(f64, usize)> {
    let x_tilde = spec.longitudinal.design(cov)?.x_tilde;
    let shared = Shared { gamma: &truth.long.gamma, x_tilde: &x_tilde, b };
    let mut best = (f64::INFINITY, 0);
    for (k, (c, p)) in spec.causes.iter().zip(&truth.causes).enumerate() {
        let d = c.design(cov)?;
        let t = simulate_event_time(c, p, shared, &d, uniform_open(rng))?;
        if t < best.0 {
            best = (t, k);
        }
    }
    Ok(best)
}

fn draw_b<R: Rng + ?Sized>(truth: &ParameterVector, rng: &mut R) -> [f64; 2] {
    let z = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
    truth.re.correlate(z)
}

fn random_censoring<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate > 0.0 {
        Exp::new(rate).expect("positive rate").sample(rng)
    } else {
        f64::INFINITY
    }
}

fn subject_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Latent event times and random-censoring times of a large reference cohort.
struct ReferenceCohort {
    event: Vec<f64>,
    random: Vec<f64>,
}

impl ReferenceCohort {
    fn draw(spec: &ModelSpec, truth: &ParameterVector, random_rate: f64, seed: u64, size: usize) -> Result<Self> {
        let mut event = Vec::with_capacity(size);
        let mut random = Vec::with_capacity(size);
        for i in 0..size {
            let mut rng = subject_rng(seed ^ CALIBRATION_KEY, i);
            let cov = draw_covariates(&mut rng);
            let b = draw_b(truth, &mut rng);
            event.push(latent_event(spec, truth, &cov, b, &mut rng)?.0);
            random.push(random_censoring(random_rate, &mut rng));
        }
        Ok(Self { event, random })
    }

    fn rate(&self, admin: f64) -> f64 {
        let c = self.event.iter().zip(&self.random).filter(|(t, r)| **t > admin.min(**r)).count();
        c as f64 / self.event.len() as f64
    }

    fn median_event(&self) -> f64 {
        crate::stats::quantile(&self.event, 0.5)
    }
}

/// Administrative censoring time giving censoring proportion `target` in a
/// reference cohort of [`CALIBRATION_SIZE`] subjects.
pub fn calibrate_censoring(spec: &ModelSpec, truth: &ParameterVector, random_rate: f64, target: f64, seed: u64) -> Result<f64> {
    let cohort = ReferenceCohort::draw(spec, truth, random_rate, seed, CALIBRATION_SIZE)?;
    calibrate_on(&cohort, target)
}

fn calibrate_on(cohort: &ReferenceCohort, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::domain(format!("censoring target must lie in (0, 1), got {target}")));
    }
    let floor = cohort.rate(f64::INFINITY);
    if floor > target + 0.01 {
        return Err(Error::validation(format!(
            "censoring target {target} is unattainable: random censoring alone censors {floor:.4}"
        )));
    }
    let t_max = cohort.event.iter().copied().fold(0.0, f64::max);
    let n = cohort.event.len() as f64;
    if target * n < 1.0 {
        // Below the resolution of the cohort: censor beyond every event seen.
        return Ok(2.0 * t_max);
    }
    let t_min = cohort.event.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (t_min.ln() - 1.0, t_max.ln() + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cohort.rate(mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(hi.exp())
}

/// A scenario with its censoring time and visit spacing resolved.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub spec: ModelSpec,
    pub truth: ParameterVector,
    pub admin_time: f64,
    pub random_rate: f64,
    pub schedule: ResolvedSchedule,
    pub seed: u64,
    /// Censoring proportion of the reference cohort at `admin_time`.
    pub expected_censoring: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResolvedSchedule {
    Equidistant { delta: f64 },
    Exponential { rate: f64 },
    Mixed { delta: f64, rate: f64 },
}

impl ResolvedSchedule {
    /// Visit times in `[0, end]`.
    pub fn visits<R: Rng + ?Sized>(&self, end: f64, rng: &mut R) -> Vec<f64> {
        let periodic = |delta: f64| -> Vec<f64> { (0..).map(|k| k as f64 * delta).take_while(|t| *t <= end).collect() };
        let random = |rate: f64, rng: &mut R| -> Vec<f64> {
            let gap = Exp::new(rate).expect("positive rate");
            let mut out = Vec::new();
            let mut t = gap.sample(rng);
            while t <= end {
                out.push(t);
                t += gap.sample(rng);
            }
            out
        };
        match *self {
            ResolvedSchedule::Equidistant { delta } => periodic(delta),
            ResolvedSchedule::Exponential { rate } => random(rate, rng),
            ResolvedSchedule::Mixed { delta, rate } => {
                let mut v = periodic(delta);
                v.extend(random(rate, rng));
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            }
        }
    }
}

/// One simulated subject with the unobserved quantities kept alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedSubject {
    pub subject: Subject,
    pub b: [f64; 2],
    pub latent_time: f64,
    pub latent_cause: usize,
}

impl Simulator {
    pub fn new(scenario: &ScenarioConfig) -> Result<Self> {
        scenario.validate()?;
        let spec = scenario.generating_spec()?;
        let truth = scenario.truth_parameters()?;
        let rate = scenario.censoring.random_rate;
        let cohort = ReferenceCohort::draw(&spec, &truth, rate, scenario.seed, CALIBRATION_SIZE)?;
        let admin_time = match (scenario.censoring.target, scenario.censoring.admin_time) {
            (Some(t), _) => calibrate_on(&cohort, t)?,
            (None, Some(a)) => a,
            (None, None) => unreachable!("validated"),
        };
        let delta = |d: Option<f64>| d.unwrap_or(cohort.median_event() / 5.0);
        let schedule = match scenario.schedule {
            Schedule::Equidistant { delta: d } => ResolvedSchedule::Equidistant { delta: delta(d) },
            Schedule::Exponential { rate } => ResolvedSchedule::Exponential { rate },
            Schedule::Mixed { delta: d, rate } => ResolvedSchedule::Mixed { delta: delta(d), rate },
        };
        Ok(Self {
            spec,
            truth,
            admin_time,
            random_rate: rate,
            schedule,
            seed: scenario.seed,
            expected_censoring: cohort.rate(admin_time),
        })
    }

    /// Subject `i` (0-based); ids are `i + 1`.
    pub fn subject(&self, i: usize) -> Result<SimulatedSubject> {
        let mut rng = subject_rng(self.seed, i);
        let covariates = draw_covariates(&mut rng);
        let b = draw_b(&self.truth, &mut rng);
        let (t, k) = latent_event(&self.spec, &self.truth, &covariates, b, &mut rng)?;
        let c = self.admin_time.min(random_censoring(self.random_rate, &mut rng));
        let event = if t <= c {
            let rec = EventRecord::exact(t);
            if self.spec.causes.len() > 1 { rec.with_cause(&self.spec.causes[k].cause) } else { rec }
        } else {
            EventRecord::right(c)
        };
        let obs_times = self.schedule.visits(t.min(c), &mut rng);
        let design = self.spec.longitudinal.design(&covariates)?;
        let outcomes = obs_times
            .iter()
            .map(|&tj| {
                let eta = linear_predictor(&self.spec.longitudinal, &self.truth.long, b, &design, tj)?;
                Ok(match self.spec.longitudinal.family {
                    OutcomeFamily::Gaussian => {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        eta + self.truth.long.sigma2.sqrt() * e
                    }
                    OutcomeFamily::BernoulliLogit => f64::from(u8::from(rng.random_bool(sigmoid(eta)))),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SimulatedSubject {
            subject: Subject { id: (i + 1).to_string(), covariates, obs_times, outcomes, event },
            b,
            latent_time: t,
            latent_cause: k,
        })
    }

    /// The first `n` subjects as a dataset, with their random effects.
    pub fn dataset(&self, n: usize) -> Result<(JointDataset, Vec<[f64; 2]>)> {
        if n == 0 {
            return Err(Error::validation("n must be at least 1"));
        }
        let sims = (0..n).map(|i| self.subject(i)).collect::<Result<Vec<_>>>()?;
        let b = sims.iter().map(|s| s.b).collect();
        let data = JointDataset::new(sims.into_iter().map(|s| s.subject).collect())?;
        Ok((data, b))
    }

    /// Same generating model with a different seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}
