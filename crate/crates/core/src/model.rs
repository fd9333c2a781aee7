//! Model specification and the flat parameter layout.
//!
//! Flat order: longitudinal block (intercept, slope, β, γ, σ²), random-effect
//! covariance (σ₁², σ₂², ρ), then per cause (θ, κ, κ̃, λ, α₀, α₁), and finally
//! two random-effect coordinates per subject. The same layout serves the
//! constrained vector (natural parameters, `b` in the last block) and the
//! unconstrained sampling vector (log / atanh scales, whitened `z`).

use std::ops::Range;

use crate::baseline::BaselineHazard;
use crate::error::{Error, Result};
use crate::ghsurv::{CauseParams, SurvivalSpec};
use crate::longitudinal::{LongitudinalParams, LongitudinalSpec, RandomEffectsCov};
use crate::priors::PriorConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub longitudinal: LongitudinalSpec,
    /// One survival sub-model per cause; a single entry for ordinary survival.
    pub causes: Vec<SurvivalSpec>,
    pub priors: PriorConfig,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.longitudinal.validate()?;
        if self.causes.is_empty() {
            return Err(Error::shape("at least one survival cause is required"));
        }
        for (k, c) in self.causes.iter().enumerate() {
            c.validate()?;
            if self.causes[..k].iter().any(|o| o.cause == c.cause) {
                return Err(Error::shape(format!("cause label {:?} is used twice", c.cause)));
            }
        }
        self.priors.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CauseLayout {
    pub theta: Range<usize>,
    pub kappa: Range<usize>,
    pub kappa_tilde: Range<usize>,
    pub lambda: Range<usize>,
    pub alpha0: Option<usize>,
    pub alpha1: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub intercept: usize,
    pub slope: usize,
    pub beta: Range<usize>,
    pub gamma: Range<usize>,
    pub sigma2: Option<usize>,
    /// `log σ₁², log σ₂², atanh ρ` start here.
    pub re: usize,
    pub causes: Vec<CauseLayout>,
    pub z: usize,
    pub n_subjects: usize,
    pub dim: usize,
}

fn take(next: &mut usize, n: usize) -> Range<usize> {
    let r = *next..*next + n;
    *next += n;
    r
}

impl Layout {
    pub fn new(spec: &ModelSpec, n_subjects: usize) -> Self {
        let mut next = 2;
        let beta = take(&mut next, spec.longitudinal.n_beta());
        let gamma = take(&mut next, spec.longitudinal.n_gamma());
        let sigma2 = spec.longitudinal.has_dispersion().then(|| take(&mut next, 1).start);
        let re = take(&mut next, 3).start;
        let causes = spec
            .causes
            .iter()
            .map(|c| CauseLayout {
                theta: take(&mut next, c.family.n_params()),
                kappa: take(&mut next, c.time_scale.len()),
                kappa_tilde: take(&mut next, c.hazard_scale.len()),
                lambda: take(&mut next, c.n_lambda()),
                alpha0: c.share_intercept.then(|| take(&mut next, 1).start),
                alpha1: c.share_slope.then(|| take(&mut next, 1).start),
            })
            .collect();
        let z = next;
        Self { intercept: 0, slope: 1, beta, gamma, sigma2, re, causes, z, n_subjects, dim: z + 2 * n_subjects }
    }

    /// Number of coordinates excluding the random effects.
    pub fn n_fixed(&self) -> usize {
        self.z
    }

    pub fn b_index(&self, subject: usize) -> [usize; 2] {
        [self.z + 2 * subject, self.z + 2 * subject + 1]
    }

    /// Column names of the constrained vector.
    pub fn names(&self, spec: &ModelSpec, ids: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim);
        out.push("long.intercept".to_string());
        out.push("long.slope".to_string());
        for t in &spec.longitudinal.terms {
            out.extend(t.column_names().into_iter().map(|c| format!("long.beta[{c}]")));
        }
        out.extend(spec.longitudinal.time_varying.iter().map(|c| format!("long.gamma[{c}]")));
        if self.sigma2.is_some() {
            out.push("long.sigma2".into());
        }
        out.extend(["re.sigma1sq", "re.sigma2sq", "re.rho"].map(String::from));
        for c in &spec.causes {
            let p = format!("surv.{}", c.cause);
            out.extend(c.family.param_names().iter().map(|n| format!("{p}.{n}")));
            out.extend(c.time_scale.iter().map(|n| format!("{p}.kappa[{n}]")));
            out.extend(c.hazard_scale.iter().map(|n| format!("{p}.kappa_tilde[{n}]")));
            for t in &c.terms {
                out.extend(t.column_names().into_iter().map(|n| format!("{p}.lambda[{n}]")));
            }
            if c.share_intercept {
                out.push(format!("{p}.alpha0"));
            }
            if c.share_slope {
                out.push(format!("{p}.alpha1"));
            }
        }
        for id in ids {
            out.push(format!("re.b0[{id}]"));
            out.push(format!("re.b1[{id}]"));
        }
        debug_assert_eq!(out.len(), self.dim);
        out
    }

    /// Whether constrained coordinate `k` is restricted to be positive.
    pub fn is_positive(&self, spec: &ModelSpec, k: usize) -> bool {
        if Some(k) == self.sigma2 || k == self.re || k == self.re + 1 {
            return true;
        }
        self.causes
            .iter()
            .zip(&spec.causes)
            .any(|(cl, c)| cl.theta.contains(&k) && c.family.is_positive(k - cl.theta.start))
    }
}

/// All parameters of a joint model on their natural scales.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    pub long: LongitudinalParams,
    pub re: RandomEffectsCov,
    pub causes: Vec<CauseParams>,
    /// Random effects `(b₀ᵢ, b₁ᵢ)` per subject.
    pub b: Vec<[f64; 2]>,
}

impl ParameterVector {
    /// Flatten in layout order.
    pub fn pack(&self, layout: &Layout) -> Result<Vec<f64>> {
        self.check_shape(layout)?;
        let mut v = vec![0.0; layout.dim];
        v[layout.intercept] = self.long.intercept;
        v[layout.slope] = self.long.slope;
        v[layout.beta.clone()].copy_from_slice(&self.long.beta);
        v[layout.gamma.clone()].copy_from_slice(&self.long.gamma);
        if let Some(k) = layout.sigma2 {
            v[k] = self.long.sigma2;
        }
        v[layout.re] = self.re.sigma1sq;
        v[layout.re + 1] = self.re.sigma2sq;
        v[layout.re + 2] = self.re.rho;
        for (cl, c) in layout.causes.iter().zip(&self.causes) {
            v[cl.theta.clone()].copy_from_slice(c.baseline.params());
            v[cl.kappa.clone()].copy_from_slice(&c.kappa);
            v[cl.kappa_tilde.clone()].copy_from_slice(&c.kappa_tilde);
            v[cl.lambda.clone()].copy_from_slice(&c.lambda);
            if let Some(k) = cl.alpha0 {
                v[k] = c.alpha0;
            }
            if let Some(k) = cl.alpha1 {
                v[k] = c.alpha1;
            }
        }
        for (i, b) in self.b.iter().enumerate() {
            let [k0, k1] = layout.b_index(i);
            v[k0] = b[0];
            v[k1] = b[1];
        }
        Ok(v)
    }

    /// Inverse of [`Self::pack`]; validates every natural-scale constraint.
    pub fn unpack(spec: &ModelSpec, layout: &Layout, v: &[f64]) -> Result<Self> {
        if v.len() != layout.dim {
            return Err(Error::shape(format!("parameter vector has {} entries, layout expects {}", v.len(), layout.dim)));
        }
        let long = LongitudinalParams {
            intercept: v[layout.intercept],
            slope: v[layout.slope],
            beta: v[layout.beta.clone()].to_vec(),
            gamma: v[layout.gamma.clone()].to_vec(),
            sigma2: layout.sigma2.map_or(1.0, |k| v[k]),
        };
        if !(long.sigma2 > 0.0 && long.sigma2.is_finite()) {
            return Err(Error::domain(format!("residual variance must be positive, got {}", long.sigma2)));
        }
        let re = RandomEffectsCov::new(v[layout.re], v[layout.re + 1], v[layout.re + 2])?;
        let causes = layout
            .causes
            .iter()
            .zip(&spec.causes)
            .map(|(cl, c)| {
                Ok(CauseParams {
                    baseline: BaselineHazard::new(c.family, &v[cl.theta.clone()])?,
                    kappa: v[cl.kappa.clone()].to_vec(),
                    kappa_tilde: v[cl.kappa_tilde.clone()].to_vec(),
                    lambda: v[cl.lambda.clone()].to_vec(),
                    alpha0: cl.alpha0.map_or(0.0, |k| v[k]),
                    alpha1: cl.alpha1.map_or(0.0, |k| v[k]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let b = (0..layout.n_subjects).map(|i| layout.b_index(i).map(|k| v[k])).collect();
        Ok(Self { long, re, causes, b })
    }

    fn check_shape(&self, layout: &Layout) -> Result<()> {
        let ok = self.long.beta.len() == layout.beta.len()
            && self.long.gamma.len() == layout.gamma.len()
            && self.causes.len() == layout.causes.len()
            && self.b.len() == layout.n_subjects
            && self.causes.iter().zip(&layout.causes).all(|(c, cl)| {
                c.baseline.params().len() == cl.theta.len()
                    && c.kappa.len() == cl.kappa.len()
                    && c.kappa_tilde.len() == cl.kappa_tilde.len()
                    && c.lambda.len() == cl.lambda.len()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::shape("parameter blocks do not match the model layout"))
        }
    }

    /// A neutral starting point: zero coefficients, unit scales.
    pub fn neutral(spec: &ModelSpec, n_subjects: usize) -> Self {
        Self {
            long: LongitudinalParams::zeros(&spec.longitudinal),
            re: RandomEffectsCov { sigma1sq: 1.0, sigma2sq: 1.0, rho: 0.0 },
            causes: spec
                .causes
                .iter()
                .map(|c| {
                    let theta: Vec<f64> =
                        (0..c.family.n_params()).map(|k| if c.family.is_positive(k) { 1.0 } else { 0.0 }).collect();
                    CauseParams::baseline_only(BaselineHazard::new(c.family, &theta).expect("unit parameters are valid"), c)
                })
                .collect(),
            b: vec![[0.0; 2]; n_subjects],
        }
    }
}
