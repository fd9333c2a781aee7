//! Posterior-predictive baseline curves for single and competing causes.
//!
//! Every predictive quantity is a Monte Carlo average over retained
//! posterior draws. The predictive hazard is the ratio of the averaged
//! density to the averaged survival function, which is computed as an
//! `S`-weighted mean of the per-draw hazards so that a chain of identical
//! draws reproduces the plug-in curve bit for bit. Bands are pointwise
//! 2.5% and 97.5% quantiles of the per-draw curves.
//!
//! Cumulative incidence functions are integrated with the trapezoid rule on
//! the caller's grid, so grid density controls their accuracy. Mass before
//! the first grid point is `1 − S(t₁)`, split across causes in proportion to
//! their densities at `t₁`.

use std::io::Write;

use crate::baseline::BaselineHazard;
use crate::error::{Error, Result};
use crate::posterior::JointModel;
use crate::sampler::PosteriorChain;
use crate::stats::quantile_sorted;

/// Pointwise summary of a curve at one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    /// The posterior-predictive value.
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselinePrediction {
    pub t: Vec<f64>,
    pub hazard: Vec<Band>,
    pub survival: Vec<Band>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CauseCurves {
    pub hazard: Vec<Band>,
    pub cif: Vec<Band>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompetingPrediction {
    pub t: Vec<f64>,
    /// Overall survival `Π_k exp(−H_k0)`.
    pub survival: Vec<Band>,
    pub causes: Vec<CauseCurves>,
}

/// Running mean that is exact when all inputs are equal.
fn stable_mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut m = 0.0;
    for (k, x) in xs.into_iter().enumerate() {
        m += (x - m) / (k + 1) as f64;
    }
    m
}

/// `Σ w_d x_d / Σ w_d` with `w_d = exp(log_w_d)`, computed stably.
fn weighted_mean(x: &[f64], log_w: &[f64]) -> f64 {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return stable_mean(x.iter().copied());
    }
    let (mut m, mut total) = (0.0, 0.0);
    for (&xi, &lw) in x.iter().zip(log_w) {
        let w = (lw - max).exp();
        if w == 0.0 {
            continue;
        }
        total += w;
        m += w / total * (xi - m);
    }
    m
}

fn band(mean: f64, values: &mut [f64]) -> Band {
    values.sort_by(f64::total_cmp);
    Band {
        mean,
        median: quantile_sorted(values, 0.5),
        lower: quantile_sorted(values, 0.025),
        upper: quantile_sorted(values, 0.975),
    }
}

fn check_grid(t_grid: &[f64], increasing: bool) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::validation("empty time grid"));
    }
    if let Some(t) = t_grid.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::domain(format!("prediction times must be positive and finite, got {t}")));
    }
    if increasing && t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("time grid must be strictly increasing"));
    }
    Ok(())
}

/// Predictive baseline hazard and survival on `t_grid`.
pub fn predictive_baseline(draws: &[BaselineHazard], t_grid: &[f64]) -> Result<BaselinePrediction> {
    if draws.is_empty() {
        return Err(Error::validation("no posterior draws"));
    }
    check_grid(t_grid, false)?;
    let n = draws.len();
    let mut h = vec![0.0; n];
    let mut log_s = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut out = BaselinePrediction { t: t_grid.to_vec(), hazard: vec![], survival: vec![] };
    for &t in t_grid {
        for (d, b) in draws.iter().enumerate() {
            h[d] = b.hazard0(t)?;
            log_s[d] = -b.cum_hazard0(t)?;
            s[d] = log_s[d].exp();
        }
        let hazard_mean = weighted_mean(&h, &log_s);
        let survival_mean = stable_mean(s.iter().copied());
        out.hazard.push(band(hazard_mean, &mut h.clone()));
        out.survival.push(band(survival_mean, &mut s.clone()));
    }
    Ok(out)
}

/// Per-cause predictive hazards and cumulative incidence functions.
/// `draws[d][k]` is the baseline of cause `k` in draw `d`.
pub fn cr_predictive(draws: &[Vec<BaselineHazard>], t_grid: &[f64]) -> Result<CompetingPrediction> {
    if draws.is_empty() {
        return Err(Error::validation("no posterior draws"));
    }
    let k_causes = draws[0].len();
    if k_causes == 0 || draws.iter().any(|d| d.len() != k_causes) {
        return Err(Error::shape("every draw needs the same, non-zero number of causes"));
    }
    check_grid(t_grid, true)?;
    let n = draws.len();
    let m = t_grid.len();
    // Per-draw curves, indexed [grid][draw] and [cause][grid][draw].
    let mut log_s = vec![vec![0.0; n]; m];
    let mut h = vec![vec![vec![0.0; n]; m]; k_causes];
    for (j, &t) in t_grid.iter().enumerate() {
        for (d, causes) in draws.iter().enumerate() {
            let mut cum = 0.0;
            for (k, b) in causes.iter().enumerate() {
                h[k][j][d] = b.hazard0(t)?;
                cum += b.cum_hazard0(t)?;
            }
            log_s[j][d] = -cum;
        }
    }
    let s: Vec<Vec<f64>> = log_s.iter().map(|row| row.iter().map(|v| v.exp()).collect()).collect();
    let f: Vec<Vec<Vec<f64>>> = h
        .iter()
        .map(|hk| hk.iter().zip(&s).map(|(hj, sj)| hj.iter().zip(sj).map(|(a, b)| a * b).collect()).collect())
        .collect();

    let survival_mean: Vec<f64> = s.iter().map(|row| stable_mean(row.iter().copied())).collect();
    let f_mean: Vec<Vec<f64>> = f.iter().map(|fk| fk.iter().map(|row| stable_mean(row.iter().copied())).collect()).collect();

    let cif_of = |dens: &dyn Fn(usize, usize) -> f64, s1: f64| -> Vec<Vec<f64>> {
        let first: Vec<f64> = (0..k_causes).map(|k| dens(k, 0)).collect();
        let total: f64 = first.iter().sum();
        (0..k_causes)
            .map(|k| {
                let share = if total > 0.0 { first[k] / total } else { 1.0 / k_causes as f64 };
                let mut acc = (1.0 - s1) * share;
                let mut curve = Vec::with_capacity(m);
                curve.push(acc);
                for j in 1..m {
                    acc += 0.5 * (t_grid[j] - t_grid[j - 1]) * (dens(k, j) + dens(k, j - 1));
                    curve.push(acc);
                }
                curve
            })
            .collect()
    };
    let cif_mean = cif_of(&|k, j| f_mean[k][j], survival_mean[0]);
    // Per-draw incidence curves, [draw][cause][grid].
    let cif_draws: Vec<Vec<Vec<f64>>> = (0..n).map(|d| cif_of(&|k, j| f[k][j][d], s[0][d])).collect();

    let survival = (0..m).map(|j| band(survival_mean[j], &mut s[j].clone())).collect();
    let causes = (0..k_causes)
        .map(|k| CauseCurves {
            hazard: (0..m).map(|j| band(weighted_mean(&h[k][j], &log_s[j]), &mut h[k][j].clone())).collect(),
            cif: (0..m)
                .map(|j| {
                    let mut v: Vec<f64> = cif_draws.iter().map(|c| c[k][j]).collect();
                    band(cif_mean[k][j], &mut v)
                })
                .collect(),
        })
        .collect();
    Ok(CompetingPrediction { t: t_grid.to_vec(), survival, causes })
}

/// Baseline hazards of cause `cause` for every retained draw of `chains`.
pub fn baseline_draws(model: &JointModel, chains: &[PosteriorChain], cause: usize) -> Result<Vec<BaselineHazard>> {
    let spec = model
        .spec
        .causes
        .get(cause)
        .ok_or_else(|| Error::validation(format!("the model has no cause number {}", cause + 1)))?;
    let range = model.layout.causes[cause].theta.clone();
    let family = spec.family;
    chains
        .iter()
        .flat_map(|c| &c.draws)
        .map(|u| {
            if u.len() != model.dim() {
                return Err(Error::shape("draw length differs from the model dimension"));
            }
            let p = family.constrain(&u[range.clone()]);
            BaselineHazard::new(family, &p[..family.n_params()])
        })
        .collect()
}

/// Per-draw baselines of every cause, `[draw][cause]`.
pub fn all_baseline_draws(model: &JointModel, chains: &[PosteriorChain]) -> Result<Vec<Vec<BaselineHazard>>> {
    let per_cause: Vec<Vec<BaselineHazard>> =
        (0..model.spec.causes.len()).map(|k| baseline_draws(model, chains, k)).collect::<Result<_>>()?;
    let n = per_cause.first().map_or(0, Vec::len);
    Ok((0..n).map(|d| per_cause.iter().map(|c| c[d]).collect()).collect())
}

/// One row of a long-format curve file.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct CurveRow {
    pub t: f64,
    pub statistic: String,
    pub value: f64,
    pub cause: String,
}

fn push_band(rows: &mut Vec<CurveRow>, t: &[f64], curve: &str, bands: &[Band], cause: &str) {
    for (&ti, b) in t.iter().zip(bands) {
        for (stat, value) in [("mean", b.mean), ("median", b.median), ("q2.5", b.lower), ("q97.5", b.upper)] {
            rows.push(CurveRow { t: ti, statistic: format!("{curve}.{stat}"), value, cause: cause.to_string() });
        }
    }
}

impl BaselinePrediction {
    pub fn rows(&self, cause: &str) -> Vec<CurveRow> {
        let mut rows = Vec::new();
        push_band(&mut rows, &self.t, "hazard", &self.hazard, cause);
        push_band(&mut rows, &self.t, "survival", &self.survival, cause);
        rows
    }
}

impl CompetingPrediction {
    pub fn rows(&self, labels: &[String]) -> Vec<CurveRow> {
        let mut rows = Vec::new();
        push_band(&mut rows, &self.t, "survival", &self.survival, "");
        for (c, label) in self.causes.iter().zip(labels) {
            push_band(&mut rows, &self.t, "hazard", &c.hazard, label);
            push_band(&mut rows, &self.t, "cif", &c.cif, label);
        }
        rows
    }
}

/// Write curve rows as CSV with header `t,statistic,value,cause`.
pub fn write_curves<W: Write>(out: W, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::numeric(format!("writing curves: {e}")))?;
    }
    w.flush().map_err(|e| Error::numeric(format!("writing curves: {e}")))?;
    Ok(())
}
