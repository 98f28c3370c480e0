//! Group score distributions of a model trained on under-reported data.
//!
//! Within a group, a row's target entry is either observed (prediction
//! `α̂ + β̂ᵀZ`) or zeroed (prediction `α̂ + β̂_tailᵀZ_tail`), so predictions
//! follow a two-component Gaussian mixture weighted by the group's reporting
//! rate. Which component has the heavier upper tail decides whether the more
//! under-reported group is over- or under-selected at high thresholds.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datamodel::{GaussianPopulation, LinearModel};
use crate::error::{Error, Result};
use crate::estimate::{orthogonalize_tail, population_biased_params, MomentSet};
use crate::matrix::dot;
use crate::stats::{bisect_quantile, gaussian_cdf};

/// Distance from `-c` below which the decision quantity counts as a tie.
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseLabel {
    /// The more under-reported group is over-selected at high thresholds.
    #[serde(rename = "Case1_overselected")]
    Case1Overselected,
    /// The more under-reported group is under-selected at high thresholds.
    #[serde(rename = "Case2_underselected")]
    Case2Underselected,
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub target: usize,
    pub reporting_rate: f64,
    pub r_squared: f64,
    pub s_squared: f64,
    /// `None` when both mixture components have the same spread.
    pub turning_point: Option<f64>,
    pub c: f64,
    /// `(1/β_t) Σ_k β_k Cov(Z_t, Z_k)`.
    pub q: f64,
    pub case_label: CaseLabel,
    pub variance_full: f64,
    pub variance_reduced: f64,
    pub biased_model: LinearModel,
}

/// Means and standard deviations of the two prediction components
/// (zeroed target, observed target), excluding the intercept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Components {
    pub mean_reduced: f64,
    pub sd_reduced: f64,
    pub mean_full: f64,
    pub sd_full: f64,
}

pub fn components(model: &LinearModel, pop: &GaussianPopulation, target: usize) -> Result<Components> {
    let d = pop.d();
    if model.dim() != d {
        return Err(Error::Dimension(format!(
            "model with {} coefficients for {d} features",
            model.dim()
        )));
    }
    if target >= d {
        return Err(Error::InvalidArgument(format!("target {target} out of range")));
    }
    let mut reduced = model.beta.clone();
    reduced[target] = 0.0;
    let var_full = pop.sigma.quadratic_form(&model.beta).max(0.0);
    let var_red = pop.sigma.quadratic_form(&reduced).max(0.0);
    Ok(Components {
        mean_reduced: dot(&reduced, &pop.mu),
        sd_reduced: libm::sqrt(var_red),
        mean_full: dot(&model.beta, &pop.mu),
        sd_full: libm::sqrt(var_full),
    })
}

/// `P(Ŷ ≤ x | G = g)` for predictions of `model` on under-reported features.
///
/// Only the target feature may be under-reported in `pop`. A component with
/// zero spread is a unit step at its mean.
pub fn mixture_cdf(model: &LinearModel, pop: &GaussianPopulation, target: usize, g: u8, x: f64) -> Result<f64> {
    let comp = components(model, pop, target)?;
    let m = group_rate(pop, target, g)?;
    Ok(mixture_cdf_at(&comp, model.alpha, m, x))
}

fn mixture_cdf_at(comp: &Components, alpha: f64, m: f64, x: f64) -> f64 {
    (1.0 - m) * gaussian_cdf(x, alpha + comp.mean_reduced, comp.sd_reduced)
        + m * gaussian_cdf(x, alpha + comp.mean_full, comp.sd_full)
}

fn group_rate(pop: &GaussianPopulation, target: usize, g: u8) -> Result<f64> {
    if g > 1 {
        return Err(Error::InvalidArgument(format!("group {g} is not binary")));
    }
    let rates = pop.rates(g);
    if let Some(k) = (0..pop.d()).find(|&k| k != target && rates[k] != 1.0) {
        return Err(Error::InvalidArgument(format!(
            "feature {k} is under-reported too; the mixture covers one feature"
        )));
    }
    Ok(rates[target])
}

/// Quantile of the group mixture by bisection.
pub fn mixture_quantile(model: &LinearModel, pop: &GaussianPopulation, target: usize, g: u8, p: f64) -> Result<f64> {
    let comp = components(model, pop, target)?;
    let m = group_rate(pop, target, g)?;
    let (lo, hi) = search_bracket(&comp, model.alpha);
    Ok(bisect_quantile(|x| mixture_cdf_at(&comp, model.alpha, m, x), p, lo, hi))
}

fn search_bracket(comp: &Components, alpha: f64) -> (f64, f64) {
    let spread = 40.0 * comp.sd_full.max(comp.sd_reduced).max(1e-12);
    let lo = alpha + comp.mean_full.min(comp.mean_reduced) - spread;
    let hi = alpha + comp.mean_full.max(comp.mean_reduced) + spread;
    (lo, hi)
}

/// Population selection rates per group when the top share `c` of the pooled
/// mixture is selected.
pub fn population_selection_rates(
    model: &LinearModel,
    pop: &GaussianPopulation,
    target: usize,
    c: f64,
) -> Result<[f64; 2]> {
    crate::datamodel::check_share(c)?;
    let comp = components(model, pop, target)?;
    let m0 = group_rate(pop, target, 0)?;
    let m1 = group_rate(pop, target, 1)?;
    let pooled = |x: f64| {
        pop.r * mixture_cdf_at(&comp, model.alpha, m1, x) + (1.0 - pop.r) * mixture_cdf_at(&comp, model.alpha, m0, x)
    };
    let (lo, hi) = search_bracket(&comp, model.alpha);
    let t = bisect_quantile(pooled, 1.0 - c, lo, hi);
    Ok([
        1.0 - mixture_cdf_at(&comp, model.alpha, m0, t),
        1.0 - mixture_cdf_at(&comp, model.alpha, m1, t),
    ])
}

/// Threshold at which the two mixture components' upper tails cross:
/// `T = α̂ + β̂_tailᵀμ_tail + sd_red/(sd_red - sd_full)·β̂_t μ_t`.
pub fn turning_point(model: &LinearModel, pop: &GaussianPopulation, target: usize) -> Result<f64> {
    let comp = components(model, pop, target)?;
    if comp.sd_reduced == comp.sd_full {
        return Err(Error::EqualDeviations);
    }
    let shift = comp.sd_reduced / (comp.sd_reduced - comp.sd_full) * model.beta[target] * pop.mu[target];
    Ok(model.alpha + comp.mean_reduced + shift)
}

/// The constant `c` separating over- from under-selection.
pub fn corollary_constant(var_z1: f64, mean_z1: f64, m: f64, s2: f64) -> Result<f64> {
    if !(var_z1 > 0.0) {
        return Err(Error::InvalidArgument(format!("variance {var_z1} must be positive")));
    }
    if !(m > 0.0 && m <= 1.0) {
        return Err(Error::InvalidArgument(format!("reporting rate {m} outside (0,1]")));
    }
    if !(0.0..1.0).contains(&s2) {
        return Err(Error::InvalidArgument(format!("S^2 = {s2} outside [0,1)")));
    }
    let e2 = var_z1 + mean_z1 * mean_z1;
    let num = var_z1 * var_z1 * (1.0 - s2) + 2.0 * (1.0 - m) * e2 * var_z1 * s2;
    let den = 2.0 * var_z1 * (1.0 - s2) * m + 2.0 * (1.0 - m) * e2;
    Ok(num / den)
}

/// Labels the high-threshold selection regime of the more under-reported
/// group and checks it against the direct variance comparison.
///
/// Correlated tail features are whitened first; every reported quantity is
/// invariant under that rotation.
pub fn classify_case(pop: &GaussianPopulation, target: usize) -> Result<TheoryReport> {
    pop.validate()?;
    let model = pop.true_model();
    if target >= pop.d() {
        return Err(Error::InvalidArgument(format!("target {target} out of range")));
    }
    let b1 = model.beta[target];
    if b1 == 0.0 {
        return Err(Error::InvalidArgument("target coefficient is zero".into()));
    }
    let moments = MomentSet::from_population(pop, target)?;
    let o = orthogonalize_tail(&moments, &model)?;
    let rotated = population_biased_params(&o.moments, &o.model)?;
    let biased = o.back_transform(&rotated);

    let s2 = o.moments.s_squared();
    let v1 = moments.cov.get(target, target);
    let c = corollary_constant(v1, moments.mean[target], moments.reporting_rate, s2)?;
    let q = (0..pop.d())
        .filter(|&k| k != target)
        .map(|k| model.beta[k] * pop.sigma.get(target, k))
        .sum::<f64>()
        / b1;

    let comp = components(&biased, pop, target)?;
    let variance_full = comp.sd_full * comp.sd_full;
    let variance_reduced = comp.sd_reduced * comp.sd_reduced;
    let case_label = if libm::fabs(q + c) <= BOUNDARY_TOLERANCE {
        CaseLabel::Boundary
    } else if q < -c {
        CaseLabel::Case1Overselected
    } else {
        CaseLabel::Case2Underselected
    };
    let gap = variance_reduced - variance_full;
    let scale = variance_full.max(variance_reduced).max(f64::MIN_POSITIVE);
    if case_label != CaseLabel::Boundary && libm::fabs(gap) > 1e-9 * scale {
        let by_variance = if gap > 0.0 {
            CaseLabel::Case1Overselected
        } else {
            CaseLabel::Case2Underselected
        };
        if by_variance != case_label {
            return Err(Error::Inconsistent(format!(
                "q = {q}, c = {c} gives {case_label:?} but component variances give {by_variance:?}"
            )));
        }
    }
    let turning_point = match turning_point(&biased, pop, target) {
        Ok(t) => Some(t),
        Err(Error::EqualDeviations) => None,
        Err(e) => return Err(e),
    };
    Ok(TheoryReport {
        target,
        reporting_rate: moments.reporting_rate,
        r_squared: o.moments.r_squared(),
        s_squared: s2,
        turning_point,
        c,
        q,
        case_label,
        variance_full,
        variance_reduced,
        biased_model: biased,
    })
}

/// Biased population model for `pop`, whitening correlated tails as needed.
pub fn biased_model(pop: &GaussianPopulation, target: usize) -> Result<LinearModel> {
    let moments = MomentSet::from_population(pop, target)?;
    crate::estimate::population_biased_params_general(&moments, &pop.true_model())
}

/// Grid helper for monotonicity checks.
pub fn cdf_grid(model: &LinearModel, pop: &GaussianPopulation, target: usize, g: u8, points: usize) -> Result<Vec<f64>> {
    let comp = components(model, pop, target)?;
    let m = group_rate(pop, target, g)?;
    let (lo, hi) = search_bracket(&comp, model.alpha);
    let step = (hi - lo) / (points.max(2) - 1) as f64;
    Ok((0..points).map(|i| mixture_cdf_at(&comp, model.alpha, m, lo + step * i as f64)).collect())
}
