//! Semi-synthetic outcomes with an exact linear ground truth, and additive
//! outcome noise at a target fit quality.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::classify::{fit_logistic, LogisticOptions};
use crate::datamodel::{Dataset, LinearModel, NoiseSpec};
use crate::error::{Error, Result};
use crate::estimate::ols_fit;
use crate::rng::{seeded_rng, standard_normal};
use crate::stats::variance;

/// Affine map `a + b·p` applied to fitted probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rescale {
    pub a: f64,
    pub b: f64,
}

/// Replaces a binary label by a linear outcome.
///
/// A logistic regression of the label on the features gives fitted
/// probabilities; optionally rescaled, these are regressed on the same
/// features by OLS and the OLS fitted values become the new outcome. The OLS
/// model is returned as the ground truth, so the outcome lies exactly in the
/// span of the intercept and the features.
pub fn make_semisynthetic_outcomes(d: &Dataset, rescale: Option<Rescale>) -> Result<(Dataset, LinearModel)> {
    let y = d.outcomes()?;
    let labels: Vec<bool> = y
        .iter()
        .enumerate()
        .map(|(i, &v)| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            v => Err(Error::InvalidArgument(format!("label {v} at row {i} is not binary"))),
        })
        .collect::<Result<_>>()?;
    let features = d.latent_or_observed();
    let logit = fit_logistic(features, &labels, &LogisticOptions::default())?.require_converged()?;
    let probs: Vec<f64> = features
        .row_iter()
        .map(|r| {
            let p = logit.probability(r);
            rescale.map_or(p, |s| s.a + s.b * p)
        })
        .collect();
    let model = ols_fit(features, &probs)?.with_names(d.feature_names.clone());
    let fitted = model.predict_all(features)?;
    let mut out = d.with_outcomes(fitted)?;
    out.provenance.insert("outcome".to_string(), "semisynthetic".to_string());
    out.provenance.insert("logistic_iterations".to_string(), format!("{}", logit.iterations));
    if let Some(s) = rescale {
        out.provenance.insert("rescale".to_string(), format!("{},{}", s.a, s.b));
    }
    Ok((out, model))
}

/// Noise variance giving population fit quality `target_r2` for outcomes with
/// the given fitted values: `σ² = (1 - R²)/R² · Var(fitted)`.
pub fn noise_variance(fitted: &[f64], target_r2: f64) -> Result<f64> {
    NoiseSpec::new(target_r2, 0)?;
    if target_r2 == 1.0 {
        return Ok(0.0);
    }
    let v = variance(fitted);
    if !(v > 0.0) {
        return Err(Error::Degenerate("fitted values have zero variance".into()));
    }
    Ok((1.0 - target_r2) / target_r2 * v)
}

/// Adds i.i.d. Gaussian noise to outcomes that equal `true_model` applied to
/// the features. The noise variance is written to the provenance.
pub fn add_outcome_noise(d: &Dataset, true_model: &LinearModel, spec: &NoiseSpec) -> Result<Dataset> {
    let y = d.outcomes()?;
    let fitted = true_model.predict_all(d.latent_or_observed())?;
    if let Some(i) = (0..y.len()).find(|&i| libm::fabs(y[i] - fitted[i]) > 1e-10 * (1.0 + libm::fabs(fitted[i]))) {
        return Err(Error::InvalidArgument(format!(
            "outcome at row {i} differs from the model prediction ({} vs {})",
            y[i], fitted[i]
        )));
    }
    let sigma_sq = noise_variance(&fitted, spec.target_r2)?;
    let mut out = d.clone();
    if sigma_sq > 0.0 {
        let sd = libm::sqrt(sigma_sq);
        let mut rng = seeded_rng(spec.seed);
        out.y = Some(y.iter().map(|v| v + sd * standard_normal(&mut rng)).collect());
    }
    out.provenance.insert("noise_target_r2".to_string(), format!("{}", spec.target_r2));
    out.provenance.insert("noise_sigma_sq".to_string(), format!("{sigma_sq}"));
    out.provenance.insert("noise_seed".to_string(), format!("{}", spec.seed));
    Ok(out)
}
