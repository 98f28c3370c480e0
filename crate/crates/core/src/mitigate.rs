//! Corrections for an under-reported target feature: the augmented loss,
//! optimal imputation of zero entries at prediction time, reporting-rate
//! estimation, and the standard missing-data baselines.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classify::ProbabilityClassifier;
use crate::datamodel::{ClassifierDiagnostics, LinearModel, ObservedView, RateEstimate};
use crate::error::{Error, Result};
use crate::estimate::ols_fit;
use crate::matrix::{dot, Matrix};
use crate::rng::{derive_seed, seeded_rng, CellStream};

/// Relative eigenvalue floor for treating the augmented Hessian as definite.
pub const DEFINITE_TOLERANCE: f64 = 1e-8;
/// Ridge added on fallback, as a multiple of the mean Hessian diagonal.
pub const FALLBACK_RIDGE_SCALE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    GroupBlind,
    GroupDependent,
}

fn check_rate(m: f64) -> Result<()> {
    if !(m > 0.0 && m <= 1.0) {
        return Err(Error::InvalidArgument(format!("reporting rate {m} outside (0,1]")));
    }
    Ok(())
}

fn check_target(view: &ObservedView<'_>, target: usize) -> Result<()> {
    if target >= view.d() {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for {} features",
            view.d()
        )));
    }
    Ok(())
}

/// Squared-error loss reweighted so that its expectation over the masking of
/// the target feature equals the loss on clean features:
/// `(1/m)·l(x) - ((1-m)/m)·l(x with target zeroed)`.
pub fn augmented_loss(model: &LinearModel, x: &[f64], y: f64, m: f64, target: usize) -> Result<f64> {
    check_rate(m)?;
    if x.len() != model.dim() || target >= x.len() {
        return Err(Error::Dimension(format!(
            "row of length {} for a model with {} coefficients",
            x.len(),
            model.dim()
        )));
    }
    let full = model.predict(x);
    let zeroed = full - model.beta[target] * x[target];
    let l = (y - full) * (y - full);
    let l0 = (y - zeroed) * (y - zeroed);
    Ok(l / m - (1.0 - m) / m * l0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedFitReport {
    pub model: LinearModel,
    pub hessian_definite: bool,
    /// Ridge penalty added to the Hessian diagonal; 0 when none was needed.
    pub fallback_ridge: f64,
    pub rates_used: [f64; 2],
    pub mode: Mode,
}

/// Per-row reporting rates: the group's own in group mode, otherwise the
/// share-weighted blend of the two.
fn row_rates(view: &ObservedView<'_>, rates: [f64; 2], mode: Mode) -> Result<Vec<f64>> {
    check_rate(rates[0])?;
    check_rate(rates[1])?;
    match mode {
        Mode::GroupDependent => view
            .g
            .iter()
            .map(|&g| match g {
                0 | 1 => Ok(rates[usize::from(g)]),
                g => Err(Error::InvalidArgument(format!("group {g} is not binary"))),
            })
            .collect(),
        Mode::GroupBlind => {
            let r = view.group_share(1);
            Ok(vec![r * rates[1] + (1.0 - r) * rates[0]; view.n()])
        }
    }
}

/// Minimizes the empirical augmented loss of a linear model.
///
/// The objective is quadratic with Hessian `Σ w x̃x̃ᵀ - Σ v x̃⁰x̃⁰ᵀ`
/// (`w = 1/m`, `v = (1-m)/m`, `x̃` the row with a leading 1, `x̃⁰` the same
/// with the target zeroed). It need not be convex; if the Hessian is not
/// positive definite a small ridge is added and the report says so.
pub fn augmented_fit(view: &ObservedView<'_>, target: usize, rates: [f64; 2], mode: Mode) -> Result<AugmentedFitReport> {
    check_target(view, target)?;
    let m = row_rates(view, rates, mode)?;
    if m.iter().all(|&v| v == 1.0) {
        return Ok(AugmentedFitReport {
            model: ols_fit(view.x, view.y)?,
            hessian_definite: true,
            fallback_ridge: 0.0,
            rates_used: rates,
            mode,
        });
    }
    let (n, d) = (view.n(), view.d());
    if n <= d {
        return Err(Error::TooFewRows { needed: d + 1, have: n });
    }
    let p = d + 1;
    let mut h = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for i in 0..n {
        row[0] = 1.0;
        row[1..].copy_from_slice(view.x.row(i));
        let w = 1.0 / m[i];
        let v = (1.0 - m[i]) / m[i];
        let y = view.y[i];
        let xt = row[target + 1];
        for a in 0..p {
            let ra = row[a];
            b[a] += w * ra * y;
            for c in a..p {
                h[(a, c)] += w * ra * row[c];
            }
        }
        if v != 0.0 {
            // x̃⁰ differs from x̃ only at the target slot
            row[target + 1] = 0.0;
            for a in 0..p {
                let ra = row[a];
                b[a] -= v * ra * y;
                for c in a..p {
                    h[(a, c)] -= v * ra * row[c];
                }
            }
            row[target + 1] = xt;
        }
    }
    let nf = n as f64;
    for a in 0..p {
        b[a] /= nf;
        for c in a..p {
            h[(a, c)] /= nf;
            h[(c, a)] = h[(a, c)];
        }
    }
    let eig = SymmetricEigen::new(h.clone());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    let definite = max > 0.0 && min > DEFINITE_TOLERANCE * max;
    let mut ridge = 0.0;
    if !definite {
        ridge = FALLBACK_RIDGE_SCALE * h.trace().abs() / p as f64;
        for a in 0..p {
            h[(a, a)] += ridge;
        }
    }
    let theta = h
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("augmented normal equations".into()))?;
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Singular("augmented normal equations".into()));
    }
    Ok(AugmentedFitReport {
        model: LinearModel::new(theta[0], theta.iter().skip(1).copied().collect()),
        hessian_definite: definite,
        fallback_ridge: ridge,
        rates_used: rates,
        mode,
    })
}

/// Values substituted for zero target entries at prediction time. `None`
/// marks a (sub)population without zero entries, where nothing is replaced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationValues {
    GroupBlind(Option<f64>),
    GroupDependent([Option<f64>; 2]),
}

/// Plug-in estimate of `E[Z_t | X_t = 0]` on rows `idx`:
/// `((1/m)·mean(X_t) - P̂(X_t≠0)·mean(X_t | X_t≠0)) / P̂(X_t=0)`.
fn conditional_zero_mean(x: &Matrix, target: usize, idx: &[usize], m: f64) -> Option<f64> {
    let n = idx.len();
    let zeros = idx.iter().filter(|&&i| x.get(i, target) == 0.0).count();
    if zeros == 0 {
        return None;
    }
    let sum: f64 = idx.iter().map(|&i| x.get(i, target)).sum();
    let mean = sum / n as f64;
    // P̂(X≠0)·mean(X | X≠0) is mean(X) again, since zeros add nothing
    let p0 = zeros as f64 / n as f64;
    Some((1.0 / m - 1.0) * mean / p0)
}

pub fn optimal_imputation_values(view: &ObservedView<'_>, target: usize, rates: [f64; 2], mode: Mode) -> Result<ImputationValues> {
    check_target(view, target)?;
    check_rate(rates[0])?;
    check_rate(rates[1])?;
    match mode {
        Mode::GroupBlind => {
            let r = view.group_share(1);
            let m = r * rates[1] + (1.0 - r) * rates[0];
            let idx: Vec<usize> = (0..view.n()).collect();
            Ok(ImputationValues::GroupBlind(conditional_zero_mean(view.x, target, &idx, m)))
        }
        Mode::GroupDependent => {
            let mut out = [None, None];
            for g in 0..2u8 {
                let idx: Vec<usize> = (0..view.n()).filter(|&i| view.g[i] == g).collect();
                if !idx.is_empty() {
                    out[usize::from(g)] = conditional_zero_mean(view.x, target, &idx, rates[usize::from(g)]);
                }
            }
            Ok(ImputationValues::GroupDependent(out))
        }
    }
}

/// Applies `model` after replacing a zero target entry by the (group's)
/// imputation value.
pub fn predict_with_imputation(
    model: &LinearModel,
    x: &[f64],
    g: Option<u8>,
    vals: &ImputationValues,
    target: usize,
) -> Result<f64> {
    if x.len() != model.dim() || target >= x.len() {
        return Err(Error::Dimension(format!(
            "row of length {} for a model with {} coefficients",
            x.len(),
            model.dim()
        )));
    }
    let base = model.predict(x);
    if x[target] != 0.0 {
        return Ok(base);
    }
    let value = match (vals, g) {
        (ImputationValues::GroupBlind(v), _) => *v,
        (ImputationValues::GroupDependent(v), Some(g)) if g <= 1 => v[usize::from(g)],
        (ImputationValues::GroupDependent(_), _) => {
            return Err(Error::InvalidArgument("group-dependent imputation needs a binary group".into()))
        }
    };
    Ok(value.map_or(base, |v| base + model.beta[target] * v))
}

pub fn predict_all_with_imputation(
    model: &LinearModel,
    view: &ObservedView<'_>,
    vals: &ImputationValues,
    target: usize,
) -> Result<Vec<f64>> {
    (0..view.n())
        .map(|i| predict_with_imputation(model, view.x.row(i), Some(view.g[i]), vals, target))
        .collect()
}

fn compare_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Estimates the reporting rate of the target feature by positive-unlabeled
/// learning.
///
/// The (group-restricted) rows are split in half. A classifier is trained on
/// the first half to predict whether the target entry is non-zero from the
/// remaining features and the outcome; the estimate is its mean prediction
/// over eval rows with a non-zero entry. Rows are put into a canonical order
/// before the seeded split, so the result does not depend on row order.
pub fn estimate_reporting_rate(
    view: &ObservedView<'_>,
    target: usize,
    group: Option<u8>,
    classifier: &dyn ProbabilityClassifier,
    seed: u64,
) -> Result<RateEstimate> {
    check_target(view, target)?;
    let d = view.d();
    // rows as [tail features..., y, x_target]
    let mut rows: Vec<Vec<f64>> = (0..view.n())
        .filter(|&i| group.is_none_or(|g| view.g[i] == g))
        .map(|i| {
            let x = view.x.row(i);
            let mut r: Vec<f64> = (0..d).filter(|&k| k != target).map(|k| x[k]).collect();
            r.push(view.y[i]);
            r.push(x[target]);
            r
        })
        .collect();
    if rows.len() < 2 {
        return Err(match group {
            Some(g) => Error::EmptyGroup(g),
            None => Error::TooFewRows { needed: 2, have: rows.len() },
        });
    }
    rows.sort_by(|a, b| compare_rows(a, b));
    rows.shuffle(&mut seeded_rng(seed));
    let n_train = rows.len() / 2;
    let (train, eval) = rows.split_at(n_train);
    let width = d;
    let features = |part: &[Vec<f64>]| {
        Matrix::from_rows(&part.iter().map(|r| r[..width].to_vec()).collect::<Vec<_>>())
    };
    let labels = |part: &[Vec<f64>]| part.iter().map(|r| r[width] != 0.0).collect::<Vec<bool>>();
    let (x_train, y_train) = (features(train)?, labels(train));
    let (x_eval, y_eval) = (features(eval)?, labels(eval));
    let h = classifier
        .fit(&x_train, &y_train)
        .map_err(|e| Error::Classifier(format!("{}: {e}", classifier.name())))?;

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let train_pred: Vec<f64> = x_train.row_iter().map(|r| h.predict(r)).collect();
    let eval_pred: Vec<f64> = x_eval.row_iter().map(|r| h.predict(r)).collect();
    let positives: Vec<f64> = eval_pred
        .iter()
        .zip(&y_eval)
        .filter(|(_, &s)| s)
        .map(|(p, _)| *p)
        .collect();
    if positives.is_empty() {
        return Err(Error::Degenerate("no non-zero target entries in the eval half".into()));
    }
    // running mean: exact when every prediction is the same number
    let raw = positives
        .iter()
        .enumerate()
        .fold(0.0, |acc, (k, p)| acc + (p - acc) / (k + 1) as f64);
    if !raw.is_finite() {
        return Err(Error::Classifier(format!("{} produced a non-finite estimate", classifier.name())));
    }
    let m_hat = raw.clamp(0.0, 1.0);
    let rate = |s: &[bool]| s.iter().filter(|&&b| b).count() as f64 / s.len().max(1) as f64;
    let brier = eval_pred
        .iter()
        .zip(&y_eval)
        .map(|(p, &s)| {
            let t = f64::from(u8::from(s));
            (p - t) * (p - t)
        })
        .sum::<f64>()
        / eval_pred.len().max(1) as f64;
    Ok(RateEstimate {
        m_hat,
        group,
        n_train,
        n_eval: eval.len(),
        n_positive_eval: positives.len(),
        clamped: m_hat != raw,
        classifier_diagnostics: ClassifierDiagnostics {
            classifier: classifier.name(),
            train_positive_rate: rate(&y_train),
            train_mean_prediction: mean(&train_pred),
            eval_positive_rate: rate(&y_eval),
            eval_mean_prediction: mean(&eval_pred),
            eval_brier: brier,
        },
    })
}

/// OLS without the target feature. The returned model keeps all `d`
/// coefficients, with an exact zero at the target.
pub fn baseline_feature_omission(view: &ObservedView<'_>, target: usize) -> Result<LinearModel> {
    check_target(view, target)?;
    if view.d() == 1 {
        return Err(Error::InvalidArgument("no features remain after omitting the target".into()));
    }
    let reduced = ols_fit(&view.x.drop_column(target), view.y)?;
    Ok(reduced.with_zero_inserted(target, None))
}

/// OLS on the rows whose target entry is non-zero.
pub fn baseline_row_omission(view: &ObservedView<'_>, target: usize) -> Result<LinearModel> {
    check_target(view, target)?;
    let keep: Vec<usize> = (0..view.n()).filter(|&i| view.x.get(i, target) != 0.0).collect();
    if keep.len() <= view.d() {
        return Err(Error::TooFewRows {
            needed: view.d() + 1,
            have: keep.len(),
        });
    }
    let y: Vec<f64> = keep.iter().map(|&i| view.y[i]).collect();
    ols_fit(&view.x.select_rows(&keep), &y)
}

pub const DEFAULT_IMPUTATION_DRAWS: usize = 5;
/// Lower bound on the residual variance of the imputation model.
pub const RESIDUAL_VARIANCE_FLOOR: f64 = 1e-12;

/// Ensemble from multiple stochastic imputation of zero target entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipleImputation {
    pub target: usize,
    pub seed: u64,
    /// Linear model of the target feature given the others (others in order).
    pub conditional: LinearModel,
    pub residual_variance: f64,
    pub models: Vec<LinearModel>,
}

/// Seed stream tags for imputation draws.
const TRAIN_DRAWS: u64 = 0;
const PREDICT_DRAWS: u64 = 1;

impl MultipleImputation {
    fn draw(&self, run: usize, phase: u64, row: usize, tail: &[f64]) -> f64 {
        let mut stream = CellStream::new(derive_seed(self.seed, &[run as u64, phase]), self.target as u64);
        self.conditional.predict(tail) + libm::sqrt(self.residual_variance) * stream.normal(row as u64)
    }

    fn tail(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .filter(|&(k, _)| k != self.target)
            .map(|(_, v)| *v)
            .collect()
    }

    /// Averages run predictions; each run imputes a zero entry with its own
    /// draw keyed by `(run, row)`.
    pub fn predict(&self, x: &[f64], row: usize) -> f64 {
        let zero = x[self.target] == 0.0;
        let tail = if zero { self.tail(x) } else { Vec::new() };
        let total: f64 = self
            .models
            .iter()
            .enumerate()
            .map(|(r, model)| {
                let base = model.predict(x);
                if zero {
                    base + model.beta[self.target] * self.draw(r, PREDICT_DRAWS, row, &tail)
                } else {
                    base
                }
            })
            .sum();
        total / self.models.len() as f64
    }

    pub fn predict_all(&self, x: &Matrix) -> Vec<f64> {
        x.row_iter().enumerate().map(|(i, r)| self.predict(r, i)).collect()
    }

    /// Coefficient-wise mean of the ensemble.
    pub fn mean_model(&self) -> LinearModel {
        let k = self.models.len() as f64;
        let d = self.models[0].dim();
        let alpha = self.models.iter().map(|m| m.alpha).sum::<f64>() / k;
        let beta = (0..d).map(|j| self.models.iter().map(|m| m.beta[j]).sum::<f64>() / k).collect();
        LinearModel::new(alpha, beta)
    }
}

/// Imputes every zero target entry from a linear-Gaussian model fit on rows
/// with a non-zero entry, `n_draws` times, refitting OLS each time.
pub fn baseline_multiple_imputation(
    view: &ObservedView<'_>,
    target: usize,
    n_draws: usize,
    seed: u64,
) -> Result<MultipleImputation> {
    check_target(view, target)?;
    if n_draws == 0 {
        return Err(Error::InvalidArgument("at least one imputation draw is needed".into()));
    }
    let d = view.d();
    let nonzero: Vec<usize> = (0..view.n()).filter(|&i| view.x.get(i, target) != 0.0).collect();
    if nonzero.len() <= d {
        return Err(Error::TooFewRows {
            needed: d + 1,
            have: nonzero.len(),
        });
    }
    let tail_x = view.x.drop_column(target).select_rows(&nonzero);
    let t_obs: Vec<f64> = nonzero.iter().map(|&i| view.x.get(i, target)).collect();
    let conditional = ols_fit(&tail_x, &t_obs)?;
    let rss: f64 = tail_x
        .row_iter()
        .zip(&t_obs)
        .map(|(r, t)| {
            let e = t - conditional.predict(r);
            e * e
        })
        .sum();
    let dof = (nonzero.len() - d) as f64;
    let residual_variance = (rss / dof).max(RESIDUAL_VARIANCE_FLOOR);
    let mut mi = MultipleImputation {
        target,
        seed,
        conditional,
        residual_variance,
        models: Vec::with_capacity(n_draws),
    };
    for run in 0..n_draws {
        let mut x = view.x.clone();
        for i in 0..view.n() {
            if x.get(i, target) == 0.0 {
                let tail = mi.tail(x.row(i));
                x.set(i, target, mi.draw(run, TRAIN_DRAWS, i, &tail));
            }
        }
        let model = ols_fit(&x, view.y)?;
        mi.models.push(model);
    }
    Ok(mi)
}

/// Sum of `model` predictions minus outcomes squared, averaged.
pub fn mean_squared_error_of(model: &LinearModel, x: &Matrix, y: &[f64]) -> f64 {
    x.row_iter()
        .zip(y)
        .map(|(r, v)| {
            let e = v - dot(&model.beta, r) - model.alpha;
            e * e
        })
        .sum::<f64>()
        / y.len() as f64
}
