//! Least squares fitting and population-level predictions of the estimates
//! obtained when one feature is under-reported.
//!
//! Closed forms are evaluated for a single under-reported target feature with
//! reporting rate `m = E[ξ]`, blended across groups. They assume `Z ⊥ ξ`, so
//!
//! * `Var(X_t) = Var(Z_t)·m² + m(1-m)·E[Z_t²]`
//! * `Cov(X_t, Z_k) = m·Cov(Z_t, Z_k)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datamodel::{check_positive_definite, GaussianPopulation, LinearModel};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Relative singular-value tolerance for rank decisions.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Absolute tolerance (scaled by feature scale) for "uncorrelated" tail features.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-10;

/// Ordinary least squares with intercept, via QR of the centered design.
pub fn ols_fit(x: &Matrix, y: &[f64]) -> Result<LinearModel> {
    let (n, d) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} rows but {} outcomes", y.len())));
    }
    if n <= d {
        return Err(Error::TooFewRows { needed: d + 1, have: n });
    }
    let means = x.column_means();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if d == 0 {
        return Ok(LinearModel::new(y_mean, Vec::new()));
    }
    let centered = DMatrix::from_fn(n, d, |i, j| x.get(i, j) - means[j]);
    let qr = centered.qr();
    let r = qr.r();
    check_rank(&r)?;
    let mut rhs = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    qr.q_tr_mul(&mut rhs);
    let top = rhs.rows(0, d).into_owned();
    let beta = r
        .solve_upper_triangular(&top)
        .ok_or_else(|| Error::Singular("triangular factor".into()))?;
    let beta: Vec<f64> = beta.iter().copied().collect();
    let alpha = y_mean - dot(&means, &beta);
    Ok(LinearModel::new(alpha, beta))
}

/// Rejects an `R` factor whose singular values span more than the tolerance,
/// naming the columns that carry the near-null direction.
fn check_rank(r: &DMatrix<f64>) -> Result<()> {
    let svd = r.clone().svd(false, true);
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let (imin, smin) = s
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |a, (i, v)| if v < a.1 { (i, v) } else { a });
    if smax > 0.0 && smin > RANK_TOLERANCE * smax {
        return Ok(());
    }
    let v_t = svd.v_t.as_ref().expect("requested V");
    let row = v_t.row(imin);
    let peak = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let columns = row
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() >= 0.1 * peak)
        .map(|(j, _)| j)
        .collect();
    Err(Error::RankDeficient { columns })
}

/// Moments of the latent features plus the blended reporting rate of the
/// under-reported feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    /// `E[ξ]` of the target feature.
    pub reporting_rate: f64,
    /// Index of the under-reported feature.
    pub target: usize,
}

impl MomentSet {
    pub fn new(mean: Vec<f64>, cov: Matrix, reporting_rate: f64, target: usize) -> Result<Self> {
        let d = mean.len();
        if cov.rows() != d || cov.cols() != d {
            return Err(Error::Dimension(format!(
                "covariance is {}x{} for {d} features",
                cov.rows(),
                cov.cols()
            )));
        }
        if target >= d {
            return Err(Error::InvalidArgument(format!("target {target} out of range for {d} features")));
        }
        if !(reporting_rate > 0.0 && reporting_rate <= 1.0) {
            return Err(Error::Degenerate(format!(
                "reporting rate {reporting_rate} outside (0,1]"
            )));
        }
        check_positive_definite(&cov)?;
        Ok(MomentSet {
            mean,
            cov,
            reporting_rate,
            target,
        })
    }

    /// Blends the group rates of `target` as `r·m¹ + (1-r)·m⁰`.
    pub fn from_population(pop: &GaussianPopulation, target: usize) -> Result<Self> {
        if target >= pop.d() {
            return Err(Error::InvalidArgument(format!("target {target} out of range")));
        }
        Self::new(pop.mu.clone(), pop.sigma.clone(), pop.blended_rate(target), target)
    }

    pub fn d(&self) -> usize {
        self.mean.len()
    }

    pub fn with_rate(&self, reporting_rate: f64) -> Result<Self> {
        Self::new(self.mean.clone(), self.cov.clone(), reporting_rate, self.target)
    }

    pub fn tail(&self) -> Vec<usize> {
        (0..self.d()).filter(|&k| k != self.target).collect()
    }

    /// `Var(X_t)` under masking with rate `m`.
    pub fn observed_variance(&self) -> f64 {
        let (v, e2, m) = self.target_moments();
        v * m * m + (m - m * m) * e2
    }

    /// `(Var(Z_t), E[Z_t²], m)`.
    fn target_moments(&self) -> (f64, f64, f64) {
        let t = self.target;
        let v = self.cov.get(t, t);
        (v, v + self.mean[t] * self.mean[t], self.reporting_rate)
    }

    /// `E[X]`: the target mean is scaled by `m`.
    pub fn observed_mean(&self) -> Vec<f64> {
        let mut e = self.mean.clone();
        e[self.target] *= self.reporting_rate;
        e
    }

    /// `S² = Σ_k ρ(Z_t, Z_k)²` over the tail.
    pub fn s_squared(&self) -> f64 {
        let t = self.target;
        let vt = self.cov.get(t, t);
        self.tail()
            .into_iter()
            .map(|k| {
                let c = self.cov.get(t, k);
                c * c / (vt * self.cov.get(k, k))
            })
            .sum()
    }

    /// `R² = Σ_k ρ(X_t, Z_k)²` over the tail.
    pub fn r_squared(&self) -> f64 {
        let t = self.target;
        let vx = self.observed_variance();
        let m = self.reporting_rate;
        self.tail()
            .into_iter()
            .map(|k| {
                let c = m * self.cov.get(t, k);
                c * c / (vx * self.cov.get(k, k))
            })
            .sum()
    }

    pub fn tail_is_uncorrelated(&self) -> bool {
        self.first_tail_correlation().is_none()
    }

    fn first_tail_correlation(&self) -> Option<(usize, usize, f64)> {
        let tail = self.tail();
        for (a, &i) in tail.iter().enumerate() {
            for &j in &tail[a + 1..] {
                let c = self.cov.get(i, j);
                let scale = libm::sqrt(self.cov.get(i, i) * self.cov.get(j, j)).max(1.0);
                if libm::fabs(c) > ORTHOGONALITY_TOLERANCE * scale {
                    return Some((i, j, c));
                }
            }
        }
        None
    }

    fn require_uncorrelated_tail(&self) -> Result<()> {
        match self.first_tail_correlation() {
            Some((i, j, covariance)) => Err(Error::CorrelatedTail { i, j, covariance }),
            None => Ok(()),
        }
    }
}

fn check_model(m: &MomentSet, model: &LinearModel) -> Result<()> {
    if model.dim() != m.d() {
        return Err(Error::Dimension(format!(
            "model with {} coefficients for {} features",
            model.dim(),
            m.d()
        )));
    }
    Ok(())
}

fn intercept(m: &MomentSet, model: &LinearModel, beta_hat: &[f64]) -> f64 {
    model.alpha + dot(&m.mean, &model.beta) - dot(&m.observed_mean(), beta_hat)
}

/// Population limit of OLS on `X` when the target feature is under-reported,
/// from the correlation form of the closed-form solution.
///
/// Tail features must be mutually uncorrelated; see [`orthogonalize_tail`].
pub fn population_biased_params(m: &MomentSet, model: &LinearModel) -> Result<LinearModel> {
    check_model(m, model)?;
    m.require_uncorrelated_tail()?;
    let t = m.target;
    let tail = m.tail();
    let (v1, _, rate) = m.target_moments();
    let vx = m.observed_variance();
    if !(vx > 0.0) {
        return Err(Error::Degenerate("observed target variance is zero".into()));
    }
    let rho_x1 = rate * v1 / libm::sqrt(vx * v1);
    let rho_xk = |k: usize| rate * m.cov.get(t, k) / libm::sqrt(vx * m.cov.get(k, k));
    let rho_zk = |k: usize| m.cov.get(t, k) / libm::sqrt(v1 * m.cov.get(k, k));
    let r2: f64 = tail.iter().map(|&k| rho_xk(k) * rho_xk(k)).sum();
    if !(r2 < 1.0) {
        return Err(Error::Degenerate(format!("R^2 = {r2} is not below 1")));
    }
    let core = rho_x1 - tail.iter().map(|&k| rho_xk(k) * rho_zk(k)).sum::<f64>();
    let b1 = model.beta[t];
    let mut beta = vec![0.0; m.d()];
    beta[t] = b1 / (1.0 - r2) * libm::sqrt(v1 / vx) * core;
    for &k in &tail {
        let vk = m.cov.get(k, k);
        beta[k] = b1 * libm::sqrt(v1 / vk) * (rho_zk(k) - rho_xk(k) * core / (1.0 - r2)) + model.beta[k];
    }
    let alpha = intercept(m, model, &beta);
    Ok(LinearModel::new(alpha, beta).with_names(model.feature_names.clone()))
}

/// The same population limit solved from the normal equations
/// `Σ_X β̂ = Cov(X, Z) β` with the observed-feature covariance built
/// directly; valid for correlated tails too.
pub fn population_biased_params_normal_equations(m: &MomentSet, model: &LinearModel) -> Result<LinearModel> {
    check_model(m, model)?;
    let (d, t, rate) = (m.d(), m.target, m.reporting_rate);
    let vx = m.observed_variance();
    let mut sigma_x = m.cov.to_nalgebra();
    let mut sigma_xz = m.cov.to_nalgebra();
    for k in 0..d {
        if k != t {
            sigma_x[(t, k)] *= rate;
            sigma_x[(k, t)] *= rate;
        }
        sigma_xz[(t, k)] = rate * m.cov.get(t, k);
    }
    sigma_x[(t, t)] = vx;
    let rhs = &sigma_xz * DVector::from_column_slice(&model.beta);
    let chol = sigma_x
        .cholesky()
        .ok_or_else(|| Error::Singular("observed covariance is not positive definite".into()))?;
    let beta: Vec<f64> = chol.solve(&rhs).iter().copied().collect();
    let alpha = intercept(m, model, &beta);
    Ok(LinearModel::new(alpha, beta).with_names(model.feature_names.clone()))
}

/// Factor multiplying the true slope in a one-feature regression:
/// `Var(Z) / (E[Z²] - m·E[Z]²)`.
pub fn onedim_attenuation_factor(mean: f64, var: f64, m: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(Error::InvalidArgument(format!("variance {var} must be positive")));
    }
    if m == 0.0 {
        return Err(Error::Degenerate("reporting rate 0 leaves no observed variance".into()));
    }
    if !(m > 0.0 && m <= 1.0) {
        return Err(Error::InvalidArgument(format!("reporting rate {m} outside (0,1]")));
    }
    Ok(var / (var + mean * mean - m * mean * mean))
}

/// Population OLS after dropping the target feature entirely (the `m → 0`
/// limit). The returned model has `d - 1` coefficients in tail order.
pub fn omitted_variable_params(m: &MomentSet, model: &LinearModel) -> Result<LinearModel> {
    check_model(m, model)?;
    m.require_uncorrelated_tail()?;
    let t = m.target;
    let tail = m.tail();
    let b1 = model.beta[t];
    let beta: Vec<f64> = tail
        .iter()
        .map(|&k| b1 * m.cov.get(k, t) / m.cov.get(k, k) + model.beta[k])
        .collect();
    let tail_mean: Vec<f64> = tail.iter().map(|&k| m.mean[k]).collect();
    let alpha = model.alpha + dot(&m.mean, &model.beta) - dot(&tail_mean, &beta);
    let names = if model.feature_names.len() == m.d() {
        tail.iter().map(|&k| model.feature_names[k].clone()).collect()
    } else {
        Vec::new()
    };
    Ok(LinearModel::new(alpha, beta).with_names(names))
}

/// Biased estimates assembled from regression slopes `γ_{A,B} = Cov(A,B)/Var(B)`:
/// `β̂_k = β_k + β_t γ_{Z_t,Z_k} - β̂_t γ_{X_t,Z_k}`, with `β̂_t` itself written
/// in slopes. Agrees with [`population_biased_params`] for every `m`.
pub fn omitted_variable_decomposition(m: &MomentSet, model: &LinearModel) -> Result<LinearModel> {
    check_model(m, model)?;
    m.require_uncorrelated_tail()?;
    let t = m.target;
    let tail = m.tail();
    let rate = m.reporting_rate;
    let vx = m.observed_variance();
    if !(vx > 0.0) {
        return Err(Error::Degenerate("observed target variance is zero".into()));
    }
    let cov_x = |k: usize| rate * m.cov.get(t, k);
    // slopes of Z_t and X_t on each tail feature, and of tail features on X_t
    let gamma_zt_zk = |k: usize| m.cov.get(t, k) / m.cov.get(k, k);
    let gamma_xt_zk = |k: usize| cov_x(k) / m.cov.get(k, k);
    let gamma_zk_xt = |k: usize| cov_x(k) / vx;
    let gamma_zt_xt = rate * m.cov.get(t, t) / vx;
    let r2: f64 = tail.iter().map(|&k| cov_x(k) * cov_x(k) / (vx * m.cov.get(k, k))).sum();
    if !(r2 < 1.0) {
        return Err(Error::Degenerate(format!("R^2 = {r2} is not below 1")));
    }
    let b1 = model.beta[t];
    let b1_hat = b1 * (gamma_zt_xt - tail.iter().map(|&k| gamma_zk_xt(k) * gamma_zt_zk(k)).sum::<f64>()) / (1.0 - r2);
    let mut beta = vec![0.0; m.d()];
    beta[t] = b1_hat;
    for &k in &tail {
        beta[k] = model.beta[k] + b1 * gamma_zt_zk(k) - b1_hat * gamma_xt_zk(k);
    }
    let alpha = intercept(m, model, &beta);
    Ok(LinearModel::new(alpha, beta).with_names(model.feature_names.clone()))
}

/// Moments and model re-expressed with whitened tail features
/// `W = L⁻¹ Z_tail` (`L Lᵀ = Cov(Z_tail)`); the target feature is untouched
/// and keeps its index.
#[derive(Debug, Clone, PartialEq)]
pub struct Orthogonalized {
    pub moments: MomentSet,
    pub model: LinearModel,
    tail: Vec<usize>,
    factor: DMatrix<f64>,
}

impl Orthogonalized {
    /// Maps coefficients of the whitened basis back to the original features.
    pub fn back_transform(&self, rotated: &LinearModel) -> LinearModel {
        let bw = DVector::from_iterator(self.tail.len(), self.tail.iter().map(|&k| rotated.beta[k]));
        let bt = self
            .factor
            .transpose()
            .solve_upper_triangular(&bw)
            .expect("factor has a positive diagonal");
        let mut beta = rotated.beta.clone();
        for (a, &k) in self.tail.iter().enumerate() {
            beta[k] = bt[a];
        }
        LinearModel::new(rotated.alpha, beta).with_names(rotated.feature_names.clone())
    }
}

/// Whitens the tail features so the closed forms apply. The intercept and
/// every linear prediction are unchanged by the rotation.
pub fn orthogonalize_tail(m: &MomentSet, model: &LinearModel) -> Result<Orthogonalized> {
    check_model(m, model)?;
    let t = m.target;
    let tail = m.tail();
    let p = tail.len();
    let tail_cov = DMatrix::from_fn(p, p, |a, b| m.cov.get(tail[a], tail[b]));
    let l = tail_cov
        .cholesky()
        .ok_or_else(|| Error::Singular("tail covariance is not positive definite".into()))?
        .l();
    let solve = |v: DVector<f64>| l.solve_lower_triangular(&v).expect("positive diagonal");
    let mu_w = solve(DVector::from_iterator(p, tail.iter().map(|&k| m.mean[k])));
    let c_w = solve(DVector::from_iterator(p, tail.iter().map(|&k| m.cov.get(t, k))));
    let beta_w = l.transpose() * DVector::from_iterator(p, tail.iter().map(|&k| model.beta[k]));

    let d = m.d();
    let mut mean = m.mean.clone();
    let mut cov = Matrix::zeros(d, d);
    let mut beta = model.beta.clone();
    cov.set(t, t, m.cov.get(t, t));
    for (a, &k) in tail.iter().enumerate() {
        mean[k] = mu_w[a];
        beta[k] = beta_w[a];
        cov.set(k, k, 1.0);
        cov.set(t, k, c_w[a]);
        cov.set(k, t, c_w[a]);
    }
    Ok(Orthogonalized {
        moments: MomentSet::new(mean, cov, m.reporting_rate, t)?,
        model: LinearModel::new(model.alpha, beta).with_names(model.feature_names.clone()),
        tail,
        factor: l,
    })
}

/// [`population_biased_params`] for arbitrary tail covariance: whitens,
/// evaluates the closed form and maps back.
pub fn population_biased_params_general(m: &MomentSet, model: &LinearModel) -> Result<LinearModel> {
    if m.tail_is_uncorrelated() {
        return population_biased_params(m, model);
    }
    let o = orthogonalize_tail(m, model)?;
    let rotated = population_biased_params(&o.moments, &o.model)?;
    Ok(o.back_transform(&rotated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn example(rate: f64) -> (MomentSet, LinearModel) {
        let cov = Matrix::from_rows(&[[1.0, 0.5], [0.5, 1.0]]).unwrap();
        (
            MomentSet::new(vec![0.0, 0.0], cov, rate, 0).unwrap(),
            LinearModel::new(0.0, vec![1.0, 1.0]),
        )
    }

    #[test]
    fn worked_example_closed_form() {
        let (m, model) = example(0.5);
        let b = population_biased_params(&m, &model).unwrap();
        assert_abs_diff_eq!(b.beta[0], 6.0 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.beta[1], 9.0 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.alpha, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn full_reporting_is_unbiased() {
        let (m, model) = example(1.0);
        let b = population_biased_params(&m, &model).unwrap();
        assert_abs_diff_eq!(b.beta[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.beta[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn uncorrelated_tail_keeps_coefficient() {
        let m = MomentSet::new(vec![1.0, 2.0], Matrix::identity(2), 0.3, 0).unwrap();
        let model = LinearModel::new(1.0, vec![2.0, -1.5]);
        let b = population_biased_params(&m, &model).unwrap();
        assert_eq!(b.beta[1], -1.5);
    }

    #[test]
    fn three_routes_agree_on_example() {
        let (m, model) = example(0.5);
        let a = population_biased_params(&m, &model).unwrap();
        let b = population_biased_params_normal_equations(&m, &model).unwrap();
        let c = omitted_variable_decomposition(&m, &model).unwrap();
        for k in 0..2 {
            assert_abs_diff_eq!(a.beta[k], b.beta[k], epsilon = 1e-12);
            assert_abs_diff_eq!(a.beta[k], c.beta[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn omitted_variable_limit() {
        let (m, model) = example(0.5);
        let o = omitted_variable_params(&m, &model).unwrap();
        assert_eq!(o.beta.len(), 1);
        assert_abs_diff_eq!(o.beta[0], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn correlated_tail_is_rejected_then_handled() {
        let cov = Matrix::from_rows(&[[1.0, 0.4, 0.2], [0.4, 1.0, 0.3], [0.2, 0.3, 2.0]]).unwrap();
        let m = MomentSet::new(vec![0.5, -1.0, 2.0], cov, 0.6, 0).unwrap();
        let model = LinearModel::new(0.3, vec![1.0, -0.5, 2.0]);
        assert!(matches!(
            population_biased_params(&m, &model),
            Err(Error::CorrelatedTail { i: 1, j: 2, .. })
        ));
        let general = population_biased_params_general(&m, &model).unwrap();
        let direct = population_biased_params_normal_equations(&m, &model).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(general.beta[k], direct.beta[k], epsilon = 1e-10);
        }
        assert_abs_diff_eq!(general.alpha, direct.alpha, epsilon = 1e-10);
    }

    #[test]
    fn attenuation_factor_values() {
        assert_abs_diff_eq!(onedim_attenuation_factor(1.0, 1.0, 0.5).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(onedim_attenuation_factor(0.0, 3.0, 0.2).unwrap(), 1.0);
        assert_eq!(onedim_attenuation_factor(5.0, 3.0, 1.0).unwrap(), 1.0);
        assert!(matches!(onedim_attenuation_factor(1.0, 1.0, 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ols_exact_fit_and_rank_error() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [2.0, 1.0], [3.0, 5.0], [4.0, 2.0]]).unwrap();
        let y: Vec<f64> = x.row_iter().map(|r| 1.0 + 2.0 * r[0] - 3.0 * r[1]).collect();
        let fit = ols_fit(&x, &y).unwrap();
        assert_abs_diff_eq!(fit.alpha, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.beta[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.beta[1], -3.0, epsilon = 1e-12);

        let constant = Matrix::from_rows(&[[1.0, 7.0], [2.0, 7.0], [3.0, 7.0], [4.0, 7.0]]).unwrap();
        assert_eq!(
            ols_fit(&constant, &y),
            Err(Error::RankDeficient { columns: vec![1] })
        );
        let dup = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [5.0, 10.0]]).unwrap();
        assert_eq!(ols_fit(&dup, &y), Err(Error::RankDeficient { columns: vec![0, 1] }));
        assert!(matches!(ols_fit(&x.select_rows(&[0, 1]), &y[..2]), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn ols_residuals_are_orthogonal() {
        let rows: Vec<[f64; 3]> = (0..40)
            .map(|i| {
                let t = i as f64;
                [libm::sin(t), libm::cos(0.7 * t), (t * 0.37) % 1.3]
            })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..40).map(|i| libm::sin(i as f64 * 1.3) + i as f64 * 0.01).collect();
        let fit = ols_fit(&x, &y).unwrap();
        let res: Vec<f64> = x.row_iter().zip(&y).map(|(r, yi)| yi - fit.predict(r)).collect();
        let scale = y.iter().map(|v| v * v).sum::<f64>();
        assert!(res.iter().sum::<f64>().abs() < 1e-8 * scale);
        for j in 0..3 {
            let c: f64 = x.column(j).iter().zip(&res).map(|(a, b)| a * b).sum();
            assert!(c.abs() < 1e-8 * scale);
        }
    }

    fn moment_strategy() -> impl Strategy<Value = (MomentSet, LinearModel)> {
        (2usize..5)
            .prop_flat_map(|d| {
                (
                    proptest::collection::vec(-2.0f64..2.0, d),
                    proptest::collection::vec(0.2f64..3.0, d),
                    proptest::collection::vec(-1.0f64..1.0, d - 1),
                    proptest::collection::vec(-3.0f64..3.0, d),
                    0.05f64..1.0,
                )
            })
            .prop_filter_map("positive definite", |(mu, vars, corr, beta, m)| {
                let d = mu.len();
                let mut cov = Matrix::zeros(d, d);
                for k in 0..d {
                    cov.set(k, k, vars[k]);
                }
                let norm = libm::sqrt(corr.iter().map(|c| c * c).sum::<f64>()).max(1.0) * 1.05;
                for k in 1..d {
                    let c = corr[k - 1] / norm * libm::sqrt(vars[0] * vars[k]);
                    cov.set(0, k, c);
                    cov.set(k, 0, c);
                }
                let ms = MomentSet::new(mu, cov, m, 0).ok()?;
                Some((ms, LinearModel::new(0.5, beta)))
            })
    }

    proptest! {
        #[test]
        fn closed_form_matches_normal_equations((m, model) in moment_strategy()) {
            let a = population_biased_params(&m, &model).unwrap();
            let b = population_biased_params_normal_equations(&m, &model).unwrap();
            let c = omitted_variable_decomposition(&m, &model).unwrap();
            for k in 0..m.d() {
                prop_assert!((a.beta[k] - b.beta[k]).abs() < 1e-8 * (1.0 + b.beta[k].abs()));
                prop_assert!((a.beta[k] - c.beta[k]).abs() < 1e-10 * (1.0 + c.beta[k].abs()));
            }
            prop_assert!((a.alpha - b.alpha).abs() < 1e-8 * (1.0 + b.alpha.abs()));
        }

        #[test]
        fn r_squared_in_unit_interval((m, _) in moment_strategy()) {
            let r2 = m.r_squared();
            prop_assert!((0.0..1.0).contains(&r2));
        }

        #[test]
        fn attenuation_bounds((m, model) in moment_strategy()) {
            let b = population_biased_params(&m, &model).unwrap();
            let b1 = model.beta[0];
            prop_assert!(b.beta[0] * b1 >= 0.0);
            prop_assert!(b.beta[0].abs() <= b1.abs() * (1.0 + 1e-12));
        }
    }
}
