//! Shared domain types.
//!
//! A [`Dataset`] carries the latent features `Z`, the observed features
//! `X = Z ⊙ ξ`, binary group labels and outcomes. The masking indicators `ξ`
//! exist only for synthetic or corrupted data; estimators never see them and
//! work on an [`ObservedView`] instead.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Mask, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub continuous_flags: Vec<bool>,
    pub z: Option<Matrix>,
    pub x: Matrix,
    pub g: Vec<u8>,
    pub y: Option<Vec<f64>>,
    pub xi_mask: Option<Mask>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl Dataset {
    /// A dataset of observed values only (no latent copy, no mask).
    pub fn observed(
        feature_names: Vec<String>,
        continuous_flags: Vec<bool>,
        x: Matrix,
        g: Vec<u8>,
        y: Option<Vec<f64>>,
    ) -> Self {
        Dataset {
            feature_names,
            continuous_flags,
            z: None,
            x,
            g,
            y,
            xi_mask: None,
            provenance: BTreeMap::new(),
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// Latent features when known, otherwise the observed ones.
    pub fn latent_or_observed(&self) -> &Matrix {
        self.z.as_ref().unwrap_or(&self.x)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn outcomes(&self) -> Result<&[f64]> {
        self.y
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("dataset has no outcome column".into()))
    }

    /// Strips `Z` and `ξ`; the only handle estimators receive.
    pub fn view(&self) -> Result<ObservedView<'_>> {
        Ok(ObservedView {
            x: &self.x,
            g: &self.g,
            y: self.outcomes()?,
        })
    }

    /// The same data seen through clean features, for reference fits.
    pub fn latent_view(&self) -> Result<ObservedView<'_>> {
        Ok(ObservedView {
            x: self.latent_or_observed(),
            g: &self.g,
            y: self.outcomes()?,
        })
    }

    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Dataset> {
        if y.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} outcomes for {} rows",
                y.len(),
                self.n()
            )));
        }
        let mut out = self.clone();
        out.y = Some(y);
        Ok(out)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            continuous_flags: self.continuous_flags.clone(),
            z: self.z.as_ref().map(|z| z.select_rows(idx)),
            x: self.x.select_rows(idx),
            g: idx.iter().map(|&i| self.g[i]).collect(),
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
            xi_mask: self.xi_mask.as_ref().map(|m| m.select_rows(idx)),
            provenance: self.provenance.clone(),
        }
    }

    pub fn group_rows(&self, group: u8) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.g[i] == group).collect()
    }
}

/// Observed features, groups and outcomes; no access to `Z` or `ξ`.
#[derive(Debug, Clone, Copy)]
pub struct ObservedView<'a> {
    pub x: &'a Matrix,
    pub g: &'a [u8],
    pub y: &'a [f64],
}

impl<'a> ObservedView<'a> {
    pub fn new(x: &'a Matrix, g: &'a [u8], y: &'a [f64]) -> Result<Self> {
        if g.len() != x.rows() || y.len() != x.rows() {
            return Err(Error::Dimension(format!(
                "view with {} rows but {} groups and {} outcomes",
                x.rows(),
                g.len(),
                y.len()
            )));
        }
        Ok(ObservedView { x, g, y })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn group_share(&self, group: u8) -> f64 {
        self.g.iter().filter(|&&g| g == group).count() as f64 / self.n().max(1) as f64
    }
}

/// A broken dataset invariant, with the offending location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Shape {
        what: String,
        expected: usize,
        found: usize,
    },
    MaskedValueMismatch {
        row: usize,
        col: usize,
    },
    MaskDomain {
        row: usize,
        col: usize,
        value: u8,
    },
    GroupDomain {
        row: usize,
        value: u8,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected {expected}, found {found}"),
            Violation::MaskedValueMismatch { row, col } => {
                write!(f, "X != Z*xi at cell ({row},{col})")
            }
            Violation::MaskDomain { row, col, value } => {
                write!(f, "xi_mask value {value} outside {{0,1}} at cell ({row},{col})")
            }
            Violation::GroupDomain { row, value } => {
                write!(f, "G domain: value {value} outside {{0,1}} at row {row}")
            }
        }
    }
}

/// Lists every broken [`Dataset`] invariant; empty when the dataset is consistent.
pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let (n, cols) = (d.n(), d.d());
    let mut shape = |what: &str, expected: usize, found: usize| {
        if expected != found {
            out.push(Violation::Shape {
                what: what.to_string(),
                expected,
                found,
            });
        }
    };
    shape("feature_names length", cols, d.feature_names.len());
    shape("continuous_flags length", cols, d.continuous_flags.len());
    shape("G length", n, d.g.len());
    if let Some(y) = &d.y {
        shape("Y length", n, y.len());
    }
    if let Some(z) = &d.z {
        shape("Z rows", n, z.rows());
        shape("Z columns", cols, z.cols());
    }
    if let Some(m) = &d.xi_mask {
        shape("xi_mask rows", n, m.rows());
        shape("xi_mask columns", cols, m.cols());
    }
    if !out.is_empty() {
        return out;
    }

    for (row, &value) in d.g.iter().enumerate() {
        if value > 1 {
            out.push(Violation::GroupDomain { row, value });
        }
    }
    if let Some(mask) = &d.xi_mask {
        for row in 0..n {
            for col in 0..cols {
                let value = mask.get(row, col);
                if value > 1 {
                    out.push(Violation::MaskDomain { row, col, value });
                }
            }
        }
        if let Some(z) = &d.z {
            for row in 0..n {
                for col in 0..cols {
                    let expected = z.get(row, col) * f64::from(mask.get(row, col));
                    if d.x.get(row, col).to_bits() != expected.to_bits()
                        && d.x.get(row, col) != expected
                    {
                        out.push(Violation::MaskedValueMismatch { row, col });
                    }
                }
            }
        }
    }
    out
}

/// Intercept plus coefficients of a linear predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub alpha: f64,
    pub beta: Vec<f64>,
    #[serde(default)]
    pub feature_names: Vec<String>,
}

impl LinearModel {
    pub fn new(alpha: f64, beta: Vec<f64>) -> Self {
        LinearModel {
            alpha,
            beta,
            feature_names: Vec::new(),
        }
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        self.feature_names = names;
        self
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    #[inline]
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.alpha + dot(&self.beta, row)
    }

    pub fn predict_all(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.beta.len() {
            return Err(Error::Dimension(format!(
                "model with {} coefficients applied to {} features",
                self.beta.len(),
                x.cols()
            )));
        }
        Ok(x.row_iter().map(|r| self.predict(r)).collect())
    }

    /// Re-inserts a zero coefficient at `index`, e.g. for a model fit without that feature.
    pub fn with_zero_inserted(&self, index: usize, name: Option<String>) -> LinearModel {
        let mut beta = self.beta.clone();
        beta.insert(index, 0.0);
        let mut names = self.feature_names.clone();
        if !names.is_empty() {
            names.insert(index, name.unwrap_or_default());
        }
        LinearModel {
            alpha: self.alpha,
            beta,
            feature_names: names,
        }
    }
}

/// Gaussian features with a linear outcome and per-group reporting rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPopulation {
    pub mu: Vec<f64>,
    pub sigma: Matrix,
    pub alpha: f64,
    pub beta: Vec<f64>,
    /// Share of group 1.
    pub r: f64,
    /// Per-feature reporting rates of group 0.
    pub m0: Vec<f64>,
    /// Per-feature reporting rates of group 1.
    pub m1: Vec<f64>,
}

pub const PD_TOLERANCE: f64 = 1e-10;

impl GaussianPopulation {
    pub fn new(
        mu: Vec<f64>,
        sigma: Matrix,
        alpha: f64,
        beta: Vec<f64>,
        r: f64,
        m0: Vec<f64>,
        m1: Vec<f64>,
    ) -> Result<Self> {
        let pop = GaussianPopulation {
            mu,
            sigma,
            alpha,
            beta,
            r,
            m0,
            m1,
        };
        pop.validate()?;
        Ok(pop)
    }

    /// All features fully reported in both groups.
    pub fn fully_reported(mu: Vec<f64>, sigma: Matrix, alpha: f64, beta: Vec<f64>, r: f64) -> Result<Self> {
        let d = mu.len();
        Self::new(mu, sigma, alpha, beta, r, alloc::vec![1.0; d], alloc::vec![1.0; d])
    }

    pub fn d(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mu.len();
        if self.sigma.rows() != d || self.sigma.cols() != d {
            return Err(Error::Dimension(format!(
                "covariance is {}x{} for {d} features",
                self.sigma.rows(),
                self.sigma.cols()
            )));
        }
        for (what, len) in [("beta", self.beta.len()), ("m0", self.m0.len()), ("m1", self.m1.len())] {
            if len != d {
                return Err(Error::Dimension(format!("{what} has length {len}, expected {d}")));
            }
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::InvalidArgument(format!("group share r = {} outside [0,1]", self.r)));
        }
        for &m in self.m0.iter().chain(&self.m1) {
            if !(m > 0.0 && m <= 1.0) {
                return Err(Error::InvalidArgument(format!("reporting rate {m} outside (0,1]")));
            }
        }
        check_positive_definite(&self.sigma)
    }

    /// Reporting rates of `group`.
    pub fn rates(&self, group: u8) -> &[f64] {
        if group == 0 {
            &self.m0
        } else {
            &self.m1
        }
    }

    /// Group-blended observed share r·m¹ + (1-r)·m⁰ of feature `j`.
    pub fn blended_rate(&self, j: usize) -> f64 {
        self.r * self.m1[j] + (1.0 - self.r) * self.m0[j]
    }

    pub fn true_model(&self) -> LinearModel {
        LinearModel::new(self.alpha, self.beta.clone())
    }
}

/// Symmetry and positive-definiteness check through a symmetric eigendecomposition.
pub fn check_positive_definite(sigma: &Matrix) -> Result<()> {
    let d = sigma.rows();
    let scale = (0..d).map(|i| libm::fabs(sigma.get(i, i))).fold(0.0, f64::max).max(1.0);
    for i in 0..d {
        for j in 0..i {
            if libm::fabs(sigma.get(i, j) - sigma.get(j, i)) > PD_TOLERANCE * scale {
                return Err(Error::InvalidArgument(format!(
                    "covariance not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(sigma.to_nalgebra());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(min > PD_TOLERANCE * max.max(PD_TOLERANCE)) {
        return Err(Error::InvalidArgument(format!(
            "covariance not positive definite (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    Ok(())
}

/// Injects under-reporting into one feature column at group-specific rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnderReportingConfig {
    pub feature_index: usize,
    /// Probability that a group-0 entry defaults to zero.
    pub rate_g0: f64,
    /// Probability that a group-1 entry defaults to zero.
    pub rate_g1: f64,
    pub seed: u64,
}

impl UnderReportingConfig {
    pub fn rate(&self, group: u8) -> f64 {
        if group == 0 {
            self.rate_g0
        } else {
            self.rate_g1
        }
    }

    pub fn validate_for(&self, d: &Dataset) -> Result<()> {
        if self.feature_index >= d.d() {
            return Err(Error::InvalidArgument(format!(
                "feature index {} out of range for {} features",
                self.feature_index,
                d.d()
            )));
        }
        for rate in [self.rate_g0, self.rate_g1] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidArgument(format!(
                    "under-reporting rate {rate} outside [0,1]"
                )));
            }
        }
        if !d.continuous_flags.get(self.feature_index).copied().unwrap_or(false) {
            return Err(Error::InvalidArgument(format!(
                "feature {} is not marked continuous or count",
                d.feature_names
                    .get(self.feature_index)
                    .map_or("?", String::as_str)
            )));
        }
        Ok(())
    }
}

/// Overall selection share and the grid used for curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub c: f64,
    pub grid: Vec<f64>,
}

impl SelectionPolicy {
    pub fn new(c: f64, grid: Vec<f64>) -> Result<Self> {
        check_share(c)?;
        check_grid(&grid)?;
        Ok(SelectionPolicy { c, grid })
    }

    /// {0.1, 0.2, ..., 0.9}
    pub fn decile_grid() -> Vec<f64> {
        (1..=9).map(|k| k as f64 / 10.0).collect()
    }
}

pub(crate) fn check_share(c: f64) -> Result<()> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidArgument(format!("selection share {c} outside (0,1)")));
    }
    Ok(())
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    for &c in grid {
        check_share(c)?;
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("selection grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Per-group excess selection at one overall share `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessSelectionResult {
    pub c: f64,
    /// Δ(g, c) for g = 0, 1.
    pub delta: [f64; 2],
    pub rate_corrupted: [f64; 2],
    pub rate_reference: [f64; 2],
    pub threshold_corrupted: f64,
    pub threshold_reference: f64,
    /// Set when ties at either threshold pushed the selected share above `c`.
    pub tie_flag: bool,
    /// Group-1 share of the rows.
    pub group_share: f64,
    /// Selected share under each prediction vector (corrupted, reference).
    pub selected_share: [f64; 2],
}

/// Summary of the propensity classifier behind a [`RateEstimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierDiagnostics {
    pub classifier: String,
    pub train_positive_rate: f64,
    pub train_mean_prediction: f64,
    pub eval_positive_rate: f64,
    pub eval_mean_prediction: f64,
    /// Mean squared error of the predictions against the eval labels.
    pub eval_brier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub m_hat: f64,
    pub group: Option<u8>,
    pub n_train: usize,
    pub n_eval: usize,
    /// Rows of the eval split with a non-zero entry (the averaging set).
    pub n_positive_eval: usize,
    pub clamped: bool,
    pub classifier_diagnostics: ClassifierDiagnostics,
}

/// Target fit quality for additive outcome noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub target_r2: f64,
    /// Filled in once the fitted-value variance is known.
    pub sigma_sq: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(target_r2: f64, seed: u64) -> Result<Self> {
        if !(target_r2 > 0.0 && target_r2 <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target R^2 {target_r2} outside (0,1]"
            )));
        }
        Ok(NoiseSpec {
            target_r2,
            sigma_sq: 0.0,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn small() -> Dataset {
        let z = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let mask = Mask::new(3, 2, vec![1, 0, 1, 1, 0, 1]).unwrap();
        let x = Matrix::from_rows(&[[1.0, 0.0], [3.0, 4.0], [0.0, 6.0]]).unwrap();
        Dataset {
            feature_names: vec!["a".into(), "b".into()],
            continuous_flags: vec![true, true],
            z: Some(z),
            x,
            g: vec![0, 1, 1],
            y: Some(vec![0.0, 1.0, 2.0]),
            xi_mask: Some(mask),
            provenance: BTreeMap::new(),
        }
    }

    #[test]
    fn consistent_dataset_has_no_violations() {
        assert!(validate_dataset(&small()).is_empty());
    }

    #[test]
    fn masked_value_mismatch_names_the_cell() {
        let mut d = small();
        d.x.set(0, 1, 2.0);
        assert_eq!(
            validate_dataset(&d),
            vec![Violation::MaskedValueMismatch { row: 0, col: 1 }]
        );
    }

    #[test]
    fn group_outside_binary_domain() {
        let mut d = small();
        d.g[2] = 2;
        let v = validate_dataset(&d);
        assert_eq!(v, vec![Violation::GroupDomain { row: 2, value: 2 }]);
        assert!(v[0].to_string().contains("G domain"));
    }

    #[test]
    fn shape_errors_short_circuit() {
        let mut d = small();
        d.feature_names.pop();
        assert!(matches!(validate_dataset(&d)[0], Violation::Shape { .. }));
    }

    #[test]
    fn population_rejects_indefinite_covariance() {
        let sigma = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        let err = GaussianPopulation::fully_reported(vec![0.0, 0.0], sigma, 0.0, vec![1.0, 1.0], 0.5);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn population_rejects_zero_reporting_rate() {
        let sigma = Matrix::identity(2);
        let err = GaussianPopulation::new(
            vec![0.0, 0.0],
            sigma,
            0.0,
            vec![1.0, 1.0],
            0.5,
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        );
        assert!(err.is_err());
    }

    #[test]
    fn noise_spec_range() {
        assert!(NoiseSpec::new(0.0, 1).is_err());
        assert!(NoiseSpec::new(1.0, 1).is_ok());
        assert!(NoiseSpec::new(1.2, 1).is_err());
    }

    #[test]
    fn selection_grid_must_increase() {
        assert!(SelectionPolicy::new(0.2, vec![0.1, 0.1]).is_err());
        assert!(SelectionPolicy::new(1.0, vec![0.1]).is_err());
        assert!(SelectionPolicy::new(0.2, SelectionPolicy::decile_grid()).is_ok());
    }
}
