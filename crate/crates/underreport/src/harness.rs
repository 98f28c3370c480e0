//! Experiment runner: ingest, outcomes, split, corrupt, fit, audit.
//!
//! The grid is (feature, group, rate, rep); every method runs inside one
//! work unit so that all methods see the same corrupted split. Units are
//! processed in parallel and gathered in grid order, and every random draw
//! comes from a seed derived from the cell coordinates, so the outputs do not
//! depend on the number of threads.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use underreport_core::classify::{BoostedTreesClassifier, LogisticClassifier, ProbabilityClassifier};
use underreport_core::corrupt::{inject_underreporting, split_train_test};
use underreport_core::datamodel::{Dataset, LinearModel, NoiseSpec, RateEstimate, SelectionPolicy, UnderReportingConfig};
use underreport_core::estimate::ols_fit;
use underreport_core::fairness::{excess_curve, mass_balance, mass_balance_slack};
use underreport_core::ingest::{add_outcome_noise, make_semisynthetic_outcomes, Rescale};
use underreport_core::mitigate::{
    augmented_fit, baseline_feature_omission, baseline_multiple_imputation, baseline_row_omission,
    estimate_reporting_rate, optimal_imputation_values, predict_all_with_imputation, Mode,
    DEFAULT_IMPUTATION_DRAWS,
};
use underreport_core::rng::derive_seed;
use underreport_core::stats::{mean, mean_squared_error, r_squared, sample_sd};

use crate::error::{Error, Result};
use crate::schema::{load_csv, sha256_bytes, sha256_file, Schema};

const TAG_REP: u64 = 1;
const TAG_SPLIT: u64 = 2;
const TAG_CORRUPT: u64 = 3;
const TAG_IMPUTE: u64 = 4;
const TAG_ESTIMATE: u64 = 5;
const TAG_NOISE: u64 = 6;

/// Share of failed cells above which a run is reported as failed.
pub const MAX_FAILED_SHARE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeMode {
    /// Linear outcomes fitted to logistic probabilities of the label.
    #[default]
    Semisynthetic,
    /// The binary label itself, as a real outcome.
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSource {
    /// The injected reporting rate.
    #[default]
    True,
    /// Estimated from the corrupted training data.
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    Logistic,
    BoostedTrees,
}

impl ClassifierKind {
    pub fn build(self) -> Box<dyn ProbabilityClassifier> {
        match self {
            ClassifierKind::Logistic => Box::new(LogisticClassifier::default()),
            ClassifierKind::BoostedTrees => Box::new(BoostedTreesClassifier::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Plain,
    FeatureOmission,
    RowOmission,
    MultipleImputation,
    /// Augmented-loss fit, scored with optimal imputation values.
    Augmented,
    /// The generating model, applied to corrupted test features.
    TrueParams,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Plain,
        Method::FeatureOmission,
        Method::RowOmission,
        Method::MultipleImputation,
        Method::Augmented,
        Method::TrueParams,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Plain => "plain",
            Method::FeatureOmission => "feature_omission",
            Method::RowOmission => "row_omission",
            Method::MultipleImputation => "multiple_imputation",
            Method::Augmented => "augmented",
            Method::TrueParams => "true_params",
        }
    }
}

/// A group given by code or by its schema display name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupRef {
    Code(u8),
    Name(String),
}

fn default_rates() -> Vec<f64> {
    (0..10).map(|k| k as f64 / 10.0).collect()
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_reps() -> usize {
    30
}

fn default_test_frac() -> f64 {
    0.2
}

fn default_draws() -> usize {
    DEFAULT_IMPUTATION_DRAWS
}

fn default_mode() -> Mode {
    Mode::GroupDependent
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// CSV path, relative to the config file.
    pub dataset: PathBuf,
    /// Schema path, relative to the config file.
    pub schema: PathBuf,
    #[serde(default)]
    pub outcome_mode: OutcomeMode,
    /// Affine map `[a, b]` applied to fitted probabilities.
    #[serde(default)]
    pub rescale: Option<[f64; 2]>,
    #[serde(default)]
    pub noise_r2: Option<f64>,
    /// Features to corrupt; empty means every continuous feature.
    #[serde(default)]
    pub features: Vec<String>,
    /// Groups to corrupt; empty means both.
    #[serde(default)]
    pub groups: Vec<GroupRef>,
    /// Under-reporting rates (probability that an entry is zeroed).
    #[serde(default = "default_rates")]
    pub rates: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(rename = "C_grid", default = "SelectionPolicy::decile_grid")]
    pub c_grid: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_test_frac")]
    pub test_frac: f64,
    #[serde(default)]
    pub rate_source: RateSource,
    #[serde(default)]
    pub rate_classifier: ClassifierKind,
    #[serde(default = "default_draws")]
    pub n_imputation_draws: usize,
    #[serde(default = "default_mode")]
    pub mode: Mode,
}

impl ExperimentConfig {
    /// Reads a config and resolves its paths against the config's directory.
    pub fn from_file(path: &Path) -> Result<(ExperimentConfig, String)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_slice(&bytes)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset = base.join(&cfg.dataset);
        cfg.schema = base.join(&cfg.schema);
        Ok((cfg, sha256_bytes(&bytes)))
    }

    fn check(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be positive".into()));
        }
        if self.rates.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("rates and methods must be non-empty".into()));
        }
        if let Some(r) = self.rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Config(format!("rate {r} outside [0,1)")));
        }
        if self.n_imputation_draws == 0 {
            return Err(Error::Config("n_imputation_draws must be positive".into()));
        }
        if self.outcome_mode == OutcomeMode::Label && self.methods.contains(&Method::TrueParams) {
            return Err(Error::Config("true_params needs semisynthetic outcomes".into()));
        }
        let first = *self.c_grid.first().ok_or_else(|| Error::Config("C_grid is empty".into()))?;
        SelectionPolicy::new(first, self.c_grid.clone()).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Data shared by every unit of a run.
pub struct Prepared {
    pub schema: Schema,
    pub data: Dataset,
    pub true_model: Option<LinearModel>,
    pub targets: Vec<usize>,
    pub groups: Vec<u8>,
    pub dataset_sha256: String,
    pub noise_sigma_sq: Option<f64>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.check()?;
    let schema = Schema::from_file(&cfg.schema)?;
    let raw = load_csv(&cfg.dataset, &schema)?;
    let dataset_sha256 = sha256_file(&cfg.dataset)?;
    let (mut data, true_model) = match cfg.outcome_mode {
        OutcomeMode::Semisynthetic => {
            let rescale = cfg.rescale.map(|[a, b]| Rescale { a, b });
            let (d, m) = make_semisynthetic_outcomes(&raw, rescale)?;
            (d, Some(m))
        }
        OutcomeMode::Label => {
            raw.outcomes()?;
            (raw, None)
        }
    };
    let mut noise_sigma_sq = None;
    if let Some(r2) = cfg.noise_r2 {
        let model = true_model
            .as_ref()
            .ok_or_else(|| Error::Config("noise_r2 needs semisynthetic outcomes".into()))?;
        let spec = NoiseSpec::new(r2, derive_seed(cfg.seed, &[TAG_NOISE]))?;
        data = add_outcome_noise(&data, model, &spec)?;
        noise_sigma_sq = data.provenance.get("noise_sigma_sq").and_then(|s| s.parse().ok());
    }
    let targets = if cfg.features.is_empty() {
        (0..data.d()).filter(|&j| data.continuous_flags[j]).collect()
    } else {
        cfg.features
            .iter()
            .map(|f| {
                let j = data
                    .feature_index(f)
                    .ok_or_else(|| Error::Config(format!("unknown feature {f:?}")))?;
                if !data.continuous_flags[j] {
                    return Err(Error::Config(format!("feature {f:?} is not continuous")));
                }
                Ok(j)
            })
            .collect::<Result<Vec<_>>>()?
    };
    let groups = if cfg.groups.is_empty() {
        vec![0, 1]
    } else {
        cfg.groups
            .iter()
            .map(|g| match g {
                GroupRef::Code(c) if *c <= 1 => Ok(*c),
                GroupRef::Code(c) => Err(Error::Config(format!("group code {c}"))),
                GroupRef::Name(s) => schema
                    .group
                    .resolve(s)
                    .ok_or_else(|| Error::Config(format!("unknown group {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(Prepared {
        schema,
        data,
        true_model,
        targets,
        groups,
        dataset_sha256,
        noise_sigma_sq,
    })
}

/// One repetition's split and clean reference model.
struct RepContext {
    seed: u64,
    train: Dataset,
    test: Dataset,
    reference_pred: Vec<f64>,
    reference_r2: f64,
}

fn rep_context(p: &Prepared, cfg: &ExperimentConfig, rep: usize) -> Result<RepContext> {
    let seed = derive_seed(cfg.seed, &[TAG_REP, rep as u64]);
    let (train, test) = split_train_test(&p.data, cfg.test_frac, derive_seed(seed, &[TAG_SPLIT]))?;
    let reference = ols_fit(&train.x, train.outcomes()?)?;
    let reference_pred = reference.predict_all(&test.x)?;
    let reference_r2 = r_squared(test.outcomes()?, &reference_pred);
    Ok(RepContext {
        seed,
        train,
        test,
        reference_pred,
        reference_r2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellKey {
    pub feature: usize,
    pub group: usize,
    pub rate: usize,
    pub method: usize,
    pub rep: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub key: CellKey,
    pub seed: u64,
    pub c: f64,
    pub delta: [f64; 2],
    pub tie_flag: bool,
    pub mass_balance: f64,
    /// Bound on `|mass_balance|` from ties at the thresholds.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFit {
    pub key: CellKey,
    pub seed: u64,
    pub model: LinearModel,
    pub r2: f64,
    pub r2_reference: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub key: CellKey,
    pub seed: u64,
    pub m_true: f64,
    pub estimate: RateEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub feature: String,
    pub group: String,
    pub rate: f64,
    pub method: String,
    pub rep: usize,
    pub error: String,
}

#[derive(Default)]
struct UnitOutput {
    curves: Vec<CurveRow>,
    fits: Vec<CellFit>,
    rates: Vec<RateRow>,
    failures: Vec<(CellKey, String)>,
}

/// Everything a run produces, in grid order.
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    pub prepared: Prepared,
    pub rep_seeds: Vec<u64>,
    pub n_train: usize,
    pub n_test: usize,
    pub curves: Vec<CurveRow>,
    pub fits: Vec<CellFit>,
    pub rates: Vec<RateRow>,
    pub failures: Vec<(CellKey, String)>,
}

impl ExperimentResults {
    pub fn cells_total(&self) -> usize {
        self.prepared.targets.len() * self.prepared.groups.len() * self.config.rates.len() * self.config.methods.len() * self.config.reps
    }

    pub fn feature_name(&self, k: &CellKey) -> &str {
        &self.prepared.data.feature_names[self.prepared.targets[k.feature]]
    }

    pub fn group_name(&self, k: &CellKey) -> String {
        self.prepared.schema.group.name(self.prepared.groups[k.group])
    }

    pub fn corrupted_group(&self, k: &CellKey) -> u8 {
        self.prepared.groups[k.group]
    }

    pub fn method(&self, k: &CellKey) -> Method {
        self.config.methods[k.method]
    }

    pub fn rate(&self, k: &CellKey) -> f64 {
        self.config.rates[k.rate]
    }

    /// Mean and sd over reps of Δ for the corrupted group at one cell and share.
    pub fn delta_summary(&self, feature: &str, method: Method, rate: f64, c: f64) -> Option<(f64, f64)> {
        let v: Vec<f64> = self
            .curves
            .iter()
            .filter(|r| {
                self.feature_name(&r.key) == feature && self.method(&r.key) == method && self.rate(&r.key) == rate && r.c == c
            })
            .map(|r| r.delta[usize::from(self.corrupted_group(&r.key))])
            .collect();
        (!v.is_empty()).then(|| (mean(&v), sample_sd(&v)))
    }

    /// Per-rep test R² for one cell, in rep order.
    pub fn r2_values(&self, feature: &str, method: Method, rate: f64) -> Vec<(f64, f64)> {
        self.fits
            .iter()
            .filter(|f| self.feature_name(&f.key) == feature && self.method(&f.key) == method && self.rate(&f.key) == rate)
            .map(|f| (f.r2, f.r2_reference))
            .collect()
    }
}

struct Unit {
    feature: usize,
    group: usize,
    rate: usize,
    rep: usize,
}

fn run_unit(p: &Prepared, cfg: &ExperimentConfig, ctx: &RepContext, u: &Unit) -> UnitOutput {
    let mut out = UnitOutput::default();
    let key = |method: usize| CellKey {
        feature: u.feature,
        group: u.group,
        rate: u.rate,
        method,
        rep: u.rep,
    };
    let target = p.targets[u.feature];
    let g = p.groups[u.group];
    let rate = cfg.rates[u.rate];
    let corrupt = |d: &Dataset, part: u64| {
        let cfg = UnderReportingConfig {
            feature_index: target,
            rate_g0: if g == 0 { rate } else { 0.0 },
            rate_g1: if g == 1 { rate } else { 0.0 },
            // independent of the rate, so masks at higher rates contain those at lower ones
            seed: derive_seed(ctx.seed, &[TAG_CORRUPT, target as u64, u64::from(g), part]),
        };
        inject_underreporting(d, &cfg)
    };
    let (train, test) = match corrupt(&ctx.train, 0).and_then(|a| Ok((a, corrupt(&ctx.test, 1)?))) {
        Ok(v) => v,
        Err(e) => {
            out.failures.extend((0..cfg.methods.len()).map(|m| (key(m), e.to_string())));
            return out;
        }
    };
    let (train_view, test_view) = match (train.view(), test.view()) {
        (Ok(a), Ok(b)) => (a, b),
        _ => {
            out.failures.extend((0..cfg.methods.len()).map(|m| (key(m), "missing outcomes".to_string())));
            return out;
        }
    };
    let cell_seed = |tag: u64| derive_seed(ctx.seed, &[tag, target as u64, u64::from(g), u.rate as u64]);

    let mut rates = [1.0, 1.0];
    rates[usize::from(g)] = 1.0 - rate;
    let mut rate_error = None;
    if cfg.rate_source == RateSource::Estimated && cfg.methods.contains(&Method::Augmented) {
        let classifier = cfg.rate_classifier.build();
        match estimate_reporting_rate(&train_view, target, Some(g), classifier.as_ref(), cell_seed(TAG_ESTIMATE)) {
            Ok(est) => {
                rates[usize::from(g)] = est.m_hat;
                out.rates.push(RateRow {
                    key: key(cfg.methods.iter().position(|&m| m == Method::Augmented).unwrap_or(0)),
                    seed: ctx.seed,
                    m_true: 1.0 - rate,
                    estimate: est,
                });
            }
            Err(e) => rate_error = Some(e.to_string()),
        }
    }

    for (mi, &method) in cfg.methods.iter().enumerate() {
        let fitted: std::result::Result<(LinearModel, Vec<f64>), String> = (|| {
            let err = |e: underreport_core::Error| e.to_string();
            Ok(match method {
                Method::Plain => {
                    let m = ols_fit(train_view.x, train_view.y).map_err(err)?;
                    let pred = m.predict_all(test_view.x).map_err(err)?;
                    (m, pred)
                }
                Method::FeatureOmission => {
                    let m = baseline_feature_omission(&train_view, target).map_err(err)?;
                    let pred = m.predict_all(test_view.x).map_err(err)?;
                    (m, pred)
                }
                Method::RowOmission => {
                    let m = baseline_row_omission(&train_view, target).map_err(err)?;
                    let pred = m.predict_all(test_view.x).map_err(err)?;
                    (m, pred)
                }
                Method::MultipleImputation => {
                    let mi = baseline_multiple_imputation(&train_view, target, cfg.n_imputation_draws, cell_seed(TAG_IMPUTE))
                        .map_err(err)?;
                    (mi.mean_model(), mi.predict_all(test_view.x))
                }
                Method::Augmented => {
                    if let Some(e) = &rate_error {
                        return Err(format!("rate estimation: {e}"));
                    }
                    let fit = augmented_fit(&train_view, target, rates, cfg.mode).map_err(err)?;
                    let vals = optimal_imputation_values(&train_view, target, rates, cfg.mode).map_err(err)?;
                    let pred = predict_all_with_imputation(&fit.model, &test_view, &vals, target).map_err(err)?;
                    (fit.model, pred)
                }
                Method::TrueParams => {
                    let m = p.true_model.clone().ok_or("no generating model")?;
                    let pred = m.predict_all(test_view.x).map_err(err)?;
                    (m, pred)
                }
            })
        })();
        let scored = fitted.and_then(|(model, pred)| {
            let curve = excess_curve(&pred, &ctx.reference_pred, test_view.g, &cfg.c_grid).map_err(|e| e.to_string())?;
            Ok((model, pred, curve))
        });
        match scored {
            Ok((model, pred, curve)) => {
                out.curves.extend(curve.iter().map(|res| CurveRow {
                    key: key(mi),
                    seed: ctx.seed,
                    c: res.c,
                    delta: res.delta,
                    tie_flag: res.tie_flag,
                    mass_balance: mass_balance(res),
                    slack: mass_balance_slack(res),
                }));
                out.fits.push(CellFit {
                    key: key(mi),
                    seed: ctx.seed,
                    r2: r_squared(test_view.y, &pred),
                    r2_reference: ctx.reference_r2,
                    mse: mean_squared_error(test_view.y, &pred),
                    model,
                });
            }
            Err(e) => out.failures.push((key(mi), e)),
        }
    }
    out
}

/// Runs the full grid in memory. `threads` sizes a dedicated pool; `None`
/// uses rayon's global pool.
pub fn run_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentResults> {
    let prepared = prepare(cfg)?;
    let work = || -> Result<ExperimentResults> {
        let contexts: Vec<RepContext> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| rep_context(&prepared, cfg, rep))
            .collect::<Result<_>>()?;
        let mut units = Vec::new();
        for feature in 0..prepared.targets.len() {
            for group in 0..prepared.groups.len() {
                for rate in 0..cfg.rates.len() {
                    for rep in 0..cfg.reps {
                        units.push(Unit {
                            feature,
                            group,
                            rate,
                            rep,
                        });
                    }
                }
            }
        }
        let outputs: Vec<UnitOutput> = units
            .par_iter()
            .map(|u| run_unit(&prepared, cfg, &contexts[u.rep], u))
            .collect();
        let mut curves = Vec::new();
        let mut fits = Vec::new();
        let mut rates = Vec::new();
        let mut failures = Vec::new();
        for o in outputs {
            curves.extend(o.curves);
            fits.extend(o.fits);
            rates.extend(o.rates);
            failures.extend(o.failures);
        }
        // grid order with the method ahead of the rep
        curves.sort_by(|a, b| a.key.cmp(&b.key).then(a.c.total_cmp(&b.c)));
        fits.sort_by_key(|f| f.key);
        rates.sort_by_key(|r| r.key);
        failures.sort_by_key(|f| f.0);
        Ok(ExperimentResults {
            config: cfg.clone(),
            rep_seeds: contexts.iter().map(|c| c.seed).collect(),
            n_train: contexts[0].train.n(),
            n_test: contexts[0].test.n(),
            prepared,
            curves,
            fits,
            rates,
            failures,
        })
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config_sha256: &'a str,
    dataset: String,
    dataset_sha256: &'a str,
    schema_sha256: String,
    seed: u64,
    seed_derivation: BTreeMap<&'static str, &'static str>,
    rep_seeds: &'a [u64],
    corruption_order: &'static str,
    reporting_rates: &'static str,
    n_rows: usize,
    n_train: usize,
    n_test: usize,
    features: Vec<&'a str>,
    groups: Vec<String>,
    methods: Vec<&'static str>,
    rates: &'a [f64],
    c_grid: &'a [f64],
    true_model: Option<&'a LinearModel>,
    noise_sigma_sq: Option<f64>,
    cells_total: usize,
    cells_failed: usize,
    failures: Vec<Failure>,
    outputs: Vec<&'static str>,
}

pub const OUTPUT_FILES: [&str; 7] = [
    "results.csv",
    "summary.csv",
    "params.csv",
    "params_raw.csv",
    "r2.csv",
    "rate_estimates.csv",
    "manifest.json",
];

fn write_file(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

fn aggregate<K: Ord + Copy>(rows: impl Iterator<Item = (K, f64)>) -> BTreeMap<K, Vec<f64>> {
    let mut out: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for (k, v) in rows {
        out.entry(k).or_default().push(v);
    }
    out
}

fn sd_or_zero(v: &[f64]) -> f64 {
    if v.len() > 1 {
        sample_sd(v)
    } else {
        0.0
    }
}

impl ExperimentResults {
    fn coords(&self, k: &CellKey) -> String {
        format!(
            "{},{},{},{}",
            csv_field(self.feature_name(k)),
            csv_field(&self.group_name(k)),
            self.rate(k),
            self.method(k).name()
        )
    }

    pub fn results_csv(&self) -> String {
        let mut s = String::from("feature,group,rate,method,rep,seed,C,delta_g0,delta_g1,delta_corrupted,tie_flag,mass_balance\n");
        for r in &self.curves {
            let g = usize::from(self.corrupted_group(&r.key));
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                self.coords(&r.key),
                r.key.rep,
                r.seed,
                r.c,
                r.delta[0],
                r.delta[1],
                r.delta[g],
                r.tie_flag,
                r.mass_balance
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("feature,group,rate,method,C,n,mean_delta_corrupted,sd_delta_corrupted,mean_delta_g0,mean_delta_g1\n");
        let mut groups: BTreeMap<(CellKey, usize), Vec<&CurveRow>> = BTreeMap::new();
        for r in &self.curves {
            let c = self.config.c_grid.iter().position(|&c| c == r.c).unwrap_or(0);
            groups.entry((CellKey { rep: 0, ..r.key }, c)).or_default().push(r);
        }
        for ((k, ci), rows) in groups {
            let g = usize::from(self.corrupted_group(&k));
            let dc: Vec<f64> = rows.iter().map(|r| r.delta[g]).collect();
            let d0: Vec<f64> = rows.iter().map(|r| r.delta[0]).collect();
            let d1: Vec<f64> = rows.iter().map(|r| r.delta[1]).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                self.coords(&k),
                self.config.c_grid[ci],
                rows.len(),
                mean(&dc),
                sd_or_zero(&dc),
                mean(&d0),
                mean(&d1)
            );
        }
        s
    }

    fn param_names(&self) -> Vec<String> {
        std::iter::once("intercept".to_string())
            .chain(self.prepared.data.feature_names.iter().cloned())
            .collect()
    }

    pub fn params_raw_csv(&self) -> String {
        let names = self.param_names();
        let mut s = String::from("feature,group,rate,method,rep,seed,param,value\n");
        for f in &self.fits {
            let values = std::iter::once(f.model.alpha).chain(f.model.beta.iter().copied());
            for (name, v) in names.iter().zip(values) {
                let _ = writeln!(s, "{},{},{},{},{}", self.coords(&f.key), f.key.rep, f.seed, csv_field(name), v);
            }
        }
        s
    }

    pub fn params_csv(&self) -> String {
        let names = self.param_names();
        let mut s = String::from("feature,group,rate,method,param,n,mean,sd\n");
        let agg = aggregate(self.fits.iter().flat_map(|f| {
            let cell = CellKey { rep: 0, ..f.key };
            std::iter::once(f.model.alpha)
                .chain(f.model.beta.iter().copied())
                .enumerate()
                .map(move |(j, v)| ((cell, j), v))
        }));
        for ((k, j), v) in agg {
            let _ = writeln!(s, "{},{},{},{},{}", self.coords(&k), csv_field(&names[j]), v.len(), mean(&v), sd_or_zero(&v));
        }
        s
    }

    pub fn r2_csv(&self) -> String {
        let mut s = String::from("feature,group,rate,method,rep,seed,r2,r2_reference,mse\n");
        for f in &self.fits {
            let _ = writeln!(s, "{},{},{},{},{},{}", self.coords(&f.key), f.key.rep, f.seed, f.r2, f.r2_reference, f.mse);
        }
        s
    }

    pub fn rate_estimates_csv(&self) -> String {
        let mut s = String::from(
            "feature,group,rate,rep,seed,m_true,m_hat,clamped,n_train,n_eval,n_positive_eval,classifier\n",
        );
        for r in &self.rates {
            let e = &r.estimate;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                csv_field(self.feature_name(&r.key)),
                csv_field(&self.group_name(&r.key)),
                self.rate(&r.key),
                r.key.rep,
                r.seed,
                r.m_true,
                e.m_hat,
                e.clamped,
                e.n_train,
                e.n_eval,
                e.n_positive_eval,
                e.classifier_diagnostics.classifier
            );
        }
        s
    }

    pub fn failure_records(&self) -> Vec<Failure> {
        self.failures
            .iter()
            .map(|(k, e)| Failure {
                feature: self.feature_name(k).to_string(),
                group: self.group_name(k),
                rate: self.rate(k),
                method: self.method(k).name().to_string(),
                rep: k.rep,
                error: e.clone(),
            })
            .collect()
    }

    pub fn manifest_json(&self, config_sha256: &str) -> Result<String> {
        let cfg = &self.config;
        let seed_derivation = BTreeMap::from([
            ("rep", "derive_seed(seed, [1, rep])"),
            ("split", "derive_seed(rep_seed, [2])"),
            ("corruption", "derive_seed(rep_seed, [3, feature_index, group, part]), part 0 train / 1 test"),
            ("multiple_imputation", "derive_seed(rep_seed, [4, feature_index, group, rate_index])"),
            ("rate_estimation", "derive_seed(rep_seed, [5, feature_index, group, rate_index])"),
            ("noise", "derive_seed(seed, [6])"),
        ]);
        let m = Manifest {
            version: env!("CARGO_PKG_VERSION"),
            config_sha256,
            dataset: cfg
                .dataset
                .file_name()
                .map_or_else(String::new, |f| f.to_string_lossy().into_owned()),
            dataset_sha256: &self.prepared.dataset_sha256,
            schema_sha256: sha256_file(&cfg.schema)?,
            seed: cfg.seed,
            seed_derivation,
            rep_seeds: &self.rep_seeds,
            corruption_order: "after_split: train and test corrupted with independent draws at the same rate",
            reporting_rates: "corrupted group 1 - rate, other group 1",
            n_rows: self.prepared.data.n(),
            n_train: self.n_train,
            n_test: self.n_test,
            features: self.prepared.targets.iter().map(|&j| self.prepared.data.feature_names[j].as_str()).collect(),
            groups: self.prepared.groups.iter().map(|&g| self.prepared.schema.group.name(g)).collect(),
            methods: cfg.methods.iter().map(|m| m.name()).collect(),
            rates: &cfg.rates,
            c_grid: &cfg.c_grid,
            true_model: self.prepared.true_model.as_ref(),
            noise_sigma_sq: self.prepared.noise_sigma_sq,
            cells_total: self.cells_total(),
            cells_failed: self.failures.len(),
            failures: self.failure_records(),
            outputs: OUTPUT_FILES.to_vec(),
        };
        Ok(serde_json::to_string_pretty(&m)? + "\n")
    }

    /// Writes every output file into `dir`, then fails if too many cells did.
    pub fn write(&self, dir: &Path, config_sha256: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(dir, "results.csv", &self.results_csv())?;
        write_file(dir, "summary.csv", &self.summary_csv())?;
        write_file(dir, "params.csv", &self.params_csv())?;
        write_file(dir, "params_raw.csv", &self.params_raw_csv())?;
        write_file(dir, "r2.csv", &self.r2_csv())?;
        write_file(dir, "rate_estimates.csv", &self.rate_estimates_csv())?;
        write_file(dir, "manifest.json", &self.manifest_json(config_sha256)?)?;
        let total = self.cells_total();
        if self.failures.len() as f64 > MAX_FAILED_SHARE * total as f64 {
            return Err(Error::TooManyFailures {
                failed: self.failures.len(),
                total,
            });
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Loads a config file, runs it and writes the outputs.
pub fn run_config_file(path: &Path, out_dir: &Path, seed: Option<u64>, threads: Option<usize>) -> Result<ExperimentResults> {
    let (mut cfg, sha) = ExperimentConfig::from_file(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let results = run_experiment(&cfg, threads)?;
    results.write(out_dir, &sha)?;
    Ok(results)
}
