//! Command-line front end. Exit status: 0 success, 1 usage, 2 data error,
//! 3 numerical error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use underreport_core::datamodel::{Dataset, GaussianPopulation, LinearModel, NoiseSpec, SelectionPolicy, UnderReportingConfig};
use underreport_core::estimate::ols_fit;
use underreport_core::fairness::excess_curve;
use underreport_core::ingest::{add_outcome_noise, make_semisynthetic_outcomes, Rescale};
use underreport_core::matrix::Matrix;
use underreport_core::mitigate::{
    augmented_fit, baseline_feature_omission, baseline_multiple_imputation, baseline_row_omission,
    estimate_reporting_rate, optimal_imputation_values, predict_all_with_imputation, ImputationValues, Mode,
    DEFAULT_IMPUTATION_DRAWS,
};
use underreport_core::theory::classify_case;

use crate::bundle::{read_bundle, read_predictions, write_bundle, write_predictions, Predictions};
use crate::error::{Error, Result};
use crate::harness::{run_config_file, ClassifierKind};
use crate::schema::{load_csv, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "underreport", version, about = "Simulate, analyse and mitigate differential feature under-reporting")]
pub struct Cli {
    /// Seed for every random draw of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Format of the printed result.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads for `run`.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMethod {
    Plain,
    FeatureOmission,
    RowOmission,
    MultipleImputation,
    Augmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    GroupBlind,
    GroupDependent,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::GroupBlind => Mode::GroupBlind,
            ModeArg::GroupDependent => Mode::GroupDependent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassifierArg {
    Logistic,
    BoostedTrees,
}

impl From<ClassifierArg> for ClassifierKind {
    fn from(c: ClassifierArg) -> ClassifierKind {
        match c {
            ClassifierArg::Logistic => ClassifierKind::Logistic,
            ClassifierArg::BoostedTrees => ClassifierKind::BoostedTrees,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a CSV with a schema into a dataset bundle.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, default_value = "dataset.csv")]
        name: String,
    },
    /// Replace the binary label by semi-synthetic linear outcomes.
    Synthesize {
        #[arg(long)]
        input: PathBuf,
        /// Affine rescale `a b` of the fitted probabilities.
        #[arg(long, num_args = 2, value_names = ["A", "B"], allow_negative_numbers = true)]
        rescale: Option<Vec<f64>>,
        /// Add Gaussian noise reaching this population R².
        #[arg(long)]
        noise_r2: Option<f64>,
        #[arg(long, default_value = "synthetic.csv")]
        name: String,
    },
    /// Zero out entries of one feature at group-specific rates.
    Corrupt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        feature: String,
        #[arg(long, default_value_t = 0.0)]
        rate_g0: f64,
        #[arg(long, default_value_t = 0.0)]
        rate_g1: f64,
        #[arg(long, default_value = "corrupted.csv")]
        name: String,
    },
    /// Fit a model and write its predictions.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "plain")]
        method: FitMethod,
        /// Under-reported feature (all methods but `plain`).
        #[arg(long)]
        feature: Option<String>,
        /// Reporting rates `m0 m1`; estimated per group when absent.
        #[arg(long, num_args = 2, value_names = ["M0", "M1"])]
        rates: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value = "group-dependent")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "logistic")]
        classifier: ClassifierArg,
        #[arg(long, default_value_t = DEFAULT_IMPUTATION_DRAWS)]
        draws: usize,
        /// Bundle to score; defaults to the training bundle.
        #[arg(long)]
        predict: Option<PathBuf>,
    },
    /// Excess selection rates between two prediction files.
    Audit {
        #[arg(long)]
        corrupted: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Selection shares; defaults to 0.1, ..., 0.9.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Closed-form analysis of a Gaussian population.
    Theory {
        /// JSON with mu, sigma, alpha, beta, r, m0, m1 and an optional target.
        #[arg(long)]
        moments: PathBuf,
    },
    /// Estimate the reporting rate of a feature by positive-unlabeled learning.
    EstimateRate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        feature: String,
        /// Restrict to one group (code or schema name); all rows when absent.
        #[arg(long)]
        group: Option<u8>,
        #[arg(long, value_enum, default_value = "logistic")]
        classifier: ClassifierArg,
    },
    /// Run a full experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Population moments as written by hand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsFile {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub r: f64,
    pub m0: Vec<f64>,
    pub m1: Vec<f64>,
    #[serde(default)]
    pub target: usize,
}

impl MomentsFile {
    pub fn population(&self) -> Result<GaussianPopulation> {
        let sigma = Matrix::from_rows(&self.sigma)?;
        Ok(GaussianPopulation::new(
            self.mu.clone(),
            sigma,
            self.alpha,
            self.beta.clone(),
            self.r,
            self.m0.clone(),
            self.m1.clone(),
        )?)
    }
}

#[derive(Debug, Serialize)]
struct FitOutput {
    method: &'static str,
    target: Option<String>,
    model: LinearModel,
    rates: Option<[f64; 2]>,
    imputation: Option<ImputationValues>,
    hessian_definite: Option<bool>,
    fallback_ridge: Option<f64>,
}

fn key_values(pairs: &[(&str, String)]) -> String {
    let mut s = String::from("key,value\n");
    for (k, v) in pairs {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

fn emit(out_dir: &Path, stem: &str, format: Format, json: String, csv: impl FnOnce() -> String) -> Result<String> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (body, ext) = match format {
        Format::Json => (json, "json"),
        Format::Csv => (csv(), "csv"),
    };
    let path = out_dir.join(format!("{stem}.{ext}"));
    fs::write(&path, &body).map_err(|e| Error::io(&path, e))?;
    Ok(body)
}

fn target_of(d: &Dataset, feature: &str) -> Result<usize> {
    d.feature_index(feature)
        .ok_or_else(|| Error::Config(format!("unknown feature {feature:?}")))
}

fn bundle_out(out_dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    Ok(out_dir.join(name))
}

fn summary(d: &Dataset, path: &Path) -> String {
    let g1 = d.g.iter().filter(|&&g| g == 1).count();
    serde_json::json!({
        "bundle": path.display().to_string(),
        "n": d.n(),
        "d": d.d(),
        "features": d.feature_names,
        "group_counts": [d.n() - g1, g1],
        "has_outcome": d.y.is_some(),
    })
    .to_string()
}

/// Executes one parsed command and returns the text to print.
pub fn execute(cli: &Cli) -> Result<String> {
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Ingest { csv, schema, name } => {
            let schema = Schema::from_file(schema)?;
            let d = load_csv(csv, &schema)?;
            let path = bundle_out(out, name)?;
            write_bundle(&path, &d)?;
            Ok(summary(&d, &path))
        }
        Command::Synthesize {
            input,
            rescale,
            noise_r2,
            name,
        } => {
            let d = read_bundle(input)?;
            let rescale = rescale.as_ref().map(|v| Rescale { a: v[0], b: v[1] });
            let (mut d, model) = make_semisynthetic_outcomes(&d, rescale)?;
            if let Some(r2) = noise_r2 {
                d = add_outcome_noise(&d, &model, &NoiseSpec::new(*r2, seed)?)?;
            }
            let path = bundle_out(out, name)?;
            write_bundle(&path, &d)?;
            let model_path = out.join("true_model.json");
            fs::write(&model_path, serde_json::to_string_pretty(&model)? + "\n").map_err(|e| Error::io(&model_path, e))?;
            Ok(summary(&d, &path))
        }
        Command::Corrupt {
            input,
            feature,
            rate_g0,
            rate_g1,
            name,
        } => {
            let d = read_bundle(input)?;
            let cfg = UnderReportingConfig {
                feature_index: target_of(&d, feature)?,
                rate_g0: *rate_g0,
                rate_g1: *rate_g1,
                seed,
            };
            let d = underreport_core::corrupt::inject_underreporting(&d, &cfg)?;
            let path = bundle_out(out, name)?;
            write_bundle(&path, &d)?;
            Ok(summary(&d, &path))
        }
        Command::Fit {
            input,
            method,
            feature,
            rates,
            mode,
            classifier,
            draws,
            predict,
        } => fit(
            out,
            seed,
            FitArgs {
                input,
                method: *method,
                feature: feature.as_deref(),
                rates: rates.as_ref().map(|r| [r[0], r[1]]),
                mode: (*mode).into(),
                classifier: (*classifier).into(),
                draws: *draws,
                predict: predict.as_deref(),
            },
        ),
        Command::Audit {
            corrupted,
            reference,
            grid,
        } => {
            let a = read_predictions(corrupted)?;
            let b = read_predictions(reference)?;
            if a.groups != b.groups {
                return Err(Error::Bundle("prediction files disagree on row groups".into()));
            }
            let grid = grid.clone().unwrap_or_else(SelectionPolicy::decile_grid);
            let curve = excess_curve(&a.values, &b.values, &a.groups, &grid)?;
            let json = serde_json::to_string_pretty(&curve)? + "\n";
            emit(out, "audit", cli.format.unwrap_or(Format::Csv), json, || {
                let mut s = String::from("C,group,rate_corrupted,rate_reference,delta,threshold_corrupted,threshold_reference,tie_flag\n");
                for r in &curve {
                    for g in 0..2 {
                        let _ = writeln!(
                            s,
                            "{},{g},{},{},{},{},{},{}",
                            r.c,
                            r.rate_corrupted[g],
                            r.rate_reference[g],
                            r.delta[g],
                            r.threshold_corrupted,
                            r.threshold_reference,
                            r.tie_flag
                        );
                    }
                }
                s
            })
        }
        Command::Theory { moments } => {
            let text = fs::read_to_string(moments).map_err(|e| Error::io(moments, e))?;
            let file: MomentsFile = serde_json::from_str(&text)?;
            let report = classify_case(&file.population()?, file.target)?;
            let json = serde_json::to_string_pretty(&report)? + "\n";
            let label = serde_json::to_value(report.case_label)?;
            emit(out, "theory", cli.format.unwrap_or(Format::Json), json, || {
                key_values(&[
                    ("target", report.target.to_string()),
                    ("reporting_rate", report.reporting_rate.to_string()),
                    ("r_squared", report.r_squared.to_string()),
                    ("s_squared", report.s_squared.to_string()),
                    ("turning_point", report.turning_point.map_or_else(String::new, |t| t.to_string())),
                    ("c", report.c.to_string()),
                    ("q", report.q.to_string()),
                    ("case_label", label.as_str().unwrap_or_default().to_string()),
                    ("variance_full", report.variance_full.to_string()),
                    ("variance_reduced", report.variance_reduced.to_string()),
                ])
            })
        }
        Command::EstimateRate {
            input,
            feature,
            group,
            classifier,
        } => {
            let d = read_bundle(input)?;
            let target = target_of(&d, feature)?;
            let classifier = ClassifierKind::from(*classifier).build();
            let est = estimate_reporting_rate(&d.view()?, target, *group, classifier.as_ref(), seed)?;
            let json = serde_json::to_string_pretty(&est)? + "\n";
            emit(out, "rate_estimate", cli.format.unwrap_or(Format::Json), json, || {
                key_values(&[
                    ("m_hat", est.m_hat.to_string()),
                    ("group", est.group.map_or_else(String::new, |g| g.to_string())),
                    ("n_train", est.n_train.to_string()),
                    ("n_eval", est.n_eval.to_string()),
                    ("n_positive_eval", est.n_positive_eval.to_string()),
                    ("clamped", est.clamped.to_string()),
                    ("classifier", est.classifier_diagnostics.classifier.clone()),
                ])
            })
        }
        Command::Run { config } => {
            let results = run_config_file(config, out, cli.seed, cli.threads)?;
            Ok(serde_json::json!({
                "out_dir": out.display().to_string(),
                "cells_total": results.cells_total(),
                "cells_failed": results.failures.len(),
            })
            .to_string())
        }
    }
}

struct FitArgs<'a> {
    input: &'a Path,
    method: FitMethod,
    feature: Option<&'a str>,
    rates: Option<[f64; 2]>,
    mode: Mode,
    classifier: ClassifierKind,
    draws: usize,
    predict: Option<&'a Path>,
}

fn fit(out: &Path, seed: u64, a: FitArgs<'_>) -> Result<String> {
    let train = read_bundle(a.input)?;
    let scored = match a.predict {
        Some(p) => read_bundle(p)?,
        None => train.clone(),
    };
    let view = train.view()?;
    let target = a.feature.map(|f| target_of(&train, f)).transpose()?;
    let need_target = || target.ok_or_else(|| Error::Config("--feature is required for this method".into()));
    let mut output = FitOutput {
        method: "",
        target: a.feature.map(str::to_string),
        model: LinearModel::new(0.0, Vec::new()),
        rates: None,
        imputation: None,
        hessian_definite: None,
        fallback_ridge: None,
    };
    let values = match a.method {
        FitMethod::Plain => {
            output.method = "plain";
            output.model = ols_fit(view.x, view.y)?;
            output.model.predict_all(&scored.x)?
        }
        FitMethod::FeatureOmission => {
            output.method = "feature_omission";
            output.model = baseline_feature_omission(&view, need_target()?)?;
            output.model.predict_all(&scored.x)?
        }
        FitMethod::RowOmission => {
            output.method = "row_omission";
            output.model = baseline_row_omission(&view, need_target()?)?;
            output.model.predict_all(&scored.x)?
        }
        FitMethod::MultipleImputation => {
            output.method = "multiple_imputation";
            let mi = baseline_multiple_imputation(&view, need_target()?, a.draws, seed)?;
            output.model = mi.mean_model();
            mi.predict_all(&scored.x)
        }
        FitMethod::Augmented => {
            output.method = "augmented";
            let t = need_target()?;
            let rates = match a.rates {
                Some(r) => r,
                None => {
                    let c = a.classifier.build();
                    let mut r = [1.0; 2];
                    for g in 0..2u8 {
                        let s = underreport_core::rng::derive_seed(seed, &[u64::from(g)]);
                        r[usize::from(g)] = estimate_reporting_rate(&view, t, Some(g), c.as_ref(), s)?.m_hat;
                    }
                    r
                }
            };
            let report = augmented_fit(&view, t, rates, a.mode)?;
            let vals = optimal_imputation_values(&view, t, rates, a.mode)?;
            let pred = predict_all_with_imputation(&report.model, &scored.view()?, &vals, t)?;
            output.rates = Some(rates);
            output.imputation = Some(vals);
            output.hessian_definite = Some(report.hessian_definite);
            output.fallback_ridge = Some(report.fallback_ridge);
            output.model = report.model;
            pred
        }
    };
    output.model.feature_names = train.feature_names.clone();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let model_path = out.join("model.json");
    let json = serde_json::to_string_pretty(&output)? + "\n";
    fs::write(&model_path, &json).map_err(|e| Error::io(&model_path, e))?;
    write_predictions(
        &out.join("predictions.csv"),
        &Predictions {
            groups: scored.g.clone(),
            values,
        },
    )?;
    Ok(json)
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(text) => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["underreport", "bogus"]), 1);
        assert_eq!(main_with_args(["underreport", "theory"]), 1);
        assert_eq!(main_with_args(["underreport", "--help"]), 0);
    }

    #[test]
    fn moments_file_builds_population() {
        let m: MomentsFile = serde_json::from_str(
            r#"{"mu": [0, 0], "sigma": [[1, 0.5], [0.5, 1]], "alpha": 0, "beta": [1, 1],
                "r": 0.5, "m0": [1, 1], "m1": [0.5, 1]}"#,
        )
        .unwrap();
        assert_eq!(m.population().unwrap().d(), 2);
    }
}
