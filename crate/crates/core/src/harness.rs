//! Monte Carlo study harness: replicated scenario runs with missing-value
//! accounting, paper-style summary tables, and the cluster bootstrap.
//!
//! Replication r of a scenario simulates its dataset from the substream
//! `(master seed, label hash, r)`; replications run in parallel and are
//! aggregated in index order, so reports are bit-identical at any worker
//! count. The summary's `sd` column is the empirical standard deviation of
//! the non-missing estimates across replications (the spread of the
//! estimator, not the standard error of the mean).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DgpParams, FitResult, MissingReason};
use crate::dgp::{analytic_targets, simulate_dataset};
use crate::estimators::{estimate_alpha, fit_bw_model, AlphaConvention, BwFit};
use crate::rng::{label_hash, mix, substream, tags};
use crate::weighting::{
    estimated_weights, estimated_weights_with_form, simulate_selection,
    selection_weighted_contrast, true_weights, truncate_weights, weighted_contrast,
    Normalization, SelectionModel, TruncationRule, WeightModelForm, WeightSet, WeightSource,
};
use crate::{Error, Result};

/// Wald critical value used for every bootstrap confidence interval.
pub const Z_WALD: f64 = 1.959964;

/// An estimation procedure run on each replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    /// Between-within model, reporting the within effect.
    Bw,
    /// Weighted contrast with the generating-model weights.
    WTrue,
    /// Weighted contrast with estimated weights at the latent alpha.
    WEstTrueAlpha,
    /// Weighted contrast with estimated weights at the estimated alpha.
    WEstEstAlpha,
    /// Selection-and-treatment weighted contrast (needs a selection model).
    Selection,
}

impl Procedure {
    pub fn name(&self) -> &'static str {
        match self {
            Procedure::Bw => "bw",
            Procedure::WTrue => "w_true",
            Procedure::WEstTrueAlpha => "w_est_true_alpha",
            Procedure::WEstEstAlpha => "w_est_est_alpha",
            Procedure::Selection => "selection",
        }
    }

    /// The four procedures of the published table, in column order.
    pub fn table_default() -> Vec<Procedure> {
        vec![Procedure::Bw, Procedure::WTrue, Procedure::WEstTrueAlpha, Procedure::WEstEstAlpha]
    }
}

fn default_procedures() -> Vec<Procedure> {
    Procedure::table_default()
}

fn default_truncation() -> TruncationRule {
    TruncationRule::None
}

fn default_normalization() -> Normalization {
    Normalization::Ht
}

fn default_alpha_convention() -> AlphaConvention {
    AlphaConvention::Appendix
}

fn default_replications() -> usize {
    2000
}

/// One scenario of the simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub label: String,
    pub dgp: DgpParams,
    #[serde(default = "default_replications")]
    pub n_replications: usize,
    #[serde(default = "default_procedures")]
    pub procedures: Vec<Procedure>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_truncation")]
    pub truncation: TruncationRule,
    #[serde(default = "default_normalization")]
    pub normalization: Normalization,
    #[serde(default = "default_alpha_convention")]
    pub alpha_convention: AlphaConvention,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_model: Option<SelectionModel>,
}

impl ScenarioConfig {
    pub fn new(label: impl Into<String>, dgp: DgpParams) -> Self {
        ScenarioConfig {
            label: label.into(),
            dgp,
            n_replications: default_replications(),
            procedures: default_procedures(),
            seed: 0,
            truncation: default_truncation(),
            normalization: default_normalization(),
            alpha_convention: default_alpha_convention(),
            selection_model: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.label.is_empty() {
            return Err(Error::Invalid("scenario label must be non-empty".into()));
        }
        if self.n_replications == 0 {
            return Err(Error::Invalid("n_replications must be >= 1".into()));
        }
        if self.procedures.is_empty() {
            return Err(Error::Invalid("at least one procedure required".into()));
        }
        if self.procedures.contains(&Procedure::Selection) && self.selection_model.is_none() {
            return Err(Error::Invalid(
                "selection procedure requires a selection_model".into(),
            ));
        }
        self.dgp.validate()
    }

    fn replication_seed(&self, rep: usize) -> u64 {
        mix(self.seed, &[tags::REPLICATION, label_hash(&self.label), rep as u64])
    }
}

/// All procedure results of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub rep: usize,
    pub results: Vec<(Procedure, FitResult)>,
}

impl ReplicationOutcome {
    pub fn estimate(&self, procedure: Procedure) -> Option<f64> {
        self.results.iter().find(|(p, _)| *p == procedure).and_then(|(_, r)| r.estimate)
    }
}

fn weighted_result(
    d: &Dataset,
    weights: Result<WeightSet>,
    truncation: TruncationRule,
    normalization: Normalization,
) -> FitResult {
    match weights {
        Ok(w) => {
            let w = truncate_weights(&w, truncation);
            weighted_contrast(d, &w, normalization)
        }
        Err(_) => FitResult::missing(MissingReason::InsufficientData, 0),
    }
}

/// Runs every configured procedure on the dataset of replication
/// `rep_index`. Estimation failures never propagate as errors; they surface
/// as missing results with the responsible rule recorded.
pub fn run_replication(cfg: &ScenarioConfig, rep_index: usize) -> ReplicationOutcome {
    let dataset_seed = cfg.replication_seed(rep_index);
    let d = simulate_dataset(&cfg.dgp, dataset_seed);
    let needs_bw = cfg
        .procedures
        .iter()
        .any(|p| matches!(p, Procedure::Bw | Procedure::WEstEstAlpha));
    let bw: Option<BwFit> = needs_bw.then(|| fit_bw_model(&d));

    let results = cfg
        .procedures
        .iter()
        .map(|&procedure| {
            let result = match procedure {
                Procedure::Bw => bw.as_ref().unwrap().within_effect_result(),
                Procedure::WTrue => weighted_result(
                    &d,
                    true_weights(&d, &cfg.dgp),
                    cfg.truncation,
                    cfg.normalization,
                ),
                Procedure::WEstTrueAlpha => {
                    let alpha = d.latent_alpha().unwrap_or_default();
                    weighted_result(
                        &d,
                        estimated_weights(&d, &alpha, WeightSource::EstimatedTrueAlpha),
                        cfg.truncation,
                        cfg.normalization,
                    )
                }
                Procedure::WEstEstAlpha => {
                    let fit = bw.as_ref().unwrap();
                    if !fit.converged {
                        FitResult::missing(MissingReason::Nonconvergence, 0)
                    } else {
                        let alpha = estimate_alpha(fit, &d, cfg.alpha_convention);
                        weighted_result(
                            &d,
                            estimated_weights(&d, &alpha, WeightSource::EstimatedEstAlpha),
                            cfg.truncation,
                            cfg.normalization,
                        )
                    }
                }
                Procedure::Selection => {
                    let model = cfg.selection_model.expect("validated config");
                    match simulate_selection(&d, &model, dataset_seed) {
                        Ok(sd) => selection_weighted_contrast(&sd, &cfg.dgp, (1, 1), (0, 0)),
                        Err(_) => FitResult::missing(MissingReason::InsufficientData, 0),
                    }
                }
            };
            (procedure, result)
        })
        .collect();
    ReplicationOutcome { rep: rep_index, results }
}

/// Summary of one procedure across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureSummary {
    pub procedure: Procedure,
    pub n_nonmissing: usize,
    pub mean: Option<f64>,
    pub bias: Option<f64>,
    pub sd: Option<f64>,
    /// Counts of missing-rule firings, keyed by reason name.
    #[serde(default)]
    pub missing_reasons: BTreeMap<String, usize>,
}

/// Per-scenario aggregation in the published table's shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub label: String,
    /// Analytic value of the family-level target for this scenario.
    pub target: f64,
    pub n_replications: usize,
    pub rows: Vec<ProcedureSummary>,
}

/// N / mean / bias / sd over optional estimates. The sd is the sample
/// standard deviation of the non-missing estimates; a single estimate has
/// no spread and yields `None`.
pub fn summarize_estimates(estimates: &[Option<f64>], target: f64) -> ProcedureSummary {
    let values: Vec<f64> = estimates.iter().flatten().copied().collect();
    let n = values.len();
    if n == 0 {
        return ProcedureSummary {
            procedure: Procedure::Bw,
            n_nonmissing: 0,
            mean: None,
            bias: None,
            sd: None,
            missing_reasons: BTreeMap::new(),
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        Some(
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt(),
        )
    } else {
        None
    };
    ProcedureSummary {
        procedure: Procedure::Bw,
        n_nonmissing: n,
        mean: Some(mean),
        bias: Some(mean - target),
        sd,
        missing_reasons: BTreeMap::new(),
    }
}

/// Runs all replications and returns both the aggregated report and the raw
/// per-replication outcomes (for persisting the estimate scatter).
pub fn run_scenario_detailed(cfg: &ScenarioConfig) -> Result<(ScenarioReport, Vec<ReplicationOutcome>)> {
    cfg.validate()?;
    let outcomes: Vec<ReplicationOutcome> =
        (0..cfg.n_replications).into_par_iter().map(|r| run_replication(cfg, r)).collect();
    let target = analytic_targets(&cfg.dgp).tau3;
    let rows = cfg
        .procedures
        .iter()
        .map(|&procedure| {
            let estimates: Vec<Option<f64>> =
                outcomes.iter().map(|o| o.estimate(procedure)).collect();
            let mut summary = summarize_estimates(&estimates, target);
            summary.procedure = procedure;
            for outcome in &outcomes {
                if let Some((_, res)) = outcome.results.iter().find(|(p, _)| *p == procedure) {
                    if let Some(reason) = res.diagnostics.missing_reason {
                        *summary.missing_reasons.entry(reason.to_string()).or_insert(0) += 1;
                    }
                }
            }
            summary
        })
        .collect();
    let report = ScenarioReport {
        label: cfg.label.clone(),
        target,
        n_replications: cfg.n_replications,
        rows,
    };
    Ok((report, outcomes))
}

/// Runs all replications and aggregates the per-procedure summaries.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    run_scenario_detailed(cfg).map(|(report, _)| report)
}

impl ScenarioReport {
    /// Aligned text table mirroring the published layout.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Scenario {} (target = {:.4}, replications = {})",
            self.label, self.target, self.n_replications
        );
        let headers: Vec<&str> = self.rows.iter().map(|r| r.procedure.name()).collect();
        let width = headers.iter().map(|h| h.len()).max().unwrap_or(4).max(8) + 2;
        let _ = write!(out, "{:<6}", "");
        for h in &headers {
            let _ = write!(out, "{h:>width$}");
        }
        out.push('\n');
        let fmt_opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.2}"),
            None => "NA".to_string(),
        };
        let _ = write!(out, "{:<6}", "N");
        for r in &self.rows {
            let _ = write!(out, "{:>width$}", r.n_nonmissing);
        }
        out.push('\n');
        for (name, pick) in [
            ("Mean", 0usize),
            ("Bias", 1),
            ("SD", 2),
        ] {
            let _ = write!(out, "{name:<6}");
            for r in &self.rows {
                let v = match pick {
                    0 => r.mean,
                    1 => r.bias,
                    _ => r.sd,
                };
                let _ = write!(out, "{:>width$}", fmt_opt(v));
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self, procedure: Procedure) -> Option<&ProcedureSummary> {
        self.rows.iter().find(|r| r.procedure == procedure)
    }
}

/// Writes `scenario,procedure,n,mean,bias,sd` rows for a set of reports.
pub fn write_summary_csv<W: Write>(reports: &[ScenarioReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "procedure", "n", "mean", "bias", "sd"])?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for report in reports {
        for row in &report.rows {
            w.write_record([
                report.label.clone(),
                row.procedure.name().to_string(),
                row.n_nonmissing.to_string(),
                fmt(row.mean),
                fmt(row.bias),
                fmt(row.sd),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `scenario,procedure,rep,estimate` raw rows (empty estimate when
/// missing), for the estimate-agreement scatter.
pub fn write_raw_estimates_csv<W: Write>(
    label: &str,
    outcomes: &[ReplicationOutcome],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "procedure", "rep", "estimate"])?;
    for outcome in outcomes {
        for (procedure, result) in &outcome.results {
            w.write_record([
                label.to_string(),
                procedure.name().to_string(),
                outcome.rep.to_string(),
                result.estimate.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// The full weighted analysis pipeline on observed data: between-within fit,
/// alpha reconstruction, estimated weights, truncation, weighted contrast.
#[derive(Debug, Clone)]
pub struct WeightedAnalysis {
    pub result: FitResult,
    pub bw_fit: BwFit,
    /// The truncated weight set, when the pipeline got that far.
    pub weights: Option<WeightSet>,
}

pub fn run_weighted_analysis(
    d: &Dataset,
    truncation: TruncationRule,
    normalization: Normalization,
    convention: AlphaConvention,
    weight_model: WeightModelForm,
) -> WeightedAnalysis {
    let bw_fit = fit_bw_model(d);
    if !bw_fit.converged {
        return WeightedAnalysis {
            result: FitResult::missing(
                bw_fit.failure.unwrap_or(MissingReason::Nonconvergence),
                0,
            ),
            bw_fit,
            weights: None,
        };
    }
    let alpha = estimate_alpha(&bw_fit, d, convention);
    match estimated_weights_with_form(d, &alpha, WeightSource::EstimatedEstAlpha, weight_model) {
        Ok(w) => {
            let w = truncate_weights(&w, truncation);
            let result = weighted_contrast(d, &w, normalization);
            WeightedAnalysis { result, bw_fit, weights: Some(w) }
        }
        Err(_) => WeightedAnalysis {
            result: FitResult::missing(MissingReason::InsufficientData, 0),
            bw_fit,
            weights: None,
        },
    }
}

/// Analysis re-run inside every bootstrap replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapAnalysis {
    /// Between-within fit, within effect.
    BwWithin,
    /// Estimated-alpha weighted contrast with the given truncation rule and
    /// normalization; both are re-applied inside each replicate.
    WeightedContrast {
        truncation: TruncationRule,
        normalization: Normalization,
        alpha_convention: AlphaConvention,
        #[serde(default = "default_weight_model")]
        weight_model: WeightModelForm,
    },
}

fn default_weight_model() -> WeightModelForm {
    WeightModelForm::Linear
}

impl BootstrapAnalysis {
    fn run(&self, d: &Dataset) -> (FitResult, Option<usize>) {
        match self {
            BootstrapAnalysis::BwWithin => (fit_bw_model(d).within_effect_result(), None),
            BootstrapAnalysis::WeightedContrast {
                truncation,
                normalization,
                alpha_convention,
                weight_model,
            } => {
                let analysis = run_weighted_analysis(
                    d,
                    *truncation,
                    *normalization,
                    *alpha_convention,
                    *weight_model,
                );
                let n_excluded = analysis.weights.as_ref().map(|w| w.n_excluded());
                (analysis.result, n_excluded)
            }
        }
    }
}

/// Per-replicate bootstrap record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateDiag {
    pub estimate: Option<f64>,
    /// Observations excluded by the truncation rule inside this replicate;
    /// `None` when the analysis has no truncation stage or failed early.
    pub n_excluded: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub estimate: Option<f64>,
    pub boot_se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_boot: usize,
    pub n_failed: usize,
    pub replicates: Vec<ReplicateDiag>,
}

/// Nonparametric cluster bootstrap: resamples families with replacement,
/// re-runs the entire analysis pipeline inside each replicate (weight
/// estimation and truncation included), and reports the Wald interval
/// `estimate ∓ 1.959964 * boot_se` where `boot_se` is the standard deviation
/// of the non-failed replicate estimates.
pub fn cluster_bootstrap(
    d: &Dataset,
    analysis: &BootstrapAnalysis,
    n_boot: usize,
    seed: u64,
) -> BootstrapResult {
    assert!(n_boot >= 2, "need at least two bootstrap replicates");
    let n = d.len();
    let (point, _) = analysis.run(d);

    let replicates: Vec<ReplicateDiag> = (0..n_boot as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, &[tags::BOOTSTRAP, b]);
            let mut records = Vec::with_capacity(n);
            for fresh_id in 0..n {
                let pick = rng.gen_range(0..n);
                let mut rec = d.records[pick];
                // Fresh ids keep the resample a valid dataset even when the
                // same family is drawn twice.
                rec.family_id = fresh_id as u64;
                records.push(rec);
            }
            let resample = Dataset::new(records);
            let (result, n_excluded) = analysis.run(&resample);
            ReplicateDiag { estimate: result.estimate, n_excluded }
        })
        .collect();

    let values: Vec<f64> = replicates.iter().filter_map(|r| r.estimate).collect();
    let n_failed = n_boot - values.len();
    if values.len() < 2 || point.estimate.is_none() {
        return BootstrapResult {
            estimate: point.estimate,
            boot_se: None,
            ci_low: None,
            ci_high: None,
            n_boot,
            n_failed,
            replicates,
        };
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let boot_se = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64)
        .sqrt();
    let estimate = point.estimate.unwrap();
    BootstrapResult {
        estimate: Some(estimate),
        boot_se: Some(boot_se),
        ci_low: Some(estimate - Z_WALD * boot_se),
        ci_high: Some(estimate + Z_WALD * boot_se),
        n_boot,
        n_failed,
        replicates,
    }
}
