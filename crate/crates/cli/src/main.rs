//! Command-line surface for the sibcross toolkit: dataset simulation,
//! scenario studies, single-dataset analysis, and cross-over demos.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O failure,
//! 4 numerical failure (every requested estimate missing).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sibcross::crossover::{
    carryover_difference_estimator, cosibling_substitution_estimator, crossover_exposure_effect,
    period_difference_estimator, simulate_crossover, CrossoverParams,
};
use sibcross::data::{validate_dataset, Dataset, DgpParams, FamilyRecord, FitResult};
use sibcross::dgp::{analytic_targets, scenario_preset, simulate_dataset};
use sibcross::estimators::{AlphaConvention, BwFit};
use sibcross::harness::{
    cluster_bootstrap, run_scenario_detailed, run_weighted_analysis, summarize_estimates,
    write_raw_estimates_csv, write_summary_csv, BootstrapAnalysis, BootstrapResult, Procedure,
    ScenarioConfig, ScenarioReport, Z_WALD,
};
use sibcross::rng::{mix, tags};
use sibcross::weighting::{Normalization, SelectionModel, TruncationRule, WeightModelForm};

#[derive(Parser)]
#[command(
    name = "sibcross",
    version,
    about = "Sibling-comparison simulation and estimation toolkit"
)]
struct Cli {
    /// Master seed for all randomness.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker thread count (defaults to the number of cores). Results are
    /// identical at any thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (simulate, crossover-demo) or directory (other commands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a sibling-pair dataset and write it as CSV.
    Simulate(SimulateArgs),
    /// Run the Monte Carlo scenario study described by a config file.
    RunScenarios(RunScenariosArgs),
    /// Analyze a twin-score CSV: between-within fit, weighted contrast,
    /// cluster bootstrap.
    Analyze(AnalyzeArgs),
    /// Simulate a two-period cross-over and print the aliasing decomposition.
    CrossoverDemo(CrossoverArgs),
    /// Re-summarize a raw per-replication estimates CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Named parameter preset (scenario1..scenario4).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Parameter file (.toml or .json) with the generator keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the number of families.
    #[arg(long)]
    n_families: Option<usize>,
    /// Include the latent columns (u, alpha, alpha_tilde).
    #[arg(long)]
    with_latent: bool,
    /// Emit the analysis input schema family_id,score1,score2,y1,y2 with
    /// exposures re-expressed as integer conflict scores in [-20, -10]
    /// (exposed iff score < -15).
    #[arg(long, conflicts_with = "with_latent")]
    scores: bool,
}

#[derive(Args)]
struct RunScenariosArgs {
    /// Scenario list config (.toml or .json).
    #[arg(long)]
    config: PathBuf,
    /// Override every scenario's replication count (smoke runs).
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input CSV with header family_id,score1,score2,y1,y2.
    #[arg(long)]
    input: PathBuf,
    /// Exposure rule: exposed iff score < threshold.
    #[arg(long, default_value_t = -15.0, allow_hyphen_values = true)]
    threshold: f64,
    /// Weighted-mean normalization: ht or hajek.
    #[arg(long, value_parser = parse_normalization, default_value = "ht")]
    normalization: Normalization,
    /// Alpha reconstruction convention: appendix or maintext.
    #[arg(long, value_parser = parse_convention, default_value = "appendix")]
    alpha_convention: AlphaConvention,
    /// Exclude observations with weights above this percentile of the
    /// positive weights (e.g. 0.99841).
    #[arg(long, conflicts_with = "truncate_above")]
    truncate_percentile: Option<f64>,
    /// Exclude observations with weights above this constant.
    #[arg(long)]
    truncate_above: Option<f64>,
    /// Let the weight models depend on alpha quadratically on the log-odds
    /// scale (sensitivity check on the linear form).
    #[arg(long)]
    quadratic_weights: bool,
    /// Cluster bootstrap replications (>= 2).
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
}

#[derive(Args)]
struct CrossoverArgs {
    /// Cross-over parameter file (.toml or .json); the flags below are used
    /// when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    n_families: usize,
    #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    lambda0: f64,
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pi_effect: f64,
    #[arg(long, default_value_t = 1.0)]
    sd_alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    sd_s: f64,
    #[arg(long, default_value_t = 1.0)]
    sd_eps: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Raw estimates CSV (scenario,procedure,rep,estimate).
    #[arg(long)]
    raw: PathBuf,
    /// Target value for bias; required when a scenario label is not a
    /// built-in preset.
    #[arg(long, allow_hyphen_values = true)]
    target: Option<f64>,
}

/// Command failure with its process exit code.
#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    fn io(message: impl fmt::Display) -> Self {
        CliError { code: 3, message: message.to_string() }
    }

    fn numerical(message: impl Into<String>) -> Self {
        CliError { code: 4, message: message.into() }
    }
}

impl From<sibcross::Error> for CliError {
    fn from(e: sibcross::Error) -> Self {
        match e {
            sibcross::Error::Io(io) => CliError::io(io),
            other => CliError::config(other.to_string()),
        }
    }
}

type CmdResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        // Ignoring the error keeps repeated in-process runs harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(&cli, args),
        Command::RunScenarios(args) => cmd_run_scenarios(&cli, args),
        Command::Analyze(args) => cmd_analyze(&cli, args),
        Command::CrossoverDemo(args) => cmd_crossover_demo(&cli, args),
        Command::Report(args) => cmd_report(&cli, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn parse_normalization(s: &str) -> Result<Normalization, String> {
    match s {
        "ht" => Ok(Normalization::Ht),
        "hajek" => Ok(Normalization::Hajek),
        _ => Err("expected 'ht' or 'hajek'".into()),
    }
}

fn parse_convention(s: &str) -> Result<AlphaConvention, String> {
    match s {
        "appendix" => Ok(AlphaConvention::Appendix),
        "maintext" => Ok(AlphaConvention::Maintext),
        _ => Err("expected 'appendix' or 'maintext'".into()),
    }
}

fn load_params(preset: &Option<String>, config: &Option<PathBuf>) -> Result<DgpParams, CliError> {
    match (preset, config) {
        (Some(name), None) => scenario_preset(name)
            .ok_or_else(|| CliError::config(format!("unknown preset '{name}'"))),
        // An unreadable or malformed config file is a configuration error
        // (exit 2); exit 3 is reserved for output I/O failures.
        (None, Some(path)) => {
            DgpParams::from_file(path).map_err(|e| CliError::config(e.to_string()))
        }
        _ => Err(CliError::config("provide exactly one of --preset or --config")),
    }
}

fn create_out_dir(out: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(CliError::io)?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    fs::write(path, bytes).map_err(CliError::io)
}

// ---------------------------------------------------------------------------
// simulate

/// Integer conflict scores carrying the exposure: exposed siblings draw from
/// [-20, -16], unexposed from [-15, -10], so thresholding at -15 recovers
/// the exposure exactly. Derived from the seed's mixing function; no extra
/// generator state needed for fixture decoration.
fn score_for(exposed: bool, word: u64) -> i64 {
    if exposed {
        -20 + (word % 5) as i64
    } else {
        -15 + (word % 6) as i64
    }
}

fn write_scores_csv(d: &Dataset, seed: u64, writer: impl Write) -> Result<(), sibcross::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["family_id", "score1", "score2", "y1", "y2"])?;
    for r in &d.records {
        let s1 = score_for(r.x1 == 1, mix(seed, &[tags::SCORES, r.family_id, 1]));
        let s2 = score_for(r.x2 == 1, mix(seed, &[tags::SCORES, r.family_id, 2]));
        w.write_record([
            r.family_id.to_string(),
            s1.to_string(),
            s2.to_string(),
            r.y1.to_string(),
            r.y2.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> CmdResult {
    let mut params = load_params(&args.preset, &args.config)?;
    if let Some(n) = args.n_families {
        params.n_families = n;
    }
    params.validate()?;
    let dataset = simulate_dataset(&params, cli.seed);
    let mut buf = Vec::new();
    if args.scores {
        write_scores_csv(&dataset, cli.seed, &mut buf)?;
    } else {
        dataset.write_csv(&mut buf, args.with_latent)?;
    }
    match &cli.out {
        Some(path) => write_file(path, &buf)?,
        None => std::io::stdout().write_all(&buf).map_err(CliError::io)?,
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// run-scenarios

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    scenarios: Vec<ScenarioEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioEntry {
    label: Option<String>,
    preset: Option<String>,
    dgp: Option<DgpParams>,
    n_replications: Option<usize>,
    seed: Option<u64>,
    procedures: Option<Vec<Procedure>>,
    truncation: Option<TruncationRule>,
    normalization: Option<Normalization>,
    alpha_convention: Option<AlphaConvention>,
    selection_model: Option<SelectionModel>,
}

impl ScenarioEntry {
    fn resolve(self, global_seed: u64, reps: Option<usize>) -> Result<ScenarioConfig, CliError> {
        let dgp = match (&self.preset, self.dgp) {
            (Some(name), None) => scenario_preset(name)
                .ok_or_else(|| CliError::config(format!("unknown preset '{name}'")))?,
            (None, Some(p)) => p,
            _ => {
                return Err(CliError::config(
                    "each scenario needs exactly one of 'preset' or 'dgp'",
                ))
            }
        };
        let label = self
            .label
            .or(self.preset)
            .ok_or_else(|| CliError::config("scenario without 'preset' needs a 'label'"))?;
        let mut cfg = ScenarioConfig::new(label, dgp);
        if let Some(n) = self.n_replications {
            cfg.n_replications = n;
        }
        if let Some(n) = reps {
            cfg.n_replications = n;
        }
        cfg.seed = self.seed.unwrap_or(global_seed);
        if let Some(p) = self.procedures {
            cfg.procedures = p;
        }
        if let Some(t) = self.truncation {
            cfg.truncation = t;
        }
        if let Some(n) = self.normalization {
            cfg.normalization = n;
        }
        if let Some(a) = self.alpha_convention {
            cfg.alpha_convention = a;
        }
        cfg.selection_model = self.selection_model;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_scenario_file(path: &Path) -> Result<ScenarioFile, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let parsed: ScenarioFile = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| CliError::config(e.to_string()))?,
        _ => toml::from_str(&text).map_err(|e| CliError::config(e.to_string()))?,
    };
    if parsed.scenarios.is_empty() {
        return Err(CliError::config("config lists no scenarios"));
    }
    Ok(parsed)
}

fn cmd_run_scenarios(cli: &Cli, args: &RunScenariosArgs) -> CmdResult {
    let file = load_scenario_file(&args.config)?;
    let out_dir = create_out_dir(&cli.out)?;
    let mut reports: Vec<ScenarioReport> = Vec::new();
    for entry in file.scenarios {
        let cfg = entry.resolve(cli.seed, args.reps)?;
        let (report, outcomes) =
            run_scenario_detailed(&cfg).map_err(|e| CliError::config(e.to_string()))?;
        print!("{}", report.text_table());
        println!();
        write_file(
            &out_dir.join(format!("report_{}.txt", report.label)),
            report.text_table().as_bytes(),
        )?;
        let mut raw = Vec::new();
        write_raw_estimates_csv(&report.label, &outcomes, &mut raw)?;
        write_file(&out_dir.join(format!("raw_{}.csv", report.label)), &raw)?;
        reports.push(report);
    }
    let mut summary = Vec::new();
    write_summary_csv(&reports, &mut summary)?;
    write_file(&out_dir.join("summary.csv"), &summary)?;

    let all_missing = reports.iter().all(|r| r.rows.iter().all(|row| row.n_nonmissing == 0));
    if all_missing {
        return Err(CliError::numerical("all estimates missing in every scenario"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze

fn read_scores_csv(path: &Path, threshold: f64) -> Result<Dataset, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::config(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    if headers != ["family_id", "score1", "score2", "y1", "y2"] {
        return Err(CliError::config(format!(
            "expected header family_id,score1,score2,y1,y2, found {}",
            headers.join(",")
        )));
    }
    let mut records = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| CliError::config(e.to_string()))?;
        let parse = |i: usize| -> Result<f64, CliError> {
            row.get(i)
                .ok_or_else(|| CliError::config(format!("row {}: missing column {i}", line + 2)))?
                .parse()
                .map_err(|e| CliError::config(format!("row {}: {e}", line + 2)))
        };
        let family_id = parse(0)? as u64;
        let (s1, s2) = (parse(1)?, parse(2)?);
        records.push(FamilyRecord::new(
            family_id,
            u8::from(s1 < threshold),
            u8::from(s2 < threshold),
            parse(3)?,
            parse(4)?,
        ));
    }
    let d = Dataset::new(records);
    let report = validate_dataset(&d);
    if !report.is_valid() {
        let summary: Vec<String> = report.findings.iter().take(3).map(|f| f.to_string()).collect();
        return Err(CliError::config(format!("invalid dataset: {}", summary.join("; "))));
    }
    Ok(d)
}

#[derive(Serialize)]
struct CoefficientRow {
    estimate: f64,
    std_error: f64,
    ci_low: f64,
    ci_high: f64,
}

impl CoefficientRow {
    fn new(estimate: f64, std_error: f64) -> Self {
        CoefficientRow {
            estimate,
            std_error,
            ci_low: estimate - Z_WALD * std_error,
            ci_high: estimate + Z_WALD * std_error,
        }
    }
}

#[derive(Serialize)]
struct BwEstimates {
    converged: bool,
    intercept: Option<CoefficientRow>,
    within: Option<CoefficientRow>,
    between: Option<CoefficientRow>,
    omega2_hat: Option<f64>,
    sigma2_hat: Option<f64>,
    n_families: usize,
    n_discordant: usize,
}

impl BwEstimates {
    fn from_fit(fit: &BwFit) -> Self {
        if !fit.converged {
            return BwEstimates {
                converged: false,
                intercept: None,
                within: None,
                between: None,
                omega2_hat: None,
                sigma2_hat: None,
                n_families: fit.n_families,
                n_discordant: fit.n_discordant,
            };
        }
        BwEstimates {
            converged: true,
            intercept: Some(CoefficientRow::new(fit.mu_hat, fit.mu_se)),
            within: Some(CoefficientRow::new(fit.beta_w_hat, fit.beta_w_se)),
            between: Some(CoefficientRow::new(fit.beta_b_hat, fit.beta_b_se)),
            omega2_hat: Some(fit.omega2_hat),
            sigma2_hat: Some(fit.sigma2_hat),
            n_families: fit.n_families,
            n_discordant: fit.n_discordant,
        }
    }
}

#[derive(Serialize)]
struct AnalyzeOutput {
    input: String,
    threshold: f64,
    normalization: Normalization,
    alpha_convention: AlphaConvention,
    truncation: TruncationRule,
    weight_model: WeightModelForm,
    bw: BwEstimates,
    weighted: FitResult,
    bootstrap: BootstrapResultSummary,
}

#[derive(Serialize)]
struct BootstrapResultSummary {
    estimate: Option<f64>,
    boot_se: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    n_boot: usize,
    n_failed: usize,
}

impl From<&BootstrapResult> for BootstrapResultSummary {
    fn from(b: &BootstrapResult) -> Self {
        BootstrapResultSummary {
            estimate: b.estimate,
            boot_se: b.boot_se,
            ci_low: b.ci_low,
            ci_high: b.ci_high,
            n_boot: b.n_boot,
            n_failed: b.n_failed,
        }
    }
}

fn cmd_analyze(cli: &Cli, args: &AnalyzeArgs) -> CmdResult {
    if !args.threshold.is_finite() {
        return Err(CliError::config("threshold must be finite"));
    }
    if args.bootstrap < 2 {
        return Err(CliError::config("--bootstrap must be >= 2"));
    }
    let truncation = match (args.truncate_percentile, args.truncate_above) {
        (Some(p), None) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::config("--truncate-percentile must be in [0, 1]"));
            }
            TruncationRule::Percentile(p)
        }
        (None, Some(c)) => TruncationRule::Absolute(c),
        (None, None) => TruncationRule::None,
        _ => unreachable!("clap conflicts_with"),
    };
    let d = read_scores_csv(&args.input, args.threshold)?;
    let out_dir = create_out_dir(&cli.out)?;

    let weight_model = if args.quadratic_weights {
        WeightModelForm::Quadratic
    } else {
        WeightModelForm::Linear
    };
    let analysis = run_weighted_analysis(
        &d,
        truncation,
        args.normalization,
        args.alpha_convention,
        weight_model,
    );
    let bw = BwEstimates::from_fit(&analysis.bw_fit);

    println!(
        "Between-within model ({} families, {} discordant)",
        d.len(),
        analysis.bw_fit.n_discordant
    );
    match (&bw.intercept, &bw.within, &bw.between) {
        (Some(i), Some(w), Some(b)) => {
            println!("  {:<11} {:>9} {:>21}", "term", "estimate", "95% CI");
            for (name, row) in [("intercept", i), ("within", w), ("between", b)] {
                println!(
                    "  {:<11} {:>9.3} [{:>8.3}, {:>8.3}]",
                    name, row.estimate, row.ci_low, row.ci_high
                );
            }
        }
        _ => println!("  not estimable (reason: {:?})", analysis.bw_fit.failure),
    }

    let bootstrap_analysis = BootstrapAnalysis::WeightedContrast {
        truncation,
        normalization: args.normalization,
        alpha_convention: args.alpha_convention,
        weight_model,
    };
    let boot = cluster_bootstrap(&d, &bootstrap_analysis, args.bootstrap, cli.seed);
    match (boot.estimate, boot.boot_se) {
        (Some(est), Some(se)) => println!(
            "Weighted family-level contrast: {:.4} (boot SE {:.4}, 95% CI [{:.4}, {:.4}], B = {}, failed {})",
            est,
            se,
            boot.ci_low.unwrap(),
            boot.ci_high.unwrap(),
            boot.n_boot,
            boot.n_failed
        ),
        _ => println!("Weighted family-level contrast: missing"),
    }

    if let Some(weights) = &analysis.weights {
        let mut buf = Vec::new();
        weights.write_csv(&mut buf)?;
        write_file(&out_dir.join("weights.csv"), &buf)?;
    }
    let output = AnalyzeOutput {
        input: args.input.display().to_string(),
        threshold: args.threshold,
        normalization: args.normalization,
        alpha_convention: args.alpha_convention,
        truncation,
        weight_model,
        bw,
        weighted: analysis.result.clone(),
        bootstrap: (&boot).into(),
    };
    let json =
        serde_json::to_string_pretty(&output).map_err(|e| CliError::config(e.to_string()))?;
    write_file(&out_dir.join("estimates.json"), json.as_bytes())?;

    if !analysis.bw_fit.converged && analysis.result.is_missing() {
        return Err(CliError::numerical("all estimates missing"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// crossover-demo

fn cmd_crossover_demo(cli: &Cli, args: &CrossoverArgs) -> CmdResult {
    let params = match &args.config {
        Some(path) => CrossoverParams::from_file(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?,
        None => CrossoverParams {
            n_families: args.n_families,
            mu: args.mu,
            pi_effect: args.pi_effect,
            beta: args.beta,
            lambda0: args.lambda0,
            lambda1: args.lambda1,
            sd_alpha: args.sd_alpha,
            sd_s: args.sd_s,
            sd_eps: args.sd_eps,
        },
    };
    params.validate()?;
    let d = simulate_crossover(&params, cli.seed);
    let period = period_difference_estimator(&d);
    let exposure = crossover_exposure_effect(&d);
    let cosib = cosibling_substitution_estimator(&d);
    let carry = carryover_difference_estimator(&d);
    if [&period, &exposure, &cosib, &carry].iter().all(|r| r.is_missing()) {
        return Err(CliError::numerical("all cross-over estimates missing"));
    }

    let fmt = |r: &FitResult| match (r.estimate, r.std_error) {
        (Some(e), Some(se)) => format!("{e:>10.4} (se {se:.4})"),
        (Some(e), None) => format!("{e:>10.4}"),
        _ => "        NA".to_string(),
    };
    let aliasing_half = (params.lambda0 - params.lambda1) / 2.0;
    println!("Cross-over simulation: {} families, seed {}", params.n_families, cli.seed);
    println!(
        "  true beta = {}, lambda0 = {}, lambda1 = {}",
        params.beta, params.lambda0, params.lambda1
    );
    println!("  {:<36} {}", "period-difference estimate", fmt(&period));
    println!("  {:<36} {:>10.4}", "  predicted beta + (l0 - l1)/2", params.beta + aliasing_half);
    println!("  {:<36} {}", "cosibling-substitution estimate", fmt(&cosib));
    println!(
        "  {:<36} {:>10.4}",
        "  predicted beta + (l0 - l1)",
        params.beta + 2.0 * aliasing_half
    );
    println!("  {:<36} {}", "carry-over difference estimate", fmt(&carry));
    println!("  {:<36} {:>10.4}", "  predicted l1 - l0", params.lambda1 - params.lambda0);

    if let Some(path) = &cli.out {
        let mut buf = Vec::new();
        d.write_csv(&mut buf)?;
        write_file(path, &buf)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report

fn cmd_report(cli: &Cli, args: &ReportArgs) -> CmdResult {
    let text = fs::read_to_string(&args.raw).map_err(CliError::io)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::config(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    if headers != ["scenario", "procedure", "rep", "estimate"] {
        return Err(CliError::config(format!(
            "expected header scenario,procedure,rep,estimate, found {}",
            headers.join(",")
        )));
    }
    let mut groups: BTreeMap<(String, String), Vec<Option<f64>>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| CliError::config(e.to_string()))?;
        let scenario = row.get(0).unwrap_or_default().to_string();
        let procedure = row.get(1).unwrap_or_default().to_string();
        let estimate = match row.get(3).unwrap_or_default() {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|e| CliError::config(e.to_string()))?),
        };
        groups.entry((scenario, procedure)).or_default().push(estimate);
    }
    if groups.is_empty() {
        return Err(CliError::config("raw estimates file has no rows"));
    }

    let out_dir = create_out_dir(&cli.out)?;
    type ProcedureEstimates = Vec<(String, Vec<Option<f64>>)>;
    let mut by_scenario: BTreeMap<String, ProcedureEstimates> = BTreeMap::new();
    for ((scenario, procedure), estimates) in groups {
        by_scenario.entry(scenario).or_default().push((procedure, estimates));
    }
    let mut reports = Vec::new();
    for (scenario, rows) in by_scenario {
        let target = match scenario_preset(&scenario) {
            Some(p) => analytic_targets(&p).tau3,
            None => args.target.ok_or_else(|| {
                CliError::config(format!(
                    "scenario '{scenario}' is not a preset; supply --target for bias"
                ))
            })?,
        };
        let n_replications = rows.iter().map(|(_, e)| e.len()).max().unwrap_or(0);
        let mut summaries = rows
            .into_iter()
            .map(|(procedure, estimates)| {
                let mut s = summarize_estimates(&estimates, target);
                s.procedure = procedure_from_name(&procedure)?;
                Ok(s)
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        summaries.sort_by_key(|s| procedure_rank(s.procedure));
        let report = ScenarioReport { label: scenario, target, n_replications, rows: summaries };
        print!("{}", report.text_table());
        println!();
        reports.push(report);
    }
    let mut summary = Vec::new();
    write_summary_csv(&reports, &mut summary)?;
    write_file(&out_dir.join("summary.csv"), &summary)?;
    Ok(())
}

/// Canonical column order of the summary table.
fn procedure_rank(p: Procedure) -> usize {
    match p {
        Procedure::Bw => 0,
        Procedure::WTrue => 1,
        Procedure::WEstTrueAlpha => 2,
        Procedure::WEstEstAlpha => 3,
        Procedure::Selection => 4,
    }
}

fn procedure_from_name(name: &str) -> Result<Procedure, CliError> {
    match name {
        "bw" => Ok(Procedure::Bw),
        "w_true" => Ok(Procedure::WTrue),
        "w_est_true_alpha" => Ok(Procedure::WEstTrueAlpha),
        "w_est_est_alpha" => Ok(Procedure::WEstEstAlpha),
        "selection" => Ok(Procedure::Selection),
        other => Err(CliError::config(format!("unknown procedure '{other}'"))),
    }
}
