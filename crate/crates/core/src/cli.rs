//! Command-line front end.
//!
//! `run` parses arguments, executes one subcommand and returns the exit
//! status together with the text output and the full [`AnalysisReport`]
//! (also written to `--json <path>` when requested). Exit status 0 means
//! success, 1 a data or validation error, 2 a usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bounds::{self, Interval, Method, Quantity, StratumContrast};
use crate::covselect::{self, CiMode, SelectionReport};
use crate::error::{Error, Result};
use crate::identify::{self, Estimate, MonotonicityReport};
use crate::model::{self, ExperimentalQuantities, Provenance, Smoothing, StratifiedJoint, StratumExperiment};
use crate::oracle::{self, VerificationReport};
use crate::simulate::{self, Scenario, Stratifier, Study};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "probcause",
    version,
    about = "Bounds, identification and variance analysis for the probabilities of causation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stratified and Tian–Pearl bounds for PN, PS and PNS
    Bounds(BoundsArgs),
    /// PN and PNS point estimates under monotonicity, with asymptotic variances
    Identify(IdentifyArgs),
    /// Compare the stratifiers S, T and {S,T} by estimator variance
    Select(SelectArgs),
    /// Monte Carlo replication of the estimator variances
    Simulate(SimulateArgs),
    /// Cross-check the closed-form conditional bounds against the polytope oracle
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Count table in CSV (`covariates..., x, y, count`)
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SmoothingArg::None)]
    smoothing: SmoothingArg,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Write the full report as JSON
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SmoothingArg {
    None,
    AddHalf,
}

impl From<SmoothingArg> for Smoothing {
    fn from(s: SmoothingArg) -> Self {
        match s {
            SmoothingArg::None => Smoothing::None,
            SmoothingArg::AddHalf => Smoothing::AddHalf,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum QuantityArg {
    #[value(name = "PN", alias = "pn")]
    Pn,
    #[value(name = "PS", alias = "ps")]
    Ps,
    #[value(name = "PNS", alias = "pns")]
    Pns,
    All,
}

impl QuantityArg {
    fn quantities(self) -> Vec<Quantity> {
        match self {
            QuantityArg::Pn => vec![Quantity::PN],
            QuantityArg::Ps => vec![Quantity::PS],
            QuantityArg::Pns => vec![Quantity::PNS],
            QuantityArg::All => Quantity::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Per-stratum experimental probabilities (JSON); SITA adjustment otherwise
    #[arg(long)]
    experimental: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = QuantityArg::All)]
    quantity: QuantityArg,
    /// Project experimental probabilities onto the feasible range instead of failing
    #[arg(long)]
    clamp: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct IdentifyArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated covariates to stratify on (default: all)
    #[arg(long, value_delimiter = ',')]
    stratifier: Option<Vec<String>>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    s: String,
    #[arg(long)]
    t: String,
    /// Significance level of the G tests
    #[arg(long, default_value_t = covselect::DEFAULT_ALPHA)]
    alpha: f64,
    /// Check independences on the estimated probabilities with this tolerance instead of G tests
    #[arg(long)]
    exact_tol: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Built-in setting 1-4
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    setting: Option<usize>,
    /// Scenario JSON file
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = simulate::DEFAULT_REPS)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    experimental: Option<PathBuf>,
    #[arg(long, default_value_t = oracle::DEFAULT_RESOLUTION)]
    resolution: f64,
    #[arg(long, default_value_t = oracle::DEFAULT_TOL)]
    tol: f64,
    #[command(flatten)]
    output: OutputArgs,
}

// ── Report ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub file: String,
    pub n: Option<u64>,
    pub covariates: Vec<String>,
    pub strata: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: Option<u64>,
    pub flags: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tool: ToolInfo,
    pub command: String,
    pub input: Option<InputSummary>,
    pub provenance: Option<Provenance>,
    pub notes: Vec<String>,
    pub intervals: Vec<Interval>,
    pub contrasts: Option<Vec<StratumContrast>>,
    pub estimates: Vec<Estimate>,
    pub monotonicity: Option<MonotonicityReport>,
    pub selection: Option<SelectionReport>,
    pub verification: Option<VerificationReport>,
    pub simulation: Option<Study>,
    pub metadata: Metadata,
}

impl AnalysisReport {
    fn new(command: &str) -> Self {
        Self {
            tool: ToolInfo {
                name: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
            },
            command: command.into(),
            input: None,
            provenance: None,
            notes: Vec::new(),
            intervals: Vec::new(),
            contrasts: None,
            estimates: Vec::new(),
            monotonicity: None,
            selection: None,
            verification: None,
            simulation: None,
            metadata: Metadata {
                seed: None,
                flags: BTreeMap::new(),
            },
        }
    }

    fn flag(&mut self, name: &str, value: impl ToString) {
        self.metadata.flags.insert(name.into(), value.to_string());
    }

    /// Looks up an interval by quantity and method.
    pub fn interval(&self, quantity: Quantity, method: &Method) -> Option<&Interval> {
        self.intervals
            .iter()
            .find(|i| i.quantity == quantity && &i.method == method)
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub status: i32,
    pub stdout: String,
    pub stderr: String,
    pub report: Option<AnalysisReport>,
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let status = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let (stdout, stderr) = if e.use_stderr() {
                (String::new(), text)
            } else {
                (text, String::new())
            };
            return Outcome {
                status,
                stdout,
                stderr,
                report: None,
            };
        }
    };
    let mut out = String::new();
    let (result, json) = match &cli.command {
        Command::Bounds(a) => (run_bounds(a, &mut out), &a.output.json),
        Command::Identify(a) => (run_identify(a, &mut out), &a.output.json),
        Command::Select(a) => (run_select(a, &mut out), &a.output.json),
        Command::Simulate(a) => (run_simulate(a, &mut out), &a.output.json),
        Command::Verify(a) => (run_verify(a, &mut out), &a.output.json),
    };
    let report = match result {
        Ok(report) => report,
        Err(e) => {
            let status = match e {
                Error::InvalidArgument(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
            return Outcome {
                status,
                stdout: out,
                stderr: format!("error: {e}\n"),
                report: None,
            };
        }
    };
    if let Some(path) = json {
        if let Err(e) = write_json(path, &report) {
            return Outcome {
                status: EXIT_DATA,
                stdout: out,
                stderr: format!("error: {}: {e}\n", path.display()),
                report: Some(report),
            };
        }
    }
    let status = match &report.verification {
        Some(v) if !v.passed => EXIT_DATA,
        _ => EXIT_OK,
    };
    Outcome {
        status,
        stdout: out,
        stderr: String::new(),
        report: Some(report),
    }
}

fn write_json(path: &Path, report: &AnalysisReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn located<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { row, message } => Error::Parse {
            row,
            message: format!("{}: {message}", path.display()),
        },
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        Error::Json(json) => Error::InvalidTable(format!("{}: {json}", path.display())),
        other => other,
    })
}

fn load_joint(args: &DataArgs, report: &mut AnalysisReport) -> Result<StratifiedJoint> {
    let counts = located(&args.data, model::load_counts_path(&args.data))?;
    let joint = located(&args.data, model::to_probabilities(&counts, args.smoothing.into()))?;
    report.input = Some(InputSummary {
        file: args.data.display().to_string(),
        n: joint.total_n(),
        covariates: joint.covariates().to_vec(),
        strata: joint.keys().map(|k| k.to_string()).collect(),
    });
    report.flag(
        "smoothing",
        format!("{:?}", Smoothing::from(args.smoothing)).to_lowercase(),
    );
    Ok(joint)
}

#[derive(Debug, Deserialize)]
struct ExperimentalFile {
    strata: Vec<StratumExperiment>,
}

fn load_experimental(
    path: Option<&PathBuf>,
    joint: &StratifiedJoint,
    report: &mut AnalysisReport,
) -> Result<ExperimentalQuantities> {
    let exp = match path {
        Some(path) => {
            let text = located(path, std::fs::read_to_string(path).map_err(Error::from))?;
            let file: ExperimentalFile = located(path, serde_json::from_str(&text).map_err(Error::from))?;
            report.flag("experimental", path.display());
            located(path, ExperimentalQuantities::measured(joint, file.strata))?
        }
        None => {
            report.notes.push(
                "no experimental data supplied: P(y_x|s) = P(y|x,s) substituted under strong ignorability given the covariates"
                    .into(),
            );
            model::adjusted_experimental(joint)
        }
    };
    report.provenance = Some(exp.provenance);
    Ok(exp)
}

fn describe_input(out: &mut String, report: &AnalysisReport) {
    if let Some(input) = &report.input {
        let _ = writeln!(
            out,
            "data: {} (N = {}, {} strata on [{}])",
            input.file,
            input.n.map_or("?".into(), |n| n.to_string()),
            input.strata.len(),
            input.covariates.join(", ")
        );
    }
    for note in &report.notes {
        let _ = writeln!(out, "note: {note}");
    }
}

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

fn run_bounds(args: &BoundsArgs, out: &mut String) -> Result<AnalysisReport> {
    let mut report = AnalysisReport::new("bounds");
    let joint = load_joint(&args.data, &mut report)?;
    let mut exp = load_experimental(args.experimental.as_ref(), &joint, &mut report)?;
    report.flag("clamp", args.clamp);
    let compat = model::validate_compatibility(&joint, &exp, model::ALGEBRA_TOL)?;
    if !compat.is_compatible() {
        for v in &compat.violations {
            report.notes.push(format!(
                "stratum {}: P(y_w|s) = {:.4} for arm {:?} outside consistency range [{:.4}, {:.4}]",
                v.stratum, v.value, v.arm, v.lower, v.upper
            ));
        }
        if args.clamp {
            exp = model::project_compatible(&joint, &exp)?;
            report
                .notes
                .push("experimental probabilities projected onto their consistency ranges (--clamp)".into());
        }
    }
    describe_input(out, &report);
    let _ = writeln!(
        out,
        "P(y_x) = {}, P(y_x') = {}",
        fmt3(exp.marginal.p_y_do_x),
        fmt3(exp.marginal.p_y_do_xprime)
    );
    for quantity in args.quantity.quantities() {
        let b = bounds::analyse(quantity, &joint, &exp)?;
        let _ = writeln!(out, "\n{quantity}");
        let _ = writeln!(
            out,
            "  {:<14} [{}, {}]",
            "stratified",
            fmt3(b.stratified.lower),
            fmt3(b.stratified.upper)
        );
        let _ = writeln!(
            out,
            "  {:<14} [{}, {}]",
            "tian-pearl",
            fmt3(b.tian_pearl.lower),
            fmt3(b.tian_pearl.upper)
        );
        for (c, term) in b.conditional.iter().zip(&b.stratified.terms) {
            let _ = writeln!(
                out,
                "  {:<14} [{}, {}]  lower term: {}; upper term: {}",
                term.stratum.to_string(),
                fmt3(c.lower),
                fmt3(c.upper),
                term.lower_term,
                term.upper_term
            );
        }
        report.intervals.push(b.stratified);
        report.intervals.push(b.tian_pearl);
        report.intervals.extend(b.conditional);
    }
    let contrasts = bounds::stratum_contrasts(&joint, &exp)?;
    let _ = writeln!(out, "\nstratum contrasts");
    for c in &contrasts {
        let _ = writeln!(
            out,
            "  {:<14} P(y_x|s) - P(y_x'|s) = {:>6}   P(y_x|s) - P(y'_x'|s) = {:>6}",
            c.stratum.to_string(),
            fmt3(c.risk_difference),
            fmt3(c.y_x_minus_yp_xprime)
        );
    }
    report.contrasts = Some(contrasts);
    Ok(report)
}

fn write_estimate(out: &mut String, e: &Estimate) {
    let _ = writeln!(
        out,
        "  {:<4} value = {:>7}  a.var = {:.6}  se = {:.4}  (N = {})",
        e.quantity.to_string(),
        fmt3(e.value),
        e.avar,
        e.se,
        e.n
    );
    for w in &e.warnings {
        let _ = writeln!(out, "       warning: {w}");
    }
}

fn run_identify(args: &IdentifyArgs, out: &mut String) -> Result<AnalysisReport> {
    let mut report = AnalysisReport::new("identify");
    let joint = load_joint(&args.data, &mut report)?;
    let joint = match &args.stratifier {
        Some(names) => {
            report.flag("stratifier", names.join(","));
            model::collapse(&joint, names)?
        }
        None => joint,
    };
    let exp = model::adjusted_experimental(&joint);
    report.provenance = Some(exp.provenance);
    describe_input(out, &report);
    let _ = writeln!(out, "stratified on [{}]", joint.covariates().join(", "));
    let pn = identify::pn_point(&joint)?;
    let pns = identify::pns_point(&joint)?;
    write_estimate(out, &pn);
    write_estimate(out, &pns);
    let mono = identify::monotonicity_diagnostic(&joint, &exp)?;
    let flagged: Vec<String> = mono
        .strata
        .iter()
        .filter(|f| f.flagged)
        .map(|f| f.stratum.to_string())
        .collect();
    if flagged.is_empty() {
        let _ = writeln!(out, "monotonicity: no stratum has a negative risk difference");
    } else {
        let _ = writeln!(out, "monotonicity: negative risk difference in {}", flagged.join("; "));
    }
    report.estimates = vec![pn, pns];
    report.monotonicity = Some(mono);
    Ok(report)
}

fn run_select(args: &SelectArgs, out: &mut String) -> Result<AnalysisReport> {
    let mut report = AnalysisReport::new("select");
    let joint = load_joint(&args.data, &mut report)?;
    let mode = match args.exact_tol {
        Some(tol) => CiMode::ExactProbability { tol },
        None => CiMode::CountTest { alpha: args.alpha },
    };
    report.flag("s", &args.s);
    report.flag("t", &args.t);
    let selection = covselect::compare_covariate_sets(&joint, &args.s, &args.t, mode)?;
    describe_input(out, &report);
    let _ = writeln!(
        out,
        "{:<10} {:>9} {:>11} {:>9} {:>11}",
        "stratifier", "PN", "a.var(PN)", "PNS", "a.var(PNS)"
    );
    for c in &selection.candidates {
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>11.6} {:>9} {:>11.6}",
            format!("{{{}}}", c.stratifier.join(",")),
            fmt3(c.pn.value),
            c.pn.avar,
            fmt3(c.pns.value),
            c.pns.avar
        );
    }
    for v in &selection.ci_results {
        let detail = match (v.statistic, v.df, v.p_value) {
            (Some(g), Some(df), Some(p)) => format!("G = {g:.3}, df = {df}, p = {p:.4}"),
            _ => format!("max deviation = {:.2e}", v.max_deviation),
        };
        let _ = writeln!(
            out,
            "{}: {} ({detail})",
            v.relation.kind,
            if v.holds { "holds" } else { "rejected" }
        );
    }
    for o in &selection.orderings {
        let _ = writeln!(
            out,
            "{} a.var {{{}}} <= {{{}}}: {} ({})",
            o.quantity,
            o.smaller.join(","),
            o.larger.join(","),
            if o.holds { "yes" } else { "no" },
            if o.guaranteed {
                "guaranteed"
            } else {
                "not guaranteed by the independence premises"
            }
        );
    }
    match &selection.recommendation {
        Some(r) => {
            let _ = writeln!(
                out,
                "recommended: PN {{{}}}, PNS {{{}}}",
                r.pn.join(","),
                r.pns.join(",")
            );
        }
        None => {
            let _ = writeln!(out, "no recommendation: the independence premises do not both hold");
        }
    }
    report.selection = Some(selection);
    Ok(report)
}

fn run_simulate(args: &SimulateArgs, out: &mut String) -> Result<AnalysisReport> {
    let mut report = AnalysisReport::new("simulate");
    let scenario: Scenario = match (&args.setting, &args.scenario) {
        (Some(k), _) => {
            report.flag("setting", k);
            simulate::builtin_scenario(*k)?
        }
        (None, Some(path)) => {
            report.flag("scenario", path.display());
            let text = located(path, std::fs::read_to_string(path).map_err(Error::from))?;
            located(path, serde_json::from_str(&text).map_err(Error::from))?
        }
        (None, None) => {
            return Err(Error::InvalidArgument(
                "either --setting or --scenario is required".into(),
            ))
        }
    };
    report.metadata.seed = Some(args.seed);
    report.flag("n", args.n);
    report.flag("reps", args.reps);
    let study = simulate::replicate_study(&scenario, args.n, args.reps, args.seed, &Stratifier::ALL)?;
    let _ = writeln!(
        out,
        "scenario {}: N = {}, reps = {}, seed = {} ({} of {} datasets regenerated for empty cells)",
        study.scenario, study.n, study.reps, study.seed, study.discarded, study.attempts
    );
    let _ = writeln!(
        out,
        "{:<4} {:<6} {:>8} {:>8} {:>11} {:>6} {:>8}",
        "", "strat", "var", "a.var", "mean a.var", "ratio", "mean"
    );
    for r in &study.results {
        let _ = writeln!(
            out,
            "{:<4} {:<6} {:>8.4} {:>8.4} {:>11.4} {:>6.3} {:>8}",
            r.quantity.to_string(),
            r.stratifier.to_string(),
            r.empirical_var,
            r.population_avar,
            r.mean_avar,
            r.ratio(),
            fmt3(r.mean_estimate)
        );
    }
    report.simulation = Some(study);
    Ok(report)
}

fn run_verify(args: &VerifyArgs, out: &mut String) -> Result<AnalysisReport> {
    let mut report = AnalysisReport::new("verify");
    let joint = load_joint(&args.data, &mut report)?;
    let exp = load_experimental(args.experimental.as_ref(), &joint, &mut report)?;
    report.flag("resolution", args.resolution);
    report.flag("tol", args.tol);
    let verification = oracle::verify_bounds(&joint, &exp, args.tol, args.resolution)?;
    describe_input(out, &report);
    for e in &verification.entries {
        let _ = writeln!(
            out,
            "  {:<14} {:<4} closed form [{:.4}, {:.4}]  oracle [{:.4}, {:.4}]  {}",
            e.stratum.to_string(),
            e.quantity.to_string(),
            e.closed_form[0],
            e.closed_form[1],
            e.oracle[0],
            e.oracle[1],
            if e.passed { "ok" } else { "MISMATCH" }
        );
    }
    let _ = writeln!(
        out,
        "max discrepancy {:.2e} (tol {:.1e}): {}",
        verification.max_discrepancy,
        verification.tol,
        if verification.passed { "pass" } else { "FAIL" }
    );
    report.verification = Some(verification);
    Ok(report)
}
