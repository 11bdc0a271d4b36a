//! Stratified contingency data and the probability algebra shared by the
//! bounds, identification and simulation modules.
//!
//! Exposure `x` / `x'` and outcome `y` / `y'` are binary. A [`StratifiedJoint`]
//! holds `P(x, y | s)` for every stratum `s` of the discrete covariates together
//! with the stratum weight `P(s)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for algebraic identities (normalisation, weighted sums).
pub const ALGEBRA_TOL: f64 = 1e-9;

/// Default tolerance for data-facing feasibility checks.
pub const DATA_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exposure {
    Exposed,
    Unexposed,
}

impl Exposure {
    pub fn code(self) -> u8 {
        match self {
            Exposure::Exposed => 1,
            Exposure::Unexposed => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Event,
    NoEvent,
}

impl Outcome {
    pub fn code(self) -> u8 {
        match self {
            Outcome::Event => 1,
            Outcome::NoEvent => 0,
        }
    }
}

fn parse_binary(field: &str) -> Option<bool> {
    match field {
        "1" => Some(true),
        "0" => Some(false),
        _ => None,
    }
}

// ── Stratum keys ──────────────────────────────────────────────────────

/// Identifies one stratum by its `(covariate, level)` labels.
///
/// Labels are kept sorted by covariate name so that keys over the same
/// covariate set compare by value and iterate deterministically. The empty key
/// denotes the single pseudo-stratum of an unstratified table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(into = "BTreeMap<String, String>", try_from = "BTreeMap<String, String>")]
pub struct StratumKey {
    labels: Vec<(String, String)>,
}

impl StratumKey {
    pub fn new<I, A, B>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut labels: Vec<(String, String)> = labels.into_iter().map(|(a, b)| (a.into(), b.into())).collect();
        labels.sort();
        for (name, _) in &labels {
            if name.is_empty() {
                return Err(Error::InvalidTable("empty covariate name in stratum key".into()));
            }
        }
        for pair in labels.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::InvalidTable(format!(
                    "covariate `{}` appears twice in one stratum key",
                    pair[0].0
                )));
            }
        }
        Ok(Self { labels })
    }

    /// The key of the unstratified table.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn labels(&self) -> &[(String, String)] {
        &self.labels
    }

    pub fn covariates(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|(name, _)| name.as_str())
    }

    pub fn level(&self, covariate: &str) -> Option<&str> {
        self.labels
            .iter()
            .find(|(name, _)| name == covariate)
            .map(|(_, level)| level.as_str())
    }

    /// Restricts the key to the covariates in `keep`.
    pub fn project(&self, keep: &BTreeSet<&str>) -> Self {
        Self {
            labels: self
                .labels
                .iter()
                .filter(|(name, _)| keep.contains(name.as_str()))
                .cloned()
                .collect(),
        }
    }
}

impl fmt::Display for StratumKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.labels.is_empty() {
            return write!(f, "(all)");
        }
        for (i, (name, level)) in self.labels.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{name}={level}")?;
        }
        Ok(())
    }
}

impl From<StratumKey> for BTreeMap<String, String> {
    fn from(key: StratumKey) -> Self {
        key.labels.into_iter().collect()
    }
}

impl TryFrom<BTreeMap<String, String>> for StratumKey {
    type Error = Error;

    fn try_from(map: BTreeMap<String, String>) -> Result<Self> {
        StratumKey::new(map)
    }
}

// ── Per-stratum tables ────────────────────────────────────────────────

/// `P(x, y | s)` for the four exposure/outcome cells of one stratum and the
/// stratum weight `P(s)`.
///
/// Cells are non-negative and sum to one; both exposure arms must carry
/// positive mass so that `P(y | x, s)` and `P(y | x', s)` exist. Tables built
/// from counts are additionally strictly positive (see [`to_probabilities`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumTable {
    pub exposed_event: f64,
    pub exposed_no_event: f64,
    pub unexposed_event: f64,
    pub unexposed_no_event: f64,
    pub weight: f64,
}

impl StratumTable {
    /// Builds a table from the cells `[P(x,y|s), P(x,y'|s), P(x',y|s), P(x',y'|s)]`.
    pub fn new(cells: [f64; 4], weight: f64) -> Result<Self> {
        let table = Self {
            exposed_event: cells[0],
            exposed_no_event: cells[1],
            unexposed_event: cells[2],
            unexposed_no_event: cells[3],
            weight,
        };
        table.validate()?;
        Ok(table)
    }

    /// Builds a table from `P(x|s)` and the two outcome conditionals.
    pub fn from_conditionals(p_x: f64, p_y_given_x: f64, p_y_given_xp: f64, weight: f64) -> Result<Self> {
        let p_xp = 1.0 - p_x;
        Self::new(
            [
                p_x * p_y_given_x,
                p_x * (1.0 - p_y_given_x),
                p_xp * p_y_given_xp,
                p_xp * (1.0 - p_y_given_xp),
            ],
            weight,
        )
    }

    fn validate(&self) -> Result<()> {
        let cells = self.cells();
        if cells.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidTable(format!(
                "cell probabilities must be finite and non-negative: {cells:?}"
            )));
        }
        let total: f64 = cells.iter().sum();
        if (total - 1.0).abs() > ALGEBRA_TOL {
            return Err(Error::InvalidTable(format!("cells sum to {total}, expected 1")));
        }
        if self.p_x() <= 0.0 || self.p_xp() <= 0.0 {
            return Err(Error::InvalidTable(
                "both exposure arms need positive probability".into(),
            ));
        }
        if !(self.weight > 0.0 && self.weight <= 1.0 + ALGEBRA_TOL) {
            return Err(Error::InvalidTable(format!(
                "stratum weight {} outside (0, 1]",
                self.weight
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> [f64; 4] {
        [
            self.exposed_event,
            self.exposed_no_event,
            self.unexposed_event,
            self.unexposed_no_event,
        ]
    }

    pub fn cell(&self, x: Exposure, y: Outcome) -> f64 {
        match (x, y) {
            (Exposure::Exposed, Outcome::Event) => self.exposed_event,
            (Exposure::Exposed, Outcome::NoEvent) => self.exposed_no_event,
            (Exposure::Unexposed, Outcome::Event) => self.unexposed_event,
            (Exposure::Unexposed, Outcome::NoEvent) => self.unexposed_no_event,
        }
    }

    /// `P(x | s)`
    pub fn p_x(&self) -> f64 {
        self.exposed_event + self.exposed_no_event
    }

    /// `P(x' | s)`
    pub fn p_xp(&self) -> f64 {
        self.unexposed_event + self.unexposed_no_event
    }

    /// `P(y | s)`
    pub fn p_y(&self) -> f64 {
        self.exposed_event + self.unexposed_event
    }

    /// `P(y' | s)`
    pub fn p_yp(&self) -> f64 {
        self.exposed_no_event + self.unexposed_no_event
    }

    /// `P(y | x, s)`
    pub fn p_y_given_x(&self) -> f64 {
        self.exposed_event / self.p_x()
    }

    /// `P(y | x', s)`
    pub fn p_y_given_xp(&self) -> f64 {
        self.unexposed_event / self.p_xp()
    }

    /// Relabels `x <-> x'` and `y <-> y'`. Under this relabelling the
    /// probability of sufficiency becomes the probability of necessity.
    pub fn swapped(&self) -> Self {
        Self {
            exposed_event: self.unexposed_no_event,
            exposed_no_event: self.unexposed_event,
            unexposed_event: self.exposed_no_event,
            unexposed_no_event: self.exposed_event,
            weight: self.weight,
        }
    }
}

/// One stratum of a [`StratifiedJoint`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub key: StratumKey,
    pub table: StratumTable,
}

// ── Stratified joint ──────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct RawJoint {
    covariates: Vec<String>,
    strata: Vec<Stratum>,
    total_n: Option<u64>,
}

/// The stratified joint distribution `P(x, y, s)`, optionally with the sample
/// size `N` it was estimated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawJoint")]
pub struct StratifiedJoint {
    covariates: Vec<String>,
    strata: Vec<Stratum>,
    total_n: Option<u64>,
}

impl TryFrom<RawJoint> for StratifiedJoint {
    type Error = Error;

    fn try_from(raw: RawJoint) -> Result<Self> {
        StratifiedJoint::new(raw.covariates, raw.strata, raw.total_n)
    }
}

impl StratifiedJoint {
    pub fn new(covariates: Vec<String>, mut strata: Vec<Stratum>, total_n: Option<u64>) -> Result<Self> {
        if strata.is_empty() {
            return Err(Error::EmptyStrata);
        }
        let mut covariates = covariates;
        covariates.sort();
        if covariates.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidTable("duplicate covariate name".into()));
        }
        strata.sort_by(|a, b| a.key.cmp(&b.key));
        for pair in strata.windows(2) {
            if pair[0].key == pair[1].key {
                return Err(Error::InvalidTable(format!("duplicate stratum {}", pair[0].key)));
            }
        }
        for stratum in &strata {
            if !stratum.key.covariates().eq(covariates.iter().map(String::as_str)) {
                return Err(Error::InvalidTable(format!(
                    "stratum {} does not match covariates {:?}",
                    stratum.key, covariates
                )));
            }
            stratum.table.validate()?;
        }
        let total: f64 = strata.iter().map(|s| s.table.weight).sum();
        if (total - 1.0).abs() > ALGEBRA_TOL {
            return Err(Error::InvalidTable(format!(
                "stratum weights sum to {total}, expected 1"
            )));
        }
        if total_n == Some(0) {
            return Err(Error::InvalidTable("sample size must be positive".into()));
        }
        Ok(Self {
            covariates,
            strata,
            total_n,
        })
    }

    /// A joint with a single unlabelled stratum.
    pub fn unstratified(table: StratumTable, total_n: Option<u64>) -> Result<Self> {
        let table = StratumTable { weight: 1.0, ..table };
        Self::new(
            Vec::new(),
            vec![Stratum {
                key: StratumKey::empty(),
                table,
            }],
            total_n,
        )
    }

    pub fn covariates(&self) -> &[String] {
        &self.covariates
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn total_n(&self) -> Option<u64> {
        self.total_n
    }

    pub fn with_total_n(mut self, n: Option<u64>) -> Self {
        self.total_n = n;
        self
    }

    pub fn len(&self) -> usize {
        self.strata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strata.is_empty()
    }

    pub fn stratum(&self, key: &StratumKey) -> Option<&StratumTable> {
        self.strata
            .binary_search_by(|s| s.key.cmp(key))
            .ok()
            .map(|i| &self.strata[i].table)
    }

    pub fn keys(&self) -> impl Iterator<Item = &StratumKey> {
        self.strata.iter().map(|s| &s.key)
    }

    /// Marginal cell `P(x, y) = Σ_s P(x, y | s) P(s)`.
    pub fn marginal_cell(&self, x: Exposure, y: Outcome) -> f64 {
        self.strata.iter().map(|s| s.table.cell(x, y) * s.table.weight).sum()
    }

    /// `P(x, y)`
    pub fn p_xy(&self) -> f64 {
        self.marginal_cell(Exposure::Exposed, Outcome::Event)
    }

    /// The x/x', y/y' relabelled joint; see [`StratumTable::swapped`].
    pub fn swapped(&self) -> Self {
        Self {
            covariates: self.covariates.clone(),
            strata: self
                .strata
                .iter()
                .map(|s| Stratum {
                    key: s.key.clone(),
                    table: s.table.swapped(),
                })
                .collect(),
            total_n: self.total_n,
        }
    }
}

// ── Experimental quantities ───────────────────────────────────────────

/// The counterfactual pair `(P(y_x | s), P(y_{x'} | s))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentalPair {
    pub p_y_do_x: f64,
    pub p_y_do_xprime: f64,
}

impl ExperimentalPair {
    pub fn new(p_y_do_x: f64, p_y_do_xprime: f64) -> Result<Self> {
        for p in [p_y_do_x, p_y_do_xprime] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidTable(format!(
                    "experimental probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            p_y_do_x,
            p_y_do_xprime,
        })
    }

    /// `P(y'_{x'} | s)`
    pub fn p_yp_do_xprime(&self) -> f64 {
        1.0 - self.p_y_do_xprime
    }

    /// The pair in the x/x', y/y' relabelled world.
    pub fn swapped(&self) -> Self {
        Self {
            p_y_do_x: 1.0 - self.p_y_do_xprime,
            p_y_do_xprime: 1.0 - self.p_y_do_x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    MeasuredExperimental,
    SitaAdjusted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumExperiment {
    pub key: StratumKey,
    #[serde(flatten)]
    pub pair: ExperimentalPair,
}

/// Per-stratum counterfactual probabilities and their covariate-weighted
/// marginals `P(y_x) = Σ_s P(y_x | s) P(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentalQuantities {
    pub per_stratum: Vec<StratumExperiment>,
    pub marginal: ExperimentalPair,
    pub provenance: Provenance,
}

impl ExperimentalQuantities {
    /// Attaches measured per-stratum experimental probabilities to `joint`,
    /// deriving the marginals from the joint's stratum weights.
    pub fn measured(joint: &StratifiedJoint, per_stratum: Vec<StratumExperiment>) -> Result<Self> {
        Self::assemble(joint, per_stratum, Provenance::MeasuredExperimental)
    }

    fn assemble(
        joint: &StratifiedJoint,
        mut per_stratum: Vec<StratumExperiment>,
        provenance: Provenance,
    ) -> Result<Self> {
        per_stratum.sort_by(|a, b| a.key.cmp(&b.key));
        let joint_keys: Vec<&StratumKey> = joint.keys().collect();
        let exp_keys: Vec<&StratumKey> = per_stratum.iter().map(|e| &e.key).collect();
        if joint_keys != exp_keys {
            return Err(Error::StratumMismatch(format!(
                "joint has strata [{}], experimental data has [{}]",
                join_keys(&joint_keys),
                join_keys(&exp_keys)
            )));
        }
        let mut p_y_do_x = 0.0;
        let mut p_y_do_xprime = 0.0;
        for (e, s) in per_stratum.iter().zip(joint.strata()) {
            ExperimentalPair::new(e.pair.p_y_do_x, e.pair.p_y_do_xprime)?;
            p_y_do_x += e.pair.p_y_do_x * s.table.weight;
            p_y_do_xprime += e.pair.p_y_do_xprime * s.table.weight;
        }
        Ok(Self {
            per_stratum,
            marginal: ExperimentalPair {
                p_y_do_x,
                p_y_do_xprime,
            },
            provenance,
        })
    }

    pub fn pair(&self, key: &StratumKey) -> Option<&ExperimentalPair> {
        self.per_stratum
            .binary_search_by(|e| e.key.cmp(key))
            .ok()
            .map(|i| &self.per_stratum[i].pair)
    }

    pub fn swapped(&self) -> Self {
        Self {
            per_stratum: self
                .per_stratum
                .iter()
                .map(|e| StratumExperiment {
                    key: e.key.clone(),
                    pair: e.pair.swapped(),
                })
                .collect(),
            marginal: self.marginal.swapped(),
            provenance: self.provenance,
        }
    }
}

fn join_keys(keys: &[&StratumKey]) -> String {
    keys.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("; ")
}

/// Pairs every stratum of `joint` with its experimental probabilities.
pub(crate) fn paired<'a>(
    joint: &'a StratifiedJoint,
    exp: &'a ExperimentalQuantities,
) -> Result<Vec<(&'a Stratum, &'a ExperimentalPair)>> {
    if joint.len() != exp.per_stratum.len() {
        return Err(Error::StratumMismatch(format!(
            "joint has {} strata, experimental data has {}",
            joint.len(),
            exp.per_stratum.len()
        )));
    }
    joint
        .strata()
        .iter()
        .zip(&exp.per_stratum)
        .map(|(s, e)| {
            if s.key == e.key {
                Ok((s, &e.pair))
            } else {
                Err(Error::StratumMismatch(format!(
                    "stratum {} has no experimental counterpart (found {})",
                    s.key, e.key
                )))
            }
        })
        .collect()
}

/// Applies the strong-ignorability substitution `P(y_x | s) = P(y | x, s)`.
pub fn adjusted_experimental(joint: &StratifiedJoint) -> ExperimentalQuantities {
    let per_stratum = joint
        .strata()
        .iter()
        .map(|s| StratumExperiment {
            key: s.key.clone(),
            pair: ExperimentalPair {
                p_y_do_x: s.table.p_y_given_x(),
                p_y_do_xprime: s.table.p_y_given_xp(),
            },
        })
        .collect();
    ExperimentalQuantities::assemble(joint, per_stratum, Provenance::SitaAdjusted)
        .expect("strata taken from the joint itself")
}

// ── Compatibility ─────────────────────────────────────────────────────

/// One stratum where consistency fails:
/// `P(w, y | s) <= P(y_w | s) <= 1 - P(w, y' | s)` does not hold for arm `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityViolation {
    pub stratum: StratumKey,
    pub arm: Exposure,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub tol: f64,
    pub violations: Vec<CompatibilityViolation>,
}

impl CompatibilityReport {
    pub fn is_compatible(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_compatibility(
    joint: &StratifiedJoint,
    exp: &ExperimentalQuantities,
    tol: f64,
) -> Result<CompatibilityReport> {
    let mut violations = Vec::new();
    for (stratum, pair) in paired(joint, exp)? {
        let t = &stratum.table;
        let arms = [
            (
                Exposure::Exposed,
                t.exposed_event,
                pair.p_y_do_x,
                1.0 - t.exposed_no_event,
            ),
            (
                Exposure::Unexposed,
                t.unexposed_event,
                pair.p_y_do_xprime,
                1.0 - t.unexposed_no_event,
            ),
        ];
        for (arm, lower, value, upper) in arms {
            if value < lower - tol || value > upper + tol {
                violations.push(CompatibilityViolation {
                    stratum: stratum.key.clone(),
                    arm,
                    lower,
                    value,
                    upper,
                });
            }
        }
    }
    Ok(CompatibilityReport { tol, violations })
}

/// Projects each experimental probability onto its consistency band
/// `[P(w, y | s), 1 - P(w, y' | s)]`, which makes every bound feasible.
pub fn project_compatible(joint: &StratifiedJoint, exp: &ExperimentalQuantities) -> Result<ExperimentalQuantities> {
    let per_stratum = paired(joint, exp)?
        .into_iter()
        .map(|(s, pair)| {
            let t = &s.table;
            StratumExperiment {
                key: s.key.clone(),
                pair: ExperimentalPair {
                    p_y_do_x: pair.p_y_do_x.clamp(t.exposed_event, 1.0 - t.exposed_no_event),
                    p_y_do_xprime: pair.p_y_do_xprime.clamp(t.unexposed_event, 1.0 - t.unexposed_no_event),
                },
            }
        })
        .collect();
    ExperimentalQuantities::assemble(joint, per_stratum, exp.provenance)
}

// ── Counts ────────────────────────────────────────────────────────────

/// Aggregated cell counts keyed by `(stratum, exposure, outcome)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    covariates: Vec<String>,
    cells: BTreeMap<(StratumKey, Exposure, Outcome), u64>,
}

impl CountTable {
    pub fn new(covariates: Vec<String>) -> Self {
        let mut covariates = covariates;
        covariates.sort();
        Self {
            covariates,
            cells: BTreeMap::new(),
        }
    }

    /// Adds `count` to a cell, summing with any existing count.
    pub fn add(&mut self, key: StratumKey, x: Exposure, y: Outcome, count: u64) -> Result<()> {
        if !key.covariates().eq(self.covariates.iter().map(String::as_str)) {
            return Err(Error::InvalidTable(format!(
                "stratum {key} does not match covariates {:?}",
                self.covariates
            )));
        }
        *self.cells.entry((key, x, y)).or_insert(0) += count;
        Ok(())
    }

    pub fn covariates(&self) -> &[String] {
        &self.covariates
    }

    pub fn total(&self) -> u64 {
        self.cells.values().sum()
    }

    pub fn get(&self, key: &StratumKey, x: Exposure, y: Outcome) -> u64 {
        self.cells.get(&(key.clone(), x, y)).copied().unwrap_or(0)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&StratumKey, Exposure, Outcome, u64)> {
        self.cells.iter().map(|((k, x, y), c)| (k, *x, *y, *c))
    }

    pub fn strata(&self) -> BTreeSet<&StratumKey> {
        self.cells.keys().map(|(k, _, _)| k).collect()
    }

    /// Sums counts over the covariates not in `keep`.
    pub fn collapse<S: AsRef<str>>(&self, keep: &[S]) -> Result<CountTable> {
        let keep = check_covariates(&self.covariates, keep)?;
        let mut out = CountTable::new(keep.iter().map(|s| s.to_string()).collect());
        for ((key, x, y), count) in &self.cells {
            *out.cells.entry((key.project(&keep), *x, *y)).or_insert(0) += count;
        }
        Ok(out)
    }

    /// Renders the table in the CSV count schema accepted by [`load_counts`].
    pub fn render_csv(&self) -> String {
        let mut out = String::new();
        for name in &self.covariates {
            out.push_str(name);
            out.push(',');
        }
        out.push_str("x,y,count\n");
        for ((key, x, y), count) in &self.cells {
            for (_, level) in key.labels() {
                out.push_str(level);
                out.push(',');
            }
            out.push_str(&format!("{},{},{}\n", x.code(), y.code(), count));
        }
        out
    }
}

fn check_covariates<'a, S: AsRef<str>>(available: &[String], keep: &'a [S]) -> Result<BTreeSet<&'a str>> {
    keep.iter()
        .map(|name| {
            let name = name.as_ref();
            if available.iter().any(|c| c == name) {
                Ok(name)
            } else {
                Err(Error::UnknownCovariate(name.to_string()))
            }
        })
        .collect()
}

/// Reads counts in the CSV schema `covariates..., x, y, count`.
///
/// `x` and `y` are coded 1 (exposed / event) or 0. Lines starting with `#` are
/// ignored and duplicate cells are summed.
pub fn load_counts<R: Read>(source: R) -> Result<CountTable> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: e.position().map_or(1, |p| p.line()),
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let (Some(x_col), Some(y_col), Some(count_col)) = (column("x"), column("y"), column("count")) else {
        return Err(Error::Parse {
            row: 1,
            message: "header must contain `x`, `y` and `count` columns".into(),
        });
    };
    let covariate_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| ![x_col, y_col, count_col].contains(i))
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    if covariate_cols.iter().any(|(_, name)| name.is_empty()) {
        return Err(Error::Parse {
            row: 1,
            message: "empty covariate column name".into(),
        });
    }

    let mut table = CountTable::new(covariate_cols.iter().map(|(_, n)| n.clone()).collect());
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            row: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Parse { row, message };
        let field = |i: usize| record.get(i).unwrap_or("");

        let x = match parse_binary(field(x_col)) {
            Some(true) => Exposure::Exposed,
            Some(false) => Exposure::Unexposed,
            None => return Err(bad(format!("unknown x level `{}` (expected 1 or 0)", field(x_col)))),
        };
        let y = match parse_binary(field(y_col)) {
            Some(true) => Outcome::Event,
            Some(false) => Outcome::NoEvent,
            None => return Err(bad(format!("unknown y level `{}` (expected 1 or 0)", field(y_col)))),
        };
        let raw = field(count_col);
        let count: u64 = raw.parse().map_err(|_| {
            if raw.starts_with('-') {
                bad(format!("negative count `{raw}`"))
            } else {
                bad(format!("invalid count `{raw}`"))
            }
        })?;
        let key = StratumKey::new(
            covariate_cols
                .iter()
                .map(|(i, name)| (name.clone(), field(*i).to_string())),
        )
        .map_err(|e| bad(e.to_string()))?;
        table.add(key, x, y, count)?;
    }
    if table.total() == 0 {
        return Err(Error::Parse {
            row: 0,
            message: "table has no positive counts".into(),
        });
    }
    Ok(table)
}

pub fn load_counts_path(path: &Path) -> Result<CountTable> {
    let file = std::fs::File::open(path)?;
    load_counts(std::io::BufReader::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    #[default]
    None,
    AddHalf,
}

const CELLS: [(Exposure, Outcome); 4] = [
    (Exposure::Exposed, Outcome::Event),
    (Exposure::Exposed, Outcome::NoEvent),
    (Exposure::Unexposed, Outcome::Event),
    (Exposure::Unexposed, Outcome::NoEvent),
];

/// Plug-in estimate of the stratified joint from counts.
///
/// `total_n` of the result is the raw sample size. With add-half smoothing,
/// 0.5 is added to every cell before normalising.
pub fn to_probabilities(counts: &CountTable, smoothing: Smoothing) -> Result<StratifiedJoint> {
    let n = counts.total();
    if n == 0 {
        return Err(Error::InvalidTable("table has no counts".into()));
    }
    let offset = match smoothing {
        Smoothing::None => 0.0,
        Smoothing::AddHalf => 0.5,
    };
    let mut rows = Vec::new();
    for key in counts.strata() {
        let mut cells = [0.0; 4];
        for (slot, (x, y)) in cells.iter_mut().zip(CELLS) {
            let c = counts.get(key, x, y);
            if c == 0 && smoothing == Smoothing::None {
                return Err(Error::Positivity {
                    stratum: key.clone(),
                    x: x.code(),
                    y: y.code(),
                });
            }
            *slot = c as f64 + offset;
        }
        rows.push((key.clone(), cells));
    }
    let grand: f64 = rows.iter().map(|(_, c)| c.iter().sum::<f64>()).sum();
    let strata = rows
        .into_iter()
        .map(|(key, cells)| {
            let total: f64 = cells.iter().sum();
            let table = StratumTable::new(cells.map(|c| c / total), total / grand)?;
            Ok(Stratum { key, table })
        })
        .collect::<Result<Vec<_>>>()?;
    StratifiedJoint::new(counts.covariates().to_vec(), strata, Some(n))
}

/// Marginalises the joint onto the covariates in `keep` (possibly none).
pub fn collapse<S: AsRef<str>>(joint: &StratifiedJoint, keep: &[S]) -> Result<StratifiedJoint> {
    let keep = check_covariates(joint.covariates(), keep)?;
    let mut groups: BTreeMap<StratumKey, Vec<&StratumTable>> = BTreeMap::new();
    for s in joint.strata() {
        groups.entry(s.key.project(&keep)).or_default().push(&s.table);
    }
    let strata = groups
        .into_iter()
        .map(|(key, members)| {
            if let [only] = members.as_slice() {
                return Ok(Stratum { key, table: **only });
            }
            let weight: f64 = members.iter().map(|t| t.weight).sum();
            let mut cells = [0.0; 4];
            for t in &members {
                for (acc, c) in cells.iter_mut().zip(t.cells()) {
                    *acc += c * t.weight;
                }
            }
            let table = StratumTable::new(cells.map(|c| c / weight), weight)?;
            Ok(Stratum { key, table })
        })
        .collect::<Result<Vec<_>>>()?;
    StratifiedJoint::new(keep.iter().map(|s| s.to_string()).collect(), strata, joint.total_n())
}

#[cfg(test)]
mod tests {
    use super::*;

    const RECEPTOR_SURVIVAL: &str = include_str!("../tests/fixtures/receptor_survival.csv");

    fn key(level: &str) -> StratumKey {
        StratumKey::new([("stage", level)]).unwrap()
    }

    #[test]
    fn loads_breast_cancer_counts() {
        let counts = load_counts(RECEPTOR_SURVIVAL.as_bytes()).unwrap();
        assert_eq!(counts.total(), 192);
        assert_eq!(counts.strata().len(), 3);
        assert_eq!(counts.get(&key("3"), Exposure::Exposed, Outcome::Event), 9);
    }

    #[test]
    fn single_row_and_duplicates() {
        let one = load_counts("s,x,y,count\na,1,1,10\n".as_bytes()).unwrap();
        assert_eq!(one.total(), 10);

        let dup = load_counts("s,x,y,count\na,1,1,3\na,1,1,4\n".as_bytes()).unwrap();
        assert_eq!(dup.cells().count(), 1);
        let k = StratumKey::new([("s", "a")]).unwrap();
        assert_eq!(dup.get(&k, Exposure::Exposed, Outcome::Event), 7);
    }

    #[test]
    fn parse_errors_name_the_row() {
        let cases = [
            ("s,x,y,count\na,1,1,3\na,2,1,4\n", "x level"),
            ("s,x,y,count\na,1,1,3\na,1,yes,4\n", "y level"),
            ("s,x,y,count\na,1,1,3\na,1,1,-4\n", "negative"),
            ("s,x,y,count\na,1,1,3\na,1,1,many\n", "invalid count"),
        ];
        for (text, needle) in cases {
            match load_counts(text.as_bytes()) {
                Err(Error::Parse { row, message }) => {
                    assert_eq!(row, 3, "{text}");
                    assert!(message.contains(needle), "{message}");
                }
                other => panic!("expected parse error, got {other:?}"),
            }
        }
        assert!(matches!(
            load_counts("s,x,count\na,1,3\n".as_bytes()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn stage_three_plug_in() {
        let joint = to_probabilities(&load_counts(RECEPTOR_SURVIVAL.as_bytes()).unwrap(), Smoothing::None).unwrap();
        let s3 = joint.stratum(&key("3")).unwrap();
        assert!((s3.p_y_given_xp() - 12.0 / 14.0).abs() < 1e-12);
        assert!((s3.p_y_given_x() - 9.0 / 15.0).abs() < 1e-12);
        assert!((s3.weight - 29.0 / 192.0).abs() < 1e-12);
        assert_eq!(joint.total_n(), Some(192));
    }

    #[test]
    fn uniform_stratum() {
        let counts = load_counts("s,x,y,count\na,1,1,5\na,1,0,5\na,0,1,5\na,0,0,5\n".as_bytes()).unwrap();
        let joint = to_probabilities(&counts, Smoothing::None).unwrap();
        assert_eq!(joint.strata()[0].table.cells(), [0.25; 4]);
    }

    #[test]
    fn zero_cell_needs_smoothing() {
        let counts =
            load_counts("s,x,y,count\na,1,1,5\na,1,0,5\na,0,1,5\nb,1,1,1\nb,1,0,1\nb,0,1,1\nb,0,0,1\n".as_bytes())
                .unwrap();
        match to_probabilities(&counts, Smoothing::None) {
            Err(Error::Positivity { stratum, x: 0, y: 0 }) => {
                assert_eq!(stratum, StratumKey::new([("s", "a")]).unwrap())
            }
            other => panic!("expected positivity error, got {other:?}"),
        }
        let smoothed = to_probabilities(&counts, Smoothing::AddHalf).unwrap();
        let a = smoothed.stratum(&StratumKey::new([("s", "a")]).unwrap()).unwrap();
        assert!((a.unexposed_no_event - 0.5 / 17.0).abs() < 1e-12);
        assert_eq!(smoothed.total_n(), Some(19));
    }

    #[test]
    fn collapse_to_nothing_and_identity() {
        let joint = to_probabilities(&load_counts(RECEPTOR_SURVIVAL.as_bytes()).unwrap(), Smoothing::None).unwrap();
        let pooled = collapse::<&str>(&joint, &[]).unwrap();
        assert_eq!(pooled.len(), 1);
        assert!((pooled.p_xy() - 31.0 / 192.0).abs() < 1e-12);
        assert_eq!(collapse(&joint, &["stage"]).unwrap(), joint);
        assert!(matches!(collapse(&joint, &["age"]), Err(Error::UnknownCovariate(_))));
    }

    #[test]
    fn collapse_identical_tables_is_convex() {
        let t = [0.1, 0.2, 0.3, 0.4];
        let joint = StratifiedJoint::new(
            vec!["s".into()],
            vec![
                Stratum {
                    key: StratumKey::new([("s", "a")]).unwrap(),
                    table: StratumTable::new(t, 0.3).unwrap(),
                },
                Stratum {
                    key: StratumKey::new([("s", "b")]).unwrap(),
                    table: StratumTable::new(t, 0.7).unwrap(),
                },
            ],
            None,
        )
        .unwrap();
        let merged = collapse::<&str>(&joint, &[]).unwrap();
        let table = merged.strata()[0].table;
        for (a, b) in table.cells().iter().zip(t) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((table.weight - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sita_marginals() {
        let joint = to_probabilities(&load_counts(RECEPTOR_SURVIVAL.as_bytes()).unwrap(), Smoothing::None).unwrap();
        let exp = adjusted_experimental(&joint);
        assert_eq!(exp.provenance, Provenance::SitaAdjusted);
        assert!((exp.marginal.p_y_do_x - 0.237).abs() < 5e-4);
        assert!((exp.marginal.p_y_do_xprime - 0.392).abs() < 5e-4);
        assert!(validate_compatibility(&joint, &exp, ALGEBRA_TOL)
            .unwrap()
            .is_compatible());

        let single =
            StratifiedJoint::unstratified(StratumTable::from_conditionals(0.4, 0.3, 0.6, 1.0).unwrap(), None).unwrap();
        let exp = adjusted_experimental(&single);
        assert!((exp.marginal.p_y_do_x - 0.3).abs() < 1e-12);
        assert!((exp.marginal.p_y_do_xprime - 0.6).abs() < 1e-12);
    }

    #[test]
    fn no_effect_marginals() {
        let strata = ["a", "b"]
            .iter()
            .zip([(0.2, 0.4), (0.7, 0.6)])
            .map(|(level, (px, w))| Stratum {
                key: StratumKey::new([("s", *level)]).unwrap(),
                table: StratumTable::from_conditionals(px, 0.35, 0.35, w).unwrap(),
            })
            .collect();
        let joint = StratifiedJoint::new(vec!["s".into()], strata, None).unwrap();
        let exp = adjusted_experimental(&joint);
        assert!((exp.marginal.p_y_do_x - 0.35).abs() < 1e-12);
        assert!((exp.marginal.p_y_do_xprime - 0.35).abs() < 1e-12);
    }

    #[test]
    fn flags_consistency_breach() {
        let table = StratumTable::new([0.4, 0.1, 0.25, 0.25], 1.0).unwrap();
        let joint = StratifiedJoint::unstratified(table, None).unwrap();
        let exp = ExperimentalQuantities::measured(
            &joint,
            vec![StratumExperiment {
                key: StratumKey::empty(),
                pair: ExperimentalPair::new(0.2, 0.5).unwrap(),
            }],
        )
        .unwrap();
        let report = validate_compatibility(&joint, &exp, ALGEBRA_TOL).unwrap();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].arm, Exposure::Exposed);

        let projected = project_compatible(&joint, &exp).unwrap();
        assert!(validate_compatibility(&joint, &projected, ALGEBRA_TOL)
            .unwrap()
            .is_compatible());
    }

    #[test]
    fn mismatched_strata() {
        let joint = to_probabilities(&load_counts(RECEPTOR_SURVIVAL.as_bytes()).unwrap(), Smoothing::None).unwrap();
        let pooled = collapse::<&str>(&joint, &[]).unwrap();
        let exp = adjusted_experimental(&pooled);
        assert!(matches!(
            validate_compatibility(&joint, &exp, 1e-9),
            Err(Error::StratumMismatch(_))
        ));
    }

    #[test]
    fn key_invariants() {
        assert!(StratumKey::new([("a", "1"), ("a", "2")]).is_err());
        assert!(StratumKey::new([("", "1")]).is_err());
        let k1 = StratumKey::new([("t", "1"), ("s", "2")]).unwrap();
        let k2 = StratumKey::new([("s", "2"), ("t", "1")]).unwrap();
        assert_eq!(k1, k2);
        assert_eq!(k1.to_string(), "s=2,t=1");
        let json = serde_json::to_string(&k1).unwrap();
        assert_eq!(json, r#"{"s":"2","t":"1"}"#);
    }

    #[test]
    fn joint_json_round_trip() {
        let joint = to_probabilities(&load_counts(RECEPTOR_SURVIVAL.as_bytes()).unwrap(), Smoothing::None).unwrap();
        let json = serde_json::to_string(&joint).unwrap();
        let back: StratifiedJoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back, joint);
    }
}
