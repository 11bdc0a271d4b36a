//! Closed-form bounds on the probabilities of necessity (PN), sufficiency (PS)
//! and necessity-and-sufficiency (PNS).
//!
//! Three flavours are provided:
//!
//! * conditional boxes for a single stratum,
//! * stratified bounds that take the max/min inside every stratum and then
//!   average with the stratum weights,
//! * the unstratified Tian–Pearl baseline, i.e. the conditional box applied to
//!   the pooled table with covariate-adjusted experimental marginals.
//!
//! The stratified bounds are never wider than the baseline. PS is obtained
//! from the PN formulas by relabelling `x <-> x'` and `y <-> y'`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, ExperimentalPair, ExperimentalQuantities, StratifiedJoint, StratumKey, StratumTable};

/// Slack allowed before a computed box counts as inverted.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quantity {
    PN,
    PS,
    PNS,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::PN, Quantity::PS, Quantity::PNS];
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quantity::PN => "PN",
            Quantity::PS => "PS",
            Quantity::PNS => "PNS",
        })
    }
}

impl std::str::FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PN" => Ok(Quantity::PN),
            "PS" => Ok(Quantity::PS),
            "PNS" => Ok(Quantity::PNS),
            other => Err(Error::InvalidArgument(format!("unknown quantity `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    TianPearl,
    Stratified,
    Conditional { stratum: StratumKey },
    PolytopeOracle { stratum: StratumKey },
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::TianPearl => f.write_str("tian-pearl"),
            Method::Stratified => f.write_str("stratified"),
            Method::Conditional { stratum } => write!(f, "conditional({stratum})"),
            Method::PolytopeOracle { stratum } => write!(f, "oracle({stratum})"),
        }
    }
}

/// Which argument of the max (lower) and min (upper) was active in a stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermAttainment {
    pub stratum: StratumKey,
    pub lower_term: String,
    pub lower_index: usize,
    pub upper_term: String,
    pub upper_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub quantity: Quantity,
    pub method: Method,
    pub lower: f64,
    pub upper: f64,
    pub terms: Vec<TermAttainment>,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, value: f64, tol: f64) -> bool {
        value >= self.lower - tol && value <= self.upper + tol
    }
}

// Term labels, in argument order of each max/min.
const PN_LOWER: [&str; 2] = ["0", "P(y'_x'|s) - P(y'|s)"];
const PN_UPPER: [&str; 2] = ["P(x,y|s)", "P(y'_x'|s) - P(x',y'|s)"];
const PS_LOWER: [&str; 2] = ["0", "P(y_x|s) - P(y|s)"];
const PS_UPPER: [&str; 2] = ["P(x',y'|s)", "P(y_x|s) - P(x,y|s)"];
const PNS_LOWER: [&str; 4] = ["0", "P(y_x|s) - P(y|s)", "P(y'_x'|s) - P(y'|s)", "P(y_x|s) - P(y_x'|s)"];
const PNS_UPPER: [&str; 4] = [
    "P(y_x|s)",
    "P(y'_x'|s)",
    "P(x,y|s) + P(x',y'|s)",
    "P(y_x|s) - P(y_x'|s) + P(x',y|s) + P(x,y'|s)",
];

/// Largest argument and its index; ties resolve to the earliest argument.
fn arg_max(values: &[f64]) -> (f64, usize) {
    let mut best = (values[0], 0);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.0 {
            best = (v, i);
        }
    }
    best
}

fn arg_min(values: &[f64]) -> (f64, usize) {
    let mut best = (values[0], 0);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < best.0 {
            best = (v, i);
        }
    }
    best
}

fn attainment(stratum: &StratumKey, lower: usize, upper: usize, labels: (&[&str], &[&str])) -> TermAttainment {
    TermAttainment {
        stratum: stratum.clone(),
        lower_term: labels.0[lower].to_string(),
        lower_index: lower,
        upper_term: labels.1[upper].to_string(),
        upper_index: upper,
    }
}

fn labels(quantity: Quantity) -> (&'static [&'static str], &'static [&'static str]) {
    match quantity {
        Quantity::PN => (&PN_LOWER, &PN_UPPER),
        Quantity::PS => (&PS_LOWER, &PS_UPPER),
        Quantity::PNS => (&PNS_LOWER, &PNS_UPPER),
    }
}

fn check_feasible(stratum: &StratumKey, quantity: Quantity, lower: f64, upper: f64) -> Result<()> {
    if lower > upper + FEASIBILITY_TOL {
        return Err(Error::Incompatible {
            stratum: stratum.to_string(),
            quantity,
            lower,
            upper,
        });
    }
    Ok(())
}

/// Numerators of the PN box, before division by `P(x, y | s)`.
fn pn_arguments(t: &StratumTable, e: &ExperimentalPair) -> ([f64; 2], [f64; 2]) {
    let yp_do_xp = e.p_yp_do_xprime();
    (
        [0.0, yp_do_xp - t.p_yp()],
        [t.exposed_event, yp_do_xp - t.unexposed_no_event],
    )
}

fn pns_arguments(t: &StratumTable, e: &ExperimentalPair) -> ([f64; 4], [f64; 4]) {
    let y_do_x = e.p_y_do_x;
    let y_do_xp = e.p_y_do_xprime;
    let yp_do_xp = e.p_yp_do_xprime();
    (
        [0.0, y_do_x - t.p_y(), yp_do_xp - t.p_yp(), y_do_x - y_do_xp],
        [
            y_do_x,
            yp_do_xp,
            t.exposed_event + t.unexposed_no_event,
            y_do_x - y_do_xp + t.unexposed_event + t.exposed_no_event,
        ],
    )
}

fn pn_box(
    quantity: Quantity,
    method: Method,
    key: &StratumKey,
    table: &StratumTable,
    exp: &ExperimentalPair,
) -> Result<Interval> {
    if table.exposed_event <= 0.0 {
        return Err(Error::InvalidTable(format!("stratum {key}: PN needs P(x,y|s) > 0")));
    }
    let yp_do_xp = exp.p_yp_do_xprime();
    let pxy = table.exposed_event;
    let (lower, li) = arg_max(&[0.0, (yp_do_xp - table.p_yp()) / pxy]);
    let (upper, ui) = arg_min(&[1.0, (yp_do_xp - table.unexposed_no_event) / pxy]);
    check_feasible(key, quantity, lower, upper)?;
    Ok(Interval {
        quantity,
        method,
        lower,
        upper,
        terms: vec![attainment(key, li, ui, labels(quantity))],
    })
}

fn pns_box(method: Method, key: &StratumKey, table: &StratumTable, exp: &ExperimentalPair) -> Result<Interval> {
    let (lo_args, up_args) = pns_arguments(table, exp);
    let (lower, li) = arg_max(&lo_args);
    let (upper, ui) = arg_min(&up_args);
    check_feasible(key, Quantity::PNS, lower, upper)?;
    Ok(Interval {
        quantity: Quantity::PNS,
        method,
        lower,
        upper,
        terms: vec![attainment(key, li, ui, labels(Quantity::PNS))],
    })
}

fn conditional_box(
    quantity: Quantity,
    method: Method,
    key: &StratumKey,
    table: &StratumTable,
    exp: &ExperimentalPair,
) -> Result<Interval> {
    match quantity {
        Quantity::PN => pn_box(Quantity::PN, method, key, table, exp),
        Quantity::PS => pn_box(Quantity::PS, method, key, &table.swapped(), &exp.swapped()),
        Quantity::PNS => pns_box(method, key, table, exp),
    }
}

/// Conditional PN box `[max{0, (P(y'_x'|s) - P(y'|s)) / P(x,y|s)}, min{1, (P(y'_x'|s) - P(x',y'|s)) / P(x,y|s)}]`.
pub fn pn_interval_conditional(key: &StratumKey, stratum: &StratumTable, exp: &ExperimentalPair) -> Result<Interval> {
    conditional_box(
        Quantity::PN,
        Method::Conditional { stratum: key.clone() },
        key,
        stratum,
        exp,
    )
}

/// Conditional PS box: the PN box of the relabelled stratum.
pub fn ps_interval_conditional(key: &StratumKey, stratum: &StratumTable, exp: &ExperimentalPair) -> Result<Interval> {
    conditional_box(
        Quantity::PS,
        Method::Conditional { stratum: key.clone() },
        key,
        stratum,
        exp,
    )
}

pub fn pns_interval_conditional(key: &StratumKey, stratum: &StratumTable, exp: &ExperimentalPair) -> Result<Interval> {
    conditional_box(
        Quantity::PNS,
        Method::Conditional { stratum: key.clone() },
        key,
        stratum,
        exp,
    )
}

pub fn interval_conditional(
    quantity: Quantity,
    key: &StratumKey,
    stratum: &StratumTable,
    exp: &ExperimentalPair,
) -> Result<Interval> {
    conditional_box(
        quantity,
        Method::Conditional { stratum: key.clone() },
        key,
        stratum,
        exp,
    )
}

/// All conditional boxes of one quantity, in stratum order.
pub fn conditional_intervals(
    quantity: Quantity,
    joint: &StratifiedJoint,
    exp: &ExperimentalQuantities,
) -> Result<Vec<Interval>> {
    model::paired(joint, exp)?
        .into_iter()
        .map(|(s, pair)| interval_conditional(quantity, &s.key, &s.table, pair))
        .collect()
}

/// Tian–Pearl bounds from an unstratified table and marginal experimental
/// probabilities.
pub fn tian_pearl_interval(
    quantity: Quantity,
    unstratified: &StratumTable,
    marginal: &ExperimentalPair,
) -> Result<Interval> {
    conditional_box(
        quantity,
        Method::TianPearl,
        &StratumKey::empty(),
        unstratified,
        marginal,
    )
}

/// Tian–Pearl bounds for a stratified input: the pooled table together with
/// the stratum-weighted experimental marginals.
pub fn tian_pearl_for(quantity: Quantity, joint: &StratifiedJoint, exp: &ExperimentalQuantities) -> Result<Interval> {
    model::paired(joint, exp)?;
    let pooled = model::collapse::<&str>(joint, &[])?;
    tian_pearl_interval(quantity, &pooled.strata()[0].table, &exp.marginal)
}

/// Stratified bounds.
///
/// PN: `Σ_s max{0, P(y'_x'|s) - P(y'|s)} P(s) / P(x,y)` and
/// `Σ_s min{P(x,y|s), P(y'_x'|s) - P(x',y'|s)} P(s) / P(x,y)`.
/// PNS: the stratum-weighted average of the conditional box endpoints.
pub fn stratified_interval(
    quantity: Quantity,
    joint: &StratifiedJoint,
    exp: &ExperimentalQuantities,
) -> Result<Interval> {
    match quantity {
        Quantity::PN => stratified_pn(Quantity::PN, joint, exp),
        Quantity::PS => stratified_pn(Quantity::PS, &joint.swapped(), &exp.swapped()),
        Quantity::PNS => stratified_pns(joint, exp),
    }
}

fn stratified_pn(quantity: Quantity, joint: &StratifiedJoint, exp: &ExperimentalQuantities) -> Result<Interval> {
    let pairs = model::paired(joint, exp)?;
    if pairs.is_empty() {
        return Err(Error::EmptyStrata);
    }
    let p_xy = joint.p_xy();
    if p_xy <= 0.0 {
        return Err(Error::InvalidTable("stratified PN needs P(x,y) > 0".into()));
    }
    let mut lower = 0.0;
    let mut upper = 0.0;
    let mut terms = Vec::with_capacity(pairs.len());
    for (s, pair) in pairs {
        let (lo_args, up_args) = pn_arguments(&s.table, pair);
        let (lo, li) = arg_max(&lo_args);
        let (up, ui) = arg_min(&up_args);
        check_feasible(&s.key, quantity, lo, up)?;
        lower += lo * s.table.weight;
        upper += up * s.table.weight;
        terms.push(attainment(&s.key, li, ui, labels(quantity)));
    }
    Ok(Interval {
        quantity,
        method: Method::Stratified,
        lower: lower / p_xy,
        upper: upper / p_xy,
        terms,
    })
}

fn stratified_pns(joint: &StratifiedJoint, exp: &ExperimentalQuantities) -> Result<Interval> {
    let pairs = model::paired(joint, exp)?;
    if pairs.is_empty() {
        return Err(Error::EmptyStrata);
    }
    let mut lower = 0.0;
    let mut upper = 0.0;
    let mut terms = Vec::with_capacity(pairs.len());
    for (s, pair) in pairs {
        let (lo_args, up_args) = pns_arguments(&s.table, pair);
        let (lo, li) = arg_max(&lo_args);
        let (up, ui) = arg_min(&up_args);
        check_feasible(&s.key, Quantity::PNS, lo, up)?;
        lower += lo * s.table.weight;
        upper += up * s.table.weight;
        terms.push(attainment(&s.key, li, ui, labels(Quantity::PNS)));
    }
    Ok(Interval {
        quantity: Quantity::PNS,
        method: Method::Stratified,
        lower,
        upper,
        terms,
    })
}

/// Per-stratum sign quantities that decide which max/min terms are active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumContrast {
    pub stratum: StratumKey,
    /// `P(y_x|s) - P(y_x'|s)`
    pub risk_difference: f64,
    /// `P(y_x|s) - P(y'_x'|s)`
    pub y_x_minus_yp_xprime: f64,
}

pub fn stratum_contrasts(joint: &StratifiedJoint, exp: &ExperimentalQuantities) -> Result<Vec<StratumContrast>> {
    Ok(model::paired(joint, exp)?
        .into_iter()
        .map(|(s, pair)| StratumContrast {
            stratum: s.key.clone(),
            risk_difference: pair.p_y_do_x - pair.p_y_do_xprime,
            y_x_minus_yp_xprime: pair.p_y_do_x - pair.p_yp_do_xprime(),
        })
        .collect())
}

/// Stratified, baseline and per-stratum bounds for one quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityBounds {
    pub quantity: Quantity,
    pub stratified: Interval,
    pub tian_pearl: Interval,
    pub conditional: Vec<Interval>,
}

pub fn analyse(quantity: Quantity, joint: &StratifiedJoint, exp: &ExperimentalQuantities) -> Result<QuantityBounds> {
    Ok(QuantityBounds {
        quantity,
        stratified: stratified_interval(quantity, joint, exp)?,
        tian_pearl: tian_pearl_for(quantity, joint, exp)?,
        conditional: conditional_intervals(quantity, joint, exp)?,
    })
}
