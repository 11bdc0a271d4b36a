//! Point identification of PN and PNS under monotonicity (no prevention) with
//! covariate adjustment, and the asymptotic variances of the plug-in
//! estimators.

use serde::{Deserialize, Serialize};

use crate::bounds::{self, Quantity};
use crate::error::{Error, Result};
use crate::model::{self, ExperimentalQuantities, StratifiedJoint, StratumKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub quantity: Quantity,
    pub value: f64,
    /// Asymptotic variance at sample size `n`, in probability² units.
    pub avar: f64,
    pub se: f64,
    pub n: u64,
    /// Covariates the estimate is stratified on.
    pub covariates: Vec<String>,
    pub warnings: Vec<String>,
}

/// `Σ_s (P(y'|x',s) - P(y'|s)) P(s) / P(x,y)`.
pub fn pn_value(joint: &StratifiedJoint) -> f64 {
    let numerator: f64 = joint
        .strata()
        .iter()
        .map(|s| ((1.0 - s.table.p_y_given_xp()) - s.table.p_yp()) * s.table.weight)
        .sum();
    numerator / joint.p_xy()
}

/// `Σ_s (P(y|x,s) - P(y|x',s)) P(s)`.
pub fn pns_value(joint: &StratifiedJoint) -> f64 {
    joint
        .strata()
        .iter()
        .map(|s| (s.table.p_y_given_x() - s.table.p_y_given_xp()) * s.table.weight)
        .sum()
}

/// `N · a.var(PN)`; the `(1 - PN)²` factor uses the pooled estimate.
fn pn_scaled_avar(joint: &StratifiedJoint, pn: f64) -> f64 {
    let p_xy = joint.p_xy();
    joint
        .strata()
        .iter()
        .map(|s| {
            let t = &s.table;
            let p_xs = t.p_x() * t.weight;
            let p_xps = t.p_xp() * t.weight;
            let (py_x, py_xp) = (t.p_y_given_x(), t.p_y_given_xp());
            let bracket = (1.0 - pn).powi(2) * (1.0 - py_x) * py_x / p_xs + (1.0 - py_xp) * py_xp / p_xps;
            bracket * (p_xs / p_xy).powi(2)
        })
        .sum()
}

fn pns_scaled_avar(joint: &StratifiedJoint) -> f64 {
    joint
        .strata()
        .iter()
        .map(|s| {
            let t = &s.table;
            let p_xs = t.p_x() * t.weight;
            let p_xps = t.p_xp() * t.weight;
            let (py_x, py_xp) = (t.p_y_given_x(), t.p_y_given_xp());
            ((1.0 - py_x) * py_x / p_xs + (1.0 - py_xp) * py_xp / p_xps) * t.weight * t.weight
        })
        .sum()
}

fn warnings(joint: &StratifiedJoint, value: f64) -> Vec<String> {
    let mut out = Vec::new();
    if !(0.0..=1.0).contains(&value) {
        out.push(format!(
            "estimate {value:.4} lies outside [0, 1]; the data contradict the no-prevention assumption"
        ));
    }
    for s in joint.strata() {
        let rd = s.table.p_y_given_x() - s.table.p_y_given_xp();
        if rd < 0.0 {
            out.push(format!("stratum {}: negative risk difference {rd:.4}", s.key));
        }
    }
    out
}

fn assemble(quantity: Quantity, joint: &StratifiedJoint, value: f64, scaled: f64, n: u64) -> Estimate {
    let avar = scaled / n as f64;
    Estimate {
        quantity,
        value,
        avar,
        se: avar.sqrt(),
        n,
        covariates: joint.covariates().to_vec(),
        warnings: warnings(joint, value),
    }
}

/// PN under monotonicity with the asymptotic variance evaluated at `n`.
pub fn pn_estimate(joint: &StratifiedJoint, n: u64) -> Estimate {
    let value = pn_value(joint);
    assemble(Quantity::PN, joint, value, pn_scaled_avar(joint, value), n)
}

pub fn pns_estimate(joint: &StratifiedJoint, n: u64) -> Estimate {
    assemble(Quantity::PNS, joint, pns_value(joint), pns_scaled_avar(joint), n)
}

/// PN using the sample size recorded on the joint.
pub fn pn_point(joint: &StratifiedJoint) -> Result<Estimate> {
    let n = joint.total_n().ok_or(Error::MissingSampleSize)?;
    Ok(pn_estimate(joint, n))
}

pub fn pns_point(joint: &StratifiedJoint) -> Result<Estimate> {
    let n = joint.total_n().ok_or(Error::MissingSampleSize)?;
    Ok(pns_estimate(joint, n))
}

// ── Monotonicity diagnostic ───────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskDifferenceFlag {
    pub stratum: StratumKey,
    pub risk_difference: f64,
    /// Set when `P(y_x|s) < P(y_x'|s)`, which monotonicity rules out.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub strata: Vec<RiskDifferenceFlag>,
    pub any_flagged: bool,
    pub pn_point: f64,
    pub pns_point: f64,
    pub pn_point_in_bounds: bool,
    pub pns_point_in_bounds: bool,
}

/// Flags strata whose experimental risk difference is negative and checks
/// whether the monotonicity point values fall inside the stratified bounds.
pub fn monotonicity_diagnostic(joint: &StratifiedJoint, exp: &ExperimentalQuantities) -> Result<MonotonicityReport> {
    let pairs = model::paired(joint, exp)?;
    let strata: Vec<RiskDifferenceFlag> = pairs
        .iter()
        .map(|(s, pair)| {
            let rd = pair.p_y_do_x - pair.p_y_do_xprime;
            RiskDifferenceFlag {
                stratum: s.key.clone(),
                risk_difference: rd,
                flagged: rd < 0.0,
            }
        })
        .collect();
    let pn_point = pairs
        .iter()
        .map(|(s, pair)| (pair.p_yp_do_xprime() - s.table.p_yp()) * s.table.weight)
        .sum::<f64>()
        / joint.p_xy();
    let pns_point = strata
        .iter()
        .zip(&pairs)
        .map(|(f, (s, _))| f.risk_difference * s.table.weight)
        .sum();
    let pn_bounds = bounds::stratified_interval(Quantity::PN, joint, exp)?;
    let pns_bounds = bounds::stratified_interval(Quantity::PNS, joint, exp)?;
    Ok(MonotonicityReport {
        any_flagged: strata.iter().any(|f| f.flagged),
        strata,
        pn_point,
        pns_point,
        pn_point_in_bounds: pn_bounds.contains(pn_point, bounds::FEASIBILITY_TOL),
        pns_point_in_bounds: pns_bounds.contains(pns_point, bounds::FEASIBILITY_TOL),
    })
}
