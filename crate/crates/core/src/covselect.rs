//! Choosing between two admissible stratifiers `S`, `T` and their union by
//! the asymptotic variance of the PN and PNS estimators.
//!
//! Two conditional independences order the variances:
//!
//! * `Y ⊥ T | {X, S}` implies `a.var(S) <= a.var({S,T})`,
//! * `X ⊥ S | T` implies `a.var({S,T}) <= a.var(T)`.
//!
//! Both can be checked on exact probabilities (cell-wise comparison of the
//! conditionals) or on counts (likelihood-ratio G test).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bounds::Quantity;
use crate::error::{Error, Result};
use crate::identify::{self, Estimate};
use crate::model::{self, StratifiedJoint, StratumTable};

/// Default tolerance for exact checks on analytically specified joints.
pub const EXACT_TOL: f64 = 1e-9;
/// Default tolerance (total variation of the conditionals) for estimated joints.
pub const ESTIMATED_TOL: f64 = 0.02;
pub const DEFAULT_ALPHA: f64 = 0.05;
/// Slack used when comparing asymptotic variances.
pub const ORDERING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiKind {
    /// `Y ⊥ T | {X, S}`
    OutcomeIndepTGivenXS,
    /// `X ⊥ S | T`
    ExposureIndepSGivenT,
}

impl fmt::Display for CiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CiKind::OutcomeIndepTGivenXS => "Y _||_ T | {X,S}",
            CiKind::ExposureIndepSGivenT => "X _||_ S | T",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CiRelation {
    pub kind: CiKind,
    /// Covariate playing the role of `S`.
    pub s: String,
    /// Covariate playing the role of `T`.
    pub t: String,
}

impl CiRelation {
    pub fn new(kind: CiKind, s: impl Into<String>, t: impl Into<String>) -> Self {
        Self {
            kind,
            s: s.into(),
            t: t.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum CiMode {
    ExactProbability { tol: f64 },
    CountTest { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiVerdict {
    pub relation: CiRelation,
    pub mode: CiMode,
    pub holds: bool,
    /// Largest absolute difference between conditionals that should agree.
    pub max_deviation: f64,
    pub statistic: Option<f64>,
    pub df: Option<usize>,
    pub p_value: Option<f64>,
}

/// Cells of a joint over exactly the two role covariates, indexed by
/// `(s level, t level)`.
struct TwoWay {
    cells: BTreeMap<(String, String), StratumTable>,
}

impl TwoWay {
    fn build(joint: &StratifiedJoint, s: &str, t: &str) -> Result<Self> {
        if s == t {
            return Err(Error::InvalidArgument(format!(
                "S and T must be different covariates, both are `{s}`"
            )));
        }
        let joint = model::collapse(joint, &[s, t])?;
        let cells = joint
            .strata()
            .iter()
            .map(|st| {
                let level = |name: &str| st.key.level(name).unwrap_or_default().to_string();
                ((level(s), level(t)), st.table)
            })
            .collect();
        Ok(Self { cells })
    }

    /// Groups cells by the `t` level (or by `s` when `by_s`).
    fn grouped(&self, by_s: bool) -> BTreeMap<&str, Vec<&StratumTable>> {
        let mut out: BTreeMap<&str, Vec<&StratumTable>> = BTreeMap::new();
        for ((s, t), table) in &self.cells {
            let k = if by_s { s.as_str() } else { t.as_str() };
            out.entry(k).or_default().push(table);
        }
        out
    }
}

/// Observed (possibly fractional) counts for a set of contingency tables;
/// returns the G statistic and its degrees of freedom.
fn g_statistic(tables: &[Vec<[f64; 2]>]) -> (f64, usize) {
    let mut g = 0.0;
    let mut df = 0;
    for table in tables {
        let cols: Vec<f64> = (0..2).map(|j| table.iter().map(|row| row[j]).sum()).collect();
        let total: f64 = cols.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let nonempty_rows = table.iter().filter(|row| row[0] + row[1] > 0.0).count();
        let nonempty_cols = cols.iter().filter(|c| **c > 0.0).count();
        df += nonempty_rows.saturating_sub(1) * nonempty_cols.saturating_sub(1);
        for row in table {
            let row_total = row[0] + row[1];
            for j in 0..2 {
                let observed = row[j];
                if observed > 0.0 {
                    let expected = row_total * cols[j] / total;
                    g += observed * (observed / expected).ln();
                }
            }
        }
    }
    (2.0 * g, df)
}

pub fn ci_check(joint: &StratifiedJoint, relation: &CiRelation, mode: CiMode) -> Result<CiVerdict> {
    let two_way = TwoWay::build(joint, &relation.s, &relation.t)?;
    let (max_deviation, tables) = match relation.kind {
        CiKind::ExposureIndepSGivenT => exposure_tables(&two_way),
        CiKind::OutcomeIndepTGivenXS => outcome_tables(&two_way),
    };
    let mut verdict = CiVerdict {
        relation: relation.clone(),
        mode,
        holds: false,
        max_deviation,
        statistic: None,
        df: None,
        p_value: None,
    };
    match mode {
        CiMode::ExactProbability { tol } => verdict.holds = max_deviation <= tol,
        CiMode::CountTest { alpha } => {
            let n = joint.total_n().ok_or(Error::MissingSampleSize)? as f64;
            let counts: Vec<Vec<[f64; 2]>> = tables
                .into_iter()
                .map(|t| t.into_iter().map(|row| row.map(|p| p * n)).collect())
                .collect();
            let (g, df) = g_statistic(&counts);
            let p = if df == 0 {
                1.0
            } else {
                ChiSquared::new(df as f64).expect("positive degrees of freedom").sf(g)
            };
            verdict.holds = p >= alpha;
            verdict.statistic = Some(g);
            verdict.df = Some(df);
            verdict.p_value = Some(p);
        }
    }
    Ok(verdict)
}

/// For `X ⊥ S | T`: per `t`, rows are `s` levels and columns `(x, x')`,
/// entries are joint probabilities `P(x, s, t)`.
fn exposure_tables(two_way: &TwoWay) -> (f64, Vec<Vec<[f64; 2]>>) {
    let mut deviation: f64 = 0.0;
    let mut tables = Vec::new();
    for members in two_way.grouped(false).values() {
        let weight: f64 = members.iter().map(|t| t.weight).sum();
        let p_x_t = members.iter().map(|t| t.p_x() * t.weight).sum::<f64>() / weight;
        for t in members {
            deviation = deviation.max((t.p_x() - p_x_t).abs());
        }
        tables.push(
            members
                .iter()
                .map(|t| [t.p_x() * t.weight, t.p_xp() * t.weight])
                .collect(),
        );
    }
    (deviation, tables)
}

/// For `Y ⊥ T | {X, S}`: per `(x, s)`, rows are `t` levels and columns
/// `(y, y')`.
fn outcome_tables(two_way: &TwoWay) -> (f64, Vec<Vec<[f64; 2]>>) {
    let mut deviation: f64 = 0.0;
    let mut tables = Vec::new();
    for members in two_way.grouped(true).values() {
        for exposed in [true, false] {
            let arm = |t: &StratumTable| {
                if exposed {
                    [t.exposed_event * t.weight, t.exposed_no_event * t.weight]
                } else {
                    [t.unexposed_event * t.weight, t.unexposed_no_event * t.weight]
                }
            };
            let rows: Vec<[f64; 2]> = members.iter().map(|t| arm(t)).collect();
            let event: f64 = rows.iter().map(|r| r[0]).sum();
            let total: f64 = rows.iter().map(|r| r[0] + r[1]).sum();
            let pooled = event / total;
            for r in &rows {
                deviation = deviation.max((r[0] / (r[0] + r[1]) - pooled).abs());
            }
            tables.push(rows);
        }
    }
    (deviation, tables)
}

// ── Covariate-set comparison ──────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub stratifier: Vec<String>,
    pub pn: Estimate,
    pub pns: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingVerdict {
    pub quantity: Quantity,
    pub smaller: Vec<String>,
    pub larger: Vec<String>,
    pub premise: CiKind,
    /// Whether the premise holds, so the ordering is guaranteed.
    pub guaranteed: bool,
    /// Whether the computed variances satisfy the ordering.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub pn: Vec<String>,
    pub pns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub n: u64,
    pub candidates: Vec<Candidate>,
    pub ci_results: Vec<CiVerdict>,
    pub orderings: Vec<OrderingVerdict>,
    /// Present only when both independence premises hold.
    pub recommendation: Option<Recommendation>,
}

impl SelectionReport {
    pub fn candidate(&self, stratifier: &[&str]) -> Option<&Candidate> {
        self.candidates
            .iter()
            .find(|c| c.stratifier.iter().map(String::as_str).eq(stratifier.iter().copied()))
    }
}

fn estimate_for(c: &Candidate, quantity: Quantity) -> &Estimate {
    match quantity {
        Quantity::PNS => &c.pns,
        _ => &c.pn,
    }
}

/// Evaluates PN and PNS under `S`, `T` and `{S, T}`, checks both premises and
/// reports which variance orderings are guaranteed and which are observed.
pub fn compare_covariate_sets(joint: &StratifiedJoint, s: &str, t: &str, mode: CiMode) -> Result<SelectionReport> {
    let n = joint.total_n().ok_or(Error::MissingSampleSize)?;
    // validates the names
    TwoWay::build(joint, s, t)?;
    let mut both = vec![s.to_string(), t.to_string()];
    both.sort();
    let stratifiers = [vec![s.to_string()], vec![t.to_string()], both.clone()];
    let candidates = stratifiers
        .iter()
        .map(|names| {
            let collapsed = model::collapse(joint, names)?;
            Ok(Candidate {
                stratifier: names.clone(),
                pn: identify::pn_estimate(&collapsed, n),
                pns: identify::pns_estimate(&collapsed, n),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let ci_results = [CiKind::OutcomeIndepTGivenXS, CiKind::ExposureIndepSGivenT]
        .into_iter()
        .map(|kind| ci_check(joint, &CiRelation::new(kind, s, t), mode))
        .collect::<Result<Vec<_>>>()?;
    let premise = |kind: CiKind| ci_results.iter().any(|v| v.relation.kind == kind && v.holds);

    let (cand_s, cand_t, cand_st) = (&candidates[0], &candidates[1], &candidates[2]);
    let mut orderings = Vec::new();
    for quantity in [Quantity::PN, Quantity::PNS] {
        for (small, large, kind) in [
            (cand_s, cand_st, CiKind::OutcomeIndepTGivenXS),
            (cand_st, cand_t, CiKind::ExposureIndepSGivenT),
        ] {
            orderings.push(OrderingVerdict {
                quantity,
                smaller: small.stratifier.clone(),
                larger: large.stratifier.clone(),
                premise: kind,
                guaranteed: premise(kind),
                holds: estimate_for(small, quantity).avar <= estimate_for(large, quantity).avar + ORDERING_SLACK,
            });
        }
    }

    let recommendation = (premise(CiKind::OutcomeIndepTGivenXS) && premise(CiKind::ExposureIndepSGivenT)).then(|| {
        let best = |quantity| {
            candidates
                .iter()
                .min_by(|a, b| {
                    estimate_for(a, quantity)
                        .avar
                        .total_cmp(&estimate_for(b, quantity).avar)
                })
                .map(|c| c.stratifier.clone())
                .unwrap_or_default()
        };
        Recommendation {
            pn: best(Quantity::PN),
            pns: best(Quantity::PNS),
        }
    });

    Ok(SelectionReport {
        n,
        candidates,
        ci_results,
        orderings,
        recommendation,
    })
}

/// The two Cauchy–Schwarz consequences behind the variance orderings,
/// evaluated for one level of `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchySchwarzTerms {
    pub s_level: String,
    /// `P(x'|s) Σ_t P(x|t,s)² P(t|s) / P(x'|t,s)`, at least `P(x|s)²`.
    pub squared_ratio_sum: f64,
    /// `P(x|s)²`
    pub p_x_given_s_squared: f64,
    /// `P(x|s) Σ_t P(t|s) / P(x|t,s)`, at least 1.
    pub inverse_sum: f64,
}

pub fn cauchy_schwarz_terms(joint: &StratifiedJoint, s: &str, t: &str) -> Result<Vec<CauchySchwarzTerms>> {
    let two_way = TwoWay::build(joint, s, t)?;
    let mut out = Vec::new();
    for (level, members) in two_way.grouped(true) {
        let p_s: f64 = members.iter().map(|m| m.weight).sum();
        let p_x_s = members.iter().map(|m| m.p_x() * m.weight).sum::<f64>() / p_s;
        let mut squared = 0.0;
        let mut inverse = 0.0;
        for m in &members {
            let p_t_s = m.weight / p_s;
            squared += m.p_x().powi(2) * p_t_s / m.p_xp();
            inverse += p_t_s / m.p_x();
        }
        out.push(CauchySchwarzTerms {
            s_level: level.to_string(),
            squared_ratio_sum: (1.0 - p_x_s) * squared,
            p_x_given_s_squared: p_x_s * p_x_s,
            inverse_sum: p_x_s * inverse,
        });
    }
    Ok(out)
}
