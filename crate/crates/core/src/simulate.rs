//! Seeded Monte Carlo replication of the stratified PN/PNS estimators.
//!
//! A [`Scenario`] fixes `P(x, s, t)` over two discrete covariates and the
//! outcome model `P(y | x, s)`. Each replication draws a dataset of size `n`,
//! re-estimates PN and PNS under the requested stratifiers and records the
//! plug-in asymptotic variance; the across-replication variance is then set
//! against the population asymptotic variance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::Quantity;
use crate::error::{Error, Result};
use crate::identify;
use crate::model::{
    self, CountTable, Exposure, Outcome, Smoothing, StratifiedJoint, Stratum, StratumKey, StratumTable, ALGEBRA_TOL,
};

/// Covariate names used by scenarios.
pub const S: &str = "S";
pub const T: &str = "T";

/// Largest tolerated share of regenerated datasets.
pub const MAX_DISCARD_RATE: f64 = 0.10;
pub const DEFAULT_REPS: u64 = 5000;
const MAX_ATTEMPTS_PER_REPLICATION: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCell {
    pub x: Exposure,
    pub s: String,
    pub t: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeConditional {
    pub x: Exposure,
    pub s: String,
    pub p_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub joint_xst: Vec<ScenarioCell>,
    pub outcome_conditionals: Vec<OutcomeConditional>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidTable(format!("scenario `{}`: {m}", self.name)));
        let mut seen = BTreeSet::new();
        let mut s_levels = BTreeSet::new();
        let mut t_levels = BTreeSet::new();
        for c in &self.joint_xst {
            if !(c.p > 0.0 && c.p.is_finite()) {
                return invalid(format!("cell ({:?}, {}, {}) must be positive", c.x, c.s, c.t));
            }
            if !seen.insert((c.x, c.s.as_str(), c.t.as_str())) {
                return invalid(format!("duplicate cell ({:?}, {}, {})", c.x, c.s, c.t));
            }
            s_levels.insert(c.s.as_str());
            t_levels.insert(c.t.as_str());
        }
        if seen.len() != 2 * s_levels.len() * t_levels.len() {
            return invalid("joint must cover every (x, s, t) combination".into());
        }
        let total: f64 = self.joint_xst.iter().map(|c| c.p).sum();
        if (total - 1.0).abs() > ALGEBRA_TOL {
            return invalid(format!("joint sums to {total}"));
        }
        for x in [Exposure::Exposed, Exposure::Unexposed] {
            for s in &s_levels {
                match self.outcome(x, s) {
                    Some(p) if p > 0.0 && p < 1.0 => {}
                    Some(p) => return invalid(format!("P(y | {x:?}, {s}) = {p} outside (0, 1)")),
                    None => return invalid(format!("missing P(y | {x:?}, {s})")),
                }
            }
        }
        Ok(())
    }

    pub fn outcome(&self, x: Exposure, s: &str) -> Option<f64> {
        self.outcome_conditionals
            .iter()
            .find(|o| o.x == x && o.s == s)
            .map(|o| o.p_y)
    }

    pub fn cell(&self, x: Exposure, s: &str, t: &str) -> Option<f64> {
        self.joint_xst
            .iter()
            .find(|c| c.x == x && c.s == s && c.t == t)
            .map(|c| c.p)
    }

    /// The exact population joint over `{S, T}`.
    pub fn population_joint(&self) -> Result<StratifiedJoint> {
        self.validate()?;
        let mut by_stratum: BTreeMap<(&str, &str), [f64; 4]> = BTreeMap::new();
        for c in &self.joint_xst {
            let py = self.outcome(c.x, &c.s).expect("validated");
            let cells = by_stratum.entry((c.s.as_str(), c.t.as_str())).or_default();
            let offset = if c.x == Exposure::Exposed { 0 } else { 2 };
            cells[offset] += c.p * py;
            cells[offset + 1] += c.p * (1.0 - py);
        }
        let strata = by_stratum
            .into_iter()
            .map(|((s, t), cells)| {
                let weight: f64 = cells.iter().sum();
                Ok(Stratum {
                    key: StratumKey::new([(S, s), (T, t)])?,
                    table: StratumTable::new(cells.map(|c| c / weight), weight)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        StratifiedJoint::new(vec![S.into(), T.into()], strata, None)
    }
}

fn reference_scenario(name: &str, x_row: [f64; 4], xp_row: [f64; 4]) -> Scenario {
    // column order: (t1, s1), (t1, s2), (t2, s1), (t2, s2)
    const COLUMNS: [(&str, &str); 4] = [("t1", "s1"), ("t1", "s2"), ("t2", "s1"), ("t2", "s2")];
    let mut joint_xst = Vec::new();
    for (x, row) in [(Exposure::Exposed, x_row), (Exposure::Unexposed, xp_row)] {
        for ((t, s), p) in COLUMNS.iter().zip(row) {
            joint_xst.push(ScenarioCell {
                x,
                s: s.to_string(),
                t: t.to_string(),
                p,
            });
        }
    }
    let outcome_conditionals = [
        (Exposure::Exposed, "s1", 0.7),
        (Exposure::Exposed, "s2", 0.3),
        (Exposure::Unexposed, "s1", 0.8),
        (Exposure::Unexposed, "s2", 0.4),
    ]
    .into_iter()
    .map(|(x, s, p_y)| OutcomeConditional {
        x,
        s: s.to_string(),
        p_y,
    })
    .collect();
    Scenario {
        name: name.to_string(),
        joint_xst,
        outcome_conditionals,
    }
}

/// The four reference settings. In each, `X ⊥ S | T` holds and the outcome
/// depends on `(X, S)` only.
pub fn builtin_scenarios() -> Vec<Scenario> {
    vec![
        reference_scenario("setting-1", [0.32, 0.08, 0.02, 0.08], [0.08, 0.02, 0.08, 0.32]),
        reference_scenario("setting-2", [0.2, 0.05, 0.04, 0.16], [0.2, 0.05, 0.06, 0.24]),
        reference_scenario("setting-3", [0.2, 0.2, 0.04, 0.06], [0.05, 0.05, 0.16, 0.24]),
        reference_scenario("setting-4", [0.1, 0.1, 0.1, 0.15], [0.15, 0.15, 0.1, 0.15]),
    ]
}

/// Setting `1..=4` of [`builtin_scenarios`].
pub fn builtin_scenario(setting: usize) -> Result<Scenario> {
    builtin_scenarios()
        .into_iter()
        .nth(setting.wrapping_sub(1))
        .ok_or_else(|| Error::InvalidArgument(format!("unknown setting {setting}; expected 1-4")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stratifier {
    S,
    T,
    #[serde(rename = "{S,T}")]
    ST,
}

impl Stratifier {
    pub const ALL: [Stratifier; 3] = [Stratifier::S, Stratifier::T, Stratifier::ST];

    pub fn covariates(self) -> &'static [&'static str] {
        match self {
            Stratifier::S => &[S],
            Stratifier::T => &[T],
            Stratifier::ST => &[S, T],
        }
    }
}

impl fmt::Display for Stratifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stratifier::S => "S",
            Stratifier::T => "T",
            Stratifier::ST => "{S,T}",
        })
    }
}

/// Random stream for replication `index`; independent of execution order.
fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn binomial<R: rand::Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("p in (0, 1)").sample(rng)
}

/// Draws `n` subjects: `(x, s, t)` from the scenario joint, then `y` given
/// `(x, s)`. The multinomial draw is generated cell by cell through
/// conditional binomials, which has the same distribution as `n` independent
/// categorical draws.
fn sample_with<R: rand::Rng>(scenario: &Scenario, n: u64, rng: &mut R) -> Result<CountTable> {
    let mut counts = CountTable::new(vec![S.into(), T.into()]);
    let mut remaining = n;
    let mut remaining_p = 1.0;
    let last = scenario.joint_xst.len() - 1;
    for (i, c) in scenario.joint_xst.iter().enumerate() {
        let k = if i == last {
            remaining
        } else {
            binomial(rng, remaining, (c.p / remaining_p).min(1.0))
        };
        remaining -= k;
        remaining_p -= c.p;
        let py = scenario.outcome(c.x, &c.s).expect("validated");
        let events = binomial(rng, k, py);
        let key = StratumKey::new([(S, c.s.as_str()), (T, c.t.as_str())])?;
        counts.add(key.clone(), c.x, Outcome::Event, events)?;
        counts.add(key, c.x, Outcome::NoEvent, k - events)?;
    }
    Ok(counts)
}

/// One dataset of size `n`; identical `(scenario, n, seed)` give identical tables.
pub fn sample_dataset(scenario: &Scenario, n: u64, seed: u64) -> Result<CountTable> {
    scenario.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be positive".into()));
    }
    sample_with(scenario, n, &mut substream(seed, 0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub quantity: Quantity,
    pub stratifier: Stratifier,
    pub n: u64,
    pub reps: u64,
    /// Across-replication sample variance of the estimates.
    pub empirical_var: f64,
    pub mean_estimate: f64,
    /// Mean of the per-replication plug-in asymptotic variances.
    pub mean_avar: f64,
    pub population_value: f64,
    pub population_avar: f64,
}

impl ReplicationResult {
    pub fn ratio(&self) -> f64 {
        self.empirical_var / self.population_avar
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub scenario: String,
    pub n: u64,
    pub reps: u64,
    pub seed: u64,
    pub results: Vec<ReplicationResult>,
    /// Datasets regenerated because of an empty cell.
    pub discarded: u64,
    pub attempts: u64,
}

impl Study {
    pub fn result(&self, quantity: Quantity, stratifier: Stratifier) -> Option<&ReplicationResult> {
        self.results
            .iter()
            .find(|r| r.quantity == quantity && r.stratifier == stratifier)
    }
}

/// Per replication: `(pn, pn_avar, pns, pns_avar)` for each stratifier.
struct Replication {
    values: Vec<[f64; 4]>,
    discarded: u64,
}

fn run_replication(
    scenario: &Scenario,
    n: u64,
    seed: u64,
    index: u64,
    stratifiers: &[Stratifier],
) -> Result<Replication> {
    let mut rng = substream(seed, index);
    let mut discarded = 0;
    'attempt: while discarded < MAX_ATTEMPTS_PER_REPLICATION {
        let counts = sample_with(scenario, n, &mut rng)?;
        let mut values = Vec::with_capacity(stratifiers.len());
        for st in stratifiers {
            let joint = match model::to_probabilities(&counts.collapse(st.covariates())?, Smoothing::None) {
                Ok(j) => j,
                Err(Error::Positivity { .. }) => {
                    discarded += 1;
                    continue 'attempt;
                }
                Err(e) => return Err(e),
            };
            let pn = identify::pn_estimate(&joint, n);
            let pns = identify::pns_estimate(&joint, n);
            values.push([pn.value, pn.avar, pns.value, pns.avar]);
        }
        return Ok(Replication { values, discarded });
    }
    Err(Error::DegenerateScenario {
        discarded,
        attempts: discarded,
    })
}

fn mean_and_variance(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let count = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / count;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1.0);
    (mean, var)
}

/// Runs `reps` replications. Replications execute in parallel but are reduced
/// in index order, so the result depends only on the arguments.
pub fn replicate_study(scenario: &Scenario, n: u64, reps: u64, seed: u64, stratifiers: &[Stratifier]) -> Result<Study> {
    scenario.validate()?;
    if reps < 2 {
        return Err(Error::InvalidArgument("at least two replications are needed".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be positive".into()));
    }
    if stratifiers.is_empty() {
        return Err(Error::InvalidArgument("no stratifiers requested".into()));
    }
    let replications = (0..reps)
        .into_par_iter()
        .map(|r| run_replication(scenario, n, seed, r, stratifiers))
        .collect::<Result<Vec<_>>>()?;

    let discarded: u64 = replications.iter().map(|r| r.discarded).sum();
    let attempts = reps + discarded;
    if discarded as f64 > MAX_DISCARD_RATE * attempts as f64 {
        return Err(Error::DegenerateScenario { discarded, attempts });
    }

    let population = scenario.population_joint()?;
    let mut results = Vec::new();
    for quantity in [Quantity::PN, Quantity::PNS] {
        let offset = if quantity == Quantity::PN { 0 } else { 2 };
        for (i, &stratifier) in stratifiers.iter().enumerate() {
            let estimates = replications.iter().map(|r| r.values[i][offset]);
            let (mean_estimate, empirical_var) = mean_and_variance(estimates);
            let mean_avar = replications.iter().map(|r| r.values[i][offset + 1]).sum::<f64>() / reps as f64;
            let collapsed = model::collapse(&population, stratifier.covariates())?;
            let exact = if quantity == Quantity::PN {
                identify::pn_estimate(&collapsed, n)
            } else {
                identify::pns_estimate(&collapsed, n)
            };
            results.push(ReplicationResult {
                quantity,
                stratifier,
                n,
                reps,
                empirical_var,
                mean_estimate,
                mean_avar,
                population_value: exact.value,
                population_avar: exact.avar,
            });
        }
    }
    Ok(Study {
        scenario: scenario.name.clone(),
        n,
        reps,
        seed,
        results,
        discarded,
        attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_cells() {
        let all = builtin_scenarios();
        assert_eq!(all.len(), 4);
        assert_eq!(all[0].cell(Exposure::Exposed, "s1", "t1"), Some(0.32));
        assert_eq!(all[3].cell(Exposure::Unexposed, "s2", "t2"), Some(0.15));
        for s in &all {
            s.validate().unwrap();
            let total: f64 = s.joint_xst.iter().map(|c| c.p).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!(builtin_scenario(0).is_err());
        assert!(builtin_scenario(5).is_err());
    }

    #[test]
    fn sample_conserves_n_and_is_deterministic() {
        let s = builtin_scenario(2).unwrap();
        let a = sample_dataset(&s, 777, 42).unwrap();
        let b = sample_dataset(&s, 777, 42).unwrap();
        assert_eq!(a.total(), 777);
        assert_eq!(a, b);
        assert_ne!(a, sample_dataset(&s, 777, 43).unwrap());
    }

    #[test]
    fn large_sample_frequencies() {
        let s = builtin_scenario(1).unwrap();
        let counts = sample_dataset(&s, 1_000_000, 11).unwrap();
        let key = StratumKey::new([(S, "s1"), (T, "t1")]).unwrap();
        let cell =
            counts.get(&key, Exposure::Exposed, Outcome::Event) + counts.get(&key, Exposure::Exposed, Outcome::NoEvent);
        assert!((cell as f64 / 1e6 - 0.32).abs() < 0.002);
    }

    #[test]
    fn rejects_bad_scenarios() {
        let mut s = builtin_scenario(1).unwrap();
        s.joint_xst[0].p = 0.0;
        assert!(s.validate().is_err());
        let mut s = builtin_scenario(1).unwrap();
        s.outcome_conditionals[0].p_y = 1.0;
        assert!(s.validate().is_err());
        let mut s = builtin_scenario(1).unwrap();
        s.joint_xst.pop();
        assert!(s.validate().is_err());
    }

    #[test]
    fn two_replications() {
        let s = builtin_scenario(4).unwrap();
        let study = replicate_study(&s, 300, 2, 5, &[Stratifier::S]).unwrap();
        for r in &study.results {
            assert_eq!(r.reps, 2);
            assert!(r.empirical_var >= 0.0);
        }
        assert!(replicate_study(&s, 300, 1, 5, &[Stratifier::S]).is_err());
    }

    #[test]
    fn degenerate_scenario_is_reported() {
        // rare cells make most small datasets incomplete
        let mut s = builtin_scenario(1).unwrap();
        s.outcome_conditionals[0].p_y = 0.999;
        match replicate_study(&s, 50, 20, 1, &[Stratifier::ST]) {
            Err(Error::DegenerateScenario { discarded, attempts }) => assert!(discarded * 10 > attempts),
            other => panic!("expected degenerate scenario, got {other:?}"),
        }
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = builtin_scenario(3).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Scenario>(&json).unwrap(), s);
    }
}
